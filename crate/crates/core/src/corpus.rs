//! Dataset representation, tokenization, deterministic splits and the
//! on-disk formats shared by every other module.
//!
//! Datasets are JSON-lines: the first line is a header object
//! `{"num_classes": C, "split_tag": "train"}`, every following line is one
//! record `{"id", "text", "label", "origin_id", "replica_index"}`. Hidden
//! ground-truth poison metadata never rides along with the records; it lives
//! in a separate manifest file keyed by record id, so training code cannot
//! accidentally read it.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Dev,
    Test,
}

impl std::fmt::Display for SplitTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SplitTag::Train => write!(f, "train"),
            SplitTag::Dev => write!(f, "dev"),
            SplitTag::Test => write!(f, "test"),
        }
    }
}

/// One classification example. `origin_id` is the homology id shared between
/// an original sample and its noise-augmented replicas; `replica_index` is 0
/// for originals and i for the i-th replica.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextRecord {
    pub id: String,
    pub text: String,
    pub label: usize,
    pub origin_id: u64,
    pub replica_index: usize,
}

/// Ground-truth poison metadata for one record. Only ever present in
/// manifest files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoisonMeta {
    pub is_poisoned: bool,
    pub original_label: usize,
    /// Character (byte) offsets of the inserted trigger; absent for
    /// feature-level attacks where the trigger is distributed.
    pub trigger_span: Option<(usize, usize)>,
}

/// Manifest mapping record id -> ground truth. BTreeMap keeps serialized key
/// order stable.
pub type Manifest = BTreeMap<String, PoisonMeta>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub records: Vec<TextRecord>,
    pub num_classes: usize,
    pub split_tag: SplitTag,
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetHeader {
    num_classes: usize,
    split_tag: SplitTag,
}

impl Dataset {
    pub fn new(records: Vec<TextRecord>, num_classes: usize, split_tag: SplitTag) -> Result<Self> {
        let mut seen = HashMap::with_capacity(records.len());
        for r in &records {
            if r.label >= num_classes {
                return Err(Error::Data(format!(
                    "record {} has label {} outside [0, {})",
                    r.id, r.label, num_classes
                )));
            }
            if let Some(prev) = seen.insert(r.id.clone(), ()) {
                let _ = prev;
                return Err(Error::Data(format!("duplicate record id {}", r.id)));
            }
        }
        Ok(Dataset {
            records,
            num_classes,
            split_tag,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Lowercase, split on whitespace, and break every non-alphanumeric
/// character into its own token. Pure and deterministic.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_whitespace() {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
        } else if ch.is_alphanumeric() {
            for lc in ch.to_lowercase() {
                current.push(lc);
            }
        } else {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
            tokens.push(ch.to_string());
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

pub const CLS_TOKEN: &str = "<cls>";
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";
pub const CLS_ID: usize = 0;
pub const PAD_ID: usize = 1;
pub const UNK_ID: usize = 2;

/// Token -> index map with fixed specials: CLS=0, PAD=1, UNK=2. Regular
/// tokens are assigned indices by (frequency desc, token asc) so the mapping
/// is a pure function of the corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocabulary {
    fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocabulary { tokens, index }
    }

    /// Rebuild the lookup map after deserialization.
    pub fn rebuild_index(&mut self) {
        self.index = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id_of(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Encode text to token ids (no CLS, no padding).
    pub fn encode(&self, text: &str) -> Vec<usize> {
        tokenize(text).iter().map(|t| self.id_of(t)).collect()
    }
}

/// Build a vocabulary from the dataset. Tokens with corpus frequency below
/// `min_freq` fall back to UNK at encode time.
pub fn build_vocab(dataset: &Dataset, min_freq: usize) -> Result<Vocabulary> {
    if min_freq < 1 {
        return Err(Error::Config("min_freq must be >= 1".into()));
    }
    if dataset.is_empty() {
        return Err(Error::Data("cannot build vocabulary from empty dataset".into()));
    }
    let mut counts: HashMap<String, usize> = HashMap::new();
    for r in &dataset.records {
        for tok in tokenize(&r.text) {
            *counts.entry(tok).or_insert(0) += 1;
        }
    }
    let mut kept: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|(_, c)| *c >= min_freq)
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

    let mut tokens = vec![
        CLS_TOKEN.to_string(),
        PAD_TOKEN.to_string(),
        UNK_TOKEN.to_string(),
    ];
    tokens.extend(kept.into_iter().map(|(t, _)| t));
    Ok(Vocabulary::from_tokens(tokens))
}

pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut out = String::new();
    let header = DatasetHeader {
        num_classes: dataset.num_classes,
        split_tag: dataset.split_tag,
    };
    out.push_str(&serde_json::to_string(&header).expect("header serializes"));
    out.push('\n');
    for r in &dataset.records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = raw.lines().enumerate();
    let (_, header_line) = lines.next().ok_or_else(|| Error::Parse {
        path: path.into(),
        line: 1,
        msg: "empty dataset file (missing header line)".into(),
    })?;
    let header: DatasetHeader = serde_json::from_str(header_line).map_err(|e| Error::Parse {
        path: path.into(),
        line: 1,
        msg: format!("bad header: {e}"),
    })?;
    let mut records = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let rec: TextRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.into(),
            line: idx + 1,
            msg: format!("bad record: {e}"),
        })?;
        if rec.label >= header.num_classes {
            return Err(Error::Parse {
                path: path.into(),
                line: idx + 1,
                msg: format!(
                    "label {} out of range for {} classes",
                    rec.label, header.num_classes
                ),
            });
        }
        records.push(rec);
    }
    Dataset::new(records, header.num_classes, header.split_tag)
}

pub fn save_manifest(manifest: &Manifest, path: &Path) -> Result<()> {
    let body = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&raw).map_err(|e| Error::Parse {
        path: path.into(),
        line: 0,
        msg: format!("bad manifest: {e}"),
    })
}

/// Deterministic three-way partition. Fractions must be positive and sum to
/// 1. Records keep their original relative order inside each split.
pub fn split_dataset(
    dataset: &Dataset,
    fractions: (f64, f64, f64),
    rng: &mut ChaCha8Rng,
) -> Result<(Dataset, Dataset, Dataset)> {
    let (ft, fd, fe) = fractions;
    if ft <= 0.0 || fd <= 0.0 || fe <= 0.0 || (ft + fd + fe - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split fractions must be positive and sum to 1, got ({ft}, {fd}, {fe})"
        )));
    }
    let n = dataset.len();
    let n_train = (ft * n as f64).round() as usize;
    let n_dev = (fd * n as f64).round() as usize;
    if n_train + n_dev > n {
        return Err(Error::Config("split fractions leave no test records".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let pick = |idx: &mut std::vec::IntoIter<usize>, count: usize, tag: SplitTag| {
        let mut chosen: Vec<usize> = idx.by_ref().take(count).collect();
        chosen.sort_unstable();
        let records = chosen
            .into_iter()
            .map(|i| dataset.records[i].clone())
            .collect();
        Dataset {
            records,
            num_classes: dataset.num_classes,
            split_tag: tag,
        }
    };
    let mut it = order.into_iter();
    let train = pick(&mut it, n_train, SplitTag::Train);
    let dev = pick(&mut it, n_dev, SplitTag::Dev);
    let test = pick(&mut it, n - n_train - n_dev, SplitTag::Test);
    Ok((train, dev, test))
}
