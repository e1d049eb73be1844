//! Noise augmentation: build n perturbed replicas of every training record,
//! breaking possible triggers while keeping the label-bearing content words.
//!
//! The default noiser substitutes lexicon words with same-class synonyms and
//! drops out-of-lexicon words, with a per-replica intensity standing in for
//! the sampling diversity of a neural paraphraser. An external noiser hook
//! (line-oriented subprocess) lets a real paraphraser be plugged in.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::process::{Command, Stdio};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, Dataset, TextRecord};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiserKind {
    SynonymDropout,
    Syntactic,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiserConfig {
    pub kind: NoiserKind,
    /// Number of replicas per original record.
    pub n: usize,
    /// One intensity per replica, strictly increasing, each in (0, 1].
    pub intensity_schedule: Vec<f64>,
    pub base_seed: u64,
    /// Command line for the external noiser (the replica intensity is
    /// appended as a final argument).
    #[serde(default)]
    pub external_cmd: Vec<String>,
}

impl Default for NoiserConfig {
    fn default() -> Self {
        NoiserConfig {
            kind: NoiserKind::SynonymDropout,
            n: 3,
            intensity_schedule: vec![0.5, 0.7, 0.9],
            base_seed: 0,
            external_cmd: Vec::new(),
        }
    }
}

impl NoiserConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 1 {
            return Err(Error::Config("noiser n must be >= 1".into()));
        }
        if self.intensity_schedule.len() != self.n {
            return Err(Error::Config(format!(
                "intensity schedule has {} entries for n = {}",
                self.intensity_schedule.len(),
                self.n
            )));
        }
        for w in self.intensity_schedule.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::Config(
                    "intensity schedule must be strictly increasing".into(),
                ));
            }
        }
        if self
            .intensity_schedule
            .iter()
            .any(|&q| !(q > 0.0 && q <= 1.0))
        {
            return Err(Error::Config("intensities must lie in (0, 1]".into()));
        }
        if self.kind == NoiserKind::External && self.external_cmd.is_empty() {
            return Err(Error::Config("external noiser needs a command".into()));
        }
        Ok(())
    }
}

/// Token -> synonym map. Trigger-like rare tokens are naturally absent, so
/// noise drops them instead of synonymizing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynonymLexicon {
    pub version: u32,
    pub synonyms: BTreeMap<String, String>,
}

const BUILTIN_LEXICON: &str = include_str!("../data/synonyms.json");

impl SynonymLexicon {
    pub fn builtin() -> SynonymLexicon {
        serde_json::from_str(BUILTIN_LEXICON).expect("builtin lexicon parses")
    }

    pub fn load(path: &Path) -> Result<SynonymLexicon> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&raw).map_err(|e| Error::Parse {
            path: path.into(),
            line: 0,
            msg: format!("bad synonym lexicon: {e}"),
        })
    }

    pub fn get(&self, token: &str) -> Option<&str> {
        self.synonyms.get(token).map(String::as_str)
    }
}

/// Per-token noise: with probability `intensity` a token is replaced by its
/// lexicon synonym if it has one, else dropped. At least one token always
/// survives (the first original token is restored if everything was
/// dropped). One rng decision is drawn per token, in order.
pub fn synonym_dropout_noise(
    text: &str,
    intensity: f64,
    lexicon: &SynonymLexicon,
    rng: &mut ChaCha8Rng,
) -> String {
    let tokens = tokenize(text);
    let mut out: Vec<String> = Vec::with_capacity(tokens.len());
    for tok in &tokens {
        let hit: f64 = rng.gen();
        if hit < intensity {
            if let Some(syn) = lexicon.get(tok) {
                out.push(syn.to_string());
            }
            // no synonym: dropped
        } else {
            out.push(tok.clone());
        }
    }
    if out.is_empty() {
        if let Some(first) = tokens.first() {
            out.push(first.clone());
        }
    }
    out.join(" ")
}

const SYNTACTIC_PREFIX: &str = "it is said that";

/// Deterministic restructuring into one fixed clause-fronted template. The
/// template is a fixed point: applying it twice equals applying it once.
pub fn syntactic_noise(text: &str) -> String {
    let tokens = tokenize(text);
    let flat = tokens.join(" ");
    if flat.starts_with(SYNTACTIC_PREFIX) {
        return flat;
    }
    if flat.is_empty() {
        SYNTACTIC_PREFIX.to_string()
    } else {
        format!("{SYNTACTIC_PREFIX} {flat}")
    }
}

/// D0 plus its n noise replicas, aligned by index and origin id. Replica
/// labels start out as copies of D0's labels.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentationSet {
    pub d0: Dataset,
    pub replicas: Vec<Dataset>,
}

impl AugmentationSet {
    pub fn n(&self) -> usize {
        self.replicas.len()
    }

    pub fn validate(&self) -> Result<()> {
        for (i, rep) in self.replicas.iter().enumerate() {
            if rep.len() != self.d0.len() {
                return Err(Error::Data(format!(
                    "replica {} has {} records, expected {}",
                    i + 1,
                    rep.len(),
                    self.d0.len()
                )));
            }
            for (a, b) in self.d0.records.iter().zip(&rep.records) {
                if a.origin_id != b.origin_id {
                    return Err(Error::Data(format!(
                        "origin id mismatch between D0 record {} and replica {}",
                        a.id,
                        i + 1
                    )));
                }
                if b.replica_index != i + 1 {
                    return Err(Error::Data(format!(
                        "record {} carries replica_index {}, expected {}",
                        b.id,
                        b.replica_index,
                        i + 1
                    )));
                }
            }
        }
        Ok(())
    }
}

fn run_external(cmd: &[String], intensity: f64, texts: &[String]) -> Result<Vec<String>> {
    let mut child = Command::new(&cmd[0])
        .args(&cmd[1..])
        .arg(format!("{intensity}"))
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .map_err(|e| Error::Subprocess(format!("spawn {}: {e}", cmd[0])))?;
    let mut stdin = child.stdin.take().expect("piped stdin");
    let payload: String = texts
        .iter()
        .map(|t| t.replace(['\n', '\r'], " "))
        .collect::<Vec<_>>()
        .join("\n")
        + "\n";
    let writer = std::thread::spawn(move || stdin.write_all(payload.as_bytes()));
    let output = child
        .wait_with_output()
        .map_err(|e| Error::Subprocess(format!("wait: {e}")))?;
    writer
        .join()
        .map_err(|_| Error::Subprocess("stdin writer panicked".into()))?
        .map_err(|e| Error::Subprocess(format!("write stdin: {e}")))?;
    if !output.status.success() {
        return Err(Error::Subprocess(format!(
            "noiser exited with {}",
            output.status
        )));
    }
    let text = String::from_utf8(output.stdout)
        .map_err(|e| Error::Subprocess(format!("non-utf8 output: {e}")))?;
    let lines: Vec<String> = text.lines().map(str::to_string).collect();
    if lines.len() != texts.len() {
        return Err(Error::Subprocess(format!(
            "noiser returned {} lines for {} inputs",
            lines.len(),
            texts.len()
        )));
    }
    Ok(lines)
}

/// Build replica i (1-based) of the given texts.
fn noise_replica(
    config: &NoiserConfig,
    lexicon: &SynonymLexicon,
    replica: usize,
    texts: &[String],
) -> Result<Vec<String>> {
    let intensity = config.intensity_schedule[replica - 1];
    match config.kind {
        NoiserKind::SynonymDropout => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.base_seed + replica as u64);
            Ok(texts
                .iter()
                .map(|t| synonym_dropout_noise(t, intensity, lexicon, &mut rng))
                .collect())
        }
        NoiserKind::Syntactic => Ok(texts.iter().map(|t| syntactic_noise(t)).collect()),
        NoiserKind::External => run_external(&config.external_cmd, intensity, texts),
    }
}

/// Jaccard overlap between the token sets of two texts; a cheap semantic
/// preservation proxy reported alongside augmentation diagnostics.
pub fn token_jaccard(a: &str, b: &str) -> f64 {
    let sa: std::collections::HashSet<String> = tokenize(a).into_iter().collect();
    let sb: std::collections::HashSet<String> = tokenize(b).into_iter().collect();
    if sa.is_empty() && sb.is_empty() {
        return 1.0;
    }
    let inter = sa.intersection(&sb).count() as f64;
    let union = sa.union(&sb).count() as f64;
    inter / union
}

/// Build the full augmentation set: replica i applies the configured noiser
/// at intensity_schedule[i-1] with seed base_seed + i to every record of D0.
pub fn augment_dataset(
    d0: &Dataset,
    config: &NoiserConfig,
    lexicon: &SynonymLexicon,
) -> Result<AugmentationSet> {
    config.validate()?;
    let texts: Vec<String> = d0.records.iter().map(|r| r.text.clone()).collect();
    let mut replicas = Vec::with_capacity(config.n);
    for i in 1..=config.n {
        let noised = noise_replica(config, lexicon, i, &texts)?;
        let records = d0
            .records
            .iter()
            .zip(noised)
            .map(|(orig, text)| TextRecord {
                id: format!("{}~r{}", orig.id, i),
                text,
                label: orig.label,
                origin_id: orig.origin_id,
                replica_index: i,
            })
            .collect();
        replicas.push(Dataset {
            records,
            num_classes: d0.num_classes,
            split_tag: d0.split_tag,
        });
    }
    let set = AugmentationSet {
        d0: d0.clone(),
        replicas,
    };
    set.validate()?;
    Ok(set)
}
