//! Backdoor trigger injection: word-level, sentence-level, and a
//! deterministic feature-level (style) surrogate.
//!
//! The style surrogate replaces the large generative models behind
//! feature-level attacks with a lexical substitution table plus a fixed
//! sentence frame. The property that matters for defense evaluation is
//! preserved: the trigger is distributed across the sentence rather than
//! being a single removable token.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, Manifest, PoisonMeta, SplitTag};
use crate::error::{Error, Result};
use crate::seed::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackKind {
    Word,
    Sentence,
    Feature,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Placement {
    Random,
    Head,
    Tail,
}

/// Full description of one backdoor attack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoisonSpec {
    pub kind: AttackKind,
    /// Trigger word or sentence; for feature attacks, a style-table id or
    /// path ("" selects the builtin table).
    pub trigger_payload: String,
    pub target_label: usize,
    pub poisoning_rate: f64,
    pub placement: Placement,
    pub seed: u64,
}

impl PoisonSpec {
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        if !(0.0..=1.0).contains(&self.poisoning_rate) {
            return Err(Error::Config(format!(
                "poisoning_rate {} outside [0, 1]",
                self.poisoning_rate
            )));
        }
        if self.target_label >= num_classes {
            return Err(Error::Config(format!(
                "target_label {} outside [0, {num_classes})",
                self.target_label
            )));
        }
        if self.kind != AttackKind::Feature && self.trigger_payload.is_empty() {
            return Err(Error::Config("empty trigger payload".into()));
        }
        Ok(())
    }
}

/// Lexical substitution map plus sentence frame for the feature-level
/// surrogate. Substitution targets are fixed points, so applying the map
/// twice equals applying it once.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StyleTable {
    pub version: u32,
    pub substitutions: BTreeMap<String, String>,
    pub frame_prefix: String,
    pub frame_suffix: String,
}

const BUILTIN_STYLE_TABLE: &str = include_str!("../data/style_table.json");

impl StyleTable {
    pub fn builtin() -> StyleTable {
        serde_json::from_str(BUILTIN_STYLE_TABLE).expect("builtin style table parses")
    }

    pub fn load(path: &Path) -> Result<StyleTable> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&raw).map_err(|e| Error::Parse {
            path: path.into(),
            line: 0,
            msg: format!("bad style table: {e}"),
        })
    }

    /// Resolve a PoisonSpec payload: empty string or the builtin id selects
    /// the shipped table, anything else is a file path.
    pub fn resolve(payload: &str) -> Result<StyleTable> {
        if payload.is_empty() || payload == "archaic-v1" {
            Ok(StyleTable::builtin())
        } else {
            StyleTable::load(Path::new(payload))
        }
    }
}

/// Byte offsets where a token may be inserted: start of text, start of every
/// word after the first, and end of text.
fn word_boundaries(text: &str) -> Vec<usize> {
    let mut bounds = vec![0];
    let mut in_word = false;
    for (i, ch) in text.char_indices() {
        if ch.is_whitespace() {
            in_word = false;
        } else if !in_word {
            in_word = true;
            if i > 0 {
                bounds.push(i);
            }
        }
    }
    if text.is_empty() {
        return bounds;
    }
    bounds.push(text.len());
    bounds.dedup();
    bounds
}

fn insert_at(text: &str, trigger: &str, at: usize, is_end: bool) -> (String, (usize, usize)) {
    let mut out = String::with_capacity(text.len() + trigger.len() + 1);
    if is_end && !text.is_empty() {
        out.push_str(text);
        out.push(' ');
        let start = out.len();
        out.push_str(trigger);
        (out, (start, start + trigger.len()))
    } else {
        out.push_str(&text[..at]);
        let start = out.len();
        out.push_str(trigger);
        if !text[at..].is_empty() {
            out.push(' ');
            out.push_str(&text[at..]);
        }
        (out, (start, start + trigger.len()))
    }
}

/// Insert a single-token trigger at a word boundary. The rest of the text is
/// byte-identical to the input. An empty trigger is an identity insertion
/// (used as a control by the embedding analysis).
pub fn insert_word_trigger(
    text: &str,
    trigger_word: &str,
    placement: Placement,
    rng: &mut ChaCha8Rng,
) -> (String, (usize, usize)) {
    if trigger_word.is_empty() {
        return (text.to_string(), (0, 0));
    }
    let bounds = word_boundaries(text);
    let idx = match placement {
        Placement::Head => 0,
        Placement::Tail => bounds.len() - 1,
        Placement::Random => rng.gen_range(0..bounds.len()),
    };
    let at = bounds[idx];
    insert_at(text, trigger_word, at, idx == bounds.len() - 1)
}

/// Byte offsets of sentence starts: start of text, after each
/// sentence-terminal punctuation run, and end of text.
fn sentence_boundaries(text: &str) -> Vec<usize> {
    let mut bounds = vec![0];
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut i = 0;
    while i < chars.len() {
        let (_, ch) = chars[i];
        if matches!(ch, '.' | '!' | '?') {
            // skip the punctuation run and following whitespace
            let mut j = i + 1;
            while j < chars.len() && matches!(chars[j].1, '.' | '!' | '?') {
                j += 1;
            }
            while j < chars.len() && chars[j].1.is_whitespace() {
                j += 1;
            }
            if j < chars.len() {
                bounds.push(chars[j].0);
            }
            i = j;
        } else {
            i += 1;
        }
    }
    if !text.is_empty() {
        bounds.push(text.len());
    }
    bounds.dedup();
    bounds
}

/// Insert a whole trigger sentence at a sentence boundary.
pub fn insert_sentence_trigger(
    text: &str,
    trigger_sentence: &str,
    placement: Placement,
    rng: &mut ChaCha8Rng,
) -> (String, (usize, usize)) {
    if trigger_sentence.is_empty() {
        return (text.to_string(), (0, 0));
    }
    let bounds = sentence_boundaries(text);
    let idx = match placement {
        Placement::Head => 0,
        Placement::Tail => bounds.len() - 1,
        Placement::Random => rng.gen_range(0..bounds.len()),
    };
    let at = bounds[idx];
    insert_at(text, trigger_sentence, at, idx == bounds.len() - 1)
}

/// Apply the style surrogate: substitute every whitespace token that has a
/// table entry (matched lowercase), then wrap in the style frame. Fully
/// deterministic.
pub fn apply_feature_trigger(text: &str, table: &StyleTable) -> String {
    let body: Vec<String> = text
        .split_whitespace()
        .map(|tok| {
            table
                .substitutions
                .get(&tok.to_lowercase())
                .cloned()
                .unwrap_or_else(|| tok.to_string())
        })
        .collect();
    if body.is_empty() {
        format!("{} {}", table.frame_prefix, table.frame_suffix)
    } else {
        format!("{} {} {}", table.frame_prefix, body.join(" "), table.frame_suffix)
    }
}

fn apply_trigger(
    text: &str,
    spec: &PoisonSpec,
    style: &StyleTable,
    rng: &mut ChaCha8Rng,
) -> (String, Option<(usize, usize)>) {
    match spec.kind {
        AttackKind::Word => {
            let (t, span) = insert_word_trigger(text, &spec.trigger_payload, spec.placement, rng);
            (t, Some(span))
        }
        AttackKind::Sentence => {
            let (t, span) =
                insert_sentence_trigger(text, &spec.trigger_payload, spec.placement, rng);
            (t, Some(span))
        }
        AttackKind::Feature => (apply_feature_trigger(text, style), None),
    }
}

/// Poison a train/dev split: select round(rate·|D|) records uniformly among
/// those not already carrying the target label, insert the trigger, relabel
/// to the target, and shuffle the output so poisoned records are not
/// positionally identifiable. Returns the poisoned dataset plus the hidden
/// ground-truth manifest.
pub fn poison_dataset(
    dataset: &Dataset,
    spec: &PoisonSpec,
    style: &StyleTable,
) -> Result<(Dataset, Manifest)> {
    spec.validate(dataset.num_classes)?;
    let n_poison = (spec.poisoning_rate * dataset.len() as f64).round() as usize;
    if n_poison == 0 {
        if spec.poisoning_rate > 0.0 {
            return Err(Error::Config(format!(
                "poisoning rate {} selects no records from {} eligible",
                spec.poisoning_rate,
                dataset
                    .records
                    .iter()
                    .filter(|r| r.label != spec.target_label)
                    .count()
            )));
        }
        return Ok((dataset.clone(), Manifest::new()));
    }

    let eligible: Vec<usize> = (0..dataset.len())
        .filter(|&i| dataset.records[i].label != spec.target_label)
        .collect();
    if spec.poisoning_rate * (eligible.len() as f64) < 1.0 {
        return Err(Error::Config(
            "unsatisfiable poison spec: too few eligible records".into(),
        ));
    }
    if n_poison > eligible.len() {
        return Err(Error::Config(format!(
            "poison count {n_poison} exceeds {} eligible records",
            eligible.len()
        )));
    }

    let mut select_rng = rng_for(spec.seed, "attacks.select");
    let mut pool = eligible;
    use rand::seq::SliceRandom;
    pool.shuffle(&mut select_rng);
    let mut chosen: Vec<usize> = pool.into_iter().take(n_poison).collect();
    chosen.sort_unstable();

    let mut place_rng = rng_for(spec.seed, "attacks.place");
    let mut records = dataset.records.clone();
    let mut manifest = Manifest::new();
    for &i in &chosen {
        let rec = &mut records[i];
        let (text, span) = apply_trigger(&rec.text, spec, style, &mut place_rng);
        manifest.insert(
            rec.id.clone(),
            PoisonMeta {
                is_poisoned: true,
                original_label: rec.label,
                trigger_span: span,
            },
        );
        rec.text = text;
        rec.label = spec.target_label;
    }

    let mut shuffle_rng = rng_for(spec.seed, "attacks.shuffle");
    records.shuffle(&mut shuffle_rng);

    Ok((
        Dataset {
            records,
            num_classes: dataset.num_classes,
            split_tag: dataset.split_tag,
        },
        manifest,
    ))
}

/// Build the triggered test set used by ASR: drop records already carrying
/// the target label, insert the trigger into every remaining record, keep
/// true labels.
pub fn poison_test_set(dataset: &Dataset, spec: &PoisonSpec, style: &StyleTable) -> Result<Dataset> {
    spec.validate(dataset.num_classes)?;
    let mut place_rng = rng_for(spec.seed, "attacks.test.place");
    let records: Vec<_> = dataset
        .records
        .iter()
        .filter(|r| r.label != spec.target_label)
        .map(|r| {
            let (text, _) = apply_trigger(&r.text, spec, style, &mut place_rng);
            let mut rec = r.clone();
            rec.text = text;
            rec
        })
        .collect();
    if records.is_empty() {
        return Err(Error::Data(
            "no test records left after removing target-label records".into(),
        ));
    }
    Ok(Dataset {
        records,
        num_classes: dataset.num_classes,
        split_tag: SplitTag::Test,
    })
}
