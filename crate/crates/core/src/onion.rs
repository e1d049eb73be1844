//! Perplexity-outlier defense baseline: a self-trained add-k n-gram
//! language model scores each token by how much its removal lowers sentence
//! perplexity; tokens above a calibrated threshold are deleted.
//!
//! The LM trains on the (possibly poisoned) corpus itself. At the poisoning
//! rates studied here, injected rare triggers stay rare enough to surface as
//! perplexity outliers; fluent sentence-level triggers do not, which is
//! exactly the blind spot this baseline is meant to exhibit.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, Dataset};
use crate::error::{Error, Result};

const BOS: &str = "<s>";

#[derive(Debug, Clone)]
pub struct NGramLM {
    pub order: usize,
    pub k: f64,
    /// context tokens -> (next token -> count)
    counts: HashMap<Vec<String>, HashMap<String, usize>>,
    context_totals: HashMap<Vec<String>, usize>,
    /// distinct corpus tokens + 1 reserved unknown type
    vocab_size: usize,
    vocab: std::collections::HashSet<String>,
}

/// Accumulate n-gram counts over the tokenized corpus with sentence-start
/// padding. Deterministic for a given corpus.
pub fn train_lm(corpus: &Dataset, order: usize, k: f64) -> Result<NGramLM> {
    if corpus.is_empty() {
        return Err(Error::Data("cannot train a language model on an empty corpus".into()));
    }
    if order < 1 {
        return Err(Error::Config("n-gram order must be >= 1".into()));
    }
    if k <= 0.0 {
        return Err(Error::Config("smoothing constant k must be > 0".into()));
    }
    let mut lm = NGramLM {
        order,
        k,
        counts: HashMap::new(),
        context_totals: HashMap::new(),
        vocab_size: 0,
        vocab: Default::default(),
    };
    for r in &corpus.records {
        let tokens = tokenize(&r.text);
        lm.accumulate(&tokens);
        for t in tokens {
            lm.vocab.insert(t);
        }
    }
    lm.vocab_size = lm.vocab.len() + 1; // + reserved unknown type
    Ok(lm)
}

impl NGramLM {
    fn accumulate(&mut self, tokens: &[String]) {
        let mut context: Vec<String> = vec![BOS.to_string(); self.order - 1];
        for tok in tokens {
            *self
                .counts
                .entry(context.clone())
                .or_default()
                .entry(tok.clone())
                .or_insert(0) += 1;
            *self.context_totals.entry(context.clone()).or_insert(0) += 1;
            if self.order > 1 {
                context.rotate_left(1);
                *context.last_mut().expect("nonempty context") = tok.clone();
            }
        }
    }

    /// Add-k probability of `token` after `context`:
    /// (count + k) / (context_total + k * |V|).
    pub fn prob(&self, context: &[String], token: &str) -> f64 {
        let count = self
            .counts
            .get(context)
            .and_then(|m| m.get(token))
            .copied()
            .unwrap_or(0) as f64;
        let total = self.context_totals.get(context).copied().unwrap_or(0) as f64;
        (count + self.k) / (total + self.k * self.vocab_size as f64)
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn nll_of_tokens(&self, tokens: &[String]) -> f64 {
        let mut context: Vec<String> = vec![BOS.to_string(); self.order - 1];
        let mut nll = 0.0;
        for tok in tokens {
            nll -= self.prob(&context, tok).ln();
            if self.order > 1 {
                context.rotate_left(1);
                *context.last_mut().expect("nonempty context") = tok.clone();
            }
        }
        nll / tokens.len() as f64
    }
}

/// exp of the mean per-token negative log probability.
pub fn sentence_ppl(lm: &NGramLM, text: &str) -> Result<f64> {
    let tokens = tokenize(text);
    if tokens.is_empty() {
        return Err(Error::Data("perplexity of empty text is undefined".into()));
    }
    Ok(lm.nll_of_tokens(&tokens).exp())
}

/// Suspicion score per token position: ppl(text) - ppl(text without that
/// token), all against the original sentence. Removing a trigger lowers
/// perplexity sharply, so triggers score high. Single-token texts yield an
/// empty score list (removal would leave nothing to score).
pub fn token_suspicions(lm: &NGramLM, text: &str) -> Vec<f64> {
    let tokens = tokenize(text);
    if tokens.len() < 2 {
        return Vec::new();
    }
    let base = lm.nll_of_tokens(&tokens).exp();
    (0..tokens.len())
        .map(|i| {
            let reduced: Vec<String> = tokens
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, t)| t.clone())
                .collect();
            base - lm.nll_of_tokens(&reduced).exp()
        })
        .collect()
}

/// The calibration threshold: the given percentile of all suspicion scores
/// over a calibration sample.
pub fn calibrate_threshold(lm: &NGramLM, sample: &Dataset, percentile: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&percentile) {
        return Err(Error::Config("percentile must lie in [0, 1]".into()));
    }
    let mut scores: Vec<f64> = sample
        .records
        .iter()
        .flat_map(|r| token_suspicions(lm, &r.text))
        .collect();
    if scores.is_empty() {
        return Err(Error::Data("no scorable tokens in calibration sample".into()));
    }
    scores.sort_by(|a, b| a.partial_cmp(b).expect("finite scores"));
    let idx = ((scores.len() - 1) as f64 * percentile).round() as usize;
    Ok(scores[idx])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordRemoval {
    pub id: String,
    /// (token position, token, suspicion score) of every removed token.
    pub removed: Vec<(usize, String, f64)>,
}

pub type RemovalLog = Vec<RecordRemoval>;

/// Delete every token whose suspicion exceeds the threshold (scores all
/// computed against the original sentence, removals applied simultaneously).
/// Labels and record count are untouched. Texts are rebuilt from the
/// tokenized form.
pub fn onion_filter(dataset: &Dataset, lm: &NGramLM, threshold: f64) -> (Dataset, RemovalLog) {
    let mut log = Vec::new();
    let records = dataset
        .records
        .iter()
        .map(|r| {
            let tokens = tokenize(&r.text);
            let scores = token_suspicions(lm, &r.text);
            let mut removed = Vec::new();
            let kept: Vec<String> = tokens
                .iter()
                .enumerate()
                .filter(|(i, tok)| {
                    let drop = scores.get(*i).map_or(false, |&s| s > threshold);
                    if drop {
                        removed.push((*i, (*tok).clone(), scores[*i]));
                    }
                    !drop
                })
                .map(|(_, t)| t.clone())
                .collect();
            if !removed.is_empty() {
                log.push(RecordRemoval {
                    id: r.id.clone(),
                    removed,
                });
            }
            let mut rec = r.clone();
            rec.text = kept.join(" ");
            rec
        })
        .collect();
    (
        Dataset {
            records,
            num_classes: dataset.num_classes,
            split_tag: dataset.split_tag,
        },
        log,
    )
}

pub fn save_removal_log(log: &RemovalLog, path: &Path) -> Result<()> {
    let body = serde_json::to_string_pretty(log).expect("removal log serializes");
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attacks::{poison_dataset, AttackKind, Placement, PoisonSpec, StyleTable};
    use crate::corpus::{SplitTag, TextRecord};
    use crate::toygen;
    use approx::assert_relative_eq;

    fn repeat_corpus(text: &str, n: usize) -> Dataset {
        let records = (0..n)
            .map(|i| TextRecord {
                id: format!("r{i}"),
                text: text.to_string(),
                label: 0,
                origin_id: i as u64,
                replica_index: 0,
            })
            .collect();
        Dataset {
            records,
            num_classes: 2,
            split_tag: SplitTag::Train,
        }
    }

    #[test]
    fn bigram_probability_hand_value() {
        // corpus "a b" x 100: count(a,b)=100, total(a)=100, |V|={a,b}+unk=3
        let lm = train_lm(&repeat_corpus("a b", 100), 2, 0.1).unwrap();
        let ctx = vec!["a".to_string()];
        assert_relative_eq!(lm.prob(&ctx, "b"), 0.9980059820538385, max_relative = 1e-12);
    }

    #[test]
    fn unseen_bigram_smoothed_mass() {
        let lm = train_lm(&repeat_corpus("a b", 100), 2, 0.1).unwrap();
        let ctx = vec!["a".to_string()];
        // k / (total + k|V|)
        assert_relative_eq!(
            lm.prob(&ctx, "zzz"),
            0.0009970089730807579,
            max_relative = 1e-12
        );
    }

    #[test]
    fn next_token_distribution_sums_to_one() {
        let d = toygen::generate(50, 51);
        let lm = train_lm(&d, 2, 0.1).unwrap();
        let ctx = vec!["the".to_string()];
        let mut total = 0.0;
        for tok in &lm.vocab {
            total += lm.prob(&ctx, tok);
        }
        // plus the reserved unknown type
        total += lm.prob(&ctx, "<reserved-unk>");
        assert_relative_eq!(total, 1.0, max_relative = 1e-9);
    }

    #[test]
    fn lm_deterministic() {
        let d = toygen::generate(50, 51);
        let a = train_lm(&d, 2, 0.1).unwrap();
        let b = train_lm(&d, 2, 0.1).unwrap();
        let ctx = vec!["the".to_string()];
        assert_eq!(a.prob(&ctx, "movie"), b.prob(&ctx, "movie"));
        assert_eq!(a.vocab_size(), b.vocab_size());
    }

    #[test]
    fn empty_corpus_errors() {
        let d = Dataset {
            records: vec![],
            num_classes: 2,
            split_tag: SplitTag::Train,
        };
        assert!(train_lm(&d, 2, 0.1).is_err());
    }

    #[test]
    fn single_token_ppl_is_inverse_bos_probability() {
        let lm = train_lm(&repeat_corpus("a b", 100), 2, 0.1).unwrap();
        let bos_ctx = vec![BOS.to_string()];
        let expect = 1.0 / lm.prob(&bos_ctx, "a");
        assert_relative_eq!(sentence_ppl(&lm, "a").unwrap(), expect, max_relative = 1e-12);
    }

    #[test]
    fn training_sentence_beats_random_tokens() {
        let d = toygen::generate(200, 52);
        let lm = train_lm(&d, 2, 0.1).unwrap();
        let fluent = sentence_ppl(&lm, &d.records[0].text).unwrap();
        let scrambled = sentence_ppl(&lm, "pacing frankly superb the a was").unwrap();
        assert!(fluent < scrambled, "{fluent} !< {scrambled}");
        assert!(fluent > 0.0);
    }

    #[test]
    fn empty_text_ppl_errors() {
        let lm = train_lm(&repeat_corpus("a b", 10), 2, 0.1).unwrap();
        assert!(sentence_ppl(&lm, "").is_err());
    }

    #[test]
    fn infinite_threshold_keeps_everything() {
        let d = toygen::generate(30, 53);
        let lm = train_lm(&d, 2, 0.1).unwrap();
        let (filtered, log) = onion_filter(&d, &lm, f64::INFINITY);
        assert!(log.is_empty());
        assert_eq!(filtered.len(), d.len());
        for (a, b) in d.records.iter().zip(&filtered.records) {
            assert_eq!(tokenize(&a.text), tokenize(&b.text));
            assert_eq!(a.label, b.label);
        }
    }

    #[test]
    fn rare_trigger_removed_in_most_poisoned_records() {
        let clean = toygen::generate(1000, 54);
        let spec = PoisonSpec {
            kind: AttackKind::Word,
            trigger_payload: "cf".into(),
            target_label: 1,
            poisoning_rate: 0.1,
            placement: Placement::Random,
            seed: 9,
        };
        let (poisoned, manifest) = poison_dataset(&clean, &spec, &StyleTable::builtin()).unwrap();
        let lm = train_lm(&poisoned, 2, 0.1).unwrap();
        let threshold = calibrate_threshold(&lm, &poisoned, 0.95).unwrap();
        let (filtered, _) = onion_filter(&poisoned, &lm, threshold);
        let mut hit = 0usize;
        for (rec, orig) in filtered.records.iter().zip(&poisoned.records) {
            if manifest.contains_key(&orig.id)
                && !tokenize(&rec.text).iter().any(|t| t == "cf")
            {
                hit += 1;
            }
        }
        let frac = hit as f64 / manifest.len() as f64;
        assert!(
            frac >= 0.9,
            "only {frac:.2} of word triggers removed at the calibrated threshold"
        );
    }

    #[test]
    fn filter_changes_no_labels_or_counts() {
        let d = toygen::generate(100, 55);
        let lm = train_lm(&d, 2, 0.1).unwrap();
        let threshold = calibrate_threshold(&lm, &d, 0.95).unwrap();
        let (filtered, _) = onion_filter(&d, &lm, threshold);
        assert_eq!(filtered.len(), d.len());
        for (a, b) in d.records.iter().zip(&filtered.records) {
            assert_eq!(a.label, b.label);
            assert_eq!(a.id, b.id);
        }
    }
}
