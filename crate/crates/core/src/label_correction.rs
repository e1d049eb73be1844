//! Label correction: train an unsafe model on the untrusted data, relabel
//! the noise replicas with it, take a strict-majority vote, and rewrite the
//! labels across the original and every replica.
//!
//! The intuition: noise perturbs triggers differently per replica, so a
//! backdoored model stops asserting the target label on most replicas of a
//! poisoned record, and the vote restores something close to the true label.

use serde::{Deserialize, Serialize};

use crate::corpus::{build_vocab, Dataset, Manifest};
use crate::encoder::{EncoderConfig, Model};
use crate::error::{Error, Result};
use crate::noise::AugmentationSet;
use crate::objectives::LossVariant;
use crate::scalar::Scalar;
use crate::trainer::{train, TrainConfig, TrainLog};

/// Class indices aligned to a dataset's record order.
pub type LabelSet = Vec<usize>;

/// Anything that can assign labels to a dataset. The trained encoder is the
/// production implementation; tests plug in hand-built oracles.
pub trait Classifier {
    fn predict_labels(&self, dataset: &Dataset) -> Result<Vec<usize>>;
}

impl<S: Scalar> Classifier for Model<S> {
    fn predict_labels(&self, dataset: &Dataset) -> Result<Vec<usize>> {
        self.predict(dataset)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionReport {
    pub num_changed: usize,
    pub changed_ids: Vec<String>,
    /// Fraction of manifest-poisoned records whose voted label left the
    /// toxic target label. Present only when a manifest was supplied.
    pub recall: Option<f64>,
    /// Fraction of clean records whose label was changed by the vote.
    pub false_flag_rate: Option<f64>,
}

/// Train the unsafe model with plain cross entropy on the (possibly
/// poisoned) original dataset. Uses the same encoder architecture as the
/// final model.
pub fn train_unsafe_model<S: Scalar>(
    d0: &Dataset,
    encoder_cfg: &EncoderConfig,
    train_cfg: &TrainConfig,
    min_freq: usize,
) -> Result<(Model<S>, TrainLog)> {
    if d0.is_empty() {
        return Err(Error::Data("cannot train on an empty dataset".into()));
    }
    let vocab = build_vocab(d0, min_freq)?;
    let mut model = Model::new(
        EncoderConfig {
            num_classes: d0.num_classes,
            ..encoder_cfg.clone()
        },
        vocab,
    )?;
    let cfg = TrainConfig {
        objective: crate::objectives::ObjectiveConfig {
            variant: LossVariant::Ce,
            ..train_cfg.objective.clone()
        },
        ..train_cfg.clone()
    };
    let log = train(&mut model, d0, None, &cfg)?;
    Ok((model, log))
}

/// Run the classifier over every replica, producing one label set per
/// replica, aligned to record order.
pub fn relabel(clf: &dyn Classifier, replicas: &[Dataset]) -> Result<Vec<LabelSet>> {
    let mut out = Vec::with_capacity(replicas.len());
    let expect = replicas.first().map(Dataset::len);
    for rep in replicas {
        if Some(rep.len()) != expect {
            return Err(Error::Data("replica sizes disagree".into()));
        }
        out.push(clf.predict_labels(rep)?);
    }
    Ok(out)
}

/// Strict-majority vote across the replica label sets; positions without a
/// strict majority keep the original dataset label.
pub fn vote(label_sets: &[LabelSet], original_labels: &LabelSet) -> Result<LabelSet> {
    if label_sets.is_empty() {
        return Err(Error::Data("vote needs at least one label set".into()));
    }
    let n = original_labels.len();
    for (i, ls) in label_sets.iter().enumerate() {
        if ls.len() != n {
            return Err(Error::Data(format!(
                "label set {i} has {} entries, expected {n}",
                ls.len()
            )));
        }
    }
    let majority = label_sets.len() / 2; // strict: count must exceed this
    let mut voted = Vec::with_capacity(n);
    for k in 0..n {
        let mut counts: std::collections::BTreeMap<usize, usize> = Default::default();
        for ls in label_sets {
            *counts.entry(ls[k]).or_insert(0) += 1;
        }
        let winner = counts
            .into_iter()
            .find(|&(_, c)| c > majority)
            .map(|(l, _)| l);
        voted.push(winner.unwrap_or(original_labels[k]));
    }
    Ok(voted)
}

/// Apply the voted labels to D0 and every replica, then concatenate all
/// n + 1 datasets into one training set of size (n + 1) * |D0|.
pub fn build_corrected_dataset(aug: &AugmentationSet, voted: &LabelSet) -> Result<Dataset> {
    if voted.len() != aug.d0.len() {
        return Err(Error::Data(format!(
            "voted label set has {} entries for {} records",
            voted.len(),
            aug.d0.len()
        )));
    }
    aug.validate()?;
    let mut records = Vec::with_capacity((aug.n() + 1) * aug.d0.len());
    for source in std::iter::once(&aug.d0).chain(aug.replicas.iter()) {
        for (rec, &label) in source.records.iter().zip(voted) {
            let mut r = rec.clone();
            r.label = label;
            records.push(r);
        }
    }
    Dataset::new(records, aug.d0.num_classes, aug.d0.split_tag)
}

/// Compare the voted labels against the ground-truth manifest. `recall`:
/// poisoned records whose label left the target; `false_flag_rate`: clean
/// records whose label changed.
pub fn score_correction(
    voted: &LabelSet,
    d0: &Dataset,
    manifest: Option<&Manifest>,
) -> Result<CorrectionReport> {
    if voted.len() != d0.len() {
        return Err(Error::Data("voted labels misaligned with dataset".into()));
    }
    let mut changed_ids = Vec::new();
    for (rec, &v) in d0.records.iter().zip(voted) {
        if v != rec.label {
            changed_ids.push(rec.id.clone());
        }
    }
    let (recall, false_flag_rate) = match manifest {
        None => (None, None),
        Some(man) => {
            let mut poisoned = 0usize;
            let mut recalled = 0usize;
            let mut clean = 0usize;
            let mut flagged = 0usize;
            for (rec, &v) in d0.records.iter().zip(voted) {
                match man.get(&rec.id) {
                    Some(meta) if meta.is_poisoned => {
                        poisoned += 1;
                        // the dataset label of a poisoned record is the toxic
                        // target; correction fires when the vote leaves it
                        if v != rec.label {
                            recalled += 1;
                        }
                    }
                    _ => {
                        clean += 1;
                        if v != rec.label {
                            flagged += 1;
                        }
                    }
                }
            }
            let recall = if poisoned > 0 {
                Some(recalled as f64 / poisoned as f64)
            } else {
                None
            };
            let flag = if clean > 0 {
                Some(flagged as f64 / clean as f64)
            } else {
                None
            };
            (recall, flag)
        }
    };
    Ok(CorrectionReport {
        num_changed: changed_ids.len(),
        changed_ids,
        recall,
        false_flag_rate,
    })
}
