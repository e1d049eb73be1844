//! Homology-aware batch construction and the optimization loop.
//!
//! Batches pack whole homology groups (an original plus its replicas) so the
//! contrastive terms always see their positives. Training is a pure function
//! of (model init, dataset, config): single-threaded, seeded shuffles,
//! gradient clipping, and a hard abort on non-finite loss.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Dataset;
use crate::encoder::{Model, Params};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::objectives::{ncl_loss_grad, EncodedBatch, ObjectiveConfig};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    SgdMomentum,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Homology groups per batch; batch size = batch_groups * group size.
    pub batch_groups: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub clip_norm: f64,
    pub seed: u64,
    pub objective: ObjectiveConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_groups: 8,
            epochs: 10,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            clip_norm: 5.0,
            seed: 0,
            objective: ObjectiveConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_groups < 1 {
            return Err(Error::Config("batch_groups must be >= 1".into()));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::Config("learning_rate must be > 0".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        self.objective.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub total: f64,
    pub ucl: f64,
    pub scl: f64,
    pub ce: f64,
    pub dev_acc: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
}

impl TrainLog {
    /// One epoch per line, JSON-lines.
    pub fn save_jsonl(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for e in &self.epochs {
            out.push_str(&serde_json::to_string(e).expect("epoch log serializes"));
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Group record indices by origin id (first-appearance order), shuffle the
/// groups, and pack them whole: a batch holds `batch_groups` complete groups
/// and the final batch may be short, but no group is ever split.
pub fn make_batches(
    dataset: &Dataset,
    batch_groups: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<usize>>> {
    if batch_groups < 1 {
        return Err(Error::Config("batch_groups must be >= 1".into()));
    }
    let mut order: Vec<u64> = Vec::new();
    let mut groups: std::collections::HashMap<u64, Vec<usize>> = std::collections::HashMap::new();
    for (i, r) in dataset.records.iter().enumerate() {
        let entry = groups.entry(r.origin_id).or_insert_with(|| {
            order.push(r.origin_id);
            Vec::new()
        });
        entry.push(i);
    }
    let group_size = groups
        .values()
        .next()
        .map(Vec::len)
        .ok_or_else(|| Error::Data("cannot batch an empty dataset".into()))?;
    for (oid, members) in &groups {
        if members.len() != group_size {
            return Err(Error::Data(format!(
                "homology group {oid} has {} records, expected {group_size}",
                members.len()
            )));
        }
    }
    order.shuffle(rng);
    let batches = order
        .chunks(batch_groups)
        .map(|chunk| {
            chunk
                .iter()
                .flat_map(|oid| groups[oid].iter().copied())
                .collect()
        })
        .collect();
    Ok(batches)
}

struct Optimizer<S> {
    kind: OptimizerKind,
    lr: S,
    step: usize,
    // per-tensor first/second moment (Adam) or velocity (SGD momentum)
    m: Vec<Matrix<S>>,
    v: Vec<Matrix<S>>,
}

impl<S: Scalar> Optimizer<S> {
    fn new(kind: OptimizerKind, lr: f64, params: &Params<S>) -> Self {
        let m = params.tensors().iter().map(|t| Matrix::zeros(t.rows(), t.cols())).collect();
        let v = params.tensors().iter().map(|t| Matrix::zeros(t.rows(), t.cols())).collect();
        Optimizer {
            kind,
            lr: S::from_f64_c(lr),
            step: 0,
            m,
            v,
        }
    }

    fn apply(&mut self, params: &mut Params<S>, grads: &Params<S>) {
        self.step += 1;
        match self.kind {
            OptimizerKind::SgdMomentum => {
                let mu = S::from_f64_c(0.9);
                for ((p, g), vel) in params
                    .tensors_mut()
                    .into_iter()
                    .zip(grads.tensors())
                    .zip(self.m.iter_mut())
                {
                    for ((pv, &gv), vv) in
                        p.data_mut().iter_mut().zip(g.data()).zip(vel.data_mut())
                    {
                        *vv = mu * *vv + gv;
                        *pv -= self.lr * *vv;
                    }
                }
            }
            OptimizerKind::Adam => {
                let b1 = S::from_f64_c(0.9);
                let b2 = S::from_f64_c(0.999);
                let eps = S::from_f64_c(1e-8);
                let t = self.step as i32;
                let bc1 = S::one() - b1.powi(t);
                let bc2 = S::one() - b2.powi(t);
                for (((p, g), m), v) in params
                    .tensors_mut()
                    .into_iter()
                    .zip(grads.tensors())
                    .zip(self.m.iter_mut())
                    .zip(self.v.iter_mut())
                {
                    for (((pv, &gv), mv), vv) in p
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(m.data_mut())
                        .zip(v.data_mut())
                    {
                        *mv = b1 * *mv + (S::one() - b1) * gv;
                        *vv = b2 * *vv + (S::one() - b2) * gv * gv;
                        let mhat = *mv / bc1;
                        let vhat = *vv / bc2;
                        *pv -= self.lr * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
        }
    }
}

fn clip_gradients<S: Scalar>(grads: &mut Params<S>, max_norm: f64) {
    if max_norm <= 0.0 {
        return;
    }
    let total: S = grads.tensors().iter().map(|t| t.frobenius_sq()).sum();
    let norm = total.sqrt();
    let cap = S::from_f64_c(max_norm);
    if norm > cap {
        let scale = cap / norm;
        for t in grads.tensors_mut() {
            t.scale(scale);
        }
    }
}

/// Fraction of records whose argmax prediction matches the dataset label.
pub fn accuracy<S: Scalar>(model: &Model<S>, dataset: &Dataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Data("accuracy over an empty dataset".into()));
    }
    let preds = model.predict(dataset)?;
    let hits = preds
        .iter()
        .zip(&dataset.records)
        .filter(|(p, r)| **p == r.label)
        .count();
    Ok(hits as f64 / dataset.len() as f64)
}

/// Train the model in place. Deterministic for a fixed seed: batch order,
/// initialization, and arithmetic are all fixed. Returns the per-epoch log.
pub fn train<S: Scalar>(
    model: &mut Model<S>,
    dataset: &Dataset,
    dev: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<TrainLog> {
    cfg.validate()?;
    if dataset.num_classes != model.config.num_classes {
        return Err(Error::Config(format!(
            "dataset has {} classes, model expects {}",
            dataset.num_classes, model.config.num_classes
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, &model.params);
    let mut log = TrainLog::default();

    // tokenized once; text is immutable during training
    let seqs: Vec<Vec<usize>> = dataset
        .records
        .iter()
        .map(|r| model.prepare(&r.text))
        .collect();

    for epoch in 0..cfg.epochs {
        let batches = make_batches(dataset, cfg.batch_groups, &mut rng)?;
        let mut sums = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        for (b_idx, batch) in batches.iter().enumerate() {
            let batch_seqs: Vec<Vec<usize>> = batch.iter().map(|&i| seqs[i].clone()).collect();
            let labels: Vec<usize> = batch.iter().map(|&i| dataset.records[i].label).collect();
            let ids: Vec<u64> = batch.iter().map(|&i| dataset.records[i].origin_id).collect();
            let (emb, logits, traces) = model.forward_batch(&batch_seqs)?;
            let encoded = EncodedBatch {
                embeddings: emb,
                logits,
                labels,
                homology_ids: ids,
            };
            let (breakdown, grad_emb, grad_logits) = ncl_loss_grad(&encoded, &cfg.objective)?;
            let total = breakdown.total.to_f64_c();
            if !total.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss at epoch {epoch}, batch {b_idx}"
                )));
            }
            sums.0 += total;
            sums.1 += breakdown.ucl.to_f64_c();
            sums.2 += breakdown.scl.to_f64_c();
            sums.3 += breakdown.ce.to_f64_c();
            let mut grads = model.backward_batch(&traces, &grad_emb, &grad_logits);
            clip_gradients(&mut grads, cfg.clip_norm);
            opt.apply(&mut model.params, &grads);
        }
        let nb = batches.len() as f64;
        let dev_acc = match dev {
            Some(d) => Some(accuracy(model, d)?),
            None => None,
        };
        log.epochs.push(EpochLog {
            epoch,
            total: sums.0 / nb,
            ucl: sums.1 / nb,
            scl: sums.2 / nb,
            ce: sums.3 / nb,
            dev_acc,
        });
    }
    Ok(log)
}
