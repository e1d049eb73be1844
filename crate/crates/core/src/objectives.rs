//! The loss core: cosine similarity, the homology-contrastive term, the
//! supervised-contrastive term, cross entropy, and their weighted
//! combination, all with analytic gradients with respect to the raw
//! embeddings and logits.
//!
//! Both contrastive terms share one structure: for every ordered pair (i, j)
//! with i != j and matching group key, the term is
//!
//!   -ln[ exp(s_ij/t) / (exp(s_ij/t) + sum_k 1[key_i != key_k] exp(s_ik/t)) ]
//!
//! summed and divided by the batch size (or, optionally, by the pair count).
//! The homology term groups by origin id, the supervised term by label.
//! Everything is evaluated through log-sum-exp; a pair with no negatives
//! contributes exactly 0.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossVariant {
    Ncl,
    UNcl,
    Ce,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairNormalization {
    /// Divide by batch size N, as printed.
    Batch,
    /// Divide by the number of ordered positive pairs.
    Pairs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObjectiveConfig {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub tau0: f64,
    pub tau1: f64,
    pub variant: LossVariant,
    #[serde(default = "default_pair_norm")]
    pub pair_normalization: PairNormalization,
}

fn default_pair_norm() -> PairNormalization {
    PairNormalization::Batch
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        ObjectiveConfig {
            alpha: 1.0,
            beta: 0.1,
            gamma: 0.9,
            tau0: 0.3,
            tau1: 0.05,
            variant: LossVariant::Ncl,
            pair_normalization: PairNormalization::Batch,
        }
    }
}

impl ObjectiveConfig {
    /// Effective weights after applying the variant rules: the uNCL variant
    /// drops the supervised term, the CE variant is plain cross entropy
    /// (weights 0, 0, 1).
    pub fn effective_weights(&self) -> (f64, f64, f64) {
        match self.variant {
            LossVariant::Ncl => (self.alpha, self.beta, self.gamma),
            LossVariant::UNcl => (self.alpha, 0.0, self.gamma),
            LossVariant::Ce => (0.0, 0.0, 1.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha < 0.0 || self.beta < 0.0 {
            return Err(Error::Config("alpha and beta must be >= 0".into()));
        }
        if self.gamma <= 0.0 {
            return Err(Error::Config("gamma must be > 0".into()));
        }
        if self.tau0 <= 0.0 || self.tau1 <= 0.0 {
            return Err(Error::Config("temperatures must be > 0".into()));
        }
        let (a, b, g) = self.effective_weights();
        if a + b + g <= 0.0 {
            return Err(Error::Config("weight sum must be positive".into()));
        }
        Ok(())
    }

    pub fn prefactor(&self) -> f64 {
        let (a, b, g) = self.effective_weights();
        1.0 / (a + b + g).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown<S> {
    pub total: S,
    pub ucl: S,
    pub scl: S,
    pub ce: S,
    pub num_ucl_pairs: usize,
    pub num_scl_pairs: usize,
}

/// One training batch as seen by the losses: raw (pre-normalization)
/// sentence embeddings, class logits, labels, and homology ids.
#[derive(Debug, Clone)]
pub struct EncodedBatch<S> {
    pub embeddings: Matrix<S>,
    pub logits: Matrix<S>,
    pub labels: Vec<usize>,
    pub homology_ids: Vec<u64>,
}

impl<S: Scalar> EncodedBatch<S> {
    pub fn validate(&self) -> Result<()> {
        let n = self.embeddings.rows();
        if self.logits.rows() != n || self.labels.len() != n || self.homology_ids.len() != n {
            return Err(Error::Data(format!(
                "batch row counts disagree: emb {}, logits {}, labels {}, ids {}",
                n,
                self.logits.rows(),
                self.labels.len(),
                self.homology_ids.len()
            )));
        }
        Ok(())
    }
}

/// Row-normalized embeddings plus norms, shared by the similarity forward
/// and backward passes.
struct Normalized<S> {
    unit: Matrix<S>,
    norms: Vec<S>,
}

fn normalize_rows<S: Scalar>(emb: &Matrix<S>) -> Result<Normalized<S>> {
    let mut unit = emb.clone();
    let mut norms = Vec::with_capacity(emb.rows());
    for r in 0..emb.rows() {
        let norm = crate::linalg::l2_norm(emb.row(r));
        if norm <= S::zero() || !norm.is_finite() {
            return Err(Error::Numeric(format!(
                "zero-norm embedding at batch row {r}"
            )));
        }
        let inv = S::one() / norm;
        for v in unit.row_mut(r) {
            *v *= inv;
        }
        norms.push(norm);
    }
    Ok(Normalized { unit, norms })
}

/// Cosine similarity matrix: rows L2-normalized, symmetric, unit diagonal.
pub fn similarity_matrix<S: Scalar>(embeddings: &Matrix<S>) -> Result<Matrix<S>> {
    let nz = normalize_rows(embeddings)?;
    let n = embeddings.rows();
    let mut sim = Matrix::zeros(n, n);
    for i in 0..n {
        sim.set(i, i, S::one());
        for j in (i + 1)..n {
            let s = dot(nz.unit.row(i), nz.unit.row(j));
            sim.set(i, j, s);
            sim.set(j, i, s);
        }
    }
    Ok(sim)
}

fn count_ordered_pairs(keys: &[u64]) -> usize {
    let n = keys.len();
    let mut count = 0;
    for i in 0..n {
        for j in 0..n {
            if i != j && keys[i] == keys[j] {
                count += 1;
            }
        }
    }
    count
}

fn norm_divisor<S: Scalar>(n: usize, pairs: usize, mode: PairNormalization) -> S {
    match mode {
        PairNormalization::Batch => S::from_f64_c(n as f64),
        PairNormalization::Pairs => S::from_f64_c(pairs.max(1) as f64),
    }
}

/// Shared contrastive evaluation over an arbitrary grouping key.
/// Returns (loss, ordered positive pair count).
fn grouped_contrastive_loss<S: Scalar>(
    sim: &Matrix<S>,
    keys: &[u64],
    tau: S,
    mode: PairNormalization,
) -> (S, usize) {
    let n = keys.len();
    let pairs = count_ordered_pairs(keys);
    if pairs == 0 {
        return (S::zero(), 0);
    }
    let mut acc = S::zero();
    for i in 0..n {
        let positives: Vec<usize> = (0..n)
            .filter(|&j| j != i && keys[j] == keys[i])
            .collect();
        if positives.is_empty() {
            continue;
        }
        let negatives: Vec<usize> = (0..n).filter(|&k| keys[k] != keys[i]).collect();
        // one stabilization max per row covers every pair's denominator
        let mut m = S::neg_infinity();
        for &j in &positives {
            m = m.max(sim.get(i, j) / tau);
        }
        for &k in &negatives {
            m = m.max(sim.get(i, k) / tau);
        }
        let neg_sum: S = negatives
            .iter()
            .map(|&k| (sim.get(i, k) / tau - m).exp())
            .sum();
        for &j in &positives {
            let x = sim.get(i, j) / tau - m;
            // term = ln(exp(x) / (exp(x) + neg_sum)) = x - ln(exp(x) + neg_sum)
            acc += x - (x.exp() + neg_sum).ln();
        }
    }
    let loss = -acc / norm_divisor::<S>(n, pairs, mode);
    (loss, pairs)
}

/// Gradient of the grouped contrastive loss with respect to the (ordered)
/// similarity entries.
fn grouped_contrastive_grad_sim<S: Scalar>(
    sim: &Matrix<S>,
    keys: &[u64],
    tau: S,
    mode: PairNormalization,
) -> Matrix<S> {
    let n = keys.len();
    let mut grad = Matrix::zeros(n, n);
    let pairs = count_ordered_pairs(keys);
    if pairs == 0 {
        return grad;
    }
    let scale = S::one() / (norm_divisor::<S>(n, pairs, mode) * tau);
    for i in 0..n {
        let positives: Vec<usize> = (0..n)
            .filter(|&j| j != i && keys[j] == keys[i])
            .collect();
        if positives.is_empty() {
            continue;
        }
        let negatives: Vec<usize> = (0..n).filter(|&k| keys[k] != keys[i]).collect();
        let mut m = S::neg_infinity();
        for &j in &positives {
            m = m.max(sim.get(i, j) / tau);
        }
        for &k in &negatives {
            m = m.max(sim.get(i, k) / tau);
        }
        let neg_exps: Vec<S> = negatives
            .iter()
            .map(|&k| (sim.get(i, k) / tau - m).exp())
            .collect();
        let neg_sum: S = neg_exps.iter().copied().sum();
        for &j in &positives {
            let e_pos = (sim.get(i, j) / tau - m).exp();
            let denom = e_pos + neg_sum;
            // d(-term)/ds_ij = -(1 - p_ij)/(norm*tau)
            grad.add_at(i, j, -scale * (S::one() - e_pos / denom));
            for (&k, &e_neg) in negatives.iter().zip(&neg_exps) {
                grad.add_at(i, k, scale * (e_neg / denom));
            }
        }
    }
    grad
}

/// Chain a gradient over the similarity matrix back to the raw embeddings,
/// through row normalization and the dot product. `grad_sim` holds ordered
/// entries; the diagonal is ignored (cosine of a row with itself is
/// constant).
fn similarity_backward<S: Scalar>(
    embeddings: &Matrix<S>,
    grad_sim: &Matrix<S>,
) -> Result<Matrix<S>> {
    let nz = normalize_rows(embeddings)?;
    let n = embeddings.rows();
    let d = embeddings.cols();
    let mut grad = Matrix::zeros(n, d);
    for a in 0..n {
        // dL/du_a = sum_b (G_ab + G_ba) u_b, b != a
        let mut h = vec![S::zero(); d];
        for b in 0..n {
            if b == a {
                continue;
            }
            let w = grad_sim.get(a, b) + grad_sim.get(b, a);
            if w != S::zero() {
                crate::linalg::axpy(w, nz.unit.row(b), &mut h);
            }
        }
        // through u = e/|e|: dL/de = (h - (h·u) u) / |e|
        let u = nz.unit.row(a);
        let hu = dot(&h, u);
        let inv = S::one() / nz.norms[a];
        let out = grad.row_mut(a);
        for ((o, &hv), &uv) in out.iter_mut().zip(&h).zip(u) {
            *o = (hv - hu * uv) * inv;
        }
    }
    Ok(grad)
}

/// Homology-contrastive loss over a precomputed similarity matrix.
pub fn ucl_loss<S: Scalar>(sim: &Matrix<S>, homology_ids: &[u64], tau0: S) -> S {
    grouped_contrastive_loss(sim, homology_ids, tau0, PairNormalization::Batch).0
}

/// Supervised-contrastive loss over a precomputed similarity matrix.
pub fn scl_loss<S: Scalar>(sim: &Matrix<S>, labels: &[usize], tau1: S) -> S {
    let keys: Vec<u64> = labels.iter().map(|&l| l as u64).collect();
    grouped_contrastive_loss(sim, &keys, tau1, PairNormalization::Batch).0
}

/// Mean cross entropy of logits against integer labels.
pub fn ce_loss<S: Scalar>(logits: &Matrix<S>, labels: &[usize]) -> S {
    let n = logits.rows();
    assert_eq!(labels.len(), n, "label count mismatch");
    let mut acc = S::zero();
    for (i, &y) in labels.iter().enumerate() {
        let row = logits.row(i);
        let m = row.iter().copied().fold(S::neg_infinity(), S::max);
        let lse: S = row.iter().map(|&v| (v - m).exp()).sum::<S>().ln() + m;
        acc += lse - row[y];
    }
    acc / S::from_f64_c(n as f64)
}

/// Gradient of [`ce_loss`] with respect to the logits: (softmax - onehot)/N.
pub fn ce_grad<S: Scalar>(logits: &Matrix<S>, labels: &[usize]) -> Matrix<S> {
    let n = logits.rows();
    let c = logits.cols();
    let inv_n = S::one() / S::from_f64_c(n as f64);
    let mut grad = Matrix::zeros(n, c);
    for (i, &y) in labels.iter().enumerate() {
        let row = logits.row(i);
        let m = row.iter().copied().fold(S::neg_infinity(), S::max);
        let exps: Vec<S> = row.iter().map(|&v| (v - m).exp()).collect();
        let sum: S = exps.iter().copied().sum();
        let out = grad.row_mut(i);
        for (c_idx, (o, e)) in out.iter_mut().zip(&exps).enumerate() {
            let p = *e / sum;
            *o = (p - if c_idx == y { S::one() } else { S::zero() }) * inv_n;
        }
    }
    grad
}

/// Full objective over a batch. Terms with zero effective weight are
/// reported as 0 and skipped.
pub fn ncl_loss<S: Scalar>(
    batch: &EncodedBatch<S>,
    config: &ObjectiveConfig,
) -> Result<LossBreakdown<S>> {
    Ok(ncl_forward(batch, config)?.0)
}

fn ncl_forward<S: Scalar>(
    batch: &EncodedBatch<S>,
    config: &ObjectiveConfig,
) -> Result<(LossBreakdown<S>, Option<Matrix<S>>)> {
    config.validate()?;
    batch.validate()?;
    let (a, b, g) = config.effective_weights();
    let need_sim = a > 0.0 || b > 0.0;
    let sim = if need_sim {
        Some(similarity_matrix(&batch.embeddings)?)
    } else {
        None
    };
    let mode = config.pair_normalization;
    let (ucl, n_ucl) = match (&sim, a > 0.0) {
        (Some(s), true) => grouped_contrastive_loss(
            s,
            &batch.homology_ids,
            S::from_f64_c(config.tau0),
            mode,
        ),
        _ => (S::zero(), 0),
    };
    let label_keys: Vec<u64> = batch.labels.iter().map(|&l| l as u64).collect();
    let (scl, n_scl) = match (&sim, b > 0.0) {
        (Some(s), true) => {
            grouped_contrastive_loss(s, &label_keys, S::from_f64_c(config.tau1), mode)
        }
        _ => (S::zero(), 0),
    };
    let ce = ce_loss(&batch.logits, &batch.labels);
    let pf = S::from_f64_c(config.prefactor());
    let total = pf
        * (S::from_f64_c(a) * ucl + S::from_f64_c(b) * scl + S::from_f64_c(g) * ce);
    Ok((
        LossBreakdown {
            total,
            ucl,
            scl,
            ce,
            num_ucl_pairs: n_ucl,
            num_scl_pairs: n_scl,
        },
        sim,
    ))
}

/// Objective value plus gradients with respect to raw embeddings and logits.
pub fn ncl_loss_grad<S: Scalar>(
    batch: &EncodedBatch<S>,
    config: &ObjectiveConfig,
) -> Result<(LossBreakdown<S>, Matrix<S>, Matrix<S>)> {
    let (breakdown, sim) = ncl_forward(batch, config)?;
    let (a, b, g) = config.effective_weights();
    let pf = S::from_f64_c(config.prefactor());
    let n = batch.embeddings.rows();

    let grad_emb = if let Some(sim) = &sim {
        let mode = config.pair_normalization;
        let mut grad_sim = Matrix::zeros(n, n);
        if a > 0.0 {
            let mut gu = grouped_contrastive_grad_sim(
                sim,
                &batch.homology_ids,
                S::from_f64_c(config.tau0),
                mode,
            );
            gu.scale(pf * S::from_f64_c(a));
            grad_sim.add_assign(&gu);
        }
        if b > 0.0 {
            let keys: Vec<u64> = batch.labels.iter().map(|&l| l as u64).collect();
            let mut gs =
                grouped_contrastive_grad_sim(sim, &keys, S::from_f64_c(config.tau1), mode);
            gs.scale(pf * S::from_f64_c(b));
            grad_sim.add_assign(&gs);
        }
        similarity_backward(&batch.embeddings, &grad_sim)?
    } else {
        Matrix::zeros(n, batch.embeddings.cols())
    };

    let mut grad_logits = ce_grad(&batch.logits, &batch.labels);
    grad_logits.scale(pf * S::from_f64_c(g));

    Ok((breakdown, grad_emb, grad_logits))
}
