//! Small from-scratch text classifier: token + position embeddings, one
//! multi-head self-attention block with residuals and a two-layer ReLU
//! feed-forward, pooled into a sentence embedding that feeds both the
//! similarity terms and the linear classification head.
//!
//! The forward pass caches enough to run an exact manual backward pass;
//! gradients are verified against finite differences in the tests. With CLS
//! pooling only the CLS row of the block output is ever read, so the
//! forward/backward passes compute just that query row (identical math,
//! fewer flops).

use std::path::Path;

use rand::distributions::{Distribution, Uniform};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, Vocabulary, CLS_ID, PAD_ID};
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, Matrix};
pub use crate::objectives::EncodedBatch;
use crate::scalar::Scalar;
use crate::seed::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// Sentence embedding = CLS position of the block output.
    ClsAttention,
    /// Sentence embedding = mean of the block output over real positions.
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub num_heads: usize,
    pub pooling: Pooling,
    pub max_len: usize,
    pub num_classes: usize,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            vocab_size: 0,
            embed_dim: 64,
            hidden_dim: 128,
            num_heads: 2,
            pooling: Pooling::ClsAttention,
            max_len: 64,
            num_classes: 2,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.embed_dim % self.num_heads != 0 {
            return Err(Error::Config(format!(
                "embed_dim {} must be a positive multiple of num_heads {}",
                self.embed_dim, self.num_heads
            )));
        }
        if self.max_len < 2 {
            return Err(Error::Config("max_len must be >= 2 (CLS + one token)".into()));
        }
        if self.vocab_size < 3 {
            return Err(Error::Config("vocab_size must cover the special tokens".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::Config("num_classes must be >= 2".into()));
        }
        Ok(())
    }
}

/// All learnable tensors. Field order is also the RNG draw order at init and
/// the index order used by the optimizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params<S> {
    pub tok_emb: Matrix<S>,
    pub pos_emb: Matrix<S>,
    pub wq: Matrix<S>,
    pub wk: Matrix<S>,
    pub wv: Matrix<S>,
    pub wo: Matrix<S>,
    pub w1: Matrix<S>,
    pub b1: Matrix<S>,
    pub w2: Matrix<S>,
    pub b2: Matrix<S>,
    pub wc: Matrix<S>,
    pub bc: Matrix<S>,
}

pub const PARAM_NAMES: [&str; 12] = [
    "tok_emb", "pos_emb", "wq", "wk", "wv", "wo", "w1", "b1", "w2", "b2", "wc", "bc",
];

impl<S: Scalar> Params<S> {
    pub fn zeros(cfg: &EncoderConfig) -> Self {
        let (v, d, f, c) = (cfg.vocab_size, cfg.embed_dim, cfg.hidden_dim, cfg.num_classes);
        Params {
            tok_emb: Matrix::zeros(v, d),
            pos_emb: Matrix::zeros(cfg.max_len, d),
            wq: Matrix::zeros(d, d),
            wk: Matrix::zeros(d, d),
            wv: Matrix::zeros(d, d),
            wo: Matrix::zeros(d, d),
            w1: Matrix::zeros(d, f),
            b1: Matrix::zeros(1, f),
            w2: Matrix::zeros(f, d),
            b2: Matrix::zeros(1, d),
            wc: Matrix::zeros(d, c),
            bc: Matrix::zeros(1, c),
        }
    }

    /// Seeded init: uniform embeddings, Xavier-style projections, zero
    /// biases and a zero classification head (an untrained model therefore
    /// emits a uniform softmax).
    pub fn init(cfg: &EncoderConfig) -> Self {
        let mut rng = rng_for(cfg.seed, "encoder.init");
        let (d, f) = (cfg.embed_dim as f64, cfg.hidden_dim as f64);
        let mut p = Params::zeros(cfg);
        fill_uniform(&mut p.tok_emb, 0.1, &mut rng);
        fill_uniform(&mut p.pos_emb, 0.1, &mut rng);
        let a_proj = (6.0 / (d + d)).sqrt();
        fill_uniform(&mut p.wq, a_proj, &mut rng);
        fill_uniform(&mut p.wk, a_proj, &mut rng);
        fill_uniform(&mut p.wv, a_proj, &mut rng);
        fill_uniform(&mut p.wo, a_proj, &mut rng);
        fill_uniform(&mut p.w1, (6.0 / (d + f)).sqrt(), &mut rng);
        fill_uniform(&mut p.w2, (6.0 / (f + d)).sqrt(), &mut rng);
        p
    }

    pub fn tensors(&self) -> [&Matrix<S>; 12] {
        [
            &self.tok_emb, &self.pos_emb, &self.wq, &self.wk, &self.wv, &self.wo, &self.w1,
            &self.b1, &self.w2, &self.b2, &self.wc, &self.bc,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Matrix<S>; 12] {
        [
            &mut self.tok_emb, &mut self.pos_emb, &mut self.wq, &mut self.wk, &mut self.wv,
            &mut self.wo, &mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2, &mut self.wc,
            &mut self.bc,
        ]
    }
}

fn fill_uniform<S: Scalar>(m: &mut Matrix<S>, bound: f64, rng: &mut ChaCha8Rng) {
    let dist = Uniform::new_inclusive(-bound, bound);
    for v in m.data_mut() {
        *v = S::from_f64_c(dist.sample(rng));
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Model<S> {
    pub config: EncoderConfig,
    pub vocab: Vocabulary,
    pub params: Params<S>,
}

/// Cached activations for one record, enough for an exact backward pass.
pub struct Trace<S> {
    ids: Vec<usize>,
    h0: Matrix<S>,
    kmat: Matrix<S>,
    vmat: Matrix<S>,
    /// CLS pooling: the single query row. Mean pooling: all query rows.
    qmat: Matrix<S>,
    /// Attention weights per head; one row per query row in `qmat`.
    att: Vec<Matrix<S>>,
    /// Concatenated per-head context, one row per query row.
    cat: Matrix<S>,
    /// Block rows after the attention residual (query rows only).
    h1: Matrix<S>,
    pre: Matrix<S>,
    act: Matrix<S>,
    /// Pooled sentence embedding.
    e: Vec<S>,
}

impl<S: Scalar> Model<S> {
    pub fn new(mut config: EncoderConfig, vocab: Vocabulary) -> Result<Self> {
        config.vocab_size = vocab.len();
        config.validate()?;
        let params = Params::init(&config);
        Ok(Model {
            config,
            vocab,
            params,
        })
    }

    /// Tokenize, truncate to max_len - 1 and prepend CLS. No trailing
    /// padding: effective lengths are handled internally.
    pub fn prepare(&self, text: &str) -> Vec<usize> {
        let mut ids = vec![CLS_ID];
        for id in self.vocab.encode(text) {
            if ids.len() >= self.config.max_len {
                break;
            }
            ids.push(id);
        }
        ids
    }

    /// Effective sequence: validated ids up to the first PAD.
    fn effective_ids(&self, seq: &[usize]) -> Result<Vec<usize>> {
        if seq.len() > self.config.max_len {
            return Err(Error::Data(format!(
                "sequence length {} exceeds max_len {}",
                seq.len(),
                self.config.max_len
            )));
        }
        let mut ids = Vec::with_capacity(seq.len());
        for &id in seq {
            if id == PAD_ID {
                break;
            }
            if id >= self.config.vocab_size {
                return Err(Error::Data(format!(
                    "token id {id} outside vocabulary of size {}",
                    self.config.vocab_size
                )));
            }
            ids.push(id);
        }
        if ids.is_empty() {
            return Err(Error::Data("empty sequence (leading PAD?)".into()));
        }
        Ok(ids)
    }

    fn forward_record(&self, seq: &[usize]) -> Result<Trace<S>> {
        let ids = self.effective_ids(seq)?;
        let p = &self.params;
        let l = ids.len();
        let d = self.config.embed_dim;
        let heads = self.config.num_heads;
        let dk = d / heads;
        let scale = S::from_f64_c(1.0 / (dk as f64).sqrt());

        let mut h0 = Matrix::zeros(l, d);
        for (t, &id) in ids.iter().enumerate() {
            let row = h0.row_mut(t);
            row.copy_from_slice(p.tok_emb.row(id));
            axpy(S::one(), p.pos_emb.row(t), row);
        }

        let kmat = h0.matmul(&p.wk);
        let vmat = h0.matmul(&p.wv);
        let query_rows = match self.config.pooling {
            Pooling::ClsAttention => 1,
            Pooling::Mean => l,
        };
        // q rows for the pooled positions only
        let mut qmat = Matrix::zeros(query_rows, d);
        for qr in 0..query_rows {
            let h0_row = h0.row(qr);
            let q_row = qmat.row_mut(qr);
            for (kcol, &hv) in h0_row.iter().enumerate() {
                axpy(hv, p.wq.row(kcol), q_row);
            }
        }

        let mut att = Vec::with_capacity(heads);
        let mut cat = Matrix::zeros(query_rows, d);
        for h in 0..heads {
            let off = h * dk;
            let mut weights = Matrix::zeros(query_rows, l);
            for qr in 0..query_rows {
                let q = &qmat.row(qr)[off..off + dk];
                let w = weights.row_mut(qr);
                let mut m = S::neg_infinity();
                for (j, wj) in w.iter_mut().enumerate() {
                    let s = dot(q, &kmat.row(j)[off..off + dk]) * scale;
                    *wj = s;
                    m = m.max(s);
                }
                let mut sum = S::zero();
                for wj in w.iter_mut() {
                    *wj = (*wj - m).exp();
                    sum += *wj;
                }
                let inv = S::one() / sum;
                for wj in w.iter_mut() {
                    *wj *= inv;
                }
                // context for this head
                let cat_row = &mut cat.row_mut(qr)[off..off + dk];
                for (j, &a) in w.iter().enumerate() {
                    axpy(a, &vmat.row(j)[off..off + dk], cat_row);
                }
            }
            att.push(weights);
        }

        // attention output projection + residual
        let attn_out = cat.matmul(&p.wo);
        let mut h1 = Matrix::zeros(query_rows, d);
        for qr in 0..query_rows {
            let row = h1.row_mut(qr);
            row.copy_from_slice(h0.row(qr));
            axpy(S::one(), attn_out.row(qr), row);
        }

        // position-wise feed-forward + residual
        let mut pre = h1.matmul(&p.w1);
        for qr in 0..query_rows {
            axpy(S::one(), p.b1.row(0), pre.row_mut(qr));
        }
        let mut act = pre.clone();
        for v in act.data_mut() {
            if *v < S::zero() {
                *v = S::zero();
            }
        }
        let ffn = act.matmul(&p.w2);
        let mut h2 = Matrix::zeros(query_rows, d);
        for qr in 0..query_rows {
            let row = h2.row_mut(qr);
            row.copy_from_slice(h1.row(qr));
            axpy(S::one(), ffn.row(qr), row);
            axpy(S::one(), p.b2.row(0), row);
        }

        let e = match self.config.pooling {
            Pooling::ClsAttention => h2.row(0).to_vec(),
            Pooling::Mean => {
                let inv = S::one() / S::from_f64_c(l as f64);
                let mut e = vec![S::zero(); d];
                for qr in 0..l {
                    axpy(inv, h2.row(qr), &mut e);
                }
                e
            }
        };

        Ok(Trace {
            ids,
            h0,
            kmat,
            vmat,
            qmat,
            att,
            cat,
            h1,
            pre,
            act,
            e,
        })
    }

    fn logits_from_embedding(&self, e: &[S]) -> Vec<S> {
        let p = &self.params;
        let c = self.config.num_classes;
        let mut logits = p.bc.row(0).to_vec();
        for (kcol, &ev) in e.iter().enumerate() {
            axpy(ev, p.wc.row(kcol), &mut logits);
        }
        debug_assert_eq!(logits.len(), c);
        logits
    }

    /// Sentence embeddings (CLS analog) for prepared sequences.
    pub fn encode(&self, seqs: &[Vec<usize>]) -> Result<Matrix<S>> {
        let d = self.config.embed_dim;
        let mut out = Matrix::zeros(seqs.len(), d);
        for (i, seq) in seqs.iter().enumerate() {
            let trace = self.forward_record(seq)?;
            out.row_mut(i).copy_from_slice(&trace.e);
        }
        Ok(out)
    }

    /// Class logits for prepared sequences.
    pub fn classify(&self, seqs: &[Vec<usize>]) -> Result<Matrix<S>> {
        let c = self.config.num_classes;
        let mut out = Matrix::zeros(seqs.len(), c);
        for (i, seq) in seqs.iter().enumerate() {
            let trace = self.forward_record(seq)?;
            out.row_mut(i).copy_from_slice(&self.logits_from_embedding(&trace.e));
        }
        Ok(out)
    }

    /// Forward pass keeping traces for the backward pass. Returns
    /// (embeddings, logits, traces).
    pub fn forward_batch(
        &self,
        seqs: &[Vec<usize>],
    ) -> Result<(Matrix<S>, Matrix<S>, Vec<Trace<S>>)> {
        let d = self.config.embed_dim;
        let c = self.config.num_classes;
        let mut emb = Matrix::zeros(seqs.len(), d);
        let mut logits = Matrix::zeros(seqs.len(), c);
        let mut traces = Vec::with_capacity(seqs.len());
        for (i, seq) in seqs.iter().enumerate() {
            let trace = self.forward_record(seq)?;
            emb.row_mut(i).copy_from_slice(&trace.e);
            logits
                .row_mut(i)
                .copy_from_slice(&self.logits_from_embedding(&trace.e));
            traces.push(trace);
        }
        Ok((emb, logits, traces))
    }

    /// Accumulate parameter gradients for a batch given the loss gradients
    /// with respect to the pooled embeddings and the logits.
    pub fn backward_batch(
        &self,
        traces: &[Trace<S>],
        grad_emb: &Matrix<S>,
        grad_logits: &Matrix<S>,
    ) -> Params<S> {
        let mut grads = Params::zeros(&self.config);
        for (i, trace) in traces.iter().enumerate() {
            self.backward_record(trace, grad_emb.row(i), grad_logits.row(i), &mut grads);
        }
        grads
    }

    fn backward_record(
        &self,
        trace: &Trace<S>,
        grad_e_loss: &[S],
        grad_logits: &[S],
        grads: &mut Params<S>,
    ) {
        let p = &self.params;
        let d = self.config.embed_dim;
        let fdim = self.config.hidden_dim;
        let heads = self.config.num_heads;
        let dk = d / heads;
        let scale = S::from_f64_c(1.0 / (dk as f64).sqrt());
        let l = trace.ids.len();
        let query_rows = trace.qmat.rows();

        // classification head: logits = e • Wc + bc
        let mut grad_e = grad_e_loss.to_vec();
        for (kcol, ge) in grad_e.iter_mut().enumerate() {
            *ge += dot(p.wc.row(kcol), grad_logits);
            axpy(trace.e[kcol], grad_logits, grads.wc.row_mut(kcol));
        }
        axpy(S::one(), grad_logits, grads.bc.row_mut(0));

        // pooled embedding -> block output rows
        let mut dh2 = Matrix::zeros(query_rows, d);
        match self.config.pooling {
            Pooling::ClsAttention => dh2.row_mut(0).copy_from_slice(&grad_e),
            Pooling::Mean => {
                let inv = S::one() / S::from_f64_c(l as f64);
                for qr in 0..query_rows {
                    let row = dh2.row_mut(qr);
                    for (rv, &g) in row.iter_mut().zip(&grad_e) {
                        *rv = g * inv;
                    }
                }
            }
        }

        // feed-forward backward (h2 = h1 + relu(h1 W1 + b1) W2 + b2)
        let mut dh1 = dh2.clone();
        let mut dpre = Matrix::zeros(query_rows, fdim);
        for qr in 0..query_rows {
            let df = dh2.row(qr);
            axpy(S::one(), df, grads.b2.row_mut(0));
            let act_row = trace.act.row(qr);
            let pre_row = trace.pre.row(qr);
            let dpre_row = dpre.row_mut(qr);
            for j in 0..fdim {
                // dact_j = df • w2[j]; dW2[j] += act_j * df
                let da = dot(p.w2.row(j), df);
                axpy(act_row[j], df, grads.w2.row_mut(j));
                dpre_row[j] = if pre_row[j] > S::zero() { da } else { S::zero() };
            }
            axpy(S::one(), dpre.row(qr), grads.b1.row_mut(0));
            let h1_row = trace.h1.row(qr);
            let dh1_row = dh1.row_mut(qr);
            for kcol in 0..d {
                axpy(h1_row[kcol], dpre.row(qr), grads.w1.row_mut(kcol));
                dh1_row[kcol] += dot(p.w1.row(kcol), dpre.row(qr));
            }
        }

        // attention backward (h1 = h0 + cat Wo)
        let mut dh0 = Matrix::zeros(l, d);
        for qr in 0..query_rows {
            axpy(S::one(), dh1.row(qr), dh0.row_mut(qr));
        }
        // dcat = dh1 Wo^T ; dWo += cat^T dh1
        let mut dcat = Matrix::zeros(query_rows, d);
        for qr in 0..query_rows {
            let dh1_row = dh1.row(qr);
            let cat_row = trace.cat.row(qr);
            let dcat_row = dcat.row_mut(qr);
            for kcol in 0..d {
                dcat_row[kcol] = dot(p.wo.row(kcol), dh1_row);
                axpy(cat_row[kcol], dh1_row, grads.wo.row_mut(kcol));
            }
        }

        let mut dq = Matrix::zeros(query_rows, d);
        let mut dkmat = Matrix::zeros(l, d);
        let mut dvmat = Matrix::zeros(l, d);
        for h in 0..heads {
            let off = h * dk;
            let weights = &trace.att[h];
            for qr in 0..query_rows {
                let a_row = weights.row(qr);
                let dcat_h = &dcat.row(qr)[off..off + dk];
                // datt_j = dcat_h • v_j ; dv_j += a_j dcat_h
                let mut datt = vec![S::zero(); l];
                for j in 0..l {
                    datt[j] = dot(dcat_h, &trace.vmat.row(j)[off..off + dk]);
                    axpy(a_row[j], dcat_h, &mut dvmat.row_mut(j)[off..off + dk]);
                }
                // softmax backward
                let inner = dot(&datt, a_row);
                let q_h = &trace.qmat.row(qr)[off..off + dk];
                let dq_h = &mut dq.row_mut(qr)[off..off + dk];
                for j in 0..l {
                    let ds = a_row[j] * (datt[j] - inner) * scale;
                    if ds != S::zero() {
                        axpy(ds, &trace.kmat.row(j)[off..off + dk], dq_h);
                        axpy(ds, q_h, &mut dkmat.row_mut(j)[off..off + dk]);
                    }
                }
            }
        }

        // projections: q = h0 Wq (query rows), k/v = h0 W{k,v} (all rows)
        for qr in 0..query_rows {
            let h0_row = trace.h0.row(qr);
            let dq_row = dq.row(qr);
            let dh0_row = dh0.row_mut(qr);
            for kcol in 0..d {
                axpy(h0_row[kcol], dq_row, grads.wq.row_mut(kcol));
                dh0_row[kcol] += dot(p.wq.row(kcol), dq_row);
            }
        }
        for t in 0..l {
            let h0_row = trace.h0.row(t);
            let dk_row = dkmat.row(t);
            let dv_row = dvmat.row(t);
            let dh0_row = dh0.row_mut(t);
            for kcol in 0..d {
                axpy(h0_row[kcol], dk_row, grads.wk.row_mut(kcol));
                axpy(h0_row[kcol], dv_row, grads.wv.row_mut(kcol));
                dh0_row[kcol] += dot(p.wk.row(kcol), dk_row) + dot(p.wv.row(kcol), dv_row);
            }
        }

        // embeddings
        for (t, &id) in trace.ids.iter().enumerate() {
            axpy(S::one(), dh0.row(t), grads.tok_emb.row_mut(id));
            axpy(S::one(), dh0.row(t), grads.pos_emb.row_mut(t));
        }
    }

    /// Argmax predictions for every record of a dataset.
    pub fn predict(&self, dataset: &Dataset) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(dataset.len());
        for r in &dataset.records {
            let seq = self.prepare(&r.text);
            let trace = self.forward_record(&seq)?;
            let logits = self.logits_from_embedding(&trace.e);
            out.push(argmax(&logits));
        }
        Ok(out)
    }

    /// Sentence embeddings for raw texts.
    pub fn embed_texts(&self, texts: &[&str]) -> Result<Matrix<S>> {
        let seqs: Vec<Vec<usize>> = texts.iter().map(|t| self.prepare(t)).collect();
        self.encode(&seqs)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let ckpt = Checkpoint {
            format_version: 1,
            model: self.clone(),
        };
        let body = serde_json::to_string(&ckpt).expect("checkpoint serializes");
        std::fs::write(path, body).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Model<S>> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut ckpt: Checkpoint<S> = serde_json::from_str(&raw).map_err(|e| Error::Parse {
            path: path.into(),
            line: 0,
            msg: format!("bad checkpoint: {e}"),
        })?;
        if ckpt.format_version != 1 {
            return Err(Error::Data(format!(
                "unsupported checkpoint version {}",
                ckpt.format_version
            )));
        }
        ckpt.model.vocab.rebuild_index();
        Ok(ckpt.model)
    }
}

pub fn argmax<S: Scalar>(row: &[S]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[derive(Serialize, Deserialize)]
struct Checkpoint<S> {
    format_version: u32,
    #[serde(bound(
        serialize = "S: Serialize",
        deserialize = "S: serde::de::DeserializeOwned"
    ))]
    model: Model<S>,
}
