//! Defense measurements: clean accuracy, attack success rate, the
//! per-sample embedding-stability analysis, and embedding dumps.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attacks::{
    insert_sentence_trigger, insert_word_trigger, AttackKind, PoisonSpec,
};
use crate::corpus::{Dataset, Manifest};
use crate::encoder::{argmax, Model};
use crate::error::{Error, Result};
use crate::label_correction::CorrectionReport;
use crate::scalar::Scalar;
use crate::seed::rng_for;

/// Accuracy on benign test samples. Decision-based: scaling all logits by a
/// positive constant changes nothing.
pub fn compute_cacc<S: Scalar>(model: &Model<S>, clean_test: &Dataset) -> Result<f64> {
    if clean_test.is_empty() {
        return Err(Error::Data("empty clean test set".into()));
    }
    let preds = model.predict(clean_test)?;
    let hits = preds
        .iter()
        .zip(&clean_test.records)
        .filter(|(p, r)| **p == r.label)
        .count();
    Ok(hits as f64 / clean_test.len() as f64)
}

/// Fraction of triggered test records classified into the target label. The
/// input must be a triggered test set (true labels != target, trigger
/// applied).
pub fn compute_asr<S: Scalar>(
    model: &Model<S>,
    poisoned_test: &Dataset,
    target_label: usize,
) -> Result<f64> {
    if poisoned_test.is_empty() {
        return Err(Error::Data("empty poisoned test set".into()));
    }
    let preds = model.predict(poisoned_test)?;
    let hits = preds.iter().filter(|&&p| p == target_label).count();
    Ok(hits as f64 / poisoned_test.len() as f64)
}

/// Pearson correlation between two equal-length vectors, treating entries
/// as paired observations. None when either vector is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len();
    if n < 2 || n != b.len() {
        return None;
    }
    let nf = n as f64;
    let ma = a.iter().sum::<f64>() / nf;
    let mb = b.iter().sum::<f64>() / nf;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va <= 0.0 || vb <= 0.0 {
        return None;
    }
    Some(cov / (va.sqrt() * vb.sqrt()))
}

fn median(values: &mut Vec<f64>) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PearsonSummary {
    pub median: Option<f64>,
    pub mean: Option<f64>,
    pub num_samples: usize,
    pub num_undefined: usize,
}

#[derive(Debug, Clone)]
pub struct PearsonAnalysis {
    /// (record id, r); r is None when an embedding was constant.
    pub per_sample: Vec<(String, Option<f64>)>,
    pub summary: PearsonSummary,
}

/// For every benign sample: embed the text and its triggered version, and
/// report the Pearson correlation between the two embedding vectors
/// (dimensions as paired observations). A backdoored model swings under the
/// trigger (low r); a defended model barely moves (r near 1).
pub fn pearson_analysis<S: Scalar>(
    model: &Model<S>,
    benign: &Dataset,
    spec: &PoisonSpec,
) -> Result<PearsonAnalysis> {
    if model.config.embed_dim < 2 {
        return Err(Error::Config("need at least 2 embedding dimensions".into()));
    }
    if spec.kind == AttackKind::Feature {
        return Err(Error::Config(
            "embedding stability analysis needs an insertable (word/sentence) trigger".into(),
        ));
    }
    let mut rng = rng_for(spec.seed, "pearson.place");
    let mut per_sample = Vec::with_capacity(benign.len());
    let mut rs: Vec<f64> = Vec::new();
    let mut undefined = 0usize;
    for r in &benign.records {
        let triggered = match spec.kind {
            AttackKind::Word => {
                insert_word_trigger(&r.text, &spec.trigger_payload, spec.placement, &mut rng).0
            }
            AttackKind::Sentence => {
                insert_sentence_trigger(&r.text, &spec.trigger_payload, spec.placement, &mut rng).0
            }
            AttackKind::Feature => unreachable!(),
        };
        let emb = model.embed_texts(&[r.text.as_str(), triggered.as_str()])?;
        let a: Vec<f64> = emb.row(0).iter().map(|v| v.to_f64_c()).collect();
        let b: Vec<f64> = emb.row(1).iter().map(|v| v.to_f64_c()).collect();
        let rho = pearson(&a, &b);
        if let Some(v) = rho {
            rs.push(v);
        } else {
            undefined += 1;
        }
        per_sample.push((r.id.clone(), rho));
    }
    let mean = if rs.is_empty() {
        None
    } else {
        Some(rs.iter().sum::<f64>() / rs.len() as f64)
    };
    let mut sorted = rs;
    let summary = PearsonSummary {
        median: median(&mut sorted),
        mean,
        num_samples: per_sample.len(),
        num_undefined: undefined,
    };
    Ok(PearsonAnalysis {
        per_sample,
        summary,
    })
}

/// CSV dump of sentence embeddings: id, label, is_poisoned (0 when no
/// manifest entry), then one column per embedding dimension.
pub fn dump_embeddings<S: Scalar>(
    model: &Model<S>,
    dataset: &Dataset,
    manifest: Option<&Manifest>,
    path: &Path,
) -> Result<()> {
    let mut out = String::from("id,label,is_poisoned");
    for i in 0..model.config.embed_dim {
        out.push_str(&format!(",e{i}"));
    }
    out.push('\n');
    for r in &dataset.records {
        let emb = model.embed_texts(&[r.text.as_str()])?;
        let poisoned = manifest
            .and_then(|m| m.get(&r.id))
            .map(|meta| meta.is_poisoned)
            .unwrap_or(false);
        out.push_str(&format!(
            "{},{},{}",
            r.id,
            r.label,
            if poisoned { 1 } else { 0 }
        ));
        for v in emb.row(0) {
            out.push_str(&format!(",{}", v.to_f64_c()));
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub cacc: f64,
    pub asr: f64,
    /// no-defense ASR minus this run's ASR; needs a reference run.
    pub delta_asr: Option<f64>,
    pub correction: Option<CorrectionReport>,
    pub pearson: Option<PearsonSummary>,
    pub config_fingerprint: String,
}

impl EvalReport {
    pub fn save_json(&self, path: &Path) -> Result<()> {
        let body = serde_json::to_string_pretty(self).expect("report serializes");
        std::fs::write(path, body).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<EvalReport> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&raw).map_err(|e| Error::Parse {
            path: path.into(),
            line: 0,
            msg: format!("bad eval report: {e}"),
        })
    }
}

/// Check that argmax decisions are scale-invariant: used by tests and as a
/// cheap invariant (cacc/asr only depend on decisions).
pub fn decisions<S: Scalar>(logits: &crate::linalg::Matrix<S>) -> Vec<usize> {
    (0..logits.rows()).map(|i| argmax(logits.row(i))).collect()
}
