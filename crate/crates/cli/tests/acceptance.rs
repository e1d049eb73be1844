//! Acceptance suite: one test per criterion, each printing a PASS line with
//! the measured numbers. Math criteria check the stabilized implementations
//! against an independent naive evaluator kept in this file; experiment
//! criteria run the full pipeline arms on the generated toy corpus and are
//! shared across tests through a memoized arm cache.
//!
//! Run with `cargo test -p nclbench-cli --test acceptance -- --nocapture`.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, OnceLock};
use std::time::Instant;

use nclbench_core::attacks::AttackKind;
use nclbench_core::config::ExperimentConfig;
use nclbench_core::corpus::{load_dataset, Dataset};
use nclbench_core::encoder::Model;
use nclbench_core::evaluation::pearson_analysis;
use nclbench_core::linalg::Matrix;
use nclbench_core::objectives::{
    ce_loss, ncl_loss, ncl_loss_grad, scl_loss, similarity_matrix, ucl_loss, EncodedBatch,
    LossVariant, ObjectiveConfig,
};
use nclbench_core::pipeline::{
    cmd_defend, cmd_eval, cmd_gen_data, cmd_poison, cmd_sweep_alpha, AlphaSweepRow, DefendMethod,
};
use nclbench_core::seed::rng_for;
use nclbench_core::Real;
use rand::Rng;

// ---------------------------------------------------------------------------
// independent oracle: literal formula evaluation, no stabilization
// ---------------------------------------------------------------------------

mod oracle {
    /// Plain cosine similarity matrix.
    pub fn similarity(emb: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let n = emb.len();
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let mut s = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                let dot: f64 = emb[i].iter().zip(&emb[j]).map(|(a, b)| a * b).sum();
                s[i][j] = dot / (norm(&emb[i]) * norm(&emb[j]));
            }
        }
        s
    }

    /// Shared contrastive form: ordered pairs over a grouping key, negatives
    /// where the key differs, one global 1/N.
    pub fn contrastive(sim: &[Vec<f64>], keys: &[u64], tau: f64) -> f64 {
        let n = keys.len();
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j && keys[i] == keys[j] {
                    let neg: f64 = (0..n)
                        .filter(|&k| keys[k] != keys[i])
                        .map(|k| (sim[i][k] / tau).exp())
                        .sum();
                    let e = (sim[i][j] / tau).exp();
                    acc += (e / (e + neg)).ln();
                }
            }
        }
        -acc / n as f64
    }

    pub fn ucl(sim: &[Vec<f64>], ids: &[u64], tau: f64) -> f64 {
        contrastive(sim, ids, tau)
    }

    pub fn scl(sim: &[Vec<f64>], labels: &[usize], tau: f64) -> f64 {
        let keys: Vec<u64> = labels.iter().map(|&l| l as u64).collect();
        contrastive(sim, &keys, tau)
    }

    pub fn ce(logits: &[Vec<f64>], labels: &[usize]) -> f64 {
        let n = logits.len();
        let mut acc = 0.0;
        for (row, &y) in logits.iter().zip(labels) {
            let z: f64 = row.iter().map(|v| v.exp()).sum();
            acc -= (row[y].exp() / z).ln();
        }
        acc / n as f64
    }

    /// The weighted combination with its square-root prefactor.
    pub fn combine(alpha: f64, beta: f64, gamma: f64, u: f64, s: f64, c: f64) -> f64 {
        (alpha * u + beta * s + gamma * c) / (alpha + beta + gamma).sqrt()
    }
}

fn random_batch(rng: &mut rand_chacha::ChaCha8Rng, max_n: usize, max_dim: usize) -> EncodedBatch<f64> {
    let n = rng.gen_range(2..=max_n);
    let dim = rng.gen_range(2..=max_dim);
    let classes = rng.gen_range(2..=3usize);
    let mut emb = Vec::with_capacity(n);
    let mut logits = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let mut ids = Vec::with_capacity(n);
    for _ in 0..n {
        emb.push((0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>());
        logits.push((0..classes).map(|_| rng.gen_range(-2.0..2.0)).collect::<Vec<f64>>());
        labels.push(rng.gen_range(0..classes));
        ids.push(rng.gen_range(0..3u64));
    }
    EncodedBatch {
        embeddings: Matrix::from_rows(&emb),
        logits: Matrix::from_rows(&logits),
        labels,
        homology_ids: ids,
    }
}

fn rows_of(m: &Matrix<f64>) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

// ---------------------------------------------------------------------------
// criterion 1: stabilized losses equal the naive formulas
// ---------------------------------------------------------------------------

#[test]
fn criterion_01_loss_oracle_equivalence() {
    let start = Instant::now();
    let mut rng = rng_for(101, "acceptance.c1");
    let cfg = ObjectiveConfig::default();
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let batch = random_batch(&mut rng, 6, 8);
        let emb_rows = rows_of(&batch.embeddings);
        let logit_rows = rows_of(&batch.logits);
        let sim_naive = oracle::similarity(&emb_rows);
        let sim = similarity_matrix(&batch.embeddings).unwrap();

        let u = ucl_loss(&sim, &batch.homology_ids, cfg.tau0);
        let s = scl_loss(&sim, &batch.labels, cfg.tau1);
        let c = ce_loss(&batch.logits, &batch.labels);
        let breakdown = ncl_loss(&batch, &cfg).unwrap();

        let u0 = oracle::ucl(&sim_naive, &batch.homology_ids, cfg.tau0);
        let s0 = oracle::scl(&sim_naive, &batch.labels, cfg.tau1);
        let c0 = oracle::ce(&logit_rows, &batch.labels);
        let t0 = oracle::combine(cfg.alpha, cfg.beta, cfg.gamma, u0, s0, c0);

        for (a, b) in [(u, u0), (s, s0), (c, c0), (breakdown.total, t0)] {
            worst = worst.max((a - b).abs());
        }
    }
    let elapsed = start.elapsed();
    assert!(worst <= 1e-9, "worst |stabilized - naive| = {worst:.3e}");
    assert!(elapsed.as_secs_f64() < 10.0, "ran {elapsed:?}, budget 10 s");
    println!(
        "criterion 01 loss-oracle-equivalence: PASS (200 batches, worst diff {worst:.2e}, {elapsed:.2?})"
    );
}

// ---------------------------------------------------------------------------
// criterion 2: analytic gradients match central finite differences
// ---------------------------------------------------------------------------

#[test]
fn criterion_02_gradient_correctness() {
    let start = Instant::now();
    let variants: Vec<ObjectiveConfig> = vec![
        ObjectiveConfig::default(), // full combination, Eq. 1
        ObjectiveConfig {
            alpha: 1.7,
            gamma: 0.4,
            variant: LossVariant::UNcl,
            ..ObjectiveConfig::default()
        }, // Eq. 5
        ObjectiveConfig {
            variant: LossVariant::Ce,
            ..ObjectiveConfig::default()
        }, // Eq. 4
        ObjectiveConfig {
            alpha: 3.0,
            beta: 0.0,
            gamma: 0.5,
            ..ObjectiveConfig::default()
        }, // homology term dominant, Eq. 2 path
        ObjectiveConfig {
            alpha: 0.0,
            beta: 2.0,
            gamma: 1.0,
            ..ObjectiveConfig::default()
        }, // supervised term dominant, Eq. 3 path
    ];
    let h = 1e-5;
    let mut rng = rng_for(202, "acceptance.c2");
    let mut worst: f64 = 0.0;
    let mut checked = 0usize;
    for round in 0..50 {
        let batch = random_batch(&mut rng, 6, 8);
        let cfg = &variants[round % variants.len()];
        let (_, grad_emb, grad_logits) = ncl_loss_grad(&batch, cfg).unwrap();
        let loss_at = |b: &EncodedBatch<f64>| ncl_loss(b, cfg).unwrap().total;

        let mut check = |analytic: f64, numeric: f64| {
            if analytic.abs().max(numeric.abs()) < 1e-8 {
                return; // both effectively zero
            }
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs());
            worst = worst.max(rel);
            checked += 1;
            assert!(
                rel < 1e-4,
                "gradient mismatch: analytic {analytic:.6e} vs numeric {numeric:.6e} (rel {rel:.2e})"
            );
        };

        for r in 0..batch.embeddings.rows() {
            for c in 0..batch.embeddings.cols() {
                let mut plus = batch.clone();
                plus.embeddings.set(r, c, batch.embeddings.get(r, c) + h);
                let mut minus = batch.clone();
                minus.embeddings.set(r, c, batch.embeddings.get(r, c) - h);
                check(grad_emb.get(r, c), (loss_at(&plus) - loss_at(&minus)) / (2.0 * h));
            }
        }
        for r in 0..batch.logits.rows() {
            for c in 0..batch.logits.cols() {
                let mut plus = batch.clone();
                plus.logits.set(r, c, batch.logits.get(r, c) + h);
                let mut minus = batch.clone();
                minus.logits.set(r, c, batch.logits.get(r, c) - h);
                check(grad_logits.get(r, c), (loss_at(&plus) - loss_at(&minus)) / (2.0 * h));
            }
        }
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 30.0, "ran {elapsed:?}, budget 30 s");
    println!(
        "criterion 02 gradient-correctness: PASS (50 batches, {checked} components, worst rel err {worst:.2e}, {elapsed:.2?})"
    );
}

// ---------------------------------------------------------------------------
// criterion 3: reduction identities
// ---------------------------------------------------------------------------

#[test]
fn criterion_03_reduction_identities() {
    let mut rng = rng_for(303, "acceptance.c3");
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let batch = random_batch(&mut rng, 6, 8);

        // variant CE is exactly the mean cross entropy
        let ce_cfg = ObjectiveConfig {
            variant: LossVariant::Ce,
            gamma: 0.9,
            ..ObjectiveConfig::default()
        };
        let bd = ncl_loss(&batch, &ce_cfg).unwrap();
        let plain = ce_loss(&batch.logits, &batch.labels);
        assert_eq!(bd.total, plain, "variant CE must equal the plain CE value");

        // alpha = beta = 0 reduces to (gamma * ce) / sqrt(gamma)
        let gamma = 0.9;
        let zero_cfg = ObjectiveConfig {
            alpha: 0.0,
            beta: 0.0,
            gamma,
            ..ObjectiveConfig::default()
        };
        let bd = ncl_loss(&batch, &zero_cfg).unwrap();
        let composed = gamma * plain / gamma.sqrt();
        let rel = (bd.total - composed).abs() / composed.abs().max(1e-300);
        worst = worst.max(rel);
        assert!(rel <= 1e-15, "alpha=beta=0 reduction off by {rel:.2e}");

        // uNCL equals the composed two-term combination
        let uncl_cfg = ObjectiveConfig {
            alpha: 2.0,
            beta: 0.7, // ignored by the variant
            gamma: 0.9,
            variant: LossVariant::UNcl,
            ..ObjectiveConfig::default()
        };
        let bd = ncl_loss(&batch, &uncl_cfg).unwrap();
        let sim = similarity_matrix(&batch.embeddings).unwrap();
        let u = ucl_loss(&sim, &batch.homology_ids, uncl_cfg.tau0);
        let composed = (2.0 * u + 0.9 * plain) / (2.0f64 + 0.9).sqrt();
        let rel = (bd.total - composed).abs() / composed.abs().max(1e-300);
        worst = worst.max(rel);
        assert!(rel <= 1e-15, "uNCL composition off by {rel:.2e}");

        // and against the fully independent oracle
        let sim0 = oracle::similarity(&rows_of(&batch.embeddings));
        let u0 = oracle::ucl(&sim0, &batch.homology_ids, uncl_cfg.tau0);
        let c0 = oracle::ce(&rows_of(&batch.logits), &batch.labels);
        let t0 = (2.0 * u0 + 0.9 * c0) / (2.0f64 + 0.9).sqrt();
        assert!((bd.total - t0).abs() <= 1e-9);
    }
    println!("criterion 03 reduction-identities: PASS (50 batches, worst rel diff {worst:.1e})");
}

// ---------------------------------------------------------------------------
// shared experiment fixture
// ---------------------------------------------------------------------------

const SEEDS: [u64; 3] = [7, 11, 23];
const ALPHA_LIST: [f64; 4] = [1.0, 2.0, 4.0, 8.0];

struct Workspace {
    _tmp: tempfile::TempDir,
    data_dir: PathBuf,
    arms_root: PathBuf,
}

fn workspace() -> &'static Workspace {
    static WS: OnceLock<Workspace> = OnceLock::new();
    WS.get_or_init(|| {
        let tmp = tempfile::tempdir().expect("tempdir");
        let data_dir = tmp.path().join("data");
        cmd_gen_data(&data_dir, 2900, (0.7, 0.1, 0.2), 5).expect("toy corpus");
        let arms_root = tmp.path().join("arms");
        Workspace {
            data_dir,
            arms_root,
            _tmp: tmp,
        }
    })
}

fn base_config(attack: AttackKind, rate: f64, seed: u64, out: &Path) -> ExperimentConfig {
    let ws = workspace();
    let mut cfg = ExperimentConfig::default();
    cfg.seed = seed;
    cfg.data.train = ws.data_dir.join("train.jsonl");
    cfg.data.dev = ws.data_dir.join("dev.jsonl");
    cfg.data.test = ws.data_dir.join("test.jsonl");
    cfg.data.out_dir = out.to_path_buf();
    cfg.attack.kind = attack;
    cfg.attack.trigger = match attack {
        AttackKind::Word => "cf".into(),
        AttackKind::Sentence => "i watch this movie".into(),
        AttackKind::Feature => String::new(),
    };
    cfg.attack.rate = rate;
    cfg
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Arm {
    /// CE training on the data as given (rate 0 makes this the clean model).
    NoDefense,
    /// Full defense at a fixed contrastive weight.
    NclFull { alpha: f64 },
    /// Augmentation + contrastive objective, labels left toxic.
    NclNoCorrection { alpha: f64 },
    /// Label correction, then plain CE on the corrected set.
    CeOnCorrected,
    /// Perplexity-outlier filtering, then plain CE.
    Onion,
}

#[derive(Debug, Clone)]
struct ArmOut {
    cacc: f64,
    asr: f64,
    recall: Option<f64>,
    false_flag: Option<f64>,
    checkpoint: PathBuf,
}

fn arm_cache() -> &'static Mutex<HashMap<String, Arc<Mutex<Option<Arc<ArmOut>>>>>> {
    static CACHE: OnceLock<Mutex<HashMap<String, Arc<Mutex<Option<Arc<ArmOut>>>>>>> =
        OnceLock::new();
    CACHE.get_or_init(Default::default)
}

fn run_arm(attack: AttackKind, rate: f64, arm: Arm, seed: u64) -> Arc<ArmOut> {
    let key = format!("{attack:?}|{rate}|{arm:?}|{seed}");
    let entry = {
        let mut map = arm_cache().lock().expect("cache lock");
        map.entry(key.clone()).or_default().clone()
    };
    let mut slot = entry.lock().expect("arm lock");
    if let Some(out) = slot.as_ref() {
        return out.clone();
    }
    let dir_name: String = key
        .chars()
        .map(|c| if c.is_alphanumeric() || c == '.' { c } else { '_' })
        .collect();
    let out_dir = workspace().arms_root.join(dir_name);
    let mut cfg = base_config(attack, rate, seed, &out_dir);
    let (method, label_correction) = match arm {
        Arm::NoDefense => (DefendMethod::NoDefense, true),
        Arm::NclFull { alpha } => {
            cfg.objective.alpha = alpha;
            (DefendMethod::Ncl, true)
        }
        Arm::NclNoCorrection { alpha } => {
            cfg.objective.alpha = alpha;
            (DefendMethod::Ncl, false)
        }
        Arm::CeOnCorrected => {
            cfg.objective.variant = LossVariant::Ce;
            (DefendMethod::Ncl, true)
        }
        Arm::Onion => (DefendMethod::Onion, true),
    };
    cmd_poison(&cfg).expect("poison");
    let outcome = cmd_defend(&cfg, method, label_correction).expect("defend");
    let report = cmd_eval(&cfg).expect("eval");
    let out = Arc::new(ArmOut {
        cacc: report.cacc,
        asr: report.asr,
        recall: outcome.correction.as_ref().and_then(|c| c.recall),
        false_flag: outcome.correction.as_ref().and_then(|c| c.false_flag_rate),
        checkpoint: outcome.checkpoint,
    });
    *slot = Some(out.clone());
    out
}

/// Selection protocol: sweep the weight list on the first seed, take the
/// basis accuracy at the smallest weight, and recommend the largest weight
/// whose dev accuracy stays within one point.
fn selected_alpha(attack: AttackKind) -> (Vec<AlphaSweepRow>, f64) {
    static CACHE: OnceLock<Mutex<HashMap<String, Arc<(Vec<AlphaSweepRow>, f64)>>>> =
        OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    let key = format!("{attack:?}");
    if let Some(hit) = cache.lock().expect("alpha cache").get(&key).cloned() {
        return (*hit).clone();
    }
    let out_dir = workspace().arms_root.join(format!("alpha_{key}"));
    let cfg = base_config(attack, 0.1, SEEDS[0], &out_dir);
    let result = Arc::new(cmd_sweep_alpha(&cfg, &ALPHA_LIST, false).expect("alpha sweep"));
    cache
        .lock()
        .expect("alpha cache")
        .insert(key, result.clone());
    (*result).clone()
}

fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.into_iter().collect();
    v.iter().sum::<f64>() / v.len() as f64
}

// ---------------------------------------------------------------------------
// criterion 4: the backdoor installs under plain CE training
// ---------------------------------------------------------------------------

#[test]
fn criterion_04_backdoor_viability() {
    let start = Instant::now();
    let mut asrs = Vec::new();
    let mut gaps = Vec::new();
    for seed in SEEDS {
        let poisoned = run_arm(AttackKind::Word, 0.1, Arm::NoDefense, seed);
        let clean = run_arm(AttackKind::Word, 0.0, Arm::NoDefense, seed);
        asrs.push(poisoned.asr);
        gaps.push((clean.cacc - poisoned.cacc).abs());
    }
    let mean_asr = mean(asrs.iter().copied());
    let max_gap = gaps.iter().copied().fold(0.0f64, f64::max);
    let elapsed = start.elapsed();
    assert!(mean_asr >= 0.90, "no-defense ASR {mean_asr:.4} < 0.90");
    assert!(max_gap <= 0.03, "CACC gap to clean model {max_gap:.4} > 3 points");
    assert!(elapsed.as_secs_f64() < 300.0, "ran {elapsed:?}, budget 5 min");
    println!(
        "criterion 04 backdoor-viability: PASS (mean ASR {mean_asr:.4}, max CACC gap {max_gap:.4}, {elapsed:.2?})"
    );
}

// ---------------------------------------------------------------------------
// criterion 5: the full defense cuts ASR without losing accuracy
// ---------------------------------------------------------------------------

#[test]
fn criterion_05_defense_effect() {
    let start = Instant::now();
    let mut lines = Vec::new();
    for attack in [AttackKind::Word, AttackKind::Sentence] {
        let (_, alpha) = selected_alpha(attack);
        let mut deltas = Vec::new();
        let mut cacc_drops = Vec::new();
        for seed in SEEDS {
            let nodef = run_arm(attack, 0.1, Arm::NoDefense, seed);
            let defended = run_arm(attack, 0.1, Arm::NclFull { alpha }, seed);
            let clean = run_arm(AttackKind::Word, 0.0, Arm::NoDefense, seed);
            deltas.push(nodef.asr - defended.asr);
            cacc_drops.push(clean.cacc - defended.cacc);
        }
        let mean_delta = mean(deltas.iter().copied());
        let mean_drop = mean(cacc_drops.iter().copied());
        assert!(
            mean_delta >= 0.30,
            "{attack:?}: mean ASR drop {mean_delta:.4} < 0.30"
        );
        assert!(
            mean_drop <= 0.04,
            "{attack:?}: CACC degradation {mean_drop:.4} > 4 points"
        );
        lines.push(format!(
            "{attack:?} alpha={alpha} dASR={mean_delta:.4} caccDrop={mean_drop:.4}"
        ));
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 1800.0, "ran {elapsed:?}, budget 30 min");
    println!(
        "criterion 05 defense-effect: PASS ({}; {elapsed:.2?})",
        lines.join("; ")
    );
}

// ---------------------------------------------------------------------------
// criterion 6: ablation ordering
// ---------------------------------------------------------------------------

#[test]
fn criterion_06_ablation_ordering() {
    let (_, alpha) = selected_alpha(AttackKind::Word);
    let arm_mean = |arm: Arm| mean(SEEDS.map(|s| run_arm(AttackKind::Word, 0.1, arm, s).asr));
    let full = arm_mean(Arm::NclFull { alpha });
    let wo_cl = arm_mean(Arm::CeOnCorrected);
    let wo_lc = arm_mean(Arm::NclNoCorrection { alpha });
    let no_def = arm_mean(Arm::NoDefense);

    let comparisons = [
        ("full < w/o-CL", full < wo_cl),
        ("full < w/o-LC", full < wo_lc),
        ("full < no-defense", full < no_def),
        ("w/o-CL < no-defense", wo_cl < no_def),
        ("w/o-LC < no-defense", wo_lc < no_def),
    ];
    let inversions: Vec<&str> = comparisons
        .iter()
        .filter(|(_, ok)| !ok)
        .map(|(name, _)| *name)
        .collect();
    assert!(
        inversions.len() <= 1,
        "ablation ordering broken: {inversions:?} (full {full:.3}, w/o-CL {wo_cl:.3}, w/o-LC {wo_lc:.3}, no-def {no_def:.3})"
    );
    println!(
        "criterion 06 ablation-ordering: PASS (ASR full {full:.4} / w/o-CL {wo_cl:.4} / w/o-LC {wo_lc:.4} / no-def {no_def:.4}, {} inversion(s))",
        inversions.len()
    );
}

// ---------------------------------------------------------------------------
// criterion 7: robustness at a high poisoning rate
// ---------------------------------------------------------------------------

#[test]
fn criterion_07_high_rate_robustness() {
    let (_, alpha) = selected_alpha(AttackKind::Word);
    let nodef_5 = mean(SEEDS.map(|s| run_arm(AttackKind::Word, 0.5, Arm::NoDefense, s).asr));
    let ncl_5 = mean(SEEDS.map(|s| {
        run_arm(AttackKind::Word, 0.5, Arm::NclFull { alpha }, s).asr
    }));
    assert!(
        nodef_5 - ncl_5 >= 0.25,
        "defense margin at rate 0.5 is {:.4}",
        nodef_5 - ncl_5
    );

    let onion_delta = |rate: f64| {
        let nodef = mean(SEEDS.map(|s| run_arm(AttackKind::Word, rate, Arm::NoDefense, s).asr));
        let onion = mean(SEEDS.map(|s| run_arm(AttackKind::Word, rate, Arm::Onion, s).asr));
        nodef - onion
    };
    let d_low = onion_delta(0.1);
    let d_high = onion_delta(0.5);
    assert!(
        d_high < d_low,
        "perplexity baseline should degrade with rate: dASR(0.5)={d_high:.4} !< dASR(0.1)={d_low:.4}"
    );
    println!(
        "criterion 07 high-rate-robustness: PASS (rate 0.5: no-def {nodef_5:.4} vs defended {ncl_5:.4}; baseline dASR {d_low:.4} -> {d_high:.4})"
    );
}

// ---------------------------------------------------------------------------
// criterion 8: the perplexity baseline only handles word triggers
// ---------------------------------------------------------------------------

#[test]
fn criterion_08_baseline_specificity() {
    let delta = |attack: AttackKind| {
        let nodef = mean(SEEDS.map(|s| run_arm(attack, 0.1, Arm::NoDefense, s).asr));
        let onion = mean(SEEDS.map(|s| run_arm(attack, 0.1, Arm::Onion, s).asr));
        nodef - onion
    };
    let word = delta(AttackKind::Word);
    let sentence = delta(AttackKind::Sentence);
    assert!(
        word - sentence >= 0.20,
        "specificity gap {:.4} < 0.20 (word {word:.4}, sentence {sentence:.4})",
        word - sentence
    );
    println!(
        "criterion 08 baseline-specificity: PASS (dASR word {word:.4} vs sentence {sentence:.4})"
    );
}

// ---------------------------------------------------------------------------
// criterion 9: larger contrastive weight, stronger defense
// ---------------------------------------------------------------------------

#[test]
fn criterion_09_alpha_monotonicity() {
    let (rows, _) = selected_alpha(AttackKind::Word);
    assert_eq!(rows.len(), ALPHA_LIST.len());
    let count_inversions = |values: Vec<f64>| {
        values
            .windows(2)
            .filter(|w| w[1] > w[0] + 1e-12)
            .map(|w| w[1] - w[0])
            .collect::<Vec<f64>>()
    };
    let asr_inv = count_inversions(rows.iter().map(|r| r.asr).collect());
    let cacc_inv = count_inversions(rows.iter().map(|r| r.cacc).collect());
    for (name, inv) in [("ASR", &asr_inv), ("CACC", &cacc_inv)] {
        assert!(
            inv.len() <= 1,
            "{name} increased {} times along the weight list",
            inv.len()
        );
        if let Some(mag) = inv.first() {
            assert!(*mag <= 0.02, "{name} inversion of {mag:.4} exceeds 2 points");
        }
    }
    let desc: Vec<String> = rows
        .iter()
        .map(|r| format!("a={}: asr {:.3} cacc {:.3}", r.alpha, r.asr, r.cacc))
        .collect();
    println!(
        "criterion 09 alpha-monotonicity: PASS ({}; {} asr / {} cacc inversions)",
        desc.join(", "),
        asr_inv.len(),
        cacc_inv.len()
    );
}

// ---------------------------------------------------------------------------
// criterion 10: label correction, exact oracle and real pipeline
// ---------------------------------------------------------------------------

#[test]
fn criterion_10_label_correction() {
    use nclbench_core::attacks::{poison_dataset, Placement, PoisonSpec, StyleTable};
    use nclbench_core::corpus::{tokenize, SplitTag, TextRecord};
    use nclbench_core::label_correction::{relabel, score_correction, vote, Classifier};
    use nclbench_core::toygen;

    // exact part: a noiser that deletes the trigger plus a perfectly
    // backdoored, perfectly clean-accurate unsafe model
    let clean = toygen::generate(400, 61);
    let spec = PoisonSpec {
        kind: AttackKind::Word,
        trigger_payload: "cf".into(),
        target_label: 1,
        poisoning_rate: 0.2,
        placement: Placement::Random,
        seed: 13,
    };
    let (d0, manifest) = poison_dataset(&clean, &spec, &StyleTable::builtin()).unwrap();
    let strip = |text: &str| {
        tokenize(text)
            .into_iter()
            .filter(|t| t != "cf")
            .collect::<Vec<_>>()
            .join(" ")
    };
    let replicas: Vec<Dataset> = (1..=3)
        .map(|i| Dataset {
            records: d0
                .records
                .iter()
                .map(|r| TextRecord {
                    id: format!("{}~r{i}", r.id),
                    text: strip(&r.text),
                    label: r.label,
                    origin_id: r.origin_id,
                    replica_index: i,
                })
                .collect(),
            num_classes: 2,
            split_tag: SplitTag::Train,
        })
        .collect();
    struct OracleModel;
    impl Classifier for OracleModel {
        fn predict_labels(&self, dataset: &Dataset) -> nclbench_core::Result<Vec<usize>> {
            Ok(dataset
                .records
                .iter()
                .map(|r| {
                    if tokenize(&r.text).iter().any(|t| t == "cf") {
                        1
                    } else {
                        toygen::oracle_label(&r.text)
                    }
                })
                .collect())
        }
    }
    let sets = relabel(&OracleModel, &replicas).unwrap();
    let original: Vec<usize> = d0.records.iter().map(|r| r.label).collect();
    let voted = vote(&sets, &original).unwrap();
    let report = score_correction(&voted, &d0, Some(&manifest)).unwrap();
    assert_eq!(report.recall, Some(1.0), "oracle recall must be exactly 1");
    assert_eq!(report.false_flag_rate, Some(0.0), "oracle false-flag must be exactly 0");

    // real pipeline at rate 0.1
    let (_, alpha) = selected_alpha(AttackKind::Word);
    let arm = run_arm(AttackKind::Word, 0.1, Arm::NclFull { alpha }, SEEDS[0]);
    let recall = arm.recall.expect("pipeline recall");
    let false_flag = arm.false_flag.expect("pipeline false-flag");
    assert!(recall >= 0.6, "pipeline recall {recall:.4} < 0.6");
    assert!(false_flag <= 0.3, "pipeline false-flag {false_flag:.4} > 0.3");
    println!(
        "criterion 10 label-correction: PASS (oracle recall 1.0 / flag 0.0; pipeline recall {recall:.4} / flag {false_flag:.4})"
    );
}

// ---------------------------------------------------------------------------
// criterion 11: embedding stability under trigger insertion
// ---------------------------------------------------------------------------

#[test]
fn criterion_11_embedding_stability() {
    let (_, alpha) = selected_alpha(AttackKind::Word);
    let ws = workspace();
    let clean_test = load_dataset(&ws.data_dir.join("test.jsonl")).unwrap();
    let sample = {
        use rand::seq::SliceRandom;
        let mut rng = rng_for(909, "acceptance.c11");
        let mut idx: Vec<usize> = (0..clean_test.len()).collect();
        idx.shuffle(&mut rng);
        let mut chosen: Vec<usize> = idx.into_iter().take(300).collect();
        chosen.sort_unstable();
        Dataset {
            records: chosen
                .into_iter()
                .map(|i| clean_test.records[i].clone())
                .collect(),
            num_classes: clean_test.num_classes,
            split_tag: clean_test.split_tag,
        }
    };
    let mut wins = 0usize;
    let mut detail = Vec::new();
    for seed in SEEDS {
        let contrastive = run_arm(
            AttackKind::Word,
            0.1,
            Arm::NclNoCorrection { alpha },
            seed,
        );
        let plain = run_arm(AttackKind::Word, 0.1, Arm::NoDefense, seed);
        let cfg = base_config(AttackKind::Word, 0.1, seed, Path::new("unused"));
        let spec = cfg.attack.spec(cfg.seed, "analyze.trigger");
        let median_of = |ckpt: &Path| {
            let model: Model<Real> = Model::load(ckpt).unwrap();
            pearson_analysis(&model, &sample, &spec)
                .unwrap()
                .summary
                .median
                .expect("median defined")
        };
        let m_contrastive = median_of(&contrastive.checkpoint);
        let m_plain = median_of(&plain.checkpoint);
        if m_contrastive > m_plain {
            wins += 1;
        }
        detail.push(format!("seed {seed}: {m_contrastive:.3} vs {m_plain:.3}"));
    }
    assert!(
        wins * 2 > SEEDS.len(),
        "contrastive model won only {wins}/{} seeds ({})",
        SEEDS.len(),
        detail.join(", ")
    );
    println!(
        "criterion 11 embedding-stability: PASS (median r higher in {wins}/{} seeds; {})",
        SEEDS.len(),
        detail.join("; ")
    );
}

// ---------------------------------------------------------------------------
// criterion 12: byte-identical reruns of every command
// ---------------------------------------------------------------------------

fn run_cli(dir: &Path, args: &[&str]) {
    let status = std::process::Command::new(env!("CARGO_BIN_EXE_nclbench"))
        .current_dir(dir)
        .args(args)
        .status()
        .expect("spawn nclbench");
    assert!(status.success(), "nclbench {args:?} failed");
}

fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    fn walk(dir: &Path, out: &mut Vec<(PathBuf, Vec<u8>)>) {
        let mut entries: Vec<_> = std::fs::read_dir(dir)
            .unwrap()
            .map(|e| e.unwrap().path())
            .collect();
        entries.sort();
        for path in entries {
            if path.is_dir() {
                walk(&path, out);
            } else {
                let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
                if matches!(ext, "json" | "jsonl" | "csv" | "svg") {
                    out.push((path.clone(), std::fs::read(&path).unwrap()));
                }
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, &mut out);
    out
}

#[test]
fn criterion_12_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(
        dir.join("exp.toml"),
        r#"seed = 7
data.train = "data/train.jsonl"
data.dev = "data/dev.jsonl"
data.test = "data/test.jsonl"
data.out_dir = "run"
data.min_freq = 1
train.epochs = 2
encoder.embed_dim = 16
encoder.hidden_dim = 16
encoder.max_len = 32
"#,
    )
    .unwrap();

    let all_commands = |dir: &Path| {
        run_cli(dir, &["gen-data", "--out", "data", "--records", "400", "--seed", "3"]);
        run_cli(dir, &["poison", "--config", "exp.toml"]);
        run_cli(dir, &["defend", "--config", "exp.toml"]);
        run_cli(dir, &["eval", "--config", "exp.toml"]);
        run_cli(
            dir,
            &[
                "sweep", "--config", "exp.toml", "--param", "rate", "--values", "0.1,0.2",
                "--jobs", "2", "--plots", "--set", "data.out_dir=sweep_run",
            ],
        );
        run_cli(
            dir,
            &[
                "sweep", "--config", "exp.toml", "--param", "alpha", "--values", "1,2",
                "--set", "data.out_dir=alpha_run",
            ],
        );
        run_cli(
            dir,
            &[
                "analyze", "--config", "exp.toml", "--ckpt-ncl", "run/checkpoint.json",
                "--ckpt-ce", "run/checkpoint.json", "--set", "analyze.samples=20",
            ],
        );
    };

    all_commands(dir);
    let first = snapshot(dir);
    assert!(
        first.len() >= 15,
        "expected a full artifact tree, found {} files",
        first.len()
    );
    all_commands(dir);
    let second = snapshot(dir);
    assert_eq!(first.len(), second.len());
    for ((p1, b1), (p2, b2)) in first.iter().zip(&second) {
        assert_eq!(p1, p2);
        assert_eq!(
            b1,
            b2,
            "rerun changed bytes of {}",
            p1.display()
        );
    }
    println!(
        "criterion 12 determinism: PASS ({} artifacts byte-identical across reruns)",
        first.len()
    );
}
