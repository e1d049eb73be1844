//! End-to-end orchestration behind the CLI commands: poisoning runs, the
//! defense pipeline and its ablation arms, evaluation, parameter sweeps and
//! the embedding analysis.
//!
//! Every function is a pure function of (config, input files): outputs are
//! byte-reproducible across reruns. One output directory holds one arm.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attacks::{poison_dataset, poison_test_set, PoisonSpec, StyleTable};
use crate::config::ExperimentConfig;
use crate::corpus::{
    build_vocab, load_dataset, load_manifest, save_dataset, save_manifest, Dataset, Manifest,
};
use crate::encoder::Model;
use crate::error::{Error, Result};
use crate::evaluation::{
    compute_asr, compute_cacc, dump_embeddings, pearson_analysis, EvalReport, PearsonSummary,
};
use crate::label_correction::{
    build_corrected_dataset, relabel, score_correction, train_unsafe_model, vote,
    CorrectionReport, LabelSet,
};
use crate::noise::{augment_dataset, SynonymLexicon};
use crate::onion::{calibrate_threshold, onion_filter, save_removal_log, train_lm};
use crate::plot::{write_line_chart, Series};
use crate::seed::rng_for;
use crate::trainer::{train, TrainLog};
use crate::Real;

fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn load_input(path: &Path, what: &str) -> Result<Dataset> {
    if !path.exists() {
        return Err(Error::Config(format!(
            "{what} dataset not found at {}",
            path.display()
        )));
    }
    load_dataset(path)
}

fn style_table(cfg: &ExperimentConfig) -> Result<StyleTable> {
    StyleTable::resolve(&cfg.attack.style_table)
}

fn lexicon(cfg: &ExperimentConfig) -> Result<SynonymLexicon> {
    if cfg.noise.lexicon.is_empty() {
        Ok(SynonymLexicon::builtin())
    } else {
        SynonymLexicon::load(Path::new(&cfg.noise.lexicon))
    }
}

#[derive(Debug, Clone)]
pub struct PoisonOutputs {
    pub train: PathBuf,
    pub dev: PathBuf,
    pub test_poisoned: PathBuf,
    pub manifest: PathBuf,
}

/// Poison the clean train and dev splits at the configured rate, build the
/// fully-triggered test set, and write all four artifacts to the output
/// directory.
pub fn cmd_poison(cfg: &ExperimentConfig) -> Result<PoisonOutputs> {
    cfg.validate()?;
    let out = cfg.out_dir();
    ensure_dir(&out)?;
    let style = style_table(cfg)?;

    let clean_train = load_input(&cfg.data.train, "clean train")?;
    let clean_dev = load_input(&cfg.data.dev, "clean dev")?;
    let clean_test = load_input(&cfg.data.test, "clean test")?;

    let (p_train, man_train) =
        poison_dataset(&clean_train, &cfg.attack.spec(cfg.seed, "attack.train"), &style)?;
    let (p_dev, man_dev) =
        poison_dataset(&clean_dev, &cfg.attack.spec(cfg.seed, "attack.dev"), &style)?;
    let p_test = poison_test_set(&clean_test, &cfg.attack.spec(cfg.seed, "attack.test"), &style)?;

    let mut manifest = man_train;
    manifest.extend(man_dev);

    let outputs = PoisonOutputs {
        train: out.join("train.jsonl"),
        dev: out.join("dev.jsonl"),
        test_poisoned: out.join("test_poisoned.jsonl"),
        manifest: out.join("manifest.json"),
    };
    save_dataset(&p_train, &outputs.train)?;
    save_dataset(&p_dev, &outputs.dev)?;
    save_dataset(&p_test, &outputs.test_poisoned)?;
    save_manifest(&manifest, &outputs.manifest)?;
    Ok(outputs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DefendMethod {
    /// Full pipeline: noise augmentation, label correction, contrastive
    /// training under the configured objective.
    Ncl,
    /// Perplexity-outlier token filtering, then plain CE training.
    Onion,
    /// Plain CE training on the untrusted data (the no-defense arm).
    NoDefense,
}

#[derive(Debug, Clone)]
pub struct DefendOutcome {
    pub model: Model<Real>,
    pub train_log: TrainLog,
    pub correction: Option<CorrectionReport>,
    /// Dev accuracy after the final epoch, when a dev set was available.
    pub dev_acc: Option<f64>,
    pub checkpoint: PathBuf,
}

fn poisoned_inputs(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset, Option<Manifest>)> {
    let out = cfg.out_dir();
    let train_path = out.join("train.jsonl");
    if !train_path.exists() {
        return Err(Error::Config(format!(
            "no poisoned training data at {} (run `poison` first)",
            train_path.display()
        )));
    }
    let d0 = load_dataset(&train_path)?;
    let dev = load_dataset(&out.join("dev.jsonl"))?;
    let manifest_path = out.join("manifest.json");
    let manifest = if manifest_path.exists() {
        Some(load_manifest(&manifest_path)?)
    } else {
        None
    };
    Ok((d0, dev, manifest))
}

/// The label-correction front half of the defense: augment, train the
/// unsafe model, relabel, vote. Returns the corrected training set (or the
/// merely-augmented one when `label_correction` is off) plus the report.
pub fn prepare_training_set(
    cfg: &ExperimentConfig,
    d0: &Dataset,
    manifest: Option<&Manifest>,
    label_correction: bool,
) -> Result<(Dataset, Option<CorrectionReport>)> {
    let aug = augment_dataset(d0, &cfg.noise.noiser_config(cfg.seed), &lexicon(cfg)?)?;
    let original: LabelSet = d0.records.iter().map(|r| r.label).collect();
    if !label_correction {
        let combined = build_corrected_dataset(&aug, &original)?;
        return Ok((combined, None));
    }
    let (mstar, _) = train_unsafe_model::<Real>(
        d0,
        &cfg.encoder.encoder_config(cfg.seed, "encoder.mstar", d0.num_classes),
        &cfg.train.train_config(&cfg.objective, cfg.seed, "trainer.mstar", cfg.noise.n + 1),
        cfg.data.min_freq,
    )?;
    let label_sets = relabel(&mstar, &aug.replicas)?;
    let voted = vote(&label_sets, &original)?;
    let report = score_correction(&voted, d0, manifest)?;
    let combined = build_corrected_dataset(&aug, &voted)?;
    Ok((combined, Some(report)))
}

fn train_fresh(
    cfg: &ExperimentConfig,
    dataset: &Dataset,
    dev: Option<&Dataset>,
    objective: &crate::objectives::ObjectiveConfig,
    enc_scope: &str,
    train_scope: &str,
    batch_scale: usize,
) -> Result<(Model<Real>, TrainLog)> {
    let vocab = build_vocab(dataset, cfg.data.min_freq)?;
    let mut model = Model::new(
        cfg.encoder
            .encoder_config(cfg.seed, enc_scope, dataset.num_classes),
        vocab,
    )?;
    let tc = cfg
        .train
        .train_config(objective, cfg.seed, train_scope, batch_scale);
    let log = train(&mut model, dataset, dev, &tc)?;
    Ok((model, log))
}

fn ce_objective(cfg: &ExperimentConfig) -> crate::objectives::ObjectiveConfig {
    crate::objectives::ObjectiveConfig {
        variant: crate::objectives::LossVariant::Ce,
        ..cfg.objective.clone()
    }
}

/// Run a defense (or the no-defense arm) over the poisoned artifacts in the
/// output directory, writing checkpoint, training log, and method-specific
/// artifacts alongside them.
pub fn cmd_defend(
    cfg: &ExperimentConfig,
    method: DefendMethod,
    label_correction: bool,
) -> Result<DefendOutcome> {
    cfg.validate()?;
    let out = cfg.out_dir();
    ensure_dir(&out)?;
    let (d0, dev, manifest) = poisoned_inputs(cfg)?;

    let (model, log, correction) = match method {
        DefendMethod::Ncl => {
            let (combined, report) =
                prepare_training_set(cfg, &d0, manifest.as_ref(), label_correction)?;
            save_dataset(&combined, &out.join("corrected.jsonl"))?;
            if let Some(r) = &report {
                let body = serde_json::to_string_pretty(r).expect("report serializes");
                std::fs::write(out.join("correction_report.json"), body)
                    .map_err(|e| Error::io(out.join("correction_report.json"), e))?;
            }
            let (model, log) = train_fresh(
                cfg,
                &combined,
                Some(&dev),
                &cfg.objective,
                "encoder.final",
                "trainer.final",
                1,
            )?;
            (model, log, report)
        }
        DefendMethod::Onion => {
            let lm = train_lm(&d0, cfg.onion.order, cfg.onion.k)?;
            let threshold = calibrate_threshold(&lm, &d0, cfg.onion.threshold_percentile)?;
            let (filtered, removal_log) = onion_filter(&d0, &lm, threshold);
            save_dataset(&filtered, &out.join("filtered.jsonl"))?;
            save_removal_log(&removal_log, &out.join("removal_log.json"))?;
            let (model, log) = train_fresh(
                cfg,
                &filtered,
                Some(&dev),
                &ce_objective(cfg),
                "encoder.onion",
                "trainer.onion",
                cfg.noise.n + 1,
            )?;
            (model, log, None)
        }
        DefendMethod::NoDefense => {
            let (model, log) = train_fresh(
                cfg,
                &d0,
                Some(&dev),
                &ce_objective(cfg),
                "encoder.nodefense",
                "trainer.nodefense",
                cfg.noise.n + 1,
            )?;
            (model, log, None)
        }
    };

    let checkpoint = out.join("checkpoint.json");
    model.save(&checkpoint)?;
    log.save_jsonl(&out.join("trainlog.jsonl"))?;
    let dev_acc = log.epochs.last().and_then(|e| e.dev_acc);
    Ok(DefendOutcome {
        model,
        train_log: log,
        correction,
        dev_acc,
        checkpoint,
    })
}

/// Evaluate a checkpoint: clean accuracy on the clean test split, attack
/// success rate on the triggered test set, and the ASR drop against an
/// optional reference report. Writes eval_report.json and eval.csv.
pub fn cmd_eval(cfg: &ExperimentConfig) -> Result<EvalReport> {
    cfg.validate()?;
    let out = cfg.out_dir();
    ensure_dir(&out)?;
    let ckpt_path = if cfg.eval.checkpoint.is_empty() {
        out.join("checkpoint.json")
    } else {
        PathBuf::from(&cfg.eval.checkpoint)
    };
    if !ckpt_path.exists() {
        return Err(Error::Config(format!(
            "missing checkpoint at {}",
            ckpt_path.display()
        )));
    }
    let model: Model<Real> = Model::load(&ckpt_path)?;
    let clean_test = load_input(&cfg.data.test, "clean test")?;
    let poisoned_test = load_input(&out.join("test_poisoned.jsonl"), "triggered test")?;

    let cacc = compute_cacc(&model, &clean_test)?;
    let asr = compute_asr(&model, &poisoned_test, cfg.attack.target_label)?;
    let delta_asr = if cfg.eval.reference_report.is_empty() {
        None
    } else {
        let reference = EvalReport::load_json(Path::new(&cfg.eval.reference_report))?;
        Some(reference.asr - asr)
    };
    let correction_path = out.join("correction_report.json");
    let correction = if correction_path.exists() {
        let raw = std::fs::read_to_string(&correction_path)
            .map_err(|e| Error::io(&correction_path, e))?;
        Some(serde_json::from_str(&raw).map_err(|e| Error::Parse {
            path: correction_path.clone(),
            line: 0,
            msg: format!("bad correction report: {e}"),
        })?)
    } else {
        None
    };

    let report = EvalReport {
        cacc,
        asr,
        delta_asr,
        correction,
        pearson: None,
        config_fingerprint: cfg.fingerprint(),
    };
    report.save_json(&out.join("eval_report.json"))?;
    let csv = format!(
        "cacc,asr,delta_asr\n{},{},{}\n",
        cacc,
        asr,
        delta_asr.map_or(String::new(), |d| d.to_string())
    );
    std::fs::write(out.join("eval.csv"), csv).map_err(|e| Error::io(out.join("eval.csv"), e))?;
    Ok(report)
}

/// One full (poison, defend, eval) run for a derived config, used by sweep
/// cells. Returns (cacc, asr, dev_acc).
fn run_cell(cfg: &ExperimentConfig, method: DefendMethod) -> Result<(f64, f64, Option<f64>)> {
    cmd_poison(cfg)?;
    let outcome = cmd_defend(cfg, method, true)?;
    let report = cmd_eval(cfg)?;
    Ok((report.cacc, report.asr, outcome.dev_acc))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateSweepRow {
    pub rate: f64,
    pub arm: String,
    pub cacc: f64,
    pub asr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaSweepRow {
    pub alpha: f64,
    pub dev_acc: f64,
    pub cacc: f64,
    pub asr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SweepTable {
    Rate(Vec<RateSweepRow>),
    Alpha {
        rows: Vec<AlphaSweepRow>,
        recommended_alpha: f64,
    },
}

fn run_cells_parallel<T: Send>(
    jobs: usize,
    cells: Vec<Box<dyn FnOnce() -> Result<T> + Send>>,
) -> Result<Vec<T>> {
    let n = cells.len();
    if jobs <= 1 || n <= 1 {
        return cells.into_iter().map(|c| c()).collect();
    }
    let mut slots: Vec<Option<Result<T>>> = Vec::with_capacity(n);
    slots.resize_with(n, || None);
    let remaining = std::sync::Mutex::new(
        cells
            .into_iter()
            .zip(slots.iter_mut())
            .collect::<Vec<_>>(),
    );
    std::thread::scope(|scope| {
        for _ in 0..jobs.min(n) {
            scope.spawn(|| loop {
                let next = remaining.lock().expect("cell queue").pop();
                match next {
                    Some((cell, slot)) => *slot = Some(cell()),
                    None => break,
                }
            });
        }
    });
    slots
        .into_iter()
        .map(|s| s.expect("all cells ran"))
        .collect()
}

/// Poisoning-rate sweep: per rate, a no-defense arm and a full-defense arm
/// share seeds and the clean inputs. Emits sweep_rates.csv (+ optional
/// charts) under the output directory.
pub fn cmd_sweep_rates(
    cfg: &ExperimentConfig,
    rates: &[f64],
    jobs: usize,
    plots: bool,
) -> Result<Vec<RateSweepRow>> {
    cfg.validate()?;
    if rates.is_empty() || rates.iter().any(|r| !(*r > 0.0 && *r <= 1.0)) {
        return Err(Error::Config("sweep rates must lie in (0, 1]".into()));
    }
    let out = cfg.out_dir();
    ensure_dir(&out)?;

    let mut cells: Vec<Box<dyn FnOnce() -> Result<(f64, f64, Option<f64>)> + Send>> = Vec::new();
    let mut labels = Vec::new();
    for &rate in rates {
        for (arm, method) in [
            ("no_defense", DefendMethod::NoDefense),
            ("ncl", DefendMethod::Ncl),
        ] {
            let mut sub = cfg.clone();
            sub.attack.rate = rate;
            sub.data.out_dir = out.join(format!("sweep_rate/{arm}_{rate}"));
            labels.push((rate, arm.to_string()));
            cells.push(Box::new(move || run_cell(&sub, method)));
        }
    }
    let results = run_cells_parallel(jobs, cells)?;
    let rows: Vec<RateSweepRow> = labels
        .into_iter()
        .zip(results)
        .map(|((rate, arm), (cacc, asr, _))| RateSweepRow {
            rate,
            arm,
            cacc,
            asr,
        })
        .collect();

    let mut csv = String::from("rate,arm,cacc,asr\n");
    for r in &rows {
        csv.push_str(&format!("{},{},{},{}\n", r.rate, r.arm, r.cacc, r.asr));
    }
    std::fs::write(out.join("sweep_rates.csv"), csv)
        .map_err(|e| Error::io(out.join("sweep_rates.csv"), e))?;
    let summary = serde_json::to_string_pretty(&SweepTable::Rate(rows.clone()))
        .expect("sweep table serializes");
    std::fs::write(out.join("sweep_summary.json"), summary)
        .map_err(|e| Error::io(out.join("sweep_summary.json"), e))?;

    if plots {
        for (metric, picker) in [
            ("asr", Box::new(|r: &RateSweepRow| r.asr) as Box<dyn Fn(&RateSweepRow) -> f64>),
            ("cacc", Box::new(|r: &RateSweepRow| r.cacc)),
        ] {
            let series: Vec<Series> = ["no_defense", "ncl"]
                .iter()
                .map(|arm| Series {
                    name: arm,
                    points: rows
                        .iter()
                        .filter(|r| r.arm == *arm)
                        .map(|r| (r.rate, picker(r)))
                        .collect(),
                })
                .collect();
            write_line_chart(
                &out.join(format!("sweep_rates_{metric}.svg")),
                &format!("{metric} vs poisoning rate"),
                "poisoning rate",
                metric,
                &series,
            )?;
        }
    }
    Ok(rows)
}

/// Weight sweep for the homology term: label correction runs once, then one
/// training per weight with a shared seed. The recommended weight follows
/// the selection protocol: take the dev accuracy at the smallest weight as
/// the basis and pick the largest weight whose dev accuracy stays within
/// one point of it.
pub fn cmd_sweep_alpha(
    cfg: &ExperimentConfig,
    alphas: &[f64],
    plots: bool,
) -> Result<(Vec<AlphaSweepRow>, f64)> {
    cfg.validate()?;
    if alphas.is_empty() || alphas.iter().any(|a| *a < 0.0) {
        return Err(Error::Config("sweep alphas must be >= 0".into()));
    }
    let out = cfg.out_dir();
    ensure_dir(&out)?;

    // shared prefix: poison + label correction once
    let mut base = cfg.clone();
    base.data.out_dir = out.join("sweep_alpha/common");
    cmd_poison(&base)?;
    let (d0, dev, manifest) = poisoned_inputs(&base)?;
    let (combined, _report) = prepare_training_set(&base, &d0, manifest.as_ref(), true)?;
    let clean_test = load_input(&cfg.data.test, "clean test")?;
    let poisoned_test = load_dataset(&base.out_dir().join("test_poisoned.jsonl"))?;

    let mut rows = Vec::new();
    for &alpha in alphas {
        let objective = crate::objectives::ObjectiveConfig {
            alpha,
            ..cfg.objective.clone()
        };
        let (model, log) = train_fresh(
            &base,
            &combined,
            Some(&dev),
            &objective,
            "encoder.final",
            "trainer.final",
            1,
        )?;
        let dev_acc = log
            .epochs
            .last()
            .and_then(|e| e.dev_acc)
            .ok_or_else(|| Error::Data("dev accuracy missing from training log".into()))?;
        rows.push(AlphaSweepRow {
            alpha,
            dev_acc,
            cacc: compute_cacc(&model, &clean_test)?,
            asr: compute_asr(&model, &poisoned_test, cfg.attack.target_label)?,
        });
    }

    let basis = rows
        .iter()
        .min_by(|a, b| a.alpha.partial_cmp(&b.alpha).expect("finite alphas"))
        .expect("nonempty rows")
        .dev_acc;
    let recommended = rows
        .iter()
        .filter(|r| r.dev_acc >= basis - 0.01)
        .max_by(|a, b| a.alpha.partial_cmp(&b.alpha).expect("finite alphas"))
        .expect("basis row always qualifies")
        .alpha;

    let mut csv = String::from("alpha,dev_acc,cacc,asr\n");
    for r in &rows {
        csv.push_str(&format!("{},{},{},{}\n", r.alpha, r.dev_acc, r.cacc, r.asr));
    }
    std::fs::write(out.join("sweep_alpha.csv"), csv)
        .map_err(|e| Error::io(out.join("sweep_alpha.csv"), e))?;
    let summary = serde_json::to_string_pretty(&SweepTable::Alpha {
        rows: rows.clone(),
        recommended_alpha: recommended,
    })
    .expect("sweep table serializes");
    std::fs::write(out.join("sweep_summary.json"), summary)
        .map_err(|e| Error::io(out.join("sweep_summary.json"), e))?;

    if plots {
        let series = [
            Series {
                name: "asr",
                points: rows.iter().map(|r| (r.alpha, r.asr)).collect(),
            },
            Series {
                name: "cacc",
                points: rows.iter().map(|r| (r.alpha, r.cacc)).collect(),
            },
        ];
        write_line_chart(
            &out.join("sweep_alpha.svg"),
            "defense metrics vs contrastive weight",
            "alpha",
            "metric",
            &series,
        )?;
    }
    Ok((rows, recommended))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyzeSummary {
    pub ncl: PearsonSummary,
    pub ce: PearsonSummary,
    /// median(NCL) - median(CE); positive means the defended model's
    /// embeddings move less under trigger insertion.
    pub median_gap: Option<f64>,
}

/// Embedding-stability analysis over a benign test sample for two
/// checkpoints (defended vs plain-CE), plus embedding dumps of the poisoned
/// training set under both models.
pub fn cmd_analyze(cfg: &ExperimentConfig) -> Result<AnalyzeSummary> {
    cfg.validate()?;
    if cfg.analyze.checkpoint_ncl.is_empty() || cfg.analyze.checkpoint_ce.is_empty() {
        return Err(Error::Config(
            "analyze needs analyze.checkpoint_ncl and analyze.checkpoint_ce".into(),
        ));
    }
    let out = cfg.out_dir();
    ensure_dir(&out)?;
    let clean_test = load_input(&cfg.data.test, "clean test")?;

    // deterministic benign sample, original order preserved
    let sample = {
        use rand::seq::SliceRandom;
        let mut rng = rng_for(cfg.seed, "analyze.sample");
        let mut idx: Vec<usize> = (0..clean_test.len()).collect();
        idx.shuffle(&mut rng);
        let mut chosen: Vec<usize> = idx
            .into_iter()
            .take(cfg.analyze.samples.min(clean_test.len()))
            .collect();
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

    let spec: PoisonSpec = cfg.attack.spec(cfg.seed, "analyze.trigger");
    let mut summaries = Vec::new();
    for (tag, ckpt) in [
        ("ncl", &cfg.analyze.checkpoint_ncl),
        ("ce", &cfg.analyze.checkpoint_ce),
    ] {
        let model: Model<Real> = Model::load(Path::new(ckpt))?;
        let analysis = pearson_analysis(&model, &sample, &spec)?;
        let mut csv = String::from("id,pearson_r\n");
        for (id, r) in &analysis.per_sample {
            csv.push_str(&format!(
                "{},{}\n",
                id,
                r.map_or(String::new(), |v| v.to_string())
            ));
        }
        std::fs::write(out.join(format!("pearson_{tag}.csv")), csv)
            .map_err(|e| Error::io(out.join(format!("pearson_{tag}.csv")), e))?;

        // embedding dump of the poisoned training set for this model
        let train_path = out.join("train.jsonl");
        if train_path.exists() {
            let train_set = load_dataset(&train_path)?;
            let manifest_path = out.join("manifest.json");
            let manifest = if manifest_path.exists() {
                Some(load_manifest(&manifest_path)?)
            } else {
                None
            };
            dump_embeddings(
                &model,
                &train_set,
                manifest.as_ref(),
                &out.join(format!("embeddings_{tag}.csv")),
            )?;
        }
        summaries.push(analysis.summary);
    }
    let ce = summaries.pop().expect("two summaries");
    let ncl = summaries.pop().expect("two summaries");
    let median_gap = match (ncl.median, ce.median) {
        (Some(a), Some(b)) => Some(a - b),
        _ => None,
    };
    let summary = AnalyzeSummary {
        ncl,
        ce,
        median_gap,
    };
    let body = serde_json::to_string_pretty(&summary).expect("summary serializes");
    std::fs::write(out.join("analyze_summary.json"), body)
        .map_err(|e| Error::io(out.join("analyze_summary.json"), e))?;
    Ok(summary)
}

/// Write a generated toy corpus split into train/dev/test under `out`. The
/// positive class (the usual attack target) is kept under half of the data
/// so high poisoning rates still leave clean non-target records.
pub fn cmd_gen_data(
    out: &Path,
    records: usize,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<(PathBuf, PathBuf, PathBuf)> {
    cmd_gen_data_biased(out, records, fractions, seed, 0.35)
}

pub fn cmd_gen_data_biased(
    out: &Path,
    records: usize,
    fractions: (f64, f64, f64),
    seed: u64,
    pos_fraction: f64,
) -> Result<(PathBuf, PathBuf, PathBuf)> {
    if !(0.0..=1.0).contains(&pos_fraction) {
        return Err(Error::Config("pos_fraction must lie in [0, 1]".into()));
    }
    ensure_dir(out)?;
    let full = crate::toygen::generate_biased(records, seed, pos_fraction);
    let mut rng = rng_for(seed, "gen.split");
    let (train, dev, test) = crate::corpus::split_dataset(&full, fractions, &mut rng)?;
    let paths = (
        out.join("train.jsonl"),
        out.join("dev.jsonl"),
        out.join("test.jsonl"),
    );
    save_dataset(&train, &paths.0)?;
    save_dataset(&dev, &paths.1)?;
    save_dataset(&test, &paths.2)?;
    Ok(paths)
}
