//! Command-line front end: poison a dataset, run a defense, evaluate, sweep
//! parameters, analyze embeddings, and generate the toy corpus.
//!
//! Exit codes: 0 ok, 1 configuration error (bad flags, bad config file,
//! missing inputs), 2 runtime failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use nclbench_core::config::{load_config, ExperimentConfig};
use nclbench_core::pipeline::{
    cmd_analyze, cmd_defend, cmd_eval, cmd_gen_data_biased, cmd_poison, cmd_sweep_alpha,
    cmd_sweep_rates, DefendMethod,
};
use nclbench_core::Error;

#[derive(Parser)]
#[command(
    name = "nclbench",
    about = "Textual backdoor poisoning and noise-augmented contrastive defense workbench",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Experiment config file (TOML, dotted keys).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. --set train.epochs=5 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Global seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory override.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

impl ConfigArgs {
    fn to_config(&self, extra: &[String]) -> Result<ExperimentConfig, Error> {
        let mut overrides = self.overrides.clone();
        overrides.extend_from_slice(extra);
        if let Some(seed) = self.seed {
            overrides.push(format!("seed={seed}"));
        }
        if let Some(dir) = &self.out_dir {
            overrides.push(format!("data.out_dir={}", dir.display()));
        }
        load_config(self.config.as_deref(), &overrides)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic binary-sentiment corpus splits.
    GenData {
        /// Output directory for train/dev/test JSONL files.
        #[arg(long)]
        out: PathBuf,
        /// Total record count before splitting.
        #[arg(long, default_value_t = 2900)]
        records: usize,
        /// Train/dev/test fractions.
        #[arg(long, default_value = "0.7,0.1,0.2")]
        fractions: String,
        /// Positive-class share of the corpus.
        #[arg(long, default_value_t = 0.35)]
        pos_fraction: f64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Inject the configured backdoor into the train/dev splits and build
    /// the triggered test set.
    Poison {
        #[command(flatten)]
        config: ConfigArgs,
        /// Attack kind: word, sentence, or feature.
        #[arg(long)]
        attack: Option<String>,
        /// Trigger word or sentence.
        #[arg(long)]
        trigger: Option<String>,
        /// Target label index.
        #[arg(long)]
        target: Option<usize>,
        /// Poisoning rate in [0, 1].
        #[arg(long)]
        rate: Option<f64>,
    },
    /// Run a defense (or the no-defense arm) over the poisoned artifacts.
    Defend {
        #[command(flatten)]
        config: ConfigArgs,
        /// ncl, onion, or none.
        #[arg(long, default_value = "ncl")]
        method: String,
        /// Objective variant override: ncl, uncl, or ce.
        #[arg(long)]
        objective: Option<String>,
        /// Skip the label-correction stage (ablation arm).
        #[arg(long)]
        skip_label_correction: bool,
    },
    /// Compute CACC/ASR (and the ASR drop against a reference run).
    Eval {
        #[command(flatten)]
        config: ConfigArgs,
        /// Checkpoint path (defaults to out_dir/checkpoint.json).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Reference eval_report.json for the ASR drop.
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Sweep the poisoning rate or the contrastive weight.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        /// Swept parameter: rate or alpha.
        #[arg(long)]
        param: String,
        /// Comma-separated values, e.g. 0.1,0.2,0.5 or 1,2,4,8.
        #[arg(long)]
        values: String,
        /// Parallel cells for rate sweeps.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Also write SVG charts next to the CSV.
        #[arg(long)]
        plots: bool,
    },
    /// Embedding-stability analysis of two checkpoints plus embedding dumps.
    Analyze {
        #[command(flatten)]
        config: ConfigArgs,
        /// Checkpoint of the defended model.
        #[arg(long)]
        ckpt_ncl: Option<PathBuf>,
        /// Checkpoint of the plain-CE model.
        #[arg(long)]
        ckpt_ce: Option<PathBuf>,
    },
}

fn parse_f64_list(raw: &str) -> Result<Vec<f64>, Error> {
    raw.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|e| Error::Config(format!("bad numeric value '{v}': {e}")))
        })
        .collect()
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::GenData {
            out,
            records,
            fractions,
            pos_fraction,
            seed,
        } => {
            let f = parse_f64_list(&fractions)?;
            if f.len() != 3 {
                return Err(Error::Config("fractions must be three numbers".into()));
            }
            let paths = cmd_gen_data_biased(&out, records, (f[0], f[1], f[2]), seed, pos_fraction)?;
            println!("wrote {}", paths.0.display());
            println!("wrote {}", paths.1.display());
            println!("wrote {}", paths.2.display());
            Ok(())
        }
        Command::Poison {
            config,
            attack,
            trigger,
            target,
            rate,
        } => {
            let mut extra = Vec::new();
            if let Some(a) = attack {
                extra.push(format!("attack.kind={a}"));
            }
            if let Some(t) = trigger {
                extra.push(format!("attack.trigger={t}"));
            }
            if let Some(t) = target {
                extra.push(format!("attack.target_label={t}"));
            }
            if let Some(r) = rate {
                extra.push(format!("attack.rate={r}"));
            }
            let cfg = config.to_config(&extra)?;
            let out = cmd_poison(&cfg)?;
            for p in [out.train, out.dev, out.test_poisoned, out.manifest] {
                println!("wrote {}", p.display());
            }
            Ok(())
        }
        Command::Defend {
            config,
            method,
            objective,
            skip_label_correction,
        } => {
            let mut extra = Vec::new();
            if let Some(o) = objective {
                extra.push(format!("objective.variant={o}"));
            }
            let cfg = config.to_config(&extra)?;
            let method = match method.as_str() {
                "ncl" => DefendMethod::Ncl,
                "onion" => DefendMethod::Onion,
                "none" => DefendMethod::NoDefense,
                other => {
                    return Err(Error::Config(format!(
                        "unknown defend method '{other}' (ncl|onion|none)"
                    )))
                }
            };
            let outcome = cmd_defend(&cfg, method, !skip_label_correction)?;
            println!("wrote {}", outcome.checkpoint.display());
            if let Some(report) = &outcome.correction {
                println!(
                    "label correction changed {} records (recall {}, false-flag {})",
                    report.num_changed,
                    report
                        .recall
                        .map_or("n/a".to_string(), |v| format!("{v:.3}")),
                    report
                        .false_flag_rate
                        .map_or("n/a".to_string(), |v| format!("{v:.3}"))
                );
            }
            if let Some(acc) = outcome.dev_acc {
                println!("dev accuracy {acc:.4}");
            }
            Ok(())
        }
        Command::Eval {
            config,
            checkpoint,
            reference,
        } => {
            let mut extra = Vec::new();
            if let Some(c) = checkpoint {
                extra.push(format!("eval.checkpoint={}", c.display()));
            }
            if let Some(r) = reference {
                extra.push(format!("eval.reference_report={}", r.display()));
            }
            let cfg = config.to_config(&extra)?;
            let report = cmd_eval(&cfg)?;
            println!(
                "cacc {:.4} asr {:.4}{}",
                report.cacc,
                report.asr,
                report
                    .delta_asr
                    .map_or(String::new(), |d| format!(" delta_asr {d:.4}"))
            );
            Ok(())
        }
        Command::Sweep {
            config,
            param,
            values,
            jobs,
            plots,
        } => {
            let cfg = config.to_config(&[])?;
            let vals = parse_f64_list(&values)?;
            match param.as_str() {
                "rate" => {
                    let rows = cmd_sweep_rates(&cfg, &vals, jobs, plots)?;
                    for r in rows {
                        println!(
                            "rate {} {}: cacc {:.4} asr {:.4}",
                            r.rate, r.arm, r.cacc, r.asr
                        );
                    }
                }
                "alpha" => {
                    let (rows, recommended) = cmd_sweep_alpha(&cfg, &vals, plots)?;
                    for r in rows {
                        println!(
                            "alpha {}: dev_acc {:.4} cacc {:.4} asr {:.4}",
                            r.alpha, r.dev_acc, r.cacc, r.asr
                        );
                    }
                    println!("recommended alpha {recommended}");
                }
                other => {
                    return Err(Error::Config(format!(
                        "unknown sweep parameter '{other}' (rate|alpha)"
                    )))
                }
            }
            Ok(())
        }
        Command::Analyze {
            config,
            ckpt_ncl,
            ckpt_ce,
        } => {
            let mut extra = Vec::new();
            if let Some(c) = ckpt_ncl {
                extra.push(format!("analyze.checkpoint_ncl={}", c.display()));
            }
            if let Some(c) = ckpt_ce {
                extra.push(format!("analyze.checkpoint_ce={}", c.display()));
            }
            let cfg = config.to_config(&extra)?;
            let summary = cmd_analyze(&cfg)?;
            println!(
                "median r: defended {} vs plain-ce {}",
                summary
                    .ncl
                    .median
                    .map_or("n/a".to_string(), |v| format!("{v:.4}")),
                summary
                    .ce
                    .median
                    .map_or("n/a".to_string(), |v| format!("{v:.4}"))
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
