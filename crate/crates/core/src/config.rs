//! The experiment configuration: one TOML file with dotted keys, CLI
//! overrides, an environment override for the output root, and a SHA-256
//! fingerprint over the canonical serialized form.
//!
//! All randomness in a run derives from `seed` through named sub-seeds (see
//! [`crate::seed`]), so a config file pins every byte of the outputs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attacks::{AttackKind, Placement, PoisonSpec};
use crate::encoder::{EncoderConfig, Pooling};
use crate::error::{Error, Result};
use crate::noise::{NoiserConfig, NoiserKind};
use crate::objectives::ObjectiveConfig;
use crate::seed::sub_seed;
use crate::trainer::{OptimizerKind, TrainConfig};

/// Environment variable that reroots relative output directories.
pub const OUT_ROOT_ENV: &str = "NCLBENCH_OUT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataSection {
    /// Clean input splits.
    pub train: PathBuf,
    pub dev: PathBuf,
    pub test: PathBuf,
    /// Where all command outputs land.
    pub out_dir: PathBuf,
    /// Vocabulary frequency cutoff.
    pub min_freq: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            train: PathBuf::from("data/train.jsonl"),
            dev: PathBuf::from("data/dev.jsonl"),
            test: PathBuf::from("data/test.jsonl"),
            out_dir: PathBuf::from("runs/default"),
            min_freq: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackSection {
    pub kind: AttackKind,
    pub trigger: String,
    pub target_label: usize,
    pub rate: f64,
    /// Defaults per kind when absent: word inserts at a random boundary,
    /// sentence at the head.
    pub placement: Option<Placement>,
    /// Style table path for feature attacks ("" = builtin).
    pub style_table: String,
}

impl Default for AttackSection {
    fn default() -> Self {
        AttackSection {
            kind: AttackKind::Word,
            trigger: "cf".into(),
            target_label: 1,
            rate: 0.1,
            placement: None,
            style_table: String::new(),
        }
    }
}

impl AttackSection {
    pub fn placement(&self) -> Placement {
        self.placement.unwrap_or(match self.kind {
            AttackKind::Word => Placement::Random,
            AttackKind::Sentence => Placement::Head,
            AttackKind::Feature => Placement::Random, // unused
        })
    }

    /// Poison spec for a given scope ("train"/"dev"/"test"), seeded from the
    /// global seed.
    pub fn spec(&self, global_seed: u64, scope: &str) -> PoisonSpec {
        PoisonSpec {
            kind: self.kind,
            trigger_payload: self.trigger.clone(),
            target_label: self.target_label,
            poisoning_rate: self.rate,
            placement: self.placement(),
            seed: sub_seed(global_seed, scope),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSection {
    pub kind: NoiserKind,
    pub n: usize,
    pub intensities: Vec<f64>,
    /// Synonym lexicon path ("" = builtin).
    pub lexicon: String,
    pub external_cmd: Vec<String>,
}

impl Default for NoiseSection {
    fn default() -> Self {
        NoiseSection {
            kind: NoiserKind::SynonymDropout,
            n: 3,
            intensities: vec![0.5, 0.7, 0.9],
            lexicon: String::new(),
            external_cmd: Vec::new(),
        }
    }
}

impl NoiseSection {
    pub fn noiser_config(&self, global_seed: u64) -> NoiserConfig {
        NoiserConfig {
            kind: self.kind,
            n: self.n,
            intensity_schedule: self.intensities.clone(),
            base_seed: sub_seed(global_seed, "noise"),
            external_cmd: self.external_cmd.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderSection {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub num_heads: usize,
    pub pooling: Pooling,
    pub max_len: usize,
}

impl Default for EncoderSection {
    fn default() -> Self {
        EncoderSection {
            embed_dim: 64,
            hidden_dim: 128,
            num_heads: 2,
            pooling: Pooling::ClsAttention,
            max_len: 64,
        }
    }
}

impl EncoderSection {
    pub fn encoder_config(&self, global_seed: u64, scope: &str, num_classes: usize) -> EncoderConfig {
        EncoderConfig {
            vocab_size: 0, // filled from the vocabulary at model build
            embed_dim: self.embed_dim,
            hidden_dim: self.hidden_dim,
            num_heads: self.num_heads,
            pooling: self.pooling,
            max_len: self.max_len,
            num_classes,
            seed: sub_seed(global_seed, scope),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSection {
    pub batch_groups: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub clip_norm: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            batch_groups: 8,
            epochs: 10,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            clip_norm: 5.0,
        }
    }
}

impl TrainSection {
    /// Training config for a given scope. `batch_groups_scale` widens the
    /// group budget when groups are singletons (plain datasets), keeping raw
    /// batch sizes comparable with grouped training.
    pub fn train_config(
        &self,
        objective: &ObjectiveConfig,
        global_seed: u64,
        scope: &str,
        batch_groups_scale: usize,
    ) -> TrainConfig {
        TrainConfig {
            batch_groups: self.batch_groups * batch_groups_scale.max(1),
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            optimizer: self.optimizer,
            clip_norm: self.clip_norm,
            seed: sub_seed(global_seed, scope),
            objective: objective.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OnionSection {
    pub order: usize,
    pub k: f64,
    pub threshold_percentile: f64,
}

impl Default for OnionSection {
    fn default() -> Self {
        OnionSection {
            order: 2,
            k: 0.1,
            threshold_percentile: 0.95,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSection {
    /// Optional reference eval report (typically the no-defense arm) used
    /// to compute the ASR drop.
    pub reference_report: String,
    /// Checkpoint to evaluate ("" = out_dir/checkpoint.json).
    pub checkpoint: String,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            reference_report: String::new(),
            checkpoint: String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalyzeSection {
    pub checkpoint_ncl: String,
    pub checkpoint_ce: String,
    pub samples: usize,
}

impl Default for AnalyzeSection {
    fn default() -> Self {
        AnalyzeSection {
            checkpoint_ncl: String::new(),
            checkpoint_ce: String::new(),
            samples: 300,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub data: DataSection,
    pub attack: AttackSection,
    pub noise: NoiseSection,
    pub encoder: EncoderSection,
    pub train: TrainSection,
    pub objective: ObjectiveConfig,
    pub onion: OnionSection,
    pub eval: EvalSection,
    pub analyze: AnalyzeSection,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.objective.validate()?;
        self.noise.noiser_config(self.seed).validate()?;
        if self.data.min_freq < 1 {
            return Err(Error::Config("data.min_freq must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.attack.rate) {
            return Err(Error::Config("attack.rate must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON form.
    pub fn fingerprint(&self) -> String {
        let canon = serde_json::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(canon.as_bytes());
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Output directory after the environment root override.
    pub fn out_dir(&self) -> PathBuf {
        match std::env::var_os(OUT_ROOT_ENV) {
            Some(root) if self.data.out_dir.is_relative() => {
                PathBuf::from(root).join(&self.data.out_dir)
            }
            _ => self.data.out_dir.clone(),
        }
    }
}

fn parse_override_value(raw: &str) -> toml::Value {
    if let Ok(b) = raw.parse::<bool>() {
        return toml::Value::Boolean(b);
    }
    if let Ok(i) = raw.parse::<i64>() {
        return toml::Value::Integer(i);
    }
    if let Ok(f) = raw.parse::<f64>() {
        return toml::Value::Float(f);
    }
    // bracketed lists parse as TOML fragments
    if raw.starts_with('[') {
        if let Ok(v) = toml::from_str::<toml::Table>(&format!("x = {raw}")) {
            if let Some(v) = v.get("x") {
                return v.clone();
            }
        }
    }
    toml::Value::String(raw.to_string())
}

fn set_dotted(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        cur = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()))
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override {key}: {p} is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Load a config file and apply `key=value` overrides (dotted keys).
pub fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<ExperimentConfig> {
    let mut table: toml::Table = match path {
        Some(p) => {
            let raw = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            toml::from_str(&raw).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => toml::Table::new(),
    };
    for ov in overrides {
        let (key, value) = ov
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override '{ov}' is not key=value")))?;
        set_dotted(&mut table, key.trim(), parse_override_value(value.trim()))?;
    }
    let cfg: ExperimentConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e| Error::Config(format!("bad config: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}
