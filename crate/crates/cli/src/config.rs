//! Run configuration: named presets overlaid with an optional TOML file.

use std::path::Path;

use emoc_core::mappingnet::MappingConfig;
use emoc_core::model::ModelConfig;
use emoc_core::synthdata::SynthSpec;
use emoc_core::training::{OptimizerConfig, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const PRESETS: [&str; 2] = ["full", "smoke"];

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Schedule {
    /// Joint training steps; 0 means `epochs` full passes over the training split.
    pub joint_steps: usize,
}

impl Schedule {
    pub fn joint_steps(&self, train: &TrainConfig, n_train: usize) -> usize {
        if self.joint_steps > 0 {
            self.joint_steps
        } else {
            train.epochs * train.steps_per_epoch(n_train)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: String,
    pub synth: SynthSpec,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub schedule: Schedule,
    pub mapping: MappingConfig,
}

impl RunConfig {
    /// Full-scale optimizer settings: lr 1e-5 for 500 epochs.
    pub fn full() -> Self {
        Self {
            preset: "full".into(),
            synth: SynthSpec::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            schedule: Schedule::default(),
            mapping: MappingConfig::default(),
        }
    }

    /// Short high-lr schedule for the synthetic corpus.
    pub fn smoke() -> Self {
        Self {
            preset: "smoke".into(),
            train: TrainConfig {
                optimizer: OptimizerConfig {
                    lr: 2e-3,
                    final_lr_fraction: 0.05,
                    ..OptimizerConfig::default()
                },
                ..TrainConfig::default()
            },
            schedule: Schedule { joint_steps: 3000 },
            ..Self::full()
        }
    }

    pub fn preset(name: &str) -> CliResult<Self> {
        match name {
            "full" => Ok(Self::full()),
            "smoke" => Ok(Self::smoke()),
            other => Err(CliError::Usage(format!(
                "unknown preset {other:?} (expected one of {})",
                PRESETS.join(", ")
            ))),
        }
    }

    /// Overlays `text` on the preset it names (`preset = "..."`, default
    /// `fallback`). Keys absent from `text` keep the preset's values.
    pub fn parse(text: &str, fallback: &str) -> CliResult<Self> {
        let user: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| CliError::Usage(format!("config: {e}")))?;
        let name = match user.get("preset") {
            Some(toml::Value::String(s)) => s.clone(),
            Some(_) => return Err(CliError::Usage("config: preset must be a string".into())),
            None => fallback.to_string(),
        };
        let base = Self::preset(&name)?;
        let mut merged =
            toml::Table::try_from(&base).map_err(|e| CliError::Usage(format!("config: {e}")))?;
        overlay(&mut merged, user);
        let cfg: Self = merged
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Usage(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, fallback: &str) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        Self::parse(&text, fallback)
    }

    pub fn validate(&self) -> CliResult<()> {
        self.synth.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        self.mapping.validate()?;
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> String {
        hash_text(&self.to_toml())
    }
}

pub fn hash_text(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

fn overlay(base: &mut toml::Table, user: toml::Table) {
    for (k, v) in user {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(u)) => overlay(b, u),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Parallelism cap from `EMOC_THREADS`, default 1.
pub fn threads_from_env() -> CliResult<usize> {
    match std::env::var("EMOC_THREADS") {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(CliError::Usage(format!(
                "EMOC_THREADS must be a positive integer, got {v:?}"
            ))),
        },
    }
}
