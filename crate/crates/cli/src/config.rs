//! Experiment configuration files (TOML, or JSON by extension).

use std::path::{Path, PathBuf};

use lorma_core::adapters::{AdapterVariant, MultiplySide};
use lorma_core::trainer::{steps_per_epoch, LrSchedule, OptimizerSpec, ScheduleKind, TaskSpec};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdapterSection {
    /// One run per variant, all on the same task and seed.
    pub variants: Vec<AdapterVariant>,
    #[serde(default)]
    pub side: MultiplySide,
    pub r: usize,
    /// Defaults to `r`, making the scaling `alpha / r` equal to 1.
    pub alpha: Option<f64>,
}

impl AdapterSection {
    pub fn alpha(&self) -> f64 {
        self.alpha.unwrap_or(self.r as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSection {
    pub kind: ScheduleKind,
    #[serde(default)]
    pub warmup_ratio: f64,
    /// Defaults to the number of updates the run will take.
    pub total_steps: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: TaskSpec,
    pub adapter: AdapterSection,
    pub optimizer: OptimizerSpec,
    pub schedule: ScheduleSection,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
    /// Extra seeds to sweep; `seed` alone when absent.
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let parsed = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| CliError::Parse {
                path: path.to_path_buf(),
                detail: format!("line {} column {}: {e}", e.line(), e.column()),
            })?
        } else {
            toml::from_str(&text).map_err(|e| CliError::Parse {
                path: path.to_path_buf(),
                detail: describe_toml_error(&text, &e),
            })?
        };
        let cfg: ExperimentConfig = parsed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let usage = |m: String| Err(CliError::Usage(m));
        if self.epochs == 0 || self.batch == 0 {
            return usage("epochs and batch must be positive".into());
        }
        if self.adapter.variants.is_empty() {
            return usage("adapter.variants is empty".into());
        }
        if matches!(&self.seeds, Some(s) if s.is_empty()) {
            return usage("seeds is empty".into());
        }
        if self.optimizer.lr.is_nan() || self.optimizer.lr <= 0.0 {
            return usage(format!("optimizer.lr must be positive, got {}", self.optimizer.lr));
        }
        let wrap = |e| CliError::core("invalid config", e);
        self.task.validate().map_err(wrap)?;
        self.optimizer.validate().map_err(wrap)?;
        self.lr_schedule().validate().map_err(wrap)?;
        for &v in &self.adapter.variants {
            let cfg = lorma_core::adapters::AdapterConfig::new(
                v,
                self.adapter.side,
                self.adapter.r,
                self.adapter.alpha(),
                0,
            );
            cfg.validate(self.task.d, self.task.k).map_err(wrap)?;
        }
        Ok(())
    }

    pub fn seeds(&self) -> Vec<u64> {
        self.seeds.clone().unwrap_or_else(|| vec![self.seed])
    }

    pub fn total_updates(&self) -> usize {
        self.epochs * steps_per_epoch(self.task.n_train, self.batch)
    }

    pub fn lr_schedule(&self) -> LrSchedule {
        LrSchedule {
            kind: self.schedule.kind,
            warmup_ratio: self.schedule.warmup_ratio,
            total_steps: self.schedule.total_steps.unwrap_or_else(|| self.total_updates()),
        }
    }

    /// Canonical JSON of everything that affects results: object keys
    /// sorted, `output_dir` dropped.
    pub fn canonical_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(obj) = v.as_object_mut() {
            obj.remove("output_dir");
        }
        // serde_json's default map is ordered by key.
        v.to_string()
    }

    /// SHA-256 of [`canonical_json`](Self::canonical_json), hex encoded.
    pub fn run_hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }
}

fn describe_toml_error(text: &str, e: &toml::de::Error) -> String {
    let msg = e.message();
    match e.span() {
        Some(span) => {
            let before = &text[..span.start.min(text.len())];
            let line = before.matches('\n').count() + 1;
            let col = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
            format!("line {line} column {col}: {msg}")
        }
        None => msg.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
seed = 3
epochs = 2
batch = 4
output_dir = "out"

[task]
kind = "target_recovery"
d = 6
k = 5
n_train = 10
target = { kind = "low_rank_delta", rank = 2 }

[adapter]
variants = ["lora", "lorma_plus"]
r = 2

[optimizer]
kind = "adamw"
lr = 0.01

[schedule]
kind = "constant"
"#;

    fn parse(text: &str) -> ExperimentConfig {
        toml::from_str(text).unwrap()
    }

    #[test]
    fn defaults_fill_in() {
        let c = parse(BASE);
        c.validate().unwrap();
        assert_eq!(c.adapter.alpha(), 2.0);
        assert_eq!(c.adapter.side, MultiplySide::Pre);
        assert_eq!(c.seeds(), vec![3]);
        assert_eq!(c.total_updates(), 6);
        assert_eq!(c.lr_schedule().total_steps, 6);
        assert_eq!(c.optimizer.beta2, 0.999);
    }

    #[test]
    fn hash_ignores_field_order_and_output_dir() {
        let a = parse(BASE);
        let reordered = BASE.replace("seed = 3\nepochs = 2\n", "epochs = 2\nseed = 3\n");
        let mut b = parse(&reordered.replace("\"out\"", "\"elsewhere\""));
        assert_eq!(a.run_hash(), b.run_hash());
        b.seed = 4;
        assert_ne!(a.run_hash(), b.run_hash());
        assert_eq!(a.run_hash().len(), 64);
    }

    #[test]
    fn unknown_fields_rejected_with_position() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.toml");
        std::fs::write(&path, BASE.replace("batch = 4", "batch = 4\nbatchh = 5")).unwrap();
        let err = ExperimentConfig::load(&path).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("line "), "{err}");
    }

    #[test]
    fn invalid_values_are_usage_errors() {
        let mut c = parse(BASE);
        c.adapter.r = 9;
        assert_eq!(c.validate().unwrap_err().exit_code(), 2);
        let mut c = parse(BASE);
        c.batch = 0;
        assert_eq!(c.validate().unwrap_err().exit_code(), 2);
    }
}
