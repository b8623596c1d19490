//! Versioned JSON configuration of single experiments and benchmark sweeps.

use std::path::{Path, PathBuf};

use cilab_core::nn::Activation;
use cilab_core::rehearsal::{PolicyKind, RehearsalPolicyConfig};
use cilab_core::rsgd::RsgdConfig;
use cilab_core::scenario::{BenchmarkFactorGrid, SyntheticSpec};
use serde::{Deserialize, Serialize};

use crate::error::{LabError, LabResult};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub synthetic: SyntheticSpec,
    /// Seed of the dataset generator, separate from the experiment seed.
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsConfig {
    #[serde(default = "yes")]
    pub all_nic: bool,
    #[serde(default = "yes")]
    pub log_sim: bool,
    /// Full-parameter snapshots at `t = 0` of every step and the four
    /// interference terms of each past class; small models only.
    #[serde(default)]
    pub lemma: bool,
}

fn yes() -> bool {
    true
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        DiagnosticsConfig {
            all_nic: true,
            log_sim: true,
            lemma: false,
        }
    }
}

/// One experiment: a class sequence, a rehearsal retention and a seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub experiment_id: String,
    pub data: DataConfig,
    /// Dataset class ids introduced at each step.
    pub sequence: Vec<Vec<usize>>,
    pub model: ModelConfig,
    /// Plain SGD on the first step (`alpha` is ignored).
    pub first_step: RsgdConfig,
    pub rsgd: RsgdConfig,
    pub rehearsal: RehearsalPolicyConfig,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
    pub seed: u64,
    /// Sweep partition label, set by the benchmark driver.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partition: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

fn invalid(msg: impl Into<String>) -> LabError {
    LabError::Config(msg.into())
}

impl ExperimentConfig {
    pub fn validate(&self) -> LabResult<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(invalid(format!(
                "schema version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.experiment_id.is_empty() || self.experiment_id.contains(['/', '\\']) {
            return Err(invalid("experiment_id must be a non-empty plain name"));
        }
        self.data.synthetic.validate()?;
        if self.sequence.len() < 2 {
            return Err(invalid("a sequence needs at least two steps"));
        }
        if let Some(&c) = self
            .sequence
            .iter()
            .flatten()
            .find(|&&c| c >= self.data.synthetic.classes)
        {
            return Err(invalid(format!("class {c} exceeds the dataset's class count")));
        }
        self.first_step.validate(false)?;
        self.rsgd.validate(true)?;
        self.rehearsal.validate()?;
        Ok(())
    }

    pub fn load(path: &Path) -> LabResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
        let cfg: ExperimentConfig =
            serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> LabResult<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Everything of an experiment except what the sweep varies (sequence,
/// retention, seed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentTemplate {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub first_step: RsgdConfig,
    pub rsgd: RsgdConfig,
    #[serde(default = "uniform")]
    pub policy: PolicyKind,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
}

fn uniform() -> PolicyKind {
    PolicyKind::ClassBalancedUniform
}

impl ExperimentTemplate {
    pub fn instantiate(&self, id: String, sequence: Vec<Vec<usize>>, retention: f64, seed: u64) -> ExperimentConfig {
        ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            experiment_id: id,
            data: self.data.clone(),
            sequence,
            model: self.model.clone(),
            first_step: self.first_step.clone(),
            rsgd: self.rsgd.clone(),
            rehearsal: RehearsalPolicyConfig {
                kind: self.policy,
                retention,
            },
            diagnostics: self.diagnostics.clone(),
            seed,
            partition: None,
            output_dir: None,
        }
    }
}

/// A benchmark sweep: the factor grid, how many experiments to draw per
/// partition, and the shared experiment template.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub schema_version: u32,
    pub grid: BenchmarkFactorGrid,
    #[serde(default = "ten")]
    pub per_partition: usize,
    /// Seeds sequence construction and stratified sampling.
    pub sampling_seed: u64,
    /// Bootstrap resamples for the standard-deviation intervals.
    #[serde(default = "thousand")]
    pub bootstrap_resamples: usize,
    pub template: ExperimentTemplate,
}

fn ten() -> usize {
    10
}

fn thousand() -> usize {
    1000
}

impl BenchConfig {
    pub fn validate(&self) -> LabResult<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(invalid(format!(
                "schema version {} is not supported",
                self.schema_version
            )));
        }
        if self.grid.total_classes > self.template.data.synthetic.classes {
            return Err(invalid("the grid uses more classes than the dataset provides"));
        }
        if self.per_partition == 0 {
            return Err(invalid("per_partition must be at least 1"));
        }
        self.template.data.synthetic.validate()?;
        self.template.first_step.validate(false)?;
        self.template.rsgd.validate(true)?;
        for &p in &self.grid.class_percents {
            self.grid.partition_shape(p)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> LabResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
        let cfg: BenchConfig = serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{bench, four_step};

    #[test]
    fn experiment_round_trip_is_identity() {
        let mut cfg = four_step(0.2, 9);
        cfg.partition = Some("p25_r0.2".into());
        let back: ExperimentConfig = serde_json::from_str(&cfg.to_json().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn bench_round_trip_and_load() {
        let b = bench(3);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bench.json");
        std::fs::write(&path, serde_json::to_string(&b).unwrap()).unwrap();
        assert_eq!(BenchConfig::load(&path).unwrap(), b);
    }

    #[test]
    fn validation() {
        let mut cfg = four_step(0.2, 1);
        cfg.schema_version = 2;
        assert!(matches!(cfg.validate(), Err(LabError::Config(_))));
        let mut cfg = four_step(0.2, 1);
        cfg.sequence = vec![vec![0, 12]];
        assert!(cfg.validate().is_err());
        let mut cfg = four_step(0.2, 1);
        cfg.experiment_id = "a/b".into();
        assert!(cfg.validate().is_err());
        let mut cfg = four_step(0.2, 1);
        cfg.rsgd.alpha = 0.3;
        assert!(cfg.validate().is_err());
        let mut b = bench(1);
        b.grid.total_classes = 13;
        assert!(b.validate().is_err());
    }

    #[test]
    fn missing_file_is_an_io_error() {
        let err = ExperimentConfig::load(Path::new("/nonexistent/config.json")).unwrap_err();
        assert!(matches!(err, LabError::Io { .. }));
        assert_eq!(err.exit_code(), 2);
    }
}
