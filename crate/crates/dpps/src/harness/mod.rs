//! Experiment configuration, the deterministic runner, sensitivity sweeps,
//! calibration, and metrics export.
//!
//! A run is fully determined by `(config, master_seed)`. Config files are
//! TOML with one section per subsystem; `--set section.key=value` overrides
//! individual entries for sweeps.

mod metrics;
mod runner;

pub use metrics::{emit_metrics, format_f64, write_summary, RoundMetrics, RunSummary,
    METRICS_HEADER};
pub use runner::{
    calibrate, check_invariants, run_experiment, run_sensitivity_sweep, CalibrationResult,
    RunArtifacts, RunOptions, SweepAxis, SweepRow,
};

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::optimizer::{OptimizerError, PartitionScheme};
use crate::privacy::PrivacyError;
use crate::protocol::{ProtocolError, SyncResetMode};
use crate::tasks::TaskError;
use crate::topology::TopologyError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid config at `{key}`: {message}")]
    Validation { key: String, message: String },
    #[error("cannot read config {path}: {message}")]
    ConfigIo { path: String, message: String },
    #[error("cannot parse config {path}: {message}")]
    ConfigParse { path: String, message: String },
    #[error("bad --set override `{arg}`: {message}")]
    BadOverride { arg: String, message: String },
    #[error("round {round}: invariant violated: {message}")]
    Invariant { round: u64, message: String },
    #[error("sweep value {value}: {source}")]
    Sweep {
        value: u64,
        #[source]
        source: Box<HarnessError>,
    },
    #[error("calibration failed: {0}")]
    Calibration(String),
    #[error("metrics need at least one row")]
    EmptyMetrics,
    #[error("cannot write {path}: {message}")]
    OutputIo { path: String, message: String },
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Privacy(#[from] PrivacyError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Optimizer(#[from] OptimizerError),
    #[error(transparent)]
    Task(#[from] TaskError),
}

impl HarnessError {
    /// Process exit code: 1 for configuration problems, 2 for invariant
    /// violations detected in test mode.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Invariant { .. } => 2,
            _ => 1,
        }
    }
}

fn invalid(key: &str, message: impl Into<String>) -> HarnessError {
    HarnessError::Validation {
        key: key.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyKind {
    DOut,
    Exp,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySection {
    pub kind: TopologyKind,
    pub n_nodes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rounds_file: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrivacySection {
    #[serde(default = "default_true")]
    pub enabled: bool,
    pub b: f64,
    pub gamma_n: f64,
    pub c_prime: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyncResetModeCfg {
    Zeroed,
    Conservative,
}

impl From<SyncResetModeCfg> for SyncResetMode {
    fn from(mode: SyncResetModeCfg) -> Self {
        match mode {
            SyncResetModeCfg::Zeroed => SyncResetMode::Zeroed,
            SyncResetModeCfg::Conservative => SyncResetMode::Conservative,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolSection {
    /// Synchronize every this many rounds; 0 disables synchronization.
    pub sync_interval: u64,
    #[serde(default = "default_sync_reset_mode")]
    pub sync_reset_mode: SyncResetModeCfg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSection {
    pub gamma_l: f64,
    pub gamma_s: f64,
    /// Optional mirror of `privacy.gamma_n`; when present it must match.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_n: Option<f64>,
    pub clip_threshold: f64,
    pub rounds: u64,
    #[serde(default = "default_metrics_interval")]
    pub metrics_interval: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeKind {
    ShareFirstK,
    ShareAll,
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockTag {
    Shared,
    Local,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionSection {
    pub scheme: SchemeKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tags: Option<Vec<BlockTag>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Synthetic,
    Mnist,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSection {
    pub kind: TaskKind,
    #[serde(default = "default_n_examples")]
    pub n_examples: usize,
    #[serde(default = "default_n_features")]
    pub n_features: usize,
    #[serde(default = "default_n_classes")]
    pub n_classes: usize,
    #[serde(default = "default_separation")]
    pub separation: f64,
    #[serde(default = "default_n_test")]
    pub n_test: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub images_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_images_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_labels_path: Option<PathBuf>,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    /// Per-node evaluation-batch size for the optimality metrics.
    #[serde(default = "default_eval_batch")]
    pub eval_batch: usize,
    /// All nodes start from the same weights when set.
    #[serde(default)]
    pub identical_init: bool,
}

fn default_true() -> bool {
    true
}
fn default_sync_reset_mode() -> SyncResetModeCfg {
    SyncResetModeCfg::Zeroed
}
fn default_metrics_interval() -> u64 {
    10
}
fn default_n_examples() -> usize {
    2000
}
fn default_n_features() -> usize {
    30
}
fn default_n_classes() -> usize {
    10
}
fn default_separation() -> f64 {
    3.0
}
fn default_n_test() -> usize {
    500
}
fn default_batch_size() -> usize {
    100
}
fn default_eval_batch() -> usize {
    200
}
fn default_master_seed() -> u64 {
    2024
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("runs/out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_master_seed")]
    pub master_seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub topology: TopologySection,
    pub privacy: PrivacySection,
    pub protocol: ProtocolSection,
    pub optimizer: OptimizerSection,
    pub partition: PartitionSection,
    pub task: TaskSection,
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self, HarnessError> {
        Self::from_file_with_overrides(path, &[])
    }

    /// Parse a TOML config, applying `--set section.key=value` overrides
    /// before deserialization.
    pub fn from_file_with_overrides(
        path: &Path,
        overrides: &[String],
    ) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::ConfigIo {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let mut value: toml::Value =
            toml::from_str(&text).map_err(|e: toml::de::Error| HarnessError::ConfigParse {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
        for arg in overrides {
            apply_override(&mut value, arg)?;
        }
        let cfg: ExperimentConfig =
            value
                .try_into()
                .map_err(|e: toml::de::Error| HarnessError::ConfigParse {
                    path: path.display().to_string(),
                    message: e.to_string(),
                })?;
        Ok(cfg)
    }

    /// Serialize with all defaults materialized.
    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serialization cannot fail")
    }

    /// Partition scheme for a model with `n_blocks` ordered blocks.
    pub fn partition_scheme(&self) -> Result<PartitionScheme, HarnessError> {
        match self.partition.scheme {
            SchemeKind::ShareFirstK => {
                let k = self
                    .partition
                    .k
                    .ok_or_else(|| invalid("partition.k", "required for share_first_k"))?;
                Ok(PartitionScheme::ShareFirstK(k))
            }
            SchemeKind::ShareAll => Ok(PartitionScheme::ShareAll),
            SchemeKind::Custom => {
                let tags = self
                    .partition
                    .tags
                    .as_ref()
                    .ok_or_else(|| invalid("partition.tags", "required for custom scheme"))?;
                Ok(PartitionScheme::Custom(
                    tags.iter().map(|t| *t == BlockTag::Shared).collect(),
                ))
            }
        }
    }

    /// Cross-field validation. Returns human-readable warnings; errors name
    /// the offending key.
    pub fn validate(&self) -> Result<Vec<String>, HarnessError> {
        let mut warnings = Vec::new();
        let t = &self.topology;
        if t.n_nodes == 0 {
            return Err(invalid("topology.n_nodes", "must be at least 1"));
        }
        match t.kind {
            TopologyKind::DOut => {
                let d = t
                    .d
                    .ok_or_else(|| invalid("topology.d", "required for d_out"))?;
                if d < 2 || d > t.n_nodes {
                    return Err(invalid(
                        "topology.d",
                        format!("need 2 <= d <= n_nodes, got d={d}, n_nodes={}", t.n_nodes),
                    ));
                }
            }
            TopologyKind::Exp => {
                if t.n_nodes < 2 {
                    return Err(invalid("topology.n_nodes", "exp needs at least 2 nodes"));
                }
            }
            TopologyKind::Custom => {
                if t.rounds_file.is_none() {
                    return Err(invalid("topology.rounds_file", "required for custom"));
                }
            }
        }

        let p = &self.privacy;
        if p.b.is_nan() || p.b <= 0.0 {
            return Err(invalid("privacy.b", "must be positive"));
        }
        if p.enabled && (p.gamma_n.is_nan() || p.gamma_n <= 0.0) {
            return Err(invalid(
                "privacy.gamma_n",
                "must be positive when privacy is enabled",
            ));
        }
        if p.gamma_n.is_nan() || p.gamma_n < 0.0 {
            return Err(invalid("privacy.gamma_n", "must be non-negative"));
        }
        if p.c_prime.is_nan() || p.c_prime <= 0.0 {
            return Err(invalid("privacy.c_prime", "must be positive"));
        }
        if p.lambda.is_nan() || p.lambda <= 0.0 || p.lambda >= 1.0 {
            return Err(invalid("privacy.lambda", "must lie strictly inside (0, 1)"));
        }

        let o = &self.optimizer;
        if o.gamma_l.is_nan() || o.gamma_l <= 0.0 {
            return Err(invalid("optimizer.gamma_l", "must be positive"));
        }
        if o.gamma_s.is_nan() || o.gamma_s < 0.0 {
            return Err(invalid("optimizer.gamma_s", "must be non-negative"));
        }
        if o.clip_threshold.is_nan() || o.clip_threshold <= 0.0 {
            return Err(invalid("optimizer.clip_threshold", "must be positive"));
        }
        if o.rounds == 0 {
            return Err(invalid("optimizer.rounds", "must be at least 1"));
        }
        if o.metrics_interval == 0 {
            return Err(invalid("optimizer.metrics_interval", "must be at least 1"));
        }
        if let Some(gn) = o.gamma_n {
            if gn != p.gamma_n {
                return Err(invalid(
                    "optimizer.gamma_n",
                    format!(
                        "must match privacy.gamma_n ({} vs {})",
                        gn, p.gamma_n
                    ),
                ));
            }
        }
        if p.enabled && p.gamma_n >= o.gamma_s / 2.0 {
            warnings.push(format!(
                "privacy.gamma_n = {} is not below optimizer.gamma_s / 2 = {}; \
                 the step-size condition for convergence is not met",
                p.gamma_n,
                o.gamma_s / 2.0
            ));
        }

        self.partition_scheme()?;
        if self.partition.scheme == SchemeKind::ShareFirstK {
            if let Some(0) = self.partition.k {
                return Err(invalid("partition.k", "must be at least 1"));
            }
        }

        let task = &self.task;
        if task.batch_size == 0 {
            return Err(invalid("task.batch_size", "must be at least 1"));
        }
        if task.eval_batch == 0 {
            return Err(invalid("task.eval_batch", "must be at least 1"));
        }
        match task.kind {
            TaskKind::Synthetic => {
                if task.n_classes < 2 {
                    return Err(invalid("task.n_classes", "need at least 2 classes"));
                }
                if task.n_features < task.n_classes {
                    return Err(invalid(
                        "task.n_features",
                        "needs n_features >= n_classes for orthogonal class means",
                    ));
                }
                if task.n_examples < t.n_nodes {
                    return Err(invalid(
                        "task.n_examples",
                        "every node needs a non-empty shard",
                    ));
                }
            }
            TaskKind::Mnist => {
                for (key, path) in [
                    ("task.images_path", &task.images_path),
                    ("task.labels_path", &task.labels_path),
                    ("task.test_images_path", &task.test_images_path),
                    ("task.test_labels_path", &task.test_labels_path),
                ] {
                    if path.is_none() {
                        return Err(invalid(key, "required for the mnist task"));
                    }
                }
            }
        }
        Ok(warnings)
    }
}

/// Apply one `section.key=value` override to a parsed TOML tree. The value
/// is parsed as TOML (so `true`, `3`, `0.5` and quoted strings all work);
/// bare words fall back to strings.
fn apply_override(root: &mut toml::Value, arg: &str) -> Result<(), HarnessError> {
    let bad = |message: &str| HarnessError::BadOverride {
        arg: arg.to_string(),
        message: message.to_string(),
    };
    let (key_path, raw_value) = arg.split_once('=').ok_or_else(|| bad("expected key=value"))?;
    let parts: Vec<&str> = key_path.split('.').collect();
    if parts.is_empty() || parts.iter().any(|p| p.is_empty()) {
        return Err(bad("empty key segment"));
    }
    let parsed: toml::Value = match raw_value.parse() {
        Ok(toml::Value::String(s)) => toml::Value::String(s),
        Ok(v) => v,
        Err(_) => toml::Value::String(raw_value.to_string()),
    };
    let mut node = root;
    for part in &parts[..parts.len() - 1] {
        node = node
            .as_table_mut()
            .ok_or_else(|| bad("path crosses a non-table value"))?
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    node.as_table_mut()
        .ok_or_else(|| bad("path crosses a non-table value"))?
        .insert(
            parts[parts.len() - 1].to_string(),
            parsed,
        );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;
    use tempfile::NamedTempFile;

    fn sample_toml() -> &'static str {
        r#"
            master_seed = 2024
            output_dir = "runs/sample"

            [topology]
            kind = "d_out"
            n_nodes = 10
            d = 2

            [privacy]
            enabled = true
            b = 5.0
            gamma_n = 0.02
            c_prime = 0.78
            lambda = 0.55

            [protocol]
            sync_interval = 5
            sync_reset_mode = "zeroed"

            [optimizer]
            gamma_l = 0.05
            gamma_s = 0.05
            clip_threshold = 100.0
            rounds = 60
            metrics_interval = 10

            [partition]
            scheme = "share_first_k"
            k = 1

            [task]
            kind = "synthetic"
            n_examples = 2000
            n_features = 30
            n_classes = 10
            separation = 3.0
            batch_size = 50
        "#
    }

    fn write_config(text: &str) -> NamedTempFile {
        let mut f = NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn parses_and_validates_a_sample_config() {
        let f = write_config(sample_toml());
        let cfg = ExperimentConfig::from_file(f.path()).unwrap();
        assert_eq!(cfg.topology.n_nodes, 10);
        assert_eq!(cfg.task.eval_batch, 200); // default materialized
        let warnings = cfg.validate().unwrap();
        assert!(warnings.is_empty(), "{warnings:?}");
    }

    #[test]
    fn round_trips_through_toml_with_defaults_materialized() {
        let f = write_config(sample_toml());
        let cfg = ExperimentConfig::from_file(f.path()).unwrap();
        let serialized = cfg.to_toml_string();
        let reparsed: ExperimentConfig = toml::from_str(&serialized).unwrap();
        assert_eq!(cfg, reparsed);
        assert!(serialized.contains("eval_batch"));
        assert!(serialized.contains("sync_reset_mode"));
    }

    #[test]
    fn overrides_replace_values_with_the_right_types() {
        let f = write_config(sample_toml());
        let cfg = ExperimentConfig::from_file_with_overrides(
            f.path(),
            &[
                "topology.d=4".to_string(),
                "privacy.enabled=false".to_string(),
                "optimizer.gamma_s=0.1".to_string(),
                "partition.scheme=share_all".to_string(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.topology.d, Some(4));
        assert!(!cfg.privacy.enabled);
        assert_eq!(cfg.optimizer.gamma_s, 0.1);
        assert_eq!(cfg.partition.scheme, SchemeKind::ShareAll);
    }

    #[test]
    fn validation_errors_name_the_offending_key() {
        let f = write_config(sample_toml());
        let mut cfg = ExperimentConfig::from_file(f.path()).unwrap();
        cfg.topology.d = Some(1);
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("topology.d"), "{err}");

        let mut cfg = ExperimentConfig::from_file(f.path()).unwrap();
        cfg.privacy.lambda = 1.0;
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("privacy.lambda"), "{err}");

        let mut cfg = ExperimentConfig::from_file(f.path()).unwrap();
        cfg.optimizer.gamma_n = Some(0.5);
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("optimizer.gamma_n"), "{err}");

        let mut cfg = ExperimentConfig::from_file(f.path()).unwrap();
        cfg.task.kind = TaskKind::Mnist;
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("task.images_path"), "{err}");
    }

    #[test]
    fn step_size_condition_produces_a_warning() {
        let f = write_config(sample_toml());
        let mut cfg = ExperimentConfig::from_file(f.path()).unwrap();
        cfg.privacy.gamma_n = 0.05; // equal to gamma_s, so >= gamma_s/2
        let warnings = cfg.validate().unwrap();
        assert_eq!(warnings.len(), 1);
        assert!(warnings[0].contains("gamma_n"));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = sample_toml().replace("[task]", "typo_key = 3\n[task]");
        let f = write_config(&text);
        assert!(ExperimentConfig::from_file(f.path()).is_err());
    }
}
