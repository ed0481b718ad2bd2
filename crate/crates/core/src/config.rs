//! Experiment configuration (TOML). Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attacks::{AttackKind, AttackSpec, AttackTraining};
use crate::error::{Result, WaflError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TopologyKind {
    #[default]
    StaticLine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    pub kind: AttackKind,
    /// Swapped classes for SSC/SDC.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair: Option<(usize, usize)>,
    /// Depressed class for COD.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<usize>,
    /// Replacement label for COD.
    #[serde(default, rename = "override", skip_serializing_if = "Option::is_none")]
    pub override_class: Option<usize>,
    #[serde(default = "defaults::mount_node")]
    pub mount_node: usize,
    #[serde(default = "defaults::attack_start")]
    pub start: u64,
    #[serde(default = "defaults::attack_end")]
    pub end: u64,
    /// Load the poisoned model from a snapshot instead of generating it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub poison_model_path: Option<PathBuf>,
    /// Seed for generating the poisoned model.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub training: AttackTraining,
}

impl AttackConfig {
    pub fn new(kind: AttackKind, mount_node: usize, start: u64, end: u64) -> Self {
        let mut cfg = Self {
            kind,
            pair: None,
            target: None,
            override_class: None,
            mount_node,
            start,
            end,
            poison_model_path: None,
            seed: 0,
            training: AttackTraining::default(),
        };
        match (kind, kind.default_classes()) {
            (AttackKind::Ssc | AttackKind::Sdc, pair) => cfg.pair = pair,
            (AttackKind::Cod, Some((t, o))) => {
                cfg.target = Some(t);
                cfg.override_class = Some(o);
            }
            _ => {}
        }
        cfg
    }

    pub fn spec(&self) -> Result<AttackSpec> {
        let classes = match self.kind {
            AttackKind::Rmp => {
                if self.pair.is_some() || self.target.is_some() || self.override_class.is_some() {
                    return Err(WaflError::config("attack", "RMP takes no pair, target or override"));
                }
                None
            }
            AttackKind::Ssc | AttackKind::Sdc => {
                if self.target.is_some() || self.override_class.is_some() {
                    return Err(WaflError::config("attack", "use `pair` for swap attacks"));
                }
                Some(
                    self.pair
                        .ok_or_else(|| WaflError::config("attack.pair", "required for SSC/SDC"))?,
                )
            }
            AttackKind::Cod => {
                if self.pair.is_some() {
                    return Err(WaflError::config("attack.pair", "COD uses `target` and `override`"));
                }
                let t = self
                    .target
                    .ok_or_else(|| WaflError::config("attack.target", "required for COD"))?;
                let o = self
                    .override_class
                    .ok_or_else(|| WaflError::config("attack.override", "required for COD"))?;
                Some((t, o))
            }
        };
        let spec = AttackSpec {
            kind: self.kind,
            classes,
            training: self.training,
            seed: self.seed,
        };
        spec.validate()
            .map_err(|e| WaflError::config("attack", e.to_string()))?;
        Ok(spec)
    }
}

mod defaults {
    pub fn data_dir() -> std::path::PathBuf {
        "data/mnist".into()
    }
    pub fn output_dir() -> std::path::PathBuf {
        "runs/default".into()
    }
    pub fn num_nodes() -> usize {
        10
    }
    pub fn lambda() -> f64 {
        0.1
    }
    pub fn learning_rate() -> f64 {
        1e-3
    }
    pub fn batch_size() -> usize {
        64
    }
    pub fn total_epochs() -> u64 {
        2500
    }
    pub fn eval_interval() -> u64 {
        10
    }
    pub fn confusion_interval() -> u64 {
        500
    }
    pub fn subset_fraction() -> f64 {
        1.0
    }
    pub fn majority_fraction() -> f64 {
        0.9
    }
    pub fn mount_node() -> usize {
        9
    }
    pub fn attack_start() -> u64 {
        500
    }
    pub fn attack_end() -> u64 {
        2000
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Directory holding the four standard MNIST IDX files (optionally `.gz`).
    #[serde(default = "defaults::data_dir")]
    pub data_dir: PathBuf,
    #[serde(default = "defaults::num_nodes")]
    pub num_nodes: usize,
    #[serde(default)]
    pub topology: TopologyKind,
    #[serde(default = "defaults::lambda")]
    pub lambda: f64,
    #[serde(default = "defaults::learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    #[serde(default = "defaults::total_epochs")]
    pub total_epochs: u64,
    #[serde(default = "defaults::eval_interval")]
    pub eval_interval: u64,
    /// Confusion matrices and edge lists are written at multiples of this (0 = never).
    #[serde(default = "defaults::confusion_interval")]
    pub confusion_interval: u64,
    /// Epochs at which every node's model is saved.
    #[serde(default)]
    pub snapshot_epochs: Vec<u64>,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub precision: Precision,
    #[serde(default = "defaults::output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub shared_init: bool,
    #[serde(default)]
    pub reset_optimizer_per_epoch: bool,
    #[serde(default)]
    pub self_train_epochs: u64,
    #[serde(default = "defaults::subset_fraction")]
    pub subset_fraction: f64,
    #[serde(default = "defaults::majority_fraction")]
    pub majority_fraction: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attack: Option<AttackConfig>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        toml::from_str("").expect("empty config uses defaults")
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| WaflError::Config {
            field: "config".into(),
            reason: e.message().to_string() + &e.span().map(|s| format!(" (at byte {})", s.start)).unwrap_or_default(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| WaflError::io(format!("reading {}", path.display()), e))?;
        let mut cfg = Self::from_toml_str(&text)?;
        // Relative paths in a config file are relative to that file.
        if let Some(base) = path.parent() {
            cfg.rebase(base);
        }
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.data_dir);
        fix(&mut self.output_dir);
        if let Some(path) = self.attack.as_mut().and_then(|a| a.poison_model_path.as_mut()) {
            fix(path);
        }
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return Err(WaflError::config(
                "lambda",
                format!("{} is outside (0, 1]", self.lambda),
            ));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(WaflError::config("learning_rate", "must be finite and non-negative"));
        }
        if self.batch_size == 0 {
            return Err(WaflError::config("batch_size", "must be positive"));
        }
        if self.num_nodes != 10 {
            return Err(WaflError::config(
                "num_nodes",
                format!(
                    "{} unsupported: the label-skew partition needs one node per MNIST class (10)",
                    self.num_nodes
                ),
            ));
        }
        if self.eval_interval == 0 {
            return Err(WaflError::config("eval_interval", "must be positive"));
        }
        if !(self.subset_fraction > 0.0 && self.subset_fraction <= 1.0) {
            return Err(WaflError::config(
                "subset_fraction",
                format!("{} is outside (0, 1]", self.subset_fraction),
            ));
        }
        if !(0.0..=1.0).contains(&self.majority_fraction) {
            return Err(WaflError::config("majority_fraction", "must lie in [0, 1]"));
        }
        if let Some(a) = &self.attack {
            if a.end < a.start {
                return Err(WaflError::config(
                    "attack.start/attack.end",
                    format!("attack.end ({}) is before attack.start ({})", a.end, a.start),
                ));
            }
            if a.end > self.total_epochs {
                return Err(WaflError::config(
                    "attack.end",
                    format!("{} exceeds total_epochs ({})", a.end, self.total_epochs),
                ));
            }
            if a.mount_node >= self.num_nodes {
                return Err(WaflError::config(
                    "attack.mount_node",
                    format!("{} is not below num_nodes ({})", a.mount_node, self.num_nodes),
                ));
            }
            a.spec()?;
        }
        Ok(())
    }
}
