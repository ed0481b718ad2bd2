//! Poisoned-model factories for the four attack classes.
//!
//! * RMP: an untrained, randomly initialised model.
//! * SSC / SDC: a model trained on data with a class pair's labels swapped
//!   (a visually similar pair for SSC, a dissimilar one for SDC).
//! * COD: a model trained on data where every `target` label is replaced by
//!   `override`, so it never learns to output `target`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::{depress_label, swap_labels, LabeledDataset, NUM_CLASSES};
use crate::error::{Result, WaflError};
use crate::nn::{AdamConfig, Layout, ModelParams, OptimizerState, Trainer};
use crate::scalar::Scalar;
use crate::seed::{self, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum AttackKind {
    Rmp,
    Ssc,
    Sdc,
    Cod,
}

impl AttackKind {
    /// Class pair evaluated by default for each trained kind.
    pub fn default_classes(self) -> Option<(usize, usize)> {
        match self {
            AttackKind::Rmp => None,
            AttackKind::Ssc => Some((4, 9)),
            AttackKind::Sdc => Some((1, 6)),
            AttackKind::Cod => Some((0, 6)),
        }
    }
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttackKind::Rmp => "RMP",
            AttackKind::Ssc => "SSC",
            AttackKind::Sdc => "SDC",
            AttackKind::Cod => "COD",
        })
    }
}

impl FromStr for AttackKind {
    type Err = WaflError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "RMP" => Ok(AttackKind::Rmp),
            "SSC" => Ok(AttackKind::Ssc),
            "SDC" => Ok(AttackKind::Sdc),
            "COD" => Ok(AttackKind::Cod),
            _ => Err(WaflError::input(format!("unknown attack kind `{s}`"))),
        }
    }
}

/// Hyperparameters for training a poisoned model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackTraining {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for AttackTraining {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 64,
            learning_rate: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSpec {
    pub kind: AttackKind,
    /// `(a, b)` for SSC/SDC, `(target, override)` for COD, absent for RMP.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classes: Option<(usize, usize)>,
    #[serde(default)]
    pub training: AttackTraining,
    #[serde(default)]
    pub seed: u64,
}

impl AttackSpec {
    pub fn new(kind: AttackKind, seed: u64) -> Self {
        Self {
            kind,
            classes: kind.default_classes(),
            training: AttackTraining::default(),
            seed,
        }
    }

    pub fn with_classes(mut self, a: usize, b: usize) -> Self {
        self.classes = Some((a, b));
        self
    }

    pub fn validate(&self) -> Result<()> {
        match (self.kind, self.classes) {
            (AttackKind::Rmp, Some(_)) => Err(WaflError::input("RMP takes no class pair")),
            (AttackKind::Rmp, None) => Ok(()),
            (kind, None) => Err(WaflError::input(format!("{kind} needs a class pair"))),
            (kind, Some((a, b))) => {
                if a >= NUM_CLASSES || b >= NUM_CLASSES {
                    return Err(WaflError::input(format!("{kind} classes ({a}, {b}) outside [0, 9]")));
                }
                if a == b {
                    return Err(WaflError::input(format!(
                        "{kind} needs two distinct classes, got ({a}, {b})"
                    )));
                }
                if self.training.epochs == 0 || self.training.batch_size == 0 {
                    return Err(WaflError::input("attack training needs positive epochs and batch size"));
                }
                if !(self.training.learning_rate >= 0.0 && self.training.learning_rate.is_finite()) {
                    return Err(WaflError::input("attack learning rate must be finite and non-negative"));
                }
                Ok(())
            }
        }
    }

    pub fn needs_training_data(&self) -> bool {
        self.kind != AttackKind::Rmp
    }
}

/// A freshly initialised, untrained model.
pub fn make_rmp<T: Scalar>(layout: Layout, seed: u64) -> ModelParams<T> {
    ModelParams::init_uniform(layout, seed::derive(seed, Stream::Poison, &[]))
}

fn train_fresh<T: Scalar>(data: &LabeledDataset<T>, layout: Layout, spec: &AttackSpec) -> Result<ModelParams<T>> {
    let mut params = make_rmp(layout, spec.seed);
    let mut opt = OptimizerState::for_params(&params, AdamConfig::with_learning_rate(spec.training.learning_rate));
    let mut trainer = Trainer::new();
    for epoch in 0..spec.training.epochs {
        let s = seed::derive(spec.seed, Stream::Poison, &[1, epoch as u64]);
        trainer.train_one_pass(&mut params, &mut opt, data, spec.training.batch_size, s)?;
    }
    Ok(params)
}

/// Trains a fresh model on `train` with labels `a` and `b` exchanged.
pub fn make_swap_attack<T: Scalar>(
    train: &LabeledDataset<T>,
    layout: Layout,
    a: usize,
    b: usize,
    spec: &AttackSpec,
) -> Result<ModelParams<T>> {
    let swapped = swap_labels(train, a, b)?;
    train_fresh(&swapped, layout, spec)
}

/// Trains a fresh model on `train` with every `target` label replaced by `replacement`.
pub fn make_cod_attack<T: Scalar>(
    train: &LabeledDataset<T>,
    layout: Layout,
    target: usize,
    replacement: usize,
    spec: &AttackSpec,
) -> Result<ModelParams<T>> {
    let depressed = depress_label(train, target, replacement)?;
    train_fresh(&depressed, layout, spec)
}

/// Builds the poisoned model described by `spec`. Trained kinds need `train`.
pub fn make_poison<T: Scalar>(
    spec: &AttackSpec,
    layout: Layout,
    train: Option<&LabeledDataset<T>>,
) -> Result<ModelParams<T>> {
    spec.validate()?;
    let need = || train.ok_or_else(|| WaflError::input(format!("{} attack needs a training set", spec.kind)));
    match (spec.kind, spec.classes) {
        (AttackKind::Rmp, _) => Ok(make_rmp(layout, spec.seed)),
        (AttackKind::Ssc | AttackKind::Sdc, Some((a, b))) => make_swap_attack(need()?, layout, a, b, spec),
        (AttackKind::Cod, Some((t, o))) => make_cod_attack(need()?, layout, t, o, spec),
        _ => unreachable!("validated above"),
    }
}
