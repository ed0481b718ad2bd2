//! Deterministic simulation of wireless ad hoc federated learning: nodes
//! train a small MNIST classifier locally and average models with their
//! current radio neighbours, optionally next to a node broadcasting a
//! poisoned model.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases at
//! the bottom of this file name the common instantiations.

pub mod attacks;
pub mod config;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod nn;
pub mod protocol;
pub mod scalar;
pub mod seed;
pub mod topology;

pub use attacks::{make_poison, AttackKind, AttackSpec, AttackTraining};
pub use config::{AttackConfig, ExperimentConfig, Precision, TopologyKind};
pub use dataset::{LabeledDataset, PartitionPlan, NUM_CLASSES};
pub use error::{Result, WaflError};
pub use experiment::{run_to_directory, Experiment, MnistData, RunSummary};
pub use metrics::{evaluate, ConfusionMatrix, Evaluation, FlowDecomposition, MetricsRecord, MetricsSink};
pub use nn::{AdamConfig, Layer, Layout, ModelParams, OptimizerState};
pub use protocol::{aggregate, run_epoch, AttackerState, EpochConfig, EpochTrace, NodeState};
pub use scalar::Scalar;
pub use topology::{AttackerMount, Peer, Topology, TopologySchedule};

pub type ModelParams32 = ModelParams<f32>;
pub type ModelParams64 = ModelParams<f64>;
pub type LabeledDataset32 = LabeledDataset<f32>;
pub type LabeledDataset64 = LabeledDataset<f64>;
pub type NodeState32 = NodeState<f32>;
pub type NodeState64 = NodeState<f64>;
pub type Experiment32 = Experiment<f32>;
pub type Experiment64 = Experiment<f64>;
