//! End-to-end runs: data preparation, node construction, the epoch loop,
//! periodic evaluation and run-directory output.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::attacks::{make_poison, AttackSpec};
use crate::config::{ExperimentConfig, Precision};
use crate::dataset::{load_idx, partition_noniid, LabeledDataset, PartitionPlan};
use crate::error::{Result, WaflError};
use crate::metrics::{evaluate, flow_decomposition, layer_distance, CsvSink, MetricsRecord, MetricsSink};
use crate::nn::{load_snapshot, save_snapshot, AdamConfig, Layer, Layout, ModelParams, OptimizerState};
use crate::protocol::{run_epoch, AttackerState, EpochConfig, EpochTrace, NodeState};
use crate::scalar::Scalar;
use crate::seed::{self, Stream};
use crate::topology::{AttackerMount, TopologySchedule};

/// Shuffle coordinates for pre-collaboration self-training start here so
/// they never collide with collaborative epochs.
const SELF_TRAIN_EPOCH_BASE: u64 = 1 << 48;

fn find_file(dir: &Path, stem: &str) -> Result<PathBuf> {
    for name in [stem.to_string(), format!("{stem}.gz")] {
        let p = dir.join(name);
        if p.is_file() {
            return Ok(p);
        }
    }
    Err(WaflError::io(
        format!("looking for {stem} in {}", dir.display()),
        std::io::Error::from(std::io::ErrorKind::NotFound),
    ))
}

/// MNIST train and test splits.
#[derive(Debug, Clone)]
pub struct MnistData<T> {
    pub train: Arc<LabeledDataset<T>>,
    pub test: Arc<LabeledDataset<T>>,
}

impl<T: Scalar> MnistData<T> {
    /// Loads `train-*-idx?-ubyte` and `t10k-*-idx?-ubyte` (plain or `.gz`) from `dir`.
    pub fn load(dir: &Path) -> Result<Self> {
        let train = load_idx(
            &find_file(dir, "train-images-idx3-ubyte")?,
            &find_file(dir, "train-labels-idx1-ubyte")?,
        )?;
        let test = load_idx(
            &find_file(dir, "t10k-images-idx3-ubyte")?,
            &find_file(dir, "t10k-labels-idx1-ubyte")?,
        )?;
        Ok(Self {
            train: Arc::new(train),
            test: Arc::new(test),
        })
    }

    pub fn cast<U: Scalar>(&self) -> MnistData<U> {
        MnistData {
            train: Arc::new(self.train.cast()),
            test: Arc::new(self.test.cast()),
        }
    }
}

pub fn init_seed(cfg: &ExperimentConfig, node: usize) -> u64 {
    let coord = if cfg.shared_init { u64::MAX } else { node as u64 };
    seed::derive(cfg.master_seed, Stream::Init, &[coord])
}

/// Builds the poisoned model the config asks for: loaded from
/// `poison_model_path` when set, generated otherwise.
pub fn prepare_poison<T: Scalar>(cfg: &ExperimentConfig, train: &LabeledDataset<T>) -> Result<Option<ModelParams<T>>> {
    let Some(attack) = &cfg.attack else {
        return Ok(None);
    };
    let poison = match &attack.poison_model_path {
        Some(path) => load_snapshot(path)?,
        None => make_poison(&attack.spec()?, Layout::MNIST, Some(train))?,
    };
    Ok(Some(poison))
}

/// A fully prepared run.
pub struct Experiment<T> {
    cfg: ExperimentConfig,
    nodes: Vec<NodeState<T>>,
    attacker: Option<AttackerState<T>>,
    topology: TopologySchedule,
    test: Arc<LabeledDataset<T>>,
    plan: PartitionPlan,
}

#[derive(Debug, Clone)]
pub struct RunSummary<T> {
    pub final_params: Vec<ModelParams<T>>,
    /// Poison digest checked after every epoch of the run.
    pub attacker_digest: Option<[u8; 32]>,
    pub evaluations: usize,
}

impl<T: Scalar> Experiment<T> {
    /// `poison` overrides whatever the config's attack section would produce.
    pub fn new(cfg: ExperimentConfig, data: &MnistData<T>, poison: Option<ModelParams<T>>) -> Result<Self> {
        cfg.validate()?;
        let plan = partition_noniid(&data.train, cfg.num_nodes, cfg.majority_fraction, cfg.master_seed)?;
        let layout = Layout::MNIST;
        let nodes = (0..cfg.num_nodes)
            .map(|n| {
                let part = plan.node_dataset(&data.train, n).subsample(
                    cfg.subset_fraction,
                    seed::derive(cfg.master_seed, Stream::Subset, &[n as u64]),
                )?;
                let params = ModelParams::init_uniform(layout, init_seed(&cfg, n));
                let opt = OptimizerState::for_params(&params, AdamConfig::with_learning_rate(cfg.learning_rate));
                Ok(NodeState::new(n, params, opt, Arc::new(part)))
            })
            .collect::<Result<Vec<_>>>()?;

        let mut topology = TopologySchedule::static_line(cfg.num_nodes)?;
        let attacker = match &cfg.attack {
            None => None,
            Some(a) => {
                topology = topology.with_attacker(AttackerMount {
                    node: a.mount_node,
                    start: a.start,
                    end: a.end,
                })?;
                let poison = match poison {
                    Some(p) => p,
                    None => prepare_poison(&cfg, &data.train)?.expect("attack configured"),
                };
                if poison.layout() != layout {
                    return Err(WaflError::contract(
                        "poisoned model does not match the node model shape",
                    ));
                }
                Some(AttackerState::new(poison))
            }
        };
        Ok(Self {
            cfg,
            nodes,
            attacker,
            topology,
            test: data.test.clone(),
            plan,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn topology(&self) -> &TopologySchedule {
        &self.topology
    }

    pub fn partition(&self) -> &PartitionPlan {
        &self.plan
    }

    pub fn nodes(&self) -> &[NodeState<T>] {
        &self.nodes
    }

    pub fn poison(&self) -> Option<&ModelParams<T>> {
        self.attacker.as_ref().map(|a| a.params())
    }

    fn epoch_config(&self) -> EpochConfig {
        EpochConfig {
            lambda: self.cfg.lambda,
            batch_size: self.cfg.batch_size,
            master_seed: self.cfg.master_seed,
            local_training: true,
            reset_optimizer_per_epoch: self.cfg.reset_optimizer_per_epoch,
        }
    }

    fn self_train(&mut self) -> Result<()> {
        let (bs, master) = (self.cfg.batch_size, self.cfg.master_seed);
        for k in 0..self.cfg.self_train_epochs {
            self.nodes.par_iter_mut().try_for_each(|node| {
                let s = crate::protocol::shuffle_seed(master, node.id, SELF_TRAIN_EPOCH_BASE + k);
                node.train_one_pass(bs, s).map(|_| ())
            })?;
        }
        Ok(())
    }

    fn evaluate_all(
        &self,
        completed: u64,
        trace: Option<&EpochTrace<T>>,
        with_confusion: bool,
    ) -> Result<Vec<MetricsRecord>> {
        let poison = self.poison();
        let lambda = self.cfg.lambda;
        self.nodes
            .par_iter()
            .map(|node| {
                let ev = evaluate(&node.params, &self.test)?;
                let flows = trace.map(|t| flow_decomposition(t, node.id, lambda)).transpose()?;
                Ok(MetricsRecord {
                    epoch: completed,
                    node: node.id,
                    accuracy: ev.accuracy,
                    loss: ev.loss,
                    distance_fc1: poison.map(|p| layer_distance(&node.params, p, Layer::Fc1Weight)),
                    flow_neighbors: flows.as_ref().map(|f| f.neighbor_norms()).unwrap_or_default(),
                    flow_sum_l2: flows.as_ref().map(|f| f.neighbor_sum_norm()),
                    flow_local_l2: flows.as_ref().map(|f| f.local_norm()),
                    flow_balance_l2: flows.as_ref().map(|f| f.balance_residual()),
                    confusion: with_confusion.then_some(ev.confusion),
                })
            })
            .collect()
    }

    fn is_checkpoint(&self, completed: u64) -> bool {
        self.cfg.confusion_interval > 0 && completed.is_multiple_of(self.cfg.confusion_interval)
    }

    /// Runs every epoch, emitting evaluations (after training) at epoch 0,
    /// every `eval_interval` epochs and at the final epoch.
    pub fn run(&mut self, sink: &mut dyn MetricsSink, out_dir: Option<&Path>) -> Result<RunSummary<T>> {
        self.self_train()?;
        let digest = self.attacker.as_ref().map(|a| a.digest());
        let total = self.cfg.total_epochs;
        let mut evaluations = 0;

        self.emit(0, None, sink, out_dir)?;
        evaluations += 1;
        let ecfg = self.epoch_config();
        for epoch in 0..total {
            let trace = run_epoch(&mut self.nodes, self.attacker.as_ref(), &self.topology, epoch, &ecfg)?;
            if let (Some(a), Some(d)) = (&self.attacker, digest) {
                if a.digest() != d {
                    return Err(WaflError::contract(format!("poisoned model changed at epoch {epoch}")));
                }
            }
            let completed = epoch + 1;
            if completed.is_multiple_of(self.cfg.eval_interval) || completed == total {
                self.emit(completed, Some(&trace), sink, out_dir)?;
                evaluations += 1;
            }
            if let Some(dir) = out_dir {
                if self.cfg.snapshot_epochs.contains(&completed) {
                    self.save_snapshots(completed, dir)?;
                }
            }
        }
        sink.finish()?;
        Ok(RunSummary {
            final_params: self.nodes.iter().map(|n| n.params.clone()).collect(),
            attacker_digest: digest,
            evaluations,
        })
    }

    fn emit(
        &self,
        completed: u64,
        trace: Option<&EpochTrace<T>>,
        sink: &mut dyn MetricsSink,
        out_dir: Option<&Path>,
    ) -> Result<()> {
        let checkpoint = self.is_checkpoint(completed);
        for r in self.evaluate_all(completed, trace, checkpoint)? {
            sink.record(&r)?;
        }
        if let (true, Some(dir)) = (checkpoint, out_dir) {
            let path = dir.join(format!("edges_e{completed}.csv"));
            let f = fs::File::create(&path).map_err(|e| WaflError::io(format!("creating {}", path.display()), e))?;
            // Edges in effect during the epoch that produced these models.
            self.topology
                .write_edges_csv(completed.saturating_sub(1), f)
                .map_err(|e| WaflError::io(format!("writing {}", path.display()), e))?;
        }
        Ok(())
    }

    fn save_snapshots(&self, completed: u64, dir: &Path) -> Result<()> {
        for node in &self.nodes {
            save_snapshot(
                &node.params,
                &dir.join(format!("snapshot_e{completed}_n{}.waflm", node.id)),
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    artifact: &'static str,
    version: &'static str,
    precision: &'static str,
    config: &'a ExperimentConfig,
    attack_spec: Option<AttackSpec>,
    node_init_seeds: Vec<u64>,
    partition_seed: u64,
    poison_sha256: Option<String>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Exclusive claim on an output directory, released on drop.
struct DirLock(PathBuf);

impl DirLock {
    fn acquire(dir: &Path) -> Result<Self> {
        let path = dir.join(".lock");
        fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .map_err(|e| WaflError::io(format!("locking {} (is another run using it?)", dir.display()), e))?;
        Ok(Self(path))
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

/// Loads data, runs the experiment and writes `metrics.csv`, confusion
/// matrices, edge lists, snapshots, `poison.waflm` and `manifest.json`
/// into `cfg.output_dir`.
pub fn run_to_directory(cfg: &ExperimentConfig) -> Result<()> {
    match cfg.precision {
        Precision::F32 => run_to_directory_typed::<f32>(cfg, None),
        Precision::F64 => run_to_directory_typed::<f64>(cfg, None),
    }
}

pub fn run_to_directory_typed<T: Scalar>(cfg: &ExperimentConfig, data: Option<&MnistData<T>>) -> Result<()> {
    cfg.validate()?;
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir).map_err(|e| WaflError::io(format!("creating {}", dir.display()), e))?;
    let _lock = DirLock::acquire(dir)?;
    let loaded;
    let data = match data {
        Some(d) => d,
        None => {
            loaded = MnistData::<T>::load(&cfg.data_dir)?;
            &loaded
        }
    };
    let mut exp = Experiment::new(cfg.clone(), data, None)?;
    if let Some(p) = exp.poison() {
        save_snapshot(p, &dir.join("poison.waflm"))?;
    }
    let manifest = Manifest {
        artifact: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        precision: T::NAME,
        config: cfg,
        attack_spec: cfg.attack.as_ref().map(|a| a.spec()).transpose()?,
        node_init_seeds: (0..cfg.num_nodes).map(|n| init_seed(cfg, n)).collect(),
        partition_seed: cfg.master_seed,
        poison_sha256: exp.attacker.as_ref().map(|a| hex(&a.digest())),
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| WaflError::Serde(e.to_string()))?;
    fs::write(&path, text + "\n").map_err(|e| WaflError::io(format!("writing {}", path.display()), e))?;

    let mut sink = CsvSink::create(dir)?;
    exp.run(&mut sink, Some(dir))?;
    Ok(())
}
