//! The synchronous epoch engine: neighbour aggregation, local mini-batch
//! training and attacker injection.
//!
//! Every epoch first snapshots all legitimate parameters; each node then
//! aggregates against those snapshots (never against a neighbour's
//! already-updated model), so the result does not depend on node order.

use std::collections::BTreeSet;
use std::sync::Arc;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::dataset::LabeledDataset;
use crate::error::{Result, WaflError};
use crate::nn::{ModelParams, OptimizerState, Trainer};
use crate::scalar::Scalar;
use crate::seed::{self, Stream};
use crate::topology::{Peer, Topology};

/// `own + lambda * sum_k(neighbor_k - own) / (|neighbors| + 1)`, elementwise.
pub fn aggregate_slices<T: Scalar>(own: &[T], neighbors: &[&[T]], lambda: T) -> Result<Vec<T>> {
    if let Some(bad) = neighbors.iter().find(|n| n.len() != own.len()) {
        return Err(WaflError::contract(format!(
            "neighbour model has {} parameters, own model {}",
            bad.len(),
            own.len()
        )));
    }
    if neighbors.is_empty() {
        return Ok(own.to_vec());
    }
    let scale = lambda / T::from_usize(neighbors.len() + 1).expect("degree fits scalar");
    Ok(own
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let pull: T = neighbors.iter().map(|n| n[i] - x).sum();
            x + scale * pull
        })
        .collect())
}

pub fn aggregate<T: Scalar>(
    own: &ModelParams<T>,
    neighbors: &[&ModelParams<T>],
    lambda: f64,
) -> Result<ModelParams<T>> {
    check_lambda(lambda)?;
    for n in neighbors {
        own.ensure_same_shape(n)?;
    }
    let views: Vec<&[T]> = neighbors.iter().map(|n| n.as_slice()).collect();
    let data = aggregate_slices(own.as_slice(), &views, T::from_f64_lossy(lambda))?;
    ModelParams::from_flat(own.layout(), data)
}

pub(crate) fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(WaflError::input(format!("lambda {lambda} outside (0, 1]")));
    }
    Ok(())
}

/// One legitimate node: parameters, its own Adam state, and its local data.
#[derive(Debug, Clone)]
pub struct NodeState<T> {
    pub id: usize,
    pub params: ModelParams<T>,
    pub optimizer: OptimizerState<T>,
    pub partition: Arc<LabeledDataset<T>>,
    trainer: Trainer<T>,
}

impl<T: Scalar> NodeState<T> {
    pub fn new(
        id: usize,
        params: ModelParams<T>,
        optimizer: OptimizerState<T>,
        partition: Arc<LabeledDataset<T>>,
    ) -> Self {
        Self {
            id,
            params,
            optimizer,
            partition,
            trainer: Trainer::new(),
        }
    }

    /// Local mini-batch pass; the trained parameters replace the current ones.
    pub fn train_one_pass(&mut self, batch_size: usize, shuffle_seed: u64) -> Result<crate::nn::PassReport> {
        self.trainer.train_one_pass(
            &mut self.params,
            &mut self.optimizer,
            &self.partition,
            batch_size,
            shuffle_seed,
        )
    }
}

/// The attacker only offers a fixed poisoned model; it never aggregates or trains.
#[derive(Debug, Clone)]
pub struct AttackerState<T> {
    params: Arc<ModelParams<T>>,
}

impl<T: Scalar> AttackerState<T> {
    pub fn new(params: ModelParams<T>) -> Self {
        Self {
            params: Arc::new(params),
        }
    }

    pub fn params(&self) -> &ModelParams<T> {
        &self.params
    }

    /// SHA-256 over the little-endian bytes of the parameter vector.
    pub fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for v in self.params.as_slice() {
            h.update(v.as_f64().to_le_bytes());
        }
        h.finalize().into()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochConfig {
    pub lambda: f64,
    pub batch_size: usize,
    pub master_seed: u64,
    /// Run the local mini-batch pass after aggregation.
    pub local_training: bool,
    pub reset_optimizer_per_epoch: bool,
}

impl Default for EpochConfig {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            batch_size: 64,
            master_seed: 0,
            local_training: true,
            reset_optimizer_per_epoch: false,
        }
    }
}

/// Shuffle seed for node `node` at `epoch`.
pub fn shuffle_seed(master: u64, node: usize, epoch: u64) -> u64 {
    seed::derive(master, Stream::Shuffle, &[node as u64, epoch])
}

/// Snapshots of one node across an epoch.
#[derive(Debug, Clone)]
pub struct NodeTrace<T> {
    pub node: usize,
    pub neighbors: BTreeSet<Peer>,
    /// Parameters at epoch start.
    pub start: ModelParams<T>,
    /// After aggregation.
    pub aggregated: ModelParams<T>,
    /// After local training; the next epoch's start.
    pub trained: ModelParams<T>,
    pub train_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct EpochTrace<T> {
    pub epoch: u64,
    pub nodes: Vec<NodeTrace<T>>,
    pub attacker: Option<AttackerState<T>>,
}

impl<T: Scalar> EpochTrace<T> {
    pub fn node(&self, id: usize) -> Result<&NodeTrace<T>> {
        self.nodes
            .iter()
            .find(|n| n.node == id)
            .ok_or_else(|| WaflError::input(format!("trace has no node {id}")))
    }

    /// Epoch-start parameters of `peer`.
    pub fn start_params(&self, peer: Peer) -> Result<&ModelParams<T>> {
        match peer {
            Peer::Node(k) => Ok(&self.node(k)?.start),
            Peer::Attacker => self
                .attacker
                .as_ref()
                .map(|a| a.params())
                .ok_or_else(|| WaflError::input("trace has no attacker")),
        }
    }
}

/// Advances every node by one synchronous epoch.
///
/// `nodes[i].id` must equal `i` and match the topology's node ids.
pub fn run_epoch<T: Scalar>(
    nodes: &mut [NodeState<T>],
    attacker: Option<&AttackerState<T>>,
    topology: &dyn Topology,
    epoch: u64,
    cfg: &EpochConfig,
) -> Result<EpochTrace<T>> {
    check_lambda(cfg.lambda)?;
    if nodes.len() != topology.num_nodes() {
        return Err(WaflError::contract(format!(
            "{} node states for a topology of {} nodes",
            nodes.len(),
            topology.num_nodes()
        )));
    }
    if let Some(i) = nodes.iter().enumerate().position(|(i, n)| n.id != i) {
        return Err(WaflError::contract(format!("node slot {i} holds id {}", nodes[i].id)));
    }
    let snapshot: Vec<ModelParams<T>> = nodes.iter().map(|n| n.params.clone()).collect();
    let snapshot = &snapshot;

    let traces = nodes
        .par_iter_mut()
        .map(|node| -> Result<NodeTrace<T>> {
            let neighbors = topology.neighbors(Peer::Node(node.id), epoch)?;
            let inbound = neighbors
                .iter()
                .map(|&p| match p {
                    Peer::Node(k) => Ok(&snapshot[k]),
                    Peer::Attacker => attacker
                        .map(|a| a.params())
                        .ok_or_else(|| WaflError::contract("topology mounts an attacker but none was supplied")),
                })
                .collect::<Result<Vec<_>>>()?;
            let start = snapshot[node.id].clone();
            node.params = aggregate(&start, &inbound, cfg.lambda)?;
            let aggregated = node.params.clone();
            if cfg.reset_optimizer_per_epoch {
                node.optimizer.reset();
            }
            let train_loss = if cfg.local_training {
                let seed = shuffle_seed(cfg.master_seed, node.id, epoch);
                Some(node.train_one_pass(cfg.batch_size, seed)?.mean_loss)
            } else {
                None
            };
            if !node.params.is_finite() {
                return Err(WaflError::contract(format!(
                    "node {} produced non-finite parameters at epoch {epoch}",
                    node.id
                )));
            }
            Ok(NodeTrace {
                node: node.id,
                neighbors,
                start,
                aggregated,
                trained: node.params.clone(),
                train_loss,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(EpochTrace {
        epoch,
        nodes: traces,
        attacker: attacker.cloned(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{AdamConfig, Layout};
    use crate::topology::{AttackerMount, TopologySchedule};
    use proptest::prelude::*;

    #[test]
    fn empty_neighbourhood_is_identity() {
        assert_eq!(aggregate_slices(&[1.0f64, -2.0], &[], 0.3).unwrap(), vec![1.0, -2.0]);
    }

    #[test]
    fn scalar_example() {
        let out = aggregate_slices(&[0.0f64], &[&[3.0], &[3.0]], 0.1).unwrap();
        assert!((out[0] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn equal_neighbours_are_a_fixed_point() {
        let own = [0.25f32, -1.5, 3.0];
        let out = aggregate_slices(&own, &[&own, &own, &own], 0.7).unwrap();
        assert_eq!(out, own);
    }

    #[test]
    fn shape_mismatch_is_contract_error() {
        assert!(matches!(
            aggregate_slices(&[0.0f32; 3], &[&[0.0; 2]], 0.1),
            Err(WaflError::Contract(_))
        ));
        let a = ModelParams::<f32>::zeros(Layout::new(2, 2, 2).unwrap());
        let b = ModelParams::<f32>::zeros(Layout::new(3, 2, 2).unwrap());
        assert!(aggregate(&a, &[&b], 0.1).is_err());
    }

    #[test]
    fn lambda_domain() {
        let a = ModelParams::<f32>::zeros(Layout::new(2, 2, 2).unwrap());
        assert!(aggregate(&a, &[], 0.0).is_err());
        assert!(aggregate(&a, &[], 1.5).is_err());
        assert!(aggregate(&a, &[], 1.0).is_ok());
    }

    fn empty_data(width: usize) -> Arc<LabeledDataset<f64>> {
        Arc::new(LabeledDataset::new(width, vec![], vec![]).unwrap())
    }

    fn filled_nodes(values: &[f64], layout: Layout) -> Vec<NodeState<f64>> {
        values
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let p = ModelParams::filled(layout, v);
                let o = OptimizerState::for_params(&p, AdamConfig::default());
                NodeState::new(i, p, o, empty_data(layout.inputs))
            })
            .collect()
    }

    #[test]
    fn two_nodes_meet_halfway_with_unit_lambda() {
        let layout = Layout::new(1, 1, 2).unwrap();
        let mut nodes = filled_nodes(&[0.0, 2.0], layout);
        let topo = TopologySchedule::static_line(2).unwrap();
        let cfg = EpochConfig {
            lambda: 1.0,
            local_training: false,
            ..EpochConfig::default()
        };
        run_epoch(&mut nodes, None, &topo, 0, &cfg).unwrap();
        for n in &nodes {
            assert!(n.params.as_slice().iter().all(|&v| v == 1.0));
        }
    }

    #[test]
    fn epochs_read_start_snapshots() {
        // Sequential in-place updates would let node 1 see node 0's new value.
        let layout = Layout::new(1, 1, 2).unwrap();
        let mut nodes = filled_nodes(&[0.0, 3.0, 6.0], layout);
        let topo = TopologySchedule::static_line(3).unwrap();
        let cfg = EpochConfig {
            lambda: 1.0,
            local_training: false,
            ..EpochConfig::default()
        };
        let trace = run_epoch(&mut nodes, None, &topo, 0, &cfg).unwrap();
        assert_eq!(nodes[0].params.as_slice()[0], 1.5);
        assert_eq!(nodes[1].params.as_slice()[0], 3.0);
        assert_eq!(nodes[2].params.as_slice()[0], 4.5);
        assert_eq!(trace.node(1).unwrap().start.as_slice()[0], 3.0);
    }

    #[test]
    fn attacker_edge_requires_attacker_state() {
        let layout = Layout::new(1, 1, 2).unwrap();
        let mut nodes = filled_nodes(&[0.0, 0.0], layout);
        let topo = TopologySchedule::static_line(2)
            .unwrap()
            .with_attacker(AttackerMount {
                node: 0,
                start: 0,
                end: 5,
            })
            .unwrap();
        let cfg = EpochConfig {
            local_training: false,
            ..EpochConfig::default()
        };
        assert!(run_epoch(&mut nodes, None, &topo, 0, &cfg).is_err());
        let attacker = AttackerState::new(ModelParams::filled(layout, 3.0));
        run_epoch(&mut nodes, Some(&attacker), &topo, 0, &cfg).unwrap();
        assert!((nodes[0].params.as_slice()[0] - 0.1).abs() < 1e-15);
        assert_eq!(nodes[1].params.as_slice()[0], 0.0);
    }

    #[test]
    fn digest_tracks_content() {
        let layout = Layout::new(2, 2, 2).unwrap();
        let a = AttackerState::new(ModelParams::<f32>::init_uniform(layout, 1));
        let b = AttackerState::new(ModelParams::<f32>::init_uniform(layout, 2));
        assert_eq!(a.digest(), a.clone().digest());
        assert_ne!(a.digest(), b.digest());
    }

    proptest! {
        #[test]
        fn output_stays_in_neighbourhood_hull(
            own in proptest::collection::vec(-10.0f64..10.0, 4),
            nbrs in proptest::collection::vec(proptest::collection::vec(-10.0f64..10.0, 4), 0..5),
            lambda in 0.001f64..=1.0,
        ) {
            let views: Vec<&[f64]> = nbrs.iter().map(|v| v.as_slice()).collect();
            let out = aggregate_slices(&own, &views, lambda).unwrap();
            for i in 0..4 {
                let lo = nbrs.iter().map(|v| v[i]).fold(own[i], f64::min);
                let hi = nbrs.iter().map(|v| v[i]).fold(own[i], f64::max);
                prop_assert!(out[i] >= lo - 1e-12 && out[i] <= hi + 1e-12);
            }
        }
    }
}
