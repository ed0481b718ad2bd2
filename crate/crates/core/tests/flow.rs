mod common;

use std::sync::Arc;

use wafl_core::metrics::flow_decomposition;
use wafl_core::{
    run_epoch, AdamConfig, AttackerMount, AttackerState, EpochConfig, ModelParams, NodeState, OptimizerState, Peer,
    TopologySchedule,
};
use wafl_core::{LabeledDataset, Layout};

fn nodes(n: usize) -> Vec<NodeState<f32>> {
    (0..n)
        .map(|i| {
            let data: LabeledDataset<f32> = common::synthetic_dataset(150, 784, 40 + i as u64);
            let p = ModelParams::init_uniform(Layout::MNIST, 100 + i as u64);
            let opt = OptimizerState::for_params(&p, AdamConfig::default());
            NodeState::new(i, p, opt, Arc::new(data))
        })
        .collect()
}

#[test]
fn three_node_line_satisfies_flow_identities_every_epoch() {
    let mut ns = nodes(3);
    let poison = AttackerState::new(ModelParams::init_uniform(Layout::MNIST, 999));
    let topo = TopologySchedule::static_line(3)
        .unwrap()
        .with_attacker(AttackerMount {
            node: 2,
            start: 20,
            end: 40,
        })
        .unwrap();
    let cfg = EpochConfig::default();
    for epoch in 0..50 {
        let trace = run_epoch(&mut ns, Some(&poison), &topo, epoch, &cfg).unwrap();
        for c in 0..3 {
            let f = flow_decomposition(&trace, c, cfg.lambda).unwrap();
            assert!(
                f.relative_epoch_residual() < 1e-5,
                "epoch {epoch} node {c}: {}",
                f.relative_epoch_residual()
            );
            let agg = trace.node(c).unwrap();
            let agg_delta = agg.aggregated.sub(&agg.start).unwrap().l2_norm();
            assert!(
                f.aggregation_residual <= 1e-5 * agg_delta.max(1e-30),
                "epoch {epoch} node {c}"
            );
            let attacked = f.neighbor_flows.iter().any(|(p, _)| *p == Peer::Attacker);
            assert_eq!(attacked, c == 2 && (20..40).contains(&epoch));
        }
    }
}

#[test]
fn without_training_the_local_flow_vanishes() {
    let mut ns = nodes(3);
    let topo = TopologySchedule::static_line(3).unwrap();
    let cfg = EpochConfig {
        local_training: false,
        ..EpochConfig::default()
    };
    let trace = run_epoch(&mut ns, None, &topo, 0, &cfg).unwrap();
    for c in 0..3 {
        let f = flow_decomposition(&trace, c, cfg.lambda).unwrap();
        assert_eq!(f.local_norm(), 0.0);
    }
}
