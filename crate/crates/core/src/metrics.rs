//! Evaluation and analysis: accuracy, confusion matrices, distance from the
//! poisoned model, flow decomposition and windowed averages.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{LabeledDataset, NUM_CLASSES};
use crate::error::{Result, WaflError};
use crate::nn::{argmax, cross_entropy_sum, l2, predict, Layer, ModelParams};
use crate::protocol::EpochTrace;
use crate::scalar::Scalar;
use crate::topology::{Peer, TopologySchedule};

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConfusionMatrix(pub [[u64; NUM_CLASSES]; NUM_CLASSES]);

impl ConfusionMatrix {
    pub fn add(&mut self, truth: usize, predicted: usize) {
        self.0[truth][predicted] += 1;
    }

    pub fn total(&self) -> u64 {
        self.0.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..NUM_CLASSES).map(|i| self.0[i][i]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            t => self.trace() as f64 / t as f64,
        }
    }

    pub fn row_total(&self, class: usize) -> u64 {
        self.0[class].iter().sum()
    }

    /// Fraction of true `class` samples predicted as `class`.
    pub fn recall(&self, class: usize) -> f64 {
        self.rate(class, class)
    }

    /// Fraction of true `truth` samples predicted as `predicted`.
    pub fn rate(&self, truth: usize, predicted: usize) -> f64 {
        match self.row_total(truth) {
            0 => 0.0,
            t => self.0[truth][predicted] as f64 / t as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub loss: f64,
    pub confusion: ConfusionMatrix,
}

const EVAL_CHUNK: usize = 1000;

/// Full-set evaluation: argmax accuracy, mean cross-entropy, confusion matrix.
pub fn evaluate<T: Scalar>(params: &ModelParams<T>, test: &LabeledDataset<T>) -> Result<Evaluation> {
    if test.is_empty() {
        return Err(WaflError::input("evaluation set is empty"));
    }
    let classes = params.layout().classes;
    if classes != NUM_CLASSES {
        return Err(WaflError::contract(format!(
            "confusion matrix needs {NUM_CLASSES} classes, model has {classes}"
        )));
    }
    let width = test.width();
    let mut confusion = ConfusionMatrix::default();
    let mut loss = 0.0;
    for (rows, labels) in test
        .images()
        .chunks(EVAL_CHUNK * width)
        .zip(test.labels().chunks(EVAL_CHUNK))
    {
        let logits = predict(params, rows)?;
        loss += cross_entropy_sum(&logits, labels, classes);
        for (row, &y) in logits.chunks_exact(classes).zip(labels) {
            confusion.add(y as usize, argmax(row));
        }
    }
    Ok(Evaluation {
        accuracy: confusion.accuracy(),
        loss: loss / test.len() as f64,
        confusion,
    })
}

/// Euclidean distance between two models restricted to one named layer.
pub fn distance_from_poison<T: Scalar>(params: &ModelParams<T>, poison: &ModelParams<T>, layer: &str) -> Result<f64> {
    let layer: Layer = layer.parse()?;
    params.ensure_same_shape(poison)?;
    Ok(layer_distance(params, poison, layer))
}

pub(crate) fn layer_distance<T: Scalar>(a: &ModelParams<T>, b: &ModelParams<T>, layer: Layer) -> f64 {
    a.layer(layer)
        .iter()
        .zip(b.layer(layer))
        .map(|(&x, &y)| (x.as_f64() - y.as_f64()).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Per-epoch displacement of one node split into neighbour flows and the
/// local-training flow, evaluated in f64 from the trace snapshots.
#[derive(Debug, Clone)]
pub struct FlowDecomposition {
    pub node: usize,
    pub epoch: u64,
    /// `F_{k->c} = lambda (theta_k - theta_c) / (|nbr(c)| + 1)` per neighbour.
    pub neighbor_flows: Vec<(Peer, Vec<f64>)>,
    /// `F_D = trained - aggregated`.
    pub local_flow: Vec<f64>,
    /// `||aggregated - start - sum F||`
    pub aggregation_residual: f64,
    /// `||trained - start - sum F - F_D||`
    pub epoch_residual: f64,
    /// `||trained - start||`
    pub epoch_delta_norm: f64,
}

impl FlowDecomposition {
    pub fn neighbor_norms(&self) -> Vec<(Peer, f64)> {
        self.neighbor_flows.iter().map(|(p, f)| (*p, l2(f))).collect()
    }

    pub fn neighbor_sum(&self) -> Vec<f64> {
        let mut sum = vec![0.0; self.local_flow.len()];
        for (_, f) in &self.neighbor_flows {
            for (s, v) in sum.iter_mut().zip(f) {
                *s += v;
            }
        }
        sum
    }

    pub fn neighbor_sum_norm(&self) -> f64 {
        l2(&self.neighbor_sum())
    }

    pub fn local_norm(&self) -> f64 {
        l2(&self.local_flow)
    }

    /// `||sum F + F_D||`; vanishes when inbound flows balance local training.
    pub fn balance_residual(&self) -> f64 {
        let s: Vec<f64> = self
            .neighbor_sum()
            .iter()
            .zip(&self.local_flow)
            .map(|(a, b)| a + b)
            .collect();
        l2(&s)
    }

    /// Epoch residual relative to the epoch displacement (0 when nothing moved).
    pub fn relative_epoch_residual(&self) -> f64 {
        if self.epoch_delta_norm == 0.0 {
            self.epoch_residual
        } else {
            self.epoch_residual / self.epoch_delta_norm
        }
    }
}

pub fn flow_decomposition<T: Scalar>(trace: &EpochTrace<T>, node: usize, lambda: f64) -> Result<FlowDecomposition> {
    let nt = trace.node(node)?;
    let center = nt.start.as_slice();
    let scale = lambda / (nt.neighbors.len() + 1) as f64;
    let neighbor_flows = nt
        .neighbors
        .iter()
        .map(|&p| {
            let other = trace.start_params(p)?;
            nt.start.ensure_same_shape(other)?;
            let flow = other
                .as_slice()
                .iter()
                .zip(center)
                .map(|(&k, &c)| scale * (k.as_f64() - c.as_f64()))
                .collect();
            Ok((p, flow))
        })
        .collect::<Result<Vec<_>>>()?;
    let local_flow: Vec<f64> = nt
        .trained
        .as_slice()
        .iter()
        .zip(nt.aggregated.as_slice())
        .map(|(&t, &a)| t.as_f64() - a.as_f64())
        .collect();

    let mut decomposition = FlowDecomposition {
        node,
        epoch: trace.epoch,
        neighbor_flows,
        local_flow,
        aggregation_residual: 0.0,
        epoch_residual: 0.0,
        epoch_delta_norm: 0.0,
    };
    let sum = decomposition.neighbor_sum();
    let (mut agg, mut ep, mut delta) = (0.0, 0.0, 0.0);
    for i in 0..center.len() {
        let c = center[i].as_f64();
        let a = nt.aggregated.as_slice()[i].as_f64() - c - sum[i];
        let d = nt.trained.as_slice()[i].as_f64() - c;
        let e = d - sum[i] - decomposition.local_flow[i];
        agg += a * a;
        ep += e * e;
        delta += d * d;
    }
    decomposition.aggregation_residual = agg.sqrt();
    decomposition.epoch_residual = ep.sqrt();
    decomposition.epoch_delta_norm = delta.sqrt();
    Ok(decomposition)
}

/// One evaluation of one node.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    /// Number of completed epochs when the model was evaluated.
    pub epoch: u64,
    pub node: usize,
    pub accuracy: f64,
    pub loss: f64,
    /// Distance to the poisoned model on `fc1.weight`, when a poison exists.
    pub distance_fc1: Option<f64>,
    pub flow_neighbors: Vec<(Peer, f64)>,
    /// `||sum_k F_{k->c}||` for the epoch that produced this model.
    pub flow_sum_l2: Option<f64>,
    pub flow_local_l2: Option<f64>,
    /// `||sum_k F_{k->c} + F_D||`; not part of the CSV.
    pub flow_balance_l2: Option<f64>,
    pub confusion: Option<ConfusionMatrix>,
}

pub const METRICS_HEADER: [&str; 7] = [
    "epoch",
    "node",
    "accuracy",
    "loss",
    "distance_fc1",
    "flow_l2_sum",
    "flow_local_l2",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl MetricsRecord {
    pub fn csv_fields(&self) -> [String; 7] {
        [
            self.epoch.to_string(),
            self.node.to_string(),
            self.accuracy.to_string(),
            self.loss.to_string(),
            opt(self.distance_fc1),
            opt(self.flow_sum_l2),
            opt(self.flow_local_l2),
        ]
    }
}

/// Serialized sink for evaluation records.
pub trait MetricsSink {
    fn record(&mut self, record: &MetricsRecord) -> Result<()>;

    fn finish(&mut self) -> Result<()> {
        Ok(())
    }
}

#[derive(Debug, Default, Clone)]
pub struct MemorySink {
    pub records: Vec<MetricsRecord>,
}

impl MetricsSink for MemorySink {
    fn record(&mut self, record: &MetricsRecord) -> Result<()> {
        self.records.push(record.clone());
        Ok(())
    }
}

/// Writes `metrics.csv` and `confusion_e{epoch}_n{node}.json` into a directory.
pub struct CsvSink {
    dir: PathBuf,
    writer: csv::Writer<fs::File>,
}

impl CsvSink {
    pub fn create(dir: &Path) -> Result<Self> {
        let path = dir.join("metrics.csv");
        let file = fs::File::create(&path).map_err(|e| WaflError::io(format!("creating {}", path.display()), e))?;
        let mut writer = csv::Writer::from_writer(file);
        writer.write_record(METRICS_HEADER).map_err(csv_io)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            writer,
        })
    }
}

fn csv_io(e: csv::Error) -> WaflError {
    WaflError::io("writing metrics.csv", std::io::Error::other(e))
}

pub fn confusion_file_name(epoch: u64, node: usize) -> String {
    format!("confusion_e{epoch}_n{node}.json")
}

impl MetricsSink for CsvSink {
    fn record(&mut self, r: &MetricsRecord) -> Result<()> {
        self.writer.write_record(r.csv_fields()).map_err(csv_io)?;
        if let Some(cm) = &r.confusion {
            let path = self.dir.join(confusion_file_name(r.epoch, r.node));
            let mut f =
                fs::File::create(&path).map_err(|e| WaflError::io(format!("creating {}", path.display()), e))?;
            serde_json::to_writer(&mut f, cm).map_err(|e| WaflError::Serde(e.to_string()))?;
            f.write_all(b"\n")
                .map_err(|e| WaflError::io(format!("writing {}", path.display()), e))?;
        }
        Ok(())
    }

    fn finish(&mut self) -> Result<()> {
        self.writer
            .flush()
            .map_err(|e| WaflError::io("flushing metrics.csv", e))
    }
}

/// Mean accuracy of `node` over evaluations with `start <= epoch <= end`.
pub fn window_average(records: &[MetricsRecord], node: usize, start: u64, end: u64) -> Result<f64> {
    if start > end {
        return Err(WaflError::input(format!("empty window [{start}, {end}]")));
    }
    let hits: Vec<f64> = records
        .iter()
        .filter(|r| r.node == node && (start..=end).contains(&r.epoch))
        .map(|r| r.accuracy)
        .collect();
    if hits.is_empty() {
        return Err(WaflError::input(format!(
            "no evaluations of node {node} in [{start}, {end}]"
        )));
    }
    Ok(hits.iter().sum::<f64>() / hits.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RankCorrelation {
    Value(f64),
    /// One of the inputs has no spread, so the coefficient is undefined.
    Degenerate,
}

impl RankCorrelation {
    pub fn value(self) -> Option<f64> {
        match self {
            RankCorrelation::Value(v) => Some(v),
            RankCorrelation::Degenerate => None,
        }
    }
}

/// Ranks with ties sharing their average rank (1-based).
fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<RankCorrelation> {
    if xs.len() != ys.len() {
        return Err(WaflError::contract("rank correlation needs equal-length inputs"));
    }
    if xs.len() < 2 {
        return Ok(RankCorrelation::Degenerate);
    }
    let (rx, ry) = (average_ranks(xs), average_ranks(ys));
    let n = xs.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(RankCorrelation::Degenerate);
    }
    Ok(RankCorrelation::Value(sxy / (sxx * syy).sqrt()))
}

/// Spearman correlation between hop count from the attacker and
/// `distance_fc1`, over all nodes evaluated at `epoch`.
pub fn hop_distance_ordering(
    records: &[MetricsRecord],
    epoch: u64,
    topology: &TopologySchedule,
) -> Result<RankCorrelation> {
    let at: Vec<&MetricsRecord> = records.iter().filter(|r| r.epoch == epoch).collect();
    if at.is_empty() {
        return Err(WaflError::input(format!("no evaluations at epoch {epoch}")));
    }
    let mut hops = Vec::with_capacity(at.len());
    let mut dists = Vec::with_capacity(at.len());
    for r in at {
        hops.push(topology.hop_count(r.node)? as f64);
        dists.push(
            r.distance_fc1
                .ok_or_else(|| WaflError::input(format!("node {} has no poison distance", r.node)))?,
        );
    }
    spearman(&hops, &dists)
}
