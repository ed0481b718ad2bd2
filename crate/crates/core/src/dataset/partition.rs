use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use super::{LabeledDataset, NUM_CLASSES};
use crate::error::{Result, WaflError};
use crate::scalar::Scalar;
use crate::seed::{self, Stream};

/// Sample-to-node assignment plus its node x label count table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionPlan {
    assignment: Vec<usize>,
    /// `counts[node][label]`
    counts: Vec<[usize; NUM_CLASSES]>,
}

/// Label-skewed split: node `l` receives `floor(majority_fraction * N_l)` of
/// label `l` (after a seeded shuffle of that label's pool); every remaining
/// sample of label `l` goes to one of the other nodes, chosen uniformly and
/// independently per sample.
pub fn partition_noniid<T: Scalar>(
    ds: &LabeledDataset<T>,
    num_nodes: usize,
    majority_fraction: f64,
    seed: u64,
) -> Result<PartitionPlan> {
    if num_nodes != NUM_CLASSES {
        return Err(WaflError::input(format!(
            "label-skew partition needs one node per class ({NUM_CLASSES}), got {num_nodes}"
        )));
    }
    if !(0.0..=1.0).contains(&majority_fraction) {
        return Err(WaflError::input(format!(
            "majority fraction {majority_fraction} outside [0, 1]"
        )));
    }
    let mut assignment = vec![usize::MAX; ds.len()];
    for label in 0..NUM_CLASSES {
        let mut pool: Vec<usize> = (0..ds.len()).filter(|&i| ds.labels()[i] as usize == label).collect();
        let mut rng = seed::rng(seed::derive(seed, Stream::Partition, &[label as u64]));
        pool.shuffle(&mut rng);
        let keep = (majority_fraction * pool.len() as f64).floor() as usize;
        for &i in &pool[..keep] {
            assignment[i] = label;
        }
        for &i in &pool[keep..] {
            let k = rng.gen_range(0..num_nodes - 1);
            assignment[i] = if k < label { k } else { k + 1 };
        }
    }
    PartitionPlan::from_assignment(assignment, ds.labels(), num_nodes)
}

impl PartitionPlan {
    pub fn from_assignment(assignment: Vec<usize>, labels: &[u8], num_nodes: usize) -> Result<Self> {
        if assignment.len() != labels.len() {
            return Err(WaflError::contract("assignment and label counts differ"));
        }
        let mut counts = vec![[0usize; NUM_CLASSES]; num_nodes];
        for (&node, &y) in assignment.iter().zip(labels) {
            let row = counts
                .get_mut(node)
                .ok_or_else(|| WaflError::contract(format!("node id {node} out of range")))?;
            row[y as usize] += 1;
        }
        Ok(Self { assignment, counts })
    }

    pub fn num_nodes(&self) -> usize {
        self.counts.len()
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn counts(&self) -> &[[usize; NUM_CLASSES]] {
        &self.counts
    }

    pub fn node_total(&self, node: usize) -> usize {
        self.counts[node].iter().sum()
    }

    pub fn label_total(&self, label: usize) -> usize {
        self.counts.iter().map(|row| row[label]).sum()
    }

    pub fn total(&self) -> usize {
        self.assignment.len()
    }

    /// Fraction of node `n`'s samples that carry label `n`.
    pub fn own_label_share(&self, node: usize) -> f64 {
        match self.node_total(node) {
            0 => 0.0,
            t => self.counts[node][node] as f64 / t as f64,
        }
    }

    /// Row indices owned by `node`, ascending.
    pub fn node_indices(&self, node: usize) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&i| self.assignment[i] == node)
            .collect()
    }

    pub fn node_dataset<T: Scalar>(&self, ds: &LabeledDataset<T>, node: usize) -> LabeledDataset<T> {
        ds.select(&self.node_indices(node))
    }

    /// `sample_index,node_id`, one line per sample.
    pub fn write_assignment_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        w.write_record(["sample_index", "node_id"])
            .map_err(|e| csv_err(path, e))?;
        for (i, node) in self.assignment.iter().enumerate() {
            w.write_record([i.to_string(), node.to_string()])
                .map_err(|e| csv_err(path, e))?;
        }
        w.flush()
            .map_err(|e| WaflError::io(format!("writing {}", path.display()), e))
    }

    /// Node x label table with per-row and per-column summaries.
    pub fn write_count_table(&self, mut out: impl Write) -> std::io::Result<()> {
        write!(out, "Node")?;
        for l in 0..NUM_CLASSES {
            write!(out, ",L{l}")?;
        }
        writeln!(out, ",Summary")?;
        for (n, row) in self.counts.iter().enumerate() {
            write!(out, "{n}")?;
            for c in row {
                write!(out, ",{c}")?;
            }
            writeln!(out, ",{}", self.node_total(n))?;
        }
        write!(out, "Summary")?;
        for l in 0..NUM_CLASSES {
            write!(out, ",{}", self.label_total(l))?;
        }
        writeln!(out, ",{}", self.total())
    }
}

fn csv_err(path: &Path, e: csv::Error) -> WaflError {
    WaflError::io(format!("writing {}", path.display()), std::io::Error::other(e))
}
