//! Node adjacency as a function of epoch, including the attacker's
//! mount window.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use std::io::Write;

use crate::error::{Result, WaflError};

/// A participant in model exchange.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Peer {
    Attacker,
    Node(usize),
}

impl fmt::Display for Peer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Peer::Attacker => f.write_str("m"),
            Peer::Node(n) => write!(f, "{n}"),
        }
    }
}

/// Symmetric, irreflexive neighbourhoods that may change with the epoch.
pub trait Topology: Send + Sync {
    fn num_nodes(&self) -> usize;

    fn neighbors(&self, peer: Peer, epoch: u64) -> Result<BTreeSet<Peer>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttackerMount {
    pub node: usize,
    /// First epoch with the attacker edge present.
    pub start: u64,
    /// First epoch without it.
    pub end: u64,
}

impl AttackerMount {
    pub fn active(&self, epoch: u64) -> bool {
        self.start <= epoch && epoch < self.end
    }
}

/// Static legitimate graph plus an optional attacker edge during `[start, end)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopologySchedule {
    adjacency: Vec<BTreeSet<usize>>,
    attacker: Option<AttackerMount>,
}

impl TopologySchedule {
    /// Nodes `0..n` chained as `0 - 1 - ... - (n-1)`.
    pub fn static_line(n_nodes: usize) -> Result<Self> {
        if n_nodes < 2 {
            return Err(WaflError::input(format!(
                "a line needs at least 2 nodes, got {n_nodes}"
            )));
        }
        Self::from_edges(n_nodes, (0..n_nodes - 1).map(|i| (i, i + 1)))
    }

    pub fn from_edges(n_nodes: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut adjacency = vec![BTreeSet::new(); n_nodes];
        for (a, b) in edges {
            if a >= n_nodes || b >= n_nodes {
                return Err(WaflError::input(format!("edge ({a}, {b}) references a missing node")));
            }
            if a == b {
                return Err(WaflError::input(format!("self-loop at node {a}")));
            }
            adjacency[a].insert(b);
            adjacency[b].insert(a);
        }
        Ok(Self {
            adjacency,
            attacker: None,
        })
    }

    pub fn with_attacker(mut self, mount: AttackerMount) -> Result<Self> {
        if mount.node >= self.adjacency.len() {
            return Err(WaflError::input(format!(
                "attacker mount node {} does not exist",
                mount.node
            )));
        }
        if mount.start > mount.end {
            return Err(WaflError::input(format!(
                "attack window start {} is after end {}",
                mount.start, mount.end
            )));
        }
        self.attacker = Some(mount);
        Ok(self)
    }

    pub fn attacker(&self) -> Option<AttackerMount> {
        self.attacker
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.adjacency
            .iter()
            .enumerate()
            .flat_map(|(a, nbrs)| nbrs.iter().filter(move |&&b| a < b).map(move |&b| (a, b)))
            .collect()
    }

    /// Hops from `node` to the attacker: graph distance to the mount node plus one.
    pub fn hop_count(&self, node: usize) -> Result<usize> {
        let mount = self
            .attacker
            .ok_or_else(|| WaflError::input("topology has no attacker"))?
            .node;
        self.check_node(node)?;
        let mut dist = vec![usize::MAX; self.adjacency.len()];
        let mut queue = VecDeque::from([mount]);
        dist[mount] = 0;
        while let Some(u) = queue.pop_front() {
            for &v in &self.adjacency[u] {
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        match dist[node] {
            usize::MAX => Err(WaflError::input(format!(
                "node {node} is not connected to the attacker"
            ))),
            d => Ok(d + 1),
        }
    }

    fn check_node(&self, node: usize) -> Result<()> {
        if node >= self.adjacency.len() {
            return Err(WaflError::input(format!(
                "unknown node {node} (topology has {})",
                self.adjacency.len()
            )));
        }
        Ok(())
    }

    /// `a,b` edge list in effect at `epoch`; the attacker appears as `m`.
    pub fn write_edges_csv(&self, epoch: u64, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "a,b")?;
        if let Some(m) = self.attacker.filter(|m| m.active(epoch)) {
            writeln!(out, "m,{}", m.node)?;
        }
        for (a, b) in self.edges() {
            writeln!(out, "{a},{b}")?;
        }
        Ok(())
    }
}

impl Topology for TopologySchedule {
    fn num_nodes(&self) -> usize {
        self.adjacency.len()
    }

    fn neighbors(&self, peer: Peer, epoch: u64) -> Result<BTreeSet<Peer>> {
        let active = self.attacker.filter(|m| m.active(epoch));
        match peer {
            Peer::Attacker => Ok(active.map(|m| Peer::Node(m.node)).into_iter().collect()),
            Peer::Node(n) => {
                self.check_node(n)?;
                let mut out: BTreeSet<Peer> = self.adjacency[n].iter().map(|&k| Peer::Node(k)).collect();
                if active.is_some_and(|m| m.node == n) {
                    out.insert(Peer::Attacker);
                }
                Ok(out)
            }
        }
    }
}
