//! Undirected communication topology, Metropolis consensus weights and the
//! Laplacian disagreement measure.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GraphError {
    #[error("self-loop on node {0}")]
    SelfLoop(usize),
    #[error("edge ({0}, {1}) references a node outside 0..{2}")]
    OutOfRange(usize, usize, usize),
    #[error("edge ({0}, {1}) weight must be positive and finite, got {2}")]
    BadWeight(usize, usize, f64),
    #[error("edge ({0}, {1}) declared with conflicting weights")]
    ConflictingWeight(usize, usize),
    #[error("graph is not connected; consensus would split into separate components")]
    Disconnected,
    #[error("vector has {got} entries, graph has {expected} nodes")]
    LengthMismatch { got: usize, expected: usize },
    #[error("unknown topology preset `{0}` (expected ring, complete, star or line)")]
    UnknownPreset(String),
}

/// Named topologies accepted in scenario files and on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Ring,
    Complete,
    /// Node 0 is the hub.
    Star,
    Line,
}

impl FromStr for Preset {
    type Err = GraphError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ring" => Ok(Preset::Ring),
            "complete" => Ok(Preset::Complete),
            "star" => Ok(Preset::Star),
            "line" => Ok(Preset::Line),
            other => Err(GraphError::UnknownPreset(other.to_string())),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Ring => "ring",
            Preset::Complete => "complete",
            Preset::Star => "star",
            Preset::Line => "line",
        })
    }
}

impl Preset {
    pub fn edges(self, n: usize) -> Vec<(usize, usize)> {
        match self {
            Preset::Line => (1..n).map(|i| (i - 1, i)).collect(),
            Preset::Ring => {
                let mut e: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
                if n > 2 {
                    e.push((n - 1, 0));
                }
                e
            }
            Preset::Star => (1..n).map(|i| (0, i)).collect(),
            Preset::Complete => (0..n)
                .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
                .collect(),
        }
    }
}

/// Symmetric adjacency without self-loops. Edge weights default to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct CommGraph {
    n: usize,
    // neighbor -> weight, per node; sorted so iteration order is stable.
    adj: Vec<BTreeMap<usize, f64>>,
}

impl CommGraph {
    pub fn new(n: usize, edges: &[(usize, usize)]) -> Result<Self, GraphError> {
        let weighted: Vec<_> = edges.iter().map(|&(i, j)| (i, j, 1.0)).collect();
        Self::weighted(n, &weighted)
    }

    /// Duplicate edges collapse; repeating an edge with a different weight is an error.
    pub fn weighted(n: usize, edges: &[(usize, usize, f64)]) -> Result<Self, GraphError> {
        let mut adj = vec![BTreeMap::new(); n];
        for &(i, j, w) in edges {
            if i >= n || j >= n {
                return Err(GraphError::OutOfRange(i, j, n));
            }
            if i == j {
                return Err(GraphError::SelfLoop(i));
            }
            if !(w.is_finite() && w > 0.0) {
                return Err(GraphError::BadWeight(i, j, w));
            }
            if let Some(&prev) = adj[i].get(&j) {
                if prev != w {
                    return Err(GraphError::ConflictingWeight(i, j));
                }
            }
            adj[i].insert(j, w);
            adj[j].insert(i, w);
        }
        Ok(Self { n, adj })
    }

    pub fn preset(preset: Preset, n: usize) -> Self {
        Self::new(n, &preset.edges(n)).expect("preset edges are valid")
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adj[i].len()
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.adj.iter().map(BTreeMap::len).collect()
    }

    /// Neighbors of `i` in increasing index order.
    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.adj[i].keys().copied()
    }

    /// `a_ij`, zero when there is no edge.
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.adj[i].get(&j).copied().unwrap_or(0.0)
    }

    /// Each undirected edge once, as `(i, j, a_ij)` with `i < j`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.adj.iter().enumerate().flat_map(|(i, nbrs)| {
            nbrs.range(i + 1..).map(move |(&j, &w)| (i, j, w))
        })
    }

    pub fn edge_count(&self) -> usize {
        self.edges().count()
    }

    pub fn is_connected(&self) -> bool {
        if self.n == 0 {
            return true;
        }
        let mut seen = vec![false; self.n];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        let mut reached = 1;
        while let Some(i) = queue.pop_front() {
            for j in self.neighbors(i) {
                if !seen[j] {
                    seen[j] = true;
                    reached += 1;
                    queue.push_back(j);
                }
            }
        }
        reached == self.n
    }

    /// `L = D - A`, using edge weights.
    pub fn laplacian(&self) -> Array2<f64> {
        let mut l = Array2::zeros((self.n, self.n));
        for (i, nbrs) in self.adj.iter().enumerate() {
            for (&j, &w) in nbrs {
                l[[i, j]] = -w;
                l[[i, i]] += w;
            }
        }
        l
    }

    /// The quadratic form `xᵀLx`, i.e. the sum over edges of `a_ij (x_i - x_j)²`.
    /// Zero exactly when `x` is constant on every connected component.
    pub fn laplacian_potential(&self, x: &[f64]) -> Result<f64, GraphError> {
        if x.len() != self.n {
            return Err(GraphError::LengthMismatch {
                got: x.len(),
                expected: self.n,
            });
        }
        Ok(self
            .edges()
            .map(|(i, j, w)| {
                let d = x[i] - x[j];
                w * d * d
            })
            .sum())
    }

    /// Metropolis-Hastings weights `1 / (1 + max(deg_i, deg_j))` on every edge,
    /// with the remainder on the diagonal. Edge weights `a_ij` are ignored.
    pub fn metropolis_weights(&self) -> Result<WeightMatrix, GraphError> {
        if !self.is_connected() {
            return Err(GraphError::Disconnected);
        }
        let deg = self.degrees();
        let mut w = Array2::zeros((self.n, self.n));
        for i in 0..self.n {
            let mut off = 0.0;
            for j in self.neighbors(i) {
                let wij = 1.0 / (1.0 + deg[i].max(deg[j]) as f64);
                w[[i, j]] = wij;
                off += wij;
            }
            w[[i, i]] = 1.0 - off;
        }
        Ok(WeightMatrix(w))
    }
}

/// Symmetric, doubly stochastic consensus weights supported on the graph.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix(Array2<f64>);

impl WeightMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[[i, j]]
    }

    pub fn size(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.0
            .rows()
            .into_iter()
            .map(|row| row.iter().zip(x).map(|(w, v)| w * v).sum())
            .collect()
    }
}
