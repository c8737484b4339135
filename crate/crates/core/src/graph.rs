//! Undirected communication topologies: validation, Laplacians, seeded
//! generators, and the JSON interchange format.
//!
//! Nodes are 0-based contiguous indices. Edges are unordered pairs stored
//! as `(i, j)` with `i < j`, sorted lexicographically; that order is part
//! of the reproducibility contract because the matching decomposition and
//! the schedule draws both follow it.

use crate::eigen::{lambda_min_restricted, sym_eigen, SymEigen};
use crate::rng::SplitMix64;
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// λ₂ above this counts as connected.
pub const CONNECTIVITY_TOLERANCE: f64 = 1e-9;

/// Retry budget for `require_connected` generation.
const MAX_GENERATION_RETRIES: u64 = 1000;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("edge ({0}, {1}) out of range for {2} nodes")]
    EdgeOutOfRange(usize, usize, usize),
    #[error("self-loop at node {0}")]
    SelfLoop(usize),
    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(usize, usize),
    #[error("edge ({0}, {1}) must be listed with the smaller endpoint first")]
    UnorderedEdge(usize, usize),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("no connected graph found after {0} seeded attempts")]
    GenerationFailed(u64),
    #[error("malformed graph JSON: {0}")]
    Json(#[from] serde_json::Error),
}

/// An undirected simple graph on nodes `0..m`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    node_count: usize,
    edges: Vec<(usize, usize)>,
}

#[derive(Serialize, Deserialize)]
struct GraphFile {
    m: usize,
    edges: Vec<(usize, usize)>,
}

impl Topology {
    /// Build a topology, normalizing each edge to `(min, max)` and sorting
    /// lexicographically. Rejects self-loops, out-of-range endpoints and
    /// duplicates.
    pub fn new(node_count: usize, edges: &[(usize, usize)]) -> Result<Self, GraphError> {
        let mut normalized = Vec::with_capacity(edges.len());
        for &(a, b) in edges {
            if a == b {
                return Err(GraphError::SelfLoop(a));
            }
            let (i, j) = if a < b { (a, b) } else { (b, a) };
            if j >= node_count {
                return Err(GraphError::EdgeOutOfRange(i, j, node_count));
            }
            normalized.push((i, j));
        }
        normalized.sort_unstable();
        for w in normalized.windows(2) {
            if w[0] == w[1] {
                return Err(GraphError::DuplicateEdge(w[0].0, w[0].1));
            }
        }
        Ok(Self {
            node_count,
            edges: normalized,
        })
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Edges as `(i, j)` with `i < j`, lexicographically sorted.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn degree(&self, node: usize) -> usize {
        self.edges
            .iter()
            .filter(|&&(i, j)| i == node || j == node)
            .count()
    }

    /// Maximal node degree Δ(G).
    pub fn max_degree(&self) -> usize {
        let mut degrees = vec![0usize; self.node_count];
        for &(i, j) in &self.edges {
            degrees[i] += 1;
            degrees[j] += 1;
        }
        degrees.into_iter().max().unwrap_or(0)
    }

    pub fn adjacency(&self) -> Array2<f64> {
        let mut a = Array2::<f64>::zeros((self.node_count, self.node_count));
        for &(i, j) in &self.edges {
            a[[i, j]] = 1.0;
            a[[j, i]] = 1.0;
        }
        a
    }

    /// Graph Laplacian `L = D - A`.
    pub fn laplacian(&self) -> Array2<f64> {
        let mut l = Array2::<f64>::zeros((self.node_count, self.node_count));
        for &(i, j) in &self.edges {
            l[[i, j]] = -1.0;
            l[[j, i]] = -1.0;
            l[[i, i]] += 1.0;
            l[[j, j]] += 1.0;
        }
        l
    }

    /// Algebraic connectivity λ₂: the second-smallest Laplacian eigenvalue,
    /// computed by deflating the all-ones direction.
    pub fn algebraic_connectivity(&self) -> f64 {
        lambda_min_restricted(&self.laplacian())
    }

    /// Connectivity test: λ₂ above [`CONNECTIVITY_TOLERANCE`]. A graph with
    /// fewer than two nodes is trivially connected.
    pub fn is_connected(&self) -> bool {
        if self.node_count <= 1 {
            return true;
        }
        self.algebraic_connectivity() > CONNECTIVITY_TOLERANCE
    }

    /// Full Laplacian spectrum; convenience for reports and tests.
    pub fn laplacian_eigen(&self) -> SymEigen {
        sym_eigen(&self.laplacian()).expect("laplacian is symmetric")
    }

    /// Parse the interchange format `{"m": int, "edges": [[i, j], ...]}`.
    /// Edges must be listed with `i < j`; duplicates and self-loops are
    /// rejected.
    pub fn from_json_str(text: &str) -> Result<Self, GraphError> {
        let file: GraphFile = serde_json::from_str(text)?;
        for &(i, j) in &file.edges {
            if i == j {
                return Err(GraphError::SelfLoop(i));
            }
            if i > j {
                return Err(GraphError::UnorderedEdge(i, j));
            }
        }
        Self::new(file.m, &file.edges)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&GraphFile {
            m: self.node_count,
            edges: self.edges.clone(),
        })
        .expect("graph serialization cannot fail")
    }
}

/// Seeded Erdős–Rényi graph: every unordered pair is included
/// independently with probability `edge_prob`, pairs drawn in
/// lexicographic order from one SplitMix64 stream per attempt.
///
/// With `require_connected`, disconnected draws are retried with the seed
/// incremented by one, up to 1000 attempts.
pub fn generate_erdos_renyi(
    m: usize,
    edge_prob: f64,
    seed: u64,
    require_connected: bool,
) -> Result<Topology, GraphError> {
    if m < 2 {
        return Err(GraphError::InvalidParameter(format!(
            "need at least 2 nodes, got {m}"
        )));
    }
    if !(edge_prob > 0.0 && edge_prob <= 1.0) {
        return Err(GraphError::InvalidParameter(format!(
            "edge probability must be in (0, 1], got {edge_prob}"
        )));
    }
    for attempt in 0..MAX_GENERATION_RETRIES {
        let mut rng = SplitMix64::new(seed.wrapping_add(attempt));
        let mut edges = Vec::new();
        for i in 0..m {
            for j in (i + 1)..m {
                if rng.next_f64() < edge_prob {
                    edges.push((i, j));
                }
            }
        }
        let topology = Topology::new(m, &edges)?;
        if !require_connected || topology.is_connected() {
            return Ok(topology);
        }
    }
    Err(GraphError::GenerationFailed(MAX_GENERATION_RETRIES))
}

/// Seeded random geometric graph: `m` points uniform on the unit square
/// (per node, x then y from one stream), an edge wherever the Euclidean
/// distance is at most `radius`. Retry semantics as for Erdős–Rényi.
pub fn generate_geometric(
    m: usize,
    radius: f64,
    seed: u64,
    require_connected: bool,
) -> Result<Topology, GraphError> {
    if m < 2 {
        return Err(GraphError::InvalidParameter(format!(
            "need at least 2 nodes, got {m}"
        )));
    }
    if !(radius > 0.0 && radius <= std::f64::consts::SQRT_2) {
        return Err(GraphError::InvalidParameter(format!(
            "radius must be in (0, sqrt(2)], got {radius}"
        )));
    }
    for attempt in 0..MAX_GENERATION_RETRIES {
        let mut rng = SplitMix64::new(seed.wrapping_add(attempt));
        let points: Vec<(f64, f64)> = (0..m)
            .map(|_| {
                let x = rng.next_f64();
                let y = rng.next_f64();
                (x, y)
            })
            .collect();
        let mut edges = Vec::new();
        for i in 0..m {
            for j in (i + 1)..m {
                let dx = points[i].0 - points[j].0;
                let dy = points[i].1 - points[j].1;
                if (dx * dx + dy * dy).sqrt() <= radius {
                    edges.push((i, j));
                }
            }
        }
        let topology = Topology::new(m, &edges)?;
        if !require_connected || topology.is_connected() {
            return Ok(topology);
        }
    }
    Err(GraphError::GenerationFailed(MAX_GENERATION_RETRIES))
}
