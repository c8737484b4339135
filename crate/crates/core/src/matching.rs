//! Decomposition of the base graph into disjoint matchings via proper
//! edge coloring.
//!
//! The coloring algorithm is Misra–Gries fan rotation (Misra & Gries,
//! "A constructive proof of Vizing's theorem", 1992), which uses at most
//! Δ(G)+1 colors. Each color class is a matching; empty classes are
//! dropped, so the number of matchings M is Δ or Δ+1. Edges are processed
//! in lexicographic order and fans extend to the smallest eligible
//! neighbor first, making the decomposition deterministic.

use crate::graph::Topology;
use ndarray::Array2;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DecompositionError {
    #[error("edges share vertex {0}")]
    VertexReuse(usize),
    #[error("matching {0} has edges sharing vertex {1}")]
    SharedVertex(usize, usize),
    #[error("edge ({0}, {1}) appears in more than one matching")]
    OverlappingMatchings(usize, usize),
    #[error("matchings do not cover the base edge set exactly")]
    CoverageMismatch,
    #[error("got {matchings} matchings for maximal degree {max_degree}")]
    TooManyMatchings { matchings: usize, max_degree: usize },
}

/// A set of edges no two of which share a vertex.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Matching {
    edges: Vec<(usize, usize)>,
}

impl Matching {
    pub fn new(mut edges: Vec<(usize, usize)>) -> Result<Self, DecompositionError> {
        edges.sort_unstable();
        let mut seen = std::collections::HashSet::new();
        for &(i, j) in &edges {
            if !seen.insert(i) {
                return Err(DecompositionError::VertexReuse(i));
            }
            if !seen.insert(j) {
                return Err(DecompositionError::VertexReuse(j));
            }
        }
        Ok(Self { edges })
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }
}

/// Laplacian of the subgraph `(V, E_j)` on `m` nodes. For a matching this
/// is block-diagonal in 2×2 blocks, so its eigenvalues are 0 and 2 and its
/// spectral norm is at most 2.
pub fn matching_laplacian(matching: &Matching, m: usize) -> Array2<f64> {
    let mut l = Array2::<f64>::zeros((m, m));
    for &(i, j) in matching.edges() {
        l[[i, j]] = -1.0;
        l[[j, i]] = -1.0;
        l[[i, i]] += 1.0;
        l[[j, j]] += 1.0;
    }
    l
}

/// An ordered list of disjoint matchings covering the base edge set, with
/// one Laplacian per matching. The order (by color index) is part of the
/// reproducibility contract: schedule draws follow it.
#[derive(Debug, Clone)]
pub struct MatchingDecomposition {
    base: Topology,
    matchings: Vec<Matching>,
    laplacians: Vec<Array2<f64>>,
}

#[derive(Serialize)]
struct DecompositionFile<'a> {
    #[serde(rename = "M")]
    matching_count: usize,
    matchings: Vec<&'a [(usize, usize)]>,
}

impl MatchingDecomposition {
    /// Assemble a decomposition from explicit matchings, validating
    /// disjointness and exact coverage of the base edge set. [`decompose`]
    /// is the usual entry point; this exists for hand-built decompositions
    /// and for replaying exported ones.
    pub fn from_matchings(
        base: Topology,
        matchings: Vec<Matching>,
    ) -> Result<Self, DecompositionError> {
        let laplacians = matchings
            .iter()
            .map(|m| matching_laplacian(m, base.node_count()))
            .collect();
        let decomposition = Self {
            base,
            matchings,
            laplacians,
        };
        decomposition.validate()?;
        Ok(decomposition)
    }

    /// Number of matchings M.
    pub fn matching_count(&self) -> usize {
        self.matchings.len()
    }

    pub fn node_count(&self) -> usize {
        self.base.node_count()
    }

    pub fn matchings(&self) -> &[Matching] {
        &self.matchings
    }

    /// Laplacians L_j, one per matching, in matching order.
    pub fn laplacians(&self) -> &[Array2<f64>] {
        &self.laplacians
    }

    pub fn base(&self) -> &Topology {
        &self.base
    }

    /// `Σ_j w_j L_j` for arbitrary per-matching weights.
    pub fn weighted_laplacian(&self, weights: &[f64]) -> Array2<f64> {
        assert_eq!(weights.len(), self.matchings.len());
        let m = self.node_count();
        let mut sum = Array2::<f64>::zeros((m, m));
        for (w, lap) in weights.iter().zip(&self.laplacians) {
            sum.scaled_add(*w, lap);
        }
        sum
    }

    /// Check all decomposition invariants against the base graph:
    /// vertex-disjointness inside each matching, edge-disjointness across
    /// matchings, exact coverage, and M ≤ Δ+1.
    pub fn validate(&self) -> Result<(), DecompositionError> {
        let mut all_edges = Vec::new();
        for (idx, matching) in self.matchings.iter().enumerate() {
            let mut vertices = std::collections::HashSet::new();
            for &(i, j) in matching.edges() {
                if !vertices.insert(i) {
                    return Err(DecompositionError::SharedVertex(idx, i));
                }
                if !vertices.insert(j) {
                    return Err(DecompositionError::SharedVertex(idx, j));
                }
                all_edges.push((i, j));
            }
        }
        all_edges.sort_unstable();
        for w in all_edges.windows(2) {
            if w[0] == w[1] {
                return Err(DecompositionError::OverlappingMatchings(w[0].0, w[0].1));
            }
        }
        if all_edges != self.base.edges() {
            return Err(DecompositionError::CoverageMismatch);
        }
        let max_degree = self.base.max_degree();
        if self.matching_count() > max_degree + 1 {
            return Err(DecompositionError::TooManyMatchings {
                matchings: self.matching_count(),
                max_degree,
            });
        }
        Ok(())
    }

    /// Export as `{"M": int, "matchings": [[[i, j], ...], ...]}`.
    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&DecompositionFile {
            matching_count: self.matching_count(),
            matchings: self.matchings.iter().map(|m| m.edges()).collect(),
        })
        .expect("decomposition serialization cannot fail")
    }
}

/// Proper-edge-color the base graph with Misra–Gries fan rotation and
/// return the color classes as matchings (empty classes dropped).
pub fn decompose(topology: &Topology) -> MatchingDecomposition {
    let coloring = MisraGries::new(topology).run();
    let max_color = topology.max_degree(); // colors live in 0..=Δ
    let mut classes: Vec<Vec<(usize, usize)>> = vec![Vec::new(); max_color + 1];
    for (edge_idx, &(i, j)) in topology.edges().iter().enumerate() {
        let color = coloring[edge_idx].expect("every edge is colored");
        classes[color].push((i, j));
    }
    let matchings: Vec<Matching> = classes
        .into_iter()
        .filter(|c| !c.is_empty())
        .map(|edges| Matching::new(edges).expect("color classes are vertex-disjoint"))
        .collect();
    let laplacians = matchings
        .iter()
        .map(|m| matching_laplacian(m, topology.node_count()))
        .collect();
    let decomposition = MatchingDecomposition {
        base: topology.clone(),
        matchings,
        laplacians,
    };
    debug_assert!(decomposition.validate().is_ok());
    decomposition
}

/// Working state for the fan-rotation coloring.
struct MisraGries<'a> {
    topology: &'a Topology,
    /// Per node: (neighbor, edge index), ascending by neighbor.
    adjacency: Vec<Vec<(usize, usize)>>,
    /// Color per edge index; colors range over 0..=Δ.
    colors: Vec<Option<usize>>,
    palette: usize,
}

impl<'a> MisraGries<'a> {
    fn new(topology: &'a Topology) -> Self {
        let mut adjacency = vec![Vec::new(); topology.node_count()];
        for (idx, &(i, j)) in topology.edges().iter().enumerate() {
            adjacency[i].push((j, idx));
            adjacency[j].push((i, idx));
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        Self {
            topology,
            adjacency,
            colors: vec![None; topology.edge_count()],
            palette: topology.max_degree() + 1,
        }
    }

    fn edge_between(&self, u: usize, v: usize) -> Option<usize> {
        self.adjacency[u]
            .iter()
            .find(|&&(w, _)| w == v)
            .map(|&(_, idx)| idx)
    }

    fn is_free(&self, node: usize, color: usize) -> bool {
        self.adjacency[node]
            .iter()
            .all(|&(_, e)| self.colors[e] != Some(color))
    }

    fn smallest_free(&self, node: usize) -> usize {
        (0..self.palette)
            .find(|&c| self.is_free(node, c))
            .expect("degree <= max degree leaves a free color in a palette of size max degree + 1")
    }

    /// Maximal fan of `u` starting at `v`: a sequence of distinct neighbors
    /// where each next edge's color is free at the previous fan vertex.
    /// Extends to the smallest eligible neighbor first.
    fn maximal_fan(&self, u: usize, v: usize) -> Vec<usize> {
        let mut fan = vec![v];
        let mut in_fan = std::collections::HashSet::from([v]);
        loop {
            let last = *fan.last().unwrap();
            let next = self.adjacency[u].iter().find(|&&(w, e)| {
                !in_fan.contains(&w)
                    && self.colors[e].is_some_and(|color| self.is_free(last, color))
            });
            match next {
                Some(&(w, _)) => {
                    fan.push(w);
                    in_fan.insert(w);
                }
                None => return fan,
            }
        }
    }

    /// Flip the colors `c` and `d` along the maximal alternating path
    /// starting at `u` with an edge colored `first`. The path is collected
    /// against the current coloring before any mutation.
    fn invert_path(&mut self, u: usize, c: usize, d: usize, first: usize) {
        let mut path = Vec::new();
        let mut current = u;
        let mut want = first;
        loop {
            let step = self.adjacency[current]
                .iter()
                .find(|&&(_, e)| self.colors[e] == Some(want))
                .copied();
            match step {
                Some((next, e)) => {
                    path.push(e);
                    current = next;
                    want = if want == c { d } else { c };
                }
                None => break,
            }
        }
        for e in path {
            let flipped = if self.colors[e] == Some(c) { d } else { c };
            self.colors[e] = Some(flipped);
        }
    }

    fn run(mut self) -> Vec<Option<usize>> {
        for edge_idx in 0..self.topology.edge_count() {
            let (u, v) = self.topology.edges()[edge_idx];
            let fan = self.maximal_fan(u, v);
            let c = self.smallest_free(u);
            let d = self.smallest_free(*fan.last().unwrap());
            // Flip the cd path out of the way; it starts at u with color d
            // (c is free at u by construction).
            self.invert_path(u, c, d, d);

            // Shortest fan prefix, still valid after the inversion, whose
            // last vertex has d free.
            let mut w = None;
            for (i, &x) in fan.iter().enumerate() {
                if i > 0 {
                    let e = self.edge_between(u, x).unwrap();
                    let still_fan =
                        self.colors[e].is_some_and(|color| self.is_free(fan[i - 1], color));
                    if !still_fan {
                        break;
                    }
                }
                if self.is_free(x, d) {
                    w = Some(i);
                    break;
                }
            }
            let w = w.expect("fan rotation always finds a rotatable prefix");

            // Rotate: each fan edge takes its successor's color, the last
            // one takes d.
            for i in 0..w {
                let this = self.edge_between(u, fan[i]).unwrap();
                let next = self.edge_between(u, fan[i + 1]).unwrap();
                self.colors[this] = self.colors[next];
            }
            let last = self.edge_between(u, fan[w]).unwrap();
            self.colors[last] = Some(d);
        }
        self.colors
    }
}
