//! Undirected weighted graphs with enumerated 3-cliques.
//!
//! A [`Graph`] is immutable once built. Edges are stored once per unordered
//! pair in canonical orientation `(i, j)` with `i < j`, sorted
//! lexicographically; every edge- and triangle-indexed array in this crate
//! follows that order. Triangles are stored as sorted triples `i < j < k`.

mod generators;

use std::collections::HashMap;

use ndarray::Array2;
use thiserror::Error;

pub use generators::{complete, cycle, grid, path, random_geometric};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("graph must have at least one node")]
    NoNodes,
    #[error("node index {index} out of range for {n_nodes} nodes")]
    OutOfRangeIndex { index: usize, n_nodes: usize },
    #[error("self-loop on node {0}")]
    SelfLoop(usize),
    #[error("duplicate edge {{{0}, {1}}}")]
    DuplicateEdge(usize, usize),
    #[error("edge {{{i}, {j}}} has non-positive or non-finite weight {weight}")]
    NonPositiveWeight { i: usize, j: usize, weight: f64 },
    #[error("triangle {0:?} has negative or non-finite weight {1}")]
    NegativeTriangleWeight([usize; 3], f64),
    #[error("weight given for {0:?}, which is not a triangle of the graph")]
    UnknownTriangle([usize; 3]),
    #[error("expected {expected} edge weights, got {got}")]
    WeightCountMismatch { expected: usize, got: usize },
}

/// Orders a pair so that the smaller index comes first.
pub fn canonical_pair(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Sorts a node triple into ascending order.
pub fn canonical_triple(t: [usize; 3]) -> [usize; 3] {
    let mut t = t;
    t.sort_unstable();
    t
}

#[derive(Debug, Clone)]
pub struct Graph {
    n_nodes: usize,
    edges: Vec<(usize, usize)>,
    edge_weights: Vec<f64>,
    edge_lookup: HashMap<(usize, usize), usize>,
    // neighbour lists sorted by neighbour id: (neighbour, edge index)
    adjacency: Vec<Vec<(usize, usize)>>,
    triangles: Vec<[usize; 3]>,
    triangle_weights: Vec<f64>,
}

impl Graph {
    /// Builds and validates a graph.
    ///
    /// `edge_weights`, when given, is parallel to `edges` (input order).
    /// Missing weights default to 1.0. Triangles are enumerated from the
    /// edge set; `triangle_weights` may override the default weight 1.0 of
    /// any of them and its keys may be given in any node order.
    pub fn new(
        n_nodes: usize,
        edges: &[(usize, usize)],
        edge_weights: Option<&[f64]>,
        triangle_weights: Option<&HashMap<[usize; 3], f64>>,
    ) -> Result<Self, GraphError> {
        if n_nodes == 0 {
            return Err(GraphError::NoNodes);
        }
        if let Some(w) = edge_weights {
            if w.len() != edges.len() {
                return Err(GraphError::WeightCountMismatch {
                    expected: edges.len(),
                    got: w.len(),
                });
            }
        }

        let mut canon: Vec<((usize, usize), f64)> = Vec::with_capacity(edges.len());
        for (pos, &(a, b)) in edges.iter().enumerate() {
            for index in [a, b] {
                if index >= n_nodes {
                    return Err(GraphError::OutOfRangeIndex { index, n_nodes });
                }
            }
            if a == b {
                return Err(GraphError::SelfLoop(a));
            }
            let weight = edge_weights.map_or(1.0, |w| w[pos]);
            let (i, j) = canonical_pair(a, b);
            if !(weight.is_finite() && weight > 0.0) {
                return Err(GraphError::NonPositiveWeight { i, j, weight });
            }
            canon.push(((i, j), weight));
        }
        canon.sort_by_key(|x| x.0);
        for pair in canon.windows(2) {
            if pair[0].0 == pair[1].0 {
                let (i, j) = pair[0].0;
                return Err(GraphError::DuplicateEdge(i, j));
            }
        }

        let edges: Vec<(usize, usize)> = canon.iter().map(|e| e.0).collect();
        let edge_weights: Vec<f64> = canon.iter().map(|e| e.1).collect();
        let edge_lookup: HashMap<(usize, usize), usize> =
            edges.iter().enumerate().map(|(k, &e)| (e, k)).collect();
        let mut adjacency = vec![Vec::new(); n_nodes];
        for (k, &(i, j)) in edges.iter().enumerate() {
            adjacency[i].push((j, k));
            adjacency[j].push((i, k));
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }

        let triangles = triangles_from_adjacency(&adjacency);
        let mut tri_w = vec![1.0; triangles.len()];
        if let Some(map) = triangle_weights {
            let index: HashMap<[usize; 3], usize> =
                triangles.iter().enumerate().map(|(k, &t)| (t, k)).collect();
            let mut entries: Vec<_> = map.iter().collect();
            entries.sort_by(|a, b| a.0.cmp(b.0));
            for (&key, &w) in entries {
                let t = canonical_triple(key);
                let Some(&k) = index.get(&t) else {
                    return Err(GraphError::UnknownTriangle(t));
                };
                if !(w.is_finite() && w >= 0.0) {
                    return Err(GraphError::NegativeTriangleWeight(t, w));
                }
                tri_w[k] = w;
            }
        }

        Ok(Self {
            n_nodes,
            edges,
            edge_weights,
            edge_lookup,
            adjacency,
            triangles,
            triangle_weights: tri_w,
        })
    }

    /// Unweighted graph from an edge list.
    pub fn unweighted(n_nodes: usize, edges: &[(usize, usize)]) -> Result<Self, GraphError> {
        Self::new(n_nodes, edges, None, None)
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    /// Canonical `(i, j)`, `i < j`, edges in lexicographic order.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge_weights(&self) -> &[f64] {
        &self.edge_weights
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn triangle_weights(&self) -> &[f64] {
        &self.triangle_weights
    }

    /// Index of the edge `{a, b}` in canonical order, if present.
    pub fn edge_index(&self, a: usize, b: usize) -> Option<usize> {
        self.edge_lookup.get(&canonical_pair(a, b)).copied()
    }

    /// Neighbours of `i` with the index of the connecting edge, sorted by neighbour.
    pub fn neighbors(&self, i: usize) -> &[(usize, usize)] {
        &self.adjacency[i]
    }

    pub fn weighted_degree(&self, i: usize) -> f64 {
        self.adjacency[i]
            .iter()
            .map(|&(_, k)| self.edge_weights[k])
            .sum()
    }

    /// All 3-cliques, each listed once as a sorted triple, in lexicographic order.
    pub fn enumerate_triangles(&self) -> Vec<[usize; 3]> {
        triangles_from_adjacency(&self.adjacency)
    }

    /// Dense `L = D - W`.
    pub fn laplacian_matrix(&self) -> Array2<f64> {
        let n = self.n_nodes;
        let mut l = Array2::zeros((n, n));
        for (&(i, j), &w) in self.edges.iter().zip(&self.edge_weights) {
            l[(i, j)] -= w;
            l[(j, i)] -= w;
            l[(i, i)] += w;
            l[(j, j)] += w;
        }
        l
    }

    /// Largest Laplacian eigenvalue, estimated by power iteration.
    ///
    /// Converges from above-zero starts because `L` is positive
    /// semi-definite; the estimate is clamped by the Gershgorin bound
    /// `2 * max_i d_i`.
    pub fn laplacian_spectral_radius(&self) -> f64 {
        let n = self.n_nodes;
        if self.edges.is_empty() {
            return 0.0;
        }
        let l = self.laplacian_matrix();
        // deterministic start with components along every eigenvector
        let mut x: Vec<f64> = (0..n).map(|i| 1.0 + (i as f64 * 0.7548776662).sin()).collect();
        let mut estimate = 0.0;
        for _ in 0..500 {
            let y: Vec<f64> = (0..n)
                .map(|i| (0..n).map(|j| l[(i, j)] * x[j]).sum())
                .collect();
            let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                return 0.0;
            }
            let next: Vec<f64> = y.iter().map(|v| v / norm).collect();
            let xn = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            let rayleigh = x.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>() / (xn * xn);
            x = next;
            if (rayleigh - estimate).abs() <= 1e-12 * rayleigh.abs() {
                estimate = rayleigh;
                break;
            }
            estimate = rayleigh;
        }
        let gershgorin = (0..n)
            .map(|i| 2.0 * self.weighted_degree(i))
            .fold(0.0, f64::max);
        estimate.min(gershgorin)
    }

    /// True when every node is reachable from node 0.
    pub fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.n_nodes];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for &(j, _) in &self.adjacency[i] {
                if !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Relabels nodes so that old node `i` becomes `perm[i]`. Weights follow their edges.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self, GraphError> {
        assert_eq!(perm.len(), self.n_nodes, "permutation length");
        let edges: Vec<(usize, usize)> = self.edges.iter().map(|&(i, j)| (perm[i], perm[j])).collect();
        let tw: HashMap<[usize; 3], f64> = self
            .triangles
            .iter()
            .zip(&self.triangle_weights)
            .map(|(t, &w)| ([perm[t[0]], perm[t[1]], perm[t[2]]], w))
            .collect();
        Self::new(self.n_nodes, &edges, Some(&self.edge_weights), Some(&tw))
    }
}

fn triangles_from_adjacency(adjacency: &[Vec<(usize, usize)>]) -> Vec<[usize; 3]> {
    let mut out = Vec::new();
    for (i, ni) in adjacency.iter().enumerate() {
        for &(j, _) in ni.iter().filter(|&&(j, _)| j > i) {
            let nj = &adjacency[j];
            // sorted-list intersection restricted to k > j
            let (mut a, mut b) = (0, 0);
            while a < ni.len() && b < nj.len() {
                let (ka, kb) = (ni[a].0, nj[b].0);
                if ka < kb {
                    a += 1;
                } else if kb < ka {
                    b += 1;
                } else {
                    if ka > j {
                        out.push([i, j, ka]);
                    }
                    a += 1;
                    b += 1;
                }
            }
        }
    }
    out
}
