//! Immutable graph value types and the normalized adjacency operator.
//!
//! `Graph` and `Subgraph` are plain undirected structures: symmetric 0/1
//! adjacency with an empty diagonal, a dense feature matrix, and optional
//! discrete node labels. Everything downstream (pattern sampling, kernels,
//! encoders, perturbation bounds) works on these two types.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Maximum degree bucket for the fallback one-hot degree features.
pub const DEGREE_FEATURE_CAP: usize = 10;

/// An undirected graph with node features and an optional class label.
///
/// Invariants (checked at construction): adjacency is symmetric with a zero
/// diagonal, and the feature matrix has one row per node. Self-loops are
/// never stored; they are added only inside [`normalized_adjacency`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Graph {
    id: usize,
    adjacency: Array2<u8>,
    features: Array2<f64>,
    node_labels: Option<Vec<u32>>,
    label: Option<usize>,
    edges: Vec<(usize, usize)>,
}

impl Graph {
    pub fn new(
        id: usize,
        adjacency: Array2<u8>,
        features: Array2<f64>,
        node_labels: Option<Vec<u32>>,
        label: Option<usize>,
    ) -> Result<Self> {
        let n = adjacency.nrows();
        if n == 0 {
            return Err(Error::Input("graph must have at least one node".into()));
        }
        if adjacency.ncols() != n {
            return Err(Error::Input(format!(
                "adjacency must be square, got {}x{}",
                n,
                adjacency.ncols()
            )));
        }
        for i in 0..n {
            if adjacency[[i, i]] != 0 {
                return Err(Error::Input(format!("self-loop stored at node {i}")));
            }
            for j in (i + 1)..n {
                let a = adjacency[[i, j]];
                if a > 1 || a != adjacency[[j, i]] {
                    return Err(Error::Input(format!(
                        "adjacency not symmetric binary at ({i},{j})"
                    )));
                }
            }
        }
        if features.nrows() != n {
            return Err(Error::Input(format!(
                "feature rows {} != node count {n}",
                features.nrows()
            )));
        }
        if features.ncols() == 0 {
            return Err(Error::Input("feature dimension must be >= 1".into()));
        }
        if let Some(labels) = &node_labels {
            if labels.len() != n {
                return Err(Error::Input(format!(
                    "node label count {} != node count {n}",
                    labels.len()
                )));
            }
        }
        let mut edges = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if adjacency[[i, j]] == 1 {
                    edges.push((i, j));
                }
            }
        }
        Ok(Self {
            id,
            adjacency,
            features,
            node_labels,
            label,
            edges,
        })
    }

    /// Build from an undirected edge list; duplicate and reversed pairs are
    /// deduplicated for convenience in tests and generators.
    pub fn from_edges(
        id: usize,
        n: usize,
        edges: &[(usize, usize)],
        features: Array2<f64>,
        node_labels: Option<Vec<u32>>,
        label: Option<usize>,
    ) -> Result<Self> {
        let mut adj = Array2::<u8>::zeros((n, n));
        for &(a, b) in edges {
            if a == b {
                return Err(Error::Input(format!("self-loop in edge list at node {a}")));
            }
            if a >= n || b >= n {
                return Err(Error::Input(format!("edge ({a},{b}) out of range for n={n}")));
            }
            adj[[a, b]] = 1;
            adj[[b, a]] = 1;
        }
        Self::new(id, adj, features, node_labels, label)
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn node_count(&self) -> usize {
        self.adjacency.nrows()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Undirected edges as (i, j) with i < j, ascending.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn adjacency(&self) -> &Array2<u8> {
        &self.adjacency
    }

    /// Adjacency as a real matrix for linear-algebra consumers.
    pub fn adjacency_f64(&self) -> Array2<f64> {
        self.adjacency.mapv(|v| v as f64)
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn node_labels(&self) -> Option<&[u32]> {
        self.node_labels.as_deref()
    }

    pub fn label(&self) -> Option<usize> {
        self.label
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.adjacency[[a, b]] == 1
    }

    pub fn degree(&self, v: usize) -> usize {
        (0..self.node_count()).filter(|&u| self.has_edge(v, u)).count()
    }

    pub fn degrees(&self) -> Vec<usize> {
        (0..self.node_count()).map(|v| self.degree(v)).collect()
    }

    pub fn min_degree(&self) -> usize {
        self.degrees().into_iter().min().unwrap_or(0)
    }

    pub fn neighbors(&self, v: usize) -> Vec<usize> {
        (0..self.node_count()).filter(|&u| self.has_edge(v, u)).collect()
    }

    /// Replace the label, keeping everything else (used by the loader when
    /// remapping classes).
    pub fn with_label(mut self, label: Option<usize>) -> Self {
        self.label = label;
        self
    }
}

/// An induced subgraph: node ids into the parent, plus copies of the induced
/// adjacency, feature rows, and node labels in `node_ids` order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subgraph {
    pub parent_id: usize,
    pub node_ids: Vec<usize>,
    pub adjacency: Array2<u8>,
    pub features: Array2<f64>,
    pub node_labels: Option<Vec<u32>>,
}

impl Subgraph {
    pub fn node_count(&self) -> usize {
        self.node_ids.len()
    }

    pub fn edge_count(&self) -> usize {
        let n = self.node_count();
        let mut e = 0;
        for i in 0..n {
            for j in (i + 1)..n {
                e += self.adjacency[[i, j]] as usize;
            }
        }
        e
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.adjacency[[a, b]] == 1
    }

    pub fn degree(&self, v: usize) -> usize {
        (0..self.node_count()).filter(|&u| self.has_edge(v, u)).count()
    }

    pub fn degrees(&self) -> Vec<usize> {
        (0..self.node_count()).map(|v| self.degree(v)).collect()
    }

    /// Connectivity via BFS from node 0.
    pub fn is_connected(&self) -> bool {
        let n = self.node_count();
        if n == 0 {
            return false;
        }
        let mut seen = vec![false; n];
        let mut queue = std::collections::VecDeque::from([0usize]);
        seen[0] = true;
        let mut count = 1;
        while let Some(v) = queue.pop_front() {
            for u in 0..n {
                if self.has_edge(v, u) && !seen[u] {
                    seen[u] = true;
                    count += 1;
                    queue.push_back(u);
                }
            }
        }
        count == n
    }

    /// View this subgraph as a standalone graph (used when feeding whole
    /// graphs through sample-based code paths).
    pub fn from_whole_graph(g: &Graph) -> Self {
        induced_subgraph(g, &(0..g.node_count()).collect::<Vec<_>>())
            .expect("identity node list is always valid")
    }
}

/// Normalized self-connected adjacency operator:
/// `U = D̂^(-1/2) (I + A) D̂^(-1/2)` with `D̂ = diag(1ᵀ(I + A))`.
///
/// The self-loop guarantees positive augmented degrees, so this is total.
pub fn normalized_adjacency(adjacency: &Array2<u8>) -> Array2<f64> {
    let n = adjacency.nrows();
    let mut a_hat = adjacency.mapv(|v| v as f64);
    for i in 0..n {
        a_hat[[i, i]] += 1.0;
    }
    let inv_sqrt_deg: Array1<f64> =
        Array1::from_iter((0..n).map(|i| a_hat.row(i).sum().sqrt().recip()));
    let mut u = a_hat;
    for i in 0..n {
        for j in 0..n {
            u[[i, j]] *= inv_sqrt_deg[i] * inv_sqrt_deg[j];
        }
    }
    u
}

/// Induced subgraph on `node_ids` (order preserved). Errors on empty,
/// duplicate, or out-of-range indices.
pub fn induced_subgraph(g: &Graph, node_ids: &[usize]) -> Result<Subgraph> {
    if node_ids.is_empty() {
        return Err(Error::Input("node_ids must be non-empty".into()));
    }
    let n = g.node_count();
    let mut seen = vec![false; n];
    for &v in node_ids {
        if v >= n {
            return Err(Error::Input(format!("node id {v} out of range (n={n})")));
        }
        if seen[v] {
            return Err(Error::Input(format!("duplicate node id {v}")));
        }
        seen[v] = true;
    }
    let k = node_ids.len();
    let mut adjacency = Array2::<u8>::zeros((k, k));
    for (a, &va) in node_ids.iter().enumerate() {
        for (b, &vb) in node_ids.iter().enumerate() {
            adjacency[[a, b]] = g.adjacency()[[va, vb]];
        }
    }
    let mut features = Array2::<f64>::zeros((k, g.feature_dim()));
    for (a, &va) in node_ids.iter().enumerate() {
        features.row_mut(a).assign(&g.features().row(va));
    }
    let node_labels = g
        .node_labels()
        .map(|labels| node_ids.iter().map(|&v| labels[v]).collect());
    Ok(Subgraph {
        parent_id: g.id(),
        node_ids: node_ids.to_vec(),
        adjacency,
        features,
        node_labels,
    })
}

/// One-hot degree features, degree capped at [`DEGREE_FEATURE_CAP`]. This is
/// the fallback for datasets without node labels or attributes.
pub fn degree_onehot_features(adjacency: &Array2<u8>) -> Array2<f64> {
    let n = adjacency.nrows();
    let dim = DEGREE_FEATURE_CAP + 1;
    let mut features = Array2::<f64>::zeros((n, dim));
    for i in 0..n {
        let deg: usize = adjacency.row(i).iter().map(|&v| v as usize).sum();
        features[[i, deg.min(DEGREE_FEATURE_CAP)]] = 1.0;
    }
    features
}

/// One-hot features over an explicit label vocabulary (sorted ascending by
/// the caller); labels outside the vocabulary are rejected upstream.
pub fn label_onehot_features(labels: &[u32], vocab: &[u32]) -> Array2<f64> {
    let mut features = Array2::<f64>::zeros((labels.len(), vocab.len().max(1)));
    for (i, l) in labels.iter().enumerate() {
        if let Ok(pos) = vocab.binary_search(l) {
            features[[i, pos]] = 1.0;
        }
    }
    features
}
