//! Undirected communication graphs, their Laplacians and spectral data.
//!
//! Agents are 0-based internally. The JSON graph format and [`build_topology`]
//! take 1-based agent labels, matching how graphs are usually written down.

use std::collections::{BTreeSet, VecDeque};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative threshold below which a Laplacian eigenvalue counts as zero.
pub const ZERO_EIGEN_RTOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum TopologyError {
    #[error("graph needs at least one agent")]
    NoAgents,
    #[error("edge ({0}, {1}) references an agent outside 1..={2}")]
    BadEndpoint(usize, usize, usize),
    #[error("self-loop on agent {0}")]
    SelfLoop(usize),
    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(usize, usize),
    #[error("edge ({0}, {1}) has non-positive weight {2}")]
    NonPositiveWeight(usize, usize, f64),
    #[error("{edges} edges but {weights} weights")]
    WeightCount { edges: usize, weights: usize },
    #[error("graph is disconnected: agent {0} unreachable from agent 1")]
    DisconnectedGraph(usize),
    #[error("Laplacian eigendecomposition did not converge")]
    EigenFailure,
    #[error("cannot read graph file: {0}")]
    Io(String),
    #[error("malformed graph JSON: {0}")]
    Parse(String),
}

/// How edge weights are assigned.
#[derive(Debug, Clone, PartialEq)]
pub enum WeightRule {
    Unit,
    Explicit(Vec<f64>),
}

/// A validated, connected, weighted undirected graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    n: usize,
    /// 0-based, each stored with `i < j`.
    edges: Vec<(usize, usize)>,
    weights: Vec<f64>,
}

/// On-disk graph description: `{"n": 6, "edges": [[1,2],...], "weights": [...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSpec {
    pub n: usize,
    pub edges: Vec<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
}

/// Builds and validates a topology from 1-based edges.
///
/// A single agent with no edges is accepted as the trivial connected graph.
pub fn build_topology(
    n: usize,
    edges: &[(usize, usize)],
    weight_rule: WeightRule,
) -> Result<Topology, TopologyError> {
    if n == 0 {
        return Err(TopologyError::NoAgents);
    }
    let weights = match weight_rule {
        WeightRule::Unit => vec![1.0; edges.len()],
        WeightRule::Explicit(w) => {
            if w.len() != edges.len() {
                return Err(TopologyError::WeightCount {
                    edges: edges.len(),
                    weights: w.len(),
                });
            }
            w
        }
    };

    let mut seen = BTreeSet::new();
    let mut normalized = Vec::with_capacity(edges.len());
    for (&(a, b), &w) in edges.iter().zip(&weights) {
        if a == 0 || b == 0 || a > n || b > n {
            return Err(TopologyError::BadEndpoint(a, b, n));
        }
        if a == b {
            return Err(TopologyError::SelfLoop(a));
        }
        if !(w > 0.0) || !w.is_finite() {
            return Err(TopologyError::NonPositiveWeight(a, b, w));
        }
        let key = (a.min(b) - 1, a.max(b) - 1);
        if !seen.insert(key) {
            return Err(TopologyError::DuplicateEdge(a, b));
        }
        normalized.push(key);
    }

    let topology = Topology {
        n,
        edges: normalized,
        weights,
    };
    if let Some(unreached) = topology.first_unreachable() {
        return Err(TopologyError::DisconnectedGraph(unreached + 1));
    }
    Ok(topology)
}

impl Topology {
    pub fn from_spec(spec: &GraphSpec) -> Result<Self, TopologyError> {
        let edges: Vec<(usize, usize)> = spec.edges.iter().map(|e| (e[0], e[1])).collect();
        let rule = match &spec.weights {
            None => WeightRule::Unit,
            Some(w) => WeightRule::Explicit(w.clone()),
        };
        build_topology(spec.n, &edges, rule)
    }

    pub fn from_json(text: &str) -> Result<Self, TopologyError> {
        let spec: GraphSpec =
            serde_json::from_str(text).map_err(|e| TopologyError::Parse(e.to_string()))?;
        Self::from_spec(&spec)
    }

    pub fn from_file(path: &Path) -> Result<Self, TopologyError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| TopologyError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_spec(&self) -> GraphSpec {
        GraphSpec {
            n: self.n,
            edges: self.edges.iter().map(|&(i, j)| [i + 1, j + 1]).collect(),
            weights: if self.weights.iter().all(|&w| w == 1.0) {
                None
            } else {
                Some(self.weights.clone())
            },
        }
    }

    /// The six-agent graph used in the classification experiment.
    pub fn six_agent() -> Self {
        build_topology(
            6,
            &[
                (1, 2),
                (1, 4),
                (1, 6),
                (2, 3),
                (2, 5),
                (3, 4),
                (4, 5),
                (5, 6),
            ],
            WeightRule::Unit,
        )
        .expect("six-agent graph is connected")
    }

    /// Ring `i -- i+1` plus chords `i -- i+n/2` (for `n >= 4`), unit weights.
    pub fn ring_with_chords(n: usize) -> Result<Self, TopologyError> {
        let mut edges = BTreeSet::new();
        if n >= 2 {
            for i in 0..n {
                let j = (i + 1) % n;
                if i != j {
                    edges.insert((i.min(j), i.max(j)));
                }
            }
        }
        if n >= 4 {
            for i in 0..n {
                let j = (i + n / 2) % n;
                edges.insert((i.min(j), i.max(j)));
            }
        }
        let edges: Vec<_> = edges.into_iter().map(|(i, j)| (i + 1, j + 1)).collect();
        build_topology(n, &edges, WeightRule::Unit)
    }

    pub fn complete(n: usize) -> Result<Self, TopologyError> {
        let edges: Vec<_> = (1..=n)
            .flat_map(|i| (i + 1..=n).map(move |j| (i, j)))
            .collect();
        build_topology(n, &edges, WeightRule::Unit)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// 0-based edges with `i < j`.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn degrees(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n];
        for (&(i, j), &w) in self.edges.iter().zip(&self.weights) {
            d[i] += w;
            d[j] += w;
        }
        d
    }

    /// Number of neighbors of each agent, ignoring weights.
    pub fn neighbor_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.n];
        for &(i, j) in &self.edges {
            c[i] += 1;
            c[j] += 1;
        }
        c
    }

    pub fn weight_matrix(&self) -> DMatrix<f64> {
        let mut w = DMatrix::zeros(self.n, self.n);
        for (&(i, j), &wij) in self.edges.iter().zip(&self.weights) {
            w[(i, j)] = wij;
            w[(j, i)] = wij;
        }
        w
    }

    /// `L = D - W`.
    pub fn laplacian(&self) -> DMatrix<f64> {
        let mut l = -self.weight_matrix();
        for (i, d) in self.degrees().into_iter().enumerate() {
            l[(i, i)] = d;
        }
        l
    }

    /// Metropolis–Hastings mixing matrix: `1/(1+max(deg_i, deg_j))` on
    /// edges, remainder on the diagonal. Doubly stochastic and symmetric.
    pub fn metropolis_weights(&self) -> DMatrix<f64> {
        let deg = self.neighbor_counts();
        let mut m = DMatrix::zeros(self.n, self.n);
        for &(i, j) in &self.edges {
            let w = 1.0 / (1.0 + deg[i].max(deg[j]) as f64);
            m[(i, j)] = w;
            m[(j, i)] = w;
        }
        for i in 0..self.n {
            let off: f64 = (0..self.n).filter(|&j| j != i).map(|j| m[(i, j)]).sum();
            m[(i, i)] = 1.0 - off;
        }
        m
    }

    /// Relabels agents: new agent `perm[i]` is old agent `i`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        assert_eq!(perm.len(), self.n);
        let edges = self
            .edges
            .iter()
            .map(|&(i, j)| {
                let (a, b) = (perm[i], perm[j]);
                (a.min(b), a.max(b))
            })
            .collect();
        Self {
            n: self.n,
            edges,
            weights: self.weights.clone(),
        }
    }

    fn first_unreachable(&self) -> Option<usize> {
        let mut adj = vec![Vec::new(); self.n];
        for &(i, j) in &self.edges {
            adj[i].push(j);
            adj[j].push(i);
        }
        let mut seen = vec![false; self.n];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        seen.iter().position(|&s| !s)
    }
}

/// Laplacian and the spectral quantities the analysis is phrased in.
#[derive(Debug, Clone)]
pub struct SpectralData {
    pub laplacian: DMatrix<f64>,
    /// Largest Laplacian eigenvalue.
    pub lambda_max: f64,
    /// Smallest positive Laplacian eigenvalue.
    pub lambda_min_pos: f64,
    /// Symmetric matrix with `P L = L P = K_n`.
    pub projector_p: DMatrix<f64>,
    /// Eigenvalues in ascending order.
    pub eigenvalues: Vec<f64>,
}

/// Laplacian eigenvalues and `P`.
///
/// `P = L† + (1/λ_max)(1/n) 1 1ᵀ`. On a connected graph `L + (1/n) 1 1ᵀ` is
/// positive definite and its inverse is `L† + (1/n) 1 1ᵀ`, so `P` comes from
/// one Cholesky solve and never touches eigenvectors. For a single agent
/// there is no positive eigenvalue; both bounds are then reported as 1 and
/// `P = [1]`.
pub fn spectral(topology: &Topology) -> Result<SpectralData, TopologyError> {
    let n = topology.n();
    let laplacian = topology.laplacian();
    if n == 1 {
        return Ok(SpectralData {
            laplacian,
            lambda_max: 1.0,
            lambda_min_pos: 1.0,
            projector_p: DMatrix::from_element(1, 1, 1.0),
            eigenvalues: vec![0.0],
        });
    }

    // nalgebra's eigenvectors can be wrong on repeated eigenvalues, so only
    // the values are used, and they are checked against tr(L) and ‖L‖²_F.
    let eig = laplacian
        .clone()
        .try_symmetric_eigen(f64::EPSILON, 10_000)
        .ok_or(TopologyError::EigenFailure)?;
    let trace = laplacian.trace();
    let frob = laplacian.norm_squared();
    let sum: f64 = eig.eigenvalues.iter().sum();
    let sum_sq: f64 = eig.eigenvalues.iter().map(|l| l * l).sum();
    if (sum - trace).abs() > 1e-9 * trace.max(1.0) || (sum_sq - frob).abs() > 1e-9 * frob.max(1.0) {
        return Err(TopologyError::EigenFailure);
    }
    let lambda_max = eig.eigenvalues.iter().cloned().fold(f64::MIN, f64::max);
    let threshold = ZERO_EIGEN_RTOL * lambda_max;
    let lambda_min_pos = eig
        .eigenvalues
        .iter()
        .cloned()
        .filter(|&l| l > threshold)
        .fold(f64::INFINITY, f64::min);
    if !lambda_min_pos.is_finite() || !(lambda_max > 0.0) {
        return Err(TopologyError::EigenFailure);
    }

    let j = DMatrix::from_element(n, n, 1.0 / n as f64);
    let shifted_inv = (&laplacian + &j)
        .cholesky()
        .ok_or(TopologyError::EigenFailure)?
        .inverse();
    let p = shifted_inv - &j + &j / lambda_max;
    // symmetrize away rounding in the solve
    let p = (&p + p.transpose()) * 0.5;

    let mut eigenvalues: Vec<f64> = eig.eigenvalues.iter().cloned().collect();
    eigenvalues.sort_by(|a, b| a.total_cmp(b));

    Ok(SpectralData {
        laplacian,
        lambda_max,
        lambda_min_pos,
        projector_p: p,
        eigenvalues,
    })
}

/// Centering matrix `K_n = I - (1/n) 1 1ᵀ`.
pub fn centering(n: usize) -> DMatrix<f64> {
    DMatrix::identity(n, n) - DMatrix::from_element(n, n, 1.0 / n as f64)
}

/// `(1/n) Σᵢ ‖xᵢ − x̄‖²` over the rows of an `n × d` stack.
pub fn consensus_error(x_stack: &DMatrix<f64>) -> f64 {
    let n = x_stack.nrows();
    if n == 0 {
        return 0.0;
    }
    let mean = x_stack.row_mean();
    x_stack
        .row_iter()
        .map(|row| (row - &mean).norm_squared())
        .sum::<f64>()
        / n as f64
}
