//! Communication graphs and the matrices of the stacked (compact) form.
//!
//! Directed edge slots are grouped by source node: node `i` owns the slots
//! `(i, j)` for its neighbours `j` in ascending order. With that layout the
//! incidence matrix is block diagonal, and for `i < j` the slot `(i, j)`
//! always precedes `(j, i)`.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Eigenvalues below this are treated as zero when reading the spectrum.
const ZERO_EIGENVALUE: f64 = 1e-9;

/// Connected, undirected, simple graph on `n >= 3` nodes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "GraphSpec", into = "GraphSpec")]
pub struct Graph {
    n: usize,
    /// Canonical `(i, j)` with `i < j`, sorted lexicographically.
    edges: Vec<(usize, usize)>,
}

/// Config form of a graph.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum GraphSpec {
    Ring { n: usize },
    Edges { n: usize, edges: Vec<[usize; 2]> },
}

impl TryFrom<GraphSpec> for Graph {
    type Error = Error;

    fn try_from(spec: GraphSpec) -> Result<Self> {
        match spec {
            GraphSpec::Ring { n } => Graph::ring(n),
            GraphSpec::Edges { n, edges } => {
                Graph::from_edges(n, edges.into_iter().map(|[i, j]| (i, j)))
            }
        }
    }
}

impl From<Graph> for GraphSpec {
    fn from(g: Graph) -> Self {
        GraphSpec::Edges {
            n: g.n,
            edges: g.edges.iter().map(|&(i, j)| [i, j]).collect(),
        }
    }
}

impl Graph {
    /// Validates and canonicalizes an edge list.
    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        if n < 3 {
            return Err(Error::InvalidTopology(format!("need at least 3 nodes, got {n}")));
        }
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::InvalidTopology(format!(
                    "edge ({a}, {b}) out of range for {n} nodes"
                )));
            }
            if a == b {
                return Err(Error::InvalidTopology(format!("self-loop at node {a}")));
            }
            if !set.insert((a.min(b), a.max(b))) {
                return Err(Error::InvalidTopology(format!("duplicate edge ({a}, {b})")));
            }
        }
        let g = Graph {
            n,
            edges: set.into_iter().collect(),
        };
        if !g.is_connected() {
            return Err(Error::Disconnected);
        }
        Ok(g)
    }

    /// Cycle `0 - 1 - ... - (n-1) - 0`.
    pub fn ring(n: usize) -> Result<Self> {
        if n < 3 {
            return Err(Error::InvalidTopology(format!(
                "a ring needs at least 3 nodes, got {n}"
            )));
        }
        Graph::from_edges(n, (0..n).map(|i| (i, (i + 1) % n)))
    }

    pub fn path(n: usize) -> Result<Self> {
        Graph::from_edges(n, (1..n).map(|i| (i - 1, i)))
    }

    pub fn complete(n: usize) -> Result<Self> {
        Graph::from_edges(n, (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))))
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Sorted neighbour lists.
    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut nb = vec![Vec::new(); self.n];
        for &(i, j) in &self.edges {
            nb[i].push(j);
            nb[j].push(i);
        }
        nb.iter_mut().for_each(|v| v.sort_unstable());
        nb
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.neighbors().iter().map(Vec::len).collect()
    }

    /// Directed slots `(i, j)` grouped by source node.
    pub fn directed_slots(&self) -> Vec<(usize, usize)> {
        self.neighbors()
            .into_iter()
            .enumerate()
            .flat_map(|(i, nb)| nb.into_iter().map(move |j| (i, j)))
            .collect()
    }

    pub fn laplacian(&self) -> DMatrix<f64> {
        let mut l = DMatrix::zeros(self.n, self.n);
        for &(i, j) in &self.edges {
            l[(i, j)] -= 1.0;
            l[(j, i)] -= 1.0;
            l[(i, i)] += 1.0;
            l[(j, j)] += 1.0;
        }
        l
    }

    fn is_connected(&self) -> bool {
        let nb = self.neighbors();
        let mut seen = vec![false; self.n];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        while let Some(u) = queue.pop_front() {
            for &v in &nb[u] {
                if !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

/// Matrices derived from a graph.
#[derive(Debug, Clone)]
pub struct GraphStructures {
    /// Directed slots in row order of `incidence`.
    pub slots: Vec<(usize, usize)>,
    pub slot_index: BTreeMap<(usize, usize), usize>,
    /// `A`, `M x n` with `A[(i,j), i] = 1`.
    pub incidence: DMatrix<f64>,
    /// `P`, `M x M`, swaps slot `(i, j)` with `(j, i)`.
    pub permutation: DMatrix<f64>,
    /// `D = A^T A`.
    pub degree: DMatrix<f64>,
    /// `A^T P A`.
    pub adjacency: DMatrix<f64>,
    /// `adjacency - degree`, i.e. the negated Laplacian.
    pub signless: DMatrix<f64>,
    pub laplacian: DMatrix<f64>,
    /// Laplacian eigenvalues, ascending.
    pub spectrum: Vec<f64>,
}

pub fn build_structures(g: &Graph) -> GraphStructures {
    let n = g.node_count();
    let slots = g.directed_slots();
    let m = slots.len();
    let slot_index: BTreeMap<_, _> = slots.iter().enumerate().map(|(k, &s)| (s, k)).collect();

    let mut incidence = DMatrix::zeros(m, n);
    let mut permutation = DMatrix::zeros(m, m);
    for (k, &(i, j)) in slots.iter().enumerate() {
        incidence[(k, i)] = 1.0;
        permutation[(k, slot_index[&(j, i)])] = 1.0;
    }
    let degree = incidence.transpose() * &incidence;
    let adjacency = incidence.transpose() * &permutation * &incidence;
    let signless = &adjacency - &degree;
    let laplacian = g.laplacian();
    let spectrum = sorted_eigenvalues(&laplacian);

    GraphStructures {
        slots,
        slot_index,
        incidence,
        permutation,
        degree,
        adjacency,
        signless,
        laplacian,
        spectrum,
    }
}

/// Ascending eigenvalues of a symmetric matrix.
pub fn sorted_eigenvalues(sym: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(sym.clone()).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// `(lambda_l, lambda_u)`: smallest nonzero and largest Laplacian eigenvalues.
pub fn lambda_bounds(g: &Graph) -> Result<(f64, f64)> {
    spectrum_bounds(&sorted_eigenvalues(&g.laplacian()))
}

pub(crate) fn spectrum_bounds(spectrum: &[f64]) -> Result<(f64, f64)> {
    let zeros = spectrum.iter().filter(|&&l| l.abs() < ZERO_EIGENVALUE).count();
    if zeros != 1 || spectrum.len() < 2 {
        return Err(Error::Disconnected);
    }
    Ok((spectrum[1], spectrum[spectrum.len() - 1]))
}

impl GraphStructures {
    pub fn lambda_bounds(&self) -> Result<(f64, f64)> {
        spectrum_bounds(&self.spectrum)
    }

    /// Nonzero Laplacian eigenvalues (with multiplicity), ascending.
    pub fn nonzero_spectrum(&self) -> &[f64] {
        &self.spectrum[1..]
    }

    /// Operator norm of `adjacency - degree`.
    pub fn signless_norm(&self) -> f64 {
        sorted_eigenvalues(&self.signless)
            .into_iter()
            .map(f64::abs)
            .fold(0.0, f64::max)
    }

    pub fn slot_count(&self) -> usize {
        self.slots.len()
    }
}
