//! Undirected simple graphs and the spectral quantities the tracking
//! analysis depends on: Laplacian, incidence matrix, algebraic connectivity
//! and the averaging projector.

use std::collections::{BTreeSet, VecDeque};

use nalgebra::{DMatrix, SymmetricEigen};
use num_traits::Signed;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("graph must have at least one node")]
    Empty,
    #[error("edge ({0}, {1}) references a node outside 0..{2}")]
    NodeOutOfRange(usize, usize, usize),
    #[error("self-loop at node {0}")]
    SelfLoop(usize),
    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(usize, usize),
    #[error("Assumption 1 violated: graph not connected")]
    Disconnected,
    #[error("algebraic connectivity needs at least two nodes")]
    SingleNode,
}

/// Undirected simple graph on nodes `0..n`.
///
/// Edges are stored normalized as `(lo, hi)` with `lo < hi`, sorted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "GraphLiteral", into = "GraphLiteral")]
pub struct UndirectedGraph {
    n: usize,
    edges: Vec<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
}

/// Wire form: `{"n": 4, "edges": [[0,1],[1,2]]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphLiteral {
    pub n: usize,
    pub edges: Vec<[usize; 2]>,
}

impl TryFrom<GraphLiteral> for UndirectedGraph {
    type Error = GraphError;

    fn try_from(lit: GraphLiteral) -> Result<Self, Self::Error> {
        UndirectedGraph::new(lit.n, lit.edges.into_iter().map(|[a, b]| (a, b)))
    }
}

impl From<UndirectedGraph> for GraphLiteral {
    fn from(g: UndirectedGraph) -> Self {
        GraphLiteral {
            n: g.n,
            edges: g.edges.iter().map(|&(a, b)| [a, b]).collect(),
        }
    }
}

/// Column layout of the incidence matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    /// One column per undirected edge, lower-index node is the tail (+1).
    /// Then `D·Dᵀ = L`.
    LowerTail,
    /// Two columns per undirected edge, one for each ordered pair, so the
    /// edge set counts `(i, j)` and `(j, i)` separately. Then `½·D·Dᵀ = L`.
    BothDirections,
}

impl UndirectedGraph {
    pub fn new(
        n: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self, GraphError> {
        if n == 0 {
            return Err(GraphError::Empty);
        }
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            if a >= n || b >= n {
                return Err(GraphError::NodeOutOfRange(a, b, n));
            }
            if a == b {
                return Err(GraphError::SelfLoop(a));
            }
            if !set.insert((a.min(b), a.max(b))) {
                return Err(GraphError::DuplicateEdge(a, b));
            }
        }
        let edges: Vec<_> = set.into_iter().collect();
        let mut neighbors = vec![Vec::new(); n];
        for &(a, b) in &edges {
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
        for list in &mut neighbors {
            list.sort_unstable();
        }
        Ok(Self {
            n,
            edges,
            neighbors,
        })
    }

    pub fn empty(n: usize) -> Result<Self, GraphError> {
        Self::new(n, std::iter::empty())
    }

    pub fn path(n: usize) -> Result<Self, GraphError> {
        Self::new(n, (1..n).map(|i| (i - 1, i)))
    }

    pub fn cycle(n: usize) -> Result<Self, GraphError> {
        if n < 3 {
            return Self::path(n);
        }
        Self::new(n, (0..n).map(|i| (i, (i + 1) % n)))
    }

    pub fn complete(n: usize) -> Result<Self, GraphError> {
        Self::new(n, (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))))
    }

    pub fn n_nodes(&self) -> usize {
        self.n
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Sorted neighbor list of node `i`.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    pub fn adjacency<T: nalgebra::Scalar + Signed + Copy>(&self) -> DMatrix<T> {
        let mut a = DMatrix::from_element(self.n, self.n, T::zero());
        for &(i, j) in &self.edges {
            a[(i, j)] = T::one();
            a[(j, i)] = T::one();
        }
        a
    }

    pub fn degree_matrix<T: nalgebra::Scalar + Signed + Copy>(&self) -> DMatrix<T> {
        let mut d = DMatrix::from_element(self.n, self.n, T::zero());
        for i in 0..self.n {
            for _ in 0..self.degree(i) {
                d[(i, i)] = d[(i, i)] + T::one();
            }
        }
        d
    }

    /// `L = Δ − A`. Works for integer and floating scalars alike.
    pub fn laplacian<T: nalgebra::Scalar + Signed + Copy>(&self) -> DMatrix<T> {
        let mut l = self.degree_matrix::<T>();
        for &(i, j) in &self.edges {
            l[(i, j)] = l[(i, j)] - T::one();
            l[(j, i)] = l[(j, i)] - T::one();
        }
        l
    }

    /// Incidence matrix; each column holds exactly one `+1` (tail) and one
    /// `−1` (head).
    pub fn incidence<T: nalgebra::Scalar + Signed + Copy>(
        &self,
        orientation: Orientation,
    ) -> DMatrix<T> {
        let cols = match orientation {
            Orientation::LowerTail => self.edges.len(),
            Orientation::BothDirections => 2 * self.edges.len(),
        };
        let mut d = DMatrix::from_element(self.n, cols, T::zero());
        for (k, &(lo, hi)) in self.edges.iter().enumerate() {
            match orientation {
                Orientation::LowerTail => {
                    d[(lo, k)] = T::one();
                    d[(hi, k)] = -T::one();
                }
                Orientation::BothDirections => {
                    d[(lo, 2 * k)] = T::one();
                    d[(hi, 2 * k)] = -T::one();
                    d[(hi, 2 * k + 1)] = T::one();
                    d[(lo, 2 * k + 1)] = -T::one();
                }
            }
        }
        d
    }

    /// Breadth-first search from node 0.
    pub fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        let mut count = 1;
        while let Some(v) = queue.pop_front() {
            for &w in &self.neighbors[v] {
                if !seen[w] {
                    seen[w] = true;
                    count += 1;
                    queue.push_back(w);
                }
            }
        }
        count == self.n
    }

    pub fn spectrum<T: Real>(&self) -> GraphSpectrum<T> {
        let laplacian = self.laplacian::<T>();
        let eigenvalues = sorted_symmetric_eigenvalues(&laplacian);
        let lambda2 = if eigenvalues.len() > 1 {
            eigenvalues[1]
        } else {
            T::zero()
        };
        GraphSpectrum {
            laplacian,
            eigenvalues,
            lambda2,
        }
    }

    /// Algebraic connectivity: the second-smallest Laplacian eigenvalue.
    pub fn lambda2<T: Real>(&self) -> Result<T, GraphError> {
        if self.n < 2 {
            return Err(GraphError::SingleNode);
        }
        if !self.is_connected() {
            return Err(GraphError::Disconnected);
        }
        Ok(self.spectrum::<T>().lambda2)
    }
}

#[derive(Debug, Clone)]
pub struct GraphSpectrum<T: Real> {
    pub laplacian: DMatrix<T>,
    /// Ascending.
    pub eigenvalues: Vec<T>,
    pub lambda2: T,
}

pub(crate) fn sorted_symmetric_eigenvalues<T: Real>(m: &DMatrix<T>) -> Vec<T> {
    let mut ev: Vec<T> = SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .copied()
        .collect();
    ev.sort_by(|a, b| a.partial_cmp(b).expect("finite eigenvalues"));
    ev
}

/// `M = Iₙ − (1/n)·𝟏𝟏ᵀ`: removes the mean component of a per-node signal.
pub fn averaging_projector<T: Real>(n: usize) -> DMatrix<T> {
    assert!(n >= 1, "averaging projector needs n >= 1");
    let inv = T::one() / T::lit(n as f64);
    DMatrix::from_fn(n, n, |i, j| if i == j { T::one() - inv } else { -inv })
}
