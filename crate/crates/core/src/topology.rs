//! Interaction graph between the UAVs and the target.
//!
//! UAVs are indexed `0..n` here; the target is the extra node that appears
//! only through the `target_links` weights `a_i0`. In traces and config files
//! UAVs are numbered from 1 and the target is 0.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

const WEIGHT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TopologyError {
    #[error("adjacency matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("target link vector has length {got}, expected {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("topology needs at least one UAV")]
    Empty,
    #[error("weight a[{i}][{j}] = {value} is negative or not finite")]
    InvalidWeight { i: usize, j: usize, value: f64 },
    #[error("adjacency diagonal entry a[{i}][{i}] must be zero")]
    NonzeroDiagonal { i: usize },
    #[error("adjacency is not symmetric at ({i}, {j})")]
    Asymmetric { i: usize, j: usize },
    #[error("UAV graph is disconnected")]
    Disconnected,
    #[error("nonzero UAV-UAV weights are not uniform ({first} vs {other})")]
    NonUniformWeights { first: f64, other: f64 },
    #[error("UAV graph is not circulant under its labeling")]
    NotCirculant,
    #[error("target link a_{agent}0 = {value} must be positive")]
    AssumptionViolated { agent: usize, value: f64 },
}

/// Validated UAV graph plus UAV-target links.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    adjacency: DMatrix<f64>,
    target_links: DVector<f64>,
    neighbors: Vec<Vec<usize>>,
}

impl Topology {
    /// Validates and builds a topology.
    ///
    /// The UAV graph must be undirected, connected, uniformly weighted and
    /// circulant under the given labeling; every UAV must be linked to the
    /// target.
    pub fn new(adjacency: DMatrix<f64>, target_links: DVector<f64>) -> Result<Self, TopologyError> {
        let (rows, cols) = adjacency.shape();
        if rows != cols {
            return Err(TopologyError::NotSquare { rows, cols });
        }
        let n = rows;
        if n == 0 {
            return Err(TopologyError::Empty);
        }
        if target_links.len() != n {
            return Err(TopologyError::LengthMismatch { expected: n, got: target_links.len() });
        }
        for i in 0..n {
            for j in 0..n {
                let w = adjacency[(i, j)];
                if !w.is_finite() || w < 0.0 {
                    return Err(TopologyError::InvalidWeight { i, j, value: w });
                }
            }
            if adjacency[(i, i)] != 0.0 {
                return Err(TopologyError::NonzeroDiagonal { i });
            }
        }
        for i in 0..n {
            for j in (i + 1)..n {
                if adjacency[(i, j)] != adjacency[(j, i)] {
                    return Err(TopologyError::Asymmetric { i, j });
                }
            }
        }

        let mut first: Option<f64> = None;
        for &w in adjacency.iter().filter(|w| **w > 0.0) {
            match first {
                None => first = Some(w),
                Some(f) if (w - f).abs() > WEIGHT_TOL * f.max(1.0) => {
                    return Err(TopologyError::NonUniformWeights { first: f, other: w });
                }
                Some(_) => {}
            }
        }

        let neighbors: Vec<Vec<usize>> = (0..n)
            .map(|i| (0..n).filter(|&j| adjacency[(i, j)] > 0.0).collect())
            .collect();
        if !is_connected(&neighbors) {
            return Err(TopologyError::Disconnected);
        }
        if !is_circulant(&adjacency) {
            return Err(TopologyError::NotCirculant);
        }
        for (agent, &value) in target_links.iter().enumerate() {
            if !value.is_finite() || value <= 0.0 {
                return Err(TopologyError::AssumptionViolated { agent: agent + 1, value });
            }
        }

        Ok(Self { adjacency, target_links, neighbors })
    }

    /// Undirected ring `0-1-...-(n-1)-0` with uniform weights.
    pub fn ring(n: usize, weight: f64, target_weight: f64) -> Result<Self, TopologyError> {
        let mut adjacency = DMatrix::zeros(n, n);
        if n >= 2 {
            for i in 0..n {
                let j = (i + 1) % n;
                if i != j {
                    adjacency[(i, j)] = weight;
                    adjacency[(j, i)] = weight;
                }
            }
        }
        Self::new(adjacency, DVector::from_element(n, target_weight))
    }

    /// Number of UAVs.
    pub fn n(&self) -> usize {
        self.adjacency.nrows()
    }

    pub fn adjacency(&self) -> &DMatrix<f64> {
        &self.adjacency
    }

    pub fn target_links(&self) -> &DVector<f64> {
        &self.target_links
    }

    /// `a_ij` between UAVs `i` and `j`.
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.adjacency[(i, j)]
    }

    /// `a_i0` between UAV `i` and the target.
    pub fn target_weight(&self, i: usize) -> f64 {
        self.target_links[i]
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    /// Ordered edges `(i, j)` with `j` a neighbor of `i`, sorted.
    pub fn ordered_edges(&self) -> Vec<(usize, usize)> {
        self.neighbors
            .iter()
            .enumerate()
            .flat_map(|(i, ns)| ns.iter().map(move |&j| (i, j)))
            .collect()
    }

    /// Block `L_f` of the full Laplacian: `l_ii = sum_{j=0..n} a_ij`,
    /// `l_ij = -a_ij`.
    pub fn follower_laplacian(&self) -> DMatrix<f64> {
        let n = self.n();
        DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                self.adjacency.row(i).sum() + self.target_links[i]
            } else {
                -self.adjacency[(i, j)]
            }
        })
    }

    /// The `(n+1)x(n+1)` Laplacian with the target as node 0 and a zero
    /// first row.
    pub fn full_laplacian(&self) -> DMatrix<f64> {
        let n = self.n();
        let lf = self.follower_laplacian();
        let mut l = DMatrix::zeros(n + 1, n + 1);
        l.view_mut((1, 1), (n, n)).copy_from(&lf);
        for i in 0..n {
            l[(i + 1, 0)] = -self.target_links[i];
        }
        l
    }
}

fn is_connected(neighbors: &[Vec<usize>]) -> bool {
    let n = neighbors.len();
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(i) = stack.pop() {
        for &j in &neighbors[i] {
            if !seen[j] {
                seen[j] = true;
                stack.push(j);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

/// Row `i` must equal row 0 cyclically shifted by `i`.
fn is_circulant(a: &DMatrix<f64>) -> bool {
    let n = a.nrows();
    (1..n).all(|i| (0..n).all(|j| a[(i, j)] == a[(0, (j + n - i) % n)]))
}

/// Laplacian blocks and the sorted spectrum of `L_f`, computed once.
#[derive(Debug, Clone, PartialEq)]
pub struct LaplacianBlocks {
    pub l_f: DMatrix<f64>,
    pub l_t: DVector<f64>,
    /// Eigenvalues of `L_f`, ascending.
    pub spectrum: Vec<f64>,
}

impl LaplacianBlocks {
    pub fn lambda_min(&self) -> f64 {
        self.spectrum[0]
    }

    pub fn lambda_max(&self) -> f64 {
        *self.spectrum.last().expect("non-empty spectrum")
    }
}

pub fn laplacian_blocks(t: &Topology) -> LaplacianBlocks {
    let l_f = t.follower_laplacian();
    let mut spectrum: Vec<f64> = l_f.clone().symmetric_eigenvalues().iter().copied().collect();
    spectrum.sort_by(f64::total_cmp);
    LaplacianBlocks { l_f, l_t: -t.target_links(), spectrum }
}

/// Admissible `k_v` interval `k_p T < k_v < 4 / (lambda_n T U_trac)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainBounds {
    /// `k_v` must exceed `k_p * kv_lower_per_kp`.
    pub kv_lower_per_kp: f64,
    pub kv_upper: f64,
}

impl GainBounds {
    pub fn kv_lower(&self, kp: f64) -> f64 {
        kp * self.kv_lower_per_kp
    }

    pub fn admits(&self, kp: f64, kv: f64) -> bool {
        kp > 0.0 && self.kv_lower(kp) < kv && kv < self.kv_upper
    }
}

pub fn gain_bounds(blocks: &LaplacianBlocks, dt: f64, u_trac: f64) -> GainBounds {
    GainBounds {
        kv_lower_per_kp: dt,
        kv_upper: 4.0 / (blocks.lambda_max() * dt * u_trac),
    }
}
