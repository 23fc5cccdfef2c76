//! Aligned mixing matrices and the stochastic vector sequences they absorb.
//!
//! `A_k` is row-stochastic and pulls decisions from in-neighbors; `B_k` is
//! column-stochastic and pushes tracker mass to out-neighbors. The vectors
//! `phi_k` satisfy `phi_{k+1}^T A_k = phi_k^T` and `pi_{k+1} = B_k pi_k`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Digraph, DigraphSequence};

const STOCHASTIC_TOL: f64 = 1e-12;

/// `A[i][j] = 1/(|N_in(i)|+1)` on `N_in(i) ∪ {i}`, zero elsewhere.
pub fn build_row_stochastic(g: &Digraph) -> DMatrix<f64> {
    let n = g.n();
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n {
        let w = 1.0 / (g.in_neighbors(i).len() + 1) as f64;
        a[(i, i)] = w;
        for &j in g.in_neighbors(i) {
            a[(i, j)] = w;
        }
    }
    a
}

/// `B[j][i] = 1/(|N_out(i)|+1)` on `N_out(i) ∪ {i}`, zero elsewhere.
pub fn build_column_stochastic(g: &Digraph) -> DMatrix<f64> {
    let n = g.n();
    let mut b = DMatrix::zeros(n, n);
    for i in 0..n {
        let w = 1.0 / (g.out_neighbors(i).len() + 1) as f64;
        b[(i, i)] = w;
        for &j in g.out_neighbors(i) {
            b[(j, i)] = w;
        }
    }
    b
}

/// Smallest strictly positive entry, or `None` for an all-zero matrix.
pub fn min_positive(m: &DMatrix<f64>) -> Option<f64> {
    m.iter().copied().filter(|&v| v > 0.0).reduce(f64::min)
}

pub fn check_row_stochastic(a: &DMatrix<f64>) -> Result<()> {
    if !a.is_square() {
        return Err(Error::InvalidMatrix("row-stochastic matrix must be square".into()));
    }
    if a.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::InvalidMatrix("negative or non-finite entry".into()));
    }
    for (i, row) in a.row_iter().enumerate() {
        let s = row.sum();
        if (s - 1.0).abs() > STOCHASTIC_TOL {
            return Err(Error::InvalidMatrix(format!("row {i} sums to {s}")));
        }
    }
    Ok(())
}

pub fn check_column_stochastic(b: &DMatrix<f64>) -> Result<()> {
    if !b.is_square() {
        return Err(Error::InvalidMatrix("column-stochastic matrix must be square".into()));
    }
    if b.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::InvalidMatrix("negative or non-finite entry".into()));
    }
    for (j, col) in b.column_iter().enumerate() {
        let s = col.sum();
        if (s - 1.0).abs() > STOCHASTIC_TOL {
            return Err(Error::InvalidMatrix(format!("column {j} sums to {s}")));
        }
    }
    Ok(())
}

/// The per-iteration pair of aligned mixing matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingPair {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub a_min: f64,
    pub b_min: f64,
    pub graph_index: usize,
}

impl MixingPair {
    pub fn from_graph(g: &Digraph, graph_index: usize) -> Self {
        let a = build_row_stochastic(g);
        let b = build_column_stochastic(g);
        // Diagonals are always positive, so both minima exist.
        let a_min = min_positive(&a).unwrap_or(1.0);
        let b_min = min_positive(&b).unwrap_or(1.0);
        Self {
            a,
            b,
            a_min,
            b_min,
            graph_index,
        }
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn dump(&self) -> [MatrixDump; 2] {
        [
            MatrixDump::new(&self.a, MatrixKind::Row, self.graph_index),
            MatrixDump::new(&self.b, MatrixKind::Col, self.graph_index),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatrixKind {
    Row,
    Col,
}

/// Debugging dump: header plus row-major entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixDump {
    pub n: usize,
    pub kind: MatrixKind,
    pub k: usize,
    pub rows: Vec<Vec<f64>>,
}

impl MatrixDump {
    pub fn new(m: &DMatrix<f64>, kind: MatrixKind, k: usize) -> Self {
        Self {
            n: m.nrows(),
            kind,
            k,
            rows: m.row_iter().map(|r| r.iter().copied().collect()).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VectorKind {
    Phi,
    Pi,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StochasticVector {
    pub entries: Vec<f64>,
    pub label: VectorKind,
    pub index: usize,
}

impl StochasticVector {
    pub fn uniform(n: usize, label: VectorKind, index: usize) -> Self {
        Self {
            entries: vec![1.0 / n as f64; n],
            label,
            index,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.entries.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.entries.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn sum(&self) -> f64 {
        self.entries.iter().sum()
    }

    pub fn as_dvector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.entries)
    }
}

/// `pi_0 = 1/n`, `pi_{k+1} = B_k pi_k`; returns `pi_0 ..= pi_T`.
pub fn pi_sequence(bs: &[DMatrix<f64>]) -> Result<Vec<StochasticVector>> {
    let n = match bs.first() {
        Some(b) => b.nrows(),
        None => return Err(Error::InvalidArgument("empty matrix sequence".into())),
    };
    let mut out = Vec::with_capacity(bs.len() + 1);
    let mut current = DVector::from_element(n, 1.0 / n as f64);
    out.push(StochasticVector::uniform(n, VectorKind::Pi, 0));
    for (k, b) in bs.iter().enumerate() {
        check_column_stochastic(b)?;
        if b.nrows() != n {
            return Err(Error::InvalidMatrix(format!("B_{k} has wrong size")));
        }
        current = b * current;
        out.push(StochasticVector {
            entries: current.iter().copied().collect(),
            label: VectorKind::Pi,
            index: k + 1,
        });
    }
    Ok(out)
}

/// Backward recursion `phi_k = A_k^T phi_{k+1}` from `phi_T = terminal`;
/// returns `phi_0 ..= phi_T`.
pub fn phi_sequence(as_: &[DMatrix<f64>], terminal: &StochasticVector) -> Result<Vec<StochasticVector>> {
    let n = terminal.len();
    if terminal.entries.iter().any(|&v| v < 0.0) || (terminal.sum() - 1.0).abs() > STOCHASTIC_TOL {
        return Err(Error::InvalidArgument("terminal vector is not stochastic".into()));
    }
    let horizon = as_.len();
    let mut out = vec![StochasticVector::uniform(n, VectorKind::Phi, 0); horizon + 1];
    let mut current = terminal.as_dvector();
    out[horizon] = StochasticVector {
        entries: terminal.entries.clone(),
        label: VectorKind::Phi,
        index: horizon,
    };
    for k in (0..horizon).rev() {
        let a = &as_[k];
        check_row_stochastic(a)?;
        if a.nrows() != n {
            return Err(Error::InvalidMatrix(format!("A_{k} has wrong size")));
        }
        current = a.tr_mul(&current);
        out[k] = StochasticVector {
            entries: current.iter().copied().collect(),
            label: VectorKind::Phi,
            index: k,
        };
    }
    Ok(out)
}

/// Mixing matrices and the phi/pi sequences over a whole graph sequence.
///
/// Mixing pairs are rebuilt from the graphs on demand so long horizons only
/// keep `O(T n)` numbers resident. The phi sequence uses a uniform terminal
/// vector at the end of the horizon.
#[derive(Debug, Clone)]
pub struct WeightSchedule {
    graphs: DigraphSequence,
    phi: Vec<StochasticVector>,
    pi: Vec<StochasticVector>,
    a_lower: f64,
    b_lower: f64,
}

impl WeightSchedule {
    pub fn new(graphs: DigraphSequence) -> Result<Self> {
        let n = graphs.n();
        if graphs.is_empty() {
            return Err(Error::InvalidArgument("graph sequence is empty".into()));
        }
        let horizon = graphs.len();
        let mut a_lower = f64::INFINITY;
        let mut b_lower = f64::INFINITY;

        let mut pi = Vec::with_capacity(horizon + 1);
        let mut current = DVector::from_element(n, 1.0 / n as f64);
        pi.push(StochasticVector::uniform(n, VectorKind::Pi, 0));
        for (k, g) in graphs.graphs().iter().enumerate() {
            let mix = MixingPair::from_graph(g, k);
            a_lower = a_lower.min(mix.a_min);
            b_lower = b_lower.min(mix.b_min);
            current = &mix.b * current;
            pi.push(StochasticVector {
                entries: current.iter().copied().collect(),
                label: VectorKind::Pi,
                index: k + 1,
            });
        }

        let mut phi = vec![StochasticVector::uniform(n, VectorKind::Phi, horizon); horizon + 1];
        let mut current = DVector::from_element(n, 1.0 / n as f64);
        for k in (0..horizon).rev() {
            let a = build_row_stochastic(&graphs.graphs()[k]);
            current = a.tr_mul(&current);
            phi[k] = StochasticVector {
                entries: current.iter().copied().collect(),
                label: VectorKind::Phi,
                index: k,
            };
        }

        Ok(Self {
            graphs,
            phi,
            pi,
            a_lower,
            b_lower,
        })
    }

    pub fn n(&self) -> usize {
        self.graphs.n()
    }

    pub fn horizon(&self) -> usize {
        self.graphs.len()
    }

    pub fn graphs(&self) -> &DigraphSequence {
        &self.graphs
    }

    pub fn mixing(&self, k: usize) -> Option<MixingPair> {
        self.graphs.get(k).map(|g| MixingPair::from_graph(g, k))
    }

    /// `phi_0 ..= phi_T`.
    pub fn phi(&self) -> &[StochasticVector] {
        &self.phi
    }

    /// `pi_0 ..= pi_T`.
    pub fn pi(&self) -> &[StochasticVector] {
        &self.pi
    }

    /// Global lower bound `a` on the positive entries of every `A_k`.
    pub fn a_lower(&self) -> f64 {
        self.a_lower
    }

    /// Global lower bound `b` on the positive entries of every `B_k`.
    pub fn b_lower(&self) -> f64 {
        self.b_lower
    }
}
