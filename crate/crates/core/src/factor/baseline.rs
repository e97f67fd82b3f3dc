//! Two-mode matrix factorization baseline fitted by alternating ridge
//! regressions on the observed entries.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::linalg::solve_spd_or_min_norm;
use crate::data::SalesTensor;
use crate::error::{AtlasError, Result};

/// Observed entries of a store × product matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    pub n_rows: usize,
    pub n_cols: usize,
    pub entries: Vec<(usize, usize, f64)>,
}

impl SparseMatrix {
    /// The store × product slice at week `t`.
    pub fn at_week(tensor: &SalesTensor, t: usize) -> Self {
        Self {
            n_rows: tensor.n_stores(),
            n_cols: tensor.n_products(),
            entries: tensor
                .cells()
                .iter()
                .filter(|c| c.week == t)
                .map(|c| (c.store, c.product, c.value))
                .collect(),
        }
    }

    /// Mean over observed weeks of every observed (store, product) pair.
    pub fn time_aggregated(tensor: &SalesTensor) -> Self {
        let mut acc: BTreeMap<(usize, usize), (f64, usize)> = BTreeMap::new();
        for c in tensor.cells() {
            let e = acc.entry((c.store, c.product)).or_default();
            e.0 += c.value;
            e.1 += 1;
        }
        Self {
            n_rows: tensor.n_stores(),
            n_cols: tensor.n_products(),
            entries: acc
                .into_iter()
                .map(|((i, j), (s, n))| (i, j, s / n as f64))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixFactors {
    pub p: Array2<f64>,
    pub q: Array2<f64>,
    pub iterations_run: usize,
    pub loss_trace: Vec<f64>,
}

impl MatrixFactors {
    pub fn predict(&self, i: usize, j: usize) -> Result<f64> {
        if i >= self.p.nrows() || j >= self.q.nrows() {
            return Err(AtlasError::Argument(format!("index ({i}, {j}) out of range")));
        }
        Ok(self.p.row(i).dot(&self.q.row(j)))
    }
}

fn ridge_rows(
    n: usize,
    by_row: &[Vec<(usize, f64)>],
    other: &Array2<f64>,
    lambda: f64,
) -> Array2<f64> {
    let k = other.ncols();
    let mut out = Array2::zeros((n, k));
    for (r, obs) in by_row.iter().enumerate() {
        if obs.is_empty() {
            continue;
        }
        let mut gram = DMatrix::from_diagonal_element(k, k, lambda);
        let mut rhs = DVector::zeros(k);
        for &(c, y) in obs {
            let x = DVector::from_iterator(k, other.row(c).iter().copied());
            gram += &x * x.transpose();
            rhs += x * y;
        }
        let sol = solve_spd_or_min_norm(gram, &rhs);
        out.row_mut(r).iter_mut().zip(sol.iter()).for_each(|(d, v)| *d = *v);
    }
    out
}

fn matrix_loss(m: &SparseMatrix, p: &Array2<f64>, q: &Array2<f64>, lambda: f64) -> f64 {
    let sse: f64 = m
        .entries
        .iter()
        .map(|&(i, j, y)| (y - p.row(i).dot(&q.row(j))).powi(2))
        .sum();
    sse + lambda * (p.iter().map(|v| v * v).sum::<f64>() + q.iter().map(|v| v * v).sum::<f64>())
}

/// Alternating least squares for `Y ≈ P Q'` with ridge weight `lambda`.
pub fn matrix_baseline_fit(
    m: &SparseMatrix,
    rank: usize,
    lambda: f64,
    max_iters: usize,
    tol: f64,
    seed: u64,
) -> Result<MatrixFactors> {
    if rank == 0 {
        return Err(AtlasError::Argument("rank must be at least 1".into()));
    }
    if m.entries.is_empty() {
        return Err(AtlasError::EmptyTensor("matrix has no observed entries".into()));
    }
    if !(lambda >= 0.0) {
        return Err(AtlasError::Argument("lambda must be nonnegative".into()));
    }
    let mut by_row = vec![Vec::new(); m.n_rows];
    let mut by_col = vec![Vec::new(); m.n_cols];
    for &(i, j, y) in &m.entries {
        if i >= m.n_rows || j >= m.n_cols {
            return Err(AtlasError::Argument(format!("entry ({i}, {j}) out of range")));
        }
        by_row[i].push((j, y));
        by_col[j].push((i, y));
    }
    let mean_abs = m.entries.iter().map(|e| e.2.abs()).sum::<f64>() / m.entries.len() as f64;
    let scale = (mean_abs / rank as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut q = Array2::from_shape_fn((m.n_cols, rank), |_| rng.random_range(0.1..1.1) * scale);
    let mut p = ridge_rows(m.n_rows, &by_row, &q, lambda);
    let mut trace = vec![matrix_loss(m, &p, &q, lambda)];
    let mut iterations_run = 0;
    for _ in 0..max_iters {
        q = ridge_rows(m.n_cols, &by_col, &p, lambda);
        p = ridge_rows(m.n_rows, &by_row, &q, lambda);
        iterations_run += 1;
        let loss = matrix_loss(m, &p, &q, lambda);
        let prev = *trace.last().unwrap();
        trace.push(loss);
        if !loss.is_finite() {
            return Err(AtlasError::Numeric(format!("non-finite loss at iteration {iterations_run}")));
        }
        if loss == 0.0 || super::bcd::improvement(prev, loss) <= tol {
            break;
        }
    }
    Ok(MatrixFactors {
        p,
        q,
        iterations_run,
        loss_trace: trace,
    })
}
