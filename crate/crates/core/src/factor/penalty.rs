//! The within-group demand penalty.
//!
//! For a group with member factor columns `F` (k × n_g) and target covariance
//! `Σ`, the empirical covariance `Σ̂ = F' C F` (with `C` centering each member's
//! latent vector over its k coordinates) is whitened to
//! `Σ̃ = Σ^{-1/2} Σ̂ Σ^{-1/2}'`, and the penalty is the sum of absolute
//! off-diagonal entries of `Σ̃`.
//!
//! Freezing the signs `s_ab` of those entries turns the penalty into the
//! quadratic form `vec(F)' M vec(F)` with `M = (R' S R) ⊗ C`, where `R` is the
//! whitening matrix and `S` the symmetric sign matrix with zero diagonal.

use nalgebra::DMatrix;

use super::linalg::{inverse_sqrt, DEFAULT_EIG_FLOOR};
use crate::error::{AtlasError, Result};

/// `I - 11'/k`.
pub fn centering(k: usize) -> DMatrix<f64> {
    let kf = k as f64;
    DMatrix::from_fn(k, k, |a, b| if a == b { 1.0 - 1.0 / kf } else { -1.0 / kf })
}

/// `F' C F` for member columns `F` (k × n_g).
pub fn empirical_cov(f: &DMatrix<f64>) -> DMatrix<f64> {
    let centered = center_columns(f);
    centered.transpose() * centered
}

/// `C F` computed without materializing `C`.
fn center_columns(f: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = f.clone();
    for mut col in out.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
    out
}

fn sum_abs_off_diagonal(m: &DMatrix<f64>) -> f64 {
    let mut s = 0.0;
    for a in 0..m.nrows() {
        for b in 0..m.ncols() {
            if a != b {
                s += m[(a, b)].abs();
            }
        }
    }
    s
}

/// Penalty evaluated straight from its definition.
pub fn penalty_direct(f: &DMatrix<f64>, sigma: &DMatrix<f64>) -> Result<f64> {
    if sigma.nrows() != f.ncols() {
        return Err(AtlasError::Argument(format!(
            "{} member columns but a {}x{} covariance",
            f.ncols(),
            sigma.nrows(),
            sigma.ncols()
        )));
    }
    let r = inverse_sqrt(sigma, DEFAULT_EIG_FLOOR)?;
    Ok(sum_abs_off_diagonal(&(&r * empirical_cov(f) * r.transpose())))
}

/// Cached per-group state: the whitening matrix `R = Σ^{-1/2}`.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyContext {
    pub inv_sqrt: DMatrix<f64>,
}

impl PenaltyContext {
    pub fn new(sigma: &DMatrix<f64>) -> Result<Self> {
        Ok(Self {
            inv_sqrt: inverse_sqrt(sigma, DEFAULT_EIG_FLOOR)?,
        })
    }

    pub fn size(&self) -> usize {
        self.inv_sqrt.nrows()
    }

    /// Column `a` of `R'`.
    pub fn gamma(&self, a: usize) -> nalgebra::DVector<f64> {
        self.inv_sqrt.row(a).transpose()
    }

    pub fn whitened_cov(&self, f: &DMatrix<f64>) -> DMatrix<f64> {
        &self.inv_sqrt * empirical_cov(f) * self.inv_sqrt.transpose()
    }

    pub fn value(&self, f: &DMatrix<f64>) -> f64 {
        sum_abs_off_diagonal(&self.whitened_cov(f))
    }

    /// Sign matrix of the off-diagonal whitened covariance entries; zero
    /// entries count as positive, the diagonal is zero.
    pub fn signs(&self, f: &DMatrix<f64>) -> DMatrix<f64> {
        let w = self.whitened_cov(f);
        let n = w.nrows();
        DMatrix::from_fn(n, n, |a, b| {
            if a == b {
                0.0
            } else if w[(a, b)] < 0.0 {
                -1.0
            } else {
                1.0
            }
        })
    }

    /// `R' S R`, the member-space factor of the frozen-sign system matrix.
    pub fn member_weights(&self, signs: &DMatrix<f64>) -> DMatrix<f64> {
        let w = self.inv_sqrt.transpose() * signs * &self.inv_sqrt;
        (&w + w.transpose()) * 0.5
    }
}

/// `vec(F)' (A ⊗ C) vec(F) = Σ_uv A_uv f_u' C f_v`.
pub fn kron_quadratic(weights: &DMatrix<f64>, f: &DMatrix<f64>) -> f64 {
    let centered = center_columns(f);
    let gram = centered.transpose() * &centered;
    weights.component_mul(&gram).sum()
}

/// Frozen-sign quadratic form of the penalty at the current `F`.
///
/// Returns the value and the `(n_g k) × (n_g k)` system matrix
/// `Σ_{a<b} s_ab U_ab` with `U_ab = (γ_a γ_b' + γ_b γ_a') ⊗ C`, indexed to
/// match `vec(F)` (member-major: entries `u*k .. u*k+k` belong to member `u`).
pub fn penalty_quadratic(f: &DMatrix<f64>, ctx: &PenaltyContext) -> (f64, DMatrix<f64>) {
    let (k, n) = f.shape();
    let signs = ctx.signs(f);
    let c = centering(k);
    let mut system = DMatrix::zeros(n * k, n * k);
    for a in 0..n {
        for b in (a + 1)..n {
            let (ga, gb) = (ctx.gamma(a), ctx.gamma(b));
            let outer = &ga * gb.transpose() + &gb * ga.transpose();
            let s = signs[(a, b)];
            for u in 0..n {
                for v in 0..n {
                    let w = s * outer[(u, v)];
                    if w != 0.0 {
                        let mut block = system.view_mut((u * k, v * k), (k, k));
                        block += &c * w;
                    }
                }
            }
        }
    }
    let vec_f = DMatrix::from_column_slice(n * k, 1, f.as_slice());
    let value = (vec_f.transpose() * &system * &vec_f)[(0, 0)];
    (value, system)
}
