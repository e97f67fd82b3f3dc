use std::fmt::Write as _;

use ndarray::Array2;

use crate::data::{KeyValues, Standardizer, StandardizeMode};
use crate::error::{AtlasError, Result};

/// Hyperparameters of the regularized CP fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitParams {
    pub rank: usize,
    /// Weight of the store-group demand penalty.
    pub lambda1: f64,
    /// Weight of the product-group demand penalty.
    pub lambda1_star: f64,
    /// Ridge weight on every factor row.
    pub lambda2: f64,
    pub max_iters: usize,
    /// Stop once the relative loss improvement of a full cycle is at most this.
    pub tol: f64,
    pub seed: u64,
    /// Record the frozen-sign objective around every block solve.
    pub trace_blocks: bool,
}

impl Default for FitParams {
    fn default() -> Self {
        Self {
            rank: 8,
            lambda1: 0.0,
            lambda1_star: 0.0,
            lambda2: 1.0,
            max_iters: 200,
            tol: 1e-3,
            seed: 0,
            trace_blocks: false,
        }
    }
}

impl FitParams {
    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(AtlasError::Argument("rank must be at least 1".into()));
        }
        for (name, v) in [
            ("lambda1", self.lambda1),
            ("lambda1_star", self.lambda1_star),
            ("lambda2", self.lambda2),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(AtlasError::Argument(format!("{name} must be finite and nonnegative")));
            }
        }
        if !(self.tol.is_finite()) {
            return Err(AtlasError::Argument("tol must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Store,
    Product,
    Time,
}

/// Frozen-sign block objective immediately before and after one solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockStep {
    pub cycle: usize,
    pub phase: Phase,
    pub block: usize,
    pub before: f64,
    pub after: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FitDiagnostics {
    /// Group solves that needed a diagonal shift to stay positive definite.
    pub shifted_solves: usize,
    pub max_shift: f64,
    /// Penalized group solves shortened so the true objective did not rise.
    pub damped_solves: usize,
    /// Penalized group solves discarded because no shortened step helped.
    pub rejected_solves: usize,
    pub block_trace: Vec<BlockStep>,
}

/// Fitted store, product and week factors.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorModel {
    /// n_stores × k.
    pub p: Array2<f64>,
    /// n_products × k.
    pub q: Array2<f64>,
    /// n_weeks × k; may be longer than the training window after extension.
    pub w: Array2<f64>,
    pub params: FitParams,
    pub iterations_run: usize,
    pub converged: bool,
    pub final_loss: f64,
    /// Loss at initialization followed by the loss after every cycle.
    pub loss_trace: Vec<f64>,
    pub diagnostics: FitDiagnostics,
    pub standardizer: Standardizer,
    pub store_ids: Vec<String>,
    pub product_ids: Vec<String>,
    pub week_origin: i64,
}

impl FactorModel {
    /// A model from raw factors, with no fit history.
    pub fn from_factors(p: Array2<f64>, q: Array2<f64>, w: Array2<f64>) -> Result<Self> {
        let k = p.ncols();
        if k == 0 || q.ncols() != k || w.ncols() != k {
            return Err(AtlasError::Argument("factor matrices need the same positive rank".into()));
        }
        Ok(Self {
            store_ids: (0..p.nrows()).map(|i| i.to_string()).collect(),
            product_ids: (0..q.nrows()).map(|j| j.to_string()).collect(),
            p,
            q,
            w,
            params: FitParams {
                rank: k,
                ..FitParams::default()
            },
            iterations_run: 0,
            converged: false,
            final_loss: f64::NAN,
            loss_trace: Vec::new(),
            diagnostics: FitDiagnostics::default(),
            standardizer: Standardizer::identity(),
            week_origin: 0,
        })
    }

    pub fn rank(&self) -> usize {
        self.p.ncols()
    }

    pub fn n_weeks(&self) -> usize {
        self.w.nrows()
    }

    /// Prediction on the standardized scale.
    pub fn predict_raw(&self, i: usize, j: usize, t: usize) -> Result<f64> {
        if i >= self.p.nrows() || j >= self.q.nrows() || t >= self.w.nrows() {
            return Err(AtlasError::Argument(format!(
                "index ({i}, {j}, {t}) outside {}x{}x{}",
                self.p.nrows(),
                self.q.nrows(),
                self.w.nrows()
            )));
        }
        Ok(triple_dot(
            self.p.row(i).as_slice().unwrap(),
            self.q.row(j).as_slice().unwrap(),
            self.w.row(t).as_slice().unwrap(),
        ))
    }

    /// `Σ_l p_il q_jl w_tl`, mapped back through the attached standardizer.
    pub fn predict(&self, i: usize, j: usize, t: usize) -> Result<f64> {
        Ok(self.standardizer.invert(self.predict_raw(i, j, t)?))
    }

    pub fn to_text(&self) -> String {
        let mut kv = KeyValues::new();
        kv.push("format", "atlas-model-v1");
        kv.push("rank", self.rank());
        kv.push("n_stores", self.p.nrows());
        kv.push("n_products", self.q.nrows());
        kv.push("n_weeks", self.w.nrows());
        kv.push("lambda1", self.params.lambda1);
        kv.push("lambda1_star", self.params.lambda1_star);
        kv.push("lambda2", self.params.lambda2);
        kv.push("max_iters", self.params.max_iters);
        kv.push("tol", self.params.tol);
        kv.push("seed", self.params.seed);
        kv.push("iterations_run", self.iterations_run);
        kv.push("converged", self.converged);
        kv.push("final_loss", self.final_loss);
        kv.push("week_origin", self.week_origin);
        kv.push("standardize", self.standardizer.mode);
        kv.push("standardize_mean", self.standardizer.mean);
        kv.push("standardize_stddev", self.standardizer.stddev);
        for s in &self.store_ids {
            kv.push("store", s);
        }
        for p in &self.product_ids {
            kv.push("product", p);
        }
        for (key, m) in [("P", &self.p), ("Q", &self.q), ("W", &self.w)] {
            for row in m.rows() {
                let mut line = String::new();
                for (l, v) in row.iter().enumerate() {
                    if l > 0 {
                        line.push(' ');
                    }
                    let _ = write!(line, "{v:e}");
                }
                kv.push(key, line);
            }
        }
        kv.render()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let kv = KeyValues::parse(text)?;
        if kv.require("format")? != "atlas-model-v1" {
            return Err(AtlasError::Schema("unsupported model format".into()));
        }
        let rank: usize = kv.require_value("rank")?;
        if rank == 0 {
            return Err(AtlasError::Schema("rank must be positive".into()));
        }
        let read_matrix = |key: &str, rows: usize| -> Result<Array2<f64>> {
            let lines: Vec<&str> = kv.get_all(key).collect();
            if lines.len() != rows {
                return Err(AtlasError::Schema(format!("{key} has {} rows, expected {rows}", lines.len())));
            }
            let mut data = Vec::with_capacity(rows.saturating_mul(rank).min(1 << 24));
            for line in lines {
                let before = data.len();
                for tok in line.split_whitespace() {
                    let v: f64 = tok
                        .parse()
                        .map_err(|_| AtlasError::Schema(format!("bad number {tok:?} in {key}")))?;
                    if !v.is_finite() {
                        return Err(AtlasError::Schema(format!("non-finite entry in {key}")));
                    }
                    data.push(v);
                }
                if data.len() - before != rank {
                    return Err(AtlasError::Schema(format!("{key} row has wrong length")));
                }
            }
            Array2::from_shape_vec((rows, rank), data).map_err(|e| AtlasError::Schema(e.to_string()))
        };
        let n_stores: usize = kv.require_value("n_stores")?;
        let n_products: usize = kv.require_value("n_products")?;
        let n_weeks: usize = kv.require_value("n_weeks")?;
        let store_ids: Vec<String> = kv.get_all("store").map(String::from).collect();
        let product_ids: Vec<String> = kv.get_all("product").map(String::from).collect();
        if store_ids.len() != n_stores || product_ids.len() != n_products {
            return Err(AtlasError::Schema("id lists do not match declared sizes".into()));
        }
        let mode: StandardizeMode = kv.require("standardize")?.parse()?;
        let standardizer = Standardizer {
            mode,
            mean: kv.require_value("standardize_mean")?,
            stddev: kv.require_value("standardize_stddev")?,
        };
        Ok(Self {
            p: read_matrix("P", n_stores)?,
            q: read_matrix("Q", n_products)?,
            w: read_matrix("W", n_weeks)?,
            params: FitParams {
                rank,
                lambda1: kv.require_value("lambda1")?,
                lambda1_star: kv.require_value("lambda1_star")?,
                lambda2: kv.require_value("lambda2")?,
                max_iters: kv.require_value("max_iters")?,
                tol: kv.require_value("tol")?,
                seed: kv.require_value("seed")?,
                trace_blocks: false,
            },
            iterations_run: kv.require_value("iterations_run")?,
            converged: kv.require_value("converged")?,
            final_loss: kv.require_value("final_loss")?,
            loss_trace: Vec::new(),
            diagnostics: FitDiagnostics::default(),
            standardizer,
            store_ids,
            product_ids,
            week_origin: kv.require_value("week_origin")?,
        })
    }

    /// `iteration,loss` rows; iteration 0 is the initialization.
    pub fn loss_trace_csv(&self) -> String {
        let mut out = String::from("iteration,loss\n");
        for (u, l) in self.loss_trace.iter().enumerate() {
            let _ = writeln!(out, "{u},{l:e}");
        }
        out
    }
}

#[inline]
pub(crate) fn triple_dot(a: &[f64], b: &[f64], c: &[f64]) -> f64 {
    a.iter().zip(b).zip(c).map(|((x, y), z)| x * y * z).sum()
}
