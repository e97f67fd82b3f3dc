//! Blockwise coordinate descent for the penalized CP loss.
//!
//! Each cycle updates store groups, then product groups, then every week.
//! Observations for each mode are indexed once; the design row for an
//! observation of entity `e` is the elementwise product of the factor rows of
//! the other two modes, so all three updates share one solver.

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::groups::{Group, GroupStructure};
use super::linalg::{conjugate_gradient, min_eigenvalue, pseudo_solve, solve_spd_or_min_norm};
use super::model::{triple_dot, BlockStep, FactorModel, FitDiagnostics, FitParams, Phase};
use super::penalty::{kron_quadratic, PenaltyContext};
use crate::data::{Cell, SalesTensor};
use crate::error::{AtlasError, Result};

/// Group systems larger than this are solved by conjugate gradient.
pub const DIRECT_SOLVE_LIMIT: usize = 4096;
const CG_TOL: f64 = 1e-10;
/// Added on top of the most negative eigenvalue when a system must be shifted.
const SHIFT_MARGIN: f64 = 1e-8;
/// Step halvings tried before a penalized group solve is rejected.
const MAX_HALVINGS: usize = 30;

#[derive(Debug, Clone, Copy)]
struct Entry {
    a: u32,
    b: u32,
    y: f64,
}

/// Observations grouped by one mode's entity, CSR style.
#[derive(Debug, Clone)]
struct ModeIndex {
    offsets: Vec<usize>,
    entries: Vec<Entry>,
}

impl ModeIndex {
    fn build(n: usize, cells: &[Cell], key: impl Fn(&Cell) -> (usize, usize, usize)) -> Self {
        let mut counts = vec![0usize; n + 1];
        for c in cells {
            counts[key(c).0 + 1] += 1;
        }
        for e in 0..n {
            counts[e + 1] += counts[e];
        }
        let mut fill = counts.clone();
        let mut entries = vec![Entry { a: 0, b: 0, y: 0.0 }; cells.len()];
        for c in cells {
            let (e, a, b) = key(c);
            entries[fill[e]] = Entry {
                a: a as u32,
                b: b as u32,
                y: c.value,
            };
            fill[e] += 1;
        }
        Self {
            offsets: counts,
            entries,
        }
    }

    fn of(&self, e: usize) -> &[Entry] {
        &self.entries[self.offsets[e]..self.offsets[e + 1]]
    }

    fn stores(t: &SalesTensor) -> Self {
        Self::build(t.n_stores(), t.cells(), |c| (c.store, c.product, c.week))
    }

    fn products(t: &SalesTensor) -> Self {
        Self::build(t.n_products(), t.cells(), |c| (c.product, c.store, c.week))
    }

    fn weeks(t: &SalesTensor) -> Self {
        Self::build(t.n_weeks(), t.cells(), |c| (c.week, c.store, c.product))
    }
}

/// Normal-equation pieces of one entity's least-squares block.
struct Normal {
    gram: DMatrix<f64>,
    rhs: DVector<f64>,
}

fn normal_equations(entries: &[Entry], fa: &Array2<f64>, fb: &Array2<f64>) -> Normal {
    let k = fa.ncols();
    let mut gram = vec![0.0; k * k];
    let mut rhs = vec![0.0; k];
    let mut x = vec![0.0; k];
    for e in entries {
        let ra = fa.row(e.a as usize);
        let rb = fb.row(e.b as usize);
        for l in 0..k {
            x[l] = ra[l] * rb[l];
        }
        for l in 0..k {
            let xl = x[l];
            rhs[l] += xl * e.y;
            let row = &mut gram[l * k..l * k + k];
            for m in l..k {
                row[m] += xl * x[m];
            }
        }
    }
    for l in 0..k {
        for m in 0..l {
            gram[l * k + m] = gram[m * k + l];
        }
    }
    Normal {
        gram: DMatrix::from_row_slice(k, k, &gram),
        rhs: DVector::from_vec(rhs),
    }
}

fn block_sse(entries: &[Entry], row: &[f64], fa: &Array2<f64>, fb: &Array2<f64>) -> f64 {
    entries
        .iter()
        .map(|e| {
            let pred = triple_dot(
                row,
                fa.row(e.a as usize).as_slice().unwrap(),
                fb.row(e.b as usize).as_slice().unwrap(),
            );
            (e.y - pred).powi(2)
        })
        .sum()
}

fn sq_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// Ridge target pulling one row toward `target` with weight `weight`.
#[derive(Debug, Clone, Copy)]
struct Anchor<'a> {
    target: &'a [f64],
    weight: f64,
}

struct SingleSolution {
    row: Vec<f64>,
    before: f64,
    after: f64,
}

fn solve_single(
    entries: &[Entry],
    current: &[f64],
    fa: &Array2<f64>,
    fb: &Array2<f64>,
    lambda2: f64,
    anchor: Option<Anchor<'_>>,
    trace: bool,
) -> SingleSolution {
    let k = current.len();
    let has_anchor = anchor.is_some_and(|a| a.weight > 0.0);
    if entries.is_empty() && !has_anchor {
        return SingleSolution {
            row: vec![0.0; k],
            before: 0.0,
            after: 0.0,
        };
    }
    let Normal { mut gram, mut rhs } = normal_equations(entries, fa, fb);
    let mut diag = lambda2;
    if let Some(a) = anchor.filter(|a| a.weight > 0.0) {
        diag += a.weight;
        rhs += DVector::from_column_slice(a.target) * a.weight;
    }
    for l in 0..k {
        gram[(l, l)] += diag;
    }
    let row: Vec<f64> = solve_spd_or_min_norm(gram, &rhs).iter().copied().collect();
    let objective = |r: &[f64]| {
        let mut v = block_sse(entries, r, fa, fb) + lambda2 * sq_norm(r);
        if let Some(a) = anchor {
            v += a.weight * r.iter().zip(a.target).map(|(x, t)| (x - t).powi(2)).sum::<f64>();
        }
        v
    };
    let (before, after) = if trace {
        (objective(current), objective(&row))
    } else {
        (0.0, 0.0)
    };
    SingleSolution { row, before, after }
}

struct GroupSolution {
    rows: Vec<(usize, Vec<f64>)>,
    shift: f64,
    /// Fraction of the frozen-sign step that was taken.
    step: f64,
    before: f64,
    after: f64,
}

/// Minimizes the block objective of one group with signs frozen at `current`:
/// member least squares + ridge + `lambda` times the frozen-sign penalty.
#[allow(clippy::too_many_arguments)]
fn solve_group(
    index: &ModeIndex,
    group: &Group,
    ctx: Option<&PenaltyContext>,
    current: &Array2<f64>,
    fa: &Array2<f64>,
    fb: &Array2<f64>,
    lambda: f64,
    lambda2: f64,
    trace: bool,
) -> Result<GroupSolution> {
    let k = current.ncols();
    let members = &group.members;
    let active: Vec<usize> = (0..members.len())
        .filter(|&u| !index.of(members[u]).is_empty())
        .collect();

    let penalized = ctx.is_some() && lambda > 0.0 && active.len() >= 2 && k >= 2;
    if !penalized {
        let mut rows = Vec::with_capacity(members.len());
        let (mut before, mut after) = (0.0, 0.0);
        for &m in members {
            let cur = current.row(m);
            let s = solve_single(index.of(m), cur.as_slice().unwrap(), fa, fb, lambda2, None, trace);
            before += s.before;
            after += s.after;
            rows.push((m, s.row));
        }
        return Ok(GroupSolution {
            rows,
            shift: 0.0,
            step: 1.0,
            before,
            after,
        });
    }
    let ctx = ctx.unwrap();

    // Member columns with inactive members zeroed, as they will be after
    // the solve.
    let n = members.len();
    let mut f0 = DMatrix::zeros(k, n);
    for &u in &active {
        for l in 0..k {
            f0[(l, u)] = current[[members[u], l]];
        }
    }
    let weights_full = ctx.member_weights(&ctx.signs(&f0));
    let na = active.len();
    let weights = DMatrix::from_fn(na, na, |a, b| weights_full[(active[a], active[b])]);
    let normals: Vec<Normal> = active
        .iter()
        .map(|&u| normal_equations(index.of(members[u]), fa, fb))
        .collect();
    let dim = na * k;
    let mut x0 = DVector::zeros(dim);
    for (a, &u) in active.iter().enumerate() {
        for l in 0..k {
            x0[a * k + l] = f0[(l, u)];
        }
    }
    let mut rhs = DVector::zeros(dim);
    for (a, nrm) in normals.iter().enumerate() {
        rhs.rows_mut(a * k, k).copy_from(&nrm.rhs);
    }
    let min_weight_eig = min_eigenvalue(&weights);
    let indefinite_shift = lambda * (-min_weight_eig).max(0.0) + SHIFT_MARGIN;

    let (x, shift) = if dim <= DIRECT_SOLVE_LIMIT {
        let centering = super::penalty::centering(k);
        let mut a_mat = DMatrix::zeros(dim, dim);
        for a in 0..na {
            let mut block = a_mat.view_mut((a * k, a * k), (k, k));
            block += &normals[a].gram;
            for l in 0..k {
                block[(l, l)] += lambda2;
            }
        }
        for a in 0..na {
            for b in 0..na {
                let w = lambda * weights[(a, b)];
                if w != 0.0 {
                    let mut block = a_mat.view_mut((a * k, b * k), (k, k));
                    block += &centering * w;
                }
            }
        }
        a_mat = (&a_mat + a_mat.transpose()) * 0.5;
        match a_mat.clone().cholesky() {
            Some(ch) => (ch.solve(&rhs), 0.0),
            None => {
                // Proximal shift: minimizes the frozen objective plus
                // shift * |x - x0|^2, which keeps the step a descent step.
                let shift = indefinite_shift;
                for d in 0..dim {
                    a_mat[(d, d)] += shift;
                }
                let shifted_rhs = &rhs + &x0 * shift;
                let x = match a_mat.clone().cholesky() {
                    Some(ch) => ch.solve(&shifted_rhs),
                    None => pseudo_solve(&a_mat, &shifted_rhs),
                };
                (x, shift)
            }
        }
    } else {
        let shift = if min_weight_eig < 0.0 { indefinite_shift } else { 0.0 };
        let apply = |v: &DVector<f64>, out: &mut DVector<f64>| {
            let mut centered = DMatrix::zeros(k, na);
            for a in 0..na {
                let seg = v.rows(a * k, k);
                let mean = seg.mean();
                for l in 0..k {
                    centered[(l, a)] = seg[l] - mean;
                }
            }
            let coupled = &centered * weights.transpose();
            for a in 0..na {
                let seg = v.rows(a * k, k);
                let prod = &normals[a].gram * seg;
                for l in 0..k {
                    out[a * k + l] = prod[l] + (lambda2 + shift) * seg[l] + lambda * coupled[(l, a)];
                }
            }
        };
        let b = &rhs + &x0 * shift;
        let mut x = x0.clone();
        let report = conjugate_gradient(apply, &b, &mut x, CG_TOL, 10 * dim);
        if !report.converged {
            return Err(AtlasError::Numeric(format!(
                "group {} solve did not converge after {} iterations (residual {:e})",
                group.id, report.iterations, report.relative_residual
            )));
        }
        (x, shift)
    };

    // The frozen-sign objective falls along the whole segment x0 -> x, but
    // the true penalty can rise once signs flip; halve the step until the
    // true group objective does not increase.
    let true_objective = |vec: &DVector<f64>| {
        let mut f = DMatrix::zeros(k, n);
        let mut total = 0.0;
        for (a, &u) in active.iter().enumerate() {
            let row: Vec<f64> = vec.rows(a * k, k).iter().copied().collect();
            total += block_sse(index.of(members[u]), &row, fa, fb) + lambda2 * sq_norm(&row);
            for l in 0..k {
                f[(l, u)] = row[l];
            }
        }
        total + lambda * ctx.value(&f)
    };
    let start = true_objective(&x0);
    let direction = &x - &x0;
    let mut step = 1.0;
    let mut x = x;
    for _ in 0..=MAX_HALVINGS {
        if true_objective(&x) <= start {
            break;
        }
        step *= 0.5;
        x = &x0 + &direction * step;
    }
    if true_objective(&x) > start {
        step = 0.0;
        x = x0.clone();
    }

    let mut rows: Vec<(usize, Vec<f64>)> = members.iter().map(|&m| (m, vec![0.0; k])).collect();
    for (a, &u) in active.iter().enumerate() {
        rows[u].1 = x.rows(a * k, k).iter().copied().collect();
    }

    let (before, after) = if trace {
        let objective = |vec: &DVector<f64>| {
            let mut f = DMatrix::zeros(k, na);
            let mut total = 0.0;
            for (a, &u) in active.iter().enumerate() {
                let row: Vec<f64> = vec.rows(a * k, k).iter().copied().collect();
                total += block_sse(index.of(members[u]), &row, fa, fb) + lambda2 * sq_norm(&row);
                for l in 0..k {
                    f[(l, a)] = row[l];
                }
            }
            total + lambda * kron_quadratic(&weights, &f)
        };
        (objective(&x0), objective(&x))
    } else {
        (0.0, 0.0)
    };
    Ok(GroupSolution {
        rows,
        shift,
        step,
        before,
        after,
    })
}

/// Per-week targets for the end-to-end coupling term
/// `weight * Σ_{t >= start} |w_t - target_t|^2`.
#[derive(Debug, Clone)]
pub struct TimeAnchor {
    pub targets: Array2<f64>,
    pub weight: f64,
    pub start: usize,
}

impl TimeAnchor {
    pub fn penalty(&self, w: &Array2<f64>) -> f64 {
        (self.start..w.nrows().min(self.targets.nrows()))
            .map(|t| {
                w.row(t)
                    .iter()
                    .zip(self.targets.row(t))
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
            })
            .sum::<f64>()
            * self.weight
    }
}

/// Mutable BCD state over one training tensor.
pub struct BcdFitter<'a> {
    tensor: &'a SalesTensor,
    groups: &'a GroupStructure,
    params: FitParams,
    by_store: ModeIndex,
    by_product: ModeIndex,
    by_week: ModeIndex,
    store_ctx: Vec<Option<PenaltyContext>>,
    product_ctx: Vec<Option<PenaltyContext>>,
    product_groups: Vec<Group>,
    pub p: Array2<f64>,
    pub q: Array2<f64>,
    pub w: Array2<f64>,
    pub diagnostics: FitDiagnostics,
    cycle: usize,
}

fn contexts(groups: &[Group]) -> Result<Vec<Option<PenaltyContext>>> {
    groups
        .iter()
        .map(|g| {
            if g.len() >= 2 {
                PenaltyContext::new(&g.sigma).map(Some)
            } else {
                Ok(None)
            }
        })
        .collect()
}

impl<'a> BcdFitter<'a> {
    /// Validates inputs and draws the seeded positive initialization.
    pub fn new(tensor: &'a SalesTensor, groups: &'a GroupStructure, params: FitParams) -> Result<Self> {
        let k = params.rank;
        params.validate()?;
        if tensor.is_empty() {
            return Err(AtlasError::EmptyTensor("cannot fit an empty tensor".into()));
        }
        let mean_abs = tensor.cells().iter().map(|c| c.value.abs()).sum::<f64>() / tensor.len() as f64;
        let scale = (mean_abs / k as f64).cbrt();
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let mut draw = |rows: usize| Array2::from_shape_fn((rows, k), |_| rng.random_range(0.1..1.1) * scale);
        let p = draw(tensor.n_stores());
        let q = draw(tensor.n_products());
        let w = draw(tensor.n_weeks());
        Self::with_factors(tensor, groups, params, p, q, w)
    }

    /// Starts from the given factors. Rows of entities without observations
    /// are zeroed.
    pub fn with_factors(
        tensor: &'a SalesTensor,
        groups: &'a GroupStructure,
        params: FitParams,
        mut p: Array2<f64>,
        mut q: Array2<f64>,
        mut w: Array2<f64>,
    ) -> Result<Self> {
        params.validate()?;
        let k = params.rank;
        let shape_ok = p.dim() == (tensor.n_stores(), k)
            && q.dim() == (tensor.n_products(), k)
            && w.dim() == (tensor.n_weeks(), k);
        if !shape_ok {
            return Err(AtlasError::Argument("initial factors do not match tensor and rank".into()));
        }
        groups.validate(tensor.n_stores(), tensor.n_products())?;
        let by_store = ModeIndex::stores(tensor);
        let by_product = ModeIndex::products(tensor);
        let by_week = ModeIndex::weeks(tensor);
        for (m, idx) in [(&mut p, &by_store), (&mut q, &by_product), (&mut w, &by_week)] {
            for e in 0..m.nrows() {
                if idx.of(e).is_empty() {
                    m.row_mut(e).fill(0.0);
                }
            }
        }
        let product_groups = match &groups.product_groups {
            Some(g) => g.clone(),
            None => (0..tensor.n_products())
                .map(|j| Group::equicorrelated(format!("p{j}"), vec![j], 0.0))
                .collect(),
        };
        Ok(Self {
            tensor,
            groups,
            params,
            store_ctx: contexts(&groups.store_groups)?,
            product_ctx: contexts(&product_groups)?,
            product_groups,
            by_store,
            by_product,
            by_week,
            p,
            q,
            w,
            diagnostics: FitDiagnostics::default(),
            cycle: 0,
        })
    }

    pub fn params(&self) -> &FitParams {
        &self.params
    }

    fn record(&mut self, phase: Phase, block: usize, before: f64, after: f64) {
        if self.params.trace_blocks {
            self.diagnostics.block_trace.push(BlockStep {
                cycle: self.cycle,
                phase,
                block,
                before,
                after,
            });
        }
    }

    fn apply_groups(&mut self, phase: Phase, solutions: Vec<GroupSolution>) {
        for (g, sol) in solutions.into_iter().enumerate() {
            if sol.shift > 0.0 {
                self.diagnostics.shifted_solves += 1;
                self.diagnostics.max_shift = self.diagnostics.max_shift.max(sol.shift);
            }
            if sol.step < 1.0 {
                self.diagnostics.damped_solves += 1;
            }
            if sol.step == 0.0 {
                self.diagnostics.rejected_solves += 1;
            }
            let target = if phase == Phase::Store { &mut self.p } else { &mut self.q };
            for (m, row) in sol.rows {
                target.row_mut(m).iter_mut().zip(row).for_each(|(d, v)| *d = v);
            }
            self.record(phase, g, sol.before, sol.after);
        }
    }

    pub fn update_stores(&mut self) -> Result<()> {
        let trace = self.params.trace_blocks;
        let (lambda, lambda2) = (self.params.lambda1, self.params.lambda2);
        let solutions = self
            .groups
            .store_groups
            .par_iter()
            .zip(self.store_ctx.par_iter())
            .map(|(g, ctx)| {
                solve_group(&self.by_store, g, ctx.as_ref(), &self.p, &self.q, &self.w, lambda, lambda2, trace)
            })
            .collect::<Result<Vec<_>>>()?;
        self.apply_groups(Phase::Store, solutions);
        Ok(())
    }

    pub fn update_products(&mut self) -> Result<()> {
        let trace = self.params.trace_blocks;
        let (lambda, lambda2) = (self.params.lambda1_star, self.params.lambda2);
        let solutions = self
            .product_groups
            .par_iter()
            .zip(self.product_ctx.par_iter())
            .map(|(g, ctx)| {
                solve_group(&self.by_product, g, ctx.as_ref(), &self.q, &self.p, &self.w, lambda, lambda2, trace)
            })
            .collect::<Result<Vec<_>>>()?;
        self.apply_groups(Phase::Product, solutions);
        Ok(())
    }

    /// Ridge update of every week, optionally pulled toward anchor targets.
    pub fn update_time(&mut self, anchor: Option<&TimeAnchor>) -> Result<()> {
        let trace = self.params.trace_blocks;
        let lambda2 = self.params.lambda2;
        let n_weeks = self.w.nrows();
        let solutions: Vec<SingleSolution> = (0..n_weeks)
            .into_par_iter()
            .map(|t| {
                let a = anchor.and_then(|a| {
                    (t >= a.start && t < a.targets.nrows()).then(|| Anchor {
                        target: a.targets.row(t).to_slice().expect("row-major anchor targets"),
                        weight: a.weight,
                    })
                });
                solve_single(
                    self.by_week.of(t),
                    self.w.row(t).as_slice().unwrap(),
                    &self.p,
                    &self.q,
                    lambda2,
                    a,
                    trace,
                )
            })
            .collect();
        for (t, s) in solutions.into_iter().enumerate() {
            self.w.row_mut(t).iter_mut().zip(&s.row).for_each(|(d, v)| *d = *v);
            self.record(Phase::Time, t, s.before, s.after);
        }
        Ok(())
    }

    /// One full cycle: stores, products, weeks.
    pub fn cycle(&mut self, anchor: Option<&TimeAnchor>) -> Result<()> {
        self.cycle += 1;
        self.update_stores()?;
        self.update_products()?;
        self.update_time(anchor)?;
        Ok(())
    }

    pub fn squared_error(&self) -> f64 {
        squared_error(self.tensor.cells(), &self.p, &self.q, &self.w)
    }

    pub fn demand_penalties(&self) -> (f64, f64) {
        let k = self.params.rank;
        let total = |groups: &[Group], ctxs: &[Option<PenaltyContext>], f: &Array2<f64>| -> f64 {
            if k < 2 {
                return 0.0;
            }
            groups
                .iter()
                .zip(ctxs)
                .filter_map(|(g, c)| c.as_ref().map(|c| (g, c)))
                .map(|(g, c)| c.value(&member_columns(f, &g.members)))
                .sum()
        };
        (
            total(&self.groups.store_groups, &self.store_ctx, &self.p),
            total(&self.product_groups, &self.product_ctx, &self.q),
        )
    }

    /// Penalized loss: squared error over observed cells, demand penalties
    /// and ridge terms.
    pub fn loss(&self) -> f64 {
        let (f, h) = self.demand_penalties();
        let ridge = sq_norm(self.p.as_slice().unwrap())
            + sq_norm(self.q.as_slice().unwrap())
            + sq_norm(self.w.as_slice().unwrap());
        self.squared_error() + self.params.lambda1 * f + self.params.lambda1_star * h + self.params.lambda2 * ridge
    }

    pub fn into_model(self, loss_trace: Vec<f64>, iterations_run: usize, converged: bool) -> FactorModel {
        FactorModel {
            final_loss: loss_trace.last().copied().unwrap_or(f64::NAN),
            p: self.p,
            q: self.q,
            w: self.w,
            params: self.params,
            iterations_run,
            converged,
            loss_trace,
            diagnostics: self.diagnostics,
            standardizer: crate::data::Standardizer::identity(),
            store_ids: self.tensor.store_ids().to_vec(),
            product_ids: self.tensor.product_ids().to_vec(),
            week_origin: self.tensor.week_origin(),
        }
    }
}

/// Member rows gathered as columns (k × members).
pub(crate) fn member_columns(f: &Array2<f64>, members: &[usize]) -> DMatrix<f64> {
    let k = f.ncols();
    DMatrix::from_fn(k, members.len(), |l, u| f[[members[u], l]])
}

/// Sum of squared residuals over `cells`, reduced in fixed-size chunks so the
/// result does not depend on thread scheduling.
pub fn squared_error(cells: &[Cell], p: &Array2<f64>, q: &Array2<f64>, w: &Array2<f64>) -> f64 {
    cells
        .par_chunks(16_384)
        .map(|chunk| {
            chunk
                .iter()
                .map(|c| {
                    let pred = triple_dot(
                        p.row(c.store).as_slice().unwrap(),
                        q.row(c.product).as_slice().unwrap(),
                        w.row(c.week).as_slice().unwrap(),
                    );
                    (c.value - pred).powi(2)
                })
                .sum::<f64>()
        })
        .collect::<Vec<f64>>()
        .into_iter()
        .sum()
}

/// Relative loss improvement `1 - current / previous`.
pub fn improvement(previous: f64, current: f64) -> f64 {
    if previous > 0.0 {
        1.0 - current / previous
    } else {
        0.0
    }
}

/// Fits the penalized CP model by blockwise coordinate descent.
pub fn fit(tensor: &SalesTensor, groups: &GroupStructure, params: FitParams) -> Result<FactorModel> {
    let mut fitter = BcdFitter::new(tensor, groups, params)?;
    run_cycles(&mut fitter, None)
        .map(|(trace, iters, converged)| fitter.into_model(trace, iters, converged))
}

/// Cycles until the improvement criterion or the iteration cap is hit.
/// Returns the loss trace, the number of cycles and whether the criterion fired.
fn run_cycles(
    fitter: &mut BcdFitter<'_>,
    anchor: Option<&TimeAnchor>,
) -> Result<(Vec<f64>, usize, bool)> {
    let extra = |f: &BcdFitter<'_>| anchor.map_or(0.0, |a| a.penalty(&f.w));
    let mut previous = fitter.loss() + extra(fitter);
    if !previous.is_finite() {
        return Err(AtlasError::Numeric("non-finite loss at initialization".into()));
    }
    let mut trace = vec![previous];
    let max_iters = fitter.params.max_iters;
    for u in 1..=max_iters {
        fitter.cycle(anchor)?;
        let current = fitter.loss() + extra(fitter);
        if !current.is_finite() {
            return Err(AtlasError::Numeric(format!("non-finite loss at iteration {u}")));
        }
        trace.push(current);
        if current == 0.0 || improvement(previous, current) <= fitter.params.tol {
            return Ok((trace, u, true));
        }
        previous = current;
    }
    Ok((trace, max_iters, false))
}

/// One ridge pass over all weeks with `p` and `q` held fixed.
pub fn update_time_factors(tensor: &SalesTensor, p: &Array2<f64>, q: &Array2<f64>, lambda2: f64) -> Array2<f64> {
    let k = p.ncols();
    let index = ModeIndex::weeks(tensor);
    let mut w = Array2::zeros((tensor.n_weeks(), k));
    for t in 0..tensor.n_weeks() {
        let zeros = vec![0.0; k];
        let s = solve_single(index.of(t), &zeros, p, q, lambda2, None, false);
        w.row_mut(t).iter_mut().zip(s.row).for_each(|(d, v)| *d = v);
    }
    w
}

/// Re-estimates one store group with `q` and `w` fixed, signs frozen at the
/// incoming `p`. Returns the members' new rows in member order.
pub fn update_store_group(
    tensor: &SalesTensor,
    group: &Group,
    p: &Array2<f64>,
    q: &Array2<f64>,
    w: &Array2<f64>,
    lambda1: f64,
    lambda2: f64,
) -> Result<Array2<f64>> {
    let index = ModeIndex::stores(tensor);
    update_group(&index, group, p, q, w, lambda1, lambda2)
}

/// Mirror of [`update_store_group`] for a product group.
pub fn update_product_group(
    tensor: &SalesTensor,
    group: &Group,
    p: &Array2<f64>,
    q: &Array2<f64>,
    w: &Array2<f64>,
    lambda1_star: f64,
    lambda2: f64,
) -> Result<Array2<f64>> {
    let index = ModeIndex::products(tensor);
    update_group(&index, group, q, p, w, lambda1_star, lambda2)
}

fn update_group(
    index: &ModeIndex,
    group: &Group,
    current: &Array2<f64>,
    fa: &Array2<f64>,
    fb: &Array2<f64>,
    lambda: f64,
    lambda2: f64,
) -> Result<Array2<f64>> {
    let ctx = if group.len() >= 2 {
        Some(PenaltyContext::new(&group.sigma)?)
    } else {
        None
    };
    let sol = solve_group(index, group, ctx.as_ref(), current, fa, fb, lambda, lambda2, false)?;
    let k = current.ncols();
    let mut out = Array2::zeros((group.len(), k));
    for (u, (_, row)) in sol.rows.into_iter().enumerate() {
        out.row_mut(u).iter_mut().zip(row).for_each(|(d, v)| *d = v);
    }
    Ok(out)
}
