//! Train, extrapolate and forecast: the two-step ATLAS pipeline, its
//! end-to-end variant, contextual residualization and validation tuning.

mod config;
mod context;
mod output;
mod tune;

use std::collections::HashMap;

use ndarray::Array2;

use crate::data::{SalesTensor, SplitSpec, Standardizer};
use crate::error::{AtlasError, Result};
use crate::factor::{improvement, BcdFitter, FactorModel, GroupStructure, TimeAnchor};
use crate::forecast::{extend_time_factors, fit_forecasters, DimensionForecast, Extension};

pub use config::{ForecastCells, ForecasterKind, PipelineConfig, TuneGrid, TuneStrategy, CONFIG_KEYS};
pub use context::{fit_context, parse_features_csv, run_contextual, ContextFeatures, ContextModel, ContextRun};
pub use output::{parse_forecasts_csv, write_forecasts_csv, ForecastRow};
pub use tune::{tune, validation_rmse, LeaderboardEntry, TuneResult};

/// Cells (or, for the forecaster, weeks) at or past the end of training that
/// each fitting stage received. All zero in a leak-free run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Leakage {
    pub standardizer: usize,
    pub factor_fit: usize,
    pub forecaster: usize,
    pub context: usize,
}

impl Leakage {
    pub fn total(&self) -> usize {
        self.standardizer + self.factor_fit + self.forecaster + self.context
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forecast {
    pub store: usize,
    pub product: usize,
    pub week: usize,
    pub y_hat: f64,
    pub y_true: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    TwoStep,
    EndToEnd,
    /// Two-step fit with the last row of `W` repeated instead of forecast.
    FrozenW,
}

/// Weeks `start..end` receive forecasts from a model trained on
/// `0..train_end`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub train_end: usize,
    pub start: usize,
    pub end: usize,
}

impl Window {
    pub fn test(split: SplitSpec) -> Self {
        Self {
            train_end: split.train_end,
            start: split.valid_end,
            end: split.test_end,
        }
    }

    pub fn validation(split: SplitSpec) -> Self {
        Self {
            train_end: split.train_end,
            start: split.train_end,
            end: split.valid_end,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AtlasRun {
    /// Fitted model whose `W` is extended through the last forecast week.
    pub model: FactorModel,
    pub split: SplitSpec,
    pub window: Window,
    pub forecasters: Vec<DimensionForecast>,
    pub forecasts: Vec<Forecast>,
    pub leakage: Leakage,
}

impl AtlasRun {
    /// `(y_true, y_hat)` for every forecast with an observed truth.
    pub fn scored_pairs(&self) -> Vec<(f64, f64)> {
        self.forecasts
            .iter()
            .filter_map(|f| f.y_true.map(|y| (y, f.y_hat)))
            .collect()
    }

    pub fn extension(&self) -> Extension {
        Extension {
            w: self.model.w.clone(),
            dimensions: self.forecasters.clone(),
        }
    }
}

/// Fits on the training split, extends `W` through the test window and
/// forecasts it.
pub fn run_atlas(tensor: &SalesTensor, groups: &GroupStructure, config: &PipelineConfig) -> Result<AtlasRun> {
    let split = config.split_for(tensor.n_weeks())?;
    execute(tensor, groups, config, Mode::TwoStep, Window::test(split))
}

/// As [`run_atlas`], with `W` and its forecaster fitted jointly.
pub fn run_end_to_end(tensor: &SalesTensor, groups: &GroupStructure, config: &PipelineConfig) -> Result<AtlasRun> {
    let split = config.split_for(tensor.n_weeks())?;
    execute(tensor, groups, config, Mode::EndToEnd, Window::test(split))
}

/// Runs one pipeline mode and forecasts the weeks of `window`.
pub fn execute(
    tensor: &SalesTensor,
    groups: &GroupStructure,
    config: &PipelineConfig,
    mode: Mode,
    window: Window,
) -> Result<AtlasRun> {
    config.validate()?;
    let split = config.split_for(tensor.n_weeks())?;
    let fitted = fit_model(tensor, groups, config, mode, window.train_end)?;
    let mut leakage = fitted.leakage;
    let mut model = fitted.model;
    leakage.forecaster += model.w.nrows().saturating_sub(window.train_end);
    let forecasters = extend_model(&mut model, fitted.forecasters, config, mode, window.end)?;
    let forecasts = emit_forecasts(tensor, config.forecast_cells, window, |i, j, t| model.predict(i, j, t))?;
    Ok(AtlasRun {
        model,
        split,
        window,
        forecasters,
        forecasts,
        leakage,
    })
}

/// A factor model fitted on weeks `0..train_end`.
#[derive(Debug, Clone)]
pub struct FittedModel {
    /// Carries the training standardizer.
    pub model: FactorModel,
    /// Forecasters fitted jointly with `W` in end-to-end mode.
    pub forecasters: Option<Vec<DimensionForecast>>,
    pub leakage: Leakage,
}

/// Fits the standardizer and the factor model on the cells before
/// `train_end`.
pub fn fit_model(
    tensor: &SalesTensor,
    groups: &GroupStructure,
    config: &PipelineConfig,
    mode: Mode,
    train_end: usize,
) -> Result<FittedModel> {
    config.validate()?;
    let train = tensor.truncate_weeks(train_end);
    if train.is_empty() {
        return Err(AtlasError::EmptyTensor("training split has no cells".into()));
    }
    let late = |t: &SalesTensor| t.cells().iter().filter(|c| c.week >= train_end).count();
    let mut leakage = Leakage {
        standardizer: late(&train),
        ..Leakage::default()
    };
    let standardizer = Standardizer::fit(&train, config.standardize);
    let train_std = standardizer.apply_tensor(&train);
    leakage.factor_fit += late(&train_std);
    let (mut model, forecasters) = match mode {
        Mode::TwoStep | Mode::FrozenW => {
            let model = crate::factor::fit(&train_std, groups, config.fit).map_err(|e| e.in_stage("factorize"))?;
            (model, None)
        }
        Mode::EndToEnd => {
            let (model, dims) = fit_end_to_end(&train_std, groups, config).map_err(|e| e.in_stage("end-to-end fit"))?;
            (model, Some(dims))
        }
    };
    model.standardizer = standardizer;
    Ok(FittedModel {
        model,
        forecasters,
        leakage,
    })
}

/// Extends `model.w` through week `end - 1`. Forecasters are fitted on the
/// current `W` unless already given; `FrozenW` repeats the last row.
pub fn extend_model(
    model: &mut FactorModel,
    forecasters: Option<Vec<DimensionForecast>>,
    config: &PipelineConfig,
    mode: Mode,
    end: usize,
) -> Result<Vec<DimensionForecast>> {
    let horizon = end.saturating_sub(model.w.nrows());
    let (w_ext, dims) = match forecasters {
        Some(dims) => (extend_with(&model.w, &dims, horizon), dims),
        None if mode == Mode::FrozenW => {
            let dims = vec![DimensionForecast::CarriedForward { reason: "frozen".into() }; model.rank()];
            (extend_with(&model.w, &dims, horizon), dims)
        }
        None => {
            let ext = extend_time_factors(&model.w, &config.method(), horizon).map_err(|e| e.in_stage("forecast"))?;
            (ext.w, ext.dimensions)
        }
    };
    model.w = w_ext;
    Ok(dims)
}

/// Appends `horizon` rows forecast by already fitted per-dimension models.
fn extend_with(w: &Array2<f64>, dims: &[DimensionForecast], horizon: usize) -> Array2<f64> {
    let (t, k) = w.dim();
    let mut out = Array2::zeros((t + horizon, k));
    out.slice_mut(ndarray::s![..t, ..]).assign(w);
    for (l, d) in dims.iter().enumerate() {
        let series = w.column(l).to_vec();
        for (h, v) in d.forecast(&series, horizon).into_iter().enumerate() {
            out[[t + h, l]] = if v.is_finite() { v } else { series[t - 1] };
        }
    }
    out
}

/// Emits a forecast for every requested cell of `window`: the observed
/// cells, or the full store × product grid.
pub fn emit_forecasts(
    tensor: &SalesTensor,
    cells: ForecastCells,
    window: Window,
    predict: impl Fn(usize, usize, usize) -> Result<f64>,
) -> Result<Vec<Forecast>> {
    let in_window = |week: usize| week >= window.start && week < window.end;
    let mut out = Vec::new();
    match cells {
        ForecastCells::Observed => {
            for c in tensor.cells().iter().filter(|c| in_window(c.week)) {
                out.push(Forecast {
                    store: c.store,
                    product: c.product,
                    week: c.week,
                    y_hat: predict(c.store, c.product, c.week)?,
                    y_true: Some(c.value),
                });
            }
        }
        ForecastCells::FullGrid => {
            let truth: HashMap<(usize, usize, usize), f64> = tensor
                .cells()
                .iter()
                .filter(|c| in_window(c.week))
                .map(|c| ((c.store, c.product, c.week), c.value))
                .collect();
            for week in window.start..window.end {
                for store in 0..tensor.n_stores() {
                    for product in 0..tensor.n_products() {
                        out.push(Forecast {
                            store,
                            product,
                            week,
                            y_hat: predict(store, product, week)?,
                            y_true: truth.get(&(store, product, week)).copied(),
                        });
                    }
                }
            }
        }
    }
    Ok(out)
}

/// One-step predictions of each column by its forecaster; weeks without
/// enough history target their current value.
fn anchor_targets(w: &Array2<f64>, dims: &[DimensionForecast]) -> Array2<f64> {
    let mut targets = w.clone();
    for (l, d) in dims.iter().enumerate() {
        let series = w.column(l).to_vec();
        for (t, p) in d.one_step(&series).into_iter().enumerate() {
            if let Some(v) = p.filter(|v| v.is_finite()) {
                targets[[t, l]] = v;
            }
        }
    }
    targets
}

/// BCD over `(P, Q, W, θ)`: each `W` update is pulled toward the one-step
/// predictions of the forecasters fitted after the previous cycle.
pub fn fit_end_to_end(
    train: &SalesTensor,
    groups: &GroupStructure,
    config: &PipelineConfig,
) -> Result<(FactorModel, Vec<DimensionForecast>)> {
    let method = config.method();
    let mut fitter = BcdFitter::new(train, groups, config.fit)?;
    let mut anchor: Option<TimeAnchor> = None;
    let mut previous = fitter.loss();
    if !previous.is_finite() {
        return Err(AtlasError::Numeric("non-finite loss at initialization".into()));
    }
    let mut trace = vec![previous];
    let mut dims = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    for u in 1..=config.fit.max_iters {
        iterations = u;
        fitter.cycle(anchor.as_ref())?;
        dims = fit_forecasters(&fitter.w, &method)?;
        let next = TimeAnchor {
            targets: anchor_targets(&fitter.w, &dims),
            weight: config.lambda3,
            start: 0,
        };
        let current = fitter.loss() + next.penalty(&fitter.w);
        if !current.is_finite() {
            return Err(AtlasError::Numeric(format!("non-finite loss at iteration {u}")));
        }
        trace.push(current);
        anchor = (config.lambda3 > 0.0).then_some(next);
        if current == 0.0 || improvement(previous, current) <= config.fit.tol {
            converged = true;
            break;
        }
        previous = current;
    }
    if dims.is_empty() {
        dims = fit_forecasters(&fitter.w, &method)?;
    }
    Ok((fitter.into_model(trace, iterations, converged), dims))
}
