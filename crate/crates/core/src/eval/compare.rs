use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;

use super::report::{cell_set_digest, config_digest, EvalReport, MethodRow};
use super::{mae, rmse};
use crate::data::{SalesTensor, Standardizer};
use crate::error::{AtlasError, Result};
use crate::factor::GroupStructure;
use crate::forecast::best_fit;
use crate::pipeline::{emit_forecasts, execute, tune, ForecasterKind, Forecast, Mode, PipelineConfig, Window};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    AtlasSarima,
    AtlasLstm,
    CpdSarima,
    CpdLstm,
    PerSeriesSarima,
    FreezeW,
}

pub const ALL_METHODS: [Method; 6] = [
    Method::AtlasSarima,
    Method::AtlasLstm,
    Method::CpdSarima,
    Method::CpdLstm,
    Method::PerSeriesSarima,
    Method::FreezeW,
];

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::AtlasSarima => "atlas_sarima",
            Method::AtlasLstm => "atlas_lstm",
            Method::CpdSarima => "cpd_sarima",
            Method::CpdLstm => "cpd_lstm",
            Method::PerSeriesSarima => "per_series_sarima",
            Method::FreezeW => "freeze_w",
        }
    }

    /// The pipeline config this method runs: plain CPD drops both demand
    /// penalties, and the forecaster follows the method name.
    pub fn config(self, base: &PipelineConfig) -> PipelineConfig {
        let mut cfg = base.clone();
        match self {
            Method::AtlasSarima => cfg.forecaster = ForecasterKind::Sarima,
            Method::AtlasLstm => cfg.forecaster = ForecasterKind::Lstm,
            Method::CpdSarima | Method::CpdLstm => {
                cfg.forecaster = if self == Method::CpdSarima {
                    ForecasterKind::Sarima
                } else {
                    ForecasterKind::Lstm
                };
                cfg.fit.lambda1 = 0.0;
                cfg.fit.lambda1_star = 0.0;
                cfg.tuning.lambda1 = vec![0.0];
            }
            Method::PerSeriesSarima | Method::FreezeW => {}
        }
        cfg
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = AtlasError;

    fn from_str(s: &str) -> Result<Self> {
        ALL_METHODS
            .into_iter()
            .find(|m| m.name() == s.trim())
            .ok_or_else(|| {
                let names: Vec<&str> = ALL_METHODS.iter().map(|m| m.name()).collect();
                AtlasError::Argument(format!("unknown method {s:?}; expected one of {}", names.join(", ")))
            })
    }
}

/// Forecasts each (store, product) series of the training split on its own.
/// Pairs with fewer than `per_series_min_obs` training observations, or
/// whose fit fails, are forecast by their training mean.
pub fn per_series_forecasts(tensor: &SalesTensor, config: &PipelineConfig, window: Window) -> Result<Vec<Forecast>> {
    let train = tensor.truncate_weeks(window.train_end);
    if train.is_empty() {
        return Err(AtlasError::EmptyTensor("training split has no cells".into()));
    }
    let standardizer = Standardizer::fit(&train, config.standardize);
    let train = standardizer.apply_tensor(&train);
    let global_mean = train.cells().iter().map(|c| c.value).sum::<f64>() / train.len() as f64;

    let mut history: BTreeMap<(usize, usize), Vec<(usize, f64)>> = BTreeMap::new();
    for c in train.cells() {
        history.entry((c.store, c.product)).or_default().push((c.week, c.value));
    }
    let requested: BTreeSet<(usize, usize)> =
        emit_forecasts(tensor, config.forecast_cells, window, |_, _, _| Ok(0.0))?
            .iter()
            .map(|f| (f.store, f.product))
            .collect();
    let horizon = window.end - window.train_end;
    let paths: BTreeMap<(usize, usize), Vec<f64>> = requested
        .into_par_iter()
        .map(|pair| {
            let path = match history.get(&pair) {
                None => vec![global_mean; horizon],
                Some(obs) => series_path(obs, window.train_end, horizon, config),
            };
            (pair, path)
        })
        .collect();
    emit_forecasts(tensor, config.forecast_cells, window, |i, j, t| {
        Ok(standardizer.invert(paths[&(i, j)][t - window.train_end]))
    })
}

fn series_path(obs: &[(usize, f64)], train_end: usize, horizon: usize, config: &PipelineConfig) -> Vec<f64> {
    let mean = obs.iter().map(|o| o.1).sum::<f64>() / obs.len() as f64;
    if obs.len() < config.per_series_min_obs {
        return vec![mean; horizon];
    }
    let start = obs.iter().map(|o| o.0).min().unwrap_or(0);
    let mut series = vec![mean; train_end - start];
    for &(t, v) in obs {
        series[t - start] = v;
    }
    match best_fit(&series, &config.per_series_grid) {
        Ok(Some(fit)) => {
            let f = fit.forecast(&series, horizon);
            if f.iter().all(|v| v.is_finite()) {
                f
            } else {
                vec![mean; horizon]
            }
        }
        _ => vec![mean; horizon],
    }
}

/// Runs each method on the identical test cells and collects one report
/// row per method. With `tuned`, the factor-model methods first pick
/// `(k, lambda1, lambda2)` on the validation split; plain CPD tunes with
/// `lambda1` fixed at 0. Method failures are recorded, not propagated.
pub fn compare(
    tensor: &SalesTensor,
    groups: &GroupStructure,
    methods: &[Method],
    config: &PipelineConfig,
    tuned: bool,
) -> Result<EvalReport> {
    if methods.is_empty() {
        return Err(AtlasError::Argument("compare needs at least one method".into()));
    }
    config.validate()?;
    let split = config.split_for(tensor.n_weeks())?;
    let window = Window::test(split);
    let rows: Vec<MethodRow> = methods
        .par_iter()
        .map(|&m| {
            let started = Instant::now();
            let outcome = run_method(tensor, groups, m, config, tuned, window);
            let runtime = started.elapsed().as_secs_f64();
            match outcome {
                Ok((forecasts, iterations, cfg)) => {
                    let pairs: Vec<(f64, f64)> = forecasts.iter().filter_map(|f| f.y_true.map(|y| (y, f.y_hat))).collect();
                    let cells: Vec<(usize, usize, usize)> = forecasts
                        .iter()
                        .filter(|f| f.y_true.is_some())
                        .map(|f| (f.store, f.product, f.week))
                        .collect();
                    let scores = rmse(&pairs).and_then(|r| mae(&pairs).map(|a| (r, a)));
                    MethodRow {
                        method: m.name().into(),
                        rmse: scores.as_ref().map(|s| s.0).unwrap_or(f64::NAN),
                        mae: scores.as_ref().map(|s| s.1).unwrap_or(f64::NAN),
                        runtime_secs: runtime,
                        iterations,
                        config_digest: config_digest(&cfg, m.name()),
                        n_cells: pairs.len(),
                        cell_digest: cell_set_digest(&cells),
                        error: scores.err().map(|e| e.to_string()),
                    }
                }
                Err(e) => MethodRow::failed(m.name(), runtime, e.to_string()),
            }
        })
        .collect();
    Ok(EvalReport {
        dataset: format!(
            "{} stores x {} products x {} weeks, {} cells, density {:.4}",
            tensor.n_stores(),
            tensor.n_products(),
            tensor.n_weeks(),
            tensor.len(),
            tensor.density()
        ),
        split,
        seed: config.fit.seed,
        refit: "train".into(),
        tuned,
        rows,
    })
}

fn run_method(
    tensor: &SalesTensor,
    groups: &GroupStructure,
    method: Method,
    base: &PipelineConfig,
    tuned: bool,
    window: Window,
) -> Result<(Vec<Forecast>, usize, PipelineConfig)> {
    if method == Method::PerSeriesSarima {
        return Ok((per_series_forecasts(tensor, base, window)?, 0, base.clone()));
    }
    let mut cfg = method.config(base);
    if tuned {
        cfg = tune(tensor, groups, &cfg)?.best;
    }
    let mode = if method == Method::FreezeW { Mode::FrozenW } else { Mode::TwoStep };
    let run = execute(tensor, groups, &cfg, mode, window)?;
    Ok((run.forecasts, run.model.iterations_run, cfg))
}
