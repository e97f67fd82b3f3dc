use std::fmt::Write as _;
use std::sync::Arc;

use ndarray::{s, Array2};
use rayon::prelude::*;

use super::lstm::{lstm_train, LstmFit, LstmSpec};
use super::sarima::{best_fit, sarima_fit, SarimaFit, SarimaSpec};
use crate::error::{AtlasError, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum ForecastMethod {
    /// Per-dimension AICc selection over `grid`.
    Sarima { grid: Vec<SarimaSpec> },
    Lstm { spec: LstmSpec, seed: u64 },
}

impl ForecastMethod {
    pub fn name(&self) -> &'static str {
        match self {
            ForecastMethod::Sarima { .. } => "sarima",
            ForecastMethod::Lstm { .. } => "lstm",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ForecastMethod::Sarima { grid } if grid.is_empty() => {
                Err(AtlasError::Argument("empty SARIMA grid".into()))
            }
            ForecastMethod::Sarima { grid } => grid.iter().try_for_each(SarimaSpec::validate),
            ForecastMethod::Lstm { spec, .. } => spec.validate(),
        }
    }
}

/// The fitted forecaster of one latent dimension.
#[derive(Debug, Clone, PartialEq)]
pub enum DimensionForecast {
    Sarima(SarimaFit),
    /// A network and the index of this dimension among its training series.
    Lstm(Arc<LstmFit>, usize),
    /// Last value carried forward after the fitter failed.
    CarriedForward { reason: String },
}

impl DimensionForecast {
    pub fn forecast(&self, series: &[f64], horizon: usize) -> Vec<f64> {
        match self {
            DimensionForecast::Sarima(fit) => fit.forecast(series, horizon),
            DimensionForecast::Lstm(fit, index) => fit.forecast(*index, series, horizon),
            DimensionForecast::CarriedForward { .. } => vec![series.last().copied().unwrap_or(0.0); horizon],
        }
    }

    /// One-step-ahead in-sample predictions; `None` where the forecaster
    /// lacks history.
    pub fn one_step(&self, series: &[f64]) -> Vec<Option<f64>> {
        match self {
            DimensionForecast::Sarima(fit) => fit.one_step(series),
            DimensionForecast::Lstm(fit, index) => fit.one_step(*index, series),
            DimensionForecast::CarriedForward { .. } => {
                (0..series.len()).map(|t| t.checked_sub(1).map(|p| series[p])).collect()
            }
        }
    }

    pub fn label(&self) -> String {
        match self {
            DimensionForecast::Sarima(fit) => format!("sarima{}", fit.spec),
            DimensionForecast::Lstm(fit, _) => format!("lstm(window={},hidden={})", fit.spec.window, fit.spec.hidden),
            DimensionForecast::CarriedForward { .. } => "carry-forward".into(),
        }
    }
}

fn column(w: &Array2<f64>, l: usize) -> Vec<f64> {
    w.column(l).to_vec()
}

fn carried(l: usize, err: AtlasError) -> DimensionForecast {
    log::warn!("latent dimension {l}: forecaster failed ({err}); carrying the last value forward");
    DimensionForecast::CarriedForward { reason: err.to_string() }
}

fn fit_sarima(series: &[f64], grid: &[SarimaSpec], l: usize) -> DimensionForecast {
    let chosen = match best_fit(series, grid) {
        Ok(Some(fit)) => Ok(fit),
        Ok(None) => {
            log::warn!("latent dimension {l}: no order in the grid fits; trying {}", SarimaSpec::random_walk());
            sarima_fit(series, SarimaSpec::random_walk())
        }
        Err(e) => Err(e),
    };
    match chosen {
        Ok(fit) => DimensionForecast::Sarima(fit),
        Err(e) => carried(l, e),
    }
}

/// Fits one forecaster per column of `w`. Dimensions whose fitter fails get
/// a carry-forward forecaster and a warning.
pub fn fit_forecasters(w: &Array2<f64>, method: &ForecastMethod) -> Result<Vec<DimensionForecast>> {
    method.validate()?;
    let k = w.ncols();
    Ok(match method {
        ForecastMethod::Sarima { grid } => (0..k)
            .into_par_iter()
            .map(|l| fit_sarima(&column(w, l), grid, l))
            .collect(),
        ForecastMethod::Lstm { spec, seed } if spec.shared => {
            let all: Vec<Vec<f64>> = (0..k).map(|l| column(w, l)).collect();
            match lstm_train(&all, spec, *seed) {
                Ok(fit) => {
                    let fit = Arc::new(fit);
                    (0..k).map(|l| DimensionForecast::Lstm(Arc::clone(&fit), l)).collect()
                }
                Err(e) => {
                    let reason = e.to_string();
                    (0..k)
                        .map(|l| carried(l, AtlasError::Numeric(reason.clone())))
                        .collect()
                }
            }
        }
        ForecastMethod::Lstm { spec, seed } => (0..k)
            .into_par_iter()
            .map(|l| match lstm_train(&[column(w, l)], spec, seed.wrapping_add(l as u64)) {
                Ok(fit) => DimensionForecast::Lstm(Arc::new(fit), 0),
                Err(e) => carried(l, e),
            })
            .collect(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Extension {
    /// `(T + horizon) × k`; the first `T` rows are the input rows.
    pub w: Array2<f64>,
    pub dimensions: Vec<DimensionForecast>,
}

impl Extension {
    /// Per-dimension SARIMA coefficients as CSV.
    pub fn coefficients_csv(&self) -> String {
        let mut out = String::from("dimension,model,term,lag,value\n");
        for (l, d) in self.dimensions.iter().enumerate() {
            if let DimensionForecast::Sarima(fit) = d {
                for (term, lag, value) in fit.coefficient_rows() {
                    let _ = writeln!(out, "{l},{},{term},{lag},{value:e}", fit.spec);
                }
            }
        }
        out
    }
}

/// Appends `horizon` forecast rows to `w`, each column extrapolated by its
/// own fitted forecaster.
pub fn extend_time_factors(w: &Array2<f64>, method: &ForecastMethod, horizon: usize) -> Result<Extension> {
    let (t, k) = w.dim();
    if horizon == 0 {
        method.validate()?;
        return Ok(Extension {
            w: w.clone(),
            dimensions: Vec::new(),
        });
    }
    if t == 0 {
        return Err(AtlasError::Argument("cannot extend an empty time factor matrix".into()));
    }
    let dimensions = fit_forecasters(w, method)?;
    let mut extended = Array2::zeros((t + horizon, k));
    extended.slice_mut(s![..t, ..]).assign(w);
    for (l, d) in dimensions.iter().enumerate() {
        let series = column(w, l);
        let mut ahead = d.forecast(&series, horizon);
        if ahead.iter().any(|v| !v.is_finite()) {
            log::warn!("latent dimension {l}: non-finite forecast; carrying the last value forward");
            ahead = vec![series[t - 1]; horizon];
        }
        for (h, v) in ahead.into_iter().enumerate() {
            extended[[t + h, l]] = v;
        }
    }
    Ok(Extension { w: extended, dimensions })
}
