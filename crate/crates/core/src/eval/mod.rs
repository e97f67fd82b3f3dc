//! Forecast accuracy metrics, method comparison and report rendering.

mod compare;
mod report;

use crate::error::{AtlasError, Result};

pub use compare::{compare, per_series_forecasts, Method, ALL_METHODS};
pub use report::{cell_set_digest, config_digest, EvalReport, MethodRow};

/// Root mean squared error over `(y, y_hat)` pairs.
pub fn rmse(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(AtlasError::Argument("rmse of an empty set of pairs".into()));
    }
    let sse: f64 = pairs.iter().map(|(y, h)| (y - h).powi(2)).sum();
    Ok((sse / pairs.len() as f64).sqrt())
}

/// Mean absolute error over `(y, y_hat)` pairs.
pub fn mae(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(AtlasError::Argument("mae of an empty set of pairs".into()));
    }
    Ok(pairs.iter().map(|(y, h)| (y - h).abs()).sum::<f64>() / pairs.len() as f64)
}
