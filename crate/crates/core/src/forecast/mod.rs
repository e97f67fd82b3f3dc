//! Extrapolation of latent time factors beyond the training window.

mod extend;
mod lstm;
mod sarima;

pub use extend::{extend_time_factors, fit_forecasters, DimensionForecast, Extension, ForecastMethod};
pub use lstm::{lstm_train, LstmFit, LstmNet, LstmSpec, Scaler};
pub use sarima::{
    best_fit, default_grid, difference, integrate, roots_outside_unit_circle, sarima_fit, sarima_select, SarimaFit, SarimaSpec,
    ROOT_MARGIN,
};
