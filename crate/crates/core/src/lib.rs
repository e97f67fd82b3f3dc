//! Demand-aware CP tensor factorization for store × product × week sales,
//! with latent time-factor forecasting.
//!
//! The crate is organised along the data flow:
//!
//! - [`data`]: transaction ingest, the sparse [`data::SalesTensor`], splits and
//!   standardization.
//! - [`synth`]: synthetic tensors with planted within-group demand structure.
//! - [`factor`]: the regularized CP model fitted by blockwise coordinate
//!   descent, plus a matrix-factorization baseline.
//! - [`forecast`]: seasonal ARIMA and LSTM extrapolation of the time factors.
//! - [`pipeline`]: fit → extend → predict orchestration, the end-to-end and
//!   contextual variants, and validation-split tuning.
//! - [`eval`]: metrics, method comparison and reports.

pub mod data;
pub mod error;
pub mod eval;
pub mod factor;
pub mod forecast;
pub mod pipeline;
pub mod synth;

pub use error::{AtlasError, Result};
