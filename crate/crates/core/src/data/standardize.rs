use std::fmt;
use std::str::FromStr;

use super::tensor::SalesTensor;
use crate::error::{AtlasError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StandardizeMode {
    #[default]
    None,
    ZScore,
    Log1p,
}

impl fmt::Display for StandardizeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StandardizeMode::None => "none",
            StandardizeMode::ZScore => "zscore",
            StandardizeMode::Log1p => "log1p",
        })
    }
}

impl FromStr for StandardizeMode {
    type Err = AtlasError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(StandardizeMode::None),
            "zscore" => Ok(StandardizeMode::ZScore),
            "log1p" => Ok(StandardizeMode::Log1p),
            other => Err(AtlasError::Argument(format!("unknown standardization {other:?}"))),
        }
    }
}

/// Invertible value transform with statistics taken from training cells only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Standardizer {
    pub mode: StandardizeMode,
    pub mean: f64,
    pub stddev: f64,
}

impl Default for Standardizer {
    fn default() -> Self {
        Self::identity()
    }
}

impl Standardizer {
    pub fn identity() -> Self {
        Self {
            mode: StandardizeMode::None,
            mean: 0.0,
            stddev: 1.0,
        }
    }

    /// Fits on the cells of `train`. A z-score request on fewer than two cells
    /// or on constant values degrades to the identity.
    pub fn fit(train: &SalesTensor, mode: StandardizeMode) -> Self {
        match mode {
            StandardizeMode::None => Self::identity(),
            StandardizeMode::Log1p => Self {
                mode,
                mean: 0.0,
                stddev: 1.0,
            },
            StandardizeMode::ZScore => {
                let values: Vec<f64> = train.cells().iter().map(|c| c.value).collect();
                let n = values.len();
                if n < 2 {
                    log::warn!("z-score needs at least two training cells; standardization disabled");
                    return Self::identity();
                }
                let mean = values.iter().sum::<f64>() / n as f64;
                let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
                let stddev = var.sqrt();
                if !(stddev > 0.0) || !stddev.is_finite() {
                    log::warn!("training values have zero variance; standardization disabled");
                    return Self::identity();
                }
                Self { mode, mean, stddev }
            }
        }
    }

    pub fn apply(&self, y: f64) -> f64 {
        match self.mode {
            StandardizeMode::None => y,
            StandardizeMode::ZScore => (y - self.mean) / self.stddev,
            StandardizeMode::Log1p => y.ln_1p(),
        }
    }

    pub fn invert(&self, z: f64) -> f64 {
        match self.mode {
            StandardizeMode::None => z,
            StandardizeMode::ZScore => z * self.stddev + self.mean,
            StandardizeMode::Log1p => z.exp_m1(),
        }
    }

    pub fn apply_tensor(&self, tensor: &SalesTensor) -> SalesTensor {
        tensor.map_values(|c| self.apply(c.value))
    }
}
