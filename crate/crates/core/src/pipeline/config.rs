use std::fmt;
use std::str::FromStr;

use crate::data::{KeyValues, SplitSpec, StandardizeMode};
use crate::error::{AtlasError, Result};
use crate::factor::FitParams;
use crate::forecast::{default_grid, ForecastMethod, LstmSpec, SarimaSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForecasterKind {
    Sarima,
    Lstm,
}

impl fmt::Display for ForecasterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ForecasterKind::Sarima => "sarima",
            ForecasterKind::Lstm => "lstm",
        })
    }
}

impl FromStr for ForecasterKind {
    type Err = AtlasError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sarima" => Ok(ForecasterKind::Sarima),
            "lstm" => Ok(ForecasterKind::Lstm),
            _ => Err(AtlasError::Argument(format!("unknown forecaster `{s}` (expected sarima or lstm)"))),
        }
    }
}

/// Which cells receive a forecast.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForecastCells {
    /// Observed cells of the target weeks.
    Observed,
    /// Every store-product pair at every target week.
    FullGrid,
}

impl fmt::Display for ForecastCells {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ForecastCells::Observed => "observed",
            ForecastCells::FullGrid => "full",
        })
    }
}

impl FromStr for ForecastCells {
    type Err = AtlasError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "observed" => Ok(ForecastCells::Observed),
            "full" => Ok(ForecastCells::FullGrid),
            _ => Err(AtlasError::Argument(format!("unknown forecast cell set `{s}` (expected observed or full)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TuneStrategy {
    /// Every combination of the grid.
    Full,
    /// Repeated one-coordinate-at-a-time sweeps until nothing changes.
    Greedy,
}

impl fmt::Display for TuneStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TuneStrategy::Full => "full",
            TuneStrategy::Greedy => "greedy",
        })
    }
}

impl FromStr for TuneStrategy {
    type Err = AtlasError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(TuneStrategy::Full),
            "greedy" => Ok(TuneStrategy::Greedy),
            _ => Err(AtlasError::Argument(format!("unknown tuning strategy `{s}` (expected full or greedy)"))),
        }
    }
}

/// Candidate values for tuning. `lambda1` is applied to both demand
/// penalties.
#[derive(Debug, Clone, PartialEq)]
pub struct TuneGrid {
    pub ranks: Vec<usize>,
    pub lambda1: Vec<f64>,
    pub lambda2: Vec<f64>,
    pub strategy: TuneStrategy,
}

impl Default for TuneGrid {
    fn default() -> Self {
        Self {
            ranks: vec![8, 16, 32, 64],
            lambda1: vec![0.0, 0.1, 1.0, 10.0],
            lambda2: vec![0.1, 1.0, 10.0],
            strategy: TuneStrategy::Greedy,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub fit: FitParams,
    /// Weight of the end-to-end coupling between W and its forecaster.
    pub lambda3: f64,
    /// Weeks forecast past the validation window.
    pub horizon: usize,
    /// Explicit split; derived from `horizon` when absent.
    pub split: Option<SplitSpec>,
    pub standardize: StandardizeMode,
    pub forecaster: ForecasterKind,
    pub sarima_grid: Vec<SarimaSpec>,
    pub lstm: LstmSpec,
    pub forecast_cells: ForecastCells,
    pub tuning: TuneGrid,
    pub per_series_grid: Vec<SarimaSpec>,
    /// Pairs with fewer training observations are forecast by their mean.
    pub per_series_min_obs: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            fit: FitParams::default(),
            lambda3: 0.0,
            horizon: 8,
            split: None,
            standardize: StandardizeMode::None,
            forecaster: ForecasterKind::Sarima,
            sarima_grid: default_grid(52),
            lstm: LstmSpec::default(),
            forecast_cells: ForecastCells::Observed,
            tuning: TuneGrid::default(),
            per_series_grid: vec![
                SarimaSpec::arima(0, 0, 0),
                SarimaSpec::arima(1, 0, 0),
                SarimaSpec::arima(0, 1, 1),
                SarimaSpec::arima(1, 0, 1),
            ],
            per_series_min_obs: 30,
        }
    }
}

fn list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<T>()
                .map_err(|_| AtlasError::Argument(format!("bad value `{s}` in `{key}`")))
        })
        .collect()
}

fn join<T: ToString>(values: &[T]) -> String {
    values.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse::<T>()
        .map_err(|_| AtlasError::Argument(format!("bad value `{value}` for `{key}`")))
}

/// Keys accepted in a pipeline config file.
pub const CONFIG_KEYS: &[&str] = &[
    "rank",
    "lambda1",
    "lambda1_star",
    "lambda2",
    "lambda3",
    "max_iters",
    "tol",
    "seed",
    "horizon",
    "train_end",
    "valid_end",
    "test_end",
    "standardize",
    "forecaster",
    "season",
    "sarima_order",
    "lstm_window",
    "lstm_hidden",
    "lstm_epochs",
    "lstm_learning_rate",
    "lstm_shared",
    "forecast_cells",
    "tune_ranks",
    "tune_lambda1",
    "tune_lambda2",
    "tune_strategy",
    "per_series_order",
    "per_series_min_obs",
];

impl PipelineConfig {
    /// The forecaster as configured; the LSTM is seeded from the fit seed.
    pub fn method(&self) -> ForecastMethod {
        match self.forecaster {
            ForecasterKind::Sarima => ForecastMethod::Sarima {
                grid: self.sarima_grid.clone(),
            },
            ForecasterKind::Lstm => ForecastMethod::Lstm {
                spec: self.lstm.clone(),
                seed: self.fit.seed,
            },
        }
    }

    /// The explicit split, or `(T − 2Δ, T − Δ, T)`.
    pub fn split_for(&self, n_weeks: usize) -> Result<SplitSpec> {
        let split = match self.split {
            Some(s) => s,
            None => {
                let need = 2 * self.horizon;
                if n_weeks <= need {
                    return Err(AtlasError::Argument(format!(
                        "{n_weeks} weeks cannot hold validation and test windows of {} weeks",
                        self.horizon
                    )));
                }
                SplitSpec::new(n_weeks - need, n_weeks - self.horizon, n_weeks)
            }
        };
        split.validate(n_weeks)?;
        if split.test_len() != self.horizon {
            return Err(AtlasError::Argument(format!(
                "test window of {} weeks does not match horizon {}",
                split.test_len(),
                self.horizon
            )));
        }
        Ok(split)
    }

    pub fn validate(&self) -> Result<()> {
        self.fit.validate()?;
        if self.horizon == 0 {
            return Err(AtlasError::Argument("horizon must be at least 1".into()));
        }
        if !(self.lambda3 >= 0.0) || !self.lambda3.is_finite() {
            return Err(AtlasError::Argument("lambda3 must be finite and nonnegative".into()));
        }
        self.method().validate()?;
        let t = &self.tuning;
        if t.ranks.is_empty() || t.lambda1.is_empty() || t.lambda2.is_empty() {
            return Err(AtlasError::Argument("tuning grids must be non-empty".into()));
        }
        if self.per_series_grid.is_empty() {
            return Err(AtlasError::Argument("per-series SARIMA grid must be non-empty".into()));
        }
        Ok(())
    }

    pub fn to_key_values(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        let f = &self.fit;
        kv.push("rank", f.rank);
        kv.push("lambda1", f.lambda1);
        kv.push("lambda1_star", f.lambda1_star);
        kv.push("lambda2", f.lambda2);
        kv.push("lambda3", self.lambda3);
        kv.push("max_iters", f.max_iters);
        kv.push("tol", f.tol);
        kv.push("seed", f.seed);
        kv.push("horizon", self.horizon);
        if let Some(s) = self.split {
            kv.push("train_end", s.train_end);
            kv.push("valid_end", s.valid_end);
            kv.push("test_end", s.test_end);
        }
        kv.push("standardize", self.standardize);
        kv.push("forecaster", self.forecaster);
        for spec in &self.sarima_grid {
            kv.push("sarima_order", spec_text(spec));
        }
        kv.push("lstm_window", self.lstm.window);
        kv.push("lstm_hidden", self.lstm.hidden);
        kv.push("lstm_epochs", self.lstm.epochs);
        kv.push("lstm_learning_rate", self.lstm.learning_rate);
        kv.push("lstm_shared", self.lstm.shared);
        kv.push("forecast_cells", self.forecast_cells);
        kv.push("tune_ranks", join(&self.tuning.ranks));
        kv.push("tune_lambda1", join(&self.tuning.lambda1));
        kv.push("tune_lambda2", join(&self.tuning.lambda2));
        kv.push("tune_strategy", self.tuning.strategy);
        for spec in &self.per_series_grid {
            kv.push("per_series_order", spec_text(spec));
        }
        kv.push("per_series_min_obs", self.per_series_min_obs);
        kv
    }

    /// Applies every key in `kv` on top of `self`. Repeated `sarima_order`
    /// or `per_series_order` keys replace the corresponding grid; `season`
    /// with no explicit orders selects the default grid at that season.
    pub fn apply(&mut self, kv: &KeyValues) -> Result<()> {
        let mut sarima: Vec<SarimaSpec> = Vec::new();
        let mut per_series: Vec<SarimaSpec> = Vec::new();
        let mut season = None;
        let (mut train_end, mut valid_end, mut test_end) = (None, None, None);
        for (key, value) in kv.entries() {
            let v = value.as_str();
            match key.as_str() {
                "rank" => self.fit.rank = parse(key, v)?,
                "lambda1" => self.fit.lambda1 = parse(key, v)?,
                "lambda1_star" => self.fit.lambda1_star = parse(key, v)?,
                "lambda2" => self.fit.lambda2 = parse(key, v)?,
                "lambda3" => self.lambda3 = parse(key, v)?,
                "max_iters" => self.fit.max_iters = parse(key, v)?,
                "tol" => self.fit.tol = parse(key, v)?,
                "seed" => self.fit.seed = parse(key, v)?,
                "horizon" => self.horizon = parse(key, v)?,
                "train_end" => train_end = Some(parse(key, v)?),
                "valid_end" => valid_end = Some(parse(key, v)?),
                "test_end" => test_end = Some(parse(key, v)?),
                "standardize" => self.standardize = v.parse()?,
                "forecaster" => self.forecaster = v.parse()?,
                "season" => season = Some(parse::<usize>(key, v)?),
                "sarima_order" => sarima.push(v.parse()?),
                "lstm_window" => self.lstm.window = parse(key, v)?,
                "lstm_hidden" => self.lstm.hidden = parse(key, v)?,
                "lstm_epochs" => self.lstm.epochs = parse(key, v)?,
                "lstm_learning_rate" => self.lstm.learning_rate = parse(key, v)?,
                "lstm_shared" => self.lstm.shared = parse(key, v)?,
                "forecast_cells" => self.forecast_cells = v.parse()?,
                "tune_ranks" => self.tuning.ranks = list(key, v)?,
                "tune_lambda1" => self.tuning.lambda1 = list(key, v)?,
                "tune_lambda2" => self.tuning.lambda2 = list(key, v)?,
                "tune_strategy" => self.tuning.strategy = v.parse()?,
                "per_series_order" => per_series.push(v.parse()?),
                "per_series_min_obs" => self.per_series_min_obs = parse(key, v)?,
                other => {
                    return Err(AtlasError::Argument(format!(
                        "unknown config key `{other}`; known keys: {}",
                        CONFIG_KEYS.join(", ")
                    )))
                }
            }
        }
        if !sarima.is_empty() {
            self.sarima_grid = sarima;
        } else if let Some(s) = season {
            if s == 0 {
                return Err(AtlasError::Argument("season must be at least 1".into()));
            }
            self.sarima_grid = default_grid(s);
        }
        if !per_series.is_empty() {
            self.per_series_grid = per_series;
        }
        match (train_end, valid_end, test_end) {
            (None, None, None) => {}
            (Some(a), Some(b), Some(c)) => self.split = Some(SplitSpec::new(a, b, c)),
            _ => {
                return Err(AtlasError::Argument(
                    "train_end, valid_end and test_end must be given together".into(),
                ))
            }
        }
        Ok(())
    }

    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        let mut config = Self::default();
        config.apply(kv)?;
        config.validate()?;
        Ok(config)
    }

    pub fn render(&self) -> String {
        self.to_key_values().render()
    }
}

fn spec_text(spec: &SarimaSpec) -> String {
    let mut s = format!(
        "{},{},{},{},{},{},{}",
        spec.p, spec.d, spec.q, spec.seasonal_p, spec.seasonal_d, spec.seasonal_q, spec.period
    );
    if !spec.include_mean {
        s.push_str(",nomean");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_parse_round_trip() {
        let mut c = PipelineConfig::default();
        c.fit.rank = 5;
        c.fit.lambda1 = 0.25;
        c.lambda3 = 2.0;
        c.split = Some(SplitSpec::new(10, 12, 20));
        c.horizon = 8;
        c.forecaster = ForecasterKind::Lstm;
        c.sarima_grid = vec![SarimaSpec::arima(1, 0, 0), "0,1,1,0,1,1,4,nomean".parse().unwrap()];
        c.tuning.strategy = TuneStrategy::Full;
        c.forecast_cells = ForecastCells::FullGrid;
        let back = PipelineConfig::from_key_values(&KeyValues::parse(&c.render()).unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_key_rejected() {
        let kv = KeyValues::parse("rnak=3\n").unwrap();
        let err = PipelineConfig::from_key_values(&kv).unwrap_err().to_string();
        assert!(err.contains("rnak"));
    }

    #[test]
    fn partial_split_rejected() {
        let kv = KeyValues::parse("train_end=3\n").unwrap();
        assert!(PipelineConfig::from_key_values(&kv).is_err());
    }

    #[test]
    fn season_selects_default_grid() {
        let kv = KeyValues::parse("season=4\n").unwrap();
        let c = PipelineConfig::from_key_values(&kv).unwrap();
        assert_eq!(c.sarima_grid, default_grid(4));
    }

    #[test]
    fn derived_split() {
        let c = PipelineConfig::default();
        assert_eq!(c.split_for(208).unwrap(), SplitSpec::new(192, 200, 208));
        assert!(c.split_for(16).is_err());
        let explicit = PipelineConfig {
            split: Some(SplitSpec::new(100, 110, 130)),
            ..PipelineConfig::default()
        };
        assert!(explicit.split_for(130).is_err());
    }
}
