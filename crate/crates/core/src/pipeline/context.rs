use std::collections::HashMap;
use std::io::Read;

use nalgebra::{DMatrix, DVector};

use super::{execute, AtlasRun, Mode, PipelineConfig, Window};
use crate::data::SalesTensor;
use crate::error::{AtlasError, Result};
use crate::factor::GroupStructure;

/// Per-cell context features keyed by `(store, product, week)` indices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ContextFeatures {
    pub names: Vec<String>,
    values: HashMap<(usize, usize, usize), Vec<f64>>,
}

impl ContextFeatures {
    pub fn new(names: Vec<String>) -> Self {
        Self {
            names,
            values: HashMap::new(),
        }
    }

    pub fn insert(&mut self, store: usize, product: usize, week: usize, x: Vec<f64>) -> Result<()> {
        if x.len() != self.names.len() {
            return Err(AtlasError::Argument(format!(
                "expected {} features, got {}",
                self.names.len(),
                x.len()
            )));
        }
        self.values.insert((store, product, week), x);
        Ok(())
    }

    pub fn get(&self, store: usize, product: usize, week: usize) -> Option<&[f64]> {
        self.values.get(&(store, product, week)).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Parses `store_id,product_id,week,<feature>...` rows; `week` is the 0-based
/// week index of `tensor`. Feature names come from the header.
pub fn parse_features_csv<R: Read>(input: R, tensor: &SalesTensor) -> Result<ContextFeatures> {
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr
        .headers()
        .map_err(|e| AtlasError::Schema(format!("unreadable header: {e}")))?
        .clone();
    let head: Vec<&str> = headers.iter().map(str::trim).collect();
    if head.len() < 3 || head[0] != "store_id" || head[1] != "product_id" || !matches!(head[2], "week" | "week_t") {
        return Err(AtlasError::Schema(
            "features header must start with store_id,product_id,week".into(),
        ));
    }
    let names: Vec<String> = head[3..].iter().map(|s| s.to_string()).collect();
    if names.iter().any(String::is_empty) {
        return Err(AtlasError::Schema("empty feature name".into()));
    }
    let stores = tensor.store_lookup();
    let products = tensor.product_lookup();
    let mut features = ContextFeatures::new(names);
    for rec in rdr.records() {
        let rec = rec.map_err(|e| AtlasError::parse(e.position().map_or(0, |p| p.line() as usize), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != head.len() {
            return Err(AtlasError::parse(line, format!("expected {} fields", head.len())));
        }
        let Some(&store) = stores.get(rec[0].trim()) else {
            log::warn!("line {line}: unknown store {:?}; row skipped", &rec[0]);
            continue;
        };
        let Some(&product) = products.get(rec[1].trim()) else {
            log::warn!("line {line}: unknown product {:?}; row skipped", &rec[1]);
            continue;
        };
        let week: usize = rec[2]
            .trim()
            .parse()
            .map_err(|_| AtlasError::parse(line, "bad week"))?;
        if week >= tensor.n_weeks() {
            return Err(AtlasError::parse(line, format!("week {week} outside 0..{}", tensor.n_weeks())));
        }
        let x = rec
            .iter()
            .skip(3)
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| AtlasError::parse(line, format!("bad feature value {v:?}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        features.insert(store, product, week, x)?;
    }
    Ok(features)
}

/// Least-squares regression of sales on context features, with intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextModel {
    pub names: Vec<String>,
    pub intercept: f64,
    pub beta: Vec<f64>,
}

impl ContextModel {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.intercept + self.beta.iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
    }

    /// `y - x'β` for every cell of `tensor` with features; cells without
    /// features keep their value and are returned as flagged.
    pub fn residualize(&self, tensor: &SalesTensor, features: &ContextFeatures) -> (SalesTensor, Vec<(usize, usize, usize)>) {
        let mut flagged = Vec::new();
        let out = tensor.map_values(|c| match features.get(c.store, c.product, c.week) {
            Some(x) => c.value - self.predict(x),
            None => {
                flagged.push((c.store, c.product, c.week));
                c.value
            }
        });
        (out, flagged)
    }

    /// `e + x'β`, or `e` alone when the cell has no features.
    pub fn recompose(&self, store: usize, product: usize, week: usize, e: f64, features: &ContextFeatures) -> (f64, bool) {
        match features.get(store, product, week) {
            Some(x) => (e + self.predict(x), true),
            None => (e, false),
        }
    }

    /// Parses the `term,value` text written by [`ContextModel::to_csv`].
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        match lines.next() {
            Some((_, h)) if h.trim() == "term,value" => {}
            _ => return Err(AtlasError::Schema("context model header must be term,value".into())),
        }
        let mut intercept = None;
        let (mut names, mut beta) = (Vec::new(), Vec::new());
        for (idx, line) in lines {
            let (term, value) = line
                .split_once(',')
                .ok_or_else(|| AtlasError::parse(idx + 1, "expected term,value"))?;
            let v: f64 = value
                .trim()
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| AtlasError::parse(idx + 1, format!("bad coefficient {value:?}")))?;
            match term.trim() {
                "intercept" if intercept.is_none() => intercept = Some(v),
                "intercept" => return Err(AtlasError::parse(idx + 1, "intercept listed twice")),
                "" => return Err(AtlasError::parse(idx + 1, "empty term")),
                name => {
                    names.push(name.to_string());
                    beta.push(v);
                }
            }
        }
        Ok(Self {
            names,
            intercept: intercept.ok_or_else(|| AtlasError::Schema("context model has no intercept".into()))?,
            beta,
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("term,value\n");
        out.push_str(&format!("intercept,{:e}\n", self.intercept));
        for (n, b) in self.names.iter().zip(&self.beta) {
            out.push_str(&format!("{n},{b:e}\n"));
        }
        out
    }
}

/// Ordinary least squares over the cells of `train`; every cell needs features.
pub fn fit_context(train: &SalesTensor, features: &ContextFeatures) -> Result<ContextModel> {
    if train.is_empty() {
        return Err(AtlasError::EmptyTensor("no training cells for the context regression".into()));
    }
    let f = features.names.len();
    let dim = f + 1;
    let mut xtx = DMatrix::<f64>::zeros(dim, dim);
    let mut xty = DVector::<f64>::zeros(dim);
    let mut row = DVector::<f64>::zeros(dim);
    for c in train.cells() {
        let x = features.get(c.store, c.product, c.week).ok_or_else(|| {
            AtlasError::Argument(format!(
                "training cell ({}, {}, {}) has no context features",
                train.store_ids()[c.store],
                train.product_ids()[c.product],
                c.week
            ))
        })?;
        row[0] = 1.0;
        row.rows_mut(1, f).copy_from_slice(x);
        xtx.ger(1.0, &row, &row, 1.0);
        xty.axpy(c.value, &row, 1.0);
    }
    let coef = match xtx.clone().cholesky() {
        Some(ch) => ch.solve(&xty),
        None => {
            log::warn!("context design is rank deficient; adding 1e-8 ridge jitter");
            let jittered = xtx + DMatrix::identity(dim, dim) * 1e-8;
            jittered
                .cholesky()
                .ok_or_else(|| AtlasError::Numeric("context normal equations are singular".into()))?
                .solve(&xty)
        }
    };
    if coef.iter().any(|v| !v.is_finite()) {
        return Err(AtlasError::Numeric("non-finite context coefficients".into()));
    }
    Ok(ContextModel {
        names: features.names.clone(),
        intercept: coef[0],
        beta: coef.iter().skip(1).copied().collect(),
    })
}

#[derive(Debug, Clone)]
pub struct ContextRun {
    /// Pipeline run on the residual tensor, with forecasts recomposed onto
    /// the original scale.
    pub run: AtlasRun,
    pub context: ContextModel,
    /// Forecast cells that had no features; their context term is omitted.
    pub flagged: Vec<(usize, usize, usize)>,
}

/// Regresses out the context features on training cells, runs the two-step
/// pipeline on the residuals and adds `x'β` back to every forecast.
pub fn run_contextual(
    tensor: &SalesTensor,
    groups: &GroupStructure,
    features: &ContextFeatures,
    config: &PipelineConfig,
) -> Result<ContextRun> {
    config.validate()?;
    let split = config.split_for(tensor.n_weeks())?;
    let train = tensor.truncate_weeks(split.train_end);
    let context = fit_context(&train, features).map_err(|e| e.in_stage("context regression"))?;
    let context_late = train.cells().iter().filter(|c| c.week >= split.train_end).count();

    let truth: HashMap<(usize, usize, usize), f64> = tensor
        .cells()
        .iter()
        .map(|c| ((c.store, c.product, c.week), c.value))
        .collect();
    let (residual, _) = context.residualize(tensor, features);
    let mut run = execute(&residual, groups, config, Mode::TwoStep, Window::test(split))?;
    run.leakage.context += context_late;

    let mut flagged = Vec::new();
    for f in &mut run.forecasts {
        let (y, has_context) = context.recompose(f.store, f.product, f.week, f.y_hat, features);
        if !has_context {
            flagged.push((f.store, f.product, f.week));
        }
        f.y_hat = y;
        f.y_true = truth.get(&(f.store, f.product, f.week)).copied();
    }
    if !flagged.is_empty() {
        log::warn!("{} forecast cells lack context features; context term omitted", flagged.len());
    }
    Ok(ContextRun { run, context, flagged })
}
