//! Seasonal ARIMA estimated by conditional sum of squares.
//!
//! Conventions: `φ(B)Φ(B^s)(u_t) = θ(B)Θ(B^s)(e_t)` with
//! `φ(B) = 1 − φ_1 B − …` and `θ(B) = 1 + θ_1 B + …`, where `u` is the
//! differenced series minus its mean.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::error::{AtlasError, Result};

/// Roots must lie outside the unit circle by this margin.
pub const ROOT_MARGIN: f64 = 1e-6;
const VARIANCE_FLOOR: f64 = 1e-300;
const MAX_BFGS_ITERS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SarimaSpec {
    pub p: usize,
    pub d: usize,
    pub q: usize,
    pub seasonal_p: usize,
    pub seasonal_d: usize,
    pub seasonal_q: usize,
    pub period: usize,
    pub include_mean: bool,
}

impl SarimaSpec {
    pub fn new(order: (usize, usize, usize), seasonal: (usize, usize, usize), period: usize) -> Self {
        Self {
            p: order.0,
            d: order.1,
            q: order.2,
            seasonal_p: seasonal.0,
            seasonal_d: seasonal.1,
            seasonal_q: seasonal.2,
            period,
            include_mean: true,
        }
    }

    pub fn arima(p: usize, d: usize, q: usize) -> Self {
        Self::new((p, d, q), (0, 0, 0), 1)
    }

    /// The fallback used when nothing else fits.
    pub fn random_walk() -> Self {
        Self::arima(0, 1, 0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.period == 0 {
            return Err(AtlasError::Argument("season length must be at least 1".into()));
        }
        if self.d + self.seasonal_d() > 2 {
            return Err(AtlasError::Argument(format!("{self}: total differencing d + D must be at most 2")));
        }
        Ok(())
    }

    fn seasonal(&self) -> bool {
        self.period > 1
    }

    fn seasonal_p_eff(&self) -> usize {
        if self.seasonal() { self.seasonal_p } else { 0 }
    }

    fn seasonal_q_eff(&self) -> usize {
        if self.seasonal() { self.seasonal_q } else { 0 }
    }

    fn seasonal_d(&self) -> usize {
        if self.seasonal() { self.seasonal_d } else { 0 }
    }

    /// Number of estimated ARMA coefficients plus the mean, if any.
    pub fn n_coefficients(&self) -> usize {
        self.p + self.q + self.seasonal_p_eff() + self.seasonal_q_eff() + usize::from(self.include_mean)
    }

    pub fn min_length(&self) -> usize {
        let s = if self.seasonal() { self.period } else { 0 };
        10 + self.d + self.seasonal_d() * s + self.p.max(self.q) + s * self.seasonal_p_eff().max(self.seasonal_q_eff())
    }

    /// Coefficients of `(1 − B)^d (1 − B^s)^D`, leading 1 included.
    pub fn differencing_polynomial(&self) -> Vec<f64> {
        let mut poly = vec![1.0];
        for _ in 0..self.d {
            poly = multiply(&poly, &[1.0, -1.0]);
        }
        let mut seasonal = vec![0.0; self.period + 1];
        seasonal[0] = 1.0;
        seasonal[self.period] = -1.0;
        for _ in 0..self.seasonal_d() {
            poly = multiply(&poly, &seasonal);
        }
        poly
    }

    fn sort_key(&self) -> (usize, [usize; 7], bool) {
        (
            self.n_coefficients(),
            [self.p, self.d, self.q, self.seasonal_p, self.seasonal_d, self.seasonal_q, self.period],
            self.include_mean,
        )
    }
}

impl fmt::Display for SarimaSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({},{},{})({},{},{})_{}",
            self.p, self.d, self.q, self.seasonal_p, self.seasonal_d, self.seasonal_q, self.period
        )?;
        if !self.include_mean {
            write!(f, "-nomean")?;
        }
        Ok(())
    }
}

impl FromStr for SarimaSpec {
    type Err = AtlasError;

    /// Parses `p,d,q` or `p,d,q,P,D,Q,s`, optionally suffixed with
    /// `,nomean`.
    fn from_str(s: &str) -> Result<Self> {
        let mut parts: Vec<&str> = s.split(',').map(str::trim).collect();
        let include_mean = if parts.last() == Some(&"nomean") {
            parts.pop();
            false
        } else {
            true
        };
        let nums = parts
            .iter()
            .map(|p| p.parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| AtlasError::Argument(format!("bad SARIMA order `{s}`")))?;
        let mut spec = match nums.as_slice() {
            &[p, d, q] => Self::arima(p, d, q),
            &[p, d, q, sp, sd, sq, period] => Self::new((p, d, q), (sp, sd, sq), period),
            _ => return Err(AtlasError::Argument(format!("bad SARIMA order `{s}`: expected 3 or 7 integers"))),
        };
        spec.include_mean = include_mean;
        spec.validate()?;
        Ok(spec)
    }
}

/// Order grid `p,q ∈ {0,1,2}`, `d ∈ {0,1}`, `P,Q,D ∈ {0,1}` at season `period`.
pub fn default_grid(period: usize) -> Vec<SarimaSpec> {
    let mut grid = Vec::new();
    for p in 0..=2 {
        for d in 0..=1 {
            for q in 0..=2 {
                for sp in 0..=1 {
                    for sd in 0..=1 {
                        for sq in 0..=1 {
                            grid.push(SarimaSpec::new((p, d, q), (sp, sd, sq), period));
                        }
                    }
                }
            }
        }
    }
    grid
}

fn multiply(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

pub fn difference(series: &[f64], poly: &[f64]) -> Vec<f64> {
    let lag = poly.len() - 1;
    (lag..series.len())
        .map(|t| poly.iter().enumerate().map(|(i, c)| c * series[t - i]).sum())
        .collect()
}

/// Inverts [`difference`]: extends `history` by solving `δ(B) x_t = z_t`
/// for each new `z_t`.
pub fn integrate(history: &[f64], differenced: &[f64], poly: &[f64]) -> Vec<f64> {
    let mut x = history.to_vec();
    for &z in differenced {
        let t = x.len();
        let carried: f64 = poly.iter().enumerate().skip(1).map(|(i, c)| c * x[t - i]).sum();
        x.push(z - carried);
    }
    x.split_off(history.len())
}

/// True when every root of `1 − Σ c_i z^i` has modulus above `1 + ROOT_MARGIN`.
pub fn roots_outside_unit_circle(coefs: &[f64]) -> bool {
    let n = match coefs.iter().rposition(|c| *c != 0.0) {
        Some(last) => last + 1,
        None => return true,
    };
    if !coefs[..n].iter().all(|c| c.is_finite()) {
        return false;
    }
    let companion = DMatrix::from_fn(n, n, |r, c| {
        if r == 0 {
            coefs[c]
        } else if r == c + 1 {
            1.0
        } else {
            0.0
        }
    });
    let limit = 1.0 / (1.0 + ROOT_MARGIN);
    companion.complex_eigenvalues().iter().all(|z| z.norm() < limit)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SarimaFit {
    pub spec: SarimaSpec,
    pub ar: Vec<f64>,
    pub ma: Vec<f64>,
    pub sar: Vec<f64>,
    pub sma: Vec<f64>,
    pub mean: f64,
    pub sigma2: f64,
    pub css: f64,
    pub n_used: usize,
    pub aicc: f64,
}

impl SarimaFit {
    /// A fit with given coefficients and no estimation statistics.
    pub fn with_coefficients(spec: SarimaSpec, ar: Vec<f64>, ma: Vec<f64>, sar: Vec<f64>, sma: Vec<f64>, mean: f64) -> Self {
        Self {
            spec,
            ar,
            ma,
            sar,
            sma,
            mean,
            sigma2: f64::NAN,
            css: f64::NAN,
            n_used: 0,
            aicc: f64::NAN,
        }
    }

    /// Expanded AR lag coefficients `a_k` of `1 − Σ a_k B^k = φ(B)Φ(B^s)`.
    fn full_ar(&self) -> Vec<f64> {
        expand(&self.ar, &self.sar, self.spec.period, -1.0)
    }

    /// Expanded MA lag coefficients `b_k` of `1 + Σ b_k B^k = θ(B)Θ(B^s)`.
    fn full_ma(&self) -> Vec<f64> {
        expand(&self.ma, &self.sma, self.spec.period, 1.0)
    }

    /// One-step residuals on the demeaned differenced series, zero before
    /// the first index with a complete AR history.
    fn residuals(&self, u: &[f64], a: &[f64], b: &[f64]) -> Vec<f64> {
        let start = a.len();
        let mut e = vec![0.0; u.len()];
        for t in start..u.len() {
            let mut v = u[t];
            for (i, ai) in a.iter().enumerate() {
                v -= ai * u[t - 1 - i];
            }
            for (j, bj) in b.iter().enumerate() {
                if t > j {
                    v -= bj * e[t - 1 - j];
                }
            }
            e[t] = v;
        }
        e
    }

    pub fn forecast(&self, series: &[f64], horizon: usize) -> Vec<f64> {
        if horizon == 0 {
            return Vec::new();
        }
        let poly = self.spec.differencing_polynomial();
        let z = difference(series, &poly);
        let (a, b) = (self.full_ar(), self.full_ma());
        let mut u: Vec<f64> = z.iter().map(|v| v - self.mean).collect();
        let mut e = self.residuals(&u, &a, &b);
        for _ in 0..horizon {
            let t = u.len();
            let mut next = 0.0;
            for (i, ai) in a.iter().enumerate() {
                if t > i {
                    next += ai * u[t - 1 - i];
                }
            }
            for (j, bj) in b.iter().enumerate() {
                if t > j {
                    next += bj * e[t - 1 - j];
                }
            }
            u.push(next);
            e.push(0.0);
        }
        let future: Vec<f64> = u[z.len()..].iter().map(|v| v + self.mean).collect();
        integrate(series, &future, &poly)
    }

    /// In-sample one-step predictions of `series[t]` given its past; `None`
    /// until differencing and the AR recursion have a complete history.
    pub fn one_step(&self, series: &[f64]) -> Vec<Option<f64>> {
        let poly = self.spec.differencing_polynomial();
        let lag = poly.len() - 1;
        let z = difference(series, &poly);
        let (a, b) = (self.full_ar(), self.full_ma());
        let u: Vec<f64> = z.iter().map(|v| v - self.mean).collect();
        let e = self.residuals(&u, &a, &b);
        let mut out = vec![None; series.len()];
        for (t, slot) in out.iter_mut().enumerate().skip(lag + a.len()) {
            *slot = Some(series[t] - e[t - lag]);
        }
        out
    }

    /// Coefficient table rows `(kind, lag, value)`.
    pub fn coefficient_rows(&self) -> Vec<(&'static str, usize, f64)> {
        let s = self.spec.period;
        let mut rows = Vec::new();
        rows.extend(self.ar.iter().enumerate().map(|(i, v)| ("ar", i + 1, *v)));
        rows.extend(self.ma.iter().enumerate().map(|(i, v)| ("ma", i + 1, *v)));
        rows.extend(self.sar.iter().enumerate().map(|(i, v)| ("sar", (i + 1) * s, *v)));
        rows.extend(self.sma.iter().enumerate().map(|(i, v)| ("sma", (i + 1) * s, *v)));
        rows.push(("mean", 0, self.mean));
        rows.push(("sigma2", 0, self.sigma2));
        rows.push(("aicc", 0, self.aicc));
        rows
    }
}

/// Lag coefficients of `(1 + sign Σ x_i B^i)(1 + sign Σ y_j B^{sj})`
/// re-expressed as `1 + sign Σ c_k B^k`.
fn expand(regular: &[f64], seasonal: &[f64], period: usize, sign: f64) -> Vec<f64> {
    let mut a = vec![1.0];
    a.extend(regular.iter().map(|v| sign * v));
    let mut b = vec![0.0; seasonal.len() * period + 1];
    b[0] = 1.0;
    for (j, v) in seasonal.iter().enumerate() {
        b[(j + 1) * period] = sign * v;
    }
    let full = multiply(&a, &b);
    full[1..].iter().map(|v| sign * v).collect()
}

struct Layout {
    spec: SarimaSpec,
}

impl Layout {
    fn len(&self) -> usize {
        self.spec.n_coefficients()
    }

    fn unpack(&self, theta: &[f64], fixed_mean: f64) -> SarimaFit {
        let s = self.spec;
        let (sp, sq) = (s.seasonal_p_eff(), s.seasonal_q_eff());
        let mut at = 0;
        let mut take = |n: usize| {
            let v = theta[at..at + n].to_vec();
            at += n;
            v
        };
        let ar = take(s.p);
        let ma = take(s.q);
        let sar = take(sp);
        let sma = take(sq);
        let mean = if s.include_mean { take(1)[0] } else { fixed_mean };
        SarimaFit::with_coefficients(s, ar, ma, sar, sma, mean)
    }
}

fn css_of(fit: &SarimaFit, z: &[f64]) -> (f64, usize) {
    let (a, b) = (fit.full_ar(), fit.full_ma());
    let u: Vec<f64> = z.iter().map(|v| v - fit.mean).collect();
    let e = fit.residuals(&u, &a, &b);
    let start = a.len();
    (e[start..].iter().map(|v| v * v).sum(), u.len().saturating_sub(start))
}

fn admissible(fit: &SarimaFit) -> bool {
    let neg = |v: &[f64]| v.iter().map(|x| -x).collect::<Vec<_>>();
    roots_outside_unit_circle(&fit.ar)
        && roots_outside_unit_circle(&fit.sar)
        && roots_outside_unit_circle(&neg(&fit.ma))
        && roots_outside_unit_circle(&neg(&fit.sma))
}

pub fn sarima_fit(series: &[f64], spec: SarimaSpec) -> Result<SarimaFit> {
    spec.validate()?;
    if series.len() < spec.min_length() {
        return Err(AtlasError::Argument(format!(
            "{spec} needs at least {} observations, got {}",
            spec.min_length(),
            series.len()
        )));
    }
    if !series.iter().all(|v| v.is_finite()) {
        return Err(AtlasError::Argument("series contains non-finite values".into()));
    }
    if spec.seasonal() && spec.seasonal_d() > 0 && series.len() < 3 * spec.period {
        log::debug!("{spec}: seasonal differencing with fewer than 3 full seasons");
    }
    let z = difference(series, &spec.differencing_polynomial());
    let z_mean = z.iter().sum::<f64>() / z.len() as f64;
    let layout = Layout { spec };
    let fixed_mean = 0.0;

    let objective = |theta: &[f64]| -> f64 {
        let fit = layout.unpack(theta, fixed_mean);
        if !admissible(&fit) {
            return f64::INFINITY;
        }
        let (css, n) = css_of(&fit, &z);
        if n == 0 { f64::INFINITY } else { css / n as f64 }
    };

    let mut theta0 = vec![0.0; layout.len()];
    if spec.include_mean {
        theta0[layout.len() - 1] = z_mean;
    }
    let theta = bfgs(&objective, theta0).map_err(|m| AtlasError::Numeric(format!("{spec}: {m}")))?;
    let mut fit = layout.unpack(&theta, fixed_mean);
    if !admissible(&fit) {
        return Err(AtlasError::Numeric(format!("{spec}: fitted polynomials violate stationarity")));
    }
    let (css, n_used) = css_of(&fit, &z);
    if !css.is_finite() {
        return Err(AtlasError::Numeric(format!("{spec}: non-finite conditional sum of squares")));
    }
    let sigma2 = (css / n_used as f64).max(VARIANCE_FLOOR);
    // Conditioning drops the first AR-order residuals; the likelihood is
    // scaled back to the full differenced length so that orders with
    // different conditioning compare on the same footing.
    let n = z.len() as f64;
    let k = (layout.len() + 1) as f64;
    let log_lik = -0.5 * n * ((std::f64::consts::TAU * sigma2).ln() + 1.0);
    let aic = -2.0 * log_lik + 2.0 * k;
    fit.aicc = if n - k - 1.0 > 0.0 {
        aic + 2.0 * k * (k + 1.0) / (n - k - 1.0)
    } else {
        f64::INFINITY
    };
    fit.sigma2 = sigma2;
    fit.css = css;
    fit.n_used = n_used;
    Ok(fit)
}

/// Returns the spec minimizing AICc; ties go to fewer coefficients, then
/// to the lexicographically smaller order.
pub fn sarima_select(series: &[f64], grid: &[SarimaSpec]) -> Result<SarimaSpec> {
    Ok(match best_fit(series, grid)? {
        Some(fit) => fit.spec,
        None => {
            log::warn!("no SARIMA order in the grid could be fitted; using {}", SarimaSpec::random_walk());
            SarimaSpec::random_walk()
        }
    })
}

/// The AICc-best fit over `grid`, or `None` when no order can be fitted.
pub fn best_fit(series: &[f64], grid: &[SarimaSpec]) -> Result<Option<SarimaFit>> {
    if grid.is_empty() {
        return Err(AtlasError::Argument("empty SARIMA grid".into()));
    }
    let mut best: Option<SarimaFit> = None;
    for &spec in grid {
        let fit = match sarima_fit(series, spec) {
            Ok(fit) if !fit.aicc.is_nan() => fit,
            Ok(_) => continue,
            Err(e) => {
                log::debug!("skipping {spec}: {e}");
                continue;
            }
        };
        let better = match &best {
            None => true,
            Some(b) => fit.aicc < b.aicc || (fit.aicc == b.aicc && spec.sort_key() < b.spec.sort_key()),
        };
        if better {
            best = Some(fit);
        }
    }
    if let Some(b) = &best {
        if b.spec.seasonal() && b.spec.seasonal_d() > 0 && series.len() < 3 * b.spec.period {
            log::warn!("selected {}: seasonal differencing with fewer than 3 full seasons", b.spec);
        }
    }
    Ok(best)
}

fn numeric_gradient(f: &impl Fn(&[f64]) -> f64, x: &[f64], fx: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let h = 1e-6 * x[i].abs().max(1.0);
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            if up.is_finite() && down.is_finite() {
                (up - down) / (2.0 * h)
            } else if up.is_finite() {
                (up - fx) / h
            } else if down.is_finite() {
                (fx - down) / h
            } else {
                0.0
            }
        })
        .collect()
}

/// Quasi-Newton minimization with BFGS updates and backtracking Armijo
/// line search.
fn bfgs(f: &impl Fn(&[f64]) -> f64, x0: Vec<f64>) -> std::result::Result<Vec<f64>, String> {
    let n = x0.len();
    let mut x = x0;
    let mut fx = f(&x);
    if !fx.is_finite() {
        return Err("objective not finite at the starting point".into());
    }
    if n == 0 {
        return Ok(x);
    }
    let mut g = numeric_gradient(f, &x, fx);
    let mut h = DMatrix::<f64>::identity(n, n);
    for _ in 0..MAX_BFGS_ITERS {
        let gnorm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if gnorm < 1e-10 * fx.abs().max(1.0) {
            break;
        }
        let gv = nalgebra::DVector::from_column_slice(&g);
        let mut dir = -(&h * &gv);
        let mut slope = dir.dot(&gv);
        if slope >= 0.0 {
            h = DMatrix::identity(n, n);
            dir = -gv.clone();
            slope = dir.dot(&gv);
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let cand: Vec<f64> = x.iter().zip(dir.iter()).map(|(a, d)| a + step * d).collect();
            let fc = f(&cand);
            if fc.is_finite() && fc <= fx + 1e-4 * step * slope {
                accepted = Some((cand, fc));
                break;
            }
            step *= 0.5;
        }
        let Some((cand, fc)) = accepted else { break };
        let gc = numeric_gradient(f, &cand, fc);
        let s = nalgebra::DVector::from_iterator(n, cand.iter().zip(&x).map(|(a, b)| a - b));
        let y = nalgebra::DVector::from_iterator(n, gc.iter().zip(&g).map(|(a, b)| a - b));
        let sy = s.dot(&y);
        let improvement = fx - fc;
        x = cand;
        fx = fc;
        g = gc;
        if sy > 1e-12 * s.norm() * y.norm() {
            let rho = 1.0 / sy;
            let eye = DMatrix::<f64>::identity(n, n);
            let left = &eye - rho * &s * y.transpose();
            let right = &eye - rho * &y * s.transpose();
            h = &left * &h * &right + rho * &s * s.transpose();
        }
        if improvement <= 1e-14 * fx.abs().max(1e-300) {
            break;
        }
    }
    if x.iter().all(|v| v.is_finite()) {
        Ok(x)
    } else {
        Err("optimizer diverged".into())
    }
}
