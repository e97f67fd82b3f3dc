//! Single-layer LSTM for windowed next-step regression on scalar series,
//! trained by full-batch backpropagation through time with Adam.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{AtlasError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LstmSpec {
    pub window: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub clip_norm: f64,
    /// Train one network on the windows of every series instead of one
    /// network per series.
    pub shared: bool,
}

impl Default for LstmSpec {
    fn default() -> Self {
        Self {
            window: 8,
            hidden: 16,
            epochs: 200,
            learning_rate: 1e-2,
            clip_norm: 5.0,
            shared: false,
        }
    }
}

impl LstmSpec {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.hidden == 0 {
            return Err(AtlasError::Argument("LSTM window and hidden size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.clip_norm > 0.0) {
            return Err(AtlasError::Argument("LSTM learning rate and clip norm must be positive".into()));
        }
        Ok(())
    }
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Gate pre-activations are stacked as `[input; forget; output; candidate]`,
/// each `hidden` long.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmNet {
    pub hidden: usize,
    pub wx: DVector<f64>,
    pub wh: DMatrix<f64>,
    pub b: DVector<f64>,
    pub v: DVector<f64>,
    pub c: f64,
}

struct Step {
    x: f64,
    i: DVector<f64>,
    f: DVector<f64>,
    o: DVector<f64>,
    g: DVector<f64>,
    c_prev: DVector<f64>,
    c: DVector<f64>,
    h_prev: DVector<f64>,
}

impl LstmNet {
    /// Uniform `±1/√H` weights, zero biases except a forget bias of 1.
    pub fn init(hidden: usize, rng: &mut impl Rng) -> Self {
        let r = 1.0 / (hidden as f64).sqrt();
        let mut draw = || rng.random_range(-r..r);
        let wx = DVector::from_fn(4 * hidden, |_, _| draw());
        let wh = DMatrix::from_fn(4 * hidden, hidden, |_, _| draw());
        let v = DVector::from_fn(hidden, |_, _| draw());
        let mut b = DVector::zeros(4 * hidden);
        b.rows_mut(hidden, hidden).fill(1.0);
        Self { hidden, wx, wh, b, v, c: 0.0 }
    }

    pub fn n_params(&self) -> usize {
        let h = self.hidden;
        4 * h + 4 * h * h + 4 * h + h + 1
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        out.extend(self.wx.iter());
        out.extend(self.wh.iter());
        out.extend(self.b.iter());
        out.extend(self.v.iter());
        out.push(self.c);
        out
    }

    pub fn from_vec(hidden: usize, theta: &[f64]) -> Self {
        let h = hidden;
        let mut at = 0;
        let mut take = |n: usize| {
            let s = &theta[at..at + n];
            at += n;
            s
        };
        let wx = DVector::from_column_slice(take(4 * h));
        let wh = DMatrix::from_column_slice(4 * h, h, take(4 * h * h));
        let b = DVector::from_column_slice(take(4 * h));
        let v = DVector::from_column_slice(take(h));
        let c = take(1)[0];
        Self { hidden, wx, wh, b, v, c }
    }

    fn forward(&self, window: &[f64], tape: Option<&mut Vec<Step>>) -> (f64, DVector<f64>) {
        let h_len = self.hidden;
        let mut h = DVector::zeros(h_len);
        let mut c = DVector::zeros(h_len);
        let mut tape = tape;
        for &x in window {
            let a = &self.wx * x + &self.wh * &h + &self.b;
            let i = a.rows(0, h_len).map(logistic);
            let f = a.rows(h_len, h_len).map(logistic);
            let o = a.rows(2 * h_len, h_len).map(logistic);
            let g = a.rows(3 * h_len, h_len).map(f64::tanh);
            let c_next = f.component_mul(&c) + i.component_mul(&g);
            let h_next = o.component_mul(&c_next.map(f64::tanh));
            if let Some(t) = tape.as_deref_mut() {
                t.push(Step {
                    x,
                    i,
                    f,
                    o,
                    g,
                    c_prev: c.clone(),
                    c: c_next.clone(),
                    h_prev: h.clone(),
                });
            }
            c = c_next;
            h = h_next;
        }
        (self.v.dot(&h) + self.c, h)
    }

    pub fn predict(&self, window: &[f64]) -> f64 {
        self.forward(window, None).0
    }

    /// Mean squared error over `(window, target)` pairs and its gradient in
    /// [`LstmNet::to_vec`] layout.
    pub fn loss_and_gradient(&self, windows: &[&[f64]], targets: &[f64]) -> (f64, Vec<f64>) {
        let hl = self.hidden;
        let n = windows.len() as f64;
        let mut grad = LstmNet {
            hidden: hl,
            wx: DVector::zeros(4 * hl),
            wh: DMatrix::zeros(4 * hl, hl),
            b: DVector::zeros(4 * hl),
            v: DVector::zeros(hl),
            c: 0.0,
        };
        let mut loss = 0.0;
        let mut tape = Vec::new();
        for (window, &target) in windows.iter().zip(targets) {
            tape.clear();
            let (pred, h_last) = self.forward(window, Some(&mut tape));
            let err = pred - target;
            loss += err * err / n;
            let dy = 2.0 * err / n;
            grad.v += &h_last * dy;
            grad.c += dy;
            let mut dh = &self.v * dy;
            let mut dc = DVector::<f64>::zeros(hl);
            let mut da = DVector::<f64>::zeros(4 * hl);
            for step in tape.iter().rev() {
                let tanh_c = step.c.map(f64::tanh);
                for u in 0..hl {
                    let d_o = dh[u] * tanh_c[u];
                    let dc_u = dc[u] + dh[u] * step.o[u] * (1.0 - tanh_c[u] * tanh_c[u]);
                    let d_i = dc_u * step.g[u];
                    let d_g = dc_u * step.i[u];
                    let d_f = dc_u * step.c_prev[u];
                    da[u] = d_i * step.i[u] * (1.0 - step.i[u]);
                    da[hl + u] = d_f * step.f[u] * (1.0 - step.f[u]);
                    da[2 * hl + u] = d_o * step.o[u] * (1.0 - step.o[u]);
                    da[3 * hl + u] = d_g * (1.0 - step.g[u] * step.g[u]);
                    dc[u] = dc_u * step.f[u];
                }
                grad.wx += &da * step.x;
                grad.wh += &da * step.h_prev.transpose();
                grad.b += &da;
                dh = self.wh.tr_mul(&da);
            }
        }
        (loss, grad.to_vec())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scaler {
    pub mean: f64,
    pub scale: f64,
}

impl Scaler {
    pub fn fit(series: &[f64]) -> Self {
        let n = series.len().max(1) as f64;
        let mean = series.iter().sum::<f64>() / n;
        let var = series.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let scale = if var.sqrt() > 0.0 { var.sqrt() } else { 1.0 };
        Self { mean, scale }
    }

    fn apply(&self, series: &[f64]) -> Vec<f64> {
        series.iter().map(|v| (v - self.mean) / self.scale).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmFit {
    pub spec: LstmSpec,
    pub net: LstmNet,
    /// One scaler per training series, in input order.
    pub scalers: Vec<Scaler>,
    pub loss_trace: Vec<f64>,
}

impl LstmFit {
    /// Iterated forecasts for series `index`, fed back as inputs.
    pub fn forecast(&self, index: usize, series: &[f64], horizon: usize) -> Vec<f64> {
        let scaler = self.scalers[index];
        let mut z = scaler.apply(series);
        let w = self.spec.window;
        let mut out = Vec::with_capacity(horizon);
        for _ in 0..horizon {
            let start = z.len().saturating_sub(w);
            let next = self.net.predict(&z[start..]);
            z.push(next);
            out.push(next * scaler.scale + scaler.mean);
        }
        out
    }

    /// One-step predictions of `series[t]` from the preceding window, for
    /// every `t ≥ window`.
    pub fn one_step(&self, index: usize, series: &[f64]) -> Vec<Option<f64>> {
        let scaler = self.scalers[index];
        let z = scaler.apply(series);
        let w = self.spec.window;
        (0..series.len())
            .map(|t| (t >= w).then(|| self.net.predict(&z[t - w..t]) * scaler.scale + scaler.mean))
            .collect()
    }
}

/// Trains one network on all `(window → next value)` pairs of the given
/// series, each standardized by its own mean and standard deviation.
pub fn lstm_train(series: &[Vec<f64>], spec: &LstmSpec, seed: u64) -> Result<LstmFit> {
    spec.validate()?;
    if series.is_empty() {
        return Err(AtlasError::Argument("no series to train on".into()));
    }
    if let Some(short) = series.iter().find(|s| s.len() <= spec.window) {
        return Err(AtlasError::Argument(format!(
            "series of length {} is not longer than the window {}",
            short.len(),
            spec.window
        )));
    }
    if series.iter().flatten().any(|v| !v.is_finite()) {
        return Err(AtlasError::Argument("series contains non-finite values".into()));
    }
    let scalers: Vec<Scaler> = series.iter().map(|s| Scaler::fit(s)).collect();
    let standardized: Vec<Vec<f64>> = series.iter().zip(&scalers).map(|(s, sc)| sc.apply(s)).collect();
    let mut windows: Vec<&[f64]> = Vec::new();
    let mut targets = Vec::new();
    for z in &standardized {
        for t in spec.window..z.len() {
            windows.push(&z[t - spec.window..t]);
            targets.push(z[t]);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = LstmNet::init(spec.hidden, &mut rng);
    let mut theta = net.to_vec();
    let (beta1, beta2, eps): (f64, f64, f64) = (0.9, 0.999, 1e-8);
    let mut m = vec![0.0; theta.len()];
    let mut v = vec![0.0; theta.len()];
    let mut loss_trace = Vec::with_capacity(spec.epochs);
    for epoch in 1..=spec.epochs {
        let (loss, mut grad) = net.loss_and_gradient(&windows, &targets);
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(AtlasError::Numeric(format!("LSTM loss became non-finite at epoch {epoch}")));
        }
        loss_trace.push(loss);
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if norm > spec.clip_norm {
            let scale = spec.clip_norm / norm;
            grad.iter_mut().for_each(|g| *g *= scale);
        }
        let (c1, c2) = (1.0 - beta1.powi(epoch as i32), 1.0 - beta2.powi(epoch as i32));
        for ((t, g), (mi, vi)) in theta.iter_mut().zip(&grad).zip(m.iter_mut().zip(v.iter_mut())) {
            *mi = beta1 * *mi + (1.0 - beta1) * g;
            *vi = beta2 * *vi + (1.0 - beta2) * g * g;
            *t -= spec.learning_rate * (*mi / c1) / ((*vi / c2).sqrt() + eps);
        }
        net = LstmNet::from_vec(spec.hidden, &theta);
    }
    if !theta.iter().all(|t| t.is_finite()) {
        return Err(AtlasError::Numeric("LSTM parameters became non-finite".into()));
    }
    Ok(LstmFit {
        spec: spec.clone(),
        net,
        scalers,
        loss_trace,
    })
}
