//! Synthetic sales tensors with known latent factors.
//!
//! Store factors inside each group are drawn as `c + spread · Z Σ_g^{1/2}`,
//! so the pairwise correlation of member latent vectors (taken over the k
//! coordinates) targets the group's equicorrelation `ρ`. The per-store shift
//! `c ≥ μ` keeps every entry positive. Product factors are lognormal with
//! mean `μ`. Week factor `l` mixes a level, a linear trend and a sinusoid at
//! harmonic `1 + l mod 6` of the season. All factors are positive, so clean
//! values are never truncated.

use std::f64::consts::TAU;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::{Cell, KeyValues, SalesTensor};
use crate::error::{AtlasError, Result};
use crate::factor::linalg::sqrt_psd;
use crate::factor::{equicorrelation, min_feasible_rho, FactorModel, Group, GroupStructure};

/// Mean of every store, product and week factor entry.
const FACTOR_MEAN: f64 = 1.0;
/// Spread of store and product factors around their mean.
const FACTOR_SPREAD: f64 = 1.0;
/// Smallest store factor entry; a store whose draw dips lower is shifted up
/// by a constant, which leaves its correlation with other stores unchanged.
const FACTOR_FLOOR: f64 = 0.1;
/// Log-scale spread of the lognormal product factors.
const PRODUCT_LOG_SPREAD: f64 = 0.8;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_stores: usize,
    pub n_products: usize,
    pub n_weeks: usize,
    pub true_rank: usize,
    pub n_store_groups: usize,
    pub competition_rho: f64,
    pub density: f64,
    pub noise_sigma: f64,
    pub season_period: usize,
    pub trend_scale: f64,
    /// Standard deviation of the per-week jitter on `W*`.
    pub week_noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_stores: 20,
            n_products: 30,
            n_weeks: 104,
            true_rank: 4,
            n_store_groups: 5,
            competition_rho: -0.3,
            density: 0.3,
            noise_sigma: 0.1,
            season_period: 52,
            trend_scale: 0.5,
            week_noise: 0.02,
            seed: 0,
        }
    }
}

impl SynthConfig {
    /// Sizes of the contiguous store groups, as even as possible.
    pub fn group_sizes(&self) -> Vec<usize> {
        let g = self.n_store_groups.max(1).min(self.n_stores.max(1));
        let base = self.n_stores / g;
        let extra = self.n_stores % g;
        (0..g).map(|i| base + usize::from(i < extra)).collect()
    }

    /// Expected clean cell value, `k* μ³`; used to express noise levels
    /// relative to the signal.
    pub fn signal_scale(&self) -> f64 {
        self.true_rank as f64 * FACTOR_MEAN.powi(3)
    }

    pub fn to_key_values(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.push("n_stores", self.n_stores);
        kv.push("n_products", self.n_products);
        kv.push("n_weeks", self.n_weeks);
        kv.push("true_rank", self.true_rank);
        kv.push("n_store_groups", self.n_store_groups);
        kv.push("competition_rho", self.competition_rho);
        kv.push("density", self.density);
        kv.push("noise_sigma", self.noise_sigma);
        kv.push("season_period", self.season_period);
        kv.push("trend_scale", self.trend_scale);
        kv.push("week_noise", self.week_noise);
        kv.push("seed", self.seed);
        kv
    }

    /// Applies every key in `kv` on top of `self`; unknown keys are errors.
    pub fn apply(&mut self, kv: &KeyValues) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| AtlasError::Argument(format!("bad value `{v}` for `{key}`")))
        }
        for (key, value) in kv.entries() {
            let (k, v) = (key.as_str(), value.as_str());
            match k {
                "n_stores" => self.n_stores = num(k, v)?,
                "n_products" => self.n_products = num(k, v)?,
                "n_weeks" => self.n_weeks = num(k, v)?,
                "true_rank" => self.true_rank = num(k, v)?,
                "n_store_groups" => self.n_store_groups = num(k, v)?,
                "competition_rho" => self.competition_rho = num(k, v)?,
                "density" => self.density = num(k, v)?,
                "noise_sigma" => self.noise_sigma = num(k, v)?,
                "season_period" => self.season_period = num(k, v)?,
                "trend_scale" => self.trend_scale = num(k, v)?,
                "week_noise" => self.week_noise = num(k, v)?,
                "seed" => self.seed = num(k, v)?,
                other => return Err(AtlasError::Argument(format!("unknown synth config key `{other}`"))),
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_stores == 0 || self.n_products == 0 || self.n_weeks == 0 || self.true_rank == 0 {
            return Err(AtlasError::Argument("sizes and rank must be positive".into()));
        }
        if self.n_store_groups == 0 || self.n_store_groups > self.n_stores {
            return Err(AtlasError::Argument("need between 1 and n_stores store groups".into()));
        }
        if !(self.density > 0.0 && self.density <= 1.0) {
            return Err(AtlasError::Argument("density must lie in (0, 1]".into()));
        }
        let total = (self.n_stores * self.n_products * self.n_weeks) as f64;
        if self.density * total < 1.0 {
            return Err(AtlasError::Argument("density too low to expect a single cell".into()));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(AtlasError::Argument("noise_sigma must be nonnegative".into()));
        }
        if !(self.week_noise >= 0.0) {
            return Err(AtlasError::Argument("week_noise must be nonnegative".into()));
        }
        if self.season_period == 0 {
            return Err(AtlasError::Argument("season_period must be positive".into()));
        }
        if !(self.competition_rho < 1.0) || !self.competition_rho.is_finite() {
            return Err(AtlasError::Argument("competition_rho must be below 1".into()));
        }
        let largest = self.group_sizes().into_iter().max().unwrap_or(1);
        let bound = min_feasible_rho(largest) + 1e-6;
        if largest > 1 && self.competition_rho < bound {
            return Err(AtlasError::Argument(format!(
                "competition_rho {} infeasible for groups of {largest}: must be >= {bound}",
                self.competition_rho
            )));
        }
        Ok(())
    }
}

/// The generating factors and group structure of a synthetic tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub p: Array2<f64>,
    pub q: Array2<f64>,
    pub w: Array2<f64>,
    pub store_group: Vec<usize>,
    pub sigma: Vec<DMatrix<f64>>,
}

impl GroundTruth {
    pub fn clean(&self, i: usize, j: usize, t: usize) -> f64 {
        self.p.row(i).iter().zip(self.q.row(j)).zip(self.w.row(t)).map(|((a, b), c)| a * b * c).sum()
    }

    /// The planted groups with their target covariances.
    pub fn groups(&self) -> GroupStructure {
        let mut members = vec![Vec::new(); self.sigma.len()];
        for (i, &g) in self.store_group.iter().enumerate() {
            members[g].push(i);
        }
        GroupStructure {
            store_groups: members
                .into_iter()
                .zip(&self.sigma)
                .enumerate()
                .map(|(g, (m, s))| Group {
                    id: format!("g{g}"),
                    members: m,
                    sigma: s.clone(),
                })
                .collect(),
            product_groups: None,
        }
    }

    pub fn as_model(&self, tensor: &SalesTensor) -> Result<FactorModel> {
        let mut m = FactorModel::from_factors(self.p.clone(), self.q.clone(), self.w.clone())?;
        m.store_ids = tensor.store_ids().to_vec();
        m.product_ids = tensor.product_ids().to_vec();
        m.week_origin = tensor.week_origin();
        Ok(m)
    }
}

pub fn store_id(i: usize) -> String {
    format!("{:06}", i + 1)
}

/// The four UPC parts of a synthetic product.
pub fn upc_parts(j: usize) -> [String; 4] {
    [
        "0".to_string(),
        "1".to_string(),
        format!("{:05}", j / 100_000),
        format!("{:05}", j % 100_000),
    ]
}

pub fn product_id(j: usize) -> String {
    upc_parts(j).join("-")
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn generate(config: &SynthConfig) -> Result<(SalesTensor, GroundTruth)> {
    config.validate()?;
    let k = config.true_rank;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let sizes = config.group_sizes();
    let mut p = Array2::zeros((config.n_stores, k));
    let mut store_group = Vec::with_capacity(config.n_stores);
    let mut sigma = Vec::with_capacity(sizes.len());
    let mut start = 0;
    for (g, &size) in sizes.iter().enumerate() {
        let target = equicorrelation(size, if size > 1 { config.competition_rho } else { 0.0 });
        let root = sqrt_psd(&target)?;
        let z = DMatrix::from_fn(k, size, |_, _| normal(&mut rng));
        let correlated = z * &root;
        for u in 0..size {
            let lowest = (0..k).map(|l| correlated[(l, u)]).fold(f64::INFINITY, f64::min);
            let offset = FACTOR_MEAN.max(FACTOR_FLOOR - FACTOR_SPREAD * lowest);
            for l in 0..k {
                p[[start + u, l]] = offset + FACTOR_SPREAD * correlated[(l, u)];
            }
            store_group.push(g);
        }
        sigma.push(target);
        start += size;
    }

    let q = Array2::from_shape_fn((config.n_products, k), |_| {
        FACTOR_MEAN * (PRODUCT_LOG_SPREAD * normal(&mut rng) - 0.5 * PRODUCT_LOG_SPREAD.powi(2)).exp()
    });

    let t_len = config.n_weeks as f64;
    let dims: Vec<(f64, f64, f64, f64)> = (0..k)
        .map(|_| {
            let level = FACTOR_MEAN;
            let slope = rng.random_range(-1.0..1.0) * config.trend_scale;
            let amplitude = rng.random_range(0.6..0.9);
            let phase = rng.random_range(0.0..TAU);
            (level, slope, amplitude, phase)
        })
        .collect();
    let mut w = Array2::zeros((config.n_weeks, k));
    for t in 0..config.n_weeks {
        for (l, &(level, slope, amplitude, phase)) in dims.iter().enumerate() {
            let harmonic = (1 + l % 6) as f64;
            let season = amplitude * (harmonic * TAU * t as f64 / config.season_period as f64 + phase).sin();
            let raw = level + slope * (t as f64 / t_len - 0.5) + season + config.week_noise * normal(&mut rng);
            w[[t, l]] = raw.max(FACTOR_FLOOR);
        }
    }

    let truth = GroundTruth {
        p,
        q,
        w,
        store_group,
        sigma,
    };

    let mut cells = Vec::new();
    for t in 0..config.n_weeks {
        for i in 0..config.n_stores {
            for j in 0..config.n_products {
                if config.density < 1.0 && rng.random::<f64>() >= config.density {
                    continue;
                }
                let clean = truth.clean(i, j, t);
                let noisy = if config.noise_sigma > 0.0 {
                    clean + config.noise_sigma * normal(&mut rng)
                } else {
                    clean
                };
                cells.push(Cell {
                    store: i,
                    product: j,
                    week: t,
                    value: noisy.max(0.0),
                });
            }
        }
    }
    if cells.is_empty() {
        return Err(AtlasError::EmptyTensor("no cell was sampled".into()));
    }
    let tensor = SalesTensor::new(
        (0..config.n_stores).map(store_id).collect(),
        (0..config.n_products).map(product_id).collect(),
        config.n_weeks,
        1,
        cells,
    )?;
    Ok((tensor, truth))
}

/// Writes the tensor in the raw transaction layout read by
/// [`crate::data::ingest_csv`] with the default column names. Product ids must
/// be four `-`-joined UPC parts.
pub fn export_iri_csv(tensor: &SalesTensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if tensor.is_empty() {
        return Err(AtlasError::EmptyTensor("nothing to export".into()));
    }
    let file = File::create(path).map_err(|e| AtlasError::io(path, e))?;
    write_iri_csv(tensor, BufWriter::new(file)).map_err(|e| AtlasError::io(path, e))
}

pub fn write_iri_csv<W: Write>(tensor: &SalesTensor, mut out: W) -> std::io::Result<()> {
    writeln!(out, "store,week,syscode,gen,vendor,item,units,dollars")?;
    for c in tensor.cells() {
        let product = &tensor.product_ids()[c.product];
        let parts: Vec<&str> = product.split('-').collect();
        let upc = if parts.len() == 4 {
            parts.join(",")
        } else {
            format!("0,0,0,{product}")
        };
        writeln!(
            out,
            "{},{},{},1,{:.6}",
            tensor.store_ids()[c.store],
            tensor.calendar_week(c.week),
            upc,
            c.value
        )?;
    }
    out.flush()
}
