//! Acceptance criteria 1 to 10. Each test prints one `criterion N: PASS|FAIL`
//! line on stdout, bypassing the harness capture, then asserts.

use std::io::Write;
use std::time::Instant;

use atlas::data::{Cell, SalesTensor, SplitSpec};
use atlas::eval::{compare, rmse, Method};
use atlas::factor::{clip_rho, fit, penalty_direct, penalty_quadratic, FitParams, Group, GroupStructure, PenaltyContext};
use atlas::forecast::{difference, sarima_fit, sarima_select, LstmNet, SarimaSpec};
use atlas::pipeline::{fit_context, run_atlas, run_contextual, run_end_to_end, ContextFeatures, PipelineConfig};
use atlas::synth::{generate, SynthConfig};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn verdict(id: &str, pass: bool, detail: String) {
    let line = format!("criterion {id}: {} ({detail})\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stdout().lock().write_all(line.as_bytes());
    assert!(pass, "criterion {id} failed: {detail}");
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

#[test]
fn criterion_01_penalty_equivalence() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.random_range(1..=5);
        let k = rng.random_range(1..=6);
        let f = DMatrix::from_fn(k, n, |_, _| rng.random_range(-3.0..3.0));
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let sigma = &a * a.transpose() + DMatrix::identity(n, n) * rng.random_range(0.01..1.0);
        let direct = penalty_direct(&f, &sigma).unwrap();
        let (quadratic, _) = penalty_quadratic(&f, &PenaltyContext::new(&sigma).unwrap());
        worst = worst.max((direct - quadratic).abs());
    }
    let secs = started.elapsed().as_secs_f64();
    verdict("1", worst < 1e-8 && secs < 10.0, format!("max |difference| {worst:.2e} over 1000 instances, {secs:.2} s"));
}

#[test]
fn criterion_02_exact_recovery() {
    let started = Instant::now();
    let mut rmses = Vec::new();
    for seed in 0..10 {
        let cfg = SynthConfig {
            n_stores: 30,
            n_products: 40,
            n_weeks: 50,
            true_rank: 4,
            n_store_groups: 10,
            density: 1.0,
            noise_sigma: 0.0,
            seed,
            ..SynthConfig::default()
        };
        let (t, _) = generate(&cfg).unwrap();
        let params = FitParams {
            rank: 4,
            lambda1: 0.0,
            lambda1_star: 0.0,
            lambda2: 0.0,
            max_iters: 200,
            tol: 0.0,
            seed,
            ..FitParams::default()
        };
        let m = fit(&t, &GroupStructure::singletons(30), params).unwrap();
        let pairs: Vec<(f64, f64)> = t
            .cells()
            .iter()
            .map(|c| (c.value, m.predict(c.store, c.product, c.week).unwrap()))
            .collect();
        rmses.push(rmse(&pairs).unwrap());
    }
    let secs = started.elapsed().as_secs_f64();
    let hits = rmses.iter().filter(|&&r| r < 1e-3).count();
    let worst = rmses.iter().cloned().fold(0.0, f64::max);
    verdict(
        "2",
        hits == 10 && secs < 60.0,
        format!("{hits}/10 seeds with training RMSE < 1e-3, worst {worst:.2e}, {secs:.1} s"),
    );
}

fn random_sparse(rng: &mut ChaCha8Rng, n: usize, m: usize, t: usize, density: f64) -> SalesTensor {
    let mut cells = Vec::new();
    for store in 0..n {
        for product in 0..m {
            for week in 0..t {
                if rng.random_bool(density) {
                    cells.push(Cell {
                        store,
                        product,
                        week,
                        value: rng.random_range(0.0..5.0),
                    });
                }
            }
        }
    }
    SalesTensor::new(
        (0..n).map(|i| format!("s{i}")).collect(),
        (0..m).map(|j| format!("p{j}")).collect(),
        t,
        0,
        cells,
    )
    .unwrap()
}

#[test]
fn criterion_03_bcd_monotonicity() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut violations, mut steps, mut stopped, mut max_cycles) = (0, 0, 0, 0);
    for instance in 0..20 {
        let n = rng.random_range(6..=16);
        let m = rng.random_range(5..=12);
        let weeks = rng.random_range(6..=15);
        let density = rng.random_range(0.1..0.4);
        let t = random_sparse(&mut rng, n, m, weeks, density);
        let labels: Vec<usize> = (0..n).map(|i| i / 4).collect();
        let mut groups = GroupStructure::from_labels(&labels, rng.random_range(-0.3..0.5));
        groups.product_groups = Some(vec![
            Group::equicorrelated("a", (0..m / 2).collect(), 0.3),
            Group::equicorrelated("b", (m / 2..m).collect(), -0.2),
        ]);
        let params = FitParams {
            rank: rng.random_range(2..=4),
            lambda1: rng.random_range(0.1..5.0),
            lambda1_star: rng.random_range(0.1..5.0),
            lambda2: rng.random_range(0.1..1.0),
            max_iters: 200,
            tol: 1e-3,
            seed: instance,
            trace_blocks: true,
        };
        let model = fit(&t, &groups, params).unwrap();
        for s in &model.diagnostics.block_trace {
            steps += 1;
            if s.after > s.before + 1e-9 * s.before.abs().max(1e-12) {
                violations += 1;
            }
        }
        if model.converged && model.iterations_run < 200 {
            stopped += 1;
        }
        max_cycles = max_cycles.max(model.iterations_run);
    }
    verdict(
        "3",
        violations == 0 && stopped == 20,
        format!("{violations} rising block solves out of {steps}; J <= 1e-3 reached on {stopped}/20, at most {max_cycles} cycles"),
    );
}

/// The shared synthetic setting of criteria 4 and 7. Groups of 4 cannot
/// hold rho = -0.5, so the generator and the model get the feasibility clip.
fn demand_setting(seed: u64) -> (SalesTensor, GroupStructure) {
    let mut cfg = SynthConfig {
        n_stores: 60,
        n_products: 80,
        n_weeks: 120,
        true_rank: 4,
        n_store_groups: 15,
        competition_rho: clip_rho(-0.5, 4),
        density: 0.1,
        seed,
        ..SynthConfig::default()
    };
    cfg.noise_sigma = 0.1 * cfg.signal_scale();
    let (t, truth) = generate(&cfg).unwrap();
    (t, truth.groups())
}

fn seasonal_grid() -> Vec<SarimaSpec> {
    let mut grid = Vec::new();
    for p in 0..3 {
        for q in 0..3 {
            grid.push(SarimaSpec::new((p, 0, q), (1, 0, 0), 52));
        }
    }
    grid
}

fn demand_config(seed: u64) -> PipelineConfig {
    let mut c = PipelineConfig::default();
    c.split = Some(SplitSpec::new(104, 112, 120));
    c.horizon = 8;
    c.sarima_grid = seasonal_grid();
    c.tuning.ranks = vec![4, 8, 16];
    c.fit.seed = seed;
    c
}

#[test]
fn criterion_04_demand_awareness() {
    let started = Instant::now();
    let (mut wins, mut gains) = (0, Vec::new());
    let mut rows = Vec::new();
    for seed in 0..10 {
        let (t, groups) = demand_setting(seed);
        let seed_started = Instant::now();
        let report = compare(&t, &groups, &[Method::AtlasSarima, Method::CpdSarima], &demand_config(seed), true).unwrap();
        let atlas = report.row("atlas_sarima").unwrap();
        let cpd = report.row("cpd_sarima").unwrap();
        assert!(atlas.error.is_none() && cpd.error.is_none(), "{:?} {:?}", atlas.error, cpd.error);
        wins += usize::from(atlas.rmse <= cpd.rmse);
        gains.push((cpd.rmse - atlas.rmse) / cpd.rmse);
        rows.push(format!("{:.4}/{:.4}", atlas.rmse, cpd.rmse));
        eprintln!("seed {seed}: atlas {:.4} cpd {:.4}, {:.0} s", atlas.rmse, cpd.rmse, seed_started.elapsed().as_secs_f64());
    }
    let secs = started.elapsed().as_secs_f64();
    let mean_gain = gains.iter().sum::<f64>() / gains.len() as f64;
    verdict(
        "4",
        wins >= 8 && mean_gain >= 0.03 && secs < 900.0,
        format!(
            "ATLAS <= CPD on {wins}/10 seeds, mean relative improvement {:.2}%, {secs:.0} s; atlas/cpd RMSE {}",
            100.0 * mean_gain,
            rows.join(" ")
        ),
    );
}

#[test]
fn criterion_05_sarima() {
    let started = Instant::now();
    // (a) AR(1) with phi = 0.8 at T = 500.
    let mut abs_err = 0.0;
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e = gaussian(&mut rng, 600);
        let mut x = vec![0.0; 600];
        for t in 1..600 {
            x[t] = 0.8 * x[t - 1] + e[t];
        }
        let fit = sarima_fit(&x[100..], SarimaSpec::arima(1, 0, 0)).unwrap();
        abs_err += (fit.ar[0] - 0.8).abs();
    }
    let mae = abs_err / 20.0;

    // (b) Forecast identities with hand-derived closed forms.
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let mut worst: f64 = 0.0;
    let series = gaussian(&mut rng, 200);
    let ar = sarima_fit(&series, SarimaSpec { include_mean: false, ..SarimaSpec::arima(1, 0, 0) }).unwrap();
    let last = series[199];
    for (h, f) in ar.forecast(&series, 10).into_iter().enumerate() {
        worst = worst.max((f - ar.ar[0].powi(h as i32 + 1) * last).abs());
    }
    let ma = sarima_fit(&series, SarimaSpec::arima(0, 0, 1)).unwrap();
    for f in ma.forecast(&series, 10).into_iter().skip(1) {
        worst = worst.max((f - ma.mean).abs());
    }
    let ramp: Vec<f64> = (0..40).map(|t| 3.0 - 0.25 * t as f64).collect();
    let rw = sarima_fit(&ramp, SarimaSpec::arima(0, 1, 0)).unwrap();
    for (h, f) in rw.forecast(&ramp, 10).into_iter().enumerate() {
        worst = worst.max((f - (3.0 - 0.25 * (40 + h) as f64)).abs());
    }

    // (c) Order class: no differencing for white noise, first differencing
    // for noisy ramps. Exact (0,0,0) picks on white noise are reported too.
    let mut grid = Vec::new();
    for d in 0..2 {
        for p in 0..3 {
            for q in 0..3 {
                grid.push(SarimaSpec::arima(p, d, q));
            }
        }
    }
    let (mut hits, mut exact_white) = (0, 0);
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let spec = sarima_select(&gaussian(&mut rng, 150), &grid).unwrap();
        hits += usize::from(spec.d == 0);
        exact_white += usize::from(spec.d == 0 && spec.p == 0 && spec.q == 0);
        let noise = gaussian(&mut rng, 150);
        let ramp: Vec<f64> = noise.iter().enumerate().map(|(t, e)| 1.0 + 0.5 * t as f64 + 0.3 * e).collect();
        let spec = sarima_select(&ramp, &grid).unwrap();
        hits += usize::from(spec.d == 1);
    }
    let secs = started.elapsed().as_secs_f64();
    let diff_ok = difference(&ramp, &SarimaSpec::arima(0, 1, 0).differencing_polynomial())
        .iter()
        .all(|d| (d + 0.25).abs() < 1e-12);
    verdict(
        "5",
        mae <= 0.1 && worst < 1e-6 && diff_ok && hits >= 16 && secs < 60.0,
        format!(
            "(a) phi MAE {mae:.4}; (b) max identity error {worst:.2e}; (c) true class on {hits}/20, exact (0,0,0) on {exact_white}/10 white-noise series; {secs:.1} s"
        ),
    );
}

#[test]
fn criterion_06_lstm_gradient() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let hidden = rng.random_range(1..=4);
        let window = rng.random_range(2..=5);
        let len = rng.random_range(window + 3..=window + 12);
        let net = LstmNet::init(hidden, &mut rng);
        let mut theta = net.to_vec();
        theta.iter_mut().for_each(|v| *v += rng.random_range(-0.5..0.5));
        let net = LstmNet::from_vec(hidden, &theta);
        let series = gaussian(&mut rng, len);
        let windows: Vec<&[f64]> = (window..len).map(|t| &series[t - window..t]).collect();
        let targets: Vec<f64> = (window..len).map(|t| series[t]).collect();
        let (_, grad) = net.loss_and_gradient(&windows, &targets);
        for i in 0..theta.len() {
            let mut probe = theta.clone();
            probe[i] = theta[i] + 1e-5;
            let up = LstmNet::from_vec(hidden, &probe).loss_and_gradient(&windows, &targets).0;
            probe[i] = theta[i] - 1e-5;
            let down = LstmNet::from_vec(hidden, &probe).loss_and_gradient(&windows, &targets).0;
            let numeric = (up - down) / 2e-5;
            worst = worst.max((grad[i] - numeric).abs() / grad[i].abs().max(numeric.abs()).max(1e-6));
        }
    }
    let secs = started.elapsed().as_secs_f64();
    verdict("6", worst < 1e-4 && secs < 60.0, format!("max relative error {worst:.2e} over 50 networks, {secs:.1} s"));
}

#[test]
fn criterion_07_end_to_end_matches_two_step() {
    let started = Instant::now();
    let mut close = 0;
    let mut gaps = Vec::new();
    for seed in 0..10 {
        let (t, groups) = demand_setting(seed);
        let mut c = demand_config(seed);
        c.fit.rank = 8;
        c.fit.lambda1 = 0.1;
        c.fit.lambda1_star = 0.1;
        c.fit.lambda2 = 1.0;
        c.lambda3 = 1.0;
        let two_step = rmse(&run_atlas(&t, &groups, &c).unwrap().scored_pairs()).unwrap();
        let e2e = rmse(&run_end_to_end(&t, &groups, &c).unwrap().scored_pairs()).unwrap();
        let gap = (e2e - two_step).abs() / two_step;
        close += usize::from(gap <= 0.10);
        gaps.push(format!("{:.1}%", 100.0 * gap));
    }
    let secs = started.elapsed().as_secs_f64();
    verdict(
        "7",
        close >= 8,
        format!("within 10% on {close}/10 seeds, gaps {}, {secs:.0} s", gaps.join(" ")),
    );
}

#[test]
fn criterion_08_contextual_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut features = ContextFeatures::new(vec!["price".into(), "promo".into()]);
    let mut cells = Vec::new();
    for store in 0..6 {
        for product in 0..5 {
            for week in 0..40 {
                let x = vec![rng.random_range(1.0..4.0), f64::from(u8::from(rng.random_bool(0.3)))];
                let value = 10.0 - 1.5 * x[0] + 3.0 * x[1];
                features.insert(store, product, week, x).unwrap();
                cells.push(Cell { store, product, week, value });
            }
        }
    }
    let t = SalesTensor::new(
        (0..6).map(|i| format!("s{i}")).collect(),
        (0..5).map(|j| format!("p{j}")).collect(),
        40,
        0,
        cells,
    )
    .unwrap();
    let mut c = PipelineConfig::default();
    c.fit.rank = 2;
    c.split = Some(SplitSpec::new(32, 36, 40));
    c.horizon = 4;
    c.sarima_grid = vec![SarimaSpec::arima(0, 0, 0), SarimaSpec::arima(1, 0, 0)];
    let run = run_contextual(&t, &GroupStructure::singletons(6), &features, &c).unwrap();
    let test_rmse = rmse(&run.run.scored_pairs()).unwrap();

    let train = t.truncate_weeks(32);
    let model = fit_context(&train, &features).unwrap();
    let (resid, _) = model.residualize(&train, &features);
    let worst = train
        .cells()
        .iter()
        .zip(resid.cells())
        .map(|(c, e)| (model.recompose(c.store, c.product, c.week, e.value, &features).0 - c.value).abs())
        .fold(0.0, f64::max);
    verdict(
        "8",
        test_rmse < 1e-6 && worst < 1e-10,
        format!("test RMSE {test_rmse:.2e}, max recompose error {worst:.2e}"),
    );
}

#[test]
fn criterion_09_protocol_conformance() {
    let cfg = SynthConfig {
        n_stores: 12,
        n_products: 15,
        n_weeks: 208,
        true_rank: 3,
        n_store_groups: 3,
        density: 0.2,
        seed: 9,
        ..SynthConfig::default()
    };
    let (t, truth) = generate(&cfg).unwrap();
    let mut c = PipelineConfig::default();
    c.fit.rank = 3;
    c.fit.lambda1 = 0.5;
    c.split = Some(SplitSpec::new(192, 200, 208));
    c.horizon = 8;
    c.sarima_grid = seasonal_grid();
    let run = run_atlas(&t, &truth.groups(), &c).unwrap();
    let in_window = run.forecasts.iter().all(|f| (200..208).contains(&f.week));
    let expected = t.cells().iter().filter(|c| c.week >= 200).count();
    let mut e2e = c.clone();
    e2e.lambda3 = 0.5;
    let e2e_run = run_end_to_end(&t, &truth.groups(), &e2e).unwrap();
    let leaks = run.leakage.total() + e2e_run.leakage.total();
    verdict(
        "9",
        in_window && run.forecasts.len() == expected && !run.forecasts.is_empty() && leaks == 0,
        format!(
            "{} forecasts, all in weeks 200..208: {in_window}; leakage counters {:?} / {:?}",
            run.forecasts.len(),
            run.leakage,
            e2e_run.leakage
        ),
    );
}

/// Peak resident set of this process in bytes, from `/proc`.
fn peak_rss() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}

fn scale_setting(n_stores: usize, seed: u64) -> (SalesTensor, GroupStructure) {
    let cfg = SynthConfig {
        n_stores,
        n_products: 300,
        n_weeks: 208,
        true_rank: 4,
        n_store_groups: n_stores / 4,
        density: 0.05,
        noise_sigma: 0.4,
        seed,
        ..SynthConfig::default()
    };
    let (t, truth) = generate(&cfg).unwrap();
    (t, truth.groups())
}

#[test]
fn criterion_10_scale() {
    let mut c = PipelineConfig::default();
    c.fit.rank = 8;
    c.fit.lambda1 = 0.1;
    c.fit.lambda1_star = 0.1;
    c.split = Some(SplitSpec::new(192, 200, 208));
    c.horizon = 8;

    let (t, groups) = scale_setting(200, 10);
    let started = Instant::now();
    let run = run_atlas(&t, &groups, &c).unwrap();
    let secs = started.elapsed().as_secs_f64();
    let full = rmse(&run.scored_pairs()).unwrap();

    let params = FitParams {
        max_iters: 20,
        tol: 0.0,
        ..c.fit
    };
    let per_cycle = |n_stores: usize| {
        let (t, groups) = scale_setting(n_stores, 11);
        let train = t.truncate_weeks(192);
        let started = Instant::now();
        let m = fit(&train, &groups, params).unwrap();
        started.elapsed().as_secs_f64() / m.iterations_run as f64
    };
    let small = per_cycle(100);
    let large = per_cycle(200);
    let ratio = large / small;
    let rss = peak_rss();
    let mem_ok = rss.is_none_or(|b| b < 4 << 30);
    verdict(
        "10",
        secs < 600.0 && ratio < 2.5 && mem_ok,
        format!(
            "{} cells, pipeline {secs:.1} s (test RMSE {full:.3}); per cycle {small:.3} s at 100 stores, {large:.3} s at 200, ratio {ratio:.2}; peak RSS {}",
            t.len(),
            rss.map_or("unavailable".to_string(), |b| format!("{} MiB", b >> 20))
        ),
    );
}
