use atlas::data::{build_tensor, ingest_csv, ColumnMap};
use atlas::synth::{export_iri_csv, generate, SynthConfig};
use proptest::prelude::*;

fn mean_within_group_correlation(p: &ndarray::Array2<f64>, store_group: &[usize]) -> f64 {
    let k = p.ncols() as f64;
    let centered: Vec<Vec<f64>> = p
        .rows()
        .into_iter()
        .map(|r| {
            let m = r.sum() / k;
            r.iter().map(|v| v - m).collect()
        })
        .collect();
    let (mut total, mut pairs) = (0.0, 0usize);
    for a in 0..centered.len() {
        for b in (a + 1)..centered.len() {
            if store_group[a] != store_group[b] {
                continue;
            }
            let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(u, v)| u * v).sum::<f64>();
            let (x, y) = (&centered[a], &centered[b]);
            total += dot(x, y) / (dot(x, x) * dot(y, y)).sqrt();
            pairs += 1;
        }
    }
    total / pairs as f64
}

fn correlation_config(rho: f64, size: usize, k: usize, groups: usize) -> SynthConfig {
    SynthConfig {
        n_stores: size * groups,
        n_products: 2,
        n_weeks: 2,
        true_rank: k,
        n_store_groups: groups,
        competition_rho: rho,
        density: 1.0,
        seed: 17,
        ..SynthConfig::default()
    }
}

#[test]
fn independent_groups_are_uncorrelated() {
    let (_, truth) = generate(&correlation_config(0.0, 4, 8, 50)).unwrap();
    let r = mean_within_group_correlation(&truth.p, &truth.store_group);
    assert!(r.abs() < 0.1, "mean within-group correlation {r}");
}

#[test]
fn planted_competition_is_recovered() {
    let (_, truth) = generate(&correlation_config(-0.5, 2, 64, 100)).unwrap();
    let r = mean_within_group_correlation(&truth.p, &truth.store_group);
    assert!((-0.6..=-0.4).contains(&r), "mean within-group correlation {r}");
}

#[test]
fn infeasible_competition_names_the_bound() {
    let err = generate(&correlation_config(-0.5, 4, 64, 100)).unwrap_err().to_string();
    assert!(err.contains("-0.33"), "{err}");
}

#[test]
fn noise_matches_requested_sigma() {
    let cfg = SynthConfig {
        n_stores: 50,
        n_products: 50,
        n_store_groups: 25,
        n_weeks: 40,
        density: 1.0,
        noise_sigma: 0.2,
        seed: 9,
        ..SynthConfig::default()
    };
    let (t, truth) = generate(&cfg).unwrap();
    assert!(t.len() >= 100_000);
    let mse: f64 = t
        .cells()
        .iter()
        .map(|c| (c.value - truth.clean(c.store, c.product, c.week)).powi(2))
        .sum::<f64>()
        / t.len() as f64;
    let target = cfg.noise_sigma.powi(2);
    assert!(mse >= 0.9 * target && mse <= 1.1 * target, "mse {mse}");
    let truncated = t.cells().iter().filter(|c| c.value == 0.0).count();
    assert!((truncated as f64) < 1e-3 * t.len() as f64);
}

#[test]
fn noiseless_values_are_exact() {
    let cfg = SynthConfig { density: 1.0, noise_sigma: 0.0, seed: 4, ..SynthConfig::default() };
    let (t, truth) = generate(&cfg).unwrap();
    assert_eq!(t.len(), cfg.n_stores * cfg.n_products * cfg.n_weeks);
    for c in t.cells() {
        assert_eq!(c.value, truth.clean(c.store, c.product, c.week));
    }
}

#[test]
fn export_ingest_build_round_trip() {
    let cfg = SynthConfig { n_stores: 6, n_products: 9, n_weeks: 12, density: 0.5, seed: 2, ..SynthConfig::default() };
    let (t, _) = generate(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sales.csv");
    export_iri_csv(&t, &path).unwrap();
    let report = ingest_csv(&path, &ColumnMap::default()).unwrap();
    assert!(report.rejected.is_empty());
    let rebuilt = build_tensor(&report.transactions, 0, 0).unwrap();
    assert_eq!(rebuilt.store_ids(), t.store_ids());
    assert_eq!(rebuilt.product_ids(), t.product_ids());
    assert_eq!(rebuilt.len(), t.len());
    for (a, b) in rebuilt.cells().iter().zip(t.cells()) {
        assert_eq!((a.store, a.product, a.week), (b.store, b.product, b.week));
        assert_eq!(format!("{:.6}", a.value), format!("{:.6}", b.value));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]
    #[test]
    fn same_seed_same_tensor(seed in any::<u64>(), density in 0.05f64..1.0) {
        let cfg = SynthConfig { n_stores: 5, n_products: 6, n_weeks: 7, n_store_groups: 2, density, seed, ..SynthConfig::default() };
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        prop_assert_eq!(a, b);
    }
}
