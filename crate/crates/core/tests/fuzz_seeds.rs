//! Replays the checked-in fuzz corpora, and every prefix of each seed,
//! through the same parsers the fuzz targets drive.

use std::fs;
use std::path::PathBuf;

use atlas::data::{build_tensor, ingest_reader, parse_tensor_csv, Cell, ColumnMap, KeyValues, SalesTensor, TensorMetadata};
use atlas::factor::{parse_covariance_file, parse_group_file, resolve_groups, FactorModel};
use atlas::forecast::SarimaSpec;
use atlas::pipeline::{parse_features_csv, parse_forecasts_csv, ContextModel, PipelineConfig};
use atlas::synth::SynthConfig;
use proptest::prelude::*;

fn seeds(target: &str) -> Vec<Vec<u8>> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<Vec<u8>> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| fs::read(e.unwrap().path()).unwrap())
        .collect();
    assert!(!out.is_empty(), "no seeds for {target}");
    out.sort();
    out
}

fn features_tensor() -> SalesTensor {
    let cells = vec![Cell {
        store: 0,
        product: 0,
        week: 0,
        value: 1.0,
    }];
    SalesTensor::new(vec!["s1".into()], vec!["p1".into(), "p2".into()], 4, 0, cells).unwrap()
}

/// Runs one target body; returns whether the full parse succeeded.
fn drive(target: &str, data: &[u8]) -> bool {
    let text = std::str::from_utf8(data).ok();
    match target {
        "ingest_csv" => match ingest_reader(data, &ColumnMap::default()) {
            Ok(report) => build_tensor(&report.transactions, 1, 1).is_ok(),
            Err(_) => false,
        },
        "tensor_export" => {
            let Some((meta, body)) = text.and_then(|t| t.split_once("\n---\n")) else {
                return false;
            };
            match TensorMetadata::parse(meta) {
                Ok(meta) => parse_tensor_csv(body.as_bytes(), &meta).is_ok(),
                Err(_) => false,
            }
        }
        "group_file" => match text.map(parse_group_file) {
            Some(Ok(a)) => {
                let ids: Vec<String> = a.iter().map(|x| x.member_id.clone()).collect();
                resolve_groups(&ids, &a, &Default::default(), -0.2).is_ok()
            }
            _ => false,
        },
        "covariance_file" => text.map(parse_covariance_file).is_some_and(|r| r.is_ok()),
        "model_text" => match text.map(FactorModel::from_text) {
            Some(Ok(m)) => {
                let again = FactorModel::from_text(&m.to_text()).unwrap();
                assert_eq!(again.to_text(), m.to_text());
                true
            }
            _ => false,
        },
        "config_file" => {
            let Some(Ok(kv)) = text.map(KeyValues::parse) else {
                return false;
            };
            let pipeline = PipelineConfig::from_key_values(&kv);
            if let Ok(c) = &pipeline {
                let again = PipelineConfig::from_key_values(&KeyValues::parse(&c.render()).unwrap()).unwrap();
                assert_eq!(again.render(), c.render());
            }
            let synth = SynthConfig::default().apply(&kv);
            pipeline.is_ok() || synth.is_ok()
        }
        "sarima_spec" => text.map(str::parse::<SarimaSpec>).is_some_and(|r| r.is_ok()),
        "features_csv" => parse_features_csv(data, &features_tensor()).is_ok(),
        "forecast_csv" => parse_forecasts_csv(data).is_ok(),
        "context_model" => match text.map(ContextModel::from_csv) {
            Some(Ok(m)) => {
                assert_eq!(ContextModel::from_csv(&m.to_csv()).unwrap(), m);
                true
            }
            _ => false,
        },
        other => panic!("unknown target {other}"),
    }
}

const TARGETS: &[&str] = &[
    "ingest_csv",
    "tensor_export",
    "group_file",
    "covariance_file",
    "model_text",
    "config_file",
    "sarima_spec",
    "features_csv",
    "forecast_csv",
    "context_model",
];

#[test]
fn every_seed_parses() {
    for target in TARGETS {
        for seed in seeds(target) {
            assert!(drive(target, &seed), "{target}: seed rejected:\n{}", String::from_utf8_lossy(&seed));
        }
    }
}

#[test]
fn seed_prefixes_never_panic() {
    for target in TARGETS {
        for seed in seeds(target) {
            for cut in 0..seed.len() {
                drive(target, &seed[..cut]);
            }
        }
    }
}

proptest! {
    #[test]
    fn arbitrary_bytes_never_panic(data in proptest::collection::vec(any::<u8>(), 0..256), which in 0..TARGETS.len()) {
        drive(TARGETS[which], &data);
    }

    #[test]
    fn mutated_seeds_never_panic(which in 0..TARGETS.len(), pos in any::<usize>(), byte in any::<u8>()) {
        for mut seed in seeds(TARGETS[which]) {
            if !seed.is_empty() {
                let i = pos % seed.len();
                seed[i] = byte;
            }
            drive(TARGETS[which], &seed);
        }
    }
}
