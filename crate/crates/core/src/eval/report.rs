use sha2::{Digest, Sha256};

use crate::data::SplitSpec;
use crate::pipeline::PipelineConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct MethodRow {
    pub method: String,
    pub rmse: f64,
    pub mae: f64,
    pub runtime_secs: f64,
    pub iterations: usize,
    pub config_digest: String,
    /// Number of scored test cells.
    pub n_cells: usize,
    /// Digest of the scored `(store, product, week)` set.
    pub cell_digest: String,
    pub error: Option<String>,
}

impl MethodRow {
    pub fn failed(method: &str, runtime_secs: f64, error: String) -> Self {
        Self {
            method: method.into(),
            rmse: f64::NAN,
            mae: f64::NAN,
            runtime_secs,
            iterations: 0,
            config_digest: String::new(),
            n_cells: 0,
            cell_digest: String::new(),
            error: Some(error),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub dataset: String,
    pub split: SplitSpec,
    pub seed: u64,
    /// Data the final models were fitted on before test scoring.
    pub refit: String,
    pub tuned: bool,
    pub rows: Vec<MethodRow>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// First 16 hex digits of the SHA-256 of the rendered config and method.
pub fn config_digest(config: &PipelineConfig, method: &str) -> String {
    let mut h = Sha256::new();
    h.update(method.as_bytes());
    h.update(b"\n");
    h.update(config.render().as_bytes());
    hex(&h.finalize()[..8])
}

/// Order-independent digest of a set of cell indices.
pub fn cell_set_digest(cells: &[(usize, usize, usize)]) -> String {
    let mut sorted = cells.to_vec();
    sorted.sort_unstable();
    let mut h = Sha256::new();
    for (i, j, t) in sorted {
        h.update(format!("{i},{j},{t};").as_bytes());
    }
    hex(&h.finalize()[..8])
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,rmse,mae,runtime_secs,iterations,config_digest,n_cells,cell_digest,error\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{:.3},{},{},{},{},{}\n",
                r.method,
                r.rmse,
                r.mae,
                r.runtime_secs,
                r.iterations,
                r.config_digest,
                r.n_cells,
                r.cell_digest,
                r.error.as_deref().unwrap_or("").replace([',', '\n'], ";")
            ));
        }
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = format!(
            "dataset: {}\nsplit: train 0..{}, valid {}..{}, test {}..{}\nseed: {}  tuned: {}  refit on: {}\n\n",
            self.dataset,
            self.split.train_end,
            self.split.train_end,
            self.split.valid_end,
            self.split.valid_end,
            self.split.test_end,
            self.seed,
            self.tuned,
            self.refit
        );
        out.push_str(&format!(
            "{:<18} {:>12} {:>12} {:>9} {:>6} {:>8}\n",
            "method", "rmse", "mae", "seconds", "iters", "cells"
        ));
        for r in &self.rows {
            match &r.error {
                Some(e) => out.push_str(&format!("{:<18} failed: {e}\n", r.method)),
                None => out.push_str(&format!(
                    "{:<18} {:>12.6} {:>12.6} {:>9.2} {:>6} {:>8}\n",
                    r.method, r.rmse, r.mae, r.runtime_secs, r.iterations, r.n_cells
                )),
            }
        }
        out
    }

    /// Whitespace-separated columns for external plotting.
    pub fn gnuplot_data(&self) -> String {
        let mut out = String::from("# index method rmse mae runtime_secs\n");
        for (i, r) in self.rows.iter().enumerate() {
            out.push_str(&format!("{i} {} {} {} {}\n", r.method, r.rmse, r.mae, r.runtime_secs));
        }
        out
    }

    pub fn row(&self, method: &str) -> Option<&MethodRow> {
        self.rows.iter().find(|r| r.method == method)
    }
}
