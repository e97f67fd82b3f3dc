use std::cmp::Ordering;
use std::collections::BTreeMap;

use rayon::prelude::*;

use super::{execute, Mode, PipelineConfig, TuneStrategy, Window};
use crate::data::SalesTensor;
use crate::error::{AtlasError, Result};
use crate::eval::rmse;
use crate::factor::GroupStructure;

#[derive(Debug, Clone, PartialEq)]
pub struct LeaderboardEntry {
    pub rank: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    /// Validation RMSE, or the failure message.
    pub outcome: std::result::Result<f64, String>,
}

impl LeaderboardEntry {
    fn cmp_key(&self, other: &Self) -> Ordering {
        let score = |e: &Self| e.outcome.as_ref().copied().unwrap_or(f64::INFINITY);
        score(self)
            .total_cmp(&score(other))
            .then(self.rank.cmp(&other.rank))
            .then(self.lambda1.total_cmp(&other.lambda1))
            .then(self.lambda2.total_cmp(&other.lambda2))
    }
}

#[derive(Debug, Clone)]
pub struct TuneResult {
    pub best: PipelineConfig,
    /// Every evaluated candidate, ascending by validation RMSE; ties go to
    /// the smaller rank, then the smaller `lambda1`. Failures sort last.
    pub leaderboard: Vec<LeaderboardEntry>,
}

impl TuneResult {
    pub fn leaderboard_csv(&self) -> String {
        let mut out = String::from("rank,lambda1,lambda1_star,lambda2,valid_rmse,error\n");
        for e in &self.leaderboard {
            let (score, err) = match &e.outcome {
                Ok(r) => (format!("{r:e}"), String::new()),
                Err(m) => (String::new(), m.replace([',', '\n'], ";")),
            };
            out.push_str(&format!("{},{},{},{},{},{}\n", e.rank, e.lambda1, e.lambda1, e.lambda2, score, err));
        }
        out
    }
}

/// RMSE over the observed validation cells of a model trained on the
/// training split.
pub fn validation_rmse(tensor: &SalesTensor, groups: &GroupStructure, config: &PipelineConfig) -> Result<f64> {
    let split = config.split_for(tensor.n_weeks())?;
    if split.valid_len() == 0 {
        return Err(AtlasError::Argument("validation window is empty".into()));
    }
    let run = execute(tensor, groups, config, Mode::TwoStep, Window::validation(split))?;
    rmse(&run.scored_pairs()).map_err(|_| AtlasError::Argument("no observed cells in the validation window".into()))
}

type Candidate = (usize, usize, usize);

fn candidate_config(base: &PipelineConfig, grid: &super::TuneGrid, c: Candidate) -> PipelineConfig {
    let mut cfg = base.clone();
    cfg.fit.rank = grid.ranks[c.0];
    cfg.fit.lambda1 = grid.lambda1[c.1];
    cfg.fit.lambda1_star = grid.lambda1[c.1];
    cfg.fit.lambda2 = grid.lambda2[c.2];
    cfg
}

/// Grid search of `(rank, lambda1 = lambda1_star, lambda2)` on the validation
/// split. The returned config is the winner; callers refit it on the
/// training split for test scoring.
pub fn tune(tensor: &SalesTensor, groups: &GroupStructure, config: &PipelineConfig) -> Result<TuneResult> {
    let grid = &config.tuning;
    if grid.ranks.is_empty() || grid.lambda1.is_empty() || grid.lambda2.is_empty() {
        return Err(AtlasError::Argument("every tuning grid needs at least one value".into()));
    }
    let split = config.split_for(tensor.n_weeks())?;
    if split.valid_len() == 0 {
        return Err(AtlasError::Argument("tuning needs a non-empty validation window".into()));
    }
    let mut scores: BTreeMap<Candidate, std::result::Result<f64, String>> = BTreeMap::new();
    let evaluate = |batch: Vec<Candidate>, scores: &mut BTreeMap<Candidate, std::result::Result<f64, String>>| {
        let fresh: Vec<Candidate> = batch.into_iter().filter(|c| !scores.contains_key(c)).collect();
        let results: Vec<(Candidate, std::result::Result<f64, String>)> = fresh
            .into_par_iter()
            .map(|c| {
                let cfg = candidate_config(config, grid, c);
                (c, validation_rmse(tensor, groups, &cfg).map_err(|e| e.to_string()))
            })
            .collect();
        scores.extend(results);
    };
    let best_of = |scores: &BTreeMap<Candidate, std::result::Result<f64, String>>, among: &[Candidate]| -> Candidate {
        *among
            .iter()
            .min_by(|a, b| entry(grid, **a, &scores[a]).cmp_key(&entry(grid, **b, &scores[b])))
            .unwrap()
    };

    match grid.strategy {
        TuneStrategy::Full => {
            let mut all = Vec::new();
            for a in 0..grid.ranks.len() {
                for b in 0..grid.lambda1.len() {
                    for c in 0..grid.lambda2.len() {
                        all.push((a, b, c));
                    }
                }
            }
            evaluate(all, &mut scores);
        }
        TuneStrategy::Greedy => {
            let mut current: Candidate = (0, 0, 0);
            loop {
                let before = current;
                for axis in 0..3 {
                    let line: Vec<Candidate> = match axis {
                        0 => (0..grid.ranks.len()).map(|a| (a, current.1, current.2)).collect(),
                        1 => (0..grid.lambda1.len()).map(|b| (current.0, b, current.2)).collect(),
                        _ => (0..grid.lambda2.len()).map(|c| (current.0, current.1, c)).collect(),
                    };
                    evaluate(line.clone(), &mut scores);
                    current = best_of(&scores, &line);
                }
                if current == before {
                    break;
                }
            }
        }
    }

    let mut leaderboard: Vec<LeaderboardEntry> = scores.iter().map(|(c, o)| entry(grid, *c, o)).collect();
    leaderboard.sort_by(|a, b| a.cmp_key(b));
    let winner = &leaderboard[0];
    if winner.outcome.is_err() {
        let failures: Vec<String> = leaderboard
            .iter()
            .map(|e| format!("k={} lambda1={} lambda2={}: {}", e.rank, e.lambda1, e.lambda2, e.outcome.as_ref().unwrap_err()))
            .collect();
        return Err(AtlasError::Numeric(format!("every tuning candidate failed: {}", failures.join("; "))));
    }
    let mut best = config.clone();
    best.fit.rank = winner.rank;
    best.fit.lambda1 = winner.lambda1;
    best.fit.lambda1_star = winner.lambda1;
    best.fit.lambda2 = winner.lambda2;
    Ok(TuneResult { best, leaderboard })
}

fn entry(grid: &super::TuneGrid, c: Candidate, outcome: &std::result::Result<f64, String>) -> LeaderboardEntry {
    LeaderboardEntry {
        rank: grid.ranks[c.0],
        lambda1: grid.lambda1[c.1],
        lambda2: grid.lambda2[c.2],
        outcome: outcome.clone(),
    }
}
