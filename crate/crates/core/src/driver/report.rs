//! Report assembly and serialization.
//!
//! `rounds.csv`: `round,seed,strategy,accuracy,coverage,b`, one line per run and round.
//! `summary.json`: configuration block, zero-shot accuracy, and per-strategy
//! per-round mean/std across seeds together with the raw run histories.
//! `comparison.csv` (compare only): `round,strategy,mean_accuracy,std_accuracy,mean_coverage,std_coverage`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::{AlConfig, ConfigBlock};
use super::experiment::{run_strategy, zero_shot_accuracy, ExperimentData, RunHistory};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::strategies::StrategyKind;

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, Serialize)]
pub struct RoundSummary {
    pub round: usize,
    pub labeled: usize,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub mean_coverage: f64,
    pub std_coverage: f64,
    pub mean_selected_uncertainty: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct StrategyReport {
    pub strategy: StrategyKind,
    pub truncated: bool,
    pub rounds: Vec<RoundSummary>,
    pub runs: Vec<RunHistory>,
}

impl StrategyReport {
    pub fn from_runs(strategy: StrategyKind, runs: Vec<RunHistory>) -> Self {
        let completed = runs.iter().map(|r| r.rounds.len()).min().unwrap_or(0);
        let rounds = (0..completed)
            .map(|i| {
                let pick = |f: &dyn Fn(&super::experiment::RoundRecord) -> f64| -> Vec<f64> {
                    runs.iter().map(|r| f(&r.rounds[i])).collect()
                };
                let (mean_accuracy, std_accuracy) = mean_std(&pick(&|r| r.accuracy));
                let (mean_coverage, std_coverage) = mean_std(&pick(&|r| r.coverage as f64));
                let (mean_u, _) = mean_std(&pick(&|r| r.mean_uncertainty));
                RoundSummary {
                    round: i + 1,
                    labeled: runs[0].rounds[i].labeled,
                    mean_accuracy,
                    std_accuracy,
                    mean_coverage,
                    std_coverage,
                    mean_selected_uncertainty: mean_u,
                }
            })
            .collect();
        Self {
            strategy,
            truncated: runs.iter().any(|r| r.truncated),
            rounds,
            runs,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub config: ConfigBlock,
    pub n_train: usize,
    pub n_test: usize,
    pub num_classes: usize,
    pub budget_per_round: usize,
    pub zero_shot_accuracy: f64,
    pub strategies: Vec<StrategyReport>,
}

impl ExperimentReport {
    pub fn strategy(&self, kind: StrategyKind) -> Option<&StrategyReport> {
        self.strategies.iter().find(|s| s.strategy == kind)
    }

    pub fn rounds_csv(&self) -> String {
        let mut out = String::from("round,seed,strategy,accuracy,coverage,b\n");
        for s in &self.strategies {
            for run in &s.runs {
                for r in &run.rounds {
                    out.push_str(&format!(
                        "{},{},{},{:.6},{},{}\n",
                        r.round, run.seed, s.strategy, r.accuracy, r.coverage, r.budget
                    ));
                }
            }
        }
        out
    }

    pub fn comparison_csv(&self) -> String {
        let mut out = String::from("round,strategy,mean_accuracy,std_accuracy,mean_coverage,std_coverage\n");
        let rounds = self.strategies.iter().map(|s| s.rounds.len()).max().unwrap_or(0);
        for i in 0..rounds {
            for s in &self.strategies {
                if let Some(r) = s.rounds.get(i) {
                    out.push_str(&format!(
                        "{},{},{:.6},{:.6},{:.3},{:.3}\n",
                        r.round, s.strategy, r.mean_accuracy, r.std_accuracy, r.mean_coverage, r.std_coverage
                    ));
                }
            }
        }
        out
    }

    pub fn summary_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Writes `rounds.csv`, `summary.json`, and `comparison.csv` when more
    /// than one strategy ran. Returns the written paths.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let io = |path: &Path| {
            let path = path.to_owned();
            move |source| Error::Io { path, source }
        };
        fs::create_dir_all(dir).map_err(io(dir))?;
        let mut files = vec![
            (dir.join("rounds.csv"), self.rounds_csv()),
            (dir.join("summary.json"), self.summary_json()),
        ];
        if self.strategies.len() > 1 {
            files.push((dir.join("comparison.csv"), self.comparison_csv()));
        }
        for (path, text) in &files {
            fs::write(path, text).map_err(io(path))?;
        }
        Ok(files.into_iter().map(|(p, _)| p).collect())
    }
}

fn build_report<T: Scalar>(cfg: &AlConfig, data: &ExperimentData<T>, strategies: &[StrategyKind]) -> Result<ExperimentReport> {
    cfg.validate()?;
    let zero_shot = zero_shot_accuracy(data)?;
    let strategies = strategies
        .iter()
        .map(|&kind| run_strategy(cfg, data, kind).map(|runs| StrategyReport::from_runs(kind, runs)))
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentReport {
        config: cfg.to_block(),
        n_train: data.train.len(),
        n_test: data.test.len(),
        num_classes: data.zero_shot.num_classes(),
        budget_per_round: cfg.budget(data.train.len()),
        zero_shot_accuracy: zero_shot,
        strategies,
    })
}

/// Runs `cfg.strategy` over every seed on already loaded data.
pub fn run_experiment_with<T: Scalar>(cfg: &AlConfig, data: &ExperimentData<T>) -> Result<ExperimentReport> {
    build_report(cfg, data, &[cfg.strategy])
}

/// Loads or synthesizes the data and runs `cfg.strategy`.
pub fn run_experiment<T: Scalar>(cfg: &AlConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    run_experiment_with(cfg, &ExperimentData::<T>::load(cfg)?)
}

/// Runs several strategies on identical data and seeds.
pub fn compare_strategies_with<T: Scalar>(
    cfg: &AlConfig,
    data: &ExperimentData<T>,
    strategies: &[StrategyKind],
) -> Result<ExperimentReport> {
    if strategies.len() < 2 {
        return Err(Error::Config("compare needs at least two strategies".into()));
    }
    build_report(cfg, data, strategies)
}

pub fn compare_strategies<T: Scalar>(cfg: &AlConfig, strategies: &[StrategyKind]) -> Result<ExperimentReport> {
    cfg.validate()?;
    compare_strategies_with(cfg, &ExperimentData::<T>::load(cfg)?, strategies)
}

/// Zero-shot test accuracy for the configured data.
pub fn zero_shot_report<T: Scalar>(cfg: &AlConfig) -> Result<f64> {
    cfg.validate()?;
    zero_shot_accuracy(&ExperimentData::<T>::load(cfg)?)
}
