//! Experiment orchestration: configuration, the multi-round loop, reports.

mod config;
mod experiment;
mod report;

pub use config::{
    AlConfig, ConfigBlock, DataBlock, DataSource, FileSource, SyntheticSource, DEFAULT_SYNTH_WEIGHTS, KEYS,
};
pub use experiment::{
    run_single, run_strategy, zero_shot_accuracy, AlState, ExperimentData, Oracle, RoundRecord, RunHistory,
};
pub use report::{
    compare_strategies, compare_strategies_with, mean_std, run_experiment, run_experiment_with, zero_shot_report,
    ExperimentReport, RoundSummary, StrategyReport,
};
