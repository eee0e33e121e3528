//! Config-driven experiments: every method and analysis across seeds, with
//! per-run files and aggregated mean/std tables.

mod config;
mod report;
mod run;

pub use crate::eval::{evaluate, Accuracy};
pub use config::{
    Analyses, ExperimentConfig, GeneratorSpec, LearnerSpec, MethodSpec, PrefixAnalysis, ScheduleSpec,
};
pub use report::{
    collect_run_results, load_run_result, mean_std, report, save_run_result, write_tables, ArmSummary, Pair,
    PairedDifference, Report, RunResult, Stat, TableReport,
};
pub use run::{
    lambda_slug, recompute_report, run_experiment, train_method, SingleRun, AUXILIARY, DYNAMICS, FILTERED, LAYERS, MAIN, NOISE, PREFIX,
    PROBE, RATIO, RECALL, VARIANTS,
};
