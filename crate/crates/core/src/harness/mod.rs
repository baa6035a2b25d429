//! Experiment orchestration: the method roster, plan execution with
//! per-run seeds, summaries over repetitions, and the scaling benchmark.
//!
//! Every (scenario, repetition) pair gets its own data seed, shared by all
//! methods, and every (scenario, method, repetition) its own model seed, so a
//! replayed plan reproduces every record except wall-clock times.

mod bench;
mod gradsuite;
mod models;
mod plan;
mod summary;

pub use bench::{bench_scaling, linear_fit, BenchConfig, BenchReport, BenchRow, LinearFit};
pub use gradsuite::{gradcheck_suite, SuiteEntry};
pub use models::{train_method, LatentDims, Method, TrainedModel, TrainingConfig, CHECKPOINT_MAGIC};
pub use plan::{
    read_results_csv, run_plan, worker_count, DatasetSource, ExperimentPlan, PlanOutcome,
    ResultsWriter, RunRecord, ScenarioGrid, SizeSpec, RESULTS_HEADER, WORKERS_ENV,
};
pub use summary::{median_of, quantile, summarize, write_boxplot_csv, write_summary_csv, SummaryRow};
