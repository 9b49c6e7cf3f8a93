//! Batch execution, ablations, persistence and reports.
//!
//! Metrics written here are proxies computed from attention maps; they are
//! not image-text evaluation scores.

mod ablate;
mod batch;
mod config;
mod metrics;
mod report;

pub use ablate::{ablate, parse_ablations, Ablation, AblationTable};
pub use batch::{
    aggregate, load_record, prompt_id, run_batch, run_jobs, write_summary_csv, BatchSummary, Job, SummaryRow, MEAN_ROW,
};
pub use config::{DatasetSource, ExperimentConfig, SEED_ENV};
pub use metrics::ProxyMetrics;
pub use report::{parse_summary_csv, read_summary_csv, render_table, trajectory, write_trajectory, TrajectoryRow};
