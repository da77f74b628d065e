//! Experiment cells, comparisons between cells, and report files.

mod compare;
mod config;
mod report;
mod run;
mod selftest;

pub use compare::{
    compare, compare_reports, Comparison, ImprovementRow, Pairing, SignificanceRow, Statistic,
};
pub use config::{
    parse_kv_text, BaselineBudget, DatasetId, ExperimentConfig, MnistSplit, OptimizerId,
    DATA_DIR_ENV,
};
pub use report::{emit_reports, ReportFormat};
pub use run::{
    load_cell, persist_cell, prepare_data, run_cell, run_one, ExperimentData, RunRecord,
    RunStatus, CONFIG_FILE, RECORDS_FILE,
};
pub use selftest::{selftest, SelfCheck};
