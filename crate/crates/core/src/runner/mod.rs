//! Experiment harness: configuration, training, grids and reports.

mod config;
mod grid;
mod report;
mod train;

pub use config::{parse_list, CellKey, ConfigFile, DataSource, ExperimentConfig, GridSpec, ShapBudget};
pub use grid::{
    explain_model, load_split, prepare, run_cell, run_grid, run_prepared, save_split, split_seed, CellRun,
    GridOptions, SavedModel,
};
pub use report::{CellFailure, ReportFormat, ResultTable, RunResult, Timings, CSV_HEADER};
pub use train::{
    evaluate, head_loss, predict_scores, train, DataSplits, EpochRecord, Evaluation, LabeledMatrix, TrainConfig,
    TrainOutcome,
};
