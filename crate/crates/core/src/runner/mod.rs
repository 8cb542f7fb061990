//! Configuration, seeded runs, grid search and result tables.

mod config;
mod grid;
mod report;
mod run;

pub use config::{parse_pairs, Backbone, DatasetSpec, RunConfig};
pub use grid::{grid_search, select_best, Grid, GridOutcome, GridPoint};
pub use report::{report, ReportTable};
pub use run::{
    augmentation_for, build_network, evaluate, losses_csv, mean_std, prepare_data, run, run_in_memory, run_seed,
    seed_dir, worker_pool, write_record, write_seed_artifacts, PreparedData, RunRecord, SeedOutcome, StepLog,
    VALIDATION_FRACTION,
};
