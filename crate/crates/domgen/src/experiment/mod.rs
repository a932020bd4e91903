//! Experiment orchestration: config, preprocessing rules, the run itself and result tables.

pub mod config;
pub mod preprocess;
pub mod run;
pub mod table;

pub use config::{DatasetSource, ExperimentConfig, Learner, NumModels, OutputConfig};
pub use preprocess::{apply_preprocessing, resolve_preprocessing, DatasetId, Preprocessing};
pub use run::{load_dataset, run_experiment, RunMetadata, RunOptions, RunOutput};
pub use table::{compare_summary, emit_table, EnsembleSummary, ResultRow, ResultsTable, TableFormat};
