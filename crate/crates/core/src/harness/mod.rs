//! Data, configuration, training and experiment orchestration.

mod config;
mod data;
mod gradcheck;
mod io;
mod run;
mod train;

pub use config::{ClusterSelection, EvalMode, ExperimentConfig, HeadKind, NormalizeSelection};
pub use data::{augment_pair, generate_blobs, split_indices, AugmentSettings, Dataset};
pub use gradcheck::loss_gradient_check;
pub use io::{
    decode_labels, decode_matrix, encode_labels, encode_matrix, load_labels, load_matrix, save_labels, save_matrix,
    LABELS_MAGIC, MATRIX_MAGIC,
};
pub use run::{evaluate, run_experiment, summarize_runs, RunRecord};
pub use train::{coefficient_marginal, train, DegeneracyRecord, Phase, StepRecord, TrainOutcome, METRICS_LOG_HEADER};
