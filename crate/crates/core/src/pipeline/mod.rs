//! Data generation, training, and evaluation.

mod datagen;
mod dataset;
mod eval;
mod train;

pub use datagen::{generate_dataset, DataGenConfig, Dataset};
pub use dataset::{format_dataset, header_line, parse_dataset, read_dataset, write_dataset};
pub use eval::{
    aggregate_of, evaluate, evaluate_with, gap_summary, per_sample_csv, spectra_csv, timing_summary,
    write_report, Aggregate, EvalReport, SampleReport, Stats, AGGREGATE_JSON, SAMPLES_CSV, SPECTRA_CSV,
};
pub use train::{evaluate_loss, train, Adam, LossMode, TrainConfig, TrainOutcome};
