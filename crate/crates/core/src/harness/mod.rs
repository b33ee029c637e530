//! Training runs and the artifacts built from them.

mod checkpoint;
mod config;
mod relevance;
mod sweep;
mod train;
mod traverse;

pub use checkpoint::Checkpoint;
pub use config::{DatasetSpec, RegScale, RunConfig, Variant, DEVICE_ENV, OUT_DIR_ENV};
pub use relevance::{relevance_from_prior, relevance_report, Indicator, RelevanceReport, Thresholds};
pub use sweep::{cardinality_sweep, sweep_csv, write_sweep_csv, SweepRow};
pub use train::{parse_history, train, HistoryRecord, TrainOutcome};
pub use traverse::{decode_at, prior_scales, traverse, TraversalGrid, DEFAULT_RANGE, DEFAULT_STEPS};
