//! Run configuration, data preparation, training runs and experiment drivers.

pub mod config;
pub mod data;
pub mod experiments;
pub mod figures;
pub mod log;
pub mod train;
pub mod verify;

pub use config::{CorpusSource, DataConfig, EvalConfig, ForgettingConfig, ModelSpec, RunConfig, Stop};
pub use data::{check_disjoint, load_corpus, prepare, Prepared};
pub use experiments::{
    crossings, desk_base, forgetting_baseline_vs_scale, forgetting_curve, inject_epoch_at, micro_base, order_probe,
    repetition_experiment, run_docid_experiment, run_forgetting, run_lr_sweep, run_scale_sweep, DocIdArm,
    ForgettingRun, LrEntry, LrSweep, ManifestRun, ScaleEntry, ScaleSweep, SweepKind, SweepManifest,
};
pub use figures::{emit_available, emit_figure_data, figure_csv, load_run, Figure};
pub use log::{read_records, MetricLog, MetricRecord, RecordKind};
pub use train::{
    epoch_batches, history_from_records, run_training, ResolvedConfig, ResolvedRun, RunOptions, RunOutcome, WarmStart,
};
