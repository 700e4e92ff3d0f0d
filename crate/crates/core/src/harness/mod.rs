//! Datasets, run configuration, the train → unlearn → evaluate pipeline and
//! run-directory persistence.

mod cli;
mod config;
mod dataset;
mod io;
mod pipeline;

pub use cli::cli;
pub use config::{
    DatasetKind, DatasetSpec, EmbeddingKind, EvalPlan, ForgetMode, FreqConfig, ModelConfig,
    ObjectiveKind, RetainPick, RunConfig, ScheduleConfig, TrainConfig, UnlearnConfig, WindowConfig,
    METRIC_FAMILIES,
};
pub use dataset::{
    gaussian_ring, load_image_dir, make_dataset, synthetic_textures, two_moons, Dataset,
};
pub use io::{
    decode_samples, encode_samples, metrics_csv, parse_metrics_csv, read_samples, write_samples,
    write_text, MetricRow, RunDir, METRICS_HEADER,
};
pub use pipeline::{
    build_objective, eval_suite, load_compatible, run_pipeline, run_unlearn, toy_figure,
    train_base, RunRecord, ToyFigure, WindowOutcome, TOY_WINDOWS,
};
