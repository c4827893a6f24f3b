//! Experiment harness: synthetic data, config parsing, the training loop,
//! and the end-to-end pipeline runner.

pub mod config;
pub mod pipeline;
pub mod synthetic;
pub mod train;

pub use config::{parse_config, ConfigMap};
pub use pipeline::{run_pipeline, PipelineOutcome, SEED_ENV};
pub use synthetic::{
    benchmark_spec, expand_tracklets, generate_synthetic, split_query_gallery, standard_benchmark,
    Benchmark, LabeledSet, SyntheticSpec,
};
pub use train::{pk_sample, train_head, MetricLossKind, TrainConfig, TrainOutcome};
