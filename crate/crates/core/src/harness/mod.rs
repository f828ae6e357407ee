//! Copy-task data, the toy transformer, training, benchmarks and the CLI.

pub mod ablate;
pub mod bench;
pub mod cli;
pub mod config;
pub mod copy_task;
pub mod hb_lab;
pub mod model;
pub mod suites;
pub mod train;

pub use ablate::{ablation_csv, run_ablation, AblateConfig, AblationRow};
pub use bench::{bench_attention, log_log_slope, BenchConfig, BenchKind, BenchReport, BenchRow};
pub use config::{
    copy_task_momentum, resolve_seed, RunConfig, COPY_EPOCH_BUDGET, COPY_LR, COPY_TARGET_ACCURACY, SEED_ENV,
};
pub use copy_task::{copy_sample, generate_copy_dataset, CopyDataset, CopyTaskConfig, SEPARATOR};
pub use hb_lab::{run_hb_lab, HbLabConfig, HbLabReport, RateRow};
pub use model::{AttentionKind, FfActivation, Forward, ForwardOptions, Model, ModelConfig};
pub use train::{
    copy_accuracy, run_copy_task, train, EpochMetrics, LrDrop, OptimizerKind, RunManifest, RunSummary, TrainConfig,
};
pub use suites::{checks_csv, equivalence_suite, model_grad_suite, CheckResult};
