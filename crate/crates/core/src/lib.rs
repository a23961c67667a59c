//! Federated learning with noisy labels via two-level sampling.
//!
//! The server scores every client's labels with the current global model,
//! samples clients in proportion to their summed label confidence, and each
//! selected client trains on a confidence-sampled labeled subset plus
//! pseudo-labeled remainder. Local epochs per round follow a decaying
//! schedule.
//!
//! Module map:
//! - [`data`]: synthetic / IDX datasets, client partitioning, label noise
//! - [`model`]: linear or one-hidden-layer softmax classifier with SGD
//! - [`sampling`]: confidence scores, client and local-data sampling
//! - [`schedule`]: cosine / logarithm / constant local-epoch schedules
//! - [`localtrain`]: one client's local update with semi-supervised loss
//! - [`server`]: round orchestration, aggregation, convergence
//! - [`telemetry`]: per-round diagnostics and CSV run logs
//! - [`config`] / [`runner`]: experiment configuration and multi-trial runs

// `!(x > 0.0)` is used on purpose so NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod data;
pub mod error;
pub mod localtrain;
pub mod model;
pub mod rng;
pub mod runner;
pub mod sampling;
pub mod schedule;
pub mod server;
pub mod telemetry;
pub mod util;

pub use config::{
    parse_config, parse_config_with_overrides, ClientSampling, DataSource, ExperimentConfig,
    Variant,
};
pub use data::{
    ClientShard, Dataset, NoiseFlavor, NoiseMode, NoiseSpec, PartitionMode, PartitionSpec,
};
pub use error::{Error, Result};
pub use localtrain::{DataSampling, SslConfig};
pub use model::{Activation, Architecture, ModelParams, OptimizerConfig, OptimizerState};
pub use runner::{RunManifest, SummaryTable};
pub use sampling::{ClientScore, SamplingConfig};
pub use schedule::{ScheduleKind, ScheduleSpec};
pub use server::{ExperimentSummary, Simulation};
pub use telemetry::RoundRecord;
