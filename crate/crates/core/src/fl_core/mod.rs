//! Training and aggregation maths for the federated loop.

mod aggregate;
mod codec;
mod dataset;
mod metrics;
mod model;
mod train;

pub use aggregate::{aggregate_mean, aggregate_weighted};
pub use codec::{decode_weights, encode_weights, encoded_len, WEIGHTS_MAGIC};
pub use dataset::{
    make_synthetic_dataset, partition, Dataset, DatasetSpec, PartitionScheme, SplitDataset,
};
pub use metrics::{evaluate, ClassMetrics, MetricsReport};
pub use model::{init_weights, param_count, WeightVector};
pub use train::{
    centralized_baseline, cross_entropy, local_train, prox_gradient, prox_penalty, Method,
    TrainConfig,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlError {
    #[error("invalid layer shapes {0:?}: need input, at least one hidden layer and output, all > 0")]
    InvalidShapes(Vec<usize>),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("nothing to aggregate")]
    EmptyAggregate,
    #[error("malformed weight encoding: {0}")]
    Codec(&'static str),
    #[error("invalid dataset spec: {0}")]
    InvalidDataset(String),
    #[error("invalid partition: {0}")]
    InvalidPartition(String),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
}
