//! Filter pruning for convolutional networks driven by self-similarity
//! matrices (SSMs) over each layer's flattened filters.
//!
//! A prune step flattens every conv layer's filters, builds the pairwise
//! distance matrix, ranks filters by redundancy (nearest-neighbour distance
//! or area under the SSM row) and physically removes the most redundant
//! ones, together with the matching input slices downstream. The trainer
//! interleaves one prune step after each training epoch, so no separate
//! finetuning phase is needed.

pub mod cli;
pub mod engine;
pub mod error;
pub mod io;
pub mod linalg;
pub mod ranking;
pub mod similarity;
pub mod tensor;
pub mod trainer;

pub use engine::{
    conv_param_count, prune_conv_layer, prune_step, InputShape, LayerSpec, ModelGraph, PruneConfig,
    PruneReport, Pruner, RatioBase, VggMini,
};
pub use error::{Error, Result};
pub use linalg::Exec;
pub use ranking::{area_rank, greedy_rank, select_prune_set, PruneSelection, RankMethod, Ranking};
pub use similarity::{build_ssm, distance, normalize_for_kl, MetricKind, SimilarityMatrix};
pub use tensor::{flatten_filters, unflatten_filters, FilterSet, Matrix, Tensor4};
pub use trainer::{train_prune, Dataset, EpochRecord, TrainConfig};
