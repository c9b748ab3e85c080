//! Model graph, structural filter removal and the per-epoch prune step.

mod graph;
mod prune;

pub use graph::{
    conv_param_count, layer_param_count, ActShape, Conv2d, Dense, InputShape, LayerSpec,
    ModelGraph, ParamCount, VggMini,
};
pub use prune::{
    prune_conv_layer, prune_step, reduction_percent, LayerPruneEntry, PruneConfig, PruneReport, Pruner, RatioBase,
};
