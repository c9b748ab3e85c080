use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::linalg::{Exec, Scalar};
use crate::ranking::{check_ratio, rank, requested_count, select_count, PruneSelection, RankMethod};
use crate::similarity::{build_ssm_with, MetricKind};
use crate::tensor::flatten_filters;

use super::graph::{conv_param_count, layer_param_count, ActShape, LayerSpec, ModelGraph};

/// Which filter count the ratio is applied to at every step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RatioBase {
    /// The layer's count at the start of the step (geometric decay).
    Current,
    /// The layer's count before any pruning (linear decay).
    Original,
}

impl fmt::Display for RatioBase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RatioBase::Current => "current",
            RatioBase::Original => "original",
        })
    }
}

impl FromStr for RatioBase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "current" => Ok(RatioBase::Current),
            "original" => Ok(RatioBase::Original),
            other => Err(Error::invalid(
                "ratio_base",
                format!("unknown ratio base {other:?} (expected current or original)"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PruneConfig {
    pub ratio: f64,
    pub method: RankMethod,
    pub metric: MetricKind,
    pub min_filters: usize,
    /// Only honoured by the greedy ranker.
    pub pair_dedup: bool,
    pub ratio_base: RatioBase,
    /// Pruning runs after epochs `1..=prune_epochs`.
    pub prune_epochs: usize,
}

impl Default for PruneConfig {
    fn default() -> Self {
        PruneConfig {
            ratio: 0.10,
            method: RankMethod::Area,
            metric: MetricKind::L2,
            min_filters: 4,
            pair_dedup: true,
            ratio_base: RatioBase::Current,
            prune_epochs: 5,
        }
    }
}

impl PruneConfig {
    pub fn validate(&self) -> Result<()> {
        check_ratio(self.ratio)?;
        if self.min_filters == 0 {
            return Err(Error::invalid("min_filters", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerPruneEntry {
    pub layer_id: usize,
    pub pruned_indices: Vec<usize>,
    pub filters_before: usize,
    pub filters_after: usize,
    /// This layer's parameters (weights + bias) at the start of the step.
    pub conv_params_before: usize,
    /// At the end of the step, after downstream input-channel removal too.
    pub conv_params_after: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PruneReport {
    pub epoch: usize,
    pub method: RankMethod,
    pub metric: MetricKind,
    pub layers: Vec<LayerPruneEntry>,
    pub conv_params_before: usize,
    pub conv_params_after: usize,
    /// Same totals without biases.
    pub conv_weights_before: usize,
    pub conv_weights_after: usize,
    pub reduction_percent: f64,
}

impl PruneReport {
    pub fn pruned_filters(&self) -> usize {
        self.layers.iter().map(|l| l.pruned_indices.len()).sum()
    }
}

pub fn reduction_percent(before: usize, after: usize) -> f64 {
    if before == 0 {
        0.0
    } else {
        100.0 * (1.0 - after as f64 / before as f64)
    }
}

/// Removes the selected output channels of conv `layer_id` together with
/// the matching input slices of the next parameterised layer.
///
/// Propagation passes through ReLU and max-pool layers. It ends at the next
/// conv (input channels removed) or at a Flatten followed by a Dense layer,
/// where channel `c` owns columns `[c·H·W, (c+1)·H·W)`.
pub fn prune_conv_layer<T: Scalar>(
    g: &ModelGraph<T>,
    layer_id: usize,
    sel: &PruneSelection,
) -> Result<ModelGraph<T>> {
    let conv = g.conv(layer_id)?;
    let idx = &sel.indices;
    if idx.is_empty() {
        return Ok(g.clone());
    }
    crate::tensor::check_indices(idx, conv.out_ch())?;
    if idx.len() >= conv.out_ch() {
        return Err(Error::Structural(format!(
            "cannot remove all {} filters of layer {layer_id}",
            conv.out_ch()
        )));
    }

    let shapes = g.validate()?;
    let mut out = g.clone();
    let layers = out.layers_mut();
    if let LayerSpec::Conv(c) = &mut layers[layer_id] {
        c.weights = c.weights.remove_out_channels(idx)?;
        c.bias = c
            .bias
            .iter()
            .enumerate()
            .filter(|(i, _)| idx.binary_search(i).is_err())
            .map(|(_, &b)| b)
            .collect();
    }

    let mut plane: Option<usize> = None;
    let mut consumer = None;
    for k in layer_id + 1..layers.len() {
        match (&layers[k], plane) {
            (LayerSpec::ReLU, _) | (LayerSpec::MaxPool { .. }, None) => continue,
            (LayerSpec::Flatten, None) => {
                plane = match shapes[k - 1] {
                    ActShape::Spatial { h, w, .. } => Some(h * w),
                    ActShape::Flat(_) => None,
                };
                continue;
            }
            (LayerSpec::Conv(_), None) | (LayerSpec::Dense(_), Some(_)) => {
                consumer = Some(k);
                break;
            }
            (l, _) => {
                return Err(Error::Structural(format!(
                    "output channels of layer {layer_id} feed a {} layer ({k}) that cannot be resized",
                    l.kind_name()
                )));
            }
        }
    }
    let Some(k) = consumer else {
        return Err(Error::Structural(format!(
            "layer {layer_id} has no downstream consumer to resize"
        )));
    };
    match &mut layers[k] {
        LayerSpec::Conv(next) => next.weights = next.weights.remove_in_channels(idx)?,
        LayerSpec::Dense(d) => {
            let hw = plane.unwrap_or(1);
            let cols: Vec<usize> = idx.iter().flat_map(|&c| c * hw..(c + 1) * hw).collect();
            d.weights = d.weights.remove_cols(&cols)?;
        }
        _ => unreachable!("consumer is a conv or dense layer"),
    }
    out.validate()?;
    Ok(out)
}

/// Runs the prune step of one epoch over every conv layer in order.
///
/// Holds the per-layer filter counts observed at construction, used when
/// the ratio is taken against the original counts.
#[derive(Debug, Clone)]
pub struct Pruner {
    cfg: PruneConfig,
    original: Vec<(usize, usize)>,
    exec: Exec,
}

impl Pruner {
    pub fn new<T: Scalar>(cfg: PruneConfig, g: &ModelGraph<T>) -> Result<Self> {
        cfg.validate()?;
        let original = g
            .conv_layer_ids()
            .into_iter()
            .map(|id| Ok((id, g.conv(id)?.out_ch())))
            .collect::<Result<_>>()?;
        Ok(Pruner {
            cfg,
            original,
            exec: Exec::Sequential,
        })
    }

    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }

    pub fn config(&self) -> &PruneConfig {
        &self.cfg
    }

    fn base_count(&self, layer_id: usize, current: usize) -> usize {
        match self.cfg.ratio_base {
            RatioBase::Current => current,
            RatioBase::Original => self
                .original
                .iter()
                .find(|(id, _)| *id == layer_id)
                .map_or(current, |&(_, n)| n),
        }
    }

    pub fn step<T: Scalar>(&self, g: &ModelGraph<T>, epoch: usize) -> Result<(ModelGraph<T>, PruneReport)> {
        if epoch == 0 {
            return Err(Error::invalid("epoch", "epochs are numbered from 1"));
        }
        let cfg = &self.cfg;
        let before = conv_param_count(g);
        let ids = g.conv_layer_ids();
        let mut entries = Vec::with_capacity(ids.len());
        for &id in &ids {
            let c = g.conv(id)?;
            entries.push(LayerPruneEntry {
                layer_id: id,
                pruned_indices: Vec::new(),
                filters_before: c.out_ch(),
                filters_after: c.out_ch(),
                conv_params_before: layer_param_count(c).total(),
                conv_params_after: 0,
            });
        }

        let mut current = g.clone();
        if epoch <= cfg.prune_epochs {
            for entry in &mut entries {
                let id = entry.layer_id;
                let n = current.conv(id)?.out_ch();
                let requested = requested_count(cfg.ratio, self.base_count(id, n));
                if n <= cfg.min_filters || requested == 0 || n < 2 {
                    continue;
                }
                let filters = flatten_filters(&current.conv(id)?.weights);
                let ssm = build_ssm_with(&filters, cfg.metric, self.exec)?;
                let ranking = rank(&ssm, cfg.method)?;
                let mut sel = select_count(&ranking, n, requested, cfg.min_filters, cfg.pair_dedup)?;
                sel.layer_id = id;
                sel.ratio_used = cfg.ratio;
                current = prune_conv_layer(&current, id, &sel)?;
                entry.filters_after = n - sel.indices.len();
                entry.pruned_indices = sel.indices;
            }
        }

        for entry in &mut entries {
            entry.conv_params_after = layer_param_count(current.conv(entry.layer_id)?).total();
        }
        let after = conv_param_count(&current);
        let report = PruneReport {
            epoch,
            method: cfg.method,
            metric: cfg.metric,
            layers: entries,
            conv_params_before: before.total(),
            conv_params_after: after.total(),
            conv_weights_before: before.weights,
            conv_weights_after: after.weights,
            reduction_percent: reduction_percent(before.total(), after.total()),
        };
        Ok((current, report))
    }
}

/// One prune step that treats `g`'s current filter counts as the originals.
pub fn prune_step<T: Scalar>(
    g: &ModelGraph<T>,
    cfg: &PruneConfig,
    epoch: usize,
) -> Result<(ModelGraph<T>, PruneReport)> {
    Pruner::new(cfg.clone(), g)?.step(g, epoch)
}
