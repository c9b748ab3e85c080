//! Redundancy rankings over an SSM and prune-set selection.
//!
//! Both rankers order filters by ascending score (most redundant first)
//! with a stable sort, so ties go to the lower filter index.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::similarity::SimilarityMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RankMethod {
    /// Nearest-neighbour distance per filter (local similarity).
    Greedy,
    /// Trapezoidal area under the filter's SSM row (global similarity).
    Area,
}

impl RankMethod {
    pub fn name(self) -> &'static str {
        match self {
            RankMethod::Greedy => "greedy",
            RankMethod::Area => "area",
        }
    }
}

impl fmt::Display for RankMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RankMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "greedy" => Ok(RankMethod::Greedy),
            "area" => Ok(RankMethod::Area),
            other => Err(Error::invalid(
                "method",
                format!("unknown method {other:?} (expected greedy or area)"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ranking {
    pub method: RankMethod,
    /// Filter indices, most redundant first.
    pub order: Vec<usize>,
    /// Per-filter score, indexed by filter.
    pub scores: Vec<f64>,
    /// Greedy only: each filter's nearest neighbour (lowest index on ties).
    pub nearest: Option<Vec<usize>>,
}

impl Ranking {
    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }
}

fn ascending_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    order
}

/// Ranks by the smallest off-diagonal entry of each row.
pub fn greedy_rank(s: &SimilarityMatrix) -> Result<Ranking> {
    let n = s.n();
    if n < 2 {
        return Err(Error::TooFewFilters(n));
    }
    let mut scores = Vec::with_capacity(n);
    let mut nearest = Vec::with_capacity(n);
    for i in 0..n {
        let (j, v) = s
            .row(i)
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .fold((usize::MAX, f64::INFINITY), |best, (j, &v)| {
                let v = v as f64;
                if best.0 == usize::MAX || v < best.1 {
                    (j, v)
                } else {
                    best
                }
            });
        scores.push(v);
        nearest.push(j);
    }
    Ok(Ranking {
        method: RankMethod::Greedy,
        order: ascending_order(&scores),
        scores,
        nearest: Some(nearest),
    })
}

/// Trapezoid rule with unit spacing over a full row, diagonal included.
pub fn trapezoidal_area(row: &[f32]) -> f64 {
    row.windows(2)
        .map(|w| (w[0] as f64 + w[1] as f64) / 2.0)
        .sum()
}

pub fn area_rank(s: &SimilarityMatrix) -> Result<Ranking> {
    let n = s.n();
    if n < 2 {
        return Err(Error::TooFewFilters(n));
    }
    let scores: Vec<f64> = (0..n).map(|i| trapezoidal_area(s.row(i))).collect();
    Ok(Ranking {
        method: RankMethod::Area,
        order: ascending_order(&scores),
        scores,
        nearest: None,
    })
}

pub fn rank(s: &SimilarityMatrix, method: RankMethod) -> Result<Ranking> {
    match method {
        RankMethod::Greedy => greedy_rank(s),
        RankMethod::Area => area_rank(s),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PruneSelection {
    pub layer_id: usize,
    /// Sorted ascending.
    pub indices: Vec<usize>,
    pub ratio_used: f64,
    /// The min-filter floor reduced the requested count.
    pub floor_applied: bool,
}

impl PruneSelection {
    pub fn empty(layer_id: usize, ratio_used: f64) -> Self {
        PruneSelection {
            layer_id,
            indices: Vec::new(),
            ratio_used,
            floor_applied: false,
        }
    }
}

pub fn check_ratio(ratio: f64) -> Result<()> {
    if ratio > 0.0 && ratio < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidRatio(ratio))
    }
}

/// `floor(ratio · base)`, tolerant of products that land a rounding error
/// below an integer (e.g. `0.29 · 100`).
pub fn requested_count(ratio: f64, base: usize) -> usize {
    (ratio * base as f64 + 1e-9).floor() as usize
}

pub fn select_prune_set(
    r: &Ranking,
    n_current: usize,
    ratio: f64,
    min_filters: usize,
    pair_dedup: bool,
) -> Result<PruneSelection> {
    check_ratio(ratio)?;
    select_count(r, n_current, requested_count(ratio, n_current), min_filters, pair_dedup)
        .map(|mut sel| {
            sel.ratio_used = ratio;
            sel
        })
}

/// Selects up to `requested` filters from the front of the ranking, never
/// leaving fewer than `min_filters` behind.
///
/// With `pair_dedup` (greedy rankings only) a filter is passed over when it
/// is the recorded nearest neighbour of an already selected filter, so one
/// member of every near-duplicate pair survives.
pub fn select_count(
    r: &Ranking,
    n_current: usize,
    requested: usize,
    min_filters: usize,
    pair_dedup: bool,
) -> Result<PruneSelection> {
    if min_filters == 0 {
        return Err(Error::invalid("min_filters", "must be at least 1"));
    }
    if r.order.len() != n_current {
        return Err(Error::LengthMismatch {
            left: r.order.len(),
            right: n_current,
        });
    }
    let room = n_current.saturating_sub(min_filters);
    let target = requested.min(room);
    let ratio_used = if n_current == 0 {
        0.0
    } else {
        requested as f64 / n_current as f64
    };
    let mut sel = PruneSelection::empty(0, ratio_used);
    sel.floor_applied = target < requested;
    if target == 0 {
        return Ok(sel);
    }

    let nearest = match (&r.nearest, pair_dedup && r.method == RankMethod::Greedy) {
        (Some(nn), true) => Some(nn),
        _ => None,
    };
    let mut protected = vec![false; n_current];
    for &f in &r.order {
        if sel.indices.len() == target {
            break;
        }
        if protected[f] {
            continue;
        }
        sel.indices.push(f);
        if let Some(nn) = nearest {
            protected[nn[f]] = true;
        }
    }
    sel.indices.sort_unstable();
    Ok(sel)
}
