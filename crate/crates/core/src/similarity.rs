//! Pairwise filter distances and the self-similarity matrix (SSM).
//!
//! Entries follow distance semantics: a low value means two filters are
//! alike. All reductions run in `f64`; the matrix stores `f32`.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::linalg::{Exec, Scalar};
use crate::tensor::{FilterSet, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MetricKind {
    L2,
    Cosine,
    Cityblock,
    KLDivergence,
}

impl MetricKind {
    pub const ALL: [MetricKind; 4] = [
        MetricKind::L2,
        MetricKind::Cosine,
        MetricKind::Cityblock,
        MetricKind::KLDivergence,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MetricKind::L2 => "l2",
            MetricKind::Cosine => "cosine",
            MetricKind::Cityblock => "cityblock",
            MetricKind::KLDivergence => "kl",
        }
    }

    /// Whether `distance(x, y) == distance(y, x)` holds bit-exactly.
    pub fn is_symmetric(self) -> bool {
        self != MetricKind::KLDivergence
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "l2" => Ok(MetricKind::L2),
            "cosine" => Ok(MetricKind::Cosine),
            "cityblock" => Ok(MetricKind::Cityblock),
            "kl" => Ok(MetricKind::KLDivergence),
            other => Err(Error::invalid(
                "metric",
                format!("unknown metric {other:?} (expected l2, cosine, cityblock or kl)"),
            )),
        }
    }
}

/// Softmax with max-subtraction; every component is strictly positive.
pub fn normalize_for_kl<T: Scalar>(x: &[T]) -> Vec<f64> {
    let max = x.iter().map(|v| v.f64()).fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| (v.f64() - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| (e / total).max(f64::MIN_POSITIVE)).collect()
}

fn check_pair<T>(x: &[T], y: &[T]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.is_empty() {
        return Err(Error::EmptyVector);
    }
    Ok(())
}

fn l2<T: Scalar>(x: &[T], y: &[T]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(a, b)| {
            let d = a.f64() - b.f64();
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

fn cityblock<T: Scalar>(x: &[T], y: &[T]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a.f64() - b.f64()).abs()).sum()
}

fn cosine<T: Scalar>(x: &[T], y: &[T]) -> f64 {
    let (mut dot, mut nx, mut ny) = (0.0f64, 0.0f64, 0.0f64);
    for (a, b) in x.iter().zip(y) {
        let (a, b) = (a.f64(), b.f64());
        dot += a * b;
        nx += a * a;
        ny += b * b;
    }
    match (nx == 0.0, ny == 0.0) {
        (true, true) => 0.0,
        (true, false) | (false, true) => 1.0,
        // sqrt(a·a) == a exactly, so identical vectors give exactly 0.
        _ => (1.0 - dot / (nx * ny).sqrt()).clamp(0.0, 2.0),
    }
}

fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(&pi, &qi)| pi * (pi / qi).ln())
        .sum::<f64>()
        .max(0.0)
}

pub fn distance<T: Scalar>(metric: MetricKind, x: &[T], y: &[T]) -> Result<f64> {
    check_pair(x, y)?;
    Ok(match metric {
        MetricKind::L2 => l2(x, y),
        MetricKind::Cosine => cosine(x, y),
        MetricKind::Cityblock => cityblock(x, y),
        MetricKind::KLDivergence => kl(&normalize_for_kl(x), &normalize_for_kl(y)),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    metric: MetricKind,
    values: Matrix<f32>,
}

impl SimilarityMatrix {
    /// Wraps an existing square matrix, e.g. one produced elsewhere.
    pub fn from_values(metric: MetricKind, values: Matrix<f32>) -> Result<Self> {
        if values.rows() != values.cols() {
            return Err(Error::ShapeMismatch(format!(
                "similarity matrix must be square, got {}x{}",
                values.rows(),
                values.cols()
            )));
        }
        Ok(SimilarityMatrix { metric, values })
    }

    pub fn n(&self) -> usize {
        self.values.rows()
    }

    pub fn metric(&self) -> MetricKind {
        self.metric
    }

    pub fn values(&self) -> &Matrix<f32> {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.values.get(i, j)
    }

    pub fn row(&self, i: usize) -> &[f32] {
        self.values.row(i)
    }
}

pub fn build_ssm<T: Scalar>(fs: &FilterSet<T>, metric: MetricKind) -> Result<SimilarityMatrix> {
    build_ssm_with(fs, metric, Exec::Sequential)
}

/// Builds the SSM; rows are independent, so `Exec::Parallel` gives the
/// same matrix bit for bit.
pub fn build_ssm_with<T: Scalar>(
    fs: &FilterSet<T>,
    metric: MetricKind,
    exec: Exec,
) -> Result<SimilarityMatrix> {
    let n = fs.n();
    if n < 2 {
        return Err(Error::TooFewFilters(n));
    }
    let mut values = vec![0.0f32; n * n];

    if metric.is_symmetric() {
        // Upper triangle only, mirrored below.
        crate::linalg::for_each_chunk(exec, &mut values, n, |i, row| {
            let xi = fs.filter(i);
            for (j, out) in row.iter_mut().enumerate().skip(i + 1) {
                let d = match metric {
                    MetricKind::L2 => l2(xi, fs.filter(j)),
                    MetricKind::Cosine => cosine(xi, fs.filter(j)),
                    _ => cityblock(xi, fs.filter(j)),
                };
                *out = d as f32;
            }
        });
        for i in 0..n {
            for j in 0..i {
                values[i * n + j] = values[j * n + i];
            }
        }
    } else {
        let probs: Vec<Vec<f64>> = (0..n).map(|i| normalize_for_kl(fs.filter(i))).collect();
        crate::linalg::for_each_chunk(exec, &mut values, n, |i, row| {
            for (j, out) in row.iter_mut().enumerate() {
                *out = kl(&probs[i], &probs[j]) as f32;
            }
        });
    }

    Ok(SimilarityMatrix {
        metric,
        values: Matrix::new(n, n, values)?,
    })
}
