//! Monte Carlo summaries with a deterministic reduction order.

use crate::error::{Error, Result};
use serde::{Serialize, Serializer};

/// Serializes non-finite diagnostics as JSON `null` instead of failing the
/// whole report.
pub fn finite_or_null<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_none()
    }
}

/// Sums a slice with a fixed-shape pairwise tree.
///
/// The shape depends only on the slice length, never on thread scheduling,
/// so reductions over per-path statistics are bit-reproducible.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= 32 {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// One Monte Carlo result: the unit of all statistical outputs.
#[derive(Debug, Clone, Copy, Serialize, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub std_err: f64,
    pub n: usize,
    /// Paths dropped because they produced a non-finite statistic.
    pub n_rejected: usize,
}

impl Estimate {
    /// Builds from raw per-path values; non-finite entries are rejected and
    /// counted. Requires at least two finite values.
    pub fn from_values(values: &[f64]) -> Result<Self> {
        let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
        let n_rejected = values.len() - finite.len();
        if finite.len() < 2 {
            return Err(Error::AllPathsRejected(values.len()));
        }
        let n = finite.len();
        let mean = pairwise_sum(&finite) / n as f64;
        let sq: Vec<f64> = finite.iter().map(|v| (v - mean) * (v - mean)).collect();
        let var = pairwise_sum(&sq) / (n as f64 - 1.0);
        Ok(Self {
            mean,
            std_err: (var / n as f64).sqrt(),
            n,
            n_rejected,
        })
    }

    /// z-score of the difference between two estimates, treating them as
    /// independent.
    pub fn z_score_vs(&self, other: &Estimate) -> f64 {
        let denom = (self.std_err * self.std_err + other.std_err * other.std_err).sqrt();
        if denom == 0.0 {
            if self.mean == other.mean {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (self.mean - other.mean).abs() / denom
        }
    }
}
