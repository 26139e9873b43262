//! Local linear kernel smoothing and bandwidth selection.

mod kernel;
mod local_linear;
mod loocv;

pub use kernel::Kernel;
pub use local_linear::{
    local_linear_or_fallback, local_linear_point, self_weight, smoother_weights, LocalLinearFit,
    DET_FLOOR,
};
pub use loocv::{
    loocv_bandwidth, loocv_scores, select_bandwidth, Infeasible, LoocvScore, SortedPoints,
    SELF_WEIGHT_TOL,
};

use crate::error::{Error, Result};

/// How the bandwidth is chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum BandwidthPolicy {
    Fixed(f64),
    /// `count` geometric points from `lo * range(A)` to `hi * range(A)`.
    Geometric { lo: f64, hi: f64, count: usize },
    /// Explicit candidate list in treatment units.
    Grid(Vec<f64>),
}

impl Default for BandwidthPolicy {
    fn default() -> Self {
        BandwidthPolicy::Geometric {
            lo: 0.05,
            hi: 1.0,
            count: 20,
        }
    }
}

impl BandwidthPolicy {
    /// Candidate list for treatments spanning `range`.
    pub fn candidates(&self, range: f64) -> Result<Vec<f64>> {
        let grid = match self {
            BandwidthPolicy::Fixed(h) => vec![*h],
            BandwidthPolicy::Geometric { lo, hi, count } => {
                if !(*lo > 0.0 && hi >= lo) || *count == 0 {
                    return Err(Error::Bandwidth(format!(
                        "invalid geometric grid {lo}:{hi}:{count}"
                    )));
                }
                geometric_grid(lo * range, hi * range, *count)
            }
            BandwidthPolicy::Grid(g) => g.clone(),
        };
        if grid.is_empty() {
            return Err(Error::Bandwidth("empty bandwidth grid".into()));
        }
        if let Some(h) = grid.iter().find(|h| !(**h > 0.0 && h.is_finite())) {
            return Err(Error::Bandwidth(format!(
                "bandwidth candidates must be positive, got {h}"
            )));
        }
        Ok(grid)
    }

    pub fn is_fixed(&self) -> bool {
        matches!(self, BandwidthPolicy::Fixed(_))
    }
}

impl std::fmt::Display for BandwidthPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BandwidthPolicy::Fixed(h) => write!(f, "{h}"),
            BandwidthPolicy::Geometric { lo, hi, count } => write!(f, "geom:{lo}:{hi}:{count}"),
            BandwidthPolicy::Grid(g) => {
                let s: Vec<String> = g.iter().map(|h| h.to_string()).collect();
                write!(f, "{}", s.join(","))
            }
        }
    }
}

/// `count` points from `lo` to `hi`, equally spaced on the log scale.
pub fn geometric_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    let ratio = hi / lo;
    (0..count)
        .map(|i| {
            if i + 1 == count {
                hi
            } else {
                lo * ratio.powf(i as f64 / (count - 1) as f64)
            }
        })
        .collect()
}

/// Chooses `h` for `(treatments, values)` under `policy`. A fixed policy is
/// returned as is.
pub fn choose_bandwidth(
    treatments: &[f64],
    values: &[f64],
    policy: &BandwidthPolicy,
    kernel: Kernel,
) -> Result<f64> {
    if let BandwidthPolicy::Fixed(h) = policy {
        return Ok(*h);
    }
    let range = range_of(treatments);
    let grid = policy.candidates(range)?;
    loocv_bandwidth(treatments, values, &grid, kernel)
}

pub(crate) fn range_of(xs: &[f64]) -> f64 {
    let (lo, hi) = xs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &x| (l.min(x), h.max(x)));
    if lo.is_finite() {
        hi - lo
    } else {
        0.0
    }
}
