//! Dose-response estimators: the plug-in average of `tau`, the doubly robust
//! pseudo-outcome regression with cross-fitting, the oracle smoother of true
//! pseudo-outcomes, and the supervised (labeled-only) variant.
//!
//! Confidence intervals from [`DoseResponseEstimate`] cover the smoothed
//! curve `theta_bar(a)`, i.e. `theta(a)` plus the `h^2` smoothing bias of the
//! local linear fit. No bias correction is attempted.

mod crossfit;
mod pseudo;
mod table;

use std::fmt;
use std::str::FromStr;

pub use crossfit::{
    crossfit_plugin_estimate, dr_estimate, dr_estimate_with, selection_pseudo_outcomes, smooth_on_fold, supervised_estimate, two_fold_dr_estimate,
    EstimationConfig, FoldSmoothing, SmoothingOptions,
};
pub use table::{
    load_estimate_csv, read_estimate_csv, save_estimate_csv, write_estimate_csv, ESTIMATE_COLUMNS,
};
pub use pseudo::{influence_se, pseudo_outcomes, InitialEstimate, PseudoOutcomeSet};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nuisance::{ClipCounts, PointFn};
use crate::smoother::{local_linear_point, Kernel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Plugin,
    Dr,
    Oracle,
    Supervised,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Plugin => "plugin",
            Method::Dr => "dr",
            Method::Oracle => "oracle",
            Method::Supervised => "supervised",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "plugin" | "plug-in" => Ok(Method::Plugin),
            "dr" => Ok(Method::Dr),
            "oracle" => Ok(Method::Oracle),
            "supervised" => Ok(Method::Supervised),
            other => Err(format!("unknown method '{other}'")),
        }
    }
}

/// Two-sided normal quantile `z_{1 - (1 - level)/2}` for the supported levels.
pub fn z_value(level: f64) -> Result<f64> {
    const TABLE: [(f64, f64); 3] = [(0.90, 1.644854), (0.95, 1.959964), (0.99, 2.575829)];
    TABLE
        .iter()
        .find(|(l, _)| (l - level).abs() < 1e-9)
        .map(|(_, z)| *z)
        .ok_or_else(|| Error::Config(format!("ci level must be 0.90, 0.95 or 0.99, got {level}")))
}

/// An estimated curve on a grid of treatment values.
#[derive(Debug, Clone, PartialEq)]
pub struct DoseResponseEstimate {
    pub method: Method,
    pub grid: Vec<f64>,
    pub theta_hat: Vec<f64>,
    /// Standard errors; present for `dr`, `oracle` and `supervised`.
    pub se: Option<Vec<f64>>,
    pub ci_level: f64,
    pub ci_lower: Option<Vec<f64>>,
    pub ci_upper: Option<Vec<f64>>,
    /// Bandwidth per cross-fitting rotation (empty for the plug-in).
    pub bandwidths: Vec<f64>,
    /// Points with positive kernel weight, summed over rotations (for the
    /// plug-in, the number of rows averaged).
    pub n_effective: Vec<usize>,
    /// Grid points where some rotation fell back to the kernel-weighted mean.
    pub fallback: Vec<bool>,
    pub clip_counts: ClipCounts,
}

impl DoseResponseEstimate {
    pub fn new(method: Method, grid: Vec<f64>, theta_hat: Vec<f64>) -> Self {
        let k = grid.len();
        DoseResponseEstimate {
            method,
            grid,
            theta_hat,
            se: None,
            ci_level: 0.95,
            ci_lower: None,
            ci_upper: None,
            bandwidths: Vec::new(),
            n_effective: vec![0; k],
            fallback: vec![false; k],
            clip_counts: ClipCounts::default(),
        }
    }

    /// Attaches standard errors and the matching symmetric intervals.
    pub fn with_se(mut self, se: Vec<f64>, level: f64) -> Result<Self> {
        let z = z_value(level)?;
        self.ci_lower = Some(self.theta_hat.iter().zip(&se).map(|(t, s)| t - z * s).collect());
        self.ci_upper = Some(self.theta_hat.iter().zip(&se).map(|(t, s)| t + z * s).collect());
        self.se = Some(se);
        self.ci_level = level;
        Ok(self)
    }

    /// Mean bandwidth over rotations.
    pub fn bandwidth(&self) -> Option<f64> {
        if self.bandwidths.is_empty() {
            None
        } else {
            Some(self.bandwidths.iter().sum::<f64>() / self.bandwidths.len() as f64)
        }
    }

    /// Estimate at the grid point closest to `a`.
    pub fn at(&self, a: f64) -> Option<f64> {
        self.index_of(a).map(|i| self.theta_hat[i])
    }

    pub fn index_of(&self, a: f64) -> Option<usize> {
        (0..self.grid.len()).min_by(|&i, &j| {
            (self.grid[i] - a).abs().total_cmp(&(self.grid[j] - a).abs())
        })
    }
}

/// Quantile with linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// `points` equally spaced values between the 5th and 95th percentiles of the
/// treatments.
pub fn default_grid(treatments: &[f64], points: usize) -> Result<Vec<f64>> {
    if treatments.is_empty() {
        return Err(Error::Size("cannot build a grid from no treatments".into()));
    }
    if points == 0 {
        return Err(Error::Config("grid needs at least one point".into()));
    }
    let mut s = treatments.to_vec();
    s.sort_by(f64::total_cmp);
    let (lo, hi) = (quantile(&s, 0.05), quantile(&s, 0.95));
    Ok(linspace(lo, hi, points))
}

pub fn linspace(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    if points == 1 {
        return vec![(lo + hi) / 2.0];
    }
    (0..points)
        .map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64)
        .collect()
}

/// `theta(a) = mean_i tau(a, V_i)` over every row.
pub fn plugin_estimate(tau: &PointFn, data: &Dataset, grid: &[f64]) -> DoseResponseEstimate {
    let rows: Vec<usize> = (0..data.n()).collect();
    plugin_on_rows(tau, data, &rows, grid)
}

pub(crate) fn plugin_on_rows(
    tau: &PointFn,
    data: &Dataset,
    rows: &[usize],
    grid: &[f64],
) -> DoseResponseEstimate {
    let theta = grid
        .iter()
        .map(|&a| rows.iter().map(|&i| tau(a, data.v(i))).sum::<f64>() / rows.len() as f64)
        .collect();
    let mut est = DoseResponseEstimate::new(Method::Plugin, grid.to_vec(), theta);
    est.n_effective = vec![rows.len(); grid.len()];
    est
}

/// `initial_estimate(tau, D2, a) = mean_{i in D2} tau(a, V_i)`.
pub fn initial_estimate(tau: &PointFn, data: &Dataset, rows: &[usize], a: f64) -> Result<f64> {
    Ok(InitialEstimate::new(tau.clone(), false, data, rows)?.eval(a))
}

/// Local linear regression of supplied (true) pseudo-outcomes.
pub fn oracle_estimate(
    true_phi: &[f64],
    treatments: &[f64],
    a: f64,
    h: f64,
    kernel: Kernel,
) -> Result<f64> {
    Ok(local_linear_point(treatments, true_phi, a, h, kernel)?.estimate())
}
