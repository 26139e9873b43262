//! Leave-one-out cross-validation for the bandwidth, using the hat-matrix
//! shortcut
//!
//! ```text
//! CV(h) = sum_i ((phi_i - theta_h(A_i)) / (1 - W_h(A_i)))^2
//! ```
//!
//! where both `theta_h(A_i)` and the self weight `W_h(A_i)` are computed with
//! point `i` in the sample. For compact kernels the window sums are kept as
//! running power moments over points sorted by treatment, so one candidate
//! costs O(n) instead of O(n^2).

use super::local_linear::{kernel_sums, Sums};
use super::Kernel;
use crate::error::{Error, Result};

/// Candidates with `|1 - W_h(A_i)| < SELF_WEIGHT_TOL` at some point are skipped.
pub const SELF_WEIGHT_TOL: f64 = 1e-8;

/// Running moments are rebuilt from scratch after this many shifts.
const REBUILD_EVERY: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Infeasible {
    DegenerateWindow,
    UnitSelfWeight,
    NonFinite,
}

impl std::fmt::Display for Infeasible {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Infeasible::DegenerateWindow => "degenerate window",
            Infeasible::UnitSelfWeight => "self weight at 1",
            Infeasible::NonFinite => "non-finite score",
        })
    }
}

/// Score of one candidate bandwidth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoocvScore {
    pub h: f64,
    pub score: std::result::Result<f64, Infeasible>,
}

impl LoocvScore {
    pub fn is_feasible(&self) -> bool {
        self.score.is_ok()
    }
}

/// Points sorted by treatment, shared across candidates.
pub struct SortedPoints {
    xs: Vec<f64>,
    ys: Vec<f64>,
}

impl SortedPoints {
    pub fn new(treatments: &[f64], values: &[f64]) -> Result<Self> {
        if treatments.len() != values.len() {
            return Err(Error::Size(format!(
                "{} treatments but {} values",
                treatments.len(),
                values.len()
            )));
        }
        let mut idx: Vec<usize> = (0..treatments.len()).collect();
        idx.sort_by(|&i, &j| treatments[i].total_cmp(&treatments[j]));
        Ok(SortedPoints {
            xs: idx.iter().map(|&i| treatments[i]).collect(),
            ys: idx.iter().map(|&i| values[i]).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn score(&self, h: f64, kernel: Kernel) -> LoocvScore {
        let score = if !(h > 0.0 && h.is_finite()) || self.xs.is_empty() {
            Err(Infeasible::DegenerateWindow)
        } else {
            match kernel {
                Kernel::Gaussian => self.score_direct(h, kernel),
                Kernel::Epanechnikov | Kernel::Uniform => self.score_sliding(h, kernel),
            }
        };
        LoocvScore { h, score }
    }

    fn term(&self, i: usize, s: &Sums, k0: f64) -> std::result::Result<f64, Infeasible> {
        if s.is_degenerate() {
            return Err(Infeasible::DegenerateWindow);
        }
        let det = s.det();
        let w_ii = k0 * s.s2 / det;
        let denom = 1.0 - w_ii;
        if denom.abs() < SELF_WEIGHT_TOL {
            return Err(Infeasible::UnitSelfWeight);
        }
        let r = (self.ys[i] - s.intercept()) / denom;
        Ok(r * r)
    }

    fn finish(total: f64) -> std::result::Result<f64, Infeasible> {
        if total.is_finite() {
            Ok(total)
        } else {
            Err(Infeasible::NonFinite)
        }
    }

    fn score_direct(&self, h: f64, kernel: Kernel) -> std::result::Result<f64, Infeasible> {
        let k0 = kernel.eval(0.0);
        let mut total = 0.0;
        for i in 0..self.xs.len() {
            let s = kernel_sums(&self.xs, Some(&self.ys), self.xs[i], h, kernel);
            total += self.term(i, &s, k0)?;
        }
        Self::finish(total)
    }

    fn score_sliding(&self, h: f64, kernel: Kernel) -> std::result::Result<f64, Infeasible> {
        let n = self.xs.len();
        let k0 = kernel.eval(0.0);
        let inside = |x: f64, c: f64| ((x - c) / h).abs() <= 1.0;
        let mut m = Moments::default();
        let (mut lo, mut hi) = (0usize, 0usize);
        let mut since_rebuild = REBUILD_EVERY;
        let mut total = 0.0;
        for i in 0..n {
            let c = self.xs[i];
            let mut fresh = since_rebuild >= REBUILD_EVERY;
            if !fresh {
                m.recenter(c);
            }
            while hi < n && ((self.xs[hi] - c) / h) <= 1.0 {
                if !fresh {
                    m.add(self.xs[hi] - c, self.ys[hi], 1.0);
                }
                hi += 1;
            }
            while lo < hi && !inside(self.xs[lo], c) {
                if !fresh {
                    m.add(self.xs[lo] - c, self.ys[lo], -1.0);
                }
                lo += 1;
            }
            if hi - lo < 2 {
                // too few points to trust cancellation; recompute exactly
                fresh = true;
            }
            if fresh {
                m = Moments::default();
                m.center = c;
                for j in lo..hi {
                    m.add(self.xs[j] - c, self.ys[j], 1.0);
                }
                since_rebuild = 0;
            } else {
                since_rebuild += 1;
            }
            let mut s = m.sums(h, kernel);
            s.count = hi - lo;
            total += self.term(i, &s, k0)?;
        }
        Self::finish(total)
    }
}

/// `P_k = sum d^k` (k = 0..4) and `Q_k = sum d^k y` (k = 0..3) with
/// `d = x - center`.
#[derive(Debug, Default, Clone, Copy)]
struct Moments {
    center: f64,
    p: [f64; 5],
    q: [f64; 4],
}

impl Moments {
    #[inline]
    fn add(&mut self, d: f64, y: f64, sign: f64) {
        let mut dk = sign;
        for k in 0..5 {
            self.p[k] += dk;
            if k < 4 {
                self.q[k] += dk * y;
            }
            dk *= d;
        }
    }

    /// Re-expresses the moments about `c`: `(d - delta)^k` expanded.
    fn recenter(&mut self, c: f64) {
        let delta = c - self.center;
        if delta == 0.0 {
            return;
        }
        const BINOM: [[f64; 5]; 5] = [
            [1.0, 0.0, 0.0, 0.0, 0.0],
            [1.0, 1.0, 0.0, 0.0, 0.0],
            [1.0, 2.0, 1.0, 0.0, 0.0],
            [1.0, 3.0, 3.0, 1.0, 0.0],
            [1.0, 4.0, 6.0, 4.0, 1.0],
        ];
        let mut pow = [1.0; 5];
        for k in 1..5 {
            pow[k] = pow[k - 1] * -delta;
        }
        let (p, q) = (self.p, self.q);
        for k in 0..5 {
            let mut sp = 0.0;
            let mut sq = 0.0;
            for j in 0..=k {
                let c = BINOM[k][j] * pow[k - j];
                sp += c * p[j];
                if k < 4 {
                    sq += c * q[j];
                }
            }
            self.p[k] = sp;
            if k < 4 {
                self.q[k] = sq;
            }
        }
        self.center = c;
    }

    fn sums(&self, h: f64, kernel: Kernel) -> Sums {
        let (p, q) = (&self.p, &self.q);
        let h2 = h * h;
        match kernel {
            Kernel::Epanechnikov => {
                let h3 = h2 * h;
                let h4 = h2 * h2;
                Sums {
                    s0: 0.75 * (p[0] - p[2] / h2),
                    s1: 0.75 * (p[1] / h - p[3] / h3),
                    s2: 0.75 * (p[2] / h2 - p[4] / h4),
                    t0: 0.75 * (q[0] - q[2] / h2),
                    t1: 0.75 * (q[1] / h - q[3] / h3),
                    count: 0,
                }
            }
            Kernel::Uniform => Sums {
                s0: 0.5 * p[0],
                s1: 0.5 * p[1] / h,
                s2: 0.5 * p[2] / h2,
                t0: 0.5 * q[0],
                t1: 0.5 * q[1] / h,
                count: 0,
            },
            Kernel::Gaussian => unreachable!("gaussian windows are unbounded"),
        }
    }
}

/// Scores for every candidate in `grid`, in grid order.
pub fn loocv_scores(
    treatments: &[f64],
    values: &[f64],
    grid: &[f64],
    kernel: Kernel,
) -> Result<Vec<LoocvScore>> {
    let pts = SortedPoints::new(treatments, values)?;
    Ok(grid.iter().map(|&h| pts.score(h, kernel)).collect())
}

/// The feasible candidate with the smallest score; ties go to the smallest h.
pub fn select_bandwidth(scores: &[LoocvScore]) -> Result<f64> {
    let mut best: Option<(f64, f64)> = None;
    for s in scores {
        if let Ok(v) = s.score {
            let better = match best {
                None => true,
                Some((bh, bv)) => v < bv || (v == bv && s.h < bh),
            };
            if better {
                best = Some((s.h, v));
            }
        }
    }
    best.map(|(h, _)| h).ok_or_else(|| {
        Error::Bandwidth(format!(
            "no feasible bandwidth among {} candidates",
            scores.len()
        ))
    })
}

pub fn loocv_bandwidth(
    treatments: &[f64],
    values: &[f64],
    grid: &[f64],
    kernel: Kernel,
) -> Result<f64> {
    if grid.is_empty() {
        return Err(Error::Bandwidth("empty bandwidth grid".into()));
    }
    select_bandwidth(&loocv_scores(treatments, values, grid, kernel)?)
}
