//! Nuisance functions and the bundle the estimator consumes:
//!
//! * `mu(a, x)`  outcome regression among labeled rows, `E[Y | A, X, R = 1]`
//! * `tau(a, v)` `mu` further regressed on `(A, V)`
//! * `rho(a, x)` labeling propensity `P(R = 1 | A, X)`
//! * `pi(a | v)` conditional treatment density
//! * `f(a)`      marginal treatment density
//! * `w(a, v)`   stabilized weight `f(a) / pi(a | v)`
//!
//! Fitted components are immutable and cheap to clone (`Arc`), so a bundle
//! can be evaluated from many threads at once.

mod features;
mod fit;
mod oracle;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

pub use features::{FeatureMap, Interactions};
pub use fit::{
    estimate_marginal_density, fit_conditional_density, fit_label_propensity,
    fit_outcome_regression, fit_tau, make_stabilized_weight, GaussianLinearDensity,
    LinearRegressionFit, LogisticFit, MarginalDensity, NuisanceLearner, ParametricLearner,
};
pub use oracle::{oracle_noisy_bundle, NoiseDraws};

/// A fitted function of `(a, covariate row)`.
pub type PointFn = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;
/// A fitted function of `a` alone.
pub type CurveFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

pub const DEFAULT_CLIP_RHO_MIN: f64 = 0.01;
pub const DEFAULT_CLIP_W_MAX: f64 = 50.0;
/// Floor applied to `pi` before it divides `f`.
pub const PI_FLOOR: f64 = 1e-12;

/// Conditional density of the treatment given covariates.
pub trait ConditionalDensity: Send + Sync {
    fn density(&self, a: f64, v: &[f64]) -> f64;

    /// `(mean, sd)` when the density at `v` is Normal; lets callers hoist
    /// per-row work out of tight loops.
    fn normal_params(&self, _v: &[f64]) -> Option<(f64, f64)> {
        None
    }
}

/// A Normal density with covariate-dependent mean and fixed variance.
pub struct NormalLocation<M> {
    pub mean: M,
    pub sd: f64,
}

impl<M> ConditionalDensity for NormalLocation<M>
where
    M: Fn(&[f64]) -> f64 + Send + Sync,
{
    fn density(&self, a: f64, v: &[f64]) -> f64 {
        normal_pdf(a, (self.mean)(v), self.sd)
    }

    fn normal_params(&self, v: &[f64]) -> Option<(f64, f64)> {
        Some(((self.mean)(v), self.sd))
    }
}

#[inline]
pub fn normal_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
    let z = (x - mean) / sd;
    INV_SQRT_2PI / sd * (-0.5 * z * z).exp()
}

/// Running counts of how often clipping bounds were hit.
#[derive(Debug, Default)]
pub struct ClipCounters {
    rho_floor: AtomicU64,
    w_cap: AtomicU64,
    pi_floor: AtomicU64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ClipCounts {
    pub rho_floor: u64,
    pub w_cap: u64,
    pub pi_floor: u64,
}

impl std::ops::Add for ClipCounts {
    type Output = ClipCounts;
    fn add(self, o: ClipCounts) -> ClipCounts {
        ClipCounts {
            rho_floor: self.rho_floor + o.rho_floor,
            w_cap: self.w_cap + o.w_cap,
            pi_floor: self.pi_floor + o.pi_floor,
        }
    }
}

impl ClipCounters {
    pub fn snapshot(&self) -> ClipCounts {
        ClipCounts {
            rho_floor: self.rho_floor.load(Ordering::Relaxed),
            w_cap: self.w_cap.load(Ordering::Relaxed),
            pi_floor: self.pi_floor.load(Ordering::Relaxed),
        }
    }
}

/// `min(f / max(pi, PI_FLOOR), cap)`.
#[inline]
pub fn stabilized_weight(f: f64, pi: f64, cap: f64) -> (f64, bool, bool) {
    let floored = pi < PI_FLOOR;
    let raw = f / pi.max(PI_FLOOR);
    let capped = raw > cap;
    (raw.min(cap), floored, capped)
}

/// All nuisance estimates needed to build pseudo-outcomes, plus the clipping
/// constants applied at evaluation time.
#[derive(Clone)]
pub struct NuisanceBundle {
    pub mu: PointFn,
    pub tau: PointFn,
    /// Unclipped propensity; use [`NuisanceBundle::rho`] to evaluate.
    pub rho_raw: PointFn,
    pub pi: Arc<dyn ConditionalDensity>,
    pub f: CurveFn,
    pub clip_rho_min: f64,
    pub clip_w_max: f64,
    /// `tau(a, v)` is affine in `v` for fixed `a`, so averages over rows
    /// can be taken inside: `mean_i tau(a, V_i) = tau(a, mean_i V_i)`.
    pub tau_affine_in_v: bool,
    counters: Arc<ClipCounters>,
}

impl NuisanceBundle {
    pub fn new(
        mu: PointFn,
        tau: PointFn,
        rho_raw: PointFn,
        pi: Arc<dyn ConditionalDensity>,
        f: CurveFn,
    ) -> Self {
        NuisanceBundle {
            mu,
            tau,
            rho_raw,
            pi,
            f,
            clip_rho_min: DEFAULT_CLIP_RHO_MIN,
            clip_w_max: DEFAULT_CLIP_W_MAX,
            tau_affine_in_v: false,
            counters: Arc::new(ClipCounters::default()),
        }
    }

    pub fn with_clipping(mut self, clip_rho_min: f64, clip_w_max: f64) -> Self {
        self.clip_rho_min = clip_rho_min;
        self.clip_w_max = clip_w_max;
        self
    }

    pub fn with_affine_tau(mut self, affine: bool) -> Self {
        self.tau_affine_in_v = affine;
        self
    }

    /// Same bundle with a different marginal density and fresh counters.
    pub fn with_marginal(&self, f: CurveFn) -> Self {
        NuisanceBundle {
            f,
            counters: Arc::new(ClipCounters::default()),
            ..self.clone()
        }
    }

    #[inline]
    pub fn mu(&self, a: f64, x: &[f64]) -> f64 {
        (self.mu)(a, x)
    }

    #[inline]
    pub fn tau(&self, a: f64, v: &[f64]) -> f64 {
        (self.tau)(a, v)
    }

    /// Propensity clipped into `[clip_rho_min, 1]`.
    #[inline]
    pub fn rho(&self, a: f64, x: &[f64]) -> f64 {
        let r = (self.rho_raw)(a, x);
        if r < self.clip_rho_min {
            self.counters.rho_floor.fetch_add(1, Ordering::Relaxed);
            self.clip_rho_min
        } else {
            r.min(1.0)
        }
    }

    #[inline]
    pub fn pi(&self, a: f64, v: &[f64]) -> f64 {
        self.pi.density(a, v)
    }

    #[inline]
    pub fn f(&self, a: f64) -> f64 {
        (self.f)(a)
    }

    #[inline]
    pub fn w(&self, a: f64, v: &[f64]) -> f64 {
        self.w_given_f(self.f(a), a, v)
    }

    /// Stabilized weight when `f(a)` has already been evaluated.
    #[inline]
    pub fn w_given_f(&self, f_at_a: f64, a: f64, v: &[f64]) -> f64 {
        let (w, floored, capped) = stabilized_weight(f_at_a, self.pi(a, v), self.clip_w_max);
        if floored {
            self.counters.pi_floor.fetch_add(1, Ordering::Relaxed);
        }
        if capped {
            self.counters.w_cap.fetch_add(1, Ordering::Relaxed);
        }
        w
    }

    pub fn clip_counts(&self) -> ClipCounts {
        self.counters.snapshot()
    }
}

impl std::fmt::Debug for NuisanceBundle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NuisanceBundle")
            .field("clip_rho_min", &self.clip_rho_min)
            .field("clip_w_max", &self.clip_w_max)
            .field("clips", &self.clip_counts())
            .finish_non_exhaustive()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bundle(rho: f64, f: f64, pi: f64) -> NuisanceBundle {
        NuisanceBundle::new(
            Arc::new(|_, _| 0.0),
            Arc::new(|_, _| 0.0),
            Arc::new(move |_, _| rho),
            Arc::new(NormalLocation {
                mean: move |_: &[f64]| 0.0,
                sd: 1.0 / (pi * (2.0 * std::f64::consts::PI).sqrt()),
            }),
            Arc::new(move |_| f),
        )
    }

    #[test]
    fn weight_arithmetic_and_cap() {
        // pi evaluated at its mode equals the requested value
        let b = bundle(0.5, 0.2, 0.4).with_clipping(0.01, 3.0);
        assert!((b.w(0.0, &[]) - 0.5).abs() < 1e-12);
        let b = bundle(0.5, 0.1, 0.02).with_clipping(0.01, 3.0);
        assert_eq!(b.w(0.0, &[]), 3.0);
        assert_eq!(b.clip_counts().w_cap, 1);
    }

    #[test]
    fn rho_is_floored() {
        let b = bundle(0.001, 0.2, 0.4).with_clipping(0.05, 50.0);
        assert_eq!(b.rho(0.0, &[]), 0.05);
        assert_eq!(b.clip_counts().rho_floor, 1);
        let b = bundle(1.2, 0.2, 0.4);
        assert_eq!(b.rho(0.0, &[]), 1.0);
    }

    #[test]
    fn pi_floor_prevents_division_by_zero() {
        let (w, floored, capped) = stabilized_weight(0.3, 0.0, 50.0);
        assert!(floored && capped);
        assert_eq!(w, 50.0);
    }
}
