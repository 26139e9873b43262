//! The benchmark data-generating process.
//!
//! ```text
//! V ~ N(0, I_4)
//! A | V ~ N(lambda(V), 1),   lambda(V) = 1 + 0.2 V1 + 0.2 V2 - 0.2 V3 + 0.3 V4
//! S ~ N(0, I_2)                          (independent surrogates)
//! S | A, V ~ N((V1 + A, V2 - A), I_2)     (dependent surrogates)
//! R ~ Bernoulli(label_rate)
//! Y | A, X, R = 1 ~ N(mu(A, X), 1)
//! mu(A, X) = 1 + 0.1 S1 - 0.1 S2 + 0.2 V1 + 0.2 V2 + 0.3 V3 - 0.1 V4
//!            + A (1 - 0.1 V1 + 0.1 V3) - A^2
//! ```
//!
//! `tau(a, v)` is `mu` at `S = E[S | A = a, V = v]`, so the curve is
//! `1 + a - a^2` with independent surrogates and `1 + 1.2 a - a^2` with
//! dependent ones. `A` is marginally `N(1, 1.21)` in both variants.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::data::Dataset;
use crate::nuisance::{normal_pdf, NormalLocation, NuisanceBundle};
use crate::smoother::Kernel;

pub const P: usize = 4;
pub const Q: usize = 2;
pub const TREATMENT_MEAN: f64 = 1.0;
pub const TREATMENT_VAR: f64 = 1.21;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DgpVariant {
    #[default]
    IndependentSurrogates,
    DependentSurrogates,
}

impl DgpVariant {
    pub fn name(self) -> &'static str {
        match self {
            DgpVariant::IndependentSurrogates => "independent_surrogates",
            DgpVariant::DependentSurrogates => "dependent_surrogates",
        }
    }

    /// `E[S | A = a, V = v]`.
    pub fn surrogate_mean(self, a: f64, v: &[f64]) -> [f64; 2] {
        match self {
            DgpVariant::IndependentSurrogates => [0.0, 0.0],
            DgpVariant::DependentSurrogates => [v[0] + a, v[1] - a],
        }
    }

    /// The dose-response curve under this variant.
    pub fn theta(self, a: f64) -> f64 {
        match self {
            DgpVariant::IndependentSurrogates => true_theta(a),
            DgpVariant::DependentSurrogates => 1.0 + 1.2 * a - a * a,
        }
    }
}

impl fmt::Display for DgpVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DgpVariant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "independent_surrogates" | "independent" => Ok(DgpVariant::IndependentSurrogates),
            "dependent_surrogates" | "dependent" => Ok(DgpVariant::DependentSurrogates),
            other => Err(format!("unknown dgp variant '{other}'")),
        }
    }
}

/// `theta(a) = 1 + a - a^2`.
pub fn true_theta(a: f64) -> f64 {
    1.0 + a - a * a
}

pub fn lambda(v: &[f64]) -> f64 {
    1.0 + 0.2 * v[0] + 0.2 * v[1] - 0.2 * v[2] + 0.3 * v[3]
}

/// `mu(a, x)` with `x = (V1..V4, S1, S2)`.
pub fn true_mu(a: f64, x: &[f64]) -> f64 {
    let (v, s) = x.split_at(P);
    1.0 + 0.1 * s[0] - 0.1 * s[1] + 0.2 * v[0] + 0.2 * v[1] + 0.3 * v[2] - 0.1 * v[3]
        + a * (1.0 - 0.1 * v[0] + 0.1 * v[2])
        - a * a
}

pub fn true_tau(variant: DgpVariant, a: f64, v: &[f64]) -> f64 {
    let s = variant.surrogate_mean(a, v);
    let x = [v[0], v[1], v[2], v[3], s[0], s[1]];
    true_mu(a, &x)
}

/// Marginal treatment density, `N(1, 1.21)`.
pub fn marginal_density(a: f64) -> f64 {
    normal_pdf(a, TREATMENT_MEAN, TREATMENT_VAR.sqrt())
}

/// The exact nuisance functions of the process.
pub fn truth_bundle(variant: DgpVariant, label_rate: f64) -> NuisanceBundle {
    NuisanceBundle::new(
        Arc::new(true_mu),
        Arc::new(move |a, v| true_tau(variant, a, v)),
        Arc::new(move |_, _| label_rate),
        Arc::new(NormalLocation {
            mean: lambda,
            sd: 1.0,
        }),
        Arc::new(marginal_density),
    )
    .with_affine_tau(true)
}

/// Draws `n` rows with labels `Bernoulli(label_rate)`; returns the dataset and
/// the true nuisance bundle.
pub fn dgp_sample<R: Rng + ?Sized>(
    n: usize,
    variant: DgpVariant,
    label_rate: f64,
    rng: &mut R,
) -> (Dataset, NuisanceBundle) {
    let mut cov = Vec::with_capacity(n * P);
    let mut sur = Vec::with_capacity(n * Q);
    let mut a = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut x = [0.0; P + Q];
    for _ in 0..n {
        for xk in x.iter_mut().take(P) {
            *xk = rng.sample(StandardNormal);
        }
        let ai = lambda(&x[..P]) + rng.sample::<f64, _>(StandardNormal);
        let sm = variant.surrogate_mean(ai, &x[..P]);
        x[P] = sm[0] + rng.sample::<f64, _>(StandardNormal);
        x[P + 1] = sm[1] + rng.sample::<f64, _>(StandardNormal);
        let labeled = rng.random::<f64>() < label_rate;
        let yi = true_mu(ai, &x) + rng.sample::<f64, _>(StandardNormal);
        cov.extend_from_slice(&x[..P]);
        sur.extend_from_slice(&x[P..]);
        a.push(ai);
        y.push(labeled.then_some(yi));
    }
    let data = Dataset::from_parts(&cov, P, &sur, Q, a, y)
        .expect("generated rows are finite and consistently sized");
    (data, truth_bundle(variant, label_rate))
}

/// Population version of the local linear fit of `E[phi | A] = theta(A)` at
/// `a`: the smoothed curve `theta_bar(a)` that confidence intervals cover.
pub fn smoothed_target(variant: DgpVariant, a: f64, h: f64, kernel: Kernel) -> f64 {
    let half = kernel.support().unwrap_or(9.0);
    let panels = 4000;
    let step = 2.0 * half / panels as f64;
    let mut m = [0.0; 3];
    let mut r = [0.0; 2];
    for i in 0..=panels {
        let u = -half + i as f64 * step;
        let wt = if i == 0 || i == panels {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        let t = a + h * u;
        let k = wt * kernel.eval(u) * marginal_density(t);
        let th = variant.theta(t);
        m[0] += k;
        m[1] += k * u;
        m[2] += k * u * u;
        r[0] += k * th;
        r[1] += k * u * th;
    }
    (m[2] * r[0] - m[1] * r[1]) / (m[0] * m[2] - m[1] * m[1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn printed_values() {
        assert_eq!(lambda(&[0.0; 4]), 1.0);
        assert_eq!(true_mu(1.0, &[0.0; 6]), 1.0);
        assert_eq!(true_theta(0.0), 1.0);
        assert_eq!(true_theta(1.0), 1.0);
        assert_eq!(true_theta(0.5), 1.25);
    }

    #[test]
    fn tau_integrates_surrogates_out() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = [0.3, -0.7, 1.1, 0.2];
        let a = 0.8;
        for variant in [DgpVariant::IndependentSurrogates, DgpVariant::DependentSurrogates] {
            let m = 200_000;
            let mut acc = 0.0;
            for _ in 0..m {
                let sm = variant.surrogate_mean(a, &v);
                let s1 = sm[0] + rng.sample::<f64, _>(StandardNormal);
                let s2 = sm[1] + rng.sample::<f64, _>(StandardNormal);
                acc += true_mu(a, &[v[0], v[1], v[2], v[3], s1, s2]);
            }
            // Var(0.1 S1 - 0.1 S2) = 0.02
            let se = (0.02f64 / m as f64).sqrt();
            assert!((acc / m as f64 - true_tau(variant, a, &v)).abs() < 4.0 * se);
        }
    }

    #[test]
    fn curves_are_averages_of_tau() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = 200_000;
        for variant in [DgpVariant::IndependentSurrogates, DgpVariant::DependentSurrogates] {
            let mut acc = 0.0;
            let mut acc2 = 0.0;
            for _ in 0..m {
                let v: Vec<f64> = (0..4).map(|_| rng.sample(StandardNormal)).collect();
                let t = true_tau(variant, 0.7, &v);
                acc += t;
                acc2 += t * t;
            }
            let mean = acc / m as f64;
            let sd = (acc2 / m as f64 - mean * mean).sqrt();
            assert!((mean - variant.theta(0.7)).abs() < 4.0 * sd / (m as f64).sqrt());
        }
    }

    #[test]
    fn smoothed_target_of_quadratic() {
        // a tiny bandwidth recovers theta, and the bias is negative for a
        // concave curve
        let v = DgpVariant::IndependentSurrogates;
        assert!((smoothed_target(v, 1.0, 1e-3, Kernel::Epanechnikov) - 1.0).abs() < 1e-6);
        let b = smoothed_target(v, 1.0, 0.5, Kernel::Epanechnikov);
        assert!(b < 1.0 && b > 1.0 - 0.2 * 0.25 - 0.01, "{b}");
    }

    #[test]
    fn sample_is_reproducible() {
        let (d1, _) = dgp_sample(50, DgpVariant::DependentSurrogates, 0.5, &mut ChaCha8Rng::seed_from_u64(3));
        let (d2, _) = dgp_sample(50, DgpVariant::DependentSurrogates, 0.5, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(d1, d2);
        assert_eq!(d1.p(), 4);
        assert_eq!(d1.q(), 2);
    }
}
