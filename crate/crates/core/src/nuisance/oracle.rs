//! Synthetic nuisance estimates with a prescribed error size: each of
//! `lambda`, `mu`, `tau` and `logit(rho)` is offset by one draw
//! `eps_k ~ N(n^-alpha, n^-2alpha)`, fixed for the whole bundle.

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;

use super::{ConditionalDensity, NuisanceBundle};
use crate::linalg::{logit, sigmoid};

/// The four offsets `(eps_lambda, eps_mu, eps_tau, eps_rho)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseDraws {
    pub lambda: f64,
    pub mu: f64,
    pub tau: f64,
    pub rho: f64,
}

impl NoiseDraws {
    pub fn draw<R: Rng + ?Sized>(alpha: f64, n: usize, rng: &mut R) -> Self {
        let scale = (n as f64).powf(-alpha);
        let mut one = || scale + scale * rng.sample::<f64, _>(StandardNormal);
        NoiseDraws {
            lambda: one(),
            mu: one(),
            tau: one(),
            rho: one(),
        }
    }

    /// Applies the offsets to a true bundle. The conditional density is
    /// shifted in location (`Normal(lambda(v) + eps, 1)` for the Gaussian
    /// model) and the marginal moves with it.
    pub fn perturb(&self, truth: &NuisanceBundle) -> NuisanceBundle {
        let d = *self;
        let mu = truth.mu.clone();
        let tau = truth.tau.clone();
        let rho = truth.rho_raw.clone();
        let f = truth.f.clone();
        NuisanceBundle::new(
            Arc::new(move |a, x| mu(a, x) + d.mu),
            Arc::new(move |a, v| tau(a, v) + d.tau),
            Arc::new(move |a, x| {
                let r = rho(a, x).clamp(1e-15, 1.0 - 1e-15);
                sigmoid(logit(r) + d.rho)
            }),
            Arc::new(Shifted {
                inner: truth.pi.clone(),
                shift: d.lambda,
            }),
            Arc::new(move |a| f(a - d.lambda)),
        )
        .with_clipping(truth.clip_rho_min, truth.clip_w_max)
        .with_affine_tau(truth.tau_affine_in_v)
    }
}

struct Shifted {
    inner: Arc<dyn ConditionalDensity>,
    shift: f64,
}

impl ConditionalDensity for Shifted {
    fn density(&self, a: f64, v: &[f64]) -> f64 {
        self.inner.density(a - self.shift, v)
    }

    fn normal_params(&self, v: &[f64]) -> Option<(f64, f64)> {
        self.inner
            .normal_params(v)
            .map(|(m, sd)| (m + self.shift, sd))
    }
}

/// Draws fresh offsets and returns the perturbed bundle.
pub fn oracle_noisy_bundle<R: Rng + ?Sized>(
    truth: &NuisanceBundle,
    alpha: f64,
    n: usize,
    rng: &mut R,
) -> NuisanceBundle {
    NoiseDraws::draw(alpha, n, rng).perturb(truth)
}
