use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nuisance::{ClipCounts, NuisanceBundle, PointFn};
use crate::smoother::LocalLinearFit;

/// Inner sums over treatment values are subsampled to this many points.
pub const INTEGRAL_MAX_POINTS: usize = 2000;

/// `theta0(a) = mean_i tau(a, V_i)` over a captured fold.
#[derive(Clone)]
pub struct InitialEstimate {
    tau: PointFn,
    p: usize,
    /// Row-major `V` of the fold, or its column means when `tau` is affine.
    vs: Vec<f64>,
    averaged: bool,
}

impl InitialEstimate {
    pub fn new(tau: PointFn, affine_in_v: bool, data: &Dataset, rows: &[usize]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Size("initial estimate needs a non-empty fold".into()));
        }
        let p = data.p();
        let vs = if affine_in_v {
            let mut m = vec![0.0; p];
            for &i in rows {
                for (acc, v) in m.iter_mut().zip(data.v(i)) {
                    *acc += v;
                }
            }
            m.iter_mut().for_each(|x| *x /= rows.len() as f64);
            m
        } else {
            rows.iter().flat_map(|&i| data.v(i).iter().copied()).collect()
        };
        Ok(InitialEstimate {
            tau,
            p,
            vs,
            averaged: affine_in_v,
        })
    }

    pub fn eval(&self, a: f64) -> f64 {
        if self.averaged {
            return (self.tau)(a, &self.vs);
        }
        if self.p == 0 {
            return (self.tau)(a, &[]);
        }
        let m = self.vs.len() / self.p;
        self.vs.chunks(self.p).map(|v| (self.tau)(a, v)).sum::<f64>() / m as f64
    }
}

/// Pseudo-outcomes on one fold.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoOutcomeSet {
    /// Row indices into the dataset.
    pub rows: Vec<usize>,
    pub treatments: Vec<f64>,
    pub phi: Vec<f64>,
    /// `theta0(A_i)`.
    pub theta0: Vec<f64>,
    /// Clipping events while building this set.
    pub clips: ClipCounts,
}

impl PseudoOutcomeSet {
    pub fn len(&self) -> usize {
        self.phi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phi.is_empty()
    }
}

fn diff(after: ClipCounts, before: ClipCounts) -> ClipCounts {
    ClipCounts {
        rho_floor: after.rho_floor - before.rho_floor,
        w_cap: after.w_cap - before.w_cap,
        pi_floor: after.pi_floor - before.pi_floor,
    }
}

/// `phi = [R (Y - mu) / rho + mu - tau] w + theta0(A)` for each row.
pub fn pseudo_outcomes(
    bundle: &NuisanceBundle,
    theta0: &dyn Fn(f64) -> f64,
    data: &Dataset,
    rows: &[usize],
) -> PseudoOutcomeSet {
    let before = bundle.clip_counts();
    let mut treatments = Vec::with_capacity(rows.len());
    let mut phi = Vec::with_capacity(rows.len());
    let mut th0 = Vec::with_capacity(rows.len());
    for &i in rows {
        let a = data.a(i);
        let x = data.x(i);
        let v = data.v(i);
        let mu = bundle.mu(a, x);
        let mut core = mu - bundle.tau(a, v);
        if let Some(y) = data.y(i) {
            core += (y - mu) / bundle.rho(a, x);
        }
        let t0 = theta0(a);
        let w = bundle.w(a, v);
        treatments.push(a);
        phi.push(core * w + t0);
        th0.push(t0);
    }
    PseudoOutcomeSet {
        rows: rows.to_vec(),
        treatments,
        phi,
        theta0: th0,
        clips: diff(bundle.clip_counts(), before),
    }
}

/// Influence-function standard error of a local linear fit of pseudo-outcomes.
///
/// With `W_j` the smoother weights at `a`, each row contributes
///
/// ```text
/// phi_ha(Z_i) = n W_i (phi_i - g(A_i)' beta) + sum_j W_j tau(A_j, V_i) - theta(a)
/// ```
///
/// and the standard error is `sqrt(mean_i phi_ha(Z_i)^2 / n)`. When `tau` is
/// not affine in `v`, the inner sum runs over at most
/// [`INTEGRAL_MAX_POINTS`] evenly strided window points.
pub fn influence_se(
    pseudo: &PseudoOutcomeSet,
    fit: &LocalLinearFit,
    tau: &PointFn,
    tau_affine_in_v: bool,
    data: &Dataset,
) -> Result<f64> {
    let n = pseudo.len();
    if n == 0 || fit.n != n {
        return Err(Error::Size(format!(
            "fit over {} points does not match {} pseudo-outcomes",
            fit.n, n
        )));
    }
    let (a, h) = (fit.center, fit.bandwidth);
    let theta = fit.estimate();
    let mut window = Vec::new();
    let mut weights = vec![0.0; n];
    for (j, &t) in pseudo.treatments.iter().enumerate() {
        let w = fit.weight_of(t);
        weights[j] = w;
        if w != 0.0 || fit.kernel.eval((t - a) / h) > 0.0 {
            window.push(j);
        }
    }

    let p = data.p();
    let integral: Box<dyn Fn(&[f64]) -> f64> = if tau_affine_in_v {
        // tau(t, v) = tau(t, 0) + sum_k v_k (tau(t, e_k) - tau(t, 0))
        let zero = vec![0.0; p];
        let mut unit = vec![0.0; p];
        let mut c = vec![0.0; p + 1];
        for &j in &window {
            let t = pseudo.treatments[j];
            let base = tau(t, &zero);
            c[0] += weights[j] * base;
            for k in 0..p {
                unit[k] = 1.0;
                c[k + 1] += weights[j] * (tau(t, &unit) - base);
                unit[k] = 0.0;
            }
        }
        Box::new(move |v: &[f64]| c[0] + v.iter().zip(&c[1..]).map(|(x, b)| x * b).sum::<f64>())
    } else {
        let m = window.len();
        let (picked, scale): (Vec<usize>, f64) = if m > INTEGRAL_MAX_POINTS {
            let picked = (0..INTEGRAL_MAX_POINTS)
                .map(|k| window[k * m / INTEGRAL_MAX_POINTS])
                .collect();
            (picked, m as f64 / INTEGRAL_MAX_POINTS as f64)
        } else {
            (window.clone(), 1.0)
        };
        let pts: Vec<(f64, f64)> = picked
            .iter()
            .map(|&j| (pseudo.treatments[j], weights[j]))
            .collect();
        let tau = tau.clone();
        Box::new(move |v: &[f64]| scale * pts.iter().map(|&(t, w)| w * tau(t, v)).sum::<f64>())
    };

    let mut acc = 0.0;
    for (j, &row) in pseudo.rows.iter().enumerate() {
        let t = pseudo.treatments[j];
        let fitted = fit.beta[0] + fit.beta[1] * (t - a) / h;
        let first = n as f64 * weights[j] * (pseudo.phi[j] - fitted);
        let psi = first + integral(data.v(row)) - theta;
        acc += psi * psi;
    }
    let se = (acc / n as f64 / n as f64).sqrt();
    if se.is_finite() {
        Ok(se)
    } else {
        Err(Error::DegenerateWindow { a, h })
    }
}
