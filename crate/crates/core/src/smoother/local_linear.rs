//! Local linear regression at a point.
//!
//! With `u_j = (A_j - a) / h` and kernel sums `S_k = sum K(u_j) u_j^k`,
//! `T_k = sum K(u_j) u_j^k phi_j`, the weighted least-squares intercept is
//!
//! ```text
//! theta(a) = (S2 T0 - S1 T1) / (S0 S2 - S1^2)
//! W_j(a)   = K(u_j) (S2 - S1 u_j) / (S0 S2 - S1^2)
//! ```
//!
//! The moment matrix reported in [`LocalLinearFit`] is the sample-mean form
//! `D = P_n[g K_h g^T]`, i.e. the sums divided by `n h`.

use super::Kernel;
use crate::error::{Error, Result};

/// A window counts as degenerate when `det / S0^2` (the kernel-weighted
/// variance of `u`) falls below this.
pub const DET_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub(crate) struct Sums {
    pub s0: f64,
    pub s1: f64,
    pub s2: f64,
    pub t0: f64,
    pub t1: f64,
    pub count: usize,
}

impl Sums {
    #[inline]
    pub fn det(&self) -> f64 {
        self.s0 * self.s2 - self.s1 * self.s1
    }

    #[inline]
    pub fn is_degenerate(&self) -> bool {
        !(self.s0 > 0.0) || !(self.det() / (self.s0 * self.s0) >= DET_FLOOR)
    }

    #[inline]
    pub fn intercept(&self) -> f64 {
        (self.s2 * self.t0 - self.s1 * self.t1) / self.det()
    }

    #[inline]
    pub fn slope(&self) -> f64 {
        (self.s0 * self.t1 - self.s1 * self.t0) / self.det()
    }
}

pub(crate) fn kernel_sums(
    treatments: &[f64],
    values: Option<&[f64]>,
    a: f64,
    h: f64,
    kernel: Kernel,
) -> Sums {
    let mut s = Sums::default();
    for (j, &t) in treatments.iter().enumerate() {
        let u = (t - a) / h;
        let k = kernel.eval(u);
        if k == 0.0 {
            continue;
        }
        s.count += 1;
        let ku = k * u;
        s.s0 += k;
        s.s1 += ku;
        s.s2 += ku * u;
        if let Some(v) = values {
            s.t0 += k * v[j];
            s.t1 += ku * v[j];
        }
    }
    s
}

/// Result of a local linear fit at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalLinearFit {
    pub center: f64,
    pub bandwidth: f64,
    pub kernel: Kernel,
    /// `P_n[g_ha(A) K_ha(A) g_ha(A)^T]`.
    pub moment: [[f64; 2]; 2],
    /// `P_n[g_ha(A) K_ha(A) phi]`.
    pub rhs: [f64; 2],
    /// Intercept and slope (slope in units of `(t - a) / h`).
    pub beta: [f64; 2],
    /// Points with positive kernel weight.
    pub n_window: usize,
    /// Sample size the means are taken over.
    pub n: usize,
    /// True when the window was degenerate and the kernel-weighted mean
    /// (Nadaraya-Watson) was used instead.
    pub fallback: bool,
}

impl LocalLinearFit {
    pub fn estimate(&self) -> f64 {
        self.beta[0]
    }

    fn from_sums(s: &Sums, n: usize, a: f64, h: f64, kernel: Kernel, fallback: bool) -> Self {
        let scale = 1.0 / (n as f64 * h);
        let beta = if fallback {
            [s.t0 / s.s0, 0.0]
        } else {
            [s.intercept(), s.slope()]
        };
        LocalLinearFit {
            center: a,
            bandwidth: h,
            kernel,
            moment: [[s.s0 * scale, s.s1 * scale], [s.s1 * scale, s.s2 * scale]],
            rhs: [s.t0 * scale, s.t1 * scale],
            beta,
            n_window: s.count,
            n,
            fallback,
        }
    }

    /// First row of `D^-1`, i.e. `e1^T D^-1`. Falls back to `(1/D00, 0)`.
    pub fn e1_dinv(&self) -> [f64; 2] {
        if self.fallback {
            return [1.0 / self.moment[0][0], 0.0];
        }
        let [[d00, d01], [_, d11]] = self.moment;
        let det = d00 * d11 - d01 * d01;
        [d11 / det, -d01 / det]
    }

    /// Smoother weight `W_j(a)` of a point with treatment `t`.
    #[inline]
    pub fn weight_of(&self, t: f64) -> f64 {
        let u = (t - self.center) / self.bandwidth;
        let k = self.kernel.eval(u) / self.bandwidth;
        if k == 0.0 {
            return 0.0;
        }
        let e = self.e1_dinv();
        (e[0] + e[1] * u) * k / self.n as f64
    }
}

fn check_bandwidth(h: f64) -> Result<()> {
    if h > 0.0 && h.is_finite() {
        Ok(())
    } else {
        Err(Error::Bandwidth(format!("bandwidth must be positive, got {h}")))
    }
}

/// Local linear estimate at `a`; errors on a degenerate window.
pub fn local_linear_point(
    treatments: &[f64],
    values: &[f64],
    a: f64,
    h: f64,
    kernel: Kernel,
) -> Result<LocalLinearFit> {
    check_bandwidth(h)?;
    let s = kernel_sums(treatments, Some(values), a, h, kernel);
    if s.is_degenerate() {
        return Err(Error::DegenerateWindow { a, h });
    }
    Ok(LocalLinearFit::from_sums(&s, treatments.len(), a, h, kernel, false))
}

/// Like [`local_linear_point`], but a degenerate window with some positive
/// weight falls back to the kernel-weighted mean.
pub fn local_linear_or_fallback(
    treatments: &[f64],
    values: &[f64],
    a: f64,
    h: f64,
    kernel: Kernel,
) -> Result<LocalLinearFit> {
    check_bandwidth(h)?;
    let s = kernel_sums(treatments, Some(values), a, h, kernel);
    if !s.is_degenerate() {
        return Ok(LocalLinearFit::from_sums(&s, treatments.len(), a, h, kernel, false));
    }
    if s.s0 > 0.0 {
        Ok(LocalLinearFit::from_sums(&s, treatments.len(), a, h, kernel, true))
    } else {
        Err(Error::DegenerateWindow { a, h })
    }
}

/// Weights `W_i(a; A^n)` such that the estimate is `sum_i W_i phi_i`.
pub fn smoother_weights(treatments: &[f64], a: f64, h: f64, kernel: Kernel) -> Result<Vec<f64>> {
    check_bandwidth(h)?;
    let s = kernel_sums(treatments, None, a, h, kernel);
    if s.is_degenerate() {
        return Err(Error::DegenerateWindow { a, h });
    }
    let det = s.det();
    Ok(treatments
        .iter()
        .map(|&t| {
            let u = (t - a) / h;
            kernel.eval(u) * (s.s2 - s.s1 * u) / det
        })
        .collect())
}

/// Diagonal smoother weight `W_h(A_i) = e1^T D_{h A_i}^-1 e1 K(0) / (n h)`,
/// with point `i` included in `D`.
pub fn self_weight(treatments: &[f64], i: usize, h: f64, kernel: Kernel) -> Result<f64> {
    check_bandwidth(h)?;
    let a = treatments[i];
    let s = kernel_sums(treatments, None, a, h, kernel);
    if s.is_degenerate() {
        return Err(Error::DegenerateWindow { a, h });
    }
    Ok(kernel.eval(0.0) * s.s2 / s.det())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reproduces_constants_and_lines() {
        let t = [0.0, 0.3, 0.5, 0.9, 1.4, 2.0];
        let c = [3.5; 6];
        let fit = local_linear_point(&t, &c, 0.7, 0.8, Kernel::Epanechnikov).unwrap();
        assert!((fit.estimate() - 3.5).abs() < 1e-12);
        let lin: Vec<f64> = t.iter().map(|x| 2.0 * x).collect();
        for a in [0.4, 0.7, 1.1] {
            let fit = local_linear_point(&t, &lin, a, 0.8, Kernel::Epanechnikov).unwrap();
            assert!((fit.estimate() - 2.0 * a).abs() < 1e-12);
        }
    }

    #[test]
    fn single_cluster_weights_are_uniform_in_fallback() {
        // all window points share A = a: D is singular, NW takes over
        let t = [1.0, 1.0, 1.0, 5.0];
        let v = [1.0, 2.0, 6.0, 100.0];
        let fit = local_linear_or_fallback(&t, &v, 1.0, 0.5, Kernel::Uniform).unwrap();
        assert!(fit.fallback);
        assert!((fit.estimate() - 3.0).abs() < 1e-12);
        assert!(matches!(
            local_linear_point(&t, &v, 1.0, 0.5, Kernel::Uniform),
            Err(Error::DegenerateWindow { .. })
        ));
        assert!(local_linear_or_fallback(&t, &v, 3.0, 0.5, Kernel::Uniform).is_err());
    }

    #[test]
    fn compact_support_zeroes_far_weights() {
        let t = [0.0, 0.2, 0.4, 0.6, 2.0, 3.0];
        let w = smoother_weights(&t, 0.3, 0.5, Kernel::Epanechnikov).unwrap();
        assert_eq!(w[4], 0.0);
        assert_eq!(w[5], 0.0);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn all_points_at_one_value_uniform_kernel() {
        let t = [2.0; 7];
        // self weight with every point in one spot is degenerate for the
        // linear fit; fallback weights are 1/n
        assert!(self_weight(&t, 3, 1.0, Kernel::Uniform).is_err());
        let fit = local_linear_or_fallback(&t, &[1.0; 7], 2.0, 1.0, Kernel::Uniform).unwrap();
        assert!((fit.weight_of(2.0) - 1.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn weight_of_matches_weight_vector() {
        let t = [0.1, 0.35, 0.4, 0.8, 1.0, 1.3, 1.7];
        let v = [1.0, -1.0, 0.5, 2.0, 0.0, 3.0, 1.0];
        let fit = local_linear_point(&t, &v, 0.9, 0.6, Kernel::Epanechnikov).unwrap();
        let w = smoother_weights(&t, 0.9, 0.6, Kernel::Epanechnikov).unwrap();
        for (j, &tj) in t.iter().enumerate() {
            assert!((fit.weight_of(tj) - w[j]).abs() < 1e-13);
        }
        let via_w: f64 = w.iter().zip(&v).map(|(a, b)| a * b).sum();
        assert!((via_w - fit.estimate()).abs() < 1e-12);
    }

    #[test]
    fn non_positive_bandwidth_rejected() {
        assert!(local_linear_point(&[0.0, 1.0], &[0.0, 1.0], 0.5, 0.0, Kernel::Uniform).is_err());
    }
}
