//! Small dense least-squares and logistic fits over an explicit design
//! matrix. Designs here have at most a few dozen columns, so everything
//! goes through the normal equations with a Cholesky solve.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Ridge added to the normal equations, relative to the mean diagonal.
pub const RIDGE_GUARD: f64 = 1e-10;
/// A column whose Cholesky pivot falls below this fraction of its own
/// squared norm is treated as linearly dependent on earlier columns.
const RANK_TOL: f64 = 1e-9;
const REFINE_STEPS: usize = 3;

/// Row-major design matrix.
#[derive(Debug, Clone)]
pub struct Design {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl Design {
    pub fn with_capacity(rows: usize, cols: usize) -> Self {
        Design {
            rows: 0,
            cols,
            values: Vec::with_capacity(rows * cols),
        }
    }

    pub fn push_row(&mut self, row: &[f64]) {
        debug_assert_eq!(row.len(), self.cols);
        self.values.extend_from_slice(row);
        self.rows += 1;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    /// Columns other than the first (the intercept) that take a single value.
    fn constant_columns(&self) -> Vec<bool> {
        let mut constant = vec![true; self.cols];
        if self.rows == 0 {
            return constant;
        }
        let first = self.row(0);
        for i in 1..self.rows {
            let r = self.row(i);
            for j in 0..self.cols {
                if r[j] != first[j] {
                    constant[j] = false;
                }
            }
        }
        constant[0] = false;
        constant
    }
}

/// Coefficients of a fitted linear predictor; inactive columns are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearPredictor {
    pub coef: Vec<f64>,
}

impl LinearPredictor {
    #[inline]
    pub fn eval(&self, features: &[f64]) -> f64 {
        self.coef.iter().zip(features).map(|(b, x)| b * x).sum()
    }
}

fn gram(design: &Design, active: &[usize], weights: Option<&[f64]>) -> DMatrix<f64> {
    let k = active.len();
    let mut g = DMatrix::<f64>::zeros(k, k);
    for i in 0..design.rows {
        let r = design.row(i);
        let w = weights.map_or(1.0, |w| w[i]);
        for (a, &ja) in active.iter().enumerate() {
            let xa = w * r[ja];
            for (b, &jb) in active.iter().enumerate().take(a + 1) {
                g[(a, b)] += xa * r[jb];
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            g[(b, a)] = g[(a, b)];
        }
    }
    g
}

/// Cholesky solve with the ridge guard and a relative pivot check.
fn guarded_solve(
    mut g: DMatrix<f64>,
    rhs: DVector<f64>,
    model: &'static str,
) -> Result<DVector<f64>> {
    let k = g.nrows();
    let plain = g.clone();
    let diag: Vec<f64> = (0..k).map(|j| g[(j, j)]).collect();
    let scale = diag.iter().sum::<f64>() / k.max(1) as f64;
    let ridge = RIDGE_GUARD * scale.max(f64::MIN_POSITIVE);
    for j in 0..k {
        g[(j, j)] += ridge;
    }
    let chol = g
        .cholesky()
        .ok_or_else(|| Error::fit(model, "normal equations are not positive definite"))?;
    let l = chol.l_dirty();
    for j in 0..k {
        let pivot = l[(j, j)] * l[(j, j)];
        if diag[j] <= 0.0 || pivot < RANK_TOL * diag[j] {
            return Err(Error::fit(
                model,
                format!("design is rank deficient (column {j} is collinear)"),
            ));
        }
    }
    // iterative refinement removes the ridge bias on well-posed systems
    let mut beta = chol.solve(&rhs);
    for _ in 0..REFINE_STEPS {
        let resid = &rhs - &plain * &beta;
        beta += chol.solve(&resid);
    }
    Ok(beta)
}

fn expand(active: &[usize], cols: usize, beta: &DVector<f64>) -> Vec<f64> {
    let mut coef = vec![0.0; cols];
    for (a, &j) in active.iter().enumerate() {
        coef[j] = beta[a];
    }
    coef
}

/// Ordinary least squares. Constant non-intercept columns are dropped
/// (coefficient zero) before solving.
pub fn least_squares(design: &Design, y: &[f64], model: &'static str) -> Result<LinearPredictor> {
    if design.rows < design.cols + 1 {
        return Err(Error::fit(
            model,
            format!(
                "{} rows cannot support a {}-column design",
                design.rows, design.cols
            ),
        ));
    }
    let constant = design.constant_columns();
    let active: Vec<usize> = (0..design.cols).filter(|&j| !constant[j]).collect();
    let g = gram(design, &active, None);
    let mut rhs = DVector::<f64>::zeros(active.len());
    for i in 0..design.rows {
        let r = design.row(i);
        for (a, &j) in active.iter().enumerate() {
            rhs[a] += r[j] * y[i];
        }
    }
    let beta = guarded_solve(g, rhs, model)?;
    Ok(LinearPredictor {
        coef: expand(&active, design.cols, &beta),
    })
}

#[inline]
pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub const LOGISTIC_MAX_ITER: usize = 100;
pub const LOGISTIC_GRAD_TOL: f64 = 1e-8;
/// A linear predictor this large means fitted probabilities within 1e-13 of
/// zero or one: treated as (quasi-)complete separation.
const SEPARATION_ETA: f64 = 30.0;

/// Logistic regression by Newton iterations on the mean log-likelihood.
pub fn logistic(design: &Design, labels: &[bool], model: &'static str) -> Result<LinearPredictor> {
    let n = design.rows;
    let n1 = labels.iter().filter(|&&r| r).count();
    if n1 == 0 || n1 == n {
        return Err(Error::fit(
            model,
            "both label classes must be present to fit a propensity model",
        ));
    }
    if n < design.cols + 1 {
        return Err(Error::fit(
            model,
            format!("{n} rows cannot support a {}-column design", design.cols),
        ));
    }
    let constant = design.constant_columns();
    let active: Vec<usize> = (0..design.cols).filter(|&j| !constant[j]).collect();
    let k = active.len();

    // start from the intercept-only solution
    let mut beta = DVector::<f64>::zeros(k);
    beta[0] = logit(n1 as f64 / n as f64);
    let mut weights = vec![0.0; n];
    let mut converged = false;
    for _ in 0..LOGISTIC_MAX_ITER {
        let mut grad = DVector::<f64>::zeros(k);
        for i in 0..n {
            let r = design.row(i);
            let eta: f64 = active.iter().enumerate().map(|(a, &j)| beta[a] * r[j]).sum();
            let p = sigmoid(eta);
            weights[i] = (p * (1.0 - p)).max(1e-12);
            let resid = f64::from(u8::from(labels[i])) - p;
            for (a, &j) in active.iter().enumerate() {
                grad[a] += r[j] * resid;
            }
        }
        if grad.amax() / (n as f64) < LOGISTIC_GRAD_TOL {
            converged = true;
            break;
        }
        let hess = gram(design, &active, Some(&weights));
        let step = guarded_solve(hess, grad, model)?;
        beta += step;
        let max_eta = (0..n)
            .map(|i| {
                let r = design.row(i);
                active
                    .iter()
                    .enumerate()
                    .map(|(a, &j)| beta[a] * r[j])
                    .sum::<f64>()
                    .abs()
            })
            .fold(0.0, f64::max);
        if !(max_eta <= SEPARATION_ETA) {
            return Err(Error::fit(
                model,
                "coefficients diverge (complete separation); use simpler features or rely on clipping",
            ));
        }
    }
    if !converged {
        return Err(Error::fit(
            model,
            format!("Newton iterations did not converge in {LOGISTIC_MAX_ITER} steps"),
        ));
    }
    Ok(LinearPredictor {
        coef: expand(&active, design.cols, &beta),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn design(rows: &[&[f64]]) -> Design {
        let mut d = Design::with_capacity(rows.len(), rows[0].len());
        for r in rows {
            d.push_row(r);
        }
        d
    }

    #[test]
    fn exact_line_is_recovered() {
        let d = design(&[&[1.0, 0.0], &[1.0, 1.0], &[1.0, 2.0], &[1.0, 5.0]]);
        let y = [1.0, 3.0, 5.0, 11.0];
        let fit = least_squares(&d, &y, "test").unwrap();
        assert!((fit.coef[0] - 1.0).abs() < 1e-10);
        assert!((fit.coef[1] - 2.0).abs() < 1e-10);
    }

    #[test]
    fn constant_column_gets_zero_coefficient() {
        let d = design(&[&[1.0, 3.0, 0.0], &[1.0, 3.0, 1.0], &[1.0, 3.0, 2.0], &[1.0, 3.0, 4.0]]);
        let fit = least_squares(&d, &[2.0, 2.0, 2.0, 2.0], "test").unwrap();
        assert_eq!(fit.coef[1], 0.0);
        assert!((fit.coef[0] - 2.0).abs() < 1e-10);
    }

    #[test]
    fn collinear_columns_are_rejected() {
        let d = design(&[
            &[1.0, 1.0, 2.0],
            &[1.0, 2.0, 4.0],
            &[1.0, 3.0, 6.0],
            &[1.0, 4.0, 8.0],
            &[1.0, 5.0, 10.0],
        ]);
        let err = least_squares(&d, &[1.0, 2.0, 3.0, 4.0, 5.0], "test").unwrap_err();
        assert!(err.to_string().contains("rank deficient"));
    }

    #[test]
    fn too_few_rows() {
        let d = design(&[&[1.0, 0.1, 0.2, 0.3, 0.4], &[1.0, 0.5, 0.6, 0.7, 0.9]]);
        assert!(least_squares(&d, &[1.0, 2.0], "test").is_err());
    }

    #[test]
    fn logistic_intercept_only_matches_rate() {
        let rows: Vec<[f64; 2]> = (0..40).map(|i| [1.0, 7.0 + 0.0 * i as f64]).collect();
        let mut d = Design::with_capacity(40, 2);
        for r in &rows {
            d.push_row(r);
        }
        let labels: Vec<bool> = (0..40).map(|i| i % 4 == 0).collect();
        let fit = logistic(&d, &labels, "rho").unwrap();
        assert!((sigmoid(fit.coef[0]) - 0.25).abs() < 1e-10);
        assert_eq!(fit.coef[1], 0.0);
    }

    #[test]
    fn logistic_detects_separation() {
        let mut d = Design::with_capacity(20, 2);
        for i in 0..20 {
            d.push_row(&[1.0, i as f64]);
        }
        let labels: Vec<bool> = (0..20).map(|i| i >= 10).collect();
        let err = logistic(&d, &labels, "rho").unwrap_err();
        assert!(err.to_string().contains("separation"));
    }
}
