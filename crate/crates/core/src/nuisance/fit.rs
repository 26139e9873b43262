use std::sync::Arc;

use super::{
    normal_pdf, stabilized_weight, ConditionalDensity, CurveFn, FeatureMap, PointFn,
};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{self, Design, LinearPredictor};

/// OLS fit of a response on `features(a, covariates)`.
#[derive(Debug, Clone)]
pub struct LinearRegressionFit {
    pub features: FeatureMap,
    pub predictor: LinearPredictor,
}

impl LinearRegressionFit {
    #[inline]
    pub fn eval(&self, a: f64, cov: &[f64]) -> f64 {
        self.features.dot(&self.predictor.coef, a, cov)
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.predictor.coef
    }

    pub fn into_point_fn(self) -> PointFn {
        Arc::new(move |a, cov| self.eval(a, cov))
    }
}

/// Logistic regression of the label on `features(a, x)`.
#[derive(Debug, Clone)]
pub struct LogisticFit {
    pub features: FeatureMap,
    pub predictor: LinearPredictor,
}

impl LogisticFit {
    #[inline]
    pub fn probability(&self, a: f64, x: &[f64]) -> f64 {
        linalg::sigmoid(self.features.dot(&self.predictor.coef, a, x))
    }

    pub fn into_point_fn(self) -> PointFn {
        Arc::new(move |a, x| self.probability(a, x))
    }
}

/// `A | V ~ Normal(linear mean(V), sigma^2)`.
#[derive(Debug, Clone)]
pub struct GaussianLinearDensity {
    pub features: FeatureMap,
    pub mean: LinearPredictor,
    pub variance: f64,
}

impl GaussianLinearDensity {
    #[inline]
    pub fn mean_at(&self, v: &[f64]) -> f64 {
        self.features.dot(&self.mean.coef, 0.0, v)
    }
}

impl ConditionalDensity for GaussianLinearDensity {
    fn density(&self, a: f64, v: &[f64]) -> f64 {
        normal_pdf(a, self.mean_at(v), self.variance.sqrt())
    }

    fn normal_params(&self, v: &[f64]) -> Option<(f64, f64)> {
        Some((self.mean_at(v), self.variance.sqrt()))
    }
}

fn build_design<'a>(
    features: &FeatureMap,
    rows: impl Iterator<Item = (f64, &'a [f64])>,
    len_hint: usize,
    k: usize,
) -> Design {
    let mut design = Design::with_capacity(len_hint, features.dim(k));
    let mut buf = Vec::with_capacity(features.dim(k));
    for (a, cov) in rows {
        features.expand_into(a, cov, &mut buf);
        design.push_row(&buf);
    }
    design
}

fn check_features(features: &FeatureMap, k: usize, model: &'static str) -> Result<()> {
    features.check(k).map_err(|m| Error::fit(model, m))
}

/// Least squares of `Y` on `features(A, X)` over the labeled members of `rows`.
pub fn fit_outcome_regression(
    data: &Dataset,
    rows: &[usize],
    features: &FeatureMap,
) -> Result<LinearRegressionFit> {
    const MODEL: &str = "outcome regression mu";
    let k = data.p() + data.q();
    check_features(features, k, MODEL)?;
    let labeled: Vec<usize> = rows.iter().copied().filter(|&i| data.is_labeled(i)).collect();
    let design = build_design(
        features,
        labeled.iter().map(|&i| (data.a(i), data.x(i))),
        labeled.len(),
        k,
    );
    let y: Vec<f64> = labeled.iter().filter_map(|&i| data.y(i)).collect();
    let predictor = linalg::least_squares(&design, &y, MODEL)?;
    Ok(LinearRegressionFit {
        features: features.clone(),
        predictor,
    })
}

/// Least squares of `mu(A_i, X_i)` on `features(A_i, V_i)` over all of `rows`,
/// labeled or not.
pub fn fit_tau(
    data: &Dataset,
    rows: &[usize],
    mu: &PointFn,
    features: &FeatureMap,
) -> Result<LinearRegressionFit> {
    const MODEL: &str = "tau regression";
    check_features(features, data.p(), MODEL)?;
    let design = build_design(
        features,
        rows.iter().map(|&i| (data.a(i), data.v(i))),
        rows.len(),
        data.p(),
    );
    let target: Vec<f64> = rows.iter().map(|&i| mu(data.a(i), data.x(i))).collect();
    let predictor = linalg::least_squares(&design, &target, MODEL)?;
    Ok(LinearRegressionFit {
        features: features.clone(),
        predictor,
    })
}

/// Logistic regression of `R` on `features(A, X)`.
pub fn fit_label_propensity(
    data: &Dataset,
    rows: &[usize],
    features: &FeatureMap,
) -> Result<LogisticFit> {
    const MODEL: &str = "label propensity rho";
    let k = data.p() + data.q();
    check_features(features, k, MODEL)?;
    let design = build_design(
        features,
        rows.iter().map(|&i| (data.a(i), data.x(i))),
        rows.len(),
        k,
    );
    let labels: Vec<bool> = rows.iter().map(|&i| data.is_labeled(i)).collect();
    let predictor = linalg::logistic(&design, &labels, MODEL)?;
    Ok(LogisticFit {
        features: features.clone(),
        predictor,
    })
}

/// Gaussian conditional density: least-squares mean of `A` on `features(V)`
/// and the mean squared residual as variance.
pub fn fit_conditional_density(
    data: &Dataset,
    rows: &[usize],
    features: &FeatureMap,
) -> Result<GaussianLinearDensity> {
    const MODEL: &str = "conditional density pi";
    let features = FeatureMap {
        treatment: false,
        ..features.clone()
    };
    let dim = features.dim(data.p());
    if rows.len() < dim + 2 {
        return Err(Error::fit(
            MODEL,
            format!("{} rows cannot support a {dim}-column mean model", rows.len()),
        ));
    }
    let design = build_design(
        &features,
        rows.iter().map(|&i| (0.0, data.v(i))),
        rows.len(),
        data.p(),
    );
    let a: Vec<f64> = rows.iter().map(|&i| data.a(i)).collect();
    let mean = linalg::least_squares(&design, &a, MODEL)?;
    let variance = rows
        .iter()
        .map(|&i| {
            let r = data.a(i) - features.dot(&mean.coef, 0.0, data.v(i));
            r * r
        })
        .sum::<f64>()
        / rows.len() as f64;
    if !(variance > 0.0) {
        return Err(Error::fit(MODEL, "zero residual variance (degenerate density)"));
    }
    Ok(GaussianLinearDensity {
        features,
        mean,
        variance,
    })
}

enum RowDensity {
    Normal { mean: f64, inv_sd: f64 },
    Generic(Vec<f64>),
}

/// `f(a) = mean_i pi(a | V_i)` over a captured fold.
pub struct MarginalDensity {
    pi: Arc<dyn ConditionalDensity>,
    rows: Vec<RowDensity>,
}

impl MarginalDensity {
    pub fn eval(&self, a: f64) -> f64 {
        const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
        let mut acc = 0.0;
        for row in &self.rows {
            acc += match row {
                RowDensity::Normal { mean, inv_sd } => {
                    let z = (a - mean) * inv_sd;
                    INV_SQRT_2PI * inv_sd * (-0.5 * z * z).exp()
                }
                RowDensity::Generic(v) => self.pi.density(a, v),
            };
        }
        acc / self.rows.len() as f64
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn into_curve_fn(self) -> CurveFn {
        let me = Arc::new(self);
        Arc::new(move |a| me.eval(a))
    }
}

pub fn estimate_marginal_density(
    pi: Arc<dyn ConditionalDensity>,
    data: &Dataset,
    rows: &[usize],
) -> Result<MarginalDensity> {
    if rows.is_empty() {
        return Err(Error::Size("marginal density needs a non-empty fold".into()));
    }
    let rows = rows
        .iter()
        .map(|&i| match pi.normal_params(data.v(i)) {
            Some((mean, sd)) => RowDensity::Normal {
                mean,
                inv_sd: 1.0 / sd,
            },
            None => RowDensity::Generic(data.v(i).to_vec()),
        })
        .collect();
    Ok(MarginalDensity { pi, rows })
}

/// `w(a, v) = min(f(a) / max(pi(a | v), 1e-12), cap)`.
pub fn make_stabilized_weight(
    f: CurveFn,
    pi: Arc<dyn ConditionalDensity>,
    cap: f64,
) -> Result<PointFn> {
    if !(cap > 0.0) {
        return Err(Error::Config(format!("weight cap must be positive, got {cap}")));
    }
    Ok(Arc::new(move |a, v| stabilized_weight(f(a), pi.density(a, v), cap).0))
}

/// Pluggable "fit on rows" interface for every nuisance the estimator needs.
pub trait NuisanceLearner: Send + Sync {
    fn fit_outcome(&self, data: &Dataset, rows: &[usize]) -> Result<PointFn>;
    fn fit_tau(&self, data: &Dataset, rows: &[usize], mu: &PointFn) -> Result<PointFn>;
    /// Unclipped `P(R = 1 | A, X)`.
    fn fit_propensity(&self, data: &Dataset, rows: &[usize]) -> Result<PointFn>;
    fn fit_density(&self, data: &Dataset, rows: &[usize]) -> Result<Arc<dyn ConditionalDensity>>;

    /// Whether fitted `tau` is always affine in `v` (enables exact shortcuts
    /// when averaging over rows).
    fn tau_affine_in_v(&self) -> bool {
        false
    }
}

/// OLS for `mu` and `tau`, logistic for `rho`, Gaussian-linear for `pi`.
#[derive(Debug, Clone)]
pub struct ParametricLearner {
    /// Used for both `mu` (on `X`) and `tau` (on `V`).
    pub outcome: FeatureMap,
    pub propensity: FeatureMap,
    pub density: FeatureMap,
}

impl Default for ParametricLearner {
    fn default() -> Self {
        ParametricLearner {
            outcome: FeatureMap::outcome(),
            propensity: FeatureMap::main_effects(),
            density: FeatureMap::covariates_only(),
        }
    }
}

impl NuisanceLearner for ParametricLearner {
    fn fit_outcome(&self, data: &Dataset, rows: &[usize]) -> Result<PointFn> {
        Ok(fit_outcome_regression(data, rows, &self.outcome)?.into_point_fn())
    }

    fn fit_tau(&self, data: &Dataset, rows: &[usize], mu: &PointFn) -> Result<PointFn> {
        Ok(fit_tau(data, rows, mu, &self.outcome)?.into_point_fn())
    }

    fn fit_propensity(&self, data: &Dataset, rows: &[usize]) -> Result<PointFn> {
        // nothing to model when every training row is labeled
        if rows.iter().all(|&i| data.is_labeled(i)) && !rows.is_empty() {
            return Ok(Arc::new(|_, _| 1.0));
        }
        Ok(fit_label_propensity(data, rows, &self.propensity)?.into_point_fn())
    }

    fn fit_density(&self, data: &Dataset, rows: &[usize]) -> Result<Arc<dyn ConditionalDensity>> {
        Ok(Arc::new(fit_conditional_density(data, rows, &self.density)?))
    }

    fn tau_affine_in_v(&self) -> bool {
        true
    }
}
