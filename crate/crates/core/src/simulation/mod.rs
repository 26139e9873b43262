//! Monte Carlo harness: repeated draws from the benchmark process, each
//! estimated by several methods, summarized as RMSE, bias, SD, mean standard
//! error and interval coverage at one evaluation point.
//!
//! Replication `m` draws from its own ChaCha8 stream (`seed`, stream `m`), and
//! results are reduced in replication order, so output does not depend on
//! the number of threads.

mod dgp;

use std::fmt;
use std::io::Write;
use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use dgp::{
    dgp_sample, lambda, marginal_density, smoothed_target, true_mu, true_tau, true_theta,
    truth_bundle, DgpVariant,
};

use crate::data::{Dataset, FoldAssignment};
use crate::error::{Error, Result};
use crate::estimator::{
    crossfit_plugin_estimate, dr_estimate, influence_se, plugin_estimate, pseudo_outcomes, supervised_estimate,
    two_fold_dr_estimate, z_value, EstimationConfig, Method, SmoothingOptions,
};
use crate::nuisance::{oracle_noisy_bundle, FeatureMap, NuisanceBundle, ParametricLearner};
use crate::smoother::{local_linear_or_fallback, range_of, BandwidthPolicy};

/// Where nuisance estimates come from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NuisanceMode {
    /// Truth plus `N(n^-alpha, n^-2alpha)` offsets, two-fold protocol.
    Synthetic { alpha: f64 },
    /// Parametric fits, three-fold cross-fitting.
    Fit,
}

impl fmt::Display for NuisanceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NuisanceMode::Synthetic { alpha } => write!(f, "{alpha}"),
            NuisanceMode::Fit => f.write_str("fit"),
        }
    }
}

/// Bandwidth rule for simulated samples.
#[derive(Debug, Clone, PartialEq)]
pub enum BandwidthRule {
    Policy(BandwidthPolicy),
    /// Fixed `h = factor * n^(-1/5) * range(A)` per sample.
    RateRange { factor: f64 },
}

impl Default for BandwidthRule {
    fn default() -> Self {
        BandwidthRule::Policy(BandwidthPolicy::default())
    }
}

impl BandwidthRule {
    pub fn resolve(&self, data: &Dataset) -> BandwidthPolicy {
        match self {
            BandwidthRule::Policy(p) => p.clone(),
            BandwidthRule::RateRange { factor } => BandwidthPolicy::Fixed(
                factor * (data.n() as f64).powf(-0.2) * range_of(data.treatments()),
            ),
        }
    }
}

impl fmt::Display for BandwidthRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BandwidthRule::Policy(p) => write!(f, "{p}"),
            BandwidthRule::RateRange { factor } => write!(f, "rate:{factor}"),
        }
    }
}

/// `n^(-1/5) * range(A) / 2`, used when bandwidth selection fails.
pub fn fallback_bandwidth(data: &Dataset) -> f64 {
    (data.n() as f64).powf(-0.2) * range_of(data.treatments()) / 2.0
}

#[derive(Debug, Clone)]
pub struct SimulationSpec {
    pub n: usize,
    pub mode: NuisanceMode,
    pub m: usize,
    pub variant: DgpVariant,
    pub estimators: Vec<Method>,
    /// Drop the `a^2` term from the outcome models (fit mode).
    pub misspecify_outcome: bool,
    pub seed: u64,
    pub eval_point: f64,
    pub label_rate: f64,
    pub smoothing: SmoothingOptions,
    pub bandwidth: BandwidthRule,
    pub ci_level: f64,
    pub clip_rho_min: f64,
    pub clip_w_max: f64,
    pub rotate: bool,
    /// Outcome features for fitted `mu` and `tau`; misspecification drops
    /// `a^2` from these.
    pub outcome_features: FeatureMap,
}

impl Default for SimulationSpec {
    fn default() -> Self {
        let est = EstimationConfig::default();
        SimulationSpec {
            n: 500,
            mode: NuisanceMode::Synthetic { alpha: 0.1 },
            m: 500,
            variant: DgpVariant::default(),
            estimators: vec![Method::Plugin, Method::Dr],
            misspecify_outcome: false,
            seed: 0,
            eval_point: 1.0,
            label_rate: 0.5,
            smoothing: est.smoothing,
            bandwidth: BandwidthRule::default(),
            ci_level: est.ci_level,
            clip_rho_min: est.clip_rho_min,
            clip_w_max: est.clip_w_max,
            rotate: est.rotate,
            outcome_features: FeatureMap::outcome(),
        }
    }
}

impl SimulationSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n < 50 {
            return Err(Error::Config(format!("simulation.n must be at least 50, got {}", self.n)));
        }
        if self.m == 0 {
            return Err(Error::Config("simulation.m must be at least 1".into()));
        }
        if let NuisanceMode::Synthetic { alpha } = self.mode {
            if !(alpha > 0.0) {
                return Err(Error::Config(format!("simulation.alpha must be positive, got {alpha}")));
            }
            if self.estimators.contains(&Method::Supervised) {
                return Err(Error::Config(
                    "the supervised estimator needs fitted nuisances (alpha = fit)".into(),
                ));
            }
        }
        if self.misspecify_outcome && self.mode != NuisanceMode::Fit {
            return Err(Error::Config(
                "outcome misspecification applies to fitted nuisances only".into(),
            ));
        }
        if self.estimators.is_empty() {
            return Err(Error::Config("no estimators requested".into()));
        }
        if !(self.label_rate > 0.0 && self.label_rate <= 1.0) {
            return Err(Error::Config(format!(
                "simulation.label_rate must be in (0, 1], got {}",
                self.label_rate
            )));
        }
        z_value(self.ci_level)?;
        Ok(())
    }

    pub fn theta_true(&self) -> f64 {
        self.variant.theta(self.eval_point)
    }

    /// Estimator label used in result tables.
    pub fn label(&self, method: Method) -> String {
        if self.misspecify_outcome {
            format!("{}_misspecified", method.name())
        } else {
            method.name().to_string()
        }
    }

    fn learner(&self) -> ParametricLearner {
        let mut l = ParametricLearner {
            outcome: self.outcome_features.clone(),
            ..ParametricLearner::default()
        };
        if self.misspecify_outcome {
            l.outcome = l.outcome.without_quadratic();
        }
        l
    }
}

/// One method's output in one replication.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateRecord {
    pub method: Method,
    /// `Err` carries the failure message.
    pub theta_hat: std::result::Result<f64, String>,
    pub se: Option<f64>,
    /// Bandwidth per split (averaged splits share the target).
    pub bandwidths: Vec<f64>,
    /// `theta_bar(a*)` at those bandwidths.
    pub smoothed_target: Option<f64>,
    pub covered: Option<bool>,
    /// The fallback bandwidth was used after selection failed.
    pub retried: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationResult {
    pub index: usize,
    pub records: Vec<EstimateRecord>,
}

impl ReplicationResult {
    pub fn get(&self, method: Method) -> Option<&EstimateRecord> {
        self.records.iter().find(|r| r.method == method)
    }
}

pub const RESULT_COLUMNS: [&str; 12] = [
    "n", "alpha", "estimator", "dgp_variant", "M", "rmse", "bias", "sd", "mean_se", "coverage",
    "fail_count", "seed",
];

/// One row of the results table.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub n: usize,
    pub alpha: String,
    pub estimator: String,
    pub dgp_variant: String,
    pub m: usize,
    pub rmse: f64,
    pub bias: f64,
    pub sd: f64,
    pub mean_se: f64,
    pub coverage: f64,
    pub fail_count: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Default)]
pub struct ResultsTable {
    pub rows: Vec<ResultRow>,
    pub replications: Vec<Vec<ReplicationResult>>,
}

impl ResultsTable {
    pub fn extend(&mut self, other: ResultsTable) {
        self.rows.extend(other.rows);
        self.replications.extend(other.replications);
    }

    pub fn find(&self, n: usize, estimator: &str) -> Option<&ResultRow> {
        self.rows.iter().find(|r| r.n == n && r.estimator == estimator)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(RESULT_COLUMNS)?;
        for r in &self.rows {
            w.write_record([
                r.n.to_string(),
                r.alpha.clone(),
                r.estimator.clone(),
                r.dgp_variant.clone(),
                r.m.to_string(),
                fmt_num(r.rmse),
                fmt_num(r.bias),
                fmt_num(r.sd),
                fmt_num(r.mean_se),
                fmt_num(r.coverage),
                r.fail_count.to_string(),
                r.seed.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::Io {
            path: "<results>".into(),
            source: e,
        })?;
        Ok(())
    }

    /// Reads the summary rows written by [`ResultsTable::write_csv`].
    pub fn read_csv<R: std::io::Read>(reader: R) -> Result<ResultsTable> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.iter().ne(RESULT_COLUMNS) {
            return Err(Error::Schema(format!(
                "expected columns {}",
                RESULT_COLUMNS.join(",")
            )));
        }
        let mut rows = Vec::new();
        for (k, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let bad = |j: usize| Error::Parse {
                row: k + 1,
                column: RESULT_COLUMNS[j].to_string(),
                value: rec[j].to_string(),
            };
            let num = |j: usize| -> Result<f64> {
                if rec[j].is_empty() {
                    Ok(f64::NAN)
                } else {
                    rec[j].parse().map_err(|_| bad(j))
                }
            };
            rows.push(ResultRow {
                n: rec[0].parse().map_err(|_| bad(0))?,
                alpha: rec[1].to_string(),
                estimator: rec[2].to_string(),
                dgp_variant: rec[3].to_string(),
                m: rec[4].parse().map_err(|_| bad(4))?,
                rmse: num(5)?,
                bias: num(6)?,
                sd: num(7)?,
                mean_se: num(8)?,
                coverage: num(9)?,
                fail_count: rec[10].parse().map_err(|_| bad(10))?,
                seed: rec[11].parse().map_err(|_| bad(11))?,
            });
        }
        Ok(ResultsTable {
            rows,
            replications: Vec::new(),
        })
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        self.write_csv(file)
    }
}

/// Empty for NaN so the column stays numeric-or-missing.
pub fn fmt_num(x: f64) -> String {
    if x.is_nan() {
        String::new()
    } else {
        format!("{x}")
    }
}

/// Summary statistics of replicated estimates around a true value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub rmse: f64,
    pub bias: f64,
    /// Uses the `M - 1` denominator.
    pub sd: f64,
    pub mean: f64,
    pub count: usize,
}

/// `rmse^2 = bias^2 + sd^2 (M - 1) / M`.
pub fn summarize(values: &[f64], truth: f64) -> Summary {
    let m = values.len();
    if m == 0 {
        return Summary {
            rmse: f64::NAN,
            bias: f64::NAN,
            sd: f64::NAN,
            mean: f64::NAN,
            count: 0,
        };
    }
    let mean = values.iter().sum::<f64>() / m as f64;
    let mse = values.iter().map(|v| (v - truth).powi(2)).sum::<f64>() / m as f64;
    let sd = if m > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1) as f64).sqrt()
    } else {
        0.0
    };
    Summary {
        rmse: mse.sqrt(),
        bias: mean - truth,
        sd,
        mean,
        count: m,
    }
}

/// Sample skewness and excess kurtosis (moment estimators).
pub fn skewness_kurtosis(values: &[f64]) -> (f64, f64) {
    let m = values.len() as f64;
    let mean = values.iter().sum::<f64>() / m;
    let m2 = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m;
    let m3 = values.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / m;
    let m4 = values.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / m;
    (m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0)
}

/// RNG for replication `index`.
pub fn replication_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

struct Context<'a> {
    spec: &'a SimulationSpec,
    data: Dataset,
    truth: NuisanceBundle,
    fold_seed: u64,
    grid: [f64; 1],
}

impl Context<'_> {
    fn record(&self, method: Method, value: Result<(f64, Option<f64>, Vec<f64>)>, retried: bool) -> EstimateRecord {
        let spec = self.spec;
        match value {
            Ok((theta, se, bandwidths)) => {
                let smoothed = (!bandwidths.is_empty()).then(|| {
                    bandwidths
                        .iter()
                        .map(|&h| smoothed_target(spec.variant, spec.eval_point, h, spec.smoothing.kernel))
                        .sum::<f64>()
                        / bandwidths.len() as f64
                });
                let covered = match (se, smoothed) {
                    (Some(se), Some(target)) => {
                        let z = z_value(spec.ci_level).expect("validated level");
                        Some((theta - target).abs() <= z * se)
                    }
                    _ => None,
                };
                EstimateRecord {
                    method,
                    theta_hat: Ok(theta),
                    se,
                    bandwidths,
                    smoothed_target: smoothed,
                    covered,
                    retried,
                }
            }
            Err(e) => EstimateRecord {
                method,
                theta_hat: Err(e.to_string()),
                se: None,
                bandwidths: Vec::new(),
                smoothed_target: None,
                covered: None,
                retried,
            },
        }
    }

    fn options(&self, policy: BandwidthPolicy) -> SmoothingOptions {
        SmoothingOptions {
            bandwidth: policy,
            ..self.spec.smoothing.clone()
        }
    }

    /// Runs `f` with the spec's bandwidth, retrying once with the fallback
    /// bandwidth when selection fails.
    fn with_retry<T>(&self, f: impl Fn(&SmoothingOptions) -> Result<T>) -> (Result<T>, bool) {
        let first = f(&self.options(self.spec.bandwidth.resolve(&self.data)));
        match first {
            Err(e) if matches!(e.root(), Error::Bandwidth(_)) => {
                let h = fallback_bandwidth(&self.data);
                (f(&self.options(BandwidthPolicy::Fixed(h))), true)
            }
            other => (other, false),
        }
    }

    fn dr(&self) -> (Result<(f64, Option<f64>, Vec<f64>)>, bool) {
        let spec = self.spec;
        let (res, retried) = match spec.mode {
            NuisanceMode::Synthetic { .. } => {
                let folds = match FoldAssignment::new(self.data.n(), 2, self.fold_seed) {
                    Ok(f) => f,
                    Err(e) => return (Err(e), false),
                };
                let noisy = &self.truth;
                self.with_retry(|opts| {
                    two_fold_dr_estimate(&self.data, noisy, &folds, &self.grid, opts, spec.ci_level)
                })
            }
            NuisanceMode::Fit => self.with_retry(|opts| {
                dr_estimate(&self.data, &self.fit_config(opts))
            }),
        };
        (
            res.map(|e| (e.theta_hat[0], e.se.map(|s| s[0]), e.bandwidths)),
            retried,
        )
    }

    fn fit_config(&self, opts: &SmoothingOptions) -> EstimationConfig {
        let spec = self.spec;
        EstimationConfig {
            smoothing: opts.clone(),
            grid: Some(self.grid.to_vec()),
            grid_points: 1,
            learner: spec.learner(),
            clip_rho_min: spec.clip_rho_min,
            clip_w_max: spec.clip_w_max,
            rotate: spec.rotate,
            ci_level: spec.ci_level,
            seed: self.fold_seed,
        }
    }

    fn supervised(&self) -> (Result<(f64, Option<f64>, Vec<f64>)>, bool) {
        let (res, retried) =
            self.with_retry(|opts| supervised_estimate(&self.data, &self.fit_config(opts)));
        (
            res.map(|e| (e.theta_hat[0], e.se.map(|s| s[0]), e.bandwidths)),
            retried,
        )
    }

    fn plugin(&self, nuisance: &NuisanceBundle) -> Result<f64> {
        let spec = self.spec;
        match spec.mode {
            NuisanceMode::Synthetic { .. } => {
                Ok(plugin_estimate(&nuisance.tau, &self.data, &self.grid).theta_hat[0])
            }
            NuisanceMode::Fit => {
                let opts = SmoothingOptions::default();
                Ok(crossfit_plugin_estimate(&self.data, &self.fit_config(&opts))?.theta_hat[0])
            }
        }
    }

    /// Local linear fit of the true pseudo-outcomes over the whole sample.
    fn oracle(&self, h: f64) -> Result<(f64, Option<f64>, Vec<f64>)> {
        let spec = self.spec;
        let rows: Vec<usize> = (0..self.data.n()).collect();
        let variant = spec.variant;
        let theta = move |a: f64| variant.theta(a);
        let truth = truth_bundle(spec.variant, spec.label_rate)
            .with_clipping(spec.clip_rho_min, spec.clip_w_max);
        let ps = pseudo_outcomes(&truth, &theta, &self.data, &rows);
        let fit = local_linear_or_fallback(&ps.treatments, &ps.phi, spec.eval_point, h, spec.smoothing.kernel)?;
        let se = if spec.smoothing.compute_se {
            Some(influence_se(&ps, &fit, &truth.tau, true, &self.data)?)
        } else {
            None
        };
        Ok((fit.estimate(), se, vec![h]))
    }
}

/// One replication of `spec`.
pub fn run_replication(spec: &SimulationSpec, index: usize) -> ReplicationResult {
    let mut rng = replication_rng(spec.seed, index);
    let (data, truth) = dgp_sample(spec.n, spec.variant, spec.label_rate, &mut rng);
    let truth = truth.with_clipping(spec.clip_rho_min, spec.clip_w_max);
    let nuisance = match spec.mode {
        NuisanceMode::Synthetic { alpha } => oracle_noisy_bundle(&truth, alpha, spec.n, &mut rng),
        NuisanceMode::Fit => truth,
    };
    let fold_seed = rng.next_u64();
    let ctx = Context {
        spec,
        data,
        truth: nuisance,
        fold_seed,
        grid: [spec.eval_point],
    };
    let mut records = Vec::with_capacity(spec.estimators.len());
    let mut dr_bandwidth = None;
    let mut order = spec.estimators.clone();
    // the oracle reuses the dr bandwidth, so dr runs first
    order.sort_by_key(|m| matches!(m, Method::Oracle));
    for method in order {
        let rec = match method {
            Method::Plugin => {
                let v = ctx.plugin(&ctx.truth).map(|t| (t, None, Vec::new()));
                ctx.record(method, v, false)
            }
            Method::Dr => {
                let (v, retried) = ctx.dr();
                if let Ok((_, _, hs)) = &v {
                    dr_bandwidth = Some(hs.iter().sum::<f64>() / hs.len() as f64);
                }
                ctx.record(method, v, retried)
            }
            Method::Supervised => {
                let (v, retried) = ctx.supervised();
                ctx.record(method, v, retried)
            }
            Method::Oracle => {
                let h = match (&spec.bandwidth.resolve(&ctx.data), dr_bandwidth) {
                    (BandwidthPolicy::Fixed(h), _) => *h,
                    (_, Some(h)) => h,
                    _ => fallback_bandwidth(&ctx.data),
                };
                ctx.record(method, ctx.oracle(h), false)
            }
        };
        records.push(rec);
    }
    records.sort_by_key(|r| spec.estimators.iter().position(|m| *m == r.method));
    ReplicationResult { index, records }
}

/// Runs `spec.m` replications and summarizes each estimator.
pub fn run_rmse_experiment(spec: &SimulationSpec) -> Result<ResultsTable> {
    spec.validate()?;
    let reps: Vec<ReplicationResult> = (0..spec.m)
        .into_par_iter()
        .map(|i| run_replication(spec, i))
        .collect();
    let truth = spec.theta_true();
    let mut rows = Vec::new();
    for &method in &spec.estimators {
        let recs: Vec<&EstimateRecord> = reps.iter().filter_map(|r| r.get(method)).collect();
        let values: Vec<f64> = recs.iter().filter_map(|r| r.theta_hat.clone().ok()).collect();
        let fail_count = recs.len() - values.len();
        if fail_count as f64 > 0.05 * spec.m as f64 {
            let first = recs
                .iter()
                .find_map(|r| r.theta_hat.clone().err())
                .unwrap_or_default();
            return Err(Error::Simulation(format!(
                "{} of {} replications failed for {} at n = {} (first error: {first})",
                fail_count,
                spec.m,
                spec.label(method),
                spec.n
            )));
        }
        let s = summarize(&values, truth);
        let ses: Vec<f64> = recs.iter().filter_map(|r| r.se).collect();
        let cover: Vec<bool> = recs.iter().filter_map(|r| r.covered).collect();
        rows.push(ResultRow {
            n: spec.n,
            alpha: spec.mode.to_string(),
            estimator: spec.label(method),
            dgp_variant: spec.variant.to_string(),
            m: spec.m,
            rmse: s.rmse,
            bias: s.bias,
            sd: s.sd,
            mean_se: if ses.is_empty() {
                f64::NAN
            } else {
                ses.iter().sum::<f64>() / ses.len() as f64
            },
            coverage: if cover.is_empty() {
                f64::NAN
            } else {
                cover.iter().filter(|c| **c).count() as f64 / cover.len() as f64
            },
            fail_count,
            seed: spec.seed,
        });
    }
    Ok(ResultsTable {
        rows,
        replications: vec![reps],
    })
}

/// Plug-in versus doubly robust with correct and quadratic-free outcome
/// models across `ns` (fit mode).
pub fn run_misspecification_study(
    base: &SimulationSpec,
    ns: &[usize],
    progress: &(dyn Fn(&SimulationSpec) + Sync),
) -> Result<ResultsTable> {
    let mut table = ResultsTable::default();
    for misspecify in [false, true] {
        for &n in ns {
            let spec = SimulationSpec {
                n,
                mode: NuisanceMode::Fit,
                estimators: vec![Method::Plugin, Method::Dr],
                misspecify_outcome: misspecify,
                ..base.clone()
            };
            progress(&spec);
            table.extend(run_rmse_experiment(&spec)?);
        }
    }
    Ok(table)
}

/// Supervised (labeled rows only) versus semi-supervised doubly robust
/// across `ns` (fit mode, correct models).
pub fn run_supervised_comparison(
    base: &SimulationSpec,
    ns: &[usize],
    progress: &(dyn Fn(&SimulationSpec) + Sync),
) -> Result<ResultsTable> {
    let mut table = ResultsTable::default();
    for &n in ns {
        let spec = SimulationSpec {
            n,
            mode: NuisanceMode::Fit,
            estimators: vec![Method::Supervised, Method::Dr],
            misspecify_outcome: false,
            ..base.clone()
        };
        progress(&spec);
        table.extend(run_rmse_experiment(&spec)?);
    }
    Ok(table)
}

/// Asymptotic variance of the supervised estimator minus that of the
/// semi-supervised one at `a`, under labeling completely at random:
///
/// ```text
/// (1/rho - 1) E[Var(mu | A, V) w^2 | A = a] int K^2 / (n h f(a))
/// ```
///
/// `E[w^2 | A = a] = E_V[f(a) / pi(a | V)]` is integrated by Monte Carlo
/// over `draws` covariate vectors; `Var(mu | A, V) = 0.02` for independent
/// surrogates.
pub fn predicted_variance_gap(
    a: f64,
    n: usize,
    h: f64,
    kernel: crate::smoother::Kernel,
    label_rate: f64,
    draws: usize,
    seed: u64,
) -> f64 {
    use rand::Rng;
    use rand_distr::StandardNormal;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f = marginal_density(a);
    let mut acc = 0.0;
    for _ in 0..draws {
        let v: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
        acc += f / crate::nuisance::normal_pdf(a, lambda(&v), 1.0);
    }
    let ew2 = acc / draws as f64;
    (1.0 / label_rate - 1.0) * 0.02 * ew2 * kernel.roughness() / (n as f64 * h * f)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rmse_identity() {
        let v = [0.9, 1.3, 0.7, 1.05, 1.2];
        let s = summarize(&v, 1.0);
        let m = v.len() as f64;
        let lhs = s.rmse * s.rmse;
        let rhs = s.bias * s.bias + s.sd * s.sd * (m - 1.0) / m;
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn streams_differ_and_repeat() {
        let a = replication_rng(7, 0).next_u64();
        let b = replication_rng(7, 1).next_u64();
        assert_ne!(a, b);
        assert_eq!(a, replication_rng(7, 0).next_u64());
    }

    #[test]
    fn small_run_is_deterministic() {
        let spec = SimulationSpec {
            n: 200,
            m: 4,
            estimators: vec![Method::Plugin, Method::Dr, Method::Oracle],
            ..Default::default()
        };
        let t1 = run_rmse_experiment(&spec).unwrap();
        let t2 = run_rmse_experiment(&spec).unwrap();
        let mut b1 = Vec::new();
        let mut b2 = Vec::new();
        t1.write_csv(&mut b1).unwrap();
        t2.write_csv(&mut b2).unwrap();
        assert_eq!(b1, b2);
        assert_eq!(t1.rows.len(), 3);
    }

    #[test]
    fn spec_validation() {
        let bad = SimulationSpec {
            n: 10,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = SimulationSpec {
            estimators: vec![Method::Supervised],
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn fit_mode_runs() {
        let spec = SimulationSpec {
            n: 300,
            m: 2,
            mode: NuisanceMode::Fit,
            estimators: vec![Method::Plugin, Method::Dr, Method::Supervised, Method::Oracle],
            ..Default::default()
        };
        let t = run_rmse_experiment(&spec).unwrap();
        assert_eq!(t.rows.len(), 4);
        assert!(t.rows.iter().all(|r| r.fail_count == 0));
    }
}
