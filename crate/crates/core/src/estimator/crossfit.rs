use rayon::prelude::*;

use super::pseudo::{influence_se, pseudo_outcomes, InitialEstimate, PseudoOutcomeSet};
use super::{default_grid, DoseResponseEstimate, Method};
use crate::data::{validate, Dataset, Fold, FoldAssignment};
use crate::error::{Error, Result};
use crate::nuisance::{
    estimate_marginal_density, ClipCounts, NuisanceBundle, NuisanceLearner, ParametricLearner,
    DEFAULT_CLIP_RHO_MIN, DEFAULT_CLIP_W_MAX,
};
use crate::smoother::{choose_bandwidth, local_linear_or_fallback, BandwidthPolicy, Kernel};

/// Smoothing step shared by every cross-fitted estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothingOptions {
    pub kernel: Kernel,
    pub bandwidth: BandwidthPolicy,
    pub compute_se: bool,
}

impl Default for SmoothingOptions {
    fn default() -> Self {
        SmoothingOptions {
            kernel: Kernel::default(),
            bandwidth: BandwidthPolicy::default(),
            compute_se: true,
        }
    }
}

/// Settings for [`dr_estimate`].
#[derive(Debug, Clone)]
pub struct EstimationConfig {
    pub smoothing: SmoothingOptions,
    /// Evaluation grid; `None` uses `grid_points` between the 5th and 95th
    /// percentiles of the treatment.
    pub grid: Option<Vec<f64>>,
    pub grid_points: usize,
    pub learner: ParametricLearner,
    pub clip_rho_min: f64,
    pub clip_w_max: f64,
    /// Average over the three cyclic role rotations instead of using one.
    pub rotate: bool,
    pub ci_level: f64,
    pub seed: u64,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        EstimationConfig {
            smoothing: SmoothingOptions::default(),
            grid: None,
            grid_points: 25,
            learner: ParametricLearner::default(),
            clip_rho_min: DEFAULT_CLIP_RHO_MIN,
            clip_w_max: DEFAULT_CLIP_W_MAX,
            rotate: true,
            ci_level: 0.95,
            seed: 0,
        }
    }
}

impl EstimationConfig {
    pub fn grid_for(&self, data: &Dataset) -> Result<Vec<f64>> {
        match &self.grid {
            Some(g) if g.is_empty() => Err(Error::Config("evaluation grid is empty".into())),
            Some(g) => Ok(g.clone()),
            None => default_grid(data.treatments(), self.grid_points),
        }
    }
}

/// Output of smoothing pseudo-outcomes on one target fold.
#[derive(Debug, Clone)]
pub struct FoldSmoothing {
    pub theta: Vec<f64>,
    pub se: Option<Vec<f64>>,
    pub bandwidth: f64,
    pub n_window: Vec<usize>,
    pub fallback: Vec<bool>,
    pub clips: ClipCounts,
    pub target: PseudoOutcomeSet,
}

/// Chooses the bandwidth from pseudo-outcomes on `select_rows` (unless the
/// policy is fixed), then smooths pseudo-outcomes on `target_rows`.
/// `bundle.f` should already be the marginal estimate for this split.
#[allow(clippy::too_many_arguments)]
pub fn smooth_on_fold(
    data: &Dataset,
    bundle: &NuisanceBundle,
    theta0: &InitialEstimate,
    select_rows: &[usize],
    target_rows: &[usize],
    grid: &[f64],
    opts: &SmoothingOptions,
) -> Result<FoldSmoothing> {
    let th0 = |a: f64| theta0.eval(a);
    let mut clips = ClipCounts::default();
    let h = match &opts.bandwidth {
        BandwidthPolicy::Fixed(h) => *h,
        policy => {
            let sel = pseudo_outcomes(bundle, &th0, data, select_rows);
            clips = clips + sel.clips;
            choose_bandwidth(&sel.treatments, &sel.phi, policy, opts.kernel)?
        }
    };
    let target = pseudo_outcomes(bundle, &th0, data, target_rows);
    clips = clips + target.clips;
    let mut theta = Vec::with_capacity(grid.len());
    let mut se = Vec::with_capacity(grid.len());
    let mut n_window = Vec::with_capacity(grid.len());
    let mut fallback = Vec::with_capacity(grid.len());
    for &a in grid {
        let fit = local_linear_or_fallback(&target.treatments, &target.phi, a, h, opts.kernel)?;
        if opts.compute_se {
            se.push(influence_se(&target, &fit, &bundle.tau, bundle.tau_affine_in_v, data)?);
        }
        theta.push(fit.estimate());
        n_window.push(fit.n_window);
        fallback.push(fit.fallback);
    }
    Ok(FoldSmoothing {
        theta,
        se: opts.compute_se.then_some(se),
        bandwidth: h,
        n_window,
        fallback,
        clips,
        target,
    })
}

/// Averages per-split results. Splits smooth disjoint target folds, so the
/// variance of the average is `sum se_r^2 / R^2`.
fn combine(
    method: Method,
    grid: &[f64],
    parts: &[FoldSmoothing],
    ci_level: f64,
) -> Result<DoseResponseEstimate> {
    let r = parts.len() as f64;
    let k = grid.len();
    let theta = (0..k)
        .map(|g| parts.iter().map(|p| p.theta[g]).sum::<f64>() / r)
        .collect();
    let mut est = DoseResponseEstimate::new(method, grid.to_vec(), theta);
    est.bandwidths = parts.iter().map(|p| p.bandwidth).collect();
    est.n_effective = (0..k).map(|g| parts.iter().map(|p| p.n_window[g]).sum()).collect();
    est.fallback = (0..k).map(|g| parts.iter().any(|p| p.fallback[g])).collect();
    est.clip_counts = parts.iter().fold(ClipCounts::default(), |acc, p| acc + p.clips);
    est.ci_level = ci_level;
    if parts.iter().all(|p| p.se.is_some()) {
        let se = (0..k)
            .map(|g| {
                parts
                    .iter()
                    .map(|p| p.se.as_ref().unwrap()[g].powi(2))
                    .sum::<f64>()
                    .sqrt()
                    / r
            })
            .collect();
        est = est.with_se(se, ci_level)?;
    }
    Ok(est)
}

fn fit_bundle(
    data: &Dataset,
    learner: &dyn NuisanceLearner,
    d1: &[usize],
    d2: &[usize],
    config: &EstimationConfig,
) -> Result<NuisanceBundle> {
    let ctx = |e: Error| e.context("fitting nuisances on fold D1");
    let mu = learner.fit_outcome(data, d1).map_err(ctx)?;
    let tau = learner.fit_tau(data, d1, &mu).map_err(ctx)?;
    let rho = learner.fit_propensity(data, d1).map_err(ctx)?;
    let pi = learner.fit_density(data, d1).map_err(ctx)?;
    let f = estimate_marginal_density(pi.clone(), data, d2)
        .map_err(|e| e.context("marginal density on fold D2"))?
        .into_curve_fn();
    Ok(NuisanceBundle::new(mu, tau, rho, pi, f)
        .with_clipping(config.clip_rho_min, config.clip_w_max)
        .with_affine_tau(learner.tau_affine_in_v()))
}

fn check_config(config: &EstimationConfig) -> Result<()> {
    if !(config.clip_rho_min > 0.0 && config.clip_rho_min <= 1.0) {
        return Err(Error::Config(format!(
            "clip_rho_min must be in (0, 1], got {}",
            config.clip_rho_min
        )));
    }
    if !(config.clip_w_max > 0.0) {
        return Err(Error::Config(format!(
            "clip_w_max must be positive, got {}",
            config.clip_w_max
        )));
    }
    super::z_value(config.ci_level)?;
    Ok(())
}

/// Three-fold cross-fitted doubly robust estimate with the parametric
/// learner from `config`.
pub fn dr_estimate(data: &Dataset, config: &EstimationConfig) -> Result<DoseResponseEstimate> {
    dr_estimate_with(data, config, &config.learner)
}

/// Nuisances are fit on D1; `f` and `theta0` are averaged over D2, where the
/// bandwidth is also chosen; pseudo-outcomes are smoothed on T. With
/// `config.rotate` the three cyclic role assignments are averaged.
pub fn dr_estimate_with(
    data: &Dataset,
    config: &EstimationConfig,
    learner: &dyn NuisanceLearner,
) -> Result<DoseResponseEstimate> {
    check_config(config)?;
    let report = validate(data);
    if report.is_fatal() {
        return Err(Error::Consistency {
            row: 0,
            message: report
                .flags
                .iter()
                .filter(|f| f.fatal)
                .map(|f| f.message.clone())
                .collect::<Vec<_>>()
                .join("; "),
        });
    }
    let grid = config.grid_for(data)?;
    let folds = FoldAssignment::new(data.n(), 3, config.seed)?;
    let fold_rows: Vec<Vec<usize>> = (0..3).map(|k| folds.rows(Fold::from_index(k))).collect();
    let rotations: Vec<usize> = if config.rotate { vec![0, 1, 2] } else { vec![0] };
    let parts = rotations
        .par_iter()
        .map(|&r| {
            let d1 = &fold_rows[r];
            let d2 = &fold_rows[(r + 1) % 3];
            let t = &fold_rows[(r + 2) % 3];
            let run = || -> Result<FoldSmoothing> {
                let bundle = fit_bundle(data, learner, d1, d2, config)?;
                let theta0 =
                    InitialEstimate::new(bundle.tau.clone(), bundle.tau_affine_in_v, data, d2)?;
                smooth_on_fold(data, &bundle, &theta0, d2, t, &grid, &config.smoothing)
            };
            run().map_err(|e| e.context(format!("cross-fitting rotation {r}")))
        })
        .collect::<Result<Vec<_>>>()?;
    combine(Method::Dr, &grid, &parts, config.ci_level)
}

/// Pseudo-outcomes that bandwidth selection sees in the first rotation:
/// nuisances fit on D1, `f` and `theta0` from D2, evaluated on D2.
pub fn selection_pseudo_outcomes(
    data: &Dataset,
    config: &EstimationConfig,
) -> Result<PseudoOutcomeSet> {
    check_config(config)?;
    let folds = FoldAssignment::new(data.n(), 3, config.seed)?;
    let (d1, d2) = (folds.rows(Fold::D1), folds.rows(Fold::D2));
    let bundle = fit_bundle(data, &config.learner, &d1, &d2, config)?;
    let theta0 = InitialEstimate::new(bundle.tau.clone(), bundle.tau_affine_in_v, data, &d2)?;
    Ok(pseudo_outcomes(&bundle, &|a| theta0.eval(a), data, &d2))
}

/// Plug-in estimate with `mu` and `tau` fit on one half and averaged over
/// the other, then the halves swap.
pub fn crossfit_plugin_estimate(
    data: &Dataset,
    config: &EstimationConfig,
) -> Result<DoseResponseEstimate> {
    let grid = config.grid_for(data)?;
    let folds = FoldAssignment::new(data.n(), 2, config.seed)?;
    let learner = &config.learner;
    let mut theta = vec![0.0; grid.len()];
    for (d, t) in [(Fold::D1, Fold::D2), (Fold::D2, Fold::D1)] {
        let (dr, tr) = (folds.rows(d), folds.rows(t));
        let ctx = |e: Error| e.context("fitting the outcome model for the plug-in");
        let mu = learner.fit_outcome(data, &dr).map_err(ctx)?;
        let tau = learner.fit_tau(data, &dr, &mu).map_err(ctx)?;
        let half = super::plugin_on_rows(&tau, data, &tr, &grid);
        for (acc, v) in theta.iter_mut().zip(half.theta_hat) {
            *acc += v / 2.0;
        }
    }
    let mut est = DoseResponseEstimate::new(Method::Plugin, grid.clone(), theta);
    est.n_effective = vec![data.n(); grid.len()];
    Ok(est)
}

/// Doubly robust estimate from labeled rows only, with surrogates dropped
/// and no label propensity.
pub fn supervised_estimate(
    data: &Dataset,
    config: &EstimationConfig,
) -> Result<DoseResponseEstimate> {
    let grid = config.grid_for(data)?;
    let labeled = data.subset(&data.labeled_rows()).without_surrogates();
    let cfg = EstimationConfig {
        grid: Some(grid),
        ..config.clone()
    };
    let mut est = dr_estimate(&labeled, &cfg)?;
    est.method = Method::Supervised;
    Ok(est)
}

/// Two-fold estimate with nuisances given in advance: `f` and `theta0` come
/// from D together with the bandwidth, pseudo-outcomes are smoothed on T,
/// then D and T swap and the two curves are averaged.
pub fn two_fold_dr_estimate(
    data: &Dataset,
    bundle: &NuisanceBundle,
    folds: &FoldAssignment,
    grid: &[f64],
    opts: &SmoothingOptions,
    ci_level: f64,
) -> Result<DoseResponseEstimate> {
    if folds.k() != 2 {
        return Err(Error::Config(format!(
            "two-fold estimate needs 2 folds, got {}",
            folds.k()
        )));
    }
    let rows = [folds.rows(Fold::from_index(0)), folds.rows(Fold::from_index(1))];
    let parts = [(0usize, 1usize), (1, 0)]
        .iter()
        .map(|&(d, t)| {
            let f = estimate_marginal_density(bundle.pi.clone(), data, &rows[d])?.into_curve_fn();
            let b = bundle.with_marginal(f);
            let theta0 = InitialEstimate::new(b.tau.clone(), b.tau_affine_in_v, data, &rows[d])?;
            smooth_on_fold(data, &b, &theta0, &rows[d], &rows[t], grid, opts)
        })
        .collect::<Result<Vec<_>>>()?;
    combine(Method::Dr, grid, &parts, ci_level)
}
