//! Flat `key=value` run configuration.
//!
//! Every key has a default, files and command-line flags override it in that
//! order, and unknown keys are rejected. The resolved map is what gets logged
//! and written next to each output.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use dose_dr_core::estimator::{EstimationConfig, Method, SmoothingOptions};
use dose_dr_core::nuisance::{FeatureMap, Interactions, ParametricLearner};
use dose_dr_core::simulation::{BandwidthRule, DgpVariant, NuisanceMode, SimulationSpec};
use dose_dr_core::smoother::{BandwidthPolicy, Kernel};

use crate::CliError;

/// `(key, default, description)`.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("method", "dr", "estimators for `estimate`: dr, plugin, supervised (comma list)"),
    ("seed", "0", "seed for fold splits and simulation streams"),
    ("smoother.kernel", "epanechnikov", "epanechnikov, uniform or gaussian"),
    ("smoother.bandwidth", "auto", "auto (LOOCV over the grid), a fixed h, or rate:<c> for c n^-1/5 range(A)"),
    ("smoother.bandwidth_grid", "geom:0.05:1:20", "geom:<lo>:<hi>:<count> as fractions of range(A), or a list h1,h2,..."),
    ("smoother.grid", "auto", "evaluation grid lo:hi:count, or auto"),
    ("smoother.grid_points", "25", "points of the auto grid (5th to 95th percentile of A)"),
    ("features.quadratic_a", "true", "include a^2 in the outcome models"),
    ("features.interactions", "all", "a x covariate interactions: all, none, or covariate indices"),
    ("nuisance.clip_rho_min", "0.01", "floor on the label propensity"),
    ("nuisance.clip_w_max", "50", "cap on the stabilized weight f/pi"),
    ("estimator.cross_fit_rotation", "true", "average the three cyclic fold rotations"),
    ("estimator.ci_level", "0.95", "0.90, 0.95 or 0.99"),
    ("estimator.compute_se", "true", "compute influence-function standard errors"),
    ("simulation.n", "500", "sample sizes (comma list)"),
    ("simulation.alpha", "0.1", "nuisance error exponents: list, lo:hi:step, or fit"),
    ("simulation.m", "500", "replications per cell"),
    ("simulation.variant", "independent_surrogates", "independent_surrogates or dependent_surrogates"),
    ("simulation.estimators", "plugin,dr", "subset of plugin, dr, oracle, supervised"),
    ("simulation.misspecify_outcome", "false", "drop a^2 from the fitted outcome models"),
    ("simulation.eval_point", "1", "evaluation point a*"),
    ("simulation.label_rate", "0.5", "probability that Y is observed"),
];

#[derive(Debug, Clone)]
pub struct RunConfig {
    values: BTreeMap<&'static str, String>,
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::usage(msg)
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value
        .trim()
        .parse()
        .map_err(|_| usage(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, CliError> {
    match value.trim().to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(usage(format!("{key}: expected true or false, got {value:?}"))),
    }
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, CliError> {
    let items: Vec<&str> = value
        .trim()
        .trim_start_matches('[')
        .trim_end_matches(']')
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .collect();
    if items.is_empty() {
        return Err(usage(format!("{key}: empty list")));
    }
    items.iter().map(|s| parse(key, s)).collect()
}

/// `lo:hi:count` with `count >= 1`.
pub fn parse_grid_spec(key: &str, value: &str) -> Result<(f64, f64, usize), CliError> {
    let parts: Vec<&str> = value.split(':').collect();
    if parts.len() != 3 {
        return Err(usage(format!("{key}: expected lo:hi:count, got {value:?}")));
    }
    let lo: f64 = parse(key, parts[0])?;
    let hi: f64 = parse(key, parts[1])?;
    let count: usize = parse(key, parts[2])?;
    if count == 0 {
        return Err(usage(format!("{key}: grid is empty")));
    }
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
        return Err(usage(format!("{key}: need finite lo <= hi, got {value:?}")));
    }
    Ok((lo, hi, count))
}

/// `geom:lo:hi:count` or an explicit list of bandwidths.
pub fn parse_bandwidth_grid(key: &str, value: &str) -> Result<BandwidthPolicy, CliError> {
    let value = value.trim();
    let policy = if let Some(rest) = value.strip_prefix("geom:") {
        let (lo, hi, count) = parse_grid_spec(key, rest)?;
        BandwidthPolicy::Geometric { lo, hi, count }
    } else {
        BandwidthPolicy::Grid(parse_list(key, value)?)
    };
    // range 1 is enough to catch non-positive candidates
    policy.candidates(1.0).map_err(|e| usage(format!("{key}: {e}")))?;
    Ok(policy)
}

/// Values from `lo` to `hi` inclusive in steps of `step`, rounded so that
/// `0.1:0.4:0.03` prints as `0.13` rather than `0.13000000000000003`.
fn parse_stepped(key: &str, value: &str) -> Result<Vec<f64>, CliError> {
    let parts: Vec<&str> = value.split(':').collect();
    if parts.len() != 3 {
        return Err(usage(format!("{key}: expected lo:hi:step, got {value:?}")));
    }
    let lo: f64 = parse(key, parts[0])?;
    let hi: f64 = parse(key, parts[1])?;
    let step: f64 = parse(key, parts[2])?;
    if !(step > 0.0 && lo <= hi) {
        return Err(usage(format!("{key}: need lo <= hi and step > 0")));
    }
    let count = ((hi - lo) / step + 1e-9).floor() as usize + 1;
    Ok((0..count)
        .map(|k| ((lo + k as f64 * step) * 1e10).round() / 1e10)
        .collect())
}

fn parse_interactions(key: &str, value: &str) -> Result<Interactions, CliError> {
    match value.trim().to_ascii_lowercase().as_str() {
        "all" => Ok(Interactions::All),
        "none" | "[]" => Ok(Interactions::None),
        _ => Ok(Interactions::Indices(parse_list(key, value)?)),
    }
}

/// How the bandwidth is set for one dataset.
#[derive(Debug, Clone, PartialEq)]
pub enum BandwidthSetting {
    Policy(BandwidthPolicy),
    Rate(f64),
}

impl BandwidthSetting {
    pub fn policy_for(&self, n: usize, range: f64) -> BandwidthPolicy {
        match self {
            BandwidthSetting::Policy(p) => p.clone(),
            BandwidthSetting::Rate(c) => BandwidthPolicy::Fixed(c * (n as f64).powf(-0.2) * range),
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            values: KEYS.iter().map(|(k, v, _)| (*k, v.to_string())).collect(),
        }
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let key = key.trim();
        match KEYS.iter().find(|(k, _, _)| *k == key) {
            Some((k, _, _)) => {
                self.values.insert(k, value.trim().to_string());
                Ok(())
            }
            None => Err(usage(format!("unknown config key '{key}'"))),
        }
    }

    /// `key=value` assignment as given to `--set`.
    pub fn apply(&mut self, assignment: &str) -> Result<(), CliError> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| usage(format!("expected key=value, got {assignment:?}")))?;
        self.set(k, v)
    }

    /// Reads `key=value` lines; `#` starts a comment.
    pub fn load_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            self.apply(line)
                .map_err(|e| usage(format!("{}:{}: {}", path.display(), i + 1, e.message)))?;
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> &str {
        self.values
            .get(key)
            .unwrap_or_else(|| panic!("config key '{key}' has no default"))
    }

    fn typed<T: FromStr>(&self, key: &str) -> Result<T, CliError> {
        parse(key, self.get(key))
    }

    fn flag(&self, key: &str) -> Result<bool, CliError> {
        parse_bool(key, self.get(key))
    }

    /// Every key with its resolved value, one `key = value` per line.
    pub fn render(&self) -> String {
        self.values
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// Checks every key so that errors surface before any work starts.
    pub fn validate(&self) -> Result<(), CliError> {
        self.methods()?;
        self.seed()?;
        self.kernel()?;
        self.bandwidth()?;
        self.eval_grid()?;
        self.estimation_config()?;
        self.sample_sizes()?;
        self.modes()?;
        self.simulation_template()?;
        Ok(())
    }

    pub fn methods(&self) -> Result<Vec<Method>, CliError> {
        let methods: Vec<Method> = parse_list("method", self.get("method"))?;
        if let Some(m) = methods.iter().find(|m| **m == Method::Oracle) {
            return Err(usage(format!("method: {m} needs the true data-generating process")));
        }
        Ok(methods)
    }

    pub fn seed(&self) -> Result<u64, CliError> {
        self.typed("seed")
    }

    pub fn kernel(&self) -> Result<Kernel, CliError> {
        self.get("smoother.kernel")
            .parse()
            .map_err(|e: String| usage(format!("smoother.kernel: {e}")))
    }

    pub fn bandwidth(&self) -> Result<BandwidthSetting, CliError> {
        let key = "smoother.bandwidth";
        let v = self.get(key);
        if v.eq_ignore_ascii_case("auto") {
            return Ok(BandwidthSetting::Policy(parse_bandwidth_grid(
                "smoother.bandwidth_grid",
                self.get("smoother.bandwidth_grid"),
            )?));
        }
        if let Some(c) = v.strip_prefix("rate:") {
            let c: f64 = parse(key, c)?;
            if !(c > 0.0 && c.is_finite()) {
                return Err(usage(format!("{key}: rate factor must be positive")));
            }
            return Ok(BandwidthSetting::Rate(c));
        }
        let h: f64 = parse(key, v)?;
        if !(h > 0.0 && h.is_finite()) {
            return Err(usage(format!("{key}: bandwidth must be positive, got {v}")));
        }
        Ok(BandwidthSetting::Policy(BandwidthPolicy::Fixed(h)))
    }

    pub fn eval_grid(&self) -> Result<Option<Vec<f64>>, CliError> {
        let v = self.get("smoother.grid");
        if v.eq_ignore_ascii_case("auto") {
            return Ok(None);
        }
        let (lo, hi, count) = parse_grid_spec("smoother.grid", v)?;
        Ok(Some(dose_dr_core::estimator::linspace(lo, hi, count)))
    }

    fn outcome_features(&self) -> Result<FeatureMap, CliError> {
        Ok(FeatureMap {
            treatment: true,
            quadratic_a: self.flag("features.quadratic_a")?,
            interactions: parse_interactions("features.interactions", self.get("features.interactions"))?,
        })
    }

    /// Estimation settings; a `rate:` bandwidth is left as the default policy
    /// and must be resolved against the data with [`RunConfig::bandwidth`].
    pub fn estimation_config(&self) -> Result<EstimationConfig, CliError> {
        let bandwidth = match self.bandwidth()? {
            BandwidthSetting::Policy(p) => p,
            BandwidthSetting::Rate(_) => BandwidthPolicy::default(),
        };
        let grid_points: usize = self.typed("smoother.grid_points")?;
        if grid_points == 0 {
            return Err(usage("smoother.grid_points must be at least 1"));
        }
        let config = EstimationConfig {
            smoothing: SmoothingOptions {
                kernel: self.kernel()?,
                bandwidth,
                compute_se: self.flag("estimator.compute_se")?,
            },
            grid: self.eval_grid()?,
            grid_points,
            learner: ParametricLearner {
                outcome: self.outcome_features()?,
                ..ParametricLearner::default()
            },
            clip_rho_min: self.typed("nuisance.clip_rho_min")?,
            clip_w_max: self.typed("nuisance.clip_w_max")?,
            rotate: self.flag("estimator.cross_fit_rotation")?,
            ci_level: self.typed("estimator.ci_level")?,
            seed: self.seed()?,
        };
        dose_dr_core::estimator::z_value(config.ci_level)
            .map_err(|e| usage(format!("estimator.ci_level: {e}")))?;
        if !(config.clip_rho_min > 0.0 && config.clip_rho_min <= 1.0) {
            return Err(usage("nuisance.clip_rho_min must be in (0, 1]"));
        }
        if !(config.clip_w_max > 0.0) {
            return Err(usage("nuisance.clip_w_max must be positive"));
        }
        Ok(config)
    }

    pub fn sample_sizes(&self) -> Result<Vec<usize>, CliError> {
        parse_list("simulation.n", self.get("simulation.n"))
    }

    pub fn modes(&self) -> Result<Vec<NuisanceMode>, CliError> {
        let key = "simulation.alpha";
        let v = self.get(key);
        if v.eq_ignore_ascii_case("fit") {
            return Ok(vec![NuisanceMode::Fit]);
        }
        let alphas = if v.contains(':') {
            parse_stepped(key, v)?
        } else {
            parse_list(key, v)?
        };
        Ok(alphas
            .into_iter()
            .map(|alpha| NuisanceMode::Synthetic { alpha })
            .collect())
    }

    /// Simulation settings without `n` and `mode`, which vary across cells.
    pub fn simulation_template(&self) -> Result<SimulationSpec, CliError> {
        let est = self.estimation_config()?;
        let bandwidth = match self.bandwidth()? {
            BandwidthSetting::Policy(p) => BandwidthRule::Policy(p),
            BandwidthSetting::Rate(factor) => BandwidthRule::RateRange { factor },
        };
        let variant: DgpVariant = self
            .get("simulation.variant")
            .parse()
            .map_err(|e: String| usage(format!("simulation.variant: {e}")))?;
        let m: usize = self.typed("simulation.m")?;
        if m == 0 {
            return Err(usage("simulation.m must be at least 1"));
        }
        Ok(SimulationSpec {
            m,
            variant,
            estimators: parse_list("simulation.estimators", self.get("simulation.estimators"))?,
            misspecify_outcome: self.flag("simulation.misspecify_outcome")?,
            seed: est.seed,
            eval_point: self.typed("simulation.eval_point")?,
            label_rate: self.typed("simulation.label_rate")?,
            smoothing: est.smoothing,
            bandwidth,
            ci_level: est.ci_level,
            clip_rho_min: est.clip_rho_min,
            clip_w_max: est.clip_w_max,
            rotate: est.rotate,
            outcome_features: est.learner.outcome,
            ..SimulationSpec::default()
        })
    }

    /// One spec per `(n, alpha)` cell, `n` varying slowest.
    pub fn simulation_specs(&self) -> Result<Vec<SimulationSpec>, CliError> {
        let template = self.simulation_template()?;
        let mut specs = Vec::new();
        for n in self.sample_sizes()? {
            for mode in self.modes()? {
                let spec = SimulationSpec {
                    n,
                    mode,
                    ..template.clone()
                };
                spec.validate().map_err(|e| usage(e.to_string()))?;
                specs.push(spec);
            }
        }
        Ok(specs)
    }
}
