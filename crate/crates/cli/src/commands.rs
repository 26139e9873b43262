use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::ValueEnum;
use dose_dr_core::data::{load_csv, validate, CsvSchema, Dataset};
use dose_dr_core::estimator::{
    crossfit_plugin_estimate, dr_estimate, selection_pseudo_outcomes, supervised_estimate,
    write_estimate_csv, DoseResponseEstimate, EstimationConfig, Method,
};
use dose_dr_core::simulation::{
    run_misspecification_study, run_rmse_experiment, run_supervised_comparison, ResultsTable,
    SimulationSpec,
};
use dose_dr_core::smoother::{loocv_scores, select_bandwidth};

use crate::config::RunConfig;
use crate::{CliError, InputArgs};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Study {
    Misspecification,
    Supervised,
}

pub struct Log {
    pub quiet: bool,
}

impl Log {
    pub fn line(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }
}

/// Defaults, then the file, then `--set`, then dedicated flags.
pub fn resolve(
    file: Option<&Path>,
    sets: &[String],
    seed: Option<u64>,
    flags: &[String],
) -> Result<RunConfig, CliError> {
    let mut config = RunConfig::default();
    if let Some(path) = file {
        config.load_file(path)?;
    }
    for s in sets.iter().chain(flags) {
        config.apply(s)?;
    }
    if let Some(seed) = seed {
        config.set("seed", &seed.to_string())?;
    }
    config.validate()?;
    Ok(config)
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError {
        code: 1,
        message: format!("cannot write {}: {e}", path.display()),
    }
}

/// Logs the resolved config and, when writing to a file, saves it as
/// `<out>.cfg` so the run can be repeated with `--config`.
fn record_config(config: &RunConfig, command: &str, out: Option<&Path>, log: &Log) -> Result<(), CliError> {
    let text = config.render();
    log.line(format!("# {command}: resolved configuration"));
    for line in text.lines() {
        log.line(format!("#   {line}"));
    }
    if let Some(out) = out {
        let mut path = out.as_os_str().to_owned();
        path.push(".cfg");
        let path = PathBuf::from(path);
        std::fs::write(&path, format!("# dose-dr {command}\n{text}")).map_err(|e| io_error(&path, e))?;
    }
    Ok(())
}

fn write_output(out: Option<&Path>, f: impl FnOnce(&mut dyn Write) -> Result<(), CliError>) -> Result<(), CliError> {
    match out {
        Some(path) => {
            let file = File::create(path).map_err(|e| io_error(path, e))?;
            let mut w = BufWriter::new(file);
            f(&mut w)?;
            w.flush().map_err(|e| io_error(path, e))
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            f(&mut lock)?;
            lock.flush().map_err(|e| io_error(Path::new("<stdout>"), e))
        }
    }
}

/// Checks the header first so that a wrong column name is reported against
/// the flag that supplied it.
fn load_input(input: &InputArgs, outcome: &str) -> Result<Dataset, CliError> {
    let path = &input.input;
    let file = File::open(path).map_err(|e| CliError::usage(format!("cannot open --input {}: {e}", path.display())))?;
    let header = csv_header(file)
        .map_err(|e| CliError::usage(format!("cannot read header of {}: {e}", path.display())))?;
    let mut wanted: Vec<(&str, &str)> = vec![("--treatment", input.treatment.as_str()), ("--outcome", outcome)];
    wanted.extend(input.covariates.iter().map(|c| ("--covariates", c.as_str())));
    wanted.extend(input.surrogates.iter().map(|c| ("--surrogates", c.as_str())));
    if let Some(l) = &input.label {
        wanted.push(("--label", l.as_str()));
    }
    for (flag, col) in wanted {
        if !header.iter().any(|h| h == col) {
            return Err(CliError::usage(format!(
                "column '{col}' given by {flag} not found in {}",
                path.display()
            )));
        }
    }
    let schema = CsvSchema {
        treatment: input.treatment.clone(),
        outcome: outcome.to_string(),
        covariates: input.covariates.clone(),
        surrogates: input.surrogates.clone(),
        label: input.label.clone(),
    };
    Ok(load_csv(path, &schema)?)
}

/// Header fields of a CSV file, without reading further.
fn csv_header(file: File) -> std::io::Result<Vec<String>> {
    use std::io::BufRead;
    let mut first = String::new();
    std::io::BufReader::new(file).read_line(&mut first)?;
    Ok(first
        .trim_end_matches(['\n', '\r'])
        .split(',')
        .map(|s| s.trim().trim_matches('"').to_string())
        .collect())
}

fn config_for_data(config: &RunConfig, data: &Dataset) -> Result<EstimationConfig, CliError> {
    let mut est = config.estimation_config()?;
    if let Some((lo, hi)) = data.treatment_range() {
        est.smoothing.bandwidth = config.bandwidth()?.policy_for(data.n(), hi - lo);
    }
    Ok(est)
}

pub fn estimate(config: &RunConfig, input: &InputArgs, out: Option<&Path>, log: &Log) -> Result<(), CliError> {
    record_config(config, "estimate", out, log)?;
    let data = load_input(input, &input.outcome)?;
    let report = validate(&data);
    log.line(format!("# data: {report}"));
    let est_config = config_for_data(config, &data)?;
    let mut curves: Vec<DoseResponseEstimate> = Vec::new();
    for method in config.methods()? {
        let started = Instant::now();
        let curve = match method {
            Method::Dr => dr_estimate(&data, &est_config),
            Method::Plugin => crossfit_plugin_estimate(&data, &est_config),
            Method::Supervised => supervised_estimate(&data, &est_config),
            Method::Oracle => unreachable!("rejected by config validation"),
        }
        .map_err(|e| CliError::from(e.context(format!("{method} estimate"))))?;
        let fallbacks = curve.fallback.iter().filter(|f| **f).count();
        log.line(format!(
            "# {method}: {} grid points, bandwidth {}, {} fallback points, clipping {:?}, {:.2}s",
            curve.grid.len(),
            curve.bandwidth().map(|h| h.to_string()).unwrap_or_else(|| "-".into()),
            fallbacks,
            curve.clip_counts,
            started.elapsed().as_secs_f64()
        ));
        curves.push(curve);
    }
    write_output(out, |w| Ok(write_estimate_csv(&curves, w)?))
}

fn progress_line(log: &Log, cell: usize, total: usize, spec: &SimulationSpec) {
    log.line(format!(
        "# cell {}/{}: n={} alpha={} variant={} M={}{}",
        cell,
        total,
        spec.n,
        spec.mode,
        spec.variant,
        spec.m,
        if spec.misspecify_outcome { " misspecified" } else { "" }
    ));
}

pub fn simulate(config: &RunConfig, out: Option<&Path>, log: &Log) -> Result<(), CliError> {
    record_config(config, "simulate", out, log)?;
    let specs = config.simulation_specs()?;
    let mut table = ResultsTable::default();
    let started = Instant::now();
    for (k, spec) in specs.iter().enumerate() {
        progress_line(log, k + 1, specs.len(), spec);
        table.extend(run_rmse_experiment(spec)?);
    }
    log.line(format!("# done in {:.1}s", started.elapsed().as_secs_f64()));
    write_output(out, |w| Ok(table.write_csv(w)?))
}

pub fn compare(config: &RunConfig, study: Study, out: Option<&Path>, log: &Log) -> Result<(), CliError> {
    record_config(config, "compare", out, log)?;
    let base = config.simulation_template()?;
    let ns = config.sample_sizes()?;
    let cells = match study {
        Study::Misspecification => 2 * ns.len(),
        Study::Supervised => ns.len(),
    };
    let counter = std::sync::atomic::AtomicUsize::new(0);
    let progress = |spec: &SimulationSpec| {
        let k = counter.fetch_add(1, std::sync::atomic::Ordering::Relaxed) + 1;
        progress_line(log, k, cells, spec);
    };
    let table = match study {
        Study::Misspecification => run_misspecification_study(&base, &ns, &progress)?,
        Study::Supervised => run_supervised_comparison(&base, &ns, &progress)?,
    };
    write_output(out, |w| Ok(table.write_csv(w)?))
}

pub fn bandwidth(
    config: &RunConfig,
    input: &InputArgs,
    values: Option<&str>,
    out: Option<&Path>,
    log: &Log,
) -> Result<(), CliError> {
    record_config(config, "bandwidth", out, log)?;
    let (t, v) = match values {
        Some(col) => {
            let data = load_input(input, col)?;
            if data.n_labeled() != data.n() {
                return Err(CliError::usage(format!("--values column '{col}' has missing cells")));
            }
            let v: Vec<f64> = (0..data.n()).map(|i| data.y(i).unwrap_or(f64::NAN)).collect();
            (data.treatments().to_vec(), v)
        }
        None => {
            let data = load_input(input, &input.outcome)?;
            let pseudo = selection_pseudo_outcomes(&data, &config.estimation_config()?)?;
            (pseudo.treatments, pseudo.phi)
        }
    };
    let policy = match config.bandwidth()? {
        crate::config::BandwidthSetting::Policy(p) => p,
        crate::config::BandwidthSetting::Rate(_) => {
            return Err(CliError::usage("bandwidth scores need a candidate grid, not a rate"))
        }
    };
    let range = t.iter().copied().fold(f64::NEG_INFINITY, f64::max) - t.iter().copied().fold(f64::INFINITY, f64::min);
    let grid = policy.candidates(range).map_err(|e| CliError::usage(e.to_string()))?;
    let scores = loocv_scores(&t, &v, &grid, config.kernel()?)?;
    let chosen = select_bandwidth(&scores);
    for s in &scores {
        if let Err(reason) = &s.score {
            log.line(format!("# h = {}: infeasible ({reason})", s.h));
        }
    }
    let chosen = chosen.map_err(CliError::from)?;
    log.line(format!("# chosen h = {chosen} from {} candidates on {} points", grid.len(), t.len()));
    write_output(out, |w| {
        let mut csv = String::from("h,loocv_score,feasible,chosen\n");
        for s in &scores {
            let (score, feasible) = match s.score {
                Ok(x) => (x.to_string(), true),
                Err(_) => (String::new(), false),
            };
            csv.push_str(&format!("{},{},{},{}\n", s.h, score, feasible, s.h == chosen));
        }
        w.write_all(csv.as_bytes()).map_err(|e| io_error(Path::new("<bandwidth>"), e))
    })
}
