mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Doubly robust dose-response estimation with surrogates and missing labels.
#[derive(Parser, Debug)]
#[command(name = "dose-dr", version)]
struct Cli {
    /// Worker threads (default: all cores). Output does not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Suppress the resolved-config log and progress lines.
    #[arg(short, long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct ConfigArgs {
    /// Config file of key=value lines.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,

    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug, Clone)]
pub struct InputArgs {
    #[arg(long, value_name = "FILE")]
    input: PathBuf,

    #[arg(long, value_name = "COL")]
    treatment: String,

    #[arg(long, value_name = "COL")]
    outcome: String,

    /// Comma-separated pre-treatment covariate columns.
    #[arg(long, value_name = "C1,C2,..", value_delimiter = ',', required = true)]
    covariates: Vec<String>,

    /// Comma-separated surrogate columns.
    #[arg(long, value_name = "S1,S2,..", value_delimiter = ',')]
    surrogates: Vec<String>,

    /// Explicit 0/1 label column; otherwise a row is labeled when its
    /// outcome is present.
    #[arg(long, value_name = "COL")]
    label: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Estimate the dose-response curve from a CSV file.
    Estimate {
        #[command(flatten)]
        input: InputArgs,

        /// dr, plugin or supervised; a comma list writes several curves.
        #[arg(long)]
        method: Option<String>,

        /// Evaluation grid lo:hi:count.
        #[arg(long, value_name = "LO:HI:COUNT")]
        grid: Option<String>,

        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,

        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Run the Monte Carlo benchmark over every (n, alpha) cell of a spec.
    Simulate {
        #[arg(long, value_name = "FILE")]
        spec: Option<PathBuf>,

        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,

        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,

        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fitted-nuisance comparison studies across the `simulation.n` grid.
    Compare {
        #[arg(long, value_enum)]
        study: commands::Study,

        #[arg(long, value_name = "FILE")]
        spec: Option<PathBuf>,

        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,

        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,

        #[arg(long)]
        seed: Option<u64>,
    },
    /// Leave-one-out bandwidth scores for the selection fold.
    Bandwidth {
        #[command(flatten)]
        input: InputArgs,

        /// Geometric candidates lo:hi:count as fractions of range(A).
        #[arg(long, value_name = "LO:HI:COUNT", conflicts_with = "grid_list")]
        grid_geom: Option<String>,

        /// Explicit candidate bandwidths.
        #[arg(long, value_name = "H1,H2,..")]
        grid_list: Option<String>,

        /// Score this column directly instead of doubly robust pseudo-outcomes.
        #[arg(long, value_name = "COL")]
        values: Option<String>,

        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,

        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

/// A failure with its process exit status.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<dose_dr_core::Error> for CliError {
    fn from(e: dose_dr_core::Error) -> Self {
        use dose_dr_core::Error as E;
        let code = match e.root() {
            E::Io { .. } | E::Csv(_) | E::Parse { .. } | E::Schema(_) | E::Consistency { .. } | E::Config(_) => 2,
            E::Bandwidth(_) | E::DegenerateWindow { .. } => 3,
            _ => 1,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError {
                code: 1,
                message: format!("cannot start thread pool: {e}"),
            })?;
    }
    let log = commands::Log { quiet: cli.quiet };
    match cli.command {
        Command::Estimate {
            input,
            method,
            grid,
            out,
            cfg,
        } => {
            let mut extra = Vec::new();
            if let Some(m) = method {
                extra.push(format!("method={m}"));
            }
            if let Some(g) = grid {
                extra.push(format!("smoother.grid={g}"));
            }
            let config = commands::resolve(cfg.config.as_deref(), &cfg.set, cfg.seed, &extra)?;
            commands::estimate(&config, &input, out.as_deref(), &log)
        }
        Command::Simulate {
            spec,
            out,
            set,
            seed,
        } => {
            let config = commands::resolve(spec.as_deref(), &set, seed, &[])?;
            commands::simulate(&config, out.as_deref(), &log)
        }
        Command::Compare {
            study,
            spec,
            out,
            set,
            seed,
        } => {
            let config = commands::resolve(spec.as_deref(), &set, seed, &["simulation.alpha=fit".into()])?;
            commands::compare(&config, study, out.as_deref(), &log)
        }
        Command::Bandwidth {
            input,
            grid_geom,
            grid_list,
            values,
            out,
            cfg,
        } => {
            let mut extra = Vec::new();
            if let Some(g) = grid_geom {
                extra.push(format!("smoother.bandwidth_grid=geom:{g}"));
            }
            if let Some(g) = grid_list {
                extra.push(format!("smoother.bandwidth_grid={g}"));
            }
            let config = commands::resolve(cfg.config.as_deref(), &cfg.set, cfg.seed, &extra)?;
            commands::bandwidth(&config, &input, values.as_deref(), out.as_deref(), &log)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message.replace('\n', " "));
            ExitCode::from(e.code)
        }
    }
}
