//! `fairdp` command-line interface.
//!
//! Exit codes: 0 success, 1 config or usage error, 2 some cells failed, 3 fatal error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use fairdp::accountant::{calibrate_sigma, epsilon_for};
use fairdp::experiment::{
    emit_disparity_curves, emit_table, reaggregate, render_curves, run_sweep, CurveFormat,
    ExperimentConfig, ExperimentError, TableFormat,
};

const EXIT_CONFIG: u8 = 1;
const EXIT_PARTIAL: u8 = 2;
const EXIT_FATAL: u8 = 3;

#[derive(Parser)]
#[command(name = "fairdp", version, about = "Private training sweeps and group-disparity reports")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a sweep from a TOML config and print its tables.
    Run {
        config: PathBuf,
        /// Overrides the config's output directory.
        #[arg(long, short)]
        output: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = TableArg::Text)]
        format: TableArg,
        /// Worker threads (defaults to the number of CPUs).
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Rebuild and print the tables of a finished sweep from its run reports.
    Report {
        dir: PathBuf,
        #[arg(long, value_enum, default_value_t = TableArg::Text)]
        format: TableArg,
    },
    /// Print the noise multiplier that meets a target ε.
    Calibrate(CalibrateArgs),
    /// Print disparity-versus-τ series of a finished volatility sweep.
    Curves {
        dir: PathBuf,
        #[arg(long, value_enum, default_value_t = CurveArg::Json)]
        format: CurveArg,
    },
}

#[derive(Args)]
#[command(group(clap::ArgGroup::new("rate").required(true).args(["sampling_rate", "dataset_size"])))]
struct CalibrateArgs {
    #[arg(long)]
    epsilon: f64,
    #[arg(long, default_value_t = 1e-5)]
    delta: f64,
    /// Total optimizer steps.
    #[arg(long)]
    steps: usize,
    /// Poisson sampling rate q.
    #[arg(long)]
    sampling_rate: Option<f64>,
    /// Training-set size; q = batch_size / dataset_size.
    #[arg(long, requires = "batch_size")]
    dataset_size: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum TableArg {
    Text,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum CurveArg {
    Json,
    Csv,
}

impl From<TableArg> for TableFormat {
    fn from(a: TableArg) -> Self {
        match a {
            TableArg::Text => TableFormat::Text,
            TableArg::Json => TableFormat::Json,
        }
    }
}

impl From<CurveArg> for CurveFormat {
    fn from(a: CurveArg) -> Self {
        match a {
            CurveArg::Json => CurveFormat::Json,
            CurveArg::Csv => CurveFormat::Csv,
        }
    }
}

fn fail(e: &ExperimentError) -> ExitCode {
    eprintln!("error: {e}");
    let code = if e.is_config() || matches!(e, ExperimentError::TooFewTaus(_)) {
        EXIT_CONFIG
    } else {
        EXIT_FATAL
    };
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_CONFIG)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match cli.command {
        Command::Run {
            config,
            output,
            format,
            threads,
        } => {
            let mut cfg = match ExperimentConfig::from_path(&config) {
                Ok(c) => c,
                Err(e) => return fail(&e),
            };
            if let Some(dir) = output {
                cfg.output_dir = dir;
            }
            if let Some(n) = threads {
                if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                    eprintln!("error: {e}");
                    return ExitCode::from(EXIT_FATAL);
                }
            }
            let out = match run_sweep(&cfg) {
                Ok(o) => o,
                Err(e) => return fail(&e),
            };
            match emit_table(&out.summary, format.into()) {
                Ok(t) => print!("{t}"),
                Err(e) => return fail(&e),
            }
            eprintln!("artifacts written to {}", cfg.output_dir.display());
            let failed = out.summary.failed_cells();
            if failed > 0 {
                for c in out.summary.cells.iter().filter(|c| c.failed) {
                    eprintln!(
                        "cell {} / {}{} failed: {}",
                        c.objective,
                        c.privacy_label,
                        c.tau.map(|t| format!(" / τ={t}")).unwrap_or_default(),
                        c.errors.join("; ")
                    );
                }
                return ExitCode::from(EXIT_PARTIAL);
            }
            ExitCode::SUCCESS
        }
        Command::Report { dir, format } => {
            let summary = match reaggregate(&dir) {
                Ok(s) => s,
                Err(e) => return fail(&e),
            };
            match emit_table(&summary, format.into()) {
                Ok(t) => print!("{t}"),
                Err(e) => return fail(&e),
            }
            if summary.failed_cells() > 0 {
                return ExitCode::from(EXIT_PARTIAL);
            }
            ExitCode::SUCCESS
        }
        Command::Curves { dir, format } => {
            let curves = reaggregate(&dir).and_then(|s| emit_disparity_curves(&s));
            match curves {
                Ok(c) => {
                    print!("{}", render_curves(&c, format.into()));
                    ExitCode::SUCCESS
                }
                Err(e) => fail(&e),
            }
        }
        Command::Calibrate(args) => {
            let q = match (args.sampling_rate, args.dataset_size, args.batch_size) {
                (Some(q), _, _) => q,
                (None, Some(n), Some(b)) if n > 0 => (b as f64 / n as f64).min(1.0),
                _ => {
                    eprintln!("error: need --sampling-rate or a positive --dataset-size with --batch-size");
                    return ExitCode::from(EXIT_CONFIG);
                }
            };
            let result = calibrate_sigma(args.epsilon, args.delta, q, args.steps)
                .and_then(|sigma| epsilon_for(q, sigma, args.steps, args.delta).map(|eps| (sigma, eps)));
            match result {
                Ok((sigma, eps)) => {
                    println!("noise_multiplier = {sigma}");
                    println!("realized_epsilon = {eps}");
                    println!("sampling_rate = {q}");
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(EXIT_CONFIG)
                }
            }
        }
    }
}
