//! Batch front end: run a scenario file or preset, validate a configuration,
//! or list the built-in presets. Exit codes: 0 success, 2 configuration or
//! validation error, 3 numerical failure, 1 anything else.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use parlyap::{Scenario, ScenarioError};

#[derive(Parser)]
#[command(
    name = "parlyap",
    version,
    about = "Estimators for the principal Lyapunov exponent of randomly driven parabolic equations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write trace.csv, report.json and validation.json.
    Run(RunArgs),
    /// Parse and validate a scenario without running it.
    Validate(SourceArgs),
    /// List the built-in presets.
    Presets,
}

#[derive(Args)]
struct SourceArgs {
    /// Path to a scenario TOML file.
    #[arg(
        value_name = "CONFIG",
        required_unless_present = "preset",
        conflicts_with = "preset"
    )]
    config: Option<PathBuf>,
    /// Name of a built-in preset (see `parlyap presets`).
    #[arg(long, value_name = "NAME")]
    preset: Option<String>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    source: SourceArgs,
    /// Directory the artifacts are written to.
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Override the sampling seed from the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Size of the worker thread pool (defaults to the number of cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Also write the mass and form matrices at the anchor driver state.
    #[arg(long)]
    dump_matrices: bool,
}

fn load(source: &SourceArgs) -> Result<Scenario, ScenarioError> {
    match (&source.config, &source.preset) {
        (Some(path), None) => Scenario::from_toml_path(path),
        (None, Some(name)) => Scenario::preset(name),
        _ => unreachable!("clap enforces exactly one source"),
    }
}

fn run() -> Result<(), ScenarioError> {
    let cli = Cli::parse();
    match cli.command {
        Command::Presets => {
            for (name, desc) in Scenario::preset_catalog() {
                println!("{name}: {desc}");
            }
            Ok(())
        }
        Command::Validate(source) => {
            let sc = load(&source)?;
            let v = &sc.validation;
            println!(
                "ok: ellipticity >= {}, sup|c0| ~ {} +- {}, {} warning(s)",
                v.ellipticity_min,
                v.mean_sup_c0,
                v.stderr_sup_c0,
                v.warnings.len()
            );
            for w in &v.warnings {
                println!("warning: {w}");
            }
            Ok(())
        }
        Command::Run(args) => {
            if let Some(n) = args.threads {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global()
                    .map_err(|e| ScenarioError::Config(format!("--threads: {e}")))?;
            }
            let sc = load(&args.source)?;
            let artifacts = sc.run(&args.out_dir, args.seed, args.dump_matrices)?;
            let r = &artifacts.report;
            let e3 = match r.e3 {
                Some(e3) => format!("{e3:.6}"),
                None => "n/a".into(),
            };
            println!(
                "{}: e1 = {:.6} (se {:.1e}), e2 = {:.6}, e3 = {}, ln_rho1_mc = {:.6} \
                 (se {:.1e}, dropped {}), gamma_hat = {:.4} -> {}",
                sc.name.as_deref().unwrap_or("scenario"),
                r.e1,
                r.e1_stderr,
                r.e2,
                e3,
                r.ln_rho1_mc,
                r.ln_rho1_mc_stderr,
                r.ln_rho1_dropped,
                r.gamma_hat,
                artifacts.report_path.display()
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
