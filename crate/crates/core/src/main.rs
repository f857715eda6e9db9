use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use ptm::cli::{self, ExperimentConfig, ExperimentKind, Format};

/// Runs one experiment from a JSON config and writes its report.
#[derive(Debug, Parser)]
#[command(name = "ptm", version)]
struct Args {
    /// Experiment to run; must match the config's `experiment` field.
    #[arg(value_enum)]
    experiment: ExperimentKind,
    /// JSON experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Report destination; defaults to the config's `output_path`, then stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    /// Worker threads for replicate loops; defaults to all cores.
    #[arg(long)]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    match run(&args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("ptm: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(args: &Args) -> Result<bool, Box<dyn std::error::Error>> {
    if let Some(n) = args.threads {
        if n == 0 {
            return Err("--threads must be positive".into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let config = ExperimentConfig::from_path(&args.config)?;
    if config.experiment != args.experiment {
        return Err(format!(
            "subcommand `{}` does not match config experiment `{}`",
            args.experiment.as_str(),
            config.experiment.as_str()
        )
        .into());
    }
    let report = cli::run(&config)?;
    for check in report.checks.iter().filter(|c| !c.passed) {
        log::warn!("check failed: {}", check.name);
    }
    match args.out.clone().or_else(|| config.output_path.as_ref().map(PathBuf::from)) {
        Some(path) => cli::emit(&report, args.format, path)?,
        None => std::io::stdout().write_all(cli::render(&report, args.format)?.as_bytes())?,
    }
    Ok(report.passed)
}
