use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lrtv4d_cli::commands::{self, Method, NamedPath};
use lrtv4d_cli::{CliError, CliResult, RunConfig};
use lrtv4d_core::InterpMethod;

/// Motion-compensated 4D reconstruction pipeline.
#[derive(Parser, Debug)]
#[command(name = "lrtv4d", version)]
struct Cli {
    /// Run configuration (JSON); built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, overriding the configuration.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Seed for phantom and degradation, overriding the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the ground-truth series and its label map.
    Phantom,
    /// Simulate motion, blur, decimation and noise.
    Degrade {
        #[arg(long)]
        truth: PathBuf,
        /// HR label map to resample onto the observed grid.
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Reconstruct the latent series.
    Reconstruct {
        #[arg(long)]
        observed: PathBuf,
        #[arg(long)]
        motion: PathBuf,
        #[arg(long, default_value = "lrtv")]
        method: Method,
    },
    /// Per-volume scattered-data baseline.
    Interp {
        #[arg(long)]
        observed: PathBuf,
        #[arg(long)]
        motion: PathBuf,
        #[arg(long)]
        method: InterpMethod,
    },
    /// Score series; SSIM, SNR and PSNR need --reference.
    Metrics {
        /// NAME=PATH, repeatable.
        #[arg(long, required = true)]
        series: Vec<NamedPath>,
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Label maps whose nonzero support masks series of matching shape.
        #[arg(long)]
        labels: Vec<PathBuf>,
    },
    /// ROI series, connectivity matrix and carpet plot.
    Fc {
        #[arg(long)]
        series: PathBuf,
        #[arg(long)]
        labels: PathBuf,
    },
}

fn load_config(path: Option<&Path>) -> CliResult<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let cfg = load_config(cli.config.as_deref())?.with_overrides(cli.seed, cli.out);
    cfg.validate()?;
    let threads = cli.threads.unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Validation(format!("thread pool: {e}")))?;
    let written = pool.install(|| -> CliResult<Vec<PathBuf>> {
        match &cli.command {
            Command::Phantom => commands::cmd_phantom(&cfg),
            Command::Degrade { truth, labels } => commands::cmd_degrade(&cfg, truth, labels.as_deref()),
            Command::Reconstruct {
                observed,
                motion,
                method,
            } => {
                let o = commands::cmd_reconstruct(&cfg, observed, motion, *method)?;
                if let Some(w) = o.warning {
                    eprintln!("warning: {w}");
                }
                Ok(o.written)
            }
            Command::Interp {
                observed,
                motion,
                method,
            } => commands::cmd_interp(&cfg, observed, motion, *method),
            Command::Metrics {
                series,
                reference,
                labels,
            } => {
                let (w, report) = commands::cmd_metrics(&cfg, series, reference.as_deref(), labels)?;
                print!("{}", report.to_table());
                Ok(w)
            }
            Command::Fc { series, labels } => commands::cmd_fc(&cfg, series, labels),
        }
    })?;
    for p in written {
        eprintln!("wrote {}", p.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
