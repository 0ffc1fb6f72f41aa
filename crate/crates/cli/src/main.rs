//! `ssp`: run, evaluate and analyse self-support prototype matching.

mod commands;
mod error;
mod output;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ssp_harness::analysis::PrototypeSource;
use ssp_harness::Ablation;

use crate::error::CliError;
use crate::output::Format;

#[derive(Debug, Parser)]
#[command(
    name = "ssp",
    version,
    about = "Self-support prototype matching for few-shot segmentation"
)]
pub struct Cli {
    /// TOML config; matcher keys at top level, generator keys under [synth].
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override one config key (repeatable). Generator keys take a `synth.` prefix.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Seed for synthetic data and sampling.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output file (directory for `match` and `gen-synthetic`); stdout if omitted.
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value = "json")]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

/// Where episodes come from: a manifest, or the synthetic generator.
#[derive(Debug, Clone, Args)]
pub struct Source {
    /// Episode manifest (JSON). Without it, synthetic episodes are generated.
    #[arg(long, value_name = "PATH")]
    manifest: Option<PathBuf>,
    /// Synthetic episode count.
    #[arg(long, default_value_t = 200)]
    episodes: usize,
    /// Synthetic supports per episode.
    #[arg(long, default_value_t = 1)]
    shots: usize,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Match every episode of a manifest; write masks and a summary.
    Match {
        #[arg(long, value_name = "PATH")]
        manifest: PathBuf,
        #[arg(long, default_value = "full")]
        ablation: Ablation,
    },
    /// Evaluate IoU and MAE over a set of episodes.
    Eval {
        #[command(flatten)]
        source: Source,
        #[arg(long, default_value = "full")]
        ablation: Ablation,
    },
    /// mIoU over a grid of foreground and background thresholds.
    SweepThreshold {
        #[command(flatten)]
        source: Source,
        #[arg(long, value_delimiter = ',', default_value = "0.5,0.6,0.7,0.8,0.9")]
        tau_fg: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "0.4,0.5,0.6,0.7,0.8")]
        tau_bg: Vec<f64>,
    },
    /// Rows baseline, ssm, ssm+asbp and full.
    Ablate {
        #[command(flatten)]
        source: Source,
    },
    /// Cross- and intra-image pixel cosine similarity.
    Stats {
        #[command(flatten)]
        source: Source,
        /// Sampled pixel pairs per statistic and episode (at most 10000).
        #[arg(long, default_value_t = 2000)]
        pairs: usize,
    },
    /// Matching with prototypes pooled from part of the object.
    PartialProto {
        #[command(flatten)]
        source: Source,
        #[arg(long, value_delimiter = ',', default_value = "1.0,0.1,0.01")]
        ratio: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "0,0.2")]
        noise: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "support,self")]
        mode: Vec<PrototypeSource>,
    },
    /// Write synthetic episodes as tensor files plus a manifest.
    GenSynthetic {
        #[arg(long, default_value_t = 200)]
        episodes: usize,
        #[arg(long, default_value_t = 1)]
        shots: usize,
    },
    /// Compare the analytic loss gradient with finite differences.
    VerifyGrad {
        #[arg(long, default_value_t = 20)]
        cases: usize,
        /// Feature shape as C,H,W.
        #[arg(long, value_delimiter = ',', num_args = 3, default_value = "3,4,4")]
        shape: Vec<usize>,
        #[arg(long, default_value_t = 1e-3)]
        step: f64,
        #[arg(long, default_value_t = 1e-3)]
        tolerance: f64,
    },
}

fn init_logging() {
    let env = env_logger::Env::new().filter_or("SSP_LOG", "warn");
    let _ = env_logger::Builder::from_env(env)
        .format_timestamp(None)
        .try_init();
}

fn run(cli: Cli) -> Result<(), CliError> {
    let settings = settings::resolve(cli.config.as_deref(), &cli.overrides, cli.seed)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(CliError::Usage("--jobs must be at least 1".into()));
        }
        pool = pool.num_threads(jobs);
    }
    let pool = pool
        .build()
        .map_err(|e| CliError::Pipeline(format!("thread pool: {e}")))?;
    let ctx = commands::Context {
        settings,
        out: cli.out,
        format: cli.format,
    };
    pool.install(|| commands::dispatch(&ctx, cli.command))
}

fn main() -> ExitCode {
    init_logging();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code() as u8)
        }
    }
}
