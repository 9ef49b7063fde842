use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use darc::pipeline::{self, PipelineConfig};
use darc::synth::MixtureSpec;
use darc::Error;

#[derive(Parser)]
#[command(
    name = "darc",
    version,
    about = "Latent-space feature calibration and head training"
)]
struct Cli {
    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON config file.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the calibration and training seeds.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic imbalanced mixture (all splits, spec.json, pipeline.json).
    Synth {
        /// Mixture spec JSON; the built-in default spec when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-class statistics of both training views and the common/rare split.
    Stats(Common),
    /// Build the calibrated training set.
    Calibrate(Common),
    /// Train the head on the calibrated set.
    Train {
        #[command(flatten)]
        common: Common,
        /// Training set to use instead of `<out>/calibrated.darc1`.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Evaluate a trained head on val, test and cross-modality sets.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Parameters to use instead of `<out>/params.darch1`.
        #[arg(long)]
        params: Option<PathBuf>,
    },
    /// stats, calibrate, train and eval in one go.
    Pipeline(Common),
}

fn load_config(c: &Common) -> darc::Result<PipelineConfig> {
    let mut cfg = PipelineConfig::load(&c.config)?;
    cfg.apply_overrides(c.seed, c.out.clone());
    Ok(cfg)
}

fn run(cli: Cli) -> darc::Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("--threads: {e}")))?;
    }
    match cli.command {
        Command::Synth { config, seed, out } => {
            let mut spec = match config {
                Some(path) => {
                    let text = fs::read_to_string(&path).map_err(|e| Error::Io {
                        path: path.clone(),
                        source: e,
                    })?;
                    let de = &mut serde_json::Deserializer::from_str(&text);
                    serde_path_to_error::deserialize::<_, MixtureSpec>(de).map_err(|e| {
                        Error::Config(format!("{}: {}: {}", path.display(), e.path(), e.inner()))
                    })?
                }
                None => MixtureSpec::default(),
            };
            if let Some(seed) = seed {
                spec.seed = seed;
            }
            pipeline::run_synth(&spec, &out)?;
            log::info!("wrote synthetic splits to {}", out.display());
        }
        Command::Stats(c) => pipeline::run_stats(&load_config(&c)?)?,
        Command::Calibrate(c) => {
            pipeline::run_calibrate(&load_config(&c)?)?;
        }
        Command::Train { common, input } => {
            pipeline::run_train(&load_config(&common)?, input.as_deref())?
        }
        Command::Eval { common, params } => {
            pipeline::run_eval(&load_config(&common)?, params.as_deref())?;
        }
        Command::Pipeline(c) => {
            pipeline::run_pipeline(&load_config(&c)?)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
