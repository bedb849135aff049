//! `privflock`: pre-train the leader discriminator, co-optimize flocking
//! controllers against it, evaluate checkpoints and export plot data.

mod commands;
mod export;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use privflock::config::ConfigError;
use privflock::coopt::CooptError;

#[derive(Parser, Debug)]
#[command(name = "privflock", version, about = "Leader-private flocking workbench")]
#[command(after_help = "Any config field can be overridden with `--<section>.<field> <value>`, \
    e.g. `--ga.mutation_prob 0.05` or `--coopt.pretrain.epochs 10`.")]
pub struct Cli {
    /// JSON config; defaults are used for anything it leaves out.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed (same as `--coopt.seed`).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Upper bound on concurrent flights.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Run archive directory.
    #[arg(long, global = true)]
    pub archive: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Pre-train the discriminator on hand-tuned flights.
    Pretrain {
        /// Checkpoint to write. Defaults to `pretrained.ckpt` in the archive
        /// directory (or the working directory).
        #[arg(long)]
        output: Option<PathBuf>,
        /// Number of flights.
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Run the GA against the discriminator, archiving every generation.
    Cooptimize {
        /// Pre-trained discriminator to start from.
        #[arg(long, required_unless_present_any = ["fresh_discriminator", "resume"])]
        checkpoint: Option<PathBuf>,
        /// Start from a randomly initialized discriminator.
        #[arg(long, conflicts_with = "checkpoint")]
        fresh_discriminator: bool,
        /// Continue from the last completed generation in the archive.
        #[arg(long)]
        resume: bool,
        #[arg(long)]
        generations: Option<usize>,
        #[arg(long)]
        population: Option<usize>,
        /// Flight duration, seconds.
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Evaluate archived or given checkpoints.
    Evaluate {
        #[arg(value_enum)]
        mode: EvalMode,
        /// Discriminator checkpoints; defaults to the archive's latest.
        #[arg(long)]
        checkpoint: Vec<PathBuf>,
        /// Experiment to replay; defaults to the final champion.
        #[arg(long)]
        experiment: Option<u64>,
        /// Output file.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Flatten the archive into plot-ready CSV.
    Export {
        #[arg(value_enum)]
        product: Product,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum EvalMode {
    Generalization,
    Noise,
    Replay,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Product {
    Losses,
    Metrics,
    Trajectories,
}

/// Failure with its exit status.
#[derive(Debug)]
pub enum Failure {
    /// Bad configuration or missing inputs: exit 2.
    Config(String),
    /// Anything that went wrong while running: exit 1.
    Runtime(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(format!("config error at {}: {}", e.path, e.message))
    }
}

impl From<CooptError> for Failure {
    fn from(e: CooptError) -> Self {
        match e {
            CooptError::Config { path, message } => Failure::Config(format!("config error at {path}: {message}")),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<privflock::nn::NnError> for Failure {
    fn from(e: privflock::nn::NnError) -> Self {
        Failure::Runtime(e.to_string())
    }
}

/// Splits `--a.b value` / `--a.b=value` overrides out of the argument list.
/// Any long flag containing a dot is an override.
pub fn split_overrides(args: Vec<String>) -> Result<(Vec<String>, Vec<(String, String)>), String> {
    let mut rest = Vec::with_capacity(args.len());
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(arg) = it.next() {
        let key = match arg.strip_prefix("--") {
            Some(k) if k.contains('.') => k.to_string(),
            _ => {
                rest.push(arg);
                continue;
            }
        };
        if let Some((k, v)) = key.split_once('=') {
            overrides.push((k.to_string(), v.to_string()));
        } else {
            let v = it.next().ok_or_else(|| format!("override --{key} needs a value"))?;
            overrides.push((key, v));
        }
    }
    Ok((rest, overrides))
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let (args, overrides) = match split_overrides(argv.clone()) {
        Ok(x) => x,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let cli = Cli::parse_from(args);
    let run = || commands::run(&cli, overrides, &argv);
    let result = match cli.workers {
        Some(0) => Err(Failure::Config("--workers must be >= 1".into())),
        Some(k) => match rayon::ThreadPoolBuilder::new().num_threads(k).build() {
            Ok(pool) => pool.install(run),
            Err(e) => Err(Failure::Runtime(e.to_string())),
        },
        None => run(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn overrides_are_split_out() {
        let (rest, ov) =
            split_overrides(s(&["privflock", "--ga.kappa", "2.5", "pretrain", "--nn.hidden=64", "--epochs", "3"])).unwrap();
        assert_eq!(rest, s(&["privflock", "pretrain", "--epochs", "3"]));
        assert_eq!(ov, vec![("ga.kappa".into(), "2.5".into()), ("nn.hidden".into(), "64".into())]);
    }

    #[test]
    fn dangling_override_is_an_error() {
        assert!(split_overrides(s(&["privflock", "--sim.duration"])).is_err());
    }
}
