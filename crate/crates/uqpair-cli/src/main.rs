//! `uqpair`: train, evaluate, and analyze uncertainty-aware text-pair
//! regression models.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data/checkpoint error,
//! 4 numeric failure during a run, 1 other I/O error.

mod artifacts;
mod commands;
mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use uqpair::synth::SynthConfig;
use uqpair::{Error, Result};

use config::{parse_seed_list, FullConfig};

#[derive(Parser)]
#[command(name = "uqpair", version, about = "Uncertainty-aware text-pair regression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every command that trains or evaluates.
#[derive(Args)]
struct CommonOpts {
    /// Flat key=value config file; defaults apply to any key not present.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory holding train.tsv / validation.tsv / test.tsv.
    #[arg(long)]
    data_dir: PathBuf,
    /// Output run directory; must not already contain a manifest.
    #[arg(long)]
    out_dir: PathBuf,
    /// Comma-separated seed list override.
    #[arg(long, value_name = "S,S,...")]
    seeds: Option<String>,
    /// Ensemble pass count override.
    #[arg(long = "T", value_name = "N")]
    t_passes: Option<usize>,
    /// Disable MC dropout at evaluation (deterministic baseline mode).
    #[arg(long)]
    no_mc_dropout: bool,
    /// Average the likelihood loss over the batch instead of summing.
    #[arg(long)]
    mean_reduce_nll: bool,
}

impl CommonOpts {
    fn resolve(&self) -> Result<FullConfig> {
        let mut cfg = match &self.config {
            Some(path) => FullConfig::from_file(path)?,
            None => FullConfig::default(),
        };
        if let Some(seeds) = &self.seeds {
            cfg.train.seeds = parse_seed_list(seeds)?;
        }
        if let Some(t) = self.t_passes {
            cfg.train.t_passes = t;
        }
        if self.no_mc_dropout {
            cfg.train.mc_dropout = false;
        }
        if self.mean_reduce_nll {
            cfg.train.weights.mean_reduce_nll = true;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train one model per seed and aggregate median/peak test metrics.
    Train {
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Evaluate a saved checkpoint on one dataset split.
    Eval {
        /// Checkpoint file written by `train` or `noise-demo`.
        checkpoint: PathBuf,
        #[command(flatten)]
        common: CommonOpts,
        /// Which split to score.
        #[arg(long, default_value = "test", value_parser = ["train", "validation", "test"])]
        split: String,
    },
    /// Label-noise analysis: corrupt a fraction of train scores, train,
    /// and test whether predicted uncertainty separates noisy from clean.
    NoiseDemo {
        #[command(flatten)]
        common: CommonOpts,
        /// Fraction of train rows to corrupt.
        #[arg(long, default_value_t = 0.30)]
        noise_fraction: f64,
        /// Score offset applied to each corrupted row (+shift, else -shift).
        #[arg(long, default_value_t = 3.0)]
        noise_shift: f64,
        /// Also render SVG versions of the CSV panels.
        #[arg(long)]
        svg: bool,
    },
    /// Seeded random search over (alpha, lambda1, lambda2) scored by
    /// validation CCC.
    Sweep {
        #[command(flatten)]
        common: CommonOpts,
        /// Number of trials.
        #[arg(long, default_value_t = 100)]
        trials: usize,
        /// Candidate alpha values, comma-separated.
        #[arg(long, default_value = "1.0,1.5", value_name = "A,A,...")]
        alphas: String,
        /// lambda1 search range as lo,hi.
        #[arg(long, default_value = "0,50", value_name = "LO,HI")]
        lambda1_range: String,
        /// lambda2 search range as lo,hi.
        #[arg(long, default_value = "0,50", value_name = "LO,HI")]
        lambda2_range: String,
        /// Abandon trials whose epoch-5 validation CCC falls below the
        /// median of completed trials.
        #[arg(long)]
        prune: bool,
    },
    /// Generate a synthetic word-overlap dataset as train/validation/test
    /// TSV files.
    GenData {
        /// Output directory for the three split files.
        #[arg(long)]
        out_dir: PathBuf,
        /// Generation seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        n_train: usize,
        #[arg(long, default_value_t = 200)]
        n_val: usize,
        #[arg(long, default_value_t = 200)]
        n_test: usize,
        /// Standard deviation of the additive score noise.
        #[arg(long, default_value_t = 0.2)]
        noise_sd: f64,
        /// Words per generated text.
        #[arg(long, default_value_t = 10)]
        words_per_text: usize,
        /// Vocabulary the texts draw from; smaller values repeat words
        /// more often across examples.
        #[arg(long, default_value_t = 4000)]
        lexicon: usize,
        /// Rare words per text that individuate examples without carrying
        /// score signal.
        #[arg(long, default_value_t = 0)]
        tail_words: usize,
        /// Pool the rare words draw from.
        #[arg(long, default_value_t = 0)]
        tail_lexicon: usize,
    },
}

fn parse_range(s: &str, name: &str) -> Result<(f64, f64)> {
    let (lo, hi) = s
        .split_once(',')
        .ok_or_else(|| Error::Config(format!("{name}: expected lo,hi, got {s:?}")))?;
    let parse = |p: &str| {
        p.trim()
            .parse::<f64>()
            .map_err(|_| Error::Config(format!("{name}: bad bound {p:?}")))
    };
    Ok((parse(lo)?, parse(hi)?))
}

fn parse_float_list(s: &str, name: &str) -> Result<Vec<f64>> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("{name}: bad value {p:?}")))
        })
        .collect()
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { common } => {
            let cfg = common.resolve()?;
            commands::cmd_train(&cfg, &common.data_dir, &common.out_dir)
        }
        Command::Eval { checkpoint, common, split } => {
            let cfg = common.resolve()?;
            commands::cmd_eval(
                &checkpoint,
                &common.data_dir,
                &split,
                cfg.train.t_passes,
                cfg.train.mc_dropout,
                cfg.train.seeds[0],
                &common.out_dir,
            )
        }
        Command::NoiseDemo { common, noise_fraction, noise_shift, svg } => {
            let cfg = common.resolve()?;
            commands::cmd_noise_demo(
                &cfg,
                &common.data_dir,
                noise_fraction,
                noise_shift,
                cfg.train.seeds[0],
                svg,
                &common.out_dir,
            )
        }
        Command::Sweep { common, trials, alphas, lambda1_range, lambda2_range, prune } => {
            let cfg = common.resolve()?;
            commands::cmd_sweep(
                &cfg,
                &common.data_dir,
                trials,
                cfg.train.seeds[0],
                &parse_float_list(&alphas, "--alphas")?,
                parse_range(&lambda1_range, "--lambda1-range")?,
                parse_range(&lambda2_range, "--lambda2-range")?,
                prune,
                &common.out_dir,
            )
        }
        Command::GenData {
            out_dir,
            seed,
            n_train,
            n_val,
            n_test,
            noise_sd,
            words_per_text,
            lexicon,
            tail_words,
            tail_lexicon,
        } => {
            let synth = SynthConfig {
                n_train,
                n_val,
                n_test,
                noise_sd,
                words_per_text,
                lexicon,
                tail_words,
                tail_lexicon,
                ..SynthConfig::default()
            };
            commands::cmd_gen_data(&synth, seed, &out_dir)
        }
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::InvalidInput(_) => 2,
        Error::Data(_) | Error::Checkpoint(_) | Error::DegenerateInput(_) => 3,
        Error::NonFiniteLoss { .. } | Error::CorrelationUndefined { .. } => 4,
        Error::Io(_) => 1,
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(exit_code(&e));
    }
}
