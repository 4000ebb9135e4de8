//! `hfo-distill`: runs the distillation pipeline stage by stage over a work
//! directory.
//!
//! Exit codes: 0 success, 1 invalid input/configuration or a missing upstream
//! artifact, 2 failure while running a stage.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};
use hfo_distill::config::{help_table, Preset, RunConfig};
use hfo_distill::pipeline;
use hfo_distill::Error;

#[derive(Debug, Parser)]
#[command(name = "hfo-distill", version, about = "Self-supervised distillation of pathological HFOs")]
struct Cli {
    /// TOML config file; its keys override the preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Starting values: `full` (reference constants) or `desk` (CPU scale).
    #[arg(long, global = true, default_value = "full")]
    preset: String,
    #[arg(long, global = true)]
    work_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    /// Seed of every random draw.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Single-threaded run.
    #[arg(long, global = true)]
    reference_mode: bool,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Override any config key, e.g. `--set pretrain.epochs=3`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset into <work-dir>/data.
    Synth,
    /// Compute scalograms of every event and assign folds.
    Ingest {
        /// Also write every scalogram as PGM plus axes CSV into this dir.
        #[arg(long)]
        dump_tf: Option<PathBuf>,
    },
    /// Pre-train the VAE of each fold.
    Pretrain {
        #[arg(long)]
        fold: Option<usize>,
    },
    /// Two-stage weak-label discovery in latent space.
    Discover {
        #[arg(long)]
        fold: Option<usize>,
    },
    /// Train the classification head on the weak labels.
    Train {
        #[arg(long)]
        fold: Option<usize>,
        /// SD-only ablation: drop the surrogate term.
        #[arg(long)]
        no_augment: bool,
    },
    /// Predict, score clinically and write report.json / report.md.
    Evaluate,
    /// Decode per-dimension latent sweeps as PGM grids.
    Sweep {
        #[arg(long, default_value_t = 0)]
        fold: usize,
    },
    /// PCA with each latent dimension knocked out.
    Knockout {
        #[arg(long, default_value_t = 0)]
        fold: usize,
    },
    /// Re-render report.md (with planted-truth scores on synthetic data).
    Report,
    /// ingest, pretrain, discover, train, evaluate and report in one go.
    Run {
        /// Generate the synthetic dataset first.
        #[arg(long)]
        synth: bool,
        /// Also write sweeps and knockouts of fold 0.
        #[arg(long)]
        diagnostics: bool,
    },
    /// Copy scalograms, folds, VAEs and weak labels into another work dir.
    Fork {
        #[arg(long)]
        into: PathBuf,
    },
    /// Print the effective configuration as TOML.
    Config,
}

fn build_config(cli: &Cli) -> Result<RunConfig, Error> {
    let preset: Preset = cli.preset.parse()?;
    let mut cfg = RunConfig::preset(preset);
    if let Some(path) = &cli.config {
        cfg = RunConfig::load_over(path, &cfg)?;
    }
    for kv in &cli.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set_key(k.trim(), v.trim())?;
    }
    if let Some(w) = &cli.work_dir {
        cfg.work_dir = w.clone();
    }
    if let Some(m) = &cli.manifest {
        cfg.manifest = Some(m.clone());
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if cli.reference_mode {
        cfg.reference_mode = true;
    }
    if let Some(t) = cli.threads {
        cfg.threads = t;
    }
    if let Command::Train { no_augment: true, .. } = cli.command {
        cfg.classifier.augment = false;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli, cfg: &RunConfig) -> Result<(), Error> {
    match &cli.command {
        Command::Synth => {
            let m = pipeline::run_synth(cfg)?;
            println!("wrote {}", m.display());
        }
        Command::Ingest { dump_tf } => {
            let s = pipeline::ingest(cfg, dump_tf.as_deref())?;
            println!(
                "{} subjects, {} events{}",
                s.n_subjects,
                s.n_events,
                if s.cached { " (scalograms reused)" } else { "" }
            );
        }
        Command::Pretrain { fold } => pipeline::run_pretrain(cfg, *fold)?,
        Command::Discover { fold } => {
            for s in pipeline::run_discover(cfg, *fold)? {
                println!(
                    "fold {}: {} noise, {} physiological, {} pathological",
                    s.fold, s.n_noise, s.n_physiological, s.n_pathological
                );
            }
        }
        Command::Train { fold, .. } => pipeline::run_train(cfg, *fold)?,
        Command::Evaluate => {
            pipeline::run_evaluate(cfg)?;
            print!("{}", pipeline::run_report(cfg)?);
        }
        Command::Sweep { fold } => {
            let d = pipeline::run_sweep(cfg, *fold)?;
            println!("wrote {}", d.display());
        }
        Command::Knockout { fold } => {
            let d = pipeline::run_knockout(cfg, *fold)?;
            println!("wrote {}", d.display());
        }
        Command::Report => print!("{}", pipeline::run_report(cfg)?),
        Command::Run { synth, diagnostics } => {
            if *synth {
                pipeline::run_synth(cfg)?;
            }
            pipeline::run_all(cfg)?;
            if *diagnostics {
                pipeline::run_sweep(cfg, 0)?;
                pipeline::run_knockout(cfg, 0)?;
            }
            print!("{}", pipeline::run_report(cfg)?);
        }
        Command::Fork { into } => {
            pipeline::fork_upstream(&cfg.work_dir, into)?;
            println!("copied upstream artifacts into {}", into.display());
        }
        Command::Config => print!("{}", cfg.to_toml()),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let keys = format!(
        "Config keys (value under the full preset, then what it mirrors):\n{}",
        help_table(&RunConfig::default())
    );
    let matches = Cli::command().after_long_help(keys).get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    let cfg = match build_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    match pipeline::in_pool(&cfg, || run(&cli, &cfg)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
