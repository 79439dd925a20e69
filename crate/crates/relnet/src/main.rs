use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use relnet::config::{Ablation, Profile, RunConfig};
use relnet::pipeline::{self, Stderr, TrainOptions};
use relnet::{Error, Result};
use relnet_core::physics::Combo;

#[derive(Parser)]
#[command(name = "relnet", version, about = "Relational inference on simulated particle systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON config file merged over the profile defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_parser = parse_profile)]
    profile: Option<Profile>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Epsilon {
    Gaussian,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a dataset.
    Generate {
        #[command(flatten)]
        common: Common,
        /// Relation mix, a through h.
        #[arg(long)]
        combo: Option<String>,
    },
    /// Train a model; resumes when the output directory holds a run.
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset directory.
        #[arg(long)]
        data: PathBuf,
        /// Drop part of the objective: rst (random sampling) or rsdl
        /// (standard-deviation loss).
        #[arg(long, value_parser = parse_ablation)]
        ablate: Vec<Ablation>,
        /// Multiply influences by a noisy centrality gate during training.
        #[arg(long, value_enum)]
        epsilon: Option<Epsilon>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Stop after this many epochs; rerun the command to continue.
        #[arg(long)]
        stop_after: Option<usize>,
    },
    /// Report trajectory prediction error of a trained run.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        run: PathBuf,
        /// Dataset directory; defaults to the one the run was trained on.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Cluster relation states and write accuracy, silhouette and plot data.
    Analyze {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
    },
}

fn parse_profile(s: &str) -> Result<Profile> {
    s.parse()
}

fn parse_ablation(s: &str) -> Result<Ablation> {
    s.parse()
}

fn fresh_config(c: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(c.config.as_deref(), c.profile)?;
    if let Some(s) = c.seed {
        cfg.set_seed(s);
    }
    Ok(cfg)
}

/// The run's resolved config with an optional file and seed layered on top.
fn run_config(c: &Common, run: &std::path::Path) -> Result<RunConfig> {
    if c.profile.is_some() {
        return Err(Error::Config("--profile applies to generate and train only".into()));
    }
    let base = pipeline::run_manifest(run)?.config;
    let mut cfg = match &c.config {
        Some(p) => {
            let mut merged = serde_json::to_value(&base).expect("config serialises");
            relnet::config::merge(&mut merged, relnet::jsonio::read_json::<serde_json::Value>(p)?);
            RunConfig::from_value(merged, Some(base.profile))?
        }
        None => base,
    };
    if let Some(s) = c.seed {
        cfg.set_seed(s);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { common, combo } => {
            let mut cfg = fresh_config(&common)?;
            if let Some(c) = combo {
                cfg.combo = c.parse::<Combo>()?;
            }
            let m = pipeline::generate(&cfg, &common.out)?;
            eprintln!(
                "wrote {} ({} / {} / {} trajectories, combo {})",
                common.out.display(),
                m.train.count,
                m.valid.count,
                m.test.count,
                cfg.combo.letter()
            );
        }
        Command::Train { common, data, ablate, epsilon, epochs, stop_after } => {
            let mut cfg = fresh_config(&common)?;
            for a in ablate {
                cfg.ablate(a);
            }
            if let Some(Epsilon::Gaussian) = epsilon {
                cfg.gaussian_epsilon();
            }
            if let Some(e) = epochs {
                cfg.training.epochs = e;
            }
            let out = pipeline::train(&cfg, &data, &common.out, TrainOptions { stop_after }, &mut Stderr)?;
            if let Some(e) = out.resumed_from {
                eprintln!("resumed at epoch {e}");
            }
            eprintln!(
                "{} after {} epochs; best val_mse {} at epoch {}",
                if out.finished { "finished" } else { "stopped" },
                out.epochs_done,
                relnet::num::fmt6(out.best_val_mse),
                out.best_epoch
            );
        }
        Command::Eval { common, run, data, split } => {
            let cfg = run_config(&common, &run)?;
            let data = pipeline::resolve_data(&run, data.as_deref())?;
            let f = pipeline::eval(&cfg, &run, &data, &split, &common.out)?;
            pipeline::write_eval_manifest(&cfg, &run, &data, &common.out)?;
            println!("{} mse {} over {} steps", f.split, relnet::num::fmt6(f.report.mse), f.report.horizon);
        }
        Command::Analyze { common, run, data } => {
            let cfg = run_config(&common, &run)?;
            let data = pipeline::resolve_data(&run, data.as_deref())?;
            let r = pipeline::analyze(&cfg, &run, &data, &common.out)?;
            println!("accuracy {} (k = {})", relnet::num::fmt6(r.accuracy), r.k);
            for (k, s) in &r.silhouette {
                println!("silhouette k={k} {}", relnet::num::fmt6(*s));
            }
            println!("chosen k {}", r.chosen_k);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
