//! Experiment runner: configuration, training with checkpoints, and the
//! evaluation protocols behind the `bimanual` binary.

pub mod config;

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use bimanual::dynamics::Wrench2D;
use bimanual::env::{DisturbanceSpec, DualArmEnv};
use bimanual::eval::{
    disturbance_experiment, offset_experiment, parallel_map, success_rate, trace_export, train_curve,
    write_curves_csv, write_disturbance_csv, write_disturbance_samples_csv, write_offset_csv, write_qdes_jsonl,
    ExperimentResult, SeedCurve,
};
use bimanual::rl::{structure_hash, Agent, Checkpoint, GreedyPolicy, Trainer};
use bimanual::{Error, Result};
use clap::{Parser, Subcommand};
use serde::Serialize;

pub use config::{parse_config, parse_str, ExperimentConfig, Overrides};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Train one agent per seed, checkpointing along the way.
    Train,
    /// Greedy success rate of a checkpoint.
    Eval,
    /// Episode duration against disturbance-induced end-effector offset.
    Disturb,
    /// Success rate against peg-mount offset magnitude.
    Offset,
    /// Desired joint positions with and without a disturbance.
    Trace,
}

#[derive(Debug, Parser)]
#[command(name = "bimanual", about = "Dual-arm peg-in-hole experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Configuration file; documented defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed override, repeatable.
    #[arg(long = "seed", global = true)]
    pub seeds: Vec<u64>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub checkpoint: Option<PathBuf>,
    /// Full-size task and learner settings.
    #[arg(long, global = true)]
    pub long_run: bool,
}

pub const EXIT_OK: u8 = 0;
pub const EXIT_RUN_FAILURE: u8 = 1;
pub const EXIT_CONFIG_ERROR: u8 = 2;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub epochs: usize,
    pub converged_at: Option<usize>,
    pub best_success_rate: f64,
    /// Relative to the output directory, so summaries of identical runs match.
    pub final_checkpoint: PathBuf,
}

/// What a finished subcommand produced.
#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Trained(Vec<SeedSummary>),
    SuccessRate(f64),
    Disturbance { spearman: f64, samples: usize },
    Offsets(Vec<(f64, f64)>),
    Trace { onset: Option<usize> },
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn seed_dir(cfg: &ExperimentConfig, seed: u64) -> PathBuf {
    cfg.out_dir.join(format!("seed_{seed}"))
}

fn train_seed(cfg: &ExperimentConfig, seed: u64) -> Result<(SeedCurve, SeedSummary)> {
    let env_cfg = cfg.env_config()?;
    let hash = structure_hash(&env_cfg, &cfg.sac);
    let dir = seed_dir(cfg, seed);
    fs::create_dir_all(&dir)?;
    let mut trainer = Trainer::new(DualArmEnv::new(env_cfg)?, cfg.sac.clone(), cfg.train_config(), seed)?;
    let mut best = f64::NEG_INFINITY;
    let curve = train_curve(&mut trainer, seed, cfg.epochs, cfg.stop, |t, report| {
        if report.epoch % cfg.checkpoint_every == 0 {
            t.checkpoint(&hash).save(&dir.join(format!("checkpoint_{:06}.json", report.epoch)))?;
        }
        if let Some(rate) = report.eval_success {
            log::info!("seed {seed} epoch {} success {rate:.2}", report.epoch);
            if rate > best {
                best = rate;
                t.checkpoint(&hash).save(&dir.join("best.json"))?;
            }
        }
        Ok(())
    })?;
    trainer.checkpoint(&hash).save(&dir.join("final.json"))?;
    let summary = SeedSummary {
        seed,
        epochs: trainer.epoch(),
        converged_at: curve.converged_at,
        best_success_rate: curve.best(),
        final_checkpoint: Path::new(&format!("seed_{seed}")).join("final.json"),
    };
    Ok((curve, summary))
}

fn load_agent(cfg: &ExperimentConfig, checkpoint: Option<&Path>) -> Result<(DualArmEnv, Agent)> {
    let path = checkpoint.ok_or_else(|| Error::Checkpoint("this subcommand needs --checkpoint".into()))?;
    let env_cfg = cfg.env_config()?;
    let ckpt = Checkpoint::load(path, &structure_hash(&env_cfg, &cfg.sac))?;
    Ok((DualArmEnv::new(env_cfg)?, ckpt.agent))
}

/// Runs one subcommand under an already validated configuration and writes
/// its outputs (plus the resolved configuration) into `cfg.out_dir`.
pub fn run(command: Command, cfg: &ExperimentConfig, checkpoint: Option<&Path>) -> Result<Outcome> {
    fs::create_dir_all(&cfg.out_dir)?;
    fs::write(cfg.out_dir.join("config.resolved"), cfg.to_text())?;
    let hash = cfg.hash();
    let f = cfg.task.init_offset_fraction;
    match command {
        Command::Train => {
            let runs = parallel_map(&cfg.seeds, |&seed| train_seed(cfg, seed))
                .into_iter()
                .collect::<Result<Vec<_>>>()?;
            let (curves, summaries): (Vec<_>, Vec<_>) = runs.into_iter().unzip();
            let result = ExperimentResult::new(cfg.action_space, cfg.task.clearance, &hash, curves)?;
            write_curves_csv(std::slice::from_ref(&result), create(&cfg.out_dir.join("curves.csv"))?)?;
            serde_json::to_writer_pretty(create(&cfg.out_dir.join("train_summary.json"))?, &summaries)?;
            Ok(Outcome::Trained(summaries))
        }
        Command::Eval => {
            let (mut env, agent) = load_agent(cfg, checkpoint)?;
            let rate = success_rate(&mut env, &mut GreedyPolicy(&agent), cfg.eval.cycles, cfg.eval.seed, f)?;
            fs::write(
                cfg.out_dir.join("eval.csv"),
                format!("success_rate,cycles,config_hash\n{rate},{},{hash}\n", cfg.eval.cycles),
            )?;
            Ok(Outcome::SuccessRate(rate))
        }
        Command::Disturb => {
            let (env, agent) = load_agent(cfg, checkpoint)?;
            let r = disturbance_experiment(&env, &GreedyPolicy(&agent), &cfg.eval.disturbance, cfg.eval.seed, f)?;
            write_disturbance_csv(&r, &hash, create(&cfg.out_dir.join("disturbance.csv"))?)?;
            write_disturbance_samples_csv(&r, &hash, create(&cfg.out_dir.join("disturbance_samples.csv"))?)?;
            Ok(Outcome::Disturbance { spearman: r.spearman, samples: r.samples.len() })
        }
        Command::Offset => {
            let (env, agent) = load_agent(cfg, checkpoint)?;
            let pts =
                offset_experiment(&env, &GreedyPolicy(&agent), &cfg.eval.offsets, cfg.eval.offset_samples, cfg.eval.seed, f)?;
            write_offset_csv(&pts, &hash, create(&cfg.out_dir.join("offset.csv"))?)?;
            Ok(Outcome::Offsets(pts.iter().map(|p| (p.offset, p.success_rate)).collect()))
        }
        Command::Trace => {
            let (mut env, agent) = load_agent(cfg, checkpoint)?;
            let [fx, fy, tz] = cfg.eval.trace_wrench;
            let d = &cfg.eval.disturbance;
            let spec = DisturbanceSpec { wrench: Wrench2D::new(fx, fy, tz), start: d.start, end: d.end };
            let t = trace_export(&mut env, &mut GreedyPolicy(&agent), spec, cfg.eval.seed, f, cfg.eval.trace_tolerance)?;
            write_qdes_jsonl(&t.reference, create(&cfg.out_dir.join("trace_reference.jsonl"))?)?;
            write_qdes_jsonl(&t.disturbed, create(&cfg.out_dir.join("trace_disturbed.jsonl"))?)?;
            Ok(Outcome::Trace { onset: t.onset })
        }
    }
}

fn report(outcome: &Outcome, out_dir: &Path) {
    match outcome {
        Outcome::Trained(s) => {
            for r in s {
                println!(
                    "seed {}: {} epochs, best success {:.2}, converged at {:?}, checkpoint {}",
                    r.seed,
                    r.epochs,
                    r.best_success_rate,
                    r.converged_at,
                    out_dir.join(&r.final_checkpoint).display()
                );
            }
        }
        Outcome::SuccessRate(r) => println!("success rate {r:.3}"),
        Outcome::Disturbance { spearman, samples } => println!("{samples} disturbed episodes, spearman {spearman:.3}"),
        Outcome::Offsets(p) => {
            for (o, r) in p {
                println!("offset {o:.4} m: success {r:.3}");
            }
        }
        Outcome::Trace { onset } => println!("q_des deviation onset: {onset:?} steps"),
    }
}

/// Parses arguments, runs, and maps the result to an exit code:
/// 0 success, 1 failed run, 2 configuration error.
pub fn main_with_args<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG_ERROR } else { EXIT_OK };
        }
    };
    let overrides = Overrides { long_run: cli.long_run, seeds: cli.seeds.clone(), out_dir: cli.out.clone() };
    let cfg = match &cli.config {
        Some(path) => parse_config(path, &overrides),
        None => parse_str("", &overrides),
    };
    let cfg = match cfg {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG_ERROR;
        }
    };
    match run(cli.command, &cfg, cli.checkpoint.as_deref()) {
        Ok(outcome) => {
            report(&outcome, &cfg.out_dir);
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_RUN_FAILURE
        }
    }
}
