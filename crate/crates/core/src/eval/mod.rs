//! Experiment protocols at desk scale: success-rate curves per action
//! space, disturbance recovery, peg-mount uncertainty and q_des traces.

mod robustness;
mod stats;

use std::io::Write;
use std::num::NonZeroUsize;
use std::thread;

use serde::{Deserialize, Serialize};

pub use robustness::{
    disturbance_experiment, max_command_offset, max_ee_deviation, nominal_rate, offset_experiment, trace_export,
    write_disturbance_csv, write_disturbance_samples_csv, write_offset_csv, write_qdes_jsonl, DisturbanceConfig,
    DisturbanceResult, DisturbanceSample, DurationBin, OffsetPoint, QdesTraceRow, TraceExport,
    DISTURBANCE_CSV_HEADER, DISTURBANCE_SAMPLES_CSV_HEADER, OFFSET_CSV_HEADER,
};
pub use stats::{mean_variance, ranks, spearman};

use crate::control::ControllerKind;
use crate::env::{DualArmEnv, EnvConfig, GoalSpec, PegHoleGeometry, Policy, GRIP_OFFSET};
use crate::error::{contract, Result};
use crate::rl::{evaluate, EpochReport, SacConfig, TrainConfig, Trainer};

/// Fraction of `cycles` greedy episodes (seeds `seed..seed + cycles`) that
/// end with reward 1.
pub fn success_rate<P: Policy + ?Sized>(
    env: &mut DualArmEnv,
    policy: &mut P,
    cycles: usize,
    seed: u64,
    init_offset_fraction: f64,
) -> Result<f64> {
    evaluate(env, policy, cycles, seed, init_offset_fraction)
}

/// Task and learner presets.
///
/// `Scaled` is the desk-scale task: wider clearance, a shallower hole, parts
/// starting 2 cm apart and 200-step episodes, with a smaller and faster
/// learner. `Full` keeps the full-size task and learner settings and is
/// meant for long runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Profile {
    Scaled,
    Full,
}

impl Profile {
    pub fn name(self) -> &'static str {
        match self {
            Profile::Scaled => "scaled",
            Profile::Full => "full",
        }
    }

    pub fn env_config(self, kind: ControllerKind) -> EnvConfig {
        let mut cfg = EnvConfig { controller: kind, ..EnvConfig::default() };
        if self == Profile::Scaled {
            cfg.geometry = PegHoleGeometry::with_grip(0.020, 0.060, 0.006, 0.020, 0.010, 0.010, GRIP_OFFSET);
            cfg.goal = GoalSpec::for_geometry(&cfg.geometry);
            cfg.q_init = [vec![-0.124342, -1.134432, -1.097421], vec![0.218594, 1.023240, 1.114360]];
            cfg.max_steps = 200;
        }
        cfg.init_offset_fraction = self.train_config().init_offset_fraction;
        cfg
    }

    pub fn sac_config(self) -> SacConfig {
        match self {
            Profile::Scaled => SacConfig { hidden: 64, lr: 1e-3, ..SacConfig::default() },
            Profile::Full => SacConfig::default(),
        }
    }

    pub fn train_config(self) -> TrainConfig {
        match self {
            Profile::Scaled => TrainConfig {
                batch_size: 128,
                warmup: 1000,
                updates_per_epoch: 80,
                init_offset_fraction: 0.02,
                ..TrainConfig::default()
            },
            Profile::Full => TrainConfig::default(),
        }
    }

    /// Training budget in epochs.
    pub fn epochs(self) -> usize {
        match self {
            Profile::Scaled => 2000,
            Profile::Full => 14_000,
        }
    }

    /// Disturbance window `[start, end)` in policy steps. The scaled task is
    /// solved in roughly ten steps, so its window sits inside the approach.
    pub fn disturbance_window(self) -> (usize, usize) {
        match self {
            Profile::Scaled => (2, 8),
            Profile::Full => (10, 40),
        }
    }

    /// Test episodes per sampled disturbance. Episodes are cheap at scaled
    /// size, so more of them steady the binned durations.
    pub fn disturbance_cycles(self) -> usize {
        match self {
            Profile::Scaled => 10,
            Profile::Full => 3,
        }
    }

    /// Peg-mount offset magnitudes for the uncertainty experiment (m).
    pub fn mount_offsets(self) -> Vec<f64> {
        vec![0.0, 0.005, 0.010]
    }
}

/// Early stop once `consecutive` evaluations in a row reach `threshold`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopRule {
    pub threshold: f64,
    pub consecutive: usize,
}

impl Default for StopRule {
    fn default() -> Self {
        Self { threshold: 0.8, consecutive: 3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub epoch: usize,
    pub success_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedCurve {
    pub seed: u64,
    pub points: Vec<CurvePoint>,
    /// Epoch at which the stop rule fired, if it did.
    pub converged_at: Option<usize>,
}

impl SeedCurve {
    /// First evaluated epoch with success rate at least `threshold`.
    pub fn first_reaching(&self, threshold: f64) -> Option<usize> {
        self.points.iter().find(|p| p.success_rate >= threshold).map(|p| p.epoch)
    }

    pub fn best(&self) -> f64 {
        self.points.iter().map(|p| p.success_rate).fold(0.0, f64::max)
    }
}

/// Trains for up to `epochs` more epochs, recording every evaluation.
/// `on_epoch` sees each report (checkpointing hooks in here).
pub fn train_curve<F>(
    trainer: &mut Trainer,
    seed: u64,
    epochs: usize,
    stop: Option<StopRule>,
    mut on_epoch: F,
) -> Result<SeedCurve>
where
    F: FnMut(&Trainer, &EpochReport) -> Result<()>,
{
    let mut curve = SeedCurve { seed, points: Vec::new(), converged_at: None };
    let mut streak = 0;
    for _ in 0..epochs {
        let report = trainer.train_epoch()?;
        on_epoch(trainer, &report)?;
        if let Some(rate) = report.eval_success {
            curve.points.push(CurvePoint { epoch: report.epoch, success_rate: rate });
            if let Some(rule) = stop {
                streak = if rate >= rule.threshold { streak + 1 } else { 0 };
                if streak >= rule.consecutive {
                    curve.converged_at = Some(report.epoch);
                    break;
                }
            }
        }
    }
    Ok(curve)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregatePoint {
    pub epoch: usize,
    pub mean: f64,
    pub variance: f64,
    /// Curves that were still running at this epoch.
    pub runs: usize,
}

/// Success curves of one action space and clearance over several seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub action_space: ControllerKind,
    pub clearance: f64,
    pub seeds: Vec<u64>,
    pub config_hash: String,
    pub curves: Vec<SeedCurve>,
    pub aggregate: Vec<AggregatePoint>,
}

impl ExperimentResult {
    pub fn new(action_space: ControllerKind, clearance: f64, config_hash: &str, curves: Vec<SeedCurve>) -> Result<Self> {
        if curves.is_empty() {
            return Err(contract("an experiment needs at least one seed"));
        }
        if curves.iter().flat_map(|c| &c.points).any(|p| !(0.0..=1.0).contains(&p.success_rate)) {
            return Err(contract("success rates must lie in [0, 1]"));
        }
        let mut epochs: Vec<usize> = curves.iter().flat_map(|c| c.points.iter().map(|p| p.epoch)).collect();
        epochs.sort_unstable();
        epochs.dedup();
        let aggregate = epochs
            .into_iter()
            .map(|epoch| {
                let rates: Vec<f64> = curves
                    .iter()
                    .filter_map(|c| c.points.iter().find(|p| p.epoch == epoch).map(|p| p.success_rate))
                    .collect();
                let (mean, variance) = mean_variance(&rates);
                AggregatePoint { epoch, mean, variance, runs: rates.len() }
            })
            .collect();
        Ok(Self {
            action_space,
            clearance,
            seeds: curves.iter().map(|c| c.seed).collect(),
            config_hash: config_hash.to_string(),
            curves,
            aggregate,
        })
    }
}

pub const CURVES_CSV_HEADER: &str = "action_space,clearance,epoch,seed,success_rate,config_hash";

/// Success-rate curves, one row per (action space, seed, evaluated epoch);
/// several experiments land side by side in one file.
pub fn write_curves_csv<W: Write>(results: &[ExperimentResult], mut out: W) -> Result<()> {
    writeln!(out, "{CURVES_CSV_HEADER}")?;
    for r in results {
        for c in &r.curves {
            for p in &c.points {
                writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    r.action_space.name(),
                    r.clearance,
                    p.epoch,
                    c.seed,
                    p.success_rate,
                    r.config_hash
                )?;
            }
        }
    }
    Ok(())
}

/// Applies `f` to every item on worker threads and returns the results in
/// input order, so the output does not depend on scheduling.
pub fn parallel_map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let workers = thread::available_parallelism().map_or(1, NonZeroUsize::get).min(items.len()).max(1);
    if workers == 1 {
        return items.iter().map(&f).collect();
    }
    let chunk = items.len().div_ceil(workers);
    thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|part| {
                let f = &f;
                s.spawn(move || part.iter().map(f).collect::<Vec<R>>())
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("experiment worker panicked")).collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::ScriptedPolicy;

    #[test]
    fn scripted_oracle_succeeds_on_scaled_profile() {
        for kind in ControllerKind::ALL {
            let cfg = Profile::Scaled.env_config(kind);
            let mut env = DualArmEnv::new(cfg.clone()).unwrap();
            let rate = success_rate(&mut env, &mut ScriptedPolicy, 5, 0, cfg.init_offset_fraction).unwrap();
            assert_eq!(rate, 1.0, "{}", kind.name());
        }
    }

    #[test]
    fn profiles_are_valid() {
        for p in [Profile::Scaled, Profile::Full] {
            for kind in ControllerKind::ALL {
                p.env_config(kind).validate().unwrap();
            }
            p.sac_config().validate().unwrap();
            p.train_config().validate().unwrap();
            let (a, b) = p.disturbance_window();
            assert!(a < b && b <= p.env_config(ControllerKind::JointPosition).max_steps);
        }
    }

    #[test]
    fn aggregate_handles_early_stopped_curves() {
        let pt = |epoch, success_rate| CurvePoint { epoch, success_rate };
        let a = SeedCurve { seed: 0, points: vec![pt(5, 0.0), pt(10, 1.0)], converged_at: Some(10) };
        let b = SeedCurve { seed: 1, points: vec![pt(5, 0.5), pt(10, 0.5), pt(15, 1.0)], converged_at: None };
        let r = ExperimentResult::new(ControllerKind::JointPosition, 0.006, "h", vec![a, b]).unwrap();
        assert_eq!(r.seeds, vec![0, 1]);
        assert_eq!(r.aggregate[0], AggregatePoint { epoch: 5, mean: 0.25, variance: 0.0625, runs: 2 });
        assert_eq!(r.aggregate[2].runs, 1);
        let bad = SeedCurve { seed: 2, points: vec![pt(5, 1.5)], converged_at: None };
        assert!(ExperimentResult::new(ControllerKind::JointPosition, 0.006, "h", vec![bad]).is_err());

        let mut csv = Vec::new();
        write_curves_csv(&[r], &mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert_eq!(text.lines().next().unwrap(), CURVES_CSV_HEADER);
        assert_eq!(text.lines().nth(1).unwrap(), "joint_position,0.006,5,0,0,h");
        assert_eq!(text.lines().count(), 6);
    }

    #[test]
    fn parallel_map_keeps_order() {
        let items: Vec<u64> = (0..37).collect();
        assert_eq!(parallel_map(&items, |x| x * x), items.iter().map(|x| x * x).collect::<Vec<_>>());
        assert!(parallel_map(&Vec::<u64>::new(), |x| *x).is_empty());
    }
}
