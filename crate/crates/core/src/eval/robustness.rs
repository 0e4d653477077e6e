//! Disturbance recovery, peg-mount uncertainty and q_des trace protocols.

use std::f64::consts::TAU;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::stats::{mean_variance, spearman};
use super::{parallel_map, success_rate};
use crate::control::ControllerKind;
use crate::dynamics::{Pose2, Wrench2D};
use crate::env::{run_episode, DisturbanceSpec, DualArmEnv, EpisodeOutcome, Policy};
use crate::error::{contract, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceConfig {
    pub n_disturbances: usize,
    /// Episodes (seeds `episode_seed..`) per disturbance.
    pub cycles: usize,
    /// Force magnitude cap (N).
    pub max_force: f64,
    /// Torque magnitude cap (N·m).
    pub max_torque: f64,
    pub start: usize,
    pub end: usize,
    /// Equal-count bins for the duration-vs-offset summary.
    pub bins: usize,
    /// Seed of the wrench sampler.
    pub seed: u64,
}

impl Default for DisturbanceConfig {
    fn default() -> Self {
        Self { n_disturbances: 60, cycles: 3, max_force: 15.0, max_torque: 2.0, start: 10, end: 40, bins: 6, seed: 0 }
    }
}

impl DisturbanceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_disturbances == 0 || self.cycles == 0 || self.bins == 0 {
            return Err(contract("disturbance count, cycles and bins must be positive"));
        }
        if !(self.max_force >= 0.0 && self.max_force.is_finite() && self.max_torque >= 0.0 && self.max_torque.is_finite())
        {
            return Err(contract("disturbance caps must be finite and non-negative"));
        }
        if self.start >= self.end {
            return Err(contract("disturbance window must be non-empty"));
        }
        Ok(())
    }

    /// Wrenches with a common magnitude fraction `s ~ U[0, 1)` scaling both
    /// caps, a uniform force direction and a random torque sign.
    pub fn sample_wrenches(&self) -> Vec<Wrench2D> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        (0..self.n_disturbances)
            .map(|_| {
                let s: f64 = rng.random();
                let phi = rng.random_range(0.0..TAU);
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                let f = s * self.max_force;
                Wrench2D::new(f * phi.cos(), f * phi.sin(), sign * s * self.max_torque)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceSample {
    pub disturbance: usize,
    pub cycle: usize,
    pub wrench: Wrench2D,
    /// Largest end-effector deviation from the undisturbed run until the
    /// disturbance window closes (m).
    pub offset: f64,
    /// Episode length in policy steps.
    pub duration: usize,
    pub success: bool,
    pub reference_duration: usize,
    /// Whether the undisturbed episode with the same seed succeeds.
    pub reference_success: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DurationBin {
    pub offset_min: f64,
    pub offset_max: f64,
    pub offset_mean: f64,
    pub mean_duration: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceResult {
    pub samples: Vec<DisturbanceSample>,
    pub bins: Vec<DurationBin>,
    /// Rank correlation between bin offset and bin mean duration.
    pub spearman: f64,
}

/// Largest distance between corresponding end-effector positions of two
/// runs; the shorter run is held at its final pose.
pub fn max_ee_deviation(a: &[[[f64; 2]; 2]], b: &[[[f64; 2]; 2]]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let n = a.len().max(b.len());
    (0..n)
        .map(|t| {
            let (pa, pb) = (a[t.min(a.len() - 1)], b[t.min(b.len() - 1)]);
            (0..2).map(|i| (pa[i][0] - pb[i][0]).hypot(pa[i][1] - pb[i][1])).fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}

fn rollout<P: Policy + Clone>(
    env: &DualArmEnv,
    policy: &P,
    disturbance: Option<DisturbanceSpec>,
    mount: Pose2,
    seed: u64,
    init_offset_fraction: f64,
) -> Result<EpisodeOutcome> {
    let mut env = env.clone();
    let mut policy = policy.clone();
    env.set_disturbance(disturbance)?;
    env.set_peg_mount_offset(mount)?;
    run_episode(&mut env, &mut policy, seed, init_offset_fraction)
}

/// Equal-count bins over the episodes the policy solves undisturbed (a run
/// that fails anyway says nothing about recovery); all episodes when there
/// are none.
fn bin_by_offset(samples: &[DisturbanceSample], bins: usize) -> Vec<DurationBin> {
    let mut order: Vec<&DisturbanceSample> = samples.iter().filter(|s| s.reference_success).collect();
    if order.is_empty() {
        order = samples.iter().collect();
    }
    order.sort_by(|a, b| a.offset.total_cmp(&b.offset));
    let bins = bins.min(order.len());
    (0..bins)
        .map(|k| {
            let part = &order[k * order.len() / bins..(k + 1) * order.len() / bins];
            let offsets: Vec<f64> = part.iter().map(|s| s.offset).collect();
            let durations: Vec<f64> = part.iter().map(|s| s.duration as f64).collect();
            DurationBin {
                offset_min: offsets[0],
                offset_max: offsets[offsets.len() - 1],
                offset_mean: mean_variance(&offsets).0,
                mean_duration: mean_variance(&durations).0,
                count: part.len(),
            }
        })
        .collect()
}

/// Runs every sampled disturbance on `cycles` episodes and relates the
/// resulting end-effector offset to the episode duration.
pub fn disturbance_experiment<P: Policy + Clone + Sync>(
    env: &DualArmEnv,
    policy: &P,
    cfg: &DisturbanceConfig,
    episode_seed: u64,
    init_offset_fraction: f64,
) -> Result<DisturbanceResult> {
    cfg.validate()?;
    let wrenches = cfg.sample_wrenches();
    let mount = env.peg_mount_offset();
    let cycles: Vec<usize> = (0..cfg.cycles).collect();
    let references: Vec<EpisodeOutcome> = parallel_map(&cycles, |&c| {
        rollout(env, policy, None, mount, episode_seed + c as u64, init_offset_fraction)
    })
    .into_iter()
    .collect::<Result<_>>()?;

    let tasks: Vec<(usize, usize)> = (0..cfg.n_disturbances).flat_map(|i| cycles.iter().map(move |&c| (i, c))).collect();
    let samples = parallel_map(&tasks, |&(i, c)| {
        let spec = DisturbanceSpec { wrench: wrenches[i], start: cfg.start, end: cfg.end };
        let run = rollout(env, policy, Some(spec), mount, episode_seed + c as u64, init_offset_fraction)?;
        let reference = &references[c];
        // Later divergence is the policy's doing, not the disturbance's.
        let k = cfg.end.min(run.ee_path.len()).min(reference.ee_path.len());
        Ok(DisturbanceSample {
            disturbance: i,
            cycle: c,
            wrench: wrenches[i],
            offset: max_ee_deviation(&run.ee_path[..k], &reference.ee_path[..k]),
            duration: run.steps,
            success: run.success,
            reference_duration: reference.steps,
            reference_success: reference.success,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let bins = bin_by_offset(&samples, cfg.bins);
    let xs: Vec<f64> = bins.iter().map(|b| b.offset_mean).collect();
    let ys: Vec<f64> = bins.iter().map(|b| b.mean_duration).collect();
    Ok(DisturbanceResult { spearman: spearman(&xs, &ys), samples, bins })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OffsetPoint {
    /// Offset magnitude (m).
    pub offset: f64,
    pub success_rate: f64,
    pub samples: usize,
}

/// Success rate per peg-mount offset magnitude over `n_samples` random
/// directions. Directions are shared across magnitudes and sample `j` always
/// uses episode seed `seed + j`.
pub fn offset_experiment<P: Policy + Clone + Sync>(
    env: &DualArmEnv,
    policy: &P,
    offsets: &[f64],
    n_samples: usize,
    seed: u64,
    init_offset_fraction: f64,
) -> Result<Vec<OffsetPoint>> {
    if n_samples == 0 {
        return Err(contract("offset experiment needs at least one sample"));
    }
    let bound = env.config().max_mount_offset;
    if offsets.iter().any(|m| !(*m >= 0.0 && *m <= bound + 1e-12)) {
        return Err(contract(format!("offset magnitudes must lie in [0, {bound}] m")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dirs: Vec<f64> = (0..n_samples).map(|_| rng.random_range(0.0..TAU)).collect();
    let tasks: Vec<(usize, usize)> = (0..offsets.len()).flat_map(|k| (0..n_samples).map(move |j| (k, j))).collect();
    let wins = parallel_map(&tasks, |&(k, j)| {
        let m = offsets[k];
        let mount = Pose2::new(m * dirs[j].cos(), m * dirs[j].sin(), 0.0);
        rollout(env, policy, None, mount, seed + j as u64, init_offset_fraction).map(|r| r.success)
    })
    .into_iter()
    .collect::<Result<Vec<bool>>>()?;
    Ok(offsets
        .iter()
        .enumerate()
        .map(|(k, &offset)| {
            let hits = wins[k * n_samples..(k + 1) * n_samples].iter().filter(|w| **w).count();
            OffsetPoint { offset, success_rate: hits as f64 / n_samples as f64, samples: n_samples }
        })
        .collect())
}

/// Nominal success rate of the same episodes the offset experiment uses.
pub fn nominal_rate<P: Policy + Clone>(env: &DualArmEnv, policy: &P, n: usize, seed: u64, f: f64) -> Result<f64> {
    let mut env = env.clone();
    env.set_peg_mount_offset(Pose2::IDENTITY)?;
    success_rate(&mut env, &mut policy.clone(), n, seed, f)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QdesTraceRow {
    pub step: usize,
    /// Joint positions when the action was chosen.
    pub q: [Vec<f64>; 2],
    pub q_des: [Vec<f64>; 2],
    pub disturbed: bool,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceExport {
    pub window: (usize, usize),
    pub reference: Vec<QdesTraceRow>,
    pub disturbed: Vec<QdesTraceRow>,
    /// Policy steps from the window start until q_des first departs from
    /// the reference by more than the tolerance.
    pub onset: Option<usize>,
}

fn record_qdes<P: Policy>(env: &mut DualArmEnv, policy: &mut P, seed: u64, f: f64) -> Result<Vec<QdesTraceRow>> {
    let mut obs = env.reset(seed, f)?;
    let mut rows = Vec::new();
    loop {
        let q = [env.states()[0].q.clone(), env.states()[1].q.clone()];
        let action = policy.act(env, &obs)?;
        let (next, reward, done, info) = env.step(&action)?;
        let [a, b] = info.q_des;
        let q_des = [a.expect("joint controller reports q_des"), b.expect("joint controller reports q_des")];
        rows.push(QdesTraceRow { step: info.step, q, q_des, disturbed: info.disturbed, reward });
        obs = next;
        if done {
            return Ok(rows);
        }
    }
}

/// Records desired joint positions with and without `disturbance` from the
/// same start. Joint-position control only.
pub fn trace_export<P: Policy>(
    env: &mut DualArmEnv,
    policy: &mut P,
    disturbance: DisturbanceSpec,
    seed: u64,
    init_offset_fraction: f64,
    tolerance: f64,
) -> Result<TraceExport> {
    if env.config().controller != ControllerKind::JointPosition {
        return Err(contract("q_des traces need the joint-position action space"));
    }
    let previous = env.disturbance();
    env.set_disturbance(None)?;
    let reference = record_qdes(env, policy, seed, init_offset_fraction);
    let disturbed = env.set_disturbance(Some(disturbance)).and_then(|_| record_qdes(env, policy, seed, init_offset_fraction));
    env.set_disturbance(previous)?;
    let (reference, disturbed) = (reference?, disturbed?);
    let onset = reference
        .iter()
        .zip(&disturbed)
        .skip(disturbance.start)
        .find(|(r, d)| {
            (0..2).any(|i| r.q_des[i].iter().zip(&d.q_des[i]).any(|(a, b)| (a - b).abs() > tolerance))
        })
        .map(|(r, _)| r.step - disturbance.start);
    Ok(TraceExport { window: (disturbance.start, disturbance.end), reference, disturbed, onset })
}

/// Largest `|q_des − q|` in a trace (bounded by the per-step action limit).
pub fn max_command_offset(rows: &[QdesTraceRow]) -> f64 {
    rows.iter()
        .flat_map(|r| (0..2).flat_map(move |i| r.q_des[i].iter().zip(&r.q[i]).map(|(d, q)| (d - q).abs())))
        .fold(0.0, f64::max)
}

pub fn write_qdes_jsonl<W: Write>(rows: &[QdesTraceRow], mut out: W) -> Result<()> {
    for r in rows {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub const DISTURBANCE_CSV_HEADER: &str = "offset_bin,mean_duration,config_hash";
pub const DISTURBANCE_SAMPLES_CSV_HEADER: &str = "offset,duration,success,config_hash";
pub const OFFSET_CSV_HEADER: &str = "offset,success_rate,config_hash";

/// Binned mean durations; `offset_bin` is the bin's mean offset in meters.
pub fn write_disturbance_csv<W: Write>(result: &DisturbanceResult, config_hash: &str, mut out: W) -> Result<()> {
    writeln!(out, "{DISTURBANCE_CSV_HEADER}")?;
    for b in &result.bins {
        writeln!(out, "{},{},{}", b.offset_mean, b.mean_duration, config_hash)?;
    }
    Ok(())
}

pub fn write_disturbance_samples_csv<W: Write>(result: &DisturbanceResult, config_hash: &str, mut out: W) -> Result<()> {
    writeln!(out, "{DISTURBANCE_SAMPLES_CSV_HEADER}")?;
    for s in &result.samples {
        writeln!(out, "{},{},{},{}", s.offset, s.duration, s.success as u8, config_hash)?;
    }
    Ok(())
}

pub fn write_offset_csv<W: Write>(points: &[OffsetPoint], config_hash: &str, mut out: W) -> Result<()> {
    writeln!(out, "{OFFSET_CSV_HEADER}")?;
    for p in points {
        writeln!(out, "{},{},{}", p.offset, p.success_rate, config_hash)?;
    }
    Ok(())
}
