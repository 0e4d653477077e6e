//! Goal-based dual-arm peg-in-hole environment.

mod contact;
mod geometry;
mod scripted;

use std::f64::consts::FRAC_PI_2;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use contact::{contact_resolve, ContactParams, ContactPoint, ContactResult, Twist2};
pub use geometry::{goal_vector, PegHoleGeometry, Rect, GRIP_OFFSET};
pub use scripted::scripted_action;

use crate::control::{action_to_commands, ArmCommand, ControllerKind, GainSpec};
use crate::dynamics::{wrap_angle, ArmModel, ArmState, Link, Pose2, Wrench2D, SIM_DT};
use crate::error::{contract, Error, Result};

pub const EPISODE_STEPS: usize = 400;
pub const SUBSTEPS: usize = 4;

/// Sparse goal reward: 1 when the L1 distance is strictly below `delta`.
pub fn compute_reward(achieved: &[f64], desired: &[f64], delta: f64) -> f64 {
    assert_eq!(achieved.len(), desired.len(), "goal vectors differ in length");
    let dist: f64 = achieved.iter().zip(desired).map(|(a, d)| (a - d).abs()).sum();
    if dist < delta {
        1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalSpec {
    /// Desired peg-in-hole relative pose `(x, y, w·θ)`.
    pub desired: [f64; 3],
    pub delta: f64,
    /// Length per radian used to fold the angle into the goal (m/rad).
    pub angle_weight: f64,
}

impl GoalSpec {
    pub fn for_geometry(geometry: &PegHoleGeometry) -> Self {
        Self { desired: [geometry.insertion_depth, 0.0, 0.0], delta: 0.005, angle_weight: 0.05 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0) || !(self.angle_weight > 0.0) {
            return Err(contract("goal threshold and angle weight must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// `[q, q̇, τ, ee_pos, ee_ori]` of arm 0 followed by arm 1.
    pub state: Vec<f64>,
    pub achieved_goal: Vec<f64>,
    pub desired_goal: Vec<f64>,
}

impl Observation {
    pub fn state_len(dofs: [usize; 2]) -> usize {
        dofs.iter().map(|n| 3 * n + 3).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.state.iter().chain(&self.achieved_goal).chain(&self.desired_goal).all(|v| v.is_finite())
    }
}

/// World-frame wrench on the peg, applied at the peg's center, active for
/// policy steps `start..end`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceSpec {
    pub wrench: Wrench2D,
    pub start: usize,
    pub end: usize,
}

impl DisturbanceSpec {
    pub fn new(wrench: Wrench2D) -> Self {
        Self { wrench, start: 10, end: 40 }
    }

    pub fn active(&self, step: usize) -> bool {
        step >= self.start && step < self.end
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct StepInfo {
    /// Largest contact force magnitude on the peg over the substeps (N).
    pub peg_contact_force: f64,
    pub hole_contact_force: f64,
    /// Joint targets per arm when a joint-space controller is active.
    pub q_des: [Option<Vec<f64>>; 2],
    pub disturbed: bool,
    pub diverged: bool,
    pub success: bool,
    pub step: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: usize,
    pub q: [Vec<f64>; 2],
    pub q_des: [Option<Vec<f64>>; 2],
    pub ee: [Pose2; 2],
    pub action: Vec<f64>,
    pub reward: f64,
    pub peg_contact_force: f64,
    pub hole_contact_force: f64,
}

pub fn write_trace_jsonl<W: Write>(records: &[TraceRecord], mut out: W) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Anything that maps the current environment state to an action.
pub trait Policy {
    fn act(&mut self, env: &DualArmEnv, obs: &Observation) -> Result<Vec<f64>>;
}

/// Hand-built oracle with access to the true state.
#[derive(Debug, Clone, Copy, Default)]
pub struct ScriptedPolicy;

impl Policy for ScriptedPolicy {
    fn act(&mut self, env: &DualArmEnv, _obs: &Observation) -> Result<Vec<f64>> {
        Ok(scripted_action(env))
    }
}

/// Summary of one rolled-out episode.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeOutcome {
    pub success: bool,
    pub diverged: bool,
    pub steps: usize,
    /// End-effector positions of both arms after every step.
    pub ee_path: Vec<[[f64; 2]; 2]>,
}

/// Runs one episode from `reset(seed, init_offset_fraction)` to termination.
pub fn run_episode<P: Policy + ?Sized>(
    env: &mut DualArmEnv,
    policy: &mut P,
    seed: u64,
    init_offset_fraction: f64,
) -> Result<EpisodeOutcome> {
    let mut obs = env.reset(seed, init_offset_fraction)?;
    let mut out = EpisodeOutcome { success: false, diverged: false, steps: 0, ee_path: Vec::new() };
    loop {
        let action = policy.act(env, &obs)?;
        let (next, _, done, info) = env.step(&action)?;
        out.steps += 1;
        let ee = env.ee_poses();
        out.ee_path.push([ee[0].position(), ee[1].position()]);
        out.success |= info.success;
        out.diverged |= info.diverged;
        obs = next;
        if done {
            return Ok(out);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub arms: [ArmModel; 2],
    pub q_init: [Vec<f64>; 2],
    pub gains: [GainSpec; 2],
    pub controller: ControllerKind,
    pub geometry: PegHoleGeometry,
    pub goal: GoalSpec,
    pub contact: ContactParams,
    pub dt: f64,
    pub substeps: usize,
    pub max_steps: usize,
    /// Index of the arm carrying the peg; the other one carries the hole.
    pub peg_arm: usize,
    pub init_offset_fraction: f64,
    /// Bound on the translational part of a peg mount offset (m).
    pub max_mount_offset: f64,
}

/// Three-link planar arm used by default for both sides.
pub fn default_arm(base: Pose2) -> ArmModel {
    let spec = [(0.4, 2.0, 40.0), (0.4, 1.5, 30.0), (0.2, 0.5, 15.0)];
    let links = spec
        .iter()
        .map(|&(len, mass, limit)| Link {
            friction: 0.1,
            armature: 0.1,
            lower: -2.9,
            upper: 2.9,
            torque_limit: limit,
            ..Link::rod(len, mass)
        })
        .collect();
    ArmModel::new(links, base, [0.0, 0.0]).expect("default arm is valid")
}

impl Default for EnvConfig {
    fn default() -> Self {
        let arms = [default_arm(Pose2::new(-0.65, 0.0, FRAC_PI_2)), default_arm(Pose2::new(0.65, 0.0, FRAC_PI_2))];
        let geometry = PegHoleGeometry::default();
        Self {
            gains: [GainSpec::default_for(3), GainSpec::default_for(3)],
            q_init: [vec![-0.046929, -1.218792, -1.090473], vec![0.191131, 1.056601, 1.108463]],
            arms,
            controller: ControllerKind::JointPosition,
            goal: GoalSpec::for_geometry(&geometry),
            geometry,
            contact: ContactParams::default(),
            dt: SIM_DT,
            substeps: SUBSTEPS,
            max_steps: EPISODE_STEPS,
            peg_arm: 0,
            init_offset_fraction: 0.0,
            max_mount_offset: 0.01,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        for i in 0..2 {
            self.arms[i].validate()?;
            let n = self.arms[i].dof();
            if self.q_init[i].len() != n {
                return Err(contract(format!("q_init for arm {i} has {} entries, arm has {n} joints", self.q_init[i].len())));
            }
            if !self.arms[i].within_limits(&self.q_init[i]) {
                return Err(contract(format!("q_init for arm {i} violates joint limits")));
            }
            self.gains[i].validate(n)?;
        }
        self.geometry.validate()?;
        self.goal.validate()?;
        if self.peg_arm > 1 {
            return Err(contract("peg_arm must be 0 or 1"));
        }
        if !(self.dt > 0.0) || self.substeps == 0 || self.max_steps == 0 {
            return Err(contract("dt, substeps and max_steps must be positive"));
        }
        if !(self.init_offset_fraction >= 0.0) {
            return Err(contract("init offset fraction must be non-negative"));
        }
        Ok(())
    }

    pub fn dofs(&self) -> [usize; 2] {
        [self.arms[0].dof(), self.arms[1].dof()]
    }

    pub fn action_dim(&self) -> usize {
        let [a, b] = self.dofs();
        self.controller.per_arm_dim(a) + self.controller.per_arm_dim(b)
    }

    pub fn obs_dim(&self) -> usize {
        Observation::state_len(self.dofs())
    }

    pub fn hole_arm(&self) -> usize {
        1 - self.peg_arm
    }
}

const RESET_RETRIES: usize = 100;

#[derive(Debug, Clone)]
pub struct DualArmEnv {
    cfg: EnvConfig,
    states: [ArmState; 2],
    rng: ChaCha8Rng,
    step: usize,
    done: bool,
    disturbance: Option<DisturbanceSpec>,
    mount_offset: Pose2,
    start: [Vec<f64>; 2],
    trace: Option<Vec<TraceRecord>>,
}

impl DualArmEnv {
    pub fn new(cfg: EnvConfig) -> Result<Self> {
        cfg.validate()?;
        let states = cfg.q_init.clone().map(ArmState::at_rest);
        let start = cfg.q_init.clone();
        Ok(Self {
            cfg,
            states,
            rng: ChaCha8Rng::seed_from_u64(0),
            step: 0,
            done: true,
            disturbance: None,
            mount_offset: Pose2::IDENTITY,
            start,
            trace: None,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn states(&self) -> &[ArmState; 2] {
        &self.states
    }

    /// Joint configuration arm `i` started the current episode from.
    pub fn start_q(&self, i: usize) -> &[f64] {
        &self.start[i]
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// Starts an episode with both arms at `q_init·(1 + u)`, `u ~ U[-f, f]`
    /// per joint. Samples outside the joint limits or with the parts
    /// interpenetrating are redrawn.
    pub fn reset(&mut self, seed: u64, init_offset_fraction: f64) -> Result<Observation> {
        if !(init_offset_fraction >= 0.0) {
            return Err(contract("init offset fraction must be non-negative"));
        }
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        let f = init_offset_fraction;
        for _ in 0..RESET_RETRIES {
            let mut states = self.cfg.q_init.clone().map(ArmState::at_rest);
            for (i, s) in states.iter_mut().enumerate() {
                for (q, q0) in s.q.iter_mut().zip(&self.cfg.q_init[i]) {
                    let u = if f > 0.0 { self.rng.random_range(-f..=f) } else { 0.0 };
                    *q = q0 * (1.0 + u);
                }
            }
            if !(0..2).all(|i| self.cfg.arms[i].within_limits(&states[i].q)) {
                continue;
            }
            self.states = states;
            if self.contact()?.in_contact() {
                continue;
            }
            self.start = [self.states[0].q.clone(), self.states[1].q.clone()];
            self.step = 0;
            self.done = false;
            if let Some(t) = self.trace.as_mut() {
                t.clear();
            }
            return Ok(self.observe());
        }
        Err(contract(format!("no collision-free start within joint limits after {RESET_RETRIES} draws")))
    }

    /// Applies one policy action for `substeps` physics steps.
    pub fn step(&mut self, action: &[f64]) -> Result<(Observation, f64, bool, StepInfo)> {
        if self.done {
            return Err(contract("episode finished; call reset first"));
        }
        if action.iter().any(|a| !a.is_finite()) {
            return Err(Error::Numeric("non-finite action".into()));
        }
        let commands = action_to_commands(
            self.cfg.controller,
            action,
            [&self.states[0], &self.states[1]],
            [&self.cfg.gains[0], &self.cfg.gains[1]],
        )?;
        let disturbed = self.disturbance.is_some_and(|d| d.active(self.step) && d.wrench != Wrench2D::ZERO);
        let mut info = StepInfo {
            q_des: [0, 1].map(|i| commands[i].joint_target().map(<[f64]>::to_vec)),
            disturbed,
            step: self.step,
            ..StepInfo::default()
        };
        for _ in 0..self.cfg.substeps {
            match self.substep(&commands, disturbed) {
                Ok((fp, fh)) => {
                    info.peg_contact_force = info.peg_contact_force.max(fp);
                    info.hole_contact_force = info.hole_contact_force.max(fh);
                }
                Err(Error::Diverged(msg)) => {
                    log::debug!("episode aborted: {msg}");
                    info.diverged = true;
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        self.step += 1;
        let obs = self.observe();
        let reward = if info.diverged {
            0.0
        } else {
            compute_reward(&obs.achieved_goal, &obs.desired_goal, self.cfg.goal.delta)
        };
        info.success = reward == 1.0;
        self.done = info.diverged || info.success || self.step >= self.cfg.max_steps;
        let ee = self.ee_poses();
        if let Some(t) = self.trace.as_mut() {
            t.push(TraceRecord {
                step: info.step,
                q: [self.states[0].q.clone(), self.states[1].q.clone()],
                q_des: info.q_des.clone(),
                ee,
                action: action.to_vec(),
                reward,
                peg_contact_force: info.peg_contact_force,
                hole_contact_force: info.hole_contact_force,
            });
        }
        Ok((obs, reward, self.done, info))
    }

    fn substep(&mut self, commands: &[ArmCommand; 2], disturbed: bool) -> Result<(f64, f64)> {
        let (p, h) = (self.cfg.peg_arm, self.cfg.hole_arm());
        let contact = self.contact()?;
        let ee = self.ee_poses();
        let peg = self.peg_pose();
        let hole = self.hole_pose();
        // Wrenches acting on each end-effector, about the end-effector point.
        let mut on_ee = [Wrench2D::ZERO; 2];
        on_ee[p] = contact.on_peg.transport(peg.position(), ee[p].position());
        on_ee[h] = contact.on_hole.transport(hole.position(), ee[h].position());
        if disturbed {
            let d = self.disturbance.expect("disturbed implies a spec");
            let center = peg.transform_point([-0.5 * self.cfg.geometry.peg_length, 0.0]);
            on_ee[p] = on_ee[p].add(&d.wrench.transport(center, ee[p].position()));
        }
        let mut next = self.states.clone();
        for i in 0..2 {
            let model = &self.cfg.arms[i];
            let state = &self.states[i];
            let tau = commands[i].torque(model, state, &self.cfg.q_init[i], &self.cfg.gains[i]);
            // The arm pushes back on the environment with the opposite wrench.
            let h_env = on_ee[i].scale(-1.0).as_array();
            let tau_ext = model.jacobian(&state.q).tr_matvec(&h_env);
            next[i] = model.integrate_step(state, &tau, &tau_ext, self.cfg.dt)?;
        }
        self.states = next;
        Ok((contact.on_peg.force_norm(), contact.on_hole.force_norm()))
    }

    pub fn ee_poses(&self) -> [Pose2; 2] {
        [0, 1].map(|i| self.cfg.arms[i].forward_kinematics(&self.states[i].q))
    }

    fn ee_twist(&self, i: usize) -> Twist2 {
        let v = self.cfg.arms[i].ee_velocity(&self.states[i].q, &self.states[i].qdot);
        Twist2::new(v[0], v[1], v[2])
    }

    /// Rigidly attached body frame twist from the carrying end-effector's.
    fn attached_twist(&self, i: usize, frame: &Pose2) -> Twist2 {
        let ee = self.ee_poses()[i];
        let t = self.ee_twist(i);
        let v = t.point_velocity(ee.position(), frame.position());
        Twist2::new(v[0], v[1], t.omega)
    }

    /// True peg tip frame, including any mount offset.
    pub fn peg_pose(&self) -> Pose2 {
        let ee = self.cfg.arms[self.cfg.peg_arm].forward_kinematics(&self.states[self.cfg.peg_arm].q);
        self.cfg.geometry.peg_pose(&ee, &self.mount_offset)
    }

    pub fn hole_pose(&self) -> Pose2 {
        let h = self.cfg.hole_arm();
        self.cfg.geometry.hole_pose(&self.cfg.arms[h].forward_kinematics(&self.states[h].q))
    }

    pub fn contact(&self) -> Result<ContactResult> {
        let peg = self.peg_pose();
        let hole = self.hole_pose();
        contact_resolve(
            &peg,
            &self.attached_twist(self.cfg.peg_arm, &peg),
            &hole,
            &self.attached_twist(self.cfg.hole_arm(), &hole),
            &self.cfg.geometry,
            &self.cfg.contact,
        )
    }

    pub fn achieved_goal(&self) -> [f64; 3] {
        goal_vector(&self.peg_pose(), &self.hole_pose(), self.cfg.goal.angle_weight)
    }

    pub fn observe(&self) -> Observation {
        let mut state = Vec::with_capacity(self.cfg.obs_dim());
        for (i, ee) in self.ee_poses().iter().enumerate() {
            let s = &self.states[i];
            state.extend(&s.q);
            state.extend(&s.qdot);
            state.extend(&s.last_tau);
            state.extend([ee.x, ee.y, wrap_angle(ee.theta)]);
        }
        Observation {
            state,
            achieved_goal: self.achieved_goal().to_vec(),
            desired_goal: self.cfg.goal.desired.to_vec(),
        }
    }

    pub fn set_disturbance(&mut self, spec: Option<DisturbanceSpec>) -> Result<()> {
        if let Some(d) = spec {
            if d.start >= d.end || d.end > self.cfg.max_steps {
                return Err(contract(format!(
                    "disturbance window [{}, {}) must be non-empty and within {} steps",
                    d.start, d.end, self.cfg.max_steps
                )));
            }
            if !d.wrench.is_finite() {
                return Err(Error::Numeric("non-finite disturbance wrench".into()));
            }
        }
        self.disturbance = spec;
        Ok(())
    }

    pub fn disturbance(&self) -> Option<DisturbanceSpec> {
        self.disturbance
    }

    /// Shifts the peg in its gripper. The offset is expressed in the peg
    /// frame and never appears in observations.
    pub fn set_peg_mount_offset(&mut self, offset: Pose2) -> Result<()> {
        if !(offset.x.is_finite() && offset.y.is_finite() && offset.theta.is_finite()) {
            return Err(Error::Numeric("non-finite mount offset".into()));
        }
        if offset.x.hypot(offset.y) > self.cfg.max_mount_offset + 1e-12 {
            return Err(contract(format!(
                "mount offset {:.4} m exceeds the configured bound {:.4} m",
                offset.x.hypot(offset.y),
                self.cfg.max_mount_offset
            )));
        }
        self.mount_offset = offset;
        Ok(())
    }

    pub fn peg_mount_offset(&self) -> Pose2 {
        self.mount_offset
    }

    /// Starts collecting per-step trace records (cleared on reset).
    pub fn enable_trace(&mut self, on: bool) {
        self.trace = on.then(Vec::new);
    }

    pub fn trace(&self) -> &[TraceRecord] {
        self.trace.as_deref().unwrap_or(&[])
    }
}
