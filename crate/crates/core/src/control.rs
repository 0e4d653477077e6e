//! Decentralized single-arm torque laws. Each arm's torques depend only on
//! that arm's state and its slice of the policy action; coupling between
//! the arms happens exclusively through the shared policy.

use serde::{Deserialize, Serialize};

use crate::dynamics::{wrap_angle, ArmModel, ArmState, SIM_DT};
use crate::error::{contract, Result};
use crate::math::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ControllerKind {
    JointPosition,
    CartesianImpedance,
    VariableCartesianImpedance,
}

impl ControllerKind {
    pub const ALL: [ControllerKind; 3] =
        [Self::JointPosition, Self::CartesianImpedance, Self::VariableCartesianImpedance];

    /// Action width for one arm with `dof` joints.
    pub fn per_arm_dim(self, dof: usize) -> usize {
        match self {
            Self::JointPosition => dof,
            Self::CartesianImpedance => 3,
            Self::VariableCartesianImpedance => 6,
        }
    }

    /// Policy action width for two arms.
    pub fn action_dim(self, dof: usize) -> usize {
        2 * self.per_arm_dim(dof)
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::JointPosition => "joint_position",
            Self::CartesianImpedance => "cartesian_impedance",
            Self::VariableCartesianImpedance => "variable_cartesian_impedance",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainSpec {
    /// Joint-space stiffness per joint (N·m/rad).
    pub joint_kp: Vec<f64>,
    pub joint_kv: Vec<f64>,
    /// Task-space stiffness for `(x, y, θ)`.
    pub cart_kp: [f64; 3],
    pub cart_kv: [f64; 3],
    pub var_kp_min: [f64; 3],
    pub var_kp_max: [f64; 3],
    pub null_kp: f64,
    pub null_kv: f64,
    /// Per-tick bound on the commanded task-space offset.
    pub dx_max: [f64; 3],
    /// Per-tick bound on the joint target offset.
    pub dq_max: Vec<f64>,
}

pub fn critical_damping(kp: f64) -> f64 {
    2.0 * kp.sqrt()
}

impl GainSpec {
    pub fn default_for(dof: usize) -> Self {
        let joint_kp = vec![60.0; dof];
        let cart_kp = [300.0, 300.0, 30.0];
        Self {
            joint_kv: joint_kp.iter().map(|k| critical_damping(*k)).collect(),
            joint_kp,
            cart_kv: cart_kp.map(critical_damping),
            cart_kp,
            var_kp_min: [10.0, 10.0, 1.0],
            var_kp_max: [1000.0, 1000.0, 100.0],
            null_kp: 10.0,
            null_kv: critical_damping(10.0),
            dx_max: [0.05, 0.05, 0.2],
            dq_max: vec![0.1; dof],
        }
    }

    pub fn validate(&self, dof: usize) -> Result<()> {
        let per_joint = [&self.joint_kp, &self.joint_kv, &self.dq_max];
        if per_joint.iter().any(|v| v.len() != dof) {
            return Err(contract(format!("joint gains and dq_max need {dof} entries")));
        }
        let all = self
            .joint_kp
            .iter()
            .chain(&self.joint_kv)
            .chain(&self.cart_kp)
            .chain(&self.cart_kv)
            .chain(&self.var_kp_min)
            .chain([&self.null_kp, &self.null_kv]);
        if all.clone().any(|g| !(g.is_finite() && *g >= 0.0)) {
            return Err(contract("gains must be finite and non-negative"));
        }
        for i in 0..3 {
            if !(self.var_kp_min[i] > 0.0 && self.var_kp_min[i] <= self.var_kp_max[i] && self.var_kp_max[i].is_finite()) {
                return Err(contract("variable stiffness bounds need 0 < kp_min <= kp_max < inf"));
            }
            if !(self.dx_max[i] > 0.0 && self.dx_max[i].is_finite()) {
                return Err(contract("dx_max must be positive and finite"));
            }
        }
        if self.dq_max.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
            return Err(contract("dq_max must be positive and finite"));
        }
        Ok(())
    }
}

/// `τ = kp∘(q_des − q) − kv∘q̇`, clamped to the torque limits.
pub fn joint_position_torque(model: &ArmModel, gains: &GainSpec, q_des: &[f64], q: &[f64], qdot: &[f64]) -> Vec<f64> {
    let tau: Vec<f64> = (0..q.len())
        .map(|i| gains.joint_kp[i] * (q_des[i] - q[i]) - gains.joint_kv[i] * qdot[i])
        .collect();
    model.clamp_torques(&tau)
}

/// Dynamically consistent nullspace torque pulling toward `q_rest`:
/// `τ_ns = (I − Jᵀ J̄ᵀ)(kp_ns (q_rest − q) − kv_ns q̇)` with `J̄ = M⁻¹ Jᵀ Λ`.
pub fn nullspace_torque(model: &ArmModel, q: &[f64], qdot: &[f64], q_rest: &[f64], gains: &GainSpec) -> Vec<f64> {
    let n = q.len();
    let tau0: Vec<f64> = (0..n).map(|i| gains.null_kp * (q_rest[i] - q[i]) - gains.null_kv * qdot[i]).collect();
    let j = model.jacobian(q);
    let m_inv = model.mass_matrix(q).inverse_spd().expect("mass matrix of a valid arm is SPD");
    let lambda = model.task_inertia(q);
    let jbar = m_inv.matmul(&j.transpose()).matmul(&lambda);
    let projector = Matrix::identity(n).sub(&j.transpose().matmul(&jbar.transpose()));
    projector.matvec(&tau0)
}

/// Task-space error `x_des − x` with the angle wrapped.
pub fn pose_error(target: [f64; 3], actual: [f64; 3]) -> [f64; 3] {
    [target[0] - actual[0], target[1] - actual[1], wrap_angle(target[2] - actual[2])]
}

/// `τ = Jᵀ (kp∘Δx − Λ(x) (kv∘ẋ)) + τ_gc + τ_ns`, clamped to the torque limits.
#[allow(clippy::too_many_arguments)]
pub fn cartesian_impedance_torque(
    model: &ArmModel,
    q: &[f64],
    qdot: &[f64],
    delta_x: [f64; 3],
    kp: [f64; 3],
    kv: [f64; 3],
    q_rest: &[f64],
    gains: &GainSpec,
) -> Vec<f64> {
    let j = model.jacobian(q);
    let xdot = j.matvec(qdot);
    // Stiffness acts directly so the static compliance is f/kp; damping is
    // inertia-weighted.
    let damp = model.task_inertia(q).matvec(&[kv[0] * xdot[0], kv[1] * xdot[1], kv[2] * xdot[2]]);
    let force: Vec<f64> = (0..3).map(|i| kp[i] * delta_x[i] - damp[i]).collect();
    let task = j.tr_matvec(&force);
    let gc = model.gravity_torques(q);
    let ns = nullspace_torque(model, q, qdot, q_rest, gains);
    let tau: Vec<f64> = (0..q.len()).map(|i| task[i] + gc[i] + ns[i]).collect();
    model.clamp_torques(&tau)
}

/// Holds the pose at `q0` under Cartesian impedance while a constant
/// world-frame force `f` pushes the end-effector; returns the settled
/// displacement `x − x_des` after `seconds` of simulation.
pub fn steady_state_displacement(
    model: &ArmModel,
    gains: &GainSpec,
    q0: &[f64],
    f: [f64; 3],
    seconds: f64,
) -> Result<[f64; 3]> {
    let target = model.forward_kinematics(q0);
    let x_des = [target.x, target.y, target.theta];
    let mut state = ArmState::at_rest(q0.to_vec());
    let steps = (seconds / SIM_DT).round() as usize;
    for _ in 0..steps {
        let ee = model.forward_kinematics(&state.q);
        let dx = pose_error(x_des, [ee.x, ee.y, ee.theta]);
        let tau = cartesian_impedance_torque(model, &state.q, &state.qdot, dx, gains.cart_kp, gains.cart_kv, q0, gains);
        // The robot pushes back on whatever applies f.
        let tau_ext = model.jacobian(&state.q).tr_matvec(&[-f[0], -f[1], -f[2]]);
        state = model.integrate_step(&state, &tau, &tau_ext, SIM_DT)?;
    }
    let ee = model.forward_kinematics(&state.q);
    let e = pose_error([ee.x, ee.y, ee.theta], x_des);
    Ok(e)
}

/// Maps raw actions in (−1, 1) log-linearly onto `[kp_min, kp_max]` per
/// axis and couples `kv = 2 √kp`.
pub fn variable_impedance_map(raw: [f64; 3], gains: &GainSpec) -> ([f64; 3], [f64; 3]) {
    let mut kp = [0.0; 3];
    for i in 0..3 {
        let (lo, hi) = (gains.var_kp_min[i].ln(), gains.var_kp_max[i].ln());
        let t = 0.5 * (raw[i].clamp(-1.0, 1.0) + 1.0);
        kp[i] = (lo + t * (hi - lo)).exp();
    }
    (kp, kp.map(critical_damping))
}

/// What one arm's controller tracks between two policy ticks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ArmCommand {
    JointTarget { q_des: Vec<f64> },
    Cartesian { delta_x: [f64; 3], kp: [f64; 3], kv: [f64; 3] },
}

impl ArmCommand {
    /// Interprets one arm's action slice against the arm state at the tick.
    pub fn from_action(kind: ControllerKind, action: &[f64], state: &ArmState, gains: &GainSpec) -> Result<Self> {
        let dof = state.q.len();
        if action.len() != kind.per_arm_dim(dof) {
            return Err(contract(format!(
                "{} expects {} actions per arm, got {}",
                kind.name(),
                kind.per_arm_dim(dof),
                action.len()
            )));
        }
        let scaled_dx = |a: &[f64]| [a[0] * gains.dx_max[0], a[1] * gains.dx_max[1], a[2] * gains.dx_max[2]];
        Ok(match kind {
            ControllerKind::JointPosition => ArmCommand::JointTarget {
                q_des: (0..dof).map(|i| state.q[i] + gains.dq_max[i] * action[i].clamp(-1.0, 1.0)).collect(),
            },
            ControllerKind::CartesianImpedance => {
                let a: Vec<f64> = action.iter().map(|v| v.clamp(-1.0, 1.0)).collect();
                ArmCommand::Cartesian { delta_x: scaled_dx(&a), kp: gains.cart_kp, kv: gains.cart_kv }
            }
            ControllerKind::VariableCartesianImpedance => {
                let a: Vec<f64> = action.iter().map(|v| v.clamp(-1.0, 1.0)).collect();
                let (kp, kv) = variable_impedance_map([a[3], a[4], a[5]], gains);
                ArmCommand::Cartesian { delta_x: scaled_dx(&a), kp, kv }
            }
        })
    }

    /// Torque for the current substep; the command itself is held constant.
    pub fn torque(&self, model: &ArmModel, state: &ArmState, q_rest: &[f64], gains: &GainSpec) -> Vec<f64> {
        match self {
            ArmCommand::JointTarget { q_des } => joint_position_torque(model, gains, q_des, &state.q, &state.qdot),
            ArmCommand::Cartesian { delta_x, kp, kv } => {
                cartesian_impedance_torque(model, &state.q, &state.qdot, *delta_x, *kp, *kv, q_rest, gains)
            }
        }
    }

    pub fn joint_target(&self) -> Option<&[f64]> {
        match self {
            ArmCommand::JointTarget { q_des } => Some(q_des),
            ArmCommand::Cartesian { .. } => None,
        }
    }
}

/// Splits a two-arm action, forms each arm's command and returns the
/// torques at the current states.
pub fn action_to_commands(
    kind: ControllerKind,
    action: &[f64],
    states: [&ArmState; 2],
    gains: [&GainSpec; 2],
) -> Result<[ArmCommand; 2]> {
    let dof = [states[0].q.len(), states[1].q.len()];
    let split = kind.per_arm_dim(dof[0]);
    let expected = split + kind.per_arm_dim(dof[1]);
    if action.len() != expected {
        return Err(contract(format!("{} expects action dimension {expected}, got {}", kind.name(), action.len())));
    }
    let (left, right) = action.split_at(split);
    Ok([
        ArmCommand::from_action(kind, left, states[0], gains[0])?,
        ArmCommand::from_action(kind, right, states[1], gains[1])?,
    ])
}

pub fn action_to_torques(
    kind: ControllerKind,
    action: &[f64],
    states: [&ArmState; 2],
    models: [&ArmModel; 2],
    gains: [&GainSpec; 2],
    rests: [&[f64]; 2],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let [c0, c1] = action_to_commands(kind, action, states, gains)?;
    Ok((c0.torque(models[0], states[0], rests[0], gains[0]), c1.torque(models[1], states[1], rests[1], gains[1])))
}
