//! Hand-built insertion policy with access to the true state, used to check
//! goal detection and as an upper reference for learned policies.

use crate::control::{pose_error, ControllerKind};
use crate::dynamics::Pose2;

use super::DualArmEnv;

const DLS_DAMPING: f64 = 1e-2;
/// Forward progress of the peg target per policy step (m).
const ADVANCE: f64 = 0.008;
/// Stand-off in front of the mouth while aligning (m).
const STANDOFF: f64 = 0.004;

/// Action that holds the hole part where the episode started and steers the
/// peg first onto the hole axis, then into the hole.
pub fn scripted_action(env: &DualArmEnv) -> Vec<f64> {
    let cfg = env.config();
    let (p, h) = (cfg.peg_arm, cfg.hole_arm());
    let g = &cfg.geometry;
    let hole = env.hole_pose();
    let rel = hole.inverse().compose(&env.peg_pose());

    let tol = 0.25 * g.clearance;
    let aligned = rel.y.abs() < tol && rel.theta.abs() < tol / g.peg_length;
    let x_target = if rel.x < 0.0 && !aligned {
        (rel.x + ADVANCE).min(-STANDOFF)
    } else {
        (rel.x + ADVANCE).min(g.insertion_depth + 0.001)
    };
    let peg_target = hole.compose(&Pose2::new(x_target, 0.0, 0.0));
    let mount = g.peg_mount.compose(&env.peg_mount_offset());

    let mut targets = [Pose2::IDENTITY; 2];
    targets[p] = peg_target.compose(&mount.inverse());
    targets[h] = cfg.arms[h].forward_kinematics(env.start_q(h));

    let mut action = Vec::with_capacity(cfg.action_dim());
    for (i, target) in targets.iter().enumerate() {
        action.extend(arm_action(env, i, target));
    }
    action
}

fn arm_action(env: &DualArmEnv, i: usize, target: &Pose2) -> Vec<f64> {
    let cfg = env.config();
    let model = &cfg.arms[i];
    let q = &env.states()[i].q;
    let ee = model.forward_kinematics(q);
    let e = pose_error([target.x, target.y, target.theta], [ee.x, ee.y, ee.theta]);
    let gains = &cfg.gains[i];
    let mut a: Vec<f64> = match cfg.controller {
        ControllerKind::JointPosition => {
            let j = model.jacobian(q);
            let mut jjt = j.matmul(&j.transpose());
            for k in 0..3 {
                jjt[(k, k)] += DLS_DAMPING * DLS_DAMPING;
            }
            let w = jjt.inverse_spd().expect("damped JJᵀ is SPD").matvec(&e);
            let dq = j.tr_matvec(&w);
            dq.iter().zip(&gains.dq_max).map(|(d, m)| d / m).collect()
        }
        _ => (0..3).map(|k| e[k] / gains.dx_max[k]).collect(),
    };
    // Shrink uniformly so the direction survives the action bounds.
    let peak = a.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    a.iter_mut().for_each(|v| *v /= peak);
    if cfg.controller == ControllerKind::VariableCartesianImpedance {
        a.extend([0.5; 3]);
    }
    a
}
