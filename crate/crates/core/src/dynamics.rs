//! Planar serial-chain manipulator with revolute joints: kinematics,
//! joint-space dynamics `M(q) q̈ + C(q, q̇) q̇ + d(q̇) + g(q) = τ - τ_ext`, and
//! the task-space quantities used by the Cartesian controllers.
//!
//! Task space is `(x, y, θ)` of the end-effector in the world frame.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::math::Matrix;

/// Default task-inertia damping `λ`; `λ²` is added to `J M⁻¹ Jᵀ`.
pub const TASK_INERTIA_DAMPING: f64 = 1e-3;

/// Policy ticks at 60 Hz, physics at 240 Hz.
pub const SIM_DT: f64 = 1.0 / 240.0;

pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose2 {
    pub const IDENTITY: Pose2 = Pose2 { x: 0.0, y: 0.0, theta: 0.0 };

    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self { x, y, theta }
    }

    /// `self ∘ other`: `other` expressed in this frame, mapped to the parent.
    pub fn compose(&self, other: &Pose2) -> Pose2 {
        let (s, c) = self.theta.sin_cos();
        Pose2 {
            x: self.x + c * other.x - s * other.y,
            y: self.y + s * other.x + c * other.y,
            theta: wrap_angle(self.theta + other.theta),
        }
    }

    pub fn inverse(&self) -> Pose2 {
        let (s, c) = self.theta.sin_cos();
        Pose2 { x: -(c * self.x + s * self.y), y: s * self.x - c * self.y, theta: wrap_angle(-self.theta) }
    }

    /// Maps a point from this frame to the parent frame.
    pub fn transform_point(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.theta.sin_cos();
        [self.x + c * p[0] - s * p[1], self.y + s * p[0] + c * p[1]]
    }

    pub fn position(&self) -> [f64; 2] {
        [self.x, self.y]
    }
}

/// End-effector pose; orientation wrapped to (−π, π].
pub type EePose = Pose2;

/// Planar wrench: force plus moment about a reference point.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Wrench2D {
    pub fx: f64,
    pub fy: f64,
    pub tz: f64,
}

impl Wrench2D {
    pub const ZERO: Wrench2D = Wrench2D { fx: 0.0, fy: 0.0, tz: 0.0 };

    pub fn new(fx: f64, fy: f64, tz: f64) -> Self {
        Self { fx, fy, tz }
    }

    /// Pure force `f` acting at `point`, with moment taken about `reference`.
    pub fn from_force_at(f: [f64; 2], point: [f64; 2], reference: [f64; 2]) -> Self {
        let r = [point[0] - reference[0], point[1] - reference[1]];
        Self { fx: f[0], fy: f[1], tz: cross(r, f) }
    }

    /// Re-expresses the moment about `to` instead of `from`.
    pub fn transport(&self, from: [f64; 2], to: [f64; 2]) -> Self {
        let r = [from[0] - to[0], from[1] - to[1]];
        Self { fx: self.fx, fy: self.fy, tz: self.tz + cross(r, [self.fx, self.fy]) }
    }

    pub fn add(&self, o: &Wrench2D) -> Wrench2D {
        Wrench2D { fx: self.fx + o.fx, fy: self.fy + o.fy, tz: self.tz + o.tz }
    }

    pub fn scale(&self, s: f64) -> Wrench2D {
        Wrench2D { fx: self.fx * s, fy: self.fy * s, tz: self.tz * s }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.fx, self.fy, self.tz]
    }

    pub fn force_norm(&self) -> f64 {
        self.fx.hypot(self.fy)
    }

    pub fn is_finite(&self) -> bool {
        self.fx.is_finite() && self.fy.is_finite() && self.tz.is_finite()
    }
}

#[inline]
pub fn cross(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

/// One rigid link together with the joint that drives it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub length: f64,
    pub mass: f64,
    /// Rotational inertia about the center of mass.
    pub inertia: f64,
    /// Distance of the center of mass from the joint, along the link.
    pub com: f64,
    /// Viscous joint friction.
    pub friction: f64,
    /// Reflected rotor inertia of the joint drive, added to the mass-matrix diagonal.
    #[serde(default)]
    pub armature: f64,
    pub lower: f64,
    pub upper: f64,
    pub torque_limit: f64,
}

impl Link {
    /// Uniform slender rod.
    pub fn rod(length: f64, mass: f64) -> Self {
        Self {
            length,
            mass,
            inertia: mass * length * length / 12.0,
            com: 0.5 * length,
            friction: 0.0,
            armature: 0.0,
            lower: -PI,
            upper: PI,
            torque_limit: f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmModel {
    pub links: Vec<Link>,
    pub base: Pose2,
    pub gravity: [f64; 2],
}

impl ArmModel {
    pub fn new(links: Vec<Link>, base: Pose2, gravity: [f64; 2]) -> Result<Self> {
        let model = Self { links, base, gravity };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if self.links.len() < 2 {
            return Err(contract("arm needs at least two links"));
        }
        for (i, l) in self.links.iter().enumerate() {
            if !(l.length > 0.0 && l.mass > 0.0) {
                return Err(contract(format!("link {i}: length and mass must be positive")));
            }
            if !(l.inertia >= 0.0 && l.friction >= 0.0 && l.armature >= 0.0 && l.torque_limit > 0.0) {
                return Err(contract(format!("link {i}: inertia/friction/armature must be >= 0, torque limit > 0")));
            }
            if !(l.lower < l.upper) {
                return Err(contract(format!("link {i}: joint lower limit must be below upper")));
            }
        }
        Ok(())
    }

    pub fn dof(&self) -> usize {
        self.links.len()
    }

    pub fn reach(&self) -> f64 {
        self.links.iter().map(|l| l.length).sum()
    }

    fn check_len(&self, v: &[f64], what: &str) {
        assert_eq!(v.len(), self.dof(), "{what} must have one entry per joint");
    }

    /// Absolute link angles and joint positions `p_0 .. p_n` (`p_n` is the
    /// end-effector point).
    fn chain(&self, q: &[f64]) -> (Vec<f64>, Vec<[f64; 2]>) {
        self.check_len(q, "q");
        let mut angles = Vec::with_capacity(q.len());
        let mut points = Vec::with_capacity(q.len() + 1);
        let mut phi = self.base.theta;
        let mut p = [self.base.x, self.base.y];
        points.push(p);
        for (qi, link) in q.iter().zip(&self.links) {
            phi += qi;
            angles.push(phi);
            p = [p[0] + link.length * phi.cos(), p[1] + link.length * phi.sin()];
            points.push(p);
        }
        (angles, points)
    }

    fn coms(&self, angles: &[f64], points: &[[f64; 2]]) -> Vec<[f64; 2]> {
        self.links
            .iter()
            .enumerate()
            .map(|(i, l)| [points[i][0] + l.com * angles[i].cos(), points[i][1] + l.com * angles[i].sin()])
            .collect()
    }

    pub fn forward_kinematics(&self, q: &[f64]) -> EePose {
        let (angles, points) = self.chain(q);
        let p = points[q.len()];
        EePose { x: p[0], y: p[1], theta: wrap_angle(*angles.last().expect("dof >= 2")) }
    }

    /// 3 x n map from joint rates to `(ẋ, ẏ, θ̇)` of the end-effector.
    pub fn jacobian(&self, q: &[f64]) -> Matrix {
        let (_, points) = self.chain(q);
        let n = q.len();
        let ee = points[n];
        let mut j = Matrix::zeros(3, n);
        for (c, p) in points.iter().take(n).enumerate() {
            j[(0, c)] = -(ee[1] - p[1]);
            j[(1, c)] = ee[0] - p[0];
            j[(2, c)] = 1.0;
        }
        j
    }

    /// Joint-space inertia `Σ mᵢ Jᵥᵢᵀ Jᵥᵢ + Iᵢ Jωᵢᵀ Jωᵢ` over link centers of
    /// mass, plus the joint armature on the diagonal.
    pub fn mass_matrix(&self, q: &[f64]) -> Matrix {
        let (angles, points) = self.chain(q);
        let coms = self.coms(&angles, &points);
        let n = q.len();
        let mut m = Matrix::zeros(n, n);
        for (i, link) in self.links.iter().enumerate() {
            let c = coms[i];
            // Columns j > i of this link's Jacobians are zero.
            for a in 0..=i {
                let ja = [-(c[1] - points[a][1]), c[0] - points[a][0]];
                for b in 0..=a {
                    let jb = [-(c[1] - points[b][1]), c[0] - points[b][0]];
                    let v = link.mass * (ja[0] * jb[0] + ja[1] * jb[1]) + link.inertia;
                    m[(a, b)] += v;
                    if a != b {
                        m[(b, a)] += v;
                    }
                }
            }
            m[(i, i)] += link.armature;
        }
        m
    }

    /// Recursive Newton–Euler: joint torques producing `qddot` at `(q, qdot)`,
    /// including gravity and excluding friction.
    pub fn inverse_dynamics(&self, q: &[f64], qdot: &[f64], qddot: &[f64]) -> Vec<f64> {
        self.check_len(qdot, "qdot");
        self.check_len(qddot, "qddot");
        let (angles, points) = self.chain(q);
        let coms = self.coms(&angles, &points);
        let n = q.len();
        // Base acceleration -g folds gravity into the inertial terms.
        let mut a_joint = [-self.gravity[0], -self.gravity[1]];
        let mut omega = 0.0;
        let mut alpha = 0.0;
        let mut a_com = Vec::with_capacity(n);
        let mut alphas = Vec::with_capacity(n);
        for i in 0..n {
            omega += qdot[i];
            alpha += qddot[i];
            let accel_at = |r: [f64; 2]| {
                [a_joint[0] - alpha * r[1] - omega * omega * r[0], a_joint[1] + alpha * r[0] - omega * omega * r[1]]
            };
            let rc = [coms[i][0] - points[i][0], coms[i][1] - points[i][1]];
            let rn = [points[i + 1][0] - points[i][0], points[i + 1][1] - points[i][1]];
            a_com.push(accel_at(rc));
            alphas.push(alpha);
            a_joint = accel_at(rn);
        }
        let mut tau = vec![0.0; n];
        let mut f_child = [0.0, 0.0];
        let mut n_child = 0.0;
        for i in (0..n).rev() {
            let link = &self.links[i];
            let f_inertial = [link.mass * a_com[i][0], link.mass * a_com[i][1]];
            let f = [f_inertial[0] + f_child[0], f_inertial[1] + f_child[1]];
            let rc = [coms[i][0] - points[i][0], coms[i][1] - points[i][1]];
            let rn = [points[i + 1][0] - points[i][0], points[i + 1][1] - points[i][1]];
            let moment = link.inertia * alphas[i] + cross(rc, f_inertial) + n_child + cross(rn, f_child);
            tau[i] = moment + link.armature * qddot[i];
            f_child = f;
            n_child = moment;
        }
        tau
    }

    /// `C(q, q̇) q̇ + d(q̇) + g(q)` with viscous friction `d = diag(friction) q̇`.
    pub fn bias_forces(&self, q: &[f64], qdot: &[f64]) -> Vec<f64> {
        let zeros = vec![0.0; q.len()];
        let mut b = self.inverse_dynamics(q, qdot, &zeros);
        for ((bi, l), v) in b.iter_mut().zip(&self.links).zip(qdot) {
            *bi += l.friction * v;
        }
        b
    }

    /// Joint torques that exactly hold the arm against gravity.
    pub fn gravity_torques(&self, q: &[f64]) -> Vec<f64> {
        let zeros = vec![0.0; q.len()];
        self.inverse_dynamics(q, &zeros, &zeros)
    }

    /// `q̈ = M⁻¹ (τ − τ_ext − bias)`.
    pub fn forward_dynamics(&self, q: &[f64], qdot: &[f64], tau: &[f64], tau_ext: &[f64]) -> Result<Vec<f64>> {
        self.check_len(tau, "tau");
        self.check_len(tau_ext, "tau_ext");
        let bias = self.bias_forces(q, qdot);
        let rhs: Vec<f64> = (0..q.len()).map(|i| tau[i] - tau_ext[i] - bias[i]).collect();
        let chol = self.mass_matrix(q).cholesky()?;
        Ok(chol.solve(&rhs))
    }

    pub fn clamp_torques(&self, tau: &[f64]) -> Vec<f64> {
        tau.iter().zip(&self.links).map(|(t, l)| t.clamp(-l.torque_limit, l.torque_limit)).collect()
    }

    /// One semi-implicit Euler step. Commanded torques are clamped to the
    /// torque limits first; a joint reaching its position limit is clamped
    /// there and its velocity zeroed.
    pub fn integrate_step(&self, state: &ArmState, tau: &[f64], tau_ext: &[f64], dt: f64) -> Result<ArmState> {
        if !(dt > 0.0) {
            return Err(contract("time step must be positive"));
        }
        let tau = self.clamp_torques(tau);
        let qddot = self.forward_dynamics(&state.q, &state.qdot, &tau, tau_ext)?;
        let mut q = state.q.clone();
        let mut qdot = state.qdot.clone();
        for i in 0..q.len() {
            qdot[i] += qddot[i] * dt;
            q[i] += qdot[i] * dt;
            let l = &self.links[i];
            if q[i] < l.lower {
                q[i] = l.lower;
                qdot[i] = 0.0;
            } else if q[i] > l.upper {
                q[i] = l.upper;
                qdot[i] = 0.0;
            }
        }
        let next = ArmState { q, qdot, last_tau: tau };
        if !next.is_finite() {
            return Err(Error::Diverged("non-finite arm state after integration".into()));
        }
        Ok(next)
    }

    /// `Λ = (J M⁻¹ Jᵀ + λ² I)⁻¹` with the default damping.
    pub fn task_inertia(&self, q: &[f64]) -> Matrix {
        self.task_inertia_damped(q, TASK_INERTIA_DAMPING).expect("damped task inertia is always invertible")
    }

    pub fn task_inertia_damped(&self, q: &[f64], lambda: f64) -> Result<Matrix> {
        let j = self.jacobian(q);
        let m_inv = self.mass_matrix(q).inverse_spd()?;
        let mut a = j.matmul(&m_inv).matmul(&j.transpose());
        for i in 0..3 {
            a[(i, i)] += lambda * lambda;
        }
        a.inverse_spd()
    }

    /// End-effector twist `J q̇`.
    pub fn ee_velocity(&self, q: &[f64], qdot: &[f64]) -> [f64; 3] {
        let v = self.jacobian(q).matvec(qdot);
        [v[0], v[1], v[2]]
    }

    /// Kinetic energy `½ q̇ᵀ M q̇`.
    pub fn kinetic_energy(&self, q: &[f64], qdot: &[f64]) -> f64 {
        let mq = self.mass_matrix(q).matvec(qdot);
        0.5 * qdot.iter().zip(&mq).map(|(a, b)| a * b).sum::<f64>()
    }

    /// Gravitational potential `-Σ mᵢ g·cᵢ`.
    pub fn potential_energy(&self, q: &[f64]) -> f64 {
        let (angles, points) = self.chain(q);
        let coms = self.coms(&angles, &points);
        self.links
            .iter()
            .zip(&coms)
            .map(|(l, c)| -l.mass * (self.gravity[0] * c[0] + self.gravity[1] * c[1]))
            .sum()
    }

    pub fn within_limits(&self, q: &[f64]) -> bool {
        q.iter().zip(&self.links).all(|(v, l)| *v >= l.lower && *v <= l.upper)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmState {
    pub q: Vec<f64>,
    pub qdot: Vec<f64>,
    pub last_tau: Vec<f64>,
}

impl ArmState {
    pub fn at_rest(q: Vec<f64>) -> Self {
        let n = q.len();
        Self { q, qdot: vec![0.0; n], last_tau: vec![0.0; n] }
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(&self.qdot).chain(&self.last_tau).all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::matrix::symmetric_eigenvalues;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn two_link(gravity: [f64; 2]) -> ArmModel {
        ArmModel::new(vec![Link::rod(1.0, 1.0), Link::rod(1.0, 1.0)], Pose2::IDENTITY, gravity).unwrap()
    }

    fn three_link() -> ArmModel {
        let mut links = vec![Link::rod(0.4, 2.0), Link::rod(0.4, 1.5), Link::rod(0.2, 0.5)];
        for l in &mut links {
            l.friction = 0.1;
            l.armature = 0.05;
        }
        ArmModel::new(links, Pose2::new(0.3, -0.2, 0.7), [0.0, -9.81]).unwrap()
    }

    fn point_mass_pendulum(m: f64, l: f64) -> ArmModel {
        // Second link is negligible so the first behaves as a point-mass pendulum.
        let first = Link { length: l, mass: m, inertia: 0.0, com: l, ..Link::rod(l, m) };
        ArmModel::new(vec![first, Link { inertia: 1e-6, com: 0.0, ..Link::rod(1e-9, 1e-12) }], Pose2::IDENTITY, [0.0, 0.0])
            .unwrap()
    }

    #[test]
    fn wrap_angle_range() {
        assert!((wrap_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(0.5) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn pose_inverse_composes_to_identity() {
        let p = Pose2::new(0.3, -1.2, 2.1);
        let id = p.compose(&p.inverse());
        assert!(id.x.abs() < 1e-12 && id.y.abs() < 1e-12 && id.theta.abs() < 1e-12);
    }

    #[test]
    fn straight_and_quarter_turn_kinematics() {
        let arm = two_link([0.0, 0.0]);
        let p = arm.forward_kinematics(&[0.0, 0.0]);
        assert!((p.x - 2.0).abs() < 1e-15 && p.y.abs() < 1e-15 && p.theta == 0.0);
        let p = arm.forward_kinematics(&[PI / 2.0, 0.0]);
        assert!(p.x.abs() < 1e-12 && (p.y - 2.0).abs() < 1e-12 && (p.theta - PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn kinematics_matches_rotation_composition() {
        let arm = three_link();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let q: Vec<f64> = (0..3).map(|_| rng.random_range(-PI..PI)).collect();
            // Compose homogeneous 2-D transforms link by link.
            let mut t = [[1.0, 0.0, arm.base.x], [0.0, 1.0, arm.base.y]];
            let rot = |a: f64| [[a.cos(), -a.sin()], [a.sin(), a.cos()]];
            let r0 = rot(arm.base.theta);
            t = [[r0[0][0], r0[0][1], t[0][2]], [r0[1][0], r0[1][1], t[1][2]]];
            for (qi, l) in q.iter().zip(&arm.links) {
                let r = rot(*qi);
                let nr = [
                    [t[0][0] * r[0][0] + t[0][1] * r[1][0], t[0][0] * r[0][1] + t[0][1] * r[1][1]],
                    [t[1][0] * r[0][0] + t[1][1] * r[1][0], t[1][0] * r[0][1] + t[1][1] * r[1][1]],
                ];
                let nt = [t[0][2] + nr[0][0] * l.length, t[1][2] + nr[1][0] * l.length];
                t = [[nr[0][0], nr[0][1], nt[0]], [nr[1][0], nr[1][1], nt[1]]];
            }
            let p = arm.forward_kinematics(&q);
            assert!((p.x - t[0][2]).abs() < 1e-12 && (p.y - t[1][2]).abs() < 1e-12);
            assert!((p.theta - t[1][0].atan2(t[0][0])).abs() < 1e-9 || (p.theta.abs() - PI).abs() < 1e-9);
        }
    }

    #[test]
    fn single_joint_jacobian_column() {
        let arm = ArmModel { links: vec![Link::rod(0.7, 1.0)], base: Pose2::IDENTITY, gravity: [0.0, 0.0] };
        let j = arm.jacobian(&[0.0]);
        assert!(j[(0, 0)].abs() < 1e-15 && (j[(1, 0)] - 0.7).abs() < 1e-15 && j[(2, 0)] == 1.0);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let arm = three_link();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let q: Vec<f64> = (0..3).map(|_| rng.random_range(-PI..PI)).collect();
            let qd: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let v = arm.jacobian(&q).matvec(&qd);
            let h = 1e-6;
            let qp: Vec<f64> = q.iter().zip(&qd).map(|(a, b)| a + h * b).collect();
            let qm: Vec<f64> = q.iter().zip(&qd).map(|(a, b)| a - h * b).collect();
            let (pp, pm) = (arm.forward_kinematics(&qp), arm.forward_kinematics(&qm));
            let fd = [(pp.x - pm.x) / (2.0 * h), (pp.y - pm.y) / (2.0 * h), wrap_angle(pp.theta - pm.theta) / (2.0 * h)];
            for k in 0..3 {
                assert!((fd[k] - v[k]).abs() < 1e-6, "{fd:?} vs {v:?}");
            }
            assert!(arm.jacobian(&q).row(2).iter().all(|v| *v == 1.0));
        }
    }

    #[test]
    fn pendulum_mass_matrix_is_ml2() {
        let arm = point_mass_pendulum(2.0, 0.5);
        let m = arm.mass_matrix(&[0.3, 0.0]);
        assert!((m[(0, 0)] - (2.0 * 0.25 + 1e-6)).abs() < 1e-12);
    }

    #[test]
    fn mass_matrix_symmetric_positive_definite() {
        let arm = three_link();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let q: Vec<f64> = (0..3).map(|_| rng.random_range(-PI..PI)).collect();
            let m = arm.mass_matrix(&q);
            assert!(m.sub(&m.transpose()).max_abs() < 1e-12);
            assert!(symmetric_eigenvalues(&m)[0] > 0.0);
        }
    }

    /// Kinetic energy summed over bodies, from finite-differenced positions.
    fn kinetic_energy_oracle(arm: &ArmModel, q: &[f64], qd: &[f64]) -> f64 {
        let h = 1e-6;
        let pos = |qq: &[f64]| {
            let (angles, points) = arm.chain(qq);
            (arm.coms(&angles, &points), angles)
        };
        let qp: Vec<f64> = q.iter().zip(qd).map(|(a, b)| a + h * b).collect();
        let qm: Vec<f64> = q.iter().zip(qd).map(|(a, b)| a - h * b).collect();
        let ((cp, ap), (cm, am)) = (pos(&qp), pos(&qm));
        let mut e = 0.0;
        for (i, l) in arm.links.iter().enumerate() {
            let v = [(cp[i][0] - cm[i][0]) / (2.0 * h), (cp[i][1] - cm[i][1]) / (2.0 * h)];
            let w = (ap[i] - am[i]) / (2.0 * h);
            e += 0.5 * (l.mass * (v[0] * v[0] + v[1] * v[1]) + l.inertia * w * w);
        }
        e
    }

    #[test]
    fn mass_matrix_matches_energy_hessian() {
        let arm = two_link([0.0, 0.0]);
        let q = [0.4, -1.1];
        let m = arm.mass_matrix(&q);
        // KE is quadratic in q̇, so M_ab = KE(e_a + e_b) - KE(e_a) - KE(e_b).
        let ke = |v: [f64; 2]| kinetic_energy_oracle(&arm, &q, &v);
        for a in 0..2 {
            for b in 0..2 {
                let mut ea = [0.0; 2];
                ea[a] = 1.0;
                let mut eb = [0.0; 2];
                eb[b] = 1.0;
                let mab = if a == b {
                    2.0 * ke(ea)
                } else {
                    ke([ea[0] + eb[0], ea[1] + eb[1]]) - ke(ea) - ke(eb)
                };
                assert!((mab - m[(a, b)]).abs() < 1e-6, "M[{a},{b}] {} vs {mab}", m[(a, b)]);
            }
        }
    }

    #[test]
    fn bias_zero_at_rest_without_gravity() {
        let arm = two_link([0.0, 0.0]);
        assert!(arm.bias_forces(&[0.3, 0.9], &[0.0, 0.0]).iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn horizontal_pendulum_gravity_torque() {
        let mut link = Link::rod(0.8, 1.7);
        link.com = 0.3;
        let arm = ArmModel {
            links: vec![link, Link { mass: 1e-12, inertia: 0.0, ..Link::rod(1e-9, 1e-12) }],
            base: Pose2::IDENTITY,
            gravity: [0.0, -9.81],
        };
        let b = arm.bias_forces(&[0.0, 0.0], &[0.0, 0.0]);
        assert!((b[0] - 1.7 * 9.81 * 0.3).abs() < 1e-9);
    }

    #[test]
    fn rnea_matches_mass_matrix_columns() {
        let arm = three_link();
        let q = [0.2, -0.7, 1.3];
        let qd = [0.5, -0.4, 0.9];
        let m = arm.mass_matrix(&q);
        let base = arm.inverse_dynamics(&q, &qd, &[0.0; 3]);
        for c in 0..3 {
            let mut e = [0.0; 3];
            e[c] = 1.0;
            let t = arm.inverse_dynamics(&q, &qd, &e);
            for r in 0..3 {
                assert!((t[r] - base[r] - m[(r, c)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn force_balance_gives_zero_acceleration() {
        let arm = three_link();
        let q = [0.1, 0.5, -0.4];
        let qd = [0.3, 0.2, -0.1];
        let tau_ext = [0.4, -0.2, 0.05];
        let bias = arm.bias_forces(&q, &qd);
        let tau: Vec<f64> = bias.iter().zip(&tau_ext).map(|(b, e)| b + e).collect();
        let qdd = arm.forward_dynamics(&q, &qd, &tau, &tau_ext).unwrap();
        assert!(qdd.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn pendulum_acceleration_is_tau_over_ml2() {
        let arm = point_mass_pendulum(2.0, 0.5);
        let qdd = arm.forward_dynamics(&[0.2, 0.0], &[0.0, 0.0], &[1.0, 0.0], &[0.0, 0.0]).unwrap();
        assert!((qdd[0] - 1.0 / (2.0 * 0.25)).abs() < 1e-6);
    }

    #[test]
    fn integrate_equilibrium_and_constant_velocity() {
        let arm = two_link([0.0, 0.0]);
        let s = ArmState::at_rest(vec![0.2, 0.4]);
        let next = arm.integrate_step(&s, &[0.0, 0.0], &[0.0, 0.0], SIM_DT).unwrap();
        assert_eq!(next, s);
        // Single free link spinning with no friction keeps constant rate.
        let arm = ArmModel { links: vec![Link::rod(1.0, 1.0), Link::rod(1.0, 1.0)], ..two_link([0.0, 0.0]) };
        let s = ArmState { q: vec![0.0, 0.0], qdot: vec![0.7, 0.0], last_tau: vec![0.0; 2] };
        let next = arm.integrate_step(&s, &[0.0, 0.0], &[0.0, 0.0], 0.01).unwrap();
        assert!((next.q[0] - 0.007).abs() < 1e-15);
    }

    #[test]
    fn joint_limit_clamps_and_stops() {
        let mut arm = two_link([0.0, 0.0]);
        arm.links[0].upper = 0.1;
        let s = ArmState { q: vec![0.099, 0.0], qdot: vec![1.0, 0.0], last_tau: vec![0.0; 2] };
        let next = arm.integrate_step(&s, &[0.0, 0.0], &[0.0, 0.0], 0.01).unwrap();
        assert_eq!(next.q[0], 0.1);
        assert_eq!(next.qdot[0], 0.0);
    }

    #[test]
    fn torques_clamped_before_use() {
        let mut arm = two_link([0.0, 0.0]);
        arm.links[0].torque_limit = 2.0;
        let s = ArmState::at_rest(vec![0.0, 0.5]);
        let next = arm.integrate_step(&s, &[50.0, 0.0], &[0.0, 0.0], SIM_DT).unwrap();
        assert_eq!(next.last_tau[0], 2.0);
    }

    #[test]
    fn invalid_dt_rejected() {
        let arm = two_link([0.0, 0.0]);
        assert!(arm.integrate_step(&ArmState::at_rest(vec![0.0, 0.0]), &[0.0; 2], &[0.0; 2], 0.0).is_err());
    }

    #[test]
    fn invalid_models_rejected() {
        assert!(ArmModel::new(vec![Link::rod(1.0, 1.0)], Pose2::IDENTITY, [0.0, 0.0]).is_err());
        assert!(ArmModel::new(vec![Link::rod(1.0, 1.0), Link::rod(-1.0, 1.0)], Pose2::IDENTITY, [0.0, 0.0]).is_err());
    }

    #[test]
    fn double_pendulum_conserves_energy() {
        let arm = two_link([0.0, -9.81]);
        let lowest = arm.potential_energy(&[-PI / 2.0, 0.0]);
        let energy = |s: &ArmState| arm.kinetic_energy(&s.q, &s.qdot) + arm.potential_energy(&s.q) - lowest;
        let mut s = ArmState::at_rest(vec![-PI / 4.0, 0.3]);
        let e0 = energy(&s);
        let mut worst: f64 = 0.0;
        for _ in 0..240 {
            s = arm.integrate_step(&s, &[0.0, 0.0], &[0.0, 0.0], SIM_DT).unwrap();
            worst = worst.max((energy(&s) - e0).abs());
        }
        assert!(worst < 0.01 * e0, "drift {worst} of {e0}");
    }

    #[test]
    fn kinetic_energy_increment_equals_power() {
        let mut arm = three_link();
        arm.gravity = [0.0, 0.0];
        arm.links.iter_mut().for_each(|l| l.friction = 0.0);
        let tau = [0.8, -0.3, 0.1];
        let s = ArmState { q: vec![0.2, 0.5, -0.3], qdot: vec![0.4, -0.2, 0.6], last_tau: vec![0.0; 3] };
        let step_error = |dt: f64| {
            let ke0 = arm.kinetic_energy(&s.q, &s.qdot);
            let next = arm.integrate_step(&s, &tau, &[0.0; 3], dt).unwrap();
            let ke1 = arm.kinetic_energy(&next.q, &next.qdot);
            let work = tau.iter().zip(&s.qdot).map(|(t, v)| t * v).sum::<f64>() * dt;
            (ke1 - ke0 - work).abs()
        };
        let e1 = step_error(SIM_DT);
        let e2 = step_error(SIM_DT / 2.0);
        assert!(e1 < 20.0 * SIM_DT * SIM_DT, "per-step error {e1}");
        // Second order: halving dt cuts the error roughly fourfold.
        assert!(e1 / e2 > 3.0, "ratio {}", e1 / e2);
    }

    #[test]
    fn task_inertia_inverse_consistency_and_singular_case() {
        let arm = three_link();
        let q = [0.3, 0.8, -0.6];
        let lam = arm.task_inertia_damped(&q, 0.0).unwrap();
        let j = arm.jacobian(&q);
        let a = j.matmul(&arm.mass_matrix(&q).inverse_spd().unwrap()).matmul(&j.transpose());
        assert!(lam.matmul(&a).sub(&Matrix::identity(3)).max_abs() < 1e-8);
        let lam = arm.task_inertia(&q);
        assert!(lam.sub(&lam.transpose()).max_abs() < 1e-10);
        // Fully stretched: J loses rank, damping keeps Λ finite and PD.
        let lam = arm.task_inertia(&[0.0, 0.0, 0.0]);
        assert!(lam.is_finite());
        assert!(symmetric_eigenvalues(&lam)[0] > 0.0);
    }
}
