//! Penalty contact between the rigid peg and the rigid hole part.

use serde::{Deserialize, Serialize};

use super::geometry::{PegHoleGeometry, Rect};
use crate::dynamics::{Pose2, Wrench2D};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContactParams {
    /// Normal stiffness (N/m).
    pub stiffness: f64,
    /// Normal damping (N·s/m).
    pub damping: f64,
    pub friction: f64,
    /// Sliding speed below which friction fades out linearly, avoiding
    /// stick-slip chatter (m/s).
    pub slip_speed: f64,
}

impl Default for ContactParams {
    fn default() -> Self {
        Self { stiffness: 1e4, damping: 50.0, friction: 0.5, slip_speed: 0.05 }
    }
}

/// Planar twist of a body frame: velocity of its origin plus angular rate.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Twist2 {
    pub vx: f64,
    pub vy: f64,
    pub omega: f64,
}

impl Twist2 {
    pub fn new(vx: f64, vy: f64, omega: f64) -> Self {
        Self { vx, vy, omega }
    }

    /// Velocity of the world point `p` rigidly attached to a body whose frame
    /// origin is at `origin`.
    pub fn point_velocity(&self, origin: [f64; 2], p: [f64; 2]) -> [f64; 2] {
        let r = [p[0] - origin[0], p[1] - origin[1]];
        [self.vx - self.omega * r[1], self.vy + self.omega * r[0]]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ContactPoint {
    pub point: [f64; 2],
    /// Unit normal along which the peg is pushed.
    pub normal: [f64; 2],
    pub depth: f64,
    /// Force on the peg at `point`.
    pub force: [f64; 2],
}

/// Resultant wrenches in world axes: `on_peg` about the peg frame origin,
/// `on_hole` about the hole frame origin.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContactResult {
    pub on_peg: Wrench2D,
    pub on_hole: Wrench2D,
    pub points: Vec<ContactPoint>,
}

impl ContactResult {
    pub fn in_contact(&self) -> bool {
        !self.points.is_empty()
    }

    pub fn max_depth(&self) -> f64 {
        self.points.iter().map(|c| c.depth).fold(0.0, f64::max)
    }
}

fn rotate(theta: f64, v: [f64; 2]) -> [f64; 2] {
    let (s, c) = theta.sin_cos();
    [c * v[0] - s * v[1], s * v[0] + c * v[1]]
}

/// Corner-versus-box penalty contact. Peg corners are tested against the
/// hole walls and bottom, and hole corners against the peg body; each
/// penetration yields a damped spring normal force (never pulling) plus
/// regularized Coulomb friction, applied equal and opposite to both parts.
pub fn contact_resolve(
    peg: &Pose2,
    peg_twist: &Twist2,
    hole: &Pose2,
    hole_twist: &Twist2,
    geometry: &PegHoleGeometry,
    params: &ContactParams,
) -> Result<ContactResult> {
    let finite = |p: &Pose2| p.x.is_finite() && p.y.is_finite() && p.theta.is_finite();
    if !finite(peg) || !finite(hole) {
        return Err(Error::Numeric("non-finite body pose in contact query".into()));
    }
    let peg_rect = geometry.peg_rect();
    let hole_rects = geometry.hole_rects();
    let hole_inv = hole.inverse();
    let peg_inv = peg.inverse();
    let mut points = Vec::new();

    // `sign` = +1 when the normal comes from a hole box (pushes the peg),
    // -1 when it comes from the peg box (pushes the hole).
    let mut push = |world: [f64; 2], rect: &Rect, local: [f64; 2], frame: &Pose2, sign: f64| {
        if let Some((depth, n_local)) = rect.penetration(local) {
            let n_box = rotate(frame.theta, n_local);
            let n = [sign * n_box[0], sign * n_box[1]];
            let vp = peg_twist.point_velocity(peg.position(), world);
            let vh = hole_twist.point_velocity(hole.position(), world);
            let v_rel = [vp[0] - vh[0], vp[1] - vh[1]];
            let vn = v_rel[0] * n[0] + v_rel[1] * n[1];
            let normal = (params.stiffness * depth - params.damping * vn).max(0.0);
            let vt = [v_rel[0] - vn * n[0], v_rel[1] - vn * n[1]];
            let speed = (vt[0] * vt[0] + vt[1] * vt[1]).sqrt();
            let scale = params.friction * normal / speed.max(params.slip_speed);
            let force = [normal * n[0] - scale * vt[0], normal * n[1] - scale * vt[1]];
            points.push(ContactPoint { point: world, normal: n, depth, force });
        }
    };

    for c in peg_rect.corners() {
        let world = peg.transform_point(c);
        let local = hole_inv.transform_point(world);
        for rect in &hole_rects {
            push(world, rect, local, hole, 1.0);
        }
    }
    for rect in &hole_rects {
        for c in rect.corners() {
            let world = hole.transform_point(c);
            let local = peg_inv.transform_point(world);
            push(world, &peg_rect, local, peg, -1.0);
        }
    }

    let limit = geometry.divergence_depth();
    if let Some(c) = points.iter().find(|c| c.depth > limit) {
        return Err(Error::Diverged(format!(
            "contact penetration {:.4} m exceeds {:.4} m",
            c.depth, limit
        )));
    }

    let mut on_peg = Wrench2D::ZERO;
    let mut on_hole = Wrench2D::ZERO;
    for c in &points {
        on_peg = on_peg.add(&Wrench2D::from_force_at(c.force, c.point, peg.position()));
        on_hole = on_hole.add(&Wrench2D::from_force_at([-c.force[0], -c.force[1]], c.point, hole.position()));
    }
    Ok(ContactResult { on_peg, on_hole, points })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn aligned(x: f64) -> (Pose2, Pose2) {
        let hole = Pose2::new(0.2, -0.1, 0.3);
        (hole.compose(&Pose2::new(x, 0.0, 0.0)), hole)
    }

    #[test]
    fn separated_bodies_exchange_nothing() {
        let g = PegHoleGeometry::default();
        let (peg, hole) = aligned(-0.01);
        let r = contact_resolve(&peg, &Twist2::new(0.1, 0.0, 0.3), &hole, &Twist2::default(), &g, &ContactParams::default())
            .unwrap();
        assert!(!r.in_contact());
        assert_eq!(r.on_peg, Wrench2D::ZERO);
        assert_eq!(r.on_hole, Wrench2D::ZERO);
        // Centered inside the channel without touching the bottom.
        let (peg, hole) = aligned(0.02);
        let r = contact_resolve(&peg, &Twist2::default(), &hole, &Twist2::default(), &g, &ContactParams::default())
            .unwrap();
        assert!(!r.in_contact());
    }

    #[test]
    fn wrenches_are_equal_and_opposite() {
        let g = PegHoleGeometry::default();
        let hole = Pose2::new(0.1, 0.05, -0.4);
        // Tilted, offset peg jammed against the upper lip and a wall.
        let peg = hole.compose(&Pose2::new(0.004, 0.0035, 0.08));
        let r = contact_resolve(
            &peg,
            &Twist2::new(0.05, -0.02, 0.4),
            &hole,
            &Twist2::new(-0.01, 0.03, -0.2),
            &g,
            &ContactParams::default(),
        )
        .unwrap();
        assert!(r.in_contact());
        let moved = r.on_hole.transport(hole.position(), peg.position());
        let sum = moved.add(&r.on_peg);
        for v in sum.as_array() {
            assert!(v.abs() < 1e-10, "{sum:?}");
        }
    }

    #[test]
    fn normal_force_never_pulls_and_friction_is_bounded() {
        let g = PegHoleGeometry::default();
        let p = ContactParams::default();
        let hole = Pose2::IDENTITY;
        let peg = Pose2::new(g.hole_depth + 0.0005, 0.0, 0.0);
        // Withdrawing fast: damping would pull, clamp must zero it.
        let r = contact_resolve(&peg, &Twist2::new(-1.0, 0.0, 0.0), &hole, &Twist2::default(), &g, &p).unwrap();
        assert!(r.in_contact());
        for c in &r.points {
            assert!(c.force[0].abs() < 1e-12 && c.force[1].abs() < 1e-12);
        }
        // Sliding sideways while pressed in.
        let r = contact_resolve(&peg, &Twist2::new(0.0, 0.3, 0.0), &hole, &Twist2::default(), &g, &p).unwrap();
        for c in &r.points {
            let fn_ = c.force[0] * c.normal[0] + c.force[1] * c.normal[1];
            let ft = (c.force[0] * c.normal[1] - c.force[1] * c.normal[0]).abs();
            assert!(fn_ > 0.0 && ft <= p.friction * fn_ + 1e-12);
        }
    }

    #[test]
    fn deep_penetration_is_divergence() {
        let g = PegHoleGeometry::default();
        let peg = Pose2::new(g.hole_depth + 0.006, 0.0, 0.0);
        let err = contact_resolve(&peg, &Twist2::default(), &Pose2::IDENTITY, &Twist2::default(), &g, &ContactParams::default());
        assert!(matches!(err, Err(Error::Diverged(_))));
    }

    /// Free peg pushed into the bottom by a constant force settles where the
    /// penalty force balances the push. The body mass stands in for the
    /// effective end-effector inertia the peg normally rides on.
    #[test]
    fn static_press_balances_applied_force() {
        let g = PegHoleGeometry::default();
        let p = ContactParams::default();
        let hole = Pose2::IDENTITY;
        let (mass, inertia) = (1.0, 1e-2);
        let push = 12.0;
        let half = 0.5 * g.peg_length;
        let tip_from_center = Pose2::new(half, 0.0, 0.0);
        // Center-of-mass pose and twist.
        let mut c = Pose2::new(g.hole_depth - 0.002 - half, 0.0005, 0.01);
        let (mut v, mut w) = ([0.0, 0.0], 0.0);
        let dt = 1.0 / 240.0;
        let mut last = None;
        for k in 0..2400 {
            let tip = c.compose(&tip_from_center);
            let tip_twist = Twist2 { vx: v[0], vy: v[1], omega: w }.point_velocity(c.position(), tip.position());
            let r = contact_resolve(&tip, &Twist2::new(tip_twist[0], tip_twist[1], w), &hole, &Twist2::default(), &g, &p)
                .unwrap_or_else(|e| panic!("step {k}: {e}"));
            let axis = rotate(c.theta, [1.0, 0.0]);
            let total = r.on_peg.transport(tip.position(), c.position()).add(&Wrench2D::new(push * axis[0], push * axis[1], 0.0));
            v[0] += total.fx / mass * dt;
            v[1] += total.fy / mass * dt;
            w += total.tz / inertia * dt;
            c = Pose2::new(c.x + v[0] * dt, c.y + v[1] * dt, c.theta + w * dt);
            last = Some(r);
        }
        let last = last.unwrap();
        let normal: f64 = last.points.iter().map(|c| c.force[0] * c.normal[0] + c.force[1] * c.normal[1]).sum();
        assert!((normal - push).abs() < 0.02 * push, "normal {normal}");
        // Regularized friction lets the body creep slowly sideways but the
        // press direction is at rest.
        assert!(v[0].abs() < 1e-6 && v[1].abs() < 1e-3 && w.abs() < 1e-2, "{v:?} {w}");
    }
}
