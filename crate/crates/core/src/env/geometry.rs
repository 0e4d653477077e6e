//! Peg and hole shapes, their rigid mounts on the end-effectors, and the
//! planar goal encoding (pose of the peg tip frame in the hole mouth frame).

use std::f64::consts::FRAC_PI_4;

use serde::{Deserialize, Serialize};

use crate::dynamics::{EePose, Pose2};
use crate::error::{contract, Result};

/// Axis-aligned box in a body frame. `active` flags the faces that may
/// generate contact, ordered `[x_min, x_max, y_min, y_max]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x: [f64; 2],
    pub y: [f64; 2],
    pub active: [bool; 4],
}

impl Rect {
    pub fn new(x: [f64; 2], y: [f64; 2]) -> Self {
        Self { x, y, active: [true; 4] }
    }

    pub fn corners(&self) -> [[f64; 2]; 4] {
        [[self.x[0], self.y[0]], [self.x[1], self.y[0]], [self.x[1], self.y[1]], [self.x[0], self.y[1]]]
    }

    /// Depth and outward face normal of the shallowest active face if `p`
    /// lies strictly inside.
    pub fn penetration(&self, p: [f64; 2]) -> Option<(f64, [f64; 2])> {
        if !(p[0] > self.x[0] && p[0] < self.x[1] && p[1] > self.y[0] && p[1] < self.y[1]) {
            return None;
        }
        let faces = [
            (p[0] - self.x[0], [-1.0, 0.0]),
            (self.x[1] - p[0], [1.0, 0.0]),
            (p[1] - self.y[0], [0.0, -1.0]),
            (self.y[1] - p[1], [0.0, 1.0]),
        ];
        faces
            .iter()
            .zip(self.active)
            .filter(|(_, a)| *a)
            .map(|(f, _)| *f)
            .min_by(|a, b| a.0.total_cmp(&b.0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PegHoleGeometry {
    pub peg_width: f64,
    pub peg_length: f64,
    /// Hole inner width minus peg width.
    pub clearance: f64,
    pub hole_depth: f64,
    pub wall_thickness: f64,
    pub bottom_thickness: f64,
    /// Target insertion depth of the peg tip, measured from the mouth.
    pub insertion_depth: f64,
    /// Peg tip frame in the carrying end-effector frame (x along the peg,
    /// pointing out of the tip).
    pub peg_mount: Pose2,
    /// Hole mouth frame in the carrying end-effector frame (x pointing into
    /// the hole).
    pub hole_mount: Pose2,
}

/// Default distance from the end-effector to the gripped part centers (m).
pub const GRIP_OFFSET: f64 = 0.04;

impl Default for PegHoleGeometry {
    fn default() -> Self {
        Self::with_grip(0.020, 0.060, 0.002, 0.040, 0.010, 0.010, GRIP_OFFSET)
    }
}

impl PegHoleGeometry {
    /// Geometry with both parts gripped at their centers, `grip_offset`
    /// along the end-effector axis; the peg gripper is tilted down-right
    /// (-45°) and the hole gripper down-left (-135°) when the part axes are
    /// horizontal.
    pub fn with_grip(
        peg_width: f64,
        peg_length: f64,
        clearance: f64,
        hole_depth: f64,
        wall_thickness: f64,
        bottom_thickness: f64,
        grip_offset: f64,
    ) -> Self {
        let peg_angle = FRAC_PI_4;
        let hole_angle = 3.0 * FRAC_PI_4;
        let half_peg = 0.5 * peg_length;
        let half_block = 0.5 * (hole_depth + bottom_thickness);
        Self {
            peg_width,
            peg_length,
            clearance,
            hole_depth,
            wall_thickness,
            bottom_thickness,
            insertion_depth: hole_depth,
            peg_mount: Pose2::new(
                grip_offset + half_peg * peg_angle.cos(),
                half_peg * peg_angle.sin(),
                peg_angle,
            ),
            hole_mount: Pose2::new(
                grip_offset - half_block * hole_angle.cos(),
                -half_block * hole_angle.sin(),
                hole_angle,
            ),
        }
    }

    /// Same parts with both mounts reflected about the end-effector axis, for
    /// carrying the peg on the other arm.
    pub fn mirrored(&self) -> Self {
        let flip = |p: Pose2| Pose2::new(p.x, -p.y, -p.theta);
        Self { peg_mount: flip(self.peg_mount), hole_mount: flip(self.hole_mount), ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.peg_width,
            self.peg_length,
            self.hole_depth,
            self.wall_thickness,
            self.bottom_thickness,
            self.insertion_depth,
        ];
        if dims.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(contract("peg and hole dimensions must be positive"));
        }
        if !(self.clearance > 0.0) {
            return Err(contract("clearance must be positive"));
        }
        if self.insertion_depth > self.hole_depth {
            return Err(contract("insertion depth cannot exceed hole depth"));
        }
        Ok(())
    }

    pub fn half_inner_width(&self) -> f64 {
        0.5 * (self.peg_width + self.clearance)
    }

    /// Peg body in the peg tip frame.
    pub fn peg_rect(&self) -> Rect {
        let hw = 0.5 * self.peg_width;
        Rect::new([-self.peg_length, 0.0], [-hw, hw])
    }

    /// Walls and bottom of the hole part in the hole mouth frame.
    pub fn hole_rects(&self) -> [Rect; 3] {
        let hw = self.half_inner_width();
        let back = self.hole_depth + self.bottom_thickness;
        let upper = Rect::new([0.0, back], [hw, hw + self.wall_thickness]);
        let lower = Rect::new([0.0, back], [-hw - self.wall_thickness, -hw]);
        // Only the face toward the mouth is reachable; the sides abut the
        // walls and the back is covered by the deeper penetration check.
        let bottom = Rect { x: [self.hole_depth, back], y: [-hw, hw], active: [true, false, false, false] };
        [upper, lower, bottom]
    }

    /// Penetration beyond which the penalty model is considered blown up.
    pub fn divergence_depth(&self) -> f64 {
        0.5 * self.peg_width.min(self.wall_thickness).min(self.bottom_thickness)
    }

    /// Peg tip frame in the world for a carrying end-effector pose and an
    /// additional (unobserved) mount offset.
    pub fn peg_pose(&self, ee: &EePose, offset: &Pose2) -> Pose2 {
        ee.compose(&self.peg_mount.compose(offset))
    }

    pub fn hole_pose(&self, ee: &EePose) -> Pose2 {
        ee.compose(&self.hole_mount)
    }
}

/// Relative pose of the peg tip in the hole frame, with the angle weighted
/// so that all three entries share length units.
pub fn goal_vector(peg: &Pose2, hole: &Pose2, angle_weight: f64) -> [f64; 3] {
    let rel = hole.inverse().compose(peg);
    [rel.x, rel.y, angle_weight * rel.theta]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rect_penetration_picks_shallowest_active_face() {
        let r = Rect::new([0.0, 1.0], [0.0, 2.0]);
        let (d, n) = r.penetration([0.1, 1.0]).unwrap();
        assert!((d - 0.1).abs() < 1e-15 && n == [-1.0, 0.0]);
        assert!(r.penetration([1.5, 1.0]).is_none());
        let bottom = Rect { active: [true, false, false, false], ..r };
        let (d, n) = bottom.penetration([0.9, 0.05]).unwrap();
        assert!((d - 0.9).abs() < 1e-15 && n == [-1.0, 0.0]);
    }

    #[test]
    fn inserted_peg_sits_at_goal() {
        let g = PegHoleGeometry::default();
        let hole_ee = Pose2::new(0.3, 0.4, -2.0);
        let hole = g.hole_pose(&hole_ee);
        let peg = hole.compose(&Pose2::new(g.insertion_depth, 0.0, 0.0));
        let goal = goal_vector(&peg, &hole, 0.05);
        assert!((goal[0] - g.insertion_depth).abs() < 1e-12 && goal[1].abs() < 1e-12 && goal[2].abs() < 1e-12);
    }

    #[test]
    fn default_mounts_make_part_axes_horizontal() {
        let g = PegHoleGeometry::default();
        let peg = g.peg_pose(&Pose2::new(0.0, 0.0, -FRAC_PI_4), &Pose2::IDENTITY);
        let hole = g.hole_pose(&Pose2::new(0.0, 0.0, -3.0 * FRAC_PI_4));
        assert!(peg.theta.abs() < 1e-12 && hole.theta.abs() < 1e-12);
        // Peg center sits grip_offset along the gripper axis.
        let center = peg.transform_point([-0.5 * g.peg_length, 0.0]);
        assert!((center[0] - 0.04 * FRAC_PI_4.cos()).abs() < 1e-12);
    }

    #[test]
    fn validation_rejects_bad_geometry() {
        let mut g = PegHoleGeometry::default();
        g.clearance = 0.0;
        assert!(g.validate().is_err());
        let mut g = PegHoleGeometry::default();
        g.insertion_depth = 0.05;
        assert!(g.validate().is_err());
    }
}
