//! Rigid poses: a position and a unit quaternion.

use nalgebra::{Quaternion, Rotation3, UnitQuaternion, Vector3};

/// A rigid transform from a child frame into its parent frame.
///
/// Orientation is always kept as a unit quaternion; rotation matrices are
/// derived when needed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub position: Vector3<f64>,
    pub orientation: UnitQuaternion<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            position: Vector3::zeros(),
            orientation: UnitQuaternion::identity(),
        }
    }

    pub fn new(position: Vector3<f64>, orientation: UnitQuaternion<f64>) -> Self {
        Self {
            position,
            orientation,
        }
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Self::new(Vector3::new(x, y, z), UnitQuaternion::identity())
    }

    /// Rotation about `axis` (need not be normalized) by `angle` radians.
    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64) -> Self {
        Self::new(Vector3::zeros(), quat_from_axis_angle(&axis, angle))
    }

    /// Pose from position and roll/pitch/yaw (fixed-axis X, then Y, then Z).
    pub fn from_xyz_rpy(xyz: [f64; 3], rpy: [f64; 3]) -> Self {
        Self::new(
            Vector3::new(xyz[0], xyz[1], xyz[2]),
            UnitQuaternion::from_euler_angles(rpy[0], rpy[1], rpy[2]),
        )
    }

    /// `self ∘ other`: express `other` (given in self's child frame) in self's parent frame.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            position: self.position + self.orientation * other.position,
            orientation: renormalize(self.orientation * other.orientation),
        }
    }

    pub fn inverse(&self) -> Pose {
        let inv = self.orientation.inverse();
        Pose {
            position: -(inv * self.position),
            orientation: inv,
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.position + self.orientation * p
    }

    pub fn rotation_matrix(&self) -> Rotation3<f64> {
        self.orientation.to_rotation_matrix()
    }

    /// Roll, pitch, yaw of the orientation (fixed-axis X, Y, Z convention).
    pub fn rpy(&self) -> [f64; 3] {
        let (r, p, y) = self.orientation.euler_angles();
        [r, p, y]
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|v| v.is_finite())
            && self.orientation.coords.iter().all(|v| v.is_finite())
    }
}

/// Unit quaternion from an axis and angle; a zero axis yields identity.
pub fn quat_from_axis_angle(axis: &Vector3<f64>, angle: f64) -> UnitQuaternion<f64> {
    let n = axis.norm();
    if n == 0.0 {
        return UnitQuaternion::identity();
    }
    let half = 0.5 * angle;
    let s = half.sin() / n;
    UnitQuaternion::new_unchecked(Quaternion::new(
        half.cos(),
        axis.x * s,
        axis.y * s,
        axis.z * s,
    ))
}

/// Rescale to unit norm. Quaternions already within a few ulps of unit norm
/// are returned untouched so repeated normalization is a fixed point.
pub fn renormalize(q: UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    let n2 = q.coords.norm_squared();
    if (n2 - 1.0).abs() <= 1e-14 {
        q
    } else {
        UnitQuaternion::new_unchecked(q.into_inner() / n2.sqrt())
    }
}

/// Rotation logarithm: the axis-angle vector (axis × angle, angle in [0, π])
/// of the rotation represented by `q`.
///
/// Uses `atan2` on the vector and scalar parts, which stays accurate for
/// small angles where `acos(w)` does not.
pub fn rotation_log(q: &UnitQuaternion<f64>) -> Vector3<f64> {
    let w = q.w;
    let v = Vector3::new(q.i, q.j, q.k);
    let (w, v) = if w < 0.0 { (-w, -v) } else { (w, v) };
    let s = v.norm();
    if s < 1e-300 {
        return Vector3::zeros();
    }
    let angle = 2.0 * s.atan2(w);
    v * (angle / s)
}

/// Inverse of [`rotation_log`].
pub fn rotation_exp(w: &Vector3<f64>) -> UnitQuaternion<f64> {
    let angle = w.norm();
    if angle == 0.0 {
        UnitQuaternion::identity()
    } else {
        quat_from_axis_angle(w, angle)
    }
}

/// Angle in radians between two orientations.
pub fn angle_between(a: &UnitQuaternion<f64>, b: &UnitQuaternion<f64>) -> f64 {
    rotation_log(&(b * a.inverse())).norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use core::f64::consts::FRAC_PI_2;
    use proptest::prelude::*;

    fn arb_pose() -> impl Strategy<Value = Pose> {
        (
            prop::array::uniform3(-2.0f64..2.0),
            prop::array::uniform3(-1.0f64..1.0),
            -3.1f64..3.1,
        )
            .prop_map(|(p, a, ang)| {
                let axis = Vector3::new(a[0], a[1], a[2] + 1e-3);
                Pose::new(Vector3::new(p[0], p[1], p[2]), quat_from_axis_angle(&axis, ang))
            })
    }

    #[test]
    fn log_of_quarter_turn_about_z() {
        let q = quat_from_axis_angle(&Vector3::z(), FRAC_PI_2);
        let w = rotation_log(&q);
        assert_relative_eq!(w, Vector3::new(0.0, 0.0, FRAC_PI_2), epsilon = 1e-15);
    }

    #[test]
    fn log_handles_tiny_angles() {
        let q = quat_from_axis_angle(&Vector3::x(), 1e-10);
        assert_relative_eq!(rotation_log(&q).x, 1e-10, max_relative = 1e-9);
    }

    #[test]
    fn renormalize_is_a_fixed_point() {
        let q = UnitQuaternion::new_unchecked(Quaternion::new(2.0, 0.0, 0.0, 0.0));
        let once = renormalize(q);
        assert_eq!(once, renormalize(once));
        assert_eq!(once.w, 1.0);
    }

    proptest! {
        #[test]
        fn compose_with_inverse_is_identity(p in arb_pose()) {
            let e = p.compose(&p.inverse());
            prop_assert!(e.position.norm() < 1e-9);
            prop_assert!(angle_between(&e.orientation, &UnitQuaternion::identity()) < 1e-9);
            prop_assert!((p.compose(&p).orientation.norm() - 1.0).abs() < 1e-6);
        }

        #[test]
        fn compose_is_associative(a in arb_pose(), b in arb_pose(), c in arb_pose()) {
            let l = a.compose(&b).compose(&c);
            let r = a.compose(&b.compose(&c));
            prop_assert!((l.position - r.position).norm() < 1e-9);
            prop_assert!(angle_between(&l.orientation, &r.orientation) < 1e-9);
        }

        #[test]
        fn exp_inverts_log(p in arb_pose()) {
            let q = rotation_exp(&rotation_log(&p.orientation));
            prop_assert!(angle_between(&q, &p.orientation) < 1e-9);
        }
    }
}
