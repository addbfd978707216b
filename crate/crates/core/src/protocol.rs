//! Tracking packet data model, validation and XR-to-robot frame conversion.
//!
//! Poses arrive in the OpenXR convention: right-handed, X right, Y up,
//! Z backward, origin at the head position when the application started.
//! On the wire a pose is seven numbers `[x, y, z, qx, qy, qz, qw]`.
//! The JSON codec itself lives in the `xrteleop` crate.

use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::{Quaternion, Rotation3, UnitQuaternion, Vector3};
use thiserror::Error;

use crate::pose::{renormalize, Pose};

pub const HAND_JOINT_COUNT: usize = 26;
pub const BODY_JOINT_COUNT: usize = 24;

/// Quaternions whose norm is within this of 1 are accepted and renormalized.
pub const WIRE_QUATERNION_TOLERANCE: f64 = 1e-3;

/// OpenXR hand joint indices.
pub mod hand {
    pub const PALM: usize = 0;
    pub const WRIST: usize = 1;
    pub const THUMB_METACARPAL: usize = 2;
    pub const THUMB_PROXIMAL: usize = 3;
    pub const THUMB_DISTAL: usize = 4;
    pub const THUMB_TIP: usize = 5;
    pub const INDEX_METACARPAL: usize = 6;
    pub const INDEX_PROXIMAL: usize = 7;
    pub const INDEX_INTERMEDIATE: usize = 8;
    pub const INDEX_DISTAL: usize = 9;
    pub const INDEX_TIP: usize = 10;
    pub const MIDDLE_METACARPAL: usize = 11;
    pub const MIDDLE_TIP: usize = 15;
    pub const RING_METACARPAL: usize = 16;
    pub const RING_TIP: usize = 20;
    pub const LITTLE_METACARPAL: usize = 21;
    pub const LITTLE_TIP: usize = 25;
}

#[derive(Clone, Debug, PartialEq, Error)]
pub enum PoseError {
    #[error("pose needs 7 numbers, got {0}")]
    Arity(usize),
    #[error("pose contains a non-finite value")]
    NonFiniteValue,
    #[error("pose quaternion is degenerate (norm {0})")]
    DegenerateQuaternion(f64),
}

/// Pose from `[x, y, z, qx, qy, qz, qw]`; the quaternion is renormalized.
pub fn parse_pose7(values: &[f64]) -> Result<Pose, PoseError> {
    if values.len() != 7 {
        return Err(PoseError::Arity(values.len()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(PoseError::NonFiniteValue);
    }
    let q = Quaternion::new(values[6], values[3], values[4], values[5]);
    let n = q.norm();
    if n < 1e-6 {
        return Err(PoseError::DegenerateQuaternion(n));
    }
    Ok(Pose::new(
        Vector3::new(values[0], values[1], values[2]),
        renormalize(UnitQuaternion::new_unchecked(q)),
    ))
}

pub fn pose_to_pose7(p: &Pose) -> [f64; 7] {
    let q = p.orientation;
    [p.position.x, p.position.y, p.position.z, q.i, q.j, q.k, q.w]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub const BOTH: [Side; 2] = [Side::Left, Side::Right];

    pub fn as_str(self) -> &'static str {
        match self {
            Side::Left => "left",
            Side::Right => "right",
        }
    }

    pub fn index(self) -> usize {
        match self {
            Side::Left => 0,
            Side::Right => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrackingStatus {
    Unreliable = 0,
    Reliable = 1,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HandMode {
    None = 0,
    Controller = 1,
    Hand = 2,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadState {
    pub pose: Pose,
    pub status: TrackingStatus,
    pub hand_mode: HandMode,
}

impl Default for HeadState {
    fn default() -> Self {
        Self {
            pose: Pose::identity(),
            status: TrackingStatus::Reliable,
            hand_mode: HandMode::Controller,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ControllerState {
    pub pose: Pose,
    pub axis_x: f64,
    pub axis_y: f64,
    pub axis_click: bool,
    pub grip: f64,
    pub trigger: f64,
    pub primary_button: bool,
    pub secondary_button: bool,
    pub menu_button: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct HandJoint {
    pub pose: Pose,
    /// OpenXR space-location flags.
    pub status: u32,
    /// Joint radius in meters.
    pub radius: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HandState {
    pub is_active: bool,
    pub scale: f64,
    /// [`HAND_JOINT_COUNT`] entries when active; may be empty otherwise.
    pub joints: Vec<HandJoint>,
}

impl HandState {
    pub fn inactive() -> Self {
        Self { is_active: false, scale: 1.0, joints: Vec::new() }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct BodyJoint {
    pub pose: Pose,
    /// Linear then angular velocity.
    pub velocity: [f64; 6],
    /// Linear then angular acceleration.
    pub acceleration: [f64; 6],
}

#[derive(Clone, Debug, PartialEq)]
pub struct BodyState {
    pub joints: Vec<BodyJoint>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MotionTrackerState {
    pub pose: Pose,
    /// Velocity and angular velocity.
    pub velocity: [f64; 6],
    /// Acceleration and angular acceleration.
    pub acceleration: [f64; 6],
    pub serial: String,
}

/// One sample of the full tracking state.
///
/// `timestamp_ns` (sender clock) and `sequence` are stream-level extensions
/// used for latency measurement and loss detection.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrackingPacket {
    pub timestamp_ns: u64,
    pub sequence: u64,
    pub head: HeadState,
    pub left_controller: Option<ControllerState>,
    pub right_controller: Option<ControllerState>,
    pub left_hand: Option<HandState>,
    pub right_hand: Option<HandState>,
    pub body: Option<BodyState>,
    pub trackers: Vec<MotionTrackerState>,
}

impl TrackingPacket {
    pub fn controller(&self, side: Side) -> Option<&ControllerState> {
        match side {
            Side::Left => self.left_controller.as_ref(),
            Side::Right => self.right_controller.as_ref(),
        }
    }

    pub fn controller_mut(&mut self, side: Side) -> &mut Option<ControllerState> {
        match side {
            Side::Left => &mut self.left_controller,
            Side::Right => &mut self.right_controller,
        }
    }

    pub fn hand(&self, side: Side) -> Option<&HandState> {
        match side {
            Side::Left => self.left_hand.as_ref(),
            Side::Right => self.right_hand.as_ref(),
        }
    }

    pub fn hand_mut(&mut self, side: Side) -> &mut Option<HandState> {
        match side {
            Side::Left => &mut self.left_hand,
            Side::Right => &mut self.right_hand,
        }
    }

    /// Check every invariant the codec relies on.
    pub fn validate(&self) -> Result<(), PacketError> {
        check_pose_at(FieldPath::Head("pose"), &self.head.pose)?;
        for side in Side::BOTH {
            if let Some(c) = self.controller(side) {
                let at = |f: &'static str| FieldPath::Controller(side, f);
                check_pose_at(at("pose"), &c.pose)?;
                check_range(at("axisX"), c.axis_x, -1.0, 1.0)?;
                check_range(at("axisY"), c.axis_y, -1.0, 1.0)?;
                check_range(at("grip"), c.grip, 0.0, 1.0)?;
                check_range(at("trigger"), c.trigger, 0.0, 1.0)?;
            }
            if let Some(h) = self.hand(side) {
                let at = |f: &'static str| FieldPath::Hand(side, f);
                if !(h.scale.is_finite() && h.scale > 0.0) {
                    return Err(PacketError::Range { field: at("scale"), value: h.scale });
                }
                let n = h.joints.len();
                if n != HAND_JOINT_COUNT && (h.is_active || n != 0) {
                    return Err(PacketError::Arity { field: at("HandJointLocations"), expected: HAND_JOINT_COUNT, got: n });
                }
                for j in &h.joints {
                    check_pose_at(at("HandJointLocations"), &j.pose)?;
                    if !(j.radius.is_finite() && j.radius >= 0.0) {
                        return Err(PacketError::Range { field: at("radius"), value: j.radius });
                    }
                }
            }
        }
        if let Some(b) = &self.body {
            if b.joints.len() != BODY_JOINT_COUNT {
                return Err(PacketError::Arity { field: FieldPath::Body, expected: BODY_JOINT_COUNT, got: b.joints.len() });
            }
            for j in &b.joints {
                check_pose_at(FieldPath::Body, &j.pose)?;
                check_finite(FieldPath::Body, j.velocity.iter().chain(j.acceleration.iter()))?;
            }
        }
        for (i, t) in self.trackers.iter().enumerate() {
            if t.serial.is_empty() {
                return Err(PacketError::Invariant("motion tracker serial number is empty"));
            }
            if self.trackers[..i].iter().any(|o| o.serial == t.serial) {
                return Err(PacketError::DuplicateSerial(t.serial.clone()));
            }
            check_pose_at(FieldPath::Tracker, &t.pose)?;
            check_finite(FieldPath::Tracker, t.velocity.iter().chain(t.acceleration.iter()))?;
        }
        Ok(())
    }
}

/// Where in a packet a validation error was found.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FieldPath {
    Head(&'static str),
    Controller(Side, &'static str),
    Hand(Side, &'static str),
    Body,
    Tracker,
}

impl core::fmt::Display for FieldPath {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            FieldPath::Head(k) => write!(f, "Head.{k}"),
            FieldPath::Controller(s, k) => write!(f, "Controller.{}.{k}", s.as_str()),
            FieldPath::Hand(s, k) => write!(f, "Hand.{}.{k}", s.as_str()),
            FieldPath::Body => f.write_str("Body.joints"),
            FieldPath::Tracker => f.write_str("MotionTracker"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Error)]
pub enum PacketError {
    #[error("{field} = {value} is out of range")]
    Range { field: FieldPath, value: f64 },
    #[error("{field} must have {expected} entries, got {got}")]
    Arity { field: FieldPath, expected: usize, got: usize },
    #[error("{field}: {source}")]
    Pose { field: FieldPath, source: PoseError },
    #[error("{0} contains a non-finite value")]
    NonFinite(FieldPath),
    #[error("duplicate motion tracker serial `{0}`")]
    DuplicateSerial(String),
    #[error("{0}")]
    Invariant(&'static str),
}

fn check_pose_at(field: FieldPath, p: &Pose) -> Result<(), PacketError> {
    if !p.is_finite() {
        return Err(PacketError::Pose { field, source: PoseError::NonFiniteValue });
    }
    let n = p.orientation.coords.norm();
    if (n - 1.0).abs() > WIRE_QUATERNION_TOLERANCE {
        return Err(PacketError::Pose { field, source: PoseError::DegenerateQuaternion(n) });
    }
    Ok(())
}

fn check_range(field: FieldPath, v: f64, lo: f64, hi: f64) -> Result<(), PacketError> {
    if v.is_finite() && lo <= v && v <= hi {
        Ok(())
    } else {
        Err(PacketError::Range { field, value: v })
    }
}

fn check_finite<'a>(field: FieldPath, mut it: impl Iterator<Item = &'a f64>) -> Result<(), PacketError> {
    if it.all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(PacketError::NonFinite(field))
    }
}

/// A registered change of basis from the XR frame into a robot frame.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum FrameConvention {
    /// OpenXR (x right, y up, z back) to robot (x forward, y left, z up):
    /// `x_r = −z_xr`, `y_r = −x_xr`, `z_r = y_xr`.
    #[default]
    RobotZUp,
    /// Robot frame equals the XR frame.
    Identity,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("unknown frame convention `{0}`")]
pub struct UnknownConvention(pub String);

impl FrameConvention {
    pub fn from_name(name: &str) -> Result<Self, UnknownConvention> {
        match name {
            "robot_z_up" | "default" => Ok(FrameConvention::RobotZUp),
            "identity" => Ok(FrameConvention::Identity),
            other => Err(UnknownConvention(other.into())),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FrameConvention::RobotZUp => "robot_z_up",
            FrameConvention::Identity => "identity",
        }
    }

    pub fn rotation(self) -> UnitQuaternion<f64> {
        match self {
            FrameConvention::Identity => UnitQuaternion::identity(),
            FrameConvention::RobotZUp => {
                #[rustfmt::skip]
                let m = nalgebra::Matrix3::new(
                    0.0, 0.0, -1.0,
                    -1.0, 0.0, 0.0,
                    0.0, 1.0, 0.0,
                );
                UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(m))
            }
        }
    }
}

/// Express an XR-frame pose in the robot frame: `R·p` for position and
/// `R·q·R⁻¹` for orientation.
pub fn xr_to_robot(pose: &Pose, convention: FrameConvention) -> Pose {
    if convention == FrameConvention::Identity {
        return *pose;
    }
    let r = convention.rotation();
    Pose::new(r * pose.position, renormalize(r * pose.orientation * r.inverse()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose::angle_between;
    use alloc::vec;
    use approx::assert_relative_eq;

    #[test]
    fn parse_pose7_cases() {
        assert_eq!(parse_pose7(&[0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]).unwrap(), Pose::identity());
        let p = parse_pose7(&[1.0, 2.0, 3.0, 0.0, 0.0, 0.0, 2.0]).unwrap();
        assert_eq!(p.position, Vector3::new(1.0, 2.0, 3.0));
        assert_eq!(p.orientation, UnitQuaternion::identity());
        assert!(matches!(parse_pose7(&[0.0; 7]), Err(PoseError::DegenerateQuaternion(_))));
        assert_eq!(parse_pose7(&[0.0; 6]), Err(PoseError::Arity(6)));
        assert_eq!(parse_pose7(&[f64::NAN, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]), Err(PoseError::NonFiniteValue));
    }

    #[test]
    fn xr_to_robot_basis_map() {
        let c = FrameConvention::default();
        let id = xr_to_robot(&Pose::identity(), c);
        assert_eq!(id.position, Vector3::zeros());
        assert!(angle_between(&id.orientation, &UnitQuaternion::identity()) < 1e-15);
        let fwd = xr_to_robot(&Pose::from_translation(0.0, 0.0, -1.0), c);
        assert_relative_eq!(fwd.position, Vector3::new(1.0, 0.0, 0.0), epsilon = 1e-15);
        let up = xr_to_robot(&Pose::from_translation(0.0, 1.0, 0.0), c);
        assert_relative_eq!(up.position, Vector3::new(0.0, 0.0, 1.0), epsilon = 1e-15);
        let right = xr_to_robot(&Pose::from_translation(1.0, 0.0, 0.0), c);
        assert_relative_eq!(right.position, Vector3::new(0.0, -1.0, 0.0), epsilon = 1e-15);
        // yaw about XR up becomes yaw about robot up
        let yaw = xr_to_robot(&Pose::from_axis_angle(Vector3::y(), 0.3), c);
        let expected = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), 0.3);
        assert!(angle_between(&yaw.orientation, &expected) < 1e-15);
        assert_eq!(FrameConvention::from_name("nope"), Err(UnknownConvention("nope".into())));
    }

    #[test]
    fn validation_catches_violations() {
        let mut p = TrackingPacket::default();
        assert!(p.validate().is_ok());
        p.right_controller = Some(ControllerState { trigger: 1.5, ..Default::default() });
        assert!(matches!(p.validate(), Err(PacketError::Range { .. })));
        p.right_controller = Some(ControllerState { grip: -0.2, ..Default::default() });
        assert!(matches!(p.validate(), Err(PacketError::Range { .. })));
        p.right_controller = None;
        p.left_hand = Some(HandState { is_active: true, scale: 1.0, joints: vec![HandJoint::default(); 25] });
        assert!(matches!(p.validate(), Err(PacketError::Arity { expected: 26, got: 25, .. })));
        p.left_hand = Some(HandState::inactive());
        assert!(p.validate().is_ok());
        let tracker = |sn: &str| MotionTrackerState {
            pose: Pose::identity(),
            velocity: [0.0; 6],
            acceleration: [0.0; 6],
            serial: sn.into(),
        };
        p.trackers = vec![tracker("A"), tracker("A")];
        assert_eq!(p.validate(), Err(PacketError::DuplicateSerial("A".into())));
        p.trackers = vec![tracker("A"), tracker("B")];
        assert!(p.validate().is_ok());
    }
}
