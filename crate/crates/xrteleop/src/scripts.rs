//! Scripted tracking sessions for demos, benchmarks and tests.

use std::f64::consts::PI;
use std::str::FromStr;

use xrteleop_core::nalgebra::Vector3;
use xrteleop_core::pose::{quat_from_axis_angle, Pose};
use xrteleop_core::protocol::{hand, ControllerState, HandJoint, HandMode, HandState, HAND_JOINT_COUNT};
use xrteleop_core::TrackingPacket;

/// Controller start position in the XR frame.
pub const CONTROLLER_HOME: [f64; 3] = [0.1, 1.2, -0.4];
/// Time before the grip is pressed.
pub const ENGAGE_AFTER_S: f64 = 0.5;
pub const SQUARE_SIDE_M: f64 = 0.1;
pub const SQUARE_SPEED_MPS: f64 = 0.05;
/// Hold at each corner.
pub const SQUARE_DWELL_S: f64 = 1.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Script {
    /// Controller held still, grip released.
    Idle,
    /// Right controller traces a square in the XR x-y plane with the grip held.
    Square,
    /// Right hand opens and closes in hand-tracking mode.
    Hand,
    /// Joystick driving plus a head sweep.
    Drive,
    /// Square, driving, head motion and trigger together.
    Demo,
}

impl FromStr for Script {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "idle" => Ok(Script::Idle),
            "square" => Ok(Script::Square),
            "hand" => Ok(Script::Hand),
            "drive" => Ok(Script::Drive),
            "demo" => Ok(Script::Demo),
            other => Err(format!("unknown script `{other}` (idle, square, hand, drive, demo)")),
        }
    }
}

/// A generated session plus the packet indices where the square's corners
/// have been held for a full dwell, with each corner's XR offset from home.
#[derive(Clone, Debug)]
pub struct ScriptedSession {
    pub packets: Vec<TrackingPacket>,
    pub checkpoints: Vec<(usize, Vector3<f64>)>,
}

fn square_corners() -> [Vector3<f64>; 5] {
    let s = SQUARE_SIDE_M;
    [Vector3::zeros(), Vector3::new(s, 0.0, 0.0), Vector3::new(s, s, 0.0), Vector3::new(0.0, s, 0.0), Vector3::zeros()]
}

/// Offset along the square at `t` seconds after the grip engages.
fn square_offset(t: f64) -> Vector3<f64> {
    let leg = SQUARE_SIDE_M / SQUARE_SPEED_MPS;
    let c = square_corners();
    // Dwell at the start corner, then leg + dwell for each side.
    if t < SQUARE_DWELL_S {
        return c[0];
    }
    let mut t = t - SQUARE_DWELL_S;
    for k in 0..4 {
        if t < leg {
            let s = t / leg;
            return c[k] + (c[k + 1] - c[k]) * s;
        }
        t -= leg;
        if t < SQUARE_DWELL_S {
            return c[k + 1];
        }
        t -= SQUARE_DWELL_S;
    }
    c[4]
}

fn square_duration() -> f64 {
    SQUARE_DWELL_S + 4.0 * (SQUARE_SIDE_M / SQUARE_SPEED_MPS + SQUARE_DWELL_S)
}

/// Hand keypoints for a curl in [0, 1]: open at 0, pinched at 1.
pub fn hand_frame(curl: f64) -> HandState {
    let mut joints = vec![HandJoint { pose: Pose::identity(), status: 0xF, radius: 0.01 }; HAND_JOINT_COUNT];
    joints[hand::INDEX_TIP].pose = Pose::from_translation(0.14 - 0.05 * curl, 0.03 + 0.06 * curl, 0.0);
    joints[hand::THUMB_TIP].pose = Pose::from_translation(0.08, -0.06 + 0.02 * curl, 0.0);
    HandState { is_active: true, scale: 1.0, joints }
}

/// Build `script` at `rate_hz`. `duration_s` overrides the natural length
/// of open-ended scripts; the square always runs to completion.
pub fn generate(script: Script, rate_hz: f64, duration_s: Option<f64>) -> ScriptedSession {
    let natural = match script {
        Script::Square | Script::Demo => ENGAGE_AFTER_S + square_duration() + 0.5,
        Script::Idle | Script::Hand | Script::Drive => 5.0,
    };
    let duration = match script {
        Script::Square => natural,
        _ => duration_s.unwrap_or(natural),
    };
    let n = (duration * rate_hz).round() as usize + 1;
    let home = Vector3::from(CONTROLLER_HOME);
    let mut packets = Vec::with_capacity(n);
    let mut checkpoints = Vec::new();
    let leg = SQUARE_SIDE_M / SQUARE_SPEED_MPS;
    let corner_ends: Vec<f64> =
        (0..5).map(|k| ENGAGE_AFTER_S + SQUARE_DWELL_S + k as f64 * (leg + SQUARE_DWELL_S)).collect();
    let corners = square_corners();
    let mut next_corner = 0;
    for i in 0..n {
        let t = i as f64 / rate_hz;
        let mut p = TrackingPacket {
            timestamp_ns: (t * 1e9).round() as u64,
            sequence: i as u64,
            ..Default::default()
        };
        let engaged = t >= ENGAGE_AFTER_S;
        let mut right = ControllerState { pose: Pose::new(home, Default::default()), ..Default::default() };
        let mut left = ControllerState { pose: Pose::from_translation(-0.2, 1.2, -0.4), ..Default::default() };
        match script {
            Script::Idle => {}
            Script::Square | Script::Demo => {
                right.grip = if engaged { 1.0 } else { 0.0 };
                let off = if engaged { square_offset(t - ENGAGE_AFTER_S) } else { Vector3::zeros() };
                right.pose = Pose::new(home + off, Default::default());
                // Dwell ends sit on the tick grid only approximately; take the last tick inside each dwell.
                if next_corner < corner_ends.len() && t + 1.0 / rate_hz > corner_ends[next_corner] && t <= corner_ends[next_corner] {
                    checkpoints.push((i, corners[next_corner]));
                    next_corner += 1;
                }
                if script == Script::Demo {
                    right.trigger = 0.5 + 0.5 * (2.0 * PI * 0.25 * t).sin();
                    left.axis_y = if (2.0..4.0).contains(&t) { 0.6 } else { 0.0 };
                    right.axis_x = if (5.0..6.0).contains(&t) { 0.5 } else { 0.0 };
                    p.head.pose = Pose::new(Vector3::new(0.0, 1.6, 0.0), quat_from_axis_angle(&Vector3::y(), 0.4 * (0.5 * t).sin()));
                }
            }
            Script::Hand => {
                p.head.hand_mode = HandMode::Hand;
                let curl = 0.5 - 0.5 * (2.0 * PI * 0.5 * t).cos();
                p.right_hand = Some(hand_frame(curl));
                p.left_hand = Some(HandState::inactive());
            }
            Script::Drive => {
                left.axis_y = if t < 2.0 { 0.8 } else { 0.0 };
                left.axis_x = if (2.0..3.0).contains(&t) { 0.5 } else { 0.0 };
                right.axis_x = if t >= 3.0 { -0.5 } else { 0.0 };
                p.head.pose = Pose::new(Vector3::new(0.0, 1.6, 0.0), quat_from_axis_angle(&Vector3::y(), 0.5 * (t).sin()));
            }
        }
        if script != Script::Hand {
            p.right_controller = Some(right);
            p.left_controller = Some(left);
        }
        packets.push(p);
    }
    ScriptedSession { packets, checkpoints }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_visits_all_corners() {
        let s = generate(Script::Square, 90.0, None);
        assert_eq!(s.checkpoints.len(), 5);
        for (i, off) in &s.checkpoints {
            let pos = s.packets[*i].right_controller.as_ref().unwrap().pose.position;
            assert!((pos - Vector3::from(CONTROLLER_HOME) - off).norm() < 1e-12);
        }
        assert!(s.packets.iter().all(|p| p.validate().is_ok()));
        assert!(s.packets.windows(2).all(|w| w[1].sequence == w[0].sequence + 1));
    }

    #[test]
    fn every_script_validates() {
        for script in [Script::Idle, Script::Hand, Script::Drive, Script::Demo] {
            let s = generate(script, 90.0, Some(2.0));
            assert_eq!(s.packets.len(), 181);
            assert!(s.packets.iter().all(|p| p.validate().is_ok()), "{script:?}");
        }
    }
}
