use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::Vector3;
use xrteleop_core::fixtures::{arm6, two_finger_hand, ARM6_HOME};
use xrteleop_core::ik::IkParams;
use xrteleop_core::kinematics::JointLimits;
use xrteleop_core::pose::{angle_between, quat_from_axis_angle, Pose};
use xrteleop_core::protocol::{
    hand, ControllerState, FrameConvention, HandJoint, HandMode, HandState, Side, TrackingStatus, HAND_JOINT_COUNT,
};
use xrteleop_core::retarget::{KeypointPair, RetargetMap, RetargetParams};
use xrteleop_core::sim::{sim_step, SimState};
use xrteleop_core::teleop::{
    step, ArmMapping, BaseLimits, BaseVelocity, GimbalAngles, GimbalLimits, HandMapping, StepOutput,
};
use xrteleop_core::{Configuration, Robot, RobotCommand, RowSelection, TeleopConfig, TeleopState, TrackingPacket};

const DT: f64 = 1.0 / 90.0;

fn robot() -> Robot {
    Robot::new().with_chain("arm", arm6()).with_chain("hand", two_finger_hand())
}

fn config() -> TeleopConfig {
    TeleopConfig {
        arms: vec![ArmMapping { side: Side::Right, chain: "arm".into(), ee_frame: "ee".into(), rows: RowSelection::ALL, weight: 1.0 }],
        hands: vec![HandMapping {
            side: Side::Right,
            chain: "hand".into(),
            map: RetargetMap::new(vec![
                KeypointPair { human_keypoint: hand::INDEX_TIP, reference_keypoint: hand::WRIST, robot_frame: "index_tip".into(), robot_reference: None },
                KeypointPair { human_keypoint: hand::THUMB_TIP, reference_keypoint: hand::WRIST, robot_frame: "thumb_tip".into(), robot_reference: None },
            ]),
            params: RetargetParams::default(),
        }],
        base: Some(BaseLimits { v_max: 0.5, w_max: 1.0 }),
        gimbal: Some(GimbalLimits { yaw: JointLimits::new(-PI, PI), pitch: JointLimits::new(-1.0, 1.0) }),
        grippers: vec![Side::Right],
        ik: IkParams { dt: DT, ..Default::default() },
        ..Default::default()
    }
}

fn packet(controller: Pose, grip: f64) -> TrackingPacket {
    TrackingPacket {
        right_controller: Some(ControllerState { pose: controller, grip, trigger: 0.4, ..Default::default() }),
        ..Default::default()
    }
}

struct Loop {
    robot: Robot,
    cfg: TeleopConfig,
    teleop: TeleopState,
    sim: SimState,
}

impl Loop {
    fn new() -> Self {
        let robot = robot();
        let cfg = config();
        cfg.validate(&robot).unwrap();
        let mut sim = SimState::new(&robot);
        sim.chains.insert("arm".into(), Configuration::from_slice(&ARM6_HOME));
        Self { teleop: TeleopState::new(&cfg), robot, cfg, sim }
    }

    fn tick(&mut self, p: &TrackingPacket) -> StepOutput {
        let out = step(p, &self.teleop, &self.cfg, &self.robot, &self.sim.chains);
        let cmds: Vec<RobotCommand> = out.ok_commands().cloned().collect();
        assert!(out.commands.iter().all(Result::is_ok), "{:?}", out.commands);
        self.sim = sim_step(&self.sim, &cmds, DT, &self.robot).unwrap();
        self.teleop = out.state.clone();
        out
    }

    fn ee(&self) -> Pose {
        self.robot.chain("arm").unwrap().forward_kinematics(&self.sim.chains["arm"], "ee").unwrap()
    }
}

fn arm_target(out: &StepOutput) -> Option<Pose> {
    out.ok_commands().find_map(|c| match c {
        RobotCommand::ArmVelocity { targets, .. } => Some(targets[0].1),
        _ => None,
    })
}

#[test]
fn engaging_the_clutch_does_not_move_the_target() {
    let mut l = Loop::new();
    let device = Pose::from_xyz_rpy([0.2, 1.1, -0.3], [0.3, -0.2, 0.1]);
    assert!(arm_target(&l.tick(&packet(device, 0.5))).is_none());
    let before = l.ee();
    let out = l.tick(&packet(device, 0.95));
    assert_eq!(arm_target(&out), Some(before));
    // Converged already, so the commanded motion is negligible.
    assert!((l.ee().position - before.position).norm() < 1e-9);
}

#[test]
fn scripted_session_tracks_within_tolerance() {
    let mut l = Loop::new();
    let start = Pose::from_xyz_rpy([0.1, 1.2, -0.4], [0.0, 0.0, 0.0]);
    l.tick(&packet(start, 0.95));
    let anchor_ee = l.ee();
    // One second of motion: 10 cm right, 5 cm up, 20° about the vertical.
    let n = 90;
    let mut last_target = anchor_ee;
    for i in 1..=n {
        let s = i as f64 / n as f64;
        let device = Pose::new(
            start.position + Vector3::new(0.1, 0.05, 0.0) * s,
            quat_from_axis_angle(&Vector3::y(), 20f64.to_radians() * s) * start.orientation,
        );
        last_target = arm_target(&l.tick(&packet(device, 0.95))).unwrap();
    }
    let hold = Pose::new(start.position + Vector3::new(0.1, 0.05, 0.0), quat_from_axis_angle(&Vector3::y(), 20f64.to_radians()));
    for _ in 0..90 {
        last_target = arm_target(&l.tick(&packet(hold, 0.95))).unwrap();
    }
    let ee = l.ee();
    let pos_err = (ee.position - last_target.position).norm();
    let rot_err = angle_between(&ee.orientation, &last_target.orientation).to_degrees();
    assert!(pos_err < 1e-3, "position error {pos_err} m");
    assert!(rot_err < 0.5, "rotation error {rot_err} deg");
    // XR +x (right) is robot −y; XR +y (up) is robot +z.
    let moved = last_target.position - anchor_ee.position;
    assert!((moved - Vector3::new(0.0, -0.1, 0.05)).norm() < 1e-12);
}

#[test]
fn grip_hysteresis() {
    let mut l = Loop::new();
    let device = Pose::from_translation(0.0, 1.0, -0.3);
    let engaged = |l: &Loop| l.teleop.clutches[0].is_engaged();
    for (grip, expect) in [(0.85, false), (0.9, true), (0.75, true), (0.85, true), (0.7, false), (0.85, false), (0.95, true)] {
        l.tick(&packet(device, grip));
        assert_eq!(engaged(&l), expect, "grip {grip}");
    }
}

#[test]
fn released_clutch_lets_the_operator_reposition() {
    let mut l = Loop::new();
    let a = Pose::from_translation(0.0, 1.0, -0.3);
    l.tick(&packet(a, 1.0));
    for i in 1..=30 {
        l.tick(&packet(Pose::from_translation(0.003 * i as f64, 1.0, -0.3), 1.0));
    }
    l.tick(&packet(Pose::from_translation(0.09, 1.0, -0.3), 0.0));
    let parked = l.sim.chains["arm"].clone();
    // Move back to the start with the clutch open: the arm stays put.
    for i in (0..30).rev() {
        let out = l.tick(&packet(Pose::from_translation(0.003 * i as f64, 1.0, -0.3), 0.0));
        assert!(arm_target(&out).is_none());
    }
    assert_eq!(l.sim.chains["arm"], parked);
    let before = l.ee();
    let out = l.tick(&packet(a, 1.0));
    assert_eq!(arm_target(&out), Some(before));
}

fn hand_packet(active: bool, curl: f64) -> TrackingPacket {
    let mut p = packet(Pose::identity(), 0.0);
    p.head.hand_mode = HandMode::Hand;
    let mut joints = vec![HandJoint::default(); HAND_JOINT_COUNT];
    joints[hand::INDEX_TIP].pose = Pose::from_translation(0.14 - 0.05 * curl, 0.03 + 0.06 * curl, 0.0);
    joints[hand::THUMB_TIP].pose = Pose::from_translation(0.08, -0.06 + 0.02 * curl, 0.0);
    p.right_hand = Some(if active { HandState { is_active: true, scale: 1.0, joints } } else { HandState::inactive() });
    p
}

fn hand_q(out: &StepOutput) -> Option<Configuration> {
    out.ok_commands().find_map(|c| match c {
        RobotCommand::HandConfig { q, .. } => Some(q.clone()),
        _ => None,
    })
}

#[test]
fn hand_mode_retargets_and_freezes_on_loss() {
    let mut l = Loop::new();
    let mut p = hand_packet(true, 0.5);
    p.head.hand_mode = HandMode::Controller;
    assert!(hand_q(&l.tick(&p)).is_none());

    let q1 = hand_q(&l.tick(&hand_packet(true, 0.5))).unwrap();
    let q2 = hand_q(&l.tick(&hand_packet(true, 1.0))).unwrap();
    assert_ne!(q1, q2);
    assert_eq!(l.sim.chains["hand"], q2);
    for _ in 0..5 {
        assert_eq!(hand_q(&l.tick(&hand_packet(false, 0.0))).unwrap(), q2);
    }
}

#[test]
fn base_gimbal_and_gripper_commands() {
    let mut l = Loop::new();
    let mut p = packet(Pose::identity(), 0.0);
    p.left_controller = Some(ControllerState { axis_y: 1.0, ..Default::default() });
    p.head.pose = Pose::from_axis_angle(Vector3::y(), 30f64.to_radians());
    let out = l.tick(&p);
    let cmds: Vec<&RobotCommand> = out.ok_commands().collect();
    assert!(cmds.contains(&&RobotCommand::BaseVelocity(BaseVelocity { vx: 0.5, vy: 0.0, wz: 0.0 })));
    assert!(cmds.contains(&&RobotCommand::Gripper { side: Side::Right, value: 0.4 }));
    let yaw = l.sim.gimbal.yaw;
    assert!((yaw - std::f64::consts::FRAC_PI_6).abs() < 1e-4, "yaw {yaw}");

    // Lost head tracking holds the last gimbal command.
    p.head.status = TrackingStatus::Unreliable;
    p.head.pose = Pose::identity();
    let out = l.tick(&p);
    assert!(out.ok_commands().any(|c| *c == RobotCommand::GimbalAngles(GimbalAngles { yaw, pitch: l.sim.gimbal.pitch })));
    assert_eq!(l.sim.gimbal.yaw, yaw);

    p.left_controller.as_mut().unwrap().axis_x = 3.0;
    let out = step(&p, &l.teleop, &l.cfg, &l.robot, &l.sim.chains);
    assert!(out.commands.iter().any(Result::is_err));
}

#[test]
fn identity_convention_passes_poses_through() {
    let mut l = Loop::new();
    l.cfg.convention = FrameConvention::Identity;
    let a = Pose::from_translation(0.0, 0.0, 0.0);
    l.tick(&packet(a, 1.0));
    let anchor = l.ee();
    let out = l.tick(&packet(Pose::from_translation(0.01, 0.0, 0.0), 1.0));
    let t = arm_target(&out).unwrap();
    assert!((t.position - anchor.position - Vector3::new(0.01, 0.0, 0.0)).norm() < 1e-15);
}

#[test]
fn step_is_a_pure_function() {
    let l = Loop::new();
    let p = packet(Pose::from_translation(0.1, 1.0, -0.2), 0.95);
    let mut joints = BTreeMap::new();
    joints.insert("arm".to_string(), Configuration::from_slice(&ARM6_HOME));
    let a = step(&p, &l.teleop, &l.cfg, &l.robot, &joints);
    let b = step(&p, &l.teleop, &l.cfg, &l.robot, &joints);
    assert_eq!(a, b);
}

#[test]
fn moving_the_controller_forward_moves_the_arm_forward() {
    let mut l = Loop::new();
    let start = Pose::from_xyz_rpy([0.1, 1.2, -0.4], [0.0, 0.0, 0.0]);
    l.tick(&packet(start, 0.95));
    let anchor = l.ee();
    // XR forward is −z.
    let ahead = Pose::new(start.position + Vector3::new(0.0, 0.0, -0.05), start.orientation);
    let mut target = anchor;
    for _ in 0..180 {
        target = arm_target(&l.tick(&packet(ahead, 0.95))).unwrap();
    }
    assert!((target.position - anchor.position - Vector3::new(0.05, 0.0, 0.0)).norm() < 1e-12);
    assert!(angle_between(&target.orientation, &anchor.orientation) < 1e-12);
    let moved = l.ee().position - anchor.position;
    assert!((moved - Vector3::new(0.05, 0.0, 0.0)).norm() < 1e-3, "{moved:?}");
}

#[test]
fn open_grip_never_commands_the_arm() {
    let mut l = Loop::new();
    let home = l.sim.chains["arm"].clone();
    for i in 0..180 {
        let s = i as f64 / 180.0;
        let device = Pose::from_xyz_rpy([0.1 + 0.2 * s, 1.2 - 0.1 * s, -0.4 - 0.3 * s], [0.5 * s, 0.0, -0.4 * s]);
        let out = l.tick(&packet(device, 0.0));
        assert!(!out.ok_commands().any(|c| matches!(c, RobotCommand::ArmVelocity { .. })), "tick {i}");
    }
    assert_eq!(l.sim.chains["arm"], home);
}
