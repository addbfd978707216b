//! Mapping from tracking packets to robot commands.
//!
//! [`step`] is a pure function of the packet, the previous [`TeleopState`],
//! the configuration and the current joint positions. Each control mode
//! contributes commands independently; a failure in one mode is reported
//! alongside the others instead of aborting the step.
//!
//! Sign conventions (robot frame x forward, y left, z up):
//! - left stick up (`axisY > 0`) drives forward, left stick right
//!   (`axisX > 0`) strafes right (`vy < 0`), right stick right turns
//!   clockwise (`wz < 0`);
//! - gimbal yaw is positive to the left, pitch positive nose-down
//!   (intrinsic Z then Y, roll discarded).

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DVector, Vector3};
use thiserror::Error;

use crate::ik::{
    clutch_engage, clutch_release, clutched_target, solve_dik, ClutchState, ConstraintSet, IkError, IkParams, Task,
};
use crate::kinematics::{Configuration, JointLimits, KinematicChain, KinematicsError, RowSelection};
use crate::pose::Pose;
use crate::protocol::{xr_to_robot, FrameConvention, HandMode, Side, TrackingPacket, TrackingStatus};
use crate::retarget::{solve_retarget, RetargetError, RetargetMap, RetargetParams, RetargetState};

/// Radial deadzone of the left stick and scalar deadzone of the right X axis.
pub const STICK_DEADZONE: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Error)]
pub enum TeleopError {
    #[error("{field} = {value} outside [-1, 1]")]
    RangeViolation { field: &'static str, value: f64 },
    #[error("head tracking is unreliable")]
    UnreliableTracking,
    #[error("unknown chain `{0}`")]
    UnknownChain(String),
    #[error("no joint state for chain `{0}`")]
    MissingJointState(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Ik(#[from] IkError),
    #[error(transparent)]
    Retarget(#[from] RetargetError),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BaseLimits {
    /// m/s
    pub v_max: f64,
    /// rad/s
    pub w_max: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GimbalLimits {
    pub yaw: JointLimits,
    pub pitch: JointLimits,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BaseVelocity {
    pub vx: f64,
    pub vy: f64,
    pub wz: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GimbalAngles {
    pub yaw: f64,
    pub pitch: f64,
}

/// Trigger-to-gripper response.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub enum GripperCurve {
    #[default]
    Linear,
    /// `trigger^gamma`
    Gamma(f64),
    /// 0 below the threshold, 1 at or above.
    Threshold(f64),
}

impl GripperCurve {
    pub fn apply(&self, trigger: f64) -> f64 {
        let t = if trigger.is_nan() { 0.0 } else { trigger.clamp(0.0, 1.0) };
        let v = match *self {
            GripperCurve::Linear => t,
            GripperCurve::Gamma(g) => t.powf(g),
            GripperCurve::Threshold(th) => {
                if t >= th {
                    1.0
                } else {
                    0.0
                }
            }
        };
        if v.is_nan() {
            0.0
        } else {
            v.clamp(0.0, 1.0)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum RobotCommand {
    ArmVelocity {
        chain: String,
        qdot: DVector<f64>,
        /// Task frame and the target it is driven toward.
        targets: Vec<(String, Pose)>,
    },
    HandConfig {
        chain: String,
        q: Configuration,
    },
    BaseVelocity(BaseVelocity),
    GimbalAngles(GimbalAngles),
    Gripper {
        side: Side,
        value: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CommandKind {
    Arm,
    Hand,
    Base,
    Gimbal,
    Gripper,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CommandFailure {
    pub kind: CommandKind,
    pub target: String,
    pub error: TeleopError,
}

pub type CommandOutcome = Result<RobotCommand, CommandFailure>;

/// Named kinematic chains making up one robot.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Robot {
    chains: BTreeMap<String, KinematicChain>,
}

impl Robot {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_chain(mut self, id: &str, chain: KinematicChain) -> Self {
        self.chains.insert(id.to_string(), chain);
        self
    }

    pub fn insert(&mut self, id: &str, chain: KinematicChain) {
        self.chains.insert(id.to_string(), chain);
    }

    pub fn chain(&self, id: &str) -> Option<&KinematicChain> {
        self.chains.get(id)
    }

    pub fn chains(&self) -> impl Iterator<Item = (&String, &KinematicChain)> {
        self.chains.iter()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArmMapping {
    pub side: Side,
    pub chain: String,
    pub ee_frame: String,
    pub rows: RowSelection,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrackerMapping {
    pub serial: String,
    pub chain: String,
    pub frame: String,
    pub weight: f64,
    /// Added to the tracker position (robot frame) to form the target.
    pub offset: Vector3<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HandMapping {
    pub side: Side,
    pub chain: String,
    pub map: RetargetMap,
    pub params: RetargetParams,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TeleopConfig {
    pub convention: FrameConvention,
    pub arms: Vec<ArmMapping>,
    pub trackers: Vec<TrackerMapping>,
    pub hands: Vec<HandMapping>,
    pub base: Option<BaseLimits>,
    pub gimbal: Option<GimbalLimits>,
    pub grippers: Vec<Side>,
    pub gripper_curve: GripperCurve,
    pub ik: IkParams,
    /// Seconds used to turn joint position limits into velocity bounds.
    pub limit_horizon: f64,
    /// Grip level that engages the clutch.
    pub engage_threshold: f64,
    /// Grip level at or below which an engaged clutch releases.
    pub release_threshold: f64,
}

impl Default for TeleopConfig {
    fn default() -> Self {
        Self {
            convention: FrameConvention::default(),
            arms: Vec::new(),
            trackers: Vec::new(),
            hands: Vec::new(),
            base: None,
            gimbal: None,
            grippers: Vec::new(),
            gripper_curve: GripperCurve::Linear,
            ik: IkParams::default(),
            limit_horizon: 0.1,
            engage_threshold: 0.9,
            release_threshold: 0.7,
        }
    }
}

impl TeleopConfig {
    pub fn validate(&self, robot: &Robot) -> Result<(), TeleopError> {
        let chain = |id: &str| robot.chain(id).ok_or_else(|| TeleopError::UnknownChain(id.into()));
        let frame = |c: &KinematicChain, f: &str| {
            if c.has_frame(f) {
                Ok(())
            } else {
                Err(TeleopError::Kinematics(KinematicsError::UnknownFrame(f.into())))
            }
        };
        for a in &self.arms {
            frame(chain(&a.chain)?, &a.ee_frame)?;
            if !(a.weight > 0.0 && a.weight.is_finite()) || a.rows.is_empty() {
                return Err(TeleopError::InvalidConfig(alloc::format!("arm `{}`: bad weight or rows", a.chain)));
            }
        }
        for t in &self.trackers {
            frame(chain(&t.chain)?, &t.frame)?;
            if t.serial.is_empty() || !(t.weight > 0.0 && t.weight.is_finite()) {
                return Err(TeleopError::InvalidConfig(alloc::format!("tracker `{}`: bad serial or weight", t.serial)));
            }
        }
        for h in &self.hands {
            h.map.validate(chain(&h.chain)?)?;
        }
        if let Some(b) = self.base {
            if !(b.v_max > 0.0 && b.w_max > 0.0) {
                return Err(TeleopError::InvalidConfig("base limits must be positive".into()));
            }
        }
        if let Some(g) = self.gimbal {
            if !(g.yaw.lower < g.yaw.upper && g.pitch.lower < g.pitch.upper) {
                return Err(TeleopError::InvalidConfig("gimbal limits must be non-empty ranges".into()));
            }
        }
        if !(self.release_threshold < self.engage_threshold) {
            return Err(TeleopError::InvalidConfig("release threshold must be below engage threshold".into()));
        }
        if !(self.limit_horizon > 0.0) {
            return Err(TeleopError::InvalidConfig("limit horizon must be positive".into()));
        }
        self.ik.validate()?;
        Ok(())
    }
}

/// Per-stream memory carried between [`step`] calls.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TeleopState {
    /// One clutch per entry of [`TeleopConfig::arms`].
    pub clutches: Vec<ClutchState>,
    pub last_gimbal: Option<GimbalAngles>,
    /// Last retargeted configuration per entry of [`TeleopConfig::hands`].
    pub last_hand: Vec<Option<Configuration>>,
}

impl TeleopState {
    pub fn new(cfg: &TeleopConfig) -> Self {
        Self {
            clutches: vec![ClutchState::default(); cfg.arms.len()],
            last_gimbal: None,
            last_hand: vec![None; cfg.hands.len()],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutput {
    pub commands: Vec<CommandOutcome>,
    pub state: TeleopState,
}

impl StepOutput {
    pub fn ok_commands(&self) -> impl Iterator<Item = &RobotCommand> {
        self.commands.iter().filter_map(|c| c.as_ref().ok())
    }
}

/// Joystick axes to base velocity.
pub fn map_joystick_to_base(axis_lx: f64, axis_ly: f64, axis_rx: f64, limits: &BaseLimits) -> Result<BaseVelocity, TeleopError> {
    for (field, v) in [("axisLX", axis_lx), ("axisLY", axis_ly), ("axisRX", axis_rx)] {
        if !(-1.0..=1.0).contains(&v) {
            return Err(TeleopError::RangeViolation { field, value: v });
        }
    }
    let (lx, ly) = if axis_lx.hypot(axis_ly) < STICK_DEADZONE { (0.0, 0.0) } else { (axis_lx, axis_ly) };
    let rx = if axis_rx.abs() < STICK_DEADZONE { 0.0 } else { axis_rx };
    Ok(BaseVelocity {
        vx: ly * limits.v_max,
        vy: -lx * limits.v_max,
        wz: -rx * limits.w_max,
    })
}

/// Yaw and pitch of a robot-frame head orientation; roll is discarded.
pub fn map_head_to_gimbal(head: &Pose, status: TrackingStatus, limits: &GimbalLimits) -> Result<GimbalAngles, TeleopError> {
    if status != TrackingStatus::Reliable {
        return Err(TeleopError::UnreliableTracking);
    }
    let r = head.rotation_matrix();
    let m = r.matrix();
    let yaw = m[(1, 0)].atan2(m[(0, 0)]);
    let pitch = (-m[(2, 0)]).atan2(m[(0, 0)].hypot(m[(1, 0)]));
    Ok(GimbalAngles {
        yaw: limits.yaw.clamp(yaw),
        pitch: limits.pitch.clamp(pitch),
    })
}

/// Advance teleoperation by one tracking packet.
///
/// `joints` holds the current configuration of every chain referenced by the
/// configuration. Arms on the same chain are solved jointly in one QP.
pub fn step(
    packet: &TrackingPacket,
    state: &TeleopState,
    cfg: &TeleopConfig,
    robot: &Robot,
    joints: &BTreeMap<String, Configuration>,
) -> StepOutput {
    let mut next = state.clone();
    next.clutches.resize(cfg.arms.len(), ClutchState::default());
    next.last_hand.resize(cfg.hands.len(), None);
    let mut commands = Vec::new();

    arm_commands(packet, cfg, robot, joints, &mut next, &mut commands);
    hand_commands(packet, cfg, robot, joints, &mut next, &mut commands);

    if let Some(limits) = &cfg.base {
        if packet.left_controller.is_some() || packet.right_controller.is_some() {
            let (lx, ly) = packet.left_controller.as_ref().map_or((0.0, 0.0), |c| (c.axis_x, c.axis_y));
            let rx = packet.right_controller.as_ref().map_or(0.0, |c| c.axis_x);
            commands.push(
                map_joystick_to_base(lx, ly, rx, limits)
                    .map(RobotCommand::BaseVelocity)
                    .map_err(|error| CommandFailure { kind: CommandKind::Base, target: "base".into(), error }),
            );
        }
    }

    if let Some(limits) = &cfg.gimbal {
        let head = xr_to_robot(&packet.head.pose, cfg.convention);
        match map_head_to_gimbal(&head, packet.head.status, limits) {
            Ok(angles) => {
                next.last_gimbal = Some(angles);
                commands.push(Ok(RobotCommand::GimbalAngles(angles)));
            }
            Err(TeleopError::UnreliableTracking) => {
                if let Some(held) = next.last_gimbal {
                    commands.push(Ok(RobotCommand::GimbalAngles(held)));
                }
            }
            Err(error) => commands.push(Err(CommandFailure { kind: CommandKind::Gimbal, target: "gimbal".into(), error })),
        }
    }

    for &side in &cfg.grippers {
        if let Some(c) = packet.controller(side) {
            commands.push(Ok(RobotCommand::Gripper { side, value: cfg.gripper_curve.apply(c.trigger) }));
        }
    }

    StepOutput { commands, state: next }
}

fn arm_commands(
    packet: &TrackingPacket,
    cfg: &TeleopConfig,
    robot: &Robot,
    joints: &BTreeMap<String, Configuration>,
    next: &mut TeleopState,
    commands: &mut Vec<CommandOutcome>,
) {
    // Clutch transitions first, then one solve per chain with engaged arms.
    let mut per_chain: BTreeMap<&str, Vec<(String, Pose, RowSelection, f64)>> = BTreeMap::new();
    for (i, arm) in cfg.arms.iter().enumerate() {
        let fail = |error| CommandFailure { kind: CommandKind::Arm, target: arm.chain.clone(), error };
        let Some(controller) = packet.controller(arm.side) else {
            next.clutches[i] = clutch_release(next.clutches[i]);
            continue;
        };
        let device = xr_to_robot(&controller.pose, cfg.convention);
        let clutch = next.clutches[i];
        if clutch.is_engaged() && controller.grip <= cfg.release_threshold {
            next.clutches[i] = clutch_release(clutch);
        } else if !clutch.is_engaged() && controller.grip >= cfg.engage_threshold {
            let ee = match current_pose(robot, joints, &arm.chain, &arm.ee_frame) {
                Ok(p) => p,
                Err(e) => {
                    commands.push(Err(fail(e)));
                    continue;
                }
            };
            next.clutches[i] = clutch_engage(clutch, device, ee);
        }
        if let Some(target) = clutched_target(&next.clutches[i], &device) {
            per_chain.entry(arm.chain.as_str()).or_default().push((arm.ee_frame.clone(), target, arm.rows, arm.weight));
        }
    }

    for (chain_id, arm_tasks) in per_chain {
        let result = (|| -> Result<RobotCommand, TeleopError> {
            let chain = robot.chain(chain_id).ok_or_else(|| TeleopError::UnknownChain(chain_id.into()))?;
            let q = joints.get(chain_id).ok_or_else(|| TeleopError::MissingJointState(chain_id.into()))?;
            let mut tasks: Vec<Task> = arm_tasks
                .iter()
                .map(|(frame, target, rows, w)| Task::pose(frame, *target, *w).with_rows(*rows))
                .collect();
            for t in cfg.trackers.iter().filter(|t| t.chain == chain_id) {
                if let Some(m) = packet.trackers.iter().find(|m| m.serial == t.serial) {
                    let p = xr_to_robot(&m.pose, cfg.convention).position + t.offset;
                    tasks.push(Task::position(&t.frame, p, t.weight));
                }
            }
            let constraints = ConstraintSet::from_chain(chain, cfg.limit_horizon);
            let sol = solve_dik(chain, q, &tasks, &constraints, &cfg.ik)?;
            Ok(RobotCommand::ArmVelocity {
                chain: chain_id.into(),
                qdot: sol.qdot,
                targets: arm_tasks.into_iter().map(|(f, t, _, _)| (f, t)).collect(),
            })
        })();
        commands.push(result.map_err(|error| CommandFailure { kind: CommandKind::Arm, target: chain_id.into(), error }));
    }
}

fn hand_commands(
    packet: &TrackingPacket,
    cfg: &TeleopConfig,
    robot: &Robot,
    joints: &BTreeMap<String, Configuration>,
    next: &mut TeleopState,
    commands: &mut Vec<CommandOutcome>,
) {
    if packet.head.hand_mode != HandMode::Hand {
        return;
    }
    for (i, h) in cfg.hands.iter().enumerate() {
        let frame = packet.hand(h.side).filter(|f| f.is_active);
        let Some(frame) = frame else {
            if let Some(q) = &next.last_hand[i] {
                commands.push(Ok(RobotCommand::HandConfig { chain: h.chain.clone(), q: q.clone() }));
            }
            continue;
        };
        let result = (|| -> Result<Configuration, TeleopError> {
            let chain = robot.chain(&h.chain).ok_or_else(|| TeleopError::UnknownChain(h.chain.clone()))?;
            let q_prev = next.last_hand[i]
                .clone()
                .or_else(|| joints.get(&h.chain).cloned())
                .unwrap_or_else(|| chain.neutral_configuration());
            let state = RetargetState { q_prev, bounds: chain.joint_limits() };
            Ok(solve_retarget(chain, frame, &h.map, &state, &h.params)?.q)
        })();
        match result {
            Ok(q) => {
                next.last_hand[i] = Some(q.clone());
                commands.push(Ok(RobotCommand::HandConfig { chain: h.chain.clone(), q }));
            }
            Err(error) => commands.push(Err(CommandFailure { kind: CommandKind::Hand, target: h.chain.clone(), error })),
        }
    }
}

fn current_pose(
    robot: &Robot,
    joints: &BTreeMap<String, Configuration>,
    chain_id: &str,
    frame: &str,
) -> Result<Pose, TeleopError> {
    let chain = robot.chain(chain_id).ok_or_else(|| TeleopError::UnknownChain(chain_id.into()))?;
    let q = joints.get(chain_id).ok_or_else(|| TeleopError::MissingJointState(chain_id.into()))?;
    Ok(chain.forward_kinematics(q, frame)?)
}
