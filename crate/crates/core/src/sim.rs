//! Kinematic robot simulation driven by [`RobotCommand`]s.

use alloc::collections::BTreeMap;
use alloc::string::String;

use core::f64::consts::PI;

use thiserror::Error;

use crate::ik::integrate;
use crate::kinematics::{Configuration, KinematicsError};
use crate::teleop::{GimbalAngles, Robot, RobotCommand};

#[derive(Clone, Debug, PartialEq, Error)]
pub enum SimError {
    #[error("time step must be positive and finite")]
    InvalidDt,
    #[error("unknown chain `{0}`")]
    UnknownChain(String),
    #[error("chain `{chain}`: {source}")]
    Dimension { chain: String, source: KinematicsError },
}

/// Planar pose of a mobile base; heading in (−π, π].
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BasePose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimState {
    pub time_ns: u64,
    pub chains: BTreeMap<String, Configuration>,
    pub base: BasePose,
    pub gimbal: GimbalAngles,
    /// Left, right.
    pub grippers: [f64; 2],
}

impl SimState {
    /// Every chain at its neutral configuration, base at the origin.
    pub fn new(robot: &Robot) -> Self {
        Self {
            time_ns: 0,
            chains: robot.chains().map(|(id, c)| (id.clone(), c.neutral_configuration())).collect(),
            base: BasePose::default(),
            gimbal: GimbalAngles::default(),
            grippers: [0.0; 2],
        }
    }
}

/// Wrap an angle into (−π, π].
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a % (2.0 * PI);
    if w <= -PI {
        w += 2.0 * PI;
    } else if w > PI {
        w -= 2.0 * PI;
    }
    w
}

/// Apply `commands` over `dt` seconds.
///
/// Arm velocities integrate with clamping to joint limits, hand
/// configurations are applied directly (clamped), the base integrates body
/// velocities rotated by the heading at the start of the step, and gimbal
/// and gripper commands are set points.
pub fn sim_step(state: &SimState, commands: &[RobotCommand], dt: f64, robot: &Robot) -> Result<SimState, SimError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(SimError::InvalidDt);
    }
    let mut next = state.clone();
    next.time_ns = state.time_ns + (dt * 1e9).round() as u64;
    for cmd in commands {
        match cmd {
            RobotCommand::ArmVelocity { chain, qdot, .. } => {
                let c = robot.chain(chain).ok_or_else(|| SimError::UnknownChain(chain.clone()))?;
                let q = next.chains.get(chain).ok_or_else(|| SimError::UnknownChain(chain.clone()))?;
                let (q, _) = integrate(q, qdot, dt, &c.joint_limits())
                    .map_err(|source| SimError::Dimension { chain: chain.clone(), source })?;
                next.chains.insert(chain.clone(), q);
            }
            RobotCommand::HandConfig { chain, q } => {
                let c = robot.chain(chain).ok_or_else(|| SimError::UnknownChain(chain.clone()))?;
                if q.len() != c.dof() {
                    return Err(SimError::Dimension {
                        chain: chain.clone(),
                        source: KinematicsError::DimensionMismatch { expected: c.dof(), got: q.len() },
                    });
                }
                let clamped: alloc::vec::Vec<f64> =
                    c.joint_limits().iter().zip(q.as_slice()).map(|(l, v)| l.clamp(*v)).collect();
                next.chains.insert(chain.clone(), Configuration::from(clamped));
            }
            RobotCommand::BaseVelocity(v) => {
                let (s, c) = state.base.heading.sin_cos();
                next.base.x = state.base.x + (v.vx * c - v.vy * s) * dt;
                next.base.y = state.base.y + (v.vx * s + v.vy * c) * dt;
                next.base.heading = wrap_angle(state.base.heading + v.wz * dt);
            }
            RobotCommand::GimbalAngles(g) => next.gimbal = *g,
            RobotCommand::Gripper { side, value } => next.grippers[side.index()] = value.clamp(0.0, 1.0),
        }
    }
    Ok(next)
}
