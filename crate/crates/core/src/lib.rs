//! Allocation-only kinematics and teleoperation kernel.
//!
//! Everything in this crate is pure computation: chain modeling and forward
//! kinematics, geometric Jacobians and manipulability, a box-constrained QP
//! for differential IK, keypoint-based hand retargeting, the tracking packet
//! data model and the mapping from tracking state to robot commands. IO,
//! file formats and transport live in the `xrteleop` crate.
#![no_std]
#![forbid(unsafe_code)]
// `!(x > 0.0)` is the NaN-rejecting form.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod fixtures;
pub mod ik;
pub mod kinematics;
pub mod pose;
pub mod protocol;
pub mod qp;
pub mod retarget;
pub mod sim;
pub mod teleop;

pub use nalgebra;

pub use ik::{IkParams, IkSolution, IkStatus, Task};
pub use kinematics::{Configuration, Jacobian, JointKind, JointSpec, KinematicChain, RowSelection};
pub use pose::Pose;
pub use protocol::TrackingPacket;
pub use teleop::{Robot, RobotCommand, TeleopConfig, TeleopState};

