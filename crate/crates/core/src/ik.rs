//! Differential inverse kinematics as a weighted least-squares QP.
//!
//! Each control step solves, over joint velocities `q̇`,
//!
//! ```text
//! min  Σ wᵢ ‖Jᵢ q̇ + eᵢ‖²  +  λ ‖q̇‖²  −  k ∇m·q̇
//! s.t. l ≤ q̇ ≤ u
//! ```
//!
//! with `eᵢ = −err(current, target) / dt`, so that `Jᵢ q̇ = −eᵢ` moves the
//! task frame onto its target in one period. `m` is the manipulability of a
//! configurable frame, `λ` is floored at [`MIN_DAMPING`] to keep the Hessian
//! positive definite, and the box combines velocity limits with position
//! limits shrunk over a horizon: `u = min(v̄, (q_max − q)/h)`,
//! `l = max(−v̄, (q_min − q)/h)`.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, UnitQuaternion, Vector3};
use thiserror::Error;

use crate::kinematics::{
    manipulability_gradient, Configuration, JointLimits, KinematicChain, KinematicsError, RowSelection,
};
use crate::pose::{renormalize, rotation_log, Pose};
use crate::qp::{solve_box_qp, QpError};

/// Damping floor added to the Hessian diagonal.
pub const MIN_DAMPING: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Error)]
pub enum IkError {
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error("constraint set sized for {expected} joints, chain has {got}")]
    ConstraintSize { expected: usize, got: usize },
    #[error("invalid task `{0}`: weight must be finite and positive, rows non-empty")]
    InvalidTask(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(&'static str),
    #[error(transparent)]
    Qp(#[from] QpError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TaskKind {
    FramePose,
    /// Position-only; orientation rows are ignored.
    FramePosition,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Task {
    pub frame: String,
    pub target: Pose,
    pub weight: f64,
    pub rows: RowSelection,
    pub kind: TaskKind,
}

impl Task {
    pub fn pose(frame: &str, target: Pose, weight: f64) -> Self {
        Self {
            frame: frame.to_string(),
            target,
            weight,
            rows: RowSelection::ALL,
            kind: TaskKind::FramePose,
        }
    }

    pub fn position(frame: &str, target: Vector3<f64>, weight: f64) -> Self {
        Self {
            frame: frame.to_string(),
            target: Pose::new(target, UnitQuaternion::identity()),
            weight,
            rows: RowSelection::POSITION,
            kind: TaskKind::FramePosition,
        }
    }

    pub fn with_rows(mut self, rows: RowSelection) -> Self {
        self.rows = rows;
        self
    }

    pub fn effective_rows(&self) -> RowSelection {
        match self.kind {
            TaskKind::FramePose => self.rows,
            TaskKind::FramePosition => self.rows.intersect(RowSelection::POSITION),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConstraintSet {
    pub joint_limits: Vec<JointLimits>,
    pub velocity_limits: Vec<f64>,
    /// Seconds over which a position limit may be approached.
    pub limit_horizon: f64,
}

impl ConstraintSet {
    pub fn from_chain(chain: &KinematicChain, limit_horizon: f64) -> Self {
        Self {
            joint_limits: chain.joint_limits(),
            velocity_limits: chain.velocity_limits(),
            limit_horizon,
        }
    }

    pub fn unbounded(dof: usize) -> Self {
        Self {
            joint_limits: alloc::vec![JointLimits::UNBOUNDED; dof],
            velocity_limits: alloc::vec![f64::INFINITY; dof],
            limit_horizon: 1.0,
        }
    }

    /// Velocity box at `q`. Variables whose shrunk bounds cross are returned
    /// in the second slot and pinned to `[0, 0]`.
    pub fn velocity_bounds(&self, q: &Configuration) -> (DVector<f64>, DVector<f64>, Vec<usize>) {
        let n = q.len();
        let mut lo = DVector::zeros(n);
        let mut hi = DVector::zeros(n);
        let mut relaxed = Vec::new();
        for j in 0..n {
            let v = self.velocity_limits[j];
            let lim = self.joint_limits[j];
            let l = (-v).max((lim.lower - q[j]) / self.limit_horizon);
            let u = v.min((lim.upper - q[j]) / self.limit_horizon);
            if l > u {
                relaxed.push(j);
            } else {
                lo[j] = l;
                hi[j] = u;
            }
        }
        (lo, hi, relaxed)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IkParams {
    /// Tikhonov weight on ‖q̇‖², floored at [`MIN_DAMPING`].
    pub damping: f64,
    pub manipulability_weight: f64,
    /// Frame whose manipulability is maximized; `None` uses the first task's frame.
    pub manipulability_frame: Option<String>,
    pub manipulability_rows: RowSelection,
    /// Control period in seconds.
    pub dt: f64,
    /// Per-task residual norm is clamped to `max_task_speed · dt` before solving.
    pub max_task_speed: f64,
}

impl Default for IkParams {
    fn default() -> Self {
        Self {
            damping: 1e-6,
            manipulability_weight: 0.0,
            manipulability_frame: None,
            manipulability_rows: RowSelection::POSITION,
            dt: 1.0 / 90.0,
            max_task_speed: f64::INFINITY,
        }
    }
}

impl IkParams {
    pub fn validate(&self) -> Result<(), IkError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(IkError::InvalidParams("dt must be positive"));
        }
        if !(self.damping >= 0.0 && self.damping.is_finite()) {
            return Err(IkError::InvalidParams("damping must be finite and non-negative"));
        }
        if !(self.manipulability_weight >= 0.0 && self.manipulability_weight.is_finite()) {
            return Err(IkError::InvalidParams("manipulability weight must be finite and non-negative"));
        }
        if self.max_task_speed.is_nan() || self.max_task_speed <= 0.0 {
            return Err(IkError::InvalidParams("max_task_speed must be positive"));
        }
        Ok(())
    }

    pub fn effective_damping(&self) -> f64 {
        self.damping.max(MIN_DAMPING)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IkStatus {
    Optimal,
    /// At least one task residual was shortened by `max_task_speed`.
    Clipped,
    /// Crossed velocity bounds were pinned to zero for some joints.
    InfeasibleRelaxed,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IkSolution {
    pub qdot: DVector<f64>,
    /// Achieved value of the full objective, constant terms included.
    pub objective: f64,
    pub active_constraints: Vec<usize>,
    pub status: IkStatus,
    /// Joints whose bounds were infeasible and pinned to zero.
    pub relaxed: Vec<usize>,
    pub kkt_residual: f64,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

/// Task-space error `target − current` restricted to `rows`.
///
/// Position rows are the translation difference; orientation rows are the
/// world-frame rotation vector of `target · current⁻¹`. When `max_norm` is
/// given the whole vector is scaled down to that norm.
pub fn pose_error(current: &Pose, target: &Pose, rows: RowSelection, max_norm: Option<f64>) -> DVector<f64> {
    let dp = target.position - current.position;
    let dr = rotation_log(&renormalize(target.orientation * current.orientation.inverse()));
    let full = [dp.x, dp.y, dp.z, dr.x, dr.y, dr.z];
    let mut e = DVector::from_iterator(rows.count(), rows.rows().map(|r| full[r]));
    if let Some(max) = max_norm {
        let n = e.norm();
        if n > max {
            e *= max / n;
        }
    }
    e
}

/// One weighted least-squares block, `wᵢ‖Jᵢ q̇ + eᵢ‖²`.
struct TaskBlock {
    jacobian: DMatrix<f64>,
    residual: DVector<f64>,
    weight: f64,
}

pub fn solve_dik(
    chain: &KinematicChain,
    q: &Configuration,
    tasks: &[Task],
    constraints: &ConstraintSet,
    params: &IkParams,
) -> Result<IkSolution, IkError> {
    params.validate()?;
    let n = chain.dof();
    if q.len() != n {
        return Err(KinematicsError::DimensionMismatch { expected: n, got: q.len() }.into());
    }
    if constraints.joint_limits.len() != n || constraints.velocity_limits.len() != n {
        return Err(IkError::ConstraintSize { expected: constraints.joint_limits.len(), got: n });
    }
    if !(constraints.limit_horizon > 0.0) {
        return Err(IkError::InvalidParams("limit horizon must be positive"));
    }

    let mut clipped = false;
    let mut blocks = Vec::with_capacity(tasks.len());
    for task in tasks {
        let rows = task.effective_rows();
        if !(task.weight.is_finite() && task.weight > 0.0) || rows.is_empty() {
            return Err(IkError::InvalidTask(task.frame.clone()));
        }
        let current = chain.forward_kinematics(q, &task.frame)?;
        let raw = pose_error(&current, &task.target, rows, None);
        let max = params.max_task_speed * params.dt;
        let err = if raw.norm() > max {
            clipped = true;
            &raw * (max / raw.norm())
        } else {
            raw
        };
        blocks.push(TaskBlock {
            jacobian: chain.jacobian(q, &task.frame)?.select_rows(rows),
            residual: -err / params.dt,
            weight: task.weight,
        });
    }

    let manip_grad = if params.manipulability_weight > 0.0 {
        let frame = match (&params.manipulability_frame, tasks.first()) {
            (Some(f), _) => f.as_str(),
            (None, Some(t)) => t.frame.as_str(),
            (None, None) => return Err(IkError::InvalidParams("manipulability needs a frame or a task")),
        };
        Some(manipulability_gradient(chain, q, frame, params.manipulability_rows)?)
    } else {
        None
    };

    let lambda = params.effective_damping();
    // ½ q̇ᵀ H q̇ + gᵀ q̇ with H = 2(Σ w JᵀJ + λI), g = 2 Σ w Jᵀe − k∇m.
    let mut h = DMatrix::<f64>::identity(n, n) * (2.0 * lambda);
    let mut g = DVector::<f64>::zeros(n);
    let mut constant = 0.0;
    for b in &blocks {
        h += b.jacobian.transpose() * &b.jacobian * (2.0 * b.weight);
        g += b.jacobian.transpose() * &b.residual * (2.0 * b.weight);
        constant += b.weight * b.residual.norm_squared();
    }
    if let Some(grad) = &manip_grad {
        g -= grad * params.manipulability_weight;
    }

    let (lower, upper, relaxed) = constraints.velocity_bounds(q);
    let qp = solve_box_qp(&h, &g, &lower, &upper)?;

    let status = if !relaxed.is_empty() {
        IkStatus::InfeasibleRelaxed
    } else if clipped {
        IkStatus::Clipped
    } else {
        IkStatus::Optimal
    };
    Ok(IkSolution {
        objective: qp.value + constant,
        active_constraints: qp.active.into_iter().filter(|j| !relaxed.contains(j)).collect(),
        qdot: qp.x,
        status,
        relaxed,
        kkt_residual: qp.kkt_residual,
        lower,
        upper,
    })
}

/// Value of the IK objective at an arbitrary `qdot`; used to compare
/// solutions against external oracles.
pub fn dik_objective(
    chain: &KinematicChain,
    q: &Configuration,
    tasks: &[Task],
    params: &IkParams,
    qdot: &DVector<f64>,
) -> Result<f64, IkError> {
    let mut total = params.effective_damping() * qdot.norm_squared();
    for task in tasks {
        let rows = task.effective_rows();
        let current = chain.forward_kinematics(q, &task.frame)?;
        let err = pose_error(&current, &task.target, rows, Some(params.max_task_speed * params.dt));
        let j = chain.jacobian(q, &task.frame)?.select_rows(rows);
        total += task.weight * (j * qdot - err / params.dt).norm_squared();
    }
    if params.manipulability_weight > 0.0 {
        let frame = params
            .manipulability_frame
            .as_deref()
            .or_else(|| tasks.first().map(|t| t.frame.as_str()))
            .ok_or(IkError::InvalidParams("manipulability needs a frame or a task"))?;
        let grad = manipulability_gradient(chain, q, frame, params.manipulability_rows)?;
        total -= params.manipulability_weight * grad.dot(qdot);
    }
    Ok(total)
}

/// `q + q̇·dt`, clamped into `limits`. Returns the indices that were clamped.
pub fn integrate(
    q: &Configuration,
    qdot: &DVector<f64>,
    dt: f64,
    limits: &[JointLimits],
) -> Result<(Configuration, Vec<usize>), KinematicsError> {
    if qdot.len() != q.len() || limits.len() != q.len() {
        return Err(KinematicsError::DimensionMismatch { expected: q.len(), got: qdot.len().min(limits.len()) });
    }
    let mut clamped = Vec::new();
    let next: Vec<f64> = (0..q.len())
        .map(|j| {
            let v = q[j] + qdot[j] * dt;
            let c = limits[j].clamp(v);
            if c != v {
                clamped.push(j);
            }
            c
        })
        .collect();
    Ok((Configuration::from(next), clamped))
}

/// Grip-gated relative-motion anchor.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ClutchState {
    anchors: Option<(Pose, Pose)>,
}

impl ClutchState {
    pub fn is_engaged(&self) -> bool {
        self.anchors.is_some()
    }

    pub fn anchor_device(&self) -> Option<&Pose> {
        self.anchors.as_ref().map(|(d, _)| d)
    }

    pub fn anchor_ee(&self) -> Option<&Pose> {
        self.anchors.as_ref().map(|(_, e)| e)
    }
}

/// Engage the clutch, capturing device and end-effector poses. Re-engaging an
/// engaged clutch keeps the original anchors.
pub fn clutch_engage(state: ClutchState, device: Pose, ee: Pose) -> ClutchState {
    if state.is_engaged() {
        state
    } else {
        ClutchState { anchors: Some((device, ee)) }
    }
}

pub fn clutch_release(_state: ClutchState) -> ClutchState {
    ClutchState::default()
}

/// End-effector target from device displacement since engage, assuming the
/// device and robot frames are already aligned.
pub fn clutched_target(state: &ClutchState, device_now: &Pose) -> Option<Pose> {
    clutched_target_aligned(state, device_now, &UnitQuaternion::identity())
}

/// Like [`clutched_target`], with the device translation rotated by
/// `alignment` into the robot frame.
pub fn clutched_target_aligned(
    state: &ClutchState,
    device_now: &Pose,
    alignment: &UnitQuaternion<f64>,
) -> Option<Pose> {
    let (anchor_device, anchor_ee) = state.anchors.as_ref()?;
    if device_now == anchor_device {
        return Some(*anchor_ee);
    }
    let displacement = alignment * (device_now.position - anchor_device.position);
    let delta = renormalize(device_now.orientation * anchor_device.orientation.inverse());
    Some(Pose {
        position: anchor_ee.position + displacement,
        orientation: renormalize(delta * anchor_ee.orientation),
    })
}
