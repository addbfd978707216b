//! Keypoint-based hand retargeting.
//!
//! For each frame the robot hand configuration solves
//!
//! ```text
//! min_q  Σᵢ ‖α vᵢ − fᵢ(q)‖² + β ‖q − q_prev‖²    s.t.  q_l ≤ q ≤ q_u
//! ```
//!
//! where `vᵢ` is a human keypoint vector (keypoint minus reference keypoint,
//! in the wrist frame, times the tracked hand scale) and `fᵢ(q)` is the
//! matching robot vector (frame origin minus reference frame origin, in the
//! hand chain's base coordinates). The solver is a projected Gauss-Newton
//! method with Levenberg damping, falling back to projected gradient steps
//! when the Gauss-Newton direction fails the Armijo test. It warm-starts at
//! `q_prev` and visits variables in a fixed order, so results are
//! deterministic.

use core::f64::consts::PI;

use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, UnitQuaternion, Vector3};
use thiserror::Error;

use crate::kinematics::{Configuration, JointLimits, KinematicChain, KinematicsError, RowSelection};
use crate::protocol::{hand, HandState, HAND_JOINT_COUNT};

/// Hand tracking sample consumed by the retargeter.
pub type HandFrame = HandState;

#[derive(Clone, Debug, PartialEq, Error)]
pub enum RetargetError {
    #[error("hand frame is not active")]
    InactiveFrame,
    #[error("hand frame has {0} joints, expected 26")]
    MissingJoints(usize),
    #[error("keypoint index {0} out of range")]
    KeypointOutOfRange(usize),
    #[error("retarget map has no pairs")]
    EmptyMap,
    #[error("invalid retarget parameters: {0}")]
    InvalidParams(&'static str),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct KeypointPair {
    pub human_keypoint: usize,
    /// Origin of the human vector, usually [`hand::WRIST`].
    pub reference_keypoint: usize,
    pub robot_frame: String,
    /// Origin of the robot vector; `None` means the chain root.
    pub robot_reference: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RetargetMap {
    pub pairs: Vec<KeypointPair>,
    /// Rotation from the human wrist frame into the robot hand base frame.
    pub wrist_to_robot: UnitQuaternion<f64>,
}

impl RetargetMap {
    pub fn new(pairs: Vec<KeypointPair>) -> Self {
        Self { pairs, wrist_to_robot: UnitQuaternion::identity() }
    }

    pub fn validate(&self, chain: &KinematicChain) -> Result<(), RetargetError> {
        if self.pairs.is_empty() {
            return Err(RetargetError::EmptyMap);
        }
        for p in &self.pairs {
            for k in [p.human_keypoint, p.reference_keypoint] {
                if k >= HAND_JOINT_COUNT {
                    return Err(RetargetError::KeypointOutOfRange(k));
                }
            }
            for f in core::iter::once(p.robot_frame.as_str()).chain(p.robot_reference.as_deref()) {
                if !chain.has_frame(f) {
                    return Err(KinematicsError::UnknownFrame(f.into()).into());
                }
            }
        }
        Ok(())
    }
}

/// Local descents started from the best lattice nodes.
const LATTICE_STARTS: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct RetargetParams {
    /// Human-to-robot size ratio.
    pub alpha: f64,
    /// Weight of the temporal smoothness term.
    pub beta: f64,
    pub max_iters: usize,
    /// Projected-gradient stationarity tolerance.
    pub tol: f64,
    /// Objective evaluations allowed for lattice seeding; the lattice is
    /// skipped when even two points per joint exceed it.
    pub seed_budget: usize,
}

impl Default for RetargetParams {
    fn default() -> Self {
        Self { alpha: 1.0, beta: 0.0, max_iters: 100, tol: 1e-12, seed_budget: 256 }
    }
}

impl RetargetParams {
    fn validate(&self) -> Result<(), RetargetError> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(RetargetError::InvalidParams("alpha must be positive"));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(RetargetError::InvalidParams("beta must be non-negative"));
        }
        if !(self.tol > 0.0) {
            return Err(RetargetError::InvalidParams("tol must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RetargetState {
    pub q_prev: Configuration,
    pub bounds: Vec<JointLimits>,
}

impl RetargetState {
    pub fn new(chain: &KinematicChain) -> Self {
        Self { q_prev: chain.neutral_configuration(), bounds: chain.joint_limits() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RetargetSolution {
    pub q: Configuration,
    pub iterations: usize,
    pub converged: bool,
    pub objective: f64,
    /// `‖q − clamp(q − ∇F)‖∞` at the returned point.
    pub projected_gradient: f64,
}

/// Human keypoint vectors `vᵢ`, one per map pair, in the robot hand base frame.
pub fn keypoint_vectors(frame: &HandFrame, map: &RetargetMap) -> Result<Vec<Vector3<f64>>, RetargetError> {
    if !frame.is_active {
        return Err(RetargetError::InactiveFrame);
    }
    if frame.joints.len() != HAND_JOINT_COUNT {
        return Err(RetargetError::MissingJoints(frame.joints.len()));
    }
    let to_local = map.wrist_to_robot * frame.joints[hand::WRIST].pose.orientation.inverse();
    map.pairs
        .iter()
        .map(|p| {
            let k = frame.joints.get(p.human_keypoint).ok_or(RetargetError::KeypointOutOfRange(p.human_keypoint))?;
            let r = frame
                .joints
                .get(p.reference_keypoint)
                .ok_or(RetargetError::KeypointOutOfRange(p.reference_keypoint))?;
            Ok(to_local * (k.pose.position - r.pose.position) * frame.scale)
        })
        .collect()
}

type VectorsAndJacobians = (Vec<Vector3<f64>>, Vec<DMatrix<f64>>);

/// Robot-side vectors `fᵢ(q)` and their position Jacobians.
fn robot_vectors(
    chain: &KinematicChain,
    map: &RetargetMap,
    q: &Configuration,
) -> Result<VectorsAndJacobians, RetargetError> {
    let poses = chain.link_poses(q)?;
    let root = chain.root_link();
    let mut f = Vec::with_capacity(map.pairs.len());
    let mut jac = Vec::with_capacity(map.pairs.len());
    for p in &map.pairs {
        let frame = chain.link_index(&p.robot_frame).ok_or_else(|| KinematicsError::UnknownFrame(p.robot_frame.clone()))?;
        let reference = p.robot_reference.as_deref().unwrap_or(root);
        let ref_idx = chain.link_index(reference).ok_or_else(|| KinematicsError::UnknownFrame(reference.into()))?;
        f.push(poses[frame].position - poses[ref_idx].position);
        let j = chain.jacobian(q, &p.robot_frame)?.select_rows(RowSelection::POSITION)
            - chain.jacobian(q, reference)?.select_rows(RowSelection::POSITION);
        jac.push(j);
    }
    Ok((f, jac))
}

/// Objective value at `q` for already-computed human vectors.
pub fn retarget_objective(
    chain: &KinematicChain,
    map: &RetargetMap,
    human: &[Vector3<f64>],
    q: &Configuration,
    q_prev: &Configuration,
    params: &RetargetParams,
) -> Result<f64, RetargetError> {
    let (f, _) = robot_vectors(chain, map, q)?;
    Ok(objective_of(&f, human, q, q_prev, params))
}

fn objective_of(
    f: &[Vector3<f64>],
    human: &[Vector3<f64>],
    q: &Configuration,
    q_prev: &Configuration,
    params: &RetargetParams,
) -> f64 {
    let fit: f64 = f.iter().zip(human).map(|(fi, vi)| (vi * params.alpha - fi).norm_squared()).sum();
    fit + params.beta * (q.as_vector() - q_prev.as_vector()).norm_squared()
}

fn project(q: &DVector<f64>, bounds: &[JointLimits]) -> DVector<f64> {
    DVector::from_iterator(q.len(), q.iter().zip(bounds).map(|(v, b)| b.clamp(*v)))
}

pub fn solve_retarget(
    chain: &KinematicChain,
    frame: &HandFrame,
    map: &RetargetMap,
    state: &RetargetState,
    params: &RetargetParams,
) -> Result<RetargetSolution, RetargetError> {
    let human = keypoint_vectors(frame, map)?;
    solve_retarget_vectors(chain, &human, map, state, params)
}

/// Solve for precomputed human vectors (one per map pair).
pub fn solve_retarget_vectors(
    chain: &KinematicChain,
    human: &[Vector3<f64>],
    map: &RetargetMap,
    state: &RetargetState,
    params: &RetargetParams,
) -> Result<RetargetSolution, RetargetError> {
    params.validate()?;
    map.validate(chain)?;
    let n = chain.dof();
    if state.q_prev.len() != n || state.bounds.len() != n {
        return Err(RetargetError::DimensionMismatch { expected: n, got: state.q_prev.len().min(state.bounds.len()) });
    }
    if human.len() != map.pairs.len() {
        return Err(RetargetError::DimensionMismatch { expected: map.pairs.len(), got: human.len() });
    }

    let warm = descend(chain, map, human, state, params, project(state.q_prev.as_vector(), &state.bounds))?;
    let mut best = warm;
    let mut iterations = best.iterations;
    for (seed, _) in lattice_seeds(chain, map, human, state, params)? {
        let sol = descend(chain, map, human, state, params, seed)?;
        iterations += sol.iterations;
        // Ties keep the warm-started solution for temporal continuity.
        if sol.objective < best.objective - 1e-12 * (1.0 + best.objective.abs()) {
            best = sol;
        }
    }
    Ok(RetargetSolution { iterations, ..best })
}

/// Seeds for global search: the [`LATTICE_STARTS`] lowest-objective nodes
/// of a `k`ⁿ lattice spanning the joint box, bounds included, with `k` the
/// largest per-axis count such that `k`ⁿ fits the seed budget. Unbounded
/// axes span ±π around `q_prev`. Sorted by objective.
fn lattice_seeds(
    chain: &KinematicChain,
    map: &RetargetMap,
    human: &[Vector3<f64>],
    state: &RetargetState,
    params: &RetargetParams,
) -> Result<Vec<(DVector<f64>, f64)>, RetargetError> {
    let n = state.bounds.len();
    if n == 0 || params.seed_budget < 2 {
        return Ok(Vec::new());
    }
    let mut k = 1usize;
    while (k + 1).checked_pow(n as u32).is_some_and(|c| c <= params.seed_budget) {
        k += 1;
    }
    if k < 2 {
        return Ok(Vec::new());
    }
    let span: Vec<(f64, f64)> = state
        .bounds
        .iter()
        .enumerate()
        .map(|(j, b)| {
            let lo = if b.lower.is_finite() { b.lower } else { state.q_prev[j] - PI };
            let hi = if b.upper.is_finite() { b.upper } else { state.q_prev[j] + PI };
            (lo, hi)
        })
        .collect();
    let mut best: Vec<(DVector<f64>, f64)> = Vec::with_capacity(LATTICE_STARTS + 1);
    let mut cand = DVector::zeros(n);
    for mut idx in 0..k.pow(n as u32) {
        for (j, &(lo, hi)) in span.iter().enumerate() {
            cand[j] = lo + (idx % k) as f64 / (k - 1) as f64 * (hi - lo);
            idx /= k;
        }
        let qc = Configuration::from_vector(cand.clone());
        let (f, _) = robot_vectors(chain, map, &qc)?;
        let v = objective_of(&f, human, &qc, &state.q_prev, params);
        let at = best.partition_point(|(_, b)| *b <= v);
        if at < LATTICE_STARTS {
            best.insert(at, (cand.clone(), v));
            best.truncate(LATTICE_STARTS);
        }
    }
    Ok(best)
}

/// Projected Gauss-Newton descent from `start`.
fn descend(
    chain: &KinematicChain,
    map: &RetargetMap,
    human: &[Vector3<f64>],
    state: &RetargetState,
    params: &RetargetParams,
    start: DVector<f64>,
) -> Result<RetargetSolution, RetargetError> {
    let n = start.len();
    let q_prev = &state.q_prev;
    let mut q = start;
    let mut mu = 1e-9;
    let mut iterations = 0;
    let (mut value, mut grad, mut gn) = evaluate(chain, map, human, &q, q_prev, params)?;
    let mut pg = projected_gradient(&q, &grad, &state.bounds);

    while iterations < params.max_iters && pg >= params.tol {
        iterations += 1;

        // Variables pinned at a bound with the gradient pushing outward stay put.
        let free: Vec<usize> = (0..n)
            .filter(|&j| {
                let b = state.bounds[j];
                !((q[j] <= b.lower && grad[j] > 0.0) || (q[j] >= b.upper && grad[j] < 0.0))
            })
            .collect();

        let mut accepted = None;
        if !free.is_empty() {
            let mut h = gn.select_rows(free.iter()).select_columns(free.iter());
            for k in 0..free.len() {
                h[(k, k)] += 2.0 * mu;
            }
            if let Some(chol) = h.cholesky() {
                let gf = DVector::from_iterator(free.len(), free.iter().map(|&j| grad[j]));
                let df = chol.solve(&(-gf));
                let mut d = DVector::zeros(n);
                for (k, &j) in free.iter().enumerate() {
                    d[j] = df[k];
                }
                accepted = line_search(chain, map, human, q_prev, params, &state.bounds, &q, value, &grad, &d, 30)?;
            }
        }
        if accepted.is_none() {
            let scale = gn.diagonal().amax().max(1e-12);
            accepted = line_search(chain, map, human, q_prev, params, &state.bounds, &q, value, &grad, &(-&grad / scale), 60)?;
            mu = (mu * 10.0).min(1e6);
        } else {
            mu = (mu * 0.1).max(1e-12);
        }

        match accepted {
            Some(next) => {
                let moved = (&next - &q).amax();
                q = next;
                (value, grad, gn) = evaluate(chain, map, human, &q, q_prev, params)?;
                pg = projected_gradient(&q, &grad, &state.bounds);
                if moved == 0.0 {
                    break;
                }
            }
            // No descent at working precision.
            None => break,
        }
    }

    Ok(RetargetSolution {
        q: Configuration::from_vector(q),
        iterations,
        converged: pg < params.tol,
        objective: value,
        projected_gradient: pg,
    })
}

/// Objective, gradient and Gauss-Newton Hessian `2(ΣJᵀJ + βI)` at `q`.
fn evaluate(
    chain: &KinematicChain,
    map: &RetargetMap,
    human: &[Vector3<f64>],
    q: &DVector<f64>,
    q_prev: &Configuration,
    params: &RetargetParams,
) -> Result<(f64, DVector<f64>, DMatrix<f64>), RetargetError> {
    let n = q.len();
    let qc = Configuration::from_vector(q.clone());
    let (f, jac) = robot_vectors(chain, map, &qc)?;
    let mut grad = (q - q_prev.as_vector()) * (2.0 * params.beta);
    let mut gn = DMatrix::identity(n, n) * (2.0 * params.beta);
    for ((fi, ji), vi) in f.iter().zip(&jac).zip(human) {
        let r = vi * params.alpha - fi;
        grad -= ji.transpose() * r * 2.0;
        gn += ji.transpose() * ji * 2.0;
    }
    Ok((objective_of(&f, human, &qc, q_prev, params), grad, gn))
}

fn projected_gradient(q: &DVector<f64>, grad: &DVector<f64>, bounds: &[JointLimits]) -> f64 {
    (q - project(&(q - grad), bounds)).amax()
}

#[allow(clippy::too_many_arguments)]
fn line_search(
    chain: &KinematicChain,
    map: &RetargetMap,
    human: &[Vector3<f64>],
    q_prev: &Configuration,
    params: &RetargetParams,
    bounds: &[JointLimits],
    q: &DVector<f64>,
    value: f64,
    grad: &DVector<f64>,
    direction: &DVector<f64>,
    max_halvings: usize,
) -> Result<Option<DVector<f64>>, RetargetError> {
    let mut t = 1.0;
    for _ in 0..max_halvings {
        let cand = project(&(q + direction * t), bounds);
        let (f, _) = robot_vectors(chain, map, &Configuration::from_vector(cand.clone()))?;
        let v = objective_of(&f, human, &Configuration::from_vector(cand.clone()), q_prev, params);
        if v <= value + 1e-4 * grad.dot(&(&cand - q)) && v < value {
            // Gauss-Newton steps overshoot or undershoot badly when residuals
            // are large; try the minimizer of the parabola through f(0), f'(0)
            // and f(t).
            let slope = grad.dot(direction);
            let curvature = v - value - slope * t;
            if slope < 0.0 && curvature > 0.0 {
                let t_star = -slope * t * t / (2.0 * curvature);
                if t_star > 0.0 && t_star <= 64.0 * t && t_star != t {
                    let alt = project(&(q + direction * t_star), bounds);
                    let qc = Configuration::from_vector(alt.clone());
                    let (f, _) = robot_vectors(chain, map, &qc)?;
                    if objective_of(&f, human, &qc, q_prev, params) < v {
                        return Ok(Some(alt));
                    }
                }
            }
            return Ok(Some(cand));
        }
        t *= 0.5;
    }
    Ok(None)
}

/// Per-frame retargeting with state threading and freeze-on-loss.
#[derive(Clone, Debug)]
pub struct RetargetStream {
    chain: KinematicChain,
    map: RetargetMap,
    params: RetargetParams,
    state: RetargetState,
}

impl RetargetStream {
    pub fn new(chain: KinematicChain, map: RetargetMap, params: RetargetParams) -> Result<Self, RetargetError> {
        map.validate(&chain)?;
        params.validate()?;
        let state = RetargetState::new(&chain);
        Ok(Self { chain, map, params, state })
    }

    pub fn with_state(mut self, state: RetargetState) -> Self {
        self.state = state;
        self
    }

    pub fn last(&self) -> &Configuration {
        &self.state.q_prev
    }

    /// Retarget one frame. Inactive or malformed frames repeat the previous output.
    pub fn step(&mut self, frame: &HandFrame) -> Configuration {
        if frame.is_active {
            if let Ok(sol) = solve_retarget(&self.chain, frame, &self.map, &self.state, &self.params) {
                self.state.q_prev = sol.q;
            }
        }
        self.state.q_prev.clone()
    }
}

/// Retarget an ordered sequence of frames.
pub fn step_stream(
    chain: &KinematicChain,
    map: &RetargetMap,
    params: &RetargetParams,
    initial: RetargetState,
    frames: &[HandFrame],
) -> Result<Vec<Configuration>, RetargetError> {
    let mut stream = RetargetStream::new(chain.clone(), map.clone(), params.clone())?.with_state(initial);
    Ok(frames.iter().map(|f| stream.step(f)).collect())
}
