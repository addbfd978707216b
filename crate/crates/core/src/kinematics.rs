//! Kinematic trees, forward kinematics, geometric Jacobians and manipulability.
//!
//! A chain is a rooted tree of links connected by joints, in the style of the
//! common robot-description format: each joint names a parent link and a child
//! link, carries a fixed `origin` transform from the parent link frame to the
//! joint frame, and moves the child about (or along) its `axis`. Serial arms
//! and branched models such as dual arms or hands use the same type.
//!
//! Configuration vectors list the values of non-fixed joints in the order the
//! joints were given to [`KinematicChain::new`].

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Index;

use nalgebra::{DMatrix, DVector, Vector3};
use thiserror::Error;

use crate::pose::{quat_from_axis_angle, Pose};

#[derive(Clone, Debug, PartialEq, Error)]
pub enum KinematicsError {
    #[error("joint `{joint}` references undeclared link `{link}`")]
    DanglingReference { joint: String, link: String },
    #[error("link graph is not a rooted tree: {0}")]
    CyclicStructure(String),
    #[error("duplicate {kind} name `{name}`")]
    DuplicateName { kind: &'static str, name: String },
    #[error("joint `{0}` has a zero or non-finite axis")]
    InvalidAxis(String),
    #[error("joint `{0}` has invalid limits")]
    InvalidLimits(String),
    #[error("unknown frame `{0}`")]
    UnknownFrame(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("configuration contains a non-finite value")]
    NonFinite,
}

pub type Result<T> = core::result::Result<T, KinematicsError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum JointKind {
    Revolute,
    Prismatic,
    Fixed,
}

impl JointKind {
    pub fn as_str(self) -> &'static str {
        match self {
            JointKind::Revolute => "revolute",
            JointKind::Prismatic => "prismatic",
            JointKind::Fixed => "fixed",
        }
    }
}

/// Position bounds of one joint, in radians or meters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JointLimits {
    pub lower: f64,
    pub upper: f64,
}

impl JointLimits {
    pub const UNBOUNDED: JointLimits = JointLimits {
        lower: f64::NEG_INFINITY,
        upper: f64::INFINITY,
    };

    pub fn new(lower: f64, upper: f64) -> Self {
        Self { lower, upper }
    }

    pub fn clamp(&self, v: f64) -> f64 {
        v.max(self.lower).min(self.upper)
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lower <= v && v <= self.upper
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct JointSpec {
    pub name: String,
    pub kind: JointKind,
    pub parent: String,
    pub child: String,
    /// Motion axis in the joint frame. Ignored for fixed joints.
    pub axis: Vector3<f64>,
    /// Parent link frame to joint frame.
    pub origin: Pose,
    pub limits: JointLimits,
    /// Speed bound, rad/s or m/s. `f64::INFINITY` when unspecified.
    pub velocity_limit: f64,
}

impl JointSpec {
    pub fn revolute(name: &str, parent: &str, child: &str, origin: Pose, axis: Vector3<f64>) -> Self {
        Self::new(name, JointKind::Revolute, parent, child, origin, axis)
    }

    pub fn prismatic(name: &str, parent: &str, child: &str, origin: Pose, axis: Vector3<f64>) -> Self {
        Self::new(name, JointKind::Prismatic, parent, child, origin, axis)
    }

    pub fn fixed(name: &str, parent: &str, child: &str, origin: Pose) -> Self {
        Self::new(name, JointKind::Fixed, parent, child, origin, Vector3::x())
    }

    pub fn new(
        name: &str,
        kind: JointKind,
        parent: &str,
        child: &str,
        origin: Pose,
        axis: Vector3<f64>,
    ) -> Self {
        Self {
            name: name.to_string(),
            kind,
            parent: parent.to_string(),
            child: child.to_string(),
            axis,
            origin,
            limits: JointLimits::UNBOUNDED,
            velocity_limit: f64::INFINITY,
        }
    }

    pub fn with_limits(mut self, lower: f64, upper: f64) -> Self {
        self.limits = JointLimits::new(lower, upper);
        self
    }

    pub fn with_velocity_limit(mut self, v: f64) -> Self {
        self.velocity_limit = v;
        self
    }

    pub fn is_fixed(&self) -> bool {
        self.kind == JointKind::Fixed
    }

    /// Transform contributed by the joint's own motion at value `v`.
    fn motion(&self, v: f64) -> Pose {
        match self.kind {
            JointKind::Fixed => Pose::identity(),
            JointKind::Revolute => Pose::new(Vector3::zeros(), quat_from_axis_angle(&self.axis, v)),
            JointKind::Prismatic => Pose::new(self.axis * v, Default::default()),
        }
    }
}

/// Joint values for the non-fixed joints of a chain.
#[derive(Clone, Debug, PartialEq)]
pub struct Configuration(DVector<f64>);

impl Configuration {
    pub fn zeros(dof: usize) -> Self {
        Self(DVector::zeros(dof))
    }

    pub fn from_slice(values: &[f64]) -> Self {
        Self(DVector::from_column_slice(values))
    }

    pub fn from_vector(values: DVector<f64>) -> Self {
        Self(values)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        self.0.as_mut_slice()
    }

    pub fn into_vector(self) -> DVector<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl Index<usize> for Configuration {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl From<Vec<f64>> for Configuration {
    fn from(v: Vec<f64>) -> Self {
        Self(DVector::from_vec(v))
    }
}

/// Subset of the six task-space rows `[vx vy vz wx wy wz]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct RowSelection(u8);

impl RowSelection {
    pub const POSITION: RowSelection = RowSelection(0b000_111);
    pub const ORIENTATION: RowSelection = RowSelection(0b111_000);
    pub const ALL: RowSelection = RowSelection(0b111_111);
    /// Planar position rows (x, y).
    pub const XY: RowSelection = RowSelection(0b000_011);
    pub const NONE: RowSelection = RowSelection(0);

    pub fn from_rows(rows: &[usize]) -> Self {
        RowSelection(rows.iter().filter(|&&r| r < 6).fold(0, |m, &r| m | (1 << r)))
    }

    pub fn from_bits(bits: u8) -> Self {
        RowSelection(bits & 0b111_111)
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    pub fn contains(self, row: usize) -> bool {
        row < 6 && self.0 & (1 << row) != 0
    }

    pub fn count(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn intersect(self, other: RowSelection) -> RowSelection {
        RowSelection(self.0 & other.0)
    }

    pub fn rows(self) -> impl Iterator<Item = usize> {
        (0..6).filter(move |&r| self.contains(r))
    }
}

/// World-frame geometric Jacobian of one frame, rows `[v; ω]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Jacobian {
    pub matrix: DMatrix<f64>,
    pub frame: String,
}

impl Jacobian {
    pub fn select_rows(&self, rows: RowSelection) -> DMatrix<f64> {
        let idx: Vec<usize> = rows.rows().collect();
        self.matrix.select_rows(idx.iter())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KinematicChain {
    name: String,
    links: Vec<String>,
    joints: Vec<JointSpec>,
    root: usize,
    joint_parent: Vec<usize>,
    joint_child: Vec<usize>,
    link_parent_joint: Vec<Option<usize>>,
    /// Joint indices, parents before children.
    order: Vec<usize>,
    dof_index: Vec<Option<usize>>,
    dof: usize,
}

impl KinematicChain {
    /// Build and validate a chain from declared links and joints.
    pub fn new(name: &str, links: Vec<String>, mut joints: Vec<JointSpec>) -> Result<Self> {
        for (i, l) in links.iter().enumerate() {
            if links[..i].contains(l) {
                return Err(KinematicsError::DuplicateName { kind: "link", name: l.clone() });
            }
        }
        let find = |name: &str| links.iter().position(|l| l == name);

        let mut joint_parent = Vec::with_capacity(joints.len());
        let mut joint_child = Vec::with_capacity(joints.len());
        let mut link_parent_joint = vec![None; links.len()];
        for (j, spec) in joints.iter_mut().enumerate() {
            let p = find(&spec.parent).ok_or_else(|| KinematicsError::DanglingReference {
                joint: spec.name.clone(),
                link: spec.parent.clone(),
            })?;
            let c = find(&spec.child).ok_or_else(|| KinematicsError::DanglingReference {
                joint: spec.name.clone(),
                link: spec.child.clone(),
            })?;
            if link_parent_joint[c].is_some() {
                return Err(KinematicsError::CyclicStructure(alloc::format!(
                    "link `{}` has more than one parent joint",
                    spec.child
                )));
            }
            link_parent_joint[c] = Some(j);
            joint_parent.push(p);
            joint_child.push(c);

            if spec.kind != JointKind::Fixed {
                let n = spec.axis.norm();
                if !(n.is_finite() && n > 1e-12) {
                    return Err(KinematicsError::InvalidAxis(spec.name.clone()));
                }
                spec.axis /= n;
            }
            let lim = spec.limits;
            if lim.lower.is_nan() || lim.upper.is_nan() || lim.lower > lim.upper || spec.velocity_limit.is_nan() || spec.velocity_limit < 0.0 {
                return Err(KinematicsError::InvalidLimits(spec.name.clone()));
            }
            if !spec.origin.is_finite() {
                return Err(KinematicsError::InvalidLimits(spec.name.clone()));
            }
        }
        for (i, j) in joints.iter().enumerate() {
            if joints[..i].iter().any(|o| o.name == j.name) {
                return Err(KinematicsError::DuplicateName { kind: "joint", name: j.name.clone() });
            }
        }

        let roots: Vec<usize> = (0..links.len()).filter(|&l| link_parent_joint[l].is_none()).collect();
        let root = match roots.as_slice() {
            [r] => *r,
            [] if links.is_empty() => {
                return Err(KinematicsError::CyclicStructure("chain has no links".into()))
            }
            [] => return Err(KinematicsError::CyclicStructure("no root link".into())),
            _ => {
                return Err(KinematicsError::CyclicStructure(alloc::format!(
                    "multiple root links: {}",
                    roots.iter().map(|&r| links[r].as_str()).collect::<Vec<_>>().join(", ")
                )))
            }
        };

        // Breadth-first from the root; anything unreachable sits on a cycle.
        let mut order = Vec::with_capacity(joints.len());
        let mut frontier = vec![root];
        let mut seen = vec![false; links.len()];
        seen[root] = true;
        while let Some(link) = frontier.pop() {
            for (j, &p) in joint_parent.iter().enumerate() {
                if p == link {
                    let c = joint_child[j];
                    if seen[c] {
                        return Err(KinematicsError::CyclicStructure(alloc::format!(
                            "link `{}` reached twice",
                            links[c]
                        )));
                    }
                    seen[c] = true;
                    order.push(j);
                    frontier.push(c);
                }
            }
        }
        if let Some(l) = seen.iter().position(|s| !s) {
            return Err(KinematicsError::CyclicStructure(alloc::format!(
                "link `{}` is not reachable from root `{}`",
                links[l], links[root]
            )));
        }

        let mut dof = 0;
        let dof_index = joints
            .iter()
            .map(|j| {
                if j.is_fixed() {
                    None
                } else {
                    dof += 1;
                    Some(dof - 1)
                }
            })
            .collect();

        Ok(Self {
            name: name.to_string(),
            links,
            joints,
            root,
            joint_parent,
            joint_child,
            link_parent_joint,
            order,
            dof_index,
            dof,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dof(&self) -> usize {
        self.dof
    }

    pub fn links(&self) -> &[String] {
        &self.links
    }

    pub fn joints(&self) -> &[JointSpec] {
        &self.joints
    }

    pub fn root_link(&self) -> &str {
        &self.links[self.root]
    }

    /// Index of the joint whose child link is the parent link of joint `j`.
    pub fn parent_joint(&self, j: usize) -> Option<usize> {
        self.link_parent_joint[self.joint_parent[j]]
    }

    pub fn link_index(&self, name: &str) -> Option<usize> {
        self.links.iter().position(|l| l == name)
    }

    pub fn has_frame(&self, name: &str) -> bool {
        self.link_index(name).is_some()
    }

    /// Non-fixed joints, in configuration order.
    pub fn active_joints(&self) -> impl Iterator<Item = &JointSpec> {
        self.joints.iter().filter(|j| !j.is_fixed())
    }

    pub fn joint_limits(&self) -> Vec<JointLimits> {
        self.active_joints().map(|j| j.limits).collect()
    }

    pub fn velocity_limits(&self) -> Vec<f64> {
        self.active_joints().map(|j| j.velocity_limit).collect()
    }

    /// Zero configuration clamped into the joint limits.
    pub fn neutral_configuration(&self) -> Configuration {
        Configuration::from(self.active_joints().map(|j| j.limits.clamp(0.0)).collect::<Vec<_>>())
    }

    fn check_q(&self, q: &Configuration) -> Result<()> {
        if q.len() != self.dof {
            return Err(KinematicsError::DimensionMismatch { expected: self.dof, got: q.len() });
        }
        if !q.is_finite() {
            return Err(KinematicsError::NonFinite);
        }
        Ok(())
    }

    fn frame_index(&self, frame: &str) -> Result<usize> {
        self.link_index(frame).ok_or_else(|| KinematicsError::UnknownFrame(frame.to_string()))
    }

    /// World pose of every link, indexed like [`links`](Self::links).
    pub fn link_poses(&self, q: &Configuration) -> Result<Vec<Pose>> {
        self.check_q(q)?;
        Ok(self.link_poses_unchecked(q))
    }

    fn link_poses_unchecked(&self, q: &Configuration) -> Vec<Pose> {
        let mut poses = vec![Pose::identity(); self.links.len()];
        for &j in &self.order {
            let spec = &self.joints[j];
            let v = self.dof_index[j].map_or(0.0, |i| q[i]);
            let joint_frame = poses[self.joint_parent[j]].compose(&spec.origin);
            poses[self.joint_child[j]] = joint_frame.compose(&spec.motion(v));
        }
        poses
    }

    pub fn forward_kinematics(&self, q: &Configuration, frame: &str) -> Result<Pose> {
        let idx = self.frame_index(frame)?;
        self.check_q(q)?;
        if idx == self.root {
            return Ok(Pose::identity());
        }
        Ok(self.link_poses_unchecked(q)[idx])
    }

    /// Geometric Jacobian of `frame`'s origin, expressed in the world frame.
    pub fn jacobian(&self, q: &Configuration, frame: &str) -> Result<Jacobian> {
        let idx = self.frame_index(frame)?;
        self.check_q(q)?;
        let poses = self.link_poses_unchecked(q);
        let p = poses[idx].position;
        let mut m = DMatrix::zeros(6, self.dof);
        let mut link = idx;
        while let Some(j) = self.link_parent_joint[link] {
            if let Some(col) = self.dof_index[j] {
                let spec = &self.joints[j];
                let jf = poses[self.joint_parent[j]].compose(&spec.origin);
                let axis = jf.orientation * spec.axis;
                let (lin, ang) = match spec.kind {
                    JointKind::Revolute => (axis.cross(&(p - jf.position)), axis),
                    JointKind::Prismatic => (axis, Vector3::zeros()),
                    JointKind::Fixed => unreachable!(),
                };
                m.fixed_view_mut::<3, 1>(0, col).copy_from(&lin);
                m.fixed_view_mut::<3, 1>(3, col).copy_from(&ang);
            }
            link = self.joint_parent[j];
        }
        Ok(Jacobian { matrix: m, frame: frame.to_string() })
    }
}

/// Yoshikawa manipulability `sqrt(det(J Jᵀ))` over the selected rows.
///
/// Returns 0 when more rows are selected than the chain has joints, and
/// clamps round-off negatives of the determinant to 0.
pub fn manipulability(jacobian: &Jacobian, rows: RowSelection) -> f64 {
    if rows.count() > jacobian.matrix.ncols() {
        return 0.0;
    }
    let j = jacobian.select_rows(rows);
    let jjt = &j * j.transpose();
    jjt.determinant().max(0.0).sqrt()
}

pub const MANIPULABILITY_FD_STEP: f64 = 1e-6;

/// ∂m/∂q by central differences with step [`MANIPULABILITY_FD_STEP`].
pub fn manipulability_gradient(
    chain: &KinematicChain,
    q: &Configuration,
    frame: &str,
    rows: RowSelection,
) -> Result<DVector<f64>> {
    manipulability_gradient_with_step(chain, q, frame, rows, MANIPULABILITY_FD_STEP)
}

pub fn manipulability_gradient_with_step(
    chain: &KinematicChain,
    q: &Configuration,
    frame: &str,
    rows: RowSelection,
    step: f64,
) -> Result<DVector<f64>> {
    chain.frame_index(frame)?;
    chain.check_q(q)?;
    let mut grad = DVector::zeros(chain.dof());
    let mut probe = q.clone();
    for i in 0..chain.dof() {
        let base = q[i];
        probe.as_mut_slice()[i] = base + step;
        let plus = manipulability(&chain.jacobian(&probe, frame)?, rows);
        probe.as_mut_slice()[i] = base - step;
        let minus = manipulability(&chain.jacobian(&probe, frame)?, rows);
        probe.as_mut_slice()[i] = base;
        grad[i] = (plus - minus) / (2.0 * step);
    }
    Ok(grad)
}
