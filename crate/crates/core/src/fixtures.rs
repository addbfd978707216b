//! Small canonical chains shared by tests, benchmarks and the CLI demos.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::{FRAC_PI_2, PI};

use nalgebra::Vector3;

use crate::kinematics::{JointKind, JointLimits, JointSpec, KinematicChain};
use crate::pose::{quat_from_axis_angle, Pose};

/// Planar serial chain of revolute Z joints with links along X.
///
/// Links are named `base`, `link1` … `linkN`, `tip`; joint `i` sits at the
/// far end of segment `i - 1` and `tip` is a fixed frame at the end of the
/// last segment.
pub fn planar_serial(lengths: &[f64], limits: JointLimits) -> KinematicChain {
    let mut links = vec![String::from("base")];
    let mut joints = Vec::new();
    let mut parent = String::from("base");
    let mut offset = 0.0;
    for (i, &l) in lengths.iter().enumerate() {
        let child = format!("link{}", i + 1);
        joints.push(
            JointSpec::revolute(
                &format!("joint{}", i + 1),
                &parent,
                &child,
                Pose::from_translation(offset, 0.0, 0.0),
                Vector3::z(),
            )
            .with_limits(limits.lower, limits.upper)
            .with_velocity_limit(10.0),
        );
        links.push(child.clone());
        parent = child;
        offset = l;
    }
    links.push("tip".into());
    joints.push(JointSpec::fixed("tip_joint", &parent, "tip", Pose::from_translation(offset, 0.0, 0.0)));
    KinematicChain::new("planar", links, joints).expect("planar fixture is valid")
}

/// Three revolute joints with non-parallel axes and offset links.
pub fn spatial_three_link() -> KinematicChain {
    let links = ["base", "l1", "l2", "l3", "tool"].map(String::from).to_vec();
    let joints = vec![
        JointSpec::revolute("j1", "base", "l1", Pose::from_translation(0.0, 0.0, 0.1), Vector3::z()),
        JointSpec::revolute("j2", "l1", "l2", Pose::from_xyz_rpy([0.0, 0.05, 0.3], [0.2, 0.0, 0.0]), Vector3::y()),
        JointSpec::revolute("j3", "l2", "l3", Pose::from_xyz_rpy([0.4, 0.0, 0.0], [0.0, 0.3, 0.1]), Vector3::new(0.0, 1.0, 1.0)),
        JointSpec::fixed("tool_joint", "l3", "tool", Pose::from_xyz_rpy([0.3, 0.0, 0.05], [0.0, 0.0, 0.4])),
    ];
    KinematicChain::new("spatial3", links, joints).expect("spatial fixture is valid")
}

/// Six-axis industrial arm (UR5 proportions), tool frame `ee`.
pub fn arm6() -> KinematicChain {
    let links = ["base_link", "shoulder_link", "upper_arm_link", "forearm_link", "wrist_1_link", "wrist_2_link", "wrist_3_link", "ee"]
        .map(String::from)
        .to_vec();
    let lim = |j: JointSpec| j.with_limits(-2.0 * PI, 2.0 * PI).with_velocity_limit(PI);
    let joints = vec![
        lim(JointSpec::revolute("shoulder_pan", "base_link", "shoulder_link", Pose::from_translation(0.0, 0.0, 0.089159), Vector3::z())),
        lim(JointSpec::revolute("shoulder_lift", "shoulder_link", "upper_arm_link", Pose::from_xyz_rpy([0.0, 0.13585, 0.0], [0.0, FRAC_PI_2, 0.0]), Vector3::y())),
        lim(JointSpec::revolute("elbow", "upper_arm_link", "forearm_link", Pose::from_translation(0.0, -0.1197, 0.425), Vector3::y())),
        lim(JointSpec::revolute("wrist_1", "forearm_link", "wrist_1_link", Pose::from_xyz_rpy([0.0, 0.0, 0.39225], [0.0, FRAC_PI_2, 0.0]), Vector3::y())),
        lim(JointSpec::revolute("wrist_2", "wrist_1_link", "wrist_2_link", Pose::from_translation(0.0, 0.093, 0.0), Vector3::z())),
        lim(JointSpec::revolute("wrist_3", "wrist_2_link", "wrist_3_link", Pose::from_translation(0.0, 0.0, 0.09465), Vector3::y())),
        JointSpec::fixed("ee_fixed", "wrist_3_link", "ee", Pose::from_xyz_rpy([0.0, 0.0823, 0.0], [0.0, 0.0, FRAC_PI_2])),
    ];
    KinematicChain::new("arm6", links, joints).expect("arm6 fixture is valid")
}

/// A configuration of [`arm6`] well away from its singularities.
#[allow(clippy::approx_constant)]
pub const ARM6_HOME: [f64; 6] = [0.0, -1.2, 1.6, -1.9, -1.5708, 0.3];

/// Branched toy hand: an index finger and a thumb on one palm, two
/// flexion joints each.
pub fn two_finger_hand() -> KinematicChain {
    let links = ["palm", "index1", "index2", "index_tip", "thumb1", "thumb2", "thumb_tip"]
        .map(String::from)
        .to_vec();
    let flex = |j: JointSpec| j.with_limits(0.0, 1.6).with_velocity_limit(5.0);
    let joints = vec![
        flex(JointSpec::revolute("index_mcp", "palm", "index1", Pose::from_translation(0.09, 0.02, 0.0), Vector3::z())),
        flex(JointSpec::revolute("index_pip", "index1", "index2", Pose::from_translation(0.045, 0.0, 0.0), Vector3::z())),
        JointSpec::fixed("index_tip_joint", "index2", "index_tip", Pose::from_translation(0.035, 0.0, 0.0)),
        flex(JointSpec::revolute("thumb_cmc", "palm", "thumb1", Pose::new(Vector3::new(0.03, -0.03, 0.0), quat_from_axis_angle(&Vector3::z(), -0.6)), Vector3::new(0.0, 0.0, -1.0))),
        flex(JointSpec::revolute("thumb_mcp", "thumb1", "thumb2", Pose::from_translation(0.04, 0.0, 0.0), Vector3::new(0.0, 0.0, -1.0))),
        JointSpec::fixed("thumb_tip_joint", "thumb2", "thumb_tip", Pose::from_translation(0.03, 0.0, 0.0)),
    ];
    KinematicChain::new("hand", links, joints).expect("hand fixture is valid")
}

/// Random serial chain with `dof` moving joints and a fixed `tip` frame.
///
/// `uniform` must return samples in `[0, 1)`. Joint kinds, axes and link
/// offsets are all drawn from it, and fixed joints are sprinkled in between.
pub fn random_chain(uniform: &mut dyn FnMut() -> f64, dof: usize) -> KinematicChain {
    let mut sym = |s: f64| (2.0 * uniform() - 1.0) * s;
    let mut links = vec![String::from("base")];
    let mut joints = Vec::new();
    let mut parent = String::from("base");
    let mut moving = 0;
    let mut n = 0;
    while moving < dof {
        n += 1;
        let child = format!("l{n}");
        let origin = Pose::from_xyz_rpy([sym(0.4), sym(0.4), sym(0.4)], [sym(PI), sym(PI), sym(PI)]);
        let axis = Vector3::new(sym(1.0), sym(1.0), sym(1.0) + 0.05);
        let pick = sym(1.0);
        let kind = if pick < -0.6 {
            JointKind::Fixed
        } else if pick < -0.3 {
            JointKind::Prismatic
        } else {
            JointKind::Revolute
        };
        if kind != JointKind::Fixed {
            moving += 1;
        }
        joints.push(JointSpec::new(&format!("j{n}"), kind, &parent, &child, origin, axis));
        links.push(child.clone());
        parent = child;
    }
    links.push("tip".into());
    let tip = Pose::from_xyz_rpy([sym(0.3), sym(0.3), sym(0.3)], [sym(1.0), sym(1.0), sym(1.0)]);
    joints.push(JointSpec::fixed("tip_joint", &parent, "tip", tip));
    KinematicChain::new("random", links, joints).expect("random chain is valid")
}
