//! Reader and writer for a small subset of URDF.
//!
//! Supported: `<robot>` with `<link name>` and `<joint name type>` elements;
//! joints carry `<parent link>`, `<child link>`, `<origin xyz rpy>`,
//! `<axis xyz>` and `<limit lower upper velocity>`. Joint types are
//! `revolute`, `prismatic` and `fixed`. Any other element is skipped and
//! reported as a warning.

use std::fmt::Write as _;

use thiserror::Error;
use xrteleop_core::kinematics::{JointKind, JointSpec, KinematicChain, KinematicsError};
use xrteleop_core::nalgebra::Vector3;
use xrteleop_core::Pose;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum UrdfError {
    #[error("malformed document: {0}")]
    MalformedDocument(String),
    #[error("joint `{joint}` references undeclared link `{link}`")]
    DanglingReference { joint: String, link: String },
    #[error("link graph is not a tree: {0}")]
    CyclicStructure(String),
    #[error("joint `{joint}` has unsupported type `{kind}`")]
    UnsupportedJointType { joint: String, kind: String },
    #[error(transparent)]
    Kinematics(KinematicsError),
}

impl From<KinematicsError> for UrdfError {
    fn from(e: KinematicsError) -> Self {
        match e {
            KinematicsError::DanglingReference { joint, link } => UrdfError::DanglingReference { joint, link },
            KinematicsError::CyclicStructure(s) => UrdfError::CyclicStructure(s),
            other => UrdfError::Kinematics(other),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedChain {
    pub chain: KinematicChain,
    /// Skipped elements and other non-fatal findings.
    pub warnings: Vec<String>,
}

fn malformed(msg: impl Into<String>) -> UrdfError {
    UrdfError::MalformedDocument(msg.into())
}

fn floats<const N: usize>(node: roxmltree::Node, attr: &str, default: [f64; N]) -> Result<[f64; N], UrdfError> {
    let Some(text) = node.attribute(attr) else {
        return Ok(default);
    };
    let values: Vec<f64> = text
        .split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|_| malformed(format!("`{attr}` has non-numeric value `{t}`"))))
        .collect::<Result<_, _>>()?;
    values
        .try_into()
        .map_err(|v: Vec<f64>| malformed(format!("`{attr}` needs {N} numbers, got {}", v.len())))
}

fn scalar(node: roxmltree::Node, attr: &str, default: f64) -> Result<f64, UrdfError> {
    Ok(floats::<1>(node, attr, [default])?[0])
}

fn link_ref(joint: roxmltree::Node, tag: &str, name: &str) -> Result<String, UrdfError> {
    joint
        .children()
        .find(|c| c.has_tag_name(tag))
        .and_then(|c| c.attribute("link"))
        .map(str::to_string)
        .ok_or_else(|| malformed(format!("joint `{name}` lacks <{tag} link=...>")))
}

pub fn parse_chain(text: &str) -> Result<ParsedChain, UrdfError> {
    let doc = roxmltree::Document::parse(text).map_err(|e| malformed(e.to_string()))?;
    let robot = doc.root_element();
    if !robot.has_tag_name("robot") {
        return Err(malformed(format!("root element is <{}>, expected <robot>", robot.tag_name().name())));
    }
    let name = robot.attribute("name").unwrap_or("robot");
    let mut warnings = Vec::new();
    let mut links = Vec::new();
    let mut joints = Vec::new();

    for el in robot.children().filter(roxmltree::Node::is_element) {
        match el.tag_name().name() {
            "link" => {
                let n = el.attribute("name").ok_or_else(|| malformed("<link> without name"))?;
                links.push(n.to_string());
            }
            "joint" => joints.push(parse_joint(el, &mut warnings)?),
            other => warnings.push(format!("ignored <{other}> element")),
        }
    }
    let chain = KinematicChain::new(name, links, joints)?;
    Ok(ParsedChain { chain, warnings })
}

fn parse_joint(el: roxmltree::Node, warnings: &mut Vec<String>) -> Result<JointSpec, UrdfError> {
    let name = el.attribute("name").ok_or_else(|| malformed("<joint> without name"))?;
    let kind_attr = el.attribute("type").ok_or_else(|| malformed(format!("joint `{name}` has no type")))?;
    let kind = match kind_attr {
        "revolute" => JointKind::Revolute,
        "prismatic" => JointKind::Prismatic,
        "fixed" => JointKind::Fixed,
        other => return Err(UrdfError::UnsupportedJointType { joint: name.into(), kind: other.into() }),
    };
    let parent = link_ref(el, "parent", name)?;
    let child = link_ref(el, "child", name)?;
    let mut origin = Pose::identity();
    let mut axis = Vector3::x();
    let mut spec_limits = None;
    for c in el.children().filter(roxmltree::Node::is_element) {
        match c.tag_name().name() {
            "parent" | "child" => {}
            "origin" => origin = Pose::from_xyz_rpy(floats(c, "xyz", [0.0; 3])?, floats(c, "rpy", [0.0; 3])?),
            "axis" => axis = Vector3::from(floats(c, "xyz", [1.0, 0.0, 0.0])?),
            "limit" => {
                spec_limits = Some((
                    scalar(c, "lower", f64::NEG_INFINITY)?,
                    scalar(c, "upper", f64::INFINITY)?,
                    scalar(c, "velocity", f64::INFINITY)?,
                ))
            }
            other => warnings.push(format!("joint `{name}`: ignored <{other}> element")),
        }
    }
    let mut spec = JointSpec::new(name, kind, &parent, &child, origin, axis);
    if let Some((lower, upper, velocity)) = spec_limits {
        if kind == JointKind::Fixed {
            warnings.push(format!("joint `{name}`: <limit> on a fixed joint ignored"));
        } else {
            spec = spec.with_limits(lower, upper).with_velocity_limit(velocity);
        }
    }
    Ok(spec)
}

/// Write `chain` in the supported subset. Infinite limits are omitted.
pub fn serialize_chain(chain: &KinematicChain) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "<?xml version=\"1.0\"?>");
    let _ = writeln!(out, "<robot name=\"{}\">", escape(chain.name()));
    for l in chain.links() {
        let _ = writeln!(out, "  <link name=\"{}\"/>", escape(l));
    }
    for j in chain.joints() {
        let _ = writeln!(out, "  <joint name=\"{}\" type=\"{}\">", escape(&j.name), j.kind.as_str());
        let _ = writeln!(out, "    <parent link=\"{}\"/>", escape(&j.parent));
        let _ = writeln!(out, "    <child link=\"{}\"/>", escape(&j.child));
        let p = j.origin.position;
        let [r, pi, y] = j.origin.rpy();
        let _ = writeln!(out, "    <origin xyz=\"{} {} {}\" rpy=\"{} {} {}\"/>", p.x, p.y, p.z, r, pi, y);
        if j.kind != JointKind::Fixed {
            let _ = writeln!(out, "    <axis xyz=\"{} {} {}\"/>", j.axis.x, j.axis.y, j.axis.z);
            let mut attrs = String::new();
            for (k, v) in [("lower", j.limits.lower), ("upper", j.limits.upper), ("velocity", j.velocity_limit)] {
                if v.is_finite() {
                    let _ = write!(attrs, " {k}=\"{v}\"");
                }
            }
            if !attrs.is_empty() {
                let _ = writeln!(out, "    <limit{attrs}/>");
            }
        }
        let _ = writeln!(out, "  </joint>");
    }
    out.push_str("</robot>\n");
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}
