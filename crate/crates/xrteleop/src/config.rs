//! TOML description of a robot and its teleoperation mapping.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;
use xrteleop_core::fixtures;
use xrteleop_core::ik::IkParams;
use xrteleop_core::kinematics::JointLimits;
use xrteleop_core::nalgebra::Vector3;
use xrteleop_core::pose::Pose;
use xrteleop_core::protocol::{hand, FrameConvention, Side};
use xrteleop_core::retarget::{KeypointPair, RetargetMap, RetargetParams};
use xrteleop_core::teleop::{ArmMapping, BaseLimits, GimbalLimits, GripperCurve, HandMapping, TrackerMapping};
use xrteleop_core::{Configuration, KinematicChain, Robot, RowSelection, TeleopConfig};

use crate::urdf::{parse_chain, UrdfError};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("chain `{chain}`: {source}")]
    Urdf { chain: String, source: UrdfError },
    #[error("{0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default = "default_task")]
    pub task: String,
    #[serde(default = "default_rate")]
    pub control_rate_hz: f64,
    #[serde(default)]
    pub convention: Option<String>,
    #[serde(default)]
    pub limit_horizon: Option<f64>,
    #[serde(default)]
    pub engage_threshold: Option<f64>,
    #[serde(default)]
    pub release_threshold: Option<f64>,
    #[serde(default)]
    pub ik: IkFile,
    #[serde(default)]
    pub chains: Vec<ChainFile>,
    #[serde(default)]
    pub arms: Vec<ArmFile>,
    #[serde(default)]
    pub trackers: Vec<TrackerFile>,
    #[serde(default)]
    pub hands: Vec<HandFile>,
    pub base: Option<BaseFile>,
    pub gimbal: Option<GimbalFile>,
    pub gripper: Option<GripperFile>,
}

fn default_task() -> String {
    "teleop".into()
}

fn default_rate() -> f64 {
    90.0
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IkFile {
    pub damping: Option<f64>,
    pub manipulability_weight: Option<f64>,
    pub manipulability_frame: Option<String>,
    pub manipulability_rows: Option<Rows>,
    pub max_task_speed: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainFile {
    pub id: String,
    /// Path relative to the config file.
    pub urdf: Option<String>,
    /// One of the bundled fixtures: `arm6`, `two_finger_hand`, `spatial_three_link`.
    pub builtin: Option<String>,
    pub initial: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum Rows {
    Named(String),
    Indices(Vec<usize>),
}

impl Rows {
    fn resolve(&self) -> Result<RowSelection, ConfigError> {
        match self {
            Rows::Named(n) => match n.as_str() {
                "all" => Ok(RowSelection::ALL),
                "position" => Ok(RowSelection::POSITION),
                "orientation" => Ok(RowSelection::ORIENTATION),
                "xy" => Ok(RowSelection::XY),
                other => Err(invalid(format!("unknown row selection `{other}`"))),
            },
            Rows::Indices(i) if i.iter().all(|&r| r < 6) => Ok(RowSelection::from_rows(i)),
            Rows::Indices(_) => Err(invalid("row indices must be below 6")),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmFile {
    pub side: String,
    pub chain: String,
    pub ee_frame: String,
    #[serde(default = "all_rows")]
    pub rows: Rows,
    #[serde(default = "one")]
    pub weight: f64,
}

fn all_rows() -> Rows {
    Rows::Named("all".into())
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackerFile {
    pub serial: String,
    pub chain: String,
    pub frame: String,
    #[serde(default = "one")]
    pub weight: f64,
    #[serde(default)]
    pub offset: [f64; 3],
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum Keypoint {
    Index(usize),
    Name(String),
}

impl Keypoint {
    fn resolve(&self) -> Result<usize, ConfigError> {
        let idx = match self {
            Keypoint::Index(i) => *i,
            Keypoint::Name(n) => match n.as_str() {
                "palm" => hand::PALM,
                "wrist" => hand::WRIST,
                "thumb_tip" => hand::THUMB_TIP,
                "index_tip" => hand::INDEX_TIP,
                "middle_tip" => hand::MIDDLE_TIP,
                "ring_tip" => hand::RING_TIP,
                "little_tip" => hand::LITTLE_TIP,
                other => return Err(invalid(format!("unknown hand keypoint `{other}`"))),
            },
        };
        if idx >= xrteleop_core::protocol::HAND_JOINT_COUNT {
            return Err(invalid(format!("hand keypoint {idx} out of range")));
        }
        Ok(idx)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairFile {
    pub human: Keypoint,
    #[serde(default = "wrist")]
    pub reference: Keypoint,
    pub frame: String,
    pub robot_reference: Option<String>,
}

fn wrist() -> Keypoint {
    Keypoint::Name("wrist".into())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HandFile {
    pub side: String,
    pub chain: String,
    pub pairs: Vec<PairFile>,
    #[serde(default)]
    pub wrist_to_robot_rpy: [f64; 3],
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub max_iters: Option<usize>,
    pub tol: Option<f64>,
    pub seed_budget: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaseFile {
    pub v_max: f64,
    pub w_max: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GimbalFile {
    pub yaw: [f64; 2],
    pub pitch: [f64; 2],
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GripperFile {
    pub sides: Vec<String>,
    /// `linear`, `gamma:<g>` or `threshold:<t>`.
    #[serde(default)]
    pub curve: Option<String>,
}

fn side(s: &str) -> Result<Side, ConfigError> {
    match s {
        "left" => Ok(Side::Left),
        "right" => Ok(Side::Right),
        other => Err(invalid(format!("unknown side `{other}`"))),
    }
}

fn curve(s: &str) -> Result<GripperCurve, ConfigError> {
    let bad = || invalid(format!("unknown gripper curve `{s}`"));
    match s.split_once(':') {
        None if s == "linear" => Ok(GripperCurve::Linear),
        Some(("gamma", g)) => Ok(GripperCurve::Gamma(g.trim().parse().map_err(|_| bad())?)),
        Some(("threshold", t)) => Ok(GripperCurve::Threshold(t.trim().parse().map_err(|_| bad())?)),
        _ => Err(bad()),
    }
}

/// Everything needed to run the control loop.
#[derive(Clone, Debug)]
pub struct LoadedConfig {
    pub task: String,
    pub control_rate_hz: f64,
    pub robot: Robot,
    pub teleop: TeleopConfig,
    pub initial: BTreeMap<String, Configuration>,
    /// URDF text per chain, for clients that draw the robot.
    pub urdf: BTreeMap<String, String>,
}

pub fn builtin_chain(name: &str) -> Option<KinematicChain> {
    match name {
        "arm6" => Some(fixtures::arm6()),
        "two_finger_hand" => Some(fixtures::two_finger_hand()),
        "spatial_three_link" => Some(fixtures::spatial_three_link()),
        _ => None,
    }
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    /// Resolve chains (URDF paths relative to `base_dir`) and build the runtime config.
    pub fn resolve(&self, base_dir: &Path) -> Result<LoadedConfig, ConfigError> {
        if !(self.control_rate_hz > 0.0 && self.control_rate_hz.is_finite()) {
            return Err(invalid("control_rate_hz must be positive"));
        }
        let mut robot = Robot::new();
        let mut initial = BTreeMap::new();
        let mut urdf = BTreeMap::new();
        for c in &self.chains {
            let chain = match (&c.urdf, &c.builtin) {
                (Some(path), None) => {
                    let path = base_dir.join(path);
                    let text = fs::read_to_string(&path).map_err(|source| ConfigError::Read { path, source })?;
                    let parsed = parse_chain(&text).map_err(|source| ConfigError::Urdf { chain: c.id.clone(), source })?;
                    for w in &parsed.warnings {
                        log::warn!("chain `{}`: {w}", c.id);
                    }
                    parsed.chain
                }
                (None, Some(name)) => builtin_chain(name).ok_or_else(|| invalid(format!("unknown builtin chain `{name}`")))?,
                _ => return Err(invalid(format!("chain `{}` needs exactly one of urdf or builtin", c.id))),
            };
            let q = match &c.initial {
                Some(v) if v.len() == chain.dof() => Configuration::from_slice(v),
                Some(v) => {
                    return Err(invalid(format!("chain `{}` initial has {} values, expected {}", c.id, v.len(), chain.dof())))
                }
                None => chain.neutral_configuration(),
            };
            urdf.insert(c.id.clone(), crate::urdf::serialize_chain(&chain));
            initial.insert(c.id.clone(), q);
            robot.insert(&c.id, chain);
        }

        let mut cfg = TeleopConfig::default();
        if let Some(c) = &self.convention {
            cfg.convention = FrameConvention::from_name(c).map_err(|e| invalid(e.to_string()))?;
        }
        cfg.limit_horizon = self.limit_horizon.unwrap_or(cfg.limit_horizon);
        cfg.engage_threshold = self.engage_threshold.unwrap_or(cfg.engage_threshold);
        cfg.release_threshold = self.release_threshold.unwrap_or(cfg.release_threshold);
        cfg.ik = IkParams {
            damping: self.ik.damping.unwrap_or(cfg.ik.damping),
            manipulability_weight: self.ik.manipulability_weight.unwrap_or(cfg.ik.manipulability_weight),
            manipulability_frame: self.ik.manipulability_frame.clone(),
            manipulability_rows: match &self.ik.manipulability_rows {
                Some(r) => r.resolve()?,
                None => cfg.ik.manipulability_rows,
            },
            dt: 1.0 / self.control_rate_hz,
            max_task_speed: self.ik.max_task_speed.unwrap_or(cfg.ik.max_task_speed),
        };
        for a in &self.arms {
            cfg.arms.push(ArmMapping {
                side: side(&a.side)?,
                chain: a.chain.clone(),
                ee_frame: a.ee_frame.clone(),
                rows: a.rows.resolve()?,
                weight: a.weight,
            });
        }
        for t in &self.trackers {
            cfg.trackers.push(TrackerMapping {
                serial: t.serial.clone(),
                chain: t.chain.clone(),
                frame: t.frame.clone(),
                weight: t.weight,
                offset: Vector3::from(t.offset),
            });
        }
        for h in &self.hands {
            let pairs = h
                .pairs
                .iter()
                .map(|p| {
                    Ok(KeypointPair {
                        human_keypoint: p.human.resolve()?,
                        reference_keypoint: p.reference.resolve()?,
                        robot_frame: p.frame.clone(),
                        robot_reference: p.robot_reference.clone(),
                    })
                })
                .collect::<Result<Vec<_>, ConfigError>>()?;
            let mut map = RetargetMap::new(pairs);
            map.wrist_to_robot = Pose::from_xyz_rpy([0.0; 3], h.wrist_to_robot_rpy).orientation;
            let d = RetargetParams::default();
            cfg.hands.push(HandMapping {
                side: side(&h.side)?,
                chain: h.chain.clone(),
                map,
                params: RetargetParams {
                    alpha: h.alpha.unwrap_or(d.alpha),
                    beta: h.beta.unwrap_or(d.beta),
                    max_iters: h.max_iters.unwrap_or(d.max_iters),
                    tol: h.tol.unwrap_or(d.tol),
                    seed_budget: h.seed_budget.unwrap_or(d.seed_budget),
                },
            });
        }
        cfg.base = self.base.as_ref().map(|b| BaseLimits { v_max: b.v_max, w_max: b.w_max });
        cfg.gimbal = self.gimbal.as_ref().map(|g| GimbalLimits {
            yaw: JointLimits::new(g.yaw[0], g.yaw[1]),
            pitch: JointLimits::new(g.pitch[0], g.pitch[1]),
        });
        if let Some(g) = &self.gripper {
            cfg.grippers = g.sides.iter().map(|s| side(s)).collect::<Result<_, _>>()?;
            if let Some(c) = &g.curve {
                cfg.gripper_curve = curve(c)?;
            }
        }
        cfg.validate(&robot).map_err(|e| invalid(e.to_string()))?;
        Ok(LoadedConfig { task: self.task.clone(), control_rate_hz: self.control_rate_hz, robot, teleop: cfg, initial, urdf })
    }
}

pub fn load_config(path: &Path) -> Result<LoadedConfig, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
    ConfigFile::parse(&text)?.resolve(path.parent().unwrap_or(Path::new(".")))
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
task = "pick"
[[chains]]
id = "arm"
builtin = "arm6"
initial = [0.0, -1.2, 1.6, -1.9, -1.5708, 0.3]
[[chains]]
id = "hand"
builtin = "two_finger_hand"
[[arms]]
side = "right"
chain = "arm"
ee_frame = "ee"
[[hands]]
side = "right"
chain = "hand"
pairs = [{ human = "index_tip", frame = "index_tip" }, { human = 5, frame = "thumb_tip" }]
[base]
v_max = 0.5
w_max = 1.0
[gimbal]
yaw = [-3.0, 3.0]
pitch = [-1.0, 1.0]
[gripper]
sides = ["right"]
curve = "gamma:2"
"#;

    #[test]
    fn sample_resolves() {
        let c = ConfigFile::parse(SAMPLE).unwrap().resolve(Path::new(".")).unwrap();
        assert_eq!(c.task, "pick");
        assert_eq!(c.teleop.arms.len(), 1);
        assert_eq!(c.teleop.hands[0].map.pairs[1].human_keypoint, hand::THUMB_TIP);
        assert_eq!(c.teleop.gripper_curve, GripperCurve::Gamma(2.0));
        assert_eq!(c.initial["arm"].as_slice()[1], -1.2);
        assert!((c.teleop.ik.dt - 1.0 / 90.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_references() {
        let bad = SAMPLE.replace("ee_frame = \"ee\"", "ee_frame = \"nope\"");
        assert!(ConfigFile::parse(&bad).unwrap().resolve(Path::new(".")).is_err());
        let bad = SAMPLE.replace("gamma:2", "cubic");
        assert!(ConfigFile::parse(&bad).unwrap().resolve(Path::new(".")).is_err());
        assert!(ConfigFile::parse("bogus = 1").is_err());
    }
}
