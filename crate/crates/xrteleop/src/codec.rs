//! JSON wire format for tracking packets and simulator state.
//!
//! A packet is one JSON object with the sections `Head`, `Controller`,
//! `Hand`, `Body` and `MotionTracker` plus the stream fields `timestamp`
//! (sender clock, ns) and `sequence`. Disabled sections are encoded as
//! `null`, never omitted. Keys are written in sorted order and floats in
//! shortest round-trip form, so `decode(encode(p)) == p` exactly.
//!
//! Poses are seven-number arrays `[x, y, z, qx, qy, qz, qw]`; the decoder
//! also accepts the same seven numbers as one comma-separated string.

use serde_json::{json, Map, Value};
use thiserror::Error;
use xrteleop_core::protocol::{
    parse_pose7, pose_to_pose7, BodyJoint, BodyState, ControllerState, HandJoint, HandMode, HandState, HeadState,
    MotionTrackerState, PacketError, PoseError, Side, TrackingStatus, WIRE_QUATERNION_TOLERANCE,
};
use xrteleop_core::sim::{BasePose, SimState};
use xrteleop_core::teleop::GimbalAngles;
use xrteleop_core::{Configuration, Pose, TrackingPacket};

/// Larger inputs are rejected before parsing.
pub const MAX_PACKET_BYTES: usize = 1 << 20;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CodecError {
    #[error("malformed JSON: {0}")]
    MalformedJson(String),
    #[error("schema violation at {path}: {reason}")]
    SchemaViolation { path: String, reason: String },
    #[error("{path} = {value} is out of range")]
    RangeViolation { path: String, value: f64 },
    #[error("sequence {got} does not follow {last}")]
    StaleSequence { last: u64, got: u64 },
    #[error("invariant violated: {0}")]
    InvariantViolation(String),
}

impl From<PacketError> for CodecError {
    fn from(e: PacketError) -> Self {
        match e {
            PacketError::Range { field, value } => CodecError::RangeViolation { path: field.to_string(), value },
            PacketError::Pose { field, source: PoseError::DegenerateQuaternion(n) } => {
                CodecError::RangeViolation { path: format!("{field} quaternion norm"), value: n }
            }
            PacketError::Arity { field, expected, got } => CodecError::SchemaViolation {
                path: field.to_string(),
                reason: format!("expected {expected} entries, got {got}"),
            },
            other => CodecError::InvariantViolation(other.to_string()),
        }
    }
}

fn schema(path: &str, reason: impl Into<String>) -> CodecError {
    CodecError::SchemaViolation { path: path.to_string(), reason: reason.into() }
}

fn pose_value(p: &Pose) -> Value {
    Value::from(pose_to_pose7(p).to_vec())
}

fn floats_value(v: &[f64]) -> Value {
    Value::from(v.to_vec())
}

fn controller_value(c: &ControllerState) -> Value {
    json!({
        "pose": pose_value(&c.pose),
        "axisX": c.axis_x,
        "axisY": c.axis_y,
        "axisClick": c.axis_click,
        "grip": c.grip,
        "trigger": c.trigger,
        "primaryButton": c.primary_button,
        "secondaryButton": c.secondary_button,
        "menuButton": c.menu_button,
    })
}

fn hand_value(h: &HandState) -> Value {
    let joints: Vec<Value> = h
        .joints
        .iter()
        .map(|j| json!({ "pose": pose_value(&j.pose), "status": j.status, "radius": j.radius }))
        .collect();
    json!({ "isActive": u8::from(h.is_active), "scale": h.scale, "HandJointLocations": joints })
}

/// Packet as a JSON value. Fails if the packet breaks a protocol invariant.
pub fn packet_to_value(p: &TrackingPacket) -> Result<Value, CodecError> {
    p.validate()?;
    let opt = |v: Option<Value>| v.unwrap_or(Value::Null);
    let body = p.body.as_ref().map(|b| {
        let joints: Vec<Value> = b
            .joints
            .iter()
            .map(|j| {
                json!({
                    "pose": pose_value(&j.pose),
                    "velocity": floats_value(&j.velocity),
                    "acceleration": floats_value(&j.acceleration),
                })
            })
            .collect();
        json!({ "joints": joints })
    });
    let trackers: Vec<Value> = p
        .trackers
        .iter()
        .map(|t| {
            json!({
                "p": pose_value(&t.pose),
                "va": floats_value(&t.velocity),
                "wva": floats_value(&t.acceleration),
                "sn": t.serial,
            })
        })
        .collect();
    Ok(json!({
        "timestamp": p.timestamp_ns,
        "sequence": p.sequence,
        "Head": {
            "pose": pose_value(&p.head.pose),
            "status": p.head.status as u8,
            "handMode": p.head.hand_mode as u8,
        },
        "Controller": {
            "left": opt(p.left_controller.as_ref().map(controller_value)),
            "right": opt(p.right_controller.as_ref().map(controller_value)),
        },
        "Hand": {
            "left": opt(p.left_hand.as_ref().map(hand_value)),
            "right": opt(p.right_hand.as_ref().map(hand_value)),
        },
        "Body": opt(body),
        "MotionTracker": trackers,
    }))
}

pub fn encode_packet(p: &TrackingPacket) -> Result<Vec<u8>, CodecError> {
    let v = packet_to_value(p)?;
    serde_json::to_vec(&v).map_err(|e| CodecError::InvariantViolation(e.to_string()))
}

/// Field accessors over a JSON object that report the full path on failure.
struct Obj<'a> {
    path: String,
    map: &'a Map<String, Value>,
}

impl<'a> Obj<'a> {
    fn new(path: &str, v: &'a Value) -> Result<Self, CodecError> {
        v.as_object().map(|map| Obj { path: path.to_string(), map }).ok_or_else(|| schema(path, "expected an object"))
    }

    fn at(&self, key: &str) -> String {
        if self.path.is_empty() {
            key.to_string()
        } else {
            format!("{}.{key}", self.path)
        }
    }

    fn get(&self, key: &str) -> Result<&'a Value, CodecError> {
        self.map.get(key).ok_or_else(|| schema(&self.at(key), "missing key"))
    }

    fn f64(&self, key: &str) -> Result<f64, CodecError> {
        self.get(key)?.as_f64().ok_or_else(|| schema(&self.at(key), "expected a number"))
    }

    fn u64(&self, key: &str) -> Result<u64, CodecError> {
        self.get(key)?.as_u64().ok_or_else(|| schema(&self.at(key), "expected a non-negative integer"))
    }

    fn bool(&self, key: &str) -> Result<bool, CodecError> {
        self.get(key)?.as_bool().ok_or_else(|| schema(&self.at(key), "expected a boolean"))
    }

    fn int_enum(&self, key: &str, max: u64) -> Result<u64, CodecError> {
        let v = self.get(key)?;
        match v.as_u64() {
            Some(n) if n <= max => Ok(n),
            Some(n) => Err(CodecError::RangeViolation { path: self.at(key), value: n as f64 }),
            None => match v.as_f64() {
                Some(x) => Err(CodecError::RangeViolation { path: self.at(key), value: x }),
                None => Err(schema(&self.at(key), "expected an integer")),
            },
        }
    }

    fn pose(&self, key: &str) -> Result<Pose, CodecError> {
        decode_pose(&self.at(key), self.get(key)?)
    }

    fn floats<const N: usize>(&self, key: &str) -> Result<[f64; N], CodecError> {
        let path = self.at(key);
        let arr = self.get(key)?.as_array().ok_or_else(|| schema(&path, "expected an array"))?;
        if arr.len() != N {
            return Err(schema(&path, format!("expected {N} numbers, got {}", arr.len())));
        }
        let mut out = [0.0; N];
        for (o, v) in out.iter_mut().zip(arr) {
            *o = v.as_f64().ok_or_else(|| schema(&path, "expected numbers"))?;
        }
        Ok(out)
    }

    fn array(&self, key: &str) -> Result<&'a Vec<Value>, CodecError> {
        self.get(key)?.as_array().ok_or_else(|| schema(&self.at(key), "expected an array"))
    }

    /// `None` for an explicit `null`; a missing key is still an error.
    fn nullable(&self, key: &str) -> Result<Option<&'a Value>, CodecError> {
        let v = self.get(key)?;
        Ok(if v.is_null() { None } else { Some(v) })
    }
}

fn decode_pose(path: &str, v: &Value) -> Result<Pose, CodecError> {
    let values: Vec<f64> = match v {
        Value::Array(a) => a
            .iter()
            .map(|x| x.as_f64().ok_or_else(|| schema(path, "pose entries must be numbers")))
            .collect::<Result<_, _>>()?,
        Value::String(s) => s
            .split(',')
            .map(|t| t.trim().parse::<f64>().map_err(|_| schema(path, "pose string must hold 7 numbers")))
            .collect::<Result<_, _>>()?,
        _ => return Err(schema(path, "pose must be an array of 7 numbers")),
    };
    if values.len() != 7 {
        return Err(schema(path, format!("pose needs 7 numbers, got {}", values.len())));
    }
    if let Some(&bad) = values.iter().find(|x| !x.is_finite()) {
        return Err(CodecError::RangeViolation { path: path.to_string(), value: bad });
    }
    let norm = values[3..].iter().map(|x| x * x).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > WIRE_QUATERNION_TOLERANCE {
        return Err(CodecError::RangeViolation { path: format!("{path} quaternion norm"), value: norm });
    }
    parse_pose7(&values).map_err(|e| schema(path, e.to_string()))
}

fn decode_controller(path: &str, v: &Value) -> Result<ControllerState, CodecError> {
    let o = Obj::new(path, v)?;
    Ok(ControllerState {
        pose: o.pose("pose")?,
        axis_x: o.f64("axisX")?,
        axis_y: o.f64("axisY")?,
        axis_click: o.bool("axisClick")?,
        grip: o.f64("grip")?,
        trigger: o.f64("trigger")?,
        primary_button: o.bool("primaryButton")?,
        secondary_button: o.bool("secondaryButton")?,
        menu_button: o.bool("menuButton")?,
    })
}

fn decode_hand(path: &str, v: &Value) -> Result<HandState, CodecError> {
    let o = Obj::new(path, v)?;
    let is_active = o.int_enum("isActive", 1)? == 1;
    let entries = o.array("HandJointLocations")?;
    let joints = entries
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let j = Obj::new(&format!("{}[{i}]", o.at("HandJointLocations")), e)?;
            let status = j.u64("status")?;
            Ok(HandJoint {
                pose: j.pose("pose")?,
                status: u32::try_from(status)
                    .map_err(|_| CodecError::RangeViolation { path: j.at("status"), value: status as f64 })?,
                radius: j.f64("radius")?,
            })
        })
        .collect::<Result<Vec<_>, CodecError>>()?;
    Ok(HandState { is_active, scale: o.f64("scale")?, joints })
}

fn decode_body(v: &Value) -> Result<BodyState, CodecError> {
    let o = Obj::new("Body", v)?;
    let joints = o
        .array("joints")?
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let j = Obj::new(&format!("Body.joints[{i}]"), e)?;
            Ok(BodyJoint { pose: j.pose("pose")?, velocity: j.floats("velocity")?, acceleration: j.floats("acceleration")? })
        })
        .collect::<Result<Vec<_>, CodecError>>()?;
    Ok(BodyState { joints })
}

pub fn value_to_packet(v: &Value) -> Result<TrackingPacket, CodecError> {
    let root = Obj::new("", v)?;
    let head = Obj::new("Head", root.get("Head")?)?;
    let status = match head.int_enum("status", 1)? {
        0 => TrackingStatus::Unreliable,
        _ => TrackingStatus::Reliable,
    };
    let hand_mode = match head.int_enum("handMode", 2)? {
        0 => HandMode::None,
        1 => HandMode::Controller,
        _ => HandMode::Hand,
    };
    let controllers = Obj::new("Controller", root.get("Controller")?)?;
    let hands = Obj::new("Hand", root.get("Hand")?)?;
    let trackers = root
        .array("MotionTracker")?
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let t = Obj::new(&format!("MotionTracker[{i}]"), e)?;
            Ok(MotionTrackerState {
                pose: t.pose("p")?,
                velocity: t.floats("va")?,
                acceleration: t.floats("wva")?,
                serial: t.get("sn")?.as_str().ok_or_else(|| schema(&t.at("sn"), "expected a string"))?.to_string(),
            })
        })
        .collect::<Result<Vec<_>, CodecError>>()?;
    let packet = TrackingPacket {
        timestamp_ns: root.u64("timestamp")?,
        sequence: root.u64("sequence")?,
        head: HeadState { pose: head.pose("pose")?, status, hand_mode },
        left_controller: side(&controllers, Side::Left, decode_controller)?,
        right_controller: side(&controllers, Side::Right, decode_controller)?,
        left_hand: side(&hands, Side::Left, decode_hand)?,
        right_hand: side(&hands, Side::Right, decode_hand)?,
        body: root.nullable("Body")?.map(decode_body).transpose()?,
        trackers,
    };
    packet.validate()?;
    Ok(packet)
}

fn side<T>(o: &Obj, s: Side, f: fn(&str, &Value) -> Result<T, CodecError>) -> Result<Option<T>, CodecError> {
    o.nullable(s.as_str())?.map(|v| f(&o.at(s.as_str()), v)).transpose()
}

/// Decode and validate one packet. Unknown keys are ignored.
pub fn decode_packet(bytes: &[u8]) -> Result<TrackingPacket, CodecError> {
    if bytes.len() > MAX_PACKET_BYTES {
        return Err(CodecError::MalformedJson(format!("{} bytes exceeds the {MAX_PACKET_BYTES}-byte limit", bytes.len())));
    }
    let v: Value = serde_json::from_slice(bytes).map_err(|e| CodecError::MalformedJson(e.to_string()))?;
    value_to_packet(&v)
}

/// Rejects non-increasing sequence numbers on one stream.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SequenceGuard {
    last: Option<u64>,
}

impl SequenceGuard {
    pub fn check(&mut self, sequence: u64) -> Result<(), CodecError> {
        match self.last {
            Some(last) if sequence <= last => Err(CodecError::StaleSequence { last, got: sequence }),
            _ => {
                self.last = Some(sequence);
                Ok(())
            }
        }
    }

    pub fn last(&self) -> Option<u64> {
        self.last
    }

    /// Forget the stream position, e.g. after a reconnect.
    pub fn reset(&mut self) {
        self.last = None;
    }
}

/// `{t, chains: {id: [q…]}, base: {x, y, heading}, gimbal: {yaw, pitch}, grippers: {left, right}}`
pub fn sim_state_to_value(s: &SimState) -> Value {
    let chains: Map<String, Value> = s.chains.iter().map(|(k, q)| (k.clone(), floats_value(q.as_slice()))).collect();
    json!({
        "t": s.time_ns,
        "chains": chains,
        "base": { "x": s.base.x, "y": s.base.y, "heading": s.base.heading },
        "gimbal": { "yaw": s.gimbal.yaw, "pitch": s.gimbal.pitch },
        "grippers": { "left": s.grippers[0], "right": s.grippers[1] },
    })
}

pub fn encode_sim_state(s: &SimState) -> Vec<u8> {
    serde_json::to_vec(&sim_state_to_value(s)).expect("sim state values are always serializable")
}

pub fn decode_sim_state(bytes: &[u8]) -> Result<SimState, CodecError> {
    let v: Value = serde_json::from_slice(bytes).map_err(|e| CodecError::MalformedJson(e.to_string()))?;
    let root = Obj::new("", &v)?;
    let chains = Obj::new("chains", root.get("chains")?)?;
    let chains = chains
        .map
        .iter()
        .map(|(k, q)| {
            let path = chains.at(k);
            let arr = q.as_array().ok_or_else(|| schema(&path, "expected an array"))?;
            let values = arr
                .iter()
                .map(|x| x.as_f64().ok_or_else(|| schema(&path, "expected numbers")))
                .collect::<Result<Vec<_>, _>>()?;
            Ok((k.clone(), Configuration::from(values)))
        })
        .collect::<Result<_, CodecError>>()?;
    let base = Obj::new("base", root.get("base")?)?;
    let gimbal = Obj::new("gimbal", root.get("gimbal")?)?;
    let grippers = Obj::new("grippers", root.get("grippers")?)?;
    Ok(SimState {
        time_ns: root.u64("t")?,
        chains,
        base: BasePose { x: base.f64("x")?, y: base.f64("y")?, heading: base.f64("heading")? },
        gimbal: GimbalAngles { yaw: gimbal.f64("yaw")?, pitch: gimbal.f64("pitch")? },
        grippers: [grippers.f64("left")?, grippers.f64("right")?],
    })
}
