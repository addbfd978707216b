//! Closed teleoperation loop against the simulated robot.
//!
//! [`run_session`] replays a recorded session on a virtual clock: each packet
//! arrives at its send time plus an emulated delay (or never), and the
//! control loop ticks at the configured rate using the newest packet that has
//! arrived. A packet older than one already used is never acted on.

use std::collections::BTreeMap;
use std::io::{self, Write};

use serde_json::{json, Map, Value};
use xrteleop_core::pose::{rotation_exp, rotation_log, Pose};
use xrteleop_core::protocol::{pose_to_pose7, Side};
use xrteleop_core::sim::{sim_step, SimState};
use xrteleop_core::teleop::{step, CommandKind};
use xrteleop_core::{Robot, RobotCommand, TeleopConfig, TeleopState, TrackingPacket};

use crate::codec::sim_state_to_value;
use crate::config::LoadedConfig;
use crate::episode::{Episode, EpisodeError, EpisodeMeta, EpisodeRecorder, Sample, DEFAULT_RATE_HZ};
use crate::netem::{Emulator, NetworkEmulation};

#[derive(Clone, Debug, PartialEq)]
pub struct TickRecord {
    pub t_ns: u64,
    /// Sequence of the packet the step consumed.
    pub packet: Option<u64>,
    /// Whether that packet had not been used by an earlier tick.
    pub fresh: bool,
    pub commands: Vec<RobotCommand>,
    pub failures: Vec<String>,
    /// State after applying `commands`.
    pub state: SimState,
    /// End-effector pose per arm mapping, keyed `chain/frame`, after the step.
    pub ee: BTreeMap<String, Pose>,
    pub targets: BTreeMap<String, Pose>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SessionRun {
    pub ticks: Vec<TickRecord>,
    /// Packets dropped by the emulated network.
    pub lost: usize,
    /// Arrived packets never used because a newer one was already in hand.
    pub superseded: usize,
}

/// Live loop state shared by the offline runner and the service.
pub struct Controller {
    pub robot: Robot,
    pub cfg: TeleopConfig,
    pub teleop: TeleopState,
    pub sim: SimState,
    pub dt: f64,
    /// Longest gap bridged by pose prediction, in seconds.
    pub max_prediction_s: f64,
    last: Option<TrackingPacket>,
    prev: Option<TrackingPacket>,
    missed: u32,
}

impl Controller {
    pub fn new(loaded: &LoadedConfig) -> Self {
        let mut sim = SimState::new(&loaded.robot);
        for (id, q) in &loaded.initial {
            sim.chains.insert(id.clone(), q.clone());
        }
        Self {
            robot: loaded.robot.clone(),
            cfg: loaded.teleop.clone(),
            teleop: TeleopState::new(&loaded.teleop),
            sim,
            dt: 1.0 / loaded.control_rate_hz,
            max_prediction_s: 0.1,
            last: None,
            prev: None,
            missed: 0,
        }
    }

    pub fn last_packet(&self) -> Option<&TrackingPacket> {
        self.last.as_ref()
    }

    /// One control period. `fresh` replaces the held packet; with no packet
    /// at all the robot only advances time. While packets are missing,
    /// controller and tracker poses are predicted at constant velocity from
    /// the last two packets for up to `max_prediction_s`.
    pub fn tick(&mut self, fresh: Option<TrackingPacket>) -> TickRecord {
        let is_fresh = fresh.is_some();
        if let Some(p) = fresh {
            self.prev = self.last.replace(p);
            self.missed = 0;
        } else {
            self.missed = self.missed.saturating_add(1);
        }
        let mut commands = Vec::new();
        let mut failures = Vec::new();
        let input = match (&self.prev, &self.last) {
            (Some(prev), Some(last)) if self.missed > 0 => {
                let ahead = (self.missed as f64 * self.dt).min(self.max_prediction_s);
                Some(predict(prev, last, ahead))
            }
            (_, last) => last.clone(),
        };
        if let Some(p) = &input {
            let out = step(p, &self.teleop, &self.cfg, &self.robot, &self.sim.chains);
            for c in out.commands {
                match c {
                    Ok(cmd) => commands.push(cmd),
                    Err(f) => failures.push(format!("{}/{}: {}", kind_name(f.kind), f.target, f.error)),
                }
            }
            self.teleop = out.state;
        }
        for f in &failures {
            log::warn!("step failure: {f}");
        }
        self.sim = match sim_step(&self.sim, &commands, self.dt, &self.robot) {
            Ok(s) => s,
            Err(e) => {
                failures.push(format!("sim: {e}"));
                sim_step(&self.sim, &[], self.dt, &self.robot).expect("dt validated at load")
            }
        };
        let mut targets = BTreeMap::new();
        for c in &commands {
            if let RobotCommand::ArmVelocity { chain, targets: t, .. } = c {
                for (frame, pose) in t {
                    targets.insert(format!("{chain}/{frame}"), *pose);
                }
            }
        }
        TickRecord {
            t_ns: self.sim.time_ns,
            packet: self.last.as_ref().map(|p| p.sequence),
            fresh: is_fresh,
            commands,
            failures,
            ee: self.ee_poses(),
            targets,
            state: self.sim.clone(),
        }
    }

    pub fn ee_poses(&self) -> BTreeMap<String, Pose> {
        let mut out = BTreeMap::new();
        for a in &self.cfg.arms {
            if let (Some(c), Some(q)) = (self.robot.chain(&a.chain), self.sim.chains.get(&a.chain)) {
                if let Ok(p) = c.forward_kinematics(q, &a.ee_frame) {
                    out.insert(format!("{}/{}", a.chain, a.ee_frame), p);
                }
            }
        }
        out
    }
}

/// `last` with its controller and tracker poses carried `ahead_s` further
/// along the motion between `prev` and `last`. Everything else is held.
pub fn predict(prev: &TrackingPacket, last: &TrackingPacket, ahead_s: f64) -> TrackingPacket {
    let mut out = last.clone();
    let span = last.timestamp_ns.saturating_sub(prev.timestamp_ns) as f64 * 1e-9;
    if span <= 0.0 || ahead_s <= 0.0 {
        return out;
    }
    let k = ahead_s / span;
    let extend = |a: &Pose, b: &Pose| {
        let dw = rotation_log(&(b.orientation * a.orientation.inverse()));
        Pose::new(b.position + (b.position - a.position) * k, rotation_exp(&(dw * k)) * b.orientation)
    };
    for side in Side::BOTH {
        if let (Some(a), Some(b)) = (prev.controller(side), out.controller_mut(side).as_mut()) {
            b.pose = extend(&a.pose, &b.pose);
        }
    }
    for t in &mut out.trackers {
        if let Some(a) = prev.trackers.iter().find(|a| a.serial == t.serial) {
            t.pose = extend(&a.pose, &t.pose);
        }
    }
    out
}

fn kind_name(k: CommandKind) -> &'static str {
    match k {
        CommandKind::Arm => "arm",
        CommandKind::Hand => "hand",
        CommandKind::Base => "base",
        CommandKind::Gimbal => "gimbal",
        CommandKind::Gripper => "gripper",
    }
}

/// Replay `packets` through the loop. Send times are the packet timestamps
/// relative to the first packet; the run lasts until the last possible
/// arrival.
pub fn run_session(packets: &[TrackingPacket], loaded: &LoadedConfig, emulation: Option<NetworkEmulation>) -> SessionRun {
    let mut ctl = Controller::new(loaded);
    let t0 = packets.first().map_or(0, |p| p.timestamp_ns);
    let mut emu = emulation.map(Emulator::new);
    let mut arrivals: Vec<(u64, usize)> = Vec::with_capacity(packets.len());
    let mut lost = 0;
    for (i, p) in packets.iter().enumerate() {
        let sent = p.timestamp_ns.saturating_sub(t0);
        match emu.as_mut().map_or(Some(std::time::Duration::ZERO), Emulator::next_delay) {
            Some(d) => arrivals.push((sent + d.as_nanos() as u64, i)),
            None => lost += 1,
        }
    }
    arrivals.sort();
    let end = arrivals.last().map_or(0, |a| a.0);
    let mut ticks = Vec::new();
    let mut next = 0;
    let mut used: Option<u64> = None;
    let mut superseded = 0;
    let rate = loaded.control_rate_hz;
    let mut k = 0u64;
    loop {
        let t = (k as f64 * 1e9 / rate).round() as u64;
        let mut newest: Option<usize> = None;
        while next < arrivals.len() && arrivals[next].0 <= t {
            let i = arrivals[next].1;
            let seq = packets[i].sequence;
            let newer_than_used = used.is_none_or(|u| seq > u);
            let newer_than_pending = newest.is_none_or(|n| seq > packets[n].sequence);
            if newer_than_used && newer_than_pending {
                if newest.is_some() {
                    superseded += 1;
                }
                newest = Some(i);
            } else {
                superseded += 1;
            }
            next += 1;
        }
        let fresh = newest.map(|i| {
            used = Some(packets[i].sequence);
            packets[i].clone()
        });
        ticks.push(ctl.tick(fresh));
        if t >= end {
            break;
        }
        k += 1;
    }
    SessionRun { ticks, lost, superseded }
}

fn pose_value(p: &Pose) -> Value {
    Value::from(pose_to_pose7(p).to_vec())
}

pub fn command_to_value(c: &RobotCommand) -> Value {
    match c {
        RobotCommand::ArmVelocity { chain, qdot, targets } => json!({
            "type": "arm_velocity",
            "chain": chain,
            "qdot": qdot.as_slice(),
            "targets": targets.iter().map(|(f, p)| json!({"frame": f, "pose": pose_value(p)})).collect::<Vec<_>>(),
        }),
        RobotCommand::HandConfig { chain, q } => json!({"type": "hand_config", "chain": chain, "q": q.as_slice()}),
        RobotCommand::BaseVelocity(v) => json!({"type": "base_velocity", "vx": v.vx, "vy": v.vy, "wz": v.wz}),
        RobotCommand::GimbalAngles(g) => json!({"type": "gimbal_angles", "yaw": g.yaw, "pitch": g.pitch}),
        RobotCommand::Gripper { side, value } => json!({"type": "gripper", "side": side.as_str(), "value": value}),
    }
}

impl TickRecord {
    pub fn to_value(&self) -> Value {
        let poses = |m: &BTreeMap<String, Pose>| Value::Object(m.iter().map(|(k, p)| (k.clone(), pose_value(p))).collect::<Map<_, _>>());
        json!({
            "t": self.t_ns,
            "packet": self.packet,
            "fresh": self.fresh,
            "commands": self.commands.iter().map(command_to_value).collect::<Vec<_>>(),
            "failures": self.failures,
            "state": sim_state_to_value(&self.state),
            "ee": poses(&self.ee),
            "targets": poses(&self.targets),
        })
    }
}

impl SessionRun {
    /// One JSON object per tick, newline-terminated.
    pub fn write_trace(&self, w: &mut impl Write) -> io::Result<()> {
        for t in &self.ticks {
            serde_json::to_writer(&mut *w, &t.to_value())?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn trace_bytes(&self) -> Vec<u8> {
        let mut v = Vec::new();
        self.write_trace(&mut v).expect("writing to memory");
        v
    }

    /// Resample the run into an episode at 50 Hz.
    pub fn to_episode(&self, task: &str, robot: &Robot, cfg: &TeleopConfig) -> Result<Episode, EpisodeError> {
        let layout = VectorLayout::new(robot, cfg);
        let meta = EpisodeMeta {
            task: task.to_string(),
            start_time_ns: 0,
            rate_hz: DEFAULT_RATE_HZ,
            state_labels: layout.state_labels(),
            command_labels: layout.command_labels(),
        };
        let mut rec = EpisodeRecorder::new(meta, usize::MAX)?;
        for t in &self.ticks {
            rec.offer(Sample {
                t_ns: t.t_ns as i64,
                packet_ref: t.packet.unwrap_or(0),
                state: layout.state(&t.state),
                command: layout.command(&t.commands, &t.state),
            })?;
        }
        rec.finish()
    }
}

/// Flattening of robot state and commands into fixed-length vectors.
#[derive(Clone, Debug)]
pub struct VectorLayout {
    chains: Vec<(String, usize)>,
    arm_chains: Vec<String>,
    hand_chains: Vec<String>,
    base: bool,
    gimbal: bool,
    grippers: Vec<xrteleop_core::protocol::Side>,
}

impl VectorLayout {
    pub fn new(robot: &Robot, cfg: &TeleopConfig) -> Self {
        let mut arm_chains: Vec<String> = cfg.arms.iter().map(|a| a.chain.clone()).chain(cfg.trackers.iter().map(|t| t.chain.clone())).collect();
        arm_chains.sort();
        arm_chains.dedup();
        let mut hand_chains: Vec<String> = cfg.hands.iter().map(|h| h.chain.clone()).collect();
        hand_chains.sort();
        hand_chains.dedup();
        Self {
            chains: robot.chains().map(|(id, c)| (id.clone(), c.dof())).collect(),
            arm_chains,
            hand_chains,
            base: cfg.base.is_some(),
            gimbal: cfg.gimbal.is_some(),
            grippers: cfg.grippers.clone(),
        }
    }

    fn dof(&self, chain: &str) -> usize {
        self.chains.iter().find(|(id, _)| id == chain).map_or(0, |c| c.1)
    }

    pub fn state_labels(&self) -> Vec<String> {
        let mut l: Vec<String> = self.chains.iter().flat_map(|(id, n)| (0..*n).map(move |i| format!("{id}.q{i}"))).collect();
        l.extend(["base.x", "base.y", "base.heading", "gimbal.yaw", "gimbal.pitch", "gripper.left", "gripper.right"].map(String::from));
        l
    }

    pub fn state(&self, s: &SimState) -> Vec<f64> {
        let mut v: Vec<f64> = self
            .chains
            .iter()
            .flat_map(|(id, n)| s.chains.get(id).map_or(vec![0.0; *n], |q| q.as_slice().to_vec()))
            .collect();
        v.extend([s.base.x, s.base.y, s.base.heading, s.gimbal.yaw, s.gimbal.pitch, s.grippers[0], s.grippers[1]]);
        v
    }

    pub fn command_labels(&self) -> Vec<String> {
        let mut l = Vec::new();
        for id in &self.arm_chains {
            l.extend((0..self.dof(id)).map(|i| format!("{id}.qdot{i}")));
        }
        for id in &self.hand_chains {
            l.extend((0..self.dof(id)).map(|i| format!("{id}.q{i}")));
        }
        if self.base {
            l.extend(["base.vx", "base.vy", "base.wz"].map(String::from));
        }
        if self.gimbal {
            l.extend(["gimbal.yaw", "gimbal.pitch"].map(String::from));
        }
        l.extend(self.grippers.iter().map(|s| format!("gripper.{}", s.as_str())));
        l
    }

    /// Missing arm commands read as zero velocity; missing set points hold the current state.
    pub fn command(&self, cmds: &[RobotCommand], s: &SimState) -> Vec<f64> {
        let mut v = Vec::new();
        for id in &self.arm_chains {
            let qdot = cmds.iter().find_map(|c| match c {
                RobotCommand::ArmVelocity { chain, qdot, .. } if chain == id => Some(qdot.as_slice().to_vec()),
                _ => None,
            });
            v.extend(qdot.unwrap_or_else(|| vec![0.0; self.dof(id)]));
        }
        for id in &self.hand_chains {
            let q = cmds.iter().find_map(|c| match c {
                RobotCommand::HandConfig { chain, q } if chain == id => Some(q.as_slice().to_vec()),
                _ => None,
            });
            v.extend(q.unwrap_or_else(|| s.chains.get(id).map_or(vec![0.0; self.dof(id)], |q| q.as_slice().to_vec())));
        }
        if self.base {
            let b = cmds.iter().find_map(|c| match c {
                RobotCommand::BaseVelocity(b) => Some([b.vx, b.vy, b.wz]),
                _ => None,
            });
            v.extend(b.unwrap_or([0.0; 3]));
        }
        if self.gimbal {
            v.extend([s.gimbal.yaw, s.gimbal.pitch]);
        }
        for side in &self.grippers {
            v.push(s.grippers[side.index()]);
        }
        v
    }
}
