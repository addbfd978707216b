//! Recorded episodes of robot state and commands on a fixed cadence.
//!
//! File layout, little-endian throughout:
//!
//! ```text
//! magic    b"XRTEPI" + version u16
//! header   u32 length, then canonical JSON {command_dim, command_labels,
//!          rate_hz, start_time_ns, state_dim, state_labels, task}
//! count    u64 frame count
//! frames   t_ns i64, packet_ref u64, state f64 × state_dim, command f64 × command_dim
//! ```

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stream::sleep_until;

pub const MAGIC: &[u8; 6] = b"XRTEPI";
pub const VERSION: u16 = 1;
pub const DEFAULT_RATE_HZ: f64 = 50.0;

#[derive(Debug, Error)]
pub enum EpisodeError {
    #[error("no samples to record")]
    EmptyStream,
    #[error("{stream} sample at t={t_ns} has {got} values, expected {expected}")]
    DimensionDrift { stream: &'static str, t_ns: i64, expected: usize, got: usize },
    #[error("recorder buffer full at {0} frames")]
    Overflow(usize),
    #[error("not an episode file")]
    BadMagic,
    #[error("unsupported episode version {0}")]
    UnsupportedVersion(u16),
    #[error("malformed episode header: {0}")]
    Header(String),
    #[error("episode file is truncated")]
    Truncated,
    #[error("rate must be positive")]
    InvalidRate,
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMeta {
    pub task: String,
    pub start_time_ns: i64,
    pub rate_hz: f64,
    pub state_labels: Vec<String>,
    pub command_labels: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeFrame {
    pub t_ns: i64,
    /// Sequence number of the tracking packet behind this frame.
    pub packet_ref: u64,
    pub state: Vec<f64>,
    pub command: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub meta: EpisodeMeta,
    pub state_dim: usize,
    pub command_dim: usize,
    pub frames: Vec<EpisodeFrame>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    task: String,
    start_time_ns: i64,
    rate_hz: f64,
    state_dim: usize,
    command_dim: usize,
    state_labels: Vec<String>,
    command_labels: Vec<String>,
}

impl Episode {
    pub fn write_to(&self, w: &mut impl Write) -> Result<(), EpisodeError> {
        let header = Header {
            task: self.meta.task.clone(),
            start_time_ns: self.meta.start_time_ns,
            rate_hz: self.meta.rate_hz,
            state_dim: self.state_dim,
            command_dim: self.command_dim,
            state_labels: self.meta.state_labels.clone(),
            command_labels: self.meta.command_labels.clone(),
        };
        // Through Value so keys come out sorted.
        let json = serde_json::to_vec(&serde_json::to_value(&header).map_err(|e| EpisodeError::Header(e.to_string()))?)
            .map_err(|e| EpisodeError::Header(e.to_string()))?;
        let mut buf = Vec::with_capacity(32 + json.len() + self.frames.len() * (16 + 8 * (self.state_dim + self.command_dim)));
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
        buf.extend_from_slice(&json);
        buf.extend_from_slice(&(self.frames.len() as u64).to_le_bytes());
        for f in &self.frames {
            check_dims(f, self.state_dim, self.command_dim)?;
            buf.extend_from_slice(&f.t_ns.to_le_bytes());
            buf.extend_from_slice(&f.packet_ref.to_le_bytes());
            for v in f.state.iter().chain(&f.command) {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, EpisodeError> {
        let mut v = Vec::new();
        self.write_to(&mut v)?;
        Ok(v)
    }

    pub fn save(&self, path: &Path) -> Result<(), EpisodeError> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, EpisodeError> {
        let mut r = bytes;
        let mut magic = [0u8; 6];
        read(&mut r, &mut magic)?;
        if &magic != MAGIC {
            return Err(EpisodeError::BadMagic);
        }
        let version = u16::from_le_bytes(take(&mut r)?);
        if version != VERSION {
            return Err(EpisodeError::UnsupportedVersion(version));
        }
        let len = u32::from_le_bytes(take(&mut r)?) as usize;
        if r.len() < len {
            return Err(EpisodeError::Truncated);
        }
        let (json, rest) = r.split_at(len);
        r = rest;
        let h: Header = serde_json::from_slice(json).map_err(|e| EpisodeError::Header(e.to_string()))?;
        if h.state_labels.len() != h.state_dim && !h.state_labels.is_empty()
            || h.command_labels.len() != h.command_dim && !h.command_labels.is_empty()
        {
            return Err(EpisodeError::Header("label count does not match dimension".into()));
        }
        let count = u64::from_le_bytes(take(&mut r)?) as usize;
        let frame_bytes = 16 + 8 * (h.state_dim + h.command_dim);
        if r.len() != count.checked_mul(frame_bytes).ok_or(EpisodeError::Truncated)? {
            return Err(EpisodeError::Truncated);
        }
        let mut frames = Vec::with_capacity(count);
        for _ in 0..count {
            let t_ns = i64::from_le_bytes(take(&mut r)?);
            let packet_ref = u64::from_le_bytes(take(&mut r)?);
            let mut vals = (0..h.state_dim + h.command_dim).map(|_| take(&mut r).map(f64::from_le_bytes));
            let state = vals.by_ref().take(h.state_dim).collect::<Result<Vec<_>, _>>()?;
            let command = vals.collect::<Result<Vec<_>, _>>()?;
            frames.push(EpisodeFrame { t_ns, packet_ref, state, command });
        }
        Ok(Episode {
            meta: EpisodeMeta {
                task: h.task,
                start_time_ns: h.start_time_ns,
                rate_hz: h.rate_hz,
                state_labels: h.state_labels,
                command_labels: h.command_labels,
            },
            state_dim: h.state_dim,
            command_dim: h.command_dim,
            frames,
        })
    }

    pub fn load(path: &Path) -> Result<Self, EpisodeError> {
        let mut bytes = Vec::new();
        fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

fn read(r: &mut &[u8], out: &mut [u8]) -> Result<(), EpisodeError> {
    if r.len() < out.len() {
        return Err(EpisodeError::Truncated);
    }
    let (head, rest) = r.split_at(out.len());
    out.copy_from_slice(head);
    *r = rest;
    Ok(())
}

fn take<const N: usize>(r: &mut &[u8]) -> Result<[u8; N], EpisodeError> {
    let mut b = [0u8; N];
    read(r, &mut b)?;
    Ok(b)
}

fn check_dims(f: &EpisodeFrame, state_dim: usize, command_dim: usize) -> Result<(), EpisodeError> {
    if f.state.len() != state_dim {
        return Err(EpisodeError::DimensionDrift { stream: "state", t_ns: f.t_ns, expected: state_dim, got: f.state.len() });
    }
    if f.command.len() != command_dim {
        return Err(EpisodeError::DimensionDrift {
            stream: "command",
            t_ns: f.t_ns,
            expected: command_dim,
            got: f.command.len(),
        });
    }
    Ok(())
}

/// One observation offered to the recorder.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub t_ns: i64,
    pub packet_ref: u64,
    pub state: Vec<f64>,
    pub command: Vec<f64>,
}

/// Resamples a live stream onto a fixed cadence, taking the most recent
/// sample at or before each tick.
#[derive(Debug)]
pub struct EpisodeRecorder {
    meta: EpisodeMeta,
    period_ns: i64,
    capacity: usize,
    dims: Option<(usize, usize)>,
    next_due: Option<i64>,
    last: Option<Sample>,
    frames: Vec<EpisodeFrame>,
}

impl EpisodeRecorder {
    /// `meta.start_time_ns` is overwritten by the first sample's time.
    pub fn new(meta: EpisodeMeta, capacity: usize) -> Result<Self, EpisodeError> {
        if !(meta.rate_hz > 0.0 && meta.rate_hz.is_finite()) {
            return Err(EpisodeError::InvalidRate);
        }
        let period_ns = (1e9 / meta.rate_hz).round() as i64;
        Ok(Self { meta, period_ns, capacity, dims: None, next_due: None, last: None, frames: Vec::new() })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn offer(&mut self, s: Sample) -> Result<(), EpisodeError> {
        let (sd, cd) = *self.dims.get_or_insert((s.state.len(), s.command.len()));
        check_dims(
            &EpisodeFrame { t_ns: s.t_ns, packet_ref: s.packet_ref, state: s.state.clone(), command: s.command.clone() },
            sd,
            cd,
        )?;
        let mut due = *self.next_due.get_or_insert_with(|| {
            self.meta.start_time_ns = s.t_ns;
            s.t_ns
        });
        if let Some(last) = self.last.take() {
            while due < s.t_ns {
                self.emit(due, &last)?;
                due += self.period_ns;
            }
        }
        if due == s.t_ns {
            self.emit(due, &s)?;
            due += self.period_ns;
        }
        self.next_due = Some(due);
        self.last = Some(s);
        Ok(())
    }

    fn emit(&mut self, t_ns: i64, s: &Sample) -> Result<(), EpisodeError> {
        if self.frames.len() >= self.capacity {
            return Err(EpisodeError::Overflow(self.capacity));
        }
        self.frames.push(EpisodeFrame { t_ns, packet_ref: s.packet_ref, state: s.state.clone(), command: s.command.clone() });
        Ok(())
    }

    pub fn finish(self) -> Result<Episode, EpisodeError> {
        let (state_dim, command_dim) = self.dims.ok_or(EpisodeError::EmptyStream)?;
        Ok(Episode { meta: self.meta, state_dim, command_dim, frames: self.frames })
    }
}

/// Resample a state stream and a command stream onto `meta.rate_hz`.
///
/// Both inputs must be sorted by time. Each frame holds the latest state and
/// the latest command at or before its tick; ticks run from the later of the
/// two first samples to the last sample of either stream.
pub fn record_episode(
    states: &[(i64, u64, Vec<f64>)],
    commands: &[(i64, Vec<f64>)],
    meta: EpisodeMeta,
) -> Result<Episode, EpisodeError> {
    if states.is_empty() || commands.is_empty() {
        return Err(EpisodeError::EmptyStream);
    }
    for (t, _, s) in states {
        if s.len() != states[0].2.len() {
            return Err(EpisodeError::DimensionDrift { stream: "state", t_ns: *t, expected: states[0].2.len(), got: s.len() });
        }
    }
    for (t, c) in commands {
        if c.len() != commands[0].1.len() {
            return Err(EpisodeError::DimensionDrift { stream: "command", t_ns: *t, expected: commands[0].1.len(), got: c.len() });
        }
    }
    let mut rec = EpisodeRecorder::new(meta, usize::MAX)?;
    let start = states[0].0.max(commands[0].0);
    let end = states[states.len() - 1].0.max(commands[commands.len() - 1].0);
    let (mut i, mut j) = (0, 0);
    let mut t = start;
    while t <= end {
        while i + 1 < states.len() && states[i + 1].0 <= t {
            i += 1;
        }
        while j + 1 < commands.len() && commands[j + 1].0 <= t {
            j += 1;
        }
        rec.offer(Sample { t_ns: t, packet_ref: states[i].1, state: states[i].2.clone(), command: commands[j].1.clone() })?;
        t += rec.period_ns;
    }
    rec.finish()
}

/// Emit frames in order, paced to their recorded cadence when `paced`.
/// Returns each frame's emission offset from the first one.
pub fn replay_episode(ep: &Episode, paced: bool, mut sink: impl FnMut(&EpisodeFrame)) -> Vec<Duration> {
    let Some(first) = ep.frames.first() else { return Vec::new() };
    let start = Instant::now();
    let mut offsets = Vec::with_capacity(ep.frames.len());
    for f in &ep.frames {
        if paced {
            sleep_until(start + Duration::from_nanos((f.t_ns - first.t_ns).max(0) as u64));
        }
        offsets.push(start.elapsed());
        sink(f);
    }
    offsets
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta() -> EpisodeMeta {
        EpisodeMeta { task: "t".into(), start_time_ns: 0, rate_hz: 50.0, state_labels: vec![], command_labels: vec![] }
    }

    #[test]
    fn recorder_picks_latest_older_sample() {
        let mut r = EpisodeRecorder::new(meta(), 100).unwrap();
        for (k, t) in [0i64, 15_000_000, 30_000_000, 41_000_000].into_iter().enumerate() {
            r.offer(Sample { t_ns: t, packet_ref: k as u64, state: vec![k as f64], command: vec![] }).unwrap();
        }
        let ep = r.finish().unwrap();
        let refs: Vec<_> = ep.frames.iter().map(|f| (f.t_ns, f.packet_ref)).collect();
        assert_eq!(refs, vec![(0, 0), (20_000_000, 1), (40_000_000, 2)]);
    }

    #[test]
    fn overflow_and_drift() {
        let mut r = EpisodeRecorder::new(meta(), 1).unwrap();
        let s = |t| Sample { t_ns: t, packet_ref: 0, state: vec![0.0], command: vec![] };
        r.offer(s(0)).unwrap();
        assert!(matches!(r.offer(s(20_000_000)), Err(EpisodeError::Overflow(1))));
        let mut r = EpisodeRecorder::new(meta(), 10).unwrap();
        r.offer(s(0)).unwrap();
        let bad = Sample { state: vec![0.0, 1.0], ..s(1) };
        assert!(matches!(r.offer(bad), Err(EpisodeError::DimensionDrift { .. })));
    }

    #[test]
    fn truncated_files_are_rejected() {
        let ep = record_episode(&[(0, 0, vec![1.0])], &[(0, vec![2.0])], meta()).unwrap();
        let bytes = ep.to_bytes().unwrap();
        assert_eq!(Episode::from_bytes(&bytes).unwrap(), ep);
        assert!(matches!(Episode::from_bytes(&bytes[..bytes.len() - 1]), Err(EpisodeError::Truncated)));
        assert!(matches!(Episode::from_bytes(b"nope"), Err(EpisodeError::Truncated)));
        assert!(matches!(Episode::from_bytes(b"XRTEPX\x01\x00"), Err(EpisodeError::BadMagic)));
    }
}
