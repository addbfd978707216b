//! The live simulator service: tracking in, robot state out.
//!
//! Tracking packets arrive from an optional upstream publisher and from any
//! client of the state stream (a browser page sends packets over the same
//! websocket it reads state from). They pass through the optional network
//! emulation into a delay line; every control period the loop takes the
//! newest packet that has come due, steps teleoperation and the simulated
//! robot, publishes the state, and optionally records an episode.

use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use serde_json::json;
use thiserror::Error;
use xrteleop_core::TrackingPacket;

use crate::codec::{decode_packet, encode_sim_state};
use crate::config::LoadedConfig;
use crate::episode::{EpisodeError, EpisodeMeta, EpisodeRecorder, Sample, DEFAULT_RATE_HZ};
use crate::netem::{Emulator, NetworkEmulation};
use crate::sim_loop::{Controller, VectorLayout};
use crate::stream::{now_ns, sleep_until, subscribe, InboundHandler, Publisher, PublisherConfig, Subscriber, SubscriberConfig};
use crate::transport::Transport;
use crate::ui::UiServer;

/// A source silent this long may restart its sequence numbering.
pub const SEQUENCE_RESET_AFTER: Duration = Duration::from_secs(1);
/// Episode recorder capacity: one hour at 50 Hz.
pub const RECORDER_CAPACITY: usize = 180_000;

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("cannot bind {what}: {source}")]
    Bind { what: &'static str, source: std::io::Error },
    #[error("episode: {0}")]
    Episode(#[from] EpisodeError),
    #[error("control loop panicked")]
    Panicked,
}

#[derive(Clone)]
pub struct ServeOptions {
    pub config: LoadedConfig,
    pub state_bind: String,
    pub state_transport: Transport,
    /// Upstream tracking publisher to subscribe to.
    pub tracking: Option<SubscriberConfig>,
    pub emulation: Option<NetworkEmulation>,
    pub record: Option<PathBuf>,
    /// Static directory and bind address for the browser client.
    pub ui: Option<(PathBuf, String)>,
    /// Stop on its own after this long.
    pub duration: Option<Duration>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ServeSummary {
    pub ticks: u64,
    pub fresh_packets: u64,
    /// Arrived packets not newer than one already used.
    pub stale_dropped: u64,
    pub emulated_lost: u64,
    pub step_failures: u64,
    pub episode_frames: usize,
}

struct DelayLine {
    emulator: Option<Emulator>,
    pending: Vec<(Instant, u64, TrackingPacket)>,
    arrivals: u64,
    lost: u64,
}

impl DelayLine {
    fn offer(&mut self, p: TrackingPacket) {
        let delay = match self.emulator.as_mut() {
            None => Some(Duration::ZERO),
            Some(e) => e.next_delay(),
        };
        match delay {
            Some(d) => {
                self.pending.push((Instant::now() + d, self.arrivals, p));
                self.arrivals += 1;
            }
            None => self.lost += 1,
        }
    }

    fn take_due(&mut self, now: Instant) -> Vec<TrackingPacket> {
        let (mut due, rest): (Vec<_>, Vec<_>) = self.pending.drain(..).partition(|(t, _, _)| *t <= now);
        self.pending = rest;
        due.sort_by_key(|(t, k, _)| (*t, *k));
        due.into_iter().map(|(_, _, p)| p).collect()
    }
}

pub struct Service {
    stop: Arc<AtomicBool>,
    state_addr: std::net::SocketAddr,
    ui_addr: Option<std::net::SocketAddr>,
    ticks: Arc<AtomicU64>,
    thread: Option<JoinHandle<Result<ServeSummary, ServeError>>>,
}

impl Service {
    pub fn start(opts: ServeOptions) -> Result<Self, ServeError> {
        let line = Arc::new(Mutex::new(DelayLine {
            emulator: opts.emulation.map(Emulator::new),
            pending: Vec::new(),
            arrivals: 0,
            lost: 0,
        }));
        let inbound: InboundHandler = {
            let line = line.clone();
            Arc::new(move |bytes: Vec<u8>| match decode_packet(&bytes) {
                Ok(p) => line.lock().unwrap().offer(p),
                Err(e) => log::warn!("rejected client packet: {e}"),
            })
        };
        let rate = opts.config.control_rate_hz;
        let pub_cfg = PublisherConfig::new(opts.state_bind.clone(), opts.state_transport, rate).with_inbound(inbound);
        let publisher = Publisher::bind(&pub_cfg).map_err(|source| ServeError::Bind { what: "state stream", source })?;
        let state_addr = publisher.local_addr();

        let ui = match &opts.ui {
            Some((dir, bind)) => {
                let transport = match opts.state_transport {
                    Transport::WebSocket => "websocket",
                    Transport::TcpFramed => "tcp_framed",
                };
                let cfg = json!({
                    "state_port": state_addr.port(),
                    "state_transport": transport,
                    "rate_hz": rate,
                    "convention": opts.config.teleop.convention.name(),
                    "chains": opts.config.urdf,
                    "initial": opts.config.initial.iter().map(|(k, q)| (k.clone(), q.as_slice().to_vec())).collect::<std::collections::BTreeMap<_, _>>(),
                });
                Some(UiServer::start(bind, dir.clone(), cfg).map_err(|source| ServeError::Bind { what: "UI server", source })?)
            }
            None => None,
        };
        let ui_addr = ui.as_ref().map(UiServer::local_addr);

        let subscriber: Option<Subscriber> = match &opts.tracking {
            Some(cfg) => {
                let line = line.clone();
                Some(
                    subscribe(cfg.clone(), move |p| line.lock().unwrap().offer(p), |e| log::warn!("tracking stream: {e}"))
                        .map_err(|source| ServeError::Bind { what: "tracking subscriber", source })?,
                )
            }
            None => None,
        };

        let stop = Arc::new(AtomicBool::new(false));
        let ticks = Arc::new(AtomicU64::new(0));
        let thread = {
            let stop = stop.clone();
            let ticks = ticks.clone();
            thread::Builder::new()
                .name("xrteleop-control".into())
                .spawn(move || {
                    let r = control_loop(&opts, &line, &publisher, &stop, &ticks);
                    drop(subscriber);
                    drop(ui);
                    r
                })
                .map_err(|source| ServeError::Bind { what: "control thread", source })?
        };
        Ok(Self { stop, state_addr, ui_addr, ticks, thread: Some(thread) })
    }

    pub fn state_addr(&self) -> std::net::SocketAddr {
        self.state_addr
    }

    pub fn ui_addr(&self) -> Option<std::net::SocketAddr> {
        self.ui_addr
    }

    pub fn ticks(&self) -> u64 {
        self.ticks.load(Ordering::Relaxed)
    }

    pub fn stop_handle(&self) -> Arc<AtomicBool> {
        self.stop.clone()
    }

    /// Ask the loop to stop and wait for its summary.
    pub fn shutdown(mut self) -> Result<ServeSummary, ServeError> {
        self.stop.store(true, Ordering::Release);
        self.join_inner()
    }

    /// Wait for the loop to end on its own.
    pub fn wait(mut self) -> Result<ServeSummary, ServeError> {
        self.join_inner()
    }

    fn join_inner(&mut self) -> Result<ServeSummary, ServeError> {
        match self.thread.take() {
            Some(t) => t.join().map_err(|_| ServeError::Panicked)?,
            None => Ok(ServeSummary::default()),
        }
    }
}

impl Drop for Service {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Release);
        let _ = self.join_inner();
    }
}

fn control_loop(
    opts: &ServeOptions,
    line: &Mutex<DelayLine>,
    publisher: &Publisher,
    stop: &AtomicBool,
    ticks: &AtomicU64,
) -> Result<ServeSummary, ServeError> {
    let cfg = &opts.config;
    let mut ctl = Controller::new(cfg);
    let layout = VectorLayout::new(&cfg.robot, &cfg.teleop);
    let mut recorder = match &opts.record {
        Some(_) => Some(EpisodeRecorder::new(
            EpisodeMeta {
                task: cfg.task.clone(),
                start_time_ns: now_ns() as i64,
                rate_hz: DEFAULT_RATE_HZ,
                state_labels: layout.state_labels(),
                command_labels: layout.command_labels(),
            },
            RECORDER_CAPACITY,
        )?),
        None => None,
    };
    let mut summary = ServeSummary::default();
    let period = Duration::from_secs_f64(1.0 / cfg.control_rate_hz);
    let start = Instant::now();
    let mut last_used: Option<u64> = None;
    let mut last_fresh = start;
    let mut k: u32 = 0;
    while !stop.load(Ordering::Acquire) && opts.duration.is_none_or(|d| start.elapsed() < d) {
        let now = Instant::now();
        let mut fresh: Option<TrackingPacket> = None;
        for p in line.lock().unwrap().take_due(now) {
            if last_used.is_some_and(|u| p.sequence <= u) && now.duration_since(last_fresh) > SEQUENCE_RESET_AFTER {
                log::info!("tracking source restarted at sequence {}", p.sequence);
                last_used = None;
            }
            let newer_than_used = last_used.is_none_or(|u| p.sequence > u);
            let newer_than_pending = fresh.as_ref().is_none_or(|f| p.sequence > f.sequence);
            if newer_than_used && newer_than_pending {
                if fresh.is_some() {
                    summary.stale_dropped += 1;
                }
                fresh = Some(p);
            } else {
                summary.stale_dropped += 1;
            }
        }
        if let Some(p) = &fresh {
            last_used = Some(p.sequence);
            last_fresh = now;
            summary.fresh_packets += 1;
        }
        let record = ctl.tick(fresh);
        summary.step_failures += record.failures.len() as u64;
        publisher.push(encode_sim_state(&record.state));
        if let Some(rec) = recorder.as_mut() {
            let sample = Sample {
                t_ns: start.elapsed().as_nanos() as i64,
                packet_ref: record.packet.unwrap_or(0),
                state: layout.state(&record.state),
                command: layout.command(&record.commands, &record.state),
            };
            if let Err(e) = rec.offer(sample) {
                log::error!("episode recording stopped: {e}");
                if let (Some(path), Some(rec)) = (&opts.record, recorder.take()) {
                    summary.episode_frames = rec.len();
                    rec.finish()?.save(path)?;
                }
            }
        }
        summary.ticks += 1;
        ticks.store(summary.ticks, Ordering::Relaxed);
        k += 1;
        let mut due = start + period * k;
        let after = Instant::now();
        if after > due + period * 2 {
            k = (after.duration_since(start).as_secs_f64() / period.as_secs_f64()).ceil() as u32;
            due = start + period * k;
        }
        sleep_until(due);
    }
    summary.emulated_lost = line.lock().unwrap().lost;
    if let (Some(path), Some(rec)) = (&opts.record, recorder) {
        summary.episode_frames = rec.len();
        if !rec.is_empty() {
            rec.finish()?.save(path)?;
        }
    }
    Ok(summary)
}
