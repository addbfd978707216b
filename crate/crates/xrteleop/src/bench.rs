//! Loopback latency benchmark: publisher, subscriber and an emulated link.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::sync::mpsc;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::codec::decode_packet;
use crate::latency::{measure_latency, LatencyError, LatencyReport, LatencySample, SequenceWindow};
use crate::netem::{Emulator, NetworkEmulation};
use crate::scripts::CONTROLLER_HOME;
use crate::stream::{now_ns, publish, subscribe_with, PublisherConfig, SubscriberConfig};
use crate::transport::Transport;
use xrteleop_core::{Pose, TrackingPacket};

#[derive(Clone, Debug)]
pub struct BenchOptions {
    pub transport: Transport,
    pub rate_hz: f64,
    /// Packets measured after the warm-up.
    pub packets: u64,
    /// Packets published before the measured window.
    pub warmup: u64,
    pub emulation: Option<NetworkEmulation>,
}

impl BenchOptions {
    pub fn new(transport: Transport, rate_hz: f64, packets: u64) -> Self {
        Self { transport, rate_hz, packets, warmup: (rate_hz * 0.5).ceil() as u64, emulation: None }
    }
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Latency(#[from] LatencyError),
}

fn probe_packet() -> TrackingPacket {
    let mut p = TrackingPacket::default();
    let [x, y, z] = CONTROLLER_HOME;
    p.head.pose = Pose::from_translation(x, y, z);
    p
}

/// Publish on loopback, pass arrivals through the emulated link, and report
/// one-way delay over the measured window. Sender and receiver share a clock.
pub fn run_latency_bench(opts: &BenchOptions) -> Result<LatencyReport, BenchError> {
    let total = opts.warmup + opts.packets + (opts.rate_hz * 0.2).ceil() as u64;
    let (tx, rx) = mpsc::channel::<(Instant, LatencySample)>();
    let samples = Arc::new(Mutex::new(Vec::new()));
    let releaser = {
        let samples = samples.clone();
        thread::spawn(move || {
            let mut heap: BinaryHeap<Reverse<(Instant, u64, u64)>> = BinaryHeap::new();
            let mut open = true;
            loop {
                while let Some(Reverse((t, sequence, sent_ns))) = heap.peek().copied() {
                    if t > Instant::now() {
                        break;
                    }
                    heap.pop();
                    samples.lock().unwrap().push(LatencySample { sequence, sent_ns, received_ns: now_ns() });
                }
                let next = heap.peek().map(|Reverse((t, _, _))| t.saturating_duration_since(Instant::now()));
                let got = match (open, next) {
                    (false, None) => break,
                    (false, Some(w)) => {
                        thread::sleep(w);
                        continue;
                    }
                    (true, None) => rx.recv().map_err(|_| mpsc::RecvTimeoutError::Disconnected),
                    (true, Some(w)) => rx.recv_timeout(w),
                };
                match got {
                    Ok((due, s)) => heap.push(Reverse((due, s.sequence, s.sent_ns))),
                    Err(mpsc::RecvTimeoutError::Timeout) => {}
                    Err(mpsc::RecvTimeoutError::Disconnected) => open = false,
                }
            }
        })
    };

    let mut emitted = 0u64;
    let mut publisher = publish(
        move || {
            emitted += 1;
            (emitted <= total).then(probe_packet)
        },
        &PublisherConfig::new("127.0.0.1:0", opts.transport, opts.rate_hz),
    )?;
    let link = Mutex::new(opts.emulation.map(Emulator::new));
    let tx = Mutex::new(tx);
    let mut sub_cfg = SubscriberConfig::new(publisher.local_addr().to_string(), opts.transport);
    sub_cfg.max_retries = Some(3);
    let subscriber = subscribe_with(
        sub_cfg,
        move |bytes| {
            let arrived = Instant::now();
            let p = decode_packet(bytes)?;
            let delay = match link.lock().unwrap().as_mut() {
                None => Some(Duration::ZERO),
                Some(e) => e.next_delay(),
            };
            if let Some(d) = delay {
                let s = LatencySample { sequence: p.sequence, sent_ns: p.timestamp_ns, received_ns: 0 };
                let _ = tx.lock().unwrap().send((arrived + d, s));
            }
            Ok((p.sequence, ()))
        },
        |_| {},
        |e| log::warn!("bench subscriber: {e}"),
    )?;
    let budget = Duration::from_secs_f64(total as f64 / opts.rate_hz + 5.0);
    publisher.wait_finished(budget);
    thread::sleep(Duration::from_millis(300));
    drop(subscriber);
    publisher.stop();
    let _ = releaser.join();
    let samples = samples.lock().unwrap();
    Ok(measure_latency(&samples, 0, SequenceWindow { first: opts.warmup, count: opts.packets })?)
}
