//! End-to-end latency statistics over a window of sequence numbers.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LatencySample {
    pub sequence: u64,
    /// Sender clock.
    pub sent_ns: u64,
    /// Receiver clock.
    pub received_ns: u64,
}

/// Sequence numbers `first .. first + count`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SequenceWindow {
    pub first: u64,
    pub count: u64,
}

impl SequenceWindow {
    pub fn contains(&self, seq: u64) -> bool {
        seq >= self.first && seq - self.first < self.count
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LatencyReport {
    /// Distinct sequences received inside the window.
    pub samples: usize,
    pub mean_ms: f64,
    /// Population standard deviation.
    pub std_ms: f64,
    /// Nearest-rank 99th percentile.
    pub p99_ms: f64,
    pub loss_fraction: f64,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LatencyError {
    #[error("latency window is empty")]
    EmptyWindow,
    #[error("no samples were received inside the window")]
    AllLost,
}

/// Summarise one-way delays inside `window`.
///
/// `clock_offset_ns` is the receiver clock minus the sender clock. A sequence
/// received more than once counts at its first arrival.
pub fn measure_latency(
    samples: &[LatencySample],
    clock_offset_ns: i64,
    window: SequenceWindow,
) -> Result<LatencyReport, LatencyError> {
    if window.count == 0 {
        return Err(LatencyError::EmptyWindow);
    }
    let mut first_arrival: BTreeMap<u64, &LatencySample> = BTreeMap::new();
    for s in samples.iter().filter(|s| window.contains(s.sequence)) {
        first_arrival
            .entry(s.sequence)
            .and_modify(|e| {
                if s.received_ns < e.received_ns {
                    *e = s
                }
            })
            .or_insert(s);
    }
    if first_arrival.is_empty() {
        return Err(LatencyError::AllLost);
    }
    let mut delays: Vec<f64> = first_arrival
        .values()
        .map(|s| (s.received_ns as i128 - s.sent_ns as i128 - clock_offset_ns as i128) as f64 * 1e-6)
        .collect();
    let n = delays.len() as f64;
    let mean = delays.iter().sum::<f64>() / n;
    let var = delays.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n;
    delays.sort_by(f64::total_cmp);
    let rank = ((0.99 * n).ceil() as usize).clamp(1, delays.len());
    Ok(LatencyReport {
        samples: delays.len(),
        mean_ms: mean,
        std_ms: var.sqrt(),
        p99_ms: delays[rank - 1],
        loss_fraction: 1.0 - n / window.count as f64,
    })
}
