//! Seeded network impairment: per-packet delay and loss.

use std::str::FromStr;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DelayModel {
    Constant(Duration),
    /// Uniform on `[lo, hi]`.
    Uniform(Duration, Duration),
}

/// Parsed from `key=value` pairs separated by commas, e.g.
/// `delay=10ms,drop=0.2,seed=7`, `delay=5..15ms` or `delay=uniform[5,15]ms`. `none` means no impairment.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NetworkEmulation {
    pub delay: DelayModel,
    pub drop: f64,
    pub seed: u64,
}

impl Default for NetworkEmulation {
    fn default() -> Self {
        Self { delay: DelayModel::Constant(Duration::ZERO), drop: 0.0, seed: 0 }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("invalid emulation spec `{spec}`: {reason}")]
pub struct EmulationParseError {
    pub spec: String,
    pub reason: String,
}

fn parse_ms(s: &str) -> Option<Duration> {
    let v: f64 = s.trim().trim_end_matches("ms").trim().parse().ok()?;
    (v >= 0.0 && v.is_finite()).then(|| Duration::from_secs_f64(v * 1e-3))
}

/// Split on commas outside square brackets.
fn split_top_level(s: &str) -> Vec<&str> {
    let mut parts = Vec::new();
    let (mut depth, mut start) = (0i32, 0);
    for (i, c) in s.char_indices() {
        match c {
            '[' => depth += 1,
            ']' => depth -= 1,
            ',' if depth == 0 => {
                parts.push(&s[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    parts.push(&s[start..]);
    parts
}

impl FromStr for NetworkEmulation {
    type Err = EmulationParseError;

    fn from_str(spec: &str) -> Result<Self, Self::Err> {
        let err = |reason: &str| EmulationParseError { spec: spec.to_string(), reason: reason.to_string() };
        let mut out = NetworkEmulation::default();
        let trimmed = spec.trim();
        if trimmed.is_empty() || trimmed == "none" {
            return Ok(out);
        }
        for part in split_top_level(trimmed) {
            let (key, value) = part.split_once('=').ok_or_else(|| err("expected key=value"))?;
            match key.trim() {
                "delay" => {
                    let value = value.trim();
                    // Bracket forms may carry the unit outside: `uniform[5,15]ms`.
                    let value = value.strip_suffix("]ms").map_or(value.to_string(), |v| format!("{v}]"));
                    let value = value.as_str();
                    let value = if let Some(r) = value.strip_prefix("uniform[").and_then(|r| r.strip_suffix(']')) {
                        r.replacen(',', "..", 1)
                    } else if let Some(r) = value.strip_prefix("constant[").and_then(|r| r.strip_suffix(']')) {
                        r.to_string()
                    } else {
                        value.to_string()
                    };
                    out.delay = match value.trim_end_matches("ms").split_once("..") {
                        Some((lo, hi)) => {
                            let lo = parse_ms(lo).ok_or_else(|| err("bad delay bound"))?;
                            let hi = parse_ms(hi).ok_or_else(|| err("bad delay bound"))?;
                            if lo > hi {
                                return Err(err("delay range is reversed"));
                            }
                            DelayModel::Uniform(lo, hi)
                        }
                        None => DelayModel::Constant(parse_ms(&value).ok_or_else(|| err("bad delay"))?),
                    };
                }
                "drop" => {
                    let p: f64 = value.trim().parse().map_err(|_| err("bad drop probability"))?;
                    if !(0.0..1.0).contains(&p) {
                        return Err(err("drop probability must be in [0, 1)"));
                    }
                    out.drop = p;
                }
                "seed" => out.seed = value.trim().parse().map_err(|_| err("bad seed"))?,
                other => return Err(err(&format!("unknown key `{other}`"))),
            }
        }
        Ok(out)
    }
}

/// Per-packet fate drawn from a seeded generator.
#[derive(Clone, Debug)]
pub struct Emulator {
    cfg: NetworkEmulation,
    rng: ChaCha8Rng,
}

impl Emulator {
    pub fn new(cfg: NetworkEmulation) -> Self {
        Self { cfg, rng: ChaCha8Rng::seed_from_u64(cfg.seed) }
    }

    /// Delay for the next packet, or `None` if it is lost. Both draws are
    /// always taken so a packet's fate depends only on its index.
    pub fn next_delay(&mut self) -> Option<Duration> {
        let lost = self.rng.random::<f64>() < self.cfg.drop;
        let u: f64 = self.rng.random();
        let delay = match self.cfg.delay {
            DelayModel::Constant(d) => d,
            DelayModel::Uniform(lo, hi) => lo + (hi - lo).mul_f64(u),
        };
        (!lost).then_some(delay)
    }
}
