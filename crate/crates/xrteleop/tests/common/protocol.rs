//! Protocol checks shared by the protocol suite and the acceptance run.

use std::fs;

use rand::Rng;
use serde_json::Value;
use xrteleop::codec::{decode_packet, encode_packet, packet_to_value, CodecError};
use xrteleop_core::protocol::{HandMode, HandState, TrackingStatus};
use xrteleop_core::TrackingPacket;

use super::{assets, full_packet, rng};

pub fn schema() -> jsonschema::Validator {
    let text = fs::read_to_string(assets().join("schema/tracking_packet.schema.json")).unwrap();
    jsonschema::validator_for(&serde_json::from_str(&text).unwrap()).unwrap()
}

pub fn golden_valid() -> Vec<(&'static str, TrackingPacket)> {
    let mut hand = full_packet(3);
    hand.head.hand_mode = HandMode::Hand;
    hand.left_controller = None;
    hand.right_controller = None;
    hand.left_hand = Some(HandState::inactive());
    let mut lost = TrackingPacket { sequence: 7, timestamp_ns: 1_700_000_000_000_000_000, ..Default::default() };
    lost.head.status = TrackingStatus::Unreliable;
    lost.head.hand_mode = HandMode::None;
    vec![("minimal", TrackingPacket::default()), ("full", full_packet(1)), ("hand_tracking", hand), ("head_lost", lost)]
}

/// Every field in the XR tracking table, as a JSON path with `*` for array items.
pub const TABLE_FIELDS: &[&str] = &[
    "Head.pose",
    "Head.status",
    "Head.handMode",
    "Controller.left.pose",
    "Controller.left.axisX",
    "Controller.left.axisY",
    "Controller.left.axisClick",
    "Controller.left.grip",
    "Controller.left.trigger",
    "Controller.left.primaryButton",
    "Controller.left.secondaryButton",
    "Controller.left.menuButton",
    "Controller.right.pose",
    "Controller.right.axisX",
    "Controller.right.axisY",
    "Controller.right.axisClick",
    "Controller.right.grip",
    "Controller.right.trigger",
    "Controller.right.primaryButton",
    "Controller.right.secondaryButton",
    "Controller.right.menuButton",
    "Hand.left.isActive",
    "Hand.left.scale",
    "Hand.left.HandJointLocations",
    "Hand.right.isActive",
    "Hand.right.scale",
    "Hand.right.HandJointLocations",
    "Body.joints",
    "MotionTracker.*.p",
    "MotionTracker.*.va",
    "MotionTracker.*.wva",
    "MotionTracker.*.sn",
];

pub fn lookup<'a>(v: &'a mut Value, path: &[&str]) -> Option<&'a mut Value> {
    let (head, rest) = path.split_first()?;
    let next = if *head == "*" { v.get_mut(0)? } else { v.get_mut(*head)? };
    if rest.is_empty() {
        Some(next)
    } else {
        lookup(next, rest)
    }
}

/// A field is in the schema, on the wire, and required by both the schema and the decoder.
pub fn check_table_field(field: &str, schema: &jsonschema::Validator) -> Result<(), String> {
    let encoded = packet_to_value(&full_packet(5)).unwrap();
    let schema_text = fs::read_to_string(assets().join("schema/tracking_packet.schema.json")).unwrap();
    let path: Vec<&str> = field.split('.').collect();
    let leaf = path.last().unwrap();
    if !schema_text.contains(&format!("\"{leaf}\"")) {
        return Err(format!("{field} missing from schema"));
    }
    let mut v = encoded.clone();
    if lookup(&mut v, &path).is_none() {
        return Err(format!("{field} not encoded"));
    }
    let (parent, key) = path.split_at(path.len() - 1);
    let mut v = encoded.clone();
    lookup(&mut v, parent).unwrap().as_object_mut().unwrap().remove(key[0]);
    match decode_packet(serde_json::to_string(&v).unwrap().as_bytes()) {
        Err(CodecError::SchemaViolation { .. }) => {}
        other => return Err(format!("{field}: decoding without it gave {other:?}")),
    }
    if schema.is_valid(&v) {
        return Err(format!("{field}: schema accepts a packet without it"));
    }
    let mut v = encoded;
    *lookup(&mut v, &path).unwrap() = serde_json::json!({ "wrong": true });
    if decode_packet(serde_json::to_string(&v).unwrap().as_bytes()).is_ok() {
        return Err(format!("{field}: wrong type accepted"));
    }
    Ok(())
}

/// Random bytes, truncations, byte flips and token splices of valid packets.
pub fn fuzz_input(r: &mut impl Rng, corpus: &[Vec<u8>]) -> Vec<u8> {
    const TOKENS: &[&[u8]] = &[b"null", b"-1e999", b"1e400", b"NaN", b"\"", b"[", b"]", b"{", b"}", b",", b"\"\\u0000\"", b"true", b"18446744073709551616", b"-0"];
    let base = &corpus[r.random_range(0..corpus.len())];
    match r.random_range(0..5) {
        0 => {
            let mut v = vec![0u8; r.random_range(0..64)];
            r.fill_bytes(&mut v);
            v
        }
        1 => base[..r.random_range(0..=base.len())].to_vec(),
        2 => {
            let mut v = base.clone();
            for _ in 0..r.random_range(1..4) {
                let i = r.random_range(0..v.len());
                v[i] ^= 1 << r.random_range(0..8);
            }
            v
        }
        3 => {
            let mut v = base.clone();
            let i = r.random_range(0..v.len());
            let j = (i + r.random_range(0..16)).min(v.len());
            v.splice(i..j, TOKENS[r.random_range(0..TOKENS.len())].iter().copied());
            v
        }
        _ => {
            // Swap a numeric literal for an out-of-range one.
            let s = String::from_utf8_lossy(base).into_owned();
            let bad = ["-0.2", "1.5", "2", "-7", "1e308", "3"][r.random_range(0..6)];
            let digits: Vec<usize> = s.match_indices(|c: char| c.is_ascii_digit()).map(|(i, _)| i).collect();
            let i = digits[r.random_range(0..digits.len())];
            let end = s[i..].find(|c: char| !(c.is_ascii_digit() || c == '.' || c == 'e' || c == '-')).map_or(s.len(), |k| i + k);
            format!("{}{}{}", &s[..i], bad, &s[end..]).into_bytes()
        }
    }
}

/// Decode `n` fuzzed inputs; returns (accepted, rejected). Panics propagate.
pub fn fuzz_decode(n: u32, seed: u64) -> (u32, u32) {
    let mut r = rng(seed);
    let corpus: Vec<Vec<u8>> = golden_valid().iter().map(|(_, p)| encode_packet(p).unwrap()).collect();
    let small: Vec<Vec<u8>> = corpus.iter().filter(|c| c.len() < 4096).cloned().collect();
    let (mut ok, mut err) = (0u32, 0u32);
    for i in 0..n {
        // The large corpus entries are slow to parse; use them sparingly.
        let pool = if i % 64 == 0 { &corpus } else { &small };
        match decode_packet(&fuzz_input(&mut r, pool)) {
            Ok(p) => {
                ok += 1;
                assert!(p.validate().is_ok());
            }
            Err(_) => err += 1,
        }
    }
    (ok, err)
}

/// Encode/decode round trips of `n` random packets; the first mismatch is an error.
pub fn round_trips(n: u64, seed: u64) -> Result<(), String> {
    for k in 0..n {
        let p = super::random_packet(&mut rng(seed.wrapping_add(k)));
        let bytes = encode_packet(&p).map_err(|e| e.to_string())?;
        let back = decode_packet(&bytes).map_err(|e| format!("packet {k}: {e}"))?;
        if back != p || encode_packet(&back).unwrap() != bytes {
            return Err(format!("packet {k} changed in a round trip"));
        }
    }
    Ok(())
}
