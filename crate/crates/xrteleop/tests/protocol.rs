mod common;

use std::fs;
use std::time::Instant;

use proptest::prelude::*;
use serde_json::Value;
use xrteleop::codec::{decode_packet, encode_packet, packet_to_value, CodecError, MAX_PACKET_BYTES};
use xrteleop_core::pose::Pose;
use xrteleop_core::protocol::{xr_to_robot, FrameConvention};
use xrteleop_core::TrackingPacket;

use common::protocol::{check_table_field, fuzz_decode, golden_valid, schema, TABLE_FIELDS};
use common::{assets, full_packet, random_packet, rng, update_golden};

type ErrorClass = fn(&CodecError) -> bool;

/// Invalid documents with the error class each must produce.
fn golden_invalid() -> Vec<(&'static str, Value, ErrorClass)> {
    let base = packet_to_value(&full_packet(2)).unwrap();
    let mut joints25 = base.clone();
    joints25["Hand"]["left"]["HandJointLocations"].as_array_mut().unwrap().pop();
    let mut grip = base.clone();
    grip["Controller"]["right"]["grip"] = Value::from(-0.2);
    let mut dup = base.clone();
    dup["MotionTracker"][1]["sn"] = Value::from("A");
    let mut missing = base.clone();
    missing["Head"].as_object_mut().unwrap().remove("handMode");
    let mut quat = base;
    quat["Head"]["pose"] = serde_json::json!([0, 0, 0, 0, 0, 0, 2]);
    vec![
        ("hand_25_joints", joints25, |e| matches!(e, CodecError::SchemaViolation { .. })),
        ("grip_negative", grip, |e| matches!(e, CodecError::RangeViolation { .. })),
        ("duplicate_serial", dup, |e| matches!(e, CodecError::InvariantViolation(_))),
        ("missing_hand_mode", missing, |e| matches!(e, CodecError::SchemaViolation { .. })),
        ("non_unit_quaternion", quat, |e| matches!(e, CodecError::RangeViolation { .. })),
    ]
}

#[test]
fn golden_fixtures_decode_and_encode_exactly() {
    let dir = assets().join("golden");
    fs::create_dir_all(dir.join("invalid")).unwrap();
    for (name, packet) in golden_valid() {
        let path = dir.join(format!("{name}.json"));
        let text = String::from_utf8(encode_packet(&packet).unwrap()).unwrap() + "\n";
        if update_golden() || !path.exists() {
            fs::write(&path, &text).unwrap();
        }
        let on_disk = fs::read_to_string(&path).unwrap();
        assert_eq!(on_disk, text, "{name}: set UPDATE_GOLDEN=1 to regenerate");
        assert_eq!(decode_packet(on_disk.as_bytes()).unwrap(), packet, "{name}");
    }
    for (name, value, is_expected) in golden_invalid() {
        let path = dir.join(format!("invalid/{name}.json"));
        let text = serde_json::to_string(&value).unwrap() + "\n";
        if update_golden() || !path.exists() {
            fs::write(&path, &text).unwrap();
        }
        let on_disk = fs::read_to_string(&path).unwrap();
        assert_eq!(on_disk, text, "{name}: set UPDATE_GOLDEN=1 to regenerate");
        let err = decode_packet(on_disk.as_bytes()).unwrap_err();
        assert!(is_expected(&err), "{name}: {err:?}");
    }
}

#[test]
fn specific_error_examples() {
    let v = &golden_invalid();
    let err = |name: &str| decode_packet(serde_json::to_string(&v.iter().find(|x| x.0 == name).unwrap().1).unwrap().as_bytes()).unwrap_err();
    match err("hand_25_joints") {
        CodecError::SchemaViolation { path, .. } => assert!(path.contains("HandJointLocations"), "{path}"),
        e => panic!("{e:?}"),
    }
    match err("grip_negative") {
        CodecError::RangeViolation { path, value } => {
            assert!(path.contains("grip"), "{path}");
            assert_eq!(value, -0.2);
        }
        e => panic!("{e:?}"),
    }
    assert!(matches!(err("duplicate_serial"), CodecError::InvariantViolation(m) if m.contains('A')));
    assert!(matches!(decode_packet(b"{"), Err(CodecError::MalformedJson(_))));
    assert!(decode_packet(&vec![b' '; MAX_PACKET_BYTES + 1]).is_err());
}

#[test]
fn schema_accepts_valid_and_rejects_structural_errors() {
    let s = schema();
    for (name, p) in golden_valid() {
        let v = packet_to_value(&p).unwrap();
        assert!(s.is_valid(&v), "{name}: {:?}", s.iter_errors(&v).map(|e| e.to_string()).collect::<Vec<_>>());
    }
    let mut r = rng(99);
    for _ in 0..1000 {
        let v = packet_to_value(&random_packet(&mut r)).unwrap();
        assert!(s.is_valid(&v), "{:?}", s.iter_errors(&v).map(|e| e.to_string()).collect::<Vec<_>>());
    }
    for (name, v, _) in golden_invalid() {
        // Serial uniqueness is a cross-item rule outside what the schema expresses.
        if name != "duplicate_serial" && name != "non_unit_quaternion" {
            assert!(!s.is_valid(&v), "{name}");
        }
    }
    // The string pose form validates too.
    let mut v = packet_to_value(&TrackingPacket::default()).unwrap();
    v["Head"]["pose"] = Value::from("0,0,0,0,0,0,1");
    assert!(s.is_valid(&v));
    assert!(decode_packet(serde_json::to_string(&v).unwrap().as_bytes()).is_ok());
}

#[test]
fn every_table_field_is_covered() {
    let s = schema();
    for field in TABLE_FIELDS {
        check_table_field(field, &s).unwrap();
    }
    // Every populated section round-trips, so none is silently dropped.
    let packet = full_packet(5);
    assert_eq!(decode_packet(&encode_packet(&packet).unwrap()).unwrap(), packet);
    assert!(packet.left_hand.is_some() && packet.body.is_some() && packet.trackers.len() == 2);
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 10_000, ..ProptestConfig::default() })]

    #[test]
    fn encode_decode_round_trip(seed in any::<u64>()) {
        let p = random_packet(&mut rng(seed));
        let bytes = encode_packet(&p).unwrap();
        let back = decode_packet(&bytes).unwrap();
        prop_assert_eq!(&back, &p);
        prop_assert_eq!(encode_packet(&back).unwrap(), bytes);
    }
}

#[test]
fn fuzzed_inputs_never_panic() {
    let start = Instant::now();
    let (ok, err) = fuzz_decode(1_000_000, 2024);
    assert_eq!(ok + err, 1_000_000);
    assert!(err > 0 && ok > 0);
    assert!(start.elapsed().as_secs() < 120, "fuzzing took {:?}", start.elapsed());
}

proptest! {
    #[test]
    fn frame_map_is_an_isometry(seed in any::<u64>()) {
        let mut r = rng(seed);
        let a = common::random_pose(&mut r);
        let b = common::random_pose(&mut r);
        for conv in [FrameConvention::RobotZUp, FrameConvention::Identity] {
            let (ra, rb) = (xr_to_robot(&a, conv), xr_to_robot(&b, conv));
            let d = (a.position - b.position).norm();
            prop_assert!(((ra.position - rb.position).norm() - d).abs() < 1e-12);
            // Relative rotation angle is preserved.
            let rel = xrteleop_core::pose::angle_between(&a.orientation, &b.orientation);
            let rel_r = xrteleop_core::pose::angle_between(&ra.orientation, &rb.orientation);
            prop_assert!((rel - rel_r).abs() < 1e-9);
            // Straight lines stay straight: the midpoint maps to the midpoint.
            let mid = Pose::new((a.position + b.position) / 2.0, a.orientation);
            let rm = xr_to_robot(&mid, conv).position;
            prop_assert!((rm - (ra.position + rb.position) / 2.0).norm() < 1e-12);
        }
    }
}
