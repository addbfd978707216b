#![allow(dead_code)]

pub mod protocol;

use std::path::{Path, PathBuf};

use xrteleop::config::{load_config, ConfigFile, LoadedConfig};

pub fn assets() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("assets")
}

/// The bundled demo configuration with fixture chains instead of URDF files.
pub fn demo_config() -> LoadedConfig {
    let text = std::fs::read_to_string(assets().join("config/demo.toml")).unwrap();
    let text = text
        .replace("urdf = \"../urdf/arm6.urdf\"", "builtin = \"arm6\"")
        .replace("urdf = \"../urdf/two_finger_hand.urdf\"", "builtin = \"two_finger_hand\"");
    ConfigFile::parse(&text).unwrap().resolve(Path::new(".")).unwrap()
}

pub fn demo_config_from_file() -> LoadedConfig {
    load_config(&assets().join("config/demo.toml")).unwrap()
}

/// True when golden files should be rewritten instead of compared.
pub fn update_golden() -> bool {
    std::env::var_os("UPDATE_GOLDEN").is_some()
}

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xrteleop_core::nalgebra::{UnitQuaternion, Vector3};
use xrteleop_core::pose::Pose;
use xrteleop_core::protocol::{
    BodyJoint, BodyState, ControllerState, HandJoint, HandMode, HandState, HeadState, MotionTrackerState, TrackingStatus,
    BODY_JOINT_COUNT, HAND_JOINT_COUNT,
};
use xrteleop_core::TrackingPacket;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_pose(r: &mut impl Rng) -> Pose {
    let p = Vector3::new(r.random_range(-3.0..3.0), r.random_range(-3.0..3.0), r.random_range(-3.0..3.0));
    let axis = Vector3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0));
    let q = UnitQuaternion::from_scaled_axis(axis * r.random_range(0.0..3.0));
    Pose::new(p, q)
}

fn vec6(r: &mut impl Rng) -> [f64; 6] {
    std::array::from_fn(|_| r.random_range(-10.0..10.0))
}

/// Values that stress number formatting: exact bounds, tiny and huge magnitudes.
fn unit_value(r: &mut impl Rng) -> f64 {
    match r.random_range(0..6) {
        0 => 0.0,
        1 => 1.0,
        2 => f64::MIN_POSITIVE,
        3 => 1.0 - f64::EPSILON,
        _ => r.random(),
    }
}

pub fn random_controller(r: &mut impl Rng) -> ControllerState {
    ControllerState {
        pose: random_pose(r),
        axis_x: r.random_range(-1.0..=1.0),
        axis_y: if r.random_bool(0.1) { -1.0 } else { r.random_range(-1.0..=1.0) },
        axis_click: r.random(),
        grip: unit_value(r),
        trigger: unit_value(r),
        primary_button: r.random(),
        secondary_button: r.random(),
        menu_button: r.random(),
    }
}

pub fn random_hand(r: &mut impl Rng) -> HandState {
    if r.random_bool(0.2) {
        return HandState::inactive();
    }
    let joints = (0..HAND_JOINT_COUNT)
        .map(|_| HandJoint { pose: random_pose(r), status: r.next_u32(), radius: r.random_range(0.0..0.05) })
        .collect();
    HandState { is_active: r.random_bool(0.8), scale: r.random_range(0.5..2.0), joints }
}

/// A valid packet with every optional section present or absent at random.
pub fn random_packet(r: &mut impl Rng) -> TrackingPacket {
    let mut trackers = Vec::new();
    for i in 0..r.random_range(0..4) {
        trackers.push(MotionTrackerState {
            pose: random_pose(r),
            velocity: vec6(r),
            acceleration: vec6(r),
            serial: format!("PC{:04}-{i}", r.random_range(0..10_000)),
        });
    }
    TrackingPacket {
        timestamp_ns: r.next_u64() >> r.random_range(0..64),
        sequence: r.next_u64() >> r.random_range(0..64),
        head: HeadState {
            pose: random_pose(r),
            status: if r.random() { TrackingStatus::Reliable } else { TrackingStatus::Unreliable },
            hand_mode: [HandMode::None, HandMode::Controller, HandMode::Hand][r.random_range(0..3)],
        },
        left_controller: r.random_bool(0.7).then(|| random_controller(r)),
        right_controller: r.random_bool(0.7).then(|| random_controller(r)),
        left_hand: r.random_bool(0.5).then(|| random_hand(r)),
        right_hand: r.random_bool(0.5).then(|| random_hand(r)),
        body: r.random_bool(0.3).then(|| BodyState {
            joints: (0..BODY_JOINT_COUNT)
                .map(|_| BodyJoint { pose: random_pose(r), velocity: vec6(r), acceleration: vec6(r) })
                .collect(),
        }),
        trackers,
    }
}

/// Every section populated.
pub fn full_packet(seed: u64) -> TrackingPacket {
    let mut r = rng(seed);
    let mut p = random_packet(&mut r);
    p.left_controller = Some(random_controller(&mut r));
    p.right_controller = Some(random_controller(&mut r));
    let mut hand = || loop {
        let h = random_hand(&mut r);
        if h.is_active {
            return h;
        }
    };
    p.left_hand = Some(hand());
    p.right_hand = Some(hand());
    let mut r = rng(seed ^ 0xb0d7);
    p.body = Some(BodyState {
        joints: (0..BODY_JOINT_COUNT)
            .map(|_| BodyJoint { pose: random_pose(&mut r), velocity: vec6(&mut r), acceleration: vec6(&mut r) })
            .collect(),
    });
    p.trackers = vec![
        MotionTrackerState { pose: random_pose(&mut r), velocity: vec6(&mut r), acceleration: vec6(&mut r), serial: "A".into() },
        MotionTrackerState { pose: random_pose(&mut r), velocity: vec6(&mut r), acceleration: vec6(&mut r), serial: "B".into() },
    ];
    p
}
