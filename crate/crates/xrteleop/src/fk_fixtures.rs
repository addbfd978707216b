//! Forward-kinematics reference values for client-side reimplementations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use xrteleop_core::fixtures::planar_serial;
use xrteleop_core::kinematics::JointLimits;
use xrteleop_core::protocol::pose_to_pose7;
use xrteleop_core::{Configuration, KinematicChain};

use crate::config::builtin_chain;
use crate::urdf::serialize_chain;

pub const CASES_PER_CHAIN: usize = 16;

/// Chains covered by the fixture corpus.
pub fn fixture_chains() -> Vec<(&'static str, KinematicChain)> {
    vec![
        ("planar2", planar_serial(&[1.0, 1.0], JointLimits::new(-3.0, 3.0))),
        ("spatial_three_link", builtin_chain("spatial_three_link").expect("bundled")),
        ("arm6", builtin_chain("arm6").expect("bundled")),
        ("two_finger_hand", builtin_chain("two_finger_hand").expect("bundled")),
    ]
}

/// `{chains: [{name, urdf, cases: [{q, frames: {link: [x y z qx qy qz qw]}}]}]}`.
///
/// The first case of every chain is the zero configuration; the rest are
/// drawn uniformly inside the joint limits (±π where unbounded).
pub fn fk_fixtures() -> Value {
    let mut rng = ChaCha8Rng::seed_from_u64(0x6b66);
    let chains: Vec<Value> = fixture_chains()
        .into_iter()
        .map(|(name, chain)| {
            let limits = chain.joint_limits();
            let cases: Vec<Value> = (0..CASES_PER_CHAIN)
                .map(|k| {
                    let q: Vec<f64> = limits
                        .iter()
                        .map(|l| {
                            if k == 0 {
                                return 0.0;
                            }
                            let lo = if l.lower.is_finite() { l.lower } else { -std::f64::consts::PI };
                            let hi = if l.upper.is_finite() { l.upper } else { std::f64::consts::PI };
                            rng.random_range(lo..=hi)
                        })
                        .collect();
                    let qc = Configuration::from_slice(&q);
                    let frames: serde_json::Map<String, Value> = chain
                        .links()
                        .iter()
                        .map(|link| {
                            let pose = chain.forward_kinematics(&qc, link).expect("link of this chain");
                            (link.clone(), Value::from(pose_to_pose7(&pose).to_vec()))
                        })
                        .collect();
                    json!({ "q": q, "frames": frames })
                })
                .collect();
            json!({ "name": name, "urdf": serialize_chain(&chain), "cases": cases })
        })
        .collect();
    json!({ "tolerance": 1e-6, "chains": chains })
}

pub fn fk_fixtures_text() -> String {
    serde_json::to_string_pretty(&fk_fixtures()).expect("plain JSON") + "\n"
}
