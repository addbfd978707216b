use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xrteleop_core::fixtures::{arm6, planar_serial, random_chain, spatial_three_link, ARM6_HOME};
use xrteleop_core::ik::{
    clutch_engage, clutched_target, dik_objective, integrate, pose_error, solve_dik, ClutchState, ConstraintSet,
    IkParams, IkStatus, Task,
};
use xrteleop_core::kinematics::{manipulability, JointLimits, KinematicChain};
use xrteleop_core::pose::{rotation_exp, Pose};
use xrteleop_core::{Configuration, RowSelection};

/// Quadratic `xᵀAx + bᵀx + c` of a position-only problem, built from the
/// Jacobian and FK directly.
struct Quadratic {
    a: DMatrix<f64>,
    b: DVector<f64>,
}

impl Quadratic {
    fn position_task(chain: &KinematicChain, q: &Configuration, frame: &str, target: Vector3<f64>, w: f64, lambda: f64, dt: f64) -> Self {
        let j = chain.jacobian(q, frame).unwrap().select_rows(RowSelection::POSITION);
        let p = chain.forward_kinematics(q, frame).unwrap().position;
        let rhs = DVector::from_column_slice((target - p).as_slice()) / dt;
        let n = q.len();
        Self {
            a: j.transpose() * &j * w + DMatrix::identity(n, n) * lambda,
            b: j.transpose() * rhs * (-2.0 * w),
        }
    }

    fn eval(&self, x: &[f64]) -> f64 {
        let x = DVector::from_column_slice(x);
        x.dot(&(&self.a * &x)) + self.b.dot(&x)
    }
}

/// Coarse grid over the box, then a pitch-1e-3 grid around the coarse winner.
fn grid_search(f: &Quadratic, lo: &DVector<f64>, hi: &DVector<f64>) -> (Vec<f64>, f64) {
    let n = lo.len();
    let search = |lo: &[f64], hi: &[f64], pitch: f64| {
        let counts: Vec<usize> = (0..n).map(|i| ((hi[i] - lo[i]) / pitch).round() as usize + 1).collect();
        let total: usize = counts.iter().product();
        let mut best = (vec![0.0; n], f64::INFINITY);
        let mut x = vec![0.0; n];
        for mut k in 0..total {
            for i in 0..n {
                x[i] = (lo[i] + (k % counts[i]) as f64 * pitch).min(hi[i]);
                k /= counts[i];
            }
            let v = f.eval(&x);
            if v < best.1 {
                best = (x.clone(), v);
            }
        }
        best
    };
    let coarse_pitch = (0..n).map(|i| hi[i] - lo[i]).fold(0.0, f64::max) / 100.0;
    let (c, _) = search(lo.as_slice(), hi.as_slice(), coarse_pitch);
    let flo: Vec<f64> = (0..n).map(|i| (c[i] - 2.0 * coarse_pitch).max(lo[i])).collect();
    let fhi: Vec<f64> = (0..n).map(|i| (c[i] + 2.0 * coarse_pitch).min(hi[i])).collect();
    search(&flo, &fhi, 1e-3)
}

#[test]
fn bound_constrained_solutions_match_grid_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let dt = 0.1;
    let lambda = 1e-3;
    let mut active_seen = 0;
    for case in 0..24 {
        let dof = 2 + case % 2;
        let chain = if case % 4 < 2 {
            planar_serial(&vec![0.5; dof], JointLimits::new(-2.5, 2.5))
        } else {
            random_chain(&mut || rng.random::<f64>(), dof)
        };
        let q = Configuration::from((0..dof).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>());
        let p = chain.forward_kinematics(&q, "tip").unwrap().position;
        let target = p + Vector3::new(rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2));
        let constraints = ConstraintSet {
            joint_limits: vec![JointLimits::new(-2.5, 2.5); dof],
            velocity_limits: (0..dof).map(|_| rng.random_range(0.2..0.8)).collect(),
            limit_horizon: 0.1,
        };
        let params = IkParams { damping: lambda, dt, ..Default::default() };
        let task = Task::position("tip", target, 1.0);
        let sol = solve_dik(&chain, &q, &[task], &constraints, &params).unwrap();
        active_seen += usize::from(!sol.active_constraints.is_empty());

        let quad = Quadratic::position_task(&chain, &q, "tip", target, 1.0, lambda, dt);
        let (_, grid_best) = grid_search(&quad, &sol.lower, &sol.upper);
        let solved = quad.eval(sol.qdot.as_slice());
        assert!(solved <= grid_best + 1e-4, "case {case}: solver {solved} vs grid {grid_best}");
        assert!(grid_best >= solved - 1e-4, "case {case}: grid beat solver by {}", solved - grid_best);
        for j in 0..dof {
            assert!(sol.qdot[j] >= sol.lower[j] && sol.qdot[j] <= sol.upper[j]);
        }
    }
    assert!(active_seen >= 12, "only {active_seen} cases exercised the bounds");
}

#[test]
fn unconstrained_solutions_match_damped_least_squares() {
    let chain = arm6();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let q = Configuration::from((0..6).map(|i| ARM6_HOME[i] + rng.random_range(-0.5..0.5)).collect::<Vec<_>>());
        let current = chain.forward_kinematics(&q, "ee").unwrap();
        let target = Pose::new(
            current.position + Vector3::new(rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05)),
            rotation_exp(&Vector3::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1)))
                * current.orientation,
        );
        let w = rng.random_range(0.5..3.0);
        let lambda = 10f64.powf(rng.random_range(-6.0..-2.0));
        let params = IkParams { damping: lambda, ..Default::default() };
        let sol = solve_dik(&chain, &q, &[Task::pose("ee", target, w)], &ConstraintSet::unbounded(6), &params).unwrap();
        assert_eq!(sol.status, IkStatus::Optimal);

        let j = chain.jacobian(&q, "ee").unwrap().matrix;
        let err = pose_error(&current, &target, RowSelection::ALL, None) / params.dt;
        let jjt = &j * j.transpose() + DMatrix::identity(6, 6) * (lambda / w);
        let oracle = j.transpose() * jjt.lu().solve(&err).unwrap();
        let dev = (&sol.qdot - &oracle).amax();
        assert!(dev < 1e-8 * (1.0 + oracle.amax()), "deviation {dev:e} at |qdot| {}", oracle.amax());
    }
}

#[test]
fn raising_a_weight_shrinks_its_residual() {
    // Two conflicting position targets for the same frame.
    let chain = spatial_three_link();
    let q = Configuration::from_slice(&[0.2, -0.4, 0.7]);
    let p = chain.forward_kinematics(&q, "tool").unwrap().position;
    let a = p + Vector3::new(0.05, 0.0, 0.02);
    let b = p + Vector3::new(-0.03, 0.04, 0.0);
    let params = IkParams::default();
    let j = chain.jacobian(&q, "tool").unwrap().select_rows(RowSelection::POSITION);
    let residual = |qdot: &DVector<f64>, t: Vector3<f64>| {
        (&j * qdot - DVector::from_column_slice(((t - p) / params.dt).as_slice())).norm()
    };
    let mut last = f64::INFINITY;
    for w in [0.1, 0.5, 1.0, 2.0, 5.0, 20.0] {
        let tasks = [Task::position("tool", a, w), Task::position("tool", b, 1.0)];
        let sol = solve_dik(&chain, &q, &tasks, &ConstraintSet::unbounded(3), &params).unwrap();
        let r = residual(&sol.qdot, a);
        assert!(r <= last + 1e-9, "w = {w}: residual {r} rose above {last}");
        last = r;
    }
}

/// Drive the planar tip out past full extension and back.
fn boundary_crossing_run(k: f64) -> (f64, f64) {
    let chain = planar_serial(&[1.0, 1.0], JointLimits::new(-3.0, 3.0));
    let mut q = Configuration::from_slice(&[0.3, 0.8]);
    let start = chain.forward_kinematics(&q, "tip").unwrap().position;
    let far = Vector3::new(2.1333, 0.2, 0.0);
    let params = IkParams {
        damping: 1e-4,
        manipulability_weight: k,
        manipulability_rows: RowSelection::XY,
        ..Default::default()
    };
    let constraints = ConstraintSet::from_chain(&chain, 0.1);
    let steps = 360;
    let mut max_speed: f64 = 0.0;
    for i in 0..=steps {
        let s = i as f64 / steps as f64;
        let w = 1.0 - (2.0 * s - 1.0).abs();
        let task = Task::position("tip", start + (far - start) * w, 1.0).with_rows(RowSelection::XY);
        let sol = solve_dik(&chain, &q, &[task], &constraints, &params).unwrap();
        max_speed = max_speed.max(sol.qdot.norm());
        q = integrate(&q, &sol.qdot, params.dt, &chain.joint_limits()).unwrap().0;
    }
    (manipulability(&chain.jacobian(&q, "tip").unwrap(), RowSelection::XY), max_speed)
}

#[test]
fn manipulability_regularization_through_singularity() {
    let (m0, v0) = boundary_crossing_run(0.0);
    for k in [0.1, 0.3, 1.0] {
        let (m, v) = boundary_crossing_run(k);
        assert!(m >= m0, "k = {k}: final m {m} < unregularized {m0}");
        assert!(v <= v0, "k = {k}: max |qdot| {v} > unregularized {v0}");
    }
}

#[test]
fn manipulability_term_matches_objective_oracle() {
    let chain = arm6();
    let q = Configuration::from_slice(&ARM6_HOME);
    let target = chain.forward_kinematics(&q, "ee").unwrap().compose(&Pose::from_translation(0.02, 0.0, 0.01));
    let params = IkParams { manipulability_weight: 0.5, damping: 1e-3, ..Default::default() };
    let tasks = [Task::pose("ee", target, 1.0)];
    let sol = solve_dik(&chain, &q, &tasks, &ConstraintSet::unbounded(6), &params).unwrap();
    let best = dik_objective(&chain, &q, &tasks, &params, &sol.qdot).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..200 {
        let probe = &sol.qdot + DVector::from_fn(6, |_, _| rng.random_range(-1e-3..1e-3));
        assert!(dik_objective(&chain, &q, &tasks, &params, &probe).unwrap() >= best - 1e-12);
    }
    assert!((sol.objective - best).abs() < 1e-8 * (1.0 + best.abs()));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn solutions_respect_velocity_and_position_limits(
        seed in any::<u64>(),
        offsets in prop::collection::vec(-0.3f64..0.3, 6),
        vmax in 0.05f64..2.0,
    ) {
        let chain = arm6();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let limits: Vec<JointLimits> = (0..6).map(|i| JointLimits::new(ARM6_HOME[i] - 0.3, ARM6_HOME[i] + 0.3)).collect();
        let q = Configuration::from((0..6).map(|i| ARM6_HOME[i] + offsets[i]).collect::<Vec<_>>());
        let constraints = ConstraintSet { joint_limits: limits.clone(), velocity_limits: vec![vmax; 6], limit_horizon: 0.05 };
        let current = chain.forward_kinematics(&q, "ee").unwrap();
        let target = current.compose(&Pose::from_xyz_rpy(
            [rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3)],
            [rng.random_range(-PI..PI), 0.0, 0.0],
        ));
        let sol = solve_dik(&chain, &q, &[Task::pose("ee", target, 1.0)], &constraints, &IkParams::default()).unwrap();
        for j in 0..6 {
            prop_assert!(sol.qdot[j].abs() <= vmax + 1e-12);
        }
        let (next, _) = integrate(&q, &sol.qdot, 0.05, &limits).unwrap();
        for j in 0..6 {
            prop_assert!(limits[j].contains(next[j]));
        }
    }

    #[test]
    fn clutch_target_depends_only_on_device_displacement(
        a in prop::array::uniform3(-1.0f64..1.0),
        b in prop::array::uniform3(-1.0f64..1.0),
        d in prop::array::uniform3(-0.5f64..0.5),
        r in prop::array::uniform3(-1.0f64..1.0),
    ) {
        let ee = Pose::from_xyz_rpy([0.4, 0.1, 0.3], [0.1, 0.2, 0.3]);
        let delta = Pose::new(Vector3::from(d), rotation_exp(&Vector3::from(r)));
        let mut targets = Vec::new();
        for origin in [a, b] {
            let anchor = Pose::from_xyz_rpy(origin, [origin[2], origin[0], origin[1]]);
            let clutch = clutch_engage(ClutchState::default(), anchor, ee);
            prop_assert_eq!(clutched_target(&clutch, &anchor), Some(ee));
            let moved = Pose::new(anchor.position + delta.position, delta.orientation * anchor.orientation);
            targets.push(clutched_target(&clutch, &moved).unwrap());
        }
        prop_assert!((targets[0].position - targets[1].position).norm() < 1e-12);
        prop_assert!(targets[0].orientation.angle_to(&targets[1].orientation) < 1e-9);
    }
}
