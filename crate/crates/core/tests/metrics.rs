mod common;

use nalgebra::{Rotation3, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tdcr_core::ik::IkSettings;
use tdcr_core::learning::*;
use tdcr_core::metrics::*;
use tdcr_core::tasks::{generate_dataset, GenerateOptions, Noise, Task};

type V = Vector3<f64>;

fn v(x: f64, y: f64, z: f64) -> V {
    V::new(x, y, z)
}

/// Maximum leash over every monotone coupling, minimized by enumeration.
fn brute_force(a: &[V], b: &[V]) -> f64 {
    fn walk(a: &[V], b: &[V], i: usize, j: usize, leash: f64, best: &mut f64) {
        let leash = leash.max((a[i] - b[j]).norm());
        if leash >= *best {
            return;
        }
        if i + 1 == a.len() && j + 1 == b.len() {
            *best = leash;
            return;
        }
        if i + 1 < a.len() {
            walk(a, b, i + 1, j, leash, best);
        }
        if j + 1 < b.len() {
            walk(a, b, i, j + 1, leash, best);
        }
        if i + 1 < a.len() && j + 1 < b.len() {
            walk(a, b, i + 1, j + 1, leash, best);
        }
    }
    let mut best = f64::INFINITY;
    walk(a, b, 0, 0, 0.0, &mut best);
    best
}

fn eight_context(p: V, w: f64, h: f64) -> ContextVector {
    ContextVector::from_task_values(ContextSchema::EightPlane, vec![p.x, p.y, p.z, w, h]).unwrap()
}

fn curve() -> impl Strategy<Value = Vec<V>> {
    prop::collection::vec(prop::array::uniform3(-1.0f64..1.0).prop_map(V::from), 1..7)
}

#[test]
fn resampling_a_segment() {
    let out = resample_arclength(&[v(0.0, 0.0, 0.0), v(1.0, 0.0, 0.0)], 3).unwrap();
    assert_eq!(out.waypoints(), &[v(0.0, 0.0, 0.0), v(0.5, 0.0, 0.0), v(1.0, 0.0, 0.0)]);
}

#[test]
fn resampling_an_l_shape() {
    let out = resample_arclength(&[v(0.0, 0.0, 0.0), v(1.0, 0.0, 0.0), v(1.0, 1.0, 0.0)], 5).unwrap();
    let expected = [v(0.0, 0.0, 0.0), v(0.5, 0.0, 0.0), v(1.0, 0.0, 0.0), v(1.0, 0.5, 0.0), v(1.0, 1.0, 0.0)];
    for (p, q) in out.waypoints().iter().zip(&expected) {
        assert!((p - q).norm() < 1e-15);
    }
}

#[test]
fn resampling_equal_spacing_is_identity() {
    let pts: Vec<V> = (0..11).map(|i| v(0.1 * i as f64, 0.0, 0.0)).collect();
    let out = resample_arclength(&pts, 11).unwrap();
    for (p, q) in out.waypoints().iter().zip(&pts) {
        assert!((p - q).norm() < 1e-12);
    }
}

#[test]
fn resampling_rejects_degenerate_input() {
    let p = v(1.0, 2.0, 3.0);
    assert!(resample_arclength(&[p, p, p], 5).is_err());
    assert!(resample_arclength(&[p], 5).is_err());
    assert!(resample_arclength(&[p, v(0.0, 0.0, 0.0)], 1).is_err());
}

#[test]
fn frechet_hand_cases() {
    let a = [v(0.0, 0.0, 0.0), v(1.0, 0.0, 0.0), v(2.0, 0.0, 0.0)];
    assert_eq!(frechet_distance(&a, &a), 0.0);
    let delta = v(0.3, -0.4, 1.2);
    let moved: Vec<V> = a.iter().map(|p| p + delta).collect();
    assert!((frechet_distance(&a, &moved) - delta.norm()).abs() < 1e-15);
    let b = [v(0.0, 1.0, 0.0), v(2.0, 1.0, 0.0)];
    assert_eq!(frechet_distance(&a, &b), 2f64.sqrt());
    assert_eq!(brute_force(&a, &b), 2f64.sqrt());
}

#[test]
fn frechet_matches_enumeration_on_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..100 {
        let mut draw = || -> Vec<V> {
            (0..rng.gen_range(1..=6)).map(|_| v(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect()
        };
        let (a, b) = (draw(), draw());
        assert_eq!(frechet_distance(&a, &b), brute_force(&a, &b));
    }
}

#[test]
fn frechet_of_empty_curve_is_nan() {
    assert!(frechet_distance(&[], &[v(0.0, 0.0, 0.0)]).is_nan());
}

#[test]
fn reference_context_hand_case() {
    let c = eight_context(V::zeros(), 0.05, 0.0125);
    let traj = TipTrajectory::new(vec![V::zeros(), v(2.0, 3.0, 1.0)]).unwrap();
    let out = to_reference_context(&traj, &c).unwrap();
    assert_eq!(out.waypoints()[1], v(1.0, 3.0, 2.0));
}

#[test]
fn reference_context_at_reference_size_is_identity() {
    let c = eight_context(v(0.01, 0.13, 0.05), REFERENCE_EIGHT_SIZE, REFERENCE_EIGHT_SIZE);
    let traj = TipTrajectory::new(vec![v(0.01, 0.13, 0.05), v(0.02, 0.11, 0.07), v(-0.3, 0.2, 0.1)]).unwrap();
    assert_eq!(to_reference_context(&traj, &c).unwrap(), traj);
}

#[test]
fn reference_curve_cases() {
    let f = [V::zeros(), v(0.01, 0.0, 0.02), v(-0.01, 0.0, 0.01)];
    let at = |p: V, sign: f64| TipTrajectory::new(f.iter().map(|d| p + d * sign).collect()).unwrap();
    let (c1, c2) = (eight_context(v(0.0, 0.1, 0.0), 0.025, 0.025), eight_context(v(0.03, 0.1, 0.02), 0.025, 0.025));
    let (t1, t2) = (at(c1.p_ref(), 1.0), at(c2.p_ref(), 1.0));

    let single = reference_curve([(&c1, &t1)]).unwrap();
    assert_eq!(single, reference_displacement(&t1, &c1).unwrap());

    let pair = reference_curve([(&c1, &t1), (&c2, &t2)]).unwrap();
    for (p, q) in pair.waypoints().iter().zip(&f) {
        assert!((p - q).norm() < 1e-15);
    }

    let flipped = at(c2.p_ref(), -1.0);
    let zero = reference_curve([(&c1, &t1), (&c2, &flipped)]).unwrap();
    assert!(zero.waypoints().iter().all(|p| p.norm() < 1e-15));

    assert!(reference_curve(std::iter::empty()).is_err());
}

#[test]
fn report_summary_is_consistent() {
    let cases: Vec<CaseReport> = [0.1, 0.4, 0.25, 0.3]
        .iter()
        .map(|&d| CaseReport { context: vec![0.0; 6], distance: d, mean_ik_residual: 1e-5 })
        .collect();
    let report = EvaluationReport::from_cases("linear".into(), ContextSchema::EightPlane, cases);
    let distances: Vec<f64> = report.cases.iter().map(|c| c.distance).collect();
    let mean = distances.iter().sum::<f64>() / 4.0;
    let std = (distances.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / 4.0).sqrt();
    assert!((report.mean - mean).abs() < 1e-12);
    assert!((report.std - std).abs() < 1e-12);

    let csv = report.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "case,p_ref_x,p_ref_y,p_ref_z,w,h,bias,distance,mean_ik_residual,std");
    assert_eq!(lines.len(), 6);
    assert!(lines[5].starts_with("summary,"));
    assert_eq!(lines[5].split(',').count(), lines[0].split(',').count());
}

#[test]
fn memorized_demo_is_reproduced_to_execution_noise() {
    let spec = common::eight_robot();
    let task = Task::load(common::presets_dir().join("task_eight.toml")).unwrap();
    let ik = IkSettings::default();
    let opts = GenerateOptions { count: 1, waypoints: 50, noise: Noise::default(), seed: 3, ik: ik.clone() };
    let demo = generate_dataset(&task, &spec, &opts).unwrap().remove(0);
    let data = TrainingSet::new([(demo.context.clone(), demo.trajectory.clone())]).unwrap();
    let hyper = ModelHyper::Net { hidden: vec![16, 16], train: NetHyper { epochs: 10, ..NetHyper::default() } };
    let model = train_model(&data, &hyper).unwrap();
    let case = EvalCase { context: demo.context.clone(), truth: Some(demo.trajectory.clone()) };
    let exec = Executor::new(&spec, &ik);
    let report = evaluate_model(&model, &[case], &EvalMode::VsDemo, &exec).unwrap();
    let (_, residuals) = exec.execute(&demo.trajectory).unwrap();
    let worst = residuals.iter().copied().fold(0.0, f64::max);
    let distance = report.cases[0].distance;
    assert!(distance <= worst, "{distance} > {worst}");
    assert!(distance < 2.0 * ik.tol);
}

#[test]
fn vs_demo_needs_ground_truth() {
    let spec = common::eight_robot();
    let ik = IkSettings::default();
    let c = eight_context(v(0.0, 0.13, 0.06), 0.02, 0.02);
    let data = TrainingSet::new([(c.clone(), TipTrajectory::new(vec![c.p_ref(), c.p_ref() + v(0.0, 0.0, 0.01)]).unwrap())]).unwrap();
    let model = train_model(&data, &ModelHyper::Linear { alpha: 0.01 }).unwrap();
    let exec = Executor::new(&spec, &ik);
    assert!(evaluate_model(&model, &[EvalCase { context: c, truth: None }], &EvalMode::VsDemo, &exec).is_err());
    assert!(evaluate_model(&model, &[], &EvalMode::VsDemo, &exec).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn frechet_is_symmetric_and_bounded_below(a in curve(), b in curve()) {
        let d = frechet_distance(&a, &b);
        prop_assert_eq!(d, frechet_distance(&b, &a));
        let hausdorff_side = a.iter().map(|p| b.iter().map(|q| (p - q).norm()).fold(f64::INFINITY, f64::min)).fold(0.0, f64::max);
        prop_assert!(d >= hausdorff_side);
        let ends = (a[0] - b[0]).norm().max((a[a.len() - 1] - b[b.len() - 1]).norm());
        prop_assert!(d >= ends);
    }

    #[test]
    fn frechet_is_rigid_invariant(
        a in curve(),
        b in curve(),
        axis in prop::array::uniform3(-1.0f64..1.0),
        angle in -3.0f64..3.0,
        shift in prop::array::uniform3(-5.0f64..5.0),
    ) {
        let axis = V::from(axis);
        prop_assume!(axis.norm() > 1e-3);
        let r = Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle);
        let t = V::from(shift);
        let move_all = |c: &[V]| c.iter().map(|p| r * p + t).collect::<Vec<_>>();
        let before = frechet_distance(&a, &b);
        let after = frechet_distance(&move_all(&a), &move_all(&b));
        prop_assert!((before - after).abs() < 1e-9);
    }

    #[test]
    fn resampling_spaces_points_evenly(
        pts in prop::collection::vec(prop::array::uniform3(-1.0f64..1.0).prop_map(V::from), 2..12),
        m in 2usize..40,
    ) {
        let total: f64 = pts.windows(2).map(|w| (w[1] - w[0]).norm()).sum();
        prop_assume!(total > 1e-6);
        let out = resample_arclength(&pts, m).unwrap();
        prop_assert_eq!(out.len(), m);
        prop_assert_eq!(out.waypoints()[0], pts[0]);
        prop_assert_eq!(out.waypoints()[m - 1], pts[pts.len() - 1]);
        // walk forward along the source, locating each output point on the
        // earliest segment at or after the previous one
        let lengths: Vec<f64> = pts.windows(2).map(|w| (w[1] - w[0]).norm()).collect();
        let mut seg = 0;
        let mut walked = 0.0;
        let mut positions = Vec::with_capacity(m);
        for p in out.waypoints() {
            loop {
                let (a, b) = (pts[seg], pts[seg + 1]);
                let len = lengths[seg];
                let f = if len > 0.0 { ((p - a).dot(&(b - a)) / (len * len)).clamp(0.0, 1.0) } else { 0.0 };
                let on = (a + (b - a) * f - p).norm() < 1e-12;
                let here = walked + f * len;
                if on && positions.last().is_none_or(|&last: &f64| here >= last - 1e-12) {
                    positions.push(here);
                    break;
                }
                prop_assert!(seg + 2 < pts.len(), "output point not on the remaining polyline");
                walked += len;
                seg += 1;
            }
        }
        let step = total / (m - 1) as f64;
        for (j, s) in positions.iter().enumerate() {
            prop_assert!((s - j as f64 * step).abs() < 1e-9, "point {} at {} expected {}", j, s, j as f64 * step);
        }
    }
}
