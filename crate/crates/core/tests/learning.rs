use nalgebra::{DMatrix, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tdcr_core::learning::*;
use tdcr_core::Error;

const M: usize = 4;

fn context(values: &[f64]) -> ContextVector {
    ContextVector::from_task_values(ContextSchema::EightPlane, values.to_vec()).unwrap()
}

fn random_context(rng: &mut ChaCha8Rng) -> ContextVector {
    context(&(0..5).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>())
}

/// Targets `Y = X W*` for a random planted `W*` (k x 3M).
fn planted(d: usize, seed: u64) -> (TrainingSet, DMatrix<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = DMatrix::from_fn(6, 3 * M, |_, _| rng.gen_range(-0.05..0.05));
    let pairs: Vec<_> = (0..d)
        .map(|_| {
            let c = random_context(&mut rng);
            let y = w.tr_mul(&nalgebra::DVector::from_column_slice(c.values()));
            (c, unflatten(y.as_slice(), M).unwrap())
        })
        .collect();
    (TrainingSet::new(pairs).unwrap(), w)
}

/// Smooth nonlinear targets.
fn curved(d: usize, seed: u64) -> TrainingSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs: Vec<_> = (0..d)
        .map(|_| {
            let c = random_context(&mut rng);
            let v = c.values();
            let pts = (0..M)
                .map(|j| {
                    let t = j as f64 / (M - 1) as f64;
                    Vector3::new(0.05 * (v[0] + t).sin(), 0.02 * v[1] * v[2], 0.03 * (v[3] * t).cos() + 0.01 * v[4])
                })
                .collect();
            (c, TipTrajectory::new(pts).unwrap())
        })
        .collect();
    TrainingSet::new(pairs).unwrap()
}

fn linear(model: &ContextModel) -> &LinearRidgeModel {
    match model {
        ContextModel::Linear(m) => m,
        _ => unreachable!(),
    }
}

fn residual_at(data: &TrainingSet, hyper: ModelHyper) -> f64 {
    squared_residual(&train_model(data, &hyper).unwrap(), data).unwrap()
}

#[test]
fn linear_ridge_recovers_planted_weights() {
    let (data, w) = planted(30, 1);
    let model = train_linear_ridge(&data, 1e-10).unwrap();
    let rel = (&model.weights - &w).norm() / w.norm();
    assert!(rel < 1e-6, "relative error {rel:e}");
}

#[test]
fn huge_alpha_shrinks_weights_to_zero() {
    let data = curved(20, 2);
    let small = train_linear_ridge(&data, 0.01).unwrap().weights.norm();
    let huge = train_linear_ridge(&data, 1e9).unwrap().weights.norm();
    assert!(huge < 1e-6 * small);
}

#[test]
fn ridge_solution_is_a_minimum() {
    let data = curved(20, 3);
    let model = ContextModel::Linear(train_linear_ridge(&data, 0.1).unwrap());
    let best = model.training_objective(&data).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        let mut moved = linear(&model).clone();
        moved.weights += DMatrix::from_fn(6, 3 * M, |_, _| rng.gen_range(-1e-4..1e-4));
        let perturbed = ContextModel::Linear(moved).training_objective(&data).unwrap();
        assert!(perturbed >= best, "{perturbed:e} < {best:e}");
    }
}

#[test]
fn rank_deficient_unregularized_linear_fit_fails() {
    let (data, _) = planted(3, 5);
    assert!(matches!(train_linear_ridge(&data, 0.0), Err(Error::SingularSystem)));
}

#[test]
fn kernel_ridge_interpolates_at_tiny_alpha() {
    let data = curved(12, 6);
    let model = train_model(&data, &ModelHyper::Rbf { gamma: 10.0, alpha: 1e-10 }).unwrap();
    let err = max_training_error(&model, &data).unwrap();
    assert!(err < 1e-6, "max training error {err:e}");
}

#[test]
fn training_residual_is_monotone_in_alpha() {
    let data = curved(15, 7);
    let alphas = [1e-8, 1e-6, 1e-4, 1e-2];
    for family in [ModelFamily::Linear, ModelFamily::Rbf] {
        let residuals: Vec<f64> = alphas
            .iter()
            .map(|&alpha| match family {
                ModelFamily::Linear => residual_at(&data, ModelHyper::Linear { alpha }),
                _ => residual_at(&data, ModelHyper::Rbf { gamma: 10.0, alpha }),
            })
            .collect();
        for w in residuals.windows(2) {
            assert!(w[0] <= w[1] * (1.0 + 1e-9), "{family}: {residuals:?}");
        }
    }
}

#[test]
fn tuned_kernel_setting_is_stored() {
    let data = curved(5, 8);
    let model = train_kernel_ridge(&data, 0.01, 10.0).unwrap();
    assert_eq!((model.gamma, model.alpha), (10.0, 0.01));
    assert_eq!(model.centers.len(), 5);
}

#[test]
fn kernel_prediction_is_continuous() {
    let data = curved(10, 9);
    let model = train_model(&data, &ModelHyper::Rbf { gamma: 10.0, alpha: 0.01 }).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..20 {
        let c = random_context(&mut rng);
        let mut nudged = c.values()[..5].to_vec();
        nudged[rng.gen_range(0..5)] += 1e-8;
        let a = model.predict(&c).unwrap();
        let b = model.predict(&context(&nudged)).unwrap();
        let change = a.waypoints().iter().zip(b.waypoints()).map(|(p, q)| (p - q).norm()).fold(0.0, f64::max);
        assert!(change < 1e-5);
    }
}

#[test]
fn analytic_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..10 {
        let mut net = Mlp::new(&[2, 3, 2], &mut rng).unwrap();
        let params: Vec<f64> = (0..net.param_count()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        net.set_params(&params).unwrap();
        let x = DMatrix::from_fn(2, 4, |_, _| rng.gen_range(-1.0..1.0));
        let y = DMatrix::from_fn(2, 4, |_, _| rng.gen_range(-1.0..1.0));
        let (_, grad) = net.loss_and_gradient(&x, &y);
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for i in 0..params.len() {
            let mut p = params.clone();
            p[i] = params[i] + h;
            net.set_params(&p).unwrap();
            let up = net.loss_and_gradient(&x, &y).0;
            p[i] = params[i] - h;
            net.set_params(&p).unwrap();
            let down = net.loss_and_gradient(&x, &y).0;
            let fd = (up - down) / (2.0 * h);
            let scale = grad[i].abs().max(fd.abs()).max(1e-6);
            worst = worst.max((grad[i] - fd).abs() / scale);
        }
        net.set_params(&params).unwrap();
        assert!(worst < 1e-4, "max relative error {worst:e}");
    }
}

#[test]
fn single_demo_is_memorized() {
    let data = curved(1, 12);
    let hyper = NetHyper { epochs: 2000, ..NetHyper::default() };
    let model = train_trajectory_net(&data, &[6, 16, 16, 3 * M], &hyper).unwrap();
    assert!(model.final_loss < 1e-8);
}

#[test]
fn small_set_is_overfit_to_a_millimetre() {
    let data = curved(5, 13);
    let hyper = NetHyper { epochs: 20_000, ..NetHyper::default() };
    let model = ContextModel::Net(train_trajectory_net(&data, &[6, 128, 128, 3 * M], &hyper).unwrap());
    assert!(max_training_error(&model, &data).unwrap() < 1e-3);
}

#[test]
fn retraining_is_bit_identical() {
    let data = curved(8, 14);
    let hyper = ModelHyper::Net { hidden: vec![16, 16], train: NetHyper { epochs: 300, ..NetHyper::default() } };
    let a = train_model(&data, &hyper).unwrap().to_json().unwrap();
    let b = train_model(&data, &hyper).unwrap().to_json().unwrap();
    assert_eq!(a, b);
}

#[test]
fn different_seeds_give_different_networks() {
    let data = curved(8, 15);
    let train = |seed| {
        let hyper = ModelHyper::Net { hidden: vec![8], train: NetHyper { epochs: 50, seed, ..NetHyper::default() } };
        train_model(&data, &hyper).unwrap()
    };
    assert_ne!(train(0), train(1));
}

#[test]
fn saved_models_predict_bit_identically() {
    let data = curved(10, 16);
    let dir = tempfile::tempdir().unwrap();
    let grid = [
        ModelHyper::Linear { alpha: 0.01 },
        ModelHyper::Rbf { gamma: 10.0, alpha: 0.01 },
        ModelHyper::Net { hidden: vec![16, 16], train: NetHyper { epochs: 200, ..NetHyper::default() } },
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let probes: Vec<ContextVector> = (0..5).map(|_| random_context(&mut rng)).collect();
    for hyper in grid {
        let model = train_model(&data, &hyper).unwrap();
        let path = dir.path().join(format!("{}.json", model.family()));
        model.save(&path).unwrap();
        let loaded = ContextModel::load(&path).unwrap();
        assert_eq!(loaded, model);
        for c in &probes {
            let a = flatten(&model.predict(c).unwrap());
            let b = flatten(&loaded.predict(c).unwrap());
            assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }
}

#[test]
fn corrupt_model_file_is_rejected() {
    assert!(ContextModel::from_json(r#"{"family":"quadratic"}"#).is_err());
    assert!(ContextModel::from_json("[1,2,3]").is_err());
}

#[test]
fn predictions_keep_the_training_length() {
    let data = curved(6, 18);
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    for hyper in [ModelHyper::Linear { alpha: 1.0 }, ModelHyper::Rbf { gamma: 1.0, alpha: 1.0 }] {
        let model = train_model(&data, &hyper).unwrap();
        for _ in 0..5 {
            assert_eq!(model.predict(&random_context(&mut rng)).unwrap().len(), M);
        }
    }
}

#[test]
fn wrong_schema_is_rejected_at_prediction() {
    let data = curved(4, 20);
    let model = train_model(&data, &ModelHyper::Linear { alpha: 1.0 }).unwrap();
    let sphere = ContextVector::from_task_values(ContextSchema::DoubleSphere, vec![0.0; 5]).unwrap();
    assert!(matches!(model.predict(&sphere), Err(Error::SchemaMismatch { .. })));
}

#[test]
fn grid_search_prefers_the_first_of_equal_scores() {
    let data = curved(6, 21);
    let grid = ModelHyper::linear_grid(&[0.01, 0.1, 1.0, 10.0]);
    let result = grid_search(&data, &grid, |_| Ok(1.0)).unwrap();
    assert_eq!(result.best, 0);
    assert_eq!(result.rows.len(), 4);
}

#[test]
fn grid_search_picks_the_lowest_score() {
    let data = curved(6, 22);
    let grid = ModelHyper::rbf_grid(&[0.01, 0.1, 1.0, 10.0], &[0.01, 0.1, 1.0, 10.0]);
    assert_eq!(grid.len(), 16);
    let result = grid_search(&data, &grid, |m| match m {
        ContextModel::Rbf(k) => Ok((k.gamma - 1.0).abs() + (k.alpha - 0.1).abs()),
        _ => unreachable!(),
    })
    .unwrap();
    assert_eq!(result.best_row().hyper, ModelHyper::Rbf { gamma: 1.0, alpha: 0.1 });
}

#[test]
fn empty_grid_is_an_error() {
    let data = curved(3, 23);
    assert!(grid_search(&data, &[], |_| Ok(0.0)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn flatten_round_trips(points in prop::collection::vec(prop::array::uniform3(-1.0f64..1.0), 2..20)) {
        let traj = TipTrajectory::new(points.iter().map(|p| Vector3::from(*p)).collect()).unwrap();
        let flat = flatten(&traj);
        prop_assert_eq!(flat.len(), 3 * points.len());
        prop_assert_eq!(unflatten(&flat, points.len()).unwrap(), traj);
    }

    #[test]
    fn rbf_kernel_is_symmetric_and_bounded(
        a in prop::collection::vec(-1.0f64..1.0, 6),
        b in prop::collection::vec(-1.0f64..1.0, 6),
        gamma in 0.01f64..10.0,
    ) {
        let ab = rbf_kernel(&a, &b, gamma).unwrap();
        prop_assert_eq!(ab, rbf_kernel(&b, &a, gamma).unwrap());
        prop_assert!(ab > 0.0 && ab <= 1.0);
        prop_assert_eq!(rbf_kernel(&a, &a, gamma).unwrap(), 1.0);
    }
}
