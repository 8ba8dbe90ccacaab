use proptest::prelude::*;

use valuekit::features::FeatureMatrix;
use valuekit::gbm::{GrowthVariant, TrainConfig};
use valuekit::rng::{Purpose, SplitRng};
use valuekit::stack::{
    bayesian_ridge_fit, fit_stacking, kfold_split, predict_stacking, rmse, RidgeFit, RidgeParams,
    StackingModel,
};

fn bases() -> Vec<TrainConfig> {
    let base = TrainConfig {
        n_rounds: 10,
        max_depth: 2,
        max_leaves: 4,
        learning_rate: 0.3,
        ..TrainConfig::default()
    };
    vec![
        base.clone(),
        TrainConfig {
            variant: GrowthVariant::Leafwise,
            ..base
        },
    ]
}

fn dataset(seed: u64, n: usize) -> (FeatureMatrix, Vec<f64>) {
    let mut r = SplitRng::new(seed, Purpose::Synthetic, 0);
    let rows: Vec<Vec<Option<f64>>> = (0..n)
        .map(|_| (0..3).map(|_| Some(r.normal())).collect())
        .collect();
    let y = rows
        .iter()
        .map(|x| 2.0 * x[0].unwrap() + x[1].unwrap().abs() + 0.2 * r.normal())
        .collect();
    let ids = (0..n).map(|i| format!("r{i}")).collect();
    let names = (0..3).map(|j| format!("x{j}")).collect();
    (FeatureMatrix::new(ids, names, rows).unwrap(), y)
}

proptest! {
    #[test]
    fn folds_partition_rows(n in 2usize..200, k in 2usize..12, seed in any::<u64>()) {
        prop_assume!(k <= n);
        let plan = kfold_split(n, k, seed).unwrap();
        let sizes = plan.sizes();
        prop_assert_eq!(sizes.iter().sum::<usize>(), n);
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        let mut all: Vec<usize> = (0..k).flat_map(|f| plan.test_rows(f)).collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        for f in 0..k {
            let train = plan.train_rows(f);
            prop_assert!(plan.test_rows(f).iter().all(|r| !train.contains(r)));
            prop_assert_eq!(train.len() + plan.test_rows(f).len(), n);
        }
        prop_assert_eq!(kfold_split(n, k, seed).unwrap(), plan);
    }

    #[test]
    fn rmse_is_symmetric_and_permutation_invariant(pairs in prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 1..50), rot in 0usize..50) {
        let (obs, pred): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
        let a = rmse(&obs, &pred).unwrap();
        prop_assert!(a >= 0.0);
        prop_assert_eq!(rmse(&obs, &obs).unwrap(), 0.0);
        prop_assert!((rmse(&pred, &obs).unwrap() - a).abs() <= 1e-12 * a.max(1.0));
        let mut rotated = pairs.clone();
        let len = rotated.len();
        rotated.rotate_left(rot % len);
        let (o2, p2): (Vec<f64>, Vec<f64>) = rotated.into_iter().unzip();
        prop_assert!((rmse(&o2, &p2).unwrap() - a).abs() <= 1e-12 * a.max(1.0));
    }

    #[test]
    fn duplicated_columns_get_symmetric_weights(seed in any::<u64>(), n in 6usize..40) {
        let mut r = SplitRng::new(seed, Purpose::Synthetic, 1);
        let x: Vec<Vec<f64>> = (0..n).map(|_| { let v = r.normal(); let u = r.normal(); vec![v, v, u] }).collect();
        let y: Vec<f64> = x.iter().map(|row| 3.0 * row[0] - row[2] + 0.1 * r.normal()).collect();
        let fit = bayesian_ridge_fit(&x, &y, &RidgeParams::default()).unwrap();
        prop_assert!((fit.weights[0] - fit.weights[1]).abs() < 1e-8);
        prop_assert!(fit.alpha > 0.0 && fit.lambda > 0.0);
        prop_assert!(fit.weights.iter().all(|w| w.is_finite()));
        // merging the twin columns into one with the summed weight predicts the same
        for row in &x {
            let merged = RidgeFit { weights: vec![fit.weights[0] + fit.weights[1], fit.weights[2]], ..fit.clone() };
            let a = fit.predict_row(row);
            let b = merged.predict_row(&[row[0], row[2]]);
            prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
        }
    }
}

#[test]
fn perfect_base_dominates_noise() {
    for seed in 0..20 {
        let mut r = SplitRng::new(seed, Purpose::Synthetic, 2);
        let y: Vec<f64> = (0..60).map(|_| 5.0 * r.normal()).collect();
        let x: Vec<Vec<f64>> = y.iter().map(|t| vec![*t, 5.0 * r.normal()]).collect();
        let fit = bayesian_ridge_fit(&x, &y, &RidgeParams::default()).unwrap();
        assert!(
            fit.weights[0].abs() > fit.weights[1].abs(),
            "seed {seed}: {:?}",
            fit.weights
        );
    }
}

#[test]
fn single_base_stack_is_affine_in_that_base() {
    let (m, y) = dataset(3, 60);
    let plan = kfold_split(60, 5, 1).unwrap();
    let model = fit_stacking(&m, &y, &bases()[..1], &plan, &RidgeParams::default()).unwrap();
    let base = model.full_models[0].predict(&m).unwrap();
    let stacked = predict_stacking(&model, &m).unwrap();
    let (w, b) = (model.head.weights[0], model.head.intercept);
    for (s, p) in stacked.iter().zip(&base) {
        assert_eq!(*s, b + w * p);
    }
}

#[test]
fn stacking_model_round_trip_and_determinism() {
    let (m, y) = dataset(4, 80);
    let plan = kfold_split(80, 5, 2).unwrap();
    let a = fit_stacking(&m, &y, &bases(), &plan, &RidgeParams::default()).unwrap();
    let b = fit_stacking(&m, &y, &bases(), &plan, &RidgeParams::default()).unwrap();
    let bytes = a.to_json().unwrap();
    assert_eq!(bytes, b.to_json().unwrap());
    let back = StackingModel::from_json(&bytes).unwrap();
    let p1 = predict_stacking(&a, &m).unwrap();
    let p2 = predict_stacking(&back, &m).unwrap();
    assert_eq!(
        p1.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
        p2.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
    );
    assert_eq!(a.head.weights.len(), 2);
    assert_eq!(
        predict_stacking(&a, &m.select_rows(&[])).unwrap(),
        Vec::<f64>::new()
    );
}

#[test]
fn fold_instances_never_see_their_fold() {
    let (m, y) = dataset(5, 50);
    let plan = kfold_split(50, 5, 8).unwrap();
    let model = fit_stacking(&m, &y, &bases(), &plan, &RidgeParams::default()).unwrap();
    for per_base in &model.fold_models {
        assert_eq!(per_base.len(), 5);
        for (f, fold_model) in per_base.iter().enumerate() {
            // the fold model equals a model trained on exactly the other folds
            let train = plan.train_rows(f);
            let ys: Vec<f64> = train.iter().map(|&r| y[r]).collect();
            let again =
                valuekit::gbm::train(&m.select_rows(&train), &ys, &fold_model.config).unwrap();
            assert_eq!(again.to_json().unwrap(), fold_model.to_json().unwrap());
        }
    }
}
