mod support;

use std::sync::Arc;

use lossforge_core::features::*;
use lossforge_core::linalg::Matrix;
use lossforge_core::oracle::finite_difference_gradient;
use lossforge_core::trainer::*;
use lossforge_core::{evaluate_loss, LinearLoss};
use rand::seq::SliceRandom;
use support::{close_rel, random_dataset, random_theta, rng};

fn logloss_only(data: &Arc<Dataset>) -> FeatureSet {
    let spec = data.spec();
    FeatureSet::new(spec, vec![Box::new(LogLoss::new("logloss", data.clone()).unwrap())], Some(0)).unwrap()
}

#[test]
fn logloss_gradient_matches_finite_differences() {
    let data = random_dataset(1, 10, 4, 3);
    let spec = data.spec();
    let mut r = rng(2);
    for _ in 0..10 {
        let theta = random_theta(&mut r, spec.num_params(), 1.0);
        let (_, g) = logloss_and_grad(&spec, &theta, &data).unwrap();
        let fd = finite_difference_gradient(|t| logloss(&spec, t, &data).unwrap(), &theta, 1e-5);
        assert!(close_rel(&g, &fd, 1e-6, 1e-3), "{g:?}\n{fd:?}");
    }
}

#[test]
fn one_epoch_is_one_step_per_example() {
    let data = Arc::new(random_dataset(3, 3, 2, 2));
    let fs = logloss_only(&data);
    let spec = data.spec();
    let loss = LinearLoss::unnamed(vec![1.0]).unwrap();
    let start = TrainState::new(&spec, 17);
    let splits = Splits { train: &data, validation: &data };
    let (trained, _) = train_with_warm_start(&loss, &fs, &start, splits, Schedule::OneEpoch, &TrainOptions::default()).unwrap();
    assert_eq!(trained.epoch, 1);

    // Replay by hand: same shuffle, three single-example AdaGrad steps.
    let mut replay = start.clone();
    let mut order = vec![0, 1, 2];
    let mut r = epoch_rng(17, 0);
    order.shuffle(&mut r);
    for i in order {
        let sub = data.subset(&[i]);
        let (_, g) = logloss_and_grad(&spec, &replay.theta, &sub).unwrap();
        adagrad_step(&mut replay, &g, DEFAULT_LEARNING_RATE);
    }
    assert_eq!(trained.theta, replay.theta);
    assert_eq!(trained.accumulators, replay.accumulators);
}

#[test]
fn separable_data_is_fit() {
    let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![if i % 2 == 0 { 1.0 } else { -1.0 } * (1.0 + i as f64 / 20.0), 0.3 * (i as f64).sin()]).collect();
    let y: Vec<usize> = (0..20).map(|i| i % 2).collect();
    let data = Arc::new(Dataset::new(Matrix::from_rows(&rows, 2).unwrap(), y, 2).unwrap());
    let fs = logloss_only(&data);
    let loss = LinearLoss::unnamed(vec![1.0]).unwrap();
    let splits = Splits { train: &data, validation: &data };
    let (s, _) = train_with_warm_start(&loss, &fs, &TrainState::new(&data.spec(), 0), splits, Schedule::FullRun(200), &TrainOptions::default())
        .unwrap();
    assert_eq!(error_rate(&data.spec(), &s.theta, &data).unwrap(), 0.0);
}

#[test]
fn zero_rate_keeps_parameters() {
    let data = Arc::new(random_dataset(4, 8, 3, 3));
    let fs = standard_regularizer_features(data.clone(), DropoutConfig::default()).unwrap();
    let mut start = TrainState::new(&data.spec(), 1);
    start.theta = random_theta(&mut rng(5), data.spec().num_params(), 0.5);
    let loss = LinearLoss::new(vec![0.01, 0.01, 0.1, 0.2, 1.0], fs.names().to_vec()).unwrap();
    let opts = TrainOptions { learning_rate: 0.0, ..TrainOptions::default() };
    let (s, _) = train_with_warm_start(&loss, &fs, &start, Splits { train: &data, validation: &data }, Schedule::FullRun(3), &opts).unwrap();
    assert_eq!(s.theta, start.theta);
}

#[test]
fn training_is_deterministic() {
    let train = Arc::new(random_dataset(5, 30, 4, 3));
    let val = random_dataset(6, 10, 4, 3);
    let fs = standard_regularizer_features(train.clone(), DropoutConfig::default()).unwrap();
    let loss = LinearLoss::new(vec![0.001, 0.01, 0.05, 0.2, 1.0], fs.names().to_vec()).unwrap();
    let opts = TrainOptions { with_gradients: true, ..TrainOptions::default() };
    let run = || {
        train_with_warm_start(&loss, &fs, &TrainState::new(&train.spec(), 9), Splits { train: &train, validation: &val }, Schedule::FullRun(4), &opts)
            .unwrap()
    };
    let (a, oa) = run();
    let (b, ob) = run();
    assert_eq!(a, b);
    assert_eq!(oa, ob);
}

#[test]
fn observation_contents() {
    let train = Arc::new(random_dataset(7, 12, 3, 4));
    let val = random_dataset(8, 6, 3, 4);
    let fs = standard_regularizer_features(train.clone(), DropoutConfig::default()).unwrap();
    let n = train.spec().num_params();
    let zero = evaluate_observation(&vec![0.0; n], &fs, &val, false, "z").unwrap();
    assert!((zero.ve() - 4f64.ln()).abs() < 1e-14);
    assert!(zero.gradients().is_none());

    let theta = random_theta(&mut rng(3), n, 0.6);
    let obs = evaluate_observation(&theta, &fs, &val, true, "r").unwrap();
    let g = obs.gradients().unwrap();
    let fd = finite_difference_gradient(|t| logloss(&train.spec(), t, &val).unwrap(), &theta, 1e-5);
    assert!(close_rel(&g.grad_ve, &fd, 1e-4, 1e-3));
    for j in 0..fs.len() {
        let fdj = finite_difference_gradient(|t| fs.values(t)[j], &theta, 1e-5);
        assert!(close_rel(&g.jacobian.column(j), &fdj, 1e-4, 1e-3), "feature {j}");
    }
    let loss = LinearLoss::new(vec![0.3, 0.2, 0.1, 0.4, 1.0], fs.names().to_vec()).unwrap();
    let direct = training_objective(&loss, &fs, &theta);
    assert!((evaluate_loss(&loss, obs.fv()).unwrap() - direct).abs() <= 1e-10);
}

#[test]
fn convex_training_loss_decreases_per_epoch() {
    let train = Arc::new(random_dataset(9, 40, 5, 3));
    let fs = standard_regularizer_features(train.clone(), DropoutConfig::default()).unwrap();
    // Dropout weight zero keeps every step exact; the remaining features are convex.
    let loss = LinearLoss::new(vec![0.001, 0.01, 0.05, 0.0, 1.0], fs.names().to_vec()).unwrap();
    let mut state = TrainState::new(&train.spec(), 4);
    let mut prev = training_objective(&loss, &fs, &state.theta);
    for _ in 0..15 {
        let (s, _) = train_with_warm_start(&loss, &fs, &state, Splits { train: &train, validation: &train }, Schedule::OneEpoch, &TrainOptions::default())
            .unwrap();
        state = s;
        let cur = training_objective(&loss, &fs, &state.theta);
        assert!(cur <= prev + 1e-3, "{cur} > {prev}");
        prev = cur;
    }
}

#[test]
fn shape_errors() {
    let train = Arc::new(random_dataset(1, 5, 2, 2));
    let other = random_dataset(2, 5, 3, 2);
    let fs = logloss_only(&train);
    let loss = LinearLoss::unnamed(vec![1.0]).unwrap();
    let start = TrainState::new(&train.spec(), 0);
    let splits = Splits { train: &train, validation: &other };
    assert!(train_with_warm_start(&loss, &fs, &start, splits, Schedule::OneEpoch, &TrainOptions::default()).is_err());
    let two = LinearLoss::unnamed(vec![1.0, 2.0]).unwrap();
    let splits = Splits { train: &train, validation: &train };
    assert!(train_with_warm_start(&two, &fs, &start, splits, Schedule::OneEpoch, &TrainOptions::default()).is_err());
}
