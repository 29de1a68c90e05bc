mod support;

use std::cell::RefCell;

use lossforge_core::linalg::Matrix;
use lossforge_core::tuneloss::*;
use lossforge_core::{Error, Hypercube, LinearLoss, Observation};
use support::{normal, rng, solve_square};

/// Ridge regression solved in closed form: features are the mean squared
/// training residual and `‖θ‖²`; validation error is the mean squared
/// validation residual.
struct Ridge {
    a: Vec<Vec<f64>>,
    b: Vec<f64>,
    av: Vec<Vec<f64>>,
    bv: Vec<f64>,
    calls: usize,
    /// When set, validation error is `fit + λ*‖θ‖²` on the training data.
    planted: Option<f64>,
}

impl Ridge {
    fn planted(seed: u64) -> Self {
        let mut r = rng(seed);
        let p = 12;
        let truth: Vec<f64> = (0..p).map(|_| 0.5 * normal(&mut r)).collect();
        let mut sample = |n: usize| {
            let a: Vec<Vec<f64>> = (0..n).map(|_| (0..p).map(|_| normal(&mut r)).collect()).collect();
            let b: Vec<f64> = a.iter().map(|row| row.iter().zip(&truth).map(|(x, t)| x * t).sum::<f64>() + 1.5 * normal(&mut r)).collect();
            (a, b)
        };
        let (a, b) = sample(16);
        let (av, bv) = sample(40);
        Ridge { a, b, av, bv, calls: 0, planted: None }
    }

    fn residual(a: &[Vec<f64>], b: &[f64], theta: &[f64]) -> Vec<f64> {
        a.iter().zip(b).map(|(row, y)| row.iter().zip(theta).map(|(x, t)| x * t).sum::<f64>() - y).collect()
    }

    /// `(mean r², 2Aᵀr/N)`.
    fn mse(a: &[Vec<f64>], b: &[f64], theta: &[f64]) -> (f64, Vec<f64>) {
        let r = Self::residual(a, b, theta);
        let n = a.len() as f64;
        let grad = (0..theta.len()).map(|j| 2.0 * a.iter().zip(&r).map(|(row, ri)| row[j] * ri).sum::<f64>() / n).collect();
        (r.iter().map(|v| v * v).sum::<f64>() / n, grad)
    }

    fn fit(&self, lambda: &[f64]) -> Vec<f64> {
        let p = self.a[0].len();
        let n = self.a.len() as f64;
        let h: Vec<Vec<f64>> = (0..p)
            .map(|i| (0..p).map(|j| lambda[0] * self.a.iter().map(|r| r[i] * r[j]).sum::<f64>() / n + if i == j { lambda[1] } else { 0.0 }).collect())
            .collect();
        let rhs: Vec<f64> = (0..p).map(|i| lambda[0] * self.a.iter().zip(&self.b).map(|(r, y)| r[i] * y).sum::<f64>() / n).collect();
        solve_square(&h, &rhs).unwrap()
    }

    fn observe(&self, theta: &[f64]) -> Observation {
        let (fit, gfit) = Self::mse(&self.a, &self.b, theta);
        let reg: f64 = theta.iter().map(|t| t * t).sum();
        let (ve, gve) = match self.planted {
            Some(l) => (fit + l * reg, gfit.iter().zip(theta).map(|(g, t)| g + 2.0 * l * t).collect()),
            None => Self::mse(&self.av, &self.bv, theta),
        };
        let jac: Vec<Vec<f64>> = (0..theta.len()).map(|j| vec![gfit[j], 2.0 * theta[j]]).collect();
        Observation::new(ve, vec![fit, reg], "ridge").unwrap().with_gradients(gve, Matrix::from_rows(&jac, 2).unwrap()).unwrap()
    }
}

impl TrainerHandle for Ridge {
    type Model = Vec<f64>;

    fn feature_names(&self) -> Vec<String> {
        vec!["fit".into(), "l2sq".into()]
    }

    fn train(&mut self, loss: &LinearLoss, _warm: &Vec<f64>, _mode: Mode) -> lossforge_core::Result<Option<(Vec<f64>, Observation)>> {
        self.calls += 1;
        let theta = self.fit(loss.lambda());
        let obs = self.observe(&theta);
        Ok(Some((theta, obs)))
    }
}

fn ridge_box() -> Hypercube {
    Hypercube::new(vec![1.0, 1e-3], vec![1.0, 10.0]).unwrap()
}

#[test]
fn planted_ridge_tuning_beats_grid_after_three_runs() {
    for seed in 0..10 {
        let mut ridge = Ridge::planted(seed);
        let target = 1e-3 * 10f64.powf(4.0 * ((seed as f64 * 0.618_034).fract()));
        ridge.planted = Some(target);
        let grid_best = (0..25)
            .map(|i| {
                let l2 = 1e-3 * 10f64.powf(4.0 * i as f64 / 24.0);
                ridge.observe(&ridge.fit(&[1.0, l2])).ve()
            })
            .fold(f64::INFINITY, f64::min);
        let theta0 = ridge.fit(&[1.0, 1.0]);
        let initial = vec![ridge.observe(&theta0)];
        let mut config = TuneConfig::new(Mode::FullRun, 3, ridge_box());
        config.use_gradients = true;
        let (trace, _) = tune_loss(initial, theta0, &mut ridge, &config, &NoClock).unwrap();
        let best = *trace.best_so_far_ve().last().unwrap();
        assert!(best <= grid_best + 1e-9, "seed {seed}: tuned {best} vs grid {grid_best}");
        assert!((trace.records[0].lambda[1] - target).abs() <= 1e-6 * target.max(1.0), "seed {seed}: {:?}", trace.records[0].lambda);
    }
}

#[test]
fn dataset_grows_by_one_per_iteration() {
    let mut ridge = Ridge::planted(3);
    let theta0 = ridge.fit(&[1.0, 0.1]);
    let initial = vec![ridge.observe(&theta0), ridge.observe(&ridge.fit(&[1.0, 5.0]))];
    for use_gradients in [false, true] {
        let mut config = TuneConfig::new(Mode::FullRun, 4, ridge_box());
        config.use_gradients = use_gradients;
        let (trace, _) = tune_loss(initial.clone(), theta0.clone(), &mut ridge, &config, &NoClock).unwrap();
        assert_eq!(trace.records.len(), 4);
        assert_eq!(trace.observations().len(), 2 + 4);
        assert!(trace.best_so_far_ve().windows(2).all(|w| w[1] <= w[0]));
        for r in &trace.records {
            assert_eq!(r.epsilon == 0.0, !use_gradients);
            assert!(ridge_box().contains(&r.lambda, 1e-9));
        }
    }
}

/// Returns its warm start untouched; records every warm start it receives.
struct Identity {
    obs: Observation,
    seen: RefCell<Vec<Vec<f64>>>,
    step: f64,
}

impl TrainerHandle for Identity {
    type Model = Vec<f64>;

    fn feature_names(&self) -> Vec<String> {
        vec!["a".into(), "b".into()]
    }

    fn train(&mut self, _loss: &LinearLoss, warm: &Vec<f64>, _mode: Mode) -> lossforge_core::Result<Option<(Vec<f64>, Observation)>> {
        self.seen.borrow_mut().push(warm.clone());
        let next: Vec<f64> = warm.iter().map(|v| v + self.step).collect();
        Ok(Some((next, self.obs.clone())))
    }
}

#[test]
fn identity_trainer_single_iteration() {
    let obs = Observation::new(0.4, vec![1.0, 2.0], "m0").unwrap();
    let mut t = Identity { obs: obs.clone(), seen: RefCell::new(vec![]), step: 0.0 };
    let config = TuneConfig::new(Mode::Online, 1, Hypercube::uniform(2, 0.0, 1.0).unwrap());
    let (trace, model) = tune_loss(vec![obs.clone()], vec![0.5], &mut t, &config, &NoClock).unwrap();
    assert_eq!(trace.records.len(), 1);
    assert_eq!(trace.records[0].observation, obs);
    assert_eq!(model, vec![0.5]);
}

#[test]
fn online_warm_start_chain() {
    let obs = Observation::new(0.4, vec![1.0, 2.0], "m0").unwrap();
    let mut t = Identity { obs: obs.clone(), seen: RefCell::new(vec![]), step: 0.25 };
    let config = TuneConfig::new(Mode::Online, 3, Hypercube::uniform(2, 0.0, 1.0).unwrap());
    let (_, last) = tune_loss(vec![obs], vec![1.0], &mut t, &config, &NoClock).unwrap();
    assert_eq!(*t.seen.borrow(), vec![vec![1.0], vec![1.25], vec![1.5]]);
    assert_eq!(last, vec![1.75]);
}

struct Failing {
    ok_calls: usize,
}

impl TrainerHandle for Failing {
    type Model = ();

    fn feature_names(&self) -> Vec<String> {
        vec!["a".into()]
    }

    fn train(&mut self, _loss: &LinearLoss, _warm: &(), _mode: Mode) -> lossforge_core::Result<Option<((), Observation)>> {
        if self.ok_calls == 0 {
            return Err(Error::Trainer("diverged".into()));
        }
        self.ok_calls -= 1;
        Ok(Some(((), Observation::new(0.1, vec![1.0], "x").unwrap())))
    }
}

#[test]
fn failures_keep_partial_trace() {
    let config = TuneConfig::new(Mode::FullRun, 5, Hypercube::uniform(1, 0.5, 1.0).unwrap());
    let initial = vec![Observation::new(0.3, vec![2.0], "i").unwrap()];
    let err = tune_loss(initial, (), &mut Failing { ok_calls: 2 }, &config, &NoClock).unwrap_err();
    assert_eq!(err.error, Error::Trainer("diverged".into()));
    assert_eq!(err.trace.records.len(), 2);
    let none = tune_loss(vec![], (), &mut Failing { ok_calls: 2 }, &config, &NoClock).unwrap_err();
    assert!(matches!(none.error, Error::Invalid(_)));
}

#[test]
fn runs_are_reproducible() {
    let run = || {
        let mut ridge = Ridge::planted(8);
        let theta0 = ridge.fit(&[1.0, 2.0]);
        let mut config = TuneConfig::new(Mode::FullRun, 3, ridge_box());
        config.use_gradients = true;
        tune_loss(vec![ridge.observe(&theta0)], theta0, &mut ridge, &config, &NoClock).unwrap().0
    };
    assert_eq!(run(), run());
}

/// Validation error falls for three epochs, then rises.
struct Curve {
    values: Vec<f64>,
    at: usize,
}

impl TrainerHandle for Curve {
    type Model = usize;

    fn feature_names(&self) -> Vec<String> {
        vec!["a".into()]
    }

    fn train(&mut self, _loss: &LinearLoss, warm: &usize, _mode: Mode) -> lossforge_core::Result<Option<(usize, Observation)>> {
        if self.at == self.values.len() {
            return Ok(None);
        }
        let v = self.values[self.at];
        self.at += 1;
        Ok(Some((warm + 1, Observation::new(v, vec![v], "c").unwrap())))
    }
}

#[test]
fn bootstrap_stops_when_validation_rises() {
    let loss = LinearLoss::unnamed(vec![1.0]).unwrap();
    let mut c = Curve { values: vec![1.0, 0.8, 0.7, 0.75, 0.6], at: 0 };
    let b = bootstrap_until_overfit(&mut c, &loss, 0, 100).unwrap();
    assert_eq!(b.validation_curve, vec![1.0, 0.8, 0.7, 0.75]);
    assert_eq!(b.overfit_epoch, 4);
    assert_eq!(b.models, vec![1, 2, 3, 4]);

    let mut short = Curve { values: vec![1.0, 0.9], at: 0 };
    let b = bootstrap_until_overfit(&mut short, &loss, 0, 100).unwrap();
    assert_eq!(b.overfit_epoch, 2);
    let mut capped = Curve { values: vec![1.0, 0.9, 0.8], at: 0 };
    assert_eq!(bootstrap_until_overfit(&mut capped, &loss, 0, 2).unwrap().validation_curve.len(), 2);
}
