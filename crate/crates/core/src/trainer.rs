//! Softmax regression trained with AdaGrad against a linear loss.
//!
//! Parameters are flattened as the `d × C` weight matrix in row-major order
//! (`W[j][c]` at `j·C + c`) followed by the `C` biases.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{dim_err, invalid, Error, Result};
use crate::features::FeatureSet;
use crate::linalg::{dot, Matrix};
use crate::losscore::{LinearLoss, Observation};
use crate::math::{exp, ln, sqrt};
use crate::tuneloss::{Mode, TrainerHandle};

pub const ADAGRAD_DELTA: f64 = 1e-8;
/// Base rate 1.0 times the multiplier 0.1.
pub const DEFAULT_LEARNING_RATE: f64 = 0.1;

/// Examples with integer labels in `[0, C)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    x: Matrix,
    y: Vec<usize>,
    num_classes: usize,
}

impl Dataset {
    pub fn new(x: Matrix, y: Vec<usize>, num_classes: usize) -> Result<Self> {
        if x.rows() != y.len() {
            return Err(dim_err(format!("{} feature rows but {} labels", x.rows(), y.len())));
        }
        if num_classes < 2 {
            return Err(invalid("need at least two classes"));
        }
        if let Some(&bad) = y.iter().find(|&&c| c >= num_classes) {
            return Err(invalid(format!("label {bad} out of range for {num_classes} classes")));
        }
        if !x.is_finite() {
            return Err(invalid("dataset contains non-finite features"));
        }
        Ok(Dataset { x, y, num_classes })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self) -> &Matrix {
        &self.x
    }

    pub fn example(&self, i: usize) -> &[f64] {
        self.x.row(i)
    }

    pub fn labels(&self) -> &[usize] {
        &self.y
    }

    pub fn label(&self, i: usize) -> usize {
        self.y[i]
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let rows: Vec<Vec<f64>> = indices.iter().map(|&i| self.x.row(i).to_vec()).collect();
        Dataset {
            x: Matrix::from_rows(&rows, self.dim()).expect("rows share a width"),
            y: indices.iter().map(|&i| self.y[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    pub fn spec(&self) -> ModelSpec {
        ModelSpec { input_dim: self.dim(), num_classes: self.num_classes }
    }
}

/// Shape of a softmax-regression model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelSpec {
    pub input_dim: usize,
    pub num_classes: usize,
}

impl ModelSpec {
    pub fn num_params(&self) -> usize {
        (self.input_dim + 1) * self.num_classes
    }

    pub fn weight_index(&self, input: usize, class: usize) -> usize {
        input * self.num_classes + class
    }

    pub fn bias_index(&self, class: usize) -> usize {
        self.input_dim * self.num_classes + class
    }

    pub(crate) fn check(&self, theta: &[f64], data: &Dataset) -> Result<()> {
        if theta.len() != self.num_params() {
            return Err(dim_err(format!("theta has length {}, model needs {}", theta.len(), self.num_params())));
        }
        if data.dim() != self.input_dim || data.num_classes() != self.num_classes {
            return Err(dim_err(format!(
                "data is {} inputs / {} classes, model is {} / {}",
                data.dim(),
                data.num_classes(),
                self.input_dim,
                self.num_classes
            )));
        }
        Ok(())
    }

    /// `z_c = Σ_j input_j W[j][c] + b_c`.
    pub fn logits(&self, theta: &[f64], input: &[f64]) -> Vec<f64> {
        let c = self.num_classes;
        let mut z = theta[self.input_dim * c..].to_vec();
        for (j, &v) in input.iter().enumerate() {
            if v != 0.0 {
                let w = &theta[j * c..(j + 1) * c];
                for (zc, wc) in z.iter_mut().zip(w) {
                    *zc += v * wc;
                }
            }
        }
        z
    }

    /// Adds `scale · ∂z/∂θ ᵀ dz` for the logits of `input`.
    pub(crate) fn add_logit_gradient(&self, input: &[f64], dz: &[f64], scale: f64, out: &mut [f64]) {
        let c = self.num_classes;
        for (j, &v) in input.iter().enumerate() {
            if v != 0.0 {
                for (o, d) in out[j * c..(j + 1) * c].iter_mut().zip(dz) {
                    *o += scale * v * d;
                }
            }
        }
        for (o, d) in out[self.input_dim * c..].iter_mut().zip(dz) {
            *o += scale * d;
        }
    }
}

/// Numerically stable `(log Σ exp z, softmax z)`.
pub fn log_softmax_parts(z: &[f64]) -> (f64, Vec<f64>) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| exp(v - max)).collect();
    let s: f64 = e.iter().sum();
    (max + ln(s), e.into_iter().map(|v| v / s).collect())
}

/// Cross-entropy of one example and its gradient with respect to the logits.
pub(crate) fn example_logloss(z: &[f64], label: usize) -> (f64, Vec<f64>) {
    let (lse, mut p) = log_softmax_parts(z);
    let loss = lse - z[label];
    p[label] -= 1.0;
    (loss, p)
}

/// Mean cross-entropy over `data` and its exact gradient.
pub fn logloss_and_grad(spec: &ModelSpec, theta: &[f64], data: &Dataset) -> Result<(f64, Vec<f64>)> {
    spec.check(theta, data)?;
    if data.is_empty() {
        return Err(invalid("log loss of an empty dataset"));
    }
    let scale = 1.0 / data.len() as f64;
    let mut grad = vec![0.0; spec.num_params()];
    let mut total = 0.0;
    for i in 0..data.len() {
        let x = data.example(i);
        let (l, dz) = example_logloss(&spec.logits(theta, x), data.label(i));
        total += l;
        spec.add_logit_gradient(x, &dz, scale, &mut grad);
    }
    Ok((total * scale, grad))
}

pub fn logloss(spec: &ModelSpec, theta: &[f64], data: &Dataset) -> Result<f64> {
    spec.check(theta, data)?;
    if data.is_empty() {
        return Err(invalid("log loss of an empty dataset"));
    }
    let total: f64 = (0..data.len()).map(|i| example_logloss(&spec.logits(theta, data.example(i)), data.label(i)).0).sum();
    Ok(total / data.len() as f64)
}

/// Fraction of examples whose highest logit is not the label (first index wins ties).
pub fn error_rate(spec: &ModelSpec, theta: &[f64], data: &Dataset) -> Result<f64> {
    spec.check(theta, data)?;
    if data.is_empty() {
        return Err(invalid("error rate of an empty dataset"));
    }
    let wrong = (0..data.len())
        .filter(|&i| {
            let z = spec.logits(theta, data.example(i));
            let mut best = 0;
            for c in 1..z.len() {
                if z[c] > z[best] {
                    best = c;
                }
            }
            best != data.label(i)
        })
        .count();
    Ok(wrong as f64 / data.len() as f64)
}

/// AdaGrad state. `epoch` counts completed passes; `rng_seed` drives the
/// per-epoch shuffles.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub theta: Vec<f64>,
    pub accumulators: Vec<f64>,
    pub epoch: u64,
    pub rng_seed: u64,
}

impl TrainState {
    /// All-zero parameters and accumulators.
    pub fn new(spec: &ModelSpec, rng_seed: u64) -> Self {
        let n = spec.num_params();
        TrainState { theta: vec![0.0; n], accumulators: vec![0.0; n], epoch: 0, rng_seed }
    }
}

/// `acc += g²; θ −= lr · g / (√acc + δ)`.
pub fn adagrad_step(state: &mut TrainState, grad: &[f64], lr: f64) {
    for ((t, a), &g) in state.theta.iter_mut().zip(state.accumulators.iter_mut()).zip(grad) {
        *a += g * g;
        *t -= lr * g / (sqrt(*a) + ADAGRAD_DELTA);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Schedule {
    OneEpoch,
    FullRun(u64),
}

impl Schedule {
    pub fn epochs(self) -> u64 {
        match self {
            Schedule::OneEpoch => 1,
            Schedule::FullRun(e) => e,
        }
    }
}

/// Training and validation splits used by one training run.
#[derive(Clone, Copy, Debug)]
pub struct Splits<'a> {
    pub train: &'a Dataset,
    pub validation: &'a Dataset,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOptions {
    pub learning_rate: f64,
    pub with_gradients: bool,
    pub model_id: String,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions { learning_rate: DEFAULT_LEARNING_RATE, with_gradients: false, model_id: String::new() }
    }
}

/// Shuffling stream for one epoch: a fresh ChaCha stream keyed by `(seed, epoch)`.
pub fn epoch_rng(seed: u64, epoch: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    rng
}

/// Runs AdaGrad with batch size 1 over shuffled training examples, minimizing
/// `λ·φ(θ)`, then reports the resulting model.
pub fn train_with_warm_start(
    loss: &LinearLoss,
    features: &FeatureSet,
    start: &TrainState,
    splits: Splits<'_>,
    schedule: Schedule,
    options: &TrainOptions,
) -> Result<(TrainState, Observation)> {
    let spec = features.spec();
    spec.check(&start.theta, splits.train)?;
    spec.check(&start.theta, splits.validation)?;
    if loss.dim() != features.len() {
        return Err(dim_err(format!("loss has {} weights, feature set has {}", loss.dim(), features.len())));
    }
    if let Some(n) = features.num_examples().filter(|&n| n != splits.train.len()) {
        return Err(dim_err(format!("features were built over {n} examples, training split has {}", splits.train.len())));
    }
    let mut state = start.clone();
    let mut order: Vec<usize> = (0..splits.train.len()).collect();
    for _ in 0..schedule.epochs() {
        let mut rng = epoch_rng(state.rng_seed, state.epoch);
        order.sort_unstable();
        order.shuffle(&mut rng);
        for &i in &order {
            let g = features.step_gradient(&state.theta, loss.lambda(), i, &mut rng);
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("gradient at epoch {} example {i}", state.epoch)));
            }
            adagrad_step(&mut state, &g, options.learning_rate);
        }
        if state.theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("parameters after epoch {}", state.epoch)));
        }
        state.epoch += 1;
    }
    let obs = evaluate_observation(&state.theta, features, splits.validation, options.with_gradients, options.model_id.clone())?;
    Ok((state, obs))
}

/// Validation log loss as `ve`, features on the training split, and
/// optionally `∇ve` and the feature Jacobian.
pub fn evaluate_observation(
    theta: &[f64],
    features: &FeatureSet,
    validation: &Dataset,
    with_gradients: bool,
    model_id: impl Into<String>,
) -> Result<Observation> {
    let spec = features.spec();
    let fv = features.values(theta);
    if fv.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(String::from("feature values")));
    }
    let obs = if with_gradients {
        let (ve, g) = logloss_and_grad(&spec, theta, validation)?;
        Observation::new(ve, fv, model_id)?.with_gradients(g, features.jacobian(theta))?
    } else {
        Observation::new(logloss(&spec, theta, validation)?, fv, model_id)?
    };
    Ok(obs)
}

/// `λ·φ(θ)`.
pub fn training_objective(loss: &LinearLoss, features: &FeatureSet, theta: &[f64]) -> f64 {
    dot(loss.lambda(), &features.values(theta))
}

/// [`TrainerHandle`] over the softmax trainer. Online requests run one epoch
/// from the warm start; full runs start from zero with `seed` and run
/// `full_run_epochs` epochs.
#[derive(Debug)]
pub struct SoftmaxHandle<'a> {
    pub features: &'a FeatureSet,
    pub splits: Splits<'a>,
    pub options: TrainOptions,
    pub full_run_epochs: u64,
    pub seed: u64,
    runs: usize,
}

impl<'a> SoftmaxHandle<'a> {
    pub fn new(features: &'a FeatureSet, splits: Splits<'a>, options: TrainOptions, full_run_epochs: u64, seed: u64) -> Self {
        SoftmaxHandle { features, splits, options, full_run_epochs, seed, runs: 0 }
    }

    /// Number of `train` calls so far.
    pub fn runs(&self) -> usize {
        self.runs
    }
}

impl TrainerHandle for SoftmaxHandle<'_> {
    type Model = TrainState;

    fn feature_names(&self) -> Vec<String> {
        self.features.names().to_vec()
    }

    fn train(&mut self, loss: &LinearLoss, warm: &TrainState, mode: Mode) -> Result<Option<(TrainState, Observation)>> {
        let (start, schedule) = match mode {
            Mode::Online => (warm.clone(), Schedule::OneEpoch),
            Mode::FullRun => (TrainState::new(&self.features.spec(), self.seed), Schedule::FullRun(self.full_run_epochs)),
        };
        let options = TrainOptions { model_id: format!("{}{}", self.options.model_id, self.runs), ..self.options.clone() };
        self.runs += 1;
        train_with_warm_start(loss, self.features, &start, self.splits, schedule, &options).map(Some)
    }
}
