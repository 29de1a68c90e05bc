//! The outer loop: learn a loss from every model seen so far, train a new
//! model against it, add that model's observation, repeat.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{invalid, Error, Result};
use crate::learnloss::{default_epsilon, learn_loss};
use crate::losscore::{evaluate_loss, CostParams, Hypercube, LinearLoss, Observation};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Each iteration trains one more epoch from the previous model.
    Online,
    /// Each iteration is a complete training run.
    FullRun,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EpsilonPolicy {
    Fixed(f64),
    /// `Σ‖g‖² / Σ‖J‖²_F`, recomputed from all observations before every learning step.
    Heuristic,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TuneConfig {
    pub mode: Mode,
    pub max_iterations: usize,
    pub feasible: Hypercube,
    pub epsilon_policy: EpsilonPolicy,
    /// Without gradients the cost has no gradient term whatever the policy.
    pub use_gradients: bool,
    pub alpha_min: f64,
    pub seed: u64,
}

impl TuneConfig {
    pub fn new(mode: Mode, max_iterations: usize, feasible: Hypercube) -> Self {
        TuneConfig {
            mode,
            max_iterations,
            feasible,
            epsilon_policy: EpsilonPolicy::Heuristic,
            use_gradients: false,
            alpha_min: CostParams::DEFAULT_ALPHA_MIN,
            seed: 0,
        }
    }
}

/// Something that trains models against a linear loss.
pub trait TrainerHandle {
    type Model: Clone;

    fn feature_names(&self) -> Vec<String>;

    /// Trains against `loss` starting from `warm` and reports the result, or
    /// `None` when the trainer has nothing left to do. Must be deterministic
    /// in its inputs.
    fn train(&mut self, loss: &LinearLoss, warm: &Self::Model, mode: Mode) -> Result<Option<(Self::Model, Observation)>>;
}

/// Milliseconds since some fixed origin.
pub trait Clock {
    fn now_ms(&self) -> f64;
}

/// Always reports 0, keeping traces free of timing noise.
#[derive(Clone, Copy, Debug, Default)]
pub struct NoClock;

impl Clock for NoClock {
    fn now_ms(&self) -> f64 {
        0.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TuneRecord {
    /// 1-based.
    pub iteration: usize,
    pub lambda: Vec<f64>,
    pub alpha: f64,
    pub epsilon: f64,
    pub argmin_index: usize,
    pub ve: f64,
    /// `λ·φ(θ)` of the new model under the loss it was trained with.
    pub train_loss: f64,
    pub wall_ms: f64,
    pub observation: Observation,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TuneTrace {
    pub feature_names: Vec<String>,
    pub initial: Vec<Observation>,
    pub records: Vec<TuneRecord>,
}

impl TuneTrace {
    /// Initial observations followed by one per iteration.
    pub fn observations(&self) -> Vec<Observation> {
        self.initial.iter().cloned().chain(self.records.iter().map(|r| r.observation.clone())).collect()
    }

    /// Running minimum of `ve` over the tuned iterations, seeded with the
    /// best initial observation.
    pub fn best_so_far_ve(&self) -> Vec<f64> {
        let mut best = self.initial.iter().map(Observation::ve).fold(f64::INFINITY, f64::min);
        self.records
            .iter()
            .map(|r| {
                best = best.min(r.ve);
                best
            })
            .collect()
    }
}

/// A failed run together with everything completed before the failure.
#[derive(Clone, Debug, PartialEq)]
pub struct TuneFailure {
    pub error: Error,
    pub trace: TuneTrace,
}

impl fmt::Display for TuneFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (after {} iterations)", self.error, self.trace.records.len())
    }
}

impl core::error::Error for TuneFailure {}

pub fn tune_loss<T: TrainerHandle>(
    initial: Vec<Observation>,
    warm_start: T::Model,
    trainer: &mut T,
    config: &TuneConfig,
    clock: &dyn Clock,
) -> core::result::Result<(TuneTrace, T::Model), TuneFailure> {
    let names = trainer.feature_names();
    let mut trace = TuneTrace { feature_names: names.clone(), initial, records: Vec::new() };
    let fail = |error: Error, trace: TuneTrace| TuneFailure { error, trace };
    if trace.initial.is_empty() {
        return Err(fail(invalid("tune_loss needs at least one initial observation"), trace));
    }
    if config.max_iterations == 0 {
        return Err(fail(invalid("max_iterations must be at least 1"), trace));
    }
    let mut data: Vec<Observation> = if config.use_gradients {
        trace.initial.clone()
    } else {
        trace.initial.iter().map(Observation::without_gradients).collect()
    };
    let mut model = warm_start;
    for iteration in 1..=config.max_iterations {
        let started = clock.now_ms();
        let epsilon = if !config.use_gradients {
            0.0
        } else {
            match config.epsilon_policy {
                EpsilonPolicy::Fixed(e) => e,
                EpsilonPolicy::Heuristic => match default_epsilon(&data) {
                    Ok(e) => e,
                    Err(e) => return Err(fail(e, trace)),
                },
            }
        };
        let step = CostParams::new(epsilon, config.alpha_min)
            .and_then(|params| learn_loss(&data, &config.feasible, &params))
            .and_then(|learned| Ok((LinearLoss::new(learned.lambda.clone(), names.clone())?, learned)));
        let (loss, learned) = match step {
            Ok(v) => v,
            Err(e) => return Err(fail(e, trace)),
        };
        let (next, obs) = match trainer.train(&loss, &model, config.mode) {
            Ok(Some(v)) => v,
            Ok(None) => break,
            Err(e) => return Err(fail(e, trace)),
        };
        let train_loss = match evaluate_loss(&loss, obs.fv()) {
            Ok(v) => v,
            Err(e) => return Err(fail(e, trace)),
        };
        data.push(if config.use_gradients { obs.clone() } else { obs.without_gradients() });
        trace.records.push(TuneRecord {
            iteration,
            lambda: learned.lambda,
            alpha: learned.alpha,
            epsilon,
            argmin_index: learned.argmin_index,
            ve: obs.ve(),
            train_loss,
            wall_ms: clock.now_ms() - started,
            observation: obs,
        });
        model = next;
    }
    Ok((trace, model))
}

/// First epoch (1-based, at least 2) whose value exceeds the previous one, or
/// the curve length if the curve never rises.
pub fn overfit_start_epoch(validation_curve: &[f64]) -> usize {
    (1..validation_curve.len()).find(|&i| validation_curve[i] > validation_curve[i - 1]).map_or(validation_curve.len(), |i| i + 1)
}

/// Models collected by training with a fixed loss one epoch at a time.
#[derive(Clone, Debug)]
pub struct Bootstrap<M> {
    pub models: Vec<M>,
    pub observations: Vec<Observation>,
    pub validation_curve: Vec<f64>,
    /// 1-based epoch at which validation error first rose, or the number of
    /// epochs run if it never did.
    pub overfit_epoch: usize,
}

/// Trains with `loss` one epoch at a time, stopping as soon as validation
/// error rises or after `max_epochs`. Every per-epoch model is kept.
pub fn bootstrap_until_overfit<T: TrainerHandle>(
    trainer: &mut T,
    loss: &LinearLoss,
    start: T::Model,
    max_epochs: usize,
) -> Result<Bootstrap<T::Model>> {
    if max_epochs == 0 {
        return Err(invalid("bootstrap needs at least one epoch"));
    }
    let mut models = Vec::new();
    let mut observations: Vec<Observation> = Vec::new();
    let mut curve = Vec::new();
    let mut model = start;
    while curve.len() < max_epochs {
        let Some((next, obs)) = trainer.train(loss, &model, Mode::Online)? else { break };
        curve.push(obs.ve());
        models.push(next.clone());
        observations.push(obs);
        model = next;
        let n = curve.len();
        if n >= 2 && curve[n - 1] > curve[n - 2] {
            break;
        }
    }
    if curve.is_empty() {
        return Err(Error::Trainer(String::from("trainer produced no models during bootstrap")));
    }
    let overfit_epoch = overfit_start_epoch(&curve);
    Ok(Bootstrap { models, observations, validation_curve: curve, overfit_epoch })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overfit_examples() {
        assert_eq!(overfit_start_epoch(&[1.0, 0.8, 0.9]), 3);
        assert_eq!(overfit_start_epoch(&[1.0, 0.9, 0.8]), 3);
        assert_eq!(overfit_start_epoch(&[0.5, 0.6]), 2);
        assert_eq!(overfit_start_epoch(&[0.5]), 1);
        assert_eq!(overfit_start_epoch(&[0.5, 0.5, 0.4]), 3);
    }
}
