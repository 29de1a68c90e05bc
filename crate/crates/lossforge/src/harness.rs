//! Scenario pipelines: TuneLoss against random search or plain AdaGrad on
//! identical data, splits and trainer settings.

use std::collections::BTreeMap;
use std::sync::Arc;

use lossforge_core::features::{
    pwl_is_convex, pwl_value, select_breakpoints, Breakpoints, DropoutLoss, FeatureBlock, FeatureSet, L1Norm, L2Squared, LogLoss,
    PiecewiseLinear, UniformLabelLoss,
};
use lossforge_core::learnloss::zero_cost_nullity;
use lossforge_core::linalg::Matrix;
use lossforge_core::trainer::{logloss, train_with_warm_start, Dataset, Schedule, SoftmaxHandle, Splits, TrainOptions, TrainState};
use lossforge_core::tuneloss::{bootstrap_until_overfit, tune_loss, Clock, EpsilonPolicy, Mode, NoClock, TrainerHandle, TuneConfig};
use lossforge_core::{default_epsilon, learn_loss, CostParams, Hypercube, LinearLoss, Observation};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::clock::WallClock;
use crate::config::{EpsilonSetting, Scenario, ScenarioConfig};
use crate::data::{aligned_training_split, load_dataset, noisy_copy, SplitData};
use crate::error::{config_err, Result};
use crate::report::{Curve, CurvePoint, RegularizerSample, ResolvedSetup, RunReport, SeedReport};

/// Stream offsets keeping the per-purpose random sources of one seed apart.
const RANDOM_SEARCH_STREAM: u64 = 0x5eed_0001;
const MIXTURE_NOISE_STREAM: u64 = 0x5eed_0002;
const RECOVERY_STREAM: u64 = 0x5eed_0003;

/// Samples of the learned regularizer per checkpoint.
const REGULARIZER_SAMPLES: usize = 101;

/// A feature set plus what the harness needs to interpret it.
#[derive(Debug)]
pub struct Features {
    pub set: FeatureSet,
    /// Range-lookup group per feature: `pwl`, `mixture`, or the name itself.
    pub groups: Vec<String>,
    /// Offset of the hinge coefficients and their breakpoints, if present.
    pub pwl: Option<(usize, Breakpoints)>,
    /// Index of the first mixture component, pinned to 1 by default.
    pub mixture_first: Option<usize>,
}

/// Builds the feature set named by `names` over the training split.
///
/// Recognized names: `l1`, `l2sq`, `uniform`, `dropout`, `logloss`,
/// `pwl:<count>` (hinges at breakpoints taken from the weights after one
/// unregularized epoch) and `mixture:<a>,<b>,...` (one log-loss feature per
/// component: `train` is the training split, `augmented` a noisy copy of it,
/// anything else a CSV aligned row for row with the main dataset).
pub fn build_features(names: &[String], data: &SplitData, config: &ScenarioConfig, seed: u64) -> Result<Features> {
    let train = &data.train;
    let spec = train.spec();
    let mut blocks: Vec<Box<dyn FeatureBlock>> = Vec::new();
    let mut groups = Vec::new();
    let mut pwl = None;
    let mut mixture_first = None;
    let mut primary = None;
    for name in names {
        let at = groups.len();
        if let Some(count) = name.strip_prefix("pwl:") {
            let count: usize = count.parse().map_err(|_| config_err(format!("bad breakpoint count in {name:?}")))?;
            let plain = FeatureSet::new(spec, vec![Box::new(LogLoss::new("logloss", train.clone())?)], Some(0))?;
            let opts = TrainOptions { learning_rate: config.trainer.learning_rate, ..TrainOptions::default() };
            let splits = Splits { train, validation: &data.validation };
            let (first, _) = train_with_warm_start(&LinearLoss::unnamed(vec![1.0])?, &plain, &TrainState::new(&spec, seed), splits, Schedule::OneEpoch, &opts)?;
            let bp = select_breakpoints(&first.theta, count)?;
            groups.extend(std::iter::repeat_n("pwl".to_string(), 2 * bp.len()));
            pwl = Some((at, bp.clone()));
            blocks.push(Box::new(PiecewiseLinear::new(bp)));
            continue;
        }
        if let Some(list) = name.strip_prefix("mixture:") {
            mixture_first = Some(at);
            for token in list.split(',').map(str::trim) {
                let component: Arc<Dataset> = match token {
                    "train" => train.clone(),
                    "augmented" => Arc::new(noisy_copy(train, config.mixture.noise, seed ^ MIXTURE_NOISE_STREAM)?),
                    path => {
                        let main = config.dataset.as_ref().ok_or_else(|| config_err("mixture components need a dataset"))?;
                        Arc::new(aligned_training_split(std::path::Path::new(path), main, &data.indices[0])?)
                    }
                };
                blocks.push(Box::new(LogLoss::new(token, component)?));
                groups.push("mixture".to_string());
            }
            continue;
        }
        let block: Box<dyn FeatureBlock> = match name.as_str() {
            "l1" => Box::new(L1Norm),
            "l2sq" => Box::new(L2Squared),
            "uniform" => Box::new(UniformLabelLoss::new(train.clone())?),
            "dropout" => Box::new(DropoutLoss::new(train.clone(), config.trainer.dropout_keep_prob, config.trainer.dropout_masks, seed)?),
            "logloss" => {
                primary = Some(at);
                Box::new(LogLoss::new("logloss", train.clone())?)
            }
            other => return Err(config_err(format!("unknown feature {other:?}"))),
        };
        blocks.push(block);
        groups.push(name.clone());
    }
    if blocks.is_empty() {
        return Err(config_err("empty feature list"));
    }
    let set = FeatureSet::new(spec, blocks, primary)?;
    Ok(Features { set, groups, pwl, mixture_first })
}

/// Default range for one feature. `l1`/`l2sq` ranges are per-example
/// strengths divided by the training size, because every feature here is
/// an average over the training set.
fn default_range(group: &str, index: usize, features: &Features, n_train: usize) -> Result<[f64; 2]> {
    let n = n_train as f64;
    Ok(match group {
        "l1" | "l2sq" => [0.1 / n, 100.0 / n],
        "uniform" => [0.0, 0.1],
        "dropout" => [0.0, 1.0],
        "logloss" => [1.0, 1.0],
        "pwl" => [0.0, 1.0],
        "mixture" if features.mixture_first == Some(index) => [1.0, 1.0],
        "mixture" => [0.0, 1.0],
        other => return Err(config_err(format!("no default range for {other:?}"))),
    })
}

pub fn resolve_feasible(features: &Features, overrides: &BTreeMap<String, [f64; 2]>, n_train: usize) -> Result<Hypercube> {
    for key in overrides.keys() {
        if !features.set.names().contains(key) && !features.groups.contains(key) {
            return Err(config_err(format!("feasible range given for unknown feature {key:?}")));
        }
    }
    let mut lo = Vec::new();
    let mut hi = Vec::new();
    for (j, (name, group)) in features.set.names().iter().zip(&features.groups).enumerate() {
        let [l, h] = match overrides.get(name).or_else(|| overrides.get(group)) {
            Some(r) => *r,
            None => default_range(group, j, features, n_train)?,
        };
        lo.push(l);
        hi.push(h);
    }
    Hypercube::new(lo, hi).map_err(|e| config_err(format!("feasible box: {e}")))
}

/// Geometric mean of the bounds for coordinates with a positive lower
/// bound, midpoint otherwise.
pub fn center(f: &Hypercube) -> Vec<f64> {
    f.lo().iter().zip(f.hi()).map(|(&l, &h)| if l > 0.0 { (l * h).sqrt() } else { 0.5 * (l + h) }).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sampling {
    Pinned,
    Uniform,
    LogUniform,
}

impl Sampling {
    pub fn for_range(lo: f64, hi: f64) -> Self {
        if lo == hi {
            Sampling::Pinned
        } else if lo > 0.0 && hi / lo >= 100.0 {
            Sampling::LogUniform
        } else {
            Sampling::Uniform
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Sampling::Pinned => "pinned",
            Sampling::Uniform => "uniform",
            Sampling::LogUniform => "log-uniform",
        }
    }

    pub fn sample(self, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            Sampling::Pinned => lo,
            Sampling::Uniform => lo + rng.random::<f64>() * (hi - lo),
            Sampling::LogUniform => (lo.ln() + rng.random::<f64>() * (hi / lo).ln()).exp(),
        }
    }
}

pub fn sample_lambda(f: &Hypercube, rng: &mut ChaCha8Rng) -> Vec<f64> {
    f.lo().iter().zip(f.hi()).map(|(&l, &h)| Sampling::for_range(l, h).sample(l, h, rng).clamp(l, h)).collect()
}

fn setup(features: &Features, f: &Hypercube) -> ResolvedSetup {
    ResolvedSetup {
        feature_names: features.set.names().to_vec(),
        lo: f.lo().to_vec(),
        hi: f.hi().to_vec(),
        sampling: f.lo().iter().zip(f.hi()).map(|(&l, &h)| Sampling::for_range(l, h).name().to_string()).collect(),
    }
}

/// Passes training through and records each model's validation and test
/// log loss.
struct Recording<'a, H> {
    inner: H,
    test: &'a Dataset,
    points: Vec<(f64, f64)>,
    last: Option<TrainState>,
}

impl<H: TrainerHandle<Model = TrainState>> TrainerHandle for Recording<'_, H> {
    type Model = TrainState;

    fn feature_names(&self) -> Vec<String> {
        self.inner.feature_names()
    }

    fn train(&mut self, loss: &LinearLoss, warm: &TrainState, mode: Mode) -> lossforge_core::Result<Option<(TrainState, Observation)>> {
        let out = self.inner.train(loss, warm, mode)?;
        if let Some((state, obs)) = &out {
            let test = logloss(&self.test.spec(), &state.theta, self.test)?;
            self.points.push((obs.ve(), test));
            self.last = Some(state.clone());
        }
        Ok(out)
    }
}

fn options(config: &ScenarioConfig) -> TrainOptions {
    TrainOptions { learning_rate: config.trainer.learning_rate, with_gradients: config.use_gradients(), model_id: String::new() }
}

fn tune_config(config: &ScenarioConfig, mode: Mode, iterations: usize, f: Hypercube, seed: u64) -> TuneConfig {
    let mut t = TuneConfig::new(mode, iterations, f);
    t.use_gradients = config.use_gradients();
    t.epsilon_policy = match config.trainer.epsilon {
        EpsilonSetting::Fixed(e) => EpsilonPolicy::Fixed(e),
        EpsilonSetting::Named(_) => EpsilonPolicy::Heuristic,
    };
    t.seed = seed;
    t
}

fn points(values: &[(f64, f64)], first_step: usize) -> Vec<CurvePoint> {
    values.iter().enumerate().map(|(i, &(val, test))| CurvePoint { step: first_step + i, val, test }).collect()
}

struct Prepared {
    data: SplitData,
    features: Features,
    feasible: Hypercube,
}

fn prepare(config: &ScenarioConfig, seed: u64) -> Result<Prepared> {
    let dataset = config.dataset.as_ref().ok_or_else(|| config_err("this scenario needs a [dataset] section"))?;
    let data = load_dataset(dataset, seed)?;
    let features = build_features(&config.feature_names(), &data, config, seed)?;
    let feasible = resolve_feasible(&features, &config.feasible, data.train.len())?;
    Ok(Prepared { data, features, feasible })
}

/// Random search: `budget` full runs from scratch with λ drawn from `F`.
fn random_search_curve(p: &Prepared, config: &ScenarioConfig, seed: u64, budget: usize) -> Result<Curve> {
    let splits = Splits { train: &p.data.train, validation: &p.data.validation };
    let opts = TrainOptions { with_gradients: false, ..options(config) };
    let handle = SoftmaxHandle::new(&p.features.set, splits, opts, config.trainer.epochs, seed);
    let mut rec = Recording { inner: handle, test: &p.data.test, points: Vec::new(), last: None };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ RANDOM_SEARCH_STREAM);
    let start = TrainState::new(&p.features.set.spec(), seed);
    let names = p.features.set.names().to_vec();
    for _ in 0..budget {
        let loss = LinearLoss::new(sample_lambda(&p.feasible, &mut rng), names.clone())?;
        rec.train(&loss, &start, Mode::FullRun)?;
    }
    Ok(Curve { algorithm: "random_search".into(), seed, points: points(&rec.points, 1) })
}

fn clock(config: &ScenarioConfig) -> Box<dyn Clock> {
    if config.record_timing {
        Box::new(WallClock::new())
    } else {
        Box::new(NoClock)
    }
}

/// Full-run tuning. TuneLoss's first training run uses the centre of `F`
/// and contributes every per-epoch checkpoint as an initial observation;
/// each further step is one TuneLoss iteration (a full run). Step `s` of
/// either curve means `s` training runs consumed.
fn full_run_seed(config: &ScenarioConfig, seed: u64, report: &mut SeedReport) -> Result<()> {
    let p = prepare(config, seed)?;
    let splits = Splits { train: &p.data.train, validation: &p.data.validation };
    let spec = p.features.set.spec();
    let names = p.features.set.names().to_vec();
    let handle = SoftmaxHandle::new(&p.features.set, splits, options(config), config.trainer.epochs, seed);
    let mut rec = Recording { inner: handle, test: &p.data.test, points: Vec::new(), last: None };

    let initial_loss = LinearLoss::new(center(&p.feasible), names)?;
    let mut state = TrainState::new(&spec, seed);
    let mut initial = Vec::new();
    for _ in 0..config.trainer.epochs {
        let (next, obs) = rec.train(&initial_loss, &state, Mode::Online)?.expect("the softmax trainer always trains");
        initial.push(obs);
        state = next;
    }
    let best_checkpoint = rec.points.iter().copied().fold((f64::INFINITY, f64::NAN), |b, p| if p.0 < b.0 { p } else { b });
    rec.points.clear();

    let tc = tune_config(config, Mode::FullRun, config.budget, p.feasible.clone(), seed);
    let clock = clock(config);
    let outcome = tune_loss(initial, state, &mut rec, &tc, clock.as_ref());
    let mut values = vec![best_checkpoint];
    values.extend(rec.points.iter().copied());
    report.curves.push(Curve { algorithm: "tuneloss".into(), seed, points: points(&values, 1) });
    report.final_state = rec.last.clone();
    match outcome {
        Ok((trace, _)) => report.trace = Some(trace),
        Err(failure) => {
            report.trace = Some(failure.trace);
            return Err(failure.error.into());
        }
    }
    report.curves.push(random_search_curve(&p, config, seed, config.random_search_budget())?);
    Ok(())
}

/// Online regularizer learning. Plain AdaGrad on the unregularized loss
/// runs for `budget` epochs. TuneLoss bootstraps with the same loss until
/// validation error first rises (at most `budget − 1` epochs), then learns
/// the regularizer one epoch at a time for the remaining epochs.
fn online_seed(config: &ScenarioConfig, seed: u64, report: &mut SeedReport) -> Result<()> {
    let p = prepare(config, seed)?;
    let splits = Splits { train: &p.data.train, validation: &p.data.validation };
    let spec = p.features.set.spec();
    let names = p.features.set.names().to_vec();
    let opts = options(config);
    let base_loss = LinearLoss::new(p.feasible.lo().to_vec(), names)?;

    let handle = SoftmaxHandle::new(&p.features.set, splits, TrainOptions { with_gradients: false, ..opts.clone() }, config.trainer.epochs, seed);
    let mut plain = Recording { inner: handle, test: &p.data.test, points: Vec::new(), last: None };
    let mut state = TrainState::new(&spec, seed);
    for _ in 0..config.budget {
        state = plain.train(&base_loss, &state, Mode::Online)?.expect("the softmax trainer always trains").0;
    }
    let baseline_min = plain.points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    report.curves.push(Curve { algorithm: "adagrad".into(), seed, points: points(&plain.points, 1) });
    report.metrics.insert("adagrad_min_val".into(), baseline_min);

    let handle = SoftmaxHandle::new(&p.features.set, splits, opts, config.trainer.epochs, seed);
    let mut rec = Recording { inner: handle, test: &p.data.test, points: Vec::new(), last: None };
    let boot = bootstrap_until_overfit(&mut rec, &base_loss, TrainState::new(&spec, seed), config.budget - 1)?;
    let used = boot.validation_curve.len();
    report.metrics.insert("bootstrap_epochs".into(), used as f64);
    let warm = boot.models.last().expect("bootstrap returns at least one model").clone();
    let tc = tune_config(config, Mode::Online, config.budget - used, p.feasible.clone(), seed);
    let clock = clock(config);
    let outcome = tune_loss(boot.observations, warm, &mut rec, &tc, clock.as_ref());
    report.curves.insert(0, Curve { algorithm: "tuneloss".into(), seed, points: points(&rec.points, 1) });
    report.final_state = rec.last.clone();
    let trace = match outcome {
        Ok((trace, _)) => trace,
        Err(failure) => {
            report.trace = Some(failure.trace);
            return Err(failure.error.into());
        }
    };
    if let Some(last) = rec.points.last() {
        report.metrics.insert("tuneloss_final_val".into(), last.0);
        report.metrics.insert("win".into(), f64::from(u8::from(last.0 <= baseline_min)));
    }
    if let Some((offset, bp)) = &p.features.pwl {
        let pts = bp.points();
        let (a, b) = (pts[0], pts[pts.len() - 1]);
        let pad = if b > a { 0.1 * (b - a) } else { 1.0 };
        let mut convex = 0usize;
        for r in &trace.records {
            let coeffs = &r.lambda[*offset..*offset + 2 * bp.len()];
            if pwl_is_convex(bp, coeffs, 1e-12) {
                convex += 1;
            }
            let epoch = used + r.iteration;
            for i in 0..REGULARIZER_SAMPLES {
                let x = (a - pad) + (b - a + 2.0 * pad) * i as f64 / (REGULARIZER_SAMPLES - 1) as f64;
                report.regularizer.push(RegularizerSample { seed, epoch, x, r: pwl_value(bp, coeffs, x) });
            }
        }
        report.metrics.insert("convex_checkpoints".into(), convex as f64);
        report.metrics.insert("checkpoints".into(), trace.records.len() as f64);
    }
    report.trace = Some(trace);
    Ok(())
}

/// A zero-cost instance with `λ*` in `[0.1, 1]^k`, the last coordinate of
/// `F = [0, 2]^k` pinned to `λ*`'s value, and observations satisfying
/// `λ*·φ = α* v` (and `Jλ* = α* g` with gradients).
pub fn perfect_linear_instance(seed: u64, k: usize, num_params: usize, m: usize, with_gradients: bool) -> Result<(Vec<f64>, Vec<Observation>, Hypercube)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ RECOVERY_STREAM);
    let lambda: Vec<f64> = (0..k).map(|_| 0.1 + 0.9 * rng.random::<f64>()).collect();
    let alpha = 0.5 + 1.5 * rng.random::<f64>();
    let mut obs = Vec::with_capacity(m);
    for i in 0..m {
        let fv: Vec<f64> = (0..k).map(|_| 0.1 + 1.9 * rng.random::<f64>()).collect();
        let ve = fv.iter().zip(&lambda).map(|(a, b)| a * b).sum::<f64>() / alpha;
        let o = Observation::new(ve, fv, format!("m{i}"))?;
        obs.push(if with_gradients {
            let rows: Vec<Vec<f64>> = (0..num_params).map(|_| (0..k).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect()).collect();
            let jac = Matrix::from_rows(&rows, k)?;
            let g = jac.mul_vec(&lambda).iter().map(|v| v / alpha).collect();
            o.with_gradients(g, jac)?
        } else {
            o
        });
    }
    let f = Hypercube::uniform(k, 0.0, 2.0)?.pinned(k - 1, lambda[k - 1])?;
    Ok((lambda, obs, f))
}

/// `max|got − want| / max|want|`.
pub fn relative_error(got: &[f64], want: &[f64]) -> f64 {
    let scale = want.iter().fold(0.0f64, |s, v| s.max(v.abs()));
    got.iter().zip(want).fold(0.0f64, |s, (a, b)| s.max((a - b).abs())) / scale
}

/// Learns from the first `m` observations for `m = 1..=budget`, with and
/// without gradients. `val_metric` is the relative recovery error, and
/// `test_metric` the dimension of the zero-cost solution set.
fn recovery_seed(config: &ScenarioConfig, seed: u64, report: &mut SeedReport) -> Result<()> {
    let k = config.recovery.num_features;
    let n = config.recovery.num_params;
    for (algorithm, with_gradients) in [("gradients", true), ("loss_only", false)] {
        let (lambda, obs, f) = perfect_linear_instance(seed, k, n, config.budget, with_gradients)?;
        let mut pts = Vec::new();
        for m in 1..=config.budget {
            let data = &obs[..m];
            let eps = if with_gradients {
                match config.trainer.epsilon {
                    EpsilonSetting::Fixed(e) => e,
                    EpsilonSetting::Named(_) => default_epsilon(data)?,
                }
            } else {
                0.0
            };
            let params = CostParams::with_epsilon(eps)?;
            let nullity = zero_cost_nullity(data, &params)?;
            let err = relative_error(&learn_loss(data, &f, &params)?.lambda, &lambda);
            pts.push(CurvePoint { step: m, val: err, test: nullity as f64 });
        }
        for (m, key) in [(1, "err_at_1"), (k - 1, "err_at_k_minus_1"), (k + 1, "err_at_k_plus_1")] {
            if let Some(p) = pts.get(m.wrapping_sub(1)) {
                report.metrics.insert(format!("{algorithm}_{key}"), p.val);
                report.metrics.insert(format!("{algorithm}_nullity_{}", &key[7..]), p.test);
            }
        }
        report.curves.push(Curve { algorithm: algorithm.into(), seed, points: pts });
    }
    Ok(())
}

/// Runs one seed, capturing failures in the report instead of aborting the
/// scenario.
pub fn run_seed(config: &ScenarioConfig, seed: u64) -> SeedReport {
    let mut report = SeedReport { seed, ..SeedReport::default() };
    let result = match config.scenario {
        Scenario::HyperparamTuning | Scenario::MixtureLoss => full_run_seed(config, seed, &mut report),
        Scenario::OnlineRegularizer => online_seed(config, seed, &mut report),
        Scenario::PerfectLinearRecovery => recovery_seed(config, seed, &mut report),
    };
    if let Err(e) = result {
        report.error = Some(e.to_string());
    }
    report
}

/// Parallelism cap from `LOSSFORGE_THREADS`; unset or 0 means rayon's
/// default.
pub fn thread_limit() -> Option<usize> {
    std::env::var("LOSSFORGE_THREADS").ok().and_then(|v| v.trim().parse().ok()).filter(|&n| n > 0)
}

fn per_seed<F: Fn(u64) -> SeedReport + Sync + Send>(seeds: &[u64], f: F) -> Result<Vec<SeedReport>> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_limit() {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| config_err(format!("thread pool: {e}")))?;
    Ok(pool.install(|| seeds.par_iter().map(|&s| f(s)).collect()))
}

/// Resolved features and feasible box for the first seed, recorded in the
/// report for provenance.
fn resolved_setup(config: &ScenarioConfig) -> Result<Option<ResolvedSetup>> {
    if config.scenario == Scenario::PerfectLinearRecovery {
        return Ok(None);
    }
    let seed = config.seeds()[0];
    let p = prepare(config, seed)?;
    Ok(Some(setup(&p.features, &p.feasible)))
}

/// Runs TuneLoss and the scenario's baseline for every seed. Seeds run in
/// parallel; results come back in seed order. Configuration problems
/// (including an unreadable dataset) abort; per-seed failures are recorded.
pub fn run_scenario(config: &ScenarioConfig) -> Result<RunReport> {
    config.validate()?;
    let setup = resolved_setup(config)?;
    let seeds = per_seed(&config.seeds(), |s| run_seed(config, s))?;
    Ok(RunReport { config: config.clone(), setup, seeds })
}

/// Random search alone: `random_search_budget` full runs per seed.
pub fn random_search_baseline(config: &ScenarioConfig) -> Result<RunReport> {
    config.validate()?;
    if matches!(config.scenario, Scenario::PerfectLinearRecovery) {
        return Err(config_err("random search needs a training scenario"));
    }
    let setup = resolved_setup(config)?;
    let seeds = per_seed(&config.seeds(), |seed| {
        let mut report = SeedReport { seed, ..SeedReport::default() };
        match prepare(config, seed).and_then(|p| random_search_curve(&p, config, seed, config.random_search_budget())) {
            Ok(c) => report.curves.push(c),
            Err(e) => report.error = Some(e.to_string()),
        }
        report
    })?;
    Ok(RunReport { config: config.clone(), setup, seeds })
}
