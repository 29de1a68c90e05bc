//! Feature vectors `φ(θ)` whose linear combinations form trainable losses.
//!
//! A [`FeatureSet`] is an ordered list of blocks. Each block contributes one
//! or more features together with their gradients; data-dependent blocks own
//! the training split they are evaluated on.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Debug;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{dim_err, invalid, Result};
use crate::linalg::Matrix;
use crate::math::round;
use crate::trainer::{example_logloss, log_softmax_parts, Dataset, ModelSpec};

/// One or more features sharing an implementation.
pub trait FeatureBlock: Debug + Send + Sync {
    fn len(&self) -> usize;

    fn names(&self) -> Vec<String>;

    fn values(&self, theta: &[f64]) -> Vec<f64>;

    /// Adds `Σ_j weights[j] ∇φ_j(θ)` to `out`.
    fn add_gradient(&self, theta: &[f64], weights: &[f64], out: &mut [f64]);

    /// Adds a single-example estimate of the weighted gradient. Blocks that do
    /// not depend on the data use the exact gradient.
    fn add_step_gradient(&self, theta: &[f64], weights: &[f64], _example: usize, _rng: &mut ChaCha8Rng, out: &mut [f64]) {
        self.add_gradient(theta, weights, out);
    }

    /// Size of the dataset the block averages over, if any.
    fn num_examples(&self) -> Option<usize> {
        None
    }
}

#[derive(Debug)]
pub struct FeatureSet {
    spec: ModelSpec,
    blocks: Vec<Box<dyn FeatureBlock>>,
    names: Vec<String>,
    primary: Option<usize>,
    num_examples: Option<usize>,
}

impl FeatureSet {
    /// `primary` is the index of the main data term, which tuning pins to 1.
    pub fn new(spec: ModelSpec, blocks: Vec<Box<dyn FeatureBlock>>, primary: Option<usize>) -> Result<Self> {
        let names: Vec<String> = blocks.iter().flat_map(|b| b.names()).collect();
        for (i, n) in names.iter().enumerate() {
            if names[..i].contains(n) {
                return Err(invalid(format!("duplicate feature name {n:?}")));
            }
        }
        if let Some(p) = primary {
            if p >= names.len() {
                return Err(dim_err(format!("primary feature {p} out of range for {} features", names.len())));
            }
        }
        let mut num_examples = None;
        for b in &blocks {
            if let Some(n) = b.num_examples() {
                if num_examples.is_some_and(|m| m != n) {
                    return Err(dim_err("data-dependent features disagree on the number of examples"));
                }
                num_examples = Some(n);
            }
        }
        Ok(FeatureSet { spec, blocks, names, primary, num_examples })
    }

    pub fn spec(&self) -> ModelSpec {
        self.spec
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn primary(&self) -> Option<usize> {
        self.primary
    }

    pub fn num_examples(&self) -> Option<usize> {
        self.num_examples
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn values(&self, theta: &[f64]) -> Vec<f64> {
        self.blocks.iter().flat_map(|b| b.values(theta)).collect()
    }

    /// `Σ_j λ_j ∇φ_j(θ)`.
    pub fn weighted_gradient(&self, theta: &[f64], lambda: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; theta.len()];
        let mut offset = 0;
        for b in &self.blocks {
            let w = &lambda[offset..offset + b.len()];
            if w.iter().any(|&v| v != 0.0) {
                b.add_gradient(theta, w, &mut out);
            }
            offset += b.len();
        }
        out
    }

    /// Single-example estimate of `Σ_j λ_j ∇φ_j(θ)` used by each AdaGrad step.
    pub fn step_gradient(&self, theta: &[f64], lambda: &[f64], example: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut out = vec![0.0; theta.len()];
        let mut offset = 0;
        for b in &self.blocks {
            let w = &lambda[offset..offset + b.len()];
            if w.iter().any(|&v| v != 0.0) {
                b.add_step_gradient(theta, w, example, rng, &mut out);
            }
            offset += b.len();
        }
        out
    }

    /// `n × k`; column `j` is `∇φ_j(θ)`.
    pub fn jacobian(&self, theta: &[f64]) -> Matrix {
        let n = theta.len();
        let k = self.len();
        let mut jac = Matrix::zeros(n, k);
        let mut offset = 0;
        for b in &self.blocks {
            let mut w = vec![0.0; b.len()];
            for j in 0..b.len() {
                w[j] = 1.0;
                let mut col = vec![0.0; n];
                b.add_gradient(theta, &w, &mut col);
                for (r, v) in col.into_iter().enumerate() {
                    jac[(r, offset + j)] = v;
                }
                w[j] = 0.0;
            }
            offset += b.len();
        }
        jac
    }
}

/// `‖θ‖₁`, with subgradient 0 at 0.
#[derive(Clone, Debug, Default)]
pub struct L1Norm;

impl FeatureBlock for L1Norm {
    fn len(&self) -> usize {
        1
    }

    fn names(&self) -> Vec<String> {
        vec![String::from("l1")]
    }

    fn values(&self, theta: &[f64]) -> Vec<f64> {
        vec![theta.iter().map(|v| v.abs()).sum()]
    }

    fn add_gradient(&self, theta: &[f64], weights: &[f64], out: &mut [f64]) {
        for (o, &t) in out.iter_mut().zip(theta) {
            if t > 0.0 {
                *o += weights[0];
            } else if t < 0.0 {
                *o -= weights[0];
            }
        }
    }
}

/// `‖θ‖₂²`.
#[derive(Clone, Debug, Default)]
pub struct L2Squared;

impl FeatureBlock for L2Squared {
    fn len(&self) -> usize {
        1
    }

    fn names(&self) -> Vec<String> {
        vec![String::from("l2sq")]
    }

    fn values(&self, theta: &[f64]) -> Vec<f64> {
        vec![theta.iter().map(|v| v * v).sum()]
    }

    fn add_gradient(&self, theta: &[f64], weights: &[f64], out: &mut [f64]) {
        for (o, &t) in out.iter_mut().zip(theta) {
            *o += 2.0 * weights[0] * t;
        }
    }
}

/// Mean cross-entropy on a dataset. Mixture components are log losses on
/// transformed copies of the training data.
#[derive(Clone, Debug)]
pub struct LogLoss {
    name: String,
    spec: ModelSpec,
    data: Arc<Dataset>,
}

impl LogLoss {
    pub fn new(name: impl Into<String>, data: Arc<Dataset>) -> Result<Self> {
        if data.is_empty() {
            return Err(invalid("log loss feature over an empty dataset"));
        }
        Ok(LogLoss { name: name.into(), spec: data.spec(), data })
    }
}

impl FeatureBlock for LogLoss {
    fn len(&self) -> usize {
        1
    }

    fn names(&self) -> Vec<String> {
        vec![self.name.clone()]
    }

    fn values(&self, theta: &[f64]) -> Vec<f64> {
        let d = &self.data;
        let total: f64 = (0..d.len()).map(|i| example_logloss(&self.spec.logits(theta, d.example(i)), d.label(i)).0).sum();
        vec![total / d.len() as f64]
    }

    fn add_gradient(&self, theta: &[f64], weights: &[f64], out: &mut [f64]) {
        let d = &self.data;
        let scale = weights[0] / d.len() as f64;
        for i in 0..d.len() {
            let x = d.example(i);
            let (_, dz) = example_logloss(&self.spec.logits(theta, x), d.label(i));
            self.spec.add_logit_gradient(x, &dz, scale, out);
        }
    }

    fn add_step_gradient(&self, theta: &[f64], weights: &[f64], example: usize, _rng: &mut ChaCha8Rng, out: &mut [f64]) {
        let x = self.data.example(example);
        let (_, dz) = example_logloss(&self.spec.logits(theta, x), self.data.label(example));
        self.spec.add_logit_gradient(x, &dz, weights[0], out);
    }

    fn num_examples(&self) -> Option<usize> {
        Some(self.data.len())
    }
}

/// Mean cross-entropy against uniform labels: `−(1/C) Σ_c log p_c`, averaged.
#[derive(Clone, Debug)]
pub struct UniformLabelLoss {
    spec: ModelSpec,
    data: Arc<Dataset>,
}

impl UniformLabelLoss {
    pub fn new(data: Arc<Dataset>) -> Result<Self> {
        if data.is_empty() {
            return Err(invalid("uniform-label loss over an empty dataset"));
        }
        Ok(UniformLabelLoss { spec: data.spec(), data })
    }

    fn example(&self, theta: &[f64], x: &[f64]) -> (f64, Vec<f64>) {
        let z = self.spec.logits(theta, x);
        let c = z.len() as f64;
        let (lse, mut p) = log_softmax_parts(&z);
        let mean_z = z.iter().sum::<f64>() / c;
        for v in p.iter_mut() {
            *v -= 1.0 / c;
        }
        (lse - mean_z, p)
    }
}

impl FeatureBlock for UniformLabelLoss {
    fn len(&self) -> usize {
        1
    }

    fn names(&self) -> Vec<String> {
        vec![String::from("uniform")]
    }

    fn values(&self, theta: &[f64]) -> Vec<f64> {
        let d = &self.data;
        let total: f64 = (0..d.len()).map(|i| self.example(theta, d.example(i)).0).sum();
        vec![total / d.len() as f64]
    }

    fn add_gradient(&self, theta: &[f64], weights: &[f64], out: &mut [f64]) {
        let d = &self.data;
        let scale = weights[0] / d.len() as f64;
        for i in 0..d.len() {
            let x = d.example(i);
            let (_, dz) = self.example(theta, x);
            self.spec.add_logit_gradient(x, &dz, scale, out);
        }
    }

    fn add_step_gradient(&self, theta: &[f64], weights: &[f64], example: usize, _rng: &mut ChaCha8Rng, out: &mut [f64]) {
        let x = self.data.example(example);
        let (_, dz) = self.example(theta, x);
        self.spec.add_logit_gradient(x, &dz, weights[0], out);
    }

    fn num_examples(&self) -> Option<usize> {
        Some(self.data.len())
    }
}

pub const DEFAULT_KEEP_PROB: f64 = 0.5;
pub const DEFAULT_NUM_MASKS: usize = 64;

/// Log loss under input dropout, averaged over a fixed set of Bernoulli masks
/// over (example, input). Kept inputs are divided by `keep_prob`. Mask `m`
/// is drawn from ChaCha stream `m` of `seed`.
#[derive(Clone, Debug)]
pub struct DropoutLoss {
    spec: ModelSpec,
    data: Arc<Dataset>,
    keep_prob: f64,
    num_masks: usize,
    seed: u64,
}

impl DropoutLoss {
    pub fn new(data: Arc<Dataset>, keep_prob: f64, num_masks: usize, seed: u64) -> Result<Self> {
        if !(keep_prob > 0.0 && keep_prob <= 1.0) {
            return Err(invalid(format!("keep probability must lie in (0, 1], got {keep_prob}")));
        }
        if num_masks == 0 {
            return Err(invalid("dropout needs at least one mask"));
        }
        if data.is_empty() {
            return Err(invalid("dropout loss over an empty dataset"));
        }
        // Without dropping there is a single mask.
        let num_masks = if keep_prob == 1.0 { 1 } else { num_masks };
        Ok(DropoutLoss { spec: data.spec(), data, keep_prob, num_masks, seed })
    }

    fn masked(&self, x: &[f64], rng: &mut ChaCha8Rng, buf: &mut Vec<f64>) {
        buf.clear();
        let inv = 1.0 / self.keep_prob;
        for &v in x {
            let keep = self.keep_prob == 1.0 || rng.random::<f64>() < self.keep_prob;
            buf.push(if keep { v * inv } else { 0.0 });
        }
    }

    /// Visits every (mask, example) pair with the masked input.
    fn for_each_masked(&self, mut f: impl FnMut(usize, &[f64])) {
        let mut buf = Vec::with_capacity(self.spec.input_dim);
        for m in 0..self.num_masks {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            rng.set_stream(m as u64);
            for i in 0..self.data.len() {
                self.masked(self.data.example(i), &mut rng, &mut buf);
                f(i, &buf);
            }
        }
    }
}

impl FeatureBlock for DropoutLoss {
    fn len(&self) -> usize {
        1
    }

    fn names(&self) -> Vec<String> {
        vec![String::from("dropout")]
    }

    fn values(&self, theta: &[f64]) -> Vec<f64> {
        let mut total = 0.0;
        self.for_each_masked(|i, x| total += example_logloss(&self.spec.logits(theta, x), self.data.label(i)).0);
        vec![total / (self.num_masks * self.data.len()) as f64]
    }

    fn add_gradient(&self, theta: &[f64], weights: &[f64], out: &mut [f64]) {
        let scale = weights[0] / (self.num_masks * self.data.len()) as f64;
        self.for_each_masked(|i, x| {
            let (_, dz) = example_logloss(&self.spec.logits(theta, x), self.data.label(i));
            self.spec.add_logit_gradient(x, &dz, scale, out);
        });
    }

    /// Draws a fresh mask for the example from the training stream.
    fn add_step_gradient(&self, theta: &[f64], weights: &[f64], example: usize, rng: &mut ChaCha8Rng, out: &mut [f64]) {
        let mut x = Vec::with_capacity(self.spec.input_dim);
        self.masked(self.data.example(example), rng, &mut x);
        let (_, dz) = example_logloss(&self.spec.logits(theta, &x), self.data.label(example));
        self.spec.add_logit_gradient(&x, &dz, weights[0], out);
    }

    fn num_examples(&self) -> Option<usize> {
        Some(self.data.len())
    }
}

/// Strictly increasing, finite, non-empty.
#[derive(Clone, Debug, PartialEq)]
pub struct Breakpoints(Vec<f64>);

impl Breakpoints {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(invalid("need at least one breakpoint"));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(invalid("breakpoints must be finite"));
        }
        if points.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("breakpoints must be strictly increasing"));
        }
        Ok(Breakpoints(points))
    }

    pub fn points(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Sorted weights sampled at `round(j (n−1)/(count−1))`, duplicates removed.
pub fn select_breakpoints(theta: &[f64], count: usize) -> Result<Breakpoints> {
    if count < 2 {
        return Err(invalid("breakpoint count must be at least 2"));
    }
    let n = theta.len();
    if n < count {
        return Err(invalid(format!("{n} weights cannot supply {count} breakpoints")));
    }
    let mut sorted = theta.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut points: Vec<f64> = Vec::with_capacity(count);
    for j in 0..count {
        let idx = round((j * (n - 1)) as f64 / (count - 1) as f64) as usize;
        let v = sorted[idx];
        if points.last() != Some(&v) {
            points.push(v);
        }
    }
    Breakpoints::new(points)
}

/// Hinge sums `Σ_i max{0, σ(θ_i − a)}`: the σ = +1 block over ascending `a`,
/// then the σ = −1 block. Gradients use the right derivative at kinks.
#[derive(Clone, Debug)]
pub struct PiecewiseLinear {
    breakpoints: Breakpoints,
}

impl PiecewiseLinear {
    pub fn new(breakpoints: Breakpoints) -> Self {
        PiecewiseLinear { breakpoints }
    }

    pub fn breakpoints(&self) -> &Breakpoints {
        &self.breakpoints
    }
}

impl FeatureBlock for PiecewiseLinear {
    fn len(&self) -> usize {
        2 * self.breakpoints.len()
    }

    fn names(&self) -> Vec<String> {
        let pts = self.breakpoints.points();
        let up = pts.iter().enumerate().map(|(i, a)| format!("pwl+{i}@{a}"));
        let down = pts.iter().enumerate().map(|(i, a)| format!("pwl-{i}@{a}"));
        up.chain(down).collect()
    }

    fn values(&self, theta: &[f64]) -> Vec<f64> {
        pwl_features(theta, &self.breakpoints)
    }

    fn add_gradient(&self, theta: &[f64], weights: &[f64], out: &mut [f64]) {
        let pts = self.breakpoints.points();
        let b = pts.len();
        // Prefix sums turn the per-coordinate derivative into two lookups:
        // Σ_{a ≤ t} w⁺_a − Σ_{a > t} w⁻_a.
        let mut up_prefix = vec![0.0; b + 1];
        let mut down_prefix = vec![0.0; b + 1];
        for i in 0..b {
            up_prefix[i + 1] = up_prefix[i] + weights[i];
            down_prefix[i + 1] = down_prefix[i] + weights[b + i];
        }
        for (o, &t) in out.iter_mut().zip(theta) {
            let le = pts.partition_point(|&a| a <= t);
            *o += up_prefix[le] - (down_prefix[b] - down_prefix[le]);
        }
    }
}

pub fn pwl_features(theta: &[f64], breakpoints: &Breakpoints) -> Vec<f64> {
    let pts = breakpoints.points();
    let mut out = vec![0.0; 2 * pts.len()];
    for &t in theta {
        for (i, &a) in pts.iter().enumerate() {
            if t > a {
                out[i] += t - a;
            } else if t < a {
                out[pts.len() + i] += a - t;
            }
        }
    }
    out
}

/// `r(x) = Σ_a c⁺_a max{0, x − a} + c⁻_a max{0, a − x}` for coefficients in
/// hinge-feature order.
pub fn pwl_value(breakpoints: &Breakpoints, coeffs: &[f64], x: f64) -> f64 {
    let pts = breakpoints.points();
    let b = pts.len();
    pts.iter().enumerate().map(|(i, &a)| coeffs[i] * (x - a).max(0.0) + coeffs[b + i] * (a - x).max(0.0)).sum()
}

/// Slopes of `r` on the `|X| + 1` intervals cut by the breakpoints.
pub fn pwl_slopes(breakpoints: &Breakpoints, coeffs: &[f64]) -> Vec<f64> {
    let b = breakpoints.len();
    (0..=b)
        .map(|interval| {
            let up: f64 = coeffs[..interval].iter().sum();
            let down: f64 = coeffs[b + interval..2 * b].iter().sum();
            up - down
        })
        .collect()
}

pub fn pwl_is_convex(breakpoints: &Breakpoints, coeffs: &[f64], tol: f64) -> bool {
    pwl_slopes(breakpoints, coeffs).windows(2).all(|w| w[1] >= w[0] - tol)
}

/// Dropout settings for [`standard_regularizer_features`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DropoutConfig {
    pub keep_prob: f64,
    pub num_masks: usize,
    pub seed: u64,
}

impl Default for DropoutConfig {
    fn default() -> Self {
        DropoutConfig { keep_prob: DEFAULT_KEEP_PROB, num_masks: DEFAULT_NUM_MASKS, seed: 0 }
    }
}

/// `(‖θ‖₁, ‖θ‖₂², uniform-label loss, dropout loss, log loss)`, log loss primary.
pub fn standard_regularizer_features(train: Arc<Dataset>, dropout: DropoutConfig) -> Result<FeatureSet> {
    let spec = train.spec();
    let blocks: Vec<Box<dyn FeatureBlock>> = vec![
        Box::new(L1Norm),
        Box::new(L2Squared),
        Box::new(UniformLabelLoss::new(train.clone())?),
        Box::new(DropoutLoss::new(train.clone(), dropout.keep_prob, dropout.num_masks, dropout.seed)?),
        Box::new(LogLoss::new("logloss", train)?),
    ];
    FeatureSet::new(spec, blocks, Some(4))
}

/// Log loss (primary) followed by the hinge features of `breakpoints`.
pub fn pwl_regularizer_features(train: Arc<Dataset>, breakpoints: Breakpoints) -> Result<FeatureSet> {
    let spec = train.spec();
    let blocks: Vec<Box<dyn FeatureBlock>> =
        vec![Box::new(LogLoss::new("logloss", train)?), Box::new(PiecewiseLinear::new(breakpoints))];
    FeatureSet::new(spec, blocks, Some(0))
}

/// One log-loss feature per named component dataset.
pub fn mixture_features(components: Vec<(String, Arc<Dataset>)>) -> Result<FeatureSet> {
    if components.len() < 2 {
        return Err(invalid("a mixture needs at least two components"));
    }
    let spec = components[0].1.spec();
    let mut blocks: Vec<Box<dyn FeatureBlock>> = Vec::with_capacity(components.len());
    for (name, data) in components {
        if data.spec() != spec {
            return Err(dim_err(format!("component {name:?} has a different model shape")));
        }
        blocks.push(Box::new(LogLoss::new(name, data)?));
    }
    FeatureSet::new(spec, blocks, None)
}

/// Rescales mixture weights by `1/‖λ‖₁` to a probability vector.
pub fn normalize_mixture(lambda: &[f64]) -> Result<Vec<f64>> {
    let s: f64 = lambda.iter().map(|v| v.abs()).sum();
    if s == 0.0 || !s.is_finite() {
        return Err(invalid("mixture weights have zero or non-finite l1 norm"));
    }
    Ok(lambda.iter().map(|v| v / s).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn norms() {
        assert_eq!(L1Norm.values(&[1.0, -2.0]), vec![3.0]);
        assert_eq!(L2Squared.values(&[1.0, -2.0]), vec![5.0]);
    }

    #[test]
    fn hinge_examples() {
        let x0 = Breakpoints::new(vec![0.0]).unwrap();
        assert_eq!(pwl_features(&[0.0], &x0), vec![0.0, 0.0]);
        assert_eq!(pwl_features(&[2.0], &Breakpoints::new(vec![1.0]).unwrap()), vec![1.0, 0.0]);
        assert_eq!(pwl_features(&[-3.0, 2.0], &x0), vec![2.0, 3.0]);
    }

    #[test]
    fn hinge_gradient_is_right_derivative() {
        let block = PiecewiseLinear::new(Breakpoints::new(vec![0.0, 1.0]).unwrap());
        let mut g = vec![0.0; 3];
        // Weights (w⁺₀, w⁺₁, w⁻₀, w⁻₁).
        block.add_gradient(&[0.0, 0.5, -1.0], &[1.0, 10.0, 100.0, 1000.0], &mut g);
        assert_eq!(g, vec![1.0 - 1000.0, 1.0 - 1000.0, -1100.0]);
    }

    #[test]
    fn breakpoint_examples() {
        let w: Vec<f64> = (1..=9).map(f64::from).collect();
        assert_eq!(select_breakpoints(&w, 3).unwrap().points(), &[1.0, 5.0, 9.0]);
        assert_eq!(select_breakpoints(&[2.0; 6], 4).unwrap().points(), &[2.0]);
        assert!(select_breakpoints(&[1.0, 2.0], 3).is_err());
        assert!(select_breakpoints(&[1.0, 2.0], 1).is_err());
    }

    #[test]
    fn slopes_and_convexity() {
        let x = Breakpoints::new(vec![-1.0, 1.0]).unwrap();
        let c = [1.0, 2.0, 0.5, 0.25];
        assert_eq!(pwl_slopes(&x, &c), vec![-0.75, 0.75, 3.0]);
        assert!(pwl_is_convex(&x, &c, 0.0));
        assert!(!pwl_is_convex(&x, &[-1.0, 0.0, 0.0, 0.0], 0.0));
        assert_eq!(pwl_value(&x, &c, 2.0), 3.0 + 2.0);
    }

    #[test]
    fn mixture_normalization() {
        assert_eq!(normalize_mixture(&[2.0, 2.0]).unwrap(), vec![0.5, 0.5]);
        assert!(normalize_mixture(&[0.0, 0.0]).is_err());
    }
}
