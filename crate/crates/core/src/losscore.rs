//! Observations of trained models, feasible sets and the matching cost.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{dim_err, invalid, Error, Result};
use crate::linalg::{dot, Matrix};

/// Validation gradient and feature Jacobian of one model.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    /// `∇v(θ)`, length `n`.
    pub grad_ve: Vec<f64>,
    /// `n × k`; column `j` is `∇φ_j(θ)`.
    pub jacobian: Matrix,
}

/// One trained model as seen by the learner.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    ve: f64,
    fv: Vec<f64>,
    gradients: Option<Gradients>,
    model_id: String,
}

impl Observation {
    pub fn new(ve: f64, fv: Vec<f64>, model_id: impl Into<String>) -> Result<Self> {
        if !ve.is_finite() || ve < 0.0 {
            return Err(invalid(format!("validation error must be finite and non-negative, got {ve}")));
        }
        if fv.iter().any(|v| !v.is_finite()) {
            return Err(invalid("feature vector has non-finite entries"));
        }
        Ok(Observation { ve, fv, gradients: None, model_id: model_id.into() })
    }

    /// Attaches `∇v` and the `n × k` feature Jacobian.
    pub fn with_gradients(mut self, grad_ve: Vec<f64>, jacobian: Matrix) -> Result<Self> {
        if jacobian.rows() != grad_ve.len() {
            return Err(dim_err(format!(
                "jacobian has {} rows but gradient has length {}",
                jacobian.rows(),
                grad_ve.len()
            )));
        }
        if jacobian.cols() != self.fv.len() {
            return Err(dim_err(format!(
                "jacobian has {} columns but there are {} features",
                jacobian.cols(),
                self.fv.len()
            )));
        }
        if grad_ve.iter().any(|v| !v.is_finite()) || !jacobian.is_finite() {
            return Err(invalid("gradient or jacobian has non-finite entries"));
        }
        self.gradients = Some(Gradients { grad_ve, jacobian });
        Ok(self)
    }

    pub fn ve(&self) -> f64 {
        self.ve
    }

    pub fn fv(&self) -> &[f64] {
        &self.fv
    }

    pub fn gradients(&self) -> Option<&Gradients> {
        self.gradients.as_ref()
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn num_features(&self) -> usize {
        self.fv.len()
    }

    /// Drops gradient information, keeping value and features.
    pub fn without_gradients(&self) -> Observation {
        Observation { gradients: None, ..self.clone() }
    }
}

/// Axis-aligned box of admissible weights. Coordinates with `lo == hi` are pinned.
#[derive(Clone, Debug, PartialEq)]
pub struct Hypercube {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl Hypercube {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(dim_err(format!("lo has length {}, hi has length {}", lo.len(), hi.len())));
        }
        if lo.iter().chain(&hi).any(|v| !v.is_finite()) {
            return Err(invalid("hypercube bounds must be finite"));
        }
        if let Some(j) = (0..lo.len()).find(|&j| lo[j] > hi[j]) {
            return Err(invalid(format!("hypercube bound {j}: lo {} > hi {}", lo[j], hi[j])));
        }
        Ok(Hypercube { lo, hi })
    }

    /// `[lo, hi]^k`.
    pub fn uniform(k: usize, lo: f64, hi: f64) -> Result<Self> {
        Hypercube::new(alloc::vec![lo; k], alloc::vec![hi; k])
    }

    /// Same box with coordinate `j` fixed to `value`.
    pub fn pinned(mut self, j: usize, value: f64) -> Result<Self> {
        if j >= self.lo.len() {
            return Err(dim_err(format!("pinned coordinate {j} out of range for dimension {}", self.lo.len())));
        }
        self.lo[j] = value;
        self.hi[j] = value;
        Hypercube::new(self.lo, self.hi)
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn is_pinned(&self, j: usize) -> bool {
        self.lo[j] == self.hi[j]
    }

    pub fn contains(&self, lambda: &[f64], tol: f64) -> bool {
        lambda.len() == self.dim()
            && lambda.iter().zip(self.lo.iter().zip(&self.hi)).all(|(&l, (&lo, &hi))| l >= lo - tol && l <= hi + tol)
    }
}

/// `ℓ_λ(θ) = λ·φ(θ)` with named features.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearLoss {
    lambda: Vec<f64>,
    feature_names: Vec<String>,
}

impl LinearLoss {
    pub fn new(lambda: Vec<f64>, feature_names: Vec<String>) -> Result<Self> {
        if lambda.len() != feature_names.len() {
            return Err(dim_err(format!(
                "{} weights for {} feature names",
                lambda.len(),
                feature_names.len()
            )));
        }
        if lambda.iter().any(|v| !v.is_finite()) {
            return Err(invalid("loss weights must be finite"));
        }
        Ok(LinearLoss { lambda, feature_names })
    }

    /// Weights with generated names `f0, f1, …`.
    pub fn unnamed(lambda: Vec<f64>) -> Result<Self> {
        let names = (0..lambda.len()).map(|j| format!("f{j}")).collect();
        LinearLoss::new(lambda, names)
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn dim(&self) -> usize {
        self.lambda.len()
    }
}

/// Weight of the gradient-matching term and the floor on the multiplier `α`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CostParams {
    pub epsilon: f64,
    pub alpha_min: f64,
}

impl CostParams {
    pub const DEFAULT_ALPHA_MIN: f64 = 1e-6;

    pub fn new(epsilon: f64, alpha_min: f64) -> Result<Self> {
        if !(epsilon >= 0.0) || !epsilon.is_finite() {
            return Err(invalid(format!("epsilon must be finite and >= 0, got {epsilon}")));
        }
        if !(alpha_min > 0.0) || !alpha_min.is_finite() {
            return Err(invalid(format!("alpha_min must be finite and > 0, got {alpha_min}")));
        }
        Ok(CostParams { epsilon, alpha_min })
    }

    pub fn with_epsilon(epsilon: f64) -> Result<Self> {
        CostParams::new(epsilon, Self::DEFAULT_ALPHA_MIN)
    }
}

impl Default for CostParams {
    fn default() -> Self {
        CostParams { epsilon: 0.0, alpha_min: Self::DEFAULT_ALPHA_MIN }
    }
}

pub fn evaluate_loss(loss: &LinearLoss, fv: &[f64]) -> Result<f64> {
    if fv.len() != loss.dim() {
        return Err(dim_err(format!("loss has {} weights, feature vector has {}", loss.dim(), fv.len())));
    }
    Ok(dot(loss.lambda(), fv))
}

/// Checks that every observation has `k` features and decides whether the
/// gradient term applies. Returns `true` when it does.
pub(crate) fn check_observations(observations: &[Observation], k: usize, epsilon: f64) -> Result<bool> {
    if let Some(o) = observations.iter().find(|o| o.num_features() != k) {
        return Err(dim_err(format!(
            "observation {:?} has {} features, expected {k}",
            o.model_id(),
            o.num_features()
        )));
    }
    let with = observations.iter().filter(|o| o.gradients().is_some()).count();
    if epsilon == 0.0 {
        return Ok(false);
    }
    if with == observations.len() {
        Ok(true)
    } else if with == 0 {
        Err(Error::MissingGradients(format!("epsilon = {epsilon} but no observation carries gradients")))
    } else {
        Err(Error::MixedGradients)
    }
}

/// `Σᵢ (λ·φᵢ − α vᵢ)² + ε Σᵢ ‖Jᵢλ − α gᵢ‖²`.
pub fn cost(lambda: &[f64], alpha: f64, observations: &[Observation], params: &CostParams) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(invalid(format!("alpha must be positive, got {alpha}")));
    }
    let use_gradients = check_observations(observations, lambda.len(), params.epsilon)?;
    let mut total = 0.0;
    for o in observations {
        let r = dot(lambda, o.fv()) - alpha * o.ve();
        total += r * r;
    }
    if use_gradients {
        let mut grad_term = 0.0;
        for o in observations {
            let g = o.gradients().expect("checked above");
            let jl = g.jacobian.mul_vec(lambda);
            grad_term += jl.iter().zip(&g.grad_ve).map(|(a, b)| (a - alpha * b) * (a - alpha * b)).sum::<f64>();
        }
        total += params.epsilon * grad_term;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn obs(ve: f64, fv: Vec<f64>) -> Observation {
        Observation::new(ve, fv, "m").unwrap()
    }

    #[test]
    fn evaluate_examples() {
        let l = LinearLoss::unnamed(vec![1.0, 2.0]).unwrap();
        assert_eq!(evaluate_loss(&l, &[3.0, 4.0]).unwrap(), 11.0);
        let z = LinearLoss::unnamed(vec![0.0, 0.0]).unwrap();
        assert_eq!(evaluate_loss(&z, &[-7.0, 1e9]).unwrap(), 0.0);
        let l = LinearLoss::unnamed(vec![0.5, 0.0, 1.0]).unwrap();
        assert_eq!(evaluate_loss(&l, &[2.0, 9.0, 3.0]).unwrap(), 4.0);
        assert!(matches!(evaluate_loss(&l, &[1.0]), Err(Error::Dimension(_))));
    }

    #[test]
    fn cost_examples() {
        let o = [obs(1.0, vec![1.0])];
        let p = CostParams::default();
        assert_eq!(cost(&[2.0], 2.0, &o, &p).unwrap(), 0.0);
        assert_eq!(cost(&[3.0], 1.0, &o, &p).unwrap(), 4.0);
        let g = [obs(1.0, vec![1.0]).with_gradients(vec![2.0], Matrix::identity(1)).unwrap()];
        let p = CostParams::with_epsilon(1.0).unwrap();
        assert_eq!(cost(&[1.0], 1.0, &g, &p).unwrap(), 1.0);
    }

    #[test]
    fn gradient_availability() {
        let with = obs(1.0, vec![1.0]).with_gradients(vec![2.0], Matrix::identity(1)).unwrap();
        let without = obs(2.0, vec![1.0]);
        let eps = CostParams::with_epsilon(0.5).unwrap();
        let mixed = [with.clone(), without.clone()];
        assert_eq!(cost(&[1.0], 1.0, &mixed, &eps), Err(Error::MixedGradients));
        // With ε = 0 the gradient term is unused, so mixing is fine.
        assert!(cost(&[1.0], 1.0, &mixed, &CostParams::default()).is_ok());
        assert!(matches!(cost(&[1.0], 1.0, &[without], &eps), Err(Error::MissingGradients(_))));
    }

    #[test]
    fn construction_errors() {
        assert!(Observation::new(-1.0, vec![1.0], "x").is_err());
        assert!(Observation::new(f64::NAN, vec![1.0], "x").is_err());
        assert!(Observation::new(1.0, vec![f64::INFINITY], "x").is_err());
        assert!(obs(1.0, vec![1.0, 2.0]).with_gradients(vec![1.0], Matrix::identity(1)).is_err());
        assert!(Hypercube::new(vec![1.0], vec![0.0]).is_err());
        assert!(Hypercube::new(vec![0.0], vec![f64::INFINITY]).is_err());
        assert!(LinearLoss::new(vec![1.0], vec![]).is_err());
        assert!(CostParams::new(-1.0, 1e-6).is_err());
        assert!(CostParams::new(0.0, 0.0).is_err());
        assert!(cost(&[1.0], 0.0, &[obs(1.0, vec![1.0])], &CostParams::default()).is_err());
    }

    #[test]
    fn pinned_box() {
        let f = Hypercube::uniform(2, 0.0, 1.0).unwrap().pinned(1, 0.7).unwrap();
        assert!(f.is_pinned(1) && !f.is_pinned(0));
        assert!(f.contains(&[0.2, 0.7], 0.0));
        assert!(!f.contains(&[0.2, 0.8], 1e-9));
    }
}
