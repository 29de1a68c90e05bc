//! Ground-truth procedures for finite model sets, used to check the learner.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{dim_err, invalid, Error, Result};
use crate::learnloss::sorted_order;
use crate::linalg::{dot, Matrix};
use crate::losscore::{Hypercube, Observation};
use crate::numopt::check_lp_feasibility;

const GRID_LIMIT: u128 = 10_000_000;

/// A finite set of models, each known only through `(ve, fv)`, plus the box
/// of admissible weights.
#[derive(Clone, Debug)]
pub struct FiniteBilevelInstance {
    observations: Vec<Observation>,
    feasible: Hypercube,
}

impl FiniteBilevelInstance {
    pub fn new(observations: Vec<Observation>, feasible: Hypercube) -> Result<Self> {
        if observations.is_empty() {
            return Err(invalid("instance needs at least one observation"));
        }
        let k = feasible.dim();
        if let Some(i) = observations.iter().position(|o| o.num_features() != k) {
            return Err(dim_err(format!(
                "observation {i} has {} features, feasible set has dimension {k}",
                observations[i].num_features()
            )));
        }
        Ok(FiniteBilevelInstance { observations, feasible })
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn feasible(&self) -> &Hypercube {
        &self.feasible
    }

    /// Validation error of the model minimizing `λ·φ`, ties going to the lowest
    /// validation error. Returns `(observation index, ve)`.
    pub fn achieved(&self, lambda: &[f64]) -> (usize, f64) {
        let losses: Vec<f64> = self.observations.iter().map(|o| dot(lambda, o.fv())).collect();
        let min = losses.iter().copied().fold(f64::INFINITY, f64::min);
        let tol = 1e-12 * (1.0 + min.abs());
        let mut best: Option<usize> = None;
        for (i, &l) in losses.iter().enumerate() {
            if l <= min + tol && best.is_none_or(|b| self.observations[i].ve() < self.observations[b].ve()) {
                best = Some(i);
            }
        }
        let i = best.expect("at least one observation");
        (i, self.observations[i].ve())
    }
}

/// Weights and the validation error they achieve.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleResult {
    pub lambda: Vec<f64>,
    pub achieved_ve: f64,
    /// Index of the selected observation in the instance.
    pub observation: usize,
}

/// Scans candidates in validation-error order and stops at the first one that
/// some `λ ∈ F` makes a minimizer, decided by an LP feasibility check.
pub fn optimal_lambda_finite(instance: &FiniteBilevelInstance) -> Result<OracleResult> {
    let obs = instance.observations();
    let f = instance.feasible();
    let k = f.dim();
    for star in sorted_order(obs) {
        let rows: Vec<Vec<f64>> = obs
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != star)
            .map(|(_, o)| obs[star].fv().iter().zip(o.fv()).map(|(a, b)| a - b).collect())
            .collect();
        let a = Matrix::from_rows(&rows, k)?;
        let b = alloc::vec![0.0; rows.len()];
        if let Some(lambda) = check_lp_feasibility(&a, &b, f.lo(), f.hi())? {
            return Ok(OracleResult { lambda, achieved_ve: obs[star].ve(), observation: star });
        }
    }
    Err(Error::NoFeasibleArgmin)
}

/// Enumerates a regular grid over `F` (pinned coordinates contribute one
/// point) and returns the grid point with the lowest achieved validation
/// error; the first such point in enumeration order wins ties.
pub fn brute_force_bilevel(instance: &FiniteBilevelInstance, grid_points_per_dim: usize) -> Result<OracleResult> {
    if grid_points_per_dim < 2 {
        return Err(invalid("grid needs at least 2 points per dimension"));
    }
    let f = instance.feasible();
    let k = f.dim();
    let counts: Vec<usize> = (0..k).map(|j| if f.is_pinned(j) { 1 } else { grid_points_per_dim }).collect();
    let total = counts.iter().try_fold(1u128, |acc, &c| acc.checked_mul(c as u128)).unwrap_or(u128::MAX);
    if total > GRID_LIMIT {
        return Err(Error::GridTooLarge(total));
    }
    let coord = |j: usize, t: usize| -> f64 {
        if counts[j] == 1 {
            f.lo()[j]
        } else {
            let s = t as f64 / (counts[j] - 1) as f64;
            f.lo()[j] + s * (f.hi()[j] - f.lo()[j])
        }
    };
    let mut idx = alloc::vec![0usize; k];
    let mut lambda: Vec<f64> = (0..k).map(|j| coord(j, 0)).collect();
    let mut best: Option<OracleResult> = None;
    loop {
        let (i, ve) = instance.achieved(&lambda);
        if best.as_ref().is_none_or(|b| ve < b.achieved_ve) {
            best = Some(OracleResult { lambda: lambda.clone(), achieved_ve: ve, observation: i });
        }
        // Odometer increment, last coordinate fastest.
        let mut j = k;
        loop {
            if j == 0 {
                return Ok(best.expect("grid has at least one point"));
            }
            j -= 1;
            idx[j] += 1;
            if idx[j] < counts[j] {
                lambda[j] = coord(j, idx[j]);
                break;
            }
            idx[j] = 0;
            lambda[j] = coord(j, 0);
        }
    }
}

/// Central differences `(f(x + h eⱼ) − f(x − h eⱼ)) / 2h`.
pub fn finite_difference_gradient<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], h: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for j in 0..x.len() {
        let orig = xp[j];
        xp[j] = orig + h;
        let fp = f(&xp);
        xp[j] = orig - h;
        let fm = f(&xp);
        xp[j] = orig;
        grad.push((fp - fm) / (2.0 * h));
    }
    grad
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn obs(ve: f64, fv: Vec<f64>) -> Observation {
        Observation::new(ve, fv, "m").unwrap()
    }

    #[test]
    fn single_candidate() {
        let inst = FiniteBilevelInstance::new(vec![obs(0.4, vec![1.0, 2.0])], Hypercube::uniform(2, 0.0, 1.0).unwrap()).unwrap();
        let r = optimal_lambda_finite(&inst).unwrap();
        assert_eq!(r.achieved_ve, 0.4);
        assert!(inst.feasible().contains(&r.lambda, 1e-9));
    }

    #[test]
    fn dominated_first_is_feasible() {
        let f = Hypercube::uniform(2, 0.0, 1.0).unwrap().pinned(1, 1.0).unwrap();
        let inst = FiniteBilevelInstance::new(vec![obs(0.1, vec![1.0, 1.0]), obs(0.2, vec![2.0, 3.0])], f).unwrap();
        assert_eq!(optimal_lambda_finite(&inst).unwrap().achieved_ve, 0.1);
    }

    #[test]
    fn one_dimensional_crossing() {
        // Losses λ·1 vs λ·(−1) on [−1, 1]: the low-ve model wins for λ ≤ 0.
        let f = Hypercube::uniform(1, -1.0, 1.0).unwrap();
        let inst = FiniteBilevelInstance::new(vec![obs(0.3, vec![-1.0]), obs(0.1, vec![1.0])], f).unwrap();
        let r = brute_force_bilevel(&inst, 5).unwrap();
        assert_eq!(r.achieved_ve, 0.1);
        assert_eq!(r.lambda, vec![-1.0]);
        assert_eq!(optimal_lambda_finite(&inst).unwrap().achieved_ve, 0.1);
    }

    #[test]
    fn identical_features_tie_to_lowest_ve() {
        let f = Hypercube::uniform(2, 0.0, 1.0).unwrap();
        let inst =
            FiniteBilevelInstance::new(vec![obs(0.5, vec![1.0, 1.0]), obs(0.2, vec![1.0, 1.0]), obs(0.9, vec![1.0, 1.0])], f)
                .unwrap();
        assert_eq!(brute_force_bilevel(&inst, 3).unwrap().achieved_ve, 0.2);
    }

    #[test]
    fn grid_guard() {
        let f = Hypercube::uniform(8, 0.0, 1.0).unwrap();
        let inst = FiniteBilevelInstance::new(vec![obs(0.5, vec![0.0; 8])], f).unwrap();
        assert_eq!(brute_force_bilevel(&inst, 10), Err(Error::GridTooLarge(100_000_000)));
    }

    #[test]
    fn finite_differences() {
        let g = finite_difference_gradient(|x| x[0] * x[0], &[3.0], 1e-5);
        assert!((g[0] - 6.0).abs() < 1e-8);
        let g = finite_difference_gradient(|_| 4.0, &[1.0, 2.0], 1e-5);
        assert_eq!(g, vec![0.0, 0.0]);
    }
}
