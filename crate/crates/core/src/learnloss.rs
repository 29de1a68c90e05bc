//! Learning loss weights from observed models.
//!
//! Observations are sorted by validation error. For each candidate argmin
//! `i*` in that order a QP over `(λ, α)` is solved:
//!
//! ```text
//! minimize    Σᵢ (λ·φᵢ − α vᵢ)² + ε Σᵢ ‖Jᵢλ − α gᵢ‖²
//! subject to  λ·φ_{i*} ≤ λ·φᵢ  for all i,   λ ∈ F,   α ≥ α_min
//! ```
//!
//! The first feasible candidate wins.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::linalg::{norm_inf, rank, Matrix};
use crate::losscore::{check_observations, cost, CostParams, Hypercube, Observation};
use crate::math::sqrt;
use crate::numopt::{solve_qp_with, QpProblem, QpStatus, SolverSettings, TIKHONOV};

const PROXIMAL_ROUNDS: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct LearnLossResult {
    pub lambda: Vec<f64>,
    pub alpha: f64,
    /// 1-based position of the winning candidate in validation-error order.
    pub argmin_index: usize,
    /// Index of that candidate in the caller's slice.
    pub argmin_observation: usize,
    pub cost_value: f64,
    pub qp_attempts: usize,
}

/// Ascending validation error, ties kept in input order.
pub fn sorted_order(observations: &[Observation]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..observations.len()).collect();
    order.sort_by(|&a, &b| observations[a].ve().total_cmp(&observations[b].ve()));
    order
}

/// Balances the two cost terms: `Σ‖gᵢ‖² / Σ‖Jᵢ‖²_F`, or 0 if every Jacobian is zero.
pub fn default_epsilon(observations: &[Observation]) -> Result<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, o) in observations.iter().enumerate() {
        let g = o
            .gradients()
            .ok_or_else(|| Error::MissingGradients(format!("observation {i} ({:?}) has no gradients", o.model_id())))?;
        num += g.grad_ve.iter().map(|v| v * v).sum::<f64>();
        den += g.jacobian.frobenius_sq();
    }
    Ok(if den == 0.0 { 0.0 } else { num / den })
}

/// Rows whose squared norms against `(λ, −α)` make up the cost: `(φᵢ, −vᵢ)`
/// and, when gradients are used, `√ε (Jᵢ row j, −gᵢⱼ)`.
pub fn cost_rows(observations: &[Observation], epsilon: f64, use_gradients: bool) -> Matrix {
    let k = observations.first().map_or(0, |o| o.num_features());
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for o in observations {
        let mut r = o.fv().to_vec();
        r.push(-o.ve());
        rows.push(r);
    }
    if use_gradients {
        let s = sqrt(epsilon);
        for o in observations {
            let g = o.gradients().expect("caller checked gradients");
            for j in 0..g.grad_ve.len() {
                let mut r: Vec<f64> = g.jacobian.row(j).iter().map(|v| s * v).collect();
                r.push(-s * g.grad_ve[j]);
                rows.push(r);
            }
        }
    }
    Matrix::from_rows(&rows, k + 1).expect("rows share the feature count")
}

/// Dimension of the space of `(λ, α)` with zero cost. A zero-cost solution
/// is unique up to scale exactly when this is 1.
pub fn zero_cost_nullity(observations: &[Observation], params: &CostParams) -> Result<usize> {
    let k = observations.first().map_or(0, |o| o.num_features());
    let use_gradients = check_observations(observations, k, params.epsilon)?;
    let rows = cost_rows(observations, params.epsilon, use_gradients);
    Ok(k + 1 - rank(&rows, 1e-10))
}

/// The solver adds `δ‖x‖²/2`, which drags the solution toward the origin
/// along directions where the cost is nearly flat. Proximal steps
/// `min cost + δ‖x − x_prev‖²/2` remove that pull.
fn refine(problem: &QpProblem, mut x: Vec<f64>, settings: &SolverSettings) -> Result<Vec<f64>> {
    for _ in 0..PROXIMAL_ROUNDS {
        let q: Vec<f64> = x.iter().map(|v| -TIKHONOV * v).collect();
        let shifted = QpProblem::new(
            problem.p().clone(),
            q,
            problem.a().clone(),
            problem.b().to_vec(),
            problem.lo().to_vec(),
            problem.hi().to_vec(),
        )?;
        let sol = solve_qp_with(&shifted, settings);
        if sol.status != QpStatus::Optimal {
            break;
        }
        let step = sol.x.iter().zip(&x).fold(0.0f64, |s, (a, b)| s.max((a - b).abs()));
        x = sol.x;
        if step <= 1e-13 * (1.0 + norm_inf(&x)) {
            break;
        }
    }
    Ok(x)
}

pub fn learn_loss(observations: &[Observation], feasible: &Hypercube, params: &CostParams) -> Result<LearnLossResult> {
    learn_loss_with(observations, feasible, params, &SolverSettings::default())
}

pub fn learn_loss_with(
    observations: &[Observation],
    feasible: &Hypercube,
    params: &CostParams,
    settings: &SolverSettings,
) -> Result<LearnLossResult> {
    if observations.is_empty() {
        return Err(invalid("learn_loss needs at least one observation"));
    }
    let k = feasible.dim();
    let use_gradients = check_observations(observations, k, params.epsilon)?;
    let rows = cost_rows(observations, params.epsilon, use_gradients);

    // The cost is ‖R x‖² = ½ xᵀ(2RᵀR)x with x = (λ, α). Dividing by the
    // largest entry leaves the minimizer alone and keeps the solver's
    // absolute tolerances meaningful when features are large.
    let mut p = Matrix::zeros(k + 1, k + 1);
    for i in 0..rows.rows() {
        p.add_outer(rows.row(i), 2.0);
    }
    let p_scale = p.max_abs();
    if p_scale > 0.0 && p_scale.is_finite() {
        for v in p.as_mut_slice() {
            *v /= p_scale;
        }
    }
    let q = vec![0.0; k + 1];
    let mut lo = feasible.lo().to_vec();
    lo.push(params.alpha_min);
    let mut hi = feasible.hi().to_vec();
    hi.push(f64::INFINITY);

    let order = sorted_order(observations);
    for (pos, &star) in order.iter().enumerate() {
        let p_star = observations[star].fv();
        let mut a_rows: Vec<Vec<f64>> = Vec::new();
        for (i, o) in observations.iter().enumerate() {
            if i == star {
                continue;
            }
            let mut r: Vec<f64> = p_star.iter().zip(o.fv()).map(|(a, b)| a - b).collect();
            let scale = norm_inf(&r);
            if scale == 0.0 {
                continue;
            }
            r.iter_mut().for_each(|v| *v /= scale);
            r.push(0.0);
            a_rows.push(r);
        }
        let a = Matrix::from_rows(&a_rows, k + 1)?;
        let b = vec![0.0; a_rows.len()];
        let problem = QpProblem::new(p.clone(), q.clone(), a, b, lo.clone(), hi.clone())?;
        let sol = solve_qp_with(&problem, settings);
        match sol.status {
            QpStatus::Infeasible => continue,
            QpStatus::MaxIterations => return Err(Error::SolverMaxIterations(sol.iterations)),
            QpStatus::Optimal => {
                let x = refine(&problem, sol.x, settings)?;
                let lambda = x[..k].to_vec();
                let alpha = x[k].max(params.alpha_min);
                let cost_value = cost(&lambda, alpha, observations, params)?;
                return Ok(LearnLossResult {
                    lambda,
                    alpha,
                    argmin_index: pos + 1,
                    argmin_observation: star,
                    cost_value,
                    qp_attempts: pos + 1,
                });
            }
        }
    }
    Err(Error::NoFeasibleArgmin)
}
