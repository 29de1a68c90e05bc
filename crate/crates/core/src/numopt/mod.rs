//! Dense convex QP and LP feasibility.
//!
//! Problems have the form
//!
//! ```text
//! minimize    ½ xᵀ(P + δI)x + qᵀx
//! subject to  A x ≤ b,   lo ≤ x ≤ hi
//! ```
//!
//! where `δ = 1e-9` ([`TIKHONOV`]) is always added so that the minimizer is
//! unique even when `P` is singular. Reported residuals and multipliers refer
//! to this regularized problem; the reported objective omits `δ`.
//!
//! Variables with `lo_j = hi_j` are substituted out before solving.

mod admm;
mod dual;

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{dim_err, invalid, Error, Result};
use crate::linalg::{dot, norm_inf, Cholesky, Matrix};
use admm::{Outcome, QpForm};
use dual::DualOutcome;

/// Largest reduced dimension handed to the dense dual active-set method
/// before falling back to the splitting engine alone.
const DUAL_MAX_DIM: usize = 400;

/// Regularization added to the diagonal of every quadratic term.
pub const TIKHONOV: f64 = 1e-9;
/// KKT tolerance for an `Optimal` verdict (∞-norm, unscaled).
pub const KKT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITERATIONS: usize = 20_000;

const POLISH_TOL: f64 = 1e-9;
const SYMMETRY_TOL: f64 = 1e-12;
const PSD_FLOOR: f64 = 1e-9;
const BOX_TOL: f64 = 1e-9;

/// `min ½xᵀPx + qᵀx  s.t.  Ax ≤ b, lo ≤ x ≤ hi`. Immutable once built.
#[derive(Clone, Debug)]
pub struct QpProblem {
    p: Matrix,
    q: Vec<f64>,
    a: Matrix,
    b: Vec<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl QpProblem {
    /// Validates shapes, symmetry (within 1e-12, then symmetrized) and
    /// positive semidefiniteness (eigenvalue floor −1e-9, relative to the
    /// largest entry of `P` when that exceeds one).
    ///
    /// `b` may hold `+∞` for rows that never bind; bounds may be infinite.
    pub fn new(p: Matrix, q: Vec<f64>, a: Matrix, b: Vec<f64>, lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        let d = q.len();
        if p.rows() != d || p.cols() != d {
            return Err(dim_err(format!("P is {}x{}, q has length {}", p.rows(), p.cols(), d)));
        }
        if a.cols() != d {
            return Err(dim_err(format!("A has {} columns, expected {}", a.cols(), d)));
        }
        if a.rows() != b.len() {
            return Err(dim_err(format!("A has {} rows, b has length {}", a.rows(), b.len())));
        }
        if lo.len() != d || hi.len() != d {
            return Err(dim_err(format!("bounds have lengths {}/{}, expected {}", lo.len(), hi.len(), d)));
        }
        if !p.is_finite() || !a.is_finite() || q.iter().any(|v| !v.is_finite()) {
            return Err(invalid("non-finite entries in P, q or A"));
        }
        if b.iter().any(|v| v.is_nan() || *v == f64::NEG_INFINITY) {
            return Err(invalid("b must be finite or +inf"));
        }
        for j in 0..d {
            if lo[j].is_nan() || hi[j].is_nan() || lo[j] > hi[j] || lo[j] == f64::INFINITY || hi[j] == f64::NEG_INFINITY {
                return Err(invalid(format!("invalid bounds [{}, {}] for x[{}]", lo[j], hi[j], j)));
            }
        }
        let mut p = p;
        for i in 0..d {
            for j in i + 1..d {
                let (pij, pji) = (p[(i, j)], p[(j, i)]);
                if (pij - pji).abs() > SYMMETRY_TOL * 1f64.max(pij.abs()).max(pji.abs()) {
                    return Err(invalid(format!("P is not symmetric at ({}, {})", i, j)));
                }
                let avg = 0.5 * (pij + pji);
                p[(i, j)] = avg;
                p[(j, i)] = avg;
            }
        }
        check_psd(&p)?;
        Ok(QpProblem { p, q, a, b, lo, hi })
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    pub fn num_inequalities(&self) -> usize {
        self.b.len()
    }

    pub fn p(&self) -> &Matrix {
        &self.p
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    /// `½xᵀPx + qᵀx` without the Tikhonov term.
    pub fn objective(&self, x: &[f64]) -> f64 {
        0.5 * dot(x, &self.p.mul_vec(x)) + dot(&self.q, x)
    }

    /// Returns a copy with inequality row `row` removed.
    pub fn without_inequality(&self, row: usize) -> QpProblem {
        let rows: Vec<Vec<f64>> =
            (0..self.a.rows()).filter(|&i| i != row).map(|i| self.a.row(i).to_vec()).collect();
        let b = (0..self.b.len()).filter(|&i| i != row).map(|i| self.b[i]).collect();
        QpProblem {
            p: self.p.clone(),
            q: self.q.clone(),
            a: Matrix::from_rows(&rows, self.dim()).expect("rows share the column count"),
            b,
            lo: self.lo.clone(),
            hi: self.hi.clone(),
        }
    }

    /// KKT violation of `(x, μ, ν)` for the regularized problem, where `μ`
    /// multiplies `Ax ≤ b` and `ν` collects the bound multipliers (positive at
    /// an upper bound, negative at a lower bound).
    pub fn kkt_residuals(&self, x: &[f64], mu: &[f64], nu: &[f64]) -> KktResiduals {
        let ax = self.a.mul_vec(x);
        let mut primal: f64 = 0.0;
        let mut compl: f64 = 0.0;
        for i in 0..ax.len() {
            let slack = ax[i] - self.b[i];
            primal = primal.max(slack);
            compl = compl.max(-mu[i]);
            if self.b[i].is_finite() {
                compl = compl.max((mu[i] * slack).abs());
            } else {
                compl = compl.max(mu[i].abs());
            }
        }
        for j in 0..x.len() {
            primal = primal.max(self.lo[j] - x[j]).max(x[j] - self.hi[j]);
            let v = nu[j];
            if v > 0.0 {
                compl = compl.max(if self.hi[j].is_finite() { v * (self.hi[j] - x[j]).abs() } else { v });
            } else if v < 0.0 {
                compl = compl.max(if self.lo[j].is_finite() { -v * (x[j] - self.lo[j]).abs() } else { -v });
            }
        }
        let mut stat = self.p.mul_vec(x);
        let atmu = self.a.tr_mul_vec(mu);
        for j in 0..stat.len() {
            stat[j] += TIKHONOV * x[j] + self.q[j] + atmu[j] + nu[j];
        }
        KktResiduals { primal, dual: norm_inf(&stat), complementarity: compl }
    }
}

fn check_psd(p: &Matrix) -> Result<()> {
    let d = p.rows();
    // Gershgorin: diagonally dominant with non-negative diagonal is PSD.
    let dominant = (0..d).all(|i| {
        let off: f64 = (0..d).filter(|&j| j != i).map(|j| p[(i, j)].abs()).sum();
        p[(i, i)] >= off
    });
    if dominant {
        return Ok(());
    }
    let shift = PSD_FLOOR * 1f64.max(p.max_abs());
    let mut shifted = p.clone();
    for i in 0..d {
        shifted[(i, i)] += shift;
    }
    match Cholesky::factor(&shifted) {
        Ok(_) => Ok(()),
        Err(pivot) => Err(Error::NotPsd(pivot - shift)),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KktResiduals {
    pub primal: f64,
    pub dual: f64,
    pub complementarity: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    MaxIterations,
}

#[derive(Clone, Debug)]
pub struct QpSolution {
    pub x: Vec<f64>,
    pub status: QpStatus,
    /// Constraint violation. For `Infeasible`, the smallest uniform slack
    /// that makes `Ax ≤ b + s` feasible within the bounds.
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub complementarity: f64,
    pub objective: f64,
    pub iterations: usize,
    pub inequality_multipliers: Vec<f64>,
    pub bound_multipliers: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct SolverSettings {
    pub max_iterations: usize,
    pub rho: f64,
    pub sigma: f64,
    pub relaxation: f64,
    pub check_interval: usize,
    pub rho_interval: usize,
    /// ADMM accuracy at which the first active-set polish is attempted.
    pub polish_trigger: f64,
    /// Polish is also retried every this many iterations.
    pub polish_interval: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            max_iterations: DEFAULT_MAX_ITERATIONS,
            rho: 0.1,
            sigma: 1e-6,
            relaxation: 1.6,
            check_interval: 5,
            rho_interval: 25,
            polish_trigger: 1e-5,
            polish_interval: 500,
        }
    }
}

pub fn solve_qp(problem: &QpProblem) -> QpSolution {
    solve_qp_with(problem, &SolverSettings::default())
}

pub fn solve_qp_with(problem: &QpProblem, settings: &SolverSettings) -> QpSolution {
    solve_impl(problem, settings, true)
}

/// Variables left after substituting out pinned coordinates.
struct Reduction {
    free: Vec<usize>,
    /// Full-length vector holding the pinned values (zero elsewhere).
    fixed: Vec<f64>,
    form: QpForm,
    /// Inequality rows kept in the form (those with finite `b`).
    ineq_rows: Vec<usize>,
    /// For each free variable, the form row holding its bounds (if any).
    bound_rows: Vec<Option<usize>>,
}

fn reduce(problem: &QpProblem) -> Reduction {
    let d = problem.dim();
    let free: Vec<usize> = (0..d).filter(|&j| problem.lo[j] < problem.hi[j]).collect();
    let mut fixed = vec![0.0; d];
    for j in 0..d {
        if problem.lo[j] == problem.hi[j] {
            fixed[j] = problem.lo[j];
        }
    }
    let nf = free.len();
    let px = problem.p.mul_vec(&fixed);
    let ax = problem.a.mul_vec(&fixed);
    let mut p = Matrix::zeros(nf, nf);
    let mut q = vec![0.0; nf];
    for (a, &i) in free.iter().enumerate() {
        for (b, &j) in free.iter().enumerate() {
            p[(a, b)] = problem.p[(i, j)];
        }
        p[(a, a)] += TIKHONOV;
        q[a] = problem.q[i] + px[i];
    }
    let ineq_rows: Vec<usize> = (0..problem.b.len()).filter(|&i| problem.b[i].is_finite()).collect();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut l = Vec::new();
    let mut u = Vec::new();
    for &i in &ineq_rows {
        rows.push(free.iter().map(|&j| problem.a[(i, j)]).collect());
        l.push(f64::NEG_INFINITY);
        u.push(problem.b[i] - ax[i]);
    }
    let mut bound_rows = vec![None; nf];
    for (a, &j) in free.iter().enumerate() {
        if problem.lo[j].is_finite() || problem.hi[j].is_finite() {
            let mut r = vec![0.0; nf];
            r[a] = 1.0;
            bound_rows[a] = Some(rows.len());
            rows.push(r);
            l.push(problem.lo[j]);
            u.push(problem.hi[j]);
        }
    }
    let c = Matrix::from_rows(&rows, nf).expect("constraint rows share the column count");
    Reduction { free, fixed, form: QpForm { p, q, c, l, u }, ineq_rows, bound_rows }
}

fn solve_impl(problem: &QpProblem, settings: &SolverSettings, detect_infeasibility: bool) -> QpSolution {
    let d = problem.dim();
    let red = reduce(problem);

    let mut confirm = || -> bool {
        match phase_one(problem.a(), problem.b(), problem.lo(), problem.hi(), settings) {
            Ok((_, slack)) => slack > KKT_TOL,
            Err(_) => false,
        }
    };
    let exact = if red.form.dim() > 0 && red.form.dim() <= DUAL_MAX_DIM {
        match dual::solve(&red.form, settings.max_iterations) {
            DualOutcome::Solved { x, y, iterations } => {
                let fits = red.form.residuals(&x, &y).max() <= KKT_TOL * 1e-2;
                fits.then_some(Outcome::Solved { x, y, iterations })
            }
            DualOutcome::Infeasible { iterations } if detect_infeasibility && confirm() => Some(Outcome::Infeasible { iterations }),
            _ => None,
        }
    } else {
        None
    };
    let outcome = match exact {
        Some(o) => o,
        None if detect_infeasibility => admm::solve(&red.form, settings, Some(&mut confirm)),
        None => admm::solve(&red.form, settings, None),
    };

    let (xr, yr, iterations, status) = match outcome {
        Outcome::Solved { x, y, iterations } => (x, y, iterations, QpStatus::Optimal),
        Outcome::MaxIterations { x, y, iterations } => (x, y, iterations, QpStatus::MaxIterations),
        Outcome::Infeasible { iterations } => {
            let (x, slack) = phase_one(problem.a(), problem.b(), problem.lo(), problem.hi(), settings)
                .unwrap_or_else(|_| (problem.lo().iter().map(|v| v.max(-1e300)).collect(), f64::INFINITY));
            return QpSolution {
                objective: problem.objective(&x),
                x,
                status: QpStatus::Infeasible,
                primal_residual: slack,
                dual_residual: f64::NAN,
                complementarity: f64::NAN,
                iterations,
                inequality_multipliers: vec![0.0; problem.num_inequalities()],
                bound_multipliers: vec![0.0; d],
            };
        }
    };

    let mut x = red.fixed.clone();
    for (a, &j) in red.free.iter().enumerate() {
        x[j] = xr[a].clamp(problem.lo[j], problem.hi[j]);
    }
    let mut mu = vec![0.0; problem.num_inequalities()];
    for (k, &i) in red.ineq_rows.iter().enumerate() {
        mu[i] = yr[k];
    }
    let mut nu = vec![0.0; d];
    for (a, &j) in red.free.iter().enumerate() {
        if let Some(r) = red.bound_rows[a] {
            nu[j] = yr[r];
        }
    }
    // Pinned coordinates absorb whatever remains of stationarity.
    let mut grad = problem.p.mul_vec(&x);
    let atmu = problem.a.tr_mul_vec(&mu);
    for j in 0..d {
        grad[j] += TIKHONOV * x[j] + problem.q[j] + atmu[j];
        if problem.lo[j] == problem.hi[j] {
            nu[j] = -grad[j];
        }
    }
    let kkt = problem.kkt_residuals(&x, &mu, &nu);
    let status = match status {
        QpStatus::Optimal if kkt.primal <= KKT_TOL && kkt.dual <= KKT_TOL && kkt.complementarity <= KKT_TOL => {
            QpStatus::Optimal
        }
        QpStatus::Optimal => QpStatus::MaxIterations,
        s => s,
    };
    // Without free variables the engine is trivially "solved"; infeasibility
    // shows up as a violated inequality.
    let status = if red.free.is_empty() && kkt.primal > KKT_TOL { QpStatus::Infeasible } else { status };
    QpSolution {
        objective: problem.objective(&x),
        x,
        status,
        primal_residual: kkt.primal,
        dual_residual: kkt.dual,
        complementarity: kkt.complementarity,
        iterations,
        inequality_multipliers: mu,
        bound_multipliers: nu,
    }
}

/// Solves `min s  s.t.  Ax − s ≤ b, lo ≤ x ≤ hi, s ≥ 0` and returns the
/// box-clipped point together with its actual worst violation of `Ax ≤ b`.
fn phase_one(a: &Matrix, b: &[f64], lo: &[f64], hi: &[f64], settings: &SolverSettings) -> Result<(Vec<f64>, f64)> {
    let d = lo.len();
    let m = a.rows();
    let mut rows = Vec::with_capacity(m);
    for i in 0..m {
        let mut r = a.row(i).to_vec();
        r.push(-1.0);
        rows.push(r);
    }
    let a1 = Matrix::from_rows(&rows, d + 1)?;
    let mut q = vec![0.0; d + 1];
    q[d] = 1.0;
    let mut lo1 = lo.to_vec();
    lo1.push(0.0);
    let mut hi1 = hi.to_vec();
    hi1.push(f64::INFINITY);
    let problem = QpProblem::new(Matrix::zeros(d + 1, d + 1), q, a1, b.to_vec(), lo1, hi1)?;
    let sol = solve_impl(&problem, settings, false);
    let x: Vec<f64> = (0..d).map(|j| sol.x[j].clamp(lo[j], hi[j])).collect();
    let ax = a.mul_vec(&x);
    let violation = ax.iter().zip(b).fold(0.0f64, |v, (l, r)| v.max(l - r));
    Ok((x, violation))
}

/// Finds a point with `Ax ≤ b + 1e-8` inside `[lo, hi]`, or `None`.
///
/// Runs a phase-1 problem (zero quadratic, one slack shared by all rows)
/// through the QP solver.
pub fn check_lp_feasibility(a: &Matrix, b: &[f64], lo: &[f64], hi: &[f64]) -> Result<Option<Vec<f64>>> {
    let d = lo.len();
    if hi.len() != d || a.cols() != d || a.rows() != b.len() {
        return Err(dim_err(format!(
            "A is {}x{}, b has length {}, bounds have lengths {}/{}",
            a.rows(),
            a.cols(),
            b.len(),
            lo.len(),
            hi.len()
        )));
    }
    if (0..d).any(|j| !(lo[j] <= hi[j])) {
        return Ok(None);
    }
    let (x, violation) = phase_one(a, b, lo, hi, &SolverSettings::default())?;
    if violation <= KKT_TOL && (0..d).all(|j| x[j] >= lo[j] - BOX_TOL && x[j] <= hi[j] + BOX_TOL) {
        Ok(Some(x))
    } else {
        Ok(None)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unbounded(d: usize) -> (Vec<f64>, Vec<f64>) {
        (vec![f64::NEG_INFINITY; d], vec![f64::INFINITY; d])
    }

    #[test]
    fn unconstrained_one_dimensional_minimum() {
        let (lo, hi) = unbounded(1);
        let p = QpProblem::new(Matrix::from_diagonal(&[2.0]), vec![-2.0], Matrix::zeros(0, 1), vec![], lo, hi)
            .unwrap();
        let sol = solve_qp(&p);
        assert_eq!(sol.status, QpStatus::Optimal);
        assert!((sol.x[0] - 1.0).abs() < 1e-8);
        assert!((sol.objective + 1.0).abs() < 1e-8);
    }

    #[test]
    fn active_box_bound_clips_solution() {
        let p = QpProblem::new(Matrix::from_diagonal(&[2.0]), vec![-4.0], Matrix::zeros(0, 1), vec![], vec![0.0], vec![1.0])
            .unwrap();
        let sol = solve_qp(&p);
        assert_eq!(sol.status, QpStatus::Optimal);
        assert!((sol.x[0] - 1.0).abs() < 1e-9);
        assert!(sol.bound_multipliers[0] > 0.0);
    }

    #[test]
    fn pinned_variables_are_substituted() {
        // min (x0 - 3)^2 + (x1 - x0)^2 with x0 pinned to 1 → x1 = 1.
        let pm = Matrix::from_rows(&[vec![4.0, -2.0], vec![-2.0, 2.0]], 2).unwrap();
        let p = QpProblem::new(pm, vec![-6.0, 0.0], Matrix::zeros(0, 2), vec![], vec![1.0, -10.0], vec![1.0, 10.0])
            .unwrap();
        let sol = solve_qp(&p);
        assert_eq!(sol.status, QpStatus::Optimal);
        assert_eq!(sol.x[0], 1.0);
        assert!((sol.x[1] - 1.0).abs() < 1e-8);
        assert!(sol.dual_residual <= KKT_TOL);
    }

    #[test]
    fn infeasible_inequalities_are_reported() {
        // x ≤ -1 with x ∈ [0, 1]
        let a = Matrix::from_rows(&[vec![1.0]], 1).unwrap();
        let p = QpProblem::new(Matrix::from_diagonal(&[1.0]), vec![0.0], a, vec![-1.0], vec![0.0], vec![1.0]).unwrap();
        let sol = solve_qp(&p);
        assert_eq!(sol.status, QpStatus::Infeasible);
        assert!((sol.primal_residual - 1.0).abs() < 1e-8);
    }

    #[test]
    fn all_pinned_problem() {
        let a = Matrix::from_rows(&[vec![1.0, 1.0]], 2).unwrap();
        let ok = QpProblem::new(Matrix::zeros(2, 2), vec![1.0, 0.0], a.clone(), vec![3.0], vec![1.0, 1.0], vec![1.0, 1.0])
            .unwrap();
        assert_eq!(solve_qp(&ok).status, QpStatus::Optimal);
        let bad = QpProblem::new(Matrix::zeros(2, 2), vec![1.0, 0.0], a, vec![1.0], vec![1.0, 1.0], vec![1.0, 1.0]).unwrap();
        assert_eq!(solve_qp(&bad).status, QpStatus::Infeasible);
    }

    #[test]
    fn construction_errors() {
        let (lo, hi) = unbounded(2);
        assert!(matches!(
            QpProblem::new(Matrix::zeros(2, 2), vec![0.0], Matrix::zeros(0, 2), vec![], lo.clone(), hi.clone()),
            Err(Error::Dimension(_))
        ));
        let indefinite = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, -1.0]], 2).unwrap();
        assert!(matches!(
            QpProblem::new(indefinite, vec![0.0, 0.0], Matrix::zeros(0, 2), vec![], lo.clone(), hi.clone()),
            Err(Error::NotPsd(_))
        ));
        let asym = Matrix::from_rows(&[vec![1.0, 0.5], vec![0.0, 1.0]], 2).unwrap();
        assert!(QpProblem::new(asym, vec![0.0, 0.0], Matrix::zeros(0, 2), vec![], lo, hi).is_err());
        assert!(QpProblem::new(Matrix::zeros(1, 1), vec![0.0], Matrix::zeros(0, 1), vec![], vec![1.0], vec![0.0]).is_err());
    }

    #[test]
    fn lp_feasibility_examples() {
        let a = Matrix::from_rows(&[vec![1.0], vec![-1.0]], 1).unwrap();
        let (lo, hi) = unbounded(1);
        let x = check_lp_feasibility(&a, &[1.0, 0.0], &lo, &hi).unwrap().expect("interval is nonempty");
        assert!(x[0] >= -1e-8 && x[0] <= 1.0 + 1e-8);

        let a = Matrix::from_rows(&[vec![1.0]], 1).unwrap();
        assert!(check_lp_feasibility(&a, &[-1.0], &[0.0], &[1.0]).unwrap().is_none());
        assert!(check_lp_feasibility(&a, &[-1.0], &[0.0, 0.0], &[1.0]).is_err());
    }

    #[test]
    fn lp_feasibility_on_a_single_point() {
        // x + y ≤ 0, -x - y ≤ 0, x - y ≤ 0, y - x ≤ 0 → only the origin.
        let a = Matrix::from_rows(&[vec![1.0, 1.0], vec![-1.0, -1.0], vec![1.0, -1.0], vec![-1.0, 1.0]], 2).unwrap();
        let x = check_lp_feasibility(&a, &[0.0; 4], &[-1.0, -1.0], &[1.0, 1.0]).unwrap().unwrap();
        assert!(x[0].abs() < 1e-8 && x[1].abs() < 1e-8);
    }

    #[test]
    fn solve_is_deterministic() {
        let pm = Matrix::from_rows(&[vec![2.0, 0.5], vec![0.5, 1.0]], 2).unwrap();
        let a = Matrix::from_rows(&[vec![1.0, 1.0]], 2).unwrap();
        let p = QpProblem::new(pm, vec![-1.0, -1.0], a, vec![0.5], vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap();
        let (s1, s2) = (solve_qp(&p), solve_qp(&p));
        assert_eq!(s1.x, s2.x);
        assert_eq!(s1.inequality_multipliers, s2.inequality_multipliers);
    }
}
