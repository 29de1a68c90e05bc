//! Operator-splitting engine for `min ½xᵀPx + qᵀx  s.t.  l ≤ Cx ≤ u`.
//!
//! The iteration follows the usual ADMM scheme for this form: a reduced
//! (quasi-definite eliminated) linear system `P + σI + Cᵀ diag(ρ) C` factored
//! once per ρ value, a projection onto `[l, u]`, and a dual update. Ruiz
//! equilibration is applied up front and undone for every termination check.
//! Once the iterates are accurate enough to guess the active set, a
//! primal-dual active-set pass solves the KKT system exactly.

use alloc::vec;
use alloc::vec::Vec;

use super::SolverSettings;
use crate::linalg::{axpy, dot, norm_inf, Cholesky, Lu, Matrix};
use crate::math::sqrt;

const RHO_MIN: f64 = 1e-6;
const RHO_MAX: f64 = 1e6;
const RHO_LOOSE: f64 = 1e-6;
const SCALE_MIN: f64 = 1e-4;
const SCALE_MAX: f64 = 1e4;
const RUIZ_ITERATIONS: usize = 25;
const STAGNATION_LEVEL: f64 = 1e-6;
const STAGNATION_WINDOW: usize = 500;
const CERTIFICATE_TOL: f64 = 1e-8;
const POLISH_MAX_PASSES: usize = 40;

/// Problem in the two-sided constraint form consumed by the engine. `p` is
/// expected to carry any regularization already.
#[derive(Clone, Debug)]
pub(crate) struct QpForm {
    pub p: Matrix,
    pub q: Vec<f64>,
    pub c: Matrix,
    pub l: Vec<f64>,
    pub u: Vec<f64>,
}

#[derive(Debug)]
pub(crate) enum Outcome {
    Solved { x: Vec<f64>, y: Vec<f64>, iterations: usize },
    Infeasible { iterations: usize },
    MaxIterations { x: Vec<f64>, y: Vec<f64>, iterations: usize },
}

/// Unscaled KKT violation of `(x, y)` for a [`QpForm`].
#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct FormResiduals {
    pub primal: f64,
    pub dual: f64,
    pub complementarity: f64,
}

impl FormResiduals {
    pub fn max(&self) -> f64 {
        self.primal.max(self.dual).max(self.complementarity)
    }
}

impl QpForm {
    pub fn dim(&self) -> usize {
        self.q.len()
    }

    pub fn residuals(&self, x: &[f64], y: &[f64]) -> FormResiduals {
        let cx = self.c.mul_vec(x);
        let mut primal: f64 = 0.0;
        let mut compl: f64 = 0.0;
        for i in 0..cx.len() {
            primal = primal.max(self.l[i] - cx[i]).max(cx[i] - self.u[i]);
            let yi = y[i];
            if yi > 0.0 {
                compl = compl.max(if self.u[i].is_finite() { yi * (self.u[i] - cx[i]).abs() } else { yi });
            } else if yi < 0.0 {
                compl = compl.max(if self.l[i].is_finite() { -yi * (cx[i] - self.l[i]).abs() } else { -yi });
            }
        }
        let mut stat = self.p.mul_vec(x);
        for (s, qi) in stat.iter_mut().zip(&self.q) {
            *s += qi;
        }
        let cty = self.c.tr_mul_vec(y);
        for (s, v) in stat.iter_mut().zip(&cty) {
            *s += v;
        }
        FormResiduals { primal, dual: norm_inf(&stat), complementarity: compl }
    }
}

/// Equilibrated copy of a form together with the scaling that produced it:
/// `P̄ = c·D P D`, `q̄ = c·D q`, `C̄ = E C D`, `l̄ = E l`, `ū = E u`.
struct Scaled {
    form: QpForm,
    d: Vec<f64>,
    e: Vec<f64>,
    cost: f64,
}

impl Scaled {
    fn new(orig: &QpForm) -> Self {
        let n = orig.dim();
        let m = orig.c.rows();
        let mut f = orig.clone();
        let mut d = vec![1.0; n];
        let mut e = vec![1.0; m];
        let mut d_step = vec![0.0; n];
        let mut e_step = vec![0.0; m];
        for _ in 0..RUIZ_ITERATIONS {
            for j in 0..n {
                let mut norm: f64 = 0.0;
                for i in 0..n {
                    norm = norm.max(f.p[(i, j)].abs());
                }
                for r in 0..m {
                    norm = norm.max(f.c[(r, j)].abs());
                }
                d_step[j] = equilibrate(norm);
            }
            for r in 0..m {
                e_step[r] = equilibrate(norm_inf(f.c.row(r)));
            }
            for i in 0..n {
                for j in 0..n {
                    f.p[(i, j)] *= d_step[i] * d_step[j];
                }
                f.q[i] *= d_step[i];
                d[i] *= d_step[i];
            }
            for r in 0..m {
                for j in 0..n {
                    f.c[(r, j)] *= e_step[r] * d_step[j];
                }
                e[r] *= e_step[r];
            }
        }
        for di in d.iter_mut() {
            *di = di.clamp(SCALE_MIN, SCALE_MAX);
        }
        for ei in e.iter_mut() {
            *ei = ei.clamp(SCALE_MIN, SCALE_MAX);
        }
        // Rebuild from the clamped factors so the scaling is exact.
        let mut form = orig.clone();
        for i in 0..n {
            for j in 0..n {
                form.p[(i, j)] *= d[i] * d[j];
            }
            form.q[i] *= d[i];
        }
        for r in 0..m {
            for j in 0..n {
                form.c[(r, j)] *= e[r] * d[j];
            }
            form.l[r] *= e[r];
            form.u[r] *= e[r];
        }
        let mean_col = if n == 0 {
            0.0
        } else {
            (0..n).map(|j| (0..n).fold(0.0f64, |a, i| a.max(form.p[(i, j)].abs()))).sum::<f64>() / n as f64
        };
        let denom = mean_col.max(norm_inf(&form.q));
        let cost = if denom > 0.0 { (1.0 / denom).clamp(SCALE_MIN, SCALE_MAX) } else { 1.0 };
        for v in form.p.as_mut_slice() {
            *v *= cost;
        }
        for v in form.q.iter_mut() {
            *v *= cost;
        }
        Scaled { form, d, e, cost }
    }

    fn unscale_x(&self, xs: &[f64]) -> Vec<f64> {
        xs.iter().zip(&self.d).map(|(x, d)| x * d).collect()
    }

    fn unscale_y(&self, ys: &[f64]) -> Vec<f64> {
        ys.iter().zip(&self.e).map(|(y, e)| y * e / self.cost).collect()
    }
}

fn equilibrate(norm: f64) -> f64 {
    if norm < SCALE_MIN {
        1.0
    } else {
        (1.0 / sqrt(norm)).clamp(SCALE_MIN, SCALE_MAX)
    }
}

struct Engine<'a> {
    s: &'a Scaled,
    settings: &'a SolverSettings,
    rho: f64,
    rho_vec: Vec<f64>,
    kkt: Cholesky,
    x: Vec<f64>,
    z: Vec<f64>,
    y: Vec<f64>,
    delta_y: Vec<f64>,
}

impl<'a> Engine<'a> {
    fn new(s: &'a Scaled, settings: &'a SolverSettings) -> Option<Self> {
        let n = s.form.dim();
        let m = s.form.c.rows();
        let rho = settings.rho;
        let rho_vec = row_rho(&s.form, rho);
        let kkt = factor_reduced(&s.form, settings.sigma, &rho_vec)?;
        let x = vec![0.0; n];
        let z: Vec<f64> = (0..m).map(|i| 0.0f64.clamp(s.form.l[i], s.form.u[i])).collect();
        Some(Engine { s, settings, rho, rho_vec, kkt, x, z, y: vec![0.0; m], delta_y: vec![0.0; m] })
    }

    fn step(&mut self) {
        let f = &self.s.form;
        let sigma = self.settings.sigma;
        let alpha = self.settings.relaxation;
        let m = f.c.rows();
        let w: Vec<f64> = (0..m).map(|i| self.rho_vec[i] * self.z[i] - self.y[i]).collect();
        let mut rhs = f.c.tr_mul_vec(&w);
        for j in 0..rhs.len() {
            rhs[j] += sigma * self.x[j] - f.q[j];
        }
        self.kkt.solve_in_place(&mut rhs);
        let x_tilde = rhs;
        let z_tilde = f.c.mul_vec(&x_tilde);
        for j in 0..self.x.len() {
            self.x[j] = alpha * x_tilde[j] + (1.0 - alpha) * self.x[j];
        }
        for i in 0..m {
            let zr = alpha * z_tilde[i] + (1.0 - alpha) * self.z[i];
            let z_new = (zr + self.y[i] / self.rho_vec[i]).clamp(f.l[i], f.u[i]);
            let dy = self.rho_vec[i] * (zr - z_new);
            self.delta_y[i] = dy;
            self.y[i] += dy;
            self.z[i] = z_new;
        }
    }

    /// Scaled primal residual `‖C̄x̄ − z̄‖∞`.
    fn scaled_primal(&self) -> f64 {
        let cx = self.s.form.c.mul_vec(&self.x);
        cx.iter().zip(&self.z).fold(0.0, |a, (c, z)| a.max((c - z).abs()))
    }

    /// Unscaled residuals and the normalizers used by the relative tests.
    fn termination(&self) -> Termination {
        let s = self.s;
        let f = &s.form;
        let cx = f.c.mul_vec(&self.x);
        let m = cx.len();
        let mut r_prim: f64 = 0.0;
        let mut cx_norm: f64 = 0.0;
        let mut z_norm: f64 = 0.0;
        for i in 0..m {
            let inv = 1.0 / s.e[i];
            r_prim = r_prim.max(((cx[i] - self.z[i]) * inv).abs());
            cx_norm = cx_norm.max((cx[i] * inv).abs());
            z_norm = z_norm.max((self.z[i] * inv).abs());
        }
        let px = f.p.mul_vec(&self.x);
        let cty = f.c.tr_mul_vec(&self.y);
        let n = px.len();
        let mut r_dual: f64 = 0.0;
        let (mut px_n, mut cty_n, mut q_n): (f64, f64, f64) = (0.0, 0.0, 0.0);
        for j in 0..n {
            let inv = 1.0 / (s.d[j] * s.cost);
            r_dual = r_dual.max(((px[j] + f.q[j] + cty[j]) * inv).abs());
            px_n = px_n.max((px[j] * inv).abs());
            cty_n = cty_n.max((cty[j] * inv).abs());
            q_n = q_n.max((f.q[j] * inv).abs());
        }
        // Scaled versions drive the ρ update.
        let mut sp: f64 = 0.0;
        let mut sp_norm: f64 = 0.0;
        for i in 0..m {
            sp = sp.max((cx[i] - self.z[i]).abs());
            sp_norm = sp_norm.max(cx[i].abs()).max(self.z[i].abs());
        }
        let mut sd: f64 = 0.0;
        let mut sd_norm: f64 = 0.0;
        for j in 0..n {
            sd = sd.max((px[j] + f.q[j] + cty[j]).abs());
            sd_norm = sd_norm.max(px[j].abs()).max(cty[j].abs()).max(f.q[j].abs());
        }
        Termination {
            r_prim,
            r_dual,
            prim_norm: cx_norm.max(z_norm),
            dual_norm: px_n.max(cty_n).max(q_n),
            scaled_ratio: if sp_norm > 0.0 && sd_norm > 0.0 && sd > 0.0 {
                Some((sp / sp_norm) / (sd / sd_norm))
            } else {
                None
            },
        }
    }

    fn maybe_update_rho(&mut self, ratio: f64) -> bool {
        let new_rho = (self.rho * sqrt(ratio)).clamp(RHO_MIN, RHO_MAX);
        if new_rho > 5.0 * self.rho || new_rho < 0.2 * self.rho {
            let rho_vec = row_rho(&self.s.form, new_rho);
            if let Some(kkt) = factor_reduced(&self.s.form, self.settings.sigma, &rho_vec) {
                self.rho = new_rho;
                self.rho_vec = rho_vec;
                self.kkt = kkt;
                return true;
            }
        }
        false
    }

    /// Primal infeasibility certificate built from the last dual step.
    fn certificate_holds(&self) -> bool {
        let s = self.s;
        let f = &s.form;
        let dy = s.unscale_y(&self.delta_y);
        let dy_norm = norm_inf(&dy);
        if dy_norm <= 0.0 || !dy_norm.is_finite() {
            return false;
        }
        // Cᵀδy in unscaled coordinates: D⁻¹ C̄ᵀ δȳ / c.
        let cty = f.c.tr_mul_vec(&self.delta_y);
        let mut lhs: f64 = 0.0;
        for j in 0..cty.len() {
            lhs = lhs.max((cty[j] / (s.d[j] * s.cost)).abs());
        }
        if lhs > CERTIFICATE_TOL * dy_norm {
            return false;
        }
        let mut support = 0.0;
        for i in 0..dy.len() {
            let (li, ui) = (f.l[i] / s.e[i], f.u[i] / s.e[i]);
            if dy[i] > 0.0 {
                if !ui.is_finite() {
                    if dy[i] > CERTIFICATE_TOL * dy_norm {
                        return false;
                    }
                } else {
                    support += ui * dy[i];
                }
            } else if dy[i] < 0.0 {
                if !li.is_finite() {
                    if -dy[i] > CERTIFICATE_TOL * dy_norm {
                        return false;
                    }
                } else {
                    support += li * dy[i];
                }
            }
        }
        support < -CERTIFICATE_TOL * dy_norm
    }
}

struct Termination {
    r_prim: f64,
    r_dual: f64,
    prim_norm: f64,
    dual_norm: f64,
    scaled_ratio: Option<f64>,
}

fn row_rho(f: &QpForm, rho: f64) -> Vec<f64> {
    (0..f.c.rows())
        .map(|i| {
            if !f.l[i].is_finite() && !f.u[i].is_finite() {
                RHO_LOOSE
            } else if f.u[i] - f.l[i] < 1e-10 {
                1e3 * rho
            } else {
                rho
            }
        })
        .collect()
}

fn factor_reduced(f: &QpForm, sigma: f64, rho: &[f64]) -> Option<Cholesky> {
    let n = f.dim();
    let mut k = f.p.clone();
    for j in 0..n {
        k[(j, j)] += sigma;
    }
    for r in 0..f.c.rows() {
        k.add_outer(f.c.row(r), rho[r]);
    }
    Cholesky::factor(&k).ok()
}

/// Runs the engine. `confirm_infeasible` is consulted when the iterates look
/// primal infeasible; returning `false` disables further detection.
pub(crate) fn solve(
    form: &QpForm,
    settings: &SolverSettings,
    mut confirm_infeasible: Option<&mut dyn FnMut() -> bool>,
) -> Outcome {
    let n = form.dim();
    if n == 0 {
        return Outcome::Solved { x: Vec::new(), y: vec![0.0; form.c.rows()], iterations: 0 };
    }
    let scaled = Scaled::new(form);
    let mut engine = match Engine::new(&scaled, settings) {
        Some(e) => e,
        None => return Outcome::MaxIterations { x: vec![0.0; n], y: vec![0.0; form.c.rows()], iterations: 0 },
    };

    let mut eps = settings.polish_trigger;
    let mut best_prim = f64::INFINITY;
    let mut stagnant = 0usize;
    let mut last_polish = 0usize;

    for iter in 1..=settings.max_iterations {
        engine.step();

        if confirm_infeasible.is_some() {
            let rp = engine.scaled_primal();
            if rp > STAGNATION_LEVEL && rp > best_prim * (1.0 - 1e-4) {
                stagnant += 1;
            } else {
                stagnant = 0;
            }
            best_prim = best_prim.min(rp);
            if stagnant >= STAGNATION_WINDOW
                && (stagnant >= 4 * STAGNATION_WINDOW || engine.certificate_holds())
            {
                let confirmed = confirm_infeasible.as_mut().map(|f| f()).unwrap_or(false);
                if confirmed {
                    return Outcome::Infeasible { iterations: iter };
                }
                confirm_infeasible = None;
            }
        }

        if iter % settings.check_interval != 0 {
            continue;
        }
        let t = engine.termination();
        let converged = t.r_prim <= eps * (1.0 + t.prim_norm) && t.r_dual <= eps * (1.0 + t.dual_norm);
        let periodic = iter - last_polish >= settings.polish_interval;
        if converged || periodic {
            last_polish = iter;
            if let Some((x, y)) = polish(form, &scaled, &engine) {
                return Outcome::Solved { x, y, iterations: iter };
            }
            if converged {
                eps = (eps * 1e-2).max(1e-14);
            }
        }
        if iter % settings.rho_interval == 0 {
            if let Some(ratio) = t.scaled_ratio {
                engine.maybe_update_rho(ratio);
            }
        }
    }
    if let Some((x, y)) = polish(form, &scaled, &engine) {
        return Outcome::Solved { x, y, iterations: settings.max_iterations };
    }
    Outcome::MaxIterations {
        x: scaled.unscale_x(&engine.x),
        y: scaled.unscale_y(&engine.y),
        iterations: settings.max_iterations,
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum RowState {
    Free,
    Lower,
    Upper,
}

/// Primal-dual active-set refinement seeded from the ADMM iterate. Accepts
/// the result only if the unscaled KKT conditions hold to `POLISH_TOL`.
fn polish(orig: &QpForm, s: &Scaled, e: &Engine<'_>) -> Option<(Vec<f64>, Vec<f64>)> {
    let f = &s.form;
    let m = f.c.rows();
    let mut state: Vec<RowState> = (0..m)
        .map(|i| {
            if e.z[i] - f.l[i] < -e.y[i] {
                RowState::Lower
            } else if f.u[i] - e.z[i] < e.y[i] {
                RowState::Upper
            } else {
                RowState::Free
            }
        })
        .collect();

    let mut best: Option<(Vec<f64>, Vec<f64>, f64)> = None;
    for _ in 0..POLISH_MAX_PASSES {
        let (xs, ys) = solve_working_set(f, &state)?;
        let x = s.unscale_x(&xs);
        let y = s.unscale_y(&ys);
        let res = orig.residuals(&x, &y).max();
        if best.as_ref().map_or(true, |b| res < b.2) {
            best = Some((x, y, res));
        }
        if res <= super::POLISH_TOL {
            break;
        }
        let cx = f.c.mul_vec(&xs);
        let next: Vec<RowState> = (0..m)
            .map(|i| {
                if ys[i] + (cx[i] - f.u[i]) > 0.0 {
                    RowState::Upper
                } else if ys[i] + (cx[i] - f.l[i]) < 0.0 {
                    RowState::Lower
                } else {
                    RowState::Free
                }
            })
            .collect();
        if next == state {
            break;
        }
        state = next;
    }
    match best {
        Some((x, y, res)) if res <= super::POLISH_TOL => Some((x, y)),
        _ => None,
    }
}

/// Solves the equality-constrained QP with the active rows held at their
/// bounds. Linearly dependent active rows are dropped from the solve.
fn solve_working_set(f: &QpForm, state: &[RowState]) -> Option<(Vec<f64>, Vec<f64>)> {
    let n = f.dim();
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut rows: Vec<(usize, f64)> = Vec::new();
    for (i, st) in state.iter().enumerate() {
        let target = match st {
            RowState::Free => continue,
            RowState::Lower => f.l[i],
            RowState::Upper => f.u[i],
        };
        if !target.is_finite() {
            continue;
        }
        let row = f.c.row(i);
        let norm = sqrt(dot(row, row));
        if norm == 0.0 {
            continue;
        }
        let mut v: Vec<f64> = row.iter().map(|r| r / norm).collect();
        for _ in 0..2 {
            for b in &basis {
                let proj = dot(&v, b);
                axpy(-proj, b, &mut v);
            }
        }
        let rem = sqrt(dot(&v, &v));
        if rem < 1e-9 {
            continue;
        }
        for vi in v.iter_mut() {
            *vi /= rem;
        }
        basis.push(v);
        rows.push((i, target));
    }

    let w = rows.len();
    let dim = n + w;
    let mut k = Matrix::zeros(dim, dim);
    for i in 0..n {
        for j in 0..n {
            k[(i, j)] = f.p[(i, j)];
        }
    }
    for (a, &(ri, _)) in rows.iter().enumerate() {
        let row = f.c.row(ri);
        for j in 0..n {
            k[(n + a, j)] = row[j];
            k[(j, n + a)] = row[j];
        }
    }
    let mut rhs = vec![0.0; dim];
    for j in 0..n {
        rhs[j] = -f.q[j];
    }
    for (a, &(_, t)) in rows.iter().enumerate() {
        rhs[n + a] = t;
    }
    let lu = Lu::factor(&k)?;
    let mut sol = lu.solve(&rhs);
    for _ in 0..3 {
        let ks = k.mul_vec(&sol);
        let r: Vec<f64> = rhs.iter().zip(&ks).map(|(a, b)| a - b).collect();
        if norm_inf(&r) == 0.0 {
            break;
        }
        let corr = lu.solve(&r);
        for (s, c) in sol.iter_mut().zip(&corr) {
            *s += c;
        }
    }
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let x = sol[..n].to_vec();
    let mut y = vec![0.0; f.c.rows()];
    for (a, &(ri, _)) in rows.iter().enumerate() {
        y[ri] = sol[n + a];
    }
    Some((x, y))
}
