//! Dual active-set method (Goldfarb–Idnani) for strictly convex dense
//! problems in [`QpForm`] shape.
//!
//! Starts at the unconstrained minimizer and adds one violated constraint at
//! a time, dropping constraints whose multipliers would turn negative. The
//! factorization kept is `JᵀN = [R; 0]` with `JᵀGJ = I`, so every step is a
//! few Givens rotations. Degenerate problems with a large flat subspace,
//! which stall first-order iterations, are handled exactly.

use alloc::vec;
use alloc::vec::Vec;

use super::admm::QpForm;
use crate::linalg::{dot, norm2, norm_inf, Cholesky, Matrix};

/// `‖d₂‖² ≤ DEPENDENT·‖d‖²` marks a normal as dependent on the active ones.
const DEPENDENT: f64 = 1e-24;
const VIOLATION: f64 = 1e-13;

pub(crate) enum DualOutcome {
    Solved { x: Vec<f64>, y: Vec<f64>, iterations: usize },
    Infeasible { iterations: usize },
    /// Factorization failed or the iteration cap was hit.
    Failed,
}

struct Constraint {
    row: usize,
    /// `+1` for `c·x ≥ l`, `-1` for `c·x ≤ u` (stored as `-c·x ≥ -u`).
    sign: f64,
    b: f64,
    equality: bool,
    norm: f64,
}

struct State<'a> {
    form: &'a QpForm,
    cons: Vec<Constraint>,
    /// Row `j` holds column `j` of `J`.
    jt: Matrix,
    r: Matrix,
    active: Vec<usize>,
    u: Vec<f64>,
    x: Vec<f64>,
}

impl State<'_> {
    fn slack(&self, k: usize) -> f64 {
        let c = &self.cons[k];
        c.sign * dot(self.form.c.row(c.row), &self.x) - c.b
    }

    fn normal(&self, k: usize) -> Vec<f64> {
        let c = &self.cons[k];
        self.form.c.row(c.row).iter().map(|v| c.sign * v).collect()
    }

    fn rotate_j(&mut self, a: usize, b: usize, cs: f64, sn: f64) {
        let n = self.x.len();
        for i in 0..n {
            let (ja, jb) = (self.jt[(a, i)], self.jt[(b, i)]);
            self.jt[(a, i)] = cs * ja + sn * jb;
            self.jt[(b, i)] = -sn * ja + cs * jb;
        }
    }

    /// Removes the active constraint at position `pos` and restores the
    /// triangular factor.
    fn drop_active(&mut self, pos: usize) {
        let q = self.active.len();
        for j in pos + 1..q {
            for i in 0..=j {
                self.r[(i, j - 1)] = self.r[(i, j)];
            }
        }
        for i in 0..q {
            self.r[(i, q - 1)] = 0.0;
        }
        for i in pos..q - 1 {
            let (a, b) = (self.r[(i, i)], self.r[(i + 1, i)]);
            let h = libm::hypot(a, b);
            if h == 0.0 {
                continue;
            }
            let (cs, sn) = (a / h, b / h);
            for j in i..q - 1 {
                let (ra, rb) = (self.r[(i, j)], self.r[(i + 1, j)]);
                self.r[(i, j)] = cs * ra + sn * rb;
                self.r[(i + 1, j)] = -sn * ra + cs * rb;
            }
            self.rotate_j(i, i + 1, cs, sn);
        }
        self.active.remove(pos);
        self.u.remove(pos);
    }

    /// Appends a constraint whose transformed normal is `d`.
    fn add_active(&mut self, k: usize, mut d: Vec<f64>, multiplier: f64) {
        let q = self.active.len();
        let n = d.len();
        for j in (q + 1..n).rev() {
            if d[j] == 0.0 {
                continue;
            }
            let h = libm::hypot(d[j - 1], d[j]);
            let (cs, sn) = (d[j - 1] / h, d[j] / h);
            d[j - 1] = h;
            d[j] = 0.0;
            self.rotate_j(j - 1, j, cs, sn);
        }
        for i in 0..=q {
            self.r[(i, q)] = d[i];
        }
        self.active.push(k);
        self.u.push(multiplier);
    }

    /// Makes constraint `k` active, moving `x` and the multipliers along the
    /// way. Returns `false` when no step can satisfy it.
    fn enforce(&mut self, k: usize) -> bool {
        let n = self.x.len();
        let np = self.normal(k);
        let mut up = 0.0;
        loop {
            let q = self.active.len();
            let d: Vec<f64> = (0..n).map(|j| dot(self.jt.row(j), &np)).collect();
            let d2: f64 = d[q..].iter().map(|v| v * v).sum();
            let dependent = d2 <= DEPENDENT * dot(&d, &d);
            // Dual direction r = R⁻¹ d₁.
            let mut rdir = d[..q].to_vec();
            for i in (0..q).rev() {
                let mut s = rdir[i];
                for j in i + 1..q {
                    s -= self.r[(i, j)] * rdir[j];
                }
                rdir[i] = s / self.r[(i, i)];
            }
            let mut t1 = f64::INFINITY;
            let mut drop = None;
            for i in 0..q {
                if !self.cons[self.active[i]].equality && rdir[i] > 0.0 {
                    let t = self.u[i] / rdir[i];
                    if t < t1 {
                        t1 = t;
                        drop = Some(i);
                    }
                }
            }
            let s = self.slack(k);
            let eq = self.cons[k].equality;
            let t2 = if dependent { f64::INFINITY } else { -s / d2 };
            let t = t1.min(t2);
            if t == f64::INFINITY {
                return false;
            }
            if !dependent {
                let mut z = vec![0.0; n];
                for j in q..n {
                    if d[j] != 0.0 {
                        for (zi, ji) in z.iter_mut().zip(self.jt.row(j)) {
                            *zi += d[j] * ji;
                        }
                    }
                }
                for (xi, zi) in self.x.iter_mut().zip(&z) {
                    *xi += t * zi;
                }
            }
            for i in 0..q {
                self.u[i] -= t * rdir[i];
            }
            up += t;
            if t == t2 {
                self.add_active(k, d, up);
                return true;
            }
            let pos = drop.expect("a finite partial step names a constraint");
            self.drop_active(pos);
            if eq && self.slack(k).abs() <= VIOLATION * (1.0 + self.cons[k].b.abs()) {
                return true;
            }
        }
    }
}

/// Solves `form` exactly when `P` is positive definite. The multipliers use
/// the engine's sign convention (`Px + q + Cᵀy = 0`).
pub(crate) fn solve(form: &QpForm, max_iterations: usize) -> DualOutcome {
    let n = form.dim();
    let m = form.c.rows();
    let chol = match Cholesky::factor(&form.p) {
        Ok(c) => c,
        Err(_) => return DualOutcome::Failed,
    };
    // Jᵀ = L⁻¹, built row by row by forward substitution.
    let l = chol.lower();
    let mut jt = Matrix::zeros(n, n);
    for col in 0..n {
        let mut e = vec![0.0; n];
        e[col] = 1.0;
        for i in col..n {
            let mut s = e[i];
            for k in col..i {
                s -= l[(i, k)] * e[k];
            }
            e[i] = s / l[(i, i)];
        }
        for i in col..n {
            jt[(i, col)] = e[i];
        }
    }
    let mut x: Vec<f64> = form.q.iter().map(|v| -v).collect();
    chol.solve_in_place(&mut x);
    if !x.iter().all(|v| v.is_finite()) {
        return DualOutcome::Failed;
    }

    let mut cons = Vec::new();
    for i in 0..m {
        let norm = norm2(form.c.row(i));
        if norm == 0.0 {
            continue;
        }
        let (l, u) = (form.l[i], form.u[i]);
        if l == u {
            cons.push(Constraint { row: i, sign: 1.0, b: l, equality: true, norm });
            continue;
        }
        if l.is_finite() {
            cons.push(Constraint { row: i, sign: 1.0, b: l, equality: false, norm });
        }
        if u.is_finite() {
            cons.push(Constraint { row: i, sign: -1.0, b: -u, equality: false, norm });
        }
    }
    let mut st = State { form, cons, jt, r: Matrix::zeros(n, n), active: Vec::new(), u: Vec::new(), x };

    let mut iterations = 0;
    for k in 0..st.cons.len() {
        if !st.cons[k].equality {
            continue;
        }
        if st.slack(k) > 0.0 {
            st.cons[k].sign = -1.0;
            st.cons[k].b = -st.cons[k].b;
        }
        iterations += 1;
        if !st.enforce(k) {
            if st.slack(k).abs() <= VIOLATION * (1.0 + st.cons[k].b.abs()) * 1e3 {
                continue;
            }
            return DualOutcome::Infeasible { iterations };
        }
    }
    loop {
        let scale = 1.0 + norm_inf(&st.x);
        let mut worst = None;
        let mut worst_v = 0.0;
        for k in 0..st.cons.len() {
            let c = &st.cons[k];
            if c.equality || st.active.contains(&k) {
                continue;
            }
            let v = st.slack(k) / c.norm;
            if v < -VIOLATION * (scale + c.b.abs() / c.norm) && v < worst_v {
                worst_v = v;
                worst = Some(k);
            }
        }
        let Some(k) = worst else { break };
        iterations += 1;
        if iterations > max_iterations {
            return DualOutcome::Failed;
        }
        if !st.enforce(k) {
            return DualOutcome::Infeasible { iterations };
        }
    }

    let mut y = vec![0.0; m];
    for (pos, &k) in st.active.iter().enumerate() {
        let c = &st.cons[k];
        y[c.row] -= c.sign * st.u[pos];
    }
    if !st.x.iter().chain(&y).all(|v| v.is_finite()) {
        return DualOutcome::Failed;
    }
    DualOutcome::Solved { x: st.x, y, iterations }
}
