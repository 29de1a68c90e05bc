//! Reference oracles shared by the integration and acceptance suites.
//!
//! Everything here is deliberately independent of the crate's own solver and
//! linear algebra: its own Gauss-Jordan inverse, a dual projected-gradient QP
//! solver, and brute-force vertex enumeration for feasibility.

#![allow(dead_code)]

use lossforge_core::linalg::Matrix;
use lossforge_core::trainer::Dataset;
use lossforge_core::{Hypercube, Observation};
use lossforge_core::numopt::TIKHONOV;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Standard normal via Box-Muller.
pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.random::<f64>().max(1e-300);
    let u2: f64 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Inverse by Gauss-Jordan elimination with partial pivoting.
pub fn invert(a: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut row = r.clone();
            row.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            row
        })
        .collect();
    for k in 0..n {
        let p = (k..n).max_by(|&i, &j| m[i][k].abs().partial_cmp(&m[j][k].abs()).unwrap())?;
        if m[p][k].abs() < 1e-300 {
            return None;
        }
        m.swap(k, p);
        let piv = m[k][k];
        for v in m[k].iter_mut() {
            *v /= piv;
        }
        for i in 0..n {
            if i != k {
                let f = m[i][k];
                if f != 0.0 {
                    for j in 0..2 * n {
                        m[i][j] -= f * m[k][j];
                    }
                }
            }
        }
    }
    Some(m.into_iter().map(|r| r[n..].to_vec()).collect())
}

/// Solves a square system, `None` if (numerically) singular.
pub fn solve_square(a: &[Vec<f64>], b: &[f64]) -> Option<Vec<f64>> {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a.iter().zip(b).map(|(r, &bi)| {
        let mut row = r.clone();
        row.push(bi);
        row
    }).collect();
    let scale = a.iter().flatten().fold(0.0f64, |s, v| s.max(v.abs())).max(1.0);
    for k in 0..n {
        let p = (k..n).max_by(|&i, &j| m[i][k].abs().partial_cmp(&m[j][k].abs()).unwrap())?;
        if m[p][k].abs() < 1e-10 * scale {
            return None;
        }
        m.swap(k, p);
        for i in k + 1..n {
            let f = m[i][k] / m[k][k];
            for j in k..=n {
                m[i][j] -= f * m[k][j];
            }
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|j| m[i][j] * x[j]).sum();
        x[i] = (m[i][n] - s) / m[i][i];
    }
    Some(x)
}

/// A random convex QP in plain `Vec` form.
#[derive(Clone, Debug)]
pub struct RandomQp {
    pub p: Vec<Vec<f64>>,
    pub q: Vec<f64>,
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    /// `b` was built around an interior point, so the problem is feasible.
    pub feasible_by_construction: bool,
}

impl RandomQp {
    /// `d` variables, `c` inequalities. `finite_box` forces finite bounds.
    pub fn generate(seed: u64, d: usize, c: usize, finite_box: bool, feasible: bool) -> Self {
        let mut r = rng(seed);
        let rank = r.random_range(1..=d);
        let bm: Vec<Vec<f64>> = (0..rank).map(|_| (0..d).map(|_| normal(&mut r)).collect()).collect();
        let ridge = 0.05 + r.random::<f64>();
        let p: Vec<Vec<f64>> = (0..d)
            .map(|i| {
                (0..d)
                    .map(|j| bm.iter().map(|row| row[i] * row[j]).sum::<f64>() + if i == j { ridge } else { 0.0 })
                    .collect()
            })
            .collect();
        let q: Vec<f64> = (0..d).map(|_| 3.0 * normal(&mut r)).collect();
        let mut lo = Vec::with_capacity(d);
        let mut hi = Vec::with_capacity(d);
        for _ in 0..d {
            let center = normal(&mut r);
            let half = 0.5 + 2.0 * r.random::<f64>();
            let kind = if finite_box { 0 } else { r.random_range(0..4) };
            match kind {
                0 => {
                    lo.push(center - half);
                    hi.push(center + half);
                }
                1 => {
                    lo.push(center - half);
                    hi.push(f64::INFINITY);
                }
                2 => {
                    lo.push(f64::NEG_INFINITY);
                    hi.push(center + half);
                }
                _ => {
                    lo.push(f64::NEG_INFINITY);
                    hi.push(f64::INFINITY);
                }
            }
        }
        let x0: Vec<f64> = (0..d)
            .map(|j| match (lo[j].is_finite(), hi[j].is_finite()) {
                (true, true) => lo[j] + (hi[j] - lo[j]) * r.random::<f64>(),
                (true, false) => lo[j] + r.random::<f64>(),
                (false, true) => hi[j] - r.random::<f64>(),
                _ => normal(&mut r),
            })
            .collect();
        let a: Vec<Vec<f64>> = (0..c).map(|_| (0..d).map(|_| normal(&mut r)).collect()).collect();
        let b: Vec<f64> = a
            .iter()
            .map(|row| {
                if feasible {
                    row.iter().zip(&x0).map(|(u, v)| u * v).sum::<f64>() + r.random::<f64>()
                } else {
                    normal(&mut r) - 0.5
                }
            })
            .collect();
        RandomQp { p, q, a, b, lo, hi, feasible_by_construction: feasible }
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    pub fn p_matrix(&self) -> Matrix {
        Matrix::from_rows(&self.p, self.dim()).unwrap()
    }

    pub fn a_matrix(&self) -> Matrix {
        Matrix::from_rows(&self.a, self.dim()).unwrap()
    }

    /// All constraints as rows of `G x ≤ h`, bounds included.
    pub fn stacked(&self) -> (Vec<Vec<f64>>, Vec<f64>) {
        let d = self.dim();
        let mut g = self.a.clone();
        let mut h = self.b.clone();
        for j in 0..d {
            if self.hi[j].is_finite() {
                let mut e = vec![0.0; d];
                e[j] = 1.0;
                g.push(e);
                h.push(self.hi[j]);
            }
            if self.lo[j].is_finite() {
                let mut e = vec![0.0; d];
                e[j] = -1.0;
                g.push(e);
                h.push(-self.lo[j]);
            }
        }
        (g, h)
    }
}

/// Projected gradient on the dual of the Tikhonov-regularized problem:
/// `min ½μᵀMμ + cᵀμ, μ ≥ 0` with `M = G H⁻¹ Gᵀ`, `c = G H⁻¹ q + h`, and
/// `x(μ) = −H⁻¹(q + Gᵀμ)`. FISTA steps with gradient-based restarts.
pub fn reference_qp(qp: &RandomQp, max_iter: usize) -> Vec<f64> {
    let d = qp.dim();
    let mut h_mat = qp.p.clone();
    for j in 0..d {
        h_mat[j][j] += TIKHONOV;
    }
    let hinv = invert(&h_mat).expect("P + δI is invertible");
    let (g, h) = qp.stacked();
    let r = g.len();
    let hinv_q: Vec<f64> = (0..d).map(|i| (0..d).map(|j| hinv[i][j] * qp.q[j]).sum()).collect();
    let x_of = |mu: &[f64]| -> Vec<f64> {
        let mut v = qp.q.clone();
        for (k, row) in g.iter().enumerate() {
            for j in 0..d {
                v[j] += row[j] * mu[k];
            }
        }
        (0..d).map(|i| -(0..d).map(|j| hinv[i][j] * v[j]).sum::<f64>()).collect()
    };
    if r == 0 {
        return x_of(&[]);
    }
    let ginv: Vec<Vec<f64>> = g.iter().map(|row| (0..d).map(|j| (0..d).map(|k| row[k] * hinv[k][j]).sum()).collect()).collect();
    let m: Vec<Vec<f64>> = (0..r).map(|i| (0..r).map(|k| (0..d).map(|j| ginv[i][j] * g[k][j]).sum()).collect()).collect();
    let c: Vec<f64> = (0..r).map(|i| g[i].iter().zip(&hinv_q).map(|(a, b)| a * b).sum::<f64>() + h[i]).collect();

    // Lipschitz constant by power iteration. A fixed all-ones start can sit in
    // the null space (paired bound rows cancel), so start from varied entries.
    let mut v: Vec<f64> = (0..r).map(|i| 1.0 + (i as f64 * 0.7548776662).fract()).collect();
    let mut lip = 0.0;
    for _ in 0..200 {
        let w: Vec<f64> = (0..r).map(|i| (0..r).map(|k| m[i][k] * v[k]).sum()).collect();
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            break;
        }
        lip = norm / v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v = w.iter().map(|x| x / norm).collect();
    }
    let step = 1.0 / (1.01 * lip.max(1e-12));
    let c_scale = c.iter().fold(1.0f64, |s, v| s.max(v.abs()));

    let mut mu = vec![0.0; r];
    let mut yv = mu.clone();
    let mut t = 1.0f64;
    let grad = |y: &[f64]| -> Vec<f64> { (0..r).map(|i| (0..r).map(|k| m[i][k] * y[k]).sum::<f64>() + c[i]).collect() };
    for it in 0..max_iter {
        let gy = grad(&yv);
        let next: Vec<f64> = (0..r).map(|i| (yv[i] - step * gy[i]).max(0.0)).collect();
        let restart = gy.iter().zip(next.iter().zip(&mu)).map(|(gi, (n, o))| gi * (n - o)).sum::<f64>() > 0.0;
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        if restart {
            t = 1.0;
            yv = next.clone();
        } else {
            yv = (0..r).map(|i| next[i] + (t - 1.0) / t_next * (next[i] - mu[i])).collect();
            t = t_next;
        }
        mu = next;
        if it % 25 == 0 {
            // Natural residual of the dual: ‖μ − max(0, μ − ∇)‖∞.
            let gm = grad(&mu);
            let worst = (0..r).fold(0.0f64, |s, i| s.max((mu[i] - (mu[i] - gm[i]).max(0.0)).abs()));
            if worst < 1e-13 * c_scale {
                break;
            }
        }
    }
    x_of(&mu)
}

/// Feasibility of `G x ≤ h` (bounds included, all finite) by enumerating
/// every basis of `d` rows and testing its vertex.
pub fn vertex_feasible(qp: &RandomQp, tol: f64) -> bool {
    let d = qp.dim();
    assert!(qp.lo.iter().chain(&qp.hi).all(|v| v.is_finite()), "vertex enumeration needs a finite box");
    let (g, h) = qp.stacked();
    let r = g.len();
    let mut idx: Vec<usize> = (0..d).collect();
    loop {
        let sub_a: Vec<Vec<f64>> = idx.iter().map(|&i| g[i].clone()).collect();
        let sub_b: Vec<f64> = idx.iter().map(|&i| h[i]).collect();
        if let Some(x) = solve_square(&sub_a, &sub_b) {
            let ok = g.iter().zip(&h).all(|(row, hi)| row.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>() <= hi + tol);
            if ok {
                return true;
            }
        }
        // next combination
        let mut k = d;
        loop {
            if k == 0 {
                return false;
            }
            k -= 1;
            if idx[k] < r - d + k {
                idx[k] += 1;
                for j in k + 1..d {
                    idx[j] = idx[j - 1] + 1;
                }
                break;
            }
        }
    }
}

/// Central finite differences, written independently of the crate's helper.
pub fn central_difference(f: &dyn Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|j| {
            let orig = xp[j];
            xp[j] = orig + h;
            let fp = f(&xp);
            xp[j] = orig - h;
            let fm = f(&xp);
            xp[j] = orig;
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0f64, |s, (x, y)| s.max((x - y).abs()))
}

/// A zero-cost instance: every observation satisfies `λ*·φᵢ = α* vᵢ` and,
/// with gradients, `Jᵢλ* = α* gᵢ`. The last coordinate of `F` is pinned to
/// `λ*`'s, which fixes the scale of the solution ray.
#[derive(Clone, Debug)]
pub struct PerfectLinear {
    pub lambda: Vec<f64>,
    pub alpha: f64,
    pub observations: Vec<Observation>,
    pub feasible: Hypercube,
}

pub fn perfect_linear(seed: u64, k: usize, n: usize, m: usize, with_gradients: bool) -> PerfectLinear {
    let mut r = rng(seed);
    let lambda: Vec<f64> = (0..k).map(|_| 0.1 + 0.9 * r.random::<f64>()).collect();
    let alpha = 0.5 + 1.5 * r.random::<f64>();
    let observations = (0..m)
        .map(|i| {
            let fv: Vec<f64> = (0..k).map(|_| 0.1 + 1.9 * r.random::<f64>()).collect();
            let ve = fv.iter().zip(&lambda).map(|(a, b)| a * b).sum::<f64>() / alpha;
            let o = Observation::new(ve, fv, format!("m{i}")).unwrap();
            if with_gradients {
                let jac: Vec<Vec<f64>> = (0..n).map(|_| (0..k).map(|_| normal(&mut r)).collect()).collect();
                let g: Vec<f64> = jac.iter().map(|row| row.iter().zip(&lambda).map(|(a, b)| a * b).sum::<f64>() / alpha).collect();
                o.with_gradients(g, Matrix::from_rows(&jac, k).unwrap()).unwrap()
            } else {
                o
            }
        })
        .collect();
    let feasible = Hypercube::uniform(k, 0.0, 2.0).unwrap().pinned(k - 1, lambda[k - 1]).unwrap();
    PerfectLinear { lambda, alpha, observations, feasible }
}

/// Random `(ve, fv)` pairs over a random box; half the boxes pin a coordinate
/// to 1 so that the zero vector is excluded.
pub fn random_finite(seed: u64, k: usize, m: usize) -> (Vec<Observation>, Hypercube) {
    let mut r = rng(seed);
    let obs = (0..m)
        .map(|i| {
            let fv: Vec<f64> = (0..k).map(|_| normal(&mut r)).collect();
            Observation::new(r.random::<f64>(), fv, format!("m{i}")).unwrap()
        })
        .collect();
    let lo: Vec<f64> = (0..k).map(|_| -1.0 + r.random::<f64>()).collect();
    let hi: Vec<f64> = lo.iter().map(|l| l + 0.2 + 1.5 * r.random::<f64>()).collect();
    let mut f = Hypercube::new(lo, hi).unwrap();
    if r.random::<bool>() {
        f = f.pinned(r.random_range(0..k), 1.0).unwrap();
    }
    (obs, f)
}

/// Gaussian inputs with labels drawn uniformly at random.
pub fn random_dataset(seed: u64, n: usize, d: usize, classes: usize) -> Dataset {
    let mut r = rng(seed);
    let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| normal(&mut r)).collect()).collect();
    let y = (0..n).map(|_| r.random_range(0..classes)).collect();
    Dataset::new(Matrix::from_rows(&rows, d).unwrap(), y, classes).unwrap()
}

/// Labels cycle through the classes, so every class appears equally often
/// when `n` is a multiple of `classes`.
pub fn balanced_dataset(seed: u64, n: usize, d: usize, classes: usize) -> Dataset {
    let mut r = rng(seed);
    let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| normal(&mut r)).collect()).collect();
    Dataset::new(Matrix::from_rows(&rows, d).unwrap(), (0..n).map(|i| i % classes).collect(), classes).unwrap()
}

pub fn random_theta(r: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * normal(r)).collect()
}

/// `|a − b| ≤ tol · max(|a|, |b|, floor)` elementwise.
pub fn close_rel(a: &[f64], b: &[f64], tol: f64, floor: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * x.abs().max(y.abs()).max(floor))
}
