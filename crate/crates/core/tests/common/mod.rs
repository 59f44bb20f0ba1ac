//! Independent oracles shared by the integration tests. Nothing here calls
//! into the solver paths it is used to check.
#![allow(dead_code)]

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Entropic OT value `<pi,C> + eps <pi, log pi>` by plain (not log-domain)
/// Sinkhorn scaling run to `tol` in L1 marginal error.
pub fn plain_sinkhorn(mu: &[f64], nu: &[f64], c: &Array2<f64>, eps: f64, tol: f64) -> (f64, Array2<f64>) {
    let n = mu.len();
    let k = c.mapv(|x| (-x / eps).exp());
    let mut u = vec![1.0; n];
    let mut v = vec![1.0; n];
    for _ in 0..200_000 {
        for i in 0..n {
            let s: f64 = (0..n).map(|j| k[[i, j]] * v[j]).sum();
            u[i] = if mu[i] > 0.0 { mu[i] / s } else { 0.0 };
        }
        for j in 0..n {
            let s: f64 = (0..n).map(|i| k[[i, j]] * u[i]).sum();
            v[j] = if nu[j] > 0.0 { nu[j] / s } else { 0.0 };
        }
        let err: f64 = (0..n).map(|i| ((0..n).map(|j| u[i] * k[[i, j]] * v[j]).sum::<f64>() - mu[i]).abs()).sum();
        if err < tol {
            break;
        }
    }
    let plan = Array2::from_shape_fn((n, n), |(i, j)| u[i] * k[[i, j]] * v[j]);
    (objective(&plan, c, eps), plan)
}

pub fn objective(plan: &Array2<f64>, c: &Array2<f64>, eps: f64) -> f64 {
    plan.iter().zip(c.iter()).map(|(&p, &cc)| if p > 0.0 { p * cc + eps * p * p.ln() } else { 0.0 }).sum()
}

/// N = 2: every coupling is ((t, mu0 - t), (nu0 - t, 1 - mu0 - nu0 + t)).
/// Grid search over the feasible segment followed by a finer local grid.
pub fn two_point_grid(mu: [f64; 2], nu: [f64; 2], c: &Array2<f64>, eps: f64) -> f64 {
    let lo = (mu[0] + nu[0] - 1.0).max(0.0);
    let hi = mu[0].min(nu[0]);
    let eval = |t: f64| {
        let p = ndarray::array![[t, mu[0] - t], [nu[0] - t, 1.0 - mu[0] - nu[0] + t]].mapv(|x: f64| x.max(0.0));
        objective(&p, c, eps)
    };
    let mut best = (f64::INFINITY, lo);
    let steps = 100_000;
    for s in 0..=steps {
        let t = lo + (hi - lo) * s as f64 / steps as f64;
        let v = eval(t);
        if v < best.0 {
            best = (v, t);
        }
    }
    let width = (hi - lo) / steps as f64;
    let (a, b) = ((best.1 - width).max(lo), (best.1 + width).min(hi));
    for s in 0..=10_000 {
        let t = a + (b - a) * s as f64 / 10_000.0;
        best.0 = best.0.min(eval(t));
    }
    best.0
}

pub fn random_simplex(rng: &mut impl Rng, n: usize, zero_prob: f64) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| if rng.random::<f64>() < zero_prob { 0.0 } else { rng.random::<f64>() + 0.01 }).collect();
        let s: f64 = v.iter().sum();
        if s > 0.0 {
            return v.into_iter().map(|x| x / s).collect();
        }
    }
}

/// Squared Euclidean distances between random points, scaled to max 1.
pub fn random_cost(rng: &mut impl Rng, n: usize, dim: usize) -> Array2<f64> {
    let pts = Array2::from_shape_fn((n, dim), |_| rng.random::<f64>());
    let mut c = Array2::from_shape_fn((n, n), |(i, j)| (0..dim).map(|d| (pts[[i, d]] - pts[[j, d]]).powi(2)).sum::<f64>());
    let max = c.iter().cloned().fold(0.0, f64::max);
    if max > 0.0 {
        c.mapv_inplace(|x| x / max);
    }
    c
}

/// Minimizes `obj` over the 2-simplex on a grid of the given step, then
/// refines around the best point with a 100x finer grid.
pub fn simplex3_grid(step: f64, obj: impl Fn([f64; 3]) -> f64) -> [f64; 3] {
    let n = (1.0 / step).round() as usize;
    let mut best = (f64::INFINITY, [0.0; 3]);
    for i in 0..=n {
        for j in 0..=(n - i) {
            let b = [i as f64 * step, j as f64 * step, (n - i - j) as f64 * step];
            let v = obj(b);
            if v < best.0 {
                best = (v, b);
            }
        }
    }
    let fine = step / 100.0;
    let center = best.1;
    for di in -150i32..=150 {
        for dj in -150i32..=150 {
            let b0 = center[0] + di as f64 * fine;
            let b1 = center[1] + dj as f64 * fine;
            let b2 = 1.0 - b0 - b1;
            if b0 < 0.0 || b1 < 0.0 || b2 < 0.0 {
                continue;
            }
            let v = obj([b0, b1, b2]);
            if v < best.0 {
                best = (v, [b0, b1, b2]);
            }
        }
    }
    best.1
}

pub fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

pub fn col(a: &Array1<f64>) -> Vec<f64> {
    a.to_vec()
}
