mod common;

use common::*;
use ndarray::{array, Array1, Array2, Axis};
use proptest::prelude::*;
use wig_core::embedding::CostMatrix;
use wig_core::transport::*;

fn cfg(eps: f64) -> SinkhornConfig<f64> {
    SinkhornConfig { epsilon: eps, max_iter: 100_000, tol: 1e-12, ..Default::default() }
}

fn hist(v: &[f64]) -> Histogram<f64> {
    Histogram::from_slice(v).unwrap()
}

fn line3() -> Array2<f64> {
    array![[0.0, 0.25, 1.0], [0.25, 0.0, 0.25], [1.0, 0.25, 0.0]]
}

#[test]
fn symmetric_two_point_matches_segment_grid() {
    let c = array![[0.0, 1.0], [1.0, 0.0]];
    let s = sinkhorn_distance(&hist(&[0.5, 0.5]), &hist(&[0.5, 0.5]), &CostMatrix::new(c.clone()).unwrap(), &cfg(0.1)).unwrap();
    // pi(t) = ((t, .5 - t), (.5 - t, t))
    let mut best = f64::INFINITY;
    for k in 0..=500_000 {
        let t = 0.5 * k as f64 / 500_000.0;
        best = best.min(objective(&array![[t, 0.5 - t], [0.5 - t, t]], &c, 0.1));
    }
    assert!((s.value - best).abs() < 1e-6, "{} vs {best}", s.value);
}

#[test]
fn matches_plain_scaling_oracle() {
    let mut r = rng(11);
    for trial in 0..40 {
        let n = 2 + trial % 6;
        let mu = random_simplex(&mut r, n, 0.2);
        let nu = random_simplex(&mut r, n, 0.2);
        let c = random_cost(&mut r, n, 2);
        let eps = [0.05, 0.1, 0.5][trial % 3];
        let (want, _) = plain_sinkhorn(&mu, &nu, &c, eps, 1e-13);
        let got = sinkhorn_distance(&hist(&mu), &hist(&nu), &CostMatrix::new(c).unwrap(), &cfg(eps)).unwrap();
        assert!(got.converged);
        assert!((got.value - want).abs() < 1e-9, "trial {trial}: {} vs {want}", got.value);
    }
}

#[test]
fn marginal_error_is_monotone() {
    let mut r = rng(5);
    for _ in 0..30 {
        let n = 6;
        let mu = random_simplex(&mut r, n, 0.1);
        let nu = random_simplex(&mut r, n, 0.1);
        let c = random_cost(&mut r, n, 3);
        let s = sinkhorn_distance(&hist(&mu), &hist(&nu), &CostMatrix::new(c).unwrap(), &cfg(0.05)).unwrap();
        for w in s.marginal_errors.windows(2).skip(1) {
            assert!(w[1] <= w[0] + 1e-12, "{:?}", s.marginal_errors);
        }
    }
}

#[test]
fn zero_mass_rows_are_exactly_zero() {
    let mu = hist(&[0.5, 0.0, 0.5]);
    let nu = hist(&[0.0, 0.3, 0.7]);
    let s = sinkhorn_distance(&mu, &nu, &CostMatrix::new(line3()).unwrap(), &cfg(0.1)).unwrap();
    assert!(s.plan.plan.row(1).iter().all(|&x| x == 0.0));
    assert!(s.plan.plan.column(0).iter().all(|&x| x == 0.0));
}

#[test]
fn barycenter_single_topic_and_identical_topics() {
    let c = CostMatrix::new(line3()).unwrap();
    let t = array![0.6, 0.3, 0.1];
    let conv = SinkhornConfig { epsilon: 0.1, max_iter: 5000, tol: 1e-12, ..Default::default() };
    let one = t.clone().insert_axis(Axis(1));
    let (b, _, ok) = sinkhorn_barycenter_converged(one.view(), array![1.0].view(), &c, &conv).unwrap();
    assert!(ok);
    assert!(l1(&col(b.mass()), &col(&t)) < 1e-6, "{:?}", b.mass());

    let three = Array2::from_shape_fn((3, 3), |(i, _)| t[i]);
    let (b, _, ok) = sinkhorn_barycenter_converged(three.view(), array![0.2, 0.5, 0.3].view(), &c, &conv).unwrap();
    assert!(ok);
    assert!(l1(&col(b.mass()), &col(&t)) < 1e-6, "{:?}", b.mass());
}

#[test]
fn debiased_barycenter_matches_simplex_grid() {
    let c = line3();
    let t1 = [0.8, 0.15, 0.05];
    let t2 = [0.1, 0.2, 0.7];
    let s = |a: &[f64], b: &[f64]| plain_sinkhorn(a, b, &c, 0.1, 1e-13).0;
    let want = simplex3_grid(1e-3, |b| 0.5 * s(&t1, &b) + 0.5 * s(&t2, &b) - 0.5 * s(&b, &b));
    let topics = Array2::from_shape_fn((3, 2), |(i, k)| if k == 0 { t1[i] } else { t2[i] });
    let conv = SinkhornConfig { epsilon: 0.1, max_iter: 20_000, tol: 1e-13, ..Default::default() };
    let (b, _, _) = sinkhorn_barycenter_converged(topics.view(), array![0.5, 0.5].view(), &CostMatrix::new(c.clone()).unwrap(), &conv).unwrap();
    assert!(l1(&col(b.mass()), &want) < 2e-3, "{:?} vs {want:?}", b.mass());
}

#[test]
fn entropic_barycenter_matches_simplex_grid() {
    let c = line3();
    let t1 = [0.8, 0.15, 0.05];
    let t2 = [0.1, 0.2, 0.7];
    let s = |a: &[f64], b: &[f64]| plain_sinkhorn(a, b, &c, 0.1, 1e-13).0;
    let want = simplex3_grid(1e-3, |b| 0.5 * s(&t1, &b) + 0.5 * s(&t2, &b));
    let topics = Array2::from_shape_fn((3, 2), |(i, k)| if k == 0 { t1[i] } else { t2[i] });
    let conv = SinkhornConfig { epsilon: 0.1, max_iter: 20_000, tol: 1e-13, barycenter: BarycenterKind::Entropic, ..Default::default() };
    let (b, _, _) = sinkhorn_barycenter_converged(topics.view(), array![0.5, 0.5].view(), &CostMatrix::new(c.clone()).unwrap(), &conv).unwrap();
    assert!(l1(&col(b.mass()), &want) < 2e-3, "{:?} vs {want:?}", b.mass());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn plan_marginals_are_feasible(seed in 0u64..10_000, n in 1usize..=16) {
        let mut r = rng(seed);
        let mu = random_simplex(&mut r, n, 0.15);
        let nu = random_simplex(&mut r, n, 0.15);
        let c = CostMatrix::new(random_cost(&mut r, n, 2)).unwrap();
        let s = sinkhorn_distance(&hist(&mu), &hist(&nu), &c, &cfg(0.1)).unwrap();
        prop_assert!(s.converged);
        prop_assert!(l1(&col(&s.plan.row_sums()), &mu) < 1e-6);
        prop_assert!(l1(&col(&s.plan.col_sums()), &nu) < 1e-6);
        prop_assert!(s.plan.plan.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn distance_is_symmetric_under_transpose(seed in 0u64..10_000, n in 1usize..=8) {
        let mut r = rng(seed);
        let mu = random_simplex(&mut r, n, 0.1);
        let nu = random_simplex(&mut r, n, 0.1);
        let c = CostMatrix::new(random_cost(&mut r, n, 2)).unwrap();
        let a = sinkhorn_distance(&hist(&mu), &hist(&nu), &c, &cfg(0.1)).unwrap();
        let b = sinkhorn_distance(&hist(&nu), &hist(&mu), &c.transposed(), &cfg(0.1)).unwrap();
        prop_assert!((a.value - b.value).abs() < 1e-9, "{} vs {}", a.value, b.value);
    }

    #[test]
    fn barycenter_is_lipschitz_in_weights(seed in 0u64..10_000) {
        let mut r = rng(seed);
        let n = 5;
        let k = 3;
        let c = CostMatrix::new(random_cost(&mut r, n, 2)).unwrap();
        let topics = Array2::from_shape_fn((n, k), |_| 0.0);
        let mut topics = topics;
        for j in 0..k {
            let t = random_simplex(&mut r, n, 0.0);
            topics.column_mut(j).assign(&Array1::from(t));
        }
        let w = Array1::from(random_simplex(&mut r, k, 0.0));
        let delta: f64 = 1e-4;
        let mut w2 = w.clone();
        let (i, j) = (0, 1);
        let moved: f64 = delta / 2.0;
        let moved = moved.min(w2[i]);
        w2[i] -= moved;
        w2[j] += moved;
        let sc = SinkhornConfig::<f64>::default();
        let a = sinkhorn_barycenter(topics.view(), w.view(), &c, &sc).unwrap();
        let b = sinkhorn_barycenter(topics.view(), w2.view(), &c, &sc).unwrap();
        prop_assert!(a.l1_distance(&b) <= 10.0 * delta);
    }

    #[test]
    fn permutation_equivariance(seed in 0u64..10_000, perm in Just((0..5usize).collect::<Vec<_>>()).prop_shuffle()) {
        let mut r = rng(seed);
        let n = 5;
        let c = random_cost(&mut r, n, 2);
        let mu = random_simplex(&mut r, n, 0.1);
        let nu = random_simplex(&mut r, n, 0.1);
        let pc = Array2::from_shape_fn((n, n), |(i, j)| c[[perm[i], perm[j]]]);
        let pmu: Vec<f64> = perm.iter().map(|&p| mu[p]).collect();
        let pnu: Vec<f64> = perm.iter().map(|&p| nu[p]).collect();
        let a = sinkhorn_distance(&hist(&mu), &hist(&nu), &CostMatrix::new(c.clone()).unwrap(), &cfg(0.1)).unwrap();
        let b = sinkhorn_distance(&hist(&pmu), &hist(&pnu), &CostMatrix::new(pc.clone()).unwrap(), &cfg(0.1)).unwrap();
        for i in 0..n {
            for j in 0..n {
                prop_assert!((b.plan.plan[[i, j]] - a.plan.plan[[perm[i], perm[j]]]).abs() < 1e-9);
            }
        }
        let topics = Array2::from_shape_fn((n, 2), |(i, k)| if k == 0 { mu[i] } else { nu[i] });
        let ptopics = Array2::from_shape_fn((n, 2), |(i, k)| topics[[perm[i], k]]);
        let w = array![0.3, 0.7];
        let sc = SinkhornConfig::<f64>::default();
        let ba = sinkhorn_barycenter(topics.view(), w.view(), &CostMatrix::new(c).unwrap(), &sc).unwrap();
        let bb = sinkhorn_barycenter(ptopics.view(), w.view(), &CostMatrix::new(pc).unwrap(), &sc).unwrap();
        for i in 0..n {
            prop_assert!((bb.mass()[i] - ba.mass()[perm[i]]).abs() < 1e-9);
        }
    }
}
