use metadyn::numerics::{Matrix, RngStream};
use metadyn::oracles::*;
use metadyn::tasks::{eval_fourier, BanditStep, FourierTask};
use proptest::prelude::*;

mod common;
use common::{joint_enumeration, ridge};

fn linear_mean(s: PosteriorSummary) -> Matrix {
    match s.mean {
        PosteriorMean::Linear(w) => w,
        other => panic!("expected a linear posterior, got {other:?}"),
    }
}

fn arms(s: PosteriorSummary) -> Matrix {
    match s.mean {
        PosteriorMean::Arms(m) => m,
        other => panic!("expected arm posteriors, got {other:?}"),
    }
}

#[test]
fn linear_posterior_equals_ridge_regression() {
    let mut rng = RngStream::new(21, 0);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let (t, nx, ny) = (rng.below(16), 1 + rng.below(5), 1 + rng.below(5));
        let var = 10f64.powf(rng.uniform_range(-3.0, 1.0));
        let x = Matrix::from_fn(t, nx, |_, _| rng.normal());
        let y = Matrix::from_fn(t, ny, |_, _| rng.normal());
        let w = linear_mean(bayes_linear_posterior(&x, &y, var).unwrap());
        let oracle = if t == 0 { Matrix::zeros(ny, nx) } else { ridge(&x, &y, var) };
        worst = worst.max(w.max_abs_diff(&oracle) / oracle.max_abs().max(1.0));
    }
    assert!(worst < 1e-10, "worst error {worst:e}");
}

#[test]
fn noiseless_full_rank_interpolates() {
    let mut rng = RngStream::new(22, 0);
    let w = Matrix::from_fn(3, 4, |_, _| rng.normal());
    let x = Matrix::from_fn(4, 4, |_, _| rng.normal());
    let y = x.matmul_t(&w).unwrap();
    let got = linear_mean(bayes_linear_posterior(&x, &y, 1e-12).unwrap());
    assert!(got.max_abs_diff(&w) < 1e-6);
}

#[test]
fn fourier_weights_normalised_and_bin_centre_recovered() {
    let bins = 16;
    let phases = phase_bins(bins);
    let task = FourierTask::new(vec![1.0], vec![phases[5]], 0.0).unwrap();
    let mut oracle = FourierOracle::new(&[1.0], bins, 1e-4).unwrap();
    let mut rng = RngStream::new(23, 0);
    for _ in 0..3 {
        let x = rng.uniform_range(-0.5, 0.5);
        oracle.observe(x, eval_fourier(&task, x)).unwrap();
        assert!((oracle.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
    assert!(oracle.weights()[5] > 0.99);
}

#[test]
fn fourier_prior_mean_is_zero_and_weights_uniform() {
    let oracle = FourierOracle::new(&[1.0, 1.0, 1.0], 8, 0.1).unwrap();
    let w = oracle.weights();
    assert!(w.iter().all(|v| (v - 1.0 / 512.0).abs() < 1e-15));
    let PosteriorMean::Function(g) = oracle.summary().mean else { panic!() };
    assert!(g.iter().all(|v| v.abs() < 1e-12));
}

#[test]
fn fourier_budget_is_enforced() {
    assert!(FourierOracle::new(&[1.0; 6], 16, 0.1).is_err());
    assert!(FourierOracle::new(&[1.0; 5], 16, 0.1).is_ok());
}

#[test]
fn bandit_single_observation_arithmetic() {
    let h = [BanditStep { context: 0, action: 2, reward: 1.0 }];
    let p = arms(bayes_bandit_posterior(&h, 5, 5, 0.8, 0.2).unwrap());
    assert!((p.get(0, 2) - 0.5).abs() < 1e-15);
    for c in 1..5 {
        assert!(p.row(c).iter().all(|v| (v - 0.2).abs() < 1e-15));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn linear_posterior_is_permutation_invariant(seed in any::<u64>(), t in 1usize..12) {
        let mut rng = RngStream::new(seed, 0);
        let x = Matrix::from_fn(t, 3, |_, _| rng.normal());
        let y = Matrix::from_fn(t, 2, |_, _| rng.normal());
        let perm = rng.permutation(t);
        let xp = Matrix::from_fn(t, 3, |i, j| x.get(perm[i], j));
        let yp = Matrix::from_fn(t, 2, |i, j| y.get(perm[i], j));
        let a = linear_mean(bayes_linear_posterior(&x, &y, 0.1).unwrap());
        let b = linear_mean(bayes_linear_posterior(&xp, &yp, 0.1).unwrap());
        prop_assert!(a.max_abs_diff(&b) < 1e-12);
    }

    #[test]
    fn bandit_posterior_factorises_exactly(seed in any::<u64>(), n in 0usize..25) {
        let (kc, ka, pc, pi) = (3, 3, 0.8, 0.2);
        let mut rng = RngStream::new(seed, 0);
        let history: Vec<BanditStep> = (0..n)
            .map(|_| BanditStep { context: rng.below(kc), action: rng.below(ka), reward: if rng.bernoulli(0.5) { 1.0 } else { 0.0 } })
            .collect();
        let got = arms(bayes_bandit_posterior(&history, kc, ka, pc, pi).unwrap());
        prop_assert!(got.max_abs_diff(&joint_enumeration(&history, kc, ka, pc, pi)) < 1e-12);
        for c in 0..kc {
            prop_assert!((got.row(c).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let reversed: Vec<BanditStep> = history.iter().rev().copied().collect();
        let rev = arms(bayes_bandit_posterior(&reversed, kc, ka, pc, pi).unwrap());
        prop_assert!(rev.max_abs_diff(&got) < 1e-12);
    }

    #[test]
    fn fourier_posterior_is_permutation_invariant(seed in any::<u64>()) {
        let mut rng = RngStream::new(seed, 0);
        let obs: Vec<(f64, f64)> = (0..6).map(|_| (rng.uniform_range(-0.5, 0.5), rng.normal())).collect();
        let mut rev = obs.clone();
        rev.reverse();
        let a = bayes_fourier_posterior_mean(&obs, &[1.0, 0.5], 8, 0.3).unwrap();
        let b = bayes_fourier_posterior_mean(&rev, &[1.0, 0.5], 8, 0.3).unwrap();
        let (PosteriorMean::Function(a), PosteriorMean::Function(b)) = (a.mean, b.mean) else { panic!() };
        for (u, v) in a.iter().zip(&b) {
            prop_assert!((u - v).abs() < 1e-12);
        }
    }
}
