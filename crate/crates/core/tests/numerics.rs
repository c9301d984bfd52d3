use metadyn::numerics::{dft_real, idft_real, least_squares, svd, Matrix, RngStream};
use proptest::prelude::*;

fn naive_dft(x: &[f64]) -> Vec<(f64, f64)> {
    let n = x.len();
    (0..=n / 2)
        .map(|k| {
            x.iter().enumerate().fold((0.0, 0.0), |(re, im), (j, v)| {
                let a = -2.0 * std::f64::consts::PI * (k * j) as f64 / n as f64;
                (re + v * a.cos(), im + v * a.sin())
            })
        })
        .map(|(re, im)| (re / n as f64, im / n as f64))
        .collect()
}

fn arb_matrix() -> impl Strategy<Value = Matrix> {
    (1usize..=5, 1usize..=5).prop_flat_map(|(r, c)| {
        prop::collection::vec(-10.0f64..10.0, r * c).prop_map(move |d| Matrix::from_vec(r, c, d).unwrap())
    })
}

fn orthonormality_error(m: &Matrix) -> f64 {
    m.t_matmul(m).unwrap().max_abs_diff(&Matrix::identity(m.cols()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn svd_reconstructs_with_orthonormal_factors(m in arb_matrix()) {
        let f = svd(&m).unwrap();
        let scale = m.max_abs().max(1.0);
        prop_assert!(f.reconstruct().max_abs_diff(&m) < 1e-10 * scale);
        prop_assert!(orthonormality_error(&f.u) < 1e-10);
        prop_assert!(orthonormality_error(&f.v) < 1e-10);
        prop_assert!(f.s.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!(f.s.iter().all(|&s| s >= 0.0));
    }

    #[test]
    fn prescribed_spectrum_is_recovered(seed in any::<u64>(), n in 1usize..=5) {
        let mut rng = RngStream::new(seed, 9);
        let q1 = svd(&Matrix::from_fn(n, n, |_, _| rng.normal())).unwrap().u;
        let q2 = svd(&Matrix::from_fn(n, n, |_, _| rng.normal())).unwrap().v;
        let mut s: Vec<f64> = (0..n).map(|_| rng.uniform_range(0.01, 5.0)).collect();
        let m = Matrix::from_fn(n, n, |i, j| (0..n).map(|k| q1.get(i, k) * s[k] * q2.get(j, k)).sum());
        s.sort_by(|a, b| b.total_cmp(a));
        let f = svd(&m).unwrap();
        for (a, b) in f.s.iter().zip(&s) {
            prop_assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn dft_matches_naive_sum_and_inverts(x in prop::collection::vec(-5.0f64..5.0, 1..30).prop_map(|mut v| { if v.len() % 2 == 1 { v.push(0.0); } v })) {
        let g = dft_real(&x).unwrap();
        let naive = naive_dft(&x);
        prop_assert_eq!(g.len(), x.len() / 2 + 1);
        for (c, (re, im)) in g.coefficients.iter().zip(&naive) {
            prop_assert!((c.re - re).abs() < 1e-12 && (c.im - im).abs() < 1e-12);
        }
        let back = idft_real(&g).unwrap();
        for (a, b) in back.iter().zip(&x) {
            prop_assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn rng_streams_are_reproducible(seed in any::<u64>(), stream in any::<u64>(), sub in any::<u64>()) {
        let mut a = RngStream::new(seed, stream).substream(sub);
        let mut b = RngStream::new(seed, stream).substream(sub);
        for _ in 0..64 {
            prop_assert_eq!(a.normal().to_bits(), b.normal().to_bits());
            prop_assert_eq!(a.below(17), b.below(17));
        }
    }
}

#[test]
fn distinct_streams_are_uncorrelated() {
    let n = 20_000;
    let mut a = RngStream::new(1, 0);
    let mut b = RngStream::new(1, 1);
    let (xs, ys): (Vec<f64>, Vec<f64>) = (0..n).map(|_| (a.normal(), b.normal())).unzip();
    let corr = xs.iter().zip(&ys).map(|(x, y)| x * y).sum::<f64>() / n as f64;
    assert!(corr.abs() < 4.0 / (n as f64).sqrt(), "correlation {corr}");
    let mut c = RngStream::new(1, 0).substream(1);
    let mut d = RngStream::new(1, 0).substream(2);
    let same = (0..1000).filter(|_| c.below(1 << 30) == d.below(1 << 30)).count();
    assert!(same < 3);
}

#[test]
fn normal_moments() {
    let mut rng = RngStream::new(2, 0);
    let n = 100_000;
    let xs: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
    assert!(mean.abs() < 0.015, "mean {mean}");
    assert!((var - 1.0).abs() < 0.02, "variance {var}");
}

#[test]
fn least_squares_solves_overdetermined_system() {
    let mut rng = RngStream::new(3, 0);
    let x = Matrix::from_fn(30, 4, |_, _| rng.normal());
    let w = Matrix::from_fn(4, 2, |_, _| rng.normal());
    let y = x.matmul(&w).unwrap();
    let w_hat = least_squares(&x, &y).unwrap();
    assert!(w_hat.max_abs_diff(&w.transpose()) < 1e-10);
}
