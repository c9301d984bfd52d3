use super::matrix::{check_finite, Matrix};
use super::rng::RngStream;
use crate::error::{invalid, shape_err, Error, Result};

/// I.i.d. `Normal(0, scale²)` entries.
pub fn sample_gaussian_matrix(
    rows: usize,
    cols: usize,
    scale: f64,
    rng: &mut RngStream,
) -> Result<Matrix> {
    if !(scale > 0.0) || !scale.is_finite() {
        return invalid(format!("gaussian matrix scale must be > 0, got {scale}"));
    }
    Ok(Matrix::from_fn(rows, cols, |_, _| scale * rng.normal()))
}

/// Solve `min_W Σ_n ‖y_n − W x_n‖²` for samples stored as rows of `x` (N×Nx)
/// and `y` (N×Ny). Returns `W` as Ny×Nx.
///
/// Householder QR on `x`; a pivot below `1e-12 · max|R_jj|` is reported as a
/// singular system rather than producing a meaningless fit.
pub fn least_squares(x: &Matrix, y: &Matrix) -> Result<Matrix> {
    let (n, nx) = x.shape();
    if y.rows() != n {
        return shape_err(format!("{} input rows vs {} target rows", n, y.rows()));
    }
    if n < nx || nx == 0 {
        return Err(Error::Singular(format!(
            "{n} samples cannot determine {nx} input dimensions"
        )));
    }
    check_finite(x, "least-squares inputs")?;
    check_finite(y, "least-squares targets")?;
    let ny = y.cols();
    let mut r = x.clone();
    let mut qty = y.clone();

    for k in 0..nx {
        let norm = (k..n).map(|i| r.get(i, k).powi(2)).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let alpha = if r.get(k, k) > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = (k..n).map(|i| r.get(i, k)).collect();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|a| a * a).sum();
        if vnorm2 == 0.0 {
            continue;
        }
        for j in k..nx {
            let dot: f64 = v.iter().enumerate().map(|(o, vi)| vi * r.get(k + o, j)).sum();
            let f = 2.0 * dot / vnorm2;
            for (o, vi) in v.iter().enumerate() {
                r.set(k + o, j, r.get(k + o, j) - f * vi);
            }
        }
        for j in 0..ny {
            let dot: f64 = v.iter().enumerate().map(|(o, vi)| vi * qty.get(k + o, j)).sum();
            let f = 2.0 * dot / vnorm2;
            for (o, vi) in v.iter().enumerate() {
                qty.set(k + o, j, qty.get(k + o, j) - f * vi);
            }
        }
    }

    let diag_max = (0..nx).map(|k| r.get(k, k).abs()).fold(0.0, f64::max);
    if diag_max == 0.0 || (0..nx).any(|k| r.get(k, k).abs() <= 1e-12 * diag_max) {
        return Err(Error::Singular("input matrix is rank deficient".into()));
    }

    // Back substitution: R B = Qᵀy, B is Nx×Ny and W = Bᵀ.
    let mut b = Matrix::zeros(nx, ny);
    for j in 0..ny {
        for k in (0..nx).rev() {
            let mut acc = qty.get(k, j);
            for l in k + 1..nx {
                acc -= r.get(k, l) * b.get(l, j);
            }
            b.set(k, j, acc / r.get(k, k));
        }
    }
    Ok(b.transpose())
}

/// Solve `A X = B` for symmetric positive-definite `A` by Cholesky.
pub fn cholesky_solve(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    let n = a.rows();
    if a.cols() != n || b.rows() != n {
        return shape_err(format!("cholesky_solve {:?} with rhs {:?}", a.shape(), b.shape()));
    }
    let mut l = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= l.get(i, k) * l.get(j, k);
            }
            if i == j {
                if !(s > 0.0) {
                    return Err(Error::Singular("matrix is not positive definite".into()));
                }
                l.set(i, i, s.sqrt());
            } else {
                l.set(i, j, s / l.get(j, j));
            }
        }
    }
    let m = b.cols();
    let mut x = b.clone();
    for c in 0..m {
        for i in 0..n {
            let mut s = x.get(i, c);
            for k in 0..i {
                s -= l.get(i, k) * x.get(k, c);
            }
            x.set(i, c, s / l.get(i, i));
        }
        for i in (0..n).rev() {
            let mut s = x.get(i, c);
            for k in i + 1..n {
                s -= l.get(k, i) * x.get(k, c);
            }
            x.set(i, c, s / l.get(i, i));
        }
    }
    Ok(x)
}
