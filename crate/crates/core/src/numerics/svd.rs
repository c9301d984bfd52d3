//! Thin SVD by one-sided (Hestenes) Jacobi rotations.
//!
//! Meant for the small matrices the tasks use (at most 32 on a side). Output
//! singular values are descending; each left singular vector has its first
//! non-negligible entry positive, and the matching right vector is flipped
//! with it so that `u · diag(s) · vᵀ` is unchanged.

use super::matrix::{check_finite, Matrix};
use crate::error::{invalid, Result};

const MAX_DIM: usize = 32;
const MAX_SWEEPS: usize = 80;

#[derive(Debug, Clone)]
pub struct Svd {
    /// `rows × p` with orthonormal columns, `p = min(rows, cols)`.
    pub u: Matrix,
    pub s: Vec<f64>,
    /// `cols × p` with orthonormal columns.
    pub v: Matrix,
}

impl Svd {
    pub fn reconstruct(&self) -> Matrix {
        let us = Matrix::from_fn(self.u.rows(), self.s.len(), |i, j| self.u.get(i, j) * self.s[j]);
        us.matmul_t(&self.v).expect("svd factors are conformant")
    }
}

pub fn svd(m: &Matrix) -> Result<Svd> {
    check_finite(m, "svd input")?;
    if m.rows() > MAX_DIM || m.cols() > MAX_DIM {
        return invalid(format!(
            "svd supports at most {MAX_DIM}x{MAX_DIM}, got {}x{}",
            m.rows(),
            m.cols()
        ));
    }
    if m.rows() == 0 || m.cols() == 0 {
        return invalid("svd of an empty matrix");
    }
    if m.rows() >= m.cols() {
        Ok(jacobi_tall(m))
    } else {
        let t = jacobi_tall(&m.transpose());
        // mᵀ = U S Vᵀ  ⇒  m = V S Uᵀ; re-normalise signs on the new left factor.
        let mut out = Svd {
            u: t.v,
            s: t.s,
            v: t.u,
        };
        fix_signs(&mut out);
        Ok(out)
    }
}

/// Requires rows ≥ cols.
fn jacobi_tall(m: &Matrix) -> Svd {
    let (rows, n) = m.shape();
    // Work column-major: cols[j] is column j of the rotated matrix.
    let mut a: Vec<Vec<f64>> = (0..n).map(|j| m.col(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| (0..n).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();

    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha: f64 = a[p].iter().map(|x| x * x).sum();
                let beta: f64 = a[q].iter().map(|x| x * x).sum();
                let gamma: f64 = a[p].iter().zip(&a[q]).map(|(x, y)| x * y).sum();
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut a, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let mut order: Vec<(f64, usize)> = a
        .iter()
        .enumerate()
        .map(|(j, col)| (col.iter().map(|x| x * x).sum::<f64>().sqrt(), j))
        .collect();
    order.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));

    let s_max = order[0].0;
    let cutoff = s_max * 1e-14;
    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut s = Vec::with_capacity(n);
    let mut v_cols = Vec::with_capacity(n);
    let mut pending = Vec::new();
    for &(sigma, j) in &order {
        if sigma > cutoff && sigma > 0.0 {
            u_cols.push(a[j].iter().map(|x| x / sigma).collect());
            s.push(sigma);
        } else {
            pending.push(u_cols.len());
            u_cols.push(Vec::new());
            s.push(0.0);
        }
        v_cols.push(v[j].clone());
    }
    // Null directions: complete the left basis by Gram-Schmidt on unit vectors.
    for slot in pending {
        u_cols[slot] = complete_basis(&u_cols, rows);
    }

    let mut out = Svd {
        u: Matrix::from_fn(rows, n, |i, j| u_cols[j][i]),
        s,
        v: Matrix::from_fn(n, n, |i, j| v_cols[j][i]),
    };
    fix_signs(&mut out);
    out
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (left, right) = cols.split_at_mut(q);
    let (cp, cq) = (&mut left[p], &mut right[0]);
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let (xp, xq) = (*x, *y);
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

fn complete_basis(existing: &[Vec<f64>], dim: usize) -> Vec<f64> {
    let filled: Vec<&Vec<f64>> = existing.iter().filter(|c| !c.is_empty()).collect();
    let mut best: Option<Vec<f64>> = None;
    let mut best_norm = 0.0;
    for e in 0..dim {
        let mut cand: Vec<f64> = (0..dim).map(|i| if i == e { 1.0 } else { 0.0 }).collect();
        // Two passes of modified Gram-Schmidt for numerical orthogonality.
        for _ in 0..2 {
            for b in &filled {
                let dot: f64 = cand.iter().zip(b.iter()).map(|(x, y)| x * y).sum();
                for (x, y) in cand.iter_mut().zip(b.iter()) {
                    *x -= dot * y;
                }
            }
        }
        let norm = cand.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > best_norm {
            best_norm = norm;
            best = Some(cand);
        }
    }
    let v = best.expect("dim > 0");
    v.iter().map(|x| x / best_norm).collect()
}

fn fix_signs(svd: &mut Svd) {
    let (rows, p) = svd.u.shape();
    for j in 0..p {
        let lead = (0..rows)
            .map(|i| svd.u.get(i, j))
            .find(|x| x.abs() > 1e-12)
            .unwrap_or(0.0);
        if lead < 0.0 {
            for i in 0..rows {
                svd.u.set(i, j, -svd.u.get(i, j));
            }
            for i in 0..svd.v.rows() {
                svd.v.set(i, j, -svd.v.get(i, j));
            }
        }
    }
}
