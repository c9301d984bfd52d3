//! Turns raw traces into progress measurements: effective spectra, Fourier
//! projections, context ordering, steps-to-threshold and replica aggregates.

pub mod csvio;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Error, Result};
use crate::numerics::{dft_real, ComplexSpectrum, Matrix};
use crate::tasks::{eval_fourier, FourierTask};

/// Cutoffs reported by default in threshold tables.
pub const DEFAULT_CUTOFFS: [f64; 5] = [0.5, 0.6, 0.7, 0.8, 0.9];

/// Points in the probe grid.
pub const PROBE_POINTS: usize = 40;

/// `diag(Uᵀ Ŵ V)`.
pub fn effective_spectrum(w_hat: &Matrix, u: &Matrix, v: &Matrix) -> Result<Vec<f64>> {
    if u.rows() != w_hat.rows() || v.rows() != w_hat.cols() || u.cols() != v.cols() {
        return shape_err(format!(
            "Ŵ {:?} against U {:?} and V {:?}",
            w_hat.shape(),
            u.shape(),
            v.shape()
        ));
    }
    let p = u.cols();
    let wv = w_hat.matmul(v)?;
    Ok((0..p)
        .map(|k| (0..u.rows()).map(|i| u.get(i, k) * wv.get(i, k)).sum())
        .collect())
}

/// `ŝ_k / s_k`, or `None` where the target value is zero.
pub fn spectrum_proportions(s_hat: &[f64], s: &[f64]) -> Result<Vec<Option<f64>>> {
    if s_hat.len() != s.len() {
        return shape_err("effective and target spectra differ in length");
    }
    Ok(s_hat
        .iter()
        .zip(s)
        .map(|(a, b)| if *b > 0.0 { Some(a / b) } else { None })
        .collect())
}

/// 41 equispaced points on `[-0.5, 0.5]` with the last dropped, shifted to
/// zero mean.
pub fn probe_grid() -> Vec<f64> {
    let n = PROBE_POINTS;
    let raw: Vec<f64> = (0..n).map(|j| -0.5 + j as f64 / n as f64).collect();
    let mean = raw.iter().sum::<f64>() / n as f64;
    raw.into_iter().map(|x| x - mean).collect()
}

/// Spectrum of a task evaluated on the probe grid.
pub fn task_spectrum(task: &FourierTask) -> Result<ComplexSpectrum> {
    let ys: Vec<f64> = probe_grid().iter().map(|&x| eval_fourier(task, x)).collect();
    dft_real(&ys)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionKind {
    /// `Re(ĝ_k conj(g_k)) / |g_k|²`.
    #[default]
    Phase,
    /// `|ĝ_k| / |g_k|`, ignoring phase.
    Energy,
}

/// Projection of learned Fourier coefficients onto the true ones at the
/// given indices.
pub fn fourier_projection(
    g_hat: &ComplexSpectrum,
    g: &ComplexSpectrum,
    modes: &[usize],
    kind: ProjectionKind,
) -> Result<Vec<f64>> {
    if g_hat.len() != g.len() {
        return shape_err(format!("spectra of length {} and {}", g_hat.len(), g.len()));
    }
    modes
        .iter()
        .map(|&k| {
            if k >= g.len() {
                return Err(Error::OutOfRange {
                    what: "Fourier index",
                    index: k,
                    limit: g.len(),
                });
            }
            let (a, b) = (g_hat.coefficients[k], g.coefficients[k]);
            let norm = b.norm_sqr();
            if norm <= 1e-24 {
                return Err(Error::UndefinedMode(k));
            }
            Ok(match kind {
                ProjectionKind::Phase => (a * b.conj()).re / norm,
                ProjectionKind::Energy => a.norm() / norm.sqrt(),
            })
        })
        .collect()
}

/// Indices `k ≥ 1` where the true spectrum is non-zero.
pub fn active_modes(g: &ComplexSpectrum) -> Vec<usize> {
    (1..g.len()).filter(|&k| g.coefficients[k].norm_sqr() > 1e-24).collect()
}

/// First recorded step with `q > cutoff`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Threshold {
    Reached(usize),
    Unreached,
}

impl Threshold {
    pub fn step(self) -> Option<usize> {
        match self {
            Threshold::Reached(s) => Some(s),
            Threshold::Unreached => None,
        }
    }
}

impl std::fmt::Display for Threshold {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Threshold::Reached(s) => write!(f, "{s}"),
            Threshold::Unreached => f.write_str("unreached"),
        }
    }
}

/// No interpolation between snapshots.
pub fn steps_to_threshold(steps: &[usize], q: &[f64], cutoff: f64) -> Result<Threshold> {
    if steps.len() != q.len() {
        return shape_err("steps and values differ in length");
    }
    if !(cutoff > 0.0 && cutoff < 1.0) {
        return invalid(format!("cutoff must lie in (0, 1), got {cutoff}"));
    }
    Ok(steps
        .iter()
        .zip(q)
        .find(|(_, v)| **v > cutoff)
        .map_or(Threshold::Unreached, |(s, _)| Threshold::Reached(*s)))
}

/// Per (mode, cutoff) thresholds. Modes with an undefined proportion carry
/// `None` for every cutoff.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdTable {
    pub cutoffs: Vec<f64>,
    /// `entries[k][j]` for mode k and cutoff j.
    pub entries: Vec<Vec<Option<Threshold>>>,
}

impl ThresholdTable {
    /// `curves[k]` is the progress of mode k at each of `steps`; `None`
    /// marks a mode excluded from the table.
    pub fn build(steps: &[usize], curves: &[Option<Vec<f64>>], cutoffs: &[f64]) -> Result<Self> {
        let entries = curves
            .iter()
            .map(|curve| {
                cutoffs
                    .iter()
                    .map(|&c| match curve {
                        Some(q) => steps_to_threshold(steps, q, c).map(Some),
                        None => Ok(None),
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            cutoffs: cutoffs.to_vec(),
            entries,
        })
    }
}

/// `q·p_correct + (1 − q)·p_incorrect`.
pub fn bandit_expected_reward(q: f64, p_correct: f64, p_incorrect: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&q) {
        return invalid(format!("q must lie in [0, 1], got {q}"));
    }
    Ok(q * p_correct + (1.0 - q) * p_incorrect)
}

/// Contexts ordered by time-averaged `q_c`, first-learned first.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedContexts {
    /// `order[k]` is the nominal context learned k-th.
    pub order: Vec<usize>,
    /// `q[t][k]` in rank order.
    pub q: Vec<Vec<f64>>,
}

/// Rank contexts by the duration-weighted time average of `q[t][c]`.
/// `weights[t]` is the span of time snapshot t stands for; pass `None` for
/// uniformly spaced records. Ties keep nominal order.
pub fn rank_order_contexts(q: &[Vec<f64>], weights: Option<&[f64]>) -> Result<RankedContexts> {
    let Some(first) = q.first() else {
        return invalid("empty context trace");
    };
    let kc = first.len();
    if q.iter().any(|row| row.len() != kc) {
        return shape_err("context trace rows differ in width");
    }
    if let Some(w) = weights {
        if w.len() != q.len() {
            return shape_err("weights and trace differ in length");
        }
    }
    let avg: Vec<f64> = (0..kc)
        .map(|c| {
            let (num, den) = q.iter().enumerate().fold((0.0, 0.0), |(n, d), (t, row)| {
                let w = weights.map_or(1.0, |w| w[t]);
                (n + w * row[c], d + w)
            });
            num / den
        })
        .collect();
    let mut order: Vec<usize> = (0..kc).collect();
    order.sort_by(|&a, &b| avg[b].total_cmp(&avg[a]));
    let ranked = q.iter().map(|row| order.iter().map(|&c| row[c]).collect()).collect();
    Ok(RankedContexts { order, q: ranked })
}

/// Duration each snapshot represents: the gap to the next one, 1 for the last.
pub fn snapshot_weights(steps: &[usize]) -> Vec<f64> {
    let mut w: Vec<f64> = steps.windows(2).map(|p| (p[1] - p[0]) as f64).collect();
    if !steps.is_empty() {
        w.push(1.0);
    }
    w
}

/// Mean and standard error across replicas, per point.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub n: usize,
    pub mean: Vec<Vec<f64>>,
    /// Absent for a single replica.
    pub stderr: Option<Vec<Vec<f64>>>,
}

/// Elementwise mean of equally shaped curves.
pub fn mean_curves(curves: &[Vec<Vec<f64>>]) -> Result<Vec<Vec<f64>>> {
    Ok(aggregate(curves)?.mean)
}

/// `replicas[r][t][k]`; episodes are averaged within a replica beforehand.
/// Standard error is the sample standard deviation over √n.
pub fn aggregate(replicas: &[Vec<Vec<f64>>]) -> Result<Aggregate> {
    let Some(first) = replicas.first() else {
        return invalid("nothing to aggregate");
    };
    let shape: Vec<usize> = first.iter().map(Vec::len).collect();
    for r in replicas {
        if r.iter().map(Vec::len).collect::<Vec<_>>() != shape {
            return shape_err("replicas have mixed shapes");
        }
    }
    let n = replicas.len();
    let nf = n as f64;
    let mut mean: Vec<Vec<f64>> = shape.iter().map(|&k| vec![0.0; k]).collect();
    for r in replicas {
        for (mrow, rrow) in mean.iter_mut().zip(r) {
            for (m, v) in mrow.iter_mut().zip(rrow) {
                *m += v;
            }
        }
    }
    for row in &mut mean {
        for m in row.iter_mut() {
            *m /= nf;
        }
    }
    let stderr = (n >= 2).then(|| {
        let mut var: Vec<Vec<f64>> = shape.iter().map(|&k| vec![0.0; k]).collect();
        for r in replicas {
            for ((vrow, rrow), mrow) in var.iter_mut().zip(r).zip(&mean) {
                for ((v, x), m) in vrow.iter_mut().zip(rrow).zip(mrow) {
                    *v += (x - m) * (x - m);
                }
            }
        }
        var.into_iter()
            .map(|row| row.into_iter().map(|v| (v / (nf - 1.0)).sqrt() / nf.sqrt()).collect())
            .collect()
    });
    Ok(Aggregate { n, mean, stderr })
}

/// Median of the finite values, `None` when there are none.
pub fn median(values: &[f64]) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{svd, Complex64};

    #[test]
    fn spectrum_of_target_and_scaled() {
        let w = Matrix::from_rows(&[vec![1.0, 2.0], vec![-0.5, 0.3]]).unwrap();
        let f = svd(&w).unwrap();
        let s = effective_spectrum(&w, &f.u, &f.v).unwrap();
        for (a, b) in s.iter().zip(&f.s) {
            assert!((a - b).abs() < 1e-12);
        }
        let half = effective_spectrum(&w.scale(0.5), &f.u, &f.v).unwrap();
        for (a, b) in half.iter().zip(&f.s) {
            assert!((a - 0.5 * b).abs() < 1e-12);
        }
        assert_eq!(effective_spectrum(&Matrix::zeros(2, 2), &f.u, &f.v).unwrap(), vec![0.0, 0.0]);
        assert!(effective_spectrum(&Matrix::zeros(3, 2), &f.u, &f.v).is_err());
    }

    #[test]
    fn proportions_mark_zero_modes() {
        let q = spectrum_proportions(&[1.5, 0.2], &[3.0, 0.0]).unwrap();
        assert_eq!(q, vec![Some(0.5), None]);
    }

    #[test]
    fn grid_properties() {
        let g = probe_grid();
        assert_eq!(g.len(), 40);
        assert!(g.iter().sum::<f64>().abs() < 1e-15);
        for w in g.windows(2) {
            assert!((w[1] - w[0] - 1.0 / 40.0).abs() < 1e-15);
        }
    }

    #[test]
    fn projection_algebra() {
        let g = ComplexSpectrum {
            coefficients: vec![Complex64::new(0.0, 0.0), Complex64::new(0.3, -0.4), Complex64::new(0.0, 0.0)],
            signal_len: 4,
        };
        let neg = ComplexSpectrum {
            coefficients: g.coefficients.iter().map(|c| -c).collect(),
            signal_len: 4,
        };
        let zero = ComplexSpectrum {
            coefficients: vec![Complex64::new(0.0, 0.0); 3],
            signal_len: 4,
        };
        let p = |a: &ComplexSpectrum, kind| fourier_projection(a, &g, &[1], kind).unwrap()[0];
        assert!((p(&g, ProjectionKind::Phase) - 1.0).abs() < 1e-15);
        assert!((p(&neg, ProjectionKind::Phase) + 1.0).abs() < 1e-15);
        assert_eq!(p(&zero, ProjectionKind::Phase), 0.0);
        assert!((p(&neg, ProjectionKind::Energy) - 1.0).abs() < 1e-15);
        assert!(matches!(
            fourier_projection(&g, &g, &[2], ProjectionKind::Phase),
            Err(Error::UndefinedMode(2))
        ));
        assert_eq!(active_modes(&g), vec![1]);
    }

    #[test]
    fn threshold_conventions() {
        let steps = [0, 1, 2, 5, 10];
        assert_eq!(steps_to_threshold(&steps, &[0.9, 0.1, 0.1, 0.1, 0.1], 0.5).unwrap(), Threshold::Reached(0));
        assert_eq!(steps_to_threshold(&steps, &[0.0, 0.2, 0.4, 0.5, 0.7], 0.5).unwrap(), Threshold::Reached(10));
        assert_eq!(steps_to_threshold(&steps, &[0.0; 5], 0.5).unwrap(), Threshold::Unreached);
        assert!(steps_to_threshold(&steps, &[0.0; 5], 1.0).is_err());
        assert_eq!(Threshold::Unreached.to_string(), "unreached");
    }

    #[test]
    fn table_excludes_undefined_modes() {
        let t = ThresholdTable::build(&[0, 1], &[Some(vec![0.0, 1.0]), None], &[0.5, 0.9]).unwrap();
        assert_eq!(t.entries[0], vec![Some(Threshold::Reached(1)), Some(Threshold::Reached(1))]);
        assert_eq!(t.entries[1], vec![None, None]);
    }

    #[test]
    fn expected_reward_values() {
        assert!((bandit_expected_reward(1.0, 0.8, 0.2).unwrap() - 0.8).abs() < 1e-15);
        assert!((bandit_expected_reward(0.0, 0.8, 0.2).unwrap() - 0.2).abs() < 1e-15);
        assert!((bandit_expected_reward(0.2, 0.8, 0.2).unwrap() - 0.32).abs() < 1e-15);
        assert!(bandit_expected_reward(1.5, 0.8, 0.2).is_err());
    }

    #[test]
    fn ranking() {
        let q = vec![vec![0.9, 0.3, 0.6]];
        let r = rank_order_contexts(&q, None).unwrap();
        assert_eq!(r.order, vec![0, 2, 1]);
        assert_eq!(r.q[0], vec![0.9, 0.6, 0.3]);
        let tie = rank_order_contexts(&[vec![0.5; 3]], None).unwrap();
        assert_eq!(tie.order, vec![0, 1, 2]);
        let swapped = rank_order_contexts(&[vec![0.6, 0.9, 0.3]], None).unwrap();
        assert_eq!(swapped.q, r.q);
    }

    #[test]
    fn weighted_ranking_uses_durations() {
        // Context 1 leads over the long first interval.
        let q = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        let steps = [0, 100];
        let w = snapshot_weights(&steps);
        assert_eq!(w, vec![100.0, 1.0]);
        assert_eq!(rank_order_contexts(&q, Some(&w)).unwrap().order, vec![1, 0]);
    }

    #[test]
    fn aggregate_formulae() {
        let a = aggregate(&[vec![vec![0.0]], vec![vec![1.0]]]).unwrap();
        assert_eq!(a.mean, vec![vec![0.5]]);
        assert!((a.stderr.unwrap()[0][0] - 0.5).abs() < 1e-15);
        let same = aggregate(&[vec![vec![2.0, 3.0]], vec![vec![2.0, 3.0]]]).unwrap();
        assert_eq!(same.stderr.unwrap(), vec![vec![0.0, 0.0]]);
        let one = aggregate(&[vec![vec![2.0]]]).unwrap();
        assert!(one.stderr.is_none());
        assert!(aggregate(&[vec![vec![1.0]], vec![vec![1.0, 2.0]]]).is_err());
    }

    #[test]
    fn median_ignores_nonfinite() {
        assert_eq!(median(&[3.0, f64::INFINITY, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[1.0, 4.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }
}
