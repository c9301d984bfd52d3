//! Exact Bayesian baselines: conjugate linear regression, a tabulated
//! posterior over Fourier phases and a factorised bandit posterior.

use std::f64::consts::PI;

use crate::analysis::probe_grid;
use crate::error::{invalid, shape_err, Error, Result};
use crate::numerics::{cholesky_solve, Matrix};
use crate::tasks::{BanditStep, FourierTask};

/// Largest hypothesis grid the Fourier oracle will enumerate.
pub const MAX_HYPOTHESES: usize = 10_000_000;
pub const DEFAULT_PHASE_BINS: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub enum PosteriorMean {
    /// W̄, `Ny × Nx`.
    Linear(Matrix),
    /// ḡ on the probe grid.
    Function(Vec<f64>),
    /// Posterior probability that each arm is correct, `K_c × K_a`.
    Arms(Matrix),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSummary {
    pub mean: PosteriorMean,
    /// Number of observations conditioned on.
    pub observations: usize,
}

fn check_noise(noise_var: f64) -> Result<()> {
    if !(noise_var > 0.0) || !noise_var.is_finite() {
        return invalid(format!("noise variance must be > 0, got {noise_var}"));
    }
    Ok(())
}

/// Posterior precision `XᵀX + σ²I` for observations stored as rows of `x`.
pub fn linear_posterior_precision(x_obs: &Matrix, noise_var: f64) -> Result<Matrix> {
    check_noise(noise_var)?;
    let nx = x_obs.cols();
    let mut lambda = if x_obs.rows() == 0 {
        Matrix::zeros(nx, nx)
    } else {
        x_obs.t_matmul(x_obs)?
    };
    for i in 0..nx {
        lambda.set(i, i, lambda.get(i, i) + noise_var);
    }
    Ok(lambda)
}

/// Posterior mean of `W` under a `MN(0, I, I)` prior and Gaussian noise of
/// variance `noise_var`, given observations as rows of `x_obs` (t×Nx) and
/// `y_obs` (t×Ny).
pub fn bayes_linear_posterior(x_obs: &Matrix, y_obs: &Matrix, noise_var: f64) -> Result<PosteriorSummary> {
    if x_obs.rows() != y_obs.rows() {
        return shape_err(format!("{} inputs vs {} targets", x_obs.rows(), y_obs.rows()));
    }
    let t = x_obs.rows();
    let lambda = linear_posterior_precision(x_obs, noise_var)?;
    let mean = if t == 0 {
        Matrix::zeros(y_obs.cols(), x_obs.cols())
    } else {
        cholesky_solve(&lambda, &x_obs.t_matmul(y_obs)?)?.transpose()
    };
    Ok(PosteriorSummary {
        mean: PosteriorMean::Linear(mean),
        observations: t,
    })
}

/// Phase-bin centres `(j + ½)·2π/B`.
pub fn phase_bins(bins: usize) -> Vec<f64> {
    (0..bins).map(|j| (j as f64 + 0.5) * 2.0 * PI / bins as f64).collect()
}

/// Posterior over the phases of a Fourier series with known amplitudes,
/// tabulated on a grid of `B^K` phase hypotheses with a uniform prior.
///
/// Hypothesis index `Σ_k j_k B^k` holds phase bin `j_k` for mode `k + 1`.
/// Weights are kept as log-likelihoods and normalised on demand.
#[derive(Debug, Clone)]
pub struct FourierOracle {
    amplitudes: Vec<f64>,
    bins: usize,
    noise_var: f64,
    phases: Vec<f64>,
    log_w: Vec<f64>,
    observations: usize,
    // Scratch: g_φ(x) for every hypothesis.
    values: Vec<f64>,
}

impl FourierOracle {
    pub fn new(amplitudes: &[f64], bins: usize, noise_var: f64) -> Result<Self> {
        check_noise(noise_var)?;
        if bins == 0 || amplitudes.is_empty() {
            return invalid("Fourier oracle needs at least one mode and one bin");
        }
        if amplitudes.iter().any(|a| !a.is_finite()) {
            return invalid("amplitudes must be finite");
        }
        let size = u32::try_from(amplitudes.len())
            .ok()
            .and_then(|k| bins.checked_pow(k))
            .filter(|&n| n <= MAX_HYPOTHESES)
            .ok_or_else(|| {
                Error::Budget(format!(
                    "{bins}^{} phase hypotheses exceed the limit of {MAX_HYPOTHESES}",
                    amplitudes.len()
                ))
            })?;
        Ok(Self {
            amplitudes: amplitudes.to_vec(),
            bins,
            noise_var,
            phases: phase_bins(bins),
            log_w: vec![0.0; size],
            observations: 0,
            values: Vec::with_capacity(size),
        })
    }

    pub fn num_hypotheses(&self) -> usize {
        self.log_w.len()
    }

    pub fn observations(&self) -> usize {
        self.observations
    }

    /// Fill `values` with `g_φ(x)` for every hypothesis, one axis at a time.
    fn evaluate_all(&mut self, x: f64) {
        self.values.clear();
        self.values.push(0.0);
        for (k, a) in self.amplitudes.iter().enumerate() {
            let w = 2.0 * PI * (k + 1) as f64 * x;
            let table: Vec<f64> = self.phases.iter().map(|p| a * (w + p).sin()).collect();
            let prev = self.values.len();
            self.values.resize(prev * self.bins, 0.0);
            for j in (0..self.bins).rev() {
                for i in 0..prev {
                    self.values[j * prev + i] = self.values[i] + table[j];
                }
            }
        }
    }

    pub fn observe(&mut self, x: f64, y: f64) -> Result<()> {
        if !x.is_finite() || !y.is_finite() {
            return invalid("observation must be finite");
        }
        self.evaluate_all(x);
        let scale = 0.5 / self.noise_var;
        for (lw, g) in self.log_w.iter_mut().zip(&self.values) {
            let r = y - g;
            *lw -= scale * r * r;
        }
        self.observations += 1;
        Ok(())
    }

    /// Normalised posterior weights.
    pub fn weights(&self) -> Vec<f64> {
        let max = self.log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut w: Vec<f64> = self.log_w.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = w.iter().sum();
        for v in &mut w {
            *v /= z;
        }
        w
    }

    /// Per-mode marginal distributions over phase bins, `[k][j]`.
    pub fn marginals(&self) -> Vec<Vec<f64>> {
        let w = self.weights();
        let kk = self.amplitudes.len();
        let mut m = vec![vec![0.0; self.bins]; kk];
        let mut digits = vec![0usize; kk];
        for wi in &w {
            for (mk, &d) in m.iter_mut().zip(&digits) {
                mk[d] += wi;
            }
            for d in digits.iter_mut() {
                *d += 1;
                if *d < self.bins {
                    break;
                }
                *d = 0;
            }
        }
        m
    }

    /// Posterior mean function at each of `xs`. The mean is separable
    /// across modes, so only the phase marginals are needed.
    pub fn posterior_mean_at(&self, xs: &[f64]) -> Vec<f64> {
        let m = self.marginals();
        xs.iter()
            .map(|&x| {
                self.amplitudes
                    .iter()
                    .zip(&m)
                    .enumerate()
                    .map(|(k, (a, mk))| {
                        let w = 2.0 * PI * (k + 1) as f64 * x;
                        a * mk.iter().zip(&self.phases).map(|(p, phi)| p * (w + phi).sin()).sum::<f64>()
                    })
                    .sum()
            })
            .collect()
    }

    pub fn summary(&self) -> PosteriorSummary {
        PosteriorSummary {
            mean: PosteriorMean::Function(self.posterior_mean_at(&probe_grid())),
            observations: self.observations,
        }
    }
}

/// ḡ on the probe grid after conditioning on `observations`.
pub fn bayes_fourier_posterior_mean(
    observations: &[(f64, f64)],
    amplitudes: &[f64],
    bins: usize,
    noise_var: f64,
) -> Result<PosteriorSummary> {
    let mut oracle = FourierOracle::new(amplitudes, bins, noise_var)?;
    for &(x, y) in observations {
        oracle.observe(x, y)?;
    }
    Ok(oracle.summary())
}

/// A Fourier task whose phases sit on bin centres, as the tabulated oracle
/// assumes.
pub fn snap_to_bins(task: &FourierTask, bins: usize) -> Result<FourierTask> {
    let width = 2.0 * PI / bins as f64;
    let centres = phase_bins(bins);
    let phases = task
        .phases
        .iter()
        .map(|p| {
            let j = (p.rem_euclid(2.0 * PI) / width).floor() as usize;
            centres[j.min(bins - 1)]
        })
        .collect();
    FourierTask::new(task.amplitudes.clone(), phases, task.noise_std)
}

/// Factorised posterior over which arm is correct in each context, starting
/// uniform. Rewards must be 0 or 1.
pub fn bayes_bandit_posterior(
    history: &[BanditStep],
    num_contexts: usize,
    num_actions: usize,
    p_correct: f64,
    p_incorrect: f64,
) -> Result<PosteriorSummary> {
    for p in [p_correct, p_incorrect] {
        if !(0.0..=1.0).contains(&p) {
            return invalid(format!("reward probability {p} outside [0, 1]"));
        }
    }
    if num_contexts == 0 || num_actions == 0 {
        return invalid("bandit posterior needs contexts and actions");
    }
    let mut post = Matrix::from_fn(num_contexts, num_actions, |_, _| 1.0 / num_actions as f64);
    for s in history {
        if s.context >= num_contexts {
            return Err(Error::OutOfRange {
                what: "context",
                index: s.context,
                limit: num_contexts,
            });
        }
        if s.action >= num_actions {
            return Err(Error::OutOfRange {
                what: "action",
                index: s.action,
                limit: num_actions,
            });
        }
        let win = if s.reward == 1.0 {
            true
        } else if s.reward == 0.0 {
            false
        } else {
            return invalid(format!("bandit reward must be 0 or 1, got {}", s.reward));
        };
        let lik = |p: f64| if win { p } else { 1.0 - p };
        let row = post.row_mut(s.context);
        for (h, v) in row.iter_mut().enumerate() {
            *v *= if h == s.action { lik(p_correct) } else { lik(p_incorrect) };
        }
        let z: f64 = row.iter().sum();
        if !(z > 0.0) {
            return invalid("history has zero likelihood under the reward model");
        }
        for v in row.iter_mut() {
            *v /= z;
        }
    }
    Ok(PosteriorSummary {
        mean: PosteriorMean::Arms(post),
        observations: history.len(),
    })
}
