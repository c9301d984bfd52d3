//! Procedural task families and their episodes: linear regression,
//! Fourier-series regression and contextual bandits.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Error, Result};
use crate::numerics::{sample_gaussian_matrix, svd, Matrix, RngStream};

/// Additive observation noise used by the linear experiments.
pub const DEFAULT_NOISE_STD: f64 = 0.01;

/// `y = W x + ε`, `ε ~ N(0, noise_std² I)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearTask {
    pub w: Matrix,
    pub noise_std: f64,
}

impl LinearTask {
    pub fn new(w: Matrix, noise_std: f64) -> Result<Self> {
        let t = Self { w, noise_std };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.w.is_finite() {
            return invalid("task matrix has non-finite entries");
        }
        if !(self.noise_std >= 0.0) || !self.noise_std.is_finite() {
            return invalid(format!("noise_std must be ≥ 0, got {}", self.noise_std));
        }
        Ok(())
    }

    pub fn nx(&self) -> usize {
        self.w.cols()
    }

    pub fn ny(&self) -> usize {
        self.w.rows()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LinearTaskMode {
    /// `W ~ MN(0, α²I, α²I)`.
    MatrixNormal { scale: f64 },
    /// Random singular vectors with a prescribed spectrum.
    FixedSpectrum { spectrum: Vec<f64> },
    /// Random singular vectors, each singular value i.i.d. `U[min, max]`.
    UniformSpectrum { min: f64, max: f64 },
    /// The same task every draw.
    FixedTask { w: Matrix },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearTaskDistribution {
    pub nx: usize,
    pub ny: usize,
    pub mode: LinearTaskMode,
    #[serde(default = "default_noise")]
    pub noise_std: f64,
}

fn default_noise() -> f64 {
    DEFAULT_NOISE_STD
}

impl LinearTaskDistribution {
    pub fn matrix_normal(n: usize, scale: f64) -> Self {
        Self {
            nx: n,
            ny: n,
            mode: LinearTaskMode::MatrixNormal { scale },
            noise_std: DEFAULT_NOISE_STD,
        }
    }

    pub fn fixed_spectrum(n: usize, spectrum: Vec<f64>) -> Self {
        Self {
            nx: n,
            ny: n,
            mode: LinearTaskMode::FixedSpectrum { spectrum },
            noise_std: DEFAULT_NOISE_STD,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx == 0 || self.ny == 0 {
            return invalid("task dimensions must be positive");
        }
        if !(self.noise_std >= 0.0) || !self.noise_std.is_finite() {
            return invalid("noise_std must be ≥ 0");
        }
        let rank = self.nx.min(self.ny);
        match &self.mode {
            LinearTaskMode::MatrixNormal { scale } if !(*scale > 0.0) || !scale.is_finite() => {
                invalid(format!("matrix-normal scale must be > 0, got {scale}"))
            }
            LinearTaskMode::FixedSpectrum { spectrum } => {
                if spectrum.len() != rank {
                    return shape_err(format!(
                        "spectrum has {} values, task rank is {rank}",
                        spectrum.len()
                    ));
                }
                if spectrum.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
                    return invalid("spectrum values must be finite and ≥ 0");
                }
                Ok(())
            }
            LinearTaskMode::UniformSpectrum { min, max } => {
                if !(*min >= 0.0 && max >= min) || !max.is_finite() {
                    return invalid(format!("uniform spectrum needs 0 ≤ min ≤ max, got [{min}, {max}]"));
                }
                Ok(())
            }
            LinearTaskMode::FixedTask { w } => {
                if w.shape() != (self.ny, self.nx) {
                    return shape_err(format!("fixed task is {:?}, expected ({}, {})", w.shape(), self.ny, self.nx));
                }
                if !w.is_finite() {
                    return invalid("fixed task has non-finite entries");
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

fn with_spectrum(ny: usize, nx: usize, spectrum: &[f64], rng: &mut RngStream) -> Result<Matrix> {
    let g = sample_gaussian_matrix(ny, nx, 1.0, rng)?;
    let f = svd(&g)?;
    let mut s = spectrum.to_vec();
    s.sort_by(|a, b| b.total_cmp(a));
    let us = Matrix::from_fn(ny, s.len(), |i, j| f.u.get(i, j) * s[j]);
    us.matmul_t(&f.v)
}

pub fn sample_linear_task(dist: &LinearTaskDistribution, rng: &mut RngStream) -> Result<LinearTask> {
    dist.validate()?;
    let (nx, ny) = (dist.nx, dist.ny);
    let w = match &dist.mode {
        LinearTaskMode::MatrixNormal { scale } => {
            // MN(0, α²I, α²I) has i.i.d. entries of variance α⁴.
            sample_gaussian_matrix(ny, nx, scale * scale, rng)?
        }
        LinearTaskMode::FixedSpectrum { spectrum } => with_spectrum(ny, nx, spectrum, rng)?,
        LinearTaskMode::UniformSpectrum { min, max } => {
            let s: Vec<f64> = (0..nx.min(ny)).map(|_| rng.uniform_range(*min, *max)).collect();
            with_spectrum(ny, nx, &s, rng)?
        }
        LinearTaskMode::FixedTask { w } => w.clone(),
    };
    LinearTask::new(w, dist.noise_std)
}

/// Sorted singular values of `draws` independent `n×n` draws from
/// `MN(0, α²I, α²I)`, `[draw][k]`.
pub fn matrix_normal_spectra(n: usize, scale: f64, draws: usize, rng: &mut RngStream) -> Result<Vec<Vec<f64>>> {
    (0..draws)
        .map(|_| Ok(svd(&sample_gaussian_matrix(n, n, scale * scale, rng)?)?.s))
        .collect()
}

/// Monte Carlo mean of the sorted spectrum of an `n×n` `MN(0, I, I)` draw.
pub fn expected_spectrum(n: usize, draws: usize, rng: &mut RngStream) -> Result<Vec<f64>> {
    if draws == 0 {
        return invalid("need at least one draw");
    }
    let spectra = matrix_normal_spectra(n, 1.0, draws, rng)?;
    Ok((0..n)
        .map(|k| spectra.iter().map(|s| s[k]).sum::<f64>() / draws as f64)
        .collect())
}

/// Monte Carlo `p`-quantile (nearest rank) of the pooled singular values
/// of `n×n` draws from `MN(0, α²I, α²I)`.
pub fn singular_value_percentile(n: usize, scale: f64, p: f64, draws: usize, rng: &mut RngStream) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) || draws == 0 {
        return invalid(format!("bad percentile request p={p}, draws={draws}"));
    }
    let mut pooled: Vec<f64> = matrix_normal_spectra(n, scale, draws, rng)?.concat();
    pooled.sort_by(f64::total_cmp);
    let idx = ((p * pooled.len() as f64).ceil() as usize).clamp(1, pooled.len()) - 1;
    Ok(pooled[idx])
}

/// Supervised episode: `inputs[t]` and `targets[t]` for t = 0..T.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

pub fn sample_linear_episode(task: &LinearTask, len: usize, rng: &mut RngStream) -> Result<Episode> {
    if len == 0 {
        return invalid("episode length must be ≥ 1");
    }
    let mut inputs = Vec::with_capacity(len);
    let mut targets = Vec::with_capacity(len);
    for _ in 0..len {
        let x: Vec<f64> = (0..task.nx()).map(|_| rng.normal()).collect();
        let mut y = task.w.matvec(&x)?;
        if task.noise_std > 0.0 {
            for v in &mut y {
                *v += task.noise_std * rng.normal();
            }
        }
        inputs.push(x);
        targets.push(y);
    }
    Ok(Episode { inputs, targets })
}

/// `g(x) = Σ_k a_k sin(2π k x + φ_k)`, k = 1..=K.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FourierTask {
    pub amplitudes: Vec<f64>,
    pub phases: Vec<f64>,
    pub noise_std: f64,
}

impl FourierTask {
    pub fn new(amplitudes: Vec<f64>, phases: Vec<f64>, noise_std: f64) -> Result<Self> {
        let t = Self {
            amplitudes,
            phases,
            noise_std,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.amplitudes.len() != self.phases.len() {
            return shape_err("amplitudes and phases differ in length");
        }
        if self.amplitudes.iter().any(|a| !(*a >= 0.0) || !a.is_finite()) {
            return invalid("amplitudes must be finite and ≥ 0");
        }
        if self.phases.iter().any(|p| !p.is_finite()) {
            return invalid("phases must be finite");
        }
        if !(self.noise_std >= 0.0) || !self.noise_std.is_finite() {
            return invalid("noise_std must be ≥ 0");
        }
        Ok(())
    }

    pub fn modes(&self) -> usize {
        self.amplitudes.len()
    }
}

pub fn eval_fourier(task: &FourierTask, x: f64) -> f64 {
    task.amplitudes
        .iter()
        .zip(&task.phases)
        .enumerate()
        .map(|(i, (a, phi))| a * (2.0 * PI * (i + 1) as f64 * x + phi).sin())
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FourierMode {
    /// `a_k = 1` for k = 1..=modes.
    UnitAmplitudes { modes: usize },
    /// `a_k ~ U[0, 1]` for k = 1..=modes.
    UniformAmplitudes { modes: usize },
    /// `a_k = 1` for `low ≤ k ≤ high`, else 0.
    Bandpass { modes: usize, low: usize, high: usize },
}

impl FourierMode {
    pub fn modes(&self) -> usize {
        match *self {
            FourierMode::UnitAmplitudes { modes }
            | FourierMode::UniformAmplitudes { modes }
            | FourierMode::Bandpass { modes, .. } => modes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.modes() == 0 {
            return invalid("need at least one Fourier mode");
        }
        if let FourierMode::Bandpass { modes, low, high } = *self {
            if low == 0 || low > high || high > modes {
                return invalid(format!("bandpass {low}..={high} outside 1..={modes}"));
            }
        }
        Ok(())
    }
}

impl Default for FourierMode {
    fn default() -> Self {
        FourierMode::UnitAmplitudes { modes: 5 }
    }
}

pub fn sample_fourier_task(mode: &FourierMode, noise_std: f64, rng: &mut RngStream) -> Result<FourierTask> {
    mode.validate()?;
    let k = mode.modes();
    let phases: Vec<f64> = (0..k).map(|_| rng.uniform_range(0.0, 2.0 * PI)).collect();
    let amplitudes = match *mode {
        FourierMode::UnitAmplitudes { .. } => vec![1.0; k],
        FourierMode::UniformAmplitudes { .. } => (0..k).map(|_| rng.uniform()).collect(),
        FourierMode::Bandpass { low, high, .. } => (1..=k)
            .map(|i| if (low..=high).contains(&i) { 1.0 } else { 0.0 })
            .collect(),
    };
    FourierTask::new(amplitudes, phases, noise_std)
}

pub fn sample_fourier_episode(task: &FourierTask, len: usize, rng: &mut RngStream) -> Result<Episode> {
    if len == 0 {
        return invalid("episode length must be ≥ 1");
    }
    let mut inputs = Vec::with_capacity(len);
    let mut targets = Vec::with_capacity(len);
    for _ in 0..len {
        let x = rng.uniform_range(-0.5, 0.5);
        let mut y = eval_fourier(task, x);
        if task.noise_std > 0.0 {
            y += task.noise_std * rng.normal();
        }
        inputs.push(vec![x]);
        targets.push(vec![y]);
    }
    Ok(Episode { inputs, targets })
}

/// Contextual bandit with one rewarding action per context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BanditTask {
    pub num_actions: usize,
    /// `correct_actions[c]` is the rewarding action in context c.
    pub correct_actions: Vec<usize>,
    pub p_correct: f64,
    pub p_incorrect: f64,
}

impl BanditTask {
    pub fn validate(&self) -> Result<()> {
        if self.correct_actions.is_empty() || self.num_actions == 0 {
            return invalid("bandit needs at least one context and one action");
        }
        if let Some(&a) = self.correct_actions.iter().find(|&&a| a >= self.num_actions) {
            return Err(Error::OutOfRange {
                what: "correct action",
                index: a,
                limit: self.num_actions,
            });
        }
        if !(0.0 <= self.p_incorrect && self.p_incorrect < self.p_correct && self.p_correct <= 1.0) {
            return invalid(format!(
                "need 0 ≤ p_incorrect < p_correct ≤ 1, got ({}, {})",
                self.p_correct, self.p_incorrect
            ));
        }
        Ok(())
    }

    pub fn num_contexts(&self) -> usize {
        self.correct_actions.len()
    }

    /// Expected reward of taking `action` in `context`.
    pub fn reward_prob(&self, context: usize, action: usize) -> f64 {
        if self.correct_actions[context] == action {
            self.p_correct
        } else {
            self.p_incorrect
        }
    }
}

/// How correct actions are assigned to contexts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BanditAssignment {
    /// Every context has a distinct correct action.
    Conflict,
    /// Each context's correct action is i.i.d. uniform.
    Independent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BanditSpec {
    pub num_contexts: usize,
    pub num_actions: usize,
    pub p_correct: f64,
    pub p_incorrect: f64,
    pub assignment: BanditAssignment,
}

impl Default for BanditSpec {
    fn default() -> Self {
        Self {
            num_contexts: 5,
            num_actions: 5,
            p_correct: 0.8,
            p_incorrect: 0.2,
            assignment: BanditAssignment::Conflict,
        }
    }
}

pub fn sample_bandit_task(spec: &BanditSpec, rng: &mut RngStream) -> Result<BanditTask> {
    let (kc, ka) = (spec.num_contexts, spec.num_actions);
    if spec.assignment == BanditAssignment::Conflict && ka < kc {
        return invalid(format!("conflict mode needs at least as many actions ({ka}) as contexts ({kc})"));
    }
    let correct_actions = match spec.assignment {
        BanditAssignment::Conflict => {
            let mut p = rng.permutation(ka);
            p.truncate(kc);
            p
        }
        BanditAssignment::Independent => (0..kc).map(|_| rng.below(ka)).collect(),
    };
    let task = BanditTask {
        num_actions: ka,
        correct_actions,
        p_correct: spec.p_correct,
        p_incorrect: spec.p_incorrect,
    };
    task.validate()?;
    Ok(task)
}

pub fn bandit_reward(task: &BanditTask, context: usize, action: usize, rng: &mut RngStream) -> Result<f64> {
    if context >= task.num_contexts() {
        return Err(Error::OutOfRange {
            what: "context",
            index: context,
            limit: task.num_contexts(),
        });
    }
    if action >= task.num_actions {
        return Err(Error::OutOfRange {
            what: "action",
            index: action,
            limit: task.num_actions,
        });
    }
    Ok(if rng.bernoulli(task.reward_prob(context, action)) { 1.0 } else { 0.0 })
}

/// Context for the next bandit step, uniform over contexts.
pub fn sample_context(task: &BanditTask, rng: &mut RngStream) -> usize {
    rng.below(task.num_contexts())
}

/// One bandit interaction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BanditStep {
    pub context: usize,
    pub action: usize,
    pub reward: f64,
}
