//! Sample-inefficient baselines: deep-network regression Learners and
//! REINFORCE bandit Learners, each recording its effective function on a
//! snapshot schedule.

mod bandit;
mod regression;

use serde::{Deserialize, Serialize};

pub use bandit::{train_bandit_coupled, train_bandit_decoupled, BanditPolicy};
pub use regression::{train_fourier_learner, train_linear_learner, train_lstm_control};

use crate::error::{invalid, Result};
use crate::nets::{Activation, Init, Optimizer};
use crate::numerics::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LearnerFamily {
    LinearRegression,
    FourierRegression,
    BanditCoupled,
    BanditDecoupled,
    LstmControl,
}

/// When to record a snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Schedule {
    /// Every step up to `dense_until`, then each step at least `growth`
    /// times the previous one. The final step is always included.
    Geometric { dense_until: usize, growth: f64 },
    /// Explicit sorted step indices.
    Explicit { steps: Vec<usize> },
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule::Geometric {
            dense_until: 100,
            growth: 1.05,
        }
    }
}

impl Schedule {
    pub fn validate(&self, budget: usize) -> Result<()> {
        match self {
            Schedule::Geometric { growth, .. } if !(*growth > 1.0) || !growth.is_finite() => {
                invalid(format!("schedule growth must be > 1, got {growth}"))
            }
            Schedule::Explicit { steps } => {
                if steps.windows(2).any(|w| w[0] >= w[1]) {
                    return invalid("explicit schedule must be strictly increasing");
                }
                if steps.last().is_some_and(|&s| s > budget) {
                    return invalid(format!("schedule step beyond budget {budget}"));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Step indices in `0..=budget` at which to record.
    pub fn steps(&self, budget: usize) -> Vec<usize> {
        match self {
            Schedule::Geometric { dense_until, growth } => geometric_steps(budget, *dense_until, *growth),
            Schedule::Explicit { steps } => steps.iter().copied().filter(|&s| s <= budget).collect(),
        }
    }
}

pub fn geometric_steps(budget: usize, dense_until: usize, growth: f64) -> Vec<usize> {
    let mut steps: Vec<usize> = (0..=dense_until.min(budget)).collect();
    let mut cur = *steps.last().unwrap();
    while cur < budget {
        let next = ((cur as f64) * growth).ceil() as usize;
        cur = next.max(cur + 1).min(budget);
        steps.push(cur);
    }
    steps
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerConfig {
    pub family: LearnerFamily,
    /// Hidden layer widths of the MLP (regression families).
    #[serde(default)]
    pub hidden: Vec<usize>,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    pub init: Init,
    pub optimizer: Optimizer,
    pub batch_size: usize,
    pub steps: usize,
    #[serde(default)]
    pub schedule: Schedule,
    /// Bandit stop rule on the normalised expected reward.
    #[serde(default)]
    pub stop_at: Option<f64>,
    /// Moving-average reward baseline decay for REINFORCE; `None` disables it.
    #[serde(default)]
    pub baseline_decay: Option<f64>,
    /// Fresh Gaussian inputs used to estimate Ŵ for nonlinear linear-task nets.
    #[serde(default = "default_probe_samples")]
    pub probe_samples: usize,
}

fn default_activation() -> Activation {
    Activation::Linear
}

fn default_probe_samples() -> usize {
    100
}

impl LearnerConfig {
    /// Two-layer linear net, 10 hidden units, σ = 0.1, SGD 1e-3, minibatch 100.
    /// 4000 steps in 2D and 16000 in 5D.
    pub fn linear(n: usize) -> Self {
        Self {
            family: LearnerFamily::LinearRegression,
            hidden: vec![10],
            activation: Activation::Linear,
            init: Init::TruncatedNormal { sigma: 0.1 },
            optimizer: Optimizer::Sgd { lr: 1e-3 },
            batch_size: 100,
            steps: if n <= 2 { 4000 } else { 16000 },
            schedule: Schedule::default(),
            stop_at: None,
            baseline_decay: None,
            probe_samples: 100,
        }
    }

    /// Six-layer ReLU net, 256 hidden units, Adam 1e-4, minibatch 40, 5000 steps.
    pub fn fourier() -> Self {
        Self {
            family: LearnerFamily::FourierRegression,
            hidden: vec![256; 5],
            activation: Activation::Relu,
            init: Init::FanIn,
            optimizer: Optimizer::Adam { lr: 1e-4 },
            batch_size: 40,
            steps: 5000,
            schedule: Schedule::default(),
            stop_at: None,
            baseline_decay: None,
            probe_samples: 100,
        }
    }

    /// Linear + softmax policy, σ = 1/√5, Adam 1e-4, minibatch 200,
    /// stopping once the normalised expected reward reaches 0.98.
    pub fn bandit(coupled: bool) -> Self {
        Self {
            family: if coupled {
                LearnerFamily::BanditCoupled
            } else {
                LearnerFamily::BanditDecoupled
            },
            hidden: Vec::new(),
            activation: Activation::Linear,
            init: Init::TruncatedNormal {
                sigma: 1.0 / 5f64.sqrt(),
            },
            optimizer: Optimizer::Adam { lr: 1e-4 },
            batch_size: 200,
            steps: 2_000_000,
            schedule: Schedule::default(),
            stop_at: Some(0.98),
            baseline_decay: None,
            probe_samples: 100,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return invalid("step budget must be ≥ 1");
        }
        if self.batch_size == 0 {
            return invalid("batch size must be ≥ 1");
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return invalid("hidden widths must be positive");
        }
        self.optimizer.validate()?;
        self.schedule.validate(self.steps)?;
        if let Some(s) = self.stop_at {
            if !(0.0..=1.0).contains(&s) {
                return invalid(format!("stop_at must lie in [0, 1], got {s}"));
            }
        }
        if let Some(d) = self.baseline_decay {
            if !(0.0..1.0).contains(&d) {
                return invalid(format!("baseline decay must lie in [0, 1), got {d}"));
            }
        }
        if self.probe_samples == 0 {
            return invalid("probe_samples must be ≥ 1");
        }
        Ok(())
    }

    pub(crate) fn expect_family(&self, family: LearnerFamily) -> Result<()> {
        if self.family != family {
            return Err(crate::Error::FamilyMismatch(format!(
                "config is for {:?}, trainer expects {:?}",
                self.family, family
            )));
        }
        Ok(())
    }
}

/// What a snapshot records about the learned function.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    /// Effective linear map Ŵ_t, `Ny × Nx`.
    Effective(Matrix),
    /// Outputs on the fixed probe grid.
    Probe(Vec<f64>),
    /// Policy table π_t(a|c), `K_c × K_a`.
    Policy(Matrix),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub step: usize,
    /// Minibatch loss for regression, expected reward for bandits.
    pub value: f64,
    pub payload: Payload,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnerTrace {
    pub family: LearnerFamily,
    pub snapshots: Vec<Snapshot>,
}

impl LearnerTrace {
    pub fn new(family: LearnerFamily) -> Self {
        Self {
            family,
            snapshots: Vec::new(),
        }
    }

    pub fn steps(&self) -> Vec<usize> {
        self.snapshots.iter().map(|s| s.step).collect()
    }

    pub fn last_step(&self) -> Option<usize> {
        self.snapshots.last().map(|s| s.step)
    }
}
