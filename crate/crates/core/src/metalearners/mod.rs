//! LSTM Meta-Learners: outer training across task distributions, inner-loop
//! probes of the learned algorithm, and sweeps over outer checkpoints.

mod probe;
mod sweep;
mod train;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use probe::{
    probe_inner_bandit, probe_inner_fourier, probe_inner_linear, run_bandit_episode, InnerTrace,
};
pub use sweep::{inner_q_curves, inner_thresholds, outer_dynamics_sweep, Sweep, SweepRow, SweepSpec};
pub use train::{outer_train_bandit, outer_train_regression, MetaTrainer};

use crate::error::{invalid, Error, Result};
use crate::nets::{archive, LstmParams, Optimizer, Parameters};
use crate::tasks::{
    BanditAssignment, BanditSpec, FourierMode, FourierTask, LinearTaskDistribution, DEFAULT_NOISE_STD,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetaFamily {
    Linear,
    Fourier,
    BanditCoupled,
    BanditDecoupled,
}

impl MetaFamily {
    pub fn is_bandit(self) -> bool {
        matches!(self, MetaFamily::BanditCoupled | MetaFamily::BanditDecoupled)
    }
}

/// Distribution the outer loop samples tasks from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskSpec {
    Linear { distribution: LinearTaskDistribution },
    Fourier {
        #[serde(default)]
        mode: FourierMode,
        #[serde(default = "default_noise")]
        noise_std: f64,
    },
    /// Degenerate distribution holding one Fourier task.
    FixedFourier { task: FourierTask },
    Bandit { spec: BanditSpec },
}

fn default_noise() -> f64 {
    DEFAULT_NOISE_STD
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            TaskSpec::Linear { distribution } => distribution.validate(),
            TaskSpec::Fourier { mode, noise_std } => {
                if !(*noise_std >= 0.0) || !noise_std.is_finite() {
                    return invalid("noise_std must be ≥ 0");
                }
                mode.validate()
            }
            TaskSpec::FixedFourier { task } => task.validate(),
            TaskSpec::Bandit { spec } => {
                if spec.num_contexts == 0 || spec.num_actions == 0 {
                    return invalid("bandit needs contexts and actions");
                }
                if spec.assignment == BanditAssignment::Conflict && spec.num_actions < spec.num_contexts {
                    return invalid("conflict assignment needs at least as many actions as contexts");
                }
                for p in [spec.p_correct, spec.p_incorrect] {
                    if !(0.0..=1.0).contains(&p) {
                        return invalid(format!("reward probability {p} outside [0, 1]"));
                    }
                }
                Ok(())
            }
        }
    }

    fn fits(&self, family: MetaFamily) -> bool {
        matches!(
            (family, self),
            (MetaFamily::Linear, TaskSpec::Linear { .. })
                | (MetaFamily::Fourier, TaskSpec::Fourier { .. } | TaskSpec::FixedFourier { .. })
                | (MetaFamily::BanditCoupled | MetaFamily::BanditDecoupled, TaskSpec::Bandit { .. })
        )
    }
}

/// Outer steps at which to keep a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CheckpointSchedule {
    /// Step 0 plus `count − 1` steps spaced geometrically from 1 to the budget.
    Geometric { count: usize },
    Explicit { steps: Vec<usize> },
}

impl Default for CheckpointSchedule {
    fn default() -> Self {
        CheckpointSchedule::Geometric { count: 20 }
    }
}

impl CheckpointSchedule {
    pub fn steps(&self, budget: usize) -> Vec<usize> {
        match self {
            CheckpointSchedule::Geometric { count } => {
                let mut steps = vec![0];
                let n = count.saturating_sub(1);
                for i in 0..n {
                    let frac = if n == 1 { 1.0 } else { i as f64 / (n - 1) as f64 };
                    let s = (budget as f64).powf(frac).round() as usize;
                    steps.push(s.clamp(1, budget.max(1)));
                }
                if budget == 0 {
                    steps.truncate(1);
                }
                steps.dedup();
                steps
            }
            CheckpointSchedule::Explicit { steps } => steps.clone(),
        }
    }

    fn validate(&self, budget: usize) -> Result<()> {
        match self {
            CheckpointSchedule::Geometric { count } if *count < 2 => {
                invalid("geometric checkpoint schedule needs count ≥ 2")
            }
            CheckpointSchedule::Explicit { steps } => {
                if steps.is_empty() || steps.windows(2).any(|w| w[0] >= w[1]) {
                    return invalid("explicit checkpoints must be non-empty and strictly increasing");
                }
                if steps.last().is_some_and(|&s| s > budget) {
                    return invalid(format!("checkpoint beyond budget {budget}"));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetaTrainConfig {
    pub family: MetaFamily,
    pub tasks: TaskSpec,
    pub episode_len: usize,
    /// Episodes per outer update.
    pub batch_size: usize,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    pub optimizer: Optimizer,
    /// Outer update budget.
    pub updates: usize,
    #[serde(default)]
    pub checkpoints: CheckpointSchedule,
    /// Per-time-step moving-average baseline for REINFORCE; `None` disables it.
    #[serde(default)]
    pub baseline_decay: Option<f64>,
    #[serde(default = "default_discount")]
    pub discount: f64,
}

fn default_hidden() -> usize {
    64
}

fn default_discount() -> f64 {
    1.0
}

impl MetaTrainConfig {
    /// SGD 1e-2, 200 episodes of length 20, 100k updates.
    pub fn linear(distribution: LinearTaskDistribution) -> Self {
        Self {
            family: MetaFamily::Linear,
            tasks: TaskSpec::Linear { distribution },
            episode_len: 20,
            batch_size: 200,
            hidden: 64,
            optimizer: Optimizer::Sgd { lr: 1e-2 },
            updates: 100_000,
            checkpoints: CheckpointSchedule::default(),
            baseline_decay: None,
            discount: 1.0,
        }
    }

    /// Adam 1e-4, 200 episodes of length 40, 200k updates.
    pub fn fourier(mode: FourierMode) -> Self {
        Self {
            family: MetaFamily::Fourier,
            tasks: TaskSpec::Fourier {
                mode,
                noise_std: DEFAULT_NOISE_STD,
            },
            episode_len: 40,
            batch_size: 200,
            hidden: 64,
            optimizer: Optimizer::Adam { lr: 1e-4 },
            updates: 200_000,
            checkpoints: CheckpointSchedule::default(),
            baseline_decay: None,
            discount: 1.0,
        }
    }

    /// Adam 1e-4, 200 episodes of length 100, 100k updates, contexts with
    /// independently drawn correct arms.
    pub fn bandit(coupled: bool) -> Self {
        Self {
            family: if coupled {
                MetaFamily::BanditCoupled
            } else {
                MetaFamily::BanditDecoupled
            },
            tasks: TaskSpec::Bandit {
                spec: BanditSpec {
                    assignment: BanditAssignment::Independent,
                    ..BanditSpec::default()
                },
            },
            episode_len: 100,
            batch_size: 200,
            hidden: 64,
            optimizer: Optimizer::Adam { lr: 1e-4 },
            updates: 100_000,
            checkpoints: CheckpointSchedule::default(),
            baseline_decay: None,
            discount: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.episode_len == 0 {
            return invalid("episode length must be ≥ 1");
        }
        if self.batch_size == 0 {
            return invalid("batch size must be ≥ 1");
        }
        if self.hidden == 0 {
            return invalid("hidden size must be ≥ 1");
        }
        if self.updates == 0 {
            return invalid("update budget must be ≥ 1");
        }
        if !self.tasks.fits(self.family) {
            return Err(Error::FamilyMismatch(format!(
                "task spec does not match family {:?}",
                self.family
            )));
        }
        self.tasks.validate()?;
        self.optimizer.validate()?;
        self.checkpoints.validate(self.updates)?;
        if let Some(d) = self.baseline_decay {
            if !(0.0..1.0).contains(&d) {
                return invalid(format!("baseline decay must lie in [0, 1), got {d}"));
            }
        }
        if !(0.0..=1.0).contains(&self.discount) {
            return invalid(format!("discount must lie in [0, 1], got {}", self.discount));
        }
        Ok(())
    }

    /// `(input, output)` sizes of each network and how many there are.
    pub fn architecture(&self) -> (usize, usize, usize) {
        match (&self.tasks, self.family) {
            (TaskSpec::Linear { distribution: d }, _) => (d.nx + d.ny, d.ny, 1),
            (TaskSpec::Fourier { .. } | TaskSpec::FixedFourier { .. }, _) => (2, 1, 1),
            (TaskSpec::Bandit { spec }, MetaFamily::BanditDecoupled) => {
                (spec.num_actions + 1, spec.num_actions, spec.num_contexts)
            }
            (TaskSpec::Bandit { spec }, _) => (spec.num_contexts + spec.num_actions + 1, spec.num_actions, 1),
        }
    }

    pub(crate) fn check_params(&self, params: &[LstmParams]) -> Result<()> {
        let (i, o, n) = self.architecture();
        let ok = params.len() == n
            && params
                .iter()
                .all(|p| p.input_size == i && p.output_size == o && p.hidden_size == self.hidden);
        if ok {
            Ok(())
        } else {
            Err(Error::FamilyMismatch(format!(
                "parameters do not fit a {:?} Meta-Learner with {n} net(s) of {i}→{}→{o}",
                self.family, self.hidden
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetaCheckpoint {
    /// Outer updates applied before this snapshot.
    pub step: usize,
    /// One net for regression and coupled bandits, one per context when decoupled.
    pub params: Vec<LstmParams>,
    /// Minibatch loss (regression) or mean reward per step (bandits) at this step.
    pub metric: f64,
}

impl MetaCheckpoint {
    pub fn save(&self, stem: &Path) -> Result<()> {
        let groups = self
            .params
            .iter()
            .enumerate()
            .map(|(i, p)| (format!("net{i}/"), p.tensors()));
        let meta = serde_json::json!({ "step": self.step, "metric": self.metric, "nets": self.params.len() });
        let (manifest, bytes) = archive::encode(groups, meta);
        archive::write(stem, &manifest, &bytes)
    }

    pub fn load(stem: &Path) -> Result<Self> {
        Self::from_archive(&archive::read(stem)?)
    }

    pub fn from_archive(a: &archive::Archive) -> Result<Self> {
        let field = |name: &str| {
            a.meta
                .get(name)
                .ok_or_else(|| Error::Archive(format!("checkpoint meta lacks `{name}`")))
        };
        let step = field("step")?
            .as_u64()
            .ok_or_else(|| Error::Archive("`step` is not a count".into()))? as usize;
        let metric = field("metric")?
            .as_f64()
            .ok_or_else(|| Error::Archive("`metric` is not a number".into()))?;
        let nets = field("nets")?
            .as_u64()
            .filter(|&n| n >= 1 && n as usize <= a.tensors.len())
            .ok_or_else(|| Error::Archive("bad `nets` count".into()))? as usize;
        let params = (0..nets)
            .map(|i| LstmParams::from_archive(a, &format!("net{i}/")))
            .collect::<Result<_>>()?;
        Ok(Self { step, params, metric })
    }
}
