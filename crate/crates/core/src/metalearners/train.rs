use std::path::Path;

use super::{MetaCheckpoint, MetaFamily, MetaTrainConfig, TaskSpec};
use crate::error::{Error, PartialRun, Result};
use crate::nets::{archive, output_gradients, softmax, AdamState, LossSpec, LstmParams, LstmTape, OptimizerState, Parameters, TensorRef};
use crate::numerics::{Matrix, RngStream};
use crate::tasks::{
    bandit_reward, sample_bandit_task, sample_context, sample_fourier_episode, sample_fourier_task,
    sample_linear_episode, sample_linear_task, BanditTask, Episode,
};

/// Stream index for weight initialisation; update `u` draws from stream `u`.
const INIT_STREAM: u64 = u64::MAX - 1;

/// Resumable outer-training loop. All randomness for update `u` comes from
/// `rng.substream(u)`, so a restored trainer continues bit-identically.
#[derive(Debug, Clone)]
pub struct MetaTrainer {
    cfg: MetaTrainConfig,
    rng: RngStream,
    params: Vec<LstmParams>,
    opt: OptimizerState,
    /// `baseline[net][t]`, present when a baseline decay is configured.
    baseline: Vec<Vec<f64>>,
    schedule: Vec<usize>,
    next: usize,
}

struct Outcome {
    metric: f64,
    grads: Vec<LstmParams>,
}

impl MetaTrainer {
    pub fn new(cfg: &MetaTrainConfig, rng: &RngStream) -> Result<Self> {
        cfg.validate()?;
        let (i, o, n) = cfg.architecture();
        let mut init = rng.substream(INIT_STREAM);
        let params = (0..n)
            .map(|_| LstmParams::init(i, cfg.hidden, o, &mut init))
            .collect::<Result<Vec<_>>>()?;
        let opt = cfg.optimizer.state(params.num_params());
        let baseline = if cfg.baseline_decay.is_some() && cfg.family.is_bandit() {
            vec![vec![0.0; cfg.episode_len]; n]
        } else {
            Vec::new()
        };
        Ok(Self {
            cfg: cfg.clone(),
            rng: rng.clone(),
            params,
            opt,
            baseline,
            schedule: cfg.checkpoints.steps(cfg.updates),
            next: 0,
        })
    }

    pub fn config(&self) -> &MetaTrainConfig {
        &self.cfg
    }

    pub fn params(&self) -> &[LstmParams] {
        &self.params
    }

    /// Index of the next outer step; `updates + 1` once finished.
    pub fn next_step(&self) -> usize {
        self.next
    }

    pub fn is_done(&self) -> bool {
        self.next > self.cfg.updates
    }

    /// Evaluate the minibatch for the next step, keep a checkpoint if one
    /// is scheduled, then apply the update unless the budget is spent.
    pub fn step(&mut self) -> Result<Option<MetaCheckpoint>> {
        let u = self.next;
        let mut data = self.rng.substream(u as u64);
        let out = match self.cfg.family {
            MetaFamily::Linear | MetaFamily::Fourier => self.regression_batch(&mut data)?,
            MetaFamily::BanditCoupled => self.coupled_batch(&mut data)?,
            MetaFamily::BanditDecoupled => self.decoupled_batch(&mut data)?,
        };
        if !out.metric.is_finite() || !out.grads.is_finite() || !self.params.is_finite() {
            return Err(Error::Diverged {
                step: u,
                partial: Box::new(PartialRun::Meta(Vec::new())),
            });
        }
        let ck = self.schedule.binary_search(&u).is_ok().then(|| MetaCheckpoint {
            step: u,
            params: self.params.clone(),
            metric: out.metric,
        });
        if u < self.cfg.updates {
            self.opt.apply(&mut self.params, &out.grads);
        }
        self.next += 1;
        Ok(ck)
    }

    /// Run to the end of the budget, returning the checkpoints produced by
    /// this call. On divergence the error carries those checkpoints.
    pub fn run(&mut self) -> Result<Vec<MetaCheckpoint>> {
        self.run_until(self.cfg.updates)
    }

    /// Run steps up to and including `last`.
    pub fn run_until(&mut self, last: usize) -> Result<Vec<MetaCheckpoint>> {
        let mut out = Vec::new();
        while self.next <= last.min(self.cfg.updates) {
            match self.step() {
                Ok(Some(ck)) => out.push(ck),
                Ok(None) => {}
                Err(Error::Diverged { step, .. }) => {
                    return Err(Error::Diverged {
                        step,
                        partial: Box::new(PartialRun::Meta(out)),
                    })
                }
                Err(e) => return Err(e),
            }
        }
        Ok(out)
    }

    /// Persist weights, optimiser moments and progress.
    pub fn save(&self, stem: &Path) -> Result<()> {
        let mut groups: Vec<(String, Vec<TensorRef<'_>>)> = self
            .params
            .iter()
            .enumerate()
            .map(|(i, p)| (format!("net{i}/"), p.tensors()))
            .collect();
        let mut meta = serde_json::json!({
            "next": self.next,
            "nets": self.params.len(),
            "config": self.cfg,
        });
        if let OptimizerState::Adam { adam, .. } = &self.opt {
            groups.push((
                "adam/".into(),
                vec![
                    TensorRef {
                        name: "m",
                        shape: vec![adam.m.len()],
                        data: &adam.m,
                    },
                    TensorRef {
                        name: "v",
                        shape: vec![adam.v.len()],
                        data: &adam.v,
                    },
                ],
            ));
            meta["adam_t"] = adam.t.into();
        }
        let flat_baseline: Vec<f64> = self.baseline.concat();
        if !flat_baseline.is_empty() {
            groups.push((
                String::new(),
                vec![TensorRef {
                    name: "baseline",
                    shape: vec![self.baseline.len(), self.cfg.episode_len],
                    data: &flat_baseline,
                }],
            ));
        }
        let (manifest, bytes) = archive::encode(groups, meta);
        archive::write(stem, &manifest, &bytes)
    }

    /// Rebuild a trainer saved by [`MetaTrainer::save`] for the same config
    /// and root stream.
    pub fn restore(cfg: &MetaTrainConfig, rng: &RngStream, stem: &Path) -> Result<Self> {
        let a = archive::read(stem)?;
        let mut t = Self::new(cfg, rng)?;
        let saved: MetaTrainConfig = serde_json::from_value(
            a.meta
                .get("config")
                .cloned()
                .ok_or_else(|| Error::Archive("trainer state lacks its config".into()))?,
        )?;
        if &saved != cfg {
            return Err(Error::Archive("trainer state was written for a different config".into()));
        }
        let next = a
            .meta
            .get("next")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::Archive("trainer state lacks `next`".into()))? as usize;
        if next > cfg.updates + 1 {
            return Err(Error::Archive(format!("`next` {next} beyond budget")));
        }
        let params: Vec<LstmParams> = (0..t.params.len())
            .map(|i| LstmParams::from_archive(&a, &format!("net{i}/")))
            .collect::<Result<_>>()?;
        cfg.check_params(&params).map_err(|e| Error::Archive(e.to_string()))?;
        t.params = params;
        if let OptimizerState::Adam { adam, .. } = &mut t.opt {
            let m = a.get("adam/m")?;
            let v = a.get("adam/v")?;
            let n = adam.m.len();
            if m.data.len() != n || v.data.len() != n {
                return Err(Error::Archive("Adam moments do not match the parameter count".into()));
            }
            let step = a
                .meta
                .get("adam_t")
                .and_then(|v| v.as_u64())
                .ok_or_else(|| Error::Archive("trainer state lacks `adam_t`".into()))?;
            *adam = AdamState {
                m: m.data.clone(),
                v: v.data.clone(),
                t: step,
                ..AdamState::new(n)
            };
        }
        if !t.baseline.is_empty() {
            let b = a.get("baseline")?;
            if b.shape != [t.baseline.len(), cfg.episode_len] {
                return Err(Error::Archive("baseline shape mismatch".into()));
            }
            for (row, chunk) in t.baseline.iter_mut().zip(b.data.chunks(cfg.episode_len)) {
                row.copy_from_slice(chunk);
            }
        }
        t.next = next;
        Ok(t)
    }

    fn regression_batch(&self, rng: &mut RngStream) -> Result<Outcome> {
        let cfg = &self.cfg;
        let (i_sz, o_sz, _) = cfg.architecture();
        let (b, t_len) = (cfg.batch_size, cfg.episode_len);
        let mut episodes: Vec<Episode> = Vec::with_capacity(b);
        for _ in 0..b {
            episodes.push(match &cfg.tasks {
                TaskSpec::Linear { distribution } => {
                    let task = sample_linear_task(distribution, rng)?;
                    sample_linear_episode(&task, t_len, rng)?
                }
                TaskSpec::Fourier { mode, noise_std } => {
                    let task = sample_fourier_task(mode, *noise_std, rng)?;
                    sample_fourier_episode(&task, t_len, rng)?
                }
                TaskSpec::FixedFourier { task } => sample_fourier_episode(task, t_len, rng)?,
                TaskSpec::Bandit { .. } => unreachable!("validated family"),
            });
        }
        let (inputs, targets) = regression_tensors(&episodes, i_sz, o_sz);
        let p = &self.params[0];
        let mut tape = LstmTape::new(p, b);
        for x in &inputs {
            tape.step(p, x)?;
        }
        let (loss, d_out) = output_gradients(tape.outputs(), &LossSpec::L2 { targets: &targets })?;
        Ok(Outcome {
            metric: loss,
            grads: vec![tape.backward(p, &d_out)?],
        })
    }

    fn coupled_batch(&mut self, rng: &mut RngStream) -> Result<Outcome> {
        let TaskSpec::Bandit { spec } = &self.cfg.tasks else { unreachable!() };
        let (kc, ka) = (spec.num_contexts, spec.num_actions);
        let (b, t_len) = (self.cfg.batch_size, self.cfg.episode_len);
        let tasks: Vec<BanditTask> = (0..b).map(|_| sample_bandit_task(spec, rng)).collect::<Result<_>>()?;
        let p = &self.params[0];
        let mut tape = LstmTape::new(p, b);
        let mut prev: Vec<Option<(usize, f64)>> = vec![None; b];
        let mut actions = vec![vec![0usize; b]; t_len];
        let mut rewards = vec![vec![0.0; b]; t_len];
        for t in 0..t_len {
            let contexts: Vec<usize> = tasks.iter().map(|task| sample_context(task, rng)).collect();
            let mut x = Matrix::zeros(b, kc + ka + 1);
            for r in 0..b {
                fill_bandit_input(x.row_mut(r), Some((contexts[r], kc)), prev[r], ka);
            }
            let out = tape.step(p, &x)?.clone();
            for r in 0..b {
                let a = rng.categorical(&softmax(out.row(r)));
                let rew = bandit_reward(&tasks[r], contexts[r], a, rng)?;
                actions[t][r] = a;
                rewards[t][r] = rew;
                prev[r] = Some((a, rew));
            }
        }
        let baseline = self.baseline.first_mut();
        let (metric, returns) = returns_to_go(&rewards, self.cfg.discount, baseline, self.cfg.baseline_decay);
        let (_, d_out) = output_gradients(
            tape.outputs(),
            &LossSpec::Reinforce {
                actions: &actions,
                returns: &returns,
            },
        )?;
        Ok(Outcome {
            metric,
            grads: vec![tape.backward(p, &d_out)?],
        })
    }

    fn decoupled_batch(&mut self, rng: &mut RngStream) -> Result<Outcome> {
        let TaskSpec::Bandit { spec } = &self.cfg.tasks else { unreachable!() };
        let ka = spec.num_actions;
        let (b, t_len) = (self.cfg.batch_size, self.cfg.episode_len);
        let tasks: Vec<BanditTask> = (0..b).map(|_| sample_bandit_task(spec, rng)).collect::<Result<_>>()?;
        let mut grads = Vec::with_capacity(self.params.len());
        let mut metric = 0.0;
        for (c, p) in self.params.iter().enumerate() {
            let mut tape = LstmTape::new(p, b);
            let mut prev: Vec<Option<(usize, f64)>> = vec![None; b];
            let mut actions = vec![vec![0usize; b]; t_len];
            let mut rewards = vec![vec![0.0; b]; t_len];
            for t in 0..t_len {
                let mut x = Matrix::zeros(b, ka + 1);
                for r in 0..b {
                    fill_bandit_input(x.row_mut(r), None, prev[r], ka);
                }
                let out = tape.step(p, &x)?.clone();
                for r in 0..b {
                    let a = rng.categorical(&softmax(out.row(r)));
                    let rew = bandit_reward(&tasks[r], c, a, rng)?;
                    actions[t][r] = a;
                    rewards[t][r] = rew;
                    prev[r] = Some((a, rew));
                }
            }
            let baseline = self.baseline.get_mut(c);
            let (m, returns) = returns_to_go(&rewards, self.cfg.discount, baseline, self.cfg.baseline_decay);
            metric += m;
            let (_, d_out) = output_gradients(
                tape.outputs(),
                &LossSpec::Reinforce {
                    actions: &actions,
                    returns: &returns,
                },
            )?;
            grads.push(tape.backward(p, &d_out)?);
        }
        Ok(Outcome {
            metric: metric / self.params.len() as f64,
            grads,
        })
    }
}

/// `[x_t, y_{t−1}]` inputs and `y_t` targets, one B×· matrix per step.
pub(crate) fn regression_tensors(episodes: &[Episode], i_sz: usize, o_sz: usize) -> (Vec<Matrix>, Vec<Matrix>) {
    let b = episodes.len();
    let t_len = episodes[0].len();
    let nx = i_sz - o_sz;
    let mut inputs = Vec::with_capacity(t_len);
    let mut targets = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let mut x = Matrix::zeros(b, i_sz);
        let mut y = Matrix::zeros(b, o_sz);
        for (r, ep) in episodes.iter().enumerate() {
            let row = x.row_mut(r);
            row[..nx].copy_from_slice(&ep.inputs[t]);
            if t > 0 {
                row[nx..].copy_from_slice(&ep.targets[t - 1]);
            }
            y.row_mut(r).copy_from_slice(&ep.targets[t]);
        }
        inputs.push(x);
        targets.push(y);
    }
    (inputs, targets)
}

/// `[onehot(c)?, onehot(a_{t−1}), r_{t−1}]`, zero action and reward at t = 1.
pub(crate) fn fill_bandit_input(row: &mut [f64], context: Option<(usize, usize)>, prev: Option<(usize, f64)>, ka: usize) {
    row.fill(0.0);
    let off = match context {
        Some((c, kc)) => {
            row[c] = 1.0;
            kc
        }
        None => 0,
    };
    if let Some((a, r)) = prev {
        row[off + a] = 1.0;
        row[off + ka] = r;
    }
}

/// Mean reward per step and discounted returns-to-go `rets[t][b]`, less the
/// per-step baseline when one is kept (the baseline is then updated).
fn returns_to_go(
    rewards: &[Vec<f64>],
    discount: f64,
    baseline: Option<&mut Vec<f64>>,
    decay: Option<f64>,
) -> (f64, Vec<Vec<f64>>) {
    let t_len = rewards.len();
    let b = rewards[0].len();
    let mut rets = vec![vec![0.0; b]; t_len];
    let mut acc = vec![0.0; b];
    for t in (0..t_len).rev() {
        for r in 0..b {
            acc[r] = rewards[t][r] + discount * acc[r];
            rets[t][r] = acc[r];
        }
    }
    let total: f64 = rewards.iter().flatten().sum();
    if let (Some(base), Some(d)) = (baseline, decay) {
        for (t, row) in rets.iter_mut().enumerate() {
            let mean = row.iter().sum::<f64>() / b as f64;
            for v in row.iter_mut() {
                *v -= base[t];
            }
            base[t] = d * base[t] + (1.0 - d) * mean;
        }
    }
    (total / (b * t_len) as f64, rets)
}

fn train(cfg: &MetaTrainConfig, rng: &RngStream) -> Result<Vec<MetaCheckpoint>> {
    MetaTrainer::new(cfg, rng)?.run()
}

/// Outer-train a regression Meta-Learner; returns the scheduled checkpoints.
pub fn outer_train_regression(cfg: &MetaTrainConfig, rng: &RngStream) -> Result<Vec<MetaCheckpoint>> {
    if !matches!(cfg.family, MetaFamily::Linear | MetaFamily::Fourier) {
        return Err(Error::FamilyMismatch(format!("{:?} is not a regression family", cfg.family)));
    }
    train(cfg, rng)
}

/// Outer-train a bandit Meta-Learner with REINFORCE.
pub fn outer_train_bandit(cfg: &MetaTrainConfig, rng: &RngStream) -> Result<Vec<MetaCheckpoint>> {
    if !cfg.family.is_bandit() {
        return Err(Error::FamilyMismatch(format!("{:?} is not a bandit family", cfg.family)));
    }
    train(cfg, rng)
}
