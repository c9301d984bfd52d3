use super::{LearnerConfig, LearnerFamily, LearnerTrace, Payload, Snapshot};
use crate::error::{Error, PartialRun, Result};
use crate::nets::{softmax, Init, Parameters, TensorRef};
use crate::numerics::{truncated_normal, Matrix, RngStream};
use crate::tasks::BanditTask;

/// Linear + softmax policy over one-hot contexts.
///
/// Coupled: `π(·|c) = softmax(W c + b)` with one shared bias. Decoupled:
/// one tabular network per context, `π(·|c) = softmax(w_c + b_c)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BanditPolicy {
    /// `K_a × K_c`.
    pub w: Matrix,
    /// `K_a × 1` when coupled, `K_a × K_c` when decoupled.
    pub b: Matrix,
    pub coupled: bool,
}

impl BanditPolicy {
    pub fn init(contexts: usize, actions: usize, coupled: bool, init: Init, rng: &mut RngStream) -> Result<Self> {
        let mut w = Matrix::zeros(actions, contexts);
        let sigma = match init {
            Init::TruncatedNormal { sigma } => Some(sigma),
            Init::FanIn => Some(1.0),
            Init::Zeros => None,
        };
        if let Some(sigma) = sigma {
            for v in w.as_mut_slice() {
                *v = truncated_normal(sigma, rng)?;
            }
        }
        let b = Matrix::zeros(actions, if coupled { 1 } else { contexts });
        Ok(Self { w, b, coupled })
    }

    pub fn num_contexts(&self) -> usize {
        self.w.cols()
    }

    pub fn num_actions(&self) -> usize {
        self.w.rows()
    }

    fn bias_col(&self, c: usize) -> usize {
        if self.coupled {
            0
        } else {
            c
        }
    }

    pub fn logits(&self, c: usize) -> Vec<f64> {
        let bc = self.bias_col(c);
        (0..self.num_actions())
            .map(|a| self.w.get(a, c) + self.b.get(a, bc))
            .collect()
    }

    /// `K_c × K_a` table of π(a|c).
    pub fn table(&self) -> Matrix {
        let kc = self.num_contexts();
        let ka = self.num_actions();
        let mut t = Matrix::zeros(kc, ka);
        for c in 0..kc {
            t.row_mut(c).copy_from_slice(&softmax(&self.logits(c)));
        }
        t
    }
}

impl Parameters for BanditPolicy {
    fn tensors(&self) -> Vec<TensorRef<'_>> {
        vec![
            TensorRef {
                name: "w",
                shape: vec![self.w.rows(), self.w.cols()],
                data: self.w.as_slice(),
            },
            TensorRef {
                name: "b",
                shape: vec![self.b.rows(), self.b.cols()],
                data: self.b.as_slice(),
            },
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.w.as_mut_slice(), self.b.as_mut_slice()]
    }
}

/// Mean probability of the correct action across contexts.
fn mean_correct(task: &BanditTask, table: &Matrix) -> f64 {
    let kc = task.num_contexts();
    (0..kc).map(|c| table.get(c, task.correct_actions[c])).sum::<f64>() / kc as f64
}

/// Multinomial counts by sequential binomials.
fn multinomial(n: u64, probs: &[f64], rng: &mut RngStream, out: &mut [u64]) {
    let mut remaining = n;
    let mut mass = 1.0;
    for (k, (&p, o)) in probs.iter().zip(out.iter_mut()).enumerate() {
        if k + 1 == probs.len() || remaining == 0 {
            *o = remaining;
            remaining = 0;
            continue;
        }
        let cond = if mass > 0.0 { (p / mass).clamp(0.0, 1.0) } else { 0.0 };
        let draw = rng.binomial(remaining, cond);
        *o = draw;
        remaining -= draw;
        mass -= p;
    }
}

fn train_bandit(task: &BanditTask, cfg: &LearnerConfig, coupled: bool, rng: &mut RngStream) -> Result<LearnerTrace> {
    cfg.validate()?;
    task.validate()?;
    let kc = task.num_contexts();
    let ka = task.num_actions;
    let mut policy = BanditPolicy::init(kc, ka, coupled, cfg.init, rng)?;
    let mut opt = cfg.optimizer.state(policy.num_params());
    let schedule = cfg.schedule.steps(cfg.steps);
    let mut next = schedule.iter().peekable();
    let mut trace = LearnerTrace::new(cfg.family);
    let b = cfg.batch_size as u64;
    let context_probs = vec![1.0 / kc as f64; kc];
    let mut n_c = vec![0u64; kc];
    let mut n_a = vec![0u64; ka];
    let mut baseline = 0.0;
    let (pc, pi) = (task.p_correct, task.p_incorrect);

    for step in 0..=cfg.steps {
        let table = policy.table();
        let q = mean_correct(task, &table);
        let expected = q * pc + (1.0 - q) * pi;
        if !expected.is_finite() || !policy.is_finite() {
            return Err(Error::Diverged {
                step,
                partial: Box::new(PartialRun::Learner(trace)),
            });
        }
        let stop = cfg.stop_at.is_some_and(|s| q >= s);
        let scheduled = next.peek() == Some(&&step);
        if scheduled {
            next.next();
        }
        if scheduled || stop || step == cfg.steps {
            trace.snapshots.push(Snapshot {
                step,
                value: expected,
                payload: Payload::Policy(table.clone()),
            });
        }
        if stop || step == cfg.steps {
            break;
        }

        let mut grads = policy.zeros_like();
        let mut reward_sum = 0.0;
        multinomial(b, &context_probs, rng, &mut n_c);
        for c in 0..kc {
            if n_c[c] == 0 {
                continue;
            }
            let pol = table.row(c);
            multinomial(n_c[c], pol, rng, &mut n_a);
            let mut g = vec![0.0; ka];
            for a in 0..ka {
                if n_a[a] == 0 {
                    continue;
                }
                let wins = rng.binomial(n_a[a], task.reward_prob(c, a)) as f64;
                reward_sum += wins;
                let weight = (wins - baseline * n_a[a] as f64) / b as f64;
                for (j, gj) in g.iter_mut().enumerate() {
                    *gj += weight * (pol[j] - if j == a { 1.0 } else { 0.0 });
                }
            }
            let bc = policy.bias_col(c);
            for (a, gj) in g.iter().enumerate() {
                grads.w.set(a, c, grads.w.get(a, c) + gj);
                grads.b.set(a, bc, grads.b.get(a, bc) + gj);
            }
        }
        if let Some(decay) = cfg.baseline_decay {
            baseline = decay * baseline + (1.0 - decay) * reward_sum / b as f64;
        }
        opt.apply(&mut policy, &grads);
    }
    Ok(trace)
}

/// REINFORCE Learner with a shared bias coupling the contexts.
pub fn train_bandit_coupled(task: &BanditTask, cfg: &LearnerConfig, rng: &mut RngStream) -> Result<LearnerTrace> {
    cfg.expect_family(LearnerFamily::BanditCoupled)?;
    train_bandit(task, cfg, true, rng)
}

/// REINFORCE Learner with an independent tabular network per context.
pub fn train_bandit_decoupled(task: &BanditTask, cfg: &LearnerConfig, rng: &mut RngStream) -> Result<LearnerTrace> {
    cfg.expect_family(LearnerFamily::BanditDecoupled)?;
    train_bandit(task, cfg, false, rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn task() -> BanditTask {
        BanditTask {
            num_actions: 5,
            correct_actions: vec![3, 0, 4, 1, 2],
            p_correct: 0.8,
            p_incorrect: 0.2,
        }
    }

    #[test]
    fn init_is_near_uniform() {
        let small = Init::TruncatedNormal { sigma: 0.1 };
        let p = BanditPolicy::init(5, 5, true, small, &mut RngStream::new(0, 0)).unwrap();
        let t = p.table();
        for c in 0..5 {
            let row = t.row(c);
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|v| (v - 0.2).abs() < 0.1), "{row:?}");
        }
    }

    #[test]
    fn multinomial_conserves_count() {
        let mut rng = RngStream::new(5, 0);
        let mut out = [0u64; 4];
        for _ in 0..100 {
            multinomial(200, &[0.1, 0.2, 0.3, 0.4], &mut rng, &mut out);
            assert_eq!(out.iter().sum::<u64>(), 200);
        }
        multinomial(50, &[0.0, 1.0, 0.0], &mut rng, &mut out[..3]);
        assert_eq!(&out[..3], &[0, 50, 0]);
    }

    #[test]
    fn single_arm_is_trivial() {
        let t = BanditTask {
            num_actions: 1,
            correct_actions: vec![0],
            p_correct: 0.8,
            p_incorrect: 0.2,
        };
        let tr = train_bandit_coupled(&t, &LearnerConfig::bandit(true), &mut RngStream::new(0, 0)).unwrap();
        assert_eq!(tr.snapshots.last().unwrap().step, 0);
    }

    #[test]
    fn stops_and_records_final_snapshot() {
        let mut cfg = LearnerConfig::bandit(false);
        cfg.optimizer = crate::nets::Optimizer::Adam { lr: 0.05 };
        cfg.steps = 20_000;
        let tr = train_bandit_decoupled(&task(), &cfg, &mut RngStream::new(1, 0)).unwrap();
        let last = tr.snapshots.last().unwrap();
        assert!(last.step < 20_000);
        let Payload::Policy(table) = &last.payload else { panic!() };
        assert!(mean_correct(&task(), table) >= 0.98);
        assert!(tr.snapshots.windows(2).all(|w| w[0].step < w[1].step));
    }
}
