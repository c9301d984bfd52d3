use super::{LearnerConfig, LearnerFamily, LearnerTrace, Payload, Snapshot};
use crate::analysis::probe_grid;
use crate::error::{Error, PartialRun, Result};
use crate::metalearners::{self, MetaFamily, MetaTrainConfig, TaskSpec};
use crate::nets::{mlp_forward_batch, mlp_l2_grad, MlpParams, Parameters};
use crate::numerics::{least_squares, Matrix, RngStream};
use crate::tasks::{eval_fourier, FourierTask, LinearTask, LinearTaskMode};

fn diverged(step: usize, trace: LearnerTrace) -> Error {
    Error::Diverged {
        step,
        partial: Box::new(PartialRun::Learner(trace)),
    }
}

fn build_net(cfg: &LearnerConfig, input: usize, output: usize, rng: &mut RngStream) -> Result<MlpParams> {
    let mut sizes = vec![input];
    sizes.extend_from_slice(&cfg.hidden);
    sizes.push(output);
    MlpParams::init(&sizes, cfg.activation, cfg.init, rng)
}

/// Ŵ of the network: the exact layer product when every layer is linear,
/// otherwise a least-squares fit to its outputs on fresh Gaussian inputs.
fn effective_map(net: &MlpParams, samples: usize, rng: &mut RngStream) -> Result<Matrix> {
    if let Some(w) = net.effective_matrix() {
        return Ok(w);
    }
    let x = Matrix::from_fn(samples, net.input_dim(), |_, _| rng.normal());
    let (y, _) = mlp_forward_batch(net, &x)?;
    least_squares(&x, &y)
}

/// Deep-network Learner on one linear regression task.
pub fn train_linear_learner(task: &LinearTask, cfg: &LearnerConfig, rng: &mut RngStream) -> Result<LearnerTrace> {
    cfg.expect_family(LearnerFamily::LinearRegression)?;
    cfg.validate()?;
    task.validate()?;
    let (nx, ny) = (task.nx(), task.ny());
    let mut probe_rng = rng.substream(u64::MAX);
    let mut net = build_net(cfg, nx, ny, rng)?;
    let mut opt = cfg.optimizer.state(net.num_params());
    let schedule = cfg.schedule.steps(cfg.steps);
    let mut next = schedule.iter().peekable();
    let mut trace = LearnerTrace::new(cfg.family);
    let b = cfg.batch_size;

    for step in 0..=cfg.steps {
        let x = Matrix::from_fn(b, nx, |_, _| rng.normal());
        let mut y = x.matmul_t(&task.w)?;
        if task.noise_std > 0.0 {
            for v in y.as_mut_slice() {
                *v += task.noise_std * rng.normal();
            }
        }
        let (loss, grads) = mlp_l2_grad(&net, &x, &y)?;
        if !loss.is_finite() || !net.is_finite() {
            return Err(diverged(step, trace));
        }
        if next.peek() == Some(&&step) {
            next.next();
            trace.snapshots.push(Snapshot {
                step,
                value: loss,
                payload: Payload::Effective(effective_map(&net, cfg.probe_samples, &mut probe_rng)?),
            });
        }
        if step < cfg.steps {
            opt.apply(&mut net, &grads);
        }
    }
    Ok(trace)
}

/// Outputs of `net` on the probe grid.
pub(crate) fn probe_outputs(net: &MlpParams) -> Result<Vec<f64>> {
    let grid = probe_grid();
    let x = Matrix::from_vec(grid.len(), 1, grid)?;
    Ok(mlp_forward_batch(net, &x)?.0.into_vec())
}

/// Deep ReLU Learner on one Fourier-series regression task.
pub fn train_fourier_learner(task: &FourierTask, cfg: &LearnerConfig, rng: &mut RngStream) -> Result<LearnerTrace> {
    cfg.expect_family(LearnerFamily::FourierRegression)?;
    cfg.validate()?;
    task.validate()?;
    let mut net = build_net(cfg, 1, 1, rng)?;
    let mut opt = cfg.optimizer.state(net.num_params());
    let schedule = cfg.schedule.steps(cfg.steps);
    let mut next = schedule.iter().peekable();
    let mut trace = LearnerTrace::new(cfg.family);
    let b = cfg.batch_size;

    for step in 0..=cfg.steps {
        let x = Matrix::from_fn(b, 1, |_, _| rng.uniform_range(-0.5, 0.5));
        let mut y = Matrix::from_fn(b, 1, |i, _| eval_fourier(task, x.get(i, 0)));
        if task.noise_std > 0.0 {
            for v in y.as_mut_slice() {
                *v += task.noise_std * rng.normal();
            }
        }
        let (loss, grads) = mlp_l2_grad(&net, &x, &y)?;
        if !loss.is_finite() || !net.is_finite() {
            return Err(diverged(step, trace));
        }
        if next.peek() == Some(&&step) {
            next.next();
            trace.snapshots.push(Snapshot {
                step,
                value: loss,
                payload: Payload::Probe(probe_outputs(&net)?),
            });
        }
        if step < cfg.steps {
            opt.apply(&mut net, &grads);
        }
    }
    Ok(trace)
}

/// An LSTM trained as a Learner: the outer loop of a Meta-Learner run on a
/// degenerate distribution holding one fixed task. Each snapshot is the
/// function expressed at the final step of a fresh episode.
pub fn train_lstm_control(cfg: &MetaTrainConfig, rng: &mut RngStream) -> Result<LearnerTrace> {
    let fixed_linear = match (&cfg.family, &cfg.tasks) {
        (MetaFamily::Linear, TaskSpec::Linear { distribution: d }) => match &d.mode {
            LinearTaskMode::FixedTask { w } => Some(LinearTask::new(w.clone(), d.noise_std)?),
            _ => None,
        },
        _ => None,
    };
    let fixed_fourier = match (&cfg.family, &cfg.tasks) {
        (MetaFamily::Fourier, TaskSpec::FixedFourier { task }) => Some(task.clone()),
        _ => None,
    };
    if fixed_linear.is_none() && fixed_fourier.is_none() {
        return Err(Error::FamilyMismatch(
            "the LSTM control needs a fixed linear or fixed Fourier task".into(),
        ));
    }
    let mut probe_rng = rng.substream(u64::MAX);
    let checkpoints = metalearners::outer_train_regression(cfg, rng)?;
    let mut trace = LearnerTrace::new(LearnerFamily::LstmControl);
    for ck in &checkpoints {
        let net = &ck.params[0];
        let payload = if let Some(task) = &fixed_linear {
            let inner = metalearners::probe_inner_linear(net, task, cfg.episode_len, &mut probe_rng)?;
            let last = inner.steps.last().expect("episode has steps");
            Payload::Effective(Matrix::from_vec(task.ny(), task.nx(), last.clone())?)
        } else {
            let task = fixed_fourier.as_ref().expect("checked above");
            let inner = metalearners::probe_inner_fourier(net, task, cfg.episode_len, &mut probe_rng)?;
            Payload::Probe(inner.steps.last().expect("episode has steps").clone())
        };
        trace.snapshots.push(Snapshot {
            step: ck.step,
            value: ck.metric,
            payload,
        });
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::Activation;
    use crate::learners::Schedule;
    use crate::nets::Init;

    #[test]
    fn zero_init_zero_steps() {
        let task = LinearTask::new(Matrix::diag(&[3.0, 0.06]), 0.01).unwrap();
        let mut cfg = LearnerConfig::linear(2);
        cfg.init = Init::Zeros;
        cfg.steps = 1;
        cfg.schedule = Schedule::Explicit { steps: vec![0] };
        let tr = train_linear_learner(&task, &cfg, &mut RngStream::new(0, 0)).unwrap();
        assert_eq!(tr.snapshots.len(), 1);
        match &tr.snapshots[0].payload {
            Payload::Effective(w) => assert_eq!(w.max_abs(), 0.0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn family_checked() {
        let task = LinearTask::new(Matrix::identity(2), 0.0).unwrap();
        let cfg = LearnerConfig::fourier();
        assert!(matches!(
            train_linear_learner(&task, &cfg, &mut RngStream::new(0, 0)),
            Err(Error::FamilyMismatch(_))
        ));
    }

    #[test]
    fn divergence_is_typed() {
        let task = LinearTask::new(Matrix::diag(&[30.0, 20.0]), 0.0).unwrap();
        let mut cfg = LearnerConfig::linear(2);
        cfg.optimizer = crate::nets::Optimizer::Sgd { lr: 5.0 };
        cfg.steps = 200;
        match train_linear_learner(&task, &cfg, &mut RngStream::new(1, 0)) {
            Err(Error::Diverged { step, partial }) => {
                assert!(step > 0);
                let PartialRun::Learner(tr) = *partial else { panic!() };
                assert!(tr.last_step().unwrap() < step);
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn zero_net_probe_is_bias() {
        let mut rng = RngStream::new(0, 0);
        let mut net = MlpParams::init(&[1, 8, 8, 1], Activation::Relu, Init::Zeros, &mut rng).unwrap();
        net.layers[2].bias[0] = 0.7;
        assert!(probe_outputs(&net).unwrap().iter().all(|v| *v == 0.7));
    }
}
