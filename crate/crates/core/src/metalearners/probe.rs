use super::train::fill_bandit_input;
use crate::analysis::probe_grid;
use crate::error::{shape_err, Error, Result};
use crate::nets::{batch_step, lstm_step, softmax, BatchState, LstmParams, LstmState};
use crate::numerics::{least_squares, Matrix, RngStream};
use crate::tasks::{
    bandit_reward, sample_context, sample_fourier_episode, sample_linear_episode, BanditStep, BanditTask, Episode,
    FourierTask, LinearTask,
};

/// Fresh Gaussian probe inputs per inner step for the linear readout.
pub const PROBE_SAMPLES: usize = 100;

/// What a frozen Meta-Learner expresses at each inner step t = 1..=T.
#[derive(Debug, Clone, PartialEq)]
pub struct InnerTrace {
    /// Row-major Ŵ_t, probe-grid outputs, or the `K_c × K_a` policy table.
    pub steps: Vec<Vec<f64>>,
    /// Observation sequence the regression probes were conditioned on.
    pub episode: Option<Episode>,
    /// Behavioural rollout of a bandit probe.
    pub behaviour: Vec<BanditStep>,
}

fn check_regression(params: &LstmParams, nx: usize, ny: usize) -> Result<()> {
    params.check_shapes()?;
    if params.input_size != nx + ny || params.output_size != ny {
        return Err(Error::FamilyMismatch(format!(
            "LSTM {}→{} cannot read a {nx}→{ny} regression task",
            params.input_size, params.output_size
        )));
    }
    Ok(())
}

/// Drive the LSTM through the episode; before consuming observation t,
/// evaluate the frozen state on `probe(t)` inputs paired with `y_{t−1}` and
/// hand the outputs to `read`.
fn probe_regression(
    params: &LstmParams,
    ep: &Episode,
    mut probe: impl FnMut() -> Matrix,
    mut read: impl FnMut(&Matrix, &Matrix) -> Result<Vec<f64>>,
) -> Result<Vec<Vec<f64>>> {
    let ny = params.output_size;
    let nx = params.input_size - ny;
    let mut state = LstmState::zeros(params.hidden_size);
    let mut y_prev = vec![0.0; ny];
    let mut steps = Vec::with_capacity(ep.len());
    for t in 0..ep.len() {
        let xp = probe();
        let n = xp.rows();
        let mut input = Matrix::zeros(n, nx + ny);
        for r in 0..n {
            let row = input.row_mut(r);
            row[..nx].copy_from_slice(xp.row(r));
            row[nx..].copy_from_slice(&y_prev);
        }
        let (_, out) = batch_step(params, &BatchState::broadcast(&state, n), &input)?;
        steps.push(read(&xp, &out)?);

        let mut obs = ep.inputs[t].clone();
        obs.extend_from_slice(&y_prev);
        state = lstm_step(params, &state, &obs)?.0;
        y_prev.clone_from(&ep.targets[t]);
    }
    Ok(steps)
}

/// Ŵ_t for t = 1..=len: least-squares fit to the frozen state's outputs on
/// fresh Gaussian probe inputs, after observations 1..t−1.
pub fn probe_inner_linear(params: &LstmParams, task: &LinearTask, len: usize, rng: &mut RngStream) -> Result<InnerTrace> {
    task.validate()?;
    let (nx, ny) = (task.nx(), task.ny());
    check_regression(params, nx, ny)?;
    let ep = sample_linear_episode(task, len, rng)?;
    let steps = probe_regression(
        params,
        &ep,
        || Matrix::from_fn(PROBE_SAMPLES, nx, |_, _| rng.normal()),
        |x, y| Ok(least_squares(x, y)?.into_vec()),
    )?;
    Ok(InnerTrace {
        steps,
        episode: Some(ep),
        behaviour: Vec::new(),
    })
}

/// Probe-grid outputs for t = 1..=len.
pub fn probe_inner_fourier(params: &LstmParams, task: &FourierTask, len: usize, rng: &mut RngStream) -> Result<InnerTrace> {
    task.validate()?;
    check_regression(params, 1, 1)?;
    let ep = sample_fourier_episode(task, len, rng)?;
    let grid = probe_grid();
    let xg = Matrix::from_vec(grid.len(), 1, grid)?;
    let steps = probe_regression(params, &ep, || xg.clone(), |_, y| Ok(y.as_slice().to_vec()))?;
    Ok(InnerTrace {
        steps,
        episode: Some(ep),
        behaviour: Vec::new(),
    })
}

fn check_bandit(params: &[LstmParams], coupled: bool, task: &BanditTask) -> Result<()> {
    task.validate()?;
    let (kc, ka) = (task.num_contexts(), task.num_actions);
    let ok = if coupled {
        params.len() == 1 && params[0].input_size == kc + ka + 1
    } else {
        params.len() == kc && params.iter().all(|p| p.input_size == ka + 1)
    } && params.iter().all(|p| p.output_size == ka);
    if !ok {
        return Err(Error::FamilyMismatch(format!(
            "{} net(s) do not fit a {} bandit with {kc} contexts and {ka} actions",
            params.len(),
            if coupled { "coupled" } else { "decoupled" }
        )));
    }
    for p in params {
        p.check_shapes()?;
    }
    Ok(())
}

/// One behavioural episode, optionally recording the policy of every
/// context at every step by forking the recurrent state.
fn rollout(
    params: &[LstmParams],
    coupled: bool,
    task: &BanditTask,
    len: usize,
    rng: &mut RngStream,
    record: bool,
) -> Result<InnerTrace> {
    check_bandit(params, coupled, task)?;
    if len == 0 {
        return shape_err("episode length must be ≥ 1");
    }
    let (kc, ka) = (task.num_contexts(), task.num_actions);
    let nets = params.len();
    let mut states: Vec<LstmState> = params.iter().map(|p| LstmState::zeros(p.hidden_size)).collect();
    let mut prev: Vec<Option<(usize, f64)>> = vec![None; nets];
    let mut steps = Vec::new();
    let mut behaviour = Vec::with_capacity(len);
    let input_for = |c: usize, prev: Option<(usize, f64)>| {
        let mut row = vec![0.0; if coupled { kc + ka + 1 } else { ka + 1 }];
        fill_bandit_input(&mut row, coupled.then_some((c, kc)), prev, ka);
        row
    };

    for _ in 0..len {
        let ct = sample_context(task, rng);
        let net = if coupled { 0 } else { ct };
        let (next, logits) = if record {
            let mut table = Matrix::zeros(kc, ka);
            let mut chosen = None;
            if coupled {
                let rows: Vec<Vec<f64>> = (0..kc).map(|c| input_for(c, prev[0])).collect();
                let (forks, out) = batch_step(&params[0], &BatchState::broadcast(&states[0], kc), &Matrix::from_rows(&rows)?)?;
                for c in 0..kc {
                    table.row_mut(c).copy_from_slice(&softmax(out.row(c)));
                }
                chosen = Some((forks.row(ct), out.row(ct).to_vec()));
            } else {
                for c in 0..kc {
                    let x = Matrix::from_rows(&[input_for(c, prev[c])])?;
                    let (fork, out) = batch_step(&params[c], &BatchState::broadcast(&states[c], 1), &x)?;
                    table.row_mut(c).copy_from_slice(&softmax(out.row(0)));
                    if c == ct {
                        chosen = Some((fork.row(0), out.row(0).to_vec()));
                    }
                }
            }
            steps.push(table.into_vec());
            chosen.expect("visited context is forked")
        } else {
            let x = Matrix::from_rows(&[input_for(ct, prev[net])])?;
            let (s, out) = batch_step(&params[net], &BatchState::broadcast(&states[net], 1), &x)?;
            (s.row(0), out.row(0).to_vec())
        };
        let action = rng.categorical(&softmax(&logits));
        let reward = bandit_reward(task, ct, action, rng)?;
        states[net] = next;
        prev[net] = Some((action, reward));
        behaviour.push(BanditStep {
            context: ct,
            action,
            reward,
        });
    }
    Ok(InnerTrace {
        steps,
        episode: None,
        behaviour,
    })
}

/// Behavioural rollout plus, at each step, π_t(·|c) for every context `c`
/// from a fork of the recurrent state. Forks never feed back into the
/// rollout.
pub fn probe_inner_bandit(
    params: &[LstmParams],
    coupled: bool,
    task: &BanditTask,
    len: usize,
    rng: &mut RngStream,
) -> Result<InnerTrace> {
    rollout(params, coupled, task, len, rng, true)
}

/// The same rollout with no forks.
pub fn run_bandit_episode(
    params: &[LstmParams],
    coupled: bool,
    task: &BanditTask,
    len: usize,
    rng: &mut RngStream,
) -> Result<Vec<BanditStep>> {
    Ok(rollout(params, coupled, task, len, rng, false)?.behaviour)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn task() -> BanditTask {
        BanditTask {
            num_actions: 5,
            correct_actions: vec![1, 1, 4, 0, 2],
            p_correct: 0.8,
            p_incorrect: 0.2,
        }
    }

    #[test]
    fn probing_does_not_perturb_the_rollout() {
        for coupled in [true, false] {
            let mut init = RngStream::new(8, 0);
            let nets: Vec<LstmParams> = (0..if coupled { 1 } else { 5 })
                .map(|_| LstmParams::init(if coupled { 11 } else { 6 }, 7, 5, &mut init).unwrap())
                .collect();
            let probed = probe_inner_bandit(&nets, coupled, &task(), 50, &mut RngStream::new(2, 2)).unwrap();
            let plain = run_bandit_episode(&nets, coupled, &task(), 50, &mut RngStream::new(2, 2)).unwrap();
            assert_eq!(probed.behaviour, plain);
            assert_eq!(probed.steps.len(), 50);
            for table in &probed.steps {
                for row in table.chunks(5) {
                    assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn zero_params_give_zero_linear_map() {
        let p = LstmParams::zeros(4, 5, 2);
        let task = LinearTask::new(Matrix::diag(&[2.0, 1.0]), 0.01).unwrap();
        let tr = probe_inner_linear(&p, &task, 6, &mut RngStream::new(0, 0)).unwrap();
        assert_eq!(tr.steps.len(), 6);
        assert!(tr.steps.iter().flatten().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn linear_probe_is_reproducible() {
        let p = LstmParams::init(4, 6, 2, &mut RngStream::new(1, 0)).unwrap();
        let task = LinearTask::new(Matrix::diag(&[2.0, 1.0]), 0.01).unwrap();
        let a = probe_inner_linear(&p, &task, 5, &mut RngStream::new(3, 3)).unwrap();
        let b = probe_inner_linear(&p, &task, 5, &mut RngStream::new(3, 3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mismatched_architecture_rejected() {
        let p = LstmParams::zeros(3, 4, 1);
        let task = LinearTask::new(Matrix::identity(2), 0.0).unwrap();
        assert!(matches!(
            probe_inner_linear(&p, &task, 3, &mut RngStream::new(0, 0)),
            Err(Error::FamilyMismatch(_))
        ));
    }
}
