use serde::{Deserialize, Serialize};

use super::{probe_inner_bandit, probe_inner_fourier, probe_inner_linear, MetaCheckpoint, MetaFamily, MetaTrainConfig, TaskSpec};
use crate::analysis::{
    effective_spectrum, fourier_projection, mean_curves, rank_order_contexts, spectrum_proportions, steps_to_threshold,
    task_spectrum, ProjectionKind, Threshold,
};
use crate::error::{invalid, Error, Result};
use crate::nets::LstmParams;
use crate::numerics::{dft_real, svd, Matrix, RngStream};
use crate::tasks::{sample_bandit_task, sample_fourier_task, sample_linear_task};

/// Probe tasks, episode count and threshold for a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub tasks: TaskSpec,
    pub episodes: usize,
    pub cutoff: f64,
    #[serde(default)]
    pub projection: ProjectionKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub step: usize,
    /// Episode-mean `q[t][k]` for inner steps t = 1..=T.
    pub mean_q: Vec<Vec<f64>>,
    /// First inner step (1-based) with mean `q_k > cutoff`, per k.
    pub inner: Vec<Threshold>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub rows: Vec<SweepRow>,
    /// First checkpoint step at which mode k reaches the cutoff within the episode.
    pub outer: Vec<Threshold>,
}

/// Per-episode progress curves `q[e][t][k]` of a frozen Meta-Learner.
///
/// Linear: proportions ŝ_k/s_k of the sampled task's spectrum. Fourier:
/// projections onto modes 1..=K. Bandits: π_t(correct | c), rank-ordered
/// per episode by time average.
pub fn inner_q_curves(
    params: &[LstmParams],
    family: MetaFamily,
    tasks: &TaskSpec,
    len: usize,
    episodes: usize,
    projection: ProjectionKind,
    rng: &mut RngStream,
) -> Result<Vec<Vec<Vec<f64>>>> {
    let mut out = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        out.push(match (family, tasks) {
            (MetaFamily::Linear, TaskSpec::Linear { distribution }) => {
                let task = sample_linear_task(distribution, rng)?;
                let f = svd(&task.w)?;
                let tr = probe_inner_linear(&params[0], &task, len, rng)?;
                tr.steps
                    .iter()
                    .map(|w| {
                        let w_hat = Matrix::from_vec(task.ny(), task.nx(), w.clone())?;
                        let s_hat = effective_spectrum(&w_hat, &f.u, &f.v)?;
                        spectrum_proportions(&s_hat, &f.s)?
                            .into_iter()
                            .map(|q| q.ok_or_else(|| Error::InvalidInput("zero singular value has no proportion".into())))
                            .collect()
                    })
                    .collect::<Result<_>>()?
            }
            (MetaFamily::Fourier, TaskSpec::Fourier { .. } | TaskSpec::FixedFourier { .. }) => {
                let task = match tasks {
                    TaskSpec::Fourier { mode, noise_std } => sample_fourier_task(mode, *noise_std, rng)?,
                    TaskSpec::FixedFourier { task } => task.clone(),
                    _ => unreachable!(),
                };
                let g = task_spectrum(&task)?;
                let modes: Vec<usize> = (1..=task.modes()).collect();
                let tr = probe_inner_fourier(&params[0], &task, len, rng)?;
                tr.steps
                    .iter()
                    .map(|ys| fourier_projection(&dft_real(ys)?, &g, &modes, projection))
                    .collect::<Result<_>>()?
            }
            (MetaFamily::BanditCoupled | MetaFamily::BanditDecoupled, TaskSpec::Bandit { spec }) => {
                let task = sample_bandit_task(spec, rng)?;
                let coupled = family == MetaFamily::BanditCoupled;
                let tr = probe_inner_bandit(params, coupled, &task, len, rng)?;
                let ka = task.num_actions;
                let q: Vec<Vec<f64>> = tr
                    .steps
                    .iter()
                    .map(|table| {
                        task.correct_actions
                            .iter()
                            .enumerate()
                            .map(|(c, &a)| table[c * ka + a])
                            .collect()
                    })
                    .collect();
                rank_order_contexts(&q, None)?.q
            }
            _ => {
                return Err(Error::FamilyMismatch(format!(
                    "probe tasks do not match the {family:?} family"
                )))
            }
        });
    }
    Ok(out)
}

/// First inner step (1-based) at which each column of `mean_q[t][k]`
/// exceeds `cutoff`.
pub fn inner_thresholds(mean_q: &[Vec<f64>], cutoff: f64) -> Result<Vec<Threshold>> {
    let steps: Vec<usize> = (1..=mean_q.len()).collect();
    let k = mean_q.first().map_or(0, Vec::len);
    (0..k)
        .map(|j| {
            let col: Vec<f64> = mean_q.iter().map(|row| row[j]).collect();
            steps_to_threshold(&steps, &col, cutoff)
        })
        .collect()
}

/// Run the family's inner probe at every checkpoint and record when each
/// mode, frequency or ranked context reaches the cutoff.
pub fn outer_dynamics_sweep(
    checkpoints: &[MetaCheckpoint],
    cfg: &MetaTrainConfig,
    spec: &SweepSpec,
    rng: &mut RngStream,
) -> Result<Sweep> {
    if spec.episodes == 0 {
        return invalid("sweep needs at least one episode");
    }
    if !(spec.cutoff > 0.0 && spec.cutoff < 1.0) {
        return invalid(format!("cutoff must lie in (0, 1), got {}", spec.cutoff));
    }
    if !spec.tasks.fits(cfg.family) {
        return Err(Error::FamilyMismatch(format!(
            "sweep tasks do not match the {:?} family",
            cfg.family
        )));
    }
    let mut rows = Vec::with_capacity(checkpoints.len());
    for ck in checkpoints {
        cfg.check_params(&ck.params)?;
        // Every checkpoint sees the same probe episodes.
        let mut ep_rng = rng.clone();
        let curves = inner_q_curves(
            &ck.params,
            cfg.family,
            &spec.tasks,
            cfg.episode_len,
            spec.episodes,
            spec.projection,
            &mut ep_rng,
        )?;
        let mean_q = mean_curves(&curves)?;
        let inner = inner_thresholds(&mean_q, spec.cutoff)?;
        rows.push(SweepRow {
            step: ck.step,
            mean_q,
            inner,
        });
    }
    let k = rows.first().map_or(0, |r| r.inner.len());
    let outer = (0..k)
        .map(|j| {
            rows.iter()
                .find(|r| r.inner[j] != Threshold::Unreached)
                .map_or(Threshold::Unreached, |r| Threshold::Reached(r.step))
        })
        .collect();
    Ok(Sweep { rows, outer })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metalearners::{outer_train_regression, CheckpointSchedule};
    use crate::tasks::{FourierMode, LinearTaskDistribution};

    #[test]
    fn untrained_checkpoint_reaches_nothing() {
        let mut cfg = MetaTrainConfig::linear(LinearTaskDistribution::fixed_spectrum(2, vec![3.0, 0.5]));
        cfg.hidden = 8;
        cfg.batch_size = 2;
        cfg.episode_len = 4;
        cfg.updates = 1;
        cfg.checkpoints = CheckpointSchedule::Explicit { steps: vec![0] };
        let cks = outer_train_regression(&cfg, &RngStream::new(0, 0)).unwrap();
        let mut zeroed = cks[0].clone();
        zeroed.params = vec![LstmParams::zeros(4, 8, 2)];
        let spec = SweepSpec {
            tasks: cfg.tasks.clone(),
            episodes: 3,
            cutoff: 0.8,
            projection: ProjectionKind::Phase,
        };
        let sweep = outer_dynamics_sweep(&[zeroed], &cfg, &spec, &mut RngStream::new(1, 0)).unwrap();
        assert_eq!(sweep.rows[0].mean_q.len(), 4);
        assert!(sweep.outer.iter().all(|t| *t == Threshold::Unreached));
    }

    #[test]
    fn family_mismatch_detected() {
        let cfg = MetaTrainConfig::fourier(FourierMode::default());
        let ck = MetaCheckpoint {
            step: 0,
            params: vec![LstmParams::zeros(2, 64, 1)],
            metric: 0.0,
        };
        let spec = SweepSpec {
            tasks: TaskSpec::Linear {
                distribution: LinearTaskDistribution::matrix_normal(2, 1.0),
            },
            episodes: 1,
            cutoff: 0.5,
            projection: ProjectionKind::Phase,
        };
        assert!(matches!(
            outer_dynamics_sweep(&[ck], &cfg, &spec, &mut RngStream::new(0, 0)),
            Err(Error::FamilyMismatch(_))
        ));
    }
}
