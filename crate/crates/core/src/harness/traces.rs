//! Trace payloads and the trace-directory index.
//!
//! Every payload carries the target it is measured against, so a trace file
//! alone determines its progress measure:
//! linear `shat_k, s_k`; Fourier `y_j` on the probe grid plus `amp_k,
//! phase_k`; bandit `q_c{c}`, the probability of the correct arm.

use serde::{Deserialize, Serialize};

use super::ExperimentId;
use crate::analysis::csvio::spectrum_columns;
use crate::analysis::{effective_spectrum, fourier_projection, probe_grid, ProjectionKind, PROBE_POINTS};
use crate::error::{Error, Result};
use crate::numerics::{dft_real, svd, Matrix, Svd};
use crate::tasks::{eval_fourier, BanditTask, FourierTask, LinearTask};

pub const INDEX_FILE: &str = "index.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceKind {
    /// `run_id, step, loss_or_reward, ...` over training steps.
    Learner,
    /// `meta_run_id, checkpoint_step, episode_id, t, ...` over inner steps.
    Inner,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceFamily {
    Linear,
    Fourier,
    Bandit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceEntry {
    pub file: String,
    pub kind: TraceKind,
    pub family: TraceFamily,
    /// Figure id; panels are written as `fig<id>_<panel>.csv`.
    pub figure: String,
    /// Present for checkpoint sweeps: the cutoff for inner thresholds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep_cutoff: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceIndex {
    pub experiment: ExperimentId,
    pub cutoffs: Vec<f64>,
    #[serde(default)]
    pub projection: ProjectionKind,
    pub traces: Vec<TraceEntry>,
}

pub(crate) fn linear_columns(k: usize) -> Vec<String> {
    let mut c = spectrum_columns("shat", k);
    c.extend(spectrum_columns("s", k));
    c
}

/// `ŝ` of `w_hat` in the task's singular basis, followed by `s`.
pub(crate) fn linear_payload(w_hat: &Matrix, f: &Svd) -> Result<Vec<f64>> {
    let mut p = effective_spectrum(w_hat, &f.u, &f.v)?;
    p.extend_from_slice(&f.s);
    Ok(p)
}

pub(crate) fn task_svd(task: &LinearTask) -> Result<Svd> {
    svd(&task.w)
}

pub(crate) fn fourier_columns(k: usize) -> Vec<String> {
    let mut c = spectrum_columns("y", PROBE_POINTS);
    c.extend(spectrum_columns("amp", k));
    c.extend(spectrum_columns("phase", k));
    c
}

pub(crate) fn fourier_payload(y: &[f64], task: &FourierTask) -> Vec<f64> {
    let mut p = y.to_vec();
    p.extend_from_slice(&task.amplitudes);
    p.extend_from_slice(&task.phases);
    p
}

pub(crate) fn bandit_columns(kc: usize) -> Vec<String> {
    (0..kc).map(|c| format!("q_c{c}")).collect()
}

/// π(correct | c) per context from a row-major `K_c × K_a` table.
pub(crate) fn bandit_payload(table: &[f64], task: &BanditTask) -> Vec<f64> {
    let ka = task.num_actions;
    task.correct_actions
        .iter()
        .enumerate()
        .map(|(c, &a)| table[c * ka + a])
        .collect()
}

fn columns_err(family: TraceFamily, columns: &[String]) -> Error {
    Error::Trace(format!("payload columns {columns:?} do not form a {family:?} trace"))
}

/// Nominal progress `q_k` of one payload row; `None` marks a mode with no
/// defined proportion (zero target).
pub fn progress(
    family: TraceFamily,
    columns: &[String],
    payload: &[f64],
    projection: ProjectionKind,
) -> Result<Vec<Option<f64>>> {
    if columns.len() != payload.len() {
        return Err(Error::Trace("payload width differs from its header".into()));
    }
    match family {
        TraceFamily::Linear => {
            let k = columns.len() / 2;
            if columns.len() % 2 != 0 || columns != linear_columns(k).as_slice() {
                return Err(columns_err(family, columns));
            }
            Ok(payload[..k]
                .iter()
                .zip(&payload[k..])
                .map(|(sh, s)| (*s != 0.0).then(|| sh / s))
                .collect())
        }
        TraceFamily::Fourier => {
            let rest = columns.len().saturating_sub(PROBE_POINTS);
            let k = rest / 2;
            if columns.len() < PROBE_POINTS || rest % 2 != 0 || columns != fourier_columns(k).as_slice() {
                return Err(columns_err(family, columns));
            }
            let task = FourierTask {
                amplitudes: payload[PROBE_POINTS..PROBE_POINTS + k].to_vec(),
                phases: payload[PROBE_POINTS + k..].to_vec(),
                noise_std: 0.0,
            };
            let truth: Vec<f64> = probe_grid().into_iter().map(|x| eval_fourier(&task, x)).collect();
            let g = dft_real(&truth)?;
            let g_hat = dft_real(&payload[..PROBE_POINTS])?;
            let max_k = g.len() - 1;
            (1..=k)
                .map(|m| {
                    if m > max_k || g.coefficients[m].norm_sqr() <= 1e-24 {
                        return Ok(None);
                    }
                    Ok(Some(fourier_projection(&g_hat, &g, &[m], projection)?[0]))
                })
                .collect()
        }
        TraceFamily::Bandit => {
            if columns != bandit_columns(columns.len()).as_slice() {
                return Err(columns_err(family, columns));
            }
            Ok(payload.iter().map(|q| Some(*q)).collect())
        }
    }
}
