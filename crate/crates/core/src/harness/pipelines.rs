//! Train and probe stages for each study, writing trace CSVs.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::config::*;
use super::run::SeedEntry;
use super::traces::*;
use super::ExperimentId;
use crate::analysis::csvio::{write_inner, write_learner, InnerRow, LearnerRow};
use crate::analysis::probe_grid;
use crate::error::{Error, PartialRun, Result};
use crate::learners::{
    train_bandit_coupled, train_bandit_decoupled, train_fourier_learner, train_linear_learner, train_lstm_control,
    LearnerTrace, Payload,
};
use crate::nets::LstmParams;
use crate::metalearners::{
    probe_inner_bandit, probe_inner_fourier, probe_inner_linear, MetaCheckpoint, MetaFamily, MetaTrainConfig,
    MetaTrainer, TaskSpec,
};
use crate::numerics::{Matrix, RngStream, Svd};
use crate::oracles::{bayes_bandit_posterior, bayes_linear_posterior, snap_to_bins, FourierOracle, PosteriorMean};
use crate::tasks::{
    bandit_reward, sample_bandit_task, sample_context, sample_fourier_episode, sample_fourier_task,
    sample_linear_episode, sample_linear_task, BanditStep, FourierMode, LinearTaskDistribution, LinearTaskMode,
};

/// Shared state of one run: output root, master seed, the stage being
/// executed and every stream handed out.
pub(crate) struct Ctx {
    pub out: PathBuf,
    pub seed: u64,
    stage: Mutex<&'static str>,
    seeds: Mutex<BTreeMap<String, (u64, BTreeSet<u64>)>>,
}

impl Ctx {
    pub fn new(out: &Path, seed: u64) -> Self {
        Self {
            out: out.to_path_buf(),
            seed,
            stage: Mutex::new("config"),
            seeds: Mutex::new(BTreeMap::new()),
        }
    }

    pub fn set_stage(&self, s: &'static str) {
        *self.stage.lock().expect("stage lock") = s;
    }

    pub fn stage(&self) -> &'static str {
        *self.stage.lock().expect("stage lock")
    }

    /// The stream for `(role, index)`; the role name fixes the stream id.
    pub fn stream(&self, role: &str, index: u64) -> RngStream {
        let digest = Sha256::digest(role.as_bytes());
        let stream = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
        self.seeds
            .lock()
            .expect("seed lock")
            .entry(role.to_string())
            .or_insert_with(|| (stream, BTreeSet::new()))
            .1
            .insert(index);
        RngStream::new(self.seed, stream).substream(index)
    }

    pub fn take_seeds(&self) -> Vec<SeedEntry> {
        let seeds = std::mem::take(&mut *self.seeds.lock().expect("seed lock"));
        seeds
            .into_iter()
            .map(|(role, (stream, idx))| {
                let mut indices: Vec<[u64; 2]> = Vec::new();
                for i in idx {
                    match indices.last_mut() {
                        Some(r) if r[1] + 1 == i => r[1] = i,
                        _ => indices.push([i, i]),
                    }
                }
                SeedEntry {
                    role,
                    seed: self.seed,
                    stream,
                    indices,
                }
            })
            .collect()
    }

    fn trace_path(&self, file: &str) -> PathBuf {
        self.out.join("traces").join(file)
    }
}

fn entry(file: &str, kind: TraceKind, family: TraceFamily, figure: &str) -> TraceEntry {
    TraceEntry {
        file: file.to_string(),
        kind,
        family,
        figure: figure.to_string(),
        sweep_cutoff: None,
    }
}

fn write_learner_trace(ctx: &Ctx, e: TraceEntry, columns: &[String], rows: Vec<Vec<LearnerRow>>) -> Result<TraceEntry> {
    let path = ctx.trace_path(&e.file);
    fs::create_dir_all(path.parent().expect("trace dir"))?;
    write_learner(BufWriter::new(fs::File::create(path)?), columns, &rows.concat())?;
    Ok(e)
}

fn write_inner_trace(ctx: &Ctx, e: TraceEntry, columns: &[String], rows: Vec<Vec<InnerRow>>) -> Result<TraceEntry> {
    let path = ctx.trace_path(&e.file);
    fs::create_dir_all(path.parent().expect("trace dir"))?;
    write_inner(BufWriter::new(fs::File::create(path)?), columns, &rows.concat())?;
    Ok(e)
}

fn learner_rows(run_id: &str, trace: &LearnerTrace, payload: impl Fn(&Payload) -> Result<Vec<f64>>) -> Result<Vec<LearnerRow>> {
    trace
        .snapshots
        .iter()
        .map(|s| {
            Ok(LearnerRow {
                run_id: run_id.to_string(),
                step: s.step,
                value: s.value,
                payload: payload(&s.payload)?,
            })
        })
        .collect()
}

fn linear_snapshot(p: &Payload, f: &Svd) -> Result<Vec<f64>> {
    match p {
        Payload::Effective(w) => linear_payload(w, f),
        _ => Err(Error::FamilyMismatch("expected an effective linear map".into())),
    }
}

fn rows_of(run_id: &str, ck: usize, episode: usize, steps: Vec<Vec<f64>>) -> Vec<InnerRow> {
    steps
        .into_iter()
        .enumerate()
        .map(|(t, payload)| InnerRow {
            meta_run_id: run_id.to_string(),
            checkpoint_step: ck,
            episode_id: episode,
            t: t + 1,
            payload,
        })
        .collect()
}

/// Trace family and payload columns for probes of `tasks`.
fn probe_layout(tasks: &TaskSpec) -> (TraceFamily, Vec<String>) {
    match tasks {
        TaskSpec::Linear { distribution } => (
            TraceFamily::Linear,
            linear_columns(distribution.nx.min(distribution.ny)),
        ),
        TaskSpec::Fourier { mode, .. } => (TraceFamily::Fourier, fourier_columns(mode.modes())),
        TaskSpec::FixedFourier { task } => (TraceFamily::Fourier, fourier_columns(task.modes())),
        TaskSpec::Bandit { spec } => (TraceFamily::Bandit, bandit_columns(spec.num_contexts)),
    }
}

/// One probe episode of a frozen Meta-Learner, as payload rows t = 1..=len.
fn probe_episode(params: &[LstmParams], family: MetaFamily, tasks: &TaskSpec, len: usize, rng: &mut RngStream) -> Result<Vec<Vec<f64>>> {
    match (family, tasks) {
        (MetaFamily::Linear, TaskSpec::Linear { distribution }) => {
            let task = sample_linear_task(distribution, rng)?;
            let f = task_svd(&task)?;
            let tr = probe_inner_linear(&params[0], &task, len, rng)?;
            tr.steps
                .into_iter()
                .map(|w| linear_payload(&Matrix::from_vec(task.ny(), task.nx(), w)?, &f))
                .collect()
        }
        (MetaFamily::Fourier, TaskSpec::Fourier { .. } | TaskSpec::FixedFourier { .. }) => {
            let task = match tasks {
                TaskSpec::Fourier { mode, noise_std } => sample_fourier_task(mode, *noise_std, rng)?,
                TaskSpec::FixedFourier { task } => task.clone(),
                _ => unreachable!(),
            };
            let tr = probe_inner_fourier(&params[0], &task, len, rng)?;
            Ok(tr.steps.iter().map(|y| fourier_payload(y, &task)).collect())
        }
        (MetaFamily::BanditCoupled | MetaFamily::BanditDecoupled, TaskSpec::Bandit { spec }) => {
            let task = sample_bandit_task(spec, rng)?;
            let tr = probe_inner_bandit(params, family == MetaFamily::BanditCoupled, &task, len, rng)?;
            Ok(tr.steps.iter().map(|table| bandit_payload(table, &task)).collect())
        }
        _ => Err(Error::FamilyMismatch(format!("probe tasks do not fit the {family:?} family"))),
    }
}


/// Probe `episodes` episodes per checkpoint. Episode `e` draws from
/// `(role, e)`, so every checkpoint and run sees the same episodes.
fn probe_rows(
    ctx: &Ctx,
    run_id: &str,
    cfg: &MetaTrainConfig,
    tasks: &TaskSpec,
    cks: &[&MetaCheckpoint],
    episodes: usize,
    role: &str,
) -> Result<Vec<Vec<InnerRow>>> {
    let jobs: Vec<(usize, usize)> = (0..cks.len()).flat_map(|c| (0..episodes).map(move |e| (c, e))).collect();
    jobs.par_iter()
        .map(|&(c, e)| {
            let ck = cks[c];
            cfg.check_params(&ck.params)?;
            let mut rng = ctx.stream(role, e as u64);
            let steps = probe_episode(&ck.params, cfg.family, tasks, cfg.episode_len, &mut rng)?;
            Ok(rows_of(run_id, ck.step, e, steps))
        })
        .collect()
}

fn ck_stem(dir: &Path, step: usize) -> PathBuf {
    dir.join(format!("ck_{step:09}"))
}

fn saved_checkpoints(dir: &Path, before: usize) -> Result<Vec<MetaCheckpoint>> {
    let mut steps: Vec<usize> = match fs::read_dir(dir) {
        Ok(rd) => rd
            .filter_map(|e| e.ok())
            .filter_map(|e| {
                let name = e.file_name().into_string().ok()?;
                name.strip_prefix("ck_")?.strip_suffix(".json")?.parse().ok()
            })
            .filter(|&s| s < before)
            .collect(),
        Err(_) => Vec::new(),
    };
    steps.sort_unstable();
    steps.into_iter().map(|s| MetaCheckpoint::load(&ck_stem(dir, s))).collect()
}

/// Outer-train with periodic trainer snapshots under
/// `checkpoints/<role>/<index>/`, resuming from the last one if present.
fn train_meta(ctx: &Ctx, role: &str, index: usize, cfg: &MetaTrainConfig, save_every: usize) -> Result<Vec<MetaCheckpoint>> {
    let rng = ctx.stream(role, index as u64);
    let dir = ctx.out.join("checkpoints").join(role).join(index.to_string());
    let state = dir.join("state");
    let mut trainer = if state.with_extension("json").is_file() {
        MetaTrainer::restore(cfg, &rng, &state)?
    } else {
        MetaTrainer::new(cfg, &rng)?
    };
    let mut cks = saved_checkpoints(&dir, trainer.next_step())?;
    fs::create_dir_all(&dir)?;
    while !trainer.is_done() {
        let last = trainer.next_step() + save_every - 1;
        let fresh = match trainer.run_until(last) {
            Ok(f) => f,
            Err(Error::Diverged { step, partial }) => {
                if let PartialRun::Meta(done) = partial.as_ref() {
                    for ck in done {
                        ck.save(&ck_stem(&dir, ck.step))?;
                    }
                }
                return Err(Error::Diverged { step, partial });
            }
            Err(e) => return Err(e),
        };
        for ck in &fresh {
            ck.save(&ck_stem(&dir, ck.step))?;
        }
        cks.extend(fresh);
        trainer.save(&state)?;
    }
    Ok(cks)
}

pub(crate) fn load_checkpoint(path: &Path) -> Result<MetaCheckpoint> {
    let stem = match path.extension().and_then(|e| e.to_str()) {
        Some("json" | "bin") => path.with_extension(""),
        _ => path.to_path_buf(),
    };
    MetaCheckpoint::load(&stem)
}

/// Checkpoints per replica: loaded from `given`, or trained.
fn meta_runs(
    ctx: &Ctx,
    role: &str,
    replicas: usize,
    cfg: &MetaTrainConfig,
    given: &[PathBuf],
    save_every: usize,
) -> Result<Vec<Vec<MetaCheckpoint>>> {
    if !given.is_empty() {
        return given.iter().map(|p| Ok(vec![load_checkpoint(p)?])).collect();
    }
    (0..replicas)
        .into_par_iter()
        .map(|r| train_meta(ctx, role, r, cfg, save_every))
        .collect()
}

fn finals(runs: &[Vec<MetaCheckpoint>]) -> Result<Vec<&MetaCheckpoint>> {
    runs.iter()
        .map(|r| r.last().ok_or_else(|| Error::InvalidInput("a run produced no checkpoints".into())))
        .collect()
}

fn fixed_spectrum_tasks(meta: &MetaTrainConfig, spectrum: &[f64]) -> Result<TaskSpec> {
    let TaskSpec::Linear { distribution } = &meta.tasks else {
        return Err(Error::FamilyMismatch("expected linear tasks".into()));
    };
    Ok(TaskSpec::Linear {
        distribution: LinearTaskDistribution {
            mode: LinearTaskMode::FixedSpectrum {
                spectrum: spectrum.to_vec(),
            },
            ..distribution.clone()
        },
    })
}

fn meta_noise(meta: &MetaTrainConfig) -> f64 {
    match &meta.tasks {
        TaskSpec::Fourier { noise_std, .. } => *noise_std,
        TaskSpec::FixedFourier { task } => task.noise_std,
        TaskSpec::Linear { distribution } => distribution.noise_std,
        TaskSpec::Bandit { .. } => 0.0,
    }
}

fn figure_id(id: ExperimentId) -> &'static str {
    match id {
        ExperimentId::Exp1Learner => "1",
        ExperimentId::Exp1Adam => "7",
        ExperimentId::Exp1Meta => "3",
        ExperimentId::Exp1Ood => "5",
        ExperimentId::Exp1Bayes => "6",
        ExperimentId::Exp1LstmControl => "A4",
        ExperimentId::Exp2Learner => "8",
        ExperimentId::Exp2Meta => "A5",
        ExperimentId::Exp2Bandpass => "A6",
        ExperimentId::Exp2Bayes => "8-bayes",
        ExperimentId::Exp2LstmControl => "A4-fourier",
        ExperimentId::Exp3Learner => "9",
        ExperimentId::Exp3Meta => "9-meta",
        ExperimentId::Exp3Bayes => "9-bayes",
        ExperimentId::OuterDynamics1 => "10",
        ExperimentId::OuterDynamics2 => "11",
        ExperimentId::OuterDynamics3 => "12",
    }
}

/// Train and probe, returning the trace entries written.
pub(crate) fn execute(cfg: &ExperimentConfig, ctx: &Ctx) -> Result<Vec<TraceEntry>> {
    let fig = figure_id(cfg.experiment);
    match &cfg.settings {
        Study::LinearLearner(s) => linear_learner(ctx, s, fig, cfg.experiment),
        Study::LinearMeta(s) => {
            ctx.set_stage("train");
            let runs = meta_runs(ctx, "meta", s.replicas, &s.meta, &s.checkpoints, s.save_every)?;
            probe_linear_meta(ctx, s, &finals(&runs)?, fig)
        }
        Study::LinearBayes(s) => linear_bayes(ctx, s, fig),
        Study::Control(s) => control(ctx, s, fig),
        Study::FourierLearner(s) => fourier_learner(ctx, s, fig),
        Study::FourierMeta(s) => {
            ctx.set_stage("train");
            let runs = meta_runs(ctx, "meta", s.replicas, &s.meta, &s.checkpoints, s.save_every)?;
            probe_fourier_meta(ctx, s, &finals(&runs)?, fig)
        }
        Study::FourierBayes(s) => fourier_bayes(ctx, s, fig),
        Study::BanditLearner(s) => bandit_learner(ctx, s, fig),
        Study::BanditMeta(s) => {
            ctx.set_stage("train");
            let coupled = meta_runs(ctx, "meta-coupled", s.replicas, &s.coupled, &s.coupled_checkpoints, s.save_every)?;
            let decoupled = meta_runs(
                ctx,
                "meta-decoupled",
                s.replicas,
                &s.decoupled,
                &s.decoupled_checkpoints,
                s.save_every,
            )?;
            probe_bandit_meta(ctx, s, &coupled, &decoupled, fig)
        }
        Study::BanditBayes(s) => bandit_bayes(ctx, s, fig),
        Study::Outer(s) => {
            ctx.set_stage("train");
            let main = train_meta(ctx, "meta", 0, &s.meta, s.save_every)?;
            let decoupled = match &s.decoupled {
                Some(d) => Some((d, train_meta(ctx, "meta-decoupled", 0, d, s.save_every)?)),
                None => None,
            };
            outer_sweep(ctx, s, &main, decoupled.as_ref().map(|(c, r)| (*c, r.as_slice())), fig)
        }
    }
}

/// Probe one loaded checkpoint with the probe settings of `cfg`.
pub(crate) fn execute_probe(cfg: &ExperimentConfig, ck: &MetaCheckpoint, ctx: &Ctx) -> Result<Vec<TraceEntry>> {
    let fig = figure_id(cfg.experiment);
    ctx.set_stage("probe");
    match &cfg.settings {
        Study::LinearMeta(s) => probe_linear_meta(ctx, s, &[ck], fig),
        Study::FourierMeta(s) => probe_fourier_meta(ctx, s, &[ck], fig),
        Study::BanditMeta(s) => {
            let one = vec![vec![ck.clone()]];
            if s.coupled.check_params(&ck.params).is_ok() {
                probe_bandit_meta(ctx, s, &one, &[], fig)
            } else {
                s.decoupled.check_params(&ck.params)?;
                probe_bandit_meta(ctx, s, &[], &one, fig)
            }
        }
        Study::Outer(s) => {
            let (meta, id) = match &s.decoupled {
                Some(d) if s.meta.check_params(&ck.params).is_err() => (d, "decoupled/0"),
                _ => (&s.meta, if s.meta.family.is_bandit() { "coupled/0" } else { "meta/0" }),
            };
            meta.check_params(&ck.params)?;
            let (family, columns) = probe_layout(&s.sweep.tasks);
            let rows = probe_rows(ctx, id, meta, &s.sweep.tasks, &[ck], s.sweep.episodes, "sweep")?;
            ctx.set_stage("traces");
            Ok(vec![write_inner_trace(ctx, entry("probe.csv", TraceKind::Inner, family, fig), &columns, rows)?])
        }
        _ => Err(Error::Config {
            path: "experiment".into(),
            message: format!("{} has no Meta-Learner to probe", cfg.experiment),
        }),
    }
}

fn linear_learner(ctx: &Ctx, s: &LinearLearnerStudy, fig: &str, id: ExperimentId) -> Result<Vec<TraceEntry>> {
    ctx.set_stage("train");
    let run = |role: &'static str, n: usize, spectra: &[Vec<f64>], replicas: usize, learner| -> Result<Vec<Vec<LearnerRow>>> {
        let jobs: Vec<(usize, usize)> = (0..spectra.len()).flat_map(|g| (0..replicas).map(move |r| (g, r))).collect();
        jobs.par_iter()
            .map(|&(g, r)| {
                let mut rng = ctx.stream(role, (g * replicas + r) as u64);
                let dist = LinearTaskDistribution {
                    noise_std: s.noise_std,
                    ..LinearTaskDistribution::fixed_spectrum(n, spectra[g].clone())
                };
                let task = sample_linear_task(&dist, &mut rng)?;
                let f = task_svd(&task)?;
                let trace = train_linear_learner(&task, learner, &mut rng)?;
                let group = if role == "learner-5d" { "5d".to_string() } else { format!("spectrum{g}") };
                learner_rows(&format!("{group}/{r}"), &trace, |p| linear_snapshot(p, &f))
            })
            .collect()
    };
    let rows_2d = run("learner-2d", 2, &s.spectra, s.replicas, &s.learner)?;
    let rows_5d = if s.replicas_5d > 0 {
        Some(run("learner-5d", 5, std::slice::from_ref(&s.spectrum_5d), s.replicas_5d, &s.learner_5d)?)
    } else {
        None
    };
    ctx.set_stage("traces");
    let mut out = vec![write_learner_trace(
        ctx,
        entry("learner_2d.csv", TraceKind::Learner, TraceFamily::Linear, fig),
        &linear_columns(2),
        rows_2d,
    )?];
    if let Some(rows) = rows_5d {
        let fig_5d = if id == ExperimentId::Exp1Learner { "4".to_string() } else { format!("{fig}-5d") };
        out.push(write_learner_trace(
            ctx,
            entry("learner_5d.csv", TraceKind::Learner, TraceFamily::Linear, &fig_5d),
            &linear_columns(5),
            rows,
        )?);
    }
    Ok(out)
}

fn probe_linear_meta(ctx: &Ctx, s: &LinearMetaStudy, finals: &[&MetaCheckpoint], fig: &str) -> Result<Vec<TraceEntry>> {
    ctx.set_stage("probe");
    let n = s.spectra.first().map_or(0, Vec::len);
    let mut rows = Vec::new();
    for (g, spectrum) in s.spectra.iter().enumerate() {
        let tasks = fixed_spectrum_tasks(&s.meta, spectrum)?;
        for (r, ck) in finals.iter().enumerate() {
            let role = format!("probe-spectrum{g}");
            rows.extend(probe_rows(ctx, &format!("spectrum{g}/{r}"), &s.meta, &tasks, &[ck], s.episodes, &role)?);
        }
    }
    ctx.set_stage("traces");
    Ok(vec![write_inner_trace(
        ctx,
        entry("meta.csv", TraceKind::Inner, TraceFamily::Linear, fig),
        &linear_columns(n),
        rows,
    )?])
}

fn linear_bayes(ctx: &Ctx, s: &LinearBayesStudy, fig: &str) -> Result<Vec<TraceEntry>> {
    ctx.set_stage("probe");
    let n = s.spectrum.len();
    let noise_var = s.noise_std * s.noise_std;
    let dist = LinearTaskDistribution {
        noise_std: s.noise_std,
        ..LinearTaskDistribution::fixed_spectrum(n, s.spectrum.clone())
    };
    let rows: Vec<Vec<InnerRow>> = (0..s.episodes)
        .into_par_iter()
        .map(|e| {
            let mut rng = ctx.stream("bayes", e as u64);
            let task = sample_linear_task(&dist, &mut rng)?;
            let f = task_svd(&task)?;
            let ep = sample_linear_episode(&task, s.episode_len, &mut rng)?;
            // Row t conditions on observations 1..t−1, as the LSTM probe does.
            let steps = (0..s.episode_len)
                .map(|seen| {
                    let x = Matrix::from_vec(seen, n, ep.inputs[..seen].concat())?;
                    let y = Matrix::from_vec(seen, n, ep.targets[..seen].concat())?;
                    match bayes_linear_posterior(&x, &y, noise_var)?.mean {
                        PosteriorMean::Linear(w) => linear_payload(&w, &f),
                        _ => unreachable!("linear posterior"),
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(rows_of("bayes/0", 0, e, steps))
        })
        .collect::<Result<_>>()?;
    ctx.set_stage("traces");
    Ok(vec![write_inner_trace(
        ctx,
        entry("bayes.csv", TraceKind::Inner, TraceFamily::Linear, fig),
        &linear_columns(n),
        rows,
    )?])
}

fn control(ctx: &Ctx, s: &ControlStudy, fig: &str) -> Result<Vec<TraceEntry>> {
    ctx.set_stage("train");
    let (family, columns) = probe_layout(&s.meta.tasks);
    let svd = match &s.meta.tasks {
        TaskSpec::Linear {
            distribution:
                LinearTaskDistribution {
                    mode: LinearTaskMode::FixedTask { w },
                    ..
                },
        } => Some(crate::numerics::svd(w)?),
        _ => None,
    };
    let rows: Vec<Vec<LearnerRow>> = (0..s.replicas)
        .into_par_iter()
        .map(|r| {
            let mut rng = ctx.stream("control", r as u64);
            let trace = train_lstm_control(&s.meta, &mut rng)?;
            learner_rows(&format!("control/{r}"), &trace, |p| match (p, &s.meta.tasks, &svd) {
                (Payload::Effective(w), _, Some(f)) => linear_payload(w, f),
                (Payload::Probe(y), TaskSpec::FixedFourier { task }, _) => Ok(fourier_payload(y, task)),
                _ => Err(Error::FamilyMismatch("control snapshot does not match its task".into())),
            })
        })
        .collect::<Result<_>>()?;
    ctx.set_stage("traces");
    Ok(vec![write_learner_trace(ctx, entry("control.csv", TraceKind::Learner, family, fig), &columns, rows)?])
}

fn fourier_learner(ctx: &Ctx, s: &FourierLearnerStudy, fig: &str) -> Result<Vec<TraceEntry>> {
    ctx.set_stage("train");
    let rows: Vec<Vec<LearnerRow>> = (0..s.replicas)
        .into_par_iter()
        .map(|r| {
            let mut rng = ctx.stream("learner", r as u64);
            let task = sample_fourier_task(&s.mode, s.noise_std, &mut rng)?;
            let trace = train_fourier_learner(&task, &s.learner, &mut rng)?;
            learner_rows(&format!("learner/{r}"), &trace, |p| match p {
                Payload::Probe(y) => Ok(fourier_payload(y, &task)),
                _ => Err(Error::FamilyMismatch("expected probe outputs".into())),
            })
        })
        .collect::<Result<_>>()?;
    ctx.set_stage("traces");
    Ok(vec![write_learner_trace(
        ctx,
        entry("learner.csv", TraceKind::Learner, TraceFamily::Fourier, fig),
        &fourier_columns(s.mode.modes()),
        rows,
    )?])
}

fn probe_fourier_meta(ctx: &Ctx, s: &FourierMetaStudy, finals: &[&MetaCheckpoint], fig: &str) -> Result<Vec<TraceEntry>> {
    ctx.set_stage("probe");
    let tasks = TaskSpec::Fourier {
        mode: s.probe.clone(),
        noise_std: meta_noise(&s.meta),
    };
    let mut rows = Vec::new();
    for (r, ck) in finals.iter().enumerate() {
        rows.extend(probe_rows(ctx, &format!("meta/{r}"), &s.meta, &tasks, &[ck], s.episodes, "probe")?);
    }
    ctx.set_stage("traces");
    Ok(vec![write_inner_trace(
        ctx,
        entry("meta.csv", TraceKind::Inner, TraceFamily::Fourier, fig),
        &fourier_columns(s.probe.modes()),
        rows,
    )?])
}

fn fourier_bayes(ctx: &Ctx, s: &FourierBayesStudy, fig: &str) -> Result<Vec<TraceEntry>> {
    ctx.set_stage("probe");
    let mode = FourierMode::UnitAmplitudes { modes: s.modes };
    let noise_var = s.noise_std * s.noise_std;
    let grid = probe_grid();
    let rows: Vec<Vec<InnerRow>> = (0..s.episodes)
        .into_par_iter()
        .map(|e| {
            let mut rng = ctx.stream("bayes", e as u64);
            let task = snap_to_bins(&sample_fourier_task(&mode, s.noise_std, &mut rng)?, s.bins)?;
            let ep = sample_fourier_episode(&task, s.episode_len, &mut rng)?;
            let mut oracle = FourierOracle::new(&task.amplitudes, s.bins, noise_var)?;
            let mut steps = Vec::with_capacity(s.episode_len);
            for t in 0..s.episode_len {
                steps.push(fourier_payload(&oracle.posterior_mean_at(&grid), &task));
                oracle.observe(ep.inputs[t][0], ep.targets[t][0])?;
            }
            Ok(rows_of("bayes/0", 0, e, steps))
        })
        .collect::<Result<_>>()?;
    ctx.set_stage("traces");
    Ok(vec![write_inner_trace(
        ctx,
        entry("bayes.csv", TraceKind::Inner, TraceFamily::Fourier, fig),
        &fourier_columns(s.modes),
        rows,
    )?])
}

fn bandit_learner(ctx: &Ctx, s: &BanditLearnerStudy, fig: &str) -> Result<Vec<TraceEntry>> {
    ctx.set_stage("train");
    let jobs: Vec<(bool, usize)> = [true, false]
        .into_iter()
        .flat_map(|c| (0..s.replicas).map(move |r| (c, r)))
        .collect();
    let rows: Vec<Vec<LearnerRow>> = jobs
        .par_iter()
        .map(|&(coupled, r)| {
            // Both arms of a replica see the same task.
            let task = sample_bandit_task(&s.spec, &mut ctx.stream("task", r as u64))?;
            let (name, trace) = if coupled {
                ("coupled", train_bandit_coupled(&task, &s.coupled, &mut ctx.stream("learner-coupled", r as u64))?)
            } else {
                (
                    "decoupled",
                    train_bandit_decoupled(&task, &s.decoupled, &mut ctx.stream("learner-decoupled", r as u64))?,
                )
            };
            learner_rows(&format!("{name}/{r}"), &trace, |p| match p {
                Payload::Policy(table) => Ok(bandit_payload(table.as_slice(), &task)),
                _ => Err(Error::FamilyMismatch("expected a policy table".into())),
            })
        })
        .collect::<Result<_>>()?;
    ctx.set_stage("traces");
    Ok(vec![write_learner_trace(
        ctx,
        entry("learner.csv", TraceKind::Learner, TraceFamily::Bandit, fig),
        &bandit_columns(s.spec.num_contexts),
        rows,
    )?])
}

fn probe_bandit_meta(
    ctx: &Ctx,
    s: &BanditMetaStudy,
    coupled: &[Vec<MetaCheckpoint>],
    decoupled: &[Vec<MetaCheckpoint>],
    fig: &str,
) -> Result<Vec<TraceEntry>> {
    ctx.set_stage("probe");
    let (family, columns) = probe_layout(&s.coupled.tasks);
    let arms = [("coupled", &s.coupled, coupled), ("decoupled", &s.decoupled, decoupled)];
    let mut rows = Vec::new();
    let mut sweep = Vec::new();
    for (name, cfg, runs) in arms {
        if probe_layout(&cfg.tasks).1 != columns {
            return Err(Error::Config {
                path: "settings".into(),
                message: "coupled and decoupled probes need the same context count".into(),
            });
        }
        for (r, run) in runs.iter().enumerate() {
            let id = format!("{name}/{r}");
            let last = run.last().ok_or_else(|| Error::InvalidInput("a run produced no checkpoints".into()))?;
            rows.extend(probe_rows(ctx, &id, cfg, &cfg.tasks, &[last], s.episodes, "probe")?);
            if s.sweep_episodes > 0 {
                let all: Vec<&MetaCheckpoint> = run.iter().collect();
                sweep.extend(probe_rows(ctx, &id, cfg, &cfg.tasks, &all, s.sweep_episodes, "sweep")?);
            }
        }
    }
    ctx.set_stage("traces");
    let mut out = vec![write_inner_trace(ctx, entry("meta.csv", TraceKind::Inner, family, fig), &columns, rows)?];
    if s.sweep_episodes > 0 {
        let mut e = entry("sweep.csv", TraceKind::Inner, family, "12");
        e.sweep_cutoff = Some(s.sweep_cutoff);
        out.push(write_inner_trace(ctx, e, &columns, sweep)?);
    }
    Ok(out)
}

fn bandit_bayes(ctx: &Ctx, s: &BanditBayesStudy, fig: &str) -> Result<Vec<TraceEntry>> {
    ctx.set_stage("probe");
    let spec = &s.spec;
    let rows: Vec<Vec<InnerRow>> = (0..s.episodes)
        .into_par_iter()
        .map(|e| {
            let mut rng = ctx.stream("bayes", e as u64);
            let task = sample_bandit_task(spec, &mut rng)?;
            // Uniformly random behaviour.
            let mut history: Vec<BanditStep> = Vec::with_capacity(s.episode_len);
            let mut steps = Vec::with_capacity(s.episode_len);
            for _ in 0..s.episode_len {
                let post = bayes_bandit_posterior(&history, spec.num_contexts, spec.num_actions, spec.p_correct, spec.p_incorrect)?;
                let PosteriorMean::Arms(table) = post.mean else {
                    unreachable!("bandit posterior")
                };
                steps.push(bandit_payload(table.as_slice(), &task));
                let context = sample_context(&task, &mut rng);
                let action = rng.below(spec.num_actions);
                let reward = bandit_reward(&task, context, action, &mut rng)?;
                history.push(BanditStep { context, action, reward });
            }
            Ok(rows_of("bayes/0", 0, e, steps))
        })
        .collect::<Result<_>>()?;
    ctx.set_stage("traces");
    Ok(vec![write_inner_trace(
        ctx,
        entry("bayes.csv", TraceKind::Inner, TraceFamily::Bandit, fig),
        &bandit_columns(spec.num_contexts),
        rows,
    )?])
}

fn outer_sweep(
    ctx: &Ctx,
    s: &OuterStudy,
    main: &[MetaCheckpoint],
    decoupled: Option<(&MetaTrainConfig, &[MetaCheckpoint])>,
    fig: &str,
) -> Result<Vec<TraceEntry>> {
    ctx.set_stage("probe");
    let (family, columns) = probe_layout(&s.sweep.tasks);
    let main_id = if s.meta.family.is_bandit() { "coupled/0" } else { "meta/0" };
    let all: Vec<&MetaCheckpoint> = main.iter().collect();
    let mut rows = probe_rows(ctx, main_id, &s.meta, &s.sweep.tasks, &all, s.sweep.episodes, "sweep")?;
    if let Some((cfg, cks)) = decoupled {
        let all: Vec<&MetaCheckpoint> = cks.iter().collect();
        rows.extend(probe_rows(ctx, "decoupled/0", cfg, &s.sweep.tasks, &all, s.sweep.episodes, "sweep")?);
    }
    ctx.set_stage("traces");
    let mut e = entry("sweep.csv", TraceKind::Inner, family, fig);
    e.sweep_cutoff = Some(s.sweep.cutoff);
    Ok(vec![write_inner_trace(ctx, e, &columns, rows)?])
}
