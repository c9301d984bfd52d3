use std::path::PathBuf;
use std::sync::OnceLock;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::ExperimentId;
use crate::analysis::DEFAULT_CUTOFFS;
use crate::error::{Error, Result};
use crate::learners::LearnerConfig;
use crate::metalearners::{MetaTrainConfig, SweepSpec, TaskSpec};
use crate::nets::Optimizer;
use crate::numerics::{Matrix, RngStream};
use crate::oracles::DEFAULT_PHASE_BINS;
use crate::tasks::{
    expected_spectrum, singular_value_percentile, BanditAssignment, BanditSpec, FourierMode, FourierTask,
    LinearTaskDistribution, LinearTaskMode, DEFAULT_NOISE_STD,
};

const MC_DRAWS: usize = 20_000;

/// Expected sorted spectrum of a 5×5 `MN(0, I, I)` matrix.
pub fn reference_spectrum_5d() -> &'static [f64] {
    static S: OnceLock<Vec<f64>> = OnceLock::new();
    S.get_or_init(|| expected_spectrum(5, MC_DRAWS, &mut RngStream::new(0, 5)).expect("valid draw count"))
}

/// 20th and 95th percentiles of pooled 2×2 `MN(0, I, I)` singular values.
pub fn percentiles_2d() -> (f64, f64) {
    static P: OnceLock<(f64, f64)> = OnceLock::new();
    *P.get_or_init(|| {
        let p = |q| singular_value_percentile(2, 1.0, q, MC_DRAWS, &mut RngStream::new(0, 2)).expect("valid request");
        (p(0.2), p(0.95))
    })
}

fn fixed_spectrum(n: usize, s: &[f64]) -> LinearTaskDistribution {
    LinearTaskDistribution::fixed_spectrum(n, s.to_vec())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearLearnerStudy {
    pub replicas: usize,
    pub learner: LearnerConfig,
    /// Target spectra for the 2D runs; every replica trains on each.
    pub spectra: Vec<Vec<f64>>,
    /// 5D runs with the reference spectrum; 0 skips them.
    pub replicas_5d: usize,
    pub learner_5d: LearnerConfig,
    pub spectrum_5d: Vec<f64>,
    pub noise_std: f64,
}

impl LinearLearnerStudy {
    fn new(optimizer: Optimizer, replicas_5d: usize) -> Self {
        let mut learner = LearnerConfig::linear(2);
        let mut learner_5d = LearnerConfig::linear(5);
        learner.optimizer = optimizer;
        learner_5d.optimizer = optimizer;
        Self {
            replicas: 50,
            learner,
            spectra: vec![vec![3.0, 0.06], vec![1.0, 0.3], vec![0.6, 0.12]],
            replicas_5d,
            learner_5d,
            spectrum_5d: reference_spectrum_5d().to_vec(),
            noise_std: DEFAULT_NOISE_STD,
        }
    }
}

/// Meta-Learners trained (or loaded) and then probed on fixed spectra.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearMetaStudy {
    pub replicas: usize,
    pub meta: MetaTrainConfig,
    /// Probe spectra; each probe episode draws fresh singular vectors.
    pub spectra: Vec<Vec<f64>>,
    pub episodes: usize,
    /// Trained checkpoints to probe instead of training, one per replica.
    #[serde(default)]
    pub checkpoints: Vec<PathBuf>,
    pub save_every: usize,
}

impl LinearMetaStudy {
    fn new(spectra: Vec<Vec<f64>>) -> Self {
        Self {
            replicas: 1,
            meta: MetaTrainConfig::linear(LinearTaskDistribution::matrix_normal(2, 1.0)),
            spectra,
            episodes: 100,
            checkpoints: Vec::new(),
            save_every: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearBayesStudy {
    pub episodes: usize,
    pub spectrum: Vec<f64>,
    pub episode_len: usize,
    pub noise_std: f64,
}

/// An LSTM outer-trained on one fixed task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlStudy {
    pub replicas: usize,
    pub meta: MetaTrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FourierLearnerStudy {
    pub replicas: usize,
    pub learner: LearnerConfig,
    pub mode: FourierMode,
    pub noise_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FourierMetaStudy {
    pub replicas: usize,
    pub meta: MetaTrainConfig,
    /// Task family the trained nets are probed on.
    pub probe: FourierMode,
    pub episodes: usize,
    #[serde(default)]
    pub checkpoints: Vec<PathBuf>,
    pub save_every: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FourierBayesStudy {
    pub episodes: usize,
    pub modes: usize,
    pub bins: usize,
    pub episode_len: usize,
    pub noise_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BanditLearnerStudy {
    pub replicas: usize,
    pub spec: BanditSpec,
    pub coupled: LearnerConfig,
    pub decoupled: LearnerConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BanditMetaStudy {
    pub replicas: usize,
    pub coupled: MetaTrainConfig,
    pub decoupled: MetaTrainConfig,
    pub episodes: usize,
    #[serde(default)]
    pub coupled_checkpoints: Vec<PathBuf>,
    #[serde(default)]
    pub decoupled_checkpoints: Vec<PathBuf>,
    pub save_every: usize,
    /// Probe episodes per checkpoint for the outer sweep; 0 skips it.
    pub sweep_episodes: usize,
    pub sweep_cutoff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BanditBayesStudy {
    pub episodes: usize,
    pub spec: BanditSpec,
    pub episode_len: usize,
}

/// Checkpointed outer training followed by an inner-probe sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OuterStudy {
    pub meta: MetaTrainConfig,
    /// Decoupled counterpart for the bandit family.
    #[serde(default)]
    pub decoupled: Option<MetaTrainConfig>,
    pub sweep: SweepSpec,
    pub save_every: usize,
}

/// Experiment-specific settings; which variant applies is fixed by the id.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Study {
    LinearLearner(LinearLearnerStudy),
    LinearMeta(LinearMetaStudy),
    LinearBayes(LinearBayesStudy),
    Control(ControlStudy),
    FourierLearner(FourierLearnerStudy),
    FourierMeta(FourierMetaStudy),
    FourierBayes(FourierBayesStudy),
    BanditLearner(BanditLearnerStudy),
    BanditMeta(BanditMetaStudy),
    BanditBayes(BanditBayesStudy),
    Outer(OuterStudy),
}

impl Study {
    pub fn defaults(id: ExperimentId) -> Self {
        let (p20, p95) = percentiles_2d();
        let fig4 = reference_spectrum_5d().to_vec();
        match id {
            ExperimentId::Exp1Learner => Study::LinearLearner(LinearLearnerStudy::new(Optimizer::Sgd { lr: 1e-3 }, 20)),
            ExperimentId::Exp1Adam => Study::LinearLearner(LinearLearnerStudy::new(Optimizer::Adam { lr: 1e-3 }, 0)),
            ExperimentId::Exp1Meta => Study::LinearMeta(LinearMetaStudy::new(vec![
                vec![p95, p20],
                vec![3.0, 0.06],
                vec![1.0, 0.3],
                vec![0.6, 0.12],
            ])),
            ExperimentId::Exp1Ood => Study::LinearMeta(LinearMetaStudy::new(vec![vec![p95, p20], vec![3.0 * p95, p20]])),
            ExperimentId::Exp1Bayes => Study::LinearBayes(LinearBayesStudy {
                episodes: 1000,
                spectrum: fig4,
                episode_len: 20,
                noise_std: DEFAULT_NOISE_STD,
            }),
            ExperimentId::Exp1LstmControl => {
                let mut dist = LinearTaskDistribution::matrix_normal(2, 1.0);
                dist.mode = LinearTaskMode::FixedTask {
                    w: Matrix::diag(&[2.0, 0.5]),
                };
                Study::Control(ControlStudy {
                    replicas: 1,
                    meta: MetaTrainConfig::linear(dist),
                })
            }
            ExperimentId::Exp2Learner => Study::FourierLearner(FourierLearnerStudy {
                replicas: 20,
                learner: LearnerConfig::fourier(),
                mode: FourierMode::default(),
                noise_std: DEFAULT_NOISE_STD,
            }),
            ExperimentId::Exp2Meta => Study::FourierMeta(FourierMetaStudy {
                replicas: 1,
                meta: MetaTrainConfig::fourier(FourierMode::default()),
                probe: FourierMode::default(),
                episodes: 200,
                checkpoints: Vec::new(),
                save_every: 1000,
            }),
            ExperimentId::Exp2Bandpass => Study::FourierMeta(FourierMetaStudy {
                replicas: 1,
                meta: MetaTrainConfig::fourier(FourierMode::Bandpass { modes: 5, low: 3, high: 5 }),
                probe: FourierMode::default(),
                episodes: 200,
                checkpoints: Vec::new(),
                save_every: 1000,
            }),
            ExperimentId::Exp2Bayes => Study::FourierBayes(FourierBayesStudy {
                episodes: 200,
                modes: 5,
                bins: DEFAULT_PHASE_BINS,
                episode_len: 40,
                noise_std: DEFAULT_NOISE_STD,
            }),
            ExperimentId::Exp2LstmControl => {
                let task = FourierTask::new(vec![1.0; 5], vec![0.3, 1.9, 4.0, 2.6, 5.5], DEFAULT_NOISE_STD)
                    .expect("valid fixed task");
                let mut meta = MetaTrainConfig::fourier(FourierMode::default());
                meta.tasks = TaskSpec::FixedFourier { task };
                Study::Control(ControlStudy { replicas: 1, meta })
            }
            ExperimentId::Exp3Learner => Study::BanditLearner(BanditLearnerStudy {
                replicas: 50,
                spec: BanditSpec::default(),
                coupled: LearnerConfig::bandit(true),
                decoupled: LearnerConfig::bandit(false),
            }),
            ExperimentId::Exp3Meta => Study::BanditMeta(BanditMetaStudy {
                replicas: 1,
                coupled: MetaTrainConfig::bandit(true),
                decoupled: MetaTrainConfig::bandit(false),
                episodes: 200,
                coupled_checkpoints: Vec::new(),
                decoupled_checkpoints: Vec::new(),
                save_every: 1000,
                sweep_episodes: 50,
                sweep_cutoff: 0.8,
            }),
            ExperimentId::Exp3Bayes => Study::BanditBayes(BanditBayesStudy {
                episodes: 200,
                spec: BanditSpec {
                    assignment: BanditAssignment::Independent,
                    ..BanditSpec::default()
                },
                episode_len: 100,
            }),
            ExperimentId::OuterDynamics1 => {
                let meta = MetaTrainConfig::linear(LinearTaskDistribution::matrix_normal(5, 1.0));
                Study::Outer(OuterStudy {
                    sweep: SweepSpec {
                        tasks: TaskSpec::Linear {
                            distribution: fixed_spectrum(5, &fig4),
                        },
                        episodes: 100,
                        cutoff: 0.8,
                        projection: Default::default(),
                    },
                    meta,
                    decoupled: None,
                    save_every: 1000,
                })
            }
            ExperimentId::OuterDynamics2 => {
                let meta = MetaTrainConfig::fourier(FourierMode::default());
                Study::Outer(OuterStudy {
                    sweep: SweepSpec {
                        tasks: meta.tasks.clone(),
                        episodes: 50,
                        cutoff: 0.8,
                        projection: Default::default(),
                    },
                    meta,
                    decoupled: None,
                    save_every: 1000,
                })
            }
            ExperimentId::OuterDynamics3 => {
                let meta = MetaTrainConfig::bandit(true);
                Study::Outer(OuterStudy {
                    sweep: SweepSpec {
                        tasks: meta.tasks.clone(),
                        episodes: 50,
                        cutoff: 0.8,
                        projection: Default::default(),
                    },
                    meta,
                    decoupled: Some(MetaTrainConfig::bandit(false)),
                    save_every: 1000,
                })
            }
        }
    }

    fn parse(id: ExperimentId, v: Value) -> std::result::Result<Self, (String, String)> {
        fn de<T: DeserializeOwned>(v: Value) -> std::result::Result<T, (String, String)> {
            serde_path_to_error::deserialize(v).map_err(|e| (e.path().to_string(), e.inner().to_string()))
        }
        Ok(match Study::defaults(id) {
            Study::LinearLearner(_) => Study::LinearLearner(de(v)?),
            Study::LinearMeta(_) => Study::LinearMeta(de(v)?),
            Study::LinearBayes(_) => Study::LinearBayes(de(v)?),
            Study::Control(_) => Study::Control(de(v)?),
            Study::FourierLearner(_) => Study::FourierLearner(de(v)?),
            Study::FourierMeta(_) => Study::FourierMeta(de(v)?),
            Study::FourierBayes(_) => Study::FourierBayes(de(v)?),
            Study::BanditLearner(_) => Study::BanditLearner(de(v)?),
            Study::BanditMeta(_) => Study::BanditMeta(de(v)?),
            Study::BanditBayes(_) => Study::BanditBayes(de(v)?),
            Study::Outer(_) => Study::Outer(de(v)?),
        })
    }
}

/// A fully defaulted, validated experiment description.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentId,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub cutoffs: Vec<f64>,
    pub settings: Study,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Top {
    experiment: ExperimentId,
    seed: u64,
    #[serde(default)]
    output_dir: Option<PathBuf>,
    cutoffs: Vec<f64>,
    settings: Value,
}

impl ExperimentConfig {
    pub fn defaults(experiment: ExperimentId) -> Self {
        Self {
            experiment,
            seed: 0,
            output_dir: None,
            cutoffs: DEFAULT_CUTOFFS.to_vec(),
            settings: Study::defaults(experiment),
        }
    }

    /// Canonical JSON (sorted keys) of the resolved config.
    pub fn canonical_json(&self) -> String {
        let v = serde_json::to_value(self).expect("config serialises");
        serde_json::to_string(&v).expect("value serialises")
    }
}

fn config_err(path: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Config {
        path: path.into(),
        message: message.into(),
    }
}

/// Overlay `patch` on `base`. Objects merge key by key, except that a
/// tagged object whose `kind` changes is replaced wholesale.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            let kind_changes = matches!((b.get("kind"), p.get("kind")), (Some(x), Some(y)) if x != y);
            if kind_changes {
                *b = p;
                return;
            }
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Parse, default and validate an experiment config. Unknown keys are
/// rejected; errors name the offending JSON path.
pub fn validate_config(raw: &str) -> Result<ExperimentConfig> {
    let user: Value = serde_json::from_str(raw).map_err(|e| config_err("", format!("invalid JSON: {e}")))?;
    let Value::Object(obj) = &user else {
        return Err(config_err("", "config must be a JSON object"));
    };
    let id = match obj.get("experiment") {
        None => return Err(config_err("experiment", "missing experiment id")),
        Some(Value::String(s)) if s.is_empty() => return Err(config_err("experiment", "experiment id is empty")),
        Some(v) => serde_json::from_value::<ExperimentId>(v.clone()).map_err(|_| {
            config_err(
                "experiment",
                format!("unknown experiment {v}; see `list` for the valid ids"),
            )
        })?,
    };
    let mut merged = serde_json::to_value(ExperimentConfig::defaults(id)).expect("defaults serialise");
    merge(&mut merged, user);
    let top: Top = serde_path_to_error::deserialize(merged).map_err(|e| config_err(e.path().to_string(), e.inner().to_string()))?;
    let settings = Study::parse(id, top.settings).map_err(|(p, m)| config_err(format!("settings.{p}"), m))?;
    let cfg = ExperimentConfig {
        experiment: top.experiment,
        seed: top.seed,
        output_dir: top.output_dir,
        cutoffs: top.cutoffs,
        settings,
    };
    check(&cfg)?;
    Ok(cfg)
}

fn within<T>(path: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Config { .. } => e,
        other => config_err(path, other.to_string()),
    })
}

fn positive(path: &str, v: usize) -> Result<()> {
    if v == 0 {
        return Err(config_err(path, "must be ≥ 1"));
    }
    Ok(())
}

fn spectra_ok(path: &str, spectra: &[Vec<f64>], n: usize) -> Result<()> {
    if spectra.is_empty() {
        return Err(config_err(path, "at least one spectrum is required"));
    }
    for (i, s) in spectra.iter().enumerate() {
        if s.len() != n {
            return Err(config_err(format!("{path}[{i}]"), format!("expected {n} singular values")));
        }
        if s.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(config_err(format!("{path}[{i}]"), "singular values must be finite and > 0"));
        }
    }
    Ok(())
}

fn linear_dims(meta: &MetaTrainConfig) -> Option<(usize, usize)> {
    match &meta.tasks {
        TaskSpec::Linear { distribution } => Some((distribution.nx, distribution.ny)),
        _ => None,
    }
}

fn meta_family(path: &str, meta: &MetaTrainConfig, ok: bool, what: &str) -> Result<()> {
    within(path, meta.validate())?;
    if !ok {
        return Err(config_err(format!("{path}.family"), format!("expected a {what} Meta-Learner")));
    }
    Ok(())
}

fn check(cfg: &ExperimentConfig) -> Result<()> {
    use crate::learners::LearnerFamily as LF;
    use crate::metalearners::MetaFamily as MF;
    if cfg.cutoffs.is_empty() || cfg.cutoffs.iter().any(|c| !(*c > 0.0 && *c < 1.0)) {
        return Err(config_err("cutoffs", "cutoffs must be non-empty and lie in (0, 1)"));
    }
    let learner = |path: &str, l: &LearnerConfig, fam: LF| -> Result<()> {
        within(path, l.validate())?;
        if l.family != fam {
            return Err(config_err(format!("{path}.family"), format!("expected {fam:?}")));
        }
        Ok(())
    };
    match &cfg.settings {
        Study::LinearLearner(s) => {
            positive("settings.replicas", s.replicas)?;
            learner("settings.learner", &s.learner, LF::LinearRegression)?;
            learner("settings.learner_5d", &s.learner_5d, LF::LinearRegression)?;
            spectra_ok("settings.spectra", &s.spectra, 2)?;
            spectra_ok("settings.spectrum_5d", std::slice::from_ref(&s.spectrum_5d), 5)?;
            if !(s.noise_std >= 0.0) {
                return Err(config_err("settings.noise_std", "must be ≥ 0"));
            }
        }
        Study::LinearMeta(s) => {
            positive("settings.replicas", s.replicas)?;
            positive("settings.episodes", s.episodes)?;
            positive("settings.save_every", s.save_every)?;
            meta_family("settings.meta", &s.meta, s.meta.family == MF::Linear, "linear")?;
            let (nx, ny) = linear_dims(&s.meta).expect("linear family");
            if nx != ny {
                return Err(config_err("settings.meta.tasks", "probe spectra need square tasks"));
            }
            spectra_ok("settings.spectra", &s.spectra, nx)?;
            if !s.checkpoints.is_empty() && s.checkpoints.len() != s.replicas {
                return Err(config_err("settings.checkpoints", "give one checkpoint per replica"));
            }
        }
        Study::LinearBayes(s) => {
            positive("settings.episodes", s.episodes)?;
            positive("settings.episode_len", s.episode_len)?;
            spectra_ok("settings.spectrum", std::slice::from_ref(&s.spectrum), s.spectrum.len().max(1))?;
            if !(s.noise_std > 0.0) {
                return Err(config_err("settings.noise_std", "the posterior needs noise_std > 0"));
            }
        }
        Study::Control(s) => {
            positive("settings.replicas", s.replicas)?;
            within("settings.meta", s.meta.validate())?;
            let fixed = matches!(
                &s.meta.tasks,
                TaskSpec::Linear { distribution } if matches!(distribution.mode, LinearTaskMode::FixedTask { .. })
            ) || matches!(s.meta.tasks, TaskSpec::FixedFourier { .. });
            if !fixed {
                return Err(config_err("settings.meta.tasks", "the LSTM control needs a fixed task"));
            }
        }
        Study::FourierLearner(s) => {
            positive("settings.replicas", s.replicas)?;
            learner("settings.learner", &s.learner, LF::FourierRegression)?;
            within("settings.mode", s.mode.validate())?;
        }
        Study::FourierMeta(s) => {
            positive("settings.replicas", s.replicas)?;
            positive("settings.episodes", s.episodes)?;
            positive("settings.save_every", s.save_every)?;
            meta_family("settings.meta", &s.meta, s.meta.family == MF::Fourier, "Fourier")?;
            within("settings.probe", s.probe.validate())?;
            if !s.checkpoints.is_empty() && s.checkpoints.len() != s.replicas {
                return Err(config_err("settings.checkpoints", "give one checkpoint per replica"));
            }
        }
        Study::FourierBayes(s) => {
            positive("settings.episodes", s.episodes)?;
            positive("settings.modes", s.modes)?;
            positive("settings.bins", s.bins)?;
            positive("settings.episode_len", s.episode_len)?;
            if !(s.noise_std > 0.0) {
                return Err(config_err("settings.noise_std", "the posterior needs noise_std > 0"));
            }
        }
        Study::BanditLearner(s) => {
            positive("settings.replicas", s.replicas)?;
            learner("settings.coupled", &s.coupled, LF::BanditCoupled)?;
            learner("settings.decoupled", &s.decoupled, LF::BanditDecoupled)?;
            within("settings.spec", TaskSpec::Bandit { spec: s.spec.clone() }.validate())?;
        }
        Study::BanditMeta(s) => {
            positive("settings.replicas", s.replicas)?;
            positive("settings.episodes", s.episodes)?;
            positive("settings.save_every", s.save_every)?;
            meta_family("settings.coupled", &s.coupled, s.coupled.family == MF::BanditCoupled, "coupled bandit")?;
            meta_family(
                "settings.decoupled",
                &s.decoupled,
                s.decoupled.family == MF::BanditDecoupled,
                "decoupled bandit",
            )?;
            for (path, cks) in [
                ("settings.coupled_checkpoints", &s.coupled_checkpoints),
                ("settings.decoupled_checkpoints", &s.decoupled_checkpoints),
            ] {
                if !cks.is_empty() && cks.len() != s.replicas {
                    return Err(config_err(path, "give one checkpoint per replica"));
                }
            }
            if !(s.sweep_cutoff > 0.0 && s.sweep_cutoff < 1.0) {
                return Err(config_err("settings.sweep_cutoff", "must lie in (0, 1)"));
            }
        }
        Study::BanditBayes(s) => {
            positive("settings.episodes", s.episodes)?;
            positive("settings.episode_len", s.episode_len)?;
            within("settings.spec", TaskSpec::Bandit { spec: s.spec.clone() }.validate())?;
        }
        Study::Outer(s) => {
            positive("settings.save_every", s.save_every)?;
            positive("settings.sweep.episodes", s.sweep.episodes)?;
            within("settings.meta", s.meta.validate())?;
            if !(s.sweep.cutoff > 0.0 && s.sweep.cutoff < 1.0) {
                return Err(config_err("settings.sweep.cutoff", "must lie in (0, 1)"));
            }
            let want = match cfg.experiment {
                ExperimentId::OuterDynamics1 => MF::Linear,
                ExperimentId::OuterDynamics2 => MF::Fourier,
                _ => MF::BanditCoupled,
            };
            if s.meta.family != want {
                return Err(config_err("settings.meta.family", format!("expected {want:?}")));
            }
            match (&s.decoupled, want) {
                (Some(d), MF::BanditCoupled) => {
                    meta_family("settings.decoupled", d, d.family == MF::BanditDecoupled, "decoupled bandit")?
                }
                (Some(_), _) => return Err(config_err("settings.decoupled", "only the bandit sweep has a decoupled run")),
                (None, _) => {}
            }
        }
    }
    Ok(())
}
