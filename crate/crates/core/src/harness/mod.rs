//! Experiment orchestration: ids, the figure registry, configs, runs and
//! the trace-to-figure analysis.

mod config;
mod figures;
mod pipelines;
mod run;
mod traces;

use serde::{Deserialize, Serialize};

pub use config::{
    percentiles_2d, reference_spectrum_5d, validate_config, BanditBayesStudy, BanditLearnerStudy, BanditMetaStudy,
    ControlStudy, ExperimentConfig, FourierBayesStudy, FourierLearnerStudy, FourierMetaStudy, LinearBayesStudy,
    LinearLearnerStudy, LinearMetaStudy, OuterStudy, Study,
};
pub use figures::{analyze, figure_dir_for, inner_progress, learner_progress, InnerProgress, RunProgress};
pub use run::{config_hash, probe, resolve_output_dir, run, FileEntry, RunManifest, RunOptions, RunStatus, SeedEntry};
pub use traces::{progress, TraceEntry, TraceFamily, TraceIndex, TraceKind, INDEX_FILE};

/// Every runnable experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ExperimentId {
    #[serde(rename = "exp1-learner")]
    Exp1Learner,
    #[serde(rename = "exp1-meta")]
    Exp1Meta,
    #[serde(rename = "exp1-bayes")]
    Exp1Bayes,
    #[serde(rename = "exp1-adam")]
    Exp1Adam,
    #[serde(rename = "exp1-lstm-control")]
    Exp1LstmControl,
    #[serde(rename = "exp1-ood")]
    Exp1Ood,
    #[serde(rename = "exp2-learner")]
    Exp2Learner,
    #[serde(rename = "exp2-meta")]
    Exp2Meta,
    #[serde(rename = "exp2-bayes")]
    Exp2Bayes,
    #[serde(rename = "exp2-bandpass")]
    Exp2Bandpass,
    #[serde(rename = "exp2-lstm-control")]
    Exp2LstmControl,
    #[serde(rename = "exp3-learner")]
    Exp3Learner,
    #[serde(rename = "exp3-meta")]
    Exp3Meta,
    #[serde(rename = "exp3-bayes")]
    Exp3Bayes,
    #[serde(rename = "outer-dynamics-1")]
    OuterDynamics1,
    #[serde(rename = "outer-dynamics-2")]
    OuterDynamics2,
    #[serde(rename = "outer-dynamics-3")]
    OuterDynamics3,
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 17] = [
        ExperimentId::Exp1Learner,
        ExperimentId::Exp1Meta,
        ExperimentId::Exp1Bayes,
        ExperimentId::Exp1Adam,
        ExperimentId::Exp1LstmControl,
        ExperimentId::Exp1Ood,
        ExperimentId::Exp2Learner,
        ExperimentId::Exp2Meta,
        ExperimentId::Exp2Bayes,
        ExperimentId::Exp2Bandpass,
        ExperimentId::Exp2LstmControl,
        ExperimentId::Exp3Learner,
        ExperimentId::Exp3Meta,
        ExperimentId::Exp3Bayes,
        ExperimentId::OuterDynamics1,
        ExperimentId::OuterDynamics2,
        ExperimentId::OuterDynamics3,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentId::Exp1Learner => "exp1-learner",
            ExperimentId::Exp1Meta => "exp1-meta",
            ExperimentId::Exp1Bayes => "exp1-bayes",
            ExperimentId::Exp1Adam => "exp1-adam",
            ExperimentId::Exp1LstmControl => "exp1-lstm-control",
            ExperimentId::Exp1Ood => "exp1-ood",
            ExperimentId::Exp2Learner => "exp2-learner",
            ExperimentId::Exp2Meta => "exp2-meta",
            ExperimentId::Exp2Bayes => "exp2-bayes",
            ExperimentId::Exp2Bandpass => "exp2-bandpass",
            ExperimentId::Exp2LstmControl => "exp2-lstm-control",
            ExperimentId::Exp3Learner => "exp3-learner",
            ExperimentId::Exp3Meta => "exp3-meta",
            ExperimentId::Exp3Bayes => "exp3-bayes",
            ExperimentId::OuterDynamics1 => "outer-dynamics-1",
            ExperimentId::OuterDynamics2 => "outer-dynamics-2",
            ExperimentId::OuterDynamics3 => "outer-dynamics-3",
        }
    }
}

impl std::fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ExperimentId {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        ExperimentId::ALL
            .into_iter()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| crate::Error::InvalidInput(format!("unknown experiment `{s}`")))
    }
}

/// One line of the registry.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegistryEntry {
    pub id: ExperimentId,
    pub figures: &'static str,
    pub budget: String,
}

/// Experiment ids, the figures they reproduce and their default budgets.
pub fn list_experiments() -> Vec<RegistryEntry> {
    ExperimentId::ALL
        .into_iter()
        .map(|id| RegistryEntry {
            id,
            figures: figures_for(id),
            budget: budget_for(&Study::defaults(id)),
        })
        .collect()
}

fn figures_for(id: ExperimentId) -> &'static str {
    match id {
        ExperimentId::Exp1Learner => "Fig 1, Fig 4a, Fig A1a",
        ExperimentId::Exp1Meta => "Fig 3 (reduced budget)",
        ExperimentId::Exp1Bayes => "Fig 6",
        ExperimentId::Exp1Adam => "Fig 7",
        ExperimentId::Exp1LstmControl => "Fig A4",
        ExperimentId::Exp1Ood => "Fig 5 (reduced budget)",
        ExperimentId::Exp2Learner => "Fig 8",
        ExperimentId::Exp2Meta => "Fig A5 (reduced budget)",
        ExperimentId::Exp2Bayes => "Fig 8 optimal panel",
        ExperimentId::Exp2Bandpass => "Fig A6 (reduced budget)",
        ExperimentId::Exp2LstmControl => "Fig A4 (Fourier variant)",
        ExperimentId::Exp3Learner => "Fig 9",
        ExperimentId::Exp3Meta => "Fig 9, Fig 12 (reduced budget)",
        ExperimentId::Exp3Bayes => "Fig 9 optimal panel",
        ExperimentId::OuterDynamics1 => "Fig 10 (reduced budget)",
        ExperimentId::OuterDynamics2 => "Fig 11 (reduced budget)",
        ExperimentId::OuterDynamics3 => "Fig 12 (reduced budget)",
    }
}

fn budget_for(study: &Study) -> String {
    match study {
        Study::LinearLearner(s) => format!(
            "{}×{} runs × {} steps, {} 5D runs × {} steps",
            s.spectra.len(),
            s.replicas,
            s.learner.steps,
            s.replicas_5d,
            s.learner_5d.steps
        ),
        Study::LinearMeta(s) => format!("{} × {} outer updates, {} probe episodes", s.replicas, s.meta.updates, s.episodes),
        Study::LinearBayes(s) => format!("{} episodes × T={}", s.episodes, s.episode_len),
        Study::Control(s) => format!("{} × {} updates", s.replicas, s.meta.updates),
        Study::FourierLearner(s) => format!("{} runs × {} steps", s.replicas, s.learner.steps),
        Study::FourierMeta(s) => format!("{} × {} outer updates, {} probe episodes", s.replicas, s.meta.updates, s.episodes),
        Study::FourierBayes(s) => format!("{} episodes, {}^{} hypotheses", s.episodes, s.bins, s.modes),
        Study::BanditLearner(s) => format!("2×{} runs, ≤ {} steps", s.replicas, s.coupled.steps),
        Study::BanditMeta(s) => format!("2×{} × {} outer updates", s.replicas, s.coupled.updates),
        Study::BanditBayes(s) => format!("{} episodes × T={}", s.episodes, s.episode_len),
        Study::Outer(s) => format!(
            "{} outer updates, {} checkpoints × {} probe episodes",
            s.meta.updates,
            s.meta.checkpoints.steps(s.meta.updates).len(),
            s.sweep.episodes
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_round_trip() {
        for id in ExperimentId::ALL {
            let json = serde_json::to_string(&id).unwrap();
            assert_eq!(json, format!("\"{id}\""));
            assert_eq!(id.as_str().parse::<ExperimentId>().unwrap(), id);
        }
    }

    #[test]
    fn registry_labels() {
        let reg = list_experiments();
        assert!(reg.len() >= 15);
        let label = |id| reg.iter().find(|e| e.id == id).unwrap().figures;
        assert_eq!(label(ExperimentId::Exp3Meta), "Fig 9, Fig 12 (reduced budget)");
        assert_eq!(label(ExperimentId::Exp1Adam), "Fig 7");
    }
}
