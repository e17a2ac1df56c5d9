//! Experiment orchestration: pre-learn a user model from logs, plan a
//! policy against it, and evaluate in the interactive environment after
//! every planning epoch.

mod config;
mod eval;
mod run;

use std::path::PathBuf;

pub use config::{BaselineConfig, EnvConfig, EnvKind, ExperimentConfig, PolicyKind};
pub use eval::{
    evaluate, EvalMetrics, PolicyRecommender, Recommender, StaticRecommender, TrajectoryRecord,
    UcbRecommender,
};
pub use run::{build_world, run_experiment, sweep, MetricsRow, RunSummary, SweepCell, World};

use crate::baselines::BaselineError;
use crate::env::EnvError;
use crate::policy::PolicyError;
use crate::statetracker::TrackerError;
use crate::usermodel::UserModelError;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Tracker(#[from] TrackerError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error("{0}")]
    Protocol(String),
}

/// Failures tagged with the pipeline stage that raised them.
#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("data stage: {0}")]
    Data(#[source] EnvError),
    #[error("pre-learning stage: {0}")]
    Pretrain(#[source] UserModelError),
    #[error("planning stage, epoch {epoch}: {source}")]
    Plan {
        epoch: usize,
        #[source]
        source: PolicyError,
    },
    #[error("evaluation stage, epoch {epoch}: {source}")]
    Eval {
        epoch: usize,
        #[source]
        source: EvalError,
    },
    #[error("output stage: {0}")]
    Output(String),
}
