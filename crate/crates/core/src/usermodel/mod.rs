//! Causal user model: an intrinsic-interest estimator plus an overexposure
//! effect that shrinks satisfaction for recently seen similar items.

mod exposure;
mod interest;
mod train;

pub use exposure::{
    counterfactual_exposure, exposure_effect, exposure_kernel, satisfaction, ExposureConfig,
    ExposureParams, DEFAULT_GAMMA_STAR,
};
pub use interest::{InterestConfig, InterestModel};
pub use train::{
    loss_graph, train_user_model, CausalUserModel, LossKind, TrainConfig, TrainData, TrainingBatch,
};

use crate::env::{ItemId, UserId};
use crate::nncore::NnError;

#[derive(Debug, thiserror::Error)]
pub enum UserModelError {
    #[error("unknown user id {0}")]
    UnknownUser(UserId),
    #[error("unknown item id {0}")]
    UnknownItem(ItemId),
    #[error("history record at {found} is not before the query time {at}")]
    FutureHistory { at: f64, found: f64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("exposure must be >= 0, got {0}")]
    NegativeExposure(f64),
    #[error("training logs are empty")]
    EmptyLogs,
    #[error("timestamps of user {user} are not strictly increasing at record {index}")]
    UnsortedLogs { user: UserId, index: usize },
    #[error("loss became non-finite in epoch {epoch}, batch {batch}: {detail}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        detail: String,
    },
    #[error("model file: {0}")]
    Sidecar(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}
