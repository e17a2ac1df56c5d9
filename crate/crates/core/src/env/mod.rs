//! Interactive evaluation environments with a "bored then quit" exit rule.

mod catalog;
mod environment;
mod exit;
pub mod io;
pub mod synth;

pub use catalog::{item_distance, ItemCatalog, MAX_TAGS_PER_ITEM};
pub use environment::{EnvState, Environment, ExitReason, RatingMatrix, StepResult};
pub use exit::{check_exit, ExitConfig, ExitThreshold};
pub use io::{load_catalog, load_matrix, load_records, InteractionRecord};
pub use synth::{synth_env, synth_logs, LogSpec, SynthLogs, SynthMode, SynthSpec, SynthWorld};

pub type UserId = usize;
pub type ItemId = usize;

#[derive(Debug, thiserror::Error)]
pub enum EnvError {
    #[error("unknown item id {0}")]
    UnknownItem(ItemId),
    #[error("unknown user id {0}")]
    UnknownUser(UserId),
    #[error("step called on a finished episode")]
    StepAfterDone,
    #[error("{file}:{line}:{column}: {message}")]
    Parse {
        file: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error(
        "{file}: matrix is not fully observed; first missing cell is user {user}, item {item}"
    )]
    Incomplete {
        file: String,
        user: UserId,
        item: ItemId,
    },
    #[error("{0}")]
    Invalid(String),
    #[error("{file}: {source}")]
    Io {
        file: String,
        #[source]
        source: std::io::Error,
    },
}
