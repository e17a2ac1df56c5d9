use serde::{Deserialize, Serialize};

use super::{ItemCatalog, ItemId};

/// What counts as "too similar" to the recent window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExitThreshold {
    /// Quit once at least `n` window items share a tag with the candidate.
    SharedTags(usize),
    /// Quit when any window item lies closer than this distance.
    Distance(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExitConfig {
    /// Number of most recent recommendations inspected.
    pub window: usize,
    pub threshold: ExitThreshold,
    /// Episode horizon (max rounds).
    pub max_round: usize,
}

impl ExitConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.window == 0 {
            return Err("exit window N must be >= 1".into());
        }
        if self.max_round == 0 {
            return Err("max_round must be >= 1".into());
        }
        match self.threshold {
            ExitThreshold::SharedTags(0) => Err("n_Q must be >= 1".into()),
            ExitThreshold::Distance(d) if !(d > 0.0) => Err("d_Q must be > 0".into()),
            _ => Ok(()),
        }
    }
}

/// Whether recommending `candidate` after `window` makes the user quit.
///
/// Only the last `cfg.window` entries of `window` are inspected. A
/// shared-tag threshold never fires on a continuous catalog.
pub fn check_exit(
    window: &[ItemId],
    candidate: ItemId,
    cfg: &ExitConfig,
    catalog: &ItemCatalog,
) -> bool {
    let recent = &window[window.len().saturating_sub(cfg.window)..];
    match cfg.threshold {
        ExitThreshold::Distance(d_q) => recent
            .iter()
            .any(|&j| catalog.distance_unchecked(candidate, j) < d_q),
        ExitThreshold::SharedTags(n_q) => {
            catalog.is_categorical()
                && recent
                    .iter()
                    .filter(|&&j| catalog.shares_tag(candidate, j))
                    .count()
                    >= n_q
        }
    }
}
