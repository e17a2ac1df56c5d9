//! Non-RL comparison policies: static-score selection and UCB1.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::ItemId;
use crate::nncore::softmax_row;
use crate::policy::{argmax, sample_index};

#[derive(Debug, thiserror::Error)]
pub enum BaselineError {
    #[error("catalog is empty")]
    EmptyCatalog,
    #[error("score of item {0} is not finite")]
    NonFiniteScore(ItemId),
    #[error("invalid parameter: {0}")]
    Invalid(String),
    #[error("unknown item id {0}")]
    UnknownItem(ItemId),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum StaticStrategy {
    /// Draw proportionally to `exp(score / temperature)`.
    Softmax {
        temperature: f64,
    },
    /// Uniform item with probability `eps`, otherwise the best score.
    EpsGreedy {
        eps: f64,
    },
    Random,
}

impl StaticStrategy {
    fn validate(&self) -> Result<(), BaselineError> {
        match *self {
            Self::Softmax { temperature } if !(temperature > 0.0) => Err(BaselineError::Invalid(
                format!("softmax temperature {temperature} must be > 0"),
            )),
            Self::EpsGreedy { eps } if !(0.0..=1.0).contains(&eps) => Err(BaselineError::Invalid(
                format!("epsilon {eps} must be in [0, 1]"),
            )),
            _ => Ok(()),
        }
    }
}

fn check_scores(scores: &[f64]) -> Result<(), BaselineError> {
    if scores.is_empty() {
        return Err(BaselineError::EmptyCatalog);
    }
    match scores.iter().position(|s| !s.is_finite()) {
        Some(i) => Err(BaselineError::NonFiniteScore(i)),
        None => Ok(()),
    }
}

/// Selection distribution implied by `strategy` over `scores`.
pub fn static_probabilities(
    scores: &[f64],
    strategy: StaticStrategy,
) -> Result<Vec<f64>, BaselineError> {
    check_scores(scores)?;
    strategy.validate()?;
    let n = scores.len();
    Ok(match strategy {
        StaticStrategy::Softmax { temperature } => {
            let scaled: Vec<f64> = scores.iter().map(|s| s / temperature).collect();
            let mut p = vec![0.0; n];
            softmax_row(&scaled, &mut p);
            p
        }
        StaticStrategy::EpsGreedy { eps } => {
            let mut p = vec![eps / n as f64; n];
            p[argmax(scores)] += 1.0 - eps;
            p
        }
        StaticStrategy::Random => vec![1.0 / n as f64; n],
    })
}

pub fn select_static<R: Rng + ?Sized>(
    scores: &[f64],
    strategy: StaticStrategy,
    rng: &mut R,
) -> Result<ItemId, BaselineError> {
    check_scores(scores)?;
    strategy.validate()?;
    let n = scores.len();
    Ok(match strategy {
        StaticStrategy::Random => rng.random_range(0..n),
        StaticStrategy::EpsGreedy { eps } => {
            if eps > 0.0 && rng.random::<f64>() < eps {
                rng.random_range(0..n)
            } else {
                argmax(scores)
            }
        }
        StaticStrategy::Softmax { .. } => {
            sample_index(&static_probabilities(scores, strategy)?, rng)
        }
    })
}

/// Per-item pull counts and running mean rewards for UCB1.
#[derive(Debug, Clone, PartialEq)]
pub struct BanditStats {
    counts: Vec<u64>,
    means: Vec<f64>,
    total: u64,
    c: f64,
}

impl BanditStats {
    pub fn new(n_items: usize, c: f64) -> Result<Self, BaselineError> {
        if n_items == 0 {
            return Err(BaselineError::EmptyCatalog);
        }
        if !(c >= 0.0 && c.is_finite()) {
            return Err(BaselineError::Invalid(format!(
                "exploration coefficient {c}"
            )));
        }
        Ok(Self {
            counts: vec![0; n_items],
            means: vec![0.0; n_items],
            total: 0,
            c,
        })
    }

    /// Build from explicit counts and means (total is their count sum).
    pub fn from_parts(counts: Vec<u64>, means: Vec<f64>, c: f64) -> Result<Self, BaselineError> {
        if counts.len() != means.len() {
            return Err(BaselineError::Invalid(
                "counts and means differ in length".into(),
            ));
        }
        let mut s = Self::new(counts.len(), c)?;
        s.total = counts.iter().sum();
        s.counts = counts;
        s.means = means;
        Ok(s)
    }

    pub fn update(&mut self, item: ItemId, reward: f64) -> Result<(), BaselineError> {
        if item >= self.counts.len() {
            return Err(BaselineError::UnknownItem(item));
        }
        self.counts[item] += 1;
        self.total += 1;
        self.means[item] += (reward - self.means[item]) / self.counts[item] as f64;
        Ok(())
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn c(&self) -> f64 {
        self.c
    }
}

/// UCB1: untried items first (lowest id), otherwise the highest
/// `mean + c * sqrt(2 ln T / n)`, ties to the lowest id.
pub fn select_ucb(stats: &BanditStats) -> ItemId {
    if let Some(i) = stats.counts.iter().position(|&n| n == 0) {
        return i;
    }
    let ln_t = (stats.total as f64).ln();
    let scores: Vec<f64> = stats
        .means
        .iter()
        .zip(&stats.counts)
        .map(|(m, &n)| m + stats.c * (2.0 * ln_t / n as f64).sqrt())
        .collect();
    argmax(&scores)
}
