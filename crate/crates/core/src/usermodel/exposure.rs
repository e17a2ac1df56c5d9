use serde::{Deserialize, Serialize};

use super::UserModelError;
use crate::env::{InteractionRecord, ItemCatalog, ItemId, UserId};
use crate::nncore::softplus;

/// Scale of the counterfactual exposure used in every experiment.
pub const DEFAULT_GAMMA_STAR: f64 = 10.0;

/// Temperatures and scale of the overexposure effect.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExposureConfig {
    /// Temperature for logged data, in seconds.
    pub tau: f64,
    /// Temperature while planning, in steps.
    pub tau_star: f64,
    pub gamma_star: f64,
}

impl Default for ExposureConfig {
    fn default() -> Self {
        Self {
            tau: 20.0,
            tau_star: 1.0,
            gamma_star: DEFAULT_GAMMA_STAR,
        }
    }
}

impl ExposureConfig {
    /// Exposure-free configuration (the model reduces to pure interest).
    pub fn without_exposure() -> Self {
        Self {
            tau: 0.0,
            tau_star: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), UserModelError> {
        if !(self.tau >= 0.0 && self.tau_star >= 0.0) {
            return Err(UserModelError::Config("tau and tau* must be >= 0".into()));
        }
        if !(self.gamma_star > 0.0) {
            return Err(UserModelError::Config("gamma* must be > 0".into()));
        }
        Ok(())
    }
}

/// Learned sensitivities plus the exposure hyperparameters.
///
/// `alpha_raw` / `beta_raw` are unconstrained; the effective values are
/// their softplus, which keeps both strictly positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExposureParams {
    pub alpha_raw: Vec<f64>,
    pub beta_raw: Vec<f64>,
    pub config: ExposureConfig,
}

impl ExposureParams {
    /// Every user and item starts with softplus(raw) = 1.
    pub fn unit(n_users: usize, n_items: usize, config: ExposureConfig) -> Self {
        let raw = crate::nncore::softplus_inv(1.0);
        Self {
            alpha_raw: vec![raw; n_users],
            beta_raw: vec![raw; n_items],
            config,
        }
    }

    pub fn alpha(&self, user: UserId) -> f64 {
        softplus(self.alpha_raw[user])
    }

    pub fn beta(&self, item: ItemId) -> f64 {
        softplus(self.beta_raw[item])
    }

    pub fn n_users(&self) -> usize {
        self.alpha_raw.len()
    }

    pub fn n_items(&self) -> usize {
        self.beta_raw.len()
    }

    fn check_ids(&self, user: UserId, item: ItemId) -> Result<(), UserModelError> {
        if user >= self.n_users() {
            return Err(UserModelError::UnknownUser(user));
        }
        if item >= self.n_items() {
            return Err(UserModelError::UnknownItem(item));
        }
        Ok(())
    }
}

/// `sum_l exp(-((t - t_l) / temperature) * dist(item, i_l))`; zero when the
/// temperature is zero.
pub fn exposure_kernel(
    history: impl IntoIterator<Item = (ItemId, f64)>,
    item: ItemId,
    t: f64,
    temperature: f64,
    catalog: &ItemCatalog,
) -> f64 {
    if temperature == 0.0 {
        return 0.0;
    }
    history
        .into_iter()
        .map(|(j, tj)| (-((t - tj) / temperature) * catalog.distance_unchecked(item, j)).exp())
        .sum()
}

/// Overexposure effect of showing `item` to `user` at time `t` given the
/// user's logged history (timestamps in seconds).
pub fn exposure_effect(
    history: &[InteractionRecord],
    user: UserId,
    item: ItemId,
    t: f64,
    params: &ExposureParams,
    catalog: &ItemCatalog,
) -> Result<f64, UserModelError> {
    params.check_ids(user, item)?;
    for r in history {
        if r.timestamp >= t {
            return Err(UserModelError::FutureHistory {
                at: t,
                found: r.timestamp,
            });
        }
        if r.user != user {
            return Err(UserModelError::Config(format!(
                "history for user {user} contains a record of user {}",
                r.user
            )));
        }
        if r.item >= catalog.len() {
            return Err(UserModelError::UnknownItem(r.item));
        }
    }
    let kernel = exposure_kernel(
        history.iter().map(|r| (r.item, r.timestamp)),
        item,
        t,
        params.config.tau,
        catalog,
    );
    Ok(params.alpha(user) * params.beta(item) * kernel)
}

/// Exposure effect during planning: `planning` holds `(item, step)` pairs of
/// the trajectory generated so far; time is measured in steps and scaled by
/// gamma*.
pub fn counterfactual_exposure(
    planning: &[(ItemId, usize)],
    user: UserId,
    item: ItemId,
    t_step: usize,
    params: &ExposureParams,
    catalog: &ItemCatalog,
) -> Result<f64, UserModelError> {
    params.check_ids(user, item)?;
    for &(j, step) in planning {
        if step >= t_step {
            return Err(UserModelError::FutureHistory {
                at: t_step as f64,
                found: step as f64,
            });
        }
        if j >= catalog.len() {
            return Err(UserModelError::UnknownItem(j));
        }
    }
    let kernel = exposure_kernel(
        planning.iter().map(|&(j, s)| (j, s as f64)),
        item,
        t_step as f64,
        params.config.tau_star,
        catalog,
    );
    Ok(params.config.gamma_star * params.alpha(user) * params.beta(item) * kernel)
}

/// Satisfaction shrunk by exposure: `y / (1 + e)`.
pub fn satisfaction(interest: f64, exposure: f64) -> Result<f64, UserModelError> {
    if !(exposure >= 0.0) {
        return Err(UserModelError::NegativeExposure(exposure));
    }
    Ok(interest / (1.0 + exposure))
}
