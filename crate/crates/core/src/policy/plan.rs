use std::collections::HashSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ActMode, PolicyBundle, PolicyError, RolloutBatch, UpdateStats};
use crate::env::{ItemId, UserId};
use crate::seed::{stream_rng, Stage};
use crate::usermodel::CausalUserModel;

/// Source of planning-stage rewards.
pub trait RewardOracle {
    fn n_users(&self) -> usize;
    fn n_items(&self) -> usize;
    /// Reward for recommending `item` to `user` at planning step `step`,
    /// given the `(item, step)` pairs recommended so far.
    fn reward(
        &self,
        user: UserId,
        planning: &[(ItemId, usize)],
        item: ItemId,
        step: usize,
    ) -> Result<f64, PolicyError>;
}

impl RewardOracle for CausalUserModel {
    fn n_users(&self) -> usize {
        CausalUserModel::n_users(self)
    }

    fn n_items(&self) -> usize {
        CausalUserModel::n_items(self)
    }

    fn reward(
        &self,
        user: UserId,
        planning: &[(ItemId, usize)],
        item: ItemId,
        step: usize,
    ) -> Result<f64, PolicyError> {
        self.counterfactual_reward(planning, user, item, step)
            .map_err(|e| PolicyError::Oracle(e.to_string()))
    }
}

/// One planning episode as seen by the behaviour policy.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub user: UserId,
    pub items: Vec<ItemId>,
    /// Continuous actions before snapping (empty for discrete actors).
    pub raw_actions: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub logps: Vec<f64>,
    pub values: Vec<f64>,
}

impl Trajectory {
    pub(crate) fn check(&self) -> Result<(), PolicyError> {
        let n = self.items.len();
        if self.rewards.len() != n
            || self.logps.len() != n
            || self.values.len() != n
            || !(self.raw_actions.is_empty() || self.raw_actions.len() == n)
        {
            return Err(PolicyError::Length(format!(
                "trajectory with {n} items, {} rewards, {} log-probs, {} values",
                self.rewards.len(),
                self.logps.len(),
                self.values.len()
            )));
        }
        Ok(())
    }

    /// Fraction of steps recommending an item already shown earlier.
    pub fn repeat_rate(&self) -> f64 {
        if self.items.len() < 2 {
            return 0.0;
        }
        let mut seen = HashSet::new();
        let mut repeats = 0usize;
        for &i in &self.items {
            if !seen.insert(i) {
                repeats += 1;
            }
        }
        repeats as f64 / (self.items.len() - 1) as f64
    }
}

/// Roll out `n` planning episodes; episode `k` draws from its own stream.
pub fn collect_rollouts<O: RewardOracle + ?Sized>(
    bundle: &PolicyBundle,
    oracle: &O,
    n: usize,
    seed: u64,
    epoch: u64,
) -> Result<Vec<Trajectory>, PolicyError> {
    if oracle.n_items() != bundle.n_items() || oracle.n_users() != bundle.n_users() {
        return Err(PolicyError::Config(format!(
            "oracle has {}x{} users x items, policy has {}x{}",
            oracle.n_users(),
            oracle.n_items(),
            bundle.n_users(),
            bundle.n_items()
        )));
    }
    let horizon = bundle.config().ppo.horizon;
    (0..n)
        .map(|k| {
            let mut rng = stream_rng(seed, Stage::Plan, epoch, k as u64);
            let user = rng.random_range(0..bundle.n_users());
            let mut session = bundle.tracker().session(bundle.store(), user)?;
            let mut tr = Trajectory {
                user,
                items: Vec::with_capacity(horizon),
                raw_actions: Vec::new(),
                rewards: Vec::with_capacity(horizon),
                logps: Vec::with_capacity(horizon),
                values: Vec::with_capacity(horizon),
            };
            let mut planning: Vec<(ItemId, usize)> = Vec::with_capacity(horizon);
            for t in 0..horizon {
                let state = session.state();
                let value = bundle.value(state);
                let action = bundle.act(state, ActMode::Sample, &mut rng)?;
                let r = oracle.reward(user, &planning, action.item, t)?;
                if !r.is_finite() {
                    return Err(PolicyError::NonFinite {
                        what: "reward",
                        detail: format!("user {user}, item {}, step {t}", action.item),
                    });
                }
                planning.push((action.item, t));
                session.push(action.item, r)?;
                tr.items.push(action.item);
                tr.rewards.push(r);
                tr.logps.push(action.logp);
                tr.values.push(value);
                if let Some(raw) = action.raw {
                    tr.raw_actions.push(raw);
                }
            }
            Ok(tr)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanStats {
    pub epoch: usize,
    /// Mean undiscounted planned return per episode.
    pub mean_return: f64,
    pub repeat_rate: f64,
    pub update: UpdateStats,
}

impl PolicyBundle {
    /// One planning epoch: collect rollouts, then run a PPO update phase.
    pub fn plan_epoch<O: RewardOracle + ?Sized>(
        &mut self,
        oracle: &O,
        seed: u64,
        epoch: usize,
    ) -> Result<PlanStats, PolicyError> {
        let p = self.config().ppo;
        let trajs = collect_rollouts(self, oracle, p.rollouts_per_epoch, seed, epoch as u64)?;
        let n = trajs.len() as f64;
        let mean_return = trajs
            .iter()
            .map(|t| t.rewards.iter().sum::<f64>())
            .sum::<f64>()
            / n;
        let repeat_rate = trajs.iter().map(Trajectory::repeat_rate).sum::<f64>() / n;
        let batch = RolloutBatch::new(trajs, p.gamma, p.lambda)?;
        let mut rng = stream_rng(seed, Stage::Plan, epoch as u64, u64::MAX);
        let update = self.ppo_update(&batch, &mut rng)?;
        Ok(PlanStats {
            epoch,
            mean_return,
            repeat_rate,
            update,
        })
    }
}

/// Run `epochs` planning epochs against `oracle`.
pub fn plan<O: RewardOracle + ?Sized>(
    bundle: &mut PolicyBundle,
    oracle: &O,
    epochs: usize,
    seed: u64,
) -> Result<Vec<PlanStats>, PolicyError> {
    (0..epochs)
        .map(|e| bundle.plan_epoch(oracle, seed, e))
        .collect()
}
