use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::baselines::{select_static, select_ucb, BanditStats, StaticStrategy};
use crate::env::{Environment, ExitReason, ItemId, UserId};
use crate::policy::{ActMode, PolicyBundle};
use crate::seed::{stream_rng, Stage};
use crate::statetracker::TrackerSession;
use crate::usermodel::CausalUserModel;

/// A policy that can be driven through evaluation episodes.
pub trait Recommender {
    fn begin(&mut self, user: UserId) -> Result<(), EvalError>;
    fn recommend(&mut self, rng: &mut ChaCha8Rng) -> Result<ItemId, EvalError>;
    /// Feedback for the last recommendation, in raw rating units. Not
    /// called for a step that ends the episode with a bubble exit.
    fn observe(&mut self, item: ItemId, reward: f64) -> Result<(), EvalError>;
}

/// Drives a planned policy; rewards reach the tracker divided by `reward_scale`.
pub struct PolicyRecommender<'a> {
    bundle: &'a PolicyBundle,
    mode: ActMode,
    reward_scale: f64,
    session: Option<TrackerSession<'a>>,
}

impl<'a> PolicyRecommender<'a> {
    pub fn new(bundle: &'a PolicyBundle, mode: ActMode, reward_scale: f64) -> Self {
        Self {
            bundle,
            mode,
            reward_scale,
            session: None,
        }
    }

    fn session(&mut self) -> Result<&mut TrackerSession<'a>, EvalError> {
        self.session
            .as_mut()
            .ok_or_else(|| EvalError::Protocol("recommend called before begin".into()))
    }
}

impl Recommender for PolicyRecommender<'_> {
    fn begin(&mut self, user: UserId) -> Result<(), EvalError> {
        self.session = Some(self.bundle.tracker().session(self.bundle.store(), user)?);
        Ok(())
    }

    fn recommend(&mut self, rng: &mut ChaCha8Rng) -> Result<ItemId, EvalError> {
        let (bundle, mode) = (self.bundle, self.mode);
        let state = self.session()?.state();
        Ok(bundle.act(state, mode, rng)?.item)
    }

    fn observe(&mut self, item: ItemId, reward: f64) -> Result<(), EvalError> {
        let scale = self.reward_scale;
        self.session()?.push(item, reward / scale)?;
        Ok(())
    }
}

/// Scores each item by a fixed model's predicted interest.
pub struct StaticRecommender<'a> {
    model: Option<&'a CausalUserModel>,
    n_items: usize,
    strategy: StaticStrategy,
    user: Option<UserId>,
}

impl<'a> StaticRecommender<'a> {
    pub fn new(model: &'a CausalUserModel, strategy: StaticStrategy) -> Self {
        Self {
            model: Some(model),
            n_items: model.n_items(),
            strategy,
            user: None,
        }
    }

    /// Uniform choice that ignores any model.
    pub fn random(n_items: usize) -> Self {
        Self {
            model: None,
            n_items,
            strategy: StaticStrategy::Random,
            user: None,
        }
    }
}

impl Recommender for StaticRecommender<'_> {
    fn begin(&mut self, user: UserId) -> Result<(), EvalError> {
        if let Some(m) = self.model {
            if user >= m.n_users() {
                return Err(EvalError::Protocol(format!("unknown user {user}")));
            }
        }
        self.user = Some(user);
        Ok(())
    }

    fn recommend(&mut self, rng: &mut ChaCha8Rng) -> Result<ItemId, EvalError> {
        let user = self
            .user
            .ok_or_else(|| EvalError::Protocol("recommend called before begin".into()))?;
        let item = match self.model {
            Some(m) => select_static(m.interest_row(user), self.strategy, rng)?,
            None => rng.random_range(0..self.n_items),
        };
        Ok(item)
    }

    fn observe(&mut self, _: ItemId, _: f64) -> Result<(), EvalError> {
        Ok(())
    }
}

/// UCB1 whose statistics persist across users and episodes.
pub struct UcbRecommender {
    stats: BanditStats,
    reward_scale: f64,
}

impl UcbRecommender {
    pub fn new(stats: BanditStats, reward_scale: f64) -> Self {
        Self {
            stats,
            reward_scale,
        }
    }

    pub fn stats(&self) -> &BanditStats {
        &self.stats
    }
}

impl Recommender for UcbRecommender {
    fn begin(&mut self, _: UserId) -> Result<(), EvalError> {
        Ok(())
    }

    fn recommend(&mut self, _: &mut ChaCha8Rng) -> Result<ItemId, EvalError> {
        Ok(select_ucb(&self.stats))
    }

    fn observe(&mut self, item: ItemId, reward: f64) -> Result<(), EvalError> {
        self.stats.update(item, reward / self.reward_scale)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub user: UserId,
    pub items: Vec<ItemId>,
    pub rewards: Vec<f64>,
    pub cumulative: f64,
    pub exit_reason: ExitReason,
}

impl TrajectoryRecord {
    /// Steps taken, including a bubble-triggering one.
    pub fn length(&self) -> usize {
        self.items.len()
    }

    pub fn single_round(&self) -> f64 {
        self.cumulative / self.length() as f64
    }
}

/// One evaluation point: the three means plus the raw episodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub mean_cum_sat: f64,
    pub mean_len: f64,
    pub mean_single_round: f64,
    pub trajectories: Vec<TrajectoryRecord>,
}

impl EvalMetrics {
    pub fn from_trajectories(trajectories: Vec<TrajectoryRecord>) -> Self {
        let n = trajectories.len() as f64;
        let mean =
            |f: &dyn Fn(&TrajectoryRecord) -> f64| trajectories.iter().map(f).sum::<f64>() / n;
        Self {
            mean_cum_sat: mean(&|t| t.cumulative),
            mean_len: mean(&|t| t.length() as f64),
            mean_single_round: mean(&|t| t.single_round()),
            trajectories,
        }
    }
}

/// Run `n_traj` episodes, each with a uniformly drawn user, until exit or
/// horizon. Episode `k` of `epoch` draws from its own stream.
pub fn evaluate<R: Recommender + ?Sized>(
    rec: &mut R,
    env: &Environment,
    n_traj: usize,
    seed: u64,
    epoch: u64,
) -> Result<EvalMetrics, EvalError> {
    if n_traj == 0 {
        return Err(EvalError::Protocol("n_traj must be >= 1".into()));
    }
    let mut out = Vec::with_capacity(n_traj);
    for k in 0..n_traj {
        let mut rng = stream_rng(seed, Stage::Eval, epoch, k as u64);
        let mut state = env.reset_random(&mut rng);
        rec.begin(state.user)?;
        let mut tr = TrajectoryRecord {
            user: state.user,
            items: Vec::new(),
            rewards: Vec::new(),
            cumulative: 0.0,
            exit_reason: ExitReason::None,
        };
        while !state.done {
            let item = rec.recommend(&mut rng)?;
            let step = env.step(&mut state, item)?;
            tr.items.push(item);
            tr.rewards.push(step.reward);
            tr.exit_reason = step.exit_reason;
            if step.exit_reason != ExitReason::Bubble {
                rec.observe(item, step.reward)?;
            }
        }
        tr.cumulative = state.cumulative;
        out.push(tr);
    }
    Ok(EvalMetrics::from_trajectories(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{ExitConfig, ExitThreshold, ItemCatalog, RatingMatrix};

    struct Fixed(ItemId);

    impl Recommender for Fixed {
        fn begin(&mut self, _: UserId) -> Result<(), EvalError> {
            Ok(())
        }
        fn recommend(&mut self, _: &mut ChaCha8Rng) -> Result<ItemId, EvalError> {
            Ok(self.0)
        }
        fn observe(&mut self, _: ItemId, _: f64) -> Result<(), EvalError> {
            Ok(())
        }
    }

    fn env(tags: Vec<Vec<u32>>, vocab: usize, horizon: usize) -> Environment {
        let n_items = tags.len();
        let values: Vec<f64> = (0..3 * n_items)
            .map(|k| (k % 7) as f64 / 7.0 + 0.1)
            .collect();
        Environment::new(
            RatingMatrix::new(3, n_items, values).unwrap(),
            ItemCatalog::categorical(vocab, tags).unwrap(),
            ExitConfig {
                window: 1,
                threshold: ExitThreshold::SharedTags(1),
                max_round: horizon,
            },
            None,
        )
        .unwrap()
    }

    #[test]
    fn repeating_one_item_exits_on_the_second_step() {
        let e = env(vec![vec![0], vec![1], vec![2]], 3, 10);
        let m = evaluate(&mut Fixed(1), &e, 50, 3, 0).unwrap();
        for t in &m.trajectories {
            assert_eq!(t.length(), 2);
            assert_eq!(t.exit_reason, ExitReason::Bubble);
            assert_eq!(t.cumulative, e.matrix().get(t.user, 1));
        }
        assert_eq!(m.mean_len, 2.0);
        assert_eq!(m.trajectories.len(), 50);
    }

    #[test]
    fn distinct_tags_always_reach_the_horizon() {
        let tags: Vec<Vec<u32>> = (0..6).map(|t| vec![t]).collect();
        let e = env(tags, 6, 12);
        // Without repeats in a window of one, a cycling policy never exits.
        struct Cycle(usize);
        impl Recommender for Cycle {
            fn begin(&mut self, _: UserId) -> Result<(), EvalError> {
                Ok(())
            }
            fn recommend(&mut self, _: &mut ChaCha8Rng) -> Result<ItemId, EvalError> {
                self.0 = (self.0 + 1) % 6;
                Ok(self.0)
            }
            fn observe(&mut self, _: ItemId, _: f64) -> Result<(), EvalError> {
                Ok(())
            }
        }
        let m = evaluate(&mut Cycle(0), &e, 20, 1, 0).unwrap();
        assert!(m
            .trajectories
            .iter()
            .all(|t| t.length() == 12 && t.exit_reason == ExitReason::Horizon));
        for t in &m.trajectories {
            assert!((t.single_round() * t.length() as f64 - t.cumulative).abs() < 1e-12);
            assert!((t.rewards.iter().sum::<f64>() - t.cumulative).abs() < 1e-12);
        }
    }

    #[test]
    fn ucb_statistics_persist_across_episodes() {
        let e = env(vec![vec![0], vec![1], vec![2]], 3, 4);
        let mut rec = UcbRecommender::new(BanditStats::new(3, 1.0).unwrap(), 1.0);
        evaluate(&mut rec, &e, 5, 0, 0).unwrap();
        let after_one = rec.stats().total();
        let m = evaluate(&mut rec, &e, 5, 0, 1).unwrap();
        assert!(rec.stats().total() > after_one);
        let bubbles = m
            .trajectories
            .iter()
            .filter(|t| t.exit_reason == ExitReason::Bubble)
            .count();
        let steps: usize = m.trajectories.iter().map(TrajectoryRecord::length).sum();
        assert_eq!(rec.stats().total() - after_one, (steps - bubbles) as u64);
    }

    #[test]
    fn evaluation_is_reproducible() {
        let tags: Vec<Vec<u32>> = (0..8).map(|t| vec![t % 3]).collect();
        let e = env(tags, 3, 10);
        let a = evaluate(&mut StaticRecommender::random(8), &e, 30, 5, 2).unwrap();
        let b = evaluate(&mut StaticRecommender::random(8), &e, 30, 5, 2).unwrap();
        assert_eq!(a, b);
        assert!(evaluate(&mut StaticRecommender::random(8), &e, 0, 5, 2).is_err());
    }
}
