use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{check_exit, EnvError, ExitConfig, ExitThreshold, ItemCatalog, ItemId, UserId};

/// Dense, fully observed user x item interest matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct RatingMatrix {
    n_users: usize,
    n_items: usize,
    values: Vec<f64>,
}

impl RatingMatrix {
    pub fn new(n_users: usize, n_items: usize, values: Vec<f64>) -> Result<Self, EnvError> {
        if n_users == 0 || n_items == 0 {
            return Err(EnvError::Invalid(
                "rating matrix needs at least one user and item".into(),
            ));
        }
        if values.len() != n_users * n_items {
            return Err(EnvError::Invalid(format!(
                "{n_users}x{n_items} matrix given {} values",
                values.len()
            )));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(EnvError::Invalid(format!(
                "rating for user {} item {} is {} (must be finite and >= 0)",
                k / n_items,
                k % n_items,
                values[k]
            )));
        }
        Ok(Self {
            n_users,
            n_items,
            values,
        })
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn get(&self, user: UserId, item: ItemId) -> f64 {
        self.values[user * self.n_items + item]
    }

    pub fn user_row(&self, user: UserId) -> &[f64] {
        &self.values[user * self.n_items..(user + 1) * self.n_items]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExitReason {
    None,
    Bubble,
    Horizon,
}

impl std::fmt::Display for ExitReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::None => "none",
            Self::Bubble => "bubble",
            Self::Horizon => "horizon",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepResult {
    pub reward: f64,
    pub done: bool,
    pub exit_reason: ExitReason,
}

/// Per-episode state. Owned by a single rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub user: UserId,
    pub t: usize,
    pub window: VecDeque<ItemId>,
    pub done: bool,
    pub cumulative: f64,
}

/// An interactive evaluation environment. Immutable once built, so any
/// number of episodes may run against one shared value.
#[derive(Debug, Clone)]
pub struct Environment {
    matrix: RatingMatrix,
    catalog: ItemCatalog,
    exit: ExitConfig,
    user_features: Option<Vec<Vec<f64>>>,
}

impl Environment {
    pub fn new(
        matrix: RatingMatrix,
        catalog: ItemCatalog,
        exit: ExitConfig,
        user_features: Option<Vec<Vec<f64>>>,
    ) -> Result<Self, EnvError> {
        exit.validate().map_err(EnvError::Invalid)?;
        if matrix.n_items() != catalog.len() {
            return Err(EnvError::Invalid(format!(
                "matrix has {} items but catalog has {}",
                matrix.n_items(),
                catalog.len()
            )));
        }
        if matches!(exit.threshold, ExitThreshold::SharedTags(_)) && !catalog.is_categorical() {
            return Err(EnvError::Invalid(
                "shared-tag exit threshold needs a categorical catalog".into(),
            ));
        }
        if let Some(f) = &user_features {
            if f.len() != matrix.n_users() {
                return Err(EnvError::Invalid(format!(
                    "{} user feature rows for {} users",
                    f.len(),
                    matrix.n_users()
                )));
            }
        }
        Ok(Self {
            matrix,
            catalog,
            exit,
            user_features,
        })
    }

    pub fn matrix(&self) -> &RatingMatrix {
        &self.matrix
    }

    pub fn catalog(&self) -> &ItemCatalog {
        &self.catalog
    }

    pub fn exit_config(&self) -> &ExitConfig {
        &self.exit
    }

    pub fn user_features(&self) -> Option<&[Vec<f64>]> {
        self.user_features.as_deref()
    }

    pub fn n_users(&self) -> usize {
        self.matrix.n_users()
    }

    pub fn n_items(&self) -> usize {
        self.matrix.n_items()
    }

    /// Same data with a different exit rule.
    pub fn with_exit(&self, exit: ExitConfig) -> Result<Self, EnvError> {
        Self::new(
            self.matrix.clone(),
            self.catalog.clone(),
            exit,
            self.user_features.clone(),
        )
    }

    pub fn reset(&self, user: UserId) -> Result<EnvState, EnvError> {
        if user >= self.n_users() {
            return Err(EnvError::UnknownUser(user));
        }
        Ok(EnvState {
            user,
            t: 0,
            window: VecDeque::with_capacity(self.exit.window + 1),
            done: false,
            cumulative: 0.0,
        })
    }

    /// Reset with a uniformly drawn user.
    pub fn reset_random<R: Rng + ?Sized>(&self, rng: &mut R) -> EnvState {
        let user = rng.random_range(0..self.n_users());
        self.reset(user).expect("sampled user is in range")
    }

    /// Recommend `item`. The exit rule is checked before any reward is
    /// credited, so a bubble-triggering step earns nothing.
    pub fn step(&self, state: &mut EnvState, item: ItemId) -> Result<StepResult, EnvError> {
        if state.done {
            return Err(EnvError::StepAfterDone);
        }
        if item >= self.n_items() {
            return Err(EnvError::UnknownItem(item));
        }
        let window: Vec<ItemId> = state.window.iter().copied().collect();
        state.t += 1;
        if check_exit(&window, item, &self.exit, &self.catalog) {
            state.done = true;
            return Ok(StepResult {
                reward: 0.0,
                done: true,
                exit_reason: ExitReason::Bubble,
            });
        }
        let reward = self.matrix.get(state.user, item);
        state.cumulative += reward;
        state.window.push_back(item);
        while state.window.len() > self.exit.window {
            state.window.pop_front();
        }
        let horizon = state.t >= self.exit.max_round;
        state.done = horizon;
        Ok(StepResult {
            reward,
            done: horizon,
            exit_reason: if horizon {
                ExitReason::Horizon
            } else {
                ExitReason::None
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kuai_like(tags: Vec<Vec<u32>>, max_round: usize) -> Environment {
        let n = tags.len();
        let matrix =
            RatingMatrix::new(2, n, (0..2 * n).map(|k| 0.5 + k as f64 * 0.01).collect()).unwrap();
        let catalog = ItemCatalog::categorical(31, tags).unwrap();
        let exit = ExitConfig {
            window: 1,
            threshold: ExitThreshold::SharedTags(1),
            max_round,
        };
        Environment::new(matrix, catalog, exit, None).unwrap()
    }

    #[test]
    fn reset_is_fresh_and_repeatable() {
        let env = kuai_like(vec![vec![0], vec![1]], 5);
        let a = env.reset(1).unwrap();
        assert_eq!(a, env.reset(1).unwrap());
        assert_eq!(a.t, 0);
        assert_eq!(a.cumulative, 0.0);
        assert!(a.window.is_empty() && !a.done);
        assert!(matches!(env.reset(2), Err(EnvError::UnknownUser(2))));
    }

    #[test]
    fn first_step_pays_the_matrix_value() {
        let env = kuai_like(vec![vec![0], vec![0]], 5);
        let mut s = env.reset(0).unwrap();
        let r = env.step(&mut s, 1).unwrap();
        assert_eq!(r.reward, env.matrix().get(0, 1));
        assert!(!r.done);
        assert_eq!(r.exit_reason, ExitReason::None);
    }

    #[test]
    fn shared_tag_in_a_row_ends_with_zero_reward() {
        let env = kuai_like(vec![vec![0, 4], vec![4, 9], vec![2]], 10);
        let mut s = env.reset(0).unwrap();
        env.step(&mut s, 0).unwrap();
        let r = env.step(&mut s, 1).unwrap();
        assert_eq!(r.reward, 0.0);
        assert!(r.done);
        assert_eq!(r.exit_reason, ExitReason::Bubble);
        assert_eq!(s.t, 2);
        assert_eq!(s.cumulative, env.matrix().get(0, 0));
        assert!(matches!(env.step(&mut s, 2), Err(EnvError::StepAfterDone)));
        // A reset after done gives a usable episode again.
        let mut s = env.reset(0).unwrap();
        assert!(env.step(&mut s, 2).is_ok());
    }

    #[test]
    fn distinct_tags_run_to_the_horizon() {
        let tags: Vec<Vec<u32>> = (0..30).map(|k| vec![k]).collect();
        let env = kuai_like(tags, 30);
        let mut s = env.reset(1).unwrap();
        let mut rewards = Vec::new();
        for item in 0..30 {
            let r = env.step(&mut s, item).unwrap();
            rewards.push(r.reward);
            if item < 29 {
                assert!(!r.done);
            } else {
                assert!(r.done);
                assert_eq!(r.exit_reason, ExitReason::Horizon);
            }
        }
        assert_eq!(rewards.len(), 30);
        assert!(rewards.iter().all(|&r| r > 0.0));
        assert!((s.cumulative - rewards.iter().sum::<f64>()).abs() < 1e-12);
    }

    #[test]
    fn window_evicts_the_oldest() {
        let tags: Vec<Vec<u32>> = (0..6).map(|k| vec![k]).collect();
        let n = tags.len();
        let env = Environment::new(
            RatingMatrix::new(1, n, vec![1.0; n]).unwrap(),
            ItemCatalog::categorical(6, tags).unwrap(),
            ExitConfig {
                window: 3,
                threshold: ExitThreshold::SharedTags(1),
                max_round: 100,
            },
            None,
        )
        .unwrap();
        let mut s = env.reset(0).unwrap();
        for item in 0..5 {
            env.step(&mut s, item).unwrap();
            assert!(s.window.len() <= 3);
            assert_eq!(*s.window.back().unwrap(), item);
        }
        assert_eq!(s.window.iter().copied().collect::<Vec<_>>(), vec![2, 3, 4]);
        // Item 0 left the window, so repeating it is allowed again.
        assert!(!env.step(&mut s, 0).unwrap().done);
    }

    #[test]
    fn rejects_mismatched_configuration() {
        let m = RatingMatrix::new(1, 2, vec![1.0, 2.0]).unwrap();
        let cont = ItemCatalog::continuous(vec![vec![0.0], vec![1.0]]).unwrap();
        let exit = ExitConfig {
            window: 1,
            threshold: ExitThreshold::SharedTags(1),
            max_round: 3,
        };
        assert!(Environment::new(m.clone(), cont.clone(), exit, None).is_err());
        let bad = ExitConfig {
            window: 0,
            threshold: ExitThreshold::Distance(1.0),
            max_round: 3,
        };
        assert!(Environment::new(m, cont, bad, None).is_err());
        assert!(RatingMatrix::new(1, 2, vec![1.0, -0.5]).is_err());
    }
}
