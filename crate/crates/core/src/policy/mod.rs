//! PPO actor-critic recommendation policy on top of the state tracker.

mod plan;
mod ppo;

pub use plan::{collect_rollouts, plan, PlanStats, RewardOracle, Trajectory};
pub use ppo::{
    clipped_objective, gae, normalize_advantages, policy_terms, PolicyTerms, RolloutBatch,
    UpdateStats,
};

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::env::ItemId;
use crate::nncore::{
    load_params, matmul_into, save_params, softmax_row, Adam, AdamConfig, NnError, ParamId,
    ParamStore, Tape, Tensor, Var,
};
use crate::statetracker::{StateTracker, TrackerConfig, TrackerError, TrackerInputs};

#[derive(Debug, thiserror::Error)]
pub enum PolicyError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("length mismatch: {0}")]
    Length(String),
    #[error("non-finite {what}: {detail}")]
    NonFinite { what: &'static str, detail: String },
    #[error("reward oracle failed: {0}")]
    Oracle(String),
    #[error("policy file: {0}")]
    Sidecar(String),
    #[error(transparent)]
    Tracker(#[from] TrackerError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActMode {
    Sample,
    Greedy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActionSpace {
    /// Softmax over catalog items.
    Discrete,
    /// Diagonal Gaussian over item-vector space, snapped to the nearest item.
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub clip_eps: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub update_epochs: usize,
    /// Trajectories per minibatch.
    pub minibatch_size: usize,
    /// Trajectories collected per planning epoch.
    pub rollouts_per_epoch: usize,
    pub horizon: usize,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub tracker_lr: f64,
    pub hidden: usize,
    /// Initial log standard deviation of the Gaussian actor.
    pub init_log_std: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            clip_eps: 0.2,
            gamma: 0.99,
            lambda: 0.95,
            update_epochs: 4,
            minibatch_size: 8,
            rollouts_per_epoch: 16,
            horizon: 30,
            entropy_coef: 0.01,
            value_coef: 0.5,
            actor_lr: 1e-3,
            critic_lr: 1e-3,
            tracker_lr: 1e-3,
            hidden: 64,
            init_log_std: -0.5,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), PolicyError> {
        let bad = |m: &str| Err(PolicyError::Config(m.into()));
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return bad("clip_eps must be in (0, 1)");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0 && self.lambda > 0.0 && self.lambda <= 1.0) {
            return bad("gamma and lambda must be in (0, 1]");
        }
        if self.update_epochs == 0
            || self.minibatch_size == 0
            || self.rollouts_per_epoch == 0
            || self.horizon == 0
            || self.hidden == 0
        {
            return bad("update_epochs, minibatch_size, rollouts_per_epoch, horizon and hidden must be >= 1");
        }
        if [self.actor_lr, self.critic_lr, self.tracker_lr]
            .iter()
            .any(|&lr| !(lr > 0.0))
        {
            return bad("learning rates must be > 0");
        }
        if self.entropy_coef < 0.0 || self.value_coef < 0.0 {
            return bad("loss coefficients must be >= 0");
        }
        Ok(())
    }
}

/// Output layer of a discrete actor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActorHead {
    /// Hidden layer followed by one output weight column per item.
    Mlp,
    /// Hidden layer to a query `q` in state space; item `j` scores
    /// `q . e_j + c_j` with `e_j` the tracker's learned item embedding.
    ItemDot,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub tracker: TrackerConfig,
    pub ppo: PpoConfig,
    pub action_space: ActionSpace,
    pub actor_head: ActorHead,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            tracker: TrackerConfig::default(),
            ppo: PpoConfig::default(),
            action_space: ActionSpace::Discrete,
            actor_head: ActorHead::Mlp,
        }
    }
}

/// Item table and bias of an [`ActorHead::ItemDot`] actor.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ItemDot {
    pub table: ParamId,
    pub bias: ParamId,
}

/// A chosen action. `raw` holds the continuous action for Gaussian actors.
#[derive(Debug, Clone, PartialEq)]
pub struct Action {
    pub item: ItemId,
    pub logp: f64,
    pub raw: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Mlp {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl Mlp {
    fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        d_in: usize,
        hidden: usize,
        d_out: usize,
        out_std: f64,
        rng: &mut R,
    ) -> Result<Self, NnError> {
        Ok(Self {
            w1: store.add(
                format!("{prefix}.w1"),
                Tensor::randn(&[d_in, hidden], (2.0 / d_in as f64).sqrt(), rng),
            )?,
            b1: store.add(format!("{prefix}.b1"), Tensor::zeros(&[1, hidden]))?,
            w2: store.add(
                format!("{prefix}.w2"),
                Tensor::randn(&[hidden, d_out], out_std, rng),
            )?,
            b2: store.add(format!("{prefix}.b2"), Tensor::zeros(&[1, d_out]))?,
        })
    }

    fn ids(&self) -> Vec<ParamId> {
        vec![self.w1, self.b1, self.w2, self.b2]
    }

    fn plain(&self, store: &ParamStore, x: &[f64]) -> Vec<f64> {
        let w1 = store.get(self.w1);
        let (d_in, h) = (w1.rows(), w1.cols());
        let mut hid = vec![0.0; h];
        matmul_into(x, w1.data(), &mut hid, 1, d_in, h);
        for (v, b) in hid.iter_mut().zip(store.get(self.b1).data()) {
            *v = (*v + b).max(0.0);
        }
        let w2 = store.get(self.w2);
        let mut out = vec![0.0; w2.cols()];
        matmul_into(&hid, w2.data(), &mut out, 1, h, w2.cols());
        for (v, b) in out.iter_mut().zip(store.get(self.b2).data()) {
            *v += b;
        }
        out
    }

    fn tape(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var, NnError> {
        let w1 = tape.param(self.w1);
        let b1 = tape.param(self.b1);
        let w2 = tape.param(self.w2);
        let b2 = tape.param(self.b2);
        let h = tape.matmul(x, w1)?;
        let h = tape.add(h, b1)?;
        let h = tape.relu(h);
        let o = tape.matmul(h, w2)?;
        tape.add(o, b2)
    }
}

/// Log-softmax of one row, computed as `l - m - ln(sum(exp(l - m)))`.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = logits.iter().map(|l| (l - m).exp()).sum();
    let lse = total.ln();
    logits.iter().map(|l| l - m - lse).collect()
}

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Tracker, actor and critic parameters with their optimizers.
#[derive(Debug, Clone)]
pub struct PolicyBundle {
    store: ParamStore,
    tracker: StateTracker,
    actor: Mlp,
    log_std: Option<ParamId>,
    item_dot: Option<ItemDot>,
    critic: Mlp,
    cfg: PolicyConfig,
    item_vectors: Option<Tensor>,
    actor_ids: Vec<ParamId>,
    critic_ids: Vec<ParamId>,
    actor_opt: Adam,
    critic_opt: Adam,
    tracker_opt: Adam,
}

impl PolicyBundle {
    pub fn new<R: Rng + ?Sized>(
        cfg: PolicyConfig,
        inputs: TrackerInputs,
        rng: &mut R,
    ) -> Result<Self, PolicyError> {
        cfg.ppo.validate()?;
        if cfg.ppo.horizon > cfg.tracker.max_len {
            return Err(PolicyError::Config(format!(
                "horizon {} exceeds tracker max_len {}",
                cfg.ppo.horizon, cfg.tracker.max_len
            )));
        }
        let item_vectors = match (&inputs, cfg.action_space) {
            (_, ActionSpace::Discrete) => None,
            (TrackerInputs::Features { items, .. }, ActionSpace::Gaussian) => {
                if !cfg!(feature = "continuous") {
                    return Err(PolicyError::Config(
                        "Gaussian actor needs the `continuous` feature".into(),
                    ));
                }
                let d = items[0].len();
                Some(Tensor::matrix(items.len(), d, items.concat())?)
            }
            (TrackerInputs::Embedded { .. }, ActionSpace::Gaussian) => {
                return Err(PolicyError::Config(
                    "Gaussian actor needs fixed item vectors".into(),
                ))
            }
        };
        let mut store = ParamStore::new();
        let tracker = StateTracker::new(cfg.tracker, inputs, &mut store, rng)?;
        let d = tracker.d_s();
        let h = cfg.ppo.hidden;
        let item_dot = match (cfg.action_space, cfg.actor_head) {
            (ActionSpace::Discrete, ActorHead::ItemDot) => Some(ItemDot {
                table: tracker.item_table_id().ok_or_else(|| {
                    PolicyError::Config("item-dot actor needs learned item embeddings".into())
                })?,
                bias: store.add("actor.item_bias", Tensor::zeros(&[1, tracker.n_items()]))?,
            }),
            _ => None,
        };
        let (actor, log_std) = match &item_vectors {
            None if item_dot.is_some() => {
                (Mlp::new(&mut store, "actor", d, h, d, 0.01, rng)?, None)
            }
            None => (
                Mlp::new(&mut store, "actor", d, h, tracker.n_items(), 0.01, rng)?,
                None,
            ),
            Some(v) => {
                let a = Mlp::new(&mut store, "actor", d, h, v.cols(), 0.01, rng)?;
                let ls = store.add(
                    "actor.log_std",
                    Tensor::full(&[1, v.cols()], cfg.ppo.init_log_std),
                )?;
                (a, Some(ls))
            }
        };
        let critic = Mlp::new(&mut store, "critic", d, h, 1, 0.01, rng)?;
        let mut actor_ids = actor.ids();
        actor_ids.extend(log_std);
        actor_ids.extend(item_dot.map(|h| h.bias));
        let critic_ids = critic.ids();
        let p = cfg.ppo;
        let actor_opt =
            Adam::for_params(AdamConfig::with_lr(p.actor_lr), &store, actor_ids.clone());
        let critic_opt =
            Adam::for_params(AdamConfig::with_lr(p.critic_lr), &store, critic_ids.clone());
        let tracker_opt = Adam::for_params(
            AdamConfig::with_lr(p.tracker_lr),
            &store,
            tracker.param_ids().to_vec(),
        );
        Ok(Self {
            store,
            tracker,
            actor,
            log_std,
            item_dot,
            critic,
            cfg,
            item_vectors,
            actor_ids,
            critic_ids,
            actor_opt,
            critic_opt,
            tracker_opt,
        })
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn tracker(&self) -> &StateTracker {
        &self.tracker
    }

    pub fn config(&self) -> &PolicyConfig {
        &self.cfg
    }

    pub fn n_items(&self) -> usize {
        self.tracker.n_items()
    }

    pub fn n_users(&self) -> usize {
        self.tracker.n_users()
    }

    pub fn actor_param_ids(&self) -> &[ParamId] {
        &self.actor_ids
    }

    pub fn critic_param_ids(&self) -> &[ParamId] {
        &self.critic_ids
    }

    /// Actor output for one state: logits (discrete) or the mean (Gaussian).
    pub fn actor_output(&self, state: &[f64]) -> Vec<f64> {
        let out = self.actor.plain(&self.store, state);
        match self.item_dot {
            None => out,
            Some(h) => {
                let table = self.store.get(h.table);
                let mut logits = self.store.get(h.bias).data().to_vec();
                for (j, l) in logits.iter_mut().enumerate() {
                    *l += table
                        .row(j)
                        .iter()
                        .zip(&out)
                        .map(|(e, q)| e * q)
                        .sum::<f64>();
                }
                logits
            }
        }
    }

    /// Tape counterpart of [`actor_output`](Self::actor_output) for `[B, d_s]` states.
    pub(crate) fn actor_tape(&self, tape: &mut Tape<'_>, states: Var) -> Result<Var, NnError> {
        let out = self.actor.tape(tape, states)?;
        match self.item_dot {
            None => Ok(out),
            Some(h) => {
                let table = tape.param(h.table);
                let t = tape.transpose(table);
                let logits = tape.matmul(out, t)?;
                let bias = tape.param(h.bias);
                tape.add(logits, bias)
            }
        }
    }

    pub fn value(&self, state: &[f64]) -> f64 {
        self.critic.plain(&self.store, state)[0]
    }

    /// Choose an item for `state`, returning the exact log-probability of
    /// the chosen action under the current parameters.
    pub fn act<R: Rng + ?Sized>(
        &self,
        state: &[f64],
        mode: ActMode,
        rng: &mut R,
    ) -> Result<Action, PolicyError> {
        if state.iter().any(|v| !v.is_finite()) {
            return Err(PolicyError::NonFinite {
                what: "state",
                detail: format!("{state:?}"),
            });
        }
        let out = self.actor_output(state);
        if out.iter().any(|v| !v.is_finite()) {
            return Err(PolicyError::NonFinite {
                what: "logits",
                detail: format!("actor output {out:?}"),
            });
        }
        match &self.item_vectors {
            None => {
                let lp = log_softmax(&out);
                let item = match mode {
                    ActMode::Greedy => argmax(&out),
                    ActMode::Sample => {
                        let mut p = vec![0.0; out.len()];
                        softmax_row(&out, &mut p);
                        sample_index(&p, rng)
                    }
                };
                Ok(Action {
                    item,
                    logp: lp[item],
                    raw: None,
                })
            }
            Some(items) => {
                let log_std = self.store.get(self.log_std.expect("gaussian")).data();
                let raw: Vec<f64> = match mode {
                    ActMode::Greedy => out.clone(),
                    ActMode::Sample => out
                        .iter()
                        .zip(log_std)
                        .map(|(m, ls)| {
                            let z: f64 = StandardNormal.sample(rng);
                            m + ls.exp() * z
                        })
                        .collect(),
                };
                let logp = gaussian_logp(&raw, &out, log_std);
                Ok(Action {
                    item: nearest_row(items, &raw),
                    logp,
                    raw: Some(raw),
                })
            }
        }
    }

    /// Probabilities over items for a state (discrete actors only).
    pub fn probabilities(&self, state: &[f64]) -> Option<Vec<f64>> {
        if self.item_vectors.is_some() {
            return None;
        }
        let out = self.actor_output(state);
        let mut p = vec![0.0; out.len()];
        softmax_row(&out, &mut p);
        Some(p)
    }

    pub(crate) fn critic_head(&self) -> Mlp {
        self.critic
    }

    pub(crate) fn log_std_id(&self) -> Option<ParamId> {
        self.log_std
    }

    pub(crate) fn parts_mut(&mut self) -> (&mut ParamStore, &mut Adam, &mut Adam, &mut Adam) {
        (
            &mut self.store,
            &mut self.actor_opt,
            &mut self.critic_opt,
            &mut self.tracker_opt,
        )
    }

    /// Writes `<prefix>.params` and a `<prefix>.json` config sidecar.
    pub fn save(&self, prefix: impl AsRef<Path>) -> Result<(), PolicyError> {
        let prefix = prefix.as_ref();
        save_params(prefix.with_extension("params"), &self.store)?;
        let text = serde_json::to_string_pretty(&self.cfg)
            .map_err(|e| PolicyError::Sidecar(e.to_string()))?;
        fs::write(prefix.with_extension("json"), text + "\n").map_err(NnError::Io)?;
        Ok(())
    }

    /// Restore parameters saved by [`save`](Self::save) into a bundle built
    /// with the same configuration and inputs. Optimizer moments restart.
    pub fn load_params_from(&mut self, prefix: impl AsRef<Path>) -> Result<(), PolicyError> {
        let loaded = load_params(prefix.as_ref().with_extension("params"))?;
        if loaded.len() != self.store.len() {
            return Err(PolicyError::Sidecar(format!(
                "checkpoint has {} tensors, policy has {}",
                loaded.len(),
                self.store.len()
            )));
        }
        for (_, name, t) in loaded.iter() {
            let id = self.store.id(name)?;
            self.store.set(id, t.clone())?;
        }
        Ok(())
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn sample_index<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> usize {
    let mut u = rng.random::<f64>();
    for (i, &pi) in p.iter().enumerate() {
        if u < pi {
            return i;
        }
        u -= pi;
    }
    // Rounding left a sliver: take the last item with nonzero mass.
    p.iter().rposition(|&x| x > 0.0).unwrap_or(p.len() - 1)
}

pub(crate) fn gaussian_logp(x: &[f64], mean: &[f64], log_std: &[f64]) -> f64 {
    x.iter()
        .zip(mean)
        .zip(log_std)
        .map(|((x, m), ls)| {
            let z = (x - m) * (-ls).exp();
            -0.5 * z * z - ls - 0.5 * LN_2PI
        })
        .sum()
}

fn nearest_row(items: &Tensor, x: &[f64]) -> ItemId {
    let mut best = (0, f64::INFINITY);
    for r in 0..items.rows() {
        let d: f64 = items
            .row(r)
            .iter()
            .zip(x)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        if d < best.1 {
            best = (r, d);
        }
    }
    best.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn small_bundle(n_items: usize) -> PolicyBundle {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = PolicyConfig {
            tracker: TrackerConfig {
                d_s: 8,
                max_len: 16,
                ..TrackerConfig::default()
            },
            ppo: PpoConfig {
                hidden: 16,
                horizon: 6,
                ..PpoConfig::default()
            },
            action_space: ActionSpace::Discrete,
            ..PolicyConfig::default()
        };
        PolicyBundle::new(
            cfg,
            TrackerInputs::Embedded {
                n_users: 3,
                n_items,
            },
            &mut rng,
        )
        .unwrap()
    }

    #[test]
    fn uniform_logits_give_uniform_probabilities() {
        let lp = log_softmax(&[0.3; 4]);
        for l in lp {
            assert!((l.exp() - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn greedy_takes_the_argmax() {
        let lp = log_softmax(&[1.0, 0.0, 0.0]);
        let expect = 1.0 - (1.0f64.exp() + 2.0).ln();
        assert!((lp[0] - expect).abs() < 1e-15);
        assert_eq!(argmax(&[1.0, 0.0, 0.0]), 0);

        let b = small_bundle(5);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = vec![0.2; 8];
        let a = b.act(&s, ActMode::Greedy, &mut rng).unwrap();
        let logits = b.actor_output(&s);
        assert_eq!(a.item, argmax(&logits));
        assert!((a.logp - log_softmax(&logits)[a.item]).abs() < 1e-15);
        let total: f64 = log_softmax(&logits).iter().map(|l| l.exp()).sum();
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn sampled_frequencies_match_probabilities() {
        let p = [0.1, 0.25, 0.05, 0.6];
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 100_000;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            counts[sample_index(&p, &mut rng)] += 1;
        }
        for (c, &pi) in counts.iter().zip(&p) {
            let sd = (n as f64 * pi * (1.0 - pi)).sqrt();
            assert!((*c as f64 - n as f64 * pi).abs() < 3.0 * sd, "{counts:?}");
        }
    }

    #[test]
    fn nan_state_is_rejected() {
        let b = small_bundle(3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            b.act(&[f64::NAN; 8], ActMode::Sample, &mut rng),
            Err(PolicyError::NonFinite { .. })
        ));
    }

    #[cfg(feature = "continuous")]
    #[test]
    fn gaussian_actor_snaps_to_catalog() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let items: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, -(i as f64)]).collect();
        let cfg = PolicyConfig {
            tracker: TrackerConfig {
                d_s: 8,
                max_len: 8,
                ..TrackerConfig::default()
            },
            ppo: PpoConfig {
                hidden: 8,
                horizon: 4,
                ..PpoConfig::default()
            },
            action_space: ActionSpace::Gaussian,
            ..PolicyConfig::default()
        };
        let inputs = TrackerInputs::Features {
            users: vec![vec![1.0, 0.0, 0.5]; 2],
            items: items.clone(),
        };
        let b = PolicyBundle::new(cfg, inputs, &mut rng).unwrap();
        let s = vec![0.1; 8];
        let a = b.act(&s, ActMode::Sample, &mut rng).unwrap();
        let raw = a.raw.unwrap();
        let best = (0..6)
            .min_by(|&x, &y| {
                let dx: f64 = items[x]
                    .iter()
                    .zip(&raw)
                    .map(|(a, b)| (a - b).powi(2))
                    .sum();
                let dy: f64 = items[y]
                    .iter()
                    .zip(&raw)
                    .map(|(a, b)| (a - b).powi(2))
                    .sum();
                dx.partial_cmp(&dy).unwrap()
            })
            .unwrap();
        assert_eq!(a.item, best);
        let mean = b.actor_output(&s);
        let ls = b.store().get(b.log_std_id().unwrap()).data().to_vec();
        assert!((a.logp - gaussian_logp(&raw, &mean, &ls)).abs() < 1e-15);
    }
}
