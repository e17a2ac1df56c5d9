//! Reward-gated, causally masked self-attention state encoder.
//!
//! The input sequence is the projected user token followed by one gated
//! token per past step; each encoder layer is single-head attention and a
//! ReLU feed-forward block, both with residual connections and layer
//! normalization. [`TrackerSession`] runs the same computation one token at
//! a time with cached keys and values.

mod session;

pub use session::TrackerSession;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{ItemId, UserId};
use crate::nncore::{sigmoid, NnError, ParamId, ParamStore, Tape, Tensor, Var};

const LN_EPS: f64 = 1e-5;
/// Added to attention scores of future positions.
const MASK_VALUE: f64 = -1e9;

#[derive(Debug, thiserror::Error)]
pub enum TrackerError {
    #[error("prefix of length {len} exceeds the maximum horizon {max}")]
    PrefixTooLong { len: usize, max: usize },
    #[error("dimension mismatch: {0}")]
    Dim(String),
    #[error("unknown user id {0}")]
    UnknownUser(UserId),
    #[error("unknown item id {0}")]
    UnknownItem(ItemId),
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    pub d_s: usize,
    pub layers: usize,
    /// Hidden width of the feed-forward blocks, as a multiple of `d_s`.
    pub ffn_mult: usize,
    /// Longest supported prefix (number of past steps).
    pub max_len: usize,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            d_s: 32,
            layers: 2,
            ffn_mult: 2,
            max_len: 128,
        }
    }
}

/// Where user and action vectors come from.
#[derive(Debug, Clone, PartialEq)]
pub enum TrackerInputs {
    /// Learned user and item embeddings of width `d_s`.
    Embedded { n_users: usize, n_items: usize },
    /// Fixed user features and item vectors; items are linearly lifted.
    Features {
        users: Vec<Vec<f64>>,
        items: Vec<Vec<f64>>,
    },
}

#[derive(Debug, Clone, Copy)]
struct LayerIds {
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    wo: ParamId,
    ln1_g: ParamId,
    ln1_b: ParamId,
    f_w1: ParamId,
    f_b1: ParamId,
    f_w2: ParamId,
    f_b2: ParamId,
    ln2_g: ParamId,
    ln2_b: ParamId,
}

#[derive(Debug, Clone, Copy)]
enum Source {
    Learned(ParamId),
    Fixed,
}

#[derive(Debug, Clone)]
pub struct StateTracker {
    cfg: TrackerConfig,
    n_users: usize,
    n_items: usize,
    d_u: usize,
    d_a: usize,
    user_src: Source,
    item_src: Source,
    user_feats: Option<Tensor>,
    item_feats: Option<Tensor>,
    proj: Option<ParamId>,
    u_w1: ParamId,
    u_b1: ParamId,
    u_w2: ParamId,
    u_b2: ParamId,
    gate_w: ParamId,
    gate_b: ParamId,
    layers: Vec<LayerIds>,
    pos: Tensor,
    ids: Vec<ParamId>,
}

fn positional(max_len: usize, d: usize) -> Tensor {
    let mut data = Vec::with_capacity(max_len * d);
    for p in 0..max_len {
        for j in 0..d {
            let freq = 10_000f64.powf((2 * (j / 2)) as f64 / d as f64);
            let a = p as f64 / freq;
            data.push(if j % 2 == 0 { a.sin() } else { a.cos() });
        }
    }
    Tensor::matrix(max_len, d, data).expect("sized")
}

fn rows_tensor(rows: &[Vec<f64>], what: &str) -> Result<Tensor, TrackerError> {
    let d = rows.first().map(Vec::len).unwrap_or(0);
    if d == 0 || rows.iter().any(|r| r.len() != d) {
        return Err(TrackerError::Dim(format!(
            "{what} rows must share a nonzero width"
        )));
    }
    Ok(Tensor::matrix(rows.len(), d, rows.concat())?)
}

/// `sigmoid(concat(r, e_a) W + b)`, with `W` stored as `[1 + d_a, d_s]`.
pub fn gate_values(r: f64, e_a: &[f64], w: &Tensor, b: &[f64]) -> Result<Vec<f64>, TrackerError> {
    if w.rows() != 1 + e_a.len() || w.cols() != b.len() {
        return Err(TrackerError::Dim(format!(
            "gate weight [{}, {}] for action dim {} and bias {}",
            w.rows(),
            w.cols(),
            e_a.len(),
            b.len()
        )));
    }
    let mut input = Vec::with_capacity(1 + e_a.len());
    input.push(r);
    input.extend_from_slice(e_a);
    let mut z = vec![0.0; b.len()];
    crate::nncore::matmul_into(&input, w.data(), &mut z, 1, input.len(), b.len());
    Ok(z.iter().zip(b).map(|(z, b)| sigmoid(z + b)).collect())
}

impl StateTracker {
    /// Register tracker parameters (prefixed `tracker.`) in `store`.
    pub fn new<R: Rng + ?Sized>(
        cfg: TrackerConfig,
        inputs: TrackerInputs,
        store: &mut ParamStore,
        rng: &mut R,
    ) -> Result<Self, TrackerError> {
        let d = cfg.d_s;
        if d == 0 || cfg.layers == 0 || cfg.ffn_mult == 0 || cfg.max_len == 0 {
            return Err(TrackerError::Dim("tracker sizes must be >= 1".into()));
        }
        let glorot = |fan_in: usize| (1.0 / fan_in as f64).sqrt();
        let add =
            |store: &mut ParamStore, name: &str, t: Tensor| store.add(format!("tracker.{name}"), t);
        let (n_users, n_items, d_u, d_a, user_src, item_src, user_feats, item_feats) = match inputs
        {
            TrackerInputs::Embedded { n_users, n_items } => {
                if n_users == 0 || n_items == 0 {
                    return Err(TrackerError::Dim("need users and items".into()));
                }
                let ue = add(store, "user_emb", Tensor::randn(&[n_users, d], 1.0, rng))?;
                let ie = add(store, "item_emb", Tensor::randn(&[n_items, d], 1.0, rng))?;
                (
                    n_users,
                    n_items,
                    d,
                    d,
                    Source::Learned(ue),
                    Source::Learned(ie),
                    None,
                    None,
                )
            }
            TrackerInputs::Features { users, items } => {
                let u = rows_tensor(&users, "user feature")?;
                let i = rows_tensor(&items, "item vector")?;
                (
                    u.rows(),
                    i.rows(),
                    u.cols(),
                    i.cols(),
                    Source::Fixed,
                    Source::Fixed,
                    Some(u),
                    Some(i),
                )
            }
        };
        let proj = match item_src {
            Source::Fixed => Some(add(
                store,
                "action_proj",
                Tensor::randn(&[d_a, d], glorot(d_a), rng),
            )?),
            Source::Learned(_) => None,
        };
        let u_w1 = add(
            store,
            "user_ffn_w1",
            Tensor::randn(&[d_u, d], glorot(d_u), rng),
        )?;
        let u_b1 = add(store, "user_ffn_b1", Tensor::zeros(&[1, d]))?;
        let u_w2 = add(store, "user_ffn_w2", Tensor::randn(&[d, d], glorot(d), rng))?;
        let u_b2 = add(store, "user_ffn_b2", Tensor::zeros(&[1, d]))?;
        let gate_w = add(
            store,
            "gate_w",
            Tensor::randn(&[1 + d_a, d], glorot(1 + d_a), rng),
        )?;
        let gate_b = add(store, "gate_b", Tensor::zeros(&[1, d]))?;
        let h = cfg.ffn_mult * d;
        let mut layers = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let mut sq = |store: &mut ParamStore, n: &str| {
                add(
                    store,
                    &format!("l{l}.{n}"),
                    Tensor::randn(&[d, d], glorot(d), rng),
                )
            };
            let wq = sq(store, "wq")?;
            let wk = sq(store, "wk")?;
            let wv = sq(store, "wv")?;
            let wo = sq(store, "wo")?;
            layers.push(LayerIds {
                wq,
                wk,
                wv,
                wo,
                ln1_g: add(store, &format!("l{l}.ln1_g"), Tensor::full(&[1, d], 1.0))?,
                ln1_b: add(store, &format!("l{l}.ln1_b"), Tensor::zeros(&[1, d]))?,
                f_w1: add(
                    store,
                    &format!("l{l}.ffn_w1"),
                    Tensor::randn(&[d, h], glorot(d), rng),
                )?,
                f_b1: add(store, &format!("l{l}.ffn_b1"), Tensor::zeros(&[1, h]))?,
                f_w2: add(
                    store,
                    &format!("l{l}.ffn_w2"),
                    Tensor::randn(&[h, d], glorot(h), rng),
                )?,
                f_b2: add(store, &format!("l{l}.ffn_b2"), Tensor::zeros(&[1, d]))?,
                ln2_g: add(store, &format!("l{l}.ln2_g"), Tensor::full(&[1, d], 1.0))?,
                ln2_b: add(store, &format!("l{l}.ln2_b"), Tensor::zeros(&[1, d]))?,
            });
        }
        let ids = store
            .iter()
            .filter(|(_, name, _)| name.starts_with("tracker."))
            .map(|(id, _, _)| id)
            .collect();
        Ok(Self {
            cfg,
            n_users,
            n_items,
            d_u,
            d_a,
            user_src,
            item_src,
            user_feats,
            item_feats,
            proj,
            u_w1,
            u_b1,
            u_w2,
            u_b2,
            gate_w,
            gate_b,
            layers,
            pos: positional(cfg.max_len + 1, d),
            ids,
        })
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.cfg
    }

    pub fn d_s(&self) -> usize {
        self.cfg.d_s
    }

    pub fn action_dim(&self) -> usize {
        self.d_a
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    /// All tracker parameter ids.
    pub fn param_ids(&self) -> &[ParamId] {
        &self.ids
    }

    /// Ids of the gate weight and bias.
    pub fn gate_ids(&self) -> (ParamId, ParamId) {
        (self.gate_w, self.gate_b)
    }

    fn check(&self, user: UserId, items: &[ItemId], rewards: &[f64]) -> Result<(), TrackerError> {
        if user >= self.n_users {
            return Err(TrackerError::UnknownUser(user));
        }
        if items.len() != rewards.len() {
            return Err(TrackerError::Dim(format!(
                "{} actions with {} rewards",
                items.len(),
                rewards.len()
            )));
        }
        if items.len() > self.cfg.max_len {
            return Err(TrackerError::PrefixTooLong {
                len: items.len(),
                max: self.cfg.max_len,
            });
        }
        if let Some(&i) = items.iter().find(|&&i| i >= self.n_items) {
            return Err(TrackerError::UnknownItem(i));
        }
        Ok(())
    }

    /// Id of the learned item embedding table, if items are embedded.
    pub fn item_table_id(&self) -> Option<ParamId> {
        match self.item_src {
            Source::Learned(id) => Some(id),
            Source::Fixed => None,
        }
    }

    /// Raw action vector `e_a` of an item.
    pub fn action_vector<'s>(&'s self, store: &'s ParamStore, item: ItemId) -> &'s [f64] {
        match self.item_src {
            Source::Learned(id) => store.get(id).row(item),
            Source::Fixed => self.item_feats.as_ref().expect("fixed items").row(item),
        }
    }

    fn user_vector<'s>(&'s self, store: &'s ParamStore, user: UserId) -> &'s [f64] {
        match self.user_src {
            Source::Learned(id) => store.get(id).row(user),
            Source::Fixed => self.user_feats.as_ref().expect("fixed users").row(user),
        }
    }

    /// Gated action token `g ⊙ project(e_a)` for one step (no position).
    pub fn gate(
        &self,
        store: &ParamStore,
        reward: f64,
        item: ItemId,
    ) -> Result<Vec<f64>, TrackerError> {
        if item >= self.n_items {
            return Err(TrackerError::UnknownItem(item));
        }
        let e_a = self.action_vector(store, item);
        let g = gate_values(
            reward,
            e_a,
            store.get(self.gate_w),
            store.get(self.gate_b).data(),
        )?;
        let lifted = self.lift(store, e_a);
        Ok(g.iter().zip(&lifted).map(|(g, x)| g * x).collect())
    }

    fn lift(&self, store: &ParamStore, e_a: &[f64]) -> Vec<f64> {
        match self.proj {
            None => e_a.to_vec(),
            Some(p) => {
                let mut out = vec![0.0; self.cfg.d_s];
                crate::nncore::matmul_into(
                    e_a,
                    store.get(p).data(),
                    &mut out,
                    1,
                    self.d_a,
                    self.cfg.d_s,
                );
                out
            }
        }
    }

    /// Projected user token (before positional encoding).
    pub(crate) fn user_token(&self, store: &ParamStore, user: UserId) -> Vec<f64> {
        let d = self.cfg.d_s;
        let e_u = self.user_vector(store, user);
        let mut h = vec![0.0; d];
        crate::nncore::matmul_into(e_u, store.get(self.u_w1).data(), &mut h, 1, self.d_u, d);
        for (h, b) in h.iter_mut().zip(store.get(self.u_b1).data()) {
            *h = (*h + b).max(0.0);
        }
        let mut out = vec![0.0; d];
        crate::nncore::matmul_into(&h, store.get(self.u_w2).data(), &mut out, 1, d, d);
        for (o, b) in out.iter_mut().zip(store.get(self.u_b2).data()) {
            *o += b;
        }
        out
    }

    /// Encoder outputs for every prefix: row `t` is `s_t`, the state after
    /// `t` steps. Shape `[len + 1, d_s]`.
    pub fn encode_all(
        &self,
        tape: &mut Tape<'_>,
        user: UserId,
        items: &[ItemId],
        rewards: &[f64],
    ) -> Result<Var, TrackerError> {
        self.check(user, items, rewards)?;
        let d = self.cfg.d_s;
        let t = items.len() + 1;

        let e_u = match self.user_src {
            Source::Learned(id) => {
                let p = tape.param(id);
                tape.gather_rows(p, &[user])?
            }
            Source::Fixed => tape.constant(Tensor::vector(
                self.user_vector(tape.params(), user).to_vec(),
            )),
        };
        let w1 = tape.param(self.u_w1);
        let b1 = tape.param(self.u_b1);
        let w2 = tape.param(self.u_w2);
        let b2 = tape.param(self.u_b2);
        let h = tape.matmul(e_u, w1)?;
        let h = tape.add(h, b1)?;
        let h = tape.relu(h);
        let u = tape.matmul(h, w2)?;
        let u_tok = tape.add(u, b2)?;

        let mut x = u_tok;
        if !items.is_empty() {
            let e_a = match self.item_src {
                Source::Learned(id) => {
                    let p = tape.param(id);
                    tape.gather_rows(p, items)?
                }
                Source::Fixed => {
                    let feats = self.item_feats.as_ref().expect("fixed items");
                    let mut data = Vec::with_capacity(items.len() * self.d_a);
                    for &i in items {
                        data.extend_from_slice(feats.row(i));
                    }
                    tape.constant(Tensor::matrix(items.len(), self.d_a, data)?)
                }
            };
            let r = tape.constant(Tensor::matrix(items.len(), 1, rewards.to_vec())?);
            let gin = tape.concat(&[r, e_a], 1)?;
            let gw = tape.param(self.gate_w);
            let gb = tape.param(self.gate_b);
            let z = tape.matmul(gin, gw)?;
            let z = tape.add(z, gb)?;
            let g = tape.sigmoid(z);
            let lifted = match self.proj {
                None => e_a,
                Some(p) => {
                    let p = tape.param(p);
                    tape.matmul(e_a, p)?
                }
            };
            let toks = tape.mul(g, lifted)?;
            x = tape.concat(&[u_tok, toks], 0)?;
        }
        let pe = Tensor::matrix(t, d, self.pos.data()[..t * d].to_vec())?;
        let pe = tape.constant(pe);
        x = tape.add(x, pe)?;

        let mut mask = vec![0.0; t * t];
        for i in 0..t {
            for j in i + 1..t {
                mask[i * t + j] = MASK_VALUE;
            }
        }
        let mask = tape.constant(Tensor::matrix(t, t, mask)?);
        let inv_sqrt_d = 1.0 / (d as f64).sqrt();
        for l in &self.layers {
            let wq = tape.param(l.wq);
            let wk = tape.param(l.wk);
            let wv = tape.param(l.wv);
            let wo = tape.param(l.wo);
            let q = tape.matmul(x, wq)?;
            let k = tape.matmul(x, wk)?;
            let v = tape.matmul(x, wv)?;
            let kt = tape.transpose(k);
            let s = tape.matmul(q, kt)?;
            let s = tape.scale(s, inv_sqrt_d);
            let s = tape.add(s, mask)?;
            let a = tape.softmax(s);
            let h = tape.matmul(a, v)?;
            let o = tape.matmul(h, wo)?;
            let res = tape.add(x, o)?;
            let x1 = layer_norm(tape, res, l.ln1_g, l.ln1_b)?;

            let fw1 = tape.param(l.f_w1);
            let fb1 = tape.param(l.f_b1);
            let fw2 = tape.param(l.f_w2);
            let fb2 = tape.param(l.f_b2);
            let f = tape.matmul(x1, fw1)?;
            let f = tape.add(f, fb1)?;
            let f = tape.relu(f);
            let f = tape.matmul(f, fw2)?;
            let f = tape.add(f, fb2)?;
            let res = tape.add(x1, f)?;
            x = layer_norm(tape, res, l.ln2_g, l.ln2_b)?;
        }
        Ok(x)
    }

    /// State after the full prefix, `[1, d_s]`.
    pub fn encode_state(
        &self,
        tape: &mut Tape<'_>,
        user: UserId,
        items: &[ItemId],
        rewards: &[f64],
    ) -> Result<Var, TrackerError> {
        let all = self.encode_all(tape, user, items, rewards)?;
        Ok(tape.gather_rows(all, &[items.len()])?)
    }

    /// Start an incremental encoding for `user`.
    pub fn session<'a>(
        &'a self,
        store: &'a ParamStore,
        user: UserId,
    ) -> Result<TrackerSession<'a>, TrackerError> {
        if user >= self.n_users {
            return Err(TrackerError::UnknownUser(user));
        }
        Ok(TrackerSession::new(self, store, user))
    }
}

fn layer_norm(tape: &mut Tape<'_>, x: Var, g: ParamId, b: ParamId) -> Result<Var, NnError> {
    let mu = tape.mean_axis(x, 1)?;
    let xc = tape.sub(x, mu)?;
    let sq = tape.mul(xc, xc)?;
    let var = tape.mean_axis(sq, 1)?;
    let var = tape.add_scalar(var, LN_EPS);
    let lv = tape.log(var);
    let lv = tape.scale(lv, -0.5);
    let inv = tape.exp(lv);
    let y = tape.mul(xc, inv)?;
    let g = tape.param(g);
    let b = tape.param(b);
    let y = tape.mul(y, g)?;
    tape.add(y, b)
}

/// Plain layer norm matching the tape composition.
pub(crate) fn layer_norm_plain(x: &mut [f64], g: &[f64], b: &[f64]) {
    let n = x.len() as f64;
    let mu = x.iter().sum::<f64>() / n;
    x.iter_mut().for_each(|v| *v -= mu);
    let var = x.iter().map(|v| v * v).sum::<f64>() / n;
    let inv = (-0.5 * (var + LN_EPS).ln()).exp();
    for ((v, g), b) in x.iter_mut().zip(g).zip(b) {
        *v = *v * inv * g + b;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nncore::gradient_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small(d_s: usize, inputs: TrackerInputs) -> (StateTracker, ParamStore) {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut store = ParamStore::new();
        let cfg = TrackerConfig {
            d_s,
            layers: 2,
            ffn_mult: 2,
            max_len: 12,
        };
        let tr = StateTracker::new(cfg, inputs, &mut store, &mut rng).unwrap();
        // Nonzero gate bias and layer-norm shifts so every path is exercised.
        for (id, _, _) in store
            .clone()
            .iter()
            .filter(|(_, n, _)| n.ends_with("_b") || n.contains("ln"))
        {
            for v in store.get_mut(id).data_mut() {
                *v += rng.random_range(-0.3..0.3);
            }
        }
        (tr, store)
    }

    fn embedded() -> TrackerInputs {
        TrackerInputs::Embedded {
            n_users: 3,
            n_items: 7,
        }
    }

    #[test]
    fn zero_gate_halves_the_action() {
        let w = Tensor::zeros(&[3, 2]);
        let g = gate_values(0.8, &[1.0, -2.0], &w, &[0.0, 0.0]).unwrap();
        assert_eq!(g, vec![0.5, 0.5]);
        let g = gate_values(0.8, &[1.0, -2.0], &w, &[60.0, 60.0]).unwrap();
        assert!(g.iter().all(|&v| (1.0 - v) < 1e-12));
    }

    #[test]
    fn gate_by_hand() {
        // W rows: reward row, then identity for the two action entries.
        let w = Tensor::matrix(3, 2, vec![0.5, -0.5, 1.0, 0.0, 0.0, 1.0]).unwrap();
        let g = gate_values(2.0, &[0.3, -0.7], &w, &[0.1, 0.2]).unwrap();
        let expect = [
            1.0 / (1.0 + (-(1.0 + 0.3 + 0.1f64)).exp()),
            1.0 / (1.0 + (-(-1.0 - 0.7 + 0.2f64)).exp()),
        ];
        for (a, b) in g.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(gate_values(2.0, &[0.3], &w, &[0.1, 0.2]).is_err());
    }

    #[test]
    fn gate_is_strictly_inside_unit_interval() {
        let (tr, store) = small(4, embedded());
        let (w, b) = tr.gate_ids();
        for item in 0..7 {
            for r in [-3.0, 0.0, 0.5, 4.0] {
                let g = gate_values(
                    r,
                    tr.action_vector(&store, item),
                    store.get(w),
                    store.get(b).data(),
                )
                .unwrap();
                assert!(g.iter().all(|&v| v > 0.0 && v < 1.0));
            }
        }
    }

    fn states(
        tr: &StateTracker,
        store: &ParamStore,
        items: &[usize],
        rewards: &[f64],
    ) -> Vec<Vec<f64>> {
        let mut tape = Tape::new(store);
        let all = tr.encode_all(&mut tape, 1, items, rewards).unwrap();
        let v = tape.value(all);
        (0..v.rows()).map(|r| v.row(r).to_vec()).collect()
    }

    #[test]
    fn empty_prefix_depends_only_on_user() {
        let (tr, store) = small(4, embedded());
        let mut tape = Tape::new(&store);
        let a = tr.encode_state(&mut tape, 1, &[], &[]).unwrap();
        let b = tr.encode_state(&mut tape, 1, &[], &[]).unwrap();
        let c = tr.encode_state(&mut tape, 2, &[], &[]).unwrap();
        assert_eq!(tape.value(a), tape.value(b));
        assert_ne!(tape.value(a), tape.value(c));
        let full = states(&tr, &store, &[3, 1], &[0.2, 0.9]);
        assert_eq!(full[0].as_slice(), tape.value(a).data());
    }

    #[test]
    fn causal_mask_holds_for_every_position() {
        let (tr, store) = small(6, embedded());
        let items = [0, 4, 2, 6, 1, 5, 3, 2];
        let rewards = [0.1, 0.5, 0.9, 0.2, 0.3, 0.7, 0.4, 0.6];
        let base = states(&tr, &store, &items, &rewards);
        for k in 0..items.len() {
            let mut it = items;
            let mut rw = rewards;
            it[k] = (it[k] + 1) % 7;
            rw[k] += 0.25;
            let pert = states(&tr, &store, &it, &rw);
            for t in 0..=items.len() {
                // State row t has seen steps 0..t, so step k matters iff t > k.
                if t <= k {
                    assert_eq!(pert[t], base[t], "step {k} leaked into state {t}");
                } else {
                    assert_ne!(pert[t], base[t], "step {k} ignored by state {t}");
                }
            }
        }
    }

    #[test]
    fn order_matters() {
        let (tr, store) = small(4, embedded());
        let a = states(&tr, &store, &[1, 2], &[0.5, 0.5]);
        let b = states(&tr, &store, &[2, 1], &[0.5, 0.5]);
        assert_ne!(a[2], b[2]);
    }

    #[test]
    fn rejects_long_prefix() {
        let (tr, store) = small(4, embedded());
        let mut tape = Tape::new(&store);
        let items = vec![0; 13];
        let rewards = vec![0.0; 13];
        assert!(matches!(
            tr.encode_all(&mut tape, 0, &items, &rewards),
            Err(TrackerError::PrefixTooLong { len: 13, max: 12 })
        ));
    }

    #[test]
    fn gradients_through_gate_and_encoder() {
        for inputs in [
            embedded(),
            TrackerInputs::Features {
                users: vec![
                    vec![0.3, -1.0, 0.5],
                    vec![1.0, 0.2, 0.0],
                    vec![0.0, 0.0, 1.0],
                ],
                items: (0..7)
                    .map(|i| vec![i as f64 * 0.3, 1.0 - i as f64 * 0.1])
                    .collect(),
            },
        ] {
            let (tr, store) = small(4, inputs);
            let items = [2, 5, 5, 0];
            let rewards = [0.3, -0.2, 0.8, 0.1];
            let err = gradient_check(
                &store,
                |t| {
                    let all = tr
                        .encode_all(t, 1, &items, &rewards)
                        .map_err(|e| NnError::InvalidTensor(e.to_string()))?;
                    // A non-symmetric readout so every output matters.
                    let w = t.constant(Tensor::matrix(4, 1, vec![0.7, -1.1, 0.4, 0.9]).unwrap());
                    let y = t.matmul(all, w)?;
                    let y = t.sigmoid(y);
                    Ok(t.sum(y))
                },
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-4, "{err}");
        }
    }
}
