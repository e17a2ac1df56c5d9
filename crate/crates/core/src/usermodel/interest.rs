use rand::Rng;
use serde::{Deserialize, Serialize};

use super::UserModelError;
use crate::env::{ItemId, UserId};
use crate::nncore::{sigmoid, NnError, ParamId, ParamStore, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InterestConfig {
    pub embed_dim: usize,
    pub hidden: usize,
    /// Standard deviation of the random initialization.
    pub init_std: f64,
}

impl Default for InterestConfig {
    fn default() -> Self {
        Self {
            embed_dim: 8,
            hidden: 32,
            init_std: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Ids {
    user_emb: ParamId,
    item_emb: ParamId,
    user_w: ParamId,
    item_w: ParamId,
    bias: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

impl Ids {
    fn lookup(store: &ParamStore) -> Result<Self, NnError> {
        Ok(Self {
            user_emb: store.id("interest.user_emb")?,
            item_emb: store.id("interest.item_emb")?,
            user_w: store.id("interest.user_w")?,
            item_w: store.id("interest.item_w")?,
            bias: store.id("interest.bias")?,
            w1: store.id("interest.mlp_w1")?,
            b1: store.id("interest.mlp_b1")?,
            w2: store.id("interest.mlp_w2")?,
            b2: store.id("interest.mlp_b2")?,
        })
    }
}

/// Small DeepFM: global bias, first-order user/item weights, a second-order
/// factorization term and a one-hidden-layer sigmoid MLP over the
/// concatenated embeddings.
#[derive(Debug, Clone)]
pub struct InterestModel {
    store: ParamStore,
    ids: Ids,
    n_users: usize,
    n_items: usize,
    config: InterestConfig,
}

impl InterestModel {
    /// Randomly initialized model; the output layer and bias start at zero.
    pub fn new<R: Rng + ?Sized>(
        n_users: usize,
        n_items: usize,
        config: InterestConfig,
        rng: &mut R,
    ) -> Result<Self, UserModelError> {
        if n_users == 0 || n_items == 0 || config.embed_dim == 0 || config.hidden == 0 {
            return Err(UserModelError::Config(
                "interest model sizes must all be >= 1".into(),
            ));
        }
        let (k, h) = (config.embed_dim, config.hidden);
        let std = config.init_std;
        let mut s = ParamStore::new();
        s.add("interest.user_emb", Tensor::randn(&[n_users, k], std, rng))?;
        s.add("interest.item_emb", Tensor::randn(&[n_items, k], std, rng))?;
        s.add("interest.user_w", Tensor::zeros(&[n_users, 1]))?;
        s.add("interest.item_w", Tensor::zeros(&[n_items, 1]))?;
        s.add("interest.bias", Tensor::zeros(&[1, 1]))?;
        let w1_std = (1.0 / (2 * k) as f64).sqrt();
        s.add("interest.mlp_w1", Tensor::randn(&[2 * k, h], w1_std, rng))?;
        s.add("interest.mlp_b1", Tensor::zeros(&[1, h]))?;
        s.add("interest.mlp_w2", Tensor::zeros(&[h, 1]))?;
        s.add("interest.mlp_b2", Tensor::zeros(&[1, 1]))?;
        Self::from_store(s, n_users, n_items, config)
    }

    /// Wrap an existing store holding (at least) the interest parameters.
    pub fn from_store(
        store: ParamStore,
        n_users: usize,
        n_items: usize,
        config: InterestConfig,
    ) -> Result<Self, UserModelError> {
        let ids = Ids::lookup(&store)?;
        let (k, h) = (config.embed_dim, config.hidden);
        let expect = [
            (ids.user_emb, vec![n_users, k]),
            (ids.item_emb, vec![n_items, k]),
            (ids.user_w, vec![n_users, 1]),
            (ids.item_w, vec![n_items, 1]),
            (ids.bias, vec![1, 1]),
            (ids.w1, vec![2 * k, h]),
            (ids.b1, vec![1, h]),
            (ids.w2, vec![h, 1]),
            (ids.b2, vec![1, 1]),
        ];
        for (id, shape) in expect {
            let t = store.get(id);
            if t.shape() != shape.as_slice() {
                return Err(NnError::ParamShape {
                    name: store.name(id).to_string(),
                    expected: shape,
                    found: t.shape().to_vec(),
                }
                .into());
            }
        }
        if !store.all_finite() {
            return Err(UserModelError::Config(
                "interest parameters are not finite".into(),
            ));
        }
        Ok(Self {
            store,
            ids,
            n_users,
            n_items,
            config,
        })
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn into_store(self) -> ParamStore {
        self.store
    }

    pub fn config(&self) -> &InterestConfig {
        &self.config
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    /// Ids of the interest parameters, in store order.
    pub fn param_ids(&self) -> Vec<ParamId> {
        let i = self.ids;
        vec![
            i.user_emb, i.item_emb, i.user_w, i.item_w, i.bias, i.w1, i.b1, i.w2, i.b2,
        ]
    }

    pub fn predict(&self, user: UserId, item: ItemId) -> Result<f64, UserModelError> {
        if user >= self.n_users {
            return Err(UserModelError::UnknownUser(user));
        }
        if item >= self.n_items {
            return Err(UserModelError::UnknownItem(item));
        }
        Ok(self.predict_unchecked(&self.store, user, item))
    }

    /// Same computation against another store with identical layout (used
    /// while the parameters live in a larger training store).
    pub(crate) fn predict_unchecked(&self, store: &ParamStore, user: UserId, item: ItemId) -> f64 {
        let (k, h) = (self.config.embed_dim, self.config.hidden);
        let eu = store.get(self.ids.user_emb).row(user);
        let ei = store.get(self.ids.item_emb).row(item);
        let fm: f64 = eu.iter().zip(ei).map(|(a, b)| a * b).sum();
        let w1 = store.get(self.ids.w1).data();
        let b1 = store.get(self.ids.b1).data();
        let w2 = store.get(self.ids.w2).data();
        let mut mlp = store.get(self.ids.b2).data()[0];
        for j in 0..h {
            let mut z = b1[j];
            for p in 0..k {
                z += eu[p] * w1[p * h + j] + ei[p] * w1[(k + p) * h + j];
            }
            mlp += sigmoid(z) * w2[j];
        }
        store.get(self.ids.bias).data()[0]
            + store.get(self.ids.user_w).data()[user]
            + store.get(self.ids.item_w).data()[item]
            + fm
            + mlp
    }

    /// Row-major `n_users x n_items` table of predictions.
    pub fn predict_all(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_users * self.n_items);
        for u in 0..self.n_users {
            for i in 0..self.n_items {
                out.push(self.predict_unchecked(&self.store, u, i));
            }
        }
        out
    }

    /// Batched prediction on a tape; returns a `[B, 1]` node. The tape may
    /// borrow any store whose interest parameters share this model's ids.
    pub fn forward(
        &self,
        tape: &mut Tape<'_>,
        users: &[UserId],
        items: &[ItemId],
    ) -> Result<Var, UserModelError> {
        if users.len() != items.len() || users.is_empty() {
            return Err(UserModelError::Config(format!(
                "batch of {} users and {} items",
                users.len(),
                items.len()
            )));
        }
        if let Some(&u) = users.iter().find(|&&u| u >= self.n_users) {
            return Err(UserModelError::UnknownUser(u));
        }
        if let Some(&i) = items.iter().find(|&&i| i >= self.n_items) {
            return Err(UserModelError::UnknownItem(i));
        }
        let ue = tape.param(self.ids.user_emb);
        let ie = tape.param(self.ids.item_emb);
        let eu = tape.gather_rows(ue, users)?;
        let ei = tape.gather_rows(ie, items)?;
        let prod = tape.mul(eu, ei)?;
        let fm = tape.sum_axis(prod, 1)?;

        let uw = tape.param(self.ids.user_w);
        let iw = tape.param(self.ids.item_w);
        let wu = tape.gather_rows(uw, users)?;
        let wi = tape.gather_rows(iw, items)?;

        let x = tape.concat(&[eu, ei], 1)?;
        let w1 = tape.param(self.ids.w1);
        let b1 = tape.param(self.ids.b1);
        let z = tape.matmul(x, w1)?;
        let z = tape.add(z, b1)?;
        let hdn = tape.sigmoid(z);
        let w2 = tape.param(self.ids.w2);
        let b2 = tape.param(self.ids.b2);
        let mlp = tape.matmul(hdn, w2)?;
        let mlp = tape.add(mlp, b2)?;

        let bias = tape.param(self.ids.bias);
        let y = tape.add(fm, wu)?;
        let y = tape.add(y, wi)?;
        let y = tape.add(y, mlp)?;
        Ok(tape.add(y, bias)?)
    }
}
