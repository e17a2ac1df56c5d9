use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::exposure::{counterfactual_exposure, exposure_kernel, satisfaction};
use super::{ExposureConfig, ExposureParams, InterestConfig, InterestModel, UserModelError};
use crate::env::{InteractionRecord, ItemCatalog, ItemId, UserId};
use crate::nncore::{
    load_params, save_params, Adam, AdamConfig, NnError, ParamId, ParamStore, Tape, Tensor, Var,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Mse,
    Bpr,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub interest: InterestConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::Mse,
            epochs: 30,
            batch_size: 128,
            lr: 0.01,
            seed: 0,
            interest: InterestConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), UserModelError> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(UserModelError::Config(
                "epochs and batch_size must be >= 1".into(),
            ));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(UserModelError::Config(format!(
                "learning rate {} must be > 0",
                self.lr
            )));
        }
        Ok(())
    }
}

/// Everything training needs besides the configuration.
#[derive(Debug, Clone, Copy)]
pub struct TrainData<'a> {
    pub records: &'a [InteractionRecord],
    pub catalog: &'a ItemCatalog,
    pub n_users: usize,
    pub n_items: usize,
    /// Ratings are divided by this before fitting.
    pub rating_scale: f64,
}

/// A batch with precomputed exposure kernels. `neg_*` are empty for MSE.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingBatch {
    pub users: Vec<UserId>,
    pub items: Vec<ItemId>,
    pub kernels: Vec<f64>,
    pub targets: Vec<f64>,
    pub neg_items: Vec<ItemId>,
    pub neg_kernels: Vec<f64>,
}

impl TrainingBatch {
    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }

    /// The whole log as one batch, with negatives drawn from `seed`.
    pub fn from_logs(
        data: &TrainData<'_>,
        exposure: &ExposureConfig,
        loss: LossKind,
        seed: u64,
    ) -> Result<Self, UserModelError> {
        let prep = Prepared::new(data, exposure.tau)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let all: Vec<usize> = (0..data.records.len()).collect();
        let negs = match loss {
            LossKind::Mse => None,
            LossKind::Bpr => Some(prep.sample_negatives(data, exposure.tau, &mut rng)),
        };
        Ok(prep.batch(data, &all, negs.as_ref()))
    }
}

fn nn(e: UserModelError) -> NnError {
    match e {
        UserModelError::Nn(e) => e,
        other => NnError::InvalidTensor(other.to_string()),
    }
}

fn column(v: &[f64]) -> Tensor {
    Tensor::matrix(v.len(), 1, v.to_vec()).expect("column length matches")
}

/// `y / (1 + sp(a_u) sp(b_i) S)` on the tape, `[B, 1]`.
fn shrunk(
    tape: &mut Tape<'_>,
    model: &InterestModel,
    alpha: ParamId,
    beta: ParamId,
    users: &[UserId],
    items: &[ItemId],
    kernels: &[f64],
) -> Result<Var, NnError> {
    let y = model.forward(tape, users, items).map_err(nn)?;
    let a = tape.param(alpha);
    let a = tape.gather_rows(a, users)?;
    let b = tape.param(beta);
    let b = tape.gather_rows(b, items)?;
    let sp = |tape: &mut Tape<'_>, x: Var| {
        let ex = tape.exp(x);
        let one_plus = tape.add_scalar(ex, 1.0);
        tape.log(one_plus)
    };
    let sa = sp(tape, a);
    let sb = sp(tape, b);
    let s = tape.constant(column(kernels));
    let e = tape.mul(sa, sb)?;
    let e = tape.mul(e, s)?;
    let denom = tape.add_scalar(e, 1.0);
    let log_denom = tape.log(denom);
    let neg = tape.neg(log_denom);
    let shrink = tape.exp(neg);
    tape.mul(y, shrink)
}

/// Training loss for one batch. `alpha` and `beta` are `[n_users, 1]` and
/// `[n_items, 1]` raw sensitivity parameters in the same store as `model`'s
/// interest parameters.
pub fn loss_graph(
    tape: &mut Tape<'_>,
    model: &InterestModel,
    alpha: ParamId,
    beta: ParamId,
    batch: &TrainingBatch,
    loss: LossKind,
) -> Result<Var, NnError> {
    let pos = shrunk(
        tape,
        model,
        alpha,
        beta,
        &batch.users,
        &batch.items,
        &batch.kernels,
    )?;
    match loss {
        LossKind::Mse => {
            let t = tape.constant(column(&batch.targets));
            let d = tape.sub(pos, t)?;
            let sq = tape.mul(d, d)?;
            Ok(tape.mean(sq))
        }
        LossKind::Bpr => {
            if batch.neg_items.len() != batch.len() {
                return Err(NnError::InvalidTensor(
                    "BPR batch needs one negative per record".into(),
                ));
            }
            let neg = shrunk(
                tape,
                model,
                alpha,
                beta,
                &batch.users,
                &batch.neg_items,
                &batch.neg_kernels,
            )?;
            let delta = tape.sub(pos, neg)?;
            let p = tape.sigmoid(delta);
            let lp = tape.log(p);
            let m = tape.mean(lp);
            Ok(tape.neg(m))
        }
    }
}

/// Validated log with per-record exposure kernels.
struct Prepared {
    /// For each user, indices of their records in log order.
    by_user: Vec<Vec<usize>>,
    /// Position of each record inside its user's list.
    rank: Vec<usize>,
    kernels: Vec<f64>,
    /// Per user, items never seen in the log.
    unseen: Vec<Vec<ItemId>>,
}

impl Prepared {
    fn new(data: &TrainData<'_>, tau: f64) -> Result<Self, UserModelError> {
        let recs = data.records;
        if recs.is_empty() {
            return Err(UserModelError::EmptyLogs);
        }
        if !(data.rating_scale > 0.0 && data.rating_scale.is_finite()) {
            return Err(UserModelError::Config("rating scale must be > 0".into()));
        }
        if data.catalog.len() != data.n_items {
            return Err(UserModelError::Config(format!(
                "catalog has {} items, model has {}",
                data.catalog.len(),
                data.n_items
            )));
        }
        let mut by_user = vec![Vec::new(); data.n_users];
        let mut rank = Vec::with_capacity(recs.len());
        let mut seen = vec![vec![false; data.n_items]; data.n_users];
        for (n, r) in recs.iter().enumerate() {
            if r.user >= data.n_users {
                return Err(UserModelError::UnknownUser(r.user));
            }
            if r.item >= data.n_items {
                return Err(UserModelError::UnknownItem(r.item));
            }
            if !(r.rating.is_finite() && r.rating >= 0.0 && r.timestamp.is_finite()) {
                return Err(UserModelError::Config(format!(
                    "record {n} has rating {} at time {}",
                    r.rating, r.timestamp
                )));
            }
            let list: &mut Vec<usize> = &mut by_user[r.user];
            if let Some(&prev) = list.last() {
                if recs[prev].timestamp >= r.timestamp {
                    return Err(UserModelError::UnsortedLogs {
                        user: r.user,
                        index: n,
                    });
                }
            }
            rank.push(list.len());
            list.push(n);
            seen[r.user][r.item] = true;
        }
        let unseen = seen
            .iter()
            .map(|row| (0..data.n_items).filter(|&i| !row[i]).collect())
            .collect();
        let mut prep = Self {
            by_user,
            rank,
            kernels: Vec::new(),
            unseen,
        };
        prep.kernels = (0..recs.len())
            .map(|n| prep.kernel(data, n, recs[n].item, tau))
            .collect();
        Ok(prep)
    }

    /// Exposure kernel of `item` at record `n`'s time, from the same user's
    /// earlier records.
    fn kernel(&self, data: &TrainData<'_>, n: usize, item: ItemId, tau: f64) -> f64 {
        let r = &data.records[n];
        let earlier = &self.by_user[r.user][..self.rank[n]];
        exposure_kernel(
            earlier
                .iter()
                .map(|&m| (data.records[m].item, data.records[m].timestamp)),
            item,
            r.timestamp,
            tau,
            data.catalog,
        )
    }

    fn sample_negatives<R: Rng>(
        &self,
        data: &TrainData<'_>,
        tau: f64,
        rng: &mut R,
    ) -> (Vec<ItemId>, Vec<f64>) {
        let mut items = Vec::with_capacity(data.records.len());
        let mut kernels = Vec::with_capacity(data.records.len());
        for (n, r) in data.records.iter().enumerate() {
            let pool = &self.unseen[r.user];
            let j = if !pool.is_empty() {
                pool[rng.random_range(0..pool.len())]
            } else if data.n_items > 1 {
                // Every item was seen: any item other than the positive.
                let j = rng.random_range(0..data.n_items - 1);
                if j >= r.item {
                    j + 1
                } else {
                    j
                }
            } else {
                r.item
            };
            items.push(j);
            kernels.push(self.kernel(data, n, j, tau));
        }
        (items, kernels)
    }

    fn batch(
        &self,
        data: &TrainData<'_>,
        idx: &[usize],
        negs: Option<&(Vec<ItemId>, Vec<f64>)>,
    ) -> TrainingBatch {
        let recs = data.records;
        let (neg_items, neg_kernels) = match negs {
            Some((items, kernels)) => (
                idx.iter().map(|&n| items[n]).collect(),
                idx.iter().map(|&n| kernels[n]).collect(),
            ),
            None => (Vec::new(), Vec::new()),
        };
        TrainingBatch {
            users: idx.iter().map(|&n| recs[n].user).collect(),
            items: idx.iter().map(|&n| recs[n].item).collect(),
            kernels: idx.iter().map(|&n| self.kernels[n]).collect(),
            targets: idx
                .iter()
                .map(|&n| recs[n].rating / data.rating_scale)
                .collect(),
            neg_items,
            neg_kernels,
        }
    }
}

const ALPHA_NAME: &str = "exposure.alpha_raw";
const BETA_NAME: &str = "exposure.beta_raw";

fn full_loss(
    store: &ParamStore,
    model: &InterestModel,
    ids: (ParamId, ParamId),
    batch: &TrainingBatch,
    loss: LossKind,
) -> Result<f64, NnError> {
    let mut tape = Tape::new(store);
    let out = loss_graph(&mut tape, model, ids.0, ids.1, batch, loss)?;
    Ok(tape.value(out).data()[0])
}

/// Fit interest and sensitivity parameters jointly with Adam.
///
/// Each record's exposure comes from the same user's earlier records in the
/// log. The reported curve is the full-log loss after each epoch, using a
/// fixed set of negatives for BPR.
pub fn train_user_model(
    data: &TrainData<'_>,
    cfg: &TrainConfig,
    exposure: ExposureConfig,
) -> Result<CausalUserModel, UserModelError> {
    cfg.validate()?;
    exposure.validate()?;
    let prep = Prepared::new(data, exposure.tau)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut eval_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    eval_rng.set_stream(2);

    let interest = InterestModel::new(data.n_users, data.n_items, cfg.interest, &mut rng)?;
    let unit = ExposureParams::unit(data.n_users, data.n_items, exposure);
    let mut store = interest.store().clone();
    let alpha = store.add(ALPHA_NAME, column(&unit.alpha_raw))?;
    let beta = store.add(BETA_NAME, column(&unit.beta_raw))?;
    let mut adam = Adam::new(AdamConfig::with_lr(cfg.lr), &store);

    let all: Vec<usize> = (0..data.records.len()).collect();
    let eval_negs = match cfg.loss {
        LossKind::Mse => None,
        LossKind::Bpr => Some(prep.sample_negatives(data, exposure.tau, &mut eval_rng)),
    };
    let eval_batch = prep.batch(data, &all, eval_negs.as_ref());
    let initial_loss = full_loss(&store, &interest, (alpha, beta), &eval_batch, cfg.loss)?;
    let mut curve = Vec::with_capacity(cfg.epochs);

    let mut order = all.clone();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let negs = match cfg.loss {
            LossKind::Mse => None,
            LossKind::Bpr => Some(prep.sample_negatives(data, exposure.tau, &mut rng)),
        };
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch = prep.batch(data, chunk, negs.as_ref());
            let grads = {
                let mut tape = Tape::new(&store);
                let out = loss_graph(&mut tape, &interest, alpha, beta, &batch, cfg.loss)?;
                let v = tape.value(out).data()[0];
                if !v.is_finite() {
                    return Err(UserModelError::NonFiniteLoss {
                        epoch,
                        batch: b,
                        detail: format!("batch loss {v} over {} records", batch.len()),
                    });
                }
                tape.backward(out)?
            };
            if !grads.all_finite() {
                return Err(UserModelError::NonFiniteLoss {
                    epoch,
                    batch: b,
                    detail: "non-finite gradient".into(),
                });
            }
            adam.step(&mut store, &grads)?;
        }
        let l = full_loss(&store, &interest, (alpha, beta), &eval_batch, cfg.loss)?;
        if !l.is_finite() {
            return Err(UserModelError::NonFiniteLoss {
                epoch,
                batch: usize::MAX,
                detail: format!("full-log loss {l}"),
            });
        }
        curve.push(l);
    }

    let mut model = CausalUserModel::from_training_store(
        &store,
        data.n_users,
        data.n_items,
        cfg.interest,
        exposure,
        data.catalog.clone(),
        data.rating_scale,
    )?;
    model.initial_loss = initial_loss;
    model.loss_curve = curve;
    Ok(model)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Sidecar {
    n_users: usize,
    n_items: usize,
    rating_scale: f64,
    exposure: ExposureConfig,
    interest: InterestConfig,
    initial_loss: f64,
    loss_curve: Vec<f64>,
}

/// Trained interest model with exposure parameters; answers counterfactual
/// satisfaction queries in normalized rating units.
#[derive(Debug, Clone)]
pub struct CausalUserModel {
    interest: InterestModel,
    exposure: ExposureParams,
    catalog: ItemCatalog,
    rating_scale: f64,
    initial_loss: f64,
    loss_curve: Vec<f64>,
    table: Vec<f64>,
}

impl CausalUserModel {
    pub fn new(
        interest: InterestModel,
        exposure: ExposureParams,
        catalog: ItemCatalog,
        rating_scale: f64,
    ) -> Result<Self, UserModelError> {
        exposure.config.validate()?;
        if exposure.n_users() != interest.n_users() || exposure.n_items() != interest.n_items() {
            return Err(UserModelError::Config(
                "exposure and interest parameters disagree on sizes".into(),
            ));
        }
        if catalog.len() != interest.n_items() {
            return Err(UserModelError::Config(
                "catalog size differs from the model".into(),
            ));
        }
        let table = interest.predict_all();
        Ok(Self {
            interest,
            exposure,
            catalog,
            rating_scale,
            initial_loss: f64::NAN,
            loss_curve: Vec::new(),
            table,
        })
    }

    fn from_training_store(
        store: &ParamStore,
        n_users: usize,
        n_items: usize,
        icfg: InterestConfig,
        exposure: ExposureConfig,
        catalog: ItemCatalog,
        rating_scale: f64,
    ) -> Result<Self, UserModelError> {
        let mut interest_store = ParamStore::new();
        for (_, name, t) in store.iter() {
            if name.starts_with("interest.") {
                interest_store.add(name, t.clone())?;
            }
        }
        let interest = InterestModel::from_store(interest_store, n_users, n_items, icfg)?;
        let params = ExposureParams {
            alpha_raw: store.by_name(ALPHA_NAME)?.data().to_vec(),
            beta_raw: store.by_name(BETA_NAME)?.data().to_vec(),
            config: exposure,
        };
        Self::new(interest, params, catalog, rating_scale)
    }

    /// Interest parameters plus raw sensitivities in one store, as used in
    /// training. Returns the ids of the alpha and beta tables.
    pub fn training_store(&self) -> Result<(ParamStore, ParamId, ParamId), UserModelError> {
        let mut store = self.interest.store().clone();
        let a = store.add(ALPHA_NAME, column(&self.exposure.alpha_raw))?;
        let b = store.add(BETA_NAME, column(&self.exposure.beta_raw))?;
        Ok((store, a, b))
    }

    pub fn interest(&self) -> &InterestModel {
        &self.interest
    }

    pub fn exposure(&self) -> &ExposureParams {
        &self.exposure
    }

    pub fn catalog(&self) -> &ItemCatalog {
        &self.catalog
    }

    pub fn rating_scale(&self) -> f64 {
        self.rating_scale
    }

    pub fn n_users(&self) -> usize {
        self.interest.n_users()
    }

    pub fn n_items(&self) -> usize {
        self.interest.n_items()
    }

    pub fn initial_loss(&self) -> f64 {
        self.initial_loss
    }

    pub fn loss_curve(&self) -> &[f64] {
        &self.loss_curve
    }

    /// Same learned parameters under different exposure hyperparameters.
    pub fn with_exposure_config(&self, cfg: ExposureConfig) -> Result<Self, UserModelError> {
        cfg.validate()?;
        let mut m = self.clone();
        m.exposure.config = cfg;
        Ok(m)
    }

    /// Row-major table of predicted interest.
    pub fn interest_table(&self) -> &[f64] {
        &self.table
    }

    pub fn interest_row(&self, user: UserId) -> &[f64] {
        let n = self.n_items();
        &self.table[user * n..(user + 1) * n]
    }

    pub fn predict_interest(&self, user: UserId, item: ItemId) -> Result<f64, UserModelError> {
        if user >= self.n_users() {
            return Err(UserModelError::UnknownUser(user));
        }
        if item >= self.n_items() {
            return Err(UserModelError::UnknownItem(item));
        }
        Ok(self.table[user * self.n_items() + item])
    }

    /// Predicted satisfaction of `item` at planning step `t_step`, given the
    /// `(item, step)` pairs recommended so far in this planning trajectory.
    pub fn counterfactual_reward(
        &self,
        planning: &[(ItemId, usize)],
        user: UserId,
        item: ItemId,
        t_step: usize,
    ) -> Result<f64, UserModelError> {
        let y = self.predict_interest(user, item)?;
        let e =
            counterfactual_exposure(planning, user, item, t_step, &self.exposure, &self.catalog)?;
        satisfaction(y, e)
    }

    fn paths(prefix: &Path) -> (PathBuf, PathBuf) {
        (
            prefix.with_extension("params"),
            prefix.with_extension("json"),
        )
    }

    /// Writes `<prefix>.params` and a `<prefix>.json` sidecar.
    pub fn save(&self, prefix: impl AsRef<Path>) -> Result<(), UserModelError> {
        let (params, side) = Self::paths(prefix.as_ref());
        let (store, _, _) = self.training_store()?;
        save_params(&params, &store)?;
        let sidecar = Sidecar {
            n_users: self.n_users(),
            n_items: self.n_items(),
            rating_scale: self.rating_scale,
            exposure: self.exposure.config,
            interest: *self.interest.config(),
            initial_loss: self.initial_loss,
            loss_curve: self.loss_curve.clone(),
        };
        let text = serde_json::to_string_pretty(&sidecar)
            .map_err(|e| UserModelError::Sidecar(e.to_string()))?;
        fs::write(&side, text + "\n").map_err(|e| NnError::Io(e).into())
    }

    pub fn load(prefix: impl AsRef<Path>, catalog: ItemCatalog) -> Result<Self, UserModelError> {
        let (params, side) = Self::paths(prefix.as_ref());
        let text = fs::read_to_string(&side).map_err(NnError::Io)?;
        let s: Sidecar = serde_json::from_str(&text)
            .map_err(|e| UserModelError::Sidecar(format!("{}: {e}", side.display())))?;
        let store = load_params(&params)?;
        let mut m = Self::from_training_store(
            &store,
            s.n_users,
            s.n_items,
            s.interest,
            s.exposure,
            catalog,
            s.rating_scale,
        )?;
        m.initial_loss = s.initial_loss;
        m.loss_curve = s.loss_curve;
        Ok(m)
    }
}
