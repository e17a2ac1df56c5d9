use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{PolicyBundle, PolicyError, Trajectory, LN_2PI};
use crate::nncore::{Gradients, NnError, ParamId, Tape, Tensor, Var};

/// Generalized advantage estimates by backward recursion. `values` carries
/// one extra bootstrap entry for the state after the last reward.
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    gamma: f64,
    lambda: f64,
) -> Result<Vec<f64>, PolicyError> {
    if values.len() != rewards.len() + 1 {
        return Err(PolicyError::Length(format!(
            "{} rewards need {} values, got {}",
            rewards.len(),
            rewards.len() + 1,
            values.len()
        )));
    }
    let mut adv = vec![0.0; rewards.len()];
    let mut running = 0.0;
    for t in (0..rewards.len()).rev() {
        let delta = rewards[t] + gamma * values[t + 1] - values[t];
        running = delta + gamma * lambda * running;
        adv[t] = running;
    }
    Ok(adv)
}

/// Shift to zero mean and scale to unit (population) standard deviation.
pub fn normalize_advantages(adv: &mut [f64]) {
    if adv.is_empty() {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    adv.iter_mut().for_each(|a| *a -= mean);
    let std = (adv.iter().map(|a| a * a).sum::<f64>() / n).sqrt();
    if std > 1e-12 {
        adv.iter_mut().for_each(|a| *a /= std);
    }
}

/// `min(ratio * adv, clip(ratio, 1 - eps, 1 + eps) * adv)`.
pub fn clipped_objective(ratio: f64, adv: f64, eps: f64) -> f64 {
    (ratio * adv).min(ratio.clamp(1.0 - eps, 1.0 + eps) * adv)
}

/// Trajectories with advantages (normalized over the batch) and returns.
#[derive(Debug, Clone)]
pub struct RolloutBatch {
    pub trajectories: Vec<Trajectory>,
    pub advantages: Vec<Vec<f64>>,
    pub returns: Vec<Vec<f64>>,
}

impl RolloutBatch {
    /// Fixed-horizon episodes: the value after the final step is zero.
    pub fn new(
        trajectories: Vec<Trajectory>,
        gamma: f64,
        lambda: f64,
    ) -> Result<Self, PolicyError> {
        let mut advantages = Vec::with_capacity(trajectories.len());
        let mut returns = Vec::with_capacity(trajectories.len());
        for tr in &trajectories {
            tr.check()?;
            let mut v = tr.values.clone();
            v.push(0.0);
            let a = gae(&tr.rewards, &v, gamma, lambda)?;
            returns.push(a.iter().zip(&tr.values).map(|(a, v)| a + v).collect());
            advantages.push(a);
        }
        let mut flat: Vec<f64> = advantages.iter().flatten().copied().collect();
        normalize_advantages(&mut flat);
        let mut k = 0;
        for a in advantages.iter_mut() {
            for x in a.iter_mut() {
                *x = flat[k];
                k += 1;
            }
        }
        Ok(Self {
            trajectories,
            advantages,
            returns,
        })
    }

    pub fn steps(&self) -> usize {
        self.advantages.iter().map(Vec::len).sum()
    }
}

/// Scalar graph nodes of the clipped surrogate and the entropy bonus.
#[derive(Debug, Clone, Copy)]
pub struct PolicyTerms {
    /// Mean clipped surrogate.
    pub objective: Var,
    /// Mean per-step entropy.
    pub entropy: Var,
    pub clip_fraction: f64,
}

fn column(v: &[f64]) -> Tensor {
    Tensor::matrix(v.len(), 1, v.to_vec()).expect("column")
}

/// Clipped surrogate from per-step new log-probabilities `[T, 1]`. Where
/// the clipped branch is the minimum, its value enters as a constant.
fn surrogate(
    tape: &mut Tape<'_>,
    logp: Var,
    old_logp: &[f64],
    adv: &[f64],
    eps: f64,
) -> Result<(Var, f64), NnError> {
    let old = tape.constant(column(old_logp));
    let diff = tape.sub(logp, old)?;
    let ratio = tape.exp(diff);
    let r = tape.value(ratio).data().to_vec();
    let mut coef = Vec::with_capacity(r.len());
    let mut fixed = Vec::with_capacity(r.len());
    let mut clipped = 0usize;
    for (&r, &a) in r.iter().zip(adv) {
        if (r - 1.0).abs() > eps {
            clipped += 1;
        }
        let c = r.clamp(1.0 - eps, 1.0 + eps) * a;
        if r * a <= c {
            coef.push(a);
            fixed.push(0.0);
        } else {
            coef.push(0.0);
            fixed.push(c);
        }
    }
    let coef = tape.constant(column(&coef));
    let fixed = tape.constant(column(&fixed));
    let term = tape.mul(ratio, coef)?;
    let term = tape.add(term, fixed)?;
    Ok((tape.mean(term), clipped as f64 / r.len() as f64))
}

fn check_lengths(rows: usize, actions: usize, old: &[f64], adv: &[f64]) -> Result<(), NnError> {
    if actions != rows || old.len() != rows || adv.len() != rows {
        return Err(NnError::InvalidTensor(format!(
            "{rows} rows with {actions} actions, {} log-probs and {} advantages",
            old.len(),
            adv.len()
        )));
    }
    Ok(())
}

/// Surrogate and entropy for a softmax actor with `[T, n]` logits.
pub fn policy_terms(
    tape: &mut Tape<'_>,
    logits: Var,
    actions: &[usize],
    old_logp: &[f64],
    adv: &[f64],
    eps: f64,
) -> Result<PolicyTerms, NnError> {
    let v = tape.value(logits);
    let (rows, n) = (v.rows(), v.cols());
    check_lengths(rows, actions.len(), old_logp, adv)?;
    if let Some(&a) = actions.iter().find(|&&a| a >= n) {
        return Err(NnError::InvalidTensor(format!(
            "action {a} out of {n} logits"
        )));
    }
    let maxes: Vec<f64> = (0..rows)
        .map(|r| v.row(r).iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let m = tape.constant(column(&maxes));
    let sh = tape.sub(logits, m)?;
    let ex = tape.exp(sh);
    let se = tape.sum_axis(ex, 1)?;
    let lse = tape.log(se);
    let lsm = tape.sub(sh, lse)?;
    let mut onehot = vec![0.0; rows * n];
    for (r, &a) in actions.iter().enumerate() {
        onehot[r * n + a] = 1.0;
    }
    let oh = tape.constant(Tensor::matrix(rows, n, onehot)?);
    let picked = tape.mul(lsm, oh)?;
    let logp = tape.sum_axis(picked, 1)?;
    let (objective, clip_fraction) = surrogate(tape, logp, old_logp, adv, eps)?;

    let p = tape.exp(lsm);
    let plogp = tape.mul(p, lsm)?;
    let total = tape.sum(plogp);
    let entropy = tape.scale(total, -1.0 / rows as f64);
    Ok(PolicyTerms {
        objective,
        entropy,
        clip_fraction,
    })
}

/// Surrogate and entropy for a diagonal Gaussian actor.
fn gaussian_terms(
    tape: &mut Tape<'_>,
    mean: Var,
    log_std: ParamId,
    raw: &[Vec<f64>],
    old_logp: &[f64],
    adv: &[f64],
    eps: f64,
) -> Result<PolicyTerms, NnError> {
    let (rows, d) = (tape.value(mean).rows(), tape.value(mean).cols());
    check_lengths(rows, raw.len(), old_logp, adv)?;
    let a = tape.constant(Tensor::matrix(rows, d, raw.concat())?);
    let ls = tape.param(log_std);
    let diff = tape.sub(a, mean)?;
    let nls = tape.neg(ls);
    let inv = tape.exp(nls);
    let z = tape.mul(diff, inv)?;
    let z2 = tape.mul(z, z)?;
    let q = tape.scale(z2, -0.5);
    let q = tape.sub(q, ls)?;
    let q = tape.sum_axis(q, 1)?;
    let logp = tape.add_scalar(q, -0.5 * LN_2PI * d as f64);
    let (objective, clip_fraction) = surrogate(tape, logp, old_logp, adv, eps)?;
    let s = tape.sum(ls);
    let entropy = tape.add_scalar(s, 0.5 * (1.0 + LN_2PI) * d as f64);
    Ok(PolicyTerms {
        objective,
        entropy,
        clip_fraction,
    })
}

/// Averages over the minibatches of one update phase.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub objective: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
}

impl PolicyBundle {
    /// PPO update phase. Actor and critic are stepped per minibatch; the
    /// tracker stays frozen and is stepped once at the end with the mean of
    /// its accumulated gradients.
    pub fn ppo_update<R: Rng + ?Sized>(
        &mut self,
        batch: &RolloutBatch,
        rng: &mut R,
    ) -> Result<UpdateStats, PolicyError> {
        let p = self.cfg.ppo;
        let tracker_ids = self.tracker.param_ids().to_vec();
        let mut tracker_acc = Gradients::zeros_like(&self.store);
        let mut order: Vec<usize> = (0..batch.trajectories.len()).collect();
        let mut stats = UpdateStats::default();
        let mut n_mb = 0usize;
        for _ in 0..p.update_epochs {
            order.shuffle(rng);
            for chunk in order.chunks(p.minibatch_size) {
                let (grads, s) = self.minibatch_grads(batch, chunk)?;
                if !grads.all_finite() {
                    return Err(PolicyError::NonFinite {
                        what: "gradient",
                        detail: format!("minibatch {n_mb}: {s:?}"),
                    });
                }
                tracker_acc.accumulate(&grads, &tracker_ids);
                let (store, actor_opt, critic_opt, _) = self.parts_mut();
                actor_opt.step(store, &grads)?;
                critic_opt.step(store, &grads)?;
                stats.objective += s.objective;
                stats.value_loss += s.value_loss;
                stats.entropy += s.entropy;
                stats.clip_fraction += s.clip_fraction;
                n_mb += 1;
            }
        }
        if n_mb > 0 {
            tracker_acc.scale(1.0 / n_mb as f64);
            let (store, _, _, tracker_opt) = self.parts_mut();
            tracker_opt.step(store, &tracker_acc)?;
            let k = n_mb as f64;
            stats.objective /= k;
            stats.value_loss /= k;
            stats.entropy /= k;
            stats.clip_fraction /= k;
        }
        Ok(stats)
    }

    fn minibatch_grads(
        &self,
        batch: &RolloutBatch,
        chunk: &[usize],
    ) -> Result<(Gradients, UpdateStats), PolicyError> {
        let mut tape = Tape::new(&self.store);
        let (loss, stats) = self.minibatch_loss(&mut tape, batch, chunk)?;
        let l = tape.value(loss).data()[0];
        if !l.is_finite() {
            return Err(PolicyError::NonFinite {
                what: "loss",
                detail: format!("{stats:?}"),
            });
        }
        Ok((tape.backward(loss)?, stats))
    }

    /// Scalar PPO loss `-objective + c_v * value_mse - c_e * entropy` over
    /// the trajectories `chunk` of `batch`, recorded on `tape`.
    pub fn minibatch_loss(
        &self,
        tape: &mut Tape<'_>,
        batch: &RolloutBatch,
        chunk: &[usize],
    ) -> Result<(Var, UpdateStats), PolicyError> {
        let p = self.cfg.ppo;
        let mut states = Vec::with_capacity(chunk.len());
        let (mut actions, mut raw, mut old, mut adv, mut ret) =
            (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for &k in chunk {
            let tr = &batch.trajectories[k];
            let all = self
                .tracker
                .encode_all(tape, tr.user, &tr.items, &tr.rewards)?;
            let rows: Vec<usize> = (0..tr.items.len()).collect();
            states.push(tape.gather_rows(all, &rows)?);
            actions.extend_from_slice(&tr.items);
            raw.extend(tr.raw_actions.iter().cloned());
            old.extend_from_slice(&tr.logps);
            adv.extend_from_slice(&batch.advantages[k]);
            ret.extend_from_slice(&batch.returns[k]);
        }
        let s = if states.len() == 1 {
            states[0]
        } else {
            tape.concat(&states, 0)?
        };
        let out = self.actor_tape(tape, s)?;
        let terms = match self.log_std_id() {
            None => policy_terms(tape, out, &actions, &old, &adv, p.clip_eps)?,
            Some(ls) => gaussian_terms(tape, out, ls, &raw, &old, &adv, p.clip_eps)?,
        };
        let v = self.critic_head().tape(tape, s)?;
        let target = tape.constant(column(&ret));
        let d = tape.sub(v, target)?;
        let sq = tape.mul(d, d)?;
        let vl = tape.mean(sq);

        let neg_obj = tape.neg(terms.objective);
        let vterm = tape.scale(vl, p.value_coef);
        let eterm = tape.scale(terms.entropy, -p.entropy_coef);
        let loss = tape.add(neg_obj, vterm)?;
        let loss = tape.add(loss, eterm)?;
        let stats = UpdateStats {
            objective: tape.value(terms.objective).data()[0],
            value_loss: tape.value(vl).data()[0],
            entropy: tape.value(terms.entropy).data()[0],
            clip_fraction: terms.clip_fraction,
        };
        Ok((loss, stats))
    }
}

#[cfg(test)]
mod tests {
    use super::super::log_softmax;
    use super::*;
    use crate::nncore::ParamStore;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gae_double_loop(r: &[f64], v: &[f64], g: f64, l: f64) -> Vec<f64> {
        (0..r.len())
            .map(|t| {
                (t..r.len())
                    .map(|k| (g * l).powi((k - t) as i32) * (r[k] + g * v[k + 1] - v[k]))
                    .sum()
            })
            .collect()
    }

    #[test]
    fn gae_examples() {
        assert_eq!(gae(&[1.0], &[0.0, 0.0], 1.0, 1.0).unwrap(), vec![1.0]);
        let a = gae(&[1.0, 1.0], &[0.5, 0.5, 0.0], 0.9, 0.95).unwrap();
        assert!(
            (a[0] - 1.3775).abs() < 1e-12 && (a[1] - 0.5).abs() < 1e-12,
            "{a:?}"
        );
        assert!(gae(&[1.0], &[0.0], 0.9, 0.9).is_err());
    }

    proptest! {
        #[test]
        fn gae_matches_double_loop(
            r in prop::collection::vec(-2.0f64..2.0, 1..40),
            seed in 0u64..1000,
            g in 0.5f64..1.0,
            l in 0.5f64..1.0,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let v: Vec<f64> = (0..=r.len()).map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0)).collect();
            let a = gae(&r, &v, g, l).unwrap();
            let b = gae_double_loop(&r, &v, g, l);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-10);
            }
        }

        #[test]
        fn telescoping_at_unit_discount(r in prop::collection::vec(-2.0f64..2.0, 1..30)) {
            let v: Vec<f64> = (0..=r.len()).map(|k| if k == r.len() { 0.0 } else { 0.1 * k as f64 }).collect();
            let a = gae(&r, &v, 1.0, 1.0).unwrap();
            for t in 0..r.len() {
                let tail: f64 = r[t..].iter().sum();
                prop_assert!((a[t] - (tail - v[t])).abs() < 1e-10);
            }
        }

        #[test]
        fn normalization_centers_and_scales(x in prop::collection::vec(-5.0f64..5.0, 2..200)) {
            let mut a = x.clone();
            normalize_advantages(&mut a);
            let n = a.len() as f64;
            let mean = a.iter().sum::<f64>() / n;
            let std = (a.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            prop_assert!(mean.abs() < 1e-9);
            let spread = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - x.iter().cloned().fold(f64::INFINITY, f64::min);
            if spread > 1e-6 {
                prop_assert!((std - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn clip_examples() {
        assert_eq!(clipped_objective(1.5, 1.0, 0.2), 1.2);
        assert_eq!(clipped_objective(0.5, -1.0, 0.2), -0.8);
        assert_eq!(clipped_objective(1.0, 0.7, 0.2), 0.7);
    }

    fn logits_store(rows: usize, n: usize, seed: u64) -> (ParamStore, ParamId) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let id = s
            .add("logits", Tensor::randn(&[rows, n], 1.0, &mut rng))
            .unwrap();
        (s, id)
    }

    #[test]
    fn unchanged_policy_gives_mean_advantage() {
        let (s, id) = logits_store(6, 5, 2);
        let actions = [0, 4, 2, 2, 1, 3];
        let old: Vec<f64> = (0..6)
            .map(|r| log_softmax(s.get(id).row(r))[actions[r]])
            .collect();
        let adv = [0.3, -1.2, 0.8, 0.1, -0.4, 2.0];
        let mut t = Tape::new(&s);
        let l = t.param(id);
        let terms = policy_terms(&mut t, l, &actions, &old, &adv, 0.2).unwrap();
        let mean = adv.iter().sum::<f64>() / 6.0;
        assert!((t.value(terms.objective).data()[0] - mean).abs() < 1e-12);
        assert_eq!(terms.clip_fraction, 0.0);
    }

    #[test]
    fn surrogate_gradient_is_reinforce_at_old_policy() {
        let mut s = ParamStore::new();
        let id = s
            .add("logits", Tensor::matrix(1, 2, vec![0.4, -0.3]).unwrap())
            .unwrap();
        let actions = [0, 1, 1, 0, 1];
        let adv = [1.0, -0.5, 2.0, 0.3, -1.5];
        let lp = log_softmax(s.get(id).data());
        let old: Vec<f64> = actions.iter().map(|&a| lp[a]).collect();
        let mut t = Tape::new(&s);
        let l = t.param(id);
        let rows = t.gather_rows(l, &[0; 5]).unwrap();
        let terms = policy_terms(&mut t, rows, &actions, &old, &adv, 0.2).unwrap();
        let g = t.backward(terms.objective).unwrap();
        let p: Vec<f64> = lp.iter().map(|x| x.exp()).collect();
        for j in 0..2 {
            let analytic: f64 = actions
                .iter()
                .zip(&adv)
                .map(|(&a, &ad)| ad * ((a == j) as u8 as f64 - p[j]))
                .sum::<f64>()
                / 5.0;
            assert!((g.get(id).data()[j] - analytic).abs() < 1e-5);
        }
    }

    #[test]
    fn clipped_branch_has_no_gradient() {
        let mut s = ParamStore::new();
        let id = s
            .add("logits", Tensor::matrix(1, 2, vec![2.0, 0.0]).unwrap())
            .unwrap();
        // Old probability of action 0 was much lower: ratio > 1 + eps.
        let old = [(0.2f64).ln()];
        let mut t = Tape::new(&s);
        let l = t.param(id);
        let terms = policy_terms(&mut t, l, &[0], &old, &[1.0], 0.2).unwrap();
        assert!((t.value(terms.objective).data()[0] - 1.2).abs() < 1e-12);
        assert_eq!(terms.clip_fraction, 1.0);
        let g = t.backward(terms.objective).unwrap();
        assert!(g.get(id).data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn policy_terms_pass_gradient_check() {
        let (s, id) = logits_store(4, 3, 7);
        let actions = [2, 0, 1, 1];
        let old = [-1.3, -0.9, -1.2, -0.8];
        let adv = [0.5, -1.0, 1.5, 0.2];
        let err = crate::nncore::gradient_check(
            &s,
            |t| {
                let l = t.param(id);
                let terms = policy_terms(t, l, &actions, &old, &adv, 0.2)?;
                let e = t.scale(terms.entropy, 0.1);
                t.add(terms.objective, e)
            },
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }
}
