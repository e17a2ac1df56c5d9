use super::{layer_norm_plain, StateTracker, TrackerError};
use crate::env::{ItemId, UserId};
use crate::nncore::{matmul_into, softmax_row, ParamStore};

/// Incremental encoder for one rollout. Because attention is causal, the
/// output at a position never changes once computed, so each new step only
/// needs its own query against cached keys and values.
#[derive(Debug, Clone)]
pub struct TrackerSession<'a> {
    tracker: &'a StateTracker,
    store: &'a ParamStore,
    user: UserId,
    tokens: usize,
    keys: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
    state: Vec<f64>,
}

impl<'a> TrackerSession<'a> {
    pub(super) fn new(tracker: &'a StateTracker, store: &'a ParamStore, user: UserId) -> Self {
        let layers = tracker.layers.len();
        let cap = (tracker.cfg.max_len + 1) * tracker.cfg.d_s;
        let mut s = Self {
            tracker,
            store,
            user,
            tokens: 0,
            keys: vec![Vec::with_capacity(cap); layers],
            values: vec![Vec::with_capacity(cap); layers],
            state: Vec::new(),
        };
        let tok = tracker.user_token(store, user);
        s.advance(tok);
        s
    }

    pub fn user(&self) -> UserId {
        self.user
    }

    /// Number of steps pushed so far.
    pub fn steps(&self) -> usize {
        self.tokens - 1
    }

    /// Current state `s_t`.
    pub fn state(&self) -> &[f64] {
        &self.state
    }

    /// Append step `(item, reward)` and return the new state.
    pub fn push(&mut self, item: ItemId, reward: f64) -> Result<&[f64], TrackerError> {
        if self.steps() >= self.tracker.cfg.max_len {
            return Err(TrackerError::PrefixTooLong {
                len: self.steps() + 1,
                max: self.tracker.cfg.max_len,
            });
        }
        let tok = self.tracker.gate(self.store, reward, item)?;
        self.advance(tok);
        Ok(&self.state)
    }

    fn advance(&mut self, mut x: Vec<f64>) {
        let tr = self.tracker;
        let st = self.store;
        let d = tr.cfg.d_s;
        let p = self.tokens;
        for (v, pe) in x.iter_mut().zip(tr.pos.row(p)) {
            *v += pe;
        }
        let inv_sqrt_d = 1.0 / (d as f64).sqrt();
        let n = p + 1;
        let mut scores = vec![0.0; n];
        let mut attn = vec![0.0; n];
        for (l, ids) in tr.layers.iter().enumerate() {
            let mut q = vec![0.0; d];
            let mut k = vec![0.0; d];
            let mut v = vec![0.0; d];
            matmul_into(&x, st.get(ids.wq).data(), &mut q, 1, d, d);
            matmul_into(&x, st.get(ids.wk).data(), &mut k, 1, d, d);
            matmul_into(&x, st.get(ids.wv).data(), &mut v, 1, d, d);
            self.keys[l].extend_from_slice(&k);
            self.values[l].extend_from_slice(&v);

            scores.iter_mut().for_each(|s| *s = 0.0);
            matmul_into_transposed(&q, &self.keys[l], &mut scores, d);
            for s in scores.iter_mut() {
                *s *= inv_sqrt_d;
            }
            softmax_row(&scores, &mut attn);
            let mut h = vec![0.0; d];
            matmul_into(&attn, &self.values[l], &mut h, 1, n, d);
            let mut o = vec![0.0; d];
            matmul_into(&h, st.get(ids.wo).data(), &mut o, 1, d, d);
            for (xv, ov) in x.iter_mut().zip(&o) {
                *xv += ov;
            }
            layer_norm_plain(&mut x, st.get(ids.ln1_g).data(), st.get(ids.ln1_b).data());

            let hdim = st.get(ids.f_b1).len();
            let mut f = vec![0.0; hdim];
            matmul_into(&x, st.get(ids.f_w1).data(), &mut f, 1, d, hdim);
            for (fv, b) in f.iter_mut().zip(st.get(ids.f_b1).data()) {
                *fv = (*fv + b).max(0.0);
            }
            let mut f2 = vec![0.0; d];
            matmul_into(&f, st.get(ids.f_w2).data(), &mut f2, 1, hdim, d);
            for ((xv, fv), b) in x.iter_mut().zip(&f2).zip(st.get(ids.f_b2).data()) {
                *xv += fv + b;
            }
            layer_norm_plain(&mut x, st.get(ids.ln2_g).data(), st.get(ids.ln2_b).data());
        }
        self.tokens += 1;
        self.state = x;
    }
}

/// `out[j] += sum_m q[m] * keys[j][m]`, accumulating in the same order as
/// a `q · K^T` matmul.
fn matmul_into_transposed(q: &[f64], keys: &[f64], out: &mut [f64], d: usize) {
    for (m, &qm) in q.iter().enumerate() {
        if qm == 0.0 {
            continue;
        }
        for (o, key) in out.iter_mut().zip(keys.chunks(d)) {
            *o += qm * key[m];
        }
    }
}
