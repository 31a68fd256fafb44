//! Partner-history context encoder.
//!
//! A sliding window of the partner's recent (observation, action) pairs is
//! embedded into per-token vectors, tagged with learned positions, run
//! through one two-head self-attention block with a feed-forward stage
//! (post-norm residuals), and mean-pooled over the valid tokens into a fixed
//! context embedding. Histories shorter than the window are padded and
//! masked; an empty history pools to the exact zero vector.
//!
//! Batching strategy: token MLPs, projections, and the feed-forward stage
//! run as single stacked matrix products over all samples' token rows;
//! only the attention weights are computed per sample, on slices.

use std::collections::VecDeque;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Mat, NodeId, ParamId, ParamSet, Tape, TapeError};

/// Shape of the encoder.
#[derive(Clone, Copy, Debug)]
pub struct ContextConfig {
    pub obs_dim: usize,
    pub actions: usize,
    /// Window length in (observation, action) pairs.
    pub capacity: usize,
    pub model_dim: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub ff_dim: usize,
}

impl ContextConfig {
    pub fn new(obs_dim: usize, capacity: usize) -> Self {
        Self {
            obs_dim,
            actions: crate::env::ACTION_COUNT,
            capacity,
            model_dim: 64,
            heads: 2,
            head_dim: 64,
            ff_dim: 256,
        }
    }

    /// Token slots per sample: one observation and one action per pair.
    pub fn tokens(&self) -> usize {
        2 * self.capacity
    }
}

/// Sliding window of one partner's recent steps, oldest first.
#[derive(Clone, Debug, Default)]
pub struct PartnerHistory {
    capacity: usize,
    items: VecDeque<(Vec<f64>, usize)>,
}

impl PartnerHistory {
    pub fn new(capacity: usize) -> Self {
        Self { capacity, items: VecDeque::with_capacity(capacity) }
    }

    /// Records one partner step, evicting the oldest beyond capacity.
    pub fn push(&mut self, obs: Vec<f64>, action: usize) {
        if self.capacity == 0 {
            return;
        }
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back((obs, action));
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn clear(&mut self) {
        self.items.clear();
    }

    pub fn iter(&self) -> impl Iterator<Item = &(Vec<f64>, usize)> {
        self.items.iter()
    }
}

#[derive(Clone, Debug)]
struct EncIds {
    obs_w: ParamId,
    obs_b: ParamId,
    act_w: ParamId,
    act_b: ParamId,
    pos: ParamId,
    q: Vec<ParamId>,
    k: Vec<ParamId>,
    v: Vec<ParamId>,
    wo: ParamId,
    bo: ParamId,
    ln1_g: ParamId,
    ln1_b: ParamId,
    ff_w1: ParamId,
    ff_b1: ParamId,
    ff_w2: ParamId,
    ff_b2: ParamId,
    ln2_g: ParamId,
    ln2_b: ParamId,
}

pub struct ContextEncoder {
    pub cfg: ContextConfig,
    ids: EncIds,
}

const LN_EPS: f64 = 1e-5;
const MASK_OFF: f64 = -1e30;

fn normal_mat<R: Rng>(rows: usize, cols: usize, std: f64, rng: &mut R) -> Mat {
    let normal = Normal::new(0.0, std).expect("normal");
    Array2::from_shape_fn((rows, cols), |_| normal.sample(rng))
}

impl ContextEncoder {
    /// Registers encoder parameters under the `enc.` prefix in `set`.
    pub fn init<R: Rng>(
        cfg: ContextConfig,
        set: &mut ParamSet,
        rng: &mut R,
    ) -> Result<Self, TapeError> {
        let d = cfg.model_dim;
        let xavier = |fan_in: usize| 1.0 / (fan_in as f64).sqrt();
        let mut q = Vec::new();
        let mut k = Vec::new();
        let mut v = Vec::new();
        for h in 0..cfg.heads {
            q.push(set.add(&format!("enc.attn.q{h}"), normal_mat(d, cfg.head_dim, xavier(d), rng))?);
            k.push(set.add(&format!("enc.attn.k{h}"), normal_mat(d, cfg.head_dim, xavier(d), rng))?);
            v.push(set.add(&format!("enc.attn.v{h}"), normal_mat(d, cfg.head_dim, xavier(d), rng))?);
        }
        let concat = cfg.heads * cfg.head_dim;
        let ids = EncIds {
            obs_w: set.add("enc.obs.w", normal_mat(cfg.obs_dim, d, xavier(cfg.obs_dim), rng))?,
            obs_b: set.add("enc.obs.b", Array2::zeros((1, d)))?,
            act_w: set.add("enc.act.w", normal_mat(cfg.actions, d, xavier(cfg.actions), rng))?,
            act_b: set.add("enc.act.b", Array2::zeros((1, d)))?,
            pos: set.add("enc.pos", normal_mat(cfg.tokens().max(1), d, 0.02, rng))?,
            q,
            k,
            v,
            wo: set.add("enc.attn.wo", normal_mat(concat, d, xavier(concat), rng))?,
            bo: set.add("enc.attn.bo", Array2::zeros((1, d)))?,
            ln1_g: set.add("enc.ln1.g", Array2::ones((1, d)))?,
            ln1_b: set.add("enc.ln1.b", Array2::zeros((1, d)))?,
            ff_w1: set.add("enc.ffn.w1", normal_mat(d, cfg.ff_dim, xavier(d), rng))?,
            ff_b1: set.add("enc.ffn.b1", Array2::zeros((1, cfg.ff_dim)))?,
            ff_w2: set.add("enc.ffn.w2", normal_mat(cfg.ff_dim, d, xavier(cfg.ff_dim), rng))?,
            ff_b2: set.add("enc.ffn.b2", Array2::zeros((1, d)))?,
            ln2_g: set.add("enc.ln2.g", Array2::ones((1, d)))?,
            ln2_b: set.add("enc.ln2.b", Array2::zeros((1, d)))?,
        };
        Ok(Self { cfg, ids })
    }

    /// Context embeddings [batch, model_dim] for a batch of histories.
    pub fn encode(
        &self,
        t: &mut Tape,
        set: &ParamSet,
        histories: &[PartnerHistory],
    ) -> Result<NodeId, TapeError> {
        let (obs_rows, act_rows, lens) = self.history_batch(histories);
        self.encode_tokens(t, set, obs_rows, act_rows, &lens)
    }

    /// Host-side packing: stacked observation rows [b*C, obs_dim], action
    /// one-hots [b*C, actions], and per-sample valid pair counts. Pairs are
    /// right-aligned (newest in the last slot); leading slots are zero rows.
    fn history_batch(&self, histories: &[PartnerHistory]) -> (Mat, Mat, Vec<usize>) {
        let b = histories.len();
        let c = self.cfg.capacity;
        let mut obs = Array2::zeros((b * c.max(1), self.cfg.obs_dim));
        let mut act = Array2::zeros((b * c.max(1), self.cfg.actions));
        let mut lens = Vec::with_capacity(b);
        for (i, h) in histories.iter().enumerate() {
            debug_assert!(h.len() <= c);
            let offset = c - h.len();
            for (j, (o, a)) in h.iter().enumerate() {
                debug_assert_eq!(o.len(), self.cfg.obs_dim);
                for (d, x) in o.iter().enumerate() {
                    obs[[i * c + offset + j, d]] = *x;
                }
                act[[i * c + offset + j, *a]] = 1.0;
            }
            lens.push(h.len());
        }
        (obs, act, lens)
    }

    /// Core graph over pre-packed token matrices. Exposed to tests so mask
    /// behavior can be probed with adversarial padding content.
    pub(crate) fn encode_tokens(
        &self,
        t: &mut Tape,
        set: &ParamSet,
        obs_rows: Mat,
        act_rows: Mat,
        lens: &[usize],
    ) -> Result<NodeId, TapeError> {
        let b = lens.len();
        let c = self.cfg.capacity;
        let d = self.cfg.model_dim;
        if b == 0 {
            return Err(TapeError::EmptyInput { op: "encode" });
        }
        if c == 0 {
            return Ok(t.leaf(Array2::zeros((b, d))));
        }
        let tokens = self.cfg.tokens();

        // Token embeddings, all samples stacked.
        let obs_in = t.leaf(obs_rows);
        let act_in = t.leaf(act_rows);
        let ow = t.param(set, self.ids.obs_w);
        let ob = t.param(set, self.ids.obs_b);
        let aw = t.param(set, self.ids.act_w);
        let ab = t.param(set, self.ids.act_b);
        let to = t.matmul(obs_in, ow)?;
        let to = t.add_row(to, ob)?;
        let to = t.tanh(to)?;
        let ta = t.matmul(act_in, aw)?;
        let ta = t.add_row(ta, ab)?;
        let ta = t.tanh(ta)?;

        // Interleave observation and action tokens per sample:
        // rows [i*2C + 2j] from to, [i*2C + 2j + 1] from ta.
        let stacked = t.concat_rows(&[to, ta])?;
        let mut interleave = Vec::with_capacity(b * tokens);
        for i in 0..b {
            for j in 0..c {
                interleave.push(i * c + j);
                interleave.push(b * c + i * c + j);
            }
        }
        let tok = t.gather_rows(stacked, interleave)?;

        // Learned positions, tiled across the batch.
        let pos = t.param(set, self.ids.pos);
        let tile: Vec<usize> = (0..b).flat_map(|_| 0..tokens).collect();
        let pos_tiled = t.gather_rows(pos, tile)?;
        let x = t.add(tok, pos_tiled)?;

        // Self-attention per sample; scores for padded token columns are
        // pushed to an effective minus-infinity so their weights underflow
        // to exact zero.
        let scale = 1.0 / (self.cfg.head_dim as f64).sqrt();
        let mut per_sample = Vec::with_capacity(b);
        for (i, &len) in lens.iter().enumerate() {
            let xi = t.slice_rows(x, i * tokens, tokens)?;
            let mut mask = Array2::zeros((tokens, tokens));
            for col in 0..tokens - 2 * len {
                for row in 0..tokens {
                    mask[[row, col]] = MASK_OFF;
                }
            }
            let mask = t.leaf(mask);
            let mut heads = Vec::with_capacity(self.cfg.heads);
            for h in 0..self.cfg.heads {
                let qw = t.param(set, self.ids.q[h]);
                let kw = t.param(set, self.ids.k[h]);
                let vw = t.param(set, self.ids.v[h]);
                let q = t.matmul(xi, qw)?;
                let k = t.matmul(xi, kw)?;
                let v = t.matmul(xi, vw)?;
                let kt = t.transpose(k)?;
                let scores = t.matmul(q, kt)?;
                let scores = t.scale(scores, scale)?;
                let scores = t.add(scores, mask)?;
                let weights = t.softmax_rows(scores)?;
                heads.push(t.matmul(weights, v)?);
            }
            per_sample.push(t.concat_cols(&heads)?);
        }
        let attn = t.concat_rows(&per_sample)?;
        let wo = t.param(set, self.ids.wo);
        let bo = t.param(set, self.ids.bo);
        let attn = t.matmul(attn, wo)?;
        let attn = t.add_row(attn, bo)?;

        // Post-norm residual blocks.
        let res1 = t.add(x, attn)?;
        let y = self.layer_norm(t, set, res1, self.ids.ln1_g, self.ids.ln1_b)?;
        let fw1 = t.param(set, self.ids.ff_w1);
        let fb1 = t.param(set, self.ids.ff_b1);
        let fw2 = t.param(set, self.ids.ff_w2);
        let fb2 = t.param(set, self.ids.ff_b2);
        let f = t.matmul(y, fw1)?;
        let f = t.add_row(f, fb1)?;
        let f = t.tanh(f)?;
        let f = t.matmul(f, fw2)?;
        let f = t.add_row(f, fb2)?;
        let res2 = t.add(y, f)?;
        let z = self.layer_norm(t, set, res2, self.ids.ln2_g, self.ids.ln2_b)?;

        // Masked mean-pool: one pooling row per sample; all-padding samples
        // get a zero row, pooling to the exact zero embedding.
        let mut pool = Array2::zeros((b, b * tokens));
        for (i, &len) in lens.iter().enumerate() {
            if len > 0 {
                let w = 1.0 / (2 * len) as f64;
                for tk in tokens - 2 * len..tokens {
                    pool[[i, i * tokens + tk]] = w;
                }
            }
        }
        let pool = t.leaf(pool);
        t.matmul(pool, z)
    }

    /// Row-normalization followed by a learned elementwise affine. The
    /// gain/shift rows are tiled via gather so gradients accumulate back
    /// into the single parameter row.
    fn layer_norm(
        &self,
        t: &mut Tape,
        set: &ParamSet,
        x: NodeId,
        gain: ParamId,
        shift: ParamId,
    ) -> Result<NodeId, TapeError> {
        let rows = t.value(x).nrows();
        let normed = t.layer_norm_rows(x, LN_EPS)?;
        let g = t.param(set, gain);
        let g_tiled = t.gather_rows(g, vec![0; rows])?;
        let scaled = t.mul(normed, g_tiled)?;
        let sb = t.param(set, shift);
        t.add_row(scaled, sb)
    }

    pub fn param_ids(&self, set: &ParamSet) -> Vec<ParamId> {
        set.ids_with_prefix("enc.")
    }
}
