//! Mixture-of-personality partner model.
//!
//! A bank of `k` small policy networks ("personalities") is blended by a
//! profile vector `p` estimated from the partner's recent trajectory. The
//! estimator reads the context embedding and emits logits plus a per-entry
//! noise scale; during learning the logits are perturbed by standard-normal
//! draws times `softplus(scale)`, at evaluation the noise path is skipped so
//! guidance is deterministic. The blended distribution serves two roles:
//! sampled directly when the model acts as the partner, and fed to the ego
//! policy as a guidance vector when predicting the partner.

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{Mat, NodeId, ParamId, ParamSet, Tape, TapeError};
use crate::context::{ContextConfig, ContextEncoder, PartnerHistory};
use crate::env::ACTION_COUNT;

#[derive(Debug, Clone)]
pub struct MopConfig {
    pub obs_dim: usize,
    pub actions: usize,
    /// Number of base personalities in the bank.
    pub personalities: usize,
    /// Hidden width shared by the estimator heads, bank MLPs, and critic.
    pub hidden: usize,
    /// Draw logit noise while acting during learning; evaluation always
    /// bypasses the noise head regardless of this flag.
    pub noise_enabled: bool,
    pub context: ContextConfig,
}

impl MopConfig {
    pub fn new(obs_dim: usize, context_capacity: usize) -> Self {
        Self {
            obs_dim,
            actions: ACTION_COUNT,
            personalities: 12,
            hidden: 64,
            noise_enabled: true,
            context: ContextConfig::new(obs_dim, context_capacity),
        }
    }

    pub fn with_personalities(mut self, k: usize) -> Self {
        self.personalities = k;
        self
    }
}

struct HeadIds {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

struct MlpIds {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
    w3: ParamId,
    b3: ParamId,
}

/// One decision from the partner model at a single timestep: guidance for the
/// ego seat, the partner's own action distribution, and the draw that
/// produced them (kept so updates can replay the exact same profile).
#[derive(Debug, Clone)]
pub struct MopDecision {
    pub guidance: Vec<f64>,
    pub partner_probs: Vec<f64>,
    pub personality: Vec<f64>,
    pub noise: Option<Vec<f64>>,
    /// Each bank member's distribution on the partner observation; input to
    /// the diversity reward.
    pub bank_own: Vec<Vec<f64>>,
}

pub struct Mop {
    pub cfg: MopConfig,
    pub params: ParamSet,
    pub encoder: ContextEncoder,
    est_p: HeadIds,
    est_n: HeadIds,
    bank: Vec<MlpIds>,
    critic: MlpIds,
}

fn init_weight(
    set: &mut ParamSet,
    name: &str,
    rows: usize,
    cols: usize,
    rng: &mut impl Rng,
) -> Result<ParamId, TapeError> {
    let scale = 1.0 / (rows as f64).sqrt();
    let w = Array2::from_shape_fn((rows, cols), |_| {
        let z: f64 = rng.sample(StandardNormal);
        z * scale
    });
    set.add(name, w)
}

fn init_bias(set: &mut ParamSet, name: &str, cols: usize) -> Result<ParamId, TapeError> {
    set.add(name, Array2::zeros((1, cols)))
}

fn init_head(
    set: &mut ParamSet,
    prefix: &str,
    dims: [usize; 3],
    rng: &mut impl Rng,
) -> Result<HeadIds, TapeError> {
    Ok(HeadIds {
        w1: init_weight(set, &format!("{prefix}.w1"), dims[0], dims[1], rng)?,
        b1: init_bias(set, &format!("{prefix}.b1"), dims[1])?,
        w2: init_weight(set, &format!("{prefix}.w2"), dims[1], dims[2], rng)?,
        b2: init_bias(set, &format!("{prefix}.b2"), dims[2])?,
    })
}

fn init_mlp(
    set: &mut ParamSet,
    prefix: &str,
    dims: [usize; 4],
    rng: &mut impl Rng,
) -> Result<MlpIds, TapeError> {
    Ok(MlpIds {
        w1: init_weight(set, &format!("{prefix}.w1"), dims[0], dims[1], rng)?,
        b1: init_bias(set, &format!("{prefix}.b1"), dims[1])?,
        w2: init_weight(set, &format!("{prefix}.w2"), dims[1], dims[2], rng)?,
        b2: init_bias(set, &format!("{prefix}.b2"), dims[2])?,
        w3: init_weight(set, &format!("{prefix}.w3"), dims[2], dims[3], rng)?,
        b3: init_bias(set, &format!("{prefix}.b3"), dims[3])?,
    })
}

/// Convex combination of per-personality distributions: column `i` of `p`
/// weights `pers[i]`. All inputs are row batches of matching height.
pub fn combine(t: &mut Tape, p: NodeId, pers: &[NodeId]) -> Result<NodeId, TapeError> {
    let mut acc: Option<NodeId> = None;
    for (i, per) in pers.iter().enumerate() {
        let w = t.slice_cols(p, i, 1)?;
        let term = t.mul_col(*per, w)?;
        acc = Some(match acc {
            None => term,
            Some(a) => t.add(a, term)?,
        });
    }
    acc.ok_or(TapeError::EmptyInput { op: "combine" })
}

impl Mop {
    pub fn init(cfg: MopConfig, rng: &mut impl Rng) -> Result<Self, TapeError> {
        let mut params = ParamSet::new();
        let encoder = ContextEncoder::init(cfg.context.clone(), &mut params, rng)?;
        let d = cfg.context.model_dim;
        let h = cfg.hidden;
        let k = cfg.personalities;
        let est_p = init_head(&mut params, "est.p", [d, h, k], rng)?;
        let est_n = init_head(&mut params, "est.n", [d, h, k], rng)?;
        let mut bank = Vec::with_capacity(k);
        for i in 0..k {
            bank.push(init_mlp(
                &mut params,
                &format!("bank.{i}"),
                [cfg.obs_dim, h, h, cfg.actions],
                rng,
            )?);
        }
        let critic = init_mlp(&mut params, "critic2", [cfg.obs_dim, h, h, 1], rng)?;
        Ok(Self { cfg, params, encoder, est_p, est_n, bank, critic })
    }

    /// Parameters the partner-policy gradient flows through: context encoder,
    /// estimator heads, and the personality bank. The critic is excluded.
    pub fn phi_ids(&self) -> Vec<ParamId> {
        let mut ids = self.params.ids_with_prefix("enc.");
        ids.extend(self.params.ids_with_prefix("est."));
        ids.extend(self.params.ids_with_prefix("bank."));
        ids
    }

    pub fn critic_ids(&self) -> Vec<ParamId> {
        self.params.ids_with_prefix("critic2.")
    }

    pub fn embed(
        &self,
        t: &mut Tape,
        set: &ParamSet,
        histories: &[PartnerHistory],
    ) -> Result<NodeId, TapeError> {
        self.encoder.encode(t, set, histories)
    }

    fn head_forward(
        &self,
        t: &mut Tape,
        set: &ParamSet,
        ids: &HeadIds,
        x: NodeId,
    ) -> Result<NodeId, TapeError> {
        let w1 = t.param(set, ids.w1);
        let b1 = t.param(set, ids.b1);
        let w2 = t.param(set, ids.w2);
        let b2 = t.param(set, ids.b2);
        let h = t.matmul(x, w1)?;
        let h = t.add_row(h, b1)?;
        let h = t.tanh(h)?;
        let o = t.matmul(h, w2)?;
        t.add_row(o, b2)
    }

    /// Profile over the bank from a batch of context embeddings. `noise`
    /// holds one standard-normal draw per entry; pass `None` to evaluate the
    /// deterministic path.
    pub fn personality(
        &self,
        t: &mut Tape,
        set: &ParamSet,
        ctx: NodeId,
        noise: Option<&Mat>,
    ) -> Result<NodeId, TapeError> {
        let mut logits = self.head_forward(t, set, &self.est_p, ctx)?;
        if let Some(r) = noise {
            let raw = self.head_forward(t, set, &self.est_n, ctx)?;
            let scale = t.softplus(raw)?;
            let draws = t.leaf(r.clone());
            let jitter = t.mul(draws, scale)?;
            logits = t.add(logits, jitter)?;
        }
        t.softmax_rows(logits)
    }

    /// Action distribution of one bank member on a batch of observations.
    pub fn bank_policy(
        &self,
        t: &mut Tape,
        set: &ParamSet,
        index: usize,
        obs: NodeId,
    ) -> Result<NodeId, TapeError> {
        let ids = &self.bank[index];
        let w1 = t.param(set, ids.w1);
        let b1 = t.param(set, ids.b1);
        let w2 = t.param(set, ids.w2);
        let b2 = t.param(set, ids.b2);
        let w3 = t.param(set, ids.w3);
        let b3 = t.param(set, ids.b3);
        let h = t.matmul(obs, w1)?;
        let h = t.add_row(h, b1)?;
        let h = t.tanh(h)?;
        let h = t.matmul(h, w2)?;
        let h = t.add_row(h, b2)?;
        let h = t.tanh(h)?;
        let o = t.matmul(h, w3)?;
        let o = t.add_row(o, b3)?;
        t.softmax_rows(o)
    }

    /// Blended action distribution: profile-weighted sum of every bank
    /// member's policy on `obs`.
    pub fn mixture(
        &self,
        t: &mut Tape,
        set: &ParamSet,
        p: NodeId,
        obs: NodeId,
    ) -> Result<NodeId, TapeError> {
        let mut pers = Vec::with_capacity(self.cfg.personalities);
        for i in 0..self.cfg.personalities {
            pers.push(self.bank_policy(t, set, i, obs)?);
        }
        combine(t, p, &pers)
    }

    /// State-value head on the partner's observation, linear output.
    pub fn value_graph(
        &self,
        t: &mut Tape,
        set: &ParamSet,
        obs: NodeId,
    ) -> Result<NodeId, TapeError> {
        let ids = &self.critic;
        let w1 = t.param(set, ids.w1);
        let b1 = t.param(set, ids.b1);
        let w2 = t.param(set, ids.w2);
        let b2 = t.param(set, ids.b2);
        let w3 = t.param(set, ids.w3);
        let b3 = t.param(set, ids.b3);
        let h = t.matmul(obs, w1)?;
        let h = t.add_row(h, b1)?;
        let h = t.tanh(h)?;
        let h = t.matmul(h, w2)?;
        let h = t.add_row(h, b2)?;
        let h = t.tanh(h)?;
        let o = t.matmul(h, w3)?;
        t.add_row(o, b3)
    }

    pub fn value(&self, obs: &[f64]) -> f64 {
        let mut t = Tape::new();
        let o = t.leaf(row(obs));
        let v = self.value_graph(&mut t, &self.params, o).expect("value graph");
        t.value(v)[[0, 0]]
    }

    /// Every bank member's distribution on one observation. Used by
    /// diversity metrics and diagnostics.
    pub fn bank_distributions(&self, obs: &[f64]) -> Result<Vec<Vec<f64>>, TapeError> {
        let mut t = Tape::new();
        let o = t.leaf(row(obs));
        let mut out = Vec::with_capacity(self.cfg.personalities);
        for i in 0..self.cfg.personalities {
            let d = self.bank_policy(&mut t, &self.params, i, o)?;
            out.push(t.value(d).row(0).to_vec());
        }
        Ok(out)
    }

    /// One learning-phase decision: a shared profile draw produces both the
    /// guidance distribution on the ego observation and the partner's own
    /// action distribution. Noise is drawn only when the config enables it.
    pub fn decide<R: Rng>(
        &self,
        ego_obs: &[f64],
        own_obs: &[f64],
        history: &PartnerHistory,
        rng: &mut R,
    ) -> Result<MopDecision, TapeError> {
        let k = self.cfg.personalities;
        let noise: Option<Vec<f64>> = if self.cfg.noise_enabled {
            Some((0..k).map(|_| rng.sample(StandardNormal)).collect())
        } else {
            None
        };
        let mut t = Tape::new();
        let ctx = self.embed(&mut t, &self.params, std::slice::from_ref(history))?;
        let noise_mat = noise
            .as_ref()
            .map(|n| Array2::from_shape_vec((1, k), n.clone()).expect("noise shape"));
        let p = self.personality(&mut t, &self.params, ctx, noise_mat.as_ref())?;
        let ego = t.leaf(row(ego_obs));
        let own = t.leaf(row(own_obs));
        let guidance = self.mixture(&mut t, &self.params, p, ego)?;
        let mut pers_own = Vec::with_capacity(k);
        for i in 0..k {
            pers_own.push(self.bank_policy(&mut t, &self.params, i, own)?);
        }
        let partner = combine(&mut t, p, &pers_own)?;
        let bank_own = pers_own
            .iter()
            .map(|n| t.value(*n).row(0).to_vec())
            .collect();
        Ok(MopDecision {
            guidance: t.value(guidance).row(0).to_vec(),
            partner_probs: t.value(partner).row(0).to_vec(),
            personality: t.value(p).row(0).to_vec(),
            noise,
            bank_own,
        })
    }

    /// Deterministic guidance for evaluation: profile from the observed
    /// partner history with the noise path disabled, blended on the ego
    /// observation.
    pub fn guide(&self, obs: &[f64], history: &PartnerHistory) -> Result<Vec<f64>, TapeError> {
        let mut t = Tape::new();
        let ctx = self.embed(&mut t, &self.params, std::slice::from_ref(history))?;
        let p = self.personality(&mut t, &self.params, ctx, None)?;
        let o = t.leaf(row(obs));
        let g = self.mixture(&mut t, &self.params, p, o)?;
        Ok(t.value(g).row(0).to_vec())
    }
}

fn row(x: &[f64]) -> Mat {
    Array2::from_shape_vec((1, x.len()), x.to_vec()).expect("row shape")
}
