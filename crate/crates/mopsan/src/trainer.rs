//! Rollout collection, discounted returns, and the three-level update loop:
//! PPO on the ego policy (extrinsic return only), PPO-style updates on the
//! partner model (mixture return), and a periodic meta-gradient step on the
//! diversity feature map.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::autodiff::checkpoint::{save_checkpoint, CheckpointError};
use crate::autodiff::optim::{Adam, AdamConfig};
use crate::autodiff::{Mat, ParamId, ParamSet, Tape, TapeError};
use crate::context::PartnerHistory;
use crate::dpp::{DppConfig, DppModel};
use crate::env::{Action, CookGrid, StepEvents, ACTION_COUNT, POT_CAPACITY};
use crate::mop::{Mop, MopConfig};
use crate::snn::{sample_categorical, SanConfig, SanPolicy};

/// Which agent pair a run trains. The two baselines share one policy across
/// both seats; the full method pairs the ego policy with its partner model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Dnn,
    San,
    MopSan,
}

impl Method {
    pub fn tag(self) -> &'static str {
        match self {
            Method::Dnn => "dnn",
            Method::San => "san",
            Method::MopSan => "mop-san",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "dnn" => Some(Method::Dnn),
            "san" => Some(Method::San),
            "mop-san" => Some(Method::MopSan),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub gamma: f64,
    pub lr: f64,
    pub minibatch: usize,
    /// Weight of the diversity reward inside the mixture reward.
    pub beta: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub clip: f64,
    /// Generalized-advantage smoothing; 1 reduces to plain return minus
    /// baseline.
    pub gae_lambda: f64,
    pub epochs: usize,
    /// Rollouts between feature-map meta-updates.
    pub eta_period: usize,
    pub rollout_steps: usize,
    pub total_steps: u64,
    /// Environment steps between checkpoints; 0 writes only the final set.
    pub checkpoint_every: u64,
    pub seed: u64,
    /// Initial scale of the annealed event-shaping bonus folded into the
    /// extrinsic reward; 0 disables shaping.
    pub shaping: f64,
    /// Environment steps over which the shaping bonus anneals to zero.
    pub shaping_horizon: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            lr: 3e-4,
            minibatch: 64,
            beta: 0.5,
            entropy_coef: 0.01,
            value_coef: 0.5,
            clip: 0.2,
            gae_lambda: 0.95,
            epochs: 4,
            eta_period: 10,
            rollout_steps: 2048,
            total_steps: 100_000,
            checkpoint_every: 0,
            seed: 0,
            shaping: 1.0,
            shaping_horizon: 80_000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(TrainError::BadConfig(format!("gamma {} outside [0,1)", self.gamma)));
        }
        if self.beta < 0.0 {
            return Err(TrainError::BadConfig(format!("beta {} negative", self.beta)));
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return Err(TrainError::BadConfig(format!(
                "gae_lambda {} outside [0,1]",
                self.gae_lambda
            )));
        }
        if self.rollout_steps == 0 || self.rollout_steps > 2048 {
            return Err(TrainError::BadConfig(format!(
                "rollout length {} outside 1..=2048",
                self.rollout_steps
            )));
        }
        if self.minibatch == 0 || self.rollout_steps % self.minibatch != 0 {
            return Err(TrainError::BadConfig(format!(
                "minibatch {} must divide rollout length {}",
                self.minibatch, self.rollout_steps
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Tape(#[from] TapeError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("invalid training config: {0}")]
    BadConfig(String),
    #[error("non-finite loss in {context}; batch statistics: {stats}")]
    NonFiniteLoss { context: &'static str, stats: String },
}

/// One rollout of aligned per-timestep arrays for both seats.
#[derive(Debug, Clone, Default)]
pub struct RolloutBatch {
    pub obs1: Vec<Vec<f64>>,
    pub obs2: Vec<Vec<f64>>,
    /// Guidance distribution fed to the ego policy (zeros without a partner
    /// model).
    pub guidance: Vec<Vec<f64>>,
    pub act1: Vec<usize>,
    pub act2: Vec<usize>,
    pub logp1: Vec<f64>,
    pub logp2: Vec<f64>,
    pub r_ex: Vec<f64>,
    pub r_dpp: Vec<f64>,
    pub r_mix: Vec<f64>,
    pub value1: Vec<f64>,
    pub value2: Vec<f64>,
    pub ret_ex: Vec<f64>,
    pub ret_mix: Vec<f64>,
    pub adv_ex: Vec<f64>,
    pub adv_mix: Vec<f64>,
    pub done: Vec<bool>,
    /// Bank distributions per timestep (k rows of 6), empty without a
    /// partner model.
    pub bank_dists: Vec<Vec<Vec<f64>>>,
    pub personality: Vec<Vec<f64>>,
    pub noise: Vec<Option<Vec<f64>>>,
    /// Index of the first step of the episode each timestep belongs to.
    pub episode_start: Vec<usize>,
    /// Critic bootstrap at the truncation point (0 when the last step ended
    /// its episode).
    pub bootstrap_ex: f64,
    pub bootstrap_mix: f64,
    /// True environment scores of episodes completed within this rollout.
    pub env_scores: Vec<f64>,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.obs1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs1.is_empty()
    }

    /// Direct assertion of the reward-composition and return-recursion
    /// identities on every timestep.
    pub fn assert_invariants(&self, beta: f64, gamma: f64) {
        let n = self.len();
        assert!(n <= 2048, "rollout exceeds capacity");
        for t in 0..n {
            assert_eq!(
                self.r_mix[t],
                self.r_ex[t] + beta * self.r_dpp[t],
                "mixture reward must equal extrinsic plus weighted diversity at t={t}"
            );
            let (next_ex, next_mix) = if t + 1 < n {
                (self.ret_ex[t + 1], self.ret_mix[t + 1])
            } else {
                (self.bootstrap_ex, self.bootstrap_mix)
            };
            let cont = if self.done[t] { 0.0 } else { 1.0 };
            assert_eq!(
                self.ret_ex[t],
                self.r_ex[t] + gamma * next_ex * cont,
                "extrinsic return recursion violated at t={t}"
            );
            assert_eq!(
                self.ret_mix[t],
                self.r_mix[t] + gamma * next_mix * cont,
                "mixture return recursion violated at t={t}"
            );
        }
    }
}

/// Fills discounted returns (reset at episode boundaries, critic bootstrap at
/// truncation) and batch-normalized generalized advantages for both reward
/// streams. Returns stay plain discounted sums so the recursion identity
/// holds regardless of `lambda`; `lambda` = 1 makes the advantage exactly
/// return minus baseline.
pub fn compute_returns(batch: &mut RolloutBatch, gamma: f64, lambda: f64) {
    let n = batch.len();
    batch.ret_ex = vec![0.0; n];
    batch.ret_mix = vec![0.0; n];
    let mut gae_ex = vec![0.0; n];
    let mut gae_mix = vec![0.0; n];
    let mut acc_ex = 0.0;
    let mut acc_mix = 0.0;
    for t in (0..n).rev() {
        let (next_ex, next_mix, next_v1, next_v2) = if t + 1 < n {
            (
                batch.ret_ex[t + 1],
                batch.ret_mix[t + 1],
                batch.value1[t + 1],
                batch.value2[t + 1],
            )
        } else {
            // The truncation bootstraps are the critics' own estimates, so
            // they serve as both next return and next value.
            (
                batch.bootstrap_ex,
                batch.bootstrap_mix,
                batch.bootstrap_ex,
                batch.bootstrap_mix,
            )
        };
        let cont = if batch.done[t] { 0.0 } else { 1.0 };
        batch.ret_ex[t] = batch.r_ex[t] + gamma * next_ex * cont;
        batch.ret_mix[t] = batch.r_mix[t] + gamma * next_mix * cont;
        let delta_ex = batch.r_ex[t] + gamma * next_v1 * cont - batch.value1[t];
        let delta_mix = batch.r_mix[t] + gamma * next_v2 * cont - batch.value2[t];
        acc_ex = delta_ex + gamma * lambda * cont * acc_ex;
        acc_mix = delta_mix + gamma * lambda * cont * acc_mix;
        gae_ex[t] = acc_ex;
        gae_mix[t] = acc_mix;
    }
    batch.adv_ex = normalize_batch(gae_ex);
    batch.adv_mix = normalize_batch(gae_mix);
}

fn normalize_batch(raw: Vec<f64>) -> Vec<f64> {
    let n = raw.len().max(1) as f64;
    let mean = raw.iter().sum::<f64>() / n;
    let var = raw.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-8);
    raw.into_iter().map(|x| (x - mean) / std).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct SanUpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub actor_grad_norm: f64,
    pub critic_grad_norm: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MopUpdateStats {
    pub loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub enc_grad_norm: f64,
    pub est_grad_norm: f64,
    pub bank_grad_norm: f64,
    pub critic_grad_norm: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EtaUpdateStats {
    pub meta_grad_norm: f64,
    pub kept: usize,
    pub dropped: usize,
    pub mean_ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainSummary {
    pub env_steps: u64,
    pub rollouts: u64,
    pub episodes: usize,
    pub mean_ep_reward_last_rollout: Option<f64>,
}

#[derive(Serialize)]
struct MetricsRecord<'a> {
    step: u64,
    rollout: u64,
    mean_ep_reward: Option<f64>,
    episodes: usize,
    entropy: f64,
    dpp_reward_mean: f64,
    policy_loss: f64,
    value_loss: f64,
    mop_loss: Option<f64>,
    mop_value_loss: Option<f64>,
    mop_entropy: Option<f64>,
    meta_grad_norm: Option<f64>,
    personality_usage: &'a [f64],
}

pub struct Trainer {
    pub cfg: TrainConfig,
    pub method: Method,
    pub env: CookGrid,
    pub san: SanPolicy,
    pub mop: Option<Mop>,
    pub dpp: Option<DppModel>,
    san_optim: Adam,
    mop_optim: Option<Adam>,
    dpp_optim: Option<Adam>,
    rng: ChaCha8Rng,
    env_steps: u64,
    rollouts: u64,
    episodes: usize,
    phi_snapshot: Option<ParamSet>,
}

impl Trainer {
    /// Default network shapes: ego input is the observation concatenated
    /// with a 6-entry guidance slot (zeroed for the baselines), partner
    /// model and diversity map only for the full method.
    pub fn new(
        env: CookGrid,
        method: Method,
        cfg: TrainConfig,
        mop_cfg: Option<MopConfig>,
        dpp_cfg: Option<DppConfig>,
    ) -> Result<Self, TrainError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let san_cfg = SanConfig::new(env.obs_dim() + ACTION_COUNT, method != Method::Dnn);
        let san = SanPolicy::new(san_cfg, &mut rng)?;
        let (mop, dpp) = if method == Method::MopSan {
            let mc = mop_cfg.unwrap_or_else(|| MopConfig::new(env.obs_dim(), 5));
            let mop = Mop::init(mc, &mut rng)?;
            let dpp = match dpp_cfg {
                Some(dc) => Some(DppModel::init(dc, &mut rng)?),
                None => None,
            };
            (Some(mop), dpp)
        } else {
            (None, None)
        };
        Self::with_components(env, method, cfg, san, mop, dpp)
    }

    pub fn with_components(
        env: CookGrid,
        method: Method,
        cfg: TrainConfig,
        san: SanPolicy,
        mop: Option<Mop>,
        dpp: Option<DppModel>,
    ) -> Result<Self, TrainError> {
        cfg.validate()?;
        if san.cfg.obs_dim != env.obs_dim() + ACTION_COUNT {
            return Err(TrainError::BadConfig(format!(
                "ego input dim {} != observation {} + guidance {}",
                san.cfg.obs_dim,
                env.obs_dim(),
                ACTION_COUNT
            )));
        }
        if let Some(m) = &mop {
            if m.cfg.obs_dim != env.obs_dim() {
                return Err(TrainError::BadConfig(format!(
                    "partner-model obs dim {} != environment {}",
                    m.cfg.obs_dim,
                    env.obs_dim()
                )));
            }
        }
        if method == Method::MopSan && mop.is_none() {
            return Err(TrainError::BadConfig(
                "full method requires a partner model".to_string(),
            ));
        }
        if let (Some(d), Some(m)) = (&dpp, &mop) {
            if d.cfg.feature_dim < m.cfg.personalities {
                return Err(TrainError::BadConfig(format!(
                    "feature dim {} below personality count {}",
                    d.cfg.feature_dim, m.cfg.personalities
                )));
            }
        }
        let adam = AdamConfig { lr: cfg.lr, ..AdamConfig::default() };
        let san_optim = Adam::new(adam.clone(), &san.params);
        let mop_optim = mop.as_ref().map(|m| Adam::new(adam.clone(), &m.params));
        let dpp_optim = dpp.as_ref().map(|d| Adam::new(adam, &d.params));
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x9E37_79B9));
        Ok(Self {
            cfg,
            method,
            env,
            san,
            mop,
            dpp,
            san_optim,
            mop_optim,
            dpp_optim,
            rng,
            env_steps: 0,
            rollouts: 0,
            episodes: 0,
            phi_snapshot: None,
        })
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    fn shaping_scale(&self) -> f64 {
        if self.cfg.shaping == 0.0 || self.cfg.shaping_horizon == 0 {
            return 0.0;
        }
        let frac = self.env_steps as f64 / self.cfg.shaping_horizon as f64;
        self.cfg.shaping * (1.0 - frac).max(0.0)
    }

    /// Event bonus for progress along the soup pipeline. Dish pickups count
    /// only while the pot is full, otherwise shuttling dishes between the
    /// dispenser and a counter would farm the bonus forever.
    fn shaping_bonus(events: &StepEvents, dish_useful: bool) -> f64 {
        let both = |xs: [u8; 2]| (xs[0] + xs[1]) as f64;
        let dish = if dish_useful { both(events.dishes_taken) } else { 0.0 };
        3.0 * both(events.onions_potted) + dish + 5.0 * both(events.soups_scooped)
    }

    /// Runs the pair for `steps` environment steps, resetting on episode
    /// end. Every rollout starts a fresh episode so partner histories are
    /// fully reconstructible from the batch.
    pub fn collect_rollout(&mut self, steps: usize) -> Result<RolloutBatch, TrainError> {
        let mut batch = RolloutBatch::default();
        let mut state = self.env.reset();
        let mut history = PartnerHistory::new(
            self.mop.as_ref().map_or(0, |m| m.cfg.context.capacity),
        );
        let mut episode_start = 0usize;
        let mut episode_score = 0.0f64;
        for _ in 0..steps {
            let o1 = self.env.featurize(&state, 0);
            let o2 = self.env.featurize(&state, 1);
            let (guidance, partner, personality, noise, bank) = match &self.mop {
                Some(mop) => {
                    let d = mop.decide(&o1, &o2, &history, &mut self.rng)?;
                    (d.guidance, Some(d.partner_probs), d.personality, d.noise, d.bank_own)
                }
                None => (vec![0.0; ACTION_COUNT], None, Vec::new(), None, Vec::new()),
            };
            let in1 = concat_obs(&o1, &guidance);
            let (probs1, v1) = self.san.evaluate(&in1)?;
            let a1 = sample_categorical(&probs1, &mut self.rng);
            let logp1 = probs1[a1].max(1e-12).ln();
            let (a2, logp2, v2) = match (&partner, &self.mop) {
                (Some(p2), Some(mop)) => {
                    let a2 = sample_categorical(p2, &mut self.rng);
                    (a2, p2[a2].max(1e-12).ln(), mop.value(&o2))
                }
                _ => {
                    // Self-play: the same policy plays the second seat with
                    // a zero guidance slot.
                    let in2 = concat_obs(&o2, &vec![0.0; ACTION_COUNT]);
                    let (probs2, v2) = self.san.evaluate(&in2)?;
                    let a2 = sample_categorical(&probs2, &mut self.rng);
                    (a2, probs2[a2].max(1e-12).ln(), v2)
                }
            };
            let act = |i: usize| Action::from_index(i).expect("sampled action index in range");
            let (next, r_env, done, events) = self.env.step(&state, [act(a1), act(a2)]);
            let dish_useful = next.pot.onions == POT_CAPACITY;
            let r_ex = r_env + self.shaping_scale() * Self::shaping_bonus(&events, dish_useful);
            let r_dpp = match (&self.dpp, bank.is_empty()) {
                (Some(d), false) if self.cfg.beta != 0.0 => d.reward(&bank)?,
                _ => 0.0,
            };
            let r_mix = r_ex + self.cfg.beta * r_dpp;

            batch.obs1.push(o1);
            batch.obs2.push(o2.clone());
            batch.guidance.push(guidance);
            batch.act1.push(a1);
            batch.act2.push(a2);
            batch.logp1.push(logp1);
            batch.logp2.push(logp2);
            batch.r_ex.push(r_ex);
            batch.r_dpp.push(r_dpp);
            batch.r_mix.push(r_mix);
            batch.value1.push(v1);
            batch.value2.push(v2);
            batch.done.push(done);
            batch.bank_dists.push(bank);
            batch.personality.push(personality);
            batch.noise.push(noise);
            batch.episode_start.push(episode_start);

            history.push(o2, a2);
            episode_score += r_env;
            self.env_steps += 1;
            if done {
                batch.env_scores.push(episode_score);
                self.episodes += 1;
                episode_score = 0.0;
                state = self.env.reset();
                history.clear();
                episode_start = batch.len();
            } else {
                state = next;
            }
        }
        // Critic bootstrap at the truncation point.
        if let Some(last_done) = batch.done.last() {
            if !last_done {
                let o1 = self.env.featurize(&state, 0);
                let o2 = self.env.featurize(&state, 1);
                let (g, v2) = match &self.mop {
                    Some(mop) => (mop.guide(&o1, &history)?, mop.value(&o2)),
                    None => {
                        let in2 = concat_obs(&o2, &vec![0.0; ACTION_COUNT]);
                        let (_, v2) = self.san.evaluate(&in2)?;
                        (vec![0.0; ACTION_COUNT], v2)
                    }
                };
                let in1 = concat_obs(&o1, &g);
                let (_, v1) = self.san.evaluate(&in1)?;
                batch.bootstrap_ex = v1;
                batch.bootstrap_mix = v2;
            }
        }
        Ok(batch)
    }

    /// Clipped-surrogate update of the ego policy on extrinsic advantages;
    /// the critic regresses to the extrinsic return. Baselines fold both
    /// seats' transitions into the update since one policy plays both.
    pub fn update_san(&mut self, batch: &RolloutBatch) -> Result<SanUpdateStats, TrainError> {
        let n = batch.len();
        validate_finite("ego update", &[&batch.adv_ex, &batch.ret_ex, &batch.logp1])?;
        let dual_seat = self.method != Method::MopSan;
        if dual_seat {
            validate_finite("ego update", &[&batch.adv_mix, &batch.ret_mix, &batch.logp2])?;
        }
        let zero_guidance = vec![0.0; ACTION_COUNT];
        let mut inputs: Vec<Vec<f64>> = Vec::with_capacity(if dual_seat { 2 * n } else { n });
        let mut acts: Vec<usize> = Vec::with_capacity(inputs.capacity());
        let mut old_logp: Vec<f64> = Vec::with_capacity(inputs.capacity());
        let mut adv: Vec<f64> = Vec::with_capacity(inputs.capacity());
        let mut ret: Vec<f64> = Vec::with_capacity(inputs.capacity());
        for t in 0..n {
            inputs.push(concat_obs(&batch.obs1[t], &batch.guidance[t]));
            acts.push(batch.act1[t]);
            old_logp.push(batch.logp1[t]);
            adv.push(batch.adv_ex[t]);
            ret.push(batch.ret_ex[t]);
        }
        if dual_seat {
            for t in 0..n {
                inputs.push(concat_obs(&batch.obs2[t], &zero_guidance));
                acts.push(batch.act2[t]);
                old_logp.push(batch.logp2[t]);
                adv.push(batch.adv_mix[t]);
                ret.push(batch.ret_ex[t]);
            }
        }

        let mut indices: Vec<usize> = (0..inputs.len()).collect();
        let mut acc = StatsAcc::default();
        for _ in 0..self.cfg.epochs {
            indices.shuffle(&mut self.rng);
            for chunk in indices.chunks(self.cfg.minibatch) {
                let m = chunk.len();
                let in_mat = gather_rows_host(&inputs, chunk);
                let onehot = onehot_rows(&acts, chunk, ACTION_COUNT);
                let old_lp = column(&old_logp, chunk);
                let adv_col = column(&adv, chunk);
                let ret_col = column(&ret, chunk);

                let mut t = Tape::new();
                let x = t.leaf(in_mat);
                let probs = self.san.probs(&mut t, &self.san.params, x)?;
                let lp_all = t.ln_clamped(probs, 1e-12)?;
                let oh = t.leaf(onehot);
                let sel = t.mul(lp_all, oh)?;
                let logp = t.row_sum(sel)?;
                let old_lp_node = t.leaf(old_lp);
                let diff = t.sub(logp, old_lp_node)?;
                let ratio = t.exp(diff)?;
                let adv_node = t.leaf(adv_col);
                let s1 = t.mul(ratio, adv_node)?;
                let clipped = t.clamp(ratio, 1.0 - self.cfg.clip, 1.0 + self.cfg.clip)?;
                let s2 = t.mul(clipped, adv_node)?;
                let surrogate = t.min_elem(s1, s2)?;
                let surrogate_mean = t.mean_all(surrogate)?;
                let policy_loss = t.scale(surrogate_mean, -1.0)?;
                let plogp = t.mul(probs, lp_all)?;
                let ent_rows = t.row_sum(plogp)?;
                let neg_entropy = t.mean_all(ent_rows)?;
                let ent_term = t.scale(neg_entropy, self.cfg.entropy_coef)?;
                let v = self.san.value(&mut t, &self.san.params, x)?;
                let ret_node = t.leaf(ret_col);
                let vloss = t.mean_sq_diff(v, ret_node)?;
                let v_term = t.scale(vloss, self.cfg.value_coef)?;
                let partial = t.add(policy_loss, ent_term)?;
                let loss = t.add(partial, v_term)?;

                let loss_val = t.value(loss)[[0, 0]];
                if !loss_val.is_finite() {
                    return Err(TrainError::NonFiniteLoss {
                        context: "ego update",
                        stats: batch_stats(&adv, &ret, &old_logp),
                    });
                }
                t.backward(loss, &mut self.san.params)?;
                let actor_norm = grad_norm(&self.san.params, &self.san.actor_param_ids());
                let critic_norm = grad_norm(&self.san.params, &self.san.critic_param_ids());
                self.san_optim.step(&mut self.san.params);
                acc.push(&[
                    t.value(policy_loss)[[0, 0]],
                    t.value(vloss)[[0, 0]],
                    -t.value(neg_entropy)[[0, 0]],
                    actor_norm,
                    critic_norm,
                ]);
                let _ = m;
            }
        }
        let means = acc.means(5);
        Ok(SanUpdateStats {
            policy_loss: means[0],
            value_loss: means[1],
            entropy: means[2],
            actor_grad_norm: means[3],
            critic_grad_norm: means[4],
        })
    }

    /// Policy-gradient update of the partner model on mixture advantages via
    /// the log-likelihood of its taken actions, replaying the stored profile
    /// noise; its critic regresses to the mixture return.
    pub fn update_mop(&mut self, batch: &RolloutBatch) -> Result<MopUpdateStats, TrainError> {
        let mop = self.mop.as_ref().expect("partner update requires the partner model");
        let capacity = mop.cfg.context.capacity;
        let k = mop.cfg.personalities;
        let n = batch.len();
        validate_finite("partner update", &[&batch.adv_mix, &batch.ret_mix, &batch.logp2])?;

        let mut indices: Vec<usize> = (0..n).collect();
        let mut acc = StatsAcc::default();
        for _ in 0..self.cfg.epochs {
            indices.shuffle(&mut self.rng);
            for chunk in indices.chunks(self.cfg.minibatch) {
                let m = chunk.len();
                let histories: Vec<PartnerHistory> =
                    chunk.iter().map(|&t| history_at(batch, t, capacity)).collect();
                let obs_mat = gather_rows_host(&batch.obs2, chunk);
                let onehot = onehot_rows(&batch.act2, chunk, ACTION_COUNT);
                let old_lp = column(&batch.logp2, chunk);
                let adv_col = column(&batch.adv_mix, chunk);
                let ret_col = column(&batch.ret_mix, chunk);
                let noise_mat = stacked_noise(batch, chunk, k);

                let mop = self.mop.as_ref().expect("checked above");
                let mut t = Tape::new();
                let ctx = mop.embed(&mut t, &mop.params, &histories)?;
                let p = mop.personality(&mut t, &mop.params, ctx, noise_mat.as_ref())?;
                let o = t.leaf(obs_mat);
                let mix = mop.mixture(&mut t, &mop.params, p, o)?;
                let lp_all = t.ln_clamped(mix, 1e-12)?;
                let oh = t.leaf(onehot);
                let sel = t.mul(lp_all, oh)?;
                let logp = t.row_sum(sel)?;
                let old_lp_node = t.leaf(old_lp);
                let diff = t.sub(logp, old_lp_node)?;
                let ratio = t.exp(diff)?;
                let adv_node = t.leaf(adv_col);
                let s1 = t.mul(ratio, adv_node)?;
                let clipped = t.clamp(ratio, 1.0 - self.cfg.clip, 1.0 + self.cfg.clip)?;
                let s2 = t.mul(clipped, adv_node)?;
                let surrogate = t.min_elem(s1, s2)?;
                let surrogate_mean = t.mean_all(surrogate)?;
                let policy_loss = t.scale(surrogate_mean, -1.0)?;
                let plogp = t.mul(mix, lp_all)?;
                let ent_rows = t.row_sum(plogp)?;
                let neg_entropy = t.mean_all(ent_rows)?;
                let ent_term = t.scale(neg_entropy, self.cfg.entropy_coef)?;
                let v = mop.value_graph(&mut t, &mop.params, o)?;
                let ret_node = t.leaf(ret_col);
                let vloss = t.mean_sq_diff(v, ret_node)?;
                let v_term = t.scale(vloss, self.cfg.value_coef)?;
                let partial = t.add(policy_loss, ent_term)?;
                let loss = t.add(partial, v_term)?;

                let loss_val = t.value(loss)[[0, 0]];
                if !loss_val.is_finite() {
                    return Err(TrainError::NonFiniteLoss {
                        context: "partner update",
                        stats: batch_stats(&batch.adv_mix, &batch.ret_mix, &batch.logp2),
                    });
                }
                let policy_loss_val = t.value(policy_loss)[[0, 0]];
                let vloss_val = t.value(vloss)[[0, 0]];
                let ent_val = -t.value(neg_entropy)[[0, 0]];
                let mop = self.mop.as_mut().expect("checked above");
                t.backward(loss, &mut mop.params)?;
                let enc_norm = grad_norm(&mop.params, &mop.params.ids_with_prefix("enc."));
                let est_norm = grad_norm(&mop.params, &mop.params.ids_with_prefix("est."));
                let bank_norm = grad_norm(&mop.params, &mop.params.ids_with_prefix("bank."));
                let critic_norm = grad_norm(&mop.params, &mop.params.ids_with_prefix("critic2."));
                self.mop_optim
                    .as_mut()
                    .expect("optimizer exists with model")
                    .step(&mut mop.params);
                acc.push(&[policy_loss_val, vloss_val, ent_val, enc_norm, est_norm, bank_norm, critic_norm]);
                let _ = m;
            }
        }
        let means = acc.means(7);
        Ok(MopUpdateStats {
            loss: means[0],
            value_loss: means[1],
            entropy: means[2],
            enc_grad_norm: means[3],
            est_grad_norm: means[4],
            bank_grad_norm: means[5],
            critic_grad_norm: means[6],
        })
    }

    /// One meta-gradient step on the diversity feature map. Per sampled
    /// timestep the contribution is
    /// ratio_t * G^mix_t * <grad_phi' log m, grad_phi log m> * D_t, where
    /// D_t is the discounted, episode-truncated suffix sum of the diversity
    /// reward's feature-map gradients, scaled by the inner learning rate and
    /// the diversity weight. Importance ratios outside [e^-5, e^5] drop the
    /// sample.
    pub fn update_dpp_eta(
        &mut self,
        batch: &RolloutBatch,
        phi_old: &ParamSet,
        max_samples: usize,
    ) -> Result<EtaUpdateStats, TrainError> {
        let inert = EtaUpdateStats { meta_grad_norm: 0.0, kept: 0, dropped: 0, mean_ratio: 1.0 };
        if self.cfg.beta == 0.0 {
            return Ok(inert);
        }
        let (Some(mop), Some(dpp)) = (&mut self.mop, &mut self.dpp) else {
            return Ok(inert);
        };
        let n = batch.len();
        if n == 0 {
            return Ok(inert);
        }
        let eta_ids = dpp.ids();
        let eta_len = dpp.params.flat_len(&eta_ids);
        let capacity = mop.cfg.context.capacity;
        let k = mop.cfg.personalities;

        // Discounted suffix sums of the per-step feature-map gradients.
        let mut step_grads: Vec<Vec<f64>> = Vec::with_capacity(n);
        for t in 0..n {
            if batch.bank_dists[t].is_empty() {
                step_grads.push(vec![0.0; eta_len]);
                continue;
            }
            let stacked = stack_dists(&batch.bank_dists[t]);
            let mut tape = Tape::new();
            let d = tape.leaf(stacked);
            let r = dpp.reward_graph(&mut tape, &dpp.params, d)?;
            dpp.params.zero_grads();
            tape.backward(r, &mut dpp.params)?;
            let mut flat = Vec::with_capacity(eta_len);
            dpp.params.flatten_grads(&eta_ids, &mut flat);
            step_grads.push(flat);
        }
        dpp.params.zero_grads();
        let mut suffix = vec![0.0; eta_len];
        let mut suffixes: Vec<Vec<f64>> = vec![Vec::new(); n];
        for t in (0..n).rev() {
            if batch.done[t] {
                suffix.iter_mut().for_each(|x| *x = 0.0);
            } else {
                suffix.iter_mut().for_each(|x| *x *= self.cfg.gamma);
            }
            for (s, g) in suffix.iter_mut().zip(&step_grads[t]) {
                *s += g;
            }
            suffixes[t] = suffix.clone();
        }

        let phi_ids = mop.phi_ids();
        let mut sample: Vec<usize> = (0..n).collect();
        sample.shuffle(&mut self.rng);
        sample.truncate(max_samples.min(n));

        let mut new_set = mop.params.clone();
        let mut old_set = phi_old.clone();
        let mut meta = vec![0.0; eta_len];
        let mut kept = 0usize;
        let mut dropped = 0usize;
        let mut ratio_sum = 0.0f64;
        let bound = 5.0f64.exp();
        for &t in &sample {
            let hist = history_at(batch, t, capacity);
            let noise_mat = batch.noise[t].as_ref().map(|v| {
                Array2::from_shape_vec((1, k), v.clone()).expect("stored noise shape")
            });
            let (logp_new, g_new) = partner_logp_grad(
                mop, &mut new_set, &hist, &batch.obs2[t], batch.act2[t],
                noise_mat.as_ref(), &phi_ids,
            )?;
            let ratio = (logp_new - batch.logp2[t]).exp();
            if !(ratio >= 1.0 / bound && ratio <= bound) {
                dropped += 1;
                continue;
            }
            let (_, g_old) = partner_logp_grad(
                mop, &mut old_set, &hist, &batch.obs2[t], batch.act2[t],
                noise_mat.as_ref(), &phi_ids,
            )?;
            let dot: f64 = g_new.iter().zip(&g_old).map(|(a, b)| a * b).sum();
            let w = ratio * batch.ret_mix[t] * dot;
            for (m, d) in meta.iter_mut().zip(&suffixes[t]) {
                *m += w * d;
            }
            ratio_sum += ratio;
            kept += 1;
        }
        if kept == 0 {
            return Ok(EtaUpdateStats { meta_grad_norm: 0.0, kept, dropped, mean_ratio: 1.0 });
        }
        let scale = self.cfg.lr * self.cfg.beta / kept as f64;
        let norm = meta.iter().map(|x| x * x).sum::<f64>().sqrt() * scale;
        // Ascend the meta-objective: hand the optimizer the negated gradient.
        dpp.params.zero_grads();
        let mut offset = 0usize;
        for id in &eta_ids {
            let shape = dpp.params.value(*id).raw_dim();
            let len = shape[0] * shape[1];
            let slice = &meta[offset..offset + len];
            let delta = Array2::from_shape_vec(shape, slice.iter().map(|x| -scale * x).collect())
                .expect("meta gradient shape");
            dpp.params.accumulate_grad(*id, &delta);
            offset += len;
        }
        self.dpp_optim
            .as_mut()
            .expect("optimizer exists with model")
            .step(&mut dpp.params);
        Ok(EtaUpdateStats {
            meta_grad_norm: norm,
            kept,
            dropped,
            mean_ratio: ratio_sum / kept as f64,
        })
    }

    /// Full training loop: per rollout one ego update and one partner
    /// update, a feature-map meta-step every `eta_period` rollouts,
    /// line-delimited metrics, and periodic checkpoints. The metrics stream
    /// is byte-reproducible for a fixed seed.
    pub fn train(&mut self, run_dir: &Path, config_snapshot: &str) -> Result<TrainSummary, TrainError> {
        fs::create_dir_all(run_dir)?;
        fs::write(run_dir.join("config.snapshot"), config_snapshot)?;
        let metrics_file = fs::File::create(run_dir.join("metrics.jsonl"))?;
        let mut metrics = std::io::BufWriter::new(metrics_file);
        let mut last_checkpoint = 0u64;
        let mut last_mean: Option<f64> = None;
        while self.env_steps < self.cfg.total_steps {
            let steps = self
                .cfg
                .rollout_steps
                .min((self.cfg.total_steps - self.env_steps) as usize);
            let mut batch = self.collect_rollout(steps)?;
            compute_returns(&mut batch, self.cfg.gamma, self.cfg.gae_lambda);
            batch.assert_invariants(self.cfg.beta, self.cfg.gamma);
            let san_stats = self.update_san(&batch)?;
            let meta_due = self.mop.is_some()
                && self.dpp.is_some()
                && self.cfg.eta_period > 0
                && (self.rollouts + 1) % self.cfg.eta_period as u64 == 0;
            if meta_due {
                self.phi_snapshot = Some(self.mop.as_ref().expect("partner model").params.clone());
            }
            let mop_stats = if self.mop.is_some() {
                Some(self.update_mop(&batch)?)
            } else {
                None
            };
            let eta_stats = if meta_due {
                let snapshot = self.phi_snapshot.take().expect("snapshot stored above");
                Some(self.update_dpp_eta(&batch, &snapshot, 256)?)
            } else {
                None
            };
            self.rollouts += 1;

            let mean_ep = if batch.env_scores.is_empty() {
                None
            } else {
                Some(batch.env_scores.iter().sum::<f64>() / batch.env_scores.len() as f64)
            };
            last_mean = mean_ep.or(last_mean);
            let usage = mean_personality(&batch.personality);
            let record = MetricsRecord {
                step: self.env_steps,
                rollout: self.rollouts,
                mean_ep_reward: mean_ep,
                episodes: batch.env_scores.len(),
                entropy: san_stats.entropy,
                dpp_reward_mean: mean_of(&batch.r_dpp),
                policy_loss: san_stats.policy_loss,
                value_loss: san_stats.value_loss,
                mop_loss: mop_stats.as_ref().map(|s| s.loss),
                mop_value_loss: mop_stats.as_ref().map(|s| s.value_loss),
                mop_entropy: mop_stats.as_ref().map(|s| s.entropy),
                meta_grad_norm: eta_stats.as_ref().map(|s| s.meta_grad_norm),
                personality_usage: &usage,
            };
            let line = serde_json::to_string(&record).expect("metrics serialize");
            writeln!(metrics, "{line}")?;
            metrics.flush()?;

            if self.cfg.checkpoint_every > 0
                && self.env_steps - last_checkpoint >= self.cfg.checkpoint_every
                && self.env_steps < self.cfg.total_steps
            {
                self.write_checkpoints(run_dir)?;
                last_checkpoint = self.env_steps;
            }
        }
        self.write_checkpoints(run_dir)?;
        Ok(TrainSummary {
            env_steps: self.env_steps,
            rollouts: self.rollouts,
            episodes: self.episodes,
            mean_ep_reward_last_rollout: last_mean,
        })
    }

    pub fn write_checkpoints(&self, run_dir: &Path) -> Result<(), TrainError> {
        let step = self.env_steps;
        save_checkpoint(
            &run_dir.join(format!("san-{step}.ckpt")),
            "san",
            &self.san.params,
            Some(&self.san_optim),
        )?;
        if let (Some(mop), Some(optim)) = (&self.mop, &self.mop_optim) {
            save_checkpoint(
                &run_dir.join(format!("mop-{step}.ckpt")),
                "mop",
                &mop.params,
                Some(optim),
            )?;
        }
        if let (Some(dpp), Some(optim)) = (&self.dpp, &self.dpp_optim) {
            save_checkpoint(
                &run_dir.join(format!("dpp-{step}.ckpt")),
                "dpp",
                &dpp.params,
                Some(optim),
            )?;
        }
        Ok(())
    }
}

/// Log-probability of the partner's taken action and its flattened gradient
/// over the given parameter ids, evaluated against `set`.
fn partner_logp_grad(
    mop: &Mop,
    set: &mut ParamSet,
    history: &PartnerHistory,
    obs: &[f64],
    action: usize,
    noise: Option<&Mat>,
    phi_ids: &[ParamId],
) -> Result<(f64, Vec<f64>), TapeError> {
    let mut t = Tape::new();
    let ctx = mop.embed(&mut t, set, std::slice::from_ref(history))?;
    let p = mop.personality(&mut t, set, ctx, noise)?;
    let o = t.leaf(Array2::from_shape_vec((1, obs.len()), obs.to_vec()).expect("obs row"));
    let mix = mop.mixture(&mut t, set, p, o)?;
    let lp_all = t.ln_clamped(mix, 1e-12)?;
    let mut onehot = Array2::zeros((1, ACTION_COUNT));
    onehot[[0, action]] = 1.0;
    let oh = t.leaf(onehot);
    let sel = t.mul(lp_all, oh)?;
    let logp_node = t.row_sum(sel)?;
    let logp = t.value(logp_node)[[0, 0]];
    set.zero_grads();
    t.backward(logp_node, set)?;
    let mut flat = Vec::with_capacity(set.flat_len(phi_ids));
    set.flatten_grads(phi_ids, &mut flat);
    set.zero_grads();
    Ok((logp, flat))
}

/// Partner history visible at step `t`: the most recent pairs of the episode
/// containing `t`, all drawn from the batch itself.
fn history_at(batch: &RolloutBatch, t: usize, capacity: usize) -> PartnerHistory {
    let mut h = PartnerHistory::new(capacity);
    let start = batch.episode_start[t];
    let from = t.saturating_sub(capacity).max(start);
    for j in from..t {
        h.push(batch.obs2[j].clone(), batch.act2[j]);
    }
    h
}

pub(crate) fn concat_obs(obs: &[f64], guidance: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(obs.len() + guidance.len());
    v.extend_from_slice(obs);
    v.extend_from_slice(guidance);
    v
}

fn gather_rows_host(rows: &[Vec<f64>], idx: &[usize]) -> Mat {
    let cols = rows[idx[0]].len();
    let mut m = Array2::zeros((idx.len(), cols));
    for (r, &i) in idx.iter().enumerate() {
        for (c, x) in rows[i].iter().enumerate() {
            m[[r, c]] = *x;
        }
    }
    m
}

fn onehot_rows(acts: &[usize], idx: &[usize], width: usize) -> Mat {
    let mut m = Array2::zeros((idx.len(), width));
    for (r, &i) in idx.iter().enumerate() {
        m[[r, acts[i]]] = 1.0;
    }
    m
}

fn column(xs: &[f64], idx: &[usize]) -> Mat {
    let mut m = Array2::zeros((idx.len(), 1));
    for (r, &i) in idx.iter().enumerate() {
        m[[r, 0]] = xs[i];
    }
    m
}

fn stacked_noise(batch: &RolloutBatch, idx: &[usize], k: usize) -> Option<Mat> {
    let any = idx.iter().any(|&i| batch.noise[i].is_some());
    if !any {
        return None;
    }
    let mut m = Array2::zeros((idx.len(), k));
    for (r, &i) in idx.iter().enumerate() {
        if let Some(draws) = &batch.noise[i] {
            for (c, x) in draws.iter().enumerate() {
                m[[r, c]] = *x;
            }
        }
    }
    Some(m)
}

fn stack_dists(dists: &[Vec<f64>]) -> Mat {
    let cols = dists[0].len();
    let mut m = Array2::zeros((dists.len(), cols));
    for (r, d) in dists.iter().enumerate() {
        for (c, x) in d.iter().enumerate() {
            m[[r, c]] = *x;
        }
    }
    m
}

fn grad_norm(set: &ParamSet, ids: &[ParamId]) -> f64 {
    let mut flat = Vec::with_capacity(set.flat_len(ids));
    set.flatten_grads(ids, &mut flat);
    flat.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn mean_of(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

fn mean_personality(profiles: &[Vec<f64>]) -> Vec<f64> {
    let Some(first) = profiles.iter().find(|p| !p.is_empty()) else {
        return Vec::new();
    };
    let k = first.len();
    let mut usage = vec![0.0; k];
    let mut count = 0usize;
    for p in profiles {
        if p.is_empty() {
            continue;
        }
        for (u, x) in usage.iter_mut().zip(p) {
            *u += x;
        }
        count += 1;
    }
    if count > 0 {
        for u in &mut usage {
            *u /= count as f64;
        }
    }
    usage
}

fn validate_finite(context: &'static str, arrays: &[&Vec<f64>]) -> Result<(), TrainError> {
    for arr in arrays {
        if arr.iter().any(|x| !x.is_finite()) {
            return Err(TrainError::NonFiniteLoss {
                context,
                stats: arrays
                    .iter()
                    .map(|a| summarize(a))
                    .collect::<Vec<_>>()
                    .join("; "),
            });
        }
    }
    Ok(())
}

fn summarize(xs: &[f64]) -> String {
    let finite: Vec<f64> = xs.iter().copied().filter(|x| x.is_finite()).collect();
    let bad = xs.len() - finite.len();
    if finite.is_empty() {
        return format!("len={} all-nonfinite", xs.len());
    }
    let mean = finite.iter().sum::<f64>() / finite.len() as f64;
    let min = finite.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = finite.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    format!("len={} nonfinite={} mean={mean:.4} min={min:.4} max={max:.4}", xs.len(), bad)
}

fn batch_stats(adv: &[f64], ret: &[f64], logp: &[f64]) -> String {
    format!(
        "advantages[{}]; returns[{}]; logp[{}]",
        summarize(adv),
        summarize(ret),
        summarize(logp)
    )
}

#[derive(Default)]
struct StatsAcc {
    sums: Vec<f64>,
    count: usize,
}

impl StatsAcc {
    fn push(&mut self, vals: &[f64]) {
        if self.sums.is_empty() {
            self.sums = vec![0.0; vals.len()];
        }
        for (s, v) in self.sums.iter_mut().zip(vals) {
            *s += v;
        }
        self.count += 1;
    }

    fn means(&self, width: usize) -> Vec<f64> {
        if self.count == 0 {
            return vec![0.0; width];
        }
        self.sums.iter().map(|s| s / self.count as f64).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::checkpoint::load_checkpoint;

    fn tiny_mop_cfg(obs_dim: usize, k: usize, capacity: usize) -> MopConfig {
        let mut cfg = MopConfig::new(obs_dim, capacity).with_personalities(k);
        cfg.hidden = 16;
        cfg.context.model_dim = 16;
        cfg.context.head_dim = 8;
        cfg.context.ff_dim = 24;
        cfg
    }

    fn tiny_dpp_cfg(k: usize) -> DppConfig {
        DppConfig { feature_dim: k.max(4), hidden: 12, ..DppConfig::default() }
    }

    fn tiny_trainer(method: Method, cfg: TrainConfig) -> Trainer {
        let env = CookGrid::default_kitchen();
        let obs = env.obs_dim();
        let (mop_cfg, dpp_cfg) = if method == Method::MopSan {
            (Some(tiny_mop_cfg(obs, 3, 2)), Some(tiny_dpp_cfg(3)))
        } else {
            (None, None)
        };
        Trainer::new(env, method, cfg, mop_cfg, dpp_cfg).unwrap()
    }

    fn synthetic_ex_batch(rewards: &[f64], dones: &[bool]) -> RolloutBatch {
        let n = rewards.len();
        RolloutBatch {
            r_ex: rewards.to_vec(),
            r_dpp: vec![0.0; n],
            r_mix: rewards.to_vec(),
            value1: vec![0.0; n],
            value2: vec![0.0; n],
            done: dones.to_vec(),
            obs1: vec![vec![0.0]; n],
            ..RolloutBatch::default()
        }
    }

    #[test]
    fn returns_match_hand_computed_discounts() {
        let mut b = synthetic_ex_batch(&[0.0, 0.0, 20.0], &[false, false, true]);
        compute_returns(&mut b, 0.99, 1.0);
        assert!((b.ret_ex[0] - 19.602).abs() < 1e-12);
        assert!((b.ret_ex[1] - 19.8).abs() < 1e-12);
        assert!((b.ret_ex[2] - 20.0).abs() < 1e-12);

        let mut b = synthetic_ex_batch(&[1.0, 2.0, 3.0], &[false, false, true]);
        compute_returns(&mut b, 0.0, 1.0);
        assert_eq!(b.ret_ex, vec![1.0, 2.0, 3.0]);

        // A boundary stops credit from flowing backward across episodes.
        let mut b = synthetic_ex_batch(&[0.0, 5.0, 100.0], &[false, true, true]);
        compute_returns(&mut b, 0.99, 1.0);
        assert!((b.ret_ex[0] - 4.95).abs() < 1e-12);
    }

    #[test]
    fn collected_batches_satisfy_reward_and_return_identities() {
        let cfg = TrainConfig {
            rollout_steps: 48,
            minibatch: 16,
            total_steps: 48,
            ..TrainConfig::default()
        };
        let mut tr = tiny_trainer(Method::MopSan, cfg);
        let mut batch = tr.collect_rollout(48).unwrap();
        compute_returns(&mut batch, tr.cfg.gamma, tr.cfg.gae_lambda);
        batch.assert_invariants(tr.cfg.beta, tr.cfg.gamma);
        assert_eq!(batch.len(), 48);
        assert!(batch.r_dpp.iter().any(|r| *r != 0.0), "diversity reward never fired");
    }

    #[test]
    fn zero_beta_collapses_mixture_to_extrinsic() {
        let cfg = TrainConfig {
            rollout_steps: 32,
            minibatch: 16,
            total_steps: 32,
            beta: 0.0,
            ..TrainConfig::default()
        };
        let mut tr = tiny_trainer(Method::MopSan, cfg);
        let batch = tr.collect_rollout(32).unwrap();
        assert_eq!(batch.r_mix, batch.r_ex);
        assert!(batch.r_dpp.iter().all(|r| *r == 0.0));
    }

    #[test]
    fn fixed_seed_collects_bit_identical_batches() {
        let cfg = TrainConfig {
            rollout_steps: 40,
            minibatch: 20,
            total_steps: 40,
            seed: 7,
            ..TrainConfig::default()
        };
        let mut a = tiny_trainer(Method::MopSan, cfg.clone());
        let mut b = tiny_trainer(Method::MopSan, cfg);
        let ba = a.collect_rollout(40).unwrap();
        let bb = b.collect_rollout(40).unwrap();
        assert_eq!(ba.obs1, bb.obs1);
        assert_eq!(ba.act1, bb.act1);
        assert_eq!(ba.act2, bb.act2);
        assert_eq!(ba.logp1, bb.logp1);
        assert_eq!(ba.logp2, bb.logp2);
        assert_eq!(ba.guidance, bb.guidance);
        assert_eq!(ba.r_mix, bb.r_mix);
        assert_eq!(ba.noise, bb.noise);
    }

    #[test]
    fn bandit_converges_to_the_paying_action() {
        let cfg = TrainConfig {
            gamma: 0.0,
            lr: 1e-2,
            minibatch: 64,
            rollout_steps: 64,
            epochs: 4,
            entropy_coef: 0.01,
            seed: 3,
            ..TrainConfig::default()
        };
        let mut tr = tiny_trainer(Method::MopSan, cfg);
        let obs_dim = tr.env.obs_dim();
        let obs: Vec<f64> = vec![0.3; obs_dim];
        let guidance = vec![0.0; ACTION_COUNT];
        let input = concat_obs(&obs, &guidance);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let (probs, v) = tr.san.evaluate(&input).unwrap();
            let mut b = RolloutBatch::default();
            for _ in 0..64 {
                let a = sample_categorical(&probs, &mut rng);
                let r = if a == 0 { 1.0 } else { 0.0 };
                b.obs1.push(obs.clone());
                b.guidance.push(guidance.clone());
                b.act1.push(a);
                b.logp1.push(probs[a].max(1e-12).ln());
                b.r_ex.push(r);
                b.r_dpp.push(0.0);
                b.r_mix.push(r);
                b.value1.push(v);
                b.value2.push(0.0);
                b.done.push(true);
                b.episode_start.push(0);
            }
            compute_returns(&mut b, 0.0, 1.0);
            tr.update_san(&b).unwrap();
        }
        let (probs, _) = tr.san.evaluate(&input).unwrap();
        assert!(
            probs[0] > 0.9,
            "bandit did not converge: P(paying action) = {}",
            probs[0]
        );
    }

    #[test]
    fn zero_advantages_leave_only_the_entropy_push() {
        let cfg = TrainConfig {
            gamma: 0.0,
            lr: 5e-3,
            minibatch: 32,
            rollout_steps: 32,
            epochs: 1,
            entropy_coef: 0.05,
            value_coef: 0.0,
            seed: 5,
            ..TrainConfig::default()
        };
        let mut tr = tiny_trainer(Method::MopSan, cfg);
        let obs_dim = tr.env.obs_dim();
        let obs: Vec<f64> = (0..obs_dim).map(|i| 0.2 + 0.01 * (i % 7) as f64).collect();
        let guidance = vec![0.0; ACTION_COUNT];
        let input = concat_obs(&obs, &guidance);
        let entropy_of = |probs: &[f64]| -> f64 {
            -probs.iter().filter(|p| **p > 0.0).map(|p| p * p.ln()).sum::<f64>()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        // Sharpen the policy first so there is room for entropy to recover.
        tr.cfg.entropy_coef = 0.0;
        for _ in 0..30 {
            let (probs, v) = tr.san.evaluate(&input).unwrap();
            let mut b = RolloutBatch::default();
            for _ in 0..32 {
                let a = sample_categorical(&probs, &mut rng);
                let r = if a == 0 { 1.0 } else { 0.0 };
                b.obs1.push(obs.clone());
                b.guidance.push(guidance.clone());
                b.act1.push(a);
                b.logp1.push(probs[a].max(1e-12).ln());
                b.r_ex.push(r);
                b.r_dpp.push(0.0);
                b.r_mix.push(r);
                b.value1.push(v);
                b.value2.push(0.0);
                b.done.push(true);
                b.episode_start.push(0);
            }
            compute_returns(&mut b, 0.0, 1.0);
            tr.update_san(&b).unwrap();
        }
        tr.cfg.entropy_coef = 0.05;
        // Drop the optimizer momentum accumulated while sharpening so the
        // second phase isolates the entropy bonus.
        tr.san_optim = Adam::new(
            AdamConfig { lr: tr.cfg.lr, ..AdamConfig::default() },
            &tr.san.params,
        );
        let (sharp_probs, v) = tr.san.evaluate(&input).unwrap();
        let before = entropy_of(&sharp_probs);
        assert!(before < 1.7, "policy never sharpened, entropy {before}");
        let mut b = RolloutBatch::default();
        for _ in 0..32 {
            let a = sample_categorical(&sharp_probs, &mut rng);
            // Returns equal the recorded value, so raw advantages vanish.
            b.obs1.push(obs.clone());
            b.guidance.push(guidance.clone());
            b.act1.push(a);
            b.logp1.push(sharp_probs[a].max(1e-12).ln());
            b.r_ex.push(v);
            b.r_dpp.push(0.0);
            b.r_mix.push(v);
            b.value1.push(v);
            b.value2.push(0.0);
            b.done.push(true);
            b.episode_start.push(0);
        }
        compute_returns(&mut b, 0.0, 1.0);
        assert!(b.adv_ex.iter().all(|a| *a == 0.0), "advantages should be exactly zero");
        for _ in 0..5 {
            tr.update_san(&b).unwrap();
        }
        let (after_probs, _) = tr.san.evaluate(&input).unwrap();
        let after = entropy_of(&after_probs);
        assert!(
            after > before,
            "entropy should rise under a pure entropy bonus: {before} -> {after}"
        );
    }

    #[test]
    fn positive_advantages_raise_partner_log_prob() {
        let cfg = TrainConfig {
            lr: 5e-3,
            minibatch: 16,
            rollout_steps: 16,
            epochs: 1,
            seed: 9,
            ..TrainConfig::default()
        };
        let mut tr = tiny_trainer(Method::MopSan, cfg);
        let mut batch = tr.collect_rollout(16).unwrap();
        compute_returns(&mut batch, tr.cfg.gamma, tr.cfg.gae_lambda);
        // Force uniformly positive advantages toward the taken actions.
        batch.adv_mix = vec![1.0; batch.len()];
        let mean_logp = |tr: &Trainer, batch: &RolloutBatch| -> f64 {
            let mop = tr.mop.as_ref().unwrap();
            let capacity = mop.cfg.context.capacity;
            let k = mop.cfg.personalities;
            let mut total = 0.0;
            for t in 0..batch.len() {
                let hist = history_at(batch, t, capacity);
                let noise = batch.noise[t].as_ref().map(|v| {
                    Array2::from_shape_vec((1, k), v.clone()).unwrap()
                });
                let mut tape = Tape::new();
                let ctx = mop.embed(&mut tape, &mop.params, std::slice::from_ref(&hist)).unwrap();
                let p = mop.personality(&mut tape, &mop.params, ctx, noise.as_ref()).unwrap();
                let o = tape.leaf(Array2::from_shape_vec((1, batch.obs2[t].len()), batch.obs2[t].clone()).unwrap());
                let mix = mop.mixture(&mut tape, &mop.params, p, o).unwrap();
                total += tape.value(mix)[[0, batch.act2[t]]].max(1e-12).ln();
            }
            total / batch.len() as f64
        };
        let before = mean_logp(&tr, &batch);
        tr.update_mop(&batch).unwrap();
        let after = mean_logp(&tr, &batch);
        assert!(
            after > before,
            "log-prob of rewarded actions should rise: {before} -> {after}"
        );
    }

    #[test]
    fn gradients_reach_every_partner_component() {
        let cfg = TrainConfig {
            minibatch: 16,
            rollout_steps: 16,
            epochs: 1,
            seed: 15,
            ..TrainConfig::default()
        };
        let mut tr = tiny_trainer(Method::MopSan, cfg);
        let mut batch = tr.collect_rollout(16).unwrap();
        compute_returns(&mut batch, tr.cfg.gamma, tr.cfg.gae_lambda);
        let stats = tr.update_mop(&batch).unwrap();
        assert!(stats.enc_grad_norm > 0.0, "context encoder got no gradient");
        assert!(stats.est_grad_norm > 0.0, "estimator got no gradient");
        assert!(stats.bank_grad_norm > 0.0, "personality bank got no gradient");
        assert!(stats.critic_grad_norm > 0.0, "partner critic got no gradient");
    }

    #[test]
    fn nonfinite_batch_is_rejected_with_diagnostics() {
        let cfg = TrainConfig {
            minibatch: 4,
            rollout_steps: 4,
            epochs: 1,
            ..TrainConfig::default()
        };
        let mut tr = tiny_trainer(Method::MopSan, cfg);
        let mut b = synthetic_ex_batch(&[1.0, 2.0, 3.0, 4.0], &[true, true, true, true]);
        for _ in 0..4 {
            b.guidance.push(vec![0.0; ACTION_COUNT]);
            b.act1.push(0);
            b.logp1.push(-1.0);
        }
        b.obs1 = vec![vec![0.1; tr.env.obs_dim()]; 4];
        compute_returns(&mut b, 0.0, 1.0);
        b.adv_ex[2] = f64::NAN;
        let err = tr.update_san(&b).unwrap_err();
        match err {
            TrainError::NonFiniteLoss { stats, .. } => {
                assert!(stats.contains("nonfinite=1"), "diagnostic missing: {stats}");
            }
            other => panic!("expected non-finite rejection, got {other}"),
        }
    }

    #[test]
    fn eta_update_is_inert_when_beta_is_zero() {
        let cfg = TrainConfig {
            beta: 0.0,
            minibatch: 16,
            rollout_steps: 16,
            epochs: 1,
            ..TrainConfig::default()
        };
        let mut tr = tiny_trainer(Method::MopSan, cfg);
        let mut batch = tr.collect_rollout(16).unwrap();
        compute_returns(&mut batch, tr.cfg.gamma, tr.cfg.gae_lambda);
        let before: Vec<Mat> = {
            let dpp = tr.dpp.as_ref().unwrap();
            dpp.ids().iter().map(|id| dpp.params.value(*id).clone()).collect()
        };
        let snapshot = tr.mop.as_ref().unwrap().params.clone();
        let stats = tr.update_dpp_eta(&batch, &snapshot, 64).unwrap();
        assert_eq!(stats.meta_grad_norm, 0.0);
        assert_eq!(stats.kept, 0);
        let dpp = tr.dpp.as_ref().unwrap();
        for (id, prev) in dpp.ids().iter().zip(&before) {
            assert_eq!(dpp.params.value(*id), prev, "feature map moved despite zero weight");
        }
    }

    #[test]
    fn unchanged_partner_gives_unit_ratios() {
        let cfg = TrainConfig {
            minibatch: 16,
            rollout_steps: 16,
            epochs: 1,
            seed: 21,
            ..TrainConfig::default()
        };
        let mut tr = tiny_trainer(Method::MopSan, cfg);
        let mut batch = tr.collect_rollout(16).unwrap();
        compute_returns(&mut batch, tr.cfg.gamma, tr.cfg.gae_lambda);
        let snapshot = tr.mop.as_ref().unwrap().params.clone();
        let stats = tr.update_dpp_eta(&batch, &snapshot, 16).unwrap();
        assert_eq!(stats.kept, 16);
        assert_eq!(stats.dropped, 0);
        assert!(
            (stats.mean_ratio - 1.0).abs() < 1e-9,
            "ratios should be exactly one without an inner update, got {}",
            stats.mean_ratio
        );
    }

    #[test]
    fn tiny_run_writes_metrics_checkpoints_and_snapshot() {
        let cfg = TrainConfig {
            rollout_steps: 32,
            minibatch: 16,
            total_steps: 64,
            epochs: 1,
            eta_period: 2,
            seed: 1,
            ..TrainConfig::default()
        };
        let mut tr = tiny_trainer(Method::MopSan, cfg);
        let dir = tempfile::tempdir().unwrap();
        let summary = tr.train(dir.path(), "demo=1\n").unwrap();
        assert_eq!(summary.env_steps, 64);
        assert_eq!(summary.rollouts, 2);
        assert!(dir.path().join("config.snapshot").exists());
        assert!(dir.path().join("san-64.ckpt").exists());
        assert!(dir.path().join("mop-64.ckpt").exists());
        assert!(dir.path().join("dpp-64.ckpt").exists());
        let metrics = fs::read_to_string(dir.path().join("metrics.jsonl")).unwrap();
        assert_eq!(metrics.lines().count(), 2);
        for line in metrics.lines() {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            assert!(v.get("step").is_some());
            assert!(v.get("mean_ep_reward").is_some());
            assert!(v.get("dpp_reward_mean").is_some());
        }
    }

    #[test]
    fn same_seed_training_reproduces_metrics_and_checkpoint_bytes() {
        let cfg = TrainConfig {
            rollout_steps: 32,
            minibatch: 16,
            total_steps: 64,
            epochs: 2,
            eta_period: 2,
            seed: 42,
            ..TrainConfig::default()
        };
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let mut a = tiny_trainer(Method::MopSan, cfg.clone());
        a.train(dir_a.path(), "x=1\n").unwrap();
        let mut b = tiny_trainer(Method::MopSan, cfg);
        b.train(dir_b.path(), "x=1\n").unwrap();
        let ma = fs::read(dir_a.path().join("metrics.jsonl")).unwrap();
        let mb = fs::read(dir_b.path().join("metrics.jsonl")).unwrap();
        assert_eq!(ma, mb, "metrics logs diverged under a fixed seed");
        let ca = fs::read(dir_a.path().join("san-64.ckpt")).unwrap();
        let cb = fs::read(dir_b.path().join("san-64.ckpt")).unwrap();
        assert_eq!(ca, cb, "checkpoints diverged under a fixed seed");
    }

    #[test]
    fn checkpoints_round_trip_bit_exact() {
        let cfg = TrainConfig {
            rollout_steps: 32,
            minibatch: 16,
            total_steps: 32,
            epochs: 1,
            seed: 33,
            ..TrainConfig::default()
        };
        let mut tr = tiny_trainer(Method::MopSan, cfg);
        let dir = tempfile::tempdir().unwrap();
        tr.train(dir.path(), "x=1\n").unwrap();
        let ck = load_checkpoint(&dir.path().join("san-32.ckpt")).unwrap();
        assert_eq!(ck.module, "san");
        for id in tr.san.params.ids() {
            let name = tr.san.params.name(id);
            let found = ck
                .entries
                .iter()
                .find(|(n, _)| n == name)
                .unwrap_or_else(|| panic!("missing parameter {name}"));
            assert_eq!(&found.1, tr.san.params.value(id), "mismatch in {name}");
        }
    }
}
