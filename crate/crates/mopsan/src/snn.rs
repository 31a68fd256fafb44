//! Spiking actor-critic policy.
//!
//! The actor runs two leaky integrate-and-fire layers for a fixed number of
//! internal time steps on a constant input current, then decodes the
//! time-averaged spike rate of the second layer through a linear softmax
//! readout. Spike thresholding uses a rectangular surrogate gradient, so the
//! whole policy trains with ordinary backprop. A non-spiking tanh variant
//! with identical parameter shapes serves as the dense baseline, and the
//! critic is always a tanh MLP.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Mat, NodeId, ParamId, ParamSet, SpikeMode, Tape, TapeError};

/// Leaky integrate-and-fire dynamics and surrogate settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LifConfig {
    /// Membrane time constant.
    pub tau: f64,
    /// Integration step size.
    pub dt: f64,
    /// Spike threshold.
    pub v_threshold: f64,
    /// Potential after a spike.
    pub v_reset: f64,
    /// Half-width of the rectangular surrogate window.
    pub surrogate_width: f64,
    /// Internal time steps per forward pass.
    pub steps: usize,
}

impl Default for LifConfig {
    fn default() -> Self {
        Self {
            tau: 2.0,
            dt: 1.0,
            v_threshold: 0.5,
            v_reset: 0.0,
            surrogate_width: 0.5,
            steps: 8,
        }
    }
}

impl LifConfig {
    /// Fraction of the old potential kept each step.
    pub fn decay(&self) -> f64 {
        1.0 - self.dt / self.tau
    }

    /// Weight applied to the input current each step.
    pub fn drive(&self) -> f64 {
        self.dt / self.tau
    }
}

/// One LIF update outside the autodiff graph: integrate, threshold, reset.
/// Returns the post-reset potentials and the binary spike matrix.
pub fn lif_step(v: &Mat, current: &Mat, cfg: &LifConfig) -> (Mat, Mat) {
    let mut v_pre = v * cfg.decay();
    v_pre.scaled_add(cfg.drive(), current);
    let spikes = v_pre.mapv(|x| if x >= cfg.v_threshold { 1.0 } else { 0.0 });
    let v_next = &v_pre * &spikes.mapv(|s| 1.0 - s) + spikes.mapv(|s| s * cfg.v_reset);
    (v_next, spikes)
}

#[derive(Clone, Copy, Debug)]
struct LayerIds {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
    w3: ParamId,
    b3: ParamId,
}

/// Architecture of the actor-critic pair.
#[derive(Clone, Copy, Debug)]
pub struct SanConfig {
    pub obs_dim: usize,
    pub hidden: [usize; 2],
    pub actions: usize,
    pub lif: LifConfig,
    /// True: spiking actor. False: tanh actor with the same shapes.
    pub spiking: bool,
}

impl SanConfig {
    pub fn new(obs_dim: usize, spiking: bool) -> Self {
        Self {
            obs_dim,
            hidden: [64, 64],
            actions: crate::env::ACTION_COUNT,
            lif: LifConfig::default(),
            spiking,
        }
    }
}

/// Actor-critic policy over flat observations.
pub struct SanPolicy {
    pub cfg: SanConfig,
    pub params: ParamSet,
    actor: LayerIds,
    critic: LayerIds,
}

/// Adds a three-layer parameter block under `prefix` and returns its ids.
/// The first two layers produce membrane currents when the block drives LIF
/// units, so they take a gain and a bias offset; at init the currents must
/// straddle the spike threshold or the readout sees only silence and the
/// hard-threshold forward pass carries no usable gradient. The readout
/// layer always gets plain scaled-normal weights and zero bias.
fn init_layer_ids<R: Rng>(
    set: &mut ParamSet,
    prefix: &str,
    dims: [usize; 4],
    gain: f64,
    bias: f64,
    rng: &mut R,
) -> Result<LayerIds, TapeError> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let weight = |rows: usize, cols: usize, gain: f64, rng: &mut R| -> Mat {
        let scale = gain / (rows as f64).sqrt();
        Array2::from_shape_fn((rows, cols), |_| normal.sample(rng) * scale)
    };
    let [d0, d1, d2, d3] = dims;
    let w1 = set.add(&format!("{prefix}.w1"), weight(d0, d1, gain, rng))?;
    let b1 = set.add(&format!("{prefix}.b1"), Array2::from_elem((1, d1), bias))?;
    let w2 = set.add(&format!("{prefix}.w2"), weight(d1, d2, gain, rng))?;
    let b2 = set.add(&format!("{prefix}.b2"), Array2::from_elem((1, d2), bias))?;
    let w3 = set.add(&format!("{prefix}.w3"), weight(d2, d3, 1.0, rng))?;
    let b3 = set.add(&format!("{prefix}.b3"), Array2::zeros((1, d3)))?;
    Ok(LayerIds { w1, b1, w2, b2, w3, b3 })
}

/// Unrolls a LIF layer on a constant input current and returns the
/// time-averaged spike rate. `current` has shape [batch, units].
fn lif_rate(
    t: &mut Tape,
    current: NodeId,
    cfg: &LifConfig,
    mode: SpikeMode,
) -> Result<NodeId, TapeError> {
    let (batch, units) = {
        let c = t.value(current);
        (c.nrows(), c.ncols())
    };
    let drive = t.scale(current, cfg.drive())?;
    let mut v = t.leaf(Array2::zeros((batch, units)));
    let mut rate: Option<NodeId> = None;
    for _ in 0..cfg.steps {
        let kept = t.scale(v, cfg.decay())?;
        let v_pre = t.add(kept, drive)?;
        let s = t.spike(v_pre, cfg.v_threshold, cfg.surrogate_width, mode)?;
        let fired = t.mul(v_pre, s)?;
        v = t.sub(v_pre, fired)?;
        if cfg.v_reset != 0.0 {
            let reset = t.scale(s, cfg.v_reset)?;
            v = t.add(v, reset)?;
        }
        rate = Some(match rate {
            None => s,
            Some(acc) => t.add(acc, s)?,
        });
    }
    let total = rate.expect("at least one LIF step");
    t.scale(total, 1.0 / cfg.steps as f64)
}

fn tanh_mlp_hidden(
    t: &mut Tape,
    set: &ParamSet,
    ids: &LayerIds,
    x: NodeId,
) -> Result<NodeId, TapeError> {
    let w1 = t.param(set, ids.w1);
    let b1 = t.param(set, ids.b1);
    let w2 = t.param(set, ids.w2);
    let b2 = t.param(set, ids.b2);
    let z1 = t.matmul(x, w1)?;
    let z1 = t.add_row(z1, b1)?;
    let h1 = t.tanh(z1)?;
    let z2 = t.matmul(h1, w2)?;
    let z2 = t.add_row(z2, b2)?;
    t.tanh(z2)
}

fn readout(
    t: &mut Tape,
    set: &ParamSet,
    ids: &LayerIds,
    h: NodeId,
) -> Result<NodeId, TapeError> {
    let w3 = t.param(set, ids.w3);
    let b3 = t.param(set, ids.b3);
    let z = t.matmul(h, w3)?;
    t.add_row(z, b3)
}

impl SanPolicy {
    pub fn new<R: Rng>(cfg: SanConfig, rng: &mut R) -> Result<Self, TapeError> {
        let mut params = ParamSet::new();
        let (gain, bias) = if cfg.spiking {
            (4.0, cfg.lif.v_threshold * 0.5)
        } else {
            (1.0, 0.0)
        };
        let actor = init_layer_ids(
            &mut params,
            "actor",
            [cfg.obs_dim, cfg.hidden[0], cfg.hidden[1], cfg.actions],
            gain,
            bias,
            rng,
        )?;
        let critic = init_layer_ids(
            &mut params,
            "critic",
            [cfg.obs_dim, cfg.hidden[0], cfg.hidden[1], 1],
            1.0,
            0.0,
            rng,
        )?;
        Ok(Self { cfg, params, actor, critic })
    }

    /// Action logits for a batch of observations, with an explicit spike
    /// mode so gradient checks can run on the smooth relaxation.
    pub fn logits_mode(
        &self,
        t: &mut Tape,
        set: &ParamSet,
        obs: NodeId,
        mode: SpikeMode,
    ) -> Result<NodeId, TapeError> {
        if self.cfg.spiking {
            let lif = &self.cfg.lif;
            let w1 = t.param(set, self.actor.w1);
            let b1 = t.param(set, self.actor.b1);
            let w2 = t.param(set, self.actor.w2);
            let b2 = t.param(set, self.actor.b2);
            let i1 = t.matmul(obs, w1)?;
            let i1 = t.add_row(i1, b1)?;
            let r1 = lif_rate(t, i1, lif, mode)?;
            let i2 = t.matmul(r1, w2)?;
            let i2 = t.add_row(i2, b2)?;
            let r2 = lif_rate(t, i2, lif, mode)?;
            readout(t, set, &self.actor, r2)
        } else {
            let h = tanh_mlp_hidden(t, set, &self.actor, obs)?;
            readout(t, set, &self.actor, h)
        }
    }

    /// Action probabilities for a batch of observations.
    pub fn probs(&self, t: &mut Tape, set: &ParamSet, obs: NodeId) -> Result<NodeId, TapeError> {
        let logits = self.logits_mode(t, set, obs, SpikeMode::Hard)?;
        t.softmax_rows(logits)
    }

    /// State values [batch, 1] from the tanh critic.
    pub fn value(&self, t: &mut Tape, set: &ParamSet, obs: NodeId) -> Result<NodeId, TapeError> {
        let h = tanh_mlp_hidden(t, set, &self.critic, obs)?;
        readout(t, set, &self.critic, h)
    }

    /// Critic ids grouped for building losses.
    pub fn actor_param_ids(&self) -> Vec<ParamId> {
        self.params.ids_with_prefix("actor.")
    }

    pub fn critic_param_ids(&self) -> Vec<ParamId> {
        self.params.ids_with_prefix("critic.")
    }

    /// Forward pass outside training: probabilities and value for one
    /// observation row.
    pub fn evaluate(&self, obs: &[f64]) -> Result<(Vec<f64>, f64), TapeError> {
        let mut t = Tape::new();
        let x = t.leaf(Array2::from_shape_vec((1, obs.len()), obs.to_vec()).expect("row"));
        let p = self.probs(&mut t, &self.params, x)?;
        let v = self.value(&mut t, &self.params, x)?;
        let probs = t.value(p).row(0).to_vec();
        let value = t.value(v)[[0, 0]];
        Ok((probs, value))
    }

    /// Samples an action from the policy. Returns (action, log-prob, value).
    pub fn act<R: Rng>(&self, obs: &[f64], rng: &mut R) -> Result<(usize, f64, f64), TapeError> {
        let (probs, value) = self.evaluate(obs)?;
        let action = sample_categorical(&probs, rng);
        Ok((action, probs[action].max(1e-12).ln(), value))
    }

    /// Highest-probability action, used for deterministic evaluation.
    pub fn greedy(&self, obs: &[f64]) -> Result<usize, TapeError> {
        let (probs, _) = self.evaluate(obs)?;
        Ok(argmax(&probs))
    }
}

/// Samples an index from a probability vector. The tail index absorbs any
/// floating-point shortfall.
pub fn sample_categorical<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate() {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}
