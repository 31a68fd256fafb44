//! Scratch diagnostics for learning-rate and spiking-drive calibration.

use mopsan::autodiff::{SpikeMode, Tape};
use mopsan::env::{CookGrid, ACTION_COUNT};
use mopsan::snn::{SanConfig, SanPolicy};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let env = CookGrid::default_kitchen();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let cfg = SanConfig::new(env.obs_dim() + ACTION_COUNT, true);
    let mut policy = SanPolicy::new(cfg, &mut rng)?;

    // A batch of real observations with a zero guidance slot.
    let states = mopsan::eval::collect_states(&env, 64, 5);
    let n = states.len();
    let dim = env.obs_dim() + ACTION_COUNT;
    let mut batch = Array2::zeros((n, dim));
    for (i, s) in states.iter().enumerate() {
        for (j, x) in s.iter().enumerate() {
            batch[[i, j]] = *x;
        }
    }

    let mut t = Tape::new();
    let x = t.leaf(batch.clone());
    let logits = policy.logits_mode(&mut t, &policy.params, x, SpikeMode::Hard)?;
    let lv = t.value(logits).clone();
    let (lmin, lmax) = (lv.iter().cloned().fold(f64::INFINITY, f64::min), lv.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
    let lstd = {
        let m = lv.mean().unwrap();
        (lv.mapv(|v| (v - m) * (v - m)).mean().unwrap()).sqrt()
    };
    println!("hard logits: min {lmin:.4} max {lmax:.4} std {lstd:.4}");

    // Rates inside the two LIF layers, probed by rebuilding the pieces.
    // The layer currents follow the same shapes as the actor pipeline.
    for mode in [SpikeMode::Hard, SpikeMode::Smooth] {
        let mut t = Tape::new();
        let x = t.leaf(batch.clone());
        let logits = policy.logits_mode(&mut t, &policy.params, x, mode)?;
        let p = t.softmax_rows(logits)?;
        let lp = t.ln_clamped(p, 1e-12)?;
        let plogp = t.mul(p, lp)?;
        let loss = t.mean_all(plogp)?;
        policy.params.zero_grads();
        t.backward(loss, &mut policy.params)?;
        let g = policy.params.global_grad_norm();
        println!("{mode:?}: entropy-loss grad norm over full set = {g:.3e}");
        let ids: Vec<_> = policy.params.ids().collect();
        for pref in ["actor.w1", "actor.w2", "actor.w3"] {
            for id in &ids {
                if policy.params.name(*id) == pref {
                    let gn = policy.params.grad(*id).mapv(|v| v * v).sum().sqrt();
                    println!("  {pref} grad norm {gn:.3e}");
                }
            }
        }
    }
    Ok(())
}
