//! The history encoder: interleaved (observation, action) tokens, padding
//! masks, and the zero embedding for an empty window.

use mopsan::autodiff::{ParamSet, Tape, TapeError};
use mopsan::context::{ContextConfig, ContextEncoder, PartnerHistory};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn embed(enc: &ContextEncoder, set: &ParamSet, h: &PartnerHistory) -> Result<Vec<f64>, TapeError> {
    let mut t = Tape::new();
    let out = enc.encode(&mut t, set, std::slice::from_ref(h))?;
    Ok(t.value(out).row(0).to_vec())
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn main() -> Result<(), TapeError> {
    let obs_dim = 6;
    let mut cfg = ContextConfig::new(obs_dim, 5);
    cfg.model_dim = 32;
    cfg.head_dim = 16;
    cfg.ff_dim = 48;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut set = ParamSet::new();
    let enc = ContextEncoder::init(cfg, &mut set, &mut rng)?;

    let empty = PartnerHistory::new(5);
    let zero = embed(&enc, &set, &empty)?;
    println!(
        "empty window -> |embedding| = {:.3} (all-masked attention yields zeros)",
        zero.iter().map(|x| x * x).sum::<f64>().sqrt()
    );

    // Each (observation, action) pair fills two token slots; the window
    // keeps the newest pairs and masks the rest.
    let mut h = PartnerHistory::new(5);
    let mut prev = zero;
    for step in 0..7 {
        let obs: Vec<f64> = (0..obs_dim).map(|i| ((step * 3 + i) as f64 * 0.37).sin()).collect();
        h.push(obs, step % 6);
        let cur = embed(&enc, &set, &h)?;
        println!(
            "after {} pairs (window holds {}): embedding moved by {:.4}",
            step + 1,
            h.len(),
            l2(&prev, &cur)
        );
        prev = cur;
    }

    // The mask really isolates the window: two histories with identical
    // pairs agree exactly even though one arrived after overflow.
    let mut short = PartnerHistory::new(3);
    let mut long = PartnerHistory::new(3);
    long.push(vec![9.0; obs_dim], 5);
    long.push(vec![-9.0; obs_dim], 4);
    for step in 0..3 {
        let obs: Vec<f64> = (0..obs_dim).map(|i| (step + i) as f64 * 0.1).collect();
        short.push(obs.clone(), step);
        long.push(obs, step);
    }
    let a = embed(&enc, &set, &short)?;
    let b = embed(&enc, &set, &long)?;
    println!(
        "same last 3 pairs, different past: embeddings differ by {:.1e} (overflow is forgotten)",
        l2(&a, &b)
    );
    Ok(())
}
