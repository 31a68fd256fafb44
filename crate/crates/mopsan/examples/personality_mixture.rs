//! The partner model: a profile inferred from observed history blends a bank
//! of fixed-size policies, and a learned determinant score measures how
//! different the bank members act.

use mopsan::autodiff::TapeError;
use mopsan::context::PartnerHistory;
use mopsan::dpp::{DppConfig, DppModel};
use mopsan::env::ACTION_COUNT;
use mopsan::eval::jsd;
use mopsan::mop::{Mop, MopConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), TapeError> {
    let obs_dim = 8;
    let k = 4;
    let mut cfg = MopConfig::new(obs_dim, 3).with_personalities(k);
    cfg.hidden = 24;
    cfg.context.model_dim = 24;
    cfg.context.head_dim = 12;
    cfg.context.ff_dim = 32;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mop = Mop::init(cfg, &mut rng)?;

    let obs: Vec<f64> = (0..obs_dim).map(|i| (i as f64 * 0.4).cos()).collect();
    let own: Vec<f64> = (0..obs_dim).map(|i| (i as f64 * 0.9).sin()).collect();

    // Fresh partner: no history, so the profile rests on the prior alone.
    let empty = PartnerHistory::new(3);
    let fresh = mop.decide(&obs, &own, &empty, &mut rng)?;
    println!("profile with no history    {}", fmt(&fresh.personality));

    // After observing a few (observation, action) pairs the profile shifts.
    let mut h = PartnerHistory::new(3);
    for step in 0..3 {
        let o: Vec<f64> = (0..obs_dim).map(|i| ((step + i) as f64 * 0.3).sin()).collect();
        h.push(o, step % ACTION_COUNT);
    }
    let seen = mop.decide(&obs, &own, &h, &mut rng)?;
    println!("profile after three pairs  {}", fmt(&seen.personality));
    println!("guidance on ego obs        {}", fmt(&seen.guidance));
    println!("partner mixture on own obs {}", fmt(&seen.partner_probs));

    // The bank members themselves disagree; pairwise divergence shows it.
    let bank = mop.bank_distributions(&obs)?;
    println!("\nbank member distributions on one observation:");
    for (i, d) in bank.iter().enumerate() {
        println!("  member {i}: {}", fmt(d));
    }
    let mut total = 0.0;
    let mut pairs = 0;
    for i in 0..k {
        for j in (i + 1)..k {
            total += jsd(&bank[i], &bank[j]);
            pairs += 1;
        }
    }
    println!("mean pairwise divergence: {:.4}", total / pairs as f64);

    // A determinant over learned features scores set-level spread: a bank of
    // identical members collapses the volume, distinct members keep it open.
    let dpp = DppModel::init(
        DppConfig { actions: ACTION_COUNT, feature_dim: k, hidden: 16, jitter: 1e-6 },
        &mut rng,
    )?;
    let spread = dpp.reward(&bank)?;
    let collapsed = dpp.reward(&vec![bank[0].clone(); k])?;
    println!("\ndeterminant score, distinct bank:  {spread:.4}");
    println!("determinant score, identical bank: {collapsed:.4}");
    Ok(())
}

fn fmt(xs: &[f64]) -> String {
    let cells: Vec<String> = xs.iter().map(|x| format!("{x:.3}")).collect();
    format!("[{}]", cells.join(" "))
}
