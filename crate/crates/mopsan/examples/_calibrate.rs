//! Scratch driver used to calibrate acceptance thresholds. Not part of the
//! shipped example set.

use mopsan::config::ExperimentConfig;
use mopsan::env::CookGrid;
use mopsan::eval::{collect_states, evaluate_trained_pair, mean_pairwise_jsd, random_pair_score};
use std::time::Instant;

fn run(cfg_text: &str, tag: &str) -> Result<(f64, f64, mopsan::mop::Mop), Box<dyn std::error::Error>> {
    let cfg = ExperimentConfig::parse(cfg_text)?;
    let dir = std::env::temp_dir().join(format!("mopsan-cal-{tag}"));
    let _ = std::fs::remove_dir_all(&dir);
    let start = Instant::now();
    let mut tr = cfg.build_trainer(CookGrid::default_kitchen())?;
    let summary = tr.train(&dir, &cfg.snapshot())?;
    let (mean, std) = evaluate_trained_pair(&tr, cfg.eval_episodes, cfg.train.seed)?;
    println!(
        "[{tag}] {:.0}s  steps={} episodes={} last_mean={:?} eval={mean:.2}±{std:.2}",
        start.elapsed().as_secs_f64(),
        summary.env_steps,
        summary.episodes,
        summary.mean_ep_reward_last_rollout,
    );
    Ok((mean, std, tr.mop.take().expect("mop")))
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let which: Vec<String> = std::env::args().skip(1).collect();
    let env = CookGrid::default_kitchen();

    if which.iter().any(|a| a == "4") {
        println!("--- criterion 4: k=4 C=5 100k ---");
        let (rand_mean, rand_std) = random_pair_score(&env, 10, 0);
        println!("random pair: {rand_mean:.3}±{rand_std:.3}");
        let text = "mop.k = 4\ncontext.size = 5\ntrain.total_steps = 100000\ntrain.seed = 0\n";
        let (mean, _, _) = run(text, "c4-seed0")?;
        println!("criterion4 eval mean = {mean:.2} (need >= 40)");
    }

    if which.iter().any(|a| a == "5") {
        println!("--- criterion 5: k=6 C=2 40k, beta 0.5 vs 0 ---");
        let base = "mop.k = 6\ncontext.size = 2\ntrain.total_steps = 40000\ntrain.seed = 1\n";
        let with = format!("{base}dpp.beta = 0.5\n");
        let without = format!("{base}dpp.beta = 0.0\n");
        let (_, _, mop_on) = run(&with, "c5-beta05")?;
        let (_, _, mop_off) = run(&without, "c5-beta0")?;
        let states = collect_states(&env, 1000, 123);
        let j_on = mean_pairwise_jsd(&mop_on, &states)?;
        let j_off = mean_pairwise_jsd(&mop_off, &states)?;
        println!("jsd beta=0.5: {j_on:.5}  jsd beta=0: {j_off:.5}  ratio {:.3} (need >= 1.5)", j_on / j_off);
    }

    if which.iter().any(|a| a == "6") {
        println!("--- criterion 6: 3 seeds, C {{0,5}} at k=6; k {{6,12}} at C=2; 40k ---");
        for seed in [2u64, 3, 4] {
            let c0 = format!("mop.k = 6\ncontext.size = 0\ntrain.total_steps = 40000\ntrain.seed = {seed}\n");
            let c5 = format!("mop.k = 6\ncontext.size = 5\ntrain.total_steps = 40000\ntrain.seed = {seed}\n");
            let (m0, _, _) = run(&c0, &format!("c6-C0-s{seed}"))?;
            let (m5, _, _) = run(&c5, &format!("c6-C5-s{seed}"))?;
            println!("seed {seed}: C=0 -> {m0:.2}  C=5 -> {m5:.2}  win={}", m5 > m0);
        }
        for seed in [2u64, 3, 4] {
            let k6 = format!("mop.k = 6\ncontext.size = 2\ntrain.total_steps = 40000\ntrain.seed = {seed}\n");
            let k12 = format!("mop.k = 12\ncontext.size = 2\ntrain.total_steps = 40000\ntrain.seed = {seed}\n");
            let (m6, _, _) = run(&k6, &format!("c6-k6-s{seed}"))?;
            let (m12, _, _) = run(&k12, &format!("c6-k12-s{seed}"))?;
            println!("seed {seed}: k=6 -> {m6:.2}  k=12 -> {m12:.2}  win={}", m12 > m6);
        }
    }
    Ok(())
}
