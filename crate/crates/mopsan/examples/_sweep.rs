//! Scratch hyperparameter sweep on self-play runs.

use mopsan::config::ExperimentConfig;
use mopsan::env::CookGrid;
use mopsan::eval::evaluate_trained_pair;
use std::time::Instant;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let env = CookGrid::default_kitchen();
    for spec in &args {
        // spec form: tag:key=val,key=val,...
        let (tag, rest) = spec.split_once(':').expect("tag:overrides");
        let mut text = String::new();
        for kv in rest.split(',') {
            let (k, v) = kv.split_once('=').expect("key=val");
            text.push_str(&format!("{k} = {v}\n"));
        }
        let cfg = ExperimentConfig::parse(&text)?;
        let dir = std::env::temp_dir().join(format!("mopsan-sweep-{tag}"));
        let _ = std::fs::remove_dir_all(&dir);
        let start = Instant::now();
        let mut tr = cfg.build_trainer(env.clone())?;
        let summary = tr.train(&dir, &cfg.snapshot())?;
        let (mean, std) = evaluate_trained_pair(&tr, 10, cfg.train.seed)?;
        // Trailing mean over the last quarter of rollouts from the metrics.
        let metrics = std::fs::read_to_string(dir.join("metrics.jsonl"))?;
        let rewards: Vec<f64> = metrics
            .lines()
            .filter_map(|l| serde_json::from_str::<serde_json::Value>(l).ok())
            .filter_map(|v| v.get("mean_ep_reward").and_then(|x| x.as_f64()))
            .collect();
        let tail = &rewards[rewards.len().saturating_sub(rewards.len() / 4 + 1)..];
        let tail_mean = tail.iter().sum::<f64>() / tail.len().max(1) as f64;
        println!(
            "[{tag}] {:.0}s eval={mean:.1}±{std:.1} train_tail={tail_mean:.1} episodes={}",
            start.elapsed().as_secs_f64(),
            summary.episodes,
        );
    }
    Ok(())
}
