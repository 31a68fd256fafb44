//! End-to-end training loop on a deliberately tiny configuration: parse a
//! config, train for a few rollouts, inspect the run directory.

use mopsan::config::ExperimentConfig;
use mopsan::env::CookGrid;
use std::fs;

const CONFIG: &str = "\
# tiny settings so the example finishes in seconds
mop.k = 3
mop.hidden = 16
context.size = 2
context.token_dim = 16
context.inner_dim = 24
dpp.feature_dim = 8
train.rollout_steps = 128
train.minibatch = 32
train.total_steps = 512
train.epochs = 1
train.eta_period = 2
train.seed = 11
";

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = ExperimentConfig::parse(CONFIG)?;
    let run_dir = std::env::temp_dir().join("mopsan-quickstart");
    let _ = fs::remove_dir_all(&run_dir);

    println!("method: {}", cfg.method_tag());
    println!("run directory: {}", run_dir.display());

    let mut trainer = cfg.build_trainer(CookGrid::default_kitchen())?;
    let summary = trainer.train(&run_dir, &cfg.snapshot())?;
    println!(
        "\ntrained {} env steps over {} rollouts, {} episodes finished",
        summary.env_steps, summary.rollouts, summary.episodes
    );

    println!("\nmetrics.jsonl:");
    for line in fs::read_to_string(run_dir.join("metrics.jsonl"))?.lines() {
        println!("  {line}");
    }

    println!("\nrun directory contents:");
    let mut names: Vec<String> = fs::read_dir(&run_dir)?
        .map(|e| e.map(|e| e.file_name().to_string_lossy().into_owned()))
        .collect::<Result<_, _>>()?;
    names.sort();
    for name in names {
        let len = fs::metadata(run_dir.join(&name))?.len();
        println!("  {name} ({len} bytes)");
    }
    Ok(())
}
