//! Cross-play evaluation: train five tiny runs with different seeds, pair
//! every ego with every partner, and split the resulting matrix into
//! self-pairing and cross-pairing scores.

use mopsan::config::ExperimentConfig;
use mopsan::env::CookGrid;
use mopsan::eval::{crossplay, load_pool, pool_hash, write_matrix_reports};
use std::fs;

const CONFIG: &str = "\
mop.k = 3
mop.hidden = 16
context.size = 2
context.token_dim = 16
context.inner_dim = 24
dpp.feature_dim = 8
train.rollout_steps = 128
train.minibatch = 32
train.total_steps = 256
train.epochs = 1
";

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let env = CookGrid::default_kitchen();
    let pool_dir = std::env::temp_dir().join("mopsan-crossplay-pool");
    let _ = fs::remove_dir_all(&pool_dir);

    for (i, name) in ["A", "B", "C", "D", "E"].iter().enumerate() {
        let mut cfg = ExperimentConfig::parse(CONFIG)?;
        cfg.train.seed = 100 + i as u64;
        let mut trainer = cfg.build_trainer(env.clone())?;
        trainer.train(&pool_dir.join(name), &cfg.snapshot())?;
        println!("trained pool entry {name} (seed {})", cfg.train.seed);
    }

    let pool = load_pool(&env, &pool_dir)?;
    println!("\npool hash: {}", &pool_hash(&pool)[..16]);

    let matrix = crossplay(&env, &pool, 2, 42)?;
    println!("\nmean episode reward, ego rows x partner columns:");
    print!("      ");
    for name in &matrix.names {
        print!("{name:>8}");
    }
    println!();
    for (i, name) in matrix.names.iter().enumerate() {
        print!("  {name:>4}");
        for j in 0..matrix.names.len() {
            print!("{:>8.2}", matrix.mean[i][j]);
        }
        println!();
    }
    println!("\nself-pairing score (diagonal mean):   {:.3}", matrix.learning_score());
    println!("cross-pairing score (off-diag mean):  {:.3}", matrix.generalization_score());

    let out = std::env::temp_dir().join("mopsan-crossplay-out");
    write_matrix_reports(&matrix, &out)?;
    println!("\nreports written to {}:", out.display());
    let mut names: Vec<String> = fs::read_dir(&out)?
        .map(|e| e.map(|e| e.file_name().to_string_lossy().into_owned()))
        .collect::<Result<_, _>>()?;
    names.sort();
    for name in names {
        println!("  {name}");
    }
    Ok(())
}
