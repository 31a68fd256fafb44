//! Command-line front end: train runs, crossplay matrices, ablation sweeps,
//! and report re-emission over the library's run-directory layout.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use mopsan::config::ExperimentConfig;
use mopsan::env::CookGrid;
use mopsan::eval::{
    self, AblationTable, CrossPlayMatrix, EvalError,
};
use mopsan::trainer::Method;

#[derive(Parser)]
#[command(name = "mopsan", version, about = "Cooperative cooking agents: training, crossplay, ablations")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train one agent pair from a flat key=value config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides train.seed from the file and the MOPSAN_SEED fallback.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the agent composition: dnn, san, or mop-san.
        #[arg(long)]
        method: Option<String>,
    },
    /// Evaluate every ego/partner pairing of a pool of run directories.
    Crossplay {
        /// Directory whose subdirectories are the pool entries (A-E).
        #[arg(long)]
        pool: PathBuf,
        #[arg(long)]
        episodes: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sweep one axis, training and scoring each value across seeds.
    Ablate {
        /// personality_k, context_size, dpp, or context_encoder.
        #[arg(long)]
        axis: String,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-emit reports from a directory containing matrix.json or table.json.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        /// csv or svg.
        #[arg(long)]
        format: String,
    },
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

fn env_seed() -> Option<String> {
    std::env::var("MOPSAN_SEED").ok()
}

fn run(cli: Cli) -> Result<(), Box<dyn std::error::Error>> {
    match cli.cmd {
        Cmd::Train { config, seed, method } => {
            let text = fs::read_to_string(&config)?;
            let mut cfg = ExperimentConfig::parse(&text)?;
            cfg.resolve_seed(seed, env_seed().as_deref());
            if let Some(tag) = method {
                let m = Method::from_tag(&tag).ok_or_else(|| {
                    EvalError::BadArg(format!("unknown method {tag:?}; expected dnn, san, or mop-san"))
                })?;
                cfg.set_method(m);
            }
            let run_dir = PathBuf::from(cfg.resolved_run_dir());
            println!(
                "training {} for {} steps (seed {}) -> {}",
                cfg.method_tag(),
                cfg.train.total_steps,
                cfg.train.seed,
                run_dir.display()
            );
            let mut trainer = cfg.build_trainer(CookGrid::default_kitchen())?;
            let summary = trainer.train(&run_dir, &cfg.snapshot())?;
            println!(
                "done: {} env steps, {} rollouts, {} episodes, last mean episode reward {}",
                summary.env_steps,
                summary.rollouts,
                summary.episodes,
                summary
                    .mean_ep_reward_last_rollout
                    .map_or("n/a".to_string(), |m| format!("{m:.2}")),
            );
        }
        Cmd::Crossplay { pool, episodes, out } => {
            let env = CookGrid::default_kitchen();
            let seed = env_seed().and_then(|s| s.parse().ok()).unwrap_or(0);
            let loaded = eval::load_pool(&env, &pool)?;
            println!(
                "crossplay over {} entries, {episodes} episodes per cell (seed {seed})",
                loaded.entries.len()
            );
            let matrix = eval::crossplay(&env, &loaded, episodes, seed)?;
            eval::write_matrix_reports(&matrix, &out)?;
            println!(
                "learning score {:.2}, generalization score {:.2}",
                matrix.learning_score(),
                matrix.generalization_score()
            );
            println!("wrote matrix.json, matrix.csv, heatmap.svg -> {}", out.display());
        }
        Cmd::Ablate { axis, config, out } => {
            let text = fs::read_to_string(&config)?;
            let mut cfg = ExperimentConfig::parse(&text)?;
            cfg.resolve_seed(None, env_seed().as_deref());
            println!(
                "ablating {axis} across {} seeds, {} steps per run -> {}",
                cfg.ablate_seeds,
                cfg.train.total_steps,
                out.display()
            );
            let table = eval::ablate(&axis, &cfg, &out)?;
            eval::write_table_reports(&table, &out)?;
            for row in &table.rows {
                println!("{}: avg {:.2} (std {:.2})", row.label, row.avg, row.std);
            }
            println!("wrote table.json, table.csv -> {}", out.display());
        }
        Cmd::Report { input, format } => emit_report(&input, &format)?,
    }
    Ok(())
}

fn emit_report(dir: &Path, format: &str) -> Result<(), Box<dyn std::error::Error>> {
    if !matches!(format, "csv" | "svg") {
        return Err(Box::new(EvalError::BadArg(format!(
            "unknown format {format:?}; expected csv or svg"
        ))));
    }
    let matrix_path = dir.join("matrix.json");
    let table_path = dir.join("table.json");
    if matrix_path.exists() {
        let matrix: CrossPlayMatrix = serde_json::from_str(&fs::read_to_string(matrix_path)?)?;
        let out = match format {
            "csv" => {
                let p = dir.join("matrix.csv");
                fs::write(&p, eval::matrix_csv(&matrix))?;
                p
            }
            _ => {
                let p = dir.join("heatmap.svg");
                fs::write(&p, eval::heatmap_svg(&matrix))?;
                p
            }
        };
        println!("wrote {}", out.display());
        return Ok(());
    }
    if table_path.exists() {
        let table: AblationTable = serde_json::from_str(&fs::read_to_string(table_path)?)?;
        if format != "csv" {
            return Err(Box::new(EvalError::BadArg(
                "svg reports require a crossplay matrix; this directory holds a table".to_string(),
            )));
        }
        let p = dir.join("table.csv");
        fs::write(&p, eval::table_csv(&table))?;
        println!("wrote {}", p.display());
        return Ok(());
    }
    Err(Box::new(EvalError::BadArg(format!(
        "{} contains neither matrix.json nor table.json",
        dir.display()
    ))))
}
