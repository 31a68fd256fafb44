//! Frozen-policy evaluation: episode runner, agent pools loaded from run
//! directories, the seed-pair crossplay matrix with learning and
//! generalization scores, ablation sweeps, and CSV/SVG report emission.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::autodiff::checkpoint::{load_checkpoint, CheckpointError};
use crate::autodiff::TapeError;
use crate::config::{ConfigError, ExperimentConfig};
use crate::context::PartnerHistory;
use crate::env::{Action, CookGrid, ACTION_COUNT};
use crate::mop::Mop;
use crate::snn::{sample_categorical, SanPolicy};
use crate::trainer::{concat_obs, TrainError, Trainer};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Tape(#[from] TapeError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("invalid pool: {0}")]
    BadPool(String),
    #[error("invalid argument: {0}")]
    BadArg(String),
}

/// One trained run: ego policy plus its partner model when the method has
/// one. Loaded from a run directory or assembled from a live trainer.
pub struct PolicyBundle {
    pub name: String,
    pub tag: String,
    pub san: SanPolicy,
    pub mop: Option<Mop>,
}

impl PolicyBundle {
    pub fn ego(&self) -> EgoPolicy<'_> {
        EgoPolicy { san: &self.san, guide: self.mop.as_ref() }
    }

    /// The policy this run contributes to the partner seat: its mixture
    /// model when present, otherwise the ego policy playing both seats.
    pub fn partner(&self) -> PartnerPolicy<'_> {
        match &self.mop {
            Some(m) => PartnerPolicy::Mixture(m),
            None => PartnerPolicy::SelfPlay(&self.san),
        }
    }
}

/// Ego seat: the actor, optionally guided by a partner model reading the
/// partner's live history.
#[derive(Clone, Copy)]
pub struct EgoPolicy<'a> {
    pub san: &'a SanPolicy,
    pub guide: Option<&'a Mop>,
}

/// Partner seat policy for one episode.
#[derive(Clone, Copy)]
pub enum PartnerPolicy<'a> {
    SelfPlay(&'a SanPolicy),
    Mixture(&'a Mop),
}

/// Plays one full episode with frozen parameters and returns the
/// environment score. Guidance and mixture paths run noise-free; history
/// buffers start empty, so nothing leaks across calls.
pub fn play_episode<R: Rng>(
    env: &CookGrid,
    ego: EgoPolicy<'_>,
    partner: PartnerPolicy<'_>,
    rng: &mut R,
) -> Result<f64, EvalError> {
    let mut state = env.reset();
    let mut ego_hist = PartnerHistory::new(ego.guide.map_or(0, |m| m.cfg.context.capacity));
    let mut partner_hist = PartnerHistory::new(match partner {
        PartnerPolicy::Mixture(m) => m.cfg.context.capacity,
        PartnerPolicy::SelfPlay(_) => 0,
    });
    let zero_guidance = vec![0.0; ACTION_COUNT];
    let mut score = 0.0;
    loop {
        let o1 = env.featurize(&state, 0);
        let o2 = env.featurize(&state, 1);
        let guidance = match ego.guide {
            Some(m) => m.guide(&o1, &ego_hist)?,
            None => zero_guidance.clone(),
        };
        let (p1, _) = ego.san.evaluate(&concat_obs(&o1, &guidance))?;
        let a1 = sample_categorical(&p1, rng);
        let a2 = match partner {
            PartnerPolicy::SelfPlay(san) => {
                let (p2, _) = san.evaluate(&concat_obs(&o2, &zero_guidance))?;
                sample_categorical(&p2, rng)
            }
            PartnerPolicy::Mixture(m) => {
                let p2 = m.guide(&o2, &partner_hist)?;
                sample_categorical(&p2, rng)
            }
        };
        let act = |i: usize| Action::from_index(i).expect("sampled action index in range");
        let (next, r, done, _) = env.step(&state, [act(a1), act(a2)]);
        score += r;
        ego_hist.push(o2.clone(), a2);
        partner_hist.push(o2, a2);
        if done {
            return Ok(score);
        }
        state = next;
    }
}

/// Mean and standard deviation of the episode score over `episodes` plays
/// with a dedicated deterministic stream.
pub fn evaluate_pair(
    env: &CookGrid,
    ego: EgoPolicy<'_>,
    partner: PartnerPolicy<'_>,
    episodes: usize,
    seed: u64,
) -> Result<(f64, f64), EvalError> {
    if episodes == 0 {
        return Err(EvalError::BadArg("episode count must be positive".to_string()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scores = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        scores.push(play_episode(env, ego, partner, &mut rng)?);
    }
    Ok(mean_std(&scores))
}

/// Baseline: both seats act uniformly at random.
pub fn random_pair_score(env: &CookGrid, episodes: usize, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scores = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let mut state = env.reset();
        let mut score = 0.0;
        loop {
            let a1 = Action::from_index(rng.gen_range(0..ACTION_COUNT)).expect("in range");
            let a2 = Action::from_index(rng.gen_range(0..ACTION_COUNT)).expect("in range");
            let (next, r, done, _) = env.step(&state, [a1, a2]);
            score += r;
            if done {
                break;
            }
            state = next;
        }
        scores.push(score);
    }
    mean_std(&scores)
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len().max(1) as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Named frozen policies, conventionally A through E.
pub struct AgentPool {
    pub entries: Vec<PolicyBundle>,
}

/// Loads one run directory: rebuilds the networks from config.snapshot and
/// installs the highest-step checkpoints found.
pub fn load_bundle(env: &CookGrid, dir: &Path, name: &str) -> Result<PolicyBundle, EvalError> {
    let snapshot_path = dir.join("config.snapshot");
    let text = fs::read_to_string(&snapshot_path).map_err(|e| {
        EvalError::BadPool(format!("{}: {e}", snapshot_path.display()))
    })?;
    let cfg = ExperimentConfig::parse(&text)?;
    let step = latest_step(dir, "san")?.ok_or_else(|| {
        EvalError::BadPool(format!("{}: no actor checkpoint", dir.display()))
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut san = SanPolicy::new(cfg.san_config(env.obs_dim()), &mut rng)?;
    let ck = load_checkpoint(&dir.join(format!("san-{step}.ckpt")))?;
    ck.install("san", &mut san.params, None)?;
    let mop = if cfg.mop_enabled {
        let mut mop = Mop::init(cfg.mop_config(env.obs_dim()), &mut rng)?;
        let path = dir.join(format!("mop-{step}.ckpt"));
        if !path.exists() {
            return Err(EvalError::BadPool(format!(
                "{}: actor checkpoint at step {step} has no partner-model counterpart",
                dir.display()
            )));
        }
        let ck = load_checkpoint(&path)?;
        ck.install("mop", &mut mop.params, None)?;
        Some(mop)
    } else {
        None
    };
    Ok(PolicyBundle { name: name.to_string(), tag: cfg.method_tag().to_string(), san, mop })
}

fn latest_step(dir: &Path, component: &str) -> Result<Option<u64>, EvalError> {
    let prefix = format!("{component}-");
    let mut best = None;
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        let fname = entry.file_name();
        let Some(name) = fname.to_str() else { continue };
        let Some(rest) = name.strip_prefix(&prefix) else { continue };
        let Some(step_text) = rest.strip_suffix(".ckpt") else { continue };
        if let Ok(step) = step_text.parse::<u64>() {
            best = Some(best.map_or(step, |b: u64| b.max(step)));
        }
    }
    Ok(best)
}

/// Loads every subdirectory of `dir` as a pool entry, sorted by name.
pub fn load_pool(env: &CookGrid, dir: &Path) -> Result<AgentPool, EvalError> {
    let mut names = Vec::new();
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        if entry.file_type()?.is_dir() {
            if let Some(name) = entry.file_name().to_str() {
                names.push(name.to_string());
            }
        }
    }
    names.sort();
    if names.is_empty() {
        return Err(EvalError::BadPool(format!("{}: no run subdirectories", dir.display())));
    }
    let mut entries = Vec::with_capacity(names.len());
    for name in &names {
        entries.push(load_bundle(env, &dir.join(name), name)?);
    }
    Ok(AgentPool { entries })
}

/// SHA-256 over every parameter of every bundle, in sorted-name order.
/// Evaluation must leave this unchanged.
pub fn pool_hash(pool: &AgentPool) -> String {
    let mut hasher = Sha256::new();
    for bundle in &pool.entries {
        hasher.update(bundle.name.as_bytes());
        hash_params(&mut hasher, &bundle.san.params);
        if let Some(m) = &bundle.mop {
            hash_params(&mut hasher, &m.params);
        }
    }
    hex(&hasher.finalize())
}

fn hash_params(hasher: &mut Sha256, set: &crate::autodiff::ParamSet) {
    let mut named: Vec<_> = set.ids().map(|id| (set.name(id).to_string(), id)).collect();
    named.sort_by(|a, b| a.0.cmp(&b.0));
    for (name, id) in named {
        hasher.update(name.as_bytes());
        for x in set.value(id).iter() {
            hasher.update(x.to_le_bytes());
        }
    }
}

fn hex(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

/// Seed-pair score matrix. Rows are ego agents, columns are partners; the
/// diagonal is each run's own training pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossPlayMatrix {
    pub names: Vec<String>,
    pub method: String,
    pub mean: Vec<Vec<f64>>,
    pub std: Vec<Vec<f64>>,
    pub episodes: Vec<Vec<usize>>,
}

impl CrossPlayMatrix {
    pub fn size(&self) -> usize {
        self.names.len()
    }

    /// Mean score of the training-phase pairs (diagonal).
    pub fn learning_score(&self) -> f64 {
        let n = self.size();
        (0..n).map(|i| self.mean[i][i]).sum::<f64>() / n as f64
    }

    /// Mean score with unseen partners (off-diagonal).
    pub fn generalization_score(&self) -> f64 {
        let n = self.size();
        let mut total = 0.0;
        let mut count = 0usize;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    total += self.mean[i][j];
                    count += 1;
                }
            }
        }
        total / count.max(1) as f64
    }
}

/// Runs every (ego, partner) pairing for `episodes` episodes per cell with
/// per-cell deterministic seeds. Ego context resets between partners, and a
/// parameter hash taken before and after guards frozen weights.
pub fn crossplay(
    env: &CookGrid,
    pool: &AgentPool,
    episodes: usize,
    seed: u64,
) -> Result<CrossPlayMatrix, EvalError> {
    if episodes == 0 {
        return Err(EvalError::BadArg("episodes per cell must be positive".to_string()));
    }
    let n = pool.entries.len();
    if n != 5 {
        return Err(EvalError::BadPool(format!("expected 5 pool entries, found {n}")));
    }
    let before = pool_hash(pool);
    let mut mean = vec![vec![0.0; n]; n];
    let mut std = vec![vec![0.0; n]; n];
    let mut counts = vec![vec![0usize; n]; n];
    for i in 0..n {
        for j in 0..n {
            let cell_seed = seed
                .wrapping_add(((i * n + j) as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let (m, s) = evaluate_pair(
                env,
                pool.entries[i].ego(),
                pool.entries[j].partner(),
                episodes,
                cell_seed,
            )?;
            mean[i][j] = m;
            std[i][j] = s;
            counts[i][j] = episodes;
        }
    }
    let after = pool_hash(pool);
    if before != after {
        return Err(EvalError::BadPool(
            "parameters changed during evaluation".to_string(),
        ));
    }
    Ok(CrossPlayMatrix {
        names: pool.entries.iter().map(|e| e.name.clone()).collect(),
        method: pool.entries.first().map(|e| e.tag.clone()).unwrap_or_default(),
        mean,
        std,
        episodes: counts,
    })
}

/// Mean pairwise Jensen-Shannon divergence among the bank's action
/// distributions, averaged over the given states. Natural-log units.
pub fn mean_pairwise_jsd(mop: &Mop, states: &[Vec<f64>]) -> Result<f64, EvalError> {
    if states.is_empty() {
        return Err(EvalError::BadArg("need at least one state".to_string()));
    }
    let mut total = 0.0;
    for s in states {
        let dists = mop.bank_distributions(s)?;
        let k = dists.len();
        let mut sum = 0.0;
        let mut pairs = 0usize;
        for i in 0..k {
            for j in i + 1..k {
                sum += jsd(&dists[i], &dists[j]);
                pairs += 1;
            }
        }
        total += sum / pairs.max(1) as f64;
    }
    Ok(total / states.len() as f64)
}

/// Jensen-Shannon divergence between two distributions, natural log.
pub fn jsd(p: &[f64], q: &[f64]) -> f64 {
    let kl = |a: &[f64], b: &[f64]| -> f64 {
        a.iter()
            .zip(b)
            .filter(|(x, _)| **x > 0.0)
            .map(|(x, y)| x * (x / y.max(1e-300)).ln())
            .sum()
    };
    let m: Vec<f64> = p.iter().zip(q).map(|(a, b)| 0.5 * (a + b)).collect();
    0.5 * kl(p, &m) + 0.5 * kl(q, &m)
}

/// States gathered from random play, for probing distributional diversity.
pub fn collect_states(env: &CookGrid, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut states = Vec::with_capacity(count);
    let mut state = env.reset();
    while states.len() < count {
        states.push(env.featurize(&state, 1));
        let a1 = Action::from_index(rng.gen_range(0..ACTION_COUNT)).expect("in range");
        let a2 = Action::from_index(rng.gen_range(0..ACTION_COUNT)).expect("in range");
        let (next, _, done, _) = env.step(&state, [a1, a2]);
        state = if done { env.reset() } else { next };
    }
    states
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub seeds: Vec<f64>,
    pub avg: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub axis: String,
    pub rows: Vec<AblationRow>,
}

pub const ABLATION_AXES: [&str; 4] = ["personality_k", "context_size", "dpp", "context_encoder"];

/// The sweep values for one ablation axis.
pub fn axis_values(axis: &str) -> Result<Vec<String>, EvalError> {
    match axis {
        "personality_k" => Ok(vec!["6".into(), "8".into(), "10".into(), "12".into()]),
        "context_size" => Ok(vec!["0".into(), "1".into(), "3".into(), "5".into()]),
        "dpp" | "context_encoder" => Ok(vec!["on".into(), "off".into()]),
        _ => Err(EvalError::BadArg(format!(
            "unknown ablation axis {axis:?}; expected one of {ABLATION_AXES:?}"
        ))),
    }
}

/// Applies one axis value to a configuration. Disabling the context encoder
/// collapses the window to zero, which routes the estimator a constant
/// embedding.
pub fn apply_axis_value(
    cfg: &mut ExperimentConfig,
    axis: &str,
    value: &str,
) -> Result<(), EvalError> {
    let bad = |reason: String| EvalError::BadArg(reason);
    match axis {
        "personality_k" => {
            cfg.mop_k = value
                .parse()
                .map_err(|_| bad(format!("bad bank size {value:?}")))?;
        }
        "context_size" => {
            cfg.context_size = value
                .parse()
                .map_err(|_| bad(format!("bad window length {value:?}")))?;
        }
        "dpp" => match value {
            "on" => cfg.dpp_enabled = true,
            "off" => cfg.dpp_enabled = false,
            _ => return Err(bad(format!("bad toggle {value:?}"))),
        },
        "context_encoder" => match value {
            "on" => {}
            "off" => cfg.context_size = 0,
            _ => return Err(bad(format!("bad toggle {value:?}"))),
        },
        _ => {
            return Err(bad(format!(
                "unknown ablation axis {axis:?}; expected one of {ABLATION_AXES:?}"
            )))
        }
    }
    Ok(())
}

/// Trains one run per (axis value, seed), evaluates each trained pair, and
/// assembles the score table. Run artifacts land under
/// `out/<axis>-<value>/seed-<i>`.
pub fn ablate(
    axis: &str,
    base: &ExperimentConfig,
    out_dir: &Path,
) -> Result<AblationTable, EvalError> {
    let values = axis_values(axis)?;
    let env = CookGrid::default_kitchen();
    let mut rows = Vec::with_capacity(values.len());
    for value in &values {
        let mut seeds = Vec::with_capacity(base.ablate_seeds);
        for s in 0..base.ablate_seeds {
            let mut cfg = base.clone();
            apply_axis_value(&mut cfg, axis, value)?;
            cfg.train.seed = base.train.seed + s as u64;
            let run_dir = out_dir.join(format!("{axis}-{value}")).join(format!("seed-{s}"));
            let mut trainer = cfg.build_trainer(env.clone())?;
            trainer.train(&run_dir, &cfg.snapshot())?;
            let (score, _) = evaluate_trained_pair(&trainer, cfg.eval_episodes, cfg.train.seed)?;
            seeds.push(score);
        }
        let (avg, std) = mean_std(&seeds);
        rows.push(AblationRow { label: format!("{axis}={value}"), seeds, avg, std });
    }
    Ok(AblationTable { axis: axis.to_string(), rows })
}

/// Learning-phase score of a live trainer's pair, matching a diagonal
/// crossplay cell.
pub fn evaluate_trained_pair(
    trainer: &Trainer,
    episodes: usize,
    seed: u64,
) -> Result<(f64, f64), EvalError> {
    let ego = EgoPolicy { san: &trainer.san, guide: trainer.mop.as_ref() };
    let partner = match &trainer.mop {
        Some(m) => PartnerPolicy::Mixture(m),
        None => PartnerPolicy::SelfPlay(&trainer.san),
    };
    evaluate_pair(&trainer.env, ego, partner, episodes, seed.wrapping_add(0xE7A1))
}

/// CSV for a crossplay matrix: one row per (ego, partner) cell.
pub fn matrix_csv(m: &CrossPlayMatrix) -> String {
    let mut out = String::from("ego,partner,mean,std,episodes\n");
    for i in 0..m.size() {
        for j in 0..m.size() {
            out.push_str(&format!(
                "{},{},{:.4},{:.4},{}\n",
                m.names[i], m.names[j], m.mean[i][j], m.std[i][j], m.episodes[i][j]
            ));
        }
    }
    out
}

/// CSV for an ablation table: one row per axis value, seed scores in the
/// A-E columns (blank when fewer seeds ran).
pub fn table_csv(t: &AblationTable) -> String {
    let mut out = String::from("method,A,B,C,D,E,avg,std\n");
    for row in &t.rows {
        out.push_str(&row.label);
        for i in 0..5 {
            out.push(',');
            if let Some(v) = row.seeds.get(i) {
                out.push_str(&format!("{v:.4}"));
            }
        }
        out.push_str(&format!(",{:.4},{:.4}\n", row.avg, row.std));
    }
    out
}

/// Standalone SVG heatmap of the matrix means: one colored cell per pairing
/// with its value annotated.
pub fn heatmap_svg(m: &CrossPlayMatrix) -> String {
    let n = m.size();
    let cell = 80usize;
    let margin = 70usize;
    let width = margin + n * cell + 20;
    let height = margin + n * cell + 20;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for row in &m.mean {
        for &v in row {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut s = String::new();
    s.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         viewBox=\"0 0 {width} {height}\" font-family=\"monospace\" font-size=\"13\">\n"
    ));
    s.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    for (j, name) in m.names.iter().enumerate() {
        let x = margin + j * cell + cell / 2;
        s.push_str(&format!(
            "<text x=\"{x}\" y=\"{}\" text-anchor=\"middle\">{name}</text>\n",
            margin - 12
        ));
    }
    for (i, name) in m.names.iter().enumerate() {
        let y = margin + i * cell + cell / 2 + 5;
        s.push_str(&format!(
            "<text x=\"{}\" y=\"{y}\" text-anchor=\"end\">{name}</text>\n",
            margin - 12
        ));
    }
    for i in 0..n {
        for j in 0..n {
            let v = m.mean[i][j];
            let t = (v - lo) / span;
            // Interpolate pale to saturated green; annotate with the value.
            let r = (238.0 - 188.0 * t) as u8;
            let g = (245.0 - 107.0 * t) as u8;
            let b = (238.0 - 182.0 * t) as u8;
            let x = margin + j * cell;
            let y = margin + i * cell;
            s.push_str(&format!(
                "<rect x=\"{x}\" y=\"{y}\" width=\"{cell}\" height=\"{cell}\" \
                 fill=\"rgb({r},{g},{b})\" stroke=\"#888\"/>\n"
            ));
            let tx = x + cell / 2;
            let ty = y + cell / 2 + 5;
            let text_fill = if t > 0.6 { "white" } else { "black" };
            s.push_str(&format!(
                "<text x=\"{tx}\" y=\"{ty}\" text-anchor=\"middle\" fill=\"{text_fill}\">{v:.1}</text>\n"
            ));
        }
    }
    s.push_str("</svg>\n");
    s
}

/// Writes matrix.json, matrix.csv, and heatmap.svg into `dir`.
pub fn write_matrix_reports(m: &CrossPlayMatrix, dir: &Path) -> Result<(), EvalError> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("matrix.json"), serde_json::to_string_pretty(m)?)?;
    fs::write(dir.join("matrix.csv"), matrix_csv(m))?;
    fs::write(dir.join("heatmap.svg"), heatmap_svg(m))?;
    Ok(())
}

/// Writes table.json and table.csv into `dir`.
pub fn write_table_reports(t: &AblationTable, dir: &Path) -> Result<(), EvalError> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("table.json"), serde_json::to_string_pretty(t)?)?;
    fs::write(dir.join("table.csv"), table_csv(t))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::Method;

    fn tiny_cfg_text() -> &'static str {
        "mop.k=3\nmop.hidden=16\ncontext.size=2\ncontext.token_dim=16\ncontext.inner_dim=24\n\
         dpp.feature_dim=8\ntrain.rollout_steps=32\ntrain.minibatch=16\ntrain.total_steps=32\n\
         train.epochs=1\n"
    }

    fn tiny_bundle(name: &str, seed: u64) -> PolicyBundle {
        let env = CookGrid::default_kitchen();
        let mut cfg = ExperimentConfig::parse(tiny_cfg_text()).unwrap();
        cfg.train.seed = seed;
        let tr = cfg.build_trainer(env).unwrap();
        PolicyBundle {
            name: name.to_string(),
            tag: cfg.method_tag().to_string(),
            san: tr.san,
            mop: tr.mop,
        }
    }

    #[test]
    fn crossplay_fills_every_cell_and_keeps_parameters_frozen() {
        let env = CookGrid::default_kitchen();
        let entries: Vec<PolicyBundle> =
            ["A", "B", "C", "D", "E"].iter().enumerate().map(|(i, n)| tiny_bundle(n, i as u64)).collect();
        let pool = AgentPool { entries };
        let before = pool_hash(&pool);
        let m = crossplay(&env, &pool, 1, 7).unwrap();
        assert_eq!(pool_hash(&pool), before);
        assert_eq!(m.size(), 5);
        assert_eq!(m.method, "mop-san");
        for i in 0..5 {
            for j in 0..5 {
                assert!(m.mean[i][j].is_finite());
                assert_eq!(m.episodes[i][j], 1);
            }
        }
        assert!(m.learning_score().is_finite());
        assert!(m.generalization_score().is_finite());
    }

    #[test]
    fn crossplay_rejects_bad_inputs() {
        let env = CookGrid::default_kitchen();
        let pool = AgentPool { entries: vec![tiny_bundle("A", 0)] };
        match crossplay(&env, &pool, 1, 0).unwrap_err() {
            EvalError::BadPool(msg) => assert!(msg.contains("5")),
            other => panic!("wrong error: {other}"),
        }
        match crossplay(&env, &pool, 0, 0).unwrap_err() {
            EvalError::BadArg(msg) => assert!(msg.contains("positive")),
            other => panic!("wrong error: {other}"),
        }
    }

    #[test]
    fn reports_have_exact_headers_and_reemit_identically() {
        let m = CrossPlayMatrix {
            names: vec!["A".into(), "B".into(), "C".into(), "D".into(), "E".into()],
            method: "mop-san".into(),
            mean: (0..5).map(|i| (0..5).map(|j| (i * 5 + j) as f64).collect()).collect(),
            std: vec![vec![0.5; 5]; 5],
            episodes: vec![vec![10; 5]; 5],
        };
        let csv = matrix_csv(&m);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "ego,partner,mean,std,episodes");
        assert_eq!(csv.lines().count(), 26);
        assert_eq!(csv, matrix_csv(&m));
        let svg = heatmap_svg(&m);
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("24.0"), "cell values must be annotated");
        assert_eq!(svg, heatmap_svg(&m));

        let t = AblationTable {
            axis: "personality_k".into(),
            rows: vec![AblationRow {
                label: "personality_k=6".into(),
                seeds: vec![1.0, 2.0, 3.0],
                avg: 2.0,
                std: 0.8165,
            }],
        };
        let csv = table_csv(&t);
        assert_eq!(csv.lines().next().unwrap(), "method,A,B,C,D,E,avg,std");
        assert!(csv.contains("personality_k=6,1.0000,2.0000,3.0000,,,2.0000,0.8165"));
        assert_eq!(csv, table_csv(&t));
    }

    #[test]
    fn run_directories_reload_into_identical_policies() {
        let env = CookGrid::default_kitchen();
        let mut cfg = ExperimentConfig::parse(tiny_cfg_text()).unwrap();
        cfg.train.seed = 5;
        let mut tr = cfg.build_trainer(env.clone()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        tr.train(dir.path(), &cfg.snapshot()).unwrap();
        let bundle = load_bundle(&env, dir.path(), "A").unwrap();
        assert_eq!(bundle.tag, "mop-san");
        let obs = vec![0.3; env.obs_dim() + ACTION_COUNT];
        let (p_trained, v_trained) = tr.san.evaluate(&obs).unwrap();
        let (p_loaded, v_loaded) = bundle.san.evaluate(&obs).unwrap();
        assert_eq!(p_trained, p_loaded);
        assert_eq!(v_trained, v_loaded);
        let o = vec![0.2; env.obs_dim()];
        let hist = PartnerHistory::new(2);
        let g_trained = tr.mop.as_ref().unwrap().guide(&o, &hist).unwrap();
        let g_loaded = bundle.mop.as_ref().unwrap().guide(&o, &hist).unwrap();
        assert_eq!(g_trained, g_loaded);
    }

    #[test]
    fn pools_load_from_directories_of_runs() {
        let env = CookGrid::default_kitchen();
        let root = tempfile::tempdir().unwrap();
        for (i, name) in ["A", "B"].iter().enumerate() {
            let mut cfg = ExperimentConfig::parse(tiny_cfg_text()).unwrap();
            cfg.train.seed = i as u64;
            let mut tr = cfg.build_trainer(env.clone()).unwrap();
            tr.train(&root.path().join(name), &cfg.snapshot()).unwrap();
        }
        let pool = load_pool(&env, root.path()).unwrap();
        assert_eq!(pool.entries.len(), 2);
        assert_eq!(pool.entries[0].name, "A");
        assert_eq!(pool.entries[1].name, "B");
        assert!(pool.entries.iter().all(|e| e.mop.is_some()));
    }

    #[test]
    fn divergence_measures_behave_as_expected() {
        let p = vec![1.0, 0.0, 0.0];
        let q = vec![0.0, 1.0, 0.0];
        assert!(jsd(&p, &p).abs() < 1e-12);
        assert!((jsd(&p, &q) - std::f64::consts::LN_2).abs() < 1e-12);
        let r = vec![0.5, 0.5, 0.0];
        let d = jsd(&p, &r);
        assert!(d > 0.0 && d < std::f64::consts::LN_2);

        let env = CookGrid::default_kitchen();
        let states = collect_states(&env, 16, 3);
        assert_eq!(states.len(), 16);
        let cfg = ExperimentConfig::parse(tiny_cfg_text()).unwrap();
        let tr = cfg.build_trainer(env).unwrap();
        let j = mean_pairwise_jsd(tr.mop.as_ref().unwrap(), &states).unwrap();
        assert!(j.is_finite() && j >= 0.0);
    }

    #[test]
    fn axis_values_match_the_protocol() {
        assert_eq!(axis_values("personality_k").unwrap(), vec!["6", "8", "10", "12"]);
        assert_eq!(axis_values("context_size").unwrap(), vec!["0", "1", "3", "5"]);
        assert_eq!(axis_values("dpp").unwrap(), vec!["on", "off"]);
        assert_eq!(axis_values("context_encoder").unwrap(), vec!["on", "off"]);
        assert!(axis_values("flavor").is_err());

        let mut cfg = ExperimentConfig::default();
        apply_axis_value(&mut cfg, "personality_k", "8").unwrap();
        assert_eq!(cfg.mop_k, 8);
        apply_axis_value(&mut cfg, "dpp", "off").unwrap();
        assert!(!cfg.dpp_enabled);
        apply_axis_value(&mut cfg, "context_encoder", "off").unwrap();
        assert_eq!(cfg.context_size, 0);
        assert!(apply_axis_value(&mut cfg, "dpp", "sideways").is_err());
    }

    #[test]
    fn tiny_ablation_sweep_builds_a_full_table() {
        let mut base = ExperimentConfig::parse(tiny_cfg_text()).unwrap();
        base.ablate_seeds = 1;
        base.eval_episodes = 1;
        let out = tempfile::tempdir().unwrap();
        let table = ablate("dpp", &base, out.path()).unwrap();
        assert_eq!(table.rows.len(), 2);
        assert_eq!(table.rows[0].label, "dpp=on");
        assert_eq!(table.rows[1].label, "dpp=off");
        assert!(table.rows.iter().all(|r| r.seeds.len() == 1));
        assert!(out.path().join("dpp-on/seed-0/metrics.jsonl").exists());
        assert!(out.path().join("dpp-off/seed-0/config.snapshot").exists());
        let dir = tempfile::tempdir().unwrap();
        write_table_reports(&table, dir.path()).unwrap();
        let text = fs::read_to_string(dir.path().join("table.json")).unwrap();
        let parsed: AblationTable = serde_json::from_str(&text).unwrap();
        assert_eq!(parsed, table);
        let _ = Method::MopSan;
    }
}
