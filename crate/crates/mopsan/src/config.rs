//! Flat key=value experiment configuration: parsing with line-level errors,
//! deterministic snapshots that re-parse to the same configuration, seed
//! resolution across CLI, file, and environment sources, and construction of
//! a ready-to-run trainer.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dpp::{DppConfig, DppModel};
use crate::env::{CookGrid, ACTION_COUNT};
use crate::mop::{Mop, MopConfig};
use crate::snn::{LifConfig, SanConfig, SanPolicy};
use crate::trainer::{Method, TrainConfig, TrainError, Trainer};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: expected key=value, got {text:?}")]
    BadLine { line: usize, text: String },
    #[error("line {line}: unknown key {key:?}")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: invalid value {value:?} for {key}: {reason}")]
    BadValue { line: usize, key: String, value: String, reason: String },
}

/// Everything a run needs, resolved from defaults plus overrides. The agent
/// composition is expressed through `spiking` and `mop_enabled`; `method()`
/// names the resulting combination.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub spiking: bool,
    pub mop_enabled: bool,
    pub train: TrainConfig,
    pub san_hidden: [usize; 2],
    pub lif: LifConfig,
    pub context_size: usize,
    pub context_token_dim: usize,
    pub context_heads: usize,
    pub context_inner_dim: usize,
    pub mop_k: usize,
    pub mop_noise_enabled: bool,
    pub mop_hidden: usize,
    pub dpp_enabled: bool,
    pub dpp_feature_dim: usize,
    pub dpp_jitter: f64,
    pub run_dir: String,
    pub ablate_seeds: usize,
    pub eval_episodes: usize,
    /// True once the file or a setter assigned train.seed explicitly.
    pub seed_set: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            spiking: true,
            mop_enabled: true,
            train: TrainConfig::default(),
            san_hidden: [64, 64],
            lif: LifConfig::default(),
            context_size: 5,
            context_token_dim: 64,
            context_heads: 2,
            context_inner_dim: 256,
            mop_k: 12,
            mop_noise_enabled: true,
            mop_hidden: 64,
            dpp_enabled: true,
            dpp_feature_dim: 16,
            dpp_jitter: 1e-6,
            run_dir: String::new(),
            ablate_seeds: 5,
            eval_episodes: 10,
            seed_set: false,
        }
    }
}

enum SetFailure {
    Unknown,
    Bad(String),
}

fn parse_as<T: std::str::FromStr>(value: &str, what: &str) -> Result<T, SetFailure> {
    value
        .parse::<T>()
        .map_err(|_| SetFailure::Bad(format!("expected {what}")))
}

fn parse_bool(value: &str) -> Result<bool, SetFailure> {
    match value {
        "true" | "on" | "1" => Ok(true),
        "false" | "off" | "0" => Ok(false),
        _ => Err(SetFailure::Bad("expected true/false, on/off, or 1/0".to_string())),
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let t = raw.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            let Some((k, v)) = t.split_once('=') else {
                return Err(ConfigError::BadLine { line, text: t.to_string() });
            };
            let key = k.trim();
            let value = v.trim();
            cfg.set(key, value).map_err(|f| match f {
                SetFailure::Unknown => ConfigError::UnknownKey { line, key: key.to_string() },
                SetFailure::Bad(reason) => ConfigError::BadValue {
                    line,
                    key: key.to_string(),
                    value: value.to_string(),
                    reason,
                },
            })?;
        }
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<(), SetFailure> {
        match key {
            "method" => {
                let m = Method::from_tag(value)
                    .ok_or_else(|| SetFailure::Bad("expected dnn, san, or mop-san".to_string()))?;
                self.set_method(m);
            }
            "san.spiking" => self.spiking = parse_bool(value)?,
            "san.hidden" => {
                let parts: Vec<&str> = value.split(',').map(str::trim).collect();
                if parts.len() != 2 {
                    return Err(SetFailure::Bad("expected two comma-separated widths".to_string()));
                }
                self.san_hidden = [
                    parse_as::<usize>(parts[0], "a width")?,
                    parse_as::<usize>(parts[1], "a width")?,
                ];
            }
            "san.tau" => self.lif.tau = parse_as(value, "a number")?,
            "san.dt" => self.lif.dt = parse_as(value, "a number")?,
            "san.v_th" => self.lif.v_threshold = parse_as(value, "a number")?,
            "san.v_reset" => self.lif.v_reset = parse_as(value, "a number")?,
            "san.surrogate_width" => self.lif.surrogate_width = parse_as(value, "a number")?,
            "san.T" => self.lif.steps = parse_as(value, "a step count")?,
            "context.size" => self.context_size = parse_as(value, "a window length")?,
            "context.token_dim" => self.context_token_dim = parse_as(value, "a dimension")?,
            "context.heads" => self.context_heads = parse_as(value, "a head count")?,
            "context.inner_dim" => self.context_inner_dim = parse_as(value, "a dimension")?,
            "mop.enabled" => self.mop_enabled = parse_bool(value)?,
            "mop.k" => self.mop_k = parse_as(value, "a bank size")?,
            "mop.noise_enabled" => self.mop_noise_enabled = parse_bool(value)?,
            "mop.hidden" => self.mop_hidden = parse_as(value, "a width")?,
            "dpp.enabled" => self.dpp_enabled = parse_bool(value)?,
            "dpp.feature_dim" => self.dpp_feature_dim = parse_as(value, "a dimension")?,
            "dpp.jitter" => self.dpp_jitter = parse_as(value, "a number")?,
            "dpp.beta" => self.train.beta = parse_as(value, "a number")?,
            "train.gamma" => self.train.gamma = parse_as(value, "a number")?,
            "train.lr" => self.train.lr = parse_as(value, "a number")?,
            "train.minibatch" => self.train.minibatch = parse_as(value, "a size")?,
            "train.epochs" => self.train.epochs = parse_as(value, "a count")?,
            "train.clip" => self.train.clip = parse_as(value, "a number")?,
            "train.entropy_coef" => self.train.entropy_coef = parse_as(value, "a number")?,
            "train.value_coef" => self.train.value_coef = parse_as(value, "a number")?,
            "train.gae_lambda" => self.train.gae_lambda = parse_as(value, "a number")?,
            "train.eta_period" => self.train.eta_period = parse_as(value, "a count")?,
            "train.rollout_steps" => self.train.rollout_steps = parse_as(value, "a size")?,
            "train.total_steps" => self.train.total_steps = parse_as(value, "a step count")?,
            "train.checkpoint_every" => {
                self.train.checkpoint_every = parse_as(value, "a step count")?
            }
            "train.seed" => {
                self.train.seed = parse_as(value, "an integer")?;
                self.seed_set = true;
            }
            "train.shaping" => self.train.shaping = parse_as(value, "a number")?,
            "train.shaping_horizon" => {
                self.train.shaping_horizon = parse_as(value, "a step count")?
            }
            "train.run_dir" => self.run_dir = value.to_string(),
            "ablate.seeds" => self.ablate_seeds = parse_as(value, "a count")?,
            "eval.episodes" => self.eval_episodes = parse_as(value, "a count")?,
            _ => return Err(SetFailure::Unknown),
        }
        Ok(())
    }

    pub fn set_method(&mut self, m: Method) {
        match m {
            Method::Dnn => {
                self.spiking = false;
                self.mop_enabled = false;
            }
            Method::San => {
                self.spiking = true;
                self.mop_enabled = false;
            }
            Method::MopSan => {
                self.spiking = true;
                self.mop_enabled = true;
            }
        }
    }

    pub fn method(&self) -> Method {
        if self.mop_enabled {
            Method::MopSan
        } else if self.spiking {
            Method::San
        } else {
            Method::Dnn
        }
    }

    /// Pool label distinguishing the ablated variants of the full method.
    pub fn method_tag(&self) -> &'static str {
        match self.method() {
            Method::Dnn => "dnn",
            Method::San => "san",
            Method::MopSan => {
                if !self.dpp_enabled {
                    "mop-san-no-dpp"
                } else if self.context_size == 0 {
                    "mop-san-no-context"
                } else {
                    "mop-san"
                }
            }
        }
    }

    /// CLI seed beats the file's train.seed, which beats the environment
    /// fallback; otherwise the default stands.
    pub fn resolve_seed(&mut self, cli: Option<u64>, env: Option<&str>) {
        if let Some(s) = cli {
            self.train.seed = s;
            self.seed_set = true;
        } else if !self.seed_set {
            if let Some(s) = env.and_then(|v| v.parse::<u64>().ok()) {
                self.train.seed = s;
                self.seed_set = true;
            }
        }
    }

    pub fn resolved_run_dir(&self) -> String {
        if self.run_dir.is_empty() {
            format!("runs/{}-seed{}", self.method_tag(), self.train.seed)
        } else {
            self.run_dir.clone()
        }
    }

    /// Serializes every key in sorted order so identical configurations
    /// produce identical snapshots and snapshots re-parse to equality.
    pub fn snapshot(&self) -> String {
        let mut pairs: Vec<(&str, String)> = vec![
            ("ablate.seeds", self.ablate_seeds.to_string()),
            ("context.heads", self.context_heads.to_string()),
            ("context.inner_dim", self.context_inner_dim.to_string()),
            ("context.size", self.context_size.to_string()),
            ("context.token_dim", self.context_token_dim.to_string()),
            ("dpp.beta", self.train.beta.to_string()),
            ("dpp.enabled", self.dpp_enabled.to_string()),
            ("dpp.feature_dim", self.dpp_feature_dim.to_string()),
            ("dpp.jitter", self.dpp_jitter.to_string()),
            ("eval.episodes", self.eval_episodes.to_string()),
            ("mop.enabled", self.mop_enabled.to_string()),
            ("mop.hidden", self.mop_hidden.to_string()),
            ("mop.k", self.mop_k.to_string()),
            ("mop.noise_enabled", self.mop_noise_enabled.to_string()),
            ("san.T", self.lif.steps.to_string()),
            ("san.dt", self.lif.dt.to_string()),
            ("san.hidden", format!("{},{}", self.san_hidden[0], self.san_hidden[1])),
            ("san.spiking", self.spiking.to_string()),
            ("san.surrogate_width", self.lif.surrogate_width.to_string()),
            ("san.tau", self.lif.tau.to_string()),
            ("san.v_reset", self.lif.v_reset.to_string()),
            ("san.v_th", self.lif.v_threshold.to_string()),
            ("train.checkpoint_every", self.train.checkpoint_every.to_string()),
            ("train.clip", self.train.clip.to_string()),
            ("train.entropy_coef", self.train.entropy_coef.to_string()),
            ("train.epochs", self.train.epochs.to_string()),
            ("train.eta_period", self.train.eta_period.to_string()),
            ("train.gae_lambda", self.train.gae_lambda.to_string()),
            ("train.gamma", self.train.gamma.to_string()),
            ("train.lr", self.train.lr.to_string()),
            ("train.minibatch", self.train.minibatch.to_string()),
            ("train.rollout_steps", self.train.rollout_steps.to_string()),
            ("train.seed", self.train.seed.to_string()),
            ("train.shaping", self.train.shaping.to_string()),
            ("train.shaping_horizon", self.train.shaping_horizon.to_string()),
            ("train.total_steps", self.train.total_steps.to_string()),
            ("train.value_coef", self.train.value_coef.to_string()),
        ];
        if !self.run_dir.is_empty() {
            pairs.push(("train.run_dir", self.run_dir.clone()));
        }
        pairs.sort_by(|a, b| a.0.cmp(b.0));
        let mut out = String::new();
        for (k, v) in pairs {
            out.push_str(k);
            out.push('=');
            out.push_str(&v);
            out.push('\n');
        }
        out
    }

    pub fn san_config(&self, obs_dim: usize) -> SanConfig {
        let mut c = SanConfig::new(obs_dim + ACTION_COUNT, self.spiking);
        c.hidden = self.san_hidden;
        c.lif = self.lif;
        c
    }

    pub fn mop_config(&self, obs_dim: usize) -> MopConfig {
        let mut c = MopConfig::new(obs_dim, self.context_size).with_personalities(self.mop_k);
        c.hidden = self.mop_hidden;
        c.noise_enabled = self.mop_noise_enabled;
        c.context.model_dim = self.context_token_dim;
        c.context.heads = self.context_heads;
        c.context.ff_dim = self.context_inner_dim;
        c
    }

    pub fn dpp_config(&self) -> Option<DppConfig> {
        (self.mop_enabled && self.dpp_enabled).then(|| DppConfig {
            feature_dim: self.dpp_feature_dim,
            jitter: self.dpp_jitter,
            ..DppConfig::default()
        })
    }

    pub fn build_trainer(&self, env: CookGrid) -> Result<Trainer, TrainError> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.train.seed);
        let san = SanPolicy::new(self.san_config(env.obs_dim()), &mut rng)?;
        let (mop, dpp) = if self.mop_enabled {
            let mop = Mop::init(self.mop_config(env.obs_dim()), &mut rng)?;
            let dpp = match self.dpp_config() {
                Some(dc) => Some(DppModel::init(dc, &mut rng)?),
                None => None,
            };
            (Some(mop), dpp)
        } else {
            (None, None)
        };
        Trainer::with_components(env, self.method(), self.train.clone(), san, mop, dpp)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_yields_the_defaults() {
        let cfg = ExperimentConfig::parse("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.method(), Method::MopSan);
        assert_eq!(cfg.method_tag(), "mop-san");
        assert_eq!(cfg.mop_k, 12);
        assert_eq!(cfg.context_size, 5);
        assert!((cfg.train.beta - 0.5).abs() < 1e-15);
    }

    #[test]
    fn comments_and_blank_lines_are_skipped() {
        let cfg = ExperimentConfig::parse("# a comment\n\n  \nmop.k = 8\n").unwrap();
        assert_eq!(cfg.mop_k, 8);
    }

    #[test]
    fn every_documented_key_round_trips() {
        let text = "\
method=mop-san
san.hidden=32,48
san.tau=3
san.dt=0.5
san.v_th=0.6
san.v_reset=0.1
san.surrogate_width=0.4
san.T=6
context.size=3
context.token_dim=32
context.heads=4
context.inner_dim=128
mop.k=8
mop.noise_enabled=off
mop.hidden=48
dpp.enabled=true
dpp.feature_dim=12
dpp.jitter=0.00001
dpp.beta=0.25
train.gamma=0.95
train.lr=0.001
train.minibatch=32
train.epochs=2
train.clip=0.1
train.entropy_coef=0.02
train.value_coef=0.4
train.gae_lambda=0.9
train.eta_period=5
train.rollout_steps=256
train.total_steps=5000
train.checkpoint_every=1000
train.seed=17
train.shaping=0.5
train.shaping_horizon=4000
train.run_dir=runs/demo
ablate.seeds=3
eval.episodes=4
";
        let cfg = ExperimentConfig::parse(text).unwrap();
        assert_eq!(cfg.san_hidden, [32, 48]);
        assert_eq!(cfg.lif.steps, 6);
        assert_eq!(cfg.context_heads, 4);
        assert!(!cfg.mop_noise_enabled);
        assert!((cfg.train.beta - 0.25).abs() < 1e-15);
        assert_eq!(cfg.train.seed, 17);
        assert_eq!(cfg.run_dir, "runs/demo");
        let reparsed = ExperimentConfig::parse(&cfg.snapshot()).unwrap();
        assert_eq!(reparsed, cfg);
        assert_eq!(reparsed.snapshot(), cfg.snapshot());
    }

    #[test]
    fn bad_input_is_rejected_with_line_numbers() {
        match ExperimentConfig::parse("mop.k=8\nnot a pair\n").unwrap_err() {
            ConfigError::BadLine { line, .. } => assert_eq!(line, 2),
            other => panic!("wrong error: {other}"),
        }
        match ExperimentConfig::parse("nonsense.key=1\n").unwrap_err() {
            ConfigError::UnknownKey { line, key } => {
                assert_eq!(line, 1);
                assert_eq!(key, "nonsense.key");
            }
            other => panic!("wrong error: {other}"),
        }
        match ExperimentConfig::parse("train.lr=fast\n").unwrap_err() {
            ConfigError::BadValue { key, value, .. } => {
                assert_eq!(key, "train.lr");
                assert_eq!(value, "fast");
            }
            other => panic!("wrong error: {other}"),
        }
    }

    #[test]
    fn method_tags_follow_the_flags() {
        let mut cfg = ExperimentConfig::default();
        assert_eq!(cfg.method_tag(), "mop-san");
        cfg.dpp_enabled = false;
        assert_eq!(cfg.method_tag(), "mop-san-no-dpp");
        cfg.dpp_enabled = true;
        cfg.context_size = 0;
        assert_eq!(cfg.method_tag(), "mop-san-no-context");

        let cfg = ExperimentConfig::parse("method=dnn\n").unwrap();
        assert_eq!(cfg.method(), Method::Dnn);
        assert!(!cfg.spiking);
        assert_eq!(cfg.method_tag(), "dnn");
        let cfg = ExperimentConfig::parse("method=san\n").unwrap();
        assert_eq!(cfg.method(), Method::San);
        assert!(cfg.spiking);
        assert_eq!(cfg.method_tag(), "san");
        let cfg = ExperimentConfig::parse("san.spiking=false\nmop.enabled=false\n").unwrap();
        assert_eq!(cfg.method(), Method::Dnn);
    }

    #[test]
    fn seed_resolution_prefers_cli_then_file_then_env() {
        let mut cfg = ExperimentConfig::parse("train.seed=5\n").unwrap();
        cfg.resolve_seed(Some(9), Some("3"));
        assert_eq!(cfg.train.seed, 9);

        let mut cfg = ExperimentConfig::parse("train.seed=5\n").unwrap();
        cfg.resolve_seed(None, Some("3"));
        assert_eq!(cfg.train.seed, 5);

        let mut cfg = ExperimentConfig::parse("").unwrap();
        cfg.resolve_seed(None, Some("3"));
        assert_eq!(cfg.train.seed, 3);

        let mut cfg = ExperimentConfig::parse("").unwrap();
        cfg.resolve_seed(None, None);
        assert_eq!(cfg.train.seed, 0);
    }

    #[test]
    fn built_trainers_match_the_requested_composition() {
        let text = "\
mop.k=4
mop.hidden=16
context.size=2
context.token_dim=16
context.inner_dim=24
dpp.feature_dim=8
train.rollout_steps=32
train.minibatch=16
train.total_steps=32
";
        let cfg = ExperimentConfig::parse(text).unwrap();
        let tr = cfg.build_trainer(CookGrid::default_kitchen()).unwrap();
        assert!(tr.san.cfg.spiking);
        assert_eq!(tr.mop.as_ref().unwrap().cfg.personalities, 4);
        assert_eq!(tr.mop.as_ref().unwrap().cfg.context.capacity, 2);
        assert_eq!(tr.dpp.as_ref().unwrap().cfg.feature_dim, 8);

        let cfg = ExperimentConfig::parse(&format!("{text}dpp.enabled=false\n")).unwrap();
        let tr = cfg.build_trainer(CookGrid::default_kitchen()).unwrap();
        assert!(tr.mop.is_some());
        assert!(tr.dpp.is_none());

        let cfg = ExperimentConfig::parse("method=dnn\ntrain.rollout_steps=32\ntrain.minibatch=16\n").unwrap();
        let tr = cfg.build_trainer(CookGrid::default_kitchen()).unwrap();
        assert!(!tr.san.cfg.spiking);
        assert!(tr.mop.is_none());
    }
}
