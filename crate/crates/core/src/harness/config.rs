//! Flat `key = value` experiment configuration.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::catalog::SyntheticSpec;
use crate::embeddings::PretrainConfig;
use crate::estimation::UseConfig;
use crate::nn::NetDims;
use crate::optim::AdamConfig;
use crate::policy::AgentConfig;
use crate::simulator::{Mode, RewardConfig, SessionConfig};

use super::HarnessError;

/// Where the catalog comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CatalogSource {
    Synthetic(SyntheticSpec),
    Directory(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub catalog: CatalogSource,
    /// Pretrained embedding file; pretrained on the fly when absent.
    pub embeddings: Option<PathBuf>,
    pub pretrain: PretrainConfig,
    pub mode: Mode,
    pub max_turns: usize,
    pub episodes: usize,
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub test_episodes: usize,
    pub rewards: RewardConfig,
    pub use_cfg: UseConfig,
    pub top_n: usize,
    pub ask_k: usize,
    pub batch: usize,
    pub lr: f64,
    pub l2: f64,
    pub buffer: usize,
    pub rl_gamma: f64,
    pub tau: f64,
    pub per_alpha: f64,
    pub per_beta_start: f64,
    pub per_beta_end: f64,
    pub eps_start: f64,
    pub eps_end: f64,
    /// Fraction of training episodes over which exploration decays.
    pub eps_fraction: f64,
    pub sample_cap: usize,
    pub hidden: usize,
    pub vague_ratio: f64,
    pub click_prob: f64,
    /// Items per simulated conversation.
    pub group_size: usize,
    pub split_seed: u64,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let agent = AgentConfig::default();
        ExperimentConfig {
            catalog: CatalogSource::Synthetic(SyntheticSpec::new(200, 500, 50, 8, 7)),
            embeddings: None,
            pretrain: PretrainConfig::default(),
            mode: Mode::Vpmcr,
            max_turns: 15,
            episodes: 10_000,
            eval_every: 200,
            eval_episodes: 200,
            test_episodes: 500,
            rewards: RewardConfig::default(),
            use_cfg: UseConfig::default(),
            top_n: agent.top_n,
            ask_k: agent.ask_k,
            batch: agent.batch,
            lr: agent.adam.lr,
            l2: agent.adam.l2,
            buffer: agent.buffer,
            rl_gamma: agent.rl_gamma,
            tau: agent.tau,
            per_alpha: agent.per_alpha,
            per_beta_start: 0.4,
            per_beta_end: 1.0,
            eps_start: 1.0,
            eps_end: 0.01,
            eps_fraction: 0.2,
            sample_cap: agent.sample_cap,
            hidden: agent.dims.hidden,
            vague_ratio: 0.5,
            click_prob: 0.5,
            group_size: 2,
            split_seed: 0,
            seeds: vec![0],
            output_dir: PathBuf::from("runs"),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, HarnessError> {
    value.parse().map_err(|_| HarnessError::Config(format!("bad value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, HarnessError> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(HarnessError::Config(format!("bad boolean {value:?} for {key}"))),
    }
}

fn parse_range(key: &str, value: &str) -> Result<(usize, usize), HarnessError> {
    let (a, b) = value
        .split_once([',', '-'])
        .ok_or_else(|| HarnessError::Config(format!("{key} expects lo,hi")))?;
    Ok((parse(key, a.trim())?, parse(key, b.trim())?))
}

impl ExperimentConfig {
    /// Desk-scale defaults: 2,000 training episodes, 500 test episodes.
    pub fn desk() -> Self {
        ExperimentConfig {
            episodes: 2000,
            batch: 32,
            sample_cap: 100,
            ..Default::default()
        }
    }

    fn synthetic_mut(&mut self) -> &mut SyntheticSpec {
        if let CatalogSource::Directory(_) = self.catalog {
            self.catalog = CatalogSource::Synthetic(SyntheticSpec::new(200, 500, 50, 8, 7));
        }
        match &mut self.catalog {
            CatalogSource::Synthetic(s) => s,
            CatalogSource::Directory(_) => unreachable!(),
        }
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), HarnessError> {
        let v = value.trim();
        match key.trim() {
            "catalog" => {
                if v == "synthetic" {
                    self.synthetic_mut();
                } else {
                    self.catalog = CatalogSource::Directory(PathBuf::from(v));
                }
            }
            "n_users" => self.synthetic_mut().n_users = parse(key, v)?,
            "n_items" => self.synthetic_mut().n_items = parse(key, v)?,
            "n_attributes" => self.synthetic_mut().n_attributes = parse(key, v)?,
            "n_types" => self.synthetic_mut().n_types = parse(key, v)?,
            "attrs_per_item" => self.synthetic_mut().attrs_per_item = parse_range(key, v)?,
            "interactions_per_user" => {
                self.synthetic_mut().interactions_per_user = parse_range(key, v)?
            }
            "world_seed" => self.synthetic_mut().seed = parse(key, v)?,
            "popularity_skew" => self.synthetic_mut().popularity_skew = parse(key, v)?,
            "taste_share" => self.synthetic_mut().taste_share = parse(key, v)?,
            "embeddings" => {
                self.embeddings = if v.is_empty() || v == "pretrain" {
                    None
                } else {
                    Some(PathBuf::from(v))
                }
            }
            "embed_dim" => self.pretrain.dim = parse(key, v)?,
            "pretrain_epochs" => self.pretrain.epochs = parse(key, v)?,
            "pretrain_lr" => self.pretrain.lr = parse(key, v)?,
            "pretrain_margin" => self.pretrain.margin = parse(key, v)?,
            "pretrain_seed" => self.pretrain.seed = parse(key, v)?,
            "mode" => self.mode = v.parse().map_err(HarnessError::Config)?,
            "max_turns" => self.max_turns = parse(key, v)?,
            "episodes" => self.episodes = parse(key, v)?,
            "eval_every" => self.eval_every = parse(key, v)?,
            "eval_episodes" => self.eval_episodes = parse(key, v)?,
            "test_episodes" => self.test_episodes = parse(key, v)?,
            "reward_rec_suc" => self.rewards.rec_suc = parse(key, v)?,
            "reward_rec_fail" => self.rewards.rec_fail = parse(key, v)?,
            "reward_ask_suc" => self.rewards.ask_suc = parse(key, v)?,
            "reward_ask_fail" => self.rewards.ask_fail = parse(key, v)?,
            "reward_quit" => self.rewards.quit = parse(key, v)?,
            "use_gamma" => self.use_cfg.decay = parse(key, v)?,
            "lambda_click" => self.use_cfg.lambda_click = parse(key, v)?,
            "lambda_noclick" => self.use_cfg.lambda_noclick = parse(key, v)?,
            "use_personalized" => self.use_cfg.use_personalized = parse_bool(key, v)?,
            "use_average_correction" => self.use_cfg.use_average_correction = parse_bool(key, v)?,
            "use_decay" => self.use_cfg.use_decay = parse_bool(key, v)?,
            "top_n" => self.top_n = parse(key, v)?,
            "ask_k" => self.ask_k = parse(key, v)?,
            "batch" => self.batch = parse(key, v)?,
            "lr" => self.lr = parse(key, v)?,
            "l2" => self.l2 = parse(key, v)?,
            "buffer" => self.buffer = parse(key, v)?,
            "rl_gamma" => self.rl_gamma = parse(key, v)?,
            "tau" => self.tau = parse(key, v)?,
            "per_alpha" => self.per_alpha = parse(key, v)?,
            "per_beta_start" => self.per_beta_start = parse(key, v)?,
            "per_beta_end" => self.per_beta_end = parse(key, v)?,
            "eps_start" => self.eps_start = parse(key, v)?,
            "eps_end" => self.eps_end = parse(key, v)?,
            "eps_fraction" => self.eps_fraction = parse(key, v)?,
            "sample_cap" => self.sample_cap = parse(key, v)?,
            "hidden" => self.hidden = parse(key, v)?,
            "vague_ratio" => self.vague_ratio = parse(key, v)?,
            "click_prob" => self.click_prob = parse(key, v)?,
            "group_size" => self.group_size = parse(key, v)?,
            "split_seed" => self.split_seed = parse(key, v)?,
            "seeds" => {
                self.seeds = v
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| parse(key, s.trim()))
                    .collect::<Result<_, _>>()?
            }
            "output_dir" => self.output_dir = PathBuf::from(v),
            other => return Err(HarnessError::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Parses a flat config body on top of the current values. Blank lines
    /// and `#` comments are ignored.
    pub fn apply_text(&mut self, body: &str) -> Result<(), HarnessError> {
        for (n, line) in body.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                HarnessError::Config(format!("line {}: expected key = value", n + 1))
            })?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        let body = fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::default();
        cfg.apply_text(&body)?;
        Ok(cfg)
    }

    /// `key=value` overrides such as those given on the command line.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<(), HarnessError> {
        for o in overrides {
            let (k, v) = o
                .as_ref()
                .split_once('=')
                .ok_or_else(|| HarnessError::Config(format!("override {:?} lacks '='", o.as_ref())))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    /// Every setting as `key = value`, readable by [`apply_text`](Self::apply_text).
    pub fn to_text(&self) -> String {
        let mut kv: BTreeMap<&str, String> = BTreeMap::new();
        match &self.catalog {
            CatalogSource::Directory(p) => {
                kv.insert("catalog", p.display().to_string());
            }
            CatalogSource::Synthetic(s) => {
                kv.insert("catalog", "synthetic".into());
                kv.insert("n_users", s.n_users.to_string());
                kv.insert("n_items", s.n_items.to_string());
                kv.insert("n_attributes", s.n_attributes.to_string());
                kv.insert("n_types", s.n_types.to_string());
                kv.insert("attrs_per_item", format!("{},{}", s.attrs_per_item.0, s.attrs_per_item.1));
                kv.insert(
                    "interactions_per_user",
                    format!("{},{}", s.interactions_per_user.0, s.interactions_per_user.1),
                );
                kv.insert("world_seed", s.seed.to_string());
                kv.insert("popularity_skew", s.popularity_skew.to_string());
                kv.insert("taste_share", s.taste_share.to_string());
            }
        }
        kv.insert(
            "embeddings",
            self.embeddings
                .as_ref()
                .map_or("pretrain".into(), |p| p.display().to_string()),
        );
        kv.insert("embed_dim", self.pretrain.dim.to_string());
        kv.insert("pretrain_epochs", self.pretrain.epochs.to_string());
        kv.insert("pretrain_lr", self.pretrain.lr.to_string());
        kv.insert("pretrain_margin", self.pretrain.margin.to_string());
        kv.insert("pretrain_seed", self.pretrain.seed.to_string());
        kv.insert("mode", self.mode.to_string());
        kv.insert("max_turns", self.max_turns.to_string());
        kv.insert("episodes", self.episodes.to_string());
        kv.insert("eval_every", self.eval_every.to_string());
        kv.insert("eval_episodes", self.eval_episodes.to_string());
        kv.insert("test_episodes", self.test_episodes.to_string());
        kv.insert("reward_rec_suc", self.rewards.rec_suc.to_string());
        kv.insert("reward_rec_fail", self.rewards.rec_fail.to_string());
        kv.insert("reward_ask_suc", self.rewards.ask_suc.to_string());
        kv.insert("reward_ask_fail", self.rewards.ask_fail.to_string());
        kv.insert("reward_quit", self.rewards.quit.to_string());
        kv.insert("use_gamma", self.use_cfg.decay.to_string());
        kv.insert("lambda_click", self.use_cfg.lambda_click.to_string());
        kv.insert("lambda_noclick", self.use_cfg.lambda_noclick.to_string());
        kv.insert("use_personalized", self.use_cfg.use_personalized.to_string());
        kv.insert("use_average_correction", self.use_cfg.use_average_correction.to_string());
        kv.insert("use_decay", self.use_cfg.use_decay.to_string());
        kv.insert("top_n", self.top_n.to_string());
        kv.insert("ask_k", self.ask_k.to_string());
        kv.insert("batch", self.batch.to_string());
        kv.insert("lr", self.lr.to_string());
        kv.insert("l2", self.l2.to_string());
        kv.insert("buffer", self.buffer.to_string());
        kv.insert("rl_gamma", self.rl_gamma.to_string());
        kv.insert("tau", self.tau.to_string());
        kv.insert("per_alpha", self.per_alpha.to_string());
        kv.insert("per_beta_start", self.per_beta_start.to_string());
        kv.insert("per_beta_end", self.per_beta_end.to_string());
        kv.insert("eps_start", self.eps_start.to_string());
        kv.insert("eps_end", self.eps_end.to_string());
        kv.insert("eps_fraction", self.eps_fraction.to_string());
        kv.insert("sample_cap", self.sample_cap.to_string());
        kv.insert("hidden", self.hidden.to_string());
        kv.insert("vague_ratio", self.vague_ratio.to_string());
        kv.insert("click_prob", self.click_prob.to_string());
        kv.insert("group_size", self.group_size.to_string());
        kv.insert("split_seed", self.split_seed.to_string());
        kv.insert(
            "seeds",
            self.seeds.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(","),
        );
        kv.insert("output_dir", self.output_dir.display().to_string());
        let mut out = String::new();
        for (k, v) in kv {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// Rejects inconsistent settings.
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::Config(m.to_string()));
        if self.max_turns == 0 {
            return bad("max_turns must be positive");
        }
        if self.top_n == 0 || self.ask_k == 0 {
            return bad("top_n and ask_k must be positive");
        }
        if self.batch == 0 || self.buffer < self.batch {
            return bad("batch must be positive and no larger than buffer");
        }
        if !(0.0..=1.0).contains(&self.vague_ratio) || !(0.0..=1.0).contains(&self.click_prob) {
            return bad("vague_ratio and click_prob must lie in [0, 1]");
        }
        if !self.use_cfg.is_valid() {
            return bad("use_gamma must lie in [0, 1] and lambdas be finite");
        }
        if !self.rewards.is_valid() {
            return bad("rewards must be positive for success and negative otherwise");
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required");
        }
        if !(0.0..=1.0).contains(&self.eps_start) || !(0.0..=1.0).contains(&self.eps_end) {
            return bad("exploration rates must lie in [0, 1]");
        }
        if self.sample_cap < self.top_n {
            return bad("sample_cap must be at least top_n");
        }
        Ok(())
    }

    pub fn session_config(&self) -> SessionConfig {
        SessionConfig {
            mode: self.mode,
            max_turns: self.max_turns,
            vague_ratio: self.vague_ratio,
            click_prob: self.click_prob,
            rewards: self.rewards,
        }
    }

    pub fn agent_config(&self, seed: u64) -> AgentConfig {
        AgentConfig {
            dims: NetDims {
                embed: self.pretrain.dim,
                hidden: self.hidden,
                max_seq: self.max_turns * self.ask_k,
            },
            top_n: self.top_n,
            ask_k: self.ask_k,
            sample_cap: self.sample_cap,
            rl_gamma: self.rl_gamma,
            tau: self.tau,
            batch: self.batch,
            buffer: self.buffer,
            per_alpha: self.per_alpha,
            adam: AdamConfig {
                lr: self.lr,
                l2: self.l2,
                ..AdamConfig::default()
            },
            use_cfg: self.use_cfg,
            seed,
        }
    }

    /// Exploration rate for training episode `ep` (0-based).
    pub fn epsilon(&self, ep: usize) -> f64 {
        let span = (self.episodes as f64 * self.eps_fraction).max(1.0);
        crate::replay::linear_schedule(self.eps_start, self.eps_end, ep as f64 / span)
    }

    /// Importance exponent for training episode `ep`.
    pub fn beta(&self, ep: usize) -> f64 {
        let span = (self.episodes.max(2) - 1) as f64;
        crate::replay::linear_schedule(self.per_beta_start, self.per_beta_end, ep as f64 / span)
    }
}
