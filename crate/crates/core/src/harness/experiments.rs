//! Ablation tables and hyperparameter sweeps.

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;
use crate::simulator::Mode;

use super::baselines::MaxEntropy;
use super::config::ExperimentConfig;
use super::runner::{evaluate_agent, evaluate_policy, train, TrainLog, World};
use super::HarnessError;

/// Estimator switches of one ablation variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationFlags {
    pub use_personalized: bool,
    pub use_average_correction: bool,
    pub use_decay: bool,
}

impl AblationFlags {
    pub const FULL: AblationFlags = AblationFlags {
        use_personalized: true,
        use_average_correction: true,
        use_decay: true,
    };

    pub fn label(&self) -> String {
        let mut off = Vec::new();
        if !self.use_personalized {
            off.push("personalized");
        }
        if !self.use_average_correction {
            off.push("average");
        }
        if !self.use_decay {
            off.push("decay");
        }
        if off.is_empty() {
            "full".to_string()
        } else {
            format!("w/o {}", off.join("+"))
        }
    }

    pub fn apply(&self, cfg: &mut ExperimentConfig) {
        cfg.use_cfg.use_personalized = self.use_personalized;
        cfg.use_cfg.use_average_correction = self.use_average_correction;
        cfg.use_cfg.use_decay = self.use_decay;
    }
}

/// Full model and the three single-switch removals.
pub fn standard_variants() -> Vec<AblationFlags> {
    let f = AblationFlags::FULL;
    vec![
        f,
        AblationFlags {
            use_personalized: false,
            ..f
        },
        AblationFlags {
            use_average_correction: false,
            ..f
        },
        AblationFlags { use_decay: false, ..f },
    ]
}

/// Seed-averaged test metrics of one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub variant: String,
    pub mode: Mode,
    pub seeds: usize,
    pub sr: f64,
    pub at: f64,
    pub hdcg: f64,
    pub target_filtered: f64,
}

/// Seed offset of the test rollouts, shared by every variant.
pub const TEST_SEED: u64 = 0x7e57;

/// Trains one agent per seed and evaluates each greedily on the test pairs.
pub fn run_config<T: Scalar>(
    label: &str,
    cfg: &ExperimentConfig,
    world: &World<T>,
) -> Result<ResultRow, HarnessError> {
    Ok(run_config_logged(label, cfg, world)?.0)
}

/// [`run_config`] plus the training log of every seed.
pub fn run_config_logged<T: Scalar>(
    label: &str,
    cfg: &ExperimentConfig,
    world: &World<T>,
) -> Result<(ResultRow, Vec<TrainLog>), HarnessError> {
    let mut rows = Vec::new();
    let mut logs = Vec::new();
    for seed in &cfg.seeds {
        let (agent, log) = train(cfg, world, *seed)?;
        logs.push(log);
        let (m, _) = evaluate_agent(
            &agent,
            world,
            cfg,
            &world.split.test,
            cfg.test_episodes,
            TEST_SEED + seed,
        )?;
        rows.push(m);
    }
    Ok((average(label, cfg.mode, &rows), logs))
}

/// The Max-Entropy baseline under the same seeds and test rollouts.
pub fn run_baseline<T: Scalar>(cfg: &ExperimentConfig, world: &World<T>) -> Result<ResultRow, HarnessError> {
    let mut rows = Vec::new();
    for seed in &cfg.seeds {
        let mut policy = MaxEntropy {
            n: cfg.top_n,
            k: cfg.ask_k,
        };
        let (m, _) = evaluate_policy(
            &mut policy,
            world.catalog(),
            &world.split.test,
            cfg.test_episodes,
            &cfg.session_config(),
            cfg.top_n,
            TEST_SEED + seed,
        )?;
        rows.push(m);
    }
    Ok(average("max_entropy", cfg.mode, &rows))
}

fn average(label: &str, mode: Mode, rows: &[super::Metrics]) -> ResultRow {
    let n = rows.len().max(1) as f64;
    let mean = |f: fn(&super::Metrics) -> f64| rows.iter().map(f).sum::<f64>() / n;
    ResultRow {
        variant: label.to_string(),
        mode,
        seeds: rows.len(),
        sr: mean(|m| m.sr),
        at: mean(|m| m.at),
        hdcg: mean(|m| m.hdcg),
        target_filtered: mean(|m| m.target_filtered),
    }
}

/// One row per variant per mode, with every variant trained under the same
/// seeds and evaluated on the same test rollouts.
pub fn run_ablation<T: Scalar>(
    cfg: &ExperimentConfig,
    world: &World<T>,
    variants: &[AblationFlags],
    modes: &[Mode],
) -> Result<Vec<ResultRow>, HarnessError> {
    let mut out = Vec::new();
    for mode in modes {
        for flags in variants {
            let mut c = cfg.clone();
            c.mode = *mode;
            flags.apply(&mut c);
            out.push(run_config(&flags.label(), &c, world)?);
        }
    }
    Ok(out)
}

/// A grid over one estimator or simulator setting.
#[derive(Debug, Clone, PartialEq)]
pub enum SweepAxis {
    Decay(Vec<f64>),
    VagueRatio(Vec<f64>),
    /// Click and non-click weights, crossed.
    Lambdas(Vec<f64>, Vec<f64>),
}

impl SweepAxis {
    /// Labelled configurations derived from `base`.
    pub fn configs(&self, base: &ExperimentConfig) -> Vec<(String, ExperimentConfig)> {
        match self {
            SweepAxis::Decay(vals) => vals
                .iter()
                .map(|g| {
                    let mut c = base.clone();
                    c.use_cfg.decay = *g;
                    (format!("use_gamma={g}"), c)
                })
                .collect(),
            SweepAxis::VagueRatio(vals) => vals
                .iter()
                .map(|r| {
                    let mut c = base.clone();
                    c.vague_ratio = *r;
                    (format!("vague_ratio={r}"), c)
                })
                .collect(),
            SweepAxis::Lambdas(clicks, noclicks) => clicks
                .iter()
                .flat_map(|l1| noclicks.iter().map(move |l2| (*l1, *l2)))
                .map(|(l1, l2)| {
                    let mut c = base.clone();
                    c.use_cfg.lambda_click = l1;
                    c.use_cfg.lambda_noclick = l2;
                    (format!("lambda_click={l1},lambda_noclick={l2}"), c)
                })
                .collect(),
        }
    }
}

pub fn run_sweep<T: Scalar>(
    base: &ExperimentConfig,
    world: &World<T>,
    axis: &SweepAxis,
) -> Result<Vec<ResultRow>, HarnessError> {
    axis.configs(base)
        .iter()
        .map(|(label, c)| run_config(label, c, world))
        .collect()
}
