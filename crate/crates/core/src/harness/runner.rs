//! Episode loop, training and evaluation.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::{generate_synthetic, load_catalog, simulation_pairs, split_pairs, Catalog};
use crate::catalog::{PairSplit, SimulationPair};
use crate::embeddings::{pretrain_translational, EmbeddingTable};
use crate::estimation::SoftEstimator;
use crate::policy::{Agent, Knowledge, SystemAction, Transition};
use crate::scalar::Scalar;
use crate::simulator::{new_session, SessionConfig, SessionState, SimError};

use super::baselines::{ConversationPolicy, GreedyAgent};
use super::config::{CatalogSource, ExperimentConfig};
use super::metrics::{compute_metrics, records_to_jsonl, EpisodeRecord, Metrics};
use super::HarnessError;

/// Independent random streams derived from one seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    TrainPairs = 1,
    TrainSession = 2,
    TrainGraph = 3,
    TrainExplore = 4,
    EvalSession = 5,
    EvalPolicy = 6,
    Validation = 7,
}

/// SplitMix-style mixing of `(seed, stream, index)` into a fresh seed.
pub fn derive_seed(seed: u64, stream: Stream, index: u64) -> u64 {
    let mut z = seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((stream as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9))
        .wrapping_add(index.wrapping_mul(0x94D0_49BB_1331_11EB))
        .wrapping_add(0x2545_F491_4F6C_DD1D);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Catalog, embeddings and the simulation-pair split shared by every run.
#[derive(Debug, Clone)]
pub struct World<T> {
    pub know: Knowledge<T>,
    pub split: PairSplit,
}

impl<T: Scalar> World<T> {
    pub fn build(cfg: &ExperimentConfig) -> Result<Self, HarnessError> {
        let catalog = match &cfg.catalog {
            CatalogSource::Synthetic(spec) => generate_synthetic(spec)?,
            CatalogSource::Directory(dir) => load_catalog(dir)?,
        };
        let table = match &cfg.embeddings {
            Some(path) => EmbeddingTable::load(path)?,
            None => pretrain_translational::<T>(&catalog, &cfg.pretrain)?.table,
        };
        Self::from_parts(catalog, table, cfg)
    }

    pub fn from_parts(
        catalog: Catalog,
        table: EmbeddingTable<T>,
        cfg: &ExperimentConfig,
    ) -> Result<Self, HarnessError> {
        if !table.covers(&catalog) {
            return Err(HarnessError::Config("embedding table does not cover the catalog".into()));
        }
        if table.dim() != cfg.pretrain.dim {
            return Err(HarnessError::Config(format!(
                "embedding width {} differs from embed_dim {}",
                table.dim(),
                cfg.pretrain.dim
            )));
        }
        let split = split_pairs(simulation_pairs(&catalog, cfg.group_size), cfg.split_seed);
        Ok(World {
            know: Knowledge::new(catalog, table),
            split,
        })
    }

    pub fn catalog(&self) -> &Catalog {
        &self.know.catalog
    }
}

/// Plays `action` and returns the turn's reward.
pub fn apply_action(
    session: &mut SessionState,
    catalog: &Catalog,
    action: &SystemAction,
) -> Result<f64, SimError> {
    match action {
        SystemAction::Ask { attr_type, attrs } => {
            session.respond_to_question(catalog, *attr_type, attrs)?;
        }
        SystemAction::Recommend { items } => {
            session.respond_to_recommendation(catalog, items)?;
        }
    }
    Ok(session.last_reward().expect("turn recorded"))
}

/// Summarises a finished session.
pub fn episode_record(episode: usize, session: &SessionState) -> EpisodeRecord {
    use crate::simulator::Outcome;
    let (success, turns, rank) = match session.conv.outcome() {
        Outcome::Success { turn, rank } => (true, turn, Some(rank)),
        _ => (false, session.conv.turn(), None),
    };
    EpisodeRecord {
        episode,
        user: session.conv.user(),
        targets: session.user.targets.clone(),
        p0: session.conv.p0(),
        success,
        turns,
        rank,
        target_filtered: session.target_filtered(),
        transcript: session.conv.history().to_vec(),
    }
}

/// Runs `policy` until the session ends.
pub fn run_episode<P: ConversationPolicy + ?Sized>(
    policy: &mut P,
    catalog: &Catalog,
    session: &mut SessionState,
    rng: &mut ChaCha8Rng,
) -> Result<(), HarnessError> {
    policy.begin_episode(&session.conv);
    while !session.is_done() {
        let action = policy.act(&session.conv, catalog, rng)?;
        apply_action(session, catalog, &action)?;
    }
    Ok(())
}

/// Greedy rollouts of `policy`: episode `i` simulates `pairs[i % len]` with
/// seeds derived from `(seed, i)`, so different policies face the same
/// users, targets and opening attributes.
pub fn evaluate_policy<P: ConversationPolicy + ?Sized>(
    policy: &mut P,
    catalog: &Catalog,
    pairs: &[SimulationPair],
    episodes: usize,
    session_cfg: &SessionConfig,
    max_rank: usize,
    seed: u64,
) -> Result<(Metrics, Vec<EpisodeRecord>), HarnessError> {
    if pairs.is_empty() {
        return Err(HarnessError::NoPairs("evaluation"));
    }
    let mut records = Vec::with_capacity(episodes);
    for i in 0..episodes {
        let pair = &pairs[i % pairs.len()];
        let mut session = new_session(
            catalog,
            pair.user,
            &pair.items,
            session_cfg,
            derive_seed(seed, Stream::EvalSession, i as u64),
        )?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, Stream::EvalPolicy, i as u64));
        run_episode(policy, catalog, &mut session, &mut rng)?;
        records.push(episode_record(i, &session));
    }
    let metrics = compute_metrics(&records, session_cfg.max_turns, max_rank);
    Ok((metrics, records))
}

/// Greedy evaluation of a trained agent on `pairs`.
pub fn evaluate_agent<T: Scalar>(
    agent: &Agent<T>,
    world: &World<T>,
    cfg: &ExperimentConfig,
    pairs: &[SimulationPair],
    episodes: usize,
    seed: u64,
) -> Result<(Metrics, Vec<EpisodeRecord>), HarnessError> {
    let mut policy = GreedyAgent::new(agent, &world.know);
    evaluate_policy(
        &mut policy,
        world.catalog(),
        pairs,
        episodes,
        &cfg.session_config(),
        cfg.top_n,
        seed,
    )
}

/// One training episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub episode: usize,
    pub epsilon: f64,
    pub transitions: usize,
    pub reward: f64,
    pub success: bool,
    pub updates: u64,
    /// Mean loss of the gradient steps taken during the episode.
    pub mean_loss: Option<f64>,
}

/// Periodic held-out evaluation during training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub episode: usize,
    pub sr: f64,
    pub at: f64,
    pub hdcg: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub episodes: Vec<EpisodeLog>,
    pub evals: Vec<EvalRow>,
}

/// Online training for `cfg.episodes` episodes with one gradient step per
/// turn once the buffer holds a batch. Deterministic for a given seed.
pub fn train<T: Scalar>(
    cfg: &ExperimentConfig,
    world: &World<T>,
    seed: u64,
) -> Result<(Agent<T>, TrainLog), HarnessError> {
    cfg.validate()?;
    let pairs = &world.split.train;
    if pairs.is_empty() {
        return Err(HarnessError::NoPairs("training"));
    }
    let know = &world.know;
    let catalog = world.catalog();
    let session_cfg = cfg.session_config();
    let mut agent = Agent::new(cfg.agent_config(seed));
    let mut pick = ChaCha8Rng::seed_from_u64(derive_seed(seed, Stream::TrainPairs, 0));
    let mut log = TrainLog::default();

    for ep in 0..cfg.episodes {
        let pair = &pairs[pick.gen_range(0..pairs.len())];
        let mut session = new_session(
            catalog,
            pair.user,
            &pair.items,
            &session_cfg,
            derive_seed(seed, Stream::TrainSession, ep as u64),
        )?;
        let mut graph_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, Stream::TrainGraph, ep as u64));
        let mut explore = ChaCha8Rng::seed_from_u64(derive_seed(seed, Stream::TrainExplore, ep as u64));
        let mut estimator = SoftEstimator::new(cfg.use_cfg);
        let eps = cfg.epsilon(ep);
        let beta = cfg.beta(ep);

        let mut obs = agent.observe(&session.conv, know, &mut estimator, &mut graph_rng);
        let mut transitions = 0;
        let mut total_reward = 0.0;
        let mut losses = Vec::new();
        loop {
            let decision = agent.decide(know, &obs.state, eps, &mut explore)?;
            let reward = apply_action(&mut session, catalog, &decision.system)?;
            total_reward += reward;
            let next = if session.is_done() {
                None
            } else {
                Some(agent.observe(&session.conv, know, &mut estimator, &mut graph_rng))
            };
            agent.remember(Transition {
                state: obs.state.clone(),
                action: decision.chosen,
                reward: T::of(reward),
                next: next.as_ref().map(|o| o.state.clone()),
            });
            transitions += 1;
            if let Some(stats) = agent.learn(know, beta) {
                losses.push(stats.loss);
            }
            match next {
                Some(o) => obs = o,
                None => break,
            }
        }
        log.episodes.push(EpisodeLog {
            episode: ep,
            epsilon: eps,
            transitions,
            reward: total_reward,
            success: matches!(session.conv.outcome(), crate::simulator::Outcome::Success { .. }),
            updates: agent.updates(),
            mean_loss: (!losses.is_empty()).then(|| losses.iter().sum::<f64>() / losses.len() as f64),
        });

        if cfg.eval_every > 0 && (ep + 1) % cfg.eval_every == 0 && !world.split.valid.is_empty() {
            let (m, _) = evaluate_agent(
                &agent,
                world,
                cfg,
                &world.split.valid,
                cfg.eval_episodes,
                derive_seed(seed, Stream::Validation, 0),
            )?;
            log.evals.push(EvalRow {
                episode: ep + 1,
                sr: m.sr,
                at: m.at,
                hdcg: m.hdcg,
            });
        }
    }
    Ok((agent, log))
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn write_jsonl(path: impl AsRef<Path>, records: &[EpisodeRecord]) -> Result<(), HarnessError> {
    let path = path.as_ref();
    fs::write(path, records_to_jsonl(records)).map_err(io_err(path))
}

/// Writes serializable rows as CSV with a header.
pub fn write_csv<S: Serialize>(path: impl AsRef<Path>, rows: &[S]) -> Result<(), HarnessError> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(io_err(path))
}
