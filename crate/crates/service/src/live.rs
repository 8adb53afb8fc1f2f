//! Live conversations between a human and a trained agent, independent of
//! the HTTP layer.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use vaguecrs::estimation::{attribute_distribution, item_distribution, SoftEstimator, UseConfig};
use vaguecrs::policy::{infer_system_action, state_q_values, Agent, Knowledge, SystemAction};
use vaguecrs::simulator::{Conversation, Mode, Outcome, RewardConfig};
use vaguecrs::{AttrId, Catalog, ItemId, TypeId, UserId};

use crate::ServiceError;

#[derive(Debug, Clone)]
pub struct Settings {
    pub max_turns: usize,
    /// Items and attributes per distribution snapshot.
    pub snapshot_k: usize,
    /// Idle time after which a session rejects answers.
    pub ttl: Duration,
    /// Catalog user whose embedding stands in for the human.
    pub user: UserId,
    /// Seed of every session's graph-sampling stream.
    pub seed: u64,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            max_turns: 15,
            snapshot_k: 10,
            ttl: Duration::from_secs(30 * 60),
            user: UserId(0),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scored {
    pub id: String,
    pub score: f64,
}

/// Top-scored items and attributes at the start of a turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    /// Completed turns when the snapshot was taken.
    pub turn: usize,
    pub n_cand: usize,
    pub items: Vec<Scored>,
    pub attributes: Vec<Scored>,
}

/// Every candidate's score, ascending by id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullDistribution {
    pub items: Vec<Scored>,
    pub attributes: Vec<Scored>,
}

fn scored<K: ToString>(entries: &[(K, f32)]) -> Vec<Scored> {
    entries
        .iter()
        .map(|(k, s)| Scored {
            id: k.to_string(),
            score: f64::from(*s),
        })
        .collect()
}

pub fn snapshot(conv: &Conversation, table: &vaguecrs::EmbeddingTable32, cfg: &UseConfig, k: usize) -> Snapshot {
    Snapshot {
        turn: conv.turn(),
        n_cand: conv.v_cand().len(),
        items: scored(&item_distribution(conv, table, cfg).top(k)),
        attributes: scored(&attribute_distribution(conv, table, cfg).top(k)),
    }
}

pub fn full_distribution(conv: &Conversation, table: &vaguecrs::EmbeddingTable32, cfg: &UseConfig) -> FullDistribution {
    FullDistribution {
        items: scored(&item_distribution(conv, table, cfg).entries),
        attributes: scored(&attribute_distribution(conv, table, cfg).entries),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ActionView {
    Ask {
        attr_type: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        type_name: Option<String>,
        attributes: Vec<String>,
    },
    Recommend {
        items: Vec<String>,
    },
}

fn strings<K: ToString>(ids: &[K]) -> Vec<String> {
    ids.iter().map(|k| k.to_string()).collect()
}

fn parse_id(class: &str, s: &str) -> Result<u32, ServiceError> {
    s.trim()
        .parse()
        .map_err(|_| ServiceError::BadRequest(format!("{class} id {s:?} is not a non-negative integer")))
}

fn parse_ids<K>(class: &str, ids: &[String], wrap: fn(u32) -> K) -> Result<Vec<K>, ServiceError> {
    ids.iter().map(|s| parse_id(class, s).map(wrap)).collect()
}

impl ActionView {
    pub fn new(action: &SystemAction, catalog: &Catalog) -> Self {
        match action {
            SystemAction::Ask { attr_type, attrs } => ActionView::Ask {
                attr_type: attr_type.to_string(),
                type_name: catalog.type_name(*attr_type).map(str::to_string),
                attributes: strings(attrs),
            },
            SystemAction::Recommend { items } => ActionView::Recommend { items: strings(items) },
        }
    }

    pub fn to_system(&self) -> Result<SystemAction, ServiceError> {
        Ok(match self {
            ActionView::Ask {
                attr_type, attributes, ..
            } => SystemAction::Ask {
                attr_type: TypeId(parse_id("type", attr_type)?),
                attrs: parse_ids("attribute", attributes, AttrId)?,
            },
            ActionView::Recommend { items } => SystemAction::Recommend {
                items: parse_ids("item", items, ItemId)?,
            },
        })
    }
}

/// A human answer as posted by the client. Exactly one field is set.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnswerRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clicked: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accepted: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reject: Option<bool>,
}

impl AnswerRequest {
    pub fn clicked(ids: &[AttrId]) -> Self {
        AnswerRequest {
            clicked: Some(strings(ids)),
            ..Default::default()
        }
    }
    pub fn accepted(item: ItemId) -> Self {
        AnswerRequest {
            accepted: Some(item.to_string()),
            ..Default::default()
        }
    }
    pub fn reject() -> Self {
        AnswerRequest {
            reject: Some(true),
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Answer {
    Clicked(Vec<AttrId>),
    Accepted(ItemId),
    Reject,
}

impl TryFrom<&AnswerRequest> for Answer {
    type Error = ServiceError;
    fn try_from(r: &AnswerRequest) -> Result<Self, ServiceError> {
        match (&r.clicked, &r.accepted, r.reject) {
            (Some(c), None, None) => Ok(Answer::Clicked(parse_ids("attribute", c, AttrId)?)),
            (None, Some(v), None) => Ok(Answer::Accepted(ItemId(parse_id("item", v)?))),
            (None, None, Some(true)) => Ok(Answer::Reject),
            _ => Err(ServiceError::BadRequest(
                "answer must be exactly one of {clicked: [...]}, {accepted: id}, {reject: true}".into(),
            )),
        }
    }
}

/// What the human answered, as recorded in the transcript.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerView {
    /// Clicked attributes of a question, in display order.
    #[serde(default)]
    pub clicked: Vec<String>,
    /// Accepted item of a recommendation; absent when rejected.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accepted: Option<String>,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnView {
    /// 1-based turn index.
    pub turn: usize,
    pub action: ActionView,
    /// Snapshot the agent acted on.
    pub snapshot: Snapshot,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<AnswerView>,
}

/// Reply to a create or answer request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepView {
    pub session_id: String,
    /// The pending system action; absent once the session is done.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action: Option<ActionView>,
    pub outcome: Outcome,
    pub snapshot: Snapshot,
}

/// Everything needed to display or replay a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub session_id: String,
    pub checkpoint: String,
    pub user: String,
    pub p0: String,
    pub mode: Mode,
    pub max_turns: usize,
    pub outcome: Outcome,
    pub expired: bool,
    pub created_unix_ms: u64,
    pub expires_unix_ms: u64,
    pub turns: Vec<TurnView>,
    /// Snapshot of the current state.
    pub snapshot: Snapshot,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distribution: Option<FullDistribution>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointInfo {
    pub id: String,
    pub updates: u64,
    pub embed_dim: usize,
    pub hidden: usize,
    pub top_n: usize,
    pub ask_k: usize,
}

struct Policy {
    agent: Agent<f32>,
    xw1: Array2<f32>,
}

struct LiveSession {
    id: String,
    checkpoint: String,
    conv: Conversation,
    estimator: SoftEstimator<f32>,
    rng: ChaCha8Rng,
    pending: Option<SystemAction>,
    turns: Vec<TurnView>,
    current: Snapshot,
    created: SystemTime,
    touched: Instant,
    touched_wall: SystemTime,
}

fn unix_ms(t: SystemTime) -> u64 {
    t.duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

/// Shared read-only agents and knowledge plus the in-memory session store.
pub struct Engine {
    know: Knowledge<f32>,
    policies: BTreeMap<String, Policy>,
    settings: Settings,
    sessions: Mutex<HashMap<String, Arc<Mutex<LiveSession>>>>,
}

impl Engine {
    pub fn new(
        know: Knowledge<f32>,
        checkpoints: impl IntoIterator<Item = (String, Agent<f32>)>,
        settings: Settings,
    ) -> Result<Self, ServiceError> {
        let dim = know.table.dim();
        let mut policies = BTreeMap::new();
        for (id, agent) in checkpoints {
            if agent.config.dims.embed != dim {
                return Err(ServiceError::Incompatible(format!(
                    "checkpoint {id} expects {}-dimensional embeddings, table has {dim}",
                    agent.config.dims.embed
                )));
            }
            let xw1 = agent.projected(&know);
            policies.insert(id, Policy { agent, xw1 });
        }
        if !know.catalog.has_user(settings.user) {
            return Err(ServiceError::Incompatible(format!(
                "default user {} is not in the catalog",
                settings.user
            )));
        }
        Ok(Engine {
            know,
            policies,
            settings,
            sessions: Mutex::new(HashMap::new()),
        })
    }

    /// Loads every `*.json` agent checkpoint in `dir`, keyed by file stem.
    pub fn load_dir(know: Knowledge<f32>, dir: impl AsRef<Path>, settings: Settings) -> Result<Self, ServiceError> {
        let dir = dir.as_ref();
        let entries = fs::read_dir(dir).map_err(|e| ServiceError::Load(format!("{}: {e}", dir.display())))?;
        let mut agents = Vec::new();
        for entry in entries {
            let path = entry.map_err(|e| ServiceError::Load(e.to_string()))?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            let id = path
                .file_stem()
                .and_then(|s| s.to_str())
                .ok_or_else(|| ServiceError::Load(format!("bad file name {}", path.display())))?
                .to_string();
            let agent = Agent::load(&path).map_err(|e| ServiceError::Load(e.to_string()))?;
            agents.push((id, agent));
        }
        Self::new(know, agents, settings)
    }

    pub fn knowledge(&self) -> &Knowledge<f32> {
        &self.know
    }

    pub fn settings(&self) -> &Settings {
        &self.settings
    }

    pub fn agent(&self, checkpoint: &str) -> Option<&Agent<f32>> {
        self.policies.get(checkpoint).map(|p| &p.agent)
    }

    pub fn checkpoints(&self) -> Vec<CheckpointInfo> {
        self.policies
            .iter()
            .map(|(id, p)| CheckpointInfo {
                id: id.clone(),
                updates: p.agent.updates(),
                embed_dim: p.agent.config.dims.embed,
                hidden: p.agent.config.dims.hidden,
                top_n: p.agent.config.top_n,
                ask_k: p.agent.config.ask_k,
            })
            .collect()
    }

    fn policy(&self, checkpoint: &str) -> Result<&Policy, ServiceError> {
        self.policies
            .get(checkpoint)
            .ok_or_else(|| ServiceError::UnknownCheckpoint(checkpoint.to_string()))
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<LiveSession>>, ServiceError> {
        self.sessions
            .lock()
            .expect("session store lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::UnknownSession(id.to_string()))
    }

    fn expired(&self, s: &LiveSession) -> bool {
        s.touched.elapsed() > self.settings.ttl
    }

    /// Drops sessions idle for more than twice the time-to-live.
    fn purge(&self) {
        let limit = self.settings.ttl * 2;
        self.sessions
            .lock()
            .expect("session store lock")
            .retain(|_, s| s.lock().is_ok_and(|s| s.touched.elapsed() <= limit));
    }

    /// Records the current snapshot and, if the conversation is running, the
    /// agent's next action.
    fn step(&self, policy: &Policy, s: &mut LiveSession) -> Result<(), ServiceError> {
        let cfg = &policy.agent.config;
        s.current = snapshot(&s.conv, &self.know.table, &cfg.use_cfg, self.settings.snapshot_k);
        if s.conv.is_done() {
            s.pending = None;
            return Ok(());
        }
        let obs = policy.agent.observe(&s.conv, &self.know, &mut s.estimator, &mut s.rng);
        let q = state_q_values(&policy.agent.params, &policy.xw1, &self.know, &obs.state);
        let action = infer_system_action(&q, &self.know.catalog, cfg.ask_k)?;
        s.turns.push(TurnView {
            turn: s.turns.len() + 1,
            action: ActionView::new(&action, &self.know.catalog),
            snapshot: s.current.clone(),
            answer: None,
        });
        s.pending = Some(action);
        Ok(())
    }

    fn step_view(s: &LiveSession) -> StepView {
        StepView {
            session_id: s.id.clone(),
            action: s.turns.last().filter(|_| s.pending.is_some()).map(|t| t.action.clone()),
            outcome: s.conv.outcome(),
            snapshot: s.current.clone(),
        }
    }

    /// Starts a session from the query attribute `p0` and runs the first
    /// agent step.
    pub fn create(&self, checkpoint: &str, p0: &str, user: Option<&str>) -> Result<StepView, ServiceError> {
        let policy = self.policy(checkpoint)?;
        let p0 = AttrId(parse_id("attribute", p0)?);
        let user = match user {
            Some(u) => UserId(parse_id("user", u)?),
            None => self.settings.user,
        };
        let conv = Conversation::start(
            &self.know.catalog,
            user,
            p0,
            Mode::Vpmcr,
            self.settings.max_turns,
            RewardConfig::default(),
        )?;
        let now = SystemTime::now();
        let mut s = LiveSession {
            id: uuid::Uuid::new_v4().to_string(),
            checkpoint: checkpoint.to_string(),
            current: snapshot(&conv, &self.know.table, &policy.agent.config.use_cfg, self.settings.snapshot_k),
            conv,
            estimator: SoftEstimator::new(policy.agent.config.use_cfg),
            rng: ChaCha8Rng::seed_from_u64(self.settings.seed),
            pending: None,
            turns: Vec::new(),
            created: now,
            touched: Instant::now(),
            touched_wall: now,
        };
        self.step(policy, &mut s)?;
        let view = Self::step_view(&s);
        self.purge();
        self.sessions
            .lock()
            .expect("session store lock")
            .insert(s.id.clone(), Arc::new(Mutex::new(s)));
        Ok(view)
    }

    /// Applies a human answer to the pending action and runs the next agent
    /// step.
    pub fn answer(&self, id: &str, request: &AnswerRequest) -> Result<StepView, ServiceError> {
        let handle = self.session(id)?;
        let mut s = handle.lock().expect("session lock");
        if self.expired(&s) {
            return Err(ServiceError::Expired(id.to_string()));
        }
        let pending = s.pending.clone().ok_or(ServiceError::Finished)?;
        let answer = Answer::try_from(request)?;
        let catalog = &self.know.catalog;
        let (reward, view) = match (&pending, answer) {
            (SystemAction::Ask { attr_type, attrs }, Answer::Clicked(clicked)) => {
                let r = s.conv.apply_answer(catalog, *attr_type, attrs, &clicked)?;
                let clicked = s.conv.history().last().expect("turn recorded").clicked.clone();
                (r, (strings(&clicked), None))
            }
            (SystemAction::Ask { attr_type, attrs }, Answer::Reject) => {
                (s.conv.apply_answer(catalog, *attr_type, attrs, &[])?, (Vec::new(), None))
            }
            (SystemAction::Recommend { items }, Answer::Accepted(v)) => {
                if !items.contains(&v) {
                    return Err(vaguecrs::simulator::SimError::IllegalAccept(v).into());
                }
                (s.conv.apply_recommendation(catalog, items, Some(v))?, (Vec::new(), Some(v.to_string())))
            }
            (SystemAction::Recommend { items }, Answer::Reject) => {
                (s.conv.apply_recommendation(catalog, items, None)?, (Vec::new(), None))
            }
            (SystemAction::Ask { .. }, Answer::Accepted(_)) => {
                return Err(ServiceError::BadRequest(
                    "the pending action is a question; answer with clicked attributes or reject".into(),
                ))
            }
            (SystemAction::Recommend { .. }, Answer::Clicked(_)) => {
                return Err(ServiceError::BadRequest(
                    "the pending action is a recommendation; answer with an accepted item or reject".into(),
                ))
            }
        };
        if let Some(t) = s.turns.last_mut() {
            t.answer = Some(AnswerView {
                clicked: view.0,
                accepted: view.1,
                reward,
            });
        }
        s.touched = Instant::now();
        s.touched_wall = SystemTime::now();
        let policy = self.policy(&s.checkpoint)?;
        self.step(policy, &mut s)?;
        Ok(Self::step_view(&s))
    }

    /// Full transcript; `full` adds every candidate's current score.
    pub fn transcript(&self, id: &str, full: bool) -> Result<Transcript, ServiceError> {
        let handle = self.session(id)?;
        let s = handle.lock().expect("session lock");
        let policy = self.policy(&s.checkpoint)?;
        let ttl_ms = self.settings.ttl.as_millis() as u64;
        Ok(Transcript {
            session_id: s.id.clone(),
            checkpoint: s.checkpoint.clone(),
            user: s.conv.user().to_string(),
            p0: s.conv.p0().to_string(),
            mode: s.conv.mode(),
            max_turns: s.conv.max_turns(),
            outcome: s.conv.outcome(),
            expired: self.expired(&s),
            created_unix_ms: unix_ms(s.created),
            expires_unix_ms: unix_ms(s.touched_wall).saturating_add(ttl_ms),
            turns: s.turns.clone(),
            snapshot: s.current.clone(),
            distribution: full.then(|| full_distribution(&s.conv, &self.know.table, &policy.agent.config.use_cfg)),
        })
    }
}

/// Snapshots recomputed by replaying a transcript's answers through the
/// simulator's transitions.
#[derive(Debug, Clone, PartialEq)]
pub struct Replay {
    /// Snapshot before each turn's answer.
    pub turns: Vec<Snapshot>,
    /// Snapshot after the last recorded answer.
    pub current: Snapshot,
    pub outcome: Outcome,
}

pub fn replay(know: &Knowledge<f32>, cfg: &UseConfig, k: usize, t: &Transcript) -> Result<Replay, ServiceError> {
    let user = UserId(parse_id("user", &t.user)?);
    let p0 = AttrId(parse_id("attribute", &t.p0)?);
    let catalog = &know.catalog;
    let mut conv = Conversation::start(catalog, user, p0, t.mode, t.max_turns, RewardConfig::default())?;
    let mut turns = Vec::with_capacity(t.turns.len());
    for turn in &t.turns {
        turns.push(snapshot(&conv, &know.table, cfg, k));
        let Some(answer) = &turn.answer else { break };
        match turn.action.to_system()? {
            SystemAction::Ask { attr_type, attrs } => {
                let clicked = parse_ids("attribute", &answer.clicked, AttrId)?;
                conv.apply_answer(catalog, attr_type, &attrs, &clicked)?;
            }
            SystemAction::Recommend { items } => {
                let accepted = answer
                    .accepted
                    .as_deref()
                    .map(|v| parse_id("item", v).map(ItemId))
                    .transpose()?;
                conv.apply_recommendation(catalog, &items, accepted)?;
            }
        }
    }
    Ok(Replay {
        turns,
        current: snapshot(&conv, &know.table, cfg, k),
        outcome: conv.outcome(),
    })
}
