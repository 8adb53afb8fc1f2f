//! The agent: action pruning, dueling Q-scoring, exploration, two-level
//! ask/recommend inference, prioritized replay and TD learning.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::Catalog;
use crate::embeddings::EmbeddingTable;
use crate::encoder::{build_graph, DynamicGraph, GraphInput, Node, DEFAULT_SAMPLE_CAP};
use crate::estimation::{AttrDistribution, ItemDistribution, SoftEstimator, UseConfig};
use crate::ids::{AttrId, ItemId, TypeId};
use crate::nn::{NetDims, NetParams};
use crate::optim::{Adam, AdamConfig};
use crate::qnet::{self, heads_forward};
use crate::replay::{PrioritizedReplay, ReplayError, DEFAULT_CAPACITY};
use crate::scalar::Scalar;
use crate::simulator::Conversation;

pub const DEFAULT_TOP_N: usize = 10;
pub const DEFAULT_ASK_K: usize = 2;
pub const AGENT_FORMAT: &str = "vaguecrs-agent";
pub const AGENT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("action set is empty")]
    EmptyActionSet,
    #[error("exploration rate {0} is outside [0, 1]")]
    BadEpsilon(f64),
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("malformed agent checkpoint: {0}")]
    Format(String),
}

/// A candidate the Q-network scores: an item to recommend or an attribute to
/// ask about.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "class", content = "id", rename_all = "snake_case")]
pub enum Action {
    Item(ItemId),
    Attr(AttrId),
}

impl Action {
    pub fn node(self) -> Node {
        match self {
            Action::Item(v) => Node::Item(v),
            Action::Attr(p) => Node::Attr(p),
        }
    }
}

/// What the system says to the user this turn.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SystemAction {
    Ask { attr_type: TypeId, attrs: Vec<AttrId> },
    Recommend { items: Vec<ItemId> },
}

/// Top-N items and top-N attributes by soft score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ActionSpace<T> {
    pub n: usize,
    pub items: Vec<(ItemId, T)>,
    pub attrs: Vec<(AttrId, T)>,
}

impl<T: Scalar> ActionSpace<T> {
    /// Items first, then attributes, each in score order.
    pub fn actions(&self) -> Vec<Action> {
        self.items
            .iter()
            .map(|(v, _)| Action::Item(*v))
            .chain(self.attrs.iter().map(|(p, _)| Action::Attr(*p)))
            .collect()
    }
    pub fn item_ids(&self) -> Vec<ItemId> {
        self.items.iter().map(|(v, _)| *v).collect()
    }
    pub fn len(&self) -> usize {
        self.items.len() + self.attrs.len()
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Exact top-`n` per class, highest score first, ties by ascending id.
pub fn prune_actions<T: Scalar>(
    item_dist: &ItemDistribution<T>,
    attr_dist: &AttrDistribution<T>,
    n: usize,
) -> ActionSpace<T> {
    ActionSpace {
        n,
        items: item_dist.top(n),
        attrs: attr_dist.top(n),
    }
}

/// Dueling Q-values of each action row given a pooled state vector.
pub fn q_values<T: Scalar>(
    params: &NetParams<T>,
    state: &Array1<T>,
    action_reprs: &Array2<T>,
) -> Result<Array1<T>, PolicyError> {
    if action_reprs.nrows() == 0 {
        return Err(PolicyError::EmptyActionSet);
    }
    Ok(heads_forward(params, state, action_reprs).0)
}

fn argmax<T: Scalar>(scored: &[(Action, T)]) -> usize {
    let mut best = 0;
    for (i, (_, q)) in scored.iter().enumerate() {
        if *q > scored[best].1 {
            best = i;
        }
    }
    best
}

/// Index into `scored`: uniform with probability `eps`, otherwise the
/// highest Q (earliest position on ties).
pub fn select_training_action<T: Scalar, R: Rng + ?Sized>(
    scored: &[(Action, T)],
    eps: f64,
    rng: &mut R,
) -> Result<usize, PolicyError> {
    if scored.is_empty() {
        return Err(PolicyError::EmptyActionSet);
    }
    if !(0.0..=1.0).contains(&eps) {
        return Err(PolicyError::BadEpsilon(eps));
    }
    if eps > 0.0 && rng.gen::<f64>() < eps {
        Ok(rng.gen_range(0..scored.len()))
    } else {
        Ok(argmax(scored))
    }
}

/// Positions of `scored` entries satisfying `keep`, by Q descending (stable).
fn ranked<T: Scalar>(scored: &[(Action, T)], keep: impl Fn(Action) -> bool) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scored.len()).filter(|i| keep(scored[*i].0)).collect();
    idx.sort_by(|a, b| {
        scored[*b]
            .1
            .partial_cmp(&scored[*a].1)
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    idx
}

fn recommend_all<T: Scalar>(scored: &[(Action, T)]) -> SystemAction {
    let items = ranked(scored, |a| matches!(a, Action::Item(_)))
        .into_iter()
        .map(|i| match scored[i].0 {
            Action::Item(v) => v,
            Action::Attr(_) => unreachable!(),
        })
        .collect();
    SystemAction::Recommend { items }
}

fn ask_type<T: Scalar>(
    scored: &[(Action, T)],
    catalog: &Catalog,
    t: TypeId,
    first: Option<AttrId>,
    k: usize,
) -> SystemAction {
    let mut attrs: Vec<AttrId> = first.into_iter().collect();
    for i in ranked(scored, |a| matches!(a, Action::Attr(p) if catalog.attr_type(p) == t)) {
        if attrs.len() >= k {
            break;
        }
        if let Action::Attr(p) = scored[i].0 {
            if Some(p) != first {
                attrs.push(p);
            }
        }
    }
    SystemAction::Ask { attr_type: t, attrs }
}

/// Recommends the whole item space when the best action is an item;
/// otherwise asks the attribute type with the largest summed Q, showing its
/// top-`k` attributes.
pub fn infer_system_action<T: Scalar>(
    scored: &[(Action, T)],
    catalog: &Catalog,
    k: usize,
) -> Result<SystemAction, PolicyError> {
    if scored.is_empty() {
        return Err(PolicyError::EmptyActionSet);
    }
    if let Action::Item(_) = scored[argmax(scored)].0 {
        return Ok(recommend_all(scored));
    }
    let mut sums: BTreeMap<TypeId, T> = BTreeMap::new();
    for (a, q) in scored {
        if let Action::Attr(p) = a {
            *sums.entry(catalog.attr_type(*p)).or_insert_with(T::zero) += *q;
        }
    }
    let mut best: Option<(TypeId, T)> = None;
    for (t, s) in sums {
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((t, s));
        }
    }
    let (t, _) = best.expect("argmax is an attribute");
    Ok(ask_type(scored, catalog, t, None, k))
}

/// System action for an exploratory pick: the item space for an item, or
/// the picked attribute's type led by the picked attribute.
pub fn explored_system_action<T: Scalar>(
    scored: &[(Action, T)],
    chosen: usize,
    catalog: &Catalog,
    k: usize,
) -> SystemAction {
    match scored[chosen].0 {
        Action::Item(_) => recommend_all(scored),
        Action::Attr(p) => ask_type(scored, catalog, catalog.attr_type(p), Some(p), k),
    }
}

/// `r` for terminal transitions, `r + gamma * max_next_q` otherwise.
pub fn td_target<T: Scalar>(reward: T, done: bool, max_next_q: T, gamma: T) -> T {
    if done {
        reward
    } else {
        reward + gamma * max_next_q
    }
}

/// Huber loss with unit threshold and its derivative.
pub fn huber<T: Scalar>(x: T) -> (T, T) {
    let half = T::of(0.5);
    if x.abs() <= T::one() {
        (half * x * x, x)
    } else {
        (x.abs() - half, x.signum())
    }
}

/// Catalog, frozen embeddings and their stacked matrix.
#[derive(Debug, Clone)]
pub struct Knowledge<T> {
    pub catalog: Catalog,
    pub table: EmbeddingTable<T>,
    stacked: Array2<T>,
}

impl<T: Scalar> Knowledge<T> {
    pub fn new(catalog: Catalog, table: EmbeddingTable<T>) -> Self {
        assert!(table.covers(&catalog), "embedding table does not cover the catalog");
        let stacked = table.stacked();
        Knowledge {
            catalog,
            table,
            stacked,
        }
    }
    pub fn stacked(&self) -> &Array2<T> {
        &self.stacked
    }
}

/// Inputs needed to recompute a state's Q-values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct StateInput<T> {
    pub graph: GraphInput<T>,
    pub actions: Vec<Action>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Transition<T> {
    pub state: Arc<StateInput<T>>,
    /// Index into `state.actions`.
    pub action: usize,
    pub reward: T,
    /// `None` when the episode ended.
    pub next: Option<Arc<StateInput<T>>>,
}

impl<T> Transition<T> {
    pub fn done(&self) -> bool {
        self.next.is_none()
    }
}

/// Everything computed at the start of a turn.
#[derive(Debug, Clone)]
pub struct Observation<T> {
    pub item_dist: ItemDistribution<T>,
    pub attr_dist: AttrDistribution<T>,
    pub space: ActionSpace<T>,
    pub state: Arc<StateInput<T>>,
}

/// The chosen system action plus what gets stored for learning.
#[derive(Debug, Clone)]
pub struct Decision<T> {
    pub system: SystemAction,
    /// Index into the state's actions credited with this turn.
    pub chosen: usize,
    pub scored: Vec<(Action, T)>,
    pub explored: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub dims: NetDims,
    pub top_n: usize,
    pub ask_k: usize,
    pub sample_cap: usize,
    pub rl_gamma: f64,
    pub tau: f64,
    pub batch: usize,
    pub buffer: usize,
    pub per_alpha: f64,
    pub adam: AdamConfig,
    pub use_cfg: UseConfig,
    pub seed: u64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            dims: NetDims::default(),
            top_n: DEFAULT_TOP_N,
            ask_k: DEFAULT_ASK_K,
            sample_cap: DEFAULT_SAMPLE_CAP,
            rl_gamma: 0.99,
            tau: 0.01,
            batch: 128,
            buffer: DEFAULT_CAPACITY,
            per_alpha: 0.6,
            adam: AdamConfig::default(),
            use_cfg: UseConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearnStats {
    pub loss: f64,
    pub mean_abs_td: f64,
}

/// Weighted Huber TD loss of a batch, its parameter gradient and the TD
/// errors `Q(s, a) - target`.
pub fn td_loss_and_grad<T: Scalar>(
    params: &NetParams<T>,
    know: &Knowledge<T>,
    batch: &[&Transition<T>],
    weights: &[T],
    targets: &[T],
) -> (T, NetParams<T>, Vec<T>) {
    let xw1 = know.stacked().dot(&params.gcn_w1);
    let mut grads = params.zeros_like();
    let mut d_xw1 = Array2::zeros(xw1.raw_dim());
    let b = T::of_usize(batch.len());
    let mut loss = T::zero();
    let mut tds = Vec::with_capacity(batch.len());
    for ((tr, w), y) in batch.iter().zip(weights).zip(targets) {
        let g = DynamicGraph::from_input(&tr.state.graph, &know.catalog);
        let nodes: Vec<Node> = tr.state.actions.iter().map(|a| a.node()).collect();
        let (eval, cache) = qnet::forward(params, &xw1, &g, &nodes);
        let td = eval.q[tr.action] - *y;
        let (l, dl) = huber(td);
        loss += *w * l / b;
        let mut d_q = Array1::zeros(eval.q.len());
        d_q[tr.action] = *w * dl / b;
        qnet::backward(params, &g, &cache, &d_q, &mut grads, &mut d_xw1);
        tds.push(td);
    }
    grads.gcn_w1 += &know.stacked().t().dot(&d_xw1);
    (loss, grads, tds)
}

/// Loss only, for finite-difference checks.
pub fn td_loss<T: Scalar>(
    params: &NetParams<T>,
    know: &Knowledge<T>,
    batch: &[&Transition<T>],
    weights: &[T],
    targets: &[T],
) -> T {
    let xw1 = know.stacked().dot(&params.gcn_w1);
    let b = T::of_usize(batch.len());
    batch
        .iter()
        .zip(weights)
        .zip(targets)
        .map(|((tr, w), y)| {
            let g = DynamicGraph::from_input(&tr.state.graph, &know.catalog);
            let nodes: Vec<Node> = tr.state.actions.iter().map(|a| a.node()).collect();
            let q = qnet::forward(params, &xw1, &g, &nodes).0.q[tr.action];
            *w * huber(q - *y).0 / b
        })
        .sum()
}

/// ReLU sign pattern of the whole batch, plus the Huber branch of each TD
/// error. Finite differences are only meaningful between parameter settings
/// whose patterns agree.
pub fn activation_pattern<T: Scalar>(
    params: &NetParams<T>,
    know: &Knowledge<T>,
    batch: &[&Transition<T>],
    targets: &[T],
) -> Vec<bool> {
    let xw1 = know.stacked().dot(&params.gcn_w1);
    let mut out = Vec::new();
    for (tr, y) in batch.iter().zip(targets) {
        let g = DynamicGraph::from_input(&tr.state.graph, &know.catalog);
        let nodes: Vec<Node> = tr.state.actions.iter().map(|a| a.node()).collect();
        let (eval, cache) = qnet::forward(params, &xw1, &g, &nodes);
        out.extend(qnet::relu_pattern(&cache));
        out.push((eval.q[tr.action] - *y).abs() <= T::one());
    }
    out
}

/// Q-values of a stored state under `params`.
pub fn state_q_values<T: Scalar>(
    params: &NetParams<T>,
    xw1: &Array2<T>,
    know: &Knowledge<T>,
    state: &StateInput<T>,
) -> Vec<(Action, T)> {
    let g = DynamicGraph::from_input(&state.graph, &know.catalog);
    let nodes: Vec<Node> = state.actions.iter().map(|a| a.node()).collect();
    let eval = qnet::forward(params, xw1, &g, &nodes).0;
    state.actions.iter().copied().zip(eval.q.iter().copied()).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Agent<T> {
    pub config: AgentConfig,
    pub params: NetParams<T>,
    pub target: NetParams<T>,
    adam: Adam<T>,
    rng: ChaCha8Rng,
    updates: u64,
    #[serde(skip)]
    replay: Option<PrioritizedReplay<Transition<T>>>,
}

/// Versioned on-disk form of an [`Agent`].
#[derive(Debug, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
struct AgentFile<T> {
    format: String,
    version: u32,
    agent: Agent<T>,
    replay: Option<PrioritizedReplay<Transition<T>>>,
}

impl<T: Scalar> Agent<T> {
    pub fn new(config: AgentConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = NetParams::init(config.dims, &mut rng);
        let target = params.clone();
        let adam = Adam::new(config.adam, &params);
        let replay = Some(PrioritizedReplay::new(config.buffer, config.per_alpha));
        Agent {
            config,
            params,
            target,
            adam,
            rng,
            updates: 0,
            replay,
        }
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn replay(&self) -> &PrioritizedReplay<Transition<T>> {
        self.replay.as_ref().expect("replay buffer present")
    }

    fn replay_mut(&mut self) -> &mut PrioritizedReplay<Transition<T>> {
        let (cap, alpha) = (self.config.buffer, self.config.per_alpha);
        self.replay
            .get_or_insert_with(|| PrioritizedReplay::new(cap, alpha))
    }

    /// Online `X W1` for the current parameters.
    pub fn projected(&self, know: &Knowledge<T>) -> Array2<T> {
        know.stacked().dot(&self.params.gcn_w1)
    }

    /// Soft distributions, pruned action space and graph state of `conv`.
    pub fn observe<R: Rng + ?Sized>(
        &self,
        conv: &Conversation,
        know: &Knowledge<T>,
        estimator: &mut SoftEstimator<T>,
        rng: &mut R,
    ) -> Observation<T> {
        let (item_dist, attr_dist) = estimator.distributions(conv, &know.table);
        let askable = attr_dist.filtered(|p| p != conv.p0() && !conv.displayed().contains(&p));
        let space = prune_actions(&item_dist, &askable, self.config.top_n);
        let graph = build_graph(conv, &item_dist, self.config.sample_cap, &space.item_ids(), rng);
        let state = Arc::new(StateInput {
            graph,
            actions: space.actions(),
        });
        Observation {
            item_dist,
            attr_dist,
            space,
            state,
        }
    }

    pub fn q_values(&self, know: &Knowledge<T>, state: &StateInput<T>) -> Vec<(Action, T)> {
        state_q_values(&self.params, &self.projected(know), know, state)
    }

    /// Picks the system action; `eps = 0` is the greedy policy.
    pub fn decide<R: Rng + ?Sized>(
        &self,
        know: &Knowledge<T>,
        state: &StateInput<T>,
        eps: f64,
        rng: &mut R,
    ) -> Result<Decision<T>, PolicyError> {
        let scored = self.q_values(know, state);
        let pick = select_training_action(&scored, eps, rng)?;
        let best = argmax(&scored);
        let k = self.config.ask_k;
        if pick != best {
            let system = explored_system_action(&scored, pick, &know.catalog, k);
            return Ok(Decision {
                system,
                chosen: pick,
                scored,
                explored: true,
            });
        }
        let system = infer_system_action(&scored, &know.catalog, k)?;
        let chosen = match &system {
            SystemAction::Recommend { .. } => best,
            SystemAction::Ask { attrs, .. } => scored
                .iter()
                .position(|(a, _)| *a == Action::Attr(attrs[0]))
                .expect("asked attribute is in the action space"),
        };
        Ok(Decision {
            system,
            chosen,
            scored,
            explored: false,
        })
    }

    pub fn remember(&mut self, t: Transition<T>) {
        self.replay_mut().push(t);
    }

    /// Targets from the target network for `batch`.
    pub fn td_targets(&self, know: &Knowledge<T>, batch: &[&Transition<T>]) -> Vec<T> {
        let xw1 = know.stacked().dot(&self.target.gcn_w1);
        let gamma = T::of(self.config.rl_gamma);
        batch
            .iter()
            .map(|tr| match &tr.next {
                None => td_target(tr.reward, true, T::zero(), gamma),
                Some(next) => {
                    let max = state_q_values(&self.target, &xw1, know, next)
                        .iter()
                        .map(|(_, q)| *q)
                        .fold(T::neg_infinity(), T::max);
                    td_target(tr.reward, false, max, gamma)
                }
            })
            .collect()
    }

    /// One prioritized gradient step, or `None` while the buffer is smaller
    /// than a batch.
    pub fn learn(&mut self, know: &Knowledge<T>, beta: f64) -> Option<LearnStats> {
        let batch_size = self.config.batch;
        if self.replay().len() < batch_size {
            return None;
        }
        let mut rng = self.rng.clone();
        let sampled = self
            .replay()
            .sample(batch_size, beta, &mut rng)
            .expect("nonempty buffer");
        self.rng = rng;
        let batch: Vec<&Transition<T>> = sampled.indices.iter().map(|i| self.replay().get(*i)).collect();
        let targets = self.td_targets(know, &batch);
        let weights: Vec<T> = sampled.weights.iter().map(|w| T::of(*w)).collect();
        let (loss, grads, tds) = td_loss_and_grad(&self.params, know, &batch, &weights, &targets);
        self.adam.step(&mut self.params, &grads);
        let tau = T::of(self.config.tau);
        self.target.soft_update(&self.params, tau);
        self.updates += 1;
        let abs: Vec<f64> = tds.iter().map(|t| t.as_f64().abs()).collect();
        self.replay_mut().update_priorities(&sampled.indices, &abs);
        Some(LearnStats {
            loss: loss.as_f64(),
            mean_abs_td: abs.iter().sum::<f64>() / abs.len() as f64,
        })
    }

    /// Writes the versioned checkpoint; the replay buffer is included only
    /// when `with_replay` is set.
    pub fn save(&self, path: impl AsRef<Path>, with_replay: bool) -> Result<(), PolicyError> {
        let path = path.as_ref();
        let file = AgentFile {
            format: AGENT_FORMAT.to_string(),
            version: AGENT_VERSION,
            agent: self.clone_without_replay(),
            replay: if with_replay { self.replay.clone() } else { None },
        };
        let body = serde_json::to_string(&file).map_err(|e| PolicyError::Format(e.to_string()))?;
        fs::write(path, body).map_err(|source| PolicyError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PolicyError> {
        let path = path.as_ref();
        let body = fs::read_to_string(path).map_err(|source| PolicyError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&body)
    }

    pub fn from_json(body: &str) -> Result<Self, PolicyError> {
        let file: AgentFile<T> =
            serde_json::from_str(body).map_err(|e| PolicyError::Format(e.to_string()))?;
        if file.format != AGENT_FORMAT {
            return Err(PolicyError::Format(format!("unexpected format tag {:?}", file.format)));
        }
        if file.version != AGENT_VERSION {
            return Err(PolicyError::Format(format!("unsupported version {}", file.version)));
        }
        let mut agent = file.agent;
        if !(agent.params.shapes_consistent() && agent.params.is_finite()) {
            return Err(PolicyError::Format("inconsistent or non-finite parameters".into()));
        }
        let (cap, alpha) = (agent.config.buffer, agent.config.per_alpha);
        agent.replay = Some(file.replay.unwrap_or_else(|| PrioritizedReplay::new(cap, alpha)));
        Ok(agent)
    }

    fn clone_without_replay(&self) -> Agent<T> {
        Agent {
            config: self.config.clone(),
            params: self.params.clone(),
            target: self.target.clone(),
            adam: self.adam.clone(),
            rng: self.rng.clone(),
            updates: self.updates,
            replay: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn td_target_examples() {
        assert_eq!(td_target(1.0, true, 5.0, 0.99), 1.0);
        assert!((td_target(-0.1f64, false, 0.5, 0.99) - 0.395).abs() < 1e-12);
        assert_eq!(td_target(-0.3, false, 2.0, 0.0), -0.3);
    }

    #[test]
    fn huber_branches() {
        assert_eq!(huber(0.5f64), (0.125, 0.5));
        assert_eq!(huber(-3.0f64), (2.5, -1.0));
    }

    #[test]
    fn selection_rejects_empty_and_bad_eps() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let empty: Vec<(Action, f64)> = vec![];
        assert!(matches!(
            select_training_action(&empty, 0.0, &mut rng),
            Err(PolicyError::EmptyActionSet)
        ));
        let one = vec![(Action::Item(ItemId(0)), 1.0)];
        assert!(matches!(
            select_training_action(&one, 1.5, &mut rng),
            Err(PolicyError::BadEpsilon(_))
        ));
    }

    #[test]
    fn equal_maxima_pick_first() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = vec![
            (Action::Item(ItemId(3)), 0.2),
            (Action::Item(ItemId(1)), 0.9),
            (Action::Attr(AttrId(0)), 0.9),
        ];
        assert_eq!(select_training_action(&s, 0.0, &mut rng).unwrap(), 1);
    }
}
