//! Uncertainty-aware soft estimation of item and attribute preferences.
//!
//! Every ask turn yields a score per entity:
//!
//! ```text
//! w_avg     = mean_{p in noshow}   x . e_p
//! w_click   = mean_{p in click}   (x . e_p - w_avg)
//! w_noclick = mean_{p in noclick} (x . e_p - w_avg)
//! w(t)      = sigmoid(e_u . x + l1 * w_click + l2 * w_noclick)
//! ```
//!
//! where `x` is the item (or attribute) vector. Turn scores are accumulated
//! with geometric decay, `W(t) = w(t) + gamma * W(t-1)`. Means over empty sets
//! are zero, so a turn without evidence scores exactly `sigmoid(e_u . x)`.

use std::collections::BTreeSet;

use ndarray::Array1;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::Catalog;
use crate::embeddings::{mean_vector, EmbeddingTable};
use crate::ids::{AttrId, ItemId, TypeId, UserId};
use crate::scalar::{dot, sigmoid, Scalar};
use crate::simulator::{Conversation, TurnKind, TurnRecord};

/// Above this many candidates the incremental tracker is used.
pub const INCREMENTAL_THRESHOLD: usize = 10_000;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EstimationError {
    #[error("decay history is empty")]
    EmptyHistory,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UseConfig {
    /// Weight of explicit (clicked) evidence.
    pub lambda_click: f64,
    /// Weight of implicit (shown but not clicked) evidence.
    pub lambda_noclick: f64,
    /// Decay factor in `[0, 1]` applied to earlier turns.
    pub decay: f64,
    pub use_personalized: bool,
    pub use_average_correction: bool,
    pub use_decay: bool,
}

impl Default for UseConfig {
    fn default() -> Self {
        UseConfig {
            lambda_click: 0.1,
            lambda_noclick: 0.01,
            decay: 0.1,
            use_personalized: true,
            use_average_correction: true,
            use_decay: true,
        }
    }
}

impl UseConfig {
    pub fn is_valid(&self) -> bool {
        (0.0..=1.0).contains(&self.decay)
            && self.lambda_click.is_finite()
            && self.lambda_noclick.is_finite()
    }
}

/// Evidence gathered from one ask turn.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnEvidence {
    pub asked_type: TypeId,
    pub clicked: Vec<AttrId>,
    pub nonclicked: Vec<AttrId>,
    pub noshow: Vec<AttrId>,
}

impl TurnEvidence {
    pub fn from_record(rec: &TurnRecord) -> Option<Self> {
        match (rec.kind, rec.asked_type) {
            (TurnKind::Ask, Some(asked_type)) => Some(TurnEvidence {
                asked_type,
                clicked: rec.clicked.clone(),
                nonclicked: rec.nonclicked.clone(),
                noshow: rec.noshow.clone(),
            }),
            _ => None,
        }
    }

    /// Whether the three sets are pairwise disjoint and all of `asked_type`.
    pub fn is_consistent(&self, catalog: &Catalog) -> bool {
        let mut seen = BTreeSet::new();
        self.clicked
            .iter()
            .chain(&self.nonclicked)
            .chain(&self.noshow)
            .all(|p| seen.insert(*p) && catalog.attr_type(*p) == self.asked_type)
    }
}

/// Soft scores over a candidate set, ascending by id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceDistribution<K, T> {
    pub turn: usize,
    pub entries: Vec<(K, T)>,
}

pub type ItemDistribution<T> = PreferenceDistribution<ItemId, T>;
pub type AttrDistribution<T> = PreferenceDistribution<AttrId, T>;

impl<K: Copy + Ord, T: Scalar> PreferenceDistribution<K, T> {
    pub fn len(&self) -> usize {
        self.entries.len()
    }
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
    pub fn get(&self, k: K) -> Option<T> {
        self.entries
            .binary_search_by(|(id, _)| id.cmp(&k))
            .ok()
            .map(|i| self.entries[i].1)
    }
    pub fn ids(&self) -> impl Iterator<Item = K> + '_ {
        self.entries.iter().map(|(k, _)| *k)
    }
    /// Keeps only entries whose id satisfies `keep`.
    pub fn filtered(&self, mut keep: impl FnMut(K) -> bool) -> Self {
        PreferenceDistribution {
            turn: self.turn,
            entries: self.entries.iter().copied().filter(|(k, _)| keep(*k)).collect(),
        }
    }
    /// Highest scores first, ties by ascending id.
    pub fn top(&self, n: usize) -> Vec<(K, T)> {
        let mut v = self.entries.clone();
        v.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.0.cmp(&b.0))
        });
        v.truncate(n);
        v
    }
}

/// Literal mean of `e_v . e_p` over unshown attributes (0 if none).
pub fn average_unshown<T: Scalar>(table: &EmbeddingTable<T>, v: ItemId, ev: &TurnEvidence) -> T {
    mean_dot(table.item(v), table, &ev.noshow)
}

fn mean_dot<T: Scalar>(x: &[T], table: &EmbeddingTable<T>, attrs: &[AttrId]) -> T {
    if attrs.is_empty() {
        return T::zero();
    }
    let s: T = attrs.iter().map(|p| dot(x, table.attr(*p))).sum();
    s / T::of_usize(attrs.len())
}

fn centered_mean<T: Scalar>(x: &[T], table: &EmbeddingTable<T>, attrs: &[AttrId], avg: T) -> T {
    if attrs.is_empty() {
        return T::zero();
    }
    let s: T = attrs.iter().map(|p| dot(x, table.attr(*p)) - avg).sum();
    s / T::of_usize(attrs.len())
}

/// `(w_click, w_noclick)` for an item, centred on the unshown average.
pub fn choice_scores<T: Scalar>(table: &EmbeddingTable<T>, v: ItemId, ev: &TurnEvidence) -> (T, T) {
    choice_scores_with(table, table.item(v), ev, true)
}

/// Choice scores of an arbitrary entity vector; `average_correction = false`
/// forces the unshown average to zero.
pub fn choice_scores_with<T: Scalar>(
    table: &EmbeddingTable<T>,
    x: &[T],
    ev: &TurnEvidence,
    average_correction: bool,
) -> (T, T) {
    let avg = if average_correction {
        mean_dot(x, table, &ev.noshow)
    } else {
        T::zero()
    };
    (
        centered_mean(x, table, &ev.clicked, avg),
        centered_mean(x, table, &ev.nonclicked, avg),
    )
}

/// Per-turn item score `sigmoid(w_{v-u} + l1 w_click + l2 w_noclick)`.
pub fn turn_item_score<T: Scalar>(
    table: &EmbeddingTable<T>,
    u: UserId,
    v: ItemId,
    ev: &TurnEvidence,
    cfg: &UseConfig,
) -> T {
    let x = table.item(v);
    let personal = if cfg.use_personalized {
        dot(table.user(u), x)
    } else {
        T::zero()
    };
    let (wc, wn) = choice_scores_with(table, x, ev, cfg.use_average_correction);
    sigmoid(personal + T::of(cfg.lambda_click) * wc + T::of(cfg.lambda_noclick) * wn)
}

/// `current + gamma * prev`.
#[inline]
pub fn decay_step<T: Scalar>(prev: T, current: T, gamma: T) -> T {
    current + gamma * prev
}

/// `sum_i gamma^(t-i-1) h_i` over a nonempty history `h_0..h_{t-1}`.
pub fn closed_form_decay<T: Scalar>(history: &[T], gamma: T) -> Result<T, EstimationError> {
    if history.is_empty() {
        return Err(EstimationError::EmptyHistory);
    }
    let t = history.len();
    Ok(history
        .iter()
        .enumerate()
        .map(|(i, h)| gamma.powi((t - i - 1) as i32) * *h)
        .sum())
}

/// Mean vectors of one turn's evidence sets, so each entity needs three dot
/// products per turn instead of one per attribute.
struct TurnMeans<T> {
    click: Option<Array1<T>>,
    noclick: Option<Array1<T>>,
    noshow: Option<Array1<T>>,
}

impl<T: Scalar> TurnMeans<T> {
    fn new(table: &EmbeddingTable<T>, ev: &TurnEvidence) -> Self {
        let mean = |attrs: &[AttrId]| {
            (!attrs.is_empty())
                .then(|| mean_vector(attrs.iter().map(|p| table.attr(*p)), table.dim()))
        };
        TurnMeans {
            click: mean(&ev.clicked),
            noclick: mean(&ev.nonclicked),
            noshow: mean(&ev.noshow),
        }
    }

    fn score(&self, personal: T, x: &[T], cfg: &UseConfig) -> T {
        let d = |m: &Array1<T>| dot(x, m.as_slice().expect("contiguous"));
        let avg = match (&self.noshow, cfg.use_average_correction) {
            (Some(m), true) => d(m),
            _ => T::zero(),
        };
        let wc = self.click.as_ref().map_or(T::zero(), |m| d(m) - avg);
        let wn = self.noclick.as_ref().map_or(T::zero(), |m| d(m) - avg);
        sigmoid(personal + T::of(cfg.lambda_click) * wc + T::of(cfg.lambda_noclick) * wn)
    }
}

fn ask_evidence(conv: &Conversation) -> Vec<TurnEvidence> {
    conv.history().iter().filter_map(TurnEvidence::from_record).collect()
}

/// Accumulates turn scores of one entity with the configured decay.
fn accumulate<T: Scalar>(
    turns: &[TurnMeans<T>],
    personal: T,
    x: &[T],
    cfg: &UseConfig,
) -> T {
    if turns.is_empty() {
        return sigmoid(personal);
    }
    if !cfg.use_decay {
        return turns.last().expect("nonempty").score(personal, x, cfg);
    }
    let gamma = T::of(cfg.decay);
    let mut acc = T::zero();
    for (i, m) in turns.iter().enumerate() {
        let s = m.score(personal, x, cfg);
        acc = if i == 0 { s } else { decay_step(acc, s, gamma) };
    }
    acc
}

fn personal_term<T: Scalar>(u: &[T], x: &[T], cfg: &UseConfig) -> T {
    if cfg.use_personalized {
        dot(u, x)
    } else {
        T::zero()
    }
}

/// Decayed soft score of every candidate item.
pub fn item_distribution<T: Scalar>(
    conv: &Conversation,
    table: &EmbeddingTable<T>,
    cfg: &UseConfig,
) -> ItemDistribution<T> {
    let turns: Vec<TurnMeans<T>> = ask_evidence(conv)
        .iter()
        .map(|ev| TurnMeans::new(table, ev))
        .collect();
    let u = table.user(conv.user());
    let entries = conv
        .v_cand()
        .iter()
        .map(|v| {
            let x = table.item(*v);
            (*v, accumulate(&turns, personal_term(u, x, cfg), x, cfg))
        })
        .collect();
    PreferenceDistribution {
        turn: conv.turn(),
        entries,
    }
}

/// Decayed soft score of every candidate attribute, substituting attribute
/// vectors for item vectors.
pub fn attribute_distribution<T: Scalar>(
    conv: &Conversation,
    table: &EmbeddingTable<T>,
    cfg: &UseConfig,
) -> AttrDistribution<T> {
    let turns: Vec<TurnMeans<T>> = ask_evidence(conv)
        .iter()
        .map(|ev| TurnMeans::new(table, ev))
        .collect();
    let u = table.user(conv.user());
    let entries = conv
        .p_cand()
        .map(|p| {
            let x = table.attr(p);
            (p, accumulate(&turns, personal_term(u, x, cfg), x, cfg))
        })
        .collect();
    PreferenceDistribution {
        turn: conv.turn(),
        entries,
    }
}

/// Catalog-wide running accumulators folded one ask turn at a time.
///
/// Equivalent to [`item_distribution`] / [`attribute_distribution`]; used when
/// the candidate sets are too large to refold every turn.
#[derive(Debug, Clone)]
pub struct DecayTracker<T> {
    cfg: UseConfig,
    seen_turns: usize,
    n_ask: usize,
    items: Vec<T>,
    attrs: Vec<T>,
}

impl<T: Scalar> DecayTracker<T> {
    pub fn new(table: &EmbeddingTable<T>, user: UserId, cfg: UseConfig) -> Self {
        let u = table.user(user);
        let items = (0..table.n_items())
            .map(|i| sigmoid(personal_term(u, table.item(ItemId::from(i)), &cfg)))
            .collect();
        let attrs = (0..table.n_attrs())
            .map(|a| sigmoid(personal_term(u, table.attr(AttrId::from(a)), &cfg)))
            .collect();
        DecayTracker {
            cfg,
            seen_turns: 0,
            n_ask: 0,
            items,
            attrs,
        }
    }

    /// Folds any turns of `conv` not seen yet.
    pub fn observe(&mut self, conv: &Conversation, table: &EmbeddingTable<T>) {
        let u = table.user(conv.user());
        let cfg = self.cfg;
        let gamma = T::of(cfg.decay);
        for rec in &conv.history()[self.seen_turns..] {
            let Some(ev) = TurnEvidence::from_record(rec) else {
                continue;
            };
            let means = TurnMeans::new(table, &ev);
            let first = self.n_ask == 0;
            let fold = |acc: &mut T, x: &[T]| {
                let s = means.score(personal_term(u, x, &cfg), x, &cfg);
                *acc = if first || !cfg.use_decay {
                    s
                } else {
                    decay_step(*acc, s, gamma)
                };
            };
            for (i, acc) in self.items.iter_mut().enumerate() {
                fold(acc, table.item(ItemId::from(i)));
            }
            for (a, acc) in self.attrs.iter_mut().enumerate() {
                fold(acc, table.attr(AttrId::from(a)));
            }
            self.n_ask += 1;
        }
        self.seen_turns = conv.history().len();
    }

    pub fn item_distribution(&self, conv: &Conversation) -> ItemDistribution<T> {
        PreferenceDistribution {
            turn: conv.turn(),
            entries: conv.v_cand().iter().map(|v| (*v, self.items[v.idx()])).collect(),
        }
    }

    pub fn attribute_distribution(&self, conv: &Conversation) -> AttrDistribution<T> {
        PreferenceDistribution {
            turn: conv.turn(),
            entries: conv.p_cand().map(|p| (p, self.attrs[p.idx()])).collect(),
        }
    }
}

/// Picks the recompute or incremental path by candidate-set size.
#[derive(Debug, Clone)]
pub struct SoftEstimator<T> {
    cfg: UseConfig,
    tracker: Option<DecayTracker<T>>,
}

impl<T: Scalar> SoftEstimator<T> {
    pub fn new(cfg: UseConfig) -> Self {
        SoftEstimator { cfg, tracker: None }
    }

    pub fn config(&self) -> &UseConfig {
        &self.cfg
    }

    pub fn distributions(
        &mut self,
        conv: &Conversation,
        table: &EmbeddingTable<T>,
    ) -> (ItemDistribution<T>, AttrDistribution<T>) {
        if conv.v_cand().len() > INCREMENTAL_THRESHOLD {
            let cfg = self.cfg;
            let tracker = self
                .tracker
                .get_or_insert_with(|| DecayTracker::new(table, conv.user(), cfg));
            tracker.observe(conv, table);
            (
                tracker.item_distribution(conv),
                tracker.attribute_distribution(conv),
            )
        } else {
            (
                item_distribution(conv, table, &self.cfg),
                attribute_distribution(conv, table, &self.cfg),
            )
        }
    }
}
