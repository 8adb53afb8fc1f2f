//! Policies that drive a conversation: the greedy trained agent and two
//! scripted baselines.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::catalog::Catalog;
use crate::estimation::SoftEstimator;
use crate::ids::{AttrId, ItemId, TypeId};
use crate::policy::{infer_system_action, state_q_values, Agent, Knowledge, SystemAction};
use crate::scalar::Scalar;
use crate::simulator::Conversation;

use super::HarnessError;

/// Chooses the system turn for a running conversation.
pub trait ConversationPolicy {
    /// Called once before the first turn of every episode.
    fn begin_episode(&mut self, _conv: &Conversation) {}

    fn act(
        &mut self,
        conv: &Conversation,
        catalog: &Catalog,
        rng: &mut ChaCha8Rng,
    ) -> Result<SystemAction, HarnessError>;

    fn name(&self) -> &str;
}

/// The trained agent acting greedily.
pub struct GreedyAgent<'a, T> {
    agent: &'a Agent<T>,
    know: &'a Knowledge<T>,
    xw1: Array2<T>,
    estimator: SoftEstimator<T>,
}

impl<'a, T: Scalar> GreedyAgent<'a, T> {
    pub fn new(agent: &'a Agent<T>, know: &'a Knowledge<T>) -> Self {
        GreedyAgent {
            agent,
            know,
            xw1: agent.projected(know),
            estimator: SoftEstimator::new(agent.config.use_cfg),
        }
    }
}

impl<T: Scalar> ConversationPolicy for GreedyAgent<'_, T> {
    fn begin_episode(&mut self, _conv: &Conversation) {
        self.estimator = SoftEstimator::new(self.agent.config.use_cfg);
    }

    fn act(
        &mut self,
        conv: &Conversation,
        catalog: &Catalog,
        rng: &mut ChaCha8Rng,
    ) -> Result<SystemAction, HarnessError> {
        let obs = self.agent.observe(conv, self.know, &mut self.estimator, rng);
        let scored = state_q_values(&self.agent.params, &self.xw1, self.know, &obs.state);
        Ok(infer_system_action(&scored, catalog, self.agent.config.ask_k)?)
    }

    fn name(&self) -> &str {
        "agent"
    }
}

/// Entropy in bits of a yes/no split with share `f`.
pub fn binary_entropy(f: f64) -> f64 {
    if f <= 0.0 || f >= 1.0 {
        return 0.0;
    }
    -f * f.log2() - (1.0 - f) * (1.0 - f).log2()
}

/// Share of candidate items that carry `p`.
pub fn coverage(conv: &Conversation, p: AttrId) -> f64 {
    let n = conv.v_cand().len();
    if n == 0 {
        0.0
    } else {
        conv.attr_support(p) as f64 / n as f64
    }
}

/// Candidate items ranked by how many clicked attributes they carry, ties by
/// ascending id.
pub fn overlap_ranking(conv: &Conversation, catalog: &Catalog, n: usize) -> Vec<ItemId> {
    let clicked: BTreeSet<AttrId> = conv.clicked_history().into_iter().collect();
    let mut scored: Vec<(usize, ItemId)> = conv
        .v_cand()
        .iter()
        .map(|v| {
            let hits = catalog.item_attrs(*v).iter().filter(|p| clicked.contains(p)).count();
            (hits, *v)
        })
        .collect();
    scored.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    scored.into_iter().take(n).map(|(_, v)| v).collect()
}

fn by_entropy_desc(a: &(f64, AttrId), b: &(f64, AttrId)) -> Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
}

/// The highest-entropy askable attribute followed by up to `k - 1` more of
/// its type, or `None` when nothing is askable.
pub fn max_entropy_question(conv: &Conversation, catalog: &Catalog, k: usize) -> Option<SystemAction> {
    let mut ranked: Vec<(f64, AttrId)> = conv
        .askable_attrs()
        .map(|p| (binary_entropy(coverage(conv, p)), p))
        .collect();
    ranked.sort_by(by_entropy_desc);
    let (_, best) = *ranked.first()?;
    let attr_type = catalog.attr_type(best);
    let attrs = ranked
        .iter()
        .filter(|(_, p)| catalog.attr_type(*p) == attr_type)
        .take(k.max(1))
        .map(|(_, p)| *p)
        .collect();
    Some(SystemAction::Ask { attr_type, attrs })
}

/// Recommends with probability `min(1, n / |V_cand|)`, otherwise asks the
/// most informative attribute.
#[derive(Debug, Clone)]
pub struct MaxEntropy {
    pub n: usize,
    pub k: usize,
}

impl MaxEntropy {
    pub fn recommend_probability(&self, conv: &Conversation) -> f64 {
        let c = conv.v_cand().len();
        if c == 0 {
            1.0
        } else {
            (self.n as f64 / c as f64).min(1.0)
        }
    }
}

impl ConversationPolicy for MaxEntropy {
    fn act(
        &mut self,
        conv: &Conversation,
        catalog: &Catalog,
        rng: &mut ChaCha8Rng,
    ) -> Result<SystemAction, HarnessError> {
        let p = self.recommend_probability(conv);
        if p < 1.0 && rng.gen::<f64>() >= p {
            if let Some(ask) = max_entropy_question(conv, catalog, self.k) {
                return Ok(ask);
            }
        }
        Ok(SystemAction::Recommend {
            items: overlap_ranking(conv, catalog, self.n),
        })
    }

    fn name(&self) -> &str {
        "max_entropy"
    }
}

/// Uniform over "recommend" and every askable attribute type.
#[derive(Debug, Clone)]
pub struct UniformRandom {
    pub n: usize,
    pub k: usize,
}

impl ConversationPolicy for UniformRandom {
    fn act(
        &mut self,
        conv: &Conversation,
        catalog: &Catalog,
        rng: &mut ChaCha8Rng,
    ) -> Result<SystemAction, HarnessError> {
        let mut by_type: BTreeMap<TypeId, Vec<AttrId>> = BTreeMap::new();
        for p in conv.askable_attrs() {
            by_type.entry(catalog.attr_type(p)).or_default().push(p);
        }
        let choice = rng.gen_range(0..=by_type.len());
        if choice == by_type.len() {
            let cand: Vec<ItemId> = conv.v_cand().iter().copied().collect();
            let items = cand.choose_multiple(rng, self.n.min(cand.len())).copied().collect();
            return Ok(SystemAction::Recommend { items });
        }
        let (attr_type, attrs) = by_type.into_iter().nth(choice).expect("in range");
        let attrs = attrs
            .choose_multiple(rng, self.k.min(attrs.len()))
            .copied()
            .collect();
        Ok(SystemAction::Ask { attr_type, attrs })
    }

    fn name(&self) -> &str {
        "random"
    }
}
