//! The conversation environment.
//!
//! [`Conversation`] is the protocol state machine shared by simulated and
//! human-backed sessions: candidate sets, turn history, rewards and
//! termination. [`SessionState`] pairs it with a [`SimulatedUser`] whose
//! answers follow the clear/vague preference rules.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::Catalog;
use crate::ids::{AttrId, ItemId, TypeId, UserId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Mode {
    /// Soft evidence: only failed recommendations shrink the candidate set.
    Vpmcr,
    /// Hard filtering on every answer.
    Mimcr,
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "VPMCR" => Ok(Mode::Vpmcr),
            "MIMCR" => Ok(Mode::Mimcr),
            other => Err(format!("unknown mode {other:?} (expected VPMCR or MIMCR)")),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Vpmcr => "VPMCR",
            Mode::Mimcr => "MIMCR",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub rec_suc: f64,
    pub rec_fail: f64,
    pub ask_suc: f64,
    pub ask_fail: f64,
    pub quit: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            rec_suc: 1.0,
            rec_fail: -0.01,
            ask_suc: -0.1,
            ask_fail: -0.1,
            quit: -0.3,
        }
    }
}

impl RewardConfig {
    pub fn is_valid(&self) -> bool {
        self.rec_suc > 0.0
            && [self.rec_fail, self.ask_suc, self.ask_fail, self.quit]
                .iter()
                .all(|r| *r < 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TurnKind {
    Ask,
    Recommend,
}

/// One system action and the answer it received.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnRecord {
    pub kind: TurnKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub asked_type: Option<TypeId>,
    #[serde(default)]
    pub displayed: Vec<AttrId>,
    #[serde(default)]
    pub clicked: Vec<AttrId>,
    #[serde(default)]
    pub nonclicked: Vec<AttrId>,
    /// Candidate attributes of the asked type that were not displayed.
    #[serde(default)]
    pub noshow: Vec<AttrId>,
    #[serde(default)]
    pub recommended: Vec<ItemId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accepted: Option<ItemId>,
    pub reward: f64,
    /// Candidate-set size after the turn was applied.
    pub n_cand: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum Outcome {
    Running,
    /// `turn` is the 1-based turn of the accepted recommendation and `rank`
    /// the 1-based position of the accepted item in the list.
    Success { turn: usize, rank: usize },
    Quit,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SimError {
    #[error("target set is empty")]
    NoTargets,
    #[error("target items share no attribute")]
    NoCommonAttribute,
    #[error("unknown {class} id {id}")]
    UnknownId { class: &'static str, id: u32 },
    #[error("empty candidate set")]
    EmptyCandidates,
    #[error("session already finished")]
    Finished,
    #[error("nothing displayed")]
    EmptyDisplay,
    #[error("attribute {attr} has type {found}, question asked about type {expected}")]
    WrongType {
        attr: AttrId,
        expected: TypeId,
        found: TypeId,
    },
    #[error("attribute {0} is not a candidate attribute")]
    AttributeNotCandidate(AttrId),
    #[error("attribute {0} was already displayed")]
    AlreadyDisplayed(AttrId),
    #[error("attribute {0} listed twice")]
    DuplicateAttribute(AttrId),
    #[error("clicked attribute {0} was not displayed")]
    IllegalClick(AttrId),
    #[error("nothing recommended")]
    EmptyRecommendation,
    #[error("item {0} is not a candidate item")]
    ItemNotCandidate(ItemId),
    #[error("item {0} listed twice")]
    DuplicateItem(ItemId),
    #[error("accepted item {0} was not recommended")]
    IllegalAccept(ItemId),
}

/// Protocol state of one conversation, independent of who answers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conversation {
    user: UserId,
    p0: AttrId,
    mode: Mode,
    max_turns: usize,
    rewards: RewardConfig,
    v_cand: BTreeSet<ItemId>,
    /// Number of candidate items carrying each attribute; keys are `P_cand`.
    attr_support: BTreeMap<AttrId, usize>,
    displayed: BTreeSet<AttrId>,
    history: Vec<TurnRecord>,
    turn: usize,
    outcome: Outcome,
}

impl Conversation {
    /// Starts a conversation from the query attribute `p0`.
    pub fn start(
        catalog: &Catalog,
        user: UserId,
        p0: AttrId,
        mode: Mode,
        max_turns: usize,
        rewards: RewardConfig,
    ) -> Result<Self, SimError> {
        if !catalog.has_user(user) {
            return Err(SimError::UnknownId { class: "user", id: user.0 });
        }
        if !catalog.has_attribute(p0) {
            return Err(SimError::UnknownId {
                class: "attribute",
                id: p0.0,
            });
        }
        let v_cand: BTreeSet<ItemId> = catalog.attr_items(p0).iter().copied().collect();
        if v_cand.is_empty() {
            return Err(SimError::EmptyCandidates);
        }
        let mut conv = Conversation {
            user,
            p0,
            mode,
            max_turns: max_turns.max(1),
            rewards,
            v_cand: BTreeSet::new(),
            attr_support: BTreeMap::new(),
            displayed: BTreeSet::new(),
            history: Vec::new(),
            turn: 0,
            outcome: Outcome::Running,
        };
        conv.set_candidates(catalog, v_cand);
        Ok(conv)
    }

    fn set_candidates(&mut self, catalog: &Catalog, v_cand: BTreeSet<ItemId>) {
        self.attr_support.clear();
        for v in &v_cand {
            for p in catalog.item_attrs(*v) {
                *self.attr_support.entry(*p).or_insert(0) += 1;
            }
        }
        self.v_cand = v_cand;
    }

    fn remove_candidate(&mut self, catalog: &Catalog, v: ItemId) {
        if self.v_cand.remove(&v) {
            for p in catalog.item_attrs(v) {
                if let Some(n) = self.attr_support.get_mut(p) {
                    *n -= 1;
                    if *n == 0 {
                        self.attr_support.remove(p);
                    }
                }
            }
        }
    }

    pub fn user(&self) -> UserId {
        self.user
    }
    pub fn p0(&self) -> AttrId {
        self.p0
    }
    pub fn mode(&self) -> Mode {
        self.mode
    }
    pub fn max_turns(&self) -> usize {
        self.max_turns
    }
    pub fn rewards(&self) -> &RewardConfig {
        &self.rewards
    }
    pub fn turn(&self) -> usize {
        self.turn
    }
    pub fn outcome(&self) -> Outcome {
        self.outcome
    }
    pub fn is_done(&self) -> bool {
        self.outcome != Outcome::Running
    }
    pub fn history(&self) -> &[TurnRecord] {
        &self.history
    }
    pub fn v_cand(&self) -> &BTreeSet<ItemId> {
        &self.v_cand
    }
    /// Candidate attributes: the union of attributes of candidate items.
    pub fn p_cand(&self) -> impl Iterator<Item = AttrId> + '_ {
        self.attr_support.keys().copied()
    }
    pub fn n_p_cand(&self) -> usize {
        self.attr_support.len()
    }
    pub fn is_attr_candidate(&self, p: AttrId) -> bool {
        self.attr_support.contains_key(&p)
    }
    /// How many candidate items carry `p`.
    pub fn attr_support(&self, p: AttrId) -> usize {
        self.attr_support.get(&p).copied().unwrap_or(0)
    }
    pub fn displayed(&self) -> &BTreeSet<AttrId> {
        &self.displayed
    }
    /// Attributes clicked so far, in click order.
    pub fn clicked_history(&self) -> Vec<AttrId> {
        self.history.iter().flat_map(|t| t.clicked.iter().copied()).collect()
    }
    pub fn nonclicked_history(&self) -> Vec<AttrId> {
        self.history
            .iter()
            .flat_map(|t| t.nonclicked.iter().copied())
            .collect()
    }
    /// Candidate attributes that can still be asked.
    pub fn askable_attrs(&self) -> impl Iterator<Item = AttrId> + '_ {
        self.p_cand()
            .filter(move |p| *p != self.p0 && !self.displayed.contains(p))
    }

    fn ensure_running(&self) -> Result<(), SimError> {
        if self.is_done() {
            Err(SimError::Finished)
        } else {
            Ok(())
        }
    }

    /// Checks that `displayed` is a legal question about `asked_type`.
    pub fn check_question(
        &self,
        catalog: &Catalog,
        asked_type: TypeId,
        displayed: &[AttrId],
    ) -> Result<(), SimError> {
        self.ensure_running()?;
        if displayed.is_empty() {
            return Err(SimError::EmptyDisplay);
        }
        let mut seen = BTreeSet::new();
        for p in displayed {
            if !catalog.has_attribute(*p) {
                return Err(SimError::UnknownId {
                    class: "attribute",
                    id: p.0,
                });
            }
            if !seen.insert(*p) {
                return Err(SimError::DuplicateAttribute(*p));
            }
            let found = catalog.attr_type(*p);
            if found != asked_type {
                return Err(SimError::WrongType {
                    attr: *p,
                    expected: asked_type,
                    found,
                });
            }
            if !self.is_attr_candidate(*p) {
                return Err(SimError::AttributeNotCandidate(*p));
            }
            if self.displayed.contains(p) {
                return Err(SimError::AlreadyDisplayed(*p));
            }
        }
        Ok(())
    }

    /// Applies an answer to a question; returns the turn reward.
    pub fn apply_answer(
        &mut self,
        catalog: &Catalog,
        asked_type: TypeId,
        displayed: &[AttrId],
        clicked: &[AttrId],
    ) -> Result<f64, SimError> {
        self.check_question(catalog, asked_type, displayed)?;
        let clicked_set: BTreeSet<AttrId> = clicked.iter().copied().collect();
        if let Some(p) = clicked_set.iter().find(|p| !displayed.contains(p)) {
            return Err(SimError::IllegalClick(*p));
        }
        let clicked: Vec<AttrId> = displayed
            .iter()
            .copied()
            .filter(|p| clicked_set.contains(p))
            .collect();
        let nonclicked: Vec<AttrId> = displayed
            .iter()
            .copied()
            .filter(|p| !clicked_set.contains(p))
            .collect();
        let noshow: Vec<AttrId> = catalog
            .type_attrs(asked_type)
            .iter()
            .copied()
            .filter(|p| self.is_attr_candidate(*p) && !displayed.contains(p))
            .collect();

        self.displayed.extend(displayed.iter().copied());
        let mut reward = if clicked.is_empty() {
            self.rewards.ask_fail
        } else {
            self.rewards.ask_suc
        };

        if self.mode == Mode::Mimcr {
            let keep: BTreeSet<ItemId> = if clicked.is_empty() {
                self.v_cand
                    .iter()
                    .copied()
                    .filter(|v| !displayed.iter().any(|p| catalog.item_has_attr(*v, *p)))
                    .collect()
            } else {
                self.v_cand
                    .iter()
                    .copied()
                    .filter(|v| clicked.iter().any(|p| catalog.item_has_attr(*v, *p)))
                    .collect()
            };
            self.set_candidates(catalog, keep);
        }

        self.turn += 1;
        if self.turn >= self.max_turns || self.v_cand.is_empty() {
            self.outcome = Outcome::Quit;
            reward += self.rewards.quit;
        }
        self.history.push(TurnRecord {
            kind: TurnKind::Ask,
            asked_type: Some(asked_type),
            displayed: displayed.to_vec(),
            clicked,
            nonclicked,
            noshow,
            recommended: Vec::new(),
            accepted: None,
            reward,
            n_cand: self.v_cand.len(),
        });
        Ok(reward)
    }

    /// Checks that `recommended` is a legal recommendation list.
    pub fn check_recommendation(&self, recommended: &[ItemId]) -> Result<(), SimError> {
        self.ensure_running()?;
        if recommended.is_empty() {
            return Err(SimError::EmptyRecommendation);
        }
        let mut seen = BTreeSet::new();
        for v in recommended {
            if !seen.insert(*v) {
                return Err(SimError::DuplicateItem(*v));
            }
            if !self.v_cand.contains(v) {
                return Err(SimError::ItemNotCandidate(*v));
            }
        }
        Ok(())
    }

    /// Applies the user's verdict on a recommendation list; returns the reward.
    pub fn apply_recommendation(
        &mut self,
        catalog: &Catalog,
        recommended: &[ItemId],
        accepted: Option<ItemId>,
    ) -> Result<f64, SimError> {
        self.check_recommendation(recommended)?;
        self.turn += 1;
        let reward = match accepted {
            Some(item) => {
                let rank = recommended
                    .iter()
                    .position(|v| *v == item)
                    .ok_or(SimError::IllegalAccept(item))?
                    + 1;
                self.outcome = Outcome::Success {
                    turn: self.turn,
                    rank,
                };
                self.rewards.rec_suc
            }
            None => {
                for v in recommended {
                    self.remove_candidate(catalog, *v);
                }
                let mut r = self.rewards.rec_fail;
                if self.turn >= self.max_turns || self.v_cand.is_empty() {
                    self.outcome = Outcome::Quit;
                    r += self.rewards.quit;
                }
                r
            }
        };
        self.history.push(TurnRecord {
            kind: TurnKind::Recommend,
            asked_type: None,
            displayed: Vec::new(),
            clicked: Vec::new(),
            nonclicked: Vec::new(),
            noshow: Vec::new(),
            recommended: recommended.to_vec(),
            accepted,
            reward,
            n_cand: self.v_cand.len(),
        });
        Ok(reward)
    }

    /// Per-turn JSON-lines transcript.
    pub fn transcript_jsonl(&self) -> String {
        let mut out = String::new();
        for (i, t) in self.history.iter().enumerate() {
            let line = TranscriptLine {
                turn: i + 1,
                record: t.clone(),
            };
            out.push_str(&serde_json::to_string(&line).expect("transcript serializes"));
            out.push('\n');
        }
        out
    }
}

/// One transcript row as written to JSON lines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptLine {
    pub turn: usize,
    #[serde(flatten)]
    pub record: TurnRecord,
}

/// Ground truth and answering rules of a simulated user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedUser {
    pub targets: Vec<ItemId>,
    /// Intent space: types of all target attributes.
    pub intent_types: BTreeSet<TypeId>,
    /// Ground-truth attribute space: union of target attributes.
    pub gt_attrs: BTreeSet<AttrId>,
    pub clear_types: BTreeSet<TypeId>,
    pub vague_types: BTreeSet<TypeId>,
    /// Click probability for a preferred attribute of a vague type.
    pub click_prob: f64,
}

impl SimulatedUser {
    /// Returns the clicked subset of `displayed`, drawing from `rng` only for
    /// preferred attributes of vague types.
    pub fn answer(
        &self,
        asked_type: TypeId,
        displayed: &[AttrId],
        rng: &mut ChaCha8Rng,
    ) -> Vec<AttrId> {
        if self.clear_types.contains(&asked_type) {
            displayed
                .iter()
                .copied()
                .filter(|p| self.gt_attrs.contains(p))
                .collect()
        } else if self.vague_types.contains(&asked_type) {
            displayed
                .iter()
                .copied()
                .filter(|p| self.gt_attrs.contains(p) && rng.gen_bool(self.click_prob))
                .collect()
        } else {
            Vec::new()
        }
    }

    /// First target in list order, if any.
    pub fn accepts(&self, recommended: &[ItemId]) -> Option<ItemId> {
        recommended.iter().copied().find(|v| self.targets.contains(v))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub mode: Mode,
    pub max_turns: usize,
    pub vague_ratio: f64,
    pub click_prob: f64,
    pub rewards: RewardConfig,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            mode: Mode::Vpmcr,
            max_turns: 15,
            vague_ratio: 0.5,
            click_prob: 0.5,
            rewards: RewardConfig::default(),
        }
    }
}

/// A conversation with a simulated user and its private random stream.
#[derive(Debug, Clone)]
pub struct SessionState {
    pub conv: Conversation,
    pub user: SimulatedUser,
    rng: ChaCha8Rng,
    target_filtered: bool,
}

/// Starts a simulated session for `user` with target items `targets`.
pub fn new_session(
    catalog: &Catalog,
    user: UserId,
    targets: &[ItemId],
    cfg: &SessionConfig,
    seed: u64,
) -> Result<SessionState, SimError> {
    if targets.is_empty() {
        return Err(SimError::NoTargets);
    }
    if let Some(v) = targets.iter().find(|v| !catalog.has_item(**v)) {
        return Err(SimError::UnknownId { class: "item", id: v.0 });
    }
    if !catalog.has_user(user) {
        return Err(SimError::UnknownId { class: "user", id: user.0 });
    }
    let common = catalog.common_attrs(targets);
    if common.is_empty() {
        return Err(SimError::NoCommonAttribute);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p0 = *common.choose(&mut rng).expect("nonempty");

    let gt_attrs: BTreeSet<AttrId> = targets
        .iter()
        .flat_map(|v| catalog.item_attrs(*v).iter().copied())
        .collect();
    let intent_types: BTreeSet<TypeId> = gt_attrs.iter().map(|p| catalog.attr_type(*p)).collect();
    let mut types: Vec<TypeId> = intent_types.iter().copied().collect();
    let n_vague = (cfg.vague_ratio.clamp(0.0, 1.0) * types.len() as f64).round() as usize;
    types.shuffle(&mut rng);
    let vague_types: BTreeSet<TypeId> = types[..n_vague].iter().copied().collect();
    let clear_types: BTreeSet<TypeId> = types[n_vague..].iter().copied().collect();

    let conv = Conversation::start(catalog, user, p0, cfg.mode, cfg.max_turns, cfg.rewards)?;
    Ok(SessionState {
        conv,
        user: SimulatedUser {
            targets: targets.to_vec(),
            intent_types,
            gt_attrs,
            clear_types,
            vague_types,
            click_prob: cfg.click_prob,
        },
        rng,
        target_filtered: false,
    })
}

/// Answer to a question as `(clicked, nonclicked)`.
pub type QuestionResponse = (Vec<AttrId>, Vec<AttrId>);

impl SessionState {
    pub fn is_done(&self) -> bool {
        self.conv.is_done()
    }

    /// Whether a target item has ever been removed by answer filtering.
    pub fn target_filtered(&self) -> bool {
        self.target_filtered
    }

    pub fn targets_in_candidates(&self) -> bool {
        self.user.targets.iter().all(|v| self.conv.v_cand().contains(v))
    }

    pub fn respond_to_question(
        &mut self,
        catalog: &Catalog,
        asked_type: TypeId,
        displayed: &[AttrId],
    ) -> Result<QuestionResponse, SimError> {
        self.conv.check_question(catalog, asked_type, displayed)?;
        let clicked = self.user.answer(asked_type, displayed, &mut self.rng);
        self.conv.apply_answer(catalog, asked_type, displayed, &clicked)?;
        if !self.targets_in_candidates() {
            self.target_filtered = true;
        }
        let rec = self.conv.history().last().expect("turn recorded");
        Ok((rec.clicked.clone(), rec.nonclicked.clone()))
    }

    pub fn respond_to_recommendation(
        &mut self,
        catalog: &Catalog,
        recommended: &[ItemId],
    ) -> Result<Outcome, SimError> {
        self.conv.check_recommendation(recommended)?;
        let accepted = self.user.accepts(recommended);
        self.conv.apply_recommendation(catalog, recommended, accepted)?;
        Ok(self.conv.outcome())
    }

    /// Reward of the most recent turn.
    pub fn last_reward(&self) -> Option<f64> {
        self.conv.history().last().map(|t| t.reward)
    }

    /// Random stream shared with graph sampling so one seed fixes a session.
    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}
