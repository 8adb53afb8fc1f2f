//! Criterion-level checks shared by the module tests and the acceptance run.
//! Each panics on failure and returns a one-line summary otherwise.

use std::collections::BTreeSet;
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::{small_catalog, table64, toy_world};
use vaguecrs::embeddings::EmbeddingTable;
use vaguecrs::encoder::{build_graph, encode_nodes, DynamicGraph, GraphInput, Node};
use vaguecrs::estimation::{
    average_unshown, choice_scores, closed_form_decay, decay_step, item_distribution,
    turn_item_score, PreferenceDistribution, TurnEvidence, UseConfig,
};
use vaguecrs::harness::baselines::{ConversationPolicy, UniformRandom};
use vaguecrs::harness::metrics::{hdcg, metrics_from_transcripts, EpisodeRecord};
use vaguecrs::harness::runner::apply_action;
use vaguecrs::ids::{AttrId, ItemId, TypeId, UserId};
use vaguecrs::nn::{NetDims, NetParams};
use vaguecrs::policy::{
    activation_pattern, infer_system_action, prune_actions, state_q_values, td_loss,
    td_loss_and_grad, td_target, Action, Agent, AgentConfig, Knowledge, StateInput, SystemAction,
    Transition,
};
use vaguecrs::qnet::dueling;
use vaguecrs::replay::PrioritizedReplay;
use vaguecrs::scalar::{dot, sigmoid};
use vaguecrs::simulator::{
    new_session, Conversation, Mode, Outcome, RewardConfig, SessionConfig, TurnKind, TurnRecord,
};
use vaguecrs::Catalog;

fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

// ---- soft estimation ----

pub fn decay_fold_matches_closed_form(cases: usize) -> String {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let gammas = [0.0, 0.1, 0.5, 1.0];
    let mut worst = 0.0f64;
    for i in 0..cases {
        let gamma = gammas[i % gammas.len()];
        let len = rng.gen_range(1..=15);
        let history: Vec<f64> = (0..len).map(|_| rng.gen_range(0.0..1.0)).collect();
        let folded = history.iter().fold(0.0, |acc, h| decay_step(acc, *h, gamma));
        let closed = closed_form_decay(&history, gamma).unwrap();
        let e = rel_err(folded, closed);
        assert!(e <= 1e-12, "history {history:?} gamma {gamma}: {folded} vs {closed}");
        worst = worst.max(e);
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 1.0, "took {elapsed:?}");
    format!("{cases} histories, worst rel err {worst:.1e}, {elapsed:.2?}")
}

fn scaled(table: &EmbeddingTable<f64>, s: f64) -> EmbeddingTable<f64> {
    EmbeddingTable::from_parts(table.users() * s, table.items() * s, table.attrs() * s)
}

/// Random disjoint clicked / non-clicked / unshown sets of one type.
fn random_evidence(catalog: &Catalog, rng: &mut ChaCha8Rng) -> TurnEvidence {
    let t = TypeId(rng.gen_range(0..catalog.n_types() as u32));
    let mut attrs = catalog.type_attrs(t).to_vec();
    attrs.shuffle(rng);
    let mut ev = TurnEvidence {
        asked_type: t,
        clicked: vec![],
        nonclicked: vec![],
        noshow: vec![],
    };
    for p in attrs {
        match rng.gen_range(0..4) {
            0 => ev.clicked.push(p),
            1 => ev.nonclicked.push(p),
            2 => ev.noshow.push(p),
            _ => {}
        }
    }
    ev
}

pub fn turn_scores_bounded_and_reduce(fixtures: usize) -> String {
    let start = Instant::now();
    let catalog = toy_world(3);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let tables: Vec<EmbeddingTable<f64>> = (0..20)
        .map(|s| scaled(&table64(&catalog, 16, s), rng.gen_range(0.1..3.0)))
        .collect();
    let cfg = UseConfig::default();
    let (mut lo, mut hi) = (1.0f64, 0.0f64);
    for i in 0..fixtures {
        let table = &tables[i % tables.len()];
        let ev = random_evidence(&catalog, &mut rng);
        let u = UserId(rng.gen_range(0..catalog.n_users() as u32));
        let v = ItemId(rng.gen_range(0..catalog.n_items() as u32));
        let s = turn_item_score(table, u, v, &ev, &cfg);
        assert!(s > 0.0 && s < 1.0, "score {s} outside (0, 1)");
        lo = lo.min(s);
        hi = hi.max(s);

        // empty-set conventions
        let (wc, wn) = choice_scores(table, v, &ev);
        if ev.clicked.is_empty() {
            assert_eq!(wc, 0.0);
        }
        if ev.nonclicked.is_empty() {
            assert_eq!(wn, 0.0);
        }
        if ev.noshow.is_empty() {
            assert_eq!(average_unshown(table, v, &ev), 0.0);
        }

        // zero-evidence turn
        let bare = TurnEvidence {
            asked_type: ev.asked_type,
            clicked: vec![],
            nonclicked: vec![],
            noshow: vec![],
        };
        let expect = sigmoid(dot(table.user(u), table.item(v)));
        assert_eq!(turn_item_score(table, u, v, &bare, &cfg), expect);
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 5.0, "took {elapsed:?}");
    format!("{fixtures} fixtures, scores in [{lo:.4}, {hi:.4}], {elapsed:.2?}")
}

// ---- simulator ----

/// Plays seeded random-policy episodes and checks the candidate-set
/// contract turn by turn. Returns the transcripts.
fn protocol_episodes(catalog: &Catalog, episodes: usize, seed0: u64) -> Vec<String> {
    let pairs = vaguecrs::catalog::simulation_pairs(catalog, 2);
    let cfg = SessionConfig::default();
    let mut transcripts = Vec::with_capacity(episodes);
    for e in 0..episodes {
        let seed = seed0 + e as u64;
        let pair = &pairs[e % pairs.len()];
        let mut s = new_session(catalog, pair.user, &pair.items, &cfg, seed).unwrap();
        let mut policy = UniformRandom { n: 10, k: 2 };
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(31));
        while !s.is_done() {
            let before: BTreeSet<ItemId> = s.conv.v_cand().clone();
            assert!(pair.items.iter().all(|v| before.contains(v)), "target lost");
            let a = policy.act(&s.conv, catalog, &mut rng).unwrap();
            apply_action(&mut s, catalog, &a).unwrap();
            let after = s.conv.v_cand();
            match &a {
                SystemAction::Ask { .. } => assert_eq!(&before, after, "ask changed candidates"),
                SystemAction::Recommend { items } => {
                    if matches!(s.conv.outcome(), Outcome::Success { .. }) {
                        assert!(items.iter().any(|v| pair.items.contains(v)));
                    } else {
                        assert_eq!(before.len() - after.len(), items.len());
                        let expect: BTreeSet<ItemId> =
                            before.iter().copied().filter(|v| !items.contains(v)).collect();
                        assert_eq!(&expect, after);
                    }
                }
            }
        }
        assert!(!s.target_filtered());
        transcripts.push(s.conv.transcript_jsonl());
    }
    transcripts
}

/// Target loss under hard filtering: a vague type whose preferred attribute
/// is never clicked removes the target carrying it.
pub fn mimcr_target_loss() -> String {
    let catalog = small_catalog();
    let cfg = SessionConfig {
        mode: Mode::Mimcr,
        vague_ratio: 1.0,
        click_prob: 0.0,
        ..Default::default()
    };
    let targets = [ItemId(0), ItemId(1)];
    let mut s = new_session(&catalog, UserId(0), &targets, &cfg, 3).unwrap();
    assert_eq!(s.conv.p0(), AttrId(0));
    assert!(s.targets_in_candidates());
    // attribute 1 belongs to target 0 but the vague user does not click it
    let (clicked, _) = s.respond_to_question(&catalog, TypeId(0), &[AttrId(1)]).unwrap();
    assert!(clicked.is_empty());
    assert!(!s.conv.v_cand().contains(&ItemId(0)));
    assert!(s.target_filtered());

    // the same answer under soft semantics keeps every candidate
    let soft = SessionConfig {
        mode: Mode::Vpmcr,
        ..cfg
    };
    let mut s = new_session(&catalog, UserId(0), &targets, &soft, 3).unwrap();
    s.respond_to_question(&catalog, TypeId(0), &[AttrId(1)]).unwrap();
    assert!(s.targets_in_candidates() && !s.target_filtered());
    "hard filtering drops target 0 after an unclicked preferred attribute".into()
}

pub fn simulator_protocol(episodes: usize) -> String {
    let start = Instant::now();
    let catalog = toy_world(11);
    let first = protocol_episodes(&catalog, episodes, 100);
    let second = protocol_episodes(&catalog, episodes, 100);
    assert!(first == second, "seeded replay differs");
    let turns: usize = first.iter().map(|t| t.lines().count()).sum();
    let fixture = mimcr_target_loss();
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 30.0, "took {elapsed:?}");
    format!("{episodes} episodes / {turns} turns replayed identically; {fixture}; {elapsed:.2?}")
}

// ---- graph and encoder ----

pub fn played_conversation() -> (Catalog, Conversation) {
    let catalog = small_catalog();
    let mut conv = Conversation::start(
        &catalog,
        UserId(0),
        AttrId(0),
        Mode::Vpmcr,
        15,
        RewardConfig::default(),
    )
    .unwrap();
    conv.apply_answer(&catalog, TypeId(0), &[AttrId(1), AttrId(2)], &[AttrId(2)])
        .unwrap();
    conv.apply_recommendation(&catalog, &[ItemId(2)], None).unwrap();
    (catalog, conv)
}

fn played_graph(table_seed: u64, dim: usize) -> (Catalog, Conversation, EmbeddingTable<f64>, DynamicGraph<f64>) {
    let (catalog, conv) = played_conversation();
    let table = table64(&catalog, dim, table_seed);
    let dist = item_distribution(&conv, &table, &UseConfig::default());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let g = DynamicGraph::from_input(&build_graph(&conv, &dist, 100, &[], &mut rng), &catalog);
    (catalog, conv, table, g)
}

pub fn node_set_matches_definition() {
    let (catalog, conv, _, g) = played_graph(1, 8);
    let mut expect = BTreeSet::new();
    expect.insert(Node::User(UserId(0)));
    for rec in conv.history() {
        expect.extend(rec.clicked.iter().map(|p| Node::Attr(*p)));
        expect.extend(rec.nonclicked.iter().map(|p| Node::Attr(*p)));
    }
    for v in conv.v_cand() {
        expect.insert(Node::Item(*v));
        expect.extend(catalog.item_attrs(*v).iter().map(|p| Node::Attr(*p)));
    }
    assert_eq!(g.node_set(), expect);
    assert_eq!(g.n_nodes(), expect.len());
    // the rejected item is gone, the non-clicked attribute stays
    assert!(!g.node_set().contains(&Node::Item(ItemId(2))));
    assert!(g.node_set().contains(&Node::Attr(AttrId(1))));
}

pub fn adjacency_matches_definition() {
    let (catalog, conv, table, g) = played_graph(2, 8);
    let dist = item_distribution(&conv, &table, &UseConfig::default());
    let a = g.adjacency();
    let nodes = g.nodes();
    for (i, ni) in nodes.iter().enumerate() {
        assert_eq!(a[[i, i]], 0.0);
        for (j, nj) in nodes.iter().enumerate() {
            let expect = match (ni, nj) {
                (Node::User(_), Node::Item(v)) | (Node::Item(v), Node::User(_)) => {
                    dist.get(*v).unwrap()
                }
                (Node::Item(v), Node::Attr(p)) | (Node::Attr(p), Node::Item(v))
                    if catalog.item_attrs(*v).contains(p) =>
                {
                    1.0
                }
                _ => 0.0,
            };
            assert_eq!(a[[i, j]].to_bits(), expect.to_bits(), "{ni:?} {nj:?}");
        }
    }
}

/// Largest deviation between permuted outputs over five permutations.
pub fn permutation_equivariance_error() -> f64 {
    let (catalog, _, table, g) = played_graph(6, 64);
    let p = NetParams::<f64>::init(NetDims::default(), &mut ChaCha8Rng::seed_from_u64(7));
    let base = encode_nodes(&g, &table, &p);
    let mut worst = 0.0f64;
    for seed in 0..5 {
        let mut perm: Vec<usize> = (0..g.n_nodes()).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let out = encode_nodes(&g.permuted(&perm, &catalog), &table, &p);
        for (i, pi) in perm.iter().enumerate() {
            for (a, b) in base.row(i).iter().zip(out.row(*pi)) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    worst
}

/// User, two items and two attributes.
fn five_node(clicks: Vec<AttrId>) -> GraphInput<f64> {
    GraphInput {
        user: UserId(0),
        items: vec![ItemId(0), ItemId(1)],
        item_weights: vec![0.62, 0.41],
        attrs: vec![AttrId(0), AttrId(3)],
        clicks,
    }
}

fn transition(clicks: Vec<AttrId>, action: usize, reward: f64) -> Transition<f64> {
    Transition {
        state: Arc::new(StateInput {
            graph: five_node(clicks),
            actions: vec![
                Action::Item(ItemId(0)),
                Action::Item(ItemId(1)),
                Action::Attr(AttrId(3)),
            ],
        }),
        action,
        reward,
        next: None,
    }
}

pub fn gradient_fixture_single() -> (Vec<Transition<f64>>, Vec<f64>, Vec<f64>) {
    (vec![transition(vec![AttrId(3), AttrId(0)], 2, -0.1)], vec![0.4], vec![1.0])
}

pub fn gradient_fixture_three() -> (Vec<Transition<f64>>, Vec<f64>, Vec<f64>) {
    let batch = vec![
        transition(vec![], 0, 1.0),
        transition(vec![AttrId(3)], 2, -0.1),
        transition(vec![AttrId(3), AttrId(0)], 1, -0.01),
    ];
    (batch, vec![0.3, -0.2, 0.25], vec![1.0, 0.6, 0.35])
}

/// Compares analytic and central-difference gradients on the largest entry
/// and random entries of every tensor. Entries whose perturbation flips a
/// ReLU or Huber branch are skipped, since central differences straddle a
/// kink there; each tensor still needs five valid comparisons. Returns the
/// worst relative error.
pub fn gradient_check(
    (batch, targets, weights): (Vec<Transition<f64>>, Vec<f64>, Vec<f64>),
    seed: u64,
    step: f64,
    rel: f64,
) -> f64 {
    let floor = 1e-9;
    let catalog = small_catalog();
    let know = Knowledge::new(catalog.clone(), table64(&catalog, 64, 21));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = NetParams::<f64>::init(NetDims::default(), &mut rng);
    let refs: Vec<&Transition<f64>> = batch.iter().collect();
    let (_, grads, _) = td_loss_and_grad(&params, &know, &refs, &weights, &targets);
    let base = activation_pattern(&params, &know, &refs, &targets);

    let mut worst = 0.0f64;
    for (t, name) in NetParams::<f64>::NAMES.iter().enumerate() {
        let shape = params.tensors()[t].dim();
        let g = grads.tensors()[t];
        let largest = g
            .indexed_iter()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .map(|(ix, _)| ix)
            .unwrap();
        let mut valid = 0;
        let mut attempts = 0;
        while valid < 5 {
            attempts += 1;
            assert!(attempts <= 200, "{name}: too few kink-free entries");
            let ix = if attempts == 1 {
                largest
            } else {
                (rng.gen_range(0..shape.0), rng.gen_range(0..shape.1))
            };
            let mut plus = params.clone();
            plus.tensors_mut()[t][ix] += step;
            let mut minus = params.clone();
            minus.tensors_mut()[t][ix] -= step;
            if activation_pattern(&plus, &know, &refs, &targets) != base
                || activation_pattern(&minus, &know, &refs, &targets) != base
            {
                continue;
            }
            let fd = (td_loss(&plus, &know, &refs, &weights, &targets)
                - td_loss(&minus, &know, &refs, &weights, &targets))
                / (2.0 * step);
            let an = g[ix];
            let scale = an.abs().max(fd.abs());
            let err = (an - fd).abs();
            assert!(
                err <= rel * scale + floor,
                "{name}{ix:?}: analytic {an:e} vs numeric {fd:e}"
            );
            if scale > 1e3 * floor {
                worst = worst.max(err / scale);
            }
            valid += 1;
        }
    }
    assert!(worst < rel, "worst relative error {worst:e}");
    worst
}

// ---- policy mechanics ----

fn sorted_oracle<K: Ord + Copy>(entries: &[(K, f64)], n: usize) -> Vec<(K, f64)> {
    let mut v = entries.to_vec();
    v.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    v.truncate(n);
    v
}

pub fn prune_matches_sort_oracle(cases: usize) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..cases {
        let n_items = rng.gen_range(1..60);
        let n_attrs = rng.gen_range(0..30);
        let n = rng.gen_range(1..15);
        // coarse scores so ties are common
        let levels = rng.gen_range(2..20) as f64;
        let mut score = || (rng.gen_range(0.0..1.0f64) * levels).floor() / levels;
        let items: Vec<(ItemId, f64)> = (0..n_items).map(|i| (ItemId(i), score())).collect();
        let attrs: Vec<(AttrId, f64)> = (0..n_attrs).map(|i| (AttrId(i), score())).collect();
        let space = prune_actions(
            &PreferenceDistribution {
                turn: 0,
                entries: items.clone(),
            },
            &PreferenceDistribution {
                turn: 0,
                entries: attrs.clone(),
            },
            n,
        );
        assert_eq!(space.items, sorted_oracle(&items, n));
        assert_eq!(space.attrs, sorted_oracle(&attrs, n));
        let actions = space.actions();
        assert!(actions[..space.items.len()].iter().all(|a| matches!(a, Action::Item(_))));
    }
    format!("{cases} random distributions")
}

pub fn dueling_is_mean_centred() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let value = rng.gen_range(-3.0..3.0);
        let adv: Vec<f64> = (0..rng.gen_range(1..20)).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let q = dueling(value, &adv);
        let mean_q = q.iter().sum::<f64>() / q.len() as f64;
        let mean_a = adv.iter().sum::<f64>() / adv.len() as f64;
        worst = worst.max((mean_q - value).abs());
        for (qk, ak) in q.iter().zip(&adv) {
            worst = worst.max(((qk - mean_q) - (ak - mean_a)).abs());
        }
    }
    assert!(worst < 1e-6, "{worst}");
    worst
}

/// Terminal and non-terminal targets from an agent's target network against
/// `r` and `r + 0.99 * max Q'` computed by hand from the next-state Q-values.
pub fn td_targets_match_hand_arithmetic() -> String {
    let catalog = small_catalog();
    let know = Knowledge::new(catalog.clone(), table64(&catalog, 64, 5));
    let mut agent = Agent::<f64>::new(AgentConfig {
        seed: 9,
        ..Default::default()
    });
    // make online and target networks differ
    agent.params.gcn_b2.fill(0.3);
    let next = Arc::new(StateInput {
        graph: five_node(vec![AttrId(3)]),
        actions: vec![
            Action::Item(ItemId(0)),
            Action::Item(ItemId(1)),
            Action::Attr(AttrId(0)),
            Action::Attr(AttrId(3)),
        ],
    });
    let xw1 = know.stacked().dot(&agent.target.gcn_w1);
    let next_q: Vec<f64> = state_q_values(&agent.target, &xw1, &know, &next)
        .iter()
        .map(|(_, q)| *q)
        .collect();
    let max_q = next_q.iter().copied().fold(f64::NEG_INFINITY, f64::max);

    let mut terminal = transition(vec![], 0, 1.0);
    terminal.next = None;
    let mut running = transition(vec![AttrId(3)], 2, -0.1);
    running.next = Some(next.clone());
    let mut failed = transition(vec![], 1, -0.01);
    failed.next = Some(next);
    let got = agent.td_targets(&know, &[&terminal, &running, &failed]);
    assert_eq!(got[0], 1.0);
    let expect_running = -0.1 + 0.99 * max_q;
    let expect_failed = -0.01 + 0.99 * max_q;
    assert!((got[1] - expect_running).abs() <= 1e-12, "{} vs {expect_running}", got[1]);
    assert!((got[2] - expect_failed).abs() <= 1e-12, "{} vs {expect_failed}", got[2]);
    assert_eq!(td_target(1.0, true, 5.0, 0.99), 1.0);
    assert!((td_target(-0.1f64, false, 0.5, 0.99) - 0.395).abs() < 1e-12);
    format!("terminal 1.0, non-terminal {:.6} and {:.6}", got[1], got[2])
}

/// Empirical draw shares against `p^alpha / sum p^alpha`: every share
/// within 5% relative and a chi-squared goodness-of-fit p-value.
pub fn per_sampling_ratios(draws: usize) -> (f64, f64) {
    let alpha = 0.6;
    let priorities = [0.05, 0.2, 0.5, 1.0, 1.5, 2.0, 3.5, 6.0];
    let mut replay = PrioritizedReplay::new(priorities.len(), alpha);
    for (i, p) in priorities.iter().enumerate() {
        replay.push_with_priority(i, *p).unwrap();
    }
    let mass: Vec<f64> = priorities.iter().map(|p| p.powf(alpha)).collect();
    let total: f64 = mass.iter().sum();
    let mut counts = vec![0usize; priorities.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let per_batch = 1000;
    for _ in 0..draws / per_batch {
        let b = replay.sample(per_batch, 0.4, &mut rng).unwrap();
        for i in b.indices {
            counts[*replay.get(i)] += 1;
        }
    }
    let n = (draws / per_batch * per_batch) as f64;
    let mut chi2 = 0.0;
    let mut worst = 0.0f64;
    for (c, m) in counts.iter().zip(&mass) {
        let expect = n * m / total;
        chi2 += (*c as f64 - expect).powi(2) / expect;
        worst = worst.max((*c as f64 - expect).abs() / expect);
    }
    let dist = ChiSquared::new((priorities.len() - 1) as f64).unwrap();
    let p_value = 1.0 - dist.cdf(chi2);
    assert!(worst <= 0.05, "share off by {worst}");
    assert!(p_value > 0.01, "chi-squared p = {p_value}");
    (worst, p_value)
}

/// p1 of type A scores 0.5, p2 and p3 of type B score 0.3 each: B sums to
/// 0.6 and wins, so both of its attributes are shown.
pub fn infer_sum_based_example() -> SystemAction {
    let catalog = small_catalog();
    let (p1, p2, p3) = (AttrId(0), AttrId(3), AttrId(4));
    assert_ne!(catalog.attr_type(p1), catalog.attr_type(p2));
    assert_eq!(catalog.attr_type(p2), catalog.attr_type(p3));
    let scored = vec![
        (Action::Item(ItemId(1)), 0.1),
        (Action::Attr(p1), 0.5),
        (Action::Attr(p2), 0.3),
        (Action::Attr(p3), 0.3),
    ];
    let a = infer_system_action(&scored, &catalog, 2).unwrap();
    assert_eq!(
        a,
        SystemAction::Ask {
            attr_type: catalog.attr_type(p2),
            attrs: vec![p2, p3],
        }
    );
    a
}

// ---- metrics ----

fn ask(reward: f64) -> TurnRecord {
    TurnRecord {
        kind: TurnKind::Ask,
        asked_type: Some(TypeId(0)),
        displayed: vec![AttrId(1)],
        clicked: vec![],
        nonclicked: vec![AttrId(1)],
        noshow: vec![],
        recommended: vec![],
        accepted: None,
        reward,
        n_cand: 40,
    }
}

fn rec(items: &[u32], accepted: Option<u32>) -> TurnRecord {
    TurnRecord {
        kind: TurnKind::Recommend,
        asked_type: None,
        displayed: vec![],
        clicked: vec![],
        nonclicked: vec![],
        noshow: vec![],
        recommended: items.iter().map(|i| ItemId(*i)).collect(),
        accepted: accepted.map(ItemId),
        reward: if accepted.is_some() { 1.0 } else { -0.01 },
        n_cand: 30,
    }
}

fn episode(i: usize, transcript: Vec<TurnRecord>) -> EpisodeRecord {
    EpisodeRecord {
        episode: i,
        user: UserId(0),
        targets: vec![ItemId(7)],
        p0: AttrId(0),
        success: false,
        turns: 0,
        rank: None,
        target_filtered: false,
        transcript,
    }
}

/// Three scripted episodes: success at turn 3 with rank 3, a 15-turn
/// failure, and a first-turn success at rank 1.
pub fn scripted_logs() -> Vec<EpisodeRecord> {
    vec![
        episode(0, vec![ask(-0.1), rec(&[1, 2], None), rec(&[3, 4, 7, 5], Some(7))]),
        episode(1, (0..15).map(|_| ask(-0.1)).collect()),
        episode(2, vec![rec(&[7, 1], Some(7))]),
    ]
}

pub fn metrics_match_hand_values() -> String {
    let m = metrics_from_transcripts(&scripted_logs(), 15, 10);
    // hdcg(3, 3) = 1/log2 5 + (1/2 - 1/log2 5) / 2
    let h33 = 0.25 + 0.5 / 5f64.log2();
    assert_eq!(m.sr, 2.0 / 3.0);
    assert_eq!(m.at, 19.0 / 3.0);
    assert!((m.hdcg - (h33 + 1.0) / 3.0).abs() <= 1e-15, "{}", m.hdcg);
    assert_eq!(m.sr_curve[0], 1.0 / 3.0);
    assert_eq!(m.sr_curve[2], 2.0 / 3.0);
    assert_eq!(m.sr_curve[14], 2.0 / 3.0);
    assert_eq!(hdcg(1, 1, 15, 10).unwrap(), 1.0);
    for t in 1..=15 {
        for k in 1..=10 {
            let h = hdcg(t, k, 15, 10).unwrap();
            if t < 15 {
                assert!(h > hdcg(t + 1, k, 15, 10).unwrap());
            }
            if k < 10 {
                assert!(h > hdcg(t, k + 1, 15, 10).unwrap());
            }
        }
    }
    format!("SR {:.4} AT {:.4} hDCG {:.6}; hdcg(1,1)=1, strictly decreasing", m.sr, m.at, m.hdcg)
}

