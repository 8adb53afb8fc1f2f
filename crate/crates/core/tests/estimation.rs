mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{checks, random_session, table64, toy_world};
use vaguecrs::embeddings::EmbeddingTable;
use vaguecrs::estimation::{
    attribute_distribution, closed_form_decay, decay_step, item_distribution, turn_item_score,
    DecayTracker, TurnEvidence, UseConfig,
};
use vaguecrs::ids::{AttrId, ItemId};
use vaguecrs::scalar::sigmoid;
use vaguecrs::simulator::{Conversation, Mode, TurnKind};

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Reference soft score of an entity vector, straight from the turn records.
fn reference_score(table: &EmbeddingTable<f64>, conv: &Conversation, x: &[f64], cfg: &UseConfig) -> f64 {
    let u = table.user(conv.user());
    let personal = if cfg.use_personalized { dot(u, x) } else { 0.0 };
    let mut per_turn = Vec::new();
    for rec in conv.history() {
        if rec.kind != TurnKind::Ask {
            continue;
        }
        let mean_of = |attrs: &[AttrId], shift: f64| {
            if attrs.is_empty() {
                0.0
            } else {
                attrs.iter().map(|p| dot(x, table.attr(*p)) - shift).sum::<f64>() / attrs.len() as f64
            }
        };
        let avg = if cfg.use_average_correction {
            mean_of(&rec.noshow, 0.0)
        } else {
            0.0
        };
        let wc = mean_of(&rec.clicked, avg);
        let wn = mean_of(&rec.nonclicked, avg);
        per_turn.push(logistic(personal + cfg.lambda_click * wc + cfg.lambda_noclick * wn));
    }
    match per_turn.last() {
        None => logistic(personal),
        Some(last) if !cfg.use_decay => *last,
        Some(_) => {
            let t = per_turn.len();
            per_turn
                .iter()
                .enumerate()
                .map(|(i, h)| cfg.decay.powi((t - 1 - i) as i32) * h)
                .sum()
        }
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

fn any_cfg() -> impl Strategy<Value = UseConfig> {
    (
        prop::sample::select(vec![0.0, 0.1, 0.5, 1.0]),
        prop::sample::select(vec![0.0, 0.1, 1.0]),
        prop::sample::select(vec![0.0, 0.01, 0.5]),
        any::<bool>(),
        any::<bool>(),
        any::<bool>(),
    )
        .prop_map(|(decay, l1, l2, p, a, d)| UseConfig {
            decay,
            lambda_click: l1,
            lambda_noclick: l2,
            use_personalized: p,
            use_average_correction: a,
            use_decay: d,
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn distributions_match_reference_on_played_sessions(
        seed in 0u64..1000,
        turns in 0usize..10,
        mimcr in any::<bool>(),
        cfg in any_cfg(),
    ) {
        let catalog = toy_world(seed % 5);
        let table = table64(&catalog, 16, seed);
        let mode = if mimcr { Mode::Mimcr } else { Mode::Vpmcr };
        let s = random_session(&catalog, mode, turns, seed);
        let items = item_distribution(&s.conv, &table, &cfg);
        prop_assert_eq!(items.len(), s.conv.v_cand().len());
        for (v, score) in &items.entries {
            let r = reference_score(&table, &s.conv, table.item(*v), &cfg);
            prop_assert!(rel_err(*score, r) <= 1e-12, "item {:?}: {} vs {}", v, score, r);
        }
        let attrs = attribute_distribution(&s.conv, &table, &cfg);
        prop_assert_eq!(attrs.len(), s.conv.n_p_cand());
        for (p, score) in &attrs.entries {
            let r = reference_score(&table, &s.conv, table.attr(*p), &cfg);
            prop_assert!(rel_err(*score, r) <= 1e-12, "attr {:?}: {} vs {}", p, score, r);
        }
    }

    #[test]
    fn incremental_tracker_equals_recompute(
        seed in 0u64..1000,
        turns in 1usize..12,
        cfg in any_cfg(),
    ) {
        let catalog = toy_world(seed % 3);
        let table = table64(&catalog, 16, seed + 7);
        let full = random_session(&catalog, Mode::Vpmcr, turns, seed);
        // Replay turn by turn, observing after each one.
        let mut tracker = DecayTracker::new(&table, full.conv.user(), cfg);
        let mut conv = Conversation::start(
            &catalog,
            full.conv.user(),
            full.conv.p0(),
            Mode::Vpmcr,
            full.conv.max_turns(),
            *full.conv.rewards(),
        ).unwrap();
        for rec in full.conv.history() {
            match rec.kind {
                TurnKind::Ask => conv
                    .apply_answer(&catalog, rec.asked_type.unwrap(), &rec.displayed, &rec.clicked)
                    .unwrap(),
                TurnKind::Recommend => conv
                    .apply_recommendation(&catalog, &rec.recommended, rec.accepted)
                    .unwrap(),
            };
            tracker.observe(&conv, &table);
            let a = tracker.item_distribution(&conv);
            let b = item_distribution(&conv, &table, &cfg);
            prop_assert_eq!(a.ids().collect::<Vec<_>>(), b.ids().collect::<Vec<_>>());
            for ((_, x), (_, y)) in a.entries.iter().zip(&b.entries) {
                prop_assert!(rel_err(*x, *y) <= 1e-12);
            }
            let a = tracker.attribute_distribution(&conv);
            let b = attribute_distribution(&conv, &table, &cfg);
            for ((_, x), (_, y)) in a.entries.iter().zip(&b.entries) {
                prop_assert!(rel_err(*x, *y) <= 1e-12);
            }
        }
    }

    #[test]
    fn folded_decay_equals_closed_form(
        history in prop::collection::vec(0.0f64..1.0, 1..16),
        gamma in prop::sample::select(vec![0.0, 0.1, 0.5, 1.0]),
    ) {
        let folded = history[1..].iter().fold(history[0], |acc, h| decay_step(acc, *h, gamma));
        let closed = closed_form_decay(&history, gamma).unwrap();
        prop_assert!(rel_err(folded, closed) <= 1e-12 || (folded - closed).abs() < 1e-300);
    }
}

#[test]
fn turn_scores_stay_inside_unit_interval() {
    let catalog = toy_world(1);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for trial in 0..500 {
        let table = table64(&catalog, 16, trial);
        let s = random_session(&catalog, Mode::Vpmcr, 8, trial);
        for rec in s.conv.history() {
            let Some(ev) = TurnEvidence::from_record(rec) else { continue };
            let v = ItemId(rng.gen_range(0..catalog.n_items() as u32));
            let x = turn_item_score(&table, s.conv.user(), v, &ev, &UseConfig::default());
            assert!(x > 0.0 && x < 1.0);
        }
    }
}

#[test]
fn no_decay_keeps_only_latest_turn() {
    let catalog = toy_world(2);
    let table = table64(&catalog, 16, 3);
    let cfg = UseConfig {
        use_decay: false,
        ..Default::default()
    };
    for seed in 0..40 {
        let s = random_session(&catalog, Mode::Vpmcr, 10, seed);
        let Some(last) = s.conv.history().iter().rev().find_map(TurnEvidence::from_record) else {
            continue;
        };
        for (v, score) in item_distribution(&s.conv, &table, &cfg).entries {
            let expect = turn_item_score(&table, s.conv.user(), v, &last, &cfg);
            assert!(rel_err(score, expect) <= 1e-12);
        }
    }
}

#[test]
fn empty_evidence_turn_reduces_to_personal_score() {
    let catalog = toy_world(0);
    let table = table64(&catalog, 16, 9);
    let ev = TurnEvidence {
        asked_type: catalog.attr_type(AttrId(0)),
        clicked: vec![],
        nonclicked: vec![],
        noshow: vec![],
    };
    let cfg = UseConfig::default();
    for u in catalog.users() {
        for v in catalog.items() {
            let expect = sigmoid(vaguecrs::scalar::dot(table.user(u), table.item(v)));
            assert_eq!(turn_item_score(&table, u, v, &ev, &cfg), expect);
        }
    }
}

#[test]
fn thousand_random_histories_fold_to_closed_form() {
    checks::decay_fold_matches_closed_form(1000);
}

#[test]
fn random_fixtures_respect_range_and_empty_set_rules() {
    checks::turn_scores_bounded_and_reduce(10_000);
}
