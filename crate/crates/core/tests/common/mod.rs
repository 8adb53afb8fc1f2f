#![allow(dead_code)]

use vaguecrs::catalog::{Catalog, RawCatalog, Triplet, REL_HAS_ATTRIBUTE, REL_INTERACT};
use vaguecrs::embeddings::{init_embeddings, EmbeddingTable};
use vaguecrs::ids::{AttrId, ItemId, TypeId, UserId};

/// Builds a catalog with triplets derived from interactions and item
/// attributes.
pub fn catalog_from(
    items: Vec<(ItemId, Vec<AttrId>)>,
    attributes: Vec<(AttrId, TypeId)>,
    interactions: Vec<(UserId, ItemId)>,
) -> Catalog {
    let n_users = interactions.iter().map(|(u, _)| u.0 + 1).max().unwrap_or(0);
    let n_items = items.len() as u32;
    let mut triplets: Vec<Triplet> = interactions
        .iter()
        .map(|(u, v)| Triplet {
            head: u.0,
            relation: REL_INTERACT,
            tail: n_users + v.0,
        })
        .collect();
    for (v, ps) in &items {
        for p in ps {
            triplets.push(Triplet {
                head: n_users + v.0,
                relation: REL_HAS_ATTRIBUTE,
                tail: n_users + n_items + p.0,
            });
        }
    }
    let raw = RawCatalog {
        items,
        attributes,
        interactions,
        triplets,
        types: None,
    };
    Catalog::from_raw(raw).expect("fixture catalog is valid")
}

/// Items 0..4; attribute types: 0 -> {0,1,2}, 1 -> {3,4}; two users.
pub fn small_catalog() -> Catalog {
    catalog_from(
        vec![
            (ItemId(0), vec![AttrId(0), AttrId(1), AttrId(3)]),
            (ItemId(1), vec![AttrId(0), AttrId(2), AttrId(4)]),
            (ItemId(2), vec![AttrId(0), AttrId(2)]),
            (ItemId(3), vec![AttrId(0), AttrId(4)]),
            (ItemId(4), vec![AttrId(1)]),
        ],
        vec![
            (AttrId(0), TypeId(0)),
            (AttrId(1), TypeId(0)),
            (AttrId(2), TypeId(0)),
            (AttrId(3), TypeId(1)),
            (AttrId(4), TypeId(1)),
        ],
        vec![
            (UserId(0), ItemId(0)),
            (UserId(0), ItemId(1)),
            (UserId(1), ItemId(2)),
            (UserId(1), ItemId(3)),
        ],
    )
}

pub fn table64(catalog: &Catalog, dim: usize, seed: u64) -> EmbeddingTable<f64> {
    init_embeddings(catalog, dim, seed)
}

/// Relative agreement with an absolute floor for near-zero values.
pub fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-6)
}

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vaguecrs::catalog::{generate_synthetic, SyntheticSpec};
use vaguecrs::harness::baselines::{ConversationPolicy, UniformRandom};
use vaguecrs::harness::runner::apply_action;
use vaguecrs::simulator::{new_session, Mode, SessionConfig, SessionState};

pub mod checks;

/// A 30-user, 80-item world small enough for property tests.
pub fn toy_world(seed: u64) -> Catalog {
    generate_synthetic(&SyntheticSpec::new(30, 80, 16, 4, seed)).expect("toy world")
}

/// A session on `catalog` driven by the uniform-random policy for at most
/// `turns` turns.
pub fn random_session(catalog: &Catalog, mode: Mode, turns: usize, seed: u64) -> SessionState {
    let pairs = vaguecrs::catalog::simulation_pairs(catalog, 2);
    let pair = &pairs[seed as usize % pairs.len()];
    let cfg = SessionConfig {
        mode,
        ..Default::default()
    };
    let mut session = new_session(catalog, pair.user, &pair.items, &cfg, seed).expect("session");
    let mut policy = UniformRandom { n: 10, k: 2 };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    for _ in 0..turns {
        if session.is_done() {
            break;
        }
        let a = policy.act(&session.conv, catalog, &mut rng).expect("action");
        apply_action(&mut session, catalog, &a).expect("legal action");
    }
    session
}
