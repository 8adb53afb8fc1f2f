use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use vaguecrs::catalog::{generate_synthetic, SyntheticSpec};
use vaguecrs::embeddings::init_embeddings;
use vaguecrs::nn::NetDims;
use vaguecrs::policy::{Agent, AgentConfig, Knowledge};
use vaguecrs::simulator::Outcome;
use vaguecrs::{AttrId, Catalog, TypeId};
use vaguecrs_service::{
    replay, router, ActionView, AnswerRequest, Engine, ServiceError, Settings, StepView, Transcript,
};

const DIM: usize = 16;

fn catalog() -> Catalog {
    let mut raw = generate_synthetic(&SyntheticSpec::new(30, 80, 16, 4, 3)).unwrap().to_raw();
    // one attribute no item carries
    let id = raw.attributes.len() as u32;
    raw.attributes.push((AttrId(id), TypeId(0)));
    Catalog::from_raw(raw).unwrap()
}

fn empty_attr(c: &Catalog) -> AttrId {
    c.attributes().find(|p| c.attr_items(*p).is_empty()).unwrap()
}

fn broad_attr(c: &Catalog) -> AttrId {
    c.attributes().max_by_key(|p| (c.attr_items(*p).len(), std::cmp::Reverse(p.0))).unwrap()
}

fn agent(seed: u64) -> Agent<f32> {
    Agent::new(AgentConfig {
        dims: NetDims {
            embed: DIM,
            hidden: 24,
            max_seq: 30,
        },
        seed,
        ..AgentConfig::default()
    })
}

fn engine_with(settings: Settings) -> Arc<Engine> {
    let catalog = catalog();
    let table = init_embeddings(&catalog, DIM, 5);
    let know = Knowledge::new(catalog, table);
    let agents = vec![("a".to_string(), agent(1)), ("b".to_string(), agent(2))];
    Arc::new(Engine::new(know, agents, settings).unwrap())
}

fn engine() -> Arc<Engine> {
    engine_with(Settings::default())
}

async fn call(engine: &Arc<Engine>, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = router(engine.clone()).oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap_or(Value::String(String::from_utf8_lossy(&bytes).into()))
    };
    (status, value)
}

async fn create(engine: &Arc<Engine>, checkpoint: &str, p0: AttrId) -> StepView {
    let (status, v) = call(
        engine,
        "POST",
        "/sessions",
        Some(json!({"checkpoint": checkpoint, "p0": p0.to_string()})),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{v}");
    serde_json::from_value(v).unwrap()
}

async fn answer(engine: &Arc<Engine>, id: &str, body: Value) -> (StatusCode, Value) {
    call(engine, "POST", &format!("/sessions/{id}/answer"), Some(body)).await
}

async fn transcript(engine: &Arc<Engine>, id: &str) -> Transcript {
    let (status, v) = call(engine, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    serde_json::from_value(v).unwrap()
}

/// Clicks the first displayed attribute, rejects the first `rejects`
/// recommendations and accepts the next one.
fn scripted(action: &ActionView, recs_seen: &mut usize, rejects: usize) -> Value {
    match action {
        ActionView::Ask { attributes, .. } => json!({"clicked": [attributes[0]]}),
        ActionView::Recommend { items } => {
            *recs_seen += 1;
            if *recs_seen > rejects {
                json!({"accepted": items[items.len() - 1]})
            } else {
                json!({"reject": true})
            }
        }
    }
}

#[tokio::test]
async fn healthz_and_checkpoint_list() {
    let e = engine();
    let (status, v) = call(&e, "GET", "/healthz", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["status"], "ok");
    let (status, v) = call(&e, "GET", "/checkpoints", None).await;
    assert_eq!(status, StatusCode::OK);
    let ids: Vec<&str> = v.as_array().unwrap().iter().map(|c| c["id"].as_str().unwrap()).collect();
    assert_eq!(ids, ["a", "b"]);
    assert_eq!(v[0]["embed_dim"], DIM);
}

#[tokio::test]
async fn create_returns_action_and_full_snapshot() {
    let e = engine();
    let p0 = broad_attr(&e.knowledge().catalog);
    let (status, v) = call(&e, "POST", "/sessions", Some(json!({"checkpoint": "a", "p0": p0.to_string()}))).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    assert!(v["session_id"].is_string());
    let kind = v["action"]["kind"].as_str().unwrap();
    assert!(kind == "ask" || kind == "recommend");
    assert_eq!(v["snapshot"]["items"].as_array().unwrap().len(), 10);
    assert_eq!(v["snapshot"]["attributes"].as_array().unwrap().len(), 10);
    assert!(v["snapshot"]["items"][0]["id"].is_string());
    assert!(v["snapshot"]["items"][0]["score"].is_f64());
    assert_eq!(v["outcome"]["status"], "running");
}

#[tokio::test]
async fn create_rejects_bad_inputs() {
    let e = engine();
    let empty = empty_attr(&e.knowledge().catalog);
    let (status, v) = call(&e, "POST", "/sessions", Some(json!({"checkpoint": "a", "p0": empty.to_string()}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(v["error"].as_str().unwrap().contains("empty candidate set"));

    let (status, _) = call(&e, "POST", "/sessions", Some(json!({"checkpoint": "zzz", "p0": "0"}))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, v) = call(&e, "POST", "/sessions", Some(json!({"checkpoint": "a", "p0": "9999"}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(v["error"].as_str().unwrap().contains("unknown attribute"));
    let (status, _) = call(&e, "POST", "/sessions", Some(json!({"checkpoint": "a", "p0": "red"}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, _) = call(&e, "GET", "/sessions/nope", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn first_action_is_deterministic() {
    let e = engine();
    let catalog = &e.knowledge().catalog;
    for p0 in catalog.attributes().filter(|p| !catalog.attr_items(*p).is_empty()).take(5) {
        let a = create(&e, "a", p0).await;
        let b = create(&e, "a", p0).await;
        assert_ne!(a.session_id, b.session_id);
        assert_eq!(a.action, b.action);
        assert_eq!(a.snapshot, b.snapshot);
    }
}

#[tokio::test]
async fn transcript_grows_one_turn_per_answer() {
    let e = engine();
    let p0 = broad_attr(&e.knowledge().catalog);
    let s = create(&e, "a", p0).await;
    let t = transcript(&e, &s.session_id).await;
    assert_eq!(t.turns.len(), 1);
    assert_eq!(t.turns[0].snapshot, s.snapshot);
    assert!(t.turns[0].answer.is_none());

    let mut action = s.action.unwrap();
    for n in 1..=3 {
        let reply = match &action {
            ActionView::Ask { .. } => json!({"clicked": []}),
            ActionView::Recommend { .. } => json!({"reject": true}),
        };
        let (status, v) = answer(&e, &s.session_id, reply).await;
        assert_eq!(status, StatusCode::OK, "{v}");
        let step: StepView = serde_json::from_value(v).unwrap();
        assert_eq!(step.snapshot.turn, n);
        action = step.action.expect("session still running");
    }
    let t = transcript(&e, &s.session_id).await;
    assert_eq!(t.turns.len(), 4);
    let turns: Vec<usize> = t.turns.iter().map(|x| x.snapshot.turn).collect();
    assert_eq!(turns, [0, 1, 2, 3]);
    assert!(t.turns[..3].iter().all(|x| x.answer.is_some()));
    assert!(!t.expired);
}

#[tokio::test]
async fn accepting_a_recommendation_ends_in_success() {
    let e = engine();
    let p0 = broad_attr(&e.knowledge().catalog);
    let s = create(&e, "a", p0).await;
    let mut action = s.action.unwrap();
    let mut recs = 0;
    let last = loop {
        let body = scripted(&action, &mut recs, 0);
        let (status, v) = answer(&e, &s.session_id, body).await;
        assert_eq!(status, StatusCode::OK, "{v}");
        let step: StepView = serde_json::from_value(v).unwrap();
        match step.action {
            Some(a) => action = a,
            None => break step,
        }
    };
    let t = transcript(&e, &s.session_id).await;
    match last.outcome {
        Outcome::Success { turn, rank } => {
            assert_eq!(turn, t.turns.len());
            match &t.turns.last().unwrap().action {
                ActionView::Recommend { items } => assert_eq!(rank, items.len()),
                other => panic!("last turn was {other:?}"),
            }
        }
        // the budget ran out on questions before any recommendation
        Outcome::Quit => assert_eq!(t.turns.len(), 15),
        Outcome::Running => panic!("session still running"),
    }

    let (status, v) = answer(&e, &s.session_id, json!({"reject": true})).await;
    assert_eq!(status, StatusCode::CONFLICT, "{v}");
}

#[tokio::test]
async fn illegal_answers_are_rejected_without_changing_state() {
    let e = engine();
    let catalog = &e.knowledge().catalog;
    let p0 = broad_attr(catalog);
    let s = create(&e, "a", p0).await;
    let before = transcript(&e, &s.session_id).await;
    let shapes = [
        json!({}),
        json!({"reject": false}),
        json!({"clicked": [], "reject": true}),
        json!({"clicked": ["x"]}),
        json!({"skip": true}),
    ];
    for body in shapes {
        let (status, v) = answer(&e, &s.session_id, body.clone()).await;
        assert!(status.is_client_error(), "{body} -> {status} {v}");
    }
    match s.action.as_ref().unwrap() {
        ActionView::Ask { attributes, .. } => {
            let other = catalog
                .attributes()
                .find(|p| !attributes.contains(&p.to_string()))
                .unwrap();
            let (status, v) = answer(&e, &s.session_id, json!({"clicked": [other.to_string()]})).await;
            assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
            assert!(v["error"].as_str().unwrap().contains("was not displayed"), "{v}");
            let (status, _) = answer(&e, &s.session_id, json!({"accepted": "0"})).await;
            assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
        }
        ActionView::Recommend { items } => {
            let other = catalog.items().find(|v| !items.contains(&v.to_string())).unwrap();
            let (status, _) = answer(&e, &s.session_id, json!({"accepted": other.to_string()})).await;
            assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
            let (status, _) = answer(&e, &s.session_id, json!({"clicked": []})).await;
            assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
        }
    }
    assert_eq!(transcript(&e, &s.session_id).await, before);
}

#[tokio::test]
async fn replaying_a_transcript_reproduces_every_snapshot() {
    let e = engine();
    let catalog = &e.knowledge().catalog;
    let cfg = e.agent("b").unwrap().config.use_cfg;
    let p0s: Vec<AttrId> = catalog.attributes().filter(|p| catalog.attr_items(*p).len() >= 3).take(6).collect();
    assert!(!p0s.is_empty());
    let mut asks = 0;
    for (i, p0) in p0s.into_iter().enumerate() {
        let s = create(&e, "b", p0).await;
        let mut action = s.action;
        let mut recs = 0;
        while let Some(a) = action {
            let (status, v) = answer(&e, &s.session_id, scripted(&a, &mut recs, i % 3)).await;
            assert_eq!(status, StatusCode::OK, "{v}");
            action = serde_json::from_value::<StepView>(v).unwrap().action;
        }
        let t = transcript(&e, &s.session_id).await;
        let r = replay(e.knowledge(), &cfg, e.settings().snapshot_k, &t).unwrap();
        let served: Vec<_> = t.turns.iter().map(|x| x.snapshot.clone()).collect();
        assert_eq!(r.turns, served);
        assert_eq!(r.current, t.snapshot);
        assert_eq!(r.outcome, t.outcome);
        assert_ne!(t.outcome, Outcome::Running);
        asks += t.turns.iter().filter(|x| matches!(x.action, ActionView::Ask { .. })).count();
    }
    assert!(asks > 0, "no question turn was replayed");
}

#[tokio::test]
async fn full_distribution_is_behind_a_flag() {
    let e = engine();
    let p0 = broad_attr(&e.knowledge().catalog);
    let s = create(&e, "a", p0).await;
    let (_, plain) = call(&e, "GET", &format!("/sessions/{}", s.session_id), None).await;
    assert!(plain.get("distribution").is_none());
    let (status, full) = call(&e, "GET", &format!("/sessions/{}?full=true", s.session_id), None).await;
    assert_eq!(status, StatusCode::OK);
    let items = full["distribution"]["items"].as_array().unwrap();
    assert_eq!(items.len(), s.snapshot.n_cand);
    let top = s.snapshot.items[0].score;
    assert!(items.iter().all(|x| x["score"].as_f64().unwrap() <= top));
}

#[tokio::test]
async fn expired_sessions_reject_answers() {
    let e = engine_with(Settings {
        ttl: Duration::ZERO,
        ..Settings::default()
    });
    let p0 = broad_attr(&e.knowledge().catalog);
    let s = create(&e, "a", p0).await;
    std::thread::sleep(Duration::from_millis(5));
    let (status, v) = answer(&e, &s.session_id, json!({"reject": true})).await;
    assert_eq!(status, StatusCode::GONE, "{v}");
}

#[test]
fn concurrent_sessions_match_sequential_ones() {
    let e = engine();
    let catalog = &e.knowledge().catalog;
    let p0s: Vec<AttrId> = catalog.attributes().filter(|p| catalog.attr_items(*p).len() >= 3).take(8).collect();
    let play = |p0: AttrId| {
        let s = e.create("a", &p0.to_string(), None).unwrap();
        let mut action = s.action;
        let mut recs = 0;
        while let Some(a) = action {
            let body = serde_json::from_value::<AnswerRequest>(scripted(&a, &mut recs, 1)).unwrap();
            action = e.answer(&s.session_id, &body).unwrap().action;
        }
        let mut t = e.transcript(&s.session_id, false).unwrap();
        t.session_id.clear();
        t.created_unix_ms = 0;
        t.expires_unix_ms = 0;
        t
    };
    let sequential: Vec<Transcript> = p0s.iter().map(|p| play(*p)).collect();
    let parallel: Vec<Transcript> = std::thread::scope(|scope| {
        let handles: Vec<_> = p0s.iter().map(|p| scope.spawn(|| play(*p))).collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    assert_eq!(sequential, parallel);
}

#[test]
fn checkpoints_load_from_a_directory() {
    let dir = tempfile::tempdir().unwrap();
    agent(7).save(dir.path().join("small.json"), false).unwrap();
    std::fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
    let catalog = catalog();
    let know = Knowledge::new(catalog.clone(), init_embeddings(&catalog, DIM, 5));
    let e = Engine::load_dir(know, dir.path(), Settings::default()).unwrap();
    let ids: Vec<String> = e.checkpoints().into_iter().map(|c| c.id).collect();
    assert_eq!(ids, ["small"]);

    let wrong = Knowledge::new(catalog.clone(), init_embeddings(&catalog, DIM * 2, 5));
    let err = Engine::load_dir(wrong, dir.path(), Settings::default()).err().unwrap();
    assert!(matches!(err, ServiceError::Incompatible(_)), "{err}");
}
