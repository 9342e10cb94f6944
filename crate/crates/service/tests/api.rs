use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use candle_core::DType;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use cet2_core::corpus::{synth_corpus, DialogueEpisode, SynthConfig};
use cet2_core::generator::DecodingConfig;
use cet2_core::model::{Ablations, Cet2Model, ModelSettings};
use cet2_core::objective::build_vocab;
use cet2_core::selector::SelectorConfig;
use cet2_service::{router, run_turn, AppState, Models, Session, TurnResult};

fn episodes() -> Vec<DialogueEpisode> {
    synth_corpus(&SynthConfig {
        n_episodes: 4,
        turns_per_episode: 3,
        m_candidates: 4,
        vocab_size: 30,
        p_adhere: 0.5,
        seed: 3,
    })
    .unwrap()
}

fn models(eps: &[DialogueEpisode]) -> Models {
    let settings = ModelSettings {
        hidden: 16,
        layers: 1,
        heads: 2,
        ffn_hidden: 16,
        d_coh: 8,
        d_cro: 8,
        selector: SelectorConfig {
            gat_heads: 2,
            gat_ffn_hidden: 16,
            ..SelectorConfig::default()
        },
        ..ModelSettings::default()
    };
    let vocab = build_vocab(eps);
    let config = settings.build(vocab.len(), Ablations::default());
    Models {
        selector: Cet2Model::new(config, vocab, DType::F64, 5).unwrap(),
        generator: None,
        decoding: DecodingConfig::default(),
    }
}

fn app() -> (Router, Arc<AppState>) {
    let eps = episodes();
    let state = AppState::new(models(&eps), eps);
    (router(state.clone()), state)
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json");
    let req = match body {
        Some(b) => req.body(Body::from(b.to_string())).unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap_or(Value::Null)
    };
    (status, value)
}

fn pool() -> Value {
    json!([
        {"id": "a", "text": "w1 w2 w3 w4"},
        {"id": "b", "text": "w5 w6 w7 w8"},
        {"id": "c", "text": "w9 w10 w11 w12"}
    ])
}

async fn new_session(app: &Router) -> String {
    let (status, body) = call(
        app,
        "POST",
        "/sessions",
        Some(json!({"topic": "t", "knowledge_pool": pool()})),
    )
    .await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    assert_eq!(body["num_candidates"], 3);
    body["session_id"].as_str().unwrap().to_string()
}

#[tokio::test]
async fn healthz_and_unknown_routes() {
    let (app, _) = app();
    let (status, body) = call(&app, "GET", "/healthz", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["status"], "ok");
    let (status, _) = call(&app, "GET", "/sessions/nope", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(
        &app,
        "POST",
        "/sessions/nope/messages",
        Some(json!({"text": "hi"})),
    )
    .await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn session_creation_rules() {
    let (app, _) = app();
    let a = new_session(&app).await;
    let b = new_session(&app).await;
    assert_ne!(a, b);
    let (status, _) = call(
        &app,
        "POST",
        "/sessions",
        Some(json!({"knowledge_pool": []})),
    )
    .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, _) = call(
        &app,
        "POST",
        "/sessions",
        Some(json!({"episode_id": "missing"})),
    )
    .await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, body) = call(
        &app,
        "POST",
        "/sessions",
        Some(json!({"episode_id": "synth-00001"})),
    )
    .await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(body["num_candidates"], 4);
    assert_eq!(body["topic"], "topic-1");
    let dup = json!([{"id": "a", "text": "x"}, {"id": "a", "text": "y"}]);
    let (status, _) = call(
        &app,
        "POST",
        "/sessions",
        Some(json!({"knowledge_pool": dup})),
    )
    .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn three_turn_session_with_override() {
    let (app, _) = app();
    let id = new_session(&app).await;
    let uri = format!("/sessions/{id}/messages");

    let (status, first) = call(
        &app,
        "POST",
        &uri,
        Some(json!({"text": "tell me about w1 w2"})),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{first}");
    let first: TurnResult = serde_json::from_value(first).unwrap();
    assert_eq!(first.turn, 1);
    assert_eq!(first.ranked.len(), 3);
    let total: f64 = first.ranked.iter().map(|r| r.prob).sum();
    assert!((total - 1.0).abs() < 1e-6);
    assert!(first.ranked.windows(2).all(|w| w[0].prob >= w[1].prob));
    assert!(first
        .ranked
        .iter()
        .all(|r| r.v_cro_norm == 0.0 && r.adhesive.is_none()));
    assert_eq!(first.selected_id, first.ranked[0].candidate_id);
    assert!(!first.overridden);

    let (status, second) = call(
        &app,
        "POST",
        &uri,
        Some(json!({"text": "and w5", "override_id": "b"})),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    let second: TurnResult = serde_json::from_value(second).unwrap();
    assert_eq!(second.selected_id, "b");
    assert!(second.overridden);
    // without a generator the response is the selected knowledge itself
    assert_eq!(second.response, "w5 w6 w7 w8");
    let adhesive: Vec<_> = second
        .ranked
        .iter()
        .filter(|r| r.adhesive == Some(true))
        .collect();
    assert_eq!(adhesive.len(), 1);
    assert_eq!(adhesive[0].candidate_id, first.selected_id);

    let (_, third) = call(&app, "POST", &uri, Some(json!({"text": "more please"}))).await;
    let third: TurnResult = serde_json::from_value(third).unwrap();
    // the override became the history
    let marked: Vec<_> = third
        .ranked
        .iter()
        .filter(|r| r.adhesive == Some(true))
        .collect();
    assert_eq!(marked[0].candidate_id, "b");
    assert!(third.ranked.iter().any(|r| r.v_cro_norm > 0.0));

    let (status, snap) = call(&app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    let snap: Session = serde_json::from_value(snap).unwrap();
    assert_eq!(snap.transcript.len(), 6);
    assert_eq!(snap.selection_history.len(), 3);
    assert!(snap.selection_history[1].overridden);
    assert!(!snap.selection_history[2].overridden);
}

#[tokio::test]
async fn bad_messages_leave_the_session_untouched() {
    let (app, _) = app();
    let id = new_session(&app).await;
    let uri = format!("/sessions/{id}/messages");
    let (status, _) = call(
        &app,
        "POST",
        &uri,
        Some(json!({"text": "hi", "override_id": "zzz"})),
    )
    .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, _) = call(&app, "POST", &uri, Some(json!({"text": "  "}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (_, snap) = call(&app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(snap["transcript"].as_array().unwrap().len(), 0);
}

#[tokio::test]
async fn ranked_probabilities_match_the_selector() {
    let eps = episodes();
    let m = models(&eps);
    let session = Session {
        session_id: "x".into(),
        topic: "t".into(),
        knowledge_pool: serde_json::from_value(pool()).unwrap(),
        transcript: Vec::new(),
        selection_history: Vec::new(),
    };
    let turn = run_turn(&m, &session, "w9 w10 please", None).unwrap();
    let ctx = [cet2_core::corpus::Utterance::user("w9 w10 please")];
    let scores = m
        .selector
        .score_turn(&ctx, &session.knowledge_pool, None)
        .unwrap();
    for r in &turn.ranked {
        let i = session
            .knowledge_pool
            .iter()
            .position(|c| c.id == r.candidate_id)
            .unwrap();
        assert!((r.prob - scores.probs[i]).abs() < 1e-9);
    }
    let again = run_turn(&m, &session, "w9 w10 please", None).unwrap();
    assert_eq!(turn, again);
}

#[tokio::test]
async fn concurrent_posts_are_serialized() {
    let (app, state) = app();
    let id = new_session(&app).await;
    let uri = format!("/sessions/{id}/messages");
    let mut handles = Vec::new();
    for i in 0..6 {
        let app = app.clone();
        let uri = uri.clone();
        handles.push(tokio::spawn(async move {
            call(
                &app,
                "POST",
                &uri,
                Some(json!({"text": format!("msg {i}")})),
            )
            .await
        }));
    }
    for h in handles {
        assert_eq!(h.await.unwrap().0, StatusCode::OK);
    }
    let sessions = state.snapshot().await;
    let s = &sessions[0];
    assert_eq!(s.transcript.len(), 12);
    let turns: Vec<usize> = s.selection_history.iter().map(|h| h.turn).collect();
    assert_eq!(turns, (1..=6).collect::<Vec<_>>());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sessions.json");
    state.save_sessions(&path).await.unwrap();
    let back: Vec<Session> =
        serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(back, sessions);
}
