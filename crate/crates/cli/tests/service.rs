use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;
use uniconv::config::{ModelConfig, ServiceConfig};
use uniconv::model::UniConv;
use uniconv::synth::{generate, SyntheticSpec};
use uniconv_cli::service::{router, AppState};

fn app(idle_timeout_secs: u64) -> Arc<AppState> {
    let ds = generate(&SyntheticSpec {
        dialogues: 6,
        val_dialogues: 0,
        test_dialogues: 0,
        ..Default::default()
    })
    .unwrap()
    .dataset();
    let cfg = ModelConfig {
        d: 16,
        heads: 2,
        n_dst_slot: 1,
        n_dst_domain: 1,
        n_gen: 1,
        max_response_len: 10,
        ..Default::default()
    };
    let model = UniConv::for_dataset(cfg, &ds, 1, 3).unwrap();
    AppState::new(
        model,
        ds.kb,
        ServiceConfig {
            port: 0,
            idle_timeout_secs,
            max_turns: 3,
        },
    )
}

async fn call(app: &Arc<AppState>, method: Method, uri: &str, body: Option<&str>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map(|b| Body::from(b.to_string())).unwrap_or_else(Body::empty))
        .unwrap();
    let resp = router(app.clone()).oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let v = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap()
    };
    (status, v)
}

async fn session(app: &Arc<AppState>) -> String {
    let (s, v) = call(app, Method::POST, "/sessions", None).await;
    assert_eq!(s, StatusCode::CREATED);
    v["session_id"].as_str().unwrap().to_string()
}

async fn say(app: &Arc<AppState>, id: &str, text: &str) -> (StatusCode, Value) {
    let body = json!({ "utterance": text }).to_string();
    call(app, Method::POST, &format!("/sessions/{id}/turns"), Some(&body)).await
}

#[tokio::test]
async fn health_lists_the_ontology() {
    let app = app(60);
    let (s, v) = call(&app, Method::GET, "/health", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["status"], "ok");
    assert_eq!(v["domains"].as_array().unwrap().len(), 2);
    assert!(!v["acts"].as_array().unwrap().is_empty());
}

#[tokio::test]
async fn turn_response_carries_every_field() {
    let app = app(60);
    let id = session(&app).await;
    let (s, v) = say(&app, &id, "Hello, I need a cheap place to eat.").await;
    assert_eq!(s, StatusCode::OK, "{v}");
    for key in [
        "session_id",
        "turn",
        "utterance",
        "delex",
        "lexical",
        "state",
        "acts",
        "act_probs",
        "db",
        "active_domain",
        "trace_ref",
        "state_truncated",
        "response_truncated",
    ] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    assert_eq!(v["turn"], 1);
    assert_eq!(v["utterance"], "hello , i need a cheap place to eat .");
    assert_eq!(v["act_probs"].as_array().unwrap().len(), app_acts(&app).await);
    for p in v["act_probs"].as_array().unwrap() {
        let p = p["prob"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&p));
    }
    assert_eq!(v["db"].as_object().unwrap().len(), 2);
    let trace = v["trace_ref"].as_str().unwrap().to_string();
    assert_eq!(trace, format!("/sessions/{id}/traces/1"));
    let (s, t) = call(&app, Method::GET, &trace, None).await;
    assert_eq!(s, StatusCode::OK);
    assert!(!t["entries"].as_array().unwrap().is_empty());
}

async fn app_acts(app: &Arc<AppState>) -> usize {
    call(app, Method::GET, "/health", None).await.1["acts"].as_array().unwrap().len()
}

#[tokio::test]
async fn unknown_and_deleted_sessions_are_not_found() {
    let app = app(60);
    let (s, v) = say(&app, "missing", "hi").await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(v["error"]["code"], "session_not_found");
    let id = session(&app).await;
    let (s, _) = call(&app, Method::DELETE, &format!("/sessions/{id}"), None).await;
    assert_eq!(s, StatusCode::NO_CONTENT);
    let (s, _) = call(&app, Method::GET, &format!("/sessions/{id}/transcript"), None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = call(&app, Method::DELETE, &format!("/sessions/{id}"), None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn malformed_requests_are_rejected() {
    let app = app(60);
    let id = session(&app).await;
    let uri = format!("/sessions/{id}/turns");
    for body in ["{not json", "{}", r#"{"utterance": 3}"#, r#"{"utterance": "hi", "extra": 1}"#] {
        let (s, v) = call(&app, Method::POST, &uri, Some(body)).await;
        assert_eq!(s, StatusCode::BAD_REQUEST, "{body}");
        assert_eq!(v["error"]["code"], "bad_request");
    }
    let (s, _) = call(&app, Method::POST, "/sessions", Some(r#"{"mode": "chitchat"}"#)).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = call(&app, Method::GET, &format!("/sessions/{id}/traces/one"), None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, v) = call(&app, Method::GET, &format!("/sessions/{id}/traces/4"), None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(v["error"]["code"], "trace_not_found");
}

#[tokio::test]
async fn sessions_are_isolated_and_deterministic() {
    let app = app(60);
    let (a, b) = (session(&app).await, session(&app).await);
    let (_, a1) = say(&app, &a, "i want an eatery in the north").await;
    let (_, b1) = say(&app, &b, "i want an eatery in the north").await;
    assert_eq!(a1["lexical"], b1["lexical"]);
    assert_eq!(a1["state"], b1["state"]);
    assert_eq!(a1["act_probs"], b1["act_probs"]);
    let (_, a2) = say(&app, &a, "something with cheap prices please").await;
    assert_eq!(a2["turn"], 2);
    let (_, tb) = call(&app, Method::GET, &format!("/sessions/{b}/transcript"), None).await;
    assert_eq!(tb["turns"].as_array().unwrap().len(), 1);
    let (_, ta) = call(&app, Method::GET, &format!("/sessions/{a}/transcript"), None).await;
    assert_eq!(ta["turns"].as_array().unwrap().len(), 2);
    assert_eq!(ta["session_id"], a.as_str());
}

#[tokio::test]
async fn turn_limit_is_a_conflict() {
    let app = app(60);
    let id = session(&app).await;
    for _ in 0..3 {
        let body = json!({ "utterance": "hello", "trace": false }).to_string();
        let (s, v) = call(&app, Method::POST, &format!("/sessions/{id}/turns"), Some(&body)).await;
        assert_eq!(s, StatusCode::OK);
        assert!(v["trace_ref"].is_null());
    }
    let (s, v) = say(&app, &id, "hello").await;
    assert_eq!(s, StatusCode::CONFLICT, "{v}");
}

#[tokio::test]
async fn c2t_sessions_need_a_state() {
    let app = app(60);
    let (s, v) = call(&app, Method::POST, "/sessions", Some(r#"{"mode": "c2t"}"#)).await;
    assert_eq!(s, StatusCode::CREATED);
    assert_eq!(v["mode"], "c2t");
    let id = v["session_id"].as_str().unwrap();
    let (s, _) = say(&app, id, "hello").await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let bad = json!({ "utterance": "hello", "state": { "domains": { "eatery": { "inform": { "colour": ["red"] }, "request": [] } } } }).to_string();
    let (s, v) = call(&app, Method::POST, &format!("/sessions/{id}/turns"), Some(&bad)).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["error"]["code"], "invalid_state");
    let body = json!({ "utterance": "hello", "state": { "domains": {} } }).to_string();
    let (s, v) = call(&app, Method::POST, &format!("/sessions/{id}/turns"), Some(&body)).await;
    assert_eq!(s, StatusCode::OK, "{v}");
}

#[tokio::test]
async fn idle_sessions_expire() {
    let app = app(0);
    let first = session(&app).await;
    std::thread::sleep(std::time::Duration::from_millis(1100));
    session(&app).await;
    assert_eq!(app.session_count(), 1);
    let (s, _) = say(&app, &first, "hello").await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    std::thread::sleep(std::time::Duration::from_millis(1100));
    assert_eq!(app.expire_idle(), 1);
    assert_eq!(app.session_count(), 0);
}
