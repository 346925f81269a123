use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;
use xrl_server::{router, AppState, SessionStore};

fn app_with(store: SessionStore) -> Router {
    router(Arc::new(AppState { store, budget: Duration::from_secs(120) }))
}

fn app() -> Router {
    app_with(SessionStore::default())
}

async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

async fn call_json(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (status, bytes) = call(app, method, uri, body).await;
    let v = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, v)
}

fn quick_session(seed: u64) -> Value {
    json!({
        "learning": {"episodes": 1500, "seed": seed},
        "options": {"params": {"rollouts": 60}},
        "seed": seed,
    })
}

async fn create(app: &Router, seed: u64) -> String {
    let (status, v) = call_json(app, Method::POST, "/v1/sessions", Some(quick_session(seed))).await;
    assert_eq!(status, StatusCode::CREATED, "{v}");
    v["id"].as_str().unwrap().to_string()
}

fn q_hash(view: &Value) -> String {
    // the layout and per-state values shown in the view are derived from q_t
    format!("{}|{}", view["ready"]["q_values"], view["ready"]["greedy_action"])
}

#[tokio::test]
async fn fresh_session_view() {
    let app = app();
    let id = create(&app, 1).await;
    let (status, v) = call_json(&app, Method::GET, &format!("/v1/sessions/{id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["status"], "ready");
    let r = &v["ready"];
    assert_eq!(r["state"]["agent"], json!({"x": 0, "y": 0}));
    assert_eq!(r["state"]["step_count"], 0);
    assert_eq!(r["layout"]["width"], 10);
    assert_eq!(r["q_values"].as_object().unwrap().len(), 4);
    assert!(r["concepts"].as_array().unwrap().iter().any(|c| c == "next_to_wall"));
}

#[tokio::test]
async fn identical_queries_give_identical_bytes() {
    let app = app();
    let id = create(&app, 2).await;
    let uri = format!("/v1/sessions/{id}/query");
    let body = json!({"query": "do Right until next_to_monster"});
    let (s1, a) = call(&app, Method::POST, &uri, Some(body.clone())).await;
    let (s2, b) = call(&app, Method::POST, &uri, Some(body)).await;
    assert_eq!(s1, StatusCode::OK, "{}", String::from_utf8_lossy(&a));
    assert_eq!(s2, StatusCode::OK);
    assert_eq!(a, b);
    let v: Value = serde_json::from_slice(&a).unwrap();
    assert_eq!(v["version"], 1);
    assert_eq!(v["options"]["params"]["rollouts"], 60);
}

#[tokio::test]
async fn document_queries_and_overrides() {
    let app = app();
    let id = create(&app, 3).await;
    let uri = format!("/v1/sessions/{id}/query");
    let text = call_json(&app, Method::POST, &uri, Some(json!({"query": "do Left"}))).await.1;
    let doc = call_json(&app, Method::POST, &uri, Some(json!({"query": {"rules": [{"action": "Left"}]}}))).await.1;
    assert_eq!(text, doc);
    let (status, v) = call_json(
        &app,
        Method::POST,
        &uri,
        Some(json!({"query": "do Left", "options": {"params": {"sigma": 1.0}, "contrast": "relative-complement"}})),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["options"]["params"]["sigma"], 1.0);
    assert_eq!(v["options"]["params"]["rollouts"], 60);
    assert_eq!(v["contrast"]["foil_only"], json!([]));
}

#[tokio::test]
async fn queries_leave_learned_values_alone() {
    let app = app();
    let id = create(&app, 4).await;
    let view_uri = format!("/v1/sessions/{id}");
    let before = call_json(&app, Method::GET, &view_uri, None).await.1;
    for q in ["do Left", "do Down until in_forest; do Right", "do Up while next_to_wall"] {
        let (status, _) = call(&app, Method::POST, &format!("{view_uri}/query"), Some(json!({"query": q}))).await;
        assert_eq!(status, StatusCode::OK);
    }
    let after = call_json(&app, Method::GET, &view_uri, None).await.1;
    assert_eq!(q_hash(&before), q_hash(&after));
    assert_eq!(before["ready"]["state"], after["ready"]["state"]);
}

#[tokio::test]
async fn interleaved_sessions_are_isolated() {
    let solo = app();
    let a_solo = create(&solo, 5).await;
    let q = json!({"query": "do Down"});
    let expected = call(&solo, Method::POST, &format!("/v1/sessions/{a_solo}/query"), Some(q.clone())).await.1;

    let app = app();
    let a = create(&app, 5).await;
    let b = create(&app, 6).await;
    for action in ["Right", "Right", "Down"] {
        call(&app, Method::POST, &format!("/v1/sessions/{b}/step"), Some(json!({"action": action}))).await;
    }
    call(&app, Method::POST, &format!("/v1/sessions/{b}/query"), Some(json!({"query": "do Left"}))).await;
    let got = call(&app, Method::POST, &format!("/v1/sessions/{a}/query"), Some(q)).await.1;
    assert_eq!(got, expected);
    let va = call_json(&app, Method::GET, &format!("/v1/sessions/{a}"), None).await.1;
    assert_eq!(va["ready"]["state"]["step_count"], 0);
}

#[tokio::test]
async fn steps_move_the_current_state() {
    let app = app();
    let id = create(&app, 7).await;
    let (status, v) = call_json(&app, Method::POST, &format!("/v1/sessions/{id}/step"), Some(json!({"action": "auto"}))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["state"]["step_count"], 1);
    let view = call_json(&app, Method::GET, &format!("/v1/sessions/{id}"), None).await.1;
    assert_eq!(view["ready"]["state"], v["state"]);
}

#[tokio::test]
async fn error_responses() {
    let app = app();
    let (status, v) = call_json(&app, Method::GET, "/v1/sessions/nope", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(v["code"], "not_found");

    let id = create(&app, 8).await;
    let (status, v) =
        call_json(&app, Method::POST, &format!("/v1/sessions/{id}/query"), Some(json!({"query": "do Jump"}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(v["code"], "query_error");
    assert!(v["message"].as_str().unwrap().contains("unknown action"));
    assert_eq!(v["position"]["column"], 4);

    let (status, v) = call_json(
        &app,
        Method::POST,
        &format!("/v1/sessions/{id}/query"),
        Some(json!({"query": "do Left", "options": {"params": {"sigma": -1.0}}})),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(v["code"], "invalid_options");

    let (status, v) = call_json(&app, Method::GET, &format!("/v1/sessions/{id}/trajectory?policy=last_foil"), None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(v["code"], "no_foil");

    let (status, v) =
        call_json(&app, Method::POST, &format!("/v1/sessions/{id}/step"), Some(json!({"action": "Jump"}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(v["code"], "unknown_action");
}

#[tokio::test]
async fn learned_only_dynamics_report_partial() {
    let app = app();
    let grid = xrl::GridLayout::canonical().to_grid_text();
    let mut q = xrl::QTable::new();
    let l = xrl::GridLayout::canonical();
    q.set(l.features(&l.initial_state()), xrl::Action::Right, 1.0);
    let (status, v) = call_json(
        &app,
        Method::POST,
        "/v1/sessions",
        Some(json!({"layout": grid, "qtab": q.to_text(), "options": {"transition": "learned-only", "params": {"rollouts": 10}}})),
    )
    .await;
    assert_eq!(status, StatusCode::CREATED, "{v}");
    let id = v["id"].as_str().unwrap();
    let (status, v) =
        call_json(&app, Method::POST, &format!("/v1/sessions/{id}/query"), Some(json!({"query": "do Down"}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["code"], "partial_explanation");
    assert_eq!(v["payload"]["partial"], true);
}

#[tokio::test]
async fn background_training_reports_conflict_until_ready() {
    let app = app();
    let mut body = quick_session(9);
    body["background"] = json!(true);
    body["learning"]["episodes"] = json!(20_000);
    let (status, v) = call_json(&app, Method::POST, "/v1/sessions", Some(body)).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    let id = v["id"].as_str().unwrap().to_string();
    let (status, v) =
        call_json(&app, Method::POST, &format!("/v1/sessions/{id}/query"), Some(json!({"query": "do Left"}))).await;
    if status == StatusCode::CONFLICT {
        assert_eq!(v["code"], "training");
    }
    loop {
        let v = call_json(&app, Method::GET, &format!("/v1/sessions/{id}"), None).await.1;
        if v["status"] == "ready" {
            break;
        }
        tokio::time::sleep(Duration::from_millis(50)).await;
    }
}

#[tokio::test]
async fn trajectories() {
    let app = app();
    let id = create(&app, 10).await;
    let (status, learned) = call_json(&app, Method::GET, &format!("/v1/sessions/{id}/trajectory?n=3"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert!(learned["records"].as_array().unwrap().len() <= 4);
    let payload =
        call_json(&app, Method::POST, &format!("/v1/sessions/{id}/query"), Some(json!({"query": "do Left"}))).await.1;
    let (status, foil) =
        call_json(&app, Method::GET, &format!("/v1/sessions/{id}/trajectory?policy=last_foil"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(foil, payload["foil"]["trajectory"]);
    let (status, _) =
        call_json(&app, Method::GET, &format!("/v1/sessions/{id}/trajectory?mode=sideways"), None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn snapshots_restore_sessions() {
    let dir = tempfile::tempdir().unwrap();
    let app = app_with(SessionStore::new(Some(dir.path().to_path_buf())));
    let id = create(&app, 11).await;
    call(&app, Method::POST, &format!("/v1/sessions/{id}/step"), Some(json!({"action": "Right"}))).await;
    let q = json!({"query": "do Down"});
    let payload = call(&app, Method::POST, &format!("/v1/sessions/{id}/query"), Some(q.clone())).await.1;
    let view = call_json(&app, Method::GET, &format!("/v1/sessions/{id}"), None).await.1;

    let restored = app_with(SessionStore::restore(dir.path().to_path_buf()).unwrap());
    let view2 = call_json(&restored, Method::GET, &format!("/v1/sessions/{id}"), None).await.1;
    assert_eq!(view2["ready"]["state"], view["ready"]["state"]);
    assert_eq!(view2["ready"]["last_query"], "do Down");
    assert_eq!(q_hash(&view2), q_hash(&view));
    let payload2 = call(&restored, Method::POST, &format!("/v1/sessions/{id}/query"), Some(q)).await.1;
    assert_eq!(payload2, payload);

    // the step generator resumes where it stopped
    for _ in 0..5 {
        let a = call(&app, Method::POST, &format!("/v1/sessions/{id}/step"), Some(json!({"action": "auto"}))).await.1;
        let b = call(&restored, Method::POST, &format!("/v1/sessions/{id}/step"), Some(json!({"action": "auto"}))).await.1;
        assert_eq!(a, b);
    }
    let other = create(&restored, 12).await;
    assert_ne!(other, id);
}
