use std::sync::Arc;

use aegis_core::corpus::SharedRepository;
use aegis_core::fixtures;
use aegis_core::queue::{ManualClock, MemorySink};
use aegis_service::{router, Service, ServiceConfig};
use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

fn service(clock: Arc<ManualClock>) -> Arc<Service> {
    let repo = Arc::new(SharedRepository::new(fixtures::repository()));
    Arc::new(Service::new(fixtures::profile(), repo, clock, ServiceConfig::default()).unwrap())
}

fn app() -> Router {
    router(service(Arc::new(ManualClock::new(1_000))), None)
}

async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    let bytes = res.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, value)
}

fn gender_delta(view: &Value) -> f64 {
    view["evaluation"]["group"]["sensitive"][0]["delta"].as_f64().unwrap()
}

async fn open(app: &Router, topics: &[&str]) -> (StatusCode, Value) {
    call(app, Method::POST, "/session", Some(json!({ "topics": topics }))).await
}

#[tokio::test]
async fn walk_through_reaches_satisfied_and_queues() {
    let app = app();
    let (status, view) = open(&app, &[fixtures::STRONG_TOPIC]).await;
    assert_eq!(status, StatusCode::CREATED);
    let id = view["session_id"].as_str().unwrap().to_string();
    let mut states = vec![view["state"].clone()];
    let mut deltas = vec![gender_delta(&view)];
    for _ in 0..3 {
        let (status, set) = call(&app, Method::GET, &format!("/session/{id}/suggestions"), None).await;
        assert_eq!(status, StatusCode::OK);
        let topic = set["entries"][0]["topic"].as_str().unwrap().to_string();
        let (status, view) =
            call(&app, Method::POST, &format!("/session/{id}/accept"), Some(json!({ "topic": topic }))).await;
        assert_eq!(status, StatusCode::OK, "{view}");
        states.push(view["state"].clone());
        deltas.push(gender_delta(&view));
    }
    let (status, fin) = call(&app, Method::POST, &format!("/session/{id}/finalize"), None).await;
    assert_eq!(status, StatusCode::OK);
    states.push(fin["state"].clone());
    assert_eq!(states, vec![json!("Draft"), json!("Draft"), json!("Draft"), json!("Satisfied"), json!("Queued")]);
    for (got, want) in deltas.iter().zip([0.43, 0.19, 0.11, 0.07]) {
        assert!((got - want).abs() < 0.005, "{deltas:?}");
    }
    assert_eq!(fin["queued"], 4);

    let (_, queue) = call(&app, Method::GET, "/queue", None).await;
    let entries = queue["entries"].as_array().unwrap();
    assert_eq!(entries.len(), 4);
    assert!(entries.iter().all(|e| e["kind"] == "pending"));
    assert!(entries.iter().all(|e| e["scheduled_at"].as_i64().unwrap() > 1_000));

    let (status, report) = call(&app, Method::GET, "/adversary", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(report["sensitive"][0]["verdict"], "Indistinguishable");
    assert_eq!(report["topics_used"].as_array().unwrap().len(), 4);
}

#[tokio::test]
async fn negligible_post_finalizes_without_suggestions() {
    let app = app();
    let (_, view) = open(&app, &[fixtures::NEGLIGIBLE_TOPIC]).await;
    assert_eq!(view["state"], "Satisfied");
    assert_eq!(view["evaluation"]["group"]["sensitive"][0]["verdict"], "Indistinguishable");
    let id = view["session_id"].as_str().unwrap();
    let (status, set) = call(&app, Method::GET, &format!("/session/{id}/suggestions"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(set["entries"], json!([]));
    let (status, fin) = call(&app, Method::POST, &format!("/session/{id}/finalize"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(fin["queued"], 1);
}

#[tokio::test]
async fn finalize_on_draft_conflicts() {
    let app = app();
    let (_, view) = open(&app, &[fixtures::STRONG_TOPIC]).await;
    let id = view["session_id"].as_str().unwrap();
    let (status, err) = call(&app, Method::POST, &format!("/session/{id}/finalize"), None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(err["error"], "NotSatisfied");
}

#[tokio::test]
async fn one_open_session_per_profile() {
    let app = app();
    let (_, view) = open(&app, &[fixtures::STRONG_TOPIC]).await;
    let id = view["session_id"].as_str().unwrap().to_string();
    let (status, err) = open(&app, &[fixtures::NEGLIGIBLE_TOPIC]).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(err["error"], "SessionConflict");
    let (_, health) = call(&app, Method::GET, "/health", None).await;
    assert_eq!(health["active_session"], json!(id));

    let (status, _) = call(&app, Method::DELETE, &format!("/session/{id}"), None).await;
    assert_eq!(status, StatusCode::NO_CONTENT);
    let (status, _) = call(&app, Method::GET, &format!("/session/{id}"), None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = open(&app, &[fixtures::NEGLIGIBLE_TOPIC]).await;
    assert_eq!(status, StatusCode::CREATED);
}

#[tokio::test]
async fn replayed_accept_is_rejected() {
    let app = app();
    let (_, view) = open(&app, &[fixtures::STRONG_TOPIC]).await;
    let id = view["session_id"].as_str().unwrap();
    let (status, err) = call(
        &app,
        Method::POST,
        &format!("/session/{id}/accept"),
        Some(json!({ "topic": fixtures::SUPPLY_TOPICS[0] })),
    )
    .await;
    assert_eq!(status, StatusCode::CONFLICT, "accept before fetching suggestions");
    assert_eq!(err["error"], "StaleSuggestion");

    let (_, set) = call(&app, Method::GET, &format!("/session/{id}/suggestions"), None).await;
    let topic = set["entries"][0]["topic"].clone();
    let uri = format!("/session/{id}/accept");
    let (status, first) = call(&app, Method::POST, &uri, Some(json!({ "topic": topic }))).await;
    assert_eq!(status, StatusCode::OK);
    let (status, err) = call(&app, Method::POST, &uri, Some(json!({ "topic": topic }))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(err["error"], "DuplicateTopic");
    let (_, now) = call(&app, Method::GET, &format!("/session/{id}"), None).await;
    assert_eq!(now["group"], first["group"]);
    assert_eq!(now["group"]["accepted_obfuscations"].as_array().unwrap().len(), 1);
}

#[tokio::test]
async fn error_statuses() {
    let app = app();
    let (status, err) = open(&app, &["nosuchtopic"]).await;
    assert_eq!((status, err["error"].clone()), (StatusCode::NOT_FOUND, json!("UnknownTopic")));
    let (status, _) = open(&app, &[]).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, err) = call(&app, Method::POST, "/session", Some(json!({ "topic": "x" }))).await;
    assert_eq!((status, err["error"].clone()), (StatusCode::BAD_REQUEST, json!("MalformedDocument")));
    let req = Request::post("/session")
        .header("content-type", "application/json")
        .body(Body::from("{not json"))
        .unwrap();
    assert_eq!(app.clone().oneshot(req).await.unwrap().status(), StatusCode::BAD_REQUEST);
    let (status, _) = call(&app, Method::GET, "/session/s99/suggestions", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let (_, view) = open(&app, &[fixtures::STRONG_TOPIC]).await;
    let id = view["session_id"].as_str().unwrap();
    call(&app, Method::GET, &format!("/session/{id}/suggestions"), None).await;
    let (status, _) =
        call(&app, Method::POST, &format!("/session/{id}/accept"), Some(json!({ "topic": "nosuchtopic" }))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, err) = call(
        &app,
        Method::POST,
        &format!("/session/{id}/accept"),
        Some(json!({ "topic": fixtures::OFF_PERSONA_TOPIC })),
    )
    .await;
    assert_eq!((status, err["error"].clone()), (StatusCode::CONFLICT, json!("StaleSuggestion")));
}

#[tokio::test]
async fn tree_and_health_views() {
    let app = app();
    let (status, tree) = call(&app, Method::GET, "/tree", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(tree["order"], json!(["ethnicity", "location", "gender"]));
    let paths: Vec<Value> = tree["nodes"].as_array().unwrap().iter().map(|n| n["path"].clone()).collect();
    assert!(paths.contains(&json!(["white", "ca", "female"])));
    assert!(!paths.iter().any(|p| p[0] == "black"), "pruned view keeps only the user's branch");
    let (_, full) = call(&app, Method::GET, "/tree?full=true", None).await;
    assert!(full["nodes"].as_array().unwrap().len() > tree["nodes"].as_array().unwrap().len());

    let (_, health) = call(&app, Method::GET, "/health", None).await;
    assert_eq!(health["status"], "ok");
    assert_eq!(health["topics"], 6);
    assert_eq!(health["active_session"], Value::Null);
}

#[tokio::test]
async fn queue_releases_on_the_injected_clock() {
    let clock = Arc::new(ManualClock::new(0));
    let svc = service(clock.clone());
    let view = svc
        .open_session(aegis_core::suggest::PendingPost {
            topics: vec![fixtures::NEGLIGIBLE_TOPIC.into()],
            text: "morning".into(),
        })
        .unwrap();
    svc.finalize(&view.session_id).unwrap();
    let due = svc.queue().next_due.unwrap();
    let mut sink = MemorySink::default();
    clock.set(due - 1);
    assert_eq!(svc.release(&mut sink).unwrap(), 0);
    clock.set(due);
    assert_eq!(svc.release(&mut sink).unwrap(), 1);
    assert_eq!(sink.published[0].text, "morning");
    assert!(svc.queue().entries.is_empty());
}

#[tokio::test]
async fn sessions_pin_their_snapshot() {
    let svc = service(Arc::new(ManualClock::new(0)));
    let view = svc
        .open_session(aegis_core::suggest::PendingPost {
            topics: vec![fixtures::STRONG_TOPIC.into()],
            text: String::new(),
        })
        .unwrap();
    let set = svc.suggestions(&view.session_id).unwrap();
    let extra: Vec<_> = fixtures::posts()
        .into_iter()
        .take(50)
        .map(|mut p| {
            p.post_id = format!("late-{}", p.post_id);
            p
        })
        .collect();
    svc.repository().ingest_batch(&extra).unwrap();
    assert!(svc.health().generation > view.generation);
    let next = svc.accept(&view.session_id, &set.entries[0].topic).unwrap();
    assert_eq!(next.generation, view.generation);
    assert_eq!(next.evaluation.group.generation, view.generation);
}

#[tokio::test]
async fn serves_static_files() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("index.html"), "<html>ui</html>").unwrap();
    let app = router(service(Arc::new(ManualClock::new(0))), Some(dir.path()));
    let res = app.oneshot(Request::get("/index.html").body(Body::empty()).unwrap()).await.unwrap();
    assert_eq!(res.status(), StatusCode::OK);
    let body = res.into_body().collect().await.unwrap().to_bytes();
    assert_eq!(&body[..], b"<html>ui</html>");
}

fn assert_valid(name: &str, value: &Value) {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join(format!("../../schemas/{name}.schema.json"));
    let doc: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    let validator = jsonschema::validator_for(&doc).unwrap();
    let errors: Vec<String> = validator.iter_errors(value).map(|e| format!("{e} at {}", e.instance_path())).collect();
    assert!(errors.is_empty(), "{name}: {errors:?}");
}

#[tokio::test]
async fn payloads_match_shipped_schemas() {
    let app = app();
    let (_, view) = open(&app, &[fixtures::STRONG_TOPIC]).await;
    assert_valid("session", &view);
    let id = view["session_id"].as_str().unwrap();
    let (_, set) = call(&app, Method::GET, &format!("/session/{id}/suggestions"), None).await;
    assert_valid("suggestion-set", &set);
    let (_, err) = call(&app, Method::POST, &format!("/session/{id}/finalize"), None).await;
    assert_valid("error", &err);
    for topic in fixtures::SUPPLY_TOPICS {
        call(&app, Method::GET, &format!("/session/{id}/suggestions"), None).await;
        let (_, view) = call(&app, Method::POST, &format!("/session/{id}/accept"), Some(json!({ "topic": topic }))).await;
        assert_valid("session", &view);
    }
    let (_, fin) = call(&app, Method::POST, &format!("/session/{id}/finalize"), None).await;
    assert_valid("finalize", &fin);
    for (uri, name) in [("/queue", "queue"), ("/tree", "tree"), ("/adversary", "inference-report"), ("/health", "health")] {
        let (status, body) = call(&app, Method::GET, uri, None).await;
        assert_eq!(status, StatusCode::OK);
        assert_valid(name, &body);
    }
}
