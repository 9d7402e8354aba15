use std::path::Path;
use std::process::Command;
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::{Arc, Mutex};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use slangquest::adapters::AudioStore;
use slangquest::api::{router, AppState};
use slangquest_core::events;
use slangquest_core::gm::{NarrativeProvider, ProviderCall, ScriptedProvider, TransportError};
use slangquest_core::runtime::Services;
use slangquest_core::speech::network_calls;
use slangquest_core::GameConfig;
use tower::ServiceExt;

const CONFIG: &str = include_str!("../../../fixtures/config.toml");
const GM_SCRIPT: &str = include_str!("../../../fixtures/gm_script.toml");
const PRACTICE: [&str; 5] = ["wing-it", "shake-off", "hit-the-sack", "spill-the-beans", "break-the-ice"];

fn config() -> Arc<GameConfig> {
    Arc::new(GameConfig::from_toml_str(CONFIG).unwrap())
}

fn app_with(provider: Arc<dyn NarrativeProvider>, log_dir: &Path) -> Router {
    let services = Services::offline(config(), provider);
    router(Arc::new(AppState::new(Arc::new(services), log_dir, Arc::new(AudioStore::new(8)))))
}

fn scripted_app(log_dir: &Path) -> Router {
    app_with(Arc::new(ScriptedProvider::from_toml_str(GM_SCRIPT).unwrap()), log_dir)
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri).header("content-type", "application/json");
    let req = match body {
        Some(b) => req.body(Body::from(b.to_string())).unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, value)
}

async fn create_rpg(app: &Router) -> String {
    let (status, body) =
        call(app, "POST", "/sessions", Some(json!({"mode": "rpg", "practice": PRACTICE, "hero_id": "ranger"}))).await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    body["session_id"].as_str().unwrap().to_owned()
}

#[tokio::test]
async fn full_session_over_http() {
    let dir = tempfile::tempdir().unwrap();
    let app = scripted_app(dir.path());
    let calls_before = network_calls();

    let (status, health) = call(&app, "GET", "/healthz", None).await;
    assert_eq!((status, health), (StatusCode::OK, json!({"status": "ok"})));

    let id = create_rpg(&app).await;
    let pretest = json!({
        "ratings": PRACTICE.iter().map(|p| json!({"phrase_id": p, "level": "completely_unfamiliar"})).collect::<Vec<_>>(),
    });
    let (status, pre) = call(&app, "POST", &format!("/sessions/{id}/pretest"), Some(pretest)).await;
    assert_eq!(status, StatusCode::OK, "{pre}");
    assert_eq!(pre["definition"]["total"], 0.0);

    let (status, view) =
        call(&app, "POST", &format!("/sessions/{id}/turns"), Some(json!({"text": "I need to wing it"}))).await;
    assert_eq!(status, StatusCode::OK, "{view}");
    assert_eq!(view["turn_index"], 1);
    assert_eq!(view["subtitle"], view["narrative"]);
    assert_eq!(view["audio_ref"], Value::Null);
    assert_eq!(view["speaking_npc"]["id"], "elder");
    assert_eq!(view["practice_box"][0]["count"], 1);
    assert_eq!(view["practice_box"][0]["color"], "red");

    let (_, snapshot) = call(&app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(snapshot["last_turn"], view);

    let (status, err) = call(&app, "GET", &format!("/sessions/{id}/feedback"), None).await;
    assert_eq!((status, err["error"].as_str()), (StatusCode::CONFLICT, Some("session_not_finished")));

    for turn in 2..=12 {
        let audio = json!({"audio": {"base64": "AAAA", "mime_type": "audio/webm", "sidecar_text": "shake it off"}});
        let (status, v) = call(&app, "POST", &format!("/sessions/{id}/turns"), Some(audio)).await;
        assert_eq!(status, StatusCode::OK, "{v}");
        assert_eq!(v["turn_index"], turn);
        if turn == 6 {
            assert!(v["reminder"]["phrase_ids"].as_array().is_some_and(|a| !a.is_empty()), "{v}");
        }
    }
    let (status, err) = call(&app, "POST", &format!("/sessions/{id}/turns"), Some(json!({"text": "more"}))).await;
    assert_eq!((status, err["error"].as_str()), (StatusCode::CONFLICT, Some("session_finished")));

    let (status, report) = call(&app, "GET", &format!("/sessions/{id}/feedback"), None).await;
    assert_eq!(status, StatusCode::OK, "{report}");
    assert_eq!(report["formative"].as_array().unwrap().len(), 5);

    let (status, err) = call(&app, "POST", &format!("/sessions/{id}/survey"), Some(json!({"q1": 5, "q2": 5, "q3": 5, "q4": 5}))).await;
    assert_eq!((status, err["error"].as_str()), (StatusCode::CONFLICT, Some("out_of_order")));

    let responses: Vec<Value> = PRACTICE
        .iter()
        .map(|p| json!({"phrase_id": p, "definition": "to relax and get rid of stress", "sentence": "I shake off the stress"}))
        .collect();
    let (status, post) = call(&app, "POST", &format!("/sessions/{id}/posttest"), Some(json!({"responses": responses}))).await;
    assert_eq!(status, StatusCode::OK, "{post}");
    assert_eq!(post["feedback"].as_array().unwrap().len(), 5);

    let (status, err) = call(&app, "POST", &format!("/sessions/{id}/survey"), Some(json!({"q1": 6, "q2": 5, "q3": 5, "q4": 5}))).await;
    assert_eq!((status, err["error"].as_str()), (StatusCode::UNPROCESSABLE_ENTITY, Some("invalid_survey")));
    let (status, _) = call(&app, "POST", &format!("/sessions/{id}/survey"), Some(json!({"q1": 4, "q2": 5, "q3": 5, "q4": 3}))).await;
    assert_eq!(status, StatusCode::OK);

    let (_, final_view) = call(&app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(final_view["status"], "finished");
    assert_eq!(final_view["outcome"]["ending_label"], "triumphant");
    assert!(final_view["survey_done"].as_bool().unwrap());

    // The log on disk replays to the same state the service holds.
    let config = config();
    let replayed = events::replay(&events::read_log(dir.path().join(format!("{id}.jsonl"))).unwrap(), &config).unwrap();
    assert_eq!(replayed.state.turn_index, 12);
    assert_eq!(serde_json::to_value(&replayed.state.usage).unwrap(), json!(final_view["practice_box"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| json!({"phrase_id": r["phrase_id"], "count": r["count"], "color": r["color"]}))
        .collect::<Vec<_>>()));

    assert_eq!(network_calls(), calls_before, "stub mode made a network call");
}

#[tokio::test]
async fn audio_turn_equals_text_turn() {
    let dir = tempfile::tempdir().unwrap();
    let app = scripted_app(dir.path());
    let a = create_rpg(&app).await;
    let b = create_rpg(&app).await;
    let (_, by_text) = call(&app, "POST", &format!("/sessions/{a}/turns"), Some(json!({"text": "I need to wing it"}))).await;
    let audio = json!({"audio": {"base64": "UklGRg==", "sidecar_text": "I need to wing it"}});
    let (_, by_audio) = call(&app, "POST", &format!("/sessions/{b}/turns"), Some(audio)).await;
    assert_eq!(by_text, by_audio);

    let (status, err) = call(&app, "POST", &format!("/sessions/{a}/turns"), Some(json!({"audio": {"base64": "AAAA"}}))).await;
    assert_eq!((status, err["error"].as_str()), (StatusCode::BAD_GATEWAY, Some("asr_failure")));
    let (status, _) = call(&app, "POST", &format!("/sessions/{a}/turns"), Some(json!({"text": "a", "audio": {"base64": ""}}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn provider_failure_commits_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let bad = "The elder frowns.\n```json\n{\"next_state\": \"battlefield\", \"speaking_npc\": \"elder\"}\n```";
    let provider = ScriptedProvider::new().with_reply(None, 1, 1, bad).with_reply(None, 1, 2, bad).with_reply(None, 1, 3, bad);
    let app = app_with(Arc::new(provider), dir.path());
    let id = create_rpg(&app).await;
    let log = dir.path().join(format!("{id}.jsonl"));
    let before_log = std::fs::read_to_string(&log).unwrap();
    let (_, before) = call(&app, "GET", &format!("/sessions/{id}"), None).await;

    let (status, err) = call(&app, "POST", &format!("/sessions/{id}/turns"), Some(json!({"text": "hello"}))).await;
    assert_eq!(status, StatusCode::BAD_GATEWAY);
    assert_eq!(err["error"], "provider_failure");
    assert_eq!(err["details"].as_array().unwrap().len(), 3);

    let (_, after) = call(&app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(before, after);
    assert_eq!(after["turn_index"], 0);
    assert_eq!(std::fs::read_to_string(&log).unwrap(), before_log);
}

/// Blocks every call until the test releases it.
struct Gate {
    inner: ScriptedProvider,
    entered: Mutex<Sender<()>>,
    release: Mutex<Receiver<()>>,
}

impl NarrativeProvider for Gate {
    fn complete(&self, call: &ProviderCall) -> Result<String, TransportError> {
        self.entered.lock().unwrap().send(()).unwrap();
        self.release.lock().unwrap().recv().unwrap();
        self.inner.complete(call)
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn busy_sessions_and_snapshot_isolation() {
    let dir = tempfile::tempdir().unwrap();
    let (entered_tx, entered_rx) = channel();
    let (release_tx, release_rx) = channel();
    let gate = Gate {
        inner: ScriptedProvider::from_toml_str(GM_SCRIPT).unwrap(),
        entered: Mutex::new(entered_tx),
        release: Mutex::new(release_rx),
    };
    let app = app_with(Arc::new(gate), dir.path());
    let id = create_rpg(&app).await;
    let other = create_rpg(&app).await;

    let in_flight = {
        let app = app.clone();
        let uri = format!("/sessions/{id}/turns");
        tokio::spawn(async move { call(&app, "POST", &uri, Some(json!({"text": "I need to wing it"}))).await })
    };
    tokio::task::spawn_blocking(move || entered_rx.recv().unwrap()).await.unwrap();

    let (status, snapshot) = call(&app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(snapshot["turn_index"], 0, "reads during a turn see the pre-turn snapshot");
    let (status, err) = call(&app, "POST", &format!("/sessions/{id}/turns"), Some(json!({"text": "again"}))).await;
    assert_eq!((status, err["error"].as_str()), (StatusCode::CONFLICT, Some("busy")));
    let (status, _) = call(&app, "GET", &format!("/sessions/{other}"), None).await;
    assert_eq!(status, StatusCode::OK, "other sessions are unaffected");

    release_tx.send(()).unwrap();
    let (status, view) = in_flight.await.unwrap();
    assert_eq!(status, StatusCode::OK, "{view}");
    let (_, snapshot) = call(&app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(snapshot["turn_index"], 1);
    assert_eq!(snapshot["last_turn"], view);
}

#[tokio::test]
async fn request_errors() {
    let dir = tempfile::tempdir().unwrap();
    let app = scripted_app(dir.path());
    let (status, err) = call(&app, "GET", "/sessions/nope", None).await;
    assert_eq!((status, err["error"].as_str()), (StatusCode::NOT_FOUND, Some("not_found")));

    let four = &PRACTICE[..4];
    let (status, err) = call(&app, "POST", "/sessions", Some(json!({"mode": "rpg", "practice": four, "hero_id": "ranger"}))).await;
    assert_eq!((status, err["error"].as_str()), (StatusCode::UNPROCESSABLE_ENTITY, Some("invalid_request")));
    let (status, _) = call(&app, "POST", "/sessions", Some(json!({"mode": "classroom", "practice": PRACTICE, "hero_id": "ranger"}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, err) = call(&app, "POST", "/sessions", Some(json!({"mode": "opera"}))).await;
    assert_eq!((status, err["error"].as_str()), (StatusCode::BAD_REQUEST, Some("invalid_request")));
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0, "rejected sessions leave no log");

    let (status, created) = call(&app, "POST", "/sessions", Some(json!({"mode": "classroom", "practice": PRACTICE}))).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(created["view"]["hero_id"], Value::Null);
    let (status, _) = call(&app, "GET", "/audio/missing", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[test]
fn external_bindings_without_keys_fail_at_startup() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../..");
    for (flag, var) in [("--provider", "LLM_API_KEY"), ("--asr", "ASR_API_KEY"), ("--tts", "TTS_API_KEY")] {
        let out = Command::new(env!("CARGO_BIN_EXE_slangquest"))
            .current_dir(&root)
            .args(["serve", "--port", "0", flag, "external"])
            .env_remove("LLM_API_KEY")
            .env_remove("ASR_API_KEY")
            .env_remove("TTS_API_KEY")
            .output()
            .unwrap();
        assert!(!out.status.success());
        let stderr = String::from_utf8_lossy(&out.stderr);
        assert!(stderr.contains(var), "{stderr}");
    }
}
