mod common;

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::process::{Command, Stdio};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use common::*;
use derplace_cli::server::{router, AppState};
use derplace_cli::store::SessionStore;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

struct Api {
    app: Router,
    _dir: Option<tempfile::TempDir>,
}

impl Api {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let app = router(AppState::new(SessionStore::open(dir.path()).unwrap()));
        Api { app, _dir: Some(dir) }
    }

    fn on(path: &std::path::Path) -> Self {
        Api {
            app: router(AppState::new(SessionStore::open(path).unwrap())),
            _dir: None,
        }
    }

    async fn raw(&self, method: &str, uri: &str, body: &str) -> (StatusCode, String) {
        let req = Request::builder()
            .method(method)
            .uri(uri)
            .header("content-type", "application/json")
            .body(Body::from(body.to_string()))
            .unwrap();
        let resp = self.app.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes();
        (status, String::from_utf8(bytes.to_vec()).unwrap())
    }

    async fn json(&self, method: &str, uri: &str, body: Value) -> (StatusCode, Value) {
        let text = if body.is_null() { String::new() } else { body.to_string() };
        let (status, out) = self.raw(method, uri, &text).await;
        (status, serde_json::from_str(&out).unwrap_or(Value::String(out)))
    }

    async fn feeder(&self, text: &str) -> String {
        let (status, body) = self.raw("POST", "/feeders", text).await;
        assert_eq!(status, StatusCode::CREATED, "{body}");
        serde_json::from_str::<Value>(&body).unwrap()["id"].as_str().unwrap().to_string()
    }

    async fn session(&self, feeder: &str, extra: Value) -> String {
        let mut body = json!({"feeder_id": feeder, "mode": "npp"});
        body.as_object_mut().unwrap().extend(extra.as_object().unwrap().clone());
        let (status, v) = self.json("POST", "/sessions", body).await;
        assert_eq!(status, StatusCode::CREATED, "{v}");
        v["id"].as_str().unwrap().to_string()
    }
}

#[tokio::test]
async fn feeders_are_stored_and_validated() {
    let api = Api::new();
    let id = api.feeder(CHAIN3).await;
    assert_eq!(api.feeder(CHAIN3).await, id);
    let (status, body) = api.raw("GET", &format!("/feeders/{id}"), "").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(serde_json::from_str::<Value>(&body).unwrap()["substation"], "s0");
    let (status, v) = api.json("GET", "/feeders/ffff", Value::Null).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(v["error"], "unknown_feeder");
    let (status, v) = api.json("POST", "/feeders", json!({"nodes": []})).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(v["error"], "invalid_feeder");
}

#[tokio::test]
async fn unknown_session_is_404() {
    let api = Api::new();
    let (status, v) = api.json("POST", "/sessions/s9/heatmap", json!({"perf_node": "n1"})).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(v["error"], "unknown_session");
    let (status, _) = api.json("GET", "/sessions/s9", Value::Null).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn red_placement_is_409_and_undo_restores() {
    let api = Api::new();
    let f = api.feeder(TWO_ARMS).await;
    let s = api.session(&f, json!({})).await;
    let (status, h) = api.json("POST", &format!("/sessions/{s}/heatmap"), json!({"perf_node": "y1"})).await;
    assert_eq!(status, StatusCode::OK);
    let color = |h: &Value, n: &str| {
        h["entries"].as_array().unwrap().iter().find(|e| e["node"] == n).unwrap()["color"].clone()
    };
    assert_eq!(color(&h, "x2"), "red");
    let (status, v) = api
        .json("POST", &format!("/sessions/{s}/place"), json!({"actuator": "x2", "performance": "y1"}))
        .await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(v["error"], "candidate_unstable");
    assert!(v["message"].as_str().unwrap().starts_with("candidate unstable"));

    let (_, before) = api.json("GET", &format!("/sessions/{s}"), Value::Null).await;
    let (status, after) = api
        .json("POST", &format!("/sessions/{s}/place"), json!({"actuator": "y1", "performance": "y1"}))
        .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(after["core"]["pairs"].as_array().unwrap().len(), 1);
    let (status, undone) = api.json("POST", &format!("/sessions/{s}/undo"), Value::Null).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(undone["core"], before["core"]);
    assert_eq!(undone["current_heatmap"], before["current_heatmap"]);
    let (status, v) = api.json("POST", &format!("/sessions/{s}/undo"), Value::Null).await;
    assert_eq!((status, v["error"].as_str()), (StatusCode::CONFLICT, Some("nothing_to_undo")));
}

#[tokio::test]
async fn malformed_requests_are_400() {
    let api = Api::new();
    let f = api.feeder(CHAIN3).await;
    let s = api.session(&f, json!({})).await;
    for body in [json!({}), json!({"perf_node": "n1", "colocated": true}), json!({"perf": "n1"})] {
        let (status, v) = api.json("POST", &format!("/sessions/{s}/heatmap"), body).await;
        assert_eq!(status, StatusCode::BAD_REQUEST);
        assert_eq!(v["error"], "malformed_request");
    }
    let (status, _) = api.raw("POST", "/sessions", "{not json").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, v) = api.json("POST", &format!("/sessions/{s}/heatmap"), json!({"perf_node": "zz"})).await;
    assert_eq!((status, v["error"].as_str()), (StatusCode::UNPROCESSABLE_ENTITY, Some("unknown_node")));
    let (status, v) = api.json("POST", &format!("/sessions/{s}/heatmap"), json!({"colocated": true})).await;
    assert_eq!((status, v["error"].as_str()), (StatusCode::CONFLICT, Some("wrong_mode")));
}

#[tokio::test]
async fn svg_branches_and_auto() {
    let api = Api::new();
    let f = api.feeder(TWO_ARMS).await;
    let s = api.session(&f, json!({})).await;
    let (status, _) = api.raw("GET", &format!("/sessions/{s}/export.svg"), "").await;
    assert_eq!(status, StatusCode::CONFLICT);
    api.json("POST", &format!("/sessions/{s}/heatmap"), json!({"perf_node": "x1", "samples": 16})).await;
    let (status, svg) = api.raw("GET", &format!("/sessions/{s}/export.svg"), "").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(svg.matches("<circle").count(), 5);
    let (status, b) = api.json("GET", &format!("/sessions/{s}/branches?min_length=1"), Value::Null).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(b["min_length"], 1);
    assert_eq!(b["branches"].as_array().unwrap().len(), 2);

    let auto = api.session(&f, json!({"mode": "auto_ocpp"})).await;
    let (status, stats) = api.json("POST", &format!("/sessions/{auto}/auto"), json!({"seed": 4})).await;
    assert_eq!(status, StatusCode::OK, "{stats}");
    assert_eq!(stats["seed"], 4);
    assert_eq!(stats["certificate"], true);
}

#[tokio::test]
async fn sessions_survive_a_restart() {
    let dir = tempfile::tempdir().unwrap();
    let api = Api::on(dir.path());
    let f = api.feeder(CHAIN3).await;
    let s = api.session(&f, json!({"sampling": {"scheme": "grid", "count": 16, "seed": 0}})).await;
    api.json("POST", &format!("/sessions/{s}/heatmap"), json!({"perf_node": "n2"})).await;
    api.json("POST", &format!("/sessions/{s}/place"), json!({"actuator": "n2", "performance": "n2"})).await;
    let (_, first) = api.json("GET", &format!("/sessions/{s}"), Value::Null).await;
    drop(api);
    let fresh = Api::on(dir.path());
    let (status, again) = fresh.json("GET", &format!("/sessions/{s}"), Value::Null).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(first, again);
    assert_eq!(again["config"]["sampling"]["count"], 16);
}

/// A 3-step NPP session run through HTTP and through the CLI gives
/// identical heatmap JSON at every step.
#[tokio::test]
async fn http_and_cli_agree() {
    let text = std::fs::read_to_string(synthetic()).unwrap();
    let api = Api::new();
    let f = api.feeder(&text).await;
    let s = api
        .session(&f, json!({"sampling": {"scheme": "grid", "count": 36, "seed": 0}}))
        .await;
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("s.json");
    for perf in ["n12", "n18", "n22"] {
        let (status, h) = api.json("POST", &format!("/sessions/{s}/heatmap"), json!({"perf_node": perf})).await;
        assert_eq!(status, StatusCode::OK);
        let best = h["entries"]
            .as_array()
            .unwrap()
            .iter()
            .filter(|e| e["color"] != "grey" && e["n_stable"].as_u64().unwrap() > 0)
            // Highest fraction, first node on ties.
            .fold(None::<&Value>, |best, e| match best {
                Some(b) if b["fraction"].as_f64() >= e["fraction"].as_f64() => Some(b),
                _ => Some(e),
            })
            .map(|e| e["node"].as_str().unwrap().to_string());
        let o = derplace([
            "npp".as_ref(),
            synthetic().as_os_str(),
            "--samples".as_ref(),
            "36".as_ref(),
            "--perf".as_ref(),
            perf.as_ref(),
            "--session".as_ref(),
            file.as_os_str(),
            "--place".as_ref(),
            "best".as_ref(),
        ]);
        assert_eq!(stdout_json(&o), h, "heatmap for {perf} differs");
        let stderr = String::from_utf8_lossy(&o.stderr).to_string();
        let best = best.expect("a stable candidate exists");
        assert!(stderr.contains(&format!("placed {best} ")), "{stderr} vs {best}");
        let (status, _) = api
            .json("POST", &format!("/sessions/{s}/place"), json!({"actuator": best, "performance": perf}))
            .await;
        assert_eq!(status, StatusCode::OK);
    }
    let (_, view) = api.json("GET", &format!("/sessions/{s}"), Value::Null).await;
    let doc: Value = serde_json::from_str(&std::fs::read_to_string(&file).unwrap()).unwrap();
    assert_eq!(view["core"], doc["core"]);
    assert_eq!(view["events"], doc["events"]);
}

#[test]
fn serve_binary_answers_over_tcp() {
    let dir = tempfile::tempdir().unwrap();
    let mut child = Command::new(env!("CARGO_BIN_EXE_derplace"))
        .args(["serve", "--port", "0", "--store"])
        .arg(dir.path())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let addr = line.trim().strip_prefix("listening on http://").expect("banner").to_string();
    let body = CHAIN3;
    let mut conn = TcpStream::connect(&addr).unwrap();
    write!(
        conn,
        "POST /feeders HTTP/1.1\r\nHost: {addr}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    )
    .unwrap();
    let mut resp = String::new();
    conn.read_to_string(&mut resp).unwrap();
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(resp.starts_with("HTTP/1.1 201"), "{resp}");
    assert!(dir.path().join("feeders").read_dir().unwrap().count() == 1);
}
