#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use firetrace_core::config::Config;
use firetrace_service::{router, AppState};
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn streams() -> Vec<PathBuf> {
    let mut files: Vec<PathBuf> =
        std::fs::read_dir(fixtures().join("streams")).unwrap().map(|e| e.unwrap().path()).collect();
    files.sort();
    files
}

pub struct Harness {
    pub state: Arc<AppState>,
    pub app: Router,
    pub dir: tempfile::TempDir,
}

/// Fixture configuration with its data directory in a fresh tempdir and
/// every fixture stream ingested.
pub fn harness() -> Harness {
    harness_with(|_| {})
}

pub fn harness_with(tweak: impl FnOnce(&mut Config)) -> Harness {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = Config::load(fixtures().join("config.toml")).unwrap();
    cfg.service.data_dir = Some(dir.path().join("data"));
    tweak(&mut cfg);
    let state = AppState::from_config(cfg).unwrap();
    state.pipeline.ingest_files(&streams()).unwrap();
    let state = Arc::new(state);
    Harness { app: router(state.clone()), state, dir }
}

pub fn secret(user: &str) -> String {
    format!("{user}-pass")
}

impl Harness {
    pub async fn call(&self, method: &str, uri: &str, token: Option<&str>, body: Option<Value>) -> (StatusCode, Value) {
        self.call_with(method, uri, token, body, &[]).await
    }

    pub async fn call_with(
        &self,
        method: &str,
        uri: &str,
        token: Option<&str>,
        body: Option<Value>,
        headers: &[(&str, &str)],
    ) -> (StatusCode, Value) {
        let mut req = Request::builder().method(method).uri(uri);
        if let Some(t) = token {
            req = req.header("authorization", format!("Bearer {t}"));
        }
        for (k, v) in headers {
            req = req.header(*k, *v);
        }
        let req = match body {
            Some(b) => req.header("content-type", "application/json").body(Body::from(b.to_string())).unwrap(),
            None => req.body(Body::empty()).unwrap(),
        };
        let resp = self.app.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes();
        let v = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap_or(Value::Null) };
        (status, v)
    }

    pub async fn login(&self, user: &str) -> String {
        let (s, v) = self
            .call("POST", "/auth/login", None, Some(serde_json::json!({"username": user, "secret": secret(user)})))
            .await;
        assert_eq!(s, StatusCode::OK, "{v}");
        v["token"].as_str().unwrap().to_string()
    }
}
