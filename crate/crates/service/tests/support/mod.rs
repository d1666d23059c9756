#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;

use atlas_service::pipeline;
use atlas_service::server::{router, AppState};
use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use tower::ServiceExt;

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

/// Runs the bundled pipeline into `dir` and returns the atlas path.
pub fn build_atlas(dir: &Path) -> PathBuf {
    pipeline::run_file(&fixtures().join("pipeline.toml"), Some(dir))
        .unwrap()
        .artifacts
        .atlas
}

pub fn app(atlas: &Path) -> Router {
    router(Arc::new(AppState::load(atlas).unwrap()), None)
}

pub async fn get(app: &Router, uri: &str) -> (StatusCode, String) {
    let response = app
        .clone()
        .oneshot(Request::get(uri).body(Body::empty()).unwrap())
        .await
        .unwrap();
    let status = response.status();
    let bytes = response.into_body().collect().await.unwrap().to_bytes();
    (status, String::from_utf8(bytes.to_vec()).unwrap())
}

pub fn json(body: &str) -> serde_json::Value {
    serde_json::from_str(body).unwrap()
}
