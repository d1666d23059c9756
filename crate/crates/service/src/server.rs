//! Read-only HTTP API over one atlas file.

use std::collections::{BTreeMap, BTreeSet};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{Context, Result};
use atlas_core::atlas::{canonical_json, load_atlas, AtlasDocument};
use atlas_core::search::{build_index, Facet, SearchIndex};
use axum::extract::{Path as UrlPath, RawQuery, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::Router;
use serde_json::{json, Value};
use tower_http::services::ServeDir;

pub const DEFAULT_SEARCH_LIMIT: usize = 10;

/// Everything the handlers read. Built once at startup.
pub struct AppState {
    doc: AtlasDocument,
    atlas_body: String,
    index: SearchIndex,
}

impl AppState {
    pub fn new(doc: AtlasDocument) -> Result<Self> {
        doc.validate()?;
        let index = build_index(&doc.use_records())?;
        Ok(Self {
            atlas_body: doc.to_canonical_json(),
            doc,
            index,
        })
    }

    /// Loads and validates the atlas; any problem is a startup error.
    pub fn load(path: &Path) -> Result<Self> {
        let doc = load_atlas(path).with_context(|| format!("loading atlas {}", path.display()))?;
        Self::new(doc)
    }

    pub fn document(&self) -> &AtlasDocument {
        &self.doc
    }
}

pub fn router(state: Arc<AppState>, static_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/api/atlas", get(atlas))
        .route("/api/uses/{id}", get(use_by_id))
        .route("/api/search", get(search))
        .route("/api/filter", get(filter))
        .route("/api/facets", get(facets))
        .route("/api/{*rest}", get(unknown_endpoint))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

fn json_body(status: StatusCode, body: String) -> Response {
    (status, [(header::CONTENT_TYPE, "application/json")], body).into_response()
}

fn ok(value: &Value) -> Response {
    json_body(StatusCode::OK, canonical_json(value))
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    json_body(status, canonical_json(&json!({ "error": message.into() })))
}

async fn atlas(State(state): State<Arc<AppState>>) -> Response {
    json_body(StatusCode::OK, state.atlas_body.clone())
}

async fn use_by_id(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Response {
    match state.doc.find(&id) {
        Some(u) => ok(&serde_json::to_value(u).expect("use serializes")),
        None => error(StatusCode::NOT_FOUND, format!("no use with id `{id}`")),
    }
}

fn query_pairs(raw: Option<&str>) -> Vec<(String, String)> {
    url::form_urlencoded::parse(raw.unwrap_or("").as_bytes())
        .into_owned()
        .collect()
}

async fn search(State(state): State<Arc<AppState>>, RawQuery(raw): RawQuery) -> Response {
    let mut query = String::new();
    let mut limit = DEFAULT_SEARCH_LIMIT;
    for (key, value) in query_pairs(raw.as_deref()) {
        match key.as_str() {
            "q" => query = value,
            "limit" => match value.trim().parse::<usize>() {
                Ok(n) if n > 0 => limit = n,
                _ => {
                    return error(
                        StatusCode::BAD_REQUEST,
                        format!("limit must be a positive integer, got `{value}`"),
                    )
                }
            },
            other => return error(StatusCode::BAD_REQUEST, format!("unknown parameter `{other}`")),
        }
    }
    let hits = state.index.search(&query, limit);
    ok(&json!({ "query": query, "hits": hits }))
}

/// `?risk=low&risk=high&sdg=3`: repeated keys add values to one facet.
async fn filter(State(state): State<Arc<AppState>>, RawQuery(raw): RawQuery) -> Response {
    let mut selections: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for (key, value) in query_pairs(raw.as_deref()) {
        if key.parse::<Facet>().is_err() {
            return error(StatusCode::BAD_REQUEST, format!("unknown facet `{key}`"));
        }
        if value.trim().is_empty() {
            return error(StatusCode::BAD_REQUEST, format!("empty value for facet `{key}`"));
        }
        selections.entry(key).or_default().insert(value);
    }
    match state.index.filter(&selections) {
        Ok(ids) => ok(&json!({ "count": ids.len(), "use_ids": ids })),
        Err(e) => error(StatusCode::BAD_REQUEST, e.to_string()),
    }
}

async fn facets(State(state): State<Arc<AppState>>) -> Response {
    ok(&serde_json::to_value(&state.doc.facets).expect("facets serialize"))
}

async fn unknown_endpoint(UrlPath(rest): UrlPath<String>) -> Response {
    error(StatusCode::NOT_FOUND, format!("no endpoint /api/{rest}"))
}

#[derive(Debug, Clone)]
pub struct ServeConfig {
    pub atlas: PathBuf,
    pub host: String,
    pub port: u16,
    pub static_dir: Option<PathBuf>,
}

pub async fn serve(config: ServeConfig) -> Result<()> {
    let state = Arc::new(AppState::load(&config.atlas)?);
    if let Some(dir) = &config.static_dir {
        anyhow::ensure!(dir.is_dir(), "static directory {} does not exist", dir.display());
    }
    let app = router(state.clone(), config.static_dir.as_deref());
    let addr: SocketAddr = format!("{}:{}", config.host, config.port)
        .parse()
        .with_context(|| format!("bad listen address {}:{}", config.host, config.port))?;
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .with_context(|| format!("binding {addr}"))?;
    tracing::info!(
        address = %listener.local_addr()?,
        uses = state.document().uses.len(),
        "serving atlas"
    );
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
