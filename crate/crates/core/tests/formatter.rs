mod support;

use std::sync::{Arc, Mutex};

use atlas_core::domain::IncidentRecord;
use atlas_core::formatter::{
    request_key, FormatError, Formatter, FormatterConfig, FormatterMode, FormatterResponseCache, API_KEY_ENV,
    DEFAULT_PROMPT_TEMPLATE,
};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};

fn incident(id: u64) -> IncidentRecord {
    IncidentRecord {
        incident_id: id,
        title: "Speed camera app fines drivers".into(),
        description: "A phone app estimated car speeds from video.".into(),
        date: None,
        source_urls: vec![],
    }
}

fn completion(text: &str) -> Response {
    Json(json!({"choices": [{"message": {"role": "assistant", "content": text}}]})).into_response()
}

const GOOD: &str = "Domain: Law enforcement\nPurpose: Reporting traffic violations\n\
    Capability: Estimating vehicle speed from video data\nAI user: mobile app users\nAI subject: drivers";

type RequestLog = Arc<Mutex<Vec<(HeaderMap, Value)>>>;

/// Replies with `script` in order, then repeats the last entry. Records every request.
fn scripted(script: Vec<(StatusCode, &'static str)>) -> (String, RequestLog) {
    let log = Arc::new(Mutex::new(Vec::new()));
    let seen = log.clone();
    let url = support::spawn(Router::new().route(
        "/v1/chat/completions",
        post(move |headers: HeaderMap, Json(body): Json<Value>| {
            let mut log = seen.lock().unwrap();
            log.push((headers, body));
            let (status, text) = script[(log.len() - 1).min(script.len() - 1)];
            async move {
                if status.is_success() {
                    completion(text)
                } else {
                    (status, "unavailable").into_response()
                }
            }
        }),
    ));
    (format!("{url}/v1/chat/completions"), log)
}

fn live(url: &str, cache: &std::path::Path) -> FormatterConfig {
    FormatterConfig {
        mode: FormatterMode::Live,
        endpoint_url: Some(url.into()),
        model_name: Some("test-model".into()),
        prompt_template: DEFAULT_PROMPT_TEMPLATE.into(),
        cache_path: cache.to_path_buf(),
        timeout_secs: 5,
        max_retries: 2,
    }
}

#[test]
fn live_run_is_cached_and_replays_identically() {
    std::env::set_var(API_KEY_ENV, "test-secret");
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("cache.json");
    let (url, log) = scripted(vec![(StatusCode::OK, GOOD)]);

    let mut f = Formatter::new(live(&url, &cache)).unwrap();
    let live_draft = f.format_incident(&incident(264)).unwrap();
    assert_eq!(live_draft.capability, "Estimating vehicle speed from video data");
    assert_eq!(live_draft.ai_subject, "drivers");
    // A second call is served from the cache.
    f.format_incident(&incident(264)).unwrap();
    {
        let log = log.lock().unwrap();
        assert_eq!(log.len(), 1);
        let (headers, body) = &log[0];
        assert_eq!(headers["authorization"], "Bearer test-secret");
        assert_eq!(body["model"], "test-model");
        assert_eq!(body["temperature"], 0);
        let prompt = body["messages"][0]["content"].as_str().unwrap();
        assert!(prompt.contains("Incident title: Speed camera app fines drivers"));
    }

    let stored = FormatterResponseCache::load(&cache).unwrap();
    assert_eq!(stored.get(&request_key(264, DEFAULT_PROMPT_TEMPLATE)), Some(GOOD));

    let mut replay = Formatter::new(FormatterConfig::replay(&cache)).unwrap();
    assert_eq!(replay.format_incident(&incident(264)).unwrap(), live_draft);
    assert!(matches!(
        replay.format_incident(&incident(265)),
        Err(FormatError::CacheMiss { incident_id: 265, .. })
    ));
}

#[test]
fn unparseable_answer_gets_one_reprompt() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("cache.json");
    let (url, log) = scripted(vec![(StatusCode::OK, "Sure! Here it is."), (StatusCode::OK, GOOD)]);
    let mut f = Formatter::new(live(&url, &cache)).unwrap();
    f.format_incident(&incident(7)).unwrap();
    let log = log.lock().unwrap();
    assert_eq!(log.len(), 2);
    assert_eq!(log[1].1["messages"].as_array().unwrap().len(), 3);
    // Only the answer that produced the draft is kept.
    assert_eq!(f.cache().get(&request_key(7, DEFAULT_PROMPT_TEMPLATE)), Some(GOOD));
}

#[test]
fn second_bad_answer_is_a_format_error_with_raw_text() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("cache.json");
    let (url, _) = scripted(vec![(StatusCode::OK, "Domain: only this")]);
    let mut f = Formatter::new(live(&url, &cache)).unwrap();
    match f.format_incident(&incident(8)) {
        Err(FormatError::Parse { raw, .. }) => assert_eq!(raw, "Domain: only this"),
        other => panic!("expected parse error, got {other:?}"),
    }
    assert!(f.cache().entries.is_empty());
}

#[test]
fn server_errors_are_retried_then_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("cache.json");

    let (url, log) = scripted(vec![(StatusCode::SERVICE_UNAVAILABLE, ""), (StatusCode::OK, GOOD)]);
    let mut f = Formatter::new(live(&url, &cache)).unwrap();
    f.format_incident(&incident(9)).unwrap();
    assert_eq!(log.lock().unwrap().len(), 2);

    let (url, log) = scripted(vec![(StatusCode::BAD_GATEWAY, "")]);
    let mut f = Formatter::new(live(&url, &dir.path().join("other.json"))).unwrap();
    assert!(matches!(
        f.format_incident(&incident(9)),
        Err(FormatError::Transport { attempts: 3, .. })
    ));
    assert_eq!(log.lock().unwrap().len(), 3);

    let (url, log) = scripted(vec![(StatusCode::BAD_REQUEST, "")]);
    let mut f = Formatter::new(live(&url, &dir.path().join("third.json"))).unwrap();
    assert!(f.format_incident(&incident(9)).is_err());
    assert_eq!(log.lock().unwrap().len(), 1);
}

#[test]
fn fixture_cache_parses_to_hand_read_components() {
    let mut f = Formatter::new(FormatterConfig::replay(support::fixture("formatter_cache.json"))).unwrap();
    let draft = f.format_incident(&incident(264)).unwrap();
    // Read off the cached text by hand.
    assert_eq!(draft.domain, "Law enforcement");
    assert_eq!(draft.purpose, "Documenting and reporting traffic violations from video data");
    assert_eq!(draft.capability, "Estimating vehicle speed from video data");
    assert_eq!(draft.ai_user, "mobile app users");
    assert_eq!(draft.ai_subject, "drivers");
    // Markdown-bolded labels.
    let tiktok = f.format_incident(&incident(301)).unwrap();
    assert_eq!(tiktok.ai_user, "TikTok");
    assert_eq!(tiktok.capability, "Ranking videos from viewing behavior");
    // Bulleted labels with different capitalization.
    let face = f.format_incident(&incident(315)).unwrap();
    assert_eq!(face.ai_subject, "phone owners");
}

#[test]
fn batch_assigns_ids_to_successes_only() {
    let mut f = Formatter::new(FormatterConfig::replay(support::fixture("formatter_cache.json"))).unwrap();
    let out = f.format_batch(&[incident(264), incident(999), incident(301)]);
    let ids: Vec<&str> = out.drafts.drafts.iter().map(|d| d.use_id.as_str()).collect();
    assert_eq!(ids, ["use-001", "use-002"]);
    assert_eq!(out.drafts.drafts[0].domain, "law enforcement");
    assert_eq!(out.failures.len(), 1);
    assert_eq!((out.failures[0].index, out.failures[0].incident_id), (1, 999));
}
