mod support;

use std::collections::BTreeSet;

use atlas_core::atlas::AtlasDocument;
use axum::http::StatusCode;
use support::{get, json};

fn setup() -> (tempfile::TempDir, std::path::PathBuf, axum::Router) {
    let dir = tempfile::tempdir().unwrap();
    let atlas = support::build_atlas(dir.path());
    let app = support::app(&atlas);
    (dir, atlas, app)
}

#[tokio::test]
async fn atlas_endpoint_returns_the_file_bytes() {
    let (_dir, atlas, app) = setup();
    let (status, body) = get(&app, "/api/atlas").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, std::fs::read_to_string(&atlas).unwrap());
    let doc = AtlasDocument::from_json(&body).unwrap();
    assert_eq!(doc.uses.len(), 12);
    assert_eq!(doc.narrative.len(), 4);
}

#[tokio::test]
async fn use_card_payload() {
    let (_dir, _atlas, app) = setup();
    let (status, body) = get(&app, "/api/uses/use-001").await;
    assert_eq!(status, StatusCode::OK);
    assert!(body.contains("Estimating vehicle speed from video data"));
    let v = json(&body);
    for field in ["x", "y", "risk", "sdg_impacts", "incident_examples", "benefit_examples", "incident_ids"] {
        assert!(v.get(field).is_some(), "missing {field}");
    }

    let (_, body) = get(&app, "/api/uses/use-002").await;
    assert!(body.contains("For You feed linked to disinformation about the Ukraine war"));

    let (status, body) = get(&app, "/api/uses/use-999").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert!(json(&body)["error"].as_str().unwrap().contains("use-999"));
}

#[tokio::test]
async fn search_endpoint() {
    let (_dir, _atlas, app) = setup();
    let (status, body) = get(&app, "/api/search?q=").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(json(&body)["hits"], serde_json::json!([]));

    let (_, body) = get(&app, "/api/search").await;
    assert_eq!(json(&body)["hits"], serde_json::json!([]));

    let (status, body) = get(&app, "/api/search?q=Estimating+vehicle+speed&limit=2").await;
    assert_eq!(status, StatusCode::OK);
    let v = json(&body);
    assert_eq!(v["query"], "Estimating vehicle speed");
    let hits = v["hits"].as_array().unwrap();
    assert!(hits.len() <= 2);
    assert_eq!(hits[0]["use_id"], "use-001");
    assert_eq!(hits[0]["matched_terms"], serde_json::json!(["estimating", "vehicle", "speed"]));

    for bad in ["/api/search?q=x&limit=0", "/api/search?q=x&limit=-3", "/api/search?q=x&limit=ten", "/api/search?query=x"] {
        let (status, body) = get(&app, bad).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{bad}");
        assert!(json(&body)["error"].is_string());
    }
}

#[tokio::test]
async fn filter_endpoint_matches_linear_scan() {
    let (_dir, atlas, app) = setup();
    let doc = AtlasDocument::from_json(&std::fs::read_to_string(atlas).unwrap()).unwrap();

    let (status, body) = get(&app, "/api/filter?risk=low").await;
    assert_eq!(status, StatusCode::OK);
    let v = json(&body);
    let got: BTreeSet<String> = serde_json::from_value(v["use_ids"].clone()).unwrap();
    let scan: BTreeSet<String> = doc
        .uses
        .iter()
        .filter(|u| u.record.risk.as_str() == "low")
        .map(|u| u.record.use_id.clone())
        .collect();
    assert_eq!(got, scan);
    assert_eq!(v["count"], 4);

    let (_, body) = get(&app, "/api/filter?risk=low&risk=unacceptable&sdg=16").await;
    let got: BTreeSet<String> = serde_json::from_value(json(&body)["use_ids"].clone()).unwrap();
    assert_eq!(got, BTreeSet::from(["use-004".to_string(), "use-007".to_string()]));

    let (_, body) = get(&app, "/api/filter?domain=Law%20Enforcement").await;
    assert_eq!(json(&body)["count"], 2);

    let (_, body) = get(&app, "/api/filter").await;
    assert_eq!(json(&body)["count"], 12);

    for bad in ["/api/filter?colour=red", "/api/filter?risk="] {
        let (status, _) = get(&app, bad).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{bad}");
    }
}

#[tokio::test]
async fn facets_and_unknown_routes() {
    let (_dir, _atlas, app) = setup();
    let (status, body) = get(&app, "/api/facets").await;
    assert_eq!(status, StatusCode::OK);
    let v = json(&body);
    assert_eq!(v["risk"]["high"], 6);
    assert_eq!(v["sdg"]["16"], 5);

    let (status, body) = get(&app, "/api/nothing/here").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert!(json(&body)["error"].is_string());
}

#[tokio::test]
async fn repeated_requests_are_identical() {
    let (_dir, atlas, app) = setup();
    let before = std::fs::read(&atlas).unwrap();
    for uri in ["/api/atlas", "/api/uses/use-003", "/api/search?q=phone", "/api/filter?sdg=3", "/api/facets"] {
        let first = get(&app, uri).await;
        for _ in 0..3 {
            assert_eq!(get(&app, uri).await, first, "{uri}");
        }
    }
    assert_eq!(std::fs::read(&atlas).unwrap(), before);
}

#[test]
fn corrupted_atlas_fails_at_startup() {
    let dir = tempfile::tempdir().unwrap();
    let atlas = support::build_atlas(dir.path());
    let text = std::fs::read_to_string(&atlas).unwrap();

    let cases = [
        text.replacen("\"risk\": \"high\"", "\"risk\": \"severe\"", 1),
        text.replacen("\"high\": 6", "\"high\": 7", 1),
        text.replacen("\"id\": \"map\"", "\"id\": \"risk\"", 1),
        text.replacen("\"#1b998b\"", "\"#fafafa\"", 1),
        text[..text.len() - 10].to_string(),
    ];
    for (k, bad) in cases.iter().enumerate() {
        assert_ne!(bad, &text, "case {k} did not change the file");
        let path = dir.path().join(format!("bad{k}.json"));
        std::fs::write(&path, bad).unwrap();
        assert!(atlas_service::server::AppState::load(&path).is_err(), "case {k} accepted");
    }
}

#[tokio::test]
async fn static_bundle_is_served_at_root() {
    let dir = tempfile::tempdir().unwrap();
    let atlas = support::build_atlas(dir.path());
    let web = dir.path().join("web");
    std::fs::create_dir(&web).unwrap();
    std::fs::write(web.join("index.html"), "<html>atlas</html>").unwrap();
    let state = std::sync::Arc::new(atlas_service::server::AppState::load(&atlas).unwrap());
    let app = atlas_service::server::router(state, Some(&web));
    let (status, body) = get(&app, "/").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, "<html>atlas</html>");
    let (status, _) = get(&app, "/api/facets").await;
    assert_eq!(status, StatusCode::OK);
}
