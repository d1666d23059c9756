//! Local HTTP servers for exercising the blocking clients.

#![allow(dead_code)]

use std::path::PathBuf;

/// Serves `router` on an ephemeral port from a background runtime and returns its base URL.
pub fn spawn(router: axum::Router) -> String {
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(1)
            .enable_all()
            .build()
            .unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            axum::serve(listener, router).await.unwrap();
        });
    });
    format!("http://{}", rx.recv().unwrap())
}

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

/// The bundled dataset built through ingest, replayed formatting and annotation merge.
pub fn fixture_dataset() -> atlas_core::domain::Dataset {
    use atlas_core::assessment::{merge_annotations, AnnotationFile};
    use atlas_core::formatter::{Formatter, FormatterConfig};
    use atlas_core::ingest::{deduplicate, filter_mobile, parse_incidents, IngestConfig, InputFormat};
    use chrono::TimeZone;

    let parsed = parse_incidents(
        std::fs::File::open(fixture("raw_incidents.json")).unwrap(),
        InputFormat::Json,
    )
    .unwrap();
    let kept: Vec<_> = filter_mobile(&deduplicate(parsed.records), &IngestConfig::new("unused"))
        .into_iter()
        .map(|f| f.incident)
        .collect();
    let mut formatter = Formatter::new(FormatterConfig::replay(fixture("formatter_cache.json"))).unwrap();
    let outcome = formatter.format_batch(&kept);
    assert!(outcome.failures.is_empty(), "{:?}", outcome.failures);
    let annotations: AnnotationFile =
        serde_json::from_str(&std::fs::read_to_string(fixture("annotations.json")).unwrap()).unwrap();
    merge_annotations(
        &outcome.drafts.drafts,
        &annotations,
        &outcome.drafts.incidents,
        chrono::Utc.with_ymd_and_hms(2024, 3, 1, 0, 0, 0).unwrap(),
        "fixture",
    )
    .unwrap()
}
