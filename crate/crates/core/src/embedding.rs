//! Fixed-length, unit-norm vectors per use.
//!
//! Two providers: a self-contained TF-IDF model (offline and deterministic)
//! and an external HTTP embedding service for sentence-level models.

use std::collections::HashMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::domain::{Component, UseRecord};
use crate::text::words;

/// Maximum number of documents per request to an external provider.
pub const EXTERNAL_BATCH_SIZE: usize = 32;

/// Tolerance on the unit-norm check when loading a matrix.
pub const NORM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, thiserror::Error)]
pub enum EmbedError {
    #[error("no documents to embed")]
    NoDocuments,
    #[error("document {index} (`{id}`) has no tokens")]
    EmptyDocument { index: usize, id: String },
    #[error("embedding endpoint unreachable after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("embedding endpoint protocol error: {0}")]
    Protocol(String),
    #[error("row {row} (`{id}`) is a zero vector")]
    ZeroVector { row: usize, id: String },
    #[error("row {row} (`{id}`) has a non-finite entry")]
    NonFinite { row: usize, id: String },
    #[error("invalid embedding configuration: {0}")]
    Config(String),
    #[error("invalid embedding matrix: {0}")]
    InvalidMatrix(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provider {
    Tfidf,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingConfig {
    pub provider: Provider,
    #[serde(default)]
    pub external_url: Option<String>,
    /// Expected dimensionality from an external provider; checked when set.
    #[serde(default)]
    pub dimensions: Option<usize>,
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default = "all_components")]
    pub text_fields: Vec<Component>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
}

fn all_components() -> Vec<Component> {
    Component::ALL.to_vec()
}

fn default_timeout() -> u64 {
    60
}

fn default_retries() -> u32 {
    3
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            provider: Provider::Tfidf,
            external_url: None,
            dimensions: None,
            model: None,
            text_fields: all_components(),
            timeout_secs: default_timeout(),
            max_retries: default_retries(),
        }
    }
}

impl EmbeddingConfig {
    pub fn validate(&self) -> Result<(), EmbedError> {
        if self.text_fields.is_empty() {
            return Err(EmbedError::Config("text_fields is empty".into()));
        }
        if self.provider == Provider::External {
            let url = self
                .external_url
                .as_deref()
                .ok_or_else(|| EmbedError::Config("external provider requires a url".into()))?;
            url::Url::parse(url).map_err(|e| EmbedError::Config(format!("url `{url}`: {e}")))?;
        }
        if self.dimensions == Some(0) {
            return Err(EmbedError::Config("dimensions must be positive".into()));
        }
        Ok(())
    }
}

/// Text embedded for one use.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub id: String,
    pub text: String,
}

/// Joins the configured components in canonical order with `". "`, lowercased.
pub fn build_document(record: &UseRecord, fields: &[Component]) -> String {
    Component::ALL
        .iter()
        .filter(|c| fields.contains(c))
        .map(|c| record.component(*c).trim())
        .collect::<Vec<_>>()
        .join(". ")
        .to_lowercase()
}

pub fn documents_for(uses: &[UseRecord], fields: &[Component]) -> Vec<Document> {
    uses.iter()
        .map(|u| Document {
            id: u.use_id.clone(),
            text: build_document(u, fields),
        })
        .collect()
}

/// N rows of unit L2 norm, one per `row_ids` entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingMatrix {
    pub row_ids: Vec<String>,
    pub dims: usize,
    pub vectors: Vec<Vec<f64>>,
}

impl EmbeddingMatrix {
    pub fn empty(dims: usize) -> Self {
        Self {
            row_ids: vec![],
            dims,
            vectors: vec![],
        }
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Checks shape, finiteness, unit norms and unique ids.
    pub fn validate(&self) -> Result<(), EmbedError> {
        if self.row_ids.len() != self.vectors.len() {
            return Err(EmbedError::InvalidMatrix(format!(
                "{} row ids for {} vectors",
                self.row_ids.len(),
                self.vectors.len()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for (row, (id, v)) in self.row_ids.iter().zip(&self.vectors).enumerate() {
            if !seen.insert(id) {
                return Err(EmbedError::InvalidMatrix(format!("duplicate row id `{id}`")));
            }
            if v.len() != self.dims {
                return Err(EmbedError::InvalidMatrix(format!(
                    "row {row} has {} entries, expected {}",
                    v.len(),
                    self.dims
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(EmbedError::NonFinite { row, id: id.clone() });
            }
            let norm = l2_norm(v);
            if norm == 0.0 {
                return Err(EmbedError::ZeroVector { row, id: id.clone() });
            }
            if (norm - 1.0).abs() > NORM_TOLERANCE {
                return Err(EmbedError::InvalidMatrix(format!("row {row} has norm {norm}")));
            }
        }
        Ok(())
    }

    pub fn cosine(&self, i: usize, j: usize) -> f64 {
        dot(&self.vectors[i], &self.vectors[j])
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Normalizes rows in place; reports the first zero or non-finite row.
fn normalize_rows(row_ids: &[String], vectors: &mut [Vec<f64>]) -> Result<(), EmbedError> {
    for (row, v) in vectors.iter_mut().enumerate() {
        if v.iter().any(|x| !x.is_finite()) {
            return Err(EmbedError::NonFinite {
                row,
                id: row_ids[row].clone(),
            });
        }
        let norm = l2_norm(v);
        if norm == 0.0 {
            return Err(EmbedError::ZeroVector {
                row,
                id: row_ids[row].clone(),
            });
        }
        v.iter_mut().for_each(|x| *x /= norm);
    }
    Ok(())
}

/// Vocabulary and smoothed inverse document frequencies of a corpus.
///
/// `idf(t) = ln((1 + N) / (1 + df(t))) + 1`, term frequency is the raw count,
/// and the vocabulary is ordered by first appearance.
#[derive(Debug, Clone, PartialEq)]
pub struct TfidfModel {
    vocabulary: Vec<String>,
    index: HashMap<String, usize>,
    idf: Vec<f64>,
}

impl TfidfModel {
    pub fn fit(documents: &[Document]) -> Result<(Self, EmbeddingMatrix), EmbedError> {
        if documents.is_empty() {
            return Err(EmbedError::NoDocuments);
        }
        let tokenized: Vec<Vec<String>> = documents.iter().map(|d| words(&d.text)).collect();
        if let Some(index) = tokenized.iter().position(Vec::is_empty) {
            return Err(EmbedError::EmptyDocument {
                index,
                id: documents[index].id.clone(),
            });
        }

        let mut vocabulary = Vec::new();
        let mut index = HashMap::new();
        let mut df: Vec<usize> = Vec::new();
        for tokens in &tokenized {
            let mut seen_here = std::collections::HashSet::new();
            for t in tokens {
                let col = *index.entry(t.clone()).or_insert_with(|| {
                    vocabulary.push(t.clone());
                    df.push(0);
                    vocabulary.len() - 1
                });
                if seen_here.insert(col) {
                    df[col] += 1;
                }
            }
        }
        let n = documents.len() as f64;
        let idf = df
            .iter()
            .map(|&d| ((1.0 + n) / (1.0 + d as f64)).ln() + 1.0)
            .collect();
        let model = Self {
            vocabulary,
            index,
            idf,
        };
        let row_ids: Vec<String> = documents.iter().map(|d| d.id.clone()).collect();
        let mut vectors: Vec<Vec<f64>> = tokenized.iter().map(|t| model.weights(t)).collect();
        normalize_rows(&row_ids, &mut vectors)?;
        let matrix = EmbeddingMatrix {
            row_ids,
            dims: model.vocabulary.len(),
            vectors,
        };
        Ok((model, matrix))
    }

    fn weights(&self, tokens: &[String]) -> Vec<f64> {
        let mut v = vec![0.0; self.vocabulary.len()];
        for t in tokens {
            if let Some(&col) = self.index.get(t) {
                v[col] += 1.0;
            }
        }
        v.iter_mut().zip(&self.idf).for_each(|(x, idf)| *x *= idf);
        v
    }

    pub fn vocabulary(&self) -> &[String] {
        &self.vocabulary
    }

    pub fn idf(&self, term: &str) -> Option<f64> {
        self.index.get(term).map(|&col| self.idf[col])
    }

    /// Unit-norm vector for `text` in this corpus space. Unknown terms are
    /// ignored; `None` when no term is known.
    pub fn vectorize(&self, text: &str) -> Option<Vec<f64>> {
        let mut v = self.weights(&words(text));
        let norm = l2_norm(&v);
        if norm == 0.0 {
            return None;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        Some(v)
    }
}

pub fn embed_tfidf(documents: &[Document]) -> Result<EmbeddingMatrix, EmbedError> {
    TfidfModel::fit(documents).map(|(_, m)| m)
}

/// Embeds through an HTTP service.
///
/// Request body: `{"input": [texts], "model": name?}`. The reply may be either
/// `{"data": [{"embedding": [..], "index": i}, ..]}` or `{"embeddings": [[..], ..]}`.
pub fn embed_external(documents: &[Document], config: &EmbeddingConfig) -> Result<EmbeddingMatrix, EmbedError> {
    config.validate()?;
    let url = config.external_url.as_deref().unwrap_or_default();
    if documents.is_empty() {
        return Ok(EmbeddingMatrix::empty(config.dimensions.unwrap_or(0)));
    }
    let http = reqwest::blocking::Client::builder()
        .timeout(Duration::from_secs(config.timeout_secs))
        .build()
        .map_err(|e| EmbedError::Config(e.to_string()))?;

    let mut vectors: Vec<Vec<f64>> = Vec::with_capacity(documents.len());
    let mut dims = config.dimensions;
    for (batch_no, batch) in documents.chunks(EXTERNAL_BATCH_SIZE).enumerate() {
        let texts: Vec<&str> = batch.iter().map(|d| d.text.as_str()).collect();
        let mut body = serde_json::json!({ "input": texts });
        if let Some(model) = &config.model {
            body["model"] = serde_json::Value::String(model.clone());
        }
        let reply = post_with_retries(&http, url, &body, config.max_retries)?;
        let rows = parse_embedding_reply(&reply)?;
        if rows.len() != batch.len() {
            return Err(EmbedError::Protocol(format!(
                "batch {batch_no}: sent {} documents, received {} vectors",
                batch.len(),
                rows.len()
            )));
        }
        for row in rows {
            let expected = *dims.get_or_insert(row.len());
            if row.len() != expected {
                return Err(EmbedError::Protocol(format!(
                    "batch {batch_no}: vector of dimension {} where {expected} was expected",
                    row.len()
                )));
            }
            vectors.push(row);
        }
    }
    let row_ids: Vec<String> = documents.iter().map(|d| d.id.clone()).collect();
    normalize_rows(&row_ids, &mut vectors)?;
    Ok(EmbeddingMatrix {
        row_ids,
        dims: dims.unwrap_or(0),
        vectors,
    })
}

fn post_with_retries(
    http: &reqwest::blocking::Client,
    url: &str,
    body: &serde_json::Value,
    max_retries: u32,
) -> Result<serde_json::Value, EmbedError> {
    let mut attempts = 0;
    loop {
        attempts += 1;
        let result = http
            .post(url)
            .json(body)
            .send()
            .map_err(|e| (true, e.to_string()))
            .and_then(|r| {
                let status = r.status();
                if status.is_success() {
                    r.json::<serde_json::Value>().map_err(|e| (false, e.to_string()))
                } else {
                    Err((
                        status.is_server_error() || status.as_u16() == 429,
                        format!("endpoint returned {status}"),
                    ))
                }
            });
        match result {
            Ok(v) => return Ok(v),
            Err((true, message)) if attempts <= max_retries => {
                tracing::warn!(attempts, %message, "embedding request failed, retrying");
                std::thread::sleep(Duration::from_millis(100 * u64::from(attempts)));
            }
            Err((_, message)) => return Err(EmbedError::Transport { attempts, message }),
        }
    }
}

fn parse_embedding_reply(reply: &serde_json::Value) -> Result<Vec<Vec<f64>>, EmbedError> {
    let as_vector = |v: &serde_json::Value| -> Result<Vec<f64>, EmbedError> {
        v.as_array()
            .ok_or_else(|| EmbedError::Protocol("embedding is not an array".into()))?
            .iter()
            .map(|x| {
                x.as_f64()
                    .ok_or_else(|| EmbedError::Protocol("embedding entry is not a number".into()))
            })
            .collect()
    };
    if let Some(data) = reply.get("data").and_then(|d| d.as_array()) {
        let mut rows: Vec<(usize, Vec<f64>)> = data
            .iter()
            .enumerate()
            .map(|(pos, item)| {
                let index = item
                    .get("index")
                    .and_then(|i| i.as_u64())
                    .map_or(pos, |i| i as usize);
                let embedding = item
                    .get("embedding")
                    .ok_or_else(|| EmbedError::Protocol("data item without `embedding`".into()))?;
                Ok((index, as_vector(embedding)?))
            })
            .collect::<Result<_, EmbedError>>()?;
        rows.sort_by_key(|(i, _)| *i);
        return Ok(rows.into_iter().map(|(_, v)| v).collect());
    }
    if let Some(list) = reply.get("embeddings").and_then(|d| d.as_array()) {
        return list.iter().map(as_vector).collect();
    }
    Err(EmbedError::Protocol(
        "reply has neither `data` nor `embeddings`".into(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::RiskTier;

    fn docs(texts: &[&str]) -> Vec<Document> {
        texts
            .iter()
            .enumerate()
            .map(|(i, t)| Document {
                id: format!("d{i}"),
                text: t.to_string(),
            })
            .collect()
    }

    fn speedcam() -> UseRecord {
        UseRecord {
            use_id: "use-001".into(),
            incident_ids: vec![264],
            domain: "Law enforcement".into(),
            purpose: "Documenting and reporting traffic violations from video data".into(),
            capability: "Estimating vehicle speed from video data".into(),
            ai_user: "mobile app users".into(),
            ai_subject: "drivers".into(),
            risk: RiskTier::High,
            sdg_impacts: vec![],
            incident_examples: vec!["x".into()],
            benefit_examples: vec![],
        }
    }

    #[test]
    fn speedcam_document() {
        assert_eq!(
            build_document(&speedcam(), &Component::ALL),
            "law enforcement. documenting and reporting traffic violations from video data. \
             estimating vehicle speed from video data. mobile app users. drivers"
        );
    }

    #[test]
    fn single_field_document() {
        assert_eq!(
            build_document(&speedcam(), &[Component::Purpose]),
            "documenting and reporting traffic violations from video data"
        );
        // Configured order does not matter; canonical order does.
        assert_eq!(
            build_document(&speedcam(), &[Component::AiSubject, Component::Domain]),
            "law enforcement. drivers"
        );
    }

    #[test]
    fn identical_documents_have_unit_cosine() {
        let m = embed_tfidf(&docs(&["phone camera speed", "phone camera speed"])).unwrap();
        assert!((m.cosine(0, 1) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn disjoint_documents_are_orthogonal() {
        let m = embed_tfidf(&docs(&["alpha beta", "gamma delta"])).unwrap();
        assert!(m.cosine(0, 1).abs() < 1e-12);
        m.validate().unwrap();
    }

    #[test]
    fn empty_document_is_named() {
        match embed_tfidf(&docs(&["ok", " ... "])) {
            Err(EmbedError::EmptyDocument { index, id }) => {
                assert_eq!(index, 1);
                assert_eq!(id, "d1");
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(embed_tfidf(&[]), Err(EmbedError::NoDocuments)));
    }

    #[test]
    fn vectorize_ignores_unknown_terms() {
        let (model, m) = TfidfModel::fit(&docs(&["a b", "a c"])).unwrap();
        assert_eq!(model.vocabulary(), ["a", "b", "c"]);
        assert!(model.vectorize("zzqx").is_none());
        let q = model.vectorize("b zzqx").unwrap();
        assert!(dot(&q, &m.vectors[0]) > 0.0);
        assert_eq!(dot(&q, &m.vectors[1]), 0.0);
    }

    #[test]
    fn matrix_validation_catches_bad_rows() {
        let mut m = embed_tfidf(&docs(&["a b", "a c"])).unwrap();
        m.vectors[1][0] = f64::NAN;
        assert!(matches!(m.validate(), Err(EmbedError::NonFinite { row: 1, .. })));
        let mut m = embed_tfidf(&docs(&["a b", "a c"])).unwrap();
        m.vectors[0] = vec![0.0; m.dims];
        assert!(matches!(m.validate(), Err(EmbedError::ZeroVector { row: 0, .. })));
        let mut m = embed_tfidf(&docs(&["a b", "a c"])).unwrap();
        m.row_ids[1] = "d0".into();
        assert!(m.validate().is_err());
    }

    #[test]
    fn reply_shapes() {
        let openai = serde_json::json!({"data": [
            {"index": 1, "embedding": [0.0, 1.0]},
            {"index": 0, "embedding": [1.0, 0.0]}
        ]});
        assert_eq!(parse_embedding_reply(&openai).unwrap(), vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let plain = serde_json::json!({"embeddings": [[3.0, 4.0]]});
        assert_eq!(parse_embedding_reply(&plain).unwrap(), vec![vec![3.0, 4.0]]);
        assert!(parse_embedding_reply(&serde_json::json!({"x": 1})).is_err());
    }

    #[test]
    fn external_config_requires_url() {
        let config = EmbeddingConfig {
            provider: Provider::External,
            ..EmbeddingConfig::default()
        };
        assert!(config.validate().is_err());
        let config = EmbeddingConfig {
            text_fields: vec![],
            ..EmbeddingConfig::default()
        };
        assert!(config.validate().is_err());
    }

    #[test]
    fn external_empty_input_makes_no_request() {
        let config = EmbeddingConfig {
            provider: Provider::External,
            external_url: Some("http://127.0.0.1:9/embed".into()),
            dimensions: Some(4),
            ..EmbeddingConfig::default()
        };
        let m = embed_external(&[], &config).unwrap();
        assert_eq!((m.len(), m.dims), (0, 4));
    }
}
