//! Keyword similarity search and categorical facet filtering over uses.
//!
//! Facet selections combine by union within a facet and by intersection across
//! facets. A facet present with an empty value set matches nothing.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::domain::{normalize_label, Component, UseRecord};
use crate::embedding::{documents_for, dot, EmbedError, EmbeddingMatrix, TfidfModel};
use crate::text::words;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Facet {
    Domain,
    AiUser,
    AiSubject,
    Risk,
    Sdg,
}

impl Facet {
    pub const ALL: [Facet; 5] = [Facet::Domain, Facet::AiUser, Facet::AiSubject, Facet::Risk, Facet::Sdg];

    pub fn as_str(self) -> &'static str {
        match self {
            Facet::Domain => "domain",
            Facet::AiUser => "ai_user",
            Facet::AiSubject => "ai_subject",
            Facet::Risk => "risk",
            Facet::Sdg => "sdg",
        }
    }

    /// Canonical form of a value for this facet.
    pub fn normalize(self, value: &str) -> String {
        match self {
            Facet::Sdg => value
                .trim()
                .parse::<u8>()
                .map(|id| id.to_string())
                .unwrap_or_else(|_| normalize_label(value)),
            _ => normalize_label(value),
        }
    }

    fn values_of(self, u: &UseRecord) -> Vec<String> {
        match self {
            Facet::Domain => vec![normalize_label(&u.domain)],
            Facet::AiUser => vec![normalize_label(&u.ai_user)],
            Facet::AiSubject => vec![normalize_label(&u.ai_subject)],
            Facet::Risk => vec![u.risk.as_str().to_string()],
            Facet::Sdg => u.sdg_impacts.iter().map(|s| s.sdg_id.to_string()).collect(),
        }
    }
}

impl fmt::Display for Facet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Facet {
    type Err = SearchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Facet::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| SearchError::UnknownFacet(s.to_string()))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SearchError {
    #[error("unknown facet `{0}`")]
    UnknownFacet(String),
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

/// Facet → value → use ids.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FacetIndex {
    pub facets: BTreeMap<Facet, BTreeMap<String, BTreeSet<String>>>,
}

impl FacetIndex {
    pub fn build(uses: &[UseRecord]) -> Self {
        let mut facets: BTreeMap<Facet, BTreeMap<String, BTreeSet<String>>> = BTreeMap::new();
        for u in uses {
            for facet in Facet::ALL {
                for value in facet.values_of(u) {
                    facets
                        .entry(facet)
                        .or_default()
                        .entry(value)
                        .or_default()
                        .insert(u.use_id.clone());
                }
            }
        }
        Self { facets }
    }

    /// Number of uses per value, keyed by facet name.
    pub fn counts(&self) -> BTreeMap<String, BTreeMap<String, usize>> {
        self.facets
            .iter()
            .map(|(f, values)| {
                (
                    f.as_str().to_string(),
                    values.iter().map(|(v, ids)| (v.clone(), ids.len())).collect(),
                )
            })
            .collect()
    }

    pub fn ids(&self, facet: Facet, value: &str) -> Option<&BTreeSet<String>> {
        self.facets.get(&facet).and_then(|m| m.get(value))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub use_id: String,
    pub score: f64,
    pub matched_terms: Vec<String>,
}

/// Immutable after construction; safe to share across threads.
#[derive(Debug, Clone)]
pub struct SearchIndex {
    use_ids: Vec<String>,
    terms: Vec<HashSet<String>>,
    tfidf: Option<(TfidfModel, EmbeddingMatrix)>,
    facets: FacetIndex,
}

/// Builds facets and a TF-IDF space over the documents of `uses` (all five components).
pub fn build_index(uses: &[UseRecord]) -> Result<SearchIndex, SearchError> {
    let documents = documents_for(uses, &Component::ALL);
    let tfidf = if documents.is_empty() {
        None
    } else {
        Some(TfidfModel::fit(&documents)?)
    };
    Ok(SearchIndex {
        use_ids: uses.iter().map(|u| u.use_id.clone()).collect(),
        terms: documents.iter().map(|d| words(&d.text).into_iter().collect()).collect(),
        tfidf,
        facets: FacetIndex::build(uses),
    })
}

impl SearchIndex {
    pub fn facets(&self) -> &FacetIndex {
        &self.facets
    }

    pub fn use_ids(&self) -> &[String] {
        &self.use_ids
    }

    /// Ranked by cosine similarity in the corpus TF-IDF space, then by use id.
    /// Hits scoring zero or less are dropped.
    pub fn search(&self, query: &str, limit: usize) -> Vec<SearchHit> {
        let Some((model, matrix)) = &self.tfidf else {
            return vec![];
        };
        let Some(q) = model.vectorize(query) else {
            return vec![];
        };
        let mut query_terms: Vec<String> = Vec::new();
        for t in words(query) {
            if !query_terms.contains(&t) {
                query_terms.push(t);
            }
        }
        let mut hits: Vec<SearchHit> = matrix
            .vectors
            .iter()
            .enumerate()
            .filter_map(|(row, v)| {
                let score = dot(&q, v).min(1.0);
                (score > 0.0).then(|| SearchHit {
                    use_id: self.use_ids[row].clone(),
                    score,
                    matched_terms: query_terms
                        .iter()
                        .filter(|t| self.terms[row].contains(*t))
                        .cloned()
                        .collect(),
                })
            })
            .collect();
        hits.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.use_id.cmp(&b.use_id)));
        hits.truncate(limit);
        hits
    }

    /// Use ids matching `selections` (facet name → accepted values).
    pub fn filter(&self, selections: &BTreeMap<String, BTreeSet<String>>) -> Result<BTreeSet<String>, SearchError> {
        let mut result: BTreeSet<String> = self.use_ids.iter().cloned().collect();
        for (name, values) in selections {
            let facet: Facet = name.parse()?;
            let mut matched = BTreeSet::new();
            for v in values {
                if let Some(ids) = self.facets.ids(facet, &facet.normalize(v)) {
                    matched.extend(ids.iter().cloned());
                }
            }
            result = result.intersection(&matched).cloned().collect();
        }
        Ok(result)
    }
}
