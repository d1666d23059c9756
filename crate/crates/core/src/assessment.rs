//! Merges expert risk and SDG annotations into reviewed drafts.

use std::collections::{BTreeSet, HashMap, HashSet};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::domain::{
    validate_dataset, Dataset, IncidentRecord, RiskTier, SdgImpact, UseDraft, UseRecord, ValidationReport,
};

/// Consensus annotation for one use.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationEntry {
    pub use_id: String,
    pub risk: RiskTier,
    #[serde(default)]
    pub sdg_impacts: Vec<SdgImpact>,
    pub incident_examples: Vec<String>,
    #[serde(default)]
    pub benefit_examples: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationFile {
    pub entries: Vec<AnnotationEntry>,
}

/// Drafts and annotations that could not be paired.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReconciliationReport {
    pub drafts_without_annotation: Vec<String>,
    pub annotations_without_draft: Vec<String>,
    pub duplicate_draft_ids: Vec<String>,
    pub duplicate_annotation_ids: Vec<String>,
}

impl ReconciliationReport {
    pub fn is_clean(&self) -> bool {
        self.drafts_without_annotation.is_empty()
            && self.annotations_without_draft.is_empty()
            && self.duplicate_draft_ids.is_empty()
            && self.duplicate_annotation_ids.is_empty()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum AssessError {
    #[error(
        "drafts and annotations do not match: {} draft(s) unannotated, {} annotation(s) without draft, \
         {} duplicate draft id(s), {} duplicate annotation id(s)",
        .0.drafts_without_annotation.len(),
        .0.annotations_without_draft.len(),
        .0.duplicate_draft_ids.len(),
        .0.duplicate_annotation_ids.len()
    )]
    Reconciliation(ReconciliationReport),
    #[error("merged dataset is invalid: {0}")]
    Validation(ValidationReport),
}

fn duplicates<'a>(ids: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut seen = HashSet::new();
    let mut dup = BTreeSet::new();
    for id in ids {
        if !seen.insert(id) {
            dup.insert(id.to_string());
        }
    }
    dup.into_iter().collect()
}

/// Pairs every draft with its annotation by `use_id` and builds a validated
/// [`Dataset`]. Draft text is copied unchanged; annotations only add fields.
pub fn merge_annotations(
    drafts: &[UseDraft],
    annotations: &AnnotationFile,
    incidents: &[IncidentRecord],
    created_at: DateTime<Utc>,
    source_snapshot: &str,
) -> Result<Dataset, AssessError> {
    let by_id: HashMap<&str, &AnnotationEntry> = annotations
        .entries
        .iter()
        .map(|e| (e.use_id.as_str(), e))
        .collect();
    let draft_ids: HashSet<&str> = drafts.iter().map(|d| d.use_id.as_str()).collect();

    let report = ReconciliationReport {
        drafts_without_annotation: drafts
            .iter()
            .filter(|d| !by_id.contains_key(d.use_id.as_str()))
            .map(|d| d.use_id.clone())
            .collect(),
        annotations_without_draft: annotations
            .entries
            .iter()
            .filter(|e| !draft_ids.contains(e.use_id.as_str()))
            .map(|e| e.use_id.clone())
            .collect(),
        duplicate_draft_ids: duplicates(drafts.iter().map(|d| d.use_id.as_str())),
        duplicate_annotation_ids: duplicates(annotations.entries.iter().map(|e| e.use_id.as_str())),
    };
    if !report.is_clean() {
        return Err(AssessError::Reconciliation(report));
    }

    let uses = drafts
        .iter()
        .map(|d| {
            let a = by_id[d.use_id.as_str()];
            UseRecord {
                use_id: d.use_id.clone(),
                incident_ids: d.incident_ids.clone(),
                domain: d.domain.clone(),
                purpose: d.purpose.clone(),
                capability: d.capability.clone(),
                ai_user: d.ai_user.clone(),
                ai_subject: d.ai_subject.clone(),
                risk: a.risk,
                sdg_impacts: a.sdg_impacts.clone(),
                incident_examples: a.incident_examples.clone(),
                benefit_examples: a.benefit_examples.clone(),
            }
        })
        .collect();
    let dataset = Dataset {
        uses,
        incidents: incidents.to_vec(),
        created_at,
        source_snapshot: source_snapshot.to_string(),
    };
    let validation = validate_dataset(&dataset);
    if !validation.is_valid() {
        return Err(AssessError::Validation(validation));
    }
    for w in &validation.warnings {
        tracing::warn!(path = %w.path, "{}", w.reason);
    }
    Ok(dataset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::SdgDirection;

    fn draft(id: &str) -> UseDraft {
        UseDraft {
            use_id: id.into(),
            incident_ids: vec![1],
            domain: "health".into(),
            purpose: "Track sleep".into(),
            capability: "Classifying sleep stages".into(),
            ai_user: "app owners".into(),
            ai_subject: "app owners".into(),
        }
    }

    fn entry(id: &str, risk: RiskTier) -> AnnotationEntry {
        AnnotationEntry {
            use_id: id.into(),
            risk,
            sdg_impacts: vec![SdgImpact {
                sdg_id: 3,
                direction: SdgDirection::Supports,
                examples: vec!["Better sleep".into()],
            }],
            incident_examples: vec!["Inaccurate readings".into()],
            benefit_examples: vec![],
        }
    }

    fn incidents() -> Vec<IncidentRecord> {
        vec![IncidentRecord {
            incident_id: 1,
            title: "Sleep app".into(),
            description: "d".into(),
            date: None,
            source_urls: vec![],
        }]
    }

    fn epoch() -> DateTime<Utc> {
        DateTime::from_timestamp(0, 0).unwrap()
    }

    #[test]
    fn empty_inputs_give_empty_dataset() {
        let d = merge_annotations(&[], &AnnotationFile::default(), &[], epoch(), "s").unwrap();
        assert!(d.uses.is_empty());
    }

    #[test]
    fn merge_keeps_draft_text() {
        let drafts = vec![draft("use-001"), draft("use-002")];
        let ann = AnnotationFile {
            entries: vec![entry("use-002", RiskTier::High), entry("use-001", RiskTier::Low)],
        };
        let d = merge_annotations(&drafts, &ann, &incidents(), epoch(), "s").unwrap();
        assert_eq!(d.uses.len(), 2);
        assert_eq!(d.uses[0].use_id, "use-001");
        assert_eq!(d.uses[0].risk, RiskTier::Low);
        assert_eq!(d.uses[1].purpose, drafts[1].purpose);
    }

    #[test]
    fn reconciliation_lists_both_directions() {
        let drafts = vec![draft("use-001"), draft("use-002")];
        let ann = AnnotationFile {
            entries: vec![entry("use-001", RiskTier::Low), entry("use-009", RiskTier::Low)],
        };
        match merge_annotations(&drafts, &ann, &incidents(), epoch(), "s") {
            Err(AssessError::Reconciliation(r)) => {
                assert_eq!(r.drafts_without_annotation, ["use-002"]);
                assert_eq!(r.annotations_without_draft, ["use-009"]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_annotation_ids_are_rejected() {
        let ann = AnnotationFile {
            entries: vec![entry("use-001", RiskTier::Low), entry("use-001", RiskTier::High)],
        };
        match merge_annotations(&[draft("use-001")], &ann, &incidents(), epoch(), "s") {
            Err(AssessError::Reconciliation(r)) => assert_eq!(r.duplicate_annotation_ids, ["use-001"]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn invalid_sdg_is_a_validation_error() {
        let mut e = entry("use-001", RiskTier::Low);
        e.sdg_impacts[0].sdg_id = 18;
        let ann = AnnotationFile { entries: vec![e] };
        match merge_annotations(&[draft("use-001")], &ann, &incidents(), epoch(), "s") {
            Err(AssessError::Validation(r)) => assert_eq!(r.violations[0].path, "uses[0].sdg_impacts[0].sdg_id"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
