//! The exported atlas: uses with map coordinates, narrative copy, facet counts
//! and the risk palette, written as one canonical JSON file.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::domain::{validate_use, Dataset, RiskTier, UseRecord};
use crate::layout::LayoutResult;
use crate::search::FacetIndex;

pub const SCHEMA_VERSION: &str = "1.0";
pub const SECTION_COUNT: usize = 4;
/// Decimal places used for every floating-point value in the canonical encoding.
pub const FLOAT_DECIMALS: usize = 6;
/// Minimum contrast ratio of each palette color against white.
pub const MIN_CONTRAST: f64 = 3.0;

#[derive(Debug, thiserror::Error)]
pub enum AtlasError {
    #[error(
        "dataset and layout disagree: missing from layout {missing_from_layout:?}, missing from dataset {missing_from_dataset:?}"
    )]
    Reconciliation {
        missing_from_layout: Vec<String>,
        missing_from_dataset: Vec<String>,
    },
    #[error("invalid atlas: {}", .0.join("; "))]
    Invalid(Vec<String>),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

/// A use record with its map position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtlasUse {
    #[serde(flatten)]
    pub record: UseRecord,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NarrativeSection {
    pub id: String,
    pub title: String,
    pub body: String,
    #[serde(default)]
    pub highlighted_use_ids: Vec<String>,
}

/// Author-edited narrative copy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NarrativeConfig {
    pub sections: Vec<NarrativeSection>,
}

impl Default for NarrativeConfig {
    fn default() -> Self {
        let section = |id: &str, title: &str, body: &str| NarrativeSection {
            id: id.into(),
            title: title.into(),
            body: body.into(),
            highlighted_use_ids: vec![],
        };
        Self {
            sections: vec![
                section(
                    "map",
                    "A map of AI uses in mobile computing",
                    "Each dot is one use of AI drawn from reported incidents. Uses that are described alike sit close together.",
                ),
                section(
                    "risk",
                    "Grouped by risk",
                    "The same dots regrouped by their risk tier under the EU AI Act: unacceptable, high and low.",
                ),
                section(
                    "traits",
                    "What risky uses share",
                    "Uses in the same tier often share a purpose, a capability or the people they are applied to.",
                ),
                section(
                    "explore",
                    "Explore the atlas",
                    "Filter by category, search by keyword and open any dot for its incidents, benefits and SDG impacts.",
                ),
            ],
        }
    }
}

impl NarrativeConfig {
    pub fn load(path: &Path) -> Result<Self, AtlasError> {
        read_json(path)
    }

    /// Structural problems; highlighted ids are checked against `known_ids` when given.
    pub fn problems(&self, known_ids: Option<&BTreeSet<&str>>) -> Vec<String> {
        let mut out = Vec::new();
        if self.sections.len() != SECTION_COUNT {
            out.push(format!(
                "narrative has {} sections, expected {SECTION_COUNT}",
                self.sections.len()
            ));
        }
        let mut seen = BTreeSet::new();
        for (k, s) in self.sections.iter().enumerate() {
            if s.id.trim().is_empty() {
                out.push(format!("narrative[{k}].id is empty"));
            } else if !seen.insert(s.id.as_str()) {
                out.push(format!("narrative[{k}].id `{}` is repeated", s.id));
            }
            if s.title.trim().is_empty() {
                out.push(format!("narrative[{k}].title is empty"));
            }
            if let Some(known) = known_ids {
                for id in &s.highlighted_use_ids {
                    if !known.contains(id.as_str()) {
                        out.push(format!("narrative[{k}] highlights unknown use `{id}`"));
                    }
                }
            }
        }
        out
    }
}

/// Dot color per risk tier, as `#rrggbb`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Palette {
    pub low: String,
    pub high: String,
    pub unacceptable: String,
}

impl Default for Palette {
    fn default() -> Self {
        Self {
            low: "#1b998b".into(),
            high: "#f46036".into(),
            unacceptable: "#d7263d".into(),
        }
    }
}

impl Palette {
    pub fn color(&self, tier: RiskTier) -> &str {
        match tier {
            RiskTier::Low => &self.low,
            RiskTier::High => &self.high,
            RiskTier::Unacceptable => &self.unacceptable,
        }
    }

    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut seen = BTreeSet::new();
        for tier in RiskTier::ALL {
            let hex = self.color(tier);
            match parse_hex(hex) {
                None => out.push(format!("palette.{tier} `{hex}` is not a #rrggbb color")),
                Some(rgb) => {
                    let ratio = contrast_with_white(rgb);
                    if ratio < MIN_CONTRAST {
                        out.push(format!(
                            "palette.{tier} `{hex}` has contrast {ratio:.2}:1 against white, below {MIN_CONTRAST}:1"
                        ));
                    }
                    if !seen.insert(rgb) {
                        out.push(format!("palette.{tier} `{hex}` repeats another tier's color"));
                    }
                }
            }
        }
        out
    }
}

fn parse_hex(s: &str) -> Option<[u8; 3]> {
    let h = s.strip_prefix('#')?;
    if h.len() != 6 || !h.chars().all(|c| c.is_ascii_hexdigit()) {
        return None;
    }
    let byte = |i: usize| u8::from_str_radix(&h[i..i + 2], 16).ok();
    Some([byte(0)?, byte(2)?, byte(4)?])
}

/// WCAG relative luminance of an sRGB color.
pub fn relative_luminance(rgb: [u8; 3]) -> f64 {
    let lin = |c: u8| {
        let c = c as f64 / 255.0;
        if c <= 0.03928 {
            c / 12.92
        } else {
            ((c + 0.055) / 1.055).powf(2.4)
        }
    };
    0.2126 * lin(rgb[0]) + 0.7152 * lin(rgb[1]) + 0.0722 * lin(rgb[2])
}

pub fn contrast_with_white(rgb: [u8; 3]) -> f64 {
    1.05 / (relative_luminance(rgb) + 0.05)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtlasDocument {
    pub version: String,
    pub generated_at: DateTime<Utc>,
    pub uses: Vec<AtlasUse>,
    pub narrative: Vec<NarrativeSection>,
    /// Facet name → value → number of uses.
    pub facets: BTreeMap<String, BTreeMap<String, usize>>,
    pub palette: Palette,
}

/// Joins uses with their coordinates. Uses keep dataset order.
pub fn export_atlas(
    dataset: &Dataset,
    layout: &LayoutResult,
    narrative: &NarrativeConfig,
    palette: &Palette,
    generated_at: DateTime<Utc>,
) -> Result<AtlasDocument, AtlasError> {
    let dataset_ids: BTreeSet<&str> = dataset.uses.iter().map(|u| u.use_id.as_str()).collect();
    let layout_ids: BTreeSet<&str> = layout.row_ids.iter().map(String::as_str).collect();
    if dataset_ids != layout_ids
        || dataset_ids.len() != dataset.uses.len()
        || layout_ids.len() != layout.row_ids.len()
    {
        return Err(AtlasError::Reconciliation {
            missing_from_layout: dataset_ids.difference(&layout_ids).map(|s| s.to_string()).collect(),
            missing_from_dataset: layout_ids.difference(&dataset_ids).map(|s| s.to_string()).collect(),
        });
    }
    if layout.coordinates.len() != layout.row_ids.len() {
        return Err(AtlasError::Invalid(vec![format!(
            "layout has {} ids but {} coordinates",
            layout.row_ids.len(),
            layout.coordinates.len()
        )]));
    }
    let position: BTreeMap<&str, [f64; 2]> = layout
        .row_ids
        .iter()
        .map(String::as_str)
        .zip(layout.coordinates.iter().copied())
        .collect();
    let doc = AtlasDocument {
        version: SCHEMA_VERSION.into(),
        generated_at,
        uses: dataset
            .uses
            .iter()
            .map(|u| {
                let [x, y] = position[u.use_id.as_str()];
                AtlasUse {
                    record: u.clone(),
                    x,
                    y,
                }
            })
            .collect(),
        narrative: narrative.sections.clone(),
        facets: FacetIndex::build(&dataset.uses).counts(),
        palette: palette.clone(),
    };
    doc.validate()?;
    Ok(doc)
}

impl AtlasDocument {
    pub fn use_records(&self) -> Vec<UseRecord> {
        self.uses.iter().map(|u| u.record.clone()).collect()
    }

    pub fn find(&self, use_id: &str) -> Option<&AtlasUse> {
        self.uses.iter().find(|u| u.record.use_id == use_id)
    }

    /// Every document invariant, reported together.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.version != SCHEMA_VERSION {
            out.push(format!("version `{}` is not `{SCHEMA_VERSION}`", self.version));
        }
        let mut ids = BTreeSet::new();
        for (i, u) in self.uses.iter().enumerate() {
            if !ids.insert(u.record.use_id.as_str()) {
                out.push(format!("uses[{i}].use_id `{}` is repeated", u.record.use_id));
            }
            for (name, v) in [("x", u.x), ("y", u.y)] {
                if !(v.is_finite() && (0.0..=1.0).contains(&v)) {
                    out.push(format!("uses[{i}].{name} = {v} is outside [0, 1]"));
                }
            }
            for v in validate_use(&u.record).violations {
                out.push(format!("uses[{i}].{}: {}", v.path, v.reason));
            }
        }
        let narrative = NarrativeConfig {
            sections: self.narrative.clone(),
        };
        out.extend(narrative.problems(Some(&ids)));
        out.extend(self.palette.problems());
        let records = self.use_records();
        if self.facets != FacetIndex::build(&records).counts() {
            out.push("facet counts do not match the uses".into());
        }
        out
    }

    pub fn validate(&self) -> Result<(), AtlasError> {
        let problems = self.problems();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(AtlasError::Invalid(problems))
        }
    }

    pub fn to_canonical_json(&self) -> String {
        let value = serde_json::to_value(self).expect("atlas serializes to JSON");
        canonical_json(&value)
    }

    /// Parses and validates.
    pub fn from_json(text: &str) -> Result<Self, AtlasError> {
        let doc: AtlasDocument = serde_json::from_str(text).map_err(|source| AtlasError::Json {
            path: PathBuf::from("<atlas>"),
            source,
        })?;
        doc.validate()?;
        Ok(doc)
    }
}

/// Reads and validates an atlas file.
pub fn load_atlas(path: &Path) -> Result<AtlasDocument, AtlasError> {
    let doc: AtlasDocument = read_json(path)?;
    doc.validate()?;
    Ok(doc)
}

pub fn write_atlas(path: &Path, doc: &AtlasDocument) -> Result<(), AtlasError> {
    write_bytes(path, doc.to_canonical_json().as_bytes())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, AtlasError> {
    let text = fs::read_to_string(path).map_err(|source| AtlasError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| AtlasError::Json {
        path: path.to_path_buf(),
        source,
    })
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), AtlasError> {
    let io = |source| AtlasError::Io {
        path: path.to_path_buf(),
        source,
    };
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(bytes).map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

/// Pretty JSON with sorted object keys and floats fixed to six decimals.
/// Integers stay integers. Ends with a newline.
pub fn canonical_json(value: &Value) -> String {
    let mut out = String::new();
    write_value(value, 0, &mut out);
    out.push('\n');
    out
}

fn write_value(value: &Value, depth: usize, out: &mut String) {
    let indent = |d: usize, out: &mut String| out.extend(std::iter::repeat_n("  ", d));
    match value {
        Value::Null | Value::Bool(_) | Value::String(_) => out.push_str(&value.to_string()),
        Value::Number(n) => {
            if n.is_f64() {
                out.push_str(&format_float(n.as_f64().unwrap_or(0.0)));
            } else {
                out.push_str(&n.to_string());
            }
        }
        Value::Array(items) => {
            if items.is_empty() {
                out.push_str("[]");
                return;
            }
            out.push('[');
            for (k, item) in items.iter().enumerate() {
                out.push_str(if k == 0 { "\n" } else { ",\n" });
                indent(depth + 1, out);
                write_value(item, depth + 1, out);
            }
            out.push('\n');
            indent(depth, out);
            out.push(']');
        }
        Value::Object(map) => {
            if map.is_empty() {
                out.push_str("{}");
                return;
            }
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (k, key) in keys.into_iter().enumerate() {
                out.push_str(if k == 0 { "\n" } else { ",\n" });
                indent(depth + 1, out);
                out.push_str(&Value::String(key.clone()).to_string());
                out.push_str(": ");
                write_value(&map[key], depth + 1, out);
            }
            out.push('\n');
            indent(depth, out);
            out.push('}');
        }
    }
}

fn format_float(v: f64) -> String {
    let s = format!("{v:.FLOAT_DECIMALS$}");
    if s.starts_with('-') && s[1..].bytes().all(|b| b == b'0' || b == b'.') {
        s[1..].to_string()
    } else {
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{SdgDirection, SdgImpact};
    use crate::layout::TsneConfig;
    use chrono::TimeZone;

    fn record(id: &str, risk: RiskTier) -> UseRecord {
        UseRecord {
            use_id: id.into(),
            incident_ids: vec![7],
            domain: "Transport".into(),
            purpose: "estimating vehicle speed".into(),
            capability: "tracking objects in video".into(),
            ai_user: "police".into(),
            ai_subject: "drivers".into(),
            risk,
            sdg_impacts: vec![SdgImpact {
                sdg_id: 11,
                direction: SdgDirection::Supports,
                examples: vec!["safer roads".into()],
            }],
            incident_examples: vec!["wrong fines".into()],
            benefit_examples: vec![],
        }
    }

    fn dataset(uses: Vec<UseRecord>) -> Dataset {
        Dataset {
            uses,
            incidents: vec![],
            created_at: Utc.with_ymd_and_hms(2024, 3, 1, 0, 0, 0).unwrap(),
            source_snapshot: "test".into(),
        }
    }

    fn layout(ids: &[&str], coords: Vec<[f64; 2]>) -> LayoutResult {
        LayoutResult {
            row_ids: ids.iter().map(|s| s.to_string()).collect(),
            coordinates: coords,
            kl_trace: vec![],
            seed: 0,
            config: TsneConfig::default(),
        }
    }

    fn when() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2024, 3, 2, 12, 0, 0).unwrap()
    }

    #[test]
    fn empty_export_is_valid() {
        let doc = export_atlas(
            &dataset(vec![]),
            &layout(&[], vec![]),
            &NarrativeConfig::default(),
            &Palette::default(),
            when(),
        )
        .unwrap();
        assert!(doc.uses.is_empty());
        assert_eq!(doc.narrative.len(), SECTION_COUNT);
        let back = AtlasDocument::from_json(&doc.to_canonical_json()).unwrap();
        assert_eq!(back, doc);
    }

    #[test]
    fn coordinates_follow_ids_not_positions() {
        let d = dataset(vec![record("use-001", RiskTier::Low), record("use-002", RiskTier::High)]);
        let l = layout(&["use-002", "use-001"], vec![[1.0, 0.0], [0.25, 0.5]]);
        let doc = export_atlas(&d, &l, &NarrativeConfig::default(), &Palette::default(), when()).unwrap();
        assert_eq!(doc.uses[0].record.use_id, "use-001");
        assert_eq!((doc.uses[0].x, doc.uses[0].y), (0.25, 0.5));
        assert_eq!(doc.facets["risk"]["high"], 1);
    }

    #[test]
    fn id_mismatch_lists_both_sides() {
        let d = dataset(vec![record("use-001", RiskTier::Low), record("use-002", RiskTier::Low)]);
        let l = layout(&["use-001", "use-009"], vec![[0.0, 0.0], [1.0, 1.0]]);
        match export_atlas(&d, &l, &NarrativeConfig::default(), &Palette::default(), when()) {
            Err(AtlasError::Reconciliation {
                missing_from_layout,
                missing_from_dataset,
            }) => {
                assert_eq!(missing_from_layout, ["use-002"]);
                assert_eq!(missing_from_dataset, ["use-009"]);
            }
            other => panic!("expected reconciliation error, got {other:?}"),
        }
    }

    #[test]
    fn narrative_structure_is_checked() {
        let d = dataset(vec![record("use-001", RiskTier::Low)]);
        let l = layout(&["use-001"], vec![[0.5, 0.5]]);
        let mut n = NarrativeConfig::default();
        n.sections[1].highlighted_use_ids.push("use-404".into());
        let err = export_atlas(&d, &l, &n, &Palette::default(), when()).unwrap_err();
        assert!(err.to_string().contains("use-404"));
        n.sections.pop();
        n.sections[1].highlighted_use_ids.clear();
        let err = export_atlas(&d, &l, &n, &Palette::default(), when()).unwrap_err();
        assert!(err.to_string().contains("3 sections"));
    }

    #[test]
    fn default_palette_contrast() {
        assert!(Palette::default().problems().is_empty());
        // Pure white against white is 1:1.
        assert!((contrast_with_white([255, 255, 255]) - 1.0).abs() < 1e-12);
        assert!((contrast_with_white([0, 0, 0]) - 21.0).abs() < 1e-12);
        let pale = Palette {
            low: "#eeeeee".into(),
            ..Palette::default()
        };
        assert_eq!(pale.problems().len(), 1);
        let bad = Palette {
            high: "red".into(),
            unacceptable: "#1B998B".into(),
            ..Palette::default()
        };
        assert_eq!(bad.problems().len(), 2);
    }

    #[test]
    fn canonical_encoding() {
        let v: Value = serde_json::from_str(r#"{"b": [1, 2.5, -0.0000001], "a": {"z": null, "y": "q\""}, "c": []}"#).unwrap();
        assert_eq!(
            canonical_json(&v),
            "{\n  \"a\": {\n    \"y\": \"q\\\"\",\n    \"z\": null\n  },\n  \"b\": [\n    1,\n    2.500000,\n    0.000000\n  ],\n  \"c\": []\n}\n"
        );
    }

    #[test]
    fn rounded_export_revalidates() {
        let d = dataset(vec![record("use-001", RiskTier::Low), record("use-002", RiskTier::Unacceptable)]);
        let l = layout(&["use-001", "use-002"], vec![[0.123456789, 0.9999999], [0.0, 1.0]]);
        let doc = export_atlas(&d, &l, &NarrativeConfig::default(), &Palette::default(), when()).unwrap();
        let text = doc.to_canonical_json();
        assert!(text.contains("\"x\": 0.123457"));
        let back = AtlasDocument::from_json(&text).unwrap();
        assert_eq!(back.to_canonical_json(), text);
    }

    #[test]
    fn corrupted_documents_are_rejected() {
        let d = dataset(vec![record("use-001", RiskTier::Low)]);
        let l = layout(&["use-001"], vec![[0.5, 0.5]]);
        let doc = export_atlas(&d, &l, &NarrativeConfig::default(), &Palette::default(), when()).unwrap();
        let text = doc.to_canonical_json();
        assert!(AtlasDocument::from_json(&text.replace("\"x\": 0.500000", "\"x\": 1.500000")).is_err());
        assert!(AtlasDocument::from_json(&text.replace("\"low\": 1", "\"low\": 2")).is_err());
        assert!(AtlasDocument::from_json(&text.replace("\"version\"", "\"versoin\"")).is_err());
        assert!(AtlasDocument::from_json(&text[..text.len() / 2]).is_err());
    }
}
