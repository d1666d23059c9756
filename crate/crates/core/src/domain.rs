//! Canonical records shared by every pipeline stage.
//!
//! A *use* is one application of AI described by five components (domain,
//! purpose, capability, AI user, AI subject) together with its regulatory
//! risk tier and its impacts on the UN Sustainable Development Goals.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};

/// Highest SDG number (the UN defines 17 goals).
pub const SDG_COUNT: u8 = 17;

/// Maximum number of examples attached to a use or an SDG impact.
pub const MAX_EXAMPLES: usize = 3;

/// One raw incident as ingested from a snapshot dump.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IncidentRecord {
    pub incident_id: u64,
    pub title: String,
    pub description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub date: Option<NaiveDate>,
    #[serde(default)]
    pub source_urls: Vec<String>,
}

/// EU AI Act risk tier. The atlas uses exactly these three.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RiskTier {
    Low,
    High,
    Unacceptable,
}

impl RiskTier {
    pub const ALL: [RiskTier; 3] = [RiskTier::Low, RiskTier::High, RiskTier::Unacceptable];

    pub fn as_str(self) -> &'static str {
        match self {
            RiskTier::Low => "low",
            RiskTier::High => "high",
            RiskTier::Unacceptable => "unacceptable",
        }
    }
}

impl fmt::Display for RiskTier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RiskTier {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_lowercase().as_str() {
            "low" => Ok(RiskTier::Low),
            "high" => Ok(RiskTier::High),
            "unacceptable" => Ok(RiskTier::Unacceptable),
            other => Err(format!("unknown risk tier `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SdgDirection {
    Supports,
    Undermines,
}

impl SdgDirection {
    pub fn as_str(self) -> &'static str {
        match self {
            SdgDirection::Supports => "supports",
            SdgDirection::Undermines => "undermines",
        }
    }
}

/// How a use affects one Sustainable Development Goal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SdgImpact {
    pub sdg_id: u8,
    pub direction: SdgDirection,
    pub examples: Vec<String>,
}

/// Output of the formatting stage: the five components plus incident linkage,
/// before any risk or SDG annotation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UseDraft {
    pub use_id: String,
    pub incident_ids: Vec<u64>,
    pub domain: String,
    pub purpose: String,
    pub capability: String,
    pub ai_user: String,
    pub ai_subject: String,
}

/// A fully annotated AI use.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UseRecord {
    pub use_id: String,
    pub incident_ids: Vec<u64>,
    pub domain: String,
    pub purpose: String,
    pub capability: String,
    pub ai_user: String,
    pub ai_subject: String,
    pub risk: RiskTier,
    #[serde(default)]
    pub sdg_impacts: Vec<SdgImpact>,
    pub incident_examples: Vec<String>,
    #[serde(default)]
    pub benefit_examples: Vec<String>,
}

/// The five descriptive components of a use, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    Domain,
    Purpose,
    Capability,
    AiUser,
    AiSubject,
}

impl Component {
    pub const ALL: [Component; 5] = [
        Component::Domain,
        Component::Purpose,
        Component::Capability,
        Component::AiUser,
        Component::AiSubject,
    ];

    pub fn field_name(self) -> &'static str {
        match self {
            Component::Domain => "domain",
            Component::Purpose => "purpose",
            Component::Capability => "capability",
            Component::AiUser => "ai_user",
            Component::AiSubject => "ai_subject",
        }
    }
}

impl FromStr for Component {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Component::ALL
            .into_iter()
            .find(|c| c.field_name() == s.trim())
            .ok_or_else(|| format!("unknown use component `{s}`"))
    }
}

impl UseDraft {
    pub fn component(&self, c: Component) -> &str {
        match c {
            Component::Domain => &self.domain,
            Component::Purpose => &self.purpose,
            Component::Capability => &self.capability,
            Component::AiUser => &self.ai_user,
            Component::AiSubject => &self.ai_subject,
        }
    }
}

impl UseRecord {
    pub fn component(&self, c: Component) -> &str {
        match c {
            Component::Domain => &self.domain,
            Component::Purpose => &self.purpose,
            Component::Capability => &self.capability,
            Component::AiUser => &self.ai_user,
            Component::AiSubject => &self.ai_subject,
        }
    }
}

/// Stable identifier assigned at formatting time: `use-` plus a zero-padded ordinal.
pub fn use_id_for_ordinal(ordinal: usize) -> String {
    format!("use-{ordinal:03}")
}

/// Lowercase, trim and collapse internal whitespace. Used for domains and facet values.
pub fn normalize_label(s: &str) -> String {
    s.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// A complete curated dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    pub uses: Vec<UseRecord>,
    pub incidents: Vec<IncidentRecord>,
    pub created_at: DateTime<Utc>,
    pub source_snapshot: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    /// Field path, e.g. `sdg_impacts[2].sdg_id` or `uses[4].ai_subject`.
    pub path: String,
    pub reason: String,
}

/// Violations make a record invalid; warnings do not.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    fn violation(&mut self, path: impl Into<String>, reason: impl Into<String>) {
        self.violations.push(Violation {
            path: path.into(),
            reason: reason.into(),
        });
    }

    fn warning(&mut self, path: impl Into<String>, reason: impl Into<String>) {
        self.warnings.push(Violation {
            path: path.into(),
            reason: reason.into(),
        });
    }

    fn absorb(&mut self, prefix: &str, other: ValidationReport) {
        let prefixed = |v: Violation| Violation {
            path: format!("{prefix}.{}", v.path),
            reason: v.reason,
        };
        self.violations.extend(other.violations.into_iter().map(prefixed));
        self.warnings.extend(other.warnings.into_iter().map(prefixed));
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return f.write_str("no violations");
        }
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{}: {}", v.path, v.reason)?;
        }
        Ok(())
    }
}

fn check_examples(report: &mut ValidationReport, path: &str, examples: &[String], min: usize) {
    if examples.len() < min || examples.len() > MAX_EXAMPLES {
        report.violation(
            path,
            format!(
                "expected {min}..={MAX_EXAMPLES} examples, found {}",
                examples.len()
            ),
        );
    }
    for (k, e) in examples.iter().enumerate() {
        if e.trim().is_empty() {
            report.violation(format!("{path}[{k}]"), "example is empty");
        }
    }
}

/// Checks the five-component format of a draft.
pub fn validate_draft(draft: &UseDraft) -> ValidationReport {
    let mut report = ValidationReport::default();
    check_identity(&mut report, &draft.use_id, &draft.incident_ids);
    for c in Component::ALL {
        if draft.component(c).trim().is_empty() {
            report.violation(c.field_name(), "component is empty");
        }
    }
    report
}

fn check_identity(report: &mut ValidationReport, use_id: &str, incident_ids: &[u64]) {
    if use_id.trim().is_empty() {
        report.violation("use_id", "identifier is empty");
    }
    if incident_ids.is_empty() {
        report.violation("incident_ids", "a use must reference at least one incident");
    }
}

/// Checks every invariant of a single use. An empty report means the record is valid.
pub fn validate_use(record: &UseRecord) -> ValidationReport {
    let mut report = ValidationReport::default();
    check_identity(&mut report, &record.use_id, &record.incident_ids);
    for c in Component::ALL {
        if record.component(c).trim().is_empty() {
            report.violation(c.field_name(), "component is empty");
        }
    }
    check_examples(&mut report, "incident_examples", &record.incident_examples, 1);
    check_examples(&mut report, "benefit_examples", &record.benefit_examples, 0);

    let mut seen: HashMap<(u8, SdgDirection), usize> = HashMap::new();
    let mut directions: HashMap<u8, BTreeSet<SdgDirection>> = HashMap::new();
    for (k, impact) in record.sdg_impacts.iter().enumerate() {
        if !(1..=SDG_COUNT).contains(&impact.sdg_id) {
            report.violation(
                format!("sdg_impacts[{k}].sdg_id"),
                format!("SDG id {} outside 1..={SDG_COUNT}", impact.sdg_id),
            );
        }
        check_examples(
            &mut report,
            &format!("sdg_impacts[{k}].examples"),
            &impact.examples,
            1,
        );
        if let Some(first) = seen.insert((impact.sdg_id, impact.direction), k) {
            report.violation(
                format!("sdg_impacts[{k}]"),
                format!(
                    "SDG {} already listed as `{}` at sdg_impacts[{first}]",
                    impact.sdg_id,
                    impact.direction.as_str()
                ),
            );
        }
        directions
            .entry(impact.sdg_id)
            .or_default()
            .insert(impact.direction);
    }
    let mut both: Vec<u8> = directions
        .into_iter()
        .filter(|(_, d)| d.len() > 1)
        .map(|(id, _)| id)
        .collect();
    both.sort_unstable();
    for id in both {
        report.warning(
            "sdg_impacts",
            format!("SDG {id} is both supported and undermined"),
        );
    }
    report
}

/// Checks every dataset invariant, including each use.
pub fn validate_dataset(d: &Dataset) -> ValidationReport {
    let mut report = ValidationReport::default();

    let mut incident_ids = HashSet::new();
    for (i, inc) in d.incidents.iter().enumerate() {
        if !incident_ids.insert(inc.incident_id) {
            report.violation(
                format!("incidents[{i}].incident_id"),
                format!("duplicate incident id {}", inc.incident_id),
            );
        }
        if inc.incident_id == 0 {
            report.violation(format!("incidents[{i}].incident_id"), "incident id must be positive");
        }
        if inc.title.trim().is_empty() {
            report.violation(format!("incidents[{i}].title"), "title is empty");
        }
        if inc.description.trim().is_empty() {
            report.violation(format!("incidents[{i}].description"), "description is empty");
        }
    }

    let mut use_ids = HashSet::new();
    for (i, u) in d.uses.iter().enumerate() {
        let prefix = format!("uses[{i}]");
        report.absorb(&prefix, validate_use(u));
        if !use_ids.insert(u.use_id.as_str()) {
            report.violation(
                format!("{prefix}.use_id"),
                format!("duplicate use id `{}`", u.use_id),
            );
        }
        for (k, id) in u.incident_ids.iter().enumerate() {
            if !incident_ids.contains(id) {
                report.violation(
                    format!("{prefix}.incident_ids[{k}]"),
                    format!("unknown incident id {id}"),
                );
            }
        }
    }
    report
}

/// Exact counts over a validated dataset.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub total_uses: usize,
    pub total_incidents: usize,
    pub low: usize,
    pub high: usize,
    pub unacceptable: usize,
    /// Number of distinct SDG ids supported by at least one use.
    pub supported_sdgs: usize,
    /// Number of distinct SDG ids undermined by at least one use.
    pub undermined_sdgs: usize,
}

#[derive(Debug, thiserror::Error)]
#[error("dataset is invalid: {0}")]
pub struct InvalidDataset(pub ValidationReport);

pub fn dataset_summary(d: &Dataset) -> Result<SummaryStats, InvalidDataset> {
    let report = validate_dataset(d);
    if !report.is_valid() {
        return Err(InvalidDataset(report));
    }
    let mut stats = SummaryStats {
        total_uses: d.uses.len(),
        total_incidents: d.incidents.len(),
        ..SummaryStats::default()
    };
    let mut supported = BTreeSet::new();
    let mut undermined = BTreeSet::new();
    for u in &d.uses {
        match u.risk {
            RiskTier::Low => stats.low += 1,
            RiskTier::High => stats.high += 1,
            RiskTier::Unacceptable => stats.unacceptable += 1,
        }
        for impact in &u.sdg_impacts {
            match impact.direction {
                SdgDirection::Supports => supported.insert(impact.sdg_id),
                SdgDirection::Undermines => undermined.insert(impact.sdg_id),
            };
        }
    }
    stats.supported_sdgs = supported.len();
    stats.undermined_sdgs = undermined.len();
    Ok(stats)
}
