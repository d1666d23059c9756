//! Parsing of incident snapshot dumps, duplicate removal and mobile-relevance filtering.

use std::collections::HashSet;
use std::fmt;
use std::io::Read;
use std::path::PathBuf;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::domain::IncidentRecord;
use crate::text::words;

/// Keywords used when no keyword file is supplied.
pub const DEFAULT_KEYWORDS: &[&str] = &[
    "mobile",
    "smartphone",
    "phone",
    "app",
    "ios",
    "android",
    "wearable",
    "smartwatch",
    "fitness tracker",
    "tablet",
    "voice assistant",
];

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("failed to read input: {0}")]
    Io(#[from] std::io::Error),
    #[error("input is not valid UTF-8: {0}")]
    Utf8(#[from] std::string::FromUtf8Error),
    #[error("input is not a JSON array of incidents: {0}")]
    Json(String),
    #[error("unreadable CSV input: {0}")]
    Csv(String),
    #[error("unknown input format `{0}` (expected json or csv)")]
    UnknownFormat(String),
    #[error("invalid ingest configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputFormat {
    Json,
    Csv,
}

impl FromStr for InputFormat {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(InputFormat::Json),
            "csv" => Ok(InputFormat::Csv),
            _ => Err(IngestError::UnknownFormat(s.to_string())),
        }
    }
}

impl fmt::Display for InputFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InputFormat::Json => "json",
            InputFormat::Csv => "csv",
        })
    }
}

/// An input entry that could not be turned into an [`IncidentRecord`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedEntry {
    /// Zero-based position among the input entries (array elements or CSV data rows).
    pub index: usize,
    /// One-based line in the source file, when known (CSV only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub line: Option<u64>,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseOutcome {
    pub records: Vec<IncidentRecord>,
    pub skipped: Vec<SkippedEntry>,
}

impl ParseOutcome {
    /// Number of entries seen in the input.
    pub fn total_entries(&self) -> usize {
        self.records.len() + self.skipped.len()
    }
}

/// Parses a JSON array or a CSV table of incidents. Malformed entries land in
/// the skip report; only an unreadable stream is fatal.
///
/// CSV columns: `incident_id,title,description,date,source_urls`, where
/// `source_urls` holds zero or more URLs separated by whitespace or `;`.
pub fn parse_incidents(mut input: impl Read, format: InputFormat) -> Result<ParseOutcome, IngestError> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let text = String::from_utf8(bytes)?;
    match format {
        InputFormat::Json => parse_json(&text),
        InputFormat::Csv => parse_csv(&text),
    }
}

#[derive(Deserialize)]
struct RawIncident {
    incident_id: u64,
    title: String,
    description: String,
    #[serde(default)]
    date: Option<String>,
    #[serde(default)]
    source_urls: Vec<String>,
}

fn parse_json(text: &str) -> Result<ParseOutcome, IngestError> {
    let elements: Vec<serde_json::Value> =
        serde_json::from_str(text).map_err(|e| IngestError::Json(e.to_string()))?;
    let mut out = ParseOutcome::default();
    for (index, element) in elements.into_iter().enumerate() {
        let parsed = serde_json::from_value::<RawIncident>(element)
            .map_err(|e| e.to_string())
            .and_then(check_incident);
        match parsed {
            Ok(record) => out.records.push(record),
            Err(reason) => out.skipped.push(SkippedEntry {
                index,
                line: None,
                reason,
            }),
        }
    }
    Ok(out)
}

fn parse_csv(text: &str) -> Result<ParseOutcome, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| IngestError::Csv(e.to_string()))?
        .clone();
    let column = |name: &str| headers.iter().position(|h| h.trim() == name);
    let (Some(id_col), Some(title_col), Some(desc_col)) =
        (column("incident_id"), column("title"), column("description"))
    else {
        return Err(IngestError::Csv(
            "header must contain incident_id, title and description".into(),
        ));
    };
    let date_col = column("date");
    let urls_col = column("source_urls");

    let mut out = ParseOutcome::default();
    for (index, row) in reader.records().enumerate() {
        let row = match row {
            Ok(row) => row,
            Err(e) => {
                let line = e.position().map(|p| p.line());
                out.skipped.push(SkippedEntry {
                    index,
                    line,
                    reason: e.to_string(),
                });
                continue;
            }
        };
        let line = row.position().map(|p| p.line());
        let field = |col: usize| row.get(col).map(str::to_string);
        let parsed = (|| {
            let id_text = field(id_col).ok_or("missing incident_id column")?;
            let incident_id = id_text
                .trim()
                .parse::<u64>()
                .map_err(|_| format!("incident_id `{id_text}` is not a positive integer"))?;
            let raw = RawIncident {
                incident_id,
                title: field(title_col).ok_or("missing title column")?,
                description: field(desc_col).ok_or("missing description column")?,
                date: date_col.and_then(field).filter(|d| !d.trim().is_empty()),
                source_urls: urls_col
                    .and_then(field)
                    .map(|s| {
                        s.split(|c: char| c == ';' || c.is_whitespace())
                            .filter(|u| !u.is_empty())
                            .map(str::to_string)
                            .collect()
                    })
                    .unwrap_or_default(),
            };
            check_incident(raw)
        })();
        match parsed {
            Ok(record) => out.records.push(record),
            Err(reason) => out.skipped.push(SkippedEntry {
                index,
                line,
                reason,
            }),
        }
    }
    Ok(out)
}

fn check_incident(raw: RawIncident) -> Result<IncidentRecord, String> {
    if raw.incident_id == 0 {
        return Err("incident_id must be positive".into());
    }
    let title = raw.title.trim().to_string();
    let description = raw.description.trim().to_string();
    if title.is_empty() {
        return Err("title is empty".into());
    }
    if description.is_empty() {
        return Err("description is empty".into());
    }
    let date = raw
        .date
        .map(|d| {
            NaiveDate::parse_from_str(d.trim(), "%Y-%m-%d")
                .map_err(|e| format!("date `{d}` is not an ISO-8601 date: {e}"))
        })
        .transpose()?;
    for u in &raw.source_urls {
        let parsed = url::Url::parse(u).map_err(|e| format!("source url `{u}`: {e}"))?;
        if parsed.cannot_be_a_base() {
            return Err(format!("source url `{u}` is not absolute"));
        }
    }
    Ok(IncidentRecord {
        incident_id: raw.incident_id,
        title,
        description,
        date,
        source_urls: raw.source_urls,
    })
}

/// Lowercase, strip punctuation and collapse whitespace.
pub fn normalize_title(title: &str) -> String {
    let stripped: String = title
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .collect();
    stripped
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// Keeps a record unless it shares its incident id or normalized title with an
/// earlier kept record. Order of first occurrences is preserved.
pub fn deduplicate(records: Vec<IncidentRecord>) -> Vec<IncidentRecord> {
    let mut ids = HashSet::new();
    let mut titles = HashSet::new();
    records
        .into_iter()
        .filter(|r| {
            let title = normalize_title(&r.title);
            if ids.contains(&r.incident_id) || titles.contains(&title) {
                return false;
            }
            ids.insert(r.incident_id);
            titles.insert(title);
            true
        })
        .collect()
}

/// How keywords are located in incident text.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMode {
    /// Keyword words must line up with whole words of the text.
    #[default]
    WordBoundary,
    /// Plain substring search; `app` also matches `application`.
    Substring,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestConfig {
    pub input_path: PathBuf,
    pub keyword_list: Vec<String>,
    #[serde(default)]
    pub date_range: Option<(NaiveDate, NaiveDate)>,
    #[serde(default)]
    pub match_mode: MatchMode,
}

impl IngestConfig {
    pub fn new(input_path: impl Into<PathBuf>) -> Self {
        Self {
            input_path: input_path.into(),
            keyword_list: DEFAULT_KEYWORDS.iter().map(|k| k.to_string()).collect(),
            date_range: None,
            match_mode: MatchMode::WordBoundary,
        }
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        if self.keyword_list.is_empty() {
            return Err(IngestError::Config("keyword list is empty".into()));
        }
        for k in &self.keyword_list {
            if k.trim().is_empty() {
                return Err(IngestError::Config("keyword list contains an empty term".into()));
            }
            if *k != k.to_lowercase() {
                return Err(IngestError::Config(format!("keyword `{k}` is not lowercase")));
            }
        }
        if let Some((start, end)) = self.date_range {
            if start > end {
                return Err(IngestError::Config(format!(
                    "date range start {start} is after end {end}"
                )));
            }
        }
        Ok(())
    }
}

/// Reads a keyword file: one term per line, `#` starts a comment.
pub fn parse_keyword_list(text: &str) -> Vec<String> {
    text.lines()
        .map(|l| l.split('#').next().unwrap_or("").trim().to_lowercase())
        .filter(|l| !l.is_empty())
        .collect()
}

/// An incident that passed the mobile filter, with the keywords that matched.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilteredIncident {
    #[serde(flatten)]
    pub incident: IncidentRecord,
    pub matched_keywords: Vec<String>,
}

fn contains_phrase(haystack: &[String], phrase: &[String]) -> bool {
    !phrase.is_empty() && haystack.windows(phrase.len()).any(|w| w == phrase)
}

/// Keeps records whose title or description mentions at least one keyword.
pub fn filter_mobile(records: &[IncidentRecord], config: &IngestConfig) -> Vec<FilteredIncident> {
    let phrases: Vec<Vec<String>> = config.keyword_list.iter().map(|k| words(k)).collect();
    records
        .iter()
        .filter(|r| match (config.date_range, r.date) {
            (Some((start, end)), Some(date)) => start <= date && date <= end,
            _ => true,
        })
        .filter_map(|r| {
            let matched: Vec<String> = match config.match_mode {
                MatchMode::WordBoundary => {
                    let title = words(&r.title);
                    let description = words(&r.description);
                    config
                        .keyword_list
                        .iter()
                        .zip(&phrases)
                        .filter(|(_, p)| contains_phrase(&title, p) || contains_phrase(&description, p))
                        .map(|(k, _)| k.clone())
                        .collect()
                }
                MatchMode::Substring => {
                    let title = r.title.to_lowercase();
                    let description = r.description.to_lowercase();
                    config
                        .keyword_list
                        .iter()
                        .filter(|k| title.contains(k.as_str()) || description.contains(k.as_str()))
                        .cloned()
                        .collect()
                }
            };
            (!matched.is_empty()).then(|| FilteredIncident {
                incident: r.clone(),
                matched_keywords: matched,
            })
        })
        .collect()
}
