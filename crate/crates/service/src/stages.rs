//! One function per pipeline stage, reading and writing JSON artifacts.

use std::fs::{self, File};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use atlas_core::assessment::{merge_annotations, AnnotationFile, AssessError};
use atlas_core::atlas::{export_atlas, write_atlas, NarrativeConfig, Palette};
use atlas_core::domain::{dataset_summary, Dataset, IncidentRecord, SummaryStats};
use atlas_core::embedding::{documents_for, embed_external, embed_tfidf, EmbeddingConfig, EmbeddingMatrix, Provider};
use atlas_core::formatter::{DraftSet, Formatter, FormatterConfig};
use atlas_core::ingest::{
    deduplicate, filter_mobile, parse_incidents, parse_keyword_list, IngestConfig, InputFormat, MatchMode,
    SkippedEntry,
};
use atlas_core::layout::{run_tsne, LayoutResult, TsneConfig};
use chrono::{DateTime, NaiveDate, Utc};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut body = serde_json::to_string_pretty(value)?;
    body.push('\n');
    fs::write(path, body).with_context(|| format!("writing {}", path.display()))
}

/// `<path>.<suffix>`, e.g. `incidents.json.skipped.json`.
pub fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}

#[derive(Debug, Clone)]
pub struct IngestOptions {
    pub input: PathBuf,
    /// Inferred from the file extension when absent.
    pub format: Option<InputFormat>,
    pub keywords: Option<PathBuf>,
    pub match_mode: MatchMode,
    pub date_range: Option<(NaiveDate, NaiveDate)>,
    pub out: PathBuf,
}

/// Written next to the ingest output as `<out>.skipped.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub input_entries: usize,
    pub parsed: usize,
    pub unique: usize,
    pub kept: usize,
    pub skipped: Vec<SkippedEntry>,
}

pub fn ingest(opts: &IngestOptions) -> Result<IngestReport> {
    let format = match opts.format {
        Some(f) => f,
        None => {
            let ext = opts.input.extension().and_then(|e| e.to_str()).unwrap_or("");
            ext.parse()
                .with_context(|| format!("cannot infer the format of {}; pass --format", opts.input.display()))?
        }
    };
    let mut config = IngestConfig::new(&opts.input);
    if let Some(path) = &opts.keywords {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        config.keyword_list = parse_keyword_list(&text);
    }
    config.match_mode = opts.match_mode;
    config.date_range = opts.date_range;
    config.validate()?;

    let file = File::open(&opts.input).with_context(|| format!("opening {}", opts.input.display()))?;
    let parsed = parse_incidents(file, format).with_context(|| format!("parsing {}", opts.input.display()))?;
    for s in &parsed.skipped {
        tracing::warn!(index = s.index, line = ?s.line, reason = %s.reason, "skipped malformed entry");
    }
    let input_entries = parsed.total_entries();
    let parsed_count = parsed.records.len();
    let unique = deduplicate(parsed.records);
    let kept = filter_mobile(&unique, &config);
    write_json(&opts.out, &kept)?;
    let report = IngestReport {
        input_entries,
        parsed: parsed_count,
        unique: unique.len(),
        kept: kept.len(),
        skipped: parsed.skipped,
    };
    write_json(&sidecar(&opts.out, "skipped.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FormatSummary {
    pub drafts: usize,
    pub failures: usize,
}

/// Drafts go to `out`, per-incident failures to `<out>.failures.json`.
pub fn format(input: &Path, out: &Path, config: FormatterConfig) -> Result<FormatSummary> {
    let incidents: Vec<IncidentRecord> = read_json(input)?;
    let mut formatter = Formatter::new(config)?;
    let outcome = formatter.format_batch(&incidents);
    for f in &outcome.failures {
        tracing::warn!(incident_id = f.incident_id, error = %f.error, "formatting failed");
    }
    write_json(out, &outcome.drafts)?;
    write_json(&sidecar(out, "failures.json"), &outcome.failures)?;
    Ok(FormatSummary {
        drafts: outcome.drafts.drafts.len(),
        failures: outcome.failures.len(),
    })
}

#[derive(Debug, Clone)]
pub struct AssessOptions {
    pub drafts: PathBuf,
    pub annotations: PathBuf,
    pub out: PathBuf,
    pub created_at: DateTime<Utc>,
    pub source_snapshot: String,
}

pub fn assess(opts: &AssessOptions) -> Result<SummaryStats> {
    let drafts: DraftSet = read_json(&opts.drafts)?;
    let annotations: AnnotationFile = read_json(&opts.annotations)?;
    let dataset = match merge_annotations(
        &drafts.drafts,
        &annotations,
        &drafts.incidents,
        opts.created_at,
        &opts.source_snapshot,
    ) {
        Ok(d) => d,
        Err(AssessError::Reconciliation(r)) => bail!(
            "drafts and annotations do not match\n{}",
            serde_json::to_string_pretty(&r)?
        ),
        Err(AssessError::Validation(v)) => bail!("merged dataset is invalid:\n{v}"),
    };
    let stats = dataset_summary(&dataset)?;
    write_json(&opts.out, &dataset)?;
    Ok(stats)
}

pub fn embed(dataset: &Path, out: &Path, config: &EmbeddingConfig) -> Result<EmbeddingMatrix> {
    config.validate()?;
    let dataset: Dataset = read_json(dataset)?;
    let documents = documents_for(&dataset.uses, &config.text_fields);
    let matrix = if documents.is_empty() {
        EmbeddingMatrix::empty(0)
    } else {
        match config.provider {
            Provider::Tfidf => embed_tfidf(&documents)?,
            Provider::External => embed_external(&documents, config)?,
        }
    };
    write_json(out, &matrix)?;
    Ok(matrix)
}

pub fn layout(embeddings: &Path, out: &Path, config: &TsneConfig) -> Result<LayoutResult> {
    let matrix: EmbeddingMatrix = read_json(embeddings)?;
    matrix.validate()?;
    let result = if matrix.is_empty() {
        LayoutResult {
            row_ids: vec![],
            coordinates: vec![],
            kl_trace: vec![],
            seed: config.seed,
            config: config.clone(),
        }
    } else {
        run_tsne(&matrix, config)?
    };
    if let (Some(first), Some(last)) = (result.kl_trace.first(), result.kl_trace.last()) {
        tracing::info!(initial_kl = first, final_kl = last, "layout finished");
    }
    write_json(out, &result)?;
    Ok(result)
}

#[derive(Debug, Clone)]
pub struct ExportOptions {
    pub dataset: PathBuf,
    pub layout: PathBuf,
    pub out: PathBuf,
    pub narrative: Option<PathBuf>,
    pub palette: Palette,
    /// Defaults to the dataset's `created_at`, which keeps re-exports byte-identical.
    pub generated_at: Option<DateTime<Utc>>,
}

pub fn export(opts: &ExportOptions) -> Result<usize> {
    let dataset: Dataset = read_json(&opts.dataset)?;
    let layout: LayoutResult = read_json(&opts.layout)?;
    let narrative = match &opts.narrative {
        Some(path) => NarrativeConfig::load(path)?,
        None => NarrativeConfig::default(),
    };
    let doc = export_atlas(
        &dataset,
        &layout,
        &narrative,
        &opts.palette,
        opts.generated_at.unwrap_or(dataset.created_at),
    )?;
    if let Some(dir) = opts.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    write_atlas(&opts.out, &doc)?;
    Ok(doc.uses.len())
}
