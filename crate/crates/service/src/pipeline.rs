//! Runs every stage from one TOML file.
//!
//! Relative paths in the file are resolved against the file's directory.
//! Artifacts land in `output_dir` under fixed names (see [`Artifacts`]).

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use anyhow::{Context, Result};
use atlas_core::atlas::Palette;
use atlas_core::domain::SummaryStats;
use atlas_core::embedding::EmbeddingConfig;
use atlas_core::formatter::{FormatterMode, DEFAULT_PROMPT_TEMPLATE};
use atlas_core::ingest::{InputFormat, MatchMode};
use atlas_core::layout::TsneConfig;
use chrono::{DateTime, NaiveDate, Utc};
use serde::Deserialize;

use crate::stages::{self, AssessOptions, ExportOptions, IngestOptions};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub output_dir: PathBuf,
    pub created_at: DateTime<Utc>,
    pub source_snapshot: String,
    pub ingest: IngestSection,
    pub format: FormatSection,
    pub assess: AssessSection,
    #[serde(default)]
    pub embed: EmbeddingConfig,
    #[serde(default)]
    pub layout: TsneConfig,
    #[serde(default)]
    pub export: ExportSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestSection {
    pub input: PathBuf,
    #[serde(default)]
    pub format: Option<String>,
    #[serde(default)]
    pub keywords: Option<PathBuf>,
    #[serde(default)]
    pub match_mode: MatchMode,
    #[serde(default)]
    pub date_range: Option<(NaiveDate, NaiveDate)>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FormatSection {
    pub mode: FormatterMode,
    pub cache: PathBuf,
    #[serde(default)]
    pub endpoint_url: Option<String>,
    #[serde(default)]
    pub model_name: Option<String>,
    /// File holding the prompt template; the built-in template otherwise.
    #[serde(default)]
    pub prompt_template: Option<PathBuf>,
    #[serde(default)]
    pub timeout_secs: Option<u64>,
    #[serde(default)]
    pub max_retries: Option<u32>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssessSection {
    pub annotations: PathBuf,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExportSection {
    #[serde(default)]
    pub narrative: Option<PathBuf>,
    #[serde(default)]
    pub palette: Option<Palette>,
    #[serde(default)]
    pub generated_at: Option<DateTime<Utc>>,
}

/// File names of the stage outputs inside `output_dir`.
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub incidents: PathBuf,
    pub drafts: PathBuf,
    pub dataset: PathBuf,
    pub embeddings: PathBuf,
    pub layout: PathBuf,
    pub atlas: PathBuf,
}

impl Artifacts {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            incidents: dir.join("incidents.json"),
            drafts: dir.join("drafts.json"),
            dataset: dir.join("dataset.json"),
            embeddings: dir.join("embeddings.json"),
            layout: dir.join("layout.json"),
            atlas: dir.join("atlas.json"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineReport {
    pub artifacts: Artifacts,
    pub kept_incidents: usize,
    pub format_failures: usize,
    pub summary: SummaryStats,
    pub elapsed: Duration,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut config: PipelineConfig =
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        config.resolve(base);
        Ok(config)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        fix(&mut self.ingest.input);
        if let Some(p) = &mut self.ingest.keywords {
            fix(p);
        }
        fix(&mut self.format.cache);
        if let Some(p) = &mut self.format.prompt_template {
            fix(p);
        }
        fix(&mut self.assess.annotations);
        if let Some(p) = &mut self.export.narrative {
            fix(p);
        }
    }
}

/// Runs the configuration loaded from `path`, optionally writing to `output_dir` instead.
pub fn run_file(path: &Path, output_dir: Option<&Path>) -> Result<PipelineReport> {
    let mut config = PipelineConfig::load(path)?;
    if let Some(dir) = output_dir {
        config.output_dir = dir.to_path_buf();
    }
    run(&config)
}

pub fn run(config: &PipelineConfig) -> Result<PipelineReport> {
    let started = Instant::now();
    let artifacts = Artifacts::in_dir(&config.output_dir);

    let format = match &config.ingest.format {
        Some(f) => Some(f.parse::<InputFormat>()?),
        None => None,
    };
    let ingested = stages::ingest(&IngestOptions {
        input: config.ingest.input.clone(),
        format,
        keywords: config.ingest.keywords.clone(),
        match_mode: config.ingest.match_mode,
        date_range: config.ingest.date_range,
        out: artifacts.incidents.clone(),
    })
    .context("ingest stage")?;
    tracing::info!(kept = ingested.kept, skipped = ingested.skipped.len(), "ingest done");

    let prompt_template = match &config.format.prompt_template {
        Some(p) => std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        None => DEFAULT_PROMPT_TEMPLATE.to_string(),
    };
    let formatter = atlas_core::formatter::FormatterConfig {
        mode: config.format.mode,
        endpoint_url: config.format.endpoint_url.clone(),
        model_name: config.format.model_name.clone(),
        prompt_template,
        cache_path: config.format.cache.clone(),
        timeout_secs: config.format.timeout_secs.unwrap_or(60),
        max_retries: config.format.max_retries.unwrap_or(3),
    };
    let formatted = stages::format(&artifacts.incidents, &artifacts.drafts, formatter).context("format stage")?;

    let summary = stages::assess(&AssessOptions {
        drafts: artifacts.drafts.clone(),
        annotations: config.assess.annotations.clone(),
        out: artifacts.dataset.clone(),
        created_at: config.created_at,
        source_snapshot: config.source_snapshot.clone(),
    })
    .context("assess stage")?;

    stages::embed(&artifacts.dataset, &artifacts.embeddings, &config.embed).context("embed stage")?;
    stages::layout(&artifacts.embeddings, &artifacts.layout, &config.layout).context("layout stage")?;
    stages::export(&ExportOptions {
        dataset: artifacts.dataset.clone(),
        layout: artifacts.layout.clone(),
        out: artifacts.atlas.clone(),
        narrative: config.export.narrative.clone(),
        palette: config.export.palette.clone().unwrap_or_default(),
        generated_at: config.export.generated_at,
    })
    .context("export stage")?;

    Ok(PipelineReport {
        artifacts,
        kept_incidents: ingested.kept,
        format_failures: formatted.failures,
        summary,
        elapsed: started.elapsed(),
    })
}
