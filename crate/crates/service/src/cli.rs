//! Command-line interface of the `atlas` binary.

use std::path::PathBuf;

use anyhow::{Context, Result};
use atlas_core::atlas::Palette;
use atlas_core::domain::Component;
use atlas_core::embedding::{EmbeddingConfig, Provider};
use atlas_core::formatter::{FormatterConfig, FormatterMode, DEFAULT_PROMPT_TEMPLATE};
use atlas_core::ingest::{InputFormat, MatchMode};
use atlas_core::layout::TsneConfig;
use chrono::{DateTime, NaiveDate, Utc};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::pipeline;
use crate::server::{self, ServeConfig};
use crate::stages::{self, AssessOptions, ExportOptions, IngestOptions};

#[derive(Debug, Parser)]
#[command(name = "atlas", version, about = "Build and serve the mobile AI incident atlas")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse a raw incident dump, drop duplicates and keep mobile-related incidents.
    Ingest(IngestArgs),
    /// Rewrite incidents into five-component use drafts.
    Format(FormatArgs),
    /// Merge drafts with risk and SDG annotations into a dataset.
    Assess(AssessArgs),
    /// Embed every use of a dataset.
    Embed(EmbedArgs),
    /// Project embeddings to 2-D with t-SNE.
    Layout(LayoutArgs),
    /// Write the atlas document for the frontend.
    Export(ExportArgs),
    /// Serve an atlas over HTTP.
    Serve(ServeArgs),
    /// Run every stage from one TOML file.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormatArg {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MatchArg {
    WordBoundary,
    Substring,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Input format; inferred from the file extension when omitted.
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
    /// Keyword file, one term per line. The built-in list otherwise.
    #[arg(long)]
    pub keywords: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "word-boundary")]
    pub match_mode: MatchArg,
    /// Keep dated incidents on or after this day (YYYY-MM-DD).
    #[arg(long, requires = "until")]
    pub since: Option<NaiveDate>,
    #[arg(long, requires = "since")]
    pub until: Option<NaiveDate>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Live,
    Replay,
}

#[derive(Debug, Args)]
pub struct FormatArgs {
    /// Incident list, as written by `ingest`.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "replay")]
    pub mode: ModeArg,
    /// Response cache; read in both modes, appended to in live mode.
    #[arg(long)]
    pub cache: PathBuf,
    /// Chat-completion endpoint (live mode). The bearer token is read from ATLAS_API_KEY.
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    /// File with a prompt template containing {title} and {description}.
    #[arg(long)]
    pub prompt_template: Option<PathBuf>,
    #[arg(long, default_value_t = 60)]
    pub timeout_secs: u64,
    #[arg(long, default_value_t = 3)]
    pub max_retries: u32,
}

#[derive(Debug, Args)]
pub struct AssessArgs {
    #[arg(long)]
    pub drafts: PathBuf,
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Dataset timestamp (RFC 3339). Defaults to now.
    #[arg(long)]
    pub created_at: Option<DateTime<Utc>>,
    #[arg(long, default_value = "unspecified")]
    pub source_snapshot: String,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ProviderArg {
    Tfidf,
    External,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "tfidf")]
    pub provider: ProviderArg,
    #[arg(long)]
    pub url: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub dimensions: Option<usize>,
    /// Components to embed, comma separated (domain,purpose,capability,ai_user,ai_subject).
    #[arg(long, value_delimiter = ',')]
    pub fields: Vec<String>,
}

#[derive(Debug, Args)]
pub struct LayoutArgs {
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// TOML file with t-SNE settings; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub perplexity: Option<f64>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub layout: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Narrative JSON with four sections. Built-in copy otherwise.
    #[arg(long)]
    pub narrative: Option<PathBuf>,
    /// Palette JSON `{"low": "#..", "high": "#..", "unacceptable": "#.."}`.
    #[arg(long)]
    pub palette: Option<PathBuf>,
    /// Defaults to the dataset's `created_at`.
    #[arg(long)]
    pub generated_at: Option<DateTime<Utc>>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub atlas: PathBuf,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// Directory with the built frontend, served at `/`.
    #[arg(long = "static")]
    pub static_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides `output_dir` from the config file.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest(a) => {
            let report = stages::ingest(&IngestOptions {
                input: a.input,
                format: a.format.map(|f| match f {
                    FormatArg::Json => InputFormat::Json,
                    FormatArg::Csv => InputFormat::Csv,
                }),
                keywords: a.keywords,
                match_mode: match a.match_mode {
                    MatchArg::WordBoundary => MatchMode::WordBoundary,
                    MatchArg::Substring => MatchMode::Substring,
                },
                date_range: a.since.zip(a.until),
                out: a.out,
            })?;
            println!(
                "{} entries, {} parsed, {} unique, {} kept, {} skipped",
                report.input_entries,
                report.parsed,
                report.unique,
                report.kept,
                report.skipped.len()
            );
        }
        Command::Format(a) => {
            let prompt_template = match &a.prompt_template {
                Some(p) => std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
                None => DEFAULT_PROMPT_TEMPLATE.to_string(),
            };
            let config = FormatterConfig {
                mode: match a.mode {
                    ModeArg::Live => FormatterMode::Live,
                    ModeArg::Replay => FormatterMode::Replay,
                },
                endpoint_url: a.endpoint,
                model_name: a.model,
                prompt_template,
                cache_path: a.cache,
                timeout_secs: a.timeout_secs,
                max_retries: a.max_retries,
            };
            let s = stages::format(&a.input, &a.out, config)?;
            println!("{} drafts, {} failures", s.drafts, s.failures);
        }
        Command::Assess(a) => {
            let stats = stages::assess(&AssessOptions {
                drafts: a.drafts,
                annotations: a.annotations,
                out: a.out,
                created_at: a.created_at.unwrap_or_else(Utc::now),
                source_snapshot: a.source_snapshot,
            })?;
            println!("{}", serde_json::to_string_pretty(&stats)?);
        }
        Command::Embed(a) => {
            let mut config = EmbeddingConfig {
                provider: match a.provider {
                    ProviderArg::Tfidf => Provider::Tfidf,
                    ProviderArg::External => Provider::External,
                },
                external_url: a.url,
                dimensions: a.dimensions,
                model: a.model,
                ..EmbeddingConfig::default()
            };
            if !a.fields.is_empty() {
                config.text_fields = a
                    .fields
                    .iter()
                    .map(|f| f.parse::<Component>().map_err(anyhow::Error::msg))
                    .collect::<Result<_>>()?;
            }
            let m = stages::embed(&a.dataset, &a.out, &config)?;
            println!("{} rows, {} dimensions", m.len(), m.dims);
        }
        Command::Layout(a) => {
            let mut config = match &a.config {
                Some(p) => {
                    let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                    toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
                }
                None => TsneConfig::default(),
            };
            if let Some(v) = a.perplexity {
                config.perplexity = v;
            }
            if let Some(v) = a.iterations {
                config.iterations = v;
            }
            if let Some(v) = a.learning_rate {
                config.learning_rate = v;
            }
            if let Some(v) = a.seed {
                config.seed = v;
            }
            let r = stages::layout(&a.embeddings, &a.out, &config)?;
            println!("{} points laid out", r.row_ids.len());
        }
        Command::Export(a) => {
            let palette: Palette = match &a.palette {
                Some(p) => stages::read_json(p)?,
                None => Palette::default(),
            };
            let n = stages::export(&ExportOptions {
                dataset: a.dataset,
                layout: a.layout,
                out: a.out,
                narrative: a.narrative,
                palette,
                generated_at: a.generated_at,
            })?;
            println!("{n} uses exported");
        }
        Command::Serve(a) => {
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(server::serve(ServeConfig {
                atlas: a.atlas,
                host: a.host,
                port: a.port,
                static_dir: a.static_dir,
            }))?;
        }
        Command::Pipeline(a) => {
            let r = pipeline::run_file(&a.config, a.out_dir.as_deref())?;
            println!(
                "{} incidents kept, {} format failures, {} uses ({} low, {} high, {} unacceptable) in {:.2?}",
                r.kept_incidents,
                r.format_failures,
                r.summary.total_uses,
                r.summary.low,
                r.summary.high,
                r.summary.unacceptable,
                r.elapsed
            );
            println!("atlas written to {}", r.artifacts.atlas.display());
        }
    }
    Ok(())
}
