//! `dcmcq`: run strategies over corpora, compare reports, inspect corpora and
//! manage the completion cache.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Deserialize;

use dcmcq_core::backend::{CacheMode, CacheStore};
use dcmcq_core::dataset::{corpus_stats, filter_multi, load_corpus, CorpusFormat};
use dcmcq_core::eval::{compare_report, report_text, EvalReport};
use dcmcq_core::model::Strategy;
use dcmcq_core::reasoner::{TieBreak, VoteKind};
use dcmcq_core::runner::{self, BackendKind, RunConfig, RunError};

#[derive(Debug, Parser)]
#[command(
    name = "dcmcq",
    version,
    about = "Reverse-exclusion reasoning for dialogue multi-choice QA"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one strategy over a corpus and write predictions, traces and reports.
    Run(Box<RunArgs>),
    /// Print a comparison table of report.json files.
    Compare {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        /// Emit JSON instead of the aligned table.
        #[arg(long)]
        json: bool,
    },
    /// Print corpus statistics.
    Stats {
        corpus: PathBuf,
        #[arg(long, default_value = "canonical", value_parser = parse_format)]
        format: CorpusFormat,
        #[arg(long)]
        multi_only: bool,
        #[arg(long)]
        json: bool,
    },
    /// Manage the completion cache.
    Cache {
        #[command(subcommand)]
        action: CacheAction,
    },
}

#[derive(Debug, Subcommand)]
enum CacheAction {
    /// Delete every cached completion under the directory.
    Purge {
        #[arg(long)]
        cache_dir: PathBuf,
    },
}

/// Every flag overrides the same key of the `--config` file.
#[derive(Debug, Args, Default)]
struct RunArgs {
    /// TOML file with defaults for any of the flags below (snake_case keys).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// canonical | cicero_release
    #[arg(long)]
    format: Option<String>,
    #[arg(long)]
    multi_only: bool,
    /// standard | cot | forward | backward | rex_got
    #[arg(long)]
    strategy: Option<String>,
    /// http | scripted
    #[arg(long)]
    backend: Option<String>,
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    script: Option<PathBuf>,
    /// Environment variable holding the API key.
    #[arg(long)]
    api_key_env: Option<String>,
    #[arg(long)]
    timeout_secs: Option<u64>,
    /// Reasoning paths for rex_got.
    #[arg(long)]
    k: Option<u32>,
    #[arg(long)]
    temperature_step1: Option<f64>,
    #[arg(long)]
    temperature_step2: Option<f64>,
    #[arg(long)]
    temperature_step3: Option<f64>,
    #[arg(long)]
    temperature_baseline: Option<f64>,
    #[arg(long)]
    max_tokens: Option<u32>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long = "stop")]
    stop_sequences: Vec<String>,
    /// per_option_majority | path_plurality
    #[arg(long)]
    vote: Option<String>,
    /// prefer_exclude | prefer_include
    #[arg(long)]
    tie_break: Option<String>,
    #[arg(long)]
    max_prompt_tokens: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
    /// off | record | replay
    #[arg(long)]
    cache: Option<String>,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    repeat: Option<u32>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    corpus: Option<PathBuf>,
    format: Option<String>,
    multi_only: Option<bool>,
    strategy: Option<String>,
    backend: Option<String>,
    endpoint: Option<String>,
    script: Option<PathBuf>,
    api_key_env: Option<String>,
    timeout_secs: Option<u64>,
    k: Option<u32>,
    temperature_step1: Option<f64>,
    temperature_step2: Option<f64>,
    temperature_step3: Option<f64>,
    temperature_baseline: Option<f64>,
    max_tokens: Option<u32>,
    model: Option<String>,
    stop_sequences: Option<Vec<String>>,
    vote: Option<String>,
    tie_break: Option<String>,
    max_prompt_tokens: Option<usize>,
    workers: Option<usize>,
    cache: Option<String>,
    cache_dir: Option<PathBuf>,
    output: Option<PathBuf>,
    seed: Option<u64>,
    repeat: Option<u32>,
}

/// Parses a snake_case enum name through serde; `-` is accepted for `_`.
fn parse_enum<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.trim().replace('-', "_")))
        .map_err(|_| format!("unrecognized value `{s}`"))
}

fn parse_format(s: &str) -> Result<CorpusFormat, String> {
    s.parse().map_err(|e| format!("{e}"))
}

fn parse_strategy(s: &str) -> Result<Strategy> {
    Strategy::from_name(s).with_context(|| {
        format!("unknown strategy `{s}` (expected standard, cot, forward, backward or rex_got)")
    })
}

fn enum_arg<T: DeserializeOwned>(name: &str, value: &str) -> Result<T> {
    parse_enum(value).map_err(|e| anyhow::anyhow!("--{name}: {e}"))
}

impl RunArgs {
    /// Flags first, then the config file, then built-in defaults. Relative
    /// paths in the config file are resolved against its directory.
    fn into_config(self) -> Result<RunConfig> {
        let file = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading {}", path.display()))?;
                toml::from_str::<FileConfig>(&text)
                    .with_context(|| format!("parsing {}", path.display()))?
            }
            None => FileConfig::default(),
        };
        let base = self
            .config
            .as_deref()
            .and_then(Path::parent)
            .map(Path::to_path_buf)
            .unwrap_or_default();
        let rel = |p: Option<PathBuf>| p.map(|p| if p.is_absolute() { p } else { base.join(p) });

        let mut c = RunConfig {
            corpus: self
                .corpus
                .or_else(|| rel(file.corpus))
                .context("no corpus given (use --corpus or `corpus` in the config file)")?,
            ..RunConfig::default()
        };
        if let Some(f) = self.format.or(file.format) {
            c.format = parse_format(&f).map_err(anyhow::Error::msg)?;
        }
        c.multi_only = self.multi_only || file.multi_only.unwrap_or(false);
        if let Some(s) = self.strategy.or(file.strategy) {
            c.strategy = parse_strategy(&s)?;
        }
        if let Some(b) = self.backend.or(file.backend) {
            c.backend = enum_arg::<BackendKind>("backend", &b)?;
        }
        c.endpoint = self.endpoint.or(file.endpoint);
        c.script = self.script.or_else(|| rel(file.script));
        if let Some(v) = self.api_key_env.or(file.api_key_env) {
            c.api_key_env = v;
        }
        if let Some(v) = self.timeout_secs.or(file.timeout_secs) {
            c.timeout_secs = v;
        }
        let r = &mut c.reasoner;
        if let Some(v) = self.k.or(file.k) {
            r.k = v;
        }
        if let Some(v) = self.temperature_step1.or(file.temperature_step1) {
            r.temperature_step1 = v;
        }
        if let Some(v) = self.temperature_step2.or(file.temperature_step2) {
            r.temperature_step2 = v;
        }
        if let Some(v) = self.temperature_step3.or(file.temperature_step3) {
            r.temperature_step3 = v;
        }
        if let Some(v) = self.temperature_baseline.or(file.temperature_baseline) {
            r.temperature_baseline = v;
        }
        if let Some(v) = self.max_tokens.or(file.max_tokens) {
            r.max_tokens = v;
        }
        if let Some(v) = self.model.or(file.model) {
            r.model_name = v;
        }
        if !self.stop_sequences.is_empty() {
            r.stop_sequences = self.stop_sequences;
        } else if let Some(v) = file.stop_sequences {
            r.stop_sequences = v;
        }
        if let Some(v) = self.vote.or(file.vote) {
            r.vote_policy.kind = enum_arg::<VoteKind>("vote", &v)?;
        }
        if let Some(v) = self.tie_break.or(file.tie_break) {
            r.vote_policy.tie_break = enum_arg::<TieBreak>("tie-break", &v)?;
        }
        r.max_prompt_tokens = self.max_prompt_tokens.or(file.max_prompt_tokens);
        if let Some(v) = self.workers.or(file.workers) {
            c.workers = v;
        }
        if let Some(v) = self.cache.or(file.cache) {
            c.cache = enum_arg::<CacheMode>("cache", &v)?;
        }
        c.cache_dir = self.cache_dir.or_else(|| rel(file.cache_dir));
        if let Some(v) = self.output.or_else(|| rel(file.output)) {
            c.output = v;
        }
        if let Some(v) = self.seed.or(file.seed) {
            c.seed = v;
        }
        if let Some(v) = self.repeat.or(file.repeat) {
            c.repeat = v;
        }
        Ok(c)
    }
}

fn cmd_run(args: RunArgs) -> Result<ExitCode> {
    let config = args.into_config()?;
    let summary = match runner::run(&config) {
        Ok(s) => s,
        Err(e @ RunError::Config(_)) => bail!(e),
        Err(e) => return Err(e).context("run failed"),
    };
    let last = summary.reports.last().expect("at least one run");
    print!("{}", report_text(last));
    if let Some(avg) = &summary.average {
        println!(
            "\nmean over {} runs: macro-F1 {:.2}  EM {:.2}",
            avg.runs,
            avg.macro_f1 * 100.0,
            avg.exact_match * 100.0
        );
    }
    println!("outputs written to {}", config.output.display());
    if summary.n_errors > 0 {
        eprintln!(
            "{} instance(s) failed and were answered by the fallback chain",
            summary.n_errors
        );
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_compare(paths: &[PathBuf], json: bool) -> Result<ExitCode> {
    let reports = paths
        .iter()
        .map(|p| {
            let text =
                std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str::<EvalReport>(&text)
                .with_context(|| format!("{} is not a report.json file", p.display()))
        })
        .collect::<Result<Vec<_>>>()?;
    let table = compare_report(&reports);
    print!(
        "{}",
        if json {
            table.to_json()
        } else {
            table.to_text()
        }
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_stats(
    corpus: &Path,
    format: CorpusFormat,
    multi_only: bool,
    json: bool,
) -> Result<ExitCode> {
    let mut c = load_corpus(corpus, format)?;
    if multi_only {
        c = filter_multi(&c);
    }
    let stats = corpus_stats(&c);
    if json {
        println!("{}", serde_json::to_string_pretty(&stats)?);
    } else {
        print!("{stats}");
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(*args),
        Command::Compare { reports, json } => cmd_compare(&reports, json),
        Command::Stats {
            corpus,
            format,
            multi_only,
            json,
        } => cmd_stats(&corpus, format, multi_only, json),
        Command::Cache {
            action: CacheAction::Purge { cache_dir },
        } => CacheStore::new(cache_dir)
            .purge()
            .map(|n| {
                println!("removed {n} cached completion(s)");
                ExitCode::SUCCESS
            })
            .context("purging cache"),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        ExitCode::FAILURE
    })
}
