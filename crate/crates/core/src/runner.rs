//! Batch runs: validates a [`RunConfig`], assembles the backend stack, runs a
//! strategy over a corpus on a worker pool and writes predictions, traces and
//! reports.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{
    sha256_hex, Backend, BackendError, CacheMode, CacheStore, CachedBackend, HttpBackend,
    ScriptedBackend, UreqTransport,
};
use crate::dataset::{filter_multi, load_corpus, Corpus, CorpusFormat, DatasetError};
use crate::eval::{by_gold_count_csv, evaluate, report_text, EvalError, EvalReport};
use crate::model::{Prediction, Strategy};
use crate::prompts::TEMPLATE_VERSION;
use crate::reasoner::{failed_prediction, run_strategy, ReasonerConfig, ThoughtGraph};

pub const DEFAULT_API_KEY_ENV: &str = "DCMCQ_API_KEY";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Http,
    Scripted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: PathBuf,
    pub format: CorpusFormat,
    /// Keep only instances with more than one correct option.
    pub multi_only: bool,
    pub strategy: Strategy,
    pub backend: BackendKind,
    /// Base URL of an OpenAI-compatible server (`http` backend).
    pub endpoint: Option<String>,
    /// Script file (`scripted` backend).
    pub script: Option<PathBuf>,
    pub api_key_env: String,
    pub timeout_secs: u64,
    pub reasoner: ReasonerConfig,
    pub workers: usize,
    pub cache: CacheMode,
    pub cache_dir: Option<PathBuf>,
    pub output: PathBuf,
    /// Recorded in the fingerprint; sampling randomness lives in the backend.
    pub seed: u64,
    pub repeat: u32,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            corpus: PathBuf::new(),
            format: CorpusFormat::Canonical,
            multi_only: false,
            strategy: Strategy::RexGot,
            backend: BackendKind::Http,
            endpoint: None,
            script: None,
            api_key_env: DEFAULT_API_KEY_ENV.to_string(),
            timeout_secs: 120,
            reasoner: ReasonerConfig::default(),
            workers: 1,
            cache: CacheMode::Off,
            cache_dir: None,
            output: PathBuf::from("out"),
            seed: 0,
            repeat: 1,
        }
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl RunConfig {
    /// Checks everything that can be checked without calling a backend.
    pub fn validate(&self) -> Result<(), RunError> {
        let bad = |m: String| Err(RunError::Config(m));
        let r = &self.reasoner;
        if r.k == 0 {
            return bad("k must be at least 1".into());
        }
        if self.workers == 0 {
            return bad("workers must be at least 1".into());
        }
        if self.repeat == 0 {
            return bad("repeat must be at least 1".into());
        }
        if r.max_tokens == 0 {
            return bad("max_tokens must be at least 1".into());
        }
        for (name, t) in [
            ("temperature_step1", r.temperature_step1),
            ("temperature_step2", r.temperature_step2),
            ("temperature_step3", r.temperature_step3),
            ("temperature_baseline", r.temperature_baseline),
        ] {
            if !(0.0..=2.0).contains(&t) {
                return bad(format!("{name} must lie in [0, 2], got {t}"));
            }
        }
        if !self.corpus.is_file() {
            return bad(format!(
                "corpus file {} does not exist",
                self.corpus.display()
            ));
        }
        match self.cache {
            CacheMode::Off => {}
            CacheMode::Record => {
                if self.cache_dir.is_none() {
                    return bad("cache mode record needs a cache directory".into());
                }
            }
            CacheMode::Replay => match &self.cache_dir {
                Some(d) if d.is_dir() => {}
                Some(d) => {
                    return bad(format!(
                        "cache mode replay needs an existing cache directory; {} not found",
                        d.display()
                    ))
                }
                None => return bad("cache mode replay needs a cache directory".into()),
            },
        }
        // Replay never reaches the inner backend, so its settings are not needed.
        if self.cache != CacheMode::Replay {
            match self.backend {
                BackendKind::Http if self.endpoint.is_none() => {
                    return bad("the http backend needs an endpoint".into())
                }
                BackendKind::Scripted => match &self.script {
                    Some(p) if p.is_file() => {}
                    Some(p) => return bad(format!("script file {} does not exist", p.display())),
                    None => return bad("the scripted backend needs a script file".into()),
                },
                _ => {}
            }
        }
        Ok(())
    }

    /// Digest of every parameter that can change a prediction. Output paths,
    /// worker count, cache mode and repeat count are left out, so replaying a
    /// recorded run reproduces its reports byte for byte.
    pub fn fingerprint(&self, corpus_name: &str) -> String {
        let r = &self.reasoner;
        let value = serde_json::json!({
            "template_version": TEMPLATE_VERSION,
            "corpus": corpus_name,
            "format": self.format,
            "multi_only": self.multi_only,
            "strategy": self.strategy,
            "backend": self.backend,
            "endpoint": self.endpoint,
            "model_name": r.model_name,
            "k": r.k,
            "temperature_step1": r.temperature_step1,
            "temperature_step2": r.temperature_step2,
            "temperature_step3": r.temperature_step3,
            "temperature_baseline": r.temperature_baseline,
            "max_tokens": r.max_tokens,
            "stop_sequences": r.stop_sequences,
            "vote_policy": r.vote_policy,
            "max_prompt_tokens": r.max_prompt_tokens,
            "seed": self.seed,
        });
        // serde_json maps are ordered by key, so this is canonical.
        sha256_hex(&serde_json::to_vec(&value).expect("json serializes"))
    }
}

/// Builds the backend stack described by `config`.
pub fn build_backend(config: &RunConfig) -> Result<Arc<dyn Backend>, RunError> {
    let store = || {
        CacheStore::new(
            config
                .cache_dir
                .clone()
                .expect("validated: cache modes other than off have a directory"),
        )
    };
    if config.cache == CacheMode::Replay {
        return Ok(Arc::new(CachedBackend::replay(store())));
    }
    let inner: Arc<dyn Backend> = match config.backend {
        BackendKind::Scripted => Arc::new(ScriptedBackend::load(
            config
                .script
                .as_deref()
                .expect("validated: scripted has a script"),
        )?),
        BackendKind::Http => {
            let key = std::env::var(&config.api_key_env).ok();
            Arc::new(HttpBackend::with_transport(
                config
                    .endpoint
                    .as_deref()
                    .expect("validated: http has an endpoint"),
                key,
                Arc::new(UreqTransport::new(Duration::from_secs(config.timeout_secs))),
            ))
        }
    };
    Ok(match config.cache {
        CacheMode::Record => Arc::new(CachedBackend::record(inner, store())),
        _ => inner,
    })
}

/// Per-instance trace file contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub prediction: Prediction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graph: Option<ThoughtGraph>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatAverage {
    /// Means of the final metrics of each run; predictions are not pooled.
    pub label: String,
    pub strategy: Strategy,
    pub corpus_name: String,
    pub runs: usize,
    pub macro_f1: f64,
    pub exact_match: f64,
    pub per_run: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub reports: Vec<EvalReport>,
    pub average: Option<RepeatAverage>,
    /// Instances that failed outright, summed over repeats.
    pub n_errors: usize,
}

/// Runs one strategy over the corpus. Per-instance failures become fallback
/// predictions and are counted rather than aborting.
pub fn predict_corpus(
    corpus: &Corpus,
    strategy: Strategy,
    backend: &dyn Backend,
    config: &ReasonerConfig,
    workers: usize,
) -> Result<Vec<(Prediction, Option<ThoughtGraph>)>, RunError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| RunError::Config(format!("worker pool: {e}")))?;
    let mut out: Vec<(Prediction, Option<ThoughtGraph>)> = pool.install(|| {
        corpus
            .instances()
            .par_iter()
            .map(|inst| match run_strategy(inst, strategy, backend, config) {
                Ok(r) => r,
                Err(e) => {
                    tracing::warn!(instance = inst.id(), error = %e, "instance failed");
                    (failed_prediction(inst, strategy, &e), None)
                }
            })
            .collect()
    });
    out.sort_by(|a, b| a.0.instance_id.cmp(&b.0.instance_id));
    Ok(out)
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), RunError> {
    fs::write(path, bytes).map_err(|source| RunError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn create_dir(path: &Path) -> Result<(), RunError> {
    fs::create_dir_all(path).map_err(|source| RunError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// File name for an instance id: characters outside `[A-Za-z0-9._-]` become `_`.
pub fn trace_file_name(id: &str) -> String {
    let safe: String = id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-') {
                c
            } else {
                '_'
            }
        })
        .collect();
    format!("{safe}.json")
}

fn pretty(value: &impl Serialize) -> String {
    serde_json::to_string_pretty(value).expect("json serializes") + "\n"
}

/// Writes `predictions.jsonl`, `traces/`, `report.json`, `report.txt` and
/// `by_gold_count.csv` into `dir`.
pub fn write_outputs(
    dir: &Path,
    results: &[(Prediction, Option<ThoughtGraph>)],
    report: &EvalReport,
) -> Result<(), RunError> {
    let traces = dir.join("traces");
    create_dir(&traces)?;
    let mut lines = String::new();
    for (pred, graph) in results {
        lines.push_str(&serde_json::to_string(pred).expect("json serializes"));
        lines.push('\n');
        let trace = Trace {
            prediction: pred.clone(),
            graph: graph.clone(),
        };
        write(
            &traces.join(trace_file_name(&pred.instance_id)),
            pretty(&trace),
        )?;
    }
    write(&dir.join("predictions.jsonl"), lines)?;
    write(&dir.join("report.json"), pretty(report))?;
    write(&dir.join("report.txt"), report_text(report))?;
    write(&dir.join("by_gold_count.csv"), by_gold_count_csv(report))
}

/// Validates, loads, runs `repeat` times and writes every output. With
/// `repeat > 1` each run goes to `run-<i>/` and `average.json` holds the
/// mean of the final metrics.
pub fn run(config: &RunConfig) -> Result<RunSummary, RunError> {
    config.validate()?;
    let mut corpus = load_corpus(&config.corpus, config.format)?;
    if config.multi_only {
        corpus = filter_multi(&corpus);
    }
    if corpus.is_empty() {
        return Err(RunError::Config(format!(
            "corpus {} has no instances to run",
            config.corpus.display()
        )));
    }
    let backend = build_backend(config)?;
    let fingerprint = config.fingerprint(corpus.name());
    create_dir(&config.output)?;
    write(&config.output.join("run_config.json"), pretty(config))?;

    let mut reports = Vec::new();
    let mut n_errors = 0;
    for rep in 0..config.repeat {
        let dir = if config.repeat == 1 {
            config.output.clone()
        } else {
            config.output.join(format!("run-{}", rep + 1))
        };
        create_dir(&dir)?;
        tracing::info!(
            strategy = %config.strategy,
            corpus = corpus.name(),
            instances = corpus.len(),
            run = rep + 1,
            "starting run"
        );
        let results = predict_corpus(
            &corpus,
            config.strategy,
            backend.as_ref(),
            &config.reasoner,
            config.workers,
        )?;
        let preds: Vec<Prediction> = results.iter().map(|(p, _)| p.clone()).collect();
        let report = evaluate(&preds, &corpus, &fingerprint)?;
        n_errors += report.n_errors;
        write_outputs(&dir, &results, &report)?;
        reports.push(report);
    }

    let average = (config.repeat > 1).then(|| {
        let n = reports.len() as f64;
        RepeatAverage {
            label: "mean of per-run final metrics".into(),
            strategy: config.strategy,
            corpus_name: corpus.name().to_string(),
            runs: reports.len(),
            macro_f1: reports.iter().map(|r| r.macro_f1).sum::<f64>() / n,
            exact_match: reports.iter().map(|r| r.exact_match).sum::<f64>() / n,
            per_run: reports
                .iter()
                .map(|r| (r.macro_f1, r.exact_match))
                .collect(),
        }
    });
    if let Some(avg) = &average {
        write(&config.output.join("average.json"), pretty(avg))?;
    }
    Ok(RunSummary {
        reports,
        average,
        n_errors,
    })
}
