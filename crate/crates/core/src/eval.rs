//! Exact Match and binary macro-F1 over (instance, option) samples, the
//! breakdown by number of correct options, and strategy comparison tables.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Corpus;
use crate::model::{OptionSet, Prediction, Strategy};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("no samples to score")]
    EmptyInput,
    #[error("no prediction for instance `{0}`")]
    MissingPrediction(String),
    #[error("prediction for `{0}` matches no remaining corpus instance")]
    UnknownInstance(String),
    #[error("predictions mix strategies {0} and {1}")]
    MixedStrategies(Strategy, Strategy),
}

/// 1 iff the sets are equal.
pub fn exact_match(pred: &OptionSet, gold: &OptionSet) -> u32 {
    u32::from(pred == gold)
}

/// Binary confusion counts; the positive class is "option is correct".
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

fn f1(tp: u64, fp: u64, fn_: u64) -> f64 {
    // No true and no predicted samples of this class: perfect by convention.
    if tp + fp + fn_ == 0 {
        return 1.0;
    }
    (2 * tp) as f64 / (2 * tp + fp + fn_) as f64
}

impl Confusion {
    /// Adds the `m` binary samples of one instance.
    pub fn add(&mut self, pred: &OptionSet, gold: &OptionSet, m: usize) {
        for i in 0..m {
            match (pred.contains(&i), gold.contains(&i)) {
                (true, true) => self.tp += 1,
                (true, false) => self.fp += 1,
                (false, true) => self.fn_ += 1,
                (false, false) => self.tn += 1,
            }
        }
    }

    pub fn merge(&mut self, other: &Confusion) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.tn += other.tn;
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn positive_f1(&self) -> f64 {
        f1(self.tp, self.fp, self.fn_)
    }

    pub fn negative_f1(&self) -> f64 {
        f1(self.tn, self.fn_, self.fp)
    }

    pub fn macro_f1(&self) -> f64 {
        (self.positive_f1() + self.negative_f1()) / 2.0
    }
}

/// Macro-F1 over `(pred, gold, m)` triples.
pub fn macro_f1(pairs: &[(OptionSet, OptionSet, usize)]) -> Result<f64, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut c = Confusion::default();
    for (pred, gold, m) in pairs {
        c.add(pred, gold, *m);
    }
    Ok(c.macro_f1())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    pub n: usize,
    pub exact_matches: usize,
    pub macro_f1: f64,
    pub em: f64,
    pub confusion: Confusion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub strategy: Strategy,
    pub corpus_name: String,
    pub n_instances: usize,
    pub macro_f1: f64,
    pub exact_match: f64,
    pub exact_matches: usize,
    pub confusion: Confusion,
    /// Keyed by the number of correct options.
    pub by_gold_count: BTreeMap<usize, Bucket>,
    pub n_fallback: usize,
    pub n_errors: usize,
    pub config_fingerprint: String,
}

/// Every coverage violation between `predictions` and `corpus`: a prediction
/// whose id is unknown or already consumed is `UnknownInstance`, an instance
/// left without a prediction is `MissingPrediction`.
pub fn coverage_errors(predictions: &[Prediction], corpus: &Corpus) -> Vec<EvalError> {
    let mut remaining: BTreeSet<&str> = corpus.instances().iter().map(|i| i.id()).collect();
    let mut errors = Vec::new();
    for p in predictions {
        if !remaining.remove(p.instance_id.as_str()) {
            errors.push(EvalError::UnknownInstance(p.instance_id.clone()));
        }
    }
    errors.extend(
        remaining
            .into_iter()
            .map(|id| EvalError::MissingPrediction(id.to_string())),
    );
    errors
}

pub fn evaluate(
    predictions: &[Prediction],
    corpus: &Corpus,
    config_fingerprint: &str,
) -> Result<EvalReport, EvalError> {
    if corpus.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    if let Some(e) = coverage_errors(predictions, corpus).into_iter().next() {
        return Err(e);
    }
    let strategy = predictions[0].strategy;
    if let Some(p) = predictions.iter().find(|p| p.strategy != strategy) {
        return Err(EvalError::MixedStrategies(strategy, p.strategy));
    }
    let by_id: HashMap<&str, &Prediction> = predictions
        .iter()
        .map(|p| (p.instance_id.as_str(), p))
        .collect();

    let mut confusion = Confusion::default();
    let mut exact_matches = 0;
    let mut buckets: BTreeMap<usize, (usize, usize, Confusion)> = BTreeMap::new();
    for inst in corpus.instances() {
        let pred = &by_id[inst.id()].chosen;
        let em = exact_match(pred, inst.gold()) as usize;
        exact_matches += em;
        confusion.add(pred, inst.gold(), inst.num_options());
        let b = buckets.entry(inst.gold().len()).or_default();
        b.0 += 1;
        b.1 += em;
        b.2.add(pred, inst.gold(), inst.num_options());
    }
    let n = corpus.len();
    Ok(EvalReport {
        strategy,
        corpus_name: corpus.name().to_string(),
        n_instances: n,
        macro_f1: confusion.macro_f1(),
        exact_match: exact_matches as f64 / n as f64,
        exact_matches,
        confusion,
        by_gold_count: buckets
            .into_iter()
            .map(|(k, (n, e, c))| {
                (
                    k,
                    Bucket {
                        n,
                        exact_matches: e,
                        macro_f1: c.macro_f1(),
                        em: e as f64 / n as f64,
                        confusion: c,
                    },
                )
            })
            .collect(),
        n_fallback: predictions.iter().filter(|p| p.fallback_used).count(),
        n_errors: predictions.iter().filter(|p| p.error.is_some()).count(),
        config_fingerprint: config_fingerprint.to_string(),
    })
}

/// `by_gold_count.csv` contents.
pub fn by_gold_count_csv(report: &EvalReport) -> String {
    let mut out = String::from("gold_count,n,macro_f1,em\n");
    for (k, b) in &report.by_gold_count {
        writeln!(out, "{k},{},{:.6},{:.6}", b.n, b.macro_f1, b.em).unwrap();
    }
    out
}

/// `report.txt` contents.
pub fn report_text(report: &EvalReport) -> String {
    let mut out = String::new();
    writeln!(out, "strategy     {}", report.strategy).unwrap();
    writeln!(out, "corpus       {}", report.corpus_name).unwrap();
    writeln!(out, "instances    {}", report.n_instances).unwrap();
    writeln!(out, "macro-F1     {:.2}", report.macro_f1 * 100.0).unwrap();
    writeln!(out, "EM           {:.2}", report.exact_match * 100.0).unwrap();
    writeln!(out, "fallbacks    {}", report.n_fallback).unwrap();
    writeln!(out, "errors       {}", report.n_errors).unwrap();
    writeln!(out, "fingerprint  {}", report.config_fingerprint).unwrap();
    writeln!(out).unwrap();
    writeln!(
        out,
        "{:>10}  {:>6}  {:>8}  {:>8}",
        "#correct", "n", "macro-F1", "EM"
    )
    .unwrap();
    for (k, b) in &report.by_gold_count {
        writeln!(
            out,
            "{k:>10}  {:>6}  {:>8.2}  {:>8.2}",
            b.n,
            b.macro_f1 * 100.0,
            b.em * 100.0
        )
        .unwrap();
    }
    out
}

/// One (F1, EM) cell; several reports for the same strategy and corpus are
/// averaged.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub macro_f1: f64,
    pub exact_match: f64,
    pub runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub strategy: String,
    pub cells: BTreeMap<String, Cell>,
}

/// Rows are strategies sorted by name, column groups are corpora sorted by
/// name. Scores are percentages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub corpora: Vec<String>,
    pub rows: Vec<ComparisonRow>,
}

pub fn compare_report(reports: &[EvalReport]) -> Comparison {
    let mut sums: BTreeMap<String, BTreeMap<String, (f64, f64, usize)>> = BTreeMap::new();
    let mut corpora = BTreeSet::new();
    // Sort first so the floating-point sums do not depend on input order.
    let mut sorted: Vec<&EvalReport> = reports.iter().collect();
    sorted.sort_by(|a, b| {
        (a.strategy.name(), &a.corpus_name, a.macro_f1, a.exact_match)
            .partial_cmp(&(b.strategy.name(), &b.corpus_name, b.macro_f1, b.exact_match))
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    for r in sorted {
        corpora.insert(r.corpus_name.clone());
        let e = sums
            .entry(r.strategy.name().to_string())
            .or_default()
            .entry(r.corpus_name.clone())
            .or_default();
        e.0 += r.macro_f1;
        e.1 += r.exact_match;
        e.2 += 1;
    }
    Comparison {
        corpora: corpora.into_iter().collect(),
        rows: sums
            .into_iter()
            .map(|(strategy, cells)| ComparisonRow {
                strategy,
                cells: cells
                    .into_iter()
                    .map(|(corpus, (f, e, n))| {
                        let round = |x: f64| (x / n as f64 * 10000.0).round() / 100.0;
                        (
                            corpus,
                            Cell {
                                macro_f1: round(f),
                                exact_match: round(e),
                                runs: n,
                            },
                        )
                    })
                    .collect(),
            })
            .collect(),
    }
}

impl Comparison {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("comparison serializes") + "\n"
    }

    pub fn to_text(&self) -> String {
        let name_w = self
            .rows
            .iter()
            .map(|r| r.strategy.len())
            .chain(["Strategy".len()])
            .max()
            .unwrap_or(8);
        let group_w: Vec<usize> = self.corpora.iter().map(|c| c.len().max(15)).collect();
        let mut lines = Vec::with_capacity(self.rows.len() + 2);
        let mut header = format!("{:<name_w$}", "Strategy");
        let mut sub = format!("{:<name_w$}", "");
        for (c, w) in self.corpora.iter().zip(&group_w) {
            write!(header, "  {c:>w$}").unwrap();
            write!(sub, "  {:>w$}", format!("{:>7}{:>8}", "F1", "EM")).unwrap();
        }
        lines.push(header);
        lines.push(sub);
        for row in &self.rows {
            let mut line = format!("{:<name_w$}", row.strategy);
            for (c, w) in self.corpora.iter().zip(&group_w) {
                let cell = match row.cells.get(c) {
                    Some(cell) => format!("{:>7.2}{:>8.2}", cell.macro_f1, cell.exact_match),
                    None => format!("{:>7}{:>8}", "-", "-"),
                };
                write!(line, "  {cell:>w$}").unwrap();
            }
            lines.push(line);
        }
        lines
            .iter()
            .map(|l| l.trim_end().to_string() + "\n")
            .collect()
    }
}
