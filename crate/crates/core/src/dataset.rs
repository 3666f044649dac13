//! Corpus loading: the canonical JSON-Lines schema (one [`RawInstance`] per
//! line) and an adapter for the public CICERO release layout.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::model::{validate_instance, McqInstance, RawInstance, Utterance, ValidationError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusFormat {
    Canonical,
    CiceroRelease,
}

impl FromStr for CorpusFormat {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('-', "_").as_str() {
            "canonical" => Ok(CorpusFormat::Canonical),
            "cicero_release" => Ok(CorpusFormat::CiceroRelease),
            _ => Err(DatasetError::UnknownFormat(s.to_string())),
        }
    }
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("line {line}: malformed record: {message}")]
    MalformedLine { line: usize, message: String },
    #[error("line {line}: {source}")]
    ValidationFailed {
        line: usize,
        #[source]
        source: ValidationError,
    },
    #[error("line {line}: duplicate instance id `{id}`")]
    DuplicateId { line: usize, id: String },
    #[error("unknown corpus format `{0}` (expected canonical or cicero_release)")]
    UnknownFormat(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// An ordered collection of instances with unique ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Corpus {
    name: String,
    instances: Vec<McqInstance>,
    source_path: String,
}

impl Corpus {
    pub fn new(
        name: impl Into<String>,
        instances: Vec<McqInstance>,
        source_path: impl Into<String>,
    ) -> Result<Self, DatasetError> {
        let mut seen = HashSet::new();
        for (k, inst) in instances.iter().enumerate() {
            if !seen.insert(inst.id()) {
                return Err(DatasetError::DuplicateId {
                    line: k + 1,
                    id: inst.id().to_string(),
                });
            }
        }
        Ok(Self {
            name: name.into(),
            instances,
            source_path: source_path.into(),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn instances(&self) -> &[McqInstance] {
        &self.instances
    }

    pub fn source_path(&self) -> &str {
        &self.source_path
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&McqInstance> {
        self.instances.iter().find(|i| i.id() == id)
    }
}

/// Loads a corpus; its name is the file stem.
pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<Corpus, DatasetError> {
    let text = fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let source_path = path.display().to_string();
    let instances = match format {
        CorpusFormat::Canonical => parse_canonical(&text)?,
        CorpusFormat::CiceroRelease => parse_cicero(&text)?,
    };
    Corpus::new(name, instances, source_path)
}

fn numbered_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty())
}

fn parse_canonical(text: &str) -> Result<Vec<McqInstance>, DatasetError> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (line, l) in numbered_lines(text) {
        let raw: RawInstance =
            serde_json::from_str(l).map_err(|e| DatasetError::MalformedLine {
                line,
                message: e.to_string(),
            })?;
        let inst = validate_instance(raw)
            .map_err(|source| DatasetError::ValidationFailed { line, source })?;
        if !seen.insert(inst.id().to_string()) {
            return Err(DatasetError::DuplicateId {
                line,
                id: inst.id().to_string(),
            });
        }
        out.push(inst);
    }
    Ok(out)
}

/// Writes the canonical JSON-Lines form.
pub fn save_corpus(corpus: &Corpus, path: &Path) -> Result<(), DatasetError> {
    let io = |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut buf = Vec::new();
    for inst in corpus.instances() {
        serde_json::to_writer(&mut buf, inst).expect("instances serialize");
        buf.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(io)?;
    f.write_all(&buf).map_err(io)
}

/// Instances with more than one correct option, order preserved.
pub fn filter_multi(corpus: &Corpus) -> Corpus {
    Corpus {
        name: corpus.name.clone(),
        instances: corpus
            .instances
            .iter()
            .filter(|i| i.gold().len() > 1)
            .cloned()
            .collect(),
        source_path: corpus.source_path.clone(),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub n_instances: usize,
    pub by_gold_count: BTreeMap<usize, usize>,
    /// Instances without an inference type are counted under `unknown`.
    pub by_inference_type: BTreeMap<String, usize>,
    /// Distinct dialogues by content.
    pub n_dialogues: usize,
}

pub fn corpus_stats(corpus: &Corpus) -> CorpusStats {
    let mut stats = CorpusStats {
        n_instances: corpus.len(),
        ..CorpusStats::default()
    };
    let mut dialogues = BTreeSet::new();
    for inst in corpus.instances() {
        *stats.by_gold_count.entry(inst.gold().len()).or_default() += 1;
        let kind = inst.inference_type().unwrap_or("unknown").to_string();
        *stats.by_inference_type.entry(kind).or_default() += 1;
        dialogues.insert(inst.dialogue());
    }
    stats.n_dialogues = dialogues.len();
    stats
}

impl std::fmt::Display for CorpusStats {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "instances  {}", self.n_instances)?;
        writeln!(f, "dialogues  {}", self.n_dialogues)?;
        writeln!(f, "by number of correct options:")?;
        for (k, n) in &self.by_gold_count {
            writeln!(f, "  {k:>2}  {n}")?;
        }
        writeln!(f, "by inference type:")?;
        for (k, n) in &self.by_inference_type {
            writeln!(f, "  {k:<12}  {n}")?;
        }
        Ok(())
    }
}

// CICERO release adapter.

fn normalize(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Maps the question wording of the release onto an inference type.
fn inference_type_of(question: &str) -> Option<&'static str> {
    let q = question.to_lowercase();
    [
        ("subsequent", "consequence"),
        ("prerequisite", "premise"),
        ("motivation", "motivation"),
        ("emotional reaction", "reaction"),
        ("reaction", "reaction"),
        ("cause", "cause"),
    ]
    .into_iter()
    .find(|(key, _)| q.contains(key))
    .map(|(_, kind)| kind)
}

fn split_turn(turn: &str) -> Utterance {
    match turn.split_once(':') {
        Some((speaker, text))
            if !speaker.trim().is_empty() && speaker.split_whitespace().count() <= 3 =>
        {
            Utterance::new(speaker.trim(), text.trim())
        }
        _ => Utterance::new("", turn.trim()),
    }
}

fn field<'a>(obj: &'a serde_json::Map<String, Value>, names: &[&str]) -> Option<&'a Value> {
    names.iter().find_map(|n| obj.get(*n))
}

fn cicero_record(value: &Value, line: usize) -> Result<McqInstance, DatasetError> {
    let bad = |message: String| DatasetError::MalformedLine { line, message };
    let obj = value
        .as_object()
        .ok_or_else(|| bad("record is not a JSON object".into()))?;
    let string = |names: &[&str]| -> Result<String, DatasetError> {
        match field(obj, names) {
            Some(Value::String(s)) => Ok(s.clone()),
            Some(Value::Number(n)) => Ok(n.to_string()),
            _ => Err(bad(format!("missing string field `{}`", names[0]))),
        }
    };
    let strings = |names: &[&str]| -> Result<Vec<String>, DatasetError> {
        match field(obj, names) {
            Some(Value::Array(items)) => items
                .iter()
                .map(|v| {
                    v.as_str()
                        .map(str::to_string)
                        .ok_or_else(|| bad(format!("field `{}` must hold strings", names[0])))
                })
                .collect(),
            _ => Err(bad(format!("missing array field `{}`", names[0]))),
        }
    };

    let id = string(&["ID", "id"])?;
    let dialogue: Vec<Utterance> = strings(&["Dialogue", "dialogue"])?
        .iter()
        .map(|t| split_turn(t))
        .collect();
    let target = normalize(&string(&["Target", "target"])?);
    let target_index = dialogue
        .iter()
        .position(|u| normalize(&u.text) == target)
        .or_else(|| {
            dialogue
                .iter()
                .position(|u| normalize(&format!("{}: {}", u.speaker, u.text)) == target)
        })
        .ok_or_else(|| bad("target utterance does not occur in the dialogue".into()))?;
    let question = string(&["Question", "question"])?;
    let options = strings(&["Choices", "choices", "Options", "options"])?;
    let normalized: Vec<String> = options.iter().map(|o| normalize(o)).collect();
    let answers = match field(obj, &["Correct Answers", "correct_answers", "answers"]) {
        Some(Value::Array(items)) => items
            .iter()
            .map(|v| match v {
                Value::Number(n) => n
                    .as_u64()
                    .map(|n| n as usize)
                    .ok_or_else(|| bad(format!("answer {n} is not an index"))),
                Value::String(s) => normalized
                    .iter()
                    .position(|o| *o == normalize(s))
                    .ok_or_else(|| bad(format!("answer `{s}` matches no option"))),
                other => Err(bad(format!("answer {other} is neither index nor text"))),
            })
            .collect::<Result<Vec<_>, _>>()?,
        Some(Value::Number(n)) => vec![n
            .as_u64()
            .ok_or_else(|| bad(format!("answer {n} is not an index")))?
            as usize],
        _ => return Err(bad("missing field `Correct Answers`".into())),
    };
    let inference_type = inference_type_of(&question).map(str::to_string);
    validate_instance(RawInstance {
        id,
        dialogue,
        target_index,
        question,
        options,
        answers,
        inference_type,
    })
    .map_err(|source| DatasetError::ValidationFailed { line, source })
}

/// Accepts either a JSON array of records (positions count as lines) or one
/// record per line.
fn parse_cicero(text: &str) -> Result<Vec<McqInstance>, DatasetError> {
    let records: Vec<(usize, Value)> = if text.trim_start().starts_with('[') {
        let all: Vec<Value> =
            serde_json::from_str(text).map_err(|e| DatasetError::MalformedLine {
                line: e.line(),
                message: e.to_string(),
            })?;
        all.into_iter()
            .enumerate()
            .map(|(i, v)| (i + 1, v))
            .collect()
    } else {
        numbered_lines(text)
            .map(|(line, l)| {
                serde_json::from_str(l).map(|v| (line, v)).map_err(|e| {
                    DatasetError::MalformedLine {
                        line,
                        message: e.to_string(),
                    }
                })
            })
            .collect::<Result<_, _>>()?
    };
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(records.len());
    for (line, value) in records {
        let inst = cicero_record(&value, line)?;
        if !seen.insert(inst.id().to_string()) {
            return Err(DatasetError::DuplicateId {
                line,
                id: inst.id().to_string(),
            });
        }
        out.push(inst);
    }
    Ok(out)
}
