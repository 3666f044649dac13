//! Domain types shared by the whole pipeline.
//!
//! Options are addressed by 0-based index everywhere inside the crate. Letter
//! labels (`A`, `B`, ...) only appear when prompts are rendered and when model
//! output is parsed.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::reasoner::ReasoningPath;

/// Upper bound on the number of options, one per latin letter.
pub const MAX_OPTIONS: usize = 26;

/// A set of option indices. Ordered so that serialization is stable.
pub type OptionSet = BTreeSet<usize>;

/// Letter label for a 0-based option index.
///
/// Panics if `index >= MAX_OPTIONS`; validated instances never reach that.
pub fn option_label(index: usize) -> char {
    assert!(
        index < MAX_OPTIONS,
        "option index {index} has no letter label"
    );
    (b'A' + index as u8) as char
}

/// Inverse of [`option_label`], case-insensitive.
pub fn label_index(label: char) -> Option<usize> {
    let upper = label.to_ascii_uppercase();
    upper
        .is_ascii_uppercase()
        .then(|| (upper as u8 - b'A') as usize)
}

/// Renders a set as `A, B, E`.
pub fn format_labels(set: &OptionSet) -> String {
    set.iter()
        .map(|&i| option_label(i).to_string())
        .collect::<Vec<_>>()
        .join(", ")
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Utterance {
    pub speaker: String,
    pub text: String,
}

impl Utterance {
    pub fn new(speaker: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            speaker: speaker.into(),
            text: text.into(),
        }
    }
}

/// Why a candidate record could not become an [`McqInstance`].
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ValidationError {
    #[error("field `id` is empty")]
    EmptyId,
    #[error("field `dialogue` is empty")]
    EmptyDialogue,
    #[error("field `dialogue[{0}].text` is empty")]
    EmptyUtterance(usize),
    #[error("field `question` is empty")]
    EmptyQuestion,
    #[error("field `options` is empty")]
    EmptyOptions,
    #[error("field `options` has {0} entries; at least 2 are required")]
    TooFewOptions(usize),
    #[error("field `options` has {0} entries; at most 26 are supported")]
    TooManyOptions(usize),
    #[error("field `options[{0}]` is empty")]
    EmptyOption(usize),
    #[error("field `answers` contains {index}, outside [0, {m})")]
    GoldOutOfRange { index: usize, m: usize },
    #[error("field `answers` is empty")]
    EmptyGold,
    #[error("field `target_index` is {index}, outside [0, {n})")]
    TargetOutOfRange { index: usize, n: usize },
}

/// Unvalidated instance record; also the canonical JSON-Lines schema.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawInstance {
    pub id: String,
    pub dialogue: Vec<Utterance>,
    pub target_index: usize,
    pub question: String,
    pub options: Vec<String>,
    pub answers: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inference_type: Option<String>,
}

/// One validated multi-choice question about a target utterance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawInstance", into = "RawInstance")]
pub struct McqInstance {
    id: String,
    dialogue: Vec<Utterance>,
    target_index: usize,
    question: String,
    options: Vec<String>,
    gold: OptionSet,
    inference_type: Option<String>,
}

/// Checks every instance invariant and builds the instance.
pub fn validate_instance(raw: RawInstance) -> Result<McqInstance, ValidationError> {
    if raw.id.trim().is_empty() {
        return Err(ValidationError::EmptyId);
    }
    if raw.dialogue.is_empty() {
        return Err(ValidationError::EmptyDialogue);
    }
    if let Some(i) = raw.dialogue.iter().position(|u| u.text.trim().is_empty()) {
        return Err(ValidationError::EmptyUtterance(i));
    }
    if raw.target_index >= raw.dialogue.len() {
        return Err(ValidationError::TargetOutOfRange {
            index: raw.target_index,
            n: raw.dialogue.len(),
        });
    }
    if raw.question.trim().is_empty() {
        return Err(ValidationError::EmptyQuestion);
    }
    let m = raw.options.len();
    match m {
        0 => return Err(ValidationError::EmptyOptions),
        1 => return Err(ValidationError::TooFewOptions(1)),
        _ if m > MAX_OPTIONS => return Err(ValidationError::TooManyOptions(m)),
        _ => {}
    }
    if let Some(i) = raw.options.iter().position(|o| o.trim().is_empty()) {
        return Err(ValidationError::EmptyOption(i));
    }
    if let Some(&index) = raw.answers.iter().find(|&&a| a >= m) {
        return Err(ValidationError::GoldOutOfRange { index, m });
    }
    if raw.answers.is_empty() {
        return Err(ValidationError::EmptyGold);
    }
    Ok(McqInstance {
        id: raw.id,
        dialogue: raw.dialogue,
        target_index: raw.target_index,
        question: raw.question,
        options: raw.options,
        gold: raw.answers.into_iter().collect(),
        inference_type: raw.inference_type,
    })
}

impl TryFrom<RawInstance> for McqInstance {
    type Error = ValidationError;

    fn try_from(raw: RawInstance) -> Result<Self, Self::Error> {
        validate_instance(raw)
    }
}

impl From<McqInstance> for RawInstance {
    fn from(inst: McqInstance) -> Self {
        RawInstance {
            id: inst.id,
            dialogue: inst.dialogue,
            target_index: inst.target_index,
            question: inst.question,
            options: inst.options,
            answers: inst.gold.into_iter().collect(),
            inference_type: inst.inference_type,
        }
    }
}

impl McqInstance {
    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn dialogue(&self) -> &[Utterance] {
        &self.dialogue
    }

    pub fn target_index(&self) -> usize {
        self.target_index
    }

    pub fn target(&self) -> &Utterance {
        &self.dialogue[self.target_index]
    }

    pub fn question(&self) -> &str {
        &self.question
    }

    pub fn options(&self) -> &[String] {
        &self.options
    }

    /// Number of options, `m`.
    pub fn num_options(&self) -> usize {
        self.options.len()
    }

    pub fn gold(&self) -> &OptionSet {
        &self.gold
    }

    pub fn inference_type(&self) -> Option<&str> {
        self.inference_type.as_deref()
    }

    pub fn all_options(&self) -> OptionSet {
        (0..self.num_options()).collect()
    }

    pub fn to_raw(&self) -> RawInstance {
        self.clone().into()
    }
}

/// Which stage of context accumulation a [`ContextBlock`] is at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Stage {
    /// Dialogue, target, question, options.
    T,
    /// `T` plus the exclusion result.
    T1,
    /// `T1` plus per-option verdicts.
    T2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentTag {
    Dialogue,
    Target,
    Question,
    Options,
    ExclusionResult,
    Verdicts,
}

impl SegmentTag {
    pub const BASE: [SegmentTag; 4] = [
        SegmentTag::Dialogue,
        SegmentTag::Target,
        SegmentTag::Question,
        SegmentTag::Options,
    ];
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub tag: SegmentTag,
    pub text: String,
}

/// Assembled textual context for one prompt. Built by
/// [`crate::prompts::assemble_context`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContextBlock {
    pub(crate) stage: Stage,
    pub(crate) segments: Vec<Segment>,
    /// Rendered dialogue turns, kept separately so the dialogue segment can be
    /// truncated without re-reading the instance.
    pub(crate) turns: Vec<String>,
    pub(crate) target_turn: usize,
    pub(crate) target_text: String,
    pub(crate) options: Vec<String>,
}

impl ContextBlock {
    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn tags(&self) -> Vec<SegmentTag> {
        self.segments.iter().map(|s| s.tag).collect()
    }

    pub fn segment(&self, tag: SegmentTag) -> Option<&str> {
        self.segments
            .iter()
            .find(|s| s.tag == tag)
            .map(|s| s.text.as_str())
    }

    /// Concatenates the segments; identical blocks render identical bytes.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for seg in &self.segments {
            out.push_str(&seg.text);
            if !seg.text.ends_with('\n') {
                out.push('\n');
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Standard,
    Cot,
    Forward,
    Backward,
    RexGot,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::Standard,
        Strategy::Cot,
        Strategy::Forward,
        Strategy::Backward,
        Strategy::RexGot,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Standard => "standard",
            Strategy::Cot => "cot",
            Strategy::Forward => "forward",
            Strategy::Backward => "backward",
            Strategy::RexGot => "rex_got",
        }
    }

    pub fn from_name(name: &str) -> Option<Strategy> {
        let name = name.replace('-', "_");
        Strategy::ALL.into_iter().find(|s| s.name() == name)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Final answer of one strategy for one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub instance_id: String,
    pub strategy: Strategy,
    pub chosen: OptionSet,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub paths: Vec<ReasoningPath>,
    pub vote_tally: BTreeMap<usize, u32>,
    pub fallback_used: bool,
    /// Raw completions of single-shot and loop strategies, in call order.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub transcript: Vec<String>,
    /// Set when the instance failed and `chosen` comes from the fallback chain.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Prediction {
    /// True when `chosen` is a non-empty subset of the options of `instance`.
    pub fn check_against(&self, instance: &McqInstance) -> bool {
        !self.chosen.is_empty() && self.chosen.iter().all(|&i| i < instance.num_options())
    }
}
