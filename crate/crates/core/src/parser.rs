//! Extraction of structured judgments from free-form completions.
//!
//! Every parser first looks for the directive line its prompt asks for
//! (`Excluded:`, `Verdict:`, `Answer:`) and falls back to sentence-level
//! heuristics when the model ignored the directive. All functions are total:
//! arbitrary input yields a value or a [`ParseError`], never a panic.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{format_labels, label_index, OptionSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("no recognizable judgment in completion")]
    Unparseable,
    #[error("answer parsed but names no valid option")]
    EmptySet,
}

/// Step-I output: which options the model rejected, and why.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ExclusionResult {
    pub excluded: OptionSet,
    pub reasons: BTreeMap<usize, String>,
    pub raw_text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Reasonable,
    Unreasonable,
    Abstain,
}

/// Step-II output for one option.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OptionVerdict {
    pub option_index: usize,
    pub verdict: Verdict,
    pub reason: String,
    pub raw_text: String,
}

const EXCLUDED_KEY: &str = "excluded";
const VERDICT_KEY: &str = "verdict";
const ANSWER_KEY: &str = "answer";

const NEGATIVE_WORDS: &[&str] = &[
    "not",
    "unreasonable",
    "incorrect",
    "excluded",
    "exclude",
    "implausible",
    "wrong",
    "unlikely",
    "eliminated",
    "eliminate",
];
const OPTION_WORDS: &[&str] = &["option", "options", "choice", "choices"];
const CONNECTORS: &[&str] = &["and", "or"];

pub fn parse_exclusions(text: &str, m: usize) -> Result<ExclusionResult, ParseError> {
    let done = |excluded: OptionSet, reasons| {
        Ok(ExclusionResult {
            excluded,
            reasons,
            raw_text: text.to_string(),
        })
    };

    if let Some((line_start, value)) = directive(text, EXCLUDED_KEY) {
        let (letters, none) = directive_letters(value);
        if !letters.is_empty() || none {
            let excluded: OptionSet = letters.into_iter().filter(|&i| i < m).collect();
            let body = &text[..line_start];
            let mut reasons = BTreeMap::new();
            for &i in &excluded {
                if let Some(sentence) = sentences(body)
                    .into_iter()
                    .find(|s| letter_refs(s).contains(&i))
                {
                    reasons.insert(i, sentence.trim().to_string());
                }
            }
            return done(excluded, reasons);
        }
    }

    let mut excluded = OptionSet::new();
    let mut reasons = BTreeMap::new();
    for sentence in sentences(text) {
        for clause in clauses(sentence) {
            if !is_negative(clause) {
                continue;
            }
            for i in letter_refs(clause).into_iter().filter(|&i| i < m) {
                excluded.insert(i);
                reasons
                    .entry(i)
                    .or_insert_with(|| sentence.trim().to_string());
            }
        }
    }
    if !excluded.is_empty() {
        return done(excluded, reasons);
    }
    if words(text)
        .iter()
        .any(|w| w.text.eq_ignore_ascii_case("none"))
    {
        return done(OptionSet::new(), BTreeMap::new());
    }
    Err(ParseError::Unparseable)
}

/// Parses a Step-II completion into a verdict and its reason text.
pub fn parse_verdict(text: &str) -> Result<(Verdict, String), ParseError> {
    if let Some((line_start, value)) = directive(text, VERDICT_KEY) {
        let value = value.to_ascii_lowercase();
        let toks: Vec<&str> = words(&value).iter().map(|w| w.text).collect();
        let verdict = if toks.contains(&"unreasonable") || toks.contains(&"not") {
            Some(Verdict::Unreasonable)
        } else if toks.contains(&"reasonable") {
            Some(Verdict::Reasonable)
        } else {
            None
        };
        if let Some(v) = verdict {
            let reason = format!("{}{}", &text[..line_start], after_line(text, line_start));
            return Ok((v, reason.trim().to_string()));
        }
    }

    for sentence in sentences(text) {
        let lower = sentence.to_ascii_lowercase();
        let toks = words(&lower);
        let Some(pos) = toks
            .iter()
            .position(|w| w.text == "reasonable" || w.text == "unreasonable")
        else {
            continue;
        };
        let negated = toks[pos].text == "unreasonable"
            || toks[pos.saturating_sub(3)..pos]
                .iter()
                .any(|w| matches!(w.text, "not" | "never" | "no" | "hardly" | "t"));
        let verdict = if negated {
            Verdict::Unreasonable
        } else {
            Verdict::Reasonable
        };
        return Ok((verdict, text.trim().to_string()));
    }
    Err(ParseError::Unparseable)
}

/// Parses the final option set from a Step-III (or single-shot) completion.
pub fn parse_final_set(text: &str, m: usize) -> Result<OptionSet, ParseError> {
    if let Some((_, value)) = directive(text, ANSWER_KEY) {
        let (letters, none) = directive_letters(value);
        if !letters.is_empty() || none {
            let set: OptionSet = letters.into_iter().filter(|&i| i < m).collect();
            return if set.is_empty() {
                Err(ParseError::EmptySet)
            } else {
                Ok(set)
            };
        }
    }

    let lower = text.to_ascii_lowercase();
    let anchor = words(&lower)
        .into_iter()
        .rev()
        .find(|w| w.text == "correct" || w.text == "reasonable")
        .ok_or(ParseError::Unparseable)?;
    let tail = &text[anchor.end..];
    let tail = tail.split('\n').next().unwrap_or("");
    let refs = letter_refs(tail);
    if refs.is_empty() {
        return Err(ParseError::Unparseable);
    }
    let set: OptionSet = refs.into_iter().filter(|&i| i < m).collect();
    if set.is_empty() {
        Err(ParseError::EmptySet)
    } else {
        Ok(set)
    }
}

/// The canonical `Answer:` line for a set.
pub fn format_answer_line(set: &OptionSet) -> String {
    if set.is_empty() {
        "Answer: none".to_string()
    } else {
        format!("Answer: {}", format_labels(set))
    }
}

/// Parsed reply of one forward/backward loop iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LoopReply {
    pub pick: Option<usize>,
    /// `Some(false)` on "More: no", `Some(true)` on "More: yes".
    pub more: Option<bool>,
}

/// Parses a loop reply; `key` is `pick` or `remove`.
pub fn parse_loop_reply(text: &str, key: &str, m: usize) -> Result<LoopReply, ParseError> {
    let pick = directive(text, key).and_then(|(_, v)| {
        let (letters, _) = directive_letters(v);
        letters.into_iter().find(|&i| i < m)
    });
    let more = directive(text, "more").and_then(|(_, v)| {
        let v = v.to_ascii_lowercase();
        match words(&v).first().map(|w| w.text) {
            Some("yes") => Some(true),
            Some("no") => Some(false),
            _ => None,
        }
    });
    if pick.is_none() && more.is_none() {
        return Err(ParseError::Unparseable);
    }
    Ok(LoopReply { pick, more })
}

#[derive(Debug, Clone, Copy)]
struct Word<'a> {
    text: &'a str,
    start: usize,
    end: usize,
}

fn words(s: &str) -> Vec<Word<'_>> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in s.char_indices() {
        match (c.is_alphanumeric(), start) {
            (true, None) => start = Some(i),
            (false, Some(st)) => {
                out.push(Word {
                    text: &s[st..i],
                    start: st,
                    end: i,
                });
                start = None;
            }
            _ => {}
        }
    }
    if let Some(st) = start {
        out.push(Word {
            text: &s[st..],
            start: st,
            end: s.len(),
        });
    }
    out
}

/// Finds the last line of the form `<key>: value` (markdown emphasis and
/// bullet prefixes tolerated). Returns the byte offset of the line start and
/// the value.
fn directive<'a>(text: &'a str, key: &str) -> Option<(usize, &'a str)> {
    let mut offset = 0;
    let mut found = None;
    for line in text.split('\n') {
        let start = offset;
        offset += line.len() + 1;
        let body = line.trim_start_matches(|c: char| {
            c.is_whitespace() || matches!(c, '*' | '#' | '-' | '>' | '_')
        });
        let Some(head) = body.get(..key.len()) else {
            continue;
        };
        if !head.eq_ignore_ascii_case(key) {
            continue;
        }
        let rest = body[key.len()..].trim_start_matches(['*', '_', ' ', '\t']);
        if let Some(value) = rest.strip_prefix(':') {
            found = Some((start, value.trim().trim_matches(['*', '_'])));
        }
    }
    found
}

fn after_line(text: &str, line_start: usize) -> &str {
    match text[line_start..].find('\n') {
        Some(i) => &text[line_start + i + 1..],
        None => "",
    }
}

/// Letters listed in a directive value, plus whether it says "none".
fn directive_letters(value: &str) -> (Vec<usize>, bool) {
    let mut letters = Vec::new();
    let mut none = false;
    for w in words(value) {
        let lower = w.text.to_ascii_lowercase();
        if lower == "none" {
            none = true;
        }
        let mut chars = w.text.chars();
        if let (Some(c), None) = (chars.next(), chars.next()) {
            if c.is_ascii_alphabetic() {
                if let Some(i) = label_index(c) {
                    if !letters.contains(&i) {
                        letters.push(i);
                    }
                }
            }
        }
    }
    (letters, none)
}

/// Splits into sentences on newlines and terminal punctuation. A period that
/// directly follows a lone letter (`C.`) is an option label, not a boundary.
fn sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut prev: [Option<char>; 2] = [None, None];
    for (i, c) in text.char_indices() {
        let boundary = match c {
            '\n' | '!' | '?' => true,
            '.' => {
                let label = prev[1].is_some_and(|p| p.is_ascii_alphabetic())
                    && !prev[0].is_some_and(|p| p.is_alphanumeric());
                !label
            }
            _ => false,
        };
        if boundary {
            let s = &text[start..i + c.len_utf8()];
            if !s.trim().is_empty() {
                out.push(s);
            }
            start = i + c.len_utf8();
        }
        prev = [prev[1], Some(c)];
    }
    if !text[start..].trim().is_empty() {
        out.push(&text[start..]);
    }
    out
}

/// Splits a sentence at contrastive boundaries so that "A is fine but C is
/// not" yields two clauses.
fn clauses(sentence: &str) -> Vec<&str> {
    let lower = sentence.to_ascii_lowercase();
    let mut cuts = vec![0];
    for w in words(&lower) {
        if matches!(w.text, "but" | "while" | "whereas" | "however") {
            cuts.push(w.start);
        }
    }
    for (i, c) in lower.char_indices() {
        if c == ';' {
            cuts.push(i);
        }
    }
    cuts.sort_unstable();
    cuts.push(sentence.len());
    cuts.windows(2)
        .map(|w| &sentence[w[0]..w[1]])
        .filter(|c| !c.trim().is_empty())
        .collect()
}

fn is_negative(clause: &str) -> bool {
    let lower = clause.to_ascii_lowercase();
    lower.contains("n't")
        || lower.contains("n\u{2019}t")
        || words(&lower)
            .iter()
            .any(|w| NEGATIVE_WORDS.contains(&w.text))
}

/// Option references in free text, as 0-based indices in order of first
/// appearance. Recognizes `option C`, `options C and D`, `(C)`, `C.`, `C)`,
/// and bare capital letters; a bare `A` or `I` followed by a lowercase word
/// is read as an article or pronoun unless it sits in a list of letters.
fn letter_refs(s: &str) -> Vec<usize> {
    let toks = words(s);
    let single = |t: &Word| {
        let mut cs = t.text.chars();
        matches!((cs.next(), cs.next()), (Some(c), None) if c.is_ascii_alphabetic())
    };
    let letter = |t: &Word| t.text.chars().next().unwrap_or(' ');
    let gap = |a: &Word, b: &Word| &s[a.end..b.start];

    let mut accepted = vec![false; toks.len()];
    for (i, t) in toks.iter().enumerate() {
        if !single(t) {
            continue;
        }
        let c = letter(t);
        let before = s[..t.start].chars().next_back();
        let after = s[t.end..].chars().next();
        let after_opt = i > 0
            && OPTION_WORDS.contains(&toks[i - 1].text.to_ascii_lowercase().as_str())
            && gap(&toks[i - 1], t)
                .chars()
                .all(|g| g.is_whitespace() || g == '(' || g == ':');
        let parenthesized = before == Some('(') && after == Some(')');
        let bare = c.is_ascii_uppercase()
            && match after {
                Some('.' | ')' | ':' | ',' | ';') | None => true,
                _ if c != 'A' && c != 'I' => true,
                _ => {
                    // "A reason", "I think": article or pronoun
                    let rest = s[t.end..].trim_start();
                    !rest.chars().next().is_some_and(|n| n.is_lowercase())
                }
            };
        accepted[i] = after_opt || parenthesized || bare;
    }

    // letters in a list next to an accepted letter: "A and B", "a, b or c"
    let list_gap = |g: &str| g.chars().all(|c| c.is_whitespace() || ",;/&()".contains(c));
    loop {
        let mut changed = false;
        for i in 0..toks.len() {
            if accepted[i] || !single(&toks[i]) {
                continue;
            }
            let lower = letter(&toks[i]).is_ascii_lowercase();
            let neighbor = |dir: isize| -> bool {
                let mut j = i as isize + dir;
                let mut prev = i as isize;
                while j >= 0 && (j as usize) < toks.len() {
                    let (a, b) = if dir < 0 {
                        (j as usize, prev as usize)
                    } else {
                        (prev as usize, j as usize)
                    };
                    if !list_gap(gap(&toks[a], &toks[b])) {
                        return false;
                    }
                    let t = &toks[j as usize];
                    if CONNECTORS.contains(&t.text) {
                        prev = j;
                        j += dir;
                        continue;
                    }
                    return single(t)
                        && accepted[j as usize]
                        && (!lower || letter(t).is_ascii_lowercase());
                }
                false
            };
            if neighbor(-1) || neighbor(1) {
                accepted[i] = true;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    let mut out = Vec::new();
    for (t, ok) in toks.iter().zip(accepted) {
        if ok {
            if let Some(i) = label_index(letter(t)) {
                if !out.contains(&i) {
                    out.push(i);
                }
            }
        }
    }
    out
}
