//! Prompt templates and context assembly.
//!
//! The context is laid out as numbered dialogue turns, a `Target:` line, a
//! `Question:` line and lettered options; later stages append the exclusion
//! result and the per-option analyses. Instruction texts live in
//! `templates/<version>/` and are compiled in, so their exact bytes are pinned.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::model::{
    format_labels, option_label, ContextBlock, McqInstance, OptionSet, Segment, SegmentTag, Stage,
};

pub const TEMPLATE_VERSION: &str = "v1";

const STANDARD: &str = include_str!("../templates/v1/standard.txt");
const VANILLA_COT: &str = include_str!("../templates/v1/cot.txt");
const STEP1_EXCLUSION: &str = include_str!("../templates/v1/step1_exclusion.txt");
const STEP2_VERDICT: &str = include_str!("../templates/v1/step2_verdict.txt");
const STEP3_COMBINE: &str = include_str!("../templates/v1/step3_combine.txt");
const FORWARD_PICK: &str = include_str!("../templates/v1/forward_pick.txt");
const BACKWARD_PICK: &str = include_str!("../templates/v1/backward_pick.txt");

pub const EXCLUSION_HEADER: &str = "Excluded options and reasons:";
pub const VERDICTS_HEADER: &str = "Option analyses:";
pub const OMITTED_MARKER: &str = "[earlier turns omitted]";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PromptKind {
    Standard,
    VanillaCot,
    Step1Exclusion,
    Step2Verdict(usize),
    Step3Combine,
    /// One iteration of the forward loop; `selected` holds the options taken so far.
    ForwardPick {
        selected: OptionSet,
    },
    /// One iteration of the backward loop; `removed` holds the options dropped so far.
    BackwardPick {
        removed: OptionSet,
    },
}

impl PromptKind {
    pub fn required_stage(&self) -> Stage {
        match self {
            PromptKind::Step2Verdict(_) => Stage::T1,
            PromptKind::Step3Combine => Stage::T2,
            _ => Stage::T,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("stage {stage:?} requires {missing}")]
    MissingStageInput { stage: Stage, missing: &'static str },
    #[error("prompt {kind:?} needs a context at stage {expected:?}, got {actual:?}")]
    StageMismatch {
        kind: PromptKind,
        expected: Stage,
        actual: Stage,
    },
    #[error("option index {index} is outside [0, {m})")]
    InvalidOption { index: usize, m: usize },
}

/// Builds the context for `stage`.
///
/// `a1` is the raw Step-I completion; `a2` maps each option index to its raw
/// Step-II completion. Both are inserted verbatim.
pub fn assemble_context(
    instance: &McqInstance,
    stage: Stage,
    a1: Option<&str>,
    a2: Option<&BTreeMap<usize, String>>,
) -> Result<ContextBlock, PromptError> {
    let turns: Vec<String> = instance
        .dialogue()
        .iter()
        .enumerate()
        .map(|(i, u)| format!("{}. {}: {}", i + 1, u.speaker, u.text))
        .collect();
    let target = instance.target();
    let options: Vec<String> = instance
        .options()
        .iter()
        .enumerate()
        .map(|(i, o)| format!("{}. {}", option_label(i), o))
        .collect();

    let mut segments = vec![
        Segment {
            tag: SegmentTag::Dialogue,
            text: dialogue_text(&turns, instance.target_index(), turns.len()),
        },
        Segment {
            tag: SegmentTag::Target,
            text: format!(
                "Target: turn {}, {}: \"{}\"",
                instance.target_index() + 1,
                target.speaker,
                target.text
            ),
        },
        Segment {
            tag: SegmentTag::Question,
            text: format!("Question: {}", instance.question()),
        },
        Segment {
            tag: SegmentTag::Options,
            text: format!("Options:\n{}", options.join("\n")),
        },
    ];

    if stage >= Stage::T1 {
        let a1 = a1.ok_or(PromptError::MissingStageInput {
            stage,
            missing: "the exclusion result (a1)",
        })?;
        segments.push(Segment {
            tag: SegmentTag::ExclusionResult,
            text: format!("{EXCLUSION_HEADER}\n{}", a1.trim_end()),
        });
    }
    if stage == Stage::T2 {
        let a2 = a2.ok_or(PromptError::MissingStageInput {
            stage,
            missing: "the option verdicts (a2)",
        })?;
        let mut text = String::from(VERDICTS_HEADER);
        for i in 0..instance.num_options() {
            let verdict = a2.get(&i).ok_or(PromptError::MissingStageInput {
                stage,
                missing: "a verdict for every option",
            })?;
            text.push('\n');
            text.push_str(&format!("{}. {}", option_label(i), verdict.trim_end()));
        }
        segments.push(Segment {
            tag: SegmentTag::Verdicts,
            text,
        });
    }

    Ok(ContextBlock {
        stage,
        segments,
        turns,
        target_turn: instance.target_index(),
        target_text: target.text.clone(),
        options: instance.options().to_vec(),
    })
}

/// Dialogue segment keeping the last `keep` turns (plus the target turn,
/// which is never dropped).
fn dialogue_text(turns: &[String], target: usize, keep: usize) -> String {
    let first_kept = turns.len() - keep;
    let mut lines = vec!["Dialogue:".to_string()];
    if first_kept > 0 {
        lines.push(OMITTED_MARKER.to_string());
    }
    for (i, t) in turns.iter().enumerate() {
        if i >= first_kept || i == target {
            lines.push(t.clone());
        }
    }
    lines.join("\n")
}

/// Option text as it reads inside the verdict question: one trailing period
/// is dropped so the sentence does not read "phone., is it".
fn option_clause(text: &str) -> &str {
    let t = text.trim_end();
    t.strip_suffix('.').unwrap_or(t)
}

/// Renders the prompt for `kind` over `context`.
pub fn render(kind: &PromptKind, context: &ContextBlock) -> Result<String, PromptError> {
    let expected = kind.required_stage();
    if context.stage != expected {
        return Err(PromptError::StageMismatch {
            kind: kind.clone(),
            expected,
            actual: context.stage,
        });
    }
    let m = context.options.len();
    let target = format!("\"{}\"", context.target_text);
    let instruction = match kind {
        PromptKind::Standard => STANDARD.to_string(),
        PromptKind::VanillaCot => VANILLA_COT.to_string(),
        PromptKind::Step1Exclusion => STEP1_EXCLUSION.replace("{target}", &target),
        PromptKind::Step2Verdict(i) => {
            let text = context
                .options
                .get(*i)
                .ok_or(PromptError::InvalidOption { index: *i, m })?;
            let clause = format!("{}. {}", option_label(*i), option_clause(text));
            STEP2_VERDICT.replace("{option}", &clause)
        }
        PromptKind::Step3Combine => STEP3_COMBINE.replace("{target}", &target),
        PromptKind::ForwardPick { selected } => {
            check_indices(selected, m)?;
            FORWARD_PICK
                .replace("{selected}", &labels_or_none(selected))
                .replace("{remaining}", &labels_or_none(&complement(selected, m)))
        }
        PromptKind::BackwardPick { removed } => {
            check_indices(removed, m)?;
            BACKWARD_PICK
                .replace("{removed}", &labels_or_none(removed))
                .replace("{remaining}", &labels_or_none(&complement(removed, m)))
        }
    };
    Ok(format!("{}\n{}", context.render(), instruction.trim_end()))
}

/// Like [`render`], but drops the earliest dialogue turns (never the target
/// turn) until the estimated token count fits `max_tokens`.
pub fn render_with_budget(
    kind: &PromptKind,
    context: &ContextBlock,
    max_tokens: Option<usize>,
) -> Result<String, PromptError> {
    let full = render(kind, context)?;
    let Some(budget) = max_tokens else {
        return Ok(full);
    };
    if estimate_tokens(&full) <= budget {
        return Ok(full);
    }
    let mut trimmed = context.clone();
    let n = context.turns.len();
    let mut best = full;
    for keep in (0..n).rev() {
        trimmed.segments[0].text = dialogue_text(&context.turns, context.target_turn, keep);
        best = render(kind, &trimmed)?;
        if estimate_tokens(&best) <= budget {
            break;
        }
    }
    Ok(best)
}

/// Rough token count: four characters per token.
pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

fn check_indices(set: &OptionSet, m: usize) -> Result<(), PromptError> {
    match set.iter().find(|&&i| i >= m) {
        Some(&index) => Err(PromptError::InvalidOption { index, m }),
        None => Ok(()),
    }
}

fn complement(set: &OptionSet, m: usize) -> OptionSet {
    (0..m).filter(|i| !set.contains(i)).collect()
}

fn labels_or_none(set: &OptionSet) -> String {
    if set.is_empty() {
        "none".to_string()
    } else {
        format_labels(set)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::worked_example_instance;

    fn ctx(stage: Stage) -> ContextBlock {
        let inst = worked_example_instance();
        let a2: BTreeMap<usize, String> = (0..5).map(|i| (i, format!("analysis {i}"))).collect();
        assemble_context(
            &inst,
            stage,
            Some("Options C and D are unreasonable."),
            Some(&a2),
        )
        .unwrap()
    }

    #[test]
    fn stage_t_lists_five_lettered_options() {
        let block = ctx(Stage::T);
        assert_eq!(block.tags(), SegmentTag::BASE.to_vec());
        let options = block.segment(SegmentTag::Options).unwrap();
        let lettered: Vec<&str> = options.lines().skip(1).collect();
        assert_eq!(lettered.len(), 5);
        for (i, line) in lettered.iter().enumerate() {
            assert!(line.starts_with(&format!("{}. ", option_label(i))));
        }
    }

    #[test]
    fn stage_t1_adds_exclusion_segment() {
        let block = ctx(Stage::T1);
        let seg = block.segment(SegmentTag::ExclusionResult).unwrap();
        assert!(seg.starts_with(EXCLUSION_HEADER));
        assert!(seg.contains("Options C and D are unreasonable"));
    }

    #[test]
    fn stages_are_monotone() {
        let t = ctx(Stage::T).segments().to_vec();
        let t1 = ctx(Stage::T1).segments().to_vec();
        let t2 = ctx(Stage::T2).segments().to_vec();
        assert_eq!(&t1[..t.len()], &t[..]);
        assert_eq!(&t2[..t1.len()], &t1[..]);
        assert!(t.len() < t1.len() && t1.len() < t2.len());
    }

    #[test]
    fn t2_without_verdicts_is_missing_input() {
        let inst = worked_example_instance();
        let err = assemble_context(&inst, Stage::T2, Some("x"), None).unwrap_err();
        assert!(matches!(err, PromptError::MissingStageInput { .. }));
        let err = assemble_context(&inst, Stage::T1, None, None).unwrap_err();
        assert!(matches!(err, PromptError::MissingStageInput { .. }));
    }

    #[test]
    fn standard_ends_with_instruction() {
        let p = render(&PromptKind::Standard, &ctx(Stage::T)).unwrap();
        assert!(p.ends_with("which options are correct?"));
        let p = render(&PromptKind::VanillaCot, &ctx(Stage::T)).unwrap();
        assert!(p.ends_with("let's think step-by-step, which options are correct and why?"));
    }

    #[test]
    fn step2_substitutes_option_clause() {
        let block = ctx(Stage::T1);
        let p = render(&PromptKind::Step2Verdict(2), &block).unwrap();
        assert!(p.contains(
            "if the answer is C. Bob forgot to charge his phone, is it reasonable and why?"
        ));
        assert!(matches!(
            render(&PromptKind::Step2Verdict(5), &block),
            Err(PromptError::InvalidOption { index: 5, m: 5 })
        ));
    }

    #[test]
    fn step2_renderings_differ_only_in_clause() {
        let block = ctx(Stage::T1);
        let inst = worked_example_instance();
        let base = render(&PromptKind::Step2Verdict(0), &block).unwrap();
        for i in 1..5 {
            let other = render(&PromptKind::Step2Verdict(i), &block).unwrap();
            let from = format!("if the answer is A. {},", option_clause(&inst.options()[0]));
            let to = format!(
                "if the answer is {}. {},",
                option_label(i),
                option_clause(&inst.options()[i])
            );
            assert_eq!(base.replacen(&from, &to, 1), other);
        }
    }

    #[test]
    fn step3_on_stage_t_is_mismatch() {
        let err = render(&PromptKind::Step3Combine, &ctx(Stage::T)).unwrap_err();
        assert!(matches!(
            err,
            PromptError::StageMismatch {
                expected: Stage::T2,
                actual: Stage::T,
                ..
            }
        ));
    }

    #[test]
    fn step1_and_step3_quote_target() {
        let inst = worked_example_instance();
        let target = format!("which options of \"{}\" are", inst.target().text);
        let p = render(&PromptKind::Step1Exclusion, &ctx(Stage::T)).unwrap();
        assert!(p.contains(&format!("{target} unreasonable and why?")));
        assert!(p.trim_end().ends_with("\"Excluded: <letters or 'none'>\"."));
        let p = render(&PromptKind::Step3Combine, &ctx(Stage::T2)).unwrap();
        assert!(p.contains(&format!("{target} reasonable?")));
    }

    #[test]
    fn loop_prompts_show_state() {
        let p = render(
            &PromptKind::ForwardPick {
                selected: OptionSet::from([0]),
            },
            &ctx(Stage::T),
        )
        .unwrap();
        assert!(p.contains("Selected so far: A\nRemaining options: B, C, D, E"));
        let p = render(
            &PromptKind::BackwardPick {
                removed: OptionSet::new(),
            },
            &ctx(Stage::T),
        )
        .unwrap();
        assert!(p.contains("Removed so far: none\nRemaining options: A, B, C, D, E"));
    }

    #[test]
    fn budget_drops_earliest_turns_but_keeps_target() {
        let inst = worked_example_instance();
        let block = assemble_context(&inst, Stage::T, None, None).unwrap();
        let full = render(&PromptKind::Standard, &block).unwrap();
        let budget = estimate_tokens(&full) - 5;
        let cut = render_with_budget(&PromptKind::Standard, &block, Some(budget)).unwrap();
        assert!(cut.contains(OMITTED_MARKER));
        assert!(estimate_tokens(&cut) <= budget);
        let target_line = &block.turns[inst.target_index()];
        assert!(cut.contains(target_line.as_str()));
        assert!(!cut.contains(block.turns[0].as_str()));

        // a budget nothing can satisfy still keeps the target turn
        let tiny = render_with_budget(&PromptKind::Standard, &block, Some(1)).unwrap();
        assert!(tiny.contains(target_line.as_str()));
        assert_eq!(
            render_with_budget(&PromptKind::Standard, &block, None).unwrap(),
            full
        );
    }
}
