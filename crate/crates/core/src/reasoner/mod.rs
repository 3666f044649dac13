//! Strategy orchestration.
//!
//! `rex_got` runs three stages per reasoning path: the exclusion stage
//! (sampled `k` times in one request), a per-option verdict stage over the
//! context extended with the exclusion text, and a combining stage over the
//! context extended with every verdict. The `k` paths go into a
//! [`ThoughtGraph`] and are aggregated by [`vote`]. The baselines are single
//! prompts (`standard`, `cot`) or pick/remove loops (`forward`, `backward`).

mod graph;
mod vote;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use graph::{build_graph, node_count, Edge, GraphError, Node, NodeKind, ThoughtGraph};
pub use vote::{vote, TieBreak, VoteError, VoteKind, VoteOutcome, VotePolicy};

use crate::backend::{Backend, BackendError, CompletionRequest};
use crate::model::{McqInstance, OptionSet, Prediction, Stage, Strategy};
use crate::parser::{
    parse_exclusions, parse_final_set, parse_loop_reply, parse_verdict, ExclusionResult,
    OptionVerdict, Verdict,
};
use crate::prompts::{assemble_context, render_with_budget, PromptError, PromptKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReasonerConfig {
    /// Number of reasoning paths.
    pub k: u32,
    pub temperature_step1: f64,
    pub temperature_step2: f64,
    pub temperature_step3: f64,
    /// Temperature for `standard`, `cot`, `forward` and `backward`.
    pub temperature_baseline: f64,
    pub max_tokens: u32,
    pub model_name: String,
    pub stop_sequences: Vec<String>,
    pub vote_policy: VotePolicy,
    /// Prompt budget in estimated tokens; earliest turns are dropped past it.
    pub max_prompt_tokens: Option<usize>,
}

impl Default for ReasonerConfig {
    fn default() -> Self {
        Self {
            k: 3,
            temperature_step1: 0.7,
            temperature_step2: 0.0,
            temperature_step3: 0.0,
            temperature_baseline: 0.0,
            max_tokens: 512,
            model_name: "gpt-3.5-turbo".to_string(),
            stop_sequences: Vec::new(),
            vote_policy: VotePolicy::default(),
            max_prompt_tokens: None,
        }
    }
}

impl ReasonerConfig {
    fn request(&self, prompt: String, n: u32, temperature: f64) -> CompletionRequest {
        CompletionRequest {
            prompt,
            n_samples: n,
            temperature,
            max_tokens: self.max_tokens,
            model_name: self.model_name.clone(),
            stop_sequences: self.stop_sequences.clone(),
        }
    }
}

/// One (exclusion, verdicts, answer) traversal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasoningPath {
    pub path_id: usize,
    pub a1: ExclusionResult,
    pub a2: BTreeMap<usize, OptionVerdict>,
    pub a3: OptionSet,
    /// Raw text of the combining completion.
    pub a3_text: String,
    /// `a3` came from the fallback chain rather than the completion.
    pub a3_fallback: bool,
    pub degenerate: bool,
}

#[derive(Debug, Error)]
pub enum ReasonerError {
    #[error("instance {instance_id}: {source}")]
    Backend {
        instance_id: String,
        #[source]
        source: BackendError,
    },
    #[error("instance {instance_id}: backend returned {got} completions, expected {expected}")]
    ShortBatch {
        instance_id: String,
        got: usize,
        expected: usize,
    },
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Vote(#[from] VoteError),
    #[error("k must be at least 1")]
    ZeroPaths,
}

/// Shared call helper that attaches the instance id and enforces the
/// sample-count contract.
fn call(
    backend: &dyn Backend,
    instance: &McqInstance,
    request: &CompletionRequest,
) -> Result<Vec<String>, ReasonerError> {
    let out = backend
        .complete(request)
        .map_err(|source| ReasonerError::Backend {
            instance_id: instance.id().to_string(),
            source,
        })?;
    if out.len() != request.n_samples as usize {
        return Err(ReasonerError::ShortBatch {
            instance_id: instance.id().to_string(),
            got: out.len(),
            expected: request.n_samples as usize,
        });
    }
    Ok(out.into_iter().map(|c| c.text).collect())
}

fn call_one(
    backend: &dyn Backend,
    instance: &McqInstance,
    config: &ReasonerConfig,
    prompt: &str,
    temperature: f64,
) -> Result<String, ReasonerError> {
    let req = config.request(prompt.to_string(), 1, temperature);
    Ok(call(backend, instance, &req)?.remove(0))
}

/// A Step-I sample; `parsed` is false when the text stayed unparseable after
/// one retry and the exclusion set was left empty.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExclusionSample {
    pub result: ExclusionResult,
    pub parsed: bool,
}

pub fn run_step1(
    instance: &McqInstance,
    backend: &dyn Backend,
    config: &ReasonerConfig,
) -> Result<Vec<ExclusionSample>, ReasonerError> {
    if config.k == 0 {
        return Err(ReasonerError::ZeroPaths);
    }
    let m = instance.num_options();
    let ctx = assemble_context(instance, Stage::T, None, None)?;
    let prompt = render_with_budget(&PromptKind::Step1Exclusion, &ctx, config.max_prompt_tokens)?;
    let req = config.request(prompt.clone(), config.k, config.temperature_step1);
    let texts = call(backend, instance, &req)?;

    let mut out = Vec::with_capacity(texts.len());
    for text in texts {
        if let Ok(result) = parse_exclusions(&text, m) {
            out.push(ExclusionSample {
                result,
                parsed: true,
            });
            continue;
        }
        let retry = call_one(backend, instance, config, &prompt, config.temperature_step1)?;
        match parse_exclusions(&retry, m) {
            Ok(result) => out.push(ExclusionSample {
                result,
                parsed: true,
            }),
            Err(_) => out.push(ExclusionSample {
                result: ExclusionResult {
                    raw_text: text,
                    ..ExclusionResult::default()
                },
                parsed: false,
            }),
        }
    }
    Ok(out)
}

/// Evaluates every option, including those excluded in Step I.
pub fn run_step2(
    instance: &McqInstance,
    a1: &ExclusionResult,
    backend: &dyn Backend,
    config: &ReasonerConfig,
) -> Result<BTreeMap<usize, OptionVerdict>, ReasonerError> {
    let ctx = assemble_context(instance, Stage::T1, Some(&a1.raw_text), None)?;
    let mut verdicts = BTreeMap::new();
    for i in 0..instance.num_options() {
        let prompt =
            render_with_budget(&PromptKind::Step2Verdict(i), &ctx, config.max_prompt_tokens)?;
        let mut text = call_one(backend, instance, config, &prompt, config.temperature_step2)?;
        let mut parsed = parse_verdict(&text);
        if parsed.is_err() {
            text = call_one(backend, instance, config, &prompt, config.temperature_step2)?;
            parsed = parse_verdict(&text);
        }
        let (verdict, reason) = parsed.unwrap_or((Verdict::Abstain, String::new()));
        verdicts.insert(
            i,
            OptionVerdict {
                option_index: i,
                verdict,
                reason,
                raw_text: text,
            },
        );
    }
    Ok(verdicts)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CombineOutcome {
    pub chosen: OptionSet,
    pub text: String,
    pub fallback_used: bool,
}

pub fn run_step3(
    instance: &McqInstance,
    a1: &ExclusionResult,
    a2: &BTreeMap<usize, OptionVerdict>,
    backend: &dyn Backend,
    config: &ReasonerConfig,
) -> Result<CombineOutcome, ReasonerError> {
    let m = instance.num_options();
    let verdict_texts: BTreeMap<usize, String> =
        a2.iter().map(|(&i, v)| (i, v.raw_text.clone())).collect();
    let ctx = assemble_context(
        instance,
        Stage::T2,
        Some(&a1.raw_text),
        Some(&verdict_texts),
    )?;
    let prompt = render_with_budget(&PromptKind::Step3Combine, &ctx, config.max_prompt_tokens)?;

    let mut text = call_one(backend, instance, config, &prompt, config.temperature_step3)?;
    let mut parsed = parse_final_set(&text, m);
    if parsed.is_err() {
        text = call_one(backend, instance, config, &prompt, config.temperature_step3)?;
        parsed = parse_final_set(&text, m);
    }
    if let Ok(chosen) = parsed {
        return Ok(CombineOutcome {
            chosen,
            text,
            fallback_used: false,
        });
    }
    Ok(CombineOutcome {
        chosen: combine_fallback(m, a1, a2),
        text,
        fallback_used: true,
    })
}

/// Options judged reasonable; else options not excluded; else the option with
/// the most support across both stages.
fn combine_fallback(
    m: usize,
    a1: &ExclusionResult,
    a2: &BTreeMap<usize, OptionVerdict>,
) -> OptionSet {
    let reasonable: OptionSet = a2
        .iter()
        .filter(|(_, v)| v.verdict == Verdict::Reasonable)
        .map(|(&i, _)| i)
        .collect();
    if !reasonable.is_empty() {
        return reasonable;
    }
    let kept: OptionSet = (0..m).filter(|i| !a1.excluded.contains(i)).collect();
    if !kept.is_empty() {
        return kept;
    }
    let support: BTreeMap<usize, u32> = (0..m)
        .map(|i| {
            let s = u32::from(!a1.excluded.contains(&i))
                + u32::from(a2.get(&i).is_some_and(|v| v.verdict == Verdict::Reasonable));
            (i, s)
        })
        .collect();
    OptionSet::from([vote::argmax_tally(&support)])
}

pub fn run_rex_got(
    instance: &McqInstance,
    backend: &dyn Backend,
    config: &ReasonerConfig,
) -> Result<(Prediction, ThoughtGraph), ReasonerError> {
    let samples = run_step1(instance, backend, config)?;
    let mut paths = Vec::with_capacity(samples.len());
    for (path_id, sample) in samples.into_iter().enumerate() {
        let a2 = run_step2(instance, &sample.result, backend, config)?;
        let combined = run_step3(instance, &sample.result, &a2, backend, config)?;
        let degenerate = !sample.parsed
            || combined.fallback_used
            || a2.values().any(|v| v.verdict == Verdict::Abstain);
        paths.push(ReasoningPath {
            path_id,
            a1: sample.result,
            a2,
            a3: combined.chosen,
            a3_text: combined.text,
            a3_fallback: combined.fallback_used,
            degenerate,
        });
    }
    let graph = build_graph(instance, &paths)?;
    let outcome = vote(&paths, instance.num_options(), config.vote_policy)?;
    let all_degenerate = paths.iter().all(|p| p.degenerate);
    let prediction = Prediction {
        instance_id: instance.id().to_string(),
        strategy: Strategy::RexGot,
        chosen: outcome.chosen,
        paths,
        vote_tally: outcome.tally,
        fallback_used: outcome.rescued || all_degenerate,
        transcript: Vec::new(),
        error: None,
    };
    Ok((prediction, graph))
}

fn indicator_tally(chosen: &OptionSet, m: usize) -> BTreeMap<usize, u32> {
    (0..m)
        .map(|i| (i, u32::from(chosen.contains(&i))))
        .collect()
}

fn single_shot(
    instance: &McqInstance,
    strategy: Strategy,
    kind: PromptKind,
    backend: &dyn Backend,
    config: &ReasonerConfig,
) -> Result<Prediction, ReasonerError> {
    let m = instance.num_options();
    let ctx = assemble_context(instance, Stage::T, None, None)?;
    let prompt = render_with_budget(&kind, &ctx, config.max_prompt_tokens)?;
    let text = call_one(
        backend,
        instance,
        config,
        &prompt,
        config.temperature_baseline,
    )?;
    let (chosen, fallback_used) = match parse_final_set(&text, m) {
        Ok(set) => (set, false),
        Err(_) => (OptionSet::from([0]), true),
    };
    Ok(Prediction {
        instance_id: instance.id().to_string(),
        strategy,
        vote_tally: indicator_tally(&chosen, m),
        chosen,
        paths: Vec::new(),
        fallback_used,
        transcript: vec![text],
        error: None,
    })
}

/// Forward: repeatedly ask for the most plausible remaining option until the
/// model says `More: no` or every option is taken. At most `m` iterations.
fn run_forward(
    instance: &McqInstance,
    backend: &dyn Backend,
    config: &ReasonerConfig,
) -> Result<Prediction, ReasonerError> {
    let m = instance.num_options();
    let ctx = assemble_context(instance, Stage::T, None, None)?;
    let mut selected = OptionSet::new();
    let mut transcript = Vec::new();
    let mut stalled = false;
    for _ in 0..m {
        if selected.len() == m {
            break;
        }
        let kind = PromptKind::ForwardPick {
            selected: selected.clone(),
        };
        let Some(reply) = loop_step(
            instance,
            backend,
            config,
            &ctx,
            &kind,
            "pick",
            &mut transcript,
        )?
        else {
            stalled = true;
            break;
        };
        if let Some(i) = reply.pick {
            selected.insert(i);
        }
        if reply.more == Some(false) {
            break;
        }
    }
    let (chosen, fallback_used) = if selected.is_empty() {
        (OptionSet::from([0]), true)
    } else {
        (selected, stalled)
    };
    Ok(Prediction {
        instance_id: instance.id().to_string(),
        strategy: Strategy::Forward,
        vote_tally: indicator_tally(&chosen, m),
        chosen,
        paths: Vec::new(),
        fallback_used,
        transcript,
        error: None,
    })
}

/// Backward: repeatedly ask for the most incorrect remaining option and drop
/// it, until `More: no` or one option is left. At most `m` iterations.
fn run_backward(
    instance: &McqInstance,
    backend: &dyn Backend,
    config: &ReasonerConfig,
) -> Result<Prediction, ReasonerError> {
    let m = instance.num_options();
    let ctx = assemble_context(instance, Stage::T, None, None)?;
    let mut removed = OptionSet::new();
    let mut transcript = Vec::new();
    let mut stalled = false;
    for _ in 0..m {
        if removed.len() + 1 >= m {
            break;
        }
        let kind = PromptKind::BackwardPick {
            removed: removed.clone(),
        };
        let Some(reply) = loop_step(
            instance,
            backend,
            config,
            &ctx,
            &kind,
            "remove",
            &mut transcript,
        )?
        else {
            stalled = true;
            break;
        };
        if let Some(i) = reply.pick {
            removed.insert(i);
        }
        if reply.more == Some(false) {
            break;
        }
    }
    let chosen: OptionSet = (0..m).filter(|i| !removed.contains(i)).collect();
    Ok(Prediction {
        instance_id: instance.id().to_string(),
        strategy: Strategy::Backward,
        vote_tally: indicator_tally(&chosen, m),
        chosen,
        paths: Vec::new(),
        fallback_used: stalled,
        transcript,
        error: None,
    })
}

/// One loop prompt with a single retry on an unparseable reply. `None` means
/// the reply stayed unparseable and the loop should stop.
fn loop_step(
    instance: &McqInstance,
    backend: &dyn Backend,
    config: &ReasonerConfig,
    ctx: &crate::model::ContextBlock,
    kind: &PromptKind,
    key: &str,
    transcript: &mut Vec<String>,
) -> Result<Option<crate::parser::LoopReply>, ReasonerError> {
    let m = instance.num_options();
    let prompt = render_with_budget(kind, ctx, config.max_prompt_tokens)?;
    for _ in 0..2 {
        let text = call_one(
            backend,
            instance,
            config,
            &prompt,
            config.temperature_baseline,
        )?;
        let parsed = parse_loop_reply(&text, key, m);
        transcript.push(text);
        if let Ok(reply) = parsed {
            return Ok(Some(reply));
        }
    }
    Ok(None)
}

/// Runs one strategy on one instance. The thought graph is returned for
/// `rex_got` only.
pub fn run_strategy(
    instance: &McqInstance,
    strategy: Strategy,
    backend: &dyn Backend,
    config: &ReasonerConfig,
) -> Result<(Prediction, Option<ThoughtGraph>), ReasonerError> {
    match strategy {
        Strategy::Standard => {
            single_shot(instance, strategy, PromptKind::Standard, backend, config)
                .map(|p| (p, None))
        }
        Strategy::Cot => single_shot(instance, strategy, PromptKind::VanillaCot, backend, config)
            .map(|p| (p, None)),
        Strategy::Forward => run_forward(instance, backend, config).map(|p| (p, None)),
        Strategy::Backward => run_backward(instance, backend, config).map(|p| (p, None)),
        Strategy::RexGot => run_rex_got(instance, backend, config).map(|(p, g)| (p, Some(g))),
    }
}

/// Prediction recorded when an instance fails outright: the first option,
/// flagged as a fallback, with the error message attached.
pub fn failed_prediction(
    instance: &McqInstance,
    strategy: Strategy,
    error: &ReasonerError,
) -> Prediction {
    let chosen = OptionSet::from([0]);
    Prediction {
        instance_id: instance.id().to_string(),
        strategy,
        vote_tally: indicator_tally(&chosen, instance.num_options()),
        chosen,
        paths: Vec::new(),
        fallback_used: true,
        transcript: Vec::new(),
        error: Some(error.to_string()),
    }
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;

    /// A non-degenerate path over `m` options answering `a3`.
    pub(crate) fn path(id: usize, a3: &[usize], m: usize) -> ReasoningPath {
        let a3: OptionSet = a3.iter().copied().collect();
        ReasoningPath {
            path_id: id,
            a1: ExclusionResult::default(),
            a2: (0..m)
                .map(|i| {
                    (
                        i,
                        OptionVerdict {
                            option_index: i,
                            verdict: if a3.contains(&i) {
                                Verdict::Reasonable
                            } else {
                                Verdict::Unreasonable
                            },
                            reason: String::new(),
                            raw_text: String::new(),
                        },
                    )
                })
                .collect(),
            a3,
            a3_text: String::new(),
            a3_fallback: false,
            degenerate: false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::ScriptedBackend;
    use crate::fixtures::{self, toy_instance, worked_example_instance};
    use crate::prompts::render;

    fn cfg(k: u32) -> ReasonerConfig {
        ReasonerConfig {
            k,
            ..ReasonerConfig::default()
        }
    }

    fn t_prompt(inst: &McqInstance, kind: PromptKind) -> String {
        render(
            &kind,
            &assemble_context(inst, Stage::T, None, None).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn step1_worked_example_exclusion() {
        let inst = worked_example_instance();
        let b = ScriptedBackend::new();
        fixtures::script_worked_example(&b).unwrap();
        let out = run_step1(&inst, &b, &cfg(1)).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].result.excluded, OptionSet::from([2, 3]));
        assert!(out[0].parsed);

        let out = run_step1(&inst, &b, &cfg(3)).unwrap();
        assert_eq!(out.len(), 3);
        assert!(out.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn step1_garbage_retries_once_then_degenerates() {
        let inst = worked_example_instance();
        let b = ScriptedBackend::new();
        b.on(
            t_prompt(&inst, PromptKind::Step1Exclusion),
            "The sky is blue.",
        )
        .unwrap();
        let out = run_step1(&inst, &b, &cfg(1)).unwrap();
        assert_eq!(b.call_count(), 2);
        assert!(!out[0].parsed);
        assert!(out[0].result.excluded.is_empty());
        assert_eq!(out[0].result.raw_text, "The sky is blue.");
    }

    #[test]
    fn step2_worked_example_verdicts() {
        let inst = worked_example_instance();
        let b = ScriptedBackend::new();
        fixtures::script_worked_example(&b).unwrap();
        let a1 = run_step1(&inst, &b, &cfg(1)).unwrap().remove(0).result;
        let before = b.call_count();
        let a2 = run_step2(&inst, &a1, &b, &cfg(1)).unwrap();
        assert_eq!(b.call_count() - before, 5);
        let verdicts: Vec<Verdict> = a2.values().map(|v| v.verdict).collect();
        use Verdict::*;
        assert_eq!(
            verdicts,
            [
                Reasonable,
                Reasonable,
                Unreasonable,
                Unreasonable,
                Reasonable
            ]
        );
    }

    #[test]
    fn step2_calls_once_per_option_and_abstains_on_garbage() {
        let inst = toy_instance("two", 2, &[0]);
        let b = ScriptedBackend::new();
        let a1 = ExclusionResult {
            raw_text: "Excluded: none".into(),
            ..Default::default()
        };
        let ctx = assemble_context(&inst, Stage::T1, Some(&a1.raw_text), None).unwrap();
        b.on(
            render(&PromptKind::Step2Verdict(0), &ctx).unwrap(),
            "Fits.\nVerdict: reasonable",
        )
        .unwrap();
        b.on(render(&PromptKind::Step2Verdict(1), &ctx).unwrap(), "hmm")
            .unwrap();
        let a2 = run_step2(&inst, &a1, &b, &cfg(1)).unwrap();
        // option 0 parsed first time, option 1 retried once
        assert_eq!(b.call_count(), 3);
        assert_eq!(a2[&0].verdict, Verdict::Reasonable);
        assert_eq!(a2[&1].verdict, Verdict::Abstain);
        assert_eq!(a2[&1].raw_text, "hmm");
    }

    fn verdict(i: usize, v: Verdict) -> (usize, OptionVerdict) {
        (
            i,
            OptionVerdict {
                option_index: i,
                verdict: v,
                reason: String::new(),
                raw_text: format!("{v:?}"),
            },
        )
    }

    #[test]
    fn step3_answer_and_fallback() {
        let inst = toy_instance("two", 2, &[0]);
        let a1 = ExclusionResult {
            raw_text: "Excluded: B".into(),
            excluded: OptionSet::from([1]),
            ..Default::default()
        };
        let a2: BTreeMap<_, _> = [
            verdict(0, Verdict::Reasonable),
            verdict(1, Verdict::Unreasonable),
        ]
        .into();
        let texts: BTreeMap<usize, String> =
            a2.iter().map(|(&i, v)| (i, v.raw_text.clone())).collect();
        let ctx = assemble_context(&inst, Stage::T2, Some(&a1.raw_text), Some(&texts)).unwrap();
        let prompt = render(&PromptKind::Step3Combine, &ctx).unwrap();

        let b = ScriptedBackend::new();
        b.on(prompt.clone(), "Answer: A").unwrap();
        let out = run_step3(&inst, &a1, &a2, &b, &cfg(1)).unwrap();
        assert_eq!(out.chosen, OptionSet::from([0]));
        assert!(!out.fallback_used);

        let b = ScriptedBackend::new();
        b.on(prompt, "I cannot decide.").unwrap();
        let out = run_step3(&inst, &a1, &a2, &b, &cfg(1)).unwrap();
        assert_eq!(b.call_count(), 2);
        assert_eq!(out.chosen, OptionSet::from([0]));
        assert!(out.fallback_used);
    }

    #[test]
    fn combine_fallback_chain() {
        let excl = |xs: &[usize]| ExclusionResult {
            excluded: xs.iter().copied().collect(),
            ..Default::default()
        };
        let unreasonable: BTreeMap<_, _> =
            (0..3).map(|i| verdict(i, Verdict::Unreasonable)).collect();
        assert_eq!(
            combine_fallback(3, &excl(&[0]), &unreasonable),
            OptionSet::from([1, 2])
        );
        assert_eq!(
            combine_fallback(3, &excl(&[0, 1, 2]), &unreasonable),
            OptionSet::from([0])
        );
        let mixed: BTreeMap<_, _> = [
            verdict(0, Verdict::Abstain),
            verdict(1, Verdict::Reasonable),
            verdict(2, Verdict::Unreasonable),
        ]
        .into();
        assert_eq!(
            combine_fallback(3, &excl(&[]), &mixed),
            OptionSet::from([1])
        );
    }

    #[test]
    fn rex_got_worked_example_unanimous() {
        let inst = worked_example_instance();
        let b = ScriptedBackend::new();
        fixtures::script_worked_example(&b).unwrap();
        let (pred, graph) = run_strategy(&inst, Strategy::RexGot, &b, &cfg(3)).unwrap();
        assert_eq!(pred.chosen, OptionSet::from([0, 1, 4]));
        assert!(!pred.fallback_used);
        assert_eq!(pred.paths.len(), 3);
        assert_eq!(graph.unwrap().nodes.len(), node_count(5, 3));
        // 1 batched step-1 call + per path (5 verdicts + 1 combine)
        assert_eq!(b.call_count(), 1 + 3 * (5 + 1));
    }

    #[test]
    fn backward_removes_c_then_d() {
        let inst = worked_example_instance();
        let b = ScriptedBackend::new();
        let prompt = |removed: &[usize]| {
            t_prompt(
                &inst,
                PromptKind::BackwardPick {
                    removed: removed.iter().copied().collect(),
                },
            )
        };
        b.on(prompt(&[]), "C is off.\nRemove: C\nMore: yes")
            .unwrap();
        b.on(prompt(&[2]), "Remove: D\nMore: yes").unwrap();
        b.on(prompt(&[2, 3]), "More: no").unwrap();
        let (pred, _) = run_strategy(&inst, Strategy::Backward, &b, &cfg(1)).unwrap();
        assert_eq!(pred.chosen, OptionSet::from([0, 1, 4]));
        assert!(!pred.fallback_used);
        assert_eq!(b.call_count(), 3);
    }

    #[test]
    fn forward_picks_a_then_stops() {
        let inst = worked_example_instance();
        let b = ScriptedBackend::new();
        b.on(
            t_prompt(
                &inst,
                PromptKind::ForwardPick {
                    selected: OptionSet::new(),
                },
            ),
            "Pick: A\nMore: yes",
        )
        .unwrap();
        b.on(
            t_prompt(
                &inst,
                PromptKind::ForwardPick {
                    selected: OptionSet::from([0]),
                },
            ),
            "More: no",
        )
        .unwrap();
        let (pred, _) = run_strategy(&inst, Strategy::Forward, &b, &cfg(1)).unwrap();
        assert_eq!(pred.chosen, OptionSet::from([0]));
        assert_eq!(pred.transcript.len(), 2);
    }

    #[test]
    fn single_shot_strategies_make_one_call() {
        let inst = worked_example_instance();
        for (strategy, kind) in [
            (Strategy::Standard, PromptKind::Standard),
            (Strategy::Cot, PromptKind::VanillaCot),
        ] {
            let b = ScriptedBackend::new();
            b.on(t_prompt(&inst, kind), "The correct options are A, B and E.")
                .unwrap();
            let (pred, graph) = run_strategy(&inst, strategy, &b, &cfg(3)).unwrap();
            assert_eq!(pred.chosen, OptionSet::from([0, 1, 4]));
            assert!(graph.is_none());
            assert_eq!(b.call_count(), 1);
        }
    }

    #[test]
    fn backend_errors_carry_instance_id() {
        let inst = worked_example_instance();
        let b = ScriptedBackend::new();
        let err = run_strategy(&inst, Strategy::Standard, &b, &cfg(1)).unwrap_err();
        assert!(err.to_string().contains(inst.id()));
        let failed = failed_prediction(&inst, Strategy::Standard, &err);
        assert!(failed.fallback_used && !failed.chosen.is_empty());
    }

    #[test]
    fn zero_k_rejected() {
        let inst = worked_example_instance();
        let b = ScriptedBackend::new();
        assert!(matches!(
            run_step1(&inst, &b, &cfg(0)),
            Err(ReasonerError::ZeroPaths)
        ));
    }
}
