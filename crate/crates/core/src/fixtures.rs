//! Offline fixtures: the Bob dialogue, a synthetic toy corpus, and helpers
//! that register scripted replies for every strategy. Used by the test
//! suites and by the shipped `fixtures/` files.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::backend::{BackendError, ScriptedBackend};
use crate::dataset::Corpus;
use crate::model::{
    format_labels, option_label, validate_instance, McqInstance, OptionSet, RawInstance, Stage,
    Strategy, Utterance,
};
use crate::prompts::{assemble_context, render_with_budget, PromptKind};
use crate::reasoner::ReasonerConfig;

/// Bob skipped the dinner: five candidate causes, A, B and E correct.
pub fn worked_example_instance() -> McqInstance {
    validate_instance(RawInstance {
        id: "worked_example-bob".into(),
        dialogue: vec![
            Utterance::new("Alice", "Bob, you missed the team dinner last night. Everyone was asking about you."),
            Utterance::new("Bob", "I know, I'm sorry. I really wanted to come."),
            Utterance::new("Alice", "So what happened? You said you would be there."),
            Utterance::new("Bob", "Something came up at the last minute and I couldn't get away until almost midnight."),
            Utterance::new("Alice", "That sounds rough. I hope everything is okay now."),
        ],
        target_index: 3,
        question: "What is or could be the cause of target?".into(),
        options: vec![
            "Bob had to finish an urgent project for his manager before a deadline.".into(),
            "Bob's mother was taken to the hospital and he stayed with her.".into(),
            "Bob forgot to charge his phone.".into(),
            "Bob did not feel like eating out that evening.".into(),
            "Bob had to help a close friend move out of an apartment that night.".into(),
        ],
        answers: vec![0, 1, 4],
        inference_type: Some("cause".into()),
    })
    .expect("worked example is valid")
}

pub const WORKED_EXAMPLE_STEP1: &str = "Option D is unreasonable: Bob says he really wanted to come, so he did not simply lack interest. \
Option C is unreasonable because a dead phone would not keep him busy until almost midnight. \
So Bob had something more important to do, and it took a long time.\n\
Excluded: C, D";

pub const WORKED_EXAMPLE_VERDICTS: [&str; 5] = [
    "An urgent project for his manager is important and can keep him at work until midnight, which matches the clues from the excluded options.\nVerdict: reasonable",
    "A mother in hospital is more important than a dinner and can take the whole evening.\nVerdict: reasonable",
    "A dead phone is trivial and would not keep him away until midnight, as noted when it was excluded.\nVerdict: unreasonable",
    "Bob said he really wanted to come, so not feeling like eating out contradicts the dialogue.\nVerdict: unreasonable",
    "Helping a close friend move is an important obligation that takes a long time.\nVerdict: reasonable",
];

pub const WORKED_EXAMPLE_STEP3: &str = "Options C and D were excluded, and the analyses show that A, B and E are important matters that take a long time.\nAnswer: A, B, E";

/// Registers the three-stage replies for the Bob dialogue.
pub fn script_worked_example(backend: &ScriptedBackend) -> Result<(), BackendError> {
    let verdicts: Vec<String> = WORKED_EXAMPLE_VERDICTS
        .iter()
        .map(|s| s.to_string())
        .collect();
    script_rex_got(
        backend,
        &worked_example_instance(),
        &ReasonerConfig::default(),
        WORKED_EXAMPLE_STEP1,
        &verdicts,
        WORKED_EXAMPLE_STEP3,
    )
}

/// Registers one unanimous reasoning path: the step-1 text, one verdict text
/// per option, and the combining text.
pub fn script_rex_got(
    backend: &ScriptedBackend,
    instance: &McqInstance,
    config: &ReasonerConfig,
    step1: &str,
    verdicts: &[String],
    step3: &str,
) -> Result<(), BackendError> {
    let budget = config.max_prompt_tokens;
    let ctx = assemble_context(instance, Stage::T, None, None).expect("stage T");
    backend.on(
        render_with_budget(&PromptKind::Step1Exclusion, &ctx, budget).expect("render"),
        step1,
    )?;
    let ctx1 = assemble_context(instance, Stage::T1, Some(step1), None).expect("stage T1");
    for (i, v) in verdicts.iter().enumerate() {
        backend.on(
            render_with_budget(&PromptKind::Step2Verdict(i), &ctx1, budget).expect("render"),
            v.as_str(),
        )?;
    }
    let texts: BTreeMap<usize, String> = verdicts.iter().cloned().enumerate().collect();
    let ctx2 = assemble_context(instance, Stage::T2, Some(step1), Some(&texts)).expect("stage T2");
    backend.on(
        render_with_budget(&PromptKind::Step3Combine, &ctx2, budget).expect("render"),
        step3,
    )
}

fn list_words(set: &OptionSet) -> String {
    let labels: Vec<String> = set.iter().map(|&i| option_label(i).to_string()).collect();
    match labels.len() {
        0 => "none".into(),
        1 => labels[0].clone(),
        n => format!("{} and {}", labels[..n - 1].join(", "), labels[n - 1]),
    }
}

/// Registers replies that make `strategy` answer exactly `answer` on
/// `instance`.
pub fn script_strategy(
    backend: &ScriptedBackend,
    instance: &McqInstance,
    strategy: Strategy,
    answer: &OptionSet,
    config: &ReasonerConfig,
) -> Result<(), BackendError> {
    let m = instance.num_options();
    let budget = config.max_prompt_tokens;
    let ctx = assemble_context(instance, Stage::T, None, None).expect("stage T");
    let render = |kind: PromptKind| render_with_budget(&kind, &ctx, budget).expect("render");
    let rest: OptionSet = (0..m).filter(|i| !answer.contains(i)).collect();
    match strategy {
        Strategy::Standard => backend.on(
            render(PromptKind::Standard),
            format!("The correct options are {}.", list_words(answer)),
        ),
        Strategy::Cot => backend.on(
            render(PromptKind::VanillaCot),
            format!(
                "Let's look at the dialogue first. The target utterance explains the situation. \
                 Comparing each option with it, the correct options are {}.",
                list_words(answer)
            ),
        ),
        Strategy::Forward => {
            let mut selected = OptionSet::new();
            let picks: Vec<usize> = answer.iter().copied().collect();
            for (j, &pick) in picks.iter().enumerate() {
                let more = if j + 1 < picks.len() { "yes" } else { "no" };
                backend.on(
                    render(PromptKind::ForwardPick {
                        selected: selected.clone(),
                    }),
                    format!(
                        "Option {} fits the dialogue best.\nPick: {}\nMore: {more}",
                        option_label(pick),
                        option_label(pick)
                    ),
                )?;
                selected.insert(pick);
            }
            Ok(())
        }
        Strategy::Backward => {
            let mut removed = OptionSet::new();
            let drops: Vec<usize> = rest.iter().copied().collect();
            if drops.is_empty() {
                return backend.on(
                    render(PromptKind::BackwardPick {
                        removed: removed.clone(),
                    }),
                    "Every remaining option fits.\nMore: no",
                );
            }
            for (j, &drop) in drops.iter().enumerate() {
                let more = if j + 1 < drops.len() { "yes" } else { "no" };
                backend.on(
                    render(PromptKind::BackwardPick {
                        removed: removed.clone(),
                    }),
                    format!(
                        "Option {} contradicts the dialogue.\nRemove: {}\nMore: {more}",
                        option_label(drop),
                        option_label(drop)
                    ),
                )?;
                removed.insert(drop);
            }
            Ok(())
        }
        Strategy::RexGot => {
            let step1 = if rest.is_empty() {
                "Every option is consistent with the dialogue.\nExcluded: none".to_string()
            } else {
                format!(
                    "Options {} are unreasonable because they do not follow from the target utterance.\nExcluded: {}",
                    list_words(&rest),
                    format_labels(&rest)
                )
            };
            let verdicts: Vec<String> = (0..m)
                .map(|i| {
                    if answer.contains(&i) {
                        format!(
                            "Option {} is consistent with the dialogue.\nVerdict: reasonable",
                            option_label(i)
                        )
                    } else {
                        format!(
                            "Option {} conflicts with the excluded-option analysis.\nVerdict: unreasonable",
                            option_label(i)
                        )
                    }
                })
                .collect();
            let step3 = format!(
                "Combining the previous steps, the reasonable options are the ones listed.\nAnswer: {}",
                format_labels(answer)
            );
            script_rex_got(backend, instance, config, &step1, &verdicts, &step3)
        }
    }
}

/// Uniform non-empty subset of `[0, m)`.
pub fn random_nonempty_subset(rng: &mut impl Rng, m: usize) -> OptionSet {
    loop {
        let set: OptionSet = (0..m).filter(|_| rng.random_bool(0.5)).collect();
        if !set.is_empty() {
            return set;
        }
    }
}

const SPEAKERS: [&str; 2] = ["A", "B"];
const TOPICS: [&str; 6] = [
    "the broken heater",
    "the weekend trip",
    "a new job offer",
    "the missing package",
    "dinner plans",
    "the final exam",
];
const TYPES: [(&str, &str); 5] = [
    ("cause", "What is or could be the cause of target?"),
    (
        "consequence",
        "What subsequent event happens or could happen following the target?",
    ),
    ("premise", "What is or could be the prerequisite of target?"),
    (
        "motivation",
        "What is or could be the motivation of target?",
    ),
    (
        "reaction",
        "What is the possible emotional reaction of the listener in response to target?",
    ),
];

/// A small valid instance with `m` options and the given gold set.
pub fn toy_instance(id: &str, m: usize, gold: &[usize]) -> McqInstance {
    validate_instance(RawInstance {
        id: id.into(),
        dialogue: vec![
            Utterance::new("A", "Did you hear about the change?"),
            Utterance::new("B", format!("Yes, it affects {id} a lot.")),
            Utterance::new("A", "Then we should plan ahead."),
        ],
        target_index: 1,
        question: TYPES[0].1.into(),
        options: (0..m)
            .map(|i| format!("Candidate explanation {i} for {id}."))
            .collect(),
        answers: gold.to_vec(),
        inference_type: Some(TYPES[0].0.into()),
    })
    .expect("toy instance is valid")
}

/// Deterministic synthetic corpus of `n` instances with 2–6 options each.
/// Dialogues come from a pool of six topics, so several instances share one.
pub fn toy_corpus(name: &str, n: usize, seed: u64) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let instances = (0..n)
        .map(|k| {
            let topic = rng.random_range(0..TOPICS.len());
            let (kind, question) = TYPES[rng.random_range(0..TYPES.len())];
            let m = rng.random_range(2..=6);
            let gold = random_nonempty_subset(&mut rng, m);
            let dialogue: Vec<Utterance> = (0..4)
                .map(|t| {
                    Utterance::new(
                        SPEAKERS[t % 2],
                        format!("Turn {} about {}.", t + 1, TOPICS[topic]),
                    )
                })
                .collect();
            validate_instance(RawInstance {
                id: format!("{name}-{k:04}"),
                target_index: rng.random_range(1..4),
                dialogue,
                question: question.into(),
                options: (0..m)
                    .map(|i| format!("Option {i} of item {k} on {}.", TOPICS[topic]))
                    .collect(),
                answers: gold.into_iter().collect(),
                inference_type: Some(kind.into()),
            })
            .expect("generated instance is valid")
        })
        .collect();
    Corpus::new(name, instances, format!("<generated:{seed}>")).expect("generated ids are unique")
}

/// The answer a scripted run of `strategy` gives on `instance` in the shipped
/// toy fixtures: `rex_got` answers the gold set; the baselines make
/// characteristic mistakes on multi-answer items (`standard` and `forward`
/// stop after the first gold option, `cot` adds one wrong option, `backward`
/// keeps one extra option).
pub fn toy_answer(instance: &McqInstance, strategy: Strategy) -> OptionSet {
    let gold = instance.gold().clone();
    let m = instance.num_options();
    let first_wrong = (0..m).find(|i| !gold.contains(i));
    match strategy {
        Strategy::RexGot => gold,
        Strategy::Standard | Strategy::Forward => {
            OptionSet::from([*gold.iter().next().expect("gold is non-empty")])
        }
        Strategy::Cot => {
            let mut s = gold;
            if s.len() > 1 {
                s.extend(first_wrong);
            }
            s
        }
        Strategy::Backward => {
            let mut s = gold;
            if s.len() == 1 {
                s.extend(first_wrong);
            }
            s
        }
    }
}

/// Scripts every strategy for every instance of `corpus` using [`toy_answer`].
pub fn script_toy_corpus(
    backend: &ScriptedBackend,
    corpus: &Corpus,
    config: &ReasonerConfig,
) -> Result<(), BackendError> {
    for inst in corpus.instances() {
        for strategy in Strategy::ALL {
            script_strategy(backend, inst, strategy, &toy_answer(inst, strategy), config)?;
        }
    }
    Ok(())
}
