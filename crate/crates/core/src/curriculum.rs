//! Few-shot to zero-shot curriculum: stage `k` samples every rollout from a
//! prompt holding the first `k` demonstrations, and the stages run with
//! strictly decreasing `k` down to zero.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grammar::TAG_LITERALS;
use crate::grpo::{train_step, Learner, StepEnv, StepOutcome, StepQuestion};
use crate::seeds;
use crate::tools::world::{oracle_solve, question_words, Question, SyntheticWorld, DOC_SEPARATOR, NO_RESULTS};
use crate::vocab::{TokenId, VocabSpec};

/// Instruction header. It is pinned in the context window.
pub const HEADER: &str = "answer the question . think inside <think> </think> . \
search inside <search> </search> and read results inside <information> </information> . \
give the answer inside <answer> </answer> .";
pub const EXAMPLES_INTRO: &str = "here are some examples :";
pub const EXAMPLE_PROBLEM: &str = "example problem :";
pub const EXAMPLE_SOLUTION: &str = "example solution :";
pub const SOLVE_INTRO: &str = "now solve the following problem :";
pub const ACTUAL_PROBLEM: &str = "actual problem :";

/// Every non-tag word used by the prompt template.
pub fn template_words() -> Vec<&'static str> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for part in [HEADER, EXAMPLES_INTRO, EXAMPLE_PROBLEM, EXAMPLE_SOLUTION, SOLVE_INTRO, ACTUAL_PROBLEM] {
        for w in part.split_whitespace() {
            if !TAG_LITERALS.contains(&w) && seen.insert(w) {
                out.push(w);
            }
        }
    }
    out
}

/// Vocabulary covering the template, questions, documents and tool output
/// of a world.
pub fn world_vocab(world: &SyntheticWorld) -> Result<VocabSpec> {
    let mut seen = BTreeSet::new();
    let mut words: Vec<String> = Vec::new();
    let fixed = template_words()
        .into_iter()
        .chain(question_words())
        .chain([DOC_SEPARATOR])
        .chain(NO_RESULTS.split_whitespace())
        .map(str::to_string);
    for w in fixed.chain(world.words()) {
        if seen.insert(w.clone()) {
            words.push(w);
        }
    }
    VocabSpec::new(words.iter().map(String::as_str), [])
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demo {
    pub question: String,
    pub solution: String,
}

/// Ordered worked examples; stage `k` uses the first `k`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DemoLibrary {
    pub demos: Vec<Demo>,
}

impl DemoLibrary {
    /// Solve each question with the oracle, in order.
    pub fn from_oracle(world: &SyntheticWorld, questions: &[Question]) -> Result<Self> {
        let demos = questions
            .iter()
            .map(|q| {
                Ok(Demo {
                    question: q.prompt_text.clone(),
                    solution: oracle_solve(world, q)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(DemoLibrary { demos })
    }

    pub fn max_count(&self) -> usize {
        self.demos.len()
    }

    /// SHA-256 over the demo texts, hex encoded.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for d in &self.demos {
            h.update(d.question.as_bytes());
            h.update([0u8]);
            h.update(d.solution.as_bytes());
            h.update([0u8]);
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prompt {
    pub tokens: Vec<TokenId>,
    /// Length of the pinned instruction header.
    pub pinned: usize,
}

/// The prompt text for `k` demonstrations.
pub fn prompt_text(library: &DemoLibrary, k: usize, question: &str) -> Result<String> {
    if k > library.max_count() {
        return Err(Error::config(format!(
            "stage needs {k} demonstrations but the library holds {}",
            library.max_count()
        )));
    }
    let mut text = String::from(HEADER);
    if k > 0 {
        text.push(' ');
        text.push_str(EXAMPLES_INTRO);
        for d in &library.demos[..k] {
            text.push_str(&format!(" {EXAMPLE_PROBLEM} {} {EXAMPLE_SOLUTION} {}", d.question, d.solution));
        }
    }
    text.push_str(&format!(" {SOLVE_INTRO} {ACTUAL_PROBLEM} {question}"));
    Ok(text)
}

pub fn build_prompt(
    library: &DemoLibrary,
    k: usize,
    question: &str,
    vocab: &VocabSpec,
    max_prompt_tokens: usize,
) -> Result<Prompt> {
    let tokens = vocab.tokenize(&prompt_text(library, k, question)?);
    if tokens.len() > max_prompt_tokens {
        return Err(Error::config(format!(
            "prompt with {k} demonstrations has {} tokens, above limits.max_prompt_tokens = {max_prompt_tokens}",
            tokens.len()
        )));
    }
    Ok(Prompt {
        pinned: vocab.tokenize(HEADER).len(),
        tokens,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSchedule {
    pub stages: Vec<usize>,
    pub steps_per_stage: usize,
}

impl StageSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.stages.last() != Some(&0) {
            return Err(Error::config("schedule.stages must end with 0"));
        }
        if self.stages.windows(2).any(|w| w[0] <= w[1]) {
            return Err(Error::config("schedule.stages must be strictly decreasing"));
        }
        if self.steps_per_stage == 0 {
            return Err(Error::config("schedule.steps_per_stage must be positive"));
        }
        Ok(())
    }
}

/// Question ids per stage, in schedule order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetPartition {
    pub slices: Vec<(usize, Vec<usize>)>,
}

impl DatasetPartition {
    pub fn get(&self, k: usize) -> Option<&[usize]> {
        self.slices.iter().find(|(s, _)| *s == k).map(|(_, v)| v.as_slice())
    }
}

/// Seeded shuffle, then contiguous equal slices with the remainder going to
/// the last stage.
pub fn partition_dataset(ids: &[usize], schedule: &StageSchedule, seed: u64) -> Result<DatasetPartition> {
    let n_stages = schedule.stages.len();
    if ids.len() < n_stages {
        return Err(Error::config(format!(
            "{} training questions cannot cover {n_stages} stages",
            ids.len()
        )));
    }
    let mut shuffled = ids.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let size = ids.len() / n_stages;
    let slices = schedule
        .stages
        .iter()
        .enumerate()
        .map(|(i, &k)| {
            let end = if i + 1 == n_stages { ids.len() } else { (i + 1) * size };
            (k, shuffled[i * size..end].to_vec())
        })
        .collect();
    Ok(DatasetPartition { slices })
}

/// Optional early stage advance when the trailing mean reward is high.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardTrigger {
    pub threshold: f64,
    pub window: usize,
}

/// Where a run starts: a fresh run is stage 0, step 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Position {
    pub stage_index: usize,
    pub global_step: u64,
}

pub enum CurriculumEvent<'a> {
    StageStart { stage_index: usize, k: usize, global_step: u64 },
    Step { stage_index: usize, k: usize, global_step: u64, outcome: &'a StepOutcome },
    StageEnd { stage_index: usize, k: usize, next: Position, learner: &'a Learner },
}

/// Inputs to the curriculum driver that stay fixed for a run.
pub struct CurriculumSetup<'a> {
    pub env: StepEnv<'a>,
    pub questions: &'a [Question],
    pub library: &'a DemoLibrary,
    pub partition: &'a DatasetPartition,
    pub schedule: &'a StageSchedule,
    pub trigger: Option<RewardTrigger>,
    pub master_seed: u64,
}

/// Run the stages from `start` onwards, reporting every stage boundary and
/// step to `observer`.
pub fn run_curriculum(
    setup: &CurriculumSetup<'_>,
    learner: &mut Learner,
    start: Position,
    observer: &mut dyn FnMut(CurriculumEvent<'_>) -> Result<()>,
) -> Result<Position> {
    setup.schedule.validate()?;
    let by_id = |id: usize| {
        setup
            .questions
            .iter()
            .find(|q| q.id == id)
            .ok_or_else(|| Error::contract(format!("question {id} not in dataset")))
    };
    let mut pos = start;
    while pos.stage_index < setup.schedule.stages.len() {
        let stage_index = pos.stage_index;
        let k = setup.schedule.stages[stage_index];
        let ids = setup
            .partition
            .get(k)
            .ok_or_else(|| Error::contract(format!("no partition slice for stage {k}")))?;
        // Prompts for the stage, built once.
        let stage_questions: Vec<StepQuestion> = ids
            .iter()
            .map(|&id| {
                let q = by_id(id)?;
                let p = build_prompt(setup.library, k, &q.prompt_text, setup.env.vocab, setup.env.limits.max_prompt_tokens)?;
                Ok(StepQuestion { id, prompt: p.tokens, pinned: p.pinned, gold: q.gold_answer.clone() })
            })
            .collect::<Result<_>>()?;
        if setup.env.grpo.refresh_reference_per_stage {
            learner.reference = learner.params.clone();
        }
        observer(CurriculumEvent::StageStart { stage_index, k, global_step: pos.global_step })?;
        let mut recent: Vec<f64> = Vec::new();
        for _ in 0..setup.schedule.steps_per_stage {
            let batch = select_batch(&stage_questions, setup.env.grpo.batch_size, setup.master_seed, pos.global_step);
            let outcome = train_step(learner, &batch, &setup.env, setup.master_seed, pos.global_step)?;
            observer(CurriculumEvent::Step { stage_index, k, global_step: pos.global_step, outcome: &outcome })?;
            pos.global_step += 1;
            recent.push(outcome.metrics.mean_reward);
            if let Some(t) = setup.trigger {
                if k > 0 && recent.len() >= t.window {
                    let tail = &recent[recent.len() - t.window..];
                    if tail.iter().sum::<f64>() / t.window as f64 >= t.threshold {
                        break;
                    }
                }
            }
        }
        pos.stage_index += 1;
        observer(CurriculumEvent::StageEnd { stage_index, k, next: pos, learner })?;
    }
    Ok(pos)
}

/// `batch_size` distinct questions drawn with the step's seed (all of them
/// when the slice is smaller), in draw order.
pub fn select_batch(questions: &[StepQuestion], batch_size: usize, master_seed: u64, global_step: u64) -> Vec<StepQuestion> {
    let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(master_seed, &[seeds::BATCH, global_step]));
    questions
        .choose_multiple(&mut rng, batch_size.min(questions.len()))
        .cloned()
        .collect()
}
