//! Multi-turn rollouts: token-by-token generation interleaved with tool
//! calls, producing a trajectory whose tokens carry origin flags for loss
//! masking.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grammar::{first_block, ANSWER_CLOSE as ANSWER_CLOSE_LIT, ANSWER_OPEN as ANSWER_OPEN_LIT};
use crate::policy::{sample_from_logprobs, Forward, PolicyParams};
use crate::reward::RewardBreakdown;
use crate::tools::Tool;
use crate::vocab::{self, TokenId, VocabSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Origin {
    Prompt,
    Model,
    Tool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Termination {
    Answered,
    TurnBudget,
    TokenBudget,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RolloutLimits {
    pub max_turns: usize,
    pub max_response_tokens: usize,
    pub max_prompt_tokens: usize,
    pub temperature: f64,
}

impl Default for RolloutLimits {
    fn default() -> Self {
        RolloutLimits {
            max_turns: 6,
            max_response_tokens: 64,
            max_prompt_tokens: 512,
            temperature: 1.0,
        }
    }
}

impl RolloutLimits {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("max_turns", self.max_turns),
            ("max_response_tokens", self.max_response_tokens),
            ("max_prompt_tokens", self.max_prompt_tokens),
        ] {
            if v == 0 {
                return Err(Error::config(format!("limits.{name} must be positive")));
            }
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::config(format!(
                "limits.temperature must be positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// One tool invocation: the query text and whether it returned results.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolCall {
    pub query: String,
    pub valid: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub tokens: Vec<TokenId>,
    pub origins: Vec<Origin>,
    pub turn_count: usize,
    pub termination: Termination,
    pub prompt_len: usize,
    /// Leading prompt tokens that stay visible when the window overflows.
    pub pinned_len: usize,
    /// Log-probability of each Model token under the sampling policy at
    /// temperature 1, in order.
    pub sample_logprobs: Vec<f64>,
    pub tool_calls: Vec<ToolCall>,
    pub reward: Option<RewardBreakdown>,
}

impl Trajectory {
    pub fn model_positions(&self) -> impl Iterator<Item = usize> + '_ {
        self.origins
            .iter()
            .enumerate()
            .filter(|(_, o)| **o == Origin::Model)
            .map(|(i, _)| i)
    }

    pub fn count(&self, origin: Origin) -> usize {
        self.origins.iter().filter(|o| **o == origin).count()
    }

    pub fn model_tokens(&self) -> Vec<TokenId> {
        self.model_positions().map(|i| self.tokens[i]).collect()
    }

    /// Text of the Model-flagged tokens only.
    pub fn model_text(&self, vocab: &VocabSpec) -> String {
        vocab.detokenize(&self.model_tokens())
    }

    /// Prompt, response and tool output as one transcript.
    pub fn full_text(&self, vocab: &VocabSpec) -> String {
        vocab.detokenize(&self.tokens)
    }

    pub fn valid_search_count(&self) -> usize {
        self.tool_calls.iter().filter(|c| c.valid).count()
    }
}

/// Content of the first balanced answer block among Model tokens. An empty
/// block yields `Some("")`.
pub fn extract_answer(traj: &Trajectory, vocab: &VocabSpec) -> Option<String> {
    let text = traj.model_text(vocab);
    first_block(&text, ANSWER_OPEN_LIT, ANSWER_CLOSE_LIT).map(|s| s.trim().to_string())
}

/// Anything that can drive a rollout: the learned policy, or scripted
/// policies used in tests and demos.
pub trait RolloutPolicy {
    type State: Clone;
    fn start(&self, prompt: &[TokenId], pinned: usize) -> Self::State;
    fn push(&self, state: &mut Self::State, token: TokenId, origin: Origin);
    /// Log-probabilities of the next token at temperature 1.
    fn next_logprobs(&self, state: &Self::State) -> Vec<f64>;
}

impl RolloutPolicy for PolicyParams {
    type State = Forward;

    fn start(&self, prompt: &[TokenId], pinned: usize) -> Forward {
        let mut fwd = Forward::new(self, pinned, false);
        for &t in prompt {
            fwd.push(self, t);
        }
        fwd
    }

    fn push(&self, state: &mut Forward, token: TokenId, _origin: Origin) {
        state.push(self, token);
    }

    fn next_logprobs(&self, state: &Forward) -> Vec<f64> {
        state.last_logprobs(self)
    }
}

/// Replays a fixed response, emitting a one-hot distribution for each Model
/// token; tool output is supplied by the loop, so the script holds only the
/// model's own tokens. After the script ends it emits `</answer>`.
#[derive(Debug, Clone)]
pub struct ScriptedPolicy {
    pub vocab_size: usize,
    pub script: Vec<TokenId>,
}

impl ScriptedPolicy {
    /// Script from a transcript, dropping `<information>` blocks.
    pub fn from_transcript(vocab: &VocabSpec, transcript: &str) -> Self {
        let mut script = Vec::new();
        let mut in_info = false;
        for t in vocab.tokenize(transcript) {
            match t {
                vocab::INFO_OPEN => in_info = true,
                vocab::INFO_CLOSE => in_info = false,
                _ if !in_info => script.push(t),
                _ => {}
            }
        }
        ScriptedPolicy {
            vocab_size: vocab.size(),
            script,
        }
    }
}

impl RolloutPolicy for ScriptedPolicy {
    /// Number of Model tokens emitted so far.
    type State = usize;

    fn start(&self, _prompt: &[TokenId], _pinned: usize) -> usize {
        0
    }

    fn push(&self, state: &mut usize, _token: TokenId, origin: Origin) {
        if origin == Origin::Model {
            *state += 1;
        }
    }

    fn next_logprobs(&self, state: &usize) -> Vec<f64> {
        let next = self.script.get(*state).copied().unwrap_or(vocab::ANSWER_CLOSE);
        let mut lp = vec![f64::NEG_INFINITY; self.vocab_size];
        lp[next as usize] = 0.0;
        lp
    }
}

/// Greedy wrapper: the same policy, sampled at the temperature-0 limit.
pub fn greedy(limits: RolloutLimits) -> RolloutLimits {
    RolloutLimits {
        temperature: crate::policy::GREEDY_TEMPERATURE / 2.0,
        ..limits
    }
}

/// Prompt tokens and how many of them are pinned against window overflow.
#[derive(Debug, Clone, Copy)]
pub struct PromptRef<'a> {
    pub tokens: &'a [TokenId],
    pub pinned: usize,
}

/// Run one rollout from scratch.
pub fn run_rollout<P: RolloutPolicy>(
    policy: &P,
    vocab: &VocabSpec,
    prompt: PromptRef<'_>,
    tool: &dyn Tool,
    limits: &RolloutLimits,
    seed: u64,
) -> Result<Trajectory> {
    check_prompt(prompt, limits)?;
    let state = policy.start(prompt.tokens, prompt.pinned);
    Ok(continue_rollout(policy, vocab, prompt, state, tool, limits, seed))
}

/// Run one rollout per seed, sharing the prompt prefix computation. Results
/// are in seed order.
pub fn run_group<P: RolloutPolicy>(
    policy: &P,
    vocab: &VocabSpec,
    prompt: PromptRef<'_>,
    tool: &dyn Tool,
    limits: &RolloutLimits,
    seeds: &[u64],
) -> Result<Vec<Trajectory>> {
    check_prompt(prompt, limits)?;
    let state = policy.start(prompt.tokens, prompt.pinned);
    Ok(seeds
        .iter()
        .map(|&s| continue_rollout(policy, vocab, prompt, state.clone(), tool, limits, s))
        .collect())
}

fn check_prompt(prompt: PromptRef<'_>, limits: &RolloutLimits) -> Result<()> {
    limits.validate()?;
    if prompt.tokens.len() > limits.max_prompt_tokens {
        return Err(Error::config(format!(
            "prompt has {} tokens, limits.max_prompt_tokens is {}",
            prompt.tokens.len(),
            limits.max_prompt_tokens
        )));
    }
    if prompt.pinned > prompt.tokens.len() {
        return Err(Error::contract("pinned header longer than prompt"));
    }
    Ok(())
}

fn continue_rollout<P: RolloutPolicy>(
    policy: &P,
    vocab: &VocabSpec,
    prompt: PromptRef<'_>,
    mut state: P::State,
    tool: &dyn Tool,
    limits: &RolloutLimits,
    seed: u64,
) -> Trajectory {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tokens = prompt.tokens.to_vec();
    let mut origins = vec![Origin::Prompt; tokens.len()];
    let mut sample_logprobs = Vec::new();
    let mut tool_calls = Vec::new();
    let mut search_start: Option<usize> = None;
    let mut model_count = 0;

    let termination = loop {
        if model_count >= limits.max_response_tokens {
            break Termination::TokenBudget;
        }
        let lp = policy.next_logprobs(&state);
        let tok = sample_from_logprobs(&lp, limits.temperature, &mut rng);
        sample_logprobs.push(lp[tok as usize]);
        tokens.push(tok);
        origins.push(Origin::Model);
        policy.push(&mut state, tok, Origin::Model);
        model_count += 1;

        match tok {
            vocab::ANSWER_CLOSE => break Termination::Answered,
            vocab::SEARCH_OPEN if search_start.is_none() => search_start = Some(tokens.len()),
            vocab::SEARCH_CLOSE => {
                let Some(start) = search_start.take() else { continue };
                if tool_calls.len() >= limits.max_turns {
                    break Termination::TurnBudget;
                }
                let query = vocab.detokenize(&tokens[start..tokens.len() - 1]);
                let obs = tool.call(&query);
                let mut injected = vec![vocab::INFO_OPEN];
                injected.extend(vocab.tokenize(&obs.text));
                injected.push(vocab::INFO_CLOSE);
                for t in injected {
                    tokens.push(t);
                    origins.push(Origin::Tool);
                    policy.push(&mut state, t, Origin::Tool);
                }
                tool_calls.push(ToolCall {
                    query,
                    valid: obs.valid,
                });
            }
            _ => {}
        }
    };

    Trajectory {
        tokens,
        origins,
        turn_count: tool_calls.len(),
        termination,
        prompt_len: prompt.tokens.len(),
        pinned_len: prompt.pinned,
        sample_logprobs,
        tool_calls,
        reward: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tools::world::{enumerate_questions, generate_world, oracle_solve, SearchTool};

    fn setup() -> (crate::tools::SyntheticWorld, VocabSpec) {
        let world = generate_world(1, 30, 50).unwrap();
        let vocab = crate::curriculum::world_vocab(&world).unwrap();
        (world, vocab)
    }

    #[test]
    fn scripted_oracle_replays_exactly() {
        let (world, vocab) = setup();
        for hops in [1, 2] {
            let q = &enumerate_questions(&world, hops)[0];
            let transcript = oracle_solve(&world, q).unwrap();
            let policy = ScriptedPolicy::from_transcript(&vocab, &transcript);
            let prompt = vocab.tokenize(&q.prompt_text);
            let traj = run_rollout(
                &policy,
                &vocab,
                PromptRef { tokens: &prompt, pinned: 0 },
                &SearchTool::new(&world),
                &RolloutLimits::default(),
                0,
            )
            .unwrap();
            assert_eq!(traj.termination, Termination::Answered);
            assert_eq!(traj.turn_count, hops);
            assert_eq!(traj.valid_search_count(), hops);
            assert_eq!(vocab.detokenize(&traj.tokens[prompt.len()..]), transcript);
            assert_eq!(extract_answer(&traj, &vocab).unwrap(), q.gold_answer);
            assert!(traj.sample_logprobs.iter().all(|&l| l == 0.0));
        }
    }

    #[test]
    fn token_budget_and_absent_answer() {
        let (world, vocab) = setup();
        let think = vec![vocab::THINK_OPEN; 100];
        let policy = ScriptedPolicy { vocab_size: vocab.size(), script: think };
        let limits = RolloutLimits { max_response_tokens: 20, ..Default::default() };
        let traj = run_rollout(
            &policy,
            &vocab,
            PromptRef { tokens: &[], pinned: 0 },
            &SearchTool::new(&world),
            &limits,
            0,
        )
        .unwrap();
        assert_eq!(traj.termination, Termination::TokenBudget);
        assert_eq!(traj.count(Origin::Model), 20);
        assert_eq!(extract_answer(&traj, &vocab), None);
    }

    #[test]
    fn empty_answer_is_present() {
        let (world, vocab) = setup();
        let policy = ScriptedPolicy {
            vocab_size: vocab.size(),
            script: vec![vocab::ANSWER_OPEN, vocab::ANSWER_CLOSE],
        };
        let traj = run_rollout(
            &policy,
            &vocab,
            PromptRef { tokens: &[], pinned: 0 },
            &SearchTool::new(&world),
            &RolloutLimits::default(),
            0,
        )
        .unwrap();
        assert_eq!(extract_answer(&traj, &vocab), Some(String::new()));
    }

    #[test]
    fn seventh_search_stops_without_invocation() {
        let (world, vocab) = setup();
        let q = vocab.tokenize(&format!("{} father", world.entities[0]));
        let mut script = Vec::new();
        for _ in 0..7 {
            script.push(vocab::SEARCH_OPEN);
            script.extend(&q);
            script.push(vocab::SEARCH_CLOSE);
        }
        let policy = ScriptedPolicy { vocab_size: vocab.size(), script };
        let limits = RolloutLimits { max_response_tokens: 500, ..Default::default() };
        let traj = run_rollout(
            &policy,
            &vocab,
            PromptRef { tokens: &[], pinned: 0 },
            &SearchTool::new(&world),
            &limits,
            0,
        )
        .unwrap();
        assert_eq!(traj.termination, Termination::TurnBudget);
        assert_eq!(traj.turn_count, 6);
        assert_eq!(*traj.tokens.last().unwrap(), vocab::SEARCH_CLOSE);
    }

    #[test]
    fn prompt_too_long_is_config_error() {
        let (world, vocab) = setup();
        let policy = ScriptedPolicy { vocab_size: vocab.size(), script: vec![] };
        let limits = RolloutLimits { max_prompt_tokens: 2, ..Default::default() };
        let err = run_rollout(
            &policy,
            &vocab,
            PromptRef { tokens: &[10, 11, 12], pinned: 0 },
            &SearchTool::new(&world),
            &limits,
            0,
        )
        .unwrap_err();
        assert!(err.is_config());
    }
}
