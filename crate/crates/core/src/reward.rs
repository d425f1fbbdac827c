//! Composite reward: exact-match accuracy blended with a format score.
//!
//! `composite = alpha * accuracy + (1 - alpha) * format`, where
//! `format = clamp(1 - sum of penalties of detected violations, 0, 1)`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grammar::{detect_violations, Violation, ViolationSet};
use crate::interaction::{extract_answer, Trajectory};
use crate::vocab::VocabSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub alpha: f64,
    pub penalties: BTreeMap<Violation, f64>,
}

impl Default for RewardConfig {
    fn default() -> Self {
        use Violation::*;
        RewardConfig {
            alpha: 0.8,
            penalties: [
                (NoAnswerTag, 0.5),
                (UnbalancedAnswer, 0.2),
                (NoThinkTag, 0.15),
                (UnbalancedThink, 0.1),
                (NoSearchUsage, 0.1),
                (EmptyAnswer, 0.2),
            ]
            .into_iter()
            .collect(),
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::config(format!("reward.alpha must lie in [0, 1], got {}", self.alpha)));
        }
        for (v, w) in &self.penalties {
            if !(w.is_finite() && *w >= 0.0) {
                return Err(Error::config(format!("reward.penalties.{v} must be >= 0, got {w}")));
            }
        }
        Ok(())
    }

    /// `1 - alpha`, snapped to the nearest multiple of 1e-12 so that decimal
    /// weights such as 0.8 / 0.2 combine without a stray ulp (a perfect
    /// episode scores exactly 1).
    pub fn format_weight(&self) -> f64 {
        ((1.0 - self.alpha) * 1e12).round() / 1e12
    }

    pub fn penalty(&self, v: Violation) -> f64 {
        self.penalties.get(&v).copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub accuracy: f64,
    pub violations: ViolationSet,
    pub format_reward: f64,
    pub composite: f64,
}

/// Lowercase, drop ASCII punctuation, collapse whitespace.
pub fn normalize_answer(text: &str) -> String {
    let lowered: String = text
        .to_lowercase()
        .chars()
        .filter(|c| !c.is_ascii_punctuation())
        .collect();
    lowered.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn exact_match(pred: &str, gold: &str) -> f64 {
    if normalize_answer(pred) == normalize_answer(gold) {
        1.0
    } else {
        0.0
    }
}

pub fn format_reward(violations: ViolationSet, config: &RewardConfig) -> f64 {
    let total: f64 = violations.iter().map(|v| config.penalty(v)).sum();
    (1.0 - total).clamp(0.0, 1.0)
}

pub fn combine(accuracy: f64, violations: ViolationSet, config: &RewardConfig) -> RewardBreakdown {
    let format = format_reward(violations, config);
    RewardBreakdown {
        accuracy,
        violations,
        format_reward: format,
        composite: config.alpha * accuracy + config.format_weight() * format,
    }
}

/// Score a response given as text (model-generated tokens only).
pub fn score_response(response: &str, gold: &str, config: &RewardConfig) -> RewardBreakdown {
    let accuracy = crate::grammar::first_block(
        response,
        crate::grammar::ANSWER_OPEN,
        crate::grammar::ANSWER_CLOSE,
    )
    .map_or(0.0, |a| exact_match(a, gold));
    combine(accuracy, detect_violations(response), config)
}

/// Score a trajectory. Violations are judged on the model-generated tokens
/// only; demonstrations in the prompt and injected observations are ignored.
pub fn composite_reward(
    traj: &Trajectory,
    gold: &str,
    vocab: &VocabSpec,
    config: &RewardConfig,
) -> RewardBreakdown {
    let accuracy = extract_answer(traj, vocab).map_or(0.0, |a| exact_match(&a, gold));
    combine(accuracy, detect_violations(&traj.model_text(vocab)), config)
}
