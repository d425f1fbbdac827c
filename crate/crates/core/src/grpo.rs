//! Group-relative policy optimization with token-level loss masking.
//!
//! For a group of `N` trajectories sampled for one question, with rewards
//! `R_i`, the loss is
//!
//! ```text
//! A_i  = (R_i - mean R) / std R            (population std; 0 if std < floor)
//! r_it = exp(log pi(y_t) - log pi_old(y_t))
//! L    = -(1 / sum_i M_i) sum_i sum_{t in Model(i)} [ min(r A, clip(r, 1-e, 1+e) A) - beta KL_t ]
//! ```
//!
//! where `M_i` counts Model-flagged tokens and `KL_t` is the exact
//! `KL(pi(.|prefix) || pi_ref(.|prefix))` over the full vocabulary.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interaction::{run_group, PromptRef, RolloutLimits, Termination, Trajectory};
use crate::policy::{sequence_logprobs, trajectory_forward, Forward, Gradients, PolicyParams};
use crate::reward::{composite_reward, RewardConfig};
use crate::seeds;
use crate::tools::Tool;
use crate::vocab::{TokenId, VocabSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GrpoConfig {
    pub group_size: usize,
    pub clip_epsilon: f64,
    pub kl_beta: f64,
    pub advantage_std_floor: f64,
    pub learning_rate: f64,
    /// Questions per training step.
    pub batch_size: usize,
    /// Reset the reference policy to the current policy at each stage start.
    pub refresh_reference_per_stage: bool,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        GrpoConfig {
            group_size: 8,
            clip_epsilon: 0.2,
            kl_beta: 0.001,
            advantage_std_floor: 1e-6,
            learning_rate: 1e-3,
            batch_size: 4,
            refresh_reference_per_stage: false,
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.group_size < 2 {
            return Err(Error::config("grpo.group_size must be at least 2"));
        }
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon.is_finite()) {
            return Err(Error::config("grpo.clip_epsilon must be positive"));
        }
        if !(self.kl_beta >= 0.0 && self.kl_beta.is_finite()) {
            return Err(Error::config("grpo.kl_beta must be >= 0"));
        }
        if !(self.advantage_std_floor >= 0.0 && self.advantage_std_floor.is_finite()) {
            return Err(Error::config("grpo.advantage_std_floor must be >= 0"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("grpo.learning_rate must be >= 0"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("grpo.batch_size must be positive"));
        }
        Ok(())
    }
}

/// Group-normalized advantages with population standard deviation.
pub fn compute_advantages(rewards: &[f64], floor: f64) -> Result<Vec<f64>> {
    if rewards.len() < 2 {
        return Err(Error::contract("advantages need a group of at least 2"));
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < floor || std == 0.0 {
        return Ok(vec![0.0; rewards.len()]);
    }
    Ok(rewards.iter().map(|r| (r - mean) / std).collect())
}

pub fn clipped_surrogate(r: f64, a: f64, eps: f64) -> f64 {
    (r * a).min(r.clamp(1.0 - eps, 1.0 + eps) * a)
}

/// Whether the unclipped branch is the minimum (the only branch with a
/// nonzero derivative in `r`).
fn unclipped_active(r: f64, a: f64, eps: f64) -> bool {
    r * a <= r.clamp(1.0 - eps, 1.0 + eps) * a
}

/// `KL(p || q)` from log-probabilities.
pub fn kl_from_logprobs(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(&lp, &lq)| if lp == f64::NEG_INFINITY { 0.0 } else { lp.exp() * (lp - lq) })
        .sum()
}

pub fn importance_ratios(new: &PolicyParams, old: &PolicyParams, traj: &Trajectory) -> Result<Vec<f64>> {
    new.check_same_arch(old)?;
    let a = sequence_logprobs(new, traj);
    let b = sequence_logprobs(old, traj);
    Ok(a.iter().zip(&b).map(|(x, y)| (x - y).exp()).collect())
}

/// Exact KL to the reference at each Model position.
fn kl_terms(new_fwd: &Forward, new: &PolicyParams, reference: &PolicyParams, traj: &Trajectory) -> Vec<f64> {
    let ref_fwd = trajectory_forward(reference, traj, false);
    traj.model_positions()
        .map(|i| kl_from_logprobs(&new_fwd.logprobs_for(new, i), &ref_fwd.logprobs_for(reference, i)))
        .collect()
}

/// Mean over Model positions of the exact per-position KL.
pub fn kl_term(new: &PolicyParams, reference: &PolicyParams, traj: &Trajectory) -> Result<f64> {
    new.check_same_arch(reference)?;
    let fwd = trajectory_forward(new, traj, false);
    let terms = kl_terms(&fwd, new, reference, traj);
    if terms.is_empty() {
        return Ok(0.0);
    }
    Ok(terms.iter().sum::<f64>() / terms.len() as f64)
}

/// The `N` trajectories sampled for one question.
#[derive(Debug, Clone)]
pub struct GroupBatch {
    pub question_id: usize,
    pub trajectories: Vec<Trajectory>,
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
    /// `log pi_old` at each Model position of each trajectory.
    pub old_logprobs: Vec<Vec<f64>>,
}

impl GroupBatch {
    /// Build a group whose old log-probabilities are the ones recorded while
    /// sampling (the sampling policy is `pi_old`).
    pub fn from_sampled(
        question_id: usize,
        trajectories: Vec<Trajectory>,
        rewards: Vec<f64>,
        floor: f64,
    ) -> Result<Self> {
        let advantages = compute_advantages(&rewards, floor)?;
        let old_logprobs = trajectories.iter().map(|t| t.sample_logprobs.clone()).collect();
        Ok(GroupBatch {
            question_id,
            trajectories,
            rewards,
            advantages,
            old_logprobs,
        })
    }

    /// Build a group scoring old log-probabilities with `old`.
    pub fn with_old_policy(
        question_id: usize,
        trajectories: Vec<Trajectory>,
        rewards: Vec<f64>,
        old: &PolicyParams,
        floor: f64,
    ) -> Result<Self> {
        let advantages = compute_advantages(&rewards, floor)?;
        let old_logprobs = trajectories.iter().map(|t| sequence_logprobs(old, t)).collect();
        Ok(GroupBatch {
            question_id,
            trajectories,
            rewards,
            advantages,
            old_logprobs,
        })
    }

    pub fn model_tokens(&self) -> usize {
        self.old_logprobs.iter().map(Vec::len).sum()
    }
}

/// Per-trajectory pieces of the group loss, kept so the loss can be
/// recomputed from logs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryLoss {
    pub surrogate_sum: f64,
    pub kl_sum: f64,
    pub model_tokens: usize,
}

#[derive(Debug, Clone)]
pub struct GroupLoss {
    pub loss: f64,
    pub grad: Gradients,
    pub per_trajectory: Vec<TrajectoryLoss>,
}

/// Group loss from its per-trajectory parts, in member order.
pub fn assemble_loss(parts: &[TrajectoryLoss], kl_beta: f64) -> Option<f64> {
    let m: usize = parts.iter().map(|p| p.model_tokens).sum();
    if m == 0 {
        return None;
    }
    let surrogate: f64 = parts.iter().map(|p| p.surrogate_sum).sum();
    let kl: f64 = parts.iter().map(|p| p.kl_sum).sum();
    Some(-(surrogate - kl_beta * kl) / m as f64)
}

/// Masked GRPO loss and its gradient for one group. Returns `None` when the
/// group has no Model tokens at all.
pub fn grpo_loss_and_grad(
    group: &GroupBatch,
    params: &PolicyParams,
    reference: &PolicyParams,
    config: &GrpoConfig,
) -> Result<Option<GroupLoss>> {
    params.check_same_arch(reference)?;
    let m_total = group.model_tokens();
    if m_total == 0 {
        tracing::warn!(question = group.question_id, "group has no Model tokens; skipped");
        return Ok(None);
    }
    let inv_m = 1.0 / m_total as f64;
    let (eps, beta) = (config.clip_epsilon, config.kl_beta);
    let mut grad = Gradients::zeros(&params.arch);
    let mut per_trajectory = Vec::with_capacity(group.trajectories.len());

    for ((traj, &adv), old) in group.trajectories.iter().zip(&group.advantages).zip(&group.old_logprobs) {
        let positions: Vec<usize> = traj.model_positions().collect();
        if positions.len() != old.len() {
            return Err(Error::contract("old log-probabilities do not match Model positions"));
        }
        if positions.is_empty() {
            per_trajectory.push(TrajectoryLoss { surrogate_sum: 0.0, kl_sum: 0.0, model_tokens: 0 });
            continue;
        }
        let fwd = trajectory_forward(params, traj, true);
        let ref_fwd = trajectory_forward(reference, traj, false);
        let mut surrogate_sum = 0.0;
        let mut kl_sum = 0.0;
        let mut dlogits = Vec::with_capacity(positions.len());
        for (&i, &old_lp) in positions.iter().zip(old) {
            let lp = fwd.logprobs_for(params, i);
            let y = traj.tokens[i] as usize;
            let r = (lp[y] - old_lp).exp();
            surrogate_sum += clipped_surrogate(r, adv, eps);
            let w = if unclipped_active(r, adv, eps) { -inv_m * adv * r } else { 0.0 };
            let mut g: Vec<f64> = lp.iter().map(|l| -w * l.exp()).collect();
            g[y] += w;
            let lq = ref_fwd.logprobs_for(reference, i);
            let kl = kl_from_logprobs(&lp, &lq);
            kl_sum += kl;
            if beta != 0.0 {
                for ((gj, &lpj), &lqj) in g.iter_mut().zip(&lp).zip(&lq) {
                    *gj += beta * inv_m * lpj.exp() * (lpj - lqj - kl);
                }
            }
            dlogits.push((i, g));
        }
        fwd.backward(params, &dlogits, &mut grad.0);
        per_trajectory.push(TrajectoryLoss {
            surrogate_sum,
            kl_sum,
            model_tokens: positions.len(),
        });
    }
    let loss = assemble_loss(&per_trajectory, beta).expect("m_total > 0");
    Ok(Some(GroupLoss { loss, grad, per_trajectory }))
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for (((p, &g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            if self.lr != 0.0 {
                *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
            }
        }
    }
}

/// A question as seen by one training step.
#[derive(Debug, Clone)]
pub struct StepQuestion {
    pub id: usize,
    pub prompt: Vec<TokenId>,
    pub pinned: usize,
    pub gold: String,
}

/// Everything a training step reads but does not change.
pub struct StepEnv<'a> {
    pub vocab: &'a VocabSpec,
    pub tool: &'a dyn Tool,
    pub limits: &'a RolloutLimits,
    pub reward: &'a RewardConfig,
    pub grpo: &'a GrpoConfig,
}

/// Policy, reference and optimizer state carried between steps.
#[derive(Debug, Clone)]
pub struct Learner {
    pub params: PolicyParams,
    pub reference: PolicyParams,
    pub adam: Adam,
}

impl Learner {
    pub fn new(params: PolicyParams, lr: f64) -> Self {
        Learner {
            reference: params.clone(),
            adam: Adam::new(params.values.len(), lr),
            params,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StepMetrics {
    pub mean_reward: f64,
    pub mean_format_reward: f64,
    pub mean_em: f64,
    pub mean_model_tokens: f64,
    pub valid_search_mean: f64,
    pub kl_value: f64,
    pub loss: f64,
    pub answered_fraction: f64,
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub metrics: StepMetrics,
    pub groups: Vec<GroupBatch>,
    /// Parallel to `groups`; `None` for skipped groups.
    pub losses: Vec<Option<Vec<TrajectoryLoss>>>,
}

/// The per-episode numbers that step metrics aggregate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStats {
    pub composite: f64,
    pub format_reward: f64,
    pub accuracy: f64,
    pub model_tokens: usize,
    pub valid_searches: usize,
    pub answered: bool,
}

impl EpisodeStats {
    pub fn of(t: &Trajectory) -> Self {
        let r = t.reward.as_ref();
        EpisodeStats {
            composite: r.map_or(0.0, |r| r.composite),
            format_reward: r.map_or(0.0, |r| r.format_reward),
            accuracy: r.map_or(0.0, |r| r.accuracy),
            model_tokens: t.count(crate::interaction::Origin::Model),
            valid_searches: t.valid_search_count(),
            answered: t.termination == Termination::Answered,
        }
    }
}

/// Step aggregates over all episodes, in group then member order. `parts`
/// covers the episodes of non-skipped groups; `group_losses` has one entry
/// per non-skipped group.
pub fn aggregate_metrics(episodes: &[EpisodeStats], parts: &[TrajectoryLoss], group_losses: &[f64]) -> StepMetrics {
    let n = episodes.len().max(1) as f64;
    let mean = |f: &dyn Fn(&EpisodeStats) -> f64| episodes.iter().map(f).sum::<f64>() / n;
    let m_total: usize = parts.iter().map(|p| p.model_tokens).sum();
    let kl_total: f64 = parts.iter().map(|p| p.kl_sum).sum();
    StepMetrics {
        mean_reward: mean(&|e| e.composite),
        mean_format_reward: mean(&|e| e.format_reward),
        mean_em: mean(&|e| e.accuracy),
        mean_model_tokens: mean(&|e| e.model_tokens as f64),
        valid_search_mean: mean(&|e| e.valid_searches as f64),
        kl_value: if m_total == 0 { 0.0 } else { kl_total / m_total as f64 },
        loss: if group_losses.is_empty() {
            0.0
        } else {
            group_losses.iter().sum::<f64>() / group_losses.len() as f64
        },
        answered_fraction: mean(&|e| if e.answered { 1.0 } else { 0.0 }),
    }
}

/// Sample a group per question from the current policy (which becomes
/// `pi_old`), score, and apply one optimizer update.
pub fn train_step(
    learner: &mut Learner,
    questions: &[StepQuestion],
    env: &StepEnv<'_>,
    master_seed: u64,
    global_step: u64,
) -> Result<StepOutcome> {
    let cfg = env.grpo;
    let mut groups = Vec::with_capacity(questions.len());
    for (qi, q) in questions.iter().enumerate() {
        let member_seeds: Vec<u64> = (0..cfg.group_size as u64)
            .map(|m| seeds::derive(master_seed, &[seeds::ROLLOUT, global_step, qi as u64, m]))
            .collect();
        let prompt = PromptRef { tokens: &q.prompt, pinned: q.pinned };
        let mut trajs = run_group(&learner.params, env.vocab, prompt, env.tool, env.limits, &member_seeds)?;
        let mut rewards = Vec::with_capacity(trajs.len());
        for t in &mut trajs {
            let r = composite_reward(t, &q.gold, env.vocab, env.reward);
            rewards.push(r.composite);
            t.reward = Some(r);
        }
        groups.push(GroupBatch::from_sampled(q.id, trajs, rewards, cfg.advantage_std_floor)?);
    }

    let mut grad = Gradients::zeros(&learner.params.arch);
    let mut group_losses = Vec::new();
    let mut losses = Vec::with_capacity(groups.len());
    let mut all_parts = Vec::new();
    for g in &groups {
        match grpo_loss_and_grad(g, &learner.params, &learner.reference, cfg)? {
            Some(gl) => {
                group_losses.push(gl.loss);
                grad.add(&gl.grad);
                all_parts.extend_from_slice(&gl.per_trajectory);
                losses.push(Some(gl.per_trajectory));
            }
            None => losses.push(None),
        }
    }
    if !group_losses.is_empty() {
        grad.scale(1.0 / group_losses.len() as f64);
        learner.adam.lr = cfg.learning_rate;
        learner.adam.step(&mut learner.params.values, &grad.0);
        if !learner.params.is_finite() {
            return Err(Error::contract("parameters became non-finite"));
        }
    }

    let stats: Vec<EpisodeStats> = groups.iter().flat_map(|g| &g.trajectories).map(EpisodeStats::of).collect();
    let metrics = aggregate_metrics(&stats, &all_parts, &group_losses);
    Ok(StepOutcome { metrics, groups, losses })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn advantage_examples() {
        assert_eq!(compute_advantages(&[1.0, 0.0, 0.0, 1.0], 1e-6).unwrap(), vec![1.0, -1.0, -1.0, 1.0]);
        assert_eq!(compute_advantages(&[0.7; 4], 1e-6).unwrap(), vec![0.0; 4]);
        assert!(compute_advantages(&[1.0], 1e-6).is_err());
    }

    #[test]
    fn surrogate_examples() {
        assert_eq!(clipped_surrogate(1.0, 2.0, 0.2), 2.0);
        assert!((clipped_surrogate(1.5, 1.0, 0.2) - 1.2).abs() < 1e-15);
        assert!((clipped_surrogate(0.5, -1.0, 0.2) + 0.8).abs() < 1e-15);
    }

    #[test]
    fn kl_brute_force() {
        let p = [0.5f64, 0.25, 0.25];
        let q = [0.2f64, 0.3, 0.5];
        let lp: Vec<f64> = p.iter().map(|x| x.ln()).collect();
        let lq: Vec<f64> = q.iter().map(|x| x.ln()).collect();
        let expected: f64 = p.iter().zip(&q).map(|(a, b)| a * (a / b).ln()).sum();
        assert!((kl_from_logprobs(&lp, &lq) - expected).abs() < 1e-12);
        assert_eq!(kl_from_logprobs(&lp, &lp), 0.0);
    }

    #[test]
    fn adam_zero_lr_keeps_params() {
        let mut adam = Adam::new(3, 0.0);
        let mut p = vec![1.0, 2.0, 3.0];
        adam.step(&mut p, &[0.5, -0.5, 1.0]);
        assert_eq!(p, vec![1.0, 2.0, 3.0]);
        assert_eq!(adam.t, 1);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut adam = Adam::new(2, 0.1);
        let mut p = vec![0.0, 0.0];
        adam.step(&mut p, &[2.0, -3.0]);
        assert!((p[0] + 0.1).abs() < 1e-6 && (p[1] - 0.1).abs() < 1e-6);
    }
}
