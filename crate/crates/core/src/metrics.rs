//! Episode log records, step metrics CSV, and the audit that recomputes the
//! CSV from the log.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grpo::{aggregate_metrics, assemble_loss, EpisodeStats, StepMetrics, StepOutcome, TrajectoryLoss};
use crate::interaction::{extract_answer, Origin, Termination, Trajectory};
use crate::reward::RewardBreakdown;
use crate::vocab::VocabSpec;

pub const METRICS_HEADER: &str =
    "step,stage_k,mean_reward,mean_format_reward,mean_em,mean_model_tokens,valid_search_mean,kl_value,loss";

/// One line of the episode log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub step: u64,
    pub stage_k: usize,
    pub question_id: usize,
    pub member: usize,
    pub termination: Termination,
    pub turn_count: usize,
    pub prompt_tokens: usize,
    pub model_tokens: usize,
    pub tool_tokens: usize,
    pub valid_searches: usize,
    pub answer: Option<String>,
    pub reward: RewardBreakdown,
    pub advantage: f64,
    /// Loss contribution; absent when the group was skipped.
    pub loss_part: Option<TrajectoryLoss>,
}

impl EpisodeRecord {
    pub fn from_trajectory(
        traj: &Trajectory,
        vocab: &VocabSpec,
        step: u64,
        stage_k: usize,
        question_id: usize,
        member: usize,
    ) -> Self {
        EpisodeRecord {
            step,
            stage_k,
            question_id,
            member,
            termination: traj.termination,
            turn_count: traj.turn_count,
            prompt_tokens: traj.count(Origin::Prompt),
            model_tokens: traj.count(Origin::Model),
            tool_tokens: traj.count(Origin::Tool),
            valid_searches: valid_search_count(traj),
            answer: extract_answer(traj, vocab),
            reward: traj.reward.clone().unwrap_or_else(|| RewardBreakdown {
                accuracy: 0.0,
                violations: Default::default(),
                format_reward: 0.0,
                composite: 0.0,
            }),
            advantage: 0.0,
            loss_part: None,
        }
    }

    pub fn stats(&self) -> EpisodeStats {
        EpisodeStats {
            composite: self.reward.composite,
            format_reward: self.reward.format_reward,
            accuracy: self.reward.accuracy,
            model_tokens: self.model_tokens,
            valid_searches: self.valid_searches,
            answered: self.termination == Termination::Answered,
        }
    }
}

/// Records for every rollout of a training step, in group then member order.
pub fn step_records(outcome: &StepOutcome, vocab: &VocabSpec, step: u64, stage_k: usize) -> Vec<EpisodeRecord> {
    let mut out = Vec::new();
    for (g, parts) in outcome.groups.iter().zip(&outcome.losses) {
        for (m, t) in g.trajectories.iter().enumerate() {
            let mut r = EpisodeRecord::from_trajectory(t, vocab, step, stage_k, g.question_id, m);
            r.advantage = g.advantages[m];
            r.loss_part = parts.as_ref().map(|p| p[m]);
            out.push(r);
        }
    }
    out
}

/// Tool invocations that were well-formed and returned results.
pub fn valid_search_count(traj: &Trajectory) -> usize {
    traj.valid_search_count()
}

/// `entry[n]` = percentage of all episodes that answered within `n` tool
/// turns, for `n` from 0 to the largest turn count seen (or `max_turns`).
pub fn cumulative_finish(episodes: &[(Termination, usize)], max_turns: usize) -> BTreeMap<usize, f64> {
    let mut table = BTreeMap::new();
    if episodes.is_empty() {
        return table;
    }
    let total = episodes.len() as f64;
    let top = episodes.iter().map(|e| e.1).max().unwrap_or(0).max(max_turns);
    for n in 0..=top {
        let done = episodes
            .iter()
            .filter(|(term, turns)| *term == Termination::Answered && *turns <= n)
            .count();
        table.insert(n, 100.0 * done as f64 / total);
    }
    table
}

pub fn finish_csv(table: &BTreeMap<usize, f64>) -> String {
    let mut s = String::from("turns,cumulative_finish_percent\n");
    for (n, p) in table {
        writeln!(s, "{n},{p}").unwrap();
    }
    s
}

pub fn metrics_row(step: u64, stage_k: usize, m: &StepMetrics) -> String {
    format!(
        "{step},{stage_k},{},{},{},{},{},{},{}",
        m.mean_reward,
        m.mean_format_reward,
        m.mean_em,
        m.mean_model_tokens,
        m.valid_search_mean,
        m.kl_value,
        m.loss
    )
}

/// Step metrics recomputed from one step's episode records.
pub fn metrics_from_records(records: &[EpisodeRecord], kl_beta: f64) -> StepMetrics {
    let stats: Vec<EpisodeStats> = records.iter().map(EpisodeRecord::stats).collect();
    let mut parts = Vec::new();
    let mut group_losses = Vec::new();
    let mut i = 0;
    while i < records.len() {
        // A group is a run of records for one question with members 0, 1, ...
        let mut j = i + 1;
        while j < records.len() && records[j].member != 0 {
            j += 1;
        }
        let group: Option<Vec<TrajectoryLoss>> = records[i..j].iter().map(|r| r.loss_part).collect();
        if let Some(g) = group {
            if let Some(l) = assemble_loss(&g, kl_beta) {
                group_losses.push(l);
                parts.extend(g);
            }
        }
        i = j;
    }
    aggregate_metrics(&stats, &parts, &group_losses)
}

/// Appends JSON lines through one writer.
pub struct JsonlWriter {
    out: std::io::BufWriter<std::fs::File>,
}

impl JsonlWriter {
    pub fn create(path: &Path) -> Result<Self> {
        Ok(JsonlWriter {
            out: std::io::BufWriter::new(std::fs::File::create(path)?),
        })
    }

    pub fn write<T: Serialize>(&mut self, value: &T) -> Result<()> {
        serde_json::to_writer(&mut self.out, value)?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush()?;
        self.out.into_inner().map_err(|e| e.into_error())?.sync_all()?;
        Ok(())
    }
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let f = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// Flat `key=value` manifest.
pub fn manifest_text(entries: &[(String, String)]) -> String {
    let mut s = String::new();
    for (k, v) in entries {
        writeln!(s, "{k}={v}").unwrap();
    }
    s
}

pub fn parse_manifest(text: &str) -> BTreeMap<String, String> {
    text.lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditReport {
    pub rows_checked: usize,
    pub episodes: usize,
}

/// Recompute every metrics row of a run directory from its episode log and
/// require exact textual equality.
pub fn audit(run_dir: &Path) -> Result<AuditReport> {
    let manifest = parse_manifest(&std::fs::read_to_string(run_dir.join("manifest.txt"))?);
    let kl_beta: f64 = manifest
        .get("grpo.kl_beta")
        .ok_or_else(|| Error::config("manifest lacks grpo.kl_beta"))?
        .parse()
        .map_err(|_| Error::config("manifest grpo.kl_beta is not a number"))?;
    let records: Vec<EpisodeRecord> = read_jsonl(&run_dir.join("episodes.jsonl"))?;
    let csv = std::fs::read_to_string(run_dir.join("metrics.csv"))?;
    let mut lines = csv.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(Error::contract("metrics.csv header mismatch"));
    }
    let mut by_step: BTreeMap<u64, Vec<EpisodeRecord>> = BTreeMap::new();
    for r in &records {
        by_step.entry(r.step).or_default().push(r.clone());
    }
    let mut rows = 0;
    for line in lines {
        let step: u64 = line
            .split(',')
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::contract(format!("bad metrics row {line:?}")))?;
        let recs = by_step
            .get(&step)
            .ok_or_else(|| Error::contract(format!("no episodes logged for step {step}")))?;
        let expected = metrics_row(step, recs[0].stage_k, &metrics_from_records(recs, kl_beta));
        if expected != line {
            return Err(Error::contract(format!(
                "metrics row for step {step} does not match the episode log:\n  csv:      {line}\n  episodes: {expected}"
            )));
        }
        rows += 1;
    }
    if rows != by_step.len() {
        return Err(Error::contract(format!(
            "{} steps in the episode log but {rows} metrics rows",
            by_step.len()
        )));
    }
    Ok(AuditReport {
        rows_checked: rows,
        episodes: records.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finish_table_example() {
        let eps = [
            (Termination::Answered, 2),
            (Termination::Answered, 2),
            (Termination::Answered, 3),
        ];
        let t = cumulative_finish(&eps, 3);
        assert_eq!(t[&1], 0.0);
        assert!((t[&2] - 200.0 / 3.0).abs() < 1e-12);
        assert_eq!(t[&3], 100.0);
    }

    #[test]
    fn finish_table_edge_cases() {
        assert!(cumulative_finish(&[], 6).is_empty());
        let t = cumulative_finish(&[(Termination::TokenBudget, 1), (Termination::TurnBudget, 6)], 6);
        assert!(t.values().all(|&v| v == 0.0));
        let t = cumulative_finish(&[(Termination::Answered, 1), (Termination::TokenBudget, 0)], 6);
        let vals: Vec<f64> = t.values().copied().collect();
        assert!(vals.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(*vals.last().unwrap(), 50.0);
    }

    #[test]
    fn manifest_round_trip() {
        let entries = vec![("a".to_string(), "1".to_string()), ("b.c".to_string(), "[2, 1, 0]".to_string())];
        let parsed = parse_manifest(&manifest_text(&entries));
        assert_eq!(parsed["b.c"], "[2, 1, 0]");
        assert_eq!(parsed.len(), 2);
    }
}
