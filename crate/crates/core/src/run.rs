//! Run configuration, experiment setup, and the train / eval / gen-world
//! commands behind the CLI.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::curriculum::{
    build_prompt, partition_dataset, run_curriculum, world_vocab, CurriculumEvent, CurriculumSetup,
    DatasetPartition, DemoLibrary, Position, RewardTrigger, StageSchedule,
};
use crate::error::{Error, Result};
use crate::grpo::{GrpoConfig, Learner, StepEnv, StepMetrics};
use crate::interaction::{greedy, run_rollout, PromptRef, RolloutLimits, Termination, Trajectory};
use crate::metrics::{
    cumulative_finish, finish_csv, manifest_text, metrics_row, step_records, EpisodeRecord, JsonlWriter,
    METRICS_HEADER,
};
use crate::policy::{load_checkpoint, save_checkpoint, ArchSpec, Checkpoint, PolicyParams, TrainState};
use crate::reward::{composite_reward, RewardConfig};
use crate::seeds;
use crate::tools::world::{enumerate_questions, generate_world, Question, SearchTool, SyntheticWorld};
use crate::vocab::VocabSpec;

/// Overrides `output_dir` from the config file.
pub const OUTPUT_DIR_ENV: &str = "ICRL_OUTPUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldConfig {
    pub seed: u64,
    pub n_entities: usize,
    pub n_relations: usize,
    /// Hop counts of the questions used.
    pub hops: Vec<usize>,
    /// Held-out questions solved by the oracle to form the demo library.
    pub n_demos: usize,
    /// Held-out questions reported as the test split.
    pub n_test: usize,
    /// Cap on training questions (all remaining when absent).
    #[serde(default)]
    pub max_train: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    pub context: usize,
    pub max_rel: usize,
    pub init_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub stages: Vec<usize>,
    pub steps_per_stage: usize,
    #[serde(default)]
    pub reward_trigger: Option<RewardTrigger>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub master_seed: u64,
    pub output_dir: PathBuf,
    pub world: WorldConfig,
    pub model: ModelConfig,
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub grpo: GrpoConfig,
    #[serde(default)]
    pub reward: RewardConfig,
    #[serde(default)]
    pub limits: RolloutLimits,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Output directory after applying the environment override.
    pub fn resolved_output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_DIR_ENV) {
            Some(v) if !v.is_empty() => PathBuf::from(v),
            _ => self.output_dir.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let w = &self.world;
        if w.hops.is_empty() || w.hops.contains(&0) {
            return Err(Error::config("world.hops must list positive hop counts"));
        }
        let max_k = self.schedule.stages.iter().copied().max().unwrap_or(0);
        if w.n_demos < max_k {
            return Err(Error::config(format!(
                "world.n_demos = {} is below the largest stage demo count {max_k}",
                w.n_demos
            )));
        }
        if self.model.init_scale < 0.0 || !self.model.init_scale.is_finite() {
            return Err(Error::config("model.init_scale must be a finite non-negative number"));
        }
        StageSchedule {
            stages: self.schedule.stages.clone(),
            steps_per_stage: self.schedule.steps_per_stage,
        }
        .validate()?;
        if let Some(t) = self.schedule.reward_trigger {
            if t.window == 0 {
                return Err(Error::config("schedule.reward_trigger.window must be positive"));
            }
        }
        self.grpo.validate()?;
        self.reward.validate()?;
        self.limits.validate()?;
        Ok(())
    }

    pub fn schedule(&self) -> StageSchedule {
        StageSchedule {
            stages: self.schedule.stages.clone(),
            steps_per_stage: self.schedule.steps_per_stage,
        }
    }

    /// Flat key/value listing of every setting.
    pub fn flat_entries(&self) -> Vec<(String, String)> {
        let value = serde_json::to_value(self).expect("config serializes");
        let mut out = Vec::new();
        flatten("", &value, &mut out);
        out
    }
}

fn flatten(prefix: &str, v: &serde_json::Value, out: &mut Vec<(String, String)>) {
    match v {
        serde_json::Value::Object(map) => {
            for (k, child) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, child, out);
            }
        }
        other => out.push((prefix.to_string(), other.to_string())),
    }
}

/// Everything derived from a config before training starts.
pub struct Experiment {
    pub config: RunConfig,
    pub world: SyntheticWorld,
    pub vocab: VocabSpec,
    pub arch: ArchSpec,
    pub train: Vec<Question>,
    pub test: Vec<Question>,
    pub demo_questions: Vec<Question>,
    pub library: DemoLibrary,
    pub partition: DatasetPartition,
}

impl Experiment {
    pub fn prepare(config: &RunConfig) -> Result<Self> {
        config.validate()?;
        let w = &config.world;
        let world = generate_world(w.seed, w.n_entities, w.n_relations)?;
        let vocab = world_vocab(&world)?;
        let mut all = Vec::new();
        for &h in &w.hops {
            all.extend(enumerate_questions(&world, h));
        }
        all.shuffle(&mut ChaCha8Rng::seed_from_u64(world.seed));
        for (i, q) in all.iter_mut().enumerate() {
            q.id = i;
        }
        let needed = w.n_demos + w.n_test + config.schedule.stages.len();
        if all.len() < needed {
            return Err(Error::config(format!(
                "world yields {} questions, fewer than n_demos + n_test + one per stage ({needed})",
                all.len()
            )));
        }
        let demo_questions = all[..w.n_demos].to_vec();
        let test = all[w.n_demos..w.n_demos + w.n_test].to_vec();
        let mut train = all[w.n_demos + w.n_test..].to_vec();
        if let Some(cap) = w.max_train {
            train.truncate(cap.max(config.schedule.stages.len()));
        }
        let library = DemoLibrary::from_oracle(&world, &demo_questions)?;
        let ids: Vec<usize> = train.iter().map(|q| q.id).collect();
        let partition = partition_dataset(&ids, &config.schedule(), seeds::derive(config.master_seed, &[seeds::PARTITION]))?;
        let m = &config.model;
        let arch = ArchSpec {
            vocab: vocab.size(),
            d_model: m.d_model,
            n_heads: m.n_heads,
            n_layers: m.n_layers,
            d_ff: m.d_ff,
            context: m.context,
            max_rel: m.max_rel,
        };
        arch.validate()?;
        // Every prompt the run can build must fit.
        let max_k = config.schedule.stages[0];
        for q in train.iter().chain(&test) {
            build_prompt(&library, max_k, &q.prompt_text, &vocab, config.limits.max_prompt_tokens)?;
        }
        Ok(Experiment {
            config: config.clone(),
            world,
            vocab,
            arch,
            train,
            test,
            demo_questions,
            library,
            partition,
        })
    }

    pub fn init_params(&self) -> Result<PolicyParams> {
        PolicyParams::init(
            self.arch,
            seeds::derive(self.config.master_seed, &[seeds::INIT]),
            self.config.model.init_scale,
        )
    }

    pub fn manifest(&self) -> String {
        let mut entries = self.config.flat_entries();
        entries.push(("demo_library.sha256".into(), self.library.hash()));
        entries.push(("world.corpus_documents".into(), self.world.corpus.len().to_string()));
        entries.push(("vocab.size".into(), self.vocab.size().to_string()));
        entries.push(("model.n_params".into(), self.arch.n_params().to_string()));
        entries.push(("dataset.train".into(), self.train.len().to_string()));
        entries.push(("dataset.test".into(), self.test.len().to_string()));
        entries.push((
            "seed_scheme".into(),
            "splitmix64 derive(master, [stream, step, question, member])".into(),
        ));
        manifest_text(&entries)
    }
}

/// One evaluated question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalEpisode {
    pub split: String,
    pub question_id: usize,
    pub record: EpisodeRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub split: String,
    pub n: usize,
    pub mean_em: f64,
    pub mean_composite: f64,
    pub mean_format_reward: f64,
    pub answered_percent: f64,
    pub valid_search_mean: f64,
    pub mean_model_tokens: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub shots: usize,
    pub rows: Vec<EvalRow>,
    pub cumulative_finish: std::collections::BTreeMap<usize, f64>,
}

impl EvalReport {
    pub fn row(&self, split: &str) -> Option<&EvalRow> {
        self.rows.iter().find(|r| r.split == split)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "split,n,mean_em,mean_composite,mean_format_reward,answered_percent,valid_search_mean,mean_model_tokens\n",
        );
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.split,
                r.n,
                r.mean_em,
                r.mean_composite,
                r.mean_format_reward,
                r.answered_percent,
                r.valid_search_mean,
                r.mean_model_tokens
            ));
        }
        s
    }
}

fn eval_row(split: &str, eps: &[&EpisodeRecord]) -> EvalRow {
    let n = eps.len();
    let mean = |f: &dyn Fn(&EpisodeRecord) -> f64| {
        if n == 0 {
            0.0
        } else {
            eps.iter().map(|e| f(e)).sum::<f64>() / n as f64
        }
    };
    EvalRow {
        split: split.to_string(),
        n,
        mean_em: mean(&|e| e.reward.accuracy),
        mean_composite: mean(&|e| e.reward.composite),
        mean_format_reward: mean(&|e| e.reward.format_reward),
        answered_percent: 100.0 * mean(&|e| (e.termination == Termination::Answered) as u8 as f64),
        valid_search_mean: mean(&|e| e.valid_searches as f64),
        mean_model_tokens: mean(&|e| e.model_tokens as f64),
    }
}

/// Greedy evaluation of `params` with `shots` demonstrations on the train
/// and test splits, plus an aggregate row.
pub fn evaluate(exp: &Experiment, params: &PolicyParams, shots: usize) -> Result<(EvalReport, Vec<EvalEpisode>)> {
    let limits = greedy(exp.config.limits);
    let tool = SearchTool::new(&exp.world);
    let mut episodes = Vec::new();
    for (split, qs) in [("train", &exp.train), ("test", &exp.test)] {
        for q in qs.iter() {
            let prompt = build_prompt(&exp.library, shots, &q.prompt_text, &exp.vocab, exp.config.limits.max_prompt_tokens)?;
            let mut traj: Trajectory = run_rollout(
                params,
                &exp.vocab,
                PromptRef { tokens: &prompt.tokens, pinned: prompt.pinned },
                &tool,
                &limits,
                seeds::derive(exp.config.master_seed, &[seeds::EVAL, q.id as u64]),
            )?;
            traj.reward = Some(composite_reward(&traj, &q.gold_answer, &exp.vocab, &exp.config.reward));
            let record = EpisodeRecord::from_trajectory(&traj, &exp.vocab, 0, shots, q.id, 0);
            episodes.push(EvalEpisode { split: split.to_string(), question_id: q.id, record });
        }
    }
    let mut rows = Vec::new();
    for split in ["train", "test"] {
        let eps: Vec<&EpisodeRecord> = episodes.iter().filter(|e| e.split == split).map(|e| &e.record).collect();
        rows.push(eval_row(split, &eps));
    }
    let all: Vec<&EpisodeRecord> = episodes.iter().map(|e| &e.record).collect();
    rows.push(eval_row("all", &all));
    let finish: Vec<(Termination, usize)> = all.iter().map(|e| (e.termination, e.turn_count)).collect();
    let report = EvalReport {
        shots,
        rows,
        cumulative_finish: cumulative_finish(&finish, exp.config.limits.max_turns),
    };
    Ok((report, episodes))
}

/// Summary of a finished training run.
#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub out_dir: PathBuf,
    pub final_params: PolicyParams,
    pub eval: EvalReport,
    pub steps: u64,
    /// `(global_step, k, metrics)` for every step run.
    pub history: Vec<(u64, usize, StepMetrics)>,
}

fn stage_checkpoint_name(stage_index: usize, k: usize) -> String {
    format!("stage{stage_index}-k{k}.ckpt")
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text)?;
    Ok(())
}

/// Train from scratch, or from a stage checkpoint when `resume` is given,
/// writing all artifacts under `out_dir`.
pub fn train(exp: &Experiment, out_dir: &Path, resume: Option<&Path>) -> Result<TrainSummary> {
    let cfg = &exp.config;
    let (mut learner, start) = match resume {
        None => {
            let p = exp.init_params()?;
            (Learner::new(p, cfg.grpo.learning_rate), Position::default())
        }
        Some(path) => {
            let ckpt = load_checkpoint(path)?;
            if ckpt.params.arch != exp.arch {
                return Err(Error::Architecture(format!(
                    "checkpoint architecture {:?} does not match config {:?}",
                    ckpt.params.arch, exp.arch
                )));
            }
            let st = ckpt
                .state
                .ok_or_else(|| Error::Checkpoint("checkpoint has no training state to resume from".into()))?;
            let mut learner = Learner::new(ckpt.params, cfg.grpo.learning_rate);
            learner.reference.values = st.reference;
            learner.adam.t = st.adam_t;
            learner.adam.m = st.adam_m;
            learner.adam.v = st.adam_v;
            (
                learner,
                Position {
                    stage_index: st.next_stage as usize,
                    global_step: st.global_step,
                },
            )
        }
    };

    std::fs::create_dir_all(out_dir.join("checkpoints"))?;
    write_file(&out_dir.join("manifest.txt"), &exp.manifest())?;
    let mut csv = String::from(METRICS_HEADER);
    csv.push('\n');
    let mut episodes = JsonlWriter::create(&out_dir.join("episodes.jsonl"))?;
    let mut stage_lines = String::from("stage_index,k,start_step,end_step\n");
    let mut stage_start = start.global_step;
    let mut history = Vec::new();

    let tool = SearchTool::new(&exp.world);
    let schedule = cfg.schedule();
    let setup = CurriculumSetup {
        env: StepEnv {
            vocab: &exp.vocab,
            tool: &tool,
            limits: &cfg.limits,
            reward: &cfg.reward,
            grpo: &cfg.grpo,
        },
        questions: &exp.train,
        library: &exp.library,
        partition: &exp.partition,
        schedule: &schedule,
        trigger: cfg.schedule.reward_trigger,
        master_seed: cfg.master_seed,
    };
    let mut observer = |ev: CurriculumEvent<'_>| -> Result<()> {
        match ev {
            CurriculumEvent::StageStart { k, global_step, .. } => {
                tracing::info!(k, global_step, "stage start");
                stage_start = global_step;
            }
            CurriculumEvent::Step { k, global_step, outcome, .. } => {
                history.push((global_step, k, outcome.metrics));
                csv.push_str(&metrics_row(global_step, k, &outcome.metrics));
                csv.push('\n');
                for r in step_records(outcome, &exp.vocab, global_step, k) {
                    episodes.write(&r)?;
                }
                tracing::debug!(global_step, reward = outcome.metrics.mean_reward, "step");
            }
            CurriculumEvent::StageEnd { stage_index, k, next, learner } => {
                stage_lines.push_str(&format!("{stage_index},{k},{stage_start},{}\n", next.global_step));
                let ckpt = Checkpoint {
                    params: learner.params.clone(),
                    state: Some(TrainState {
                        next_stage: next.stage_index as u64,
                        global_step: next.global_step,
                        adam_t: learner.adam.t,
                        adam_m: learner.adam.m.clone(),
                        adam_v: learner.adam.v.clone(),
                        reference: learner.reference.values.clone(),
                    }),
                };
                save_checkpoint(&out_dir.join("checkpoints").join(stage_checkpoint_name(stage_index, k)), &ckpt)?;
            }
        }
        Ok(())
    };
    let end = run_curriculum(&setup, &mut learner, start, &mut observer)?;
    episodes.finish()?;
    write_file(&out_dir.join("metrics.csv"), &csv)?;
    write_file(&out_dir.join("stages.csv"), &stage_lines)?;
    save_checkpoint(
        &out_dir.join("final.ckpt"),
        &Checkpoint { params: learner.params.clone(), state: None },
    )?;

    let (report, eval_eps) = evaluate(exp, &learner.params, 0)?;
    let mut w = JsonlWriter::create(&out_dir.join("eval_episodes.jsonl"))?;
    for e in &eval_eps {
        w.write(e)?;
    }
    w.finish()?;
    write_file(&out_dir.join("eval.csv"), &report.to_csv())?;
    write_file(&out_dir.join("finish.csv"), &finish_csv(&report.cumulative_finish))?;
    Ok(TrainSummary {
        out_dir: out_dir.to_path_buf(),
        final_params: learner.params,
        eval: report,
        steps: end.global_step,
        history,
    })
}

/// Evaluate a checkpoint against a config's world.
pub fn eval_checkpoint(exp: &Experiment, checkpoint: &Path, shots: usize) -> Result<(EvalReport, Vec<EvalEpisode>)> {
    let ckpt = load_checkpoint(checkpoint)?;
    if ckpt.params.arch != exp.arch {
        return Err(Error::Architecture(format!(
            "checkpoint architecture {:?} does not match config {:?}",
            ckpt.params.arch, exp.arch
        )));
    }
    if shots > exp.library.max_count() {
        return Err(Error::config(format!(
            "--shots {shots} exceeds the {} available demonstrations",
            exp.library.max_count()
        )));
    }
    evaluate(exp, &ckpt.params, shots)
}

/// Default sizes for `gen-world`.
pub const GEN_WORLD_ENTITIES: usize = 50;
pub const GEN_WORLD_RELATIONS: usize = 80;

pub fn gen_world(seed: u64, out: &Path) -> Result<SyntheticWorld> {
    let world = generate_world(seed, GEN_WORLD_ENTITIES, GEN_WORLD_RELATIONS)?;
    world.save(out)?;
    Ok(world)
}

/// One training run of a schedule comparison.
#[derive(Debug, Clone)]
pub struct ArmResult {
    pub schedule: Vec<usize>,
    pub master_seed: u64,
    pub out_dir: PathBuf,
    /// Greedy zero-shot composite over all questions after training.
    pub eval_composite: f64,
    pub eval_em: f64,
    /// Valid-search mean of each step of the final (zero-shot) stage.
    pub final_stage_valid_search: Vec<f64>,
    pub secs: f64,
}

impl ArmResult {
    /// Mean over the first and over the last quarter of the final stage.
    pub fn search_quarters(&self) -> (f64, f64) {
        let v = &self.final_stage_valid_search;
        let q = (v.len() / 4).max(1).min(v.len());
        let mean = |s: &[f64]| if s.is_empty() { 0.0 } else { s.iter().sum::<f64>() / s.len() as f64 };
        (mean(&v[..q]), mean(&v[v.len() - q..]))
    }
}

fn train_arm(base: &RunConfig, stages: &[usize], steps_per_stage: usize, seed: u64, out_dir: &Path) -> Result<ArmResult> {
    let mut cfg = base.clone();
    cfg.master_seed = seed;
    cfg.schedule.stages = stages.to_vec();
    cfg.schedule.steps_per_stage = steps_per_stage;
    cfg.output_dir = out_dir.to_path_buf();
    let exp = Experiment::prepare(&cfg)?;
    let start = std::time::Instant::now();
    let summary = train(&exp, out_dir, None)?;
    let all = summary.eval.row("all").expect("evaluation has an aggregate row");
    let last_k = *stages.last().expect("validated schedule");
    let first_final_step = summary
        .history
        .iter()
        .rev()
        .take_while(|(_, k, _)| *k == last_k)
        .count();
    let final_stage_valid_search = summary.history[summary.history.len() - first_final_step..]
        .iter()
        .map(|(_, _, m)| m.valid_search_mean)
        .collect();
    Ok(ArmResult {
        schedule: stages.to_vec(),
        master_seed: seed,
        out_dir: out_dir.to_path_buf(),
        eval_composite: all.mean_composite,
        eval_em: all.mean_em,
        final_stage_valid_search,
        secs: start.elapsed().as_secs_f64(),
    })
}

/// Curriculum against plain zero-shot training with the same total number
/// of steps, over several master seeds.
#[derive(Debug, Clone)]
pub struct Comparison {
    pub curriculum: Vec<ArmResult>,
    pub scratch: Vec<ArmResult>,
}

impl Comparison {
    pub fn mean_curriculum(&self) -> f64 {
        mean_of(&self.curriculum, |a| a.eval_composite)
    }

    pub fn mean_scratch(&self) -> f64 {
        mean_of(&self.scratch, |a| a.eval_composite)
    }

    /// Last-quarter valid-search mean of the final stage is at least the
    /// first-quarter mean, averaged over seeds.
    pub fn curriculum_search_trend_ok(&self) -> bool {
        let first = mean_of(&self.curriculum, |a| a.search_quarters().0);
        let last = mean_of(&self.curriculum, |a| a.search_quarters().1);
        last >= first
    }

    pub fn slowest_seed_secs(&self) -> f64 {
        self.curriculum
            .iter()
            .zip(&self.scratch)
            .map(|(a, b)| a.secs + b.secs)
            .fold(0.0, f64::max)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("arm,schedule,master_seed,eval_composite,eval_em,search_first_quarter,search_last_quarter,secs\n");
        for (arm, rows) in [("curriculum", &self.curriculum), ("scratch", &self.scratch)] {
            for r in rows {
                let (a, b) = r.search_quarters();
                s.push_str(&format!(
                    "{arm},{},{},{},{},{a},{b},{:.1}\n",
                    schedule_label(&r.schedule),
                    r.master_seed,
                    r.eval_composite,
                    r.eval_em,
                    r.secs
                ));
            }
        }
        s
    }
}

fn mean_of(rows: &[ArmResult], f: impl Fn(&ArmResult) -> f64) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    rows.iter().map(f).sum::<f64>() / rows.len() as f64
}

fn schedule_label(stages: &[usize]) -> String {
    stages.iter().map(|k| k.to_string()).collect::<Vec<_>>().join("-")
}

/// Train `schedule` and the single-stage `[0]` baseline (with
/// `schedule.len() * steps_per_stage` steps) for every seed, writing each run
/// under `out_dir` and a summary to `out_dir/comparison.csv`.
pub fn compare_curriculum(base: &RunConfig, schedule: &[usize], seeds: &[u64], out_dir: &Path) -> Result<Comparison> {
    let t = base.schedule.steps_per_stage;
    let mut cmp = Comparison {
        curriculum: Vec::new(),
        scratch: Vec::new(),
    };
    for &seed in seeds {
        let dir = out_dir.join(format!("seed{seed}"));
        cmp.curriculum.push(train_arm(base, schedule, t, seed, &dir.join(schedule_label(schedule)))?);
        cmp.scratch.push(train_arm(base, &[0], t * schedule.len(), seed, &dir.join("0"))?);
        tracing::info!(
            seed,
            curriculum = cmp.curriculum.last().map(|a| a.eval_composite),
            scratch = cmp.scratch.last().map(|a| a.eval_composite),
            "seed done"
        );
    }
    std::fs::create_dir_all(out_dir)?;
    write_file(&out_dir.join("comparison.csv"), &cmp.to_csv())?;
    Ok(cmp)
}

/// One schedule of an ablation.
#[derive(Debug, Clone)]
pub struct AblationRow {
    pub schedule: Vec<usize>,
    pub out_dir: PathBuf,
    pub steps: u64,
    pub eval_composite: f64,
    pub eval_em: f64,
    /// Cumulative finish percentage at `max_turns`.
    pub finish_at_max: f64,
    pub finish: std::collections::BTreeMap<usize, f64>,
}

/// Train each schedule with the base config's steps per stage, each into
/// `out_dir/<schedule>`, and write `out_dir/ablation.csv` with one row per
/// schedule including its cumulative finish table.
pub fn ablation(base: &RunConfig, schedules: &[Vec<usize>], out_dir: &Path) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    for stages in schedules {
        let mut cfg = base.clone();
        cfg.schedule.stages = stages.clone();
        let exp = Experiment::prepare(&cfg)?;
        let dir = out_dir.join(schedule_label(stages));
        let summary = train(&exp, &dir, None)?;
        let all = summary.eval.row("all").expect("evaluation has an aggregate row");
        let finish = summary.eval.cumulative_finish.clone();
        rows.push(AblationRow {
            schedule: stages.clone(),
            out_dir: dir,
            steps: summary.steps,
            eval_composite: all.mean_composite,
            eval_em: all.mean_em,
            finish_at_max: finish.get(&cfg.limits.max_turns).copied().unwrap_or(0.0),
            finish,
        });
    }
    let max_turns = base.limits.max_turns;
    let mut s = String::from("schedule,steps,mean_em,mean_composite");
    for n in 0..=max_turns {
        s.push_str(&format!(",finish_{n}"));
    }
    s.push('\n');
    for r in &rows {
        s.push_str(&format!("{},{},{},{}", schedule_label(&r.schedule), r.steps, r.eval_em, r.eval_composite));
        for n in 0..=max_turns {
            s.push_str(&format!(",{}", r.finish.get(&n).copied().unwrap_or(0.0)));
        }
        s.push('\n');
    }
    std::fs::create_dir_all(out_dir)?;
    write_file(&out_dir.join("ablation.csv"), &s)?;
    Ok(rows)
}
