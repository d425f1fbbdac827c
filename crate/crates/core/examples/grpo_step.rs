//! A handful of GRPO updates on the smoke world, printing the per-step
//! metrics and the group advantages of the first question.
//!
//! ```text
//! cargo run --release --example grpo_step -- [config] [steps]
//! ```

use std::path::PathBuf;

use icrl::curriculum::{build_prompt, select_batch};
use icrl::grpo::{train_step, Learner, StepEnv, StepQuestion};
use icrl::run::{Experiment, RunConfig};
use icrl::tools::SearchTool;

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let path = args.next().unwrap_or_else(|| "configs/smoke.toml".into());
    let steps: u64 = args.next().map_or(Ok(5), |s| s.parse())?;
    let cfg = RunConfig::load(&PathBuf::from(path))?;
    let exp = Experiment::prepare(&cfg)?;
    let tool = SearchTool::new(&exp.world);
    let env = StepEnv {
        vocab: &exp.vocab,
        tool: &tool,
        limits: &cfg.limits,
        reward: &cfg.reward,
        grpo: &cfg.grpo,
    };
    let questions: Vec<StepQuestion> = exp
        .train
        .iter()
        .map(|q| {
            let p = build_prompt(&exp.library, 0, &q.prompt_text, &exp.vocab, cfg.limits.max_prompt_tokens)?;
            Ok(StepQuestion { id: q.id, prompt: p.tokens, pinned: p.pinned, gold: q.gold_answer.clone() })
        })
        .collect::<anyhow::Result<_>>()?;

    let mut learner = Learner::new(exp.init_params()?, cfg.grpo.learning_rate);
    println!("step  reward  format  em    tokens  searches  kl       loss");
    for step in 0..steps {
        let batch = select_batch(&questions, cfg.grpo.batch_size, cfg.master_seed, step);
        let out = train_step(&mut learner, &batch, &env, cfg.master_seed, step)?;
        let m = out.metrics;
        println!(
            "{step:>4}  {:.3}   {:.3}   {:.2}  {:>6.1}  {:>8.2}  {:.5}  {:+.5}",
            m.mean_reward, m.mean_format_reward, m.mean_em, m.mean_model_tokens, m.valid_search_mean, m.kl_value, m.loss
        );
        if step == 0 {
            let g = &out.groups[0];
            let adv: Vec<String> = g.advantages.iter().map(|a| format!("{a:+.2}")).collect();
            println!("      question {} advantages [{}]", g.question_id, adv.join(" "));
        }
    }
    Ok(())
}
