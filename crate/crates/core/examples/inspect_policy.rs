//! Print transcripts sampled from a checkpoint on a few questions.
//!
//! ```text
//! cargo run --example inspect_policy -- <checkpoint> <config> [n_questions] [shots]
//! ```

use std::path::PathBuf;

use icrl::curriculum::build_prompt;
use icrl::interaction::{greedy, run_rollout, PromptRef};
use icrl::policy::load_checkpoint;
use icrl::reward::composite_reward;
use icrl::run::{Experiment, RunConfig};
use icrl::tools::SearchTool;

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    if args.len() < 3 {
        anyhow::bail!("usage: inspect_policy <checkpoint> <config> [n_questions] [shots]");
    }
    let ckpt = load_checkpoint(&PathBuf::from(&args[1]))?;
    let cfg = RunConfig::load(&PathBuf::from(&args[2]))?;
    let n: usize = args.get(3).map_or(Ok(3), |s| s.parse())?;
    let shots: usize = args.get(4).map_or(Ok(0), |s| s.parse())?;
    let exp = Experiment::prepare(&cfg)?;
    let tool = SearchTool::new(&exp.world);
    for q in exp.test.iter().take(n) {
        println!("question: {}   gold: {}", q.prompt_text, q.gold_answer);
        let prompt = build_prompt(&exp.library, shots, &q.prompt_text, &exp.vocab, cfg.limits.max_prompt_tokens)?;
        let p = PromptRef { tokens: &prompt.tokens, pinned: prompt.pinned };
        for (label, limits, seed) in [
            ("greedy", greedy(cfg.limits), 0),
            ("sample", cfg.limits, 1),
            ("sample", cfg.limits, 2),
        ] {
            let mut t = run_rollout(&ckpt.params, &exp.vocab, p, &tool, &limits, seed)?;
            let r = composite_reward(&t, &q.gold_answer, &exp.vocab, &cfg.reward);
            let text = exp.vocab.detokenize(&t.tokens[t.prompt_len..]);
            println!("  [{label}] composite {:.3} {:?}\n    {text}", r.composite, t.termination);
            t.reward = Some(r);
        }
    }
    Ok(())
}
