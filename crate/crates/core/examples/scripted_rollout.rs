//! Replay oracle solutions through the rollout loop and show which tokens
//! the model emitted and which the tool injected.
//!
//! ```text
//! cargo run --example scripted_rollout -- [config]
//! ```

use std::path::PathBuf;

use icrl::curriculum::build_prompt;
use icrl::interaction::{run_rollout, Origin, PromptRef, ScriptedPolicy};
use icrl::reward::composite_reward;
use icrl::run::{Experiment, RunConfig};
use icrl::tools::{oracle_solve, SearchTool};

fn main() -> anyhow::Result<()> {
    let path = std::env::args().nth(1).unwrap_or_else(|| "configs/smoke.toml".into());
    let cfg = RunConfig::load(&PathBuf::from(path))?;
    let exp = Experiment::prepare(&cfg)?;
    let tool = SearchTool::new(&exp.world);
    for q in exp.test.iter().take(2) {
        let prompt = build_prompt(&exp.library, 0, &q.prompt_text, &exp.vocab, cfg.limits.max_prompt_tokens)?;
        let policy = ScriptedPolicy::from_transcript(&exp.vocab, &oracle_solve(&exp.world, q)?);
        let p = PromptRef { tokens: &prompt.tokens, pinned: prompt.pinned };
        let t = run_rollout(&policy, &exp.vocab, p, &tool, &cfg.limits, 0)?;
        let r = composite_reward(&t, &q.gold_answer, &exp.vocab, &cfg.reward);

        println!("{}  gold {}", q.prompt_text, q.gold_answer);
        let mut line = String::new();
        for (&tok, &origin) in t.tokens.iter().zip(&t.origins).skip(t.prompt_len) {
            let word = exp.vocab.detokenize(&[tok]);
            match origin {
                Origin::Tool => line.push_str(&format!(" [{word}]")),
                _ => line.push_str(&format!(" {word}")),
            }
        }
        println!(" {line}");
        println!(
            "  model tokens {}  tool tokens {}  valid searches {}  {:?}  composite {:.2}\n",
            t.count(Origin::Model),
            t.count(Origin::Tool),
            t.valid_search_count(),
            t.termination,
            r.composite
        );
    }
    println!("bracketed tokens come from the tool and are masked out of the loss");
    Ok(())
}
