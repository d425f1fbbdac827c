//! The calculator tool behind the same call protocol as search, driven by a
//! scripted policy on arithmetic questions.
//!
//! ```text
//! cargo run --example calculator -- [n_questions]
//! ```

use icrl::interaction::{run_rollout, PromptRef, RolloutLimits, ScriptedPolicy};
use icrl::reward::{composite_reward, RewardConfig};
use icrl::tools::arith::{arith_oracle, arith_vocab, generate_arith_question};
use icrl::tools::{CalculatorTool, Tool};

fn main() -> anyhow::Result<()> {
    let n: u64 = std::env::args().nth(1).map_or(Ok(3), |s| s.parse())?;
    for expr in ["(3+4)*2", "7/0", "1/3+1/6", "2*(", "-5--5"] {
        let obs = CalculatorTool.call(expr);
        println!("{expr:>10} -> {:<28} valid {}", obs.text, obs.valid);
    }

    let vocab = arith_vocab()?;
    let limits = RolloutLimits::default();
    for seed in 0..n {
        let q = generate_arith_question(seed);
        let solution = arith_oracle(&q)?;
        let prompt = vocab.tokenize(&q.prompt_text);
        let policy = ScriptedPolicy::from_transcript(&vocab, &solution);
        let p = PromptRef { tokens: &prompt, pinned: 0 };
        let t = run_rollout(&policy, &vocab, p, &CalculatorTool, &limits, seed)?;
        let r = composite_reward(&t, &q.gold_answer, &vocab, &RewardConfig::default());
        println!("\n{}  gold {}", q.prompt_text, q.gold_answer);
        println!("  {}", t.model_text(&vocab));
        println!("  {:?} after {} turns, composite {:.2}", t.termination, t.turn_count, r.composite);
    }
    Ok(())
}
