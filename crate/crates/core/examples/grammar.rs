//! Parse transcripts into tagged segments, list format violations and score
//! them against a gold answer.
//!
//! ```text
//! cargo run --example grammar -- ["<think> ... </think><answer> x </answer>" ...]
//! ```

use icrl::grammar::{detect_violations, parse_transcript};
use icrl::reward::{score_response, RewardConfig};

const SAMPLES: [&str; 5] = [
    "<think> gize mother </think><search> gize mother </search><information> gize mother gafu </information><think> gafu </think><answer> gafu </answer>",
    "<answer> gafu </answer>",
    "<think> guess <answer> gafu",
    "<search> gize mother </search><think> gafu </think><answer></answer>",
    "no tags at all",
];

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let texts: Vec<&str> = if args.is_empty() { SAMPLES.to_vec() } else { args.iter().map(String::as_str).collect() };
    let cfg = RewardConfig::default();
    for text in texts {
        println!("{text}");
        for seg in parse_transcript(text) {
            println!("  {:?} {:?}", seg.kind, seg.content);
        }
        let v = detect_violations(text);
        let r = score_response(text, "gafu", &cfg);
        let names: Vec<String> = v.iter().map(|x| format!("{x:?}")).collect();
        println!(
            "  violations [{}]  format {:.2}  accuracy {:.1}  composite {:.2}\n",
            names.join(", "),
            r.format_reward,
            r.accuracy,
            r.composite
        );
    }
}
