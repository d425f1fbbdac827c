//! Arithmetic word problems solved with the calculator tool.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::calc::evaluate;
use super::{CalculatorTool, Tool};
use crate::error::{Error, Result};
use crate::grammar::{
    ANSWER_CLOSE, ANSWER_OPEN, INFO_CLOSE, INFO_OPEN, SEARCH_CLOSE, SEARCH_OPEN, THINK_CLOSE,
    THINK_OPEN,
};
use crate::vocab::VocabSpec;

pub const GLUE: &str = "0123456789+-*/()";
const WORDS: [&str; 10] = [
    "what", "is", "?", "compute", "error:", "parse", "error", "division", "by", "zero",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArithQuestion {
    pub expression: String,
    pub prompt_text: String,
    pub gold_answer: String,
}

/// `(a op b) op c` with small operands; division only when exact.
pub fn generate_arith_question(seed: u64) -> ArithQuestion {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let a = rng.gen_range(1..20);
        let b = rng.gen_range(1..20);
        let c = rng.gen_range(1..10);
        let ops = ['+', '-', '*', '/'];
        let op1 = ops[rng.gen_range(0..3)];
        let op2 = ops[rng.gen_range(0..4)];
        let expression = format!("({a}{op1}{b}){op2}{c}");
        if let Ok(v) = evaluate(&expression) {
            if v.den == 1 {
                return ArithQuestion {
                    prompt_text: format!("what is {expression} ?"),
                    gold_answer: v.to_string(),
                    expression,
                };
            }
        }
    }
}

pub fn arith_vocab() -> Result<VocabSpec> {
    VocabSpec::new(WORDS, GLUE.chars())
}

pub fn arith_oracle(question: &ArithQuestion) -> Result<String> {
    let obs = CalculatorTool.call(&question.expression);
    if !obs.valid || obs.text != question.gold_answer {
        return Err(Error::Generation(format!(
            "calculator returned {:?} for {}",
            obs.text, question.expression
        )));
    }
    let mut out = String::new();
    write!(
        out,
        "{THINK_OPEN}compute {e}{THINK_CLOSE}{SEARCH_OPEN}{e}{SEARCH_CLOSE}{INFO_OPEN}{r}{INFO_CLOSE}\
         {THINK_OPEN}{r}{THINK_CLOSE}{ANSWER_OPEN}{r}{ANSWER_CLOSE}",
        e = question.expression,
        r = obs.text
    )
    .unwrap();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::detect_violations;

    #[test]
    fn oracle_is_clean_and_correct() {
        for seed in 0..50 {
            let q = generate_arith_question(seed);
            let text = arith_oracle(&q).unwrap();
            assert!(detect_violations(&text).is_empty());
            assert!(text.ends_with(&format!("<answer>{}</answer>", q.gold_answer)));
        }
    }

    #[test]
    fn transcripts_tokenize_losslessly() {
        let vocab = arith_vocab().unwrap();
        let q = generate_arith_question(3);
        let text = arith_oracle(&q).unwrap();
        assert_eq!(vocab.detokenize(&vocab.tokenize(&text)), text);
    }
}
