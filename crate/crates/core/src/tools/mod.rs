//! External tools the policy can call from inside a `<search>` block.
//!
//! Tools map a query string to raw observation text. Wrapping the text in
//! `<information>` tags is the interaction loop's job.

pub mod arith;
pub mod calc;
pub mod search;
pub mod world;

pub use calc::eval_expression;
pub use search::{Document, SearchIndex};
pub use world::{
    enumerate_questions, generate_question, generate_world, oracle_solve, Question, SearchTool,
    SyntheticWorld, Triple,
};

/// Raw tool output. `valid` is false for failures the policy should learn to
/// avoid (empty search results, calculator errors).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Observation {
    pub text: String,
    pub valid: bool,
}

pub trait Tool {
    fn name(&self) -> &str;
    fn call(&self, query: &str) -> Observation;
}

/// Arithmetic evaluator exposed through the same call protocol as search.
#[derive(Debug, Clone, Copy, Default)]
pub struct CalculatorTool;

impl Tool for CalculatorTool {
    fn name(&self) -> &str {
        "calculator"
    }

    fn call(&self, query: &str) -> Observation {
        let text = eval_expression(query);
        let valid = !text.starts_with("error:");
        Observation { text, valid }
    }
}
