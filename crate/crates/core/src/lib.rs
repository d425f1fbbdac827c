//! In-context reinforcement learning for tool-using sequence policies.
//!
//! A small autoregressive policy learns to interleave `<think>`, `<search>`
//! and `<answer>` blocks with tool observations, trained by GRPO under a
//! curriculum that removes worked examples from the prompt stage by stage.

pub mod curriculum;
pub mod error;
pub mod grammar;
pub mod grpo;
pub mod interaction;
pub mod metrics;
pub mod policy;
pub mod reward;
pub mod run;
pub mod seeds;
pub mod tools;
pub mod vocab;

pub use error::{Error, Result};
