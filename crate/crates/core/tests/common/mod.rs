#![allow(dead_code)]

use std::cell::Cell;

use icrl::interaction::{Origin, Termination, Trajectory};
use icrl::policy::{ArchSpec, PolicyParams};
use icrl::tools::{Observation, Tool};
use icrl::vocab::{TokenId, INFO_CLOSE, INFO_OPEN};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn tiny_arch(rng: &mut ChaCha8Rng) -> ArchSpec {
    ArchSpec {
        vocab: rng.gen_range(12..=18),
        d_model: 8,
        n_heads: 2,
        n_layers: rng.gen_range(1..=2),
        d_ff: 12,
        context: rng.gen_range(10..=40),
        max_rel: 6,
    }
}

pub fn random_params(arch: ArchSpec, rng: &mut ChaCha8Rng, emb_scale: f64) -> PolicyParams {
    let mut p = PolicyParams::init(arch, rng.gen(), emb_scale).unwrap();
    // Non-zero biases so every parameter group carries gradient.
    for x in p.values.iter_mut() {
        if *x == 0.0 {
            *x = 0.1 * (rng.gen::<f64>() - 0.5);
        }
    }
    p
}

pub fn perturbed(p: &PolicyParams, rng: &mut ChaCha8Rng, scale: f64) -> PolicyParams {
    let mut q = p.clone();
    for x in q.values.iter_mut() {
        *x += scale * (rng.gen::<f64>() - 0.5);
    }
    q
}

/// Prompt, then Model runs interleaved with `<information>`-wrapped Tool
/// spans. At least one Model token is always present.
pub fn random_trajectory(rng: &mut ChaCha8Rng, vocab: usize, len: usize) -> Trajectory {
    let prompt_len = rng.gen_range(1..=len / 3 + 1);
    let mut tokens: Vec<TokenId> = Vec::new();
    let mut origins = Vec::new();
    for _ in 0..prompt_len {
        tokens.push(rng.gen_range(10..vocab as TokenId));
        origins.push(Origin::Prompt);
    }
    let mut turns = 0;
    while tokens.len() < len {
        let run = rng.gen_range(1..=4);
        for _ in 0..run {
            tokens.push(rng.gen_range(0..vocab as TokenId));
            origins.push(Origin::Model);
        }
        if tokens.len() < len && rng.gen_bool(0.5) {
            turns += 1;
            tokens.push(INFO_OPEN);
            origins.push(Origin::Tool);
            for _ in 0..rng.gen_range(0..=4) {
                tokens.push(rng.gen_range(10..vocab as TokenId));
                origins.push(Origin::Tool);
            }
            tokens.push(INFO_CLOSE);
            origins.push(Origin::Tool);
        }
    }
    Trajectory {
        tokens,
        origins,
        turn_count: turns,
        termination: Termination::TokenBudget,
        prompt_len,
        pinned_len: rng.gen_range(0..=prompt_len),
        sample_logprobs: Vec::new(),
        tool_calls: Vec::new(),
        reward: None,
    }
}

/// Wraps a tool and counts how often it is invoked.
pub struct CountingTool<T> {
    pub inner: T,
    pub calls: Cell<usize>,
}

impl<T: Tool> Tool for CountingTool<T> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn call(&self, query: &str) -> Observation {
        self.calls.set(self.calls.get() + 1);
        self.inner.call(query)
    }
}

/// Independent population mean / std.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let mut s = 0.0;
    for &x in xs {
        s += x;
    }
    let m = s / xs.len() as f64;
    let mut v = 0.0;
    for &x in xs {
        v += (x - m) * (x - m);
    }
    (m, (v / xs.len() as f64).sqrt())
}
