//! Small autoregressive policy with exact next-token distributions and
//! hand-derived gradients.
//!
//! Architecture, per position `t` (the sequence is always prefixed with
//! `<bos>`):
//!
//! ```text
//! h0_t   = tok_emb[x_t] + prev_emb[x_{t-1}]
//! per block:
//!   a_t  = sum_j softmax_j(q_t . k_j / sqrt(dh) + rel_bias[min(t - j, max_rel)]) v_j
//!   y_t  = h_t + Wo a_t
//!   h'_t = y_t + W2 gelu(W1 y_t + b1) + b2
//! logits = tok_emb . h_L + out_bias
//! ```
//!
//! Positions enter only through the relative attention bias and the
//! previous-token embedding, so behaviour learned after a prompt of one
//! length carries over to prompts of another length. When a sequence
//! outgrows the context window, a position attends to the pinned instruction
//! header plus the most recent `context - pinned` positions.

mod checkpoint;
mod forward;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, TrainState};
pub use forward::{Forward, Gradients};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interaction::Trajectory;
use crate::vocab::TokenId;

/// Below this temperature sampling degenerates to argmax.
pub const GREEDY_TEMPERATURE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub vocab: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    /// Attention window, in positions (including `<bos>`).
    pub context: usize,
    /// Relative distances beyond this share one bias bucket.
    pub max_rel: usize,
}

impl ArchSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab", self.vocab),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("n_layers", self.n_layers),
            ("d_ff", self.d_ff),
            ("context", self.context),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::config(format!("model.{name} must be positive")));
            }
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::config("model.d_model must be divisible by model.n_heads"));
        }
        if self.vocab > crate::vocab::MAX_VOCAB {
            return Err(Error::config("model.vocab exceeds the vocabulary limit"));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn layout(&self) -> Layout {
        Layout::new(self)
    }

    pub fn n_params(&self) -> usize {
        self.layout().total
    }
}

/// Offsets of each parameter block inside the flat vector.
#[derive(Debug, Clone)]
pub struct Layout {
    pub tok_emb: usize,
    pub prev_emb: usize,
    pub out_bias: usize,
    pub blocks: Vec<BlockLayout>,
    pub total: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct BlockLayout {
    pub wq: usize,
    pub wk: usize,
    pub wv: usize,
    pub wo: usize,
    pub rel_bias: usize,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

impl Layout {
    fn new(a: &ArchSpec) -> Self {
        let (v, d, f) = (a.vocab, a.d_model, a.d_ff);
        let mut at = 0;
        let mut take = |n: usize| {
            let start = at;
            at += n;
            start
        };
        let tok_emb = take(v * d);
        let prev_emb = take(v * d);
        let out_bias = take(v);
        let blocks = (0..a.n_layers)
            .map(|_| BlockLayout {
                wq: take(d * d),
                wk: take(d * d),
                wv: take(d * d),
                wo: take(d * d),
                rel_bias: take(a.n_heads * (a.max_rel + 1)),
                w1: take(f * d),
                b1: take(f),
                w2: take(d * f),
                b2: take(d),
            })
            .collect();
        Layout {
            tok_emb,
            prev_emb,
            out_bias,
            blocks,
            total: at,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub arch: ArchSpec,
    pub values: Vec<f64>,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; u1 is kept away from zero.
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

impl PolicyParams {
    /// Seeded initialization. Embeddings are drawn with standard deviation
    /// `emb_scale`, matrices with `1/sqrt(fan_in)` (output projections further
    /// divided by `sqrt(2 * n_layers)`), biases start at zero. A small
    /// `emb_scale` keeps the initial next-token distribution near uniform.
    pub fn init(arch: ArchSpec, seed: u64, emb_scale: f64) -> Result<Self> {
        arch.validate()?;
        let layout = arch.layout();
        let mut values = vec![0.0; layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (v, d, f) = (arch.vocab, arch.d_model, arch.d_ff);
        let mut fill = |values: &mut [f64], std: f64| {
            for x in values.iter_mut() {
                *x = std * normal(&mut rng);
            }
        };
        fill(&mut values[layout.tok_emb..layout.tok_emb + v * d], emb_scale);
        fill(&mut values[layout.prev_emb..layout.prev_emb + v * d], emb_scale);
        let depth = (2 * arch.n_layers) as f64;
        for b in &layout.blocks {
            let s_in = 1.0 / (d as f64).sqrt();
            let s_ff = 1.0 / (f as f64).sqrt();
            fill(&mut values[b.wq..b.wq + d * d], s_in);
            fill(&mut values[b.wk..b.wk + d * d], s_in);
            fill(&mut values[b.wv..b.wv + d * d], s_in);
            fill(&mut values[b.wo..b.wo + d * d], s_in / depth.sqrt());
            fill(&mut values[b.w1..b.w1 + f * d], s_in);
            fill(&mut values[b.w2..b.w2 + d * f], s_ff / depth.sqrt());
        }
        Ok(PolicyParams { arch, values })
    }

    /// All-zero parameters: exactly uniform next-token distributions.
    pub fn zeros(arch: ArchSpec) -> Result<Self> {
        arch.validate()?;
        Ok(PolicyParams {
            values: vec![0.0; arch.n_params()],
            arch,
        })
    }

    pub fn check_same_arch(&self, other: &PolicyParams) -> Result<()> {
        if self.arch != other.arch {
            return Err(Error::Architecture(format!("{:?} vs {:?}", self.arch, other.arch)));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|x| x.is_finite())
    }

    /// Log-probabilities of the next token after `context`, whose first
    /// `pinned` tokens are never dropped from the window.
    pub fn next_token_logprobs(&self, context: &[TokenId], pinned: usize) -> Vec<f64> {
        let mut fwd = Forward::new(self, pinned, false);
        for &t in context {
            fwd.push(self, t);
        }
        fwd.last_logprobs(self)
    }
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|&l| (l - max).exp()).sum();
    let lse = max + sum.ln();
    logits.iter().map(|&l| l - lse).collect()
}

/// Draw from `softmax(logprobs / temperature)`; argmax (lowest index on ties)
/// below [`GREEDY_TEMPERATURE`].
pub fn sample_from_logprobs(logprobs: &[f64], temperature: f64, rng: &mut impl Rng) -> TokenId {
    if temperature < GREEDY_TEMPERATURE {
        return argmax(logprobs);
    }
    let scaled: Vec<f64> = logprobs.iter().map(|&l| l / temperature).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = scaled.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    let mut last_positive = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            last_positive = i;
            if u < w {
                return i as TokenId;
            }
            u -= w;
        }
    }
    last_positive as TokenId
}

pub fn argmax(values: &[f64]) -> TokenId {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best as TokenId
}

/// Sample one token after `context` with a generator seeded by `seed`.
pub fn sample(
    params: &PolicyParams,
    context: &[TokenId],
    pinned: usize,
    temperature: f64,
    seed: u64,
) -> Result<TokenId> {
    if temperature.is_nan() || temperature <= 0.0 {
        return Err(Error::contract("temperature must be positive"));
    }
    let lp = params.next_token_logprobs(context, pinned);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(sample_from_logprobs(&lp, temperature, &mut rng))
}

/// Forward pass over a whole trajectory.
pub fn trajectory_forward(params: &PolicyParams, traj: &Trajectory, record: bool) -> Forward {
    let mut fwd = Forward::new(params, traj.pinned_len, record);
    for &t in &traj.tokens {
        fwd.push(params, t);
    }
    fwd
}

/// `log pi(token_t | prefix)` at every Model position, in order. Prompt and
/// Tool tokens condition later positions but are not scored.
pub fn sequence_logprobs(params: &PolicyParams, traj: &Trajectory) -> Vec<f64> {
    let fwd = trajectory_forward(params, traj, false);
    traj.model_positions()
        .map(|i| fwd.logprobs_for(params, i)[traj.tokens[i] as usize])
        .collect()
}

/// Gradient of `sum_t weights[t] * log pi(token_t | prefix)` over Model
/// positions.
pub fn grad_weighted_logprob(
    params: &PolicyParams,
    traj: &Trajectory,
    weights: &[f64],
) -> Result<Gradients> {
    let positions: Vec<usize> = traj.model_positions().collect();
    if weights.len() != positions.len() {
        return Err(Error::contract(format!(
            "{} weights for {} Model positions",
            weights.len(),
            positions.len()
        )));
    }
    let fwd = trajectory_forward(params, traj, true);
    let mut dlogits = Vec::new();
    for (&i, &w) in positions.iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        // d log p_y / d logits = onehot(y) - p
        let lp = fwd.logprobs_for(params, i);
        let mut g: Vec<f64> = lp.iter().map(|l| -w * l.exp()).collect();
        g[traj.tokens[i] as usize] += w;
        dlogits.push((i, g));
    }
    let mut grads = Gradients::zeros(&params.arch);
    fwd.backward(params, &dlogits, &mut grads.0);
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny_arch() -> ArchSpec {
        ArchSpec {
            vocab: 12,
            d_model: 4,
            n_heads: 2,
            n_layers: 2,
            d_ff: 6,
            context: 16,
            max_rel: 4,
        }
    }

    #[test]
    fn layout_covers_vector() {
        let a = tiny_arch();
        let l = a.layout();
        assert_eq!(l.total, 12 * 4 * 2 + 12 + 2 * (4 * 16 + 2 * 5 + 24 + 6 + 24 + 4));
        assert!(l.total <= 1000);
    }

    #[test]
    fn distributions_normalize() {
        let p = PolicyParams::init(tiny_arch(), 3, 0.5).unwrap();
        for ctx in [&[][..], &[1, 2, 3][..], &[5; 30][..]] {
            let lp = p.next_token_logprobs(ctx, 2);
            let total: f64 = lp.iter().map(|x| x.exp()).sum();
            assert!((total - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_params_are_uniform_and_init_near_uniform() {
        let a = tiny_arch();
        let z = PolicyParams::zeros(a).unwrap();
        for lp in z.next_token_logprobs(&[3, 4], 0) {
            assert!((lp.exp() - 1.0 / 12.0).abs() < 1e-15);
        }
        let p = PolicyParams::init(a, 0, 0.02).unwrap();
        for lp in p.next_token_logprobs(&[3, 4, 5], 0) {
            assert!((lp.exp() * 12.0 - 1.0).abs() < 0.05);
        }
    }

    #[test]
    fn deterministic_calls() {
        let p = PolicyParams::init(tiny_arch(), 1, 0.5).unwrap();
        let a = p.next_token_logprobs(&[1, 2, 3], 0);
        let b = p.next_token_logprobs(&[1, 2, 3], 0);
        assert_eq!(a, b);
        assert_eq!(PolicyParams::init(tiny_arch(), 1, 0.5).unwrap(), p);
    }

    #[test]
    fn greedy_limit_is_argmax() {
        let p = PolicyParams::init(tiny_arch(), 4, 1.0).unwrap();
        let lp = p.next_token_logprobs(&[2, 7], 0);
        for seed in 0..5 {
            assert_eq!(sample(&p, &[2, 7], 0, 1e-9, seed).unwrap(), argmax(&lp));
        }
        assert!(sample(&p, &[2], 0, 0.0, 0).is_err());
    }

    #[test]
    fn seeded_sampling_reproducible() {
        let p = PolicyParams::init(tiny_arch(), 4, 1.0).unwrap();
        let a = sample(&p, &[2, 7], 0, 1.0, 99).unwrap();
        let b = sample(&p, &[2, 7], 0, 1.0, 99).unwrap();
        assert_eq!(a, b);
    }
}
