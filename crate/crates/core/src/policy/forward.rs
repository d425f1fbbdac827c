//! Incremental forward pass with an optional activation record, and the
//! matching reverse pass.
//!
//! Training and sampling share [`Forward::push`], so log-probabilities
//! recorded while sampling are bit-identical to the ones recomputed for the
//! loss.

use super::{log_softmax, ArchSpec, BlockLayout, Layout, PolicyParams};
use crate::vocab::{TokenId, BOS};

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len();
    let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
    let chunks = n / 4;
    for c in 0..chunks {
        let i = 4 * c;
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    for i in 4 * chunks..n {
        s0 += a[i] * b[i];
    }
    (s0 + s1) + (s2 + s3)
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `y = W x` with `W` row-major `rows x x.len()`.
fn matvec(w: &[f64], x: &[f64], y: &mut [f64]) {
    let cols = x.len();
    for (i, yi) in y.iter_mut().enumerate() {
        *yi = dot(&w[i * cols..(i + 1) * cols], x);
    }
}

/// `dx += W^T dy`.
fn matvec_t_acc(w: &[f64], dy: &[f64], dx: &mut [f64]) {
    let cols = dx.len();
    for (i, &g) in dy.iter().enumerate() {
        if g != 0.0 {
            axpy(g, &w[i * cols..(i + 1) * cols], dx);
        }
    }
}

/// `dW += dy x^T`.
fn outer_acc(dw: &mut [f64], dy: &[f64], x: &[f64]) {
    let cols = x.len();
    for (i, &g) in dy.iter().enumerate() {
        if g != 0.0 {
            axpy(g, x, &mut dw[i * cols..(i + 1) * cols]);
        }
    }
}

#[derive(Debug, Clone, Default)]
struct BlockState {
    k: Vec<f64>,
    v: Vec<f64>,
    // Recorded only when training.
    x: Vec<f64>,
    q: Vec<f64>,
    probs: Vec<Vec<f64>>,
    o: Vec<f64>,
    y: Vec<f64>,
    u: Vec<f64>,
    g: Vec<f64>,
}

/// Running forward state over `<bos>` followed by pushed tokens.
#[derive(Debug, Clone)]
pub struct Forward {
    arch: ArchSpec,
    layout: Layout,
    pinned: usize,
    record: bool,
    tokens: Vec<TokenId>,
    blocks: Vec<BlockState>,
    hidden: Vec<f64>,
}

impl Forward {
    /// `pinned` counts tokens after `<bos>` that stay visible when the
    /// window overflows.
    pub fn new(params: &PolicyParams, pinned: usize, record: bool) -> Self {
        let arch = params.arch;
        let mut fwd = Forward {
            arch,
            layout: arch.layout(),
            pinned: (pinned + 1).min(arch.context.saturating_sub(1)),
            record,
            tokens: Vec::new(),
            blocks: vec![BlockState::default(); arch.n_layers],
            hidden: Vec::new(),
        };
        fwd.step(params, BOS);
        fwd
    }

    /// Number of tokens pushed after `<bos>`.
    pub fn len(&self) -> usize {
        self.tokens.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn tokens(&self) -> &[TokenId] {
        &self.tokens[1..]
    }

    pub fn push(&mut self, params: &PolicyParams, token: TokenId) {
        self.step(params, token);
    }

    /// Visible positions for query `i`: `[0, pin_end) ∪ [lo, i]`.
    fn window(&self, i: usize) -> (usize, usize) {
        let recent = self.arch.context - self.pinned;
        if i < recent || i + 1 - recent <= self.pinned {
            (0, 0)
        } else {
            (self.pinned, i + 1 - recent)
        }
    }

    fn step(&mut self, params: &PolicyParams, token: TokenId) {
        let a = self.arch;
        let (d, f, nh, dh) = (a.d_model, a.d_ff, a.n_heads, a.head_dim());
        let w = &params.values;
        let i = self.tokens.len();
        let prev = self.tokens.last().copied().unwrap_or(BOS);
        self.tokens.push(token);

        let te = self.layout.tok_emb + token as usize * d;
        let pe = self.layout.prev_emb + prev as usize * d;
        let mut h: Vec<f64> = (0..d).map(|c| w[te + c] + w[pe + c]).collect();

        let scale = 1.0 / (dh as f64).sqrt();
        let (pin_end, lo) = self.window(i);
        let n_vis = pin_end + (i + 1 - lo);
        let mut q = vec![0.0; d];
        let mut kv = vec![0.0; d];
        let mut o = vec![0.0; d];
        let mut y = vec![0.0; d];
        let mut u = vec![0.0; f];
        let mut scores = vec![0.0; n_vis];

        for (l, b) in self.layout.blocks.iter().enumerate() {
            let st = &mut self.blocks[l];
            matvec(&w[b.wq..b.wq + d * d], &h, &mut q);
            matvec(&w[b.wk..b.wk + d * d], &h, &mut kv);
            st.k.extend_from_slice(&kv);
            matvec(&w[b.wv..b.wv + d * d], &h, &mut kv);
            st.v.extend_from_slice(&kv);

            let mut probs = if self.record {
                Vec::with_capacity(nh * n_vis)
            } else {
                Vec::new()
            };
            o.iter_mut().for_each(|x| *x = 0.0);
            for hh in 0..nh {
                let off = hh * dh;
                let qh = &q[off..off + dh];
                let rb = &w[b.rel_bias + hh * (a.max_rel + 1)..b.rel_bias + (hh + 1) * (a.max_rel + 1)];
                let visible = (0..pin_end).chain(lo..=i);
                let mut max = f64::NEG_INFINITY;
                for (s, j) in scores.iter_mut().zip(visible) {
                    let kj = &st.k[j * d + off..j * d + off + dh];
                    *s = dot(qh, kj) * scale + rb[(i - j).min(a.max_rel)];
                    max = max.max(*s);
                }
                let mut total = 0.0;
                for s in scores.iter_mut() {
                    *s = (*s - max).exp();
                    total += *s;
                }
                let inv = 1.0 / total;
                let visible = (0..pin_end).chain(lo..=i);
                for (s, j) in scores.iter_mut().zip(visible) {
                    *s *= inv;
                    axpy(*s, &st.v[j * d + off..j * d + off + dh], &mut o[off..off + dh]);
                }
                if self.record {
                    probs.extend_from_slice(&scores);
                }
            }
            matvec(&w[b.wo..b.wo + d * d], &o, &mut y);
            for c in 0..d {
                y[c] += h[c];
            }
            matvec(&w[b.w1..b.w1 + f * d], &y, &mut u);
            for c in 0..f {
                u[c] += w[b.b1 + c];
            }
            let g: Vec<f64> = u.iter().map(|&x| gelu(x)).collect();
            let mut z = vec![0.0; d];
            matvec(&w[b.w2..b.w2 + d * f], &g, &mut z);
            for c in 0..d {
                z[c] += y[c] + w[b.b2 + c];
            }
            if self.record {
                st.x.extend_from_slice(&h);
                st.q.extend_from_slice(&q);
                st.probs.push(probs);
                st.o.extend_from_slice(&o);
                st.y.extend_from_slice(&y);
                st.u.extend_from_slice(&u);
                st.g.extend_from_slice(&g);
            }
            h = z;
        }
        self.hidden.extend_from_slice(&h);
    }

    /// Logits computed from the hidden state at sequence index `i`
    /// (0 is `<bos>`), i.e. the distribution of the token at index `i + 1`.
    pub fn logits_at(&self, params: &PolicyParams, i: usize) -> Vec<f64> {
        let (v, d) = (self.arch.vocab, self.arch.d_model);
        let w = &params.values;
        let h = &self.hidden[i * d..(i + 1) * d];
        (0..v)
            .map(|t| {
                let e = self.layout.tok_emb + t * d;
                dot(&w[e..e + d], h) + w[self.layout.out_bias + t]
            })
            .collect()
    }

    /// Next-token log-probabilities for the `n`-th pushed token (0-based),
    /// conditioned on `<bos>` and the tokens before it.
    pub fn logprobs_for(&self, params: &PolicyParams, n: usize) -> Vec<f64> {
        log_softmax(&self.logits_at(params, n))
    }

    /// Distribution of the token that would follow everything pushed so far.
    pub fn last_logprobs(&self, params: &PolicyParams) -> Vec<f64> {
        self.logprobs_for(params, self.tokens.len() - 1)
    }

    /// Accumulate into `grads` the gradient of `sum_n <dlogits_n, logits_n>`
    /// where `dlogits` holds `(n, dL/dlogits)` for pushed-token indices `n`,
    /// using the same indexing as [`logprobs_for`](Self::logprobs_for).
    /// Requires a recording forward.
    pub fn backward(&self, params: &PolicyParams, dlogits: &[(usize, Vec<f64>)], grads: &mut [f64]) {
        assert!(self.record, "backward needs a recording forward pass");
        let a = self.arch;
        let (d, f, nh, dh, v) = (a.d_model, a.d_ff, a.n_heads, a.head_dim(), a.vocab);
        let w = &params.values;
        let n_pos = self.tokens.len();
        let lay = &self.layout;

        let mut dh_all = vec![0.0; n_pos * d];
        let mut live = vec![false; n_pos];
        for (i, dl) in dlogits {
            let i = *i;
            let h = &self.hidden[i * d..(i + 1) * d];
            let dh_i = &mut dh_all[i * d..(i + 1) * d];
            for t in 0..v {
                let g = dl[t];
                if g == 0.0 {
                    continue;
                }
                let e = lay.tok_emb + t * d;
                axpy(g, &w[e..e + d], dh_i);
                axpy(g, h, &mut grads[e..e + d]);
                grads[lay.out_bias + t] += g;
            }
            live[i] = true;
        }

        let scale = 1.0 / (dh as f64).sqrt();
        for l in (0..a.n_layers).rev() {
            let b: BlockLayout = lay.blocks[l];
            let st = &self.blocks[l];
            let mut dx_all = vec![0.0; n_pos * d];
            let mut dq_all = vec![0.0; n_pos * d];
            let mut dk_all = vec![0.0; n_pos * d];
            let mut dv_all = vec![0.0; n_pos * d];
            let mut dg = vec![0.0; f];
            let mut du = vec![0.0; f];
            let mut dy = vec![0.0; d];
            let mut d_o = vec![0.0; d];

            for i in 0..n_pos {
                if !live[i] {
                    continue;
                }
                let dz = &dh_all[i * d..(i + 1) * d];
                let g_i = &st.g[i * f..(i + 1) * f];
                let u_i = &st.u[i * f..(i + 1) * f];
                let y_i = &st.y[i * d..(i + 1) * d];
                let o_i = &st.o[i * d..(i + 1) * d];

                // Feed-forward.
                outer_acc(&mut grads[b.w2..b.w2 + d * f], dz, g_i);
                for c in 0..d {
                    grads[b.b2 + c] += dz[c];
                }
                dg.iter_mut().for_each(|x| *x = 0.0);
                matvec_t_acc(&w[b.w2..b.w2 + d * f], dz, &mut dg);
                for c in 0..f {
                    du[c] = dg[c] * gelu_grad(u_i[c]);
                    grads[b.b1 + c] += du[c];
                }
                outer_acc(&mut grads[b.w1..b.w1 + f * d], &du, y_i);
                dy.copy_from_slice(dz);
                matvec_t_acc(&w[b.w1..b.w1 + f * d], &du, &mut dy);

                // Attention output projection and residual.
                outer_acc(&mut grads[b.wo..b.wo + d * d], &dy, o_i);
                d_o.iter_mut().for_each(|x| *x = 0.0);
                matvec_t_acc(&w[b.wo..b.wo + d * d], &dy, &mut d_o);
                for c in 0..d {
                    dx_all[i * d + c] += dy[c];
                }

                // Attention weights.
                let (pin_end, lo) = self.window(i);
                let n_vis = pin_end + (i + 1 - lo);
                let probs = &st.probs[i];
                let q_i = &st.q[i * d..(i + 1) * d];
                let mut dp = vec![0.0; n_vis];
                for hh in 0..nh {
                    let off = hh * dh;
                    let p = &probs[hh * n_vis..(hh + 1) * n_vis];
                    let do_h = &d_o[off..off + dh];
                    let mut mean = 0.0;
                    for (k, j) in (0..pin_end).chain(lo..=i).enumerate() {
                        dp[k] = dot(do_h, &st.v[j * d + off..j * d + off + dh]);
                        mean += p[k] * dp[k];
                    }
                    let rb = b.rel_bias + hh * (a.max_rel + 1);
                    for (k, j) in (0..pin_end).chain(lo..=i).enumerate() {
                        let ds = p[k] * (dp[k] - mean);
                        axpy(p[k], do_h, &mut dv_all[j * d + off..j * d + off + dh]);
                        if ds != 0.0 {
                            axpy(ds * scale, &st.k[j * d + off..j * d + off + dh], &mut dq_all[i * d + off..i * d + off + dh]);
                            axpy(ds * scale, &q_i[off..off + dh], &mut dk_all[j * d + off..j * d + off + dh]);
                            grads[rb + (i - j).min(a.max_rel)] += ds;
                        }
                    }
                }
            }

            // Projections back to the block input.
            let mut next_live = vec![false; n_pos];
            for j in 0..n_pos {
                let x_j = &st.x[j * d..(j + 1) * d];
                let dq = &dq_all[j * d..(j + 1) * d];
                let dk = &dk_all[j * d..(j + 1) * d];
                let dv = &dv_all[j * d..(j + 1) * d];
                let dx = &mut dx_all[j * d..(j + 1) * d];
                for (m, dm) in [(b.wq, dq), (b.wk, dk), (b.wv, dv)] {
                    if dm.iter().any(|&x| x != 0.0) {
                        outer_acc(&mut grads[m..m + d * d], dm, x_j);
                        matvec_t_acc(&w[m..m + d * d], dm, dx);
                    }
                }
                next_live[j] = dx.iter().any(|&x| x != 0.0);
            }
            dh_all = dx_all;
            live = next_live;
        }

        // Embeddings.
        for j in 0..n_pos {
            if !live[j] {
                continue;
            }
            let tok = self.tokens[j] as usize;
            let prev = if j == 0 { BOS } else { self.tokens[j - 1] } as usize;
            let g = &dh_all[j * d..(j + 1) * d];
            axpy(1.0, g, &mut grads[lay.tok_emb + tok * d..lay.tok_emb + (tok + 1) * d]);
            axpy(1.0, g, &mut grads[lay.prev_emb + prev * d..lay.prev_emb + (prev + 1) * d]);
        }
    }
}

/// Flat gradient buffer in parameter layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub Vec<f64>);

impl Gradients {
    pub fn zeros(arch: &ArchSpec) -> Self {
        Gradients(vec![0.0; arch.n_params()])
    }

    pub fn add(&mut self, other: &Gradients) {
        axpy(1.0, &other.0, &mut self.0);
    }

    pub fn scale(&mut self, s: f64) {
        self.0.iter_mut().for_each(|x| *x *= s);
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::super::tests::tiny_arch;
    use super::*;

    fn params() -> PolicyParams {
        PolicyParams::init(tiny_arch(), 17, 0.6).unwrap()
    }

    /// Objective: sum over chosen positions of c_n . logits_n.
    fn objective(p: &PolicyParams, tokens: &[TokenId], pinned: usize, coeffs: &[(usize, Vec<f64>)]) -> f64 {
        let mut fwd = Forward::new(p, pinned, false);
        for &t in tokens {
            fwd.push(p, t);
        }
        coeffs
            .iter()
            .map(|(n, c)| fwd.logits_at(p, *n).iter().zip(c).map(|(a, b)| a * b).sum::<f64>())
            .sum()
    }

    fn check_logit_gradient(tokens: &[TokenId], pinned: usize, arch_context: usize) {
        let mut p = params();
        p.arch.context = arch_context;
        let mut coeffs = Vec::new();
        for n in [0, tokens.len() / 2, tokens.len()] {
            let c: Vec<f64> = (0..p.arch.vocab).map(|t| ((t * 7 + n * 3) % 5) as f64 - 2.0).collect();
            coeffs.push((n, c));
        }
        let mut fwd = Forward::new(&p, pinned, true);
        for &t in tokens {
            fwd.push(&p, t);
        }
        let mut grads = vec![0.0; p.values.len()];
        fwd.backward(&p, &coeffs, &mut grads);

        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for k in 0..p.values.len() {
            let orig = p.values[k];
            p.values[k] = orig + h;
            let up = objective(&p, tokens, pinned, &coeffs);
            p.values[k] = orig - h;
            let down = objective(&p, tokens, pinned, &coeffs);
            p.values[k] = orig;
            let numeric = (up - down) / (2.0 * h);
            let err = (numeric - grads[k]).abs() / numeric.abs().max(grads[k].abs()).max(1e-6);
            worst = worst.max(err);
        }
        assert!(worst < 1e-5, "max relative error {worst}");
    }

    #[test]
    fn backward_matches_finite_differences() {
        check_logit_gradient(&[3, 1, 4, 1, 5, 9, 2, 6], 0, 16);
    }

    #[test]
    fn backward_matches_finite_differences_with_window_overflow() {
        // 14 pushed tokens + bos over a window of 8 with 2 pinned tokens.
        let toks: Vec<TokenId> = (0..14).map(|i| (i * 5 % 12) as TokenId).collect();
        check_logit_gradient(&toks, 2, 8);
    }

    #[test]
    fn recording_does_not_change_outputs() {
        let p = params();
        let toks = [1, 2, 3, 4, 5];
        let mut a = Forward::new(&p, 1, false);
        let mut b = Forward::new(&p, 1, true);
        for &t in &toks {
            a.push(&p, t);
            b.push(&p, t);
        }
        for n in 0..=toks.len() {
            assert_eq!(a.logprobs_for(&p, n), b.logprobs_for(&p, n));
        }
    }

    #[test]
    fn window_overflow_keeps_pinned_prefix() {
        let mut p = params();
        p.arch.context = 6;
        // Index 2 (after <bos> and the pinned token) is outside every window
        // the last query can reach through two blocks.
        let base: Vec<TokenId> = vec![1, 2, 3, 4, 5, 6, 7, 8, 9, 10];
        let mut changed = base.clone();
        changed[1] = 11;
        let a = p.next_token_logprobs(&base, 1);
        let b = p.next_token_logprobs(&changed, 1);
        assert_eq!(a, b);
        // The pinned token stays visible.
        let mut pinned_changed = base.clone();
        pinned_changed[0] = 11;
        assert_ne!(a, p.next_token_logprobs(&pinned_changed, 1));
    }
}
