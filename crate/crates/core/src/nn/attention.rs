use rand::Rng;

use crate::autograd::{Graph, ParamId, ParamSet, Var};
use crate::error::{Error, Result};

/// Multi-head attention projections: `W_Q`, `W_K`, `W_V` and the output
/// projection `W_O`, all `d x d`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams {
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
    pub w_o: ParamId,
    pub heads: usize,
    pub dim: usize,
}

impl AttentionParams {
    pub fn new(
        params: &mut ParamSet,
        prefix: &str,
        dim: usize,
        heads: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::Config(format!(
                "model dim {dim} is not divisible by head count {heads}"
            )));
        }
        Ok(Self {
            w_q: params.add_glorot(format!("{prefix}.w_q"), dim, dim, rng),
            w_k: params.add_glorot(format!("{prefix}.w_k"), dim, dim, rng),
            w_v: params.add_glorot(format!("{prefix}.w_v"), dim, dim, rng),
            w_o: params.add_glorot(format!("{prefix}.w_o"), dim, dim, rng),
            heads,
            dim,
        })
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }
}

/// Which query/key pairs may interact.
#[derive(Clone, Copy, Debug)]
pub enum AttnMask<'a> {
    /// Per-key validity; `false` marks a padded key hidden from every query.
    Keys(&'a [bool]),
    /// Full row-major `[L_q x L_kv]` table of allowed pairs.
    Pairs(&'a [bool]),
}

/// Output of [`attend`], with the per-head weight matrices kept for
/// inspection.
pub struct Attended {
    pub out: Var,
    pub weights: Vec<Var>,
}

/// Scaled dot-product attention of `x_q` over `x_kv` with `H` heads. Each
/// head computes `softmax(Q_h K_h^T / sqrt(d_h)) V_h`; the heads are
/// concatenated and projected by `W_O`.
pub fn attend(
    g: &mut Graph<'_>,
    x_q: Var,
    x_kv: Var,
    p: &AttentionParams,
    mask: AttnMask<'_>,
) -> Result<Attended> {
    let lq = g.shape(x_q)[0];
    let lkv = g.shape(x_kv)[0];
    let allowed: Vec<bool> = match mask {
        AttnMask::Keys(valid) => {
            if valid.len() != lkv {
                return Err(Error::shape("attention mask", &[lkv], &[valid.len()]));
            }
            (0..lq).flat_map(|_| valid.iter().copied()).collect()
        }
        AttnMask::Pairs(pairs) => {
            if pairs.len() != lq * lkv {
                return Err(Error::shape("attention mask", &[lq, lkv], &[pairs.len()]));
            }
            pairs.to_vec()
        }
    };

    let wq = g.param(p.w_q);
    let wk = g.param(p.w_k);
    let wv = g.param(p.w_v);
    let wo = g.param(p.w_o);
    let q = g.matmul(x_q, wq)?;
    let k = g.matmul(x_kv, wk)?;
    let v = g.matmul(x_kv, wv)?;

    let dh = p.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    let mut heads = Vec::with_capacity(p.heads);
    let mut weights = Vec::with_capacity(p.heads);
    for h in 0..p.heads {
        let (qh, kh, vh) = if p.heads == 1 {
            (q, k, v)
        } else {
            (
                g.slice_cols(q, h * dh, dh)?,
                g.slice_cols(k, h * dh, dh)?,
                g.slice_cols(v, h * dh, dh)?,
            )
        };
        let scores = g.matmul_nt(qh, kh)?;
        let scores = g.scale(scores, scale);
        let w = g.masked_softmax(scores, &allowed)?;
        heads.push(g.matmul(w, vh)?);
        weights.push(w);
    }
    let joined = if heads.len() == 1 {
        heads[0]
    } else {
        g.concat(&heads, 1)?
    };
    let out = g.matmul(joined, wo)?;
    Ok(Attended { out, weights })
}

/// Attention with a key-padding mask; `key_valid[j]` is false for padding.
pub fn attention(
    g: &mut Graph<'_>,
    x_q: Var,
    x_kv: Var,
    p: &AttentionParams,
    key_valid: &[bool],
) -> Result<Var> {
    Ok(attend(g, x_q, x_kv, p, AttnMask::Keys(key_valid))?.out)
}

/// `[n x n]` mask allowing query `i` to see keys `0..=i` only.
pub fn causal_mask(n: usize) -> Vec<bool> {
    (0..n * n).map(|idx| idx % n <= idx / n).collect()
}
