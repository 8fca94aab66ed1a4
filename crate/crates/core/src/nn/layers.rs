use rand::Rng;
use serde::{Deserialize, Serialize};

use super::attention::{attend, AttentionParams, AttnMask};
use crate::autograd::{Graph, ParamId, ParamSet, Var};
use crate::error::{Error, Result};

/// Shape of one transformer layer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerConfig {
    pub dim: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub ln_eps: f64,
    /// Reserved; layers run without dropout and reject any other value.
    pub dropout: f64,
}

impl LayerConfig {
    pub fn new(dim: usize, heads: usize) -> Self {
        Self {
            dim,
            heads,
            ffn_dim: 4 * dim,
            ln_eps: 1e-5,
            dropout: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.heads == 0 || self.dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "model dim {} must be a positive multiple of heads {}",
                self.dim, self.heads
            )));
        }
        if self.ffn_dim == 0 {
            return Err(Error::Config("feed-forward width must be positive".into()));
        }
        if self.dropout != 0.0 {
            return Err(Error::Config("dropout is not supported; set it to 0".into()));
        }
        Ok(())
    }
}

/// `FFN(x) = max(0, x W_1 + b_1) W_2 + b_2`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeedForwardParams {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl FeedForwardParams {
    pub fn new(
        params: &mut ParamSet,
        prefix: &str,
        dim: usize,
        ffn_dim: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            w1: params.add_glorot(format!("{prefix}.w1"), dim, ffn_dim, rng),
            b1: params.add_filled(format!("{prefix}.b1"), &[ffn_dim], 0.0),
            w2: params.add_glorot(format!("{prefix}.w2"), ffn_dim, dim, rng),
            b2: params.add_filled(format!("{prefix}.b2"), &[dim], 0.0),
        }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let (w1, b1, w2, b2) = (
            g.param(self.w1),
            g.param(self.b1),
            g.param(self.w2),
            g.param(self.b2),
        );
        let h = g.matmul(x, w1)?;
        let h = g.add_row(h, b1)?;
        let h = g.relu(h);
        let o = g.matmul(h, w2)?;
        g.add_row(o, b2)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerNormParams {
    pub gain: ParamId,
    pub bias: ParamId,
    pub eps: f64,
}

impl LayerNormParams {
    pub fn new(params: &mut ParamSet, prefix: &str, dim: usize, eps: f64) -> Self {
        Self {
            gain: params.add_filled(format!("{prefix}.gain"), &[dim], 1.0),
            bias: params.add_filled(format!("{prefix}.bias"), &[dim], 0.0),
            eps,
        }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let gain = g.param(self.gain);
        let bias = g.param(self.bias);
        g.layer_norm(x, gain, bias, self.eps)
    }
}

/// `LN(x + sublayer)`.
fn residual_norm(g: &mut Graph<'_>, x: Var, sub: Var, ln: &LayerNormParams) -> Result<Var> {
    let s = g.add(x, sub)?;
    ln.forward(g, s)
}

/// Self-attention then feed-forward, each wrapped as `LN(x + f(x))`.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderLayer {
    pub self_attention: AttentionParams,
    pub ffn: FeedForwardParams,
    pub ln1: LayerNormParams,
    pub ln2: LayerNormParams,
}

impl EncoderLayer {
    pub fn new(
        params: &mut ParamSet,
        prefix: &str,
        cfg: &LayerConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            self_attention: AttentionParams::new(
                params,
                &format!("{prefix}.self_attn"),
                cfg.dim,
                cfg.heads,
                rng,
            )?,
            ffn: FeedForwardParams::new(params, &format!("{prefix}.ffn"), cfg.dim, cfg.ffn_dim, rng),
            ln1: LayerNormParams::new(params, &format!("{prefix}.ln1"), cfg.dim, cfg.ln_eps),
            ln2: LayerNormParams::new(params, &format!("{prefix}.ln2"), cfg.dim, cfg.ln_eps),
        })
    }

    /// `x` is `[L x d]`; `valid[j]` is false for padded positions.
    pub fn forward(&self, g: &mut Graph<'_>, x: Var, valid: &[bool]) -> Result<Var> {
        let a = attend(g, x, x, &self.self_attention, AttnMask::Keys(valid))?.out;
        let y1 = residual_norm(g, x, a, &self.ln1)?;
        let f = self.ffn.forward(g, y1)?;
        residual_norm(g, y1, f, &self.ln2)
    }
}

/// Encoder layer with an extra cross-attention sub-layer between
/// self-attention and feed-forward. The self-attention over slots is
/// unmasked: every slot sees every other slot.
#[derive(Clone, Debug, PartialEq)]
pub struct ReviserLayer {
    pub self_attention: AttentionParams,
    pub cross_attention: AttentionParams,
    pub ffn: FeedForwardParams,
    pub ln1: LayerNormParams,
    pub ln2: LayerNormParams,
    pub ln3: LayerNormParams,
}

impl ReviserLayer {
    pub fn new(
        params: &mut ParamSet,
        prefix: &str,
        cfg: &LayerConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            self_attention: AttentionParams::new(
                params,
                &format!("{prefix}.self_attn"),
                cfg.dim,
                cfg.heads,
                rng,
            )?,
            cross_attention: AttentionParams::new(
                params,
                &format!("{prefix}.cross_attn"),
                cfg.dim,
                cfg.heads,
                rng,
            )?,
            ffn: FeedForwardParams::new(params, &format!("{prefix}.ffn"), cfg.dim, cfg.ffn_dim, rng),
            ln1: LayerNormParams::new(params, &format!("{prefix}.ln1"), cfg.dim, cfg.ln_eps),
            ln2: LayerNormParams::new(params, &format!("{prefix}.ln2"), cfg.dim, cfg.ln_eps),
            ln3: LayerNormParams::new(params, &format!("{prefix}.ln3"), cfg.dim, cfg.ln_eps),
        })
    }

    /// `slots` is `[m x d]`, `dialogue` is `[L x d]` with validity mask
    /// `dialogue_valid`.
    pub fn forward(
        &self,
        g: &mut Graph<'_>,
        slots: Var,
        dialogue: Var,
        dialogue_valid: &[bool],
    ) -> Result<Var> {
        let m = g.shape(slots)[0];
        let all = vec![true; m];
        self.forward_with_slot_mask(g, slots, dialogue, dialogue_valid, AttnMask::Keys(&all))
    }

    /// Variant taking an explicit slot-to-slot mask, used to build masked
    /// control layers.
    pub fn forward_with_slot_mask(
        &self,
        g: &mut Graph<'_>,
        slots: Var,
        dialogue: Var,
        dialogue_valid: &[bool],
        slot_mask: AttnMask<'_>,
    ) -> Result<Var> {
        if g.shape(slots)[0] == 0 {
            return Err(Error::Contract("reviser needs at least one slot".into()));
        }
        let a = attend(g, slots, slots, &self.self_attention, slot_mask)?.out;
        let y1 = residual_norm(g, slots, a, &self.ln1)?;
        let c = attend(
            g,
            y1,
            dialogue,
            &self.cross_attention,
            AttnMask::Keys(dialogue_valid),
        )?
        .out;
        let y2 = residual_norm(g, y1, c, &self.ln2)?;
        let f = self.ffn.forward(g, y2)?;
        residual_norm(g, y2, f, &self.ln3)
    }
}
