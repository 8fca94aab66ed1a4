use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::LayerConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Full model: conditions are revised from the dialogue before use.
    Car,
    /// Ablation: observed conditions go straight to the conditions encoder.
    Ca,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Car => "car",
            Variant::Ca => "ca",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "car" => Ok(Variant::Car),
            "ca" => Ok(Variant::Ca),
            _ => Err(Error::Config(format!("unknown variant {s:?}, expected car or ca"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub dim: usize,
    pub heads: usize,
    pub encoder_layers: usize,
    pub reviser_layers: usize,
    /// Per-condition embedding size `s`.
    pub condition_embed_dim: usize,
    /// Size of the conditions vector `c`.
    pub conditions_repr_dim: usize,
    pub classifier_hidden: Vec<usize>,
    /// Weight of the condition loss in `eta * L_c + (1 - eta) * L_r`.
    pub eta: f64,
    pub max_question_len: usize,
    pub max_history_turns: usize,
    /// Length of the positional table; longer inputs are rejected.
    pub max_positions: usize,
    pub ffn_dim: usize,
    pub ln_eps: f64,
    pub dropout: f64,
    /// Pass gradients from the classifier through the discretised
    /// conditions into the reviser heads.
    pub straight_through: bool,
    pub vocab_size: usize,
    pub candidate_count: usize,
}

impl ModelConfig {
    /// Desk-scale default: `d = 64`, four heads, two encoder and two reviser
    /// layers.
    pub fn desk(vocab_size: usize, candidate_count: usize) -> Self {
        Self::with_dims(64, 4, 2, 2, 32, 64, vocab_size, candidate_count)
    }

    /// Small model for unit tests and overfitting checks.
    pub fn micro(vocab_size: usize, candidate_count: usize) -> Self {
        Self::with_dims(16, 2, 1, 1, 8, 16, vocab_size, candidate_count)
    }

    /// Published scale: six-layer stacks, 300-dimensional embeddings.
    pub fn paper(vocab_size: usize, candidate_count: usize) -> Self {
        Self::with_dims(300, 6, 6, 6, 300, 300, vocab_size, candidate_count)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn with_dims(
        dim: usize,
        heads: usize,
        encoder_layers: usize,
        reviser_layers: usize,
        condition_embed_dim: usize,
        conditions_repr_dim: usize,
        vocab_size: usize,
        candidate_count: usize,
    ) -> Self {
        Self {
            dim,
            heads,
            encoder_layers,
            reviser_layers,
            condition_embed_dim,
            conditions_repr_dim,
            classifier_hidden: vec![2 * dim],
            eta: 0.2,
            max_question_len: 50,
            max_history_turns: 2,
            max_positions: 256,
            ffn_dim: 4 * dim,
            ln_eps: 1e-5,
            dropout: 0.0,
            straight_through: false,
            vocab_size,
            candidate_count,
        }
    }

    pub fn layer(&self) -> LayerConfig {
        LayerConfig {
            dim: self.dim,
            heads: self.heads,
            ffn_dim: self.ffn_dim,
            ln_eps: self.ln_eps,
            dropout: self.dropout,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.layer().validate()?;
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::Config(format!("eta must lie in [0, 1], got {}", self.eta)));
        }
        let positive = [
            ("condition_embed_dim", self.condition_embed_dim),
            ("conditions_repr_dim", self.conditions_repr_dim),
            ("max_question_len", self.max_question_len),
            ("max_positions", self.max_positions),
            ("vocab_size", self.vocab_size),
            ("candidate_count", self.candidate_count),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.classifier_hidden.contains(&0) {
            return Err(Error::Config("classifier hidden widths must be positive".into()));
        }
        if !(self.ln_eps > 0.0) {
            return Err(Error::Config("layer-norm epsilon must be positive".into()));
        }
        Ok(())
    }
}
