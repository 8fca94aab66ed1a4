use rand::Rng;

use super::config::ModelConfig;
use super::vocab::Vocab;
use crate::autograd::{Graph, ParamId, ParamSet, Tensor, Var};
use crate::data::{ConditionAssignment, DialogueSample};
use crate::error::{Error, Result};
use crate::nn::{positional_encoding, EncoderLayer, ReviserLayer};

/// Per-condition embeddings, concatenated and passed through one dense
/// layer with ReLU.
#[derive(Clone, Debug)]
pub struct ConditionsEncoder {
    pub tables: Vec<ParamId>,
    pub w_c: ParamId,
    pub b_c: ParamId,
    pub widths: Vec<usize>,
    pub embed_dim: usize,
}

impl ConditionsEncoder {
    pub fn new(params: &mut ParamSet, cfg: &ModelConfig, widths: &[usize], rng: &mut impl Rng) -> Self {
        let s = cfg.condition_embed_dim;
        let tables = widths
            .iter()
            .enumerate()
            .map(|(i, &w)| params.add_glorot(format!("cond_enc.embed.{i}"), w, s, rng))
            .collect();
        let input = widths.len() * s;
        Self {
            tables,
            w_c: params.add_glorot("cond_enc.w_c", input, cfg.conditions_repr_dim, rng),
            b_c: params.add_filled("cond_enc.b_c", &[cfg.conditions_repr_dim], 0.0),
            widths: widths.to_vec(),
            embed_dim: s,
        }
    }

    pub fn check(&self, values: &ConditionAssignment) -> Result<()> {
        if values.len() != self.widths.len() {
            return Err(Error::Schema(format!(
                "expected {} condition values, got {}",
                self.widths.len(),
                values.len()
            )));
        }
        for (slot, (&v, &w)) in values.values().iter().zip(&self.widths).enumerate() {
            if v >= w {
                return Err(Error::Schema(format!(
                    "value id {v} out of range for condition {slot} of width {w}"
                )));
            }
        }
        Ok(())
    }

    /// `c0 = concat(e_1, ..., e_m)`, shape `[1 x m*s]`.
    pub fn embed(&self, g: &mut Graph<'_>, values: &ConditionAssignment) -> Result<Var> {
        self.check(values)?;
        let parts = self
            .tables
            .iter()
            .zip(values.values())
            .map(|(&t, &v)| {
                let t = g.param(t);
                g.embedding_lookup(t, &[v])
            })
            .collect::<Result<Vec<_>>>()?;
        g.concat(&parts, 1)
    }

    /// `c0` from per-slot `[1 x |V_i|]` vectors (one-hot or soft).
    pub fn embed_vectors(&self, g: &mut Graph<'_>, vectors: &[Var]) -> Result<Var> {
        if vectors.len() != self.tables.len() {
            return Err(Error::Schema(format!(
                "expected {} condition vectors, got {}",
                self.tables.len(),
                vectors.len()
            )));
        }
        let parts = self
            .tables
            .iter()
            .zip(vectors)
            .map(|(&t, &v)| {
                let t = g.param(t);
                g.matmul(v, t)
            })
            .collect::<Result<Vec<_>>>()?;
        g.concat(&parts, 1)
    }

    /// `c = relu(c0 W_c + b_c)`, shape `[1 x conditions_repr_dim]`.
    pub fn project(&self, g: &mut Graph<'_>, c0: Var) -> Result<Var> {
        let w = g.param(self.w_c);
        let b = g.param(self.b_c);
        let h = g.matmul(c0, w)?;
        let h = g.add_row(h, b)?;
        Ok(g.relu(h))
    }

    pub fn encode(&self, g: &mut Graph<'_>, values: &ConditionAssignment) -> Result<Var> {
        let c0 = self.embed(g, values)?;
        self.project(g, c0)
    }
}

/// Token ids, turn ids and marker positions of one flattened dialogue.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DialogueInput {
    pub tokens: Vec<usize>,
    pub turns: Vec<usize>,
    pub hist_index: usize,
    pub ques_index: usize,
}

impl DialogueInput {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// `[HIST] h1 <eou> h2 ... [QUES] q`, keeping the last `max_history_turns`
/// utterances and the last `max_question_len` question tokens.
pub fn build_input(sample: &DialogueSample, vocab: &Vocab, cfg: &ModelConfig) -> Result<DialogueInput> {
    if sample.question.is_empty() {
        return Err(Error::Input(format!("sample {} has an empty question", sample.id)));
    }
    let mut tokens = vec![Vocab::HIST_ID];
    let keep = sample.history.len().saturating_sub(cfg.max_history_turns);
    for (k, utt) in sample.history[keep..].iter().enumerate() {
        if k > 0 {
            tokens.push(Vocab::EOU_ID);
        }
        tokens.extend(utt.iter().map(|w| vocab.id(w)));
    }
    let ques_index = tokens.len();
    let mut turns = vec![0; ques_index];
    tokens.push(Vocab::QUES_ID);
    let q = &sample.question;
    let start = q.len().saturating_sub(cfg.max_question_len);
    tokens.extend(q[start..].iter().map(|w| vocab.id(w)));
    turns.resize(tokens.len(), 1);
    if tokens.len() > cfg.max_positions {
        return Err(Error::Input(format!(
            "sample {} has {} tokens after truncation, limit is {}",
            sample.id,
            tokens.len(),
            cfg.max_positions
        )));
    }
    Ok(DialogueInput {
        tokens,
        turns,
        hist_index: 0,
        ques_index,
    })
}

/// Word + position + turn embeddings followed by the encoder stack.
#[derive(Clone, Debug)]
pub struct DialogueEncoder {
    pub word: ParamId,
    pub turn: ParamId,
    pub positions: Tensor,
    pub layers: Vec<EncoderLayer>,
}

impl DialogueEncoder {
    pub fn new(params: &mut ParamSet, cfg: &ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        let word = params.add_glorot("dialogue.word", cfg.vocab_size, cfg.dim, rng);
        let turn = params.add_glorot("dialogue.turn", 2, cfg.dim, rng);
        let layers = (0..cfg.encoder_layers)
            .map(|l| EncoderLayer::new(params, &format!("dialogue.layer{l}"), &cfg.layer(), rng))
            .collect::<Result<_>>()?;
        Ok(Self {
            word,
            turn,
            positions: positional_encoding(cfg.max_positions, cfg.dim),
            layers,
        })
    }

    /// Input embedding `WE + PE + TE`, shape `[L x d]`.
    pub fn embed(&self, g: &mut Graph<'_>, input: &DialogueInput) -> Result<Var> {
        let d = self.positions.shape()[1];
        let n = input.len();
        let word = g.param(self.word);
        let w = g.embedding_lookup(word, &input.tokens)?;
        let turn = g.param(self.turn);
        let t = g.embedding_lookup(turn, &input.turns)?;
        let pe = Tensor::new(vec![n, d], self.positions.values()[..n * d].to_vec())?;
        let p = g.constant(pe);
        let x = g.add(w, t)?;
        g.add(x, p)
    }

    pub fn encode(&self, g: &mut Graph<'_>, input: &DialogueInput) -> Result<Var> {
        let mut x = self.embed(g, input)?;
        let valid = vec![true; input.len()];
        for layer in &self.layers {
            x = layer.forward(g, x, &valid)?;
        }
        Ok(x)
    }
}

/// Jointly re-predicts every condition value from the observed values and
/// the dialogue representation.
#[derive(Clone, Debug)]
pub struct ConditionsReviser {
    pub value_tables: Vec<ParamId>,
    pub slot_embedding: ParamId,
    pub layers: Vec<ReviserLayer>,
    pub heads: Vec<(ParamId, ParamId)>,
}

impl ConditionsReviser {
    pub fn new(
        params: &mut ParamSet,
        cfg: &ModelConfig,
        widths: &[usize],
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let d = cfg.dim;
        let value_tables = widths
            .iter()
            .enumerate()
            .map(|(i, &w)| params.add_glorot(format!("reviser.value.{i}"), w, d, rng))
            .collect();
        let slot_embedding = params.add_glorot("reviser.slot", widths.len(), d, rng);
        let layers = (0..cfg.reviser_layers)
            .map(|l| ReviserLayer::new(params, &format!("reviser.layer{l}"), &cfg.layer(), rng))
            .collect::<Result<_>>()?;
        let heads = widths
            .iter()
            .enumerate()
            .map(|(i, &w)| {
                (
                    params.add_glorot(format!("reviser.head.{i}.w"), d, w, rng),
                    params.add_filled(format!("reviser.head.{i}.b"), &[w], 0.0),
                )
            })
            .collect();
        Ok(Self {
            value_tables,
            slot_embedding,
            layers,
            heads,
        })
    }

    /// Slot inputs `[m x d]`: value embedding plus slot-index embedding.
    pub fn slot_inputs(&self, g: &mut Graph<'_>, observed: &ConditionAssignment) -> Result<Var> {
        if observed.len() != self.value_tables.len() {
            return Err(Error::Schema(format!(
                "expected {} observed values, got {}",
                self.value_tables.len(),
                observed.len()
            )));
        }
        let rows = self
            .value_tables
            .iter()
            .zip(observed.values())
            .map(|(&t, &v)| {
                let t = g.param(t);
                g.embedding_lookup(t, &[v])
            })
            .collect::<Result<Vec<_>>>()?;
        let values = g.concat(&rows, 0)?;
        let slots = g.param(self.slot_embedding);
        g.add(values, slots)
    }

    /// All slots pass through the stack together; returns per-slot logits.
    pub fn revise(
        &self,
        g: &mut Graph<'_>,
        observed: &ConditionAssignment,
        z: Var,
        z_valid: &[bool],
    ) -> Result<Vec<Var>> {
        let mut h = self.slot_inputs(g, observed)?;
        for layer in &self.layers {
            h = layer.forward(g, h, z, z_valid)?;
        }
        self.heads
            .iter()
            .enumerate()
            .map(|(i, &(w, b))| {
                let row = g.gather_rows(h, &[i])?;
                let w = g.param(w);
                let b = g.param(b);
                let o = g.matmul(row, w)?;
                g.add_row(o, b)
            })
            .collect()
    }
}

/// Argmax per slot, ties to the lowest value id.
pub fn discretize(distributions: &[Vec<f64>]) -> ConditionAssignment {
    ConditionAssignment(distributions.iter().map(|p| argmax(p)).collect())
}

/// Index of the largest entry; the first one wins ties.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// ReLU MLP over `concat(c, z_hist, z_ques)`.
#[derive(Clone, Debug)]
pub struct Classifier {
    pub layers: Vec<(ParamId, ParamId)>,
}

impl Classifier {
    pub fn new(params: &mut ParamSet, cfg: &ModelConfig, rng: &mut impl Rng) -> Self {
        let mut dims = vec![cfg.conditions_repr_dim + 2 * cfg.dim];
        dims.extend(&cfg.classifier_hidden);
        dims.push(cfg.candidate_count);
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(k, io)| {
                (
                    params.add_glorot(format!("classifier.{k}.w"), io[0], io[1], rng),
                    params.add_filled(format!("classifier.{k}.b"), &[io[1]], 0.0),
                )
            })
            .collect();
        Self { layers }
    }

    /// Answer logits `[1 x candidate_count]`.
    pub fn logits(&self, g: &mut Graph<'_>, c: Var, z: Var, hist: usize, ques: usize) -> Result<Var> {
        let zh = g.gather_rows(z, &[hist])?;
        let zq = g.gather_rows(z, &[ques])?;
        let mut x = g.concat(&[c, zh, zq], 1)?;
        let last = self.layers.len() - 1;
        for (k, &(w, b)) in self.layers.iter().enumerate() {
            let w = g.param(w);
            let b = g.param(b);
            let h = g.matmul(x, w)?;
            x = g.add_row(h, b)?;
            if k < last {
                x = g.relu(x);
            }
        }
        Ok(x)
    }
}
