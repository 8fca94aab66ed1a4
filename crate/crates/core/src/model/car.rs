use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::components::{
    argmax, build_input, discretize, Classifier, ConditionsEncoder, ConditionsReviser,
    DialogueEncoder, DialogueInput,
};
use super::config::{ModelConfig, Variant};
use super::vocab::Vocab;
use crate::autograd::{Graph, ParamSet, Tensor, Var};
use crate::data::{ConditionAssignment, ConditionSchema, DialogueSample};
use crate::error::{Error, Result};

/// Conditions encoder, dialogue encoder, optional conditions reviser and
/// answer classifier, with every trainable parameter.
#[derive(Clone, Debug)]
pub struct CarModel {
    pub config: ModelConfig,
    pub variant: Variant,
    pub schema: ConditionSchema,
    pub vocab: Vocab,
    pub params: ParamSet,
    pub conditions: ConditionsEncoder,
    pub dialogue: DialogueEncoder,
    pub classifier: Classifier,
    pub reviser: Option<ConditionsReviser>,
}

/// Tape handles and values of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardPass {
    pub input: DialogueInput,
    pub z: Var,
    /// Per-slot reviser logits; empty for the ablation variant.
    pub slot_logits: Vec<Var>,
    pub slot_probs: Vec<Vec<f64>>,
    /// Conditions fed to the conditions encoder.
    pub conditions: ConditionAssignment,
    pub c: Var,
    pub answer_logits: Var,
    pub answer_probs: Vec<f64>,
}

impl ForwardPass {
    pub fn answer(&self) -> usize {
        argmax(&self.answer_probs)
    }
}

#[derive(Clone, Debug)]
pub struct LossTerms {
    pub total: Var,
    pub condition: Option<Var>,
    pub answer: Var,
    pub pass: ForwardPass,
}

/// Inference result detached from any tape.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub answer: usize,
    pub answer_probs: Vec<f64>,
    pub slot_probs: Vec<Vec<f64>>,
    pub conditions: ConditionAssignment,
    pub conditions_vector: Vec<f64>,
}

fn probs(g: &mut Graph<'_>, logits: Var) -> Result<(Var, Vec<f64>)> {
    let p = g.softmax(logits, 1)?;
    Ok((p, g.value(p).to_vec()))
}

impl CarModel {
    /// Parameters are initialised from `seed`. The ablation variant draws
    /// the same values for every shared component.
    pub fn new(
        config: ModelConfig,
        variant: Variant,
        schema: ConditionSchema,
        vocab: Vocab,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        schema.validate()?;
        if vocab.len() != config.vocab_size {
            return Err(Error::Config(format!(
                "vocabulary has {} tokens but the config expects {}",
                vocab.len(),
                config.vocab_size
            )));
        }
        let widths = schema.widths();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let conditions = ConditionsEncoder::new(&mut params, &config, &widths, &mut rng);
        let dialogue = DialogueEncoder::new(&mut params, &config, &mut rng)?;
        let classifier = Classifier::new(&mut params, &config, &mut rng);
        let reviser = match variant {
            Variant::Car => Some(ConditionsReviser::new(&mut params, &config, &widths, &mut rng)?),
            Variant::Ca => None,
        };
        Ok(Self {
            config,
            variant,
            schema,
            vocab,
            params,
            conditions,
            dialogue,
            classifier,
            reviser,
        })
    }

    pub fn graph(&self) -> Graph<'_> {
        Graph::with_params(&self.params)
    }

    /// Encodes the dialogue, revises the observed conditions (full variant
    /// only), encodes the conditions and scores every candidate.
    pub fn forward(&self, g: &mut Graph<'_>, sample: &DialogueSample) -> Result<ForwardPass> {
        self.schema.check(&sample.observed_conditions)?;
        let input = build_input(sample, &self.vocab, &self.config)?;
        let z = self.dialogue.encode(g, &input)?;
        let Some(reviser) = &self.reviser else {
            let c = self.conditions.encode(g, &sample.observed_conditions)?;
            return self.finish(g, input, z, Vec::new(), Vec::new(), sample.observed_conditions.clone(), c);
        };
        let valid = vec![true; input.len()];
        let slot_logits = reviser.revise(g, &sample.observed_conditions, z, &valid)?;
        let mut slot_probs = Vec::with_capacity(slot_logits.len());
        let mut prob_vars = Vec::with_capacity(slot_logits.len());
        for &l in &slot_logits {
            let (v, p) = probs(g, l)?;
            prob_vars.push(v);
            slot_probs.push(p);
        }
        let revised = discretize(&slot_probs);
        let c = if self.config.straight_through {
            let vectors = prob_vars
                .iter()
                .zip(&slot_probs)
                .zip(revised.values())
                .map(|((&p, pv), &hard)| {
                    let shift: Vec<f64> = pv
                        .iter()
                        .enumerate()
                        .map(|(k, x)| f64::from(u8::from(k == hard)) - x)
                        .collect();
                    let shift = g.constant(Tensor::new(vec![1, pv.len()], shift)?);
                    g.add(p, shift)
                })
                .collect::<Result<Vec<_>>>()?;
            let c0 = self.conditions.embed_vectors(g, &vectors)?;
            self.conditions.project(g, c0)?
        } else {
            self.conditions.encode(g, &revised)?
        };
        self.finish(g, input, z, slot_logits, slot_probs, revised, c)
    }

    /// Forward pass with the reviser bypassed and `conditions` fed directly
    /// to the conditions encoder.
    pub fn forward_with_conditions(
        &self,
        g: &mut Graph<'_>,
        sample: &DialogueSample,
        conditions: &ConditionAssignment,
    ) -> Result<ForwardPass> {
        self.schema.check(conditions)?;
        let input = build_input(sample, &self.vocab, &self.config)?;
        let z = self.dialogue.encode(g, &input)?;
        let c = self.conditions.encode(g, conditions)?;
        self.finish(g, input, z, Vec::new(), Vec::new(), conditions.clone(), c)
    }

    #[allow(clippy::too_many_arguments)]
    fn finish(
        &self,
        g: &mut Graph<'_>,
        input: DialogueInput,
        z: Var,
        slot_logits: Vec<Var>,
        slot_probs: Vec<Vec<f64>>,
        conditions: ConditionAssignment,
        c: Var,
    ) -> Result<ForwardPass> {
        let answer_logits = self
            .classifier
            .logits(g, c, z, input.hist_index, input.ques_index)?;
        let (_, answer_probs) = probs(g, answer_logits)?;
        Ok(ForwardPass {
            input,
            z,
            slot_logits,
            slot_probs,
            conditions,
            c,
            answer_logits,
            answer_probs,
        })
    }

    /// `eta * sum_i CE(slot_i, true_i) + (1 - eta) * CE(answer, gold)`; the
    /// ablation variant has no slot term and uses the answer loss alone.
    pub fn loss(&self, g: &mut Graph<'_>, sample: &DialogueSample) -> Result<LossTerms> {
        let label = sample.label()?;
        let pass = self.forward(g, sample)?;
        let answer = g.cross_entropy(pass.answer_logits, label)?;
        if pass.slot_logits.is_empty() {
            return Ok(LossTerms {
                total: answer,
                condition: None,
                answer,
                pass,
            });
        }
        let truth = sample.truth()?;
        self.schema.check(truth)?;
        let mut lc: Option<Var> = None;
        for (&l, &t) in pass.slot_logits.iter().zip(truth.values()) {
            let ce = g.cross_entropy(l, t)?;
            lc = Some(match lc {
                Some(acc) => g.add(acc, ce)?,
                None => ce,
            });
        }
        let lc = lc.expect("schema has at least one condition");
        let eta = self.config.eta;
        let a = g.scale(lc, eta);
        let b = g.scale(answer, 1.0 - eta);
        let total = g.add(a, b)?;
        Ok(LossTerms {
            total,
            condition: Some(lc),
            answer,
            pass,
        })
    }

    pub fn predict(&self, sample: &DialogueSample) -> Result<Prediction> {
        let mut g = self.graph();
        let pass = self.forward(&mut g, sample)?;
        Ok(Prediction {
            answer: pass.answer(),
            conditions_vector: g.value(pass.c).to_vec(),
            answer_probs: pass.answer_probs,
            slot_probs: pass.slot_probs,
            conditions: pass.conditions,
        })
    }
}
