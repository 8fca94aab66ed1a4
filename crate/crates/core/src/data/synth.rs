//! Declarative generator configuration: schema, value priors, structural
//! dependencies, intents with their decision tables, candidate answers and
//! text material. [`SynthConfig`] is the on-disk form; [`Synth`] is the
//! validated, index-resolved form used by the generator.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::schema::{ConditionAssignment, ConditionSchema};
use crate::error::{Error, Result};

pub const SYNTH_FORMAT: &str = "car-synth/v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub format: String,
    pub schema: ConditionSchema,
    /// Sampling weight of each value, aligned with the schema vocabularies.
    pub priors: BTreeMap<String, Vec<f64>>,
    pub dependencies: Vec<Dependency>,
    pub candidates: Vec<Candidate>,
    pub intents: Vec<Intent>,
    /// `condition -> value -> phrases` revealing that value in text.
    pub clues: BTreeMap<String, BTreeMap<String, Vec<String>>>,
    pub text: TextMaterial,
}

/// If `when` takes one of `is`, then `then` must take one of `allowed`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dependency {
    pub when: String,
    pub is: Vec<String>,
    pub then: String,
    pub allowed: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Candidate {
    pub name: String,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Intent {
    pub name: String,
    #[serde(default = "one")]
    pub weight: f64,
    /// Conditions the decision table may inspect.
    pub reads: Vec<String>,
    /// First matching rule wins.
    pub rules: Vec<Rule>,
    pub templates: Vec<String>,
}

fn one() -> f64 {
    1.0
}

/// Matches when every listed condition takes one of its listed values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rule {
    #[serde(default)]
    pub when: BTreeMap<String, Vec<String>>,
    pub answer: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TextMaterial {
    pub greetings: Vec<String>,
    pub closings: Vec<String>,
    pub connectors: Vec<String>,
    pub fillers: Vec<String>,
    pub openers: Vec<String>,
    /// Value-free mentions of each condition, used in the question when a
    /// read condition is not stated.
    pub vague: BTreeMap<String, Vec<String>>,
    /// Probability that the question states the value of a condition the
    /// intent reads; otherwise a vague mention is used.
    pub question_clue_rate: f64,
    /// Probability that a condition the intent does not read is mentioned
    /// somewhere in the history.
    pub context_clue_rate: f64,
    /// Probability of one filler sentence in a question.
    pub filler_rate: f64,
    /// Weights for 0, 1, 2, ... history utterances.
    pub history_turns: Vec<f64>,
}

impl SynthConfig {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Decision rule with names resolved: `when[slot]` is the allowed-value
/// mask, `None` when the rule ignores that slot.
#[derive(Clone, Debug)]
struct CompiledRule {
    when: Vec<Option<Vec<bool>>>,
    answer: usize,
}

#[derive(Clone, Debug)]
pub struct CompiledIntent {
    pub name: String,
    pub weight: f64,
    pub reads: Vec<usize>,
    pub templates: Vec<Vec<String>>,
    rules: Vec<CompiledRule>,
}

#[derive(Clone, Debug)]
struct CompiledDependency {
    when: usize,
    is: Vec<bool>,
    then: usize,
    allowed: Vec<bool>,
}

/// Validated generator configuration.
#[derive(Clone, Debug)]
pub struct Synth {
    pub config: SynthConfig,
    pub schema: ConditionSchema,
    pub intents: Vec<CompiledIntent>,
    priors: Vec<Vec<f64>>,
    dependencies: Vec<CompiledDependency>,
    /// `[slot][value]` -> tokenised phrases.
    clues: Vec<Vec<Vec<Vec<String>>>>,
    /// `[slot]` -> tokenised value-free mentions.
    vague: Vec<Vec<Vec<String>>>,
}

pub fn tokenize(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_lowercase).collect()
}

impl Synth {
    pub fn new(config: SynthConfig) -> Result<Self> {
        if config.format != SYNTH_FORMAT {
            return Err(Error::Config(format!(
                "unsupported generator config format {:?}, expected {SYNTH_FORMAT:?}",
                config.format
            )));
        }
        let schema = config.schema.clone();
        schema.validate()?;

        let mut priors = Vec::with_capacity(schema.len());
        for c in &schema.conditions {
            let w = config
                .priors
                .get(&c.name)
                .ok_or_else(|| Error::Config(format!("no prior for {:?}", c.name)))?;
            if w.len() != c.width() || w.iter().any(|x| !(*x >= 0.0)) || w.iter().sum::<f64>() <= 0.0 {
                return Err(Error::Config(format!("bad prior for {:?}: {w:?}", c.name)));
            }
            if c.unknown_id().is_some_and(|u| w[u] != 0.0) {
                return Err(Error::Config(format!(
                    "{:?}: the unknown value cannot be a true value",
                    c.name
                )));
            }
            priors.push(w.clone());
        }
        if let Some(extra) = config.priors.keys().find(|k| schema.index_of(k).is_none()) {
            return Err(Error::Config(format!("prior for unknown condition {extra:?}")));
        }

        let mask = |slot: usize, names: &[String]| -> Result<Vec<bool>> {
            let c = &schema.conditions[slot];
            let mut m = vec![false; c.width()];
            for n in names {
                let v = c.value_id(n).ok_or_else(|| {
                    Error::Config(format!("{:?} has no value {n:?}", c.name))
                })?;
                m[v] = true;
            }
            Ok(m)
        };

        let mut dependencies = Vec::new();
        for d in &config.dependencies {
            let (when, _) = schema.condition(&d.when)?;
            let (then, _) = schema.condition(&d.then)?;
            if when >= then {
                return Err(Error::Config(format!(
                    "dependency {:?} -> {:?} must point to a later condition",
                    d.when, d.then
                )));
            }
            dependencies.push(CompiledDependency {
                when,
                is: mask(when, &d.is)?,
                then,
                allowed: mask(then, &d.allowed)?,
            });
        }

        let candidate_id = |name: &str| -> Result<usize> {
            config
                .candidates
                .iter()
                .position(|c| c.name == name)
                .ok_or_else(|| Error::Config(format!("unknown candidate answer {name:?}")))
        };
        for (i, c) in config.candidates.iter().enumerate() {
            if config.candidates[..i].iter().any(|o| o.name == c.name) {
                return Err(Error::Config(format!("duplicate candidate {:?}", c.name)));
            }
            if tokenize(&c.text).is_empty() {
                return Err(Error::Config(format!("candidate {:?} has empty text", c.name)));
            }
        }

        let mut intents = Vec::new();
        for it in &config.intents {
            if it.templates.len() < 3 {
                return Err(Error::Config(format!(
                    "intent {:?} needs at least 3 templates",
                    it.name
                )));
            }
            if !(it.weight > 0.0) {
                return Err(Error::Config(format!("intent {:?} has non-positive weight", it.name)));
            }
            let reads = it
                .reads
                .iter()
                .map(|n| schema.condition(n).map(|(i, _)| i))
                .collect::<Result<Vec<_>>>()?;
            let mut rules = Vec::new();
            for r in &it.rules {
                let mut when = vec![None; schema.len()];
                for (name, values) in &r.when {
                    let (slot, _) = schema.condition(name)?;
                    if !reads.contains(&slot) {
                        return Err(Error::Config(format!(
                            "intent {:?} rule inspects {name:?} which it does not read",
                            it.name
                        )));
                    }
                    when[slot] = Some(mask(slot, values)?);
                }
                rules.push(CompiledRule {
                    when,
                    answer: candidate_id(&r.answer)?,
                });
            }
            intents.push(CompiledIntent {
                name: it.name.clone(),
                weight: it.weight,
                reads,
                templates: it.templates.iter().map(|t| tokenize(t)).collect(),
                rules,
            });
        }
        if intents.is_empty() {
            return Err(Error::Config("no intents".into()));
        }

        let mut clues = Vec::with_capacity(schema.len());
        for (slot, c) in schema.conditions.iter().enumerate() {
            let per_value = config.clues.get(&c.name);
            let mut values = Vec::with_capacity(c.width());
            for (v, name) in c.values.iter().enumerate() {
                let phrases: Vec<Vec<String>> = per_value
                    .and_then(|m| m.get(name))
                    .map(|ps| ps.iter().map(|p| tokenize(p)).collect())
                    .unwrap_or_default();
                if priors[slot][v] > 0.0 && (phrases.is_empty() || phrases.iter().any(Vec::is_empty)) {
                    return Err(Error::Config(format!(
                        "no clue phrase for {:?} = {name:?}",
                        c.name
                    )));
                }
                values.push(phrases);
            }
            for (v, phrases) in values.iter().enumerate() {
                for p in phrases {
                    if values
                        .iter()
                        .enumerate()
                        .any(|(o, other)| o != v && other.contains(p))
                    {
                        return Err(Error::Config(format!(
                            "clue {:?} is shared by two values of {:?}",
                            p.join(" "),
                            c.name
                        )));
                    }
                }
            }
            clues.push(values);
        }

        let t = &config.text;
        if t.greetings.is_empty() || t.closings.is_empty() || t.connectors.is_empty() || t.openers.is_empty()
        {
            return Err(Error::Config("text material lists must be nonempty".into()));
        }
        let mut vague = Vec::with_capacity(schema.len());
        for c in &schema.conditions {
            let phrases: Vec<Vec<String>> = t
                .vague
                .get(&c.name)
                .map(|ps| ps.iter().map(|p| tokenize(p)).collect())
                .unwrap_or_default();
            if t.question_clue_rate < 1.0 && (phrases.is_empty() || phrases.iter().any(Vec::is_empty)) {
                return Err(Error::Config(format!("no vague mention for {:?}", c.name)));
            }
            vague.push(phrases);
        }
        if let Some(extra) = t.vague.keys().find(|k| schema.index_of(k).is_none()) {
            return Err(Error::Config(format!("vague mention for unknown condition {extra:?}")));
        }
        if t.history_turns.is_empty() || t.history_turns.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Config("history turn weights must be positive".into()));
        }
        for p in [t.question_clue_rate, t.context_clue_rate, t.filler_rate] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("probability {p} outside [0, 1]")));
            }
        }

        let synth = Self {
            schema,
            intents,
            priors,
            dependencies,
            clues,
            vague,
            config,
        };
        synth.check_totality()?;
        Ok(synth)
    }

    pub fn candidate_count(&self) -> usize {
        self.config.candidates.len()
    }

    pub fn candidate_texts(&self) -> Vec<Vec<String>> {
        self.config.candidates.iter().map(|c| tokenize(&c.text)).collect()
    }

    /// True values never include a zero-prior value and respect every
    /// structural dependency.
    pub fn is_reachable(&self, a: &ConditionAssignment) -> bool {
        if self.schema.check(a).is_err() {
            return false;
        }
        if a.values()
            .iter()
            .enumerate()
            .any(|(slot, &v)| self.priors[slot][v] <= 0.0)
        {
            return false;
        }
        self.dependencies
            .iter()
            .all(|d| !d.is[a.get(d.when)] || d.allowed[a.get(d.then)])
    }

    /// Candidate id dictated by the intent's decision table.
    pub fn gold_answer(&self, intent: usize, truth: &ConditionAssignment) -> Result<usize> {
        let it = self
            .intents
            .get(intent)
            .ok_or(Error::Index {
                what: "intents",
                index: intent,
                size: self.intents.len(),
            })?;
        if !self.is_reachable(truth) {
            return Err(Error::GenerationBug(format!(
                "assignment [{}] cannot occur as ground truth",
                self.schema.describe(truth)
            )));
        }
        it.rules
            .iter()
            .find(|r| {
                r.when
                    .iter()
                    .enumerate()
                    .all(|(slot, m)| m.as_ref().is_none_or(|m| m[truth.get(slot)]))
            })
            .map(|r| r.answer)
            .ok_or_else(|| {
                Error::GenerationBug(format!(
                    "intent {:?} has no rule for [{}]",
                    it.name,
                    self.schema.describe(truth)
                ))
            })
    }

    fn check_totality(&self) -> Result<()> {
        for a in self.schema.enumerate().filter(|a| self.is_reachable(a)) {
            for i in 0..self.intents.len() {
                self.gold_answer(i, &a)
                    .map_err(|e| Error::Config(format!("decision table not total: {e}")))?;
            }
        }
        Ok(())
    }

    /// Samples a structurally consistent true assignment, slot by slot.
    pub fn sample_truth(&self, rng: &mut impl Rng) -> Result<ConditionAssignment> {
        let mut vals = Vec::with_capacity(self.schema.len());
        for slot in 0..self.schema.len() {
            let mut w = self.priors[slot].clone();
            for d in self.dependencies.iter().filter(|d| d.then == slot) {
                if d.is[vals[d.when]] {
                    for (x, ok) in w.iter_mut().zip(&d.allowed) {
                        if !ok {
                            *x = 0.0;
                        }
                    }
                }
            }
            vals.push(sample_weighted(&w, rng).ok_or_else(|| {
                Error::GenerationBug(format!(
                    "no admissible value for {:?}",
                    self.schema.conditions[slot].name
                ))
            })?);
        }
        Ok(ConditionAssignment(vals))
    }

    pub fn sample_intent(&self, rng: &mut impl Rng) -> usize {
        let w: Vec<f64> = self.intents.iter().map(|i| i.weight).collect();
        sample_weighted(&w, rng).expect("validated positive weights")
    }

    pub(crate) fn clue_phrases(&self, slot: usize, value: usize) -> &[Vec<String>] {
        &self.clues[slot][value]
    }

    pub(crate) fn vague_phrases(&self, slot: usize) -> &[Vec<String>] {
        &self.vague[slot]
    }
}

pub(crate) fn sample_weighted(weights: &[f64], rng: &mut impl Rng) -> Option<usize> {
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return None;
    }
    let mut x = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if *w > 0.0 {
            if x < *w {
                return Some(i);
            }
            x -= w;
        }
    }
    weights.iter().rposition(|w| *w > 0.0)
}
