use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::schema::ConditionAssignment;
use super::synth::Synth;
use crate::error::{Error, Result};

/// Per-slot corruption probabilities. A slot is made wrong with probability
/// `p_wrong`, made missing with probability `p_unknown`, and kept otherwise.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorruptionSpec {
    pub p_wrong: f64,
    pub p_unknown: f64,
}

impl CorruptionSpec {
    pub const NONE: Self = Self {
        p_wrong: 0.0,
        p_unknown: 0.0,
    };

    pub fn new(p_wrong: f64, p_unknown: f64) -> Result<Self> {
        let s = Self { p_wrong, p_unknown };
        s.validate()?;
        Ok(s)
    }

    /// Equal wrong/missing split such that a sample with `slots` conditions
    /// has at least one defective slot with probability `target_rate`.
    pub fn calibrated(target_rate: f64, slots: usize) -> Result<Self> {
        if !(0.0..1.0).contains(&target_rate) || slots == 0 {
            return Err(Error::Config(format!(
                "cannot calibrate defect rate {target_rate} over {slots} slots"
            )));
        }
        let q = 1.0 - (1.0 - target_rate).powf(1.0 / slots as f64);
        Self::new(q / 2.0, q / 2.0)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |p: f64| (0.0..=1.0).contains(&p);
        if !ok(self.p_wrong) || !ok(self.p_unknown) || self.p_wrong + self.p_unknown > 1.0 + 1e-12 {
            return Err(Error::Config(format!(
                "corruption probabilities must lie in [0, 1] and sum to at most 1, got {} and {}",
                self.p_wrong, self.p_unknown
            )));
        }
        Ok(())
    }

    /// Probability that at least one of `slots` slots is corrupted.
    pub fn expected_defect_rate(&self, slots: usize) -> f64 {
        1.0 - (1.0 - self.p_wrong - self.p_unknown).powi(slots as i32)
    }
}

impl Default for CorruptionSpec {
    fn default() -> Self {
        Self::calibrated(0.20, 7).expect("valid default")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorruptionKind {
    Wrong,
    Missing,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorruptionRecord {
    pub slot: usize,
    pub kind: CorruptionKind,
}

impl Synth {
    /// Values a wrong slot may take: any legal value other than the truth
    /// and Unknown; Null only where Null is structurally possible given the
    /// other true values.
    fn wrong_values(&self, truth: &ConditionAssignment, slot: usize) -> Vec<usize> {
        let c = &self.schema.conditions[slot];
        let null_ok = c.null_id().is_some_and(|n| {
            let mut a = truth.clone();
            a.0[slot] = n;
            self.is_reachable(&a)
        });
        (0..c.width())
            .filter(|&v| v != truth.get(slot) && Some(v) != c.unknown_id())
            .filter(|&v| Some(v) != c.null_id() || null_ok)
            .collect()
    }

    /// Missing is expressed as Unknown where the vocabulary has it, else as
    /// Null where Null is plausible.
    fn missing_value(&self, truth: &ConditionAssignment, slot: usize) -> Option<usize> {
        let c = &self.schema.conditions[slot];
        if let Some(u) = c.unknown_id() {
            return Some(u);
        }
        let n = c.null_id()?;
        if truth.get(slot) == n {
            return None;
        }
        self.wrong_values(truth, slot).contains(&n).then_some(n)
    }

    /// Independently corrupts each slot. The record lists the kind actually
    /// applied; a missing draw on a slot with no way to express missingness
    /// becomes a wrong value.
    pub fn corrupt(
        &self,
        truth: &ConditionAssignment,
        spec: &CorruptionSpec,
        rng: &mut impl Rng,
    ) -> (ConditionAssignment, Vec<CorruptionRecord>) {
        let mut observed = truth.clone();
        let mut record = Vec::new();
        for slot in 0..truth.len() {
            let u: f64 = rng.random();
            let kind = if u < spec.p_wrong {
                CorruptionKind::Wrong
            } else if u < spec.p_wrong + spec.p_unknown {
                CorruptionKind::Missing
            } else {
                continue;
            };
            let (kind, value) = match kind {
                CorruptionKind::Missing => match self.missing_value(truth, slot) {
                    Some(v) => (CorruptionKind::Missing, Some(v)),
                    None => (
                        CorruptionKind::Wrong,
                        self.wrong_values(truth, slot).choose(rng).copied(),
                    ),
                },
                CorruptionKind::Wrong => (
                    CorruptionKind::Wrong,
                    self.wrong_values(truth, slot).choose(rng).copied(),
                ),
            };
            if let Some(v) = value {
                observed.0[slot] = v;
                record.push(CorruptionRecord { slot, kind });
            }
        }
        (observed, record)
    }
}
