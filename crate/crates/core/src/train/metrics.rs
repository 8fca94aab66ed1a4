use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::data::{ConditionAssignment, DialogueSample};
use crate::error::{Error, Result};
use crate::model::CarModel;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BrevityPenalty {
    /// `1` if the candidate corpus is longer than the reference corpus,
    /// otherwise the ratio `c / r`.
    #[default]
    Ratio,
    /// `1` if `c > r`, otherwise `exp(1 - r / c)`.
    Standard,
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Clipped `n`-gram matches and total candidate `n`-grams over a corpus.
pub fn ngram_matches(candidates: &[Vec<String>], references: &[Vec<String>], n: usize) -> (usize, usize) {
    let mut hits = 0;
    let mut total = 0;
    for (c, r) in candidates.iter().zip(references) {
        let rc = ngram_counts(r, n);
        for (g, k) in ngram_counts(c, n) {
            hits += k.min(rc.get(g).copied().unwrap_or(0));
        }
        total += c.len().saturating_sub(n - 1);
    }
    (hits, total)
}

/// Corpus BLEU-`n`: `BP * exp(mean_i log p_i)` over clipped `i`-gram
/// precisions `p_1..p_n`; any zero precision gives 0.
pub fn bleu_n(
    candidates: &[Vec<String>],
    references: &[Vec<String>],
    n: usize,
    bp: BrevityPenalty,
) -> Result<f64> {
    if candidates.is_empty() {
        return Err(Error::Contract("BLEU needs a nonempty corpus".into()));
    }
    if candidates.len() != references.len() {
        return Err(Error::Contract(format!(
            "{} candidates but {} references",
            candidates.len(),
            references.len()
        )));
    }
    if !(1..=4).contains(&n) {
        return Err(Error::Contract(format!("BLEU order must be 1 to 4, got {n}")));
    }
    let mut log_sum = 0.0;
    for i in 1..=n {
        let (hits, total) = ngram_matches(candidates, references, i);
        if hits == 0 || total == 0 {
            return Ok(0.0);
        }
        log_sum += (hits as f64 / total as f64).ln();
    }
    let c: usize = candidates.iter().map(Vec::len).sum();
    let r: usize = references.iter().map(Vec::len).sum();
    let penalty = if c > r {
        1.0
    } else if c == 0 {
        0.0
    } else {
        match bp {
            BrevityPenalty::Ratio => c as f64 / r as f64,
            BrevityPenalty::Standard => (1.0 - r as f64 / c as f64).exp(),
        }
    };
    Ok(penalty * (log_sum / n as f64).exp())
}

/// One evaluated sample, enough to recompute every metric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: u64,
    pub predicted: usize,
    pub gold: usize,
    pub observed: ConditionAssignment,
    pub revised: ConditionAssignment,
    #[serde(default)]
    pub truth: Option<ConditionAssignment>,
    pub defective_slots: Vec<usize>,
}

impl PredictionRecord {
    pub fn is_defective(&self) -> bool {
        !self.defective_slots.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub samples: usize,
    pub accuracy: f64,
    /// BLEU-1 to BLEU-4 of the selected answer text against the gold text.
    pub bleu: [f64; 4],
    pub defective_slots: usize,
    /// Defective slots whose revised value equals the truth.
    pub revision_accuracy: f64,
    /// Defective slots left at the observed value.
    pub unrevised: f64,
    /// Defective slots changed to a value that is still wrong.
    pub wrongly_revised: f64,
    pub clean_slots: usize,
    /// Correct slots the reviser changed.
    pub revision_damage: f64,
    /// `confusion[gold][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

fn frac(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

impl Metrics {
    /// Aggregates predictions; `candidates[k]` is the text of answer `k`
    /// and `references` the gold texts, aligned with `records`.
    pub fn from_records(
        records: &[PredictionRecord],
        candidates: &[Vec<String>],
        references: &[Vec<String>],
        bp: BrevityPenalty,
    ) -> Result<Self> {
        let k = candidates.len();
        let mut confusion = vec![vec![0; k]; k];
        let mut correct = 0;
        let (mut defective, mut fixed, mut kept, mut wrong) = (0, 0, 0, 0);
        let (mut clean, mut damaged) = (0, 0);
        for r in records {
            if r.gold >= k || r.predicted >= k {
                return Err(Error::Index {
                    what: "candidates",
                    index: r.gold.max(r.predicted),
                    size: k,
                });
            }
            confusion[r.gold][r.predicted] += 1;
            correct += usize::from(r.gold == r.predicted);
            let Some(truth) = &r.truth else { continue };
            for slot in 0..truth.len() {
                let (t, o, v) = (truth.get(slot), r.observed.get(slot), r.revised.get(slot));
                if r.defective_slots.contains(&slot) {
                    defective += 1;
                    if v == t {
                        fixed += 1;
                    } else if v == o {
                        kept += 1;
                    } else {
                        wrong += 1;
                    }
                } else {
                    clean += 1;
                    damaged += usize::from(v != o);
                }
            }
        }
        let bleu = if records.is_empty() {
            [0.0; 4]
        } else {
            let selected: Vec<Vec<String>> =
                records.iter().map(|r| candidates[r.predicted].clone()).collect();
            let mut b = [0.0; 4];
            for (n, slot) in b.iter_mut().enumerate() {
                *slot = bleu_n(&selected, references, n + 1, bp)?;
            }
            b
        };
        Ok(Self {
            samples: records.len(),
            accuracy: frac(correct, records.len()),
            bleu,
            defective_slots: defective,
            revision_accuracy: frac(fixed, defective),
            unrevised: frac(kept, defective),
            wrongly_revised: frac(wrong, defective),
            clean_slots: clean,
            revision_damage: frac(damaged, clean),
            confusion,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub metrics: Metrics,
    pub records: Vec<PredictionRecord>,
}

/// Runs inference on every sample and aggregates the metrics.
pub fn evaluate(
    model: &CarModel,
    samples: &[DialogueSample],
    candidates: &[Vec<String>],
    bp: BrevityPenalty,
) -> Result<Evaluation> {
    let mut records = Vec::with_capacity(samples.len());
    for s in samples {
        let p = model.predict(s)?;
        records.push(PredictionRecord {
            id: s.id,
            predicted: p.answer,
            gold: s.label()?,
            observed: s.observed_conditions.clone(),
            revised: p.conditions,
            truth: s.true_conditions.clone(),
            defective_slots: s.corruption.iter().map(|c| c.slot).collect(),
        });
    }
    let refs = references(samples, candidates)?;
    let metrics = Metrics::from_records(&records, candidates, &refs, bp)?;
    Ok(Evaluation { metrics, records })
}

/// Gold texts, falling back to the gold candidate's text.
pub fn references(samples: &[DialogueSample], candidates: &[Vec<String>]) -> Result<Vec<Vec<String>>> {
    samples
        .iter()
        .map(|s| match &s.gold_text {
            Some(t) => Ok(t.clone()),
            None => {
                let l = s.label()?;
                candidates.get(l).cloned().ok_or(Error::Index {
                    what: "candidates",
                    index: l,
                    size: candidates.len(),
                })
            }
        })
        .collect()
}
