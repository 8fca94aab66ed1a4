use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::corrupt::CorruptionSpec;
use super::sample::DialogueSample;
use super::synth::Synth;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitRatios {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.7,
            valid: 0.1,
            test: 0.2,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let r = [self.train, self.valid, self.test];
        if r.iter().any(|x| !(*x >= 0.0)) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split ratios must be nonnegative and sum to 1, got {r:?}"
            )));
        }
        Ok(())
    }

    /// Split sizes; the test split absorbs rounding.
    pub fn sizes(&self, n: usize) -> [usize; 3] {
        let train = (self.train * n as f64).round() as usize;
        let valid = ((self.valid * n as f64).round() as usize).min(n - train.min(n));
        let train = train.min(n);
        [train, valid, n - train - valid]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub train: Vec<DialogueSample>,
    pub valid: Vec<DialogueSample>,
    pub test: Vec<DialogueSample>,
    pub candidates: Vec<Vec<String>>,
}

impl Dataset {
    pub fn all(&self) -> impl Iterator<Item = &DialogueSample> {
        self.train.iter().chain(&self.valid).chain(&self.test)
    }
}

/// Per-sample generator: ChaCha8 seeded with `seed` on stream `id`, so any
/// sample can be regenerated independently of the others.
pub fn sample_rng(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

impl Synth {
    pub fn generate_sample(
        &self,
        id: u64,
        spec: &CorruptionSpec,
        seed: u64,
    ) -> Result<DialogueSample> {
        let mut rng = sample_rng(seed, id);
        let intent = self.sample_intent(&mut rng);
        let truth = self.sample_truth(&mut rng)?;
        let label = self.gold_answer(intent, &truth)?;
        let text = self.render_dialogue(intent, &truth, &mut rng);
        let (observed, corruption) = self.corrupt(&truth, spec, &mut rng);
        Ok(DialogueSample {
            id,
            intent: Some(self.intents[intent].name.clone()),
            history: text.history,
            question: text.question,
            observed_conditions: observed,
            true_conditions: Some(truth),
            gold_label: Some(label),
            gold_text: Some(super::synth::tokenize(&self.config.candidates[label].text)),
            corruption,
        })
    }

    /// `size` samples split contiguously into train/valid/test.
    pub fn generate_dataset(
        &self,
        size: usize,
        ratios: SplitRatios,
        spec: &CorruptionSpec,
        seed: u64,
    ) -> Result<Dataset> {
        ratios.validate()?;
        spec.validate()?;
        if size < self.candidate_count() {
            return Err(Error::Config(format!(
                "dataset size {size} is smaller than the candidate count {}",
                self.candidate_count()
            )));
        }
        let mut all = (0..size as u64)
            .map(|id| self.generate_sample(id, spec, seed))
            .collect::<Result<Vec<_>>>()?;
        let [n_train, n_valid, _] = ratios.sizes(size);
        let test = all.split_off(n_train + n_valid);
        let valid = all.split_off(n_train);
        Ok(Dataset {
            train: all,
            valid,
            test,
            candidates: self.candidate_texts(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub samples: usize,
    pub defective_rate: f64,
    pub mean_question_tokens: f64,
    pub mean_history_utterances: f64,
    pub mean_history_tokens: f64,
    pub vocabulary_size: usize,
    pub label_counts: Vec<usize>,
}

/// Corpus statistics; the vocabulary includes candidate answer texts.
pub fn dataset_stats<'a>(
    samples: impl IntoIterator<Item = &'a DialogueSample>,
    candidates: &[Vec<String>],
) -> DatasetStats {
    let mut vocab: BTreeSet<&str> = candidates.iter().flatten().map(String::as_str).collect();
    let mut label_counts = vec![0; candidates.len()];
    let (mut n, mut defective, mut q, mut hu, mut ht) = (0usize, 0usize, 0usize, 0usize, 0usize);
    for s in samples {
        n += 1;
        defective += usize::from(s.is_defective());
        q += s.question.len();
        hu += s.history.len();
        ht += s.history.iter().map(Vec::len).sum::<usize>();
        vocab.extend(s.question.iter().chain(s.history.iter().flatten()).map(String::as_str));
        if let Some(l) = s.gold_label.filter(|l| *l < label_counts.len()) {
            label_counts[l] += 1;
        }
    }
    let mean = |x: usize| if n == 0 { 0.0 } else { x as f64 / n as f64 };
    DatasetStats {
        samples: n,
        defective_rate: mean(defective),
        mean_question_tokens: mean(q),
        mean_history_utterances: mean(hu),
        mean_history_tokens: mean(ht),
        vocabulary_size: vocab.len(),
        label_counts,
    }
}
