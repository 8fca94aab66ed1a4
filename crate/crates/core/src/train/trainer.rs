use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{evaluate, BrevityPenalty};
use super::optim::{Adam, AdamConfig};
use crate::autograd::Tensor;
use crate::data::DialogueSample;
use crate::error::{Error, Result};
use crate::model::{save_checkpoint, CarModel};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Selection {
    #[default]
    Accuracy,
    Bleu,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    pub select_by: Selection,
    pub brevity_penalty: BrevityPenalty,
    /// Stop once training accuracy of an epoch's running predictions and
    /// the validation accuracy both reach 1.
    #[serde(default)]
    pub stop_when_perfect: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            adam: AdamConfig::default(),
            seed: 1,
            select_by: Selection::Accuracy,
            brevity_penalty: BrevityPenalty::Ratio,
            stop_when_perfect: false,
        }
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    /// Accuracy of the predictions made while training through the epoch.
    pub train_accuracy: f64,
    pub val_accuracy: f64,
    pub val_bleu1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_score: f64,
}

/// Where training writes its artefacts.
#[derive(Clone, Debug, Default)]
pub struct TrainOutputs {
    pub log: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

/// Mean joint loss and parameter update over one pass of `batch`.
fn train_batch(model: &mut CarModel, batch: &[&DialogueSample], opt: &mut Adam) -> Result<(f64, usize)> {
    let mut loss_sum = 0.0;
    let mut correct = 0;
    model.params.zero_grad();
    for s in batch {
        let grads = {
            let mut g = model.graph();
            let diverged = |loss| Error::Divergence {
                epoch: 0,
                step: opt.step as usize + 1,
                loss,
            };
            let terms = match model.loss(&mut g, s) {
                Err(Error::Numeric(_)) => return Err(diverged(f64::NAN)),
                r => r?,
            };
            let loss = g.scalar(terms.total);
            if !loss.is_finite() {
                return Err(diverged(loss));
            }
            loss_sum += loss;
            correct += usize::from(terms.pass.answer() == s.label()?);
            g.backward(terms.total)?
        };
        model.params.accumulate(&grads)?;
    }
    opt.step(&mut model.params, 1.0 / batch.len() as f64)?;
    Ok((loss_sum, correct))
}

fn snapshot(model: &CarModel) -> Vec<Tensor> {
    model.params.iter().map(|(_, _, t)| t.clone()).collect()
}

/// Minimises the mean joint loss with Adam over shuffled mini-batches,
/// evaluates on `valid` after every epoch and leaves `model` holding the
/// best-scoring parameters.
pub fn train(
    model: &mut CarModel,
    train: &[DialogueSample],
    valid: &[DialogueSample],
    candidates: &[Vec<String>],
    cfg: &TrainConfig,
    outputs: &TrainOutputs,
) -> Result<TrainReport> {
    if train.is_empty() {
        return Err(Error::TrainingData("training set is empty".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let mut log = match &outputs.log {
        Some(p) => Some(BufWriter::new(File::create(p).map_err(|e| Error::io(p, e))?)),
        None => None,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Adam::new(cfg.adam, &model.params);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut report = TrainReport {
        epochs: Vec::new(),
        best_epoch: 0,
        best_score: f64::NEG_INFINITY,
    };
    let mut best = snapshot(model);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&DialogueSample> = chunk.iter().map(|&i| &train[i]).collect();
            let (l, c) = train_batch(model, &batch, &mut opt).map_err(|e| match e {
                Error::Divergence { step, loss, .. } => Error::Divergence { epoch, step, loss },
                other => other,
            })?;
            loss_sum += l;
            correct += c;
        }
        let (val_accuracy, val_bleu1) = if valid.is_empty() {
            (0.0, 0.0)
        } else {
            let m = evaluate(model, valid, candidates, cfg.brevity_penalty)?.metrics;
            (m.accuracy, m.bleu[0])
        };
        let entry = EpochLog {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            train_accuracy: correct as f64 / train.len() as f64,
            val_accuracy,
            val_bleu1,
        };
        if let (Some(w), Some(p)) = (log.as_mut(), outputs.log.as_ref()) {
            serde_json::to_writer(&mut *w, &entry)?;
            w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| Error::io(p, e))?;
        }
        let score = match cfg.select_by {
            Selection::Accuracy => val_accuracy,
            Selection::Bleu => val_bleu1,
        };
        if score > report.best_score {
            report.best_score = score;
            report.best_epoch = epoch;
            best = snapshot(model);
        }
        let perfect = entry.train_accuracy == 1.0 && (valid.is_empty() || val_accuracy == 1.0);
        report.epochs.push(entry);
        if cfg.stop_when_perfect && perfect {
            break;
        }
    }

    for ((_, t), b) in model.params.iter_mut().zip(best) {
        *t = b;
    }
    if let Some(dir) = &outputs.checkpoint {
        save_checkpoint(model, dir)?;
    }
    Ok(report)
}
