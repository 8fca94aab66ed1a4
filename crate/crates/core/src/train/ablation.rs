use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::metrics::{evaluate, references, Metrics, PredictionRecord};
use super::trainer::{train, EpochLog, TrainConfig, TrainOutputs};
use crate::data::{ConditionSchema, Dataset, DialogueSample};
use crate::error::{Error, Result};
use crate::model::{CarModel, ModelConfig, Variant, Vocab};

pub const ABLATION_FORMAT: &str = "car-ablation/v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationConfig {
    /// Architecture; vocabulary size and candidate count are taken from
    /// the data.
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
}

/// Size and generator seed of the reference synthetic dataset.
pub const REFERENCE_DATASET_SIZE: usize = 5000;
pub const REFERENCE_DATASET_SEED: u64 = 1;

impl AblationConfig {
    /// Desk-scale comparison: one-layer stacks of width 32, a heavier
    /// condition loss than the published 0.2, seeds 1 to 5.
    pub fn reference() -> Self {
        let mut model = ModelConfig::with_dims(32, 2, 1, 1, 16, 32, 0, 0);
        model.classifier_hidden = vec![64];
        model.eta = 0.8;
        let mut train = TrainConfig {
            epochs: 30,
            ..TrainConfig::default()
        };
        train.adam.lr = 2e-3;
        Self {
            model,
            train,
            seeds: (1..=5).collect(),
        }
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> Result<String> {
        let json = serde_json::to_vec(self)?;
        Ok(Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantRun {
    pub variant: Variant,
    pub best_epoch: usize,
    pub epochs: Vec<EpochLog>,
    pub overall: Metrics,
    /// Restricted to test samples with at least one defective condition.
    pub defective: Metrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub car: VariantRun,
    pub ca: VariantRun,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub variant: Variant,
    pub accuracy: f64,
    pub defective_accuracy: f64,
    pub bleu1: f64,
    pub revision_accuracy: f64,
    pub revision_damage: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub format: String,
    pub config_hash: String,
    pub config: AblationConfig,
    pub train_samples: usize,
    pub test_samples: usize,
    pub defective_test_samples: usize,
    pub runs: Vec<SeedRun>,
    /// Means over seeds, full model first.
    pub summary: Vec<VariantSummary>,
}

impl AblationReport {
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }
}

fn subset_metrics(
    records: &[PredictionRecord],
    samples: &[DialogueSample],
    candidates: &[Vec<String>],
    cfg: &TrainConfig,
    keep: impl Fn(&PredictionRecord) -> bool,
) -> Result<Metrics> {
    let refs = references(samples, candidates)?;
    let (recs, refs): (Vec<_>, Vec<_>) = records
        .iter()
        .zip(refs)
        .filter(|(r, _)| keep(r))
        .map(|(r, t)| (r.clone(), t))
        .unzip();
    Metrics::from_records(&recs, candidates, &refs, cfg.brevity_penalty)
}

/// Trains one variant on the training split and scores it on the test
/// split, overall and on the defective subset.
pub fn run_variant(
    data: &Dataset,
    schema: &ConditionSchema,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    variant: Variant,
    seed: u64,
) -> Result<(CarModel, VariantRun)> {
    let vocab = Vocab::build(&data.train);
    let mut cfg = model_cfg.clone();
    cfg.vocab_size = vocab.len();
    cfg.candidate_count = data.candidates.len();
    let mut model = CarModel::new(cfg, variant, schema.clone(), vocab, seed)?;
    let tc = TrainConfig {
        seed,
        ..train_cfg.clone()
    };
    let report = train(
        &mut model,
        &data.train,
        &data.valid,
        &data.candidates,
        &tc,
        &TrainOutputs::default(),
    )?;
    let eval = evaluate(&model, &data.test, &data.candidates, tc.brevity_penalty)?;
    let defective = subset_metrics(&eval.records, &data.test, &data.candidates, &tc, |r| {
        r.is_defective()
    })?;
    let run = VariantRun {
        variant,
        best_epoch: report.best_epoch,
        epochs: report.epochs,
        overall: eval.metrics,
        defective,
    };
    Ok((model, run))
}

/// Trains the full model and the no-reviser ablation on identical data and
/// seeds. `progress` sees each trained model and its scores.
pub fn run_ablation(
    data: &Dataset,
    schema: &ConditionSchema,
    cfg: &AblationConfig,
    mut progress: impl FnMut(u64, &CarModel, &VariantRun),
) -> Result<AblationReport> {
    if cfg.seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one seed".into()));
    }
    if !data.test.iter().any(DialogueSample::is_defective) {
        return Err(Error::TrainingData("test split has no defective samples".into()));
    }
    let mut runs = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let (model, car) = run_variant(data, schema, &cfg.model, &cfg.train, Variant::Car, seed)?;
        progress(seed, &model, &car);
        let (model, ca) = run_variant(data, schema, &cfg.model, &cfg.train, Variant::Ca, seed)?;
        progress(seed, &model, &ca);
        runs.push(SeedRun { seed, car, ca });
    }
    let summarise = |variant: Variant| {
        let picked: Vec<&VariantRun> = runs
            .iter()
            .map(|r| if variant == Variant::Car { &r.car } else { &r.ca })
            .collect();
        let mean = |f: &dyn Fn(&VariantRun) -> f64| {
            picked.iter().map(|r| f(r)).sum::<f64>() / picked.len() as f64
        };
        VariantSummary {
            variant,
            accuracy: mean(&|r| r.overall.accuracy),
            defective_accuracy: mean(&|r| r.defective.accuracy),
            bleu1: mean(&|r| r.overall.bleu[0]),
            revision_accuracy: mean(&|r| r.overall.revision_accuracy),
            revision_damage: mean(&|r| r.overall.revision_damage),
        }
    };
    let summary = vec![summarise(Variant::Car), summarise(Variant::Ca)];
    Ok(AblationReport {
        format: ABLATION_FORMAT.into(),
        config_hash: cfg.hash()?,
        config: cfg.clone(),
        train_samples: data.train.len(),
        test_samples: data.test.len(),
        defective_test_samples: data.test.iter().filter(|s| s.is_defective()).count(),
        runs,
        summary,
    })
}
