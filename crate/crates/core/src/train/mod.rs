//! Optimiser, training loop, metrics and the revise-vs-no-revise ablation.

mod ablation;
mod metrics;
mod optim;
mod pca;
mod trainer;

pub use ablation::{
    run_ablation, run_variant, AblationConfig, AblationReport, SeedRun, VariantRun,
    VariantSummary, ABLATION_FORMAT, REFERENCE_DATASET_SEED, REFERENCE_DATASET_SIZE,
};
pub use metrics::{
    bleu_n, evaluate, ngram_matches, references, BrevityPenalty, Evaluation, Metrics,
    PredictionRecord,
};
pub use optim::{Adam, AdamConfig};
pub use pca::{pca_project, Pca};
pub use trainer::{train, EpochLog, Selection, TrainConfig, TrainOutputs, TrainReport};
