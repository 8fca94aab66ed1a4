//! The condition-revising answer selector: conditions encoder, dialogue
//! encoder, conditions reviser, classifier, joint loss and checkpoints.

mod car;
mod checkpoint;
mod components;
mod config;
mod vocab;

pub use car::{CarModel, ForwardPass, LossTerms, Prediction};
pub use checkpoint::{
    load_checkpoint, read_manifest, save_checkpoint, Manifest, ParamEntry, CHECKPOINT_FORMAT,
};
pub use components::{
    argmax, build_input, discretize, Classifier, ConditionsEncoder, ConditionsReviser,
    DialogueEncoder, DialogueInput,
};
pub use config::{ModelConfig, Variant};
pub use vocab::{Vocab, EOU, HIST, QUES, UNK};

#[cfg(test)]
mod tests;
