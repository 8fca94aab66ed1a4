//! Order-condition schema and a synthetic generator of condition-grounded
//! customer-service dialogues with controlled condition corruption.

mod corrupt;
mod defaults;
mod generate;
mod render;
mod sample;
mod schema;
mod synth;

pub use corrupt::{CorruptionKind, CorruptionRecord, CorruptionSpec};
pub use defaults::default_synth_config;
pub use generate::{dataset_stats, sample_rng, Dataset, DatasetStats, SplitRatios};
pub use render::{ClueSpan, RenderedDialogue};
pub use sample::{read_jsonl, write_jsonl, DialogueSample};
pub use schema::{build_default_schema, Condition, ConditionAssignment, ConditionSchema};
pub use synth::{
    tokenize, Candidate, CompiledIntent, Dependency, Intent, Rule, Synth, SynthConfig,
    TextMaterial, SYNTH_FORMAT,
};

impl Synth {
    /// Generator over the built-in configuration.
    pub fn default_synth() -> Self {
        Self::new(default_synth_config()).expect("built-in generator config is valid")
    }
}
