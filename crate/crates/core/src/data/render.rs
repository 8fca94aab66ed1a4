use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::schema::ConditionAssignment;
use super::synth::{sample_weighted, Synth};

/// Where a condition clue was placed in the rendered text.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClueSpan {
    pub slot: usize,
    pub value: usize,
    /// History utterance index, or `None` for the question.
    pub utterance: Option<usize>,
    pub start: usize,
    pub len: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RenderedDialogue {
    pub history: Vec<Vec<String>>,
    pub question: Vec<String>,
    pub clues: Vec<ClueSpan>,
}

fn pick<'a, T>(xs: &'a [T], rng: &mut impl Rng) -> &'a T {
    xs.choose(rng).expect("validated nonempty list")
}

fn push_words(out: &mut Vec<String>, s: &str) {
    out.extend(s.split_whitespace().map(str::to_lowercase));
}

impl Synth {
    /// Fills a template for `intent`. Each condition the intent reads is
    /// either revealed in the question or mentioned without its value;
    /// other conditions are revealed in one of the last two history
    /// utterances with the configured probability.
    pub fn render_dialogue(
        &self,
        intent: usize,
        truth: &ConditionAssignment,
        rng: &mut impl Rng,
    ) -> RenderedDialogue {
        let it = &self.intents[intent];
        let text = &self.config.text;
        let mut clues = Vec::new();

        let mut clue = |out: &mut Vec<String>, utterance, slot: usize, rng: &mut _| {
            push_words(out, pick(&text.connectors, rng));
            let phrase = pick(self.clue_phrases(slot, truth.get(slot)), rng);
            clues.push(ClueSpan {
                slot,
                value: truth.get(slot),
                utterance,
                start: out.len(),
                len: phrase.len(),
            });
            out.extend(phrase.iter().cloned());
        };

        let turns = sample_weighted(&text.history_turns, rng).expect("validated weights");
        let mut history: Vec<Vec<String>> = (0..turns)
            .map(|_| {
                let mut u = Vec::new();
                push_words(&mut u, pick(&text.openers, rng));
                u
            })
            .collect();
        if turns > 0 {
            let first = turns.saturating_sub(2);
            for slot in (0..self.schema.len()).filter(|s| !it.reads.contains(s)) {
                if rng.random::<f64>() < text.context_clue_rate {
                    let u = rng.random_range(first..turns);
                    clue(&mut history[u], Some(u), slot, rng);
                }
            }
        }

        let mut question = Vec::new();
        push_words(&mut question, pick(&text.greetings, rng));
        question.extend(pick(&it.templates, rng).iter().cloned());
        for &slot in &it.reads {
            if rng.random::<f64>() < text.question_clue_rate {
                clue(&mut question, None, slot, rng);
            } else {
                push_words(&mut question, pick(&text.connectors, rng));
                question.extend(pick(self.vague_phrases(slot), rng).iter().cloned());
            }
        }
        if !text.fillers.is_empty() && rng.random::<f64>() < text.filler_rate {
            push_words(&mut question, pick(&text.fillers, rng));
        }
        push_words(&mut question, pick(&text.closings, rng));

        RenderedDialogue {
            history,
            question,
            clues,
        }
    }
}
