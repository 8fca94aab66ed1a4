use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::data::DialogueSample;
use crate::error::{Error, Result};

pub const UNK: &str = "[UNK]";
pub const HIST: &str = "[HIST]";
pub const QUES: &str = "[QUES]";
pub const EOU: &str = "<eou>";

/// Token-to-id table. The four markers always take ids 0 to 3.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub const UNK_ID: usize = 0;
    pub const HIST_ID: usize = 1;
    pub const QUES_ID: usize = 2;
    pub const EOU_ID: usize = 3;

    /// Markers followed by every distinct token of `samples`, sorted.
    pub fn build<'a>(samples: impl IntoIterator<Item = &'a DialogueSample>) -> Self {
        let mut words = BTreeSet::new();
        for s in samples {
            words.extend(s.history.iter().flatten().chain(&s.question).map(String::as_str));
        }
        let tokens: Vec<String> = [UNK, HIST, QUES, EOU]
            .into_iter()
            .chain(words.into_iter().filter(|w| ![UNK, HIST, QUES, EOU].contains(w)))
            .map(String::from)
            .collect();
        Self::try_from(tokens).expect("markers are distinct")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(Self::UNK_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

impl TryFrom<Vec<String>> for Vocab {
    type Error = Error;

    fn try_from(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 4 || tokens[..4] != [UNK, HIST, QUES, EOU] {
            return Err(Error::Config("vocabulary must start with the four marker tokens".into()));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Self { tokens, index })
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}
