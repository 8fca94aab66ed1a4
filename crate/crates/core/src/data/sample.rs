use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::corrupt::CorruptionRecord;
use super::schema::ConditionAssignment;
use crate::error::{Error, Result};

/// One dialogue with its (possibly corrupted) order conditions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DialogueSample {
    pub id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intent: Option<String>,
    pub history: Vec<Vec<String>>,
    pub question: Vec<String>,
    pub observed_conditions: ConditionAssignment,
    #[serde(default)]
    pub true_conditions: Option<ConditionAssignment>,
    #[serde(default)]
    pub gold_label: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_text: Option<Vec<String>>,
    #[serde(default)]
    pub corruption: Vec<CorruptionRecord>,
}

impl DialogueSample {
    pub fn is_defective(&self) -> bool {
        !self.corruption.is_empty()
    }

    pub fn label(&self) -> Result<usize> {
        self.gold_label
            .ok_or_else(|| Error::TrainingData(format!("sample {} has no gold label", self.id)))
    }

    pub fn truth(&self) -> Result<&ConditionAssignment> {
        self.true_conditions
            .as_ref()
            .ok_or_else(|| Error::TrainingData(format!("sample {} has no true conditions", self.id)))
    }
}

pub fn write_jsonl(samples: &[DialogueSample], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for s in samples {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Blank lines are skipped; any other malformed line is reported with its
/// 1-based line number.
pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Vec<DialogueSample>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let s = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(s);
    }
    Ok(out)
}
