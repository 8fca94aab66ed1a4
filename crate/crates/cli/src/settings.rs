//! Effective run settings: built-in defaults, overlaid by an optional TOML
//! file, overlaid by command-line flags.

use std::path::{Path, PathBuf};

use car_core::model::ModelConfig;
use car_core::train::{AblationConfig, TrainConfig, REFERENCE_DATASET_SEED, REFERENCE_DATASET_SIZE};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::CliError;

pub const DATA_DIR_ENV: &str = "CAR_DATA_DIR";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    pub data_dir: PathBuf,
    pub gen: GenSettings,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub ablation: AblationSettings,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenSettings {
    pub size: usize,
    pub seed: u64,
    /// Fraction of samples with at least one defective condition; ignored
    /// when both explicit probabilities are set.
    pub defect_rate: f64,
    pub p_wrong: Option<f64>,
    pub p_unknown: Option<f64>,
    /// Generator configuration in JSON; the built-in one when absent.
    pub synth_config: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationSettings {
    pub seeds: Vec<u64>,
    pub pca_components: usize,
}

/// Named starting points for the model section.
pub fn preset(name: &str) -> Result<ModelConfig, CliError> {
    match name {
        "reference" => Ok(AblationConfig::reference().model),
        "micro" => Ok(ModelConfig::micro(0, 0)),
        "desk" => Ok(ModelConfig::desk(0, 0)),
        "paper" => Ok(ModelConfig::paper(0, 0)),
        other => Err(CliError::usage(format!(
            "unknown preset {other:?} (reference, micro, desk, paper)"
        ))),
    }
}

impl Settings {
    pub fn defaults(preset_name: &str) -> Result<Self, CliError> {
        let reference = AblationConfig::reference();
        Ok(Self {
            data_dir: std::env::var_os(DATA_DIR_ENV)
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from("data")),
            gen: GenSettings {
                size: REFERENCE_DATASET_SIZE,
                seed: REFERENCE_DATASET_SEED,
                defect_rate: 0.2,
                p_wrong: None,
                p_unknown: None,
                synth_config: None,
            },
            model: preset(preset_name)?,
            train: reference.train,
            ablation: AblationSettings {
                seeds: reference.seeds,
                pca_components: 2,
            },
        })
    }

    /// Applies `file` then `flags` on top of the preset defaults. `flags`
    /// is a nested JSON object holding only the options given explicitly.
    pub fn resolve(file: Option<&Path>, preset_flag: Option<&str>, flags: Value) -> Result<Self, CliError> {
        let file_value = match file {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
                let table: toml::Table = toml::from_str(&text)
                    .map_err(|e| CliError::usage(format!("{}: {e}", p.display())))?;
                serde_json::to_value(table).map_err(|e| CliError::usage(e.to_string()))?
            }
            None => Value::Object(Map::new()),
        };
        let mut file_value = file_value;
        let file_preset = match file_value.as_object_mut().and_then(|m| m.remove("preset")) {
            Some(Value::String(s)) => Some(s),
            Some(other) => return Err(CliError::usage(format!("preset must be a string, got {other}"))),
            None => None,
        };
        let name = preset_flag.map(str::to_owned).or(file_preset).unwrap_or_else(|| "reference".into());
        let mut merged = serde_json::to_value(Self::defaults(&name)?).expect("settings serialise");
        overlay(&mut merged, file_value);
        overlay(&mut merged, flags);
        serde_json::from_value(merged).map_err(|e| CliError::usage(format!("invalid settings: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).unwrap_or_else(|e| format!("# unprintable settings: {e}"))
    }
}

fn overlay(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => overlay(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn flags_beat_file_beat_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "preset = \"micro\"\n[train]\nepochs = 7\nbatch_size = 4\n[gen]\nsize = 300\n").unwrap();
        let s = Settings::resolve(Some(&path), None, json!({"train": {"epochs": 3}})).unwrap();
        assert_eq!(s.train.epochs, 3);
        assert_eq!(s.train.batch_size, 4);
        assert_eq!(s.gen.size, 300);
        assert_eq!(s.model.dim, 16);
        assert_eq!(s.gen.seed, REFERENCE_DATASET_SEED);
        let s = Settings::resolve(Some(&path), Some("desk"), json!({})).unwrap();
        assert_eq!(s.model.dim, 64);
    }

    #[test]
    fn unknown_keys_are_usage_errors() {
        let e = Settings::resolve(None, None, json!({"train": {"epoch": 3}})).unwrap_err();
        assert_eq!(e.code, 2);
        assert!(Settings::resolve(None, Some("huge"), json!({})).is_err());
    }

    #[test]
    fn printed_settings_parse_back() {
        let s = Settings::resolve(None, None, json!({})).unwrap();
        let back: Settings = toml::from_str(&s.to_toml()).unwrap();
        assert_eq!(back, s);
    }
}
