//! Paths inside a run directory.

use std::fs;
use std::path::{Path, PathBuf};

use dbb_core::Method;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::CliError;
use crate::manifest::write_atomic;

/// Maps an identifier to a file-name-safe component.
pub fn file_safe(id: &str) -> String {
    let s: String = id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') {
                c
            } else {
                '_'
            }
        })
        .collect();
    if s.is_empty() || s.starts_with('.') {
        format!("_{s}")
    } else {
        s
    }
}

#[derive(Debug, Clone)]
pub struct RunLayout {
    pub root: PathBuf,
}

impl RunLayout {
    pub fn new(runs_dir: &Path, run_id: &str) -> Self {
        Self {
            root: runs_dir.join(run_id),
        }
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.json")
    }

    pub fn corpus(&self) -> PathBuf {
        self.root.join("corpus.jsonl")
    }

    pub fn interventions_dir(&self) -> PathBuf {
        self.root.join("interventions")
    }

    pub fn intervention(&self, debate_id: &str, k: u32) -> PathBuf {
        self.interventions_dir()
            .join(file_safe(debate_id))
            .join(format!("{k}.json"))
    }

    pub fn summaries_dir(&self, method: Method) -> PathBuf {
        self.root.join("summaries").join(method.as_str())
    }

    pub fn summary(&self, method: Method, debate_id: &str) -> PathBuf {
        self.summaries_dir(method)
            .join(format!("{}.json", file_safe(debate_id)))
    }

    pub fn reconstructions_dir(&self, method: Method) -> PathBuf {
        self.root.join("reconstructions").join(method.as_str())
    }

    pub fn reconstruction(&self, method: Method, debate_id: &str, k: u32) -> PathBuf {
        self.reconstructions_dir(method)
            .join(file_safe(debate_id))
            .join(format!("{k}.json"))
    }

    pub fn scores(&self) -> PathBuf {
        self.root.join("scores.csv")
    }

    pub fn analysis_dir(&self) -> PathBuf {
        self.root.join("analysis")
    }

    pub fn model_analysis_dir(&self, model: &str) -> PathBuf {
        self.analysis_dir().join(file_safe(model))
    }

    pub fn report_dir(&self) -> PathBuf {
        self.root.join("report")
    }

    pub fn validation_dir(&self) -> PathBuf {
        self.root.join("validation")
    }
}

/// Number of `*.json` files below `dir`, recursively.
pub fn count_json(dir: &Path) -> usize {
    let Ok(entries) = fs::read_dir(dir) else {
        return 0;
    };
    entries
        .filter_map(|e| e.ok())
        .map(|e| {
            let path = e.path();
            if path.is_dir() {
                count_json(&path)
            } else if path.extension().is_some_and(|x| x == "json")
                && !e.file_name().to_string_lossy().starts_with('.')
            {
                1
            } else {
                0
            }
        })
        .sum()
}

pub fn json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("artifact serializes");
    bytes.push(b'\n');
    bytes
}

pub fn write_json<T: Serialize>(path: &Path, value: &T, stage: &str) -> Result<(), CliError> {
    write_atomic(path, &json_bytes(value))
        .map_err(|e| CliError::stage(stage, format!("{}: {e}", path.display())))
}

pub fn read_json<T: DeserializeOwned>(path: &Path, stage: &str) -> Result<T, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::stage(stage, format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::stage(stage, format!("{}: {e}", path.display())))
}
