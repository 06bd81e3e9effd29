//! Run manifest: per-stage status and artifact counts, persisted atomically.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageStatus {
    Pending,
    Running,
    Complete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub status: StageStatus,
    /// Artifacts of this stage on disk.
    pub count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completed_at: Option<u64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl Default for StageRecord {
    fn default() -> Self {
        Self {
            status: StageStatus::Pending,
            count: 0,
            completed_at: None,
            notes: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub config_hash: String,
    /// Keys are `ingest`, `summarise`, `generate.<method>`,
    /// `reconstruct.<method>`, `score` and `analyse`.
    pub stages: BTreeMap<String, StageRecord>,
    pub created_at: u64,
    pub updated_at: u64,
}

pub fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.{}.tmp", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

/// Deletes temp files left behind by an interrupted [`write_atomic`].
pub fn remove_stale_temps(dir: &Path) -> std::io::Result<usize> {
    let mut removed = 0;
    let Ok(entries) = fs::read_dir(dir) else {
        return Ok(0);
    };
    for entry in entries {
        let entry = entry?;
        let path = entry.path();
        let name = entry.file_name().to_string_lossy().into_owned();
        if path.is_dir() {
            removed += remove_stale_temps(&path)?;
        } else if name.starts_with('.') && name.ends_with(".tmp") {
            fs::remove_file(&path)?;
            removed += 1;
        }
    }
    Ok(removed)
}

impl RunManifest {
    pub fn new(run_id: &str, config_hash: &str, stage_keys: &[String]) -> Self {
        let t = now();
        Self {
            run_id: run_id.to_string(),
            config_hash: config_hash.to_string(),
            stages: stage_keys
                .iter()
                .map(|k| (k.clone(), StageRecord::default()))
                .collect(),
            created_at: t,
            updated_at: t,
        }
    }

    pub fn load(run_dir: &Path) -> Result<Option<Self>, CliError> {
        let path = run_dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(&path)
            .map_err(|e| CliError::Refused(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map(Some)
            .map_err(|e| CliError::Refused(format!("corrupt manifest {}: {e}", path.display())))
    }

    pub fn save(&mut self, run_dir: &Path) -> Result<(), CliError> {
        self.updated_at = now();
        let json = serde_json::to_vec_pretty(self).expect("manifest serializes");
        write_atomic(&run_dir.join(MANIFEST_FILE), &json)
            .map_err(|e| CliError::stage("manifest", e))
    }

    pub fn record(&self, key: &str) -> StageRecord {
        self.stages.get(key).cloned().unwrap_or_default()
    }

    pub fn is_complete(&self, key: &str) -> bool {
        self.stages
            .get(key)
            .is_some_and(|s| s.status == StageStatus::Complete)
    }

    /// Marks a stage as running. A completed stage stays complete.
    pub fn start(&mut self, key: &str) {
        let rec = self.stages.entry(key.to_string()).or_default();
        if rec.status < StageStatus::Running {
            rec.status = StageStatus::Running;
        }
    }

    pub fn set_count(&mut self, key: &str, count: usize) {
        self.stages.entry(key.to_string()).or_default().count = count;
    }

    pub fn complete(&mut self, key: &str, count: usize, notes: Vec<String>) {
        let rec = self.stages.entry(key.to_string()).or_default();
        rec.status = StageStatus::Complete;
        rec.count = count;
        rec.completed_at = Some(now());
        rec.notes = notes;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stages_only_advance() {
        let mut m = RunManifest::new("r", "h", &["a".to_string()]);
        m.start("a");
        assert_eq!(m.record("a").status, StageStatus::Running);
        m.complete("a", 3, vec![]);
        m.start("a");
        assert!(m.is_complete("a"));
        assert_eq!(m.record("a").count, 3);
    }

    #[test]
    fn save_and_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = RunManifest::new("r", "h", &["x".to_string(), "y".to_string()]);
        m.complete("x", 2, vec!["note".into()]);
        m.save(dir.path()).unwrap();
        let back = RunManifest::load(dir.path()).unwrap().unwrap();
        assert_eq!(back, m);
        let leftovers: Vec<_> = fs::read_dir(dir.path())
            .unwrap()
            .filter_map(|e| e.ok())
            .filter(|e| e.file_name().to_string_lossy().ends_with(".tmp"))
            .collect();
        assert!(leftovers.is_empty());
    }

    #[test]
    fn stale_temps_are_swept() {
        let dir = tempfile::tempdir().unwrap();
        let nested = dir.path().join("a/b");
        fs::create_dir_all(&nested).unwrap();
        fs::write(nested.join(".3.json.42.tmp"), "{").unwrap();
        fs::write(nested.join("3.json"), "{}").unwrap();
        assert_eq!(remove_stale_temps(dir.path()).unwrap(), 1);
        assert!(nested.join("3.json").exists());
    }
}
