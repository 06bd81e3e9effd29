//! Run configuration read from TOML.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use dbb_core::corpus::DEFAULT_CAP;
use dbb_core::{BackendConfig, EmbeddingConfig, Method, PromptSet};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSection {
    pub path: PathBuf,
    #[serde(default = "default_cap")]
    pub cap: usize,
    /// Keep a seeded random sample of this many debates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample: Option<usize>,
    #[serde(default)]
    pub sample_seed: u64,
}

fn default_cap() -> usize {
    DEFAULT_CAP
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Roles {
    pub summariser: String,
    pub generator: String,
    pub reconstructor: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegressionSection {
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    /// Level used to count significant terms in logs.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_party: Option<String>,
}

fn default_max_iter() -> usize {
    500
}
fn default_alpha() -> f64 {
    0.05
}

impl Default for RegressionSection {
    fn default() -> Self {
        Self {
            max_iter: default_max_iter(),
            alpha: default_alpha(),
            reference_party: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Limits {
    /// Worker threads for per-item stages.
    #[serde(default = "default_workers")]
    pub workers: usize,
}

fn default_workers() -> usize {
    4
}

impl Default for Limits {
    fn default() -> Self {
        Self {
            workers: default_workers(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub run_id: String,
    #[serde(default = "all_methods")]
    pub methods: Vec<Method>,
    /// Directory of prompt templates replacing the built-in set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompts_dir: Option<PathBuf>,
    /// Shared LLM response cache. Defaults to `<runs_dir>/cache`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
    pub corpus: CorpusSection,
    pub backends: BTreeMap<String, BackendConfig>,
    pub roles: Roles,
    #[serde(default)]
    pub embedding: EmbeddingConfig,
    #[serde(default)]
    pub regression: RegressionSection,
    #[serde(default)]
    pub limits: Limits,
}

fn all_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}

fn config_error(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| config_error(format!("invalid config: {e}")))
    }

    /// Reads and validates a config file; relative paths are resolved against
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| config_error(format!("cannot read {}: {e}", path.display())))?;
        let mut config = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base);
        config.validate()?;
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.corpus.path);
        if let Some(p) = self.prompts_dir.as_mut() {
            fix(p);
        }
        if let Some(p) = self.cache_dir.as_mut() {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.run_id.is_empty()
            || !self
                .run_id
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
            || self.run_id.starts_with('.')
        {
            return Err(config_error(format!(
                "run_id `{}` must be non-empty and use only letters, digits, '-', '_' or '.'",
                self.run_id
            )));
        }
        if self.methods.is_empty() {
            return Err(config_error("methods must not be empty"));
        }
        let mut seen = self.methods.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.methods.len() {
            return Err(config_error("methods must not repeat"));
        }
        if self.corpus.cap == 0 {
            return Err(config_error("corpus.cap must be at least 1"));
        }
        if self.corpus.sample == Some(0) {
            return Err(config_error("corpus.sample must be at least 1"));
        }
        for (name, backend) in &self.backends {
            backend.validate(name).map_err(|e| config_error(e.to_string()))?;
        }
        for (role, name) in [
            ("summariser", &self.roles.summariser),
            ("generator", &self.roles.generator),
            ("reconstructor", &self.roles.reconstructor),
        ] {
            if !self.backends.contains_key(name) {
                return Err(config_error(format!(
                    "roles.{role} names unknown backend `{name}`"
                )));
            }
        }
        let generator = &self.backends[&self.roles.generator];
        let reconstructor = &self.backends[&self.roles.reconstructor];
        // the evaluating model must not also have written the summaries
        if generator.is_live()
            && reconstructor.is_live()
            && (self.roles.generator == self.roles.reconstructor
                || (generator.base_url == reconstructor.base_url
                    && generator.model_name == reconstructor.model_name))
        {
            return Err(config_error(
                "the reconstructor must be a different model from the generator",
            ));
        }
        self.embedding
            .validate()
            .map_err(|e| config_error(format!("embedding: {e}")))?;
        if self.regression.max_iter == 0 {
            return Err(config_error("regression.max_iter must be at least 1"));
        }
        if !(self.regression.alpha > 0.0 && self.regression.alpha < 1.0) {
            return Err(config_error("regression.alpha must lie in (0, 1)"));
        }
        if self.limits.workers == 0 {
            return Err(config_error("limits.workers must be at least 1"));
        }
        Ok(())
    }

    pub fn prompts(&self) -> Result<PromptSet, CliError> {
        match &self.prompts_dir {
            Some(dir) => PromptSet::from_dir(dir).map_err(|e| config_error(e.to_string())),
            None => Ok(PromptSet::builtin()),
        }
    }

    /// Model name of the generator; the `model` column of every score row.
    pub fn generator_model(&self) -> &str {
        &self.backends[&self.roles.generator].model_name
    }

    /// Digest of everything that determines the run's artifacts: backends,
    /// roles, methods, prompts, corpus content, embedding and regression
    /// settings. Worker counts and paths are excluded.
    pub fn hash(&self, prompts: &PromptSet, corpus_bytes: &[u8]) -> String {
        #[derive(Serialize)]
        struct Hashed<'a> {
            methods: &'a [Method],
            cap: usize,
            sample: Option<usize>,
            sample_seed: u64,
            backends: &'a BTreeMap<String, BackendConfig>,
            roles: &'a Roles,
            embedding: &'a EmbeddingConfig,
            regression: &'a RegressionSection,
            prompts: String,
            corpus: String,
        }
        let hashed = Hashed {
            methods: &self.methods,
            cap: self.corpus.cap,
            sample: self.corpus.sample,
            sample_seed: self.corpus.sample_seed,
            backends: &self.backends,
            roles: &self.roles,
            embedding: &self.embedding,
            regression: &self.regression,
            prompts: prompts.hash(),
            corpus: hex::encode(Sha256::digest(corpus_bytes)),
        };
        let json = serde_json::to_vec(&hashed).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }

    /// Methods in canonical order.
    pub fn ordered_methods(&self) -> Vec<Method> {
        Method::ALL
            .into_iter()
            .filter(|m| self.methods.contains(m))
            .collect()
    }
}
