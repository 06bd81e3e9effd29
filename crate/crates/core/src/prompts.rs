//! Versioned prompt templates.
//!
//! Each template file holds a system part and a user part separated by a
//! `---- user ----` line. Placeholders are written `{{name}}`. The built-in set
//! is compiled from `prompts/*.txt`; a directory with the same file names can
//! replace it.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

pub const USER_SEPARATOR: &str = "---- user ----";

pub const PROMPT_NAMES: [&str; 7] = [
    "sum",
    "gen_default",
    "gen_grouped",
    "gen_hier_field",
    "gen_hier_final",
    "gen_prompted",
    "rec",
];

const BUILTIN: [(&str, &str); 7] = [
    ("sum", include_str!("../prompts/sum.txt")),
    ("gen_default", include_str!("../prompts/gen_default.txt")),
    ("gen_grouped", include_str!("../prompts/gen_grouped.txt")),
    ("gen_hier_field", include_str!("../prompts/gen_hier_field.txt")),
    ("gen_hier_final", include_str!("../prompts/gen_hier_final.txt")),
    ("gen_prompted", include_str!("../prompts/gen_prompted.txt")),
    ("rec", include_str!("../prompts/rec.txt")),
];

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("missing prompt template `{0}`")]
    Missing(String),
    #[error("cannot read prompt template {path}: {message}")]
    Io { path: String, message: String },
    #[error("template `{template}` references unknown placeholder `{placeholder}`")]
    UnknownPlaceholder {
        template: String,
        placeholder: String,
    },
    #[error("template `{0}` has an unterminated placeholder")]
    Unterminated(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    pub name: String,
    pub system: String,
    pub user: String,
}

impl Template {
    pub fn parse(name: &str, content: &str) -> Self {
        let (system, user) = match content.find(USER_SEPARATOR) {
            Some(pos) => (
                &content[..pos],
                &content[pos + USER_SEPARATOR.len()..],
            ),
            None => (content, ""),
        };
        Self {
            name: name.to_string(),
            system: system.trim().to_string(),
            user: user.trim().to_string(),
        }
    }

    pub fn render_system(&self, vars: &[(&str, &str)]) -> Result<String, PromptError> {
        substitute(&self.name, &self.system, vars)
    }

    pub fn render_user(&self, vars: &[(&str, &str)]) -> Result<String, PromptError> {
        substitute(&self.name, &self.user, vars)
    }
}

/// Single-pass `{{key}}` substitution; substituted values are not rescanned.
pub fn substitute(template: &str, text: &str, vars: &[(&str, &str)]) -> Result<String, PromptError> {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        let end = after
            .find("}}")
            .ok_or_else(|| PromptError::Unterminated(template.to_string()))?;
        let key = after[..end].trim();
        let value = vars
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, v)| *v)
            .ok_or_else(|| PromptError::UnknownPlaceholder {
                template: template.to_string(),
                placeholder: key.to_string(),
            })?;
        out.push_str(value);
        rest = &after[end + 2..];
    }
    out.push_str(rest);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSet {
    templates: BTreeMap<String, Template>,
}

impl Default for PromptSet {
    fn default() -> Self {
        Self::builtin()
    }
}

impl PromptSet {
    pub fn builtin() -> Self {
        let templates = BUILTIN
            .iter()
            .map(|(name, content)| (name.to_string(), Template::parse(name, content)))
            .collect();
        Self { templates }
    }

    /// Loads `<dir>/<name>.txt` for every prompt name.
    pub fn from_dir(dir: &Path) -> Result<Self, PromptError> {
        let mut templates = BTreeMap::new();
        for name in PROMPT_NAMES {
            let path = dir.join(format!("{name}.txt"));
            let content = fs::read_to_string(&path).map_err(|e| PromptError::Io {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
            templates.insert(name.to_string(), Template::parse(name, &content));
        }
        Ok(Self { templates })
    }

    pub fn get(&self, name: &str) -> Result<&Template, PromptError> {
        self.templates
            .get(name)
            .ok_or_else(|| PromptError::Missing(name.to_string()))
    }

    /// Digest over every template; part of the run's configuration hash.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for t in self.templates.values() {
            for part in [&t.name, &t.system, &t.user] {
                h.update((part.len() as u64).to_le_bytes());
                h.update(part.as_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}
