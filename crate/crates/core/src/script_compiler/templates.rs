use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;

use super::TemplateError;
use crate::behavior_log::{Gender, Paradigm, SessionCode};

const DEFAULT_TEMPLATES: &str = include_str!("../../templates/script_templates.toml");

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TemplateFile {
    schema_version: String,
    preamble: String,
    #[serde(default)]
    instruction: Vec<InstructionEntry>,
    #[serde(default)]
    response: Vec<ResponseEntry>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct InstructionEntry {
    code: SessionCode,
    text: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ResponseEntry {
    paradigm: Paradigm,
    index: u8,
    text: String,
}

/// Sentence table keyed by session code (instructions) and by
/// `(paradigm, response index)` (responses).
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateTable {
    preamble: String,
    instructions: BTreeMap<SessionCode, String>,
    responses: BTreeMap<(Paradigm, u8), String>,
}

impl Default for TemplateTable {
    fn default() -> Self {
        Self::from_toml(DEFAULT_TEMPLATES).expect("bundled templates are valid")
    }
}

impl TemplateTable {
    pub fn from_toml(text: &str) -> Result<Self, TemplateError> {
        let file: TemplateFile =
            toml::from_str(text).map_err(|e| TemplateError::Parse(e.to_string()))?;
        if file.schema_version.split('.').next() != Some("1") {
            return Err(TemplateError::Parse(format!(
                "unsupported template schema_version `{}`",
                file.schema_version
            )));
        }
        let mut instructions = BTreeMap::new();
        for entry in file.instruction {
            if entry.text.trim().is_empty() {
                return Err(TemplateError::Parse(format!("empty text for {}", entry.code)));
            }
            if instructions.insert(entry.code, entry.text).is_some() {
                return Err(TemplateError::Parse(format!("duplicate instruction {}", entry.code)));
            }
        }
        let mut responses = BTreeMap::new();
        for entry in file.response {
            let key = (entry.paradigm, entry.index);
            if entry.text.trim().is_empty() {
                return Err(TemplateError::Parse(format!(
                    "empty text for {} response {}",
                    entry.paradigm, entry.index
                )));
            }
            if responses.insert(key, entry.text).is_some() {
                return Err(TemplateError::Parse(format!(
                    "duplicate {} response {}",
                    entry.paradigm, entry.index
                )));
            }
        }
        Ok(Self {
            preamble: file.preamble,
            instructions,
            responses,
        })
    }

    pub fn from_path(path: &Path) -> Result<Self, TemplateError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| TemplateError::Parse(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// The bundled default table as TOML text.
    pub fn default_source() -> &'static str {
        DEFAULT_TEMPLATES
    }

    pub fn instruction(&self, code: SessionCode) -> Result<&str, TemplateError> {
        self.instructions
            .get(&code)
            .map(String::as_str)
            .ok_or(TemplateError::MissingInstruction(code))
    }

    pub fn response(&self, paradigm: Paradigm, index: u8) -> Result<&str, TemplateError> {
        self.responses
            .get(&(paradigm, index))
            .map(String::as_str)
            .ok_or(TemplateError::MissingResponse { paradigm, index })
    }

    pub fn responses(&self) -> impl Iterator<Item = (Paradigm, u8, &str)> {
        self.responses.iter().map(|(&(p, i), t)| (p, i, t.as_str()))
    }

    pub fn instructions(&self) -> impl Iterator<Item = (SessionCode, &str)> {
        self.instructions.iter().map(|(&c, t)| (c, t.as_str()))
    }

    pub fn preamble(&self, age_months: u32, gender: Gender) -> String {
        self.preamble
            .replace("{age}", &age_months.to_string())
            .replace("{gender}", gender.noun())
    }
}
