//! Behavior-log to text screening pipeline for structured child-assessment
//! sessions: parse multi-person behavior logs, detect responses, compile a
//! behavior script, annotate emotional dynamics, and query language-model
//! agents for a diagnostic label.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub mod behavior_log;
pub mod emotion_dynamics;
pub mod ensemble;
pub mod eval_harness;
pub mod llm_gateway;
pub mod pipeline;
pub mod prompt_builder;
pub mod response_parser;
pub mod script_compiler;

/// Diagnostic class. ASD is the positive class throughout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    ASD,
    TD,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::ASD, Label::TD];

    pub fn as_str(self) -> &'static str {
        match self {
            Label::ASD => "ASD",
            Label::TD => "TD",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "ASD" => Ok(Label::ASD),
            "TD" => Ok(Label::TD),
            other => Err(format!("unknown label `{other}`")),
        }
    }
}
