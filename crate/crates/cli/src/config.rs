//! Run configuration file. Relative paths resolve against the file's
//! directory; backend record directories resolve against the output dir.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use scriptscreen::ensemble::AgentsConfig;
use scriptscreen::eval_harness::TTestMode;
use scriptscreen::llm_gateway::BackendSpec;
use scriptscreen::pipeline::PipelineConfig;
use scriptscreen::Label;

use crate::CliError;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub dataset: Option<PathBuf>,
    /// Directory with `script_templates.toml` and the prompt text files.
    pub templates: Option<PathBuf>,
    /// Default directory for fixture backends.
    pub fixtures: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleMode {
    #[default]
    None,
    Vote,
    Agents,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleConfig {
    pub mode: EnsembleMode,
    /// Backend names taking part; empty means every configured backend.
    pub members: Vec<String>,
    pub decision_maker: Option<String>,
    pub tie_break: Label,
    pub max_rounds: u32,
    pub decision_maker_full_history: bool,
    pub rationale_chars: usize,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        let a = AgentsConfig::default();
        Self {
            mode: EnsembleMode::None,
            members: Vec::new(),
            decision_maker: None,
            tie_break: a.tie_break,
            max_rounds: a.max_rounds,
            decision_maker_full_history: a.decision_maker_full_history,
            rationale_chars: a.rationale_chars,
        }
    }
}

impl EnsembleConfig {
    pub fn agents_config(&self) -> AgentsConfig {
        AgentsConfig {
            max_rounds: self.max_rounds,
            tie_break: self.tie_break,
            decision_maker_full_history: self.decision_maker_full_history,
            rationale_chars: self.rationale_chars,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolKind {
    #[default]
    Loocv,
    Fewshot,
    Sweep,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolConfig {
    pub kind: ProtocolKind,
    pub seed: u64,
    pub shots_per_class: usize,
    pub alphas: Vec<f64>,
    /// Worker threads; 0 uses every CPU.
    pub workers: usize,
    pub ttest: TTestMode,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            kind: ProtocolKind::Loocv,
            seed: 0,
            shots_per_class: 10,
            alphas: vec![0.05, 0.1, 0.15, 0.175, 0.2, 0.25, 0.3],
            workers: 0,
            ttest: TTestMode::Welch,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum DescriberKind {
    #[default]
    Off,
    Stub,
    Fixture,
    Chat,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DescriberConfig {
    pub kind: DescriberKind,
    /// JSON map of `case_id/segment_id` to description, for `fixture`.
    pub fixture: Option<PathBuf>,
    /// Backend name, for `chat`.
    pub backend: Option<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    pub pipeline: PipelineConfig,
    pub backends: Vec<BackendSpec>,
    pub ensemble: EnsembleConfig,
    pub protocol: ProtocolConfig,
    pub describer: DescriberConfig,
}

fn resolve(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        let mut cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        resolve(base, &mut cfg.paths.dataset);
        resolve(base, &mut cfg.paths.templates);
        resolve(base, &mut cfg.paths.fixtures);
        resolve(base, &mut cfg.paths.output);
        resolve(base, &mut cfg.describer.fixture);
        for b in &mut cfg.backends {
            resolve(base, &mut b.fixture_dir);
        }
        Ok(cfg)
    }

    pub fn output_dir(&self) -> PathBuf {
        self.paths.output.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    /// Checks references after flags have been applied.
    pub fn validate(&self) -> Result<(), CliError> {
        let exists = |what: &str, p: &Option<PathBuf>| match p {
            Some(p) if !p.exists() => Err(CliError::Usage(format!(
                "{what} path {} does not exist",
                p.display()
            ))),
            _ => Ok(()),
        };
        exists("dataset", &self.paths.dataset)?;
        exists("templates", &self.paths.templates)?;
        exists("fixtures", &self.paths.fixtures)?;
        exists("describer fixture", &self.describer.fixture)?;
        let mut names = BTreeSet::new();
        for b in &self.backends {
            if !names.insert(b.name.as_str()) {
                return Err(CliError::Usage(format!("backend `{}` declared twice", b.name)));
            }
            exists(&format!("backend `{}` fixture", b.name), &b.fixture_dir)?;
        }
        if self.backends.is_empty() {
            names.insert("mock");
        }
        let known = |n: &String| {
            if names.contains(n.as_str()) {
                Ok(())
            } else {
                Err(CliError::Usage(format!("unknown backend `{n}`")))
            }
        };
        self.ensemble.members.iter().try_for_each(known)?;
        self.ensemble.decision_maker.iter().try_for_each(known)?;
        self.describer.backend.iter().try_for_each(known)?;
        if self.describer.kind == DescriberKind::Fixture && self.describer.fixture.is_none() {
            return Err(CliError::Usage("describer kind `fixture` needs `fixture`".into()));
        }
        if self.describer.kind == DescriberKind::Chat && self.describer.backend.is_none() {
            return Err(CliError::Usage("describer kind `chat` needs `backend`".into()));
        }
        Ok(())
    }
}
