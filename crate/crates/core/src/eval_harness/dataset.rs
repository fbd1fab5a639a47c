use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::behavior_log::{load_log, save_log, BehaviorLog, SessionManifest, SCHEMA_VERSION};
use crate::Label;

pub const INDEX_FILE: &str = "dataset.json";
pub const CASES_DIR: &str = "cases";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseEntry {
    pub case_id: String,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetIndex {
    schema_version: String,
    cases: Vec<CaseEntry>,
}

/// One labeled session.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledCase {
    pub log: BehaviorLog,
    pub manifest: SessionManifest,
    pub label: Label,
}

/// Anything that can hand out labeled cases by id.
pub trait CaseSource: Sync {
    fn entries(&self) -> &[CaseEntry];
    fn load(&self, case_id: &str) -> Result<(BehaviorLog, SessionManifest), EvalError>;
}

fn check_case_id(id: &str) -> Result<(), EvalError> {
    let ok = !id.is_empty()
        && !id.starts_with('.')
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'));
    if ok {
        Ok(())
    } else {
        Err(EvalError::Dataset(format!("invalid case id `{id}`")))
    }
}

fn check_entries(entries: &[CaseEntry]) -> Result<(), EvalError> {
    let mut seen = std::collections::BTreeSet::new();
    for e in entries {
        check_case_id(&e.case_id)?;
        if !seen.insert(e.case_id.as_str()) {
            return Err(EvalError::Dataset(format!("duplicate case id `{}`", e.case_id)));
        }
    }
    Ok(())
}

/// Dataset directory: `dataset.json` plus `cases/<id>.log.jsonl` and
/// `cases/<id>.manifest.json`.
#[derive(Debug, Clone)]
pub struct Dataset {
    root: PathBuf,
    entries: Vec<CaseEntry>,
}

impl Dataset {
    pub fn open(root: &Path) -> Result<Self, EvalError> {
        let path = root.join(INDEX_FILE);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| EvalError::Dataset(format!("{}: {e}", path.display())))?;
        let index: DatasetIndex = serde_json::from_str(&text)
            .map_err(|e| EvalError::Dataset(format!("{}: {e}", path.display())))?;
        if index.schema_version.split('.').next() != Some("1") {
            return Err(EvalError::Dataset(format!(
                "unsupported dataset schema_version `{}`",
                index.schema_version
            )));
        }
        check_entries(&index.cases)?;
        Ok(Self {
            root: root.to_path_buf(),
            entries: index.cases,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn log_path(&self, case_id: &str) -> PathBuf {
        case_paths(&self.root, case_id).0
    }

    pub fn manifest_path(&self, case_id: &str) -> PathBuf {
        case_paths(&self.root, case_id).1
    }
}

fn case_paths(root: &Path, case_id: &str) -> (PathBuf, PathBuf) {
    let dir = root.join(CASES_DIR);
    (
        dir.join(format!("{case_id}.log.jsonl")),
        dir.join(format!("{case_id}.manifest.json")),
    )
}

impl CaseSource for Dataset {
    fn entries(&self) -> &[CaseEntry] {
        &self.entries
    }

    fn load(&self, case_id: &str) -> Result<(BehaviorLog, SessionManifest), EvalError> {
        let (log, manifest) = case_paths(&self.root, case_id);
        Ok(load_log(&log, &manifest)?)
    }
}

/// Cases held in memory.
#[derive(Debug, Clone)]
pub struct MemoryDataset {
    entries: Vec<CaseEntry>,
    cases: Vec<LabeledCase>,
}

impl MemoryDataset {
    pub fn new(cases: Vec<LabeledCase>) -> Result<Self, EvalError> {
        let entries: Vec<CaseEntry> = cases
            .iter()
            .map(|c| CaseEntry {
                case_id: c.manifest.case_id.clone(),
                label: c.label,
            })
            .collect();
        check_entries(&entries)?;
        Ok(Self { entries, cases })
    }

    pub fn cases(&self) -> &[LabeledCase] {
        &self.cases
    }

    /// The same cases in a different order.
    pub fn reordered(&self, order: &[usize]) -> Self {
        let cases: Vec<LabeledCase> = order.iter().map(|&i| self.cases[i].clone()).collect();
        Self::new(cases).expect("same ids")
    }
}

impl CaseSource for MemoryDataset {
    fn entries(&self) -> &[CaseEntry] {
        &self.entries
    }

    fn load(&self, case_id: &str) -> Result<(BehaviorLog, SessionManifest), EvalError> {
        self.cases
            .iter()
            .find(|c| c.manifest.case_id == case_id)
            .map(|c| (c.log.clone(), c.manifest.clone()))
            .ok_or_else(|| EvalError::Dataset(format!("unknown case `{case_id}`")))
    }
}

/// Writes a dataset directory; existing case files are overwritten.
pub fn write_dataset(root: &Path, cases: &[LabeledCase]) -> Result<(), EvalError> {
    let entries: Vec<CaseEntry> = cases
        .iter()
        .map(|c| CaseEntry {
            case_id: c.manifest.case_id.clone(),
            label: c.label,
        })
        .collect();
    check_entries(&entries)?;
    let io = |p: &Path| {
        let p = p.display().to_string();
        move |e: std::io::Error| EvalError::Dataset(format!("{p}: {e}"))
    };
    let cases_dir = root.join(CASES_DIR);
    std::fs::create_dir_all(&cases_dir).map_err(io(&cases_dir))?;
    for c in cases {
        let (log_path, manifest_path) = case_paths(root, &c.manifest.case_id);
        save_log(&c.log, &c.manifest, &log_path, &manifest_path)?;
    }
    let index = DatasetIndex {
        schema_version: SCHEMA_VERSION.to_string(),
        cases: entries,
    };
    let path = root.join(INDEX_FILE);
    let body = serde_json::to_string_pretty(&index).expect("index serializes") + "\n";
    std::fs::write(&path, body).map_err(io(&path))
}
