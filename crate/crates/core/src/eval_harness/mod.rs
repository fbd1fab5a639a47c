//! Metrics, evaluation protocols, group statistics and the synthetic
//! dataset generator.

mod dataset;
mod metrics;
mod protocol;
mod stats;
mod synth;

use thiserror::Error;

use crate::behavior_log::LogError;
use crate::ensemble::EnsembleError;
use crate::llm_gateway::BackendError;
use crate::pipeline::PipelineError;
use crate::prompt_builder::PromptError;
use crate::Label;

pub use dataset::{
    write_dataset, CaseEntry, CaseSource, Dataset, LabeledCase, MemoryDataset, CASES_DIR,
    INDEX_FILE,
};
pub use metrics::{format_percent, metrics, ConfusionCounts, Metrics, MetricsSummary, Ratio};
pub use protocol::{
    fewshot_run, fewshot_split, group_statistics, loocv_run, sweep_csv, threshold_sweep,
    CasePrediction, CaseRow, Detector, EvalContext, EvalReport, FailedCase, FewShotSplit,
    ProtocolDescriptor, SweepRow, GROUP_VARIABLES,
};
pub use stats::{
    group_ttest, regularized_incomplete_beta, t_test, t_two_sided_p, GroupStats, StatsError,
    TTest, TTestMode,
};
pub use synth::{synth_dataset, SynthSpec};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("dataset: {0}")]
    Dataset(String),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
    #[error("{label} has {have} case(s), the split needs {need}")]
    InsufficientClass { label: Label, have: usize, need: usize },
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("invalid configuration: {0}")]
    Config(String),
}

impl EvalError {
    /// Failures caused by a model backend rather than by the data.
    pub fn is_backend(&self) -> bool {
        matches!(self, EvalError::Backend(_) | EvalError::Ensemble(_))
    }
}
