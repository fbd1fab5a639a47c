//! One case from behavior log to script: parse events, compile the script,
//! find emotional dynamic points and, when a describer is supplied, add
//! their descriptions as script lines.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::behavior_log::{child_valence_series, BehaviorLog, LogError, SessionManifest};
use crate::emotion_dynamics::{
    describe_segments, emotion_lines, find_dynamic_points, merge_segments, Describer,
    DynamicPoint, EmotionConfig, EmotionError, EmotionSegment,
};
use crate::prompt_builder::{PromptConfig, PromptError};
use crate::response_parser::{parse_events, ParserConfig, ResponseEvent};
use crate::script_compiler::{compile_script, ScriptConfig, ScriptDocument, TemplateError, TemplateTable};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Log(#[from] LogError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Emotion(#[from] EmotionError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub parser: ParserConfig,
    pub script: ScriptConfig,
    pub emotion: EmotionConfig,
    pub prompt: PromptConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseArtifacts {
    pub events: Vec<ResponseEvent>,
    pub points: Vec<DynamicPoint>,
    pub segments: Vec<EmotionSegment>,
    pub script: ScriptDocument,
}

/// Dynamic points and merged segments of the child's valence. Series with
/// fewer than two scored frames have none.
pub fn emotion_segments(
    log: &BehaviorLog,
    cfg: &EmotionConfig,
) -> Result<(Vec<DynamicPoint>, Vec<EmotionSegment>), PipelineError> {
    cfg.validate()?;
    let series = child_valence_series(log)?;
    if series.len() < 2 {
        return Ok((Vec::new(), Vec::new()));
    }
    let points = find_dynamic_points(&series, cfg)?;
    let segments = merge_segments(&points, cfg, log.duration_s());
    Ok((points, segments))
}

/// Runs the per-case pipeline. Without a describer the script is exactly
/// the compiler output; describer failures are logged and leave the
/// affected segments out of the script.
pub fn compile_case(
    log: &BehaviorLog,
    manifest: &SessionManifest,
    cfg: &PipelineConfig,
    templates: &TemplateTable,
    describer: Option<&dyn Describer>,
    media_ref: Option<&str>,
) -> Result<CaseArtifacts, PipelineError> {
    let events = parse_events(log, manifest, &cfg.parser);
    let mut script = compile_script(&events, manifest, templates, &cfg.script)?;
    let (points, mut segments) = emotion_segments(log, &cfg.emotion)?;
    if let Some(d) = describer {
        let (described, errors) = describe_segments(&manifest.case_id, &segments, media_ref, d);
        if !errors.is_empty() {
            log::warn!(
                "{}: {} emotion segment(s) left undescribed",
                manifest.case_id,
                errors.len()
            );
        }
        segments = described;
        script.insert_lines(emotion_lines(&segments));
    }
    Ok(CaseArtifacts {
        events,
        points,
        segments,
        script,
    })
}
