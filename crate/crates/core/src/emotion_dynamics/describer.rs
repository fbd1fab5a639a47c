use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use super::{EmotionError, EmotionSegment};
use crate::llm_gateway::{Backend, BackendError, ChatMessage, ChatRequest};

const DEFAULT_EMOTION_PROMPT: &str = include_str!("../../templates/emotion_prompt.txt");
const DEFAULT_EMOTION_QUESTION: &str = include_str!("../../templates/emotion_question.txt");

/// What a describer is asked about.
#[derive(Debug, Clone, Copy)]
pub struct DescribeRequest<'a> {
    pub case_id: &'a str,
    pub segment: &'a EmotionSegment,
    /// Path or URI of the session recording, when one exists.
    pub media_ref: Option<&'a str>,
}

/// Produces a textual description of one emotion segment.
pub trait Describer: Send + Sync {
    fn describe(&self, req: &DescribeRequest<'_>) -> Result<String, EmotionError>;
}

/// Deterministic description built from the segment's peak point.
#[derive(Debug, Clone, Copy, Default)]
pub struct StubDescriber;

impl Describer for StubDescriber {
    fn describe(&self, req: &DescribeRequest<'_>) -> Result<String, EmotionError> {
        let (d, t) = req
            .segment
            .peak()
            .map(|p| (p.derivative.abs(), p.time_s))
            .unwrap_or((0.0, req.segment.start_s));
        Ok(format!("Emotional change of magnitude {d:.2} at {t:.1}s."))
    }
}

/// Replays recorded descriptions keyed by `"<case_id>/<segment_id>"`.
#[derive(Debug, Clone, Default)]
pub struct FixtureDescriber {
    entries: BTreeMap<String, String>,
}

impl FixtureDescriber {
    pub fn new(entries: BTreeMap<String, String>) -> Self {
        Self { entries }
    }

    pub fn key(case_id: &str, segment_id: usize) -> String {
        format!("{case_id}/{segment_id}")
    }

    /// Loads a JSON object mapping keys to description strings.
    pub fn from_path(path: &Path) -> Result<Self, EmotionError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            EmotionError::DescriberUnavailable(format!("{}: {e}", path.display()))
        })?;
        let entries = serde_json::from_str(&text).map_err(|e| {
            EmotionError::DescriberUnavailable(format!("{}: {e}", path.display()))
        })?;
        Ok(Self { entries })
    }
}

impl Describer for FixtureDescriber {
    fn describe(&self, req: &DescribeRequest<'_>) -> Result<String, EmotionError> {
        let key = Self::key(req.case_id, req.segment.segment_id);
        self.entries
            .get(&key)
            .cloned()
            .ok_or(EmotionError::MissingDescription(key))
    }
}

/// The emotion prompt (system role) and emotion question sent to an
/// audio-visual model.
#[derive(Debug, Clone, PartialEq)]
pub struct EmotionTemplates {
    pub prompt: String,
    pub question: String,
}

impl Default for EmotionTemplates {
    fn default() -> Self {
        Self {
            prompt: DEFAULT_EMOTION_PROMPT.trim_end().to_string(),
            question: DEFAULT_EMOTION_QUESTION.trim_end().to_string(),
        }
    }
}

impl EmotionTemplates {
    /// Reads `emotion_prompt.txt` and `emotion_question.txt` from `dir`,
    /// falling back to the bundled text for missing files.
    pub fn from_dir(dir: &Path) -> std::io::Result<Self> {
        let mut t = Self::default();
        let read = |name: &str| -> std::io::Result<Option<String>> {
            match std::fs::read_to_string(dir.join(name)) {
                Ok(s) => Ok(Some(s.trim_end().to_string())),
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
                Err(e) => Err(e),
            }
        };
        if let Some(p) = read("emotion_prompt.txt")? {
            t.prompt = p;
        }
        if let Some(q) = read("emotion_question.txt")? {
            t.question = q;
        }
        Ok(t)
    }
}

/// Describes segments through a chat backend that accepts a media
/// reference alongside the question.
pub struct ChatDescriber {
    backend: Arc<Backend>,
    templates: EmotionTemplates,
}

impl ChatDescriber {
    pub fn new(backend: Arc<Backend>, templates: EmotionTemplates) -> Self {
        Self { backend, templates }
    }

    pub fn request(&self, req: &DescribeRequest<'_>) -> ChatRequest {
        let seg = req.segment;
        let mut user = format!(
            "Video segment: {:.2}s to {:.2}s",
            seg.start_s, seg.end_s
        );
        if let Some(media) = req.media_ref {
            user.push_str(&format!(" of {media}"));
        }
        user.push_str(".\n\n");
        user.push_str(&self.templates.question);
        self.backend.request(vec![
            ChatMessage::system(self.templates.prompt.clone()),
            ChatMessage::user(user),
        ])
    }
}

impl Describer for ChatDescriber {
    fn describe(&self, req: &DescribeRequest<'_>) -> Result<String, EmotionError> {
        self.backend
            .complete(&self.request(req))
            .map(|s| s.trim().to_string())
            .map_err(|e: BackendError| EmotionError::DescriberUnavailable(e.to_string()))
    }
}
