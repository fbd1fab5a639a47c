use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{BackendError, ChatBackend, ChatRequest, ChatRole};
use crate::prompt_builder::SCRIPT_HEADING;
use crate::Label;

/// Labels a script by counting lines that contain `phrase`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MockRule {
    pub phrase: String,
    pub min_count: usize,
    pub positive: Label,
    pub negative: Label,
}

impl Default for MockRule {
    fn default() -> Self {
        Self {
            phrase: "continued to play with the toy".into(),
            min_count: 2,
            positive: Label::ASD,
            negative: Label::TD,
        }
    }
}

/// Deterministic keyword classifier. Only the case script section of the
/// last user message is inspected, so exemplars and discussion blocks do
/// not influence the answer.
#[derive(Debug, Clone)]
pub struct MockBackend {
    rule: MockRule,
}

impl MockBackend {
    pub fn new(rule: MockRule) -> Self {
        Self { rule }
    }

    fn script_section(text: &str) -> &str {
        match text.rfind(SCRIPT_HEADING) {
            Some(at) => {
                let rest = &text[at + SCRIPT_HEADING.len()..];
                match rest.find("\n## ") {
                    Some(end) => &rest[..end],
                    None => rest,
                }
            }
            None => text,
        }
    }

    pub fn classify(&self, script: &str) -> (Label, usize) {
        let n = script.lines().filter(|l| l.contains(&self.rule.phrase)).count();
        let label = if n >= self.rule.min_count {
            self.rule.positive
        } else {
            self.rule.negative
        };
        (label, n)
    }
}

impl ChatBackend for MockBackend {
    fn complete(&self, req: &ChatRequest) -> Result<String, BackendError> {
        let user = req
            .messages
            .iter()
            .rev()
            .find(|m| m.role == ChatRole::User)
            .ok_or_else(|| BackendError::InvalidResponse("request has no user message".into()))?;
        let (label, n) = self.classify(Self::script_section(&user.content));
        Ok(format!(
            "{n} script line(s) match the configured phrase; the threshold is {}.\nJudgment: {label}",
            self.rule.min_count
        ))
    }
}

/// Returns canned answers in call order; the last one repeats.
#[derive(Debug)]
pub struct ScriptedBackend {
    responses: Vec<String>,
    next: AtomicUsize,
}

impl ScriptedBackend {
    pub fn new(responses: Vec<String>) -> Self {
        Self {
            responses,
            next: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.next.load(Ordering::SeqCst)
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(&self, _: &ChatRequest) -> Result<String, BackendError> {
        let i = self.next.fetch_add(1, Ordering::SeqCst);
        self.responses
            .get(i.min(self.responses.len().saturating_sub(1)))
            .cloned()
            .ok_or_else(|| BackendError::Config("scripted backend has no responses".into()))
    }
}

/// One recorded exchange on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureRecord {
    pub backend: String,
    pub request: ChatRequest,
    pub response: String,
}

/// Fixture key: hex SHA-256 of the backend name and the JSON request.
pub fn fixture_key(backend: &str, req: &ChatRequest) -> String {
    let mut h = Sha256::new();
    h.update(backend.as_bytes());
    h.update([0u8]);
    h.update(serde_json::to_vec(req).expect("request serializes"));
    hex::encode(h.finalize())
}

fn fixture_path(dir: &Path, key: &str) -> PathBuf {
    dir.join(format!("{key}.json"))
}

/// Replays recorded exchanges from a directory.
#[derive(Debug, Clone)]
pub struct FixtureBackend {
    name: String,
    dir: PathBuf,
}

impl FixtureBackend {
    pub fn new(name: &str, dir: PathBuf) -> Self {
        Self {
            name: name.to_string(),
            dir,
        }
    }
}

impl ChatBackend for FixtureBackend {
    fn complete(&self, req: &ChatRequest) -> Result<String, BackendError> {
        let key = fixture_key(&self.name, req);
        let path = fixture_path(&self.dir, &key);
        let text = match std::fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(BackendError::FixtureMissing { key })
            }
            Err(e) => return Err(BackendError::Io(format!("{}: {e}", path.display()))),
        };
        let record: FixtureRecord = serde_json::from_str(&text)
            .map_err(|e| BackendError::InvalidResponse(format!("{}: {e}", path.display())))?;
        Ok(record.response)
    }
}

/// Forwards to an inner backend and stores each successful exchange in a
/// form [`FixtureBackend`] can replay.
pub struct RecordingBackend {
    name: String,
    dir: PathBuf,
    inner: Box<dyn ChatBackend>,
}

impl RecordingBackend {
    pub fn new(name: &str, dir: PathBuf, inner: Box<dyn ChatBackend>) -> Self {
        Self {
            name: name.to_string(),
            dir,
            inner,
        }
    }
}

impl ChatBackend for RecordingBackend {
    fn complete(&self, req: &ChatRequest) -> Result<String, BackendError> {
        let response = self.inner.complete(req)?;
        let record = FixtureRecord {
            backend: self.name.clone(),
            request: req.clone(),
            response: response.clone(),
        };
        let io = |e: std::io::Error| BackendError::Io(format!("{}: {e}", self.dir.display()));
        std::fs::create_dir_all(&self.dir).map_err(io)?;
        let path = fixture_path(&self.dir, &fixture_key(&self.name, req));
        let body = serde_json::to_string_pretty(&record).expect("record serializes");
        std::fs::write(path, body + "\n").map_err(io)?;
        Ok(response)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm_gateway::ChatMessage;

    fn req(text: &str) -> ChatRequest {
        ChatRequest {
            messages: vec![ChatMessage::system("s"), ChatMessage::user(text)],
            temperature: 0.7,
            max_tokens: 1000,
        }
    }

    #[test]
    fn mock_ignores_text_outside_script_section() {
        let m = MockBackend::new(MockRule::default());
        let line = "[00:05] The child continued to play with the toy.\n";
        let text = format!(
            "## Example scripts\n{line}{line}{line}\n\n{SCRIPT_HEADING}\n{line}\n## Answer format\n{line}{line}"
        );
        let out = m.complete(&req(&text)).unwrap();
        assert!(out.ends_with("Judgment: TD"), "{out}");
    }

    #[test]
    fn scripted_repeats_last() {
        let s = ScriptedBackend::new(vec!["a".into(), "b".into()]);
        let got: Vec<String> = (0..4).map(|_| s.complete(&req("x")).unwrap()).collect();
        assert_eq!(got, vec!["a", "b", "b", "b"]);
        assert_eq!(s.calls(), 4);
    }

    #[test]
    fn record_then_replay() {
        let dir = tempfile::tempdir().unwrap();
        let rec = RecordingBackend::new(
            "agent-a",
            dir.path().to_path_buf(),
            Box::new(ScriptedBackend::new(vec!["Judgment: ASD".into()])),
        );
        assert_eq!(rec.complete(&req("hello")).unwrap(), "Judgment: ASD");
        let replay = FixtureBackend::new("agent-a", dir.path().to_path_buf());
        assert_eq!(replay.complete(&req("hello")).unwrap(), "Judgment: ASD");
        assert!(matches!(
            replay.complete(&req("other")),
            Err(BackendError::FixtureMissing { .. })
        ));
        let other_name = FixtureBackend::new("agent-b", dir.path().to_path_buf());
        assert!(other_name.complete(&req("hello")).is_err());
    }
}
