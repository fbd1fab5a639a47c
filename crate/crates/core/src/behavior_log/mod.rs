//! Behavioral-log data contract: per-frame perception records for one
//! session plus the session manifest describing paradigm structure.
//!
//! On disk a log is UTF-8 JSON lines. The first line is a `header` record,
//! followed by one `frame` record per frame and then `speech` records:
//!
//! ```text
//! {"record":"header","schema_version":"1.0","case_id":"c001","fps":25.0}
//! {"record":"frame","frame_index":0,"timestamp_s":0.0,"persons":[...]}
//! {"record":"speech","speaker":"child:c001","start_s":3.1,"end_s":3.6,"text":"hello"}
//! ```
//!
//! The manifest is a single JSON document. Both carry a `schema_version`;
//! only major version 1 is accepted.

mod types;
mod validate;

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use types::*;
pub use validate::{validate_log, validate_manifest, validate_pair};

pub const SCHEMA_VERSION: &str = "1.0";
const SUPPORTED_MAJOR: &str = "1";

/// Maximum allowed deviation between a frame's timestamp and `index / fps`.
pub const TIMESTAMP_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum LogError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("schema error{}: {message}", location(*.line, *.frame))]
    Schema {
        line: Option<usize>,
        frame: Option<u64>,
        message: String,
    },
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error("unsupported schema version `{0}` (supported: {SUPPORTED_MAJOR}.x)")]
    UnsupportedVersion(String),
    #[error("the child never appears in the log")]
    NoChild,
}

fn location(line: Option<usize>, frame: Option<u64>) -> String {
    match (line, frame) {
        (Some(l), Some(f)) => format!(" (line {l}, frame {f})"),
        (None, Some(f)) => format!(" (frame {f})"),
        (Some(l), None) => format!(" (line {l})"),
        (None, None) => String::new(),
    }
}

impl LogError {
    pub(crate) fn schema(frame: Option<u64>, message: impl Into<String>) -> Self {
        LogError::Schema {
            line: None,
            frame,
            message: message.into(),
        }
    }

    fn at_line(line: usize, message: impl Into<String>) -> Self {
        LogError::Schema {
            line: Some(line),
            frame: None,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LogHeader {
    schema_version: String,
    case_id: String,
    fps: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum LogRecord {
    Header(LogHeader),
    Frame(FrameRecord),
    Speech(SpeechSegment),
}

fn check_version(version: &str) -> Result<(), LogError> {
    match version.split('.').next() {
        Some(major) if major == SUPPORTED_MAJOR => Ok(()),
        _ => Err(LogError::UnsupportedVersion(version.to_string())),
    }
}

/// Parses a log from JSON-lines text. Structural checks only; use
/// [`validate_log`] for the full invariant set.
pub fn parse_log(text: &str) -> Result<BehaviorLog, LogError> {
    parse_log_lines(text.lines().map(|l| Ok(l.to_string())))
}

fn parse_log_lines<I>(lines: I) -> Result<BehaviorLog, LogError>
where
    I: Iterator<Item = std::io::Result<String>>,
{
    let mut header: Option<LogHeader> = None;
    let mut frames = Vec::new();
    let mut speech = Vec::new();
    for (i, line) in lines.enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| LogError::at_line(lineno, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: LogRecord =
            serde_json::from_str(&line).map_err(|e| LogError::at_line(lineno, e.to_string()))?;
        match record {
            LogRecord::Header(h) => {
                if header.is_some() || !frames.is_empty() || !speech.is_empty() {
                    return Err(LogError::at_line(lineno, "header must be the first record"));
                }
                check_version(&h.schema_version)?;
                header = Some(h);
            }
            LogRecord::Frame(f) if header.is_some() => frames.push(f),
            LogRecord::Speech(s) if header.is_some() => speech.push(s),
            _ => return Err(LogError::at_line(lineno, "missing header record")),
        }
    }
    let header = header.ok_or_else(|| LogError::at_line(1, "empty log: no header record"))?;
    Ok(BehaviorLog {
        case_id: header.case_id,
        fps: header.fps,
        frames,
        speech,
    })
}

/// Canonical JSON-lines rendering: header, frames in order, then speech.
pub fn log_to_jsonl(log: &BehaviorLog) -> String {
    let mut out = Vec::new();
    write_log(log, &mut out).expect("writing to a Vec cannot fail");
    String::from_utf8(out).expect("serde_json emits UTF-8")
}

#[derive(Serialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum BorrowedRecord<'a> {
    Frame(&'a FrameRecord),
    Speech(&'a SpeechSegment),
}

fn write_log<W: Write>(log: &BehaviorLog, mut w: W) -> std::io::Result<()> {
    let header = LogRecord::Header(LogHeader {
        schema_version: SCHEMA_VERSION.to_string(),
        case_id: log.case_id.clone(),
        fps: log.fps,
    });
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    let records = log
        .frames
        .iter()
        .map(BorrowedRecord::Frame)
        .chain(log.speech.iter().map(BorrowedRecord::Speech));
    for record in records {
        serde_json::to_writer(&mut w, &record)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn parse_manifest(text: &str) -> Result<SessionManifest, LogError> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| LogError::Manifest(e.to_string()))?;
    let version = value
        .get("schema_version")
        .and_then(|v| v.as_str())
        .ok_or_else(|| LogError::Manifest("missing schema_version".into()))?;
    check_version(version)?;
    serde_json::from_value(value).map_err(|e| LogError::Manifest(e.to_string()))
}

pub fn manifest_to_json(manifest: &SessionManifest) -> String {
    let mut s = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    s.push('\n');
    s
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> LogError + '_ {
    move |source| LogError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Loads and fully validates a log and its manifest.
pub fn load_log(
    log_path: &Path,
    manifest_path: &Path,
) -> Result<(BehaviorLog, SessionManifest), LogError> {
    let file = fs::File::open(log_path).map_err(io_err(log_path))?;
    let log = parse_log_lines(BufReader::new(file).lines())?;
    let text = fs::read_to_string(manifest_path).map_err(io_err(manifest_path))?;
    let manifest = parse_manifest(&text)?;
    validate_pair(&log, &manifest)?;
    Ok((log, manifest))
}

pub fn save_log(
    log: &BehaviorLog,
    manifest: &SessionManifest,
    log_path: &Path,
    manifest_path: &Path,
) -> Result<(), LogError> {
    let file = fs::File::create(log_path).map_err(io_err(log_path))?;
    write_log(log, BufWriter::new(file)).map_err(io_err(log_path))?;
    fs::write(manifest_path, manifest_to_json(manifest)).map_err(io_err(manifest_path))
}

/// The child's valence samples `(timestamp_s, valence)` in frame order,
/// skipping frames where the child is absent or no face was scored.
pub fn child_valence_series(log: &BehaviorLog) -> Result<Vec<(f64, f64)>, LogError> {
    let mut seen = false;
    let mut series = Vec::new();
    for frame in &log.frames {
        if let Some(child) = frame.child() {
            seen = true;
            if let Some(v) = child.valence {
                series.push((frame.timestamp_s, v));
            }
        }
    }
    if seen {
        Ok(series)
    } else {
        Err(LogError::NoChild)
    }
}

/// Like [`child_valence_series`] but for arousal; used by group statistics.
pub fn child_arousal_series(log: &BehaviorLog) -> Result<Vec<(f64, f64)>, LogError> {
    let mut seen = false;
    let mut series = Vec::new();
    for frame in &log.frames {
        if let Some(child) = frame.child() {
            seen = true;
            if let Some(a) = child.arousal {
                series.push((frame.timestamp_s, a));
            }
        }
    }
    if seen {
        Ok(series)
    } else {
        Err(LogError::NoChild)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const TWO_FRAME_LOG: &str = r#"{"record":"header","schema_version":"1.0","case_id":"t1","fps":25.0}
{"record":"frame","frame_index":0,"timestamp_s":0.0,"persons":[{"person":"child:kid","present":true,"valence":0.1,"arousal":0.0}]}
{"record":"frame","frame_index":1,"timestamp_s":0.04,"persons":[{"person":"child:kid","present":true,"valence":0.1,"arousal":0.0}]}
"#;

    pub(crate) const MINIMAL_MANIFEST: &str = r#"{
  "schema_version": "1.0",
  "case_id": "t1",
  "child_gender": "male",
  "child_age_months": 24,
  "fps": 25.0,
  "participants": ["child:kid", "doctor:dr"],
  "paradigms": []
}"#;

    #[test]
    fn two_frame_fixture_loads() {
        let log = parse_log(TWO_FRAME_LOG).unwrap();
        let manifest = parse_manifest(MINIMAL_MANIFEST).unwrap();
        validate_pair(&log, &manifest).unwrap();
        assert_eq!(log.frames.len(), 2);
        assert!(log.frames[0].timestamp_s < log.frames[1].timestamp_s);
    }

    #[test]
    fn valence_out_of_range_names_frame() {
        let text = TWO_FRAME_LOG.replacen("\"valence\":0.1,\"arousal\":0.0}]}\n{", "\"valence\":1.7,\"arousal\":0.0}]}\n{", 1);
        let log = parse_log(&text).unwrap();
        let err = validate_log(&log).unwrap_err();
        match err {
            LogError::Schema { frame, ref message, .. } => {
                assert_eq!(frame, Some(0));
                assert!(message.contains("valence"), "{message}");
            }
            other => panic!("unexpected error {other:?}"),
        }
        assert!(err.to_string().contains("frame 0"));
    }

    #[test]
    fn canonical_text_round_trips() {
        let log = parse_log(TWO_FRAME_LOG).unwrap();
        assert_eq!(log_to_jsonl(&log), TWO_FRAME_LOG);
    }

    #[test]
    fn unknown_major_version_rejected() {
        let text = TWO_FRAME_LOG.replace("\"1.0\"", "\"2.0\"");
        assert!(matches!(
            parse_log(&text),
            Err(LogError::UnsupportedVersion(v)) if v == "2.0"
        ));
        let m = MINIMAL_MANIFEST.replace("\"1.0\"", "\"3.1\"");
        assert!(matches!(parse_manifest(&m), Err(LogError::UnsupportedVersion(_))));
    }

    #[test]
    fn frame_before_header_rejected() {
        let mut lines: Vec<&str> = TWO_FRAME_LOG.lines().collect();
        lines.swap(0, 1);
        let err = parse_log(&lines.join("\n")).unwrap_err();
        assert!(matches!(err, LogError::Schema { line: Some(1), .. }));
    }

    #[test]
    fn valence_series_constant() {
        let mut text = String::from(
            "{\"record\":\"header\",\"schema_version\":\"1.0\",\"case_id\":\"t\",\"fps\":5.0}\n",
        );
        for i in 0..5 {
            text.push_str(&format!(
                "{{\"record\":\"frame\",\"frame_index\":{i},\"timestamp_s\":{},\"persons\":[{{\"person\":\"child:k\",\"present\":true,\"valence\":0.1}}]}}\n",
                i as f64 / 5.0
            ));
        }
        let log = parse_log(&text).unwrap();
        let series = child_valence_series(&log).unwrap();
        assert_eq!(series.len(), 5);
        assert!(series.iter().all(|&(_, v)| v == 0.1));
    }

    #[test]
    fn valence_series_skips_absent_frames() {
        let kid = PersonId::new(Role::Child, "k");
        let frames = (0..6)
            .map(|i| {
                let mut s = if i == 2 || i == 3 {
                    PersonState::absent(kid.clone())
                } else {
                    PersonState::present(kid.clone())
                };
                if s.present {
                    s.valence = Some(0.2);
                }
                FrameRecord {
                    frame_index: i,
                    timestamp_s: i as f64 / 10.0,
                    persons: vec![s],
                }
            })
            .collect();
        let log = BehaviorLog {
            case_id: "g".into(),
            fps: 10.0,
            frames,
            speech: vec![],
        };
        let ts: Vec<f64> = child_valence_series(&log).unwrap().into_iter().map(|s| s.0).collect();
        assert_eq!(ts, vec![0.0, 0.1, 0.4, 0.5]);
    }

    #[test]
    fn no_child_is_an_error() {
        let log = BehaviorLog {
            case_id: "n".into(),
            fps: 10.0,
            frames: vec![FrameRecord {
                frame_index: 0,
                timestamp_s: 0.0,
                persons: vec![PersonState::present(PersonId::new(Role::Doctor, "d"))],
            }],
            speech: vec![],
        };
        assert!(matches!(child_valence_series(&log), Err(LogError::NoChild)));
    }

    #[test]
    fn person_id_string_form() {
        let id: PersonId = serde_json::from_str("\"parent:mom\"").unwrap();
        assert_eq!(id, PersonId::new(Role::Parent, "mom"));
        assert!(serde_json::from_str::<PersonId>("\"uncle:bob\"").is_err());
        assert!(serde_json::from_str::<PersonId>("\"child\"").is_err());
    }
}
