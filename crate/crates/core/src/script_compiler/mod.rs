//! Turns instructions and parsed response events into a timestamped
//! behavior script built from fixed template sentences.
//!
//! Each instruction opens a response window. The events inside it are
//! matched against per-paradigm response rules. RN, SS and RJA describe one
//! exclusive outcome per instruction; IG, IJA and SA describe co-occurring
//! behaviors and may emit several lines.

mod templates;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use templates::TemplateTable;

use crate::behavior_log::{
    InstructionEvent, Paradigm, ParadigmSegment, Role, SessionCode, SessionManifest,
};
use crate::response_parser::{EventKind, PointPrecision, ResponseEvent};

#[derive(Debug, Error, PartialEq)]
pub enum TemplateError {
    #[error("no template for instruction {0}")]
    MissingInstruction(SessionCode),
    #[error("no template for {paradigm} response {index}")]
    MissingResponse { paradigm: Paradigm, index: u8 },
    #[error("invalid template table: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScriptConfig {
    /// Response window after each instruction, in seconds.
    pub window_s: f64,
    /// Per-paradigm overrides of `window_s`.
    pub window_overrides: BTreeMap<Paradigm, f64>,
    /// Cut a window short at the next instruction of the same paradigm.
    pub clip_at_next_instruction: bool,
    /// Upper bound on response lines per instruction in multi-line paradigms.
    pub max_response_lines: usize,
    /// A look at the target at least this long counts as sustained.
    pub sustained_look_s: f64,
}

impl Default for ScriptConfig {
    fn default() -> Self {
        Self {
            window_s: 5.0,
            window_overrides: BTreeMap::from([(Paradigm::SA, 20.0)]),
            clip_at_next_instruction: true,
            max_response_lines: 3,
            sustained_look_s: 2.0,
        }
    }
}

impl ScriptConfig {
    pub fn window_for(&self, paradigm: Paradigm) -> f64 {
        self.window_overrides
            .get(&paradigm)
            .copied()
            .unwrap_or(self.window_s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "origin", rename_all = "snake_case")]
pub enum LineOrigin {
    Instruction { session_code: SessionCode },
    Response { paradigm: Paradigm, response_index: u8 },
    Emotion { segment_id: usize },
    Preamble,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptLine {
    pub timestamp_s: f64,
    pub text: String,
    #[serde(flatten)]
    pub origin: LineOrigin,
}

/// The textual artifact handed to language models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptDocument {
    pub case_id: String,
    pub preamble: String,
    pub lines: Vec<ScriptLine>,
}

/// `[mm:ss]`, seconds floored.
pub fn format_timestamp(t: f64) -> String {
    let total = t.max(0.0).floor() as u64;
    format!("[{:02}:{:02}]", total / 60, total % 60)
}

impl ScriptDocument {
    pub fn render(&self) -> String {
        let mut out = String::with_capacity(64 * (self.lines.len() + 1));
        out.push_str(&self.preamble);
        out.push('\n');
        for line in &self.lines {
            let _ = writeln!(out, "{} {}", format_timestamp(line.timestamp_s), line.text);
        }
        out
    }

    /// Merges extra lines in, keeping timestamps non-decreasing. Lines with
    /// equal timestamps keep their relative order, existing lines first.
    pub fn insert_lines(&mut self, extra: impl IntoIterator<Item = ScriptLine>) {
        self.lines.extend(extra);
        self.lines
            .sort_by(|a, b| a.timestamp_s.total_cmp(&b.timestamp_s));
    }

    pub fn without_emotion_lines(&self) -> ScriptDocument {
        ScriptDocument {
            case_id: self.case_id.clone(),
            preamble: self.preamble.clone(),
            lines: self
                .lines
                .iter()
                .filter(|l| !matches!(l.origin, LineOrigin::Emotion { .. }))
                .cloned()
                .collect(),
        }
    }

    pub fn count_containing(&self, phrase: &str) -> usize {
        self.lines.iter().filter(|l| l.text.contains(phrase)).count()
    }
}

/// A behavioral condition checked against the events of one window.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Cond {
    /// Look at the instruction's target (or the paradigm's default target).
    LookTarget,
    /// Look at the target for at least `sustained_look_s`.
    SustainedLookTarget,
    /// Look at a specific named ROI.
    LookRoi(&'static str),
    /// Look at some ROI other than the target.
    LookElsewhere,
    PointTarget(Option<PointPrecision>),
    Smile,
    ChildSpeech,
    Leave(Role),
    Chase,
}

#[derive(Debug, Clone, Copy)]
enum Rule {
    /// Fires when all `requires` hold and no `forbids` holds; anchored at
    /// the event that completes the requirements.
    Event {
        index: u8,
        requires: &'static [Cond],
        forbids: &'static [Cond],
    },
    /// Emitted at window end when no event rule fired.
    Fallback(u8),
    /// Emitted at window end after at least one event rule fired.
    Closing(u8),
}

const fn ev(index: u8, requires: &'static [Cond], forbids: &'static [Cond]) -> Rule {
    Rule::Event {
        index,
        requires,
        forbids,
    }
}

use Cond::*;

// RJA response 3 ("looked up at the doctor's hand") and IJA response 3
// (same wording as response 2) have no detectable event and stay unbound.
const RN_RULES: &[Rule] = &[
    ev(1, &[LookTarget, ChildSpeech], &[]),
    ev(2, &[LookTarget], &[]),
    Rule::Fallback(3),
];
const SS_RULES: &[Rule] = &[
    ev(1, &[LookTarget], &[]),
    ev(2, &[LookTarget, Smile], &[]),
    ev(3, &[Smile], &[LookTarget]),
    ev(5, &[LookTarget], &[Smile]),
    Rule::Fallback(4),
];
const IG_RULES: &[Rule] = &[
    ev(1, &[LookTarget], &[]),
    ev(3, &[PointTarget(Some(PointPrecision::Precise))], &[]),
    ev(4, &[PointTarget(Some(PointPrecision::Rough))], &[]),
    ev(5, &[LookRoi("doctor")], &[]),
    ev(6, &[SustainedLookTarget], &[]),
    Rule::Fallback(2),
    Rule::Closing(7),
];
const RJA_RULES: &[Rule] = &[
    ev(1, &[LookTarget], &[]),
    ev(2, &[LookElsewhere], &[LookTarget]),
    Rule::Fallback(4),
];
const IJA_RULES: &[Rule] = &[
    ev(1, &[LookTarget], &[]),
    ev(2, &[LookRoi("doctor")], &[]),
    ev(4, &[SustainedLookTarget], &[]),
    ev(5, &[PointTarget(None)], &[]),
    Rule::Fallback(6),
];
const SA_RULES: &[Rule] = &[
    ev(1, &[Chase], &[]),
    ev(2, &[LookRoi("door")], &[Chase]),
    ev(4, &[Leave(Role::Parent), Leave(Role::Doctor), Chase], &[]),
    Rule::Fallback(3),
    Rule::Closing(5),
];

fn rules_for(paradigm: Paradigm) -> &'static [Rule] {
    match paradigm {
        Paradigm::RN => RN_RULES,
        Paradigm::SS => SS_RULES,
        Paradigm::IG => IG_RULES,
        Paradigm::RJA => RJA_RULES,
        Paradigm::IJA => IJA_RULES,
        Paradigm::SA => SA_RULES,
    }
}

/// Whether a paradigm's responses describe co-occurring behaviors.
pub fn is_multi_line(paradigm: Paradigm) -> bool {
    matches!(paradigm, Paradigm::IG | Paradigm::IJA | Paradigm::SA)
}

/// Look target used when an instruction names none.
fn default_target(paradigm: Paradigm) -> Option<&'static str> {
    match paradigm {
        Paradigm::RN | Paradigm::SS => Some("doctor"),
        _ => None,
    }
}

/// The events following one instruction, with what the instruction asked for.
#[derive(Debug, Clone)]
pub struct ResponseWindow<'a> {
    pub start_s: f64,
    pub end_s: f64,
    pub target: Option<&'a str>,
    pub events: Vec<&'a ResponseEvent>,
}

/// One selected response template and the time it is emitted at.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResponseChoice {
    pub index: u8,
    pub time_s: f64,
}

fn first_match(window: &ResponseWindow<'_>, cond: Cond, cfg: &ScriptConfig) -> Option<f64> {
    window
        .events
        .iter()
        .find(|e| cond_holds(cond, e, window.target, cfg))
        .map(|e| e.start_s)
}

fn cond_holds(cond: Cond, e: &ResponseEvent, target: Option<&str>, cfg: &ScriptConfig) -> bool {
    match (cond, &e.kind) {
        (LookTarget, EventKind::LookAtObject { roi }) => target.is_some_and(|t| t == roi),
        (SustainedLookTarget, EventKind::LookAtObject { roi }) => {
            target.is_some_and(|t| t == roi) && e.duration_s() + 1e-9 >= cfg.sustained_look_s
        }
        (LookRoi(name), EventKind::LookAtObject { roi }) => name == roi,
        (LookElsewhere, EventKind::LookAtObject { roi }) => target.is_some_and(|t| t != roi),
        (PointTarget(want), EventKind::PointAtObject { roi, precision }) => {
            target.is_some_and(|t| t == roi) && want.is_none_or(|w| w == *precision)
        }
        (Smile, EventKind::Smile) => true,
        (ChildSpeech, EventKind::Speak { speaker, .. }) => speaker.is_child(),
        (Leave(role), EventKind::Leave { person }) => person.role == role,
        (Chase, EventKind::Chase) => true,
        _ => false,
    }
}

/// Selects the response template(s) for one instruction window.
///
/// Single-line paradigms pick the most specific matching rule (most
/// required plus forbidden conditions, ties to the lower index). Multi-line
/// paradigms emit every matching rule in anchor order up to
/// `max_response_lines`. A window with no match yields the paradigm's
/// no-response template at window end.
pub fn classify_response(
    paradigm: Paradigm,
    window: &ResponseWindow<'_>,
    cfg: &ScriptConfig,
) -> Vec<ResponseChoice> {
    let rules = rules_for(paradigm);
    let mut matched: Vec<(usize, u8, f64)> = Vec::new();
    let mut fallback = None;
    let mut closing = None;
    for rule in rules {
        match *rule {
            Rule::Event {
                index,
                requires,
                forbids,
            } => {
                if forbids.iter().any(|&c| first_match(window, c, cfg).is_some()) {
                    continue;
                }
                let anchors: Option<Vec<f64>> =
                    requires.iter().map(|&c| first_match(window, c, cfg)).collect();
                if let Some(anchor) = anchors.and_then(|a| a.into_iter().reduce(f64::max)) {
                    matched.push((requires.len() + forbids.len(), index, anchor));
                }
            }
            Rule::Fallback(i) => fallback = Some(i),
            Rule::Closing(i) => closing = Some(i),
        }
    }

    let at_end = |index| ResponseChoice {
        index,
        time_s: window.end_s,
    };
    if matched.is_empty() {
        return fallback.map(at_end).into_iter().collect();
    }
    if !is_multi_line(paradigm) {
        let best = matched
            .iter()
            .max_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)))
            .expect("non-empty");
        return vec![ResponseChoice {
            index: best.1,
            time_s: best.2,
        }];
    }
    matched.sort_by(|a, b| a.2.total_cmp(&b.2).then(a.1.cmp(&b.1)));
    let limit = cfg.max_response_lines.max(1);
    let mut out: Vec<ResponseChoice> = matched
        .into_iter()
        .take(limit)
        .map(|(_, index, time_s)| ResponseChoice { index, time_s })
        .collect();
    if let Some(i) = closing {
        if out.len() < limit {
            out.push(at_end(i));
        }
    }
    out
}

fn window_end(
    seg: &ParadigmSegment,
    pos: usize,
    ins: &InstructionEvent,
    cfg: &ScriptConfig,
) -> f64 {
    let mut end = (ins.time_s + cfg.window_for(seg.paradigm)).min(seg.end_s);
    if cfg.clip_at_next_instruction {
        if let Some(next) = seg.instructions.get(pos + 1) {
            end = end.min(next.time_s);
        }
    }
    end
}

/// Compiles the script body: one line per instruction followed by the
/// selected response lines, all sorted by time.
pub fn compile_script(
    events: &[ResponseEvent],
    manifest: &SessionManifest,
    templates: &TemplateTable,
    cfg: &ScriptConfig,
) -> Result<ScriptDocument, TemplateError> {
    let mut lines = Vec::new();
    for seg in &manifest.paradigms {
        for (pos, ins) in seg.instructions.iter().enumerate() {
            lines.push(ScriptLine {
                timestamp_s: ins.time_s,
                text: templates.instruction(ins.session_code)?.to_string(),
                origin: LineOrigin::Instruction {
                    session_code: ins.session_code,
                },
            });
            let end_s = window_end(seg, pos, ins, cfg);
            let window = ResponseWindow {
                start_s: ins.time_s,
                end_s,
                target: ins.target_roi.as_deref().or(default_target(seg.paradigm)),
                events: events
                    .iter()
                    .filter(|e| e.start_s >= ins.time_s && e.start_s <= end_s)
                    .collect(),
            };
            for choice in classify_response(seg.paradigm, &window, cfg) {
                lines.push(ScriptLine {
                    timestamp_s: choice.time_s,
                    text: templates.response(seg.paradigm, choice.index)?.to_string(),
                    origin: LineOrigin::Response {
                        paradigm: seg.paradigm,
                        response_index: choice.index,
                    },
                });
            }
        }
    }
    let mut doc = ScriptDocument {
        case_id: manifest.case_id.clone(),
        preamble: templates.preamble(manifest.child_age_months, manifest.child_gender),
        lines: Vec::new(),
    };
    doc.insert_lines(lines);
    Ok(doc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::behavior_log::*;

    fn kid() -> PersonId {
        PersonId::new(Role::Child, "k")
    }

    fn look(roi: &str, s: f64, e: f64, p: Paradigm) -> ResponseEvent {
        ResponseEvent {
            kind: EventKind::LookAtObject { roi: roi.into() },
            start_s: s,
            end_s: e,
            person: kid(),
            paradigm: p,
        }
    }

    fn simple(kind: EventKind, s: f64, p: Paradigm) -> ResponseEvent {
        ResponseEvent {
            kind,
            start_s: s,
            end_s: s + 0.6,
            person: kid(),
            paradigm: p,
        }
    }

    fn speak(s: f64) -> ResponseEvent {
        simple(
            EventKind::Speak {
                speaker: kid(),
                text: "hello".into(),
            },
            s,
            Paradigm::RN,
        )
    }

    fn window<'a>(events: &'a [ResponseEvent], target: Option<&'a str>) -> ResponseWindow<'a> {
        ResponseWindow {
            start_s: 0.0,
            end_s: 5.0,
            target,
            events: events.iter().collect(),
        }
    }

    fn indices(p: Paradigm, events: &[ResponseEvent], target: Option<&str>) -> Vec<u8> {
        classify_response(p, &window(events, target), &ScriptConfig::default())
            .into_iter()
            .map(|c| c.index)
            .collect()
    }

    fn manifest(paradigm: Paradigm, code: u8, target: Option<&str>) -> SessionManifest {
        SessionManifest {
            schema_version: SCHEMA_VERSION.into(),
            case_id: "c".into(),
            child_gender: Gender::Male,
            child_age_months: 24,
            fps: 10.0,
            participants: vec![kid()],
            rois: vec![],
            paradigms: vec![ParadigmSegment {
                paradigm,
                start_s: 0.0,
                end_s: 20.0,
                instructions: vec![InstructionEvent {
                    session_code: SessionCode::new(code).unwrap(),
                    time_s: 2.0,
                    target_roi: target.map(Into::into),
                }],
            }],
        }
    }

    #[test]
    fn rn_classification() {
        let t = Some("doctor");
        let l = look("doctor", 1.0, 2.0, Paradigm::RN);
        assert_eq!(indices(Paradigm::RN, &[l.clone(), speak(1.5)], t), vec![1]);
        assert_eq!(indices(Paradigm::RN, &[l], t), vec![2]);
        assert_eq!(indices(Paradigm::RN, &[], t), vec![3]);
        assert_eq!(indices(Paradigm::RN, &[speak(1.0)], t), vec![3]);
    }

    #[test]
    fn ss_classification() {
        let t = Some("doctor");
        let l = look("doctor", 1.0, 2.0, Paradigm::SS);
        let s = simple(EventKind::Smile, 1.2, Paradigm::SS);
        assert_eq!(indices(Paradigm::SS, &[l.clone(), s.clone()], t), vec![2]);
        assert_eq!(indices(Paradigm::SS, &[s], t), vec![3]);
        assert_eq!(indices(Paradigm::SS, &[l], t), vec![5]);
        assert_eq!(indices(Paradigm::SS, &[], t), vec![4]);
    }

    #[test]
    fn ija_look_and_point_emit_two_lines() {
        let t = Some("left_wall");
        let events = [
            look("left_wall", 1.0, 1.8, Paradigm::IJA),
            simple(
                EventKind::PointAtObject {
                    roi: "left_wall".into(),
                    precision: PointPrecision::Rough,
                },
                2.0,
                Paradigm::IJA,
            ),
        ];
        assert_eq!(indices(Paradigm::IJA, &events, t), vec![1, 5]);
    }

    #[test]
    fn ig_sustained_look_and_closing_line() {
        let t = Some("flower");
        let events = [look("flower", 1.0, 4.0, Paradigm::IG)];
        let out = classify_response(Paradigm::IG, &window(&events, t), &ScriptConfig::default());
        let idx: Vec<u8> = out.iter().map(|c| c.index).collect();
        assert_eq!(idx, vec![1, 6, 7]);
        assert_eq!(out[2].time_s, 5.0);
    }

    #[test]
    fn multi_line_cap() {
        let t = Some("flower");
        let events = [
            look("flower", 1.0, 4.0, Paradigm::IG),
            look("doctor", 2.0, 2.5, Paradigm::IG),
            simple(
                EventKind::PointAtObject {
                    roi: "flower".into(),
                    precision: PointPrecision::Precise,
                },
                3.0,
                Paradigm::IG,
            ),
        ];
        let cfg = ScriptConfig {
            max_response_lines: 2,
            ..Default::default()
        };
        let idx: Vec<u8> = classify_response(Paradigm::IG, &window(&events, t), &cfg)
            .into_iter()
            .map(|c| c.index)
            .collect();
        assert_eq!(idx, vec![1, 6]);
    }

    #[test]
    fn rja_wrong_direction() {
        let t = Some("clock");
        assert_eq!(indices(Paradigm::RJA, &[look("door", 1.0, 2.0, Paradigm::RJA)], t), vec![2]);
        assert_eq!(
            indices(
                Paradigm::RJA,
                &[look("door", 1.0, 2.0, Paradigm::RJA), look("clock", 2.0, 3.0, Paradigm::RJA)],
                t
            ),
            vec![1]
        );
        assert_eq!(indices(Paradigm::RJA, &[], t), vec![4]);
    }

    #[test]
    fn sa_chase_and_no_response() {
        let events = [simple(EventKind::Chase, 3.0, Paradigm::SA)];
        assert_eq!(indices(Paradigm::SA, &events, None), vec![1, 5]);
        assert_eq!(indices(Paradigm::SA, &[], None), vec![3]);
    }

    #[test]
    fn rn_script_lines() {
        let m = manifest(Paradigm::RN, 2, None);
        let events = vec![look("doctor", 3.0, 4.0, Paradigm::RN), speak(3.5)];
        let doc = compile_script(&events, &m, &TemplateTable::default(), &ScriptConfig::default())
            .unwrap();
        let texts: Vec<&str> = doc.lines.iter().map(|l| l.text.as_str()).collect();
        assert_eq!(
            texts,
            vec![
                "The doctor called out the child's name.",
                "The child turns toward the doctor and look with saying hello."
            ]
        );
        assert_eq!(doc.lines[1].timestamp_s, 3.5);
        let rendered = doc.render();
        assert!(rendered.starts_with("The child is a 24-month-old boy."));
        assert!(rendered.contains("[00:02] The doctor called out the child's name.\n"));
    }

    #[test]
    fn rn_no_event_uses_window_end() {
        let m = manifest(Paradigm::RN, 2, None);
        let doc =
            compile_script(&[], &m, &TemplateTable::default(), &ScriptConfig::default()).unwrap();
        assert_eq!(doc.lines.len(), 2);
        assert_eq!(doc.lines[1].text, "The child continued to play with the toy.");
        assert_eq!(doc.lines[1].timestamp_s, 7.0);
    }

    #[test]
    fn empty_manifest_gives_preamble_only() {
        let mut m = manifest(Paradigm::RN, 2, None);
        m.paradigms.clear();
        let doc =
            compile_script(&[], &m, &TemplateTable::default(), &ScriptConfig::default()).unwrap();
        assert!(doc.lines.is_empty());
        assert_eq!(doc.render().lines().count(), 1);
    }

    #[test]
    fn missing_template_is_reported() {
        let m = manifest(Paradigm::RN, 2, None);
        let t = TemplateTable::from_toml(
            "schema_version = \"1.0\"\npreamble = \"p\"\n[[instruction]]\ncode = \"P2\"\ntext = \"x\"\n",
        )
        .unwrap();
        assert_eq!(
            compile_script(&[], &m, &t, &ScriptConfig::default()),
            Err(TemplateError::MissingResponse {
                paradigm: Paradigm::RN,
                index: 3
            })
        );
    }

    #[test]
    fn timestamp_format() {
        assert_eq!(format_timestamp(0.0), "[00:00]");
        assert_eq!(format_timestamp(59.999), "[00:59]");
        assert_eq!(format_timestamp(61.2), "[01:01]");
        assert_eq!(format_timestamp(3725.0), "[62:05]");
    }
}
