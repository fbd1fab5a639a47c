//! Scans a behavioral log and emits timestamped response events: look at
//! object, point at object, smile, speak, leave, plus the motion-based
//! chase event used in separation-anxiety statistics.
//!
//! Sustained conditions are detected as frame runs. Frame `i` covers
//! `[i / fps, (i + 1) / fps)`, so an event built from frames `a..=b` spans
//! `[t_a, t_b + 1/fps]`. Events are only kept when the paradigm they start
//! in permits their kind.

use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::behavior_log::{
    BehaviorLog, Expression, Gesture, Paradigm, PersonId, Role, SessionCode, SessionManifest,
};

const EPS: f64 = 1e-9;

/// Detection thresholds. The defaults are the documented heuristics; all of
/// them can be swept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParserConfig {
    pub look_max_angle_deg: f64,
    pub look_min_dwell_s: f64,
    /// A look ends once the gaze condition has been broken for longer than this.
    pub look_break_s: f64,
    pub point_min_s: f64,
    pub point_break_s: f64,
    /// Pointing with a gaze angle at or below this is "precise", else "rough".
    pub point_precise_angle_deg: f64,
    pub smile_min_s: f64,
    pub smile_break_s: f64,
    pub leave_gap_s: f64,
    /// Minimum approach speed toward the door anchor, in pixels per second.
    pub chase_speed_px_s: f64,
    pub chase_min_s: f64,
    pub door_roi: String,
}

impl Default for ParserConfig {
    fn default() -> Self {
        Self {
            look_max_angle_deg: 15.0,
            look_min_dwell_s: 0.3,
            look_break_s: 0.2,
            point_min_s: 0.2,
            point_break_s: 0.0,
            point_precise_angle_deg: 10.0,
            smile_min_s: 0.5,
            smile_break_s: 0.0,
            leave_gap_s: 1.0,
            chase_speed_px_s: 20.0,
            chase_min_s: 0.5,
            door_roi: "door".to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointPrecision {
    Precise,
    Rough,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    LookAtObject { roi: String },
    PointAtObject { roi: String, precision: PointPrecision },
    Smile,
    Speak { speaker: PersonId, text: String },
    Leave { person: PersonId },
    Chase,
}

/// Coarse event category, used for paradigm gating and measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventCategory {
    Look,
    Point,
    Smile,
    Speak,
    Leave,
    Chase,
}

impl EventKind {
    pub fn category(&self) -> EventCategory {
        match self {
            EventKind::LookAtObject { .. } => EventCategory::Look,
            EventKind::PointAtObject { .. } => EventCategory::Point,
            EventKind::Smile => EventCategory::Smile,
            EventKind::Speak { .. } => EventCategory::Speak,
            EventKind::Leave { .. } => EventCategory::Leave,
            EventKind::Chase => EventCategory::Chase,
        }
    }

    pub fn roi(&self) -> Option<&str> {
        match self {
            EventKind::LookAtObject { roi } | EventKind::PointAtObject { roi, .. } => Some(roi),
            _ => None,
        }
    }
}

/// Which event categories each paradigm observes. Chase is an SA-only
/// motion event on top of the five basic events.
pub fn paradigm_permits(paradigm: Paradigm, category: EventCategory) -> bool {
    use EventCategory::*;
    match paradigm {
        Paradigm::RN => matches!(category, Look | Speak),
        Paradigm::SS => matches!(category, Look | Smile),
        Paradigm::IG => matches!(category, Look | Point),
        Paradigm::RJA => matches!(category, Look),
        Paradigm::IJA => matches!(category, Look | Point),
        Paradigm::SA => matches!(category, Look | Leave | Chase),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseEvent {
    #[serde(flatten)]
    pub kind: EventKind,
    pub start_s: f64,
    pub end_s: f64,
    pub person: PersonId,
    pub paradigm: Paradigm,
}

impl ResponseEvent {
    pub fn duration_s(&self) -> f64 {
        self.end_s - self.start_s
    }
}

/// Frame runs `[first, last]` (inclusive indices) where `active` holds,
/// bridging gaps no longer than `break_s` and keeping runs lasting at least
/// `min_s`.
fn detect_runs(
    active: &[bool],
    fps: f64,
    min_s: f64,
    break_s: f64,
) -> Vec<(usize, usize)> {
    let mut runs = Vec::new();
    let mut current: Option<(usize, usize)> = None;
    let mut gap = 0usize;
    let flush = |run: (usize, usize), runs: &mut Vec<(usize, usize)>| {
        let duration = (run.1 - run.0 + 1) as f64 / fps;
        if duration + EPS >= min_s {
            runs.push(run);
        }
    };
    for (i, &on) in active.iter().enumerate() {
        if on {
            current = Some(match current {
                Some((start, _)) => (start, i),
                None => (i, i),
            });
            gap = 0;
        } else if let Some(run) = current {
            gap += 1;
            if gap as f64 / fps > break_s + EPS {
                flush(run, &mut runs);
                current = None;
                gap = 0;
            }
        }
    }
    if let Some(run) = current {
        flush(run, &mut runs);
    }
    runs
}

struct Frames<'a> {
    log: &'a BehaviorLog,
    period: f64,
}

impl Frames<'_> {
    fn start(&self, i: usize) -> f64 {
        self.log.frames[i].timestamp_s
    }

    fn end(&self, i: usize) -> f64 {
        (self.log.frames[i].timestamp_s + self.period).min(self.log.duration_s())
    }
}

/// Detects all response events. Deterministic; returns events sorted by
/// start time.
pub fn parse_events(
    log: &BehaviorLog,
    manifest: &SessionManifest,
    cfg: &ParserConfig,
) -> Vec<ResponseEvent> {
    let fr = Frames {
        log,
        period: log.frame_period_s(),
    };
    let mut raw: Vec<(EventKind, f64, f64, PersonId)> = Vec::new();
    let child = log
        .child_id()
        .cloned()
        .or_else(|| manifest.child().cloned());

    if let Some(child) = &child {
        let child_states: Vec<_> = log.frames.iter().map(|f| f.child()).collect();

        let look_rois: BTreeSet<&str> = child_states
            .iter()
            .flatten()
            .filter_map(|s| s.gaze_target.roi())
            .collect();
        for roi in look_rois {
            let active: Vec<bool> = child_states
                .iter()
                .map(|s| {
                    s.is_some_and(|s| {
                        s.gaze_target.roi() == Some(roi)
                            && s.gaze_angle_deg
                                .is_some_and(|a| a <= cfg.look_max_angle_deg + EPS)
                    })
                })
                .collect();
            for (a, b) in detect_runs(&active, log.fps, cfg.look_min_dwell_s, cfg.look_break_s) {
                raw.push((
                    EventKind::LookAtObject { roi: roi.to_string() },
                    fr.start(a),
                    fr.end(b),
                    child.clone(),
                ));
            }
        }

        let point_rois: BTreeSet<&str> = child_states
            .iter()
            .flatten()
            .filter(|s| s.gesture == Gesture::Pointing)
            .filter_map(|s| s.pointing_target.as_deref())
            .collect();
        for roi in point_rois {
            let active: Vec<bool> = child_states
                .iter()
                .map(|s| {
                    s.is_some_and(|s| {
                        s.gesture == Gesture::Pointing && s.pointing_target.as_deref() == Some(roi)
                    })
                })
                .collect();
            for (a, b) in detect_runs(&active, log.fps, cfg.point_min_s, cfg.point_break_s) {
                let angles: Vec<f64> = child_states[a..=b]
                    .iter()
                    .flatten()
                    .filter(|s| s.gaze_target.roi() == Some(roi))
                    .filter_map(|s| s.gaze_angle_deg)
                    .collect();
                let precision = if !angles.is_empty()
                    && angles.iter().sum::<f64>() / angles.len() as f64
                        <= cfg.point_precise_angle_deg + EPS
                {
                    PointPrecision::Precise
                } else {
                    PointPrecision::Rough
                };
                raw.push((
                    EventKind::PointAtObject {
                        roi: roi.to_string(),
                        precision,
                    },
                    fr.start(a),
                    fr.end(b),
                    child.clone(),
                ));
            }
        }

        let smiling: Vec<bool> = child_states
            .iter()
            .map(|s| s.is_some_and(|s| s.expression == Expression::Happy))
            .collect();
        for (a, b) in detect_runs(&smiling, log.fps, cfg.smile_min_s, cfg.smile_break_s) {
            raw.push((EventKind::Smile, fr.start(a), fr.end(b), child.clone()));
        }
    }

    for seg in &log.speech {
        raw.push((
            EventKind::Speak {
                speaker: seg.speaker.clone(),
                text: seg.text.clone(),
            },
            seg.start_s,
            seg.end_s,
            seg.speaker.clone(),
        ));
    }

    let leaves = detect_leaves(log, cfg, &fr);
    if let Some(child) = &child {
        raw.extend(detect_chases(log, manifest, cfg, &fr, &leaves, child));
    }
    raw.extend(leaves);

    let mut events: Vec<ResponseEvent> = raw
        .into_iter()
        .filter_map(|(kind, start_s, end_s, person)| {
            let paradigm = manifest.paradigm_at(start_s)?.paradigm;
            paradigm_permits(paradigm, kind.category()).then_some(ResponseEvent {
                kind,
                start_s,
                end_s,
                person,
                paradigm,
            })
        })
        .collect();
    events.sort_by(|a, b| a.start_s.total_cmp(&b.start_s));
    events
}

fn detect_leaves(
    log: &BehaviorLog,
    cfg: &ParserConfig,
    fr: &Frames<'_>,
) -> Vec<(EventKind, f64, f64, PersonId)> {
    let adults: BTreeSet<&PersonId> = log
        .frames
        .iter()
        .flat_map(|f| f.persons.iter())
        .map(|s| &s.person)
        .filter(|p| matches!(p.role, Role::Doctor | Role::Parent))
        .collect();
    let mut out = Vec::new();
    for person in adults {
        let present: Vec<bool> = log
            .frames
            .iter()
            .map(|f| f.state_of(person).is_some_and(|s| s.present))
            .collect();
        let mut i = 1;
        while i < present.len() {
            if present[i - 1] && !present[i] {
                let back = (i..present.len()).find(|&j| present[j]);
                let gap_end = back.unwrap_or(present.len());
                let gap_s = (gap_end - i) as f64 / log.fps;
                if gap_s + EPS >= cfg.leave_gap_s {
                    let end = back.map_or(log.duration_s(), |j| fr.start(j));
                    out.push((
                        EventKind::Leave {
                            person: person.clone(),
                        },
                        fr.start(i),
                        end,
                        person.clone(),
                    ));
                }
                i = gap_end;
            }
            i += 1;
        }
    }
    out
}

fn detect_chases(
    log: &BehaviorLog,
    manifest: &SessionManifest,
    cfg: &ParserConfig,
    fr: &Frames<'_>,
    leaves: &[(EventKind, f64, f64, PersonId)],
    child: &PersonId,
) -> Vec<(EventKind, f64, f64, PersonId)> {
    let Some([dx, dy]) = manifest.roi(&cfg.door_roi).and_then(|r| r.anchor_px) else {
        return Vec::new();
    };
    let distance: Vec<Option<f64>> = log
        .frames
        .iter()
        .map(|f| {
            f.state_of(child)
                .filter(|s| s.present)
                .and_then(|s| s.position_px)
                .map(|[x, y]| ((x - dx).powi(2) + (y - dy).powi(2)).sqrt())
        })
        .collect();
    // Frame i approaches the door when the distance shrank since frame i-1
    // faster than the configured speed.
    let approaching: Vec<bool> = (0..distance.len())
        .map(|i| {
            i > 0
                && matches!((distance[i - 1], distance[i]),
                    (Some(prev), Some(cur)) if (prev - cur) * log.fps > cfg.chase_speed_px_s)
        })
        .collect();
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (_, leave_start, _, _) in leaves {
        let first = (*leave_start * log.fps).round() as usize;
        let horizon = manifest
            .paradigm_at(*leave_start)
            .map_or(log.duration_s(), |p| p.end_s);
        let last = ((horizon * log.fps).ceil() as usize).min(approaching.len());
        if first >= last {
            continue;
        }
        let runs = detect_runs(&approaching[first..last], log.fps, cfg.chase_min_s, 0.0);
        if let Some(&(a, b)) = runs.first() {
            let (a, b) = (a + first, b + first);
            if seen.insert(a) {
                out.push((EventKind::Chase, fr.start(a), fr.end(b), child.clone()));
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasureKind {
    Look,
    Point,
    Chase,
}

impl MeasureKind {
    pub const ALL: [MeasureKind; 3] = [MeasureKind::Look, MeasureKind::Point, MeasureKind::Chase];

    fn category(self) -> EventCategory {
        match self {
            MeasureKind::Look => EventCategory::Look,
            MeasureKind::Point => EventCategory::Point,
            MeasureKind::Chase => EventCategory::Chase,
        }
    }
}

/// Latency from an instruction to the first matching response, and that
/// response's duration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseMeasure {
    pub event_kind: MeasureKind,
    pub session_code: SessionCode,
    pub latency_s: f64,
    pub duration_s: f64,
}

/// Pairs every instruction with the first later event of each measurable
/// kind inside the same paradigm segment. Look and point events must hit
/// the instruction's target ROI when it names one.
pub fn measure_responses(
    events: &[ResponseEvent],
    manifest: &SessionManifest,
) -> Vec<ResponseMeasure> {
    let mut out = Vec::new();
    for (seg, ins) in manifest.instructions() {
        for kind in MeasureKind::ALL {
            if !paradigm_permits(seg.paradigm, kind.category()) {
                continue;
            }
            let hit = events.iter().find(|e| {
                e.kind.category() == kind.category()
                    && e.start_s >= ins.time_s
                    && e.start_s <= seg.end_s
                    && match (&ins.target_roi, e.kind.roi()) {
                        (Some(target), Some(roi)) => target == roi,
                        _ => true,
                    }
            });
            if let Some(e) = hit {
                out.push(ResponseMeasure {
                    event_kind: kind,
                    session_code: ins.session_code,
                    latency_s: e.start_s - ins.time_s,
                    duration_s: e.duration_s(),
                });
            }
        }
    }
    out
}

/// One JSON object per line, for audit.
pub fn events_to_jsonl(events: &[ResponseEvent]) -> String {
    events
        .iter()
        .map(|e| serde_json::to_string(e).expect("events serialize") + "\n")
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::behavior_log::*;

    fn kid() -> PersonId {
        PersonId::new(Role::Child, "k")
    }
    fn parent() -> PersonId {
        PersonId::new(Role::Parent, "p")
    }

    fn session(paradigm: Paradigm, frames: usize, fps: f64) -> (BehaviorLog, SessionManifest) {
        let log = BehaviorLog {
            case_id: "t".into(),
            fps,
            frames: (0..frames)
                .map(|i| FrameRecord {
                    frame_index: i as u64,
                    timestamp_s: i as f64 / fps,
                    persons: vec![PersonState::present(kid())],
                })
                .collect(),
            speech: vec![],
        };
        let code = *paradigm.session_codes().start();
        let manifest = SessionManifest {
            schema_version: SCHEMA_VERSION.into(),
            case_id: "t".into(),
            child_gender: Gender::Male,
            child_age_months: 24,
            fps,
            participants: vec![kid(), parent(), PersonId::new(Role::Doctor, "d")],
            rois: ["flower", "clock", "door"]
                .into_iter()
                .map(|n| RoiDecl {
                    name: n.into(),
                    anchor_px: (n == "door").then_some([1000.0, 0.0]),
                })
                .collect(),
            paradigms: vec![ParadigmSegment {
                paradigm,
                start_s: 0.0,
                end_s: frames as f64 / fps,
                instructions: vec![InstructionEvent {
                    session_code: SessionCode::new(code).unwrap(),
                    time_s: 1.0,
                    target_roi: paradigm.requires_target().then(|| "flower".into()),
                }],
            }],
        };
        (log, manifest)
    }

    fn child_mut(log: &mut BehaviorLog, i: usize) -> &mut PersonState {
        log.frames[i]
            .persons
            .iter_mut()
            .find(|p| p.person.is_child())
            .unwrap()
    }

    #[test]
    fn null_behavior_yields_nothing() {
        let (log, m) = session(Paradigm::IG, 200, 25.0);
        assert!(parse_events(&log, &m, &ParserConfig::default()).is_empty());
    }

    #[test]
    fn ten_frame_dwell_is_a_look() {
        let (mut log, m) = session(Paradigm::IG, 200, 25.0);
        for i in 75..85 {
            let c = child_mut(&mut log, i);
            c.gaze_target = GazeTarget::ObjectRoi("flower".into());
            c.gaze_angle_deg = Some(12.0);
        }
        let events = parse_events(&log, &m, &ParserConfig::default());
        assert_eq!(events.len(), 1);
        assert_eq!(events[0].kind, EventKind::LookAtObject { roi: "flower".into() });
        assert!((events[0].start_s - 3.0).abs() < 1e-12);
        assert!((events[0].end_s - 3.4).abs() < 1e-12);
    }

    #[test]
    fn short_glance_and_wide_angle_are_ignored() {
        let (mut log, m) = session(Paradigm::IG, 200, 25.0);
        for i in 10..15 {
            let c = child_mut(&mut log, i);
            c.gaze_target = GazeTarget::ObjectRoi("flower".into());
            c.gaze_angle_deg = Some(5.0);
        }
        for i in 50..80 {
            let c = child_mut(&mut log, i);
            c.gaze_target = GazeTarget::ObjectRoi("flower".into());
            c.gaze_angle_deg = Some(30.0);
        }
        assert!(parse_events(&log, &m, &ParserConfig::default()).is_empty());
    }

    #[test]
    fn look_bridges_short_breaks_only() {
        let (mut log, m) = session(Paradigm::IG, 300, 25.0);
        // 10 on, 5 off (0.2 s, bridged), 10 on, 6 off (0.24 s, breaks), 10 on
        let on: Vec<usize> = (0..10).chain(15..25).chain(31..41).collect();
        for i in on {
            let c = child_mut(&mut log, 50 + i);
            c.gaze_target = GazeTarget::ObjectRoi("flower".into());
            c.gaze_angle_deg = Some(1.0);
        }
        let events = parse_events(&log, &m, &ParserConfig::default());
        let spans: Vec<(f64, f64)> = events.iter().map(|e| (e.start_s, e.end_s)).collect();
        assert_eq!(spans.len(), 2);
        assert!((spans[0].0 - 2.0).abs() < 1e-12 && (spans[0].1 - 3.0).abs() < 1e-12);
        assert!((spans[1].0 - 81.0 / 25.0).abs() < 1e-12);
    }

    #[test]
    fn pointing_for_400ms() {
        let (mut log, m) = session(Paradigm::IG, 100, 25.0);
        for i in 25..35 {
            let c = child_mut(&mut log, i);
            c.gesture = Gesture::Pointing;
            c.pointing_target = Some("clock".into());
        }
        let events = parse_events(&log, &m, &ParserConfig::default());
        assert_eq!(events.len(), 1);
        assert_eq!(
            events[0].kind,
            EventKind::PointAtObject {
                roi: "clock".into(),
                precision: PointPrecision::Rough
            }
        );
        assert!((events[0].duration_s() - 0.4).abs() < 1e-12);
    }

    #[test]
    fn precise_pointing_uses_gaze_angle() {
        let (mut log, m) = session(Paradigm::IG, 100, 25.0);
        for i in 25..35 {
            let c = child_mut(&mut log, i);
            c.gesture = Gesture::Pointing;
            c.pointing_target = Some("flower".into());
            c.gaze_target = GazeTarget::ObjectRoi("flower".into());
            c.gaze_angle_deg = Some(4.0);
        }
        let events = parse_events(&log, &m, &ParserConfig::default());
        assert!(events.iter().any(|e| e.kind
            == EventKind::PointAtObject {
                roi: "flower".into(),
                precision: PointPrecision::Precise
            }));
    }

    #[test]
    fn smile_is_gated_out_of_ig() {
        let (mut log, m) = session(Paradigm::IG, 100, 10.0);
        for i in 10..30 {
            child_mut(&mut log, i).expression = Expression::Happy;
        }
        assert!(parse_events(&log, &m, &ParserConfig::default()).is_empty());
        let (mut log, m) = session(Paradigm::SS, 100, 10.0);
        for i in 10..30 {
            child_mut(&mut log, i).expression = Expression::Happy;
        }
        let events = parse_events(&log, &m, &ParserConfig::default());
        assert_eq!(events.len(), 1);
        assert_eq!(events[0].kind, EventKind::Smile);
        assert!((events[0].start_s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn parent_leave_in_sa() {
        let (mut log, m) = session(Paradigm::SA, 200, 25.0);
        for (i, f) in log.frames.iter_mut().enumerate() {
            let mut s = PersonState::present(parent());
            s.present = i <= 100;
            f.persons.push(s);
        }
        let events = parse_events(&log, &m, &ParserConfig::default());
        assert_eq!(events.len(), 1);
        assert_eq!(events[0].kind, EventKind::Leave { person: parent() });
        assert!((events[0].start_s - 101.0 / 25.0).abs() < 1e-12);
        assert_eq!(events[0].end_s, log.duration_s());
    }

    #[test]
    fn brief_absence_is_not_a_leave() {
        let (mut log, m) = session(Paradigm::SA, 200, 25.0);
        for (i, f) in log.frames.iter_mut().enumerate() {
            let mut s = PersonState::present(parent());
            s.present = !(100..120).contains(&i);
            f.persons.push(s);
        }
        assert!(parse_events(&log, &m, &ParserConfig::default()).is_empty());
    }

    #[test]
    fn chase_after_leave() {
        let (mut log, m) = session(Paradigm::SA, 250, 25.0);
        for (i, f) in log.frames.iter_mut().enumerate() {
            let mut s = PersonState::present(parent());
            s.present = i < 50;
            f.persons.push(s);
            let c = f.persons.iter_mut().find(|p| p.person.is_child()).unwrap();
            // Child starts moving toward the door at 50 px/s from frame 100.
            let x = if i < 100 { 0.0 } else { (i - 100) as f64 * 2.0 };
            c.position_px = Some([x, 0.0]);
        }
        let events = parse_events(&log, &m, &ParserConfig::default());
        let chase: Vec<_> = events.iter().filter(|e| e.kind == EventKind::Chase).collect();
        assert_eq!(chase.len(), 1);
        assert!((chase[0].start_s - 101.0 / 25.0).abs() < 1e-12);
    }

    #[test]
    fn measures_pair_with_first_later_event() {
        let (_, m) = session(Paradigm::IG, 500, 25.0);
        let k = kid();
        let mk = |roi: &str, s: f64, e: f64| ResponseEvent {
            kind: EventKind::LookAtObject { roi: roi.into() },
            start_s: s,
            end_s: e,
            person: k.clone(),
            paradigm: Paradigm::IG,
        };
        let events = vec![
            mk("flower", 0.5, 0.9),
            mk("clock", 2.0, 3.0),
            mk("flower", 5.99, 7.64),
        ];
        let ms = measure_responses(&events, &m);
        assert_eq!(ms.len(), 1);
        assert_eq!(ms[0].event_kind, MeasureKind::Look);
        assert!((ms[0].latency_s - 4.99).abs() < 1e-9);
        assert!((ms[0].duration_s - 1.65).abs() < 1e-9);
    }

    #[test]
    fn event_before_instruction_excluded() {
        let (_, m) = session(Paradigm::IG, 500, 25.0);
        let events = vec![ResponseEvent {
            kind: EventKind::LookAtObject { roi: "flower".into() },
            start_s: 0.5,
            end_s: 2.0,
            person: kid(),
            paradigm: Paradigm::IG,
        }];
        assert!(measure_responses(&events, &m).is_empty());
    }

    #[test]
    fn runs_helper_min_duration() {
        let active = [true, true, false, true, true, true];
        assert_eq!(detect_runs(&active, 10.0, 0.25, 0.0), vec![(3, 5)]);
        assert_eq!(detect_runs(&active, 10.0, 0.1, 0.1), vec![(0, 5)]);
    }
}
