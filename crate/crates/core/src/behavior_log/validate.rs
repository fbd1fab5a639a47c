use std::collections::{HashMap, HashSet};

use super::{
    BehaviorLog, GazeTarget, Gesture, LogError, PersonId, SessionManifest, TIMESTAMP_TOLERANCE,
};

fn in_unit_range(x: f64) -> bool {
    (-1.0..=1.0).contains(&x)
}

/// Checks every log-local invariant: contiguous frame indices, timestamps
/// equal to `index / fps`, value ranges, and field dependencies.
pub fn validate_log(log: &BehaviorLog) -> Result<(), LogError> {
    if !(log.fps.is_finite() && log.fps > 0.0) {
        return Err(LogError::schema(None, format!("fps must be positive, got {}", log.fps)));
    }
    let mut child: Option<&PersonId> = None;
    for (i, frame) in log.frames.iter().enumerate() {
        let idx = frame.frame_index;
        let here = Some(idx);
        if idx != i as u64 {
            return Err(LogError::schema(
                here,
                format!("frame index {idx} out of sequence (expected {i})"),
            ));
        }
        let expected = idx as f64 / log.fps;
        if !frame.timestamp_s.is_finite() || (frame.timestamp_s - expected).abs() > TIMESTAMP_TOLERANCE
        {
            return Err(LogError::schema(
                here,
                format!(
                    "timestamp {} does not match frame_index / fps = {expected}",
                    frame.timestamp_s
                ),
            ));
        }
        let mut seen = HashSet::new();
        for state in &frame.persons {
            let who = &state.person;
            if !seen.insert(who) {
                return Err(LogError::schema(here, format!("person {who} listed twice")));
            }
            if who.is_child() {
                match child {
                    Some(c) if c != who => {
                        return Err(LogError::schema(
                            here,
                            format!("second child {who} (already saw {c})"),
                        ))
                    }
                    _ => child = Some(who),
                }
            }
            for (name, value) in [("valence", state.valence), ("arousal", state.arousal)] {
                if let Some(v) = value {
                    if !in_unit_range(v) {
                        return Err(LogError::schema(
                            here,
                            format!("{name} {v} of {who} outside [-1, 1]"),
                        ));
                    }
                }
            }
            if let Some(angle) = state.gaze_angle_deg {
                if !(angle.is_finite() && (0.0..=180.0).contains(&angle)) {
                    return Err(LogError::schema(
                        here,
                        format!("gaze_angle_deg {angle} of {who} outside [0, 180]"),
                    ));
                }
            }
            if matches!(state.gaze_target, GazeTarget::ObjectRoi(_)) && state.gaze_angle_deg.is_none() {
                return Err(LogError::schema(
                    here,
                    format!("{who} gazes at an object ROI without gaze_angle_deg"),
                ));
            }
            if state.pointing_target.is_some() && state.gesture != Gesture::Pointing {
                return Err(LogError::schema(
                    here,
                    format!("{who} has a pointing_target but gesture is not pointing"),
                ));
            }
            if let Some([x, y]) = state.position_px {
                if !(x.is_finite() && y.is_finite()) {
                    return Err(LogError::schema(here, format!("non-finite position for {who}")));
                }
            }
        }
    }

    let mut by_speaker: HashMap<&PersonId, Vec<(f64, f64)>> = HashMap::new();
    for seg in &log.speech {
        if !(seg.start_s.is_finite() && seg.end_s.is_finite() && seg.start_s < seg.end_s) {
            return Err(LogError::schema(
                None,
                format!(
                    "speech segment of {} has start {} not before end {}",
                    seg.speaker, seg.start_s, seg.end_s
                ),
            ));
        }
        if seg.start_s < 0.0 || seg.end_s > log.duration_s() + TIMESTAMP_TOLERANCE {
            return Err(LogError::schema(
                None,
                format!(
                    "speech segment [{}, {}] outside the log duration {}",
                    seg.start_s,
                    seg.end_s,
                    log.duration_s()
                ),
            ));
        }
        by_speaker
            .entry(&seg.speaker)
            .or_default()
            .push((seg.start_s, seg.end_s));
    }
    for (speaker, mut spans) in by_speaker {
        spans.sort_by(|a, b| a.0.total_cmp(&b.0));
        if let Some(w) = spans.windows(2).find(|w| w[1].0 < w[0].1) {
            return Err(LogError::schema(
                None,
                format!(
                    "overlapping speech segments of {speaker}: [{}, {}] and [{}, {}]",
                    w[0].0, w[0].1, w[1].0, w[1].1
                ),
            ));
        }
    }
    Ok(())
}

/// Checks manifest-local invariants: a single child, paradigm ordering,
/// instruction placement, session codes, and instruction targets.
pub fn validate_manifest(manifest: &SessionManifest) -> Result<(), LogError> {
    let bad = |msg: String| Err(LogError::Manifest(msg));
    if !(manifest.fps.is_finite() && manifest.fps > 0.0) {
        return bad(format!("fps must be positive, got {}", manifest.fps));
    }
    if manifest.child_age_months == 0 {
        return bad("child_age_months must be positive".into());
    }
    let children = manifest.participants.iter().filter(|p| p.is_child()).count();
    if children != 1 {
        return bad(format!("expected exactly one child participant, found {children}"));
    }
    let mut ids = HashSet::new();
    for p in &manifest.participants {
        if !ids.insert(p) {
            return bad(format!("participant {p} declared twice"));
        }
    }
    let mut names = HashSet::new();
    for roi in &manifest.rois {
        if roi.name.is_empty() || !names.insert(roi.name.as_str()) {
            return bad(format!("ROI name `{}` empty or declared twice", roi.name));
        }
    }
    let mut prev_end = f64::NEG_INFINITY;
    for seg in &manifest.paradigms {
        let p = seg.paradigm;
        if !(seg.start_s.is_finite() && seg.end_s.is_finite() && seg.start_s >= 0.0 && seg.start_s < seg.end_s) {
            return bad(format!("{p} interval [{}, {}] is invalid", seg.start_s, seg.end_s));
        }
        if seg.start_s < prev_end {
            return bad(format!("{p} starts at {} before the previous paradigm ends", seg.start_s));
        }
        prev_end = seg.end_s;
        let mut prev_t = f64::NEG_INFINITY;
        for ins in &seg.instructions {
            let code = ins.session_code;
            if code.paradigm() != p {
                return bad(format!("session code {code} is not valid for paradigm {p}"));
            }
            if !seg.contains(ins.time_s) {
                return bad(format!(
                    "instruction {code} at {} lies outside {p} [{}, {}]",
                    ins.time_s, seg.start_s, seg.end_s
                ));
            }
            if ins.time_s < prev_t {
                return bad(format!("instructions of {p} are not time-ordered"));
            }
            prev_t = ins.time_s;
            match &ins.target_roi {
                None if p.requires_target() => {
                    return bad(format!("instruction {code} in {p} requires a target_roi"))
                }
                Some(roi) if manifest.roi(roi).is_none() => {
                    return bad(format!("instruction {code} targets undeclared ROI `{roi}`"))
                }
                _ => {}
            }
        }
    }
    Ok(())
}

/// Full validation of a log against its manifest.
pub fn validate_pair(log: &BehaviorLog, manifest: &SessionManifest) -> Result<(), LogError> {
    validate_log(log)?;
    validate_manifest(manifest)?;
    if log.case_id != manifest.case_id {
        return Err(LogError::Manifest(format!(
            "case_id mismatch: log `{}` vs manifest `{}`",
            log.case_id, manifest.case_id
        )));
    }
    if (log.fps - manifest.fps).abs() > f64::EPSILON * log.fps.max(1.0) {
        return Err(LogError::Manifest(format!(
            "fps mismatch: log {} vs manifest {}",
            log.fps, manifest.fps
        )));
    }
    let duration = log.duration_s();
    if let Some(last) = manifest.paradigms.last() {
        if last.end_s > duration + TIMESTAMP_TOLERANCE {
            return Err(LogError::Manifest(format!(
                "{} ends at {} beyond the log duration {duration}",
                last.paradigm, last.end_s
            )));
        }
    }
    let declared: HashSet<&PersonId> = manifest.participants.iter().collect();
    for frame in &log.frames {
        for state in &frame.persons {
            if !declared.contains(&state.person) {
                return Err(LogError::schema(
                    Some(frame.frame_index),
                    format!("undeclared participant {}", state.person),
                ));
            }
            let rois = [state.gaze_target.roi(), state.pointing_target.as_deref()];
            if let Some(roi) = rois.into_iter().flatten().find(|r| manifest.roi(r).is_none()) {
                return Err(LogError::schema(
                    Some(frame.frame_index),
                    format!("undeclared ROI `{roi}`"),
                ));
            }
            if let GazeTarget::Person(p) = &state.gaze_target {
                if !declared.contains(p) {
                    return Err(LogError::schema(
                        Some(frame.frame_index),
                        format!("gaze at undeclared participant {p}"),
                    ));
                }
            }
        }
    }
    if let Some(seg) = log.speech.iter().find(|s| !declared.contains(&s.speaker)) {
        return Err(LogError::schema(
            None,
            format!("speech by undeclared participant {}", seg.speaker),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::super::*;

    fn manifest() -> SessionManifest {
        SessionManifest {
            schema_version: SCHEMA_VERSION.into(),
            case_id: "m".into(),
            child_gender: Gender::Female,
            child_age_months: 20,
            fps: 10.0,
            participants: vec![
                PersonId::new(Role::Child, "k"),
                PersonId::new(Role::Doctor, "d"),
            ],
            rois: vec![RoiDecl {
                name: "flower".into(),
                anchor_px: None,
            }],
            paradigms: vec![ParadigmSegment {
                paradigm: Paradigm::IG,
                start_s: 0.0,
                end_s: 5.0,
                instructions: vec![InstructionEvent {
                    session_code: SessionCode::new(7).unwrap(),
                    time_s: 1.0,
                    target_roi: Some("flower".into()),
                }],
            }],
        }
    }

    #[test]
    fn valid_manifest_passes() {
        validate_manifest(&manifest()).unwrap();
    }

    #[test]
    fn wrong_session_code_for_paradigm() {
        let mut m = manifest();
        m.paradigms[0].instructions[0].session_code = SessionCode::new(3).unwrap();
        let err = validate_manifest(&m).unwrap_err();
        assert!(err.to_string().contains("not valid for paradigm IG"), "{err}");
    }

    #[test]
    fn ig_instruction_needs_target() {
        let mut m = manifest();
        m.paradigms[0].instructions[0].target_roi = None;
        assert!(matches!(validate_manifest(&m), Err(LogError::Manifest(_))));
    }

    #[test]
    fn instruction_outside_paradigm() {
        let mut m = manifest();
        m.paradigms[0].instructions[0].time_s = 6.0;
        assert!(validate_manifest(&m).is_err());
    }

    #[test]
    fn overlapping_paradigms_rejected() {
        let mut m = manifest();
        let mut second = m.paradigms[0].clone();
        second.start_s = 4.0;
        second.end_s = 8.0;
        second.instructions[0].time_s = 4.5;
        m.paradigms.push(second);
        assert!(validate_manifest(&m).is_err());
    }

    #[test]
    fn two_children_rejected() {
        let mut m = manifest();
        m.participants.push(PersonId::new(Role::Child, "k2"));
        assert!(validate_manifest(&m).is_err());
    }

    #[test]
    fn roi_gaze_without_angle_rejected() {
        let mut s = PersonState::present(PersonId::new(Role::Child, "k"));
        s.gaze_target = GazeTarget::ObjectRoi("flower".into());
        let log = BehaviorLog {
            case_id: "m".into(),
            fps: 10.0,
            frames: vec![FrameRecord {
                frame_index: 0,
                timestamp_s: 0.0,
                persons: vec![s],
            }],
            speech: vec![],
        };
        assert!(matches!(validate_log(&log), Err(LogError::Schema { frame: Some(0), .. })));
    }

    #[test]
    fn overlapping_speech_rejected() {
        let k = PersonId::new(Role::Child, "k");
        let log = BehaviorLog {
            case_id: "m".into(),
            fps: 10.0,
            frames: (0..50)
                .map(|i| FrameRecord {
                    frame_index: i,
                    timestamp_s: i as f64 / 10.0,
                    persons: vec![],
                })
                .collect(),
            speech: vec![
                SpeechSegment { speaker: k.clone(), start_s: 1.0, end_s: 2.0, text: "a".into() },
                SpeechSegment { speaker: k, start_s: 1.5, end_s: 2.5, text: "b".into() },
            ],
        };
        assert!(validate_log(&log).is_err());
    }
}
