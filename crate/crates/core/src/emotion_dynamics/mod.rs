//! Emotional dynamic points on the child's valence series.
//!
//! A dynamic point is a sample whose first-order valence difference exceeds
//! the threshold `alpha` in magnitude. Each point is widened to a short
//! window and overlapping windows are merged into emotion segments, which a
//! [`Describer`] can turn into text for the script.

mod describer;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use describer::{
    ChatDescriber, DescribeRequest, Describer, EmotionTemplates, FixtureDescriber, StubDescriber,
};

use crate::script_compiler::{LineOrigin, ScriptLine};

/// Slack used when deciding whether two windows touch.
pub const TOUCH_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum EmotionError {
    #[error("valence series has {0} samples, at least 2 are needed")]
    TooShort(usize),
    #[error("invalid emotion config: {0}")]
    InvalidConfig(String),
    #[error("describer unavailable: {0}")]
    DescriberUnavailable(String),
    #[error("no recorded description for `{0}`")]
    MissingDescription(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DerivativeMode {
    /// `d_n = a_n - a_{n-1}`.
    PerFrame,
    /// `d_n = (a_n - a_{n-1}) / (t_n - t_{n-1})`.
    PerSecond,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmotionConfig {
    pub alpha: f64,
    pub half_window_s: f64,
    pub derivative_mode: DerivativeMode,
}

impl Default for EmotionConfig {
    fn default() -> Self {
        Self {
            alpha: 0.175,
            half_window_s: 0.5,
            derivative_mode: DerivativeMode::PerFrame,
        }
    }
}

impl EmotionConfig {
    pub fn validate(&self) -> Result<(), EmotionError> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(EmotionError::InvalidConfig(format!(
                "alpha must be positive, got {}",
                self.alpha
            )));
        }
        if !(self.half_window_s > 0.0 && self.half_window_s.is_finite()) {
            return Err(EmotionError::InvalidConfig(format!(
                "half_window_s must be positive, got {}",
                self.half_window_s
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DynamicPoint {
    pub time_s: f64,
    pub derivative: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmotionSegment {
    pub segment_id: usize,
    pub start_s: f64,
    pub end_s: f64,
    pub source_points: Vec<DynamicPoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
}

impl EmotionSegment {
    /// The source point with the largest absolute derivative.
    pub fn peak(&self) -> Option<&DynamicPoint> {
        self.source_points
            .iter()
            .max_by(|a, b| a.derivative.abs().total_cmp(&b.derivative.abs()))
    }
}

/// Finds the samples whose first-order difference satisfies
/// `d_n > alpha || d_n < -alpha`. The first sample never qualifies.
pub fn find_dynamic_points(
    series: &[(f64, f64)],
    cfg: &EmotionConfig,
) -> Result<Vec<DynamicPoint>, EmotionError> {
    cfg.validate()?;
    if series.len() < 2 {
        return Err(EmotionError::TooShort(series.len()));
    }
    let points = series
        .windows(2)
        .filter_map(|w| {
            let (t0, a0) = w[0];
            let (t1, a1) = w[1];
            let d = match cfg.derivative_mode {
                DerivativeMode::PerFrame => a1 - a0,
                DerivativeMode::PerSecond => (a1 - a0) / (t1 - t0),
            };
            (d > cfg.alpha || d < -cfg.alpha).then_some(DynamicPoint {
                time_s: t1,
                derivative: d,
            })
        })
        .collect();
    Ok(points)
}

/// Unions intervals that overlap or touch. Output is sorted and disjoint.
pub fn merge_intervals(intervals: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut sorted: Vec<(f64, f64)> = intervals.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(sorted.len());
    for (s, e) in sorted {
        match out.last_mut() {
            Some(last) if s <= last.1 + TOUCH_TOLERANCE => last.1 = last.1.max(e),
            _ => out.push((s, e)),
        }
    }
    out
}

/// Widens each point to `[t - h, t + h]`, merges, and clamps to
/// `[0, duration_s]`. Windows left empty by clamping are dropped.
pub fn merge_segments(
    points: &[DynamicPoint],
    cfg: &EmotionConfig,
    duration_s: f64,
) -> Vec<EmotionSegment> {
    let h = cfg.half_window_s;
    let windows: Vec<(f64, f64)> = points.iter().map(|p| (p.time_s - h, p.time_s + h)).collect();
    merge_intervals(&windows)
        .into_iter()
        .filter_map(|(s, e)| {
            let (s, e) = (s.max(0.0), e.min(duration_s));
            (s < e).then_some((s, e))
        })
        .enumerate()
        .map(|(segment_id, (start_s, end_s))| EmotionSegment {
            segment_id,
            start_s,
            end_s,
            source_points: points
                .iter()
                .filter(|p| p.time_s >= start_s && p.time_s <= end_s)
                .copied()
                .collect(),
            description: None,
        })
        .collect()
}

/// Fills segment descriptions one at a time. A failing describer leaves the
/// remaining segments undescribed and returns the error alongside; an
/// unreachable backend is not retried for later segments.
pub fn describe_segments(
    case_id: &str,
    segments: &[EmotionSegment],
    media_ref: Option<&str>,
    describer: &dyn Describer,
) -> (Vec<EmotionSegment>, Vec<EmotionError>) {
    let mut out = segments.to_vec();
    let mut errors = Vec::new();
    for seg in &mut out {
        let req = DescribeRequest {
            case_id,
            segment: seg,
            media_ref,
        };
        match describer.describe(&req) {
            Ok(text) => seg.description = Some(text),
            Err(e) => {
                log::warn!("{case_id} segment {}: {e}", seg.segment_id);
                let stop = matches!(e, EmotionError::DescriberUnavailable(_));
                errors.push(e);
                if stop {
                    break;
                }
            }
        }
    }
    (out, errors)
}

/// Script lines for the described segments, stamped at segment start.
pub fn emotion_lines(segments: &[EmotionSegment]) -> Vec<ScriptLine> {
    segments
        .iter()
        .filter_map(|s| {
            let text = s.description.as_deref()?.trim();
            (!text.is_empty()).then(|| ScriptLine {
                timestamp_s: s.start_s,
                text: text.to_string(),
                origin: LineOrigin::Emotion {
                    segment_id: s.segment_id,
                },
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DynamicsStats {
    pub frequency: usize,
    pub latency_s: Option<f64>,
}

/// Point count and the delay from the first instruction to the first point
/// at or after it.
pub fn dynamics_stats(points: &[DynamicPoint], first_instruction_s: Option<f64>) -> DynamicsStats {
    let latency_s = first_instruction_s.and_then(|t0| {
        points
            .iter()
            .map(|p| p.time_s)
            .filter(|&t| t >= t0)
            .min_by(f64::total_cmp)
            .map(|t| t - t0)
    });
    DynamicsStats {
        frequency: points.len(),
        latency_s,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn series(values: &[f64]) -> Vec<(f64, f64)> {
        values.iter().enumerate().map(|(i, &v)| (i as f64 * 0.1, v)).collect()
    }

    fn pt(t: f64) -> DynamicPoint {
        DynamicPoint {
            time_s: t,
            derivative: 0.5,
        }
    }

    #[test]
    fn constant_series_has_no_points() {
        let pts = find_dynamic_points(&series(&[0.3, 0.3, 0.3]), &EmotionConfig::default()).unwrap();
        assert!(pts.is_empty());
    }

    #[test]
    fn single_step() {
        let pts =
            find_dynamic_points(&series(&[0.0, 0.0, 0.5, 0.5]), &EmotionConfig::default()).unwrap();
        assert_eq!(pts.len(), 1);
        assert_eq!(pts[0].derivative, 0.5);
        assert_eq!(pts[0].time_s, 0.2);
    }

    #[test]
    fn negative_steps_count() {
        let pts =
            find_dynamic_points(&series(&[0.5, 0.0, 0.1, -0.2]), &EmotionConfig::default()).unwrap();
        let d: Vec<f64> = pts.iter().map(|p| p.derivative).collect();
        assert_eq!(d.len(), 2);
        assert!((d[0] + 0.5).abs() < 1e-12);
        assert!((d[1] + 0.3).abs() < 1e-12);
    }

    #[test]
    fn threshold_is_strict() {
        let cfg = EmotionConfig {
            alpha: 0.25,
            ..Default::default()
        };
        assert!(find_dynamic_points(&series(&[0.0, 0.25, 0.0]), &cfg).unwrap().is_empty());
    }

    #[test]
    fn per_second_mode_divides_by_dt() {
        let cfg = EmotionConfig {
            alpha: 1.0,
            derivative_mode: DerivativeMode::PerSecond,
            ..Default::default()
        };
        let pts = find_dynamic_points(&series(&[0.0, 0.15]), &cfg).unwrap();
        assert_eq!(pts.len(), 1);
        assert!((pts[0].derivative - 1.5).abs() < 1e-9);
    }

    #[test]
    fn too_short_and_bad_config() {
        let cfg = EmotionConfig::default();
        assert!(matches!(
            find_dynamic_points(&series(&[0.1]), &cfg),
            Err(EmotionError::TooShort(1))
        ));
        let bad = EmotionConfig {
            alpha: 0.0,
            ..Default::default()
        };
        assert!(find_dynamic_points(&series(&[0.0, 1.0]), &bad).is_err());
    }

    #[test]
    fn merge_overlapping_and_disjoint() {
        let cfg = EmotionConfig::default();
        let merged = merge_segments(&[pt(1.0), pt(1.6)], &cfg, 10.0);
        assert_eq!(merged.len(), 1);
        assert_eq!((merged[0].start_s, merged[0].end_s), (0.5, 2.1));
        assert_eq!(merged[0].source_points.len(), 2);

        let split = merge_segments(&[pt(1.0), pt(3.0)], &cfg, 10.0);
        let spans: Vec<(f64, f64)> = split.iter().map(|s| (s.start_s, s.end_s)).collect();
        assert_eq!(spans, vec![(0.5, 1.5), (2.5, 3.5)]);
        assert_eq!(split[1].segment_id, 1);
    }

    #[test]
    fn touching_windows_merge() {
        let merged = merge_segments(&[pt(1.0), pt(2.0)], &EmotionConfig::default(), 10.0);
        assert_eq!(merged.len(), 1);
        assert_eq!((merged[0].start_s, merged[0].end_s), (0.5, 2.5));
    }

    #[test]
    fn clamped_to_session() {
        let merged = merge_segments(&[pt(0.2), pt(9.9)], &EmotionConfig::default(), 10.0);
        assert_eq!(merged[0].start_s, 0.0);
        assert_eq!(merged[1].end_s, 10.0);
    }

    #[test]
    fn stats_examples() {
        assert_eq!(
            dynamics_stats(&[], Some(3.0)),
            DynamicsStats {
                frequency: 0,
                latency_s: None
            }
        );
        let s = dynamics_stats(&[pt(8.0), pt(12.0)], Some(3.0));
        assert_eq!(s.frequency, 2);
        assert_eq!(s.latency_s, Some(5.0));
        assert_eq!(dynamics_stats(&[pt(1.0), pt(4.0)], Some(3.0)).latency_s, Some(1.0));
        assert_eq!(dynamics_stats(&[pt(1.0)], None).latency_s, None);
    }

    #[test]
    fn stub_descriptions_become_lines() {
        let segs = merge_segments(&[pt(1.0), pt(5.0)], &EmotionConfig::default(), 10.0);
        let (described, errors) = describe_segments("c1", &segs, None, &StubDescriber);
        assert!(errors.is_empty());
        let lines = emotion_lines(&described);
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0].timestamp_s, 0.5);
        assert_eq!(lines[0].text, "Emotional change of magnitude 0.50 at 1.0s.");
        assert_eq!(lines[1].origin, LineOrigin::Emotion { segment_id: 1 });
    }

    struct Down;
    impl Describer for Down {
        fn describe(&self, _: &DescribeRequest<'_>) -> Result<String, EmotionError> {
            Err(EmotionError::DescriberUnavailable("connection refused".into()))
        }
    }

    #[test]
    fn unavailable_describer_leaves_segments_bare() {
        let segs = merge_segments(&[pt(1.0), pt(5.0)], &EmotionConfig::default(), 10.0);
        let (described, errors) = describe_segments("c1", &segs, None, &Down);
        assert_eq!(errors.len(), 1);
        assert!(described.iter().all(|s| s.description.is_none()));
        assert!(emotion_lines(&described).is_empty());
    }

    proptest! {
        #[test]
        fn raising_alpha_never_adds_points(
            values in prop::collection::vec(-1.0f64..1.0, 2..200),
            a in 0.01f64..0.5,
            b in 0.01f64..0.5,
        ) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let s = series(&values);
            let n = |alpha| find_dynamic_points(&s, &EmotionConfig { alpha, ..Default::default() }).unwrap().len();
            prop_assert!(n(hi) <= n(lo));
        }

        #[test]
        fn merge_is_idempotent_and_covers_points(
            times in prop::collection::vec(0.0f64..30.0, 0..40),
        ) {
            let mut times = times;
            times.sort_by(f64::total_cmp);
            let pts: Vec<DynamicPoint> = times.iter().map(|&t| pt(t)).collect();
            let segs = merge_segments(&pts, &EmotionConfig::default(), 30.0);
            let spans: Vec<(f64, f64)> = segs.iter().map(|s| (s.start_s, s.end_s)).collect();
            prop_assert_eq!(merge_intervals(&spans), spans.clone());
            for w in spans.windows(2) {
                prop_assert!(w[0].1 < w[1].0);
            }
            for p in &pts {
                let hits = spans.iter().filter(|(s, e)| p.time_s >= *s && p.time_s <= *e).count();
                prop_assert_eq!(hits, 1);
            }
        }
    }
}
