//! Synthetic labeled sessions for desk-scale runs of the whole pipeline.
//!
//! Every session follows the same 192 s protocol covering all six
//! paradigms. Group profiles are set around the published group means for
//! response latency and duration and for emotional dynamic frequency and
//! latency: TD children respond more often, sooner and for longer, and
//! show more and larger valence changes than ASD children.

use rand::{Rng, RngCore, SeedableRng};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal, Poisson};
use serde::{Deserialize, Serialize};

use super::dataset::LabeledCase;
use crate::behavior_log::{
    BehaviorLog, Expression, FrameRecord, GazeTarget, Gender, Gesture, InstructionEvent, Paradigm,
    ParadigmSegment, PersonId, PersonState, RoiDecl, Role, SessionCode, SessionManifest,
    SpeechSegment, SCHEMA_VERSION,
};
use crate::Label;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub n_asd: usize,
    pub n_td: usize,
    pub seed: u64,
    pub fps: f64,
    /// Multiplier applied to the reference response latencies and chase
    /// durations so that most responses fall inside the script window.
    pub latency_scale: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_asd: 10,
            n_td: 10,
            seed: 0,
            fps: 10.0,
            latency_scale: 0.5,
        }
    }
}

/// Behavioral tendencies of one diagnostic group.
#[derive(Debug, Clone, Copy)]
struct Profile {
    respond_p: f64,
    speech_p: f64,
    smile_p: f64,
    smile_alone_p: f64,
    point_p: f64,
    precise_p: f64,
    share_p: f64,
    sustain_p: f64,
    wrong_look_p: f64,
    chase_p: f64,
    door_look_p: f64,
    look_latency_s: f64,
    point_latency_s: f64,
    chase_latency_s: f64,
    look_duration_s: f64,
    point_duration_s: f64,
    chase_duration_s: f64,
    episodes: f64,
    dynamic_latency_s: f64,
    jump: (f64, f64),
}

const TD: Profile = Profile {
    respond_p: 0.9,
    speech_p: 0.6,
    smile_p: 0.8,
    smile_alone_p: 0.05,
    point_p: 0.7,
    precise_p: 0.6,
    share_p: 0.5,
    sustain_p: 0.4,
    wrong_look_p: 0.5,
    chase_p: 0.7,
    door_look_p: 0.5,
    look_latency_s: 4.9932,
    point_latency_s: 8.5822,
    chase_latency_s: 5.4036,
    look_duration_s: 1.6503,
    point_duration_s: 0.4355,
    chase_duration_s: 10.3385,
    episodes: 9.1150,
    dynamic_latency_s: 5.7320,
    jump: (0.2, 0.4),
};

const ASD: Profile = Profile {
    respond_p: 0.4,
    speech_p: 0.15,
    smile_p: 0.3,
    smile_alone_p: 0.2,
    point_p: 0.25,
    precise_p: 0.3,
    share_p: 0.1,
    sustain_p: 0.15,
    wrong_look_p: 0.5,
    chase_p: 0.3,
    door_look_p: 0.3,
    look_latency_s: 5.6257,
    point_latency_s: 10.2493,
    chase_latency_s: 10.0498,
    look_duration_s: 1.3006,
    point_duration_s: 0.2025,
    chase_duration_s: 16.2931,
    episodes: 6.8513,
    dynamic_latency_s: 6.7456,
    jump: (0.2, 0.32),
};

const DURATION_S: f64 = 192.0;
const CHILD_HOME: [f64; 2] = [320.0, 400.0];
const DOOR: [f64; 2] = [600.0, 120.0];
const PARENT_LEAVES: (f64, f64) = (165.0, 185.0);

/// `(paradigm, start, end, [(code, time, target)])`
type Block = (Paradigm, f64, f64, &'static [(u8, f64, Option<&'static str>)]);

const LAYOUT: [Block; 6] = [
    (Paradigm::RN, 0.0, 28.0, &[(1, 4.0, Some("parent")), (2, 16.0, None)]),
    (
        Paradigm::SS,
        28.0,
        70.0,
        &[(3, 31.0, None), (4, 41.0, None), (5, 51.0, None), (6, 61.0, Some("parent"))],
    ),
    (
        Paradigm::IG,
        70.0,
        112.0,
        &[
            (7, 72.0, Some("flower")),
            (8, 82.0, Some("tree")),
            (9, 92.0, Some("balloon")),
            (10, 102.0, Some("sofa")),
        ],
    ),
    (Paradigm::RJA, 112.0, 124.0, &[(11, 114.0, Some("clock"))]),
    (
        Paradigm::IJA,
        124.0,
        162.0,
        &[
            (12, 126.0, Some("left_wall")),
            (13, 138.0, Some("right_wall")),
            (14, 150.0, Some("back_wall")),
        ],
    ),
    (Paradigm::SA, 162.0, 192.0, &[(15, 164.0, None), (16, 178.0, None)]),
];

const ROIS: [&str; 12] = [
    "doctor", "parent", "door", "toy", "flower", "tree", "balloon", "sofa", "clock", "left_wall",
    "right_wall", "back_wall",
];

fn child_id() -> PersonId {
    PersonId::new(Role::Child, "kid")
}
fn parent_id() -> PersonId {
    PersonId::new(Role::Parent, "mom")
}
fn doctor_id() -> PersonId {
    PersonId::new(Role::Doctor, "doc")
}

/// Mutable per-frame plan for the child.
struct Plan {
    fps: f64,
    gaze: Vec<(&'static str, f64)>,
    expression: Vec<Expression>,
    pointing: Vec<Option<&'static str>>,
    position: Vec<[f64; 2]>,
    speech: Vec<SpeechSegment>,
}

impl Plan {
    fn new(n: usize, fps: f64) -> Self {
        Self {
            fps,
            gaze: vec![("toy", 4.0); n],
            expression: vec![Expression::Neutral; n],
            pointing: vec![None; n],
            position: vec![CHILD_HOME; n],
            speech: Vec::new(),
        }
    }

    fn frames(&self, t0: f64, t1: f64) -> std::ops::Range<usize> {
        let n = self.gaze.len();
        let a = ((t0 * self.fps).round().max(0.0) as usize).min(n);
        let b = ((t1 * self.fps).round().max(0.0) as usize).min(n);
        a..b.max(a)
    }

    fn look(&mut self, roi: &'static str, t0: f64, t1: f64, angle: f64) {
        for i in self.frames(t0, t1) {
            self.gaze[i] = (roi, angle);
        }
    }

    fn smile(&mut self, t0: f64, t1: f64) {
        for i in self.frames(t0, t1) {
            self.expression[i] = Expression::Happy;
        }
    }

    fn point(&mut self, roi: &'static str, t0: f64, t1: f64, angle: f64) {
        for i in self.frames(t0, t1) {
            self.pointing[i] = Some(roi);
            self.gaze[i] = (roi, angle);
        }
    }

    fn say(&mut self, t0: f64, t1: f64, text: &str) {
        self.speech.push(SpeechSegment {
            speaker: child_id(),
            start_s: t0,
            end_s: t1,
            text: text.into(),
        });
    }

    /// Straight-line walk to `to` over `[t0, t1]`, staying there afterwards.
    fn walk(&mut self, to: [f64; 2], t0: f64, t1: f64) {
        let r = self.frames(t0, t1);
        let (a, b) = (r.start, r.end);
        if b <= a {
            return;
        }
        let from = self.position[a];
        for i in a..self.position.len() {
            let f = ((i - a + 1) as f64 / (b - a) as f64).min(1.0);
            self.position[i] = [from[0] + f * (to[0] - from[0]), from[1] + f * (to[1] - from[1])];
        }
    }
}

struct Sampler {
    rng: ChaCha8Rng,
}

impl Sampler {
    fn chance(&mut self, p: f64) -> bool {
        self.rng.random_bool(p.clamp(0.0, 1.0))
    }

    fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        self.rng.random_range(lo..hi)
    }

    /// Log-normal with the given mean and log-scale spread.
    fn around(&mut self, mean: f64, sigma: f64) -> f64 {
        let mu = mean.ln() - sigma * sigma / 2.0;
        LogNormal::new(mu, sigma).expect("valid lognormal").sample(&mut self.rng)
    }
}

fn plan_responses(plan: &mut Plan, p: &Profile, s: &mut Sampler, scale: f64) {
    for (paradigm, _, _, instructions) in LAYOUT {
        for &(_, t, target) in instructions {
            let look_lat = (s.around(p.look_latency_s * scale, 0.3)).clamp(0.4, 4.4);
            let look_dur = s.around(p.look_duration_s, 0.25).clamp(0.4, 3.0);
            let angle = s.uniform(2.0, 10.0);
            let (t0, t1) = (t + look_lat, t + look_lat + look_dur);
            match paradigm {
                Paradigm::RN => {
                    if s.chance(p.respond_p) {
                        plan.look(target.unwrap_or("doctor"), t0, t1, angle);
                        if s.chance(p.speech_p) {
                            plan.say(t0 + 0.2, t0 + 1.0, "hello");
                        }
                    }
                }
                Paradigm::SS => {
                    if s.chance(p.respond_p) {
                        plan.look(target.unwrap_or("doctor"), t0, t1, angle);
                        if s.chance(p.smile_p) {
                            plan.smile(t0 + 0.1, t0 + look_dur.max(0.8));
                        }
                    } else if s.chance(p.smile_alone_p) {
                        plan.smile(t0, t0 + 0.8);
                    }
                }
                Paradigm::IG | Paradigm::IJA => {
                    let roi = target.expect("IG/IJA instructions have targets");
                    if s.chance(p.respond_p) {
                        let dur = if paradigm == Paradigm::IG && s.chance(p.sustain_p) {
                            s.uniform(2.2, 3.0)
                        } else {
                            look_dur.min(1.9)
                        };
                        plan.look(roi, t0, t0 + dur, angle);
                        let mut end = t0 + dur;
                        if s.chance(p.point_p) {
                            let lat = s.around(p.point_latency_s * scale, 0.3).clamp(look_lat + 0.1, 8.0);
                            let pdur = s.around(p.point_duration_s, 0.2).clamp(0.2, 1.0);
                            let pangle = if s.chance(p.precise_p) {
                                s.uniform(2.0, 8.0)
                            } else {
                                s.uniform(12.0, 15.0)
                            };
                            plan.point(roi, t + lat, t + lat + pdur, pangle);
                            end = end.max(t + lat + pdur);
                        }
                        if s.chance(p.share_p) {
                            plan.look("doctor", end + 0.2, end + 1.0, s.uniform(2.0, 8.0));
                        }
                    }
                }
                Paradigm::RJA => {
                    if s.chance(p.respond_p) {
                        plan.look(target.expect("RJA target"), t0, t1, angle);
                    } else if s.chance(p.wrong_look_p) {
                        plan.look("door", t0, t1, angle);
                    }
                }
                Paradigm::SA => {
                    if target.is_some() || t > PARENT_LEAVES.0 + 5.0 {
                        continue;
                    }
                    if s.chance(p.chase_p) {
                        let lat = s.around(p.chase_latency_s * scale, 0.3).clamp(1.5, 9.0);
                        let dur = s.around(p.chase_duration_s * scale, 0.25).clamp(3.0, 12.0);
                        plan.walk(DOOR, t + lat, t + lat + dur);
                        plan.look("door", t + lat, t + lat + dur, s.uniform(2.0, 8.0));
                    } else if s.chance(p.door_look_p) {
                        plan.look("door", t0, t1, angle);
                    }
                }
            }
        }
    }
}

/// Valence and arousal with emotional episodes: a one-frame jump followed
/// by a slow return to baseline, on top of small autocorrelated noise.
fn affect_series(n: usize, fps: f64, p: &Profile, s: &mut Sampler) -> (Vec<Option<f64>>, Vec<Option<f64>>) {
    let k = Poisson::new(p.episodes).expect("positive rate").sample(&mut s.rng) as usize;
    let first_instruction = LAYOUT[0].3[0].1;
    let mut onsets: Vec<f64> = Vec::with_capacity(k);
    if k > 0 {
        onsets.push(first_instruction + s.around(p.dynamic_latency_s, 0.3));
    }
    for _ in 1..k {
        onsets.push(s.uniform(first_instruction, DURATION_S - 2.0));
    }
    let decay = (2.0 * fps) as usize;
    let mut offset = vec![0.0; n];
    for t in onsets {
        let f = (t * fps).round() as usize;
        if f == 0 || f >= n {
            continue;
        }
        let sign = if s.chance(0.6) { 1.0 } else { -1.0 };
        let jump = sign * s.uniform(p.jump.0, p.jump.1);
        for (j, o) in offset[f..].iter_mut().take(decay).enumerate() {
            *o += jump * (1.0 - j as f64 / decay as f64);
        }
    }
    let noise = Normal::new(0.0, 0.008).expect("valid normal");
    let base_v = s.uniform(-0.03, 0.05);
    let base_a = s.uniform(-0.03, 0.03);
    let (mut nv, mut na) = (0.0f64, 0.0f64);
    let mut valence = Vec::with_capacity(n);
    let mut arousal = Vec::with_capacity(n);
    for o in offset {
        nv = 0.8 * nv + noise.sample(&mut s.rng);
        na = 0.8 * na + noise.sample(&mut s.rng);
        if s.chance(0.01) {
            valence.push(None);
            arousal.push(None);
        } else {
            valence.push(Some((base_v + o + nv).clamp(-1.0, 1.0)));
            arousal.push(Some((base_a + 0.5 * o.abs() + na).clamp(-1.0, 1.0)));
        }
    }
    (valence, arousal)
}

fn manifest(case_id: &str, gender: Gender, age: u32, fps: f64) -> SessionManifest {
    SessionManifest {
        schema_version: SCHEMA_VERSION.to_string(),
        case_id: case_id.to_string(),
        child_gender: gender,
        child_age_months: age,
        fps,
        participants: vec![child_id(), parent_id(), doctor_id()],
        rois: ROIS
            .iter()
            .map(|&name| RoiDecl {
                name: name.to_string(),
                anchor_px: (name == "door").then_some(DOOR),
            })
            .collect(),
        paradigms: LAYOUT
            .iter()
            .map(|&(paradigm, start_s, end_s, ins)| ParadigmSegment {
                paradigm,
                start_s,
                end_s,
                instructions: ins
                    .iter()
                    .map(|&(code, time_s, target)| InstructionEvent {
                        session_code: SessionCode::new(code).expect("valid code"),
                        time_s,
                        target_roi: target.map(str::to_string),
                    })
                    .collect(),
            })
            .collect(),
    }
}

fn synth_case(case_id: &str, label: Label, seed: u64, spec: &SynthSpec) -> LabeledCase {
    let mut s = Sampler {
        rng: ChaCha8Rng::seed_from_u64(seed),
    };
    let profile = match label {
        Label::ASD => ASD,
        Label::TD => TD,
    };
    let fps = spec.fps;
    let n = (DURATION_S * fps).round() as usize;
    let gender = if s.chance(0.5) { Gender::Male } else { Gender::Female };
    let age = s.rng.random_range(18..=36);

    let mut plan = Plan::new(n, fps);
    plan_responses(&mut plan, &profile, &mut s, spec.latency_scale);
    let (valence, arousal) = affect_series(n, fps, &profile, &mut s);

    let frames = (0..n)
        .map(|i| {
            let t = i as f64 / fps;
            let (roi, angle) = plan.gaze[i];
            let child = PersonState {
                position_px: Some(plan.position[i]),
                gaze_target: GazeTarget::ObjectRoi(roi.to_string()),
                gaze_angle_deg: Some(angle),
                expression: plan.expression[i],
                valence: valence[i],
                arousal: arousal[i],
                gesture: if plan.pointing[i].is_some() {
                    Gesture::Pointing
                } else {
                    Gesture::None
                },
                pointing_target: plan.pointing[i].map(str::to_string),
                ..PersonState::present(child_id())
            };
            let parent = if t >= PARENT_LEAVES.0 && t < PARENT_LEAVES.1 {
                PersonState::absent(parent_id())
            } else {
                PersonState {
                    position_px: Some([500.0, 420.0]),
                    ..PersonState::present(parent_id())
                }
            };
            let doctor = PersonState {
                position_px: Some([120.0, 220.0]),
                ..PersonState::present(doctor_id())
            };
            FrameRecord {
                frame_index: i as u64,
                timestamp_s: t,
                persons: vec![child, parent, doctor],
            }
        })
        .collect();

    let mut speech = plan.speech;
    speech.push(SpeechSegment {
        speaker: parent_id(),
        start_s: 178.5,
        end_s: 181.5,
        text: "Hi, mom is leaving. You have to play alone.".into(),
    });
    speech.sort_by(|a, b| a.start_s.total_cmp(&b.start_s));

    LabeledCase {
        log: BehaviorLog {
            case_id: case_id.to_string(),
            fps,
            frames,
            speech,
        },
        manifest: manifest(case_id, gender, age, fps),
        label,
    }
}

/// Generates `n_asd + n_td` sessions. Labels are shuffled over case ids so
/// ids carry no label information. Identical specs give identical output.
pub fn synth_dataset(spec: &SynthSpec) -> Vec<LabeledCase> {
    let mut master = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut labels: Vec<Label> = std::iter::repeat_n(Label::ASD, spec.n_asd)
        .chain(std::iter::repeat_n(Label::TD, spec.n_td))
        .collect();
    labels.shuffle(&mut master);
    let width = labels.len().max(1).to_string().len().max(3);
    labels
        .into_iter()
        .enumerate()
        .map(|(i, label)| {
            let id = format!("case_{:0width$}", i + 1);
            synth_case(&id, label, master.next_u64(), spec)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::behavior_log::{log_to_jsonl, manifest_to_json, validate_pair};

    #[test]
    fn deterministic_per_seed() {
        let spec = SynthSpec {
            n_asd: 2,
            n_td: 2,
            seed: 7,
            ..Default::default()
        };
        let a = synth_dataset(&spec);
        let b = synth_dataset(&spec);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(log_to_jsonl(&x.log), log_to_jsonl(&y.log));
            assert_eq!(manifest_to_json(&x.manifest), manifest_to_json(&y.manifest));
        }
        let c = synth_dataset(&SynthSpec { seed: 8, ..spec });
        assert_ne!(log_to_jsonl(&a[0].log), log_to_jsonl(&c[0].log));
    }

    #[test]
    fn generated_sessions_validate() {
        for case in synth_dataset(&SynthSpec {
            n_asd: 3,
            n_td: 3,
            seed: 1,
            ..Default::default()
        }) {
            validate_pair(&case.log, &case.manifest).unwrap();
            assert_eq!(case.log.duration_s(), DURATION_S);
        }
    }

    #[test]
    fn label_counts() {
        let cases = synth_dataset(&SynthSpec {
            n_asd: 7,
            n_td: 3,
            seed: 3,
            ..Default::default()
        });
        assert_eq!(cases.iter().filter(|c| c.label == Label::ASD).count(), 7);
        assert_eq!(cases[9].manifest.case_id, "case_010");
    }
}
