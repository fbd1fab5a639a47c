use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Closed set of participant roles in an assessment room.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Child,
    Doctor,
    Parent,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Child => "child",
            Role::Doctor => "doctor",
            Role::Parent => "parent",
        }
    }
}

impl FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "child" => Ok(Role::Child),
            "doctor" => Ok(Role::Doctor),
            "parent" => Ok(Role::Parent),
            other => Err(format!("unknown role `{other}`")),
        }
    }
}

/// A participant identity, serialized compactly as `role:label`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct PersonId {
    pub role: Role,
    pub label: String,
}

impl PersonId {
    pub fn new(role: Role, label: impl Into<String>) -> Self {
        Self {
            role,
            label: label.into(),
        }
    }

    pub fn is_child(&self) -> bool {
        self.role == Role::Child
    }
}

impl fmt::Display for PersonId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.role.as_str(), self.label)
    }
}

impl TryFrom<String> for PersonId {
    type Error = String;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        let (role, label) = value
            .split_once(':')
            .ok_or_else(|| format!("person id `{value}` is not of the form role:label"))?;
        if label.is_empty() {
            return Err(format!("person id `{value}` has an empty label"));
        }
        Ok(PersonId::new(role.parse()?, label))
    }
}

impl From<PersonId> for String {
    fn from(id: PersonId) -> Self {
        id.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GazeTarget {
    ObjectRoi(String),
    Person(PersonId),
    #[default]
    None,
}

impl GazeTarget {
    pub fn is_none(&self) -> bool {
        matches!(self, GazeTarget::None)
    }

    pub fn roi(&self) -> Option<&str> {
        match self {
            GazeTarget::ObjectRoi(name) => Some(name),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expression {
    #[default]
    Neutral,
    Happy,
    Sad,
}

impl Expression {
    fn is_neutral(&self) -> bool {
        *self == Expression::Neutral
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gesture {
    #[default]
    None,
    Pointing,
    HandRaise,
    Other,
}

impl Gesture {
    fn is_none(&self) -> bool {
        *self == Gesture::None
    }
}

/// One person's perceived state in one frame.
///
/// Fields at their default value are omitted on serialization, so a person
/// who is absent serializes as just `{"person": "...", "present": false}`.
/// `valence`/`arousal` are `None` when no face was scored in that frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PersonState {
    pub person: PersonId,
    pub present: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position_px: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "GazeTarget::is_none")]
    pub gaze_target: GazeTarget,
    /// Angle between the gaze ray and the ray to the gaze target's centroid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gaze_angle_deg: Option<f64>,
    #[serde(default, skip_serializing_if = "Expression::is_neutral")]
    pub expression: Expression,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub valence: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arousal: Option<f64>,
    #[serde(default, skip_serializing_if = "Gesture::is_none")]
    pub gesture: Gesture,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pointing_target: Option<String>,
}

impl PersonState {
    pub fn absent(person: PersonId) -> Self {
        Self {
            person,
            present: false,
            position_px: None,
            gaze_target: GazeTarget::None,
            gaze_angle_deg: None,
            expression: Expression::Neutral,
            valence: None,
            arousal: None,
            gesture: Gesture::None,
            pointing_target: None,
        }
    }

    pub fn present(person: PersonId) -> Self {
        Self {
            present: true,
            ..Self::absent(person)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameRecord {
    pub frame_index: u64,
    pub timestamp_s: f64,
    pub persons: Vec<PersonState>,
}

impl FrameRecord {
    pub fn state_of(&self, person: &PersonId) -> Option<&PersonState> {
        self.persons.iter().find(|p| &p.person == person)
    }

    /// The present child's state, if any.
    pub fn child(&self) -> Option<&PersonState> {
        self.persons
            .iter()
            .find(|p| p.person.is_child() && p.present)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeechSegment {
    pub speaker: PersonId,
    pub start_s: f64,
    pub end_s: f64,
    pub text: String,
}

/// Per-frame, per-person perception records for one session.
#[derive(Debug, Clone, PartialEq)]
pub struct BehaviorLog {
    pub case_id: String,
    pub fps: f64,
    pub frames: Vec<FrameRecord>,
    pub speech: Vec<SpeechSegment>,
}

impl BehaviorLog {
    /// Session length in seconds: every frame covers `1 / fps`.
    pub fn duration_s(&self) -> f64 {
        self.frames.len() as f64 / self.fps
    }

    pub fn frame_period_s(&self) -> f64 {
        1.0 / self.fps
    }

    pub fn child_id(&self) -> Option<&PersonId> {
        self.frames
            .iter()
            .flat_map(|f| f.persons.iter())
            .map(|p| &p.person)
            .find(|p| p.is_child())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gender {
    Male,
    Female,
}

impl Gender {
    /// Noun used in the script preamble.
    pub fn noun(self) -> &'static str {
        match self {
            Gender::Male => "boy",
            Gender::Female => "girl",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Paradigm {
    /// Response to name.
    RN,
    /// Social smile.
    SS,
    /// Indicating gesture.
    IG,
    /// Responding to joint attention.
    RJA,
    /// Initiating joint attention.
    IJA,
    /// Separation anxiety.
    SA,
}

impl Paradigm {
    pub const ALL: [Paradigm; 6] = [
        Paradigm::RN,
        Paradigm::SS,
        Paradigm::IG,
        Paradigm::RJA,
        Paradigm::IJA,
        Paradigm::SA,
    ];

    /// Session codes (`P1`..`P16`) that belong to this paradigm.
    pub fn session_codes(self) -> std::ops::RangeInclusive<u8> {
        match self {
            Paradigm::RN => 1..=2,
            Paradigm::SS => 3..=6,
            Paradigm::IG => 7..=10,
            Paradigm::RJA => 11..=11,
            Paradigm::IJA => 12..=14,
            Paradigm::SA => 15..=16,
        }
    }

    /// Whether instructions in this paradigm must name a target object.
    pub fn requires_target(self) -> bool {
        matches!(self, Paradigm::IG | Paradigm::RJA | Paradigm::IJA)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Paradigm::RN => "RN",
            Paradigm::SS => "SS",
            Paradigm::IG => "IG",
            Paradigm::RJA => "RJA",
            Paradigm::IJA => "IJA",
            Paradigm::SA => "SA",
        }
    }
}

impl fmt::Display for Paradigm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Paradigm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Paradigm::ALL
            .into_iter()
            .find(|p| p.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown paradigm `{s}`"))
    }
}

/// Instruction session code `P1`..`P16`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct SessionCode(u8);

impl SessionCode {
    pub fn new(n: u8) -> Option<Self> {
        (1..=16).contains(&n).then_some(SessionCode(n))
    }

    pub fn number(self) -> u8 {
        self.0
    }

    pub fn paradigm(self) -> Paradigm {
        Paradigm::ALL
            .into_iter()
            .find(|p| p.session_codes().contains(&self.0))
            .expect("session code in 1..=16 always maps to a paradigm")
    }
}

impl fmt::Display for SessionCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "P{}", self.0)
    }
}

impl FromStr for SessionCode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.strip_prefix('P')
            .or_else(|| s.strip_prefix('p'))
            .and_then(|n| n.parse::<u8>().ok())
            .and_then(SessionCode::new)
            .ok_or_else(|| format!("invalid session code `{s}` (expected P1..P16)"))
    }
}

impl TryFrom<String> for SessionCode {
    type Error = String;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        value.parse()
    }
}

impl From<SessionCode> for String {
    fn from(code: SessionCode) -> Self {
        code.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstructionEvent {
    pub session_code: SessionCode,
    pub time_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_roi: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParadigmSegment {
    pub paradigm: Paradigm,
    pub start_s: f64,
    pub end_s: f64,
    pub instructions: Vec<InstructionEvent>,
}

impl ParadigmSegment {
    pub fn contains(&self, t: f64) -> bool {
        t >= self.start_s && t <= self.end_s
    }
}

/// A named object of interest in the room (pictures, door, toys, or a
/// person treated as a gaze target). The optional anchor is only used by
/// motion heuristics such as chase detection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoiDecl {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor_px: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionManifest {
    pub schema_version: String,
    pub case_id: String,
    pub child_gender: Gender,
    pub child_age_months: u32,
    pub fps: f64,
    pub participants: Vec<PersonId>,
    #[serde(default)]
    pub rois: Vec<RoiDecl>,
    pub paradigms: Vec<ParadigmSegment>,
}

impl SessionManifest {
    pub fn child(&self) -> Option<&PersonId> {
        self.participants.iter().find(|p| p.is_child())
    }

    pub fn roi(&self, name: &str) -> Option<&RoiDecl> {
        self.rois.iter().find(|r| r.name == name)
    }

    /// The paradigm segment containing `t`, if any.
    pub fn paradigm_at(&self, t: f64) -> Option<&ParadigmSegment> {
        self.paradigms.iter().find(|p| p.contains(t))
    }

    /// All instructions with their paradigm, in manifest order.
    pub fn instructions(&self) -> impl Iterator<Item = (&ParadigmSegment, &InstructionEvent)> {
        self.paradigms
            .iter()
            .flat_map(|p| p.instructions.iter().map(move |i| (p, i)))
    }

    pub fn first_instruction_time(&self) -> Option<f64> {
        self.instructions()
            .map(|(_, i)| i.time_s)
            .min_by(f64::total_cmp)
    }
}
