//! Assembles the detection prompt: system prompt, optional labeled example
//! scripts, the case script, the domain prompt (diagnostic knowledge and
//! clinical experience), and the answer-format constraint. Also parses the
//! label back out of a model answer.

use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::script_compiler::ScriptDocument;
use crate::Label;

pub const EXAMPLES_HEADING: &str = "## Example scripts";
pub const SCRIPT_HEADING: &str = "## Behavior script";
pub const DOMAIN_HEADING: &str = "## Domain knowledge and experience";
pub const FORMAT_HEADING: &str = "## Answer format";

const DEFAULT_SYSTEM: &str = include_str!("../templates/system.txt");
const DEFAULT_DOMAIN_KNOWLEDGE: &str = include_str!("../templates/domain_knowledge.txt");
const DEFAULT_HUMAN_EXPERIENCE: &str = include_str!("../templates/human_experience.txt");
const DEFAULT_FORMAT: &str = include_str!("../templates/format.txt");

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("prompt needs {required} characters but the budget is {available}")]
    ContextOverflow { required: usize, available: usize },
    #[error("{given} exemplars given, at most {max} allowed")]
    TooManyExemplars { given: usize, max: usize },
    #[error("no ASD/TD label found in answer")]
    UnparseableVerdict,
    #[error("reading template {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Editable prompt text. Each field is one template file.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplates {
    pub system: String,
    pub domain_knowledge: String,
    pub human_experience: String,
    pub format: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            system: DEFAULT_SYSTEM.trim_end().to_string(),
            domain_knowledge: DEFAULT_DOMAIN_KNOWLEDGE.trim_end().to_string(),
            human_experience: DEFAULT_HUMAN_EXPERIENCE.trim_end().to_string(),
            format: DEFAULT_FORMAT.trim_end().to_string(),
        }
    }
}

impl PromptTemplates {
    /// Reads `system.txt`, `domain_knowledge.txt`, `human_experience.txt`
    /// and `format.txt` from `dir`; missing files keep the bundled text.
    pub fn from_dir(dir: &Path) -> Result<Self, PromptError> {
        let mut t = Self::default();
        for (name, slot) in [
            ("system.txt", &mut t.system),
            ("domain_knowledge.txt", &mut t.domain_knowledge),
            ("human_experience.txt", &mut t.human_experience),
            ("format.txt", &mut t.format),
        ] {
            let path = dir.join(name);
            match std::fs::read_to_string(&path) {
                Ok(s) => *slot = s.trim_end().to_string(),
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
                Err(source) => {
                    return Err(PromptError::Io {
                        path: path.display().to_string(),
                        source,
                    })
                }
            }
        }
        Ok(t)
    }
}

/// Which optional prompt parts are included.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptProfile {
    pub use_domain_knowledge: bool,
    pub use_human_experience: bool,
    pub use_emotion_lines: bool,
}

impl Default for PromptProfile {
    fn default() -> Self {
        Self {
            use_domain_knowledge: true,
            use_human_experience: true,
            use_emotion_lines: true,
        }
    }
}

impl PromptProfile {
    pub fn all_off() -> Self {
        Self {
            use_domain_knowledge: false,
            use_human_experience: false,
            use_emotion_lines: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExemplarOrder {
    /// Alternate labels starting with ASD.
    #[default]
    AsdFirst,
    /// Alternate labels starting with TD.
    TdFirst,
    AsGiven,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptConfig {
    pub profile: PromptProfile,
    pub max_exemplars: usize,
    pub exemplar_order: ExemplarOrder,
    /// Upper bound on the rendered prompt, in characters.
    pub context_budget_chars: usize,
}

impl Default for PromptConfig {
    fn default() -> Self {
        Self {
            profile: PromptProfile::default(),
            max_exemplars: 20,
            exemplar_order: ExemplarOrder::default(),
            context_budget_chars: 200_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Exemplar {
    pub script: ScriptDocument,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderedExemplar {
    pub script_text: String,
    pub label: Label,
}

/// The rendered prompt parts. `domain_text` is empty when both domain
/// subsections are disabled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system_text: String,
    pub exemplars: Vec<RenderedExemplar>,
    pub script_text: String,
    pub domain_text: String,
    pub format_text: String,
}

impl PromptBundle {
    /// Everything after the system prompt, in section order.
    pub fn user_text(&self) -> String {
        let mut sections = Vec::new();
        if !self.exemplars.is_empty() {
            let mut block = String::from(EXAMPLES_HEADING);
            for (i, ex) in self.exemplars.iter().enumerate() {
                block.push_str(&format!(
                    "\n\n### Example {}\n{}\nJudgment: {}",
                    i + 1,
                    ex.script_text.trim_end(),
                    ex.label
                ));
            }
            sections.push(block);
        }
        sections.push(format!("{SCRIPT_HEADING}\n{}", self.script_text.trim_end()));
        if !self.domain_text.is_empty() {
            sections.push(format!("{DOMAIN_HEADING}\n{}", self.domain_text));
        }
        sections.push(format!("{FORMAT_HEADING}\n{}", self.format_text));
        sections.join("\n\n") + "\n"
    }

    /// The full prompt as one text, system prompt first.
    pub fn render(&self) -> String {
        format!("{}\n\n{}", self.system_text, self.user_text())
    }
}

/// Orders exemplars; interleaving alternates labels while either class has
/// entries left, keeping each class's input order.
pub fn order_exemplars(exemplars: &[Exemplar], order: ExemplarOrder) -> Vec<&Exemplar> {
    let first = match order {
        ExemplarOrder::AsGiven => return exemplars.iter().collect(),
        ExemplarOrder::AsdFirst => Label::ASD,
        ExemplarOrder::TdFirst => Label::TD,
    };
    let mut a = exemplars.iter().filter(|e| e.label == first).peekable();
    let mut b = exemplars.iter().filter(|e| e.label != first).peekable();
    let mut out = Vec::with_capacity(exemplars.len());
    while a.peek().is_some() || b.peek().is_some() {
        out.extend(a.next());
        out.extend(b.next());
    }
    out
}

fn script_text(script: &ScriptDocument, profile: &PromptProfile) -> String {
    if profile.use_emotion_lines {
        script.render()
    } else {
        script.without_emotion_lines().render()
    }
}

pub fn build_prompt(
    script: &ScriptDocument,
    exemplars: &[Exemplar],
    templates: &PromptTemplates,
    cfg: &PromptConfig,
) -> Result<PromptBundle, PromptError> {
    if exemplars.len() > cfg.max_exemplars {
        return Err(PromptError::TooManyExemplars {
            given: exemplars.len(),
            max: cfg.max_exemplars,
        });
    }
    let profile = &cfg.profile;
    let mut domain = Vec::new();
    if profile.use_domain_knowledge {
        domain.push(format!("### Diagnostic criteria\n{}", templates.domain_knowledge));
    }
    if profile.use_human_experience {
        domain.push(format!("### Clinical experience\n{}", templates.human_experience));
    }
    let bundle = PromptBundle {
        system_text: templates.system.clone(),
        exemplars: order_exemplars(exemplars, cfg.exemplar_order)
            .into_iter()
            .map(|e| RenderedExemplar {
                script_text: script_text(&e.script, profile),
                label: e.label,
            })
            .collect(),
        script_text: script_text(script, profile),
        domain_text: domain.join("\n\n"),
        format_text: templates.format.clone(),
    };
    let required = bundle.render().chars().count();
    if required > cfg.context_budget_chars {
        return Err(PromptError::ContextOverflow {
            required,
            available: cfg.context_budget_chars,
        });
    }
    Ok(bundle)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub label: Label,
    pub rationale: String,
}

static JUDGMENT: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)judge?ment\W{0,3}[:：]\W{0,3}(ASD|TD)\b").expect("valid regex")
});
static TOKEN: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\b(ASD|TD)\b").expect("valid regex"));

/// Extracts the label from a model answer. The last `Judgment: <label>`
/// wins; without one, the last bare ASD/TD token is used. The rationale is
/// the answer with the judgment removed.
pub fn parse_verdict(raw: &str) -> Result<Verdict, PromptError> {
    let found = JUDGMENT
        .captures_iter(raw)
        .last()
        .map(|c| (c.get(0).expect("match").range(), c[1].to_string()));
    let (label, rationale) = match found {
        Some((range, label)) => {
            let rationale = format!("{}{}", &raw[..range.start], &raw[range.end..]);
            (label, rationale)
        }
        None => {
            let m = TOKEN.find_iter(raw).last().ok_or(PromptError::UnparseableVerdict)?;
            (m.as_str().to_string(), raw.to_string())
        }
    };
    Ok(Verdict {
        label: label.parse().map_err(|_| PromptError::UnparseableVerdict)?,
        rationale: rationale.trim().to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::script_compiler::{LineOrigin, ScriptLine};

    fn doc(id: &str, emotion: bool) -> ScriptDocument {
        let mut lines = vec![ScriptLine {
            timestamp_s: 2.0,
            text: "The doctor called out the child's name.".into(),
            origin: LineOrigin::Instruction {
                session_code: crate::behavior_log::SessionCode::new(2).unwrap(),
            },
        }];
        if emotion {
            lines.push(ScriptLine {
                timestamp_s: 3.0,
                text: "The child looks delighted.".into(),
                origin: LineOrigin::Emotion { segment_id: 0 },
            });
        }
        ScriptDocument {
            case_id: id.into(),
            preamble: "The child is a 24-month-old boy.".into(),
            lines,
        }
    }

    fn build(profile: PromptProfile) -> PromptBundle {
        build_prompt(
            &doc("c", true),
            &[],
            &PromptTemplates::default(),
            &PromptConfig {
                profile,
                ..Default::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn parts_in_order() {
        let text = build(PromptProfile::default()).render();
        let pos = |s: &str| text.find(s).unwrap_or_else(|| panic!("missing {s}"));
        assert_eq!(pos("You are an experienced"), 0);
        assert!(pos(SCRIPT_HEADING) < pos(DOMAIN_HEADING));
        assert!(pos(DOMAIN_HEADING) < pos(FORMAT_HEADING));
        assert!(text.contains("[00:03] The child looks delighted."));
        assert!(text.trim_end().ends_with("Judgment: TD"));
    }

    #[test]
    fn all_off_profile() {
        let b = build(PromptProfile::all_off());
        assert!(b.domain_text.is_empty());
        let text = b.render();
        assert!(!text.contains(DOMAIN_HEADING));
        assert!(!text.contains("delighted"));
        assert!(text.contains(SCRIPT_HEADING) && text.contains(FORMAT_HEADING));
    }

    #[test]
    fn toggles_touch_only_their_region() {
        let base = build(PromptProfile::default());
        let no_exp = build(PromptProfile {
            use_human_experience: false,
            ..Default::default()
        });
        assert_eq!(base.script_text, no_exp.script_text);
        assert_eq!(base.system_text, no_exp.system_text);
        assert_eq!(base.format_text, no_exp.format_text);
        assert_ne!(base.domain_text, no_exp.domain_text);
        let no_emo = build(PromptProfile {
            use_emotion_lines: false,
            ..Default::default()
        });
        assert_eq!(base.domain_text, no_emo.domain_text);
        assert_ne!(base.script_text, no_emo.script_text);
    }

    #[test]
    fn twenty_exemplars_alternate() {
        let exemplars: Vec<Exemplar> = (0..20)
            .map(|i| Exemplar {
                script: doc(&format!("e{i}"), false),
                label: if i < 10 { Label::ASD } else { Label::TD },
            })
            .collect();
        let b = build_prompt(
            &doc("c", false),
            &exemplars,
            &PromptTemplates::default(),
            &PromptConfig::default(),
        )
        .unwrap();
        assert_eq!(b.exemplars.len(), 20);
        for (i, ex) in b.exemplars.iter().enumerate() {
            assert_eq!(ex.label, if i % 2 == 0 { Label::ASD } else { Label::TD });
        }
        let text = b.render();
        assert_eq!(text.matches("### Example ").count(), 20);
        assert!(text.find(EXAMPLES_HEADING).unwrap() < text.find(SCRIPT_HEADING).unwrap());
    }

    #[test]
    fn too_many_exemplars_and_overflow() {
        let ex = vec![
            Exemplar {
                script: doc("e", false),
                label: Label::TD
            };
            3
        ];
        let cfg = PromptConfig {
            max_exemplars: 2,
            ..Default::default()
        };
        assert!(matches!(
            build_prompt(&doc("c", false), &ex, &PromptTemplates::default(), &cfg),
            Err(PromptError::TooManyExemplars { given: 3, max: 2 })
        ));
        let tiny = PromptConfig {
            context_budget_chars: 100,
            ..Default::default()
        };
        match build_prompt(&doc("c", false), &[], &PromptTemplates::default(), &tiny) {
            Err(PromptError::ContextOverflow { required, available }) => {
                assert!(required > 100);
                assert_eq!(available, 100);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn verdicts() {
        let v = parse_verdict("The child rarely responds.\nJudgment: ASD").unwrap();
        assert_eq!(v.label, Label::ASD);
        assert_eq!(v.rationale, "The child rarely responds.");
        let v = parse_verdict("the child is typically developing. Judgment: TD").unwrap();
        assert_eq!(v.label, Label::TD);
        assert_eq!(
            parse_verdict("**Judgement**: td\n").unwrap().label,
            Label::TD
        );
        // The final judgment line beats earlier mentions.
        let v = parse_verdict("Judgment: TD was my first thought.\nJudgment: ASD").unwrap();
        assert_eq!(v.label, Label::ASD);
        // Keyword fallback: last token wins.
        assert_eq!(parse_verdict("Not ASD, rather TD.").unwrap().label, Label::TD);
        assert!(matches!(
            parse_verdict("I cannot tell from this script."),
            Err(PromptError::UnparseableVerdict)
        ));
        // Substrings do not count.
        assert!(parse_verdict("STDOUT, ASDF").is_err());
    }

    #[test]
    fn compliant_answers_round_trip() {
        for label in Label::ALL {
            let answer = format!("Some reasoning about [00:02].\nJudgment: {label}\n");
            assert_eq!(parse_verdict(&answer).unwrap().label, label);
        }
    }
}
