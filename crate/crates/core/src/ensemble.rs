//! Fusing several backends: majority voting, and a multi-round discussion
//! among agents that ends in consensus or a decision-maker summary.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm_gateway::{
    bundle_messages, detect_request, AuditLog, Backend, BackendError, ChatMessage,
    DetectionResult, Prediction,
};
use crate::prompt_builder::{parse_verdict, PromptBundle, FORMAT_HEADING, SCRIPT_HEADING};
use crate::Label;

#[derive(Debug, Error)]
pub enum EnsembleError {
    #[error("no agent produced a label")]
    NoQuorum,
    #[error("agent discussion needs at least 2 agents, got {0}")]
    TooFewAgents(usize),
    #[error("max_rounds must be at least 1")]
    NoRounds,
    #[error("decision maker failed: {0}")]
    DecisionMaker(#[source] BackendError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Tally {
    pub asd: usize,
    pub td: usize,
    pub abstain: usize,
}

impl Tally {
    pub fn of(predictions: impl IntoIterator<Item = Prediction>) -> Self {
        let mut t = Tally::default();
        for p in predictions {
            match p {
                Prediction::ASD => t.asd += 1,
                Prediction::TD => t.td += 1,
                Prediction::Abstain => t.abstain += 1,
            }
        }
        t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteOutcome {
    pub label: Label,
    pub tally: Tally,
    /// The two labels had equal support and `tie_break` decided.
    pub tie_broken: bool,
}

/// Majority label among non-abstaining predictions.
pub fn vote_predictions(predictions: &[Prediction], tie_break: Label) -> Result<VoteOutcome, EnsembleError> {
    let tally = Tally::of(predictions.iter().copied());
    if tally.asd + tally.td == 0 {
        return Err(EnsembleError::NoQuorum);
    }
    let (label, tie_broken) = match tally.asd.cmp(&tally.td) {
        std::cmp::Ordering::Greater => (Label::ASD, false),
        std::cmp::Ordering::Less => (Label::TD, false),
        std::cmp::Ordering::Equal => (tie_break, true),
    };
    Ok(VoteOutcome {
        label,
        tally,
        tie_broken,
    })
}

pub fn vote(results: &[DetectionResult], tie_break: Label) -> Result<VoteOutcome, EnsembleError> {
    let preds: Vec<Prediction> = results.iter().map(|r| r.prediction).collect();
    vote_predictions(&preds, tie_break)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentsConfig {
    pub max_rounds: u32,
    pub tie_break: Label,
    /// Show the decision maker every round instead of only the last one.
    pub decision_maker_full_history: bool,
    /// Rationales quoted back to agents are cut to this many characters.
    pub rationale_chars: usize,
}

impl Default for AgentsConfig {
    fn default() -> Self {
        Self {
            max_rounds: 3,
            tie_break: Label::ASD,
            decision_maker_full_history: false,
            rationale_chars: 800,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentTurn {
    pub agent: String,
    pub verdict: Prediction,
    pub rationale: String,
    pub prompt_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Round {
    pub round: u32,
    pub turns: Vec<AgentTurn>,
    /// Agents that failed this round and were dropped, with the error.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dropped: Vec<(String, String)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecidedBy {
    Consensus,
    DecisionMaker,
    /// The decision maker gave no label; the last round was put to a vote.
    Vote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalDecision {
    pub label: Label,
    pub summary: String,
    pub decided_by: DecidedBy,
}

/// Everything said during one case's discussion. Contains no timings, so
/// a fixture replay reproduces it byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscussionTranscript {
    pub case_id: String,
    pub rounds: Vec<Round>,
    #[serde(rename = "final")]
    pub final_decision: FinalDecision,
}

impl DiscussionTranscript {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("transcript serializes") + "\n"
    }

    /// Human-readable rendering.
    pub fn render_text(&self) -> String {
        let mut out = format!("Case {}\n", self.case_id);
        for r in &self.rounds {
            let _ = writeln!(out, "\nRound {}", r.round);
            for t in &r.turns {
                let _ = writeln!(out, "  {} -> {}", t.agent, t.verdict);
                for line in t.rationale.lines().filter(|l| !l.trim().is_empty()) {
                    let _ = writeln!(out, "      {line}");
                }
            }
            for (agent, err) in &r.dropped {
                let _ = writeln!(out, "  {agent} dropped: {err}");
            }
        }
        let f = &self.final_decision;
        let by = match f.decided_by {
            DecidedBy::Consensus => "consensus",
            DecidedBy::DecisionMaker => "decision maker",
            DecidedBy::Vote => "vote",
        };
        let _ = writeln!(out, "\nFinal: {} ({by})", f.label);
        for line in f.summary.lines().filter(|l| !l.trim().is_empty()) {
            let _ = writeln!(out, "  {line}");
        }
        out
    }
}

fn clip(text: &str, max: usize) -> String {
    match text.char_indices().nth(max) {
        Some((at, _)) => format!("{}...", &text[..at]),
        None => text.to_string(),
    }
}

fn round_block(round: &Round, max_chars: usize) -> String {
    let mut out = String::new();
    for t in &round.turns {
        let _ = write!(
            out,
            "\n### {}\nVerdict: {}\nRationale: {}\n",
            t.agent,
            t.verdict,
            clip(t.rationale.trim(), max_chars)
        );
    }
    out
}

fn follow_up_text(bundle: &PromptBundle, rounds: &[Round], agent: &str, cfg: &AgentsConfig) -> String {
    let last = rounds.last().expect("follow-up after a round");
    let mut text = bundle.user_text();
    let _ = write!(
        text,
        "\n## Discussion, round {}{}",
        last.round,
        round_block(last, cfg.rationale_chars)
    );
    text.push_str("\n## Your previous verdicts\n");
    for r in rounds {
        if let Some(t) = r.turns.iter().find(|t| t.agent == agent) {
            let _ = writeln!(text, "Round {}: {}", r.round, t.verdict);
        }
    }
    text.push_str(
        "\n## Task\nRe-analyze the behavior script, taking the other agents' verdicts and \
         reasons into account. Where you disagree, explain why and try to convince them. \
         Finish with the judgment line required in the answer format.\n",
    );
    text
}

fn decision_text(bundle: &PromptBundle, rounds: &[Round], cfg: &AgentsConfig) -> String {
    let shown: &[Round] = if cfg.decision_maker_full_history {
        rounds
    } else {
        &rounds[rounds.len() - 1..]
    };
    let mut text = format!("{SCRIPT_HEADING}\n{}\n", bundle.script_text.trim_end());
    for r in shown {
        let _ = write!(
            text,
            "\n## Agent verdicts, round {}{}",
            r.round,
            round_block(r, cfg.rationale_chars)
        );
    }
    let _ = write!(
        text,
        "\n## Task\nYou are the decision maker. The agents did not reach a consensus. \
         Summarize their detection results and reasons, then give the final decision.\n\n\
         {FORMAT_HEADING}\n{}\n",
        bundle.format_text
    );
    text
}

/// Runs the discussion for one case.
///
/// Round 1 sends the base prompt to every agent. Later rounds add the
/// previous round's verdicts and reasons and each agent's own earlier
/// verdicts. The loop stops on a unanimous non-abstaining round or after
/// `max_rounds`; without consensus the decision maker sees the last round
/// and decides. An agent whose call fails is dropped for the rest of the
/// case.
pub fn run_agents(
    case_id: &str,
    bundle: &PromptBundle,
    agents: &[&Backend],
    decision_maker: &Backend,
    cfg: &AgentsConfig,
    audit: Option<&AuditLog>,
) -> Result<DiscussionTranscript, EnsembleError> {
    if agents.len() < 2 {
        return Err(EnsembleError::TooFewAgents(agents.len()));
    }
    if cfg.max_rounds == 0 {
        return Err(EnsembleError::NoRounds);
    }
    let mut active: Vec<&Backend> = agents.to_vec();
    let mut rounds: Vec<Round> = Vec::new();
    for round in 1..=cfg.max_rounds {
        let requests: Vec<_> = active
            .iter()
            .map(|a| {
                let messages = if rounds.is_empty() {
                    bundle_messages(bundle)
                } else {
                    vec![
                        ChatMessage::system(bundle.system_text.clone()),
                        ChatMessage::user(follow_up_text(bundle, &rounds, a.name(), cfg)),
                    ]
                };
                a.request(messages)
            })
            .collect();
        let results: Vec<Result<DetectionResult, BackendError>> = std::thread::scope(|s| {
            let handles: Vec<_> = active
                .iter()
                .zip(&requests)
                .map(|(a, req)| s.spawn(move || detect_request(case_id, req, a, audit)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("agent thread panicked"))
                .collect()
        });

        let mut current = Round {
            round,
            turns: Vec::new(),
            dropped: Vec::new(),
        };
        let mut survivors = Vec::new();
        for (agent, res) in active.iter().zip(results) {
            match res {
                Ok(r) => {
                    current.turns.push(AgentTurn {
                        agent: agent.name().to_string(),
                        verdict: r.prediction,
                        rationale: r.rationale,
                        prompt_hash: r.prompt_hash,
                    });
                    survivors.push(*agent);
                }
                Err(e) => {
                    log::warn!("{case_id}: dropping agent {} in round {round}: {e}", agent.name());
                    current.dropped.push((agent.name().to_string(), e.to_string()));
                }
            }
        }
        active = survivors;
        if current.turns.is_empty() {
            return Err(EnsembleError::NoQuorum);
        }
        let consensus = current.turns[0]
            .verdict
            .label()
            .filter(|&l| current.turns.iter().all(|t| t.verdict.label() == Some(l)));
        rounds.push(current);
        if let Some(label) = consensus {
            let n = rounds.last().expect("pushed").turns.len();
            return Ok(DiscussionTranscript {
                case_id: case_id.to_string(),
                final_decision: FinalDecision {
                    label,
                    summary: format!("All {n} agents agreed on {label} in round {round}."),
                    decided_by: DecidedBy::Consensus,
                },
                rounds,
            });
        }
    }

    let req = decision_maker.request(vec![
        ChatMessage::system(bundle.system_text.clone()),
        ChatMessage::user(decision_text(bundle, &rounds, cfg)),
    ]);
    let result = detect_request(case_id, &req, decision_maker, audit)
        .map_err(EnsembleError::DecisionMaker)?;
    let final_decision = match parse_verdict(&result.raw_response) {
        Ok(v) => FinalDecision {
            label: v.label,
            summary: v.rationale,
            decided_by: DecidedBy::DecisionMaker,
        },
        Err(_) => {
            let last = rounds.last().expect("at least one round");
            let verdicts: Vec<Prediction> = last.turns.iter().map(|t| t.verdict).collect();
            let outcome = vote_predictions(&verdicts, cfg.tie_break)?;
            FinalDecision {
                label: outcome.label,
                summary: format!(
                    "Decision maker gave no label; last-round vote {}-{} ({} abstained).",
                    outcome.tally.asd, outcome.tally.td, outcome.tally.abstain
                ),
                decided_by: DecidedBy::Vote,
            }
        }
    };
    Ok(DiscussionTranscript {
        case_id: case_id.to_string(),
        rounds,
        final_decision,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm_gateway::{BackendSpec, ChatBackend, ChatRequest};
    use proptest::prelude::*;

    fn p(s: &str) -> Vec<Prediction> {
        s.chars()
            .map(|c| match c {
                'A' => Prediction::ASD,
                'T' => Prediction::TD,
                _ => Prediction::Abstain,
            })
            .collect()
    }

    #[test]
    fn majority_examples() {
        let v = vote_predictions(&p("AATAT"), Label::ASD).unwrap();
        assert_eq!((v.label, v.tally.asd, v.tally.td), (Label::ASD, 3, 2));
        let v = vote_predictions(&p("TTTTT"), Label::ASD).unwrap();
        assert_eq!((v.label, v.tally.td), (Label::TD, 5));
        assert!(!v.tie_broken);
    }

    #[test]
    fn ties_and_abstentions() {
        let v = vote_predictions(&p("AT?"), Label::ASD).unwrap();
        assert!(v.tie_broken);
        assert_eq!(v.label, Label::ASD);
        assert_eq!(vote_predictions(&p("AT"), Label::TD).unwrap().label, Label::TD);
        assert_eq!(vote_predictions(&p("?T?"), Label::ASD).unwrap().label, Label::TD);
        assert!(matches!(vote_predictions(&p("??"), Label::ASD), Err(EnsembleError::NoQuorum)));
        assert!(matches!(vote_predictions(&[], Label::ASD), Err(EnsembleError::NoQuorum)));
    }

    proptest! {
        #[test]
        fn vote_is_order_invariant(s in "[AT?]{1,12}", seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let preds = p(&s);
            let mut shuffled = preds.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let a = vote_predictions(&preds, Label::ASD).ok();
            let b = vote_predictions(&shuffled, Label::ASD).ok();
            prop_assert_eq!(a, b);
        }
    }

    fn bundle() -> PromptBundle {
        PromptBundle {
            system_text: "sys".into(),
            exemplars: vec![],
            script_text: "[00:02] The doctor called out the child's name.".into(),
            domain_text: String::new(),
            format_text: "End with Judgment: ASD or Judgment: TD".into(),
        }
    }

    fn scripted(name: &str, answers: &[&str]) -> Backend {
        Backend::from_spec(&BackendSpec::scripted(
            name,
            answers.iter().map(|s| s.to_string()).collect(),
        ))
        .unwrap()
    }

    #[test]
    fn round_one_consensus() {
        let a = scripted("a", &["Looks typical.\nJudgment: TD"]);
        let b = scripted("b", &["Judgment: TD"]);
        let dm = scripted("dm", &["Judgment: ASD"]);
        let t = run_agents("c", &bundle(), &[&a, &b], &dm, &AgentsConfig::default(), None).unwrap();
        assert_eq!(t.rounds.len(), 1);
        assert_eq!(t.final_decision.decided_by, DecidedBy::Consensus);
        assert_eq!(t.final_decision.label, Label::TD);
        assert_eq!(dm.calls(), 0);
    }

    #[test]
    fn consensus_in_round_two_stops_early() {
        let a = scripted("a", &["Judgment: ASD"]);
        let b = scripted("b", &["Judgment: TD", "Convinced.\nJudgment: ASD", "Judgment: TD"]);
        let dm = scripted("dm", &["Judgment: TD"]);
        let t = run_agents("c", &bundle(), &[&a, &b], &dm, &AgentsConfig::default(), None).unwrap();
        assert_eq!(t.rounds.len(), 2);
        assert_eq!(t.final_decision.label, Label::ASD);
        assert_eq!((a.calls(), b.calls(), dm.calls()), (2, 2, 0));
    }

    #[test]
    fn persistent_disagreement_goes_to_decision_maker() {
        let a = scripted("a", &["Judgment: ASD"]);
        let b = scripted("b", &["Judgment: TD"]);
        let dm = scripted("dm", &["Agent a cites missed name calls.\nJudgment: ASD"]);
        let t = run_agents("c", &bundle(), &[&a, &b], &dm, &AgentsConfig::default(), None).unwrap();
        assert_eq!(t.rounds.len(), 3);
        assert_eq!(t.final_decision.decided_by, DecidedBy::DecisionMaker);
        assert_eq!(t.final_decision.label, Label::ASD);
        assert_eq!(t.final_decision.summary, "Agent a cites missed name calls.");
        assert_eq!((a.calls(), b.calls(), dm.calls()), (3, 3, 1));
    }

    #[test]
    fn abstaining_agent_blocks_consensus() {
        let a = scripted("a", &["Judgment: ASD"]);
        let b = scripted("b", &["unsure"]);
        let dm = scripted("dm", &["no label here"]);
        let cfg = AgentsConfig {
            max_rounds: 2,
            ..Default::default()
        };
        let t = run_agents("c", &bundle(), &[&a, &b], &dm, &cfg, None).unwrap();
        assert_eq!(t.rounds.len(), 2);
        assert_eq!(t.final_decision.decided_by, DecidedBy::Vote);
        assert_eq!(t.final_decision.label, Label::ASD);
    }

    struct Capture(std::sync::Mutex<Vec<String>>);
    impl ChatBackend for std::sync::Arc<Capture> {
        fn complete(&self, req: &ChatRequest) -> Result<String, BackendError> {
            self.0.lock().unwrap().push(req.messages[1].content.clone());
            Ok("I still think so.\nJudgment: TD".into())
        }
    }

    #[test]
    fn later_rounds_quote_the_discussion() {
        let cap = std::sync::Arc::new(Capture(Default::default()));
        let a = scripted("a", &["Missed every name call.\nJudgment: ASD"]);
        let b = Backend::with_chat(BackendSpec::mock("b"), Box::new(cap.clone()));
        let dm = scripted("dm", &["Judgment: TD"]);
        let cfg = AgentsConfig {
            max_rounds: 2,
            ..Default::default()
        };
        run_agents("c", &bundle(), &[&a, &b], &dm, &cfg, None).unwrap();
        let prompts = cap.0.lock().unwrap();
        assert_eq!(prompts.len(), 2);
        assert!(!prompts[0].contains("## Discussion"));
        let second = &prompts[1];
        assert!(second.contains(SCRIPT_HEADING));
        assert!(second.contains("## Discussion, round 1"));
        assert!(second.contains("### a\nVerdict: ASD\nRationale: Missed every name call."));
        assert!(second.contains("## Your previous verdicts\nRound 1: TD"));
    }

    struct Broken;
    impl ChatBackend for Broken {
        fn complete(&self, _: &ChatRequest) -> Result<String, BackendError> {
            Err(BackendError::Status {
                code: 400,
                body: "bad".into(),
            })
        }
    }

    #[test]
    fn failing_agents_are_dropped() {
        let a = scripted("a", &["Judgment: ASD"]);
        let bad = Backend::with_chat(BackendSpec::mock("bad"), Box::new(Broken));
        let dm = scripted("dm", &["Judgment: TD"]);
        let t = run_agents("c", &bundle(), &[&a, &bad], &dm, &AgentsConfig::default(), None).unwrap();
        assert_eq!(t.rounds[0].dropped.len(), 1);
        assert_eq!(t.final_decision.decided_by, DecidedBy::Consensus);

        let bad2 = Backend::with_chat(BackendSpec::mock("bad2"), Box::new(Broken));
        assert!(matches!(
            run_agents("c", &bundle(), &[&bad, &bad2], &dm, &AgentsConfig::default(), None),
            Err(EnsembleError::NoQuorum)
        ));
    }

    #[test]
    fn needs_two_agents() {
        let a = scripted("a", &["Judgment: ASD"]);
        assert!(matches!(
            run_agents("c", &bundle(), &[&a], &a, &AgentsConfig::default(), None),
            Err(EnsembleError::TooFewAgents(1))
        ));
    }
}
