//! Evaluation protocols over a labeled case source.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::{CaseEntry, CaseSource};
use super::metrics::{format_percent, metrics, ConfusionCounts, MetricsSummary};
use super::stats::{group_ttest, GroupStats, TTestMode};
use super::EvalError;
use crate::emotion_dynamics::{dynamics_stats, Describer};
use crate::ensemble::{run_agents, vote, AgentsConfig, DiscussionTranscript};
use crate::llm_gateway::{detect, AuditLog, Backend, BackendError, DetectionResult, Prediction};
use crate::pipeline::{compile_case, emotion_segments, PipelineConfig};
use crate::prompt_builder::{build_prompt, Exemplar, PromptBundle, PromptTemplates};
use crate::response_parser::{measure_responses, parse_events, MeasureKind};
use crate::script_compiler::TemplateTable;
use crate::Label;

/// How a case's verdict is produced.
pub enum Detector {
    Single(Arc<Backend>),
    Vote {
        backends: Vec<Arc<Backend>>,
        tie_break: Label,
    },
    Agents {
        agents: Vec<Arc<Backend>>,
        decision_maker: Arc<Backend>,
        cfg: AgentsConfig,
    },
}

/// One case's verdict with the material behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct CasePrediction {
    pub prediction: Prediction,
    pub rationale: String,
    pub results: Vec<DetectionResult>,
    pub transcript: Option<DiscussionTranscript>,
}

impl Detector {
    fn backends(&self) -> Vec<&Backend> {
        match self {
            Detector::Single(b) => vec![b],
            Detector::Vote { backends, .. } => backends.iter().map(|b| &**b).collect(),
            Detector::Agents {
                agents,
                decision_maker,
                ..
            } => agents
                .iter()
                .chain(std::iter::once(decision_maker))
                .map(|b| &**b)
                .collect(),
        }
    }

    /// Whether every backend involved may receive labeled exemplars.
    pub fn allows_exemplars(&self) -> bool {
        self.backends().iter().all(|b| b.spec().allows_exemplars())
    }

    /// Short human-readable name such as `vote(a,b,c)`.
    pub fn describe(&self) -> String {
        let names = |bs: &[Arc<Backend>]| {
            bs.iter().map(|b| b.name()).collect::<Vec<_>>().join(",")
        };
        match self {
            Detector::Single(b) => format!("single({})", b.name()),
            Detector::Vote { backends, .. } => format!("vote({})", names(backends)),
            Detector::Agents {
                agents,
                decision_maker,
                ..
            } => format!("agents({}; decision={})", names(agents), decision_maker.name()),
        }
    }

    pub fn predict(
        &self,
        case_id: &str,
        bundle: &PromptBundle,
        audit: Option<&AuditLog>,
    ) -> Result<CasePrediction, EvalError> {
        match self {
            Detector::Single(b) => {
                let r = detect(case_id, bundle, b, audit)?;
                Ok(CasePrediction {
                    prediction: r.prediction,
                    rationale: r.rationale.trim().to_string(),
                    results: vec![r],
                    transcript: None,
                })
            }
            Detector::Vote {
                backends,
                tie_break,
            } => {
                let outcomes: Vec<Result<DetectionResult, BackendError>> =
                    std::thread::scope(|s| {
                        let handles: Vec<_> = backends
                            .iter()
                            .map(|b| s.spawn(move || detect(case_id, bundle, b, audit)))
                            .collect();
                        handles
                            .into_iter()
                            .map(|h| h.join().expect("backend thread panicked"))
                            .collect()
                    });
                let mut results = Vec::new();
                let mut last_err = None;
                for (b, r) in backends.iter().zip(outcomes) {
                    match r {
                        Ok(r) => results.push(r),
                        Err(e) => {
                            log::warn!("{case_id}: {} failed, left out of the vote: {e}", b.name());
                            last_err = Some(e);
                        }
                    }
                }
                if results.is_empty() {
                    return Err(last_err.map_or_else(
                        || EvalError::Config("vote needs at least one backend".into()),
                        EvalError::Backend,
                    ));
                }
                let (prediction, rationale) = match vote(&results, *tie_break) {
                    Ok(v) => (
                        v.label.into(),
                        format!(
                            "Vote {}-{} (ASD-TD), {} abstained{}.",
                            v.tally.asd,
                            v.tally.td,
                            v.tally.abstain,
                            if v.tie_broken { ", tie broken" } else { "" }
                        ),
                    ),
                    Err(_) => (Prediction::Abstain, "Every backend abstained.".to_string()),
                };
                Ok(CasePrediction {
                    prediction,
                    rationale,
                    results,
                    transcript: None,
                })
            }
            Detector::Agents {
                agents,
                decision_maker,
                cfg,
            } => {
                if !bundle.exemplars.is_empty() && !self.allows_exemplars() {
                    return Err(BackendError::ExemplarsNotAllowed(self.describe()).into());
                }
                let refs: Vec<&Backend> = agents.iter().map(|b| &**b).collect();
                let t = run_agents(case_id, bundle, &refs, decision_maker, cfg, audit)?;
                Ok(CasePrediction {
                    prediction: t.final_decision.label.into(),
                    rationale: t.final_decision.summary.trim().to_string(),
                    results: Vec::new(),
                    transcript: Some(t),
                })
            }
        }
    }
}

/// Everything a protocol run needs besides the cases.
pub struct EvalContext {
    pub pipeline: PipelineConfig,
    pub templates: TemplateTable,
    pub prompts: PromptTemplates,
    /// Adds emotion description lines to scripts when present.
    pub describer: Option<Arc<dyn Describer>>,
    pub detector: Detector,
    pub audit: Option<Arc<AuditLog>>,
    /// Worker threads for case-level parallelism; 0 picks the CPU count.
    pub workers: usize,
    /// Set to stop scheduling new cases; finished cases are still reported.
    pub cancel: Option<Arc<AtomicBool>>,
}

impl EvalContext {
    pub fn new(detector: Detector) -> Self {
        Self {
            pipeline: PipelineConfig::default(),
            templates: TemplateTable::default(),
            prompts: PromptTemplates::default(),
            describer: None,
            detector,
            audit: None,
            workers: 0,
            cancel: None,
        }
    }

    fn cancelled(&self) -> bool {
        self.cancel.as_ref().is_some_and(|c| c.load(Ordering::SeqCst))
    }

    fn emotion_in_script(&self) -> bool {
        self.describer.is_some() && self.pipeline.prompt.profile.use_emotion_lines
    }
}

/// What was run, so reports are never compared blindly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolDescriptor {
    pub protocol: String,
    pub detector: String,
    pub cases: usize,
    pub shots: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub alpha: f64,
    pub emotion: bool,
    pub domain_knowledge: bool,
    pub human_experience: bool,
}

impl std::fmt::Display for ProtocolDescriptor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} over {} case(s), {}-shot, detector {}, alpha {}, emotion {}, domain knowledge {}, human experience {}",
            self.protocol,
            self.cases,
            self.shots,
            self.detector,
            self.alpha,
            on_off(self.emotion),
            on_off(self.domain_knowledge),
            on_off(self.human_experience),
        )?;
        if let Some(seed) = self.seed {
            write!(f, ", seed {seed}")?;
        }
        Ok(())
    }
}

fn on_off(b: bool) -> &'static str {
    if b {
        "on"
    } else {
        "off"
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseRow {
    pub case_id: String,
    pub truth: Label,
    pub predicted: Prediction,
    pub correct: bool,
    pub rationale: String,
    /// Where the full rationale or discussion was written, if anywhere.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rationale_ref: Option<String>,
    pub dynamic_points: usize,
    #[serde(skip)]
    pub transcript: Option<DiscussionTranscript>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailedCase {
    pub case_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub protocol: ProtocolDescriptor,
    pub counts: ConfusionCounts,
    pub metrics: MetricsSummary,
    pub abstentions: usize,
    pub rows: Vec<CaseRow>,
    /// Cases that errored; they are not part of `counts`.
    pub failed: Vec<FailedCase>,
    /// The run was interrupted and `rows` covers only finished cases.
    pub cancelled: bool,
}

impl EvalReport {
    fn assemble(
        protocol: ProtocolDescriptor,
        mut rows: Vec<CaseRow>,
        mut failed: Vec<FailedCase>,
        cancelled: bool,
    ) -> Self {
        rows.sort_by(|a, b| a.case_id.cmp(&b.case_id));
        failed.sort_by(|a, b| a.case_id.cmp(&b.case_id));
        let counts = ConfusionCounts::from_pairs(rows.iter().map(|r| (r.truth, r.predicted)));
        let abstentions = rows
            .iter()
            .filter(|r| r.predicted == Prediction::Abstain)
            .count();
        Self {
            protocol,
            counts,
            metrics: metrics(&counts).into(),
            abstentions,
            rows,
            failed,
            cancelled,
        }
    }

    /// Counts, abstentions and metrics all follow from the rows.
    pub fn is_self_consistent(&self) -> bool {
        let counts =
            ConfusionCounts::from_pairs(self.rows.iter().map(|r| (r.truth, r.predicted)));
        let abstentions = self
            .rows
            .iter()
            .filter(|r| r.predicted == Prediction::Abstain)
            .count();
        let rows_ok = self
            .rows
            .iter()
            .all(|r| r.correct == (r.predicted.label() == Some(r.truth)));
        counts == self.counts
            && abstentions == self.abstentions
            && rows_ok
            && MetricsSummary::from(metrics(&counts)) == self.metrics
    }

    pub fn to_text(&self) -> String {
        let c = &self.counts;
        let m = &self.metrics;
        let mut s = String::new();
        let _ = writeln!(s, "Protocol: {}", self.protocol);
        if self.cancelled {
            let _ = writeln!(s, "Interrupted: partial report");
        }
        let _ = writeln!(
            s,
            "Counts: tp={} fp={} tn={} fn={} (n={})",
            c.tp,
            c.fp,
            c.tn,
            c.fn_,
            c.total()
        );
        let _ = writeln!(
            s,
            "ACC {}  F1 {}  SN {}  SP {}  PREC {}",
            format_percent(m.acc),
            format_percent(m.f1),
            format_percent(m.sn),
            format_percent(m.sp),
            format_percent(m.precision)
        );
        let _ = writeln!(s, "Abstentions: {}", self.abstentions);
        let _ = writeln!(s, "Failed: {}", self.failed.len());
        for f in &self.failed {
            let _ = writeln!(s, "  {}: {}", f.case_id, f.error);
        }
        let _ = writeln!(s, "\ncase_id\ttruth\tpredicted\tcorrect\tdynamic_points");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}",
                r.case_id, r.truth, r.predicted, r.correct, r.dynamic_points
            );
        }
        s
    }
}

fn descriptor(ctx: &EvalContext, pipeline: &PipelineConfig, protocol: &str, cases: usize, shots: usize, seed: Option<u64>) -> ProtocolDescriptor {
    let profile = &pipeline.prompt.profile;
    ProtocolDescriptor {
        protocol: protocol.to_string(),
        detector: ctx.detector.describe(),
        cases,
        shots,
        seed,
        alpha: pipeline.emotion.alpha,
        emotion: ctx.emotion_in_script(),
        domain_knowledge: profile.use_domain_knowledge,
        human_experience: profile.use_human_experience,
    }
}

fn evaluate_case(
    source: &dyn CaseSource,
    ctx: &EvalContext,
    pipeline: &PipelineConfig,
    entry: &CaseEntry,
    exemplars: &[Exemplar],
) -> Result<CaseRow, EvalError> {
    let (log, manifest) = source.load(&entry.case_id)?;
    let artifacts = compile_case(
        &log,
        &manifest,
        pipeline,
        &ctx.templates,
        ctx.describer.as_deref(),
        None,
    )?;
    let bundle = build_prompt(&artifacts.script, exemplars, &ctx.prompts, &pipeline.prompt)?;
    let p = ctx
        .detector
        .predict(&entry.case_id, &bundle, ctx.audit.as_deref())?;
    Ok(CaseRow {
        case_id: entry.case_id.clone(),
        truth: entry.label,
        predicted: p.prediction,
        correct: p.prediction.label() == Some(entry.label),
        rationale: p.rationale,
        rationale_ref: None,
        dynamic_points: artifacts.points.len(),
        transcript: p.transcript,
    })
}

fn pool(workers: usize) -> Result<rayon::ThreadPool, EvalError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| EvalError::Config(format!("worker pool: {e}")))
}

/// Evaluates `entries` in parallel; the report is assembled after all
/// workers finish.
fn run_cases(
    source: &dyn CaseSource,
    ctx: &EvalContext,
    pipeline: &PipelineConfig,
    entries: &[CaseEntry],
    exemplars: &[Exemplar],
    protocol: ProtocolDescriptor,
) -> Result<EvalReport, EvalError> {
    let outcomes: Vec<Option<Result<CaseRow, FailedCase>>> = pool(ctx.workers)?.install(|| {
        entries
            .par_iter()
            .map(|e| {
                if ctx.cancelled() {
                    return None;
                }
                Some(
                    evaluate_case(source, ctx, pipeline, e, exemplars).map_err(|err| {
                        log::warn!("{}: excluded from the report: {err}", e.case_id);
                        FailedCase {
                            case_id: e.case_id.clone(),
                            error: err.to_string(),
                        }
                    }),
                )
            })
            .collect()
    });
    let cancelled = outcomes.iter().any(Option::is_none);
    let (mut rows, mut failed) = (Vec::new(), Vec::new());
    for o in outcomes.into_iter().flatten() {
        match o {
            Ok(r) => rows.push(r),
            Err(f) => failed.push(f),
        }
    }
    Ok(EvalReport::assemble(protocol, rows, failed, cancelled))
}

/// Zero-shot leave-one-out: every case is judged once, on its own.
pub fn loocv_run(source: &dyn CaseSource, ctx: &EvalContext) -> Result<EvalReport, EvalError> {
    let entries = source.entries();
    let d = descriptor(ctx, &ctx.pipeline, "loocv", entries.len(), 0, None);
    run_cases(source, ctx, &ctx.pipeline, entries, &[], d)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotSplit {
    pub seed: u64,
    pub train: Vec<CaseEntry>,
    pub test: Vec<CaseEntry>,
}

/// Draws `per_class` training cases from each label; the rest is the test
/// set. Depends only on the seed and the set of entries, not their order.
pub fn fewshot_split(entries: &[CaseEntry], seed: u64, per_class: usize) -> Result<FewShotSplit, EvalError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for label in Label::ALL {
        let mut ids: Vec<&CaseEntry> = entries.iter().filter(|e| e.label == label).collect();
        if ids.len() < per_class {
            return Err(EvalError::InsufficientClass {
                label,
                have: ids.len(),
                need: per_class,
            });
        }
        ids.sort_by(|a, b| a.case_id.cmp(&b.case_id));
        ids.shuffle(&mut rng);
        train.extend(ids[..per_class].iter().map(|e| (*e).clone()));
        test.extend(ids[per_class..].iter().map(|e| (*e).clone()));
    }
    test.sort_by(|a, b| a.case_id.cmp(&b.case_id));
    Ok(FewShotSplit { seed, train, test })
}

/// Judges the test cases with the training cases' scripts as labeled
/// examples in every prompt.
pub fn fewshot_run(source: &dyn CaseSource, ctx: &EvalContext, split: &FewShotSplit) -> Result<EvalReport, EvalError> {
    if !ctx.detector.allows_exemplars() {
        return Err(BackendError::ExemplarsNotAllowed(ctx.detector.describe()).into());
    }
    let exemplars = split
        .train
        .iter()
        .map(|e| {
            let (log, manifest) = source.load(&e.case_id)?;
            let a = compile_case(
                &log,
                &manifest,
                &ctx.pipeline,
                &ctx.templates,
                ctx.describer.as_deref(),
                None,
            )?;
            Ok(Exemplar {
                script: a.script,
                label: e.label,
            })
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    let d = descriptor(
        ctx,
        &ctx.pipeline,
        "fewshot",
        split.test.len(),
        exemplars.len(),
        Some(split.seed),
    );
    run_cases(source, ctx, &ctx.pipeline, &split.test, &exemplars, d)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub report: EvalReport,
}

/// One leave-one-out run per threshold.
pub fn threshold_sweep(source: &dyn CaseSource, ctx: &EvalContext, alphas: &[f64]) -> Result<Vec<SweepRow>, EvalError> {
    let mut out = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        if ctx.cancelled() {
            break;
        }
        let mut pipeline = ctx.pipeline.clone();
        pipeline.emotion.alpha = alpha;
        pipeline
            .emotion
            .validate()
            .map_err(|e| EvalError::Config(e.to_string()))?;
        let entries = source.entries();
        let d = descriptor(ctx, &pipeline, "sweep", entries.len(), 0, None);
        let report = run_cases(source, ctx, &pipeline, entries, &[], d)?;
        out.push(SweepRow { alpha, report });
    }
    Ok(out)
}

/// Plot-ready table, one row per threshold. Percentages are blank when
/// undefined.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("alpha,acc,f1,sn,sp,precision,abstentions,mean_dynamic_points\n");
    let cell = |v: Option<f64>| v.map_or_else(String::new, |v| format!("{v:.4}"));
    for r in rows {
        let m = &r.report.metrics;
        let n = r.report.rows.len();
        let mean = if n == 0 {
            String::new()
        } else {
            let total: usize = r.report.rows.iter().map(|c| c.dynamic_points).sum();
            format!("{:.4}", total as f64 / n as f64)
        };
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.alpha,
            cell(m.acc),
            cell(m.f1),
            cell(m.sn),
            cell(m.sp),
            cell(m.precision),
            r.report.abstentions,
            mean
        );
    }
    s
}

/// Per-case variables compared between groups, in report order.
pub const GROUP_VARIABLES: [&str; 8] = [
    "look_latency_s",
    "look_duration_s",
    "point_latency_s",
    "point_duration_s",
    "chase_latency_s",
    "chase_duration_s",
    "dynamic_frequency",
    "dynamic_latency_s",
];

fn case_variables(
    source: &dyn CaseSource,
    pipeline: &PipelineConfig,
    case_id: &str,
) -> Result<BTreeMap<&'static str, f64>, EvalError> {
    let (log, manifest) = source.load(case_id)?;
    let events = parse_events(&log, &manifest, &pipeline.parser);
    let measures = measure_responses(&events, &manifest);
    let mut out = BTreeMap::new();
    let mean = |xs: Vec<f64>| (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64);
    for (kind, lat, dur) in [
        (MeasureKind::Look, GROUP_VARIABLES[0], GROUP_VARIABLES[1]),
        (MeasureKind::Point, GROUP_VARIABLES[2], GROUP_VARIABLES[3]),
        (MeasureKind::Chase, GROUP_VARIABLES[4], GROUP_VARIABLES[5]),
    ] {
        let of_kind: Vec<_> = measures.iter().filter(|m| m.event_kind == kind).collect();
        if let Some(v) = mean(of_kind.iter().map(|m| m.latency_s).collect()) {
            out.insert(lat, v);
        }
        if let Some(v) = mean(of_kind.iter().map(|m| m.duration_s).collect()) {
            out.insert(dur, v);
        }
    }
    let (points, _) = emotion_segments(&log, &pipeline.emotion)?;
    let dyn_stats = dynamics_stats(&points, manifest.first_instruction_time());
    out.insert(GROUP_VARIABLES[6], dyn_stats.frequency as f64);
    if let Some(l) = dyn_stats.latency_s {
        out.insert(GROUP_VARIABLES[7], l);
    }
    Ok(out)
}

/// TD-versus-ASD t-tests on per-case response and emotion measures. A case
/// without a given response contributes nothing to that variable; a
/// variable with fewer than two cases in a group is skipped.
pub fn group_statistics(
    source: &dyn CaseSource,
    pipeline: &PipelineConfig,
    mode: TTestMode,
) -> Result<Vec<GroupStats>, EvalError> {
    let per_case = source
        .entries()
        .par_iter()
        .map(|e| case_variables(source, pipeline, &e.case_id).map(|v| (e.label, v)))
        .collect::<Result<Vec<_>, EvalError>>()?;
    let mut out = Vec::new();
    for var in GROUP_VARIABLES {
        let group = |label: Label| -> Vec<f64> {
            per_case
                .iter()
                .filter(|(l, _)| *l == label)
                .filter_map(|(_, v)| v.get(var).copied())
                .collect()
        };
        let (td, asd) = (group(Label::TD), group(Label::ASD));
        if td.len() < 2 || asd.len() < 2 {
            log::warn!("{var}: too few samples (TD {}, ASD {}), skipped", td.len(), asd.len());
            continue;
        }
        out.push(group_ttest(var, &td, &asd, mode)?);
    }
    Ok(out)
}
