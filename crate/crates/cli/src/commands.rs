use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use serde_json::{json, Value};

use scriptscreen::behavior_log::{load_log, BehaviorLog, LogError, SessionManifest};
use scriptscreen::emotion_dynamics::{
    ChatDescriber, Describer, EmotionError, EmotionTemplates, FixtureDescriber, StubDescriber,
};
use scriptscreen::ensemble::{DiscussionTranscript, EnsembleError};
use scriptscreen::eval_harness::{
    fewshot_run, fewshot_split, group_statistics, loocv_run, sweep_csv, synth_dataset,
    threshold_sweep, write_dataset, CaseSource, Dataset, Detector, EvalContext, EvalError,
    EvalReport, SynthSpec,
};
use scriptscreen::llm_gateway::{AuditLog, Backend, BackendError, BackendSpec};
use scriptscreen::pipeline::{compile_case, CaseArtifacts, PipelineError};
use scriptscreen::prompt_builder::{build_prompt, PromptBundle, PromptError, PromptTemplates};
use scriptscreen::response_parser::{events_to_jsonl, parse_events};
use scriptscreen::script_compiler::{ScriptDocument, TemplateError, TemplateTable};

use crate::config::{DescriberKind, EnsembleMode, ProtocolKind, RunConfig};
use crate::CliError;

pub enum Request {
    Parse { log: PathBuf, manifest: PathBuf },
    Script { log: PathBuf, manifest: PathBuf },
    Prompt { log: PathBuf, manifest: PathBuf },
    Detect {
        scripts: Vec<PathBuf>,
        case: Option<(PathBuf, PathBuf)>,
    },
    Eval,
    Stats,
    Synth { spec: SynthSpec, name: String },
    Transcript { file: PathBuf },
}

pub struct Summary {
    pub text: String,
    pub json: Value,
}

macro_rules! data_errors {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Data(e.to_string())
            }
        }
    )*};
}
data_errors!(LogError, TemplateError, PromptError, PipelineError, EmotionError);

impl From<BackendError> for CliError {
    fn from(e: BackendError) -> Self {
        match e {
            BackendError::Config(m) => CliError::Usage(m),
            e => CliError::Backend(e.to_string()),
        }
    }
}

impl From<EnsembleError> for CliError {
    fn from(e: EnsembleError) -> Self {
        CliError::Backend(e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Backend(b) => b.into(),
            EvalError::Config(m) => CliError::Usage(m),
            e if e.is_backend() => CliError::Backend(e.to_string()),
            e => CliError::Data(e.to_string()),
        }
    }
}

/// Writes files under the output directory only.
struct Output {
    dir: PathBuf,
}

impl Output {
    fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    fn write(&self, rel: &str, contents: &str) -> Result<PathBuf, CliError> {
        let path = self.path(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)
                .map_err(|e| CliError::Data(format!("{}: {e}", parent.display())))?;
        }
        std::fs::write(&path, contents)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        Ok(path)
    }

    /// A fresh audit log for this run.
    fn audit(&self) -> Result<AuditLog, CliError> {
        std::fs::create_dir_all(&self.dir)
            .map_err(|e| CliError::Data(format!("{}: {e}", self.dir.display())))?;
        let path = self.path("audit.jsonl");
        match std::fs::remove_file(&path) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
            Err(e) => return Err(CliError::Data(format!("{}: {e}", path.display()))),
        }
        Ok(AuditLog::open(&path)?)
    }
}

fn to_json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("value serializes") + "\n"
}

struct Templates {
    script: TemplateTable,
    prompts: PromptTemplates,
    emotion: EmotionTemplates,
}

fn templates(cfg: &RunConfig) -> Result<Templates, CliError> {
    let Some(dir) = &cfg.paths.templates else {
        return Ok(Templates {
            script: TemplateTable::default(),
            prompts: PromptTemplates::default(),
            emotion: EmotionTemplates::default(),
        });
    };
    let table = dir.join("script_templates.toml");
    Ok(Templates {
        script: if table.exists() {
            TemplateTable::from_path(&table)?
        } else {
            TemplateTable::default()
        },
        prompts: PromptTemplates::from_dir(dir)?,
        emotion: EmotionTemplates::from_dir(dir)
            .map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?,
    })
}

struct Backends {
    by_name: BTreeMap<String, Arc<Backend>>,
    order: Vec<String>,
}

impl Backends {
    fn build(cfg: &RunConfig, out: &Output) -> Result<Self, CliError> {
        let specs = if cfg.backends.is_empty() {
            vec![BackendSpec::mock("mock")]
        } else {
            cfg.backends.clone()
        };
        let mut by_name = BTreeMap::new();
        let mut order = Vec::new();
        for mut spec in specs {
            if spec.fixture_dir.is_none() {
                spec.fixture_dir = cfg.paths.fixtures.clone();
            }
            if let Some(rec) = &spec.record_dir {
                if rec.is_relative() {
                    spec.record_dir = Some(out.path(&rec.to_string_lossy()));
                }
            }
            order.push(spec.name.clone());
            by_name.insert(spec.name.clone(), Arc::new(Backend::from_spec(&spec)?));
        }
        Ok(Self { by_name, order })
    }

    fn get(&self, name: &str) -> Result<Arc<Backend>, CliError> {
        self.by_name
            .get(name)
            .cloned()
            .ok_or_else(|| CliError::Usage(format!("unknown backend `{name}`")))
    }

    fn detector(&self, cfg: &RunConfig) -> Result<Detector, CliError> {
        let names: Vec<String> = if cfg.ensemble.members.is_empty() {
            let dm = cfg.ensemble.decision_maker.as_deref();
            let agents = cfg.ensemble.mode == EnsembleMode::Agents;
            self.order
                .iter()
                .filter(|n| !(agents && Some(n.as_str()) == dm))
                .cloned()
                .collect()
        } else {
            cfg.ensemble.members.clone()
        };
        let members = names
            .iter()
            .map(|n| self.get(n))
            .collect::<Result<Vec<_>, _>>()?;
        let first = members
            .first()
            .cloned()
            .ok_or_else(|| CliError::Usage("no backend selected".into()))?;
        Ok(match cfg.ensemble.mode {
            EnsembleMode::None => Detector::Single(first),
            EnsembleMode::Vote => Detector::Vote {
                backends: members,
                tie_break: cfg.ensemble.tie_break,
            },
            EnsembleMode::Agents => {
                let decision_maker = match &cfg.ensemble.decision_maker {
                    Some(n) => self.get(n)?,
                    None => first,
                };
                if members.len() < 2 {
                    return Err(CliError::Usage(format!(
                        "agents mode needs at least 2 backends, got {}",
                        members.len()
                    )));
                }
                Detector::Agents {
                    agents: members,
                    decision_maker,
                    cfg: cfg.ensemble.agents_config(),
                }
            }
        })
    }
}

fn describer(
    cfg: &RunConfig,
    t: &Templates,
    backends: Option<&Backends>,
) -> Result<Option<Arc<dyn Describer>>, CliError> {
    Ok(match cfg.describer.kind {
        DescriberKind::Off => None,
        DescriberKind::Stub => Some(Arc::new(StubDescriber)),
        DescriberKind::Fixture => {
            let path = cfg.describer.fixture.as_ref().expect("validated");
            Some(Arc::new(FixtureDescriber::from_path(path)?))
        }
        DescriberKind::Chat => {
            let name = cfg.describer.backend.as_ref().expect("validated");
            let owned;
            let backends = match backends {
                Some(b) => b,
                None => {
                    owned = Backends::build(cfg, &output(cfg))?;
                    &owned
                }
            };
            Some(Arc::new(ChatDescriber::new(backends.get(name)?, t.emotion.clone())))
        }
    })
}

fn output(cfg: &RunConfig) -> Output {
    Output {
        dir: cfg.output_dir(),
    }
}

fn compile(
    cfg: &RunConfig,
    t: &Templates,
    describer: Option<&Arc<dyn Describer>>,
    log: &BehaviorLog,
    manifest: &SessionManifest,
) -> Result<CaseArtifacts, CliError> {
    Ok(compile_case(
        log,
        manifest,
        &cfg.pipeline,
        &t.script,
        describer.map(|d| &**d),
        None,
    )?)
}

pub fn execute(cfg: &RunConfig, req: Request, cancel: Arc<AtomicBool>) -> Result<Summary, CliError> {
    let out = output(cfg);
    match req {
        Request::Parse { log, manifest } => {
            let (log, manifest) = load_log(&log, &manifest)?;
            let events = parse_events(&log, &manifest, &cfg.pipeline.parser);
            let path = out.write(&format!("{}.events.jsonl", manifest.case_id), &events_to_jsonl(&events))?;
            Ok(Summary {
                text: format!("{} event(s) written to {}\n", events.len(), path.display()),
                json: json!({"case_id": manifest.case_id, "events": events.len(), "file": path}),
            })
        }
        Request::Script { log, manifest } => {
            let (log, manifest) = load_log(&log, &manifest)?;
            let t = templates(cfg)?;
            let d = describer(cfg, &t, None)?;
            let a = compile(cfg, &t, d.as_ref(), &log, &manifest)?;
            let text = a.script.render();
            let id = &manifest.case_id;
            let path = out.write(&format!("{id}.script.txt"), &text)?;
            out.write(&format!("{id}.script.json"), &to_json(&a.script))?;
            if d.is_some() {
                out.write(&format!("{id}.emotion.json"), &to_json(&a.segments))?;
            }
            Ok(Summary {
                json: json!({
                    "case_id": id,
                    "lines": a.script.lines.len(),
                    "dynamic_points": a.points.len(),
                    "segments": a.segments.len(),
                    "file": path,
                }),
                text,
            })
        }
        Request::Prompt { log, manifest } => {
            let (log, manifest) = load_log(&log, &manifest)?;
            let t = templates(cfg)?;
            let d = describer(cfg, &t, None)?;
            let a = compile(cfg, &t, d.as_ref(), &log, &manifest)?;
            let bundle = build_prompt(&a.script, &[], &t.prompts, &cfg.pipeline.prompt)?;
            let text = bundle.render();
            let path = out.write(&format!("{}.prompt.txt", manifest.case_id), &text)?;
            Ok(Summary {
                json: json!({"case_id": manifest.case_id, "chars": text.chars().count(), "file": path}),
                text,
            })
        }
        Request::Detect { scripts, case } => detect(cfg, &out, scripts, case, &cancel),
        Request::Eval => eval(cfg, &out, cancel),
        Request::Stats => {
            let ds = open_dataset(cfg)?;
            let stats = group_statistics(&ds, &cfg.pipeline, cfg.protocol.ttest)?;
            let mut text = String::from("variable,td_mean,asd_mean,td_n,asd_n,t_value,p_value\n");
            for s in &stats {
                let _ = writeln!(
                    text,
                    "{},{:.4},{:.4},{},{},{:.4},{:.6}",
                    s.variable, s.td_mean, s.asd_mean, s.td_n, s.asd_n, s.t_value, s.p_value
                );
            }
            out.write("stats/group_stats.csv", &text)?;
            out.write("stats/group_stats.json", &to_json(&stats))?;
            Ok(Summary {
                text,
                json: serde_json::to_value(&stats).expect("stats serialize"),
            })
        }
        Request::Synth { spec, name } => {
            if name.is_empty() || name.contains(['/', '\\']) || name == ".." {
                return Err(CliError::Usage(format!("invalid dataset name `{name}`")));
            }
            let cases = synth_dataset(&spec);
            let root = out.path(&name);
            write_dataset(&root, &cases)?;
            let asd = cases.iter().filter(|c| c.label == scriptscreen::Label::ASD).count();
            Ok(Summary {
                text: format!(
                    "{} case(s) ({} ASD, {} TD) written to {}\n",
                    cases.len(),
                    asd,
                    cases.len() - asd,
                    root.display()
                ),
                json: json!({"dataset": root, "cases": cases.len(), "asd": asd, "td": cases.len() - asd, "seed": spec.seed}),
            })
        }
        Request::Transcript { file } => {
            let raw = std::fs::read_to_string(&file)
                .map_err(|e| CliError::Data(format!("{}: {e}", file.display())))?;
            let t: DiscussionTranscript = serde_json::from_str(&raw)
                .map_err(|e| CliError::Data(format!("{}: {e}", file.display())))?;
            let text = t.render_text();
            out.write(&format!("{}.transcript.txt", t.case_id), &text)?;
            Ok(Summary {
                text,
                json: json!({"case_id": t.case_id, "rounds": t.rounds.len(), "final": t.final_decision}),
            })
        }
    }
}

fn open_dataset(cfg: &RunConfig) -> Result<Dataset, CliError> {
    let root = cfg
        .paths
        .dataset
        .as_ref()
        .ok_or_else(|| CliError::Usage("no dataset given (--dataset or paths.dataset)".into()))?;
    Ok(Dataset::open(root)?)
}

fn detect(
    cfg: &RunConfig,
    out: &Output,
    scripts: Vec<PathBuf>,
    case: Option<(PathBuf, PathBuf)>,
    cancel: &AtomicBool,
) -> Result<Summary, CliError> {
    let t = templates(cfg)?;
    let backends = Backends::build(cfg, out)?;
    let detector = backends.detector(cfg)?;
    let d = describer(cfg, &t, Some(&backends))?;
    let audit = out.audit()?;

    let mut bundles: Vec<(String, PromptBundle)> = Vec::new();
    for path in &scripts {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let id = path
            .file_stem()
            .and_then(|s| s.to_str())
            .map(|s| s.trim_end_matches(".script").to_string())
            .unwrap_or_else(|| "script".into());
        let doc = ScriptDocument {
            case_id: id.clone(),
            preamble: text.trim_end().to_string(),
            lines: Vec::new(),
        };
        bundles.push((id, build_prompt(&doc, &[], &t.prompts, &cfg.pipeline.prompt)?));
    }
    let mut cases: Vec<(BehaviorLog, SessionManifest)> = Vec::new();
    if let Some((log, manifest)) = &case {
        cases.push(load_log(log, manifest)?);
    }
    if scripts.is_empty() && case.is_none() {
        let ds = open_dataset(cfg)?;
        for e in ds.entries() {
            cases.push(ds.load(&e.case_id)?);
        }
    }
    for (log, manifest) in &cases {
        let a = compile(cfg, &t, d.as_ref(), log, manifest)?;
        bundles.push((
            manifest.case_id.clone(),
            build_prompt(&a.script, &[], &t.prompts, &cfg.pipeline.prompt)?,
        ));
    }

    let mut rows = Vec::new();
    let mut text = String::new();
    for (id, bundle) in &bundles {
        if cancel.load(Ordering::SeqCst) {
            log::warn!("interrupted: {} case(s) not run", bundles.len() - rows.len());
            break;
        }
        let p = detector.predict(id, bundle, Some(&audit))?;
        let mut row = json!({
            "case_id": id,
            "prediction": p.prediction,
            "rationale": p.rationale,
            "backends": p.results.iter().map(|r| json!({
                "backend": r.backend,
                "prediction": r.prediction,
                "prompt_hash": r.prompt_hash,
            })).collect::<Vec<_>>(),
        });
        if let Some(tr) = &p.transcript {
            let rel = format!("detect/transcripts/{id}.json");
            out.write(&rel, &tr.to_json())?;
            out.write(&format!("detect/transcripts/{id}.txt"), &tr.render_text())?;
            row["transcript"] = json!(rel);
        }
        let _ = writeln!(text, "{id}\t{}", p.prediction);
        rows.push(row);
    }
    let jsonl: String = rows
        .iter()
        .map(|r| serde_json::to_string(r).expect("row serializes") + "\n")
        .collect();
    out.write("detect/results.jsonl", &jsonl)?;
    Ok(Summary {
        text,
        json: json!({
            "detector": detector.describe(),
            "cases": rows,
            "interrupted": cancel.load(Ordering::SeqCst),
        }),
    })
}

/// Writes transcripts of agent discussions and points rows at them.
fn write_report(out: &Output, dir: &str, report: &mut EvalReport) -> Result<(), CliError> {
    for row in &mut report.rows {
        if let Some(t) = &row.transcript {
            let rel = format!("{dir}/transcripts/{}.json", row.case_id);
            out.write(&rel, &t.to_json())?;
            row.rationale_ref = Some(rel);
        }
    }
    out.write(&format!("{dir}/report.json"), &to_json(report))?;
    out.write(&format!("{dir}/report.txt"), &report.to_text())?;
    Ok(())
}

fn eval(cfg: &RunConfig, out: &Output, cancel: Arc<AtomicBool>) -> Result<Summary, CliError> {
    let ds = open_dataset(cfg)?;
    let t = templates(cfg)?;
    let backends = Backends::build(cfg, out)?;
    let detector = backends.detector(cfg)?;
    let d = describer(cfg, &t, Some(&backends))?;
    let ctx = EvalContext {
        pipeline: cfg.pipeline.clone(),
        templates: t.script,
        prompts: t.prompts,
        describer: d,
        detector,
        audit: Some(Arc::new(out.audit()?)),
        workers: cfg.protocol.workers,
        cancel: Some(cancel),
    };
    match cfg.protocol.kind {
        ProtocolKind::Loocv | ProtocolKind::Fewshot => {
            let mut report = if cfg.protocol.kind == ProtocolKind::Loocv {
                loocv_run(&ds, &ctx)?
            } else {
                let split = fewshot_split(ds.entries(), cfg.protocol.seed, cfg.protocol.shots_per_class)?;
                out.write("eval/split.json", &to_json(&split))?;
                fewshot_run(&ds, &ctx, &split)?
            };
            write_report(out, "eval", &mut report)?;
            if report.cancelled {
                log::warn!("interrupted: partial report written");
            }
            Ok(Summary {
                text: report.to_text(),
                json: serde_json::to_value(&report).expect("report serializes"),
            })
        }
        ProtocolKind::Sweep => {
            let mut rows = threshold_sweep(&ds, &ctx, &cfg.protocol.alphas)?;
            for r in &mut rows {
                write_report(out, &format!("eval/sweep/alpha_{}", r.alpha), &mut r.report)?;
            }
            let csv = sweep_csv(&rows);
            out.write("eval/sweep.csv", &csv)?;
            Ok(Summary {
                text: csv,
                json: json!({
                    "alphas": rows.iter().map(|r| r.alpha).collect::<Vec<_>>(),
                    "reports": rows.iter().map(|r| &r.report).collect::<Vec<_>>(),
                }),
            })
        }
    }
}
