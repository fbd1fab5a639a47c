//! `scriptscreen`: parse behavior logs, compile scripts, run detections and
//! evaluate protocols from the command line.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use config::{DescriberKind, EnsembleMode, ProtocolKind, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "scriptscreen", version, about = "Behavior-script screening pipeline")]
struct Cli {
    /// TOML run configuration; command-line flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; every file the command writes goes here.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Print a machine-readable summary on stdout.
    #[arg(long, global = true)]
    json: bool,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct CaseArgs {
    #[arg(long)]
    log: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
}

#[derive(Debug, Args)]
struct ModelArgs {
    /// Backend name from the config (repeatable). Defaults to the ensemble
    /// members, or every configured backend.
    #[arg(long = "backend")]
    backends: Vec<String>,
    #[arg(long, value_enum)]
    ensemble: Option<EnsembleMode>,
    #[arg(long)]
    decision_maker: Option<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Detect response events in a behavior log.
    Parse(CaseArgs),
    /// Compile a behavior script.
    Script {
        #[command(flatten)]
        case: CaseArgs,
        #[arg(long, value_enum)]
        emotion: Option<DescriberKind>,
    },
    /// Render the detection prompt for one case.
    Prompt {
        #[command(flatten)]
        case: CaseArgs,
        #[arg(long, value_enum)]
        emotion: Option<DescriberKind>,
    },
    /// Run detection on scripts, a single case, or a whole dataset.
    Detect {
        /// Rendered script file(s); the file stem is the case id.
        #[arg(long = "script")]
        scripts: Vec<PathBuf>,
        #[arg(long, requires = "manifest")]
        log: Option<PathBuf>,
        #[arg(long, requires = "log")]
        manifest: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, value_enum)]
        emotion: Option<DescriberKind>,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Evaluate a labeled dataset under a protocol.
    Eval {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, value_enum)]
        protocol: Option<ProtocolKind>,
        #[arg(long)]
        seed: Option<u64>,
        /// Training cases per class for the few-shot protocol.
        #[arg(long)]
        shots: Option<usize>,
        /// Comma-separated thresholds for the sweep protocol.
        #[arg(long, value_delimiter = ',')]
        alphas: Option<Vec<f64>>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long, value_enum)]
        emotion: Option<DescriberKind>,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// TD-versus-ASD t-tests on response and emotion measures.
    Stats {
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Use the pooled-variance test instead of Welch's.
        #[arg(long)]
        pooled: bool,
    },
    /// Generate a synthetic labeled dataset.
    Synth {
        #[arg(long, default_value_t = 10)]
        n_asd: usize,
        #[arg(long, default_value_t = 10)]
        n_td: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10.0)]
        fps: f64,
        /// Directory name under the output dir.
        #[arg(long, default_value = "dataset")]
        name: String,
    },
    /// Render a discussion transcript JSON as text.
    Transcript { file: PathBuf },
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Backend(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Backend(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Backend(m) => write!(f, "backend error: {m}"),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    let cancel = Arc::new(AtomicBool::new(false));
    {
        let cancel = cancel.clone();
        if let Err(e) = ctrlc::set_handler(move || {
            if cancel.swap(true, Ordering::SeqCst) {
                std::process::exit(130);
            }
            eprintln!("interrupted: finishing running cases, press Ctrl-C again to abort");
        }) {
            log::warn!("cannot install the interrupt handler: {e}");
        }
    }

    match run(cli, cancel) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli, cancel: Arc<AtomicBool>) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(out) = cli.out {
        cfg.paths.output = Some(out);
    }
    let model = |cfg: &mut RunConfig, m: ModelArgs| {
        if !m.backends.is_empty() {
            cfg.ensemble.members = m.backends;
        }
        if let Some(e) = m.ensemble {
            cfg.ensemble.mode = e;
        }
        if m.decision_maker.is_some() {
            cfg.ensemble.decision_maker = m.decision_maker;
        }
    };
    let emotion = |cfg: &mut RunConfig, e: Option<DescriberKind>| {
        if let Some(e) = e {
            cfg.describer.kind = e;
        }
    };
    let request = match cli.command {
        Command::Parse(c) => commands::Request::Parse {
            log: c.log,
            manifest: c.manifest,
        },
        Command::Script { case, emotion: e } => {
            emotion(&mut cfg, e);
            commands::Request::Script {
                log: case.log,
                manifest: case.manifest,
            }
        }
        Command::Prompt { case, emotion: e } => {
            emotion(&mut cfg, e);
            commands::Request::Prompt {
                log: case.log,
                manifest: case.manifest,
            }
        }
        Command::Detect {
            scripts,
            log,
            manifest,
            dataset,
            emotion: e,
            model: m,
        } => {
            emotion(&mut cfg, e);
            model(&mut cfg, m);
            if dataset.is_some() {
                cfg.paths.dataset = dataset;
            }
            let case = log.zip(manifest);
            if scripts.is_empty() && case.is_none() && cfg.paths.dataset.is_none() {
                return Err(CliError::Usage(
                    "detect needs --script, --log/--manifest or a dataset".into(),
                ));
            }
            commands::Request::Detect { scripts, case }
        }
        Command::Eval {
            dataset,
            protocol,
            seed,
            shots,
            alphas,
            alpha,
            workers,
            emotion: e,
            model: m,
        } => {
            emotion(&mut cfg, e);
            model(&mut cfg, m);
            if dataset.is_some() {
                cfg.paths.dataset = dataset;
            }
            let p = &mut cfg.protocol;
            p.kind = protocol.unwrap_or(p.kind);
            p.seed = seed.unwrap_or(p.seed);
            p.shots_per_class = shots.unwrap_or(p.shots_per_class);
            p.workers = workers.unwrap_or(p.workers);
            if let Some(a) = alphas {
                p.alphas = a;
            }
            if let Some(a) = alpha {
                cfg.pipeline.emotion.alpha = a;
            }
            commands::Request::Eval
        }
        Command::Stats { dataset, pooled } => {
            if dataset.is_some() {
                cfg.paths.dataset = dataset;
            }
            if pooled {
                cfg.protocol.ttest = scriptscreen::eval_harness::TTestMode::Pooled;
            }
            commands::Request::Stats
        }
        Command::Synth {
            n_asd,
            n_td,
            seed,
            fps,
            name,
        } => commands::Request::Synth {
            spec: scriptscreen::eval_harness::SynthSpec {
                n_asd,
                n_td,
                seed,
                fps,
                ..Default::default()
            },
            name,
        },
        Command::Transcript { file } => commands::Request::Transcript { file },
    };
    cfg.validate()?;
    let summary = commands::execute(&cfg, request, cancel)?;
    if cli.json {
        println!(
            "{}",
            serde_json::to_string_pretty(&summary.json).expect("summary serializes")
        );
    } else {
        print!("{}", summary.text);
    }
    Ok(())
}
