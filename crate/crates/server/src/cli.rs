//! Command-line entry points.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use slangquest_core::analytics::{build_group_report, render_tables};
use slangquest_core::batch::Execution;
use slangquest_core::events::{self, FileLog};
use slangquest_core::gm::{ScriptedProvider, DEFAULT_MAX_ATTEMPTS};
use slangquest_core::runtime::{Services, SessionRuntime, SystemClock};
use slangquest_core::simulate::{run_script, LearnerScript};
use slangquest_core::speech::{PassthroughAsr, SilentTts};
use slangquest_core::teacher::{ProviderTeacher, TemplateTeacher};
use slangquest_core::{assessment::MockGrader, GameConfig, Mode};

use crate::adapters::{AudioStore, ChatProvider, CloudTts, LlmGrader, WhisperAsr};
use crate::api::{self, AppState};

pub const DEFAULT_ASR_ENDPOINT: &str = "https://api.openai.com/v1";
const AUDIO_CACHE: usize = 512;

#[derive(Debug, Parser)]
#[command(name = "slangquest", version, about = "Slang-practice role-play sessions: service and tools")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the HTTP/JSON API.
    Serve(ServeArgs),
    /// Play one scripted role-play session and one scripted classroom session offline, writing their logs.
    Simulate(SimulateArgs),
    /// Rebuild a session's final state from its log and print it as JSON.
    Replay(ReplayArgs),
    /// Aggregate every session log in a directory into a group report.
    Analyze(AnalyzeArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ProviderKind {
    Scripted,
    External,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SpeechKind {
    Stub,
    External,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "fixtures/config.toml")]
    pub config: PathBuf,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, value_enum, default_value_t = ProviderKind::Scripted)]
    pub provider: ProviderKind,
    #[arg(long, value_enum, default_value_t = SpeechKind::Stub)]
    pub asr: SpeechKind,
    #[arg(long, value_enum, default_value_t = SpeechKind::Stub)]
    pub tts: SpeechKind,
    /// Scripted game-master replies, used with `--provider scripted`.
    #[arg(long, default_value = "fixtures/gm_script.toml")]
    pub gm_script: PathBuf,
    /// Directory for per-session event logs.
    #[arg(long, default_value = "logs")]
    pub log_dir: PathBuf,
    #[arg(long, default_value_t = DEFAULT_MAX_ATTEMPTS)]
    pub max_attempts: u32,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, default_value = "fixtures/config.toml")]
    pub config: PathBuf,
    #[arg(long, default_value = "fixtures/gm_script.toml")]
    pub gm_script: PathBuf,
    #[arg(long, default_value = "fixtures/learner_script.toml")]
    pub learner_script: PathBuf,
    #[arg(long, default_value = "sim-logs")]
    pub out: PathBuf,
    /// Replace logs left by an earlier run.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    pub log: PathBuf,
    #[arg(long, default_value = "fixtures/config.toml")]
    pub config: PathBuf,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub logs: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "fixtures/config.toml")]
    pub config: PathBuf,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Serve(args) => serve(args),
        Command::Simulate(args) => simulate(args),
        Command::Replay(args) => replay(args),
        Command::Analyze(args) => analyze(args),
    }
}

fn load_config(path: &Path) -> Result<Arc<GameConfig>> {
    let config = GameConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
    Ok(Arc::new(config))
}

/// Assembles the services for `serve`. Every external binding needs its key
/// in the environment; a missing key fails here, before anything listens.
pub fn build_services(
    args: &ServeArgs,
    config: Arc<GameConfig>,
    env: impl Fn(&str) -> Option<String>,
) -> Result<(Services, Arc<AudioStore>)> {
    let key = |name: &str, what: &str| match env(name).filter(|v| !v.trim().is_empty()) {
        Some(v) => Ok(v),
        None => bail!("{what} is set to external but {name} is not set"),
    };
    let llm_key = (args.provider == ProviderKind::External).then(|| key("LLM_API_KEY", "--provider")).transpose()?;
    let asr_key = (args.asr == SpeechKind::External).then(|| key("ASR_API_KEY", "--asr")).transpose()?;
    let tts_key = (args.tts == SpeechKind::External).then(|| key("TTS_API_KEY", "--tts")).transpose()?;

    let audio = Arc::new(AudioStore::new(AUDIO_CACHE));
    let mut services = match llm_key {
        Some(api_key) => {
            let Some(settings) = &config.provider else {
                bail!("--provider external needs a [provider] section in the configuration");
            };
            let chat = Arc::new(ChatProvider::new(&settings.endpoint, &settings.model, api_key));
            let mut s = Services::offline(config.clone(), chat.clone());
            s.teacher = Arc::new(ProviderTeacher::new(chat.clone()));
            s.grader = Arc::new(LlmGrader::new(chat));
            s
        }
        None => {
            let script = ScriptedProvider::load(&args.gm_script)
                .with_context(|| format!("loading {}", args.gm_script.display()))?;
            let mut s = Services::offline(config.clone(), Arc::new(script));
            s.teacher = Arc::new(TemplateTeacher);
            s.grader = Arc::new(MockGrader::new());
            s
        }
    };
    services.asr = match asr_key {
        Some(k) => Arc::new(WhisperAsr::new(DEFAULT_ASR_ENDPOINT, k)),
        None => Arc::new(PassthroughAsr),
    };
    services.tts = match tts_key {
        Some(k) => Arc::new(CloudTts::new(k, audio.clone())),
        None => Arc::new(SilentTts),
    };
    services.clock = Arc::new(SystemClock);
    services.max_attempts = args.max_attempts;
    Ok((services, audio))
}

fn serve(args: ServeArgs) -> Result<()> {
    let config = load_config(&args.config)?;
    let (services, audio) = build_services(&args, config, |k| std::env::var(k).ok())?;
    std::fs::create_dir_all(&args.log_dir).with_context(|| format!("creating {}", args.log_dir.display()))?;
    let addr: SocketAddr = format!("{}:{}", args.host, args.port).parse().context("invalid --host/--port")?;
    let state = Arc::new(AppState::new(Arc::new(services), &args.log_dir, audio));

    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await.with_context(|| format!("binding {addr}"))?;
        log::info!(
            "listening on {} (provider {:?}, asr {:?}, tts {:?})",
            listener.local_addr()?,
            args.provider,
            args.asr,
            args.tts
        );
        println!("listening on http://{}", listener.local_addr()?);
        axum::serve(listener, api::router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}

/// Log and state-file names written by `simulate`.
pub const SIM_SESSIONS: [(&str, Mode); 2] = [("sim-rpg", Mode::Rpg), ("sim-classroom", Mode::Classroom)];

fn simulate(args: SimulateArgs) -> Result<()> {
    let config = load_config(&args.config)?;
    let provider = ScriptedProvider::load(&args.gm_script).with_context(|| format!("loading {}", args.gm_script.display()))?;
    let script = LearnerScript::load(&args.learner_script)
        .with_context(|| format!("loading {}", args.learner_script.display()))?;
    let services = Arc::new(Services::offline(config, Arc::new(provider)));
    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;

    for (name, mode) in SIM_SESSIONS {
        let log_path = args.out.join(format!("{name}.jsonl"));
        let state_path = args.out.join(format!("{name}.state.json"));
        if args.force {
            for p in [&log_path, &state_path] {
                if p.exists() {
                    std::fs::remove_file(p).with_context(|| format!("removing {}", p.display()))?;
                }
            }
        }
        let log = FileLog::create(&log_path)
            .context("pass --force to replace logs from an earlier run")?;
        // one participant per condition, as in a between-groups study
        let suffix = match mode {
            Mode::Rpg => "rpg",
            Mode::Classroom => "classroom",
        };
        let learner = LearnerScript { participant_id: format!("{}-{suffix}", script.participant_id), ..script.clone() };
        let rt: SessionRuntime = run_script(services.clone(), Box::new(log), name, mode, &learner)
            .with_context(|| format!("simulating {name}"))?;
        std::fs::write(&state_path, serde_json::to_string_pretty(rt.state())?)?;
        print_summary(name, &rt);
        println!("  log: {}", log_path.display());
    }
    Ok(())
}

fn print_summary(name: &str, rt: &SessionRuntime) {
    let s = rt.state();
    println!("{name}: {:?} session, {} turns, {:?}", s.mode, s.turn_index, s.status);
    if let Some(o) = &s.outcome {
        println!("  outcome: {:?} (checkpoint total {})", o.ending_label, o.checkpoint_total);
    }
    let usage: Vec<String> = s.usage.iter().map(|u| format!("{}={}", u.phrase_id, u.count)).collect();
    println!("  usage: {} (total {})", usage.join(", "), s.total_usage());
    if let (Some(pre), Some(post)) = (rt.pretest(), rt.posttest()) {
        println!(
            "  definition {} -> {}, sentence {} -> {}",
            pre.definition.total, post.definition.total, pre.sentence.total, post.sentence.total
        );
    }
}

fn replay(args: ReplayArgs) -> Result<()> {
    let config = load_config(&args.config)?;
    let events = events::read_log(&args.log).with_context(|| format!("reading {}", args.log.display()))?;
    let session = events::replay(&events, &config).map_err(|e| anyhow::anyhow!("{}: {e}", args.log.display()))?;
    write_stdout(&serde_json::to_string_pretty(&session.state)?)
}

fn analyze(args: AnalyzeArgs) -> Result<()> {
    let config = load_config(&args.config)?;
    let exec = Execution::default();
    let sessions = events::replay_dir(&args.logs, &config, exec)?;
    if sessions.is_empty() {
        bail!("no *.jsonl logs in {}", args.logs.display());
    }
    let mut states = Vec::new();
    let mut records = Vec::new();
    let mut surveys = Vec::new();
    for (path, s) in sessions {
        if !s.state.is_finished() {
            log::warn!("skipping unfinished session {}", path.display());
            continue;
        }
        records.extend(s.assessment_record());
        surveys.extend(s.survey.clone());
        states.push(s.state);
    }
    let report = build_group_report(&records, &states, &surveys, exec)?;
    std::fs::write(&args.out, report.to_json()).with_context(|| format!("writing {}", args.out.display()))?;
    write_stdout(&format!("{}report written to {}", render_tables(&report), args.out.display()))
}

/// Prints `text`; a closed pipe (e.g. `| head`) is not an error.
fn write_stdout(text: &str) -> Result<()> {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{text}").and_then(|_| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}
