//! The `orc` command line.
//!
//! Exit codes: 0 when a run finishes (including `preempted`), 1 for usage and
//! validation problems, 2 when a run aborts.

use std::ffi::OsString;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};
use crossbeam_channel::Receiver;

use crate::engine::{Engine, EngineConfig, EngineError, EventBody, HistoryEntry, Notice, Status, StepCommand};
use crate::model::{machine_depth, validate, GeneratorProfile, StateMachineDef, StatePath};
use crate::remote::{Server, ServerConfig, BIND_VAR, DEFAULT_BIND};
use crate::storage::{self, LibraryRegistry};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_ABORTED: i32 = 2;

const RUN_HELP: &str = "\
Each history event is printed on its own line:

  SEQ EVENT PATH [DETAIL]

matching ^([0-9]+) (Entered|Exited|ScriptError|Preempted|SteppedBack) ([^ ]+)( .*)?$
where DETAIL is the outcome for Exited and the message for ScriptError. With
--format human a UTC timestamp column is prepended. Logs go to stderr.";

#[derive(Parser, Debug)]
#[command(name = "orc", version, about = "Run, debug and serve hierarchical state machines")]
pub struct Cli {
    /// Extra library search directory, searched before ORC_LIBRARY_PATH.
    #[arg(long = "library-path", global = true, value_name = "DIR")]
    pub library_path: Vec<PathBuf>,
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    /// One event per line, no timestamps.
    Lines,
    /// Adds a wallclock column.
    Human,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Profile {
    Scale,
    Semantics,
    Sequential,
    Pure,
}

impl From<Profile> for GeneratorProfile {
    fn from(p: Profile) -> Self {
        match p {
            Profile::Scale => GeneratorProfile::Scale,
            Profile::Semantics => GeneratorProfile::Semantics,
            Profile::Sequential => GeneratorProfile::Sequential,
            Profile::Pure => GeneratorProfile::PureScript,
        }
    }
}

#[derive(clap::Args, Debug, Clone)]
pub struct EngineArgs {
    /// Seed for the script `rand()` builtin.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Statements one script invocation may execute.
    #[arg(long = "step-budget")]
    pub step_budget: Option<u64>,
}

#[derive(Subcommand, Debug)]
pub enum Cmd {
    /// Check a machine; prints "SEVERITY CODE path message" per finding.
    Validate { dir: PathBuf },
    /// Run a machine to completion and print its history.
    #[command(after_help = RUN_HELP)]
    Run {
        dir: PathBuf,
        /// Start at this state instead of the root, e.g. root/H/B.
        #[arg(long)]
        from: Option<StatePath>,
        #[command(flatten)]
        engine: EngineArgs,
        #[arg(long, value_enum, default_value = "lines")]
        format: Format,
    },
    /// Interactive stepping: run, pause, over, into, out, back, from PATH, globals, quit.
    Debug {
        dir: PathBuf,
        #[command(flatten)]
        engine: EngineArgs,
    },
    /// Serve the remote protocol for a machine until interrupted.
    Serve {
        dir: PathBuf,
        /// Address to listen on; ORC_BIND takes precedence when set.
        #[arg(long, default_value = DEFAULT_BIND)]
        bind: String,
        /// Static files to serve under /console.
        #[arg(long = "console-dir")]
        console_dir: Option<PathBuf>,
        #[command(flatten)]
        engine: EngineArgs,
    },
    /// Write a synthetic machine.
    Generate {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        states: u64,
        #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u64).range(1..))]
        depth: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "scale")]
        profile: Profile,
    },
}

pub struct Io<'a> {
    pub stdin: &'a mut dyn BufRead,
    pub stdout: &'a mut dyn Write,
    pub stderr: &'a mut dyn Write,
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I, io: &mut Io<'_>) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { write!(io.stderr, "{text}") } else { write!(io.stdout, "{text}") };
            return code;
        }
    };
    let registry = LibraryRegistry::with_env(cli.library_path.clone());
    let code = match cli.command {
        Cmd::Validate { dir } => cmd_validate(&dir, &registry, io),
        Cmd::Run { dir, from, engine, format } => cmd_run(&dir, &registry, from, &engine, format, io),
        Cmd::Debug { dir, engine } => cmd_debug(&dir, &registry, &engine, io),
        Cmd::Serve { dir, bind, console_dir, engine } => {
            let bind = std::env::var(BIND_VAR).ok().filter(|b| !b.is_empty()).unwrap_or(bind);
            cmd_serve(&dir, &registry, &bind, console_dir, &engine, io)
        }
        Cmd::Generate { seed, states, depth, out, profile } => {
            cmd_generate(seed, states as usize, depth as usize, &out, profile, io)
        }
    };
    let _ = io.stdout.flush();
    code
}

fn load(dir: &Path, registry: &LibraryRegistry, io: &mut Io<'_>) -> Option<StateMachineDef> {
    match storage::load(dir, registry) {
        Ok(m) => Some(m),
        Err(e) => {
            let _ = writeln!(io.stderr, "error: {} {e}", e.code());
            None
        }
    }
}

fn config(m: &StateMachineDef, args: &EngineArgs) -> EngineConfig {
    let mut c = EngineConfig::for_machine(m);
    if let Some(s) = args.seed {
        c.rng_seed = s;
    }
    if let Some(b) = args.step_budget {
        c.step_budget = b;
    }
    c
}

/// Validates and reports; `None` if the machine has errors.
fn checked(dir: &Path, registry: &LibraryRegistry, io: &mut Io<'_>) -> Option<StateMachineDef> {
    let m = load(dir, registry, io)?;
    let report = validate(&m);
    if report.has_errors() {
        for f in report.errors() {
            let _ = writeln!(io.stderr, "{f}");
        }
        return None;
    }
    Some(m)
}

pub fn cmd_validate(dir: &Path, registry: &LibraryRegistry, io: &mut Io<'_>) -> i32 {
    let Some(m) = load(dir, registry, io) else { return EXIT_USAGE };
    let report = validate(&m);
    for f in &report.findings {
        let _ = writeln!(io.stdout, "{f}");
    }
    if report.has_errors() { EXIT_USAGE } else { EXIT_OK }
}

fn interrupts() -> &'static Receiver<()> {
    static RX: OnceLock<Receiver<()>> = OnceLock::new();
    RX.get_or_init(|| {
        let (tx, rx) = crossbeam_channel::unbounded();
        if let Err(e) = ctrlc::set_handler(move || {
            let _ = tx.send(());
        }) {
            log::warn!(target: "orc::cli", "no interrupt handler: {e}");
        }
        rx
    })
}

fn write_entry(out: &mut dyn Write, h: &HistoryEntry, format: Format) {
    let _ = match format {
        Format::Lines => writeln!(out, "{}", h.line()),
        Format::Human => writeln!(out, "{} {}", h.wallclock.format("%Y-%m-%dT%H:%M:%S%.3fZ"), h.line()),
    };
}

fn exit_for(status: &Status, io: &mut Io<'_>) -> i32 {
    match status {
        Status::Aborted(reason) => {
            let _ = writeln!(io.stderr, "aborted: {reason}");
            EXIT_ABORTED
        }
        _ => EXIT_OK,
    }
}

fn start_error(e: &EngineError, io: &mut Io<'_>) -> i32 {
    let _ = writeln!(io.stderr, "error: {} {e}", e.code());
    EXIT_USAGE
}

pub fn cmd_run(
    dir: &Path,
    registry: &LibraryRegistry,
    from: Option<StatePath>,
    args: &EngineArgs,
    format: Format,
    io: &mut Io<'_>,
) -> i32 {
    let Some(m) = checked(dir, registry, io) else { return EXIT_USAGE };
    let cfg = config(&m, args);
    let engine = Engine::new(m, cfg);
    let notices = engine.subscribe();
    let interrupted = interrupts();
    let started = match from {
        Some(p) => engine.start_from(p),
        None => engine.start(),
    };
    if let Err(e) = started {
        return start_error(&e, io);
    }
    loop {
        crossbeam_channel::select! {
            recv(notices) -> n => match n {
                Ok(Notice::Event(e)) => match &e.body {
                    EventBody::History(h) => write_entry(io.stdout, h, format),
                    EventBody::Status(s) if s.is_terminal() => return exit_for(s, io),
                    _ => {}
                },
                Ok(Notice::Reply { .. }) => {}
                Err(_) => return EXIT_ABORTED,
            },
            recv(interrupted) -> _ => {
                let _ = writeln!(io.stderr, "interrupted; stopping");
                let _ = engine.stop();
            }
        }
    }
}

fn describe(engine: &Engine) -> String {
    match engine.status() {
        Status::Paused => match engine.position() {
            Some(p) => format!("paused {p}"),
            None => "paused".into(),
        },
        s => s.to_string(),
    }
}

pub fn cmd_debug(dir: &Path, registry: &LibraryRegistry, args: &EngineArgs, io: &mut Io<'_>) -> i32 {
    let Some(m) = checked(dir, registry, io) else { return EXIT_USAGE };
    let root_composite = m.root.kind.is_composite();
    let cfg = config(&m, args);
    let engine = Arc::new(Engine::new(m, cfg));
    // Ctrl-C pauses a running machine instead of ending the session.
    let pauser = engine.clone();
    let interrupted = interrupts().clone();
    std::thread::spawn(move || {
        for () in interrupted.iter() {
            let _ = pauser.pause();
        }
    });
    let settle = |e: &Engine| e.wait_settled(Duration::from_secs(3600));
    let begin = |e: &Engine, from: Option<StatePath>| -> Result<(), EngineError> {
        e.command(crate::engine::Command::Start { from: from.clone(), paused: true })?;
        if from.is_none() && root_composite {
            e.step(StepCommand::Into)?;
            settle(e);
        }
        Ok(())
    };
    if let Err(e) = begin(&engine, None) {
        return start_error(&e, io);
    }
    let mut printed = 0u64;
    let mut flush = |e: &Engine, out: &mut dyn Write| {
        let seen = printed;
        for h in e.history().into_iter().filter(|h| h.seq > seen) {
            printed = h.seq;
            write_entry(out, &h, Format::Lines);
        }
    };
    flush(&engine, io.stdout);
    let _ = writeln!(io.stdout, "{}", describe(&engine));
    loop {
        let _ = write!(io.stdout, "orc> ");
        let _ = io.stdout.flush();
        let mut line = String::new();
        match io.stdin.read_line(&mut line) {
            Ok(0) | Err(_) => break,
            Ok(_) => {}
        }
        let mut words = line.split_whitespace();
        let Some(verb) = words.next() else { continue };
        let result = match verb {
            "run" | "continue" => match engine.status() {
                Status::Paused => engine.resume(),
                s if s.is_terminal() => begin(&engine, None).and_then(|_| engine.resume()),
                _ => Ok(()),
            },
            "pause" => engine.pause(),
            "over" => engine.step(StepCommand::Over),
            "into" => engine.step(StepCommand::Into),
            "out" => engine.step(StepCommand::Out),
            "back" => engine.step_back(),
            "from" => match words.next().map(str::parse::<StatePath>) {
                Some(Ok(p)) => {
                    if matches!(engine.status(), Status::Running | Status::Paused) {
                        let _ = engine.stop();
                        settle(&engine);
                    }
                    begin(&engine, Some(p))
                }
                Some(Err(e)) => Err(EngineError::BadPath(e)),
                None => Err(EngineError::BadPath("usage: from PATH".into())),
            },
            "globals" => {
                for (k, v) in engine.globals().snapshot() {
                    let _ = writeln!(io.stdout, "{k} = {}", v.to_json());
                }
                Ok(())
            }
            "status" => Ok(()),
            "quit" | "exit" => break,
            other => {
                let _ = writeln!(io.stdout, "unknown command `{other}` (run pause over into out back from globals status quit)");
                continue;
            }
        };
        if let Err(e) = result {
            let _ = writeln!(io.stdout, "error: {} {e}", e.code());
        }
        settle(&engine);
        flush(&engine, io.stdout);
        let _ = writeln!(io.stdout, "{}", describe(&engine));
    }
    if matches!(engine.status(), Status::Running | Status::Paused) {
        let _ = engine.stop();
        settle(&engine);
    }
    EXIT_OK
}

pub fn cmd_serve(
    dir: &Path,
    registry: &LibraryRegistry,
    bind: &str,
    console_dir: Option<PathBuf>,
    args: &EngineArgs,
    io: &mut Io<'_>,
) -> i32 {
    let Some(m) = checked(dir, registry, io) else { return EXIT_USAGE };
    let cfg = config(&m, args);
    let engine = Arc::new(Engine::new(m, cfg));
    let server_cfg = ServerConfig { console_dir, ..ServerConfig::default() };
    let server = match Server::start(engine.clone(), bind, server_cfg) {
        Ok(s) => s,
        Err(e) => {
            let _ = writeln!(io.stderr, "error: {} {e}", e.code());
            return EXIT_USAGE;
        }
    };
    // Installed before the banner so an early Ctrl-C still stops cleanly.
    let interrupted = interrupts();
    let _ = writeln!(io.stdout, "listening on {}", server.url());
    let _ = io.stdout.flush();
    let _ = interrupted.recv();
    let _ = writeln!(io.stderr, "interrupted; stopping");
    if matches!(engine.status(), Status::Running | Status::Paused) {
        let _ = engine.stop();
    }
    let status = engine.wait_settled(Duration::from_secs(60));
    server.shutdown();
    match status {
        Status::Aborted(_) => exit_for(&status, io),
        _ => EXIT_OK,
    }
}

pub fn cmd_generate(seed: u64, states: usize, depth: usize, out: &Path, profile: Profile, io: &mut Io<'_>) -> i32 {
    let m = GeneratorProfile::from(profile).generate(seed, states, depth);
    match storage::save(&m, out) {
        Ok(path) => {
            let _ = writeln!(
                io.stderr,
                "wrote {} ({} states, {} transitions, depth {})",
                path.display(),
                m.state_count(),
                m.transition_count(),
                machine_depth(&m)
            );
            EXIT_OK
        }
        Err(e) => {
            let _ = writeln!(io.stderr, "error: {} {e}", e.code());
            EXIT_USAGE
        }
    }
}
