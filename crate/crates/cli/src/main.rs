use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mi_checker::checker::{SearchLimits, StopMode, Strategy, Verdict};
use mi_checker::commands::{
    cmd_compare, cmd_replay, cmd_simulate, render_check, render_compare, render_simulate,
    run_check, CheckReport, IntruderMode, RunConfig,
};
use mi_checker::protocol::session::DEFAULT_FAKE_DEPTH;

const EXIT_CLEAN: u8 = 0;
const EXIT_VIOLATION: u8 = 1;
const EXIT_ERROR: u8 = 2;
const EXIT_INCONCLUSIVE: u8 = 3;

#[derive(Parser)]
#[command(
    name = "micheck",
    version,
    about = "Security protocol model checker with message-inspection pruning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the passive preliminary phase and print the pruning report.
    Simulate(RunArgs),
    /// Search for secrecy and authentication violations.
    Check(RunArgs),
    /// Run the full and the pruned intruder back to back.
    Compare(RunArgs),
    /// Re-execute a trace written by `check --format json`.
    Replay(ReplayArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Intruder {
    Dy,
    Mi,
    MiReportOnly,
}

#[derive(Clone, Copy, ValueEnum)]
enum Search {
    Dfs,
    Bfs,
}

#[derive(Clone, Copy, ValueEnum)]
enum Stop {
    FirstError,
    Exhaustive,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Args)]
struct RunArgs {
    /// Protocol specification file.
    spec: PathBuf,
    /// Number of sessions, taken from the spec's `sessions` block.
    #[arg(long, default_value_t = 2)]
    sessions: usize,
    /// Explicit session, agents in role order (e.g. `A,B`); repeatable.
    #[arg(long, value_delimiter = ';')]
    assign: Vec<String>,
    #[arg(long, value_enum, default_value_t = Intruder::Mi)]
    intruder: Intruder,
    #[arg(long, value_enum, default_value_t = Search::Dfs)]
    search: Search,
    #[arg(long, value_enum, default_value_t = Stop::FirstError)]
    stop: Stop,
    #[arg(long, default_value_t = DEFAULT_FAKE_DEPTH)]
    fake_depth: usize,
    #[arg(long, default_value_t = SearchLimits::default().max_states)]
    max_states: usize,
    #[arg(long, default_value_t = SearchLimits::default().max_depth)]
    max_depth: usize,
    /// Do not let initiators open sessions with the intruder's identity.
    #[arg(long)]
    no_intruder_peer: bool,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReplayArgs {
    /// Trace file (a JSON check report).
    trace: PathBuf,
    /// Spec file to replay against; defaults to the path stored in the trace.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Also write a Graphviz rendering of the trace.
    #[arg(long)]
    dot: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn config(&self) -> RunConfig {
        RunConfig {
            sessions: if self.assign.is_empty() {
                self.sessions
            } else {
                self.assign.len()
            },
            assign: (!self.assign.is_empty()).then(|| {
                self.assign
                    .iter()
                    .map(|s| s.split(',').map(|a| a.trim().to_string()).collect())
                    .collect()
            }),
            intruder: match self.intruder {
                Intruder::Dy => IntruderMode::Dy,
                Intruder::Mi => IntruderMode::Mi,
                Intruder::MiReportOnly => IntruderMode::MiReportOnly,
            },
            strategy: match self.search {
                Search::Dfs => Strategy::Dfs,
                Search::Bfs => Strategy::Bfs,
            },
            stop: match self.stop {
                Stop::FirstError => StopMode::FirstError,
                Stop::Exhaustive => StopMode::Exhaustive,
            },
            fake_depth: self.fake_depth,
            intruder_peer: !self.no_intruder_peer,
            limits: SearchLimits {
                max_states: self.max_states,
                max_depth: self.max_depth,
            },
        }
    }
}

struct Failure(String);

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure(e.to_string())
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure(format!("{}: {e}", path.display())))
}

fn emit(out: &Option<PathBuf>, text: &str) -> Result<(), Failure> {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| Failure(format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn json<T: serde::Serialize>(v: &T) -> Result<String, Failure> {
    Ok(serde_json::to_string_pretty(v)? + "\n")
}

fn verdict_code(v: Verdict) -> u8 {
    match v {
        Verdict::NoViolation => EXIT_CLEAN,
        Verdict::Violation => EXIT_VIOLATION,
        Verdict::Inconclusive => EXIT_INCONCLUSIVE,
    }
}

fn run(cli: Cli) -> Result<u8, Failure> {
    match cli.command {
        Command::Simulate(a) => {
            let report = cmd_simulate(&read(&a.spec)?, &a.config())?;
            let text = match a.format {
                Format::Text => render_simulate(&report),
                Format::Json => json(&report)?,
            };
            emit(&a.out, &text)?;
            Ok(EXIT_CLEAN)
        }
        Command::Check(a) => {
            let src = read(&a.spec)?;
            let path = a.spec.to_string_lossy();
            let (report, result) = run_check(&src, Some(&path), &a.config())?;
            let text = match a.format {
                Format::Text => format!(
                    "{}  wall time {:.3}s\n",
                    render_check(&report),
                    result.stats.wall_time.as_secs_f64()
                ),
                Format::Json => json(&report)?,
            };
            emit(&a.out, &text)?;
            Ok(verdict_code(report.verdict))
        }
        Command::Compare(a) => {
            let src = read(&a.spec)?;
            let path = a.spec.to_string_lossy();
            let report = cmd_compare(&src, Some(&path), &a.config())?;
            let text = match a.format {
                Format::Text => render_compare(&report),
                Format::Json => json(&report)?,
            };
            emit(&a.out, &text)?;
            Ok(verdict_code(report.mi.verdict))
        }
        Command::Replay(a) => {
            let trace: CheckReport = serde_json::from_str(&read(&a.trace)?)
                .map_err(|e| Failure(format!("{}: not a trace file: {e}", a.trace.display())))?;
            let spec_path = match (&a.spec, &trace.spec_path) {
                (Some(p), _) => p.clone(),
                (None, Some(p)) => PathBuf::from(p),
                (None, None) => return Err(Failure("trace has no spec path; pass --spec".into())),
            };
            let report = cmd_replay(&read(&spec_path)?, &trace, a.dot.is_some())?;
            if let (Some(path), Some(dot)) = (&a.dot, &report.dot) {
                fs::write(path, dot).map_err(|e| Failure(format!("{}: {e}", path.display())))?;
            }
            let text = match a.format {
                Format::Text => report.narration.join("\n") + "\n",
                Format::Json => json(&report)?,
            };
            emit(&a.out, &text)?;
            Ok(if report.violations.is_empty() {
                EXIT_CLEAN
            } else {
                EXIT_VIOLATION
            })
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(Failure(msg)) => {
            eprintln!("micheck: {msg}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}
