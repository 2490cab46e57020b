//! Report-producing entry points shared by the command-line tool and the
//! browser demo.

use std::collections::BTreeSet;
use std::fmt::Write;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::checker::{
    replay, search, to_dot, Fingerprint, ReplayError, SearchLimits, SearchOptions, SearchResult,
    StopMode, Strategy, TransitionRecord, Verdict, Violation,
};
use crate::intruder::AttackTag;
use crate::mi::{mi_simulate, RuleLogEntry, SimError};
use crate::protocol::session::{instantiate, ConfigError, SessionConfig, DEFAULT_FAKE_DEPTH};
use crate::protocol::{parse_spec, ParseError, ProtocolSpec};
use crate::terms::EncryptionClass;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IntruderMode {
    /// Full attack-action base, no preliminary phase.
    Dy,
    /// Preliminary phase, then search with the pruned action base.
    Mi,
    /// Preliminary phase for its report only; search uses the full base.
    MiReportOnly,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunConfig {
    pub sessions: usize,
    /// Explicit role assignments, overriding the spec's `sessions` block.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assign: Option<Vec<Vec<String>>>,
    pub intruder: IntruderMode,
    pub strategy: Strategy,
    pub stop: StopMode,
    pub fake_depth: usize,
    pub intruder_peer: bool,
    pub limits: SearchLimits,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            sessions: 2,
            assign: None,
            intruder: IntruderMode::Mi,
            strategy: Strategy::Dfs,
            stop: StopMode::FirstError,
            fake_depth: DEFAULT_FAKE_DEPTH,
            intruder_peer: true,
            limits: SearchLimits::default(),
        }
    }
}

impl RunConfig {
    pub fn session_config(&self, spec: &ProtocolSpec) -> Result<SessionConfig, ConfigError> {
        let mut cfg = match &self.assign {
            Some(a) => SessionConfig {
                sessions: a.clone(),
                intruder_peer: true,
                fake_depth: DEFAULT_FAKE_DEPTH,
                enc_overhead: 0,
            },
            None => SessionConfig::from_spec(spec, self.sessions)?,
        };
        if cfg.sessions.is_empty() {
            return Err(ConfigError::NoSessions);
        }
        cfg.intruder_peer = self.intruder_peer;
        cfg.fake_depth = self.fake_depth;
        Ok(cfg)
    }
}

#[derive(Debug, Error)]
pub enum CommandError {
    #[error("parse error: {0}")]
    Parse(#[from] ParseError),
    #[error("configuration error: {0}")]
    Config(#[from] ConfigError),
    #[error("simulation error: {0}")]
    Sim(#[from] SimError),
    #[error("spec has changed since the trace was written (trace {expected}, spec {found})")]
    StaleSpec { expected: String, found: String },
    #[error("replay error: {0}")]
    Replay(#[from] ReplayError),
    #[error("invalid trace: {0}")]
    Trace(String),
}

pub fn spec_sha256(src: &str) -> String {
    Sha256::digest(src.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IktRow {
    pub step: usize,
    pub session: usize,
    pub encryption: EncryptionClass,
    pub size: u64,
    pub timestamp: u64,
    pub recorded: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimulateReport {
    pub protocol: String,
    pub steps: usize,
    pub sessions: usize,
    pub ikt: Vec<IktRow>,
    pub removable: Vec<AttackTag>,
    pub retained: Vec<AttackTag>,
    pub rule_log: Vec<RuleLogEntry>,
}

pub fn cmd_simulate(src: &str, cfg: &RunConfig) -> Result<SimulateReport, CommandError> {
    let spec = parse_spec(src)?;
    let sc = cfg.session_config(&spec)?;
    let out = mi_simulate(&spec, &sc)?;
    let mut ikt = Vec::new();
    for a in 1..=out.ikt.steps() {
        for b in 1..=out.ikt.sessions() {
            let e = out.ikt.get(a, b);
            ikt.push(IktRow {
                step: a,
                session: b,
                encryption: e.encryption,
                size: e.size,
                timestamp: e.timestamp,
                recorded: e.recorded,
            });
        }
    }
    Ok(SimulateReport {
        protocol: spec.name.clone(),
        steps: out.ikt.steps(),
        sessions: out.ikt.sessions(),
        ikt,
        removable: out.report.removable.iter().copied().collect(),
        retained: out.report.retained.iter().copied().collect(),
        rule_log: out.report.log,
    })
}

/// Result of `check`; doubles as the trace file format.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec_path: Option<String>,
    pub spec_sha256: String,
    pub protocol: String,
    pub config: RunConfig,
    pub verdict: Verdict,
    pub states_stored: usize,
    pub states_matched: usize,
    pub transitions: usize,
    pub max_depth: usize,
    pub error_depth: Option<usize>,
    pub pruned_actions: Vec<AttackTag>,
    pub active_actions: Vec<AttackTag>,
    pub rule_log: Vec<RuleLogEntry>,
    pub violation: Option<Violation>,
    pub fingerprints: Vec<Fingerprint>,
    pub counterexample: Vec<TransitionRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inconclusive_reason: Option<String>,
}

/// Runs the configured search, returning the raw result with the report.
pub fn run_check(
    src: &str,
    spec_path: Option<&str>,
    cfg: &RunConfig,
) -> Result<(CheckReport, SearchResult), CommandError> {
    let spec = parse_spec(src)?;
    let sc = cfg.session_config(&spec)?;
    let (active, pruned, rule_log) = match cfg.intruder {
        IntruderMode::Dy => (AttackTag::all(), Vec::new(), Vec::new()),
        IntruderMode::Mi | IntruderMode::MiReportOnly => {
            let out = mi_simulate(&spec, &sc)?;
            let pruned: Vec<_> = out.report.removable.iter().copied().collect();
            let active = if cfg.intruder == IntruderMode::Mi {
                out.report.active()
            } else {
                AttackTag::all()
            };
            (active, pruned, out.report.log)
        }
    };
    let world = instantiate(&spec, &sc)?;
    let result = search(
        &world,
        &SearchOptions {
            strategy: cfg.strategy,
            stop: cfg.stop,
            active: active.clone(),
            limits: cfg.limits,
        },
    );
    let report = CheckReport {
        spec_path: spec_path.map(str::to_string),
        spec_sha256: spec_sha256(src),
        protocol: spec.name.clone(),
        config: cfg.clone(),
        verdict: result.verdict,
        states_stored: result.stats.states_stored,
        states_matched: result.stats.states_matched,
        transitions: result.stats.transitions,
        max_depth: result.stats.max_depth,
        error_depth: result.stats.error_depth,
        pruned_actions: if cfg.intruder == IntruderMode::Mi {
            pruned
        } else {
            Vec::new()
        },
        active_actions: active.into_iter().collect(),
        rule_log,
        violation: result.violation.clone(),
        fingerprints: result.fingerprints.iter().cloned().collect(),
        counterexample: result
            .counterexample
            .as_ref()
            .map(|c| c.transitions.clone())
            .unwrap_or_default(),
        inconclusive_reason: result.cap.clone(),
    };
    Ok((report, result))
}

pub fn cmd_check(
    src: &str,
    spec_path: Option<&str>,
    cfg: &RunConfig,
) -> Result<CheckReport, CommandError> {
    run_check(src, spec_path, cfg).map(|(r, _)| r)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub dy: CheckReport,
    pub mi: CheckReport,
    /// stored(dy) / stored(mi).
    pub reduction_factor: f64,
}

/// Runs the full and the pruned intruder with otherwise identical settings.
pub fn cmd_compare(
    src: &str,
    spec_path: Option<&str>,
    cfg: &RunConfig,
) -> Result<CompareReport, CommandError> {
    let dy = cmd_check(
        src,
        spec_path,
        &RunConfig {
            intruder: IntruderMode::Dy,
            ..cfg.clone()
        },
    )?;
    let mi = cmd_check(
        src,
        spec_path,
        &RunConfig {
            intruder: IntruderMode::Mi,
            ..cfg.clone()
        },
    )?;
    let reduction_factor = dy.states_stored as f64 / mi.states_stored as f64;
    Ok(CompareReport {
        dy,
        mi,
        reduction_factor,
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub narration: Vec<String>,
    pub violations: Vec<Violation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dot: Option<String>,
}

/// Re-executes the counterexample stored in a check report against `src`.
pub fn cmd_replay(src: &str, trace: &CheckReport, dot: bool) -> Result<ReplayReport, CommandError> {
    let found = spec_sha256(src);
    if found != trace.spec_sha256 {
        return Err(CommandError::StaleSpec {
            expected: trace.spec_sha256.clone(),
            found,
        });
    }
    let spec = parse_spec(src)?;
    let sc = trace.config.session_config(&spec)?;
    let world = instantiate(&spec, &sc)?;
    let active: BTreeSet<AttackTag> = trace.active_actions.iter().copied().collect();
    let out = replay(&world, &active, &trace.counterexample)?;
    Ok(ReplayReport {
        narration: out.narration,
        violations: out.violations,
        dot: dot.then(|| to_dot(&trace.counterexample)),
    })
}

fn tags(t: &[AttackTag]) -> String {
    let v: Vec<_> = t.iter().map(|t| t.as_str()).collect();
    format!("{{{}}}", v.join(", "))
}

pub fn render_simulate(r: &SimulateReport) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "protocol {}: {} steps x {} sessions",
        r.protocol, r.steps, r.sessions
    );
    let _ = writeln!(s, "  (a,b)  enc  size  ts");
    for row in &r.ikt {
        if row.recorded {
            let _ = writeln!(
                s,
                "  ({},{})  {:>3}  {:>4}  {:>2}",
                row.step, row.session, row.encryption as u8, row.size, row.timestamp
            );
        } else {
            let _ = writeln!(
                s,
                "  ({},{})    0     0   0  (not sent)",
                row.step, row.session
            );
        }
    }
    let _ = writeln!(s, "removable: {}", tags(&r.removable));
    let _ = writeln!(s, "retained:  {}", tags(&r.retained));
    s
}

pub fn render_check(r: &CheckReport) -> String {
    let mut s = String::new();
    let verdict = match r.verdict {
        Verdict::NoViolation => "no violation",
        Verdict::Violation => "VIOLATION",
        Verdict::Inconclusive => "inconclusive",
    };
    let _ = writeln!(s, "{}: {verdict}", r.protocol);
    if let Some(v) = &r.violation {
        let _ = writeln!(s, "  {}: {}", v.fingerprint, v.description);
    }
    if r.fingerprints.len() > 1 {
        for f in &r.fingerprints {
            let _ = writeln!(s, "  found {f}");
        }
    }
    if let Some(reason) = &r.inconclusive_reason {
        let _ = writeln!(s, "  {reason}");
    }
    let _ = writeln!(
        s,
        "  {} states stored, {} matched, {} transitions (= stored+matched)",
        r.states_stored, r.states_matched, r.transitions
    );
    let _ = write!(s, "  max depth {}", r.max_depth);
    if let Some(d) = r.error_depth {
        let _ = write!(s, ", error depth {d}");
    }
    let _ = writeln!(s);
    if !r.pruned_actions.is_empty() {
        let _ = writeln!(s, "  pruned {}", tags(&r.pruned_actions));
    }
    for (i, t) in r.counterexample.iter().enumerate() {
        let _ = writeln!(s, "  {:>3}. {t}", i + 1);
    }
    s
}

pub fn render_compare(r: &CompareReport) -> String {
    let depth = |d: Option<usize>| d.map_or("-".to_string(), |d| d.to_string());
    format!(
        "dy: {} stored, error depth {}\nmi: {} stored, error depth {}, pruned {}\nreduction factor {:.2}\n",
        r.dy.states_stored,
        depth(r.dy.error_depth),
        r.mi.states_stored,
        depth(r.mi.error_depth),
        tags(&r.mi.pruned_actions),
        r.reduction_factor
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::NSPK;

    #[test]
    fn check_report_round_trips() {
        let cfg = RunConfig {
            strategy: Strategy::Bfs,
            ..RunConfig::default()
        };
        let r = cmd_check(NSPK, Some("nspk.ab"), &cfg).unwrap();
        let json = serde_json::to_string_pretty(&r).unwrap();
        let back: CheckReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
        assert_eq!(r.pruned_actions, vec![AttackTag::A2, AttackTag::A3]);
    }

    #[test]
    fn replay_refuses_stale_spec() {
        let r = cmd_check(NSPK, None, &RunConfig::default()).unwrap();
        let edited = NSPK.replace("protocol NSPK", "protocol NSPK2");
        assert!(matches!(
            cmd_replay(&edited, &r, false),
            Err(CommandError::StaleSpec { .. })
        ));
        let ok = cmd_replay(NSPK, &r, true).unwrap();
        assert_eq!(ok.violations.len(), 1);
        assert!(ok.dot.unwrap().starts_with("digraph"));
    }

    #[test]
    fn sha_is_hex() {
        let h = spec_sha256("");
        assert_eq!(
            h,
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }
}
