//! Global states, the transition relation, and violation detection.

mod replay;
mod search;

use std::collections::{BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::intruder::{enumerate_actions, AttackAction, AttackTag, Knowledge};
use crate::protocol::session::{ProcId, ProcState, ProcStatus, World};
use crate::protocol::{Action, Goal};
use crate::terms::Term;

pub use replay::{replay, to_dot, ReplayError, ReplayOutcome};
pub use search::{
    search, Counterexample, SearchLimits, SearchOptions, SearchResult, SearchStats, StopMode,
    Strategy, Verdict,
};

pub const DEFAULT_MAX_STATES: usize = 1_000_000;
pub const DEFAULT_MAX_DEPTH: usize = 10_000;

/// Local states of all honest processes plus the intruder's knowledge.
/// Every send is intercepted atomically, so there is no in-flight message.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct GlobalState {
    pub procs: Vec<ProcState>,
    pub kb: Knowledge,
}

impl GlobalState {
    pub fn initial(world: &World) -> Self {
        GlobalState {
            procs: world.initial_proc_states(),
            kb: Knowledge::new(world.intruder_knowledge.clone()),
        }
    }

    pub fn status(&self, id: ProcId) -> ProcStatus {
        self.procs[id.0].status
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Transition {
    /// An honest send, intercepted by the intruder. With `to_intruder` the
    /// initiator opens its session with the intruder's own identity.
    Send {
        proc: ProcId,
        to_intruder: bool,
    },
    Attack(AttackAction),
}

/// Serializable description of one transition.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionRecord {
    pub actor: String,
    /// `send`, `send-to-intruder`, or an attack tag.
    pub kind: String,
    /// Sending process for sends, target process for attacks.
    pub process: usize,
    pub recipient: String,
    pub message: String,
    pub step: usize,
    pub session: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<(usize, usize)>,
}

impl fmt::Display for TransitionRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} -> {} : {}  [{} {}.{}",
            self.actor, self.recipient, self.message, self.kind, self.step, self.session
        )?;
        if let Some((a, b)) = self.source {
            write!(f, " from p({a},{b})")?;
        }
        f.write_str("]")
    }
}

/// Applies a transition, returning the record describing it.
pub fn apply(world: &World, s: &mut GlobalState, t: &Transition) -> TransitionRecord {
    match t {
        Transition::Send { proc, to_intruder } => {
            let sent = world.send(*proc, &mut s.procs[proc.0], *to_intruder);
            s.kb.intercept(
                sent.msg.clone(),
                sent.step,
                sent.session,
                sent.sender,
                sent.recipient,
            )
            .expect("each step is sent once per session");
            TransitionRecord {
                actor: world.agent_name(sent.sender).to_string(),
                kind: if *to_intruder {
                    "send-to-intruder".into()
                } else {
                    "send".into()
                },
                process: proc.0,
                recipient: world.agent_name(sent.recipient).to_string(),
                message: sent.msg.display(&world.atoms).to_string(),
                step: sent.step,
                session: sent.session,
                source: None,
            }
        }
        Transition::Attack(a) => {
            let st = &mut s.procs[a.target.0];
            let step = world
                .waiting_step(a.target, st)
                .map(|i| world.spec.steps[i].index)
                .unwrap_or(0);
            let _ = world.deliver(a.target, st, &a.payload);
            let info = world.process(a.target);
            TransitionRecord {
                actor: world
                    .intruder
                    .map(|i| world.agent_name(i).to_string())
                    .unwrap_or_else(|| "intruder".into()),
                kind: a.tag.to_string(),
                process: a.target.0,
                recipient: world.agent_name(info.agent).to_string(),
                message: a.payload.display(&world.atoms).to_string(),
                step,
                session: info.session,
                source: Some(a.source),
            }
        }
    }
}

/// Enabled transitions in their canonical order: intruder actions by tag
/// then payload, then honest sends by session then role. An initiator that
/// may address the intruder lists that send before the one to its assigned
/// peer. An intruder move reachable through several tags is kept once,
/// under its first tag.
pub fn enabled(world: &World, s: &GlobalState, active: &BTreeSet<AttackTag>) -> Vec<Transition> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for a in enumerate_actions(world, &s.kb, &s.procs, active) {
        if seen.insert((a.target, a.payload.clone())) {
            out.push(Transition::Attack(a));
        }
    }
    for (i, st) in s.procs.iter().enumerate() {
        let pid = ProcId(i);
        if let Some(Action::Send(_)) = world.next_action(pid, st) {
            if world.may_choose_intruder(pid, st) {
                out.push(Transition::Send {
                    proc: pid,
                    to_intruder: true,
                });
            }
            out.push(Transition::Send {
                proc: pid,
                to_intruder: false,
            });
        }
    }
    out
}

/// Successor states with the transitions leading to them.
pub fn successors(
    world: &World,
    s: &GlobalState,
    active: &BTreeSet<AttackTag>,
) -> Vec<(Transition, TransitionRecord, GlobalState)> {
    enabled(world, s, active)
        .into_iter()
        .map(|t| {
            let mut next = s.clone();
            let rec = apply(world, &mut next, &t);
            (t, rec, next)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViolationKind {
    Authentication,
    Secrecy,
}

/// Identifies an attack independently of the trace that reached it.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Fingerprint {
    pub kind: ViolationKind,
    pub victim: String,
    pub peer: String,
    pub nonces: Vec<String>,
}

impl fmt::Display for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            ViolationKind::Authentication => "auth",
            ViolationKind::Secrecy => "secrecy",
        };
        write!(
            f,
            "{kind}({}, {}, {{{}}})",
            self.victim,
            self.peer,
            self.nonces.join(", ")
        )
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub fingerprint: Fingerprint,
    pub process: usize,
    pub session: usize,
    pub description: String,
}

fn value_names(world: &World, values: &[&Term]) -> Vec<String> {
    let mut names: Vec<String> = values
        .iter()
        .map(|t| t.display(&world.atoms).to_string())
        .collect();
    names.sort();
    names
}

/// Every goal violated in `s`.
pub fn violations(world: &World, s: &GlobalState) -> Vec<Violation> {
    let mut out = Vec::new();
    for goal in &world.spec.goals {
        match goal {
            Goal::Authenticates { verifier, peer, on } => {
                for p in world.processes.iter().filter(|p| p.role == *verifier) {
                    let st = &s.procs[p.id.0];
                    if st.status != ProcStatus::Done {
                        continue;
                    }
                    let claimed = st.peers[peer.0];
                    if world.is_intruder(claimed) {
                        continue;
                    }
                    let agrees = world.processes.iter().any(|q| {
                        let qs = &s.procs[q.id.0];
                        q.role == *peer
                            && q.agent == claimed
                            && qs.peers[verifier.0] == p.agent
                            && on
                                .iter()
                                .all(|v| qs.vars[v.0].is_some() && qs.vars[v.0] == st.vars[v.0])
                    });
                    if !agrees {
                        let values: Vec<&Term> =
                            on.iter().filter_map(|v| st.vars[v.0].as_ref()).collect();
                        let fingerprint = Fingerprint {
                            kind: ViolationKind::Authentication,
                            victim: world.agent_name(p.agent).to_string(),
                            peer: world.agent_name(claimed).to_string(),
                            nonces: value_names(world, &values),
                        };
                        out.push(Violation {
                            description: format!(
                                "{} completed {} believing it ran with {}, which never agreed",
                                fingerprint.victim,
                                world.spec.role_name(*verifier),
                                fingerprint.peer
                            ),
                            fingerprint,
                            process: p.id.0,
                            session: p.session,
                        });
                    }
                }
            }
            Goal::Secret { var, role } => {
                for p in world.processes.iter().filter(|p| p.role == *role) {
                    let st = &s.procs[p.id.0];
                    let Some(value) = &st.vars[var.0] else {
                        continue;
                    };
                    let honest_peers = st
                        .peers
                        .iter()
                        .enumerate()
                        .all(|(r, a)| r == role.0 || !world.is_intruder(*a));
                    if honest_peers && s.kb.can_derive(value, 0) {
                        let peers: Vec<&str> = st
                            .peers
                            .iter()
                            .enumerate()
                            .filter(|(r, _)| *r != role.0)
                            .map(|(_, a)| world.agent_name(*a))
                            .collect();
                        let fingerprint = Fingerprint {
                            kind: ViolationKind::Secrecy,
                            victim: world.agent_name(p.agent).to_string(),
                            peer: peers.join(","),
                            nonces: value_names(world, &[value]),
                        };
                        out.push(Violation {
                            description: format!(
                                "intruder learned {} of {}",
                                world.spec.var_name(*var),
                                fingerprint.victim
                            ),
                            fingerprint,
                            process: p.id.0,
                            session: p.session,
                        });
                    }
                }
            }
        }
    }
    out
}

pub fn is_violation(world: &World, s: &GlobalState) -> Option<Violation> {
    violations(world, s).into_iter().next()
}
