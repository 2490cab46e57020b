use std::collections::BTreeSet;
use std::fmt::Write;

use thiserror::Error;

use super::{apply, enabled, violations, GlobalState, TransitionRecord, Violation};
use crate::intruder::AttackTag;
use crate::protocol::session::World;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReplayError {
    #[error("trace diverges at transition {index}: `{expected}` is not enabled")]
    Divergence { index: usize, expected: String },
}

#[derive(Clone, Debug)]
pub struct ReplayOutcome {
    pub state: GlobalState,
    /// One line per transition, then the verdict.
    pub narration: Vec<String>,
    pub violations: Vec<Violation>,
}

/// Re-executes a recorded trace from the initial state.
pub fn replay(
    world: &World,
    active: &BTreeSet<AttackTag>,
    trace: &[TransitionRecord],
) -> Result<ReplayOutcome, ReplayError> {
    let mut state = GlobalState::initial(world);
    let mut narration = Vec::new();
    for (index, rec) in trace.iter().enumerate() {
        let found = enabled(world, &state, active).into_iter().find_map(|t| {
            let mut next = state.clone();
            let r = apply(world, &mut next, &t);
            (r == *rec).then_some(next)
        });
        match found {
            Some(next) => {
                state = next;
                narration.push(format!("{:>3}. {}", index + 1, rec));
            }
            None => {
                return Err(ReplayError::Divergence {
                    index,
                    expected: rec.to_string(),
                })
            }
        }
    }
    let found = violations(world, &state);
    if found.is_empty() {
        narration.push("no violation in final state".into());
    }
    for v in &found {
        narration.push(format!("violation: {} ({})", v.fingerprint, v.description));
    }
    Ok(ReplayOutcome {
        state,
        narration,
        violations: found,
    })
}

/// Graphviz rendering of a trace as a message sequence: one column of
/// nodes per participant, one edge per transition.
pub fn to_dot(trace: &[TransitionRecord]) -> String {
    let mut actors: Vec<&str> = Vec::new();
    for r in trace {
        for a in [r.actor.as_str(), r.recipient.as_str()] {
            if !actors.contains(&a) {
                actors.push(a);
            }
        }
    }
    let mut out = String::from("digraph trace {\n  rankdir=LR;\n  node [shape=point];\n");
    for a in &actors {
        let _ = writeln!(out, "  \"{a}_0\" [shape=box, label=\"{a}\"];");
    }
    for (i, r) in trace.iter().enumerate() {
        let t = i + 1;
        let _ = writeln!(
            out,
            "  \"{}_{t}\" -> \"{}_{t}\" [label=\"{t}. {} ({})\"];",
            r.actor,
            r.recipient,
            r.message.replace('"', "\\\""),
            r.kind
        );
    }
    for a in &actors {
        let chain: Vec<String> = (0..=trace.len()).map(|t| format!("\"{a}_{t}\"")).collect();
        let _ = writeln!(
            out,
            "  {} [style=dotted, arrowhead=none];",
            chain.join(" -> ")
        );
    }
    out.push_str("}\n");
    out
}
