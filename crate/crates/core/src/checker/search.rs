use std::collections::{BTreeSet, VecDeque};
use std::time::Duration;

use indexmap::IndexSet;
use serde::{Deserialize, Serialize};
use web_time::Instant;

use super::{successors, violations, Fingerprint, GlobalState, TransitionRecord, Violation};
use crate::intruder::AttackTag;
use crate::protocol::session::World;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Dfs,
    Bfs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopMode {
    FirstError,
    Exhaustive,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchLimits {
    pub max_states: usize,
    pub max_depth: usize,
}

impl Default for SearchLimits {
    fn default() -> Self {
        SearchLimits {
            max_states: super::DEFAULT_MAX_STATES,
            max_depth: super::DEFAULT_MAX_DEPTH,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SearchOptions {
    pub strategy: Strategy,
    pub stop: StopMode,
    pub active: BTreeSet<AttackTag>,
    pub limits: SearchLimits,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    NoViolation,
    Violation,
    Inconclusive,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchStats {
    pub states_stored: usize,
    pub states_matched: usize,
    /// Every generated successor plus the initial state.
    pub transitions: usize,
    pub max_depth: usize,
    pub error_depth: Option<usize>,
    #[serde(skip)]
    pub wall_time: Duration,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counterexample {
    pub transitions: Vec<TransitionRecord>,
}

#[derive(Clone, Debug)]
pub struct SearchResult {
    pub verdict: Verdict,
    pub stats: SearchStats,
    /// The first violation found, with the path reaching it.
    pub violation: Option<Violation>,
    pub counterexample: Option<Counterexample>,
    /// Distinct violation fingerprints seen (all of them in exhaustive mode).
    pub fingerprints: BTreeSet<Fingerprint>,
    /// Why the search was inconclusive, if it was.
    pub cap: Option<String>,
    /// Every stored state, in discovery order.
    pub visited: Vec<GlobalState>,
}

struct Graph {
    states: IndexSet<GlobalState>,
    parent: Vec<Option<(usize, TransitionRecord)>>,
    depth: Vec<usize>,
}

impl Graph {
    fn path(&self, mut i: usize) -> Counterexample {
        let mut out = Vec::new();
        while let Some((p, rec)) = &self.parent[i] {
            out.push(rec.clone());
            i = *p;
        }
        out.reverse();
        Counterexample { transitions: out }
    }
}

fn note(
    found: Vec<Violation>,
    idx: usize,
    fingerprints: &mut BTreeSet<Fingerprint>,
    first: &mut Option<(Violation, usize)>,
) {
    for v in &found {
        fingerprints.insert(v.fingerprint.clone());
    }
    if first.is_none() {
        *first = found.into_iter().next().map(|v| (v, idx));
    }
}

/// Explicit-state search from the initial state of `world`.
pub fn search(world: &World, opts: &SearchOptions) -> SearchResult {
    let start = Instant::now();
    let mut g = Graph {
        states: IndexSet::new(),
        parent: vec![None],
        depth: vec![0],
    };
    let init = GlobalState::initial(world);
    let init_violations = violations(world, &init);
    g.states.insert(init);
    let mut stats = SearchStats {
        states_stored: 1,
        transitions: 1,
        ..SearchStats::default()
    };
    let mut fingerprints = BTreeSet::new();
    let mut first: Option<(Violation, usize)> = None;
    let mut cap = None;

    note(init_violations, 0, &mut fingerprints, &mut first);

    let stop_now =
        |first: &Option<(Violation, usize)>| opts.stop == StopMode::FirstError && first.is_some();

    if !stop_now(&first) {
        // Frontier of state indices: a stack for DFS, a queue for BFS. A DFS
        // frame keeps its pending successors so that depth equals stack depth.
        let mut queue: VecDeque<usize> = VecDeque::from([0]);
        let mut stack: Vec<(usize, std::vec::IntoIter<(TransitionRecord, GlobalState)>)> =
            Vec::new();
        let expand = |i: usize, g: &Graph| -> Vec<(TransitionRecord, GlobalState)> {
            successors(world, &g.states[i], &opts.active)
                .into_iter()
                .map(|(_, r, s)| (r, s))
                .collect()
        };
        if opts.strategy == Strategy::Dfs {
            stack.push((0, expand(0, &g).into_iter()));
            queue.clear();
        }
        'search: loop {
            let (parent, batch): (usize, Vec<(TransitionRecord, GlobalState)>) = match opts.strategy
            {
                Strategy::Bfs => match queue.pop_front() {
                    Some(i) => (i, expand(i, &g)),
                    None => break,
                },
                Strategy::Dfs => {
                    let Some((i, iter)) = stack.last_mut() else {
                        break;
                    };
                    match iter.next() {
                        Some(x) => (*i, vec![x]),
                        None => {
                            stack.pop();
                            continue;
                        }
                    }
                }
            };
            for (rec, next) in batch {
                stats.transitions += 1;
                if g.states.contains(&next) {
                    stats.states_matched += 1;
                    continue;
                }
                let depth = g.depth[parent] + 1;
                let v = violations(world, &next);
                let (idx, _) = g.states.insert_full(next);
                g.parent.push(Some((parent, rec)));
                g.depth.push(depth);
                stats.states_stored += 1;
                stats.max_depth = stats.max_depth.max(depth);
                note(v, idx, &mut fingerprints, &mut first);
                if stop_now(&first) {
                    break 'search;
                }
                if stats.states_stored >= opts.limits.max_states {
                    cap = Some(format!("state cap {} reached", opts.limits.max_states));
                    break 'search;
                }
                if depth >= opts.limits.max_depth {
                    if !successors(world, &g.states[idx], &opts.active).is_empty() {
                        cap = Some(format!("depth cap {} reached", opts.limits.max_depth));
                    }
                    continue;
                }
                match opts.strategy {
                    Strategy::Bfs => queue.push_back(idx),
                    Strategy::Dfs => {
                        stack.push((idx, expand(idx, &g).into_iter()));
                        break;
                    }
                }
            }
        }
    }

    stats.wall_time = start.elapsed();
    let (violation, counterexample) = match first {
        Some((v, idx)) => {
            stats.error_depth = Some(g.depth[idx]);
            (Some(v), Some(g.path(idx)))
        }
        None => (None, None),
    };
    let verdict = if violation.is_some() {
        Verdict::Violation
    } else if cap.is_some() {
        Verdict::Inconclusive
    } else {
        Verdict::NoViolation
    };
    debug_assert_eq!(
        stats.transitions,
        stats.states_stored + stats.states_matched
    );
    SearchResult {
        verdict,
        stats,
        violation,
        counterexample,
        fingerprints,
        cap,
        visited: g.states.into_iter().collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::NSPK;
    use crate::protocol::{instantiate, parse_spec, SessionConfig};

    fn world(n: usize, intruder_peer: bool) -> World {
        let spec = parse_spec(NSPK).unwrap();
        let mut cfg = SessionConfig::from_spec(&spec, n).unwrap();
        cfg.intruder_peer = intruder_peer;
        instantiate(&spec, &cfg).unwrap()
    }

    fn opts(strategy: Strategy, active: BTreeSet<AttackTag>) -> SearchOptions {
        SearchOptions {
            strategy,
            stop: StopMode::FirstError,
            active,
            limits: SearchLimits::default(),
        }
    }

    #[test]
    fn forwarding_only_is_clean() {
        let w = world(1, false);
        let active: BTreeSet<_> = [AttackTag::A1_3].into_iter().collect();
        for strategy in [Strategy::Dfs, Strategy::Bfs] {
            let r = search(&w, &opts(strategy, active.clone()));
            assert_eq!(r.verdict, Verdict::NoViolation);
            assert_eq!(
                r.stats.transitions,
                r.stats.states_stored + r.stats.states_matched
            );
            assert_eq!(r.stats.max_depth, 6);
        }
    }

    #[test]
    fn finds_lowe_attack_with_one_session() {
        let w = world(1, true);
        for strategy in [Strategy::Dfs, Strategy::Bfs] {
            let r = search(&w, &opts(strategy, AttackTag::all()));
            assert_eq!(r.verdict, Verdict::Violation);
            assert_eq!(
                r.violation.unwrap().fingerprint.to_string(),
                "auth(B, A, {Na#1, Nb#1})"
            );
            assert_eq!(
                r.counterexample.unwrap().transitions.len(),
                r.stats.error_depth.unwrap()
            );
        }
    }

    #[test]
    fn state_cap_is_inconclusive() {
        let w = world(2, true);
        let mut o = opts(Strategy::Bfs, AttackTag::all());
        o.limits.max_states = 10;
        let r = search(&w, &o);
        assert_eq!(r.verdict, Verdict::Inconclusive);
        assert_eq!(r.stats.states_stored, 10);
    }
}
