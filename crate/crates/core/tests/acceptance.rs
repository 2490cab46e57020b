//! One line per acceptance criterion; exits nonzero if any fails.

mod common;

use std::collections::{BTreeSet, HashSet};
use std::time::{Duration, Instant};

use common::*;
use mi_checker::checker::{
    is_violation, search, successors, Fingerprint, GlobalState, SearchLimits, SearchOptions,
    SearchResult, StopMode, Strategy as SearchStrategy,
};
use mi_checker::commands::{cmd_check, cmd_compare, cmd_simulate, IntruderMode, RunConfig};
use mi_checker::intruder::AttackTag;
use mi_checker::mi::mi_simulate;
use mi_checker::protocol::{parse_spec, SessionConfig, World};
use mi_checker::terms::EncryptionClass;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};

const SIMULATE_BUDGET: Duration = Duration::from_secs(1);
const CHECK_BUDGET: Duration = Duration::from_secs(10);
const SAFETY_BUDGET: Duration = Duration::from_secs(300);
const RATIO_FLOOR: f64 = 1.5;

struct Outcome {
    ok: bool,
    detail: String,
}

fn outcome(ok: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        ok,
        detail: detail.into(),
    }
}

fn world(n: usize, fake_depth: usize) -> World {
    nspk_world(n, fake_depth)
}

fn mi_active(n: usize, fake_depth: usize) -> BTreeSet<AttackTag> {
    let spec = parse_spec(NSPK).unwrap();
    let mut cfg = SessionConfig::from_spec(&spec, n).unwrap();
    cfg.fake_depth = fake_depth;
    mi_simulate(&spec, &cfg).unwrap().report.active()
}

fn run(
    w: &World,
    active: &BTreeSet<AttackTag>,
    strategy: SearchStrategy,
    stop: StopMode,
) -> (SearchResult, Duration) {
    let t = Instant::now();
    let r = search(
        w,
        &SearchOptions {
            strategy,
            stop,
            active: active.clone(),
            limits: SearchLimits::default(),
        },
    );
    (r, t.elapsed())
}

fn lowe() -> &'static str {
    "auth(B, A, {Na#1, Nb#1})"
}

fn names(set: &BTreeSet<Fingerprint>) -> String {
    if set.is_empty() {
        return "none".into();
    }
    set.iter()
        .map(|f| f.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

fn criterion_1() -> Outcome {
    let t = Instant::now();
    let spec = parse_spec(NSPK).unwrap();
    let cfg = SessionConfig::from_spec(&spec, 2).unwrap();
    let out = mi_simulate(&spec, &cfg).unwrap();
    let elapsed = t.elapsed();
    let removable: BTreeSet<_> = [AttackTag::A2, AttackTag::A3].into();
    let must_keep = [
        AttackTag::A1_1,
        AttackTag::A1_2,
        AttackTag::A1_3,
        AttackTag::A4,
        AttackTag::A5,
    ];
    let entries: Vec<_> = out.ikt.recorded().collect();
    let all_full = entries.len() == 6
        && entries
            .iter()
            .all(|(_, _, e)| e.encryption == EncryptionClass::Full);
    let ok = out.report.removable == removable
        && must_keep.iter().all(|t| out.report.retained.contains(t))
        && all_full
        && elapsed < SIMULATE_BUDGET;
    outcome(
        ok,
        format!(
            "removable {:?}, retained {:?}, {} entries all enc 2: {}, {:.3}s",
            out.report.removable,
            out.report.retained,
            entries.len(),
            all_full,
            elapsed.as_secs_f64()
        ),
    )
}

struct FirstError {
    stored: [[usize; 2]; 2],
    depth: [[usize; 2]; 2],
}

/// Index order: [strategy dfs/bfs][mode dy/mi].
fn criterion_2(fe: &mut FirstError) -> Outcome {
    let w = world(2, 2);
    let modes = [AttackTag::all(), mi_active(2, 2)];
    let mut ok = true;
    let mut parts = Vec::new();
    for (si, strategy) in [SearchStrategy::Dfs, SearchStrategy::Bfs]
        .into_iter()
        .enumerate()
    {
        for (mi, active) in modes.iter().enumerate() {
            let (r, elapsed) = run(&w, active, strategy, StopMode::FirstError);
            let fp = r
                .violation
                .as_ref()
                .map(|v| v.fingerprint.to_string())
                .unwrap_or_default();
            ok &= fp == lowe() && elapsed < CHECK_BUDGET;
            fe.stored[si][mi] = r.stats.states_stored;
            fe.depth[si][mi] = r.stats.error_depth.unwrap_or(usize::MAX);
            parts.push(format!(
                "{}/{} {} in {:.2}s",
                ["dfs", "bfs"][si],
                ["dy", "mi"][mi],
                fp,
                elapsed.as_secs_f64()
            ));
        }
    }
    outcome(ok, parts.join("; "))
}

fn criterion_3(fe: &FirstError) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for (si, name) in ["dfs", "bfs"].iter().enumerate() {
        let [dy, mi] = fe.stored[si];
        let ratio = dy as f64 / mi as f64;
        ok &= ratio >= RATIO_FLOOR && mi < dy;
        parts.push(format!("{name} dy {dy} / mi {mi} = {ratio:.3}"));
    }
    outcome(ok, parts.join("; "))
}

/// Plain level-by-level expansion, independent of the search module:
/// the first level holding a violating state.
fn minimum_error_depth(w: &World, active: &BTreeSet<AttackTag>, bound: usize) -> Option<usize> {
    let init = GlobalState::initial(w);
    let mut seen: HashSet<GlobalState> = HashSet::from([init.clone()]);
    let mut level = vec![init];
    for d in 0..=bound {
        if level.iter().any(|s| is_violation(w, s).is_some()) {
            return Some(d);
        }
        let mut next = Vec::new();
        for s in &level {
            for (_, _, t) in successors(w, s, active) {
                if seen.insert(t.clone()) {
                    next.push(t);
                }
            }
        }
        level = next;
    }
    None
}

fn criterion_4(fe: &FirstError) -> Outcome {
    let w = world(2, 2);
    let dfs = fe.depth[0];
    let bfs = fe.depth[1];
    let truth = minimum_error_depth(&w, &mi_active(2, 2), bfs[1]);
    let ok = bfs[0] <= dfs[0] && bfs[1] <= dfs[1] && truth == Some(bfs[1]);
    outcome(
        ok,
        format!(
            "dy bfs {} <= dfs {}; mi bfs {} <= dfs {}; level expansion minimum {:?}",
            bfs[0], dfs[0], bfs[1], dfs[1], truth
        ),
    )
}

fn criterion_5() -> Outcome {
    let t = Instant::now();
    let mut ok = true;
    let mut parts = Vec::new();
    for n in 1..=2 {
        for fake_depth in 0..=2 {
            let w = world(n, fake_depth);
            let (dy, _) = run(
                &w,
                &AttackTag::all(),
                SearchStrategy::Dfs,
                StopMode::Exhaustive,
            );
            let (mi, _) = run(
                &w,
                &mi_active(n, fake_depth),
                SearchStrategy::Dfs,
                StopMode::Exhaustive,
            );
            let dy_set: HashSet<&GlobalState> = dy.visited.iter().collect();
            let contained = mi.visited.iter().all(|s| dy_set.contains(s));
            // Below depth 2 the pruned tags generate nothing, so only the default
            // setting must shrink.
            let smaller = (n, fake_depth) != (2, 2) || mi.visited.len() < dy.visited.len();
            let same = dy.fingerprints == mi.fingerprints;
            let complete = dy.cap.is_none() && mi.cap.is_none();
            ok &= same && contained && smaller && complete;
            parts.push(format!(
                "n={n} d={fake_depth}: {} fingerprints {}, stored dy {} mi {}",
                if same { "same" } else { "DIFFERENT" },
                names(&dy.fingerprints),
                dy.visited.len(),
                mi.visited.len()
            ));
        }
    }
    let elapsed = t.elapsed();
    ok &= elapsed < SAFETY_BUDGET;
    parts.push(format!("{:.1}s", elapsed.as_secs_f64()));
    outcome(ok, parts.join("; "))
}

fn property<S: Strategy>(
    name: &str,
    cases: u32,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
    failures: &mut Vec<String>,
) {
    let mut runner = TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    });
    if let Err(e) = runner.run(&strategy, test) {
        failures.push(format!("{name}: {e}"));
    }
}

fn criterion_6() -> Outcome {
    let mut failures = Vec::new();
    let a = alphabet();
    let terms = || term_strategy(a.atom_terms(), a.keys(), 3);
    property(
        "zero-suffix",
        256,
        (
            proptest::collection::vec(0usize..PAIRS.len(), 1..4),
            proptest::collection::vec(proptest::option::of(1usize..4), 0..4),
        ),
        |(s, i)| check_zero_suffix(&s, &i),
        &mut failures,
    );
    property(
        "compare reflexive/symmetric",
        256,
        (entry_strategy(), entry_strategy()),
        |(x, y)| check_compare(&x, &y),
        &mut failures,
    );
    let (x, y, z) = compare_counterexample();
    let cmp = mi_checker::mi::compare;
    if !(cmp(&x, &y) && cmp(&y, &z) && !cmp(&x, &z)) {
        failures.push("non-transitivity witness".into());
    }
    property(
        "transitions = stored + matched",
        32,
        (
            1usize..3,
            0usize..3,
            tag_subset(),
            any::<bool>(),
            any::<bool>(),
            1usize..400,
        ),
        |(n, d, act, bfs, ex, cap)| check_transitions_identity(n, d, act, bfs, ex, cap),
        &mut failures,
    );
    property(
        "decrypt . encrypt",
        256,
        (
            term_strategy(a.atom_terms(), a.keys(), 2),
            0usize..3,
            0usize..3,
        ),
        |(t, i, j)| check_decrypt_encrypt(&t, a.keys()[i], a.keys()[j]),
        &mut failures,
    );
    property(
        "closure oracle",
        512,
        (proptest::collection::vec(terms(), 0..5), terms()),
        |(kb, goal)| check_closure_oracle(&kb, &goal),
        &mut failures,
    );
    let w = nspk_world(2, 2);
    property(
        "fail-stop permanence",
        64,
        (
            proptest::collection::vec((any::<usize>(), nspk_term_strategy(&w)), 1..10),
            proptest::collection::vec(any::<usize>(), 0..10),
        ),
        |(inj, sends)| check_fail_stop(&inj, &sends),
        &mut failures,
    );
    if failures.is_empty() {
        outcome(true, "six suites passed")
    } else {
        outcome(false, failures.join("; "))
    }
}

fn criterion_7() -> Outcome {
    let base = RunConfig::default();
    let bfs = RunConfig {
        strategy: SearchStrategy::Bfs,
        ..base.clone()
    };
    let dy = RunConfig {
        intruder: IntruderMode::Dy,
        ..base.clone()
    };
    let twice = |f: &dyn Fn() -> String| f() == f();
    let mut mismatched = Vec::new();
    if !twice(&|| serde_json::to_string_pretty(&cmd_simulate(NSPK, &base).unwrap()).unwrap()) {
        mismatched.push("simulate");
    }
    for (name, cfg) in [("check mi", &base), ("check bfs", &bfs), ("check dy", &dy)] {
        if !twice(&|| {
            serde_json::to_string_pretty(&cmd_check(NSPK, Some("nspk.ab"), cfg).unwrap()).unwrap()
        }) {
            mismatched.push(name);
        }
    }
    if !twice(&|| {
        serde_json::to_string_pretty(&cmd_compare(NSPK, Some("nspk.ab"), &base).unwrap()).unwrap()
    }) {
        mismatched.push("compare");
    }
    outcome(
        mismatched.is_empty(),
        if mismatched.is_empty() {
            "simulate, check (mi, bfs, dy) and compare byte-identical".to_string()
        } else {
            format!("differs: {}", mismatched.join(", "))
        },
    )
}

fn main() {
    let mut fe = FirstError {
        stored: [[0; 2]; 2],
        depth: [[0; 2]; 2],
    };
    let results = [
        criterion_1(),
        criterion_2(&mut fe),
        criterion_3(&fe),
        criterion_4(&fe),
        criterion_5(),
        criterion_6(),
        criterion_7(),
    ];
    let mut failed = 0;
    for (i, r) in results.iter().enumerate() {
        println!(
            "criterion {}: {} {}",
            i + 1,
            if r.ok { "PASS" } else { "FAIL" },
            r.detail
        );
        failed += usize::from(!r.ok);
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
