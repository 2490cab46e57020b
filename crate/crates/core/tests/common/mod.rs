//! Property checks shared by the proptest suite and the acceptance runner.
#![allow(dead_code)]

use std::collections::{BTreeSet, HashSet};

use mi_checker::checker::{
    enabled, search, successors, SearchLimits, SearchOptions, StopMode, Strategy as SearchStrategy,
    Transition,
};
use mi_checker::intruder::{enumerate_actions, AttackTag, Knowledge};
use mi_checker::mi::{compare, mi_simulate_with, Interruption, MetadataEntry};
use mi_checker::protocol::{
    instantiate, parse_spec, ProcId, ProcState, ProcStatus, SessionConfig, World,
};
use mi_checker::terms::{decrypt, encrypt, AtomKind, AtomTable, EncryptionClass, Key, Term};
use proptest::prelude::*;
use proptest::test_runner::TestCaseError;

pub const NSPK: &str = include_str!("../../protocols/nspk.ab");

pub fn nspk_world(n: usize, fake_depth: usize) -> World {
    let spec = parse_spec(NSPK).unwrap();
    let mut cfg = SessionConfig::from_spec(&spec, n).unwrap();
    cfg.fake_depth = fake_depth;
    instantiate(&spec, &cfg).unwrap()
}

/// Six atoms: three data items, one symmetric key and one key pair.
pub struct Alphabet {
    pub atoms: AtomTable,
    pub data: Vec<Term>,
    pub sym: Key,
    pub pk: Key,
}

pub fn alphabet() -> Alphabet {
    let mut atoms = AtomTable::new();
    let data = [("d0", 8), ("d1", 8), ("d2", 16)]
        .iter()
        .map(|(n, s)| Term::Atom(atoms.insert(n, AtomKind::Data, *s).unwrap()))
        .collect();
    let sym = atoms.insert_symmetric_key("k", 16, &[]).unwrap();
    let pk = atoms.insert_key_pair("X", 32).unwrap();
    Alphabet {
        atoms,
        data,
        sym,
        pk,
    }
}

impl Alphabet {
    pub fn keys(&self) -> Vec<Key> {
        vec![self.sym, self.pk, self.pk.inverse()]
    }

    pub fn atom_terms(&self) -> Vec<Term> {
        self.atoms.ids().map(Term::Atom).collect()
    }
}

/// Terms of nesting depth at most `depth` over the given leaves and keys.
pub fn term_strategy(leaves: Vec<Term>, keys: Vec<Key>, depth: u32) -> BoxedStrategy<Term> {
    let leaf = proptest::sample::select(leaves).boxed();
    leaf.prop_recursive(depth, 24, 3, move |inner| {
        let keys = keys.clone();
        prop_oneof![
            proptest::collection::vec(inner.clone(), 2..=3).prop_map(Term::concat),
            (inner, proptest::sample::select(keys)).prop_map(|(t, k)| Term::enc(t, k)),
        ]
    })
    .boxed()
}

/// Naive decomposition fixpoint.
pub fn oracle_analz(kb: &[Term]) -> HashSet<Term> {
    let mut set: HashSet<Term> = kb.iter().cloned().collect();
    loop {
        let mut new = Vec::new();
        for t in &set {
            match t {
                Term::Concat(parts) => new.extend(parts.iter().cloned()),
                Term::Enc(body, k) if set.contains(&Term::Atom(k.inverse)) => {
                    new.push((**body).clone())
                }
                _ => {}
            }
        }
        let before = set.len();
        set.extend(new);
        if set.len() == before {
            return set;
        }
    }
}

/// Bottom-up closure restricted to the subterms of `goal`: level 0 is the
/// analysed knowledge, each further level adds one composition layer.
pub fn oracle_derivable(kb: &[Term], goal: &Term, depth: usize) -> bool {
    let analz = oracle_analz(kb);
    let universe: Vec<&Term> = goal.subterms();
    let mut level: HashSet<&Term> = universe
        .iter()
        .copied()
        .filter(|t| analz.contains(*t))
        .collect();
    for _ in 0..depth {
        let mut next = level.clone();
        for t in &universe {
            let ok = match t {
                Term::Concat(parts) => parts.iter().all(|p| level.contains(p)),
                Term::Enc(body, k) => {
                    level.contains(&**body) && analz.contains(&Term::Atom(k.handle))
                }
                _ => false,
            };
            if ok {
                next.insert(*t);
            }
        }
        level = next;
    }
    level.contains(goal)
}

pub fn check_closure_oracle(kb: &[Term], goal: &Term) -> Result<(), TestCaseError> {
    let k = Knowledge::new(kb.iter().cloned());
    for d in 0..=3 {
        prop_assert_eq!(
            k.can_derive(goal, d),
            oracle_derivable(kb, goal, d),
            "depth {}",
            d
        );
    }
    Ok(())
}

pub fn check_monotone(kb: &[Term], goal: &Term, extra: &Term) -> Result<(), TestCaseError> {
    let k = Knowledge::new(kb.iter().cloned());
    let mut k2 = k.clone();
    k2.add(extra.clone());
    for d in 0..=3 {
        if k.can_derive(goal, d) {
            prop_assert!(k2.can_derive(goal, d));
        }
    }
    Ok(())
}

pub fn check_decrypt_encrypt(t: &Term, k: Key, other: Key) -> Result<(), TestCaseError> {
    let c = encrypt(t.clone(), k);
    prop_assert_eq!(decrypt(&c, k.inverse()), Ok(t));
    if other.handle != k.inverse {
        prop_assert!(decrypt(&c, other).is_err());
    }
    prop_assert_eq!(c.encryption_class(), EncryptionClass::Full);
    Ok(())
}

/// Knowledge without `d2` or `sk(X)`.
pub fn public_strategy(a: &Alphabet) -> BoxedStrategy<Vec<Term>> {
    let leaves = vec![
        a.data[0].clone(),
        a.data[1].clone(),
        Term::Atom(a.sym.handle),
        Term::Atom(a.pk.handle),
    ];
    proptest::collection::vec(term_strategy(leaves, a.keys(), 3), 0..5).boxed()
}

/// `d2` occurs only under `pk(X)`, whose private half is never known.
pub fn check_perfect_encryption(kb: &[Term], wrapped: &Term) -> Result<(), TestCaseError> {
    let a = alphabet();
    let mut all = kb.to_vec();
    all.push(Term::enc(wrapped.clone(), a.pk));
    let k = Knowledge::new(all);
    prop_assert!(!k.can_derive(&a.data[2], 3));
    Ok(())
}

pub fn entry_strategy() -> impl Strategy<Value = MetadataEntry> {
    (0u8..3, 0u64..6).prop_map(|(e, s)| MetadataEntry {
        encryption: EncryptionClass::try_from(e).unwrap(),
        size: s,
        timestamp: 0,
        recorded: true,
        extra: Vec::new(),
    })
}

pub fn check_compare(a: &MetadataEntry, b: &MetadataEntry) -> Result<(), TestCaseError> {
    prop_assert!(compare(a, a));
    prop_assert_eq!(compare(a, b), compare(b, a));
    Ok(())
}

/// The recorded non-transitive triple.
pub fn compare_counterexample() -> (MetadataEntry, MetadataEntry, MetadataEntry) {
    let e = |enc: u8, size| MetadataEntry {
        encryption: EncryptionClass::try_from(enc).unwrap(),
        size,
        timestamp: 0,
        recorded: true,
        extra: Vec::new(),
    };
    (e(2, 5), e(2, 6), e(1, 6))
}

pub const PAIRS: [(&str, &str); 5] = [("A", "B"), ("B", "C"), ("A", "C"), ("C", "A"), ("B", "A")];

pub fn check_zero_suffix(sessions: &[usize], stops: &[Option<usize>]) -> Result<(), TestCaseError> {
    let spec = parse_spec(NSPK).unwrap();
    let cfg = SessionConfig {
        sessions: sessions
            .iter()
            .map(|&i| vec![PAIRS[i].0.to_string(), PAIRS[i].1.to_string()])
            .collect(),
        intruder_peer: true,
        fake_depth: 2,
        enc_overhead: 0,
    };
    let interruptions: Vec<Interruption> = stops
        .iter()
        .enumerate()
        .filter_map(|(b, s)| {
            s.map(|after_step| Interruption {
                session: b + 1,
                after_step,
            })
        })
        .collect();
    let out = mi_simulate_with(&spec, &cfg, &interruptions, &[]).unwrap();
    prop_assert!(out.ikt.zero_suffix_holds());
    for b in 1..=sessions.len() {
        let expected = stops.get(b - 1).copied().flatten().unwrap_or(3).min(3);
        let got = (1..=3).filter(|&a| out.ikt.get(a, b).recorded).count();
        prop_assert_eq!(got, expected);
    }
    Ok(())
}

pub fn tag_subset() -> impl Strategy<Value = BTreeSet<AttackTag>> {
    proptest::sample::subsequence(AttackTag::ALL.to_vec(), 0..=7)
        .prop_map(|v| v.into_iter().collect())
}

pub fn check_transitions_identity(
    n: usize,
    fake_depth: usize,
    active: BTreeSet<AttackTag>,
    bfs: bool,
    exhaustive: bool,
    max_states: usize,
) -> Result<(), TestCaseError> {
    let w = nspk_world(n, fake_depth);
    let r = search(
        &w,
        &SearchOptions {
            strategy: if bfs {
                SearchStrategy::Bfs
            } else {
                SearchStrategy::Dfs
            },
            stop: if exhaustive {
                StopMode::Exhaustive
            } else {
                StopMode::FirstError
            },
            active,
            limits: SearchLimits {
                max_states,
                max_depth: 10_000,
            },
        },
    );
    prop_assert_eq!(
        r.stats.transitions,
        r.stats.states_stored + r.stats.states_matched
    );
    prop_assert!(r.stats.states_stored <= max_states);
    prop_assert_eq!(r.visited.len(), r.stats.states_stored);
    let distinct: HashSet<_> = r.visited.iter().collect();
    prop_assert_eq!(distinct.len(), r.visited.len());
    Ok(())
}

/// Random walk over the full transition relation; choices index into the
/// enabled list.
pub fn walk(w: &World, choices: &[usize]) -> Vec<mi_checker::checker::GlobalState> {
    let mut s = mi_checker::checker::GlobalState::initial(w);
    let mut out = vec![s.clone()];
    for &c in choices {
        let succ = successors(w, &s, &AttackTag::all());
        if succ.is_empty() {
            break;
        }
        s = succ[c % succ.len()].2.clone();
        out.push(s.clone());
    }
    out
}

pub fn check_anti_monotone(
    choices: &[usize],
    small: BTreeSet<AttackTag>,
    extra: BTreeSet<AttackTag>,
) -> Result<(), TestCaseError> {
    let w = nspk_world(2, 2);
    let big: BTreeSet<_> = small.union(&extra).copied().collect();
    for s in walk(&w, choices) {
        let a = enumerate_actions(&w, &s.kb, &s.procs, &small);
        let b = enumerate_actions(&w, &s.kb, &s.procs, &big);
        for x in &a {
            prop_assert!(b.contains(x));
        }
        prop_assert!(enumerate_actions(&w, &s.kb, &s.procs, &BTreeSet::new()).is_empty());
    }
    Ok(())
}

fn targets(t: &Transition) -> Option<ProcId> {
    match t {
        Transition::Send { proc, .. } => Some(*proc),
        Transition::Attack(a) => Some(a.target),
    }
}

/// Injects arbitrary terms into processes; a stopped process never changes
/// again and no transition involves it.
pub fn check_fail_stop(injections: &[(usize, Term)], sends: &[usize]) -> Result<(), TestCaseError> {
    let w = nspk_world(2, 2);
    let mut s = mi_checker::checker::GlobalState::initial(&w);
    let mut frozen: Vec<Option<ProcState>> = vec![None; s.procs.len()];
    for (i, (p, term)) in injections.iter().enumerate() {
        if let Some(&q) = sends.get(i) {
            let pid = ProcId(q % s.procs.len());
            if matches!(
                w.next_action(pid, &s.procs[pid.0]),
                Some(mi_checker::protocol::Action::Send(_))
            ) {
                let sent = w.send(pid, &mut s.procs[pid.0], false);
                s.kb.intercept(
                    sent.msg,
                    sent.step,
                    sent.session,
                    sent.sender,
                    sent.recipient,
                )
                .unwrap();
            }
        }
        let pid = ProcId(p % s.procs.len());
        let _ = w.deliver(pid, &mut s.procs[pid.0], term);
        for (j, st) in s.procs.iter().enumerate() {
            if let Some(f) = &frozen[j] {
                prop_assert_eq!(f, st);
            } else if st.status == ProcStatus::Stopped {
                frozen[j] = Some(st.clone());
            }
        }
        for t in enabled(&w, &s, &AttackTag::all()) {
            let p = targets(&t).unwrap();
            prop_assert!(frozen[p.0].is_none());
        }
    }
    Ok(())
}

/// Terms over the NSPK world's agents, nonces and keys.
pub fn nspk_term_strategy(w: &World) -> BoxedStrategy<Term> {
    let leaves: Vec<Term> = w
        .atoms
        .ids()
        .filter(|id| !w.atoms.kind(*id).is_key())
        .map(Term::Atom)
        .collect();
    let keys: Vec<Key> = w
        .atoms
        .ids()
        .filter(|id| w.atoms.kind(*id) == AtomKind::PublicKey)
        .filter_map(|id| w.atoms.key(id))
        .collect();
    term_strategy(leaves, keys, 2)
}
