//! Dolev-Yao intruder: knowledge base, bounded derivation and attack actions.

use std::collections::BTreeSet;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::session::{ProcId, ProcState, ProcStatus, World};
use crate::terms::{AtomId, EncryptionClass, Key, Term};

/// One intercepted honest message.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Intercept {
    pub msg: Term,
    /// 1-based step `a`.
    pub step: usize,
    /// 1-based session `b`.
    pub session: usize,
    pub sender: AtomId,
    pub recipient: AtomId,
    pub timestamp: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InterceptError {
    #[error("message ({step},{session}) was already intercepted")]
    Duplicate { step: usize, session: usize },
}

/// What the intruder knows: its initial knowledge plus every intercepted
/// message, closed under decryption and projection.
///
/// Equality and hashing only look at the interception records; the analysed
/// set is a cache fully determined by them.
#[derive(Clone, Debug)]
pub struct Knowledge {
    records: Vec<Intercept>,
    analz: BTreeSet<Term>,
    clock: u64,
}

impl PartialEq for Knowledge {
    fn eq(&self, other: &Self) -> bool {
        self.records == other.records
    }
}

impl Eq for Knowledge {}

impl Hash for Knowledge {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.records.hash(state);
    }
}

impl Knowledge {
    pub fn new<I: IntoIterator<Item = Term>>(initial: I) -> Self {
        let mut kb = Knowledge {
            records: Vec::new(),
            analz: BTreeSet::new(),
            clock: 0,
        };
        for t in initial {
            kb.add(t);
        }
        kb
    }

    pub fn records(&self) -> &[Intercept] {
        &self.records
    }

    /// The decomposition closure of everything known.
    pub fn analz(&self) -> &BTreeSet<Term> {
        &self.analz
    }

    pub fn knows(&self, t: &Term) -> bool {
        self.analz.contains(t)
    }

    fn knows_key(&self, k: AtomId) -> bool {
        self.analz.contains(&Term::Atom(k))
    }

    /// The body of `t` if `t` is a ciphertext the intruder can open.
    pub fn open<'a>(&self, t: &'a Term) -> Option<&'a Term> {
        match t {
            Term::Enc(body, k) if self.knows_key(k.inverse) => Some(body),
            _ => None,
        }
    }

    /// Adds a term and saturates under decryption and projection.
    pub fn add(&mut self, t: Term) {
        let mut work = vec![t];
        let mut new_key = false;
        while let Some(t) = work.pop() {
            if t == Term::Null || self.analz.contains(&t) {
                continue;
            }
            match &t {
                Term::Concat(parts) => work.extend(parts.iter().cloned()),
                Term::Enc(body, k) if self.knows_key(k.inverse) => work.push((**body).clone()),
                Term::Atom(_) => new_key = true,
                _ => {}
            }
            self.analz.insert(t);
            // A newly learned key may open ciphertexts stored earlier.
            if new_key {
                new_key = false;
                for c in &self.analz {
                    if let Term::Enc(body, k) = c {
                        if self.knows_key(k.inverse) && !self.analz.contains(body) {
                            work.push((**body).clone());
                        }
                    }
                }
            }
        }
    }

    /// Records an honest message in transit and learns it.
    pub fn intercept(
        &mut self,
        msg: Term,
        step: usize,
        session: usize,
        sender: AtomId,
        recipient: AtomId,
    ) -> Result<&Intercept, InterceptError> {
        if self
            .records
            .iter()
            .any(|r| r.step == step && r.session == session)
        {
            return Err(InterceptError::Duplicate { step, session });
        }
        self.clock += 1;
        self.add(msg.clone());
        self.records.push(Intercept {
            msg,
            step,
            session,
            sender,
            recipient,
            timestamp: self.clock,
        });
        Ok(self.records.last().unwrap())
    }

    /// Timestamp of the latest message intercepted in `session`.
    pub fn last_timestamp(&self, session: usize) -> Option<u64> {
        self.records
            .iter()
            .filter(|r| r.session == session)
            .map(|r| r.timestamp)
            .max()
    }

    /// Whether `goal` can be built from the analysed knowledge with at most
    /// `depth` composition layers (an n-ary concatenation is one layer).
    pub fn can_derive(&self, goal: &Term, depth: usize) -> bool {
        if self.analz.contains(goal) {
            return true;
        }
        if depth == 0 {
            return false;
        }
        match goal {
            Term::Null => true,
            Term::Atom(_) => false,
            Term::Concat(parts) => parts.iter().all(|p| self.can_derive(p, depth - 1)),
            Term::Enc(body, k) => self.knows_key(k.handle) && self.can_derive(body, depth - 1),
        }
    }

    /// Readability class of a stored message after key-aware downgrade: a
    /// ciphertext the intruder can open counts as its body.
    pub fn effective_class(&self, msg: &Term) -> EncryptionClass {
        match self.open(msg) {
            Some(body) => self.effective_class(body),
            None => msg.encryption_class(),
        }
    }
}

/// Free-function form of [`Knowledge::can_derive`].
pub fn can_derive(kb: &Knowledge, goal: &Term, depth: usize) -> bool {
    kb.can_derive(goal, depth)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AttackTag {
    A1_1,
    A1_2,
    A1_3,
    A2,
    A3,
    A4,
    A5,
}

impl AttackTag {
    pub const ALL: [AttackTag; 7] = [
        AttackTag::A1_1,
        AttackTag::A1_2,
        AttackTag::A1_3,
        AttackTag::A2,
        AttackTag::A3,
        AttackTag::A4,
        AttackTag::A5,
    ];

    pub fn all() -> BTreeSet<AttackTag> {
        Self::ALL.into_iter().collect()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AttackTag::A1_1 => "A1_1",
            AttackTag::A1_2 => "A1_2",
            AttackTag::A1_3 => "A1_3",
            AttackTag::A2 => "A2",
            AttackTag::A3 => "A3",
            AttackTag::A4 => "A4",
            AttackTag::A5 => "A5",
        }
    }
}

impl fmt::Display for AttackTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AttackTag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| format!("unknown attack tag `{s}`"))
    }
}

/// A concrete intruder move: deliver `payload` to a waiting process.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct AttackAction {
    pub tag: AttackTag,
    pub payload: Term,
    pub target: ProcId,
    /// Coordinates `(a, b)` of the intercepted message it was built from.
    pub source: (usize, usize),
}

/// Every payload the intruder can offer for `rec` to a process run by
/// `target_agent`: the message itself, and, when the outer layer opens,
/// the body re-encrypted for the target.
fn forward_variants(world: &World, kb: &Knowledge, rec: &Intercept, target: ProcId) -> Vec<Term> {
    let mut out = vec![rec.msg.clone()];
    if world.config.fake_depth >= 1 {
        if let (Some(body), Term::Enc(_, k)) = (kb.open(&rec.msg), &rec.msg) {
            if let Some(key) = reencryption_key(world, kb, *k, target) {
                let t = Term::enc(body.clone(), key);
                if !out.contains(&t) {
                    out.push(t);
                }
            }
        }
    }
    out
}

fn reencryption_key(world: &World, kb: &Knowledge, orig: Key, target: ProcId) -> Option<Key> {
    if orig.is_symmetric() {
        return Some(orig);
    }
    world
        .public_key(world.process(target).agent)
        .filter(|k| kb.knows_key(k.handle))
}

/// Readable top-level parts of a stored message, and whether they sit
/// under an encryption the intruder opened.
fn readable_parts<'a>(kb: &Knowledge, msg: &'a Term) -> Option<(&'a [Term], bool)> {
    match kb.open(msg) {
        Some(body) => Some((body.parts(), true)),
        None if msg.encryption_class() != EncryptionClass::Full => Some((msg.parts(), false)),
        None => None,
    }
}

/// Atoms the intruder can inject as fake content.
fn injectable_atoms(kb: &Knowledge, world: &World) -> Vec<Term> {
    kb.analz
        .iter()
        .filter(|t| match t {
            Term::Atom(id) => !world.atoms.kind(*id).is_key(),
            _ => false,
        })
        .cloned()
        .collect()
}

fn rebuild(
    world: &World,
    kb: &Knowledge,
    rec: &Intercept,
    target: ProcId,
    parts: Vec<Term>,
    reencrypt: bool,
    layers: usize,
) -> Option<Term> {
    let body = Term::concat(parts);
    if !reencrypt {
        return (world.config.fake_depth >= layers).then_some(body);
    }
    if world.config.fake_depth < layers + 1 {
        return None;
    }
    let Term::Enc(_, k) = &rec.msg else {
        return None;
    };
    reencryption_key(world, kb, *k, target).map(|key| Term::enc(body, key))
}

fn a2_fakes(world: &World, kb: &Knowledge, rec: &Intercept, target: ProcId) -> Vec<Term> {
    let Some((parts, reenc)) = readable_parts(kb, &rec.msg) else {
        return Vec::new();
    };
    let mut out = Vec::new();
    let atoms = injectable_atoms(kb, world);
    for i in 0..parts.len() {
        if matches!(parts[i], Term::Enc(..)) {
            continue;
        }
        for x in &atoms {
            if *x == parts[i] {
                continue;
            }
            let mut p = parts.to_vec();
            p[i] = x.clone();
            out.extend(rebuild(world, kb, rec, target, p, reenc, 1));
        }
    }
    for x in &atoms {
        let mut p = parts.to_vec();
        p.push(x.clone());
        out.extend(rebuild(world, kb, rec, target, p, reenc, 1));
    }
    out
}

fn a3_substitutions(world: &World, kb: &Knowledge, rec: &Intercept, target: ProcId) -> Vec<Term> {
    let Some((parts, reenc)) = readable_parts(kb, &rec.msg) else {
        return Vec::new();
    };
    let overhead = world.config.enc_overhead;
    let atoms = injectable_atoms(kb, world);
    let mut out = Vec::new();
    for i in 0..parts.len() {
        let size = parts[i].size(&world.atoms, overhead);
        for x in &atoms {
            if *x == parts[i] || x.size(&world.atoms, overhead) != size {
                continue;
            }
            let mut p = parts.to_vec();
            p[i] = x.clone();
            out.extend(rebuild(world, kb, rec, target, p, reenc, 1));
        }
    }
    out
}

/// Enumerates every attack-action instance enabled under `active`.
///
/// Targets are processes blocked in a receive. The result is sorted by tag,
/// then payload, then target; identical (target, payload) pairs reached
/// through different tags are all kept.
pub fn enumerate_actions(
    world: &World,
    kb: &Knowledge,
    procs: &[ProcState],
    active: &BTreeSet<AttackTag>,
) -> Vec<AttackAction> {
    let mut out = Vec::new();
    if active.is_empty() {
        return out;
    }
    let overhead = world.config.enc_overhead;
    let waiting: Vec<(ProcId, usize)> = procs
        .iter()
        .enumerate()
        .filter(|(_, st)| st.status == ProcStatus::Running)
        .filter_map(|(i, st)| world.waiting_step(ProcId(i), st).map(|s| (ProcId(i), s)))
        .collect();

    for &(pid, step_idx) in &waiting {
        let st = &procs[pid.0];
        let info = world.process(pid);
        let fresh = world.not_started(pid, st);
        let last_ts = kb.last_timestamp(info.session);
        let in_order = |rec: &Intercept| last_ts.is_none_or(|ts| rec.timestamp <= ts);
        let mut push = |tag: AttackTag, rec: &Intercept, payload: Term| {
            if active.contains(&tag) {
                out.push(AttackAction {
                    tag,
                    payload,
                    target: pid,
                    source: (rec.step, rec.session),
                });
            }
        };
        for rec in kb.records() {
            let variants = forward_variants(world, kb, rec, pid);
            let a1 = if info.agent == rec.recipient {
                AttackTag::A1_3
            } else if info.agent == rec.sender {
                AttackTag::A1_2
            } else {
                AttackTag::A1_1
            };
            for v in &variants {
                push(a1, rec, v.clone());
                if in_order(rec) {
                    if rec.step == 1 && fresh {
                        push(AttackTag::A4, rec, v.clone());
                    }
                    push(AttackTag::A5, rec, v.clone());
                }
            }
            if !matches!(kb.effective_class(&rec.msg), EncryptionClass::Full) {
                for f in a2_fakes(world, kb, rec, pid) {
                    if f != rec.msg {
                        push(AttackTag::A2, rec, f);
                    }
                }
            }
            for f in a3_substitutions(world, kb, rec, pid) {
                if f != rec.msg {
                    push(AttackTag::A3, rec, f);
                }
            }
            // Whole-message type flaw: an earlier message of the target's own
            // session whose size equals what the target expects.
            if rec.session == info.session && rec.step < world.spec.steps[step_idx].index {
                let expected = world.expected_size(&world.spec.steps[step_idx].pattern, st);
                if expected == Some(rec.msg.size(&world.atoms, overhead)) {
                    push(AttackTag::A3, rec, rec.msg.clone());
                }
            }
        }
    }
    out.sort_by(|x, y| {
        (x.tag, &x.payload, x.target, x.source).cmp(&(y.tag, &y.payload, y.target, y.source))
    });
    out.dedup();
    debug_assert!(out
        .iter()
        .all(|a| kb.can_derive(&a.payload, world.config.fake_depth)));
    out
}

impl AttackAction {
    pub fn describe(&self, world: &World) -> String {
        let info = world.process(self.target);
        format!(
            "{} send {} to {} (session {}) from p({},{})",
            self.tag,
            self.payload.display(&world.atoms),
            world.agent_name(info.agent),
            info.session,
            self.source.0,
            self.source.1
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::NSPK;
    use crate::protocol::{instantiate, parse_spec, SessionConfig};
    use crate::terms::{AtomKind, AtomTable};

    fn nspk(n: usize) -> World {
        let spec = parse_spec(NSPK).unwrap();
        instantiate(&spec, &SessionConfig::from_spec(&spec, n).unwrap()).unwrap()
    }

    #[test]
    fn one_decryption() {
        let mut atoms = AtomTable::new();
        let m = Term::Atom(atoms.insert("m", AtomKind::Data, 8).unwrap());
        let k = atoms.insert_symmetric_key("k", 16, &[]).unwrap();
        let kb = Knowledge::new([Term::Atom(k.handle), Term::enc(m.clone(), k)]);
        assert!(kb.can_derive(&m, 0));
        let kb2 = Knowledge::new([Term::enc(m.clone(), k), Term::Atom(k.handle)]);
        assert!(kb2.can_derive(&m, 0));
    }

    #[test]
    fn one_concatenation() {
        let mut atoms = AtomTable::new();
        let m1 = Term::Atom(atoms.insert("m1", AtomKind::Data, 8).unwrap());
        let m2 = Term::Atom(atoms.insert("m2", AtomKind::Data, 8).unwrap());
        let kb = Knowledge::new([m1.clone(), m2.clone()]);
        let goal = Term::concat([m1, m2]);
        assert!(kb.can_derive(&goal, 1));
        assert!(!kb.can_derive(&goal, 0));
    }

    #[test]
    fn initial_knowledge_misses_nonces() {
        let w = nspk(2);
        let kb = Knowledge::new(w.intruder_knowledge.clone());
        let na = Term::Atom(w.atoms.lookup("Na#1").unwrap());
        assert!(!kb.can_derive(&na, 3));
    }

    #[test]
    fn intercept_without_key_stores_ciphertext_only() {
        let w = nspk(1);
        let mut kb = Knowledge::new(w.intruder_knowledge.clone());
        let mut st = w.initial_proc_states();
        let sent = w.send(ProcId(0), &mut st[0], false);
        kb.intercept(sent.msg.clone(), 1, 1, sent.sender, sent.recipient)
            .unwrap();
        let na = Term::Atom(w.atoms.lookup("Na#1").unwrap());
        assert!(kb.knows(&sent.msg));
        assert!(!kb.can_derive(&na, 2));
        assert_eq!(
            kb.intercept(sent.msg.clone(), 1, 1, sent.sender, sent.recipient)
                .unwrap_err(),
            InterceptError::Duplicate {
                step: 1,
                session: 1
            }
        );
    }

    #[test]
    fn plaintext_and_own_key_messages_open() {
        let w = nspk(1);
        let mut kb = Knowledge::new(w.intruder_knowledge.clone());
        let mut st = w.initial_proc_states();
        let sent = w.send(ProcId(0), &mut st[0], true);
        kb.intercept(sent.msg.clone(), 1, 1, sent.sender, sent.recipient)
            .unwrap();
        let na = Term::Atom(w.atoms.lookup("Na#1").unwrap());
        assert!(kb.knows(&na));
        assert_eq!(kb.effective_class(&sent.msg), EncryptionClass::Plain);
    }

    #[test]
    fn timestamps_strictly_increase() {
        let w = nspk(2);
        let mut kb = Knowledge::new(w.intruder_knowledge.clone());
        let mut st = w.initial_proc_states();
        let s1 = w.send(ProcId(0), &mut st[0], false);
        let s2 = w.send(ProcId(2), &mut st[2], false);
        let t1 = kb
            .intercept(s1.msg, 1, 1, s1.sender, s1.recipient)
            .unwrap()
            .timestamp;
        let t2 = kb
            .intercept(s2.msg, 1, 2, s2.sender, s2.recipient)
            .unwrap()
            .timestamp;
        assert!(t1 < t2);
    }

    #[test]
    fn forward_to_intended_recipient_only() {
        let w = nspk(2);
        let mut kb = Knowledge::new(w.intruder_knowledge.clone());
        let mut st = w.initial_proc_states();
        let s = w.send(ProcId(0), &mut st[0], false);
        kb.intercept(s.msg.clone(), 1, 1, s.sender, s.recipient)
            .unwrap();
        let active = [AttackTag::A1_3].into_iter().collect();
        let acts = enumerate_actions(&w, &kb, &st, &active);
        assert_eq!(acts.len(), 1);
        assert_eq!(acts[0].payload, s.msg);
        assert_eq!(w.agent_name(w.process(acts[0].target).agent), "B");
    }

    #[test]
    fn no_a2_on_fully_encrypted_records() {
        let w = nspk(2);
        let mut kb = Knowledge::new(w.intruder_knowledge.clone());
        let mut st = w.initial_proc_states();
        for p in [0, 2] {
            let s = w.send(ProcId(p), &mut st[p], false);
            kb.intercept(s.msg, s.step, s.session, s.sender, s.recipient)
                .unwrap();
        }
        let active = [AttackTag::A2].into_iter().collect();
        assert!(enumerate_actions(&w, &kb, &st, &active).is_empty());
        assert!(enumerate_actions(&w, &kb, &st, &BTreeSet::new()).is_empty());
    }

    #[test]
    fn a4_uses_step_one_messages_for_fresh_processes() {
        let w = nspk(2);
        let mut kb = Knowledge::new(w.intruder_knowledge.clone());
        let mut st = w.initial_proc_states();
        for p in [0, 2] {
            let s = w.send(ProcId(p), &mut st[p], false);
            kb.intercept(s.msg, s.step, s.session, s.sender, s.recipient)
                .unwrap();
        }
        let active = [AttackTag::A4].into_iter().collect();
        let acts = enumerate_actions(&w, &kb, &st, &active);
        // Brute oracle: every (record with a = 1, not-started receiving
        // process) pair whose record is no later than the target session's
        // last interception.
        let mut expected = Vec::new();
        for (i, p) in st.iter().enumerate() {
            let pid = ProcId(i);
            if w.waiting_step(pid, p).is_none() || !w.not_started(pid, p) {
                continue;
            }
            let last = kb.last_timestamp(w.process(pid).session);
            for r in kb.records() {
                if r.step == 1 && last.is_none_or(|t| r.timestamp <= t) {
                    expected.push((pid, r.msg.clone()));
                }
            }
        }
        let mut got: Vec<_> = acts.iter().map(|a| (a.target, a.payload.clone())).collect();
        got.sort();
        expected.sort();
        assert_eq!(got, expected);
        assert!(!got.is_empty());
    }
}
