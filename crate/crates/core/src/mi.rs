//! Message inspection: per-message metadata, the intruder knowledge table,
//! feasibility rules for attack actions, and the passive preliminary run.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::intruder::{AttackTag, Knowledge};
use crate::protocol::session::{instantiate, ConfigError, ProcId, SessionConfig, World};
use crate::protocol::{Action, ProtocolSpec};
use crate::terms::{EncryptionClass, Term};

/// Metadata of one `(a, b)` message. The all-zero entry means "never sent".
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetadataEntry {
    pub encryption: EncryptionClass,
    pub size: u64,
    pub timestamp: u64,
    pub recorded: bool,
    /// Values of registered extra metadata functions, by name.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub extra: Vec<(String, i64)>,
}

impl MetadataEntry {
    pub fn is_zero(&self) -> bool {
        !self.recorded
            && self.encryption == EncryptionClass::Plain
            && self.size == 0
            && self.timestamp == 0
            && self.extra.is_empty()
    }
}

/// An additional metadata sub-function evaluated on every recorded message.
pub trait MetadataFunction {
    fn name(&self) -> &str;
    fn evaluate(&self, msg: &Term, kb: &Knowledge, world: &World) -> i64;
}

/// Metadata comparison: true iff any pair of corresponding sub-function
/// values is equal. Timestamps do not take part.
pub fn compare(p1: &MetadataEntry, p2: &MetadataEntry) -> bool {
    p1.encryption == p2.encryption
        || p1.size == p2.size
        || p1
            .extra
            .iter()
            .any(|(name, v)| p2.extra.iter().any(|(n2, v2)| n2 == name && v2 == v))
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IktError {
    #[error("coordinate ({step},{session}) is outside the {z}x{n} table")]
    OutOfRange {
        step: usize,
        session: usize,
        z: usize,
        n: usize,
    },
    #[error("entry ({step},{session}) is already recorded")]
    AlreadyRecorded { step: usize, session: usize },
    #[error("entry ({step},{session}) recorded before its predecessor")]
    ZeroSuffix { step: usize, session: usize },
}

/// The z x n table of message metadata, one column per session.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IktTable {
    z: usize,
    n: usize,
    entries: Vec<MetadataEntry>,
    clock: u64,
}

impl IktTable {
    pub fn new(z: usize, n: usize) -> Self {
        IktTable {
            z,
            n,
            entries: vec![MetadataEntry::default(); z * n],
            clock: 0,
        }
    }

    pub fn steps(&self) -> usize {
        self.z
    }

    pub fn sessions(&self) -> usize {
        self.n
    }

    fn index(&self, a: usize, b: usize) -> Result<usize, IktError> {
        if a == 0 || b == 0 || a > self.z || b > self.n {
            return Err(IktError::OutOfRange {
                step: a,
                session: b,
                z: self.z,
                n: self.n,
            });
        }
        Ok((a - 1) * self.n + (b - 1))
    }

    /// Entry `p(a, b)`, 1-based.
    pub fn get(&self, a: usize, b: usize) -> &MetadataEntry {
        &self.entries[self.index(a, b).expect("coordinate in range")]
    }

    /// Recorded coordinates in row-major order.
    pub fn recorded(&self) -> impl Iterator<Item = (usize, usize, &MetadataEntry)> + '_ {
        (1..=self.z)
            .flat_map(move |a| (1..=self.n).map(move |b| (a, b)))
            .map(|(a, b)| (a, b, self.get(a, b)))
            .filter(|(_, _, e)| e.recorded)
    }

    /// Writes a prepared entry; the timestamp is assigned here.
    pub fn record_entry(
        &mut self,
        a: usize,
        b: usize,
        mut entry: MetadataEntry,
    ) -> Result<&MetadataEntry, IktError> {
        let i = self.index(a, b)?;
        if self.entries[i].recorded {
            return Err(IktError::AlreadyRecorded {
                step: a,
                session: b,
            });
        }
        if a > 1 && !self.get(a - 1, b).recorded {
            return Err(IktError::ZeroSuffix {
                step: a,
                session: b,
            });
        }
        self.clock += 1;
        entry.timestamp = self.clock;
        entry.recorded = true;
        self.entries[i] = entry;
        debug_assert!(self.zero_suffix_holds());
        Ok(&self.entries[i])
    }

    /// Records `msg` as `p(a, b)`. A ciphertext the intruder can open is
    /// recorded as non-encrypted.
    pub fn record(
        &mut self,
        a: usize,
        b: usize,
        msg: &Term,
        kb: &Knowledge,
        world: &World,
        extra: &[&dyn MetadataFunction],
    ) -> Result<&MetadataEntry, IktError> {
        let encryption = if kb.open(msg).is_some() {
            EncryptionClass::Plain
        } else {
            msg.encryption_class()
        };
        let entry = MetadataEntry {
            encryption,
            size: msg.size(&world.atoms, world.config.enc_overhead),
            timestamp: 0,
            recorded: true,
            extra: extra
                .iter()
                .map(|f| (f.name().to_string(), f.evaluate(msg, kb, world)))
                .collect(),
        };
        self.record_entry(a, b, entry)
    }

    /// In every column, an unrecorded entry is followed only by unrecorded
    /// entries.
    pub fn zero_suffix_holds(&self) -> bool {
        (1..=self.n).all(|b| {
            let mut seen_zero = false;
            (1..=self.z).all(|a| {
                let e = self.get(a, b);
                if !e.recorded {
                    seen_zero = true;
                    e.is_zero()
                } else {
                    !seen_zero
                }
            })
        })
    }
}

/// One line of the rule-evaluation log.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleLogEntry {
    pub rule: String,
    pub tags: Vec<AttackTag>,
    pub left: (usize, usize),
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub right: Option<(usize, usize)>,
    pub fired: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PruneReport {
    pub removable: BTreeSet<AttackTag>,
    pub retained: BTreeSet<AttackTag>,
    pub log: Vec<RuleLogEntry>,
}

impl PruneReport {
    /// Tags the pruned intruder keeps.
    pub fn active(&self) -> BTreeSet<AttackTag> {
        self.retained.clone()
    }
}

/// Subterms of `msg` the intruder can read: everything not under an
/// encryption it cannot open.
fn readable_subterms<'a>(msg: &'a Term, kb: &Knowledge, out: &mut Vec<&'a Term>) {
    out.push(msg);
    match msg {
        Term::Concat(parts) => parts.iter().for_each(|p| readable_subterms(p, kb, out)),
        Term::Enc(..) => {
            if let Some(body) = kb.open(msg) {
                readable_subterms(body, kb, out);
            }
        }
        _ => {}
    }
}

/// Applies the feasibility rules to a filled table. A tag is retained if it
/// is enabled at some recorded entry.
pub fn evaluate_rules(ikt: &IktTable, kb: &Knowledge, world: &World) -> PruneReport {
    use AttackTag::*;
    let mut log = Vec::new();
    let mut enabled = BTreeSet::new();
    let recorded: Vec<_> = ikt.recorded().collect();

    for &(a, b, e) in &recorded {
        enabled.extend([A1_1, A1_2, A1_3, A5]);
        if a == 1 {
            enabled.insert(A4);
        }
        let readable = e.encryption != EncryptionClass::Full;
        if readable {
            enabled.insert(A2);
        }
        log.push(RuleLogEntry {
            rule: "encryption".into(),
            tags: vec![A2],
            left: (a, b),
            right: None,
            fired: readable,
            detail: format!("p^Encryption = {}", e.encryption as u8),
        });

        // Size-equal atomic message for a readable part.
        let mut fired = false;
        let mut detail = String::from("no readable part");
        if readable {
            detail = "no size-equal atomic message".into();
            if let Some(rec) = kb.records().iter().find(|r| r.step == a && r.session == b) {
                let overhead = world.config.enc_overhead;
                let mut subs = Vec::new();
                readable_subterms(&rec.msg, kb, &mut subs);
                'outer: for m in subs {
                    let size = m.size(&world.atoms, overhead);
                    for amsg in kb.analz() {
                        if matches!(amsg, Term::Atom(_))
                            && amsg != m
                            && amsg.size(&world.atoms, overhead) == size
                        {
                            fired = true;
                            detail = format!(
                                "{} ~ {} (size {size})",
                                m.display(&world.atoms),
                                amsg.display(&world.atoms)
                            );
                            break 'outer;
                        }
                    }
                }
            }
        }
        if fired {
            enabled.insert(A3);
        }
        log.push(RuleLogEntry {
            rule: "atomic-size".into(),
            tags: vec![A3],
            left: (a, b),
            right: None,
            fired,
            detail,
        });
    }

    for &(a, b, e) in &recorded {
        for &(c, d, f) in &recorded {
            if (c, d) <= (a, b) {
                continue;
            }
            if b == d && a < c {
                let eq = e.size == f.size;
                if eq {
                    enabled.insert(A3);
                }
                log.push(RuleLogEntry {
                    rule: "same-session-size".into(),
                    tags: vec![A1_1, A1_2, A1_3, A3],
                    left: (a, b),
                    right: Some((c, d)),
                    fired: eq,
                    detail: format!("s{a}={} s{c}={}", e.size, f.size),
                });
            } else if a == c && b != d {
                let tags = if a == 1 { vec![A4, A5] } else { vec![A5] };
                log.push(RuleLogEntry {
                    rule: "cross-session".into(),
                    tags,
                    left: (a, b),
                    right: Some((c, d)),
                    fired: compare(e, f),
                    detail: format!("p({a},{b}) ~= p({c},{d}): {}", compare(e, f)),
                });
            } else if b != d {
                let readable =
                    e.encryption != EncryptionClass::Full || f.encryption != EncryptionClass::Full;
                let fired = compare(e, f) && readable;
                log.push(RuleLogEntry {
                    rule: "type-flaw".into(),
                    tags: vec![A3],
                    left: (a, b),
                    right: Some((c, d)),
                    fired,
                    detail: format!("~= {}, readable {readable}", compare(e, f)),
                });
            }
        }
    }

    let retained: BTreeSet<_> = enabled;
    let removable = AttackTag::all().difference(&retained).copied().collect();
    PruneReport {
        removable,
        retained,
        log,
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Ikt(#[from] IktError),
}

/// Stops a session after its `after_step` message was sent: that message
/// is intercepted and recorded but never delivered.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Interruption {
    pub session: usize,
    pub after_step: usize,
}

pub struct SimOutcome {
    pub world: World,
    pub ikt: IktTable,
    pub knowledge: Knowledge,
    pub report: PruneReport,
}

/// Passive preliminary run: every session in order, the intruder only
/// intercepts, records and forwards.
pub fn mi_simulate(spec: &ProtocolSpec, config: &SessionConfig) -> Result<SimOutcome, SimError> {
    mi_simulate_with(spec, config, &[], &[])
}

pub fn mi_simulate_with(
    spec: &ProtocolSpec,
    config: &SessionConfig,
    interruptions: &[Interruption],
    extra: &[&dyn MetadataFunction],
) -> Result<SimOutcome, SimError> {
    let world = instantiate(spec, config)?;
    let mut procs = world.initial_proc_states();
    let mut kb = Knowledge::new(world.intruder_knowledge.clone());
    let mut ikt = IktTable::new(spec.step_count(), config.session_count());

    for session in 1..=config.session_count() {
        let stop = interruptions
            .iter()
            .filter(|i| i.session == session)
            .map(|i| i.after_step)
            .min();
        let pid_of = |role| {
            world
                .processes
                .iter()
                .find(|p| p.session == session && p.role == role)
                .map(|p| p.id)
                .expect("every role is instantiated")
        };
        for (i, step) in spec.steps.iter().enumerate() {
            let from: ProcId = pid_of(step.from);
            if world.next_action(from, &procs[from.0]) != Some(Action::Send(i)) {
                break;
            }
            let sent = world.send(from, &mut procs[from.0], false);
            kb.intercept(
                sent.msg.clone(),
                sent.step,
                session,
                sent.sender,
                sent.recipient,
            )
            .expect("each step is sent once per session");
            ikt.record(step.index, session, &sent.msg, &kb, &world, extra)?;
            if stop == Some(step.index) {
                break;
            }
            let to = pid_of(step.to);
            if world.deliver(to, &mut procs[to.0], &sent.msg).is_err() {
                break;
            }
        }
    }

    let report = evaluate_rules(&ikt, &kb, &world);
    Ok(SimOutcome {
        world,
        ikt,
        knowledge: kb,
        report,
    })
}
