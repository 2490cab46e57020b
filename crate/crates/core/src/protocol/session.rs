//! Session instantiation and honest-agent semantics.
//!
//! Every (session, role) pair becomes one deterministic process. Honest
//! processes are fail-stop: a received message that does not match the
//! expected pattern halts the process for the rest of the run.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Action, AgentRef, KeyRef, Pattern, ProtocolSpec, RoleId, VarId, VarOrigin};
use crate::terms::{AtomId, AtomKind, AtomTable, Key, Term};

/// Default composition bound for intruder-built messages.
pub const DEFAULT_FAKE_DEPTH: usize = 2;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionConfig {
    /// One entry per session: the agent name playing each role, in role order.
    pub sessions: Vec<Vec<String>>,
    /// Initiators may choose to run their session with the intruder's own
    /// identity instead of the assigned responder.
    pub intruder_peer: bool,
    /// Maximum number of composition layers the intruder puts on top of
    /// the terms it has analysed.
    pub fake_depth: usize,
    /// Size added by every encryption layer.
    pub enc_overhead: u64,
}

impl SessionConfig {
    /// Uses the first `n` session assignments declared in the spec.
    pub fn from_spec(spec: &ProtocolSpec, n: usize) -> Result<Self, ConfigError> {
        if n == 0 {
            return Err(ConfigError::NoSessions);
        }
        if n > spec.sessions.len() {
            return Err(ConfigError::NotEnoughSessions {
                requested: n,
                declared: spec.sessions.len(),
            });
        }
        Ok(SessionConfig {
            sessions: spec.sessions[..n]
                .iter()
                .map(|s| s.iter().map(|a| spec.atoms.name(*a).to_string()).collect())
                .collect(),
            intruder_peer: true,
            fake_depth: DEFAULT_FAKE_DEPTH,
            enc_overhead: 0,
        })
    }

    pub fn session_count(&self) -> usize {
        self.sessions.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("at least one session is required")]
    NoSessions,
    #[error("{requested} sessions requested but the spec declares {declared}")]
    NotEnoughSessions { requested: usize, declared: usize },
    #[error("session {session}: role `{role}` is not assigned")]
    RoleUnassigned { session: usize, role: String },
    #[error("session {session}: too many role assignments")]
    TooManyAssignments { session: usize },
    #[error("unknown agent `{0}`")]
    UnknownAgent(String),
    #[error("session {session}: agent `{agent}` lacks the key pair role `{role}` requires")]
    MissingKey {
        session: usize,
        agent: String,
        role: String,
    },
    #[error("agent `{0}` is not allowed to play an honest role")]
    IntruderRole(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ProcId(pub usize);

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProcessInfo {
    pub id: ProcId,
    /// 1-based session number `b`.
    pub session: usize,
    pub role: RoleId,
    pub agent: AtomId,
    /// Agent assigned to every role of this session.
    pub assigned: Vec<AtomId>,
    /// Fresh nonces allocated for this process.
    pub nonces: Vec<(VarId, AtomId)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProcStatus {
    Running,
    Done,
    Stopped,
}

/// Local state of one honest process.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ProcState {
    pub pc: usize,
    pub status: ProcStatus,
    /// The agent this process believes plays each role.
    pub peers: Vec<AtomId>,
    pub vars: Vec<Option<Term>>,
}

/// The recipient's pattern did not match.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("message rejected; process fail-stopped")]
pub struct FailStop;

/// A message emitted by an honest send, as seen by the intruder.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sent {
    pub msg: Term,
    pub step: usize,
    pub session: usize,
    pub sender: AtomId,
    pub recipient: AtomId,
}

/// A protocol instantiated for a session configuration.
#[derive(Clone, Debug)]
pub struct World {
    pub spec: ProtocolSpec,
    pub config: SessionConfig,
    /// Spec atoms plus the fresh nonces of every process.
    pub atoms: AtomTable,
    pub processes: Vec<ProcessInfo>,
    pub intruder: Option<AtomId>,
    pub intruder_knowledge: Vec<Term>,
    public_keys: Vec<Option<Key>>,
    private_keys: Vec<Option<Key>>,
}

fn agent_id(spec: &ProtocolSpec, name: &str) -> Result<AtomId, ConfigError> {
    match spec.atoms.lookup(name) {
        Some(id) if spec.atoms.kind(id) == AtomKind::Agent => Ok(id),
        _ => Err(ConfigError::UnknownAgent(name.to_string())),
    }
}

fn key_roles(p: &Pattern, out: &mut Vec<RoleId>) {
    match p {
        Pattern::Concat(ps) => ps.iter().for_each(|q| key_roles(q, out)),
        Pattern::Enc(body, key) => {
            if let KeyRef::Public(AgentRef::Role(r)) | KeyRef::Private(AgentRef::Role(r)) = key {
                if !out.contains(r) {
                    out.push(*r);
                }
            }
            key_roles(body, out);
        }
        _ => {}
    }
}

/// Builds one process per (session, role) with globally unique fresh nonces.
pub fn instantiate(spec: &ProtocolSpec, config: &SessionConfig) -> Result<World, ConfigError> {
    if config.sessions.is_empty() {
        return Err(ConfigError::NoSessions);
    }
    let mut atoms = spec.atoms.clone();
    let mut public_keys = vec![None; spec.atoms.len()];
    let mut private_keys = vec![None; spec.atoms.len()];
    for id in spec.atoms.ids() {
        if spec.atoms.kind(id) == AtomKind::Agent {
            let name = spec.atoms.name(id);
            public_keys[id.0 as usize] = spec.atoms.public_key_of(name);
            private_keys[id.0 as usize] = spec.atoms.private_key_of(name);
        }
    }

    let mut needs_key = Vec::new();
    for s in &spec.steps {
        key_roles(&s.pattern, &mut needs_key);
    }
    let initiator = spec.initiator();
    let redirected_role = spec.steps.first().map(|s| s.to);

    let mut processes = Vec::new();
    for (b, assignment) in config.sessions.iter().enumerate() {
        let session = b + 1;
        if assignment.len() > spec.roles.len() {
            return Err(ConfigError::TooManyAssignments { session });
        }
        if assignment.len() < spec.roles.len() {
            return Err(ConfigError::RoleUnassigned {
                session,
                role: spec.roles[assignment.len()].clone(),
            });
        }
        let assigned = assignment
            .iter()
            .map(|n| agent_id(spec, n))
            .collect::<Result<Vec<_>, _>>()?;
        for &r in &needs_key {
            let agent = assigned[r.0];
            if public_keys[agent.0 as usize].is_none() {
                return Err(ConfigError::MissingKey {
                    session,
                    agent: spec.atoms.name(agent).to_string(),
                    role: spec.roles[r.0].clone(),
                });
            }
        }
        for (r, &agent) in assigned.iter().enumerate() {
            if Some(agent) == spec.intruder {
                return Err(ConfigError::IntruderRole(
                    spec.atoms.name(agent).to_string(),
                ));
            }
            let role = RoleId(r);
            let mut nonces = Vec::new();
            for (v, decl) in spec.vars.iter().enumerate() {
                if decl.origin == VarOrigin::Fresh(role) {
                    let name = format!("{}#{}", decl.name, session);
                    let id = atoms
                        .insert(&name, AtomKind::Nonce, decl.size)
                        .map_err(|_| ConfigError::UnknownAgent(name.clone()))?;
                    nonces.push((VarId(v), id));
                }
            }
            processes.push(ProcessInfo {
                id: ProcId(processes.len()),
                session,
                role,
                agent,
                assigned: assigned.clone(),
                nonces,
            });
        }
    }

    if let (true, Some(intruder), Some(init), Some(to)) = (
        config.intruder_peer,
        spec.intruder,
        initiator,
        redirected_role,
    ) {
        let _ = init;
        if needs_key.contains(&to) && public_keys[intruder.0 as usize].is_none() {
            return Err(ConfigError::MissingKey {
                session: 0,
                agent: spec.atoms.name(intruder).to_string(),
                role: spec.roles[to.0].clone(),
            });
        }
    }

    let mut intruder_knowledge = Vec::new();
    let intruder_name = spec.intruder.map(|i| spec.atoms.name(i).to_string());
    for id in spec.atoms.ids() {
        let info = spec.atoms.get(id);
        let known = match info.kind {
            AtomKind::Agent | AtomKind::PublicKey | AtomKind::Data => true,
            AtomKind::PrivateKey | AtomKind::SymmetricKey => intruder_name
                .as_ref()
                .is_some_and(|n| info.owners.contains(n)),
            AtomKind::Nonce => false,
        };
        if known {
            intruder_knowledge.push(Term::Atom(id));
        }
    }

    Ok(World {
        spec: spec.clone(),
        config: config.clone(),
        atoms,
        processes,
        intruder: spec.intruder,
        intruder_knowledge,
        public_keys,
        private_keys,
    })
}

impl World {
    pub fn initial_proc_states(&self) -> Vec<ProcState> {
        self.processes
            .iter()
            .map(|p| {
                let mut vars = vec![None; self.spec.vars.len()];
                for (v, id) in &p.nonces {
                    vars[v.0] = Some(Term::Atom(*id));
                }
                ProcState {
                    pc: self.spec.scripts[p.role.0].fresh_prefix(),
                    status: ProcStatus::Running,
                    peers: p.assigned.clone(),
                    vars,
                }
            })
            .collect()
    }

    pub fn process(&self, id: ProcId) -> &ProcessInfo {
        &self.processes[id.0]
    }

    pub fn is_intruder(&self, agent: AtomId) -> bool {
        Some(agent) == self.intruder
    }

    pub fn public_key(&self, agent: AtomId) -> Option<Key> {
        self.public_keys.get(agent.0 as usize).copied().flatten()
    }

    pub fn private_key(&self, agent: AtomId) -> Option<Key> {
        self.private_keys.get(agent.0 as usize).copied().flatten()
    }

    pub fn agent_name(&self, agent: AtomId) -> &str {
        self.atoms.name(agent)
    }

    /// The next action of a running process, if any.
    pub fn next_action(&self, id: ProcId, st: &ProcState) -> Option<Action> {
        if st.status != ProcStatus::Running {
            return None;
        }
        self.spec.scripts[self.process(id).role.0]
            .actions
            .get(st.pc)
            .copied()
    }

    /// The step index (into `spec.steps`) the process waits to receive.
    pub fn waiting_step(&self, id: ProcId, st: &ProcState) -> Option<usize> {
        match self.next_action(id, st) {
            Some(Action::Receive(i)) => Some(i),
            _ => None,
        }
    }

    /// True if the process has neither sent nor received anything yet.
    pub fn not_started(&self, id: ProcId, st: &ProcState) -> bool {
        st.pc == self.spec.scripts[self.process(id).role.0].fresh_prefix()
    }

    /// Whether the pending send may go to the intruder's own identity instead
    /// of the assigned peer.
    pub fn may_choose_intruder(&self, id: ProcId, st: &ProcState) -> bool {
        let Some(intruder) = self.intruder else {
            return false;
        };
        let Some(Action::Send(i)) = self.next_action(id, st) else {
            return false;
        };
        self.config.intruder_peer
            && i == 0
            && self.not_started(id, st)
            && st.peers[self.spec.steps[0].to.0] != intruder
    }

    fn resolve_agent(&self, a: &AgentRef, peers: &[AtomId]) -> AtomId {
        match a {
            AgentRef::Role(r) => peers[r.0],
            AgentRef::Agent(id) => *id,
        }
    }

    fn resolve_key(&self, k: &KeyRef, peers: &[AtomId]) -> Option<Key> {
        match k {
            KeyRef::Public(a) => self.public_key(self.resolve_agent(a, peers)),
            KeyRef::Private(a) => self.private_key(self.resolve_agent(a, peers)),
            KeyRef::Symmetric(id) => Some(Key::symmetric(*id)),
        }
    }

    /// Instantiates a pattern whose variables are all bound.
    pub fn build(&self, p: &Pattern, st: &ProcState) -> Term {
        match p {
            Pattern::Role(r) => Term::Atom(st.peers[r.0]),
            Pattern::Const(id) => Term::Atom(*id),
            Pattern::Var(v) => st.vars[v.0]
                .clone()
                .expect("send pattern variables are bound by validation"),
            Pattern::Concat(ps) => Term::concat(ps.iter().map(|q| self.build(q, st))),
            Pattern::Enc(body, key) => Term::enc(
                self.build(body, st),
                self.resolve_key(key, &st.peers)
                    .expect("keys checked at instantiation"),
            ),
        }
    }

    /// Executes the pending send. With `to_intruder` the initiator runs the
    /// session with the intruder's identity.
    pub fn send(&self, id: ProcId, st: &mut ProcState, to_intruder: bool) -> Sent {
        let Some(Action::Send(i)) = self.next_action(id, st) else {
            panic!("process {} has no pending send", id.0);
        };
        let step = &self.spec.steps[i];
        if to_intruder {
            debug_assert!(self.may_choose_intruder(id, st));
            st.peers[step.to.0] = self.intruder.expect("intruder declared");
        }
        let msg = self.build(&step.pattern, st);
        st.pc += 1;
        self.update_status(id, st);
        let info = self.process(id);
        Sent {
            msg,
            step: step.index,
            session: info.session,
            sender: info.agent,
            recipient: st.peers[step.to.0],
        }
    }

    /// Delivers `msg` to a process waiting in a receive. A mismatch leaves
    /// the process permanently stopped.
    pub fn deliver(&self, id: ProcId, st: &mut ProcState, msg: &Term) -> Result<(), FailStop> {
        let Some(i) = self.waiting_step(id, st) else {
            return Err(FailStop);
        };
        match match_receive(self, id, st, &self.spec.steps[i].pattern, msg) {
            Ok(vars) => {
                st.vars = vars;
                st.pc += 1;
                self.update_status(id, st);
                Ok(())
            }
            Err(e) => {
                st.status = ProcStatus::Stopped;
                Err(e)
            }
        }
    }

    fn update_status(&self, id: ProcId, st: &mut ProcState) {
        if st.pc >= self.spec.scripts[self.process(id).role.0].actions.len() {
            st.status = ProcStatus::Done;
        }
    }

    /// Size of the message a process expects, when every leaf has a known size.
    pub fn expected_size(&self, p: &Pattern, st: &ProcState) -> Option<u64> {
        let overhead = self.config.enc_overhead;
        match p {
            Pattern::Role(r) => Some(self.atoms.size(st.peers[r.0])),
            Pattern::Const(id) => Some(self.atoms.size(*id)),
            Pattern::Var(v) => match &st.vars[v.0] {
                Some(t) => Some(t.size(&self.atoms, overhead)),
                None if self.spec.vars[v.0].typed => Some(self.spec.vars[v.0].size),
                None => None,
            },
            Pattern::Concat(ps) => ps.iter().map(|q| self.expected_size(q, st)).sum(),
            Pattern::Enc(body, _) => self.expected_size(body, st).map(|s| s + overhead),
        }
    }
}

/// Matches an incoming message against a receive pattern for process `id`,
/// returning the extended variable bindings.
pub fn match_receive(
    world: &World,
    id: ProcId,
    st: &ProcState,
    pattern: &Pattern,
    incoming: &Term,
) -> Result<Vec<Option<Term>>, FailStop> {
    let _ = world.process(id);
    let mut vars = st.vars.clone();
    if unify(world, pattern, incoming, &st.peers, &mut vars) {
        Ok(vars)
    } else {
        Err(FailStop)
    }
}

fn unify(
    world: &World,
    p: &Pattern,
    t: &Term,
    peers: &[AtomId],
    vars: &mut Vec<Option<Term>>,
) -> bool {
    match p {
        Pattern::Role(r) => *t == Term::Atom(peers[r.0]),
        Pattern::Const(id) => *t == Term::Atom(*id),
        Pattern::Var(v) => {
            if let Some(val) = &vars[v.0] {
                return val == t;
            }
            let decl = &world.spec.vars[v.0];
            let ok = if decl.typed {
                matches!(t, Term::Atom(id)
                    if world.atoms.kind(*id) == AtomKind::Nonce && world.atoms.size(*id) == decl.size)
            } else {
                *t != Term::Null
            };
            if ok {
                vars[v.0] = Some(t.clone());
            }
            ok
        }
        Pattern::Concat(ps) => {
            let ts = match t {
                Term::Concat(ts) => ts.as_slice(),
                _ => return false,
            };
            if ps.len() == ts.len() {
                return ps
                    .iter()
                    .zip(ts)
                    .all(|(q, u)| unify(world, q, u, peers, vars));
            }
            // An untyped trailing variable absorbs the rest of the list.
            let Some(Pattern::Var(last)) = ps.last() else {
                return false;
            };
            let absorbs = !world.spec.vars[last.0].typed && vars[last.0].is_none();
            if !absorbs || ts.len() < ps.len() {
                return false;
            }
            let head = ps.len() - 1;
            if !ps[..head]
                .iter()
                .zip(ts)
                .all(|(q, u)| unify(world, q, u, peers, vars))
            {
                return false;
            }
            vars[last.0] = Some(Term::concat(ts[head..].iter().cloned()));
            true
        }
        Pattern::Enc(body, key) => match t {
            Term::Enc(inner, k) => {
                world.resolve_key(key, peers) == Some(*k) && unify(world, body, inner, peers, vars)
            }
            _ => false,
        },
    }
}
