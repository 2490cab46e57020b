//! Protocol specifications: roles, narration steps, message patterns and goals.
//!
//! Specs are written in a line-oriented Alice–Bob narration language (see
//! [`parse_spec`] and `docs/protocol-language.md`), and instantiated into
//! concrete agent processes by [`session::instantiate`].

mod parse;
pub mod session;

use std::fmt;

use crate::terms::{AtomId, AtomKind, AtomTable};

pub use parse::{parse_spec, ParseError, ParseErrorKind};
pub use session::{
    instantiate, match_receive, ConfigError, FailStop, ProcId, ProcState, ProcStatus, ProcessInfo,
    SessionConfig, World,
};

pub const DEFAULT_AGENT_SIZE: u64 = 16;
pub const DEFAULT_NONCE_SIZE: u64 = 32;
pub const DEFAULT_DATA_SIZE: u64 = 8;
pub const DEFAULT_KEY_SIZE: u64 = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RoleId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VarId(pub usize);

/// An agent position in a pattern: a role parameter or a fixed agent.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AgentRef {
    Role(RoleId),
    Agent(AtomId),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum KeyRef {
    Public(AgentRef),
    Private(AgentRef),
    Symmetric(AtomId),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Pattern {
    Role(RoleId),
    Const(AtomId),
    Var(VarId),
    Concat(Vec<Pattern>),
    Enc(Box<Pattern>, KeyRef),
}

impl Pattern {
    pub fn vars(&self) -> Vec<VarId> {
        let mut out = Vec::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut Vec<VarId>) {
        match self {
            Pattern::Var(v) => {
                if !out.contains(v) {
                    out.push(*v)
                }
            }
            Pattern::Concat(ps) => ps.iter().for_each(|p| p.collect_vars(out)),
            Pattern::Enc(body, _) => body.collect_vars(out),
            _ => {}
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum VarOrigin {
    /// Generated as a fresh nonce by the owning role at session start.
    Fresh(RoleId),
    /// Only ever bound by a receive.
    Received,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VarDecl {
    pub name: String,
    pub origin: VarOrigin,
    /// Kind-checked variables only accept nonce atoms of matching size.
    pub typed: bool,
    pub size: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Step {
    /// 1-based step number `a`.
    pub index: usize,
    pub from: RoleId,
    pub to: RoleId,
    pub pattern: Pattern,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Action {
    Fresh(VarId),
    /// Index into [`ProtocolSpec::steps`].
    Send(usize),
    Receive(usize),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RoleScript {
    pub name: String,
    pub actions: Vec<Action>,
}

impl RoleScript {
    /// Number of leading fresh actions, executed at instantiation.
    pub fn fresh_prefix(&self) -> usize {
        self.actions
            .iter()
            .take_while(|a| matches!(a, Action::Fresh(_)))
            .count()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Goal {
    /// The value of `var` held by a `role` process must stay underivable by
    /// the intruder while all of that process's peers are honest.
    Secret { var: VarId, role: RoleId },
    /// When a `verifier` process completes believing `peer` is agent X (honest),
    /// X must run a `peer` process with this agent that agrees on `on`.
    Authenticates {
        verifier: RoleId,
        peer: RoleId,
        on: Vec<VarId>,
    },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProtocolSpec {
    pub name: String,
    pub roles: Vec<String>,
    pub atoms: AtomTable,
    pub agents: Vec<AtomId>,
    pub intruder: Option<AtomId>,
    pub vars: Vec<VarDecl>,
    pub steps: Vec<Step>,
    pub scripts: Vec<RoleScript>,
    pub goals: Vec<Goal>,
    /// Default session assignments: one agent per role.
    pub sessions: Vec<Vec<AtomId>>,
}

impl ProtocolSpec {
    /// Number of protocol steps `z`.
    pub fn step_count(&self) -> usize {
        self.steps.len()
    }

    pub fn role_id(&self, name: &str) -> Option<RoleId> {
        self.roles.iter().position(|r| r == name).map(RoleId)
    }

    pub fn var_id(&self, name: &str) -> Option<VarId> {
        self.vars.iter().position(|v| v.name == name).map(VarId)
    }

    pub fn role_name(&self, r: RoleId) -> &str {
        &self.roles[r.0]
    }

    pub fn var_name(&self, v: VarId) -> &str {
        &self.vars[v.0].name
    }

    /// The role that sends the first message.
    pub fn initiator(&self) -> Option<RoleId> {
        self.steps.first().map(|s| s.from)
    }

    /// Whether a process of `role` can open an encryption under `key`.
    pub fn role_can_decrypt(&self, role: RoleId, key: &KeyRef) -> bool {
        match key {
            KeyRef::Public(AgentRef::Role(r)) => *r == role,
            KeyRef::Public(AgentRef::Agent(_)) => false,
            KeyRef::Private(_) => true,
            KeyRef::Symmetric(k) => self
                .atoms
                .get(*k)
                .owners
                .iter()
                .any(|o| o == &self.roles[role.0]),
        }
    }

    pub fn pattern_display<'a>(&'a self, p: &'a Pattern) -> PatternDisplay<'a> {
        PatternDisplay { spec: self, p }
    }

    fn agent_ref_name(&self, a: &AgentRef) -> &str {
        match a {
            AgentRef::Role(r) => self.role_name(*r),
            AgentRef::Agent(id) => self.atoms.name(*id),
        }
    }
}

pub struct PatternDisplay<'a> {
    spec: &'a ProtocolSpec,
    p: &'a Pattern,
}

impl fmt::Display for PatternDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let spec = self.spec;
        match self.p {
            Pattern::Role(r) => f.write_str(spec.role_name(*r)),
            Pattern::Const(id) => f.write_str(spec.atoms.name(*id)),
            Pattern::Var(v) => f.write_str(spec.var_name(*v)),
            Pattern::Concat(ps) => {
                for (i, p) in ps.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{}", spec.pattern_display(p))?;
                }
                Ok(())
            }
            Pattern::Enc(body, key) => {
                write!(f, "{{{}}}", spec.pattern_display(body))?;
                match key {
                    KeyRef::Public(a) => write!(f, "pk({})", spec.agent_ref_name(a)),
                    KeyRef::Private(a) => write!(f, "sk({})", spec.agent_ref_name(a)),
                    KeyRef::Symmetric(k) => f.write_str(spec.atoms.name(*k)),
                }
            }
        }
    }
}

/// Pretty-prints the spec back into the narration language.
impl fmt::Display for ProtocolSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "protocol {}", self.name)?;
        writeln!(f, "declarations")?;
        for id in self.atoms.ids() {
            let info = self.atoms.get(id);
            match info.kind {
                AtomKind::Agent if Some(id) == self.intruder => {
                    writeln!(f, "  intruder {} size {}", info.name, info.size)?
                }
                AtomKind::Agent => writeln!(f, "  agent {} size {}", info.name, info.size)?,
                AtomKind::Data => writeln!(f, "  data {} size {}", info.name, info.size)?,
                AtomKind::PublicKey => writeln!(
                    f,
                    "  keypair for {} size {}",
                    info.owners.join(", "),
                    info.size
                )?,
                AtomKind::PrivateKey => {}
                AtomKind::SymmetricKey => writeln!(
                    f,
                    "  symkey {} size {} for {}",
                    info.name,
                    info.size,
                    info.owners.join(", ")
                )?,
                AtomKind::Nonce => writeln!(f, "  # nonce {}", info.name)?,
            }
        }
        for v in &self.vars {
            match v.origin {
                VarOrigin::Fresh(r) => write!(
                    f,
                    "  fresh {}: {} size {}",
                    self.role_name(r),
                    v.name,
                    v.size
                )?,
                VarOrigin::Received => write!(f, "  var {} size {}", v.name, v.size)?,
            }
            match (v.origin, v.typed) {
                (VarOrigin::Fresh(_), false) => writeln!(f, " untyped")?,
                (VarOrigin::Received, true) => writeln!(f, " typed")?,
                _ => writeln!(f)?,
            }
        }
        writeln!(f, "end")?;
        writeln!(f, "narration")?;
        for s in &self.steps {
            writeln!(
                f,
                "  {}. {} -> {} : {}",
                s.index,
                self.role_name(s.from),
                self.role_name(s.to),
                self.pattern_display(&s.pattern)
            )?;
        }
        writeln!(f, "end")?;
        if !self.goals.is_empty() {
            writeln!(f, "goals")?;
            for g in &self.goals {
                match g {
                    Goal::Secret { var, role } => writeln!(
                        f,
                        "  secret {} of {}",
                        self.var_name(*var),
                        self.role_name(*role)
                    )?,
                    Goal::Authenticates { verifier, peer, on } => {
                        write!(
                            f,
                            "  {} authenticates {}",
                            self.role_name(*verifier),
                            self.role_name(*peer)
                        )?;
                        if !on.is_empty() {
                            let names: Vec<_> = on.iter().map(|v| self.var_name(*v)).collect();
                            write!(f, " on {}", names.join(", "))?;
                        }
                        writeln!(f)?;
                    }
                }
            }
            writeln!(f, "end")?;
        }
        if !self.sessions.is_empty() {
            writeln!(f, "sessions")?;
            for s in &self.sessions {
                let items: Vec<_> = s
                    .iter()
                    .enumerate()
                    .map(|(r, a)| format!("{} = {}", self.roles[r], self.atoms.name(*a)))
                    .collect();
                writeln!(f, "  {}", items.join(", "))?;
            }
            writeln!(f, "end")?;
        }
        Ok(())
    }
}
