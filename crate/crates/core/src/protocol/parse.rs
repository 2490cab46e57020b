//! Parser for the narration language.

use std::collections::{HashMap, HashSet};

use thiserror::Error;

use super::{
    Action, AgentRef, Goal, KeyRef, Pattern, ProtocolSpec, RoleId, RoleScript, Step, VarDecl,
    VarId, VarOrigin, DEFAULT_AGENT_SIZE, DEFAULT_DATA_SIZE, DEFAULT_KEY_SIZE, DEFAULT_NONCE_SIZE,
};
use crate::terms::{AtomError, AtomId, AtomKind, AtomTable};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{line}:{col}: {kind}")]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub kind: ParseErrorKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseErrorKind {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("empty specification: no narration steps")]
    Empty,
    #[error("variable `{var}` is used by role `{role}` before it is bound")]
    UnboundVariable { var: String, role: String },
    #[error("role `{role}` cannot bind `{var}` inside an encryption it cannot open")]
    UnreadableBinding { var: String, role: String },
    #[error("key `{0}` has no declared owner")]
    KeyWithoutOwner(String),
    #[error("duplicate declaration of `{0}`")]
    Duplicate(String),
    #[error("unknown identifier `{0}`")]
    Unknown(String),
    #[error("steps must be numbered 1, 2, ...; found {found}, expected {expected}")]
    StepNumber { found: u64, expected: usize },
}

type Pos = (usize, usize);
/// A `sessions` line: its position and the `role = agent` pairs.
type RawSession = (Pos, Vec<((String, Pos), (String, Pos))>);

fn err<T>(pos: Pos, kind: ParseErrorKind) -> Result<T, ParseError> {
    Err(ParseError {
        line: pos.0,
        col: pos.1,
        kind,
    })
}

fn syntax<T>(pos: Pos, msg: impl Into<String>) -> Result<T, ParseError> {
    err(pos, ParseErrorKind::Syntax(msg.into()))
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Num(u64),
    Punct(char),
    Arrow,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    pos: Pos,
}

fn lex_line(line_no: usize, text: &str) -> Result<Vec<Token>, ParseError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let pos = (line_no, i + 1);
        if c == '#' {
            break;
        } else if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len()
                && (chars[i].is_ascii_alphanumeric() || chars[i] == '_' || chars[i] == '\'')
            {
                i += 1;
            }
            out.push(Token {
                tok: Tok::Ident(chars[start..i].iter().collect()),
                pos,
            });
        } else if c.is_ascii_digit() {
            let start = i;
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            let s: String = chars[start..i].iter().collect();
            let n = s.parse().map_err(|_| ParseError {
                line: pos.0,
                col: pos.1,
                kind: ParseErrorKind::Syntax(format!("number `{s}` out of range")),
            })?;
            out.push(Token {
                tok: Tok::Num(n),
                pos,
            });
        } else if c == '-' && chars.get(i + 1) == Some(&'>') {
            out.push(Token {
                tok: Tok::Arrow,
                pos,
            });
            i += 2;
        } else if "{}(),:.=;".contains(c) {
            out.push(Token {
                tok: Tok::Punct(c),
                pos,
            });
            i += 1;
        } else {
            return syntax(pos, format!("unexpected character `{c}`"));
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    toks: &'a [Token],
    i: usize,
    /// Position just past the end of the line, for error reporting.
    eol: Pos,
}

impl<'a> Cursor<'a> {
    fn new(toks: &'a [Token], eol: Pos) -> Self {
        Cursor { toks, i: 0, eol }
    }

    fn peek(&self) -> Option<&'a Token> {
        self.toks.get(self.i)
    }

    fn pos(&self) -> Pos {
        self.peek().map(|t| t.pos).unwrap_or(self.eol)
    }

    fn at_end(&self) -> bool {
        self.i >= self.toks.len()
    }

    fn next(&mut self) -> Option<&'a Token> {
        let t = self.toks.get(self.i);
        self.i += 1;
        t
    }

    fn is_punct(&self, c: char) -> bool {
        matches!(self.peek(), Some(Token { tok: Tok::Punct(p), .. }) if *p == c)
    }

    fn is_keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Some(Token { tok: Tok::Ident(s), .. }) if s == kw)
    }

    fn punct(&mut self, c: char) -> Result<(), ParseError> {
        if self.is_punct(c) {
            self.i += 1;
            Ok(())
        } else {
            syntax(self.pos(), format!("expected `{c}`"))
        }
    }

    fn ident(&mut self) -> Result<(String, Pos), ParseError> {
        match self.peek() {
            Some(Token {
                tok: Tok::Ident(s),
                pos,
            }) => {
                self.i += 1;
                Ok((s.clone(), *pos))
            }
            _ => syntax(self.pos(), "expected identifier"),
        }
    }

    fn keyword(&mut self, kw: &str) -> Result<(), ParseError> {
        if self.is_keyword(kw) {
            self.i += 1;
            Ok(())
        } else {
            syntax(self.pos(), format!("expected `{kw}`"))
        }
    }

    fn num(&mut self) -> Result<(u64, Pos), ParseError> {
        match self.peek() {
            Some(Token {
                tok: Tok::Num(n),
                pos,
            }) => {
                self.i += 1;
                Ok((*n, *pos))
            }
            _ => syntax(self.pos(), "expected number"),
        }
    }

    fn ident_list(&mut self) -> Result<Vec<(String, Pos)>, ParseError> {
        let mut out = vec![self.ident()?];
        while self.is_punct(',') {
            self.i += 1;
            out.push(self.ident()?);
        }
        Ok(out)
    }

    fn optional_size(&mut self) -> Result<Option<u64>, ParseError> {
        if self.is_keyword("size") {
            self.i += 1;
            let (n, pos) = self.num()?;
            if n == 0 {
                return syntax(pos, "size must be positive");
            }
            Ok(Some(n))
        } else {
            Ok(None)
        }
    }

    fn finish(&self) -> Result<(), ParseError> {
        if self.at_end() {
            Ok(())
        } else {
            syntax(self.pos(), "unexpected trailing input")
        }
    }
}

#[derive(Debug)]
enum RawDecl {
    Agents(Vec<(String, Pos)>, Option<u64>),
    Intruder((String, Pos), Option<u64>),
    Data(Vec<(String, Pos)>, Option<u64>),
    KeyPairs(Vec<(String, Pos)>, Option<u64>),
    SymKey((String, Pos), Option<u64>, Vec<(String, Pos)>),
    Fresh((String, Pos), Vec<(String, Pos)>, Option<u64>, bool),
    Vars(Vec<(String, Pos)>, Option<u64>, bool),
}

#[derive(Debug)]
enum RawKey {
    Public(String, Pos),
    Private(String, Pos),
    Sym(String, Pos),
}

#[derive(Debug)]
enum RawPattern {
    Ident(String, Pos),
    Concat(Vec<RawPattern>),
    Enc(Box<RawPattern>, RawKey),
}

#[derive(Debug)]
struct RawStep {
    num: u64,
    pos: Pos,
    from: (String, Pos),
    to: (String, Pos),
    pattern: RawPattern,
}

#[derive(Debug)]
enum RawGoal {
    Secret((String, Pos), (String, Pos)),
    Auth((String, Pos), (String, Pos), Vec<(String, Pos)>),
}

#[derive(Default)]
struct RawSpec {
    name: Option<String>,
    decls: Vec<RawDecl>,
    steps: Vec<RawStep>,
    goals: Vec<RawGoal>,
    sessions: Vec<RawSession>,
}

#[derive(Clone, Copy, PartialEq)]
enum Block {
    Top,
    Declarations,
    Narration,
    Goals,
    Sessions,
}

fn block_keyword(s: &str) -> Option<Block> {
    match s {
        "declarations" => Some(Block::Declarations),
        "narration" => Some(Block::Narration),
        "goals" => Some(Block::Goals),
        "sessions" => Some(Block::Sessions),
        _ => None,
    }
}

fn parse_pattern(c: &mut Cursor<'_>) -> Result<RawPattern, ParseError> {
    let mut items = vec![parse_item(c)?];
    while c.is_punct(',') {
        c.next();
        items.push(parse_item(c)?);
    }
    Ok(if items.len() == 1 {
        items.pop().unwrap()
    } else {
        RawPattern::Concat(items)
    })
}

fn parse_item(c: &mut Cursor<'_>) -> Result<RawPattern, ParseError> {
    if c.is_punct('{') {
        c.next();
        let body = parse_pattern(c)?;
        c.punct('}')?;
        let key = parse_key(c)?;
        Ok(RawPattern::Enc(Box::new(body), key))
    } else if c.is_punct('(') {
        c.next();
        let p = parse_pattern(c)?;
        c.punct(')')?;
        Ok(p)
    } else {
        let (name, pos) = c.ident()?;
        if (name == "pk" || name == "sk") && c.is_punct('(') {
            return syntax(pos, "keys cannot be sent as message content");
        }
        Ok(RawPattern::Ident(name, pos))
    }
}

fn parse_key(c: &mut Cursor<'_>) -> Result<RawKey, ParseError> {
    let (name, pos) = c.ident()?;
    if (name == "pk" || name == "sk") && c.is_punct('(') {
        c.next();
        let (owner, opos) = c.ident()?;
        c.punct(')')?;
        Ok(if name == "pk" {
            RawKey::Public(owner, opos)
        } else {
            RawKey::Private(owner, opos)
        })
    } else {
        Ok(RawKey::Sym(name, pos))
    }
}

fn parse_step(c: &mut Cursor<'_>) -> Result<RawStep, ParseError> {
    let (num, pos) = c.num()?;
    c.punct('.')?;
    let from = c.ident()?;
    if !matches!(
        c.peek(),
        Some(Token {
            tok: Tok::Arrow,
            ..
        })
    ) {
        return syntax(c.pos(), "expected `->`");
    }
    c.next();
    let to = c.ident()?;
    c.punct(':')?;
    let pattern = parse_pattern(c)?;
    Ok(RawStep {
        num,
        pos,
        from,
        to,
        pattern,
    })
}

fn parse_decl(c: &mut Cursor<'_>) -> Result<RawDecl, ParseError> {
    let (kw, pos) = c.ident()?;
    let decl = match kw.as_str() {
        "agent" | "agents" => {
            let names = c.ident_list()?;
            RawDecl::Agents(names, c.optional_size()?)
        }
        "intruder" => {
            let name = c.ident()?;
            RawDecl::Intruder(name, c.optional_size()?)
        }
        "data" => {
            let names = c.ident_list()?;
            RawDecl::Data(names, c.optional_size()?)
        }
        "keypair" | "keypairs" => {
            if !c.is_keyword("for") {
                return err(pos, ParseErrorKind::KeyWithoutOwner("keypair".into()));
            }
            c.next();
            let owners = c.ident_list()?;
            RawDecl::KeyPairs(owners, c.optional_size()?)
        }
        "symkey" => {
            let name = c.ident()?;
            let size = c.optional_size()?;
            if !c.is_keyword("for") {
                return err(name.1, ParseErrorKind::KeyWithoutOwner(name.0));
            }
            c.next();
            let owners = c.ident_list()?;
            RawDecl::SymKey(name, size, owners)
        }
        "fresh" => {
            let role = c.ident()?;
            c.punct(':')?;
            let names = c.ident_list()?;
            let size = c.optional_size()?;
            let untyped = if c.is_keyword("untyped") {
                c.next();
                true
            } else {
                false
            };
            RawDecl::Fresh(role, names, size, !untyped)
        }
        "var" | "vars" => {
            let names = c.ident_list()?;
            let size = c.optional_size()?;
            let typed = if c.is_keyword("typed") {
                c.next();
                true
            } else {
                false
            };
            RawDecl::Vars(names, size, typed)
        }
        other => return syntax(pos, format!("unknown declaration `{other}`")),
    };
    c.finish()?;
    Ok(decl)
}

fn parse_goal(c: &mut Cursor<'_>) -> Result<RawGoal, ParseError> {
    let goal = if c.is_keyword("secret") {
        c.next();
        let var = c.ident()?;
        c.keyword("of")?;
        let role = c.ident()?;
        RawGoal::Secret(var, role)
    } else {
        let verifier = c.ident()?;
        c.keyword("authenticates")?;
        let peer = c.ident()?;
        let on = if c.is_keyword("on") {
            c.next();
            c.ident_list()?
        } else {
            Vec::new()
        };
        RawGoal::Auth(verifier, peer, on)
    };
    c.finish()?;
    Ok(goal)
}

fn parse_raw(text: &str) -> Result<RawSpec, ParseError> {
    let mut raw = RawSpec::default();
    let mut block = Block::Top;
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let toks = lex_line(line_no, line)?;
        if toks.is_empty() {
            continue;
        }
        let eol = (line_no, line.chars().count() + 1);
        let mut c = Cursor::new(&toks, eol);
        if let Some(Token {
            tok: Tok::Ident(kw),
            pos,
        }) = c.peek()
        {
            if toks.len() == 1 {
                if kw == "end" {
                    if block == Block::Top {
                        return syntax(*pos, "`end` outside of a block");
                    }
                    block = Block::Top;
                    continue;
                }
                if let Some(b) = block_keyword(kw) {
                    block = b;
                    continue;
                }
            }
            if kw == "protocol" && block == Block::Top {
                c.next();
                if raw.name.is_some() {
                    return err(*pos, ParseErrorKind::Duplicate("protocol".into()));
                }
                let (name, _) = c.ident()?;
                c.finish()?;
                raw.name = Some(name);
                continue;
            }
        }
        match block {
            Block::Top => {
                // Bare narration lines are accepted outside any block.
                if matches!(toks[0].tok, Tok::Num(_)) {
                    parse_steps_line(&mut c, &mut raw)?;
                } else {
                    return syntax(toks[0].pos, "expected `protocol` or a block keyword");
                }
            }
            Block::Declarations => raw.decls.push(parse_decl(&mut c)?),
            Block::Narration => parse_steps_line(&mut c, &mut raw)?,
            Block::Goals => raw.goals.push(parse_goal(&mut c)?),
            Block::Sessions => {
                let pos = c.pos();
                let mut items = Vec::new();
                loop {
                    let role = c.ident()?;
                    c.punct('=')?;
                    let agent = c.ident()?;
                    items.push((role, agent));
                    if c.is_punct(',') {
                        c.next();
                    } else {
                        break;
                    }
                }
                c.finish()?;
                raw.sessions.push((pos, items));
            }
        }
    }
    Ok(raw)
}

fn parse_steps_line(c: &mut Cursor<'_>, raw: &mut RawSpec) -> Result<(), ParseError> {
    loop {
        raw.steps.push(parse_step(c)?);
        if c.is_punct(';') {
            c.next();
            if c.at_end() {
                return Ok(());
            }
        } else {
            return c.finish();
        }
    }
}

/// Parses and validates a protocol specification.
pub fn parse_spec(text: &str) -> Result<ProtocolSpec, ParseError> {
    let raw = parse_raw(text)?;
    Resolver::default().resolve(raw)
}

#[derive(Default)]
struct Resolver {
    atoms: AtomTable,
    agents: Vec<AtomId>,
    intruder: Option<AtomId>,
    roles: Vec<String>,
    vars: Vec<VarDecl>,
    var_index: HashMap<String, VarId>,
}

fn atom_err(pos: Pos, e: AtomError) -> ParseError {
    let kind = match e {
        AtomError::Duplicate(n) => ParseErrorKind::Duplicate(n),
        AtomError::ZeroSize(n) => ParseErrorKind::Syntax(format!("`{n}` must have positive size")),
    };
    ParseError {
        line: pos.0,
        col: pos.1,
        kind,
    }
}

impl Resolver {
    fn resolve(mut self, raw: RawSpec) -> Result<ProtocolSpec, ParseError> {
        if raw.steps.is_empty() {
            return err((1, 1), ParseErrorKind::Empty);
        }

        // Roles in order of first appearance in the narration.
        for s in &raw.steps {
            for (name, _) in [&s.from, &s.to] {
                if !self.roles.contains(name) {
                    self.roles.push(name.clone());
                }
            }
        }

        let mut fresh_decls = Vec::new();
        for d in &raw.decls {
            match d {
                RawDecl::Agents(names, size) => {
                    for (n, pos) in names {
                        let id = self
                            .atoms
                            .insert(n, AtomKind::Agent, size.unwrap_or(DEFAULT_AGENT_SIZE))
                            .map_err(|e| atom_err(*pos, e))?;
                        self.agents.push(id);
                    }
                }
                RawDecl::Intruder((n, pos), size) => {
                    if self.intruder.is_some() {
                        return err(*pos, ParseErrorKind::Duplicate("intruder".into()));
                    }
                    let id = self
                        .atoms
                        .insert(n, AtomKind::Agent, size.unwrap_or(DEFAULT_AGENT_SIZE))
                        .map_err(|e| atom_err(*pos, e))?;
                    self.intruder = Some(id);
                }
                RawDecl::Data(names, size) => {
                    for (n, pos) in names {
                        self.atoms
                            .insert(n, AtomKind::Data, size.unwrap_or(DEFAULT_DATA_SIZE))
                            .map_err(|e| atom_err(*pos, e))?;
                    }
                }
                RawDecl::KeyPairs(owners, size) => {
                    for (n, pos) in owners {
                        match self.atoms.lookup(n) {
                            Some(id) if self.atoms.kind(id) == AtomKind::Agent => {}
                            _ => return err(*pos, ParseErrorKind::Unknown(n.clone())),
                        }
                        self.atoms
                            .insert_key_pair(n, size.unwrap_or(DEFAULT_KEY_SIZE))
                            .map_err(|e| atom_err(*pos, e))?;
                    }
                }
                RawDecl::SymKey((n, pos), size, owners) => {
                    let mut names = Vec::new();
                    for (o, opos) in owners {
                        let known = self.roles.contains(o)
                            || self
                                .atoms
                                .lookup(o)
                                .is_some_and(|id| self.atoms.kind(id) == AtomKind::Agent);
                        if !known {
                            return err(*opos, ParseErrorKind::Unknown(o.clone()));
                        }
                        names.push(o.clone());
                    }
                    self.atoms
                        .insert_symmetric_key(n, size.unwrap_or(DEFAULT_KEY_SIZE), &names)
                        .map_err(|e| atom_err(*pos, e))?;
                }
                RawDecl::Fresh(role, names, size, typed) => fresh_decls.push((
                    role.clone(),
                    names.clone(),
                    size.unwrap_or(DEFAULT_NONCE_SIZE),
                    *typed,
                )),
                RawDecl::Vars(names, size, typed) => {
                    for (n, pos) in names {
                        self.declare_var(
                            n,
                            *pos,
                            VarOrigin::Received,
                            *typed,
                            size.unwrap_or(DEFAULT_NONCE_SIZE),
                        )?;
                    }
                }
            }
        }
        for ((role, rpos), names, size, typed) in fresh_decls {
            let Some(r) = self.roles.iter().position(|x| *x == role) else {
                return err(rpos, ParseErrorKind::Unknown(role));
            };
            for (n, pos) in names {
                self.declare_var(&n, pos, VarOrigin::Fresh(RoleId(r)), typed, size)?;
            }
        }

        let mut steps = Vec::new();
        for (i, s) in raw.steps.iter().enumerate() {
            if s.num != (i + 1) as u64 {
                return err(
                    s.pos,
                    ParseErrorKind::StepNumber {
                        found: s.num,
                        expected: i + 1,
                    },
                );
            }
            let from = RoleId(self.roles.iter().position(|r| *r == s.from.0).unwrap());
            let to = RoleId(self.roles.iter().position(|r| *r == s.to.0).unwrap());
            if from == to {
                return syntax(s.to.1, "a role cannot send to itself");
            }
            let pattern = self.resolve_pattern(&s.pattern, from)?;
            let mut positions = HashMap::new();
            raw_var_positions(&s.pattern, &mut positions);
            steps.push((
                Step {
                    index: i + 1,
                    from,
                    to,
                    pattern,
                },
                s.pos,
                positions,
            ));
        }

        let mut spec = ProtocolSpec {
            name: raw.name.unwrap_or_else(|| "unnamed".to_string()),
            roles: self.roles,
            atoms: self.atoms,
            agents: self.agents,
            intruder: self.intruder,
            vars: self.vars,
            steps: Vec::new(),
            scripts: Vec::new(),
            goals: Vec::new(),
            sessions: Vec::new(),
        };
        spec.scripts = build_scripts(&spec, &steps)?;
        spec.steps = steps.into_iter().map(|(s, ..)| s).collect();
        spec.goals = resolve_goals(&spec, &raw.goals)?;
        spec.sessions = resolve_sessions(&spec, &raw.sessions)?;
        Ok(spec)
    }

    fn declare_var(
        &mut self,
        name: &str,
        pos: Pos,
        origin: VarOrigin,
        typed: bool,
        size: u64,
    ) -> Result<VarId, ParseError> {
        if self.var_index.contains_key(name)
            || self.roles.iter().any(|r| r == name)
            || self.atoms.lookup(name).is_some()
        {
            return err(pos, ParseErrorKind::Duplicate(name.to_string()));
        }
        let id = VarId(self.vars.len());
        self.vars.push(VarDecl {
            name: name.to_string(),
            origin,
            typed,
            size,
        });
        self.var_index.insert(name.to_string(), id);
        Ok(id)
    }

    fn agent_ref(&self, name: &str, pos: Pos) -> Result<AgentRef, ParseError> {
        if let Some(r) = self.roles.iter().position(|x| x == name) {
            return Ok(AgentRef::Role(RoleId(r)));
        }
        match self.atoms.lookup(name) {
            Some(id) if self.atoms.kind(id) == AtomKind::Agent => Ok(AgentRef::Agent(id)),
            _ => err(pos, ParseErrorKind::Unknown(name.to_string())),
        }
    }

    fn resolve_key(&self, key: &RawKey) -> Result<KeyRef, ParseError> {
        match key {
            RawKey::Public(n, pos) | RawKey::Private(n, pos) => {
                let a = self.agent_ref(n, *pos)?;
                if let AgentRef::Agent(_) = a {
                    if self.atoms.public_key_of(n).is_none() {
                        return err(*pos, ParseErrorKind::KeyWithoutOwner(format!("pk({n})")));
                    }
                }
                Ok(match key {
                    RawKey::Public(..) => KeyRef::Public(a),
                    _ => KeyRef::Private(a),
                })
            }
            RawKey::Sym(n, pos) => match self.atoms.lookup(n) {
                Some(id) if self.atoms.kind(id) == AtomKind::SymmetricKey => {
                    Ok(KeyRef::Symmetric(id))
                }
                _ => err(*pos, ParseErrorKind::Unknown(n.clone())),
            },
        }
    }

    fn resolve_pattern(&mut self, p: &RawPattern, sender: RoleId) -> Result<Pattern, ParseError> {
        Ok(match p {
            RawPattern::Ident(name, pos) => {
                if let Some(r) = self.roles.iter().position(|x| x == name) {
                    Pattern::Role(RoleId(r))
                } else if let Some(v) = self.var_index.get(name) {
                    Pattern::Var(*v)
                } else if let Some(id) = self.atoms.lookup(name) {
                    Pattern::Const(id)
                } else {
                    // Undeclared names are nonces freshly generated by the
                    // first role that sends them.
                    let v = self.declare_var(
                        name,
                        *pos,
                        VarOrigin::Fresh(sender),
                        true,
                        DEFAULT_NONCE_SIZE,
                    )?;
                    Pattern::Var(v)
                }
            }
            RawPattern::Concat(items) => {
                let mut out = Vec::new();
                for it in items {
                    match self.resolve_pattern(it, sender)? {
                        Pattern::Concat(inner) => out.extend(inner),
                        other => out.push(other),
                    }
                }
                Pattern::Concat(out)
            }
            RawPattern::Enc(body, key) => {
                let body = self.resolve_pattern(body, sender)?;
                Pattern::Enc(Box::new(body), self.resolve_key(key)?)
            }
        })
    }
}

fn raw_var_positions(p: &RawPattern, out: &mut HashMap<String, Pos>) {
    match p {
        RawPattern::Ident(n, pos) => {
            out.entry(n.clone()).or_insert(*pos);
        }
        RawPattern::Concat(items) => items.iter().for_each(|i| raw_var_positions(i, out)),
        RawPattern::Enc(b, _) => raw_var_positions(b, out),
    }
}

type StepWithPositions = (Step, Pos, HashMap<String, Pos>);

fn build_scripts(
    spec: &ProtocolSpec,
    steps: &[StepWithPositions],
) -> Result<Vec<RoleScript>, ParseError> {
    let mut scripts = Vec::new();
    for (r, name) in spec.roles.iter().enumerate() {
        let role = RoleId(r);
        let mut actions = Vec::new();
        let mut bound = HashSet::new();
        for (i, v) in spec.vars.iter().enumerate() {
            if v.origin == VarOrigin::Fresh(role) {
                actions.push(Action::Fresh(VarId(i)));
                bound.insert(VarId(i));
            }
        }
        for (s, pos, positions) in steps.iter() {
            let i = s.index - 1;
            if s.from == role {
                for v in s.pattern.vars() {
                    if !bound.contains(&v) {
                        return err(
                            positions.get(spec.var_name(v)).copied().unwrap_or(*pos),
                            ParseErrorKind::UnboundVariable {
                                var: spec.var_name(v).to_string(),
                                role: name.clone(),
                            },
                        );
                    }
                }
                actions.push(Action::Send(i));
            } else if s.to == role {
                if let Some(v) = unreadable_binding(spec, role, &s.pattern, &bound, true) {
                    return err(
                        positions.get(spec.var_name(v)).copied().unwrap_or(*pos),
                        ParseErrorKind::UnreadableBinding {
                            var: spec.var_name(v).to_string(),
                            role: name.clone(),
                        },
                    );
                }
                bound.extend(s.pattern.vars());
                actions.push(Action::Receive(i));
            }
        }
        scripts.push(RoleScript {
            name: name.clone(),
            actions,
        });
    }
    Ok(scripts)
}

fn unreadable_binding(
    spec: &ProtocolSpec,
    role: RoleId,
    p: &Pattern,
    bound: &HashSet<VarId>,
    readable: bool,
) -> Option<VarId> {
    match p {
        Pattern::Var(v) if !readable && !bound.contains(v) => Some(*v),
        Pattern::Concat(ps) => ps
            .iter()
            .find_map(|q| unreadable_binding(spec, role, q, bound, readable)),
        Pattern::Enc(body, key) => unreadable_binding(
            spec,
            role,
            body,
            bound,
            readable && spec.role_can_decrypt(role, key),
        ),
        _ => None,
    }
}

fn lookup_role(spec: &ProtocolSpec, (name, pos): &(String, Pos)) -> Result<RoleId, ParseError> {
    spec.role_id(name).ok_or_else(|| ParseError {
        line: pos.0,
        col: pos.1,
        kind: ParseErrorKind::Unknown(name.clone()),
    })
}

fn lookup_var(spec: &ProtocolSpec, (name, pos): &(String, Pos)) -> Result<VarId, ParseError> {
    spec.var_id(name).ok_or_else(|| ParseError {
        line: pos.0,
        col: pos.1,
        kind: ParseErrorKind::Unknown(name.clone()),
    })
}

fn resolve_goals(spec: &ProtocolSpec, goals: &[RawGoal]) -> Result<Vec<Goal>, ParseError> {
    goals
        .iter()
        .map(|g| match g {
            RawGoal::Secret(var, role) => Ok(Goal::Secret {
                var: lookup_var(spec, var)?,
                role: lookup_role(spec, role)?,
            }),
            RawGoal::Auth(verifier, peer, on) => Ok(Goal::Authenticates {
                verifier: lookup_role(spec, verifier)?,
                peer: lookup_role(spec, peer)?,
                on: on
                    .iter()
                    .map(|v| lookup_var(spec, v))
                    .collect::<Result<_, _>>()?,
            }),
        })
        .collect()
}

fn resolve_sessions(
    spec: &ProtocolSpec,
    sessions: &[RawSession],
) -> Result<Vec<Vec<AtomId>>, ParseError> {
    let mut out = Vec::new();
    for (pos, items) in sessions {
        let mut assign: Vec<Option<AtomId>> = vec![None; spec.roles.len()];
        for (role, (agent, apos)) in items {
            let r = lookup_role(spec, role)?;
            let id = match spec.atoms.lookup(agent) {
                Some(id) if spec.atoms.kind(id) == AtomKind::Agent => id,
                _ => return err(*apos, ParseErrorKind::Unknown(agent.clone())),
            };
            if assign[r.0].replace(id).is_some() {
                return err(role.1, ParseErrorKind::Duplicate(role.0.clone()));
            }
        }
        if let Some(missing) = assign.iter().position(Option::is_none) {
            return syntax(
                *pos,
                format!("role `{}` is not assigned", spec.roles[missing]),
            );
        }
        out.push(assign.into_iter().map(Option::unwrap).collect());
    }
    Ok(out)
}
