//! Message terms: atoms, concatenation and perfect encryption.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Index of an atom inside an [`AtomTable`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AtomId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AtomKind {
    Agent,
    Nonce,
    SymmetricKey,
    PublicKey,
    PrivateKey,
    Data,
}

impl AtomKind {
    pub fn is_key(self) -> bool {
        matches!(
            self,
            AtomKind::SymmetricKey | AtomKind::PublicKey | AtomKind::PrivateKey
        )
    }
}

impl fmt::Display for AtomKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            AtomKind::Agent => "agent",
            AtomKind::Nonce => "nonce",
            AtomKind::SymmetricKey => "symmetric-key",
            AtomKind::PublicKey => "public-key",
            AtomKind::PrivateKey => "private-key",
            AtomKind::Data => "data",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AtomInfo {
    pub name: String,
    pub kind: AtomKind,
    /// Abstract bit-size valuation, always positive.
    pub size: u64,
    /// For key atoms: the handle of the inverse key.
    pub inverse: Option<AtomId>,
    /// For key atoms: the agents (or roles, before instantiation) that hold it.
    pub owners: Vec<String>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AtomError {
    #[error("duplicate atom `{0}`")]
    Duplicate(String),
    #[error("atom `{0}` must have a positive size")]
    ZeroSize(String),
}

/// The universe of atomic messages. Names are unique across the whole table,
/// which in particular makes them unique within each kind.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AtomTable {
    atoms: Vec<AtomInfo>,
    by_name: HashMap<String, AtomId>,
}

impl AtomTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, kind: AtomKind, size: u64) -> Result<AtomId, AtomError> {
        if self.by_name.contains_key(name) {
            return Err(AtomError::Duplicate(name.to_string()));
        }
        if size == 0 {
            return Err(AtomError::ZeroSize(name.to_string()));
        }
        let id = AtomId(self.atoms.len() as u32);
        self.atoms.push(AtomInfo {
            name: name.to_string(),
            kind,
            size,
            inverse: None,
            owners: Vec::new(),
        });
        self.by_name.insert(name.to_string(), id);
        Ok(id)
    }

    /// Declares the key pair `pk(owner)` / `sk(owner)` and returns the public key.
    pub fn insert_key_pair(&mut self, owner: &str, size: u64) -> Result<Key, AtomError> {
        let pk = self.insert(&format!("pk({owner})"), AtomKind::PublicKey, size)?;
        let sk = self.insert(&format!("sk({owner})"), AtomKind::PrivateKey, size)?;
        self.atoms[pk.0 as usize].inverse = Some(sk);
        self.atoms[sk.0 as usize].inverse = Some(pk);
        self.atoms[pk.0 as usize].owners = vec![owner.to_string()];
        self.atoms[sk.0 as usize].owners = vec![owner.to_string()];
        Ok(Key {
            handle: pk,
            inverse: sk,
        })
    }

    /// Declares a symmetric key, which is its own inverse.
    pub fn insert_symmetric_key(
        &mut self,
        name: &str,
        size: u64,
        owners: &[String],
    ) -> Result<Key, AtomError> {
        let id = self.insert(name, AtomKind::SymmetricKey, size)?;
        self.atoms[id.0 as usize].inverse = Some(id);
        self.atoms[id.0 as usize].owners = owners.to_vec();
        Ok(Key::symmetric(id))
    }

    pub fn get(&self, id: AtomId) -> &AtomInfo {
        &self.atoms[id.0 as usize]
    }

    pub fn lookup(&self, name: &str) -> Option<AtomId> {
        self.by_name.get(name).copied()
    }

    pub fn name(&self, id: AtomId) -> &str {
        &self.get(id).name
    }

    pub fn kind(&self, id: AtomId) -> AtomKind {
        self.get(id).kind
    }

    pub fn size(&self, id: AtomId) -> u64 {
        self.get(id).size
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = AtomId> + '_ {
        (0..self.atoms.len() as u32).map(AtomId)
    }

    /// Rebuilds the [`Key`] value for a key atom.
    pub fn key(&self, handle: AtomId) -> Option<Key> {
        let info = self.get(handle);
        if !info.kind.is_key() {
            return None;
        }
        info.inverse.map(|inverse| Key { handle, inverse })
    }

    pub fn public_key_of(&self, agent: &str) -> Option<Key> {
        self.lookup(&format!("pk({agent})"))
            .and_then(|id| self.key(id))
    }

    pub fn private_key_of(&self, agent: &str) -> Option<Key> {
        self.lookup(&format!("sk({agent})"))
            .and_then(|id| self.key(id))
    }
}

/// An encryption key together with the handle of its inverse.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Key {
    pub handle: AtomId,
    pub inverse: AtomId,
}

impl Key {
    pub fn symmetric(handle: AtomId) -> Self {
        Key {
            handle,
            inverse: handle,
        }
    }

    pub fn inverse(self) -> Key {
        Key {
            handle: self.inverse,
            inverse: self.handle,
        }
    }

    pub fn is_symmetric(self) -> bool {
        self.handle == self.inverse
    }
}

/// A message. Values built through [`Term::concat`] and [`Term::enc`] are
/// canonical: concatenations are flat and have at least two parts.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Term {
    /// Marker for a message that was never sent.
    Null,
    Atom(AtomId),
    Concat(Vec<Term>),
    Enc(Box<Term>, Key),
}

/// Readability of a message: 0 plain, 1 partially encrypted, 2 fully encrypted.
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(into = "u8", try_from = "u8")]
pub enum EncryptionClass {
    #[default]
    Plain = 0,
    Partial = 1,
    Full = 2,
}

impl From<EncryptionClass> for u8 {
    fn from(c: EncryptionClass) -> u8 {
        c as u8
    }
}

impl TryFrom<u8> for EncryptionClass {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, String> {
        match v {
            0 => Ok(EncryptionClass::Plain),
            1 => Ok(EncryptionClass::Partial),
            2 => Ok(EncryptionClass::Full),
            _ => Err(format!("invalid encryption class {v}")),
        }
    }
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum CryptoError {
    #[error("term is not a ciphertext")]
    NotCiphertext,
    #[error("key does not open this ciphertext")]
    WrongKey,
}

impl Term {
    pub fn atom(id: AtomId) -> Term {
        Term::Atom(id)
    }

    /// Builds a canonical concatenation: nested concatenations are spliced
    /// in, `Null` parts are dropped, and a single part collapses to itself.
    pub fn concat<I: IntoIterator<Item = Term>>(parts: I) -> Term {
        let mut flat = Vec::new();
        for p in parts {
            match p {
                Term::Concat(inner) => flat.extend(inner),
                Term::Null => {}
                other => flat.push(other),
            }
        }
        match flat.len() {
            0 => Term::Null,
            1 => flat.pop().unwrap(),
            _ => Term::Concat(flat),
        }
    }

    pub fn enc(body: Term, key: Key) -> Term {
        Term::Enc(Box::new(body), key)
    }

    /// Normalizes an arbitrarily built term into canonical form.
    pub fn canonical(&self) -> Term {
        match self {
            Term::Null | Term::Atom(_) => self.clone(),
            Term::Concat(parts) => Term::concat(parts.iter().map(Term::canonical)),
            Term::Enc(body, k) => Term::enc(body.canonical(), *k),
        }
    }

    pub fn is_canonical(&self) -> bool {
        match self {
            Term::Null | Term::Atom(_) => true,
            Term::Concat(parts) => {
                parts.len() >= 2
                    && parts
                        .iter()
                        .all(|p| !matches!(p, Term::Concat(_) | Term::Null) && p.is_canonical())
            }
            Term::Enc(body, _) => body.is_canonical(),
        }
    }

    /// Top-level parts: the concatenated items, or the term itself.
    pub fn parts(&self) -> &[Term] {
        match self {
            Term::Concat(parts) => parts,
            Term::Null => &[],
            other => std::slice::from_ref(other),
        }
    }

    pub fn contains_enc(&self) -> bool {
        match self {
            Term::Null | Term::Atom(_) => false,
            Term::Concat(parts) => parts.iter().any(Term::contains_enc),
            Term::Enc(..) => true,
        }
    }

    pub fn encryption_class(&self) -> EncryptionClass {
        match self {
            Term::Enc(..) => EncryptionClass::Full,
            t if t.contains_enc() => EncryptionClass::Partial,
            _ => EncryptionClass::Plain,
        }
    }

    /// Additive size valuation; every encryption layer adds `enc_overhead`.
    pub fn size(&self, atoms: &AtomTable, enc_overhead: u64) -> u64 {
        match self {
            Term::Null => 0,
            Term::Atom(id) => atoms.size(*id),
            Term::Concat(parts) => parts.iter().map(|p| p.size(atoms, enc_overhead)).sum(),
            Term::Enc(body, _) => body.size(atoms, enc_overhead) + enc_overhead,
        }
    }

    /// True when `needle` is `self` or any transitive subterm of it.
    /// Key handles are not subterms.
    pub fn has_subterm(&self, needle: &Term) -> bool {
        if self == needle {
            return true;
        }
        match self {
            Term::Null | Term::Atom(_) => false,
            Term::Concat(parts) => parts.iter().any(|p| p.has_subterm(needle)),
            Term::Enc(body, _) => body.has_subterm(needle),
        }
    }

    /// Every subterm, including `self`, in pre-order.
    pub fn subterms(&self) -> Vec<&Term> {
        let mut out = Vec::new();
        let mut stack = vec![self];
        while let Some(t) = stack.pop() {
            out.push(t);
            match t {
                Term::Concat(parts) => stack.extend(parts.iter().rev()),
                Term::Enc(body, _) => stack.push(body),
                _ => {}
            }
        }
        out
    }

    pub fn atoms(&self) -> Vec<AtomId> {
        self.subterms()
            .into_iter()
            .filter_map(|t| match t {
                Term::Atom(id) => Some(*id),
                _ => None,
            })
            .collect()
    }

    pub fn depth(&self) -> usize {
        match self {
            Term::Null | Term::Atom(_) => 0,
            Term::Concat(parts) => 1 + parts.iter().map(Term::depth).max().unwrap_or(0),
            Term::Enc(body, _) => 1 + body.depth(),
        }
    }

    pub fn display<'a>(&'a self, atoms: &'a AtomTable) -> TermDisplay<'a> {
        TermDisplay { term: self, atoms }
    }
}

pub fn encryption_class(t: &Term) -> EncryptionClass {
    t.encryption_class()
}

pub fn size_of(t: &Term, atoms: &AtomTable, enc_overhead: u64) -> u64 {
    t.size(atoms, enc_overhead)
}

pub fn subterm_exists(needle: &Term, haystack: &Term) -> bool {
    haystack.has_subterm(needle)
}

pub fn encrypt(body: Term, key: Key) -> Term {
    Term::enc(body, key)
}

/// Perfect decryption: succeeds only with exactly the inverse key.
pub fn decrypt(t: &Term, key: Key) -> Result<&Term, CryptoError> {
    match t {
        Term::Enc(body, k) if k.inverse == key.handle => Ok(body),
        Term::Enc(..) => Err(CryptoError::WrongKey),
        _ => Err(CryptoError::NotCiphertext),
    }
}

pub struct TermDisplay<'a> {
    term: &'a Term,
    atoms: &'a AtomTable,
}

impl fmt::Display for TermDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.term {
            Term::Null => f.write_str("null"),
            Term::Atom(id) => f.write_str(self.atoms.name(*id)),
            Term::Concat(parts) => {
                for (i, p) in parts.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{}", p.display(self.atoms))?;
                }
                Ok(())
            }
            Term::Enc(body, k) => write!(
                f,
                "{{{}}}{}",
                body.display(self.atoms),
                self.atoms.name(k.handle)
            ),
        }
    }
}
