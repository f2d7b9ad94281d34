//! Sorted message algebra with optional randomness labels.
//!
//! Labeled and unlabeled messages share one representation: every ciphertext
//! and signature node carries an `Option<Label>`. A labeled message has a
//! label on every such node, an unlabeled one has none. [`Term::erase`] maps
//! the former onto the latter.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Identifier of an agent constant (`a1`, `b`, ...).
pub type Name = Arc<str>;

/// Whether ciphertexts and signatures carry labels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Labeled,
    Unlabeled,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mode::Labeled => f.write_str("labeled"),
            Mode::Unlabeled => f.write_str("unlabeled"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sort {
    AgentId,
    SigKey,
    VerKey,
    EncKey,
    DecKey,
    Nonce,
    Label,
    Ciphertext,
    Signature,
    Pair,
    /// Supersort of everything except `SigKey`, `DecKey` and `Label`.
    Top,
}

impl Sort {
    /// Whether a term of this sort may appear inside a pair, a ciphertext or a
    /// signature.
    pub fn is_message(self) -> bool {
        !matches!(self, Sort::SigKey | Sort::DecKey | Sort::Label)
    }

    pub fn is_subsort_of(self, other: Sort) -> bool {
        self == other || (other == Sort::Top && self.is_message())
    }
}

impl fmt::Display for Sort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Sort::AgentId => "agent-id",
            Sort::SigKey => "sig-key",
            Sort::VerKey => "ver-key",
            Sort::EncKey => "enc-key",
            Sort::DecKey => "dec-key",
            Sort::Nonce => "nonce",
            Sort::Label => "label",
            Sort::Ciphertext => "ciphertext",
            Sort::Signature => "signature",
            Sort::Pair => "pair",
            Sort::Top => "term",
        };
        f.write_str(s)
    }
}

/// Randomness annotation on a ciphertext or signature.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    /// `ag(i)`: randomness of an honest agent.
    Agent(u32),
    /// `adv(i)`: randomness of the adversary.
    Adversary(u32),
    /// Label variable, bound when a receive pattern is matched.
    Var(Name),
}

impl Label {
    pub fn is_ground(&self) -> bool {
        !matches!(self, Label::Var(_))
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Agent(i) => write!(f, "ag({i})"),
            Label::Adversary(i) => write!(f, "adv({i})"),
            Label::Var(name) => f.write_str(name),
        }
    }
}

/// Sorted object variable.
///
/// Agent variables are `A1..Ak`. Nonce, ciphertext and signature variables
/// carry an index and the agent variable that owns them (`X1@A2` is
/// `X^1_{A_2}`); in role `i`, the nonce variables owned by `A_i` are the nonces
/// generated by that role.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Var {
    Agent(u32),
    Nonce { index: u32, owner: u32 },
    Cipher { index: u32, owner: u32 },
    Sig { index: u32, owner: u32 },
}

impl Var {
    pub fn sort(self) -> Sort {
        match self {
            Var::Agent(_) => Sort::AgentId,
            Var::Nonce { .. } => Sort::Nonce,
            Var::Cipher { .. } => Sort::Ciphertext,
            Var::Sig { .. } => Sort::Signature,
        }
    }

    /// Index of the agent variable this variable belongs to.
    pub fn owner(self) -> u32 {
        match self {
            Var::Agent(i) => i,
            Var::Nonce { owner, .. } | Var::Cipher { owner, .. } | Var::Sig { owner, .. } => owner,
        }
    }
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Var::Agent(i) => write!(f, "A{i}"),
            Var::Nonce { index, owner } => write!(f, "X{index}@A{owner}"),
            Var::Cipher { index, owner } => write!(f, "C{index}@A{owner}"),
            Var::Sig { index, owner } => write!(f, "S{index}@A{owner}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum KeyKind {
    Enc,
    Dec,
    Sign,
    Verify,
}

impl KeyKind {
    pub fn sort(self) -> Sort {
        match self {
            KeyKind::Enc => Sort::EncKey,
            KeyKind::Dec => Sort::DecKey,
            KeyKind::Sign => Sort::SigKey,
            KeyKind::Verify => Sort::VerKey,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            KeyKind::Enc => "ek",
            KeyKind::Dec => "dk",
            KeyKind::Sign => "sk",
            KeyKind::Verify => "vk",
        }
    }
}

/// A message term.
///
/// `Enc` stands for `{body}_{ek(recipient)}^label` and `Sig` for
/// `[body]_{sk(signer)}^label`; the key head is implied by the node, so a
/// ciphertext can only ever be built with an encryption key.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Term {
    Var(Var),
    Agent(Name),
    Key(KeyKind, Arc<Term>),
    Nonce {
        owner: Name,
        index: u32,
        session: u32,
    },
    Pair(Arc<Term>, Arc<Term>),
    Enc {
        body: Arc<Term>,
        recipient: Arc<Term>,
        label: Option<Label>,
    },
    Sig {
        body: Arc<Term>,
        signer: Arc<Term>,
        label: Option<Label>,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum TermError {
    #[error("`{term}` has sort {found}, expected {expected}")]
    SortMismatch {
        term: String,
        expected: Sort,
        found: Sort,
    },
    #[error("variable {var} is already bound to `{existing}`, cannot rebind to `{new}`")]
    Conflict {
        var: String,
        existing: String,
        new: String,
    },
    #[error("label variable {0} can only be bound to ag(i) or adv(i)")]
    NonGroundLabel(String),
}

impl Term {
    pub fn agent(name: &str) -> Term {
        Term::Agent(Name::from(name))
    }

    pub fn nonce(owner: &str, index: u32, session: u32) -> Term {
        Term::Nonce {
            owner: Name::from(owner),
            index,
            session,
        }
    }

    pub fn key(kind: KeyKind, agent: Term) -> Term {
        Term::Key(kind, Arc::new(agent))
    }

    pub fn ek(agent: Term) -> Term {
        Term::key(KeyKind::Enc, agent)
    }

    pub fn dk(agent: Term) -> Term {
        Term::key(KeyKind::Dec, agent)
    }

    pub fn sk(agent: Term) -> Term {
        Term::key(KeyKind::Sign, agent)
    }

    pub fn vk(agent: Term) -> Term {
        Term::key(KeyKind::Verify, agent)
    }

    pub fn pair(left: Term, right: Term) -> Term {
        Term::Pair(Arc::new(left), Arc::new(right))
    }

    pub fn enc(body: Term, recipient: Term, label: Option<Label>) -> Term {
        Term::Enc {
            body: Arc::new(body),
            recipient: Arc::new(recipient),
            label,
        }
    }

    pub fn sig(body: Term, signer: Term, label: Option<Label>) -> Term {
        Term::Sig {
            body: Arc::new(body),
            signer: Arc::new(signer),
            label,
        }
    }

    /// Most specific sort. Assumes the term is well-sorted (see
    /// [`Term::check_sorts`]).
    pub fn sort(&self) -> Sort {
        match self {
            Term::Var(v) => v.sort(),
            Term::Agent(_) => Sort::AgentId,
            Term::Key(kind, _) => kind.sort(),
            Term::Nonce { .. } => Sort::Nonce,
            Term::Pair(..) => Sort::Pair,
            Term::Enc { .. } => Sort::Ciphertext,
            Term::Sig { .. } => Sort::Signature,
        }
    }

    /// Checks the sort discipline: key arguments, recipients and signers are
    /// agents, and pair components and payloads are never signing or
    /// decryption keys.
    pub fn check_sorts(&self) -> Result<(), TermError> {
        let expect = |t: &Term, expected: Sort| -> Result<(), TermError> {
            let found = t.sort();
            if found.is_subsort_of(expected) {
                Ok(())
            } else {
                Err(TermError::SortMismatch {
                    term: t.to_string(),
                    expected,
                    found,
                })
            }
        };
        match self {
            Term::Var(_) | Term::Agent(_) | Term::Nonce { .. } => Ok(()),
            Term::Key(_, a) => expect(a, Sort::AgentId),
            Term::Pair(l, r) => {
                expect(l, Sort::Top)?;
                expect(r, Sort::Top)?;
                l.check_sorts()?;
                r.check_sorts()
            }
            Term::Enc {
                body,
                recipient: agent,
                ..
            }
            | Term::Sig {
                body,
                signer: agent,
                ..
            } => {
                expect(agent, Sort::AgentId)?;
                expect(body, Sort::Top)?;
                body.check_sorts()
            }
        }
    }

    pub fn is_ground(&self) -> bool {
        match self {
            Term::Var(_) => false,
            Term::Agent(_) | Term::Nonce { .. } => true,
            Term::Key(_, a) => a.is_ground(),
            Term::Pair(l, r) => l.is_ground() && r.is_ground(),
            Term::Enc {
                body,
                recipient: a,
                label,
            }
            | Term::Sig {
                body,
                signer: a,
                label,
            } => label.as_ref().is_none_or(Label::is_ground) && a.is_ground() && body.is_ground(),
        }
    }

    /// Nesting depth; atoms (agents, keys, nonces, variables) have depth 1.
    pub fn depth(&self) -> usize {
        match self {
            Term::Var(_) | Term::Agent(_) | Term::Nonce { .. } | Term::Key(..) => 1,
            Term::Pair(l, r) => 1 + l.depth().max(r.depth()),
            Term::Enc { body, .. } | Term::Sig { body, .. } => 1 + body.depth(),
        }
    }

    /// Agent variables, agent constants and nonces. These are fixed by
    /// [`Term::erase`].
    pub fn is_simple(&self) -> bool {
        matches!(
            self,
            Term::Var(Var::Agent(_) | Var::Nonce { .. }) | Term::Agent(_) | Term::Nonce { .. }
        )
    }

    /// Removes every label.
    pub fn erase(&self) -> Term {
        match self {
            Term::Var(_) | Term::Agent(_) | Term::Nonce { .. } | Term::Key(..) => self.clone(),
            Term::Pair(l, r) => Term::pair(l.erase(), r.erase()),
            Term::Enc {
                body, recipient, ..
            } => Term::Enc {
                body: Arc::new(body.erase()),
                recipient: recipient.clone(),
                label: None,
            },
            Term::Sig { body, signer, .. } => Term::Sig {
                body: Arc::new(body.erase()),
                signer: signer.clone(),
                label: None,
            },
        }
    }

    /// True if no ciphertext or signature carries a label.
    pub fn is_unlabeled(&self) -> bool {
        match self {
            Term::Var(_) | Term::Agent(_) | Term::Nonce { .. } | Term::Key(..) => true,
            Term::Pair(l, r) => l.is_unlabeled() && r.is_unlabeled(),
            Term::Enc { body, label, .. } | Term::Sig { body, label, .. } => {
                label.is_none() && body.is_unlabeled()
            }
        }
    }

    /// True if every ciphertext and signature carries a label.
    pub fn is_fully_labeled(&self) -> bool {
        match self {
            Term::Var(_) | Term::Agent(_) | Term::Nonce { .. } | Term::Key(..) => true,
            Term::Pair(l, r) => l.is_fully_labeled() && r.is_fully_labeled(),
            Term::Enc { body, label, .. } | Term::Sig { body, label, .. } => {
                label.is_some() && body.is_fully_labeled()
            }
        }
    }

    pub fn in_mode(&self, mode: Mode) -> bool {
        match mode {
            Mode::Labeled => self.is_fully_labeled(),
            Mode::Unlabeled => self.is_unlabeled(),
        }
    }

    /// Calls `f` on every subterm, this term included, in pre-order.
    pub fn visit<'a>(&'a self, f: &mut impl FnMut(&'a Term)) {
        f(self);
        match self {
            Term::Var(_) | Term::Agent(_) | Term::Nonce { .. } => {}
            Term::Key(_, a) => a.visit(f),
            Term::Pair(l, r) => {
                l.visit(f);
                r.visit(f);
            }
            Term::Enc {
                body, recipient: a, ..
            }
            | Term::Sig {
                body, signer: a, ..
            } => {
                body.visit(f);
                a.visit(f);
            }
        }
    }

    pub fn vars(&self) -> Vec<Var> {
        let mut out = Vec::new();
        self.visit(&mut |t| {
            if let Term::Var(v) = t {
                if !out.contains(v) {
                    out.push(*v);
                }
            }
        });
        out
    }

    pub fn label_vars(&self) -> Vec<Name> {
        let mut out: Vec<Name> = Vec::new();
        self.visit(&mut |t| {
            if let Term::Enc {
                label: Some(Label::Var(l)),
                ..
            }
            | Term::Sig {
                label: Some(Label::Var(l)),
                ..
            } = t
            {
                if !out.contains(l) {
                    out.push(l.clone());
                }
            }
        });
        out
    }

    /// Every label occurring in the term.
    pub fn labels(&self) -> Vec<Label> {
        let mut out = Vec::new();
        self.visit(&mut |t| {
            if let Term::Enc { label: Some(l), .. } | Term::Sig { label: Some(l), .. } = t {
                out.push(l.clone());
            }
        });
        out
    }

    /// Agent constants occurring in the term.
    pub fn agents(&self) -> Vec<Name> {
        let mut out: Vec<Name> = Vec::new();
        self.visit(&mut |t| match t {
            Term::Agent(a) | Term::Nonce { owner: a, .. } if !out.contains(a) => {
                out.push(a.clone())
            }
            _ => {}
        });
        out
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Var(v) => write!(f, "{v}"),
            Term::Agent(a) => f.write_str(a),
            Term::Key(kind, a) => write!(f, "{}({a})", kind.symbol()),
            Term::Nonce {
                owner,
                index,
                session,
            } => write!(f, "n({owner},{index},{session})"),
            Term::Pair(l, r) => {
                // right-nested pairs print as one tuple
                write!(f, "<{l}")?;
                let mut rest = &**r;
                while let Term::Pair(l, r) = rest {
                    write!(f, ", {l}")?;
                    rest = r;
                }
                write!(f, ", {rest}>")
            }
            Term::Enc {
                body,
                recipient,
                label,
            } => {
                write!(f, "enc({body}, ek({recipient}))")?;
                if let Some(l) = label {
                    write!(f, "^{l}")?;
                }
                Ok(())
            }
            Term::Sig {
                body,
                signer,
                label,
            } => {
                write!(f, "sig({body}, sk({signer}))")?;
                if let Some(l) = label {
                    write!(f, "^{l}")?;
                }
                Ok(())
            }
        }
    }
}

impl Serialize for Term {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Term {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        crate::syntax::parse_term(&text).map_err(serde::de::Error::custom)
    }
}

/// Finite partial map from object variables and label variables to terms and
/// labels.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Substitution {
    terms: BTreeMap<Var, Term>,
    labels: BTreeMap<Name, Label>,
}

impl Substitution {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty() && self.labels.is_empty()
    }

    pub fn len(&self) -> usize {
        self.terms.len() + self.labels.len()
    }

    pub fn get(&self, var: &Var) -> Option<&Term> {
        self.terms.get(var)
    }

    pub fn get_label(&self, name: &str) -> Option<&Label> {
        self.labels.get(name)
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Var, &Term)> {
        self.terms.iter()
    }

    pub fn labels(&self) -> impl Iterator<Item = (&Name, &Label)> {
        self.labels.iter()
    }

    /// Binds `var` to `term`. The image must have the variable's sort, and a
    /// variable that is already bound can only be rebound to the same term.
    pub fn bind(&mut self, var: Var, term: Term) -> Result<(), TermError> {
        let found = term.sort();
        if found != var.sort() {
            return Err(TermError::SortMismatch {
                term: term.to_string(),
                expected: var.sort(),
                found,
            });
        }
        match self.terms.get(&var) {
            Some(existing) if *existing != term => Err(TermError::Conflict {
                var: var.to_string(),
                existing: existing.to_string(),
                new: term.to_string(),
            }),
            Some(_) => Ok(()),
            None => {
                self.terms.insert(var, term);
                Ok(())
            }
        }
    }

    pub fn bind_label(&mut self, name: Name, label: Label) -> Result<(), TermError> {
        if !label.is_ground() {
            return Err(TermError::NonGroundLabel(name.to_string()));
        }
        match self.labels.get(&name) {
            Some(existing) if *existing != label => Err(TermError::Conflict {
                var: name.to_string(),
                existing: existing.to_string(),
                new: label.to_string(),
            }),
            Some(_) => Ok(()),
            None => {
                self.labels.insert(name, label);
                Ok(())
            }
        }
    }

    /// Union of two compatible substitutions.
    pub fn union(&self, other: &Substitution) -> Result<Substitution, TermError> {
        let mut out = self.clone();
        for (v, t) in &other.terms {
            out.bind(*v, t.clone())?;
        }
        for (l, lab) in &other.labels {
            out.bind_label(l.clone(), lab.clone())?;
        }
        Ok(out)
    }

    /// Simultaneous replacement of every bound variable.
    pub fn apply(&self, term: &Term) -> Term {
        if self.is_empty() {
            return term.clone();
        }
        self.apply_inner(term)
    }

    fn apply_inner(&self, term: &Term) -> Term {
        match term {
            Term::Var(v) => self.terms.get(v).cloned().unwrap_or_else(|| term.clone()),
            Term::Agent(_) | Term::Nonce { .. } => term.clone(),
            Term::Key(kind, a) => Term::key(*kind, self.apply_inner(a)),
            Term::Pair(l, r) => Term::pair(self.apply_inner(l), self.apply_inner(r)),
            Term::Enc {
                body,
                recipient,
                label,
            } => Term::enc(
                self.apply_inner(body),
                self.apply_inner(recipient),
                self.apply_label(label),
            ),
            Term::Sig {
                body,
                signer,
                label,
            } => Term::sig(
                self.apply_inner(body),
                self.apply_inner(signer),
                self.apply_label(label),
            ),
        }
    }

    pub fn apply_label(&self, label: &Option<Label>) -> Option<Label> {
        match label {
            Some(Label::Var(name)) => Some(
                self.labels
                    .get(name)
                    .cloned()
                    .unwrap_or_else(|| Label::Var(name.clone())),
            ),
            other => other.clone(),
        }
    }

    /// Erases every image and drops the label bindings, which have no
    /// counterpart in the unlabeled model.
    pub fn erase(&self) -> Substitution {
        Substitution {
            terms: self.terms.iter().map(|(v, t)| (*v, t.erase())).collect(),
            labels: BTreeMap::new(),
        }
    }
}

impl fmt::Display for Substitution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        let mut first = true;
        for (v, t) in &self.terms {
            if !first {
                f.write_str(", ")?;
            }
            first = false;
            write!(f, "{v} -> {t}")?;
        }
        for (l, lab) in &self.labels {
            if !first {
                f.write_str(", ")?;
            }
            first = false;
            write!(f, "{l} -> {lab}")?;
        }
        f.write_str("}")
    }
}

impl Serialize for Substitution {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let map: BTreeMap<String, String> = self
            .terms
            .iter()
            .map(|(v, t)| (v.to_string(), t.to_string()))
            .chain(
                self.labels
                    .iter()
                    .map(|(l, lab)| (l.to_string(), lab.to_string())),
            )
            .collect();
        map.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Substitution {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let map = BTreeMap::<String, String>::deserialize(d)?;
        let mut out = Substitution::new();
        for (key, value) in map {
            match crate::syntax::parse_binding_key(&key).map_err(D::Error::custom)? {
                crate::syntax::BindingKey::Var(v) => {
                    let t = crate::syntax::parse_term(&value).map_err(D::Error::custom)?;
                    out.bind(v, t).map_err(D::Error::custom)?;
                }
                crate::syntax::BindingKey::Label(name) => {
                    let lab = crate::syntax::parse_label(&value).map_err(D::Error::custom)?;
                    out.bind_label(name, lab).map_err(D::Error::custom)?;
                }
            }
        }
        Ok(out)
    }
}

/// Syntactic matching of a pattern against a message.
///
/// Returns the least substitution `θ` with `θ(pattern) = message`, or `None`.
/// Variables only match terms of their own sort, repeated variables must match
/// equal subterms, and label variables match any label.
pub fn match_term(pattern: &Term, message: &Term) -> Option<Substitution> {
    let mut theta = Substitution::new();
    match_into(pattern, message, &mut theta).then_some(theta)
}

/// Like [`match_term`] but extends an existing substitution. On failure the
/// substitution may be partially extended.
pub fn match_into(pattern: &Term, message: &Term, theta: &mut Substitution) -> bool {
    match (pattern, message) {
        (Term::Var(v), m) => {
            if v.sort() != m.sort() {
                return false;
            }
            theta.bind(*v, m.clone()).is_ok()
        }
        (Term::Agent(a), Term::Agent(b)) => a == b,
        (Term::Nonce { .. }, Term::Nonce { .. }) => pattern == message,
        (Term::Key(k1, a1), Term::Key(k2, a2)) => k1 == k2 && match_into(a1, a2, theta),
        (Term::Pair(l1, r1), Term::Pair(l2, r2)) => {
            match_into(l1, l2, theta) && match_into(r1, r2, theta)
        }
        (
            Term::Enc {
                body: b1,
                recipient: a1,
                label: l1,
            },
            Term::Enc {
                body: b2,
                recipient: a2,
                label: l2,
            },
        )
        | (
            Term::Sig {
                body: b1,
                signer: a1,
                label: l1,
            },
            Term::Sig {
                body: b2,
                signer: a2,
                label: l2,
            },
        ) => match_label(l1, l2, theta) && match_into(a1, a2, theta) && match_into(b1, b2, theta),
        _ => false,
    }
}

fn match_label(pattern: &Option<Label>, message: &Option<Label>, theta: &mut Substitution) -> bool {
    match (pattern, message) {
        (None, None) => true,
        (Some(Label::Var(name)), Some(l)) if l.is_ground() => {
            theta.bind_label(name.clone(), l.clone()).is_ok()
        }
        (Some(p), Some(m)) => p == m,
        _ => false,
    }
}
