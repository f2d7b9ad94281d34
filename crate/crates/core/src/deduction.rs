//! Dolev-Yao deduction for labeled (`⊢^l`) and unlabeled (`⊢`) messages.
//!
//! The decision procedure is two-phase. [`Deducer::new`] saturates the
//! knowledge under the analysis rules (unpairing, decryption with a known
//! decryption key, signature opening) and remembers how each term was
//! obtained. [`Deducer::can_deduce`] then checks a goal top-down with the
//! synthesis rules. In labeled mode the adversary can only synthesize
//! ciphertexts and signatures carrying `adv(i)` labels; agent-labeled ones
//! come from the saturated set or nowhere.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::term::{KeyKind, Label, Mode, Name, Term};

/// Adversary knowledge: messages seen on the network plus the corrupted agents
/// and the identities the adversary knows from the start.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeSet {
    pub terms: BTreeSet<Term>,
    #[serde(with = "names")]
    pub corrupted: BTreeSet<Name>,
    #[serde(with = "names")]
    pub universe: BTreeSet<Name>,
}

pub(crate) mod names {
    use std::collections::BTreeSet;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::term::Name;

    pub fn serialize<S: Serializer>(set: &BTreeSet<Name>, s: S) -> Result<S::Ok, S::Error> {
        set.iter().map(|n| &**n).collect::<Vec<&str>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeSet<Name>, D::Error> {
        Ok(Vec::<String>::deserialize(d)?
            .into_iter()
            .map(Name::from)
            .collect())
    }
}

impl KnowledgeSet {
    pub fn new<I, S>(universe: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        KnowledgeSet {
            terms: BTreeSet::new(),
            corrupted: BTreeSet::new(),
            universe: universe
                .into_iter()
                .map(|s| Name::from(s.as_ref()))
                .collect(),
        }
    }

    pub fn with_terms(mut self, terms: impl IntoIterator<Item = Term>) -> Self {
        self.terms.extend(terms);
        self
    }

    /// Marks agents as corrupted and adds their secret keys to the set; their
    /// nonces become members implicitly.
    pub fn with_corrupted<I, S>(mut self, agents: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        for a in agents {
            let name = Name::from(a.as_ref());
            let agent = Term::Agent(name.clone());
            self.terms.insert(Term::dk(agent.clone()));
            self.terms.insert(Term::sk(agent));
            self.corrupted.insert(name);
        }
        self
    }

    pub fn erase(&self) -> KnowledgeSet {
        KnowledgeSet {
            terms: self.terms.iter().map(Term::erase).collect(),
            corrupted: self.corrupted.clone(),
            universe: self.universe.clone(),
        }
    }

    /// Initial-knowledge axiom: identities of the universe and their public
    /// keys.
    pub fn is_initial(&self, t: &Term) -> bool {
        match t {
            Term::Agent(a) => self.universe.contains(a),
            Term::Key(KeyKind::Enc | KeyKind::Verify, a) => {
                matches!(&**a, Term::Agent(b) if self.universe.contains(b))
            }
            _ => false,
        }
    }

    /// Membership axiom: elements of the set, plus every nonce of a corrupted
    /// agent.
    pub fn is_member(&self, t: &Term) -> bool {
        self.terms.contains(t)
            || matches!(t, Term::Nonce { owner, .. } if self.corrupted.contains(owner))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeductionConfig {
    /// Enables the rule recovering a message from its signature.
    pub sig_open: bool,
}

impl Default for DeductionConfig {
    fn default() -> Self {
        DeductionConfig { sig_open: true }
    }
}

/// Inference rule names, as used in proof output.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rule {
    Membership,
    Initial,
    Pair,
    #[serde(rename = "unpair-1")]
    Unpair1,
    #[serde(rename = "unpair-2")]
    Unpair2,
    Enc,
    Dec,
    Sign,
    SigOpen,
}

impl Rule {
    pub fn name(self) -> &'static str {
        match self {
            Rule::Membership => "membership",
            Rule::Initial => "initial",
            Rule::Pair => "pair",
            Rule::Unpair1 => "unpair-1",
            Rule::Unpair2 => "unpair-2",
            Rule::Enc => "enc",
            Rule::Dec => "dec",
            Rule::Sign => "sign",
            Rule::SigOpen => "sig-open",
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Proof tree for `S ⊢ m`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Derivation {
    pub rule: Rule,
    pub conclusion: Term,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub premises: Vec<Derivation>,
}

impl Derivation {
    fn leaf(rule: Rule, conclusion: Term) -> Self {
        Derivation {
            rule,
            conclusion,
            premises: Vec::new(),
        }
    }

    pub fn size(&self) -> usize {
        1 + self.premises.iter().map(Derivation::size).sum::<usize>()
    }

    /// Indented text rendering, one node per line, conclusions first.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        self.write_text(0, &mut out);
        out
    }

    fn write_text(&self, indent: usize, out: &mut String) {
        use std::fmt::Write;
        let _ = writeln!(
            out,
            "{:indent$}{}  [{}]",
            "",
            self.conclusion,
            self.rule,
            indent = indent * 2
        );
        for p in &self.premises {
            p.write_text(indent + 1, out);
        }
    }

    /// Re-checks every node against the inference rules.
    pub fn check(
        &self,
        ks: &KnowledgeSet,
        mode: Mode,
        config: DeductionConfig,
    ) -> Result<(), DerivationError> {
        self.check_at(ks, mode, config, &mut Vec::new())
    }

    fn check_at(
        &self,
        ks: &KnowledgeSet,
        mode: Mode,
        config: DeductionConfig,
        path: &mut Vec<usize>,
    ) -> Result<(), DerivationError> {
        let fail = |reason: &str| DerivationError {
            path: path.clone(),
            rule: self.rule,
            reason: reason.to_string(),
        };
        let premises: Vec<&Term> = self.premises.iter().map(|p| &p.conclusion).collect();
        let c = &self.conclusion;
        let ok = match (self.rule, premises.as_slice()) {
            (Rule::Membership, []) => ks.is_member(c),
            (Rule::Initial, []) => ks.is_initial(c),
            (Rule::Pair, [l, r]) => {
                l.sort().is_message()
                    && r.sort().is_message()
                    && *c == Term::pair((*l).clone(), (*r).clone())
            }
            (Rule::Unpair1, [p]) => matches!(p, Term::Pair(l, _) if **l == *c),
            (Rule::Unpair2, [p]) => matches!(p, Term::Pair(_, r) if **r == *c),
            (Rule::Enc, [key, m]) => match c {
                Term::Enc {
                    body,
                    recipient,
                    label,
                } => {
                    synthesizable_label(label, mode)
                        && m.sort().is_message()
                        && **body == **m
                        && **key == Term::key(KeyKind::Enc, (**recipient).clone())
                }
                _ => false,
            },
            (Rule::Dec, [cipher, key]) => match cipher {
                Term::Enc {
                    body, recipient, ..
                } => **body == *c && **key == Term::key(KeyKind::Dec, (**recipient).clone()),
                _ => false,
            },
            (Rule::Sign, [key, m]) => match c {
                Term::Sig {
                    body,
                    signer,
                    label,
                } => {
                    synthesizable_label(label, mode)
                        && m.sort().is_message()
                        && **body == **m
                        && **key == Term::key(KeyKind::Sign, (**signer).clone())
                }
                _ => false,
            },
            (Rule::SigOpen, [s]) => {
                config.sig_open && matches!(s, Term::Sig { body, .. } if **body == *c)
            }
            _ => return Err(fail("wrong number of premises")),
        };
        if !ok {
            return Err(fail("conclusion does not follow from premises"));
        }
        for (i, p) in self.premises.iter().enumerate() {
            path.push(i);
            p.check_at(ks, mode, config, path)?;
            path.pop();
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("invalid {rule} node at premise path {path:?}: {reason}")]
pub struct DerivationError {
    pub path: Vec<usize>,
    pub rule: Rule,
    pub reason: String,
}

/// Labels the adversary may put on a ciphertext or signature it builds.
fn synthesizable_label(label: &Option<Label>, mode: Mode) -> bool {
    match mode {
        Mode::Labeled => matches!(label, Some(Label::Adversary(_))),
        Mode::Unlabeled => label.is_none(),
    }
}

/// How a term entered the saturated set.
#[derive(Clone, Debug)]
enum Origin {
    Member,
    Unpair1(Term),
    Unpair2(Term),
    Dec(Term),
    SigOpen(Term),
}

/// Saturated adversary knowledge, ready to answer deducibility queries.
#[derive(Clone, Debug)]
pub struct Deducer {
    mode: Mode,
    config: DeductionConfig,
    base: KnowledgeSet,
    known: HashMap<Term, Origin>,
}

impl Deducer {
    pub fn new(ks: &KnowledgeSet, mode: Mode) -> Self {
        Self::with_config(ks, mode, DeductionConfig::default())
    }

    pub fn with_config(ks: &KnowledgeSet, mode: Mode, config: DeductionConfig) -> Self {
        let mut known: HashMap<Term, Origin> = HashMap::new();
        // ciphertexts waiting for the decryption key of their recipient
        let mut pending: HashMap<Term, Vec<Term>> = HashMap::new();
        let mut work: Vec<(Term, Origin)> = ks
            .terms
            .iter()
            .map(|t| (t.clone(), Origin::Member))
            .collect();
        work.reverse();
        while let Some((t, origin)) = work.pop() {
            if known.contains_key(&t) {
                continue;
            }
            known.insert(t.clone(), origin);
            match &t {
                Term::Pair(l, r) => {
                    work.push(((**r).clone(), Origin::Unpair2(t.clone())));
                    work.push(((**l).clone(), Origin::Unpair1(t.clone())));
                }
                Term::Enc {
                    body, recipient, ..
                } => {
                    let dk = Term::key(KeyKind::Dec, (**recipient).clone());
                    if known.contains_key(&dk) {
                        work.push(((**body).clone(), Origin::Dec(t.clone())));
                    } else {
                        pending.entry(dk).or_default().push(t.clone());
                    }
                }
                Term::Sig { body, .. } if config.sig_open => {
                    work.push(((**body).clone(), Origin::SigOpen(t.clone())));
                }
                Term::Key(KeyKind::Dec, _) => {
                    for c in pending.remove(&t).unwrap_or_default() {
                        if let Term::Enc { body, .. } = &c {
                            work.push(((**body).clone(), Origin::Dec(c.clone())));
                        }
                    }
                }
                _ => {}
            }
        }
        Deducer {
            mode,
            config,
            base: ks.clone(),
            known,
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn knowledge(&self) -> &KnowledgeSet {
        &self.base
    }

    /// Terms obtained by analysis, in canonical order.
    pub fn analyzed(&self) -> BTreeSet<&Term> {
        self.known.keys().collect()
    }

    pub fn is_analyzed(&self, t: &Term) -> bool {
        self.known.contains_key(t)
    }

    /// Decides `S ⊢ t`.
    pub fn can_deduce(&self, t: &Term) -> bool {
        if self.known.contains_key(t) || self.base.is_initial(t) || self.base.is_member(t) {
            return true;
        }
        match t {
            Term::Pair(l, r) => {
                l.sort().is_message()
                    && r.sort().is_message()
                    && self.can_deduce(l)
                    && self.can_deduce(r)
            }
            Term::Enc {
                body,
                recipient,
                label,
            } => {
                synthesizable_label(label, self.mode)
                    && body.sort().is_message()
                    && self.can_deduce(&Term::key(KeyKind::Enc, (**recipient).clone()))
                    && self.can_deduce(body)
            }
            Term::Sig {
                body,
                signer,
                label,
            } => {
                synthesizable_label(label, self.mode)
                    && body.sort().is_message()
                    && self.can_deduce(&Term::key(KeyKind::Sign, (**signer).clone()))
                    && self.can_deduce(body)
            }
            _ => false,
        }
    }

    /// Builds a proof tree for `S ⊢ t`, or `None` if `t` is not deducible.
    pub fn derive(&self, t: &Term) -> Option<Derivation> {
        // axioms first: they give one-node proofs
        if self.base.is_member(t) {
            return Some(Derivation::leaf(Rule::Membership, t.clone()));
        }
        if self.base.is_initial(t) {
            return Some(Derivation::leaf(Rule::Initial, t.clone()));
        }
        if self.known.contains_key(t) {
            return Some(self.derive_analyzed(t));
        }
        match t {
            Term::Pair(l, r) if l.sort().is_message() && r.sort().is_message() => {
                Some(Derivation {
                    rule: Rule::Pair,
                    conclusion: t.clone(),
                    premises: vec![self.derive(l)?, self.derive(r)?],
                })
            }
            Term::Enc {
                body,
                recipient,
                label,
            } if synthesizable_label(label, self.mode) && body.sort().is_message() => {
                Some(Derivation {
                    rule: Rule::Enc,
                    conclusion: t.clone(),
                    premises: vec![
                        self.derive(&Term::key(KeyKind::Enc, (**recipient).clone()))?,
                        self.derive(body)?,
                    ],
                })
            }
            Term::Sig {
                body,
                signer,
                label,
            } if synthesizable_label(label, self.mode) && body.sort().is_message() => {
                Some(Derivation {
                    rule: Rule::Sign,
                    conclusion: t.clone(),
                    premises: vec![
                        self.derive(&Term::key(KeyKind::Sign, (**signer).clone()))?,
                        self.derive(body)?,
                    ],
                })
            }
            _ => None,
        }
    }

    fn derive_analyzed(&self, t: &Term) -> Derivation {
        let (rule, premises) = match &self.known[t] {
            Origin::Member => (Rule::Membership, vec![]),
            Origin::Unpair1(p) => (Rule::Unpair1, vec![self.derive_analyzed(p)]),
            Origin::Unpair2(p) => (Rule::Unpair2, vec![self.derive_analyzed(p)]),
            Origin::Dec(c) => {
                let Term::Enc { recipient, .. } = c else {
                    unreachable!("decryption origin is a ciphertext")
                };
                let dk = Term::key(KeyKind::Dec, (**recipient).clone());
                (
                    Rule::Dec,
                    vec![self.derive_analyzed(c), self.derive_analyzed(&dk)],
                )
            }
            Origin::SigOpen(s) => (Rule::SigOpen, vec![self.derive_analyzed(s)]),
        };
        Derivation {
            rule,
            conclusion: t.clone(),
            premises,
        }
    }

    pub fn config(&self) -> DeductionConfig {
        self.config
    }
}

/// `S ⊢^l m`.
pub fn deducible_labeled(ks: &KnowledgeSet, m: &Term) -> bool {
    Deducer::new(ks, Mode::Labeled).can_deduce(m)
}

/// `S ⊢ m`.
pub fn deducible_unlabeled(ks: &KnowledgeSet, m: &Term) -> bool {
    Deducer::new(ks, Mode::Unlabeled).can_deduce(m)
}

pub fn derive(ks: &KnowledgeSet, m: &Term, mode: Mode) -> Option<Derivation> {
    Deducer::new(ks, mode).derive(m)
}

/// Forward-chaining closure used as a brute-force oracle.
///
/// Contains every term derivable by a proof in which each synthesized term
/// has depth at most `depth`. Synthesized ciphertexts and signatures use the
/// labels `adv(1)..adv(depth)`. Nonces of corrupted agents are included for
/// nonce and session indices `1..=depth`.
pub fn closure_bounded(ks: &KnowledgeSet, depth: usize) -> HashSet<Term> {
    closure_bounded_with(ks, depth, Mode::Labeled, DeductionConfig::default())
}

pub fn closure_bounded_with(
    ks: &KnowledgeSet,
    depth: usize,
    mode: Mode,
    config: DeductionConfig,
) -> HashSet<Term> {
    let mut known: HashSet<Term> = ks.terms.iter().cloned().collect();
    for a in &ks.universe {
        let agent = Term::Agent(a.clone());
        known.insert(Term::key(KeyKind::Enc, agent.clone()));
        known.insert(Term::key(KeyKind::Verify, agent.clone()));
        known.insert(agent);
    }
    let top = depth.max(1) as u32;
    for c in &ks.corrupted {
        for j in 1..=top {
            for s in 1..=top {
                known.insert(Term::Nonce {
                    owner: c.clone(),
                    index: j,
                    session: s,
                });
            }
        }
    }
    let labels: Vec<Option<Label>> = match mode {
        Mode::Labeled => (1..=depth as u32)
            .map(|i| Some(Label::Adversary(i)))
            .collect(),
        Mode::Unlabeled => vec![None],
    };

    loop {
        let mut fresh: Vec<Term> = Vec::new();
        for t in &known {
            match t {
                Term::Pair(l, r) => {
                    fresh.push((**l).clone());
                    fresh.push((**r).clone());
                }
                Term::Enc {
                    body, recipient, ..
                } => {
                    if known.contains(&Term::key(KeyKind::Dec, (**recipient).clone())) {
                        fresh.push((**body).clone());
                    }
                }
                Term::Sig { body, .. } if config.sig_open => fresh.push((**body).clone()),
                _ => {}
            }
        }
        // components of synthesized terms have depth strictly below the bound
        let parts: Vec<&Term> = known
            .iter()
            .filter(|t| t.sort().is_message() && t.depth() < depth)
            .collect();
        let enc_keys: Vec<&Term> = known
            .iter()
            .filter_map(|t| match t {
                Term::Key(KeyKind::Enc, a) => Some(&**a),
                _ => None,
            })
            .collect();
        let sig_keys: Vec<&Term> = known
            .iter()
            .filter_map(|t| match t {
                Term::Key(KeyKind::Sign, a) => Some(&**a),
                _ => None,
            })
            .collect();
        for l in &parts {
            for r in &parts {
                fresh.push(Term::pair((*l).clone(), (*r).clone()));
            }
            for a in &enc_keys {
                for lab in &labels {
                    fresh.push(Term::enc((*l).clone(), (*a).clone(), lab.clone()));
                }
            }
            for a in &sig_keys {
                for lab in &labels {
                    fresh.push(Term::sig((*l).clone(), (*a).clone(), lab.clone()));
                }
            }
        }
        let before = known.len();
        known.extend(fresh);
        if known.len() == before {
            return known;
        }
    }
}
