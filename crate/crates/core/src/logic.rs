//! Trace-property logic: formulas over local states, their interpretation on
//! a trace, negation normal form, the equality-restricted fragment, erasure,
//! and bounded model checking.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::execution::{
    find_first_trace, is_valid_trace, Bounds, ExecError, LocalState, Protocol, Trace,
};
use crate::term::{KeyKind, Label, Name, Sort, Substitution, Term, Var};

/// Label position inside a formula term.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FLabel {
    Label(Label),
    /// `ς(L)`: the label bound to `L` by a quantified local state.
    Apply {
        sub: Name,
        var: Name,
    },
}

/// Term of a formula: a message term that may contain `ς(x)`.
///
/// The `Var` and label-variable forms only appear while parsing protocol
/// terms; closed formulas reach object variables through `Apply`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FTerm {
    Apply {
        sub: Name,
        var: Var,
    },
    Var(Var),
    Agent(Name),
    Key(KeyKind, Box<FTerm>),
    Nonce {
        owner: Name,
        index: u32,
        session: u32,
    },
    Pair(Box<FTerm>, Box<FTerm>),
    Enc {
        body: Box<FTerm>,
        recipient: Box<FTerm>,
        label: Option<FLabel>,
    },
    Sig {
        body: Box<FTerm>,
        signer: Box<FTerm>,
        label: Option<FLabel>,
    },
}

impl FTerm {
    pub fn apply(sub: &str, var: Var) -> FTerm {
        FTerm::Apply {
            sub: Name::from(sub),
            var,
        }
    }

    pub fn sort(&self) -> Sort {
        match self {
            FTerm::Apply { var, .. } | FTerm::Var(var) => var.sort(),
            FTerm::Agent(_) => Sort::AgentId,
            FTerm::Key(kind, _) => kind.sort(),
            FTerm::Nonce { .. } => Sort::Nonce,
            FTerm::Pair(..) => Sort::Pair,
            FTerm::Enc { .. } => Sort::Ciphertext,
            FTerm::Sig { .. } => Sort::Signature,
        }
    }

    /// Agent constants, nonces, and `ς(x)` for an agent or nonce variable
    /// `x`: every instance of these is a simple term.
    pub fn is_simple(&self) -> bool {
        match self {
            FTerm::Apply { var, .. } | FTerm::Var(var) => {
                matches!(var, Var::Agent(_) | Var::Nonce { .. })
            }
            FTerm::Agent(_) | FTerm::Nonce { .. } => true,
            _ => false,
        }
    }

    pub fn erase(&self) -> FTerm {
        match self {
            FTerm::Apply { .. } | FTerm::Var(_) | FTerm::Agent(_) | FTerm::Nonce { .. } => {
                self.clone()
            }
            FTerm::Key(k, a) => FTerm::Key(*k, a.clone()),
            FTerm::Pair(l, r) => FTerm::Pair(Box::new(l.erase()), Box::new(r.erase())),
            FTerm::Enc {
                body, recipient, ..
            } => FTerm::Enc {
                body: Box::new(body.erase()),
                recipient: recipient.clone(),
                label: None,
            },
            FTerm::Sig { body, signer, .. } => FTerm::Sig {
                body: Box::new(body.erase()),
                signer: signer.clone(),
                label: None,
            },
        }
    }

    pub fn is_unlabeled(&self) -> bool {
        match self {
            FTerm::Key(_, a) => a.is_unlabeled(),
            FTerm::Pair(l, r) => l.is_unlabeled() && r.is_unlabeled(),
            FTerm::Enc {
                body,
                recipient: a,
                label,
            }
            | FTerm::Sig {
                body,
                signer: a,
                label,
            } => label.is_none() && body.is_unlabeled() && a.is_unlabeled(),
            _ => true,
        }
    }

    /// Meta-variables applied anywhere in the term, label positions included.
    pub fn subs(&self, out: &mut BTreeSet<Name>) {
        let label = |l: &Option<FLabel>, out: &mut BTreeSet<Name>| {
            if let Some(FLabel::Apply { sub, .. }) = l {
                out.insert(sub.clone());
            }
        };
        match self {
            FTerm::Apply { sub, .. } => {
                out.insert(sub.clone());
            }
            FTerm::Var(_) | FTerm::Agent(_) | FTerm::Nonce { .. } => {}
            FTerm::Key(_, a) => a.subs(out),
            FTerm::Pair(l, r) => {
                l.subs(out);
                r.subs(out);
            }
            FTerm::Enc {
                body,
                recipient: a,
                label: l,
            }
            | FTerm::Sig {
                body,
                signer: a,
                label: l,
            } => {
                body.subs(out);
                a.subs(out);
                label(l, out);
            }
        }
    }

    /// Converts a term without `ς` applications.
    pub fn to_term(&self) -> Option<Term> {
        let label = |l: &Option<FLabel>| match l {
            None => Some(None),
            Some(FLabel::Label(l)) => Some(Some(l.clone())),
            Some(FLabel::Apply { .. }) => None,
        };
        Some(match self {
            FTerm::Apply { .. } => return None,
            FTerm::Var(v) => Term::Var(*v),
            FTerm::Agent(a) => Term::Agent(a.clone()),
            FTerm::Key(k, a) => Term::key(*k, a.to_term()?),
            FTerm::Nonce {
                owner,
                index,
                session,
            } => Term::Nonce {
                owner: owner.clone(),
                index: *index,
                session: *session,
            },
            FTerm::Pair(l, r) => Term::pair(l.to_term()?, r.to_term()?),
            FTerm::Enc {
                body,
                recipient,
                label: l,
            } => Term::enc(body.to_term()?, recipient.to_term()?, label(l)?),
            FTerm::Sig {
                body,
                signer,
                label: l,
            } => Term::sig(body.to_term()?, signer.to_term()?, label(l)?),
        })
    }

    /// Instantiates every `ς(x)` with the local state bound to `ς`.
    pub fn eval(&self, env: &Env<'_>) -> Result<Term, EvalError> {
        let label =
            |l: &Option<FLabel>| -> Result<Option<Label>, EvalError> {
                match l {
                    None => Ok(None),
                    Some(FLabel::Label(l)) => Ok(Some(l.clone())),
                    Some(FLabel::Apply { sub, var }) => {
                        let theta = env.lookup(sub)?;
                        theta.get_label(var).cloned().map(Some).ok_or_else(|| {
                            EvalError::Undefined {
                                sub: sub.to_string(),
                                var: var.to_string(),
                            }
                        })
                    }
                }
            };
        Ok(match self {
            FTerm::Apply { sub, var } => {
                env.lookup(sub)?
                    .get(var)
                    .cloned()
                    .ok_or_else(|| EvalError::Undefined {
                        sub: sub.to_string(),
                        var: var.to_string(),
                    })?
            }
            FTerm::Var(v) => return Err(EvalError::FreeVariable(v.to_string())),
            FTerm::Agent(a) => Term::Agent(a.clone()),
            FTerm::Key(k, a) => Term::key(*k, a.eval(env)?),
            FTerm::Nonce {
                owner,
                index,
                session,
            } => Term::Nonce {
                owner: owner.clone(),
                index: *index,
                session: *session,
            },
            FTerm::Pair(l, r) => Term::pair(l.eval(env)?, r.eval(env)?),
            FTerm::Enc {
                body,
                recipient,
                label: l,
            } => Term::enc(body.eval(env)?, recipient.eval(env)?, label(l)?),
            FTerm::Sig {
                body,
                signer,
                label: l,
            } => Term::sig(body.eval(env)?, signer.eval(env)?, label(l)?),
        })
    }
}

impl From<&Term> for FTerm {
    fn from(t: &Term) -> FTerm {
        let label = |l: &Option<Label>| l.clone().map(FLabel::Label);
        match t {
            Term::Var(v) => FTerm::Var(*v),
            Term::Agent(a) => FTerm::Agent(a.clone()),
            Term::Key(k, a) => FTerm::Key(*k, Box::new(FTerm::from(&**a))),
            Term::Nonce {
                owner,
                index,
                session,
            } => FTerm::Nonce {
                owner: owner.clone(),
                index: *index,
                session: *session,
            },
            Term::Pair(l, r) => {
                FTerm::Pair(Box::new(FTerm::from(&**l)), Box::new(FTerm::from(&**r)))
            }
            Term::Enc {
                body,
                recipient,
                label: l,
            } => FTerm::Enc {
                body: Box::new(FTerm::from(&**body)),
                recipient: Box::new(FTerm::from(&**recipient)),
                label: label(l),
            },
            Term::Sig {
                body,
                signer,
                label: l,
            } => FTerm::Sig {
                body: Box::new(FTerm::from(&**body)),
                signer: Box::new(FTerm::from(&**signer)),
                label: label(l),
            },
        }
    }
}

impl fmt::Display for FLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FLabel::Label(l) => write!(f, "{l}"),
            FLabel::Apply { sub, var } => write!(f, "{sub}({var})"),
        }
    }
}

impl fmt::Display for FTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let label = |f: &mut fmt::Formatter<'_>, l: &Option<FLabel>| match l {
            Some(l) => write!(f, "^{l}"),
            None => Ok(()),
        };
        match self {
            FTerm::Apply { sub, var } => write!(f, "{sub}({var})"),
            FTerm::Var(v) => write!(f, "{v}"),
            FTerm::Agent(a) => f.write_str(a),
            FTerm::Key(k, a) => write!(f, "{}({a})", k.symbol()),
            FTerm::Nonce {
                owner,
                index,
                session,
            } => write!(f, "n({owner},{index},{session})"),
            FTerm::Pair(l, r) => {
                write!(f, "<{l}")?;
                let mut rest = &**r;
                while let FTerm::Pair(l, r) = rest {
                    write!(f, ", {l}")?;
                    rest = r;
                }
                write!(f, ", {rest}>")
            }
            FTerm::Enc {
                body,
                recipient,
                label: l,
            } => {
                write!(f, "enc({body}, ek({recipient}))")?;
                label(f, l)
            }
            FTerm::Sig {
                body,
                signer,
                label: l,
            } => {
                write!(f, "sig({body}, sk({signer}))")?;
                label(f, l)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quantifier {
    Forall,
    Exists,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Formula {
    /// The term is an identity that was not corrupted.
    NC(FTerm),
    Eq(FTerm, FTerm),
    Neq(FTerm, FTerm),
    Not(Box<Formula>),
    And(Box<Formula>, Box<Formula>),
    Or(Box<Formula>, Box<Formula>),
    /// Quantification over the local states of role `role` at control point
    /// `point`, bound to `sub`.
    Quant {
        q: Quantifier,
        role: usize,
        point: usize,
        sub: Name,
        body: Box<Formula>,
    },
}

impl Formula {
    #[allow(clippy::should_implement_trait)]
    pub fn not(f: Formula) -> Formula {
        Formula::Not(Box::new(f))
    }

    pub fn and(a: Formula, b: Formula) -> Formula {
        Formula::And(Box::new(a), Box::new(b))
    }

    pub fn or(a: Formula, b: Formula) -> Formula {
        Formula::Or(Box::new(a), Box::new(b))
    }

    /// `a -> b`, i.e. `!a || b`.
    pub fn implies(a: Formula, b: Formula) -> Formula {
        Formula::or(Formula::not(a), b)
    }

    pub fn forall(role: usize, point: usize, sub: &str, body: Formula) -> Formula {
        Formula::Quant {
            q: Quantifier::Forall,
            role,
            point,
            sub: Name::from(sub),
            body: Box::new(body),
        }
    }

    pub fn exists(role: usize, point: usize, sub: &str, body: Formula) -> Formula {
        Formula::Quant {
            q: Quantifier::Exists,
            role,
            point,
            sub: Name::from(sub),
            body: Box::new(body),
        }
    }

    /// Meta-variables used but not bound by an enclosing quantifier.
    pub fn free_subs(&self) -> BTreeSet<Name> {
        let mut out = BTreeSet::new();
        self.collect_free(&mut Vec::new(), &mut out);
        out
    }

    fn collect_free(&self, bound: &mut Vec<Name>, out: &mut BTreeSet<Name>) {
        let terms = |ts: &[&FTerm], bound: &Vec<Name>, out: &mut BTreeSet<Name>| {
            let mut used = BTreeSet::new();
            for t in ts {
                t.subs(&mut used);
            }
            out.extend(used.into_iter().filter(|s| !bound.contains(s)));
        };
        match self {
            Formula::NC(t) => terms(&[t], bound, out),
            Formula::Eq(a, b) | Formula::Neq(a, b) => terms(&[a, b], bound, out),
            Formula::Not(f) => f.collect_free(bound, out),
            Formula::And(a, b) | Formula::Or(a, b) => {
                a.collect_free(bound, out);
                b.collect_free(bound, out);
            }
            Formula::Quant { sub, body, .. } => {
                bound.push(sub.clone());
                body.collect_free(bound, out);
                bound.pop();
            }
        }
    }

    /// Pushes negations down to the atoms.
    pub fn nnf(&self) -> Formula {
        self.nnf_polarity(true)
    }

    fn nnf_polarity(&self, positive: bool) -> Formula {
        match (self, positive) {
            (Formula::NC(_), true) => self.clone(),
            (Formula::NC(_), false) => Formula::not(self.clone()),
            (Formula::Eq(a, b), true) | (Formula::Neq(a, b), false) => {
                Formula::Eq(a.clone(), b.clone())
            }
            (Formula::Eq(a, b), false) | (Formula::Neq(a, b), true) => {
                Formula::Neq(a.clone(), b.clone())
            }
            (Formula::Not(f), p) => f.nnf_polarity(!p),
            (Formula::And(a, b), true) | (Formula::Or(a, b), false) => {
                Formula::and(a.nnf_polarity(positive), b.nnf_polarity(positive))
            }
            (Formula::Or(a, b), true) | (Formula::And(a, b), false) => {
                Formula::or(a.nnf_polarity(positive), b.nnf_polarity(positive))
            }
            (
                Formula::Quant {
                    q,
                    role,
                    point,
                    sub,
                    body,
                },
                p,
            ) => {
                let q = match (q, p) {
                    (q, true) => *q,
                    (Quantifier::Forall, false) => Quantifier::Exists,
                    (Quantifier::Exists, false) => Quantifier::Forall,
                };
                Formula::Quant {
                    q,
                    role: *role,
                    point: *point,
                    sub: sub.clone(),
                    body: Box::new(body.nnf_polarity(p)),
                }
            }
        }
    }

    /// Membership in the fragment where negation only guards `NC` and
    /// equalities only relate simple terms, checked on the negation normal
    /// form.
    pub fn is_l2(&self) -> bool {
        fn fits(f: &Formula) -> bool {
            match f {
                Formula::NC(_) | Formula::Neq(..) => true,
                Formula::Eq(a, b) => a.is_simple() && b.is_simple(),
                Formula::Not(inner) => matches!(**inner, Formula::NC(_)),
                Formula::And(a, b) | Formula::Or(a, b) => fits(a) && fits(b),
                Formula::Quant { body, .. } => fits(body),
            }
        }
        fits(&self.nnf())
    }

    /// Removes the labels from every term.
    pub fn erase(&self) -> Formula {
        match self {
            Formula::NC(t) => Formula::NC(t.erase()),
            Formula::Eq(a, b) => Formula::Eq(a.erase(), b.erase()),
            Formula::Neq(a, b) => Formula::Neq(a.erase(), b.erase()),
            Formula::Not(f) => Formula::not(f.erase()),
            Formula::And(a, b) => Formula::and(a.erase(), b.erase()),
            Formula::Or(a, b) => Formula::or(a.erase(), b.erase()),
            Formula::Quant {
                q,
                role,
                point,
                sub,
                body,
            } => Formula::Quant {
                q: *q,
                role: *role,
                point: *point,
                sub: sub.clone(),
                body: Box::new(body.erase()),
            },
        }
    }

    pub fn is_unlabeled(&self) -> bool {
        match self {
            Formula::NC(t) => t.is_unlabeled(),
            Formula::Eq(a, b) | Formula::Neq(a, b) => a.is_unlabeled() && b.is_unlabeled(),
            Formula::Not(f) => f.is_unlabeled(),
            Formula::And(a, b) | Formula::Or(a, b) => a.is_unlabeled() && b.is_unlabeled(),
            Formula::Quant { body, .. } => body.is_unlabeled(),
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Formula::Quant { .. } => 0,
            Formula::Or(..) => 1,
            Formula::And(..) => 2,
            Formula::Not(_) => 3,
            _ => 4,
        }
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // Binary operators associate to the left; a right operand of the same
        // precedence, or any quantifier that is not last, gets parentheses.
        fn child(f: &mut fmt::Formatter<'_>, c: &Formula, min: u8) -> fmt::Result {
            if c.precedence() < min {
                write!(f, "({c})")
            } else {
                write!(f, "{c}")
            }
        }
        match self {
            Formula::NC(t) => write!(f, "NC({t})"),
            Formula::Eq(a, b) => write!(f, "{a} = {b}"),
            Formula::Neq(a, b) => write!(f, "{a} != {b}"),
            Formula::Not(inner) => {
                f.write_str("!")?;
                child(f, inner, 3)
            }
            Formula::And(a, b) => {
                child(f, a, 2)?;
                f.write_str(" && ")?;
                child(f, b, 3)
            }
            Formula::Or(a, b) => {
                child(f, a, 1)?;
                f.write_str(" || ")?;
                child(f, b, 2)
            }
            Formula::Quant {
                q,
                role,
                point,
                sub,
                body,
            } => {
                let kw = match q {
                    Quantifier::Forall => "forall",
                    Quantifier::Exists => "exists",
                };
                write!(f, "{kw} LS({role}, {point}) as {sub} . {body}")
            }
        }
    }
}

impl Serialize for Formula {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Formula {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        crate::syntax::parse_formula(&text).map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("{sub}({var}) is undefined in the local state bound to {sub}")]
    Undefined { sub: String, var: String },
    #[error("meta-variable {0} is not bound by a quantifier")]
    Unbound(String),
    #[error("object variable {0} occurs outside a meta-variable application")]
    FreeVariable(String),
}

/// Local states bound to the meta-variables in scope, innermost first.
#[derive(Clone, Copy, Debug, Default)]
pub enum Env<'a> {
    #[default]
    Empty,
    Bind {
        sub: &'a str,
        theta: &'a Substitution,
        outer: &'a Env<'a>,
    },
}

impl<'a> Env<'a> {
    pub fn lookup(&self, sub: &str) -> Result<&'a Substitution, EvalError> {
        let mut cur = self;
        loop {
            match cur {
                Env::Empty => return Err(EvalError::Unbound(sub.to_string())),
                Env::Bind { sub: s, theta, .. } if *s == sub => return Ok(theta),
                Env::Bind { outer, .. } => cur = outer,
            }
        }
    }
}

/// `LS_{i,p}(tr)`: every local state of role `i` at control point `p` found in
/// some global state of the trace.
pub fn local_states(tr: &Trace, role: usize, point: usize) -> BTreeSet<LocalState> {
    tr.states
        .iter()
        .flat_map(|g| &g.sessions)
        .filter(|s| s.local.role == role && s.local.point == point)
        .map(|s| s.local.clone())
        .collect()
}

/// Truth value of a closed formula on a trace.
///
/// Every subformula is evaluated, so an undefined `ς(x)` anywhere is
/// reported even where a short-circuit would have skipped it.
pub fn interpret(phi: &Formula, tr: &Trace) -> Result<bool, EvalError> {
    Evaluator::new(tr).eval(phi, &Env::Empty)
}

type StateCache = RefCell<BTreeMap<(usize, usize), Rc<Vec<LocalState>>>>;

struct Evaluator<'t> {
    tr: &'t Trace,
    corrupted: BTreeSet<&'t Name>,
    cache: StateCache,
}

impl<'t> Evaluator<'t> {
    fn new(tr: &'t Trace) -> Self {
        Evaluator {
            tr,
            corrupted: tr.corrupted().iter().collect(),
            cache: RefCell::new(BTreeMap::new()),
        }
    }

    fn states(&self, role: usize, point: usize) -> Rc<Vec<LocalState>> {
        self.cache
            .borrow_mut()
            .entry((role, point))
            .or_insert_with(|| Rc::new(local_states(self.tr, role, point).into_iter().collect()))
            .clone()
    }

    fn eval(&self, phi: &Formula, env: &Env<'_>) -> Result<bool, EvalError> {
        Ok(match phi {
            Formula::NC(t) => match t.eval(env)? {
                Term::Agent(a) => !self.corrupted.contains(&a),
                _ => false,
            },
            Formula::Eq(a, b) => a.eval(env)? == b.eval(env)?,
            Formula::Neq(a, b) => a.eval(env)? != b.eval(env)?,
            Formula::Not(f) => !self.eval(f, env)?,
            Formula::And(a, b) => {
                let x = self.eval(a, env)?;
                self.eval(b, env)? && x
            }
            Formula::Or(a, b) => {
                let x = self.eval(a, env)?;
                self.eval(b, env)? || x
            }
            Formula::Quant {
                q,
                role,
                point,
                sub,
                body,
            } => {
                let (mut all, mut any) = (true, false);
                for ls in self.states(*role, *point).iter() {
                    let v = self.eval(
                        body,
                        &Env::Bind {
                            sub,
                            theta: &ls.sigma,
                            outer: env,
                        },
                    )?;
                    all &= v;
                    any |= v;
                }
                match q {
                    Quantifier::Forall => all,
                    Quantifier::Exists => any,
                }
            }
        })
    }
}

/// A local state chosen for a quantifier on the path to a violation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub sub: String,
    pub quantifier: Quantifier,
    pub role: usize,
    pub point: usize,
    pub bindings: Substitution,
}

/// Outcome of a bounded check.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "kebab-case")]
pub enum Verdict {
    /// No trace within the bounds falsifies the formula.
    HoldsWithinBounds { traces: usize },
    Violated {
        counterexample: Trace,
        assignments: Vec<Assignment>,
    },
}

impl Verdict {
    pub fn holds(&self) -> bool {
        matches!(self, Verdict::HoldsWithinBounds { .. })
    }

    pub fn counterexample(&self) -> Option<&Trace> {
        match self {
            Verdict::Violated { counterexample, .. } => Some(counterexample),
            Verdict::HoldsWithinBounds { .. } => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum CheckError {
    #[error("formula is not closed: {0}")]
    NotClosed(String),
    #[error("evaluation failed: {error}\n{}", trace.to_text())]
    Eval { error: EvalError, trace: Box<Trace> },
    #[error(transparent)]
    Exec(#[from] ExecError),
}

/// Bounded `Π ⊨ φ`: checks `φ` on every trace within `bounds` and returns the
/// first falsifying trace in enumeration order.
pub fn satisfies(
    protocol: &Protocol,
    phi: &Formula,
    bounds: &Bounds,
    jobs: usize,
) -> Result<Verdict, CheckError> {
    let free = phi.free_subs();
    if !free.is_empty() {
        let names: Vec<&str> = free.iter().map(|n| &**n).collect();
        return Err(CheckError::NotClosed(names.join(", ")));
    }
    let seen = AtomicUsize::new(0);
    let found = find_first_trace(protocol, bounds, jobs, |tr| {
        seen.fetch_add(1, Ordering::Relaxed);
        match interpret(phi, tr) {
            Ok(true) => None,
            Ok(false) => Some(Ok(tr.clone())),
            Err(error) => Some(Err(CheckError::Eval {
                error,
                trace: Box::new(tr.clone()),
            })),
        }
    });
    match found {
        None => Ok(Verdict::HoldsWithinBounds {
            traces: seen.into_inner(),
        }),
        Some(Err(e)) => Err(e),
        Some(Ok(tr)) => {
            debug_assert_eq!(is_valid_trace(protocol, &tr), Ok(true));
            let assignments = falsifying_assignments(phi, &tr)?;
            Ok(Verdict::Violated {
                counterexample: tr,
                assignments,
            })
        }
    }
}

/// Follows the formula from the root while it is false: for each universal
/// quantifier, the first local state that falsifies its body; for a
/// conjunction, the first false conjunct.
pub fn falsifying_assignments(phi: &Formula, tr: &Trace) -> Result<Vec<Assignment>, CheckError> {
    let ev = Evaluator::new(tr);
    let mut out = Vec::new();
    walk(&ev, phi, &Env::Empty, &mut out).map_err(|error| CheckError::Eval {
        error,
        trace: Box::new(tr.clone()),
    })?;
    Ok(out)
}

fn walk(
    ev: &Evaluator<'_>,
    phi: &Formula,
    env: &Env<'_>,
    out: &mut Vec<Assignment>,
) -> Result<(), EvalError> {
    match phi {
        Formula::Quant {
            q: Quantifier::Forall,
            role,
            point,
            sub,
            body,
        } => {
            for ls in ev.states(*role, *point).iter() {
                let inner = Env::Bind {
                    sub,
                    theta: &ls.sigma,
                    outer: env,
                };
                if !ev.eval(body, &inner)? {
                    out.push(Assignment {
                        sub: sub.to_string(),
                        quantifier: Quantifier::Forall,
                        role: ls.role,
                        point: ls.point,
                        bindings: ls.sigma.clone(),
                    });
                    return walk(ev, body, &inner, out);
                }
            }
            Ok(())
        }
        Formula::And(a, b) => {
            if !ev.eval(a, env)? {
                walk(ev, a, env, out)
            } else {
                walk(ev, b, env, out)
            }
        }
        _ => Ok(()),
    }
}
