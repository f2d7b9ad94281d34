//! Bounded enumeration of valid traces.

use std::cell::OnceCell;
use std::collections::{BTreeMap, BTreeSet};
use std::ops::ControlFlow;

use rayon::prelude::*;

use super::{Event, Protocol, Receive, Trace};
use crate::deduction::Deducer;
use crate::term::{match_into, KeyKind, Label, Mode, Name, Sort, Substitution, Term};

/// Limits on the traces explored.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Bounds {
    /// Total number of `new` events.
    pub max_sessions: usize,
    /// Cap on sessions of any single role.
    pub max_sessions_per_role: Option<usize>,
    /// Trace length, counting the corrupt event.
    pub max_events: usize,
    /// Depth of adversary-built terms substituted for ciphertext and
    /// signature variables.
    pub msg_depth: usize,
    /// Candidate corrupt events. The empty set means "no corrupt event"; if
    /// it is absent, every trace starts with one of the listed corruptions.
    pub corrupt_sets: Vec<Vec<Name>>,
    /// Identities used in `new` events; defaults to the protocol's agents.
    pub session_agents: Option<Vec<Name>>,
    /// Roles that may be started; defaults to every non-empty role.
    pub roles: Option<Vec<usize>>,
    /// Also try one message per session that the session rejects.
    pub explore_failed_sends: bool,
}

impl Bounds {
    /// Room for `sessions` complete runs and no corruption.
    pub fn new(protocol: &Protocol, sessions: usize) -> Self {
        let longest = longest_role(protocol);
        Bounds {
            max_sessions: sessions,
            max_sessions_per_role: None,
            max_events: 1 + sessions * (1 + longest),
            msg_depth: 2,
            corrupt_sets: vec![Vec::new()],
            session_agents: None,
            roles: None,
            explore_failed_sends: false,
        }
    }

    /// Room for `sessions` complete runs of every non-empty role.
    pub fn per_role(protocol: &Protocol, sessions: usize) -> Self {
        let roles: Vec<usize> = (1..=protocol.parties())
            .filter(|&i| protocol.role(i).is_some_and(|r| !r.is_empty()))
            .collect();
        let steps: usize = roles
            .iter()
            .map(|&i| 1 + protocol.role(i).map_or(0, |r| r.len()))
            .sum();
        Bounds {
            max_sessions: sessions * roles.len(),
            max_sessions_per_role: Some(sessions),
            max_events: 1 + sessions * steps,
            ..Bounds::new(protocol, sessions)
        }
    }

    pub fn with_corrupt_sets<I, S>(mut self, sets: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: IntoIterator,
        S::Item: AsRef<str>,
    {
        self.corrupt_sets = sets
            .into_iter()
            .map(|s| s.into_iter().map(|a| Name::from(a.as_ref())).collect())
            .collect();
        self
    }
}

/// Depth-first enumeration of every trace within `bounds`, each visited
/// once, starting with the empty trace. `visit` may stop the search early.
pub fn enumerate_traces<B>(
    protocol: &Protocol,
    bounds: &Bounds,
    mut visit: impl FnMut(&Trace) -> ControlFlow<B>,
) -> ControlFlow<B> {
    let mut tr = Trace::new();
    dfs(protocol, bounds, &mut tr, &mut visit)
}

/// Returns the first `Some` produced by `pred`, in the order
/// [`enumerate_traces`] visits traces. With `jobs > 1` the subtrees below the
/// first event are searched in parallel.
pub fn find_first_trace<R: Send>(
    protocol: &Protocol,
    bounds: &Bounds,
    jobs: usize,
    pred: impl Fn(&Trace) -> Option<R> + Sync,
) -> Option<R> {
    let root = Trace::new();
    if let Some(r) = pred(&root) {
        return Some(r);
    }
    if bounds.max_events == 0 {
        return None;
    }
    let search = |event: &Event| {
        let mut tr = Trace::new();
        tr.push(protocol, event.clone())
            .expect("generated events apply");
        let mut visit = |t: &Trace| match pred(t) {
            Some(r) => ControlFlow::Break(r),
            None => ControlFlow::Continue(()),
        };
        match dfs(protocol, bounds, &mut tr, &mut visit) {
            ControlFlow::Break(r) => Some(r),
            ControlFlow::Continue(()) => None,
        }
    };
    let first = successors(protocol, bounds, &root);
    if jobs <= 1 {
        return first.iter().find_map(search);
    }
    match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
        Ok(pool) => pool.install(|| first.par_iter().find_map_first(search)),
        Err(_) => first.iter().find_map(search),
    }
}

fn dfs<B>(
    protocol: &Protocol,
    bounds: &Bounds,
    tr: &mut Trace,
    visit: &mut impl FnMut(&Trace) -> ControlFlow<B>,
) -> ControlFlow<B> {
    visit(tr)?;
    if tr.len() >= bounds.max_events {
        return ControlFlow::Continue(());
    }
    for event in successors(protocol, bounds, tr) {
        tr.push(protocol, event).expect("generated events apply");
        let flow = dfs(protocol, bounds, tr, visit);
        tr.pop();
        flow?;
    }
    ControlFlow::Continue(())
}

fn successors(protocol: &Protocol, bounds: &Bounds, tr: &Trace) -> Vec<Event> {
    let mut out = Vec::new();
    if tr.is_empty() {
        for set in bounds.corrupt_sets.iter().filter(|s| !s.is_empty()) {
            out.push(Event::Corrupt(set.clone()));
        }
        if !bounds.corrupt_sets.iter().any(Vec::is_empty) {
            return out;
        }
    }
    let g = tr.last();
    if g.sessions.len() < bounds.max_sessions {
        let agents = bounds
            .session_agents
            .clone()
            .unwrap_or_else(|| protocol.agents.clone());
        let tuples = tuples(&agents, protocol.parties());
        let roles: Vec<usize> = match &bounds.roles {
            Some(r) => r.clone(),
            None => (1..=protocol.parties())
                .filter(|&i| !protocol.roles[i - 1].is_empty())
                .collect(),
        };
        for role in roles {
            let started = g.sessions.iter().filter(|s| s.id.role == role).count();
            if bounds
                .max_sessions_per_role
                .is_some_and(|cap| started >= cap)
            {
                continue;
            }
            for t in &tuples {
                out.push(Event::New {
                    role,
                    agents: t.clone(),
                });
            }
        }
    }
    let generator = CandidateGenerator::new(protocol, bounds, tr);
    for s in &g.sessions {
        for message in generator.messages_for(s.id.number) {
            out.push(Event::Send {
                session: s.id.number,
                message,
            });
        }
        if bounds.explore_failed_sends {
            if let Some(junk) = generator.rejected_message(s.id.number) {
                out.push(Event::Send {
                    session: s.id.number,
                    message: junk,
                });
            }
        }
    }
    out
}

fn tuples(agents: &[Name], k: usize) -> Vec<Vec<Name>> {
    let mut out: Vec<Vec<Name>> = vec![Vec::new()];
    for _ in 0..k {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                agents.iter().map(move |a| {
                    let mut t = prefix.clone();
                    t.push(a.clone());
                    t
                })
            })
            .collect();
    }
    out
}

/// Label for a built term, and the label-variable binding it creates.
type LabelChoice = (Option<Label>, Option<(Name, Label)>);

/// Adversary messages worth sending in a given state.
///
/// For a session waiting on pattern `p`, the candidates are the deducible
/// instances of `σ(p)`: sub-patterns are filled from ciphertexts and
/// signatures the adversary has already seen, or built by the adversary with
/// a label `adv(i)` that does not occur in the trace yet. Remaining variables
/// range over known identities, known or corrupted nonces, and ciphertexts or
/// signatures of bounded depth.
pub struct CandidateGenerator<'a> {
    protocol: &'a Protocol,
    bounds: &'a Bounds,
    trace: &'a Trace,
    deducer: Deducer,
    fresh: Option<Label>,
    agents: Vec<Term>,
    nonces: Vec<Term>,
    seen: BTreeMap<Sort, Vec<Term>>,
    built: OnceCell<BTreeMap<Sort, Vec<Term>>>,
}

impl<'a> CandidateGenerator<'a> {
    pub fn new(protocol: &'a Protocol, bounds: &'a Bounds, trace: &'a Trace) -> Self {
        let g = trace.last();
        let deducer = protocol.deducer(g);
        let fresh = match protocol.mode {
            Mode::Labeled => {
                let used = trace.used_adversary_labels();
                Some(Label::Adversary(
                    (1..).find(|i| !used.contains(i)).expect("unbounded range"),
                ))
            }
            Mode::Unlabeled => None,
        };
        let analyzed = deducer.analyzed();
        let mut agents: BTreeSet<Term> = protocol
            .agents
            .iter()
            .map(|a| Term::Agent(a.clone()))
            .collect();
        let mut nonces: BTreeSet<Term> = BTreeSet::new();
        let mut seen: BTreeMap<Sort, Vec<Term>> = BTreeMap::new();
        for t in analyzed {
            match t.sort() {
                Sort::AgentId => {
                    agents.insert(t.clone());
                }
                Sort::Nonce => {
                    nonces.insert(t.clone());
                }
                s @ (Sort::Ciphertext | Sort::Signature) => {
                    seen.entry(s).or_default().push(t.clone())
                }
                _ => {}
            }
        }
        let indices: BTreeSet<u32> = (1..=protocol.parties() as u32)
            .flat_map(|i| protocol.nonce_indices(i))
            .collect();
        for c in &g.corrupted {
            for &j in &indices {
                for s in 1..=bounds.max_sessions.max(1) as u32 {
                    nonces.insert(Term::Nonce {
                        owner: c.clone(),
                        index: j,
                        session: s,
                    });
                }
            }
        }
        CandidateGenerator {
            protocol,
            bounds,
            trace,
            deducer,
            fresh,
            agents: agents.into_iter().collect(),
            nonces: nonces.into_iter().collect(),
            seen,
            built: OnceCell::new(),
        }
    }

    /// Label given to every term the adversary builds in this state.
    pub fn fresh_label(&self) -> Option<&Label> {
        self.fresh.as_ref()
    }

    /// Accepted candidates for `session`, in canonical order. Empty if the
    /// session has finished.
    pub fn messages_for(&self, session: u32) -> Vec<Term> {
        let Some(s) = self.trace.last().session(session) else {
            return Vec::new();
        };
        let Some(step) = self
            .protocol
            .role(s.local.role)
            .and_then(|r| r.steps.get(s.local.point - 1))
        else {
            return Vec::new();
        };
        let out: BTreeSet<Term> = match &step.receive {
            Receive::Init => {
                s.id.agents
                    .get(s.local.role - 1)
                    .map(|a| Term::Agent(a.clone()))
                    .into_iter()
                    .collect()
            }
            Receive::Pattern(p) => {
                let q = s.local.sigma.apply(p);
                let mut found = Vec::new();
                self.instances(&q, &Substitution::new(), &mut found);
                found.into_iter().map(|(t, _)| t).collect()
            }
        };
        out.into_iter().collect()
    }

    /// A deducible message that `session` would reject, if the session is
    /// still waiting for input.
    pub fn rejected_message(&self, session: u32) -> Option<Term> {
        let s = self.trace.last().session(session)?;
        let step = self
            .protocol
            .role(s.local.role)?
            .steps
            .get(s.local.point - 1)?;
        let Receive::Pattern(p) = &step.receive else {
            return None;
        };
        let q = s.local.sigma.apply(p);
        self.agents
            .iter()
            .find(|a| crate::term::match_term(&q, a).is_none())
            .cloned()
    }

    fn instances(&self, q: &Term, theta: &Substitution, out: &mut Vec<(Term, Substitution)>) {
        let q = theta.apply(q);
        if q.is_ground() {
            if self.deducer.can_deduce(&q) {
                out.push((q, theta.clone()));
            }
            return;
        }
        match &q {
            Term::Var(v) => {
                for filler in self.pool(v.sort()) {
                    let mut next = theta.clone();
                    if next.bind(*v, filler.clone()).is_ok() {
                        out.push((filler.clone(), next));
                    }
                }
            }
            Term::Key(kind, a) => {
                let mut inner = Vec::new();
                self.instances(a, theta, &mut inner);
                for (ta, next) in inner {
                    let key = Term::key(*kind, ta);
                    if self.deducer.can_deduce(&key) {
                        out.push((key, next));
                    }
                }
            }
            Term::Pair(l, r) => {
                let mut left = Vec::new();
                self.instances(l, theta, &mut left);
                for (tl, t1) in left {
                    let mut right = Vec::new();
                    self.instances(r, &t1, &mut right);
                    for (tr, t2) in right {
                        out.push((Term::pair(tl.clone(), tr), t2));
                    }
                }
            }
            Term::Enc {
                body,
                recipient: party,
                label,
            }
            | Term::Sig {
                body,
                signer: party,
                label,
            } => {
                let is_enc = matches!(q, Term::Enc { .. });
                let sort = if is_enc {
                    Sort::Ciphertext
                } else {
                    Sort::Signature
                };
                for c in self.seen.get(&sort).into_iter().flatten() {
                    let mut next = theta.clone();
                    if match_into(&q, c, &mut next) {
                        out.push((c.clone(), next));
                    }
                }
                let Some((lab, binding)) = self.synth_label(label, theta) else {
                    return;
                };
                let mut parties = Vec::new();
                self.instances(party, theta, &mut parties);
                for (tp, mut t1) in parties {
                    let kind = if is_enc { KeyKind::Enc } else { KeyKind::Sign };
                    if !self.deducer.can_deduce(&Term::key(kind, tp.clone())) {
                        continue;
                    }
                    if let Some((n, l)) = &binding {
                        if t1.bind_label(n.clone(), l.clone()).is_err() {
                            continue;
                        }
                    }
                    let mut bodies = Vec::new();
                    self.instances(body, &t1, &mut bodies);
                    for (tb, t2) in bodies {
                        let t = if is_enc {
                            Term::enc(tb, tp.clone(), lab.clone())
                        } else {
                            Term::sig(tb, tp.clone(), lab.clone())
                        };
                        out.push((t, t2));
                    }
                }
            }
            Term::Agent(_) | Term::Nonce { .. } => unreachable!("atoms are ground"),
        }
    }

    /// Label for an adversary-built term in place of pattern label `label`,
    /// and the label-variable binding this creates.
    fn synth_label(&self, label: &Option<Label>, theta: &Substitution) -> Option<LabelChoice> {
        match (self.protocol.mode, label) {
            (Mode::Unlabeled, None) => Some((None, None)),
            (Mode::Unlabeled, Some(_)) | (Mode::Labeled, None) => None,
            (Mode::Labeled, Some(Label::Agent(_))) => None,
            (Mode::Labeled, Some(l @ Label::Adversary(_))) => Some((Some(l.clone()), None)),
            (Mode::Labeled, Some(Label::Var(n))) => match theta.get_label(n) {
                Some(l @ Label::Adversary(_)) => Some((Some(l.clone()), None)),
                Some(_) => None,
                None => {
                    let fresh = self.fresh.clone()?;
                    Some((Some(fresh.clone()), Some((n.clone(), fresh))))
                }
            },
        }
    }

    fn pool(&self, sort: Sort) -> &[Term] {
        match sort {
            Sort::AgentId => &self.agents,
            Sort::Nonce => &self.nonces,
            Sort::Ciphertext | Sort::Signature => self
                .built
                .get_or_init(|| self.build_pools())
                .get(&sort)
                .map_or(&[], Vec::as_slice),
            _ => &[],
        }
    }

    /// Seen ciphertexts and signatures, plus ones the adversary builds from
    /// messages of depth below `msg_depth`.
    fn build_pools(&self) -> BTreeMap<Sort, Vec<Term>> {
        let depth = self.bounds.msg_depth.max(2);
        let mut atoms: BTreeSet<Term> = self.agents.iter().chain(&self.nonces).cloned().collect();
        for a in &self.protocol.agents {
            atoms.insert(Term::ek(Term::Agent(a.clone())));
            atoms.insert(Term::vk(Term::Agent(a.clone())));
        }
        for t in self.deducer.analyzed() {
            if t.sort().is_message() && t.depth() < depth {
                atoms.insert(t.clone());
            }
        }
        let mut bodies: BTreeSet<Term> = atoms.clone();
        let mut frontier: Vec<Term> = atoms.iter().cloned().collect();
        for _ in 2..depth {
            let mut next = Vec::new();
            for l in &frontier {
                for r in &atoms {
                    next.push(Term::pair(l.clone(), r.clone()));
                    next.push(Term::pair(r.clone(), l.clone()));
                }
            }
            frontier = next
                .into_iter()
                .filter(|t| bodies.insert(t.clone()))
                .collect();
        }
        let recipients: Vec<Term> = self
            .agents
            .iter()
            .filter(|a| self.deducer.can_deduce(&Term::ek((*a).clone())))
            .cloned()
            .collect();
        let signers: Vec<Term> = self
            .agents
            .iter()
            .filter(|a| self.deducer.can_deduce(&Term::sk((*a).clone())))
            .cloned()
            .collect();
        let label = match self.protocol.mode {
            Mode::Labeled => self.fresh.clone(),
            Mode::Unlabeled => None,
        };
        let mut ciphers: BTreeSet<Term> = self
            .seen
            .get(&Sort::Ciphertext)
            .into_iter()
            .flatten()
            .cloned()
            .collect();
        let mut sigs: BTreeSet<Term> = self
            .seen
            .get(&Sort::Signature)
            .into_iter()
            .flatten()
            .cloned()
            .collect();
        for b in &bodies {
            for r in &recipients {
                ciphers.insert(Term::enc(b.clone(), r.clone(), label.clone()));
            }
            for s in &signers {
                sigs.insert(Term::sig(b.clone(), s.clone(), label.clone()));
            }
        }
        BTreeMap::from([
            (Sort::Ciphertext, ciphers.into_iter().collect()),
            (Sort::Signature, sigs.into_iter().collect()),
        ])
    }
}

/// Number of steps in the longest role.
pub(crate) fn longest_role(protocol: &Protocol) -> usize {
    protocol.roles.iter().map(|r| r.len()).max().unwrap_or(0)
}
