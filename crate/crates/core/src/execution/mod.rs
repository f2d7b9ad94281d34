//! Protocols as state-transition systems driven by the adversary.
//!
//! A global state is `(SId, f, H)`: the running sessions, their local states
//! `(σ, i, p)`, and the messages emitted by honest agents. The adversary
//! moves the system with three events: `corrupt` (once, first), `new` and
//! `send`.

mod explore;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::deduction::{Deducer, KnowledgeSet};
use crate::term::{match_term, Label, Mode, Name, Substitution, Term, Var};

pub use explore::{enumerate_traces, find_first_trace, Bounds, CandidateGenerator};

/// What a role expects at a step.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Receive {
    /// Start of the role; triggered by any message.
    Init,
    Pattern(Term),
}

/// What a role emits at a step.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Emit {
    Message(Term),
    Stop,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Step {
    pub receive: Receive,
    pub emit: Emit,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct Role {
    pub steps: Vec<Step>,
}

impl Role {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// A `k`-party protocol: role `j` (1-based) is played by agent variable `A_j`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Protocol {
    pub name: String,
    pub mode: Mode,
    /// Identities the adversary knows and may use when starting sessions.
    pub agents: Vec<Name>,
    /// One role per party; `roles.len()` is the party count `k`.
    pub roles: Vec<Role>,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("role {role} step {step}: `init` may only appear as the first receive")]
    MisplacedInit { role: usize, step: usize },
    #[error("role {role} step {step}: `stop` may only appear as the last emission")]
    MisplacedStop { role: usize, step: usize },
    #[error("role {role} step {step}: {message}")]
    BadTerm {
        role: usize,
        step: usize,
        message: String,
    },
    #[error("role {role} step {step}: variable {var} is emitted before it is bound")]
    UnboundVariable {
        role: usize,
        step: usize,
        var: String,
    },
    #[error("protocol has no parties")]
    NoParties,
}

impl Protocol {
    pub fn parties(&self) -> usize {
        self.roles.len()
    }

    /// Role `i`, 1-based.
    pub fn role(&self, i: usize) -> Option<&Role> {
        i.checked_sub(1).and_then(|j| self.roles.get(j))
    }

    /// Well-formedness: `init`/`stop` placement, sorts, label mode, variable
    /// indices within `1..=k`, and every emitted variable bound by the time it
    /// is emitted.
    pub fn validate(&self) -> Result<(), ProtocolError> {
        if self.roles.is_empty() {
            return Err(ProtocolError::NoParties);
        }
        let k = self.parties() as u32;
        for (ri, role) in self.roles.iter().enumerate() {
            let r = ri + 1;
            let mut bound: BTreeSet<Var> = (1..=k).map(Var::Agent).collect();
            let mut bound_labels: BTreeSet<Name> = BTreeSet::new();
            for (si, step) in role.steps.iter().enumerate() {
                let s = si + 1;
                let bad = |message: String| ProtocolError::BadTerm {
                    role: r,
                    step: s,
                    message,
                };
                match &step.receive {
                    Receive::Init if si != 0 => {
                        return Err(ProtocolError::MisplacedInit { role: r, step: s })
                    }
                    Receive::Init => {}
                    Receive::Pattern(t) => {
                        self.check_term(t, k).map_err(bad)?;
                        bound.extend(t.vars());
                        bound_labels.extend(t.label_vars());
                    }
                }
                match &step.emit {
                    Emit::Stop if si + 1 != role.steps.len() => {
                        return Err(ProtocolError::MisplacedStop { role: r, step: s })
                    }
                    Emit::Stop => {}
                    Emit::Message(t) => {
                        self.check_term(t, k).map_err(bad)?;
                        for v in t.vars() {
                            let generated =
                                matches!(v, Var::Nonce { owner, .. } if owner == r as u32);
                            if !generated && !bound.contains(&v) {
                                return Err(ProtocolError::UnboundVariable {
                                    role: r,
                                    step: s,
                                    var: v.to_string(),
                                });
                            }
                        }
                        for l in t.label_vars() {
                            if !bound_labels.contains(&l) {
                                return Err(ProtocolError::UnboundVariable {
                                    role: r,
                                    step: s,
                                    var: l.to_string(),
                                });
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn check_term(&self, t: &Term, k: u32) -> Result<(), String> {
        t.check_sorts().map_err(|e| e.to_string())?;
        if !t.in_mode(self.mode) {
            return Err(match self.mode {
                Mode::Labeled => {
                    format!("`{t}` has an unlabeled ciphertext or signature in a labeled protocol")
                }
                Mode::Unlabeled => format!("`{t}` carries labels in an unlabeled protocol"),
            });
        }
        for v in t.vars() {
            if v.owner() == 0 || v.owner() > k {
                return Err(format!("variable {v} refers to a party outside 1..={k}"));
            }
        }
        Ok(())
    }

    /// Removes every label from every role.
    pub fn erase(&self) -> Protocol {
        let roles = self
            .roles
            .iter()
            .map(|role| Role {
                steps: role
                    .steps
                    .iter()
                    .map(|s| Step {
                        receive: match &s.receive {
                            Receive::Init => Receive::Init,
                            Receive::Pattern(t) => Receive::Pattern(t.erase()),
                        },
                        emit: match &s.emit {
                            Emit::Stop => Emit::Stop,
                            Emit::Message(t) => Emit::Message(t.erase()),
                        },
                    })
                    .collect(),
            })
            .collect();
        Protocol {
            name: self.name.clone(),
            mode: Mode::Unlabeled,
            agents: self.agents.clone(),
            roles,
        }
    }

    /// Indices `j` such that `X^j_{A_owner}` occurs somewhere in the protocol.
    pub fn nonce_indices(&self, owner: u32) -> BTreeSet<u32> {
        let mut out = BTreeSet::new();
        for t in self.terms() {
            for v in t.vars() {
                if let Var::Nonce { index, owner: o } = v {
                    if o == owner {
                        out.insert(index);
                    }
                }
            }
        }
        out
    }

    /// Every receive pattern and emitted message.
    pub fn terms(&self) -> impl Iterator<Item = &Term> {
        self.roles
            .iter()
            .flat_map(|r| r.steps.iter())
            .flat_map(|s| {
                let recv = match &s.receive {
                    Receive::Pattern(t) => Some(t),
                    Receive::Init => None,
                };
                let emit = match &s.emit {
                    Emit::Message(t) => Some(t),
                    Emit::Stop => None,
                };
                recv.into_iter().chain(emit)
            })
    }

    pub fn knowledge(&self, state: &GlobalState) -> KnowledgeSet {
        KnowledgeSet {
            terms: state.knowledge.clone(),
            corrupted: state.corrupted.clone(),
            universe: self.agents.iter().cloned().collect(),
        }
    }

    pub fn deducer(&self, state: &GlobalState) -> Deducer {
        Deducer::new(&self.knowledge(state), self.mode)
    }

    /// `corrupt(a_1..a_l)`: the adversary learns the agents' secret keys and
    /// every nonce they generate.
    pub fn step_corrupt(&self, g: &GlobalState, agents: &[Name]) -> Result<GlobalState, ExecError> {
        if !g.is_initial() {
            return Err(ExecError::LateCorrupt);
        }
        let mut next = g.clone();
        for a in agents {
            self.check_agent(a)?;
            let agent = Term::Agent(a.clone());
            next.knowledge.insert(Term::dk(agent.clone()));
            next.knowledge.insert(Term::sk(agent));
            next.corrupted.insert(a.clone());
        }
        Ok(next)
    }

    /// `new(i, a_1..a_k)`: starts session `|SId| + 1` of role `i`.
    pub fn step_new(
        &self,
        g: &GlobalState,
        role: usize,
        agents: &[Name],
    ) -> Result<GlobalState, ExecError> {
        if self.role(role).is_none() {
            return Err(ExecError::BadRole {
                role,
                parties: self.parties(),
            });
        }
        if agents.len() != self.parties() {
            return Err(ExecError::Arity {
                expected: self.parties(),
                found: agents.len(),
            });
        }
        for a in agents {
            self.check_agent(a)?;
        }
        let number = g.sessions.len() as u32 + 1;
        let mut sigma = Substitution::new();
        for (j, a) in agents.iter().enumerate() {
            sigma
                .bind(Var::Agent(j as u32 + 1), Term::Agent(a.clone()))
                .expect("fresh agent binding");
        }
        let player = &agents[role - 1];
        for index in self.nonce_indices(role as u32) {
            let n = Term::Nonce {
                owner: player.clone(),
                index,
                session: number,
            };
            sigma
                .bind(
                    Var::Nonce {
                        index,
                        owner: role as u32,
                    },
                    n,
                )
                .expect("fresh nonce binding");
        }
        let mut next = g.clone();
        next.sessions.push(Session {
            id: SessionId {
                number,
                role,
                agents: agents.to_vec(),
            },
            local: LocalState {
                sigma,
                role,
                point: 1,
            },
        });
        Ok(next)
    }

    /// `send(sid, m)`. Returns the next state and whether the session accepted
    /// the message; a rejected message leaves the state unchanged.
    pub fn step_send(
        &self,
        g: &GlobalState,
        session: u32,
        m: &Term,
    ) -> Result<(GlobalState, bool), ExecError> {
        let idx = g
            .session_index(session)
            .ok_or(ExecError::UnknownSession(session))?;
        let local = &g.sessions[idx].local;
        let role = self.role(local.role).ok_or(ExecError::BadRole {
            role: local.role,
            parties: self.parties(),
        })?;
        let Some(step) = role.steps.get(local.point - 1) else {
            return Ok((g.clone(), false));
        };
        let theta = match &step.receive {
            Receive::Init => Some(Substitution::new()),
            Receive::Pattern(p) => match_term(&local.sigma.apply(p), m),
        };
        let Some(theta) = theta else {
            return Ok((g.clone(), false));
        };
        let sigma = local
            .sigma
            .union(&theta)
            .expect("match only binds unbound variables");
        let mut next = g.clone();
        if let Emit::Message(r) = &step.emit {
            next.knowledge.insert(sigma.apply(r));
        }
        let entry = &mut next.sessions[idx].local;
        entry.sigma = sigma;
        entry.point += 1;
        Ok((next, true))
    }

    /// Applies an event to a state. `first` tells whether this is the first
    /// event of the trace.
    pub fn step(
        &self,
        g: &GlobalState,
        event: &Event,
        first: bool,
    ) -> Result<(GlobalState, bool), ExecError> {
        match event {
            Event::Corrupt(agents) => {
                if !first {
                    return Err(ExecError::LateCorrupt);
                }
                Ok((self.step_corrupt(g, agents)?, true))
            }
            Event::New { role, agents } => Ok((self.step_new(g, *role, agents)?, true)),
            Event::Send { session, message } => self.step_send(g, *session, message),
        }
    }

    fn check_agent(&self, a: &Name) -> Result<(), ExecError> {
        if self.agents.contains(a) {
            Ok(())
        } else {
            Err(ExecError::UnknownAgent(a.to_string()))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum ExecError {
    #[error("corrupt can only be the first event")]
    LateCorrupt,
    #[error("role {role} does not exist (protocol has {parties} parties)")]
    BadRole { role: usize, parties: usize },
    #[error("expected {expected} identities, found {found}")]
    Arity { expected: usize, found: usize },
    #[error("agent {0} is not declared by the protocol")]
    UnknownAgent(String),
    #[error("no session numbered {0}")]
    UnknownSession(u32),
    #[error("trace has {states} states for {events} events")]
    Shape { states: usize, events: usize },
}

/// `(n, j, (a_1..a_k))`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SessionId {
    pub number: u32,
    pub role: usize,
    #[serde(with = "name_vec")]
    pub agents: Vec<Name>,
}

impl fmt::Display for SessionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, (", self.number, self.role)?;
        for (i, a) in self.agents.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            f.write_str(a)?;
        }
        f.write_str("))")
    }
}

/// `(σ, i, p)`: bindings, role index, and control point (1-based; `p =
/// len + 1` once the role has finished).
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LocalState {
    #[serde(rename = "bindings")]
    pub sigma: Substitution,
    pub role: usize,
    pub point: usize,
}

impl LocalState {
    pub fn erase(&self) -> LocalState {
        LocalState {
            sigma: self.sigma.erase(),
            role: self.role,
            point: self.point,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Session {
    pub id: SessionId,
    #[serde(flatten)]
    pub local: LocalState,
}

/// `(SId, f, H)`, plus the agents corrupted so far.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GlobalState {
    /// Sessions in creation order; session `n` is at index `n - 1`.
    pub sessions: Vec<Session>,
    pub knowledge: BTreeSet<Term>,
    #[serde(with = "crate::deduction::names")]
    pub corrupted: BTreeSet<Name>,
}

impl GlobalState {
    pub fn initial() -> Self {
        Self::default()
    }

    pub fn is_initial(&self) -> bool {
        self.sessions.is_empty() && self.knowledge.is_empty() && self.corrupted.is_empty()
    }

    pub fn session_index(&self, number: u32) -> Option<usize> {
        let idx = (number as usize).checked_sub(1)?;
        (idx < self.sessions.len()).then_some(idx)
    }

    pub fn session(&self, number: u32) -> Option<&Session> {
        self.session_index(number).map(|i| &self.sessions[i])
    }

    pub fn erase(&self) -> GlobalState {
        GlobalState {
            sessions: self
                .sessions
                .iter()
                .map(|s| Session {
                    id: s.id.clone(),
                    local: s.local.erase(),
                })
                .collect(),
            knowledge: self.knowledge.iter().map(Term::erase).collect(),
            corrupted: self.corrupted.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Event {
    Corrupt(#[serde(with = "name_vec")] Vec<Name>),
    New {
        role: usize,
        #[serde(with = "name_vec")]
        agents: Vec<Name>,
    },
    Send {
        session: u32,
        message: Term,
    },
}

impl Event {
    pub fn erase(&self) -> Event {
        match self {
            Event::Send { session, message } => Event::Send {
                session: *session,
                message: message.erase(),
            },
            other => other.clone(),
        }
    }
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Event::Corrupt(agents) => write!(f, "corrupt({})", join(agents)),
            Event::New { role, agents } => {
                write!(f, "new({role}")?;
                for a in agents {
                    write!(f, ", {a}")?;
                }
                f.write_str(")")
            }
            Event::Send { session, message } => write!(f, "send({session}, {message})"),
        }
    }
}

fn join(names: &[Name]) -> String {
    names.iter().map(|n| &**n).collect::<Vec<_>>().join(", ")
}

mod name_vec {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::term::Name;

    pub fn serialize<S: Serializer>(v: &[Name], s: S) -> Result<S::Ok, S::Error> {
        v.iter().map(|n| &**n).collect::<Vec<&str>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Name>, D::Error> {
        Ok(Vec::<String>::deserialize(d)?
            .into_iter()
            .map(Name::from)
            .collect())
    }
}

/// Alternating sequence of global states and events, starting from the
/// initial state.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Trace {
    pub states: Vec<GlobalState>,
    pub events: Vec<Event>,
}

impl Default for Trace {
    fn default() -> Self {
        Self::new()
    }
}

impl Trace {
    pub fn new() -> Self {
        Trace {
            states: vec![GlobalState::initial()],
            events: Vec::new(),
        }
    }

    pub fn last(&self) -> &GlobalState {
        self.states.last().expect("a trace has at least one state")
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Executes `event` on the last state. For a send, returns whether the
    /// session accepted the message.
    pub fn push(&mut self, protocol: &Protocol, event: Event) -> Result<bool, ExecError> {
        let (next, accepted) = protocol.step(self.last(), &event, self.events.is_empty())?;
        self.states.push(next);
        self.events.push(event);
        Ok(accepted)
    }

    pub fn pop(&mut self) {
        if self.events.pop().is_some() {
            self.states.pop();
        }
    }

    /// Replays `events` from the initial state.
    pub fn from_events(
        protocol: &Protocol,
        events: impl IntoIterator<Item = Event>,
    ) -> Result<Trace, ExecError> {
        let mut tr = Trace::new();
        for e in events {
            tr.push(protocol, e)?;
        }
        Ok(tr)
    }

    /// Agents named by the corrupt event, if any.
    pub fn corrupted(&self) -> &[Name] {
        match self.events.first() {
            Some(Event::Corrupt(agents)) => agents,
            _ => &[],
        }
    }

    /// Pointwise label erasure of states and events.
    pub fn erase(&self) -> Trace {
        Trace {
            states: self.states.iter().map(GlobalState::erase).collect(),
            events: self.events.iter().map(Event::erase).collect(),
        }
    }

    /// Labels `adv(i)` already used in the trace.
    pub fn used_adversary_labels(&self) -> BTreeSet<u32> {
        let mut out = BTreeSet::new();
        let mut note = |t: &Term| {
            for l in t.labels() {
                if let Label::Adversary(i) = l {
                    out.insert(i);
                }
            }
        };
        for e in &self.events {
            if let Event::Send { message, .. } = e {
                note(message);
            }
        }
        for t in &self.last().knowledge {
            note(t);
        }
        out
    }

    /// Renders the trace in arrow notation, one state per block.
    pub fn to_text(&self) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        for (i, state) in self.states.iter().enumerate() {
            if i > 0 {
                let _ = writeln!(out, "  --{}-->", self.events[i - 1]);
            }
            let _ = writeln!(out, "state {i}:");
            if state.sessions.is_empty() {
                let _ = writeln!(out, "  SId = {{}}");
            }
            for s in &state.sessions {
                let _ = writeln!(
                    out,
                    "  f{} = (sigma, {}, {}) with sigma = {}",
                    s.id, s.local.role, s.local.point, s.local.sigma
                );
            }
            let h: Vec<String> = state.knowledge.iter().map(Term::to_string).collect();
            let _ = writeln!(out, "  H = {{{}}}", h.join(", "));
            if !state.corrupted.is_empty() {
                let c: Vec<&str> = state.corrupted.iter().map(|n| &**n).collect();
                let _ = writeln!(out, "  corrupted = {{{}}}", c.join(", "));
            }
        }
        out
    }
}

/// Checks that `trace` is an execution of `protocol` in which every message
/// sent by the adversary is deducible from the knowledge just before it is
/// sent (`⊢^l` for a labeled protocol, `⊢` for an unlabeled one).
///
/// A trace whose events cannot be applied at all (unknown session, corrupt
/// after the first event, wrong arity, ...) is malformed and yields an error;
/// a trace that replays to different states or sends a non-deducible message
/// yields `Ok(false)`.
pub fn is_valid_trace(protocol: &Protocol, trace: &Trace) -> Result<bool, ExecError> {
    if trace.states.len() != trace.events.len() + 1 {
        return Err(ExecError::Shape {
            states: trace.states.len(),
            events: trace.events.len(),
        });
    }
    if !trace.states[0].is_initial() {
        return Ok(false);
    }
    for (i, event) in trace.events.iter().enumerate() {
        let pre = &trace.states[i];
        if let Event::Send { message, .. } = event {
            if !protocol.deducer(pre).can_deduce(message) {
                return Ok(false);
            }
        }
        let (next, _) = protocol.step(pre, event, i == 0)?;
        if next != trace.states[i + 1] {
            return Ok(false);
        }
    }
    Ok(true)
}
