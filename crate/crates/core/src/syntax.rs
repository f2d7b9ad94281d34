//! Concrete syntax for terms, protocols, formulas and traces.
//!
//! ```text
//! protocol nsl labeled;
//! parties 2;
//! agents a1, a2, a3;
//! role 1 {
//!   init -> enc(<X1@A1, A1>, ek(A2))^ag(1);
//!   enc(<X1@A1, <X1@A2, A2>>, ek(A1))^L -> enc(X1@A2, ek(A2))^ag(1);
//! }
//! ```
//!
//! `<a, b, c>` abbreviates `<a, <b, c>>`; `#` starts a comment. Printing with
//! [`print_protocol`], [`print_trace`] or `Display` yields text that parses
//! back to an equal value.

use std::fmt::Write;

use thiserror::Error;

use crate::execution::{Emit, Event, Protocol, ProtocolError, Receive, Role, Step};
use crate::logic::{FLabel, FTerm, Formula, Quantifier};
use crate::term::{KeyKind, Label, Mode, Name, Sort, Term, Var};

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("{line}:{col}: {message}")]
    Syntax {
        line: usize,
        col: usize,
        message: String,
    },
    #[error("{line}:{col}: sort error: {message}")]
    Sort {
        line: usize,
        col: usize,
        message: String,
    },
    #[error("invalid protocol: {0}")]
    Protocol(#[from] ProtocolError),
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Num(u32),
    Sym(&'static str),
    Eof,
}

#[derive(Clone, Debug)]
struct Token {
    tok: Tok,
    line: usize,
    col: usize,
}

const SYMBOLS: &[&str] = &[
    "->", "!=", "&&", "||", "(", ")", "<", ">", ",", ";", "^", "{", "}", "@", "=", "!", ".",
];

fn lex(src: &str) -> Result<Vec<Token>, ParseError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0, 1, 1);
    let advance = |i: &mut usize, line: &mut usize, col: &mut usize, c: char| {
        *i += 1;
        if c == '\n' {
            *line += 1;
            *col = 1;
        } else {
            *col += 1;
        }
    };
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            advance(&mut i, &mut line, &mut col, c);
            continue;
        }
        if c == '#' {
            while i < chars.len() && chars[i] != '\n' {
                let ch = chars[i];
                advance(&mut i, &mut line, &mut col, ch);
            }
            continue;
        }
        let (l0, c0) = (line, col);
        if c.is_ascii_alphabetic() || c == '_' {
            let mut s = String::new();
            while i < chars.len() {
                let d = chars[i];
                let dash = d == '-' && chars.get(i + 1).is_some_and(|n| n.is_ascii_alphanumeric());
                if d.is_ascii_alphanumeric() || d == '_' || dash {
                    s.push(d);
                    advance(&mut i, &mut line, &mut col, d);
                } else {
                    break;
                }
            }
            out.push(Token {
                tok: Tok::Ident(s),
                line: l0,
                col: c0,
            });
            continue;
        }
        if c.is_ascii_digit() {
            let mut s = String::new();
            while i < chars.len() && chars[i].is_ascii_digit() {
                s.push(chars[i]);
                let ch = chars[i];
                advance(&mut i, &mut line, &mut col, ch);
            }
            let n = s.parse().map_err(|_| ParseError::Syntax {
                line: l0,
                col: c0,
                message: format!("number {s} is too large"),
            })?;
            out.push(Token {
                tok: Tok::Num(n),
                line: l0,
                col: c0,
            });
            continue;
        }
        let rest: String = chars[i..chars.len().min(i + 2)].iter().collect();
        let Some(sym) = SYMBOLS.iter().find(|s| rest.starts_with(**s)) else {
            return Err(ParseError::Syntax {
                line,
                col,
                message: format!("unexpected character `{c}`"),
            });
        };
        for _ in 0..sym.len() {
            let ch = chars[i];
            advance(&mut i, &mut line, &mut col, ch);
        }
        out.push(Token {
            tok: Tok::Sym(sym),
            line: l0,
            col: c0,
        });
    }
    out.push(Token {
        tok: Tok::Eof,
        line,
        col,
    });
    Ok(out)
}

const RESERVED: &[&str] = &[
    "ek", "dk", "sk", "vk", "n", "enc", "sig", "ag", "adv", "init", "stop", "NC", "LS", "forall",
    "exists", "as",
];

/// Where a term is being parsed.
#[derive(Clone, Copy, PartialEq, Eq)]
enum Ctx {
    /// Protocol, trace or knowledge term: variables allowed, no `ς(x)`.
    Plain,
    /// Formula term: `ς(x)` allowed, bare variables rejected.
    Formula,
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn new(src: &str) -> Result<Self, ParseError> {
        Ok(Parser {
            toks: lex(src)?,
            pos: 0,
        })
    }

    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_at(&self, k: usize) -> &Tok {
        &self.toks[(self.pos + k).min(self.toks.len() - 1)].tok
    }

    fn here(&self) -> (usize, usize) {
        let t = &self.toks[self.pos];
        (t.line, t.col)
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn err<T>(&self, message: impl Into<String>) -> Result<T, ParseError> {
        let (line, col) = self.here();
        Err(ParseError::Syntax {
            line,
            col,
            message: message.into(),
        })
    }

    fn sort_err<T>(&self, at: (usize, usize), message: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError::Sort {
            line: at.0,
            col: at.1,
            message: message.into(),
        })
    }

    fn describe(t: &Tok) -> String {
        match t {
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Num(n) => format!("`{n}`"),
            Tok::Sym(s) => format!("`{s}`"),
            Tok::Eof => "end of input".to_string(),
        }
    }

    fn is_sym(&self, s: &str) -> bool {
        matches!(self.peek(), Tok::Sym(x) if *x == s)
    }

    fn is_kw(&self, s: &str) -> bool {
        matches!(self.peek(), Tok::Ident(x) if x == s)
    }

    fn eat_sym(&mut self, s: &str) -> bool {
        if self.is_sym(s) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect_sym(&mut self, s: &str) -> Result<(), ParseError> {
        if self.eat_sym(s) {
            Ok(())
        } else {
            self.err(format!(
                "expected `{s}`, found {}",
                Self::describe(self.peek())
            ))
        }
    }

    fn expect_kw(&mut self, s: &str) -> Result<(), ParseError> {
        if self.is_kw(s) {
            self.bump();
            Ok(())
        } else {
            self.err(format!(
                "expected `{s}`, found {}",
                Self::describe(self.peek())
            ))
        }
    }

    fn ident(&mut self) -> Result<String, ParseError> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                self.bump();
                Ok(s)
            }
            t => self.err(format!("expected a name, found {}", Self::describe(&t))),
        }
    }

    fn num(&mut self) -> Result<u32, ParseError> {
        match self.peek().clone() {
            Tok::Num(n) => {
                self.bump();
                Ok(n)
            }
            t => self.err(format!("expected a number, found {}", Self::describe(&t))),
        }
    }

    fn positive(&mut self, what: &str) -> Result<u32, ParseError> {
        let at = self.here();
        let n = self.num()?;
        if n == 0 {
            return Err(ParseError::Syntax {
                line: at.0,
                col: at.1,
                message: format!("{what} must be at least 1"),
            });
        }
        Ok(n)
    }

    fn finish(&mut self) -> Result<(), ParseError> {
        match self.peek() {
            Tok::Eof => Ok(()),
            t => self.err(format!("unexpected {} after the end", Self::describe(t))),
        }
    }

    // ---- terms ----

    /// Agent variable `A<i>`.
    fn agent_var(s: &str) -> Option<u32> {
        let digits = s.strip_prefix('A')?;
        if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        digits.parse().ok().filter(|&i| i > 0)
    }

    /// `X<j>`, `C<j>` or `S<j>`, the part before `@`.
    fn indexed_var(s: &str) -> Option<(char, u32)> {
        let mut cs = s.chars();
        let head = cs.next()?;
        if !matches!(head, 'X' | 'C' | 'S') {
            return None;
        }
        let digits = cs.as_str();
        if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        digits.parse().ok().filter(|&i| i > 0).map(|i| (head, i))
    }

    /// Object variable starting at an identifier, if it is one.
    fn var(&mut self) -> Result<Option<Var>, ParseError> {
        let Tok::Ident(s) = self.peek().clone() else {
            return Ok(None);
        };
        if let Some(i) = Self::agent_var(&s) {
            self.bump();
            return Ok(Some(Var::Agent(i)));
        }
        if let Some((head, index)) = Self::indexed_var(&s) {
            if matches!(self.peek_at(1), Tok::Sym("@")) {
                self.bump();
                self.bump();
                let at = self.here();
                let owner_name = self.ident()?;
                let Some(owner) = Self::agent_var(&owner_name) else {
                    return Err(ParseError::Syntax {
                        line: at.0,
                        col: at.1,
                        message: format!(
                            "expected an agent variable after `@`, found `{owner_name}`"
                        ),
                    });
                };
                return Ok(Some(match head {
                    'X' => Var::Nonce { index, owner },
                    'C' => Var::Cipher { index, owner },
                    _ => Var::Sig { index, owner },
                }));
            }
        }
        Ok(None)
    }

    fn label(&mut self, ctx: Ctx) -> Result<FLabel, ParseError> {
        let at = self.here();
        let name = self.ident()?;
        match name.as_str() {
            "ag" | "adv" => {
                self.expect_sym("(")?;
                let i = self.num()?;
                self.expect_sym(")")?;
                Ok(FLabel::Label(if name == "ag" {
                    Label::Agent(i)
                } else {
                    Label::Adversary(i)
                }))
            }
            _ if RESERVED.contains(&name.as_str()) => Err(ParseError::Syntax {
                line: at.0,
                col: at.1,
                message: format!("`{name}` is not a label"),
            }),
            _ if ctx == Ctx::Formula => {
                self.expect_sym("(")?;
                let var = self.ident()?;
                self.expect_sym(")")?;
                Ok(FLabel::Apply {
                    sub: Name::from(name),
                    var: Name::from(var),
                })
            }
            _ => Ok(FLabel::Label(Label::Var(Name::from(name)))),
        }
    }

    fn term(&mut self, ctx: Ctx) -> Result<FTerm, ParseError> {
        let at = self.here();
        if self.eat_sym("<") {
            let mut items = vec![self.message(ctx)?];
            while self.eat_sym(",") {
                items.push(self.message(ctx)?);
            }
            self.expect_sym(">")?;
            if items.len() < 2 {
                return self.sort_err(at, "a pair needs at least two components");
            }
            let mut acc = items.pop().expect("two items");
            while let Some(l) = items.pop() {
                acc = FTerm::Pair(Box::new(l), Box::new(acc));
            }
            return Ok(acc);
        }
        if let Some(v) = self.var()? {
            if ctx == Ctx::Formula {
                return Err(ParseError::Syntax {
                    line: at.0,
                    col: at.1,
                    message: format!(
                        "variable {v} must be applied to a quantified state, as in s({v})"
                    ),
                });
            }
            return Ok(FTerm::Var(v));
        }
        let name = self.ident()?;
        match name.as_str() {
            "ek" | "dk" | "sk" | "vk" => {
                let kind = match name.as_str() {
                    "ek" => KeyKind::Enc,
                    "dk" => KeyKind::Dec,
                    "sk" => KeyKind::Sign,
                    _ => KeyKind::Verify,
                };
                self.expect_sym("(")?;
                let arg_at = self.here();
                let a = self.term(ctx)?;
                self.expect_sym(")")?;
                if a.sort() != Sort::AgentId {
                    return self.sort_err(
                        arg_at,
                        format!("`{a}` has sort {}, a key takes an agent", a.sort()),
                    );
                }
                Ok(FTerm::Key(kind, Box::new(a)))
            }
            "n" => {
                self.expect_sym("(")?;
                let owner = self.agent_name()?;
                self.expect_sym(",")?;
                let index = self.num()?;
                self.expect_sym(",")?;
                let session = self.num()?;
                self.expect_sym(")")?;
                Ok(FTerm::Nonce {
                    owner,
                    index,
                    session,
                })
            }
            "enc" | "sig" => {
                self.expect_sym("(")?;
                let body = self.message(ctx)?;
                self.expect_sym(",")?;
                let key_at = self.here();
                let key = self.term(ctx)?;
                self.expect_sym(")")?;
                let want = if name == "enc" {
                    KeyKind::Enc
                } else {
                    KeyKind::Sign
                };
                let party = match key {
                    FTerm::Key(k, a) if k == want => a,
                    other => {
                        return self.sort_err(
                            key_at,
                            format!(
                                "`{other}` has sort {}, expected {}",
                                other.sort(),
                                want.sort()
                            ),
                        )
                    }
                };
                let label = if self.eat_sym("^") {
                    Some(self.label(ctx)?)
                } else {
                    None
                };
                Ok(if name == "enc" {
                    FTerm::Enc {
                        body: Box::new(body),
                        recipient: party,
                        label,
                    }
                } else {
                    FTerm::Sig {
                        body: Box::new(body),
                        signer: party,
                        label,
                    }
                })
            }
            _ if ctx == Ctx::Formula && self.is_sym("(") => {
                if RESERVED.contains(&name.as_str()) {
                    return self
                        .sort_err(at, format!("`{name}` cannot be used as a meta-variable"));
                }
                self.bump();
                let var_at = self.here();
                let Some(var) = self.var()? else {
                    return Err(ParseError::Syntax {
                        line: var_at.0,
                        col: var_at.1,
                        message: format!(
                            "expected an object variable, found {}",
                            Self::describe(self.peek())
                        ),
                    });
                };
                self.expect_sym(")")?;
                Ok(FTerm::Apply {
                    sub: Name::from(name),
                    var,
                })
            }
            _ => {
                self.check_agent_name(&name, at)?;
                Ok(FTerm::Agent(Name::from(name)))
            }
        }
    }

    /// A term allowed inside a pair or as a payload.
    fn message(&mut self, ctx: Ctx) -> Result<FTerm, ParseError> {
        let at = self.here();
        let t = self.term(ctx)?;
        if !t.sort().is_message() {
            return self.sort_err(
                at,
                format!("`{t}` has sort {} and cannot be sent", t.sort()),
            );
        }
        Ok(t)
    }

    fn check_agent_name(&self, name: &str, at: (usize, usize)) -> Result<(), ParseError> {
        let ok = name.starts_with(|c: char| c.is_ascii_lowercase()) && !RESERVED.contains(&name);
        if ok {
            Ok(())
        } else {
            Err(ParseError::Syntax {
                line: at.0,
                col: at.1,
                message: format!(
                    "`{name}` is not a term (agent names start with a lowercase letter)"
                ),
            })
        }
    }

    fn agent_name(&mut self) -> Result<Name, ParseError> {
        let at = self.here();
        let name = self.ident()?;
        self.check_agent_name(&name, at)?;
        Ok(Name::from(name))
    }

    fn plain_term(&mut self) -> Result<Term, ParseError> {
        let t = self.term(Ctx::Plain)?;
        Ok(t.to_term().expect("plain terms have no applications"))
    }

    // ---- protocols ----

    fn protocol(&mut self) -> Result<Protocol, ParseError> {
        self.expect_kw("protocol")?;
        let name = self.ident()?;
        let mode = match self.ident()?.as_str() {
            "labeled" => Mode::Labeled,
            "unlabeled" => Mode::Unlabeled,
            other => {
                return self.err(format!(
                    "expected `labeled` or `unlabeled`, found `{other}`"
                ))
            }
        };
        self.expect_sym(";")?;
        let mut parties: Option<u32> = None;
        let mut agents: Vec<Name> = Vec::new();
        let mut roles: Vec<(u32, Role)> = Vec::new();
        loop {
            if self.is_kw("parties") {
                self.bump();
                parties = Some(self.positive("party count")?);
                self.expect_sym(";")?;
            } else if self.is_kw("agents") {
                self.bump();
                agents.push(self.agent_name()?);
                while self.eat_sym(",") {
                    agents.push(self.agent_name()?);
                }
                self.expect_sym(";")?;
            } else if self.is_kw("role") {
                self.bump();
                let at = self.here();
                let i = self.positive("role index")?;
                if roles.iter().any(|(j, _)| *j == i) {
                    return Err(ParseError::Syntax {
                        line: at.0,
                        col: at.1,
                        message: format!("role {i} is defined twice"),
                    });
                }
                roles.push((i, self.role_body()?));
            } else if matches!(self.peek(), Tok::Eof) {
                break;
            } else {
                return self.err(format!(
                    "expected `parties`, `agents` or `role`, found {}",
                    Self::describe(self.peek())
                ));
            }
        }
        let max_var = roles
            .iter()
            .flat_map(|(_, r)| &r.steps)
            .flat_map(|s| {
                let mut v = Vec::new();
                if let Receive::Pattern(t) = &s.receive {
                    v.extend(t.vars());
                }
                if let Emit::Message(t) = &s.emit {
                    v.extend(t.vars());
                }
                v
            })
            .map(|v| v.owner())
            .max()
            .unwrap_or(0);
        let max_role = roles.iter().map(|(i, _)| *i).max().unwrap_or(0);
        let k = parties.unwrap_or(max_role.max(max_var));
        if max_role > k {
            return self.err(format!("role {max_role} exceeds the declared {k} parties"));
        }
        let mut all = vec![Role::default(); k as usize];
        for (i, r) in roles {
            all[i as usize - 1] = r;
        }
        let p = Protocol {
            name,
            mode,
            agents,
            roles: all,
        };
        p.validate()?;
        Ok(p)
    }

    fn role_body(&mut self) -> Result<Role, ParseError> {
        self.expect_sym("{")?;
        let mut steps = Vec::new();
        while !self.eat_sym("}") {
            let receive = if self.is_kw("init") {
                self.bump();
                Receive::Init
            } else {
                Receive::Pattern(self.checked_message()?)
            };
            self.expect_sym("->")?;
            let emit = if self.is_kw("stop") {
                self.bump();
                Emit::Stop
            } else {
                Emit::Message(self.checked_message()?)
            };
            self.expect_sym(";")?;
            steps.push(Step { receive, emit });
        }
        Ok(Role { steps })
    }

    fn checked_message(&mut self) -> Result<Term, ParseError> {
        let at = self.here();
        let t = self.plain_term()?;
        if !t.sort().is_message() {
            return self.sort_err(
                at,
                format!("`{t}` has sort {} and cannot be sent", t.sort()),
            );
        }
        Ok(t)
    }

    // ---- formulas ----

    fn formula(&mut self) -> Result<Formula, ParseError> {
        if self.is_kw("forall") || self.is_kw("exists") {
            let q = if self.ident()? == "forall" {
                Quantifier::Forall
            } else {
                Quantifier::Exists
            };
            self.expect_kw("LS")?;
            self.expect_sym("(")?;
            let role = self.positive("role index")? as usize;
            self.expect_sym(",")?;
            let point = self.positive("control point")? as usize;
            self.expect_sym(")")?;
            self.expect_kw("as")?;
            let at = self.here();
            let sub = self.ident()?;
            if RESERVED.contains(&sub.as_str()) || Self::agent_var(&sub).is_some() {
                return Err(ParseError::Syntax {
                    line: at.0,
                    col: at.1,
                    message: format!("`{sub}` cannot name a local state"),
                });
            }
            self.expect_sym(".")?;
            let body = self.formula()?;
            return Ok(Formula::Quant {
                q,
                role,
                point,
                sub: Name::from(sub),
                body: Box::new(body),
            });
        }
        let lhs = self.disjunction()?;
        if self.eat_sym("->") {
            let rhs = self.formula()?;
            return Ok(Formula::implies(lhs, rhs));
        }
        Ok(lhs)
    }

    fn disjunction(&mut self) -> Result<Formula, ParseError> {
        let mut acc = self.conjunction()?;
        while self.eat_sym("||") {
            let rhs = self.conjunction_or_quant()?;
            acc = Formula::or(acc, rhs);
        }
        Ok(acc)
    }

    fn conjunction(&mut self) -> Result<Formula, ParseError> {
        let mut acc = self.unary()?;
        while self.eat_sym("&&") {
            let rhs = self.unary_or_quant()?;
            acc = Formula::and(acc, rhs);
        }
        Ok(acc)
    }

    /// A quantifier in operand position extends to the end of the formula.
    fn conjunction_or_quant(&mut self) -> Result<Formula, ParseError> {
        if self.is_kw("forall") || self.is_kw("exists") {
            self.formula()
        } else {
            self.conjunction()
        }
    }

    fn unary_or_quant(&mut self) -> Result<Formula, ParseError> {
        if self.is_kw("forall") || self.is_kw("exists") {
            self.formula()
        } else {
            self.unary()
        }
    }

    fn unary(&mut self) -> Result<Formula, ParseError> {
        if self.eat_sym("!") {
            let inner = if self.is_kw("forall") || self.is_kw("exists") {
                self.formula()?
            } else {
                self.unary()?
            };
            return Ok(Formula::not(inner));
        }
        if self.is_sym("(") {
            self.bump();
            let f = self.formula()?;
            self.expect_sym(")")?;
            return Ok(f);
        }
        if self.is_kw("NC") {
            self.bump();
            self.expect_sym("(")?;
            let t = self.term(Ctx::Formula)?;
            self.expect_sym(")")?;
            return Ok(Formula::NC(t));
        }
        let lhs = self.term(Ctx::Formula)?;
        if self.eat_sym("=") {
            Ok(Formula::Eq(lhs, self.term(Ctx::Formula)?))
        } else if self.eat_sym("!=") {
            Ok(Formula::Neq(lhs, self.term(Ctx::Formula)?))
        } else {
            self.err(format!(
                "expected `=` or `!=`, found {}",
                Self::describe(self.peek())
            ))
        }
    }

    // ---- traces ----

    fn trace(&mut self) -> Result<TraceScript, ParseError> {
        self.expect_kw("trace")?;
        let name = self.ident()?;
        let protocol = if self.is_kw("for") {
            self.bump();
            Some(self.ident()?)
        } else {
            None
        };
        self.expect_sym(";")?;
        let mut events = Vec::new();
        while !matches!(self.peek(), Tok::Eof) {
            events.push(self.event()?);
            self.expect_sym(";")?;
        }
        Ok(TraceScript {
            name,
            protocol,
            events,
        })
    }

    fn event(&mut self) -> Result<Event, ParseError> {
        let kw = self.ident()?;
        self.expect_sym("(")?;
        let e = match kw.as_str() {
            "corrupt" => {
                let mut agents = Vec::new();
                if !self.is_sym(")") {
                    agents.push(self.agent_name()?);
                    while self.eat_sym(",") {
                        agents.push(self.agent_name()?);
                    }
                }
                Event::Corrupt(agents)
            }
            "new" => {
                let role = self.positive("role index")? as usize;
                let mut agents = Vec::new();
                while self.eat_sym(",") {
                    agents.push(self.agent_name()?);
                }
                Event::New { role, agents }
            }
            "send" => {
                let session = self.positive("session number")?;
                self.expect_sym(",")?;
                let at = self.here();
                let message = self.plain_term()?;
                if !message.is_ground() {
                    return self.sort_err(at, format!("`{message}` is not ground"));
                }
                Event::Send { session, message }
            }
            other => {
                return self.err(format!(
                    "expected `corrupt`, `new` or `send`, found `{other}`"
                ))
            }
        };
        self.expect_sym(")")?;
        Ok(e)
    }
}

/// Parses a protocol and checks it is well formed.
pub fn parse_protocol(src: &str) -> Result<Protocol, ParseError> {
    let mut p = Parser::new(src)?;
    let proto = p.protocol()?;
    p.finish()?;
    Ok(proto)
}

/// Parses a term in canonical syntax. Sorts are checked.
pub fn parse_term(src: &str) -> Result<Term, ParseError> {
    let mut p = Parser::new(src)?;
    let t = p.plain_term()?;
    p.finish()?;
    Ok(t)
}

/// Parses a closed formula; `a -> b` is read as `!a || b`.
pub fn parse_formula(src: &str) -> Result<Formula, ParseError> {
    let mut p = Parser::new(src)?;
    let f = p.formula()?;
    p.finish()?;
    if let Some(s) = f.free_subs().into_iter().next() {
        return Err(ParseError::Syntax {
            line: 1,
            col: 1,
            message: format!("`{s}` is not bound by any quantifier"),
        });
    }
    Ok(f)
}

/// Parses `ag(i)`, `adv(i)` or a label variable.
pub fn parse_label(src: &str) -> Result<Label, ParseError> {
    let mut p = Parser::new(src)?;
    let l = p.label(Ctx::Plain)?;
    p.finish()?;
    match l {
        FLabel::Label(l) => Ok(l),
        FLabel::Apply { .. } => unreachable!("plain labels have no applications"),
    }
}

/// Key of a substitution entry.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum BindingKey {
    Var(Var),
    Label(Name),
}

pub fn parse_binding_key(src: &str) -> Result<BindingKey, ParseError> {
    let mut p = Parser::new(src)?;
    let key = match p.var()? {
        Some(v) => BindingKey::Var(v),
        None => BindingKey::Label(Name::from(p.ident()?)),
    };
    p.finish()?;
    Ok(key)
}

/// Contents of a knowledge file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KnowledgeFile {
    pub agents: Vec<Name>,
    pub corrupted: Vec<Name>,
    pub terms: Vec<Term>,
}

/// Ground terms and `agents`/`corrupted` declarations, each ended by `;`:
/// `agents a, b; dk(a); enc(n(b,1,1), ek(a))^ag(1);`.
pub fn parse_knowledge(src: &str) -> Result<KnowledgeFile, ParseError> {
    let mut p = Parser::new(src)?;
    let (mut agents, mut corrupted, mut terms) = (Vec::new(), Vec::new(), Vec::new());
    while !matches!(p.peek(), Tok::Eof) {
        if (p.is_kw("agents") || p.is_kw("corrupted")) && !matches!(p.peek_at(1), Tok::Sym("(")) {
            let target = if p.ident()? == "agents" {
                &mut agents
            } else {
                &mut corrupted
            };
            target.push(p.agent_name()?);
            while p.eat_sym(",") {
                target.push(p.agent_name()?);
            }
        } else {
            let at = p.here();
            let t = p.plain_term()?;
            if !t.is_ground() {
                return p.sort_err(at, format!("`{t}` is not ground"));
            }
            terms.push(t);
        }
        p.expect_sym(";")?;
    }
    Ok(KnowledgeFile {
        agents,
        corrupted,
        terms,
    })
}

/// Events of a trace file, before replay.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceScript {
    pub name: String,
    pub protocol: Option<String>,
    pub events: Vec<Event>,
}

pub fn parse_trace(src: &str) -> Result<TraceScript, ParseError> {
    let mut p = Parser::new(src)?;
    let t = p.trace()?;
    p.finish()?;
    Ok(t)
}

pub fn print_trace(script: &TraceScript) -> String {
    let mut out = format!("trace {}", script.name);
    if let Some(p) = &script.protocol {
        let _ = write!(out, " for {p}");
    }
    out.push_str(";\n");
    for e in &script.events {
        let _ = writeln!(out, "{e};");
    }
    out
}

pub fn print_protocol(p: &Protocol) -> String {
    let mut out = String::new();
    let mode = match p.mode {
        Mode::Labeled => "labeled",
        Mode::Unlabeled => "unlabeled",
    };
    let _ = writeln!(out, "protocol {} {mode};", p.name);
    let _ = writeln!(out, "parties {};", p.parties());
    if !p.agents.is_empty() {
        let names: Vec<&str> = p.agents.iter().map(|n| &**n).collect();
        let _ = writeln!(out, "agents {};", names.join(", "));
    }
    for (i, role) in p.roles.iter().enumerate() {
        if role.is_empty() {
            let _ = writeln!(out, "role {} {{ }}", i + 1);
            continue;
        }
        let _ = writeln!(out, "role {} {{", i + 1);
        for s in &role.steps {
            let recv = match &s.receive {
                Receive::Init => "init".to_string(),
                Receive::Pattern(t) => t.to_string(),
            };
            let emit = match &s.emit {
                Emit::Stop => "stop".to_string(),
                Emit::Message(t) => t.to_string(),
            };
            let _ = writeln!(out, "  {recv} -> {emit};");
        }
        out.push_str("}\n");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const NSL: &str = "
        # Needham-Schroeder-Lowe
        protocol nsl labeled;
        agents a1, a2, a3;
        role 1 {
          init -> enc(<X1@A1, A1>, ek(A2))^ag(1);
          enc(<X1@A1, X1@A2, A2>, ek(A1))^L -> enc(X1@A2, ek(A2))^ag(1);
        }
        role 2 {
          enc(<X1@A1, A1>, ek(A2))^L1 -> enc(<X1@A1, X1@A2, A2>, ek(A1))^ag(1);
          enc(X1@A2, ek(A2))^L2 -> stop;
        }";

    #[test]
    fn nsl_parses_into_two_roles() {
        let p = parse_protocol(NSL).unwrap();
        assert_eq!(p.parties(), 2);
        assert_eq!(p.mode, Mode::Labeled);
        let first = &p.roles[0].steps[0];
        assert_eq!(first.receive, Receive::Init);
        let want = Term::enc(
            Term::pair(
                Term::Var(Var::Nonce { index: 1, owner: 1 }),
                Term::Var(Var::Agent(1)),
            ),
            Term::Var(Var::Agent(2)),
            Some(Label::Agent(1)),
        );
        assert_eq!(first.emit, Emit::Message(want));
        assert_eq!(parse_protocol(&print_protocol(&p)).unwrap(), p);
    }

    #[test]
    fn pair_sugar_nests_to_the_right() {
        assert_eq!(
            parse_term("<a, b, c>").unwrap(),
            parse_term("<a, <b, c>>").unwrap()
        );
        assert_eq!(parse_term("<a, <b, c>>").unwrap().to_string(), "<a, b, c>");
        assert_eq!(
            parse_term("<<a, b>, c>").unwrap().to_string(),
            "<<a, b>, c>"
        );
    }

    #[test]
    fn terms_round_trip() {
        for src in [
            "enc(<X1@A1, A1>, ek(A2))^ag(1)",
            "sig(n(a,1,2), sk(b))^adv(3)",
            "enc(C1@A2, ek(a))^L",
            "<ek(a), vk(b)>",
            "dk(a)",
            "enc(S2@A1, ek(a))",
        ] {
            let t = parse_term(src).unwrap();
            assert_eq!(t.to_string(), src);
        }
    }

    #[test]
    fn sort_errors_are_reported() {
        assert!(matches!(
            parse_term("enc(m, sk(A1))^ag(1)"),
            Err(ParseError::Sort { .. })
        ));
        assert!(matches!(
            parse_term("ek(n(a,1,1))"),
            Err(ParseError::Sort { .. })
        ));
        assert!(matches!(
            parse_term("<dk(a), b>"),
            Err(ParseError::Sort { .. })
        ));
        assert!(matches!(
            parse_term("enc(sk(a), ek(b))"),
            Err(ParseError::Sort { .. })
        ));
        let err = parse_term("enc(a,\n  sk(b))").unwrap_err();
        assert_eq!(
            err,
            ParseError::Sort {
                line: 2,
                col: 3,
                message: err_message(&err)
            }
        );
    }

    fn err_message(e: &ParseError) -> String {
        match e {
            ParseError::Sort { message, .. } | ParseError::Syntax { message, .. } => {
                message.clone()
            }
            ParseError::Protocol(p) => p.to_string(),
        }
    }

    #[test]
    fn mode_violations_are_rejected() {
        let unlabeled_in_labeled = "protocol p labeled; role 1 { init -> enc(A1, ek(A1)); }";
        assert!(matches!(
            parse_protocol(unlabeled_in_labeled),
            Err(ParseError::Protocol(_))
        ));
        let labeled_in_unlabeled =
            "protocol p unlabeled; role 1 { init -> enc(A1, ek(A1))^ag(1); }";
        assert!(matches!(
            parse_protocol(labeled_in_unlabeled),
            Err(ParseError::Protocol(_))
        ));
        let late_init = "protocol p labeled; role 1 { init -> A1; init -> A1; }";
        assert!(matches!(
            parse_protocol(late_init),
            Err(ParseError::Protocol(ProtocolError::MisplacedInit { .. }))
        ));
    }

    #[test]
    fn party_count_defaults_to_highest_variable() {
        let p = parse_protocol("protocol p labeled; role 1 { init -> enc(X1@A1, ek(A3))^ag(1); }")
            .unwrap();
        assert_eq!(p.parties(), 3);
        assert!(p.roles[1].is_empty() && p.roles[2].is_empty());
        assert!(print_protocol(&p).contains("role 3 { }"));
        assert_eq!(parse_protocol(&print_protocol(&p)).unwrap(), p);
    }

    #[test]
    fn formulas_parse_with_implication_sugar() {
        let f = parse_formula(
            "forall LS(1, 2) as s . forall LS(2, 2) as t .
               NC(s(A1)) && NC(s(A2)) && s(X1@A1) = t(X1@A1) -> t(C1@A2) != t(C2@A2)",
        )
        .unwrap();
        let Formula::Quant { body, .. } = &f else {
            panic!()
        };
        let Formula::Quant { body, .. } = &**body else {
            panic!()
        };
        assert!(matches!(&**body, Formula::Or(l, _) if matches!(**l, Formula::Not(_))));
        assert_eq!(parse_formula(&f.to_string()).unwrap(), f);
    }

    #[test]
    fn formula_printing_round_trips_precedence() {
        for src in [
            "!(a = b && c = d) || e != f",
            "(a = b || c = d) && e = f",
            "a = b && (c = d && e = f)",
            "a = b || (forall LS(1, 1) as s . NC(s(A1))) || c = d",
            "!!NC(a)",
            "a = b -> c = d -> e = f",
            "exists LS(2, 3) as s . enc(s(X1@A1), ek(a))^s(L1) = s(C1@A1)",
        ] {
            let f = parse_formula(src).unwrap();
            assert_eq!(
                parse_formula(&f.to_string()).unwrap(),
                f,
                "{src} printed as {f}"
            );
        }
    }

    #[test]
    fn unbound_meta_variable_is_rejected() {
        assert!(parse_formula("t(A1) = a").is_err());
        assert!(parse_formula("forall LS(1, 1) as s . t(A1) = s(A1)").is_err());
        assert!(parse_formula("forall LS(1, 1) as s . s(X1@A1) = s(X1@A1)").is_ok());
        assert!(parse_formula("forall LS(0, 1) as s . NC(a)").is_err());
        assert!(parse_formula("forall LS(1, 1) as s . X1@A1 = a").is_err());
    }

    #[test]
    fn traces_round_trip() {
        let src = "trace ex for nsl;\ncorrupt(a3);\nnew(2, a1, a2);\nsend(1, enc(<n(a3,1,1), a1>, ek(a2))^adv(1));\n";
        let t = parse_trace(src).unwrap();
        assert_eq!(t.events.len(), 3);
        assert_eq!(print_trace(&t), src);
        assert!(parse_trace("trace t; send(1, X1@A1);").is_err());
    }

    #[test]
    fn binding_keys_and_labels() {
        assert_eq!(
            parse_binding_key("X2@A1").unwrap(),
            BindingKey::Var(Var::Nonce { index: 2, owner: 1 })
        );
        assert_eq!(
            parse_binding_key("A3").unwrap(),
            BindingKey::Var(Var::Agent(3))
        );
        assert_eq!(
            parse_binding_key("L1").unwrap(),
            BindingKey::Label("L1".into())
        );
        assert_eq!(parse_label("adv(4)").unwrap(), Label::Adversary(4));
        assert_eq!(parse_label("L").unwrap(), Label::Var("L".into()));
    }

    #[test]
    fn knowledge_files() {
        let KnowledgeFile {
            agents,
            corrupted,
            terms,
        } = parse_knowledge("agents a, b; corrupted b; dk(a); enc(n(b,1,1), ek(a))^ag(1);")
            .unwrap();
        assert_eq!(agents.len(), 2);
        assert_eq!(corrupted, vec![Name::from("b")]);
        assert_eq!(terms.len(), 2);
        assert!(parse_knowledge("X1@A1;").is_err());
    }

    #[test]
    fn errors_carry_positions() {
        let err = parse_protocol("protocol p labeled;\nrole 1 {\n  init => a;\n}").unwrap_err();
        assert!(matches!(err, ParseError::Syntax { line: 3, .. }), "{err}");
    }
}
