//! Seeded random generators for knowledge sets, protocols and formulas.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::deduction::KnowledgeSet;
use crate::execution::{Emit, Protocol, Receive, Role, Step};
use crate::logic::{FLabel, FTerm, Formula, Quantifier};
use crate::term::{Label, Mode, Name, Term, Var};

const AGENT_NAMES: [&str; 3] = ["a", "b", "c"];

/// A knowledge set and a message derived from it by applying deduction rules
/// forward, so `S ⊢^l m` holds by construction.
///
/// The set mixes atoms (identities, nonces, secret keys) with agent-labeled
/// ciphertexts and signatures; the message is the result of up to six rule
/// applications and has depth at most `max_depth`.
pub fn derivable_pair<R: Rng + ?Sized>(rng: &mut R, max_depth: usize) -> (KnowledgeSet, Term) {
    let agents: Vec<Term> = AGENT_NAMES[..rng.gen_range(1..=3)]
        .iter()
        .map(|a| Term::agent(a))
        .collect();
    let pick_agent = |rng: &mut R| agents.choose(rng).expect("at least one agent").clone();
    let nonce = |rng: &mut R| {
        let Term::Agent(a) = pick_agent(rng) else {
            unreachable!()
        };
        Term::Nonce {
            owner: a,
            index: rng.gen_range(1..=2),
            session: 1,
        }
    };

    let mut set = BTreeSet::new();
    for _ in 0..rng.gen_range(1..=4) {
        let t = match rng.gen_range(0..4) {
            0 => nonce(rng),
            1 => Term::dk(pick_agent(rng)),
            2 => Term::sk(pick_agent(rng)),
            _ => pick_agent(rng),
        };
        set.insert(t);
    }
    for _ in 0..rng.gen_range(0..=2) {
        let body = match rng.gen_range(0..3) {
            0 => nonce(rng),
            1 => Term::pair(nonce(rng), pick_agent(rng)),
            _ => pick_agent(rng),
        };
        let label = Some(Label::Agent(rng.gen_range(1..=3)));
        let t = if rng.gen_bool(0.7) {
            Term::enc(body, pick_agent(rng), label)
        } else {
            Term::sig(body, pick_agent(rng), label)
        };
        set.insert(t);
    }
    let mut ks = KnowledgeSet::new(agents.iter().map(|a| a.to_string())).with_terms(set);
    if rng.gen_bool(0.3) {
        ks = ks.with_corrupted([pick_agent(rng).to_string()]);
    }

    let mut pool: Vec<Term> = ks.terms.iter().cloned().collect();
    for a in &agents {
        pool.extend([a.clone(), Term::ek(a.clone()), Term::vk(a.clone())]);
    }
    for c in &ks.corrupted {
        pool.push(Term::Nonce {
            owner: c.clone(),
            index: 1,
            session: 1,
        });
    }
    let mut last: Option<Term> = None;
    for _ in 0..rng.gen_range(1..=6) {
        let messages: Vec<&Term> = pool.iter().filter(|t| t.sort().is_message()).collect();
        let derived = match rng.gen_range(0..6) {
            0 => {
                let (l, r) = (
                    *messages.choose(rng).unwrap(),
                    *messages.choose(rng).unwrap(),
                );
                Some(Term::pair(l.clone(), r.clone()))
            }
            1 => {
                let body = (*messages.choose(rng).unwrap()).clone();
                Some(Term::enc(
                    body,
                    pick_agent(rng),
                    Some(Label::Adversary(rng.gen_range(1..=3))),
                ))
            }
            2 => {
                let signers: Vec<Term> = pool
                    .iter()
                    .filter_map(|t| match t {
                        Term::Key(crate::term::KeyKind::Sign, a) => Some((**a).clone()),
                        _ => None,
                    })
                    .collect();
                signers.choose(rng).map(|s| {
                    let body = (*messages.choose(rng).unwrap()).clone();
                    Term::sig(
                        body,
                        s.clone(),
                        Some(Label::Adversary(rng.gen_range(1..=3))),
                    )
                })
            }
            3 => {
                let pairs: Vec<&Term> = pool
                    .iter()
                    .filter(|t| matches!(t, Term::Pair(..)))
                    .collect();
                pairs.choose(rng).map(|p| match p {
                    Term::Pair(l, r) => (**if rng.gen_bool(0.5) { l } else { r }).clone(),
                    _ => unreachable!(),
                })
            }
            4 => {
                let open: Vec<Term> = pool
                    .iter()
                    .filter_map(|t| match t {
                        Term::Enc {
                            body, recipient, ..
                        } if pool.contains(&Term::dk((**recipient).clone())) => {
                            Some((**body).clone())
                        }
                        _ => None,
                    })
                    .collect();
                open.choose(rng).cloned()
            }
            _ => {
                let open: Vec<Term> = pool
                    .iter()
                    .filter_map(|t| match t {
                        Term::Sig { body, .. } => Some((**body).clone()),
                        _ => None,
                    })
                    .collect();
                open.choose(rng).cloned()
            }
        };
        if let Some(t) = derived.filter(|t| t.depth() <= max_depth) {
            pool.push(t.clone());
            last = Some(t);
        }
    }
    let m = last.unwrap_or_else(|| pool.choose(rng).unwrap().clone());
    (ks, m)
}

/// A small labeled two-party protocol over agents `a1`, `a2`.
///
/// Role 1 starts; role 2 (present with high probability) expects role 1's
/// first message with its labels abstracted and possibly one ciphertext
/// replaced by a ciphertext variable. Each role has at most two steps, terms
/// have depth at most two, and at most one ciphertext variable occurs.
///
/// Candidates whose patterns bind more than two nonce or ciphertext variables
/// in one role are redrawn: every such variable multiplies the number of
/// adversary messages per send, and three of them push two-session
/// enumeration into the tens of millions of traces.
pub fn random_protocol<R: Rng + ?Sized>(rng: &mut R, name: &str) -> Protocol {
    loop {
        let p = protocol_candidate(rng, name);
        if p.roles.iter().all(|r| pattern_vars(r) <= MAX_PATTERN_VARS) {
            return p;
        }
    }
}

const MAX_PATTERN_VARS: usize = 2;

fn pattern_vars(r: &Role) -> usize {
    let mut vars = BTreeSet::new();
    for s in &r.steps {
        if let Receive::Pattern(t) = &s.receive {
            vars.extend(t.vars().into_iter().filter(|v| !matches!(v, Var::Agent(_))));
        }
    }
    vars.len()
}

fn protocol_candidate<R: Rng + ?Sized>(rng: &mut R, name: &str) -> Protocol {
    let mut labels = 0u32;
    let mut cipher_used = false;

    // role 1, first step
    let own1: Vec<Var> = (1..=2).map(|j| Var::Nonce { index: j, owner: 1 }).collect();
    let mut bound1 = vec![Var::Agent(1), Var::Agent(2)];
    bound1.extend(&own1);
    let m1 = emit_term(rng, &bound1, 1);
    let mut r1 = vec![Step {
        receive: Receive::Init,
        emit: Emit::Message(m1.clone()),
    }];

    let mut roles = vec![];
    let with_role2 = rng.gen_bool(0.85);
    let mut r2 = Vec::new();
    if with_role2 {
        let p1 = abstract_pattern(rng, &m1, 2, &mut labels, &mut cipher_used);
        let mut bound2 = vec![
            Var::Agent(1),
            Var::Agent(2),
            Var::Nonce { index: 1, owner: 2 },
        ];
        bound2.extend(p1.vars());
        bound2.sort();
        bound2.dedup();
        let two_steps = rng.gen_bool(0.5);
        let e1 = if !two_steps && rng.gen_bool(0.4) {
            Emit::Stop
        } else {
            Emit::Message(emit_term(rng, &bound2, 2))
        };
        r2.push(Step {
            receive: Receive::Pattern(p1),
            emit: e1.clone(),
        });
        if let Emit::Message(reply) = &e1 {
            if rng.gen_bool(0.6) {
                // role 1 answers role 2
                let p = abstract_pattern(rng, reply, 1, &mut labels, &mut cipher_used);
                let mut b = bound1.clone();
                b.extend(p.vars());
                let emit = if rng.gen_bool(0.5) {
                    Emit::Stop
                } else {
                    Emit::Message(emit_term(rng, &b, 1))
                };
                r1.push(Step {
                    receive: Receive::Pattern(p),
                    emit,
                });
            }
        }
        if two_steps {
            let pattern = match &r1.get(1).map(|s| &s.emit) {
                Some(Emit::Message(t)) => {
                    abstract_pattern(rng, t, 2, &mut labels, &mut cipher_used)
                }
                _ => {
                    let junk = emit_term(rng, &[Var::Agent(1), Var::Agent(2)], 1);
                    abstract_pattern(rng, &junk, 2, &mut labels, &mut cipher_used)
                }
            };
            r2.push(Step {
                receive: Receive::Pattern(pattern),
                emit: Emit::Stop,
            });
        }
    }
    roles.push(Role { steps: r1 });
    roles.push(Role { steps: r2 });
    let p = Protocol {
        name: name.to_string(),
        mode: Mode::Labeled,
        agents: vec!["a1".into(), "a2".into()],
        roles,
    };
    debug_assert!(p.validate().is_ok(), "{:?}", p.validate());
    p
}

fn emit_term<R: Rng + ?Sized>(rng: &mut R, bound: &[Var], role: u32) -> Term {
    let atom = |rng: &mut R| Term::Var(*bound.choose(rng).expect("bound variables"));
    let agent = |rng: &mut R| Term::Var(Var::Agent(rng.gen_range(1..=2)));
    let label = |rng: &mut R| Some(Label::Agent(rng.gen_range(1..=3)));
    match rng.gen_range(0..5) {
        0 => atom(rng),
        1 => Term::pair(atom(rng), atom(rng)),
        2 => Term::sig(atom(rng), Term::Var(Var::Agent(role)), label(rng)),
        _ => Term::enc(atom(rng), agent(rng), label(rng)),
    }
}

/// Turns an emitted term into the pattern the other role expects: labels
/// become fresh label variables and, at most once per protocol, a ciphertext
/// becomes a ciphertext variable.
fn abstract_pattern<R: Rng + ?Sized>(
    rng: &mut R,
    t: &Term,
    role: u32,
    labels: &mut u32,
    cipher_used: &mut bool,
) -> Term {
    match t {
        Term::Enc { .. } if !*cipher_used && rng.gen_bool(0.35) => {
            *cipher_used = true;
            Term::Var(Var::Cipher {
                index: 1,
                owner: role,
            })
        }
        Term::Enc {
            body, recipient, ..
        } => {
            *labels += 1;
            let body = abstract_pattern(rng, body, role, labels, cipher_used);
            Term::enc(
                body,
                (**recipient).clone(),
                Some(Label::Var(Name::from(format!("L{labels}")))),
            )
        }
        Term::Sig { body, signer, .. } => {
            *labels += 1;
            let body = abstract_pattern(rng, body, role, labels, cipher_used);
            Term::sig(
                body,
                (**signer).clone(),
                Some(Label::Var(Name::from(format!("L{labels}")))),
            )
        }
        Term::Pair(l, r) => Term::pair(
            abstract_pattern(rng, l, role, labels, cipher_used),
            abstract_pattern(rng, r, role, labels, cipher_used),
        ),
        other => other.clone(),
    }
}

/// Variables bound in every local state of role `role` at control point
/// `point`.
pub fn bound_at(p: &Protocol, role: usize, point: usize) -> (Vec<Var>, Vec<Name>) {
    let mut vars: BTreeSet<Var> = (1..=p.parties() as u32).map(Var::Agent).collect();
    vars.extend(
        p.nonce_indices(role as u32)
            .into_iter()
            .map(|index| Var::Nonce {
                index,
                owner: role as u32,
            }),
    );
    let mut labels = BTreeSet::new();
    if let Some(r) = p.role(role) {
        for s in r.steps.iter().take(point.saturating_sub(1)) {
            if let Receive::Pattern(t) = &s.receive {
                vars.extend(t.vars());
                labels.extend(t.label_vars());
            }
        }
    }
    (vars.into_iter().collect(), labels.into_iter().collect())
}

/// A closed formula in the equality-restricted fragment whose applications
/// are all defined in the local states they refer to.
pub fn random_l2_formula<R: Rng + ?Sized>(rng: &mut R, p: &Protocol) -> Formula {
    let spots: Vec<(usize, usize)> = p
        .roles
        .iter()
        .enumerate()
        .filter(|(_, r)| !r.is_empty())
        .flat_map(|(i, r)| (2..=r.len() + 1).map(move |pt| (i + 1, pt)))
        .collect();
    let depth = rng.gen_range(1..=2);
    let mut scopes: Vec<(String, Vec<Var>, Vec<Name>)> = Vec::new();
    let mut quants = Vec::new();
    for k in 0..depth {
        let &(role, point) = spots.choose(rng).expect("role 1 always has a step");
        let sub = ["s", "t"][k].to_string();
        let (vars, labels) = bound_at(p, role, point);
        scopes.push((sub.clone(), vars, labels));
        let q = if rng.gen_bool(0.6) {
            Quantifier::Forall
        } else {
            Quantifier::Exists
        };
        quants.push((q, role, point, sub));
    }
    let mut body = random_body(rng, &scopes, 2);
    if rng.gen_bool(0.5) {
        // guarded form: honest peers imply the property
        let (sub, _, _) = scopes.choose(rng).unwrap();
        let guard = Formula::and(
            Formula::NC(FTerm::apply(sub, Var::Agent(1))),
            Formula::NC(FTerm::apply(sub, Var::Agent(2))),
        );
        body = Formula::implies(guard, body);
    }
    for (q, role, point, sub) in quants.into_iter().rev() {
        body = Formula::Quant {
            q,
            role,
            point,
            sub: Name::from(sub),
            body: Box::new(body),
        };
    }
    debug_assert!(body.is_l2());
    body
}

fn random_body<R: Rng + ?Sized>(
    rng: &mut R,
    scopes: &[(String, Vec<Var>, Vec<Name>)],
    depth: usize,
) -> Formula {
    if depth == 0 || rng.gen_bool(0.4) {
        return random_atom(rng, scopes);
    }
    let a = random_body(rng, scopes, depth - 1);
    let b = random_body(rng, scopes, depth - 1);
    if rng.gen_bool(0.5) {
        Formula::and(a, b)
    } else {
        Formula::or(a, b)
    }
}

fn random_atom<R: Rng + ?Sized>(rng: &mut R, scopes: &[(String, Vec<Var>, Vec<Name>)]) -> Formula {
    let (sub, vars, labels) = scopes.choose(rng).unwrap();
    let simple: Vec<FTerm> = vars
        .iter()
        .filter(|v| matches!(v, Var::Agent(_) | Var::Nonce { .. }))
        .map(|v| FTerm::apply(sub, *v))
        .chain([FTerm::Agent("a1".into()), FTerm::Agent("a2".into())])
        .collect();
    let any_var = |rng: &mut R| {
        let (s, vs, _) = scopes.choose(rng).unwrap();
        FTerm::apply(s, *vs.choose(rng).unwrap())
    };
    let rich = |rng: &mut R| -> FTerm {
        if rng.gen_bool(0.6) {
            return any_var(rng);
        }
        let label = if !labels.is_empty() && rng.gen_bool(0.5) {
            FLabel::Apply {
                sub: Name::from(sub.as_str()),
                var: labels.choose(rng).unwrap().clone(),
            }
        } else {
            FLabel::Label(Label::Agent(rng.gen_range(1..=3)))
        };
        let body = simple.choose(rng).unwrap().clone();
        FTerm::Enc {
            body: Box::new(body),
            recipient: Box::new(FTerm::apply(sub, Var::Agent(rng.gen_range(1..=2)))),
            label: Some(label),
        }
    };
    match rng.gen_range(0..5) {
        0 => {
            let nc = Formula::NC(FTerm::apply(sub, Var::Agent(rng.gen_range(1..=2))));
            if rng.gen_bool(0.5) {
                Formula::not(nc)
            } else {
                nc
            }
        }
        1 => Formula::Eq(
            simple.choose(rng).unwrap().clone(),
            simple.choose(rng).unwrap().clone(),
        ),
        2 => Formula::not(Formula::Eq(rich(rng), rich(rng))),
        _ => Formula::Neq(rich(rng), rich(rng)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::deduction::deducible_labeled;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn generated_pairs_are_derivable() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let (ks, m) = derivable_pair(&mut rng, 4);
            assert!(m.depth() <= 4 || ks.terms.contains(&m));
            assert!(deducible_labeled(&ks, &m), "{m} from {:?}", ks.terms);
        }
    }

    #[test]
    fn generated_protocols_validate_and_formulas_are_in_the_fragment() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut with_cipher_var = 0;
        for i in 0..300 {
            let p = random_protocol(&mut rng, &format!("g{i}"));
            p.validate().unwrap();
            assert!(p.roles.iter().all(|r| r.len() <= 2));
            let ciphers = p
                .terms()
                .flat_map(|t| t.vars())
                .filter(|v| matches!(v, Var::Cipher { .. }))
                .count();
            if ciphers > 0 {
                with_cipher_var += 1;
            }
            let phi = random_l2_formula(&mut rng, &p);
            assert!(phi.is_l2(), "{phi}");
            assert!(phi.free_subs().is_empty());
        }
        assert!(with_cipher_var > 20);
    }

    #[test]
    fn bound_variables_grow_with_the_control_point() {
        let p = crate::corpus::protocol("nsl").unwrap();
        let (v1, _) = bound_at(&p, 2, 1);
        let (v2, l2) = bound_at(&p, 2, 2);
        assert!(!v1.contains(&Var::Nonce { index: 1, owner: 1 }));
        assert!(v2.contains(&Var::Nonce { index: 1, owner: 1 }));
        assert_eq!(l2, vec![Name::from("L1")]);
    }
}
