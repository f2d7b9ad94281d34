use std::collections::BTreeSet;
use std::ops::ControlFlow;

use labelcheck::corpus;
use labelcheck::execution::{
    enumerate_traces, is_valid_trace, Bounds, Event, Protocol, Receive, Trace,
};
use labelcheck::gen::{random_l2_formula, random_protocol};
use labelcheck::logic::{interpret, satisfies, Formula};
use labelcheck::selfcheck::small_bounds;
use labelcheck::syntax::{
    parse_formula, parse_protocol, parse_trace, print_protocol, print_trace, TraceScript,
};
use labelcheck::term::{Label, Mode, Term};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn all_traces(p: &Protocol, bounds: &Bounds) -> Vec<Trace> {
    let mut out = Vec::new();
    let _ = enumerate_traces(p, bounds, |tr| {
        out.push(tr.clone());
        ControlFlow::<()>::Continue(())
    });
    out
}

fn generated(seed: u64) -> (Protocol, Formula, Formula) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = random_protocol(&mut rng, "gen");
    let phi = random_l2_formula(&mut rng, &p);
    let psi = random_l2_formula(&mut rng, &p);
    (p, phi, psi)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn enumerated_traces_are_valid_before_and_after_erasure(seed in any::<u64>()) {
        let (p, _, _) = generated(seed);
        let erased = p.erase();
        for tr in all_traces(&p, &small_bounds(&p, 1)) {
            prop_assert_eq!(is_valid_trace(&p, &tr), Ok(true), "{}", tr.to_text());
            prop_assert_eq!(is_valid_trace(&erased, &tr.erase()), Ok(true), "{}", tr.to_text());
        }
    }

    #[test]
    fn traces_grow_knowledge_and_control_points(seed in any::<u64>()) {
        let (p, _, _) = generated(seed);
        for tr in all_traces(&p, &small_bounds(&p, 1)) {
            for (i, event) in tr.events.iter().enumerate() {
                let (before, after) = (&tr.states[i], &tr.states[i + 1]);
                prop_assert!(before.knowledge.is_subset(&after.knowledge));
                prop_assert!(after.sessions.len() >= before.sessions.len());
                for (s, t) in before.sessions.iter().zip(&after.sessions) {
                    let step = if matches!(event, Event::Send { session, .. } if *session == s.id.number) {
                        t.local.point - s.local.point
                    } else {
                        0
                    };
                    prop_assert!(t.local.point >= s.local.point);
                    prop_assert_eq!(t.local.point, s.local.point + step);
                    prop_assert!(step <= 1);
                }
            }
        }
    }

    #[test]
    fn replay_is_deterministic(seed in any::<u64>()) {
        let (p, _, _) = generated(seed);
        for tr in all_traces(&p, &small_bounds(&p, 1)) {
            let again = Trace::from_events(&p, tr.events.clone()).unwrap();
            prop_assert_eq!(&again, &tr);
        }
    }

    #[test]
    fn nnf_preserves_interpretation(seed in any::<u64>()) {
        let (p, phi, psi) = generated(seed);
        let variants = [
            Formula::not(phi.clone()),
            Formula::implies(phi.clone(), psi.clone()),
            Formula::not(Formula::and(phi.clone(), Formula::not(psi.clone()))),
            Formula::or(Formula::not(psi.clone()), phi.clone()),
        ];
        for tr in all_traces(&p, &small_bounds(&p, 1)) {
            for f in &variants {
                prop_assert_eq!(interpret(f, &tr).ok(), interpret(&f.nnf(), &tr).ok(), "{}", f);
            }
        }
    }

    #[test]
    fn fragment_formulas_transfer_from_erased_traces(seed in any::<u64>()) {
        let (p, phi, _) = generated(seed);
        prop_assert!(phi.is_l2());
        prop_assert!(phi.erase().is_l2());
        let erased = phi.erase();
        for tr in all_traces(&p, &small_bounds(&p, 1)) {
            if interpret(&erased, &tr.erase()) == Ok(true) {
                prop_assert_eq!(interpret(&phi, &tr), Ok(true), "{}", tr.to_text());
            }
        }
    }

    #[test]
    fn counterexamples_recheck(seed in any::<u64>()) {
        let (p, phi, psi) = generated(seed);
        for f in [phi, Formula::not(psi)] {
            let verdict = satisfies(&p, &f, &small_bounds(&p, 1), 1);
            if let Ok(v) = verdict {
                if let Some(tr) = v.counterexample() {
                    prop_assert_eq!(is_valid_trace(&p, tr), Ok(true));
                    prop_assert_eq!(interpret(&f, tr), Ok(false));
                }
            }
        }
    }

    #[test]
    fn protocols_formulas_and_traces_print_and_parse_back(seed in any::<u64>()) {
        let (p, phi, psi) = generated(seed);
        prop_assert_eq!(parse_protocol(&print_protocol(&p)).unwrap(), p.clone());
        prop_assert_eq!(parse_protocol(&print_protocol(&p.erase())).unwrap(), p.erase());
        for f in [phi.clone(), phi.erase(), Formula::implies(phi, psi.clone()).nnf(), Formula::not(psi)] {
            prop_assert_eq!(parse_formula(&f.to_string()).unwrap(), f);
        }
        for tr in all_traces(&p, &small_bounds(&p, 1)).into_iter().step_by(7) {
            let script = TraceScript { name: "t".into(), protocol: Some(p.name.clone()), events: tr.events };
            prop_assert_eq!(parse_trace(&print_trace(&script)).unwrap(), script);
        }
    }
}

/// Every event sequence valid in `p` within `bounds` whose messages come from
/// `pool`, found by trying every event at every step. Adversary-built terms
/// must use the least `adv(i)` not yet in the trace, and an `init` step is
/// triggered by the session's own identity; all other triggers lead to the
/// same state.
fn exhaustive(p: &Protocol, bounds: &Bounds, pool: &[Term]) -> BTreeSet<Vec<Event>> {
    fn go(
        p: &Protocol,
        bounds: &Bounds,
        pool: &[Term],
        tr: &mut Trace,
        out: &mut BTreeSet<Vec<Event>>,
    ) {
        out.insert(tr.events.clone());
        if tr.len() >= bounds.max_events {
            return;
        }
        let mut events = Vec::new();
        if tr.is_empty() {
            events.extend(
                bounds
                    .corrupt_sets
                    .iter()
                    .filter(|s| !s.is_empty())
                    .map(|s| Event::Corrupt(s.clone())),
            );
        }
        if !tr.is_empty() || bounds.corrupt_sets.iter().any(Vec::is_empty) {
            let g = tr.last();
            let agents = bounds
                .session_agents
                .clone()
                .unwrap_or_else(|| p.agents.clone());
            for role in 1..=p.parties() {
                let started = g.sessions.iter().filter(|s| s.id.role == role).count();
                let room = g.sessions.len() < bounds.max_sessions
                    && bounds.max_sessions_per_role.is_none_or(|cap| started < cap)
                    && !p.roles[role - 1].is_empty();
                if !room {
                    continue;
                }
                let mut tuples: Vec<Vec<_>> = vec![vec![]];
                for _ in 0..p.parties() {
                    tuples = tuples
                        .into_iter()
                        .flat_map(|t| {
                            agents
                                .iter()
                                .map(move |a| [t.clone(), vec![a.clone()]].concat())
                        })
                        .collect();
                }
                events.extend(tuples.into_iter().map(|agents| Event::New { role, agents }));
            }
            let deducer = p.deducer(g);
            let used = tr.used_adversary_labels();
            let fresh = (1..).find(|i| !used.contains(i)).unwrap();
            for s in &g.sessions {
                let at_init = p.roles[s.local.role - 1]
                    .steps
                    .get(s.local.point - 1)
                    .is_some_and(|step| step.receive == Receive::Init);
                let own = Term::Agent(s.id.agents[s.local.role - 1].clone());
                for m in pool {
                    if at_init && *m != own {
                        continue;
                    }
                    let canonical = m.labels().iter().all(|l| match l {
                        Label::Adversary(i) => used.contains(i) || *i == fresh,
                        _ => true,
                    });
                    let accepted = p.step_send(g, s.id.number, m).is_ok_and(|(_, ok)| ok);
                    if canonical && accepted && deducer.can_deduce(m) {
                        events.push(Event::Send {
                            session: s.id.number,
                            message: m.clone(),
                        });
                    }
                }
            }
        }
        for e in events {
            tr.push(p, e).unwrap();
            go(p, bounds, pool, tr, out);
            tr.pop();
        }
    }
    let mut out = BTreeSet::new();
    go(p, bounds, pool, &mut Trace::new(), &mut out);
    out
}

fn assert_complete(p: &Protocol, bounds: &Bounds) {
    let traces = all_traces(p, bounds);
    let found: BTreeSet<Vec<Event>> = traces.iter().map(|t| t.events.clone()).collect();
    assert_eq!(found.len(), traces.len(), "enumeration repeats a trace");
    let pool: BTreeSet<Term> = traces
        .iter()
        .flat_map(|t| &t.events)
        .filter_map(|e| match e {
            Event::Send { message, .. } => Some(message.clone()),
            _ => None,
        })
        .collect();
    let pool: Vec<Term> = pool.into_iter().collect();
    let expected = exhaustive(p, bounds, &pool);
    let missing: Vec<_> = expected.difference(&found).take(3).collect();
    assert!(
        missing.is_empty(),
        "{}: not enumerated: {missing:?}",
        p.name
    );
    assert_eq!(found, expected);
}

#[test]
fn enumeration_is_complete_on_small_instances() {
    let nsl = corpus::protocol("nsl").unwrap();
    for p in [nsl.clone(), nsl.erase()] {
        assert_complete(
            &p,
            &Bounds::new(&p, 1).with_corrupt_sets([vec![], vec!["a3"]]),
        );
    }
    let ex = corpus::protocol("example41").unwrap();
    for p in [ex.clone(), ex.erase()] {
        assert_complete(&p, &Bounds::new(&p, 2));
    }
    for seed in 0..6 {
        let (p, _, _) = generated(seed);
        assert_complete(&p, &small_bounds(&p, 1));
    }
}

#[test]
fn generated_protocols_use_both_modes() {
    let (p, _, _) = generated(1);
    assert_eq!(p.mode, Mode::Labeled);
    assert_eq!(p.erase().mode, Mode::Unlabeled);
}
