//! End-to-end acceptance checks. Prints one line per criterion and exits
//! non-zero if any fails.

use std::collections::BTreeSet;
use std::fs;
use std::ops::ControlFlow;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use labelcheck::corpus::{self, EntryKind};
use labelcheck::deduction::{closure_bounded, Deducer, KnowledgeSet};
use labelcheck::execution::{enumerate_traces, is_valid_trace, Bounds, Protocol, Trace};
use labelcheck::logic::{satisfies, Verdict};
use labelcheck::selfcheck;
use labelcheck::syntax::{
    parse_binding_key, parse_formula, parse_protocol, parse_term, parse_trace, print_protocol,
    print_trace, BindingKey,
};
use labelcheck::term::{Label, Mode, Substitution, Term};
use rayon::prelude::*;
use serde_json::Value;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

type Criterion = (u32, &'static str, Duration, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        (1, "trace replay", Duration::from_secs(1), replay),
        (
            2,
            "deduction survives erasure",
            Duration::from_secs(30),
            deduction_erasure,
        ),
        (
            3,
            "deduction matches brute-force closure",
            Duration::from_secs(120),
            oracle_equivalence,
        ),
        (
            4,
            "erased traces stay valid",
            Duration::from_secs(120),
            trace_erasure,
        ),
        (
            5,
            "labels break the erased verdict",
            Duration::from_secs(60),
            labels_break,
        ),
        (
            6,
            "erasure breaks the labeled verdict",
            Duration::from_secs(60),
            erasure_breaks,
        ),
        (
            7,
            "fragment classification",
            Duration::from_secs(1),
            classification,
        ),
        (
            8,
            "no transfer counterexample",
            Duration::from_secs(600),
            transfer,
        ),
        (
            9,
            "secrecy within bounds",
            Duration::from_secs(600),
            secrecy,
        ),
        (
            10,
            "round trips and schemas",
            Duration::from_secs(5),
            round_trips,
        ),
    ];
    let mut failed = 0;
    for (n, name, limit, run) in criteria {
        let start = Instant::now();
        let o = run();
        let took = start.elapsed();
        let pass = o.pass && took <= limit;
        if !pass {
            failed += 1;
        }
        println!(
            "criterion {n:>2} [{}] {name}: {} ({:.2}s, limit {}s)",
            if pass { "PASS" } else { "FAIL" },
            o.detail,
            took.as_secs_f64(),
            limit.as_secs()
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

fn subst(bindings: &[(&str, &str)]) -> Substitution {
    let mut s = Substitution::new();
    for (k, v) in bindings {
        match parse_binding_key(k).unwrap() {
            BindingKey::Var(var) => s.bind(var, parse_term(v).unwrap()).unwrap(),
            BindingKey::Label(name) => {
                let Term::Enc { label: Some(l), .. } =
                    parse_term(&format!("enc(a, ek(a))^{v}")).unwrap()
                else {
                    unreachable!()
                };
                s.bind_label(name, l).unwrap()
            }
        }
    }
    s
}

fn replay() -> Outcome {
    let (p, tr) = corpus::trace("trace-ex22").unwrap();
    if is_valid_trace(&p, &tr) != Ok(true) {
        return outcome(false, "trace rejected");
    }
    let sigma1 = subst(&[("A1", "a1"), ("A2", "a2"), ("X1@A2", "n(a2,1,1)")]);
    let sigma2 = subst(&[
        ("A1", "a1"),
        ("A2", "a2"),
        ("X1@A2", "n(a2,1,1)"),
        ("X1@A1", "n(a3,1,1)"),
        ("L1", "adv(1)"),
    ]);
    let s2 = &tr.states[2].sessions;
    let s3 = &tr.states[3].sessions;
    let f2 = s2.len() == 1
        && (s2[0].local.role, s2[0].local.point) == (2, 1)
        && s2[0].local.sigma == sigma1;
    let f3 = s3.len() == 1
        && (s3[0].local.role, s3[0].local.point) == (2, 2)
        && s3[0].local.sigma == sigma2;
    let sid = s3.first().map(|s| s.id.to_string()).unwrap_or_default();
    let h3: BTreeSet<Term> = [
        "dk(a3)",
        "sk(a3)",
        "enc(<n(a3,1,1), n(a2,1,1), a2>, ek(a1))^ag(1)",
    ]
    .iter()
    .map(|t| parse_term(t).unwrap())
    .collect();
    let printed = s3
        .first()
        .map(|s| s.local.sigma.to_string())
        .unwrap_or_default();
    let want = "{A1 -> a1, A2 -> a2, X1@A1 -> n(a3,1,1), X1@A2 -> n(a2,1,1), L1 -> adv(1)}";
    let pass =
        f2 && f3 && sid == "(1, 2, (a1, a2))" && tr.states[3].knowledge == h3 && printed == want;
    outcome(pass, format!("sid {sid}, sigma2 = {printed}"))
}

fn deduction_erasure() -> Outcome {
    let r = selfcheck::deduction_erasure(1, 1000);
    outcome(r.ok(), format!("{}/{} pairs", r.passed, r.cases))
}

/// Goal language: every message of depth at most 3 over agents `a`, `b`
/// built from identities, public keys and one nonce per agent, with labels
/// `ag(1)`, `ag(2)`, `adv(1)..adv(3)`; plus the secret keys.
fn goals() -> Vec<Term> {
    let agents = [Term::agent("a"), Term::agent("b")];
    let mut atoms: Vec<Term> = Vec::new();
    for a in &agents {
        let Term::Agent(name) = a else { unreachable!() };
        atoms.extend([
            a.clone(),
            Term::ek(a.clone()),
            Term::vk(a.clone()),
            Term::Nonce {
                owner: name.clone(),
                index: 1,
                session: 1,
            },
        ]);
    }
    let labels = [
        Label::Agent(1),
        Label::Agent(2),
        Label::Adversary(1),
        Label::Adversary(2),
        Label::Adversary(3),
    ];
    let grow = |lower: &[Term], all: &[Term]| -> Vec<Term> {
        let mut out = Vec::new();
        for l in all {
            for r in all {
                if lower.contains(l) || lower.contains(r) {
                    out.push(Term::pair(l.clone(), r.clone()));
                }
            }
        }
        for body in lower {
            for a in &agents {
                for lab in &labels {
                    out.push(Term::enc(body.clone(), a.clone(), Some(lab.clone())));
                    out.push(Term::sig(body.clone(), a.clone(), Some(lab.clone())));
                }
            }
        }
        out
    };
    let depth2 = grow(&atoms, &atoms);
    let upto2: Vec<Term> = atoms.iter().chain(&depth2).cloned().collect();
    let depth3 = grow(&depth2, &upto2);
    let mut all = upto2;
    all.extend(depth3);
    for a in &agents {
        all.push(Term::dk(a.clone()));
        all.push(Term::sk(a.clone()));
    }
    all
}

fn knowledge_pool() -> Vec<Term> {
    [
        "n(a,1,1)",
        "dk(b)",
        "sk(a)",
        "<n(b,1,1), a>",
        "enc(n(a,1,1), ek(b))^ag(1)",
        "enc(<n(b,1,1), b>, ek(a))^ag(2)",
        "sig(n(b,1,1), sk(b))^ag(1)",
        "enc(enc(n(b,1,1), ek(b))^ag(1), ek(a))^ag(1)",
        "dk(a)",
    ]
    .iter()
    .map(|t| parse_term(t).unwrap())
    .collect()
}

fn subsets(pool: &[Term], max: usize) -> Vec<Vec<Term>> {
    let mut out = vec![Vec::new()];
    for t in pool {
        let extended: Vec<Vec<Term>> = out
            .iter()
            .filter(|s| s.len() < max)
            .map(|s| [s.as_slice(), std::slice::from_ref(t)].concat())
            .collect();
        out.extend(extended);
    }
    out
}

fn oracle_equivalence() -> Outcome {
    let goals = goals();
    let sets = subsets(&knowledge_pool(), 6);
    let disagreements: Vec<String> = sets
        .par_iter()
        .flat_map_iter(|terms| {
            let ks = KnowledgeSet::new(["a", "b"]).with_terms(terms.iter().cloned());
            let closure = closure_bounded(&ks, 3);
            let deducer = Deducer::new(&ks, Mode::Labeled);
            let mut bad = Vec::new();
            for g in &goals {
                if deducer.can_deduce(g) != closure.contains(g) {
                    bad.push(format!("{g} from {terms:?}"));
                }
            }
            bad
        })
        .collect();
    outcome(
        disagreements.is_empty(),
        format!(
            "{} knowledge sets x {} goals, {} disagreements{}",
            sets.len(),
            goals.len(),
            disagreements.len(),
            disagreements
                .first()
                .map(|d| format!(", e.g. {d}"))
                .unwrap_or_default()
        ),
    )
}

fn trace_erasure() -> Outcome {
    let nsl = corpus::protocol("nsl").unwrap();
    let erased = nsl.erase();
    let mut count = 0usize;
    let mut bad = 0usize;
    let bounds = Bounds::new(&nsl, 2).with_corrupt_sets([vec![], vec!["a3"]]);
    let _ = enumerate_traces(&nsl, &bounds, |tr| {
        count += 1;
        if is_valid_trace(&erased, &tr.erase()) != Ok(true) {
            bad += 1;
        }
        ControlFlow::<()>::Continue(())
    });
    outcome(
        bad == 0 && count > 0,
        format!("{count} traces, {bad} rejected after erasure"),
    )
}

/// Bindings of the role-2 session in the counterexample's last state.
fn responder_ciphertexts(tr: &Trace) -> Option<(Term, Term)> {
    let s = tr
        .last()
        .sessions
        .iter()
        .find(|s| s.id.role == 2 && s.local.point == 2)?;
    let get = |name: &str| match parse_binding_key(name).ok()? {
        BindingKey::Var(v) => s.local.sigma.get(&v).cloned(),
        BindingKey::Label(_) => None,
    };
    Some((get("C1@A2")?, get("C2@A2")?))
}

fn example41_bounds(p: &Protocol) -> Bounds {
    let mut b = Bounds::per_role(p, 1);
    b.session_agents = Some(vec!["a1".into(), "a2".into(), "a3".into()]);
    b
}

fn labels_break() -> Outcome {
    let p = corpus::protocol("example41").unwrap();
    let phi = corpus::formula("phi1").unwrap();
    let labeled = satisfies(&p, &phi, &example41_bounds(&p), 1).unwrap();
    let erased = satisfies(&p.erase(), &phi.erase(), &example41_bounds(&p.erase()), 1).unwrap();
    let Verdict::Violated { counterexample, .. } = &labeled else {
        return outcome(false, "labeled protocol satisfies phi1");
    };
    let Some((c1, c2)) = responder_ciphertexts(counterexample) else {
        return outcome(false, "counterexample has no finished responder");
    };
    let pass = c1 != c2 && c1.erase() == c2.erase() && erased.holds();
    outcome(
        pass,
        format!(
            "labeled violated with C1 = {c1}, C2 = {c2}; erased: {}",
            verdict_name(&erased)
        ),
    )
}

fn erasure_breaks() -> Outcome {
    let p = corpus::protocol("example41").unwrap();
    let phi = corpus::formula("phi2").unwrap();
    let labeled = satisfies(&p, &phi, &example41_bounds(&p), 1).unwrap();
    let erased = satisfies(&p.erase(), &phi.erase(), &example41_bounds(&p.erase()), 1).unwrap();
    let Verdict::Violated { counterexample, .. } = &erased else {
        return outcome(false, "erased protocol satisfies erased phi2");
    };
    let Some((c1, c2)) = responder_ciphertexts(counterexample) else {
        return outcome(false, "counterexample has no finished responder");
    };
    outcome(
        labeled.holds() && c1 == c2,
        format!(
            "labeled: {}; erased violated with C1 = C2 = {c1}",
            verdict_name(&labeled)
        ),
    )
}

fn verdict_name(v: &Verdict) -> String {
    match v {
        Verdict::HoldsWithinBounds { traces } => format!("holds within bounds ({traces} traces)"),
        Verdict::Violated { .. } => "violated".to_string(),
    }
}

fn classification() -> Outcome {
    let l2 = |name: &str| corpus::formula(name).unwrap().is_l2();
    let others = ["phi2", "phi-s", "phi-s-corrected", "phi-a"];
    let pass = !l2("phi1") && others.iter().all(|n| l2(n));
    let flags: Vec<String> = ["phi1"]
        .iter()
        .chain(&others)
        .map(|n| format!("{n}={}", l2(n)))
        .collect();
    outcome(pass, flags.join(" "))
}

fn transfer() -> Outcome {
    let results: Vec<Result<selfcheck::TransferCase, String>> = (0..200)
        .into_par_iter()
        .map(|i| selfcheck::transfer_case(2024, i, 2))
        .collect();
    let mut errors = 0;
    let (mut forbidden, mut labeled_violated, mut erased_violated) = (0, 0, 0);
    for r in &results {
        match r {
            Err(_) => errors += 1,
            Ok(c) => {
                forbidden += usize::from(c.erased_holds && !c.labeled_holds);
                labeled_violated += usize::from(!c.labeled_holds);
                erased_violated += usize::from(!c.erased_holds);
            }
        }
    }
    outcome(
        errors == 0 && forbidden == 0,
        format!(
            "200 pairs: {forbidden} forbidden, {labeled_violated} labeled violations, {erased_violated} erased violations, {errors} errors"
        ),
    )
}

/// A witness that accepts the initiator's nonce from the network, so the
/// secrecy formula has something to rule out.
const OPEN_WITNESS: &str = "
protocol nsl-open-witness labeled;
parties 3;
agents a1, a2, a3;
role 1 {
  init -> enc(<X1@A1, A1>, ek(A2))^ag(1);
  enc(<X1@A1, X1@A2, A2>, ek(A1))^L -> enc(X1@A2, ek(A2))^ag(1);
}
role 2 {
  enc(<X1@A1, A1>, ek(A2))^L1 -> enc(<X1@A1, X1@A2, A2>, ek(A1))^ag(1);
  enc(X1@A2, ek(A2))^L2 -> stop;
}
role 3 {
  X1@A1 -> stop;
}
";

fn secrecy() -> Outcome {
    let rig = corpus::protocol("nsl-secrecy-rig").unwrap();
    let bounds = |p: &Protocol| Bounds::new(p, 2).with_corrupt_sets([vec![], vec!["a3"]]);
    let rig_verdict = satisfies(
        &rig,
        &corpus::formula("phi-s-corrected").unwrap(),
        &bounds(&rig),
        1,
    )
    .unwrap();

    let open = parse_protocol(OPEN_WITNESS).unwrap();
    let guarded = parse_formula(
        "forall LS(1, 1) as s . forall LS(3, 2) as t . NC(s(A1)) && NC(s(A2)) -> !(t(X1@A1) = s(X1@A1))",
    )
    .unwrap();
    let unguarded =
        parse_formula("forall LS(1, 1) as s . forall LS(3, 2) as t . !(t(X1@A1) = s(X1@A1))")
            .unwrap();
    let open_guarded = satisfies(&open, &guarded, &bounds(&open), 1).unwrap();
    let open_unguarded = satisfies(&open, &unguarded, &bounds(&open), 1).unwrap();
    outcome(
        rig_verdict.holds() && open_guarded.holds() && !open_unguarded.holds(),
        format!(
            "rig: {}; open witness: {}, without honesty guard: {}",
            verdict_name(&rig_verdict),
            verdict_name(&open_guarded),
            verdict_name(&open_unguarded)
        ),
    )
}

fn run_cli(args: &[&str]) -> Value {
    let out = Command::new(env!("CARGO_BIN_EXE_labelcheck"))
        .args(args)
        .env_remove("LABELCHECK_CORPUS")
        .output()
        .unwrap();
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{args:?}: {e}"))
}

fn validator(name: &str) -> jsonschema::Validator {
    let path = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("schemas")
        .join(format!("{name}.schema.json"));
    jsonschema::validator_for(&serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap())
        .unwrap()
}

fn round_trips() -> Outcome {
    let mut failures = Vec::new();
    for e in corpus::entries() {
        let ok = match e.kind {
            EntryKind::Protocol => {
                let p = corpus::protocol(e.name).unwrap();
                parse_protocol(&print_protocol(&p)).as_ref() == Ok(&p)
            }
            EntryKind::Formula => {
                let f = corpus::formula(e.name).unwrap();
                parse_formula(&f.to_string()).as_ref() == Ok(&f)
            }
            EntryKind::Trace => {
                let s = parse_trace(e.source).unwrap();
                parse_trace(&print_trace(&s)).as_ref() == Ok(&s)
            }
        };
        if !ok {
            failures.push(e.name.to_string());
        }
    }

    let dir = std::env::temp_dir().join(format!("labelcheck-acceptance-{}", std::process::id()));
    fs::create_dir_all(&dir).unwrap();
    let knowledge = dir.join("k.dsl");
    fs::write(
        &knowledge,
        "agents a1, a2;\ncorrupted a2;\nenc(<n(a1,1,1), a1>, ek(a2))^ag(1);\n",
    )
    .unwrap();
    let k = knowledge.to_str().unwrap();
    let docs: Vec<(&str, Value)> = vec![
        (
            "verdict",
            run_cli(&[
                "check",
                "--protocol",
                "corpus:example41",
                "--formula",
                "corpus:phi1",
            ]),
        ),
        (
            "verdict",
            run_cli(&[
                "check",
                "--protocol",
                "corpus:example41",
                "--formula",
                "corpus:phi2",
            ]),
        ),
        (
            "trace",
            run_cli(&["erase", "--trace", "corpus:trace-ex22", "--format", "json"]),
        ),
        (
            "trace",
            run_cli(&[
                "traces",
                "--protocol",
                "corpus:nsl",
                "--corrupt",
                "a3",
                "--limit",
                "1",
            ]),
        ),
        (
            "derivation",
            run_cli(&["derive", "--knowledge", k, "--goal", "n(a1,1,1)"]),
        ),
        (
            "derivation",
            run_cli(&["derive", "--knowledge", k, "--goal", "sk(a1)"]),
        ),
        (
            "selfcheck",
            run_cli(&["selfcheck", "--cases", "2", "--sessions", "1"]),
        ),
        ("corpus", run_cli(&["examples", "--format", "json"])),
    ];
    fs::remove_dir_all(&dir).unwrap();
    let mut invalid = 0;
    for (schema, doc) in &docs {
        if !validator(schema).is_valid(doc) {
            invalid += 1;
            failures.push(format!("{schema} output"));
        }
    }
    outcome(
        failures.is_empty(),
        format!(
            "{} corpus entries round-trip, {}/{} JSON outputs valid{}",
            corpus::entries().len() - failures.len() + invalid,
            docs.len() - invalid,
            docs.len(),
            if failures.is_empty() {
                String::new()
            } else {
                format!("; failing: {}", failures.join(", "))
            }
        ),
    )
}
