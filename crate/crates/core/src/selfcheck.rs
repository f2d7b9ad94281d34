//! Seeded property suites relating the labeled and unlabeled models.
//!
//! * `deduction-erasure`: a message deducible with labels stays deducible
//!   once labels are erased from it and from the knowledge.
//! * `trace-erasure`: erasing a valid trace gives a valid trace of the erased
//!   protocol.
//! * `formula-erasure`: for a formula in the equality-restricted fragment, if
//!   the erased formula holds on the erased trace, the formula holds on the
//!   trace.
//! * `transfer`: never "erased protocol satisfies erased formula" while the
//!   labeled protocol violates the formula.

use std::ops::ControlFlow;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::deduction::{deducible_labeled, deducible_unlabeled};
use crate::execution::{enumerate_traces, is_valid_trace, Bounds, Protocol};
use crate::gen::{derivable_pair, random_l2_formula, random_protocol};
use crate::logic::{interpret, satisfies, Verdict};

#[derive(Clone, Debug, Serialize)]
pub struct SuiteReport {
    pub name: &'static str,
    pub cases: usize,
    pub passed: usize,
    /// Descriptions of the first few failures.
    pub failures: Vec<String>,
}

impl SuiteReport {
    pub fn ok(&self) -> bool {
        self.passed == self.cases
    }

    fn collect(name: &'static str, results: Vec<Result<(), String>>) -> Self {
        let cases = results.len();
        let failures: Vec<String> = results.into_iter().filter_map(Result::err).collect();
        SuiteReport {
            name,
            cases,
            passed: cases - failures.len(),
            failures: failures.into_iter().take(5).collect(),
        }
    }
}

pub const SUITES: [&str; 4] = [
    "deduction-erasure",
    "trace-erasure",
    "formula-erasure",
    "transfer",
];

fn rng_for(seed: u64, case: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(
        seed.wrapping_mul(0x9e37_79b9_7f4a_7c15)
            .wrapping_add(case as u64),
    )
}

/// Bounds used for generated protocols: `sessions` sessions over `a1`, `a2`,
/// optionally with `a2` corrupted.
pub fn small_bounds(p: &Protocol, sessions: usize) -> Bounds {
    Bounds::new(p, sessions).with_corrupt_sets([vec![], vec!["a2"]])
}

pub fn deduction_erasure(seed: u64, cases: usize) -> SuiteReport {
    let results = (0..cases)
        .into_par_iter()
        .map(|i| {
            let (ks, m) = derivable_pair(&mut rng_for(seed, i), 4);
            if !deducible_labeled(&ks, &m) {
                return Err(format!("case {i}: generated message {m} is not deducible"));
            }
            if !deducible_unlabeled(&ks.erase(), &m.erase()) {
                return Err(format!(
                    "case {i}: {} not deducible after erasure",
                    m.erase()
                ));
            }
            Ok(())
        })
        .collect();
    SuiteReport::collect("deduction-erasure", results)
}

pub fn trace_erasure(seed: u64, cases: usize, sessions: usize) -> SuiteReport {
    let results = (0..cases)
        .into_par_iter()
        .map(|i| {
            let p = random_protocol(&mut rng_for(seed, i), &format!("gen{i}"));
            let erased = p.erase();
            let mut failure = None;
            let _ = enumerate_traces(&p, &small_bounds(&p, sessions), |tr| {
                match is_valid_trace(&erased, &tr.erase()) {
                    Ok(true) => ControlFlow::Continue(()),
                    other => {
                        failure = Some(format!(
                            "case {i}: erased trace rejected ({other:?})\n{}",
                            tr.to_text()
                        ));
                        ControlFlow::Break(())
                    }
                }
            });
            failure.map_or(Ok(()), Err)
        })
        .collect();
    SuiteReport::collect("trace-erasure", results)
}

pub fn formula_erasure(seed: u64, cases: usize, sessions: usize) -> SuiteReport {
    let results = (0..cases)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_for(seed, i);
            let p = random_protocol(&mut rng, &format!("gen{i}"));
            let phi = random_l2_formula(&mut rng, &p);
            let erased = phi.erase();
            let mut failure = None;
            let _ = enumerate_traces(&p, &small_bounds(&p, sessions), |tr| {
                let lhs = interpret(&erased, &tr.erase());
                let rhs = interpret(&phi, tr);
                match (lhs, rhs) {
                    (Ok(true), Ok(false)) => {
                        failure = Some(format!(
                            "case {i}: {phi} fails but its erasure holds\n{}",
                            tr.to_text()
                        ));
                        ControlFlow::Break(())
                    }
                    (Err(e), _) | (_, Err(e)) => {
                        failure = Some(format!("case {i}: evaluation error {e}"));
                        ControlFlow::Break(())
                    }
                    _ => ControlFlow::Continue(()),
                }
            });
            failure.map_or(Ok(()), Err)
        })
        .collect();
    SuiteReport::collect("formula-erasure", results)
}

/// Outcome of one `transfer` case.
#[derive(Clone, Debug)]
pub struct TransferCase {
    pub protocol: Protocol,
    pub formula: crate::logic::Formula,
    pub erased_holds: bool,
    pub labeled_holds: bool,
}

pub fn transfer_case(seed: u64, case: usize, sessions: usize) -> Result<TransferCase, String> {
    let mut rng = rng_for(seed, case);
    let p = random_protocol(&mut rng, &format!("gen{case}"));
    let phi = random_l2_formula(&mut rng, &p);
    let erased_p = p.erase();
    let unl = satisfies(
        &erased_p,
        &phi.erase(),
        &small_bounds(&erased_p, sessions),
        1,
    )
    .map_err(|e| format!("case {case}: {e}"))?;
    let lab = satisfies(&p, &phi, &small_bounds(&p, sessions), 1)
        .map_err(|e| format!("case {case}: {e}"))?;
    if let Verdict::Violated { counterexample, .. } = &lab {
        if is_valid_trace(&p, counterexample) != Ok(true)
            || interpret(&phi, counterexample) != Ok(false)
        {
            return Err(format!("case {case}: counterexample does not re-check"));
        }
    }
    Ok(TransferCase {
        protocol: p,
        formula: phi,
        erased_holds: unl.holds(),
        labeled_holds: lab.holds(),
    })
}

pub fn transfer(seed: u64, cases: usize, sessions: usize) -> SuiteReport {
    let results = (0..cases)
        .into_par_iter()
        .map(|i| {
            let c = transfer_case(seed, i, sessions)?;
            if c.erased_holds && !c.labeled_holds {
                return Err(format!(
                    "case {i}: erased protocol satisfies the erased formula, labeled one violates {}",
                    c.formula
                ));
            }
            Ok(())
        })
        .collect();
    SuiteReport::collect("transfer", results)
}

/// Runs the named suite, or `None` for an unknown name. `sessions` bounds
/// the executions explored for generated protocols.
pub fn run(name: &str, seed: u64, cases: usize, sessions: usize) -> Option<SuiteReport> {
    Some(match name {
        "deduction-erasure" => deduction_erasure(seed, cases),
        "trace-erasure" => trace_erasure(seed, cases, sessions),
        "formula-erasure" => formula_erasure(seed, cases, sessions),
        "transfer" => transfer(seed, cases, sessions),
        _ => return None,
    })
}
