//! Bounded symbolic analysis of security protocols in two execution models:
//! one where every ciphertext and signature carries a label naming whose
//! randomness produced it, and the usual unlabeled one.
//!
//! The crate provides the term algebra ([`term`]), adversary deduction
//! ([`deduction`]), the state-transition semantics and bounded trace
//! enumeration ([`execution`]), a trace-property logic with a model checker
//! ([`logic`]), a small DSL ([`syntax`]) and a corpus of worked examples
//! ([`corpus`]).

pub mod corpus;
pub mod deduction;
pub mod execution;
pub mod gen;
pub mod logic;
pub mod selfcheck;
pub mod syntax;
pub mod term;

pub use deduction::{Deducer, DeductionConfig, Derivation, KnowledgeSet};
pub use execution::{is_valid_trace, Bounds, Event, GlobalState, Protocol, Trace};
pub use logic::{interpret, satisfies, Formula, Verdict};
pub use term::{Label, Mode, Substitution, Term, Var};
