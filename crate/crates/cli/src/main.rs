//! `labelcheck` command-line interface.
//!
//! Exit codes: 0 success (or "holds within bounds"), 1 negative answer
//! (violated property, underivable goal, failing self-check), 2 usage or
//! input error.

use std::fmt::Display;
use std::io::{self, BufWriter, Write};
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::{env, fs};

use clap::{Args, Parser, Subcommand, ValueEnum};
use labelcheck::corpus::{self, EntryKind};
use labelcheck::deduction::{Deducer, DeductionConfig, KnowledgeSet};
use labelcheck::execution::{enumerate_traces, Bounds, Protocol, Trace};
use labelcheck::logic::{satisfies, Formula, Verdict};
use labelcheck::selfcheck::{self, SUITES};
use labelcheck::syntax::{
    parse_formula, parse_knowledge, parse_protocol, parse_term, parse_trace, print_protocol,
    print_trace, KnowledgeFile, TraceScript,
};
use labelcheck::term::Mode;
use serde::Serialize;

// Output goes through these so a closed pipe (`labelcheck ... | head`) ends
// the program quietly instead of panicking.
macro_rules! out {
    ($($t:tt)*) => {{
        let _ = write!(io::stdout(), $($t)*);
    }};
}

macro_rules! outln {
    ($($t:tt)*) => {{
        let _ = writeln!(io::stdout(), $($t)*);
    }};
}

/// Directory searched for `corpus:NAME` references before the built-in corpus.
const CORPUS_ENV: &str = "LABELCHECK_CORPUS";

#[derive(Parser)]
#[command(
    name = "labelcheck",
    version,
    about = "Bounded checking of security protocols with labeled ciphertexts"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a formula against every trace of a protocol within bounds.
    Check(CheckArgs),
    /// Stream the traces of a protocol within bounds.
    Traces(TracesArgs),
    /// Print the label erasure of a protocol, formula or trace.
    Erase(EraseArgs),
    /// Decide whether a goal term is deducible and print a proof.
    Derive(DeriveArgs),
    /// Run the seeded erasure and transfer property suites.
    Selfcheck(SelfcheckArgs),
    /// List, print or export the built-in corpus.
    Examples(ExamplesArgs),
}

#[derive(Clone, Copy, Debug, Default, ValueEnum)]
enum Format {
    #[default]
    Json,
    Text,
}

#[derive(Args)]
struct BoundArgs {
    /// Sessions of each role.
    #[arg(long, default_value_t = 1)]
    sessions: usize,
    /// Cap on the total number of sessions.
    #[arg(long)]
    total_sessions: Option<usize>,
    /// Depth of adversary-built ciphertexts and signatures.
    #[arg(long, default_value_t = 2)]
    depth: usize,
    /// Cap on the number of events per trace.
    #[arg(long)]
    max_events: Option<usize>,
    /// Agents that may be corrupted together, comma separated; repeatable.
    /// Traces without corruption are always explored.
    #[arg(long, value_delimiter = ',', num_args = 1.., action = clap::ArgAction::Append)]
    corrupt: Vec<String>,
    /// Identities used when starting sessions (defaults to the protocol's agents).
    #[arg(long, value_delimiter = ',')]
    agents: Option<Vec<String>>,
    /// Also send each session one message it rejects.
    #[arg(long)]
    failed_sends: bool,
}

impl BoundArgs {
    fn bounds(&self, p: &Protocol) -> Bounds {
        let mut b = Bounds::per_role(p, self.sessions);
        if let Some(t) = self.total_sessions {
            b.max_sessions = b.max_sessions.min(t);
        }
        if let Some(e) = self.max_events {
            b.max_events = e;
        }
        b.msg_depth = self.depth;
        if !self.corrupt.is_empty() {
            b = b.with_corrupt_sets([Vec::new(), self.corrupt.clone()]);
        }
        b.session_agents = self
            .agents
            .as_ref()
            .map(|a| a.iter().map(|s| s.as_str().into()).collect());
        b.explore_failed_sends = self.failed_sends;
        b
    }
}

#[derive(Args)]
struct CheckArgs {
    /// Protocol file, or `corpus:NAME`.
    #[arg(long)]
    protocol: String,
    /// Formula file, or `corpus:NAME`.
    #[arg(long)]
    formula: String,
    #[command(flatten)]
    bounds: BoundArgs,
    /// Check the erased protocol against the erased formula.
    #[arg(long)]
    unlabeled: bool,
    /// Worker threads for the search.
    #[arg(long, default_value_t = default_jobs())]
    jobs: usize,
    #[arg(long, value_enum, default_value_t)]
    format: Format,
}

#[derive(Args)]
struct TracesArgs {
    #[arg(long)]
    protocol: String,
    #[command(flatten)]
    bounds: BoundArgs,
    #[arg(long)]
    unlabeled: bool,
    /// Stop after this many traces.
    #[arg(long)]
    limit: Option<usize>,
    /// Print only the number of traces.
    #[arg(long)]
    count: bool,
    #[arg(long, value_enum, default_value_t)]
    format: Format,
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct EraseTarget {
    #[arg(long)]
    protocol: Option<String>,
    #[arg(long)]
    formula: Option<String>,
    #[arg(long)]
    trace: Option<String>,
}

#[derive(Args)]
struct EraseArgs {
    #[command(flatten)]
    target: EraseTarget,
    /// Protocol a trace is replayed under, if the trace does not name one.
    #[arg(long, requires = "trace")]
    under: Option<String>,
    /// Output format for traces; protocols and formulas always print as text.
    #[arg(long, value_enum)]
    format: Option<Format>,
}

#[derive(Args)]
struct DeriveArgs {
    /// Knowledge file (`agents ...; corrupted ...; term; ...`).
    #[arg(long)]
    knowledge: PathBuf,
    /// Goal term.
    #[arg(long)]
    goal: String,
    /// Use the unlabeled deduction relation on erased inputs.
    #[arg(long)]
    unlabeled: bool,
    /// Disable recovering a message from its signature.
    #[arg(long)]
    no_sig_open: bool,
    #[arg(long, value_enum, default_value_t)]
    format: Format,
}

#[derive(Args)]
struct SelfcheckArgs {
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    cases: usize,
    /// Sessions explored for generated protocols.
    #[arg(long, default_value_t = 2)]
    sessions: usize,
    /// Suites to run (default: all).
    #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(SUITES))]
    suite: Vec<String>,
    #[arg(long, value_enum, default_value_t)]
    format: Format,
}

#[derive(Args)]
struct ExamplesArgs {
    /// Print this entry's source.
    name: Option<String>,
    /// Write every entry to a directory.
    #[arg(long, conflicts_with = "name")]
    export: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
}

fn default_jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// An error reported on stderr with exit code 2.
struct Failure(String);

impl<E: Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure(e.to_string())
    }
}

type Outcome = Result<ExitCode, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Check(a) => check(a),
        Command::Traces(a) => traces(a),
        Command::Erase(a) => erase(a),
        Command::Derive(a) => derive(a),
        Command::Selfcheck(a) => run_selfcheck(a),
        Command::Examples(a) => examples(a),
    };
    match result {
        Ok(code) => code,
        Err(Failure(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

/// Reads a `corpus:NAME` reference or a file.
fn load_source(reference: &str, kind: EntryKind) -> Result<String, Failure> {
    let Some(name) = reference.strip_prefix("corpus:") else {
        return fs::read_to_string(reference).map_err(|e| Failure(format!("{reference}: {e}")));
    };
    if let Some(dir) = env::var_os(CORPUS_ENV) {
        let path = Path::new(&dir).join(format!("{name}.{}", kind.extension()));
        if path.exists() {
            return fs::read_to_string(&path)
                .map_err(|e| Failure(format!("{}: {e}", path.display())));
        }
    }
    let entry = corpus::get(name)?;
    if entry.kind != kind {
        return Err(Failure(format!(
            "corpus entry `{name}` is a {:?}, not a {kind:?}",
            entry.kind
        )));
    }
    Ok(entry.source.to_string())
}

fn load_protocol(reference: &str) -> Result<Protocol, Failure> {
    let src = load_source(reference, EntryKind::Protocol)?;
    parse_protocol(&src).map_err(|e| Failure(format!("{reference}: {e}")))
}

fn load_formula(reference: &str) -> Result<Formula, Failure> {
    let src = load_source(reference, EntryKind::Formula)?;
    parse_formula(&src).map_err(|e| Failure(format!("{reference}: {e}")))
}

fn load_trace(reference: &str) -> Result<TraceScript, Failure> {
    let src = load_source(reference, EntryKind::Trace)?;
    parse_trace(&src).map_err(|e| Failure(format!("{reference}: {e}")))
}

fn print_json<T: Serialize>(value: &T) -> Result<(), Failure> {
    outln!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn check(a: CheckArgs) -> Outcome {
    let mut p = load_protocol(&a.protocol)?;
    let mut phi = load_formula(&a.formula)?;
    if a.unlabeled {
        p = p.erase();
        phi = phi.erase();
    }
    let verdict = satisfies(&p, &phi, &a.bounds.bounds(&p), a.jobs.max(1))?;
    match a.format {
        Format::Json => print_json(&verdict)?,
        Format::Text => match &verdict {
            Verdict::HoldsWithinBounds { traces } => {
                outln!("holds within bounds ({traces} traces)")
            }
            Verdict::Violated {
                counterexample,
                assignments,
            } => {
                outln!("violated; counterexample:");
                out!("{}", counterexample.to_text());
                for asg in assignments {
                    outln!(
                        "{} = LS({}, {}) with {}",
                        asg.sub,
                        asg.role,
                        asg.point,
                        asg.bindings
                    );
                }
            }
        },
    }
    Ok(ExitCode::from(if verdict.holds() { 0 } else { 1 }))
}

fn traces(a: TracesArgs) -> Outcome {
    let mut p = load_protocol(&a.protocol)?;
    if a.unlabeled {
        p = p.erase();
    }
    let bounds = a.bounds.bounds(&p);
    let limit = a.limit.unwrap_or(usize::MAX);
    let mut out = BufWriter::new(io::stdout().lock());
    let mut n = 0usize;
    let mut error = None;
    let _ = enumerate_traces(&p, &bounds, |tr| {
        if n >= limit {
            return ControlFlow::Break(());
        }
        n += 1;
        if a.count {
            return ControlFlow::Continue(());
        }
        let written = match a.format {
            Format::Json => serde_json::to_string(tr)
                .map_err(io::Error::from)
                .and_then(|s| writeln!(out, "{s}")),
            Format::Text => writeln!(out, "# trace {n}\n{}", tr.to_text()),
        };
        match written {
            Ok(()) => ControlFlow::Continue(()),
            Err(e) => {
                error = Some(e);
                ControlFlow::Break(())
            }
        }
    });
    let mut finish = || {
        if a.count {
            writeln!(out, "{n}")?;
        }
        out.flush()
    };
    match error.map_or_else(&mut finish, Err) {
        Err(e) if e.kind() != io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(ExitCode::SUCCESS),
    }
}

fn erase(a: EraseArgs) -> Outcome {
    let t = a.target;
    if let Some(r) = t.protocol {
        out!("{}", print_protocol(&load_protocol(&r)?.erase()));
    } else if let Some(r) = t.formula {
        outln!("{}", load_formula(&r)?.erase());
    } else if let Some(r) = t.trace {
        let script = load_trace(&r)?;
        let erased = TraceScript {
            events: script.events.iter().map(|e| e.erase()).collect(),
            ..script.clone()
        };
        match a.format.unwrap_or(Format::Text) {
            Format::Text => out!("{}", print_trace(&erased)),
            Format::Json => {
                let proto = match a
                    .under
                    .or_else(|| script.protocol.as_ref().map(|n| format!("corpus:{n}")))
                {
                    Some(p) => load_protocol(&p)?,
                    None => {
                        return Err(Failure(format!(
                            "trace `{}` names no protocol; pass --under",
                            script.name
                        )))
                    }
                };
                let tr = Trace::from_events(&proto, script.events)?;
                print_json(&tr.erase())?;
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct DeriveReport<'a> {
    goal: String,
    mode: Mode,
    deducible: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    derivation: Option<&'a labelcheck::Derivation>,
}

fn derive(a: DeriveArgs) -> Outcome {
    let src = fs::read_to_string(&a.knowledge)
        .map_err(|e| Failure(format!("{}: {e}", a.knowledge.display())))?;
    let KnowledgeFile {
        mut agents,
        corrupted,
        terms,
    } = parse_knowledge(&src).map_err(|e| Failure(format!("{}: {e}", a.knowledge.display())))?;
    let mut goal = parse_term(&a.goal)?;
    if !goal.is_ground() {
        return Err(Failure(format!("goal `{goal}` is not ground")));
    }
    for t in terms.iter().chain([&goal]) {
        agents.extend(t.agents());
    }
    agents.extend(corrupted.iter().cloned());
    let mut ks = KnowledgeSet::new(agents.iter().map(|a| a.to_string()))
        .with_terms(terms)
        .with_corrupted(corrupted.iter().map(|a| a.to_string()));
    let mode = if a.unlabeled {
        ks = ks.erase();
        goal = goal.erase();
        Mode::Unlabeled
    } else {
        Mode::Labeled
    };
    let config = DeductionConfig {
        sig_open: !a.no_sig_open,
    };
    let derivation = Deducer::with_config(&ks, mode, config).derive(&goal);
    match a.format {
        Format::Json => print_json(&DeriveReport {
            goal: goal.to_string(),
            mode,
            deducible: derivation.is_some(),
            derivation: derivation.as_ref(),
        })?,
        Format::Text => match &derivation {
            Some(d) => out!("{}", d.to_text()),
            None => outln!("{goal} is not deducible"),
        },
    }
    Ok(ExitCode::from(if derivation.is_some() { 0 } else { 1 }))
}

fn run_selfcheck(a: SelfcheckArgs) -> Outcome {
    let names: Vec<&str> = if a.suite.is_empty() {
        SUITES.to_vec()
    } else {
        a.suite.iter().map(String::as_str).collect()
    };
    let mut reports = Vec::new();
    for name in names {
        let r = selfcheck::run(name, a.seed, a.cases, a.sessions)
            .expect("suite names are validated by clap");
        if let Format::Text = a.format {
            outln!("{:<18} {}/{} passed", r.name, r.passed, r.cases);
            for f in &r.failures {
                outln!("  {f}");
            }
        }
        reports.push(r);
    }
    if let Format::Json = a.format {
        print_json(
            &serde_json::json!({ "seed": a.seed, "cases": a.cases, "sessions": a.sessions, "suites": reports }),
        )?;
    }
    Ok(ExitCode::from(if reports.iter().all(|r| r.ok()) {
        0
    } else {
        1
    }))
}

fn examples(a: ExamplesArgs) -> Outcome {
    if let Some(dir) = a.export {
        for path in corpus::export(&dir)? {
            outln!("{}", path.display());
        }
        return Ok(ExitCode::SUCCESS);
    }
    if let Some(name) = a.name {
        out!("{}", corpus::get(&name)?.source);
        return Ok(ExitCode::SUCCESS);
    }
    match a.format {
        Format::Json => print_json(&corpus::entries())?,
        Format::Text => {
            for e in corpus::entries() {
                outln!(
                    "{:<16} {:<8} {}",
                    e.name,
                    format!("{:?}", e.kind).to_lowercase(),
                    e.note
                );
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}
