//! Horn-clause logic for the reasoning half of the pipeline.
//!
//! The crate provides a small Prolog-flavoured core: a surface-syntax parser
//! (`:-`, `,`, `;`, `\+`, `%` comments, `name/arity.` declarations),
//! Robinson unification with occurs check, depth-bounded SLD resolution, a
//! bottom-up least-model evaluator used as an independent check, and a
//! meta-interpretive learner that induces clauses from metarules.

pub mod ground;
pub mod mil;
pub mod parser;
pub mod solve;
pub mod term;
pub mod unify;

pub use ground::{least_model, universe_of};
pub use mil::{induce, InduceConfig, InduceOutcome, Hypothesis, Metarule, PartialProof};
pub use parser::{parse_program, parse_query, parse_term, ParseError, ParsedProgram};
pub use solve::{entails, solve, Limits, Program, Solutions, ENTAILMENT_DEPTH};
pub use term::{Clause, Literal, Name, Term};
pub use unify::{unify, Subst};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LogicError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("solve limits must be positive (depth {depth}, solutions {solutions})")]
    BadLimits { depth: usize, solutions: usize },
    #[error("depth bound {bound} exhausted while proving {goal}")]
    DepthExhausted { bound: usize, goal: String },
    #[error("atom {0} is not ground")]
    NotGround(String),
    #[error("negation is not supported by the bottom-up evaluator (clause {0})")]
    NegationUnsupported(String),
    #[error("metarule {0} is malformed: {1}")]
    BadMetarule(String, String),
}
