use thiserror::Error;

use crate::model::{Relation, Var};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("domain must not be empty")]
    EmptyDomain,
    #[error("language must contain at least one relation")]
    EmptyLanguage,
    #[error("offset constant must be non-negative, got {0}")]
    NegativeOffset(i32),
    #[error("relation {relation} expects arity {expected}, got scope of length {got}")]
    Arity {
        relation: Relation,
        expected: usize,
        got: usize,
    },
    #[error("variable {0} appears twice in a scope")]
    RepeatedVariable(Var),
    #[error("variable {0} is not part of the vocabulary")]
    UnknownVariable(Var),
    #[error("value {value} is outside the domain of {var}")]
    OutOfDomain { var: Var, value: i32 },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SolverError {
    #[error("malformed solve request: {0}")]
    Config(String),
    #[error("solver produced an assignment violating {0}")]
    Unsound(String),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OracleError {
    #[error("the answering session was closed")]
    SessionClosed,
}

#[derive(Debug, Error)]
pub enum AcqError {
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("oracle answers are inconsistent with the bias: {0}")]
    Protocol(String),
    #[error("statistics update rejected: {0}")]
    Stats(String),
}

#[derive(Debug, Error)]
pub enum BenchmarkError {
    #[error("invalid layout: {0}")]
    Layout(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("{0}")]
    Invalid(String),
}
