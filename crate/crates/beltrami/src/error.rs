//! Crate-wide error type.

use thiserror::Error;

use crate::solvers::Trajectory;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty graph")]
    EmptyGraph,

    #[error("node id {id} out of range (n = {n})")]
    NodeOutOfRange { id: usize, n: usize },

    #[error("self-loop at node {0}")]
    SelfLoop(usize),

    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(usize, usize),

    #[error("symmetry violated: ({0}, {1}) present but ({1}, {0}) missing")]
    AsymmetricEdge(usize, usize),

    #[error("({0}, {1}) is not an edge of the stencil")]
    NonEdge(usize, usize),

    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("point outside the Poincare ball (|u| = {norm})")]
    OutsideBall { norm: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("numerical blow-up: non-finite state at t = {t} (step {step})")]
    BlowUp {
        t: f64,
        step: usize,
        partial: Option<Box<Trajectory>>,
    },

    #[error("max_steps ({max_steps}) exceeded at t = {t}")]
    MaxStepsExceeded {
        max_steps: usize,
        t: f64,
        partial: Box<Trajectory>,
    },

    #[error("no supervision: graph has zero edges")]
    NoSupervision,

    #[error("empty subset")]
    EmptySubset,

    #[error("non-finite gradient")]
    NonFiniteGradient,

    #[error("singular linear system: {0}")]
    SingularSystem(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
