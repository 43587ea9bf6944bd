//! Error type shared by the whole crate.
//!
//! Variants are grouped by how a caller should react: input errors (bad files
//! or inconsistent configuration), numeric errors (singular or ill-conditioned
//! systems), and non-convergence of iterative solvers. The CLI maps these
//! groups onto distinct process exit codes.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    // ---- input / validation ----
    #[error("syntax error in {what}: {source}")]
    Syntax {
        what: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("invalid {what}: {msg}")]
    Invalid { what: String, msg: String },
    #[error("bus {0} referenced by a branch does not exist")]
    UnknownBus(u32),
    #[error("duplicate bus id {0}")]
    DuplicateBus(u32),
    #[error("branch {from}-{to} has zero reactance")]
    ZeroReactance { from: u32, to: u32 },
    #[error("expected exactly one slack bus, found {0}")]
    SlackCount(usize),
    #[error("network is not connected: bus {0} is unreachable from the slack bus")]
    Disconnected(u32),
    #[error("region map does not cover bus {0}")]
    UncoveredBus(u32),
    #[error("region {0} has no deterministic PQ bus to anchor")]
    RegionWithoutPq(usize),
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: String,
        expected: usize,
        got: usize,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    // ---- numeric ----
    #[error("{what} is singular or near-singular (condition estimate {cond:.3e})")]
    Singular { what: String, cond: f64 },
    #[error("row block of region {region} is rank deficient")]
    RankDeficient { region: usize },
    #[error("{what} still ill-conditioned after {retries} retries (last condition {cond:.3e})")]
    Conditioning {
        what: String,
        retries: usize,
        cond: f64,
    },
    #[error("mixture fit degenerated in all {restarts} restarts")]
    DegenerateFit { restarts: usize },

    // ---- iteration ----
    #[error("{what} did not converge within {iters} iterations (residual {residual:.3e})")]
    NonConvergence {
        what: String,
        iters: usize,
        residual: f64,
    },

    // ---- protocol stage wrapper ----
    #[error("protocol step {step} ({what}) failed: {source}")]
    Step {
        step: u8,
        what: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn invalid(what: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Invalid {
            what: what.into(),
            msg: msg.into(),
        }
    }

    /// Tag an error with the protocol step it surfaced in.
    pub fn at_step(self, step: u8, what: impl Into<String>) -> Self {
        Error::Step {
            step,
            what: what.into(),
            source: Box::new(self),
        }
    }

    /// Coarse classification used by the CLI for exit codes.
    pub fn kind(&self) -> ErrorKind {
        use Error::*;
        match self {
            Syntax { .. } | Invalid { .. } | UnknownBus(_) | DuplicateBus(_)
            | ZeroReactance { .. } | SlackCount(_) | Disconnected(_) | UncoveredBus(_)
            | RegionWithoutPq(_) | Dimension { .. } | Io { .. } => ErrorKind::Input,
            Singular { .. } | RankDeficient { .. } | Conditioning { .. }
            | DegenerateFit { .. } => ErrorKind::Numeric,
            NonConvergence { .. } => ErrorKind::NonConvergence,
            Step { source, .. } => source.kind(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Input,
    Numeric,
    NonConvergence,
}
