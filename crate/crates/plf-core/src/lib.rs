//! Privacy-preserving distributed probabilistic load flow (PLF).
//!
//! The crate is organised around the pipeline that a set of regional operators
//! ("agents") execute together:
//!
//! 1. [`net`] — parse a case file, assemble the decoupled linearized power
//!    flow (DLPF) system `A·x = b`, and split it into per-region row blocks.
//! 2. [`gmm`] — Gaussian mixture models for the uncertain injections: EM
//!    fitting, exact affine propagation, sampling, and Jensen–Shannon
//!    divergence estimation.
//! 3. [`consensus`] — Metropolis weights, eigenvalue acceleration, and the
//!    masked average-consensus primitive (the only inter-agent channel).
//! 4. [`apc`] — accelerated projection-based consensus for solving `A·X = B`
//!    from per-region blocks without exchanging them.
//! 5. [`dplf`] — the augmented distributed PLF protocol: artificial
//!    observation plans, the affine decomposition `Λ = [α β ε γ′]`, fake-input
//!    recovery of the private constant term, and the end-to-end driver.
//! 6. [`oracle`] — centralized and Monte-Carlo reference solutions plus the
//!    comparison report used to audit distributed results.
//!
//! All randomized operations take explicit seeds and are bit-reproducible.

pub mod apc;
pub mod consensus;
pub mod dplf;
pub mod error;
pub mod gmm;
pub mod net;
pub mod oracle;
pub mod report;

pub use error::{Error, Result};
