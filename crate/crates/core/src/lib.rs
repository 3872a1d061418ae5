//! Toolkit for critical branching processes with immigration in a random
//! environment, stopped at zero.
//!
//! The life period `ζ` of the stopped process is studied three ways:
//! forward Monte Carlo ([`simulate`]), exact enumeration over finite-support
//! environments and the renewal recursion ([`renewal`]). The associated random
//! walk and its fluctuation functionals live in [`walk`]; exponent fits and
//! stabilisation diagnostics in [`analyze`]; the command-line orchestration in
//! [`runner`].

pub mod analyze;
pub mod envmodel;
pub mod exec;
pub mod gfalg;
pub mod poly;
pub mod renewal;
pub mod rng;
pub mod runner;
pub mod scalar;
pub mod simulate;
pub mod stats;
pub mod walk;

pub use envmodel::{
    EnvironmentModel, HypothesisParams, ImmigrationLaw, ModelError, OffspringLaw, StableParams,
};
pub use exec::Execution;
pub use gfalg::{EnvRealization, FracLinear};
pub use renewal::RenewalSeries;
pub use simulate::TailEstimate;
pub use walk::WalkPath;
