//! Simulation laboratory for centered random walks killed by a general
//! segment-wise absorption mechanism.
//!
//! A walk `S_0 = x, S_{m+1} = S_m + X_{m+1}` is split into segments at every
//! zero-crossing (zero counts as the nonnegative side). Each segment draws an
//! independent random input and the walk is absorbed the first time the
//! mechanism's kill predicate fires for the current segment age, input and
//! position.
//!
//! * [`walk`]: increment laws, random streams and path simulation.
//! * [`mechanisms`]: the absorption families.
//! * [`oracle`]: exact lattice dynamic programming and brute-force enumeration.
//! * [`estimators`]: Monte Carlo survival curves, exponent fits and limit constants.
//! * [`checks`]: diagnostics for the four model conditions and the endpoint law.
//! * [`cli`]: config-driven experiment runner.

pub mod checks;
pub mod cli;
pub mod error;
pub mod estimators;
pub mod mechanisms;
pub mod oracle;
pub mod parallel;
pub mod stats;
pub mod walk;

pub use error::{Error, Result};
pub use mechanisms::{MechanismSpec, SegmentMechanism};
pub use parallel::MonteCarlo;
pub use walk::{side_of, IncrementLaw, IncrementSpec, RandomStream, Side};
