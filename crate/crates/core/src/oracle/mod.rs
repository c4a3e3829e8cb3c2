//! Exact ground truth on lattices.
//!
//! [`dp`] evolves the law of the killed walk forward over augmented lattice
//! states; [`enumerate`] sums path probabilities over every increment
//! sequence in exact rational arithmetic and serves as the independent check
//! of the dynamic program.

pub mod dp;
pub mod enumerate;

pub use dp::{dp_endpoint_distribution, dp_no_crossing_survival, dp_survival, dp_u, dp_u_grid, EndpointPmf};
pub use enumerate::enumerate_small;
