//! Increments, random streams and trajectory simulation with exact
//! zero-crossing and absorption bookkeeping.

mod increment;
mod path;
pub(crate) mod stream;

pub use increment::{IncrementLaw, IncrementSpec};
pub use path::{side_of, simulate_path, simulate_until, CrossingRecord, PathOutcome, Side};
pub use stream::RandomStream;
