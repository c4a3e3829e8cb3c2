//! Diagnostics for the four model conditions and for the endpoint law of
//! surviving walks against the Brownian-meander marginal.

mod conditions;
mod ks;

pub use conditions::{
    check_c1, check_c2, check_c3, check_c4_endpoint, C1Thresholds, C2Thresholds, C3Thresholds,
    C4Outcome, C4Source, C4Thresholds, Condition, ConditionReport, ConditionRow, Endpoint, EvalMode, Verdict,
};
pub use ks::{ks_statistic, ks_statistic_weighted, rayleigh_cdf};
