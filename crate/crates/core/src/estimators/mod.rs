//! Monte Carlo estimators for persistence curves, the power-law exponent,
//! the classical constants `c_x`, the limit function `u`, the constant `V(x)`
//! and the meander mixture weight `rho`.

pub(crate) mod constants;
pub(crate) mod fit;
mod survival;

pub use constants::{
    estimate_c, estimate_rho, estimate_u, estimate_v, AnalyticU, CEstimate, ConstantU, GridU, RhoEstimate,
    UEstimate, UProvider, USource, VEstimate, DEFAULT_K_MAX, DEFAULT_STEP_CAP, MAX_CENSORED_FRACTION,
};
pub use fit::{fit_exponent, ExponentFit};
pub use survival::{estimate_survival, geometric_grid, SurvivalCurve};
