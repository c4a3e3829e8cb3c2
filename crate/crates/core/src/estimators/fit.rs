use serde::Serialize;

use super::SurvivalCurve;
use crate::error::{Error, Result};
use crate::stats::{weighted_linear_fit, ErrorScale};

/// Power-law fit `log P = intercept + slope * log n`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ExponentFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
    pub r_squared: f64,
}

/// Weighted least squares of `log estimate` on `log n`.
///
/// Monte Carlo points are weighted by the inverse delta-method variance
/// `p / ((1 - p) N)` of `log p`, floored at `N^2` for points with `p = 1`.
/// Grid points share paths but are treated as independent, so the reported
/// standard error is optimistic. Exact curves use equal weights and a
/// residual-based standard error.
pub fn fit_exponent(curve: &SurvivalCurve) -> Result<ExponentFit> {
    if let Some(i) = curve.estimates.iter().position(|&p| p <= 0.0) {
        return Err(Error::ZeroSurvival(format!(
            "estimate at n = {} is zero; restrict the fitted range",
            curve.horizons[i]
        )));
    }
    let xs: Vec<f64> = curve.horizons.iter().map(|&n| (n as f64).ln()).collect();
    let ys: Vec<f64> = curve.estimates.iter().map(|p| p.ln()).collect();
    let (weights, scale) = if curve.is_exact() {
        (vec![1.0; xs.len()], ErrorScale::Residual)
    } else {
        (log_weights(&curve.estimates, curve.total_paths), ErrorScale::Known)
    };
    let fit = weighted_linear_fit(&xs, &ys, &weights, scale)?;
    Ok(ExponentFit {
        slope: fit.slope,
        intercept: fit.intercept,
        slope_stderr: fit.slope_se,
        r_squared: fit.r_squared,
    })
}

/// Inverse delta-method variances of `log p` for binomial proportions.
pub(crate) fn log_weights(estimates: &[f64], total: u64) -> Vec<f64> {
    let n = total as f64;
    estimates
        .iter()
        .map(|&p| 1.0 / ((1.0 - p) / (p * n)).max(1.0 / (n * n)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::geometric_grid;

    #[test]
    fn exact_power_laws() {
        let grid = geometric_grid(64, 4096);
        let pure: Vec<f64> = grid.iter().map(|&n| (n as f64).powf(-0.5)).collect();
        let fit = fit_exponent(&SurvivalCurve::exact(0.0, grid.clone(), pure)).unwrap();
        assert!((fit.slope + 0.5).abs() < 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);

        let scaled: Vec<f64> = grid.iter().map(|&n| 3.0 * (n as f64).powf(-0.5)).collect();
        let fit = fit_exponent(&SurvivalCurve::exact(0.0, grid, scaled)).unwrap();
        assert!((fit.slope + 0.5).abs() < 1e-12);
        assert!((fit.intercept - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn zero_point_is_an_error() {
        let c = SurvivalCurve::exact(0.0, vec![1, 2, 3], vec![0.5, 0.2, 0.0]);
        assert!(matches!(fit_exponent(&c), Err(Error::ZeroSurvival(_))));
    }

    #[test]
    fn slope_invariant_under_scaling_mc_weights() {
        let grid = vec![64u64, 128, 256, 512, 1024];
        let est: Vec<f64> = vec![0.1, 0.072, 0.049, 0.036, 0.024];
        let mk = |e: Vec<f64>| SurvivalCurve {
            x: 0.0,
            horizons: grid.clone(),
            survivors: vec![],
            total_paths: 1_000_000,
            ci_low: e.clone(),
            ci_high: e.clone(),
            estimates: e,
        };
        let a = fit_exponent(&mk(est.clone())).unwrap();
        // Equal-weight exact curves are exactly scale invariant.
        let ea = fit_exponent(&SurvivalCurve::exact(0.0, grid.clone(), est.clone())).unwrap();
        let eb = fit_exponent(&SurvivalCurve::exact(0.0, grid.clone(), est.iter().map(|p| p * 0.37).collect()))
            .unwrap();
        assert!((ea.slope - eb.slope).abs() < 1e-12);
        assert!(a.slope < -0.4 && a.slope > -0.6);
    }
}
