//! Small statistical helpers: Wilson intervals and weighted least squares.

use crate::error::{Error, Result};

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Wilson score interval for `successes` out of `trials` at normal quantile `z`.
pub fn wilson(successes: u64, trials: u64, z: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    // Clamp so that the point estimate always lies inside the interval.
    ((center - half).max(0.0).min(p), (center + half).min(1.0).max(p))
}

/// Binomial standard error `sqrt(p (1 - p) / n)`.
pub fn binomial_se(p: f64, trials: u64) -> f64 {
    if trials == 0 {
        return f64::INFINITY;
    }
    (p * (1.0 - p) / trials as f64).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ErrorScale {
    /// Weights are exact inverse variances.
    Known,
    /// Weights are relative; the residual variance sets the scale.
    Residual,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
    pub intercept_se: f64,
    pub r_squared: f64,
}

/// Weighted least squares of `ys` on `xs`.
pub fn weighted_linear_fit(xs: &[f64], ys: &[f64], weights: &[f64], scale: ErrorScale) -> Result<LinearFit> {
    let n = xs.len();
    if n < 2 || ys.len() != n || weights.len() != n {
        return Err(Error::InvalidArgument(format!(
            "linear fit needs at least two points with matching weights, got {n}"
        )));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
        return Err(Error::InvalidArgument("weights must be finite and positive".into()));
    }
    let sw: f64 = weights.iter().sum();
    let mx = xs.iter().zip(weights).map(|(x, w)| w * x).sum::<f64>() / sw;
    let my = ys.iter().zip(weights).map(|(y, w)| w * y).sum::<f64>() / sw;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for ((x, y), w) in xs.iter().zip(ys).zip(weights) {
        let (dx, dy) = (x - mx, y - my);
        sxx += w * dx * dx;
        sxy += w * dx * dy;
        syy += w * dy * dy;
    }
    if sxx <= 0.0 {
        return Err(Error::InvalidArgument("linear fit needs distinct abscissae".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .zip(weights)
        .map(|((x, y), w)| w * (y - intercept - slope * x).powi(2))
        .sum();
    let r_squared = if syy > 0.0 {
        (1.0 - ss_res / syy).clamp(0.0, 1.0)
    } else {
        1.0
    };
    let sigma2 = match scale {
        ErrorScale::Known => 1.0,
        ErrorScale::Residual if n > 2 => ss_res / (n - 2) as f64,
        ErrorScale::Residual => 0.0,
    };
    let slope_se = (sigma2 / sxx).sqrt();
    let intercept_se = (sigma2 * (1.0 / sw + mx * mx / sxx)).sqrt();
    Ok(LinearFit {
        slope,
        intercept,
        slope_se,
        intercept_se,
        r_squared,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wilson_brackets_estimate() {
        for (s, n) in [(0, 10), (10, 10), (3, 1000), (500, 1000)] {
            let (lo, hi) = wilson(s, n, Z95);
            let p = s as f64 / n as f64;
            assert!(lo <= p && p <= hi && lo >= 0.0 && hi <= 1.0);
        }
        let (lo, hi) = wilson(0, 100, Z95);
        assert_eq!(lo, 0.0);
        assert!(hi > 0.0);
    }

    #[test]
    fn wilson_known_value() {
        // 50/100 at z = 1.96: center 0.5, half-width 1.96 * sqrt(0.25/100 + 1.96^2/40000) / (1 + 1.96^2/100).
        let (lo, hi) = wilson(50, 100, Z95);
        let z = Z95;
        let half = z * (0.0025 + z * z / 40_000.0f64).sqrt() / (1.0 + z * z / 100.0);
        assert!((lo - (0.5 - half)).abs() < 1e-15);
        assert!((hi - (0.5 + half)).abs() < 1e-15);
    }

    #[test]
    fn exact_line() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 - 0.5 * x).collect();
        let fit = weighted_linear_fit(&xs, &ys, &[1.0, 2.0, 3.0, 4.0], ErrorScale::Residual).unwrap();
        assert!((fit.slope + 0.5).abs() < 1e-14);
        assert!((fit.intercept - 2.0).abs() < 1e-14);
        assert_eq!(fit.r_squared, 1.0);
        assert!(fit.slope_se < 1e-12);
    }

    #[test]
    fn rejects_degenerate_input() {
        assert!(weighted_linear_fit(&[1.0], &[1.0], &[1.0], ErrorScale::Known).is_err());
        assert!(weighted_linear_fit(&[1.0, 1.0], &[1.0, 2.0], &[1.0, 1.0], ErrorScale::Known).is_err());
        assert!(weighted_linear_fit(&[1.0, 2.0], &[1.0, 2.0], &[1.0, 0.0], ErrorScale::Known).is_err());
    }
}
