use crate::error::{Error, Result};

/// CDF of the standard Rayleigh law, the time-1 marginal of the Brownian
/// meander: `1 - exp(-z^2 / 2)`.
pub fn rayleigh_cdf(z: f64) -> Result<f64> {
    if z.is_nan() || z < 0.0 {
        return Err(Error::InvalidArgument(format!("rayleigh_cdf needs z >= 0, got {z}")));
    }
    Ok(-(-0.5 * z * z).exp_m1())
}

/// One-sample Kolmogorov-Smirnov distance between the empirical CDF of a
/// sorted sample and `cdf`.
pub fn ks_statistic(sample: &[f64], cdf: impl Fn(f64) -> f64) -> Result<f64> {
    if sample.is_empty() {
        return Err(Error::EmptySample);
    }
    debug_assert!(sample.windows(2).all(|w| w[0] <= w[1]), "sample must be sorted");
    let m = sample.len() as f64;
    let d = sample.iter().enumerate().fold(0.0f64, |d, (i, &x)| {
        let f = cdf(x);
        d.max((i + 1) as f64 / m - f).max(f - i as f64 / m)
    });
    Ok(d.clamp(0.0, 1.0))
}

/// Kolmogorov-Smirnov distance for a discrete law given as `(value, weight)`
/// atoms sorted by value with distinct values. Weights are normalized.
pub fn ks_statistic_weighted(atoms: &[(f64, f64)], cdf: impl Fn(f64) -> f64) -> Result<f64> {
    let total: f64 = atoms.iter().map(|a| a.1).sum();
    if atoms.is_empty() || total <= 0.0 {
        return Err(Error::EmptySample);
    }
    let mut below = 0.0;
    let mut d = 0.0f64;
    for &(x, w) in atoms {
        let f = cdf(x);
        let above = below + w / total;
        d = d.max((above - f).abs()).max((f - below).abs());
        below = above;
    }
    Ok(d.clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rayleigh(z: f64) -> f64 {
        rayleigh_cdf(z).unwrap()
    }

    fn rayleigh_quantile(p: f64) -> f64 {
        (-2.0 * (1.0 - p).ln()).sqrt()
    }

    #[test]
    fn rayleigh_values() {
        assert_eq!(rayleigh(0.0), 0.0);
        let median = (2.0 * 2f64.ln()).sqrt();
        assert!((median - 1.17741).abs() < 1e-5);
        assert!((rayleigh(median) - 0.5).abs() < 1e-15);
        assert!(1.0 - rayleigh(10.0) < 1e-21);
        assert!(rayleigh_cdf(-0.1).is_err());
    }

    #[test]
    fn single_point_at_median() {
        let median = rayleigh_quantile(0.5);
        assert!((ks_statistic(&[median], rayleigh).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(ks_statistic(&[], rayleigh), Err(Error::EmptySample));
    }

    #[test]
    fn exact_quantiles_give_half_over_m() {
        let m = 1000;
        let sample: Vec<f64> = (1..=m).map(|i| rayleigh_quantile((i as f64 - 0.5) / m as f64)).collect();
        let d = ks_statistic(&sample, rayleigh).unwrap();
        assert!((d - 0.5 / m as f64).abs() < 1e-12, "{d}");
    }

    #[test]
    fn uniform_sample_is_far_from_rayleigh() {
        // Population gap sup_z |F_unif(z) - F_rayleigh(z)|: on [0, 1] scan it
        // on a fine grid; beyond 1 it is 1 - F_rayleigh(z), largest at z = 1.
        let grid_gap = (0..=100_000)
            .map(|i| {
                let u = i as f64 / 100_000.0;
                (u - rayleigh(u)).abs()
            })
            .fold(0.0f64, f64::max);
        let m = 10_000;
        let sample: Vec<f64> = (0..m).map(|i| (i as f64 + 0.5) / m as f64).collect();
        let d = ks_statistic(&sample, rayleigh).unwrap();
        assert!(d > 0.1);
        assert!((d - grid_gap).abs() < 1e-3);
    }

    #[test]
    fn weighted_matches_unweighted_for_equal_weights() {
        let sample: Vec<f64> = (1..=50).map(|i| i as f64 / 20.0).collect();
        let atoms: Vec<(f64, f64)> = sample.iter().map(|&x| (x, 1.0)).collect();
        let a = ks_statistic(&sample, rayleigh).unwrap();
        let b = ks_statistic_weighted(&atoms, rayleigh).unwrap();
        assert!((a - b).abs() < 1e-14);
    }

    proptest! {
        #[test]
        fn ks_bounded_and_reparameterization_invariant(mut xs in prop::collection::vec(0.0f64..6.0, 1..200)) {
            xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let d = ks_statistic(&xs, rayleigh).unwrap();
            prop_assert!((0.0..=1.0).contains(&d));
            // Map through the increasing function t = z^3 + z and adjust the cdf.
            let ts: Vec<f64> = xs.iter().map(|z| z * z * z + z).collect();
            let inverse = |t: f64| {
                let (mut lo, mut hi) = (0.0f64, 7.0f64);
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if mid * mid * mid + mid < t { lo = mid } else { hi = mid }
                }
                0.5 * (lo + hi)
            };
            let d2 = ks_statistic(&ts, |t| rayleigh(inverse(t))).unwrap();
            prop_assert!((d - d2).abs() < 1e-9);
        }

        #[test]
        fn rayleigh_monotone(a in 0.0f64..20.0, b in 0.0f64..20.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let (fa, fb) = (rayleigh(lo), rayleigh(hi));
            prop_assert!(fa <= fb);
            prop_assert!((0.0..=1.0).contains(&fa) && fb <= 1.0);
        }
    }
}
