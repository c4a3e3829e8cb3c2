use serde::Serialize;

use crate::error::{Error, Result};
use crate::mechanisms::SegmentMechanism;
use crate::parallel::MonteCarlo;
use crate::stats::{wilson, Z95};
use crate::walk::{simulate_path, IncrementLaw};

/// Estimates of `P_x(tau > n)` over a horizon grid.
///
/// Monte Carlo curves evaluate every horizon on the same paths, so survivor
/// counts are nonincreasing along the grid and neighbouring points are
/// positively correlated. Exact curves (from the lattice oracle) have
/// `total_paths == 0`, no survivor counts and degenerate intervals.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SurvivalCurve {
    pub x: f64,
    pub horizons: Vec<u64>,
    pub survivors: Vec<u64>,
    pub total_paths: u64,
    pub estimates: Vec<f64>,
    pub ci_low: Vec<f64>,
    pub ci_high: Vec<f64>,
}

impl SurvivalCurve {
    pub fn exact(x: f64, horizons: Vec<u64>, probabilities: Vec<f64>) -> Self {
        Self {
            x,
            survivors: Vec::new(),
            total_paths: 0,
            ci_low: probabilities.clone(),
            ci_high: probabilities.clone(),
            estimates: probabilities,
            horizons,
        }
    }

    pub fn is_exact(&self) -> bool {
        self.total_paths == 0
    }

    /// Restriction to horizons within `[lo, hi]`.
    pub fn window(&self, lo: u64, hi: u64) -> Self {
        let keep: Vec<usize> = (0..self.horizons.len())
            .filter(|&i| (lo..=hi).contains(&self.horizons[i]))
            .collect();
        let pick = |v: &[f64]| keep.iter().map(|&i| v[i]).collect::<Vec<_>>();
        Self {
            x: self.x,
            horizons: keep.iter().map(|&i| self.horizons[i]).collect(),
            survivors: if self.survivors.is_empty() {
                Vec::new()
            } else {
                keep.iter().map(|&i| self.survivors[i]).collect()
            },
            total_paths: self.total_paths,
            estimates: pick(&self.estimates),
            ci_low: pick(&self.ci_low),
            ci_high: pick(&self.ci_high),
        }
    }
}

/// Geometric grid `round(base * 2^{j/2})`, `j = 0, 1, ...`, up to `max`.
pub fn geometric_grid(base: u64, max: u64) -> Vec<u64> {
    let mut grid = Vec::new();
    for j in 0.. {
        let n = (base as f64 * 2f64.powf(j as f64 / 2.0)).round() as u64;
        if n > max {
            break;
        }
        if grid.last() != Some(&n) {
            grid.push(n);
        }
    }
    grid
}

pub fn estimate_survival(
    x: f64,
    law: &IncrementLaw,
    mech: &SegmentMechanism,
    horizons: &[u64],
    mc: &MonteCarlo,
) -> Result<SurvivalCurve> {
    if horizons.is_empty() || horizons.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument("horizons must be nonempty and strictly increasing".into()));
    }
    if mc.paths == 0 {
        return Err(Error::InvalidArgument("total_paths must be at least 1".into()));
    }
    let max_n = *horizons.last().unwrap();
    let survivors = mc.fold(
        || vec![0u64; horizons.len()],
        |acc, _, stream| {
            let out = simulate_path(x, law, mech, max_n, stream, false);
            let alive = match out.absorbed_at {
                None => horizons.len(),
                Some(t) => horizons.partition_point(|&n| n < t),
            };
            for c in &mut acc[..alive] {
                *c += 1;
            }
        },
        |a, b| a.iter_mut().zip(b).for_each(|(x, y)| *x += y),
    );
    let n = mc.paths as f64;
    let estimates: Vec<f64> = survivors.iter().map(|&s| s as f64 / n).collect();
    let (ci_low, ci_high) = survivors.iter().map(|&s| wilson(s, mc.paths, Z95)).unzip();
    Ok(SurvivalCurve {
        x,
        horizons: horizons.to_vec(),
        survivors,
        total_paths: mc.paths,
        estimates,
        ci_low,
        ci_high,
    })
}
