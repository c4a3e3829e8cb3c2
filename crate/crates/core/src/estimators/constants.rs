use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::mechanisms::SegmentMechanism;
use crate::oracle::dp_u_grid;
use crate::parallel::MonteCarlo;
use crate::stats::{weighted_linear_fit, wilson, ErrorScale, Z95};
use crate::walk::{simulate_path, simulate_until, IncrementLaw, PathOutcome};

/// Per-path step cap for simulations that run until a crossing.
pub const DEFAULT_STEP_CAP: u64 = 10_000_000;
/// Largest tolerated fraction of paths that hit the step cap.
pub const MAX_CENSORED_FRACTION: f64 = 0.01;
pub const DEFAULT_K_MAX: u64 = 30;

/// Whether a crossing-chain run hit the step cap before reaching `target`
/// crossings or being absorbed.
pub(crate) fn is_censored(out: &PathOutcome, target: u64) -> bool {
    out.absorbed_at.is_none() && out.crossings_reached() < target
}

pub(crate) fn check_censoring(censored: u64, paths: u64, cap: u64) -> Result<()> {
    if censored as f64 > MAX_CENSORED_FRACTION * paths as f64 {
        return Err(Error::StepCapExhausted { censored, paths, cap });
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CEstimate {
    pub x: f64,
    pub value: f64,
    pub stderr: f64,
    /// Sample mean of `S_{T_1}`.
    pub mean_overshoot: f64,
    pub paths_used: u64,
    pub censored: u64,
}

#[derive(Default)]
struct Moments {
    sum: f64,
    sum_sq: f64,
    count: u64,
    censored: u64,
}

/// `c_x = sqrt(2) |x - E_x[S_{T_1}]| / (sigma sqrt(pi))` with `E_x[S_{T_1}]`
/// estimated from unkilled first crossings.
pub fn estimate_c(x: f64, law: &IncrementLaw, mc: &MonteCarlo, step_cap: u64) -> Result<CEstimate> {
    if mc.paths == 0 {
        return Err(Error::InvalidArgument("total_paths must be at least 1".into()));
    }
    let never = SegmentMechanism::never_absorb();
    let m = mc.fold(
        Moments::default,
        |acc, _, stream| {
            let out = simulate_until(x, law, &never, step_cap, Some(1), stream, false);
            match out.crossings.get(1) {
                Some(c) => {
                    acc.sum += c.height;
                    acc.sum_sq += c.height * c.height;
                    acc.count += 1;
                }
                None => acc.censored += 1,
            }
        },
        |a, b| {
            a.sum += b.sum;
            a.sum_sq += b.sum_sq;
            a.count += b.count;
            a.censored += b.censored;
        },
    );
    check_censoring(m.censored, mc.paths, step_cap)?;
    if m.count == 0 {
        return Err(Error::StepCapExhausted {
            censored: m.censored,
            paths: mc.paths,
            cap: step_cap,
        });
    }
    let n = m.count as f64;
    let mean = m.sum / n;
    let var = (m.sum_sq / n - mean * mean).max(0.0);
    let scale = 2f64.sqrt() / (law.sigma() * PI.sqrt());
    Ok(CEstimate {
        x,
        value: scale * (x - mean).abs(),
        stderr: scale * (var / n).sqrt(),
        mean_overshoot: mean,
        paths_used: m.count,
        censored: m.censored,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum USource {
    /// The start point is killed at time 0 with probability one.
    Structural,
    Analytic,
    MonteCarlo,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct UEstimate {
    pub y: f64,
    pub value: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub source: USource,
}

/// Estimate of `u(y)` through `n^{1/2} P_y(tau > n, T_1 > n)` at `n = n_large`.
///
/// When `c` is given and the family has a closed form, that closed form is
/// returned instead of simulating.
pub fn estimate_u(
    y: f64,
    law: &IncrementLaw,
    mech: &SegmentMechanism,
    n_large: u64,
    mc: &MonteCarlo,
    c: Option<&dyn Fn(f64) -> f64>,
) -> Result<UEstimate> {
    if n_large == 0 {
        return Err(Error::InvalidArgument("n_large must be at least 1".into()));
    }
    let exact = |value, source| UEstimate {
        y,
        value,
        ci_low: value,
        ci_high: value,
        source,
    };
    if mech.certain_initial_kill(y) {
        return Ok(exact(0.0, USource::Structural));
    }
    if let Some(v) = c.and_then(|c| mech.analytic_u(y, c)) {
        return Ok(exact(v, USource::Analytic));
    }
    if mc.paths == 0 {
        return Err(Error::InvalidArgument("total_paths must be at least 1".into()));
    }
    let hits = mc.fold(
        || 0u64,
        |acc, _, stream| {
            let out = simulate_until(y, law, mech, n_large, Some(1), stream, false);
            if out.absorbed_at.is_none() && out.crossings_reached() == 0 {
                *acc += 1;
            }
        },
        |a, b| *a += b,
    );
    let root = (n_large as f64).sqrt();
    let (lo, hi) = wilson(hits, mc.paths, Z95);
    Ok(UEstimate {
        y,
        value: root * hits as f64 / mc.paths as f64,
        ci_low: root * lo,
        ci_high: root * hi,
        source: USource::MonteCarlo,
    })
}

/// Source of `u(y)` values for the `V(x)` series.
pub trait UProvider: Sync {
    fn u(&self, y: f64) -> Result<f64>;
}

#[derive(Clone, Copy, Debug)]
pub struct ConstantU(pub f64);

impl UProvider for ConstantU {
    fn u(&self, _: f64) -> Result<f64> {
        Ok(self.0)
    }
}

/// Closed-form `u` from the mechanism and a table of classical constants.
pub struct AnalyticU<'a, C: Fn(f64) -> f64 + Sync> {
    pub mech: &'a SegmentMechanism,
    pub c: C,
}

impl<C: Fn(f64) -> f64 + Sync> UProvider for AnalyticU<'_, C> {
    fn u(&self, y: f64) -> Result<f64> {
        self.mech.analytic_u(y, &self.c).ok_or(Error::UndefinedU { height: y })
    }
}

/// `u` tabulated on an equally spaced grid and linearly interpolated.
/// Heights outside the grid are an error, never extrapolated.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridU {
    pub start: f64,
    pub spacing: f64,
    pub values: Vec<f64>,
}

impl GridU {
    /// Lattice-oracle values `dp_u(j * span)` for `j` in `lo..=hi`.
    pub fn from_dp(law: &IncrementLaw, mech: &SegmentMechanism, lo: i64, hi: i64, n_large: u64) -> Result<Self> {
        let span = law.lattice_span().ok_or_else(|| {
            Error::IncompatibleMechanism("a lattice u grid needs a lattice increment law".into())
        })?;
        if lo > hi {
            return Err(Error::InvalidArgument("empty u grid".into()));
        }
        let values = dp_u_grid(law, mech, lo, hi, n_large)?;
        Ok(Self {
            start: lo as f64 * span,
            spacing: span,
            values,
        })
    }

    /// Monte Carlo values on `start + j * spacing`.
    pub fn from_mc(
        law: &IncrementLaw,
        mech: &SegmentMechanism,
        start: f64,
        spacing: f64,
        points: usize,
        n_large: u64,
        mc: &MonteCarlo,
    ) -> Result<Self> {
        let values = (0..points)
            .map(|j| estimate_u(start + j as f64 * spacing, law, mech, n_large, mc, None).map(|e| e.value))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { start, spacing, values })
    }

    pub fn heights(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.values.len()).map(|j| self.start + j as f64 * self.spacing)
    }
}

impl UProvider for GridU {
    fn u(&self, y: f64) -> Result<f64> {
        let t = (y - self.start) / self.spacing;
        let last = (self.values.len() - 1) as f64;
        if !(-1e-9..=last + 1e-9).contains(&t) {
            return Err(Error::UndefinedU { height: y });
        }
        let t = t.clamp(0.0, last);
        let j = (t.floor() as usize).min(self.values.len() - 1);
        let frac = t - j as f64;
        if frac == 0.0 || j + 1 == self.values.len() {
            return Ok(self.values[j]);
        }
        Ok(self.values[j] * (1.0 - frac) + self.values[j + 1] * frac)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VEstimate {
    pub x: f64,
    /// `E_x[u(H_k); tau >= T_k]` for `k = 0..=k_max`.
    pub terms: Vec<f64>,
    pub term_stderr: Vec<f64>,
    pub k_max: u64,
    pub value: f64,
    /// Fitted geometric ratio of `|terms|`; at least 1 signals divergence.
    pub tail_bound_ratio: f64,
    pub censored: u64,
}

struct VAcc {
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
    reached: Vec<u64>,
    /// `censored_before[k]`: paths censored before reaching crossing `k`.
    censored_before: Vec<u64>,
    error: Option<Error>,
}

/// Partial sum of `V(x) = sum_k E_x[u(H_k); tau >= T_k]` over `k <= k_max`.
///
/// Paths run until absorption, until crossing `k_max`, or until the step cap.
/// Capped paths are treated as right-censored: term `k` is averaged over the
/// paths not censored before crossing `k`.
pub fn estimate_v(
    x: f64,
    law: &IncrementLaw,
    mech: &SegmentMechanism,
    u: &dyn UProvider,
    k_max: u64,
    mc: &MonteCarlo,
    step_cap: u64,
) -> Result<VEstimate> {
    if mc.paths == 0 {
        return Err(Error::InvalidArgument("total_paths must be at least 1".into()));
    }
    let len = k_max as usize + 1;
    let acc = mc.fold(
        || VAcc {
            sum: vec![0.0; len],
            sum_sq: vec![0.0; len],
            reached: vec![0; len],
            censored_before: vec![0; len + 1],
            error: None,
        },
        |acc, _, stream| {
            if acc.error.is_some() {
                return;
            }
            let out = simulate_until(x, law, mech, step_cap, Some(k_max), stream, false);
            for c in &out.crossings {
                match u.u(c.height) {
                    Ok(v) => {
                        let k = c.k as usize;
                        acc.sum[k] += v;
                        acc.sum_sq[k] += v * v;
                        acc.reached[k] += 1;
                    }
                    Err(e) => {
                        acc.error = Some(e);
                        return;
                    }
                }
            }
            if is_censored(&out, k_max) {
                acc.censored_before[out.crossings.len()] += 1;
            }
        },
        |a, b| {
            if a.error.is_none() {
                a.error = b.error;
            }
            for k in 0..len {
                a.sum[k] += b.sum[k];
                a.sum_sq[k] += b.sum_sq[k];
                a.reached[k] += b.reached[k];
            }
            for k in 0..=len {
                a.censored_before[k] += b.censored_before[k];
            }
        },
    );
    if let Some(e) = acc.error {
        return Err(e);
    }
    let censored: u64 = acc.censored_before.iter().sum();
    check_censoring(censored, mc.paths, step_cap)?;

    let last = acc.reached.iter().rposition(|&r| r > 0).unwrap_or(0);
    let mut terms = Vec::with_capacity(last + 1);
    let mut term_stderr = Vec::with_capacity(last + 1);
    let mut lost = 0u64;
    for k in 0..=last {
        lost += acc.censored_before[k];
        let n = (mc.paths - lost) as f64;
        let mean = acc.sum[k] / n;
        let var = (acc.sum_sq[k] / n - mean * mean).max(0.0);
        terms.push(mean);
        term_stderr.push((var / n).sqrt());
    }
    let value = terms.iter().sum();
    Ok(VEstimate {
        x,
        tail_bound_ratio: geometric_ratio(&terms),
        terms,
        term_stderr,
        k_max: last as u64,
        value,
        censored,
    })
}

/// `exp(slope)` of a least-squares line through `log |term_k|` over the
/// nonzero terms; 0 when fewer than two terms are nonzero.
fn geometric_ratio(terms: &[f64]) -> f64 {
    let (ks, logs): (Vec<f64>, Vec<f64>) = terms
        .iter()
        .enumerate()
        .filter(|(_, t)| **t != 0.0)
        .map(|(k, t)| (k as f64, t.abs().ln()))
        .unzip();
    if ks.len() < 2 {
        return 0.0;
    }
    let w = vec![1.0; ks.len()];
    weighted_linear_fit(&ks, &logs, &w, ErrorScale::Residual)
        .map(|f| f.slope.exp())
        .unwrap_or(0.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RhoEstimate {
    pub value: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub survivors: u64,
    pub nonneg: u64,
}

/// Minimum number of survivors for a mixture-weight estimate.
pub const MIN_RHO_SURVIVORS: u64 = 100;

/// Fraction of paths surviving to `n` that end on the nonnegative side.
pub fn estimate_rho(
    x: f64,
    law: &IncrementLaw,
    mech: &SegmentMechanism,
    n: u64,
    mc: &MonteCarlo,
) -> Result<RhoEstimate> {
    let (survivors, nonneg) = mc.fold(
        || (0u64, 0u64),
        |acc, _, stream| {
            let out = simulate_path(x, law, mech, n, stream, false);
            if out.absorbed_at.is_none() {
                acc.0 += 1;
                if out.final_position >= 0.0 {
                    acc.1 += 1;
                }
            }
        },
        |a, b| {
            a.0 += b.0;
            a.1 += b.1;
        },
    );
    if survivors < MIN_RHO_SURVIVORS {
        return Err(Error::TooFewSurvivors {
            survivors,
            required: MIN_RHO_SURVIVORS,
        });
    }
    let (ci_low, ci_high) = wilson(nonneg, survivors, Z95);
    Ok(RhoEstimate {
        value: nonneg as f64 / survivors as f64,
        ci_low,
        ci_high,
        survivors,
        nonneg,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mechanisms::{MechanismSpec, TimeLawSpec};

    const C0: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

    #[test]
    fn rademacher_c_constants() {
        let law = IncrementLaw::rademacher();
        let mc = MonteCarlo::new(2000, 1);
        let c0 = estimate_c(0.0, &law, &mc, DEFAULT_STEP_CAP).unwrap();
        assert_eq!(c0.mean_overshoot, -1.0);
        assert!((c0.value - C0).abs() < 1e-12);
        let c3 = estimate_c(3.0, &law, &mc, DEFAULT_STEP_CAP).unwrap();
        assert!((c3.value - 4.0 * C0).abs() < 1e-12);
        assert_eq!(c3, estimate_c(3.0, &law, &mc, DEFAULT_STEP_CAP).unwrap());
    }

    #[test]
    fn tiny_cap_is_reported() {
        let law = IncrementLaw::rademacher();
        let err = estimate_c(50.0, &law, &MonteCarlo::new(100, 1), 10).unwrap_err();
        assert!(matches!(err, Error::StepCapExhausted { .. }));
    }

    #[test]
    fn u_structural_zero() {
        let law = IncrementLaw::rademacher();
        let e = estimate_u(-1.0, &law, &SegmentMechanism::immediate_kill(), 64, &MonteCarlo::new(10, 0), None).unwrap();
        assert_eq!((e.value, e.ci_low, e.ci_high), (0.0, 0.0, 0.0));
    }

    #[test]
    fn u_with_mass_at_infinity() {
        // Below zero, P_y(tau > n, T_1 > n) = P_y(T_1 > n) P(U > n); with
        // P(U = inf) = 1/2 and finite atoms below n this is half the classical
        // persistence. For rademacher y = -1, E[S_{T_1}] = 0 so c_{-1} = sqrt(2/pi).
        let law = IncrementLaw::rademacher();
        let mech = SegmentMechanism::build(&MechanismSpec::TimeBelowZero {
            u: TimeLawSpec::Tabulated {
                pmf: vec![(1, 0.25), (4, 0.25)],
                p_inf: 0.5,
            },
        })
        .unwrap();
        let n = 4096;
        let e = estimate_u(-1.0, &law, &mech, n, &MonteCarlo::new(400_000, 3), None).unwrap();
        let exact_finite_n = crate::oracle::dp_u(-1.0, &law, &mech, n).unwrap();
        assert!((exact_finite_n - 0.5 * C0).abs() / (0.5 * C0) < 0.01);
        assert!(e.ci_low <= 0.5 * C0 && 0.5 * C0 <= e.ci_high, "{e:?}");
        let analytic = estimate_u(-1.0, &law, &mech, n, &MonteCarlo::new(1, 0), Some(&|_| C0)).unwrap();
        assert_eq!(analytic.value, 0.5 * C0);
        assert_eq!(analytic.source, USource::Analytic);
    }

    #[test]
    fn grid_u_interpolates_and_refuses_to_extrapolate() {
        let g = GridU {
            start: -1.0,
            spacing: 1.0,
            values: vec![0.0, 1.0, 3.0],
        };
        assert_eq!(g.u(-1.0).unwrap(), 0.0);
        assert_eq!(g.u(0.5).unwrap(), 2.0);
        assert_eq!(g.u(1.0).unwrap(), 3.0);
        assert!(matches!(g.u(1.5), Err(Error::UndefinedU { .. })));
        assert!(matches!(g.u(-2.0), Err(Error::UndefinedU { .. })));
    }

    #[test]
    fn v_for_immediate_kill_is_u0() {
        let law = IncrementLaw::rademacher();
        let mech = SegmentMechanism::immediate_kill();
        let grid = GridU {
            start: -1.0,
            spacing: 1.0,
            values: vec![0.0, C0],
        };
        let v = estimate_v(0.0, &law, &mech, &grid, 30, &MonteCarlo::new(1000, 2), DEFAULT_STEP_CAP).unwrap();
        assert_eq!(v.terms.len(), 2);
        assert!((v.terms[0] - C0).abs() < 1e-12 && v.terms[1] == 0.0);
        assert!((v.value - C0).abs() < 1e-12);
        assert_eq!(v.k_max, 1);
        assert_eq!(v.tail_bound_ratio, 0.0);
    }

    #[test]
    fn v_diverges_without_absorption() {
        let law = IncrementLaw::rademacher();
        let v = estimate_v(
            0.0,
            &law,
            &SegmentMechanism::never_absorb(),
            &ConstantU(1.0),
            6,
            &MonteCarlo::new(300, 2),
            DEFAULT_STEP_CAP,
        )
        .unwrap();
        assert!(v.terms.iter().all(|&t| t == 1.0));
        assert!(v.tail_bound_ratio >= 1.0);
    }

    #[test]
    fn v_reports_undefined_heights() {
        let law = IncrementLaw::rademacher();
        let grid = GridU {
            start: 0.0,
            spacing: 1.0,
            values: vec![C0],
        };
        let err = estimate_v(0.0, &law, &SegmentMechanism::immediate_kill(), &grid, 5, &MonteCarlo::new(100, 0), 1000)
            .unwrap_err();
        assert_eq!(err, Error::UndefinedU { height: -1.0 });
    }

    #[test]
    fn rho_immediate_kill_is_one() {
        let law = IncrementLaw::rademacher();
        let r = estimate_rho(2.0, &law, &SegmentMechanism::immediate_kill(), 256, &MonteCarlo::new(20_000, 4)).unwrap();
        assert_eq!(r.value, 1.0);
        let err = estimate_rho(0.0, &law, &SegmentMechanism::immediate_kill(), 4096, &MonteCarlo::new(50, 4));
        assert!(matches!(err, Err(Error::TooFewSurvivors { .. })));
    }
}
