use std::collections::BTreeMap;
use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};

use super::ks::{ks_statistic, ks_statistic_weighted, rayleigh_cdf};
use crate::error::{Error, Result};
use crate::estimators::fit::log_weights;
use crate::estimators::{estimate_survival, SurvivalCurve};
use crate::estimators::constants::{check_censoring, is_censored};
use crate::mechanisms::SegmentMechanism;
use crate::oracle::{dp_endpoint_distribution, dp_no_crossing_survival, dp_survival};
use crate::parallel::MonteCarlo;
use crate::stats::{weighted_linear_fit, wilson, ErrorScale, Z95};
use crate::walk::{side_of, simulate_path, simulate_until, IncrementLaw, Side};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    C1,
    C2,
    C3,
    C4,
}

impl Condition {
    pub fn id(self) -> &'static str {
        match self {
            Condition::C1 => "c1",
            Condition::C2 => "c2",
            Condition::C3 => "c3",
            Condition::C4 => "c4",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConditionRow {
    pub label: String,
    pub index: u64,
    pub value: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConditionReport {
    pub condition: Condition,
    pub table: Vec<ConditionRow>,
    pub fitted: BTreeMap<String, f64>,
    pub thresholds: BTreeMap<String, f64>,
    pub verdict: Verdict,
}

/// How probabilities are obtained: simulation or the exact lattice oracle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EvalMode {
    MonteCarlo(MonteCarlo),
    Dp,
}

fn point_label(name: &str, v: f64) -> String {
    format!("{name}={v}")
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct C1Thresholds {
    /// Pass requires `gamma + se_multiplier * stderr(gamma) < 1`.
    pub se_multiplier: f64,
    pub r2_min: f64,
}

impl Default for C1Thresholds {
    fn default() -> Self {
        Self {
            se_multiplier: 2.0,
            r2_min: 0.98,
        }
    }
}

/// Estimates `P_x(tau >= T_k)` for `k` in `ks` and fits `log P = a + k log gamma`.
pub fn check_c1(
    x: f64,
    law: &IncrementLaw,
    mech: &SegmentMechanism,
    ks: RangeInclusive<u64>,
    mc: &MonteCarlo,
    step_cap: u64,
    th: &C1Thresholds,
) -> Result<ConditionReport> {
    let (k_lo, k_hi) = (*ks.start(), *ks.end());
    if k_lo < 1 || k_lo > k_hi {
        return Err(Error::InvalidArgument(format!("bad crossing range {k_lo}..={k_hi}")));
    }
    let len = k_hi as usize + 1;
    let (reached, censored_before) = mc.fold(
        || (vec![0u64; len], vec![0u64; len + 1]),
        |acc, _, stream| {
            let out = simulate_until(x, law, mech, step_cap, Some(k_hi), stream, false);
            for c in &mut acc.0[..out.crossings.len()] {
                *c += 1;
            }
            if is_censored(&out, k_hi) {
                acc.1[out.crossings.len()] += 1;
            }
        },
        |a, b| {
            a.0.iter_mut().zip(b.0).for_each(|(x, y)| *x += y);
            a.1.iter_mut().zip(b.1).for_each(|(x, y)| *x += y);
        },
    );
    let censored: u64 = censored_before.iter().sum();
    check_censoring(censored, mc.paths, step_cap)?;

    let mut table = Vec::new();
    let mut lost = 0;
    let mut fit_k = Vec::new();
    let mut fit_p = Vec::new();
    let mut fit_n = Vec::new();
    for k in 0..=k_hi {
        lost += censored_before[k as usize];
        if k < k_lo {
            continue;
        }
        let at_risk = mc.paths - lost;
        let hits = reached[k as usize];
        let p = hits as f64 / at_risk as f64;
        let (lo, hi) = wilson(hits, at_risk, Z95);
        table.push(ConditionRow {
            label: point_label("x", x),
            index: k,
            value: p,
            ci_low: lo,
            ci_high: hi,
        });
        if p > 0.0 {
            fit_k.push(k as f64);
            fit_p.push(p);
            fit_n.push(at_risk);
        }
    }

    let mut fitted = BTreeMap::new();
    fitted.insert("censored".to_string(), censored as f64);
    let verdict = if fit_k.len() < 2 {
        Verdict::Inconclusive
    } else {
        let ys: Vec<f64> = fit_p.iter().map(|p| p.ln()).collect();
        let weights: Vec<f64> = fit_p
            .iter()
            .zip(&fit_n)
            .map(|(&p, &n)| log_weights(&[p], n)[0])
            .collect();
        let fit = weighted_linear_fit(&fit_k, &ys, &weights, ErrorScale::Known)?;
        let gamma = fit.slope.exp();
        let gamma_se = gamma * fit.slope_se;
        fitted.insert("gamma".to_string(), gamma);
        fitted.insert("gamma_stderr".to_string(), gamma_se);
        fitted.insert("r_squared".to_string(), fit.r_squared);
        if gamma + th.se_multiplier * gamma_se < 1.0 && fit.r_squared >= th.r2_min {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    };
    Ok(ConditionReport {
        condition: Condition::C1,
        table,
        fitted,
        thresholds: BTreeMap::from([
            ("se_multiplier".to_string(), th.se_multiplier),
            ("r2_min".to_string(), th.r2_min),
        ]),
        verdict,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct C2Thresholds {
    /// Largest accepted relative change between the last two grid points.
    pub tolerance: f64,
    /// Values below this are treated as zero when forming relative changes.
    pub floor: f64,
}

impl Default for C2Thresholds {
    fn default() -> Self {
        Self {
            tolerance: 0.05,
            floor: 1e-3,
        }
    }
}

fn check_grid(n_grid: &[u64], min_points: usize) -> Result<()> {
    if n_grid.len() < min_points || n_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument(format!(
            "horizon grid needs at least {min_points} strictly increasing points"
        )));
    }
    Ok(())
}

/// `P_y(tau > n, T_1 > n)` on the grid, with 95% intervals.
fn no_crossing_curve(
    y: f64,
    law: &IncrementLaw,
    mech: &SegmentMechanism,
    n_grid: &[u64],
    mode: &EvalMode,
) -> Result<SurvivalCurve> {
    match mode {
        EvalMode::Dp => Ok(SurvivalCurve::exact(
            y,
            n_grid.to_vec(),
            dp_no_crossing_survival(y, law, mech, n_grid)?,
        )),
        EvalMode::MonteCarlo(mc) => {
            let max_n = *n_grid.last().unwrap();
            let survivors = mc.fold(
                || vec![0u64; n_grid.len()],
                |acc, _, stream| {
                    let out = simulate_until(y, law, mech, max_n, Some(1), stream, false);
                    let alive = match out.absorbed_at.or(out.first_crossing()) {
                        None => n_grid.len(),
                        Some(t) => n_grid.partition_point(|&n| n < t),
                    };
                    for c in &mut acc[..alive] {
                        *c += 1;
                    }
                },
                |a, b| a.iter_mut().zip(b).for_each(|(x, y)| *x += y),
            );
            let (ci_low, ci_high) = survivors.iter().map(|&s| wilson(s, mc.paths, Z95)).unzip();
            Ok(SurvivalCurve {
                x: y,
                horizons: n_grid.to_vec(),
                estimates: survivors.iter().map(|&s| s as f64 / mc.paths as f64).collect(),
                survivors,
                total_paths: mc.paths,
                ci_low,
                ci_high,
            })
        }
    }
}

fn scaled_rows(label: &str, curve: &SurvivalCurve) -> Vec<ConditionRow> {
    curve
        .horizons
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            let r = (n as f64).sqrt();
            ConditionRow {
                label: label.to_string(),
                index: n,
                value: r * curve.estimates[i],
                ci_low: r * curve.ci_low[i],
                ci_high: r * curve.ci_high[i],
            }
        })
        .collect()
}

/// Tabulates `n^{1/2} P_y(tau > n, T_1 > n)` and measures its convergence.
pub fn check_c2(
    y_grid: &[f64],
    law: &IncrementLaw,
    mech: &SegmentMechanism,
    n_grid: &[u64],
    mode: &EvalMode,
    th: &C2Thresholds,
) -> Result<ConditionReport> {
    check_grid(n_grid, 4)?;
    if y_grid.is_empty() {
        return Err(Error::InvalidArgument("y grid is empty".into()));
    }
    let mut table = Vec::new();
    let mut fitted = BTreeMap::new();
    let mut gap = 0.0f64;
    let mut overlapping = true;
    for &y in y_grid {
        let label = point_label("y", y);
        let rows = scaled_rows(&label, &no_crossing_curve(y, law, mech, n_grid, mode)?);
        let (a, b) = (&rows[rows.len() - 2], &rows[rows.len() - 1]);
        let scale = a.value.abs().max(b.value.abs()).max(th.floor);
        gap = gap.max((b.value - a.value).abs() / scale);
        if matches!(mode, EvalMode::MonteCarlo(_)) {
            overlapping &= a.ci_low <= b.ci_high && b.ci_low <= a.ci_high;
        }
        fitted.insert(format!("u({label})"), b.value);
        table.extend(rows);
    }
    fitted.insert("gap".to_string(), gap);
    let verdict = if gap > th.tolerance {
        Verdict::Fail
    } else if overlapping {
        Verdict::Pass
    } else {
        Verdict::Inconclusive
    };
    Ok(ConditionReport {
        condition: Condition::C2,
        table,
        fitted,
        thresholds: BTreeMap::from([
            ("tolerance".to_string(), th.tolerance),
            ("floor".to_string(), th.floor),
        ]),
        verdict,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct C3Thresholds {
    pub epsilon: f64,
}

impl Default for C3Thresholds {
    fn default() -> Self {
        Self { epsilon: 0.01 }
    }
}

/// Tabulates `n^{1/2} P_x(tau > n)`, which must stay bounded away from zero.
pub fn check_c3(
    x: f64,
    law: &IncrementLaw,
    mech: &SegmentMechanism,
    n_grid: &[u64],
    mode: &EvalMode,
    th: &C3Thresholds,
) -> Result<ConditionReport> {
    check_grid(n_grid, 4)?;
    let curve = match mode {
        EvalMode::Dp => SurvivalCurve::exact(x, n_grid.to_vec(), dp_survival(x, law, mech, n_grid)?),
        EvalMode::MonteCarlo(mc) => estimate_survival(x, law, mech, n_grid, mc)?,
    };
    let table = scaled_rows(&point_label("x", x), &curve);
    let min_value = table.iter().map(|r| r.value).fold(f64::INFINITY, f64::min);
    let min_low = table.iter().map(|r| r.ci_low).fold(f64::INFINITY, f64::min);
    let verdict = if min_value <= th.epsilon {
        Verdict::Fail
    } else if min_low > th.epsilon {
        Verdict::Pass
    } else {
        Verdict::Inconclusive
    };
    Ok(ConditionReport {
        condition: Condition::C3,
        table,
        fitted: BTreeMap::from([
            ("inf".to_string(), min_value),
            ("inf_ci_low".to_string(), min_low),
        ]),
        thresholds: BTreeMap::from([("epsilon".to_string(), th.epsilon)]),
        verdict,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum C4Source {
    MonteCarlo { mc: MonteCarlo, survivor_target: u64 },
    /// Exact conditional endpoint law from the lattice oracle.
    Dp,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct C4Thresholds {
    pub ks_max: f64,
    /// Sign classes holding a smaller share of survivors are not tested.
    pub min_class_share: f64,
}

impl Default for C4Thresholds {
    fn default() -> Self {
        Self {
            ks_max: 0.05,
            min_class_share: 0.05,
        }
    }
}

/// A rescaled surviving endpoint `S_n / (sigma n^{1/2})`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Endpoint {
    pub value: f64,
    pub side: Side,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct C4Outcome {
    pub report: ConditionReport,
    pub endpoints: Vec<Endpoint>,
}

/// Compares the rescaled endpoints of surviving walks with the mixture of
/// positive and negative meander marginals: the nonnegative share estimates
/// `rho`, and within each sign class `|endpoint|` should be Rayleigh.
pub fn check_c4_endpoint(
    x: f64,
    law: &IncrementLaw,
    mech: &SegmentMechanism,
    n: u64,
    source: &C4Source,
    th: &C4Thresholds,
) -> Result<C4Outcome> {
    if n == 0 {
        return Err(Error::InvalidArgument("endpoint check needs n >= 1".into()));
    }
    let scale = law.sigma() * (n as f64).sqrt();
    let endpoints: Vec<Endpoint> = match source {
        C4Source::Dp => dp_endpoint_distribution(x, law, mech, n)?
            .atoms
            .into_iter()
            .map(|(pos, w)| Endpoint {
                value: pos / scale,
                side: side_of(pos),
                weight: w,
            })
            .collect(),
        C4Source::MonteCarlo { mc, survivor_target } => {
            let finals = mc.fold(
                Vec::new,
                |acc: &mut Vec<f64>, _, stream| {
                    let out = simulate_path(x, law, mech, n, stream, false);
                    if out.absorbed_at.is_none() {
                        acc.push(out.final_position);
                    }
                },
                |a, b| a.extend(b),
            );
            if (finals.len() as u64) < *survivor_target || finals.is_empty() {
                return Err(Error::TooFewSurvivors {
                    survivors: finals.len() as u64,
                    required: *survivor_target,
                });
            }
            finals
                .into_iter()
                .map(|pos| Endpoint {
                    value: pos / scale,
                    side: side_of(pos),
                    weight: 1.0,
                })
                .collect()
        }
    };

    let total_weight: f64 = endpoints.iter().map(|e| e.weight).sum();
    let survivors = endpoints.len() as u64;
    let is_mc = matches!(source, C4Source::MonteCarlo { .. });
    let mut table = Vec::new();
    let mut fitted = BTreeMap::new();
    let mut verdict = Verdict::Pass;

    let nonneg_weight: f64 = endpoints.iter().filter(|e| e.side == Side::Nonneg).map(|e| e.weight).sum();
    let rho = nonneg_weight / total_weight;
    let (rho_lo, rho_hi) = if is_mc {
        let nonneg = endpoints.iter().filter(|e| e.side == Side::Nonneg).count() as u64;
        wilson(nonneg, survivors, Z95)
    } else {
        (rho, rho)
    };
    table.push(ConditionRow {
        label: "rho".to_string(),
        index: if is_mc { survivors } else { 0 },
        value: rho,
        ci_low: rho_lo,
        ci_high: rho_hi,
    });
    fitted.insert("rho".to_string(), rho);
    fitted.insert("survivors".to_string(), survivors as f64);

    for (side, name) in [(Side::Nonneg, "nonneg"), (Side::Neg, "neg")] {
        let mut class: Vec<(f64, f64)> = endpoints
            .iter()
            .filter(|e| e.side == side)
            .map(|e| (e.value.abs(), e.weight))
            .collect();
        if class.is_empty() {
            continue;
        }
        class.sort_by(|a, b| a.0.total_cmp(&b.0));
        let share = class.iter().map(|c| c.1).sum::<f64>() / total_weight;
        let cdf = |z: f64| rayleigh_cdf(z).unwrap_or(0.0);
        let d = if is_mc {
            let sample: Vec<f64> = class.iter().map(|c| c.0).collect();
            ks_statistic(&sample, cdf)?
        } else {
            ks_statistic_weighted(&class, cdf)?
        };
        table.push(ConditionRow {
            label: format!("ks-{name}"),
            index: class.len() as u64,
            value: d,
            ci_low: d,
            ci_high: d,
        });
        fitted.insert(format!("ks_{name}"), d);
        fitted.insert(format!("share_{name}"), share);
        if share >= th.min_class_share && d > th.ks_max {
            verdict = Verdict::Fail;
        }
    }

    Ok(C4Outcome {
        report: ConditionReport {
            condition: Condition::C4,
            table,
            fitted,
            thresholds: BTreeMap::from([
                ("ks_max".to_string(), th.ks_max),
                ("min_class_share".to_string(), th.min_class_share),
            ]),
            verdict,
        },
        endpoints,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::{geometric_grid, DEFAULT_STEP_CAP};
    use crate::mechanisms::MechanismSpec;

    #[test]
    fn c1_never_absorb_fails() {
        let law = IncrementLaw::rademacher();
        let r = check_c1(
            0.0,
            &law,
            &SegmentMechanism::never_absorb(),
            1..=5,
            &MonteCarlo::new(300, 1),
            DEFAULT_STEP_CAP,
            &C1Thresholds::default(),
        )
        .unwrap();
        assert!(r.table.iter().all(|row| row.value == 1.0));
        assert_eq!(r.fitted["gamma"], 1.0);
        assert_eq!(r.verdict, Verdict::Fail);
    }

    #[test]
    fn c2_structural_zero_passes() {
        let law = IncrementLaw::rademacher();
        let grid = geometric_grid(64, 1024);
        let r = check_c2(
            &[-1.0],
            &law,
            &SegmentMechanism::immediate_kill(),
            &grid,
            &EvalMode::MonteCarlo(MonteCarlo::new(500, 3)),
            &C2Thresholds::default(),
        )
        .unwrap();
        assert!(r.table.iter().all(|row| row.value == 0.0));
        assert_eq!(r.fitted["gap"], 0.0);
        assert_eq!(r.verdict, Verdict::Pass);
    }

    #[test]
    fn c2_dp_classical_constant() {
        let law = IncrementLaw::rademacher();
        let grid = vec![1 << 11, 1 << 12, 1 << 13, 1 << 14];
        let r = check_c2(&[0.0], &law, &SegmentMechanism::immediate_kill(), &grid, &EvalMode::Dp, &C2Thresholds::default())
            .unwrap();
        let last = r.table.last().unwrap().value;
        let c0 = (2.0 / std::f64::consts::PI).sqrt();
        assert!((last - c0).abs() / c0 < 0.02);
        assert_eq!(r.verdict, Verdict::Pass);
    }

    #[test]
    fn c2_needs_four_points() {
        let law = IncrementLaw::rademacher();
        assert!(check_c2(&[0.0], &law, &SegmentMechanism::never_absorb(), &[1, 2, 3], &EvalMode::Dp, &Default::default()).is_err());
    }

    #[test]
    fn c3_cases() {
        let law = IncrementLaw::rademacher();
        let grid = geometric_grid(64, 1024);
        let kill = check_c3(0.0, &law, &SegmentMechanism::immediate_kill(), &grid, &EvalMode::Dp, &Default::default()).unwrap();
        assert_eq!(kill.verdict, Verdict::Pass);
        let gate = SegmentMechanism::build(&MechanismSpec::IntervalGate {
            lo: -1.0,
            hi: 1.0,
            exempt_initial_segment: false,
        })
        .unwrap();
        let outside = check_c3(2.0, &law, &gate, &grid, &EvalMode::Dp, &Default::default()).unwrap();
        assert!(outside.table.iter().all(|r| r.value == 0.0));
        assert_eq!(outside.verdict, Verdict::Fail);
        let never = check_c3(
            0.0,
            &law,
            &SegmentMechanism::never_absorb(),
            &grid,
            &EvalMode::MonteCarlo(MonteCarlo::new(100, 0)),
            &Default::default(),
        )
        .unwrap();
        assert_eq!(never.verdict, Verdict::Pass);
        assert!(never.table.windows(2).all(|w| w[1].value > w[0].value));
    }

    #[test]
    fn c4_immediate_kill_dp_has_only_nonneg_class() {
        let law = IncrementLaw::rademacher();
        let out = check_c4_endpoint(0.0, &law, &SegmentMechanism::immediate_kill(), 4096, &C4Source::Dp, &Default::default())
            .unwrap();
        assert_eq!(out.report.fitted["rho"], 1.0);
        assert!(!out.report.fitted.contains_key("ks_neg"));
        assert!(out.report.fitted["ks_nonneg"] <= 0.05);
        assert_eq!(out.report.verdict, Verdict::Pass);
    }

    #[test]
    fn c4_too_few_survivors() {
        let law = IncrementLaw::rademacher();
        let err = check_c4_endpoint(
            0.0,
            &law,
            &SegmentMechanism::immediate_kill(),
            1024,
            &C4Source::MonteCarlo {
                mc: MonteCarlo::new(100, 0),
                survivor_target: 1000,
            },
            &Default::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::TooFewSurvivors { .. }));
    }
}
