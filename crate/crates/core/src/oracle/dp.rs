use crate::error::{Error, Result};
use crate::mechanisms::{Interval, Rule, SegmentMechanism};
use crate::walk::IncrementLaw;

/// Largest finite support of `U` the time-below-zero DP will track.
const MAX_AGE_LAYERS: u64 = 4096;

/// Per-state transition model. Negative-side mass carries an auxiliary layer
/// index (segment age or selected set); nonnegative mass always sits in layer 0.
enum Model {
    Never,
    /// Survival factor `1 - p(z)` by lattice index.
    Hazard(Vec<f64>),
    /// `factors[a]` is `P(U > a) / P(U > a - 1)`; ages `>= factors.len() - 1`
    /// share the last layer, which keeps surviving with `stay` per step.
    TimeBelow { factors: Vec<f64>, stay: f64 },
    /// `allowed[u][idx]` is false on `B_u`.
    Sets { u_pmf: Vec<f64>, allowed: Vec<Vec<bool>> },
    Gate { interval: Interval, exempt_initial: bool },
}

struct Evolution {
    steps: Vec<i64>,
    probs: Vec<f64>,
    span: f64,
    /// Lattice coordinate of index 0.
    origin: i64,
    start_side_neg: bool,
    no_crossing: bool,
    model: Model,
    mass: Vec<Vec<f64>>,
    scratch: Vec<Vec<f64>>,
    lo: usize,
    hi: usize,
}

fn lattice_point(x: f64, span: f64) -> Result<i64> {
    let z = x / span;
    let r = z.round();
    if (z - r).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "start point {x} is not on the lattice {span}Z"
        )));
    }
    Ok(r as i64)
}

impl Evolution {
    fn new(x: f64, law: &IncrementLaw, mech: &SegmentMechanism, max_n: u64, no_crossing: bool) -> Result<Self> {
        let (steps, probs) = law.lattice_steps().ok_or_else(|| {
            Error::IncompatibleMechanism("the lattice oracle needs a lattice increment law".into())
        })?;
        let span = law.lattice_span().expect("lattice law has a span");
        let x0 = lattice_point(x, span)?;
        let reach = steps.iter().map(|s| s.unsigned_abs()).max().unwrap_or(0) * max_n;
        let reach = i64::try_from(reach).map_err(|_| Error::TooLarge("lattice range overflows".into()))?;
        let origin = x0 - reach;
        let len = (2 * reach + 1) as usize;
        let position = |idx: usize| (origin + idx as i64) as f64 * span;

        let model = match mech.rule() {
            Rule::Never => Model::Never,
            Rule::Hazard(h) => Model::Hazard((0..len).map(|i| 1.0 - h.at(position(i))).collect()),
            Rule::TimeBelow(law_u) => {
                use crate::mechanisms::TimeLaw;
                match law_u {
                    TimeLaw::Geometric { q } => Model::TimeBelow {
                        factors: vec![1.0, 1.0 - q],
                        stay: 1.0 - q,
                    },
                    TimeLaw::Finite { values, .. } => {
                        let max_age = values.last().copied().unwrap_or(0);
                        if max_age > MAX_AGE_LAYERS {
                            return Err(Error::IncompatibleMechanism(format!(
                                "time-below-zero with support up to {max_age} exceeds the {MAX_AGE_LAYERS}-layer DP limit"
                            )));
                        }
                        let mut factors = Vec::with_capacity(max_age as usize + 1);
                        let mut prev = 1.0;
                        for a in 0..=max_age {
                            let t = law_u.tail(a);
                            factors.push(if prev > 0.0 { t / prev } else { 0.0 });
                            prev = t;
                        }
                        Model::TimeBelow {
                            factors,
                            stay: if prev > 0.0 { 1.0 } else { 0.0 },
                        }
                    }
                }
            }
            Rule::AvoidSets { u_pmf, sets } => Model::Sets {
                u_pmf: u_pmf.clone(),
                allowed: sets
                    .iter()
                    .map(|set| (0..len).map(|i| !set.iter().any(|b| b.contains(position(i)))).collect())
                    .collect(),
            },
            Rule::Gate { interval, exempt_initial } => Model::Gate {
                interval: *interval,
                exempt_initial: *exempt_initial,
            },
        };
        let layers = match &model {
            Model::TimeBelow { factors, .. } => factors.len(),
            Model::Sets { u_pmf, .. } => u_pmf.len(),
            _ => 1,
        };
        let mut evo = Self {
            steps: steps.to_vec(),
            probs: probs.to_vec(),
            span,
            origin,
            start_side_neg: x0 < 0,
            no_crossing,
            model,
            mass: vec![vec![0.0; len]; layers],
            scratch: vec![vec![0.0; len]; layers],
            lo: reach as usize,
            hi: reach as usize,
        };
        evo.initialize(reach as usize, x0);
        Ok(evo)
    }

    fn initialize(&mut self, idx: usize, x0: i64) {
        let neg = x0 < 0;
        let x = x0 as f64 * self.span;
        match &self.model {
            Model::Never => self.mass[0][idx] = 1.0,
            Model::Hazard(surv) => self.mass[0][idx] = surv[idx],
            Model::TimeBelow { factors, .. } => {
                self.mass[0][idx] = if neg { factors[0] } else { 1.0 };
            }
            Model::Sets { u_pmf, allowed } => {
                if neg {
                    for (u, p) in u_pmf.iter().enumerate() {
                        if allowed[u][idx] {
                            self.mass[u][idx] = *p;
                        }
                    }
                } else {
                    self.mass[0][idx] = 1.0;
                }
            }
            Model::Gate { interval, exempt_initial } => {
                self.mass[0][idx] = if *exempt_initial || interval.contains(x) { 1.0 } else { 0.0 };
            }
        }
    }

    fn step(&mut self) {
        let max_up = self.steps.iter().copied().max().unwrap_or(0).max(0) as usize;
        let max_down = (-self.steps.iter().copied().min().unwrap_or(0)).max(0) as usize;
        let new_lo = self.lo - max_down;
        let new_hi = self.hi + max_up;
        for layer in self.scratch.iter_mut() {
            layer[new_lo..=new_hi].fill(0.0);
        }
        let zero_idx = -self.origin; // index of lattice point 0 (may be out of range)
        for a in 0..self.mass.len() {
            for idx in self.lo..=self.hi {
                let m = self.mass[a][idx];
                if m == 0.0 {
                    continue;
                }
                let from_neg = (idx as i64) < zero_idx;
                for (s, p) in self.steps.iter().zip(&self.probs) {
                    let to = (idx as i64 + s) as usize;
                    let to_neg = (to as i64) < zero_idx;
                    if self.no_crossing && to_neg != self.start_side_neg {
                        continue;
                    }
                    let w = m * p;
                    let crossing = from_neg != to_neg;
                    match &self.model {
                        Model::Never => self.scratch[0][to] += w,
                        Model::Hazard(surv) => self.scratch[0][to] += w * surv[to],
                        Model::TimeBelow { factors, stay } => {
                            if !to_neg {
                                self.scratch[0][to] += w;
                            } else if crossing {
                                self.scratch[0][to] += w * factors[0];
                            } else {
                                let last = factors.len() - 1;
                                if a < last {
                                    self.scratch[a + 1][to] += w * factors[a + 1];
                                } else {
                                    self.scratch[last][to] += w * stay;
                                }
                            }
                        }
                        Model::Sets { u_pmf, allowed } => {
                            if !to_neg {
                                self.scratch[0][to] += w;
                            } else if crossing {
                                for (u, pu) in u_pmf.iter().enumerate() {
                                    if allowed[u][to] {
                                        self.scratch[u][to] += w * pu;
                                    }
                                }
                            } else if allowed[a][to] {
                                self.scratch[a][to] += w;
                            }
                        }
                        Model::Gate { interval, .. } => {
                            let pos = (self.origin + to as i64) as f64 * self.span;
                            if !crossing || interval.contains(pos) {
                                self.scratch[0][to] += w;
                            }
                        }
                    }
                }
            }
        }
        std::mem::swap(&mut self.mass, &mut self.scratch);
        self.lo = new_lo;
        self.hi = new_hi;
    }

    fn total(&self) -> f64 {
        self.mass.iter().map(|l| l[self.lo..=self.hi].iter().sum::<f64>()).sum()
    }

    /// Surviving mass by position, merged over layers.
    fn by_position(&self) -> Vec<(f64, f64)> {
        (self.lo..=self.hi)
            .filter_map(|idx| {
                let m: f64 = self.mass.iter().map(|l| l[idx]).sum();
                (m > 0.0).then(|| ((self.origin + idx as i64) as f64 * self.span, m))
            })
            .collect()
    }
}

fn run(x: f64, law: &IncrementLaw, mech: &SegmentMechanism, horizons: &[u64], no_crossing: bool) -> Result<Vec<f64>> {
    let max_n = horizons.iter().copied().max().unwrap_or(0);
    let mut evo = Evolution::new(x, law, mech, max_n, no_crossing)?;
    let mut order: Vec<usize> = (0..horizons.len()).collect();
    order.sort_by_key(|&i| horizons[i]);
    let mut out = vec![0.0; horizons.len()];
    let mut t = 0;
    for i in order {
        while t < horizons[i] {
            evo.step();
            t += 1;
        }
        out[i] = evo.total();
    }
    Ok(out)
}

/// Exact `P_x(tau > n)` for every `n` in `horizons`.
pub fn dp_survival(x: f64, law: &IncrementLaw, mech: &SegmentMechanism, horizons: &[u64]) -> Result<Vec<f64>> {
    run(x, law, mech, horizons, false)
}

/// Exact `P_y(tau > n, T_1 > n)` for every `n` in `horizons`.
pub fn dp_no_crossing_survival(
    y: f64,
    law: &IncrementLaw,
    mech: &SegmentMechanism,
    horizons: &[u64],
) -> Result<Vec<f64>> {
    run(y, law, mech, horizons, true)
}

/// Finite-`n` proxy `n^{1/2} P_y(tau > n, T_1 > n)` for `u(y)`.
pub fn dp_u(y: f64, law: &IncrementLaw, mech: &SegmentMechanism, n_large: u64) -> Result<f64> {
    let p = dp_no_crossing_survival(y, law, mech, &[n_large])?[0];
    Ok((n_large as f64).sqrt() * p)
}

/// `P(stay on the starting side for n steps)` for every start index in
/// `starts`, where arriving at index `i` multiplies by `arrive[i]`.
fn stay_backward(steps: &[i64], probs: &[f64], zero_idx: i64, arrive: &[f64], starts: std::ops::RangeInclusive<usize>, n: u64, reach: usize) -> Vec<f64> {
    let len = arrive.len();
    let mut g = vec![1.0; len];
    let mut next = vec![0.0; len];
    let (first, last) = (*starts.start(), *starts.end());
    for j in 0..n as usize {
        // After this update, g holds j + 1 remaining steps and is needed on
        // indices within (n - j - 1) * reach of the starts.
        let margin = (n as usize - j - 1) * reach;
        let lo = first.saturating_sub(margin);
        let hi = (last + margin).min(len - 1);
        for (i, slot) in next.iter_mut().enumerate().take(hi + 1).skip(lo) {
            let neg = (i as i64) < zero_idx;
            let mut acc = 0.0;
            for (s, p) in steps.iter().zip(probs) {
                let to = i as i64 + s;
                if to < 0 || to >= len as i64 || (to < zero_idx) != neg {
                    continue;
                }
                let to = to as usize;
                acc += p * arrive[to] * g[to];
            }
            *slot = acc;
        }
        std::mem::swap(&mut g, &mut next);
    }
    g[first..=last].to_vec()
}

/// `n^{1/2} P_y(tau > n, T_1 > n)` at every lattice height `y = j * span`,
/// `lo <= j <= hi`, from a single backward recursion.
pub fn dp_u_grid(law: &IncrementLaw, mech: &SegmentMechanism, lo: i64, hi: i64, n_large: u64) -> Result<Vec<f64>> {
    let (steps, probs) = law.lattice_steps().ok_or_else(|| {
        Error::IncompatibleMechanism("the lattice oracle needs a lattice increment law".into())
    })?;
    let span = law.lattice_span().expect("lattice law has a span");
    if lo > hi {
        return Err(Error::InvalidArgument("empty u grid".into()));
    }
    let reach = steps.iter().map(|s| s.unsigned_abs()).max().unwrap_or(0) as usize;
    let pad = reach
        .checked_mul(n_large as usize)
        .ok_or_else(|| Error::TooLarge("lattice range overflows".into()))?;
    let len = (hi - lo) as usize + 1 + 2 * pad;
    let origin = lo - pad as i64;
    let zero_idx = -origin;
    let position = |i: usize| (origin + i as i64) as f64 * span;
    let starts = pad..=pad + (hi - lo) as usize;
    let run = |arrive: &[f64]| stay_backward(steps, probs, zero_idx, arrive, starts.clone(), n_large, reach);
    let ones = vec![1.0; len];

    let probs_out: Vec<f64> = match mech.rule() {
        Rule::Never => run(&ones),
        Rule::Hazard(h) => {
            let surv: Vec<f64> = (0..len).map(|i| 1.0 - h.at(position(i))).collect();
            let g = run(&surv);
            starts.clone().zip(g).map(|(i, v)| surv[i] * v).collect()
        }
        Rule::TimeBelow(u) => {
            let g = run(&ones);
            let tail = u.tail(n_large);
            starts.clone().zip(g).map(|(i, v)| if (i as i64) < zero_idx { tail * v } else { v }).collect()
        }
        Rule::AvoidSets { u_pmf, sets } => {
            let base = run(&ones);
            let mut out: Vec<f64> = vec![0.0; base.len()];
            for (pu, set) in u_pmf.iter().zip(sets) {
                if *pu == 0.0 {
                    continue;
                }
                let allowed: Vec<f64> = (0..len)
                    .map(|i| if set.iter().any(|b| b.contains(position(i))) { 0.0 } else { 1.0 })
                    .collect();
                let g = run(&allowed);
                for ((o, i), v) in out.iter_mut().zip(starts.clone()).zip(g) {
                    *o += pu * allowed[i] * v;
                }
            }
            starts
                .clone()
                .zip(base)
                .zip(out)
                .map(|((i, b), o)| if (i as i64) < zero_idx { o } else { b })
                .collect()
        }
        Rule::Gate { interval, exempt_initial } => {
            let g = run(&ones);
            starts
                .clone()
                .zip(g)
                .map(|(i, v)| if *exempt_initial || interval.contains(position(i)) { v } else { 0.0 })
                .collect()
        }
    };
    let scale = (n_large as f64).sqrt();
    Ok(probs_out.into_iter().map(|p| scale * p).collect())
}

/// Law of `S_n` given `tau > n`.
#[derive(Clone, Debug, PartialEq)]
pub struct EndpointPmf {
    /// `(position, probability)` sorted by position; probabilities sum to 1.
    pub atoms: Vec<(f64, f64)>,
    /// `P_x(tau > n)`.
    pub survival: f64,
}

pub fn dp_endpoint_distribution(x: f64, law: &IncrementLaw, mech: &SegmentMechanism, n: u64) -> Result<EndpointPmf> {
    let mut evo = Evolution::new(x, law, mech, n, false)?;
    for _ in 0..n {
        evo.step();
    }
    let survival = evo.total();
    if survival <= 0.0 {
        return Err(Error::ZeroSurvival(format!("P_{x}(tau > {n}) = 0")));
    }
    let atoms = evo
        .by_position()
        .into_iter()
        .map(|(pos, m)| (pos, m / survival))
        .collect();
    Ok(EndpointPmf { atoms, survival })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mechanisms::{MechanismSpec, TimeLawSpec};

    fn binom_central(m: u64) -> f64 {
        // C(2m, m) / 4^m by the product formula.
        (1..=m).fold(1.0, |acc, j| acc * (m + j) as f64 / (4.0 * j as f64))
    }

    #[test]
    fn never_absorb_keeps_all_mass() {
        let law = IncrementLaw::rademacher();
        let p = dp_survival(3.0, &law, &SegmentMechanism::never_absorb(), &[0, 10, 100]).unwrap();
        assert!(p.iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn immediate_kill_small_values() {
        let law = IncrementLaw::rademacher();
        let m = SegmentMechanism::immediate_kill();
        let p = dp_survival(0.0, &law, &m, &[4]).unwrap();
        assert_eq!(p[0], 0.375);
    }

    #[test]
    fn geometric_q_one_two_steps() {
        // Paths of length 2 from 0: only (-1, -1) spends age 1 below zero.
        let law = IncrementLaw::rademacher();
        let m = SegmentMechanism::kemperman(1.0).unwrap();
        assert_eq!(dp_survival(0.0, &law, &m, &[2]).unwrap()[0], 0.75);
    }

    #[test]
    fn no_crossing_matches_central_binomial() {
        let law = IncrementLaw::rademacher();
        let m = SegmentMechanism::immediate_kill();
        let hs: Vec<u64> = (1..=10).map(|m| 2 * m).collect();
        let p = dp_no_crossing_survival(0.0, &law, &m, &hs).unwrap();
        for (i, v) in p.iter().enumerate() {
            assert!((v - binom_central(i as u64 + 1)).abs() < 1e-12);
        }
        let neg = dp_no_crossing_survival(-1.0, &law, &m, &[0, 1, 5]).unwrap();
        assert_eq!(neg, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn no_crossing_never_absorb_is_classical_persistence() {
        let law = IncrementLaw::rademacher();
        let never = dp_no_crossing_survival(0.0, &law, &SegmentMechanism::never_absorb(), &[6, 9]).unwrap();
        let kill = dp_survival(0.0, &law, &SegmentMechanism::immediate_kill(), &[6, 9]).unwrap();
        assert_eq!(never, kill);
    }

    #[test]
    fn survival_dominates_no_crossing_and_decreases() {
        let law = IncrementLaw::lattice_pmf(vec![-2, -1, 1, 2], vec![0.2, 0.3, 0.3, 0.2]).unwrap();
        let mechs = [
            SegmentMechanism::kemperman(0.3).unwrap(),
            SegmentMechanism::build(&MechanismSpec::TimeBelowZero {
                u: TimeLawSpec::Tabulated {
                    pmf: vec![(1, 0.2), (3, 0.3)],
                    p_inf: 0.5,
                },
            })
            .unwrap(),
        ];
        let hs: Vec<u64> = (0..60).collect();
        for m in &mechs {
            for x in [-3.0, 0.0, 2.0] {
                let s = dp_survival(x, &law, m, &hs).unwrap();
                let nc = dp_no_crossing_survival(x, &law, m, &hs).unwrap();
                for i in 0..hs.len() {
                    assert!(s[i] + 1e-15 >= nc[i]);
                    if i > 0 {
                        assert!(s[i] <= s[i - 1] + 1e-15);
                    }
                }
            }
        }
    }

    #[test]
    fn endpoint_distribution_cases() {
        let law = IncrementLaw::rademacher();
        let kill = SegmentMechanism::immediate_kill();
        let e0 = dp_endpoint_distribution(2.0, &law, &kill, 0).unwrap();
        assert_eq!(e0.atoms, vec![(2.0, 1.0)]);
        let e = dp_endpoint_distribution(0.0, &law, &kill, 30).unwrap();
        assert!(e.atoms.iter().all(|&(z, _)| (0.0..=30.0).contains(&z)));
        let total: f64 = e.atoms.iter().map(|a| a.1).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(matches!(
            dp_endpoint_distribution(-1.0, &law, &kill, 3),
            Err(Error::ZeroSurvival(_))
        ));
    }

    #[test]
    fn rejects_non_lattice_and_unbounded() {
        let g = IncrementLaw::gaussian(1.0).unwrap();
        assert!(matches!(
            dp_survival(0.0, &g, &SegmentMechanism::never_absorb(), &[3]),
            Err(Error::IncompatibleMechanism(_))
        ));
        let huge = SegmentMechanism::build(&MechanismSpec::TimeBelowZero {
            u: TimeLawSpec::Deterministic { m: 1 << 40 },
        })
        .unwrap();
        assert!(matches!(
            dp_survival(0.0, &IncrementLaw::rademacher(), &huge, &[3]),
            Err(Error::IncompatibleMechanism(_))
        ));
        assert!(dp_survival(0.5, &IncrementLaw::rademacher(), &huge, &[3]).is_err());
    }

    #[test]
    fn dp_u_converges_to_classical_constant() {
        let law = IncrementLaw::rademacher();
        let kill = SegmentMechanism::immediate_kill();
        let a = dp_u(0.0, &law, &kill, 1 << 13).unwrap();
        let b = dp_u(0.0, &law, &kill, 1 << 14).unwrap();
        assert!((a - b).abs() / b < 0.01);
        assert_eq!(dp_u(-1.0, &law, &kill, 64).unwrap(), 0.0);
    }

    #[test]
    fn u_grid_matches_pointwise_dp() {
        let law = IncrementLaw::lattice_pmf(vec![-2, -1, 1, 2], vec![0.2, 0.3, 0.3, 0.2]).unwrap();
        let specs = [
            MechanismSpec::NeverAbsorb,
            MechanismSpec::ImmediateKill,
            MechanismSpec::TimeBelowZero {
                u: TimeLawSpec::Tabulated { pmf: vec![(0, 0.1), (3, 0.4)], p_inf: 0.5 },
            },
            MechanismSpec::PositionHazard { breakpoints: vec![-3.0], values: vec![0.5, 0.1], tail: None },
            MechanismSpec::AvoidSets {
                u_pmf: vec![0.5, 0.5],
                sets: vec![vec![Interval::closed(-2.0, -1.0)], vec![Interval::closed(-6.0, -4.0)]],
            },
            MechanismSpec::IntervalGate { lo: -3.0, hi: 2.0, exempt_initial_segment: false },
        ];
        for spec in &specs {
            let mech = SegmentMechanism::build(spec).unwrap();
            let grid = dp_u_grid(&law, &mech, -8, 5, 30).unwrap();
            for (j, g) in (-8..=5).zip(&grid) {
                let point = dp_u(j as f64, &law, &mech, 30).unwrap();
                assert!((g - point).abs() < 1e-12, "{spec:?} at {j}: {g} vs {point}");
            }
        }
    }
}
