//! Absorption mechanisms.
//!
//! A mechanism is a family of kill predicates `K_i(u, x)`: `i` is the number of
//! steps since the current segment started, `u` the segment's random input and
//! `x` the current position. Every family here only ever kills on the negative
//! side, except the interval gate which kills at segment starts (`i = 0`).
//! Path simulation relies on that: positions `>= 0` with `i >= 1` are never
//! checked.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::walk::stream::keyed_uniform;
use crate::walk::RandomStream;

const PMF_TOL: f64 = 1e-12;

/// Law of the per-segment survival time for the time-below-zero family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TimeLawSpec {
    /// Support `{1, 2, ...}` with `P(U > i) = (1 - q)^i`.
    Geometric { q: f64 },
    Deterministic { m: u64 },
    /// Finite atoms `(value, probability)` plus an atom at infinity.
    Tabulated {
        pmf: Vec<(u64, f64)>,
        #[serde(default)]
        p_inf: f64,
    },
}

/// A bounded interval; closed on both ends unless flagged open.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
    #[serde(default, skip_serializing_if = "is_false")]
    pub lo_open: bool,
    #[serde(default, skip_serializing_if = "is_false")]
    pub hi_open: bool,
}

fn is_false(b: &bool) -> bool {
    !*b
}

impl Interval {
    pub fn closed(lo: f64, hi: f64) -> Self {
        Self {
            lo,
            hi,
            lo_open: false,
            hi_open: false,
        }
    }

    #[inline]
    pub fn contains(&self, x: f64) -> bool {
        let above = if self.lo_open { x > self.lo } else { x >= self.lo };
        let below = if self.hi_open { x < self.hi } else { x <= self.hi };
        above && below
    }

    pub fn has_interior(&self) -> bool {
        self.lo < self.hi
    }
}

/// Optional declared tail bound `p(x) >= p_min` on `(-inf, -l]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TailBound {
    pub l: f64,
    pub p_min: f64,
}

/// Serializable mechanism description (the `mechanism` block of a run config).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MechanismSpec {
    NeverAbsorb,
    /// Shorthand for a position hazard equal to 1 on the negative half-line.
    ImmediateKill,
    TimeBelowZero {
        u: TimeLawSpec,
    },
    /// Piecewise-constant hazard: `values[j]` applies on
    /// `[breakpoints[j-1], breakpoints[j])`, with the outer pieces running to
    /// `-inf` and to `0`. The hazard is zero on `[0, inf)`.
    PositionHazard {
        #[serde(default)]
        breakpoints: Vec<f64>,
        values: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        tail: Option<TailBound>,
    },
    AvoidSets {
        u_pmf: Vec<f64>,
        sets: Vec<Vec<Interval>>,
    },
    IntervalGate {
        lo: f64,
        hi: f64,
        #[serde(default, skip_serializing_if = "is_false")]
        exempt_initial_segment: bool,
    },
}

#[derive(Clone, Debug)]
pub(crate) enum TimeLaw {
    Geometric { q: f64 },
    /// Atoms sorted by value.
    Finite {
        values: Vec<u64>,
        probs: Vec<f64>,
        p_inf: f64,
    },
}

impl TimeLaw {
    fn build(spec: &TimeLawSpec) -> Result<Self> {
        match *spec {
            TimeLawSpec::Geometric { q } => {
                if !(q > 0.0 && q <= 1.0) {
                    return Err(invalid(format!("geometric q must lie in (0, 1], got {q}")));
                }
                Ok(TimeLaw::Geometric { q })
            }
            TimeLawSpec::Deterministic { m } => Ok(TimeLaw::Finite {
                values: vec![m],
                probs: vec![1.0],
                p_inf: 0.0,
            }),
            TimeLawSpec::Tabulated { ref pmf, p_inf } => {
                if !(0.0..1.0).contains(&p_inf) {
                    return Err(invalid(format!("P(U = inf) must lie in [0, 1), got {p_inf}")));
                }
                let mut atoms = pmf.clone();
                atoms.sort_by_key(|&(v, _)| v);
                if atoms.windows(2).any(|w| w[0].0 == w[1].0) {
                    return Err(invalid("tabulated U has repeated values"));
                }
                if atoms.iter().any(|&(_, p)| !(p.is_finite() && p >= 0.0)) {
                    return Err(invalid("tabulated U probabilities must be nonnegative"));
                }
                let total = atoms.iter().map(|&(_, p)| p).sum::<f64>() + p_inf;
                if (total - 1.0).abs() > PMF_TOL {
                    return Err(invalid(format!("tabulated U pmf sums to {total}, not 1")));
                }
                Ok(TimeLaw::Finite {
                    values: atoms.iter().map(|&(v, _)| v).collect(),
                    probs: atoms.iter().map(|&(_, p)| p).collect(),
                    p_inf,
                })
            }
        }
    }

    /// `None` encodes `U = inf`.
    fn sample(&self, stream: &mut RandomStream) -> Option<u64> {
        match self {
            TimeLaw::Geometric { q } => {
                if *q >= 1.0 {
                    return Some(1);
                }
                let v = stream.uniform();
                let u = (v.ln() / (1.0 - q).ln()).ceil();
                Some(if u >= u64::MAX as f64 { u64::MAX } else { (u as u64).max(1) })
            }
            TimeLaw::Finite {
                values,
                probs,
                p_inf,
            } => {
                let r = stream.uniform();
                if r < *p_inf {
                    return None;
                }
                let mut acc = *p_inf;
                for (v, p) in values.iter().zip(probs) {
                    acc += p;
                    if r < acc {
                        return Some(*v);
                    }
                }
                // Rounding slack lands on the largest finite atom.
                values.last().copied().or(None)
            }
        }
    }

    /// `P(U > i)`.
    pub(crate) fn tail(&self, i: u64) -> f64 {
        match self {
            TimeLaw::Geometric { q } => (1.0 - q).powf(i as f64),
            TimeLaw::Finite {
                values,
                probs,
                p_inf,
            } => {
                p_inf
                    + values
                        .iter()
                        .zip(probs)
                        .filter(|(&v, _)| v > i)
                        .map(|(_, p)| p)
                        .sum::<f64>()
            }
        }
    }

    pub(crate) fn p_infinite(&self) -> f64 {
        match self {
            TimeLaw::Geometric { .. } => 0.0,
            TimeLaw::Finite { p_inf, .. } => *p_inf,
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Hazard {
    breakpoints: Vec<f64>,
    values: Vec<f64>,
}

impl Hazard {
    #[inline]
    pub(crate) fn at(&self, x: f64) -> f64 {
        if x >= 0.0 {
            return 0.0;
        }
        self.values[self.breakpoints.partition_point(|&b| b <= x)]
    }
}

#[derive(Clone, Debug)]
pub(crate) enum Rule {
    Never,
    TimeBelow(TimeLaw),
    Hazard(Hazard),
    AvoidSets {
        u_pmf: Vec<f64>,
        sets: Vec<Vec<Interval>>,
    },
    Gate {
        interval: Interval,
        exempt_initial: bool,
    },
}

/// A validated absorption mechanism. Immutable; safe to share across workers.
#[derive(Clone, Debug)]
pub struct SegmentMechanism {
    spec: MechanismSpec,
    rule: Rule,
}

/// The realized per-segment input.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SegmentInput {
    None,
    /// Survival time below zero; `None` is `U = inf`.
    Time(Option<u64>),
    /// Key of the per-step uniform sequence `u^(0), u^(1), ...`.
    Uniforms(u64),
    /// Index of the selected set `B_u`.
    Set(usize),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SegmentState {
    /// Crossing index `k` of this segment.
    pub segment: u64,
    pub u_value: SegmentInput,
    pub steps_in_segment: u64,
}

impl SegmentState {
    #[inline]
    pub fn advance(&mut self) {
        self.steps_in_segment += 1;
    }
}

impl SegmentMechanism {
    pub fn never_absorb() -> Self {
        Self::build(&MechanismSpec::NeverAbsorb).expect("valid")
    }

    pub fn immediate_kill() -> Self {
        Self::build(&MechanismSpec::ImmediateKill).expect("valid")
    }

    /// Time-below-zero with geometric `U`.
    pub fn kemperman(q: f64) -> Result<Self> {
        Self::build(&MechanismSpec::TimeBelowZero {
            u: TimeLawSpec::Geometric { q },
        })
    }

    pub fn build(spec: &MechanismSpec) -> Result<Self> {
        let rule = match spec {
            MechanismSpec::NeverAbsorb => Rule::Never,
            MechanismSpec::ImmediateKill => Rule::Hazard(Hazard {
                breakpoints: vec![],
                values: vec![1.0],
            }),
            MechanismSpec::TimeBelowZero { u } => Rule::TimeBelow(TimeLaw::build(u)?),
            MechanismSpec::PositionHazard {
                breakpoints,
                values,
                tail,
            } => Rule::Hazard(build_hazard(breakpoints, values, tail.as_ref())?),
            MechanismSpec::AvoidSets { u_pmf, sets } => build_avoid_sets(u_pmf, sets)?,
            MechanismSpec::IntervalGate {
                lo,
                hi,
                exempt_initial_segment,
            } => {
                if !(lo.is_finite() && hi.is_finite() && *lo < 0.0 && *hi > 0.0) {
                    return Err(invalid(format!(
                        "interval-gate needs an open interval containing 0, got ({lo}, {hi})"
                    )));
                }
                Rule::Gate {
                    interval: Interval {
                        lo: *lo,
                        hi: *hi,
                        lo_open: true,
                        hi_open: true,
                    },
                    exempt_initial: *exempt_initial_segment,
                }
            }
        };
        Ok(Self {
            spec: spec.clone(),
            rule,
        })
    }

    pub fn spec(&self) -> &MechanismSpec {
        &self.spec
    }

    pub(crate) fn rule(&self) -> &Rule {
        &self.rule
    }

    pub fn is_never(&self) -> bool {
        matches!(self.rule, Rule::Never)
    }

    /// Opens segment `segment`, drawing its input from `stream`.
    pub fn new_segment(&self, segment: u64, stream: &mut RandomStream) -> SegmentState {
        let u_value = match &self.rule {
            Rule::Never | Rule::Gate { .. } => SegmentInput::None,
            Rule::TimeBelow(law) => SegmentInput::Time(law.sample(stream)),
            Rule::Hazard(_) => SegmentInput::Uniforms(stream.next_u64()),
            Rule::AvoidSets { u_pmf, .. } => {
                if u_pmf.len() == 1 {
                    SegmentInput::Set(0)
                } else {
                    let r = stream.uniform();
                    let mut acc = 0.0;
                    let idx = u_pmf
                        .iter()
                        .position(|p| {
                            acc += p;
                            r < acc
                        })
                        .unwrap_or(u_pmf.len() - 1);
                    SegmentInput::Set(idx)
                }
            }
        };
        SegmentState {
            segment,
            u_value,
            steps_in_segment: 0,
        }
    }

    /// Evaluates `K_i(u, position)` with `i = state.steps_in_segment`.
    #[inline]
    pub fn absorbed(&self, state: &SegmentState, position: f64) -> bool {
        let i = state.steps_in_segment;
        match (&self.rule, state.u_value) {
            (Rule::Never, _) => false,
            (Rule::TimeBelow(_), SegmentInput::Time(u)) => {
                position < 0.0 && u.is_some_and(|u| i >= u)
            }
            (Rule::Hazard(h), SegmentInput::Uniforms(key)) => {
                position < 0.0 && h.at(position) >= keyed_uniform(key, i)
            }
            (Rule::AvoidSets { sets, .. }, SegmentInput::Set(u)) => {
                sets[u].iter().any(|b| b.contains(position))
            }
            (
                Rule::Gate {
                    interval,
                    exempt_initial,
                },
                _,
            ) => i == 0 && !(*exempt_initial && state.segment == 0) && !interval.contains(position),
            (rule, input) => panic!("segment input {input:?} does not belong to {rule:?}"),
        }
    }

    /// True when a walk started at `y` is killed at time 0 with probability one.
    pub fn certain_initial_kill(&self, y: f64) -> bool {
        match &self.rule {
            Rule::Never => false,
            Rule::TimeBelow(law) => y < 0.0 && law.tail(0) == 0.0,
            Rule::Hazard(h) => h.at(y) >= 1.0,
            Rule::AvoidSets { u_pmf, sets } => u_pmf
                .iter()
                .zip(sets)
                .all(|(&p, set)| p == 0.0 || set.iter().any(|b| b.contains(y))),
            Rule::Gate {
                interval,
                exempt_initial,
            } => !exempt_initial && !interval.contains(y),
        }
    }

    /// Closed-form limit `u(y)` of `n^{1/2} P_y(tau > n, T_1 > n)` when the
    /// family admits one, given the classical constants `c_y`.
    pub fn analytic_u(&self, y: f64, c: &dyn Fn(f64) -> f64) -> Option<f64> {
        match &self.rule {
            Rule::Never => Some(c(y)),
            Rule::TimeBelow(law) => {
                if y >= 0.0 {
                    Some(c(y))
                } else {
                    Some(c(y) * law.p_infinite())
                }
            }
            Rule::Hazard(_) | Rule::AvoidSets { .. } => (y >= 0.0).then(|| c(y)),
            Rule::Gate { .. } => Some(if self.certain_initial_kill(y) { 0.0 } else { c(y) }),
        }
    }
}

fn build_hazard(breakpoints: &[f64], values: &[f64], tail: Option<&TailBound>) -> Result<Hazard> {
    if values.len() != breakpoints.len() + 1 {
        return Err(invalid(format!(
            "position-hazard needs breakpoints + 1 values, got {} breakpoints and {} values",
            breakpoints.len(),
            values.len()
        )));
    }
    if breakpoints.iter().any(|b| !(b.is_finite() && *b < 0.0)) {
        return Err(invalid("position-hazard breakpoints must be finite and negative"));
    }
    if breakpoints.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid("position-hazard breakpoints must be strictly increasing"));
    }
    if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(invalid(format!("hazard value {v} outside [0, 1]")));
    }
    if values[0] <= 0.0 {
        return Err(invalid(
            "position-hazard must stay positive towards -inf (liminf condition)",
        ));
    }
    if let Some(t) = tail {
        if !(t.l >= 0.0 && t.p_min > 0.0) {
            return Err(invalid("tail bound needs l >= 0 and p_min > 0"));
        }
        for (j, v) in values.iter().enumerate() {
            let lower = if j == 0 { f64::NEG_INFINITY } else { breakpoints[j - 1] };
            if lower <= -t.l && *v < t.p_min {
                return Err(invalid(format!(
                    "hazard value {v} below declared p_min {} on (-inf, -{}]",
                    t.p_min, t.l
                )));
            }
        }
    }
    Ok(Hazard {
        breakpoints: breakpoints.to_vec(),
        values: values.to_vec(),
    })
}

fn build_avoid_sets(u_pmf: &[f64], sets: &[Vec<Interval>]) -> Result<Rule> {
    if u_pmf.is_empty() || u_pmf.len() != sets.len() {
        return Err(invalid("avoid-sets needs one set per atom of U"));
    }
    if u_pmf.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err(invalid("avoid-sets U probabilities must be nonnegative"));
    }
    let total: f64 = u_pmf.iter().sum();
    if (total - 1.0).abs() > PMF_TOL {
        return Err(invalid(format!("avoid-sets U pmf sums to {total}, not 1")));
    }
    if u_pmf[0] <= 0.0 {
        return Err(invalid("avoid-sets requires P(U = 0) > 0"));
    }
    for (u, set) in sets.iter().enumerate() {
        for b in set {
            if !(b.lo.is_finite() && b.hi.is_finite()) || b.lo > b.hi {
                return Err(invalid(format!("B_{u}: malformed interval [{}, {}]", b.lo, b.hi)));
            }
            if b.hi > 0.0 || (b.hi == 0.0 && !b.hi_open) {
                return Err(invalid(format!("B_{u}: interval must lie in (-inf, 0)")));
            }
        }
    }
    if !sets[0].iter().any(Interval::has_interior) {
        return Err(invalid("B_0 must have a non-empty interior"));
    }
    Ok(Rule::AvoidSets {
        u_pmf: u_pmf.to_vec(),
        sets: sets.to_vec(),
    })
}
