use num_rational::BigRational;
use num_traits::{One, Zero};

use crate::error::{Error, Result};
use crate::mechanisms::{Rule, SegmentMechanism, TimeLaw};
use crate::walk::IncrementLaw;

/// Upper bound on the number of enumerated increment sequences.
pub const MAX_SEQUENCES: u64 = 1 << 20;

fn exact(v: f64) -> BigRational {
    BigRational::from_float(v).expect("finite probability")
}

fn pow(base: &BigRational, e: u64) -> BigRational {
    (0..e).fold(BigRational::one(), |acc, _| acc * base)
}

/// Exact `P_x(tau > n)` by summing over all `|support|^n` increment sequences.
///
/// Each sequence is cut into its sign segments and the survival probability
/// given the path is evaluated segment by segment straight from the kill
/// predicates; no state is shared with the dynamic program.
pub fn enumerate_small(x: f64, law: &IncrementLaw, mech: &SegmentMechanism, n: u32) -> Result<BigRational> {
    let (steps, probs) = law.lattice_steps().ok_or_else(|| {
        Error::IncompatibleMechanism("enumeration needs a lattice increment law".into())
    })?;
    let span = law.lattice_span().expect("lattice span");
    let count = (steps.len() as u64).checked_pow(n);
    if count.is_none_or(|c| c > MAX_SEQUENCES) {
        return Err(Error::TooLarge(format!(
            "{}^{n} sequences exceed the enumeration limit of {MAX_SEQUENCES}",
            steps.len()
        )));
    }
    let probs: Vec<BigRational> = probs.iter().map(|&p| exact(p)).collect();
    let mut total = BigRational::zero();
    let mut path = vec![x];
    walk(&mut path, n as usize, steps, span, &probs, BigRational::one(), mech, &mut total);
    Ok(total)
}

#[allow(clippy::too_many_arguments)]
fn walk(
    path: &mut Vec<f64>,
    n: usize,
    steps: &[i64],
    span: f64,
    probs: &[BigRational],
    weight: BigRational,
    mech: &SegmentMechanism,
    total: &mut BigRational,
) {
    if path.len() == n + 1 {
        let s = survival_given_path(path, mech);
        if !s.is_zero() {
            *total += weight * s;
        }
        return;
    }
    let last = *path.last().unwrap();
    for (step, p) in steps.iter().zip(probs) {
        path.push(last + *step as f64 * span);
        walk(path, n, steps, span, probs, &weight * p, mech, total);
        path.pop();
    }
}

/// `P(no kill at times 0..=n | S_0..S_n = path)`.
fn survival_given_path(path: &[f64], mech: &SegmentMechanism) -> BigRational {
    let mut result = BigRational::one();
    let mut start = 0;
    let mut k = 0u64;
    while start < path.len() {
        let neg = path[start] < 0.0;
        let mut end = start + 1;
        while end < path.len() && (path[end] < 0.0) == neg {
            end += 1;
        }
        let segment = &path[start..end];
        result *= segment_survival(segment, neg, k, mech);
        if result.is_zero() {
            return result;
        }
        start = end;
        k += 1;
    }
    result
}

fn segment_survival(segment: &[f64], neg: bool, k: u64, mech: &SegmentMechanism) -> BigRational {
    let one = BigRational::one();
    match mech.rule() {
        Rule::Never => one,
        Rule::Hazard(h) => segment.iter().fold(one, |acc, &s| acc * (BigRational::one() - exact(h.at(s)))),
        Rule::TimeBelow(law) => {
            if !neg {
                return one;
            }
            // Killed at age i iff i >= U; ages 0..len-1 are observed.
            let oldest = segment.len() as u64 - 1;
            match law {
                TimeLaw::Geometric { q } => {
                    if oldest == 0 {
                        one
                    } else {
                        pow(&(BigRational::one() - exact(*q)), oldest)
                    }
                }
                TimeLaw::Finite { values, probs, p_inf } => {
                    let mut t = exact(*p_inf);
                    for (v, p) in values.iter().zip(probs) {
                        if *v > oldest {
                            t += exact(*p);
                        }
                    }
                    t
                }
            }
        }
        Rule::AvoidSets { u_pmf, sets } => {
            if !neg {
                return one;
            }
            let mut t = BigRational::zero();
            for (p, set) in u_pmf.iter().zip(sets) {
                if segment.iter().all(|&s| !set.iter().any(|b| b.contains(s))) {
                    t += exact(*p);
                }
            }
            t
        }
        Rule::Gate { interval, exempt_initial } => {
            let checked = k > 0 || !exempt_initial;
            if checked && !interval.contains(segment[0]) {
                BigRational::zero()
            } else {
                one
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_bigint::BigInt;

    fn ratio(num: i64, den: i64) -> BigRational {
        BigRational::new(BigInt::from(num), BigInt::from(den))
    }

    #[test]
    fn sixteen_paths() {
        let law = IncrementLaw::rademacher();
        let p = enumerate_small(0.0, &law, &SegmentMechanism::immediate_kill(), 4).unwrap();
        assert_eq!(p, ratio(3, 8));
    }

    #[test]
    fn never_absorb_is_one() {
        let law = IncrementLaw::rademacher();
        let p = enumerate_small(-2.0, &law, &SegmentMechanism::never_absorb(), 9).unwrap();
        assert_eq!(p, BigRational::one());
    }

    #[test]
    fn geometric_q_one() {
        let law = IncrementLaw::rademacher();
        let p = enumerate_small(0.0, &law, &SegmentMechanism::kemperman(1.0).unwrap(), 2).unwrap();
        assert_eq!(p, ratio(3, 4));
    }

    #[test]
    fn guards_size() {
        let law = IncrementLaw::rademacher();
        assert!(enumerate_small(0.0, &law, &SegmentMechanism::never_absorb(), 20).is_ok());
        assert!(matches!(
            enumerate_small(0.0, &law, &SegmentMechanism::never_absorb(), 21),
            Err(Error::TooLarge(_))
        ));
    }
}
