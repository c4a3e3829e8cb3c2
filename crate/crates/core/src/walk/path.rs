use serde::{Deserialize, Serialize};

use super::{IncrementLaw, RandomStream};
use crate::mechanisms::SegmentMechanism;

/// Sign class of a position. Zero belongs to the nonnegative side.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Side {
    Nonneg,
    Neg,
}

#[inline]
pub fn side_of(position: f64) -> Side {
    if position >= 0.0 {
        Side::Nonneg
    } else {
        Side::Neg
    }
}

/// The `k`-th zero-crossing: time `T_k` and height `H_k = S_{T_k}`.
/// Record 0 is the start `(0, S_0)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossingRecord {
    pub k: u64,
    pub time: u64,
    pub height: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathOutcome {
    /// Absorption time `tau`, if it happened within the horizon.
    pub absorbed_at: Option<u64>,
    pub horizon: u64,
    /// All crossings with time `<= min(tau, horizon)`, starting with record 0.
    pub crossings: Vec<CrossingRecord>,
    /// `S_{min(tau, n)}`, or the position where the simulation stopped.
    pub final_position: f64,
    pub endpoint_side: Side,
    /// Number of steps actually simulated.
    pub steps: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trajectory: Option<Vec<f64>>,
}

impl PathOutcome {
    pub fn survived(&self, n: u64) -> bool {
        self.absorbed_at.is_none_or(|t| t > n)
    }

    /// Time of the first crossing, if it happened.
    pub fn first_crossing(&self) -> Option<u64> {
        self.crossings.get(1).map(|c| c.time)
    }

    /// Index of the last crossing reached (with `tau >= T_k`).
    pub fn crossings_reached(&self) -> u64 {
        self.crossings.len() as u64 - 1
    }
}

/// Simulates `S_0 = x, S_{m+1} = S_m + X_{m+1}` up to `horizon` steps under
/// `mech`, stopping at the first kill.
pub fn simulate_path(
    x: f64,
    law: &IncrementLaw,
    mech: &SegmentMechanism,
    horizon: u64,
    stream: &mut RandomStream,
    keep_trajectory: bool,
) -> PathOutcome {
    simulate_until(x, law, mech, horizon, None, stream, keep_trajectory)
}

/// Like [`simulate_path`], but also stops right after crossing number
/// `max_crossings` has been recorded and its kill predicate evaluated.
pub fn simulate_until(
    x: f64,
    law: &IncrementLaw,
    mech: &SegmentMechanism,
    horizon: u64,
    max_crossings: Option<u64>,
    stream: &mut RandomStream,
    keep_trajectory: bool,
) -> PathOutcome {
    let never = mech.is_never();
    let mut position = x;
    let mut side = side_of(x);
    let mut segment = mech.new_segment(0, stream);
    let mut crossings = vec![CrossingRecord {
        k: 0,
        time: 0,
        height: x,
    }];
    let mut trajectory = keep_trajectory.then(|| vec![x]);
    let mut absorbed_at = None;
    let mut m = 0u64;

    if !never && mech.absorbed(&segment, position) {
        absorbed_at = Some(0);
    }
    let crossing_limit = max_crossings.unwrap_or(u64::MAX);

    if absorbed_at.is_none() && crossing_limit > 0 {
        while m < horizon {
            position += law.sample(stream);
            m += 1;
            if let Some(t) = trajectory.as_mut() {
                t.push(position);
            }
            let new_side = side_of(position);
            if new_side != side {
                side = new_side;
                let k = crossings.len() as u64;
                crossings.push(CrossingRecord {
                    k,
                    time: m,
                    height: position,
                });
                segment = mech.new_segment(k, stream);
                if !never && mech.absorbed(&segment, position) {
                    absorbed_at = Some(m);
                    break;
                }
                if k >= crossing_limit {
                    break;
                }
            } else {
                segment.advance();
                // Nothing kills on the nonnegative side away from a segment start.
                if !never && position < 0.0 && mech.absorbed(&segment, position) {
                    absorbed_at = Some(m);
                    break;
                }
            }
        }
    }

    PathOutcome {
        absorbed_at,
        horizon,
        crossings,
        final_position: position,
        endpoint_side: side_of(position),
        steps: m,
        trajectory,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mechanisms::MechanismSpec;
    use proptest::prelude::*;

    #[test]
    fn side_convention() {
        assert_eq!(side_of(0.0), Side::Nonneg);
        assert_eq!(side_of(-1e-9), Side::Neg);
        assert_eq!(side_of(3.5), Side::Nonneg);
    }

    #[test]
    fn never_absorb_survives() {
        let law = IncrementLaw::rademacher();
        let mech = SegmentMechanism::never_absorb();
        for seed in 0..50 {
            let out = simulate_path(0.0, &law, &mech, 10, &mut RandomStream::new(seed), false);
            assert_eq!(out.absorbed_at, None);
            assert!(out.survived(10));
        }
    }

    #[test]
    fn immediate_kill_on_first_down_step() {
        let law = IncrementLaw::rademacher();
        let mech = SegmentMechanism::immediate_kill();
        let out = (0..)
            .map(|s| simulate_path(0.0, &law, &mech, 10, &mut RandomStream::new(s), true))
            .find(|o| o.trajectory.as_ref().unwrap()[1] < 0.0)
            .unwrap();
        assert_eq!(out.absorbed_at, Some(1));
        assert_eq!(out.crossings.len(), 2);
        assert_eq!(out.crossings[1], CrossingRecord { k: 1, time: 1, height: -1.0 });
        assert_eq!(out.trajectory.unwrap(), vec![0.0, -1.0]);
    }

    #[test]
    fn kill_at_time_zero() {
        let law = IncrementLaw::rademacher();
        let out = simulate_path(
            -1.0,
            &law,
            &SegmentMechanism::immediate_kill(),
            10,
            &mut RandomStream::new(0),
            false,
        );
        assert_eq!(out.absorbed_at, Some(0));
        assert_eq!(out.steps, 0);
    }

    #[test]
    fn stops_at_crossing_limit() {
        let law = IncrementLaw::rademacher();
        let mech = SegmentMechanism::never_absorb();
        let out = simulate_until(0.0, &law, &mech, 1_000_000, Some(3), &mut RandomStream::new(9), false);
        assert_eq!(out.crossings_reached(), 3);
        assert_eq!(out.steps, out.crossings[3].time);
    }

    fn mechanisms() -> Vec<SegmentMechanism> {
        vec![
            SegmentMechanism::never_absorb(),
            SegmentMechanism::immediate_kill(),
            SegmentMechanism::kemperman(0.3).unwrap(),
            SegmentMechanism::build(&MechanismSpec::IntervalGate {
                lo: -0.7,
                hi: 0.9,
                exempt_initial_segment: true,
            })
            .unwrap(),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn crossing_bookkeeping(seed in any::<u64>(), x in -3.0f64..3.0, which in 0usize..4, gauss in any::<bool>()) {
            let law = if gauss { IncrementLaw::gaussian(1.0).unwrap() } else { IncrementLaw::rademacher() };
            let mech = &mechanisms()[which];
            let out = simulate_path(x, &law, mech, 200, &mut RandomStream::new(seed), true);
            let traj = out.trajectory.as_ref().unwrap();
            prop_assert_eq!(out.crossings[0], CrossingRecord { k: 0, time: 0, height: x });
            for w in out.crossings.windows(2) {
                prop_assert!(w[0].time < w[1].time);
                prop_assert_ne!(side_of(w[0].height), side_of(w[1].height));
                for m in w[0].time..w[1].time {
                    prop_assert_eq!(side_of(traj[m as usize]), side_of(w[0].height));
                }
            }
            let end = out.absorbed_at.unwrap_or(200);
            prop_assert!(out.crossings.iter().all(|c| c.time <= end));
            prop_assert_eq!(traj.len() as u64, end + 1);
            prop_assert_eq!(out.final_position, traj[end as usize]);
            // Determinism.
            let again = simulate_path(x, &law, mech, 200, &mut RandomStream::new(seed), true);
            prop_assert_eq!(&out, &again);
        }

        #[test]
        fn immediate_kill_dies_at_first_crossing(seed in any::<u64>(), x in 0i32..5) {
            let law = IncrementLaw::rademacher();
            let out = simulate_path(x as f64, &law, &SegmentMechanism::immediate_kill(), 300, &mut RandomStream::new(seed), false);
            if let Some(t) = out.absorbed_at {
                prop_assert_eq!(Some(t), out.first_crossing());
            } else {
                prop_assert_eq!(out.first_crossing(), None);
            }
        }
    }
}
