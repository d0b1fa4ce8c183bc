//! Join, takeover, merge and leave scores. Distances and speeds enter the
//! exponentials through a [`Scaling`], so `Scaling::UNIT` gives the raw
//! formulas.

use crate::error::ThresholdError;
use crate::types::{relative_distance, relative_speed, CompetitiveMode, Scaling, VehicleState};

/// Cooperative threshold of an ordinary vehicle toward a core, in `(0, 1]`.
/// Above the congestion threshold the score is weighted by trajectory
/// similarity `lambda`; at or below it (including free flow) it is not.
pub fn cooperative_threshold(
    ordinary: &VehicleState,
    core: &VehicleState,
    tti: f64,
    lambda: f64,
    congestion_threshold: f64,
    scaling: Scaling,
) -> f64 {
    let ds = scaling.speed(relative_speed(ordinary, core));
    let dd = scaling.dist(relative_distance(ordinary, core));
    let base = (-ds * dd).exp();
    if tti > congestion_threshold {
        lambda * base
    } else {
        base
    }
}

/// Competitive threshold of a candidate core over the other members.
///
/// `Verbatim` is `lambda * mean distance`; `Centered` is
/// `lambda * exp(-mean scaled distance)`, which favours central candidates.
/// Either way the largest value wins.
pub fn competitive_threshold(
    candidate: &VehicleState,
    members: &[VehicleState],
    lambda: f64,
    mode: CompetitiveMode,
    scaling: Scaling,
) -> Result<f64, ThresholdError> {
    if members.is_empty() {
        return Err(ThresholdError::EmptyRegion);
    }
    let mean = members
        .iter()
        .map(|m| relative_distance(candidate, m))
        .sum::<f64>()
        / members.len() as f64;
    Ok(match mode {
        CompetitiveMode::Verbatim => lambda * mean,
        CompetitiveMode::Centered => lambda * (-scaling.dist(mean)).exp(),
    })
}

/// Aggregation threshold of a gateway hearing several cores: the
/// cooperative-threshold-weighted mean of `exp(-scaled distance)`.
pub fn aggregation_threshold(
    gateway: &VehicleState,
    cores: &[(VehicleState, f64)],
    scaling: Scaling,
) -> Result<f64, ThresholdError> {
    if cores.len() < 2 {
        return Err(ThresholdError::TooFewCores(cores.len()));
    }
    if cores.iter().any(|(_, t)| !(*t > 0.0)) {
        return Err(ThresholdError::NonPositiveWeight);
    }
    let (mut num, mut den) = (0.0, 0.0);
    for (core, tau) in cores {
        let eta = scaling.dist(relative_distance(gateway, core));
        num += (-eta).exp() * tau;
        den += tau;
    }
    Ok(num / den)
}

/// Decomposition value of a member relative to its core, in `[0, 1)`.
pub fn decomposition_value(core: &VehicleState, member: &VehicleState, scaling: Scaling) -> f64 {
    let dd = scaling.dist(relative_distance(core, member));
    let dv = scaling.speed(relative_speed(core, member));
    (1.0 - (-dd).exp()) / (1.0 + (-dv).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{VehicleId, Vec2};
    use proptest::prelude::*;

    fn st(x: f64, y: f64, vx: f64, vy: f64) -> VehicleState {
        VehicleState::new(VehicleId(0), Vec2::new(x, y), Vec2::new(vx, vy), 0.0)
    }

    #[test]
    fn cooperative_examples() {
        let u = Scaling::UNIT;
        let a = st(0.0, 0.0, 10.0, 0.0);
        assert_eq!(cooperative_threshold(&a, &a, 1.2, 1.0, 1.5, u), 1.0);
        assert_eq!(cooperative_threshold(&a, &a, 2.0, 0.5, 1.5, u), 0.5);
        let b = st(10.0, 0.0, 10.1, 0.0);
        let v = cooperative_threshold(&a, &b, 1.2, 0.3, 1.5, u);
        assert!((v - (-1.0f64).exp()).abs() < 1e-9);
        // the boundary belongs to the smooth branch
        assert_eq!(cooperative_threshold(&a, &a, 1.5, 0.5, 1.5, u), 1.0);
        // free flow as well
        assert_eq!(cooperative_threshold(&a, &a, 0.9, 0.5, 1.5, u), 1.0);
    }

    #[test]
    fn competitive_examples() {
        let u = Scaling::UNIT;
        let c = st(0.0, 0.0, 0.0, 0.0);
        assert_eq!(
            competitive_threshold(&c, &[c, c], 0.7, CompetitiveMode::Verbatim, u).unwrap(),
            0.0
        );
        let m = [st(10.0, 0.0, 0.0, 0.0), st(0.0, 30.0, 0.0, 0.0)];
        assert_eq!(
            competitive_threshold(&c, &m, 1.0, CompetitiveMode::Verbatim, u).unwrap(),
            20.0
        );
        assert_eq!(
            competitive_threshold(&c, &[], 1.0, CompetitiveMode::Verbatim, u),
            Err(ThresholdError::EmptyRegion)
        );
        let s = Scaling { distance: 100.0, speed: 1.0 };
        let v = competitive_threshold(&c, &m, 0.5, CompetitiveMode::Centered, s).unwrap();
        assert!((v - 0.5 * (-0.2f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn aggregation_examples() {
        let u = Scaling::UNIT;
        let g = st(0.0, 0.0, 0.0, 0.0);
        assert_eq!(aggregation_threshold(&g, &[(g, 0.4), (g, 0.9)], u).unwrap(), 1.0);
        let far = st(1e6, 0.0, 0.0, 0.0);
        assert_eq!(aggregation_threshold(&g, &[(g, 0.5), (far, 0.5)], u).unwrap(), 0.5);
        assert_eq!(
            aggregation_threshold(&g, &[(g, 0.5)], u),
            Err(ThresholdError::TooFewCores(1))
        );
        assert_eq!(
            aggregation_threshold(&g, &[(g, 0.5), (g, 0.0)], u),
            Err(ThresholdError::NonPositiveWeight)
        );
    }

    #[test]
    fn decomposition_examples() {
        let u = Scaling::UNIT;
        let a = st(0.0, 0.0, 5.0, 0.0);
        assert_eq!(decomposition_value(&a, &a, u), 0.0);
        let b = st(1.0, 0.0, 5.0, 0.0);
        let v = decomposition_value(&a, &b, u);
        assert!((v - (1.0 - (-1.0f64).exp()) / 2.0).abs() < 1e-15);
        assert!((v - 0.3161).abs() < 1e-4);
        let far = st(1e6, 0.0, 1e6, 0.0);
        assert!(decomposition_value(&a, &far, u) > 0.999);
    }

    fn arb() -> impl Strategy<Value = VehicleState> {
        (-500.0..500.0f64, -500.0..500.0f64, -30.0..30.0f64, -30.0..30.0f64)
            .prop_map(|(x, y, vx, vy)| st(x, y, vx, vy))
    }

    proptest! {
        #[test]
        fn cooperative_bounds_and_branch_order(a in arb(), b in arb(), tti in 0.5..3.0f64, lambda in 0.01..1.0f64) {
            let s = Scaling { distance: 250.0, speed: 30.0 };
            let v = cooperative_threshold(&a, &b, tti, lambda, 1.5, s);
            prop_assert!(v > 0.0 && v <= 1.0);
            let smooth = cooperative_threshold(&a, &b, 1.2, lambda, 1.5, s);
            let jam = cooperative_threshold(&a, &b, 2.0, lambda, 1.5, s);
            prop_assert!(jam <= smooth);
        }

        #[test]
        fn congested_argmax_ignores_common_lambda_scale(
            o in arb(), cores in proptest::collection::vec((arb(), 0.05..1.0f64), 2..6), k in 0.05..1.0f64,
        ) {
            let s = Scaling { distance: 250.0, speed: 30.0 };
            let pick = |scale: f64| {
                let mut best = (f64::NEG_INFINITY, 0);
                for (i, (c, l)) in cores.iter().enumerate() {
                    let t = cooperative_threshold(&o, c, 2.0, l * scale, 1.5, s);
                    if t > best.0 { best = (t, i); }
                }
                best.1
            };
            prop_assert_eq!(pick(1.0), pick(k));
        }

        #[test]
        fn aggregation_is_convex_combination(g in arb(), cores in proptest::collection::vec((arb(), 0.01..1.0f64), 2..6)) {
            let s = Scaling { distance: 250.0, speed: 30.0 };
            let v = aggregation_threshold(&g, &cores, s).unwrap();
            let e: Vec<f64> = cores.iter().map(|(c, _)| (-s.dist(relative_distance(&g, c))).exp()).collect();
            let lo = e.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = e.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
        }

        #[test]
        fn decomposition_monotone(a in arb(), d1 in 0.0..800.0f64, d2 in 0.0..800.0f64, v in 0.0..40.0f64) {
            let s = Scaling { distance: 250.0, speed: 30.0 };
            let m1 = st(a.position.x + d1.min(d2), a.position.y, a.speed.x + v, a.speed.y);
            let m2 = st(a.position.x + d1.max(d2), a.position.y, a.speed.x + v, a.speed.y);
            let (p1, p2) = (decomposition_value(&a, &m1, s), decomposition_value(&a, &m2, s));
            prop_assert!((0.0..1.0).contains(&p1) && (0.0..1.0).contains(&p2));
            prop_assert!(p1 <= p2);
        }
    }
}
