//! Line-of-sight link budget and achievable rates.
//!
//! The received SNR from a transmitter hovering at `(x, y, H)` to user `k` is
//! `gamma0 * p / d_k^2` with `d_k^2 = (x - x_k)^2 + (y - y_k)^2 + H^2`, and
//! the rate is `log2(1 + SNR)` in bps/Hz.

use std::f64::consts::LN_2;

use crate::error::{PlanError, Result};
use crate::scenario::{Point, Scenario};

/// Horizontal transmitter position; the altitude comes from the scenario.
pub type UavPosition = Point;

/// Per-user instantaneous rates, bps/Hz.
#[derive(Debug, Clone, PartialEq)]
pub struct RateSample {
    pub per_user_rate: Vec<f64>,
}

impl RateSample {
    pub fn min(&self) -> f64 {
        self.per_user_rate.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// `log2(1 + snr)`.
#[inline]
pub fn log2_1p(snr: f64) -> f64 {
    snr.ln_1p() / LN_2
}

#[inline]
pub(crate) fn sq_dist(pos: &UavPosition, user: &Point, altitude_sq: f64) -> f64 {
    let dx = pos.x - user.x;
    let dy = pos.y - user.y;
    dx * dx + dy * dy + altitude_sq
}

pub fn squared_distance(pos: &UavPosition, user_index: usize, scenario: &Scenario) -> Result<f64> {
    let user = scenario.users.get(user_index).ok_or(PlanError::UserIndex {
        index: user_index,
        count: scenario.users.len(),
    })?;
    Ok(sq_dist(pos, user, scenario.altitude_sq()))
}

fn check_power(power: f64) -> Result<()> {
    if power >= 0.0 && power.is_finite() {
        Ok(())
    } else {
        Err(PlanError::InvalidArgument(format!(
            "transmit power must be finite and non-negative, got {power}"
        )))
    }
}

pub fn rate(pos: &UavPosition, power: f64, user_index: usize, scenario: &Scenario) -> Result<f64> {
    check_power(power)?;
    let d2 = squared_distance(pos, user_index, scenario)?;
    Ok(log2_1p(scenario.gamma0() * power / d2))
}

/// Multicast rate: the worst user's rate.
pub fn min_rate(pos: &UavPosition, power: f64, scenario: &Scenario) -> Result<f64> {
    Ok(rates(pos, power, scenario)?.min())
}

pub fn rates(pos: &UavPosition, power: f64, scenario: &Scenario) -> Result<RateSample> {
    check_power(power)?;
    let per_user_rate = channel_gains(pos, scenario)
        .into_iter()
        .map(|g| log2_1p(g * power))
        .collect();
    Ok(RateSample { per_user_rate })
}

/// `gamma0 / d_k^2` for every user, per Watt.
pub fn channel_gains(pos: &UavPosition, scenario: &Scenario) -> Vec<f64> {
    let gamma0 = scenario.gamma0();
    let h2 = scenario.altitude_sq();
    scenario
        .users
        .iter()
        .map(|u| gamma0 / sq_dist(pos, u, h2))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{generate_random, ScenarioDefaults};
    use proptest::prelude::*;

    fn scenario(users: Vec<Point>, altitude: f64) -> Scenario {
        let mut s = generate_random(0, 1, (1.0, 1.0), &ScenarioDefaults::default()).unwrap();
        s.users = users;
        s.altitude = altitude;
        s
    }

    #[test]
    fn overhead_distance() {
        let s = scenario(vec![Point::new(0.0, 0.0)], 100.0);
        assert_eq!(squared_distance(&Point::new(0.0, 0.0), 0, &s).unwrap(), 10_000.0);
    }

    #[test]
    fn ground_level_distance() {
        let s = scenario(vec![Point::new(0.0, 0.0)], 0.0);
        assert_eq!(squared_distance(&Point::new(300.0, 400.0), 0, &s).unwrap(), 250_000.0);
    }

    #[test]
    fn offset_distance() {
        let s = scenario(vec![Point::new(1000.0, 0.0)], 100.0);
        assert_eq!(squared_distance(&Point::new(0.0, 0.0), 0, &s).unwrap(), 1_010_000.0);
    }

    #[test]
    fn distance_index_out_of_range() {
        let s = scenario(vec![Point::new(0.0, 0.0)], 100.0);
        assert!(matches!(
            squared_distance(&Point::new(0.0, 0.0), 3, &s),
            Err(PlanError::UserIndex { index: 3, count: 1 })
        ));
    }

    #[test]
    fn overhead_rate() {
        let s = scenario(vec![Point::new(0.0, 0.0)], 100.0);
        let r = rate(&Point::new(0.0, 0.0), 1.0, 0, &s).unwrap();
        assert!((r - 11f64.log2()).abs() < 1e-9);
        assert!((r - 3.4594).abs() < 1e-4);
        assert_eq!(rate(&Point::new(0.0, 0.0), 0.0, 0, &s).unwrap(), 0.0);
    }

    #[test]
    fn far_rate() {
        let s = scenario(vec![Point::new(1000.0, 0.0)], 100.0);
        let r = rate(&Point::new(0.0, 0.0), 1.0, 0, &s).unwrap();
        assert!((r - (1.0 + 1e5 / 1.01e6f64).log2()).abs() < 1e-9);
        assert!((r - 0.1362).abs() < 1e-4);
    }

    #[test]
    fn negative_power_rejected() {
        let s = scenario(vec![Point::new(0.0, 0.0)], 100.0);
        assert!(rate(&Point::new(0.0, 0.0), -1.0, 0, &s).is_err());
        assert!(min_rate(&Point::new(0.0, 0.0), -1.0, &s).is_err());
    }

    #[test]
    fn min_rate_examples() {
        let one = scenario(vec![Point::new(0.0, 0.0)], 100.0);
        assert!((min_rate(&Point::new(0.0, 0.0), 1.0, &one).unwrap() - 3.4594).abs() < 1e-4);

        let two = scenario(vec![Point::new(-500.0, 0.0), Point::new(500.0, 0.0)], 100.0);
        let r = min_rate(&Point::new(0.0, 0.0), 1.0, &two).unwrap();
        assert!((r - (1.0 + 1e5 / 260_000.0f64).log2()).abs() < 1e-9);
        assert!((r - 0.4695).abs() < 1e-4);
        assert_eq!(min_rate(&Point::new(0.0, 0.0), 0.0, &two).unwrap(), 0.0);
    }

    proptest! {
        #[test]
        fn rate_concave_and_increasing_in_power(
            x in -1000.0..1000.0f64, y in -1000.0..1000.0f64,
            p1 in 0.0..10.0f64, p2 in 0.0..10.0f64,
        ) {
            let s = scenario(vec![Point::new(0.0, 0.0)], 100.0);
            let pos = Point::new(x, y);
            let r1 = rate(&pos, p1, 0, &s).unwrap();
            let r2 = rate(&pos, p2, 0, &s).unwrap();
            let mid = rate(&pos, 0.5 * (p1 + p2), 0, &s).unwrap();
            prop_assert!(mid >= 0.5 * (r1 + r2) - 1e-12 * mid.abs().max(1e-300));
            if p1 < p2 {
                prop_assert!(r1 < r2);
            }
        }

        #[test]
        fn rate_nonincreasing_in_distance(d1 in 0.0..2000.0f64, d2 in 0.0..2000.0f64, p in 0.0..5.0f64) {
            let s = scenario(vec![Point::new(0.0, 0.0)], 100.0);
            let (near, far) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
            let rn = rate(&Point::new(near, 0.0), p, 0, &s).unwrap();
            let rf = rate(&Point::new(far, 0.0), p, 0, &s).unwrap();
            prop_assert!(rn >= rf);
        }

        #[test]
        fn rates_translation_equivariant(
            ux in -500.0..500.0f64, uy in -500.0..500.0f64,
            x in -500.0..500.0f64, y in -500.0..500.0f64,
            dx in -1024.0..1024.0f64, dy in -1024.0..1024.0f64,
        ) {
            // Offsets are exact in binary so the comparison can be exact.
            let dx = dx.round();
            let dy = dy.round();
            let ux = ux.round();
            let uy = uy.round();
            let x = x.round();
            let y = y.round();
            let s = scenario(vec![Point::new(ux, uy)], 100.0);
            let moved = s.translated(dx, dy);
            let a = rate(&Point::new(x, y), 1.0, 0, &s).unwrap();
            let b = rate(&Point::new(x + dx, y + dy), 1.0, 0, &moved).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
