use serde::{Deserialize, Serialize};

use super::{assemble, check_inputs, AllocationSolution, DiscretizedFlight};
use crate::channel::{self, UavPosition};
use crate::error::{PlanError, Result};
use crate::flightplan::FlightPlan;
use crate::lp;
use crate::scenario::Scenario;
use crate::search::{search_peaks, GridSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StaticHover {
    pub position: UavPosition,
    /// Constant transmit power, Watts.
    pub power: f64,
    pub eta: f64,
}

impl StaticHover {
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| PlanError::Parse(e.to_string()))
    }
}

/// Best single hovering location at constant power `P_ave`.
pub fn benchmark_static(scenario: &Scenario, grid: &GridSpec) -> Result<StaticHover> {
    scenario.ensure_valid()?;
    grid.validate()?;
    let bbox = scenario.user_bounding_box();
    let power = scenario.power_ave;
    let gamma0 = scenario.gamma0();
    let h2 = scenario.altitude_sq();
    let peaks = search_peaks(&bbox, grid, grid.merge_radius(&bbox), |p| {
        let worst = scenario
            .users
            .iter()
            .map(|u| channel::log2_1p(gamma0 * power / channel::sq_dist(&p, u, h2)))
            .fold(f64::INFINITY, f64::min);
        (worst, ())
    });
    let position = peaks[0].point;
    Ok(StaticHover {
        position,
        power,
        eta: channel::min_rate(&position, power, scenario)?,
    })
}

/// Hover-and-fly with every power fixed at `P_ave`; only the hover
/// durations are optimized, which is a linear program.
pub fn benchmark_equal_power(
    flight: &FlightPlan,
    disc: &DiscretizedFlight,
    scenario: &Scenario,
) -> Result<AllocationSolution> {
    check_inputs(disc, flight, scenario)?;
    let period = scenario.period;
    let p = scenario.power_ave;
    let hover_total = (period - flight.fly_time).max(0.0);
    let share = hover_total / period;
    let gamma = flight.gamma();
    let users = scenario.num_users();

    // Variables: time shares w (gamma), then eta.
    let mut a = Vec::with_capacity(users + 1);
    let mut b = Vec::with_capacity(users + 1);
    for k in 0..users {
        let mut row: Vec<f64> = (0..gamma)
            .map(|phi| -channel::log2_1p(disc.hover_gains[k][phi] * p))
            .collect();
        row.push(1.0);
        a.push(row);
        let flight_bits: f64 = disc.slot_gains[k].iter().map(|g| channel::log2_1p(g * p)).sum();
        b.push(disc.delta_t / period * flight_bits);
    }
    let mut share_row = vec![1.0; gamma];
    share_row.push(0.0);
    a.push(share_row);
    b.push(share);
    let mut c = vec![0.0; gamma];
    c.push(1.0);
    let sol = lp::maximize(&a, &b, &c).map_err(|e| match e {
        PlanError::Unbounded => PlanError::InvalidArgument("equal-power program is unbounded".into()),
        other => other,
    })?;

    // Rates are non-negative, so stretching the shares to fill the hover
    // time never lowers any user's rate.
    let mut w: Vec<f64> = sol.x[..gamma].iter().map(|v| v.max(0.0)).collect();
    let used: f64 = w.iter().sum();
    if used > 0.0 {
        w.iter_mut().for_each(|v| *v *= share / used);
    } else if gamma > 0 {
        w[0] = share;
    }
    let tau: Vec<f64> = w.iter().map(|v| v * period).collect();
    let energy: Vec<f64> = tau.iter().map(|t| t * p).collect();
    let power_fly = vec![p; disc.slots];
    Ok(assemble(disc, tau, energy, power_fly, period, p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alloc::{discretize, optimize_joint};
    use crate::flightplan::build_flightplan;
    use crate::scenario::Point;

    fn scenario(users: Vec<Point>, period: f64) -> Scenario {
        Scenario {
            users,
            altitude: 100.0,
            period,
            max_speed: 20.0,
            power_ave: 1.0,
            beta0: 1e-3,
            noise_power: 1e-8,
        }
    }

    #[test]
    fn static_single_user_overhead() {
        let s = scenario(vec![Point::new(300.0, 700.0)], 100.0);
        let st = benchmark_static(&s, &GridSpec::default()).unwrap();
        assert_eq!(st.position, Point::new(300.0, 700.0));
        assert!((st.eta - 11f64.log2()).abs() < 1e-12);
    }

    #[test]
    fn static_two_users_midpoint() {
        let s = scenario(vec![Point::new(-500.0, 0.0), Point::new(500.0, 0.0)], 100.0);
        let st = benchmark_static(&s, &GridSpec::default()).unwrap();
        assert!(st.position.x.abs() < 1e-9, "{}", st.position);
        assert_eq!(st.position.y, 0.0);
        assert!((st.eta - (1.0 + 1e5 / 260000.0f64).log2()).abs() < 1e-9);
    }

    #[test]
    fn equal_power_single_location_matches_static() {
        let s = scenario(vec![Point::new(0.0, 0.0), Point::new(300.0, 0.0)], 100.0);
        let at = Point::new(150.0, 0.0);
        let f = build_flightplan(&[at], &s).unwrap();
        let d = discretize(&f, &s, 0).unwrap();
        let eq = benchmark_equal_power(&f, &d, &s).unwrap();
        let expected = channel::min_rate(&at, 1.0, &s).unwrap();
        assert!((eq.eta - expected).abs() < 1e-12);
        assert_eq!(eq.tau_hover, vec![100.0]);
    }

    #[test]
    fn equal_power_symmetric_and_below_joint() {
        let s = scenario(vec![Point::new(-500.0, 0.0), Point::new(500.0, 0.0)], 200.0);
        let stops = [Point::new(-500.0, 0.0), Point::new(500.0, 0.0)];
        let f = build_flightplan(&stops, &s).unwrap();
        let d = discretize(&f, &s, 100).unwrap();
        let eq = benchmark_equal_power(&f, &d, &s).unwrap();
        assert!((eq.tau_hover[0] - eq.tau_hover[1]).abs() < 1e-9);
        let joint = optimize_joint(&d, &f, &s, 1e-6).unwrap();
        assert!(eq.eta <= joint.eta + 1e-8);
        assert!(eq.total_energy() <= s.period * (1.0 + 1e-12));
    }
}
