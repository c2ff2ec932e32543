//! Joint hover-duration and power allocation along a fixed hover-and-fly
//! trajectory, plus the two benchmark schemes.

mod benchmarks;
pub(crate) mod program;

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

pub use benchmarks::{benchmark_equal_power, benchmark_static, StaticHover};
pub use program::KktReport;

use crate::channel::{self, UavPosition};
use crate::error::{PlanError, Result};
use crate::flightplan::{FlightPlan, Schedule};
use crate::scenario::Scenario;
use program::{BarrierSettings, JointProblem};

/// Largest flight slot used when no slot count is given, seconds.
pub const DEFAULT_MAX_SLOT: f64 = 0.5;

/// Flight slot count giving slots no longer than `max_slot`.
pub fn default_slot_count(fly_time: f64, max_slot: f64) -> usize {
    if fly_time <= 0.0 {
        0
    } else {
        (fly_time / max_slot).ceil().max(1.0) as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscretizedFlight {
    pub slots: usize,
    /// Slot length, seconds.
    pub delta_t: f64,
    /// Position at each slot's midpoint.
    pub slot_positions: Vec<UavPosition>,
    /// Hover locations in visiting order.
    pub hover_positions: Vec<UavPosition>,
    /// `gamma0 / d^2` from each hover location, `[user][stop]`, 1/W.
    pub hover_gains: Vec<Vec<f64>>,
    /// `gamma0 / d^2` from each slot position, `[user][slot]`, 1/W.
    pub slot_gains: Vec<Vec<f64>>,
}

/// Splits the flight into `slots` equal slots and tabulates channel gains.
pub fn discretize(flight: &FlightPlan, scenario: &Scenario, slots: usize) -> Result<DiscretizedFlight> {
    if flight.fly_time > 0.0 && slots == 0 {
        return Err(PlanError::InvalidArgument(
            "at least one flight slot is needed when the flight takes time".into(),
        ));
    }
    let slots = if flight.fly_time > 0.0 { slots } else { 0 };
    let delta_t = if slots > 0 { flight.fly_time / slots as f64 } else { 0.0 };
    let slot_positions: Vec<UavPosition> = (0..slots)
        .map(|j| flight.flight_position((j as f64 + 0.5) * delta_t))
        .collect();
    let hover_positions = flight.stops();
    let gains = |positions: &[UavPosition]| -> Vec<Vec<f64>> {
        let per_pos: Vec<Vec<f64>> = positions.iter().map(|p| channel::channel_gains(p, scenario)).collect();
        (0..scenario.num_users())
            .map(|k| per_pos.iter().map(|g| g[k]).collect())
            .collect()
    };
    Ok(DiscretizedFlight {
        slots,
        delta_t,
        hover_gains: gains(&hover_positions),
        slot_gains: gains(&slot_positions),
        slot_positions,
        hover_positions,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationSolution {
    /// Hover durations in visiting order, seconds.
    pub tau_hover: Vec<f64>,
    /// Hover energies, Joules.
    pub energy_hover: Vec<f64>,
    /// Hover powers, Watts.
    pub power_hover: Vec<f64>,
    /// Flight slot powers, Watts.
    pub power_fly: Vec<f64>,
    pub delta_t: f64,
    /// Achieved min average rate, bps/Hz.
    pub eta: f64,
    pub per_user_rate: Vec<f64>,
    pub kkt_residual: f64,
    pub kkt: KktReport,
    /// Multiplier of the energy budget, normalized per unit of `P_ave * T`.
    pub energy_multiplier: f64,
    pub converged: bool,
}

impl AllocationSolution {
    pub fn total_energy(&self) -> f64 {
        self.energy_hover.iter().sum::<f64>() + self.delta_t * self.power_fly.iter().sum::<f64>()
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| PlanError::Parse(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<AllocationSolution> {
        toml::from_str(text).map_err(|e| PlanError::Parse(e.to_string()))
    }
}

/// Bits per Hz delivered by hovering `duration` seconds with `energy`
/// Joules at channel gain `gain` (1/W): `tau * log2(1 + gain * E / tau)`.
/// Jointly concave in `(duration, energy)`; zero when `duration` is zero.
pub fn perspective_rate(gain: f64, duration: f64, energy: f64) -> f64 {
    if duration > 0.0 {
        duration * (gain * energy / duration).ln_1p() / LN_2
    } else {
        0.0
    }
}

/// Per-user average rates of an allocation, from the tabulated gains.
pub(crate) fn average_rates(
    disc: &DiscretizedFlight,
    tau: &[f64],
    energy: &[f64],
    power_fly: &[f64],
    period: f64,
) -> Vec<f64> {
    disc.hover_gains
        .iter()
        .zip(&disc.slot_gains)
        .map(|(hg, sg)| {
            let mut bits = 0.0;
            for phi in 0..tau.len() {
                bits += perspective_rate(hg[phi], tau[phi], energy[phi]);
            }
            for j in 0..power_fly.len() {
                bits += perspective_rate(sg[j], disc.delta_t, disc.delta_t * power_fly[j]);
            }
            bits / period
        })
        .collect()
}

fn check_inputs(disc: &DiscretizedFlight, flight: &FlightPlan, scenario: &Scenario) -> Result<()> {
    scenario.ensure_valid()?;
    if scenario.period < flight.fly_time {
        return Err(PlanError::PeriodTooShort {
            period_s: scenario.period,
            fly_time_s: flight.fly_time,
        });
    }
    if disc.hover_positions.len() != flight.gamma() || disc.hover_gains.len() != scenario.num_users() {
        return Err(PlanError::Mismatch(
            "discretization does not belong to this flight plan and scenario".into(),
        ));
    }
    Ok(())
}

/// Optimizes hover durations, hover energies and flight powers jointly.
///
/// `tol` bounds the reported KKT residual; the solution is flagged as not
/// converged when the residual exceeds it.
pub fn optimize_joint(
    disc: &DiscretizedFlight,
    flight: &FlightPlan,
    scenario: &Scenario,
    tol: f64,
) -> Result<AllocationSolution> {
    check_inputs(disc, flight, scenario)?;
    if !(tol > 0.0) {
        return Err(PlanError::InvalidArgument("tolerance must be positive".into()));
    }
    let period = scenario.period;
    let hover_total = (period - flight.fly_time).max(0.0);
    let problem = JointProblem {
        hover_gains: disc.hover_gains.clone(),
        slot_gains: disc.slot_gains.clone(),
        hover_share: hover_total / period,
        slot_share: disc.delta_t / period,
        power_ave: scenario.power_ave,
    };
    let opt = problem.solve(&BarrierSettings::default());

    let gamma = flight.gamma();
    let mut tau = vec![0.0; gamma];
    let mut energy = vec![0.0; gamma];
    if !opt.hover_time.is_empty() {
        let total: f64 = opt.hover_time.iter().sum();
        for phi in 0..gamma {
            tau[phi] = opt.hover_time[phi] / total * hover_total;
            energy[phi] = opt.hover_energy[phi] * period;
        }
    }
    let power_fly = opt.slot_power.clone();
    let mut sol = assemble(disc, tau, energy, power_fly, period, scenario.power_ave);
    sol.kkt = opt.kkt;
    sol.kkt_residual = opt.kkt.max();
    sol.energy_multiplier = opt.energy_dual;
    sol.converged = opt.converged && sol.kkt_residual <= tol;
    Ok(sol)
}

/// Builds a solution from raw fields, trimming round-off so the energy
/// budget holds and recomputing the min rate.
pub(crate) fn assemble(
    disc: &DiscretizedFlight,
    tau: Vec<f64>,
    mut energy: Vec<f64>,
    mut power_fly: Vec<f64>,
    period: f64,
    power_ave: f64,
) -> AllocationSolution {
    let budget = period * power_ave;
    let used = energy.iter().sum::<f64>() + disc.delta_t * power_fly.iter().sum::<f64>();
    if used > budget && used > 0.0 {
        let scale = budget / used;
        energy.iter_mut().for_each(|e| *e *= scale);
        power_fly.iter_mut().for_each(|p| *p *= scale);
    }
    let power_hover: Vec<f64> = tau
        .iter()
        .zip(&energy)
        .map(|(&t, &e)| if t > 0.0 { e / t } else { 0.0 })
        .collect();
    let per_user_rate = average_rates(disc, &tau, &energy, &power_fly, period);
    let eta = per_user_rate.iter().copied().fold(f64::INFINITY, f64::min);
    AllocationSolution {
        tau_hover: tau,
        energy_hover: energy,
        power_hover,
        power_fly,
        delta_t: disc.delta_t,
        eta,
        per_user_rate,
        kkt_residual: 0.0,
        kkt: KktReport::default(),
        energy_multiplier: 0.0,
        converged: true,
    }
}

/// Hover-only joint program at fixed locations with the whole period to
/// share. Time shares and energies are per second of mission.
pub(crate) fn optimize_hover_only(locations: &[UavPosition], scenario: &Scenario) -> program::JointOptimum {
    let per_loc: Vec<Vec<f64>> = locations.iter().map(|p| channel::channel_gains(p, scenario)).collect();
    let hover_gains: Vec<Vec<f64>> = (0..scenario.num_users())
        .map(|k| per_loc.iter().map(|g| g[k]).collect())
        .collect();
    let problem = JointProblem {
        slot_gains: vec![Vec::new(); hover_gains.len()],
        hover_gains,
        hover_share: 1.0,
        slot_share: 0.0,
        power_ave: scenario.power_ave,
    };
    problem.solve(&BarrierSettings::default())
}

/// `(t, x, y, p)` rows at every sub-period boundary and flight slot midpoint.
pub fn power_schedule(
    schedule: &Schedule,
    flight: &FlightPlan,
    disc: &DiscretizedFlight,
    sol: &AllocationSolution,
) -> Vec<[f64; 4]> {
    use crate::flightplan::Phase;
    let mut rows = Vec::new();
    let mut slot = 0usize;
    for sp in &schedule.sub_periods {
        match sp.phase {
            Phase::Hover { stop } => {
                if sp.end > sp.start {
                    let p = flight.stops()[stop];
                    rows.push([sp.start, p.x, p.y, sol.power_hover[stop]]);
                }
            }
            Phase::Fly { .. } => {
                let seg_slots = ((sp.end - sp.start) / disc.delta_t).round() as usize;
                for i in 0..seg_slots {
                    if slot >= disc.slots {
                        break;
                    }
                    let t = sp.start + (i as f64 + 0.5) * disc.delta_t;
                    let pos = disc.slot_positions[slot];
                    rows.push([t, pos.x, pos.y, sol.power_fly[slot]]);
                    slot += 1;
                }
            }
        }
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
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
    fn midpoint_slots() {
        let s = scenario(vec![Point::new(0.0, 0.0)], 100.0);
        let f = build_flightplan(&[Point::new(0.0, 0.0), Point::new(400.0, 0.0)], &s).unwrap();
        let d = discretize(&f, &s, 4).unwrap();
        let xs: Vec<f64> = d.slot_positions.iter().map(|p| p.x).collect();
        assert_eq!(xs, vec![50.0, 150.0, 250.0, 350.0]);
        assert_eq!(d.delta_t * 4.0, f.fly_time);
        assert_eq!(d.hover_gains[0][0], 10.0);
    }

    #[test]
    fn no_flight_no_slots() {
        let s = scenario(vec![Point::new(0.0, 0.0)], 100.0);
        let f = build_flightplan(&[Point::new(0.0, 0.0)], &s).unwrap();
        let d = discretize(&f, &s, 0).unwrap();
        assert_eq!(d.slots, 0);
        assert!(d.slot_gains[0].is_empty());
        assert_eq!(default_slot_count(0.0, 0.5), 0);
        assert_eq!(default_slot_count(20.0, 0.5), 40);
        assert_eq!(default_slot_count(20.1, 0.5), 41);
    }

    #[test]
    fn zero_slots_rejected_with_flight() {
        let s = scenario(vec![Point::new(0.0, 0.0)], 100.0);
        let f = build_flightplan(&[Point::new(0.0, 0.0), Point::new(400.0, 0.0)], &s).unwrap();
        assert!(discretize(&f, &s, 0).is_err());
    }

    #[test]
    fn single_hover_uses_constant_power() {
        let s = scenario(vec![Point::new(0.0, 0.0), Point::new(300.0, 0.0)], 50.0);
        let f = build_flightplan(&[Point::new(100.0, 0.0)], &s).unwrap();
        let d = discretize(&f, &s, 0).unwrap();
        let sol = optimize_joint(&d, &f, &s, 1e-6).unwrap();
        let expected = channel::min_rate(&Point::new(100.0, 0.0), 1.0, &s).unwrap();
        assert!((sol.eta - expected).abs() < 1e-8);
        assert!((sol.power_hover[0] - 1.0).abs() < 1e-6);
        assert!(sol.kkt_residual <= 1e-6);
    }

    #[test]
    fn period_equal_to_flight_time() {
        let s = scenario(vec![Point::new(0.0, 0.0), Point::new(400.0, 0.0)], 20.0);
        let f = build_flightplan(&[Point::new(0.0, 0.0), Point::new(400.0, 0.0)], &s).unwrap();
        let d = discretize(&f, &s, 40).unwrap();
        let sol = optimize_joint(&d, &f, &s, 1e-6).unwrap();
        assert!(sol.tau_hover.iter().all(|&t| t == 0.0));
        assert!(sol.total_energy() <= s.period * s.power_ave * (1.0 + 1e-9));
        assert!(sol.eta > 0.0);
    }

    #[test]
    fn symmetric_users_get_symmetric_allocation() {
        let s = scenario(vec![Point::new(-500.0, 0.0), Point::new(500.0, 0.0)], 200.0);
        let stops = [Point::new(-500.0, 0.0), Point::new(500.0, 0.0)];
        let f = build_flightplan(&stops, &s).unwrap();
        let d = discretize(&f, &s, 100).unwrap();
        let sol = optimize_joint(&d, &f, &s, 1e-6).unwrap();
        assert!((sol.tau_hover[0] - sol.tau_hover[1]).abs() < 1e-5);
        assert!((sol.energy_hover[0] - sol.energy_hover[1]).abs() < 1e-5);
        let sum: f64 = sol.tau_hover.iter().sum();
        assert!((sum - (s.period - f.fly_time)).abs() < 1e-9 * s.period);
        assert!((sol.per_user_rate[0] - sol.per_user_rate[1]).abs() < 1e-6);
    }
}
