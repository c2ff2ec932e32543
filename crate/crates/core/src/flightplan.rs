//! Successive hover-and-fly trajectories.
//!
//! The hovering locations are visited once each along the shortest open
//! path, flying straight lines at the maximum speed between them. The
//! mission period is split into `2 * Gamma - 1` sub-periods: odd ones (1st,
//! 3rd, ...) hover at the next location in visiting order, even ones fly to
//! the following location.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::channel::UavPosition;
use crate::error::{PlanError, Result};
use crate::scenario::Scenario;
use crate::tsp;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlightSegment {
    pub from: UavPosition,
    pub to: UavPosition,
    /// Meters.
    pub length: f64,
    /// Seconds at maximum speed.
    pub duration: f64,
}

impl FlightSegment {
    /// Position after flying for `elapsed` seconds along the segment.
    pub fn position_after(&self, elapsed: f64) -> UavPosition {
        if self.duration <= 0.0 || elapsed >= self.duration {
            return self.to;
        }
        if elapsed <= 0.0 {
            return self.from;
        }
        let f = elapsed / self.duration;
        UavPosition::new(
            self.from.x + f * (self.to.x - self.from.x),
            self.from.y + f * (self.to.y - self.from.y),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlightPlan {
    /// Hovering locations in input order.
    pub locations: Vec<UavPosition>,
    /// Visiting order: `order[i]` is the index of the i-th visited location.
    pub order: Vec<usize>,
    pub distances: Vec<Vec<f64>>,
    /// Total flying distance `D`, meters.
    pub total_distance: f64,
    /// Total flying time `D / V`, seconds.
    pub fly_time: f64,
    pub speed: f64,
    /// One straight segment per consecutive pair in visiting order.
    pub segments: Vec<FlightSegment>,
    /// Set when the visiting order comes from the TSP heuristic.
    pub heuristic_order: bool,
}

impl FlightPlan {
    pub fn gamma(&self) -> usize {
        self.locations.len()
    }

    /// Hovering locations in visiting order.
    pub fn stops(&self) -> Vec<UavPosition> {
        self.order.iter().map(|&i| self.locations[i]).collect()
    }

    /// Position after `s` seconds of cumulative flying time, ignoring hovers.
    pub fn flight_position(&self, s: f64) -> UavPosition {
        let mut remaining = s;
        for seg in &self.segments {
            if remaining <= seg.duration {
                return seg.position_after(remaining);
            }
            remaining -= seg.duration;
        }
        self.segments
            .last()
            .map(|seg| seg.to)
            .unwrap_or_else(|| self.locations[self.order[0]])
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| PlanError::Parse(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<FlightPlan> {
        toml::from_str(text).map_err(|e| PlanError::Parse(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<FlightPlan> {
        FlightPlan::from_toml(&std::fs::read_to_string(path)?)
    }
}

/// Shortest open visiting order and its length; thin wrapper over
/// [`tsp::solve_open_tsp`].
pub fn solve_open_tsp(locations: &[UavPosition]) -> Result<(Vec<usize>, f64)> {
    let path = tsp::solve_open_tsp(locations)?;
    Ok((path.order, path.length))
}

/// Orders the hovering locations and lays out constant-speed straight
/// flights between them. Fails when the scenario's period cannot cover the
/// flying time.
pub fn build_flightplan(hover_locations: &[UavPosition], scenario: &Scenario) -> Result<FlightPlan> {
    let plan = build_flightplan_unchecked(hover_locations, scenario.max_speed)?;
    if scenario.period < plan.fly_time {
        return Err(PlanError::PeriodTooShort {
            period_s: scenario.period,
            fly_time_s: plan.fly_time,
        });
    }
    Ok(plan)
}

/// Same as [`build_flightplan`] without the period check.
pub fn build_flightplan_unchecked(hover_locations: &[UavPosition], speed: f64) -> Result<FlightPlan> {
    if !(speed > 0.0) {
        return Err(PlanError::InvalidArgument("speed must be positive".into()));
    }
    let path = tsp::solve_open_tsp(hover_locations)?;
    let distances = tsp::distance_matrix(hover_locations);
    let segments: Vec<FlightSegment> = path
        .order
        .windows(2)
        .map(|w| {
            let length = distances[w[0]][w[1]];
            FlightSegment {
                from: hover_locations[w[0]],
                to: hover_locations[w[1]],
                length,
                duration: length / speed,
            }
        })
        .collect();
    let total_distance = segments.iter().map(|s| s.length).sum::<f64>() + 0.0;
    Ok(FlightPlan {
        locations: hover_locations.to_vec(),
        order: path.order,
        distances,
        total_distance,
        fly_time: total_distance / speed,
        speed,
        segments,
        heuristic_order: path.heuristic,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Phase {
    /// Hovering at the `stop`-th location in visiting order.
    Hover { stop: usize },
    /// Flying along the `segment`-th segment.
    Fly { segment: usize },
}

/// Half-open interval `(start, end]` of the mission period.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubPeriod {
    pub start: f64,
    pub end: f64,
    pub phase: Phase,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub period: f64,
    /// Hover durations in visiting order, seconds.
    pub hover_durations: Vec<f64>,
    pub sub_periods: Vec<SubPeriod>,
}

/// Lays the hover durations (visiting order) and the flights on the
/// mission timeline.
pub fn build_schedule(flight: &FlightPlan, hover_durations: &[f64], period: f64) -> Result<Schedule> {
    let gamma = flight.gamma();
    if hover_durations.len() != gamma {
        return Err(PlanError::Mismatch(format!(
            "{} hover durations for {} locations",
            hover_durations.len(),
            gamma
        )));
    }
    if hover_durations.iter().any(|&d| !(d >= 0.0)) {
        return Err(PlanError::InvalidArgument("hover durations must be non-negative".into()));
    }
    let hover_total: f64 = hover_durations.iter().sum();
    if (hover_total + flight.fly_time - period).abs() > 1e-9 * period.max(1.0) {
        return Err(PlanError::Mismatch(format!(
            "hover time {hover_total} s plus flying time {} s does not fill the period {period} s",
            flight.fly_time
        )));
    }
    let mut sub_periods = Vec::with_capacity(2 * gamma - 1);
    let mut clock = 0.0;
    for (stop, &d) in hover_durations.iter().enumerate() {
        let end = clock + d;
        sub_periods.push(SubPeriod { start: clock, end, phase: Phase::Hover { stop } });
        clock = end;
        if let Some(seg) = flight.segments.get(stop) {
            let end = clock + seg.duration;
            sub_periods.push(SubPeriod { start: clock, end, phase: Phase::Fly { segment: stop } });
            clock = end;
        }
    }
    // Absorb round-off so the last interval ends exactly at T.
    if let Some(last) = sub_periods.last_mut() {
        last.end = period;
    }
    Ok(Schedule {
        period,
        hover_durations: hover_durations.to_vec(),
        sub_periods,
    })
}

/// Transmitter position at time `t` in `(0, T]`.
pub fn position_at(schedule: &Schedule, flight: &FlightPlan, t: f64) -> Result<UavPosition> {
    if !(t > 0.0 && t <= schedule.period) {
        return Err(PlanError::TimeOutOfRange { t, period: schedule.period });
    }
    // First sub-period whose end is not before t; zero-length ones are skipped.
    let idx = schedule.sub_periods.partition_point(|sp| sp.end < t);
    let sp = schedule.sub_periods[idx.min(schedule.sub_periods.len() - 1)];
    let stops = flight.stops();
    Ok(match sp.phase {
        Phase::Hover { stop } => stops[stop],
        Phase::Fly { segment } => flight.segments[segment].position_after(t - sp.start),
    })
}

/// `(t, x, y)` samples at `t = step, 2 step, ..., T`.
pub fn sample_trajectory(schedule: &Schedule, flight: &FlightPlan, step: f64) -> Result<Vec<(f64, UavPosition)>> {
    if !(step > 0.0) {
        return Err(PlanError::InvalidArgument("sampling step must be positive".into()));
    }
    let count = (schedule.period / step).ceil() as usize;
    (1..=count)
        .map(|i| {
            let t = (i as f64 * step).min(schedule.period);
            position_at(schedule, flight, t).map(|p| (t, p))
        })
        .collect()
}

pub fn write_trajectory_csv<W: std::io::Write>(samples: &[(f64, UavPosition)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "x", "y"]).map_err(csv_err)?;
    for (t, p) in samples {
        w.write_record([t.to_string(), p.x.to_string(), p.y.to_string()])
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn csv_err(e: csv::Error) -> PlanError {
    PlanError::Parse(e.to_string())
}

impl Schedule {
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| PlanError::Parse(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{generate_random, Point, ScenarioDefaults};

    fn scenario(period: f64) -> Scenario {
        generate_random(0, 1, (1.0, 1.0), &ScenarioDefaults::default())
            .unwrap()
            .with_period(period)
    }

    fn square() -> Vec<Point> {
        vec![
            Point::new(0.0, 0.0),
            Point::new(100.0, 0.0),
            Point::new(100.0, 100.0),
            Point::new(0.0, 100.0),
        ]
    }

    #[test]
    fn single_location_has_no_flight() {
        let f = build_flightplan(&[Point::new(3.0, 4.0)], &scenario(10.0)).unwrap();
        assert_eq!(f.fly_time, 0.0);
        assert!(f.segments.is_empty());
        assert_eq!(f.order, vec![0]);
    }

    #[test]
    fn two_locations_400m() {
        let f = build_flightplan(&[Point::new(0.0, 0.0), Point::new(400.0, 0.0)], &scenario(100.0)).unwrap();
        assert_eq!(f.segments.len(), 1);
        assert_eq!(f.segments[0].duration, 20.0);
        assert_eq!(f.fly_time, 20.0);
    }

    #[test]
    fn square_fly_time() {
        let f = build_flightplan(&square(), &scenario(100.0)).unwrap();
        assert!((f.total_distance - 300.0).abs() < 1e-12);
        assert!((f.fly_time - 15.0).abs() < 1e-12);
        assert_eq!(f.fly_time, f.total_distance / f.speed);
        let sum: f64 = f.segments.iter().map(|s| s.length).sum();
        assert_eq!(sum, f.total_distance);
    }

    #[test]
    fn short_period_rejected() {
        let err = build_flightplan(&square(), &scenario(10.0)).unwrap_err();
        assert!(matches!(err, PlanError::PeriodTooShort { .. }));
        assert!(err.to_string().contains("T < T_fly"));
    }

    #[test]
    fn schedule_layout() {
        let f = build_flightplan(&square(), &scenario(45.0)).unwrap();
        let s = build_schedule(&f, &[10.0, 5.0, 0.0, 15.0], 45.0).unwrap();
        assert_eq!(s.sub_periods.len(), 7);
        assert_eq!(s.sub_periods[0].start, 0.0);
        assert_eq!(s.sub_periods[6].end, 45.0);
        for w in s.sub_periods.windows(2) {
            assert_eq!(w[0].end, w[1].start);
        }
        for (i, sp) in s.sub_periods.iter().enumerate() {
            match sp.phase {
                Phase::Hover { stop } => assert_eq!(i, 2 * stop),
                Phase::Fly { segment } => assert_eq!(i, 2 * segment + 1),
            }
        }
    }

    #[test]
    fn schedule_rejects_wrong_total() {
        let f = build_flightplan(&square(), &scenario(45.0)).unwrap();
        assert!(build_schedule(&f, &[10.0, 5.0, 0.0, 14.0], 45.0).is_err());
        assert!(build_schedule(&f, &[10.0, 5.0, 15.0], 45.0).is_err());
    }

    #[test]
    fn positions_along_schedule() {
        let pts = [Point::new(0.0, 0.0), Point::new(400.0, 0.0)];
        let f = build_flightplan(&pts, &scenario(60.0)).unwrap();
        let s = build_schedule(&f, &[20.0, 20.0], 60.0).unwrap();
        let first = f.stops()[0];
        assert_eq!(position_at(&s, &f, 5.0).unwrap(), first);
        let mid = position_at(&s, &f, 30.0).unwrap();
        assert!((mid.x - 200.0).abs() < 1e-12 && mid.y == 0.0);
        assert_eq!(position_at(&s, &f, 60.0).unwrap(), f.stops()[1]);
        assert!(position_at(&s, &f, 0.0).is_err());
        assert!(position_at(&s, &f, 60.5).is_err());
    }

    #[test]
    fn sampled_speed_never_exceeds_limit() {
        let f = build_flightplan(&square(), &scenario(45.0)).unwrap();
        let s = build_schedule(&f, &[10.0, 5.0, 0.0, 15.0], 45.0).unwrap();
        let dt = 1e-3;
        let samples = sample_trajectory(&s, &f, dt).unwrap();
        let mut max_speed: f64 = 0.0;
        for w in samples.windows(2) {
            let v = w[0].1.distance(&w[1].1) / (w[1].0 - w[0].0);
            max_speed = max_speed.max(v);
        }
        assert!(max_speed <= f.speed + 1e-6, "{max_speed}");
        // Inside a flight the sampled speed is the limit.
        let a = position_at(&s, &f, 12.0).unwrap();
        let b = position_at(&s, &f, 12.0 + dt).unwrap();
        assert!((a.distance(&b) / dt - f.speed).abs() < 1e-9);
    }

    #[test]
    fn continuous_at_boundaries() {
        let f = build_flightplan(&square(), &scenario(45.0)).unwrap();
        let s = build_schedule(&f, &[10.0, 5.0, 0.0, 15.0], 45.0).unwrap();
        for sp in &s.sub_periods[..s.sub_periods.len() - 1] {
            if sp.end <= 0.0 {
                continue;
            }
            let left = position_at(&s, &f, sp.end).unwrap();
            let right = position_at(&s, &f, next_up(sp.end)).unwrap();
            assert!(left.distance(&right) <= f.speed * (next_up(sp.end) - sp.end) * 1.0001);
        }
    }

    fn next_up(x: f64) -> f64 {
        f64::from_bits(x.to_bits() + 1)
    }

    #[test]
    fn toml_round_trip() {
        let f = build_flightplan(&square(), &scenario(45.0)).unwrap();
        assert_eq!(FlightPlan::from_toml(&f.to_toml().unwrap()).unwrap(), f);
        let s = build_schedule(&f, &[10.0, 5.0, 0.0, 15.0], 45.0).unwrap();
        assert!(s.to_toml().unwrap().contains("kind = \"hover\""));
    }
}
