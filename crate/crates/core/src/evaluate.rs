//! Independent plan certification.
//!
//! The evaluator rebuilds the trajectory and power profile from the raw
//! plan fields, integrates every user's rate with the midpoint rule and
//! checks the energy and speed limits. It recomputes all channel
//! quantities from the scenario and shares no code with the solvers.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alloc::AllocationSolution;
use crate::error::{PlanError, Result};
use crate::flightplan::FlightPlan;
use crate::pipeline::{run_with_hover, PipelineConfig};
use crate::relaxed::HoverPlan;
use crate::scenario::{Point, Scenario};

/// Default integration step for certification, seconds.
pub const CERTIFY_DT: f64 = 1e-3;
/// Default integration step for sweeps, seconds.
pub const SWEEP_DT: f64 = 1e-2;

/// Relative slack on the energy budget.
pub const ENERGY_SLACK: f64 = 1e-8;
/// Relative slack on the speed limit.
pub const SPEED_SLACK: f64 = 1e-6;

/// A plan to certify.
#[derive(Debug, Clone, Copy)]
pub enum PlanRef<'a> {
    /// Speed-unconstrained multi-location hovering.
    Hover(&'a HoverPlan),
    /// Successive hover-and-fly.
    HoverAndFly {
        flight: &'a FlightPlan,
        allocation: &'a AllocationSolution,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConstraintFlag {
    EnergyExceeded { used: f64, budget: f64 },
    SpeedExceeded { observed: f64, limit: f64 },
    /// Hover plans jump between locations; speed is not checked.
    SpeedUnconstrained,
}

impl fmt::Display for ConstraintFlag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConstraintFlag::EnergyExceeded { used, budget } => {
                write!(f, "energy {used} J exceeds budget {budget} J")
            }
            ConstraintFlag::SpeedExceeded { observed, limit } => {
                write!(f, "speed {observed} m/s exceeds limit {limit} m/s")
            }
            ConstraintFlag::SpeedUnconstrained => write!(f, "speed not checked for a hover plan"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    /// Average rate of each user over the period, bps/Hz.
    pub per_user_avg_rate: Vec<f64>,
    pub min_rate: f64,
    /// Joules.
    pub energy_used: f64,
    /// Largest finite-difference speed, m/s. Zero for hover plans.
    pub max_speed_observed: f64,
    pub constraint_flags: Vec<ConstraintFlag>,
}

impl EvaluationReport {
    /// True when no energy or speed limit is violated.
    pub fn feasible(&self) -> bool {
        !self.constraint_flags.iter().any(|f| {
            matches!(f, ConstraintFlag::EnergyExceeded { .. } | ConstraintFlag::SpeedExceeded { .. })
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| PlanError::Parse(e.to_string()))
    }
}

/// One stretch of the timeline with constant power and linear motion.
#[derive(Debug, Clone, Copy)]
struct Piece {
    start: f64,
    end: f64,
    from: Point,
    to: Point,
    power: f64,
}

impl Piece {
    fn position(&self, t: f64) -> Point {
        let len = self.end - self.start;
        let f = if len > 0.0 { ((t - self.start) / len).clamp(0.0, 1.0) } else { 0.0 };
        Point::new(self.from.x + f * (self.to.x - self.from.x), self.from.y + f * (self.to.y - self.from.y))
    }
}

fn mismatch(msg: String) -> PlanError {
    PlanError::Mismatch(msg)
}

fn hover_pieces(plan: &HoverPlan) -> Result<Vec<Piece>> {
    let n = plan.locations.len();
    if n == 0 || plan.durations.len() != n || plan.powers.len() != n {
        return Err(mismatch("hover plan fields differ in length".into()));
    }
    let mut t = 0.0;
    let mut pieces = Vec::with_capacity(n);
    for i in 0..n {
        let loc = plan.locations[i];
        pieces.push(Piece { start: t, end: t + plan.durations[i], from: loc, to: loc, power: plan.powers[i] });
        t += plan.durations[i];
    }
    Ok(pieces)
}

fn flight_pieces(flight: &FlightPlan, alloc: &AllocationSolution) -> Result<Vec<Piece>> {
    let gamma = flight.order.len();
    if gamma == 0 || flight.locations.len() != gamma {
        return Err(mismatch("flight plan has no consistent visiting order".into()));
    }
    if alloc.tau_hover.len() != gamma || alloc.power_hover.len() != gamma {
        return Err(mismatch(format!(
            "allocation covers {} hover locations, flight plan has {gamma}",
            alloc.tau_hover.len()
        )));
    }
    if flight.segments.len() + 1 != gamma {
        return Err(mismatch("flight plan needs one segment per consecutive stop pair".into()));
    }
    let stops: Vec<Point> = flight.order.iter().map(|&i| flight.locations[i]).collect();
    let fly_total: f64 = flight.segments.iter().map(|s| s.duration).sum();
    let slots = alloc.power_fly.len();
    let dt = alloc.delta_t;
    if fly_total > 0.0 && (slots == 0 || (slots as f64 * dt - fly_total).abs() > 1e-9 * fly_total.max(1.0)) {
        return Err(mismatch(format!("{slots} flight slots of {dt} s do not cover {fly_total} s of flight")));
    }

    let mut pieces = Vec::new();
    let mut t = 0.0;
    // Flight clock, with the slot boundaries cut into the pieces.
    let mut clock = 0.0;
    for i in 0..gamma {
        let d = alloc.tau_hover[i];
        pieces.push(Piece { start: t, end: t + d, from: stops[i], to: stops[i], power: alloc.power_hover[i] });
        t += d;
        if i + 1 == gamma {
            break;
        }
        let dur = flight.segments[i].duration;
        let (a, b) = (stops[i], stops[i + 1]);
        let seg_start = clock;
        let seg_end = clock + dur;
        let lerp = |c: f64| {
            let f = if dur > 0.0 { ((c - seg_start) / dur).clamp(0.0, 1.0) } else { 1.0 };
            Point::new(a.x + f * (b.x - a.x), a.y + f * (b.y - a.y))
        };
        while clock < seg_end {
            let slot = ((clock / dt + 1e-9).floor() as usize).min(slots - 1);
            let next = ((slot + 1) as f64 * dt).min(seg_end);
            let next = if next <= clock { seg_end } else { next };
            pieces.push(Piece {
                start: t + (clock - seg_start),
                end: t + (next - seg_start),
                from: lerp(clock),
                to: lerp(next),
                power: alloc.power_fly[slot],
            });
            clock = next;
        }
        clock = seg_end;
        t += dur;
    }
    Ok(pieces)
}

/// Integrates rates and energy over the plan at step `dt` and checks the
/// scenario's limits.
pub fn evaluate(plan: PlanRef<'_>, scenario: &Scenario, dt: f64) -> Result<EvaluationReport> {
    scenario.ensure_valid()?;
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(PlanError::InvalidArgument(format!("integration step must be positive, got {dt}")));
    }
    let period = scenario.period;
    let mut pieces = match plan {
        PlanRef::Hover(p) => hover_pieces(p)?,
        PlanRef::HoverAndFly { flight, allocation } => flight_pieces(flight, allocation)?,
    };
    let end = pieces.last().map_or(0.0, |p| p.end);
    if (end - period).abs() > 1e-9 * period {
        return Err(mismatch(format!("plan lasts {end} s, period is {period} s")));
    }
    if let Some(last) = pieces.last_mut() {
        last.end = period;
    }
    if pieces.iter().any(|p| !(p.power >= 0.0) || !p.power.is_finite() || p.end < p.start) {
        return Err(PlanError::InvalidArgument("plan has negative power or duration".into()));
    }

    // Midpoint samples: (weight, position, power).
    let mut samples: Vec<(f64, Point, f64)> = Vec::new();
    let mut max_speed: f64 = 0.0;
    for p in &pieces {
        let len = p.end - p.start;
        if len <= 0.0 {
            continue;
        }
        let n = (len / dt).ceil().max(1.0) as usize;
        let h = len / n as f64;
        let moving = p.from != p.to;
        for i in 0..n {
            let mid = p.start + (i as f64 + 0.5) * h;
            samples.push((h, p.position(mid), p.power));
            if moving {
                let a = p.position(p.start + i as f64 * h);
                let b = p.position(p.start + (i + 1) as f64 * h);
                max_speed = max_speed.max(a.distance(&b) / h);
            }
        }
    }

    let gamma0 = scenario.beta0 / scenario.noise_power;
    let h2 = scenario.altitude * scenario.altitude;
    let per_user_avg_rate: Vec<f64> = scenario
        .users
        .par_iter()
        .map(|u| {
            samples
                .iter()
                .map(|(w, q, p)| {
                    let d2 = h2 + (q.x - u.x).powi(2) + (q.y - u.y).powi(2);
                    w * (gamma0 * p / d2).ln_1p() / std::f64::consts::LN_2
                })
                .sum::<f64>()
                / period
        })
        .collect();
    let min_rate = per_user_avg_rate.iter().copied().fold(f64::INFINITY, f64::min);
    let energy_used: f64 = samples.iter().map(|(w, _, p)| w * p).sum();

    let mut flags = Vec::new();
    let budget = period * scenario.power_ave;
    if energy_used > budget * (1.0 + ENERGY_SLACK) {
        flags.push(ConstraintFlag::EnergyExceeded { used: energy_used, budget });
    }
    match plan {
        PlanRef::Hover(_) => flags.push(ConstraintFlag::SpeedUnconstrained),
        PlanRef::HoverAndFly { .. } => {
            if max_speed > scenario.max_speed * (1.0 + SPEED_SLACK) {
                flags.push(ConstraintFlag::SpeedExceeded { observed: max_speed, limit: scenario.max_speed });
            }
        }
    }
    Ok(EvaluationReport {
        per_user_avg_rate,
        min_rate,
        energy_used,
        max_speed_observed: max_speed,
        constraint_flags: flags,
    })
}

/// Largest acceptable gap between a solver's reported rate and the
/// evaluator's, for an integration step `dt` and discretization step
/// `slot` (zero for hover plans).
pub fn agreement_tolerance(report: &EvaluationReport, scenario: &Scenario, slot: f64) -> f64 {
    let max_rate = report.per_user_avg_rate.iter().copied().fold(0.0, f64::max);
    (1e-6 * report.min_rate.abs()).max(2.0 * slot / scenario.period * max_rate)
}

/// One row of a period sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    #[serde(rename = "T")]
    pub period: f64,
    pub eta_static: f64,
    pub eta_equal: f64,
    pub eta_joint: f64,
    pub eta_star: f64,
}

/// A period left out of a sweep because the flight does not fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SkippedPeriod {
    pub period: f64,
    pub fly_time: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub skipped: Vec<SkippedPeriod>,
}

/// Runs the pipeline at every period in `periods`, in input order. The
/// capacity plan and static benchmark are solved once since neither depends
/// on the period; periods shorter than the flying time are skipped.
pub fn sweep_t(scenario: &Scenario, periods: &[f64], cfg: &PipelineConfig) -> Result<SweepTable> {
    if let Some(bad) = periods.iter().find(|t| !(**t > 0.0) || !t.is_finite()) {
        return Err(PlanError::InvalidArgument(format!("period must be positive, got {bad}")));
    }
    cfg.validate()?;
    let hover = crate::relaxed::solve_p2(scenario, &cfg.relaxed)?;
    let static_hover = crate::alloc::benchmark_static(scenario, &cfg.relaxed.grid)?;
    let runs: Vec<Result<std::result::Result<SweepRow, SkippedPeriod>>> = periods
        .par_iter()
        .map(|&t| match run_with_hover(&scenario.with_period(t), &hover, &static_hover, cfg) {
            Ok(r) => Ok(Ok(SweepRow {
                period: t,
                eta_static: r.summary.eta_static,
                eta_equal: r.summary.eta_equal,
                eta_joint: r.summary.eta_joint,
                eta_star: r.summary.eta_star,
            })),
            Err(PlanError::PeriodTooShort { period_s, fly_time_s }) => {
                Ok(Err(SkippedPeriod { period: period_s, fly_time: fly_time_s }))
            }
            Err(e) => Err(e),
        })
        .collect();
    let mut table = SweepTable::default();
    for run in runs {
        match run? {
            Ok(row) => table.rows.push(row),
            Err(skip) => table.skipped.push(skip),
        }
    }
    Ok(table)
}

/// Writes `T,eta_static,eta_equal,eta_joint,eta_star` rows.
pub fn write_sweep_csv<W: std::io::Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(["T", "eta_static", "eta_equal", "eta_joint", "eta_star"])
        .map_err(crate::flightplan::csv_err)?;
    for row in rows {
        w.serialize(row).map_err(crate::flightplan::csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a sweep CSV back.
pub fn read_sweep_csv<R: std::io::Read>(input: R) -> Result<Vec<SweepRow>> {
    csv::Reader::from_reader(input)
        .deserialize()
        .map(|r| r.map_err(crate::flightplan::csv_err))
        .collect()
}
