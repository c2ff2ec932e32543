//! The speed-unconstrained problem: the transmitter may jump between hover
//! points, so only the fraction of time spent at each point and the power
//! used there matter.
//!
//! The problem is solved through its Lagrangian dual. Dual multipliers are
//! found with a deep-cut ellipsoid method and a column-generation polish,
//! each dual evaluation being a global 2D search over the user bounding box.
//! Hover candidates seen along the way are time-shared by a small LP and the
//! winning locations are handed to the joint power program for a final
//! polish.

mod ellipsoid;
mod inner;
mod timeshare;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use ellipsoid::{solve_dual, DualSolution, EllipsoidConfig};
pub use inner::{dual_value, solve_inner, DualEvaluation, InnerResult, InnerSolution, Subgradient};
pub use timeshare::timeshare_lp;

use crate::alloc;
use crate::channel::{self, UavPosition};
use crate::error::{PlanError, Result};
use crate::scenario::Scenario;
use crate::search::GridSpec;

/// Lagrange multipliers of the rate constraints (`lambdas`, per second) and
/// of the energy budget (`mu`, per Watt-second).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DualPoint {
    pub lambdas: Vec<f64>,
    pub mu: f64,
}

/// Multipliers scaled by the period so the lambdas sum to one.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct NormalizedDual {
    pub lambdas: Vec<f64>,
    pub mu: f64,
}

/// Accepted deviation of `T * sum(lambdas)` from one.
pub const SIMPLEX_TOLERANCE: f64 = 1e-6;

impl DualPoint {
    /// Uniform rate weights `1 / (K T)` with the given energy price.
    pub fn uniform(scenario: &Scenario, mu: f64) -> DualPoint {
        let k = scenario.num_users();
        DualPoint {
            lambdas: vec![1.0 / (k as f64 * scenario.period); k],
            mu,
        }
    }

    pub(crate) fn from_normalized(nd: &NormalizedDual, period: f64) -> DualPoint {
        DualPoint {
            lambdas: nd.lambdas.iter().map(|l| l / period).collect(),
            mu: nd.mu / period,
        }
    }

    pub(crate) fn normalized(&self, scenario: &Scenario) -> Result<NormalizedDual> {
        if self.lambdas.len() != scenario.num_users() {
            return Err(PlanError::Mismatch(format!(
                "{} multipliers for {} users",
                self.lambdas.len(),
                scenario.num_users()
            )));
        }
        if self.lambdas.iter().any(|l| !(*l >= 0.0)) || !(self.mu >= 0.0) || !self.mu.is_finite() {
            return Err(PlanError::InvalidArgument("multipliers must be finite and non-negative".into()));
        }
        let t = scenario.period;
        let lambdas: Vec<f64> = self.lambdas.iter().map(|l| l * t).collect();
        let total: f64 = lambdas.iter().sum();
        if (total - 1.0).abs() > SIMPLEX_TOLERANCE {
            return Err(PlanError::InvalidArgument(format!(
                "rate multipliers must sum to 1/T, got T*sum = {total}"
            )));
        }
        Ok(NormalizedDual { lambdas, mu: self.mu * t })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelaxedConfig {
    pub grid: GridSpec,
    pub ellipsoid: EllipsoidConfig,
    /// Relative duality gap accepted as converged.
    pub gap_tolerance: f64,
    /// Hover shares below this fraction of the period are dropped.
    pub duration_epsilon: f64,
}

impl Default for RelaxedConfig {
    fn default() -> Self {
        RelaxedConfig {
            grid: GridSpec::default(),
            ellipsoid: EllipsoidConfig::default(),
            gap_tolerance: 1e-4,
            duration_epsilon: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SolverDiagnostics {
    /// Ellipsoid iterations.
    pub iterations: usize,
    pub column_rounds: usize,
    pub converged: bool,
    /// Best dual bound, bps/Hz.
    pub dual_value: f64,
    /// `dual_value - eta_star`.
    pub duality_gap: f64,
    pub power_cap_active: bool,
    /// Distinct hover candidates collected.
    pub candidates: usize,
    /// Multipliers attaining `dual_value`.
    pub dual: DualPoint,
}

/// Half-open interval `(start, end]` of the mission period.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub start: f64,
    pub end: f64,
}

/// Multi-location hovering: the transmitter stays at `locations[i]` for
/// `durations[i]` seconds, transmitting at `powers[i]` Watts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoverPlan {
    pub locations: Vec<UavPosition>,
    pub durations: Vec<f64>,
    pub powers: Vec<f64>,
    pub eta_star: f64,
    pub sub_periods: Vec<Interval>,
    pub diagnostics: SolverDiagnostics,
}

impl HoverPlan {
    /// Number of hover locations.
    pub fn gamma(&self) -> usize {
        self.locations.len()
    }

    pub fn period(&self) -> f64 {
        self.sub_periods.last().map_or(0.0, |s| s.end)
    }

    pub fn total_energy(&self) -> f64 {
        self.durations.iter().zip(&self.powers).map(|(t, p)| t * p).sum()
    }

    /// Average rate of every user over the period.
    pub fn per_user_rates(&self, scenario: &Scenario) -> Vec<f64> {
        average_rates(&self.locations, &self.durations, &self.powers, scenario)
    }

    /// Plan from time shares summing to one.
    pub(crate) fn from_shares(
        locations: &[UavPosition],
        shares: &[f64],
        powers: &[f64],
        scenario: &Scenario,
        diagnostics: SolverDiagnostics,
    ) -> Result<HoverPlan> {
        let t = scenario.period;
        let durations: Vec<f64> = shares.iter().map(|w| w * t).collect();
        Self::from_durations(locations.to_vec(), durations, powers.to_vec(), scenario, diagnostics)
    }

    fn from_durations(
        locations: Vec<UavPosition>,
        mut durations: Vec<f64>,
        mut powers: Vec<f64>,
        scenario: &Scenario,
        diagnostics: SolverDiagnostics,
    ) -> Result<HoverPlan> {
        if locations.is_empty() || locations.len() != durations.len() || durations.len() != powers.len() {
            return Err(PlanError::Mismatch("hover plan fields differ in length".into()));
        }
        let t = scenario.period;
        let total: f64 = durations.iter().sum();
        if !(total > 0.0) {
            return Err(PlanError::InvalidArgument("hover durations sum to zero".into()));
        }
        durations.iter_mut().for_each(|d| *d *= t / total);
        let budget = t * scenario.power_ave;
        let energy: f64 = durations.iter().zip(&powers).map(|(d, p)| d * p).sum();
        if energy > budget {
            powers.iter_mut().for_each(|p| *p *= budget / energy);
        }
        let mut sub_periods = Vec::with_capacity(durations.len());
        let mut start = 0.0;
        for (i, d) in durations.iter().enumerate() {
            let end = if i + 1 == durations.len() { t } else { start + d };
            sub_periods.push(Interval { start, end });
            start = end;
        }
        let rates = average_rates(&locations, &durations, &powers, scenario);
        let eta_star = rates.iter().copied().fold(f64::INFINITY, f64::min);
        Ok(HoverPlan { locations, durations, powers, eta_star, sub_periods, diagnostics })
    }

    /// Drops locations held for less than `min_duration` seconds and
    /// stretches the rest over the period at unchanged energy.
    pub(crate) fn pruned(self, min_duration: f64, scenario: &Scenario) -> Result<HoverPlan> {
        let keep: Vec<usize> = (0..self.gamma()).filter(|&i| self.durations[i] >= min_duration).collect();
        if keep.len() == self.gamma() || keep.is_empty() {
            return Ok(self);
        }
        let total: f64 = keep.iter().map(|&i| self.durations[i]).sum();
        let stretch = scenario.period / total;
        let locations = keep.iter().map(|&i| self.locations[i]).collect();
        let durations = keep.iter().map(|&i| self.durations[i]).collect();
        let powers = keep.iter().map(|&i| self.powers[i] / stretch).collect();
        Self::from_durations(locations, durations, powers, scenario, self.diagnostics)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| PlanError::Parse(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<HoverPlan> {
        toml::from_str(text).map_err(|e| PlanError::Parse(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<HoverPlan> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }
}

fn average_rates(locations: &[UavPosition], durations: &[f64], powers: &[f64], scenario: &Scenario) -> Vec<f64> {
    let t = scenario.period;
    let gamma0 = scenario.gamma0();
    let h2 = scenario.altitude_sq();
    scenario
        .users
        .iter()
        .map(|u| {
            locations
                .iter()
                .zip(durations)
                .zip(powers)
                .map(|((pos, d), p)| d * channel::log2_1p(gamma0 * p / channel::sq_dist(pos, u, h2)))
                .sum::<f64>()
                / t
        })
        .collect()
}

/// Solves the speed-unconstrained problem: dual search, time-sharing of the
/// collected candidates and a joint power polish at the winning locations.
pub fn solve_p2(scenario: &Scenario, cfg: &RelaxedConfig) -> Result<HoverPlan> {
    scenario.ensure_valid()?;
    cfg.grid.validate()?;
    if !(cfg.gap_tolerance > 0.0) || !(cfg.duration_epsilon >= 0.0) {
        return Err(PlanError::InvalidArgument("relaxed tolerances must be positive".into()));
    }
    let bbox = scenario.user_bounding_box();
    if scenario.power_ave == 0.0 {
        let diagnostics = SolverDiagnostics { converged: true, dual: DualPoint::uniform(scenario, 0.0), ..Default::default() };
        return HoverPlan::from_shares(&[bbox.center()], &[1.0], &[0.0], scenario, diagnostics);
    }
    let sol = solve_dual(scenario, &cfg.grid, &cfg.ellipsoid)?;
    let epsilon = cfg.duration_epsilon;
    let lp_plan = timeshare::timeshare_with_epsilon(&sol.candidates, scenario, epsilon)?;

    // Jensen: columns sharing a location are better served by one power.
    let by_duration = |plan: &HoverPlan| {
        let mut order: Vec<usize> = (0..plan.gamma()).collect();
        order.sort_by(|&a, &b| plan.durations[b].total_cmp(&plan.durations[a]));
        order
    };
    let radius = cfg.grid.merge_radius(&bbox);
    let mut sites: Vec<UavPosition> = Vec::new();
    for i in by_duration(&lp_plan) {
        let pos = lp_plan.locations[i];
        if sites.iter().all(|s| s.distance(&pos) > radius) {
            sites.push(pos);
        }
    }
    let mut dual_value = sol.value;
    let mut dual = sol.dual.clone();
    let floor = lp_plan.eta_star;
    let mut plan = lp_plan;
    let mut consider = |sites: &[UavPosition], plan: &mut HoverPlan, slack: f64| {
        let Some((candidate, price)) = polish_at(sites, scenario, cfg) else { return };
        if let Some((value, nd)) = price {
            if value < dual_value {
                dual_value = value;
                dual = DualPoint::from_normalized(&nd, scenario.period);
            }
        }
        if candidate.eta_star >= floor && candidate.eta_star >= plan.eta_star - slack {
            *plan = candidate;
        }
    };
    consider(&sites, &mut plan, 0.0);

    // Inexact multipliers split one hover point into a few nearby grid
    // maximizers; fold each group into its duration-weighted centroid when
    // that costs next to nothing.
    let cluster = (0.01 * bbox.width().hypot(bbox.height())).max(radius);
    let mut groups: Vec<(UavPosition, f64, f64, f64)> = Vec::new();
    for i in by_duration(&plan) {
        let (pos, d) = (plan.locations[i], plan.durations[i]);
        match groups.iter_mut().find(|g| g.0.distance(&pos) <= cluster) {
            Some(g) => {
                g.1 += d * pos.x;
                g.2 += d * pos.y;
                g.3 += d;
            }
            None => groups.push((pos, d * pos.x, d * pos.y, d)),
        }
    }
    if groups.len() < plan.gamma() {
        let centroids: Vec<UavPosition> = groups
            .iter()
            .map(|g| if g.3 > 0.0 { UavPosition::new(g.1 / g.3, g.2 / g.3) } else { g.0 })
            .collect();
        let slack = 0.1 * cfg.gap_tolerance * plan.eta_star;
        consider(&centroids, &mut plan, slack);
    }
    let gap = dual_value - plan.eta_star;
    plan.diagnostics = SolverDiagnostics {
        iterations: sol.iterations,
        column_rounds: sol.column_rounds,
        converged: gap <= cfg.gap_tolerance * plan.eta_star,
        dual_value,
        duality_gap: gap,
        power_cap_active: sol.power_cap_active,
        candidates: sol.candidates.len(),
        dual,
    };
    Ok(plan)
}

/// Joint power and duration polish at fixed sites. Also returns the dual
/// function at the polish multipliers.
fn polish_at(
    sites: &[UavPosition],
    scenario: &Scenario,
    cfg: &RelaxedConfig,
) -> Option<(HoverPlan, Option<(f64, NormalizedDual)>)> {
    let opt = alloc::optimize_hover_only(sites, scenario);
    if !(opt.kkt.max() <= 1e-6) {
        return None;
    }
    let weight: f64 = opt.rate_duals.iter().sum();
    let price = (weight > 0.0).then(|| {
        let nd = NormalizedDual {
            lambdas: opt.rate_duals.iter().map(|y| y / weight).collect(),
            mu: opt.energy_dual / weight,
        };
        (ellipsoid::dual_at(&nd, scenario, &cfg.grid, sites), nd)
    });
    let powers: Vec<f64> = opt
        .hover_time
        .iter()
        .zip(&opt.hover_energy)
        .map(|(w, e)| if *w > 0.0 { e / w } else { 0.0 })
        .collect();
    let (w, p) = timeshare::fill_period(&opt.hover_time, &powers);
    let plan = HoverPlan::from_shares(sites, &w, &p, scenario, SolverDiagnostics::default())
        .and_then(|plan| plan.pruned(cfg.duration_epsilon * scenario.period, scenario))
        .ok()?;
    Some((plan, price))
}
