//! End-to-end planning: capacity bound, hover-and-fly plan and benchmarks.

use serde::{Deserialize, Serialize};

use crate::alloc::{
    self, benchmark_equal_power, benchmark_static, AllocationSolution, DiscretizedFlight, StaticHover,
};
use crate::error::{PlanError, Result};
use crate::flightplan::{build_flightplan, build_schedule, FlightPlan, Schedule};
use crate::relaxed::{solve_p2, HoverPlan, RelaxedConfig};
use crate::scenario::Scenario;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub relaxed: RelaxedConfig,
    /// Longest flight slot, seconds.
    pub max_slot: f64,
    /// KKT residual accepted for the joint allocation.
    pub kkt_tolerance: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            relaxed: RelaxedConfig::default(),
            max_slot: alloc::DEFAULT_MAX_SLOT,
            kkt_tolerance: 1e-6,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_slot > 0.0) || !(self.kkt_tolerance > 0.0) {
            return Err(PlanError::InvalidArgument("slot length and KKT tolerance must be positive".into()));
        }
        self.relaxed.grid.validate()
    }
}

/// Headline numbers of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub period: f64,
    pub eta_static: f64,
    pub eta_equal: f64,
    pub eta_joint: f64,
    pub eta_star: f64,
    pub duality_gap: f64,
    pub gamma: usize,
    pub fly_time: f64,
    pub relaxed_converged: bool,
    pub joint_converged: bool,
    pub joint_kkt_residual: f64,
    pub heuristic_order: bool,
    pub power_cap_active: bool,
}

impl Summary {
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| PlanError::Parse(e.to_string()))
    }
}

#[derive(Debug, Clone)]
pub struct PipelineResult {
    pub hover: HoverPlan,
    pub flight: FlightPlan,
    pub discretized: DiscretizedFlight,
    pub schedule: Schedule,
    pub joint: AllocationSolution,
    pub equal: AllocationSolution,
    pub static_hover: StaticHover,
    pub summary: Summary,
}

/// Solves the capacity bound, then plans and allocates the hover-and-fly
/// trajectory through its hover locations.
pub fn run_pipeline(scenario: &Scenario, cfg: &PipelineConfig) -> Result<PipelineResult> {
    cfg.validate()?;
    let hover = solve_p2(scenario, &cfg.relaxed)?;
    let static_hover = benchmark_static(scenario, &cfg.relaxed.grid)?;
    run_with_hover(scenario, &hover, &static_hover, cfg)
}

/// Hover-and-fly stages for a given capacity plan. The capacity plan and
/// static benchmark do not depend on the period, so sweeps reuse them.
pub fn run_with_hover(
    scenario: &Scenario,
    hover: &HoverPlan,
    static_hover: &StaticHover,
    cfg: &PipelineConfig,
) -> Result<PipelineResult> {
    cfg.validate()?;
    scenario.ensure_valid()?;
    let flight = build_flightplan(&hover.locations, scenario)?;
    let slots = alloc::default_slot_count(flight.fly_time, cfg.max_slot);
    let discretized = alloc::discretize(&flight, scenario, slots)?;
    let joint = alloc::optimize_joint(&discretized, &flight, scenario, cfg.kkt_tolerance)?;
    let equal = benchmark_equal_power(&flight, &discretized, scenario)?;
    let schedule = build_schedule(&flight, &joint.tau_hover, scenario.period)?;
    let summary = Summary {
        period: scenario.period,
        eta_static: static_hover.eta,
        eta_equal: equal.eta,
        eta_joint: joint.eta,
        eta_star: hover.eta_star,
        duality_gap: hover.diagnostics.duality_gap,
        gamma: hover.gamma(),
        fly_time: flight.fly_time,
        relaxed_converged: hover.diagnostics.converged,
        joint_converged: joint.converged,
        joint_kkt_residual: joint.kkt_residual,
        heuristic_order: flight.heuristic_order,
        power_cap_active: hover.diagnostics.power_cap_active,
    };
    Ok(PipelineResult {
        hover: hover.clone(),
        flight,
        discretized,
        schedule,
        joint,
        equal,
        static_hover: *static_hover,
        summary,
    })
}
