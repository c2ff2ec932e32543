//! The per-instant subproblem: best hover point and power for given
//! multipliers.

use serde::{Deserialize, Serialize};

use super::{DualPoint, NormalizedDual};
use crate::channel::{self, UavPosition};
use crate::error::Result;
use crate::power;
use crate::scenario::Scenario;
use crate::search::{search_peaks, GridSpec};

/// A maximizer of the weighted-rate-minus-power objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InnerSolution {
    pub position: UavPosition,
    /// Watts.
    pub power: f64,
    /// `sum_k lambda_k R_k - mu p` in the caller's dual units.
    pub psi_value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InnerResult {
    pub best: InnerSolution,
    /// Maximizers within the tie band of the best value.
    pub ties: Vec<InnerSolution>,
    /// Every refined local maximum, best first.
    pub peaks: Vec<InnerSolution>,
    pub power_cap_active: bool,
}

/// Subgradient of the dual function with respect to the raw multipliers:
/// `[T R_1, ..., T R_K, T (P_ave - p)]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subgradient {
    pub components: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualEvaluation {
    /// Dual function value, on the bps/Hz scale of the min rate.
    pub value: f64,
    pub subgradient: Subgradient,
    pub inner: InnerResult,
}

/// Candidate in normalized units: `value` is `sum lam R - mu p`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Candidate {
    pub position: UavPosition,
    pub power: f64,
    pub value: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct NormalizedInner {
    pub best: Candidate,
    pub peaks: Vec<Candidate>,
    pub capped: bool,
}

pub(crate) fn power_cap(scenario: &Scenario) -> f64 {
    1e6 * scenario.power_ave
}

/// Optimal power and objective value at one location.
pub(crate) fn best_at(pos: &UavPosition, dual: &NormalizedDual, scenario: &Scenario) -> (f64, f64, bool) {
    let gains = channel::channel_gains(pos, scenario);
    let (p, capped) = power::optimal_power(&dual.lambdas, &gains, dual.mu, power_cap(scenario));
    (p, power::weighted_value(&dual.lambdas, &gains, dual.mu, p), capped)
}

/// Grid search over the user bounding box, topped up by re-pricing the
/// `known` locations so previously found hover points are never missed.
pub(crate) fn solve_normalized(
    dual: &NormalizedDual,
    scenario: &Scenario,
    grid: &GridSpec,
    known: &[UavPosition],
) -> NormalizedInner {
    let bbox = scenario.user_bounding_box();
    let gamma0 = scenario.gamma0();
    let h2 = scenario.altitude_sq();
    // The marginal value of power at zero never exceeds gamma0 / (ln2 H^2);
    // above that price nothing is worth transmitting anywhere.
    let weight: f64 = dual.lambdas.iter().sum();
    if dual.mu * std::f64::consts::LN_2 * h2 >= weight * gamma0 {
        let corner = UavPosition::new(bbox.x_min, bbox.y_min);
        let best = Candidate { position: corner, power: 0.0, value: 0.0 };
        return NormalizedInner { best, peaks: vec![best], capped: false };
    }
    let cap = power_cap(scenario);
    let peaks = search_peaks(&bbox, grid, grid.merge_radius(&bbox), |pos| {
        let gains: Vec<f64> = scenario
            .users
            .iter()
            .map(|u| gamma0 / channel::sq_dist(&pos, u, h2))
            .collect();
        let (p, capped) = power::optimal_power(&dual.lambdas, &gains, dual.mu, cap);
        (power::weighted_value(&dual.lambdas, &gains, dual.mu, p), (p, capped))
    });
    let capped = peaks.iter().any(|pk| pk.aux.1);
    let mut peaks: Vec<Candidate> = peaks
        .iter()
        .map(|pk| Candidate { position: pk.point, power: pk.aux.0, value: pk.value })
        .collect();
    let mut best = peaks[0];
    for pos in known {
        let (p, value, _) = best_at(pos, dual, scenario);
        if value > best.value {
            best = Candidate { position: *pos, power: p, value };
        }
    }
    if best != peaks[0] {
        peaks.insert(0, best);
    }
    if !(best.value > 0.0) {
        let corner = UavPosition::new(bbox.x_min, bbox.y_min);
        let best = Candidate { position: corner, power: 0.0, value: 0.0 };
        return NormalizedInner { best, peaks: vec![best], capped };
    }
    NormalizedInner { best, peaks, capped }
}

impl NormalizedInner {
    pub(crate) fn value(&self, dual: &NormalizedDual, scenario: &Scenario) -> f64 {
        self.best.value + dual.mu * scenario.power_ave
    }
}

/// Solves the inner problem at `dual`.
pub fn solve_inner(dual: &DualPoint, scenario: &Scenario, grid: &GridSpec) -> Result<InnerResult> {
    scenario.ensure_valid()?;
    grid.validate()?;
    let nd = dual.normalized(scenario)?;
    let res = solve_normalized(&nd, scenario, grid, &[]);
    let to_raw = |c: &Candidate| InnerSolution {
        position: c.position,
        power: c.power,
        psi_value: c.value / scenario.period,
    };
    let band = grid.tie_epsilon * res.best.value.abs();
    Ok(InnerResult {
        best: to_raw(&res.best),
        ties: res
            .peaks
            .iter()
            .filter(|c| c.value >= res.best.value - band)
            .map(to_raw)
            .collect(),
        peaks: res.peaks.iter().map(to_raw).collect(),
        power_cap_active: res.capped,
    })
}

/// Dual function value and subgradient at `dual`.
pub fn dual_value(dual: &DualPoint, scenario: &Scenario, grid: &GridSpec) -> Result<DualEvaluation> {
    let inner = solve_inner(dual, scenario, grid)?;
    let nd = dual.normalized(scenario)?;
    let t = scenario.period;
    let rates = channel::rates(&inner.best.position, inner.best.power, scenario)?;
    let mut components: Vec<f64> = rates.per_user_rate.iter().map(|r| t * r).collect();
    components.push(t * (scenario.power_ave - inner.best.power));
    Ok(DualEvaluation {
        value: inner.best.psi_value * t + nd.mu * scenario.power_ave,
        subgradient: Subgradient { components },
        inner,
    })
}
