//! Optimal time-sharing among fixed hover columns.

use super::{HoverPlan, SolverDiagnostics};
use crate::channel::{self, UavPosition};
use crate::error::{PlanError, Result};
use crate::lp;
use crate::scenario::Scenario;

/// LP solution over columns, in normalized time.
#[derive(Debug, Clone)]
pub(crate) struct ColumnShare {
    /// Time share per column; sums to at most one.
    pub weights: Vec<f64>,
    pub eta: f64,
    /// Multipliers of the per-user rate rows; they sum to one when `eta > 0`.
    pub rate_duals: Vec<f64>,
    /// Multiplier of the energy row.
    pub energy_dual: f64,
}

/// `max eta s.t. eta <= sum_c w_c R[c][k], sum w <= 1, sum w p <= P_ave`.
///
/// `rates` is indexed `[column][user]`.
pub(crate) fn solve_columns(rates: &[Vec<f64>], powers: &[f64], power_ave: f64) -> Result<ColumnShare> {
    let cols = rates.len();
    if cols == 0 {
        return Err(PlanError::InvalidArgument("no hover candidates to time-share".into()));
    }
    let users = rates[0].len();
    let mut a = Vec::with_capacity(users + 2);
    for k in 0..users {
        let mut row: Vec<f64> = rates.iter().map(|r| -r[k]).collect();
        row.push(1.0);
        a.push(row);
    }
    let mut share = vec![1.0; cols];
    share.push(0.0);
    a.push(share);
    let mut energy = powers.to_vec();
    energy.push(0.0);
    a.push(energy);
    let mut b = vec![0.0; users];
    b.push(1.0);
    b.push(power_ave);
    let mut c = vec![0.0; cols];
    c.push(1.0);
    let sol = lp::maximize(&a, &b, &c)?;
    Ok(ColumnShare {
        weights: sol.x[..cols].to_vec(),
        eta: sol.x[cols],
        rate_duals: sol.duals[..users].to_vec(),
        energy_dual: sol.duals[users + 1],
    })
}

/// Drops columns below `epsilon` and re-solves until none remain.
pub(crate) fn solve_pruned(
    rates: &[Vec<f64>],
    powers: &[f64],
    power_ave: f64,
    epsilon: f64,
) -> Result<(Vec<usize>, ColumnShare)> {
    let mut keep: Vec<usize> = (0..rates.len()).collect();
    loop {
        let r: Vec<Vec<f64>> = keep.iter().map(|&i| rates[i].clone()).collect();
        let p: Vec<f64> = keep.iter().map(|&i| powers[i]).collect();
        let sol = solve_columns(&r, &p, power_ave)?;
        let survivors: Vec<usize> = (0..keep.len()).filter(|&i| sol.weights[i] >= epsilon).collect();
        if survivors.len() == keep.len() || survivors.is_empty() {
            return Ok((keep, sol));
        }
        keep = survivors.iter().map(|&i| keep[i]).collect();
    }
}

/// Stretches time shares to fill the period, lowering powers so energy is
/// unchanged. With rates concave and zero at zero power this never lowers
/// any user's rate.
pub(crate) fn fill_period(weights: &[f64], powers: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        let mut w = vec![0.0; weights.len()];
        if let Some(first) = w.first_mut() {
            *first = 1.0;
        }
        return (w, vec![0.0; powers.len()]);
    }
    (
        weights.iter().map(|w| w / total).collect(),
        powers.iter().map(|p| p * total).collect(),
    )
}

/// Per-candidate rate table `[candidate][user]`.
pub(crate) fn rate_table(candidates: &[(UavPosition, f64)], scenario: &Scenario) -> Vec<Vec<f64>> {
    let gamma0 = scenario.gamma0();
    let h2 = scenario.altitude_sq();
    candidates
        .iter()
        .map(|(pos, p)| {
            scenario
                .users
                .iter()
                .map(|u| channel::log2_1p(gamma0 * p / channel::sq_dist(pos, u, h2)))
                .collect()
        })
        .collect()
}

/// Optimal hover durations among fixed `(position, power)` candidates,
/// with the average power budget enforced.
pub fn timeshare_lp(candidates: &[(UavPosition, f64)], scenario: &Scenario) -> Result<HoverPlan> {
    timeshare_with_epsilon(candidates, scenario, super::RelaxedConfig::default().duration_epsilon)
}

pub(crate) fn timeshare_with_epsilon(
    candidates: &[(UavPosition, f64)],
    scenario: &Scenario,
    duration_epsilon: f64,
) -> Result<HoverPlan> {
    scenario.ensure_valid()?;
    if candidates.is_empty() {
        return Err(PlanError::InvalidArgument("no hover candidates to time-share".into()));
    }
    if candidates.iter().any(|(_, p)| !(*p >= 0.0)) {
        return Err(PlanError::InvalidArgument("candidate powers must be non-negative".into()));
    }
    let rates = rate_table(candidates, scenario);
    let powers: Vec<f64> = candidates.iter().map(|c| c.1).collect();
    let (keep, sol) = solve_pruned(&rates, &powers, scenario.power_ave, duration_epsilon)?;
    let kept_powers: Vec<f64> = keep.iter().map(|&i| powers[i]).collect();
    let (w, p) = fill_period(&sol.weights, &kept_powers);
    let locations: Vec<UavPosition> = keep.iter().map(|&i| candidates[i].0).collect();
    let plan = HoverPlan::from_shares(&locations, &w, &p, scenario, SolverDiagnostics::default())?;
    plan.pruned(duration_epsilon * scenario.period, scenario)
}
