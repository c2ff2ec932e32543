//! Dual minimization: deep-cut ellipsoid iterations followed by column
//! generation over the collected hover candidates.
//!
//! The search runs in normalized multipliers (`T * lambda` on the unit
//! simplex, `T * mu`). The simplex is handled by eliminating the last
//! weight, so the ellipsoid lives in `K` dimensions: `K - 1` free weights
//! and the energy price. The implicit last weight being non-negative becomes
//! the cut `[1, ..., 1, 0]`.

use std::f64::consts::LN_2;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::inner::{self, Candidate};
use super::timeshare::{self, ColumnShare};
use super::{DualPoint, NormalizedDual};
use crate::channel::{self, UavPosition};
use crate::error::{PlanError, Result};
use crate::scenario::Scenario;
use crate::search::GridSpec;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EllipsoidConfig {
    /// Relative gap between the dual bound and the time-shared primal value
    /// at which iterations stop.
    pub tolerance: f64,
    pub max_iters: usize,
    /// Iterations between time-sharing LP checks.
    pub check_every: usize,
    /// Iterations also stop once every semi-axis is shorter than this.
    pub axis_tolerance: f64,
    /// Cap on column-generation rounds after the ellipsoid stage.
    pub column_rounds: usize,
}

impl Default for EllipsoidConfig {
    fn default() -> Self {
        EllipsoidConfig {
            tolerance: 1e-4,
            max_iters: 2000,
            check_every: 1,
            axis_tolerance: 1e-9,
            column_rounds: 60,
        }
    }
}

impl EllipsoidConfig {
    fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) || !(self.axis_tolerance >= 0.0) || self.check_every == 0 {
            return Err(PlanError::InvalidArgument(format!("bad ellipsoid settings: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualSolution {
    /// Best multipliers found.
    pub dual: DualPoint,
    /// Dual function value at `dual`, bps/Hz.
    pub value: f64,
    /// Min rate of the best time-sharing among `candidates`.
    pub primal_value: f64,
    pub iterations: usize,
    pub column_rounds: usize,
    pub converged: bool,
    /// Set when the power cap binds at the best multipliers.
    pub power_cap_active: bool,
    /// Hover candidates `(position, power)` seen over all evaluations.
    pub candidates: Vec<(UavPosition, f64)>,
    /// Running minimum of the dual value after each evaluation.
    pub trace: Vec<f64>,
}

/// Relative power difference under which two candidates at the same
/// location are treated as one column.
const POWER_MERGE: f64 = 1e-3;
/// Peaks within this fraction of the best inner value become candidates.
const PEAK_BAND: f64 = 0.1;

pub(crate) struct Pool {
    pub columns: Vec<(UavPosition, f64)>,
    pub rates: Vec<Vec<f64>>,
    /// Distinct locations, re-priced at every evaluation.
    pub sites: Vec<UavPosition>,
    radius: f64,
}

impl Pool {
    fn new(radius: f64) -> Pool {
        Pool { columns: Vec::new(), rates: Vec::new(), sites: Vec::new(), radius }
    }

    fn add(&mut self, c: &Candidate, scenario: &Scenario) -> bool {
        let near = |pos: &UavPosition| pos.distance(&c.position) <= self.radius;
        let dup = self
            .columns
            .iter()
            .any(|(pos, p)| near(pos) && (p - c.power).abs() <= POWER_MERGE * p.max(c.power));
        if dup {
            return false;
        }
        if !self.sites.iter().any(near) {
            self.sites.push(c.position);
        }
        self.columns.push((c.position, c.power));
        self.rates.push(timeshare::rate_table(&[(c.position, c.power)], scenario).remove(0));
        true
    }

    fn powers(&self) -> Vec<f64> {
        self.columns.iter().map(|c| c.1).collect()
    }

    pub(crate) fn solve(&self, scenario: &Scenario) -> Result<ColumnShare> {
        timeshare::solve_columns(&self.rates, &self.powers(), scenario.power_ave)
    }
}

struct Search<'a> {
    scenario: &'a Scenario,
    grid: &'a GridSpec,
    pool: Pool,
    best_value: f64,
    best_dual: NormalizedDual,
    primal_value: f64,
    capped: bool,
    trace: Vec<f64>,
}

impl<'a> Search<'a> {
    fn new(scenario: &'a Scenario, grid: &'a GridSpec) -> Self {
        let k = scenario.num_users();
        Search {
            scenario,
            grid,
            pool: Pool::new(grid.merge_radius(&scenario.user_bounding_box())),
            best_value: f64::INFINITY,
            best_dual: NormalizedDual { lambdas: vec![1.0 / k as f64; k], mu: 0.0 },
            primal_value: 0.0,
            capped: false,
            trace: Vec::new(),
        }
    }

    /// Dual value and `(rates, power)` of the inner maximizer. Returns
    /// whether new candidates entered the pool.
    fn evaluate(&mut self, dual: &NormalizedDual) -> (f64, Vec<f64>, f64, bool) {
        let res = inner::solve_normalized(dual, self.scenario, self.grid, &self.pool.sites);
        let value = res.value(dual, self.scenario);
        if value < self.best_value {
            self.capped = res.capped;
            self.best_value = value;
            self.best_dual = dual.clone();
        }
        self.trace.push(self.best_value);
        let mut added = false;
        let floor = res.best.value * (1.0 - PEAK_BAND);
        if res.best.value > 0.0 {
            added |= self.pool.add(&res.best, self.scenario);
            for c in res.peaks.iter().filter(|c| c.value >= floor) {
                added |= self.pool.add(c, self.scenario);
            }
        }
        let best = res.best;
        let rates = timeshare::rate_table(&[(best.position, best.power)], self.scenario).remove(0);
        (value, rates, best.power, added)
    }

    /// Time-shares the pool and records the primal value.
    fn check(&mut self) -> Option<ColumnShare> {
        if self.pool.columns.is_empty() {
            return None;
        }
        let share = self.pool.solve(self.scenario).ok()?;
        self.primal_value = self.primal_value.max(share.eta);
        Some(share)
    }

    fn closed(&self, tol: f64) -> bool {
        self.best_value - self.primal_value <= tol * self.best_value.abs()
    }
}

/// Upper bound on the normalized energy price at any dual optimum.
fn mu_bound(scenario: &Scenario) -> f64 {
    let h2 = scenario.altitude_sq();
    let gamma0 = scenario.gamma0();
    let p = scenario.power_ave;
    let slope = gamma0 / (LN_2 * h2);
    let value = channel::log2_1p(gamma0 * p / h2) / p;
    1.05 * slope.min(value)
}

fn to_dual(x: &DVector<f64>) -> NormalizedDual {
    let n = x.len();
    let mut lambdas: Vec<f64> = x.iter().take(n - 1).map(|v| v.max(0.0)).collect();
    let rest: f64 = lambdas.iter().sum();
    lambdas.push((1.0 - rest).max(0.0));
    let total: f64 = lambdas.iter().sum();
    lambdas.iter_mut().for_each(|l| *l /= total);
    NormalizedDual { lambdas, mu: x[n - 1].max(0.0) }
}

/// Most violated domain constraint `h(x) <= 0`, as `(h, gradient)`.
fn violation(x: &DVector<f64>, mu_max: f64) -> Option<(f64, DVector<f64>)> {
    let n = x.len();
    let mut worst: Option<(f64, DVector<f64>)> = None;
    let mut consider = |h: f64, g: DVector<f64>| {
        if h > 0.0 && worst.as_ref().map_or(true, |w| h > w.0) {
            worst = Some((h, g));
        }
    };
    for i in 0..n - 1 {
        let mut g = DVector::zeros(n);
        g[i] = -1.0;
        consider(-x[i], g);
    }
    let sum: f64 = x.iter().take(n - 1).sum();
    let mut g = DVector::from_element(n, 1.0);
    g[n - 1] = 0.0;
    consider(sum - 1.0, g);
    let mut g = DVector::zeros(n);
    g[n - 1] = -1.0;
    consider(-x[n - 1], g);
    let mut g = DVector::zeros(n);
    g[n - 1] = 1.0;
    consider(x[n - 1] - mu_max, g);
    worst
}

/// Deep-cut update of `{x + P^(1/2) u : |u| <= 1}` by `g'(y - x) <= -alpha sqrt(g'Pg)`.
fn cut(x: &mut DVector<f64>, p: &mut DMatrix<f64>, g: &DVector<f64>, alpha: f64) -> bool {
    let n = x.len() as f64;
    let pg = &*p * g;
    let gpg = g.dot(&pg);
    if !(gpg > 0.0) || !gpg.is_finite() {
        return false;
    }
    let alpha = alpha.clamp(0.0, 0.95);
    let gt = pg / gpg.sqrt();
    *x -= &gt * ((1.0 + n * alpha) / (n + 1.0));
    let scale = n * n * (1.0 - alpha * alpha) / (n * n - 1.0);
    let shrink = 2.0 * (1.0 + n * alpha) / ((n + 1.0) * (1.0 + alpha));
    *p = (&*p - &gt * gt.transpose() * shrink) * scale;
    let sym = (&*p + p.transpose()) * 0.5;
    *p = sym;
    true
}

/// Normalized multipliers read off the time-sharing LP.
fn lp_prices(share: &ColumnShare) -> Option<NormalizedDual> {
    let weight: f64 = share.rate_duals.iter().sum();
    (weight > 0.0).then(|| NormalizedDual {
        lambdas: share.rate_duals.iter().map(|y| y / weight).collect(),
        mu: share.energy_dual / weight,
    })
}

/// Reduced subgradient and reduced coordinates of a full dual point.
fn reduced(rates: &[f64], power_ave: f64, power: f64, dual: &NormalizedDual) -> (DVector<f64>, DVector<f64>) {
    let n = rates.len();
    let mut g = DVector::zeros(n);
    let mut at = DVector::zeros(n);
    for i in 0..n - 1 {
        g[i] = rates[i] - rates[n - 1];
        at[i] = dual.lambdas[i];
    }
    g[n - 1] = power_ave - power;
    at[n - 1] = dual.mu;
    (g, at)
}

fn longest_axis(p: &DMatrix<f64>) -> f64 {
    p.clone().symmetric_eigen().eigenvalues.max().max(0.0).sqrt()
}

/// Minimizes the dual function over the multipliers.
///
/// The returned point's value is within `cfg.tolerance` (relative) of the
/// best time-sharing of the collected candidates when `converged` is set.
pub fn solve_dual(scenario: &Scenario, grid: &GridSpec, cfg: &EllipsoidConfig) -> Result<DualSolution> {
    scenario.ensure_valid()?;
    grid.validate()?;
    cfg.validate()?;
    let mut s = Search::new(scenario, grid);
    // The best single hover point at full power seeds the pool, so the
    // time-shared plan never falls below static hovering.
    let seed = crate::alloc::benchmark_static(scenario, grid)?;
    s.pool.add(&Candidate { position: seed.position, power: seed.power, value: 0.0 }, scenario);
    let k = scenario.num_users();
    let mu_max = mu_bound(scenario);
    let power_ave = scenario.power_ave;
    let mut iterations = 0;

    if k == 1 {
        // One free variable: bisection on the sign of the price derivative.
        let (mut lo, mut hi) = (0.0, mu_max);
        while iterations < cfg.max_iters && hi - lo > cfg.axis_tolerance {
            let mid = 0.5 * (lo + hi);
            let (_, _, p, _) = s.evaluate(&NormalizedDual { lambdas: vec![1.0], mu: mid });
            iterations += 1;
            if power_ave - p > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
            if iterations % cfg.check_every == 0 {
                s.check();
                if s.closed(cfg.tolerance) {
                    break;
                }
            }
        }
    } else {
        let n = k;
        let mut x = DVector::from_element(n, 1.0 / k as f64);
        x[n - 1] = 0.5 * mu_max;
        let widen = 1.01 * (n as f64).sqrt();
        let mut p = DMatrix::zeros(n, n);
        let lam_radius = (1.0 - 1.0 / k as f64).max(1.0 / k as f64);
        for i in 0..n - 1 {
            p[(i, i)] = (widen * lam_radius).powi(2);
        }
        p[(n - 1, n - 1)] = (widen * 0.5 * mu_max).powi(2);
        let mut evaluations = 0;
        while iterations < cfg.max_iters {
            iterations += 1;
            let (g, alpha) = match violation(&x, mu_max) {
                Some((h, g)) => {
                    let a = h / g.dot(&(&p * &g)).sqrt();
                    (g, a)
                }
                None => {
                    let dual = to_dual(&x);
                    let (value, rates, power, _) = s.evaluate(&dual);
                    evaluations += 1;
                    let (g, _) = reduced(&rates, power_ave, power, &dual);
                    let depth = value - s.best_value;
                    let a = depth / g.dot(&(&p * &g)).sqrt();
                    if evaluations % cfg.check_every == 0 {
                        let share = s.check();
                        if s.closed(cfg.tolerance) {
                            break;
                        }
                        // The time-sharing LP prices suggest a point of their
                        // own; its subgradient cut is valid everywhere.
                        if let Some(lp_dual) = share.as_ref().and_then(lp_prices) {
                            let (v, r, pw, _) = s.evaluate(&lp_dual);
                            let (gl, at) = reduced(&r, power_ave, pw, &lp_dual);
                            let shift = v + gl.dot(&(&x - &at)) - s.best_value;
                            let a = shift / gl.dot(&(&p * &gl)).sqrt();
                            if a > -1.0 / n as f64 {
                                cut(&mut x, &mut p, &gl, a);
                            }
                        }
                    }
                    (g, a)
                }
            };
            if !cut(&mut x, &mut p, &g, alpha) {
                break;
            }
            if longest_axis(&p) < cfg.axis_tolerance {
                break;
            }
        }
    }

    let mut rounds = 0;
    while rounds < cfg.column_rounds {
        let Some(share) = s.check() else { break };
        if s.closed(cfg.tolerance) {
            break;
        }
        let Some(dual) = lp_prices(&share) else { break };
        rounds += 1;
        let (_, _, _, added) = s.evaluate(&dual);
        if !added {
            break;
        }
    }
    s.check();

    Ok(DualSolution {
        dual: DualPoint::from_normalized(&s.best_dual, scenario.period),
        value: s.best_value,
        primal_value: s.primal_value,
        iterations,
        column_rounds: rounds,
        converged: s.closed(cfg.tolerance),
        power_cap_active: s.capped,
        candidates: s.pool.columns.clone(),
        trace: s.trace,
    })
}

/// Evaluates the dual function at normalized multipliers, re-pricing `known`.
pub(crate) fn dual_at(
    dual: &NormalizedDual,
    scenario: &Scenario,
    grid: &GridSpec,
    known: &[UavPosition],
) -> f64 {
    inner::solve_normalized(dual, scenario, grid, known).value(dual, scenario)
}
