//! Log-barrier Newton method for the joint hover-duration / energy / flight
//! power program.
//!
//! All quantities are normalized by the mission period: hover time shares
//! `w` sum to `hover_share`, hover energies `e` are Joules per second of
//! mission, and each flight slot takes `slot_share` of the period. With
//! `u = alpha * e / w` the hover contribution `w * log2(1 + alpha e / w)` is
//! the perspective of a concave function, so the program
//!
//! ```text
//! maximize  eta
//! s.t.      sum_phi w_phi log2(1 + a_{k,phi} e_phi / w_phi)
//!             + slot_share * sum_j log2(1 + b_{k,j} q_j)  >= eta   for all k
//!           sum_phi e_phi + slot_share * sum_j q_j  <=  power_ave
//!           sum_phi w_phi = hover_share,   w, e, q, eta >= 0
//! ```
//!
//! is convex. The barrier Hessian is block diagonal (2x2 per hover location,
//! scalar per slot) plus a rank `K + 1` term from the coupling constraints,
//! so each Newton system is solved through the Woodbury identity with a
//! `(K + 1) x (K + 1)` capacitance matrix.
//!
//! Far along the central path the constraint weights dwarf everything else
//! and the Newton systems lose accuracy. The barrier therefore stops at a
//! moderate gap and hands its point to an active-set Newton solve of the
//! KKT equations, which returns explicit multipliers and a near-exact
//! optimum.

use std::f64::consts::LN_2;

use nalgebra::{DMatrix, DVector};

use crate::power;

/// Residual a polished solution must reach to replace the barrier one.
const POLISH_KKT: f64 = 1e-9;

#[derive(Debug, Clone)]
pub(crate) struct JointProblem {
    /// `gamma0 / d^2` from each hover location, indexed `[user][location]`.
    pub hover_gains: Vec<Vec<f64>>,
    /// Same for each flight slot, `[user][slot]`.
    pub slot_gains: Vec<Vec<f64>>,
    pub hover_share: f64,
    pub slot_share: f64,
    pub power_ave: f64,
}

/// First-order optimality residuals of a barrier solution.
#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct KktReport {
    pub stationarity: f64,
    pub complementarity: f64,
    pub primal_infeasibility: f64,
}

impl KktReport {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.complementarity)
            .max(self.primal_infeasibility)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct JointOptimum {
    pub hover_time: Vec<f64>,
    pub hover_energy: Vec<f64>,
    pub slot_power: Vec<f64>,
    pub eta: f64,
    pub rate_duals: Vec<f64>,
    pub energy_dual: f64,
    pub kkt: KktReport,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct BarrierSettings {
    /// Target for the barrier duality gap `m / t`.
    pub gap: f64,
    pub growth: f64,
    pub max_newton: usize,
}

impl Default for BarrierSettings {
    fn default() -> Self {
        BarrierSettings {
            gap: 1e-7,
            growth: 10.0,
            max_newton: 2000,
        }
    }
}

struct Layout {
    users: usize,
    hovers: usize,
    slots: usize,
}

impl Layout {
    fn n(&self) -> usize {
        2 * self.hovers + self.slots + 1
    }
    fn w(&self, phi: usize) -> usize {
        phi
    }
    fn e(&self, phi: usize) -> usize {
        self.hovers + phi
    }
    fn q(&self, j: usize) -> usize {
        2 * self.hovers + j
    }
    fn eta(&self) -> usize {
        2 * self.hovers + self.slots
    }
    /// Weight of the non-negativity barriers. Keeping their total weight at
    /// one makes the gap bound independent of the number of flight slots.
    fn bound_weight(&self) -> f64 {
        1.0 / self.n() as f64
    }
}

impl JointProblem {
    fn layout(&self) -> Layout {
        let hovers = if self.hover_share > 0.0 {
            self.hover_gains.first().map_or(0, Vec::len)
        } else {
            0
        };
        Layout {
            users: self.hover_gains.len().max(self.slot_gains.len()),
            hovers,
            slots: self.slot_gains.first().map_or(0, Vec::len),
        }
    }

    /// Per-user normalized average rates at `z`.
    fn rates(&self, lay: &Layout, z: &[f64]) -> Vec<f64> {
        (0..lay.users)
            .map(|k| {
                let mut u = 0.0;
                for phi in 0..lay.hovers {
                    let w = z[lay.w(phi)];
                    if w > 0.0 {
                        u += w * (self.hover_gains[k][phi] * z[lay.e(phi)] / w).ln_1p();
                    }
                }
                let mut s = 0.0;
                for j in 0..lay.slots {
                    s += (self.slot_gains[k][j] * z[lay.q(j)]).ln_1p();
                }
                (u + self.slot_share * s) / LN_2
            })
            .collect()
    }

    fn energy_slack(&self, lay: &Layout, z: &[f64]) -> f64 {
        let e: f64 = (0..lay.hovers).map(|phi| z[lay.e(phi)]).sum();
        let q: f64 = (0..lay.slots).map(|j| z[lay.q(j)]).sum();
        self.power_ave - e - self.slot_share * q
    }

    /// Barrier value, or `None` outside the strict interior.
    fn barrier(&self, lay: &Layout, z: &[f64], t: f64) -> Option<f64> {
        if z.iter().any(|&v| !(v > 0.0)) {
            return None;
        }
        let eta = z[lay.eta()];
        let ce = self.energy_slack(lay, z);
        if !(ce > 0.0) {
            return None;
        }
        let mut val = -t * eta - ce.ln();
        for u in self.rates(lay, z) {
            let c = u - eta;
            if !(c > 0.0) {
                return None;
            }
            val -= c.ln();
        }
        val -= lay.bound_weight() * z.iter().map(|v| v.ln()).sum::<f64>();
        Some(val)
    }

    pub(crate) fn solve(&self, settings: &BarrierSettings) -> JointOptimum {
        let lay = self.layout();
        let n = lay.n();
        if !(self.power_ave > 0.0) || lay.users == 0 {
            return JointOptimum {
                hover_time: even_split(lay.hovers, self.hover_share),
                hover_energy: vec![0.0; lay.hovers],
                slot_power: vec![0.0; lay.slots],
                eta: 0.0,
                rate_duals: vec![0.0; lay.users],
                energy_dual: 0.0,
                kkt: KktReport::default(),
                converged: true,
            };
        }

        // Strictly feasible start: half the budget everywhere.
        let mut z = vec![0.0; n];
        for phi in 0..lay.hovers {
            let w = self.hover_share / lay.hovers as f64;
            z[lay.w(phi)] = w;
            z[lay.e(phi)] = 0.5 * self.power_ave * w;
        }
        for j in 0..lay.slots {
            z[lay.q(j)] = 0.5 * self.power_ave;
        }
        let u0 = self.rates(&lay, &z);
        z[lay.eta()] = 0.5 * u0.iter().copied().fold(f64::INFINITY, f64::min);

        let m_ineq = (lay.users + 2) as f64;
        let mut t = m_ineq / z[lay.eta()].max(1e-12);
        let mut newton_left = settings.max_newton;
        let mut converged = false;
        let mut last_nu = 0.0;
        let mut centered_at = None;
        loop {
            let mut trial = z.clone();
            if !self.center(&lay, &mut trial, t, &mut newton_left, &mut last_nu) {
                break;
            }
            z = trial;
            centered_at = Some(t);
            if m_ineq / t <= settings.gap {
                converged = true;
                break;
            }
            if newton_left == 0 {
                break;
            }
            t *= settings.growth;
        }
        // Multipliers are only meaningful on the central path.
        let t = centered_at.unwrap_or(t);

        let rates = self.rates(&lay, &z);
        let eta = z[lay.eta()];
        let ce = self.energy_slack(&lay, &z);
        let rate_duals: Vec<f64> = rates.iter().map(|u| 1.0 / (t * (u - eta))).collect();
        let energy_dual = 1.0 / (t * ce);
        let kkt = self.kkt(&lay, &z, t, &rate_duals, energy_dual);
        let barrier = JointOptimum {
            hover_time: (0..lay.hovers).map(|phi| z[lay.w(phi)]).collect(),
            hover_energy: (0..lay.hovers).map(|phi| z[lay.e(phi)]).collect(),
            slot_power: (0..lay.slots).map(|j| z[lay.q(j)]).collect(),
            eta,
            rate_duals,
            energy_dual,
            kkt,
            converged,
        };
        // Several starting guesses for the active set.
        [1.0, 1e-2, 1e2, 1e-4, 1e4]
            .iter()
            .filter_map(|&scale| self.polish(&lay, &z, t, &barrier, scale))
            .find(|p| p.kkt.max() <= POLISH_KKT && p.eta >= barrier.eta - POLISH_KKT)
            .unwrap_or(barrier)
    }

    /// Active-set Newton refinement of a barrier solution.
    ///
    /// Constraints whose barrier multiplier is significant are treated as
    /// equalities, variables pressed against zero are fixed there, and the
    /// resulting square KKT system is solved by Newton's method. The active
    /// set is corrected a few times when signs come out wrong. `scale`
    /// shifts the thresholds used for the initial guess.
    fn polish(&self, lay: &Layout, z0: &[f64], t: f64, start: &JointOptimum, scale: f64) -> Option<JointOptimum> {
        let n = lay.n();
        let bw = lay.bound_weight();
        let eta_i = lay.eta();
        let mut z = z0.to_vec();
        // Bound multiplier bw / (t z) exceeding z marks an active bound.
        let mut fixed: Vec<bool> = (0..n).map(|i| i != eta_i && z[i] * z[i] * t < bw * scale).collect();
        for phi in 0..lay.hovers {
            if fixed[lay.w(phi)] {
                fixed[lay.e(phi)] = true;
            }
        }
        // Flight powers follow directly from the multipliers; this settles
        // which slots stay silent far better than the barrier point does.
        for j in 0..lay.slots {
            let gains: Vec<f64> = (0..lay.users).map(|k| self.slot_gains[k][j]).collect();
            let (q, _) = power::optimal_power(&start.rate_duals, &gains, start.energy_dual, f64::INFINITY);
            fixed[lay.q(j)] = q <= 0.0;
            if q > 0.0 {
                z[lay.q(j)] = q;
            }
        }
        // Same test for the rate constraints: multiplier above slack.
        let rates0 = self.rates(lay, &z);
        let mut active: Vec<bool> = start
            .rate_duals
            .iter()
            .zip(&rates0)
            .map(|(&l, &u)| l * scale > u - z[eta_i])
            .collect();
        let mut lam = start.rate_duals.clone();
        let mut mu = start.energy_dual;
        let grad_e = self.energy_gradient(lay);
        let mut nu = {
            let (grads, _, _) = self.derivatives(lay, &z);
            let free_w: Vec<usize> = (0..lay.hovers).filter(|&phi| !fixed[lay.w(phi)]).collect();
            if free_w.is_empty() {
                0.0
            } else {
                free_w
                    .iter()
                    .map(|&phi| (0..lay.users).map(|k| lam[k] * grads[k][lay.w(phi)]).sum::<f64>())
                    .sum::<f64>()
                    / free_w.len() as f64
            }
        };

        for _ in 0..100 {
            for i in 0..n {
                if fixed[i] {
                    z[i] = 0.0;
                }
            }
            for k in 0..lay.users {
                if !active[k] {
                    lam[k] = 0.0;
                }
            }
            let free: Vec<usize> = (0..n).filter(|&i| !fixed[i]).collect();
            let act: Vec<usize> = (0..lay.users).filter(|&k| active[k]).collect();
            let has_eq = (0..lay.hovers).any(|phi| !fixed[lay.w(phi)]);
            let nf = free.len();
            let dim = nf + act.len() + 1 + usize::from(has_eq);
            let mut ok = false;
            for _ in 0..60 {
                let (grads, hover_curv, slot_curv) = self.derivatives(lay, &z);
                let rates = self.rates(lay, &z);
                let mut f = DVector::zeros(dim);
                let mut jac = DMatrix::zeros(dim, dim);
                let mut col_of = vec![usize::MAX; n];
                for (r, &i) in free.iter().enumerate() {
                    col_of[i] = r;
                }
                for (r, &i) in free.iter().enumerate() {
                    let mut v = if i == eta_i { 1.0 } else { 0.0 };
                    for &k in &act {
                        v += lam[k] * grads[k][i];
                    }
                    v += mu * grad_e[i];
                    if has_eq && i < lay.hovers {
                        v -= nu;
                    }
                    f[r] = v;
                }
                // Hessian of the Lagrangian over the free variables.
                for phi in 0..lay.hovers {
                    let (iw, ie) = (col_of[lay.w(phi)], col_of[lay.e(phi)]);
                    if iw == usize::MAX {
                        continue;
                    }
                    let v = z[lay.e(phi)] / z[lay.w(phi)];
                    let s: f64 = act.iter().map(|&k| lam[k] * hover_curv[k][phi]).sum();
                    jac[(iw, iw)] += s * v * v;
                    if ie != usize::MAX {
                        jac[(iw, ie)] -= s * v;
                        jac[(ie, iw)] -= s * v;
                        jac[(ie, ie)] += s;
                    }
                }
                for j in 0..lay.slots {
                    let iq = col_of[lay.q(j)];
                    if iq != usize::MAX {
                        jac[(iq, iq)] += act.iter().map(|&k| lam[k] * slot_curv[k][j]).sum::<f64>();
                    }
                }
                for (a, &k) in act.iter().enumerate() {
                    let row = nf + a;
                    f[row] = rates[k] - z[eta_i];
                    for (r, &i) in free.iter().enumerate() {
                        jac[(row, r)] = grads[k][i];
                        jac[(r, row)] = grads[k][i];
                    }
                }
                let er = nf + act.len();
                f[er] = self.energy_slack(lay, &z);
                for (r, &i) in free.iter().enumerate() {
                    jac[(er, r)] = grad_e[i];
                    jac[(r, er)] = grad_e[i];
                }
                if has_eq {
                    let qr = er + 1;
                    let total: f64 = (0..lay.hovers).map(|phi| z[lay.w(phi)]).sum();
                    f[qr] = self.hover_share - total;
                    for (r, &i) in free.iter().enumerate() {
                        if i < lay.hovers {
                            jac[(qr, r)] = -1.0;
                            jac[(r, qr)] = -1.0;
                        }
                    }
                }
                let norm = f.amax();
                if !norm.is_finite() {
                    return None;
                }
                if norm <= 1e-13 {
                    ok = true;
                    break;
                }
                let rhs = -&f;
                // Rays of a perspective term leave the Hessian singular; a
                // minimum-norm step handles the resulting degenerate systems.
                let step = match jac.clone().lu().solve(&rhs) {
                    Some(step) if step.iter().all(|v| v.is_finite()) => step,
                    _ => jac.svd(true, true).solve(&rhs, 1e-14).ok()?,
                };
                if step.iter().any(|v| !v.is_finite()) {
                    return None;
                }
                // Stop at the first bound hit and pin that variable there.
                let mut alpha = 1.0;
                let mut blocking = None;
                for (r, &i) in free.iter().enumerate() {
                    if i != eta_i && step[r] < 0.0 && z[i] + step[r] <= 0.0 {
                        let a = -z[i] / step[r];
                        if a < alpha {
                            alpha = a;
                            blocking = Some(i);
                        }
                    }
                }
                for (r, &i) in free.iter().enumerate() {
                    z[i] += alpha * step[r];
                }
                for (a, &k) in act.iter().enumerate() {
                    lam[k] += alpha * step[nf + a];
                }
                mu += alpha * step[er];
                if has_eq {
                    nu += alpha * step[er + 1];
                }
                if let Some(i) = blocking {
                    z[i] = 0.0;
                    break;
                }
            }

            // Active-set corrections.
            let mut changed = false;
            for phi in 0..lay.hovers {
                let (iw, ie) = (lay.w(phi), lay.e(phi));
                if !fixed[iw] && z[iw] <= 0.0 {
                    fixed[iw] = true;
                    fixed[ie] = true;
                    changed = true;
                } else if !fixed[ie] && z[ie] <= 0.0 {
                    fixed[ie] = true;
                    changed = true;
                }
            }
            for j in 0..lay.slots {
                let iq = lay.q(j);
                if !fixed[iq] && z[iq] <= 0.0 {
                    fixed[iq] = true;
                    changed = true;
                }
            }
            for k in 0..lay.users {
                if active[k] && lam[k] < 0.0 {
                    active[k] = false;
                    changed = true;
                }
            }
            if changed {
                continue;
            }
            if !ok {
                return None;
            }
            let rates = self.rates(lay, &z);
            for k in 0..lay.users {
                if !active[k] && rates[k] < z[eta_i] {
                    active[k] = true;
                    lam[k] = 0.0;
                    changed = true;
                }
            }
            // A fixed variable whose multiplier has the wrong sign wants to
            // move off its bound. An unused hover location is worth reopening
            // when its best power beats the duration multiplier.
            let (grads, _, _) = self.derivatives_at_bounds(lay, &z);
            for phi in 0..lay.hovers {
                let (iw, ie) = (lay.w(phi), lay.e(phi));
                if fixed[iw] {
                    let (value, v) = self.reopen_value(phi, &active, &lam, mu);
                    if value - nu > 1e-10 {
                        fixed[iw] = false;
                        fixed[ie] = v <= 0.0;
                        z[iw] = 1e-6 * self.hover_share;
                        z[ie] = v * z[iw];
                        changed = true;
                    }
                } else if fixed[ie] && act_sum(&active, &lam, &grads, ie) + mu * grad_e[ie] > 1e-10 {
                    fixed[ie] = false;
                    z[ie] = 1e-9 * z[iw];
                    changed = true;
                }
            }
            for j in 0..lay.slots {
                let iq = lay.q(j);
                if fixed[iq] && act_sum(&active, &lam, &grads, iq) + mu * grad_e[iq] > 1e-10 {
                    fixed[iq] = false;
                    z[iq] = 1e-9;
                    changed = true;
                }
            }
            if changed {
                continue;
            }
            if mu < 0.0 {
                return None;
            }
            let kkt = self.kkt_exact(lay, &z, &fixed, &lam, mu, nu);
            return Some(JointOptimum {
                hover_time: (0..lay.hovers).map(|phi| z[lay.w(phi)]).collect(),
                hover_energy: (0..lay.hovers).map(|phi| z[lay.e(phi)]).collect(),
                slot_power: (0..lay.slots).map(|j| z[lay.q(j)]).collect(),
                eta: z[eta_i],
                rate_duals: lam,
                energy_dual: mu,
                kkt,
                converged: true,
            });
        }
        None
    }

    /// Rate gradients that stay finite at zero-duration hovers, using the
    /// limits `0` for the duration and `a / ln 2` for the energy.
    fn derivatives_at_bounds(&self, lay: &Layout, z: &[f64]) -> (Vec<Vec<f64>>, (), ()) {
        let mut grads = vec![vec![0.0; lay.n()]; lay.users];
        for k in 0..lay.users {
            for phi in 0..lay.hovers {
                let a = self.hover_gains[k][phi];
                let w = z[lay.w(phi)];
                if w > 0.0 {
                    let v = z[lay.e(phi)] / w;
                    let one = 1.0 + a * v;
                    grads[k][lay.w(phi)] = ((a * v).ln_1p() - a * v / one) / LN_2;
                    grads[k][lay.e(phi)] = a / (LN_2 * one);
                } else {
                    grads[k][lay.w(phi)] = 0.0;
                    grads[k][lay.e(phi)] = a / LN_2;
                }
            }
            for j in 0..lay.slots {
                let b = self.slot_gains[k][j];
                grads[k][lay.q(j)] = self.slot_share * b / (LN_2 * (1.0 + b * z[lay.q(j)]));
            }
            grads[k][lay.eta()] = -1.0;
        }
        (grads, (), ())
    }

    /// Best `sum_k lam_k log2(1 + a_k v) - mu v` over powers `v` for a hover
    /// location, with the maximizing power.
    fn reopen_value(&self, phi: usize, active: &[bool], lam: &[f64], mu: f64) -> (f64, f64) {
        let weights: Vec<f64> = (0..lam.len()).map(|k| if active[k] { lam[k] } else { 0.0 }).collect();
        let gains: Vec<f64> = (0..lam.len()).map(|k| self.hover_gains[k][phi]).collect();
        let cap = 1e6 * self.power_ave / self.hover_share.max(1e-12);
        let (v, _) = power::optimal_power(&weights, &gains, mu, cap);
        (power::weighted_value(&weights, &gains, mu, v), v)
    }

    /// KKT residuals of a point with explicit multipliers; fixed variables
    /// sit at zero with an implied non-negative bound multiplier.
    fn kkt_exact(&self, lay: &Layout, z: &[f64], fixed: &[bool], lam: &[f64], mu: f64, nu: f64) -> KktReport {
        let n = lay.n();
        let (grads, _, _) = self.derivatives_at_bounds(lay, z);
        let grad_e = self.energy_gradient(lay);
        let all = vec![true; lay.users];
        let mut stationarity: f64 = 0.0;
        for i in 0..n {
            let mut r = if i == lay.eta() { 1.0 } else { 0.0 };
            r += act_sum(&all, lam, &grads, i) + mu * grad_e[i];
            if i < lay.hovers {
                r -= nu;
            }
            let viol = if !fixed[i] {
                r.abs()
            } else if i < lay.hovers {
                // A closed hover is judged by its best reopening value.
                (self.reopen_value(i, &all, lam, mu).0 - nu).max(0.0)
            } else if i < 2 * lay.hovers && fixed[i - lay.hovers] {
                0.0
            } else {
                // At a bound only an upward pull violates optimality.
                r.max(0.0)
            };
            stationarity = stationarity.max(viol);
        }
        let rates = self.rates(lay, z);
        let eta = z[lay.eta()];
        let ce = self.energy_slack(lay, z);
        let mut complementarity = (mu * ce).abs();
        let mut infeas = (-ce).max(0.0);
        for k in 0..lay.users {
            complementarity = complementarity.max((lam[k] * (rates[k] - eta)).abs());
            infeas = infeas.max(eta - rates[k]).max(-lam[k]);
        }
        infeas = infeas.max(-mu);
        for &v in z {
            infeas = infeas.max(-v);
        }
        if lay.hovers > 0 {
            let total: f64 = (0..lay.hovers).map(|phi| z[lay.w(phi)]).sum();
            infeas = infeas.max((total - self.hover_share).abs());
        }
        KktReport {
            stationarity,
            complementarity,
            primal_infeasibility: infeas.max(0.0),
        }
    }

    /// Gradients of every user's rate, `[user][variable]`, plus the
    /// per-location curvature weights and per-slot second derivatives.
    fn derivatives(&self, lay: &Layout, z: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let n = lay.n();
        let mut grads = vec![vec![0.0; n]; lay.users];
        // hover_curv[k][phi]: coefficient s with Hessian block s * [[v^2, -v], [-v, 1]].
        let mut hover_curv = vec![vec![0.0; lay.hovers]; lay.users];
        let mut slot_curv = vec![vec![0.0; lay.slots]; lay.users];
        for k in 0..lay.users {
            for phi in 0..lay.hovers {
                let a = self.hover_gains[k][phi];
                let w = z[lay.w(phi)];
                let v = z[lay.e(phi)] / w;
                let one = 1.0 + a * v;
                grads[k][lay.w(phi)] = ((a * v).ln_1p() - a * v / one) / LN_2;
                grads[k][lay.e(phi)] = a / (LN_2 * one);
                hover_curv[k][phi] = -a * a / (LN_2 * one * one) / w;
            }
            for j in 0..lay.slots {
                let b = self.slot_gains[k][j];
                let one = 1.0 + b * z[lay.q(j)];
                grads[k][lay.q(j)] = self.slot_share * b / (LN_2 * one);
                slot_curv[k][j] = -self.slot_share * b * b / (LN_2 * one * one);
            }
            grads[k][lay.eta()] = -1.0;
        }
        (grads, hover_curv, slot_curv)
    }

    fn energy_gradient(&self, lay: &Layout) -> Vec<f64> {
        let mut g = vec![0.0; lay.n()];
        for phi in 0..lay.hovers {
            g[lay.e(phi)] = -1.0;
        }
        for j in 0..lay.slots {
            g[lay.q(j)] = -self.slot_share;
        }
        g
    }

    /// Newton centering at barrier weight `t`. Returns whether the Newton
    /// decrement reached its threshold.
    fn center(&self, lay: &Layout, z: &mut Vec<f64>, t: f64, budget: &mut usize, nu_out: &mut f64) -> bool {
        let n = lay.n();
        let grad_e = self.energy_gradient(lay);
        while *budget > 0 {
            *budget -= 1;
            let rates = self.rates(lay, z);
            let eta = z[lay.eta()];
            let c: Vec<f64> = rates.iter().map(|u| u - eta).collect();
            let ce = self.energy_slack(lay, z);
            let (grads, hover_curv, slot_curv) = self.derivatives(lay, z);

            let mut g = vec![0.0; n];
            g[lay.eta()] -= t;
            for k in 0..lay.users {
                for i in 0..n {
                    g[i] -= grads[k][i] / c[k];
                }
            }
            let bw = lay.bound_weight();
            for i in 0..n {
                g[i] -= grad_e[i] / ce + bw / z[i];
            }

            // Block-diagonal part.
            let mut hover_blocks = Vec::with_capacity(lay.hovers);
            let mut hover_fwd = Vec::with_capacity(lay.hovers);
            for phi in 0..lay.hovers {
                let w = z[lay.w(phi)];
                let e = z[lay.e(phi)];
                let v = e / w;
                let weight: f64 = (0..lay.users).map(|k| -hover_curv[k][phi] / c[k]).sum();
                let a11 = weight * v * v + bw / (w * w);
                let a12 = -weight * v;
                let a22 = weight + bw / (e * e);
                let det = a11 * a22 - a12 * a12;
                hover_fwd.push([a11, a12, a22]);
                hover_blocks.push([a22 / det, -a12 / det, a11 / det]);
            }
            let slot_diag: Vec<f64> = (0..lay.slots)
                .map(|j| {
                    let q = z[lay.q(j)];
                    (0..lay.users).map(|k| -slot_curv[k][j] / c[k]).sum::<f64>() + bw / (q * q)
                })
                .collect();
            let slot_inv: Vec<f64> = slot_diag.iter().map(|d| 1.0 / d).collect();
            let eta_inv = eta * eta / bw;
            let d_inv = |r: &[f64]| -> Vec<f64> {
                let mut out = vec![0.0; n];
                for phi in 0..lay.hovers {
                    let [b11, b12, b22] = hover_blocks[phi];
                    let (rw, re) = (r[lay.w(phi)], r[lay.e(phi)]);
                    out[lay.w(phi)] = b11 * rw + b12 * re;
                    out[lay.e(phi)] = b12 * rw + b22 * re;
                }
                for j in 0..lay.slots {
                    out[lay.q(j)] = slot_inv[j] * r[lay.q(j)];
                }
                out[lay.eta()] = eta_inv * r[lay.eta()];
                out
            };

            // Low-rank part: columns grad c_k and grad c_E with weights 1/c^2.
            let m = lay.users + 1;
            let mut cols: Vec<&[f64]> = grads.iter().map(Vec::as_slice).collect();
            cols.push(&grad_e);
            let slack: Vec<f64> = c.iter().copied().chain(std::iter::once(ce)).collect();
            let dm: Vec<Vec<f64>> = cols.iter().map(|col| d_inv(col)).collect();
            let mut cap = DMatrix::zeros(m, m);
            for a in 0..m {
                for b in a..m {
                    let v: f64 = cols[a].iter().zip(&dm[b]).map(|(x, y)| x * y).sum();
                    cap[(a, b)] = v;
                    cap[(b, a)] = v;
                }
                cap[(a, a)] += slack[a] * slack[a];
            }
            let cap_lu = cap.lu();
            let apply_h = |x: &[f64]| -> Vec<f64> {
                let mut out = vec![0.0; n];
                for phi in 0..lay.hovers {
                    let [a11, a12, a22] = hover_fwd[phi];
                    let (xw, xe) = (x[lay.w(phi)], x[lay.e(phi)]);
                    out[lay.w(phi)] = a11 * xw + a12 * xe;
                    out[lay.e(phi)] = a12 * xw + a22 * xe;
                }
                for j in 0..lay.slots {
                    out[lay.q(j)] = slot_diag[j] * x[lay.q(j)];
                }
                out[lay.eta()] = x[lay.eta()] / eta_inv;
                for a in 0..m {
                    let p: f64 = cols[a].iter().zip(x).map(|(u, v)| u * v).sum::<f64>() / (slack[a] * slack[a]);
                    for i in 0..n {
                        out[i] += cols[a][i] * p;
                    }
                }
                out
            };
            let solve_once = |r: &[f64]| -> Vec<f64> {
                let dr = d_inv(r);
                let proj = DVector::from_iterator(m, cols.iter().map(|col| col.iter().zip(&dr).map(|(x, y)| x * y).sum::<f64>()));
                let coef = cap_lu.solve(&proj).unwrap_or_else(|| DVector::zeros(m));
                let mut out = dr;
                for a in 0..m {
                    for i in 0..n {
                        out[i] -= dm[a][i] * coef[a];
                    }
                }
                out
            };
            // Woodbury is not backward stable once the constraint weights
            // grow large; two rounds of iterative refinement recover it.
            let solve_h = |r: &[f64]| -> Vec<f64> {
                let mut x = solve_once(r);
                for _ in 0..2 {
                    let hx = apply_h(&x);
                    let res: Vec<f64> = r.iter().zip(&hx).map(|(a, b)| a - b).collect();
                    let dx = solve_once(&res);
                    x.iter_mut().zip(&dx).for_each(|(a, b)| *a += b);
                }
                x
            };

            let neg_g: Vec<f64> = g.iter().map(|v| -v).collect();
            let mut dz = solve_h(&neg_g);
            if lay.hovers > 0 {
                let mut a = vec![0.0; n];
                for phi in 0..lay.hovers {
                    a[lay.w(phi)] = 1.0;
                }
                let ha = solve_h(&a);
                let au: f64 = (0..lay.hovers).map(|phi| dz[lay.w(phi)]).sum();
                let aha: f64 = (0..lay.hovers).map(|phi| ha[lay.w(phi)]).sum();
                let nu = au / aha;
                for i in 0..n {
                    dz[i] -= nu * ha[i];
                }
                *nu_out = nu;
            }

            let decrement: f64 = -g.iter().zip(&dz).map(|(a, b)| a * b).sum::<f64>();
            if !decrement.is_finite() || decrement < -1e-10 {
                return false;
            }
            // Round-off can leave a tiny negative decrement at the center.
            if decrement <= 1e-10 {
                return true;
            }

            let mut step: f64 = 1.0;
            for i in 0..n {
                if dz[i] < 0.0 {
                    step = step.min(-0.99 * z[i] / dz[i]);
                }
            }
            let base = self.barrier(lay, z, t).unwrap_or(f64::INFINITY);
            let slope = -decrement;
            let mut accepted = false;
            for _ in 0..80 {
                let trial: Vec<f64> = z.iter().zip(&dz).map(|(a, b)| a + step * b).collect();
                if let Some(val) = self.barrier(lay, &trial, t) {
                    let armijo = val <= base + 0.01 * step * slope;
                    // Near the center the barrier value carries too few
                    // significant digits at large t to judge a step, so any
                    // strictly feasible Newton step is taken.
                    let quadratic = decrement < 0.1;
                    if armijo || quadratic {
                        *z = trial;
                        accepted = true;
                        break;
                    }
                }
                step *= 0.5;
            }
            if lay.hovers > 0 {
                // Re-impose the duration equality against round-off drift.
                let total: f64 = (0..lay.hovers).map(|phi| z[lay.w(phi)]).sum();
                let scale = self.hover_share / total;
                for phi in 0..lay.hovers {
                    z[lay.w(phi)] *= scale;
                }
            }
            if !accepted {
                return decrement <= 1e-6;
            }
        }
        false
    }

    fn kkt(&self, lay: &Layout, z: &[f64], t: f64, rate_duals: &[f64], energy_dual: f64) -> KktReport {
        let n = lay.n();
        let (grads, _, _) = self.derivatives(lay, z);
        let grad_e = self.energy_gradient(lay);
        let mut r = vec![0.0; n];
        r[lay.eta()] = 1.0;
        for k in 0..lay.users {
            for i in 0..n {
                r[i] += rate_duals[k] * grads[k][i];
            }
        }
        for i in 0..n {
            r[i] += energy_dual * grad_e[i] + lay.bound_weight() / (t * z[i]);
        }
        if lay.hovers > 0 {
            let nu: f64 = (0..lay.hovers).map(|phi| r[lay.w(phi)]).sum::<f64>() / lay.hovers as f64;
            for phi in 0..lay.hovers {
                r[lay.w(phi)] -= nu;
            }
        }
        let stationarity = r.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        let rates = self.rates(lay, z);
        let eta = z[lay.eta()];
        let mut infeas = (self.energy_slack(lay, z)).min(0.0).abs();
        for u in &rates {
            infeas = infeas.max((eta - u).max(0.0));
        }
        if lay.hovers > 0 {
            let total: f64 = (0..lay.hovers).map(|phi| z[lay.w(phi)]).sum();
            infeas = infeas.max((total - self.hover_share).abs());
        }
        KktReport {
            stationarity,
            complementarity: 1.0 / t,
            primal_infeasibility: infeas,
        }
    }
}

fn act_sum(active: &[bool], lam: &[f64], grads: &[Vec<f64>], i: usize) -> f64 {
    (0..lam.len()).filter(|&k| active[k]).map(|k| lam[k] * grads[k][i]).sum()
}

fn even_split(count: usize, total: f64) -> Vec<f64> {
    if count == 0 {
        Vec::new()
    } else {
        vec![total / count as f64; count]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rate(g: f64, p: f64) -> f64 {
        (g * p).ln_1p() / LN_2
    }

    #[test]
    fn single_location_uses_full_budget() {
        let prob = JointProblem {
            hover_gains: vec![vec![10.0], vec![2.0]],
            slot_gains: vec![vec![], vec![]],
            hover_share: 1.0,
            slot_share: 0.0,
            power_ave: 1.0,
        };
        let sol = prob.solve(&BarrierSettings::default());
        assert!(sol.converged);
        assert!((sol.eta - rate(2.0, 1.0)).abs() < 1e-8, "{}", sol.eta);
        assert!((sol.hover_time[0] - 1.0).abs() < 1e-12);
        assert!(sol.kkt.max() < 1e-6, "{:?} {}", sol.kkt, sol.converged);
    }

    #[test]
    fn symmetric_pair_is_symmetric() {
        let prob = JointProblem {
            hover_gains: vec![vec![10.0, 0.1], vec![0.1, 10.0]],
            slot_gains: vec![vec![], vec![]],
            hover_share: 1.0,
            slot_share: 0.0,
            power_ave: 1.0,
        };
        let sol = prob.solve(&BarrierSettings::default());
        assert!((sol.hover_time[0] - 0.5).abs() < 1e-6);
        assert!((sol.hover_energy[0] - sol.hover_energy[1]).abs() < 1e-6);
        // Equal split at full budget: each location gets power 1 for half the time.
        let expected = 0.5 * (rate(10.0, 1.0) + rate(0.1, 1.0));
        assert!((sol.eta - expected).abs() < 1e-7);
    }

    #[test]
    fn flight_only() {
        let prob = JointProblem {
            hover_gains: vec![vec![5.0], vec![5.0]],
            slot_gains: vec![vec![4.0, 1.0], vec![1.0, 4.0]],
            hover_share: 0.0,
            slot_share: 0.5,
            power_ave: 1.0,
        };
        let sol = prob.solve(&BarrierSettings::default());
        assert!(sol.hover_time.is_empty());
        // Symmetric: both slots at full average power.
        assert!((sol.slot_power[0] - 1.0).abs() < 1e-6);
        let expected = 0.5 * (rate(4.0, 1.0) + rate(1.0, 1.0));
        assert!((sol.eta - expected).abs() < 1e-7);
        assert!(sol.kkt.max() < 1e-6, "{:?} {}", sol.kkt, sol.converged);
    }

    #[test]
    fn zero_budget() {
        let prob = JointProblem {
            hover_gains: vec![vec![5.0, 1.0]],
            slot_gains: vec![vec![2.0]],
            hover_share: 0.5,
            slot_share: 0.5,
            power_ave: 0.0,
        };
        let sol = prob.solve(&BarrierSettings::default());
        assert_eq!(sol.eta, 0.0);
        assert_eq!(sol.hover_time, vec![0.25, 0.25]);
    }

    fn random_problem(seed: u64, users: usize, hovers: usize, slots: usize) -> JointProblem {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut gain = |_: usize| 10f64.powf(rng.gen_range(-2.0..1.5));
        let hover_gains = (0..users).map(|_| (0..hovers).map(&mut gain).collect()).collect();
        let slot_gains = (0..users).map(|_| (0..slots).map(&mut gain).collect()).collect();
        let hover_share = 0.8;
        JointProblem {
            hover_gains,
            slot_gains,
            hover_share,
            slot_share: (1.0 - hover_share) / slots.max(1) as f64,
            power_ave: 1.0,
        }
    }

    #[test]
    fn random_programs_meet_kkt_contract() {
        let mut polished = 0;
        for seed in 0..40 {
            let prob = random_problem(seed, 2 + (seed as usize % 9), 1 + (seed as usize % 6), 3 * (seed as usize % 7));
            let sol = prob.solve(&BarrierSettings::default());
            assert!(sol.kkt.max() <= 1e-6, "seed {seed}: {:?}", sol.kkt);
            if sol.kkt.max() <= POLISH_KKT {
                polished += 1;
            }
            let total: f64 = sol.hover_time.iter().sum();
            assert!((total - prob.hover_share).abs() < 1e-12);
        }
        assert!(polished >= 38, "{polished}");
    }
}
