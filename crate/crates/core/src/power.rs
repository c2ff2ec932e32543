//! One-dimensional power maximization shared by the solvers.

use std::f64::consts::LN_2;

/// Maximizer of `sum_k w_k log2(1 + g_k p) - price * p` over `0 <= p <= cap`.
///
/// Returns the power and whether the cap binds. The derivative is convex
/// and decreasing, so Newton steps started left of the root never
/// overshoot; a bisection bracket guards against round-off.
pub(crate) fn optimal_power(weights: &[f64], gains: &[f64], price: f64, cap: f64) -> (f64, bool) {
    let slope = |p: f64| -> f64 {
        weights
            .iter()
            .zip(gains)
            .map(|(w, g)| w * g / (1.0 + g * p))
            .sum::<f64>()
            / LN_2
            - price
    };
    if slope(0.0) <= 0.0 {
        return (0.0, false);
    }
    let total: f64 = weights.iter().sum();
    let mut hi = if price > 0.0 { (total / (LN_2 * price)).min(cap) } else { cap };
    if slope(hi) >= 0.0 {
        return (hi, hi >= cap);
    }
    let mut lo = 0.0;
    let mut p = 0.0;
    for _ in 0..200 {
        let s = slope(p);
        if s > 0.0 {
            lo = p;
        } else {
            hi = p;
        }
        let curv: f64 = weights
            .iter()
            .zip(gains)
            .map(|(w, g)| w * g * g / ((1.0 + g * p) * (1.0 + g * p)))
            .sum::<f64>()
            / LN_2;
        let mut next = p + s / curv;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - p).abs() <= 1e-15 * next.abs().max(1e-300) || hi - lo <= 1e-15 * hi {
            return (next, false);
        }
        p = next;
    }
    (p, false)
}

/// Value of the weighted rate minus the power price at `p`.
pub(crate) fn weighted_value(weights: &[f64], gains: &[f64], price: f64, p: f64) -> f64 {
    weights
        .iter()
        .zip(gains)
        .map(|(w, g)| w * (g * p).ln_1p())
        .sum::<f64>()
        / LN_2
        - price * p
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_term_closed_form() {
        // w g / (ln2 (1 + g p)) = price  =>  p = w / (ln2 price) - 1 / g
        let (p, capped) = optimal_power(&[1.0], &[10.0], 0.5, 1e6);
        assert!(!capped);
        assert!((p - (1.0 / (LN_2 * 0.5) - 0.1)).abs() < 1e-12);
    }

    #[test]
    fn zero_when_price_too_high() {
        assert_eq!(optimal_power(&[0.5, 0.5], &[1.0, 2.0], 10.0, 1e6), (0.0, false));
    }

    #[test]
    fn cap_binds_without_price() {
        assert_eq!(optimal_power(&[1.0], &[1.0], 0.0, 5.0), (5.0, true));
    }

    #[test]
    fn stationarity_residual_is_tiny() {
        let w = [0.2, 0.3, 0.5];
        let g = [10.0, 0.5, 3.0];
        let (p, _) = optimal_power(&w, &g, 0.7, 1e6);
        let s: f64 = w.iter().zip(&g).map(|(w, g)| w * g / (1.0 + g * p)).sum::<f64>() / LN_2;
        assert!((s - 0.7).abs() < 1e-12);
        // Dense sweep agrees on the argmax.
        let step = 1e-5;
        let best = (0..400_000)
            .map(|i| i as f64 * step)
            .max_by(|a, b| weighted_value(&w, &g, 0.7, *a).total_cmp(&weighted_value(&w, &g, 0.7, *b)))
            .unwrap();
        assert!((best - p).abs() <= step);
    }
}
