//! Shortest open path through a set of points.
//!
//! An open path is found as a closed tour on the augmented graph with one
//! extra "dummy" node at distance zero from every point: cutting the tour
//! at the dummy leaves the shortest Hamiltonian path. Up to
//! [`EXACT_LIMIT`] points the closed tour is solved exactly with the
//! Held-Karp dynamic program; larger inputs fall back to nearest neighbour
//! plus 2-opt.

use crate::error::{PlanError, Result};
use crate::scenario::Point;

/// Largest point count solved exactly.
pub const EXACT_LIMIT: usize = 12;

const TWO_OPT_ROUNDS: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct OpenPath {
    /// Visiting order, as indices into the input.
    pub order: Vec<usize>,
    pub length: f64,
    /// True when the order comes from the heuristic.
    pub heuristic: bool,
}

pub fn distance_matrix(points: &[Point]) -> Vec<Vec<f64>> {
    points
        .iter()
        .map(|a| points.iter().map(|b| a.distance(b)).collect())
        .collect()
}

pub fn path_length(dist: &[Vec<f64>], order: &[usize]) -> f64 {
    order.windows(2).map(|w| dist[w[0]][w[1]]).sum()
}

/// Shortest open path visiting every point once. Among equally short
/// orders the lexicographically smallest is returned (exact regime).
pub fn solve_open_tsp(points: &[Point]) -> Result<OpenPath> {
    if points.is_empty() {
        return Err(PlanError::InvalidArgument(
            "need at least one location to order".into(),
        ));
    }
    let dist = distance_matrix(points);
    if points.len() <= EXACT_LIMIT {
        let mut augmented = vec![vec![0.0; points.len() + 1]; points.len() + 1];
        for i in 0..points.len() {
            for j in 0..points.len() {
                augmented[i + 1][j + 1] = dist[i][j];
            }
        }
        let tour = held_karp_tour(&augmented);
        let order: Vec<usize> = tour.into_iter().skip(1).map(|v| v - 1).collect();
        let length = path_length(&dist, &order);
        Ok(OpenPath {
            order,
            length,
            heuristic: false,
        })
    } else {
        let order = two_opt(&dist, nearest_neighbour(&dist));
        let length = path_length(&dist, &order);
        Ok(OpenPath {
            order,
            length,
            heuristic: true,
        })
    }
}

/// Optimal closed tour starting at node 0 (returned without the closing
/// return to 0). Among optimal tours, the lexicographically smallest node
/// sequence is chosen.
pub fn held_karp_tour(dist: &[Vec<f64>]) -> Vec<usize> {
    let n = dist.len();
    if n <= 2 {
        return (0..n).collect();
    }
    // Nodes 1..n are encoded as bits 0..n-1 of the subset mask.
    let m = n - 1;
    let full = (1usize << m) - 1;
    // best[mask][j]: shortest path leaving node 0, visiting exactly `mask`,
    // ending at node j+1 (j in mask).
    let mut best = vec![f64::INFINITY; (1 << m) * m];
    for j in 0..m {
        best[(1 << j) * m + j] = dist[0][j + 1];
    }
    for mask in 1..=full {
        for j in 0..m {
            if mask & (1 << j) == 0 {
                continue;
            }
            let cur = best[mask * m + j];
            if !cur.is_finite() {
                continue;
            }
            for k in 0..m {
                if mask & (1 << k) != 0 {
                    continue;
                }
                let next = mask | (1 << k);
                let cand = cur + dist[j + 1][k + 1];
                if cand < best[next * m + k] {
                    best[next * m + k] = cand;
                }
            }
        }
    }
    let optimum = (0..m)
        .map(|j| best[full * m + j] + dist[j + 1][0])
        .fold(f64::INFINITY, f64::min);
    let tol = 1e-9 * (1.0 + optimum);

    // Walk forward picking the smallest node that still completes an
    // optimal tour. By symmetry, the cost to finish from node j through the
    // remaining set R back to 0 equals best[R][j].
    let mut tour = vec![0];
    let mut remaining = full;
    let mut spent = 0.0;
    let mut current = 0;
    while remaining != 0 {
        let next = (0..m)
            .filter(|&j| remaining & (1 << j) != 0)
            .find(|&j| spent + dist[current][j + 1] + best[remaining * m + j] <= optimum + tol)
            .expect("an optimal continuation always exists");
        spent += dist[current][next + 1];
        remaining &= !(1 << next);
        current = next + 1;
        tour.push(current);
    }
    tour
}

fn nearest_neighbour(dist: &[Vec<f64>]) -> Vec<usize> {
    let n = dist.len();
    let mut visited = vec![false; n];
    let mut order = vec![0];
    visited[0] = true;
    while order.len() < n {
        let last = *order.last().unwrap();
        let next = (0..n)
            .filter(|&j| !visited[j])
            .min_by(|&a, &b| dist[last][a].total_cmp(&dist[last][b]).then(a.cmp(&b)))
            .unwrap();
        visited[next] = true;
        order.push(next);
    }
    order
}

fn two_opt(dist: &[Vec<f64>], mut order: Vec<usize>) -> Vec<usize> {
    let n = order.len();
    for _ in 0..TWO_OPT_ROUNDS {
        let mut improved = false;
        for i in 0..n.saturating_sub(1) {
            for j in i + 1..n {
                // Reverse order[i..=j]; open path, so missing neighbours cost nothing.
                let before = if i > 0 { dist[order[i - 1]][order[i]] } else { 0.0 };
                let after = if j + 1 < n { dist[order[j]][order[j + 1]] } else { 0.0 };
                let new_before = if i > 0 { dist[order[i - 1]][order[j]] } else { 0.0 };
                let new_after = if j + 1 < n { dist[order[i]][order[j + 1]] } else { 0.0 };
                if new_before + new_after < before + after - 1e-9 {
                    order[i..=j].reverse();
                    improved = true;
                }
            }
        }
        if !improved {
            break;
        }
    }
    order
}
