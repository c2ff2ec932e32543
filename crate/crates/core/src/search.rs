//! Coarse-to-fine 2D maximization over a bounding box.
//!
//! A uniform coarse grid is evaluated in parallel, its local maxima are
//! refined on successively finer local grids, and the refined peaks are
//! returned best-first. Results are independent of the thread count: grid
//! values are collected in index order and every reduction is sequential,
//! with ties broken by lexicographic `(x, y)` order.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::scenario::{BoundingBox, Point};

/// Resolution of the 2D exhaustive search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Points per axis of the coarse grid.
    pub coarse: usize,
    /// Number of local refinement passes around each coarse peak.
    pub refine_levels: usize,
    /// Step reduction per refinement pass.
    pub refine_factor: usize,
    /// Coarse local maxima within this relative band of the best are refined.
    pub refine_band: f64,
    /// Upper bound on the number of refined peaks.
    pub max_peaks: usize,
    /// Relative band within which refined peaks count as tied maximizers.
    pub tie_epsilon: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            coarse: 64,
            refine_levels: 2,
            refine_factor: 16,
            refine_band: 0.05,
            max_peaks: 32,
            tie_epsilon: 1e-6,
        }
    }
}

impl GridSpec {
    pub fn coarse_step(&self, bbox: &BoundingBox) -> (f64, f64) {
        let n = self.coarse.max(2) as f64 - 1.0;
        (bbox.width() / n, bbox.height() / n)
    }

    /// Step of the finest refinement grid along the longer box side.
    pub fn fine_step(&self, bbox: &BoundingBox) -> f64 {
        let (sx, sy) = self.coarse_step(bbox);
        sx.max(sy) / (self.refine_factor.max(1) as f64).powi(self.refine_levels as i32)
    }

    /// Distance under which two maximizers are treated as the same location.
    pub fn merge_radius(&self, bbox: &BoundingBox) -> f64 {
        (2.0 * self.fine_step(bbox)).max(1.0)
    }

    pub(crate) fn validate(&self) -> crate::Result<()> {
        if self.coarse < 2 || self.refine_factor < 1 || self.max_peaks == 0 {
            return Err(crate::PlanError::InvalidArgument(format!(
                "grid resolution must be positive: {self:?}"
            )));
        }
        if !(self.tie_epsilon >= 0.0) || !(self.refine_band >= 0.0) {
            return Err(crate::PlanError::InvalidArgument(
                "grid tolerances must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Peak<A> {
    pub point: Point,
    pub value: f64,
    pub aux: A,
}

/// Best-first ordering with lexicographic `(x, y)` tie-break.
pub(crate) fn peak_order<A>(a: &Peak<A>, b: &Peak<A>) -> Ordering {
    b.value
        .total_cmp(&a.value)
        .then(a.point.x.total_cmp(&b.point.x))
        .then(a.point.y.total_cmp(&b.point.y))
}

fn axis(min: f64, max: f64, n: usize) -> Vec<f64> {
    if max > min && n > 1 {
        let step = (max - min) / (n - 1) as f64;
        (0..n)
            .map(|i| if i + 1 == n { max } else { min + i as f64 * step })
            .collect()
    } else {
        vec![min]
    }
}

fn local_axis(center: f64, step: f64, half: usize, min: f64, max: f64) -> Vec<f64> {
    if step <= 0.0 {
        return vec![center];
    }
    (0..=2 * half)
        .map(|i| center + (i as f64 - half as f64) * step)
        .filter(|v| *v >= min && *v <= max)
        .collect()
}

/// Returns refined local maxima of `f` over `bbox`, best first, with peaks
/// closer than `merge_radius` collapsed onto the better one.
pub(crate) fn search_peaks<A, F>(
    bbox: &BoundingBox,
    grid: &GridSpec,
    merge_radius: f64,
    f: F,
) -> Vec<Peak<A>>
where
    A: Send + Sync + Copy,
    F: Fn(Point) -> (f64, A) + Sync,
{
    let xs = axis(bbox.x_min, bbox.x_max, grid.coarse);
    let ys = axis(bbox.y_min, bbox.y_max, grid.coarse);
    let (nx, ny) = (xs.len(), ys.len());
    let coarse: Vec<Peak<A>> = (0..nx * ny)
        .into_par_iter()
        .map(|idx| {
            let p = Point::new(xs[idx / ny], ys[idx % ny]);
            let (value, aux) = f(p);
            Peak { point: p, value, aux }
        })
        .collect();

    let mut maxima: Vec<Peak<A>> = Vec::new();
    for i in 0..nx {
        for j in 0..ny {
            let v = coarse[i * ny + j].value;
            let mut is_max = true;
            'nb: for di in -1i64..=1 {
                for dj in -1i64..=1 {
                    let (ii, jj) = (i as i64 + di, j as i64 + dj);
                    if (di, dj) == (0, 0) || ii < 0 || jj < 0 || ii >= nx as i64 || jj >= ny as i64 {
                        continue;
                    }
                    if coarse[ii as usize * ny + jj as usize].value > v {
                        is_max = false;
                        break 'nb;
                    }
                }
            }
            if is_max {
                maxima.push(coarse[i * ny + j]);
            }
        }
    }
    maxima.sort_by(peak_order);
    let best = maxima[0].value;
    let band = grid.refine_band * best.abs();
    maxima.retain(|p| p.value >= best - band);
    maxima.truncate(grid.max_peaks);

    let (sx, sy) = grid.coarse_step(bbox);
    let factor = grid.refine_factor.max(1);
    let mut refined: Vec<Peak<A>> = maxima
        .par_iter()
        .map(|start| {
            let mut current = *start;
            let (mut stepx, mut stepy) = (sx, sy);
            for _ in 0..grid.refine_levels {
                stepx /= factor as f64;
                stepy /= factor as f64;
                let lx = local_axis(current.point.x, stepx, factor, bbox.x_min, bbox.x_max);
                let ly = local_axis(current.point.y, stepy, factor, bbox.y_min, bbox.y_max);
                for &x in &lx {
                    for &y in &ly {
                        let p = Point::new(x, y);
                        let (value, aux) = f(p);
                        let cand = Peak { point: p, value, aux };
                        if peak_order(&cand, &current) == Ordering::Less {
                            current = cand;
                        }
                    }
                }
            }
            current
        })
        .collect();
    refined.sort_by(peak_order);

    let mut out: Vec<Peak<A>> = Vec::with_capacity(refined.len());
    for p in refined {
        if out.iter().all(|q| q.point.distance(&p.point) > merge_radius) {
            out.push(p);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bbox(x0: f64, x1: f64, y0: f64, y1: f64) -> BoundingBox {
        BoundingBox { x_min: x0, x_max: x1, y_min: y0, y_max: y1 }
    }

    #[test]
    fn finds_smooth_maximum_precisely() {
        let b = bbox(0.0, 1000.0, 0.0, 1000.0);
        let grid = GridSpec::default();
        let peaks = search_peaks(&b, &grid, grid.merge_radius(&b), |p| {
            (-((p.x - 333.3).powi(2) + (p.y - 712.9).powi(2)), ())
        });
        let best = peaks[0].point;
        assert!((best.x - 333.3).abs() <= grid.fine_step(&b));
        assert!((best.y - 712.9).abs() <= grid.fine_step(&b));
    }

    #[test]
    fn finds_two_separated_peaks() {
        let b = bbox(-500.0, 500.0, -10.0, 10.0);
        let grid = GridSpec::default();
        let f = |p: Point| {
            let a = (-((p.x + 400.0).powi(2) + p.y.powi(2)) / 1e4).exp();
            let c = (-((p.x - 400.0).powi(2) + p.y.powi(2)) / 1e4).exp();
            (a.max(c), ())
        };
        let peaks = search_peaks(&b, &grid, grid.merge_radius(&b), f);
        assert!(peaks.len() >= 2);
        assert!((peaks[0].point.x.abs() - 400.0).abs() < 0.1);
        assert!((peaks[1].point.x.abs() - 400.0).abs() < 0.1);
        assert!(peaks[0].point.x * peaks[1].point.x < 0.0);
    }

    #[test]
    fn degenerate_box_is_single_point() {
        let b = bbox(3.0, 3.0, 7.0, 7.0);
        let grid = GridSpec::default();
        let peaks = search_peaks(&b, &grid, grid.merge_radius(&b), |p| (p.x + p.y, ()));
        assert_eq!(peaks.len(), 1);
        assert_eq!(peaks[0].point, Point::new(3.0, 7.0));
    }

    #[test]
    fn stays_inside_box() {
        let b = bbox(0.0, 10.0, 0.0, 20.0);
        let grid = GridSpec::default();
        let peaks = search_peaks(&b, &grid, grid.merge_radius(&b), |p| (p.x + p.y, ()));
        assert_eq!(peaks[0].point, Point::new(10.0, 20.0));
        assert!(peaks.iter().all(|p| b.contains(&p.point)));
    }
}
