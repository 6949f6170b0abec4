//! Deterministic quadrature over a target's bounding box, used as the
//! independent source of exact expectations.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::stats::compensated_sum;
use crate::targets::TargetDensity;

/// Simpson intervals for one-dimensional expectations.
pub const SIMPSON_INTERVALS_1D: usize = 1_000_000;
/// Midpoint cells per axis for two-dimensional expectations.
pub const MIDPOINT_CELLS_2D: usize = 4096;

/// Composite Simpson rule with `intervals` (rounded up to even) subintervals.
pub fn simpson<F: Fn(f64) -> f64 + Sync>(f: F, a: f64, b: f64, intervals: usize) -> f64 {
    let n = intervals.max(2) + intervals % 2;
    let h = (b - a) / n as f64;
    let chunk = 4096;
    let partial: Vec<f64> = (0..=n)
        .collect::<Vec<_>>()
        .par_chunks(chunk)
        .map(|idx| {
            compensated_sum(idx.iter().map(|&i| {
                let w = if i == 0 || i == n {
                    1.0
                } else if i % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                w * f(a + i as f64 * h)
            }))
        })
        .collect();
    compensated_sum(partial) * h / 3.0
}

/// Tensor midpoint rule on a rectangle with `cells` cells per axis.
pub fn midpoint_2d<F: Fn(&[f64]) -> f64 + Sync>(f: F, lo: [f64; 2], hi: [f64; 2], cells: usize) -> f64 {
    let hx = (hi[0] - lo[0]) / cells as f64;
    let hy = (hi[1] - lo[1]) / cells as f64;
    let rows: Vec<f64> = (0..cells)
        .into_par_iter()
        .map(|i| {
            let x = lo[0] + (i as f64 + 0.5) * hx;
            compensated_sum((0..cells).map(|j| f(&[x, lo[1] + (j as f64 + 0.5) * hy])))
        })
        .collect();
    compensated_sum(rows) * hx * hy
}

/// `int f rho / int rho` over the target's bounding box.
pub fn expectation<F: Fn(&[f64]) -> f64 + Sync>(target: &TargetDensity, f: F) -> Result<f64> {
    let bbox = target.bbox();
    let (num, den) = match target.dim() {
        1 => {
            let (a, b) = (bbox.lo()[0], bbox.hi()[0]);
            (
                simpson(|x| f(&[x]) * target.density(&[x]), a, b, SIMPSON_INTERVALS_1D),
                simpson(|x| target.density(&[x]), a, b, SIMPSON_INTERVALS_1D),
            )
        }
        2 => {
            let lo = [bbox.lo()[0], bbox.lo()[1]];
            let hi = [bbox.hi()[0], bbox.hi()[1]];
            (
                midpoint_2d(|x| f(x) * target.density(x), lo, hi, MIDPOINT_CELLS_2D),
                midpoint_2d(|x| target.density(x), lo, hi, MIDPOINT_CELLS_2D),
            )
        }
        d => return Err(Error::arg(format!("quadrature expectations support d in {{1, 2}}, got {d}"))),
    };
    if !(den > 0.0) {
        return Err(Error::Numerical(format!("target `{}` has zero mass on its box", target.id())));
    }
    Ok(num / den)
}

/// Probability of each of `bins` equal cells of a one-dimensional target's box.
pub fn cell_masses_1d(target: &TargetDensity, bins: usize) -> Result<Vec<f64>> {
    if target.dim() != 1 {
        return Err(Error::arg("cell masses are defined for one-dimensional targets"));
    }
    let (a, b) = (target.bbox().lo()[0], target.bbox().hi()[0]);
    let w = (b - a) / bins as f64;
    let per_cell = (SIMPSON_INTERVALS_1D / bins).max(64);
    let masses: Vec<f64> = (0..bins)
        .map(|k| {
            let lo = a + k as f64 * w;
            simpson(|x| target.density(&[x]), lo, lo + w, per_cell)
        })
        .collect();
    let total: f64 = masses.iter().sum();
    Ok(masses.into_iter().map(|m| m / total).collect())
}
