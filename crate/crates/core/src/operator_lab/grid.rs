use serde::Serialize;

use crate::error::{Error, Result};
use crate::targets::TargetDensity;

/// Cell-centered grid on a rectangle in one or two dimensions, carrying the
/// target's weights at the cell centers.
///
/// Point `(i0, i1)` has flat index `i0 * n + i1`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridSpec {
    dim: usize,
    n: usize,
    lo: Vec<f64>,
    hi: Vec<f64>,
    source: String,
    weights: Vec<f64>,
}

/// Serializable description of a grid without its weights.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridSummary {
    pub dim: usize,
    pub n: usize,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub source: String,
}

impl GridSpec {
    /// Grid over the target's bounding box.
    pub fn from_target(target: &TargetDensity, n: usize) -> Result<Self> {
        let b = target.bbox();
        Self::from_target_in(target, n, b.lo().to_vec(), b.hi().to_vec())
    }

    /// Grid over the rectangle `[lo, hi]`.
    pub fn from_target_in(target: &TargetDensity, n: usize, lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        let dim = target.dim();
        check_shape(dim, n, &lo, &hi)?;
        let mut grid = Self {
            dim,
            n,
            lo,
            hi,
            source: target.id().to_string(),
            weights: Vec::new(),
        };
        let weights: Vec<f64> = (0..grid.len()).map(|i| target.density(&grid.center(i))).collect();
        grid.weights = weights;
        grid.check_weights()?;
        Ok(grid)
    }

    /// Grid on the unit cube with explicit weights.
    pub fn from_weights(dim: usize, n: usize, weights: Vec<f64>) -> Result<Self> {
        check_shape(dim, n, &vec![0.0; dim], &vec![1.0; dim])?;
        if weights.len() != n.pow(dim as u32) {
            return Err(Error::arg(format!("expected {} weights, got {}", n.pow(dim as u32), weights.len())));
        }
        let grid = Self {
            dim,
            n,
            lo: vec![0.0; dim],
            hi: vec![1.0; dim],
            source: "weights".to_string(),
            weights,
        };
        grid.check_weights()?;
        Ok(grid)
    }

    fn check_weights(&self) -> Result<()> {
        for (i, &w) in self.weights.iter().enumerate() {
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::Construction(format!(
                    "grid weight at point {i} ({:?}) is {w}; every weight must be positive",
                    self.center(i)
                )));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Points per axis.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Total number of points.
    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn summary(&self) -> GridSummary {
        GridSummary {
            dim: self.dim,
            n: self.n,
            lo: self.lo.clone(),
            hi: self.hi.clone(),
            source: self.source.clone(),
        }
    }

    /// Normalized weights.
    pub fn pi(&self) -> Vec<f64> {
        let total = crate::stats::compensated_sum(self.weights.iter().copied());
        self.weights.iter().map(|w| w / total).collect()
    }

    pub fn coords(&self, i: usize) -> Vec<usize> {
        match self.dim {
            1 => vec![i],
            _ => vec![i / self.n, i % self.n],
        }
    }

    pub fn index(&self, coords: &[usize]) -> usize {
        coords.iter().fold(0, |acc, &c| acc * self.n + c)
    }

    pub fn center(&self, i: usize) -> Vec<f64> {
        self.coords(i)
            .iter()
            .enumerate()
            .map(|(a, &c)| {
                let h = (self.hi[a] - self.lo[a]) / self.n as f64;
                self.lo[a] + (c as f64 + 0.5) * h
            })
            .collect()
    }

    pub fn centers(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| self.center(i)).collect()
    }

    /// Points on the axis-`axis` line through `i`, in increasing coordinate order.
    pub fn line(&self, axis: usize, i: usize) -> Vec<usize> {
        let base = self.coords(i);
        (0..self.n)
            .map(|c| {
                let mut p = base.clone();
                p[axis] = c;
                self.index(&p)
            })
            .collect()
    }

    /// Every axis-`axis` line, each listed once.
    pub fn lines(&self, axis: usize) -> Vec<Vec<usize>> {
        (0..self.len())
            .filter(|&i| self.coords(i)[axis] == 0)
            .map(|i| self.line(axis, i))
            .collect()
    }

    /// Point `offset` cells from `i` along `axis`, if it is on the grid.
    pub fn shift(&self, i: usize, axis: usize, offset: isize) -> Option<usize> {
        let mut c = self.coords(i);
        let moved = c[axis] as isize + offset;
        if moved < 0 || moved >= self.n as isize {
            return None;
        }
        c[axis] = moved as usize;
        Some(self.index(&c))
    }
}

fn check_shape(dim: usize, n: usize, lo: &[f64], hi: &[f64]) -> Result<()> {
    if !(1..=2).contains(&dim) {
        return Err(Error::arg(format!("grids support dimension 1 or 2, got {dim}")));
    }
    if n < 2 {
        return Err(Error::arg(format!("grids need at least 2 points per axis, got {n}")));
    }
    if lo.len() != dim || hi.len() != dim || lo.iter().zip(hi).any(|(l, h)| !(l < h)) {
        return Err(Error::arg("grid rectangle must have lo < hi on every axis"));
    }
    Ok(())
}
