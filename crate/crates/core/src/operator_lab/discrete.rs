use std::fmt;

use nalgebra::DMatrix;
use serde::Serialize;

use super::grid::GridSpec;
use crate::error::{Error, Result};

/// Row-sum and detailed-balance tolerance for built kernels.
pub const CONSTRUCTION_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum KernelLabel {
    M,
    U,
    H,
    S,
    #[serde(rename = "Pi_iid")]
    PiIid,
    /// Any other kernel: fixtures, fiber kernels, compositions.
    #[serde(rename = "other")]
    Other,
}

impl fmt::Display for KernelLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KernelLabel::M => "M",
            KernelLabel::U => "U",
            KernelLabel::H => "H",
            KernelLabel::S => "S",
            KernelLabel::PiIid => "Pi_iid",
            KernelLabel::Other => "other",
        })
    }
}

/// Row-stochastic matrix with its stationary weights.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteKernel {
    label: KernelLabel,
    matrix: DMatrix<f64>,
    pi: Vec<f64>,
}

impl DiscreteKernel {
    /// Builds and validates: rows sum to one, entries are nonnegative and
    /// detailed balance holds, all within [`CONSTRUCTION_TOL`].
    pub fn new(label: KernelLabel, matrix: DMatrix<f64>, pi: Vec<f64>) -> Result<Self> {
        let k = Self::unchecked(label, matrix, pi)?;
        k.check_stochastic(CONSTRUCTION_TOL)?;
        k.check_detailed_balance(CONSTRUCTION_TOL)?;
        Ok(k)
    }

    /// Only checks shapes. Used for negative-control fixtures and for
    /// compositions that are audited separately.
    pub fn unchecked(label: KernelLabel, matrix: DMatrix<f64>, pi: Vec<f64>) -> Result<Self> {
        if !matrix.is_square() || matrix.nrows() != pi.len() || pi.is_empty() {
            return Err(Error::arg(format!(
                "kernel `{label}` is {}x{} with {} stationary weights",
                matrix.nrows(),
                matrix.ncols(),
                pi.len()
            )));
        }
        Ok(Self { label, matrix, pi })
    }

    pub fn identity(pi: Vec<f64>) -> Result<Self> {
        let n = pi.len();
        Self::new(KernelLabel::Other, DMatrix::identity(n, n), pi)
    }

    /// Every row equal to `pi`.
    pub fn iid(pi: Vec<f64>) -> Result<Self> {
        let n = pi.len();
        let matrix = DMatrix::from_fn(n, n, |_, j| pi[j]);
        Self::new(KernelLabel::PiIid, matrix, pi)
    }

    pub fn label(&self) -> KernelLabel {
        self.label
    }

    pub fn with_label(mut self, label: KernelLabel) -> Self {
        self.label = label;
        self
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn pi(&self) -> &[f64] {
        &self.pi
    }

    pub fn len(&self) -> usize {
        self.pi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pi.is_empty()
    }

    pub fn check_stochastic(&self, tol: f64) -> Result<()> {
        for i in 0..self.len() {
            let row = self.matrix.row(i);
            if let Some(j) = row.iter().position(|&v| !(v >= 0.0)) {
                return Err(Error::Construction(format!(
                    "kernel `{}` entry ({i}, {j}) = {} is negative",
                    self.label,
                    row[j]
                )));
            }
            let sum = crate::stats::compensated_sum(row.iter().copied());
            if (sum - 1.0).abs() > tol {
                return Err(Error::Construction(format!(
                    "kernel `{}` row {i} sums to {sum:.17e}",
                    self.label
                )));
            }
        }
        Ok(())
    }

    /// Largest `|pi_i P_ij - pi_j P_ji|` and where it occurs.
    pub fn detailed_balance_residual(&self) -> (f64, usize, usize) {
        let mut worst = (0.0, 0, 0);
        for i in 0..self.len() {
            for j in (i + 1)..self.len() {
                let r = (self.pi[i] * self.matrix[(i, j)] - self.pi[j] * self.matrix[(j, i)]).abs();
                if r > worst.0 {
                    worst = (r, i, j);
                }
            }
        }
        worst
    }

    pub fn check_detailed_balance(&self, tol: f64) -> Result<()> {
        let (r, i, j) = self.detailed_balance_residual();
        if r > tol {
            return Err(Error::Construction(format!(
                "kernel `{}` violates detailed balance at ({i}, {j}) by {r:.3e}",
                self.label
            )));
        }
        Ok(())
    }

    pub fn apply(&self, f: &[f64]) -> Result<Vec<f64>> {
        if f.len() != self.len() {
            return Err(Error::arg(format!("function has length {} but kernel has {} states", f.len(), self.len())));
        }
        Ok((0..self.len())
            .map(|i| crate::stats::compensated_sum(self.matrix.row(i).iter().zip(f).map(|(p, v)| p * v)))
            .collect())
    }
}

/// Slice-sampler matrix on a set of points with positive weights `rho`:
/// `(1/rho_p) * sum over levels v_k <= min(rho_p, rho_q) of gap_k / #{rho >= v_k}`.
pub(crate) fn slice_block(rho: &[f64]) -> DMatrix<f64> {
    let mut levels: Vec<f64> = rho.to_vec();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    // cum[k] = sum_{l <= k} gap_l / c_l
    let mut cum = Vec::with_capacity(levels.len());
    let mut prev = 0.0;
    let mut acc = crate::stats::CompensatedSum::new();
    for &v in &levels {
        let count = rho.iter().filter(|&&r| r >= v).count() as f64;
        acc.add((v - prev) / count);
        cum.push(acc.total());
        prev = v;
    }
    let level_index = |r: f64| levels.partition_point(|&v| v < r);
    let m = rho.len();
    DMatrix::from_fn(m, m, |p, q| cum[level_index(rho[p].min(rho[q]))] / rho[p])
}

/// Conditional of the weights on the points themselves: every row proportional to `rho`.
pub(crate) fn conditional_block(rho: &[f64]) -> DMatrix<f64> {
    let total = crate::stats::compensated_sum(rho.iter().copied());
    let m = rho.len();
    DMatrix::from_fn(m, m, |_, q| rho[q] / total)
}

/// The five discrete kernels on one grid.
#[derive(Debug, Clone)]
pub struct KernelSet {
    pub grid: GridSpec,
    /// Metropolis half-width in grid cells.
    pub w: usize,
    pub m: DiscreteKernel,
    pub u: DiscreteKernel,
    pub h: DiscreteKernel,
    pub s: DiscreteKernel,
    pub pi_iid: DiscreteKernel,
}

impl KernelSet {
    pub fn get(&self, label: KernelLabel) -> Option<&DiscreteKernel> {
        match label {
            KernelLabel::M => Some(&self.m),
            KernelLabel::U => Some(&self.u),
            KernelLabel::H => Some(&self.h),
            KernelLabel::S => Some(&self.s),
            KernelLabel::PiIid => Some(&self.pi_iid),
            KernelLabel::Other => None,
        }
    }

    /// Negative control: exchange the matrices stored under `a` and `b`.
    pub fn swap_labels(mut self, a: KernelLabel, b: KernelLabel) -> Result<Self> {
        let ka = self.get(a).cloned().ok_or_else(|| Error::arg(format!("no kernel labelled `{a}`")))?;
        let kb = self.get(b).cloned().ok_or_else(|| Error::arg(format!("no kernel labelled `{b}`")))?;
        *self.slot(a) = kb.with_label(a);
        *self.slot(b) = ka.with_label(b);
        Ok(self)
    }

    fn slot(&mut self, label: KernelLabel) -> &mut DiscreteKernel {
        match label {
            KernelLabel::M => &mut self.m,
            KernelLabel::U => &mut self.u,
            KernelLabel::H => &mut self.h,
            KernelLabel::S => &mut self.s,
            _ => &mut self.pi_iid,
        }
    }
}

/// Builds `M`, `U`, `H`, `S` and `Pi_iid` on `grid`; `w` is the Metropolis
/// half-width in cells.
pub fn build_discrete_kernels(grid: &GridSpec, w: usize) -> Result<KernelSet> {
    if w == 0 {
        return Err(Error::arg("proposal radius w must be at least 1"));
    }
    let pi = grid.pi();
    let rho = grid.weights();
    let n_states = grid.len();
    let d = grid.dim();

    let pi_iid = DiscreteKernel::iid(pi.clone())?;

    let s_matrix = slice_block(rho);
    let s = DiscreteKernel::new(KernelLabel::S, s_matrix, pi.clone())?;

    let mut u = DMatrix::zeros(n_states, n_states);
    let mut h = DMatrix::zeros(n_states, n_states);
    for axis in 0..d {
        for line in grid.lines(axis) {
            let local_rho: Vec<f64> = line.iter().map(|&i| rho[i]).collect();
            let ub = slice_block(&local_rho);
            let hb = conditional_block(&local_rho);
            for (p, &i) in line.iter().enumerate() {
                for (q, &j) in line.iter().enumerate() {
                    u[(i, j)] += ub[(p, q)] / d as f64;
                    h[(i, j)] += hb[(p, q)] / d as f64;
                }
            }
        }
    }
    let u = DiscreteKernel::new(KernelLabel::U, u, pi.clone())?;
    let h = if d == 1 {
        pi_iid.clone().with_label(KernelLabel::H)
    } else {
        DiscreteKernel::new(KernelLabel::H, h, pi.clone())?
    };

    let step = 1.0 / (4.0 * d as f64 * w as f64);
    let mut m = DMatrix::zeros(n_states, n_states);
    for i in 0..n_states {
        let mut off = crate::stats::CompensatedSum::new();
        for axis in 0..d {
            for k in 1..=w as isize {
                for offset in [-k, k] {
                    if let Some(j) = grid.shift(i, axis, offset) {
                        let p = step * (rho[j] / rho[i]).min(1.0);
                        m[(i, j)] += p;
                        off.add(p);
                    }
                }
            }
        }
        m[(i, i)] = 1.0 - off.total();
    }
    let m = DiscreteKernel::new(KernelLabel::M, m, pi.clone())?;

    Ok(KernelSet {
        grid: grid.clone(),
        w,
        m,
        u,
        h,
        s,
        pi_iid,
    })
}
