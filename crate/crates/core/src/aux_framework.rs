//! Two-step representations `P(x, .) = sum_a lambda_a s(x, a) P_a(x, .)` on
//! finite grids, with checkers for the conditions that give `P1 >= P2` in the
//! covariance order. Each fiber kernel must be reversible with respect to
//! `pi_a` and positive on `L2(pi_a)`. The pair must satisfy `P1_a P2_a = P2_a`.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operator_lab::{conditional_block, slice_block, DiscreteKernel, GridSpec, GridSummary, KernelLabel};
use crate::report::Verdict;
use crate::stats::compensated_sum;

/// Tolerance for all three hypothesis checks.
pub const CHECK_TOL: f64 = 1e-10;
/// Row-sum tolerance for composed kernels.
pub const COMPOSE_ROW_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepresentationPair {
    /// `U >= H`: index = axis, fibers = lines.
    HarVsHybrid,
    /// `U >= S`: index = level, fibers = level sets.
    SimpleVsHybrid,
    /// `M >= U`: index = (axis, level), fibers = lines cut by level sets.
    RwmVsHybrid,
}

impl RepresentationPair {
    pub const ALL: [RepresentationPair; 3] = [Self::HarVsHybrid, Self::SimpleVsHybrid, Self::RwmVsHybrid];

    pub fn name(self) -> &'static str {
        match self {
            Self::HarVsHybrid => "har_vs_hybrid",
            Self::SimpleVsHybrid => "simple_vs_hybrid",
            Self::RwmVsHybrid => "rwm_vs_hybrid",
        }
    }

    /// Labels of the larger and the smaller kernel.
    pub fn labels(self) -> (KernelLabel, KernelLabel) {
        match self {
            Self::HarVsHybrid => (KernelLabel::U, KernelLabel::H),
            Self::SimpleVsHybrid => (KernelLabel::U, KernelLabel::S),
            Self::RwmVsHybrid => (KernelLabel::M, KernelLabel::U),
        }
    }
}

/// `pi_a` conditioned on one fiber, as a normalized vector over its points.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FiberMeasure {
    pub points: Vec<usize>,
    pub weights: Vec<f64>,
}

impl FiberMeasure {
    fn from_unnormalized(points: Vec<usize>, raw: Vec<f64>) -> Result<Self> {
        let total = compensated_sum(raw.iter().copied());
        if !(total > 0.0) || raw.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::Construction(format!("fiber {points:?} has no positive mass")));
        }
        Ok(Self {
            points,
            weights: raw.into_iter().map(|w| w / total).collect(),
        })
    }

    fn uniform(points: Vec<usize>) -> Self {
        let k = points.len() as f64;
        let weights = vec![1.0 / k; points.len()];
        Self { points, weights }
    }
}

/// One equivalence class `[x]_a` with the fiber kernel restricted to it.
#[derive(Debug, Clone, PartialEq)]
pub struct FiberBlock {
    pub measure: FiberMeasure,
    pub kernel: DMatrix<f64>,
}

/// One index `a` of the representation.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxIndex {
    pub name: String,
    pub lambda: f64,
    /// `s(x, a)` for every state `x`.
    pub weights: Vec<f64>,
    /// Block containing each state.
    pub block_of: Vec<usize>,
    pub blocks: Vec<FiberBlock>,
}

impl AuxIndex {
    fn new(name: String, lambda: f64, weights: Vec<f64>, blocks: Vec<FiberBlock>) -> Result<Self> {
        let n = weights.len();
        let mut block_of = vec![usize::MAX; n];
        for (b, block) in blocks.iter().enumerate() {
            if block.kernel.nrows() != block.measure.points.len() || !block.kernel.is_square() {
                return Err(Error::Construction(format!("index `{name}` block {b} has a mis-sized kernel")));
            }
            for &p in &block.measure.points {
                if block_of[p] != usize::MAX {
                    return Err(Error::Construction(format!("index `{name}`: state {p} lies in two fibers")));
                }
                block_of[p] = b;
            }
        }
        if let Some(p) = block_of.iter().position(|&b| b == usize::MAX) {
            return Err(Error::Construction(format!("index `{name}`: state {p} lies in no fiber")));
        }
        Ok(Self {
            name,
            lambda,
            weights,
            block_of,
            blocks,
        })
    }

    /// `P_a(x, y)`; zero when `y` is outside `[x]_a`.
    pub fn kernel_entry(&self, x: usize, y: usize) -> f64 {
        let b = self.block_of[x];
        if self.block_of[y] != b {
            return 0.0;
        }
        let pts = &self.blocks[b].measure.points;
        let p = pts.iter().position(|&v| v == x).expect("state is in its block");
        let q = pts.iter().position(|&v| v == y).expect("state is in its block");
        self.blocks[b].kernel[(p, q)]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoStepRepresentation {
    pub name: String,
    pub label: KernelLabel,
    pub grid: GridSummary,
    pub pi: Vec<f64>,
    pub indices: Vec<AuxIndex>,
}

impl TwoStepRepresentation {
    pub fn len(&self) -> usize {
        self.pi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pi.is_empty()
    }

    /// `lambda_a s(x, a)` over all indices.
    pub fn index_distribution(&self, x: usize) -> Vec<f64> {
        self.indices.iter().map(|a| a.lambda * a.weights[x]).collect()
    }

    /// Largest deviation of `sum_a lambda_a s(x, a)` from one.
    pub fn weight_residual(&self) -> f64 {
        (0..self.len())
            .map(|x| (compensated_sum(self.index_distribution(x)) - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Draws an index from `s(x, .)`.
    pub fn sample_index<R: Rng + ?Sized>(&self, x: usize, rng: &mut R) -> usize {
        let probs = self.index_distribution(x);
        let total: f64 = probs.iter().sum();
        let mut u = rng.random::<f64>() * total;
        for (a, p) in probs.iter().enumerate() {
            if u < *p {
                return a;
            }
            u -= p;
        }
        probs.iter().rposition(|p| *p > 0.0).unwrap_or(0)
    }

    /// States of `[x]_a`.
    pub fn fiber_of(&self, a: usize, x: usize) -> &[usize] {
        let idx = &self.indices[a];
        &idx.blocks[idx.block_of[x]].measure.points
    }
}

/// Mixture kernel `sum_a lambda_a s(x, a) P_a(x, .)`.
pub fn compose(rep: &TwoStepRepresentation) -> Result<DiscreteKernel> {
    let n = rep.len();
    let mut terms: Vec<Vec<Vec<f64>>> = vec![vec![Vec::new(); n]; n];
    for idx in &rep.indices {
        for block in &idx.blocks {
            let pts = &block.measure.points;
            for (p, &x) in pts.iter().enumerate() {
                let c = idx.lambda * idx.weights[x];
                if c == 0.0 {
                    continue;
                }
                for (q, &y) in pts.iter().enumerate() {
                    terms[x][y].push(c * block.kernel[(p, q)]);
                }
            }
        }
    }
    let matrix = DMatrix::from_fn(n, n, |x, y| compensated_sum(terms[x][y].iter().copied()));
    for x in 0..n {
        let sum = compensated_sum(matrix.row(x).iter().copied());
        if (sum - 1.0).abs() > COMPOSE_ROW_TOL {
            return Err(Error::Construction(format!(
                "composed kernel of `{}` has row {x} summing to {sum:.17e}",
                rep.name
            )));
        }
    }
    DiscreteKernel::unchecked(rep.label, matrix, rep.pi.clone())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FiberResidual {
    pub index: String,
    pub fiber: usize,
    pub size: usize,
    pub value: f64,
}

/// Serializable outcome of one hypothesis check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckReport {
    pub pair: String,
    pub grid: GridSummary,
    pub check: String,
    pub per_fiber_residuals: Vec<FiberResidual>,
    pub verdict: Verdict,
}

impl CheckReport {
    /// Largest residual, or smallest eigenvalue for positivity.
    pub fn worst(&self) -> f64 {
        let vals = self.per_fiber_residuals.iter().map(|r| r.value);
        if self.check == "fiber_positivity" {
            vals.fold(f64::INFINITY, f64::min)
        } else {
            vals.fold(0.0, f64::max)
        }
    }
}

fn block_reversibility(block: &FiberBlock) -> f64 {
    let w = &block.measure.weights;
    let k = &block.kernel;
    let mut worst: f64 = 0.0;
    for i in 0..w.len() {
        for j in (i + 1)..w.len() {
            worst = worst.max((w[i] * k[(i, j)] - w[j] * k[(j, i)]).abs());
        }
    }
    worst
}

fn per_fiber<F: Fn(&FiberBlock) -> Result<f64>>(rep: &TwoStepRepresentation, f: F) -> Result<Vec<FiberResidual>> {
    let mut out = Vec::new();
    for idx in &rep.indices {
        for (b, block) in idx.blocks.iter().enumerate() {
            out.push(FiberResidual {
                index: idx.name.clone(),
                fiber: b,
                size: block.measure.points.len(),
                value: f(block)?,
            });
        }
    }
    Ok(out)
}

/// `max |pi_a(i) P_a(i,j) - pi_a(j) P_a(j,i)|` per fiber.
pub fn check_fiber_reversibility(rep: &TwoStepRepresentation) -> CheckReport {
    let residuals = per_fiber(rep, |b| Ok(block_reversibility(b))).expect("reversibility residuals are infallible");
    let verdict = if residuals.iter().all(|r| r.value <= CHECK_TOL) {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    CheckReport {
        pair: rep.name.clone(),
        grid: rep.grid.clone(),
        check: "fiber_reversibility".into(),
        per_fiber_residuals: residuals,
        verdict,
    }
}

/// Smallest eigenvalue of `D_a^{1/2} P_a D_a^{-1/2}` per fiber. Refuses when a
/// fiber kernel is not reversible, since the symmetrization is then meaningless.
pub fn check_fiber_positivity(rep: &TwoStepRepresentation) -> Result<CheckReport> {
    let rev = check_fiber_reversibility(rep);
    if rev.verdict != Verdict::Pass {
        return Err(Error::Construction(format!(
            "`{}` has a fiber kernel that is not reversible (residual {:.3e}); see the fiber reversibility check",
            rep.name,
            rev.worst()
        )));
    }
    let residuals = per_fiber(rep, |block| {
        let w = &block.measure.weights;
        let m = w.len();
        if w.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Numerical("fiber measure has a zero weight".into()));
        }
        let a = DMatrix::from_fn(m, m, |i, j| w[i].sqrt() * block.kernel[(i, j)] / w[j].sqrt());
        let sym = (&a + a.transpose()) * 0.5;
        let eig = SymmetricEigen::try_new(sym, f64::EPSILON, 10_000)
            .ok_or_else(|| Error::Numerical("eigen solver did not converge on a fiber".into()))?;
        Ok(eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min))
    })?;
    let verdict = if residuals.iter().all(|r| r.value >= -CHECK_TOL) {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    Ok(CheckReport {
        pair: rep.name.clone(),
        grid: rep.grid.clone(),
        check: "fiber_positivity".into(),
        per_fiber_residuals: residuals,
        verdict,
    })
}

/// Max-norm of `P1_a P2_a - P2_a` per fiber.
pub fn check_interweaving(rep1: &TwoStepRepresentation, rep2: &TwoStepRepresentation) -> Result<CheckReport> {
    if rep1.indices.len() != rep2.indices.len() || rep1.len() != rep2.len() {
        return Err(Error::arg("representations have different index sets or state spaces"));
    }
    let mut residuals = Vec::new();
    for (i1, i2) in rep1.indices.iter().zip(&rep2.indices) {
        let same_weights = i1.weights.iter().zip(&i2.weights).all(|(a, b)| (a - b).abs() <= 1e-12);
        if (i1.lambda - i2.lambda).abs() > 1e-12 || !same_weights || i1.block_of != i2.block_of {
            return Err(Error::arg(format!("index `{}` differs between the representations", i1.name)));
        }
        for (b, (b1, b2)) in i1.blocks.iter().zip(&i2.blocks).enumerate() {
            if b1.measure.points != b2.measure.points {
                return Err(Error::arg(format!("index `{}` fiber {b} has different points", i1.name)));
            }
            let diff = &b1.kernel * &b2.kernel - &b2.kernel;
            residuals.push(FiberResidual {
                index: i1.name.clone(),
                fiber: b,
                size: b1.measure.points.len(),
                value: diff.abs().max(),
            });
        }
    }
    let verdict = if residuals.iter().all(|r| r.value <= CHECK_TOL) {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    Ok(CheckReport {
        pair: rep1.name.clone(),
        grid: rep1.grid.clone(),
        check: "interweaving".into(),
        per_fiber_residuals: residuals,
        verdict,
    })
}

/// Runs reversibility and positivity on both representations and interweaving
/// on the pair. Positivity is reported as FAIL when it refuses to run.
pub fn check_all(rep1: &TwoStepRepresentation, rep2: &TwoStepRepresentation) -> Result<Vec<CheckReport>> {
    let mut out = Vec::new();
    for rep in [rep1, rep2] {
        let rev = check_fiber_reversibility(rep);
        let rev_ok = rev.verdict == Verdict::Pass;
        out.push(rev);
        if rev_ok {
            out.push(check_fiber_positivity(rep)?);
        } else {
            out.push(CheckReport {
                pair: rep.name.clone(),
                grid: rep.grid.clone(),
                check: "fiber_positivity".into(),
                per_fiber_residuals: Vec::new(),
                verdict: Verdict::Fail,
            });
        }
    }
    out.push(check_interweaving(rep1, rep2)?);
    Ok(out)
}

fn distinct_levels(rho: &[f64]) -> Vec<(f64, f64)> {
    let mut levels = rho.to_vec();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    let mut prev = 0.0;
    levels
        .into_iter()
        .map(|v| {
            let gap = v - prev;
            prev = v;
            (v, gap)
        })
        .collect()
}

fn level_weights(rho: &[f64], v: f64) -> Vec<f64> {
    rho.iter().map(|&r| if r >= v { 1.0 / r } else { 0.0 }).collect()
}

fn singleton(x: usize) -> FiberBlock {
    FiberBlock {
        measure: FiberMeasure::uniform(vec![x]),
        kernel: DMatrix::identity(1, 1),
    }
}

fn uniform_block(points: Vec<usize>) -> FiberBlock {
    let k = points.len();
    FiberBlock {
        measure: FiberMeasure::uniform(points),
        kernel: DMatrix::from_element(k, k, 1.0 / k as f64),
    }
}

/// Builds both representations of `pair` on `grid`; `w` is the Metropolis
/// half-width used by `rwm_vs_hybrid`.
pub fn build_representation(
    pair: RepresentationPair,
    grid: &GridSpec,
    w: usize,
) -> Result<(TwoStepRepresentation, TwoStepRepresentation)> {
    if !(1..=2).contains(&grid.dim()) {
        return Err(Error::arg(format!("representations support dimension 1 or 2, got {}", grid.dim())));
    }
    if w == 0 {
        return Err(Error::arg("proposal radius w must be at least 1"));
    }
    let rho = grid.weights();
    let pi = grid.pi();
    let n = grid.len();
    let d = grid.dim();
    let (mut idx1, mut idx2) = (Vec::new(), Vec::new());
    match pair {
        RepresentationPair::HarVsHybrid => {
            for axis in 0..d {
                let (mut b1, mut b2) = (Vec::new(), Vec::new());
                for line in grid.lines(axis) {
                    let local: Vec<f64> = line.iter().map(|&i| rho[i]).collect();
                    let measure = FiberMeasure::from_unnormalized(line.clone(), line.iter().map(|&i| pi[i]).collect())?;
                    b1.push(FiberBlock {
                        measure: measure.clone(),
                        kernel: slice_block(&local),
                    });
                    b2.push(FiberBlock {
                        measure,
                        kernel: conditional_block(&local),
                    });
                }
                let name = format!("axis_{}", axis + 1);
                idx1.push(AuxIndex::new(name.clone(), 1.0 / d as f64, vec![1.0; n], b1)?);
                idx2.push(AuxIndex::new(name, 1.0 / d as f64, vec![1.0; n], b2)?);
            }
        }
        RepresentationPair::SimpleVsHybrid => {
            for (k, (v, gap)) in distinct_levels(rho).into_iter().enumerate() {
                let weights = level_weights(rho, v);
                let active: Vec<usize> = (0..n).filter(|&i| rho[i] >= v).collect();
                let pos = |i: usize| active.iter().position(|&a| a == i);
                let mut u = DMatrix::zeros(active.len(), active.len());
                for (p, &x) in active.iter().enumerate() {
                    for axis in 0..d {
                        let on_line: Vec<usize> = grid.line(axis, x).into_iter().filter_map(pos).collect();
                        let share = 1.0 / (d as f64 * on_line.len() as f64);
                        for q in on_line {
                            u[(p, q)] += share;
                        }
                    }
                }
                let mut b1 = vec![FiberBlock {
                    measure: FiberMeasure::uniform(active.clone()),
                    kernel: u,
                }];
                let mut b2 = vec![uniform_block(active.clone())];
                for x in (0..n).filter(|&i| rho[i] < v) {
                    b1.push(singleton(x));
                    b2.push(singleton(x));
                }
                let name = format!("level_{k}");
                idx1.push(AuxIndex::new(name.clone(), gap, weights.clone(), b1)?);
                idx2.push(AuxIndex::new(name, gap, weights, b2)?);
            }
        }
        RepresentationPair::RwmVsHybrid => {
            let step = 1.0 / (4.0 * w as f64);
            for axis in 0..d {
                for (k, &(v, gap)) in distinct_levels(rho).iter().enumerate() {
                    let weights = level_weights(rho, v);
                    let (mut b1, mut b2) = (Vec::new(), Vec::new());
                    for line in grid.lines(axis) {
                        let fiber: Vec<usize> = line.iter().copied().filter(|&i| rho[i] >= v).collect();
                        if fiber.is_empty() {
                            continue;
                        }
                        let coord = |i: usize| grid.coords(i)[axis] as isize;
                        let m = fiber.len();
                        let mut mk = DMatrix::zeros(m, m);
                        for p in 0..m {
                            for q in 0..m {
                                let dist = (coord(fiber[p]) - coord(fiber[q])).unsigned_abs();
                                if p != q && dist <= w {
                                    mk[(p, q)] = step;
                                }
                            }
                            mk[(p, p)] = 1.0 - compensated_sum(mk.row(p).iter().copied());
                        }
                        b1.push(FiberBlock {
                            measure: FiberMeasure::uniform(fiber.clone()),
                            kernel: mk,
                        });
                        b2.push(uniform_block(fiber));
                    }
                    for x in (0..n).filter(|&i| rho[i] < v) {
                        b1.push(singleton(x));
                        b2.push(singleton(x));
                    }
                    let name = format!("axis_{}_level_{k}", axis + 1);
                    let lambda = gap / d as f64;
                    idx1.push(AuxIndex::new(name.clone(), lambda, weights.clone(), b1)?);
                    idx2.push(AuxIndex::new(name, lambda, weights, b2)?);
                }
            }
        }
    }
    let (l1, l2) = pair.labels();
    let make = |label, indices| TwoStepRepresentation {
        name: pair.name().to_string(),
        label,
        grid: grid.summary(),
        pi: pi.clone(),
        indices,
    };
    Ok((make(l1, idx1), make(l2, idx2)))
}

/// Negative control: moves mass `eps` within one row of the first fiber with
/// at least two points, breaking reversibility but keeping rows stochastic.
pub fn perturbed_fixture(rep: &TwoStepRepresentation, eps: f64) -> Result<TwoStepRepresentation> {
    let mut out = rep.clone();
    for idx in &mut out.indices {
        if let Some(block) = idx.blocks.iter_mut().find(|b| b.measure.points.len() >= 2) {
            let row = block.kernel.row(0);
            let from = (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap_or(0);
            let to = if from == 0 { 1 } else { 0 };
            if block.kernel[(0, from)] < eps {
                return Err(Error::arg("perturbation exceeds the available mass"));
            }
            block.kernel[(0, from)] -= eps;
            block.kernel[(0, to)] += eps;
            out.name = format!("{}_perturbed", rep.name);
            return Ok(out);
        }
    }
    Err(Error::arg("no fiber with two or more points to perturb"))
}

/// Negative control: one fiber of two states that always flips.
pub fn two_state_flip_fixture() -> Result<TwoStepRepresentation> {
    let grid = GridSpec::from_weights(1, 2, vec![1.0, 1.0])?;
    let block = FiberBlock {
        measure: FiberMeasure::uniform(vec![0, 1]),
        kernel: DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]),
    };
    Ok(TwoStepRepresentation {
        name: "two_state_flip".into(),
        label: KernelLabel::Other,
        grid: grid.summary(),
        pi: grid.pi(),
        indices: vec![AuxIndex::new("single".into(), 1.0, vec![1.0, 1.0], vec![block])?],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator_lab::build_discrete_kernels;
    use crate::rng::stream_rng;
    use crate::targets::{cone, gaussian_box, BoundingBox};

    fn cone_grid(n: usize) -> GridSpec {
        GridSpec::from_target(&cone(1).unwrap(), n).unwrap()
    }

    fn gauss_grid(n: usize) -> GridSpec {
        GridSpec::from_target(&gaussian_box(BoundingBox::cube(2, -2.0, 2.0).unwrap()).unwrap(), n).unwrap()
    }

    fn max_diff(a: &DiscreteKernel, b: &DiscreteKernel) -> f64 {
        (a.matrix() - b.matrix()).abs().max()
    }

    #[test]
    fn compose_reproduces_direct_kernels() {
        for (grid, w) in [(cone_grid(8), 1), (cone_grid(8), 3), (gauss_grid(4), 1), (gauss_grid(4), 2)] {
            let ks = build_discrete_kernels(&grid, w).unwrap();
            for pair in RepresentationPair::ALL {
                let (r1, r2) = build_representation(pair, &grid, w).unwrap();
                assert!(r1.weight_residual() <= 1e-12 && r2.weight_residual() <= 1e-12);
                for rep in [&r1, &r2] {
                    let direct = ks.get(rep.label).unwrap();
                    let composed = compose(rep).unwrap();
                    assert!(max_diff(&composed, direct) <= 1e-12, "{} {}: {}", pair.name(), rep.label, max_diff(&composed, direct));
                }
            }
        }
    }

    #[test]
    fn single_index_compose_is_identity_map() {
        let rep = two_state_flip_fixture().unwrap();
        let k = compose(&rep).unwrap();
        assert_eq!(k.matrix(), &DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]));
    }

    #[test]
    fn all_pairs_pass_all_checks() {
        for grid in [cone_grid(8), gauss_grid(4)] {
            for pair in RepresentationPair::ALL {
                let (r1, r2) = build_representation(pair, &grid, 1).unwrap();
                for rep in check_all(&r1, &r2).unwrap() {
                    assert_eq!(rep.verdict, Verdict::Pass, "{} {} {}", pair.name(), rep.check, rep.worst());
                }
            }
        }
    }

    #[test]
    fn har_fibers_in_1d_are_the_whole_grid() {
        let grid = cone_grid(8);
        let (_, h) = build_representation(RepresentationPair::HarVsHybrid, &grid, 1).unwrap();
        assert_eq!(h.indices.len(), 1);
        let block = &h.indices[0].blocks[0];
        assert_eq!(block.measure.points.len(), 8);
        for (a, b) in block.measure.weights.iter().zip(grid.pi()) {
            assert!((a - b).abs() < 1e-15);
        }
        for i in 0..8 {
            for j in 0..8 {
                assert!((block.kernel[(i, j)] - grid.pi()[j]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn slice_pair_in_1d_has_equal_fiber_kernels() {
        let (u, s) = build_representation(RepresentationPair::SimpleVsHybrid, &cone_grid(8), 1).unwrap();
        for (a, b) in u.indices.iter().zip(&s.indices) {
            for (x, y) in a.blocks.iter().zip(&b.blocks) {
                assert!((&x.kernel - &y.kernel).abs().max() < 1e-15);
                let w = &x.measure.weights;
                assert!(w.iter().all(|v| (v - w[0]).abs() < 1e-15));
            }
        }
    }

    #[test]
    fn rwm_composition_in_2d_is_lazy_and_stochastic() {
        let (m, _) = build_representation(RepresentationPair::RwmVsHybrid, &gauss_grid(4), 1).unwrap();
        let k = compose(&m).unwrap();
        for i in 0..16 {
            let sum: f64 = k.matrix().row(i).iter().sum();
            assert!((sum - 1.0).abs() <= 1e-12);
            assert!(k.matrix()[(i, i)] >= 0.5);
        }
    }

    #[test]
    fn identity_and_uniform_fibers_are_reversible() {
        let (_, s) = build_representation(RepresentationPair::SimpleVsHybrid, &cone_grid(8), 1).unwrap();
        assert_eq!(check_fiber_reversibility(&s).worst(), 0.0);
        let pos = check_fiber_positivity(&s).unwrap();
        assert!(pos.worst().abs() < 1e-12);
    }

    #[test]
    fn negative_controls_fail() {
        let grid = cone_grid(8);
        let (u, h) = build_representation(RepresentationPair::HarVsHybrid, &grid, 1).unwrap();
        let bad = perturbed_fixture(&u, 1e-3).unwrap();
        let rev = check_fiber_reversibility(&bad);
        assert_eq!(rev.verdict, Verdict::Fail);
        assert!(rev.worst() > CHECK_TOL);
        assert!(check_fiber_positivity(&bad).is_err());

        let flip = two_state_flip_fixture().unwrap();
        let pos = check_fiber_positivity(&flip).unwrap();
        assert_eq!(pos.verdict, Verdict::Fail);
        assert!((pos.worst() + 1.0).abs() < 1e-12);

        let swapped = check_interweaving(&h, &u).unwrap();
        assert_eq!(swapped.verdict, Verdict::Fail);
        assert!(swapped.worst() > CHECK_TOL);
    }

    #[test]
    fn mismatched_fibers_are_rejected() {
        let grid = cone_grid(8);
        let (u, _) = build_representation(RepresentationPair::HarVsHybrid, &grid, 1).unwrap();
        let (_, s) = build_representation(RepresentationPair::SimpleVsHybrid, &grid, 1).unwrap();
        assert!(matches!(check_interweaving(&u, &s), Err(Error::Argument(_))));
    }

    #[test]
    fn index_sampling_follows_weights() {
        let (u, _) = build_representation(RepresentationPair::SimpleVsHybrid, &cone_grid(8), 1).unwrap();
        let x = 3;
        let probs = u.index_distribution(x);
        let mut counts = vec![0u64; probs.len()];
        let mut rng = stream_rng(4, 0);
        for _ in 0..100_000 {
            counts[u.sample_index(x, &mut rng)] += 1;
        }
        let r = crate::stats::chi_square_gof(&counts, &probs).unwrap();
        assert!(r.passes(1e-3), "{r:?}");
        assert!(u.fiber_of(0, x).contains(&x));
    }
}
