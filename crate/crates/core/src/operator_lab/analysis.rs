use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::discrete::{DiscreteKernel, KernelLabel, KernelSet};
use crate::error::{Error, Result};
use crate::report::{ComparisonReport, ComparisonRow, Verdict};
use crate::stats::compensated_sum;

/// Slack allowed on every exact ordering inequality.
pub const ORDERING_SLACK: f64 = 1e-10;
/// Largest state count for exhaustive conductance.
pub const EXACT_CONDUCTANCE_MAX_STATES: usize = 16;
/// Largest points-per-axis for the two-dimensional rectangle search.
pub const CONTIGUOUS_2D_MAX_N: usize = 40;

/// `sum_i pi_i f_i (Pf)_i`.
pub fn quadratic_form(p: &DiscreteKernel, f: &[f64]) -> Result<f64> {
    let pf = p.apply(f)?;
    Ok(compensated_sum(p.pi().iter().zip(f).zip(&pf).map(|((w, a), b)| w * a * b)))
}

/// A named function on the grid's states.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    pub id: String,
    pub values: Vec<f64>,
}

/// `num_random` functions with iid standard normal entries, then the indicator
/// of every state, then the coordinate functions.
pub fn ordering_test_functions<R: Rng + ?Sized>(kernels: &KernelSet, num_random: usize, rng: &mut R) -> Vec<GridFunction> {
    let grid = &kernels.grid;
    let n = grid.len();
    let mut out = Vec::with_capacity(num_random + n + grid.dim());
    for k in 0..num_random {
        out.push(GridFunction {
            id: format!("normal_{k}"),
            values: (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect(),
        });
    }
    for i in 0..n {
        let mut values = vec![0.0; n];
        values[i] = 1.0;
        out.push(GridFunction {
            id: format!("indicator_{i}"),
            values,
        });
    }
    let centers = grid.centers();
    for axis in 0..grid.dim() {
        out.push(GridFunction {
            id: format!("coordinate_{}", axis + 1),
            values: centers.iter().map(|c| c[axis]).collect(),
        });
    }
    out
}

fn exact_verdict(margin: f64) -> Verdict {
    if margin >= -ORDERING_SLACK {
        Verdict::Pass
    } else {
        Verdict::Fail
    }
}

/// Quadratic forms of `M, U, H, S` for each function, with margins checked
/// against `-ORDERING_SLACK`.
pub fn compare_forms(kernels: &KernelSet, functions: &[GridFunction]) -> Result<ComparisonReport> {
    let rows: Result<Vec<ComparisonRow>> = functions
        .par_iter()
        .map(|f| {
            let qf_m = quadratic_form(&kernels.m, &f.values)?;
            let qf_u = quadratic_form(&kernels.u, &f.values)?;
            let qf_h = quadratic_form(&kernels.h, &f.values)?;
            let qf_s = quadratic_form(&kernels.s, &f.values)?;
            let margins = [qf_m - qf_u, qf_u - qf_h, qf_u - qf_s];
            Ok(ComparisonRow {
                f_id: f.id.clone(),
                qf_m,
                qf_u,
                qf_h,
                qf_s,
                margin_mu: margins[0],
                margin_uh: margins[1],
                margin_us: margins[2],
                stderr: None,
                verdicts: margins.map(exact_verdict),
            })
        })
        .collect();
    Ok(ComparisonReport::new("exact", rows?, Vec::new()))
}

/// Checks `<Mf,f> >= <Uf,f> >= <Hf,f>` and `<Uf,f> >= <Sf,f>` on `num_f` random
/// functions plus all indicators and coordinates.
pub fn verify_ordering<R: Rng + ?Sized>(kernels: &KernelSet, num_f: usize, rng: &mut R) -> Result<ComparisonReport> {
    let functions = ordering_test_functions(kernels, num_f, rng);
    compare_forms(kernels, &functions)
}

fn symmetrize(p: &DiscreteKernel) -> Result<DMatrix<f64>> {
    let sqrt_pi: Vec<f64> = p.pi().iter().map(|v| v.sqrt()).collect();
    if sqrt_pi.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::Numerical(format!("kernel `{}` has a zero stationary weight", p.label())));
    }
    let a = DMatrix::from_fn(p.len(), p.len(), |i, j| sqrt_pi[i] * p.matrix()[(i, j)] / sqrt_pi[j]);
    let asym = (&a - a.transpose()).abs().max();
    if asym > ORDERING_SLACK {
        return Err(Error::Numerical(format!(
            "kernel `{}` symmetrization has asymmetry {asym:.3e}; refusing to treat it as reversible",
            p.label()
        )));
    }
    Ok((&a + a.transpose()) * 0.5)
}

/// Eigenvalues of `D^{1/2} P D^{-1/2}` in decreasing order.
pub fn reversible_spectrum(p: &DiscreteKernel) -> Result<Vec<f64>> {
    let sym = symmetrize(p)?;
    let eig = SymmetricEigen::try_new(sym, f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Numerical(format!("eigen solver did not converge for kernel `{}`", p.label())))?;
    let mut values: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    values.sort_by(|a, b| b.total_cmp(a));
    Ok(values)
}

/// `1 - lambda_2` of the symmetrized kernel.
pub fn spectral_gap(p: &DiscreteKernel) -> Result<f64> {
    if p.len() < 2 {
        return Err(Error::arg("spectral gap needs at least two states"));
    }
    Ok(1.0 - reversible_spectrum(p)?[1])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConductanceMode {
    ExactSubsets,
    Contiguous,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Conductance {
    pub value: f64,
    pub mode: ConductanceMode,
    /// Set when the search covers only a subfamily of sets.
    pub upper_bound: bool,
    /// States of a minimizing set.
    pub argmin: Vec<usize>,
}

const HALF_MASS: f64 = 0.5 + 1e-12;

/// `min over A with 0 < pi(A) <= 1/2 of 1 - <P 1_A, 1_A> / pi(A)`.
///
/// `ExactSubsets` enumerates all sets (at most 16 states). `Contiguous` takes
/// intervals in one dimension and rectangles in two, and is an upper bound.
pub fn conductance(p: &DiscreteKernel, mode: ConductanceMode, grid: &super::grid::GridSpec) -> Result<Conductance> {
    if grid.len() != p.len() {
        return Err(Error::arg("grid and kernel sizes differ"));
    }
    let n = p.len();
    let flow = DMatrix::from_fn(n, n, |i, j| p.pi()[i] * p.matrix()[(i, j)]);
    let mut best = (f64::INFINITY, Vec::new());
    let mut consider = |mass: f64, inner: f64, set: &dyn Fn() -> Vec<usize>| {
        if mass > 0.0 && mass <= HALF_MASS {
            let v = 1.0 - inner / mass;
            if v < best.0 {
                best = (v, set());
            }
        }
    };
    match mode {
        ConductanceMode::ExactSubsets => {
            if n > EXACT_CONDUCTANCE_MAX_STATES {
                return Err(Error::arg(format!(
                    "exact conductance enumerates 2^N sets and needs N <= {EXACT_CONDUCTANCE_MAX_STATES}, got N = {n}"
                )));
            }
            for mask in 1u32..(1u32 << n) {
                let members: Vec<usize> = (0..n).filter(|&i| mask >> i & 1 == 1).collect();
                let mass: f64 = members.iter().map(|&i| p.pi()[i]).sum();
                if mass > HALF_MASS {
                    continue;
                }
                let inner: f64 = members.iter().flat_map(|&i| members.iter().map(move |&j| (i, j))).map(|(i, j)| flow[(i, j)]).sum();
                consider(mass, inner, &|| members.clone());
            }
        }
        ConductanceMode::Contiguous => match grid.dim() {
            1 => {
                // prefix[a][b] = sum of flow over rows < a, cols < b
                let prefix = prefix_2d(&flow);
                let mass_prefix: Vec<f64> = std::iter::once(0.0)
                    .chain(p.pi().iter().scan(0.0, |acc, v| {
                        *acc += v;
                        Some(*acc)
                    }))
                    .collect();
                for a in 0..n {
                    for b in (a + 1)..=n {
                        let mass = mass_prefix[b] - mass_prefix[a];
                        let inner = prefix[(b, b)] - prefix[(a, b)] - prefix[(b, a)] + prefix[(a, a)];
                        consider(mass, inner, &|| (a..b).collect());
                    }
                }
            }
            _ => {
                let m = grid.n();
                if m > CONTIGUOUS_2D_MAX_N {
                    return Err(Error::arg(format!(
                        "rectangle conductance search supports n <= {CONTIGUOUS_2D_MAX_N} per axis, got {m}"
                    )));
                }
                contiguous_2d(p, &flow, m, &mut consider);
            }
        },
    }
    if !best.0.is_finite() {
        return Err(Error::Numerical("no admissible set for conductance".into()));
    }
    Ok(Conductance {
        value: best.0,
        mode,
        upper_bound: mode == ConductanceMode::Contiguous,
        argmin: best.1,
    })
}

/// Receives `(mass, inner flow, members)` for each candidate set.
type Candidate<'a> = dyn FnMut(f64, f64, &dyn Fn() -> Vec<usize>) + 'a;

fn prefix_2d(a: &DMatrix<f64>) -> DMatrix<f64> {
    let (r, c) = a.shape();
    let mut p = DMatrix::zeros(r + 1, c + 1);
    for i in 0..r {
        for j in 0..c {
            p[(i + 1, j + 1)] = a[(i, j)] + p[(i, j + 1)] + p[(i + 1, j)] - p[(i, j)];
        }
    }
    p
}

/// Rectangles `[r0, r1) x [c0, c1)` on an `m x m` grid via a four-dimensional
/// prefix sum of the flow `pi_i P_ij` indexed by `(i0, i1, j0, j1)`.
fn contiguous_2d(p: &DiscreteKernel, flow: &DMatrix<f64>, m: usize, consider: &mut Candidate) {
    let e = m + 1;
    let idx = |a: usize, b: usize, c: usize, d: usize| ((a * e + b) * e + c) * e + d;
    let mut pre = vec![0.0f64; e * e * e * e];
    for a in 1..e {
        for b in 1..e {
            for c in 1..e {
                for d in 1..e {
                    let v = flow[((a - 1) * m + (b - 1), (c - 1) * m + (d - 1))];
                    // Inclusion-exclusion over the 15 lower corners.
                    let mut s = v;
                    for mask in 1u32..16 {
                        let aa = a - (mask & 1) as usize;
                        let bb = b - (mask >> 1 & 1) as usize;
                        let cc = c - (mask >> 2 & 1) as usize;
                        let dd = d - (mask >> 3 & 1) as usize;
                        let sign = if mask.count_ones() % 2 == 1 { 1.0 } else { -1.0 };
                        s += sign * pre[idx(aa, bb, cc, dd)];
                    }
                    pre[idx(a, b, c, d)] = s;
                }
            }
        }
    }
    let pi_grid = DMatrix::from_fn(m, m, |a, b| p.pi()[a * m + b]);
    let mass_pre = prefix_2d(&pi_grid);
    for r0 in 0..m {
        for r1 in (r0 + 1)..=m {
            for c0 in 0..m {
                for c1 in (c0 + 1)..=m {
                    let mass = mass_pre[(r1, c1)] - mass_pre[(r0, c1)] - mass_pre[(r1, c0)] + mass_pre[(r0, c0)];
                    if !(mass > 0.0 && mass <= HALF_MASS) {
                        continue;
                    }
                    // Box sum over i0 in [r0, r1), i1 in [c0, c1), j0 in [r0, r1), j1 in [c0, c1).
                    let lo = [r0, c0, r0, c0];
                    let hi = [r1, c1, r1, c1];
                    let mut inner = 0.0;
                    for mask in 0u32..16 {
                        let pick = |k: usize| if mask >> k & 1 == 1 { lo[k] } else { hi[k] };
                        let sign = if mask.count_ones() % 2 == 0 { 1.0 } else { -1.0 };
                        inner += sign * pre[idx(pick(0), pick(1), pick(2), pick(3))];
                    }
                    consider(mass, inner, &|| {
                        let mut v = Vec::new();
                        for a in r0..r1 {
                            for b in c0..c1 {
                                v.push(a * m + b);
                            }
                        }
                        v
                    });
                }
            }
        }
    }
}

/// One inequality `lhs <= rhs` between two constants.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsequenceCheck {
    pub relation: String,
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabelledValue {
    pub kernel: KernelLabel,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsequenceReport {
    pub gaps: Vec<LabelledValue>,
    pub conductance_mode: ConductanceMode,
    pub conductance_upper_bound: bool,
    pub conductances: Vec<LabelledValue>,
    pub checks: Vec<ConsequenceCheck>,
    pub verdict: Verdict,
}

const LAB_LABELS: [KernelLabel; 5] = [KernelLabel::M, KernelLabel::U, KernelLabel::H, KernelLabel::S, KernelLabel::PiIid];

/// The ordering reverses for gap and conductance:
/// `c(M) <= c(U) <= c(H)` and `c(U) <= c(S)`.
const CONSEQUENCE_CHAINS: [(KernelLabel, KernelLabel); 3] =
    [(KernelLabel::M, KernelLabel::U), (KernelLabel::U, KernelLabel::H), (KernelLabel::U, KernelLabel::S)];

/// Spectral gaps and conductances of all lab kernels and the ordering they
/// inherit. Conductance is exact when the grid has at most 16 states.
pub fn ordering_consequences(kernels: &KernelSet) -> Result<ConsequenceReport> {
    let mode = if kernels.grid.len() <= EXACT_CONDUCTANCE_MAX_STATES {
        ConductanceMode::ExactSubsets
    } else {
        ConductanceMode::Contiguous
    };
    ordering_consequences_with(kernels, mode)
}

pub fn ordering_consequences_with(kernels: &KernelSet, mode: ConductanceMode) -> Result<ConsequenceReport> {
    let mut gaps = Vec::new();
    let mut conds = Vec::new();
    for label in LAB_LABELS {
        let k = kernels.get(label).expect("lab labels are present");
        gaps.push(LabelledValue {
            kernel: label,
            value: spectral_gap(k)?,
        });
        conds.push(LabelledValue {
            kernel: label,
            value: conductance(k, mode, &kernels.grid)?.value,
        });
    }
    let lookup = |vals: &[LabelledValue], l: KernelLabel| vals.iter().find(|v| v.kernel == l).map(|v| v.value).unwrap();
    let mut checks = Vec::new();
    for (name, vals) in [("gap", &gaps), ("conductance", &conds)] {
        for (lo, hi) in CONSEQUENCE_CHAINS {
            let (lhs, rhs) = (lookup(vals, lo), lookup(vals, hi));
            let margin = rhs - lhs;
            checks.push(ConsequenceCheck {
                relation: format!("{name}({lo}) <= {name}({hi})"),
                lhs,
                rhs,
                margin,
                verdict: exact_verdict(margin),
            });
        }
    }
    let verdict = Verdict::all(checks.iter().map(|c| c.verdict));
    Ok(ConsequenceReport {
        gaps,
        conductance_mode: mode,
        conductance_upper_bound: mode == ConductanceMode::Contiguous,
        conductances: conds,
        checks,
        verdict,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator_lab::{build_discrete_kernels, GridSpec};
    use crate::rng::stream_rng;
    use crate::targets::{cone, gaussian_box, BoundingBox};
    use approx::assert_abs_diff_eq;

    fn two_state() -> (DiscreteKernel, GridSpec) {
        let p = DiscreteKernel::new(
            KernelLabel::M,
            DMatrix::from_row_slice(2, 2, &[0.75, 0.25, 0.5, 0.5]),
            vec![2.0 / 3.0, 1.0 / 3.0],
        )
        .unwrap();
        (p, GridSpec::from_weights(1, 2, vec![2.0, 1.0]).unwrap())
    }

    #[test]
    fn quadratic_form_oracles() {
        let pi = vec![0.2, 0.3, 0.5];
        let f = [1.0, 0.0, -1.0];
        let iid = DiscreteKernel::iid(pi.clone()).unwrap();
        let mean: f64 = pi.iter().zip(&f).map(|(a, b)| a * b).sum();
        assert_abs_diff_eq!(quadratic_form(&iid, &f).unwrap(), mean * mean, epsilon = 1e-15);
        let id = DiscreteKernel::identity(pi.clone()).unwrap();
        assert_abs_diff_eq!(quadratic_form(&id, &f).unwrap(), 0.2 + 0.5, epsilon = 1e-15);
        // Reversible fixture: symmetric flow matrix divided by pi.
        let flow = [[0.1, 0.06, 0.04], [0.06, 0.14, 0.1], [0.04, 0.1, 0.36]];
        let p = DMatrix::from_fn(3, 3, |i, j| flow[i][j] / pi[i]);
        let k = DiscreteKernel::new(KernelLabel::Other, p.clone(), pi.clone()).unwrap();
        let mut brute = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                brute += pi[i] * f[i] * p[(i, j)] * f[j];
            }
        }
        assert_abs_diff_eq!(quadratic_form(&k, &f).unwrap(), brute, epsilon = 1e-15);
        assert!(quadratic_form(&k, &[1.0]).is_err());
    }

    #[test]
    fn gap_oracles() {
        let pi = vec![0.25; 4];
        assert_abs_diff_eq!(spectral_gap(&DiscreteKernel::iid(pi.clone()).unwrap()).unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(spectral_gap(&DiscreteKernel::identity(pi).unwrap()).unwrap(), 0.0, epsilon = 1e-12);
        let (p, _) = two_state();
        let spec = reversible_spectrum(&p).unwrap();
        assert_abs_diff_eq!(spec[1], 0.25, epsilon = 1e-14);
        assert_abs_diff_eq!(spectral_gap(&p).unwrap(), 0.75, epsilon = 1e-14);
    }

    #[test]
    fn gap_refuses_non_reversible_input() {
        let p = DiscreteKernel::unchecked(KernelLabel::Other, DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.1, 0.9]), vec![0.5, 0.5]).unwrap();
        assert!(matches!(spectral_gap(&p), Err(Error::Numerical(_))));
    }

    #[test]
    fn conductance_oracles() {
        let (p, g) = two_state();
        let c = conductance(&p, ConductanceMode::ExactSubsets, &g).unwrap();
        assert_abs_diff_eq!(c.value, 0.5, epsilon = 1e-15);
        assert_eq!(c.argmin, vec![1]);

        let g8 = GridSpec::from_weights(1, 8, (1..=8).map(f64::from).collect()).unwrap();
        let pi = g8.pi();
        let id = DiscreteKernel::identity(pi.clone()).unwrap();
        assert_abs_diff_eq!(conductance(&id, ConductanceMode::ExactSubsets, &g8).unwrap().value, 0.0, epsilon = 1e-15);
        // <Pi 1_A, 1_A> = pi(A)^2, so the value is 1 - pi(A) at the largest admissible pi(A).
        let iid = DiscreteKernel::iid(pi).unwrap();
        let c = conductance(&iid, ConductanceMode::ExactSubsets, &g8).unwrap();
        assert!(c.value >= 0.5 - 1e-12);
        let big = GridSpec::from_weights(1, 17, vec![1.0; 17]).unwrap();
        let k17 = DiscreteKernel::iid(big.pi()).unwrap();
        assert!(conductance(&k17, ConductanceMode::ExactSubsets, &big).is_err());
    }

    #[test]
    fn contiguous_bounds_exact_from_above() {
        let g1 = GridSpec::from_target(&cone(1).unwrap(), 8).unwrap();
        let g2 = GridSpec::from_target(&gaussian_box(BoundingBox::cube(2, -2.0, 2.0).unwrap()).unwrap(), 4).unwrap();
        for g in [g1, g2] {
            let ks = build_discrete_kernels(&g, 1).unwrap();
            for k in [&ks.m, &ks.u, &ks.h, &ks.s] {
                let exact = conductance(k, ConductanceMode::ExactSubsets, &g).unwrap();
                let cont = conductance(k, ConductanceMode::Contiguous, &g).unwrap();
                assert!(cont.value >= exact.value - 1e-12);
                assert!(cont.upper_bound && !exact.upper_bound);
            }
        }
    }

    #[test]
    fn rectangle_prefix_sums_match_direct_sums() {
        let g = GridSpec::from_target(&gaussian_box(BoundingBox::cube(2, -2.0, 2.0).unwrap()).unwrap(), 5).unwrap();
        let ks = build_discrete_kernels(&g, 2).unwrap();
        let c = conductance(&ks.m, ConductanceMode::Contiguous, &g).unwrap();
        let a = &c.argmin;
        let pi = ks.m.pi();
        let mass: f64 = a.iter().map(|&i| pi[i]).sum();
        let inner: f64 = a.iter().flat_map(|&i| a.iter().map(move |&j| (i, j))).map(|(i, j)| pi[i] * ks.m.matrix()[(i, j)]).sum();
        assert_abs_diff_eq!(c.value, 1.0 - inner / mass, epsilon = 1e-12);
    }

    #[test]
    fn constant_function_has_zero_margins() {
        let g = GridSpec::from_target(&cone(1).unwrap(), 16).unwrap();
        let ks = build_discrete_kernels(&g, 1).unwrap();
        let f = GridFunction {
            id: "constant".into(),
            values: vec![2.5; 16],
        };
        let rep = compare_forms(&ks, &[f]).unwrap();
        let r = &rep.rows[0];
        for q in [r.qf_m, r.qf_u, r.qf_h, r.qf_s] {
            assert_abs_diff_eq!(q, 6.25, epsilon = 1e-13);
        }
        for m in r.margins() {
            assert!(m.abs() < 1e-13);
        }
    }

    #[test]
    fn ordering_holds_on_a_cone_grid() {
        let g = GridSpec::from_target(&cone(1).unwrap(), 64).unwrap();
        let ks = build_discrete_kernels(&g, 1).unwrap();
        let rep = verify_ordering(&ks, 200, &mut stream_rng(1, 0)).unwrap();
        assert_eq!(rep.verdict, Verdict::Pass, "{:?}", rep.min_margins);
        assert_eq!(rep.rows.len(), 200 + 64 + 1);
    }

    #[test]
    fn swapped_labels_fail() {
        let g = GridSpec::from_target(&cone(1).unwrap(), 8).unwrap();
        let ks = build_discrete_kernels(&g, 1).unwrap().swap_labels(KernelLabel::M, KernelLabel::H).unwrap();
        assert_eq!(verify_ordering(&ks, 50, &mut stream_rng(2, 0)).unwrap().verdict, Verdict::Fail);
        assert_eq!(ordering_consequences(&ks).unwrap().verdict, Verdict::Fail);
    }

    #[test]
    fn uniform_weights_give_unit_gaps_for_slice_and_har() {
        let g = GridSpec::from_weights(1, 8, vec![1.0; 8]).unwrap();
        let ks = build_discrete_kernels(&g, 1).unwrap();
        let rep = ordering_consequences(&ks).unwrap();
        for v in &rep.gaps {
            if matches!(v.kernel, KernelLabel::S | KernelLabel::H | KernelLabel::U) {
                assert_abs_diff_eq!(v.value, 1.0, epsilon = 1e-12);
            }
        }
        assert_eq!(rep.verdict, Verdict::Pass);
    }
}
