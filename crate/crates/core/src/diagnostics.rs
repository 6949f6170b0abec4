//! Monte Carlo estimates of the ordering's consequences for the continuous
//! samplers: one-step stationary forms `E f(X0) f(X1)`, mean square errors of
//! sample averages, and batch-means asymptotic variances.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernels::{ChainTrace, KernelSpec};
use crate::operator_lab::{DiscreteKernel, GridSpec};
use crate::report::{ComparisonReport, ComparisonRow, MseRow, RowErrors, Verdict};
use crate::rng::{stream_rng, tagged_stream, StreamRng};
use crate::stats::{compensated_sum, mean_and_variance};
use crate::targets::TargetDensity;

const POOL_TAG: u64 = 1;
const STEP_TAG: u64 = 2;
const REPLICATION_TAG: u64 = 3;
const CHAIN_TAG: u64 = 4;

/// Number of standard errors allowed by every statistical verdict.
pub const SE_MULTIPLIER: f64 = 3.0;
/// Default batch count for batch means.
pub const DEFAULT_BATCHES: usize = 32;

pub type TestFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// A real function of the state with an optional exact mean under the target.
#[derive(Clone)]
pub struct TestFunction {
    id: String,
    f: TestFn,
    known_mean: Option<f64>,
}

impl fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TestFunction").field("id", &self.id).field("known_mean", &self.known_mean).finish()
    }
}

impl TestFunction {
    pub fn new<F: Fn(&[f64]) -> f64 + Send + Sync + 'static>(id: impl Into<String>, f: F) -> Self {
        Self {
            id: id.into(),
            f: Arc::new(f),
            known_mean: None,
        }
    }

    /// `x_k`, zero-based `k`, named `coordinate_{k+1}`.
    pub fn coordinate(k: usize) -> Self {
        Self::new(format!("coordinate_{}", k + 1), move |x| x[k])
    }

    pub fn squared_norm() -> Self {
        Self::new("squared_norm", |x| x.iter().map(|v| v * v).sum())
    }

    /// Indicator of `{x : normal . x > offset}`.
    pub fn half_space(normal: Vec<f64>, offset: f64) -> Self {
        Self::new("half_space", move |x| {
            let dot: f64 = normal.iter().zip(x).map(|(a, b)| a * b).sum();
            if dot > offset {
                1.0
            } else {
                0.0
            }
        })
    }

    pub fn constant(c: f64) -> Self {
        Self::new("constant", move |_| c).with_known_mean(c)
    }

    /// `f + c`.
    pub fn shifted(&self, c: f64) -> Self {
        let f = self.f.clone();
        Self {
            id: format!("{}_plus_{c}", self.id),
            f: Arc::new(move |x| f(x) + c),
            known_mean: self.known_mean.map(|m| m + c),
        }
    }

    pub fn with_known_mean(mut self, mean: f64) -> Self {
        self.known_mean = Some(mean);
        self
    }

    /// Mean under the target by deterministic quadrature over its bounding box.
    pub fn with_quadrature_mean(self, target: &TargetDensity) -> Result<Self> {
        let f = self.f.clone();
        let mean = crate::quadrature::expectation(target, move |x| f(x))?;
        Ok(self.with_known_mean(mean))
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn known_mean(&self) -> Option<f64> {
        self.known_mean
    }

    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EstimateWithError {
    pub estimate: f64,
    pub stderr: f64,
    pub replications: usize,
}

impl EstimateWithError {
    /// Sample mean and its standard error.
    pub fn from_samples(values: &[f64]) -> Self {
        let (mean, var) = mean_and_variance(values);
        let n = values.len();
        Self {
            estimate: mean,
            stderr: if n >= 2 { (var / n as f64).sqrt() } else { f64::NAN },
            replications: n,
        }
    }
}

/// A Markov chain that can be started in stationarity.
pub trait MarkovChain: Sync {
    type State: Clone + Send + Sync;

    fn sample_stationary(&self, rng: &mut StreamRng) -> Result<Self::State>;
    fn step(&self, x: &Self::State, rng: &mut StreamRng) -> Result<Self::State>;
    fn point<'a>(&'a self, x: &'a Self::State) -> &'a [f64];
}

/// One of the continuous kernels on a target.
#[derive(Debug, Clone)]
pub struct ContinuousChain<'a> {
    pub target: &'a TargetDensity,
    pub kernel: &'a KernelSpec,
}

impl<'a> ContinuousChain<'a> {
    pub fn new(target: &'a TargetDensity, kernel: &'a KernelSpec) -> Self {
        Self { target, kernel }
    }
}

impl MarkovChain for ContinuousChain<'_> {
    type State = Vec<f64>;

    fn sample_stationary(&self, rng: &mut StreamRng) -> Result<Vec<f64>> {
        self.target.sample_pi(rng)
    }

    fn step(&self, x: &Vec<f64>, rng: &mut StreamRng) -> Result<Vec<f64>> {
        Ok(self.kernel.step(self.target, x, rng)?.point)
    }

    fn point<'a>(&'a self, x: &'a Vec<f64>) -> &'a [f64] {
        x
    }
}

/// A discrete kernel whose states carry coordinates.
#[derive(Debug, Clone)]
pub struct FiniteChain {
    points: Vec<Vec<f64>>,
    pi_cumulative: Vec<f64>,
    row_cumulative: Vec<Vec<f64>>,
}

fn cumulative(values: impl Iterator<Item = f64>) -> Vec<f64> {
    values
        .scan(0.0, |acc, v| {
            *acc += v;
            Some(*acc)
        })
        .collect()
}

fn draw(cum: &[f64], rng: &mut StreamRng) -> usize {
    let u = rng.random::<f64>() * cum[cum.len() - 1];
    cum.partition_point(|&c| c <= u).min(cum.len() - 1)
}

impl FiniteChain {
    pub fn new(kernel: &DiscreteKernel, points: Vec<Vec<f64>>) -> Result<Self> {
        if points.len() != kernel.len() {
            return Err(Error::arg("one point per state is required"));
        }
        let m = kernel.matrix();
        Ok(Self {
            points,
            pi_cumulative: cumulative(kernel.pi().iter().copied()),
            row_cumulative: (0..kernel.len()).map(|i| cumulative(m.row(i).iter().copied())).collect(),
        })
    }

    /// States at the grid's cell centers.
    pub fn on_grid(kernel: &DiscreteKernel, grid: &GridSpec) -> Result<Self> {
        Self::new(kernel, grid.centers())
    }
}

impl MarkovChain for FiniteChain {
    type State = usize;

    fn sample_stationary(&self, rng: &mut StreamRng) -> Result<usize> {
        Ok(draw(&self.pi_cumulative, rng))
    }

    fn step(&self, x: &usize, rng: &mut StreamRng) -> Result<usize> {
        Ok(draw(&self.row_cumulative[*x], rng))
    }

    fn point<'a>(&'a self, x: &'a usize) -> &'a [f64] {
        &self.points[*x]
    }
}

/// `(f(X0), f(X1))` for `n_pairs` stationary starts. `X0` depends only on
/// `(seed, i)`, so every chain sees the same pool of starts.
pub fn one_step_pairs<C: MarkovChain>(chain: &C, f: &TestFunction, n_pairs: usize, seed: u64) -> Result<Vec<(f64, f64)>> {
    let values = one_step_values(chain, std::slice::from_ref(f), n_pairs, seed)?;
    Ok(values.into_iter().next().unwrap_or_default())
}

/// `values[k][i] = (f_k(X0_i), f_k(X1_i))` for all test functions at once.
pub fn one_step_values<C: MarkovChain>(chain: &C, fs: &[TestFunction], n_pairs: usize, seed: u64) -> Result<Vec<Vec<(f64, f64)>>> {
    let per_pair: Result<Vec<Vec<(f64, f64)>>> = (0..n_pairs)
        .into_par_iter()
        .map(|i| {
            let mut pool = stream_rng(seed, tagged_stream(POOL_TAG, i as u64));
            let x0 = chain.sample_stationary(&mut pool)?;
            let mut steps = stream_rng(seed, tagged_stream(STEP_TAG, i as u64));
            let x1 = chain.step(&x0, &mut steps).map_err(|e| Error::Step { index: i, source: Box::new(e) })?;
            let (p0, p1) = (chain.point(&x0), chain.point(&x1));
            Ok(fs.iter().map(|f| (f.eval(p0), f.eval(p1))).collect())
        })
        .collect();
    let per_pair = per_pair?;
    Ok((0..fs.len()).map(|k| per_pair.iter().map(|row| row[k]).collect()).collect())
}

/// Estimate of `<Pf, f>_pi = E f(X0) f(X1)` with `X0 ~ pi`.
pub fn one_step_form<C: MarkovChain>(chain: &C, f: &TestFunction, n_pairs: usize, seed: u64) -> Result<EstimateWithError> {
    if n_pairs == 0 {
        return Err(Error::arg("n_pairs must be positive"));
    }
    let pairs = one_step_pairs(chain, f, n_pairs, seed)?;
    let products: Vec<f64> = pairs.iter().map(|(a, b)| a * b).collect();
    Ok(EstimateWithError::from_samples(&products))
}

/// `f(X_1), ..., f(X_n)` along one chain with `X_1 ~ pi`.
pub fn chain_values<C: MarkovChain>(chain: &C, f: &TestFunction, n: usize, seed: u64, stream: u64) -> Result<Vec<f64>> {
    let mut rng = stream_rng(seed, stream);
    let mut x = chain.sample_stationary(&mut rng)?;
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        if k > 0 {
            x = chain.step(&x, &mut rng).map_err(|e| Error::Step { index: k, source: Box::new(e) })?;
        }
        out.push(f.eval(chain.point(&x)));
    }
    Ok(out)
}

/// Squared errors `|S_n(f) - Ef|^2` of `replications` stationary chains of
/// length `n`. Replication `r` uses the same stream for every chain.
pub fn mse_samples<C: MarkovChain>(chain: &C, f: &TestFunction, n: usize, replications: usize, seed: u64) -> Result<Vec<f64>> {
    let mean = f
        .known_mean()
        .ok_or_else(|| Error::arg(format!("test function `{}` has no known mean", f.id())))?;
    if n == 0 || replications == 0 {
        return Err(Error::arg("chain length and replications must be positive"));
    }
    (0..replications)
        .into_par_iter()
        .map(|r| {
            let values = chain_values(chain, f, n, seed, tagged_stream(REPLICATION_TAG, r as u64))?;
            let avg = compensated_sum(values) / n as f64;
            Ok((avg - mean) * (avg - mean))
        })
        .collect()
}

/// Mean square error of the sample average with its standard error.
pub fn mse_of_average<C: MarkovChain>(chain: &C, f: &TestFunction, n: usize, replications: usize, seed: u64) -> Result<EstimateWithError> {
    Ok(EstimateWithError::from_samples(&mse_samples(chain, f, n, replications, seed)?))
}

/// `L * Var(batch means)` over `b` batches of length `L`, with a
/// delete-one-batch jackknife standard error.
pub fn batch_means_variance(values: &[f64], batches: usize) -> Result<EstimateWithError> {
    if batches < 8 {
        return Err(Error::arg(format!("batch means needs at least 8 batches, got {batches}")));
    }
    if values.len() < 2 * batches || !values.len().is_multiple_of(batches) {
        return Err(Error::arg(format!(
            "trace of length {} cannot be split into {batches} equal batches of length >= 2",
            values.len()
        )));
    }
    let len = values.len() / batches;
    let means: Vec<f64> = values.chunks(len).map(|c| compensated_sum(c.iter().copied()) / len as f64).collect();
    let estimate = len as f64 * mean_and_variance(&means).1;
    let leave_one_out: Vec<f64> = (0..batches)
        .map(|k| {
            let rest: Vec<f64> = means.iter().enumerate().filter(|&(i, _)| i != k).map(|(_, m)| *m).collect();
            len as f64 * mean_and_variance(&rest).1
        })
        .collect();
    let (jack_mean, _) = mean_and_variance(&leave_one_out);
    let ss = compensated_sum(leave_one_out.iter().map(|v| (v - jack_mean) * (v - jack_mean)));
    let b = batches as f64;
    Ok(EstimateWithError {
        estimate,
        stderr: ((b - 1.0) / b * ss).sqrt(),
        replications: batches,
    })
}

/// Batch means of `f` over the trace's states after the initial one.
pub fn batch_means_trace(trace: &ChainTrace, f: &TestFunction, batches: usize) -> Result<EstimateWithError> {
    let values: Vec<f64> = trace.states.iter().skip(1).map(|x| f.eval(x)).collect();
    batch_means_variance(&values, batches)
}

/// Verdict for `higher >= lower` given the paired difference and its standard error.
///
/// Weak: PASS unless `diff < -3 se`. Strict: PASS only when `diff > 3 se`,
/// INCONCLUSIVE when `|diff| <= 3 se`.
pub fn statistical_verdict(diff: f64, se: f64, strict: bool) -> Verdict {
    let slack = SE_MULTIPLIER * se;
    if diff < -slack {
        Verdict::Fail
    } else if strict && diff <= slack {
        Verdict::Inconclusive
    } else {
        Verdict::Pass
    }
}

fn paired(hi: &[f64], lo: &[f64]) -> (f64, f64) {
    let diffs: Vec<f64> = hi.iter().zip(lo).map(|(a, b)| a - b).collect();
    let e = EstimateWithError::from_samples(&diffs);
    (e.estimate, e.stderr)
}

/// Sizes and rule for a statistical comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CompareSettings {
    pub n_pairs: usize,
    /// Chain length for the MSE comparison; zero skips it.
    pub mse_n: usize,
    pub replications: usize,
    pub strict: bool,
    pub seed: u64,
}

/// Paired verdict for `higher >= lower` on one function's one-step forms.
pub fn compare_pair<C1: MarkovChain, C2: MarkovChain>(
    higher: &C1,
    lower: &C2,
    f: &TestFunction,
    n_pairs: usize,
    seed: u64,
    strict: bool,
) -> Result<(f64, f64, Verdict)> {
    let prod = |pairs: Vec<(f64, f64)>| pairs.into_iter().map(|(a, b)| a * b).collect::<Vec<_>>();
    let hi = prod(one_step_pairs(higher, f, n_pairs, seed)?);
    let lo = prod(one_step_pairs(lower, f, n_pairs, seed)?);
    let (d, se) = paired(&hi, &lo);
    Ok((d, se, statistical_verdict(d, se, strict)))
}

/// Paired one-step forms for `M, U, H, S` on a shared pool of stationary
/// starts, plus paired MSE comparisons for `(M, U)` and `(U, H)`.
pub fn compare_chains<C: MarkovChain>(chains: [&C; 4], fs: &[TestFunction], settings: &CompareSettings) -> Result<ComparisonReport> {
    if settings.n_pairs < 2 {
        return Err(Error::arg("n_pairs must be at least 2"));
    }
    let mut products: Vec<Vec<Vec<f64>>> = Vec::with_capacity(4);
    for chain in chains {
        let vals = one_step_values(chain, fs, settings.n_pairs, settings.seed)?;
        products.push(vals.into_iter().map(|v| v.into_iter().map(|(a, b)| a * b).collect()).collect());
    }
    let mut rows = Vec::new();
    for (k, f) in fs.iter().enumerate() {
        let est: Vec<EstimateWithError> = (0..4).map(|c| EstimateWithError::from_samples(&products[c][k])).collect();
        let (mu, se_mu) = paired(&products[0][k], &products[1][k]);
        let (uh, se_uh) = paired(&products[1][k], &products[2][k]);
        let (us, se_us) = paired(&products[1][k], &products[3][k]);
        rows.push(ComparisonRow {
            f_id: f.id().to_string(),
            qf_m: est[0].estimate,
            qf_u: est[1].estimate,
            qf_h: est[2].estimate,
            qf_s: est[3].estimate,
            margin_mu: mu,
            margin_uh: uh,
            margin_us: us,
            stderr: Some(RowErrors {
                m: est[0].stderr,
                u: est[1].stderr,
                h: est[2].stderr,
                s: est[3].stderr,
                mu: se_mu,
                uh: se_uh,
                us: se_us,
            }),
            verdicts: [
                statistical_verdict(mu, se_mu, settings.strict),
                statistical_verdict(uh, se_uh, settings.strict),
                statistical_verdict(us, se_us, settings.strict),
            ],
        });
    }
    let mut mse = Vec::new();
    if settings.mse_n > 0 {
        for f in fs {
            let samples: Vec<Vec<f64>> = [chains[0], chains[1], chains[2]]
                .iter()
                .map(|c| mse_samples(*c, f, settings.mse_n, settings.replications, settings.seed))
                .collect::<Result<_>>()?;
            for (hi, lo, name_hi, name_lo) in [(0, 1, "M", "U"), (1, 2, "U", "H")] {
                let (d, se) = paired(&samples[hi], &samples[lo]);
                let (eh, el) = (EstimateWithError::from_samples(&samples[hi]), EstimateWithError::from_samples(&samples[lo]));
                mse.push(MseRow {
                    f_id: f.id().to_string(),
                    higher: name_hi.into(),
                    lower: name_lo.into(),
                    mse_higher: eh.estimate,
                    mse_lower: el.estimate,
                    stderr_higher: eh.stderr,
                    stderr_lower: el.stderr,
                    difference: d,
                    stderr_difference: se,
                    verdict: statistical_verdict(d, se, settings.strict),
                });
            }
        }
    }
    Ok(ComparisonReport::new("monte_carlo", rows, mse))
}

/// The four continuous kernels in the order `M, U, H, S`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KernelQuartet {
    pub m: KernelSpec,
    pub u: KernelSpec,
    pub h: KernelSpec,
    pub s: KernelSpec,
}

impl KernelQuartet {
    /// Picks one kernel of each kind from a list.
    pub fn from_list(kernels: &[KernelSpec]) -> Result<Self> {
        let kinds = ["rwm", "hybrid_slice", "hit_and_run", "simple_slice"];
        let found: Vec<Option<&KernelSpec>> = kinds.iter().map(|name| kernels.iter().find(|k| k.name() == *name)).collect();
        let missing: Vec<&str> = kinds.iter().zip(&found).filter(|(_, k)| k.is_none()).map(|(n, _)| *n).collect();
        if !missing.is_empty() {
            return Err(Error::arg(format!("comparison needs one kernel of each kind; missing: {}", missing.join(", "))));
        }
        let pick = |i: usize| found[i].cloned().expect("checked above");
        Ok(Self {
            m: pick(0),
            u: pick(1),
            h: pick(2),
            s: pick(3),
        })
    }
}

/// [`compare_chains`] for the continuous kernels on `target`.
pub fn compare_kernels(target: &TargetDensity, kernels: &KernelQuartet, fs: &[TestFunction], settings: &CompareSettings) -> Result<ComparisonReport> {
    let chains = [
        ContinuousChain::new(target, &kernels.m),
        ContinuousChain::new(target, &kernels.u),
        ContinuousChain::new(target, &kernels.h),
        ContinuousChain::new(target, &kernels.s),
    ];
    compare_chains([&chains[0], &chains[1], &chains[2], &chains[3]], fs, settings)
}

/// Stream id for the `k`-th independent chain run by callers of [`chain_values`].
pub fn chain_stream(k: u64) -> u64 {
    tagged_stream(CHAIN_TAG, k)
}
