//! Target distributions given by unnormalized densities on a bounded support,
//! plus the line geometry every sampler needs.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};

pub type DensityFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type SupportFn = Arc<dyn Fn(&[f64]) -> bool + Send + Sync>;

/// Default cap on rejection attempts for exact draws from the target.
pub const DEFAULT_ATTEMPT_CAP: u64 = 1_000_000;

/// Relative tolerance on level-chord endpoints, as a fraction of the chord length.
pub const BISECTION_REL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundingBox {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl BoundingBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.is_empty() || lo.len() != hi.len() {
            return Err(Error::arg(format!(
                "bounding box corners have lengths {} and {}",
                lo.len(),
                hi.len()
            )));
        }
        for (i, (l, h)) in lo.iter().zip(&hi).enumerate() {
            if !(l.is_finite() && h.is_finite() && l < h) {
                return Err(Error::arg(format!("bounding box axis {i}: need lo < hi, got [{l}, {h}]")));
            }
        }
        Ok(Self { lo, hi })
    }

    pub fn cube(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![lo; dim], vec![hi; dim])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(l, h)| h - l).product()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && x.iter().zip(self.lo.iter().zip(&self.hi)).all(|(v, (l, h))| l <= v && v <= h)
    }

    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| l + (h - l) * rng.random::<f64>())
            .collect()
    }
}

/// Analytically known per-coordinate mean and variance under the target.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Moments {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

/// Unnormalized density `rho` with support `K`, a bounding box containing `K`
/// and an upper bound on `rho`. Immutable once built; clone freely across threads.
#[derive(Clone)]
pub struct TargetDensity {
    id: String,
    dim: usize,
    rho: DensityFn,
    support: SupportFn,
    bbox: BoundingBox,
    sup_rho: f64,
    quasi_concave: bool,
    exact_moments: Option<Moments>,
}

impl fmt::Debug for TargetDensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TargetDensity")
            .field("id", &self.id)
            .field("dim", &self.dim)
            .field("bbox", &self.bbox)
            .field("sup_rho", &self.sup_rho)
            .field("quasi_concave", &self.quasi_concave)
            .finish()
    }
}

impl TargetDensity {
    pub fn new<F, S>(id: impl Into<String>, bbox: BoundingBox, sup_rho: f64, quasi_concave: bool, rho: F, support: S) -> Result<Self>
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
        S: Fn(&[f64]) -> bool + Send + Sync + 'static,
    {
        if !(sup_rho.is_finite() && sup_rho > 0.0) {
            return Err(Error::arg(format!("sup_rho must be positive and finite, got {sup_rho}")));
        }
        Ok(Self {
            id: id.into(),
            dim: bbox.dim(),
            rho: Arc::new(rho),
            support: Arc::new(support),
            bbox,
            sup_rho,
            quasi_concave,
            exact_moments: None,
        })
    }

    pub fn with_exact_moments(mut self, moments: Moments) -> Self {
        self.exact_moments = Some(moments);
        self
    }

    /// Same target with a different declared bound on `rho`.
    pub fn with_sup_rho(mut self, sup_rho: f64) -> Self {
        self.sup_rho = sup_rho;
        self
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bbox(&self) -> &BoundingBox {
        &self.bbox
    }

    pub fn sup_rho(&self) -> f64 {
        self.sup_rho
    }

    pub fn is_quasi_concave(&self) -> bool {
        self.quasi_concave
    }

    pub fn exact_moments(&self) -> Option<&Moments> {
        self.exact_moments.as_ref()
    }

    pub fn in_support(&self, x: &[f64]) -> bool {
        x.len() == self.dim && (self.support)(x)
    }

    /// `rho(x)` without the dimension check. Zero outside the support.
    #[inline]
    pub(crate) fn density(&self, x: &[f64]) -> f64 {
        if (self.support)(x) {
            (self.rho)(x)
        } else {
            0.0
        }
    }

    /// `rho(x)`; exactly zero when `x` is outside the support.
    pub fn eval_density(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        Ok(self.density(x))
    }

    pub(crate) fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::arg(format!(
                "point has dimension {} but target `{}` has dimension {}",
                x.len(),
                self.id,
                self.dim
            )));
        }
        Ok(())
    }

    pub(crate) fn require_support(&self, x: &[f64]) -> Result<()> {
        self.check_dim(x)?;
        if !(self.support)(x) {
            return Err(Error::Domain {
                target: self.id.clone(),
                point: x.to_vec(),
            });
        }
        Ok(())
    }

    /// Parameter range of the line `x + s theta` inside the bounding box.
    pub fn chord_segment(&self, x: &[f64], theta: &[f64]) -> Result<Chord> {
        self.require_support(x)?;
        if theta.len() != self.dim {
            return Err(Error::arg("direction has the wrong dimension"));
        }
        let norm = theta.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::arg("direction must be a nonzero finite vector"));
        }
        let direction: Vec<f64> = if (norm - 1.0).abs() <= 1e-15 {
            theta.to_vec()
        } else {
            theta.iter().map(|v| v / norm).collect()
        };
        let (mut s_lo, mut s_hi) = (f64::NEG_INFINITY, f64::INFINITY);
        for i in 0..self.dim {
            let d = direction[i];
            if d == 0.0 {
                continue;
            }
            let a = (self.bbox.lo[i] - x[i]) / d;
            let b = (self.bbox.hi[i] - x[i]) / d;
            s_lo = s_lo.max(a.min(b));
            s_hi = s_hi.min(a.max(b));
        }
        Ok(Chord {
            anchor: x.to_vec(),
            direction,
            s_lo: s_lo.min(0.0),
            s_hi: s_hi.max(0.0),
        })
    }

    /// The set `{s : rho(x + s theta) > t}` on the bounding-box chord.
    ///
    /// Quasi-concave targets get a single interval with endpoints located by
    /// bisection; other targets (and degenerate brackets) report
    /// [`LevelChord::RejectionOnly`] with a segment known to contain the set.
    pub fn level_chord(&self, x: &[f64], theta: &[f64], t: f64) -> Result<LevelChord> {
        let chord = self.chord_segment(x, theta)?;
        let rho_x = self.density(x);
        if !(t >= 0.0 && t < rho_x) {
            return Err(Error::arg(format!("level t = {t} must lie in [0, rho(x) = {rho_x})")));
        }
        if !self.quasi_concave {
            return Ok(LevelChord::RejectionOnly(chord));
        }
        let tol = BISECTION_REL_TOL * (chord.s_hi - chord.s_lo);
        let above = |s: f64| self.density(&chord.point_at(s)) > t;
        let (hi_in, hi_out) = bisect_edge(0.0, chord.s_hi, tol, &above);
        let (lo_in, lo_out) = bisect_edge(0.0, chord.s_lo, tol, &above);
        if hi_in > lo_in {
            Ok(LevelChord::Interval(IntervalSet::single(lo_in, hi_in)?))
        } else {
            Ok(LevelChord::RejectionOnly(Chord {
                s_lo: lo_out,
                s_hi: hi_out,
                ..chord
            }))
        }
    }

    /// Exact draw from the normalized target by rejection from the bounding box.
    pub fn sample_pi<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<f64>> {
        self.sample_pi_capped(rng, DEFAULT_ATTEMPT_CAP)
    }

    pub fn sample_pi_capped<R: Rng + ?Sized>(&self, rng: &mut R, attempt_cap: u64) -> Result<Vec<f64>> {
        for _ in 0..attempt_cap {
            let y = self.bbox.sample_uniform(rng);
            let rho = self.density(&y);
            if rho > self.sup_rho {
                return Err(Error::BoundViolation {
                    target: self.id.clone(),
                    observed: rho,
                    bound: self.sup_rho,
                });
            }
            if rng.random::<f64>() * self.sup_rho < rho {
                return Ok(y);
            }
        }
        Err(Error::Efficiency {
            target: self.id.clone(),
            attempts: attempt_cap,
            level: None,
        })
    }

    /// Randomized search for density values above the declared bound.
    /// Returns the largest `rho` observed.
    pub fn audit_density_bound<R: Rng + ?Sized>(&self, probes: usize, rng: &mut R) -> Result<f64> {
        let mut observed: f64 = 0.0;
        for _ in 0..probes {
            let y = self.bbox.sample_uniform(rng);
            observed = observed.max(self.density(&y));
        }
        if observed > self.sup_rho {
            return Err(Error::BoundViolation {
                target: self.id.clone(),
                observed,
                bound: self.sup_rho,
            });
        }
        Ok(observed)
    }
}

/// Walk from `inside` toward `outside` until the bracket is below `tol`.
/// Returns the final `(inside, outside)` pair; `outside` equals the start value
/// when the whole segment satisfies the predicate.
fn bisect_edge<F: Fn(f64) -> bool>(inside: f64, outside: f64, tol: f64, pred: &F) -> (f64, f64) {
    if pred(outside) {
        return (outside, outside);
    }
    let (mut a, mut b) = (inside, outside);
    while (b - a).abs() > tol {
        let mid = 0.5 * (a + b);
        if mid == a || mid == b {
            break;
        }
        if pred(mid) {
            a = mid;
        } else {
            b = mid;
        }
    }
    (a, b)
}

/// Line through `anchor` along unit `direction`, restricted to `s in [s_lo, s_hi]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Chord {
    pub anchor: Vec<f64>,
    pub direction: Vec<f64>,
    pub s_lo: f64,
    pub s_hi: f64,
}

impl Chord {
    pub fn point_at(&self, s: f64) -> Vec<f64> {
        self.anchor.iter().zip(&self.direction).map(|(a, d)| a + s * d).collect()
    }

    pub fn length(&self) -> f64 {
        self.s_hi - self.s_lo
    }
}

/// Ordered disjoint open intervals in the chord parameter.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntervalSet {
    intervals: Vec<(f64, f64)>,
}

impl IntervalSet {
    pub fn new(intervals: Vec<(f64, f64)>) -> Result<Self> {
        for (i, &(a, b)) in intervals.iter().enumerate() {
            if !(a < b) {
                return Err(Error::arg(format!("interval {i} is empty: ({a}, {b})")));
            }
            if let Some(&(_, prev_b)) = i.checked_sub(1).map(|p| &intervals[p]) {
                if prev_b > a {
                    return Err(Error::arg(format!("interval {i} overlaps its predecessor")));
                }
            }
        }
        Ok(Self { intervals })
    }

    pub fn single(a: f64, b: f64) -> Result<Self> {
        Self::new(vec![(a, b)])
    }

    pub fn intervals(&self) -> &[(f64, f64)] {
        &self.intervals
    }

    pub fn total_length(&self) -> f64 {
        self.intervals.iter().map(|(a, b)| b - a).sum()
    }

    pub fn contains(&self, s: f64) -> bool {
        self.intervals.iter().any(|&(a, b)| a < s && s < b)
    }

    /// Uniform draw on the union.
    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let mut u = rng.random::<f64>() * self.total_length();
        for &(a, b) in &self.intervals {
            let len = b - a;
            if u < len {
                return a + u;
            }
            u -= len;
        }
        let &(a, b) = self.intervals.last().expect("interval set is nonempty");
        0.5 * (a + b)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LevelChord {
    Interval(IntervalSet),
    /// The level set on this segment is not available in closed form; sample
    /// uniformly on the segment and keep points above the level.
    RejectionOnly(Chord),
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Constant density on a box.
pub fn uniform_box(bbox: BoundingBox) -> Result<TargetDensity> {
    let moments = Moments {
        mean: bbox.lo().iter().zip(bbox.hi()).map(|(l, h)| 0.5 * (l + h)).collect(),
        variance: bbox.lo().iter().zip(bbox.hi()).map(|(l, h)| (h - l) * (h - l) / 12.0).collect(),
    };
    let b = bbox.clone();
    Ok(TargetDensity::new("uniform_box", bbox, 1.0, true, |_| 1.0, move |x| b.contains(x))?.with_exact_moments(moments))
}

/// Constant density on the closed ball of radius `radius` around the origin.
pub fn uniform_ball(dim: usize, radius: f64) -> Result<TargetDensity> {
    if !(radius > 0.0) {
        return Err(Error::arg("ball radius must be positive"));
    }
    let bbox = BoundingBox::cube(dim, -radius, radius)?;
    let moments = Moments {
        mean: vec![0.0; dim],
        variance: vec![radius * radius / (dim as f64 + 2.0); dim],
    };
    Ok(TargetDensity::new("uniform_ball", bbox, 1.0, true, |_| 1.0, move |x| norm(x) <= radius)?.with_exact_moments(moments))
}

/// Standard Gaussian shape `exp(-|x|^2 / 2)` truncated to a box.
pub fn gaussian_box(bbox: BoundingBox) -> Result<TargetDensity> {
    let dist2: f64 = bbox
        .lo()
        .iter()
        .zip(bbox.hi())
        .map(|(&l, &h)| {
            let c = 0.0f64.clamp(l, h);
            c * c
        })
        .sum();
    let sup = (-0.5 * dist2).exp();
    let b = bbox.clone();
    TargetDensity::new(
        "gaussian_box",
        bbox,
        sup,
        true,
        |x| (-0.5 * x.iter().map(|v| v * v).sum::<f64>()).exp(),
        move |x| b.contains(x),
    )
}

/// Cone `1 - |x|` on the open unit ball.
pub fn cone(dim: usize) -> Result<TargetDensity> {
    let bbox = BoundingBox::cube(dim, -1.0, 1.0)?;
    let mut target = TargetDensity::new("cone", bbox, 1.0, true, |x| 1.0 - norm(x), |x| norm(x) < 1.0)?;
    if dim == 1 {
        // E x^2 = 2 * int_0^1 x^2 (1 - x) dx = 1/6.
        target = target.with_exact_moments(Moments {
            mean: vec![0.0],
            variance: vec![1.0 / 6.0],
        });
    }
    Ok(target)
}

/// Symmetric two-component Gaussian-shape mixture on `[-limit, limit]`;
/// modes at `+-separation`, component width `width`. Not quasi-concave.
pub fn bimodal(separation: f64, width: f64, limit: f64) -> Result<TargetDensity> {
    if !(separation > 0.0 && width > 0.0 && limit > separation) {
        return Err(Error::arg("bimodal needs 0 < separation < limit and width > 0"));
    }
    let bbox = BoundingBox::new(vec![-limit], vec![limit])?;
    // At any x one mode is at least `separation` away.
    let sup = 1.0 + (-separation * separation / (2.0 * width * width)).exp();
    let inv = 1.0 / (2.0 * width * width);
    TargetDensity::new(
        "bimodal",
        bbox,
        sup,
        false,
        move |x| {
            let v = x[0];
            (-(v - separation).powi(2) * inv).exp() + (-(v + separation).powi(2) * inv).exp()
        },
        move |x| x[0].abs() <= limit,
    )
}
