//! One-transition implementations of the four kernels: hit-and-run, simple
//! slice, hybrid slice (uniform hit-and-run on the level set) and lazy random
//! walk Metropolis.

mod proposal;
mod trace;

pub use proposal::{unit_ball_volume, ProposalSpec};
pub use trace::{format_float, run_chain, ChainTrace};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::targets::{Chord, LevelChord, TargetDensity, DEFAULT_ATTEMPT_CAP};

/// Inverse-CDF nodes on each hit-and-run chord.
pub const DEFAULT_INNER_GRID: usize = 4096;

const CHORD_REDRAW_CAP: u64 = 10_000;

fn default_inner_grid() -> usize {
    DEFAULT_INNER_GRID
}

fn default_attempt_cap() -> u64 {
    DEFAULT_ATTEMPT_CAP
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelSpec {
    HitAndRun {
        #[serde(default = "default_inner_grid")]
        inner_grid: usize,
    },
    SimpleSlice {
        #[serde(default = "default_attempt_cap")]
        attempt_cap: u64,
    },
    HybridSlice {
        #[serde(default = "default_attempt_cap")]
        attempt_cap: u64,
    },
    Rwm {
        proposal: ProposalSpec,
    },
}

impl KernelSpec {
    pub fn hit_and_run() -> Self {
        KernelSpec::HitAndRun {
            inner_grid: DEFAULT_INNER_GRID,
        }
    }

    pub fn simple_slice() -> Self {
        KernelSpec::SimpleSlice {
            attempt_cap: DEFAULT_ATTEMPT_CAP,
        }
    }

    pub fn hybrid_slice() -> Self {
        KernelSpec::HybridSlice {
            attempt_cap: DEFAULT_ATTEMPT_CAP,
        }
    }

    pub fn rwm(proposal: ProposalSpec) -> Self {
        KernelSpec::Rwm { proposal }
    }

    pub fn name(&self) -> &'static str {
        match self {
            KernelSpec::HitAndRun { .. } => "hit_and_run",
            KernelSpec::SimpleSlice { .. } => "simple_slice",
            KernelSpec::HybridSlice { .. } => "hybrid_slice",
            KernelSpec::Rwm { .. } => "rwm",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            KernelSpec::HitAndRun { inner_grid } if *inner_grid < 2 => {
                Err(Error::arg(format!("inner_grid must be at least 2, got {inner_grid}")))
            }
            KernelSpec::SimpleSlice { attempt_cap } | KernelSpec::HybridSlice { attempt_cap } if *attempt_cap == 0 => {
                Err(Error::arg("attempt_cap must be positive"))
            }
            KernelSpec::Rwm { proposal } => proposal.validate(),
            _ => Ok(()),
        }
    }

    /// One transition from `x`.
    pub fn step<R: Rng + ?Sized>(&self, target: &TargetDensity, x: &[f64], rng: &mut R) -> Result<StepOutcome> {
        match *self {
            KernelSpec::HitAndRun { inner_grid } => {
                hit_and_run_step(target, x, inner_grid, rng).map(|point| StepOutcome {
                    point,
                    accepted: true,
                    rejections: 0,
                })
            }
            KernelSpec::SimpleSlice { attempt_cap } => simple_slice_step(target, x, attempt_cap, rng),
            KernelSpec::HybridSlice { attempt_cap } => hybrid_slice_step(target, x, attempt_cap, rng),
            KernelSpec::Rwm { ref proposal } => rwm_step(target, proposal, x, rng),
        }
    }
}

/// Result of one transition.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub point: Vec<f64>,
    /// For Metropolis: whether the proposal was taken. Always true otherwise.
    pub accepted: bool,
    /// Rejected candidates drawn inside the step.
    pub rejections: u64,
}

/// Uniform direction on the unit sphere in `dim` dimensions.
pub fn sample_direction<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let z: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm >= 1e-300 {
            return z.into_iter().map(|v| v / norm).collect();
        }
    }
}

/// Draw `x + s theta` with `s` from the density proportional to `rho` on the
/// chord, through a trapezoid inverse CDF on `nodes` equally spaced nodes with
/// linear interpolation of the CDF inside each cell.
pub fn sample_on_chord<R: Rng + ?Sized>(target: &TargetDensity, chord: &Chord, nodes: usize, rng: &mut R) -> Result<Vec<f64>> {
    if nodes < 2 {
        return Err(Error::arg("chord sampling needs at least two nodes"));
    }
    let len = chord.length();
    if len <= 0.0 {
        return Ok(chord.anchor.clone());
    }
    let h = len / (nodes - 1) as f64;
    let mut point = chord.anchor.clone();
    let mut rho_at = |s: f64| {
        for ((p, a), d) in point.iter_mut().zip(&chord.anchor).zip(&chord.direction) {
            *p = a + s * d;
        }
        target.density(&point)
    };
    let mut cumulative = Vec::with_capacity(nodes);
    cumulative.push(0.0);
    let mut prev = rho_at(chord.s_lo);
    let mut total = 0.0;
    for k in 1..nodes {
        let cur = rho_at(chord.s_lo + k as f64 * h);
        total += 0.5 * h * (prev + cur);
        cumulative.push(total);
        prev = cur;
    }
    if !(total > 1e-300) {
        return Err(Error::Numerical(format!(
            "chord through {:?} carries no mass under target `{}`",
            chord.anchor,
            target.id()
        )));
    }
    // A cell straddling the edge of K spreads its mass over the whole cell, so
    // draws that land outside the support are redrawn.
    for _ in 0..CHORD_REDRAW_CAP {
        let u = rng.random::<f64>() * total;
        // First node with cumulative mass above u; the cell is (cell - 1, cell).
        let cell = cumulative.partition_point(|&c| c <= u).clamp(1, nodes - 1);
        let (c0, c1) = (cumulative[cell - 1], cumulative[cell]);
        let frac = if c1 > c0 { (u - c0) / (c1 - c0) } else { 0.5 };
        let s = (chord.s_lo + ((cell - 1) as f64 + frac) * h).clamp(chord.s_lo, chord.s_hi);
        let y = chord.point_at(s);
        if target.in_support(&y) {
            return Ok(y);
        }
    }
    Err(Error::Efficiency {
        target: target.id().to_string(),
        attempts: CHORD_REDRAW_CAP,
        level: None,
    })
}

/// Hit-and-run: uniform direction, then the target's conditional on the chord.
pub fn hit_and_run_step<R: Rng + ?Sized>(target: &TargetDensity, x: &[f64], nodes: usize, rng: &mut R) -> Result<Vec<f64>> {
    target.require_support(x)?;
    let theta = sample_direction(target.dim(), rng);
    let chord = target.chord_segment(x, &theta)?;
    sample_on_chord(target, &chord, nodes, rng)
}

/// Level `t` uniform on the open interval `(0, rho_x)`.
fn sample_level<R: Rng + ?Sized>(rho_x: f64, rng: &mut R) -> f64 {
    loop {
        let t = rho_x * rng.random::<f64>();
        if t > 0.0 && t < rho_x {
            return t;
        }
    }
}

/// Simple slice sampler: level `t` below `rho(x)`, then a uniform point of the
/// level set `{rho > t}` by rejection from the bounding box.
pub fn simple_slice_step<R: Rng + ?Sized>(target: &TargetDensity, x: &[f64], attempt_cap: u64, rng: &mut R) -> Result<StepOutcome> {
    target.require_support(x)?;
    let t = sample_level(target.density(x), rng);
    for attempt in 0..attempt_cap {
        let y = target.bbox().sample_uniform(rng);
        if target.density(&y) > t {
            return Ok(StepOutcome {
                point: y,
                accepted: true,
                rejections: attempt,
            });
        }
    }
    Err(Error::Efficiency {
        target: target.id().to_string(),
        attempts: attempt_cap,
        level: Some(t),
    })
}

/// Hybrid slice sampler: level `t` and direction drawn independently, then a
/// uniform point on the chord restricted to `{rho > t}`.
pub fn hybrid_slice_step<R: Rng + ?Sized>(target: &TargetDensity, x: &[f64], attempt_cap: u64, rng: &mut R) -> Result<StepOutcome> {
    target.require_support(x)?;
    let t = sample_level(target.density(x), rng);
    let theta = sample_direction(target.dim(), rng);
    match target.level_chord(x, &theta, t)? {
        LevelChord::Interval(set) => {
            let chord = target.chord_segment(x, &theta)?;
            Ok(StepOutcome {
                point: chord.point_at(set.sample_uniform(rng)),
                accepted: true,
                rejections: 0,
            })
        }
        LevelChord::RejectionOnly(chord) => {
            for attempt in 0..attempt_cap {
                let s = chord.s_lo + (chord.s_hi - chord.s_lo) * rng.random::<f64>();
                let y = chord.point_at(s);
                if target.density(&y) > t {
                    return Ok(StepOutcome {
                        point: y,
                        accepted: true,
                        rejections: attempt,
                    });
                }
            }
            Err(Error::Efficiency {
                target: target.id().to_string(),
                attempts: attempt_cap,
                level: Some(t),
            })
        }
    }
}

/// Lazy random walk Metropolis: hold with probability 1/2, otherwise accept
/// `x + z` with probability `min{1, rho(x+z)/rho(x)}` (zero outside the support).
pub fn rwm_step<R: Rng + ?Sized>(target: &TargetDensity, proposal: &ProposalSpec, x: &[f64], rng: &mut R) -> Result<StepOutcome> {
    target.require_support(x)?;
    let z = proposal.sample(target.dim(), rng);
    let u1 = rng.random::<f64>();
    let u2 = rng.random::<f64>();
    let y: Vec<f64> = x.iter().zip(&z).map(|(a, b)| a + b).collect();
    let accepted = u1 <= 0.5 && u2 < target.density(&y) / target.density(x);
    Ok(StepOutcome {
        point: if accepted { y } else { x.to_vec() },
        accepted,
        rejections: u64::from(!accepted),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::simpson;
    use crate::rng::stream_rng;
    use crate::stats::{chi_square_gof, ks_one_sample, ks_two_sample};
    use crate::targets::{bimodal, cone, gaussian_box, uniform_ball, uniform_box, BoundingBox};
    use approx::assert_abs_diff_eq;

    const ALPHA: f64 = 1e-3;

    fn angle_bins(points: &[Vec<f64>], bins: usize) -> Vec<u64> {
        let angles: Vec<f64> = points.iter().map(|p| p[1].atan2(p[0])).collect();
        crate::stats::histogram(&angles, -std::f64::consts::PI, std::f64::consts::PI, bins)
    }

    #[test]
    fn direction_in_1d_is_a_fair_sign() {
        let mut rng = stream_rng(1, 0);
        let plus = (0..10_000).filter(|_| sample_direction(1, &mut rng)[0] > 0.0).count();
        assert!((plus as f64 / 1e4 - 0.5).abs() <= 0.01 + 3.0 * 0.005);
    }

    #[test]
    fn direction_in_2d_has_uniform_angle() {
        let mut rng = stream_rng(2, 0);
        let pts: Vec<Vec<f64>> = (0..100_000).map(|_| sample_direction(2, &mut rng)).collect();
        for p in &pts {
            assert_abs_diff_eq!(p.iter().map(|v| v * v).sum::<f64>().sqrt(), 1.0, epsilon = 1e-12);
        }
        let r = chi_square_gof(&angle_bins(&pts, 16), &[1.0 / 16.0; 16]).unwrap();
        assert!(r.passes(ALPHA), "{r:?}");
    }

    #[test]
    fn chord_sampling_uniform_target_is_uniform() {
        let t = uniform_box(BoundingBox::cube(2, -1.0, 1.0).unwrap()).unwrap();
        let chord = t.chord_segment(&[0.3, -0.2], &[0.6, 0.8]).unwrap();
        let mut rng = stream_rng(3, 0);
        let s: Vec<f64> = (0..10_000)
            .map(|_| {
                let y = sample_on_chord(&t, &chord, DEFAULT_INNER_GRID, &mut rng).unwrap();
                (y[0] - 0.3) / 0.6
            })
            .collect();
        let r = ks_one_sample(&s, |v| ((v - chord.s_lo) / chord.length()).clamp(0.0, 1.0)).unwrap();
        assert!(r.passes(ALPHA), "{r:?}");
    }

    #[test]
    fn chord_sampling_matches_cone_cdf() {
        let t = cone(1).unwrap();
        let chord = t.chord_segment(&[0.0], &[1.0]).unwrap();
        let mut rng = stream_rng(4, 0);
        let s: Vec<f64> = (0..100_000)
            .map(|_| sample_on_chord(&t, &chord, DEFAULT_INNER_GRID, &mut rng).unwrap()[0])
            .collect();
        let cdf = |x: f64| {
            let x = x.clamp(-1.0, 1.0);
            if x < 0.0 {
                0.5 * (1.0 + x) * (1.0 + x)
            } else {
                1.0 - 0.5 * (1.0 - x) * (1.0 - x)
            }
        };
        let r = ks_one_sample(&s, cdf).unwrap();
        assert!(r.passes(ALPHA), "{r:?}");
    }

    #[test]
    fn chord_sampling_is_grid_refinement_stable() {
        let t = gaussian_box(BoundingBox::cube(1, -2.5, 2.5).unwrap()).unwrap();
        let chord = t.chord_segment(&[0.4], &[1.0]).unwrap();
        let mut rng = stream_rng(5, 0);
        let coarse: Vec<f64> = (0..50_000).map(|_| sample_on_chord(&t, &chord, 1 << 12, &mut rng).unwrap()[0]).collect();
        let fine: Vec<f64> = (0..50_000).map(|_| sample_on_chord(&t, &chord, 1 << 13, &mut rng).unwrap()[0]).collect();
        let r = ks_two_sample(&coarse, &fine).unwrap();
        assert!(r.passes(ALPHA), "{r:?}");
    }

    #[test]
    fn hit_and_run_from_ball_center_has_uniform_direction() {
        let t = uniform_ball(2, 1.0).unwrap();
        let mut rng = stream_rng(6, 0);
        let pts: Vec<Vec<f64>> = (0..100_000)
            .map(|_| hit_and_run_step(&t, &[0.0, 0.0], DEFAULT_INNER_GRID, &mut rng).unwrap())
            .collect();
        assert!(pts.iter().all(|p| t.in_support(p)));
        let r = chi_square_gof(&angle_bins(&pts, 16), &[1.0 / 16.0; 16]).unwrap();
        assert!(r.passes(ALPHA), "{r:?}");
    }

    #[test]
    fn simple_slice_uniform_target_is_exact_after_one_step() {
        let t = uniform_box(BoundingBox::cube(1, 0.0, 1.0).unwrap()).unwrap();
        let mut rng = stream_rng(7, 0);
        let ys: Vec<f64> = (0..100_000).map(|_| simple_slice_step(&t, &[0.9], DEFAULT_ATTEMPT_CAP, &mut rng).unwrap().point[0]).collect();
        let xs: Vec<f64> = (0..100_000).map(|_| t.sample_pi(&mut rng).unwrap()[0]).collect();
        let r = ks_two_sample(&ys, &xs).unwrap();
        assert!(r.passes(ALPHA), "{r:?}");
    }

    #[test]
    fn simple_slice_cone_matches_quadrature_law() {
        // S(0, A) = int_0^1 |A cap (-(1-t), 1-t)| / (2 (1-t)) dt, evaluated per bin.
        let t = cone(1).unwrap();
        let bins = 32;
        let w = 2.0 / bins as f64;
        let probs: Vec<f64> = (0..bins)
            .map(|k| {
                let (a, b) = (-1.0 + k as f64 * w, -1.0 + (k + 1) as f64 * w);
                simpson(
                    |lvl| {
                        let half = 1.0 - lvl;
                        let overlap = (b.min(half) - a.max(-half)).max(0.0);
                        overlap / (2.0 * half)
                    },
                    0.0,
                    1.0 - 1e-12,
                    20_000,
                )
            })
            .collect();
        let mut rng = stream_rng(8, 0);
        let ys: Vec<f64> = (0..100_000).map(|_| simple_slice_step(&t, &[0.0], DEFAULT_ATTEMPT_CAP, &mut rng).unwrap().point[0]).collect();
        let r = chi_square_gof(&crate::stats::histogram(&ys, -1.0, 1.0, bins), &probs).unwrap();
        assert!(r.passes(ALPHA), "{r:?}");
    }

    #[test]
    fn slice_outputs_stay_above_level() {
        // Re-run the level draw with a cloned stream to recover t.
        let targets = [cone(1).unwrap(), bimodal(1.5, 0.5, 3.5).unwrap(), cone(2).unwrap()];
        for t in &targets {
            let x = vec![0.1; t.dim()];
            let x = if t.in_support(&x) { x } else { vec![1.5] };
            for seed in 0..500u64 {
                let mut rng = stream_rng(seed, 1);
                let mut probe = rng.clone();
                let level = sample_level(t.density(&x), &mut probe);
                let y = simple_slice_step(t, &x, DEFAULT_ATTEMPT_CAP, &mut rng).unwrap().point;
                assert!(t.density(&y) > level);
                let mut rng = stream_rng(seed, 2);
                let mut probe = rng.clone();
                let level = sample_level(t.density(&x), &mut probe);
                let y = hybrid_slice_step(t, &x, DEFAULT_ATTEMPT_CAP, &mut rng).unwrap().point;
                assert!(t.density(&y) > level);
            }
        }
    }

    #[test]
    fn hybrid_and_simple_slice_agree_in_1d() {
        for t in [cone(1).unwrap(), bimodal(1.5, 0.5, 3.5).unwrap()] {
            let x = [0.2];
            let mut rng = stream_rng(9, 0);
            let a: Vec<f64> = (0..100_000).map(|_| hybrid_slice_step(&t, &x, DEFAULT_ATTEMPT_CAP, &mut rng).unwrap().point[0]).collect();
            let b: Vec<f64> = (0..100_000).map(|_| simple_slice_step(&t, &x, DEFAULT_ATTEMPT_CAP, &mut rng).unwrap().point[0]).collect();
            let r = ks_two_sample(&a, &b).unwrap();
            assert!(r.passes(ALPHA), "{}: {r:?}", t.id());
        }
    }

    #[test]
    fn hybrid_slice_uniform_target_is_uniform_on_chord() {
        let t = uniform_box(BoundingBox::cube(1, -1.0, 3.0).unwrap()).unwrap();
        let mut rng = stream_rng(10, 0);
        let ys: Vec<f64> = (0..10_000).map(|_| hybrid_slice_step(&t, &[0.0], DEFAULT_ATTEMPT_CAP, &mut rng).unwrap().point[0]).collect();
        let r = ks_one_sample(&ys, |v| ((v + 1.0) / 4.0).clamp(0.0, 1.0)).unwrap();
        assert!(r.passes(ALPHA), "{r:?}");
    }

    #[test]
    fn rwm_uniform_target_accepts_every_lazy_coin_inside() {
        let t = uniform_box(BoundingBox::cube(2, -10.0, 10.0).unwrap()).unwrap();
        let spec = ProposalSpec::BallWalk { delta: 0.5 };
        let mut rng = stream_rng(11, 0);
        for _ in 0..1000 {
            let mut probe = rng.clone();
            let _ = spec.sample(2, &mut probe);
            let u1 = probe.random::<f64>();
            let out = rwm_step(&t, &spec, &[0.0, 0.0], &mut rng).unwrap();
            assert_eq!(out.accepted, u1 <= 0.5);
        }
    }

    #[test]
    fn rwm_acceptance_is_density_ratio() {
        // rho(x) = 2 at x = 0 and 1 everywhere the ball walk can reach: half the
        // lazy-coin passes are accepted.
        let bbox = BoundingBox::cube(1, -5.0, 5.0).unwrap();
        let t = crate::targets::TargetDensity::new("step", bbox, 2.0, false, |x| if x[0].abs() < 1e-3 { 2.0 } else { 1.0 }, |x| x[0].abs() <= 5.0).unwrap();
        let spec = ProposalSpec::BallWalk { delta: 1.0 };
        let mut rng = stream_rng(12, 0);
        let (mut passes, mut accepts) = (0u32, 0u32);
        for _ in 0..100_000 {
            let mut probe = rng.clone();
            let _ = spec.sample(1, &mut probe);
            let u1 = probe.random::<f64>();
            let out = rwm_step(&t, &spec, &[0.0], &mut rng).unwrap();
            if u1 <= 0.5 {
                passes += 1;
                accepts += u32::from(out.accepted);
            }
        }
        let rate = accepts as f64 / passes as f64;
        assert!((rate - 0.5).abs() < 4.0 * (0.25 / passes as f64).sqrt(), "rate {rate}");
    }

    #[test]
    fn rwm_holds_at_least_half_the_time_and_never_leaves_support() {
        let targets = [
            cone(1).unwrap(),
            uniform_ball(2, 1.0).unwrap(),
            gaussian_box(BoundingBox::cube(2, -2.5, 2.5).unwrap()).unwrap(),
            bimodal(1.5, 0.5, 3.5).unwrap(),
        ];
        let spec = ProposalSpec::Gaussian { scale: 0.7 };
        for t in &targets {
            let mut rng = stream_rng(13, 0);
            let mut x = t.sample_pi(&mut rng).unwrap();
            let mut holds = 0u32;
            for _ in 0..100_000 {
                let out = rwm_step(t, &spec, &x, &mut rng).unwrap();
                assert!(t.in_support(&out.point));
                holds += u32::from(out.point == x);
                x = out.point;
            }
            assert!(holds as f64 / 1e5 >= 0.5, "{}: hold rate {}", t.id(), holds as f64 / 1e5);
        }
    }

    #[test]
    fn hit_and_run_in_1d_samples_target_in_one_step() {
        let t = cone(1).unwrap();
        let mut rng = stream_rng(14, 0);
        let ys: Vec<f64> = (0..100_000).map(|_| hit_and_run_step(&t, &[0.9], DEFAULT_INNER_GRID, &mut rng).unwrap()[0]).collect();
        let xs: Vec<f64> = (0..100_000).map(|_| t.sample_pi(&mut rng).unwrap()[0]).collect();
        let r = ks_two_sample(&ys, &xs).unwrap();
        assert!(r.passes(ALPHA), "{r:?}");
    }

    #[test]
    fn spec_validation() {
        assert!(KernelSpec::HitAndRun { inner_grid: 1 }.validate().is_err());
        assert!(KernelSpec::SimpleSlice { attempt_cap: 0 }.validate().is_err());
        assert!(KernelSpec::rwm(ProposalSpec::BallWalk { delta: -1.0 }).validate().is_err());
        assert!(KernelSpec::hit_and_run().validate().is_ok());
    }

    #[test]
    fn tiny_attempt_cap_reports_level() {
        let t = cone(2).unwrap();
        let mut rng = stream_rng(15, 0);
        let err = (0..200)
            .find_map(|_| simple_slice_step(&t, &[0.0, 0.0], 1, &mut rng).err())
            .expect("a one-attempt cap must fail eventually");
        assert!(matches!(err, Error::Efficiency { level: Some(_), .. }));
    }
}
