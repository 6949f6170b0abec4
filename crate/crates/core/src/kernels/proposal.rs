use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::sample_direction;
use crate::error::{Error, Result};

/// Rotationally invariant proposal density for the random walk Metropolis kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProposalSpec {
    /// Uniform on the ball of radius `delta`.
    BallWalk { delta: f64 },
    /// Isotropic normal with standard deviation `scale` per coordinate.
    Gaussian {
        #[serde(default = "unit_scale")]
        scale: f64,
    },
}

fn unit_scale() -> f64 {
    1.0
}

/// Volume of the unit ball in `dim` dimensions.
pub fn unit_ball_volume(dim: usize) -> f64 {
    // kappa_d = 2 pi / d * kappa_{d-2}
    let (mut even, mut odd) = (1.0, 2.0);
    for d in 2..=dim {
        let next = 2.0 * std::f64::consts::PI / d as f64 * if d % 2 == 0 { even } else { odd };
        if d % 2 == 0 {
            even = next;
        } else {
            odd = next;
        }
    }
    if dim.is_multiple_of(2) {
        even
    } else {
        odd
    }
}

impl ProposalSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ProposalSpec::BallWalk { delta } if !(delta > 0.0 && delta.is_finite()) => {
                Err(Error::arg(format!("ball walk radius must be positive, got {delta}")))
            }
            ProposalSpec::Gaussian { scale } if !(scale > 0.0 && scale.is_finite()) => {
                Err(Error::arg(format!("gaussian proposal scale must be positive, got {scale}")))
            }
            _ => Ok(()),
        }
    }

    /// Proposal density `q(z)`.
    pub fn density(&self, z: &[f64]) -> f64 {
        let d = z.len();
        let r2: f64 = z.iter().map(|v| v * v).sum();
        match *self {
            ProposalSpec::BallWalk { delta } => {
                if r2.sqrt() <= delta {
                    1.0 / (delta.powi(d as i32) * unit_ball_volume(d))
                } else {
                    0.0
                }
            }
            ProposalSpec::Gaussian { scale } => {
                let s2 = scale * scale;
                (-0.5 * r2 / s2).exp() / (2.0 * std::f64::consts::PI * s2).powf(d as f64 / 2.0)
            }
        }
    }

    /// Whether `z` lies in the support of `q`.
    pub fn supports(&self, z: &[f64]) -> bool {
        match *self {
            ProposalSpec::BallWalk { delta } => z.iter().map(|v| v * v).sum::<f64>().sqrt() <= delta * (1.0 + 1e-12),
            ProposalSpec::Gaussian { .. } => true,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, dim: usize, rng: &mut R) -> Vec<f64> {
        match *self {
            ProposalSpec::BallWalk { delta } => {
                let theta = sample_direction(dim, rng);
                let r = delta * rng.random::<f64>().powf(1.0 / dim as f64);
                theta.into_iter().map(|v| r * v).collect()
            }
            ProposalSpec::Gaussian { scale } => (0..dim).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect(),
        }
    }
}
