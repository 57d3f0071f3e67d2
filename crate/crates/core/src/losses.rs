//! Reference evaluators for the binary training objective (soft Dice plus
//! cross-entropy) and the poly learning-rate schedule.
//!
//! Sums run in linearization order in f64, so results are bit-stable.

use crate::error::{Error, Result};
use crate::grid::{Grid3, Mask};

pub const DEFAULT_DICE_EPS: f64 = 1e-5;
pub const DEFAULT_CE_CLIP: f64 = 1e-7;
pub const DEFAULT_POLY_EXPONENT: f64 = 0.9;

const PROB_TOLERANCE: f64 = 1e-9;

/// Per-voxel foreground probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbField {
    grid: Grid3,
    probs: Vec<f64>,
}

impl ProbField {
    pub fn new(grid: Grid3, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != grid.len() {
            return Err(Error::LengthMismatch {
                grid,
                expected: grid.len(),
                actual: probs.len(),
            });
        }
        if let Some((i, p)) = probs
            .iter()
            .enumerate()
            .find(|(_, p)| !(-PROB_TOLERANCE..=1.0 + PROB_TOLERANCE).contains(*p))
        {
            return Err(Error::InvalidArgument(format!(
                "probability {p} at voxel {i} outside [0, 1]"
            )));
        }
        Ok(Self { grid, probs })
    }

    /// A binary mask as a hard 0/1 probability field.
    pub fn from_mask(mask: &Mask) -> Self {
        Self {
            grid: *mask.grid(),
            probs: mask.bits().iter().map(|&b| b as u8 as f64).collect(),
        }
    }

    pub fn grid(&self) -> &Grid3 {
        &self.grid
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
}

struct DiceSums {
    intersection: f64,
    pred: f64,
    truth: f64,
}

fn dice_sums(p: &ProbField, g: &Mask) -> Result<DiceSums> {
    p.grid.ensure_same(g.grid())?;
    let mut s = DiceSums {
        intersection: 0.0,
        pred: 0.0,
        truth: 0.0,
    };
    for (&pi, &gi) in p.probs.iter().zip(g.bits()) {
        s.pred += pi;
        if gi {
            s.intersection += pi;
            s.truth += 1.0;
        }
    }
    Ok(s)
}

fn check_eps(eps: f64) -> Result<()> {
    if eps.is_finite() && eps > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("eps {eps} must be > 0")))
    }
}

/// `1 - (2 Σ p·g + eps) / (Σ p + Σ g + eps)`.
pub fn soft_dice_loss(p: &ProbField, g: &Mask, eps: f64) -> Result<f64> {
    check_eps(eps)?;
    let s = dice_sums(p, g)?;
    Ok(1.0 - (2.0 * s.intersection + eps) / (s.pred + s.truth + eps))
}

/// Analytic gradient of [`soft_dice_loss`] with respect to each probability.
pub fn soft_dice_grad(p: &ProbField, g: &Mask, eps: f64) -> Result<Vec<f64>> {
    check_eps(eps)?;
    let s = dice_sums(p, g)?;
    let denom = s.pred + s.truth + eps;
    let numer = 2.0 * s.intersection + eps;
    let denom_sq = denom * denom;
    Ok(g.bits()
        .iter()
        .map(|&gi| {
            let gi = gi as u8 as f64;
            -(2.0 * gi * denom - numer) / denom_sq
        })
        .collect())
}

/// Mean binary cross-entropy with probabilities clamped to `[clip, 1 - clip]`.
pub fn cross_entropy_loss(p: &ProbField, g: &Mask, clip: f64) -> Result<f64> {
    if !(clip > 0.0 && clip < 0.5) {
        return Err(Error::InvalidArgument(format!(
            "clip {clip} outside (0, 0.5)"
        )));
    }
    p.grid.ensure_same(g.grid())?;
    let total: f64 = p
        .probs
        .iter()
        .zip(g.bits())
        .map(|(&pi, &gi)| {
            let q = pi.clamp(clip, 1.0 - clip);
            if gi {
                -q.ln()
            } else {
                -(1.0 - q).ln()
            }
        })
        .sum();
    Ok(total / p.probs.len() as f64)
}

/// Soft Dice plus cross-entropy at the default `eps` and `clip`.
pub fn combined_loss(p: &ProbField, g: &Mask) -> Result<f64> {
    Ok(soft_dice_loss(p, g, DEFAULT_DICE_EPS)? + cross_entropy_loss(p, g, DEFAULT_CE_CLIP)?)
}

/// `lr0 * (1 - epoch / max_epochs)^exponent`.
pub fn poly_lr(epoch: u64, max_epochs: u64, lr0: f64, exponent: f64) -> Result<f64> {
    if max_epochs == 0 || epoch > max_epochs {
        return Err(Error::InvalidArgument(format!(
            "epoch {epoch} outside 0..={max_epochs}"
        )));
    }
    if !(lr0.is_finite() && lr0 > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "initial learning rate {lr0}"
        )));
    }
    if !(exponent.is_finite() && exponent > 0.0) {
        return Err(Error::InvalidArgument(format!("poly exponent {exponent}")));
    }
    Ok(lr0 * (1.0 - epoch as f64 / max_epochs as f64).powf(exponent))
}
