//! Seeded intensity and mirroring augmentations.
//!
//! Every augmentation is a pure function of `(volume, spec)`. Only Gaussian
//! noise consumes randomness, drawn from [`Stream::AugmentNoise`] of the spec
//! seed in linearization order.

use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::grid::{Grid3, Mask, Volume};
use crate::preproc::{resample_to_grid, Interpolation};
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, PartialEq)]
pub enum AugmentKind {
    /// Adds i.i.d. N(0, sigma^2).
    GaussianNoise { sigma: f64 },
    /// Separable Gaussian, sigma in millimetres, truncated at 3 sigma.
    GaussianBlur { sigma_mm: f64 },
    /// `v -> v^gamma` on min-max normalized intensities, range restored.
    Gamma { gamma: f64 },
    /// Adds a constant.
    Brightness { delta: f64 },
    /// Scales deviations from the volume mean.
    Contrast { factor: f64 },
    /// Reverses the listed axes.
    Mirror { axes: Vec<usize> },
    /// Trilinear downsample to `scale` of the resolution and back.
    LowResolution { scale: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentSpec {
    pub kind: AugmentKind,
    pub seed: u64,
}

impl AugmentSpec {
    pub fn new(kind: AugmentKind, seed: u64) -> Self {
        Self { kind, seed }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: String| Err(Error::InvalidArgument(what));
        match &self.kind {
            AugmentKind::GaussianNoise { sigma } if !(sigma.is_finite() && *sigma >= 0.0) => {
                bad(format!("noise sigma {sigma}"))
            }
            AugmentKind::GaussianBlur { sigma_mm }
                if !(sigma_mm.is_finite() && *sigma_mm >= 0.0) =>
            {
                bad(format!("blur sigma {sigma_mm} mm"))
            }
            AugmentKind::Gamma { gamma } if !(gamma.is_finite() && *gamma > 0.0) => {
                bad(format!("gamma {gamma}"))
            }
            AugmentKind::Brightness { delta } if !delta.is_finite() => {
                bad(format!("brightness delta {delta}"))
            }
            AugmentKind::Contrast { factor } if !(factor.is_finite() && *factor > 0.0) => {
                bad(format!("contrast factor {factor}"))
            }
            AugmentKind::Mirror { axes } if axes.iter().any(|&a| a > 2) => {
                bad(format!("mirror axes {axes:?}"))
            }
            AugmentKind::LowResolution { scale } if !(*scale > 0.0 && *scale <= 1.0) => {
                bad(format!("low-resolution scale {scale}"))
            }
            _ => Ok(()),
        }
    }
}

fn rebuild(grid: Grid3, values: Vec<f32>) -> Result<Volume> {
    Volume::new(grid, values).map_err(|e| match e {
        Error::NonFinite { index, value } => Error::InvalidArgument(format!(
            "augmentation produced non-finite value {value} at voxel {index}"
        )),
        other => other,
    })
}

pub fn apply_augment(vol: &Volume, spec: &AugmentSpec) -> Result<Volume> {
    spec.validate()?;
    let grid = *vol.grid();
    match &spec.kind {
        AugmentKind::GaussianNoise { sigma } => {
            if *sigma == 0.0 {
                return Ok(vol.clone());
            }
            let normal = Normal::new(0.0, *sigma).expect("sigma validated");
            let mut rng = stream_rng(spec.seed, Stream::AugmentNoise);
            let values = vol
                .values()
                .iter()
                .map(|&v| (v as f64 + normal.sample(&mut rng)) as f32)
                .collect();
            rebuild(grid, values)
        }
        AugmentKind::GaussianBlur { sigma_mm } => Ok(gaussian_blur(vol, *sigma_mm)),
        AugmentKind::Gamma { gamma } => {
            let (lo, hi) = min_max(vol);
            let range = hi - lo;
            if range <= 0.0 || *gamma == 1.0 {
                return Ok(vol.clone());
            }
            let values = vol
                .values()
                .iter()
                .map(|&v| {
                    let unit = ((v as f64 - lo) / range).clamp(0.0, 1.0);
                    (unit.powf(*gamma) * range + lo) as f32
                })
                .collect();
            rebuild(grid, values)
        }
        AugmentKind::Brightness { delta } => {
            let values = vol
                .values()
                .iter()
                .map(|&v| (v as f64 + delta) as f32)
                .collect();
            rebuild(grid, values)
        }
        AugmentKind::Contrast { factor } => {
            let (mean, _) = vol.mean_std();
            let values = vol
                .values()
                .iter()
                .map(|&v| (mean + (v as f64 - mean) * factor) as f32)
                .collect();
            rebuild(grid, values)
        }
        AugmentKind::Mirror { axes } => {
            let values = mirror_values(&grid, vol.values(), axes);
            rebuild(grid, values)
        }
        AugmentKind::LowResolution { scale } => Ok(low_resolution(vol, *scale)),
    }
}

fn min_max(vol: &Volume) -> (f64, f64) {
    vol.values()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v as f64), hi.max(v as f64))
        })
}

fn mirror_values<T: Copy>(grid: &Grid3, values: &[T], axes: &[usize]) -> Vec<T> {
    let flip = [0, 1, 2].map(|a| axes.contains(&a));
    let [nx, ny, nz] = grid.dims();
    let mut out = Vec::with_capacity(values.len());
    for z in 0..nz {
        let sz = if flip[2] { nz - 1 - z } else { z };
        for y in 0..ny {
            let sy = if flip[1] { ny - 1 - y } else { y };
            for x in 0..nx {
                let sx = if flip[0] { nx - 1 - x } else { x };
                out.push(values[grid.linearize(sx, sy, sz)]);
            }
        }
    }
    out
}

/// Mirrors a label mask along the same axes as its image.
pub fn apply_mirror_mask(mask: &Mask, axes: &[usize]) -> Result<Mask> {
    if let Some(&a) = axes.iter().find(|&&a| a > 2) {
        return Err(Error::InvalidArgument(format!("mirror axis {a}")));
    }
    Mask::new(*mask.grid(), mirror_values(mask.grid(), mask.bits(), axes))
}

fn gaussian_kernel(sigma_vox: f64) -> Vec<f64> {
    let radius = (3.0 * sigma_vox).ceil() as i64;
    let weights: Vec<f64> = (-radius..=radius)
        .map(|k| (-(k * k) as f64 / (2.0 * sigma_vox * sigma_vox)).exp())
        .collect();
    let total: f64 = weights.iter().sum();
    weights.into_iter().map(|w| w / total).collect()
}

fn gaussian_blur(vol: &Volume, sigma_mm: f64) -> Volume {
    let grid = *vol.grid();
    let dims = grid.dims();
    let mut data: Vec<f64> = vol.values().iter().map(|&v| v as f64).collect();
    let mut scratch = vec![0.0f64; data.len()];
    let strides = [1, dims[0], dims[0] * dims[1]];
    for axis in 0..3 {
        let sigma_vox = sigma_mm / grid.spacing()[axis];
        if sigma_vox < 1e-6 || dims[axis] == 1 {
            continue;
        }
        let kernel = gaussian_kernel(sigma_vox);
        let radius = (kernel.len() / 2) as i64;
        let n = dims[axis] as i64;
        let stride = strides[axis];
        for (i, out) in scratch.iter_mut().enumerate() {
            let pos = ((i / stride) % dims[axis]) as i64;
            let base = i - pos as usize * stride;
            *out = kernel
                .iter()
                .enumerate()
                .map(|(k, w)| {
                    let src = (pos + k as i64 - radius).clamp(0, n - 1) as usize;
                    w * data[base + src * stride]
                })
                .sum();
        }
        std::mem::swap(&mut data, &mut scratch);
    }
    Volume::new(grid, data.into_iter().map(|v| v as f32).collect())
        .expect("convex combination of finite values")
}

/// Downsampled grid spanning the same first and last voxel centers.
fn coarse_grid(grid: &Grid3, scale: f64) -> Grid3 {
    let dims = grid.dims();
    let mut coarse = [1usize; 3];
    let mut spacing = grid.spacing();
    let mut origin = grid.origin();
    for a in 0..3 {
        if dims[a] == 1 {
            continue;
        }
        let n = ((dims[a] as f64 * scale).round() as usize).clamp(2, dims[a]);
        coarse[a] = n;
        spacing[a] = grid.spacing()[a] * (dims[a] - 1) as f64 / (n - 1) as f64;
        origin[a] = grid.origin()[a];
    }
    Grid3::new(coarse, spacing, origin).expect("derived from a valid grid")
}

fn low_resolution(vol: &Volume, scale: f64) -> Volume {
    let coarse = coarse_grid(vol.grid(), scale);
    let down = resample_to_grid(vol, &coarse, Interpolation::Trilinear);
    resample_to_grid(&down, vol.grid(), Interpolation::Trilinear)
}
