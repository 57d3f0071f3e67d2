//! PET/CT pre-processing: CT resampled onto the PET grid, PET Z-scored per
//! volume, CT clipped to dataset percentiles and Z-scored with dataset
//! statistics.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{mean_std, Grid3, Mask, Volume};
use crate::nifti;

/// Default CT clipping percentiles.
pub const DEFAULT_CT_PERCENTILES: (f64, f64) = (0.5, 99.5);

/// Standard deviations below this are treated as zero.
pub const MIN_STD: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Interpolation {
    #[default]
    Trilinear,
    Nearest,
}

/// Per-axis sampling plan: lower index, upper index and weight of the upper.
struct AxisTaps {
    lo: Vec<usize>,
    hi: Vec<usize>,
    frac: Vec<f64>,
}

fn axis_taps(src: &Grid3, target: &Grid3, axis: usize, mode: Interpolation) -> AxisTaps {
    let n_out = target.dims()[axis];
    let n_src = src.dims()[axis];
    let max = (n_src - 1) as f64;
    let mut taps = AxisTaps {
        lo: Vec::with_capacity(n_out),
        hi: Vec::with_capacity(n_out),
        frac: Vec::with_capacity(n_out),
    };
    for i in 0..n_out {
        let world = target.origin()[axis] + i as f64 * target.spacing()[axis];
        let mut pos = (world - src.origin()[axis]) / src.spacing()[axis];
        // Snap float round-off so coincident lattices sample exact voxels.
        let nearest = pos.round();
        if (pos - nearest).abs() < 1e-9 {
            pos = nearest;
        }
        let pos = pos.clamp(0.0, max);
        match mode {
            Interpolation::Nearest => {
                let k = pos.round() as usize;
                taps.lo.push(k);
                taps.hi.push(k);
                taps.frac.push(0.0);
            }
            Interpolation::Trilinear => {
                let lo = pos.floor() as usize;
                let hi = (lo + 1).min(n_src - 1);
                taps.lo.push(lo);
                taps.hi.push(hi);
                taps.frac.push(pos - lo as f64);
            }
        }
    }
    taps
}

/// Samples `src` at the world-space center of every `target` voxel.
/// Positions outside the source clamp to its edge voxels.
pub fn resample_to_grid(src: &Volume, target: &Grid3, mode: Interpolation) -> Volume {
    let s = src.grid();
    let [tx, ty, tz] = [0, 1, 2].map(|a| axis_taps(s, target, a, mode));
    let [sx, sy, _] = s.dims();
    let v = src.values();
    let at = |x: usize, y: usize, z: usize| v[x + sx * (y + sy * z)] as f64;
    let lerp = |a: f64, b: f64, t: f64| if t == 0.0 { a } else { a + (b - a) * t };

    let [nx, ny, nz] = target.dims();
    let mut out = Vec::with_capacity(target.len());
    for k in 0..nz {
        let (z0, z1, fz) = (tz.lo[k], tz.hi[k], tz.frac[k]);
        for j in 0..ny {
            let (y0, y1, fy) = (ty.lo[j], ty.hi[j], ty.frac[j]);
            for i in 0..nx {
                let (x0, x1, fx) = (tx.lo[i], tx.hi[i], tx.frac[i]);
                let c00 = lerp(at(x0, y0, z0), at(x1, y0, z0), fx);
                let c10 = lerp(at(x0, y1, z0), at(x1, y1, z0), fx);
                let c01 = lerp(at(x0, y0, z1), at(x1, y0, z1), fx);
                let c11 = lerp(at(x0, y1, z1), at(x1, y1, z1), fx);
                let c0 = lerp(c00, c10, fy);
                let c1 = lerp(c01, c11, fy);
                out.push(lerp(c0, c1, fz) as f32);
            }
        }
    }
    Volume::new(*target, out).expect("interpolated values are finite")
}

/// Nearest-neighbor resampling of a mask.
pub fn resample_mask(src: &Mask, target: &Grid3) -> Mask {
    let s = src.grid();
    let [tx, ty, tz] = [0, 1, 2].map(|a| axis_taps(s, target, a, Interpolation::Nearest));
    Mask::from_fn(*target, |i, j, k| src.get(tx.lo[i], ty.lo[j], tz.lo[k]))
}

/// Linear-interpolation percentile of an ascending-sorted slice.
pub fn percentile_sorted(sorted: &[f64], p: f64) -> Result<f64> {
    if sorted.is_empty() {
        return Err(Error::EmptyInput("percentile of no values"));
    }
    if !(0.0..=100.0).contains(&p) {
        return Err(Error::InvalidArgument(format!(
            "percentile {p} outside [0, 100]"
        )));
    }
    let rank = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let frac = rank - lo as f64;
    if frac == 0.0 || lo + 1 >= sorted.len() {
        return Ok(sorted[lo]);
    }
    Ok(sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]))
}

/// Linear-interpolation percentile (`p` in `[0, 100]`).
pub fn percentile(values: &[f64], p: f64) -> Result<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    percentile_sorted(&sorted, p)
}

/// Dataset-wide clipping bounds and post-clip moments for one modality.
///
/// Field order is the JSON key order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetIntensityStats {
    pub modality: String,
    pub percentile_lo_pct: f64,
    pub percentile_hi_pct: f64,
    pub clip_lo: f64,
    pub clip_hi: f64,
    pub mean: f64,
    pub std: f64,
    pub n_voxels_sampled: u64,
}

impl DatasetIntensityStats {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.clip_lo, self.clip_hi, self.mean, self.std]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.clip_lo > self.clip_hi || self.std < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "inconsistent intensity stats: clip [{}, {}], std {}",
                self.clip_lo, self.clip_hi, self.std
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("stats serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let stats: Self = serde_json::from_str(text)
            .map_err(|e| Error::InvalidArgument(format!("intensity stats JSON: {e}")))?;
        stats.validate()?;
        Ok(stats)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json() + "\n").map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }
}

/// Statistics over a pooled sample of in-memory volumes; every `stride`-th
/// voxel of each volume (in linearization order) is sampled.
pub fn stats_from_volumes<'a>(
    modality: &str,
    volumes: impl IntoIterator<Item = &'a Volume>,
    lo_pct: f64,
    hi_pct: f64,
    stride: usize,
) -> Result<DatasetIntensityStats> {
    if stride == 0 {
        return Err(Error::InvalidArgument(
            "sampling stride must be >= 1".into(),
        ));
    }
    if !(0.0..=100.0).contains(&lo_pct) || !(0.0..=100.0).contains(&hi_pct) || lo_pct > hi_pct {
        return Err(Error::InvalidArgument(format!(
            "percentiles ({lo_pct}, {hi_pct}) must satisfy 0 <= lo <= hi <= 100"
        )));
    }
    let mut pooled: Vec<f64> = Vec::new();
    for v in volumes {
        pooled.extend(v.values().iter().step_by(stride).map(|&x| x as f64));
    }
    if pooled.is_empty() {
        return Err(Error::EmptyInput("no volumes for dataset statistics"));
    }
    pooled.sort_by(f64::total_cmp);
    let clip_lo = percentile_sorted(&pooled, lo_pct)?;
    let clip_hi = percentile_sorted(&pooled, hi_pct)?;
    let (mean, std) = mean_std(pooled.iter().map(|&v| v.clamp(clip_lo, clip_hi)));
    Ok(DatasetIntensityStats {
        modality: modality.to_string(),
        percentile_lo_pct: lo_pct,
        percentile_hi_pct: hi_pct,
        clip_lo,
        clip_hi,
        mean,
        std,
        n_voxels_sampled: pooled.len() as u64,
    })
}

/// Reads every CT volume (concurrently) and pools them in list order.
/// Fails on the first unreadable file, naming it.
pub fn compute_dataset_stats(
    ct_paths: &[PathBuf],
    lo_pct: f64,
    hi_pct: f64,
    stride: usize,
) -> Result<DatasetIntensityStats> {
    if ct_paths.is_empty() {
        return Err(Error::EmptyInput("no CT volumes listed"));
    }
    let volumes = ct_paths
        .par_iter()
        .map(nifti::read_volume)
        .collect::<Result<Vec<_>>>()?;
    stats_from_volumes("CT", &volumes, lo_pct, hi_pct, stride)
}

/// Clamps every value to `[lo, hi]`.
pub fn clip(vol: &Volume, lo: f64, hi: f64) -> Volume {
    let values = vol
        .values()
        .iter()
        .map(|&v| (v as f64).clamp(lo, hi) as f32)
        .collect();
    Volume::new(*vol.grid(), values).expect("clipped values are finite")
}

/// `(v - mean) / std`; a degenerate `std` (< 1e-8) yields zeros and a warning.
pub fn zscore_normalize(vol: &Volume, mean: f64, std: f64) -> Volume {
    let values = if std < MIN_STD {
        log::warn!("standard deviation {std} below {MIN_STD}; volume normalized to zeros");
        vec![0.0; vol.values().len()]
    } else {
        vol.values()
            .iter()
            .map(|&v| ((v as f64 - mean) / std) as f32)
            .collect()
    };
    Volume::new(*vol.grid(), values).expect("normalized values are finite")
}

/// Z-scores a volume with its own mean and population standard deviation.
pub fn zscore_self(vol: &Volume) -> Volume {
    let (mean, std) = vol.mean_std();
    zscore_normalize(vol, mean, std)
}

/// Source of the PET normalization statistics.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum PetNormalization {
    /// Each PET volume uses its own mean and standard deviation.
    #[default]
    PerVolume,
    /// Fixed statistics shared across the dataset.
    Global { mean: f64, std: f64 },
}

/// Two co-registered channels on the PET grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessedCase {
    pub pet: Volume,
    pub ct: Volume,
}

pub fn preprocess_case(
    pet: &Volume,
    ct: &Volume,
    ct_stats: &DatasetIntensityStats,
    pet_norm: PetNormalization,
) -> Result<PreprocessedCase> {
    ct_stats.validate()?;
    let ct_on_pet = resample_to_grid(ct, pet.grid(), Interpolation::Trilinear);
    let ct_clipped = clip(&ct_on_pet, ct_stats.clip_lo, ct_stats.clip_hi);
    let ct_norm = zscore_normalize(&ct_clipped, ct_stats.mean, ct_stats.std);
    let pet_norm = match pet_norm {
        PetNormalization::PerVolume => zscore_self(pet),
        PetNormalization::Global { mean, std } => zscore_normalize(pet, mean, std),
    };
    Ok(PreprocessedCase {
        pet: pet_norm,
        ct: ct_norm,
    })
}
