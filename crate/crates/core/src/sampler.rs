//! Patch extraction with foreground oversampling.
//!
//! A batch of `B` patches forces `ceil(fraction * B)` of them to be centered
//! on a foreground voxel drawn uniformly from the label; the rest take
//! uniformly drawn corners. With the default `B = 2`, `fraction = 0.5` one
//! patch per batch is guaranteed to contain foreground.

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{Grid3, Mask, Volume};
use crate::rng::{stream_rng, Stream};

pub const DEFAULT_PATCH_SIZE: [usize; 3] = [128, 128, 128];
pub const DEFAULT_BATCH_SIZE: usize = 2;
pub const DEFAULT_OVERSAMPLE_FRACTION: f64 = 0.5;

/// Patch sizes beyond this multiple of the volume extent are rejected.
const MAX_PATCH_TO_VOLUME: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    /// One volume per image channel, on the patch grid.
    pub images: Vec<Volume>,
    pub label: Mask,
    /// Source voxel of the patch's (0,0,0); may be negative.
    pub corner: [i64; 3],
    pub contains_foreground: bool,
    /// Whether the corner came from a forced foreground draw.
    pub forced: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchBatch {
    pub patches: Vec<Patch>,
    pub patch_size: [usize; 3],
    pub seed: u64,
    /// Set when forced draws fell back to uniform because the label was empty.
    pub empty_label_fallback: bool,
}

/// Manifest entry describing one patch.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PatchRecord {
    pub index: usize,
    pub corner: [i64; 3],
    pub contains_foreground: bool,
    pub forced: bool,
}

impl PatchBatch {
    pub fn records(&self) -> Vec<PatchRecord> {
        self.patches
            .iter()
            .enumerate()
            .map(|(index, p)| PatchRecord {
                index,
                corner: p.corner,
                contains_foreground: p.contains_foreground,
                forced: p.forced,
            })
            .collect()
    }

    pub fn foreground_patches(&self) -> usize {
        self.patches
            .iter()
            .filter(|p| p.contains_foreground)
            .count()
    }
}

fn check_patch_size(patch_size: [usize; 3], grid: &Grid3) -> Result<()> {
    for a in 0..3 {
        let limit = MAX_PATCH_TO_VOLUME * grid.dims()[a];
        if patch_size[a] == 0 || patch_size[a] > limit {
            return Err(Error::InvalidArgument(format!(
                "patch size {:?} on axis {a} must be in 1..={limit} for volume {}",
                patch_size, grid
            )));
        }
    }
    Ok(())
}

/// Copies the window at `corner`; parts outside the volume are zero (image)
/// or background (label).
pub fn extract_patch(
    images: &[&Volume],
    label: &Mask,
    corner: [i64; 3],
    patch_size: [usize; 3],
) -> Result<Patch> {
    let grid = *label.grid();
    for img in images {
        img.grid().ensure_same(&grid)?;
    }
    check_patch_size(patch_size, &grid)?;
    let dims = grid.dims();
    let patch_origin = grid.world(corner.map(|c| c as f64));
    let patch_grid = Grid3::new(patch_size, grid.spacing(), patch_origin)?;

    let source = |x: usize, y: usize, z: usize| -> Option<usize> {
        let p = [x, y, z];
        let mut s = [0usize; 3];
        for a in 0..3 {
            let v = corner[a] + p[a] as i64;
            if v < 0 || v >= dims[a] as i64 {
                return None;
            }
            s[a] = v as usize;
        }
        Some(grid.linearize(s[0], s[1], s[2]))
    };

    let label_patch = Mask::from_fn(patch_grid, |x, y, z| {
        source(x, y, z).is_some_and(|i| label.bits()[i])
    });
    let image_patches = images
        .iter()
        .map(|img| {
            Volume::from_fn(patch_grid, |x, y, z| {
                source(x, y, z).map_or(0.0, |i| img.values()[i])
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let contains_foreground = !label_patch.is_empty();
    Ok(Patch {
        images: image_patches,
        label: label_patch,
        corner,
        contains_foreground,
        forced: false,
    })
}

/// Number of foreground-forced patches: `ceil(fraction * batch_size)`.
pub fn forced_count(batch_size: usize, fraction: f64) -> usize {
    let raw = fraction * batch_size as f64;
    // 0.5 * 2 must stay 1 even if it rounds to 1.0000000000000002.
    let nearest = raw.round();
    let n = if (raw - nearest).abs() < 1e-9 {
        nearest
    } else {
        raw.ceil()
    };
    (n as usize).min(batch_size)
}

pub fn sample_batch(
    images: &[&Volume],
    label: &Mask,
    patch_size: [usize; 3],
    batch_size: usize,
    oversample_fraction: f64,
    seed: u64,
) -> Result<PatchBatch> {
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be >= 1".into()));
    }
    if !(0.0..=1.0).contains(&oversample_fraction) {
        return Err(Error::InvalidArgument(format!(
            "oversample fraction {oversample_fraction} outside [0, 1]"
        )));
    }
    let grid = *label.grid();
    check_patch_size(patch_size, &grid)?;
    let dims = grid.dims();

    let n_forced = forced_count(batch_size, oversample_fraction);
    let foreground = if n_forced > 0 {
        label.foreground_indices()
    } else {
        Vec::new()
    };
    let fallback = n_forced > 0 && foreground.is_empty();
    if fallback {
        log::warn!("label has no foreground; {n_forced} forced patch(es) drawn uniformly instead");
    }

    let mut rng = stream_rng(seed, Stream::PatchSampling);
    let mut patches = Vec::with_capacity(batch_size);
    for k in 0..batch_size {
        let forced = k < n_forced && !foreground.is_empty();
        let corner: [i64; 3] = if forced {
            let center = grid.delinearize(foreground[rng.random_range(0..foreground.len())]);
            std::array::from_fn(|a| center[a] as i64 - (patch_size[a] / 2) as i64)
        } else {
            std::array::from_fn(|a| {
                let slack = dims[a] as i64 - patch_size[a] as i64;
                let (lo, hi) = (slack.min(0), slack.max(0));
                rng.random_range(lo..=hi)
            })
        };
        let mut patch = extract_patch(images, label, corner, patch_size)?;
        patch.forced = forced;
        patches.push(patch);
    }
    Ok(PatchBatch {
        patches,
        patch_size,
        seed,
        empty_label_fallback: fallback,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(dims: [usize; 3]) -> (Volume, Mask) {
        let g = Grid3::unit(dims).unwrap();
        let v = Volume::from_fn(g, |x, y, z| (x + 10 * y + 100 * z) as f32 + 1.0).unwrap();
        (v, Mask::empty(g))
    }

    #[test]
    fn forced_counts() {
        assert_eq!(forced_count(2, 0.5), 1);
        assert_eq!(forced_count(2, 1.0 / 3.0), 1);
        assert_eq!(forced_count(2, 0.1), 1);
        assert_eq!(forced_count(2, 0.0), 0);
        assert_eq!(forced_count(2, 1.0), 2);
        assert_eq!(forced_count(10, 0.3), 3);
        assert_eq!(forced_count(3, 0.5), 2);
    }

    #[test]
    fn whole_volume_window() {
        let (v, m) = ramp([4, 3, 2]);
        let p = extract_patch(&[&v], &m, [0, 0, 0], [4, 3, 2]).unwrap();
        assert_eq!(p.images[0].values(), v.values());
        assert!(!p.contains_foreground);
    }

    #[test]
    fn window_outside_is_padding() {
        let g = Grid3::unit([4, 4, 4]).unwrap();
        let v = Volume::filled(g, 3.0).unwrap();
        let m = Mask::from_fn(g, |_, _, _| true);
        let p = extract_patch(&[&v], &m, [10, 0, 0], [2, 2, 2]).unwrap();
        assert!(p.images[0].values().iter().all(|&x| x == 0.0));
        assert!(!p.contains_foreground);
    }

    #[test]
    fn negative_corner_shifts() {
        let (v, m) = ramp([4, 3, 2]);
        let p = extract_patch(&[&v], &m, [-1, 0, 0], [4, 3, 2]).unwrap();
        for z in 0..2 {
            for y in 0..3 {
                assert_eq!(p.images[0].get(0, y, z), 0.0);
                for x in 1..4 {
                    assert_eq!(p.images[0].get(x, y, z), v.get(x - 1, y, z));
                }
            }
        }
        assert_eq!(p.images[0].grid().origin(), [-1.0, 0.0, 0.0]);
    }

    #[test]
    fn oversized_patch_rejected() {
        let (v, m) = ramp([4, 3, 2]);
        assert!(extract_patch(&[&v], &m, [0, 0, 0], [17, 1, 1]).is_err());
        assert!(extract_patch(&[&v], &m, [0, 0, 0], [0, 1, 1]).is_err());
        assert!(extract_patch(&[&v], &m, [0, 0, 0], [16, 12, 8]).is_ok());
    }

    #[test]
    fn forced_patch_centered_on_single_voxel() {
        let g = Grid3::unit([24, 24, 24]).unwrap();
        let v = Volume::filled(g, 1.0).unwrap();
        let m = Mask::from_voxels(g, &[[10, 10, 10]]).unwrap();
        for seed in 0..20 {
            let b = sample_batch(&[&v], &m, [8, 8, 8], 2, 0.5, seed).unwrap();
            assert_eq!(b.patches[0].corner, [6, 6, 6]);
            assert!(b.patches[0].forced && b.patches[0].contains_foreground);
            assert!(!b.patches[1].forced);
        }
    }

    #[test]
    fn full_foreground_all_patches() {
        let g = Grid3::unit([10, 10, 10]).unwrap();
        let v = Volume::filled(g, 1.0).unwrap();
        let m = Mask::from_fn(g, |_, _, _| true);
        let b = sample_batch(&[&v], &m, [4, 4, 4], 4, 1.0, 3).unwrap();
        assert_eq!(b.foreground_patches(), 4);
    }

    #[test]
    fn empty_label_falls_back() {
        let (v, m) = ramp([12, 12, 12]);
        let b = sample_batch(&[&v], &m, [4, 4, 4], 2, 0.5, 9).unwrap();
        assert!(b.empty_label_fallback);
        assert_eq!(b.patches.len(), 2);
        assert!(b.patches.iter().all(|p| !p.forced));
        assert!(sample_batch(&[&v], &m, [4, 4, 4], 0, 0.5, 9).is_err());
    }

    #[test]
    fn uniform_corners_stay_valid() {
        let (v, m) = ramp([12, 6, 9]);
        for seed in 0..50 {
            let b = sample_batch(&[&v], &m, [4, 8, 9], 3, 0.0, seed).unwrap();
            for p in &b.patches {
                assert!((0..=8).contains(&p.corner[0]));
                assert!((-2..=0).contains(&p.corner[1]));
                assert_eq!(p.corner[2], 0);
            }
        }
    }

    #[test]
    fn seeded_batches_repeat() {
        let g = Grid3::unit([16, 16, 16]).unwrap();
        let v = Volume::from_fn(g, |x, _, _| x as f32).unwrap();
        let m = Mask::from_voxels(g, &[[3, 4, 5], [12, 12, 1]]).unwrap();
        let a = sample_batch(&[&v], &m, [6, 6, 6], 2, 0.5, 77).unwrap();
        let b = sample_batch(&[&v], &m, [6, 6, 6], 2, 0.5, 77).unwrap();
        assert_eq!(a, b);
    }
}
