//! Deterministic synthetic PET/CT/ground-truth cases.
//!
//! Lesions are axis-aligned ellipsoids; a voxel belongs to a lesion iff its
//! center lies inside. Placement is rejection-sampled so lesions stay inside
//! the volume and never touch (not even diagonally), which keeps the
//! 26-connected component count equal to the lesion count.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{Grid3, Mask, Volume};
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSpec {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub n_lesions: usize,
    pub lesion_radius_range_mm: (f64, f64),
    pub pet_background_level: f64,
    pub pet_lesion_uptake: f64,
    pub noise_sigma: f64,
    /// Bright PET blobs that are not lesions (absent from the ground truth).
    pub n_distractors: usize,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            dims: [64, 64, 64],
            spacing: [2.0, 2.0, 2.0],
            n_lesions: 3,
            lesion_radius_range_mm: (3.0, 6.0),
            pet_background_level: 1.0,
            pet_lesion_uptake: 8.0,
            noise_sigma: 0.1,
            n_distractors: 0,
            seed: 0,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        Grid3::new(self.dims, self.spacing, [0.0; 3])?;
        let (lo, hi) = self.lesion_radius_range_mm;
        if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= hi) {
            return Err(Error::InvalidArgument(format!(
                "lesion radius range ({lo}, {hi}) mm must satisfy 0 < lo <= hi"
            )));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "noise sigma {}",
                self.noise_sigma
            )));
        }
        if !(self.pet_background_level.is_finite() && self.pet_lesion_uptake.is_finite()) {
            return Err(Error::InvalidArgument("PET levels must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LesionRecord {
    pub center_mm: [f64; 3],
    pub radius_mm: [f64; 3],
    pub voxels: usize,
    /// True for PET-only blobs that are not part of the ground truth.
    pub distractor: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub pet: Volume,
    pub ct: Volume,
    pub gt: Mask,
    pub lesions: Vec<LesionRecord>,
}

/// Voxel occupancy with 26-neighborhood contact checks.
struct Occupancy {
    grid: Grid3,
    taken: Vec<bool>,
}

impl Occupancy {
    fn new(grid: Grid3) -> Self {
        Self {
            grid,
            taken: vec![false; grid.len()],
        }
    }

    fn touches(&self, voxel: [usize; 3]) -> bool {
        let dims = self.grid.dims();
        for dz in -1i64..=1 {
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let n = [
                        voxel[0] as i64 + dx,
                        voxel[1] as i64 + dy,
                        voxel[2] as i64 + dz,
                    ];
                    if (0..3).any(|a| n[a] < 0 || n[a] >= dims[a] as i64) {
                        continue;
                    }
                    if self.taken[self
                        .grid
                        .linearize(n[0] as usize, n[1] as usize, n[2] as usize)]
                    {
                        return true;
                    }
                }
            }
        }
        false
    }

    fn fits(&self, voxels: &[[usize; 3]]) -> bool {
        voxels.iter().all(|&v| !self.touches(v))
    }

    fn claim(&mut self, voxels: &[[usize; 3]]) {
        for &[x, y, z] in voxels {
            let i = self.grid.linearize(x, y, z);
            self.taken[i] = true;
        }
    }
}

/// Voxels whose centers fall inside the ellipsoid (index-space center/radii).
fn ellipsoid_voxels(center: [f64; 3], radii: [f64; 3], dims: [usize; 3]) -> Vec<[usize; 3]> {
    let lo: [usize; 3] = std::array::from_fn(|a| (center[a] - radii[a]).ceil().max(0.0) as usize);
    let hi: [usize; 3] = std::array::from_fn(|a| {
        ((center[a] + radii[a]).floor() as i64).clamp(0, dims[a] as i64 - 1) as usize
    });
    let mut out = Vec::new();
    for z in lo[2]..=hi[2] {
        for y in lo[1]..=hi[1] {
            for x in lo[0]..=hi[0] {
                let p = [x, y, z];
                let r2: f64 = (0..3)
                    .map(|a| ((p[a] as f64 - center[a]) / radii[a]).powi(2))
                    .sum();
                if r2 <= 1.0 {
                    out.push(p);
                }
            }
        }
    }
    out
}

/// Whether a voxel set is one 26-connected piece.
fn is_connected(voxels: &[[usize; 3]]) -> bool {
    if voxels.len() <= 1 {
        return true;
    }
    let set: std::collections::HashSet<[usize; 3]> = voxels.iter().copied().collect();
    let mut seen = std::collections::HashSet::new();
    let mut stack = vec![voxels[0]];
    seen.insert(voxels[0]);
    while let Some(v) = stack.pop() {
        for dz in -1i64..=1 {
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let n = [v[0] as i64 + dx, v[1] as i64 + dy, v[2] as i64 + dz];
                    if n.iter().any(|&c| c < 0) {
                        continue;
                    }
                    let n = n.map(|c| c as usize);
                    if set.contains(&n) && seen.insert(n) {
                        stack.push(n);
                    }
                }
            }
        }
    }
    seen.len() == set.len()
}

pub fn generate_phantom(spec: &PhantomSpec) -> Result<Phantom> {
    spec.validate()?;
    let grid = Grid3::new(spec.dims, spec.spacing, [0.0; 3])?;
    let dims = grid.dims();
    let total = spec.n_lesions + spec.n_distractors;
    let max_attempts = 10 * total;
    let (r_lo, r_hi) = spec.lesion_radius_range_mm;

    let mut rng = stream_rng(spec.seed, Stream::PhantomPlacement);
    let mut occupancy = Occupancy::new(grid);
    let mut records = Vec::with_capacity(total);
    let mut painted: Vec<Vec<[usize; 3]>> = Vec::with_capacity(total);
    let mut attempts = 0usize;
    let mut too_large = 0usize;

    while records.len() < total {
        if attempts >= max_attempts {
            return Err(Error::Placement(format!(
                "placed {} of {} blobs in {} attempts on a {}x{}x{} grid with radii {}-{} mm \
                 ({} attempts drew an ellipsoid wider than the volume, the rest touched \
                 an existing blob)",
                records.len(),
                total,
                attempts,
                dims[0],
                dims[1],
                dims[2],
                r_lo,
                r_hi,
                too_large
            )));
        }
        attempts += 1;
        let radius_mm: [f64; 3] = std::array::from_fn(|_| {
            if r_hi > r_lo {
                rng.random_range(r_lo..=r_hi)
            } else {
                r_lo
            }
        });
        let radius_vox: [f64; 3] = std::array::from_fn(|a| radius_mm[a] / spec.spacing[a]);
        // Center range that keeps the whole ellipsoid inside the voxel-center hull.
        let bounds: [(f64, f64); 3] =
            std::array::from_fn(|a| (radius_vox[a], (dims[a] - 1) as f64 - radius_vox[a]));
        if bounds.iter().any(|(lo, hi)| lo > hi) {
            too_large += 1;
            continue;
        }
        let center: [f64; 3] = std::array::from_fn(|a| {
            let (lo, hi) = bounds[a];
            if hi > lo {
                rng.random_range(lo..=hi)
            } else {
                lo
            }
        });
        let voxels = ellipsoid_voxels(center, radius_vox, dims);
        let nearest = center.map(|c| c.round() as usize);
        if !voxels.contains(&nearest) || !is_connected(&voxels) || !occupancy.fits(&voxels) {
            continue;
        }
        occupancy.claim(&voxels);
        records.push(LesionRecord {
            center_mm: grid.world(center),
            radius_mm,
            voxels: voxels.len(),
            distractor: records.len() >= spec.n_lesions,
        });
        painted.push(voxels);
    }

    let mut gt_bits = vec![false; grid.len()];
    let mut pet = vec![spec.pet_background_level; grid.len()];
    for (record, voxels) in records.iter().zip(&painted) {
        for &[x, y, z] in voxels {
            let i = grid.linearize(x, y, z);
            pet[i] += spec.pet_lesion_uptake;
            if !record.distractor {
                gt_bits[i] = true;
            }
        }
    }
    if spec.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, spec.noise_sigma).expect("sigma validated");
        let mut noise_rng = stream_rng(spec.seed, Stream::PhantomNoise);
        for v in pet.iter_mut() {
            *v += normal.sample(&mut noise_rng);
        }
    }
    let pet = Volume::new(grid, pet.into_iter().map(|v| v as f32).collect())?;
    let ct = anatomy_ct(&grid)?;
    let gt = Mask::new(grid, gt_bits)?;

    Ok(Phantom {
        pet,
        ct,
        gt,
        lesions: records,
    })
}

/// Smooth, noise-free CT-like field: soft tissue near the center fading to
/// air-like values at the border.
fn anatomy_ct(grid: &Grid3) -> Result<Volume> {
    let dims = grid.dims();
    let center = grid.world(dims.map(|d| (d as f64 - 1.0) / 2.0));
    let extent: f64 = (0..3)
        .map(|a| dims[a] as f64 * grid.spacing()[a])
        .fold(0.0, f64::max);
    let width = 0.35 * extent;
    Volume::from_fn(*grid, |x, y, z| {
        let w = grid.world([x as f64, y as f64, z as f64]);
        let r2: f64 = (0..3).map(|a| (w[a] - center[a]).powi(2)).sum();
        let axial = (w[2] - center[2]) / extent;
        (-800.0 + 850.0 * (-r2 / (2.0 * width * width)).exp() + 60.0 * axial) as f32
    })
}

/// How to derive an imperfect prediction from a ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Corruption {
    /// Number of spurious blobs placed away from all foreground.
    pub spurious_blobs: usize,
    /// Inclusive voxel-count range of each spurious blob.
    pub blob_voxels: (usize, usize),
    /// Ground-truth components removed entirely, in label order.
    pub missed_lesions: usize,
    /// Probability of growing each lesion surface voxel by one face neighbor.
    pub dilation_prob: f64,
    pub seed: u64,
}

impl Default for Corruption {
    fn default() -> Self {
        Self {
            spurious_blobs: 3,
            blob_voxels: (1, 8),
            missed_lesions: 0,
            dilation_prob: 0.2,
            seed: 0,
        }
    }
}

/// Prediction derived from `gt`: drops whole lesions, grows lesion surfaces
/// at random, then adds small spurious blobs that touch nothing.
pub fn corrupt_prediction(gt: &Mask, corruption: &Corruption) -> Result<Mask> {
    let (bmin, bmax) = corruption.blob_voxels;
    if bmin == 0 || bmin > bmax {
        return Err(Error::InvalidArgument(format!(
            "blob voxel range ({bmin}, {bmax}) must satisfy 1 <= min <= max"
        )));
    }
    if !(0.0..=1.0).contains(&corruption.dilation_prob) {
        return Err(Error::InvalidArgument(format!(
            "dilation probability {}",
            corruption.dilation_prob
        )));
    }
    let grid = *gt.grid();
    let dims = grid.dims();
    let mut rng = stream_rng(corruption.seed, Stream::PhantomPlacement);

    let labels = crate::ccl::label_components(gt, crate::ccl::Connectivity::TwentySix);
    let dropped = corruption.missed_lesions.min(labels.count()) as u32;
    let mut bits: Vec<bool> = labels.labels().iter().map(|&l| l > dropped).collect();

    if corruption.dilation_prob > 0.0 {
        let snapshot = bits.clone();
        for (i, &on) in snapshot.iter().enumerate() {
            if !on {
                continue;
            }
            let v = grid.delinearize(i);
            for (axis, step) in [(0, -1i64), (0, 1), (1, -1), (1, 1), (2, -1), (2, 1)] {
                let n = v[axis] as i64 + step;
                if n < 0 || n >= dims[axis] as i64 {
                    continue;
                }
                let mut w = v;
                w[axis] = n as usize;
                let j = grid.linearize(w[0], w[1], w[2]);
                if !snapshot[j] && rng.random_bool(corruption.dilation_prob) {
                    bits[j] = true;
                }
            }
        }
    }

    let mut occupancy = Occupancy {
        grid,
        taken: bits.clone(),
    };
    let max_attempts = 50 * corruption.spurious_blobs.max(1);
    let mut placed = 0;
    let mut attempts = 0;
    while placed < corruption.spurious_blobs {
        if attempts >= max_attempts {
            return Err(Error::Placement(format!(
                "placed {placed} of {} spurious blobs in {attempts} attempts",
                corruption.spurious_blobs
            )));
        }
        attempts += 1;
        let size = rng.random_range(bmin..=bmax);
        let start: [usize; 3] = std::array::from_fn(|a| rng.random_range(0..dims[a]));
        let mut blob = vec![start];
        let mut stalled = 0;
        while blob.len() < size && stalled < 100 {
            let from = blob[rng.random_range(0..blob.len())];
            let axis = rng.random_range(0..3);
            let step: i64 = if rng.random_bool(0.5) { 1 } else { -1 };
            let n = from[axis] as i64 + step;
            let mut next = from;
            if n < 0 || n >= dims[axis] as i64 {
                stalled += 1;
                continue;
            }
            next[axis] = n as usize;
            if blob.contains(&next) {
                stalled += 1;
                continue;
            }
            blob.push(next);
        }
        if blob.len() != size || !occupancy.fits(&blob) {
            continue;
        }
        occupancy.claim(&blob);
        for &[x, y, z] in &blob {
            bits[grid.linearize(x, y, z)] = true;
        }
        placed += 1;
    }
    Mask::new(grid, bits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ccl::{label_components, Connectivity};

    fn spec(n: usize, seed: u64) -> PhantomSpec {
        PhantomSpec {
            dims: [32, 32, 32],
            n_lesions: n,
            seed,
            ..PhantomSpec::default()
        }
    }

    #[test]
    fn no_lesions() {
        let p = generate_phantom(&spec(0, 1)).unwrap();
        assert!(p.gt.is_empty());
        assert!(p.lesions.is_empty());
        let (mean, std) = p.pet.mean_std();
        assert!((mean - 1.0).abs() < 0.01 && (std - 0.1).abs() < 0.01);
    }

    #[test]
    fn deterministic_per_seed() {
        assert_eq!(
            generate_phantom(&spec(3, 5)).unwrap(),
            generate_phantom(&spec(3, 5)).unwrap()
        );
        assert_ne!(
            generate_phantom(&spec(3, 5)).unwrap().gt,
            generate_phantom(&spec(3, 6)).unwrap().gt
        );
    }

    #[test]
    fn lesion_records_consistent() {
        for seed in 0..10 {
            let p = generate_phantom(&spec(4, seed)).unwrap();
            let labels = label_components(&p.gt, Connectivity::TwentySix);
            assert_eq!(labels.count(), 4);
            let total: usize = p.lesions.iter().map(|l| l.voxels).sum();
            assert_eq!(total, p.gt.foreground_count());
            for l in &p.lesions {
                let idx =
                    p.gt.grid()
                        .continuous_index(l.center_mm)
                        .map(|c| c.round() as usize);
                assert!(p.gt.get(idx[0], idx[1], idx[2]));
            }
        }
    }

    #[test]
    fn distractors_stay_out_of_ground_truth() {
        let s = PhantomSpec {
            n_distractors: 2,
            ..spec(2, 3)
        };
        let p = generate_phantom(&s).unwrap();
        assert_eq!(p.lesions.iter().filter(|l| l.distractor).count(), 2);
        let gt_voxels: usize = p
            .lesions
            .iter()
            .filter(|l| !l.distractor)
            .map(|l| l.voxels)
            .sum();
        assert_eq!(gt_voxels, p.gt.foreground_count());
        assert_eq!(label_components(&p.gt, Connectivity::TwentySix).count(), 2);
    }

    #[test]
    fn placement_failure_named() {
        let s = PhantomSpec {
            dims: [6, 6, 6],
            lesion_radius_range_mm: (20.0, 30.0),
            ..spec(2, 0)
        };
        let err = generate_phantom(&s).unwrap_err().to_string();
        assert!(err.contains("wider than the volume"), "{err}");
    }

    #[test]
    fn invalid_spec() {
        let s = PhantomSpec {
            lesion_radius_range_mm: (5.0, 1.0),
            ..spec(1, 0)
        };
        assert!(generate_phantom(&s).is_err());
    }

    #[test]
    fn corruption_adds_isolated_small_blobs() {
        let p = generate_phantom(&spec(3, 11)).unwrap();
        let c = Corruption {
            spurious_blobs: 4,
            blob_voxels: (2, 8),
            dilation_prob: 0.0,
            ..Corruption::default()
        };
        let pred = corrupt_prediction(&p.gt, &c).unwrap();
        let labels = label_components(&pred, Connectivity::TwentySix);
        assert_eq!(labels.count(), 7);
        let small: Vec<u64> = labels.sizes().iter().copied().filter(|&s| s <= 8).collect();
        assert_eq!(small.len(), 4);
        assert!(small.iter().all(|&s| s >= 2));
        assert_eq!(pred, corrupt_prediction(&p.gt, &c).unwrap());
    }

    #[test]
    fn corruption_drops_lesions() {
        let p = generate_phantom(&spec(3, 2)).unwrap();
        let c = Corruption {
            spurious_blobs: 0,
            missed_lesions: 1,
            dilation_prob: 0.0,
            ..Corruption::default()
        };
        let pred = corrupt_prediction(&p.gt, &c).unwrap();
        assert_eq!(label_components(&pred, Connectivity::TwentySix).count(), 2);
    }
}
