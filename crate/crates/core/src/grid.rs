//! Geometry-aware volume and mask types.
//!
//! All voxel arrays share one linearization: x varies fastest, then y, then z,
//! which is also the NIfTI on-disk order. Grids are axis-aligned; orientation
//! beyond origin and spacing is not interpreted.

use std::fmt;

use crate::error::{Error, Result};

/// Spacing and origin tolerance (mm) for geometry equality.
pub const GEOMETRY_TOLERANCE_MM: f64 = 1e-4;

/// Voxel lattice with physical spacing (mm) and world origin (mm) of voxel (0,0,0).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid3 {
    dims: [usize; 3],
    spacing: [f64; 3],
    origin: [f64; 3],
}

impl Grid3 {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3]) -> Result<Self> {
        for (axis, &d) in dims.iter().enumerate() {
            if d == 0 {
                return Err(Error::InvalidGrid(format!("dims[{axis}] is 0")));
            }
        }
        dims.iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::InvalidGrid(format!("dims {dims:?} overflow")))?;
        for (axis, &s) in spacing.iter().enumerate() {
            if !(s.is_finite() && s > 0.0) {
                return Err(Error::InvalidGrid(format!("spacing[{axis}] = {s}")));
            }
        }
        for (axis, &o) in origin.iter().enumerate() {
            if !o.is_finite() {
                return Err(Error::InvalidGrid(format!("origin[{axis}] = {o}")));
            }
        }
        Ok(Self {
            dims,
            spacing,
            origin,
        })
    }

    /// Unit-spaced grid at the world origin.
    pub fn unit(dims: [usize; 3]) -> Result<Self> {
        Self::new(dims, [1.0; 3], [0.0; 3])
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn origin(&self) -> [f64; 3] {
        self.origin
    }

    /// Total number of voxels.
    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn voxel_volume_mm3(&self) -> f64 {
        self.spacing[0] * self.spacing[1] * self.spacing[2]
    }

    pub fn voxel_volume_ml(&self) -> f64 {
        voxel_volume_ml(self)
    }

    #[inline]
    pub fn linearize(&self, x: usize, y: usize, z: usize) -> usize {
        debug_assert!(x < self.dims[0] && y < self.dims[1] && z < self.dims[2]);
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn delinearize(&self, index: usize) -> [usize; 3] {
        let x = index % self.dims[0];
        let rest = index / self.dims[0];
        [x, rest % self.dims[1], rest / self.dims[1]]
    }

    /// World position (mm) of a voxel center; accepts fractional indices.
    pub fn world(&self, index: [f64; 3]) -> [f64; 3] {
        std::array::from_fn(|a| self.origin[a] + index[a] * self.spacing[a])
    }

    /// Continuous voxel index of a world position.
    pub fn continuous_index(&self, world: [f64; 3]) -> [f64; 3] {
        std::array::from_fn(|a| (world[a] - self.origin[a]) / self.spacing[a])
    }

    /// Dims exact, spacing and origin within [`GEOMETRY_TOLERANCE_MM`].
    pub fn same_geometry(&self, other: &Grid3) -> bool {
        self.dims == other.dims
            && (0..3).all(|a| {
                (self.spacing[a] - other.spacing[a]).abs() <= GEOMETRY_TOLERANCE_MM
                    && (self.origin[a] - other.origin[a]).abs() <= GEOMETRY_TOLERANCE_MM
            })
    }

    pub fn ensure_same(&self, other: &Grid3) -> Result<()> {
        if self.same_geometry(other) {
            Ok(())
        } else {
            Err(Error::GeometryMismatch {
                left: Box::new(*self),
                right: Box::new(*other),
            })
        }
    }
}

impl fmt::Display for Grid3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [dx, dy, dz] = self.dims;
        let [sx, sy, sz] = self.spacing;
        let [ox, oy, oz] = self.origin;
        write!(
            f,
            "{dx}x{dy}x{dz} @ ({sx}, {sy}, {sz}) mm, origin ({ox}, {oy}, {oz})"
        )
    }
}

/// Physical volume of one voxel in millilitres.
pub fn voxel_volume_ml(grid: &Grid3) -> f64 {
    grid.voxel_volume_mm3() / 1000.0
}

/// Scalar volume (PET, CT, probability maps) stored as `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    grid: Grid3,
    values: Vec<f32>,
}

impl Volume {
    pub fn new(grid: Grid3, values: Vec<f32>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::LengthMismatch {
                grid,
                expected: grid.len(),
                actual: values.len(),
            });
        }
        if let Some((index, &v)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite {
                index,
                value: v as f64,
            });
        }
        Ok(Self { grid, values })
    }

    pub fn filled(grid: Grid3, value: f32) -> Result<Self> {
        Self::new(grid, vec![value; grid.len()])
    }

    /// Builds a volume by evaluating `f(x, y, z)` at every voxel.
    pub fn from_fn(grid: Grid3, mut f: impl FnMut(usize, usize, usize) -> f32) -> Result<Self> {
        let [nx, ny, nz] = grid.dims();
        let mut values = Vec::with_capacity(grid.len());
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    values.push(f(x, y, z));
                }
            }
        }
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &Grid3 {
        &self.grid
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.values[self.grid.linearize(x, y, z)]
    }

    /// Mean and population standard deviation, accumulated in f64.
    pub fn mean_std(&self) -> (f64, f64) {
        mean_std(self.values.iter().map(|&v| v as f64))
    }
}

pub(crate) fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let (n, sum) = values
        .clone()
        .fold((0usize, 0.0f64), |(n, s), v| (n + 1, s + v));
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = sum / n as f64;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    (mean, var.sqrt())
}

/// Binary mask sharing the [`Volume`] linearization.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    grid: Grid3,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(grid: Grid3, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != grid.len() {
            return Err(Error::LengthMismatch {
                grid,
                expected: grid.len(),
                actual: bits.len(),
            });
        }
        Ok(Self { grid, bits })
    }

    pub fn empty(grid: Grid3) -> Self {
        Self {
            grid,
            bits: vec![false; grid.len()],
        }
    }

    /// Mask with exactly the listed voxels set.
    pub fn from_voxels(grid: Grid3, voxels: &[[usize; 3]]) -> Result<Self> {
        let mut bits = vec![false; grid.len()];
        let dims = grid.dims();
        for &[x, y, z] in voxels {
            if x >= dims[0] || y >= dims[1] || z >= dims[2] {
                return Err(Error::InvalidArgument(format!(
                    "voxel ({x},{y},{z}) outside grid {grid}"
                )));
            }
            bits[grid.linearize(x, y, z)] = true;
        }
        Ok(Self { grid, bits })
    }

    pub fn from_fn(grid: Grid3, mut f: impl FnMut(usize, usize, usize) -> bool) -> Self {
        let [nx, ny, nz] = grid.dims();
        let mut bits = Vec::with_capacity(grid.len());
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    bits.push(f(x, y, z));
                }
            }
        }
        Self { grid, bits }
    }

    pub fn grid(&self) -> &Grid3 {
        &self.grid
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn into_bits(self) -> Vec<bool> {
        self.bits
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        self.bits[self.grid.linearize(x, y, z)]
    }

    pub fn foreground_count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Linear indices of foreground voxels in raster order.
    pub fn foreground_indices(&self) -> Vec<usize> {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
            .collect()
    }

    /// Foreground volume in millilitres.
    pub fn foreground_ml(&self) -> f64 {
        self.foreground_count() as f64 * self.grid.voxel_volume_ml()
    }
}

/// Number of voxels foreground in both masks.
pub fn overlap_count(a: &Mask, b: &Mask) -> Result<usize> {
    a.grid.ensure_same(&b.grid)?;
    Ok(a.bits.iter().zip(&b.bits).filter(|(&x, &y)| x && y).count())
}

/// Connected-component labels: 0 is background, components are `1..=count`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMap {
    grid: Grid3,
    labels: Vec<u32>,
    sizes: Vec<u64>,
}

impl LabelMap {
    /// `sizes[i]` is the voxel count of component `i + 1`.
    pub(crate) fn from_parts(grid: Grid3, labels: Vec<u32>, sizes: Vec<u64>) -> Self {
        debug_assert_eq!(labels.len(), grid.len());
        debug_assert!(sizes.iter().all(|&s| s >= 1));
        Self {
            grid,
            labels,
            sizes,
        }
    }

    pub fn grid(&self) -> &Grid3 {
        &self.grid
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn count(&self) -> usize {
        self.sizes.len()
    }

    /// Voxel counts indexed by `id - 1`.
    pub fn sizes(&self) -> &[u64] {
        &self.sizes
    }

    /// Voxel count of component `id` (1-based).
    pub fn size(&self, id: u32) -> Option<u64> {
        (id as usize)
            .checked_sub(1)
            .and_then(|i| self.sizes.get(i).copied())
    }

    /// Mask of voxels whose component id satisfies `keep`.
    pub fn select(&self, mut keep: impl FnMut(u32) -> bool) -> Mask {
        let bits = self.labels.iter().map(|&l| l != 0 && keep(l)).collect();
        Mask {
            grid: self.grid,
            bits,
        }
    }
}
