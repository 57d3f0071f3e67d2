//! Connected-component labeling of binary masks.
//!
//! Two raster passes over the x-fastest linearization: the first assigns
//! provisional labels from already-visited neighbors and records equivalences
//! in a union-find forest (union by size, path compression); the second
//! resolves each provisional label to its root and renumbers roots in order of
//! first appearance. Labels are written into a single `u32` array that is
//! reused for both passes.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{Grid3, LabelMap, Mask};

/// Voxel neighborhood used to decide adjacency.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Connectivity {
    /// Shared face.
    Six,
    /// Shared face or edge.
    Eighteen,
    /// Shared face, edge or corner.
    #[default]
    TwentySix,
}

impl Connectivity {
    pub const ALL: [Connectivity; 3] = [
        Connectivity::Six,
        Connectivity::Eighteen,
        Connectivity::TwentySix,
    ];

    pub fn from_neighbors(n: u32) -> Result<Self> {
        match n {
            6 => Ok(Connectivity::Six),
            18 => Ok(Connectivity::Eighteen),
            26 => Ok(Connectivity::TwentySix),
            other => Err(Error::InvalidArgument(format!(
                "connectivity must be 6, 18 or 26, got {other}"
            ))),
        }
    }

    pub fn neighbors(self) -> u32 {
        match self {
            Connectivity::Six => 6,
            Connectivity::Eighteen => 18,
            Connectivity::TwentySix => 26,
        }
    }

    /// Maximum number of nonzero offset components for a neighbor.
    fn max_nonzero(self) -> usize {
        match self {
            Connectivity::Six => 1,
            Connectivity::Eighteen => 2,
            Connectivity::TwentySix => 3,
        }
    }

    /// All neighbor offsets `(dx, dy, dz)`.
    pub fn offsets(self) -> Vec<[i64; 3]> {
        let mut out = Vec::with_capacity(26);
        for dz in -1i64..=1 {
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let nonzero = [dx, dy, dz].iter().filter(|&&d| d != 0).count();
                    if nonzero > 0 && nonzero <= self.max_nonzero() {
                        out.push([dx, dy, dz]);
                    }
                }
            }
        }
        out
    }

    /// Neighbors that precede a voxel in raster order.
    fn backward_offsets(self) -> Vec<[i64; 3]> {
        self.offsets()
            .into_iter()
            .filter(|&[dx, dy, dz]| (dz, dy, dx) < (0, 0, 0))
            .collect()
    }
}

impl fmt::Display for Connectivity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.neighbors())
    }
}

impl FromStr for Connectivity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let n = s
            .trim()
            .parse::<u32>()
            .map_err(|_| Error::InvalidArgument(format!("connectivity {s:?} is not a number")))?;
        Self::from_neighbors(n)
    }
}

struct DisjointSet {
    parent: Vec<u32>,
    size: Vec<u32>,
}

impl DisjointSet {
    fn with_capacity(n: usize) -> Self {
        // Slot 0 is the background and never joins a set.
        let mut parent = Vec::with_capacity(n + 1);
        let mut size = Vec::with_capacity(n + 1);
        parent.push(0);
        size.push(0);
        Self { parent, size }
    }

    fn make_set(&mut self) -> u32 {
        let id = self.parent.len() as u32;
        self.parent.push(id);
        self.size.push(1);
        id
    }

    fn find(&mut self, mut x: u32) -> u32 {
        let mut root = x;
        while self.parent[root as usize] != root {
            root = self.parent[root as usize];
        }
        while self.parent[x as usize] != root {
            let next = self.parent[x as usize];
            self.parent[x as usize] = root;
            x = next;
        }
        root
    }

    fn union(&mut self, a: u32, b: u32) {
        let ra = self.find(a);
        let rb = self.find(b);
        if ra == rb {
            return;
        }
        let (big, small) = if self.size[ra as usize] >= self.size[rb as usize] {
            (ra, rb)
        } else {
            (rb, ra)
        };
        self.parent[small as usize] = big;
        self.size[big as usize] += self.size[small as usize];
    }
}

/// Labels the foreground of `mask`. Component ids are `1..=count`, numbered by
/// the raster position of each component's first voxel.
pub fn label_components(mask: &Mask, conn: Connectivity) -> LabelMap {
    let grid = *mask.grid();
    let [nx, ny, nz] = grid.dims();
    let bits = mask.bits();
    let mut labels = vec![0u32; grid.len()];
    let mut sets = DisjointSet::with_capacity(64);

    let offsets: Vec<([i64; 3], isize)> = conn
        .backward_offsets()
        .into_iter()
        .map(|[dx, dy, dz]| {
            let delta = dx + nx as i64 * (dy + ny as i64 * dz);
            ([dx, dy, dz], delta as isize)
        })
        .collect();

    let mut i = 0usize;
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                if bits[i] {
                    let mut current = 0u32;
                    for &([dx, dy, dz], delta) in &offsets {
                        // Backward neighbors only need lower-bound checks on
                        // negative offsets and upper-bound checks on x/y.
                        if (dx < 0 && x == 0)
                            || (dx > 0 && x + 1 == nx)
                            || (dy < 0 && y == 0)
                            || (dy > 0 && y + 1 == ny)
                            || (dz < 0 && z == 0)
                        {
                            continue;
                        }
                        let neighbor = labels[(i as isize + delta) as usize];
                        if neighbor == 0 || neighbor == current {
                            continue;
                        }
                        if current == 0 {
                            current = neighbor;
                        } else {
                            sets.union(current, neighbor);
                        }
                    }
                    if current == 0 {
                        current = sets.make_set();
                    }
                    labels[i] = current;
                }
                i += 1;
            }
        }
    }

    // Final ids by first raster appearance of each root.
    let mut final_id = vec![0u32; sets.parent.len()];
    let mut sizes: Vec<u64> = Vec::new();
    for label in labels.iter_mut() {
        if *label == 0 {
            continue;
        }
        let root = sets.find(*label) as usize;
        if final_id[root] == 0 {
            sizes.push(0);
            final_id[root] = sizes.len() as u32;
        }
        let id = final_id[root];
        sizes[id as usize - 1] += 1;
        *label = id;
    }

    LabelMap::from_parts(grid, labels, sizes)
}

/// Inclusive voxel-index bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BoundingBox {
    pub min: [usize; 3],
    pub max: [usize; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComponentStats {
    pub id: u32,
    pub voxels: u64,
    pub volume_ml: f64,
    /// Mean of voxel centers in world millimetres.
    pub centroid_mm: [f64; 3],
    pub bounding_box: BoundingBox,
}

/// Per-component size, volume, centroid and bounding box, in id order.
pub fn component_stats(labels: &LabelMap, grid: &Grid3) -> Result<Vec<ComponentStats>> {
    labels.grid().ensure_same(grid)?;
    let count = labels.count();
    let mut sums = vec![[0.0f64; 3]; count];
    let mut boxes = vec![
        BoundingBox {
            min: [usize::MAX; 3],
            max: [0; 3],
        };
        count
    ];
    for (i, &l) in labels.labels().iter().enumerate() {
        if l == 0 {
            continue;
        }
        let k = l as usize - 1;
        let v = grid.delinearize(i);
        for a in 0..3 {
            sums[k][a] += v[a] as f64;
            boxes[k].min[a] = boxes[k].min[a].min(v[a]);
            boxes[k].max[a] = boxes[k].max[a].max(v[a]);
        }
    }
    let unit_ml = grid.voxel_volume_ml();
    Ok(labels
        .sizes()
        .iter()
        .enumerate()
        .map(|(k, &voxels)| {
            let mean_index = sums[k].map(|s| s / voxels as f64);
            ComponentStats {
                id: k as u32 + 1,
                voxels,
                volume_ml: voxels as f64 * unit_ml,
                centroid_mm: grid.world(mean_index),
                bounding_box: boxes[k],
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

/// Histogram of component voxel counts over half-open bins `[lo, hi)`.
/// Components outside `[edges[0], edges[last])` are not counted.
pub fn size_histogram(stats: &[ComponentStats], bin_edges: &[f64]) -> Result<Vec<HistogramBin>> {
    if bin_edges.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 bin edges, got {}",
            bin_edges.len()
        )));
    }
    if let Some(w) = bin_edges
        .windows(2)
        .find(|w| w[0] >= w[1] || !w[0].is_finite() || !w[1].is_finite())
    {
        return Err(Error::InvalidArgument(format!(
            "bin edges must be finite and strictly increasing: {} then {}",
            w[0], w[1]
        )));
    }
    let mut bins: Vec<HistogramBin> = bin_edges
        .windows(2)
        .map(|w| HistogramBin {
            lo: w[0],
            hi: w[1],
            count: 0,
        })
        .collect();
    for s in stats {
        let size = s.voxels as f64;
        // First edge strictly greater than size; the bin is the one before it.
        let upper = bin_edges.partition_point(|&e| e <= size);
        if upper >= 1 && upper < bin_edges.len() {
            bins[upper - 1].count += 1;
        }
    }
    Ok(bins)
}

/// Median component voxel count, or `None` without components.
pub fn median_component_size(labels: &LabelMap) -> Option<f64> {
    let mut sizes = labels.sizes().to_vec();
    if sizes.is_empty() {
        return None;
    }
    sizes.sort_unstable();
    let n = sizes.len();
    Some(if n % 2 == 1 {
        sizes[n / 2] as f64
    } else {
        (sizes[n / 2 - 1] + sizes[n / 2]) as f64 / 2.0
    })
}
