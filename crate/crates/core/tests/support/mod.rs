//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use std::collections::VecDeque;

use lesionseg::{Grid3, Mask};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Neighbor offsets by counting nonzero components, written out longhand.
pub fn oracle_offsets(neighbors: u32) -> Vec<[i64; 3]> {
    let mut out = Vec::new();
    for dz in -1..=1i64 {
        for dy in -1..=1i64 {
            for dx in -1..=1i64 {
                let nonzero = (dx != 0) as u32 + (dy != 0) as u32 + (dz != 0) as u32;
                let keep = match neighbors {
                    6 => nonzero == 1,
                    18 => nonzero == 1 || nonzero == 2,
                    26 => nonzero >= 1,
                    _ => panic!("bad connectivity {neighbors}"),
                };
                if keep {
                    out.push([dx, dy, dz]);
                }
            }
        }
    }
    out
}

/// Breadth-first flood fill started from each unlabeled foreground voxel in
/// raster order, so labels are numbered by first raster appearance.
pub fn flood_fill_labels(mask: &Mask, neighbors: u32) -> (Vec<u32>, usize) {
    let [nx, ny, nz] = mask.grid().dims();
    let idx = |x: usize, y: usize, z: usize| x + nx * (y + ny * z);
    let offsets = oracle_offsets(neighbors);
    let mut labels = vec![0u32; nx * ny * nz];
    let mut next = 0u32;
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                if !mask.get(x, y, z) || labels[idx(x, y, z)] != 0 {
                    continue;
                }
                next += 1;
                labels[idx(x, y, z)] = next;
                let mut queue = VecDeque::from([(x, y, z)]);
                while let Some((cx, cy, cz)) = queue.pop_front() {
                    for o in &offsets {
                        let (px, py, pz) = (cx as i64 + o[0], cy as i64 + o[1], cz as i64 + o[2]);
                        if px < 0
                            || py < 0
                            || pz < 0
                            || px >= nx as i64
                            || py >= ny as i64
                            || pz >= nz as i64
                        {
                            continue;
                        }
                        let (px, py, pz) = (px as usize, py as usize, pz as usize);
                        if mask.get(px, py, pz) && labels[idx(px, py, pz)] == 0 {
                            labels[idx(px, py, pz)] = next;
                            queue.push_back((px, py, pz));
                        }
                    }
                }
            }
        }
    }
    (labels, next as usize)
}

pub fn naive_dice(pred: &Mask, gt: &Mask) -> Option<f64> {
    let (mut inter, mut p, mut g) = (0u64, 0u64, 0u64);
    for i in 0..gt.bits().len() {
        let (a, b) = (pred.bits()[i], gt.bits()[i]);
        p += a as u64;
        g += b as u64;
        inter += (a && b) as u64;
    }
    if g == 0 {
        None
    } else {
        Some(2.0 * inter as f64 / (p + g) as f64)
    }
}

/// Voxels of `a`'s components that share no voxel with `b`.
pub fn naive_unmatched_voxels(a: &Mask, b: &Mask, neighbors: u32) -> u64 {
    let (labels, n) = flood_fill_labels(a, neighbors);
    let mut total = 0u64;
    for id in 1..=n as u32 {
        let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == id).collect();
        if members.iter().all(|&i| !b.bits()[i]) {
            total += members.len() as u64;
        }
    }
    total
}

pub fn naive_fp_ml(pred: &Mask, gt: &Mask, neighbors: u32) -> f64 {
    naive_unmatched_voxels(pred, gt, neighbors) as f64 * gt.grid().voxel_volume_ml()
}

pub fn naive_fn_ml(pred: &Mask, gt: &Mask, neighbors: u32) -> f64 {
    naive_unmatched_voxels(gt, pred, neighbors) as f64 * gt.grid().voxel_volume_ml()
}

/// Bernoulli(density) mask.
pub fn random_mask(grid: Grid3, density: f64, rng: &mut ChaCha8Rng) -> Mask {
    let bits = (0..grid.len()).map(|_| rng.random_bool(density)).collect();
    Mask::new(grid, bits).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
