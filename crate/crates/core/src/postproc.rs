//! Minimum-size component removal and threshold sweeps.

use rayon::prelude::*;
use serde::Serialize;

use crate::ccl::{label_components, Connectivity};
use crate::error::{Error, Result};
use crate::grid::Mask;
use crate::metrics::{aggregate, evaluate_case};

/// Thresholds (voxels) evaluated by default in a sweep.
pub const DEFAULT_SWEEP_THRESHOLDS: [u64; 6] = [0, 5, 10, 20, 40, 80];

/// Removes components with fewer than `min_voxels` voxels; larger or equal
/// components are kept unchanged.
pub fn filter_min_size(mask: &Mask, min_voxels: u64, conn: Connectivity) -> Mask {
    if min_voxels == 0 {
        return mask.clone();
    }
    let labels = label_components(mask, conn);
    labels.select(|id| labels.size(id).is_some_and(|s| s >= min_voxels))
}

/// Smallest voxel count whose physical volume is at least `min_ml`.
pub fn min_voxels_for_ml(min_ml: f64, voxel_volume_ml: f64) -> Result<u64> {
    if !(min_ml.is_finite() && min_ml >= 0.0) {
        return Err(Error::InvalidArgument(format!("minimum size {min_ml} mL")));
    }
    let voxels = (min_ml / voxel_volume_ml).ceil();
    // Guard against 0.1/0.001 = 100.00000000000001 rounding up to 101.
    let below = voxels - 1.0;
    if below >= 0.0 && (below * voxel_volume_ml - min_ml).abs() <= 1e-9 * min_ml.max(1e-12) {
        return Ok(below as u64);
    }
    Ok(voxels as u64)
}

/// Aggregate metrics after filtering every prediction at one threshold.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub threshold_voxels: u64,
    pub dice: Option<f64>,
    pub fp_volume_ml: f64,
    pub fn_volume_ml: f64,
}

pub const SWEEP_CSV_HEADER: &str = "threshold_voxels,mean_dice,mean_fp_volume_ml,mean_fn_volume_ml";

/// A case to sweep: identifier, prediction, ground truth.
pub type SweepCase = (String, Mask, Mask);

/// Evaluates each threshold over all cases; rows come back sorted by
/// ascending threshold. Work is spread over the current rayon pool and
/// aggregation order is fixed by case id.
pub fn threshold_sweep(
    cases: &[SweepCase],
    thresholds: &[u64],
    conn: Connectivity,
) -> Result<Vec<SweepRow>> {
    if cases.is_empty() {
        return Err(Error::EmptyInput("no cases to sweep"));
    }
    let mut sorted = thresholds.to_vec();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::InvalidArgument(format!(
            "thresholds must be distinct: {thresholds:?}"
        )));
    }
    if sorted.is_empty() {
        return Err(Error::EmptyInput("no thresholds"));
    }
    for (id, pred, gt) in cases {
        if !pred.grid().same_geometry(gt.grid()) {
            return Err(Error::CaseMisalignment(format!(
                "case {id}: prediction {} vs ground truth {}",
                pred.grid(),
                gt.grid()
            )));
        }
    }

    let jobs: Vec<(usize, usize)> = (0..sorted.len())
        .flat_map(|t| (0..cases.len()).map(move |c| (t, c)))
        .collect();
    let metrics = jobs
        .par_iter()
        .map(|&(t, c)| {
            let (id, pred, gt) = &cases[c];
            let filtered = filter_min_size(pred, sorted[t], conn);
            evaluate_case(id.clone(), &filtered, gt, conn)
        })
        .collect::<Result<Vec<_>>>()?;

    metrics
        .chunks(cases.len())
        .zip(&sorted)
        .map(|(chunk, &threshold)| {
            let report = aggregate(chunk.to_vec())?;
            Ok(SweepRow {
                threshold_voxels: threshold,
                dice: report.mean_dice,
                fp_volume_ml: report.mean_fp_volume_ml,
                fn_volume_ml: report.mean_fn_volume_ml,
            })
        })
        .collect()
}

/// Sweep rows as CSV; an undefined mean Dice is written as an empty field.
pub fn sweep_to_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(SWEEP_CSV_HEADER);
    out.push('\n');
    for r in rows {
        let dice = r.dice.map(|d| d.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.threshold_voxels, dice, r.fp_volume_ml, r.fn_volume_ml
        ));
    }
    out
}
