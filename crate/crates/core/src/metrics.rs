//! Per-case lesion metrics and dataset aggregation.
//!
//! * Dice is global foreground Dice, defined only when the ground truth has
//!   foreground.
//! * False-positive volume sums predicted components sharing no voxel with the
//!   ground truth.
//! * False-negative volume sums ground-truth components sharing no voxel with
//!   the prediction.

use std::collections::BTreeSet;

use serde::Serialize;

use crate::ccl::{label_components, Connectivity};
use crate::error::{Error, Result};
use crate::grid::{overlap_count, LabelMap, Mask};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseMetrics {
    pub case_id: String,
    pub dice: Option<f64>,
    pub fp_volume_ml: f64,
    pub fn_volume_ml: f64,
    pub n_pred_components: usize,
    pub n_gt_components: usize,
    pub gt_foreground_ml: f64,
    pub pred_foreground_ml: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateReport {
    pub n_cases: usize,
    pub n_tumour_cases: usize,
    /// Mean over cases with ground-truth foreground.
    pub mean_dice: Option<f64>,
    /// Mean over all cases.
    pub mean_fp_volume_ml: f64,
    /// Mean over all cases.
    pub mean_fn_volume_ml: f64,
    /// Sorted by `case_id`.
    pub cases: Vec<CaseMetrics>,
}

/// `2|P∩G| / (|P|+|G|)`; `None` when the ground truth is empty.
pub fn dice_score(pred: &Mask, gt: &Mask) -> Result<Option<f64>> {
    let inter = overlap_count(pred, gt)?;
    let g = gt.foreground_count();
    if g == 0 {
        return Ok(None);
    }
    let p = pred.foreground_count();
    Ok(Some(2.0 * inter as f64 / (p + g) as f64))
}

/// Voxel count of the components of `labels` that share no voxel with `other`.
fn unmatched_voxels(labels: &LabelMap, other: &Mask) -> u64 {
    let mut touched = vec![false; labels.count() + 1];
    for (&l, &o) in labels.labels().iter().zip(other.bits()) {
        if l != 0 && o {
            touched[l as usize] = true;
        }
    }
    labels
        .sizes()
        .iter()
        .enumerate()
        .filter(|(k, _)| !touched[k + 1])
        .map(|(_, &s)| s)
        .sum()
}

/// Volume (mL) of predicted components with no ground-truth overlap.
pub fn false_positive_volume(pred: &Mask, gt: &Mask, conn: Connectivity) -> Result<f64> {
    pred.grid().ensure_same(gt.grid())?;
    let labels = label_components(pred, conn);
    Ok(unmatched_voxels(&labels, gt) as f64 * pred.grid().voxel_volume_ml())
}

/// Volume (mL) of ground-truth components with no predicted overlap.
pub fn false_negative_volume(pred: &Mask, gt: &Mask, conn: Connectivity) -> Result<f64> {
    false_positive_volume(gt, pred, conn)
}

/// All per-case metrics; each mask is labeled once.
pub fn evaluate_case(
    case_id: impl Into<String>,
    pred: &Mask,
    gt: &Mask,
    conn: Connectivity,
) -> Result<CaseMetrics> {
    pred.grid().ensure_same(gt.grid())?;
    let unit_ml = gt.grid().voxel_volume_ml();
    let pred_labels = label_components(pred, conn);
    let gt_labels = label_components(gt, conn);
    Ok(CaseMetrics {
        case_id: case_id.into(),
        dice: dice_score(pred, gt)?,
        fp_volume_ml: unmatched_voxels(&pred_labels, gt) as f64 * unit_ml,
        fn_volume_ml: unmatched_voxels(&gt_labels, pred) as f64 * unit_ml,
        n_pred_components: pred_labels.count(),
        n_gt_components: gt_labels.count(),
        gt_foreground_ml: gt.foreground_count() as f64 * unit_ml,
        pred_foreground_ml: pred.foreground_count() as f64 * unit_ml,
    })
}

/// Dataset means, accumulated in ascending `case_id` order so the result
/// does not depend on input order.
pub fn aggregate(cases: Vec<CaseMetrics>) -> Result<AggregateReport> {
    if cases.is_empty() {
        return Err(Error::EmptyInput("no cases to aggregate"));
    }
    let mut seen = BTreeSet::new();
    for c in &cases {
        if !seen.insert(c.case_id.as_str()) {
            return Err(Error::DuplicateCase(c.case_id.clone()));
        }
    }
    let mut cases = cases;
    cases.sort_by(|a, b| a.case_id.cmp(&b.case_id));

    let n = cases.len();
    let dices: Vec<f64> = cases.iter().filter_map(|c| c.dice).collect();
    let mean = |xs: &mut dyn Iterator<Item = f64>, n: usize| xs.sum::<f64>() / n as f64;
    Ok(AggregateReport {
        n_cases: n,
        n_tumour_cases: dices.len(),
        mean_dice: (!dices.is_empty()).then(|| mean(&mut dices.iter().copied(), dices.len())),
        mean_fp_volume_ml: mean(&mut cases.iter().map(|c| c.fp_volume_ml), n),
        mean_fn_volume_ml: mean(&mut cases.iter().map(|c| c.fn_volume_ml), n),
        cases,
    })
}

/// One case as serialized in the evaluation report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseRecord {
    pub case_id: String,
    pub dice: Option<f64>,
    pub fp_volume_ml: f64,
    pub fn_volume_ml: f64,
    pub n_pred_components: usize,
    pub n_gt_components: usize,
}

/// Evaluation report in its JSON layout (field order is the key order).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub n_cases: usize,
    pub n_tumour_cases: usize,
    pub mean_dice: Option<f64>,
    pub mean_fp_volume_ml: f64,
    pub mean_fn_volume_ml: f64,
    pub connectivity: u32,
    pub min_size_applied: u64,
    pub cases: Vec<CaseRecord>,
}

impl EvalReport {
    pub fn new(report: &AggregateReport, conn: Connectivity, min_size_applied: u64) -> Self {
        Self {
            n_cases: report.n_cases,
            n_tumour_cases: report.n_tumour_cases,
            mean_dice: report.mean_dice,
            mean_fp_volume_ml: report.mean_fp_volume_ml,
            mean_fn_volume_ml: report.mean_fn_volume_ml,
            connectivity: conn.neighbors(),
            min_size_applied,
            cases: report
                .cases
                .iter()
                .map(|c| CaseRecord {
                    case_id: c.case_id.clone(),
                    dice: c.dice,
                    fp_volume_ml: c.fp_volume_ml,
                    fn_volume_ml: c.fn_volume_ml,
                    n_pred_components: c.n_pred_components,
                    n_gt_components: c.n_gt_components,
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Human-readable summary with volumes to 3 decimals.
    pub fn summary(&self) -> String {
        let dice = self
            .mean_dice
            .map_or_else(|| "n/a".to_string(), |d| format!("{d:.4}"));
        format!(
            "{} cases ({} with tumour): dice {}, FP {:.3} mL, FN {:.3} mL",
            self.n_cases, self.n_tumour_cases, dice, self.mean_fp_volume_ml, self.mean_fn_volume_ml
        )
    }
}
