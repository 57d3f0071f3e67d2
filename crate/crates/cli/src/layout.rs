//! Directory-of-cases discovery: every subdirectory is a case and its name
//! is the case id. Files are looked up as `<role>.nii.gz`, then `<role>.nii`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::{CliError, CliResult};

/// Path of `<dir>/<role>.nii.gz` or `<dir>/<role>.nii`, if either exists.
pub fn find_role(dir: &Path, role: &str) -> Option<PathBuf> {
    [format!("{role}.nii.gz"), format!("{role}.nii")]
        .into_iter()
        .map(|name| dir.join(name))
        .find(|p| p.is_file())
}

/// Case directories under `root`, sorted by id.
pub fn case_dirs(root: &Path) -> CliResult<BTreeMap<String, PathBuf>> {
    let entries = std::fs::read_dir(root)
        .map_err(|e| CliError::io(format!("cannot read directory {}: {e}", root.display())))?;
    let mut out = BTreeMap::new();
    for entry in entries {
        let entry = entry
            .map_err(|e| CliError::io(format!("cannot read directory {}: {e}", root.display())))?;
        let path = entry.path();
        if !path.is_dir() {
            continue;
        }
        let Some(id) = path.file_name().and_then(|n| n.to_str()) else {
            return Err(CliError::usage(format!(
                "case directory name {} is not valid UTF-8",
                path.display()
            )));
        };
        out.insert(id.to_string(), path);
    }
    Ok(out)
}

/// Files of one role, keyed by case id; cases without the file are skipped.
pub fn role_files(root: &Path, role: &str) -> CliResult<BTreeMap<String, PathBuf>> {
    Ok(case_dirs(root)?
        .into_iter()
        .filter_map(|(id, dir)| find_role(&dir, role).map(|p| (id, p)))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CasePair {
    pub case_id: String,
    pub pred: PathBuf,
    pub gt: PathBuf,
}

/// Pairs `<pred>/<case>/pred.nii*` with `<gt>/<case>/gt.nii*`. Any case
/// present on only one side is a layout error, and all of them are listed.
pub fn pair_cases(pred_root: &Path, gt_root: &Path) -> CliResult<Vec<CasePair>> {
    let preds = role_files(pred_root, "pred")?;
    let gts = role_files(gt_root, "gt")?;
    if preds.is_empty() {
        return Err(CliError::usage(format!(
            "no cases found in {} (expected <case>/pred.nii.gz)",
            pred_root.display()
        )));
    }
    let mut unpaired = Vec::new();
    for id in preds.keys().filter(|id| !gts.contains_key(*id)) {
        unpaired.push(format!("{id}: missing gt"));
    }
    for id in gts.keys().filter(|id| !preds.contains_key(*id)) {
        unpaired.push(format!("{id}: missing pred"));
    }
    if !unpaired.is_empty() {
        unpaired.sort();
        return Err(CliError::usage(format!(
            "{} unpaired case(s):\n  {}",
            unpaired.len(),
            unpaired.join("\n  ")
        )));
    }
    Ok(preds
        .into_iter()
        .map(|(case_id, pred)| {
            let gt = gts[&case_id].clone();
            CasePair { case_id, pred, gt }
        })
        .collect())
}
