use std::path::{Path, PathBuf};

use lesionseg::metrics::{aggregate, evaluate_case, CaseMetrics, EvalReport};
use lesionseg::phantom::{
    corrupt_prediction, generate_phantom, Corruption, LesionRecord, PhantomSpec,
};
use lesionseg::postproc::{
    filter_min_size, min_voxels_for_ml, sweep_to_csv, threshold_sweep, SweepCase,
};
use lesionseg::preproc::{
    compute_dataset_stats, preprocess_case, DatasetIntensityStats, PetNormalization,
};
use lesionseg::sampler::{sample_batch, PatchRecord};
use lesionseg::{component_stats, label_components, nifti, size_histogram, Connectivity, Mask};
use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;

use crate::layout::{self, CasePair};
use crate::{
    CliError, CliResult, EvalArgs, JobsArg, PetNormArg, PhantomArgs, PostprocArgs, PreprocessArgs,
    SampleArgs, StatsArgs, SweepArgs,
};

fn pool(jobs: &JobsArg) -> CliResult<rayon::ThreadPool> {
    let n = match jobs.jobs {
        Some(n) => n as usize,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map_err(|e| CliError::io(format!("cannot start {n} worker threads: {e}")))
}

fn is_gz(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "gz")
}

fn create_dir(dir: &Path) -> CliResult {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::io(format!("cannot create directory {}: {e}", dir.display())))
}

fn write_text(path: &Path, text: &str) -> CliResult {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    std::fs::write(path, text)
        .map_err(|e| CliError::io(format!("cannot write {}: {e}", path.display())))
}

fn write_mask(mask: &Mask, path: &Path) -> CliResult {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    Ok(nifti::write_mask(mask, path, is_gz(path))?)
}

fn to_json(value: &impl Serialize) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    text
}

fn check_min_size_ml(ml: Option<f64>) -> CliResult {
    match ml {
        Some(ml) if !(ml.is_finite() && ml >= 0.0) => Err(CliError::usage(format!(
            "--min-size-ml must be a non-negative number, got {ml}"
        ))),
        _ => Ok(()),
    }
}

/// Reads a prediction/ground-truth pair and checks they share a grid.
fn read_pair(pair: &CasePair) -> CliResult<(Mask, Mask)> {
    let pred = nifti::read_mask(&pair.pred)?;
    let gt = nifti::read_mask(&pair.gt)?;
    if !pred.grid().same_geometry(gt.grid()) {
        return Err(CliError::usage(format!(
            "case {}: prediction grid {} differs from ground truth grid {}",
            pair.case_id,
            pred.grid(),
            gt.grid()
        )));
    }
    Ok((pred, gt))
}

fn fmt_dice(dice: Option<f64>) -> String {
    dice.map_or_else(|| "n/a".into(), |d| format!("{d:.4}"))
}

fn eval_case(
    pair: &CasePair,
    conn: Connectivity,
    min_size: u64,
    min_size_ml: Option<f64>,
) -> CliResult<(CaseMetrics, u64)> {
    let (pred, gt) = read_pair(pair)?;
    let threshold = match min_size_ml {
        Some(ml) => min_voxels_for_ml(ml, gt.grid().voxel_volume_ml())?,
        None => min_size,
    };
    let pred = if threshold > 0 {
        filter_min_size(&pred, threshold, conn)
    } else {
        pred
    };
    let m = evaluate_case(pair.case_id.clone(), &pred, &gt, conn)?;
    info!(
        "{}: dice {}, FP {:.3} mL, FN {:.3} mL",
        m.case_id,
        fmt_dice(m.dice),
        m.fp_volume_ml,
        m.fn_volume_ml
    );
    Ok((m, threshold))
}

pub fn eval(args: &EvalArgs) -> CliResult {
    check_min_size_ml(args.min_size_ml)?;
    let pairs = layout::pair_cases(&args.pred, &args.gt)?;
    let pool = pool(&args.jobs)?;
    let results: Vec<CliResult<(CaseMetrics, u64)>> = pool.install(|| {
        pairs
            .par_iter()
            .map(|p| eval_case(p, args.connectivity, args.min_size, args.min_size_ml))
            .collect()
    });
    let evaluated = results.into_iter().collect::<CliResult<Vec<_>>>()?;

    let applied = evaluated.iter().map(|(_, k)| *k).max().unwrap_or(0);
    if evaluated.iter().any(|(_, k)| *k != applied) {
        warn!(
            "voxel spacing differs between cases; per-case thresholds range up to {applied} voxels"
        );
    }
    let metrics = evaluated.into_iter().map(|(m, _)| m).collect();
    let report = EvalReport::new(&aggregate(metrics)?, args.connectivity, applied);
    let mut json = report.to_json();
    json.push('\n');
    write_text(&args.out, &json)?;
    info!("{}", report.summary());
    Ok(())
}

pub fn sweep(args: &SweepArgs) -> CliResult {
    let pairs = layout::pair_cases(&args.pred, &args.gt)?;
    let pool = pool(&args.jobs)?;
    let rows = pool.install(|| -> CliResult<_> {
        let loaded: Vec<CliResult<SweepCase>> = pairs
            .par_iter()
            .map(|p| read_pair(p).map(|(pred, gt)| (p.case_id.clone(), pred, gt)))
            .collect();
        let cases = loaded.into_iter().collect::<CliResult<Vec<_>>>()?;
        Ok(threshold_sweep(
            &cases,
            &args.thresholds,
            args.connectivity,
        )?)
    })?;
    for r in &rows {
        info!(
            "threshold {}: dice {}, FP {:.3} mL, FN {:.3} mL",
            r.threshold_voxels,
            fmt_dice(r.dice),
            r.fp_volume_ml,
            r.fn_volume_ml
        );
    }
    write_text(&args.out, &sweep_to_csv(&rows))
}

pub fn postproc(args: &PostprocArgs) -> CliResult {
    check_min_size_ml(args.min_size_ml)?;
    let mask = nifti::read_mask(&args.input)?;
    let threshold = match args.min_size_ml {
        Some(ml) => min_voxels_for_ml(ml, mask.grid().voxel_volume_ml())?,
        None => args.min_size,
    };
    let filtered = filter_min_size(&mask, threshold, args.connectivity);
    info!(
        "kept {} of {} foreground voxels (min size {threshold} voxels)",
        filtered.foreground_count(),
        mask.foreground_count()
    );
    write_mask(&filtered, &args.out)
}

struct ImagingCase {
    id: String,
    pet: PathBuf,
    ct: PathBuf,
}

fn imaging_cases(root: &Path) -> CliResult<Vec<ImagingCase>> {
    let dirs = layout::case_dirs(root)?;
    if dirs.is_empty() {
        return Err(CliError::usage(format!(
            "no cases found in {} (expected <case>/pet.nii.gz and <case>/ct.nii.gz)",
            root.display()
        )));
    }
    let mut cases = Vec::new();
    let mut missing = Vec::new();
    for (id, dir) in dirs {
        match (
            layout::find_role(&dir, "pet"),
            layout::find_role(&dir, "ct"),
        ) {
            (Some(pet), Some(ct)) => cases.push(ImagingCase { id, pet, ct }),
            (pet, _) => missing.push(format!(
                "{id}: missing {}",
                if pet.is_none() { "pet" } else { "ct" }
            )),
        }
    }
    if !missing.is_empty() {
        return Err(CliError::usage(format!(
            "{} incomplete case(s):\n  {}",
            missing.len(),
            missing.join("\n  ")
        )));
    }
    Ok(cases)
}

pub fn preprocess(args: &PreprocessArgs) -> CliResult {
    let cases = imaging_cases(&args.cases)?;
    let pool = pool(&args.jobs)?;
    let stats = if args.compute_stats {
        let cts: Vec<PathBuf> = cases.iter().map(|c| c.ct.clone()).collect();
        let stats = pool.install(|| {
            compute_dataset_stats(
                &cts,
                args.percentile_lo,
                args.percentile_hi,
                args.stride as usize,
            )
        })?;
        if let Some(parent) = args.stats.parent().filter(|p| !p.as_os_str().is_empty()) {
            create_dir(parent)?;
        }
        stats.save(&args.stats)?;
        info!(
            "CT statistics over {} voxels: clip [{}, {}], mean {}, std {}",
            stats.n_voxels_sampled, stats.clip_lo, stats.clip_hi, stats.mean, stats.std
        );
        stats
    } else if !args.stats.exists() {
        return Err(CliError::usage(format!(
            "statistics file {} not found; rerun with --compute-stats to create it",
            args.stats.display()
        )));
    } else {
        DatasetIntensityStats::load(&args.stats)?
    };
    let pet_norm = match args.pet_norm {
        PetNormArg::PerVolume => PetNormalization::PerVolume,
        PetNormArg::Global => PetNormalization::Global {
            mean: args.pet_mean.expect("required by clap"),
            std: args.pet_std.expect("required by clap"),
        },
    };

    let results: Vec<CliResult> = pool.install(|| {
        cases
            .par_iter()
            .map(|case| {
                let pet = nifti::read_volume(&case.pet)?;
                let ct = nifti::read_volume(&case.ct)?;
                let out = preprocess_case(&pet, &ct, &stats, pet_norm)?;
                let dir = args.out.join(&case.id);
                create_dir(&dir)?;
                nifti::write_volume(&out.pet, dir.join("pet_norm.nii.gz"), true)?;
                nifti::write_volume(&out.ct, dir.join("ct_norm.nii.gz"), true)?;
                info!("{}: normalized on {}", case.id, out.pet.grid());
                Ok(())
            })
            .collect()
    });
    results.into_iter().collect()
}

fn default_components_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("stats");
    out.with_file_name(format!("{stem}.components.csv"))
}

pub fn stats(args: &StatsArgs) -> CliResult {
    let mask = nifti::read_mask(&args.mask)?;
    let labels = label_components(&mask, args.connectivity);
    let stats = component_stats(&labels, mask.grid())?;
    let hist = size_histogram(&stats, &args.bins)?;

    let mut components = String::from("id,voxels,volume_ml,cx,cy,cz\n");
    for s in &stats {
        let [cx, cy, cz] = s.centroid_mm;
        components.push_str(&format!(
            "{},{},{},{cx},{cy},{cz}\n",
            s.id, s.voxels, s.volume_ml
        ));
    }
    let mut histogram = String::from("lo,hi,count\n");
    for b in &hist {
        histogram.push_str(&format!("{},{},{}\n", b.lo, b.hi, b.count));
    }
    let components_path = args
        .components
        .clone()
        .unwrap_or_else(|| default_components_path(&args.out));
    write_text(&components_path, &components)?;
    write_text(&args.out, &histogram)?;
    match lesionseg::ccl::median_component_size(&labels) {
        Some(m) => info!("{} components, median size {m} voxels", stats.len()),
        None => info!("no components"),
    }
    Ok(())
}

#[derive(Serialize)]
struct PhantomManifest<'a> {
    case_id: &'a str,
    seed: u64,
    dims: [usize; 3],
    spacing: [f64; 3],
    lesions: &'a [LesionRecord],
}

pub fn phantom(args: &PhantomArgs) -> CliResult {
    let width = (args.cases - 1).to_string().len().max(3);
    let size = args.size as usize;
    let base = PhantomSpec {
        dims: [size; 3],
        spacing: [args.spacing; 3],
        n_lesions: args.lesions,
        lesion_radius_range_mm: (args.radius_min, args.radius_max),
        pet_background_level: args.background,
        pet_lesion_uptake: args.uptake,
        noise_sigma: args.noise,
        n_distractors: args.distractors,
        seed: args.seed,
    };
    base.validate()?;
    if args.with_pred && !(0.0..=1.0).contains(&args.dilation) {
        return Err(CliError::usage(format!(
            "--dilation must be in [0, 1], got {}",
            args.dilation
        )));
    }
    let pool = pool(&args.jobs)?;
    let results: Vec<CliResult> = pool.install(|| {
        (0..args.cases)
            .into_par_iter()
            .map(|i| {
                let case_id = format!("case_{i:0width$}");
                let seed = args.seed.wrapping_add(i);
                let spec = PhantomSpec {
                    seed,
                    ..base.clone()
                };
                let p = generate_phantom(&spec)?;
                let dir = args.out.join(&case_id);
                create_dir(&dir)?;
                nifti::write_volume(&p.pet, dir.join("pet.nii.gz"), true)?;
                nifti::write_volume(&p.ct, dir.join("ct.nii.gz"), true)?;
                nifti::write_mask(&p.gt, dir.join("gt.nii.gz"), true)?;
                if args.with_pred {
                    let corruption = Corruption {
                        spurious_blobs: args.spurious_blobs,
                        blob_voxels: (1, args.max_blob_voxels as usize),
                        missed_lesions: args.missed_lesions,
                        dilation_prob: args.dilation,
                        seed,
                    };
                    let pred = corrupt_prediction(&p.gt, &corruption)?;
                    nifti::write_mask(&pred, dir.join("pred.nii.gz"), true)?;
                }
                let manifest = PhantomManifest {
                    case_id: &case_id,
                    seed,
                    dims: spec.dims,
                    spacing: spec.spacing,
                    lesions: &p.lesions,
                };
                write_text(&dir.join("lesions.json"), &to_json(&manifest))?;
                info!("{case_id}: {} lesion(s), seed {seed}", args.lesions);
                Ok(())
            })
            .collect()
    });
    results.into_iter().collect()
}

#[derive(Serialize)]
struct SampleManifest<'a> {
    case: String,
    seed: u64,
    patch_size: [usize; 3],
    batch_size: usize,
    oversample_fraction: f64,
    channels: &'a [&'a str],
    empty_label_fallback: bool,
    patches: Vec<PatchRecord>,
}

pub fn sample(args: &SampleArgs) -> CliResult {
    let patch_size: [usize; 3] = match args.patch_size.as_slice() {
        &[n] => [n; 3],
        &[x, y, z] => [x, y, z],
        other => {
            return Err(CliError::usage(format!(
                "--patch-size takes 1 or 3 values, got {}",
                other.len()
            )))
        }
    };
    let pet_path = layout::find_role(&args.case, "pet")
        .ok_or_else(|| CliError::usage(format!("{}: missing pet.nii.gz", args.case.display())))?;
    let gt_path = layout::find_role(&args.case, "gt")
        .ok_or_else(|| CliError::usage(format!("{}: missing gt.nii.gz", args.case.display())))?;
    let label = nifti::read_mask(&gt_path)?;
    let mut channels = vec!["pet"];
    let mut images = vec![nifti::read_volume(&pet_path)?];
    if let Some(ct_path) = layout::find_role(&args.case, "ct") {
        channels.push("ct");
        images.push(nifti::read_volume(&ct_path)?);
    }
    for (name, img) in channels.iter().zip(&images) {
        if !img.grid().same_geometry(label.grid()) {
            return Err(CliError::usage(format!(
                "{name} grid {} differs from label grid {}; run preprocess first",
                img.grid(),
                label.grid()
            )));
        }
    }
    let image_refs: Vec<_> = images.iter().collect();
    let batch = sample_batch(
        &image_refs,
        &label,
        patch_size,
        args.batch,
        args.oversample,
        args.seed,
    )?;

    create_dir(&args.out)?;
    for (k, patch) in batch.patches.iter().enumerate() {
        for (name, img) in channels.iter().zip(&patch.images) {
            nifti::write_volume(
                img,
                args.out.join(format!("patch_{k:03}_{name}.nii.gz")),
                true,
            )?;
        }
        nifti::write_mask(
            &patch.label,
            args.out.join(format!("patch_{k:03}_label.nii.gz")),
            true,
        )?;
    }
    let manifest = SampleManifest {
        case: args.case.display().to_string(),
        seed: args.seed,
        patch_size,
        batch_size: args.batch,
        oversample_fraction: args.oversample,
        channels: &channels,
        empty_label_fallback: batch.empty_label_fallback,
        patches: batch.records(),
    };
    write_text(&args.out.join("manifest.json"), &to_json(&manifest))?;
    info!(
        "{} patch(es), {} with foreground",
        batch.patches.len(),
        batch.foreground_patches()
    );
    Ok(())
}
