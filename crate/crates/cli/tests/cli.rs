use std::path::{Path, PathBuf};
use std::process::Command;

use lesionseg::metrics::{aggregate, evaluate_case, EvalReport};
use lesionseg::{label_components, nifti, Connectivity, Grid3, Mask};

struct Outcome {
    code: i32,
    stderr: String,
}

fn lesionseg(args: &[&str]) -> Outcome {
    let out = Command::new(env!("CARGO_BIN_EXE_lesionseg"))
        .args(args)
        .env("RUST_LOG", "info")
        .output()
        .expect("binary runs");
    Outcome {
        code: out.status.code().expect("exit code"),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

fn ok(args: &[&str]) {
    let o = lesionseg(args);
    assert_eq!(o.code, 0, "{args:?} failed:\n{}", o.stderr);
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// `phantom` dataset with corrupted predictions.
fn dataset(root: &Path, cases: u32, seed: u64) -> PathBuf {
    let dir = root.join(format!("ds{seed}"));
    ok(&[
        "phantom",
        "--out",
        s(&dir),
        "--cases",
        &cases.to_string(),
        "--seed",
        &seed.to_string(),
        "--size",
        "32",
        "--lesions",
        "2",
        "--radius-min",
        "4",
        "--radius-max",
        "7",
        "--with-pred",
        "--spurious-blobs",
        "3",
        "--missed-lesions",
        "1",
    ]);
    dir
}

/// Single-threaded library pass over a dataset directory.
fn oracle_report(dir: &Path, conn: Connectivity, min_size: u64) -> String {
    let mut ids: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    ids.sort();
    let cases = ids
        .iter()
        .map(|id| {
            let pred = nifti::read_mask(dir.join(id).join("pred.nii.gz")).unwrap();
            let gt = nifti::read_mask(dir.join(id).join("gt.nii.gz")).unwrap();
            let pred = lesionseg::postproc::filter_min_size(&pred, min_size, conn);
            evaluate_case(id.clone(), &pred, &gt, conn).unwrap()
        })
        .collect();
    let mut json = EvalReport::new(&aggregate(cases).unwrap(), conn, min_size).to_json();
    json.push('\n');
    json
}

#[test]
fn eval_matches_library_oracle_for_any_jobs() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = dataset(tmp.path(), 10, 1);
    let expected = oracle_report(&ds, Connectivity::TwentySix, 0);
    for jobs in ["1", "3"] {
        let out = tmp.path().join(format!("r{jobs}.json"));
        ok(&[
            "eval",
            "--pred",
            s(&ds),
            "--gt",
            s(&ds),
            "--out",
            s(&out),
            "--jobs",
            jobs,
        ]);
        assert_eq!(std::fs::read_to_string(&out).unwrap(), expected);
    }
    let out = tmp.path().join("r6.json");
    ok(&[
        "eval",
        "--pred",
        s(&ds),
        "--gt",
        s(&ds),
        "--out",
        s(&out),
        "--connectivity",
        "6",
        "--min-size",
        "10",
    ]);
    assert_eq!(
        std::fs::read_to_string(&out).unwrap(),
        oracle_report(&ds, Connectivity::Six, 10)
    );
}

#[test]
fn eval_perfect_prediction() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = dataset(tmp.path(), 3, 2);
    for entry in std::fs::read_dir(&ds).unwrap() {
        let case = entry.unwrap().path();
        std::fs::copy(case.join("gt.nii.gz"), case.join("pred.nii.gz")).unwrap();
    }
    let out = tmp.path().join("r.json");
    ok(&["eval", "--pred", s(&ds), "--gt", s(&ds), "--out", s(&out)]);
    let text = std::fs::read_to_string(&out).unwrap();
    let report: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(report["mean_dice"], 1.0);
    assert_eq!(report["mean_fp_volume_ml"], 0.0);
    assert_eq!(report["mean_fn_volume_ml"], 0.0);
    let keys = [
        "n_cases",
        "n_tumour_cases",
        "mean_dice",
        "mean_fp_volume_ml",
        "mean_fn_volume_ml",
        "connectivity",
        "min_size_applied",
        "cases",
        "case_id",
        "dice",
        "fp_volume_ml",
        "fn_volume_ml",
        "n_pred_components",
        "n_gt_components",
    ];
    let positions: Vec<usize> = keys
        .iter()
        .map(|k| text.find(&format!("\"{k}\"")).unwrap())
        .collect();
    assert!(positions.windows(2).all(|w| w[0] < w[1]), "{positions:?}");
}

#[test]
fn eval_layout_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let empty = tmp.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    let out = tmp.path().join("r.json");
    let o = lesionseg(&[
        "eval",
        "--pred",
        s(&empty),
        "--gt",
        s(&empty),
        "--out",
        s(&out),
    ]);
    assert_eq!(o.code, 2);
    assert!(o.stderr.contains("no cases found"));

    let ds = dataset(tmp.path(), 3, 3);
    std::fs::remove_file(ds.join("case_000/gt.nii.gz")).unwrap();
    std::fs::remove_file(ds.join("case_002/pred.nii.gz")).unwrap();
    let o = lesionseg(&["eval", "--pred", s(&ds), "--gt", s(&ds), "--out", s(&out)]);
    assert_eq!(o.code, 2);
    assert!(
        o.stderr.contains("case_000: missing gt") && o.stderr.contains("case_002: missing pred"),
        "{}",
        o.stderr
    );
    assert!(!out.exists());

    let o = lesionseg(&[
        "eval",
        "--pred",
        s(&tmp.path().join("nope")),
        "--gt",
        s(&ds),
        "--out",
        s(&out),
    ]);
    assert_eq!(o.code, 1);
    let o = lesionseg(&[
        "eval",
        "--pred",
        s(&ds),
        "--gt",
        s(&ds),
        "--out",
        s(&out),
        "--jobs",
        "0",
    ]);
    assert_eq!(o.code, 2);
    let o = lesionseg(&[
        "eval",
        "--pred",
        s(&ds),
        "--gt",
        s(&ds),
        "--out",
        s(&out),
        "--connectivity",
        "8",
    ]);
    assert_eq!(o.code, 2);
}

#[test]
fn eval_min_size_ml_rounds_up() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = dataset(tmp.path(), 2, 4);
    let out = tmp.path().join("r.json");
    // 2 mm voxels hold 0.008 mL; 0.07 mL needs 8.75 -> 9 voxels.
    ok(&[
        "eval",
        "--pred",
        s(&ds),
        "--gt",
        s(&ds),
        "--out",
        s(&out),
        "--min-size-ml",
        "0.07",
    ]);
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text, oracle_report(&ds, Connectivity::TwentySix, 9));
    let o = lesionseg(&[
        "eval",
        "--pred",
        s(&ds),
        "--gt",
        s(&ds),
        "--out",
        s(&out),
        "--min-size",
        "3",
        "--min-size-ml",
        "1",
    ]);
    assert_eq!(o.code, 2);
}

#[test]
fn sweep_rows_consistent_with_eval() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = dataset(tmp.path(), 5, 5);
    let csv = tmp.path().join("s.csv");
    ok(&[
        "sweep",
        "--pred",
        s(&ds),
        "--gt",
        s(&ds),
        "--out",
        s(&csv),
        "--jobs",
        "2",
    ]);
    let text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(
        lines[0],
        "threshold_voxels,mean_dice,mean_fp_volume_ml,mean_fn_volume_ml"
    );
    let thresholds: Vec<&str> = lines[1..]
        .iter()
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(thresholds, ["0", "5", "10", "20", "40", "80"]);
    let fp: Vec<f64> = lines[1..]
        .iter()
        .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
        .collect();
    assert!(fp.windows(2).all(|w| w[1] <= w[0]), "{fp:?}");

    let only0 = tmp.path().join("s0.csv");
    ok(&[
        "sweep",
        "--pred",
        s(&ds),
        "--gt",
        s(&ds),
        "--out",
        s(&only0),
        "--thresholds",
        "0",
    ]);
    let row: Vec<String> = std::fs::read_to_string(&only0)
        .unwrap()
        .lines()
        .nth(1)
        .unwrap()
        .split(',')
        .map(String::from)
        .collect();
    let report = tmp.path().join("r.json");
    ok(&[
        "eval",
        "--pred",
        s(&ds),
        "--gt",
        s(&ds),
        "--out",
        s(&report),
    ]);
    let r: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(
        row[1].parse::<f64>().unwrap(),
        r["mean_dice"].as_f64().unwrap()
    );
    assert_eq!(
        row[2].parse::<f64>().unwrap(),
        r["mean_fp_volume_ml"].as_f64().unwrap()
    );
    assert_eq!(
        row[3].parse::<f64>().unwrap(),
        r["mean_fn_volume_ml"].as_f64().unwrap()
    );
}

fn components_3_10_40(path: &Path) -> Mask {
    let grid = Grid3::new([50, 5, 5], [1.0; 3], [0.0; 3]).unwrap();
    let mut voxels: Vec<[usize; 3]> = (0..3).map(|x| [x, 0, 0]).collect();
    voxels.extend((5..15).map(|x| [x, 0, 0]));
    voxels.extend((20..40).flat_map(|x| [[x, 2, 2], [x, 3, 2]]));
    let mask = Mask::from_voxels(grid, &voxels).unwrap();
    nifti::write_mask(&mask, path, true).unwrap();
    mask
}

#[test]
fn postproc_filters_and_reports_io_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("in.nii.gz");
    let mask = components_3_10_40(&input);
    let out0 = tmp.path().join("k0.nii.gz");
    ok(&[
        "postproc",
        "--in",
        s(&input),
        "--min-size",
        "0",
        "--out",
        s(&out0),
    ]);
    assert_eq!(nifti::read_mask(&out0).unwrap(), mask);
    let out10 = tmp.path().join("k10.nii");
    ok(&[
        "postproc",
        "--in",
        s(&input),
        "--min-size",
        "10",
        "--out",
        s(&out10),
    ]);
    let kept = nifti::read_mask(&out10).unwrap();
    let mut sizes = label_components(&kept, Connectivity::TwentySix)
        .sizes()
        .to_vec();
    sizes.sort_unstable();
    assert_eq!(sizes, [10, 40]);
    assert_ne!(std::fs::read(&out10).unwrap()[..2], [0x1f, 0x8b]);
    let o = lesionseg(&[
        "postproc",
        "--in",
        s(&tmp.path().join("missing.nii.gz")),
        "--out",
        s(&out0),
    ]);
    assert_eq!(o.code, 1);
}

#[test]
fn preprocess_outputs_share_pet_grid() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = dataset(tmp.path(), 2, 6);
    let stats = tmp.path().join("stats.json");
    let out = tmp.path().join("pp");
    let o = lesionseg(&[
        "preprocess",
        "--cases",
        s(&ds),
        "--stats",
        s(&stats),
        "--out",
        s(&out),
    ]);
    assert_eq!(o.code, 2);
    assert!(o.stderr.contains("--compute-stats"));

    ok(&[
        "preprocess",
        "--cases",
        s(&ds),
        "--stats",
        s(&stats),
        "--out",
        s(&out),
        "--compute-stats",
        "--stride",
        "2",
    ]);
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&stats).unwrap()).unwrap();
    assert_eq!(json["modality"], "CT");
    assert_eq!(json["n_voxels_sampled"], 2 * 32 * 32 * 32 / 2);
    for case in ["case_000", "case_001"] {
        let pet = nifti::read_volume(out.join(case).join("pet_norm.nii.gz")).unwrap();
        let ct = nifti::read_volume(out.join(case).join("ct_norm.nii.gz")).unwrap();
        let src = nifti::read_volume(ds.join(case).join("pet.nii.gz")).unwrap();
        assert_eq!(pet.grid(), src.grid());
        assert_eq!(ct.grid(), src.grid());
    }
    let first = std::fs::read(out.join("case_001/ct_norm.nii.gz")).unwrap();
    let out2 = tmp.path().join("pp2");
    ok(&[
        "preprocess",
        "--cases",
        s(&ds),
        "--stats",
        s(&stats),
        "--out",
        s(&out2),
        "--jobs",
        "1",
    ]);
    assert_eq!(
        std::fs::read(out2.join("case_001/ct_norm.nii.gz")).unwrap(),
        first
    );

    let o = lesionseg(&[
        "preprocess",
        "--cases",
        s(&ds),
        "--stats",
        s(&stats),
        "--out",
        s(&out),
        "--pet-norm",
        "global",
    ]);
    assert_eq!(o.code, 2);
}

#[test]
fn stats_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let empty = tmp.path().join("empty.nii.gz");
    nifti::write_mask(&Mask::empty(Grid3::unit([4, 4, 4]).unwrap()), &empty, true).unwrap();
    let hist = tmp.path().join("h.csv");
    ok(&["stats", "--mask", s(&empty), "--out", s(&hist)]);
    assert_eq!(
        std::fs::read_to_string(tmp.path().join("h.components.csv")).unwrap(),
        "id,voxels,volume_ml,cx,cy,cz\n"
    );

    let ds = dataset(tmp.path(), 1, 7);
    let comps = tmp.path().join("c.csv");
    ok(&[
        "stats",
        "--mask",
        s(&ds.join("case_000/gt.nii.gz")),
        "--out",
        s(&hist),
        "--components",
        s(&comps),
        "--bins",
        "1,10,100,1000,10000",
    ]);
    assert_eq!(std::fs::read_to_string(&comps).unwrap().lines().count(), 3);
    let total: usize = std::fs::read_to_string(&hist)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse::<usize>().unwrap())
        .sum();
    assert_eq!(total, 2);
    let o = lesionseg(&[
        "stats",
        "--mask",
        s(&empty),
        "--out",
        s(&hist),
        "--bins",
        "5,1",
    ]);
    assert_eq!(o.code, 2);
}

#[test]
fn phantom_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for dir in [&a, &b] {
        ok(&[
            "phantom",
            "--seed",
            "42",
            "--lesions",
            "3",
            "--size",
            "64",
            "--out",
            s(dir),
        ]);
    }
    for file in ["pet.nii.gz", "ct.nii.gz", "gt.nii.gz", "lesions.json"] {
        let x = std::fs::read(a.join("case_000").join(file)).unwrap();
        assert_eq!(
            x,
            std::fs::read(b.join("case_000").join(file)).unwrap(),
            "{file}"
        );
    }
    let o = lesionseg(&[
        "phantom",
        "--out",
        s(&a),
        "--size",
        "4",
        "--lesions",
        "5",
        "--radius-min",
        "9",
        "--radius-max",
        "9",
    ]);
    assert_eq!(o.code, 2);
    assert!(o.stderr.contains("placement"), "{}", o.stderr);
    let o = lesionseg(&["phantom", "--out", s(&a), "--lesions", "-1"]);
    assert_eq!(o.code, 2);
}

#[test]
fn sample_manifest_and_fallback() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = dataset(tmp.path(), 1, 8);
    let case = ds.join("case_000");
    let out = tmp.path().join("patches");
    ok(&[
        "sample",
        "--case",
        s(&case),
        "--out",
        s(&out),
        "--patch-size",
        "128",
        "--oversample",
        "0.5",
        "--batch",
        "2",
        "--seed",
        "3",
    ]);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    let patches = manifest["patches"].as_array().unwrap();
    assert_eq!(patches.len(), 2);
    assert!(patches.iter().any(|p| p["contains_foreground"] == true));
    let label = nifti::read_mask(out.join("patch_000_label.nii.gz")).unwrap();
    assert_eq!(label.grid().dims(), [128, 128, 128]);

    let grid = *nifti::read_mask(case.join("gt.nii.gz")).unwrap().grid();
    nifti::write_mask(&Mask::empty(grid), case.join("gt.nii.gz"), true).unwrap();
    let o = lesionseg(&[
        "sample",
        "--case",
        s(&case),
        "--out",
        s(&out),
        "--patch-size",
        "16",
    ]);
    assert_eq!(o.code, 0);
    assert!(o.stderr.contains("no foreground"), "{}", o.stderr);
    let o = lesionseg(&[
        "sample",
        "--case",
        s(&case),
        "--out",
        s(&out),
        "--oversample",
        "1.5",
    ]);
    assert_eq!(o.code, 2);
}
