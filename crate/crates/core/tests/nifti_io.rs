use std::path::PathBuf;

use lesionseg::nifti::{
    read_header, read_mask, read_mask_with_report, read_volume, write_mask, write_volume,
    write_volume_as, Datatype,
};
use lesionseg::{Error, Grid3, Mask, NiftiError, Volume};
use proptest::prelude::*;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

fn assert_ramp(v: &Volume) {
    assert_eq!(v.grid().dims(), [4, 4, 4]);
    assert_eq!(v.grid().spacing(), [1.0, 2.0, 3.0]);
    assert_eq!(v.grid().origin(), [10.0, -20.0, 5.5]);
    for (i, &x) in v.values().iter().enumerate() {
        assert_eq!(x, i as f32);
    }
    assert_eq!(v.get(1, 2, 3), 1.0 + 4.0 * 2.0 + 16.0 * 3.0);
}

#[test]
fn reads_reference_ramp() {
    assert_ramp(&read_volume(fixture("ramp_f32.nii")).unwrap());
    assert_ramp(&read_volume(fixture("ramp_f32.nii.gz")).unwrap());
}

#[test]
fn reads_scaled_int16() {
    let v = read_volume(fixture("scaled_i16.nii")).unwrap();
    assert!(v.values().iter().all(|&x| x == 20.0));
    let h = read_header(fixture("scaled_i16.nii")).unwrap();
    assert_eq!(h.datatype, Datatype::I16);
    assert_eq!((h.scl_slope, h.scl_inter), (2.0, 10.0));
}

#[test]
fn rejects_four_d() {
    match read_volume(fixture("four_d.nii")) {
        Err(Error::Nifti {
            source: NiftiError::NotThreeD(dim),
            ..
        }) => assert_eq!(dim[4], 2),
        other => panic!("expected non-3D error, got {other:?}"),
    }
}

#[test]
fn reads_big_endian_int32() {
    let h = read_header(fixture("ramp_i32_be.nii")).unwrap();
    assert!(h.big_endian);
    let v = read_volume(fixture("ramp_i32_be.nii")).unwrap();
    assert_eq!(v.grid().dims(), [2, 3, 4]);
    assert_eq!(v.grid().spacing(), [0.5, 0.75, 1.25]);
    assert_eq!(
        v.values(),
        (0..24).map(|i| i as f32).collect::<Vec<_>>().as_slice()
    );
}

#[test]
fn reads_float64_ramp() {
    let v = read_volume(fixture("ramp_f64.nii")).unwrap();
    let s = v.grid().spacing();
    assert!((s[0] - 2.0364).abs() < 1e-6 && (s[2] - 3.0).abs() < 1e-12);
    assert_eq!(
        v.values(),
        (0..27)
            .map(|i| i as f32 * 0.25)
            .collect::<Vec<_>>()
            .as_slice()
    );
}

#[test]
fn mask_thresholds_and_reports_odd_values() {
    let (mask, odd) = read_mask_with_report(fixture("mask_012_u8.nii.gz")).unwrap();
    assert_eq!(mask.foreground_count(), 2);
    assert!(mask.get(0, 0, 0) && mask.get(1, 1, 1));
    assert_eq!(odd, [2.0]);
}

#[test]
fn missing_file_is_io_error() {
    assert!(matches!(
        read_volume(fixture("absent.nii")),
        Err(Error::Io { .. })
    ));
}

#[test]
fn gzip_output_has_magic_and_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let grid = Grid3::new([3, 4, 5], [0.9, 1.1, 2.5], [-3.0, 4.0, 1.0]).unwrap();
    let mask = Mask::from_voxels(grid, &[[0, 0, 0], [2, 3, 4], [1, 1, 1]]).unwrap();
    let path = dir.path().join("m.nii.gz");
    write_mask(&mask, &path, true).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(&bytes[..2], &[0x1f, 0x8b]);
    assert_eq!(read_mask(&path).unwrap(), mask);
    let h = read_header(&path).unwrap();
    assert_eq!(h.datatype, Datatype::U8);
    assert_eq!(h.vox_offset, 352);
}

#[test]
fn writes_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let grid = Grid3::unit([8, 8, 8]).unwrap();
    let v = Volume::from_fn(grid, |x, y, z| (x * y) as f32 - z as f32 * 0.5).unwrap();
    let a = dir.path().join("a.nii.gz");
    let b = dir.path().join("b.nii.gz");
    write_volume(&v, &a, true).unwrap();
    write_volume(&v, &b, true).unwrap();
    assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
}

fn value_for(dtype: Datatype) -> BoxedStrategy<f32> {
    match dtype {
        Datatype::U8 => (0u8..=255).prop_map(|v| v as f32).boxed(),
        Datatype::I16 => any::<i16>().prop_map(|v| v as f32).boxed(),
        // Integers beyond 2^24 are not representable in f32 storage.
        Datatype::I32 => (-(1i32 << 24)..=(1 << 24)).prop_map(|v| v as f32).boxed(),
        Datatype::F32 | Datatype::F64 => any::<f32>()
            .prop_filter("finite", |v| v.is_finite())
            .boxed(),
    }
}

fn arb_volume(dtype: Datatype) -> impl Strategy<Value = Volume> {
    (
        (1usize..=16, 1usize..=16, 1usize..=16),
        prop::array::uniform3(0.2f64..5.0),
        prop::array::uniform3(-300.0f64..300.0),
    )
        .prop_flat_map(move |((x, y, z), spacing, origin)| {
            let grid = Grid3::new([x, y, z], spacing, origin).unwrap();
            prop::collection::vec(value_for(dtype), grid.len())
                .prop_map(move |values| Volume::new(grid, values).unwrap())
        })
}

fn round_trip(v: &Volume, dtype: Datatype, gzip: bool) -> Result<(), TestCaseError> {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join(if gzip { "v.nii.gz" } else { "v.nii" });
    write_volume_as(v, &path, dtype, gzip).unwrap();
    let back = read_volume(&path).unwrap();
    prop_assert_eq!(read_header(&path).unwrap().datatype, dtype);
    prop_assert_eq!(back.grid().dims(), v.grid().dims());
    for a in 0..3 {
        prop_assert!((back.grid().spacing()[a] - v.grid().spacing()[a]).abs() <= 1e-6);
        prop_assert!((back.grid().origin()[a] - v.grid().origin()[a]).abs() <= 1e-4);
    }
    let same_bits = back
        .values()
        .iter()
        .zip(v.values())
        .all(|(a, b)| a.to_bits() == b.to_bits() || (*a == 0.0 && *b == 0.0));
    prop_assert!(same_bits);
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn round_trip_u8(v in arb_volume(Datatype::U8), gz in any::<bool>()) { round_trip(&v, Datatype::U8, gz)?; }

    #[test]
    fn round_trip_i16(v in arb_volume(Datatype::I16), gz in any::<bool>()) { round_trip(&v, Datatype::I16, gz)?; }

    #[test]
    fn round_trip_i32(v in arb_volume(Datatype::I32), gz in any::<bool>()) { round_trip(&v, Datatype::I32, gz)?; }

    #[test]
    fn round_trip_f32(v in arb_volume(Datatype::F32), gz in any::<bool>()) { round_trip(&v, Datatype::F32, gz)?; }

    #[test]
    fn round_trip_f64(v in arb_volume(Datatype::F64), gz in any::<bool>()) { round_trip(&v, Datatype::F64, gz)?; }

    #[test]
    fn mask_round_trip(
        dims in (1usize..=16, 1usize..=16, 1usize..=16),
        seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let grid = Grid3::unit([dims.0, dims.1, dims.2]).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mask = Mask::new(grid, (0..grid.len()).map(|_| rng.random_bool(0.3)).collect()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.nii");
        write_mask(&mask, &path, false).unwrap();
        prop_assert_eq!(read_mask(&path).unwrap(), mask);
    }
}
