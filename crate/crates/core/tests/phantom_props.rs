use std::f64::consts::PI;

use lesionseg::phantom::{generate_phantom, PhantomSpec};
use lesionseg::{component_stats, label_components, Connectivity};

fn spec(seed: u64) -> PhantomSpec {
    PhantomSpec {
        dims: [64, 64, 64],
        spacing: [2.0, 2.0, 2.0],
        n_lesions: 3,
        lesion_radius_range_mm: (3.0, 6.0),
        seed,
        ..PhantomSpec::default()
    }
}

#[test]
fn lesion_volumes_match_ellipsoid_formula() {
    for seed in 0..10 {
        let p = generate_phantom(&spec(seed)).unwrap();
        let labels = label_components(&p.gt, Connectivity::TwentySix);
        assert_eq!(labels.count(), 3);
        let stats = component_stats(&labels, p.gt.grid()).unwrap();
        for lesion in &p.lesions {
            let [a, b, c] = lesion.radius_mm;
            let analytic = 4.0 / 3.0 * PI * a * b * c / p.gt.grid().voxel_volume_mm3();
            let ratio = lesion.voxels as f64 / analytic;
            assert!(
                (0.8..=1.2).contains(&ratio),
                "seed {seed}: {} voxels vs {analytic:.1}",
                lesion.voxels
            );
            let idx =
                p.gt.grid()
                    .continuous_index(lesion.center_mm)
                    .map(|v| v.round() as usize);
            let id = labels.labels()[p.gt.grid().linearize(idx[0], idx[1], idx[2])];
            assert_eq!(stats[id as usize - 1].voxels as usize, lesion.voxels);
        }
    }
}

#[test]
fn pet_contrast_and_ct_smoothness() {
    let s = PhantomSpec {
        noise_sigma: 0.0,
        ..spec(3)
    };
    let p = generate_phantom(&s).unwrap();
    for (i, &inside) in p.gt.bits().iter().enumerate() {
        let want = if inside { 9.0 } else { 1.0 };
        assert_eq!(p.pet.values()[i], want);
    }
    let [nx, _, _] = p.ct.grid().dims();
    let max_step =
        p.ct.values()
            .windows(2)
            .enumerate()
            .filter(|(i, _)| (i + 1) % nx != 0)
            .map(|(_, w)| (w[1] - w[0]).abs())
            .fold(0.0f32, f32::max);
    assert!(max_step < 50.0, "{max_step}");
}

#[test]
fn bit_identical_per_seed() {
    let a = generate_phantom(&spec(77)).unwrap();
    let b = generate_phantom(&spec(77)).unwrap();
    assert!(a
        .pet
        .values()
        .iter()
        .zip(b.pet.values())
        .all(|(x, y)| x.to_bits() == y.to_bits()));
    assert_eq!(a, b);
}
