use std::f64::consts::PI;

use csi_transnet::augment::*;
use csi_transnet::channel_data::{generate_dataset, AngularDelayCsi, ChannelDims, Dataset, ScenarioConfig, Split};
use csi_transnet::transnet::circular_shift;
use csi_transnet::Error;
use ndarray::{array, Array1, Array2};
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_csi(seed: u64, r: usize, c: usize) -> AngularDelayCsi {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    AngularDelayCsi::new(Array2::from_shape_fn((r, c), |_| {
        Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
    }))
    .unwrap()
}

fn base_dataset(n: usize) -> Dataset {
    let dims = ChannelDims::new(32, 32, 8).unwrap();
    let cfg = ScenarioConfig {
        max_delay_bins: 4.0,
        delay_offset_bins: 2.0,
        ..ScenarioConfig::default()
    };
    generate_dataset(&cfg, &dims, Split::Train, n).unwrap()
}

#[test]
fn split_examples() {
    let one = AngularDelayCsi::new(array![[Complex64::new(1.0, 0.0)]]).unwrap();
    assert_eq!(split_mag_phase(&one), (array![[1.0]], array![[0.0]]));
    let (m, p) = split_mag_phase(&AngularDelayCsi::new(array![[Complex64::new(0.0, 2.0)]]).unwrap());
    assert_eq!(m, array![[2.0]]);
    assert!((p[[0, 0]] - PI / 2.0).abs() < 1e-15);
    let (_, p) = split_mag_phase(&AngularDelayCsi::new(array![[Complex64::new(-1.0, 0.0), Complex64::new(0.0, 0.0)]]).unwrap());
    assert_eq!(p, array![[PI, 0.0]]);
}

proptest! {
    #[test]
    fn split_recombines(seed in 0u64..300) {
        let h = random_csi(seed, 5, 6);
        let (m, p) = split_mag_phase(&h);
        prop_assert!(m.iter().all(|&v| v >= 0.0));
        prop_assert!(p.iter().all(|&v| v > -PI && v <= PI));
        let back = combine_mag_phase(&m, &p).unwrap();
        let err: f64 = back.values().iter().zip(h.values()).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
        prop_assert!(err < 1e-6);
    }

    #[test]
    fn shift_matches_loop_oracle(seed in 0u64..300, i in -2i64..=2, j in -2i64..=2) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mag = Array2::from_shape_fn((4, 4), |_| rng.random_range(0.0..1.0));
        let got = magnitude_shift(&mag, i, j).unwrap();
        for m in 0..4i64 {
            for n in 0..4i64 {
                let expect = if m + i >= 0 && m + i < 4 {
                    let mut col = n + j;
                    while col < 0 { col += 4; }
                    while col >= 4 { col -= 4; }
                    mag[[(m + i) as usize, col as usize]]
                } else {
                    0.0
                };
                prop_assert_eq!(got[[m as usize, n as usize]], expect);
            }
        }
        let fro = |a: &Array2<f64>| a.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!(fro(&got) <= fro(&mag) + 1e-12);
    }

    #[test]
    fn row_only_shift_is_column_rotation(seed in 0u64..200, j in -4i64..=4) {
        let h = random_csi(seed, 6, 8);
        let (m, _) = split_mag_phase(&h);
        let got = magnitude_shift(&m, 0, j).unwrap();
        let rotated = split_mag_phase(&circular_shift(&h, 0, -j)).0;
        prop_assert_eq!(got.clone(), rotated);
        let fro = |a: &Array2<f64>| a.iter().map(|v| v * v).sum::<f64>();
        prop_assert!((fro(&got) - fro(&m)).abs() < 1e-12);
    }

    #[test]
    fn prs_keeps_magnitudes_and_rotates_rows(seed in 0u64..300) {
        let h = random_csi(seed, 5, 6);
        let (m, p) = split_mag_phase(&h);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
        let p2 = phase_randomize(&p, &mut rng);
        let aug = combine_mag_phase(&m, &p2).unwrap();
        for (a, b) in aug.values().iter().zip(h.values()) {
            prop_assert!((a.norm() - b.norm()).abs() < 1e-6);
        }
        for r in 0..5 {
            let d0 = p2[[r, 0]] - p[[r, 0]];
            for c in 1..6 {
                let d = p2[[r, c]] - p[[r, c]];
                let gap = (d - d0).rem_euclid(2.0 * PI);
                prop_assert!(gap.min(2.0 * PI - gap) < 1e-9);
            }
        }
    }
}

#[test]
fn shift_examples() {
    let mag = array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0], [7.0, 8.0, 9.0]];
    assert_eq!(magnitude_shift(&mag, 0, 0).unwrap(), mag);
    assert_eq!(
        magnitude_shift(&mag, 1, 0).unwrap(),
        array![[4.0, 5.0, 6.0], [7.0, 8.0, 9.0], [0.0, 0.0, 0.0]]
    );
    assert!(matches!(magnitude_shift(&mag, 2, 0), Err(Error::Domain(_))));
    assert!(matches!(magnitude_shift(&mag, 0, -3), Err(Error::Domain(_))));
}

#[test]
fn pinned_pi_rotation_negates() {
    let h = random_csi(4, 4, 5);
    let (m, p) = split_mag_phase(&h);
    let p2 = phase_rotate_rows(&p, &Array1::from_elem(4, PI)).unwrap();
    let aug = combine_mag_phase(&m, &p2).unwrap();
    for (a, b) in aug.values().iter().zip(h.values()) {
        assert!((a + b).norm() < 1e-12);
    }
}

#[test]
fn degenerate_ads_is_repetition() {
    let base = base_dataset(4);
    let cfg = AugmentConfig {
        angular_shift_range: (0, 0),
        delay_shift_range: (0, 0),
        use_ads: true,
        use_prs: false,
        target_size: 12,
        seed: 3,
    };
    let out = augment_dataset(&base, &cfg).unwrap();
    assert_eq!(out.len(), 12);
    for (k, s) in out.samples.iter().enumerate() {
        let src = &base.samples[k % 4];
        for (a, b) in s.values().iter().zip(src.values()) {
            assert!((a - b).norm() < 1e-6);
        }
    }
    assert!(out.provenance.is_some());
}

#[test]
fn pool_counting() {
    let cfg = AugmentConfig::default();
    assert_eq!(cfg.shifts_per_sample(), 7 * 31);
    assert_eq!(pool_size(100, &cfg), 21_700);
    let no_ads = AugmentConfig {
        use_ads: false,
        ..cfg
    };
    assert_eq!(pool_size(100, &no_ads), 100);
}

#[test]
fn output_size_is_exact_and_deterministic() {
    let base = base_dataset(3);
    for (ads, prs, target) in [(true, true, 50), (true, false, 1000), (false, true, 7), (false, false, 3), (true, true, 200)] {
        let cfg = AugmentConfig {
            angular_shift_range: (-2, 2),
            delay_shift_range: (-1, 1),
            use_ads: ads,
            use_prs: prs,
            target_size: target,
            seed: 11,
        };
        let a = augment_dataset(&base, &cfg).unwrap();
        assert_eq!(a.len(), target);
        assert_eq!(a, augment_dataset(&base, &cfg).unwrap());
    }
}

#[test]
fn prs_fill_draws_fresh_phases() {
    let base = base_dataset(2);
    let cfg = AugmentConfig {
        use_ads: false,
        use_prs: true,
        target_size: 4,
        ..AugmentConfig::default()
    };
    let out = augment_dataset(&base, &cfg).unwrap();
    assert_ne!(out.samples[0], out.samples[2]);
    for (a, b) in out.samples[0].values().iter().zip(out.samples[2].values()) {
        assert!((a.norm() - b.norm()).abs() < 1e-5);
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let base = base_dataset(5);
    let small = AugmentConfig {
        target_size: 4,
        ..AugmentConfig::default()
    };
    assert!(matches!(augment_dataset(&base, &small), Err(Error::Config(_))));
    let wide = AugmentConfig {
        delay_shift_range: (-5, 3),
        ..AugmentConfig::default()
    };
    assert!(matches!(augment_dataset(&base, &wide), Err(Error::Config(_))));
    let empty = base.take(0, "empty");
    assert!(augment_dataset(&empty, &AugmentConfig::default()).is_err());
}
