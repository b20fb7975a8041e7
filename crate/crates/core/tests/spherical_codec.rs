use csi_transnet::channel_data::{AngularDelayCsi, ChannelDims};
use csi_transnet::spherical_codec::*;
use csi_transnet::Error;
use ndarray::Array2;
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

#[test]
fn payload_budget() {
    let n = ChannelDims::default().vector_len();
    assert_eq!(n, 2048);
    assert_eq!(payload_len(0.25, n).unwrap(), 512);
    assert_eq!(measurement_len(0.25, n).unwrap(), 511);
    assert_eq!(measurement_len(1.0 / 32.0, n).unwrap(), 63);
    assert!(matches!(payload_len(0.0, n), Err(Error::Config(_))));
    assert!(matches!(payload_len(1.5, n), Err(Error::Config(_))));
    assert!(payload_len(0.25, 4).is_err());
}

#[test]
fn vector_layout_is_real_block_then_imaginary_block() {
    let h = AngularDelayCsi::new(ndarray::array![
        [Complex64::new(1.0, 5.0), Complex64::new(2.0, 6.0)],
        [Complex64::new(3.0, 7.0), Complex64::new(4.0, 8.0)]
    ])
    .unwrap();
    let x = vectorize::<f64>(&h);
    assert_eq!(x.to_vec(), [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
    assert_eq!(devectorize(x.view(), 2, 2).unwrap(), h);
    assert!(devectorize(x.view(), 3, 2).is_err());
}

#[test]
fn encode_against_explicit_sum() {
    let h = random_csi(3, 4, 4);
    let phi = MeasurementMatrix::<f64>::gaussian(7, 32, 11, true);
    let c = encode(&h, &phi).unwrap();
    let p = h.values().iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    assert!((c.p - p).abs() < 1e-12);
    let mut x = Vec::new();
    x.extend(h.values().iter().map(|v| v.re / p));
    x.extend(h.values().iter().map(|v| v.im / p));
    for (r, &y) in c.y.iter().enumerate() {
        let want: f64 = (0..32).map(|k| phi.phi[[r, k]] * x[k]).sum();
        assert!((y - want).abs() < 1e-12);
    }
    assert_eq!(c.payload_len(), 8);
}

proptest! {
    #[test]
    fn measurements_ignore_scale(seed in 0u64..500, a in 1e-3f64..1e3) {
        let h = random_csi(seed, 4, 8);
        let phi = MeasurementMatrix::<f64>::gaussian(15, 64, seed, false);
        let c1 = encode(&h, &phi).unwrap();
        let c2 = encode(&h.scaled(a), &phi).unwrap();
        prop_assert!((c2.p - a * c1.p).abs() <= 1e-12 * a * c1.p);
        for (u, v) in c1.y.iter().zip(c2.y.iter()) {
            prop_assert!((u - v).abs() < 1e-10);
        }
    }

    #[test]
    fn codeword_bytes_roundtrip(seed in 0u64..500, len in 1usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = Codeword::<f32> {
            y: ndarray::Array1::from_shape_fn(len, |_| rng.random_range(-1.0..1.0)),
            p: rng.random_range(0.0..10.0),
        };
        let bytes = c.to_bytes();
        prop_assert_eq!(bytes.len(), 4 + 4 * (len + 1));
        prop_assert_eq!(Codeword::<f32>::from_bytes(&bytes).unwrap(), c);
        prop_assert!(Codeword::<f32>::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }
}

#[test]
fn zero_channel_is_safe() {
    let z = AngularDelayCsi::zeros(2, 3);
    let (p, u) = spherical_split(&z);
    assert_eq!(p, 0.0);
    assert_eq!(u, z);
    let phi = MeasurementMatrix::<f64>::gaussian(3, 12, 0, true);
    let c = encode(&z, &phi).unwrap();
    assert!(c.y.iter().all(|&v| v == 0.0));
    assert!(matches!(spherical_merge(-1.0, &u), Err(Error::Domain(_))));
}
