//! Acceptance suite. Each test prints one `[PASS]` / `[FAIL]` line.
//!
//! Run with `cargo test --release --test acceptance -- --nocapture` to see the
//! lines; the three training experiments take several minutes on one core.

use std::f64::consts::PI;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use csi_transnet::augment::{augment_dataset, magnitude_shift, AugmentConfig};
use csi_transnet::channel_data::*;
use csi_transnet::harness::{nmse, to_db};
use csi_transnet::nn::{ParamSet, Spatial};
use csi_transnet::spherical_codec::encode;
use csi_transnet::transnet::*;
use csi_transnet::unfold_decoder::*;
use ndarray::{array, Array1, Array2};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn verdict(name: &str, pass: bool, detail: String) {
    println!("[{}] {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "{name}: {detail}");
}

fn random_complex(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<Complex64> {
    Array2::from_shape_fn((r, c), |_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
}

fn fro(a: &Array2<Complex64>) -> f64 {
    a.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

// Shared desk-scale setting.

const SEED: u64 = 2024;
const N_TRAIN: usize = 2000;
const N_TEST: usize = 200;
const CR: f64 = 0.25;

fn dims() -> ChannelDims {
    ChannelDims::default()
}

fn outdoor() -> ScenarioConfig {
    ScenarioConfig {
        seed: SEED,
        angle_spread: PI / 6.0,
        ..ScenarioConfig::default()
    }
}

fn desk_arch() -> DecoderArch {
    DecoderArch {
        n_iter: 3,
        channels: 8,
        ..DecoderArch::new(dims().r_d, dims().n_b, CR)
    }
}

fn desk_train() -> TrainConfig {
    TrainConfig {
        epochs: 4,
        batch_size: 64,
        learning_rate: 3e-3,
        gamma: 0.01,
        seed: SEED,
    }
}

struct Anchor {
    train: Dataset,
    test: Dataset,
    params: DecoderParams<f32>,
    nmse_db: f64,
    elapsed: Duration,
}

fn anchor() -> &'static Anchor {
    static ANCHOR: OnceLock<Anchor> = OnceLock::new();
    ANCHOR.get_or_init(|| {
        let t0 = Instant::now();
        let train = generate_dataset(&outdoor(), &dims(), Split::Train, N_TRAIN).unwrap();
        let test = generate_dataset(&outdoor(), &dims(), Split::Test, N_TEST).unwrap();
        let (params, _) = train_anchor(&train, desk_arch(), &desk_train()).unwrap();
        let est = reconstruct(&params, &test.samples).unwrap();
        let nmse_db = to_db(nmse(&test.samples, &est).unwrap());
        Anchor {
            train,
            test,
            params,
            nmse_db,
            elapsed: t0.elapsed(),
        }
    })
}

#[test]
fn translation_module_parameter_count() {
    let n = TranslationNet::<f32>::translation(0).param_count();
    verdict(
        "translation-module parameters",
        n == 1830,
        format!("{n} parameters (target 1830, band [1700, 1900])"),
    );
}

/// `Σ_m Σ_n H[m, n] e^{+j2πmk/N_f} e^{−j2πnl/N_b} / sqrt(N_f N_b)`.
fn dft_oracle(h: &Array2<Complex64>) -> Array2<Complex64> {
    let (n_f, n_b) = h.dim();
    Array2::from_shape_fn((n_f, n_b), |(k, l)| {
        let mut acc = Complex64::new(0.0, 0.0);
        for m in 0..n_f {
            for n in 0..n_b {
                let a = 2.0 * PI * ((m * k) as f64 / n_f as f64 - (n * l) as f64 / n_b as f64);
                acc += h[[m, n]] * Complex64::from_polar(1.0, a);
            }
        }
        acc / ((n_f * n_b) as f64).sqrt()
    })
}

#[test]
fn dft_matches_brute_force() {
    let d = ChannelDims::new(8, 4, 8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let (mut worst, mut worst_rt, mut worst_norm) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..100 {
        let v = random_complex(&mut rng, 8, 4);
        let h = SpatialFrequencyCsi::new(v.clone()).unwrap();
        let ad = to_angular_delay(&h, d).unwrap();
        let want = dft_oracle(&v);
        worst = worst.max(fro(&(ad.values() - &want)) / fro(&want));
        let back = from_angular_delay(&ad, d).unwrap();
        worst_rt = worst_rt.max(fro(&(back.values() - &v)) / fro(&v));
        worst_norm = worst_norm.max((ad.frobenius_norm() - fro(&v)).abs() / fro(&v));
    }
    verdict(
        "DFT vs double-sum oracle",
        worst < 1e-10 && worst_rt < 1e-10 && worst_norm < 1e-10,
        format!("max rel err {worst:.1e}, roundtrip {worst_rt:.1e}, norm {worst_norm:.1e} (tol 1e-10, 100 draws of 8x4)"),
    );
}

#[test]
fn shift_roundtrip_and_ads_example() {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut exact = true;
    for _ in 0..200 {
        let (r, c) = (rng.random_range(1..12), rng.random_range(1..12));
        let h = AngularDelayCsi::new(random_complex(&mut rng, r, c)).unwrap();
        let s = ShiftSteps::new(rng.random_range(-30..30), rng.random_range(-30..30), r, c);
        exact &= apply_shift(&apply_shift(&h, s), s.inverse(r, c)) == h;
    }
    let mag = array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0], [7.0, 8.0, 9.0]];
    let want = array![[5.0, 6.0, 4.0], [8.0, 9.0, 7.0], [0.0, 0.0, 0.0]];
    let got = magnitude_shift(&mag, 1, 1).unwrap();
    verdict(
        "circular shift roundtrip and 3x3 ADS",
        exact && got == want,
        format!("200 bit-exact roundtrips: {exact}; ADS(1, 1) of 1..9 = {:?}", got.into_raw_vec_and_offset().0),
    );
}

#[test]
fn gradient_check_tiny_decoder() {
    let arch = DecoderArch {
        n_iter: 2,
        channels: 2,
        ..DecoderArch::new(4, 4, 0.25)
    };
    let mut params = DecoderParams::<f64>::init(arch, SEED).unwrap();
    for b in &mut params.blocks {
        b.theta_raw = -1.5;
        b.rho = 0.8;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut x = Array2::<f64>::from_shape_fn((3, arch.vector_len()), |_| rng.random_range(-1.0..1.0));
    for mut row in x.rows_mut() {
        let n = row.dot(&row).sqrt();
        row /= n;
    }
    let gamma = 0.3;
    let (_, grads) = loss_and_grad(x.view(), &params, gamma).unwrap();
    let analytic = grads.to_flat();
    let base = params.to_flat();
    let h = 1e-6;
    let mut off = 0;
    let mut worst = (String::new(), 0.0f64);
    for (name, shape) in params.layout() {
        let len: usize = shape.iter().product();
        let num: Vec<f64> = (off..off + len)
            .map(|k| {
                let mut probe = params.clone();
                let mut v = base.clone();
                v[k] = base[k] + h;
                probe.assign_flat(&v).unwrap();
                let up = loss_total(x.view(), &probe, gamma).unwrap().total;
                v[k] = base[k] - h;
                probe.assign_flat(&v).unwrap();
                let down = loss_total(x.view(), &probe, gamma).unwrap().total;
                (up - down) / (2.0 * h)
            })
            .collect();
        let ana = &analytic[off..off + len];
        let err = ana.iter().zip(&num).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale = num.iter().map(|b| b * b).sum::<f64>().sqrt().max(1e-12);
        if err / scale >= worst.1 {
            worst = (name, err / scale);
        }
        off += len;
    }
    verdict(
        "finite-difference gradient check",
        worst.1 < 1e-4 && off == analytic.len(),
        format!("worst group {} rel err {:.2e} (tol 1e-4, incl. phi, rho, theta)", worst.0, worst.1),
    );
}

#[test]
fn proximal_identity_and_nonexpansive_soft() {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let zero = IterationBlockParams::<f64>::zeros(4);
    let mut identity = true;
    let mut nonexpansive = true;
    for _ in 0..1000 {
        let r = Array1::from_shape_fn(32, |_| rng.random_range(-3.0..3.0));
        identity &= proximal_block(r.view(), &zero, Spatial::new(4, 4)).unwrap() == r;
        let a = Array1::<f64>::from_shape_fn(16, |_| rng.random_range(-5.0..5.0));
        let b = Array1::<f64>::from_shape_fn(16, |_| rng.random_range(-5.0..5.0));
        let theta = rng.random_range(0.0..3.0);
        let d_in: f64 = (&a - &b).mapv(|v| v * v).sum().sqrt();
        let d_out: f64 = (soft(&a, theta) - soft(&b, theta)).mapv(|v| v * v).sum().sqrt();
        nonexpansive &= d_out <= d_in + 1e-12;
    }
    verdict(
        "proximal identity and soft-threshold nonexpansiveness",
        identity && nonexpansive,
        format!("1000 draws: zero kernels give identity {identity}, nonexpansive {nonexpansive}"),
    );
}

#[test]
fn desk_scale_anchor_training() {
    let a = anchor();
    let minutes = a.elapsed.as_secs_f64() / 60.0;
    verdict(
        "desk-scale anchor training",
        a.nmse_db <= -10.0 && minutes <= 30.0,
        format!(
            "held-out NMSE {:.2} dB (target <= -10) in {minutes:.1} min (limit 30); {} train / {} test, N_f=256, N_I=3, CR=1/4",
            a.nmse_db,
            a.train.len(),
            a.test.len()
        ),
    );
}

#[test]
fn augmentation_beats_repetition() {
    let t0 = Instant::now();
    let train = generate_dataset(&outdoor(), &dims(), Split::Train, 100).unwrap();
    let test = generate_dataset(&outdoor(), &dims(), Split::Test, N_TEST).unwrap();
    let expand = |use_ads, use_prs| {
        let cfg = AugmentConfig {
            use_ads,
            use_prs,
            target_size: N_TRAIN,
            seed: SEED,
            ..AugmentConfig::default()
        };
        augment_dataset(&train, &cfg).unwrap()
    };
    let score = |ds: &Dataset| {
        let (p, _) = train_anchor(ds, desk_arch(), &desk_train()).unwrap();
        to_db(nmse(&test.samples, &reconstruct(&p, &test.samples).unwrap()).unwrap())
    };
    let aug = score(&expand(true, true));
    let rep = score(&expand(false, false));
    let minutes = t0.elapsed().as_secs_f64() / 60.0;
    verdict(
        "augmentation A/B",
        rep - aug >= 2.0 && minutes < 60.0,
        format!(
            "ADS+PRS {aug:.2} dB vs repetition {rep:.2} dB, gain {:.2} dB (target >= 2) in {minutes:.1} min",
            rep - aug
        ),
    );
}

const PLANTED: (i64, i64) = (3, 5);

/// `Σ ‖f_sh(H) − decode(encode(f_sh(H)))‖²`, one sample at a time.
fn brute_force_objective(samples: &[AngularDelayCsi], anchor: &DecoderParams<f32>, s: ShiftSteps) -> f64 {
    samples
        .iter()
        .map(|h| {
            let shifted = circular_shift(h, s.i as i64, s.j as i64);
            let rec = decode(&encode(&shifted, &anchor.phi).unwrap(), anchor).unwrap();
            fro(&(shifted.values() - rec.values())).powi(2)
        })
        .sum()
}

#[test]
fn planted_shift_transfer() {
    let a = anchor();
    let t0 = Instant::now();
    let before = a.params.clone();
    let scenario_b = ScenarioConfig {
        seed: SEED + 1,
        ..outdoor().planted_shift("outdoor-shifted", PLANTED.0, PLANTED.1, &dims())
    };
    let few = generate_dataset(&scenario_b, &dims(), Split::Train, 20).unwrap();
    let test = generate_dataset(&scenario_b, &dims(), Split::Test, N_TEST).unwrap();

    let (r_d, n_b) = (dims().r_d, dims().n_b);
    let grid = ShiftGrid::full(r_d, n_b);
    let found = search_shift_steps(&few.samples, &a.params, &grid, SEARCH_SAMPLE_CAP).unwrap();
    let mut best = (ShiftSteps::default(), f64::INFINITY);
    for i in 0..r_d {
        for j in 0..n_b {
            let s = ShiftSteps { i, j };
            let v = brute_force_objective(&few.samples, &a.params, s);
            if v < best.1 {
                best = (s, v);
            }
        }
    }
    let compensating = ShiftSteps::new(-PLANTED.0, -PLANTED.1, r_d, n_b);

    let aug = augment_dataset(
        &few,
        &AugmentConfig {
            target_size: 200,
            seed: SEED,
            ..AugmentConfig::default()
        },
    )
    .unwrap();
    let tcfg = TrainConfig {
        epochs: 30,
        learning_rate: 3e-3,
        seed: SEED,
        ..TrainConfig::default()
    };
    let (plugin, _) = train_transnet(&aug, &a.params, found, &tcfg).unwrap();
    let direct = to_db(nmse(&test.samples, &reconstruct(&a.params, &test.samples).unwrap()).unwrap());
    let adapted = to_db(nmse(&test.samples, &feedback_batch(&test.samples, &plugin, &a.params).unwrap()).unwrap());
    let unchanged = before.to_flat().iter().zip(a.params.to_flat()).all(|(x, y)| x.to_bits() == y.to_bits());
    let minutes = t0.elapsed().as_secs_f64() / 60.0;
    verdict(
        "planted-shift transfer",
        found == best.0 && found == compensating && direct - adapted >= 2.0 && unchanged && minutes < 60.0,
        format!(
            "search ({}, {}) vs brute force ({}, {}) vs planted inverse ({}, {}); transnet-aug200 {adapted:.2} dB vs direct {direct:.2} dB, gain {:.2} dB (target >= 2); anchor bit-unchanged {unchanged}; {minutes:.1} min",
            found.i, found.j, best.0.i, best.0.j, compensating.i, compensating.j,
            direct - adapted
        ),
    );
}

#[test]
fn spherical_scale_invariance() {
    let params = DecoderParams::<f32>::init(desk_arch(), SEED).unwrap();
    let test = generate_dataset(&outdoor(), &dims(), Split::Test, 20).unwrap();
    let mut worst = 0.0f64;
    for h in &test.samples {
        let base = decode(&encode(h, &params.phi).unwrap(), &params).unwrap();
        for a in [1e-4, 0.37, 3.0, 2.5e3] {
            let scaled = decode(&encode(&h.scaled(a), &params.phi).unwrap(), &params).unwrap();
            let want = base.scaled(a);
            worst = worst.max(fro(&(scaled.values() - want.values())) / fro(want.values()));
        }
    }
    verdict(
        "spherical scale invariance",
        worst < 1e-5,
        format!("max relative deviation {worst:.2e} over 20 samples x 4 scales (tol 1e-5)"),
    );
}
