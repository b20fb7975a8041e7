//! Model-driven augmentation of scarce new-scenario CSI.
//!
//! A sample is split into magnitude and phase. Angular-delay shifting (ADS)
//! moves the magnitude map, circularly in angle and with zero fill in delay,
//! imitating nearby UE positions. Phase randomization (PRS) rotates each delay
//! row by an independent uniform angle. Recombining gives the new samples.

use std::f64::consts::PI;

use ndarray::{Array1, Array2, Zip};
use num_complex::Complex64;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel_data::{AngularDelayCsi, Dataset};
use crate::error::{Error, Result};
use crate::{par, seeds};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    /// Inclusive range of column shifts `j`.
    pub angular_shift_range: (i64, i64),
    /// Inclusive range of row shifts `i`.
    pub delay_shift_range: (i64, i64),
    pub use_ads: bool,
    pub use_prs: bool,
    pub target_size: usize,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            angular_shift_range: (-15, 15),
            delay_shift_range: (-3, 3),
            use_ads: true,
            use_prs: true,
            target_size: 200,
            seed: 0,
        }
    }
}

/// `⌊−n/2⌋ ≤ k ≤ ⌊n/2⌋`.
fn step_bounds(n: usize) -> (i64, i64) {
    let half = (n / 2) as i64;
    (-((n as i64 + 1) / 2), half)
}

fn check_range(name: &str, (lo, hi): (i64, i64), n: usize) -> Result<()> {
    let (min, max) = step_bounds(n);
    if lo > hi || lo < min || hi > max {
        return Err(Error::config(format!(
            "{name} shift range {lo}..={hi} must be ordered and within {min}..={max}"
        )));
    }
    Ok(())
}

impl AugmentConfig {
    pub fn validate(&self, r_d: usize, n_b: usize) -> Result<()> {
        check_range("delay", self.delay_shift_range, r_d)?;
        check_range("angular", self.angular_shift_range, n_b)?;
        if self.target_size == 0 {
            return Err(Error::config("target_size must be positive"));
        }
        Ok(())
    }

    /// Number of `(i, j)` combinations ADS generates per base sample.
    pub fn shifts_per_sample(&self) -> usize {
        if !self.use_ads {
            return 1;
        }
        let span = |(lo, hi): (i64, i64)| (hi - lo + 1).max(0) as usize;
        span(self.delay_shift_range) * span(self.angular_shift_range)
    }
}

/// Elementwise magnitude and phase in `(−π, π]`; zero entries get phase 0.
pub fn split_mag_phase(h: &AngularDelayCsi) -> (Array2<f64>, Array2<f64>) {
    let v = h.values();
    let mag = v.mapv(|z| z.norm());
    let phase = v.mapv(|z| if z == Complex64::new(0.0, 0.0) { 0.0 } else { wrap_phase(z.arg()) });
    (mag, phase)
}

/// `mag ⊙ exp(j·phase)`.
pub fn combine_mag_phase(mag: &Array2<f64>, phase: &Array2<f64>) -> Result<AngularDelayCsi> {
    if mag.dim() != phase.dim() {
        return Err(Error::dim(format!(
            "magnitude {:?} and phase {:?} differ in shape",
            mag.dim(),
            phase.dim()
        )));
    }
    let mut out = Array2::<Complex64>::zeros(mag.dim());
    Zip::from(&mut out)
        .and(mag)
        .and(phase)
        .for_each(|o, &m, &p| *o = Complex64::from_polar(m, p));
    AngularDelayCsi::new(out)
}

/// Wraps an angle to `(−π, π]`.
pub fn wrap_phase(x: f64) -> f64 {
    let r = (x + PI).rem_euclid(2.0 * PI) - PI;
    if r <= -PI {
        r + 2.0 * PI
    } else {
        r
    }
}

/// `mag'[m, n] = mag[m + i, (n + j) mod N_b]` when `0 ≤ m + i < R_d`, else 0.
pub fn magnitude_shift(mag: &Array2<f64>, i: i64, j: i64) -> Result<Array2<f64>> {
    let (r_d, n_b) = mag.dim();
    let (imin, imax) = step_bounds(r_d);
    let (jmin, jmax) = step_bounds(n_b);
    if i < imin || i > imax || j < jmin || j > jmax {
        return Err(Error::domain(format!(
            "shift ({i}, {j}) outside {imin}..={imax} × {jmin}..={jmax}"
        )));
    }
    Ok(Array2::from_shape_fn((r_d, n_b), |(m, n)| {
        let src = m as i64 + i;
        if src < 0 || src >= r_d as i64 {
            0.0
        } else {
            mag[[src as usize, (n as i64 + j).rem_euclid(n_b as i64) as usize]]
        }
    }))
}

/// `phase'[m, n] = wrap(phase[m, n] − θ_m)` for given per-row angles.
pub fn phase_rotate_rows(phase: &Array2<f64>, theta: &Array1<f64>) -> Result<Array2<f64>> {
    if theta.len() != phase.nrows() {
        return Err(Error::dim(format!(
            "{} row angles for a phase map with {} rows",
            theta.len(),
            phase.nrows()
        )));
    }
    Ok(Array2::from_shape_fn(phase.dim(), |(m, n)| wrap_phase(phase[[m, n]] - theta[m])))
}

/// Per-row phase randomization with `θ_m ~ U(0, 2π)`.
pub fn phase_randomize<R: Rng + ?Sized>(phase: &Array2<f64>, rng: &mut R) -> Array2<f64> {
    let theta = Array1::from_shape_fn(phase.nrows(), |_| rng.random_range(0.0..2.0 * PI));
    phase_rotate_rows(phase, &theta).expect("one angle per row")
}

/// One augmented sample: which base sample and which ADS shift.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct PoolEntry {
    base: usize,
    i: i64,
    j: i64,
}

fn pool(n_base: usize, cfg: &AugmentConfig) -> Vec<PoolEntry> {
    let (di, dj) = if cfg.use_ads {
        (cfg.delay_shift_range, cfg.angular_shift_range)
    } else {
        ((0, 0), (0, 0))
    };
    let mut out = Vec::with_capacity(n_base * cfg.shifts_per_sample());
    for base in 0..n_base {
        for i in di.0..=di.1 {
            for j in dj.0..=dj.1 {
                out.push(PoolEntry { base, i, j });
            }
        }
    }
    out
}

/// Size of the ADS pool before filling or subsampling.
pub fn pool_size(n_base: usize, cfg: &AugmentConfig) -> usize {
    n_base * cfg.shifts_per_sample()
}

/// Builds exactly `cfg.target_size` samples from `base`.
///
/// The pool holds every configured shift of every base sample (just the base
/// samples when ADS is off). A pool larger than the target is subsampled
/// uniformly without replacement. A smaller one is used whole and then cycled
/// until the target is reached; with PRS on every output, including the
/// repeats, gets its own phase draw.
pub fn augment_dataset(base: &Dataset, cfg: &AugmentConfig) -> Result<Dataset> {
    let (r_d, n_b) = base
        .sample_shape()
        .ok_or_else(|| Error::domain("cannot augment an empty dataset"))?;
    cfg.validate(r_d, n_b)?;
    if cfg.target_size < base.len() {
        return Err(Error::config(format!(
            "target_size {} is smaller than the base dataset ({} samples)",
            cfg.target_size,
            base.len()
        )));
    }
    let pool = pool(base.len(), cfg);
    let chosen: Vec<PoolEntry> = if pool.len() >= cfg.target_size {
        let mut rng = ChaCha8Rng::seed_from_u64(seeds::named(cfg.seed, "subsample"));
        let mut picks = index::sample(&mut rng, pool.len(), cfg.target_size).into_vec();
        picks.sort_unstable();
        picks.into_iter().map(|k| pool[k]).collect()
    } else {
        (0..cfg.target_size).map(|k| pool[k % pool.len()]).collect()
    };
    let split: Vec<_> = base.samples.iter().map(split_mag_phase).collect();
    let prs_seed = seeds::named(cfg.seed, "prs");
    let samples = par::map_indexed(chosen.len(), |k| {
        let e = chosen[k];
        let (mag, phase) = &split[e.base];
        let mag = magnitude_shift(mag, e.i, e.j)?;
        let phase = if cfg.use_prs {
            let mut rng = ChaCha8Rng::seed_from_u64(seeds::indexed(prs_seed, k as u64));
            phase_randomize(phase, &mut rng)
        } else {
            phase.clone()
        };
        combine_mag_phase(&mag, &phase)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let mut out = Dataset::new(
        format!("{}-aug{}", base.name, cfg.target_size),
        base.split,
        base.scenario.clone(),
        samples,
    )?;
    out.provenance = Some(serde_json::json!({
        "base_dataset": base.name,
        "base_size": base.len(),
        "pool_size": pool.len(),
        "augment": cfg,
    }));
    Ok(out)
}
