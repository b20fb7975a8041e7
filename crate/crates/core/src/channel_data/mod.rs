//! Synthetic multipath CSI, domain transforms and dataset persistence.

mod dataset;
mod dft;

use std::f64::consts::PI;

use ndarray::Array2;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub use dataset::{generate_dataset, load_dataset, save_dataset, Dataset, DatasetManifest, Split};
pub use dft::{from_angular_delay, to_angular_delay, DftPlan};

use crate::error::{Error, Result};
use crate::seeds;

/// Subcarrier count, antenna count and retained delay rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelDims {
    pub n_f: usize,
    pub n_b: usize,
    pub r_d: usize,
}

impl ChannelDims {
    pub fn new(n_f: usize, n_b: usize, r_d: usize) -> Result<Self> {
        let d = ChannelDims { n_f, n_b, r_d };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_f == 0 || self.n_b == 0 || self.r_d == 0 {
            return Err(Error::config("channel dimensions must be positive"));
        }
        if self.r_d > self.n_f {
            return Err(Error::config(format!(
                "r_d = {} exceeds n_f = {}",
                self.r_d, self.n_f
            )));
        }
        Ok(())
    }

    /// Length of the real CSI vector, `2 · R_d · N_b`.
    pub fn vector_len(&self) -> usize {
        2 * self.r_d * self.n_b
    }
}

impl Default for ChannelDims {
    fn default() -> Self {
        ChannelDims {
            n_f: 256,
            n_b: 32,
            r_d: 32,
        }
    }
}

fn check_finite(m: &Array2<Complex64>) -> Result<()> {
    if m.iter().all(|v| v.re.is_finite() && v.im.is_finite()) {
        Ok(())
    } else {
        Err(Error::domain("CSI contains non-finite entries"))
    }
}

fn frobenius(m: &Array2<Complex64>) -> f64 {
    m.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

/// Channel matrix over subcarriers × gNB antennas.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialFrequencyCsi {
    values: Array2<Complex64>,
}

impl SpatialFrequencyCsi {
    pub fn new(values: Array2<Complex64>) -> Result<Self> {
        check_finite(&values)?;
        Ok(SpatialFrequencyCsi { values })
    }

    pub fn values(&self) -> &Array2<Complex64> {
        &self.values
    }

    pub fn into_values(self) -> Array2<Complex64> {
        self.values
    }

    pub fn frobenius_norm(&self) -> f64 {
        frobenius(&self.values)
    }
}

/// Truncated angular-delay CSI, `R_d` delay rows × `N_b` angular columns.
#[derive(Debug, Clone, PartialEq)]
pub struct AngularDelayCsi {
    values: Array2<Complex64>,
}

impl AngularDelayCsi {
    pub fn new(values: Array2<Complex64>) -> Result<Self> {
        check_finite(&values)?;
        Ok(AngularDelayCsi { values })
    }

    pub fn zeros(r_d: usize, n_b: usize) -> Self {
        AngularDelayCsi {
            values: Array2::zeros((r_d, n_b)),
        }
    }

    pub(crate) fn from_values_unchecked(values: Array2<Complex64>) -> Self {
        AngularDelayCsi { values }
    }

    pub fn values(&self) -> &Array2<Complex64> {
        &self.values
    }

    pub fn into_values(self) -> Array2<Complex64> {
        self.values
    }

    /// `(rows, cols)` = `(R_d, N_b)`.
    pub fn shape(&self) -> (usize, usize) {
        self.values.dim()
    }

    pub fn frobenius_norm(&self) -> f64 {
        frobenius(&self.values)
    }

    pub fn energy(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum()
    }

    pub fn scaled(&self, a: f64) -> Self {
        AngularDelayCsi {
            values: self.values.mapv(|v| v * a),
        }
    }

    /// Rounds every component to the nearest `f32`, the on-disk precision.
    pub fn to_f32_precision(&self) -> Self {
        AngularDelayCsi {
            values: self
                .values
                .mapv(|v| Complex64::new(v.re as f32 as f64, v.im as f32 as f64)),
        }
    }
}

/// One propagation path of the synthetic channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathParams {
    /// Delay in units of delay bins (may be fractional).
    pub delay_bins: f64,
    /// Departure angle in radians.
    pub angle: f64,
    pub gain: Complex64,
}

/// Parameters of one synthetic propagation scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    pub num_paths: usize,
    /// Width of the delay window paths are drawn from, in delay bins.
    pub max_delay_bins: f64,
    /// Exponential power-delay-profile constant, in delay bins.
    pub delay_decay: f64,
    /// Per-sample scale is log-uniform over `[-pathloss_range_db, 0]` dB.
    pub pathloss_range_db: f64,
    /// Path angles are drawn from `U(-angle_spread, angle_spread)` radians.
    #[serde(default = "default_angle_spread")]
    pub angle_spread: f64,
    /// Offset added to the normalized spatial frequency `sin θ`. An offset of
    /// `-2c / N_b` moves angular energy by exactly `c` columns.
    pub angle_offset: f64,
    pub delay_offset_bins: f64,
    pub seed: u64,
}

fn default_angle_spread() -> f64 {
    PI / 2.0
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            name: "outdoor".into(),
            num_paths: 6,
            max_delay_bins: 8.0,
            delay_decay: 3.0,
            pathloss_range_db: 40.0,
            angle_spread: default_angle_spread(),
            angle_offset: 0.0,
            delay_offset_bins: 4.0,
            seed: 1,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self, dims: &ChannelDims) -> Result<()> {
        dims.validate()?;
        let r_d = dims.r_d as f64;
        if self.num_paths == 0 {
            return Err(Error::config("num_paths must be positive"));
        }
        if !(self.max_delay_bins >= 1.0 && self.max_delay_bins < r_d) {
            return Err(Error::config(format!(
                "max_delay_bins = {} must lie in [1, R_d = {})",
                self.max_delay_bins, dims.r_d
            )));
        }
        if !(self.delay_offset_bins >= 0.0 && self.delay_offset_bins + self.max_delay_bins < r_d) {
            return Err(Error::config(format!(
                "delay window [{}, {}) leaves the first R_d = {} rows",
                self.delay_offset_bins,
                self.delay_offset_bins + self.max_delay_bins,
                dims.r_d
            )));
        }
        if !(self.delay_decay > 0.0) {
            return Err(Error::config("delay_decay must be positive"));
        }
        if !(self.pathloss_range_db >= 0.0) {
            return Err(Error::config("pathloss_range_db must be nonnegative"));
        }
        if !(self.angle_spread >= 0.0 && self.angle_spread <= PI / 2.0) {
            return Err(Error::config("angle_spread must lie in [0, π/2]"));
        }
        if !self.angle_offset.is_finite() {
            return Err(Error::config("angle_offset must be finite"));
        }
        Ok(())
    }

    /// A copy of this scenario whose angular-delay CSI is circularly shifted
    /// by `rows` delay bins and `cols` angular bins.
    pub fn planted_shift(&self, name: &str, rows: i64, cols: i64, dims: &ChannelDims) -> Self {
        ScenarioConfig {
            name: name.into(),
            delay_offset_bins: self.delay_offset_bins + rows as f64,
            angle_offset: self.angle_offset - 2.0 * cols as f64 / dims.n_b as f64,
            ..self.clone()
        }
    }
}

/// Evaluates the multipath sum for explicit paths.
///
/// `H[m, n] = scale · Σ_p g_p · exp(-j2π m τ_p / N_f) · exp(-jπ n (sin θ_p + angle_offset))`
pub fn synthesize(
    paths: &[PathParams],
    scale: f64,
    angle_offset: f64,
    dims: &ChannelDims,
) -> Result<SpatialFrequencyCsi> {
    let (n_f, n_b) = (dims.n_f, dims.n_b);
    let mut h = Array2::<Complex64>::zeros((n_f, n_b));
    for p in paths {
        let delay_phase: Vec<Complex64> = (0..n_f)
            .map(|m| Complex64::from_polar(1.0, -2.0 * PI * m as f64 * p.delay_bins / n_f as f64))
            .collect();
        let u = p.angle.sin() + angle_offset;
        let steer: Vec<Complex64> = (0..n_b)
            .map(|n| Complex64::from_polar(1.0, -PI * n as f64 * u))
            .collect();
        let g = p.gain * scale;
        for (m, dm) in delay_phase.iter().enumerate() {
            let gd = g * dm;
            for (n, sn) in steer.iter().enumerate() {
                h[[m, n]] += gd * sn;
            }
        }
    }
    SpatialFrequencyCsi::new(h)
}

/// Draws the paths and scale of sample `sample_index`.
pub fn draw_paths(cfg: &ScenarioConfig, sample_index: u64) -> (Vec<PathParams>, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seeds::indexed(cfg.seed, sample_index));
    let scale_db = if cfg.pathloss_range_db > 0.0 {
        -rng.random_range(0.0..cfg.pathloss_range_db)
    } else {
        0.0
    };
    let scale = 10f64.powf(scale_db / 20.0);
    let mut paths = Vec::with_capacity(cfg.num_paths);
    let mut weight_sum = 0.0;
    for _ in 0..cfg.num_paths {
        let excess = rng.random_range(0.0..cfg.max_delay_bins);
        let angle = if cfg.angle_spread > 0.0 {
            rng.random_range(-cfg.angle_spread..cfg.angle_spread)
        } else {
            0.0
        };
        let re: f64 = StandardNormal.sample(&mut rng);
        let im: f64 = StandardNormal.sample(&mut rng);
        let w = (-excess / cfg.delay_decay).exp();
        weight_sum += w;
        paths.push(PathParams {
            delay_bins: cfg.delay_offset_bins + excess,
            angle,
            gain: Complex64::new(re, im) * (w / 2.0).sqrt(),
        });
    }
    let norm = weight_sum.sqrt();
    for p in &mut paths {
        p.gain /= norm;
    }
    (paths, scale)
}

/// Spatial-frequency CSI for `(cfg, sample_index)`; a pure function of both.
pub fn generate_channel(
    cfg: &ScenarioConfig,
    dims: &ChannelDims,
    sample_index: u64,
) -> Result<SpatialFrequencyCsi> {
    cfg.validate(dims)?;
    let (paths, scale) = draw_paths(cfg, sample_index);
    synthesize(&paths, scale, cfg.angle_offset, dims)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_broadside_path_is_flat() {
        let dims = ChannelDims::default();
        let path = PathParams {
            delay_bins: 0.0,
            angle: 0.0,
            gain: Complex64::new(1.0, 0.0),
        };
        let h = synthesize(&[path], 1.0, 0.0, &dims).unwrap();
        for v in h.values() {
            assert!((v - Complex64::new(1.0, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn integer_delay_lands_in_its_row() {
        let dims = ChannelDims::default();
        let path = PathParams {
            delay_bins: 3.0,
            angle: 0.0,
            gain: Complex64::new(1.0, 0.0),
        };
        let h = synthesize(&[path], 1.0, 0.0, &dims).unwrap();
        let ad = to_angular_delay(&h, dims).unwrap();
        // Direct DFT-sum oracle: sum_m exp(+j2π k m/N_f) exp(-j2π 3 m/N_f) / sqrt(N_f)
        // equals sqrt(N_f) at k = 3; the antenna sum puts sqrt(N_b) into column 0.
        let total = ad.energy();
        let row3: f64 = ad.values().row(3).iter().map(|v| v.norm_sqr()).sum();
        assert!((total - (dims.n_f * dims.n_b) as f64).abs() < 1e-6);
        assert!((row3 - total).abs() < 1e-6 * total);
        assert!((ad.values()[[3, 0]].norm() - ((dims.n_f * dims.n_b) as f64).sqrt()).abs() < 1e-8);
    }

    #[test]
    fn generation_is_deterministic() {
        let dims = ChannelDims::default();
        let cfg = ScenarioConfig::default();
        let a = generate_channel(&cfg, &dims, 17).unwrap();
        let b = generate_channel(&cfg, &dims, 17).unwrap();
        let c = generate_channel(&cfg, &dims, 18).unwrap();
        assert!(a
            .values()
            .iter()
            .zip(b.values())
            .all(|(x, y)| x.re.to_bits() == y.re.to_bits() && x.im.to_bits() == y.im.to_bits()));
        assert_ne!(a, c);
    }

    #[test]
    fn invalid_config_is_rejected() {
        let dims = ChannelDims::default();
        let mut cfg = ScenarioConfig {
            max_delay_bins: 40.0,
            ..Default::default()
        };
        assert!(matches!(generate_channel(&cfg, &dims, 0), Err(Error::Config(_))));
        cfg.max_delay_bins = 8.0;
        cfg.num_paths = 0;
        assert!(matches!(generate_channel(&cfg, &dims, 0), Err(Error::Config(_))));
    }

    #[test]
    fn roundtrip_within_truncation_support() {
        let dims = ChannelDims::new(64, 8, 16).unwrap();
        let paths = [
            PathParams {
                delay_bins: 2.0,
                angle: 0.3,
                gain: Complex64::new(0.5, -0.2),
            },
            PathParams {
                delay_bins: 9.0,
                angle: -0.7,
                gain: Complex64::new(-0.1, 0.4),
            },
        ];
        let h = synthesize(&paths, 1.0, 0.0, &dims).unwrap();
        let plan = DftPlan::new(dims);
        let back = plan
            .from_angular_delay(&plan.to_angular_delay(&h).unwrap())
            .unwrap();
        let err: f64 = (h.values() - back.values()).iter().map(|v| v.norm_sqr()).sum();
        assert!(err.sqrt() < 1e-9 * h.frobenius_norm());
    }

    #[test]
    fn inverse_preserves_norm() {
        let dims = ChannelDims::new(64, 8, 16).unwrap();
        let cfg = ScenarioConfig {
            max_delay_bins: 6.0,
            delay_offset_bins: 2.0,
            ..Default::default()
        };
        let h = generate_channel(&cfg, &dims, 5).unwrap();
        let ad = to_angular_delay(&h, dims).unwrap();
        let sf = from_angular_delay(&ad, dims).unwrap();
        assert!((sf.frobenius_norm() - ad.frobenius_norm()).abs() < 1e-10 * ad.frobenius_norm());
    }

    #[test]
    fn planted_shift_moves_energy_by_whole_bins() {
        let dims = ChannelDims::default();
        let base = ScenarioConfig::default();
        let shifted = base.planted_shift("b", 5, 7, &dims);
        let plan = DftPlan::new(dims);
        let a = plan.to_angular_delay(&generate_channel(&base, &dims, 3).unwrap()).unwrap();
        let b = plan.to_angular_delay(&generate_channel(&shifted, &dims, 3).unwrap()).unwrap();
        let (r_d, n_b) = a.shape();
        for m in 0..r_d {
            for n in 0..n_b {
                let src = a.values()[[(m + r_d - 5) % r_d, (n + n_b - 7) % n_b]].norm();
                let dst = b.values()[[m, n]].norm();
                // Truncation edges aside, magnitudes move rigidly.
                if (5..r_d - 5).contains(&m) {
                    assert!((src - dst).abs() < 1e-6 * (1.0 + src), "({m},{n}) {src} vs {dst}");
                }
            }
        }
    }
}
