//! Unitary 2-D DFT between the spatial-frequency and angular-delay domains.
//!
//! `F_K` is the unitary DFT matrix with entries `exp(-j 2π k l / K) / sqrt(K)`.
//! The forward map is `F_d^H · H_sf · F_a` truncated to the first `R_d` rows;
//! the inverse zero-pads back to `N_f` rows and applies `F_d · H · F_a^H`.

use std::sync::Arc;

use ndarray::{Array2, Axis};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::{AngularDelayCsi, ChannelDims, SpatialFrequencyCsi};
use crate::error::{Error, Result};

/// Pre-planned FFTs for one set of channel dimensions.
#[derive(Clone)]
pub struct DftPlan {
    dims: ChannelDims,
    delay_fwd: Arc<dyn Fft<f64>>,
    delay_inv: Arc<dyn Fft<f64>>,
    angle_fwd: Arc<dyn Fft<f64>>,
    angle_inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for DftPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DftPlan").field("dims", &self.dims).finish()
    }
}

impl DftPlan {
    pub fn new(dims: ChannelDims) -> Self {
        let mut planner = FftPlanner::<f64>::new();
        DftPlan {
            dims,
            delay_fwd: planner.plan_fft_forward(dims.n_f),
            delay_inv: planner.plan_fft_inverse(dims.n_f),
            angle_fwd: planner.plan_fft_forward(dims.n_b),
            angle_inv: planner.plan_fft_inverse(dims.n_b),
        }
    }

    pub fn dims(&self) -> ChannelDims {
        self.dims
    }

    /// Full `N_f × N_b` angular-delay matrix, before truncation.
    pub fn to_angular_delay_full(&self, h: &SpatialFrequencyCsi) -> Result<Array2<Complex64>> {
        let (n_f, n_b) = (self.dims.n_f, self.dims.n_b);
        if h.values().dim() != (n_f, n_b) {
            return Err(Error::dim(format!(
                "spatial-frequency CSI is {:?}, expected ({n_f}, {n_b})",
                h.values().dim()
            )));
        }
        let mut out = h.values().to_owned();
        // F_d^H along the subcarrier axis: unnormalized inverse DFT / sqrt(N_f).
        apply_along(&mut out, Axis(0), &*self.delay_inv, 1.0 / (n_f as f64).sqrt());
        // · F_a along the antenna axis: forward DFT / sqrt(N_b).
        apply_along(&mut out, Axis(1), &*self.angle_fwd, 1.0 / (n_b as f64).sqrt());
        Ok(out)
    }

    pub fn to_angular_delay(&self, h: &SpatialFrequencyCsi) -> Result<AngularDelayCsi> {
        let full = self.to_angular_delay_full(h)?;
        let kept = full.slice(ndarray::s![..self.dims.r_d, ..]).to_owned();
        AngularDelayCsi::new(kept)
    }

    pub fn from_angular_delay(&self, h: &AngularDelayCsi) -> Result<SpatialFrequencyCsi> {
        let ChannelDims { n_f, n_b, r_d } = self.dims;
        if h.shape() != (r_d, n_b) {
            return Err(Error::dim(format!(
                "angular-delay CSI is {:?}, expected ({r_d}, {n_b})",
                h.shape()
            )));
        }
        let mut out = Array2::<Complex64>::zeros((n_f, n_b));
        out.slice_mut(ndarray::s![..r_d, ..]).assign(h.values());
        apply_along(&mut out, Axis(0), &*self.delay_fwd, 1.0 / (n_f as f64).sqrt());
        apply_along(&mut out, Axis(1), &*self.angle_inv, 1.0 / (n_b as f64).sqrt());
        SpatialFrequencyCsi::new(out)
    }
}

fn apply_along(m: &mut Array2<Complex64>, axis: Axis, fft: &dyn Fft<f64>, scale: f64) {
    let len = m.len_of(axis);
    let mut buf = vec![Complex64::new(0.0, 0.0); len];
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    for mut lane in m.lanes_mut(axis).into_iter() {
        for (b, v) in buf.iter_mut().zip(lane.iter()) {
            *b = *v;
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for (v, b) in lane.iter_mut().zip(buf.iter()) {
            *v = *b * scale;
        }
    }
}

/// Convenience wrapper that plans the FFTs for a single call.
pub fn to_angular_delay(h: &SpatialFrequencyCsi, dims: ChannelDims) -> Result<AngularDelayCsi> {
    DftPlan::new(dims).to_angular_delay(h)
}

/// Convenience wrapper that plans the FFTs for a single call.
pub fn from_angular_delay(h: &AngularDelayCsi, dims: ChannelDims) -> Result<SpatialFrequencyCsi> {
    DftPlan::new(dims).from_angular_delay(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn unitary_dft(k: usize) -> Array2<Complex64> {
        Array2::from_shape_fn((k, k), |(a, b)| {
            Complex64::from_polar(1.0 / (k as f64).sqrt(), -2.0 * PI * (a * b) as f64 / k as f64)
        })
    }

    fn conj_t(m: &Array2<Complex64>) -> Array2<Complex64> {
        m.t().mapv(|v| v.conj())
    }

    fn random_sf(rng: &mut ChaCha8Rng, n_f: usize, n_b: usize) -> SpatialFrequencyCsi {
        let v = Array2::from_shape_fn((n_f, n_b), |_| {
            Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        });
        SpatialFrequencyCsi::new(v).unwrap()
    }

    #[test]
    fn zeros_map_to_zeros() {
        let dims = ChannelDims::new(16, 4, 8).unwrap();
        let h = SpatialFrequencyCsi::new(Array2::zeros((16, 4))).unwrap();
        let ad = to_angular_delay(&h, dims).unwrap();
        assert!(ad.values().iter().all(|v| v.norm() == 0.0));
        let back = from_angular_delay(&AngularDelayCsi::zeros(8, 4), dims).unwrap();
        assert!(back.values().iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn inverse_construction_yields_single_spike() {
        let dims = ChannelDims::new(8, 4, 8).unwrap();
        let mut delta = Array2::<Complex64>::zeros((8, 4));
        delta[[0, 0]] = Complex64::new(1.0, 0.0);
        let h_sf = unitary_dft(8).dot(&delta).dot(&conj_t(&unitary_dft(4)));
        let ad = to_angular_delay(&SpatialFrequencyCsi::new(h_sf).unwrap(), dims).unwrap();
        for ((r, c), v) in ad.values().indexed_iter() {
            let want = if (r, c) == (0, 0) { 1.0 } else { 0.0 };
            assert!((v - Complex64::new(want, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn matches_matrix_products() {
        let dims = ChannelDims::new(16, 8, 16).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = random_sf(&mut rng, 16, 8);
        let want = conj_t(&unitary_dft(16)).dot(h.values()).dot(&unitary_dft(8));
        let got = to_angular_delay(&h, dims).unwrap();
        let err: f64 = (&want - got.values()).iter().map(|v| v.norm_sqr()).sum();
        assert!(err.sqrt() < 1e-10);
    }

    #[test]
    fn full_transform_is_unitary() {
        let dims = ChannelDims::new(32, 8, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = random_sf(&mut rng, 32, 8);
        let full = DftPlan::new(dims).to_angular_delay_full(&h).unwrap();
        let e_in: f64 = h.values().iter().map(|v| v.norm_sqr()).sum();
        let e_out: f64 = full.iter().map(|v| v.norm_sqr()).sum();
        assert!((e_in - e_out).abs() < 1e-10 * e_in);
    }

    #[test]
    fn rejects_wrong_shape() {
        let dims = ChannelDims::new(16, 4, 8).unwrap();
        let h = SpatialFrequencyCsi::new(Array2::zeros((8, 4))).unwrap();
        assert!(matches!(to_angular_delay(&h, dims), Err(Error::Dimension(_))));
        assert!(matches!(
            from_angular_delay(&AngularDelayCsi::zeros(4, 4), dims),
            Err(Error::Dimension(_))
        ));
    }
}
