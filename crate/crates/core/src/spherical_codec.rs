//! UE-side encoder: spherical split, vectorization and linear compression.
//!
//! The feedback budget for compression ratio `CR` is `round(CR · N)` real
//! values. One of them carries the power `p`, leaving `L_y = round(CR · N) - 1`
//! measurements `y = Φ x`.

use ndarray::{Array1, Array2, ArrayView1, NdFloat};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::channel_data::{AngularDelayCsi, ChannelDims};
use crate::error::{Error, Result};
use crate::nn::cast;

/// Norms below this are treated as the all-zero channel.
pub const ZERO_NORM_EPS: f64 = 1e-12;

/// Compression ratios with a defined payload.
pub const SUPPORTED_RATIOS: [f64; 4] = [1.0 / 4.0, 1.0 / 8.0, 1.0 / 16.0, 1.0 / 32.0];

/// Real CSI vector: all real parts row-major, then all imaginary parts.
pub type CsiVector<T> = Array1<T>;

/// Total feedback payload `round(CR · N)`, power scalar included.
pub fn payload_len(cr: f64, n: usize) -> Result<usize> {
    if !(cr > 0.0 && cr <= 1.0) {
        return Err(Error::config(format!("compression ratio {cr} outside (0, 1]")));
    }
    let total = (cr * n as f64).round() as usize;
    if total < 2 {
        return Err(Error::config(format!(
            "CR = {cr} leaves no room for measurements at N = {n}"
        )));
    }
    Ok(total)
}

/// Measurement count `L_y = round(CR · N) - 1`.
pub fn measurement_len(cr: f64, n: usize) -> Result<usize> {
    Ok(payload_len(cr, n)? - 1)
}

/// `(p, H / p)` with `p = ‖H‖_F`; the zero channel maps to `(0, 0)`.
pub fn spherical_split(h: &AngularDelayCsi) -> (f64, AngularDelayCsi) {
    let p = h.frobenius_norm();
    if p < ZERO_NORM_EPS {
        let (r, c) = h.shape();
        return (0.0, AngularDelayCsi::zeros(r, c));
    }
    (p, h.scaled(1.0 / p))
}

pub fn spherical_merge(p: f64, h_unit: &AngularDelayCsi) -> Result<AngularDelayCsi> {
    if !(p >= 0.0) {
        return Err(Error::domain(format!("power must be nonnegative, got {p}")));
    }
    Ok(h_unit.scaled(p))
}

pub fn vectorize<T: NdFloat>(h: &AngularDelayCsi) -> CsiVector<T> {
    let vals = h.values();
    let n = vals.len();
    let mut x = Array1::<T>::zeros(2 * n);
    for (k, v) in vals.iter().enumerate() {
        x[k] = cast(v.re);
        x[n + k] = cast(v.im);
    }
    x
}

pub fn devectorize<T: NdFloat>(x: ArrayView1<T>, r_d: usize, n_b: usize) -> Result<AngularDelayCsi> {
    let n = r_d * n_b;
    if x.len() != 2 * n {
        return Err(Error::dim(format!(
            "CSI vector has length {}, expected {}",
            x.len(),
            2 * n
        )));
    }
    let vals: Vec<Complex64> = (0..n)
        .map(|k| {
            Complex64::new(
                x[k].to_f64().unwrap_or(f64::NAN),
                x[n + k].to_f64().unwrap_or(f64::NAN),
            )
        })
        .collect();
    AngularDelayCsi::new(Array2::from_shape_vec((r_d, n_b), vals).expect("length checked"))
}

/// Linear measurement operator `Φ ∈ R^{L_y × N}`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementMatrix<T> {
    pub phi: Array2<T>,
    pub trainable: bool,
}

impl<T: NdFloat> MeasurementMatrix<T> {
    /// I.i.d. `N(0, 1/N)` entries.
    pub fn gaussian(l_y: usize, n: usize, seed: u64, trainable: bool) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0 / (n as f64).sqrt()).expect("valid std");
        let phi = Array2::from_shape_simple_fn((l_y, n), || cast(normal.sample(&mut rng)));
        MeasurementMatrix { phi, trainable }
    }

    /// Gaussian matrix sized for `cr` at `dims`.
    pub fn for_ratio(cr: f64, dims: &ChannelDims, seed: u64, trainable: bool) -> Result<Self> {
        let n = dims.vector_len();
        Ok(Self::gaussian(measurement_len(cr, n)?, n, seed, trainable))
    }

    /// First `l_y` rows of the `N × N` identity.
    pub fn identity_rows(l_y: usize, n: usize) -> Self {
        let phi = Array2::from_shape_fn((l_y, n), |(r, c)| if r == c { T::one() } else { T::zero() });
        MeasurementMatrix {
            phi,
            trainable: false,
        }
    }

    pub fn rows(&self) -> usize {
        self.phi.nrows()
    }

    pub fn cols(&self) -> usize {
        self.phi.ncols()
    }

    pub fn measure(&self, x: ArrayView1<T>) -> Result<Array1<T>> {
        if x.len() != self.cols() {
            return Err(Error::dim(format!(
                "Φ has {} columns but x has length {}",
                self.cols(),
                x.len()
            )));
        }
        Ok(self.phi.dot(&x))
    }
}

/// Feedback payload: measurements `y` plus the power scalar `p`.
#[derive(Debug, Clone, PartialEq)]
pub struct Codeword<T> {
    pub y: Array1<T>,
    pub p: T,
}

impl<T: NdFloat> Codeword<T> {
    /// Real values on the feedback link, `L_y + 1`.
    pub fn payload_len(&self) -> usize {
        self.y.len() + 1
    }

    /// Little-endian: `u32` count of the `f32` values that follow, then `y`, then `p`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + 4 * self.payload_len());
        out.extend_from_slice(&(self.payload_len() as u32).to_le_bytes());
        for v in self.y.iter().chain(std::iter::once(&self.p)) {
            out.extend_from_slice(&v.to_f32().unwrap_or(f32::NAN).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 {
            return Err(Error::dim("codeword shorter than its length field"));
        }
        let count = u32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]) as usize;
        if count == 0 || bytes.len() != 4 + 4 * count {
            return Err(Error::dim(format!(
                "codeword declares {count} values but carries {} bytes",
                bytes.len() - 4
            )));
        }
        let vals: Vec<T> = bytes[4..]
            .chunks_exact(4)
            .map(|c| cast(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
            .collect();
        let p = vals[count - 1];
        Ok(Codeword {
            y: Array1::from(vals[..count - 1].to_vec()),
            p,
        })
    }
}

/// `y = Φ · vec(H / ‖H‖)`, `p = ‖H‖`.
pub fn encode<T: NdFloat>(h: &AngularDelayCsi, phi: &MeasurementMatrix<T>) -> Result<Codeword<T>> {
    let (p, unit) = spherical_split(h);
    let x = vectorize::<T>(&unit);
    let y = phi.measure(x.view())?;
    Ok(Codeword { y, p: cast(p) })
}
