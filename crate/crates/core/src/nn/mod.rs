//! Minimal neural-network building blocks with hand-written backward passes.
//!
//! Feature maps are `[channels, H·W]` row-major matrices; spatial dims travel
//! alongside as a [`Spatial`]. Everything is generic over `f32`/`f64` so the
//! same code trains in single precision and is gradient-checked in double.

mod adam;
mod conv;

pub use adam::Adam;
pub use conv::{col2im, im2col, Conv3x3, ConvGrad, ConvTranspose3x3, KERNEL_TAPS};

use ndarray::{Array2, NdFloat};
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Lossless-enough numeric conversion between the float types in use.
#[inline]
pub fn cast<T: NdFloat>(v: f64) -> T {
    T::from(v).expect("f64 converts to any float type")
}

/// Height and width of a feature map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Spatial {
    pub h: usize,
    pub w: usize,
}

impl Spatial {
    pub fn new(h: usize, w: usize) -> Self {
        Spatial { h, w }
    }

    pub fn area(&self) -> usize {
        self.h * self.w
    }
}

pub fn relu<T: NdFloat>(x: &Array2<T>) -> Array2<T> {
    x.mapv(|v| if v > T::zero() { v } else { T::zero() })
}

/// `d ⊙ 1[pre > 0]`, in place.
pub fn relu_backward_inplace<T: NdFloat>(d: &mut Array2<T>, pre: &Array2<T>) {
    ndarray::Zip::from(d).and(pre).for_each(|g, &p| {
        if p <= T::zero() {
            *g = T::zero();
        }
    });
}

/// Xavier-normal weights for a `[out, in·9]` kernel matrix.
pub fn xavier_kernel<T: NdFloat, R: Rng>(out_ch: usize, in_ch: usize, gain: f64, rng: &mut R) -> Array2<T> {
    let fan = (in_ch + out_ch) * KERNEL_TAPS;
    let std = gain * (2.0 / fan as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("valid std");
    Array2::from_shape_simple_fn((out_ch, in_ch * KERNEL_TAPS), || cast(normal.sample(rng)))
}

/// Ordered view of every trainable tensor of a model.
///
/// The order is the serialization order of checkpoint blobs and the order in
/// which optimizers keep their state.
pub trait ParamSet<T> {
    /// `(name, shape)` per tensor, in order.
    fn layout(&self) -> Vec<(String, Vec<usize>)>;
    fn tensors(&self) -> Vec<&[T]>;
    fn tensors_mut(&mut self) -> Vec<&mut [T]>;

    fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn to_flat(&self) -> Vec<T>
    where
        T: Copy,
    {
        self.tensors().iter().flat_map(|t| t.iter().copied()).collect()
    }

    /// Overwrites every tensor from a flat buffer in layout order.
    fn assign_flat(&mut self, flat: &[T]) -> crate::Result<()>
    where
        T: Copy,
    {
        let total = self.param_count();
        if flat.len() != total {
            return Err(crate::Error::dim(format!(
                "parameter blob holds {} values, model needs {total}",
                flat.len()
            )));
        }
        let mut off = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            t.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }
}

/// Serializes a flat parameter vector as little-endian `f32`.
pub fn params_to_le_bytes<T: NdFloat>(flat: &[T]) -> Vec<u8> {
    flat.iter()
        .flat_map(|v| v.to_f32().unwrap_or(f32::NAN).to_le_bytes())
        .collect()
}

pub fn params_from_le_bytes<T: NdFloat>(bytes: &[u8]) -> crate::Result<Vec<T>> {
    if !bytes.len().is_multiple_of(4) {
        return Err(crate::Error::dim(format!(
            "parameter blob length {} is not a multiple of 4",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| cast(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
        .collect())
}

/// Hex SHA-256 of the `f32` little-endian parameter blob.
pub fn checksum<T: NdFloat>(flat: &[T]) -> String {
    use sha2::{Digest, Sha256};
    let digest = Sha256::digest(params_to_le_bytes(flat));
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
