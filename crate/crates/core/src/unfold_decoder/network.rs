//! Batched forward and backward passes of the unfolded decoder.
//!
//! Samples are rows. The gradient steps `r = x − ρ Φᵀ(Φx − y)` run as GEMMs
//! over the whole batch; the proximal blocks run per sample, in parallel.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView1, ArrayView2, NdFloat};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::block::{block_backward, block_forward, BlockCache, BlockGrads, IterationBlockParams};
use crate::error::{Error, Result};
use crate::nn::{cast, ParamSet, Spatial};
use crate::par;
use crate::spherical_codec::{measurement_len, MeasurementMatrix};

/// Samples per parallel work item; fixed so reductions are reproducible.
const CHUNK: usize = 4;

/// Shape of a decoder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecoderArch {
    pub r_d: usize,
    pub n_b: usize,
    /// Compression ratio; `L_y = round(CR · N) − 1`.
    pub cr: f64,
    /// Number of unfolded iterations `N_I`.
    pub n_iter: usize,
    /// Kernel count `C`.
    pub channels: usize,
    pub trainable_phi: bool,
}

impl DecoderArch {
    pub const DEFAULT_ITERATIONS: usize = 9;
    pub const DEFAULT_CHANNELS: usize = 32;

    pub fn new(r_d: usize, n_b: usize, cr: f64) -> Self {
        DecoderArch {
            r_d,
            n_b,
            cr,
            n_iter: Self::DEFAULT_ITERATIONS,
            channels: Self::DEFAULT_CHANNELS,
            trainable_phi: true,
        }
    }

    pub fn vector_len(&self) -> usize {
        2 * self.r_d * self.n_b
    }

    pub fn measurement_len(&self) -> Result<usize> {
        measurement_len(self.cr, self.vector_len())
    }

    pub fn spatial(&self) -> Spatial {
        Spatial::new(self.r_d, self.n_b)
    }

    pub fn validate(&self) -> Result<()> {
        if self.r_d == 0 || self.n_b == 0 {
            return Err(Error::config("decoder needs a nonempty CSI shape"));
        }
        if self.n_iter == 0 {
            return Err(Error::config("decoder needs at least one iteration block"));
        }
        if self.channels == 0 {
            return Err(Error::config("kernel count must be positive"));
        }
        self.measurement_len()?;
        Ok(())
    }
}

/// Measurement matrix plus the `N_I` iteration blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderParams<T> {
    pub arch: DecoderArch,
    pub phi: MeasurementMatrix<T>,
    pub blocks: Vec<IterationBlockParams<T>>,
}

impl<T: NdFloat> DecoderParams<T> {
    /// Gaussian `Φ` and randomly initialized blocks, all drawn from `seed`.
    pub fn init(arch: DecoderArch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let n = arch.vector_len();
        let phi = MeasurementMatrix::gaussian(
            arch.measurement_len()?,
            n,
            crate::seeds::named(seed, "phi"),
            arch.trainable_phi,
        );
        let mut rng = ChaCha8Rng::seed_from_u64(crate::seeds::named(seed, "blocks"));
        let blocks = (0..arch.n_iter)
            .map(|_| IterationBlockParams::init(arch.channels, &mut rng))
            .collect();
        Ok(DecoderParams { arch, phi, blocks })
    }

    /// Diagnostic decoder with no refinement: `x̂ = Φᵀ y`.
    pub fn adjoint_only(arch: DecoderArch, phi: MeasurementMatrix<T>) -> Self {
        DecoderParams {
            arch: DecoderArch { n_iter: 0, ..arch },
            phi,
            blocks: Vec::new(),
        }
    }

    pub fn zero_grad(&self) -> DecoderGrads<T> {
        DecoderGrads {
            phi: Array2::zeros(self.phi.phi.raw_dim()),
            blocks: self.blocks.iter().map(|b| b.zero_grad()).collect(),
        }
    }

    /// Converts every parameter to another float type.
    pub fn cast<U: NdFloat>(&self) -> DecoderParams<U> {
        let mut out = DecoderParams::<U> {
            arch: self.arch,
            phi: MeasurementMatrix {
                phi: Array2::zeros(self.phi.phi.raw_dim()),
                trainable: self.phi.trainable,
            },
            blocks: self
                .blocks
                .iter()
                .map(|b| IterationBlockParams::zeros(b.channels()))
                .collect(),
        };
        let flat: Vec<U> = self
            .to_flat()
            .into_iter()
            .map(|v| cast(v.to_f64().unwrap_or(f64::NAN)))
            .collect();
        out.assign_flat(&flat).expect("same layout");
        out
    }
}

impl<T: NdFloat> ParamSet<T> for DecoderParams<T> {
    fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = vec![("phi".to_string(), self.phi.phi.shape().to_vec())];
        for (k, b) in self.blocks.iter().enumerate() {
            out.push((format!("block{k}.rho"), vec![1]));
            out.push((format!("block{k}.theta_raw"), vec![1]));
            for (name, c) in ["m", "h1", "h2", "ht1", "ht2", "b"].iter().zip(b.convs()) {
                out.push((
                    format!("block{k}.{name}"),
                    vec![c.out_channels(), c.in_channels(), 3, 3],
                ));
            }
        }
        out
    }

    fn tensors(&self) -> Vec<&[T]> {
        let mut out = vec![self.phi.phi.as_slice().expect("standard layout")];
        for b in &self.blocks {
            out.push(std::slice::from_ref(&b.rho));
            out.push(std::slice::from_ref(&b.theta_raw));
            for c in b.convs() {
                out.push(c.weight.as_slice().expect("standard layout"));
            }
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = vec![self.phi.phi.as_slice_mut().expect("standard layout")];
        for b in &mut self.blocks {
            let IterationBlockParams { rho, theta_raw, m, h1, h2, ht1, ht2, b } = b;
            out.push(std::slice::from_mut(rho));
            out.push(std::slice::from_mut(theta_raw));
            for c in [m, h1, h2, ht1, ht2, b] {
                out.push(c.weight.as_slice_mut().expect("standard layout"));
            }
        }
        out
    }
}

/// Gradients laid out like [`DecoderParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderGrads<T> {
    pub phi: Array2<T>,
    pub blocks: Vec<BlockGrads<T>>,
}

impl<T: NdFloat> DecoderGrads<T> {
    /// Flat gradient in the parameter layout order.
    pub fn tensors(&self) -> Vec<&[T]> {
        let mut out = vec![self.phi.as_slice().expect("standard layout")];
        for b in &self.blocks {
            out.push(std::slice::from_ref(&b.rho));
            out.push(std::slice::from_ref(&b.theta_raw));
            for c in b.convs() {
                out.push(c.weight.as_slice().expect("standard layout"));
            }
        }
        out
    }

    pub fn to_flat(&self) -> Vec<T> {
        self.tensors().iter().flat_map(|t| t.iter().copied()).collect()
    }
}

/// Everything the backward pass needs from a forward pass.
pub(crate) struct ForwardPass<T> {
    pub y: Array2<T>,
    /// `x^(k-1)` entering block `k`.
    x_in: Vec<Array2<T>>,
    e: Vec<Array2<T>>,
    u: Vec<Array2<T>>,
    caches: Vec<Vec<BlockCache<T>>>,
    pub x_out: Array2<T>,
    /// `Σ_n Σ_k ‖H̃(H(M(r))) − M(r)‖²`
    pub constraint_sum: T,
}

fn matmul<T: NdFloat>(a: ArrayView2<T>, b: ArrayView2<T>) -> Array2<T> {
    let mut c = Array2::<T>::zeros((a.nrows(), b.ncols()));
    general_mat_mul(T::one(), &a, &b, T::zero(), &mut c);
    c
}

fn as_image<T: NdFloat>(row: ArrayView1<T>) -> ArrayView2<T> {
    let n = row.len();
    row.into_shape_with_order((2, n / 2)).expect("even-length CSI vector")
}

/// `Y = X Φᵀ` for unit CSI vectors `X` (rows).
pub(crate) fn measure_batch<T: NdFloat>(params: &DecoderParams<T>, x: ArrayView2<T>) -> Array2<T> {
    matmul(x, params.phi.phi.t())
}

/// Runs the decoder on measurement rows `y`.
pub(crate) fn forward<T: NdFloat>(
    params: &DecoderParams<T>,
    y: ArrayView2<T>,
    keep: bool,
    with_constraint: bool,
) -> ForwardPass<T> {
    let phi = params.phi.phi.view();
    let sp = params.arch.spatial();
    let n_samples = y.nrows();
    let mut x = matmul(y, phi);
    let mut pass = ForwardPass {
        y: y.to_owned(),
        x_in: Vec::new(),
        e: Vec::new(),
        u: Vec::new(),
        caches: Vec::new(),
        x_out: Array2::zeros((0, 0)),
        constraint_sum: T::zero(),
    };
    for block in &params.blocks {
        let mut e = matmul(x.view(), phi.t());
        e -= &y;
        let u = matmul(e.view(), phi);
        let r = &x - &u.mapv(|v| v * block.rho);
        let outs = par::map_indexed(n_samples, |i| {
            block_forward(block, as_image(r.row(i)), sp, keep, with_constraint)
        });
        let mut next = Array2::<T>::zeros(r.raw_dim());
        let mut caches = Vec::with_capacity(if keep { n_samples } else { 0 });
        for (i, o) in outs.into_iter().enumerate() {
            next.row_mut(i)
                .assign(&o.x.into_shape_with_order(r.ncols()).expect("contiguous"));
            pass.constraint_sum += o.constraint;
            if let Some(c) = o.cache {
                caches.push(c);
            }
        }
        if keep {
            pass.x_in.push(std::mem::replace(&mut x, next));
            pass.e.push(e);
            pass.u.push(u);
            pass.caches.push(caches);
        } else {
            x = next;
        }
    }
    pass.x_out = x;
    pass
}

/// Back-propagates `dx_out = ∂L/∂x^(N_I)` through a kept forward pass.
///
/// Returns parameter gradients (when `param_grads`) and `∂L/∂Y`.
pub(crate) fn backward<T: NdFloat>(
    params: &DecoderParams<T>,
    pass: &ForwardPass<T>,
    dx_out: Array2<T>,
    constraint_weight: T,
    param_grads: bool,
) -> (Option<DecoderGrads<T>>, Array2<T>) {
    let phi = params.phi.phi.view();
    let sp = params.arch.spatial();
    let n_samples = dx_out.nrows();
    let n = dx_out.ncols();
    let mut grads = param_grads.then(|| params.zero_grad());
    let mut dy = Array2::<T>::zeros(pass.y.raw_dim());
    let mut dx = dx_out;

    for (k, block) in params.blocks.iter().enumerate().rev() {
        let caches = &pass.caches[k];
        let n_chunks = n_samples.div_ceil(CHUNK);
        let chunk_out = par::map_indexed(n_chunks, |c| {
            let lo = c * CHUNK;
            let hi = (lo + CHUNK).min(n_samples);
            let mut g = param_grads.then(|| block.zero_grad());
            let rows: Vec<Array2<T>> = (lo..hi)
                .map(|i| block_backward(block, &caches[i], as_image(dx.row(i)), constraint_weight, sp, g.as_mut()))
                .collect();
            (rows, g)
        });
        let mut dr = Array2::<T>::zeros((n_samples, n));
        let mut i = 0;
        for (rows, g) in chunk_out {
            for row in rows {
                dr.row_mut(i).assign(&row.into_shape_with_order(n).expect("contiguous"));
                i += 1;
            }
            if let (Some(total), Some(g)) = (grads.as_mut(), g) {
                total.blocks[k].add_assign(&g);
            }
        }

        // r = x − ρ u,  u = E Φ,  E = X Φᵀ − Y
        let u = &pass.u[k];
        let e = &pass.e[k];
        let x_in = &pass.x_in[k];
        if let Some(g) = grads.as_mut() {
            g.blocks[k].rho -= ndarray::Zip::from(&dr)
                .and(u)
                .fold(T::zero(), |acc, &a, &b| acc + a * b);
        }
        let du = dr.mapv(|v| -v * block.rho);
        let de = matmul(du.view(), phi.t());
        let mut dx_prev = dr;
        general_mat_mul(T::one(), &de, &phi, T::one(), &mut dx_prev);
        dy -= &de;
        if let Some(g) = grads.as_mut() {
            general_mat_mul(T::one(), &e.t(), &du, T::one(), &mut g.phi);
            general_mat_mul(T::one(), &de.t(), x_in, T::one(), &mut g.phi);
        }
        dx = dx_prev;
    }

    // x^(0) = Y Φ
    general_mat_mul(T::one(), &dx, &phi.t(), T::one(), &mut dy);
    if let Some(g) = grads.as_mut() {
        general_mat_mul(T::one(), &pass.y.t(), &dx, T::one(), &mut g.phi);
    }
    (grads, dy)
}
