//! gNB-side deep-unfolded ISTA decoder and anchor-scenario training.
//!
//! Iteration `k` takes a gradient step on `½‖Φx − y‖²`,
//! `r = x − ρ_k Φᵀ(Φx − y)`, then a learned proximal step
//! `x = r + B(H̃(soft(H(M(r)), θ_k)))`. Decoding starts from `x⁰ = Φᵀ y`.

mod block;
mod checkpoint;
pub(crate) mod network;
mod train;

use ndarray::{Array2, ArrayView1, ArrayView2, NdFloat};

pub use block::{soft, soft_scalar, BlockGrads, IterationBlockParams};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest};
pub use network::{DecoderArch, DecoderGrads, DecoderParams};
pub use train::{train_anchor, train_anchor_with, EpochLog, TrainConfig, TrainLog};

use crate::channel_data::AngularDelayCsi;
use crate::error::{Error, Result};
use crate::nn::{cast, Spatial};
use crate::spherical_codec::{
    devectorize, spherical_merge, spherical_split, vectorize, Codeword, CsiVector, MeasurementMatrix,
};

/// `r = x_prev − ρ Φᵀ(Φ x_prev − y)`.
pub fn gradient_step<T: NdFloat>(
    x_prev: ArrayView1<T>,
    y: ArrayView1<T>,
    phi: &MeasurementMatrix<T>,
    rho: T,
) -> Result<CsiVector<T>> {
    if x_prev.len() != phi.cols() || y.len() != phi.rows() {
        return Err(Error::dim(format!(
            "Φ is {}×{}, x has length {}, y has length {}",
            phi.rows(),
            phi.cols(),
            x_prev.len(),
            y.len()
        )));
    }
    let residual = phi.phi.dot(&x_prev) - y;
    let grad = phi.phi.t().dot(&residual);
    Ok(&x_prev - &grad.mapv(|v| v * rho))
}

/// Applies one proximal block to a CSI vector laid out as a 2-channel
/// `sp.h × sp.w` image.
pub fn proximal_block<T: NdFloat>(
    r: ArrayView1<T>,
    params: &IterationBlockParams<T>,
    sp: Spatial,
) -> Result<CsiVector<T>> {
    if r.len() != 2 * sp.area() {
        return Err(Error::dim(format!(
            "vector of length {} does not fit a 2×{}×{} image",
            r.len(),
            sp.h,
            sp.w
        )));
    }
    let img = r.to_owned().into_shape_with_order((2, sp.area())).expect("length checked");
    let out = block::block_forward(params, img.view(), sp, false, false);
    Ok(out.x.into_shape_with_order(r.len()).expect("contiguous"))
}

fn check_phi_cols<T: NdFloat>(params: &DecoderParams<T>) -> Result<()> {
    if params.phi.cols() != params.arch.vector_len() {
        return Err(Error::dim(format!(
            "Φ has {} columns, decoder expects N = {}",
            params.phi.cols(),
            params.arch.vector_len()
        )));
    }
    Ok(())
}

/// Recovers the unit CSI vector from measurements.
pub fn decode_unit<T: NdFloat>(y: ArrayView1<T>, params: &DecoderParams<T>) -> Result<CsiVector<T>> {
    check_phi_cols(params)?;
    if y.len() != params.phi.rows() {
        return Err(Error::dim(format!(
            "codeword has {} measurements, Φ has {} rows",
            y.len(),
            params.phi.rows()
        )));
    }
    let y2 = y.to_owned().insert_axis(ndarray::Axis(0));
    let pass = network::forward(params, y2.view(), false, false);
    Ok(pass.x_out.row(0).to_owned())
}

/// `Ĥ = p · devec(x^(N_I))`.
pub fn decode<T: NdFloat>(c: &Codeword<T>, params: &DecoderParams<T>) -> Result<AngularDelayCsi> {
    let x = decode_unit(c.y.view(), params)?;
    let unit = devectorize(x.view(), params.arch.r_d, params.arch.n_b)?;
    spherical_merge(c.p.to_f64().unwrap_or(f64::NAN), &unit)
}

/// Unit-norm CSI vectors of `samples`, one per row, with their powers.
pub fn unit_vectors<T: NdFloat>(samples: &[AngularDelayCsi]) -> (Array2<T>, Vec<f64>) {
    let n = samples.first().map_or(0, |s| 2 * s.values().len());
    let mut x = Array2::<T>::zeros((samples.len(), n));
    let mut powers = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let (p, unit) = spherical_split(s);
        x.row_mut(i).assign(&vectorize::<T>(&unit));
        powers.push(p);
    }
    (x, powers)
}

const EVAL_BATCH: usize = 256;

/// `decode(encode(H))` for every sample, batched.
pub fn reconstruct<T: NdFloat>(
    params: &DecoderParams<T>,
    samples: &[AngularDelayCsi],
) -> Result<Vec<AngularDelayCsi>> {
    check_phi_cols(params)?;
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(EVAL_BATCH) {
        for s in chunk {
            if s.shape() != (params.arch.r_d, params.arch.n_b) {
                return Err(Error::dim(format!(
                    "sample is {:?}, decoder expects ({}, {})",
                    s.shape(),
                    params.arch.r_d,
                    params.arch.n_b
                )));
            }
        }
        let (x, powers) = unit_vectors::<T>(chunk);
        let y = network::measure_batch(params, x.view());
        let pass = network::forward(params, y.view(), false, false);
        for (row, p) in pass.x_out.rows().into_iter().zip(powers) {
            let unit = devectorize(row, params.arch.r_d, params.arch.n_b)?;
            out.push(spherical_merge(p, &unit)?);
        }
    }
    Ok(out)
}

/// Components of the training objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub total: f64,
    pub mse: f64,
    pub constraint: f64,
}

/// `L_total = L_MSE + γ · L_constraint` on a batch of unit CSI vectors (rows).
///
/// Both terms are normalized by `batch · N`; the constraint sums over blocks.
pub fn loss_total<T: NdFloat>(x: ArrayView2<T>, params: &DecoderParams<T>, gamma: f64) -> Result<LossParts> {
    loss_parts(x, params, gamma, false).map(|(l, _)| l)
}

/// Loss and its gradient with respect to every decoder parameter.
pub fn loss_and_grad<T: NdFloat>(
    x: ArrayView2<T>,
    params: &DecoderParams<T>,
    gamma: f64,
) -> Result<(LossParts, DecoderGrads<T>)> {
    loss_parts(x, params, gamma, true).map(|(l, g)| (l, g.expect("requested")))
}

fn loss_parts<T: NdFloat>(
    x: ArrayView2<T>,
    params: &DecoderParams<T>,
    gamma: f64,
    want_grad: bool,
) -> Result<(LossParts, Option<DecoderGrads<T>>)> {
    check_phi_cols(params)?;
    if x.nrows() == 0 {
        return Err(Error::domain("loss of an empty batch"));
    }
    if x.ncols() != params.arch.vector_len() {
        return Err(Error::dim(format!(
            "batch vectors have length {}, expected {}",
            x.ncols(),
            params.arch.vector_len()
        )));
    }
    if !(gamma >= 0.0) {
        return Err(Error::domain(format!("gamma must be nonnegative, got {gamma}")));
    }
    let denom = (x.nrows() * x.ncols()) as f64;
    let y = network::measure_batch(params, x);
    let pass = network::forward(params, y.view(), want_grad, true);
    let err = &pass.x_out - &x;
    let mse = err.iter().map(|v| v.to_f64().unwrap_or(f64::NAN).powi(2)).sum::<f64>() / denom;
    let constraint = pass.constraint_sum.to_f64().unwrap_or(f64::NAN) / denom;
    let parts = LossParts {
        total: mse + gamma * constraint,
        mse,
        constraint,
    };
    if !want_grad {
        return Ok((parts, None));
    }
    let dx_out = err.mapv(|v| v * cast::<T>(2.0 / denom));
    let (grads, dy) = network::backward(params, &pass, dx_out, cast(gamma / denom), true);
    let mut grads = grads.expect("requested");
    // y = Φ x
    ndarray::linalg::general_mat_mul(T::one(), &dy.t(), &x, T::one(), &mut grads.phi);
    Ok((parts, Some(grads)))
}
