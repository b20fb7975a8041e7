//! One unfolded proximal block:
//! `x = r + B(H̃(soft(H(M(r)), θ)))`, with `H = conv∘ReLU∘conv` and
//! `H̃` of the same shape. The symmetry penalty `‖H̃(H(M(r))) − M(r)‖²`
//! is computed on the side.

use ndarray::{Array2, ArrayView2, NdFloat, Zip};
use rand::Rng;

use crate::nn::{cast, relu, relu_backward_inplace, Conv3x3, ConvGrad, Spatial};

/// `sgn(x) · max(0, |x| − θ)`.
#[inline]
pub fn soft_scalar<T: NdFloat>(x: T, theta: T) -> T {
    if x > theta {
        x - theta
    } else if x < -theta {
        x + theta
    } else {
        T::zero()
    }
}

/// Elementwise soft threshold.
pub fn soft<T: NdFloat, D: ndarray::Dimension>(
    x: &ndarray::Array<T, D>,
    theta: T,
) -> ndarray::Array<T, D> {
    x.mapv(|v| soft_scalar(v, theta))
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

pub(crate) fn softplus_inv(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Learnable parameters of iteration block `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationBlockParams<T> {
    /// Gradient step size `ρ`.
    pub rho: T,
    /// Unconstrained threshold; the effective threshold is `softplus(theta_raw)`.
    pub theta_raw: T,
    /// `2 → C`
    pub m: Conv3x3<T>,
    /// Forward transform `H`: `C → C`, ReLU, `C → C`.
    pub h1: Conv3x3<T>,
    pub h2: Conv3x3<T>,
    /// Left inverse `H̃`, same shape as `H`.
    pub ht1: Conv3x3<T>,
    pub ht2: Conv3x3<T>,
    /// `C → 2`
    pub b: Conv3x3<T>,
}

impl<T: NdFloat> IterationBlockParams<T> {
    pub const RHO_INIT: f64 = 0.5;
    pub const THETA_INIT: f64 = 0.01;

    pub fn init<R: Rng>(channels: usize, rng: &mut R) -> Self {
        IterationBlockParams {
            rho: cast(Self::RHO_INIT),
            theta_raw: cast(softplus_inv(Self::THETA_INIT)),
            m: Conv3x3::xavier(2, channels, false, 1.0, rng),
            h1: Conv3x3::xavier(channels, channels, false, 1.0, rng),
            h2: Conv3x3::xavier(channels, channels, false, 1.0, rng),
            ht1: Conv3x3::xavier(channels, channels, false, 1.0, rng),
            ht2: Conv3x3::xavier(channels, channels, false, 1.0, rng),
            b: Conv3x3::xavier(channels, 2, false, 1.0, rng),
        }
    }

    /// All kernels zero: the block reduces to the identity map.
    pub fn zeros(channels: usize) -> Self {
        IterationBlockParams {
            rho: cast(Self::RHO_INIT),
            theta_raw: cast(softplus_inv(Self::THETA_INIT)),
            m: Conv3x3::zeros(2, channels, false),
            h1: Conv3x3::zeros(channels, channels, false),
            h2: Conv3x3::zeros(channels, channels, false),
            ht1: Conv3x3::zeros(channels, channels, false),
            ht2: Conv3x3::zeros(channels, channels, false),
            b: Conv3x3::zeros(channels, 2, false),
        }
    }

    pub fn channels(&self) -> usize {
        self.m.out_channels()
    }

    pub fn theta(&self) -> T {
        cast(softplus(self.theta_raw.to_f64().unwrap_or(f64::NAN)))
    }

    pub(crate) fn convs(&self) -> [&Conv3x3<T>; 6] {
        [&self.m, &self.h1, &self.h2, &self.ht1, &self.ht2, &self.b]
    }

    pub fn zero_grad(&self) -> BlockGrads<T> {
        BlockGrads {
            rho: T::zero(),
            theta_raw: T::zero(),
            m: self.m.zero_grad(),
            h1: self.h1.zero_grad(),
            h2: self.h2.zero_grad(),
            ht1: self.ht1.zero_grad(),
            ht2: self.ht2.zero_grad(),
            b: self.b.zero_grad(),
        }
    }
}

/// Gradient of the loss with respect to one block's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockGrads<T> {
    pub rho: T,
    pub theta_raw: T,
    pub m: ConvGrad<T>,
    pub h1: ConvGrad<T>,
    pub h2: ConvGrad<T>,
    pub ht1: ConvGrad<T>,
    pub ht2: ConvGrad<T>,
    pub b: ConvGrad<T>,
}

impl<T: NdFloat> BlockGrads<T> {
    pub(crate) fn convs(&self) -> [&ConvGrad<T>; 6] {
        [&self.m, &self.h1, &self.h2, &self.ht1, &self.ht2, &self.b]
    }

    pub(crate) fn convs_mut(&mut self) -> [&mut ConvGrad<T>; 6] {
        [
            &mut self.m,
            &mut self.h1,
            &mut self.h2,
            &mut self.ht1,
            &mut self.ht2,
            &mut self.b,
        ]
    }

    pub(crate) fn add_assign(&mut self, other: &BlockGrads<T>) {
        self.rho += other.rho;
        self.theta_raw += other.theta_raw;
        for (a, b) in self.convs_mut().into_iter().zip(other.convs()) {
            a.weight += &b.weight;
        }
    }
}

/// Activations kept for the backward pass of one sample.
#[derive(Debug, Clone)]
pub(crate) struct BlockCache<T> {
    r: Array2<T>,
    m: Array2<T>,
    h1: Array2<T>,
    h: Array2<T>,
    g1: Array2<T>,
    g: Array2<T>,
    /// Pre-activation of `H̃`'s first layer applied to `H(M(r))`.
    c1: Array2<T>,
    /// `H̃(H(M(r))) − M(r)`.
    diff: Array2<T>,
}

/// Output of one block on one sample.
pub(crate) struct BlockOutput<T> {
    /// `[2, H·W]`
    pub x: Array2<T>,
    /// `‖H̃(H(M(r))) − M(r)‖²`
    pub constraint: T,
    pub cache: Option<BlockCache<T>>,
}

/// Runs one block on a `[2, H·W]` image. `keep` retains activations for
/// [`block_backward`]; the constraint term is always computed.
pub(crate) fn block_forward<T: NdFloat>(
    p: &IterationBlockParams<T>,
    r: ArrayView2<T>,
    sp: Spatial,
    keep: bool,
    with_constraint: bool,
) -> BlockOutput<T> {
    let theta = p.theta();
    let m = p.m.forward(r, sp);
    let h1 = p.h1.forward(m.view(), sp);
    let h = p.h2.forward(relu(&h1).view(), sp);
    let s = soft(&h, theta);
    let g1 = p.ht1.forward(s.view(), sp);
    let g = p.ht2.forward(relu(&g1).view(), sp);
    let out = p.b.forward(g.view(), sp);
    let x = &r + &out;

    let (constraint, c1, diff) = if with_constraint || keep {
        let c1 = p.ht1.forward(h.view(), sp);
        let c = p.ht2.forward(relu(&c1).view(), sp);
        let diff = &c - &m;
        let v = diff.iter().fold(T::zero(), |acc, &d| acc + d * d);
        (v, Some(c1), Some(diff))
    } else {
        (T::zero(), None, None)
    };

    let cache = keep.then(|| BlockCache {
        r: r.to_owned(),
        m,
        h1,
        h,
        g1,
        g,
        c1: c1.expect("kept"),
        diff: diff.expect("kept"),
    });
    BlockOutput { x, constraint, cache }
}

/// Back-propagates `dx = ∂L/∂x` through one block. `constraint_weight` is the
/// factor multiplying this sample's constraint term in the loss. Returns
/// `∂L/∂r`; parameter gradients are accumulated when `grads` is given.
pub(crate) fn block_backward<T: NdFloat>(
    p: &IterationBlockParams<T>,
    cache: &BlockCache<T>,
    dx: ArrayView2<T>,
    constraint_weight: T,
    sp: Spatial,
    mut grads: Option<&mut BlockGrads<T>>,
) -> Array2<T> {
    let theta = p.theta();
    let mut dr = dx.to_owned();

    // x = r + B(g)
    let dg = p.b.backward(cache.g.view(), dx, sp, grads.as_deref_mut().map(|g| &mut g.b));
    // g = Ht2(relu(g1))
    let mut dg1 = p.ht2.backward(
        relu(&cache.g1).view(),
        dg.view(),
        sp,
        grads.as_deref_mut().map(|g| &mut g.ht2),
    );
    relu_backward_inplace(&mut dg1, &cache.g1);
    // g1 = Ht1(s)
    let s = soft(&cache.h, theta);
    let ds = p.ht1.backward(s.view(), dg1.view(), sp, grads.as_deref_mut().map(|g| &mut g.ht1));
    // s = soft(h, θ)
    let mut dtheta = T::zero();
    let mut dh = Array2::<T>::zeros(ds.raw_dim());
    Zip::from(&mut dh).and(&ds).and(&cache.h).for_each(|dhv, &dsv, &hv| {
        if hv > theta {
            *dhv = dsv;
            dtheta -= dsv;
        } else if hv < -theta {
            *dhv = dsv;
            dtheta += dsv;
        }
    });

    let mut dm = Array2::<T>::zeros(cache.m.raw_dim());
    if constraint_weight != T::zero() {
        let two_w = constraint_weight + constraint_weight;
        let ddiff = cache.diff.mapv(|d| d * two_w);
        dm -= &ddiff;
        let mut dc1 = p.ht2.backward(
            relu(&cache.c1).view(),
            ddiff.view(),
            sp,
            grads.as_deref_mut().map(|g| &mut g.ht2),
        );
        relu_backward_inplace(&mut dc1, &cache.c1);
        dh += &p.ht1.backward(cache.h.view(), dc1.view(), sp, grads.as_deref_mut().map(|g| &mut g.ht1));
    }

    // h = H2(relu(h1))
    let mut dh1 = p.h2.backward(
        relu(&cache.h1).view(),
        dh.view(),
        sp,
        grads.as_deref_mut().map(|g| &mut g.h2),
    );
    relu_backward_inplace(&mut dh1, &cache.h1);
    // h1 = H1(m)
    dm += &p.h1.backward(cache.m.view(), dh1.view(), sp, grads.as_deref_mut().map(|g| &mut g.h1));
    // m = M(r)
    dr += &p.m.backward(cache.r.view(), dm.view(), sp, grads.as_deref_mut().map(|g| &mut g.m));

    if let Some(g) = grads {
        let raw = p.theta_raw.to_f64().unwrap_or(f64::NAN);
        g.theta_raw += dtheta * cast::<T>(sigmoid(raw));
    }
    dr
}
