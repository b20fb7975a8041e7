//! Translation and retranslation networks: four shape-preserving 3×3 layers
//! with biases and ReLU after the first three.

use ndarray::{Array2, ArrayView2, NdFloat};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::nn::{relu, relu_backward_inplace, Conv3x3, ConvGrad, ConvTranspose3x3, ParamSet, Spatial, KERNEL_TAPS};

/// Channel path of the UE-side translation net.
pub const TRANSLATION_CHANNELS: [usize; 5] = [2, 16, 8, 4, 2];
/// Channel path of the gNB-side retranslation net.
pub const RETRANSLATION_CHANNELS: [usize; 5] = [2, 32, 16, 8, 2];

const CENTER_TAP: usize = 4;

/// Common interface of the two layer kinds.
pub trait StackLayer: Clone + Send + Sync {
    type Elem: NdFloat;
    fn build(in_ch: usize, out_ch: usize, rng: &mut ChaCha8Rng) -> Self;
    fn forward(&self, x: ArrayView2<Self::Elem>, sp: Spatial) -> Array2<Self::Elem>;
    fn backward(&self, x: ArrayView2<Self::Elem>, dout: ArrayView2<Self::Elem>, sp: Spatial, grad: Option<&mut ConvGrad<Self::Elem>>) -> Array2<Self::Elem>;
    fn zero_grad(&self) -> ConvGrad<Self::Elem>;
    fn weight(&self) -> &Array2<Self::Elem>;
    fn weight_mut(&mut self) -> &mut Array2<Self::Elem>;
    fn bias(&self) -> &[Self::Elem];
    fn bias_mut(&mut self) -> &mut [Self::Elem];
    fn tensors_mut(&mut self) -> (&mut [Self::Elem], &mut [Self::Elem]);
    /// Shape reported in checkpoint layouts.
    fn kernel_shape(&self) -> Vec<usize>;
    /// Index into the weight matrix of tap `tap` from input `c` to output `o`.
    fn tap_index(o: usize, c: usize, tap: usize) -> [usize; 2];
    fn in_channels(&self) -> usize;
    fn out_channels(&self) -> usize;
}

impl<T: NdFloat> StackLayer for Conv3x3<T> {
    type Elem = T;
    fn build(in_ch: usize, out_ch: usize, rng: &mut ChaCha8Rng) -> Self {
        Conv3x3::xavier(in_ch, out_ch, true, 1.0, rng)
    }
    fn forward(&self, x: ArrayView2<T>, sp: Spatial) -> Array2<T> {
        Conv3x3::forward(self, x, sp)
    }
    fn backward(&self, x: ArrayView2<T>, dout: ArrayView2<T>, sp: Spatial, grad: Option<&mut ConvGrad<T>>) -> Array2<T> {
        Conv3x3::backward(self, x, dout, sp, grad)
    }
    fn zero_grad(&self) -> ConvGrad<T> {
        Conv3x3::zero_grad(self)
    }
    fn weight(&self) -> &Array2<T> {
        &self.weight
    }
    fn weight_mut(&mut self) -> &mut Array2<T> {
        &mut self.weight
    }
    fn bias(&self) -> &[T] {
        self.bias.as_ref().and_then(|b| b.as_slice()).unwrap_or(&[])
    }
    fn bias_mut(&mut self) -> &mut [T] {
        self.bias.as_mut().and_then(|b| b.as_slice_mut()).unwrap_or(&mut [])
    }
    fn tensors_mut(&mut self) -> (&mut [T], &mut [T]) {
        (
            self.weight.as_slice_mut().expect("standard layout"),
            self.bias.as_mut().and_then(|b| b.as_slice_mut()).unwrap_or(&mut []),
        )
    }
    fn kernel_shape(&self) -> Vec<usize> {
        vec![self.out_channels(), self.in_channels(), 3, 3]
    }
    fn tap_index(o: usize, c: usize, tap: usize) -> [usize; 2] {
        [o, c * KERNEL_TAPS + tap]
    }
    fn in_channels(&self) -> usize {
        Conv3x3::in_channels(self)
    }
    fn out_channels(&self) -> usize {
        Conv3x3::out_channels(self)
    }
}

impl<T: NdFloat> StackLayer for ConvTranspose3x3<T> {
    type Elem = T;
    fn build(in_ch: usize, out_ch: usize, rng: &mut ChaCha8Rng) -> Self {
        ConvTranspose3x3::xavier(in_ch, out_ch, true, 1.0, rng)
    }
    fn forward(&self, x: ArrayView2<T>, sp: Spatial) -> Array2<T> {
        ConvTranspose3x3::forward(self, x, sp)
    }
    fn backward(&self, x: ArrayView2<T>, dout: ArrayView2<T>, sp: Spatial, grad: Option<&mut ConvGrad<T>>) -> Array2<T> {
        ConvTranspose3x3::backward(self, x, dout, sp, grad)
    }
    fn zero_grad(&self) -> ConvGrad<T> {
        ConvTranspose3x3::zero_grad(self)
    }
    fn weight(&self) -> &Array2<T> {
        &self.weight
    }
    fn weight_mut(&mut self) -> &mut Array2<T> {
        &mut self.weight
    }
    fn bias(&self) -> &[T] {
        self.bias.as_ref().and_then(|b| b.as_slice()).unwrap_or(&[])
    }
    fn bias_mut(&mut self) -> &mut [T] {
        self.bias.as_mut().and_then(|b| b.as_slice_mut()).unwrap_or(&mut [])
    }
    fn tensors_mut(&mut self) -> (&mut [T], &mut [T]) {
        (
            self.weight.as_slice_mut().expect("standard layout"),
            self.bias.as_mut().and_then(|b| b.as_slice_mut()).unwrap_or(&mut []),
        )
    }
    fn kernel_shape(&self) -> Vec<usize> {
        vec![self.in_channels(), self.out_channels(), 3, 3]
    }
    fn tap_index(o: usize, c: usize, tap: usize) -> [usize; 2] {
        [c, o * KERNEL_TAPS + tap]
    }
    fn in_channels(&self) -> usize {
        ConvTranspose3x3::in_channels(self)
    }
    fn out_channels(&self) -> usize {
        ConvTranspose3x3::out_channels(self)
    }
}

/// Four layers with ReLU between them. With `bypass` set the stack is the
/// identity map and its weights are ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvStack<L> {
    pub layers: Vec<L>,
    pub bypass: bool,
}

/// UE-side `f_tra`, built from [`Conv3x3`] layers.
pub type TranslationNet<T> = ConvStack<Conv3x3<T>>;
/// gNB-side `f_ret`, built from [`ConvTranspose3x3`] layers.
pub type RetranslationNet<T> = ConvStack<ConvTranspose3x3<T>>;

/// Layer inputs and pre-activations of one forward pass.
#[derive(Debug, Clone)]
pub struct StackCache<T> {
    inputs: Vec<Array2<T>>,
    pre: Vec<Array2<T>>,
}

impl<T: NdFloat> TranslationNet<T> {
    pub fn translation(seed: u64) -> Self {
        ConvStack::near_identity(&TRANSLATION_CHANNELS, seed)
    }
}

impl<T: NdFloat> RetranslationNet<T> {
    pub fn retranslation(seed: u64) -> Self {
        ConvStack::near_identity(&RETRANSLATION_CHANNELS, seed)
    }
}

impl<L: StackLayer> ConvStack<L> {
    /// Xavier-initialized layers in which four channels are wired as an exact
    /// identity path: `(re, im, −re, −im)` survive the ReLUs and are
    /// recombined by the last layer. The remaining channels start random and
    /// feed the output through zero weights, so the untrained stack is the
    /// identity and gradients still reach every weight.
    pub fn near_identity(channels: &[usize], seed: u64) -> Self {
        assert!(channels.len() >= 3 && channels[0] == 2 && *channels.last().unwrap() == 2);
        assert!(channels[1..channels.len() - 1].iter().all(|&c| c >= 4));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = channels.len() - 1;
        let mut layers: Vec<L> = (0..n).map(|k| L::build(channels[k], channels[k + 1], &mut rng)).collect();
        for (k, layer) in layers.iter_mut().enumerate() {
            let (c_in, c_out) = (channels[k], channels[k + 1]);
            let wired = if k + 1 == n { c_out } else { 4 };
            for o in 0..wired {
                for c in 0..c_in {
                    for tap in 0..KERNEL_TAPS {
                        layer.weight_mut()[L::tap_index(o, c, tap)] = <L::Elem as num_traits::Zero>::zero();
                    }
                }
            }
            let one = <L::Elem as num_traits::One>::one();
            let links: Vec<(usize, usize, L::Elem)> = if k == 0 {
                vec![(0, 0, one), (1, 1, one), (2, 0, -one), (3, 1, -one)]
            } else if k + 1 == n {
                vec![(0, 0, one), (1, 1, one), (0, 2, -one), (1, 3, -one)]
            } else {
                (0..4).map(|c| (c, c, one)).collect()
            };
            for (o, c, v) in links {
                layer.weight_mut()[L::tap_index(o, c, CENTER_TAP)] = v;
            }
        }
        ConvStack { layers, bypass: false }
    }

    /// Same architecture with every weight and bias zero.
    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        for l in &mut out.layers {
            l.weight_mut().fill(<L::Elem as num_traits::Zero>::zero());
            l.bias_mut().fill(<L::Elem as num_traits::Zero>::zero());
        }
        out
    }

    /// Diagnostic identity map.
    pub fn identity_bypass(&self) -> Self {
        ConvStack {
            layers: self.layers.clone(),
            bypass: true,
        }
    }

    pub fn apply(&self, x: ArrayView2<L::Elem>, sp: Spatial) -> Array2<L::Elem> {
        self.forward(x, sp, false).0
    }

    /// Runs the stack on a `[2, H·W]` image. With `keep` the returned cache
    /// supports [`ConvStack::backward`].
    pub fn forward(&self, x: ArrayView2<L::Elem>, sp: Spatial, keep: bool) -> (Array2<L::Elem>, Option<StackCache<L::Elem>>) {
        if self.bypass {
            return (x.to_owned(), keep.then(|| StackCache { inputs: vec![], pre: vec![] }));
        }
        let n = self.layers.len();
        let mut cache = StackCache {
            inputs: Vec::new(),
            pre: Vec::new(),
        };
        let mut cur = x.to_owned();
        for (k, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(cur.view(), sp);
            let next = if k + 1 < n { relu(&z) } else { z.clone() };
            if keep {
                cache.inputs.push(std::mem::replace(&mut cur, next));
                if k + 1 < n {
                    cache.pre.push(z);
                }
            } else {
                cur = next;
            }
        }
        (cur, keep.then_some(cache))
    }

    /// Returns `∂L/∂x`; accumulates parameter gradients into `grads` when given.
    pub fn backward(
        &self,
        cache: &StackCache<L::Elem>,
        dout: Array2<L::Elem>,
        sp: Spatial,
        mut grads: Option<&mut Vec<ConvGrad<L::Elem>>>,
    ) -> Array2<L::Elem> {
        if self.bypass {
            return dout;
        }
        let mut d = dout;
        for k in (0..self.layers.len()).rev() {
            if k < cache.pre.len() {
                relu_backward_inplace(&mut d, &cache.pre[k]);
            }
            let g = grads.as_deref_mut().map(|gs| &mut gs[k]);
            d = self.layers[k].backward(cache.inputs[k].view(), d.view(), sp, g);
        }
        d
    }

    pub fn zero_grad(&self) -> Vec<ConvGrad<L::Elem>> {
        self.layers.iter().map(|l| l.zero_grad()).collect()
    }
}

impl<L: StackLayer> ParamSet<L::Elem> for ConvStack<L> {
    fn layout(&self) -> Vec<(String, Vec<usize>)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(k, l)| {
                [
                    (format!("layer{k}.weight"), l.kernel_shape()),
                    (format!("layer{k}.bias"), vec![l.bias().len()]),
                ]
            })
            .collect()
    }

    fn tensors(&self) -> Vec<&[L::Elem]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight().as_slice().expect("standard layout"), l.bias()])
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [L::Elem]> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            let (w, b) = l.tensors_mut();
            out.push(w);
            out.push(b);
        }
        out
    }
}

/// Flattens gradients in [`ParamSet`] order.
pub fn grads_to_flat<T: NdFloat>(grads: &[ConvGrad<T>]) -> Vec<T> {
    grads
        .iter()
        .flat_map(|g| {
            g.weight
                .iter()
                .copied()
                .chain(g.bias.iter().flat_map(|b| b.iter().copied()))
                .collect::<Vec<_>>()
        })
        .collect()
}
