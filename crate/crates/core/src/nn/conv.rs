//! 3×3, stride-1, zero-padded convolutions via im2col.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView2, Axis, NdFloat};
use rand::Rng;

use super::{xavier_kernel, Spatial};

pub const KERNEL_TAPS: usize = 9;

/// Unfolds `[C, H·W]` into `[C·9, H·W]` patches with one pixel of zero padding.
/// Row `c·9 + ky·3 + kx` holds input pixel `(i + ky - 1, j + kx - 1)`.
pub fn im2col<T: NdFloat>(x: ArrayView2<T>, sp: Spatial) -> Array2<T> {
    let (c_in, area) = x.dim();
    debug_assert_eq!(area, sp.area());
    let (h, w) = (sp.h, sp.w);
    let mut col = Array2::<T>::zeros((c_in * KERNEL_TAPS, area));
    let x = x.as_standard_layout();
    let xs = x.as_slice().expect("standard layout");
    let cs = col.as_slice_mut().expect("fresh array");
    for c in 0..c_in {
        let src = &xs[c * area..(c + 1) * area];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = (c * KERNEL_TAPS + ky * 3 + kx) * area;
                let dst = &mut cs[row..row + area];
                let (j_lo, j_hi) = (if kx == 0 { 1 } else { 0 }, if kx == 2 { w - 1 } else { w });
                for i in 0..h {
                    let si = i + ky;
                    if si < 1 || si > h {
                        continue;
                    }
                    let srow = &src[(si - 1) * w..si * w];
                    let drow = &mut dst[i * w..(i + 1) * w];
                    for j in j_lo..j_hi {
                        drow[j] = srow[j + kx - 1];
                    }
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: scatters `[C·9, H·W]` patches back, summing overlaps.
pub fn col2im<T: NdFloat>(col: ArrayView2<T>, sp: Spatial) -> Array2<T> {
    let (rows, area) = col.dim();
    debug_assert_eq!(area, sp.area());
    debug_assert_eq!(rows % KERNEL_TAPS, 0);
    let c_out = rows / KERNEL_TAPS;
    let (h, w) = (sp.h, sp.w);
    let col = col.as_standard_layout();
    let cs = col.as_slice().expect("standard layout");
    let mut x = Array2::<T>::zeros((c_out, area));
    let xs = x.as_slice_mut().expect("fresh array");
    for c in 0..c_out {
        let dst = &mut xs[c * area..(c + 1) * area];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = (c * KERNEL_TAPS + ky * 3 + kx) * area;
                let src = &cs[row..row + area];
                let (j_lo, j_hi) = (if kx == 0 { 1 } else { 0 }, if kx == 2 { w - 1 } else { w });
                for i in 0..h {
                    let si = i + ky;
                    if si < 1 || si > h {
                        continue;
                    }
                    let drow = &mut dst[(si - 1) * w..si * w];
                    let srow = &src[i * w..(i + 1) * w];
                    for j in j_lo..j_hi {
                        drow[j + kx - 1] += srow[j];
                    }
                }
            }
        }
    }
    x
}

fn matmul<T: NdFloat>(a: ArrayView2<T>, b: ArrayView2<T>) -> Array2<T> {
    let mut c = Array2::<T>::zeros((a.nrows(), b.ncols()));
    general_mat_mul(T::one(), &a, &b, T::zero(), &mut c);
    c
}

fn add_bias<T: NdFloat>(out: &mut Array2<T>, bias: &Option<Array1<T>>) {
    if let Some(b) = bias {
        for (mut row, &bv) in out.axis_iter_mut(Axis(0)).zip(b.iter()) {
            row.mapv_inplace(|v| v + bv);
        }
    }
}

/// Gradients of one convolution layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrad<T> {
    pub weight: Array2<T>,
    pub bias: Option<Array1<T>>,
}

/// 3×3 convolution, `in_ch → out_ch`, weight stored as `[out, in·9]`
/// (the row-major flattening of `[out, in, 3, 3]`).
#[derive(Debug, Clone, PartialEq)]
pub struct Conv3x3<T> {
    pub weight: Array2<T>,
    pub bias: Option<Array1<T>>,
}

impl<T: NdFloat> Conv3x3<T> {
    pub fn zeros(in_ch: usize, out_ch: usize, with_bias: bool) -> Self {
        Conv3x3 {
            weight: Array2::zeros((out_ch, in_ch * KERNEL_TAPS)),
            bias: with_bias.then(|| Array1::zeros(out_ch)),
        }
    }

    pub fn xavier<R: Rng>(in_ch: usize, out_ch: usize, with_bias: bool, gain: f64, rng: &mut R) -> Self {
        Conv3x3 {
            weight: xavier_kernel(out_ch, in_ch, gain, rng),
            bias: with_bias.then(|| Array1::zeros(out_ch)),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.ncols() / KERNEL_TAPS
    }

    pub fn out_channels(&self) -> usize {
        self.weight.nrows()
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.as_ref().map_or(0, |b| b.len())
    }

    pub fn zero_grad(&self) -> ConvGrad<T> {
        ConvGrad {
            weight: Array2::zeros(self.weight.raw_dim()),
            bias: self.bias.as_ref().map(|b| Array1::zeros(b.raw_dim())),
        }
    }

    pub fn forward(&self, x: ArrayView2<T>, sp: Spatial) -> Array2<T> {
        let col = im2col(x, sp);
        let mut out = matmul(self.weight.view(), col.view());
        add_bias(&mut out, &self.bias);
        out
    }

    /// Returns `∂L/∂x`; accumulates weight and bias gradients into `grad`
    /// when given.
    pub fn backward(
        &self,
        x: ArrayView2<T>,
        dout: ArrayView2<T>,
        sp: Spatial,
        grad: Option<&mut ConvGrad<T>>,
    ) -> Array2<T> {
        if let Some(g) = grad {
            let col = im2col(x, sp);
            general_mat_mul(T::one(), &dout, &col.t(), T::one(), &mut g.weight);
            if let Some(gb) = g.bias.as_mut() {
                *gb += &dout.sum_axis(Axis(1));
            }
        }
        self.backward_input(dout, sp)
    }

    /// `∂L/∂x` only.
    pub fn backward_input(&self, dout: ArrayView2<T>, sp: Spatial) -> Array2<T> {
        let dcol = matmul(self.weight.t(), dout);
        col2im(dcol.view(), sp)
    }
}

/// 3×3 transposed convolution (stride 1, padding 1), the adjoint of
/// [`Conv3x3`]. Weight stored as `[in, out·9]`, the flattening of
/// `[in, out, 3, 3]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvTranspose3x3<T> {
    pub weight: Array2<T>,
    pub bias: Option<Array1<T>>,
}

impl<T: NdFloat> ConvTranspose3x3<T> {
    pub fn zeros(in_ch: usize, out_ch: usize, with_bias: bool) -> Self {
        ConvTranspose3x3 {
            weight: Array2::zeros((in_ch, out_ch * KERNEL_TAPS)),
            bias: with_bias.then(|| Array1::zeros(out_ch)),
        }
    }

    pub fn xavier<R: Rng>(in_ch: usize, out_ch: usize, with_bias: bool, gain: f64, rng: &mut R) -> Self {
        ConvTranspose3x3 {
            weight: xavier_kernel(in_ch, out_ch, gain, rng),
            bias: with_bias.then(|| Array1::zeros(out_ch)),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.nrows()
    }

    pub fn out_channels(&self) -> usize {
        self.weight.ncols() / KERNEL_TAPS
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.as_ref().map_or(0, |b| b.len())
    }

    pub fn zero_grad(&self) -> ConvGrad<T> {
        ConvGrad {
            weight: Array2::zeros(self.weight.raw_dim()),
            bias: self.bias.as_ref().map(|b| Array1::zeros(b.raw_dim())),
        }
    }

    pub fn forward(&self, x: ArrayView2<T>, sp: Spatial) -> Array2<T> {
        let cols = matmul(self.weight.t(), x);
        let mut out = col2im(cols.view(), sp);
        add_bias(&mut out, &self.bias);
        out
    }

    pub fn backward(
        &self,
        x: ArrayView2<T>,
        dout: ArrayView2<T>,
        sp: Spatial,
        grad: Option<&mut ConvGrad<T>>,
    ) -> Array2<T> {
        let dcol = im2col(dout, sp);
        if let Some(g) = grad {
            general_mat_mul(T::one(), &x, &dcol.t(), T::one(), &mut g.weight);
            if let Some(gb) = g.bias.as_mut() {
                *gb += &dout.sum_axis(Axis(1));
            }
        }
        matmul(self.weight.view(), dcol.view())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct nested-loop convolution with zero padding.
    fn naive_conv(x: &Array2<f64>, w: &Array2<f64>, sp: Spatial) -> Array2<f64> {
        let c_in = x.nrows();
        let c_out = w.nrows();
        let mut out = Array2::zeros((c_out, sp.area()));
        for o in 0..c_out {
            for i in 0..sp.h as isize {
                for j in 0..sp.w as isize {
                    let mut acc = 0.0;
                    for c in 0..c_in {
                        for ky in 0..3isize {
                            for kx in 0..3isize {
                                let (si, sj) = (i + ky - 1, j + kx - 1);
                                if si < 0 || sj < 0 || si >= sp.h as isize || sj >= sp.w as isize {
                                    continue;
                                }
                                acc += w[[o, c * 9 + (ky * 3 + kx) as usize]]
                                    * x[[c, si as usize * sp.w + sj as usize]];
                            }
                        }
                    }
                    out[[o, i as usize * sp.w + j as usize]] = acc;
                }
            }
        }
        out
    }

    fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
        Array2::from_shape_simple_fn((r, c), || rng.random_range(-1.0..1.0))
    }

    #[test]
    fn conv_matches_naive_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let sp = Spatial::new(4, 5);
        let x = rand_mat(&mut rng, 3, 20);
        let conv = Conv3x3 {
            weight: rand_mat(&mut rng, 2, 27),
            bias: None,
        };
        let got = conv.forward(x.view(), sp);
        let want = naive_conv(&x, &conv.weight, sp);
        assert!((&got - &want).iter().all(|d| d.abs() < 1e-12));
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let sp = Spatial::new(5, 3);
        let x = rand_mat(&mut rng, 2, 15);
        let c = rand_mat(&mut rng, 18, 15);
        let lhs: f64 = (&im2col(x.view(), sp) * &c).sum();
        let rhs: f64 = (&x * &col2im(c.view(), sp)).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn transposed_conv_is_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sp = Spatial::new(4, 4);
        let w = rand_mat(&mut rng, 3, 2 * 9);
        let conv = Conv3x3 { weight: w.clone(), bias: None };
        let tconv = ConvTranspose3x3 { weight: w, bias: None };
        let a = rand_mat(&mut rng, 2, 16);
        let b = rand_mat(&mut rng, 3, 16);
        // <conv(a), b> = <a, tconv(b)>
        let lhs = (&conv.forward(a.view(), sp) * &b).sum();
        let rhs = (&a * &tconv.forward(b.view(), sp)).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn zero_kernels_give_zero_output() {
        let sp = Spatial::new(3, 3);
        let x = Array2::from_elem((2, 9), 1.5);
        assert!(Conv3x3::<f64>::zeros(2, 4, true).forward(x.view(), sp).iter().all(|v| *v == 0.0));
        assert!(ConvTranspose3x3::<f64>::zeros(2, 4, true)
            .forward(x.view(), sp)
            .iter()
            .all(|v| *v == 0.0));
    }

    fn fd_check_layer<F, B>(params: &mut Array2<f64>, loss: F, analytic: B)
    where
        F: Fn(&Array2<f64>) -> f64,
        B: Fn(&Array2<f64>) -> Array2<f64>,
    {
        let g = analytic(params);
        let h = 1e-6;
        for idx in 0..params.len() {
            let orig = params.as_slice().unwrap()[idx];
            params.as_slice_mut().unwrap()[idx] = orig + h;
            let lp = loss(params);
            params.as_slice_mut().unwrap()[idx] = orig - h;
            let lm = loss(params);
            params.as_slice_mut().unwrap()[idx] = orig;
            let fd = (lp - lm) / (2.0 * h);
            let an = g.as_slice().unwrap()[idx];
            assert!((fd - an).abs() < 1e-6 * (1.0 + fd.abs()), "idx {idx}: fd {fd} vs {an}");
        }
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let sp = Spatial::new(3, 4);
        let x0 = rand_mat(&mut rng, 2, 12);
        let target = rand_mat(&mut rng, 3, 12);
        let mut conv = Conv3x3::xavier(2, 3, true, 1.0, &mut rng);
        conv.bias = Some(Array1::from(vec![0.1, -0.2, 0.3]));
        let loss_of = |c: &Conv3x3<f64>, x: &Array2<f64>| {
            (&c.forward(x.view(), sp) - &target).mapv(|v| v * v).sum() * 0.5
        };
        // input gradient
        let mut x = x0.clone();
        fd_check_layer(
            &mut x,
            |x| loss_of(&conv, x),
            |x| {
                let d = &conv.forward(x.view(), sp) - &target;
                conv.backward(x.view(), d.view(), sp, None)
            },
        );
        // weight gradient
        let mut w = conv.weight.clone();
        let base = conv.clone();
        fd_check_layer(
            &mut w,
            |w| loss_of(&Conv3x3 { weight: w.clone(), ..base.clone() }, &x0),
            |w| {
                let c = Conv3x3 { weight: w.clone(), ..base.clone() };
                let d = &c.forward(x0.view(), sp) - &target;
                let mut g = c.zero_grad();
                c.backward(x0.view(), d.view(), sp, Some(&mut g));
                g.weight
            },
        );
    }

    #[test]
    fn transposed_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let sp = Spatial::new(4, 3);
        let x0 = rand_mat(&mut rng, 3, 12);
        let target = rand_mat(&mut rng, 2, 12);
        let base = ConvTranspose3x3 {
            bias: Some(Array1::from(vec![0.05, -0.1])),
            ..ConvTranspose3x3::xavier(3, 2, true, 1.0, &mut rng)
        };
        let loss_of = |c: &ConvTranspose3x3<f64>, x: &Array2<f64>| {
            (&c.forward(x.view(), sp) - &target).mapv(|v| v * v).sum() * 0.5
        };
        let mut x = x0.clone();
        fd_check_layer(
            &mut x,
            |x| loss_of(&base, x),
            |x| {
                let d = &base.forward(x.view(), sp) - &target;
                base.backward(x.view(), d.view(), sp, None)
            },
        );
        let mut w = base.weight.clone();
        fd_check_layer(
            &mut w,
            |w| loss_of(&ConvTranspose3x3 { weight: w.clone(), ..base.clone() }, &x0),
            |w| {
                let c = ConvTranspose3x3 { weight: w.clone(), ..base.clone() };
                let d = &c.forward(x0.view(), sp) - &target;
                let mut g = c.zero_grad();
                c.backward(x0.view(), d.view(), sp, Some(&mut g));
                g.weight
            },
        );
        // bias gradient is the per-channel sum of the output gradient
        let d = &base.forward(x0.view(), sp) - &target;
        let mut g = base.zero_grad();
        base.backward(x0.view(), d.view(), sp, Some(&mut g));
        let want = d.sum_axis(Axis(1));
        assert!((&g.bias.unwrap() - &want).iter().all(|v| v.abs() < 1e-12));
    }
}
