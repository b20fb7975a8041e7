//! The adapted feedback pipeline and the training of its plug-in nets.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView1, ArrayView2, Axis, NdFloat};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::nets::{ConvStack, RetranslationNet, StackCache, StackLayer, TranslationNet};
use super::{apply_shift, ShiftSteps, RETRANSLATION_CHANNELS, TRANSLATION_CHANNELS};
use crate::channel_data::{AngularDelayCsi, Dataset};
use crate::error::{Error, Result};
use crate::harness::metrics::{nmse, to_db};
use crate::nn::{cast, checksum, Adam, ConvGrad, ParamSet};
use crate::par;
use crate::seeds;
use crate::spherical_codec::{devectorize, spherical_merge, ZERO_NORM_EPS};
use crate::unfold_decoder::network::{self, measure_batch};
use crate::unfold_decoder::{unit_vectors, DecoderParams, EpochLog, TrainConfig, TrainLog};

const EVAL_BATCH: usize = 256;

/// Everything a new scenario adds on top of the anchor.
#[derive(Debug, Clone, PartialEq)]
pub struct PlugIn<T> {
    pub steps: ShiftSteps,
    /// UE side, `Θ_t`.
    pub translation: TranslationNet<T>,
    /// gNB side, `Ω_t`.
    pub retranslation: RetranslationNet<T>,
    /// Checksum of the anchor parameters the nets were trained against.
    pub anchor_checksum: String,
    pub scenario: String,
}

impl<T: NdFloat> PlugIn<T> {
    /// Untrained nets (identity at initialization) for `anchor`.
    pub fn init(anchor: &DecoderParams<f32>, steps: ShiftSteps, scenario: &str, seed: u64) -> Self {
        PlugIn {
            steps,
            translation: TranslationNet::translation(seeds::named(seed, "translation")),
            retranslation: RetranslationNet::retranslation(seeds::named(seed, "retranslation")),
            anchor_checksum: anchor_checksum(anchor),
            scenario: scenario.into(),
        }
    }

    /// Both nets replaced by the identity; only the shift remains.
    pub fn shift_only(anchor: &DecoderParams<f32>, steps: ShiftSteps, scenario: &str) -> Self {
        let p = Self::init(anchor, steps, scenario, 0);
        PlugIn {
            translation: p.translation.identity_bypass(),
            retranslation: p.retranslation.identity_bypass(),
            ..p
        }
    }

    /// Parameters a UE downloads for this scenario.
    pub fn ue_param_count(&self) -> usize {
        self.translation.param_count()
    }

    pub fn cast<U: NdFloat>(&self) -> PlugIn<U> {
        fn conv<T: NdFloat, U: NdFloat, L: StackLayer<Elem = T>, M: StackLayer<Elem = U>>(
            src: &ConvStack<L>,
            mut dst: ConvStack<M>,
        ) -> ConvStack<M> {
            let flat: Vec<U> = src.to_flat().into_iter().map(|v| cast(v.to_f64().unwrap_or(f64::NAN))).collect();
            dst.assign_flat(&flat).expect("same layout");
            dst.bypass = src.bypass;
            dst
        }
        PlugIn {
            steps: self.steps,
            translation: conv(&self.translation, TranslationNet::<U>::translation(0)),
            retranslation: conv(&self.retranslation, RetranslationNet::<U>::retranslation(0)),
            anchor_checksum: self.anchor_checksum.clone(),
            scenario: self.scenario.clone(),
        }
    }

    fn check(&self, anchor: &DecoderParams<f32>) -> Result<()> {
        let chans = |layers: Vec<(usize, usize)>| -> Vec<usize> {
            let mut v: Vec<usize> = layers.first().map(|l| vec![l.0]).unwrap_or_default();
            v.extend(layers.iter().map(|l| l.1));
            v
        };
        let t = chans(self.translation.layers.iter().map(|l| (l.in_channels(), l.out_channels())).collect());
        let r = chans(self.retranslation.layers.iter().map(|l| (l.in_channels(), l.out_channels())).collect());
        if t != TRANSLATION_CHANNELS || r != RETRANSLATION_CHANNELS {
            return Err(Error::config(format!(
                "plug-in nets have channel paths {t:?} / {r:?}, expected {TRANSLATION_CHANNELS:?} / {RETRANSLATION_CHANNELS:?}"
            )));
        }
        if self.anchor_checksum != anchor_checksum(anchor) {
            return Err(Error::config(format!(
                "plug-in for scenario '{}' was trained against a different anchor",
                self.scenario
            )));
        }
        Ok(())
    }
}

pub fn anchor_checksum(anchor: &DecoderParams<f32>) -> String {
    checksum(&anchor.to_flat())
}

/// Gradients of both nets, in [`ParamSet`] order.
#[derive(Debug, Clone)]
pub struct TransnetGrads<T> {
    pub translation: Vec<ConvGrad<T>>,
    pub retranslation: Vec<ConvGrad<T>>,
}

fn image<T: NdFloat>(row: ArrayView1<T>) -> ArrayView2<T> {
    let n = row.len();
    row.into_shape_with_order((2, n / 2)).expect("contiguous CSI row")
}

fn add_grads<T: NdFloat>(acc: &mut [ConvGrad<T>], g: &[ConvGrad<T>]) {
    for (a, b) in acc.iter_mut().zip(g) {
        a.weight += &b.weight;
        if let (Some(ab), Some(bb)) = (a.bias.as_mut(), b.bias.as_ref()) {
            *ab += bb;
        }
    }
}

struct PipelinePass<T> {
    t_caches: Vec<Option<StackCache<T>>>,
    norms: Vec<T>,
    u: Array2<T>,
    pass: network::ForwardPass<T>,
    r_caches: Vec<Option<StackCache<T>>>,
    out: Array2<T>,
}

/// Unit-scale pipeline on aligned rows `x`: translate, normalize, encode,
/// decode with the anchor, retranslate.
fn pipeline_forward<T: NdFloat>(
    x: ArrayView2<T>,
    plugin: &PlugIn<T>,
    anchor: &DecoderParams<T>,
    keep: bool,
) -> PipelinePass<T> {
    let sp = anchor.arch.spatial();
    let b = x.nrows();
    let n = x.ncols();
    let eps: T = cast(ZERO_NORM_EPS);
    let translated = par::map_indexed(b, |k| plugin.translation.forward(image(x.row(k)), sp, keep));
    let mut u = Array2::<T>::zeros((b, n));
    let mut norms = Vec::with_capacity(b);
    let mut t_caches = Vec::with_capacity(b);
    for (k, (t, cache)) in translated.into_iter().enumerate() {
        let norm = t.iter().fold(T::zero(), |a, &v| a + v * v).sqrt();
        let scale = if norm > eps { norm } else { eps };
        u.row_mut(k)
            .assign(&t.into_shape_with_order(n).expect("contiguous").mapv(|v| v / scale));
        norms.push(scale);
        t_caches.push(cache);
    }
    let y = measure_batch(anchor, u.view());
    let pass = network::forward(anchor, y.view(), keep, false);
    let retranslated = par::map_indexed(b, |k| plugin.retranslation.forward(image(pass.x_out.row(k)), sp, keep));
    let mut out = Array2::<T>::zeros((b, n));
    let mut r_caches = Vec::with_capacity(b);
    for (k, (o, cache)) in retranslated.into_iter().enumerate() {
        out.row_mut(k).assign(&o.into_shape_with_order(n).expect("contiguous"));
        r_caches.push(cache);
    }
    PipelinePass {
        t_caches,
        norms,
        u,
        pass,
        r_caches,
        out,
    }
}

fn check_rows<T: NdFloat>(x: ArrayView2<T>, anchor: &DecoderParams<T>) -> Result<()> {
    if x.nrows() == 0 {
        return Err(Error::domain("loss of an empty batch"));
    }
    if x.ncols() != anchor.arch.vector_len() {
        return Err(Error::dim(format!(
            "batch vectors have length {}, anchor expects {}",
            x.ncols(),
            anchor.arch.vector_len()
        )));
    }
    Ok(())
}

/// `(1/B) Σ_n ‖x_n − f_ret(decode(encode(f_tra(x_n))))‖²` on aligned unit rows.
pub fn transnet_loss<T: NdFloat>(x: ArrayView2<T>, plugin: &PlugIn<T>, anchor: &DecoderParams<T>) -> Result<f64> {
    check_rows(x, anchor)?;
    let pp = pipeline_forward(x, plugin, anchor, false);
    Ok(sq_err(&pp.out, x) / x.nrows() as f64)
}

fn sq_err<T: NdFloat>(a: &Array2<T>, b: ArrayView2<T>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(&p, &q)| (p - q).to_f64().unwrap_or(f64::NAN).powi(2))
        .sum()
}

/// [`transnet_loss`] and its gradient with respect to both nets. The anchor
/// is only read.
pub fn transnet_loss_and_grad<T: NdFloat>(
    x: ArrayView2<T>,
    plugin: &PlugIn<T>,
    anchor: &DecoderParams<T>,
) -> Result<(f64, TransnetGrads<T>)> {
    check_rows(x, anchor)?;
    let sp = anchor.arch.spatial();
    let b = x.nrows();
    let n = x.ncols();
    let pp = pipeline_forward(x, plugin, anchor, true);
    let loss = sq_err(&pp.out, x) / b as f64;
    let scale: T = cast(2.0 / b as f64);

    let ret_back = par::map_indexed(b, |k| {
        let dout = (&pp.out.row(k) - &x.row(k)).mapv(|v| v * scale);
        let mut g = plugin.retranslation.zero_grad();
        let cache = pp.r_caches[k].as_ref().expect("kept");
        let dz = plugin
            .retranslation
            .backward(cache, dout.into_shape_with_order((2, n / 2)).expect("contiguous"), sp, Some(&mut g));
        (dz, g)
    });
    let mut g_ret = plugin.retranslation.zero_grad();
    let mut dz = Array2::<T>::zeros((b, n));
    for (k, (d, g)) in ret_back.into_iter().enumerate() {
        dz.row_mut(k).assign(&d.into_shape_with_order(n).expect("contiguous"));
        add_grads(&mut g_ret, &g);
    }

    let (_, dy) = network::backward(anchor, &pp.pass, dz, T::zero(), false);
    let mut du = Array2::<T>::zeros((b, n));
    general_mat_mul(T::one(), &dy, &anchor.phi.phi, T::zero(), &mut du);

    let tra_back = par::map_indexed(b, |k| {
        let u = pp.u.row(k);
        let d = du.row(k);
        let proj = u.dot(&d);
        let dt = (&d - &u.mapv(|v| v * proj)).mapv(|v| v / pp.norms[k]);
        let mut g = plugin.translation.zero_grad();
        let cache = pp.t_caches[k].as_ref().expect("kept");
        plugin
            .translation
            .backward(cache, dt.into_shape_with_order((2, n / 2)).expect("contiguous"), sp, Some(&mut g));
        g
    });
    let mut g_tra = plugin.translation.zero_grad();
    for g in &tra_back {
        add_grads(&mut g_tra, g);
    }
    Ok((
        loss,
        TransnetGrads {
            translation: g_tra,
            retranslation: g_ret,
        },
    ))
}

/// Full adapted feedback for many samples:
/// `Ĥ = f_sh(p · f_ret(decode(encode(f_tra(Ȟ_sa)))), −i, −j)`.
pub fn feedback_batch(
    samples: &[AngularDelayCsi],
    plugin: &PlugIn<f32>,
    anchor: &DecoderParams<f32>,
) -> Result<Vec<AngularDelayCsi>> {
    plugin.check(anchor)?;
    let (r_d, n_b) = (anchor.arch.r_d, anchor.arch.n_b);
    let back = plugin.steps.inverse(r_d, n_b);
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(EVAL_BATCH) {
        if let Some(s) = chunk.iter().find(|s| s.shape() != (r_d, n_b)) {
            return Err(Error::dim(format!("sample is {:?}, anchor expects ({r_d}, {n_b})", s.shape())));
        }
        let aligned: Vec<_> = chunk.iter().map(|h| apply_shift(h, plugin.steps)).collect();
        let (x, powers) = unit_vectors::<f32>(&aligned);
        let pp = pipeline_forward(x.view(), plugin, anchor, false);
        for (row, p) in pp.out.axis_iter(Axis(0)).zip(powers) {
            let unit = devectorize(row, r_d, n_b)?;
            out.push(apply_shift(&spherical_merge(p, &unit)?, back));
        }
    }
    Ok(out)
}

/// Adapted feedback of one CSI matrix.
pub fn feedback_new_scenario(
    h: &AngularDelayCsi,
    plugin: &PlugIn<f32>,
    anchor: &DecoderParams<f32>,
) -> Result<AngularDelayCsi> {
    feedback_batch(std::slice::from_ref(h), plugin, anchor).map(|mut v| v.remove(0))
}

/// Trains the plug-in nets for `new_ds` against the frozen `anchor`.
pub fn train_transnet(
    new_ds: &Dataset,
    anchor: &DecoderParams<f32>,
    steps: ShiftSteps,
    cfg: &TrainConfig,
) -> Result<(PlugIn<f32>, TrainLog)> {
    train_transnet_with(new_ds, None, anchor, steps, cfg, &mut |_| {})
}

/// Full-control variant with an optional validation set (NMSE of the whole
/// adapted pipeline) and a per-epoch callback.
pub fn train_transnet_with(
    new_ds: &Dataset,
    val: Option<&Dataset>,
    anchor: &DecoderParams<f32>,
    steps: ShiftSteps,
    cfg: &TrainConfig,
    progress: &mut dyn FnMut(&EpochLog),
) -> Result<(PlugIn<f32>, TrainLog)> {
    cfg.validate()?;
    if new_ds.is_empty() {
        return Err(Error::domain("new-scenario training set is empty"));
    }
    let mut plugin = PlugIn::<f32>::init(anchor, steps, &new_ds.scenario.name, cfg.seed);
    let aligned: Vec<_> = new_ds.samples.iter().map(|h| apply_shift(h, steps)).collect();
    let (x_all, _) = unit_vectors::<f32>(&aligned);
    check_rows(x_all.view(), anchor)?;
    let mut opt = Adam::<f32>::new(cfg.learning_rate);
    let mut log = TrainLog::default();
    let mut order: Vec<usize> = (0..new_ds.len()).collect();
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(seeds::indexed(seeds::named(cfg.seed, "transnet-shuffle"), epoch as u64));
        order.shuffle(&mut rng);
        let (mut tot, mut weight) = (0.0, 0.0);
        for (bi, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch = x_all.select(Axis(0), idx);
            let (loss, grads) = transnet_loss_and_grad(batch.view(), &plugin, anchor)?;
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: bi,
                    detail: format!("translation loss = {loss}"),
                });
            }
            let mut params = plugin.translation.tensors_mut();
            params.extend(plugin.retranslation.tensors_mut());
            let flat_grads: Vec<&[f32]> = grads
                .translation
                .iter()
                .chain(&grads.retranslation)
                .flat_map(|g| {
                    [
                        g.weight.as_slice().expect("standard layout"),
                        g.bias.as_ref().and_then(|b| b.as_slice()).unwrap_or(&[]),
                    ]
                })
                .collect();
            opt.step(params, &flat_grads);
            tot += loss * idx.len() as f64;
            weight += idx.len() as f64;
        }
        let val_nmse_db = match val {
            Some(v) if !v.is_empty() => Some(to_db(nmse(&v.samples, &feedback_batch(&v.samples, &plugin, anchor)?)?)),
            _ => None,
        };
        let entry = EpochLog {
            epoch,
            loss_total: tot / weight,
            loss_mse: tot / weight,
            loss_constraint: 0.0,
            val_nmse_db,
        };
        progress(&entry);
        log.epochs.push(entry);
    }
    Ok((plugin, log))
}
