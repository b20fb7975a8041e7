//! Scenario adaptation around a frozen anchor decoder.
//!
//! A new scenario is first aligned to the anchor's sparsity pattern with a
//! circular shift in the angular-delay domain. A UE-side translation net then
//! maps the aligned CSI into something the anchor encoder handles well, and a
//! gNB-side retranslation net maps the anchor's reconstruction back. Only the
//! two small nets are trained; the power scalar bypasses both.

mod checkpoint;
mod nets;
mod pipeline;

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_plugin, save_plugin, PlugInManifest};
pub use nets::{
    grads_to_flat, ConvStack, RetranslationNet, StackCache, StackLayer, TranslationNet, RETRANSLATION_CHANNELS,
    TRANSLATION_CHANNELS,
};
pub use pipeline::{
    feedback_batch, feedback_new_scenario, train_transnet, train_transnet_with, transnet_loss, transnet_loss_and_grad,
    PlugIn, TransnetGrads,
};

use crate::channel_data::AngularDelayCsi;
use crate::error::{Error, Result};
use crate::par;
use crate::unfold_decoder::{reconstruct, DecoderParams};

/// Row and column shift steps, reduced modulo `(R_d, N_b)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct ShiftSteps {
    pub i: usize,
    pub j: usize,
}

impl ShiftSteps {
    pub fn new(i: i64, j: i64, r_d: usize, n_b: usize) -> Self {
        ShiftSteps {
            i: i.rem_euclid(r_d as i64) as usize,
            j: j.rem_euclid(n_b as i64) as usize,
        }
    }

    /// The shift that undoes this one.
    pub fn inverse(self, r_d: usize, n_b: usize) -> Self {
        ShiftSteps::new(-(self.i as i64), -(self.j as i64), r_d, n_b)
    }

    pub fn is_identity(self) -> bool {
        self.i == 0 && self.j == 0
    }
}

/// `out[m, n] = H[(m − i) mod R_d, (n − j) mod N_b]`.
pub fn circular_shift(h: &AngularDelayCsi, i: i64, j: i64) -> AngularDelayCsi {
    let (r, c) = h.shape();
    let (i, j) = (i.rem_euclid(r as i64) as usize, j.rem_euclid(c as i64) as usize);
    let src = h.values();
    let out = Array2::from_shape_fn((r, c), |(m, n)| src[[(m + r - i) % r, (n + c - j) % c]]);
    AngularDelayCsi::from_values_unchecked(out)
}

pub fn apply_shift(h: &AngularDelayCsi, s: ShiftSteps) -> AngularDelayCsi {
    circular_shift(h, s.i as i64, s.j as i64)
}

/// Candidate shift steps for the exhaustive search.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShiftGrid {
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
}

impl ShiftGrid {
    /// Every `(i, j)` in `[0, R_d) × [0, N_b)`.
    pub fn full(r_d: usize, n_b: usize) -> Self {
        ShiftGrid {
            rows: (0..r_d).collect(),
            cols: (0..n_b).collect(),
        }
    }

    /// Signed ranges (inclusive), reduced modulo the CSI shape.
    pub fn ranges(rows: (i64, i64), cols: (i64, i64), r_d: usize, n_b: usize) -> Self {
        let reduce = |lo: i64, hi: i64, m: usize| {
            let mut v: Vec<usize> = (lo..=hi).map(|k| k.rem_euclid(m as i64) as usize).collect();
            v.sort_unstable();
            v.dedup();
            v
        };
        ShiftGrid {
            rows: reduce(rows.0, rows.1, r_d),
            cols: reduce(cols.0, cols.1, n_b),
        }
    }

    /// Grid points in lexicographic `(i, j)` order.
    pub fn points(&self) -> Vec<ShiftSteps> {
        let mut rows = self.rows.clone();
        let mut cols = self.cols.clone();
        rows.sort_unstable();
        rows.dedup();
        cols.sort_unstable();
        cols.dedup();
        rows.iter()
            .flat_map(|&i| cols.iter().map(move |&j| ShiftSteps { i, j }))
            .collect()
    }
}

/// Default cap on the samples the shift search evaluates.
pub const SEARCH_SAMPLE_CAP: usize = 64;

/// Evenly spaced subset of at most `cap` samples, in order.
pub fn subsample(samples: &[AngularDelayCsi], cap: usize) -> Vec<AngularDelayCsi> {
    let n = samples.len();
    if n <= cap {
        return samples.to_vec();
    }
    (0..cap).map(|k| samples[k * n / cap].clone()).collect()
}

/// `Σ_n ‖f_sh(H_n) − decode(encode(f_sh(H_n)))‖²` for one shift.
pub fn shift_objective(samples: &[AngularDelayCsi], anchor: &DecoderParams<f32>, steps: ShiftSteps) -> Result<f64> {
    let shifted: Vec<_> = samples.iter().map(|h| apply_shift(h, steps)).collect();
    let rec = reconstruct(anchor, &shifted)?;
    Ok(shifted
        .iter()
        .zip(&rec)
        .map(|(h, e)| {
            h.values()
                .iter()
                .zip(e.values())
                .map(|(a, b)| (a - b).norm_sqr())
                .sum::<f64>()
        })
        .sum())
}

fn argmin_lexicographic(scored: &[(ShiftSteps, f64)]) -> Option<ShiftSteps> {
    let mut best: Option<(ShiftSteps, f64)> = None;
    for &(s, v) in scored {
        match best {
            Some((_, bv)) if !(v < bv) => {}
            _ if v.is_nan() => {}
            _ => best = Some((s, v)),
        }
    }
    best.map(|(s, _)| s)
}

/// Exhaustive search for the shift under which the frozen anchor reconstructs
/// the new scenario best, on at most `max_samples` evenly spaced samples.
/// Ties go to the lexicographically smallest `(i, j)`.
pub fn search_shift_steps(
    samples: &[AngularDelayCsi],
    anchor: &DecoderParams<f32>,
    grid: &ShiftGrid,
    max_samples: usize,
) -> Result<ShiftSteps> {
    search_shift_scores(samples, anchor, grid, max_samples).map(|(best, _)| best)
}

/// Like [`search_shift_steps`], also returning the objective at every grid point.
pub fn search_shift_scores(
    samples: &[AngularDelayCsi],
    anchor: &DecoderParams<f32>,
    grid: &ShiftGrid,
    max_samples: usize,
) -> Result<(ShiftSteps, Vec<(ShiftSteps, f64)>)> {
    if samples.is_empty() {
        return Err(Error::domain("shift search needs at least one sample"));
    }
    if max_samples == 0 {
        return Err(Error::config("shift search sample cap must be positive"));
    }
    let points = grid.points();
    if points.is_empty() {
        return Err(Error::config("shift search grid is empty"));
    }
    let (r_d, n_b) = (anchor.arch.r_d, anchor.arch.n_b);
    if let Some(p) = points.iter().find(|p| p.i >= r_d || p.j >= n_b) {
        return Err(Error::config(format!("grid point ({}, {}) outside [0, {r_d}) × [0, {n_b})", p.i, p.j)));
    }
    let subset = subsample(samples, max_samples);
    let scores = par::map_indexed(points.len(), |k| shift_objective(&subset, anchor, points[k]))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let scored: Vec<_> = points.into_iter().zip(scores).collect();
    let best = argmin_lexicographic(&scored).ok_or_else(|| Error::domain("every shift gave a NaN objective"))?;
    Ok((best, scored))
}

fn mean_magnitude(samples: &[AngularDelayCsi]) -> Result<Array2<f64>> {
    let first = samples
        .first()
        .ok_or_else(|| Error::domain("cross-correlation needs nonempty sample sets"))?;
    let shape = first.shape();
    let mut acc = Array2::<f64>::zeros(shape);
    for h in samples {
        if h.shape() != shape {
            return Err(Error::dim(format!("mixed sample shapes {:?} and {:?}", shape, h.shape())));
        }
        acc.zip_mut_with(h.values(), |a, v: &Complex64| *a += v.norm());
    }
    Ok(acc / samples.len() as f64)
}

/// The shift that best aligns the mean magnitude map of `samples` with that
/// of `anchor_samples`, by 2D circular cross-correlation. Ties go to the
/// lexicographically smallest `(i, j)`.
pub fn cross_correlation_shift(samples: &[AngularDelayCsi], anchor_samples: &[AngularDelayCsi]) -> Result<ShiftSteps> {
    let a = mean_magnitude(samples)?;
    let b = mean_magnitude(anchor_samples)?;
    if a.dim() != b.dim() {
        return Err(Error::dim(format!(
            "sample maps {:?} and anchor maps {:?} differ",
            a.dim(),
            b.dim()
        )));
    }
    let (r, c) = a.dim();
    let scored: Vec<(ShiftSteps, f64)> = par::map_indexed(r * c, |k| {
        let (i, j) = (k / c, k % c);
        let mut s = 0.0;
        for m in 0..r {
            for n in 0..c {
                s += b[[m, n]] * a[[(m + r - i) % r, (n + c - j) % c]];
            }
        }
        // maximize correlation == minimize its negative
        (ShiftSteps { i, j }, -s)
    });
    argmin_lexicographic(&scored).ok_or_else(|| Error::domain("cross-correlation is NaN everywhere"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn real(m: Array2<f64>) -> AngularDelayCsi {
        AngularDelayCsi::new(m.mapv(|v| Complex64::new(v, 0.0))).unwrap()
    }

    #[test]
    fn shift_by_hand() {
        let h = real(array![[1.0, 2.0], [3.0, 4.0]]);
        assert_eq!(circular_shift(&h, 1, 0), real(array![[3.0, 4.0], [1.0, 2.0]]));
        assert_eq!(circular_shift(&h, 0, 1), real(array![[2.0, 1.0], [4.0, 3.0]]));
        assert_eq!(circular_shift(&h, 2, -2), h);
    }

    #[test]
    fn steps_reduce_and_invert() {
        let s = ShiftSteps::new(-1, 33, 8, 32);
        assert_eq!(s, ShiftSteps { i: 7, j: 1 });
        assert_eq!(s.inverse(8, 32), ShiftSteps { i: 1, j: 31 });
    }

    #[test]
    fn grid_points_are_lexicographic() {
        let g = ShiftGrid::ranges((-1, 1), (0, 1), 4, 4);
        let pts: Vec<_> = g.points().iter().map(|s| (s.i, s.j)).collect();
        assert_eq!(pts, vec![(0, 0), (0, 1), (1, 0), (1, 1), (3, 0), (3, 1)]);
    }

    #[test]
    fn subsample_is_even() {
        let hs: Vec<_> = (0..10).map(|k| real(array![[k as f64]])).collect();
        let sub = subsample(&hs, 4);
        let vals: Vec<f64> = sub.iter().map(|h| h.values()[[0, 0]].re).collect();
        assert_eq!(vals, vec![0.0, 2.0, 5.0, 7.0]);
    }
}
