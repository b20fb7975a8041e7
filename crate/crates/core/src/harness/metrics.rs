//! Reconstruction accuracy.

use crate::channel_data::AngularDelayCsi;
use crate::error::{Error, Result};

/// Mean over samples of `‖H − Ĥ‖²_F / ‖H‖²_F`.
pub fn nmse(truth: &[AngularDelayCsi], est: &[AngularDelayCsi]) -> Result<f64> {
    if truth.len() != est.len() {
        return Err(Error::dim(format!(
            "{} reference samples but {} estimates",
            truth.len(),
            est.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::domain("NMSE of an empty set"));
    }
    let mut acc = 0.0;
    for (k, (h, e)) in truth.iter().zip(est).enumerate() {
        if h.shape() != e.shape() {
            return Err(Error::dim(format!(
                "sample {k}: reference {:?} vs estimate {:?}",
                h.shape(),
                e.shape()
            )));
        }
        let power = h.energy();
        if power == 0.0 {
            return Err(Error::domain(format!("reference sample {k} is all zeros")));
        }
        let err: f64 = h
            .values()
            .iter()
            .zip(e.values())
            .map(|(a, b)| (a - b).norm_sqr())
            .sum();
        acc += err / power;
    }
    Ok(acc / truth.len() as f64)
}

pub fn to_db(linear: f64) -> f64 {
    10.0 * linear.log10()
}
