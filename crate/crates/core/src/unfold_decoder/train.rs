use std::path::Path;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{loss_and_grad, reconstruct, unit_vectors, DecoderArch, DecoderParams};
use crate::channel_data::Dataset;
use crate::error::{Error, Result};
use crate::harness::metrics::{nmse, to_db};
use crate::nn::{Adam, ParamSet};
use crate::seeds;

/// Optimizer settings shared by anchor and plug-in training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Weight of the symmetry constraint.
    pub gamma: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            gamma: 0.01,
            epochs: 200,
            batch_size: 64,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0) {
            return Err(Error::config("gamma must be nonnegative"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::config("learning_rate must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss_total: f64,
    pub loss_mse: f64,
    pub loss_constraint: f64,
    /// Held-out NMSE in dB, when a validation set was supplied.
    pub val_nmse_db: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
}

impl TrainLog {
    /// CSV with columns `epoch, loss_total, loss_mse, loss_constraint, val_nmse_db`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, e.into()))?;
        w.write_record(["epoch", "loss_total", "loss_mse", "loss_constraint", "val_nmse_db"])
            .map_err(|e| Error::io(path, e.into()))?;
        for e in &self.epochs {
            w.write_record([
                e.epoch.to_string(),
                e.loss_total.to_string(),
                e.loss_mse.to_string(),
                e.loss_constraint.to_string(),
                e.val_nmse_db.map_or(String::new(), |v| v.to_string()),
            ])
            .map_err(|e| Error::io(path, e.into()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.loss_total)
    }
}

/// Trains `Φ` and every block on `train` from a fresh initialization.
pub fn train_anchor(
    train: &Dataset,
    arch: DecoderArch,
    cfg: &TrainConfig,
) -> Result<(DecoderParams<f32>, TrainLog)> {
    train_anchor_with(train, None, arch, cfg, None, &mut |_| {})
}

/// Full-control variant: optional validation set, warm start and a per-epoch
/// callback.
pub fn train_anchor_with(
    train: &Dataset,
    val: Option<&Dataset>,
    arch: DecoderArch,
    cfg: &TrainConfig,
    init: Option<DecoderParams<f32>>,
    progress: &mut dyn FnMut(&EpochLog),
) -> Result<(DecoderParams<f32>, TrainLog)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::domain("training set is empty"));
    }
    let mut params = match init {
        Some(p) => {
            if p.arch != arch {
                return Err(Error::config("warm-start parameters do not match the architecture"));
            }
            p
        }
        None => DecoderParams::<f32>::init(arch, seeds::named(cfg.seed, "init"))?,
    };
    let (x_all, _) = unit_vectors::<f32>(&train.samples);
    if x_all.ncols() != arch.vector_len() {
        return Err(Error::dim(format!(
            "training samples give vectors of length {}, decoder expects {}",
            x_all.ncols(),
            arch.vector_len()
        )));
    }
    let mut opt = Adam::<f32>::new(cfg.learning_rate);
    let mut log = TrainLog::default();
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(seeds::indexed(seeds::named(cfg.seed, "shuffle"), epoch as u64));
        order.shuffle(&mut rng);
        let (mut tot, mut mse, mut con, mut weight) = (0.0, 0.0, 0.0, 0.0);
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Array2<f32> = x_all.select(Axis(0), idx);
            let (parts, mut grads) = loss_and_grad(batch.view(), &params, cfg.gamma)?;
            if !parts.total.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: b,
                    detail: format!("loss = {} (mse {}, constraint {})", parts.total, parts.mse, parts.constraint),
                });
            }
            if !params.phi.trainable {
                grads.phi.fill(0.0);
            }
            let g = grads.tensors();
            opt.step(params.tensors_mut(), &g);
            let w = idx.len() as f64;
            tot += parts.total * w;
            mse += parts.mse * w;
            con += parts.constraint * w;
            weight += w;
        }
        let val_nmse_db = match val {
            Some(v) if !v.is_empty() => {
                let est = reconstruct(&params, &v.samples)?;
                Some(to_db(nmse(&v.samples, &est)?))
            }
            _ => None,
        };
        let entry = EpochLog {
            epoch,
            loss_total: tot / weight,
            loss_mse: mse / weight,
            loss_constraint: con / weight,
            val_nmse_db,
        };
        progress(&entry);
        log.epochs.push(entry);
    }
    Ok((params, log))
}
