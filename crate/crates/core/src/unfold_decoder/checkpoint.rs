//! Decoder checkpoints: `manifest.json` plus `params.bin`, the parameters as
//! little-endian `f32` in [`ParamSet::layout`] order (`phi`, then per block
//! `rho`, `theta_raw`, `m`, `h1`, `h2`, `ht1`, `ht2`, `b`).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DecoderArch, DecoderParams, IterationBlockParams};
use crate::error::{Error, Result};
use crate::nn::{checksum, params_from_le_bytes, params_to_le_bytes, ParamSet};
use crate::spherical_codec::MeasurementMatrix;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub kind: String,
    pub arch: DecoderArch,
    pub l_y: usize,
    pub seed: u64,
    pub epoch: usize,
    pub dtype: String,
    pub byte_order: String,
    pub n_params: usize,
    pub sha256: String,
    pub tensors: Vec<TensorEntry>,
}

pub fn save_checkpoint(params: &DecoderParams<f32>, dir: &Path, seed: u64, epoch: usize) -> Result<CheckpointManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let flat = params.to_flat();
    let manifest = CheckpointManifest {
        format_version: CHECKPOINT_VERSION,
        kind: "unfold-decoder".into(),
        arch: params.arch,
        l_y: params.phi.rows(),
        seed,
        epoch,
        dtype: "float32".into(),
        byte_order: "little-endian".into(),
        n_params: flat.len(),
        sha256: checksum(&flat),
        tensors: params
            .layout()
            .into_iter()
            .map(|(name, shape)| TensorEntry { name, shape })
            .collect(),
    };
    let mpath = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Manifest {
        path: mpath.clone(),
        source: e,
    })?;
    fs::write(&mpath, text).map_err(|e| Error::io(&mpath, e))?;
    let bpath = dir.join("params.bin");
    fs::write(&bpath, params_to_le_bytes(&flat)).map_err(|e| Error::io(&bpath, e))?;
    Ok(manifest)
}

pub fn load_checkpoint(dir: &Path) -> Result<(DecoderParams<f32>, CheckpointManifest)> {
    let mpath = dir.join("manifest.json");
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: CheckpointManifest = serde_json::from_str(&text).map_err(|e| Error::Manifest {
        path: mpath.clone(),
        source: e,
    })?;
    if manifest.format_version != CHECKPOINT_VERSION {
        return Err(Error::UnsupportedVersion {
            found: manifest.format_version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let arch = manifest.arch;
    let n = arch.vector_len();
    let mut params = DecoderParams::<f32> {
        arch,
        phi: MeasurementMatrix {
            phi: ndarray::Array2::zeros((manifest.l_y, n)),
            trainable: arch.trainable_phi,
        },
        blocks: (0..arch.n_iter)
            .map(|_| IterationBlockParams::zeros(arch.channels))
            .collect(),
    };
    let bpath = dir.join("params.bin");
    let bytes = fs::read(&bpath).map_err(|e| Error::io(&bpath, e))?;
    let expected = (params.param_count() * 4) as u64;
    if bytes.len() as u64 != expected {
        return Err(Error::SizeMismatch {
            path: bpath,
            expected,
            found: bytes.len() as u64,
        });
    }
    params.assign_flat(&params_from_le_bytes::<f32>(&bytes)?)?;
    Ok((params, manifest))
}
