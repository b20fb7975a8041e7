//! Plug-in checkpoints: `manifest.json`, `translation.bin` (`Θ_t`, what a UE
//! downloads) and `retranslation.bin` (`Ω_t`, kept at the gNB). Blobs are
//! little-endian `f32` in [`ParamSet::layout`] order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::pipeline::PlugIn;
use super::{RetranslationNet, ShiftSteps, TranslationNet};
use crate::error::{Error, Result};
use crate::nn::{checksum, params_from_le_bytes, params_to_le_bytes, ParamSet};

pub const PLUGIN_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlugInManifest {
    pub format_version: u32,
    pub kind: String,
    pub scenario: String,
    pub shift_i: usize,
    pub shift_j: usize,
    pub anchor_sha256: String,
    pub dtype: String,
    pub byte_order: String,
    pub translation_params: usize,
    pub retranslation_params: usize,
    pub translation_sha256: String,
    pub retranslation_sha256: String,
    pub translation_layout: Vec<(String, Vec<usize>)>,
    pub retranslation_layout: Vec<(String, Vec<usize>)>,
}

pub fn save_plugin(plugin: &PlugIn<f32>, dir: &Path) -> Result<PlugInManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let t = plugin.translation.to_flat();
    let r = plugin.retranslation.to_flat();
    let manifest = PlugInManifest {
        format_version: PLUGIN_VERSION,
        kind: "transnet-plugin".into(),
        scenario: plugin.scenario.clone(),
        shift_i: plugin.steps.i,
        shift_j: plugin.steps.j,
        anchor_sha256: plugin.anchor_checksum.clone(),
        dtype: "float32".into(),
        byte_order: "little-endian".into(),
        translation_params: t.len(),
        retranslation_params: r.len(),
        translation_sha256: checksum(&t),
        retranslation_sha256: checksum(&r),
        translation_layout: plugin.translation.layout(),
        retranslation_layout: plugin.retranslation.layout(),
    };
    let mpath = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Manifest {
        path: mpath.clone(),
        source: e,
    })?;
    fs::write(&mpath, text).map_err(|e| Error::io(&mpath, e))?;
    for (name, flat) in [("translation.bin", &t), ("retranslation.bin", &r)] {
        let p = dir.join(name);
        fs::write(&p, params_to_le_bytes(flat)).map_err(|e| Error::io(&p, e))?;
    }
    Ok(manifest)
}

fn read_blob<P: ParamSet<f32>>(net: &mut P, path: &Path) -> Result<()> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let expected = (net.param_count() * 4) as u64;
    if bytes.len() as u64 != expected {
        return Err(Error::SizeMismatch {
            path: path.to_path_buf(),
            expected,
            found: bytes.len() as u64,
        });
    }
    net.assign_flat(&params_from_le_bytes::<f32>(&bytes)?)
}

pub fn load_plugin(dir: &Path) -> Result<(PlugIn<f32>, PlugInManifest)> {
    let mpath = dir.join("manifest.json");
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: PlugInManifest = serde_json::from_str(&text).map_err(|e| Error::Manifest {
        path: mpath.clone(),
        source: e,
    })?;
    if manifest.format_version != PLUGIN_VERSION {
        return Err(Error::UnsupportedVersion {
            found: manifest.format_version,
            expected: PLUGIN_VERSION,
        });
    }
    let mut translation = TranslationNet::<f32>::translation(0);
    let mut retranslation = RetranslationNet::<f32>::retranslation(0);
    read_blob(&mut translation, &dir.join("translation.bin"))?;
    read_blob(&mut retranslation, &dir.join("retranslation.bin"))?;
    let plugin = PlugIn {
        steps: ShiftSteps {
            i: manifest.shift_i,
            j: manifest.shift_j,
        },
        translation,
        retranslation,
        anchor_checksum: manifest.anchor_sha256.clone(),
        scenario: manifest.scenario.clone(),
    };
    Ok((plugin, manifest))
}
