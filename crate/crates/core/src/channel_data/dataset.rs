//! Named CSI collections and their on-disk format.
//!
//! A dataset directory holds `manifest.json` and `data.bin`. The blob is raw
//! little-endian `f32`, row-major `[n, R_d, N_b, 2]` with the last axis
//! `(real, imag)`.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{generate_channel, AngularDelayCsi, ChannelDims, DftPlan, ScenarioConfig};
use crate::error::{Error, Result};
use crate::par;

pub const FORMAT_VERSION: u32 = 1;
const DTYPE: &str = "float32";
const BYTE_ORDER: &str = "little-endian";
const LAYOUT: &str = "row-major [n, R_d, N_b, 2] with last axis = (real, imag)";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    /// First generator index of the split; train and test never share samples.
    fn index_base(self) -> u64 {
        match self {
            Split::Train => 0,
            Split::Test => 1 << 40,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub split: Split,
    pub scenario: ScenarioConfig,
    pub samples: Vec<AngularDelayCsi>,
    /// Free-form provenance echoed into the manifest (augmentation settings).
    pub provenance: Option<serde_json::Value>,
}

impl Dataset {
    /// Builds a dataset. Samples are rounded to `f32`, the storage precision,
    /// so that save/load is lossless.
    pub fn new(
        name: impl Into<String>,
        split: Split,
        scenario: ScenarioConfig,
        samples: Vec<AngularDelayCsi>,
    ) -> Result<Self> {
        if let Some(first) = samples.first() {
            let shape = first.shape();
            if let Some(bad) = samples.iter().position(|s| s.shape() != shape) {
                return Err(Error::dim(format!(
                    "sample {bad} has shape {:?}, expected {shape:?}",
                    samples[bad].shape()
                )));
            }
        }
        Ok(Dataset {
            name: name.into(),
            split,
            scenario,
            samples: samples.iter().map(AngularDelayCsi::to_f32_precision).collect(),
            provenance: None,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// `(R_d, N_b)` of the samples, if any.
    pub fn sample_shape(&self) -> Option<(usize, usize)> {
        self.samples.first().map(AngularDelayCsi::shape)
    }

    /// The first `n` samples as a new dataset.
    pub fn take(&self, n: usize, name: impl Into<String>) -> Dataset {
        Dataset {
            name: name.into(),
            samples: self.samples.iter().take(n).cloned().collect(),
            ..self.clone()
        }
    }
}

/// Generates `n` angular-delay samples of `scenario`, in parallel.
pub fn generate_dataset(
    scenario: &ScenarioConfig,
    dims: &ChannelDims,
    split: Split,
    n: usize,
) -> Result<Dataset> {
    scenario.validate(dims)?;
    let plan = DftPlan::new(*dims);
    let base = split.index_base();
    let samples = par::map_indexed(n, |k| {
        let h = generate_channel(scenario, dims, base + k as u64)?;
        plan.to_angular_delay(&h)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let name = format!(
        "{}-{}",
        scenario.name,
        match split {
            Split::Train => "train",
            Split::Test => "test",
        }
    );
    Dataset::new(name, split, scenario.clone(), samples)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub name: String,
    pub split: Split,
    pub n_samples: usize,
    pub r_d: usize,
    pub n_b: usize,
    pub dtype: String,
    pub byte_order: String,
    pub layout: String,
    pub scenario: ScenarioConfig,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub augmentation: Option<serde_json::Value>,
}

/// Writes `ds` into directory `dir` (created if missing). An empty dataset
/// records `r_d = n_b = 0` and an empty blob.
pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (r_d, n_b) = ds.sample_shape().unwrap_or((0, 0));
    let manifest = DatasetManifest {
        format_version: FORMAT_VERSION,
        name: ds.name.clone(),
        split: ds.split,
        n_samples: ds.len(),
        r_d,
        n_b,
        dtype: DTYPE.into(),
        byte_order: BYTE_ORDER.into(),
        layout: LAYOUT.into(),
        scenario: ds.scenario.clone(),
        seed: ds.scenario.seed,
        augmentation: ds.provenance.clone(),
    };
    let mut blob = Vec::with_capacity(ds.len() * r_d * n_b * 8);
    for s in &ds.samples {
        for v in s.values().iter() {
            blob.extend_from_slice(&(v.re as f32).to_le_bytes());
            blob.extend_from_slice(&(v.im as f32).to_le_bytes());
        }
    }
    let manifest_path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Manifest {
        path: manifest_path.clone(),
        source: e,
    })?;
    fs::write(&manifest_path, json).map_err(|e| Error::io(&manifest_path, e))?;
    let data_path = dir.join("data.bin");
    fs::write(&data_path, blob).map_err(|e| Error::io(&data_path, e))?;
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest_path = dir.join("manifest.json");
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: DatasetManifest = serde_json::from_str(&text).map_err(|e| Error::Manifest {
        path: manifest_path.clone(),
        source: e,
    })?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion {
            found: manifest.format_version,
            expected: FORMAT_VERSION,
        });
    }
    if manifest.dtype != DTYPE || manifest.byte_order != BYTE_ORDER {
        return Err(Error::config(format!(
            "unsupported encoding {} / {}",
            manifest.dtype, manifest.byte_order
        )));
    }
    let data_path = dir.join("data.bin");
    let blob = fs::read(&data_path).map_err(|e| Error::io(&data_path, e))?;
    let per_sample = manifest.r_d * manifest.n_b;
    let expected = (manifest.n_samples * per_sample * 8) as u64;
    if blob.len() as u64 != expected {
        return Err(Error::SizeMismatch {
            path: data_path,
            expected,
            found: blob.len() as u64,
        });
    }
    let floats: Vec<f32> = blob
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let samples = floats
        .chunks_exact(2 * per_sample.max(1))
        .take(manifest.n_samples)
        .map(|chunk| {
            let vals: Vec<Complex64> = chunk
                .chunks_exact(2)
                .map(|p| Complex64::new(p[0] as f64, p[1] as f64))
                .collect();
            let m = Array2::from_shape_vec((manifest.r_d, manifest.n_b), vals)
                .map_err(|e| Error::dim(e.to_string()))?;
            AngularDelayCsi::new(m)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        name: manifest.name,
        split: manifest.split,
        scenario: manifest.scenario,
        samples,
        provenance: manifest.augmentation,
    })
}
