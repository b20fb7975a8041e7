//! Experiment configuration, read from a single JSON document.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::AugmentConfig;
use crate::channel_data::{ChannelDims, ScenarioConfig};
use crate::error::{Error, Result};
use crate::seeds;
use crate::spherical_codec::payload_len;
use crate::transnet::{ShiftGrid, SEARCH_SAMPLE_CAP};
use crate::unfold_decoder::{DecoderArch, TrainConfig};

/// A scenario to adapt the anchor to. Either a full scenario description or
/// the anchor scenario moved by a planted `(rows, cols)` shift.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewScenario {
    pub name: String,
    #[serde(default)]
    pub scenario: Option<ScenarioConfig>,
    #[serde(default)]
    pub planted_shift: Option<(i64, i64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// A decoder trained from scratch on the scenario's own training data.
    Retrained,
    /// The anchor applied unchanged.
    Direct,
    /// The anchor behind the searched circular shift, no translation nets.
    SpaAlign,
    /// Shift plus plug-in nets trained on the augmented set.
    Transnet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub max_samples: usize,
    /// Restricts the candidate shifts; the full grid when absent.
    #[serde(default)]
    pub grid: Option<ShiftGrid>,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            max_samples: SEARCH_SAMPLE_CAP,
            grid: None,
        }
    }
}

/// Augmentation A/B on the anchor scenario: decoders trained from scratch on
/// `base_size` samples expanded to `target_size` by each strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationStudy {
    pub base_size: usize,
    pub target_size: usize,
    /// Any of `none`, `ads`, `prs`, `ads+prs`.
    pub strategies: Vec<String>,
}

impl AugmentationStudy {
    pub fn strategy_flags(name: &str) -> Result<(bool, bool)> {
        match name {
            "none" => Ok((false, false)),
            "ads" => Ok((true, false)),
            "prs" => Ok((false, true)),
            "ads+prs" => Ok((true, true)),
            other => Err(Error::config(format!("unknown augmentation strategy '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub id: String,
    pub seed: u64,
    #[serde(default)]
    pub dims: ChannelDims,
    pub anchor: ScenarioConfig,
    #[serde(default)]
    pub new_scenarios: Vec<NewScenario>,
    pub crs: Vec<f64>,
    pub n_iter: usize,
    pub channels: usize,
    #[serde(default = "yes")]
    pub trainable_phi: bool,
    pub n_train: usize,
    pub n_test: usize,
    /// Training samples available in each new scenario.
    pub n_new_train: usize,
    /// Optimizer settings for every decoder trained from scratch. The `seed`
    /// fields here and in `augment` are replaced by sub-seeds of `seed`.
    pub anchor_train: TrainConfig,
    pub transnet_train: TrainConfig,
    /// Augmentation for the plug-in training sets.
    pub augment: AugmentConfig,
    #[serde(default)]
    pub search: SearchConfig,
    pub methods: Vec<Method>,
    #[serde(default)]
    pub augmentation_study: Option<AugmentationStudy>,
    /// Directory for datasets, checkpoints, logs and results.
    pub out_dir: PathBuf,
    /// Pretrained anchor checkpoints keyed by CR (as written in `crs`); those
    /// CRs skip anchor training.
    #[serde(default)]
    pub anchor_checkpoints: BTreeMap<String, PathBuf>,
}

fn yes() -> bool {
    true
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        // angular support narrow enough for the shift search to resolve columns
        let anchor = ScenarioConfig {
            angle_spread: std::f64::consts::PI / 6.0,
            ..ScenarioConfig::default()
        };
        ExperimentConfig {
            id: "desk".into(),
            seed: 0,
            dims: ChannelDims::default(),
            anchor,
            new_scenarios: vec![NewScenario {
                name: "shifted".into(),
                scenario: None,
                planted_shift: Some((3, 5)),
            }],
            crs: vec![0.25],
            n_iter: 3,
            channels: 8,
            trainable_phi: true,
            n_train: 2000,
            n_test: 200,
            n_new_train: 20,
            anchor_train: TrainConfig {
                epochs: 12,
                learning_rate: 3e-3,
                ..TrainConfig::default()
            },
            transnet_train: TrainConfig {
                epochs: 80,
                ..TrainConfig::default()
            },
            augment: AugmentConfig::default(),
            search: SearchConfig::default(),
            methods: vec![Method::Retrained, Method::Direct, Method::SpaAlign, Method::Transnet],
            augmentation_study: None,
            out_dir: PathBuf::from("runs/desk"),
            anchor_checkpoints: BTreeMap::new(),
        }
    }
}

/// Named sub-seeds derived from the root seed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedPlan {
    pub root: u64,
    pub data: u64,
    pub init: u64,
    pub augment: u64,
    pub transnet: u64,
}

impl SeedPlan {
    pub fn new(root: u64) -> Self {
        SeedPlan {
            root,
            data: seeds::named(root, "data"),
            init: seeds::named(root, "init"),
            augment: seeds::named(root, "augment"),
            transnet: seeds::named(root, "transnet"),
        }
    }
}

/// Human-readable CR, e.g. `1/4`; also the key of `anchor_checkpoints`.
pub fn cr_label(cr: f64) -> String {
    let inv = 1.0 / cr;
    if (inv - inv.round()).abs() < 1e-9 {
        format!("1/{}", inv.round() as u64)
    } else {
        format!("{cr}")
    }
}

/// [`cr_label`] made safe for a directory name, e.g. `cr-1_4`.
pub fn cr_dir(cr: f64) -> String {
    format!("cr-{}", cr_label(cr).replace(['/', '.'], "_"))
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text).map_err(|e| Error::Manifest {
            path: path.to_path_buf(),
            source: e,
        })?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn seeds(&self) -> SeedPlan {
        SeedPlan::new(self.seed)
    }

    pub fn arch(&self, cr: f64) -> DecoderArch {
        DecoderArch {
            n_iter: self.n_iter,
            channels: self.channels,
            trainable_phi: self.trainable_phi,
            ..DecoderArch::new(self.dims.r_d, self.dims.n_b, cr)
        }
    }

    /// The anchor scenario with its generator seed tied to the root seed.
    pub fn anchor_scenario(&self) -> ScenarioConfig {
        self.seeded(&self.anchor)
    }

    fn seeded(&self, s: &ScenarioConfig) -> ScenarioConfig {
        ScenarioConfig {
            seed: seeds::named(seeds::indexed(self.seeds().data, s.seed), &s.name),
            ..s.clone()
        }
    }

    /// Resolved new scenarios, seeded from the root seed.
    pub fn new_scenario_configs(&self) -> Result<Vec<ScenarioConfig>> {
        self.new_scenarios
            .iter()
            .map(|ns| {
                let base = match (&ns.scenario, ns.planted_shift) {
                    (Some(s), None) => ScenarioConfig {
                        name: ns.name.clone(),
                        ..s.clone()
                    },
                    (None, Some((i, j))) => self.anchor.planted_shift(&ns.name, i, j, &self.dims),
                    _ => {
                        return Err(Error::config(format!(
                            "new scenario '{}' needs exactly one of `scenario` or `planted_shift`",
                            ns.name
                        )))
                    }
                };
                Ok(self.seeded(&base))
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() || self.id.contains(',') {
            return Err(Error::config("experiment id must be nonempty and free of commas"));
        }
        if self.crs.is_empty() {
            return Err(Error::config("at least one compression ratio is required"));
        }
        for &cr in &self.crs {
            payload_len(cr, self.dims.vector_len())?;
            self.arch(cr).validate()?;
        }
        self.anchor_scenario().validate(&self.dims)?;
        let mut names = vec![self.anchor.name.clone()];
        for s in self.new_scenario_configs()? {
            s.validate(&self.dims)?;
            if names.contains(&s.name) {
                return Err(Error::config(format!("scenario name '{}' is used twice", s.name)));
            }
            names.push(s.name);
        }
        if self.n_train == 0 || self.n_test == 0 {
            return Err(Error::config("n_train and n_test must be positive"));
        }
        self.anchor_train.validate()?;
        self.transnet_train.validate()?;
        if !self.new_scenarios.is_empty() {
            if self.n_new_train == 0 {
                return Err(Error::config("n_new_train must be positive"));
            }
            self.augment.validate(self.dims.r_d, self.dims.n_b)?;
            if self.augment.target_size < self.n_new_train {
                return Err(Error::config("augment.target_size is smaller than n_new_train"));
            }
        }
        if let Some(study) = &self.augmentation_study {
            for s in &study.strategies {
                AugmentationStudy::strategy_flags(s)?;
            }
            if study.base_size == 0 || study.base_size > self.n_train || study.target_size < study.base_size {
                return Err(Error::config(
                    "augmentation study needs 0 < base_size ≤ n_train and target_size ≥ base_size",
                ));
            }
        }
        for (key, path) in &self.anchor_checkpoints {
            if !self.crs.iter().any(|&cr| cr_label(cr) == *key) {
                return Err(Error::config(format!("anchor checkpoint given for CR {key}, which is not configured")));
            }
            if !path.join("manifest.json").is_file() {
                return Err(Error::config(format!(
                    "anchor checkpoint {} does not exist",
                    path.display()
                )));
            }
        }
        Ok(())
    }
}
