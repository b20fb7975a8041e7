//! Experiment orchestration.
//!
//! Every stage reads its inputs from and writes its outputs to the run
//! directory, so the CLI can run stages one at a time and `run` chains them:
//!
//! ```text
//! <out>/config.json, seeds.json, results.csv
//! <out>/data/<scenario>-{train,test,full,aug<K>}/
//! <out>/cr-1_4/anchor/                     checkpoint + train_log.csv
//! <out>/cr-1_4/<scenario>/retrained/       checkpoint + train_log.csv
//! <out>/cr-1_4/<scenario>/shift.json
//! <out>/cr-1_4/<scenario>/plugin/          plug-in + train_log.csv
//! <out>/cr-1_4/aug-study/<strategy>/       checkpoint + train_log.csv
//! ```

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{cr_dir, cr_label, AugmentationStudy, ExperimentConfig, Method};
use super::metrics::{nmse, to_db};
use crate::augment::{augment_dataset, AugmentConfig};
use crate::channel_data::{generate_dataset, AngularDelayCsi, load_dataset, save_dataset, Dataset, ScenarioConfig, Split};
use crate::error::{Error, Result};
use crate::nn::ParamSet;
use crate::seeds;
use crate::transnet::{
    feedback_batch, load_plugin, save_plugin, search_shift_scores, train_transnet, PlugIn, ShiftGrid, ShiftSteps,
};
use crate::unfold_decoder::{
    load_checkpoint, reconstruct, save_checkpoint, train_anchor, DecoderArch, DecoderParams, TrainConfig, TrainLog,
};

/// One line of the results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub experiment_id: String,
    pub cr: f64,
    pub scenario: String,
    pub method: String,
    pub nmse_linear: f64,
    pub nmse_db: f64,
    pub params_updated: usize,
    pub wall_time_s: f64,
}

impl ResultRow {
    pub fn new(
        experiment_id: &str,
        cr: f64,
        scenario: &str,
        method: impl Into<String>,
        nmse_linear: f64,
        params_updated: usize,
        wall_time_s: f64,
    ) -> Self {
        ResultRow {
            experiment_id: experiment_id.into(),
            cr,
            scenario: scenario.into(),
            method: method.into(),
            nmse_linear,
            nmse_db: to_db(nmse_linear),
            params_updated,
            wall_time_s,
        }
    }
}

pub const RESULT_COLUMNS: [&str; 8] = [
    "experiment_id",
    "cr",
    "scenario",
    "method",
    "nmse_linear",
    "nmse_db",
    "params_updated",
    "wall_time_s",
];

pub fn write_results(rows: &[ResultRow], path: &Path) -> Result<()> {
    let io = |e: csv::Error| Error::io(path, e.into());
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path).map_err(io)?;
    w.write_record(RESULT_COLUMNS).map_err(io)?;
    for r in rows {
        w.serialize(r).map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Paths inside a run directory.
#[derive(Debug, Clone)]
pub struct RunLayout {
    pub root: PathBuf,
}

impl RunLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunLayout { root: root.into() }
    }

    pub fn dataset(&self, name: &str) -> PathBuf {
        self.root.join("data").join(name)
    }

    pub fn anchor(&self, cr: f64) -> PathBuf {
        self.root.join(cr_dir(cr)).join("anchor")
    }

    pub fn scenario_dir(&self, cr: f64, scenario: &str) -> PathBuf {
        self.root.join(cr_dir(cr)).join(scenario)
    }

    pub fn retrained(&self, cr: f64, scenario: &str) -> PathBuf {
        self.scenario_dir(cr, scenario).join("retrained")
    }

    pub fn shift(&self, cr: f64, scenario: &str) -> PathBuf {
        self.scenario_dir(cr, scenario).join("shift.json")
    }

    pub fn plugin(&self, cr: f64, scenario: &str) -> PathBuf {
        self.scenario_dir(cr, scenario).join("plugin")
    }

    pub fn study(&self, cr: f64, strategy: &str) -> PathBuf {
        self.root.join(cr_dir(cr)).join("aug-study").join(strategy)
    }

    pub fn results(&self) -> PathBuf {
        self.root.join("results.csv")
    }
}

/// Dataset names used by the stages.
fn train_name(s: &str) -> String {
    format!("{s}-train")
}
fn test_name(s: &str) -> String {
    format!("{s}-test")
}
fn full_name(s: &str) -> String {
    format!("{s}-full")
}
fn aug_name(s: &str, k: usize) -> String {
    format!("{s}-aug{k}")
}

/// Outcome of the shift search, stored as `shift.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftRecord {
    pub scenario: String,
    pub steps: ShiftSteps,
    pub objective: f64,
    pub grid_points: usize,
    pub samples_used: usize,
}

/// Seconds spent training an artifact, stored next to it.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct Timing {
    train_s: f64,
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Manifest {
        path: path.to_path_buf(),
        source: e,
    })?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Manifest {
        path: path.to_path_buf(),
        source: e,
    })
}

fn train_seconds(dir: &Path) -> f64 {
    read_json::<Timing>(&dir.join("timing.json")).map_or(0.0, |t| t.train_s)
}

pub type Progress<'a> = &'a mut dyn FnMut(&str);

/// Derived settings that every stage agrees on.
struct Plan<'a> {
    cfg: &'a ExperimentConfig,
    layout: RunLayout,
    anchor: ScenarioConfig,
    new: Vec<ScenarioConfig>,
}

impl<'a> Plan<'a> {
    fn new(cfg: &'a ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Plan {
            cfg,
            layout: RunLayout::new(&cfg.out_dir),
            anchor: cfg.anchor_scenario(),
            new: cfg.new_scenario_configs()?,
        })
    }

    fn wants(&self, m: Method) -> bool {
        self.cfg.methods.contains(&m)
    }

    fn uses_shift(&self) -> bool {
        self.wants(Method::SpaAlign) || self.wants(Method::Transnet)
    }

    fn decoder_train(&self, tag: &str) -> TrainConfig {
        TrainConfig {
            seed: seeds::named(self.cfg.seeds().init, tag),
            ..self.cfg.anchor_train.clone()
        }
    }

    fn augment_cfg(&self, scenario: &str) -> AugmentConfig {
        AugmentConfig {
            seed: seeds::named(self.cfg.seeds().augment, scenario),
            ..self.cfg.augment.clone()
        }
    }

    fn load(&self, name: &str) -> Result<Dataset> {
        load_dataset(&self.layout.dataset(name))
    }

    fn load_anchor(&self, cr: f64) -> Result<DecoderParams<f32>> {
        let dir = match self.cfg.anchor_checkpoints.get(&cr_label(cr)) {
            Some(p) => p.clone(),
            None => self.layout.anchor(cr),
        };
        let (params, _) = load_checkpoint(&dir)?;
        if params.arch != self.cfg.arch(cr) {
            return Err(Error::config(format!(
                "anchor checkpoint {} does not match the configured architecture",
                dir.display()
            )));
        }
        Ok(params)
    }
}

fn generate(scenario: &ScenarioConfig, plan: &Plan, split: Split, n: usize, name: String) -> Result<()> {
    let mut ds = generate_dataset(scenario, &plan.cfg.dims, split, n)?;
    ds.name = name;
    save_dataset(&ds, &plan.layout.dataset(&ds.name))
}

/// Generates and saves every dataset the configuration refers to.
pub fn generate_data(cfg: &ExperimentConfig, progress: Progress) -> Result<()> {
    let plan = Plan::new(cfg)?;
    fs::create_dir_all(&plan.layout.root).map_err(|e| Error::io(&plan.layout.root, e))?;
    write_json(cfg, &plan.layout.root.join("config.json"))?;
    write_json(&cfg.seeds(), &plan.layout.root.join("seeds.json"))?;
    let a = &plan.anchor;
    progress(&format!("generating {} ({} train, {} test)", a.name, cfg.n_train, cfg.n_test));
    generate(a, &plan, Split::Train, cfg.n_train, train_name(&a.name))?;
    generate(a, &plan, Split::Test, cfg.n_test, test_name(&a.name))?;
    for s in &plan.new {
        progress(&format!("generating {} ({} train, {} test)", s.name, cfg.n_new_train, cfg.n_test));
        generate(s, &plan, Split::Train, cfg.n_new_train, train_name(&s.name))?;
        generate(s, &plan, Split::Test, cfg.n_test, test_name(&s.name))?;
        if plan.wants(Method::Retrained) {
            generate(s, &plan, Split::Train, cfg.n_train, full_name(&s.name))?;
        }
    }
    Ok(())
}

fn fit_decoder(
    train: &Dataset,
    arch: DecoderArch,
    tcfg: &TrainConfig,
    dir: &Path,
    progress: Progress,
) -> Result<DecoderParams<f32>> {
    progress(&format!("training decoder on {} ({} samples) -> {}", train.name, train.len(), dir.display()));
    let t0 = Instant::now();
    let (params, log) = train_anchor(train, arch, tcfg)?;
    let train_s = t0.elapsed().as_secs_f64();
    save_checkpoint(&params, dir, tcfg.seed, tcfg.epochs)?;
    log.write_csv(&dir.join("train_log.csv"))?;
    write_json(&Timing { train_s }, &dir.join("timing.json"))?;
    if let Some(loss) = log.final_loss() {
        progress(&format!("  final loss {loss:.4e} after {train_s:.1} s"));
    }
    Ok(params)
}

/// Trains every decoder learned from scratch: the anchor per CR (unless a
/// checkpoint is supplied), the `retrained` baselines and the augmentation
/// study decoders.
pub fn train_anchors(cfg: &ExperimentConfig, progress: Progress) -> Result<()> {
    let plan = Plan::new(cfg)?;
    let anchor_train = plan.load(&train_name(&plan.anchor.name))?;
    for &cr in &cfg.crs {
        let arch = cfg.arch(cr);
        if !cfg.anchor_checkpoints.contains_key(&cr_label(cr)) {
            fit_decoder(&anchor_train, arch, &plan.decoder_train("anchor"), &plan.layout.anchor(cr), progress)?;
        }
        if plan.wants(Method::Retrained) {
            for s in &plan.new {
                let full = plan.load(&full_name(&s.name))?;
                let tcfg = plan.decoder_train(&format!("retrained-{}", s.name));
                fit_decoder(&full, arch, &tcfg, &plan.layout.retrained(cr, &s.name), progress)?;
            }
        }
        if let Some(study) = &cfg.augmentation_study {
            let base = anchor_train.take(study.base_size, format!("{}-base{}", plan.anchor.name, study.base_size));
            for strategy in &study.strategies {
                let ds = study_dataset(&base, study, strategy, cfg)?;
                fit_decoder(&ds, arch, &plan.decoder_train("study"), &plan.layout.study(cr, strategy), progress)?;
            }
        }
    }
    Ok(())
}

/// The augmentation study's training set for one strategy. Every strategy
/// shares the augmentation seed.
pub fn study_dataset(base: &Dataset, study: &AugmentationStudy, strategy: &str, cfg: &ExperimentConfig) -> Result<Dataset> {
    let (use_ads, use_prs) = AugmentationStudy::strategy_flags(strategy)?;
    augment_dataset(
        base,
        &AugmentConfig {
            use_ads,
            use_prs,
            target_size: study.target_size,
            seed: seeds::named(cfg.seeds().augment, "study"),
            ..cfg.augment.clone()
        },
    )
}

/// Searches the alignment shift of every new scenario against each anchor.
pub fn search_shifts(cfg: &ExperimentConfig, progress: Progress) -> Result<()> {
    let plan = Plan::new(cfg)?;
    if !plan.uses_shift() {
        return Ok(());
    }
    let grid = cfg
        .search
        .grid
        .clone()
        .unwrap_or_else(|| ShiftGrid::full(cfg.dims.r_d, cfg.dims.n_b));
    for &cr in &cfg.crs {
        let anchor = plan.load_anchor(cr)?;
        for s in &plan.new {
            let train = plan.load(&train_name(&s.name))?;
            let (steps, scores) = search_shift_scores(&train.samples, &anchor, &grid, cfg.search.max_samples)?;
            let objective = scores.iter().find(|(p, _)| *p == steps).map_or(f64::NAN, |(_, v)| *v);
            progress(&format!("{} at CR {}: shift ({}, {})", s.name, cr_label(cr), steps.i, steps.j));
            let record = ShiftRecord {
                scenario: s.name.clone(),
                steps,
                objective,
                grid_points: scores.len(),
                samples_used: train.len().min(cfg.search.max_samples),
            };
            write_json(&record, &plan.layout.shift(cr, &s.name))?;
        }
    }
    Ok(())
}

/// Expands each new scenario's training set to `augment.target_size`.
pub fn augment_new(cfg: &ExperimentConfig, progress: Progress) -> Result<()> {
    let plan = Plan::new(cfg)?;
    if !plan.wants(Method::Transnet) {
        return Ok(());
    }
    for s in &plan.new {
        let train = plan.load(&train_name(&s.name))?;
        let mut ds = augment_dataset(&train, &plan.augment_cfg(&s.name))?;
        ds.name = aug_name(&s.name, cfg.augment.target_size);
        progress(&format!("augmented {} -> {} samples", train.name, ds.len()));
        save_dataset(&ds, &plan.layout.dataset(&ds.name))?;
    }
    Ok(())
}

/// Trains the plug-in nets of every new scenario against each anchor.
pub fn train_plugins(cfg: &ExperimentConfig, progress: Progress) -> Result<()> {
    let plan = Plan::new(cfg)?;
    if !plan.wants(Method::Transnet) {
        return Ok(());
    }
    for &cr in &cfg.crs {
        let anchor = plan.load_anchor(cr)?;
        for s in &plan.new {
            let ds = plan.load(&aug_name(&s.name, cfg.augment.target_size))?;
            let shift: ShiftRecord = read_json(&plan.layout.shift(cr, &s.name))?;
            let tcfg = TrainConfig {
                seed: seeds::named(cfg.seeds().transnet, &s.name),
                ..cfg.transnet_train.clone()
            };
            progress(&format!("training plug-in for {} at CR {} on {} samples", s.name, cr_label(cr), ds.len()));
            let t0 = Instant::now();
            let (plugin, log): (PlugIn<f32>, TrainLog) = train_transnet(&ds, &anchor, shift.steps, &tcfg)?;
            let train_s = t0.elapsed().as_secs_f64();
            let dir = plan.layout.plugin(cr, &s.name);
            save_plugin(&plugin, &dir)?;
            log.write_csv(&dir.join("train_log.csv"))?;
            write_json(&Timing { train_s }, &dir.join("timing.json"))?;
        }
    }
    Ok(())
}

fn timed_nmse(truth: &[AngularDelayCsi], f: impl FnOnce() -> Result<Vec<AngularDelayCsi>>) -> Result<(f64, f64)> {
    let t0 = Instant::now();
    let est = f()?;
    Ok((nmse(truth, &est)?, t0.elapsed().as_secs_f64()))
}

/// Evaluates every configured method on the held-out sets and writes
/// `results.csv`.
pub fn evaluate(cfg: &ExperimentConfig, progress: Progress) -> Result<Vec<ResultRow>> {
    let plan = Plan::new(cfg)?;
    let id = cfg.id.as_str();
    let mut rows = Vec::new();
    let anchor_test = plan.load(&test_name(&plan.anchor.name))?;
    for &cr in &cfg.crs {
        let anchor = plan.load_anchor(cr)?;
        let anchor_params = anchor.param_count();
        if plan.wants(Method::Retrained) {
            let (v, t) = timed_nmse(&anchor_test.samples, || reconstruct(&anchor, &anchor_test.samples))?;
            let train_s = train_seconds(&plan.layout.anchor(cr));
            rows.push(ResultRow::new(id, cr, &plan.anchor.name, "retrained", v, anchor_params, train_s + t));
        }
        for s in &plan.new {
            let test = plan.load(&test_name(&s.name))?;
            if plan.wants(Method::Retrained) {
                let dir = plan.layout.retrained(cr, &s.name);
                let (own, _) = load_checkpoint(&dir)?;
                let (v, t) = timed_nmse(&test.samples, || reconstruct(&own, &test.samples))?;
                rows.push(ResultRow::new(id, cr, &s.name, "retrained", v, own.param_count(), train_seconds(&dir) + t));
            }
            if plan.wants(Method::Direct) {
                let (v, t) = timed_nmse(&test.samples, || reconstruct(&anchor, &test.samples))?;
                rows.push(ResultRow::new(id, cr, &s.name, "direct", v, 0, t));
            }
            if plan.wants(Method::SpaAlign) {
                let shift: ShiftRecord = read_json(&plan.layout.shift(cr, &s.name))?;
                let plugin = PlugIn::<f32>::shift_only(&anchor, shift.steps, &s.name);
                let (v, t) = timed_nmse(&test.samples, || feedback_batch(&test.samples, &plugin, &anchor))?;
                rows.push(ResultRow::new(id, cr, &s.name, "spa-align", v, 0, t));
            }
            if plan.wants(Method::Transnet) {
                let dir = plan.layout.plugin(cr, &s.name);
                let (plugin, _) = load_plugin(&dir)?;
                let (v, t) = timed_nmse(&test.samples, || feedback_batch(&test.samples, &plugin, &anchor))?;
                let tag = format!("transnet-aug{}", cfg.augment.target_size);
                rows.push(ResultRow::new(id, cr, &s.name, tag, v, plugin.ue_param_count(), train_seconds(&dir) + t));
            }
        }
        if let Some(study) = &cfg.augmentation_study {
            for strategy in &study.strategies {
                let dir = plan.layout.study(cr, strategy);
                let (params, _) = load_checkpoint(&dir)?;
                let (v, t) = timed_nmse(&anchor_test.samples, || reconstruct(&params, &anchor_test.samples))?;
                let tag = format!("aug-{strategy}");
                rows.push(ResultRow::new(id, cr, &plan.anchor.name, tag, v, params.param_count(), train_seconds(&dir) + t));
            }
        }
    }
    for r in &rows {
        progress(&format!("{:>12} CR {:<5} {:<18} {:>8.2} dB", r.scenario, cr_label(r.cr), r.method, r.nmse_db));
    }
    write_results(&rows, &plan.layout.results())?;
    Ok(rows)
}

/// Runs every stage in order and returns the result rows.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    run_experiment_with(cfg, &mut |_| {})
}

pub fn run_experiment_with(cfg: &ExperimentConfig, progress: Progress) -> Result<Vec<ResultRow>> {
    cfg.validate().map_err(|e| e.in_stage("validate"))?;
    generate_data(cfg, progress).map_err(|e| e.in_stage("generate"))?;
    train_anchors(cfg, progress).map_err(|e| e.in_stage("train-anchor"))?;
    search_shifts(cfg, progress).map_err(|e| e.in_stage("search-shift"))?;
    augment_new(cfg, progress).map_err(|e| e.in_stage("augment"))?;
    train_plugins(cfg, progress).map_err(|e| e.in_stage("train-trans"))?;
    evaluate(cfg, progress).map_err(|e| e.in_stage("eval"))
}
