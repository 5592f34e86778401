//! End-to-end experiment: configuration, dataset synthesis, evaluation and
//! ablation, plus the files each step emits.

use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chanest::{
    estimated_cfr, long_training_sequence, simulate_reception, zadoff_chu, LsEstimator, NoiseModel,
    TrainingMatrix,
};
use crate::error::{Error, Result};
use crate::learn::{
    grid_search, stratified_kfold, BoostParams, Dataset, Family, ForestParams, GridResult, MaxFeatures,
    ModelParams, ModelSpec, ParamGrid, Provenance, Task,
};
use crate::metrics::{
    fmt_metric, roc_curve, write_classification_table, write_regression_table, ClassificationReport,
    MetricsReport, RegressionReport,
};
use crate::preprocess::{self, BackgroundProfile, HampelParams, PreprocessConfig, WaveletParams};
use crate::raychan::{taps_from_paths, trace_paths, ChannelTaps, RadioConfig};
use crate::records::{assemble_dataset, median_count, CfrRecord, Combine};
use crate::scene::{count_vehicles, generate_scene, Scene, SceneConfig};
use crate::seed;

/// Receiver noise: either a direct variance or a target SNR. The SNR is
/// taken against the strongest empty-road path, at the configured receiver
/// where that path is weakest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "RawNoise")]
pub struct NoiseConfig {
    pub sigma_n_sq: Option<f64>,
    pub snr_db: Option<f64>,
}

/// A noise table naming either key gets no default for the other.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNoise {
    sigma_n_sq: Option<f64>,
    snr_db: Option<f64>,
}

impl From<RawNoise> for NoiseConfig {
    fn from(raw: RawNoise) -> Self {
        if raw.sigma_n_sq.is_none() && raw.snr_db.is_none() {
            NoiseConfig::default()
        } else {
            NoiseConfig {
                sigma_n_sq: raw.sigma_n_sq,
                snr_db: raw.snr_db,
            }
        }
    }
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            sigma_n_sq: None,
            snr_db: Some(25.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainingKind {
    ZadoffChu,
    /// 64-sample 802.11 long training symbol.
    LongTraining,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub kind: TrainingKind,
    pub root: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            kind: TrainingKind::ZadoffChu,
            root: 1,
        }
    }
}

/// Stage toggles for evaluation. Filters run over the snapshot sequence, one
/// subcarrier column at a time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessToggles {
    pub hampel: bool,
    pub wavelet: bool,
    pub background: bool,
    pub hampel_params: HampelParams,
    pub wavelet_params: WaveletParams,
}

impl Default for PreprocessToggles {
    fn default() -> Self {
        PreprocessToggles {
            hampel: false,
            wavelet: true,
            background: true,
            hampel_params: HampelParams::default(),
            wavelet_params: WaveletParams::default(),
        }
    }
}

impl PreprocessToggles {
    pub fn to_config(&self) -> PreprocessConfig {
        PreprocessConfig {
            hampel: self.hampel.then_some(self.hampel_params),
            wavelet: self.wavelet.then_some(self.wavelet_params),
            background: self.background,
        }
    }
}

/// Hyperparameter lists; each family's grid is the Cartesian product of the
/// lists it uses. A `max_depth` of 0 means unlimited.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelsConfig {
    pub families: Vec<Family>,
    pub knn_k: Vec<usize>,
    pub n_trees: Vec<usize>,
    pub max_depth: Vec<usize>,
    pub min_samples_leaf: Vec<usize>,
    /// Forest feature-subset size; per-task default (sqrt / one third) when unset.
    pub max_features: Option<MaxFeatures>,
    pub boost_stages: Vec<usize>,
    pub boost_depth: Vec<usize>,
    pub learning_rate: Vec<f64>,
}

impl Default for ModelsConfig {
    fn default() -> Self {
        ModelsConfig {
            families: Family::ALL.to_vec(),
            knn_k: vec![3, 5, 9],
            n_trees: vec![100, 300],
            max_depth: vec![8, 16, 0],
            min_samples_leaf: vec![1],
            max_features: None,
            boost_stages: vec![100, 300],
            boost_depth: vec![3, 5],
            learning_rate: vec![0.1],
        }
    }
}

fn depth(d: usize) -> Option<usize> {
    (d > 0).then_some(d)
}

impl ModelsConfig {
    pub fn grid(&self, family: Family, task: Task) -> ParamGrid {
        let max_features = self.max_features.unwrap_or(match task {
            Task::Classify => MaxFeatures::Sqrt,
            Task::Regress => MaxFeatures::Fraction(1.0 / 3.0),
        });
        let mut candidates = Vec::new();
        match family {
            Family::Knn => {
                for &k in &self.knn_k {
                    candidates.push(ModelParams::Knn { k });
                }
            }
            Family::RandomForest | Family::ExtraTrees => {
                for &n_trees in &self.n_trees {
                    for &d in &self.max_depth {
                        for &min_samples_leaf in &self.min_samples_leaf {
                            let p = ForestParams {
                                n_trees,
                                max_depth: depth(d),
                                min_samples_leaf,
                                max_features,
                            };
                            candidates.push(if family == Family::RandomForest {
                                ModelParams::RandomForest(p)
                            } else {
                                ModelParams::ExtraTrees(p)
                            });
                        }
                    }
                }
            }
            Family::GradientBoosting => {
                for &n_stages in &self.boost_stages {
                    for &d in &self.boost_depth {
                        for &learning_rate in &self.learning_rate {
                            for &min_samples_leaf in &self.min_samples_leaf {
                                candidates.push(ModelParams::GradientBoosting(BoostParams {
                                    n_stages,
                                    learning_rate,
                                    max_depth: depth(d),
                                    min_samples_leaf,
                                }));
                            }
                        }
                    }
                }
            }
        }
        ParamGrid {
            candidates: candidates
                .into_iter()
                .map(|params| ModelSpec { task, params })
                .collect(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.families.is_empty() {
            return Err(Error::config("models.families", "at least one family is required"));
        }
        let unique: BTreeSet<&str> = self.families.iter().map(|f| f.slug()).collect();
        if unique.len() != self.families.len() {
            return Err(Error::config("models.families", "families must not repeat"));
        }
        for &family in &self.families {
            for task in [Task::Classify, Task::Regress] {
                let grid = self.grid(family, task);
                if grid.candidates.is_empty() {
                    return Err(Error::config(
                        "models",
                        format!("empty hyperparameter grid for {}", family.slug()),
                    ));
                }
                for spec in &grid.candidates {
                    spec.validate().map_err(|e| Error::config("models", e.to_string()))?;
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed; every random stream derives from it.
    pub seed: u64,
    pub dataset_size: usize,
    /// Indices into `scene.rx_positions` used for features, in this order.
    pub receivers: Vec<usize>,
    pub combine: Combine,
    /// Intensity threshold; the median count of the dataset when unset.
    pub gamma: Option<usize>,
    pub folds: usize,
    pub output_dir: PathBuf,
    /// Independent LS estimates averaged per packet.
    pub estimates_per_packet: usize,
    /// Empty-road packets per receiver used for the background profile.
    pub background_frames: usize,
    pub training: TrainingConfig,
    pub noise: NoiseConfig,
    pub preprocess: PreprocessToggles,
    pub models: ModelsConfig,
    pub scene: SceneConfig,
    pub radio: RadioConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            dataset_size: 2000,
            receivers: vec![0, 1],
            combine: Combine::Concatenate,
            gamma: None,
            folds: 10,
            output_dir: PathBuf::from("results"),
            estimates_per_packet: 1,
            background_frames: 50,
            training: TrainingConfig::default(),
            noise: NoiseConfig::default(),
            preprocess: PreprocessToggles::default(),
            models: ModelsConfig::default(),
            scene: SceneConfig::default(),
            radio: RadioConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    /// Returns this config with every key present in `text` replaced by the
    /// file's value. Tables merge key by key, except `noise`, which is taken
    /// whole so a file choosing `sigma_n_sq` does not collide with an
    /// inherited `snr_db`.
    pub fn overlay_toml(&self, text: &str) -> Result<Self> {
        let top: toml::Table = toml::from_str(text)?;
        let mut base = toml::Value::try_from(self).map_err(|e| Error::Io(std::io::Error::other(e)))?;
        let table = base.as_table_mut().expect("config serializes to a table");
        for (key, value) in top {
            if key == "noise" {
                table.insert(key, value);
            } else {
                merge(table, key, value);
            }
        }
        Ok(base.try_into()?)
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.radio.validate()?;
        self.models.validate()?;
        if self.folds < 2 {
            return Err(Error::config("folds", "must be >= 2"));
        }
        if self.dataset_size < 10 * self.folds {
            return Err(Error::config(
                "dataset_size",
                format!("must be >= 10 * folds = {}", 10 * self.folds),
            ));
        }
        if self.receivers.is_empty() {
            return Err(Error::config("receivers", "at least one receiver is required"));
        }
        let unique: BTreeSet<usize> = self.receivers.iter().copied().collect();
        if unique.len() != self.receivers.len() {
            return Err(Error::config("receivers", "receivers must not repeat"));
        }
        if let Some(&bad) = self.receivers.iter().find(|&&r| r >= self.scene.rx_positions.len()) {
            return Err(Error::config(
                "receivers",
                format!("receiver {bad} has no entry in scene.rx_positions"),
            ));
        }
        if self.estimates_per_packet == 0 {
            return Err(Error::config("estimates_per_packet", "must be >= 1"));
        }
        if self.preprocess.background && self.background_frames == 0 {
            return Err(Error::config(
                "background_frames",
                "must be >= 1 when background elimination is enabled",
            ));
        }
        match (self.noise.sigma_n_sq, self.noise.snr_db) {
            (Some(s), None) if s >= 0.0 && s.is_finite() => {}
            (Some(_), None) => return Err(Error::config("noise.sigma_n_sq", "must be finite and >= 0")),
            (None, Some(snr)) if snr.is_finite() => {}
            (None, Some(_)) => return Err(Error::config("noise.snr_db", "must be finite")),
            _ => {
                return Err(Error::config(
                    "noise",
                    "set exactly one of sigma_n_sq and snr_db",
                ))
            }
        }
        if self.preprocess.hampel && self.preprocess.hampel_params.threshold < 0.0 {
            return Err(Error::config("preprocess.hampel_params.threshold", "must be >= 0"));
        }
        if self.training.kind == TrainingKind::ZadoffChu
            && gcd(self.training.root, self.radio.subcarrier_count) != 1
        {
            return Err(Error::config(
                "training.root",
                "must be coprime with the preamble length",
            ));
        }
        Ok(())
    }

    fn seeded_scene(&self) -> Arc<SceneConfig> {
        Arc::new(SceneConfig {
            rng_seed: seed::derive(self.seed, "scene", 0),
            ..self.scene.clone()
        })
    }
}

fn merge(table: &mut toml::Table, key: String, value: toml::Value) {
    match (table.get_mut(&key), value) {
        (Some(toml::Value::Table(dst)), toml::Value::Table(src)) => {
            for (k, v) in src {
                merge(dst, k, v);
            }
        }
        (_, value) => {
            table.insert(key, value);
        }
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Channel simulation shared by every packet of a run.
struct Receiver {
    estimator: LsEstimator,
    sigma_n_sq: f64,
    subcarriers: usize,
    estimates: usize,
    seed: u64,
}

impl Receiver {
    fn new(cfg: &ExperimentConfig, empty: &Scene) -> Result<Self> {
        let l = cfg.radio.tap_count;
        let seq = match cfg.training.kind {
            TrainingKind::ZadoffChu => zadoff_chu(cfg.radio.subcarrier_count, cfg.training.root, l)?,
            TrainingKind::LongTraining => long_training_sequence(l)?,
        };
        let estimator = LsEstimator::new(TrainingMatrix::from_sequence(&seq, l)?)?;
        let sigma_n_sq = match (cfg.noise.sigma_n_sq, cfg.noise.snr_db) {
            (Some(s), _) => s,
            (None, Some(snr)) => {
                let weakest = cfg
                    .receivers
                    .iter()
                    .map(|&rx| {
                        let paths = trace_paths(empty, &cfg.radio, rx)?;
                        Ok(paths.paths.first().map_or(0.0, |p| p.gain.norm_sqr()))
                    })
                    .collect::<Result<Vec<f64>>>()?
                    .into_iter()
                    .fold(f64::INFINITY, f64::min);
                weakest / 10f64.powf(snr / 10.0)
            }
            (None, None) => return Err(Error::config("noise", "no noise level configured")),
        };
        Ok(Receiver {
            estimator,
            sigma_n_sq,
            subcarriers: cfg.radio.subcarrier_count,
            estimates: cfg.estimates_per_packet,
            seed: cfg.seed,
        })
    }

    /// Magnitude of the (averaged) estimated CFR for one packet.
    fn packet(&self, taps: &ChannelTaps, stream: &str, rx: usize, index: u64) -> Result<Vec<f64>> {
        let stream_seed = seed::derive(self.seed, stream, rx as u64);
        let mut acc = vec![Complex64::new(0.0, 0.0); self.subcarriers];
        for e in 0..self.estimates {
            let noise = NoiseModel {
                sigma_n_sq: self.sigma_n_sq,
                rng_seed: seed::derive(stream_seed, "packet", index * self.estimates as u64 + e as u64),
            };
            let y = simulate_reception(taps, self.estimator.training(), &noise)?;
            let h_hat = self.estimator.estimate(&y)?;
            let cfr = estimated_cfr(&h_hat, self.subcarriers)?;
            acc.iter_mut().zip(&cfr.values).for_each(|(a, v)| *a += v);
        }
        let scale = 1.0 / self.estimates as f64;
        Ok(acc.iter().map(|v| (v * scale).norm()).collect())
    }
}

fn clean_taps(scene: &Scene, radio: &RadioConfig, rx: usize) -> Result<ChannelTaps> {
    taps_from_paths(&trace_paths(scene, radio, rx)?, radio)
}

/// Output of a synthesis run.
#[derive(Debug, Clone, PartialEq)]
pub struct Synthesis {
    pub records: Vec<CfrRecord>,
    pub background: Vec<CfrRecord>,
    pub noise_variance: f64,
    pub gamma: usize,
}

impl Synthesis {
    pub fn dataset(&self, cfg: &ExperimentConfig) -> Result<Dataset> {
        assemble_dataset(
            &self.records,
            &cfg.receivers,
            cfg.combine,
            self.gamma,
            Provenance::Synthetic,
        )
    }
}

/// Generates `dataset_size` snapshots and `background_frames` empty-road
/// packets. Snapshots run in parallel; output order is by snapshot index.
pub fn synthesize(cfg: &ExperimentConfig) -> Result<Synthesis> {
    cfg.validate()?;
    let scene_cfg = cfg.seeded_scene();
    let empty = Scene {
        config: Arc::clone(&scene_cfg),
        vehicles: Vec::new(),
        snapshot_index: 0,
    };
    let receiver = Receiver::new(cfg, &empty)?;
    let region = scene_cfg.region();

    let per_snapshot: Vec<Vec<CfrRecord>> = (0..cfg.dataset_size as u64)
        .into_par_iter()
        .map(|i| {
            let scene = generate_scene(&scene_cfg, i)?;
            let count = count_vehicles(&scene, region);
            cfg.receivers
                .iter()
                .map(|&rx| {
                    let taps = clean_taps(&scene, &cfg.radio, rx)?;
                    Ok(CfrRecord {
                        snapshot: i,
                        receiver: rx,
                        count,
                        magnitudes: receiver.packet(&taps, "noise", rx, i)?,
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let records: Vec<CfrRecord> = per_snapshot.into_iter().flatten().collect();

    let empty_taps = cfg
        .receivers
        .iter()
        .map(|&rx| clean_taps(&empty, &cfg.radio, rx))
        .collect::<Result<Vec<_>>>()?;
    let frames = if cfg.preprocess.background {
        cfg.background_frames
    } else {
        0
    };
    let per_frame: Vec<Vec<CfrRecord>> = (0..frames as u64)
        .into_par_iter()
        .map(|b| {
            cfg.receivers
                .iter()
                .zip(&empty_taps)
                .map(|(&rx, taps)| {
                    Ok(CfrRecord {
                        snapshot: b,
                        receiver: rx,
                        count: 0,
                        magnitudes: receiver.packet(taps, "background", rx, b)?,
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let gamma = match cfg.gamma {
        Some(g) => g,
        None => median_count(&records).ok_or_else(|| Error::Data("no snapshots synthesized".into()))?,
    };
    Ok(Synthesis {
        records,
        background: per_frame.into_iter().flatten().collect(),
        noise_variance: receiver.sigma_n_sq,
        gamma,
    })
}

/// Everything needed to reproduce a synthesis run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    pub config: ExperimentConfig,
    pub gamma: usize,
    pub noise_variance: f64,
    pub snapshots: usize,
    pub min_count: usize,
    pub max_count: usize,
}

pub const DATASET_FILE: &str = "dataset.csv";
pub const BACKGROUND_FILE: &str = "background.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

/// Writes `dataset.csv`, `background.csv` (when present) and `manifest.json`.
pub fn write_synthesis(dir: &Path, cfg: &ExperimentConfig, syn: &Synthesis) -> Result<Manifest> {
    fs::create_dir_all(dir)?;
    crate::records::write_records(create(&dir.join(DATASET_FILE))?, &syn.records)?;
    if !syn.background.is_empty() {
        crate::records::write_records(create(&dir.join(BACKGROUND_FILE))?, &syn.background)?;
    }
    let counts = syn.records.iter().map(|r| r.count);
    let manifest = Manifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.clone(),
        gamma: syn.gamma,
        noise_variance: syn.noise_variance,
        snapshots: cfg.dataset_size,
        min_count: counts.clone().min().unwrap_or(0),
        max_count: counts.max().unwrap_or(0),
    };
    let mut w = create(&dir.join(MANIFEST_FILE))?;
    serde_json::to_writer_pretty(&mut w, &manifest)?;
    writeln!(w)?;
    w.flush()?;
    Ok(manifest)
}

/// Applies the configured preprocessing to an assembled dataset. The
/// background profile comes from `background` records when given, otherwise
/// from the dataset's own zero-count snapshots.
pub fn preprocess_dataset(
    dataset: &Dataset,
    toggles: &PreprocessToggles,
    background: Option<&[CfrRecord]>,
    receivers: &[usize],
    combine: Combine,
) -> Result<Dataset> {
    let config = toggles.to_config();
    let profile = if config.background {
        let frames: Vec<Vec<f64>> = match background {
            Some(recs) if !recs.is_empty() => {
                assemble_dataset(recs, receivers, combine, 0, Provenance::Synthetic)?
                    .samples
                    .into_iter()
                    .map(|s| s.features)
                    .collect()
            }
            _ => dataset
                .samples
                .iter()
                .filter(|s| s.count == 0)
                .map(|s| s.features.clone())
                .collect(),
        };
        if frames.is_empty() {
            return Err(Error::Data(
                "background elimination needs empty-road frames or zero-count snapshots".into(),
            ));
        }
        Some(BackgroundProfile::from_magnitudes(&frames)?)
    } else {
        None
    };
    let rows: Vec<Vec<f64>> = dataset.samples.iter().map(|s| s.features.clone()).collect();
    let filtered = preprocess::apply(&rows, &config, profile.as_ref())?;
    let mut out = dataset.clone();
    for (s, f) in out.samples.iter_mut().zip(filtered) {
        s.features = f;
    }
    Ok(out)
}

/// Best grid point and its cross-validation for one family and task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyResult {
    pub family: Family,
    pub grid: GridResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub gamma: usize,
    pub classification: Vec<FamilyResult>,
    pub regression: Vec<FamilyResult>,
}

impl Evaluation {
    pub fn classification_rows(&self) -> Vec<(String, ClassificationReport)> {
        self.classification
            .iter()
            .filter_map(|r| match &r.grid.best.report {
                MetricsReport::Classification(c) => Some((r.family.display_name().to_string(), c.clone())),
                MetricsReport::Regression(_) => None,
            })
            .collect()
    }

    pub fn regression_rows(&self) -> Vec<(String, RegressionReport)> {
        self.regression
            .iter()
            .filter_map(|r| match &r.grid.best.report {
                MetricsReport::Regression(c) => Some((r.family.display_name().to_string(), c.clone())),
                MetricsReport::Classification(_) => None,
            })
            .collect()
    }

    pub fn classification_for(&self, family: Family) -> Option<&ClassificationReport> {
        self.classification.iter().find(|r| r.family == family).and_then(|r| match &r.grid.best.report {
            MetricsReport::Classification(c) => Some(c),
            MetricsReport::Regression(_) => None,
        })
    }

    pub fn regression_for(&self, family: Family) -> Option<&RegressionReport> {
        self.regression.iter().find(|r| r.family == family).and_then(|r| match &r.grid.best.report {
            MetricsReport::Regression(c) => Some(c),
            MetricsReport::Classification(_) => None,
        })
    }
}

/// Grid search with stratified k-fold CV for every configured family, for
/// classification and regression. All families of a task share one fold
/// assignment.
pub fn evaluate(dataset: &Dataset, models: &ModelsConfig, folds: usize, master_seed: u64) -> Result<Evaluation> {
    let run = |task: Task| -> Result<Vec<FamilyResult>> {
        let fold_seed = seed::derive(master_seed, "folds", task as u64);
        let assignment = stratified_kfold(dataset, task, folds, fold_seed)?;
        models
            .families
            .iter()
            .map(|&family| {
                let model_seed = seed::derive(master_seed, family.slug(), task as u64);
                let grid = grid_search(&models.grid(family, task), dataset, &assignment, model_seed)?;
                log::info!(
                    "{:?} {}: best candidate {} of {}",
                    task,
                    family.slug(),
                    grid.best_index + 1,
                    grid.scores.len()
                );
                Ok(FamilyResult { family, grid })
            })
            .collect()
    };
    Ok(Evaluation {
        gamma: dataset.gamma,
        classification: run(Task::Classify)?,
        regression: run(Task::Regress)?,
    })
}

/// Writes result tables, per-fold metrics, ROC points, actual-vs-estimated
/// pairs and the selected hyperparameters into `dir`.
pub fn write_evaluation(dir: &Path, eval: &Evaluation) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_classification_table(create(&dir.join("classification.csv"))?, &eval.classification_rows())?;
    write_regression_table(create(&dir.join("regression.csv"))?, &eval.regression_rows())?;

    let mut w = csv::Writer::from_writer(create(&dir.join("folds_classification.csv"))?);
    w.write_record(["Algorithm", "Fold", "Accuracy", "Precision", "Recall", "F1", "AUC"])?;
    for (name, report) in eval.classification_rows() {
        for (i, m) in report.folds.iter().enumerate() {
            w.write_record([
                name.clone(),
                i.to_string(),
                fmt_metric(Some(m.accuracy)),
                fmt_metric(m.precision),
                fmt_metric(m.recall),
                fmt_metric(m.f1),
                fmt_metric(m.auc),
            ])?;
        }
    }
    w.flush()?;

    let mut w = csv::Writer::from_writer(create(&dir.join("folds_regression.csv"))?);
    w.write_record(["Algorithm", "Fold", "MAE", "WMAPE", "Correlation Coef."])?;
    for (name, report) in eval.regression_rows() {
        for (i, m) in report.folds.iter().enumerate() {
            w.write_record([
                name.clone(),
                i.to_string(),
                fmt_metric(Some(m.mae)),
                fmt_metric(m.wmape),
                fmt_metric(m.pearson),
            ])?;
        }
    }
    w.flush()?;

    for r in &eval.classification {
        let oof = &r.grid.best.out_of_fold;
        let scores: Vec<f64> = oof.iter().map(|o| o.prediction.score()).collect();
        let labels: Vec<_> = oof.iter().map(|o| o.label).collect();
        let mut w = csv::Writer::from_writer(create(&dir.join(format!("roc_{}.csv", r.family.slug())))?);
        w.write_record(["fpr", "tpr"])?;
        if let Ok(curve) = roc_curve(&scores, &labels) {
            for (fpr, tpr) in curve {
                w.write_record([fpr.to_string(), tpr.to_string()])?;
            }
        }
        w.flush()?;
    }
    for r in &eval.regression {
        let mut w = csv::Writer::from_writer(create(&dir.join(format!("estimates_{}.csv", r.family.slug())))?);
        w.write_record(["snapshot", "fold", "actual", "estimated"])?;
        for o in &r.grid.best.out_of_fold {
            w.write_record([
                o.snapshot.to_string(),
                o.fold.to_string(),
                o.count.to_string(),
                o.prediction.score().to_string(),
            ])?;
        }
        w.flush()?;
    }

    let mut w = create(&dir.join("best_params.json"))?;
    let body: Vec<serde_json::Value> = eval
        .classification
        .iter()
        .map(|r| (Task::Classify, r))
        .chain(eval.regression.iter().map(|r| (Task::Regress, r)))
        .map(|(task, r)| {
            serde_json::json!({
                "task": task,
                "family": r.family,
                "best": r.grid.best.spec.params,
                "grid_scores": r.grid.scores,
            })
        })
        .collect();
    serde_json::to_writer_pretty(&mut w, &body)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// One row of the ablation table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub receivers: Vec<usize>,
    pub family: Family,
    pub accuracy: Option<f64>,
    pub auc: Option<f64>,
    pub f1: Option<f64>,
    pub mae: Option<f64>,
    pub wmape: Option<f64>,
    pub pearson: Option<f64>,
}

/// Variants: the configured pipeline; each enabled preprocessing stage
/// switched off in turn; every stage off; and, with several receivers, each
/// receiver alone under the configured preprocessing.
pub fn ablation_variants(cfg: &ExperimentConfig) -> Vec<(String, PreprocessToggles, Vec<usize>)> {
    let base = cfg.preprocess;
    let mut out = vec![("configured".to_string(), base, cfg.receivers.clone())];
    if base.hampel {
        out.push(("without_hampel".into(), PreprocessToggles { hampel: false, ..base }, cfg.receivers.clone()));
    }
    if base.wavelet {
        out.push(("without_wavelet".into(), PreprocessToggles { wavelet: false, ..base }, cfg.receivers.clone()));
    }
    if base.background {
        out.push((
            "without_background".into(),
            PreprocessToggles { background: false, ..base },
            cfg.receivers.clone(),
        ));
    }
    if base.hampel || base.wavelet || base.background {
        out.push((
            "no_preprocessing".into(),
            PreprocessToggles {
                hampel: false,
                wavelet: false,
                background: false,
                ..base
            },
            cfg.receivers.clone(),
        ));
    }
    if cfg.receivers.len() > 1 {
        for &rx in &cfg.receivers {
            out.push((format!("receiver_{rx}_only"), base, vec![rx]));
        }
    }
    out
}

pub fn ablate(cfg: &ExperimentConfig, records: &[CfrRecord], background: Option<&[CfrRecord]>, gamma: usize) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    for (variant, toggles, receivers) in ablation_variants(cfg) {
        log::info!("ablation variant {variant}");
        let raw = assemble_dataset(records, &receivers, cfg.combine, gamma, Provenance::Synthetic)?;
        let data = preprocess_dataset(&raw, &toggles, background, &receivers, cfg.combine)?;
        let eval = evaluate(&data, &cfg.models, cfg.folds, cfg.seed)?;
        for &family in &cfg.models.families {
            let c = eval.classification_for(family);
            let r = eval.regression_for(family);
            rows.push(AblationRow {
                variant: variant.clone(),
                receivers: receivers.clone(),
                family,
                accuracy: c.and_then(|c| c.accuracy.mean),
                auc: c.and_then(|c| c.auc.mean),
                f1: c.and_then(|c| c.f1.mean),
                mae: r.and_then(|r| r.mae.mean),
                wmape: r.and_then(|r| r.wmape.mean),
                pearson: r.and_then(|r| r.pearson.mean),
            });
        }
    }
    Ok(rows)
}

pub fn write_ablation<W: Write>(writer: W, rows: &[AblationRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "Variant",
        "Receivers",
        "Algorithm",
        "Accuracy",
        "AUC",
        "F1",
        "MAE",
        "WMAPE",
        "Correlation Coef.",
    ])?;
    for r in rows {
        let receivers: Vec<String> = r.receivers.iter().map(usize::to_string).collect();
        w.write_record([
            r.variant.clone(),
            receivers.join("+"),
            r.family.display_name().to_string(),
            fmt_metric(r.accuracy),
            fmt_metric(r.auc),
            fmt_metric(r.f1),
            fmt_metric(r.mae),
            fmt_metric(r.wmape),
            fmt_metric(r.pearson),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Renders the CSV tables found in `dir` as aligned plain-text tables.
pub fn render_report(dir: &Path) -> Result<String> {
    let mut out = String::new();
    let mut found = false;
    for (title, file) in [
        ("Classification", "classification.csv"),
        ("Regression", "regression.csv"),
        ("Ablation", "ablation.csv"),
    ] {
        let path = dir.join(file);
        if !path.exists() {
            continue;
        }
        found = true;
        let mut rdr = csv::Reader::from_path(&path)?;
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let rows: Vec<Vec<String>> = rdr
            .records()
            .map(|r| r.map(|r| r.iter().map(str::to_string).collect()))
            .collect::<std::result::Result<_, _>>()?;
        let widths: Vec<usize> = (0..header.len())
            .map(|c| {
                rows.iter()
                    .filter_map(|r| r.get(c))
                    .chain(std::iter::once(&header[c]))
                    .map(|s| s.chars().count())
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let line = |cells: &[String]| -> String {
            cells
                .iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c:<w$}"))
                .collect::<Vec<_>>()
                .join("  ")
                .trim_end()
                .to_string()
        };
        out.push_str(&format!("{title}\n"));
        out.push_str(&line(&header));
        out.push('\n');
        out.push_str(&widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("  "));
        out.push('\n');
        for r in &rows {
            out.push_str(&line(r));
            out.push('\n');
        }
        out.push('\n');
    }
    if !found {
        return Err(Error::Data(format!("no result tables in {}", dir.display())));
    }
    Ok(out)
}
