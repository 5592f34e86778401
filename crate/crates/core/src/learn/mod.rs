//! Supervised learners mapping magnitude-CFR features to traffic intensity
//! (classification) and vehicle counts (regression).
//!
//! Families: k-nearest neighbors, random forest, extremely randomized trees
//! and gradient boosting. Everything is seed-deterministic for a fixed input
//! order; tree ensembles derive one stream per tree so results do not depend
//! on the size of the worker pool.

mod boost;
pub mod cv;
mod data;
mod forest;
mod knn;
pub mod tree;

use std::io::{Read, Write};

use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use self::cv::{
    cross_validate, grid_search, stratified_kfold, CvResult, FoldAssignment, GridResult, OutOfFold,
    ParamGrid,
};
pub use self::data::{Dataset, Provenance, Sample};
pub use self::tree::{MaxFeatures, SplitRule};
use self::tree::{Columns, Tree, TreeParams};
use crate::error::{Error, Result};
use crate::scene::Label;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Knn,
    RandomForest,
    ExtraTrees,
    GradientBoosting,
}

impl Family {
    pub const ALL: [Family; 4] = [
        Family::ExtraTrees,
        Family::RandomForest,
        Family::GradientBoosting,
        Family::Knn,
    ];

    /// Row name used in result tables.
    pub fn display_name(self) -> &'static str {
        match self {
            Family::Knn => "KNN",
            Family::RandomForest => "Random Forest",
            Family::ExtraTrees => "Extra Trees",
            Family::GradientBoosting => "Gradient Boosting",
        }
    }

    pub fn slug(self) -> &'static str {
        match self {
            Family::Knn => "knn",
            Family::RandomForest => "random_forest",
            Family::ExtraTrees => "extra_trees",
            Family::GradientBoosting => "gradient_boosting",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Classify,
    Regress,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    pub max_features: MaxFeatures,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoostParams {
    pub n_stages: usize,
    pub learning_rate: f64,
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelParams {
    Knn { k: usize },
    RandomForest(ForestParams),
    ExtraTrees(ForestParams),
    GradientBoosting(BoostParams),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub task: Task,
    pub params: ModelParams,
}

impl ModelSpec {
    pub fn family(&self) -> Family {
        match self.params {
            ModelParams::Knn { .. } => Family::Knn,
            ModelParams::RandomForest(_) => Family::RandomForest,
            ModelParams::ExtraTrees(_) => Family::ExtraTrees,
            ModelParams::GradientBoosting(_) => Family::GradientBoosting,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Parameter(format!("{what} must be positive")));
        match self.params {
            ModelParams::Knn { k } if k == 0 => bad("k"),
            ModelParams::RandomForest(p) | ModelParams::ExtraTrees(p) => {
                if p.n_trees == 0 {
                    bad("n_trees")
                } else if p.min_samples_leaf == 0 {
                    bad("min_samples_leaf")
                } else if matches!(p.max_features, MaxFeatures::Count(0))
                    || matches!(p.max_features, MaxFeatures::Fraction(f) if !(f > 0.0))
                {
                    bad("max_features")
                } else {
                    Ok(())
                }
            }
            ModelParams::GradientBoosting(p) => {
                if !(p.learning_rate > 0.0) {
                    bad("learning_rate")
                } else if p.min_samples_leaf == 0 {
                    bad("min_samples_leaf")
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    /// Family defaults: 100 trees, unlimited depth, sqrt features for
    /// classification and a third of the features for regression; boosting
    /// with 100 depth-3 stages at rate 0.1; 5 neighbors.
    pub fn default_for(family: Family, task: Task) -> Self {
        let max_features = match task {
            Task::Classify => MaxFeatures::Sqrt,
            Task::Regress => MaxFeatures::Fraction(1.0 / 3.0),
        };
        let forest = ForestParams {
            n_trees: 100,
            max_depth: None,
            min_samples_leaf: 1,
            max_features,
        };
        let params = match family {
            Family::Knn => ModelParams::Knn { k: 5 },
            Family::RandomForest => ModelParams::RandomForest(forest),
            Family::ExtraTrees => ModelParams::ExtraTrees(forest),
            Family::GradientBoosting => ModelParams::GradientBoosting(BoostParams {
                n_stages: 100,
                learning_rate: 0.1,
                max_depth: Some(3),
                min_samples_leaf: 1,
            }),
        };
        ModelSpec { task, params }
    }
}

/// Fitted parameters of a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ModelState {
    Knn(knn::Knn),
    Forest { trees: Vec<Tree> },
    Boosted(boost::Boosted),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub spec: ModelSpec,
    pub n_features: usize,
    pub state: ModelState,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Prediction {
    /// `score` is the positive-class vote fraction or probability.
    Class { label: Label, score: f64 },
    Value(f64),
}

impl Prediction {
    pub fn label(&self) -> Option<Label> {
        match self {
            Prediction::Class { label, .. } => Some(*label),
            Prediction::Value(_) => None,
        }
    }

    pub fn score(&self) -> f64 {
        match self {
            Prediction::Class { score, .. } => *score,
            Prediction::Value(v) => *v,
        }
    }
}

/// Target encoding: 1 for heavy, 0 for light, or the raw count.
pub(crate) fn target(sample: &Sample, task: Task) -> f64 {
    match task {
        Task::Classify => f64::from(u8::from(sample.label.is_positive())),
        Task::Regress => sample.count as f64,
    }
}

pub fn fit(spec: &ModelSpec, train: &Dataset, seed: u64) -> Result<TrainedModel> {
    let refs: Vec<&Sample> = train.samples.iter().collect();
    fit_samples(spec, &refs, seed)
}

pub fn fit_samples(spec: &ModelSpec, train: &[&Sample], seed: u64) -> Result<TrainedModel> {
    spec.validate()?;
    let first = train
        .first()
        .ok_or_else(|| Error::Data("training set is empty".into()))?;
    let n_features = first.features.len();
    if let Some(bad) = train.iter().find(|s| s.features.len() != n_features) {
        return Err(Error::Shape {
            expected: n_features,
            got: bad.features.len(),
        });
    }
    if train.iter().any(|s| s.features.iter().any(|v| !v.is_finite())) {
        return Err(Error::Data("non-finite training feature".into()));
    }
    let rows: Vec<&[f64]> = train.iter().map(|s| s.features.as_slice()).collect();
    let targets: Vec<f64> = train.iter().map(|s| target(s, spec.task)).collect();

    let state = match spec.params {
        ModelParams::Knn { k } => ModelState::Knn(knn::Knn::fit(&rows, &targets, k)),
        ModelParams::RandomForest(p) => ModelState::Forest {
            trees: forest::fit(&rows, &targets, &p, SplitRule::Best, true, seed),
        },
        ModelParams::ExtraTrees(p) => ModelState::Forest {
            trees: forest::fit(&rows, &targets, &p, SplitRule::Random, false, seed),
        },
        ModelParams::GradientBoosting(p) => {
            let columns = Columns::from_rows(&rows);
            let tree_params = TreeParams {
                max_depth: p.max_depth,
                min_samples_leaf: p.min_samples_leaf,
                max_features: MaxFeatures::All,
                split: SplitRule::Best,
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed, "boost", 0));
            let b = match spec.task {
                Task::Regress => boost::fit_squared(&columns, &rows, &targets, &p, &tree_params, &mut rng),
                Task::Classify => {
                    let b = boost::fit_logistic(&columns, &rows, &targets, &p, &tree_params, &mut rng);
                    if b.is_degenerate() {
                        warn!("single-class training set; boosting falls back to a constant model");
                    }
                    b
                }
            };
            ModelState::Boosted(b)
        }
    };
    Ok(TrainedModel {
        spec: *spec,
        n_features,
        state,
    })
}

fn classify(score: f64) -> Label {
    if score > 0.5 {
        Label::Heavy
    } else {
        Label::Light
    }
}

pub fn predict(model: &TrainedModel, features: &[f64]) -> Result<Prediction> {
    if features.len() != model.n_features {
        return Err(Error::Shape {
            expected: model.n_features,
            got: features.len(),
        });
    }
    let raw = match &model.state {
        ModelState::Knn(k) => k.predict(features),
        ModelState::Forest { trees } => {
            trees.iter().map(|t| t.predict(features)).sum::<f64>() / trees.len() as f64
        }
        ModelState::Boosted(b) => match model.spec.task {
            Task::Regress => b.raw(features),
            Task::Classify => b.probability(features),
        },
    };
    Ok(match model.spec.task {
        Task::Classify => {
            let score = raw.clamp(0.0, 1.0);
            Prediction::Class {
                label: classify(score),
                score,
            }
        }
        Task::Regress => Prediction::Value(raw),
    })
}

const MODEL_FORMAT: &str = "dsrc-traffic-model";
const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    model: TrainedModel,
}

impl TrainedModel {
    /// Versioned JSON; floats round-trip exactly.
    pub fn save<W: Write>(&self, writer: W) -> Result<()> {
        let file = ModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            model: self.clone(),
        };
        serde_json::to_writer(writer, &file)?;
        Ok(())
    }

    pub fn load<R: Read>(reader: R) -> Result<Self> {
        let file: ModelFile = serde_json::from_reader(reader)?;
        if file.format != MODEL_FORMAT {
            return Err(Error::Data(format!("not a model file: format {:?}", file.format)));
        }
        if file.version != MODEL_VERSION {
            return Err(Error::Data(format!(
                "unsupported model version {} (expected {MODEL_VERSION})",
                file.version
            )));
        }
        Ok(file.model)
    }
}
