//! Stratified k-fold cross-validation and exhaustive grid search.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fit_samples, predict, BoostParams, Dataset, Family, ForestParams, ModelParams, ModelSpec, Prediction, Sample, Task};
use crate::error::{Error, Result};
use crate::metrics::{
    classification_metrics, regression_metrics, ClassificationReport, MetricsReport, RegressionReport,
};
use crate::scene::Label;
use crate::seed;

/// Number of count-quantile bins used to stratify regression folds.
pub const REGRESSION_BINS: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    /// Fold index of each sample, in dataset order.
    pub fold_of: Vec<usize>,
}

impl FoldAssignment {
    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_of.len()).filter(|&i| self.fold_of[i] == fold).collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_of.len()).filter(|&i| self.fold_of[i] != fold).collect()
    }
}

/// Stratum of each sample: the label for classification, a count-quantile bin
/// for regression (ties in count broken by dataset position).
fn strata(dataset: &Dataset, task: Task) -> Vec<usize> {
    match task {
        Task::Classify => dataset
            .samples
            .iter()
            .map(|s| usize::from(s.label.is_positive()))
            .collect(),
        Task::Regress => {
            let n = dataset.len();
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by_key(|&i| (dataset.samples[i].count, i));
            let mut out = vec![0; n];
            for (rank, &i) in order.iter().enumerate() {
                out[i] = rank * REGRESSION_BINS / n;
            }
            out
        }
    }
}

/// Shuffles each stratum, concatenates them and deals positions round-robin
/// into `k` folds. Every stratum is then spread as evenly as possible.
pub fn stratified_kfold(dataset: &Dataset, task: Task, k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(Error::Parameter(format!("k must be at least 2, got {k}")));
    }
    if dataset.len() < k {
        return Err(Error::Stratification(format!(
            "{} samples cannot fill {k} folds",
            dataset.len()
        )));
    }
    let strata = strata(dataset, task);
    let n_strata = strata.iter().max().map_or(0, |m| m + 1);
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); n_strata];
    for (i, &s) in strata.iter().enumerate() {
        groups[s].push(i);
    }
    if task == Task::Classify {
        for (s, g) in groups.iter().enumerate() {
            if !g.is_empty() && g.len() < k {
                let name = if s == 1 { Label::Heavy } else { Label::Light };
                return Err(Error::Stratification(format!(
                    "class {name:?} has {} samples, fewer than k = {k}",
                    g.len()
                )));
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed, "folds", 0));
    let mut fold_of = vec![0; dataset.len()];
    let mut pos = 0;
    for g in &mut groups {
        g.shuffle(&mut rng);
        for &i in g.iter() {
            fold_of[i] = pos % k;
            pos += 1;
        }
    }
    Ok(FoldAssignment { k, fold_of })
}

/// One held-out prediction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutOfFold {
    pub index: usize,
    pub snapshot: u64,
    pub fold: usize,
    pub count: usize,
    pub label: Label,
    pub prediction: Prediction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub spec: ModelSpec,
    pub report: MetricsReport,
    /// Held-out predictions in dataset order.
    pub out_of_fold: Vec<OutOfFold>,
}

impl CvResult {
    /// Mean accuracy for classification, negated mean MAE for regression.
    /// Higher is better.
    pub fn selection_score(&self) -> f64 {
        match &self.report {
            MetricsReport::Classification(r) => r.accuracy.mean.unwrap_or(f64::NEG_INFINITY),
            MetricsReport::Regression(r) => r.mae.mean.map_or(f64::NEG_INFINITY, |m| -m),
        }
    }
}

/// Trains on k-1 folds and scores the held-out fold, for every fold. Folds
/// run in parallel; fold `f` trains with a seed derived from `(seed, f)`.
pub fn cross_validate(spec: &ModelSpec, dataset: &Dataset, folds: &FoldAssignment, seed: u64) -> Result<CvResult> {
    if folds.fold_of.len() != dataset.len() {
        return Err(Error::Shape {
            expected: dataset.len(),
            got: folds.fold_of.len(),
        });
    }
    let per_fold: Vec<Vec<OutOfFold>> = (0..folds.k)
        .into_par_iter()
        .map(|f| {
            let train: Vec<&Sample> = folds.train_indices(f).into_iter().map(|i| &dataset.samples[i]).collect();
            let model = fit_samples(spec, &train, seed::derive(seed, "fold", f as u64))?;
            folds
                .test_indices(f)
                .into_iter()
                .map(|i| {
                    let s = &dataset.samples[i];
                    Ok(OutOfFold {
                        index: i,
                        snapshot: s.snapshot,
                        fold: f,
                        count: s.count,
                        label: s.label,
                        prediction: predict(&model, &s.features)?,
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let report = match spec.task {
        Task::Classify => {
            let metrics = per_fold
                .iter()
                .map(|fold| {
                    let labels: Vec<Label> = fold.iter().map(|o| o.label).collect();
                    let preds: Vec<Label> = fold.iter().filter_map(|o| o.prediction.label()).collect();
                    let scores: Vec<f64> = fold.iter().map(|o| o.prediction.score()).collect();
                    classification_metrics(&labels, &preds, Some(&scores))
                })
                .collect::<Result<Vec<_>>>()?;
            MetricsReport::Classification(ClassificationReport::from_folds(metrics))
        }
        Task::Regress => {
            let metrics = per_fold
                .iter()
                .map(|fold| {
                    let actual: Vec<f64> = fold.iter().map(|o| o.count as f64).collect();
                    let est: Vec<f64> = fold.iter().map(|o| o.prediction.score()).collect();
                    regression_metrics(&actual, &est)
                })
                .collect::<Result<Vec<_>>>()?;
            MetricsReport::Regression(RegressionReport::from_folds(metrics))
        }
    };
    let mut out_of_fold: Vec<OutOfFold> = per_fold.into_iter().flatten().collect();
    out_of_fold.sort_by_key(|o| o.index);
    Ok(CvResult {
        spec: *spec,
        report,
        out_of_fold,
    })
}

/// Candidate specs, tried in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamGrid {
    pub candidates: Vec<ModelSpec>,
}

impl ParamGrid {
    pub fn single(spec: ModelSpec) -> Self {
        ParamGrid { candidates: vec![spec] }
    }

    /// Forests: trees {100, 300} x depth {8, 16, unlimited}. Boosting: stages
    /// {100, 300} x depth {3, 5}. KNN: k in {3, 5, 9}.
    pub fn default_for(family: Family, task: Task) -> Self {
        let base = ModelSpec::default_for(family, task);
        let candidates = match base.params {
            ModelParams::Knn { .. } => [3, 5, 9]
                .into_iter()
                .map(|k| ModelSpec { task, params: ModelParams::Knn { k } })
                .collect(),
            ModelParams::RandomForest(p) | ModelParams::ExtraTrees(p) => {
                let mut out = Vec::new();
                for n_trees in [100, 300] {
                    for max_depth in [Some(8), Some(16), None] {
                        let fp = ForestParams { n_trees, max_depth, ..p };
                        let params = if family == Family::RandomForest {
                            ModelParams::RandomForest(fp)
                        } else {
                            ModelParams::ExtraTrees(fp)
                        };
                        out.push(ModelSpec { task, params });
                    }
                }
                out
            }
            ModelParams::GradientBoosting(p) => {
                let mut out = Vec::new();
                for n_stages in [100, 300] {
                    for depth in [3, 5] {
                        out.push(ModelSpec {
                            task,
                            params: ModelParams::GradientBoosting(BoostParams {
                                n_stages,
                                max_depth: Some(depth),
                                ..p
                            }),
                        });
                    }
                }
                out
            }
        };
        ParamGrid { candidates }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub best_index: usize,
    pub best: CvResult,
    /// Selection score of every candidate, in grid order.
    pub scores: Vec<f64>,
}

/// Cross-validates every candidate on the same folds and keeps the highest
/// selection score; the earliest candidate wins ties.
pub fn grid_search(grid: &ParamGrid, dataset: &Dataset, folds: &FoldAssignment, seed: u64) -> Result<GridResult> {
    if grid.candidates.is_empty() {
        return Err(Error::Parameter("empty parameter grid".into()));
    }
    let mut best: Option<(usize, CvResult)> = None;
    let mut scores = Vec::with_capacity(grid.candidates.len());
    for (i, spec) in grid.candidates.iter().enumerate() {
        let r = cross_validate(spec, dataset, folds, seed)?;
        let s = r.selection_score();
        scores.push(s);
        if best.as_ref().map_or(true, |(_, b)| s > b.selection_score()) {
            best = Some((i, r));
        }
    }
    let (best_index, best) = best.expect("grid is non-empty");
    Ok(GridResult {
        best_index,
        best,
        scores,
    })
}
