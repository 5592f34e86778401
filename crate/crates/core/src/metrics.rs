//! Classification and regression scores, and cross-validation aggregation.
//!
//! Heavy traffic (`Label::Heavy`) is the positive class throughout. Metrics
//! whose formula has a zero denominator are reported as `None` instead of 0.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::Label;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub auc: Option<f64>,
    pub confusion: Confusion,
}

impl ClassificationMetrics {
    /// `E(c)`, the fraction of misclassified samples.
    pub fn error_rate(&self) -> f64 {
        1.0 - self.accuracy
    }
}

fn ratio(num: f64, den: f64) -> Option<f64> {
    (den != 0.0).then(|| num / den)
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Shape {
            expected: a,
            got: b,
        });
    }
    if a == 0 {
        return Err(Error::Data("metrics need at least one sample".into()));
    }
    Ok(())
}

/// Accuracy, precision, recall and F1; AUC as well when `scores` is given and
/// both classes occur.
pub fn classification_metrics(
    labels: &[Label],
    predictions: &[Label],
    scores: Option<&[f64]>,
) -> Result<ClassificationMetrics> {
    check_lengths(labels.len(), predictions.len())?;
    let mut c = Confusion::default();
    for (&truth, &pred) in labels.iter().zip(predictions) {
        match (truth.is_positive(), pred.is_positive()) {
            (true, true) => c.tp += 1,
            (false, true) => c.fp += 1,
            (false, false) => c.tn += 1,
            (true, false) => c.fn_ += 1,
        }
    }
    let accuracy = (c.tp + c.tn) as f64 / c.total() as f64;
    let precision = ratio(c.tp as f64, (c.tp + c.fp) as f64);
    let recall = ratio(c.tp as f64, (c.tp + c.fn_) as f64);
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) => ratio(2.0 * p * r, p + r),
        _ => None,
    };
    let auc = match scores {
        Some(s) => {
            check_lengths(labels.len(), s.len())?;
            roc_auc(s, labels).ok()
        }
        None => None,
    };
    Ok(ClassificationMetrics {
        accuracy,
        precision,
        recall,
        f1,
        auc,
        confusion: c,
    })
}

/// Mann-Whitney form of the ROC area: midranks of the positive scores.
pub fn roc_auc(scores: &[f64], labels: &[Label]) -> Result<f64> {
    check_lengths(scores.len(), labels.len())?;
    let positives = labels.iter().filter(|l| l.is_positive()).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::Data("AUC undefined with a single class".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // ranks doubled so midranks stay integral
    let mut rank_sum_x2: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let midrank_x2 = (i + 1 + j + 1) as u64;
        for &k in &order[i..=j] {
            if labels[k].is_positive() {
                rank_sum_x2 += midrank_x2;
            }
        }
        i = j + 1;
    }
    let p = positives as u64;
    let u_x2 = rank_sum_x2 - p * (p + 1);
    Ok(u_x2 as f64 / 2.0 / (positives * negatives) as f64)
}

/// ROC operating points `(fpr, tpr)` from the highest threshold down,
/// starting at `(0, 0)` and ending at `(1, 1)`.
pub fn roc_curve(scores: &[f64], labels: &[Label]) -> Result<Vec<(f64, f64)>> {
    check_lengths(scores.len(), labels.len())?;
    let positives = labels.iter().filter(|l| l.is_positive()).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::Data("ROC undefined with a single class".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]].is_positive() {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / negatives as f64, tp as f64 / positives as f64));
    }
    Ok(points)
}

/// Trapezoidal area under a piecewise-linear curve.
pub fn trapezoid_area(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionMetrics {
    pub mae: f64,
    /// Undefined when the mean of the actual values is zero.
    pub wmape: Option<f64>,
    /// Undefined for fewer than two samples or zero variance.
    pub pearson: Option<f64>,
}

pub fn regression_metrics(actual: &[f64], estimated: &[f64]) -> Result<RegressionMetrics> {
    check_lengths(actual.len(), estimated.len())?;
    let n = actual.len() as f64;
    let mae = actual
        .iter()
        .zip(estimated)
        .map(|(x, y)| (x - y).abs())
        .sum::<f64>()
        / n;
    let mean_x = actual.iter().sum::<f64>() / n;
    let wmape = ratio(mae, mean_x);
    Ok(RegressionMetrics {
        mae,
        wmape,
        pearson: pearson(actual, estimated),
    })
}

pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Mean over the folds where a metric is defined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvMean {
    pub mean: Option<f64>,
    pub defined_folds: usize,
}

impl CvMean {
    pub fn of(values: impl IntoIterator<Item = Option<f64>>) -> Self {
        let defined: Vec<f64> = values.into_iter().flatten().collect();
        let mean = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
        CvMean {
            mean,
            defined_folds: defined.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub folds: Vec<ClassificationMetrics>,
    pub accuracy: CvMean,
    pub precision: CvMean,
    pub recall: CvMean,
    pub f1: CvMean,
    pub auc: CvMean,
}

impl ClassificationReport {
    pub fn from_folds(folds: Vec<ClassificationMetrics>) -> Self {
        ClassificationReport {
            accuracy: CvMean::of(folds.iter().map(|f| Some(f.accuracy))),
            precision: CvMean::of(folds.iter().map(|f| f.precision)),
            recall: CvMean::of(folds.iter().map(|f| f.recall)),
            f1: CvMean::of(folds.iter().map(|f| f.f1)),
            auc: CvMean::of(folds.iter().map(|f| f.auc)),
            folds,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionReport {
    pub folds: Vec<RegressionMetrics>,
    pub mae: CvMean,
    pub wmape: CvMean,
    pub pearson: CvMean,
}

impl RegressionReport {
    pub fn from_folds(folds: Vec<RegressionMetrics>) -> Self {
        RegressionReport {
            mae: CvMean::of(folds.iter().map(|f| Some(f.mae))),
            wmape: CvMean::of(folds.iter().map(|f| f.wmape)),
            pearson: CvMean::of(folds.iter().map(|f| f.pearson)),
            folds,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum MetricsReport {
    Classification(ClassificationReport),
    Regression(RegressionReport),
}

pub fn fmt_metric(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.6}"),
        None => "NA".to_string(),
    }
}

/// Writes `Algorithm,Accuracy,AUC,F1` rows.
pub fn write_classification_table<W: Write>(
    writer: W,
    rows: &[(String, ClassificationReport)],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["Algorithm", "Accuracy", "AUC", "F1"])?;
    for (name, r) in rows {
        w.write_record([
            name.clone(),
            fmt_metric(r.accuracy.mean),
            fmt_metric(r.auc.mean),
            fmt_metric(r.f1.mean),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `Algorithm,MAE,WMAPE,Correlation Coef.` rows.
pub fn write_regression_table<W: Write>(
    writer: W,
    rows: &[(String, RegressionReport)],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["Algorithm", "MAE", "WMAPE", "Correlation Coef."])?;
    for (name, r) in rows {
        w.write_record([
            name.clone(),
            fmt_metric(r.mae.mean),
            fmt_metric(r.wmape.mean),
            fmt_metric(r.pearson.mean),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use Label::{Heavy as P, Light as N};

    #[test]
    fn all_correct() {
        let y = [P, N, P, N];
        let m = classification_metrics(&y, &y, None).unwrap();
        assert_eq!(m.accuracy, 1.0);
        assert_eq!(m.f1, Some(1.0));
        assert_eq!(m.error_rate(), 0.0);
        assert_eq!(m.auc, None);
    }

    #[test]
    fn one_of_each_error() {
        // TP=1, FP=1, FN=1, TN=1
        let truth = [P, N, P, N];
        let pred = [P, P, N, N];
        let m = classification_metrics(&truth, &pred, None).unwrap();
        assert_eq!(m.precision, Some(0.5));
        assert_eq!(m.recall, Some(0.5));
        assert_eq!(m.f1, Some(0.5));
        assert_eq!(m.accuracy, 0.5);
    }

    #[test]
    fn no_positive_predictions() {
        let m = classification_metrics(&[P, N, P], &[N, N, N], None).unwrap();
        assert_eq!(m.precision, None);
        assert_eq!(m.recall, Some(0.0));
        assert_eq!(m.f1, None);
    }

    #[test]
    fn auc_extremes_and_ties() {
        let labels = [N, N, P, P];
        assert_eq!(roc_auc(&[0.1, 0.2, 0.8, 0.9], &labels).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.9, 0.8, 0.2, 0.1], &labels).unwrap(), 0.0);
        assert_eq!(roc_auc(&[0.5; 4], &labels).unwrap(), 0.5);
        assert!(roc_auc(&[0.1, 0.2], &[P, P]).is_err());
    }

    #[test]
    fn roc_area_matches_rank_auc() {
        let labels = [N, P, N, P, P, N, N];
        let scores = [0.1, 0.4, 0.4, 0.8, 0.3, 0.9, 0.2];
        let curve = roc_curve(&scores, &labels).unwrap();
        assert_eq!(curve.first(), Some(&(0.0, 0.0)));
        assert_eq!(curve.last(), Some(&(1.0, 1.0)));
        let a = roc_auc(&scores, &labels).unwrap();
        assert!((trapezoid_area(&curve) - a).abs() < 1e-12);
    }

    #[test]
    fn regression_basics() {
        let m = regression_metrics(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((m.mae, m.wmape), (0.0, Some(0.0)));
        assert!((m.pearson.unwrap() - 1.0).abs() < 1e-12);
        let m = regression_metrics(&[2.0, 2.0], &[1.0, 3.0]).unwrap();
        assert_eq!(m.mae, 1.0);
        assert_eq!(m.wmape, Some(0.5));
        assert_eq!(m.pearson, None);
        let actual = [1.0, 4.0, 2.0, 8.0];
        let est: Vec<f64> = actual.iter().map(|a| 10.0 - a).collect();
        let m = regression_metrics(&actual, &est).unwrap();
        assert!((m.pearson.unwrap() + 1.0).abs() < 1e-12);
        let m = regression_metrics(&[0.0, 0.0], &[1.0, 2.0]).unwrap();
        assert_eq!(m.wmape, None);
        assert!(regression_metrics(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn cv_mean_skips_undefined_folds() {
        let m = CvMean::of([Some(0.5), None, Some(1.0)]);
        assert_eq!(m.mean, Some(0.75));
        assert_eq!(m.defined_folds, 2);
        assert_eq!(CvMean::of([None]).mean, None);
        let same = CvMean::of([Some(0.8); 10]);
        assert!((same.mean.unwrap() - 0.8).abs() < 1e-15);
    }

    #[test]
    fn table_layout() {
        let fold = classification_metrics(&[P, N], &[P, N], Some(&[0.9, 0.1])).unwrap();
        let report = ClassificationReport::from_folds(vec![fold]);
        let mut buf = Vec::new();
        write_classification_table(&mut buf, &[("Extra Trees".into(), report)]).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "Algorithm,Accuracy,AUC,F1\nExtra Trees,1.000000,1.000000,1.000000\n"
        );
        let reg = RegressionReport::from_folds(vec![regression_metrics(&[0.0, 0.0], &[0.0, 1.0]).unwrap()]);
        let mut buf = Vec::new();
        write_regression_table(&mut buf, &[("KNN".into(), reg)]).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "Algorithm,MAE,WMAPE,Correlation Coef.\nKNN,0.500000,NA,NA\n"
        );
    }
}
