//! Residual analysis, prediction-error summaries and feature importance.

use std::io::Write;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{FeatureMatrix, Scale, TargetVector};
use crate::evaluate::{compute_metrics, EvalError};
use crate::features::{transform_target, Direction};
use crate::model::{ModelError, TrainedModel};
use crate::rng::{self, TAG_PERMUTATION_IMPORTANCE};
use crate::stats::{mean, Histogram};
use crate::tree::{Node, RegressionTree};

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error("targets on {y:?} scale, predictions on {pred:?} scale")]
    ScaleMismatch { y: Scale, pred: Scale },
    #[error("{expected} targets but {got} predictions")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("residual series is empty")]
    EmptySeries,
    #[error("bin count must be >= 1")]
    ZeroBins,
    #[error("targets have zero variance")]
    ZeroVariance,
    #[error("model has no splits")]
    NoSplits,
    #[error("{0} models carry no split gains")]
    NotTreeModel(&'static str),
    #[error("{feature_names} feature names for {features} features")]
    NameMismatch { feature_names: usize, features: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("non-finite value after inverse transform")]
    NonFinite,
    #[error("export failed: {0}")]
    Export(String),
}

impl From<EvalError> for DiagnosticsError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::ZeroVariance(_) => DiagnosticsError::ZeroVariance,
            EvalError::ShapeMismatch { expected, got } => DiagnosticsError::ShapeMismatch { expected, got },
            EvalError::Model(m) | EvalError::Fold { source: m, .. } => DiagnosticsError::Model(m),
            other => DiagnosticsError::Export(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualSeries {
    pub residuals: Vec<f64>,
    pub scale: Scale,
}

/// `y − ŷ`, optionally after mapping both back to raw prices.
pub fn compute_residuals(
    y: &TargetVector,
    pred: &TargetVector,
    in_raw_scale: bool,
) -> Result<ResidualSeries, DiagnosticsError> {
    if y.scale != pred.scale {
        return Err(DiagnosticsError::ScaleMismatch { y: y.scale, pred: pred.scale });
    }
    if y.len() != pred.len() {
        return Err(DiagnosticsError::ShapeMismatch { expected: y.len(), got: pred.len() });
    }
    let (y, pred) = if in_raw_scale && y.scale == Scale::LogE {
        let inv = |t: &TargetVector| {
            transform_target(t, Direction::Inverse).map_err(|_| DiagnosticsError::ScaleMismatch { y: t.scale, pred: t.scale })
        };
        (inv(y)?, inv(pred)?)
    } else {
        (y.clone(), pred.clone())
    };
    let residuals: Vec<f64> = y.values.iter().zip(&pred.values).map(|(a, b)| a - b).collect();
    if residuals.iter().any(|r| !r.is_finite()) {
        return Err(DiagnosticsError::NonFinite);
    }
    Ok(ResidualSeries { residuals, scale: y.scale })
}

pub fn residual_histogram(res: &ResidualSeries, bins: usize) -> Result<Histogram, DiagnosticsError> {
    if bins == 0 {
        return Err(DiagnosticsError::ZeroBins);
    }
    Histogram::equal_width(&res.residuals, bins).ok_or(DiagnosticsError::EmptySeries)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionErrorSummary {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Least-squares line of `pred` on `y`, plus R² of `pred` against `y`.
pub fn prediction_error_summary(y: &[f64], pred: &[f64]) -> Result<PredictionErrorSummary, DiagnosticsError> {
    if y.len() != pred.len() {
        return Err(DiagnosticsError::ShapeMismatch { expected: y.len(), got: pred.len() });
    }
    if y.len() < 2 {
        return Err(DiagnosticsError::ZeroVariance);
    }
    let r2 = compute_metrics(y, pred, Scale::LogE)?.r2.ok_or(DiagnosticsError::ZeroVariance)?;
    let (my, mp) = (mean(y), mean(pred));
    let sxx: f64 = y.iter().map(|v| (v - my) * (v - my)).sum();
    let sxy: f64 = y.iter().zip(pred).map(|(a, b)| (a - my) * (b - mp)).sum();
    let slope = sxy / sxx;
    Ok(PredictionErrorSummary { slope, intercept: mp - slope * my, r2 })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImportanceMethod {
    Gain,
    Permutation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    /// Sorted by descending score; equal scores keep feature order.
    pub entries: Vec<(String, f64)>,
    pub method: ImportanceMethod,
}

impl ImportanceReport {
    fn sorted(scores: Vec<f64>, names: &[String], method: ImportanceMethod) -> Self {
        let mut entries: Vec<(String, f64)> = names.iter().cloned().zip(scores).collect();
        entries.sort_by(|a, b| b.1.total_cmp(&a.1));
        Self { entries, method }
    }

    pub fn rank_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|(n, _)| n == name)
    }

    pub fn write_csv<W: Write>(&self, sink: W) -> Result<(), DiagnosticsError> {
        let mut w = csv::Writer::from_writer(sink);
        let export = |e: csv::Error| DiagnosticsError::Export(e.to_string());
        w.write_record(["method", "rank", "feature", "score"]).map_err(export)?;
        let method = match self.method {
            ImportanceMethod::Gain => "gain",
            ImportanceMethod::Permutation => "permutation",
        };
        for (i, (name, score)) in self.entries.iter().enumerate() {
            w.write_record([method, &(i + 1).to_string(), name, &score.to_string()]).map_err(export)?;
        }
        w.flush().map_err(|e| DiagnosticsError::Export(e.to_string()))
    }
}

fn check_names(names: &[String], d: usize) -> Result<(), DiagnosticsError> {
    if names.len() != d {
        return Err(DiagnosticsError::NameMismatch { feature_names: names.len(), features: d });
    }
    Ok(())
}

/// Per-feature sum of split gains over every tree, normalized to sum to 1.
pub fn gain_importance(model: &TrainedModel, names: &[String]) -> Result<ImportanceReport, DiagnosticsError> {
    let trees: &[RegressionTree] = match model {
        TrainedModel::Forest(m) => &m.trees,
        TrainedModel::Gbdt(m) => &m.trees,
        TrainedModel::Linear(_) => return Err(DiagnosticsError::NotTreeModel("linear")),
        TrainedModel::Svr(_) => return Err(DiagnosticsError::NotTreeModel("svr")),
    };
    let d = model.n_features();
    check_names(names, d)?;
    let mut scores = vec![0.0; d];
    for tree in trees {
        for node in &tree.nodes {
            if let Node::Split { feature, gain, .. } = node {
                scores[*feature] += gain;
            }
        }
    }
    let total: f64 = scores.iter().sum();
    if !(total > 0.0) {
        return Err(DiagnosticsError::NoSplits);
    }
    for s in &mut scores {
        *s /= total;
    }
    Ok(ImportanceReport::sorted(scores, names, ImportanceMethod::Gain))
}

/// Mean drop in R² when one column is shuffled, over `repeats` seeded
/// shuffles. The model is never refitted.
pub fn permutation_importance(
    model: &TrainedModel,
    x: &FeatureMatrix,
    y: &[f64],
    names: &[String],
    repeats: usize,
    seed: u64,
) -> Result<ImportanceReport, DiagnosticsError> {
    if repeats < 1 {
        return Err(DiagnosticsError::Export("repeats must be >= 1".into()));
    }
    if y.len() != x.rows() {
        return Err(DiagnosticsError::ShapeMismatch { expected: x.rows(), got: y.len() });
    }
    check_names(names, x.cols())?;
    let r2 = |pred: &[f64]| -> Result<f64, DiagnosticsError> {
        compute_metrics(y, pred, Scale::LogE)?.r2.ok_or(DiagnosticsError::ZeroVariance)
    };
    let baseline = r2(&model.predict(x)?)?;
    let jobs: Vec<(usize, usize)> = (0..x.cols()).flat_map(|f| (0..repeats).map(move |r| (f, r))).collect();
    let drops: Vec<f64> = jobs
        .par_iter()
        .map(|&(f, r)| {
            let mut col = x.column_values(f);
            col.shuffle(&mut rng::derived(seed, &[TAG_PERMUTATION_IMPORTANCE, f as u64, r as u64]));
            let mut xp = x.clone();
            xp.set_column(f, &col).expect("same length");
            Ok(baseline - r2(&model.predict(&xp)?)?)
        })
        .collect::<Result<_, DiagnosticsError>>()?;
    let scores = drops.chunks(repeats).map(|c| c.iter().sum::<f64>() / repeats as f64).collect();
    Ok(ImportanceReport::sorted(scores, names, ImportanceMethod::Permutation))
}

pub fn write_residuals_csv<W: Write>(res: &ResidualSeries, sink: W) -> Result<(), DiagnosticsError> {
    let mut w = csv::Writer::from_writer(sink);
    let export = |e: csv::Error| DiagnosticsError::Export(e.to_string());
    w.write_record(["residual"]).map_err(export)?;
    for r in &res.residuals {
        w.write_record([r.to_string()]).map_err(export)?;
    }
    w.flush().map_err(|e| DiagnosticsError::Export(e.to_string()))
}

pub fn write_histogram_csv<W: Write>(h: &Histogram, sink: W) -> Result<(), DiagnosticsError> {
    let mut w = csv::Writer::from_writer(sink);
    let export = |e: csv::Error| DiagnosticsError::Export(e.to_string());
    w.write_record(["bin_left", "bin_right", "count"]).map_err(export)?;
    for (i, c) in h.counts.iter().enumerate() {
        w.write_record([h.edges[i].to_string(), h.edges[i + 1].to_string(), c.to_string()]).map_err(export)?;
    }
    w.flush().map_err(|e| DiagnosticsError::Export(e.to_string()))
}

pub fn write_scatter_csv<W: Write>(y: &[f64], pred: &[f64], sink: W) -> Result<(), DiagnosticsError> {
    let mut w = csv::Writer::from_writer(sink);
    let export = |e: csv::Error| DiagnosticsError::Export(e.to_string());
    w.write_record(["actual", "predicted"]).map_err(export)?;
    for (a, p) in y.iter().zip(pred) {
        w.write_record([a.to_string(), p.to_string()]).map_err(export)?;
    }
    w.flush().map_err(|e| DiagnosticsError::Export(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forest::{ForestModel, ForestParams};
    use crate::linear::LinearModel;

    #[test]
    fn residual_examples() {
        let y = TargetVector::log(vec![1.0, 2.0]);
        let r = compute_residuals(&y, &y, false).unwrap();
        assert_eq!(r.residuals, vec![0.0, 0.0]);
        let y = TargetVector::log(vec![100f64.ln()]);
        let p = TargetVector::log(vec![50f64.ln()]);
        let r = compute_residuals(&y, &p, true).unwrap();
        assert!((r.residuals[0] - 50.0).abs() < 1e-9);
        assert_eq!(r.scale, Scale::Raw);
        let raw = TargetVector::raw(vec![1.0]);
        assert!(matches!(compute_residuals(&y, &raw, false), Err(DiagnosticsError::ScaleMismatch { .. })));
    }

    #[test]
    fn histogram_examples() {
        let s = ResidualSeries { residuals: vec![0.0, 0.0, 1.0, 1.0], scale: Scale::LogE };
        let h = residual_histogram(&s, 2).unwrap();
        assert_eq!(h.edges, vec![0.0, 0.5, 1.0]);
        assert_eq!(h.counts, vec![2, 2]);
        let flat = ResidualSeries { residuals: vec![3.0; 5], scale: Scale::LogE };
        assert_eq!(residual_histogram(&flat, 4).unwrap().total(), 5);
        let empty = ResidualSeries { residuals: vec![], scale: Scale::LogE };
        assert!(matches!(residual_histogram(&empty, 3), Err(DiagnosticsError::EmptySeries)));
    }

    #[test]
    fn prediction_error_lines() {
        let y = [1.0, 2.5, 4.0, 7.0];
        let s = prediction_error_summary(&y, &y).unwrap();
        assert_eq!((s.slope, s.intercept, s.r2), (1.0, 0.0, 1.0));
        let twice: Vec<f64> = y.iter().map(|v| 2.0 * v).collect();
        let s = prediction_error_summary(&y, &twice).unwrap();
        assert_eq!((s.slope, s.intercept), (2.0, 0.0));
        let m = mean(&y);
        let s = prediction_error_summary(&y, &[m; 4]).unwrap();
        assert_eq!(s.slope, 0.0);
        assert!(s.r2.abs() < 1e-15);
        assert!(matches!(prediction_error_summary(&[1.0, 1.0], &[1.0, 2.0]), Err(DiagnosticsError::ZeroVariance)));
    }

    #[test]
    fn gain_single_attribution() {
        let tree = RegressionTree {
            nodes: vec![
                Node::Split { feature: 1, threshold: 0.5, left: 1, right: 2, gain: 3.0 },
                Node::Leaf { value: 0.0 },
                Node::Leaf { value: 1.0 },
            ],
            depth: 1,
            n_features: 3,
        };
        let m = TrainedModel::Forest(ForestModel { trees: vec![tree], params: ForestParams::default(), n_features: 3 });
        let names: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let r = gain_importance(&m, &names).unwrap();
        assert_eq!(r.entries[0], ("b".to_string(), 1.0));
        assert_eq!(r.entries[1], ("a".to_string(), 0.0));
        assert_eq!(r.entries.iter().map(|e| e.1).sum::<f64>(), 1.0);
        let lin = TrainedModel::Linear(LinearModel { coefficients: vec![0.0; 3], intercept: 0.0, fitted_intercept: false });
        assert!(matches!(gain_importance(&lin, &names), Err(DiagnosticsError::NotTreeModel(_))));
    }

    #[test]
    fn permutation_of_ignored_feature_is_zero() {
        let rows: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64, ((i * 13) % 7) as f64]).collect();
        let x = FeatureMatrix::from_rows(&rows).unwrap();
        let y: Vec<f64> = rows.iter().map(|r| r[0]).collect();
        let m = TrainedModel::Linear(LinearModel { coefficients: vec![1.0, 0.0], intercept: 0.0, fitted_intercept: false });
        let names = vec!["x1".to_string(), "noise".to_string()];
        let r = permutation_importance(&m, &x, &y, &names, 3, 8).unwrap();
        assert_eq!(r.entries[0].0, "x1");
        assert!(r.entries[0].1 > 0.0);
        assert_eq!(r.entries[1], ("noise".to_string(), 0.0));
        assert_eq!(r, permutation_importance(&m, &x, &y, &names, 3, 8).unwrap());
    }
}
