//! Regression metrics, k-fold cross-validation and hyperparameter search.
//!
//! Search selects on mean validation-fold R². Folds whose validation
//! targets are constant have no R²; they are left out of the mean and
//! counted.

use std::io::Write;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{FeatureMatrix, Scale};
use crate::model::{ModelError, ModelKind, ModelSpec, ParamValue};
use crate::rng::{self, TAG_CV_MODEL, TAG_FOLD, TAG_RANDOM_SEARCH};
use crate::stats::mean;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{expected} targets but {got} predictions")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("targets have zero variance; R² is undefined")]
    ZeroVariance(Box<MetricsReport>),
    #[error("need 2 <= k <= n, got k={k} with n={n}")]
    BadK { k: usize, n: usize },
    #[error("search space is empty: {0}")]
    EmptySpace(String),
    #[error("invalid search space: {0}")]
    InvalidSpace(String),
    #[error("no trial produced a defined cross-validation score")]
    NoDefinedScore,
    #[error("fold {fold}: {source}")]
    Fold { fold: usize, source: ModelError },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("export failed: {0}")]
    Export(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// `None` when the targets have zero variance.
    pub r2: Option<f64>,
    pub mse: f64,
    pub rmse: f64,
    pub mae: f64,
    pub n: usize,
    pub target_scale: Scale,
}

/// R², MSE, RMSE and MAE of `pred` against `y`.
///
/// With constant `y` the other three metrics are still computed and
/// returned inside [`EvalError::ZeroVariance`].
pub fn compute_metrics(y: &[f64], pred: &[f64], scale: Scale) -> Result<MetricsReport, EvalError> {
    if y.len() != pred.len() || y.is_empty() {
        return Err(EvalError::ShapeMismatch { expected: y.len(), got: pred.len() });
    }
    let n = y.len();
    let nf = n as f64;
    let ssr: f64 = y.iter().zip(pred).map(|(a, b)| (a - b) * (a - b)).sum();
    let sae: f64 = y.iter().zip(pred).map(|(a, b)| (a - b).abs()).sum();
    let m = mean(y);
    let sst: f64 = y.iter().map(|v| (v - m) * (v - m)).sum();
    let mse = ssr / nf;
    let mut report = MetricsReport { r2: None, mse, rmse: mse.sqrt(), mae: sae / nf, n, target_scale: scale };
    if sst > 0.0 {
        report.r2 = Some(1.0 - ssr / sst);
        Ok(report)
    } else {
        Err(EvalError::ZeroVariance(Box::new(report)))
    }
}

/// Like [`compute_metrics`], but a zero-variance target yields a report
/// with `r2 = None` instead of an error.
pub fn metrics_lenient(y: &[f64], pred: &[f64], scale: Scale) -> Result<MetricsReport, EvalError> {
    match compute_metrics(y, pred, scale) {
        Err(EvalError::ZeroVariance(r)) => Ok(*r),
        other => other,
    }
}

/// `k` disjoint folds covering `0..n`; the first `n % k` folds hold one
/// extra row. Each fold is sorted.
pub fn kfold_indices(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>, EvalError> {
    if k < 2 || k > n {
        return Err(EvalError::BadK { k, n });
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng::derived(seed, &[TAG_FOLD, n as u64, k as u64]));
    let (base, extra) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for i in 0..k {
        let len = base + usize::from(i < extra);
        let mut fold = perm[start..start + len].to_vec();
        fold.sort_unstable();
        folds.push(fold);
        start += len;
    }
    Ok(folds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub folds: Vec<MetricsReport>,
    /// Mean R² over folds where it is defined.
    pub mean_r2: Option<f64>,
    pub undefined_folds: usize,
}

/// Model seed used for fold `fold` of a cross-validation run.
pub fn fold_seed(seed: u64, fold: usize) -> u64 {
    rng::derive_seed(seed, &[TAG_CV_MODEL, fold as u64])
}

pub fn cross_validate(spec: &ModelSpec, x: &FeatureMatrix, y: &[f64], k: usize, seed: u64) -> Result<CvResult, EvalError> {
    if y.len() != x.rows() {
        return Err(EvalError::ShapeMismatch { expected: x.rows(), got: y.len() });
    }
    let folds = kfold_indices(x.rows(), k, seed)?;
    let reports: Vec<Result<MetricsReport, EvalError>> = folds
        .par_iter()
        .enumerate()
        .map(|(i, valid)| {
            let mut in_valid = vec![false; x.rows()];
            for &r in valid {
                in_valid[r] = true;
            }
            let train: Vec<usize> = (0..x.rows()).filter(|&r| !in_valid[r]).collect();
            let ytr: Vec<f64> = train.iter().map(|&r| y[r]).collect();
            let yva: Vec<f64> = valid.iter().map(|&r| y[r]).collect();
            let annotate = |source| EvalError::Fold { fold: i, source };
            let model = spec
                .clone()
                .with_seed(fold_seed(seed, i))
                .fit(&x.select_rows(&train), &ytr)
                .map_err(annotate)?;
            let pred = model.predict(&x.select_rows(valid)).map_err(annotate)?;
            metrics_lenient(&yva, &pred, Scale::LogE)
        })
        .collect();
    let folds = reports.into_iter().collect::<Result<Vec<_>, _>>()?;
    let defined: Vec<f64> = folds.iter().filter_map(|r| r.r2).collect();
    let undefined_folds = folds.len() - defined.len();
    let mean_r2 = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    Ok(CvResult { folds, mean_r2, undefined_folds })
}

/// How one hyperparameter is enumerated or drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    List(Vec<ParamValue>),
    Uniform { low: f64, high: f64 },
    LogUniform { low: f64, high: f64 },
    /// Inclusive on both ends.
    IntRange { low: i64, high: i64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamDomain {
    pub name: String,
    pub domain: Domain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub kind: ModelKind,
    /// In declaration order; grid enumeration varies the last one fastest.
    pub params: Vec<ParamDomain>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Grid,
    Random,
}

pub type Assignment = Vec<(String, ParamValue)>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub params: Assignment,
    pub fold_r2: Vec<Option<f64>>,
    pub mean_r2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub kind: ModelKind,
    pub strategy: Strategy,
    pub best_params: Assignment,
    pub best_cv_score: f64,
    pub best_index: usize,
    pub trials: Vec<Trial>,
}

fn apply(base: &ModelSpec, params: &Assignment) -> Result<ModelSpec, EvalError> {
    let mut spec = base.clone();
    for (name, value) in params {
        spec.set_param(name, value).map_err(|e| EvalError::InvalidSpace(e.to_string()))?;
    }
    Ok(spec)
}

fn check_space(base: &ModelSpec, space: &SearchSpace) -> Result<(), EvalError> {
    if base.kind() != space.kind {
        return Err(EvalError::InvalidSpace(format!("space is for {}, base model is {}", space.kind, base.kind())));
    }
    for p in &space.params {
        let probes: Vec<ParamValue> = match &p.domain {
            Domain::List(values) if values.is_empty() => {
                return Err(EvalError::EmptySpace(format!("`{}` has no candidates", p.name)));
            }
            Domain::List(values) => values.clone(),
            Domain::Uniform { low, high } | Domain::LogUniform { low, high } => {
                if !(low <= high) || !low.is_finite() || !high.is_finite() {
                    return Err(EvalError::EmptySpace(format!("`{}` has range [{low}, {high}]", p.name)));
                }
                if matches!(p.domain, Domain::LogUniform { .. }) && *low <= 0.0 {
                    return Err(EvalError::InvalidSpace(format!("`{}` log range must be positive", p.name)));
                }
                vec![ParamValue::Float(*low), ParamValue::Float(*high)]
            }
            Domain::IntRange { low, high } => {
                if low > high {
                    return Err(EvalError::EmptySpace(format!("`{}` has range [{low}, {high}]", p.name)));
                }
                vec![ParamValue::Int(*low), ParamValue::Int(*high)]
            }
        };
        for v in probes {
            apply(base, &vec![(p.name.clone(), v)])?;
        }
    }
    Ok(())
}

fn grid_points(space: &SearchSpace) -> Result<Vec<Assignment>, EvalError> {
    let mut points: Vec<Assignment> = vec![Vec::new()];
    for p in &space.params {
        let Domain::List(values) = &p.domain else {
            return Err(EvalError::InvalidSpace(format!("grid search needs a list for `{}`", p.name)));
        };
        points = points
            .into_iter()
            .flat_map(|prefix| {
                values.iter().map(move |v| {
                    let mut a = prefix.clone();
                    a.push((p.name.clone(), v.clone()));
                    a
                })
            })
            .collect();
    }
    Ok(points)
}

fn random_points(space: &SearchSpace, n_iter: usize, seed: u64) -> Vec<Assignment> {
    let mut r = rng::derived(seed, &[TAG_RANDOM_SEARCH]);
    (0..n_iter)
        .map(|_| {
            space
                .params
                .iter()
                .map(|p| {
                    let v = match &p.domain {
                        Domain::List(values) => values.choose(&mut r).expect("checked non-empty").clone(),
                        Domain::Uniform { low, high } => {
                            ParamValue::Float(if low == high { *low } else { r.random_range(*low..*high) })
                        }
                        Domain::LogUniform { low, high } => ParamValue::Float(if low == high {
                            *low
                        } else {
                            r.random_range(low.ln()..high.ln()).exp().clamp(*low, *high)
                        }),
                        Domain::IntRange { low, high } => ParamValue::Int(r.random_range(*low..=*high)),
                    };
                    (p.name.clone(), v)
                })
                .collect()
        })
        .collect()
}

fn run_trials(
    base: &ModelSpec,
    space: &SearchSpace,
    strategy: Strategy,
    points: Vec<Assignment>,
    x: &FeatureMatrix,
    y: &[f64],
    k: usize,
    seed: u64,
) -> Result<SearchResult, EvalError> {
    if points.is_empty() {
        return Err(EvalError::EmptySpace("no trials".into()));
    }
    let mut trials = Vec::with_capacity(points.len());
    for params in points {
        let spec = apply(base, &params)?;
        let cv = cross_validate(&spec, x, y, k, seed)?;
        trials.push(Trial { params, fold_r2: cv.folds.iter().map(|f| f.r2).collect(), mean_r2: cv.mean_r2 });
    }
    let mut best: Option<(usize, f64)> = None;
    for (i, t) in trials.iter().enumerate() {
        if let Some(s) = t.mean_r2 {
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((i, s));
            }
        }
    }
    let (best_index, best_cv_score) = best.ok_or(EvalError::NoDefinedScore)?;
    Ok(SearchResult {
        kind: space.kind,
        strategy,
        best_params: trials[best_index].params.clone(),
        best_cv_score,
        best_index,
        trials,
    })
}

/// Cross-validates every point of the Cartesian product of the lists in
/// `space`, applied on top of `base`. Ties go to the earliest point.
pub fn grid_search(
    base: &ModelSpec,
    space: &SearchSpace,
    x: &FeatureMatrix,
    y: &[f64],
    k: usize,
    seed: u64,
) -> Result<SearchResult, EvalError> {
    check_space(base, space)?;
    let points = grid_points(space)?;
    run_trials(base, space, Strategy::Grid, points, x, y, k, seed)
}

/// Cross-validates `n_iter` independent draws from `space`.
pub fn random_search(
    base: &ModelSpec,
    space: &SearchSpace,
    n_iter: usize,
    x: &FeatureMatrix,
    y: &[f64],
    k: usize,
    seed: u64,
) -> Result<SearchResult, EvalError> {
    if n_iter < 1 {
        return Err(EvalError::EmptySpace("n_iter must be >= 1".into()));
    }
    check_space(base, space)?;
    let points = random_points(space, n_iter, seed);
    run_trials(base, space, Strategy::Random, points, x, y, k, seed)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

impl SearchResult {
    /// One row per trial: index, each parameter, each fold's R², mean.
    pub fn write_trials_csv<W: Write>(&self, sink: W) -> Result<(), EvalError> {
        let export = |e: csv::Error| EvalError::Export(e.to_string());
        let mut w = csv::Writer::from_writer(sink);
        let folds = self.trials.first().map_or(0, |t| t.fold_r2.len());
        let mut header = vec!["model".to_string(), "trial".to_string()];
        if let Some(t) = self.trials.first() {
            header.extend(t.params.iter().map(|(n, _)| n.clone()));
        }
        header.extend((1..=folds).map(|i| format!("fold_{i}_r2")));
        header.push("mean_r2".into());
        header.push("best".into());
        w.write_record(&header).map_err(export)?;
        for (i, t) in self.trials.iter().enumerate() {
            let mut rec = vec![self.kind.to_string(), i.to_string()];
            rec.extend(t.params.iter().map(|(_, v)| v.to_string()));
            rec.extend(t.fold_r2.iter().map(|v| fmt_opt(*v)));
            rec.push(fmt_opt(t.mean_r2));
            rec.push((i == self.best_index).to_string());
            w.write_record(&rec).map_err(export)?;
        }
        w.flush().map_err(|e| EvalError::Export(e.to_string()))
    }

    pub fn write_summary_json<W: Write>(&self, sink: W) -> Result<(), EvalError> {
        #[derive(Serialize)]
        struct Summary {
            kind: ModelKind,
            strategy: Strategy,
            best_params: serde_json::Map<String, serde_json::Value>,
            best_cv_score: f64,
            n_trials: usize,
        }
        let best_params = self
            .best_params
            .iter()
            .map(|(n, v)| (n.clone(), serde_json::to_value(v).expect("plain value")))
            .collect();
        let s = Summary {
            kind: self.kind,
            strategy: self.strategy,
            best_params,
            best_cv_score: self.best_cv_score,
            n_trials: self.trials.len(),
        };
        serde_json::to_writer_pretty(sink, &s).map_err(|e| EvalError::Export(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-12
    }

    #[test]
    fn metric_examples() {
        let r = compute_metrics(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0], Scale::LogE).unwrap();
        assert_eq!((r.r2, r.mse, r.mae, r.rmse), (Some(1.0), 0.0, 0.0, 0.0));
        let r = compute_metrics(&[1.0, 2.0, 3.0], &[2.0, 2.0, 2.0], Scale::LogE).unwrap();
        assert!(close(r.mse, 2.0 / 3.0) && close(r.mae, 2.0 / 3.0));
        assert!(close(r.rmse, (2.0f64 / 3.0).sqrt()));
        assert_eq!(r.r2, Some(0.0));
    }

    #[test]
    fn zero_variance_keeps_other_metrics() {
        match compute_metrics(&[2.0, 2.0], &[1.0, 3.0], Scale::Raw) {
            Err(EvalError::ZeroVariance(r)) => {
                assert_eq!(r.r2, None);
                assert_eq!(r.mse, 1.0);
                assert_eq!(r.mae, 1.0);
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(compute_metrics(&[1.0], &[], Scale::Raw), Err(EvalError::ShapeMismatch { .. })));
    }

    #[test]
    fn fold_sizes() {
        let f = kfold_indices(10, 5, 1).unwrap();
        assert!(f.iter().all(|f| f.len() == 2));
        let mut sizes: Vec<usize> = kfold_indices(7, 3, 1).unwrap().iter().map(Vec::len).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![2, 2, 3]);
        assert_eq!(kfold_indices(7, 3, 9).unwrap(), kfold_indices(7, 3, 9).unwrap());
        assert!(matches!(kfold_indices(3, 4, 0), Err(EvalError::BadK { .. })));
        assert!(matches!(kfold_indices(3, 1, 0), Err(EvalError::BadK { .. })));
    }

    fn line_data(n: usize) -> (FeatureMatrix, Vec<f64>) {
        let xs: Vec<f64> = (0..n).map(|i| i as f64 * 0.5 - 3.0).collect();
        let y = xs.iter().map(|v| 2.0 * v + 1.0).collect();
        (FeatureMatrix::column(&xs).unwrap(), y)
    }

    #[test]
    fn cv_on_exact_linear_data() {
        let (x, y) = line_data(20);
        let cv = cross_validate(&ModelSpec::Linear { fit_intercept: true }, &x, &y, 4, 3).unwrap();
        assert_eq!(cv.folds.len(), 4);
        assert!(cv.folds.iter().all(|f| (f.r2.unwrap() - 1.0).abs() < 1e-10));
    }

    #[test]
    fn leave_one_out_has_no_r2() {
        let (x, y) = line_data(5);
        let cv = cross_validate(&ModelSpec::Linear { fit_intercept: true }, &x, &y, 5, 0).unwrap();
        assert_eq!(cv.undefined_folds, 5);
        assert_eq!(cv.mean_r2, None);
    }

    #[test]
    fn grid_prefers_exact_model() {
        let (x, y) = line_data(20);
        let space = SearchSpace {
            kind: ModelKind::Linear,
            params: vec![ParamDomain {
                name: "fit_intercept".into(),
                domain: Domain::List(vec![ParamValue::Bool(false), ParamValue::Bool(true)]),
            }],
        };
        let base = ModelSpec::Linear { fit_intercept: false };
        let res = grid_search(&base, &space, &x, &y, 5, 0).unwrap();
        assert_eq!(res.trials.len(), 2);
        assert_eq!(res.best_params, vec![("fit_intercept".to_string(), ParamValue::Bool(true))]);
        let max = res.trials.iter().filter_map(|t| t.mean_r2).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(res.best_cv_score, max);
    }

    #[test]
    fn grid_size_is_product() {
        let space = SearchSpace {
            kind: ModelKind::Forest,
            params: vec![
                ParamDomain {
                    name: "n_estimators".into(),
                    domain: Domain::List(vec![ParamValue::Int(1), ParamValue::Int(2)]),
                },
                ParamDomain {
                    name: "max_depth".into(),
                    domain: Domain::List(vec![ParamValue::Int(1), ParamValue::Int(2), ParamValue::Int(3)]),
                },
            ],
        };
        let pts = grid_points(&space).unwrap();
        assert_eq!(pts.len(), 6);
        assert_eq!(pts[1][1].1, ParamValue::Int(2));
    }

    #[test]
    fn empty_and_invalid_spaces() {
        let (x, y) = line_data(10);
        let base = ModelSpec::tuned(ModelKind::Forest);
        let empty = SearchSpace {
            kind: ModelKind::Forest,
            params: vec![ParamDomain { name: "n_estimators".into(), domain: Domain::List(vec![]) }],
        };
        assert!(matches!(grid_search(&base, &empty, &x, &y, 2, 0), Err(EvalError::EmptySpace(_))));
        let bad = SearchSpace {
            kind: ModelKind::Forest,
            params: vec![ParamDomain { name: "n_estimators".into(), domain: Domain::List(vec![ParamValue::Int(0)]) }],
        };
        assert!(matches!(grid_search(&base, &bad, &x, &y, 2, 0), Err(EvalError::InvalidSpace(_))));
    }

    #[test]
    fn random_search_degenerate_ranges() {
        let (x, y) = line_data(12);
        let space = SearchSpace {
            kind: ModelKind::Xgb,
            params: vec![
                ParamDomain { name: "learning_rate".into(), domain: Domain::Uniform { low: 0.2, high: 0.2 } },
                ParamDomain { name: "depth".into(), domain: Domain::IntRange { low: 2, high: 2 } },
            ],
        };
        let base = ModelSpec::tuned(ModelKind::Xgb);
        let res = random_search(&base, &space, 3, &x, &y, 3, 4).unwrap();
        assert!(res.trials.iter().all(|t| t.params == res.trials[0].params && t.mean_r2 == res.trials[0].mean_r2));
        assert_eq!(res.best_index, 0);
    }
}
