//! Gradient-boosted regression trees under squared loss.
//!
//! Two modes share the same CART learner on gradient/hessian statistics:
//!
//! * `xgb`: second-order boosting with λ, γ, min_child_weight and row
//!   subsampling without replacement;
//! * `cat`: categorical code columns are first replaced by ordered target
//!   statistics averaged over seeded permutations, then boosted the same way.
//!
//! Predictions are `base_score + Σₖ η·Tₖ(x)`, summed in tree order.

use std::collections::BTreeMap;

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::data::FeatureMatrix;
use crate::model::ModelError;
use crate::rng::{self, TAG_BOOST_PERMUTATION, TAG_BOOST_SUBSAMPLE, TAG_BOOST_TREE};
use crate::stats::mean;
use crate::tree::{FeatureSubsample, RegressionTree, SortedColumns, TreeInput, TreeParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoostMode {
    Xgb,
    Cat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoostParams {
    pub mode: BoostMode,
    pub iterations: usize,
    pub learning_rate: f64,
    pub l2_leaf_reg: f64,
    pub depth: usize,
    pub gamma: f64,
    pub min_child_weight: f64,
    pub subsample: f64,
    pub cat_prior_weight: f64,
    pub cat_permutations: usize,
    pub seed: u64,
}

impl Default for BoostParams {
    fn default() -> Self {
        Self::cat()
    }
}

impl BoostParams {
    /// Tuned cat-mode setting: η 0.03, λ 1, 1000 iterations, depth 8.
    pub fn cat() -> Self {
        Self {
            mode: BoostMode::Cat,
            iterations: 1000,
            learning_rate: 0.03,
            l2_leaf_reg: 1.0,
            depth: 8,
            gamma: 0.0,
            min_child_weight: 0.0,
            subsample: 1.0,
            cat_prior_weight: 1.0,
            cat_permutations: 4,
            seed: 0,
        }
    }

    /// Tuned xgb-mode setting: γ 0.5, depth 2, min_child_weight 2,
    /// subsample 0.4, with η 0.3, λ 1 and 100 iterations.
    pub fn xgb() -> Self {
        Self {
            mode: BoostMode::Xgb,
            iterations: 100,
            learning_rate: 0.3,
            l2_leaf_reg: 1.0,
            depth: 2,
            gamma: 0.5,
            min_child_weight: 2.0,
            subsample: 0.4,
            cat_prior_weight: 1.0,
            cat_permutations: 1,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidParams(m.to_string()));
        if self.iterations < 1 {
            return bad("iterations must be >= 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return bad("learning_rate must lie in (0, 1]");
        }
        if !(self.l2_leaf_reg >= 0.0 && self.l2_leaf_reg.is_finite()) {
            return bad("l2_leaf_reg must be finite and >= 0");
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return bad("gamma must be finite and >= 0");
        }
        if !(self.min_child_weight >= 0.0 && self.min_child_weight.is_finite()) {
            return bad("min_child_weight must be finite and >= 0");
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return bad("subsample must lie in (0, 1]");
        }
        if !(self.cat_prior_weight > 0.0 && self.cat_prior_weight.is_finite()) {
            return bad("cat_prior_weight must be > 0");
        }
        if self.cat_permutations < 1 {
            return bad("cat_permutations must be >= 1");
        }
        Ok(())
    }

    fn tree_params(&self) -> TreeParams {
        TreeParams {
            max_depth: Some(self.depth),
            min_samples_leaf: 1,
            min_child_weight: self.min_child_weight,
            feature_subsample: FeatureSubsample::All,
            split_gain_min: self.gamma,
            l2_leaf_reg: self.l2_leaf_reg,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradHess {
    pub g: Vec<f64>,
    pub h: Vec<f64>,
}

/// Gradient and hessian of `½(y − ŷ)²` with respect to `ŷ`.
pub fn grad_hess_squared(y: &[f64], pred: &[f64]) -> Result<GradHess, ModelError> {
    if y.len() != pred.len() {
        return Err(ModelError::shape(format!("{} targets vs {} predictions", y.len(), pred.len())));
    }
    Ok(GradHess { g: pred.iter().zip(y).map(|(p, t)| p - t).collect(), h: vec![1.0; y.len()] })
}

/// Ordered target statistic of each row: the smoothed mean target of the
/// same-category rows that precede it in `permutation`.
pub fn ordered_target_statistics(
    column: &[i64],
    y: &[f64],
    permutation: &[usize],
    prior_weight: f64,
    prior: Option<f64>,
) -> Result<Vec<f64>, ModelError> {
    let n = column.len();
    if y.len() != n || permutation.len() != n {
        return Err(ModelError::shape(format!(
            "column {n}, targets {}, permutation {}",
            y.len(),
            permutation.len()
        )));
    }
    let mut seen = vec![false; n];
    for &p in permutation {
        if p >= n || std::mem::replace(&mut seen[p], true) {
            return Err(ModelError::InvalidPermutation);
        }
    }
    if !(prior_weight > 0.0) {
        return Err(ModelError::InvalidParams("prior weight must be > 0".into()));
    }
    let p = prior.unwrap_or_else(|| mean(y));
    let mut history: BTreeMap<i64, (f64, f64)> = BTreeMap::new();
    let mut out = vec![0.0; n];
    for &row in permutation {
        let (sum, count) = history.entry(column[row]).or_insert((0.0, 0.0));
        out[row] = (*sum + prior_weight * p) / (*count + prior_weight);
        *sum += y[row];
        *count += 1.0;
    }
    Ok(out)
}

/// Inference-time encoding of one categorical column from the full
/// training history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatEncoder {
    pub column: usize,
    pub prior: f64,
    /// `(code, statistic)`, sorted by code.
    pub statistics: Vec<(i64, f64)>,
}

impl CatEncoder {
    pub fn encode(&self, code: f64) -> f64 {
        if code.fract() != 0.0 {
            return self.prior;
        }
        let code = code as i64;
        match self.statistics.binary_search_by_key(&code, |(c, _)| *c) {
            Ok(i) => self.statistics[i].1,
            Err(_) => self.prior,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtModel {
    pub base_score: f64,
    pub learning_rate: f64,
    pub trees: Vec<RegressionTree>,
    pub cat_encoders: Vec<CatEncoder>,
    pub params: BoostParams,
    pub n_features: usize,
    /// Training MSE after each accepted tree.
    pub train_mse: Vec<f64>,
}

fn codes(x: &FeatureMatrix, col: usize) -> Result<Vec<i64>, ModelError> {
    x.column_values(col)
        .into_iter()
        .map(|v| {
            if v.fract() == 0.0 && v.abs() < 9.0e15 {
                Ok(v as i64)
            } else {
                Err(ModelError::BadCategoricalSpec(format!("column {col} holds non-integer code {v}")))
            }
        })
        .collect()
}

fn encode_categoricals(
    x: &FeatureMatrix,
    y: &[f64],
    cat_cols: &[usize],
    params: &BoostParams,
) -> Result<(FeatureMatrix, Vec<CatEncoder>), ModelError> {
    let n = x.rows();
    let prior = mean(y);
    let a = params.cat_prior_weight;
    let perms: Vec<Vec<usize>> = (0..params.cat_permutations)
        .map(|p| {
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng::derived(params.seed, &[TAG_BOOST_PERMUTATION, p as u64]));
            perm
        })
        .collect();
    let mut out = x.clone();
    let mut encoders = Vec::with_capacity(cat_cols.len());
    for &col in cat_cols {
        let column = codes(x, col)?;
        let mut acc = vec![0.0; n];
        for perm in &perms {
            let enc = ordered_target_statistics(&column, y, perm, a, Some(prior))?;
            for (s, e) in acc.iter_mut().zip(enc) {
                *s += e;
            }
        }
        let k = perms.len() as f64;
        let averaged: Vec<f64> = acc.into_iter().map(|s| s / k).collect();
        out.set_column(col, &averaged).map_err(|e| ModelError::shape(e.to_string()))?;

        let mut totals: BTreeMap<i64, (f64, f64)> = BTreeMap::new();
        for (c, t) in column.iter().zip(y) {
            let e = totals.entry(*c).or_insert((0.0, 0.0));
            e.0 += t;
            e.1 += 1.0;
        }
        let statistics = totals.into_iter().map(|(c, (s, m))| (c, (s + a * prior) / (m + a))).collect();
        encoders.push(CatEncoder { column: col, prior, statistics });
    }
    Ok((out, encoders))
}

fn mse(y: &[f64], pred: &[f64]) -> f64 {
    y.iter().zip(pred).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64
}

pub fn fit_gbdt(
    x: &FeatureMatrix,
    y: &[f64],
    categorical_columns: &[usize],
    params: &BoostParams,
) -> Result<GbdtModel, ModelError> {
    params.validate()?;
    let n = x.rows();
    if y.len() != n {
        return Err(ModelError::shape(format!("{n} rows vs {} targets", y.len())));
    }
    if n < 2 {
        return Err(ModelError::shape("boosting needs at least 2 rows".to_string()));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::NonFiniteInput);
    }
    if params.mode == BoostMode::Xgb && !categorical_columns.is_empty() {
        return Err(ModelError::BadCategoricalSpec("xgb mode takes pre-encoded features only".into()));
    }
    let mut cols = categorical_columns.to_vec();
    cols.sort_unstable();
    cols.dedup();
    if cols.len() != categorical_columns.len() || cols.iter().any(|&c| c >= x.cols()) {
        return Err(ModelError::BadCategoricalSpec(format!(
            "categorical columns {categorical_columns:?} invalid for {} features",
            x.cols()
        )));
    }

    let (xt, cat_encoders) = if cols.is_empty() {
        (x.clone(), Vec::new())
    } else {
        encode_categoricals(x, y, &cols, params)?
    };

    let base_score = mean(y);
    let mut pred = vec![base_score; n];
    let sorted = SortedColumns::new(&xt);
    let tree_params = params.tree_params();
    let eta = params.learning_rate;
    let mut trees = Vec::new();
    let mut train_mse = Vec::new();
    let sub = if params.mode == BoostMode::Xgb && params.subsample < 1.0 {
        Some(((params.subsample * n as f64).round() as usize).clamp(1, n))
    } else {
        None
    };

    for k in 0..params.iterations {
        let gh = grad_hess_squared(y, &pred)?;
        let weights = match sub {
            Some(m) => {
                let mut r = rng::derived(params.seed, &[TAG_BOOST_SUBSAMPLE, k as u64]);
                let mut w = vec![0.0; n];
                for i in index::sample(&mut r, n, m) {
                    w[i] = 1.0;
                }
                w
            }
            None => vec![1.0; n],
        };
        let input = TreeInput { x: &xt, sorted: &sorted, targets: &gh.g, hessians: Some(&gh.h), weights: &weights };
        let mut tree_rng = rng::derived(params.seed, &[TAG_BOOST_TREE, k as u64]);
        let tree = input.grow(&tree_params, Some(&mut tree_rng));
        if tree.is_leaf_only() {
            break;
        }
        for (i, p) in pred.iter_mut().enumerate() {
            *p += eta * tree.predict_row(xt.row(i));
        }
        train_mse.push(mse(y, &pred));
        trees.push(tree);
    }

    Ok(GbdtModel {
        base_score,
        learning_rate: eta,
        trees,
        cat_encoders,
        params: params.clone(),
        n_features: x.cols(),
        train_mse,
    })
}

pub fn predict_gbdt(model: &GbdtModel, x: &FeatureMatrix) -> Result<Vec<f64>, ModelError> {
    if x.cols() != model.n_features {
        return Err(ModelError::columns(model.n_features, x.cols()));
    }
    let mut row = vec![0.0; x.cols()];
    Ok((0..x.rows())
        .map(|i| {
            row.copy_from_slice(x.row(i));
            for enc in &model.cat_encoders {
                row[enc.column] = enc.encode(row[enc.column]);
            }
            model.trees.iter().fold(model.base_score, |acc, t| acc + model.learning_rate * t.predict_row(&row))
        })
        .collect())
}
