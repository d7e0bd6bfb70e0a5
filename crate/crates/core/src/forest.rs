//! Random forest regression: bagged CART trees with per-node feature
//! subsampling, averaged.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::FeatureMatrix;
use crate::model::ModelError;
use crate::rng::{self, TAG_FOREST_TREE};
use crate::tree::{FeatureSubsample, RegressionTree, SortedColumns, TreeInput, TreeParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub n_estimators: usize,
    pub tree: TreeParams,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestParams {
    /// The tuned setting: 333 trees, depth 90, `sqrt` features per node.
    fn default() -> Self {
        Self {
            n_estimators: 333,
            tree: TreeParams {
                max_depth: Some(90),
                feature_subsample: FeatureSubsample::Sqrt,
                ..TreeParams::default()
            },
            bootstrap: true,
            seed: 0,
        }
    }
}

impl ForestParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.n_estimators < 1 {
            return Err(ModelError::InvalidParams("n_estimators must be >= 1".into()));
        }
        self.tree.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub trees: Vec<RegressionTree>,
    pub params: ForestParams,
    pub n_features: usize,
}

fn fit_one(
    x: &FeatureMatrix,
    sorted: &SortedColumns,
    y: &[f64],
    params: &ForestParams,
    b: usize,
) -> RegressionTree {
    let n = x.rows();
    let mut rng = rng::derived(params.seed, &[TAG_FOREST_TREE, b as u64]);
    // Bootstrap draws come first on the tree's stream, node draws after.
    let weights = if params.bootstrap {
        let mut w = vec![0.0; n];
        for _ in 0..n {
            w[rng.random_range(0..n)] += 1.0;
        }
        w
    } else {
        vec![1.0; n]
    };
    let input = TreeInput { x, sorted, targets: y, hessians: None, weights: &weights };
    input.grow(&params.tree, Some(&mut rng))
}

pub fn fit_forest(x: &FeatureMatrix, y: &[f64], params: &ForestParams) -> Result<ForestModel, ModelError> {
    params.validate()?;
    if y.len() != x.rows() {
        return Err(ModelError::shape(format!("{} rows vs {} targets", x.rows(), y.len())));
    }
    if x.rows() < 2 {
        return Err(ModelError::shape("a forest needs at least 2 rows".to_string()));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::NonFiniteInput);
    }
    let sorted = SortedColumns::new(x);
    let trees = (0..params.n_estimators)
        .into_par_iter()
        .map(|b| fit_one(x, &sorted, y, params, b))
        .collect();
    Ok(ForestModel { trees, params: params.clone(), n_features: x.cols() })
}

/// Mean of the per-tree predictions, summed in tree order.
pub fn predict_forest(model: &ForestModel, x: &FeatureMatrix) -> Result<Vec<f64>, ModelError> {
    if x.cols() != model.n_features {
        return Err(ModelError::columns(model.n_features, x.cols()));
    }
    let b = model.trees.len() as f64;
    Ok((0..x.rows())
        .into_par_iter()
        .map(|i| {
            let row = x.row(i);
            model.trees.iter().fold(0.0, |acc, t| acc + t.predict_row(row)) / b
        })
        .collect())
}
