//! Shared model plumbing: the error type, model kinds, fit specifications
//! and the union of trained regressors.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::boost::{fit_gbdt, predict_gbdt, BoostMode, BoostParams, GbdtModel};
use crate::data::FeatureMatrix;
use crate::forest::{fit_forest, predict_forest, ForestModel, ForestParams};
use crate::linear::{fit_ols, predict_linear, LinearModel};
use crate::svr::{fit_svr, predict_svr, Kernel, SvrModel, SvrParams};
use crate::tree::FeatureSubsample;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite input")]
    NonFiniteInput,
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("bad categorical specification: {0}")]
    BadCategoricalSpec(String),
    #[error("permutation is not a bijection over the rows")]
    InvalidPermutation,
    #[error("solver stopped with KKT violation {violation:.3e} above tolerance")]
    NoConvergence { violation: f64, model: Box<SvrModel> },
}

impl ModelError {
    pub(crate) fn shape(msg: String) -> Self {
        ModelError::ShapeMismatch(msg)
    }

    pub(crate) fn columns(expected: usize, got: usize) -> Self {
        ModelError::ShapeMismatch(format!("model expects {expected} features, got {got}"))
    }
}

/// The five regressors the pipeline trains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Linear,
    Svr,
    Forest,
    Xgb,
    Cat,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [ModelKind::Linear, ModelKind::Svr, ModelKind::Forest, ModelKind::Xgb, ModelKind::Cat];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Linear => "linear",
            ModelKind::Svr => "svr",
            ModelKind::Forest => "forest",
            ModelKind::Xgb => "xgb",
            ModelKind::Cat => "cat",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown model `{s}` (expected linear, svr, forest, xgb or cat)"))
    }
}

/// A single hyperparameter value, as written in config files and search
/// trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Bool(bool),
    Int(i64),
    Float(f64),
    Text(String),
}

impl ParamValue {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            ParamValue::Int(i) => Some(*i as f64),
            ParamValue::Float(f) => Some(*f),
            _ => None,
        }
    }

    fn as_usize(&self) -> Option<usize> {
        match self {
            ParamValue::Int(i) if *i >= 0 => Some(*i as usize),
            ParamValue::Float(f) if *f >= 0.0 && f.fract() == 0.0 => Some(*f as usize),
            _ => None,
        }
    }
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Bool(b) => write!(f, "{b}"),
            ParamValue::Int(i) => write!(f, "{i}"),
            ParamValue::Float(x) => write!(f, "{x}"),
            ParamValue::Text(s) => f.write_str(s),
        }
    }
}

/// What to fit: a model kind with its full parameter set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    Linear {
        fit_intercept: bool,
    },
    Svr(SvrParams),
    Forest(ForestParams),
    Boost {
        params: BoostParams,
        /// Raw categorical code columns (cat mode only).
        categorical_columns: Vec<usize>,
    },
}

impl ModelSpec {
    /// Tuned defaults for each kind.
    pub fn tuned(kind: ModelKind) -> Self {
        match kind {
            ModelKind::Linear => ModelSpec::Linear { fit_intercept: false },
            ModelKind::Svr => ModelSpec::Svr(SvrParams::tuned()),
            ModelKind::Forest => ModelSpec::Forest(ForestParams::default()),
            ModelKind::Xgb => ModelSpec::Boost { params: BoostParams::xgb(), categorical_columns: Vec::new() },
            ModelKind::Cat => ModelSpec::Boost { params: BoostParams::cat(), categorical_columns: Vec::new() },
        }
    }

    /// Untuned starting points, close to common library defaults.
    pub fn baseline(kind: ModelKind) -> Self {
        match kind {
            ModelKind::Linear => ModelSpec::Linear { fit_intercept: true },
            ModelKind::Svr => ModelSpec::Svr(SvrParams::default()),
            ModelKind::Forest => ModelSpec::Forest(ForestParams {
                n_estimators: 100,
                tree: crate::tree::TreeParams::default(),
                bootstrap: true,
                seed: 0,
            }),
            ModelKind::Xgb => ModelSpec::Boost {
                params: BoostParams {
                    depth: 6,
                    gamma: 0.0,
                    min_child_weight: 1.0,
                    subsample: 1.0,
                    ..BoostParams::xgb()
                },
                categorical_columns: Vec::new(),
            },
            ModelKind::Cat => ModelSpec::Boost {
                params: BoostParams { depth: 6, l2_leaf_reg: 3.0, ..BoostParams::cat() },
                categorical_columns: Vec::new(),
            },
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            ModelSpec::Linear { .. } => ModelKind::Linear,
            ModelSpec::Svr(_) => ModelKind::Svr,
            ModelSpec::Forest(_) => ModelKind::Forest,
            ModelSpec::Boost { params, .. } => match params.mode {
                BoostMode::Xgb => ModelKind::Xgb,
                BoostMode::Cat => ModelKind::Cat,
            },
        }
    }

    /// Replaces every model-internal seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        match &mut self {
            ModelSpec::Forest(p) => p.seed = seed,
            ModelSpec::Boost { params, .. } => params.seed = seed,
            ModelSpec::Linear { .. } | ModelSpec::Svr(_) => {}
        }
        self
    }

    pub fn seed(&self) -> Option<u64> {
        match self {
            ModelSpec::Forest(p) => Some(p.seed),
            ModelSpec::Boost { params, .. } => Some(params.seed),
            _ => None,
        }
    }

    /// Sets one named hyperparameter.
    pub fn set_param(&mut self, name: &str, value: &ParamValue) -> Result<(), ModelError> {
        let bad = || ModelError::InvalidParams(format!("bad value `{value}` for `{name}`"));
        let float = || value.as_f64().ok_or_else(bad);
        let count = || value.as_usize().ok_or_else(bad);
        match self {
            ModelSpec::Linear { fit_intercept } => match (name, value) {
                ("fit_intercept", ParamValue::Bool(b)) => *fit_intercept = *b,
                _ => return Err(unknown(name, "linear")),
            },
            ModelSpec::Svr(p) => match name {
                "C" | "c" => p.c = float()?,
                "epsilon" => p.epsilon = float()?,
                "tol" => p.tol = float()?,
                "max_passes" => p.max_passes = count()?,
                "gamma" => match value {
                    ParamValue::Text(s) if s == "auto" => p.kernel = Kernel::Rbf { gamma: None },
                    _ => p.kernel = Kernel::Rbf { gamma: Some(float()?) },
                },
                "kernel" => match value {
                    ParamValue::Text(s) if s == "linear" => p.kernel = Kernel::Linear,
                    ParamValue::Text(s) if s == "rbf" => {
                        if p.kernel == Kernel::Linear {
                            p.kernel = Kernel::Rbf { gamma: None };
                        }
                    }
                    _ => return Err(bad()),
                },
                _ => return Err(unknown(name, "svr")),
            },
            ModelSpec::Forest(p) => match name {
                "n_estimators" => p.n_estimators = count()?,
                "max_depth" => {
                    p.tree.max_depth = match value {
                        ParamValue::Text(s) if s == "none" => None,
                        _ => Some(count()?),
                    }
                }
                "min_samples_leaf" => p.tree.min_samples_leaf = count()?,
                "bootstrap" => match value {
                    ParamValue::Bool(b) => p.bootstrap = *b,
                    _ => return Err(bad()),
                },
                "max_features" => {
                    p.tree.feature_subsample = match value {
                        ParamValue::Text(s) if s == "sqrt" => FeatureSubsample::Sqrt,
                        ParamValue::Text(s) if s == "all" => FeatureSubsample::All,
                        _ => FeatureSubsample::Fraction(float()?),
                    }
                }
                "seed" => p.seed = count()? as u64,
                _ => return Err(unknown(name, "forest")),
            },
            ModelSpec::Boost { params: p, .. } => match name {
                "iterations" => p.iterations = count()?,
                "learning_rate" => p.learning_rate = float()?,
                "l2_leaf_reg" | "lambda" => p.l2_leaf_reg = float()?,
                "depth" | "max_depth" => p.depth = count()?,
                "gamma" => p.gamma = float()?,
                "min_child_weight" => p.min_child_weight = float()?,
                "subsample" => p.subsample = float()?,
                "cat_prior_weight" => p.cat_prior_weight = float()?,
                "cat_permutations" => p.cat_permutations = count()?,
                "seed" => p.seed = count()? as u64,
                _ => return Err(unknown(name, "boost")),
            },
        }
        self.validate()
    }

    pub fn with_param(mut self, name: &str, value: ParamValue) -> Result<Self, ModelError> {
        self.set_param(name, &value)?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        match self {
            ModelSpec::Linear { .. } => Ok(()),
            ModelSpec::Svr(p) => p.validate(),
            ModelSpec::Forest(p) => p.validate(),
            ModelSpec::Boost { params, .. } => params.validate(),
        }
    }

    pub fn fit(&self, x: &FeatureMatrix, y: &[f64]) -> Result<TrainedModel, ModelError> {
        Ok(match self {
            ModelSpec::Linear { fit_intercept } => TrainedModel::Linear(fit_ols(x, y, *fit_intercept)?),
            ModelSpec::Svr(p) => TrainedModel::Svr(fit_svr(x, y, p)?),
            ModelSpec::Forest(p) => TrainedModel::Forest(fit_forest(x, y, p)?),
            ModelSpec::Boost { params, categorical_columns } => {
                TrainedModel::Gbdt(fit_gbdt(x, y, categorical_columns, params)?)
            }
        })
    }
}

fn unknown(name: &str, family: &str) -> ModelError {
    ModelError::InvalidParams(format!("unknown {family} parameter `{name}`"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", content = "state", rename_all = "snake_case")]
pub enum TrainedModel {
    Linear(LinearModel),
    Forest(ForestModel),
    Gbdt(GbdtModel),
    Svr(SvrModel),
}

impl TrainedModel {
    pub fn predict(&self, x: &FeatureMatrix) -> Result<Vec<f64>, ModelError> {
        match self {
            TrainedModel::Linear(m) => predict_linear(m, x),
            TrainedModel::Forest(m) => predict_forest(m, x),
            TrainedModel::Gbdt(m) => predict_gbdt(m, x),
            TrainedModel::Svr(m) => predict_svr(m, x),
        }
    }

    pub fn n_features(&self) -> usize {
        match self {
            TrainedModel::Linear(m) => m.coefficients.len(),
            TrainedModel::Forest(m) => m.n_features,
            TrainedModel::Gbdt(m) => m.n_features,
            TrainedModel::Svr(m) => m.n_features(),
        }
    }

    pub fn family(&self) -> &'static str {
        match self {
            TrainedModel::Linear(_) => "linear",
            TrainedModel::Forest(_) => "forest",
            TrainedModel::Gbdt(_) => "gbdt",
            TrainedModel::Svr(_) => "svr",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kind_round_trip() {
        for k in ModelKind::ALL {
            assert_eq!(k.as_str().parse::<ModelKind>().unwrap(), k);
            assert_eq!(ModelSpec::tuned(k).kind(), k);
        }
        assert!("ridge".parse::<ModelKind>().is_err());
    }

    #[test]
    fn params_by_name() {
        let spec = ModelSpec::tuned(ModelKind::Forest)
            .with_param("n_estimators", ParamValue::Int(7))
            .unwrap()
            .with_param("max_features", ParamValue::Float(0.5))
            .unwrap();
        match &spec {
            ModelSpec::Forest(p) => {
                assert_eq!(p.n_estimators, 7);
                assert_eq!(p.tree.feature_subsample, FeatureSubsample::Fraction(0.5));
            }
            _ => unreachable!(),
        }
        assert!(spec.clone().with_param("learning_rate", ParamValue::Float(0.1)).is_err());
        assert!(spec.with_param("n_estimators", ParamValue::Int(0)).is_err());
        let svr = ModelSpec::tuned(ModelKind::Svr).with_param("gamma", ParamValue::Float(0.5)).unwrap();
        assert_eq!(svr, ModelSpec::Svr(SvrParams { kernel: Kernel::Rbf { gamma: Some(0.5) }, ..SvrParams::tuned() }));
    }

    #[test]
    fn seeds_reach_stochastic_models() {
        assert_eq!(ModelSpec::tuned(ModelKind::Cat).with_seed(9).seed(), Some(9));
        assert_eq!(ModelSpec::tuned(ModelKind::Linear).with_seed(9).seed(), None);
    }
}
