//! Epsilon-insensitive support vector regression.
//!
//! The dual is solved by SMO over the usual `2n` variables
//! `z = (α, α*)` with labels `s = (+1…, −1…)`:
//!
//! ```text
//! min ½ zᵀQz + pᵀz   s.t.  sᵀz = 0,  0 ≤ z ≤ C
//! Q_tu = s_t s_u K(x_t, x_u),  p = (ε − y, ε + y)
//! ```
//!
//! Each step updates the maximal violating pair. Features are standardized
//! with training means and standard deviations inside [`fit_svr`]; the
//! constants are stored in the model and applied again at prediction time.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::FeatureMatrix;
use crate::model::ModelError;
use crate::stats::mean;

const TAU: f64 = 1e-12;
/// Largest training set for which the kernel matrix is precomputed.
const FULL_KERNEL_MAX_ROWS: usize = 2048;
/// Byte budget for cached kernel rows above that size.
const KERNEL_CACHE_BYTES: usize = 256 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Kernel {
    /// `exp(−gamma·‖u−v‖²)`; `gamma = None` means `1/d`.
    Rbf { gamma: Option<f64> },
    Linear,
}

impl Kernel {
    fn resolved(self, d: usize) -> Kernel {
        match self {
            Kernel::Rbf { gamma: None } => Kernel::Rbf { gamma: Some(1.0 / d.max(1) as f64) },
            k => k,
        }
    }

    #[inline]
    pub fn eval(&self, u: &[f64], v: &[f64]) -> f64 {
        match self {
            Kernel::Linear => u.iter().zip(v).map(|(a, b)| a * b).sum(),
            Kernel::Rbf { gamma } => {
                let g = gamma.unwrap_or(1.0 / u.len().max(1) as f64);
                let d2: f64 = u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
                (-g * d2).exp()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvrParams {
    #[serde(rename = "C")]
    pub c: f64,
    pub epsilon: f64,
    pub kernel: Kernel,
    pub tol: f64,
    /// Cap on SMO pair updates.
    pub max_passes: usize,
}

impl Default for SvrParams {
    /// Baseline: C = 1, RBF with gamma = 1/d, epsilon = 0.1.
    fn default() -> Self {
        Self { c: 1.0, epsilon: 0.1, kernel: Kernel::Rbf { gamma: None }, tol: 1e-3, max_passes: 10_000_000 }
    }
}

impl SvrParams {
    /// Tuned: RBF with gamma = 0.1, C = 1.
    pub fn tuned() -> Self {
        Self { kernel: Kernel::Rbf { gamma: Some(0.1) }, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(ModelError::InvalidParams("C must be finite and > 0".into()));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(ModelError::InvalidParams("epsilon must be finite and >= 0".into()));
        }
        if !(self.tol > 0.0) {
            return Err(ModelError::InvalidParams("tol must be > 0".into()));
        }
        if self.max_passes < 1 {
            return Err(ModelError::InvalidParams("max_passes must be >= 1".into()));
        }
        if let Kernel::Rbf { gamma: Some(g) } = self.kernel {
            if !(g > 0.0 && g.is_finite()) {
                return Err(ModelError::InvalidParams("gamma must be finite and > 0".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvrModel {
    /// Standardized training rows with nonzero coefficient.
    pub support_vectors: Vec<Vec<f64>>,
    /// `βᵢ = αᵢ − αᵢ*` per support vector.
    pub dual_coefs: Vec<f64>,
    /// Training-row index of each support vector.
    pub support_indices: Vec<usize>,
    pub bias: f64,
    /// Kernel with gamma resolved.
    pub kernel: Kernel,
    pub feature_means: Vec<f64>,
    pub feature_scales: Vec<f64>,
    pub n_train: usize,
}

impl SvrModel {
    pub fn n_features(&self) -> usize {
        self.feature_means.len()
    }

    fn standardize(&self, row: &[f64]) -> Vec<f64> {
        row.iter().zip(&self.feature_means).zip(&self.feature_scales).map(|((v, m), s)| (v - m) / s).collect()
    }

    fn decision(&self, z: &[f64]) -> f64 {
        self.support_vectors
            .iter()
            .zip(&self.dual_coefs)
            .fold(0.0, |acc, (sv, b)| acc + b * self.kernel.eval(sv, z))
            + self.bias
    }

    /// Dense `β` over the training rows.
    pub fn beta(&self) -> Vec<f64> {
        let mut beta = vec![0.0; self.n_train];
        for (&i, &b) in self.support_indices.iter().zip(&self.dual_coefs) {
            beta[i] = b;
        }
        beta
    }
}

fn standardizer(x: &FeatureMatrix) -> (Vec<f64>, Vec<f64>) {
    (0..x.cols())
        .map(|j| {
            let col = x.column_values(j);
            let m = mean(&col);
            let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / col.len() as f64;
            let s = var.sqrt();
            (m, if s > 0.0 && s.is_finite() { s } else { 1.0 })
        })
        .unzip()
}

/// Kernel rows over the standardized training set.
struct KernelRows<'a> {
    rows: &'a [Vec<f64>],
    kernel: Kernel,
    full: Option<Vec<f64>>,
    cache: HashMap<usize, Vec<f64>>,
    order: std::collections::VecDeque<usize>,
    capacity: usize,
}

impl<'a> KernelRows<'a> {
    fn new(rows: &'a [Vec<f64>], kernel: Kernel) -> Self {
        let n = rows.len();
        let full = (n <= FULL_KERNEL_MAX_ROWS).then(|| {
            let mut k = vec![0.0; n * n];
            k.par_chunks_mut(n.max(1)).enumerate().for_each(|(i, out)| {
                for (j, o) in out.iter_mut().enumerate() {
                    *o = kernel.eval(&rows[i], &rows[j]);
                }
            });
            k
        });
        let capacity = (KERNEL_CACHE_BYTES / (8 * n.max(1))).max(2);
        Self { rows, kernel, full, cache: HashMap::new(), order: Default::default(), capacity }
    }

    fn row(&mut self, i: usize) -> &[f64] {
        let n = self.rows.len();
        if let Some(full) = &self.full {
            return &full[i * n..(i + 1) * n];
        }
        if !self.cache.contains_key(&i) {
            if self.order.len() >= self.capacity {
                if let Some(old) = self.order.pop_front() {
                    self.cache.remove(&old);
                }
            }
            let kernel = self.kernel;
            let rows = self.rows;
            let r: Vec<f64> = rows.par_iter().map(|v| kernel.eval(&rows[i], v)).collect();
            self.cache.insert(i, r);
            self.order.push_back(i);
        }
        &self.cache[&i]
    }

    fn diag(&self, i: usize) -> f64 {
        self.kernel.eval(&self.rows[i], &self.rows[i])
    }
}

struct Violation {
    m: f64,
    big_m: f64,
    i: Option<usize>,
    j: Option<usize>,
}

fn select(alpha: &[f64], grad: &[f64], l: usize, c: f64) -> Violation {
    let mut out = Violation { m: f64::NEG_INFINITY, big_m: f64::INFINITY, i: None, j: None };
    for t in 0..2 * l {
        let s = if t < l { 1.0 } else { -1.0 };
        let v = -s * grad[t];
        let up = if s > 0.0 { alpha[t] < c } else { alpha[t] > 0.0 };
        let low = if s > 0.0 { alpha[t] > 0.0 } else { alpha[t] < c };
        if up && v > out.m {
            out.m = v;
            out.i = Some(t);
        }
        if low && v < out.big_m {
            out.big_m = v;
            out.j = Some(t);
        }
    }
    out
}

fn bias(alpha: &[f64], grad: &[f64], l: usize, c: f64, viol: &Violation) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for t in 0..2 * l {
        if alpha[t] > 0.0 && alpha[t] < c {
            let s = if t < l { 1.0 } else { -1.0 };
            sum += -s * grad[t];
            count += 1;
        }
    }
    if count > 0 {
        sum / count as f64
    } else {
        match (viol.m.is_finite(), viol.big_m.is_finite()) {
            (true, true) => (viol.m + viol.big_m) / 2.0,
            (true, false) => viol.m,
            (false, true) => viol.big_m,
            (false, false) => 0.0,
        }
    }
}

pub fn fit_svr(x: &FeatureMatrix, y: &[f64], params: &SvrParams) -> Result<SvrModel, ModelError> {
    params.validate()?;
    let l = x.rows();
    if l == 0 || y.len() != l {
        return Err(ModelError::shape(format!("{l} rows vs {} targets", y.len())));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::NonFiniteInput);
    }
    let (feature_means, feature_scales) = standardizer(x);
    let rows: Vec<Vec<f64>> = (0..l)
        .map(|i| x.row(i).iter().zip(&feature_means).zip(&feature_scales).map(|((v, m), s)| (v - m) / s).collect())
        .collect();
    let kernel = params.kernel.resolved(x.cols());
    let mut kr = KernelRows::new(&rows, kernel);
    let diag: Vec<f64> = (0..l).map(|i| kr.diag(i)).collect();

    let c = params.c;
    let eps = params.epsilon;
    let mut alpha = vec![0.0; 2 * l];
    let mut grad: Vec<f64> = (0..2 * l).map(|t| if t < l { eps - y[t] } else { eps + y[t - l] }).collect();
    let sign = |t: usize| if t < l { 1.0 } else { -1.0 };

    let mut iter = 0usize;
    let viol = loop {
        let v = select(&alpha, &grad, l, c);
        let (i, j) = match (v.i, v.j) {
            (Some(i), Some(j)) if v.m - v.big_m > params.tol => (i, j),
            _ => break v,
        };
        if iter >= params.max_passes {
            break v;
        }
        iter += 1;

        let (ri, rj) = (i % l, j % l);
        let (si, sj) = (sign(i), sign(j));
        let kij = kr.row(ri)[rj];
        let qii = diag[ri];
        let qjj = diag[rj];
        let qij = si * sj * kij;
        let (old_i, old_j) = (alpha[i], alpha[j]);
        let (mut ai, mut aj) = (old_i, old_j);

        if si != sj {
            let mut quad = qii + qjj + 2.0 * qij;
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = ai - aj;
            ai += delta;
            aj += delta;
            if diff > 0.0 {
                if aj < 0.0 {
                    aj = 0.0;
                    ai = diff;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = -diff;
            }
            if diff > 0.0 {
                if ai > c {
                    ai = c;
                    aj = c - diff;
                }
            } else if aj > c {
                aj = c;
                ai = c + diff;
            }
        } else {
            let mut quad = qii + qjj - 2.0 * qij;
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (grad[i] - grad[j]) / quad;
            let sum = ai + aj;
            ai -= delta;
            aj += delta;
            if sum > c {
                if ai > c {
                    ai = c;
                    aj = sum - c;
                }
            } else if aj < 0.0 {
                aj = 0.0;
                ai = sum;
            }
            if sum > c {
                if aj > c {
                    aj = c;
                    ai = sum - c;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = sum;
            }
        }
        alpha[i] = ai;
        alpha[j] = aj;

        let (dai, daj) = (ai - old_i, aj - old_j);
        let ki = kr.row(ri).to_vec();
        let kj = kr.row(rj);
        for t in 0..2 * l {
            let st = sign(t);
            let r = t % l;
            grad[t] += st * (si * ki[r] * dai + sj * kj[r] * daj);
        }
    };

    let b = bias(&alpha, &grad, l, c, &viol);
    let mut support_vectors = Vec::new();
    let mut dual_coefs = Vec::new();
    let mut support_indices = Vec::new();
    for r in 0..l {
        let beta = alpha[r] - alpha[r + l];
        if beta != 0.0 {
            support_vectors.push(rows[r].clone());
            dual_coefs.push(beta);
            support_indices.push(r);
        }
    }
    let model = SvrModel {
        support_vectors,
        dual_coefs,
        support_indices,
        bias: b,
        kernel,
        feature_means,
        feature_scales,
        n_train: l,
    };
    let gap = viol.m - viol.big_m;
    if viol.i.is_some() && viol.j.is_some() && gap > params.tol {
        return Err(ModelError::NoConvergence { violation: gap, model: Box::new(model) });
    }
    Ok(model)
}

pub fn predict_svr(model: &SvrModel, x: &FeatureMatrix) -> Result<Vec<f64>, ModelError> {
    if x.cols() != model.n_features() {
        return Err(ModelError::columns(model.n_features(), x.cols()));
    }
    Ok((0..x.rows()).into_par_iter().map(|i| model.decision(&model.standardize(x.row(i)))).collect())
}

/// Largest KKT violation over the training set, with `e = f(x) − y`:
/// `β = 0` needs `|e| ≤ ε`; `0 < β < C` needs `e = −ε`; `β = C` needs
/// `e ≤ −ε`; and symmetrically for negative `β`.
pub fn kkt_report(model: &SvrModel, x: &FeatureMatrix, y: &[f64], params: &SvrParams) -> Result<f64, ModelError> {
    if y.len() != x.rows() || x.rows() != model.n_train {
        return Err(ModelError::shape(format!(
            "model trained on {} rows, got {} rows and {} targets",
            model.n_train,
            x.rows(),
            y.len()
        )));
    }
    let f = predict_svr(model, x)?;
    let beta = model.beta();
    let c = params.c;
    let eps = params.epsilon;
    let at_bound = |b: f64| b.abs() >= c * (1.0 - 1e-12);
    Ok(f.iter()
        .zip(y)
        .zip(&beta)
        .map(|((f, y), &b)| {
            let e = f - y;
            if b == 0.0 {
                (e.abs() - eps).max(0.0)
            } else if b > 0.0 && !at_bound(b) {
                (e + eps).abs()
            } else if b > 0.0 {
                (e + eps).max(0.0)
            } else if !at_bound(b) {
                (e - eps).abs()
            } else {
                (eps - e).max(0.0)
            }
        })
        .fold(0.0, f64::max))
}

/// Dual objective `−½βᵀKβ − ε‖β‖₁ + yᵀβ` of a model on its training set.
pub fn dual_objective(model: &SvrModel, y: &[f64], epsilon: f64) -> Result<f64, ModelError> {
    if y.len() != model.n_train {
        return Err(ModelError::shape(format!("model trained on {} rows, got {}", model.n_train, y.len())));
    }
    let sv = &model.support_vectors;
    let b = &model.dual_coefs;
    let mut quad = 0.0;
    for p in 0..sv.len() {
        for q in 0..sv.len() {
            quad += b[p] * b[q] * model.kernel.eval(&sv[p], &sv[q]);
        }
    }
    let l1: f64 = b.iter().map(|v| v.abs()).sum();
    let lin: f64 = model.support_indices.iter().zip(b).map(|(&i, v)| y[i] * v).sum();
    Ok(-0.5 * quad - epsilon * l1 + lin)
}
