//! CART regression trees.
//!
//! One learner serves two callers:
//!
//! * plain regression (random forest): splits minimize squared error and
//!   leaves predict the mean target;
//! * second-order boosting: targets are per-row gradients `g` with hessians
//!   `h`, the split gain is
//!   `½·[G_L²/(H_L+λ) + G_R²/(H_R+λ) − G²/(H+λ)] − γ`, and leaves predict
//!   `−G/(H+λ)`.
//!
//! Split search is exact and greedy over presorted columns. Thresholds sit
//! at the midpoint of adjacent distinct values and rows with
//! `x <= threshold` go left. Among candidates whose gains agree to 1e-12
//! relative, the lowest feature index wins, then the lowest threshold. The
//! gain stored for a chosen split is recomputed by direct summation over
//! the node's rows in row order.

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::data::FeatureMatrix;
use crate::model::ModelError;
use crate::rng::Rng;

/// Relative tolerance under which two gains count as tied.
pub const GAIN_TIE_REL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSubsample {
    All,
    /// `ceil(sqrt(d))` features per node.
    Sqrt,
    /// `max(1, floor(f * d))` features per node, `f` in (0, 1].
    Fraction(f64),
}

impl FeatureSubsample {
    pub fn count(self, d: usize) -> usize {
        match self {
            FeatureSubsample::All => d,
            FeatureSubsample::Sqrt => ((d as f64).sqrt().ceil() as usize).clamp(1, d.max(1)),
            FeatureSubsample::Fraction(f) => ((f * d as f64).floor() as usize).clamp(1, d.max(1)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TreeParams {
    /// `None` grows until the other constraints stop it.
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    /// Minimum hessian mass per child (hessian path only).
    pub min_child_weight: f64,
    pub feature_subsample: FeatureSubsample,
    /// γ: subtracted from every hessian-path gain.
    pub split_gain_min: f64,
    /// λ: L2 penalty on leaf values (hessian path only).
    pub l2_leaf_reg: f64,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            max_depth: None,
            min_samples_leaf: 1,
            min_child_weight: 0.0,
            feature_subsample: FeatureSubsample::All,
            split_gain_min: 0.0,
            l2_leaf_reg: 0.0,
        }
    }
}

impl TreeParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.min_samples_leaf < 1 {
            return Err(ModelError::InvalidParams("min_samples_leaf must be >= 1".into()));
        }
        if let FeatureSubsample::Fraction(f) = self.feature_subsample {
            if !(f > 0.0 && f <= 1.0) {
                return Err(ModelError::InvalidParams(format!("feature fraction {f} outside (0, 1]")));
            }
        }
        for (name, v) in [
            ("min_child_weight", self.min_child_weight),
            ("split_gain_min", self.split_gain_min),
            ("l2_leaf_reg", self.l2_leaf_reg),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(ModelError::InvalidParams(format!("{name} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Node {
    Split { feature: usize, threshold: f64, left: usize, right: usize, gain: f64 },
    Leaf { value: f64 },
}

/// Nodes in preorder; index 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub nodes: Vec<Node>,
    pub depth: usize,
    pub n_features: usize,
}

impl RegressionTree {
    pub fn leaf(value: f64, n_features: usize) -> Self {
        Self { nodes: vec![Node::Leaf { value }], depth: 0, n_features }
    }

    pub fn is_leaf_only(&self) -> bool {
        self.nodes.len() == 1
    }

    #[inline]
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { value } => return *value,
                Node::Split { feature, threshold, left, right, .. } => {
                    i = if row[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    /// Index of the leaf a row lands in.
    pub fn leaf_index(&self, row: &[f64]) -> usize {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { .. } => return i,
                Node::Split { feature, threshold, left, right, .. } => {
                    i = if row[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitCandidate {
    pub feature_index: usize,
    pub threshold: f64,
    pub gain: f64,
}

/// Per-feature row orderings, ascending by value then by row index.
/// Computed once per design matrix and reused across trees.
#[derive(Debug, Clone)]
pub struct SortedColumns {
    order: Vec<Vec<u32>>,
}

impl SortedColumns {
    pub fn new(x: &FeatureMatrix) -> Self {
        let order = (0..x.cols())
            .map(|j| {
                let mut idx: Vec<u32> = (0..x.rows() as u32).collect();
                idx.sort_by(|&a, &b| {
                    x.get(a as usize, j).total_cmp(&x.get(b as usize, j)).then(a.cmp(&b))
                });
                idx
            })
            .collect();
        Self { order }
    }
}

/// Training inputs for one tree. `weights[i]` is the multiplicity of row
/// `i` in the sample (0 = not drawn).
pub(crate) struct TreeInput<'a> {
    pub x: &'a FeatureMatrix,
    pub sorted: &'a SortedColumns,
    pub targets: &'a [f64],
    pub hessians: Option<&'a [f64]>,
    pub weights: &'a [f64],
}

struct NodeRows {
    by_feature: Vec<Vec<u32>>,
    by_index: Vec<u32>,
}

#[derive(Clone, Copy)]
struct Totals {
    w: f64,
    s: f64,
    h: f64,
}

impl TreeInput<'_> {
    fn hess(&self, r: usize) -> f64 {
        self.hessians.map_or(1.0, |h| h[r])
    }

    /// Sums over `rows` in the given order.
    fn totals(&self, rows: &[u32]) -> Totals {
        let mut t = Totals { w: 0.0, s: 0.0, h: 0.0 };
        for &r in rows {
            let r = r as usize;
            let w = self.weights[r];
            t.w += w;
            t.s += w * self.targets[r];
            t.h += w * self.hess(r);
        }
        t
    }

    fn is_constant(&self, rows: &[u32]) -> bool {
        let first = self.targets[rows[0] as usize];
        rows.iter().all(|&r| self.targets[r as usize] == first)
    }

    /// Plain two-pass sum of squared deviations, in row order.
    fn sse(&self, rows: &[u32]) -> f64 {
        let t = self.totals(rows);
        let m = t.s / t.w;
        rows.iter()
            .map(|&r| {
                let r = r as usize;
                let d = self.targets[r] - m;
                self.weights[r] * d * d
            })
            .sum()
    }

    fn hess_gain(&self, l: Totals, r: Totals, p: Totals, lambda: f64, gamma: f64) -> f64 {
        0.5 * (l.s * l.s / (l.h + lambda) + r.s * r.s / (r.h + lambda) - p.s * p.s / (p.h + lambda))
            - gamma
    }

    fn leaf_value(&self, rows: &[u32], lambda: f64) -> f64 {
        if self.hessians.is_some() {
            let t = self.totals(rows);
            -t.s / (t.h + lambda)
        } else if self.is_constant(rows) {
            self.targets[rows[0] as usize]
        } else {
            let t = self.totals(rows);
            let m = t.s / t.w;
            let corr: f64 = rows
                .iter()
                .map(|&r| self.weights[r as usize] * (self.targets[r as usize] - m))
                .sum::<f64>()
                / t.w;
            m + corr
        }
    }

    fn root(&self) -> NodeRows {
        let keep = |r: &u32| self.weights[*r as usize] > 0.0;
        NodeRows {
            by_feature: self.sorted.order.iter().map(|o| o.iter().copied().filter(keep).collect()).collect(),
            by_index: (0..self.x.rows() as u32).filter(keep).collect(),
        }
    }

    /// Best split of a node, or `None` when nothing has positive gain.
    fn best_split(&self, node: &NodeRows, params: &TreeParams, rng: Option<&mut Rng>) -> Option<SplitCandidate> {
        let d = self.x.cols();
        let rows = &node.by_index;
        if rows.is_empty() || d == 0 {
            return None;
        }
        let parent = self.totals(rows);
        if parent.w < 2.0 * params.min_samples_leaf as f64 {
            return None;
        }
        let hessian_path = self.hessians.is_some();
        if !hessian_path && self.is_constant(rows) {
            return None;
        }

        let features: Vec<usize> = match (params.feature_subsample.count(d), rng) {
            (m, Some(rng)) if m < d => {
                let mut f = index::sample(rng, d, m).into_vec();
                f.sort_unstable();
                f
            }
            _ => (0..d).collect(),
        };

        let lambda = params.l2_leaf_reg;
        let gamma = params.split_gain_min;
        let msl = params.min_samples_leaf as f64;
        // Gains are measured against centered targets in the squared-error
        // path, which avoids cancellation when the mean is large.
        let center = if hessian_path { 0.0 } else { parent.s / parent.w };
        let (scale, p_s) = if hessian_path {
            let s: f64 = rows
                .iter()
                .map(|&r| {
                    let r = r as usize;
                    let g = self.targets[r];
                    self.weights[r] * g * g / (self.hess(r) + lambda).max(f64::MIN_POSITIVE)
                })
                .sum();
            (0.5 * s, parent.s)
        } else {
            let s: f64 = rows
                .iter()
                .map(|&r| {
                    let r = r as usize;
                    let c = self.targets[r] - center;
                    self.weights[r] * c * c
                })
                .sum();
            let ps: f64 = rows.iter().map(|&r| self.weights[r as usize] * (self.targets[r as usize] - center)).sum();
            (s, ps)
        };
        let min_gain = 1e-12 * scale;
        let p = Totals { w: parent.w, s: p_s, h: parent.h };

        let mut best: Option<(usize, f64, f64)> = None;
        for &f in &features {
            let order = &node.by_feature[f];
            let mut l = Totals { w: 0.0, s: 0.0, h: 0.0 };
            for k in 0..order.len().saturating_sub(1) {
                let r = order[k] as usize;
                let w = self.weights[r];
                l.w += w;
                l.s += w * (self.targets[r] - center);
                l.h += w * self.hess(r);
                let xv = self.x.get(r, f);
                let xn = self.x.get(order[k + 1] as usize, f);
                if xv == xn {
                    continue;
                }
                let rt = Totals { w: p.w - l.w, s: p.s - l.s, h: p.h - l.h };
                if l.w < msl || rt.w < msl {
                    continue;
                }
                let gain = if hessian_path {
                    if l.h < params.min_child_weight || rt.h < params.min_child_weight {
                        continue;
                    }
                    self.hess_gain(l, rt, p, lambda, gamma)
                } else {
                    l.s * l.s / l.w + rt.s * rt.s / rt.w - p.s * p.s / p.w
                };
                if !(gain > min_gain) {
                    continue;
                }
                let better = match best {
                    None => true,
                    Some((_, _, bg)) => gain > bg + GAIN_TIE_REL * bg.abs(),
                };
                if better {
                    best = Some((f, midpoint(xv, xn), gain));
                }
            }
        }

        let (feature, threshold, _) = best?;
        let (left, right): (Vec<u32>, Vec<u32>) =
            rows.iter().partition(|&&r| self.x.get(r as usize, feature) <= threshold);
        let gain = if hessian_path {
            self.hess_gain(self.totals(&left), self.totals(&right), parent, lambda, gamma)
        } else {
            self.sse(rows) - self.sse(&left) - self.sse(&right)
        };
        (gain > 0.0).then_some(SplitCandidate { feature_index: feature, threshold, gain })
    }

    fn partition(&self, node: NodeRows, split: &SplitCandidate) -> (NodeRows, NodeRows) {
        let goes_left = |r: &u32| self.x.get(*r as usize, split.feature_index) <= split.threshold;
        let mut left = NodeRows { by_feature: Vec::with_capacity(node.by_feature.len()), by_index: Vec::new() };
        let mut right = NodeRows { by_feature: Vec::with_capacity(node.by_feature.len()), by_index: Vec::new() };
        for list in node.by_feature {
            let (l, r): (Vec<u32>, Vec<u32>) = list.into_iter().partition(goes_left);
            left.by_feature.push(l);
            right.by_feature.push(r);
        }
        let (l, r): (Vec<u32>, Vec<u32>) = node.by_index.into_iter().partition(goes_left);
        left.by_index = l;
        right.by_index = r;
        (left, right)
    }

    /// Grows a tree depth-first, emitting nodes in preorder.
    pub(crate) fn grow(&self, params: &TreeParams, mut rng: Option<&mut Rng>) -> RegressionTree {
        struct Pending {
            rows: NodeRows,
            depth: usize,
            parent: Option<(usize, bool)>,
        }
        let lambda = params.l2_leaf_reg;
        let mut nodes: Vec<Node> = Vec::new();
        let mut max_depth_seen = 0;
        let mut stack = vec![Pending { rows: self.root(), depth: 0, parent: None }];

        while let Some(Pending { rows, depth, parent }) = stack.pop() {
            let id = nodes.len();
            if let Some((p, is_left)) = parent {
                if let Node::Split { left, right, .. } = &mut nodes[p] {
                    if is_left {
                        *left = id;
                    } else {
                        *right = id;
                    }
                }
            }
            max_depth_seen = max_depth_seen.max(depth);
            if rows.by_index.is_empty() {
                nodes.push(Node::Leaf { value: 0.0 });
                continue;
            }
            let can_split = params.max_depth.is_none_or(|m| depth < m);
            let split = if can_split { self.best_split(&rows, params, rng.as_deref_mut()) } else { None };
            match split {
                None => nodes.push(Node::Leaf { value: self.leaf_value(&rows.by_index, lambda) }),
                Some(s) => {
                    nodes.push(Node::Split {
                        feature: s.feature_index,
                        threshold: s.threshold,
                        left: usize::MAX,
                        right: usize::MAX,
                        gain: s.gain,
                    });
                    let (l, r) = self.partition(rows, &s);
                    stack.push(Pending { rows: r, depth: depth + 1, parent: Some((id, false)) });
                    stack.push(Pending { rows: l, depth: depth + 1, parent: Some((id, true)) });
                }
            }
        }
        RegressionTree { nodes, depth: max_depth_seen, n_features: self.x.cols() }
    }
}

fn midpoint(a: f64, b: f64) -> f64 {
    let m = a + (b - a) / 2.0;
    // Adjacent floats: the midpoint may round up to `b`, which would send
    // `b` left as well.
    if m >= b {
        a
    } else {
        m
    }
}

fn check_inputs(x: &FeatureMatrix, targets: &[f64], hessians: Option<&[f64]>) -> Result<(), ModelError> {
    if targets.len() != x.rows() {
        return Err(ModelError::shape(format!("{} rows vs {} targets", x.rows(), targets.len())));
    }
    if targets.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::NonFiniteInput);
    }
    if let Some(h) = hessians {
        if h.len() != x.rows() {
            return Err(ModelError::shape(format!("{} rows vs {} hessians", x.rows(), h.len())));
        }
        if h.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(ModelError::InvalidParams("hessians must be positive".into()));
        }
    }
    Ok(())
}

/// Best root split of `(x, targets)`. With `hessians`, `targets` are
/// gradients and the second-order gain is used.
pub fn find_best_split(
    x: &FeatureMatrix,
    targets: &[f64],
    hessians: Option<&[f64]>,
    params: &TreeParams,
    rng: &mut Rng,
) -> Result<Option<SplitCandidate>, ModelError> {
    check_inputs(x, targets, hessians)?;
    params.validate()?;
    if x.rows() < 2 {
        return Ok(None);
    }
    let sorted = SortedColumns::new(x);
    let weights = vec![1.0; x.rows()];
    let input = TreeInput { x, sorted: &sorted, targets, hessians, weights: &weights };
    Ok(input.best_split(&input.root(), params, Some(rng)))
}

pub fn fit_regression_tree(
    x: &FeatureMatrix,
    targets: &[f64],
    hessians: Option<&[f64]>,
    params: &TreeParams,
    rng: &mut Rng,
) -> Result<RegressionTree, ModelError> {
    check_inputs(x, targets, hessians)?;
    params.validate()?;
    if x.rows() == 0 {
        return Err(ModelError::shape("no rows to fit".to_string()));
    }
    let sorted = SortedColumns::new(x);
    let weights = vec![1.0; x.rows()];
    let input = TreeInput { x, sorted: &sorted, targets, hessians, weights: &weights };
    Ok(input.grow(params, Some(rng)))
}

pub fn predict_tree(tree: &RegressionTree, x: &FeatureMatrix) -> Result<Vec<f64>, ModelError> {
    if x.cols() != tree.n_features {
        return Err(ModelError::columns(tree.n_features, x.cols()));
    }
    Ok((0..x.rows()).map(|i| tree.predict_row(x.row(i))).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn step_data() -> (FeatureMatrix, Vec<f64>) {
        (FeatureMatrix::column(&[1.0, 2.0, 3.0, 4.0]).unwrap(), vec![1.0, 1.0, 9.0, 9.0])
    }

    #[test]
    fn step_split() {
        let (x, y) = step_data();
        let s = find_best_split(&x, &y, None, &TreeParams::default(), &mut rng::seeded(0))
            .unwrap()
            .unwrap();
        assert_eq!(s.feature_index, 0);
        assert_eq!(s.threshold, 2.5);
        assert_eq!(s.gain, 64.0);
    }

    #[test]
    fn constant_target_has_no_split() {
        let x = FeatureMatrix::column(&[1.0, 2.0, 3.0]).unwrap();
        let s = find_best_split(&x, &[0.1; 3], None, &TreeParams::default(), &mut rng::seeded(0)).unwrap();
        assert!(s.is_none());
    }

    #[test]
    fn depth_one_tree_and_tie_rule() {
        let (x, y) = step_data();
        let params = TreeParams { max_depth: Some(1), ..TreeParams::default() };
        let t = fit_regression_tree(&x, &y, None, &params, &mut rng::seeded(0)).unwrap();
        assert_eq!(t.nodes.len(), 3);
        assert_eq!(t.depth, 1);
        let probe = FeatureMatrix::column(&[1.0, 3.7, 2.5]).unwrap();
        assert_eq!(predict_tree(&t, &probe).unwrap(), vec![1.0, 9.0, 1.0]);
    }

    #[test]
    fn stump_and_pure_leaf() {
        let (x, y) = step_data();
        let params = TreeParams { max_depth: Some(0), ..TreeParams::default() };
        let t = fit_regression_tree(&x, &y, None, &params, &mut rng::seeded(0)).unwrap();
        assert_eq!(t.nodes, vec![Node::Leaf { value: 5.0 }]);

        let t = fit_regression_tree(&x, &[3.0; 4], None, &TreeParams::default(), &mut rng::seeded(0)).unwrap();
        assert_eq!(t.nodes, vec![Node::Leaf { value: 3.0 }]);
        assert_eq!(predict_tree(&t, &x).unwrap(), vec![3.0; 4]);
    }

    #[test]
    fn hessian_leaf_values() {
        let (x, _) = step_data();
        let g = [-1.0, -1.0, 2.0, 2.0];
        let h = [1.0; 4];
        let params = TreeParams { max_depth: Some(1), l2_leaf_reg: 1.0, ..TreeParams::default() };
        let t = fit_regression_tree(&x, &g, Some(&h), &params, &mut rng::seeded(0)).unwrap();
        let p = predict_tree(&t, &x).unwrap();
        assert_eq!(p, vec![2.0 / 3.0, 2.0 / 3.0, -4.0 / 3.0, -4.0 / 3.0]);
    }

    #[test]
    fn gamma_can_veto_a_split() {
        let (x, _) = step_data();
        let g = [-1.0, -1.0, 1.0, 1.0];
        let h = [1.0; 4];
        // Raw gain = ½(4/2 + 4/2 − 0) = 2.
        let ok = TreeParams { split_gain_min: 1.5, ..TreeParams::default() };
        let s = find_best_split(&x, &g, Some(&h), &ok, &mut rng::seeded(0)).unwrap().unwrap();
        assert_eq!(s.gain, 0.5);
        let veto = TreeParams { split_gain_min: 2.5, ..TreeParams::default() };
        assert!(find_best_split(&x, &g, Some(&h), &veto, &mut rng::seeded(0)).unwrap().is_none());
    }

    #[test]
    fn min_child_weight_blocks_small_children() {
        let (x, _) = step_data();
        let g = [-3.0, 1.0, 1.0, 1.0];
        let h = [1.0; 4];
        let params = TreeParams { min_child_weight: 2.0, ..TreeParams::default() };
        let s = find_best_split(&x, &g, Some(&h), &params, &mut rng::seeded(0)).unwrap().unwrap();
        assert_eq!(s.threshold, 2.5);
    }

    #[test]
    fn full_depth_reproduces_distinct_rows() {
        let x = FeatureMatrix::from_rows(&[
            vec![0.3, 1.0],
            vec![0.1, 2.0],
            vec![0.9, 0.5],
            vec![0.5, 0.7],
            vec![0.2, 0.2],
        ])
        .unwrap();
        let y = [3.0, -1.0, 4.0, 1.5, 9.0];
        let t = fit_regression_tree(&x, &y, None, &TreeParams::default(), &mut rng::seeded(0)).unwrap();
        assert_eq!(predict_tree(&t, &x).unwrap(), y.to_vec());
    }

    #[test]
    fn shape_errors() {
        let (x, _) = step_data();
        assert!(matches!(
            find_best_split(&x, &[1.0], None, &TreeParams::default(), &mut rng::seeded(0)),
            Err(ModelError::ShapeMismatch(_))
        ));
        let t = RegressionTree::leaf(5.0, 2);
        assert!(predict_tree(&t, &x).is_err());
    }

    #[test]
    fn adjacent_float_midpoint() {
        let a = 1.0f64;
        let b = f64::from_bits(a.to_bits() + 1);
        let m = midpoint(a, b);
        assert!(a <= m && m < b);
    }
}
