//! Ordinary least squares.
//!
//! Solved through a column-pivoted Householder QR of the (centered) design
//! and, for rank-deficient designs, a second QR that yields the
//! minimum-norm solution. Pivots below `1e-10` times the first one count as
//! zero.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::FeatureMatrix;
use crate::model::ModelError;
use crate::stats::mean;

/// Relative cutoff under which singular values are treated as zero.
pub const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub fitted_intercept: bool,
}

/// Householder QR with column pivoting by largest remaining norm (lowest
/// index on ties). Stops once the pivot norm drops to `RANK_TOL` times the
/// first one. Returns the numerical rank and the column order; `a` holds R
/// in its upper trapezoid and `b` becomes Qᵀb.
fn pivoted_qr(a: &mut DMatrix<f64>, b: &mut DVector<f64>) -> (usize, Vec<usize>) {
    let (n, d) = a.shape();
    let mut perm: Vec<usize> = (0..d).collect();
    let mut first = 0.0;
    let mut rank = 0;
    for k in 0..n.min(d) {
        let mut pivot = (k, -1.0);
        for j in k..d {
            let norm2 = a.view((k, j), (n - k, 1)).norm_squared();
            if norm2 > pivot.1 {
                pivot = (j, norm2);
            }
        }
        a.swap_columns(k, pivot.0);
        perm.swap(k, pivot.0);
        let norm = pivot.1.sqrt();
        if k == 0 {
            first = norm;
        }
        if !(norm > RANK_TOL * first) {
            break;
        }
        let mut v: DVector<f64> = a.view((k, k), (n - k, 1)).column(0).into_owned();
        let alpha = if v[0] >= 0.0 { -norm } else { norm };
        v[0] -= alpha;
        let vv = v.norm_squared();
        if vv > 0.0 {
            for j in k..d {
                let mut col = a.view_mut((k, j), (n - k, 1));
                let mut col = col.column_mut(0);
                let s = 2.0 * v.dot(&col) / vv;
                col.axpy(-s, &v, 1.0);
            }
            let mut tail = b.rows_mut(k, n - k);
            let s = 2.0 * v.dot(&tail) / vv;
            tail.axpy(-s, &v, 1.0);
        }
        rank = k + 1;
    }
    (rank, perm)
}

/// Minimum-norm least-squares solution of `a β ≈ b` through a complete
/// orthogonal decomposition: pivoted QR, then an unpivoted QR of the
/// trapezoidal factor when the rank is short.
fn min_norm_solve(mut a: DMatrix<f64>, mut b: DVector<f64>) -> DVector<f64> {
    let d = a.ncols();
    let (r, perm) = pivoted_qr(&mut a, &mut b);
    let mut beta = DVector::zeros(d);
    if r == 0 {
        return beta;
    }
    let t = a.view((0, 0), (r, d)).upper_triangle();
    let c = b.rows(0, r).into_owned();
    let w = if r == d {
        t.solve_upper_triangular(&c).expect("pivots are nonzero")
    } else {
        // T = R₂ᵀQ₂ᵀ, so the smallest w with T w = c is Q₂ R₂⁻ᵀ c.
        let qr = t.transpose().qr();
        let z = qr.r().transpose().solve_lower_triangular(&c).expect("T has full row rank");
        qr.q() * z
    };
    for (k, &j) in perm.iter().enumerate() {
        beta[j] = w[k];
    }
    beta
}

/// Least-squares fit of `y ≈ X β + β₀`. With `fit_intercept = false`,
/// `β₀ = 0`.
pub fn fit_ols(x: &FeatureMatrix, y: &[f64], fit_intercept: bool) -> Result<LinearModel, ModelError> {
    let (n, d) = (x.rows(), x.cols());
    if n == 0 || y.len() != n {
        return Err(ModelError::shape(format!("{n} rows vs {} targets", y.len())));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::NonFiniteInput);
    }

    let (x_mean, y_mean) = if fit_intercept {
        ((0..d).map(|j| mean(&x.column_values(j))).collect::<Vec<_>>(), mean(y))
    } else {
        (vec![0.0; d], 0.0)
    };
    let a = DMatrix::from_fn(n, d, |i, j| x.get(i, j) - x_mean[j]);
    let b = DVector::from_iterator(n, y.iter().map(|v| v - y_mean));
    let beta = min_norm_solve(a, b);
    let coefficients: Vec<f64> = beta.iter().copied().collect();
    let intercept = if fit_intercept {
        y_mean - coefficients.iter().zip(&x_mean).map(|(b, m)| b * m).sum::<f64>()
    } else {
        0.0
    };
    if coefficients.iter().any(|c| !c.is_finite()) || !intercept.is_finite() {
        return Err(ModelError::NonFiniteInput);
    }
    Ok(LinearModel { coefficients, intercept, fitted_intercept: fit_intercept })
}

pub fn predict_linear(model: &LinearModel, x: &FeatureMatrix) -> Result<Vec<f64>, ModelError> {
    if x.cols() != model.coefficients.len() {
        return Err(ModelError::columns(model.coefficients.len(), x.cols()));
    }
    Ok((0..x.rows())
        .map(|i| {
            let dot: f64 = x.row(i).iter().zip(&model.coefficients).map(|(v, b)| v * b).sum();
            dot + model.intercept
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(v: &[f64]) -> FeatureMatrix {
        FeatureMatrix::column(v).unwrap()
    }

    #[test]
    fn duplicate_column_after_centering() {
        let x = [
            [-1.5315234871119958, -1.410777355756086, -1.1476591159428755],
            [-0.02896365255807159, 2.3674257189858863, 4.32449833272575],
            [3.4130047889989457, 3.8018822150651976, -1.4079843355130646],
            [0.3896063731585298, 2.5218293732054042, -0.7202752059635796],
            [4.809756119724461, -3.1767635084713244, 1.3233504002271173],
            [1.8352434072157053, 0.0, 0.0646656303563627],
            [2.4420686715586473, -3.7253760965422984, 0.0],
            [4.074696594187677, 1.266036027016798, -4.104994105164362],
        ];
        let mut y = [0.0; 8];
        y[7] = 0.6864811420629832;
        let narrow = FeatureMatrix::from_rows(&x.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap();
        let wide = FeatureMatrix::from_rows(&x.iter().map(|r| vec![r[0], r[1], r[2], r[0]]).collect::<Vec<_>>()).unwrap();
        let a = fit_ols(&narrow, &y, true).unwrap();
        let b = fit_ols(&wide, &y, true).unwrap();
        assert!((a.coefficients[0] - 0.0284959).abs() < 1e-7);
        assert!((b.coefficients[0] - b.coefficients[3]).abs() < 1e-12);
        for (p, q) in predict_linear(&a, &narrow).unwrap().iter().zip(predict_linear(&b, &wide).unwrap()) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn exact_line() {
        let x = col(&[1.0, 2.0, 3.0]);
        let m = fit_ols(&x, &[2.0, 4.0, 6.0], true).unwrap();
        assert!((m.coefficients[0] - 2.0).abs() < 1e-10);
        assert!(m.intercept.abs() < 1e-10);
        let p = predict_linear(&m, &x).unwrap();
        for (a, b) in p.iter().zip([2.0, 4.0, 6.0]) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn constant_target() {
        let x = FeatureMatrix::from_rows(&[vec![1.0, 5.0], vec![2.0, 3.0], vec![4.0, 4.0]]).unwrap();
        let m = fit_ols(&x, &[7.0; 3], true).unwrap();
        assert!(m.coefficients.iter().all(|c| c.abs() < 1e-12));
        assert!((m.intercept - 7.0).abs() < 1e-12);
    }

    #[test]
    fn duplicated_column_min_norm() {
        let x = FeatureMatrix::from_rows(&[vec![1.0, 1.0], vec![2.0, 2.0], vec![3.0, 3.0]]).unwrap();
        let m = fit_ols(&x, &[2.0, 4.0, 6.0], false).unwrap();
        assert!((m.coefficients[0] - 1.0).abs() < 1e-10);
        assert!((m.coefficients[1] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn no_intercept_means_zero_intercept() {
        let m = fit_ols(&col(&[1.0, 2.0]), &[3.0, 5.0], false).unwrap();
        assert_eq!(m.intercept, 0.0);
        assert!(!m.fitted_intercept);
    }

    #[test]
    fn prediction_arithmetic_and_shape() {
        let m = LinearModel { coefficients: vec![2.0], intercept: 0.0, fitted_intercept: false };
        assert_eq!(predict_linear(&m, &col(&[3.0])).unwrap(), vec![6.0]);
        let m = LinearModel { coefficients: vec![0.0], intercept: 5.0, fitted_intercept: true };
        assert_eq!(predict_linear(&m, &col(&[1.0, -4.0])).unwrap(), vec![5.0, 5.0]);
        let wide = FeatureMatrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        assert!(matches!(predict_linear(&m, &wide), Err(ModelError::ShapeMismatch(_))));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(fit_ols(&col(&[1.0]), &[1.0, 2.0], true), Err(ModelError::ShapeMismatch(_))));
        assert!(matches!(fit_ols(&col(&[1.0]), &[f64::NAN], true), Err(ModelError::NonFiniteInput)));
    }

    #[test]
    fn underdetermined_is_min_norm() {
        // One equation, two unknowns: x1 + 2 x2 = 5 -> min-norm (1, 2).
        let x = FeatureMatrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let m = fit_ols(&x, &[5.0], false).unwrap();
        assert!((m.coefficients[0] - 1.0).abs() < 1e-10);
        assert!((m.coefficients[1] - 2.0).abs() < 1e-10);
    }
}
