//! Small numeric helpers shared across modules: means, type-7 quantiles,
//! five-number summaries and equal-width histograms.

use serde::{Deserialize, Serialize};

/// Arithmetic mean with a second-pass correction.
///
/// A constant input returns that constant exactly, which the tree and
/// boosting code relies on to produce zero residuals.
pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let first = values[0];
    if values.iter().all(|&v| v == first) {
        return first;
    }
    let n = values.len() as f64;
    let m = values.iter().sum::<f64>() / n;
    let correction = values.iter().map(|&v| v - m).sum::<f64>() / n;
    m + correction
}

/// Quantile by linear interpolation between order statistics (R type 7,
/// the numpy default). `sorted` must be ascending and non-empty.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = h - lo as f64;
    if frac == 0.0 {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

/// Type-7 quantile of an unsorted sample.
pub fn quantile(values: &[f64], p: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    quantile_sorted(&sorted, p)
}

/// (min, Q1, median, Q3, max) with type-7 quartiles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiveNumber {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl FiveNumber {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Some(Self {
            min: sorted[0],
            q1: quantile_sorted(&sorted, 0.25),
            median: quantile_sorted(&sorted, 0.5),
            q3: quantile_sorted(&sorted, 0.75),
            max: sorted[sorted.len() - 1],
        })
    }

    pub fn as_array(&self) -> [f64; 5] {
        [self.min, self.q1, self.median, self.q3, self.max]
    }
}

/// Equal-width histogram: `edges.len() == counts.len() + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    /// Bins `values` over `[min, max]`. Every bin is left-closed; the last
    /// one is also right-closed so the maximum lands inside.
    ///
    /// A zero-width range is widened by `sqrt(eps) * max(|v|, 1)` on each
    /// side so the edges stay strictly increasing.
    ///
    /// Returns `None` for an empty sample, zero bins or non-finite values.
    pub fn equal_width(values: &[f64], bins: usize) -> Option<Self> {
        if values.is_empty() || bins == 0 || values.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let mut lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let mut hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if lo == hi {
            let pad = f64::EPSILON.sqrt() * lo.abs().max(1.0);
            lo -= pad;
            hi += pad;
        }
        let width = (hi - lo) / bins as f64;
        let mut edges: Vec<f64> = (0..bins).map(|i| lo + width * i as f64).collect();
        edges.push(hi);

        let mut counts = vec![0u64; bins];
        for &v in values {
            let mut idx = (((v - lo) / width).floor() as isize).clamp(0, bins as isize - 1) as usize;
            // Rounding in the division can land one bin off; settle against
            // the materialized edges.
            while idx > 0 && v < edges[idx] {
                idx -= 1;
            }
            while idx + 1 < bins && v >= edges[idx + 1] {
                idx += 1;
            }
            counts[idx] += 1;
        }
        Some(Self { edges, counts })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_of_constant_is_exact() {
        assert_eq!(mean(&[0.1, 0.1, 0.1]), 0.1);
        assert_eq!(mean(&[1.0, 2.0, 3.0, 4.0]), 2.5);
    }

    #[test]
    fn type7_matches_numpy_default() {
        // numpy.quantile([1, 2, 3, 4], 0.25) == 1.75
        assert_eq!(quantile(&[4.0, 1.0, 3.0, 2.0], 0.25), 1.75);
        assert_eq!(quantile(&[1.0, 2.0, 3.0, 4.0], 0.5), 2.5);
        assert_eq!(quantile(&[7.0], 0.9), 7.0);
    }

    #[test]
    fn five_number_is_monotone() {
        let f = FiveNumber::of(&[5.0, 1.0, 9.0, 3.0, 3.0, 12.0]).unwrap();
        let a = f.as_array();
        assert!(a.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(f.min, 1.0);
        assert_eq!(f.max, 12.0);
    }

    #[test]
    fn histogram_edge_rule() {
        let h = Histogram::equal_width(&[0.0, 0.0, 1.0, 1.0], 2).unwrap();
        assert_eq!(h.edges, vec![0.0, 0.5, 1.0]);
        assert_eq!(h.counts, vec![2, 2]);

        // 0.5 sits on the interior edge and goes right (left-closed bins).
        let h = Histogram::equal_width(&[0.0, 0.5, 1.0], 2).unwrap();
        assert_eq!(h.counts, vec![1, 2]);
    }

    #[test]
    fn histogram_degenerate_range() {
        let h = Histogram::equal_width(&[3.0; 5], 4).unwrap();
        assert!(h.edges.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(h.total(), 5);
        assert_eq!(h.counts.iter().filter(|&&c| c > 0).count(), 1);
    }
}
