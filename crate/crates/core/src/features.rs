//! Feature engineering: one-hot categories, top-K amenity indicators,
//! coordinates, log-price target, IQR outlier fences and the holdout split.
//!
//! Everything an encoder needs is learned from the training rows by
//! [`fit_encoder`] and frozen in a [`FittedEncoder`], which then encodes any
//! table (train, holdout or new listings) the same way. Output columns are
//! always `lng, lat, bedrooms, bathrooms`, then the one-hot blocks in the
//! configured role order, then the amenity indicators in vocabulary order.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{FeatureMatrix, Scale, TargetVector};
use crate::geocode::GeoPoint;
use crate::ingest::{amenity_tokens, ListingRecord, ListingTable, Role};
use crate::rng;
use crate::stats::quantile;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("training table is empty")]
    EmptyTrain,
    #[error("all training prices are equal ({0}); outlier fences collapse")]
    DegenerateTarget(f64),
    #[error("row {row} (`{id}`) has no coordinates")]
    MissingGeo { row: usize, id: String },
    #[error("row {row} (`{id}`) has a missing or non-positive price")]
    NonPositivePrice { row: usize, id: String },
    #[error("{rows} rows but {geo} geopoints")]
    GeoMismatch { rows: usize, geo: usize },
    #[error("target is on the {got:?} scale, expected {expected:?}")]
    ScaleMismatch { expected: Scale, got: Scale },
    #[error("value {0} is not positive")]
    NonPositiveValue(f64),
    #[error("need at least two rows to split, got {0}")]
    TooFewRows(usize),
    #[error("{rows} feature rows but {targets} targets")]
    ShapeMismatch { rows: usize, targets: usize },
    #[error("invalid feature config: {0}")]
    InvalidConfig(String),
    #[error("role `{0}` cannot be one-hot encoded")]
    NotCategorical(Role),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnknownLocationPolicy {
    DropRow,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub one_hot_roles: Vec<Role>,
    pub amenity_top_k: usize,
    pub outlier_k: f64,
    pub split_ratio: f64,
    pub split_seed: u64,
    pub unknown_location_policy: UnknownLocationPolicy,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            one_hot_roles: vec![Role::HouseType, Role::Condition, Role::Furnishing],
            amenity_top_k: 20,
            outlier_k: 1.5,
            split_ratio: 0.8,
            split_seed: 0,
            unknown_location_policy: UnknownLocationPolicy::DropRow,
        }
    }
}

impl FeatureConfig {
    /// Every violation, not just the first.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.amenity_top_k < 1 {
            v.push("features.amenity_top_k must be >= 1".to_string());
        }
        if !(self.outlier_k.is_finite() && self.outlier_k > 0.0) {
            v.push("features.outlier_k must be a positive number".to_string());
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            v.push(format!("features.split_ratio must lie in (0, 1), got {}", self.split_ratio));
        }
        let mut seen = Vec::new();
        for &role in &self.one_hot_roles {
            if !is_categorical(role) {
                v.push(format!("features.one_hot_roles: `{role}` is not a categorical role"));
            }
            if seen.contains(&role) {
                v.push(format!("features.one_hot_roles: `{role}` listed twice"));
            }
            seen.push(role);
        }
        v
    }
}

fn is_categorical(role: Role) -> bool {
    matches!(
        role,
        Role::Location | Role::ListingCategory | Role::Furnishing | Role::Condition | Role::HouseType
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetTransform {
    LogE,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryLevels {
    pub role: Role,
    /// Sorted lexicographically.
    pub levels: Vec<String>,
}

/// Learned feature-engineering state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedEncoder {
    pub category_levels: Vec<CategoryLevels>,
    /// At most K tokens, by descending document frequency then lexicographic.
    pub amenity_vocab: Vec<String>,
    /// (lower, upper) on ln(price).
    pub outlier_fences: (f64, f64),
    pub feature_names: Vec<String>,
    pub target_transform: TargetTransform,
    pub bedrooms_median: f64,
    pub bathrooms_median: f64,
    pub unknown_location_policy: UnknownLocationPolicy,
}

/// Column layout produced by the encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    /// Indicator columns per category level; names match `feature_names`.
    OneHot,
    /// One integer-code column per categorical role (level index, `-1` for
    /// unseen or missing), for learners with native categorical handling.
    Coded,
}

const NUMERIC_NAMES: [&str; 4] = ["lng", "lat", "bedrooms", "bathrooms"];

fn median_of(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    if v.is_empty() {
        0.0
    } else {
        quantile(&v, 0.5)
    }
}

/// Learns category levels, the amenity vocabulary, imputation medians and
/// log-price outlier fences from training rows only.
pub fn fit_encoder(
    train: &ListingTable,
    geopoints: &[Option<GeoPoint>],
    config: &FeatureConfig,
) -> Result<FittedEncoder, FeatureError> {
    if let Some(msg) = config.violations().into_iter().next() {
        return Err(FeatureError::InvalidConfig(msg));
    }
    if geopoints.len() != train.len() {
        return Err(FeatureError::GeoMismatch { rows: train.len(), geo: geopoints.len() });
    }
    let mut rows: Vec<&ListingRecord> = Vec::with_capacity(train.len());
    for (i, (rec, geo)) in train.records.iter().zip(geopoints).enumerate() {
        if geo.is_none() {
            match config.unknown_location_policy {
                UnknownLocationPolicy::DropRow => continue,
                UnknownLocationPolicy::Error => {
                    return Err(FeatureError::MissingGeo { row: i, id: rec.id.clone() })
                }
            }
        }
        match rec.price {
            Some(p) if p > 0.0 => rows.push(rec),
            _ => return Err(FeatureError::NonPositivePrice { row: i, id: rec.id.clone() }),
        }
    }
    if rows.is_empty() {
        return Err(FeatureError::EmptyTrain);
    }

    let log_prices: Vec<f64> = rows.iter().map(|r| r.price.unwrap().ln()).collect();
    if log_prices.iter().all(|&v| v == log_prices[0]) {
        return Err(FeatureError::DegenerateTarget(rows[0].price.unwrap()));
    }
    let q1 = quantile(&log_prices, 0.25);
    let q3 = quantile(&log_prices, 0.75);
    let iqr = q3 - q1;
    let outlier_fences = (q1 - config.outlier_k * iqr, q3 + config.outlier_k * iqr);

    let category_levels: Vec<CategoryLevels> = config
        .one_hot_roles
        .iter()
        .map(|&role| {
            let mut levels: Vec<String> =
                rows.iter().filter_map(|r| r.category(role)).map(str::to_string).collect();
            levels.sort();
            levels.dedup();
            CategoryLevels { role, levels }
        })
        .collect();

    let mut freq: BTreeMap<String, usize> = BTreeMap::new();
    for r in &rows {
        if let Some(text) = &r.amenities {
            for tok in amenity_tokens(text) {
                *freq.entry(tok).or_default() += 1;
            }
        }
    }
    let mut vocab: Vec<(String, usize)> = freq.into_iter().collect();
    vocab.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let amenity_vocab: Vec<String> =
        vocab.into_iter().take(config.amenity_top_k).map(|(t, _)| t).collect();

    let mut feature_names: Vec<String> = NUMERIC_NAMES.iter().map(|s| s.to_string()).collect();
    for cl in &category_levels {
        feature_names.extend(cl.levels.iter().map(|l| format!("{}={l}", cl.role)));
    }
    feature_names.extend(amenity_vocab.iter().map(|t| format!("amenity={t}")));

    Ok(FittedEncoder {
        category_levels,
        amenity_vocab,
        outlier_fences,
        feature_names,
        target_transform: TargetTransform::LogE,
        bedrooms_median: median_of(rows.iter().filter_map(|r| r.bedrooms).map(f64::from)),
        bathrooms_median: median_of(rows.iter().filter_map(|r| r.bathrooms).map(f64::from)),
        unknown_location_policy: config.unknown_location_policy,
    })
}

/// Encoded rows plus the positions (into the input table) that survived.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoded {
    pub x: FeatureMatrix,
    pub y: Option<TargetVector>,
    pub kept_rows: Vec<usize>,
}

impl FittedEncoder {
    /// Column names for a layout.
    pub fn names(&self, layout: Layout) -> Vec<String> {
        match layout {
            Layout::OneHot => self.feature_names.clone(),
            Layout::Coded => {
                let mut names: Vec<String> = NUMERIC_NAMES.iter().map(|s| s.to_string()).collect();
                names.extend(self.category_levels.iter().map(|c| c.role.to_string()));
                names.extend(self.amenity_vocab.iter().map(|t| format!("amenity={t}")));
                names
            }
        }
    }

    /// Indices of the integer-code columns in the [`Layout::Coded`] layout.
    pub fn coded_columns(&self) -> Vec<usize> {
        (NUMERIC_NAMES.len()..NUMERIC_NAMES.len() + self.category_levels.len()).collect()
    }

    fn encode_row(&self, rec: &ListingRecord, geo: GeoPoint, layout: Layout, out: &mut Vec<f64>) {
        out.push(geo.lng());
        out.push(geo.lat());
        out.push(rec.bedrooms.map_or(self.bedrooms_median, f64::from));
        out.push(rec.bathrooms.map_or(self.bathrooms_median, f64::from));
        for cl in &self.category_levels {
            let hit = rec.category(cl.role).and_then(|v| cl.levels.binary_search_by(|l| l.as_str().cmp(v)).ok());
            match layout {
                Layout::OneHot => {
                    out.extend((0..cl.levels.len()).map(|i| if Some(i) == hit { 1.0 } else { 0.0 }))
                }
                Layout::Coded => out.push(hit.map_or(-1.0, |i| i as f64)),
            }
        }
        let tokens = rec.amenities.as_deref().map(amenity_tokens).unwrap_or_default();
        out.extend(
            self.amenity_vocab.iter().map(|t| if tokens.contains(t) { 1.0 } else { 0.0 }),
        );
    }

    /// Shared encoding path. With `with_target`, prices are required and
    /// `drop_outliers` filters on the fitted fences.
    pub fn encode(
        &self,
        table: &ListingTable,
        geopoints: &[Option<GeoPoint>],
        layout: Layout,
        with_target: bool,
        drop_outliers: bool,
    ) -> Result<Encoded, FeatureError> {
        if geopoints.len() != table.len() {
            return Err(FeatureError::GeoMismatch { rows: table.len(), geo: geopoints.len() });
        }
        let names = self.names(layout);
        let mut values = Vec::with_capacity(table.len() * names.len());
        let mut targets = Vec::new();
        let mut kept_rows = Vec::new();
        let (lower, upper) = self.outlier_fences;
        for (i, (rec, geo)) in table.records.iter().zip(geopoints).enumerate() {
            let Some(geo) = geo else {
                match self.unknown_location_policy {
                    UnknownLocationPolicy::DropRow => continue,
                    UnknownLocationPolicy::Error => {
                        return Err(FeatureError::MissingGeo { row: i, id: rec.id.clone() })
                    }
                }
            };
            if with_target {
                let lp = match rec.price {
                    Some(p) if p > 0.0 => p.ln(),
                    _ => return Err(FeatureError::NonPositivePrice { row: i, id: rec.id.clone() }),
                };
                if drop_outliers && !(lower..=upper).contains(&lp) {
                    continue;
                }
                targets.push(lp);
            }
            self.encode_row(rec, *geo, layout, &mut values);
            kept_rows.push(i);
        }
        let x = FeatureMatrix::new(kept_rows.len(), names.len(), values, names)
            .map_err(|e| FeatureError::InvalidConfig(e.to_string()))?;
        Ok(Encoded { x, y: with_target.then(|| TargetVector::log(targets)), kept_rows })
    }
}

/// One-hot encodes a table with its log-price target.
pub fn transform(
    table: &ListingTable,
    geopoints: &[Option<GeoPoint>],
    enc: &FittedEncoder,
    drop_outliers: bool,
) -> Result<(FeatureMatrix, TargetVector, Vec<usize>), FeatureError> {
    let e = enc.encode(table, geopoints, Layout::OneHot, true, drop_outliers)?;
    Ok((e.x, e.y.expect("target requested"), e.kept_rows))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

/// `Forward`: raw → ln; `Inverse`: ln → raw via exp.
pub fn transform_target(values: &TargetVector, direction: Direction) -> Result<TargetVector, FeatureError> {
    match direction {
        Direction::Forward => {
            if values.scale != Scale::Raw {
                return Err(FeatureError::ScaleMismatch { expected: Scale::Raw, got: values.scale });
            }
            if let Some(&bad) = values.values.iter().find(|&&v| !(v > 0.0)) {
                return Err(FeatureError::NonPositiveValue(bad));
            }
            Ok(TargetVector::log(values.values.iter().map(|v| v.ln()).collect()))
        }
        Direction::Inverse => {
            if values.scale != Scale::LogE {
                return Err(FeatureError::ScaleMismatch { expected: Scale::LogE, got: values.scale });
            }
            Ok(TargetVector::raw(values.values.iter().map(|v| v.exp()).collect()))
        }
    }
}

/// Disjoint (train, test) row positions: `floor(ratio * n)` rows for
/// training, chosen by a seeded shuffle. Both lists come back sorted.
pub fn split_indices(n: usize, ratio: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>), FeatureError> {
    if n < 2 {
        return Err(FeatureError::TooFewRows(n));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(FeatureError::InvalidConfig(format!("split ratio {ratio} outside (0, 1)")));
    }
    // The small relative nudge keeps e.g. 0.57 * 100 from flooring to 56.
    let n_train = ((ratio * n as f64) * (1.0 + 1e-12)).floor() as usize;
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng::derived(seed, &[rng::TAG_SPLIT, n as u64]));
    let mut train = perm[..n_train].to_vec();
    let mut test = perm[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

pub type Split = (FeatureMatrix, TargetVector, FeatureMatrix, TargetVector);

pub fn train_test_split(
    x: &FeatureMatrix,
    y: &TargetVector,
    ratio: f64,
    seed: u64,
) -> Result<Split, FeatureError> {
    if x.rows() != y.len() {
        return Err(FeatureError::ShapeMismatch { rows: x.rows(), targets: y.len() });
    }
    let (train, test) = split_indices(x.rows(), ratio, seed)?;
    Ok((x.select_rows(&train), y.select(&train), x.select_rows(&test), y.select(&test)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Furnishing;

    fn rec(id: &str, price: f64, amen: &str) -> ListingRecord {
        ListingRecord {
            id: id.to_string(),
            price: Some(price),
            location: Some("osu".into()),
            listing_category: None,
            bedrooms: Some(2),
            bathrooms: None,
            furnishing: Some(Furnishing::Furnished),
            condition: Some("new".into()),
            house_type: Some("flat".into()),
            amenities: (!amen.is_empty()).then(|| amen.to_string()),
            extra: BTreeMap::new(),
        }
    }

    fn table(recs: Vec<ListingRecord>) -> ListingTable {
        ListingTable { records: recs, column_names: vec![] }
    }

    fn geo(n: usize) -> Vec<Option<GeoPoint>> {
        vec![Some(GeoPoint::new(5.6, -0.2).unwrap()); n]
    }

    #[test]
    fn fences_follow_type7_quartiles_of_log_price() {
        let t = table(
            [100.0, 200.0, 300.0, 400.0, 100000.0]
                .iter()
                .enumerate()
                .map(|(i, &p)| rec(&i.to_string(), p, ""))
                .collect(),
        );
        let enc = fit_encoder(&t, &geo(5), &FeatureConfig::default()).unwrap();
        let (lo, hi) = enc.outlier_fences;
        // Q1 = ln 200, Q3 = ln 400, IQR = ln 2.
        let (q1, q3) = (200f64.ln(), 400f64.ln());
        assert!((lo - (q1 - 1.5 * (q3 - q1))).abs() < 1e-12);
        assert!((hi - (q3 + 1.5 * (q3 - q1))).abs() < 1e-12);
        assert!((q1 - 5.298).abs() < 1e-3 && (q3 - 5.991).abs() < 1e-3 && (hi - 7.031).abs() < 1e-3);

        let (x, y, kept) = transform(&t, &geo(5), &enc, true).unwrap();
        assert_eq!(kept, vec![0, 1, 2, 3]);
        assert_eq!(x.rows(), 4);
        assert_eq!(y.len(), 4);
    }

    #[test]
    fn amenity_vocab_ties_break_lexicographically() {
        let t = table(vec![rec("a", 1.0, "wifi, tv"), rec("b", 2.0, "wifi"), rec("c", 3.0, "tv, ac")]);
        let cfg = FeatureConfig { amenity_top_k: 2, ..FeatureConfig::default() };
        let enc = fit_encoder(&t, &geo(3), &cfg).unwrap();
        assert_eq!(enc.amenity_vocab, vec!["tv", "wifi"]);

        let probe = table(vec![rec("p", 5.0, "WiFi")]);
        let (x, _, _) = transform(&probe, &geo(1), &enc, false).unwrap();
        let n = x.cols();
        assert_eq!(&x.row(0)[n - 2..], &[0.0, 1.0]);
    }

    #[test]
    fn single_level_and_unseen_levels() {
        let t = table(vec![rec("a", 1.0, ""), rec("b", 2.0, "")]);
        let enc = fit_encoder(&t, &geo(2), &FeatureConfig::default()).unwrap();
        let cond = enc.feature_names.iter().position(|n| n == "condition=new").unwrap();
        let (x, _, _) = transform(&t, &geo(2), &enc, false).unwrap();
        assert_eq!(x.get(0, cond), 1.0);

        let mut odd = rec("c", 3.0, "");
        odd.condition = Some("used".into());
        let (x, _, _) = transform(&table(vec![odd]), &geo(1), &enc, false).unwrap();
        assert_eq!(x.get(0, cond), 0.0);
        // bathrooms all missing in train -> median fallback 0
        assert_eq!(x.get(0, 3), 0.0);
        assert_eq!(x.get(0, 2), 2.0);
    }

    #[test]
    fn degenerate_and_empty_train() {
        let t = table(vec![rec("a", 7.0, ""), rec("b", 7.0, "")]);
        assert_eq!(
            fit_encoder(&t, &geo(2), &FeatureConfig::default()),
            Err(FeatureError::DegenerateTarget(7.0))
        );
        let t = table(vec![]);
        assert_eq!(fit_encoder(&t, &[], &FeatureConfig::default()), Err(FeatureError::EmptyTrain));
    }

    #[test]
    fn missing_geo_policy() {
        let t = table(vec![rec("a", 1.0, ""), rec("b", 2.0, ""), rec("c", 4.0, "")]);
        let mut g = geo(3);
        g[1] = None;
        let enc = fit_encoder(&t, &g, &FeatureConfig::default()).unwrap();
        let (_, _, kept) = transform(&t, &g, &enc, false).unwrap();
        assert_eq!(kept, vec![0, 2]);

        let strict = FittedEncoder { unknown_location_policy: UnknownLocationPolicy::Error, ..enc };
        assert!(matches!(
            transform(&t, &g, &strict, false),
            Err(FeatureError::MissingGeo { row: 1, .. })
        ));
    }

    #[test]
    fn coded_layout_uses_level_indices() {
        let mut b = rec("b", 2.0, "");
        b.house_type = Some("duplex".into());
        let t = table(vec![rec("a", 1.0, ""), b]);
        let enc = fit_encoder(&t, &geo(2), &FeatureConfig::default()).unwrap();
        let e = enc.encode(&t, &geo(2), Layout::Coded, true, false).unwrap();
        let cols = enc.coded_columns();
        assert_eq!(e.x.column_names()[cols[0]], "house_type");
        assert_eq!(e.x.get(0, cols[0]), 1.0); // "flat" after "duplex"
        assert_eq!(e.x.get(1, cols[0]), 0.0);
    }

    #[test]
    fn target_round_trip_and_tags() {
        let raw = TargetVector::raw(vec![1.0, 100.0, 200.0]);
        let fwd = transform_target(&raw, Direction::Forward).unwrap();
        assert_eq!(fwd.values[0], 0.0);
        let back = transform_target(&fwd, Direction::Inverse).unwrap();
        for (a, b) in back.values.iter().zip(&raw.values) {
            assert!(((a - b) / b).abs() < 1e-12);
        }
        assert!(matches!(
            transform_target(&raw, Direction::Inverse),
            Err(FeatureError::ScaleMismatch { .. })
        ));
        assert!(matches!(
            transform_target(&TargetVector::raw(vec![0.0]), Direction::Forward),
            Err(FeatureError::NonPositiveValue(_))
        ));
    }

    #[test]
    fn split_sizes() {
        assert_eq!(split_indices(10, 0.8, 1).map(|(a, b)| (a.len(), b.len())), Ok((8, 2)));
        assert_eq!(split_indices(5, 0.8, 1).map(|(a, b)| (a.len(), b.len())), Ok((4, 1)));
        assert_eq!(split_indices(10, 0.8, 3), split_indices(10, 0.8, 3));
        assert_eq!(split_indices(1, 0.8, 3), Err(FeatureError::TooFewRows(1)));
    }
}
