//! Listing CSV ingestion, cleaning and dataset summaries.
//!
//! The input is an RFC-4180 CSV export (UTF-8, comma delimited). A
//! [`Schema`] says which header columns play which [`Role`]; every other
//! column is carried through untouched in [`ListingRecord::extra`].
//!
//! Parsing is lenient on values: a numeric field that does not parse becomes
//! a missing value rather than an error. Structural problems (missing
//! columns, ragged rows, no header) are errors.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats::{FiveNumber, Histogram};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("column `{column}` (role {role}) is not in the CSV header")]
    MissingColumn { role: Role, column: String },
    #[error("input has no header row")]
    EmptyInput,
    #[error("row {line} has {got} fields, header has {expected}")]
    RaggedRow { line: u64, expected: usize, got: usize },
    #[error("cleaning dropped every record; check the schema and required roles")]
    AllRowsDropped,
    #[error("cannot summarize an empty table")]
    EmptyTable,
    #[error("record `{0}` has no price")]
    MissingPrice(String),
    #[error("histogram needs at least one bin")]
    ZeroBins,
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("regroup target `{0}` is itself remapped; chains are not allowed")]
    ChainedRegroup(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// The part a CSV column plays in the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Id,
    Price,
    Location,
    ListingCategory,
    Bedrooms,
    Bathrooms,
    Furnishing,
    Condition,
    HouseType,
    Amenities,
}

impl Role {
    pub const ALL: [Role; 10] = [
        Role::Id,
        Role::Price,
        Role::Location,
        Role::ListingCategory,
        Role::Bedrooms,
        Role::Bathrooms,
        Role::Furnishing,
        Role::Condition,
        Role::HouseType,
        Role::Amenities,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Id => "id",
            Role::Price => "price",
            Role::Location => "location",
            Role::ListingCategory => "listing_category",
            Role::Bedrooms => "bedrooms",
            Role::Bathrooms => "bathrooms",
            Role::Furnishing => "furnishing",
            Role::Condition => "condition",
            Role::HouseType => "house_type",
            Role::Amenities => "amenities",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Role::ALL
            .into_iter()
            .find(|r| r.as_str() == s.trim())
            .ok_or_else(|| IngestError::InvalidSchema(format!("unknown role `{}`", s.trim())))
    }
}

/// Role → column-name map. `price` and `location` are mandatory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<Role, String>", into = "BTreeMap<Role, String>")]
pub struct Schema {
    columns: BTreeMap<Role, String>,
}

impl Schema {
    pub fn new(columns: BTreeMap<Role, String>) -> Result<Self, IngestError> {
        for role in [Role::Price, Role::Location] {
            if !columns.contains_key(&role) {
                return Err(IngestError::InvalidSchema(format!("role `{role}` must be mapped")));
            }
        }
        let mut seen = BTreeSet::new();
        for col in columns.values() {
            if !seen.insert(col.as_str()) {
                return Err(IngestError::InvalidSchema(format!(
                    "column `{col}` is mapped to more than one role"
                )));
            }
        }
        Ok(Self { columns })
    }

    /// Parses `role=column` lines. Blank lines and `#` comments are skipped.
    pub fn parse_text(text: &str) -> Result<Self, IngestError> {
        let mut columns = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (role, col) = line.split_once('=').ok_or_else(|| {
                IngestError::InvalidSchema(format!("line {}: expected role=column", n + 1))
            })?;
            columns.insert(role.parse::<Role>()?, col.trim().to_string());
        }
        Self::new(columns)
    }

    pub fn column(&self, role: Role) -> Option<&str> {
        self.columns.get(&role).map(String::as_str)
    }

    pub fn roles(&self) -> impl Iterator<Item = (Role, &str)> {
        self.columns.iter().map(|(r, c)| (*r, c.as_str()))
    }
}

impl TryFrom<BTreeMap<Role, String>> for Schema {
    type Error = IngestError;

    fn try_from(columns: BTreeMap<Role, String>) -> Result<Self, Self::Error> {
        Self::new(columns)
    }
}

impl From<Schema> for BTreeMap<Role, String> {
    fn from(s: Schema) -> Self {
        s.columns
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Furnishing {
    Furnished,
    SemiFurnished,
    Unfurnished,
}

impl Furnishing {
    pub fn as_str(self) -> &'static str {
        match self {
            Furnishing::Furnished => "furnished",
            Furnishing::SemiFurnished => "semi_furnished",
            Furnishing::Unfurnished => "unfurnished",
        }
    }

    fn parse_lenient(raw: &str) -> Option<Self> {
        let key: String = raw
            .trim()
            .to_lowercase()
            .chars()
            .map(|c| if c == '-' || c.is_whitespace() { '_' } else { c })
            .collect();
        match key.as_str() {
            "furnished" => Some(Furnishing::Furnished),
            "semi_furnished" | "semifurnished" | "partly_furnished" => Some(Furnishing::SemiFurnished),
            "unfurnished" | "not_furnished" => Some(Furnishing::Unfurnished),
            _ => None,
        }
    }
}

/// One rental listing. `None` marks a missing value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ListingRecord {
    pub id: String,
    /// Monthly rent; strictly positive when present.
    pub price: Option<f64>,
    pub location: Option<String>,
    pub listing_category: Option<String>,
    pub bedrooms: Option<u32>,
    pub bathrooms: Option<u32>,
    pub furnishing: Option<Furnishing>,
    pub condition: Option<String>,
    pub house_type: Option<String>,
    /// Raw comma-separated amenity text, verbatim.
    pub amenities: Option<String>,
    pub extra: BTreeMap<String, String>,
}

impl ListingRecord {
    pub fn has(&self, role: Role) -> bool {
        match role {
            Role::Id => !self.id.is_empty(),
            Role::Price => self.price.is_some(),
            Role::Location => self.location.is_some(),
            Role::ListingCategory => self.listing_category.is_some(),
            Role::Bedrooms => self.bedrooms.is_some(),
            Role::Bathrooms => self.bathrooms.is_some(),
            Role::Furnishing => self.furnishing.is_some(),
            Role::Condition => self.condition.is_some(),
            Role::HouseType => self.house_type.is_some(),
            Role::Amenities => self.amenities.is_some(),
        }
    }

    /// Text value of a categorical role, used for one-hot encoding.
    pub fn category(&self, role: Role) -> Option<&str> {
        match role {
            Role::Location => self.location.as_deref(),
            Role::ListingCategory => self.listing_category.as_deref(),
            Role::Furnishing => self.furnishing.map(Furnishing::as_str),
            Role::Condition => self.condition.as_deref(),
            Role::HouseType => self.house_type.as_deref(),
            _ => None,
        }
    }

    fn format_role(&self, role: Role) -> String {
        match role {
            Role::Id => self.id.clone(),
            Role::Price => self.price.map(|p| p.to_string()).unwrap_or_default(),
            Role::Bedrooms => self.bedrooms.map(|v| v.to_string()).unwrap_or_default(),
            Role::Bathrooms => self.bathrooms.map(|v| v.to_string()).unwrap_or_default(),
            Role::Amenities => self.amenities.clone().unwrap_or_default(),
            other => self.category(other).unwrap_or_default().to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ListingTable {
    pub records: Vec<ListingRecord>,
    pub column_names: Vec<String>,
}

impl ListingTable {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records picked by index, in the given order.
    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            records: idx.iter().map(|&i| self.records[i].clone()).collect(),
            column_names: self.column_names.clone(),
        }
    }

    /// Writes the table back out in its original column order.
    pub fn write_csv<W: Write>(&self, schema: &Schema, sink: W) -> Result<(), IngestError> {
        let by_column: BTreeMap<&str, Role> = schema.roles().map(|(r, c)| (c, r)).collect();
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(&self.column_names)?;
        for rec in &self.records {
            let row: Vec<String> = self
                .column_names
                .iter()
                .map(|col| match by_column.get(col.as_str()) {
                    Some(&role) => rec.format_role(role),
                    None => rec.extra.get(col).cloned().unwrap_or_default(),
                })
                .collect();
            w.write_record(&row)?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

fn non_empty(raw: &str) -> Option<String> {
    let t = raw.trim();
    (!t.is_empty()).then(|| t.to_string())
}

/// Lenient price parse: tolerates a currency prefix and thousands
/// separators; anything else, or a non-positive amount, is missing.
fn parse_price(raw: &str) -> Option<f64> {
    let cleaned: String = raw
        .trim()
        .trim_start_matches(|c: char| !(c.is_ascii_digit() || c == '.' || c == '-'))
        .chars()
        .filter(|&c| c != ',' && !c.is_whitespace())
        .collect();
    let v: f64 = cleaned.parse().ok()?;
    (v.is_finite() && v > 0.0).then_some(v)
}

fn parse_count(raw: &str) -> Option<u32> {
    let t = raw.trim();
    if let Ok(v) = t.parse::<u32>() {
        return Some(v);
    }
    let v: f64 = t.parse().ok()?;
    (v.is_finite() && v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64).then_some(v as u32)
}

/// Reads a listing export. Row count is preserved; bad numbers become
/// missing values.
pub fn parse_listings<R: Read>(source: R, schema: &Schema) -> Result<ListingTable, IngestError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(source);
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Err(IngestError::EmptyInput);
    }

    let mut role_at: BTreeMap<Role, usize> = BTreeMap::new();
    for (role, col) in schema.roles() {
        let pos = header
            .iter()
            .position(|h| h == col)
            .ok_or_else(|| IngestError::MissingColumn { role, column: col.to_string() })?;
        role_at.insert(role, pos);
    }
    let role_cols: BTreeSet<usize> = role_at.values().copied().collect();

    let mut records = Vec::new();
    for (n, row) in reader.records().enumerate() {
        let row = row.map_err(|e| match e.kind() {
            csv::ErrorKind::UnequalLengths { pos, expected_len, len } => IngestError::RaggedRow {
                line: pos.as_ref().map_or(n as u64 + 2, |p| p.line()),
                expected: *expected_len as usize,
                got: *len as usize,
            },
            _ => IngestError::Csv(e),
        })?;
        let field = |role: Role| role_at.get(&role).map(|&i| &row[i]);

        let extra = header
            .iter()
            .enumerate()
            .filter(|(i, _)| !role_cols.contains(i))
            .map(|(i, h)| (h.clone(), row[i].to_string()))
            .collect();

        records.push(ListingRecord {
            id: field(Role::Id).map_or_else(|| (n + 1).to_string(), |s| s.trim().to_string()),
            price: field(Role::Price).and_then(parse_price),
            location: field(Role::Location).and_then(non_empty),
            listing_category: field(Role::ListingCategory).and_then(non_empty),
            bedrooms: field(Role::Bedrooms).and_then(parse_count),
            bathrooms: field(Role::Bathrooms).and_then(parse_count),
            furnishing: field(Role::Furnishing).and_then(Furnishing::parse_lenient),
            condition: field(Role::Condition).and_then(non_empty),
            house_type: field(Role::HouseType).and_then(non_empty),
            amenities: field(Role::Amenities)
                .filter(|s| !s.trim().is_empty())
                .map(str::to_string),
            extra,
        });
    }

    Ok(ListingTable { records, column_names: header })
}

/// Drops rows missing any `required` role and rewrites listing categories
/// through `regroup`. Surviving rows keep their relative order.
pub fn clean_listings(
    table: &ListingTable,
    regroup: &BTreeMap<String, String>,
    required: &[Role],
) -> Result<ListingTable, IngestError> {
    for (from, to) in regroup {
        if let Some(next) = regroup.get(to) {
            if next != to {
                return Err(IngestError::ChainedRegroup(from.clone()));
            }
        }
    }
    let records: Vec<ListingRecord> = table
        .records
        .iter()
        .filter(|r| required.iter().all(|&role| r.has(role)))
        .map(|r| {
            let mut r = r.clone();
            if let Some(to) = r.listing_category.as_ref().and_then(|c| regroup.get(c)) {
                r.listing_category = Some(to.clone());
            }
            r
        })
        .collect();
    if records.is_empty() {
        return Err(IngestError::AllRowsDropped);
    }
    Ok(ListingTable { records, column_names: table.column_names.clone() })
}

/// Splits amenity text on commas, trims and lowercases; duplicates within
/// one listing are collapsed.
pub fn amenity_tokens(text: &str) -> Vec<String> {
    let mut seen = BTreeSet::new();
    text.split(',')
        .map(|t| t.trim().to_lowercase())
        .filter(|t| !t.is_empty() && seen.insert(t.clone()))
        .collect()
}

/// Label used for records without a location in summaries.
pub const UNKNOWN_LOCATION: &str = "(unknown)";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub n_records: usize,
    pub price_histogram: Histogram,
    pub location_counts: BTreeMap<String, usize>,
    /// Number of listings mentioning each amenity token.
    pub amenity_counts: BTreeMap<String, usize>,
    pub price_by_location: BTreeMap<String, FiveNumber>,
}

pub fn summarize_listings(table: &ListingTable, bins: usize) -> Result<DatasetSummary, IngestError> {
    if table.is_empty() {
        return Err(IngestError::EmptyTable);
    }
    if bins == 0 {
        return Err(IngestError::ZeroBins);
    }
    let mut prices = Vec::with_capacity(table.len());
    let mut by_location: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut amenity_counts: BTreeMap<String, usize> = BTreeMap::new();
    for rec in &table.records {
        let price = rec.price.ok_or_else(|| IngestError::MissingPrice(rec.id.clone()))?;
        prices.push(price);
        let loc = rec.location.clone().unwrap_or_else(|| UNKNOWN_LOCATION.to_string());
        by_location.entry(loc).or_default().push(price);
        if let Some(text) = &rec.amenities {
            for tok in amenity_tokens(text) {
                *amenity_counts.entry(tok).or_default() += 1;
            }
        }
    }
    let price_histogram = Histogram::equal_width(&prices, bins).ok_or(IngestError::EmptyTable)?;
    let location_counts = by_location.iter().map(|(k, v)| (k.clone(), v.len())).collect();
    let price_by_location = by_location
        .iter()
        .filter_map(|(k, v)| FiveNumber::of(v).map(|f| (k.clone(), f)))
        .collect();
    Ok(DatasetSummary {
        n_records: table.len(),
        price_histogram,
        location_counts,
        amenity_counts,
        price_by_location,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> Schema {
        Schema::parse_text(
            "id=id\nprice=price\nlocation=loc\nlisting_category=cat\nbedrooms=beds\n\
             bathrooms=baths\nfurnishing=furn\namenities=amen\n",
        )
        .unwrap()
    }

    const CSV: &str = "id,price,loc,cat,beds,baths,furn,amen,url\n\
        a,1500,East Legon,Apartments & Flats,2,2,Furnished,\"Wifi, TV\",http://x/1\n\
        b,abc,Spintex,Houses,3,,semi-furnished,,http://x/2\n\
        c,\"GH₵ 2,500\",Osu,Apartments & Flats,1,1,unfurnished,AC,http://x/3\n";

    #[test]
    fn parses_rows_leniently() {
        let t = parse_listings(CSV.as_bytes(), &schema()).unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(t.records[0].price, Some(1500.0));
        assert_eq!(t.records[1].price, None);
        assert_eq!(t.records[1].bathrooms, None);
        assert_eq!(t.records[1].furnishing, Some(Furnishing::SemiFurnished));
        assert_eq!(t.records[2].price, Some(2500.0));
        assert_eq!(t.records[0].amenities.as_deref(), Some("Wifi, TV"));
        assert_eq!(t.records[0].extra["url"], "http://x/1");
    }

    #[test]
    fn structural_errors() {
        let missing = "id,price\n1,2\n";
        assert!(matches!(
            parse_listings(missing.as_bytes(), &schema()),
            Err(IngestError::MissingColumn { .. })
        ));
        assert!(matches!(parse_listings("".as_bytes(), &schema()), Err(IngestError::EmptyInput)));
        let ragged = "id,price,loc,cat,beds,baths,furn,amen\n1,2,x,y,1,1,furnished,a,EXTRA\n";
        assert!(matches!(
            parse_listings(ragged.as_bytes(), &schema()),
            Err(IngestError::RaggedRow { expected: 8, got: 9, .. })
        ));
    }

    #[test]
    fn cleaning_drops_and_regroups() {
        let t = parse_listings(CSV.as_bytes(), &schema()).unwrap();
        let regroup = BTreeMap::from([("Apartments & Flats".to_string(), "flat".to_string())]);
        let c = clean_listings(&t, &regroup, &[Role::Price]).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.records[0].id, "a");
        assert_eq!(c.records[1].id, "c");
        assert!(c.records.iter().all(|r| r.listing_category.as_deref() == Some("flat")));
        assert_eq!(clean_listings(&c, &regroup, &[Role::Price]).unwrap(), c);
    }

    #[test]
    fn cleaning_everything_is_an_error() {
        let t = parse_listings(CSV.as_bytes(), &schema()).unwrap();
        assert!(matches!(
            clean_listings(&t, &BTreeMap::new(), &[Role::Condition]),
            Err(IngestError::AllRowsDropped)
        ));
        let chain = BTreeMap::from([
            ("a".to_string(), "b".to_string()),
            ("b".to_string(), "c".to_string()),
        ]);
        assert!(matches!(
            clean_listings(&t, &chain, &[]),
            Err(IngestError::ChainedRegroup(_))
        ));
    }

    #[test]
    fn summary_counts() {
        let mk = |loc: &str, price: f64| ListingRecord {
            id: loc.to_string(),
            price: Some(price),
            location: Some(loc.to_string()),
            listing_category: None,
            bedrooms: None,
            bathrooms: None,
            furnishing: None,
            condition: None,
            house_type: None,
            amenities: Some("Wifi, tv ,WIFI".to_string()),
            extra: BTreeMap::new(),
        };
        let t = ListingTable {
            records: vec![mk("A", 5.0), mk("A", 5.0), mk("B", 5.0), mk("B", 5.0)],
            column_names: vec![],
        };
        let s = summarize_listings(&t, 3).unwrap();
        assert_eq!(s.location_counts, BTreeMap::from([("A".into(), 2), ("B".into(), 2)]));
        assert_eq!(s.amenity_counts, BTreeMap::from([("tv".into(), 4), ("wifi".into(), 4)]));
        assert_eq!(s.price_by_location["A"].as_array(), [5.0; 5]);
        assert_eq!(s.price_histogram.total(), 4);
        assert_eq!(s.price_histogram.counts.iter().filter(|&&c| c > 0).count(), 1);
    }

    #[test]
    fn empty_summary_is_an_error() {
        let t = ListingTable { records: vec![], column_names: vec![] };
        assert!(matches!(summarize_listings(&t, 10), Err(IngestError::EmptyTable)));
    }

    #[test]
    fn csv_round_trip() {
        let s = schema();
        let t = parse_listings(CSV.as_bytes(), &s).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&s, &mut buf).unwrap();
        assert_eq!(parse_listings(buf.as_slice(), &s).unwrap(), t);
    }
}
