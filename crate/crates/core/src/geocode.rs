//! Location label → coordinate resolution.
//!
//! Lookups go cache → offline gazetteer → optional remote resolver. Remote
//! answers (including misses and failures) are remembered, so the remote is
//! asked at most once per normalized name for the lifetime of a
//! [`Geocoder`]. The cache uses the same `location,lat,lng` CSV layout as
//! the gazetteer.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeocodeError {
    #[error("coordinate ({lat}, {lng}) out of range")]
    OutOfRange { lat: f64, lng: f64 },
    #[error("gazetteer is missing column `{0}`")]
    MissingColumn(&'static str),
    #[error("row {line}: cannot parse `{value}` as a coordinate")]
    BadNumber { line: u64, value: String },
    #[error("unknown location `{0}`")]
    UnknownLocation(String),
    #[error("remote geocoder failed for `{name}`: {message}")]
    RemoteFailure { name: String, message: String },
    #[error("location name is empty")]
    EmptyName,
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    lat: f64,
    lng: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lng: f64) -> Result<Self, GeocodeError> {
        let ok = lat.is_finite()
            && lng.is_finite()
            && (-90.0..=90.0).contains(&lat)
            && (-180.0..=180.0).contains(&lng);
        if ok {
            Ok(Self { lat, lng })
        } else {
            Err(GeocodeError::OutOfRange { lat, lng })
        }
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }

    pub fn lng(&self) -> f64 {
        self.lng
    }
}

/// Trim, lowercase and collapse internal whitespace.
pub fn normalize_location(name: &str) -> String {
    name.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GeocodeTable {
    entries: BTreeMap<String, GeoPoint>,
    pub source_label: String,
}

impl GeocodeTable {
    pub fn new(source_label: impl Into<String>) -> Self {
        Self { entries: BTreeMap::new(), source_label: source_label.into() }
    }

    pub fn get(&self, name: &str) -> Option<GeoPoint> {
        self.entries.get(&normalize_location(name)).copied()
    }

    /// Inserts under the normalized key, replacing any earlier entry.
    pub fn insert(&mut self, name: &str, point: GeoPoint) {
        self.entries.insert(normalize_location(name), point);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, GeoPoint)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// Writes `location,lat,lng` rows in key order.
    pub fn write_csv<W: Write>(&self, sink: W) -> Result<(), GeocodeError> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(["location", "lat", "lng"])?;
        for (k, p) in &self.entries {
            w.write_record([k.clone(), p.lat.to_string(), p.lng.to_string()])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

/// Loads a `location,lat,lng` CSV. Later duplicates of a normalized key win.
pub fn load_geocode_table<R: Read>(
    source: R,
    source_label: &str,
) -> Result<GeocodeTable, GeocodeError> {
    let mut reader = csv::Reader::from_reader(source);
    let header = reader.headers()?.clone();
    let pos = |name: &'static str| {
        header
            .iter()
            .position(|h| h.trim().eq_ignore_ascii_case(name))
            .ok_or(GeocodeError::MissingColumn(name))
    };
    let (i_loc, i_lat, i_lng) = (pos("location")?, pos("lat")?, pos("lng")?);

    let mut table = GeocodeTable::new(source_label);
    for row in reader.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let num = |i: usize| {
            row[i].trim().parse::<f64>().map_err(|_| GeocodeError::BadNumber {
                line,
                value: row[i].to_string(),
            })
        };
        let point = GeoPoint::new(num(i_lat)?, num(i_lng)?)?;
        table.insert(&row[i_loc], point);
    }
    Ok(table)
}

/// Narrow contract for an online geocoder: name → optional point.
/// `Err` carries a human-readable failure message.
pub trait RemoteResolver {
    fn resolve(&mut self, name: &str) -> Result<Option<GeoPoint>, String>;
}

impl<F> RemoteResolver for F
where
    F: FnMut(&str) -> Result<Option<GeoPoint>, String>,
{
    fn resolve(&mut self, name: &str) -> Result<Option<GeoPoint>, String> {
        self(name)
    }
}

#[derive(Debug, Clone)]
enum RemoteOutcome {
    Miss,
    Failed(String),
}

/// Resolver holding the gazetteer, the cache and an optional remote.
pub struct Geocoder<'r> {
    table: GeocodeTable,
    cache: GeocodeTable,
    remote: Option<Box<dyn RemoteResolver + 'r>>,
    remote_outcomes: HashMap<String, RemoteOutcome>,
    remote_calls: usize,
}

impl<'r> Geocoder<'r> {
    pub fn new(table: GeocodeTable, cache: GeocodeTable) -> Self {
        Self { table, cache, remote: None, remote_outcomes: HashMap::new(), remote_calls: 0 }
    }

    pub fn with_remote(mut self, remote: impl RemoteResolver + 'r) -> Self {
        self.remote = Some(Box::new(remote));
        self
    }

    pub fn cache(&self) -> &GeocodeTable {
        &self.cache
    }

    pub fn into_cache(self) -> GeocodeTable {
        self.cache
    }

    /// Number of times the remote resolver was invoked.
    pub fn remote_calls(&self) -> usize {
        self.remote_calls
    }

    pub fn resolve(&mut self, name: &str) -> Result<GeoPoint, GeocodeError> {
        let key = normalize_location(name);
        if key.is_empty() {
            return Err(GeocodeError::EmptyName);
        }
        if let Some(p) = self.cache.entries.get(&key) {
            return Ok(*p);
        }
        if let Some(p) = self.table.entries.get(&key) {
            return Ok(*p);
        }
        let Some(remote) = self.remote.as_mut() else {
            return Err(GeocodeError::UnknownLocation(name.to_string()));
        };
        if let Some(outcome) = self.remote_outcomes.get(&key) {
            return Err(outcome_error(name, outcome));
        }
        self.remote_calls += 1;
        match remote.resolve(&key) {
            Ok(Some(p)) => {
                self.cache.entries.insert(key, p);
                Ok(p)
            }
            Ok(None) => {
                self.remote_outcomes.insert(key, RemoteOutcome::Miss);
                Err(GeocodeError::UnknownLocation(name.to_string()))
            }
            Err(message) => {
                let outcome = RemoteOutcome::Failed(message);
                let err = outcome_error(name, &outcome);
                self.remote_outcomes.insert(key, outcome);
                Err(err)
            }
        }
    }
}

fn outcome_error(name: &str, outcome: &RemoteOutcome) -> GeocodeError {
    match outcome {
        RemoteOutcome::Miss => GeocodeError::UnknownLocation(name.to_string()),
        RemoteOutcome::Failed(message) => {
            GeocodeError::RemoteFailure { name: name.to_string(), message: message.clone() }
        }
    }
}

/// Client for a Google-Geocoding-compatible HTTP endpoint:
/// `GET {url}?address=<name>&key=<key>` answering
/// `{"results":[{"geometry":{"location":{"lat":..,"lng":..}}}]}`.
#[derive(Clone)]
pub struct HttpGeocoder {
    url: String,
    key: String,
    suffix: String,
    agent: ureq::Agent,
}

pub const GEOCODER_URL_ENV: &str = "GEOCODER_URL";
pub const GEOCODER_KEY_ENV: &str = "GEOCODER_KEY";

impl HttpGeocoder {
    pub fn new(url: impl Into<String>, key: impl Into<String>) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(std::time::Duration::from_secs(20)))
            .build();
        Self {
            url: url.into(),
            key: key.into(),
            suffix: ", Ghana".to_string(),
            agent: ureq::Agent::new_with_config(config),
        }
    }

    /// Reads `GEOCODER_URL` and `GEOCODER_KEY`; `None` if the URL is unset.
    pub fn from_env() -> Option<Self> {
        let url = std::env::var(GEOCODER_URL_ENV).ok()?;
        let key = std::env::var(GEOCODER_KEY_ENV).unwrap_or_default();
        Some(Self::new(url, key))
    }

    /// Text appended to each query (default `", Ghana"`).
    pub fn with_suffix(mut self, suffix: impl Into<String>) -> Self {
        self.suffix = suffix.into();
        self
    }
}

#[derive(Deserialize)]
struct GeoResponse {
    #[serde(default)]
    results: Vec<GeoResult>,
}

#[derive(Deserialize)]
struct GeoResult {
    geometry: GeoGeometry,
}

#[derive(Deserialize)]
struct GeoGeometry {
    location: LatLng,
}

#[derive(Deserialize)]
struct LatLng {
    lat: f64,
    lng: f64,
}

impl RemoteResolver for HttpGeocoder {
    fn resolve(&mut self, name: &str) -> Result<Option<GeoPoint>, String> {
        let address = format!("{name}{}", self.suffix);
        let mut resp = self
            .agent
            .get(&self.url)
            .query("address", &address)
            .query("key", &self.key)
            .call()
            .map_err(|e| e.to_string())?;
        let text = resp.body_mut().read_to_string().map_err(|e| e.to_string())?;
        let body: GeoResponse = serde_json::from_str(&text).map_err(|e| e.to_string())?;
        match body.results.first() {
            None => Ok(None),
            Some(r) => GeoPoint::new(r.geometry.location.lat, r.geometry.location.lng)
                .map(Some)
                .map_err(|e| e.to_string()),
        }
    }
}
