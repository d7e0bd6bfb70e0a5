//! Run configuration: one TOML file per reproducible run.
//!
//! ```toml
//! seed = 7
//! k = 5
//!
//! [paths]
//! input = "listings.csv"
//! gazetteer = "gazetteer.csv"
//! output = "out"
//!
//! [schema]
//! price = "price"
//! location = "location"
//!
//! [cleaning]
//! required = ["price", "location"]
//!
//! [models.forest]        # parameters for the untuned comparison
//! n_estimators = 100
//!
//! [tuned.cat]            # overrides on top of the tuned defaults
//! iterations = 500
//!
//! [search.forest]
//! strategy = "grid"
//! [search.forest.params]
//! n_estimators = [100, 333]
//! ```
//!
//! Relative paths resolve against the directory holding the config file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::evaluate::{Domain, ParamDomain, SearchSpace, Strategy};
use crate::features::FeatureConfig;
use crate::ingest::{Role, Schema};
use crate::model::{ModelKind, ModelSpec, ParamValue};

#[derive(Debug, Clone, PartialEq)]
pub struct Paths {
    pub input: PathBuf,
    pub gazetteer: PathBuf,
    pub cache: Option<PathBuf>,
    pub output: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cleaning {
    pub required: Vec<Role>,
    #[serde(default)]
    pub regroup: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsConfig {
    /// Model whose holdout predictions back the residual and importance
    /// outputs.
    pub model: ModelKind,
    pub residual_bins: usize,
    pub price_bins: usize,
    /// Residuals on the raw price scale instead of log price.
    pub raw_scale: bool,
    pub permutation_repeats: usize,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self { model: ModelKind::Cat, residual_bins: 30, price_bins: 30, raw_scale: false, permutation_repeats: 5 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchBlock {
    pub strategy: Strategy,
    pub n_iter: usize,
    pub space: SearchSpace,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub k: usize,
    pub threads: Option<usize>,
    pub paths: Paths,
    pub schema: Schema,
    pub cleaning: Cleaning,
    pub features: FeatureConfig,
    pub diagnostics: DiagnosticsConfig,
    pub baseline: BTreeMap<ModelKind, ModelSpec>,
    pub tuned: BTreeMap<ModelKind, ModelSpec>,
    pub search: BTreeMap<ModelKind, SearchBlock>,
    /// Raw config text, part of every training fingerprint.
    pub source: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigInvalid {
    pub violations: Vec<String>,
}

impl std::fmt::Display for ConfigInvalid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "invalid config:")?;
        for v in &self.violations {
            write!(f, "\n  - {v}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigInvalid {}

const TOP_KEYS: [&str; 11] =
    ["seed", "k", "threads", "paths", "schema", "cleaning", "features", "diagnostics", "models", "tuned", "search"];

fn param_value(v: &toml::Value) -> Option<ParamValue> {
    match v {
        toml::Value::Boolean(b) => Some(ParamValue::Bool(*b)),
        toml::Value::Integer(i) => Some(ParamValue::Int(*i)),
        toml::Value::Float(f) => Some(ParamValue::Float(*f)),
        toml::Value::String(s) => Some(ParamValue::Text(s.clone())),
        _ => None,
    }
}

fn model_tables(
    root: &toml::Table,
    key: &str,
    start: fn(ModelKind) -> ModelSpec,
    v: &mut Vec<String>,
) -> BTreeMap<ModelKind, ModelSpec> {
    let mut out: BTreeMap<ModelKind, ModelSpec> = ModelKind::ALL.iter().map(|&k| (k, start(k))).collect();
    let Some(item) = root.get(key) else { return out };
    let Some(table) = item.as_table() else {
        v.push(format!("`{key}` must be a table"));
        return out;
    };
    for (name, params) in table {
        let kind = match name.parse::<ModelKind>() {
            Ok(k) => k,
            Err(e) => {
                v.push(format!("{key}.{name}: {e}"));
                continue;
            }
        };
        let Some(params) = params.as_table() else {
            v.push(format!("{key}.{name} must be a table"));
            continue;
        };
        let spec = out.get_mut(&kind).expect("all kinds present");
        for (p, val) in params {
            match param_value(val) {
                Some(pv) => {
                    if let Err(e) = spec.set_param(p, &pv) {
                        v.push(format!("{key}.{name}.{p}: {e}"));
                    }
                }
                None => v.push(format!("{key}.{name}.{p}: expected a scalar")),
            }
        }
    }
    out
}

fn domain(path: &str, val: &toml::Value, v: &mut Vec<String>) -> Option<Domain> {
    let pair = |x: &toml::Value| -> Option<(f64, f64)> {
        let a = x.as_array()?;
        if a.len() != 2 {
            return None;
        }
        let num = |y: &toml::Value| y.as_float().or_else(|| y.as_integer().map(|i| i as f64));
        Some((num(&a[0])?, num(&a[1])?))
    };
    match val {
        toml::Value::Array(items) => {
            let mut values = Vec::new();
            for it in items {
                match param_value(it) {
                    Some(p) => values.push(p),
                    None => v.push(format!("{path}: list entries must be scalars")),
                }
            }
            Some(Domain::List(values))
        }
        toml::Value::Table(t) if t.len() == 1 => {
            let (rule, range) = t.iter().next().expect("one entry");
            let Some((low, high)) = pair(range) else {
                v.push(format!("{path}.{rule}: expected [low, high]"));
                return None;
            };
            match rule.as_str() {
                "uniform" => Some(Domain::Uniform { low, high }),
                "log_uniform" => Some(Domain::LogUniform { low, high }),
                "int_range" if low.fract() == 0.0 && high.fract() == 0.0 => {
                    Some(Domain::IntRange { low: low as i64, high: high as i64 })
                }
                _ => {
                    v.push(format!("{path}: unknown range rule `{rule}` (uniform, log_uniform, int_range)"));
                    None
                }
            }
        }
        _ => {
            v.push(format!("{path}: expected a list or a {{ rule = [low, high] }} table"));
            None
        }
    }
}

fn search_blocks(
    root: &toml::Table,
    tuned: &BTreeMap<ModelKind, ModelSpec>,
    v: &mut Vec<String>,
) -> BTreeMap<ModelKind, SearchBlock> {
    let mut out = BTreeMap::new();
    let Some(item) = root.get("search") else { return out };
    let Some(table) = item.as_table() else {
        v.push("`search` must be a table".into());
        return out;
    };
    for (name, block) in table {
        let kind = match name.parse::<ModelKind>() {
            Ok(k) => k,
            Err(e) => {
                v.push(format!("search.{name}: {e}"));
                continue;
            }
        };
        let Some(block) = block.as_table() else {
            v.push(format!("search.{name} must be a table"));
            continue;
        };
        for key in block.keys() {
            if !["strategy", "n_iter", "params"].contains(&key.as_str()) {
                v.push(format!("search.{name}: unknown key `{key}`"));
            }
        }
        let strategy = match block.get("strategy").and_then(toml::Value::as_str) {
            Some("grid") | None => Strategy::Grid,
            Some("random") => Strategy::Random,
            Some(other) => {
                v.push(format!("search.{name}.strategy: `{other}` is not grid or random"));
                continue;
            }
        };
        let n_iter = match block.get("n_iter") {
            None => 10,
            Some(x) => match x.as_integer() {
                Some(n) if n >= 1 => n as usize,
                _ => {
                    v.push(format!("search.{name}.n_iter must be an integer >= 1"));
                    continue;
                }
            },
        };
        let mut params = Vec::new();
        match block.get("params").and_then(toml::Value::as_table) {
            Some(p) if !p.is_empty() => {
                for (pname, val) in p {
                    if let Some(d) = domain(&format!("search.{name}.params.{pname}"), val, v) {
                        if strategy == Strategy::Grid && !matches!(d, Domain::List(_)) {
                            v.push(format!("search.{name}.params.{pname}: grid search needs a list"));
                        }
                        params.push(ParamDomain { name: pname.clone(), domain: d });
                    }
                }
            }
            _ => v.push(format!("search.{name}.params must be a non-empty table")),
        }
        let space = SearchSpace { kind, params };
        for p in &space.params {
            let probes: Vec<ParamValue> = match &p.domain {
                Domain::List(vals) if vals.is_empty() => {
                    v.push(format!("search.{name}.params.{}: empty list", p.name));
                    vec![]
                }
                Domain::List(vals) => vals.clone(),
                Domain::Uniform { low, high } | Domain::LogUniform { low, high } => {
                    if low > high {
                        v.push(format!("search.{name}.params.{}: low > high", p.name));
                    }
                    vec![ParamValue::Float(*low), ParamValue::Float(*high)]
                }
                Domain::IntRange { low, high } => {
                    if low > high {
                        v.push(format!("search.{name}.params.{}: low > high", p.name));
                    }
                    vec![ParamValue::Int(*low), ParamValue::Int(*high)]
                }
            };
            for pv in probes {
                let mut spec = tuned[&kind].clone();
                if let Err(e) = spec.set_param(&p.name, &pv) {
                    v.push(format!("search.{name}.params.{}: {e}", p.name));
                    break;
                }
            }
        }
        out.insert(kind, SearchBlock { strategy, n_iter, space });
    }
    out
}

fn section<T: serde::de::DeserializeOwned + Default>(root: &toml::Table, key: &str, v: &mut Vec<String>) -> T {
    match root.get(key) {
        None => T::default(),
        Some(val) => val.clone().try_into().unwrap_or_else(|e: toml::de::Error| {
            v.push(format!("{key}: {}", e.message()));
            T::default()
        }),
    }
}

/// Parses and cross-checks config text, collecting every violation.
/// `base_dir` anchors relative paths.
pub fn parse_config(text: &str, base_dir: &Path) -> Result<RunConfig, ConfigInvalid> {
    let root: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigInvalid {
        violations: vec![format!("not valid TOML: {}", e.message())],
    })?;
    let mut v = Vec::new();
    for key in root.keys() {
        if !TOP_KEYS.contains(&key.as_str()) {
            v.push(format!("unknown top-level key `{key}`"));
        }
    }

    let seed = match root.get("seed") {
        None => {
            v.push("seed: missing (a fixed seed is mandatory)".into());
            0
        }
        Some(s) => match s.as_integer() {
            Some(n) if n >= 0 => n as u64,
            _ => {
                v.push("seed: must be a non-negative integer".into());
                0
            }
        },
    };
    let k = match root.get("k") {
        None => 5,
        Some(s) => match s.as_integer() {
            Some(n) if n >= 2 => n as usize,
            _ => {
                v.push("k: must be an integer >= 2".into());
                5
            }
        },
    };
    let threads = match root.get("threads") {
        None => None,
        Some(s) => match s.as_integer() {
            Some(0) => None,
            Some(n) if n > 0 => Some(n as usize),
            _ => {
                v.push("threads: must be a non-negative integer".into());
                None
            }
        },
    };

    let paths = {
        let t = root.get("paths").and_then(toml::Value::as_table);
        if root.get("paths").is_some() && t.is_none() {
            v.push("paths must be a table".into());
        }
        let get = |key: &str| t.and_then(|t| t.get(key)).and_then(toml::Value::as_str).map(|s| base_dir.join(s));
        if let Some(t) = t {
            for key in t.keys() {
                if !["input", "gazetteer", "cache", "output"].contains(&key.as_str()) {
                    v.push(format!("paths: unknown key `{key}`"));
                }
            }
        }
        let mut need = |key: &str| {
            get(key).unwrap_or_else(|| {
                v.push(format!("paths.{key}: missing"));
                PathBuf::new()
            })
        };
        let input = need("input");
        let gazetteer = need("gazetteer");
        let output = get("output").unwrap_or_else(|| base_dir.join("out"));
        Paths { input, gazetteer, cache: get("cache"), output }
    };

    let schema = match root.get("schema") {
        None => {
            v.push("schema: missing".into());
            None
        }
        Some(val) => match val.clone().try_into::<Schema>() {
            Ok(s) => Some(s),
            Err(e) => {
                v.push(format!("schema: {}", e.message()));
                None
            }
        },
    };
    let cleaning: Cleaning = match root.get("cleaning") {
        None => {
            v.push("cleaning: missing (cleaning.required lists the roles a row must have)".into());
            Cleaning::default()
        }
        Some(_) => section(&root, "cleaning", &mut v),
    };
    if root.get("cleaning").is_some() {
        for role in [Role::Price, Role::Location] {
            if !cleaning.required.contains(&role) {
                v.push(format!("cleaning.required must include `{role}`"));
            }
        }
    }
    if let Some(schema) = &schema {
        for role in &cleaning.required {
            if schema.column(*role).is_none() {
                v.push(format!("cleaning.required: role `{role}` is not mapped in [schema]"));
            }
        }
    }
    let features: FeatureConfig = section(&root, "features", &mut v);
    v.extend(features.violations());
    let diagnostics: DiagnosticsConfig = section(&root, "diagnostics", &mut v);
    if diagnostics.residual_bins == 0 || diagnostics.price_bins == 0 {
        v.push("diagnostics: bin counts must be >= 1".into());
    }
    if diagnostics.permutation_repeats == 0 {
        v.push("diagnostics.permutation_repeats must be >= 1".into());
    }

    let baseline = model_tables(&root, "models", ModelSpec::baseline, &mut v);
    let tuned = model_tables(&root, "tuned", ModelSpec::tuned, &mut v);
    let search = search_blocks(&root, &tuned, &mut v);

    if v.is_empty() {
        for (what, p) in [("paths.input", &paths.input), ("paths.gazetteer", &paths.gazetteer)] {
            if !p.is_file() {
                v.push(format!("{what}: `{}` does not exist", p.display()));
            }
        }
    }
    match (v.is_empty(), schema) {
        (true, Some(schema)) => Ok(RunConfig {
            seed,
            k,
            threads,
            paths,
            schema,
            cleaning,
            features,
            diagnostics,
            baseline,
            tuned,
            search,
            source: text.to_string(),
        }),
        _ => Err(ConfigInvalid { violations: v }),
    }
}

/// Reads and validates a config file.
pub fn validate_config(path: &Path) -> Result<RunConfig, ConfigInvalid> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigInvalid {
        violations: vec![format!("cannot read `{}`: {e}", path.display())],
    })?;
    let base = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    parse_config(&text, base)
}
