//! Command-line pipeline: ingest → geocode → featurize → train/tune →
//! evaluate → diagnose, writing plot-ready CSV files under one output
//! directory.
//!
//! Every subcommand rebuilds the cleaned table, the geocodes, the holdout
//! split and the encoder from the input file, so each one is self-contained
//! and the result only depends on the config, the input and the seed.
//! Trained models under `models/` and search results under `tune/` are
//! reused when their training fingerprint matches the current run.
//!
//! Exit codes: 0 success, 2 config error, 3 data error, 4 model error,
//! 5 I/O error.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{validate_config, ConfigInvalid, RunConfig};
use crate::data::{FeatureMatrix, Scale, TargetVector};
use crate::diagnostics::{
    compute_residuals, gain_importance, permutation_importance, prediction_error_summary, residual_histogram,
    write_histogram_csv, write_residuals_csv, write_scatter_csv, DiagnosticsError,
};
use crate::evaluate::{cross_validate, grid_search, metrics_lenient, random_search, EvalError, MetricsReport, SearchResult, Strategy};
use crate::features::{fit_encoder, split_indices, FeatureError, FittedEncoder, Layout};
use crate::geocode::{load_geocode_table, GeoPoint, GeocodeError, GeocodeTable, Geocoder, HttpGeocoder, GEOCODER_KEY_ENV, GEOCODER_URL_ENV};
use crate::ingest::{clean_listings, parse_listings, summarize_listings, IngestError, ListingTable, Role};
use crate::model::{ModelError, ModelKind, ModelSpec, TrainedModel};
use crate::persist::{digest_hex, load_model, save_model, training_fingerprint, Artifact, EnvelopeMeta, PersistError};
use crate::boost::BoostMode;
use crate::stats::Histogram;

#[derive(Debug, Parser)]
#[command(name = "rentwise", version, about = "Rental-price modelling pipeline")]
pub struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Overrides the seed in the config.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Restricts train, tune, evaluate and predict to one model
    /// (linear, svr, forest, xgb, cat); also picks the diagnose model.
    #[arg(long, global = true, value_name = "NAME")]
    pub model: Option<String>,
    /// Overrides the output directory in the config.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Resolves gazetteer misses through the HTTP geocoder configured by
    /// GEOCODER_URL and GEOCODER_KEY.
    #[arg(long, global = true)]
    pub remote_geocoder: bool,
    /// Listings to price (predict).
    #[arg(long = "in", global = true, value_name = "PATH")]
    pub input: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Clean and summarize the listings (figures 1-4).
    Ingest,
    /// Fit the encoder and write the train/test matrices.
    Featurize,
    /// Fit tuned models on the training split.
    Train,
    /// Cross-validated hyperparameter search.
    Tune,
    /// Holdout metrics for untuned and tuned models.
    Evaluate,
    /// Residuals, prediction error and feature importance (figures 5-8).
    Diagnose,
    /// Price new listings.
    Predict,
    /// Every step above in order; predict too when `--in` is given.
    All,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(#[from] ConfigInvalid),
    #[error("data error: {0}")]
    Data(String),
    #[error("model error: {0}")]
    Model(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Model(_) => 4,
            CliError::Io(_) => 5,
        }
    }
}

fn config_error(msg: impl Into<String>) -> CliError {
    CliError::Config(ConfigInvalid { violations: vec![msg.into()] })
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<GeocodeError> for CliError {
    fn from(e: GeocodeError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<FeatureError> for CliError {
    fn from(e: FeatureError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Model(e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Export(m) => CliError::Io(m),
            other => CliError::Model(other.to_string()),
        }
    }
}

impl From<DiagnosticsError> for CliError {
    fn from(e: DiagnosticsError) -> Self {
        match e {
            DiagnosticsError::Export(m) => CliError::Io(m),
            other => CliError::Model(other.to_string()),
        }
    }
}

impl From<PersistError> for CliError {
    fn from(e: PersistError) -> Self {
        match e {
            PersistError::Io(e) => CliError::Io(e.to_string()),
            PersistError::NonFinite => CliError::Model(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

/// Holdout R² values the study reported: (untuned, tuned).
const REFERENCE_R2: [(ModelKind, f64, f64); 5] = [
    (ModelKind::Linear, 0.749, 0.749),
    (ModelKind::Svr, 0.819, 0.822),
    (ModelKind::Forest, 0.859, 0.858),
    (ModelKind::Xgb, 0.868, 0.852),
    (ModelKind::Cat, 0.877, 0.876),
];
const CAT_BAND: f64 = 0.10;

/// Parses `args` (program name first) and runs the command. Returns the
/// process exit code; errors are printed to standard error.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("rentwise: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let path = cli.config.as_deref().ok_or_else(|| config_error("--config PATH is required"))?;
    let cfg = validate_config(path)?;
    let model = match &cli.model {
        None => None,
        Some(name) => Some(name.parse::<ModelKind>().map_err(|e| config_error(format!("--model: {e}")))?),
    };
    if cli.command == Command::Predict && cli.input.is_none() {
        return Err(config_error("predict needs --in PATH"));
    }
    if let Some(p) = &cli.input {
        if !p.is_file() {
            return Err(config_error(format!("--in: `{}` does not exist", p.display())));
        }
    }
    let remote = if cli.remote_geocoder {
        Some(HttpGeocoder::from_env().ok_or_else(|| {
            config_error(format!("--remote-geocoder needs {GEOCODER_URL_ENV} and {GEOCODER_KEY_ENV} to be set"))
        })?)
    } else {
        None
    };
    if let Some(n) = cfg.threads {
        // Fails only if a pool already exists, in which case it is reused.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let mut run = Run::new(cfg, cli, model, remote);
    let result = run.dispatch(cli.command);
    let log = run.finish_log(&result);
    run.write_file("run_log.txt", log.into_bytes())?;
    result
}

#[derive(Debug, Clone)]
struct Split {
    x_train: FeatureMatrix,
    y_train: Vec<f64>,
    x_test: FeatureMatrix,
    y_test: Vec<f64>,
}

struct Prepared {
    table: ListingTable,
    train_rows: Vec<usize>,
    test_rows: Vec<usize>,
    encoder: FittedEncoder,
    input_digest: String,
    one_hot: Split,
    coded: Split,
}

#[derive(Serialize, Deserialize)]
struct StoredSearch {
    fingerprint: String,
    result: SearchResult,
}

struct Run {
    cfg: RunConfig,
    seed: u64,
    out: PathBuf,
    model: Option<ModelKind>,
    predict_input: Option<PathBuf>,
    remote: Option<HttpGeocoder>,
    created_at: String,
    log: Vec<String>,
    prepared: Option<Prepared>,
    models: BTreeMap<ModelKind, TrainedModel>,
}

fn layout_of(kind: ModelKind) -> Layout {
    if kind == ModelKind::Cat {
        Layout::Coded
    } else {
        Layout::OneHot
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

fn csv_bytes<I>(header: &[&str], rows: I) -> Result<Vec<u8>, CliError>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.into_inner().map_err(|e| CliError::Io(e.to_string()))
}

fn histogram_rows(h: &Histogram) -> Vec<Vec<String>> {
    h.counts
        .iter()
        .enumerate()
        .map(|(i, c)| vec![h.edges[i].to_string(), h.edges[i + 1].to_string(), c.to_string()])
        .collect()
}

fn metric_cells(m: &MetricsReport) -> Vec<String> {
    vec![fmt_opt(m.r2), m.mse.to_string(), m.rmse.to_string(), m.mae.to_string()]
}

impl Run {
    fn new(cfg: RunConfig, cli: &Cli, model: Option<ModelKind>, remote: Option<HttpGeocoder>) -> Self {
        let seed = cli.seed.unwrap_or(cfg.seed);
        let out = cli.out.clone().unwrap_or_else(|| cfg.paths.output.clone());
        Self {
            cfg,
            seed,
            out,
            model,
            predict_input: cli.input.clone(),
            remote,
            created_at: created_at(),
            log: Vec::new(),
            prepared: None,
            models: BTreeMap::new(),
        }
    }

    fn note(&mut self, line: impl Into<String>) {
        self.log.push(line.into());
    }

    fn finish_log(&self, result: &Result<(), CliError>) -> String {
        let mut text = format!("seed {}\n", self.seed);
        for line in &self.log {
            text.push_str(line);
            text.push('\n');
        }
        match result {
            Ok(()) => text.push_str("status ok\n"),
            Err(e) => text.push_str(&format!("status failed (exit {}): {e}\n", e.exit_code())),
        }
        text
    }

    /// The single write path for every artifact.
    fn write_file(&self, rel: &str, bytes: Vec<u8>) -> Result<(), CliError> {
        let path = self.out.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| CliError::Io(format!("{}: {e}", parent.display())))?;
        }
        fs::write(&path, bytes).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
    }

    fn emit(&mut self, rel: &str, bytes: Vec<u8>) -> Result<(), CliError> {
        self.write_file(rel, bytes)?;
        self.note(format!("wrote {rel}"));
        Ok(())
    }

    fn dispatch(&mut self, command: Command) -> Result<(), CliError> {
        self.note(format!("command {command:?}").to_lowercase());
        match command {
            Command::Ingest => self.ingest(),
            Command::Featurize => self.featurize(),
            Command::Train => self.train(),
            Command::Tune => self.tune(),
            Command::Evaluate => self.evaluate(),
            Command::Diagnose => self.diagnose(),
            Command::Predict => self.predict(),
            Command::All => {
                self.ingest()?;
                self.featurize()?;
                self.tune()?;
                self.train()?;
                self.evaluate()?;
                self.diagnose()?;
                if self.predict_input.is_some() {
                    self.predict()?;
                }
                Ok(())
            }
        }
    }

    fn kinds(&self) -> Vec<ModelKind> {
        self.model.map_or_else(|| ModelKind::ALL.to_vec(), |k| vec![k])
    }

    // ---- data preparation ------------------------------------------------

    fn load_input(&self) -> Result<(Vec<u8>, ListingTable), CliError> {
        let path = &self.cfg.paths.input;
        let bytes = fs::read(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let table = parse_listings(bytes.as_slice(), &self.cfg.schema)?;
        Ok((bytes, table))
    }

    fn cleaned(&mut self) -> Result<(Vec<u8>, ListingTable), CliError> {
        let (bytes, raw) = self.load_input()?;
        let table = clean_listings(&raw, &self.cfg.cleaning.regroup, &self.cfg.cleaning.required)?;
        self.note(format!("ingest: {} rows read, {} kept after cleaning", raw.len(), table.len()));
        Ok((bytes, table))
    }

    fn geocoder(&self) -> Result<Geocoder<'static>, CliError> {
        let paths = &self.cfg.paths;
        let open = |p: &Path| fs::File::open(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())));
        let gazetteer = load_geocode_table(open(&paths.gazetteer)?, "gazetteer")?;
        let cache = match &paths.cache {
            Some(p) if p.is_file() => load_geocode_table(open(p)?, "cache")?,
            _ => GeocodeTable::new("cache"),
        };
        let mut g = Geocoder::new(gazetteer, cache);
        if let Some(remote) = &self.remote {
            g = g.with_remote(remote.clone());
        }
        Ok(g)
    }

    fn geocode(&mut self, table: &ListingTable, what: &str) -> Result<Vec<Option<GeoPoint>>, CliError> {
        let mut g = self.geocoder()?;
        let mut misses: BTreeMap<String, usize> = BTreeMap::new();
        let mut points = Vec::with_capacity(table.len());
        for rec in &table.records {
            let name = rec.location.as_deref().unwrap_or("");
            match g.resolve(name) {
                Ok(p) => points.push(Some(p)),
                Err(e) => {
                    let key = match e {
                        GeocodeError::RemoteFailure { message, .. } => format!("{name} (remote: {message})"),
                        _ => name.to_string(),
                    };
                    *misses.entry(key).or_default() += 1;
                    points.push(None);
                }
            }
        }
        let dropped: usize = misses.values().sum();
        self.note(format!("geocode {what}: {} of {} rows unresolved", dropped, table.len()));
        for (name, n) in &misses {
            self.note(format!("  unresolved `{name}`: {n}"));
        }
        if g.remote_calls() > 0 {
            self.note(format!("geocode {what}: {} remote lookups", g.remote_calls()));
            if let Some(path) = self.cfg.paths.cache.clone() {
                let mut buf = Vec::new();
                g.cache().write_csv(&mut buf)?;
                fs::write(&path, buf).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            }
        }
        Ok(points)
    }

    fn prepare(&mut self) -> Result<(), CliError> {
        if self.prepared.is_some() {
            return Ok(());
        }
        let (bytes, table) = self.cleaned()?;
        let geos = self.geocode(&table, "listings")?;
        let features = crate::features::FeatureConfig { split_seed: self.seed, ..self.cfg.features.clone() };
        let (train_rows, test_rows) = split_indices(table.len(), features.split_ratio, features.split_seed)?;
        let pick = |rows: &[usize]| -> Vec<Option<GeoPoint>> { rows.iter().map(|&i| geos[i]).collect() };
        let train = table.select(&train_rows);
        let test = table.select(&test_rows);
        let encoder = fit_encoder(&train, &pick(&train_rows), &features)?;
        let split = |layout: Layout| -> Result<Split, CliError> {
            let tr = encoder.encode(&train, &pick(&train_rows), layout, true, true)?;
            let te = encoder.encode(&test, &pick(&test_rows), layout, true, true)?;
            Ok(Split {
                x_train: tr.x,
                y_train: tr.y.expect("target requested").values,
                x_test: te.x,
                y_test: te.y.expect("target requested").values,
            })
        };
        let one_hot = split(Layout::OneHot)?;
        let coded = split(Layout::Coded)?;
        self.note(format!(
            "featurize: {} train / {} test rows after geocoding and outlier fences; {} one-hot features",
            one_hot.x_train.rows(),
            one_hot.x_test.rows(),
            one_hot.x_train.cols()
        ));
        if one_hot.x_train.rows() < self.cfg.k || one_hot.x_test.rows() == 0 {
            return Err(CliError::Data(format!(
                "too few usable rows: {} train, {} test",
                one_hot.x_train.rows(),
                one_hot.x_test.rows()
            )));
        }
        self.prepared = Some(Prepared {
            table,
            train_rows,
            test_rows,
            encoder,
            input_digest: digest_hex(&bytes),
            one_hot,
            coded,
        });
        Ok(())
    }

    fn split_for(&self, kind: ModelKind) -> &Split {
        let p = self.prepared.as_ref().expect("prepared");
        match layout_of(kind) {
            Layout::OneHot => &p.one_hot,
            Layout::Coded => &p.coded,
        }
    }

    fn base_fingerprint(&self) -> String {
        let digest = &self.prepared.as_ref().expect("prepared").input_digest;
        training_fingerprint(self.cfg.source.as_bytes(), digest.as_bytes(), self.seed)
    }

    fn spec_fingerprint(&self, spec: &ModelSpec) -> String {
        let digest = &self.prepared.as_ref().expect("prepared").input_digest;
        let spec_json = serde_json::to_string(spec).expect("specs serialize");
        training_fingerprint(self.cfg.source.as_bytes(), format!("{digest}:{spec_json}").as_bytes(), self.seed)
    }

    fn meta(&self, fingerprint: String) -> EnvelopeMeta {
        EnvelopeMeta { created_at: self.created_at.clone(), training_fingerprint: fingerprint }
    }

    /// Seeds the spec from the run and points cat mode at the code columns.
    fn finish_spec(&self, spec: ModelSpec) -> ModelSpec {
        let mut spec = spec.with_seed(self.seed);
        if let ModelSpec::Boost { params, categorical_columns } = &mut spec {
            if params.mode == BoostMode::Cat {
                *categorical_columns = self.prepared.as_ref().expect("prepared").encoder.coded_columns();
            }
        }
        spec
    }

    fn baseline_spec(&self, kind: ModelKind) -> ModelSpec {
        self.finish_spec(self.cfg.baseline[&kind].clone())
    }

    fn stored_search(&self, kind: ModelKind) -> Option<SearchResult> {
        let path = self.out.join(format!("tune/{kind}_result.json"));
        let stored: StoredSearch = serde_json::from_slice(&fs::read(path).ok()?).ok()?;
        (stored.fingerprint == self.base_fingerprint() && stored.result.kind == kind).then_some(stored.result)
    }

    /// Tuned spec, with the best parameters of a matching search applied.
    fn tuned_spec(&mut self, kind: ModelKind) -> Result<ModelSpec, CliError> {
        let mut spec = self.cfg.tuned[&kind].clone();
        if let Some(result) = self.stored_search(kind) {
            for (name, value) in &result.best_params {
                spec.set_param(name, value)?;
            }
        }
        Ok(self.finish_spec(spec))
    }

    fn tuned_model(&mut self, kind: ModelKind) -> Result<TrainedModel, CliError> {
        if let Some(m) = self.models.get(&kind) {
            return Ok(m.clone());
        }
        let spec = self.tuned_spec(kind)?;
        let fingerprint = self.spec_fingerprint(&spec);
        let rel = format!("models/{kind}.model.json");
        let path = self.out.join(&rel);
        if let Ok(file) = fs::File::open(&path) {
            if let Ok((meta, Artifact::Model(m))) = load_model(file) {
                if meta.training_fingerprint == fingerprint {
                    self.note(format!("reused {rel}"));
                    self.models.insert(kind, m.clone());
                    return Ok(m);
                }
            }
        }
        let split = self.split_for(kind);
        let model = spec.fit(&split.x_train, &split.y_train)?;
        let mut buf = Vec::new();
        save_model(&Artifact::Model(model.clone()), &self.meta(fingerprint), &mut buf)?;
        self.emit(&rel, buf)?;
        self.models.insert(kind, model.clone());
        Ok(model)
    }

    // ---- subcommands -----------------------------------------------------

    fn ingest(&mut self) -> Result<(), CliError> {
        let (_, table) = self.cleaned()?;
        let summary = summarize_listings(&table, self.cfg.diagnostics.price_bins)?;
        self.emit("fig1_price_hist.csv", csv_bytes(&["bin_left", "bin_right", "count"], histogram_rows(&summary.price_histogram))?)?;

        let mut locations: Vec<(&String, &usize)> = summary.location_counts.iter().collect();
        locations.sort_by(|a, b| b.1.cmp(a.1).then_with(|| a.0.cmp(b.0)));
        let rows = locations.iter().map(|(l, n)| vec![l.to_string(), n.to_string()]);
        let fig2 = csv_bytes(&["location", "count"], rows)?;
        let rows = locations.iter().map(|(l, n)| {
            let f = &summary.price_by_location[*l];
            let mut r = vec![l.to_string(), n.to_string()];
            r.extend(f.as_array().iter().map(f64::to_string));
            r
        });
        let fig3 = csv_bytes(&["location", "n", "min", "q1", "median", "q3", "max"], rows)?;
        self.emit("fig2_locations.csv", fig2)?;
        self.emit("fig3_price_by_location.csv", fig3)?;

        let mut amenities: Vec<(&String, &usize)> = summary.amenity_counts.iter().collect();
        amenities.sort_by(|a, b| b.1.cmp(a.1).then_with(|| a.0.cmp(b.0)));
        let rows = amenities.iter().map(|(a, n)| vec![a.to_string(), n.to_string()]);
        self.emit("fig4_amenities.csv", csv_bytes(&["amenity", "count"], rows)?)
    }

    fn featurize(&mut self) -> Result<(), CliError> {
        self.prepare()?;
        let fingerprint = self.base_fingerprint();
        let p = self.prepared.as_ref().expect("prepared");
        let mut files: Vec<(String, Vec<u8>)> = Vec::new();
        let mut enc = Vec::new();
        save_model(&Artifact::Encoder(p.encoder.clone()), &self.meta(fingerprint), &mut enc)?;
        files.push(("features/encoder.model.json".into(), enc));
        for (tag, s) in [("onehot", &p.one_hot), ("coded", &p.coded)] {
            for (part, x, y) in [("train", &s.x_train, &s.y_train), ("test", &s.x_test, &s.y_test)] {
                let mut buf = Vec::new();
                x.write_csv(&mut buf)?;
                files.push((format!("features/x_{part}_{tag}.csv"), buf));
                if tag == "onehot" {
                    let mut buf = Vec::new();
                    TargetVector::log(y.clone()).write_csv(&mut buf)?;
                    files.push((format!("features/y_{part}.csv"), buf));
                }
            }
        }
        let split_rows = p
            .train_rows
            .iter()
            .map(|&i| (i, "train"))
            .chain(p.test_rows.iter().map(|&i| (i, "test")))
            .collect::<BTreeMap<_, _>>()
            .into_iter()
            .map(|(i, part)| vec![p.table.records[i].id.clone(), part.to_string()]);
        files.push(("features/split.csv".into(), csv_bytes(&["id", "split"], split_rows)?));
        for (rel, bytes) in files {
            self.emit(&rel, bytes)?;
        }
        Ok(())
    }

    fn train(&mut self) -> Result<(), CliError> {
        self.prepare()?;
        for kind in self.kinds() {
            self.tuned_model(kind)?;
        }
        Ok(())
    }

    fn tune(&mut self) -> Result<(), CliError> {
        self.prepare()?;
        let kinds: Vec<ModelKind> = match self.model {
            Some(k) if !self.cfg.search.contains_key(&k) => {
                return Err(config_error(format!("no [search.{k}] block for --model {k}")))
            }
            Some(k) => vec![k],
            None => self.cfg.search.keys().copied().collect(),
        };
        if kinds.is_empty() {
            self.note("tune: no search blocks configured");
        }
        let fingerprint = self.base_fingerprint();
        for kind in kinds {
            let block = self.cfg.search[&kind].clone();
            let base = self.finish_spec(self.cfg.tuned[&kind].clone());
            let split = self.split_for(kind);
            let (k, seed) = (self.cfg.k, self.seed);
            let result = match block.strategy {
                Strategy::Grid => grid_search(&base, &block.space, &split.x_train, &split.y_train, k, seed)?,
                Strategy::Random => {
                    random_search(&base, &block.space, block.n_iter, &split.x_train, &split.y_train, k, seed)?
                }
            };
            self.note(format!(
                "tune {kind}: {} trials, best cv r2 {} at trial {}",
                result.trials.len(),
                result.best_cv_score,
                result.best_index
            ));
            let mut trials = Vec::new();
            result.write_trials_csv(&mut trials)?;
            let mut summary = Vec::new();
            result.write_summary_json(&mut summary)?;
            summary.push(b'\n');
            let stored = StoredSearch { fingerprint: fingerprint.clone(), result };
            let mut full = serde_json::to_vec_pretty(&stored).map_err(|e| CliError::Io(e.to_string()))?;
            full.push(b'\n');
            self.emit(&format!("tune/{kind}_trials.csv"), trials)?;
            self.emit(&format!("tune/{kind}_search.json"), summary)?;
            self.emit(&format!("tune/{kind}_result.json"), full)?;
            self.models.remove(&kind);
        }
        self.write_trials_table()
    }

    /// Long-form trials of every matching search on disk.
    fn write_trials_table(&mut self) -> Result<(), CliError> {
        let mut rows = Vec::new();
        let mut max_folds = 0;
        let results: Vec<SearchResult> = ModelKind::ALL.iter().filter_map(|&k| self.stored_search(k)).collect();
        for r in &results {
            max_folds = max_folds.max(r.trials.iter().map(|t| t.fold_r2.len()).max().unwrap_or(0));
        }
        for r in &results {
            for (i, t) in r.trials.iter().enumerate() {
                let params: Vec<String> = t.params.iter().map(|(n, v)| format!("{n}={v}")).collect();
                let mut row = vec![r.kind.to_string(), i.to_string(), params.join(";")];
                row.extend((0..max_folds).map(|f| t.fold_r2.get(f).copied().flatten()).map(fmt_opt));
                row.push(fmt_opt(t.mean_r2));
                row.push((i == r.best_index).to_string());
                rows.push(row);
            }
        }
        let fold_names: Vec<String> = (1..=max_folds).map(|i| format!("fold_{i}_r2")).collect();
        let mut header = vec!["model", "trial", "params"];
        header.extend(fold_names.iter().map(String::as_str));
        header.extend(["mean_r2", "best"]);
        self.emit("table2_trials.csv", csv_bytes(&header, rows)?)
    }

    fn holdout(&self, kind: ModelKind, model: &TrainedModel) -> Result<MetricsReport, CliError> {
        let s = self.split_for(kind);
        Ok(metrics_lenient(&s.y_test, &model.predict(&s.x_test)?, Scale::LogE)?)
    }

    fn cv_r2(&self, kind: ModelKind, spec: &ModelSpec) -> Result<Option<f64>, CliError> {
        let s = self.split_for(kind);
        Ok(cross_validate(spec, &s.x_train, &s.y_train, self.cfg.k, self.seed)?.mean_r2)
    }

    fn evaluate(&mut self) -> Result<(), CliError> {
        self.prepare()?;
        let mut table1 = Vec::new();
        let mut table2 = Vec::new();
        let mut achieved: BTreeMap<ModelKind, (Option<f64>, Option<f64>)> = BTreeMap::new();
        for kind in self.kinds() {
            let spec = self.baseline_spec(kind);
            let split = self.split_for(kind);
            let model = spec.fit(&split.x_train, &split.y_train)?;
            let m = self.holdout(kind, &model)?;
            let cv = self.cv_r2(kind, &spec)?;
            let mut row = vec![kind.to_string()];
            row.extend(metric_cells(&m));
            row.extend([fmt_opt(cv), m.n.to_string()]);
            table1.push(row);

            let tuned_spec = self.tuned_spec(kind)?;
            let tuned = self.tuned_model(kind)?;
            let t = self.holdout(kind, &tuned)?;
            let tcv = self.cv_r2(kind, &tuned_spec)?;
            let mut row = vec![kind.to_string(), describe_spec(&tuned_spec)];
            row.extend(metric_cells(&t));
            row.extend([fmt_opt(tcv), t.n.to_string()]);
            table2.push(row);
            self.note(format!("evaluate {kind}: holdout r2 {} untuned, {} tuned", fmt_opt(m.r2), fmt_opt(t.r2)));
            achieved.insert(kind, (m.r2, t.r2));
        }
        let t1 = csv_bytes(&["model", "r2", "mse", "rmse", "mae", "cv_r2", "n"], table1)?;
        let t2 = csv_bytes(&["model", "params", "r2", "mse", "rmse", "mae", "cv_r2", "n"], table2)?;
        self.emit("table1_metrics.csv", t1)?;
        self.emit("table2_metrics.csv", t2)?;
        let summary = run_summary(&achieved);
        self.emit("run_summary.txt", summary.into_bytes())
    }

    fn diagnose(&mut self) -> Result<(), CliError> {
        self.prepare()?;
        let kind = self.model.unwrap_or(self.cfg.diagnostics.model);
        let model = self.tuned_model(kind)?;
        let split = self.split_for(kind).clone();
        let pred = model.predict(&split.x_test)?;
        let raw = self.cfg.diagnostics.raw_scale;
        let y = TargetVector::log(split.y_test.clone());
        let yhat = TargetVector::log(pred.clone());
        let (y_plot, pred_plot) = if raw {
            (y.values.iter().map(|v| v.exp()).collect(), yhat.values.iter().map(|v| v.exp()).collect())
        } else {
            (y.values.clone(), yhat.values.clone())
        };
        let mut scatter = Vec::new();
        write_scatter_csv(&y_plot, &pred_plot, &mut scatter)?;
        self.emit("fig5_scatter.csv", scatter)?;

        let residuals = compute_residuals(&y, &yhat, raw)?;
        let hist = residual_histogram(&residuals, self.cfg.diagnostics.residual_bins)?;
        let mut buf = Vec::new();
        write_histogram_csv(&hist, &mut buf)?;
        self.emit("fig6_residual_hist.csv", buf)?;
        let mut buf = Vec::new();
        write_residuals_csv(&residuals, &mut buf)?;
        self.emit("fig6_residuals.csv", buf)?;

        let pe = prediction_error_summary(&y_plot, &pred_plot)?;
        let lo = y_plot.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = y_plot.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let rows = vec![
            vec!["best_fit".into(), pe.slope.to_string(), pe.intercept.to_string(), pe.r2.to_string(), lo.to_string(), hi.to_string()],
            vec!["identity".into(), "1".into(), "0".into(), pe.r2.to_string(), lo.to_string(), hi.to_string()],
        ];
        self.emit("fig7_prediction_error.csv", csv_bytes(&["line", "slope", "intercept", "r2", "x_min", "x_max"], rows)?)?;

        let names = self.prepared.as_ref().expect("prepared").encoder.names(layout_of(kind));
        let mut buf = Vec::new();
        match gain_importance(&model, &names) {
            Ok(report) => report.write_csv(&mut buf)?,
            Err(DiagnosticsError::NotTreeModel(_)) | Err(DiagnosticsError::NoSplits) => {
                self.note(format!("diagnose {kind}: no gain importance"));
            }
            Err(e) => return Err(e.into()),
        }
        let perm = permutation_importance(
            &model,
            &split.x_test,
            &split.y_test,
            &names,
            self.cfg.diagnostics.permutation_repeats,
            self.seed,
        )?;
        let mut pbuf = Vec::new();
        perm.write_csv(&mut pbuf)?;
        if buf.is_empty() {
            buf = pbuf;
        } else {
            // Drop the repeated header line.
            let body = pbuf.iter().position(|&b| b == b'\n').map_or(pbuf.len(), |i| i + 1);
            buf.extend_from_slice(&pbuf[body..]);
        }
        self.note(format!("diagnose {kind}: holdout r2 {}", pe.r2));
        self.emit("fig8_importance.csv", buf)
    }

    fn predict(&mut self) -> Result<(), CliError> {
        self.prepare()?;
        let kind = self.model.unwrap_or(self.cfg.diagnostics.model);
        let model = self.tuned_model(kind)?;
        let path = self.predict_input.clone().ok_or_else(|| config_error("predict needs --in PATH"))?;
        let bytes = fs::read(&path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let bytes = with_price_column(bytes, self.cfg.schema.column(Role::Price).expect("price is mapped"))?;
        let table = parse_listings(bytes.as_slice(), &self.cfg.schema)?;
        if table.is_empty() {
            return Err(CliError::Data(format!("{}: no listings", path.display())));
        }
        let geos = self.geocode(&table, "predict input")?;
        let enc = &self.prepared.as_ref().expect("prepared").encoder;
        let encoded = enc.encode(&table, &geos, layout_of(kind), false, false)?;
        let pred = model.predict(&encoded.x)?;
        let mut rows = Vec::with_capacity(pred.len());
        for (&i, p) in encoded.kept_rows.iter().zip(&pred) {
            let price = p.exp();
            if !(price > 0.0 && price.is_finite()) {
                return Err(CliError::Model(format!("row {i}: predicted price {price} is not a positive number")));
            }
            let rec = &table.records[i];
            rows.push(vec![rec.id.clone(), rec.location.clone().unwrap_or_default(), price.to_string()]);
        }
        self.note(format!("predict {kind}: {} of {} listings priced", rows.len(), table.len()));
        self.emit("predictions.csv", csv_bytes(&["id", "location", "predicted_price_ghs"], rows)?)
    }
}

/// Compact `name=value` list of the parameters that define a spec.
fn describe_spec(spec: &ModelSpec) -> String {
    let v = serde_json::to_value(spec).expect("specs serialize");
    let mut parts = Vec::new();
    flatten("", &v, &mut parts);
    parts.join(";")
}

fn flatten(prefix: &str, v: &serde_json::Value, out: &mut Vec<String>) {
    match v {
        serde_json::Value::Object(map) => {
            for (k, v) in map {
                if k == "kind" || k == "seed" {
                    continue;
                }
                let name = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&name, v, out);
            }
        }
        serde_json::Value::Null => out.push(format!("{prefix}=none")),
        serde_json::Value::Array(items) => {
            let items: Vec<String> = items.iter().map(|i| i.to_string()).collect();
            out.push(format!("{prefix}=[{}]", items.join(" ")));
        }
        other => out.push(format!("{prefix}={other}")),
    }
}

fn run_summary(achieved: &BTreeMap<ModelKind, (Option<f64>, Option<f64>)>) -> String {
    let mut s = String::from("holdout R² on log price, achieved vs reference\n\n");
    s.push_str(&format!("{:<8} {:>10} {:>10} {:>10} {:>10}\n", "model", "untuned", "reference", "tuned", "reference"));
    let show = |v: Option<f64>| v.map_or_else(|| "undefined".to_string(), |v| format!("{v:.4}"));
    for (kind, r1, r2) in REFERENCE_R2 {
        if let Some((a1, a2)) = achieved.get(&kind) {
            s.push_str(&format!("{:<8} {:>10} {:>10.3} {:>10} {:>10.3}\n", kind.as_str(), show(*a1), r1, show(*a2), r2));
        }
    }
    s.push('\n');
    let tuned = |k: ModelKind| achieved.get(&k).and_then(|v| v.1);
    if let Some(lin) = tuned(ModelKind::Linear) {
        for k in [ModelKind::Forest, ModelKind::Xgb, ModelKind::Cat] {
            if let Some(v) = tuned(k) {
                let verdict = if v > lin { "yes" } else { "NO" };
                s.push_str(&format!("tuned {k} beats linear: {verdict}\n"));
            }
        }
        if let Some(cat) = tuned(ModelKind::Cat) {
            let verdict = if cat >= lin + 0.05 { "yes" } else { "NO" };
            s.push_str(&format!("tuned cat >= linear + 0.05: {verdict}\n"));
        }
    }
    if let Some(cat) = tuned(ModelKind::Cat) {
        let reference = 0.877;
        if (cat - reference).abs() > CAT_BAND {
            s.push_str(&format!("FLAG: tuned cat R² {cat:.4} is outside {reference} ± {CAT_BAND}\n"));
        } else {
            s.push_str(&format!("tuned cat R² {cat:.4} is within {reference} ± {CAT_BAND}\n"));
        }
    }
    s
}

/// Appends an empty price column when the file has none, so listings
/// without a price can be read with the training schema.
fn with_price_column(bytes: Vec<u8>, price_column: &str) -> Result<Vec<u8>, CliError> {
    let mut reader = csv::Reader::from_reader(bytes.as_slice());
    let header = reader.headers()?.clone();
    if header.iter().any(|h| h.trim() == price_column) {
        return Ok(bytes);
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut h: Vec<&str> = header.iter().collect();
    h.push(price_column);
    w.write_record(&h)?;
    for rec in reader.records() {
        let rec = rec?;
        let mut row: Vec<&str> = rec.iter().collect();
        row.push("");
        w.write_record(&row)?;
    }
    w.into_inner().map_err(|e| CliError::Io(e.to_string()))
}

/// RFC 3339 UTC time from `SOURCE_DATE_EPOCH` when set, else the clock.
fn created_at() -> String {
    let secs = std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|s| s.trim().parse::<i64>().ok()).unwrap_or_else(|| {
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_secs() as i64)
    });
    format_utc(secs)
}

pub(crate) fn format_utc(secs: i64) -> String {
    let days = secs.div_euclid(86_400);
    let rem = secs.rem_euclid(86_400);
    // Civil-from-days over 400-year eras.
    let z = days + 719_468;
    let era = z.div_euclid(146_097);
    let doe = z.rem_euclid(146_097);
    let yoe = (doe - doe / 1460 + doe / 36_524 - doe / 146_096) / 365;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let day = doy - (153 * mp + 2) / 5 + 1;
    let month = if mp < 10 { mp + 3 } else { mp - 9 };
    let year = yoe + era * 400 + i64::from(month <= 2);
    format!("{year:04}-{month:02}-{day:02}T{:02}:{:02}:{:02}Z", rem / 3600, rem % 3600 / 60, rem % 60)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn utc_formatting() {
        assert_eq!(format_utc(0), "1970-01-01T00:00:00Z");
        assert_eq!(format_utc(951_782_400), "2000-02-29T00:00:00Z");
        assert_eq!(format_utc(1_700_000_000), "2023-11-14T22:13:20Z");
        assert_eq!(format_utc(-1), "1969-12-31T23:59:59Z");
    }

    #[test]
    fn price_column_is_added_once() {
        let with = with_price_column(b"id,price\n1,5\n".to_vec(), "price").unwrap();
        assert_eq!(with, b"id,price\n1,5\n");
        let without = with_price_column(b"id,location\n1,Osu\n".to_vec(), "price").unwrap();
        assert_eq!(String::from_utf8(without).unwrap(), "id,location,price\n1,Osu,\n");
    }

    #[test]
    fn exit_codes() {
        assert_eq!(config_error("x").exit_code(), 2);
        assert_eq!(CliError::Data(String::new()).exit_code(), 3);
        assert_eq!(CliError::Model(String::new()).exit_code(), 4);
        assert_eq!(CliError::Io(String::new()).exit_code(), 5);
        assert_eq!(main_with_args(["rentwise", "train"]), 2);
        assert_eq!(main_with_args(["rentwise", "frobnicate"]), 2);
    }

    #[test]
    fn spec_description_is_flat() {
        let d = describe_spec(&ModelSpec::tuned(ModelKind::Forest));
        assert!(d.contains("n_estimators=333"), "{d}");
        assert!(d.contains("tree.max_depth=90"), "{d}");
        assert!(!d.contains("seed"));
    }
}
