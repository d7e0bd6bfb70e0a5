//! End-to-end checks of the `rentwise` binary: exit codes and outputs.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

fn rentwise(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rentwise"))
        .args(args)
        .env_remove("GEOCODER_URL")
        .env_remove("GEOCODER_KEY")
        .env("SOURCE_DATE_EPOCH", "0")
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Writes a config next to copies of the fixture data and returns its path.
fn config_in(dir: &Path, body: &str) -> PathBuf {
    fs::copy(data("fixture_listings.csv"), dir.join("listings.csv")).unwrap();
    fs::copy(data("gazetteer_accra.csv"), dir.join("gazetteer.csv")).unwrap();
    let path = dir.join("run.toml");
    fs::write(&path, body).unwrap();
    path
}

const SCHEMA: &str = r#"
[schema]
id = "id"
price = "price"
location = "location"
listing_category = "category"
bedrooms = "bedrooms"
bathrooms = "bathrooms"
furnishing = "furnishing"
condition = "condition"
house_type = "house_type"
amenities = "amenities"
"#;

fn small_config(dir: &Path, extra: &str) -> PathBuf {
    let body = format!(
        "seed = 3\nk = 3\n{extra}\n[paths]\ninput = \"listings.csv\"\ngazetteer = \"gazetteer.csv\"\noutput = \"out\"\n{SCHEMA}\n[cleaning]\nrequired = [\"price\", \"location\"]\n"
    );
    config_in(dir, &body)
}

#[test]
fn usage_errors_exit_2_and_help_exits_0() {
    assert_eq!(rentwise(&[]).status.code(), Some(2));
    assert_eq!(rentwise(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(rentwise(&["--help"]).status.code(), Some(0));
    assert_eq!(rentwise(&["train", "--config", "/definitely/not/here.toml"]).status.code(), Some(2));
}

#[test]
fn every_config_violation_is_listed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_in(
        dir.path(),
        &format!(
            "seed = -1\n[paths]\ninput = \"listings.csv\"\ngazetteer = \"gazetteer.csv\"\n{SCHEMA}\n[cleaning]\nrequired = [\"price\", \"location\"]\n[features]\nsplit_ratio = 1.5\n[models.forest]\nn_estimators = 0\n"
        ),
    );
    let o = rentwise(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let err = stderr(&o);
    assert_eq!(err.matches("\n  - ").count(), 3, "{err}");
    assert!(err.contains("seed") && err.contains("split_ratio") && err.contains("n_estimators"), "{err}");
}

#[test]
fn remote_geocoder_without_credentials_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    let o = rentwise(&["ingest", "--remote-geocoder", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("GEOCODER_URL"));
}

#[test]
fn missing_price_column_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    fs::write(dir.path().join("listings.csv"), "id,location\nA,Osu\n").unwrap();
    let o = rentwise(&["ingest", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let log = fs::read_to_string(dir.path().join("out/run_log.txt")).unwrap();
    assert!(log.starts_with("seed 3\n"), "{log}");
}

#[test]
fn ingest_writes_figure_data() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    let o = rentwise(&["ingest", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = dir.path().join("out");
    let locations = fs::read_to_string(out.join("fig2_locations.csv")).unwrap();
    assert!(locations.starts_with("location,count\n"));
    let total: usize = locations.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse::<usize>().unwrap()).sum();
    let hist = fs::read_to_string(out.join("fig1_price_hist.csv")).unwrap();
    let binned: usize = hist.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse::<usize>().unwrap()).sum();
    assert_eq!(total, binned);
}

#[test]
fn predict_prices_new_listings() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    let input = dir.path().join("new.csv");
    fs::write(
        &input,
        "id,location,category,bedrooms,bathrooms,furnishing,condition,house_type,amenities\n\
         N1,East Legon,Houses for Rent,3,3,Furnished,Newly-Built,Detached,\"Swimming Pool, Gym\"\n\
         N2,Kasoa,Houses for Rent,1,1,Unfurnished,Used,Apartment,\n\
         N3,Atlantis,Houses for Rent,2,2,Unfurnished,Used,Apartment,\n",
    )
    .unwrap();
    let o = rentwise(&["predict", "--model", "linear", "--config", cfg.to_str().unwrap(), "--in", input.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = fs::read_to_string(dir.path().join("out/predictions.csv")).unwrap();
    let rows: Vec<Vec<&str>> = text.lines().skip(1).map(|l| l.split(',').collect()).collect();
    // The unknown locality is dropped under the default policy.
    assert_eq!(rows.iter().map(|r| r[0]).collect::<Vec<_>>(), ["N1", "N2"]);
    let prices: Vec<f64> = rows.iter().map(|r| r[2].parse().unwrap()).collect();
    assert!(prices.iter().all(|p| *p > 0.0 && p.is_finite()));
    assert!(prices[0] > prices[1], "{prices:?}");
    assert!(dir.path().join("out/models/linear.model.json").exists());

    let o = rentwise(&["predict", "--model", "linear", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "predict without --in");
}

#[test]
fn unknown_model_name_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    let o = rentwise(&["train", "--model", "lasso", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}
