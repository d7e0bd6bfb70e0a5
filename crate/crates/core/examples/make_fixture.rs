//! Writes a synthetic Accra rental-listings CSV to standard output.
//!
//! ```text
//! cargo run --example make_fixture -- [rows] [seed] > listings.csv
//! ```
//!
//! Log price depends on location (with a distance-to-centre term, so the
//! coordinates carry signal), rooms, furnishing, condition and a few
//! amenities, plus interactions a linear model cannot express. A small
//! share of rows is dirty: missing prices, unknown locations, junk counts,
//! a category that the example config regroups, and extreme prices.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const LOCATIONS: [(&str, f64, f64, f64); 16] = [
    // name, lat, lng, location premium on log price
    ("East Legon", 5.636, -0.163, 0.45),
    ("Spintex", 5.634, -0.105, 0.20),
    ("Teshie", 5.583, -0.107, -0.10),
    ("Adenta", 5.708, -0.163, -0.15),
    ("Cantonments", 5.578, -0.176, 0.80),
    ("Airport Residential Area", 5.603, -0.182, 0.75),
    ("Osu", 5.556, -0.182, 0.40),
    ("Labone", 5.566, -0.169, 0.50),
    ("Dzorwulu", 5.611, -0.203, 0.30),
    ("Madina", 5.683, -0.166, -0.25),
    ("Dansoman", 5.546, -0.264, -0.30),
    ("Kasoa", 5.534, -0.418, -0.55),
    ("Tema", 5.669, -0.017, 0.00),
    ("Achimota", 5.622, -0.228, -0.05),
    ("Haatso", 5.670, -0.196, -0.20),
    ("Sakumono", 5.621, -0.060, 0.05),
];
const WEIGHTS: [u32; 16] = [18, 13, 9, 9, 5, 4, 5, 4, 4, 6, 5, 4, 5, 4, 3, 2];
const HOUSE_TYPES: [(&str, f64); 4] =
    [("Apartment", 0.0), ("Detached", 0.35), ("Semi-Detached", 0.15), ("Townhouse", 0.25)];
const CONDITIONS: [(&str, f64); 3] = [("Newly-Built", 0.20), ("Renovated", 0.05), ("Used", -0.10)];
const AMENITIES: [(&str, f64); 10] = [
    ("Air Conditioning", 0.10),
    ("Parking Space", 0.03),
    ("24-hour Electricity", 0.08),
    ("Security", 0.05),
    ("Pop Ceiling", 0.02),
    ("Swimming Pool", 0.25),
    ("Wardrobe", 0.01),
    ("Balcony", 0.03),
    ("Gym", 0.12),
    ("Tiled Floor", 0.00),
];

fn pick<'a, T>(rng: &mut ChaCha8Rng, items: &'a [T]) -> &'a T {
    &items[rng.random_range(0..items.len())]
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; one draw per call keeps the stream simple.
    let u1: f64 = rng.random_range(f64::EPSILON..1.0);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn main() {
    let mut args = std::env::args().skip(1);
    let rows: usize = args.next().map_or(400, |a| a.parse().expect("rows must be an integer"));
    let seed: u64 = args.next().map_or(11, |a| a.parse().expect("seed must be an integer"));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total: u32 = WEIGHTS.iter().sum();

    let mut w = csv::Writer::from_writer(std::io::stdout().lock());
    w.write_record([
        "id", "price", "location", "category", "bedrooms", "bathrooms", "furnishing", "condition", "house_type",
        "amenities",
    ])
    .expect("stdout");
    for i in 0..rows {
        let mut r = rng.random_range(0..total);
        let mut li = 0;
        while r >= WEIGHTS[li] {
            r -= WEIGHTS[li];
            li += 1;
        }
        let (loc, lat, lng, premium) = LOCATIONS[li];
        let bedrooms: u32 = rng.random_range(1..=5);
        let bathrooms: u32 = (bedrooms + rng.random_range(0..=1)).saturating_sub(rng.random_range(0..=1)).max(1);
        let furnishing = *pick(&mut rng, &["Furnished", "Semi-Furnished", "Unfurnished", "Unfurnished"]);
        let (house, house_fx) = *pick(&mut rng, &HOUSE_TYPES);
        let (cond, cond_fx) = *pick(&mut rng, &CONDITIONS);
        let mut amen = Vec::new();
        let mut amen_fx = 0.0;
        for (name, fx) in AMENITIES {
            if rng.random_bool(0.35) {
                amen.push(name);
                amen_fx += fx;
            }
        }
        let furn_fx = match furnishing {
            "Furnished" => 0.35,
            "Semi-Furnished" => 0.15,
            _ => 0.0,
        };
        let centre = ((lat - 5.58f64).powi(2) + (lng + 0.18f64).powi(2)).sqrt();
        let rooms = f64::from(bedrooms);
        let log_price = 6.4 + premium - 2.0 * centre + 0.55 * rooms.ln_1p() * (1.0 + premium.max(0.0))
            + 0.12 * f64::from(bathrooms)
            + furn_fx * (1.0 + 0.5 * premium.max(0.0))
            + house_fx
            + cond_fx
            + amen_fx
            + 0.15 * normal(&mut rng);
        let mut price = format!("{:.0}", (log_price.exp() / 10.0).round() * 10.0);
        let mut location = loc.to_string();
        let mut beds = bedrooms.to_string();
        let roll: f64 = rng.random();
        if roll < 0.02 {
            price.clear();
        } else if roll < 0.03 {
            location = "Nowhere Town".into();
        } else if roll < 0.04 {
            beds = "many".into();
        } else if roll < 0.045 {
            price = "5".into();
        } else if roll < 0.06 {
            price = format!("GH₵ {},{:03}", (log_price.exp() as u64) / 1000, (log_price.exp() as u64) % 1000);
        }
        let category = if rng.random_bool(0.1) { "Flats for Rent" } else { "Houses for Rent" };
        w.write_record([
            format!("L{:05}", i + 1),
            price,
            location,
            category.to_string(),
            beds,
            bathrooms.to_string(),
            furnishing.to_string(),
            cond.to_string(),
            house.to_string(),
            amen.join(", "),
        ])
        .expect("stdout");
    }
    w.flush().expect("stdout");
}
