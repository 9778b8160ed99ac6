//! Bundled synthetic data generators: a census-like tabular dataset for the
//! desk-scale evaluation runs and a multi-class series dataset for the
//! time-series mode. Both are seeded and fully reproducible.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::tabular::{Column, ColumnKind, Dataset, Instance, Schema, Value};
use crate::timeseries::{SeriesDataset, SeriesSample, SeriesSchema};

pub const EDUCATION: [&str; 6] = ["School", "HS-grad", "Assoc", "Bachelors", "Masters", "Doctorate"];
pub const WORKCLASS: [&str; 3] = ["Private", "Government", "Self-Employed"];
pub const MARITAL: [&str; 3] = ["Married", "Single", "Divorced"];
pub const OCCUPATION: [&str; 5] = ["Blue-Collar", "White-Collar", "Professional", "Sales", "Service"];
pub const RACE: [&str; 2] = ["White", "Other"];
pub const GENDER: [&str; 2] = ["Male", "Female"];

fn cat(name: &str, categories: &[&str]) -> Column {
    Column {
        name: name.into(),
        kind: ColumnKind::Categorical,
        categories: categories.iter().map(|s| s.to_string()).collect(),
        actionable: true,
    }
}

fn con(name: &str) -> Column {
    Column { name: name.into(), kind: ColumnKind::Continuous, categories: vec![], actionable: true }
}

/// Adult-census-like schema: Age, Education, Gender, Working hours, Marital,
/// Occupation, Race, Workclass.
pub fn census_schema() -> Schema {
    Schema::new(vec![
        con("Age"),
        cat("Education", &EDUCATION),
        cat("Gender", &GENDER),
        con("Working hours"),
        cat("Marital", &MARITAL),
        cat("Occupation", &OCCUPATION),
        cat("Race", &RACE),
        cat("Workclass", &WORKCLASS),
    ])
    .unwrap()
}

/// Generate a labeled census-like dataset. The income label follows a noisy
/// score over age, education rank, marital status, occupation and working
/// hours, mirroring the broad correlations of the real data.
pub fn generate_census(n: usize, seed: u64) -> Dataset {
    let schema = census_schema();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);

    for _ in 0..n {
        let age = 18.0 + rng.gen::<f64>() * 52.0;
        let education = rng.gen_range(0..EDUCATION.len());
        let gender = rng.gen_range(0..GENDER.len());
        let hours = (20.0 + rng.gen::<f64>() * 50.0).round();
        let marital = rng.gen_range(0..MARITAL.len());
        let occupation = rng.gen_range(0..OCCUPATION.len());
        let race = rng.gen_range(0..RACE.len());
        let workclass = rng.gen_range(0..WORKCLASS.len());

        let occupation_bonus = [0.0, 0.6, 0.9, 0.3, -0.2][occupation];
        let score = 0.045 * (age - 38.0)
            + 0.55 * (education as f64 - 2.0)
            + if marital == 0 { 0.8 } else { 0.0 }
            + 0.05 * (hours - 40.0)
            + occupation_bonus
            + if gender == 0 { 0.2 } else { 0.0 };
        let p_high = 1.0 / (1.0 + (-2.5 * (score - 0.8)).exp());
        let label = usize::from(rng.gen::<f64>() < p_high);

        rows.push(Instance::new(vec![
            Value::Con(age.round()),
            Value::Cat(education),
            Value::Cat(gender),
            Value::Con(hours),
            Value::Cat(marital),
            Value::Cat(occupation),
            Value::Cat(race),
            Value::Cat(workclass),
        ]));
        labels.push(label);
    }
    Dataset::new(schema, rows, labels).unwrap()
}

/// Generate a multi-class series dataset with `classes` classes and
/// `series_count` series per sample. Class membership is encoded in the
/// first three series (distinct level patterns per class), so every class is
/// reachable from any sample by at most three substitutions.
pub fn generate_series_data(
    classes: usize,
    series_count: usize,
    samples_per_class: usize,
    series_len: usize,
    seed: u64,
) -> SeriesDataset {
    assert!(series_count >= 3);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names: Vec<String> = (0..series_count).map(|i| format!("series_{i:02}")).collect();
    let schema = SeriesSchema { names, length: series_len };

    let mut samples = Vec::new();
    for class in 0..classes {
        // per-class levels of the three discriminative series
        let levels = [
            (class as f64) * 4.0,
            ((class * 7 + 3) % (classes * 4)) as f64,
            ((class * 11 + 5) % (classes * 4)) as f64,
        ];
        for _ in 0..samples_per_class {
            let mut series = Vec::with_capacity(series_count);
            for j in 0..series_count {
                let base = if j < 3 { levels[j] } else { 1.0 };
                let seq: Vec<f64> = (0..series_len)
                    .map(|t| {
                        let noise: f64 = rng.sample(StandardNormal);
                        base + 0.5 * (t as f64 * 0.7).sin() + 0.1 * noise
                    })
                    .collect();
                series.push(seq);
            }
            samples.push(SeriesSample { series, label: class });
        }
    }
    SeriesDataset { schema, samples }
}
