//! Counterfactuals for time-series classifiers by whole-series substitution:
//! each named series is one atomic feature, and candidate replacements are
//! copied verbatim from real training samples.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::Path;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MaceError, Result};
use crate::policy::{reinforce_train_generic, sample_action, Action, RlHyperparams};
use crate::rank::{pairwise_diversity, select_diverse, CfExample, Provenance, SelectionParams};
use crate::tabular::{Column, ColumnKind, Dataset, EncoderState, Instance, Schema, Value};

/// Shared shape of all samples: series names and per-series lengths.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeriesSchema {
    pub names: Vec<String>,
    pub length: usize,
}

/// One sample: one fixed-length sequence per series name, plus a class label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesSample {
    /// Parallel to `SeriesSchema::names`.
    pub series: Vec<Vec<f64>>,
    pub label: usize,
}

#[derive(Debug, Clone)]
pub struct SeriesDataset {
    pub schema: SeriesSchema,
    pub samples: Vec<SeriesSample>,
}

impl SeriesDataset {
    pub fn validate(&self) -> Result<()> {
        for (i, s) in self.samples.iter().enumerate() {
            if s.series.len() != self.schema.names.len() {
                return Err(MaceError::Schema(format!("sample {i} has wrong series count")));
            }
            if s.series.iter().any(|seq| seq.len() != self.schema.length) {
                return Err(MaceError::Schema(format!("sample {i} has wrong series length")));
            }
        }
        Ok(())
    }
}

/// Black-box contract for time-series classification; mirrors the tabular
/// classifier trait but scores a bundle of series.
pub trait SeriesClassifier: Send + Sync {
    fn class_count(&self) -> usize;
    fn predict_proba(&self, series: &[Vec<f64>]) -> Result<Vec<f64>>;

    fn predict(&self, series: &[Vec<f64>]) -> Result<usize> {
        Ok(crate::model::argmax(&self.predict_proba(series)?))
    }
}

/// Multi-class validity: the desired class attains the strict argmax.
pub fn is_valid_multiclass(probs: &[f64], desired: usize) -> bool {
    probs
        .iter()
        .enumerate()
        .all(|(i, &p)| i == desired || probs[desired] > p)
}

/// One candidate substitution: a series index and the replacement sequence
/// taken verbatim from the nearest differing neighbor.
#[derive(Debug, Clone, PartialEq)]
pub struct TsCandidate {
    pub series: usize,
    pub neighbor_count: usize,
    pub replacement: Vec<f64>,
}

fn znorm(seq: &[f64]) -> Vec<f64> {
    let n = seq.len() as f64;
    let mean = seq.iter().sum::<f64>() / n;
    let var = seq.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let sd = var.sqrt().max(1e-12);
    seq.iter().map(|v| (v - mean) / sd).collect()
}

/// Summed z-normalized Euclidean distance across series.
fn sample_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| crate::tabular::euclidean(&znorm(x), &znorm(y)))
        .sum()
}

fn series_differ(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).any(|(x, y)| (x - y).abs() > 1e-6)
}

/// Nearest-neighbor candidate selection over whole series: find the K
/// nearest training samples predicted in the target class, count per series
/// how many neighbors differ from the query, and keep the top-s series with
/// one replacement each (from the nearest differing neighbor).
pub fn ts_select_candidates(
    x: &SeriesSample,
    target_class: usize,
    data: &SeriesDataset,
    model: &dyn SeriesClassifier,
    k_neighbors: usize,
    s: usize,
) -> Result<Vec<TsCandidate>> {
    let mut members: Vec<usize> = Vec::new();
    for (i, sample) in data.samples.iter().enumerate() {
        if model.predict(&sample.series)? == target_class {
            members.push(i);
        }
    }
    if members.is_empty() {
        return Err(MaceError::TargetUnreachable(target_class));
    }
    // K larger than the class is capped
    let mut order = members.clone();
    let dists: BTreeMap<usize, f64> = members
        .iter()
        .map(|&i| (i, sample_distance(&x.series, &data.samples[i].series)))
        .collect();
    order.sort_by(|&a, &b| dists[&a].partial_cmp(&dists[&b]).unwrap().then(a.cmp(&b)));
    order.truncate(k_neighbors);

    let mut candidates = Vec::new();
    for series_idx in 0..data.schema.names.len() {
        let mut count = 0;
        let mut replacement: Option<Vec<f64>> = None;
        for &ni in &order {
            let neighbor = &data.samples[ni];
            if series_differ(&x.series[series_idx], &neighbor.series[series_idx]) {
                count += 1;
                if replacement.is_none() {
                    // neighbors are in ascending distance order
                    replacement = Some(neighbor.series[series_idx].clone());
                }
            }
        }
        if let Some(replacement) = replacement {
            candidates.push(TsCandidate { series: series_idx, neighbor_count: count, replacement });
        }
    }
    candidates.sort_by(|a, b| b.neighbor_count.cmp(&a.neighbor_count).then(a.series.cmp(&b.series)));
    candidates.truncate(s);
    Ok(candidates)
}

/// One reported time-series counterfactual.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TsCfExample {
    /// Indices of substituted series.
    pub substituted: Vec<usize>,
    pub valid: bool,
    pub sparsity: usize,
    /// Probability of the desired class.
    pub desired_prob: f64,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TsExplanationReport {
    pub predicted_class: usize,
    pub desired_class: usize,
    /// (series name, neighbor count) per candidate.
    pub candidates: Vec<(String, usize)>,
    /// (series name, selection probability) of the trained policy, descending.
    pub top_series: Vec<(String, f64)>,
    pub examples: Vec<TsCfExample>,
    pub diversity: Option<f64>,
    pub fallback_used: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TsConfig {
    pub k_neighbors: usize,
    pub s_series: usize,
    pub rl: RlHyperparams,
    pub selection: SelectionParams,
    pub seed: u64,
}

impl Default for TsConfig {
    fn default() -> Self {
        TsConfig {
            k_neighbors: 30,
            s_series: 10,
            rl: RlHyperparams::default(),
            selection: SelectionParams::default(),
            seed: 0,
        }
    }
}

/// Substitute the chosen candidate series into the query sample.
pub fn materialize(
    x: &SeriesSample,
    candidates: &[TsCandidate],
    substituted: &[usize],
) -> Vec<Vec<f64>> {
    let mut series = x.series.clone();
    for &idx in substituted {
        let cand = candidates.iter().find(|c| c.series == idx).expect("candidate series");
        series[idx] = cand.replacement.clone();
    }
    series
}

/// Synthetic two-category schema used to route time-series substitution sets
/// through the tabular ranking stage: one column per candidate series,
/// "kept" vs "substituted".
fn substitution_schema(candidates: &[TsCandidate], names: &[String]) -> (Schema, EncoderState) {
    let columns = candidates
        .iter()
        .map(|c| Column {
            name: names[c.series].clone(),
            kind: ColumnKind::Categorical,
            categories: vec!["kept".into(), "substituted".into()],
            actionable: true,
        })
        .collect();
    let schema = Schema::new(columns).unwrap();
    let row = Instance::new(vec![Value::Cat(0); candidates.len()]);
    let ds = Dataset::new(schema.clone(), vec![row], vec![0]).unwrap();
    let enc = crate::tabular::fit_encoders(&ds, 2).unwrap();
    (schema, enc)
}

fn action_substitutions(action: &Action, candidates: &[TsCandidate]) -> Vec<usize> {
    action.selected().map(|(c, _)| candidates[c].series).collect()
}

/// Generate counterfactual substitution sets for a time-series query. Same
/// four-stage flow as the tabular pipeline; validity is strict argmax of the
/// desired class, and continuous fine-tuning does not apply.
pub fn ts_explain(
    x: &SeriesSample,
    desired_class: usize,
    data: &SeriesDataset,
    model: &dyn SeriesClassifier,
    config: &TsConfig,
) -> Result<TsExplanationReport> {
    let predicted = model.predict(&x.series)?;
    if predicted == desired_class {
        return Ok(TsExplanationReport {
            predicted_class: predicted,
            desired_class,
            candidates: vec![],
            top_series: vec![],
            examples: vec![TsCfExample {
                substituted: vec![],
                valid: true,
                sparsity: 0,
                desired_prob: model.predict_proba(&x.series)?[desired_class],
                provenance: Provenance::RlGreedy,
            }],
            diversity: None,
            fallback_used: false,
        });
    }

    let candidates =
        ts_select_candidates(x, desired_class, data, model, config.k_neighbors, config.s_series)?;
    if candidates.is_empty() {
        return fallback_report(x, desired_class, data, model, predicted);
    }

    let names = &data.schema.names;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let value_counts = vec![1usize; candidates.len()];
    let reward = |a: &Action| -> Result<f64> {
        let subs = action_substitutions(a, &candidates);
        let series = materialize(x, &candidates, &subs);
        Ok(model.predict_proba(&series)?[desired_class])
    };
    let params = reinforce_train_generic(&value_counts, reward, &config.rl, &mut rng)?;

    // greedy construction in descending selection-probability order
    let probs = params.selection_probs();
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| probs[b].partial_cmp(&probs[a]).unwrap().then(a.cmp(&b)));
    order.truncate(config.rl.w);
    let top_series: Vec<(String, f64)> = order
        .iter()
        .map(|&c| (names[candidates[c].series].clone(), probs[c]))
        .collect();

    let mut greedy_subs: Vec<usize> = Vec::new();
    let mut greedy_valid = false;
    for &c in &order {
        greedy_subs.push(candidates[c].series);
        let series = materialize(x, &candidates, &greedy_subs);
        if is_valid_multiclass(&model.predict_proba(&series)?, desired_class) {
            greedy_valid = true;
            break;
        }
    }

    // batch sampling, deduplicated by substitution set
    let mut seen: Vec<Vec<usize>> = vec![greedy_subs.clone()];
    let mut pool: Vec<(Vec<usize>, bool, f64, Provenance)> = Vec::new();
    {
        let series = materialize(x, &candidates, &greedy_subs);
        let probs_out = model.predict_proba(&series)?;
        pool.push((greedy_subs.clone(), greedy_valid, probs_out[desired_class], Provenance::RlGreedy));
    }
    for _ in 0..config.rl.b_samples {
        let action = sample_action(&params, &mut rng);
        let subs = action_substitutions(&action, &candidates);
        if seen.contains(&subs) {
            continue;
        }
        seen.push(subs.clone());
        let series = materialize(x, &candidates, &subs);
        let probs_out = model.predict_proba(&series)?;
        if is_valid_multiclass(&probs_out, desired_class) {
            pool.push((subs, true, probs_out[desired_class], Provenance::RlSample));
        }
    }

    // route ranking through the tabular selection stage
    let (sub_schema, sub_enc) = substitution_schema(&candidates, names);
    let query = Instance::new(vec![Value::Cat(0); candidates.len()]);
    let as_examples: Vec<CfExample> = pool
        .iter()
        .map(|(subs, valid, _, prov)| {
            let values = candidates
                .iter()
                .map(|c| Value::Cat(usize::from(subs.contains(&c.series))))
                .collect();
            CfExample::build(&query, Instance::new(values), *valid, *prov, &sub_schema, &sub_enc)
        })
        .collect();
    let selected = select_diverse(&as_examples, &config.selection);
    if selected.is_empty() {
        return fallback_report(x, desired_class, data, model, predicted);
    }
    let diversity = pairwise_diversity(&selected, names.len());

    let examples = selected
        .iter()
        .map(|ex| {
            let substituted: Vec<usize> = ex
                .changed_columns
                .iter()
                .map(|&c| candidates[c].series)
                .collect();
            let series = materialize(x, &candidates, &substituted);
            let probs_out = model.predict_proba(&series)?;
            Ok(TsCfExample {
                sparsity: substituted.len(),
                substituted,
                valid: is_valid_multiclass(&probs_out, desired_class),
                desired_prob: probs_out[desired_class],
                provenance: ex.provenance,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(TsExplanationReport {
        predicted_class: predicted,
        desired_class,
        candidates: candidates
            .iter()
            .map(|c| (names[c.series].clone(), c.neighbor_count))
            .collect(),
        top_series,
        examples,
        diversity,
        fallback_used: false,
    })
}

/// Fall back to the nearest training sample predicted in the desired class:
/// substitute every differing series.
fn fallback_report(
    x: &SeriesSample,
    desired_class: usize,
    data: &SeriesDataset,
    model: &dyn SeriesClassifier,
    predicted: usize,
) -> Result<TsExplanationReport> {
    let mut best: Option<(f64, usize)> = None;
    for (i, sample) in data.samples.iter().enumerate() {
        if model.predict(&sample.series)? != desired_class {
            continue;
        }
        let d = sample_distance(&x.series, &sample.series);
        if best.map_or(true, |(bd, _)| d < bd) {
            best = Some((d, i));
        }
    }
    let Some((_, idx)) = best else {
        return Err(MaceError::TargetUnreachable(desired_class));
    };
    let neighbor = &data.samples[idx];
    let substituted: Vec<usize> = (0..x.series.len())
        .filter(|&j| series_differ(&x.series[j], &neighbor.series[j]))
        .collect();
    let probs = model.predict_proba(&neighbor.series)?;
    Ok(TsExplanationReport {
        predicted_class: predicted,
        desired_class,
        candidates: vec![],
        top_series: vec![],
        examples: vec![TsCfExample {
            sparsity: substituted.len(),
            substituted,
            valid: is_valid_multiclass(&probs, desired_class),
            desired_prob: probs[desired_class],
            provenance: Provenance::FallbackNn,
        }],
        diversity: None,
        fallback_used: true,
    })
}

/// Load a series dataset from the wide format: a data file with header
/// `sample_id,series_name,t0,t1,...` (one row per sample x series) and a
/// label file with header `sample_id,label`.
pub fn load_series_dataset(data_path: &Path, label_path: &Path) -> Result<SeriesDataset> {
    let mut reader = csv::Reader::from_path(data_path)?;
    let mut names: Vec<String> = Vec::new();
    let mut by_sample: BTreeMap<String, BTreeMap<String, Vec<f64>>> = BTreeMap::new();
    let mut length: Option<usize> = None;
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record?;
        if record.len() < 3 {
            return Err(MaceError::Row { line, message: "need sample_id, series_name, values".into() });
        }
        let sample_id = record[0].to_string();
        let series_name = record[1].to_string();
        let values: Vec<f64> = record
            .iter()
            .skip(2)
            .map(|v| {
                v.trim().parse().map_err(|_| MaceError::Row {
                    line,
                    message: format!("cannot parse {v:?} as a number"),
                })
            })
            .collect::<Result<_>>()?;
        match length {
            None => length = Some(values.len()),
            Some(l) if l != values.len() => {
                return Err(MaceError::Row { line, message: "inconsistent series length".into() })
            }
            _ => {}
        }
        if !names.contains(&series_name) {
            names.push(series_name.clone());
        }
        by_sample.entry(sample_id).or_default().insert(series_name, values);
    }

    let mut label_reader = csv::Reader::from_path(label_path)?;
    let mut labels: BTreeMap<String, usize> = BTreeMap::new();
    for record in label_reader.records() {
        let record = record?;
        labels.insert(
            record[0].to_string(),
            record[1].trim().parse().map_err(|_| MaceError::Schema("bad label".into()))?,
        );
    }

    let mut samples = Vec::new();
    for (sample_id, series_map) in by_sample {
        let label = *labels
            .get(&sample_id)
            .ok_or_else(|| MaceError::Schema(format!("no label for sample {sample_id:?}")))?;
        let series = names
            .iter()
            .map(|n| {
                series_map
                    .get(n)
                    .cloned()
                    .ok_or_else(|| MaceError::Schema(format!("sample {sample_id:?} missing series {n:?}")))
            })
            .collect::<Result<_>>()?;
        samples.push(SeriesSample { series, label });
    }
    let ds = SeriesDataset {
        schema: SeriesSchema { names, length: length.unwrap_or(0) },
        samples,
    };
    ds.validate()?;
    Ok(ds)
}

/// Inverse of [`load_series_dataset`].
pub fn save_series_dataset(ds: &SeriesDataset, data_path: &Path, label_path: &Path) -> Result<()> {
    let mut data = std::fs::File::create(data_path)?;
    write!(data, "sample_id,series_name")?;
    for t in 0..ds.schema.length {
        write!(data, ",t{t}")?;
    }
    writeln!(data)?;
    for (i, sample) in ds.samples.iter().enumerate() {
        for (name, seq) in ds.schema.names.iter().zip(&sample.series) {
            write!(data, "s{i},{name}")?;
            for v in seq {
                write!(data, ",{v}")?;
            }
            writeln!(data)?;
        }
    }
    let mut labels = std::fs::File::create(label_path)?;
    writeln!(labels, "sample_id,label")?;
    for (i, sample) in ds.samples.iter().enumerate() {
        writeln!(labels, "s{i},{}", sample.label)?;
    }
    Ok(())
}
