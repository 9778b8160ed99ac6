//! Dataset representation, schema, encoders and training-data statistics.
//!
//! Categorical columns are one-hot encoded for neighbor search; continuous
//! columns are discretized into quantile bins and ordinally encoded so that
//! closeness between bins is preserved.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{MaceError, Result};

/// Kind of a feature column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Categorical,
    Continuous,
}

/// A single column declaration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub kind: ColumnKind,
    /// Declared category values, in a fixed order. Empty for continuous columns.
    #[serde(default)]
    pub categories: Vec<String>,
    /// Whether the explainer is allowed to change this column.
    #[serde(default = "default_true")]
    pub actionable: bool,
}

fn default_true() -> bool {
    true
}

/// Ordered column declarations; the ground truth for all encoders.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Schema {
    columns: Vec<Column>,
}

impl Schema {
    pub fn new(columns: Vec<Column>) -> Result<Self> {
        if columns.is_empty() {
            return Err(MaceError::Schema("schema has no columns".into()));
        }
        let mut seen = HashMap::new();
        for (i, col) in columns.iter().enumerate() {
            if col.name.is_empty() {
                return Err(MaceError::Schema(format!("column {i} has an empty name")));
            }
            if let Some(prev) = seen.insert(col.name.clone(), i) {
                return Err(MaceError::Schema(format!(
                    "duplicate column name {:?} (positions {prev} and {i})",
                    col.name
                )));
            }
            match col.kind {
                ColumnKind::Categorical => {
                    if col.categories.len() < 2 {
                        return Err(MaceError::Schema(format!(
                            "categorical column {:?} declares {} categories, need at least 2",
                            col.name,
                            col.categories.len()
                        )));
                    }
                }
                ColumnKind::Continuous => {
                    if !col.categories.is_empty() {
                        return Err(MaceError::Schema(format!(
                            "continuous column {:?} must not declare categories",
                            col.name
                        )));
                    }
                }
            }
        }
        if !columns.iter().any(|c| c.actionable) {
            return Err(MaceError::Schema("no actionable columns".into()));
        }
        Ok(Schema { columns })
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn column(&self, idx: usize) -> &Column {
        &self.columns[idx]
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    /// Index of a declared category value within a categorical column.
    pub fn category_index(&self, col: usize, value: &str) -> Option<usize> {
        self.columns[col].categories.iter().position(|c| c == value)
    }
}

/// A per-column tagged value: category id for categorical, real for continuous.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Cat(usize),
    Con(f64),
}

impl Value {
    pub fn as_cat(&self) -> usize {
        match self {
            Value::Cat(c) => *c,
            Value::Con(_) => panic!("expected categorical value"),
        }
    }

    pub fn as_con(&self) -> f64 {
        match self {
            Value::Con(v) => *v,
            Value::Cat(_) => panic!("expected continuous value"),
        }
    }
}

/// One feature vector; length always equals the schema column count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub values: Vec<Value>,
}

impl Instance {
    pub fn new(values: Vec<Value>) -> Self {
        Instance { values }
    }

    pub fn conforms(&self, schema: &Schema) -> bool {
        self.values.len() == schema.len()
            && self.values.iter().zip(schema.columns()).all(|(v, c)| match (v, c.kind) {
                (Value::Cat(id), ColumnKind::Categorical) => *id < c.categories.len(),
                (Value::Con(x), ColumnKind::Continuous) => x.is_finite(),
                _ => false,
            })
    }

    /// Human-readable rendering of one column's value.
    pub fn display_value(&self, schema: &Schema, col: usize) -> String {
        match self.values[col] {
            Value::Cat(id) => schema.column(col).categories[id].clone(),
            Value::Con(x) => format!("{x}"),
        }
    }
}

/// Training rows plus ground-truth labels (labels are only used for
/// training the demo models, never by the explainer).
#[derive(Debug, Clone)]
pub struct Dataset {
    pub schema: Schema,
    pub rows: Vec<Instance>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn new(schema: Schema, rows: Vec<Instance>, labels: Vec<usize>) -> Result<Self> {
        if rows.is_empty() {
            return Err(MaceError::Schema("dataset has no rows".into()));
        }
        if rows.len() != labels.len() {
            return Err(MaceError::Schema("row/label count mismatch".into()));
        }
        for (i, r) in rows.iter().enumerate() {
            if !r.conforms(&schema) {
                return Err(MaceError::Row {
                    line: i + 2,
                    message: "row does not conform to schema".into(),
                });
            }
        }
        Ok(Dataset { schema, rows, labels })
    }

    pub fn class_count(&self) -> usize {
        self.labels.iter().copied().max().map_or(0, |m| m + 1)
    }
}

/// Load a CSV file with a header row; columns are matched by name against the
/// schema, the label column by `label_column`. Categories are declared in the
/// schema, never inferred, so an unknown category is a row error.
pub fn load_dataset(path: &Path, schema: &Schema, label_column: &str) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    let mut col_pos = Vec::with_capacity(schema.len());
    for col in schema.columns() {
        let pos = headers
            .iter()
            .position(|h| h == col.name)
            .ok_or_else(|| MaceError::Schema(format!("missing column {:?} in header", col.name)))?;
        col_pos.push(pos);
    }
    let label_pos = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| MaceError::Schema(format!("missing label column {:?} in header", label_column)))?;

    let mut rows = Vec::new();
    let mut raw_labels = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2; // header is line 1
        let record = record?;
        let mut values = Vec::with_capacity(schema.len());
        for (col, &pos) in schema.columns().iter().zip(&col_pos) {
            let field = record.get(pos).ok_or_else(|| MaceError::Row {
                line,
                message: format!("missing field for column {:?}", col.name),
            })?;
            let value = match col.kind {
                ColumnKind::Categorical => {
                    let id = col.categories.iter().position(|c| c == field).ok_or_else(|| {
                        MaceError::Row {
                            line,
                            message: format!(
                                "unknown category {field:?} for column {:?}",
                                col.name
                            ),
                        }
                    })?;
                    Value::Cat(id)
                }
                ColumnKind::Continuous => {
                    let x: f64 = field.parse().map_err(|_| MaceError::Row {
                        line,
                        message: format!(
                            "cannot parse {field:?} as a number for column {:?}",
                            col.name
                        ),
                    })?;
                    Value::Con(x)
                }
            };
            values.push(value);
        }
        let label = record.get(label_pos).ok_or_else(|| MaceError::Row {
            line,
            message: "missing label field".into(),
        })?;
        rows.push(Instance::new(values));
        raw_labels.push(label.to_string());
    }

    let labels = parse_labels(&raw_labels)?;
    Dataset::new(schema.clone(), rows, labels)
}

/// Labels that all parse as non-negative integers are used directly;
/// otherwise distinct label strings are indexed in sorted order.
fn parse_labels(raw: &[String]) -> Result<Vec<usize>> {
    if raw.iter().all(|s| s.parse::<usize>().is_ok()) {
        return Ok(raw.iter().map(|s| s.parse().unwrap()).collect());
    }
    let mut distinct: Vec<&String> = raw.iter().collect();
    distinct.sort();
    distinct.dedup();
    Ok(raw
        .iter()
        .map(|s| distinct.binary_search(&s).unwrap())
        .collect())
}

/// Per-continuous-column encoder: quantile bin edges, within-bin medians as
/// representatives, and the min/max/median statistics the later stages need.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContinuousEncoder {
    /// Strictly ascending; bin i covers [edges[i], edges[i+1]).
    pub edges: Vec<f64>,
    /// One representative per bin, the median of the training values in it.
    pub representatives: Vec<f64>,
    pub min: f64,
    pub max: f64,
    pub median: f64,
    /// Set when the training column was constant (single degenerate bin).
    pub constant: bool,
}

impl ContinuousEncoder {
    pub fn bin_count(&self) -> usize {
        self.representatives.len()
    }

    /// Bin index of a value; monotone non-decreasing in the value.
    pub fn bin_index(&self, value: f64) -> usize {
        if self.bin_count() <= 1 {
            return 0;
        }
        // interior edges split the line into bin_count intervals
        let interior = &self.edges[1..self.edges.len() - 1];
        interior.iter().filter(|&&e| value >= e).count()
    }
}

/// Fitted encoder state for a schema; immutable after construction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EncoderState {
    /// Parallel to schema columns: `Some` for continuous columns.
    pub continuous: Vec<Option<ContinuousEncoder>>,
    /// Parallel to schema columns: category -> id for categorical columns.
    pub category_maps: Vec<Option<HashMap<String, usize>>>,
    /// Length of an `encode_for_knn` vector.
    pub knn_width: usize,
}

/// Fit quantile-bin encoders and per-column statistics over the training data.
///
/// Equal-frequency bins; duplicate quantile edges are merged, so a column may
/// end up with fewer than `k_bins` bins. A constant column collapses to one
/// bin and is flagged.
pub fn fit_encoders(dataset: &Dataset, k_bins: usize) -> Result<EncoderState> {
    if k_bins < 2 {
        return Err(MaceError::Config("k_bins must be at least 2".into()));
    }
    let schema = &dataset.schema;
    let mut continuous = Vec::with_capacity(schema.len());
    let mut category_maps = Vec::with_capacity(schema.len());
    let mut knn_width = 0;

    for (c, col) in schema.columns().iter().enumerate() {
        match col.kind {
            ColumnKind::Categorical => {
                let map = col
                    .categories
                    .iter()
                    .enumerate()
                    .map(|(i, name)| (name.clone(), i))
                    .collect();
                category_maps.push(Some(map));
                continuous.push(None);
                knn_width += col.categories.len();
            }
            ColumnKind::Continuous => {
                let mut values: Vec<f64> =
                    dataset.rows.iter().map(|r| r.values[c].as_con()).collect();
                values.sort_by(|a, b| a.partial_cmp(b).unwrap());
                continuous.push(Some(fit_continuous(&values, k_bins)));
                category_maps.push(None);
                knn_width += 1;
            }
        }
    }

    Ok(EncoderState { continuous, category_maps, knn_width })
}

fn fit_continuous(sorted: &[f64], k_bins: usize) -> ContinuousEncoder {
    let n = sorted.len();
    let min = sorted[0];
    let max = sorted[n - 1];
    let median = sorted_median(sorted);

    if min == max {
        return ContinuousEncoder {
            edges: vec![min, max],
            representatives: vec![min],
            min,
            max,
            median,
            constant: true,
        };
    }

    let mut edges = vec![min];
    for q in 1..k_bins {
        let idx = (q as f64 / k_bins as f64 * (n - 1) as f64).round() as usize;
        edges.push(sorted[idx]);
    }
    edges.push(max);
    edges.dedup();
    if edges.len() < 2 {
        edges = vec![min, max];
    }

    let bins = edges.len() - 1;
    let mut per_bin: Vec<Vec<f64>> = vec![Vec::new(); bins];
    let interior = &edges[1..edges.len() - 1];
    for &v in sorted {
        let b = interior.iter().filter(|&&e| v >= e).count();
        per_bin[b].push(v);
    }
    let representatives = per_bin
        .iter()
        .enumerate()
        .map(|(b, vs)| {
            if vs.is_empty() {
                // empty bin: fall back to the bin midpoint
                (edges[b] + edges[b + 1]) / 2.0
            } else {
                sorted_median(vs)
            }
        })
        .collect();

    ContinuousEncoder { edges, representatives, min, max, median, constant: false }
}

fn sorted_median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// Encode an instance for neighbor search: one-hot blocks for categorical
/// columns, the ordinal bin index for continuous columns.
pub fn encode_for_knn(x: &Instance, schema: &Schema, enc: &EncoderState) -> Vec<f64> {
    let mut out = Vec::with_capacity(enc.knn_width);
    for (c, col) in schema.columns().iter().enumerate() {
        match (&x.values[c], col.kind) {
            (Value::Cat(id), ColumnKind::Categorical) => {
                for i in 0..col.categories.len() {
                    out.push(if i == *id { 1.0 } else { 0.0 });
                }
            }
            (Value::Con(v), ColumnKind::Continuous) => {
                let ce = enc.continuous[c].as_ref().expect("continuous encoder");
                out.push(ce.bin_index(*v) as f64);
            }
            _ => panic!("instance does not conform to schema"),
        }
    }
    out
}

/// Map continuous values affinely from [min, max] to [0, 1], clipping
/// out-of-range values. Categorical values pass through.
pub fn normalize_continuous(x: &Instance, schema: &Schema, enc: &EncoderState) -> Instance {
    transform_continuous(x, schema, enc, |v, ce| {
        if ce.max == ce.min {
            0.0
        } else {
            ((v - ce.min) / (ce.max - ce.min)).clamp(0.0, 1.0)
        }
    })
}

/// Inverse of [`normalize_continuous`] for in-range values.
pub fn denormalize_continuous(x: &Instance, schema: &Schema, enc: &EncoderState) -> Instance {
    transform_continuous(x, schema, enc, |v, ce| ce.min + v * (ce.max - ce.min))
}

fn transform_continuous(
    x: &Instance,
    schema: &Schema,
    enc: &EncoderState,
    f: impl Fn(f64, &ContinuousEncoder) -> f64,
) -> Instance {
    let values = x
        .values
        .iter()
        .enumerate()
        .map(|(c, v)| match (v, schema.column(c).kind) {
            (Value::Con(x), ColumnKind::Continuous) => {
                Value::Con(f(*x, enc.continuous[c].as_ref().unwrap()))
            }
            (v, _) => *v,
        })
        .collect();
    Instance::new(values)
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}
