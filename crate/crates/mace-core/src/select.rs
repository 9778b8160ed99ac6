//! Candidate feature selection: per-class kNN indices over encoded training
//! data and extraction of the candidate columns and values for a query.
//!
//! The index is partitioned by *predicted* label, so every indexed
//! target-class point is itself a valid counterfactual; the pipeline fallback
//! relies on this.

use serde::{Deserialize, Serialize};

use crate::error::{MaceError, Result};
use crate::model::{Classifier, TargetSpec};
use crate::tabular::{encode_for_knn, euclidean, ColumnKind, Dataset, EncoderState, Instance, Schema, Value};

/// One candidate value for a column: a category id, or a continuous bin with
/// its representative training value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CandidateValue {
    Cat(usize),
    ConBin { bin: usize, representative: f64 },
}

impl CandidateValue {
    /// Key used for counting: category id or bin index.
    pub fn key(&self) -> usize {
        match self {
            CandidateValue::Cat(id) => *id,
            CandidateValue::ConBin { bin, .. } => *bin,
        }
    }

    /// The raw value substituted into an instance.
    pub fn to_value(self) -> Value {
        match self {
            CandidateValue::Cat(id) => Value::Cat(id),
            CandidateValue::ConBin { representative, .. } => Value::Con(representative),
        }
    }
}

/// One selected column with its neighbor-difference count and its candidate
/// values ordered by descending count.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CandidateColumn {
    pub column: usize,
    pub col_count: usize,
    /// (value, val_count), descending by count, ties by ascending value key.
    pub values: Vec<(CandidateValue, usize)>,
}

/// The per-query search space: selected columns ordered by descending
/// col_count, each with at most `m` values.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CandidateFeatures {
    pub columns: Vec<CandidateColumn>,
}

impl CandidateFeatures {
    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    /// Number of candidate values per column, in column order.
    pub fn value_counts(&self) -> Vec<usize> {
        self.columns.iter().map(|c| c.values.len()).collect()
    }
}

struct ClassBucket {
    rows: Vec<Instance>,
    vectors: Vec<Vec<f64>>,
    /// Row indices in the source dataset.
    sources: Vec<usize>,
}

/// Per-predicted-class brute-force kNN index over `encode_for_knn` vectors.
pub struct ClassIndex {
    buckets: Vec<ClassBucket>,
}

impl ClassIndex {
    pub fn class_size(&self, class: usize) -> usize {
        self.buckets.get(class).map_or(0, |b| b.rows.len())
    }

    pub fn class_count(&self) -> usize {
        self.buckets.len()
    }

    /// Indices (into the class bucket) of the k nearest neighbors, ties
    /// broken by insertion order.
    fn knn(&self, class: usize, query: &[f64], k: usize) -> Vec<usize> {
        let bucket = &self.buckets[class];
        let mut order: Vec<usize> = (0..bucket.vectors.len()).collect();
        let dists: Vec<f64> = bucket.vectors.iter().map(|v| euclidean(v, query)).collect();
        order.sort_by(|&a, &b| {
            dists[a].partial_cmp(&dists[b]).unwrap().then(a.cmp(&b))
        });
        order.truncate(k);
        order
    }

    /// Nearest neighbor in a class, as a (dataset row index, instance) pair.
    pub fn nearest(&self, class: usize, query: &[f64]) -> Option<(usize, &Instance)> {
        let bucket = self.buckets.get(class)?;
        let best = self.knn(class, query, 1).into_iter().next()?;
        Some((bucket.sources[best], &bucket.rows[best]))
    }
}

/// Score every training row with the model and place it in the index of its
/// argmax class.
pub fn build_indices(
    dataset: &Dataset,
    model: &dyn Classifier,
    enc: &EncoderState,
) -> Result<ClassIndex> {
    let mut buckets: Vec<ClassBucket> = (0..model.class_count())
        .map(|_| ClassBucket { rows: Vec::new(), vectors: Vec::new(), sources: Vec::new() })
        .collect();
    for (i, row) in dataset.rows.iter().enumerate() {
        let class = model.predict(row)?;
        let bucket = &mut buckets[class];
        bucket.vectors.push(encode_for_knn(row, &dataset.schema, enc));
        bucket.rows.push(row.clone());
        bucket.sources.push(i);
    }
    Ok(ClassIndex { buckets })
}

/// Does `x` differ from `z` at column `c`, at bin granularity for continuous
/// columns?
fn differs_at(
    x: &Instance,
    z: &Instance,
    c: usize,
    schema: &Schema,
    enc: &EncoderState,
) -> bool {
    match (x.values[c], z.values[c], schema.column(c).kind) {
        (Value::Cat(a), Value::Cat(b), ColumnKind::Categorical) => a != b,
        (Value::Con(a), Value::Con(b), ColumnKind::Continuous) => {
            let ce = enc.continuous[c].as_ref().unwrap();
            ce.bin_index(a) != ce.bin_index(b)
        }
        _ => panic!("instances do not conform to schema"),
    }
}

fn candidate_value(z: &Instance, c: usize, schema: &Schema, enc: &EncoderState) -> CandidateValue {
    match (z.values[c], schema.column(c).kind) {
        (Value::Cat(id), ColumnKind::Categorical) => CandidateValue::Cat(id),
        (Value::Con(v), ColumnKind::Continuous) => {
            let ce = enc.continuous[c].as_ref().unwrap();
            let bin = ce.bin_index(v);
            CandidateValue::ConBin { bin, representative: ce.representatives[bin] }
        }
        _ => panic!("instance does not conform to schema"),
    }
}

/// Run the neighbor-count candidate search: find the K nearest target-class
/// neighbors, count differing columns and values, and keep the top-s columns
/// with the top-m values each. Columns that never differ are never returned.
#[allow(clippy::too_many_arguments)]
pub fn select_candidates(
    x: &Instance,
    target: TargetSpec,
    index: &ClassIndex,
    dataset: &Dataset,
    enc: &EncoderState,
    k_neighbors: usize,
    s: usize,
    m: usize,
    actionable_only: bool,
) -> Result<CandidateFeatures> {
    let schema = &dataset.schema;
    if index.class_size(target.target_class) == 0 {
        return Err(MaceError::TargetUnreachable(target.target_class));
    }
    if k_neighbors == 0 {
        return Err(MaceError::Config("K must be at least 1".into()));
    }
    // K larger than the class is capped, not an error
    let query = encode_for_knn(x, schema, enc);
    let neighbor_ids = index.knn(target.target_class, &query, k_neighbors);
    let bucket = &index.buckets[target.target_class];

    let mut columns = Vec::new();
    for c in 0..schema.len() {
        if actionable_only && !schema.column(c).actionable {
            continue;
        }
        let mut col_count = 0;
        let mut val_counts: Vec<(CandidateValue, usize)> = Vec::new();
        for &ni in &neighbor_ids {
            let z = &bucket.rows[ni];
            if differs_at(x, z, c, schema, enc) {
                col_count += 1;
                let v = candidate_value(z, c, schema, enc);
                match val_counts.iter_mut().find(|(w, _)| w.key() == v.key()) {
                    Some((_, n)) => *n += 1,
                    None => val_counts.push((v, 1)),
                }
            }
        }
        if col_count == 0 {
            continue;
        }
        // descending by count, ties by ascending value key
        val_counts.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.key().cmp(&b.0.key())));
        val_counts.truncate(m);
        columns.push(CandidateColumn { column: c, col_count, values: val_counts });
    }

    // descending by col_count, ties by ascending column index
    columns.sort_by(|a, b| b.col_count.cmp(&a.col_count).then(a.column.cmp(&b.column)));
    columns.truncate(s);
    Ok(CandidateFeatures { columns })
}

/// Filter candidates to a user-allowed column set. The returned flag hints
/// that the caller should rebuild the index restricted to those columns.
pub fn restrict_actionable(
    candidates: &CandidateFeatures,
    allowed: &[usize],
) -> (CandidateFeatures, bool) {
    let columns: Vec<CandidateColumn> = candidates
        .columns
        .iter()
        .filter(|c| allowed.contains(&c.column))
        .cloned()
        .collect();
    let narrowed = columns.len() < candidates.columns.len();
    (CandidateFeatures { columns }, narrowed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ConstantModel;
    use crate::tabular::{fit_encoders, Column, Schema};

    /// Classifier: label equals the category id of column 0 (two categories).
    struct ColZeroModel;

    impl Classifier for ColZeroModel {
        fn class_count(&self) -> usize {
            2
        }

        fn predict_proba(&self, x: &Instance) -> Result<Vec<f64>> {
            Ok(match x.values[0] {
                Value::Cat(0) => vec![0.9, 0.1],
                _ => vec![0.1, 0.9],
            })
        }
    }

    fn two_cat_schema() -> Schema {
        Schema::new(vec![
            Column {
                name: "a".into(),
                kind: ColumnKind::Categorical,
                categories: vec!["0".into(), "1".into(), "2".into()],
                actionable: true,
            },
            Column {
                name: "b".into(),
                kind: ColumnKind::Categorical,
                categories: vec!["0".into(), "1".into(), "2".into()],
                actionable: true,
            },
        ])
        .unwrap()
    }

    fn make_dataset(rows: Vec<(usize, usize)>) -> Dataset {
        let schema = two_cat_schema();
        let n = rows.len();
        let rows = rows
            .into_iter()
            .map(|(a, b)| Instance::new(vec![Value::Cat(a), Value::Cat(b)]))
            .collect();
        Dataset::new(schema, rows, vec![0; n]).unwrap()
    }

    #[test]
    fn index_sizes_match_predicted_split() {
        let ds = make_dataset(vec![(0, 0), (0, 1), (1, 0), (1, 1), (2, 2), (0, 2), (1, 2), (2, 0), (0, 0), (1, 1)]);
        let enc = fit_encoders(&ds, 2).unwrap();
        let model = ColZeroModel;
        let index = build_indices(&ds, &model, &enc).unwrap();
        // direct scan oracle
        let zeros = ds.rows.iter().filter(|r| r.values[0] == Value::Cat(0)).count();
        assert_eq!(index.class_size(0), zeros);
        assert_eq!(index.class_size(1), ds.rows.len() - zeros);
    }

    #[test]
    fn constant_model_puts_everything_in_one_class() {
        let ds = make_dataset(vec![(0, 0), (1, 1), (2, 2)]);
        let enc = fit_encoders(&ds, 2).unwrap();
        let model = ConstantModel { probs: vec![0.9, 0.1] };
        let index = build_indices(&ds, &model, &enc).unwrap();
        assert_eq!(index.class_size(0), 3);
        assert_eq!(index.class_size(1), 0);
    }

    #[test]
    fn training_row_is_its_own_nearest_neighbor() {
        let ds = make_dataset(vec![(0, 0), (1, 1), (2, 2), (1, 0)]);
        let enc = fit_encoders(&ds, 2).unwrap();
        let model = ColZeroModel;
        let index = build_indices(&ds, &model, &enc).unwrap();
        for row in &ds.rows {
            let class = model.predict(row).unwrap();
            let q = encode_for_knn(row, &ds.schema, &enc);
            let (_, nn) = index.nearest(class, &q).unwrap();
            assert_eq!(nn, row);
        }
    }

    /// Hand-simulated Algorithm 1 counts from the worked example:
    /// x=(a=0,b=0), neighbors {(1,0),(1,1),(2,1)}, K=3, s=2, m=2.
    #[test]
    fn worked_example_counts() {
        let ds = make_dataset(vec![(0, 0), (1, 0), (1, 1), (2, 1)]);
        let enc = fit_encoders(&ds, 2).unwrap();
        // model: row (0,0) is class 0, the rest class 1
        struct M;
        impl Classifier for M {
            fn class_count(&self) -> usize {
                2
            }
            fn predict_proba(&self, x: &Instance) -> Result<Vec<f64>> {
                Ok(if x.values == vec![Value::Cat(0), Value::Cat(0)] {
                    vec![0.9, 0.1]
                } else {
                    vec![0.1, 0.9]
                })
            }
        }
        let index = build_indices(&ds, &M, &enc).unwrap();
        let x = &ds.rows[0];
        let cands = select_candidates(
            x,
            TargetSpec::flip(0),
            &index,
            &ds,
            &enc,
            3,
            2,
            2,
            true,
        )
        .unwrap();
        assert_eq!(cands.len(), 2);
        assert_eq!(cands.columns[0].column, 0);
        assert_eq!(cands.columns[0].col_count, 3);
        assert_eq!(cands.columns[1].column, 1);
        assert_eq!(cands.columns[1].col_count, 2);
        assert_eq!(
            cands.columns[0].values,
            vec![(CandidateValue::Cat(1), 2), (CandidateValue::Cat(2), 1)]
        );
        assert_eq!(cands.columns[1].values, vec![(CandidateValue::Cat(1), 2)]);
    }

    #[test]
    fn identical_neighbors_give_empty_candidates() {
        let ds = make_dataset(vec![(0, 0), (0, 0), (0, 0)]);
        let enc = fit_encoders(&ds, 2).unwrap();
        let model = ConstantModel { probs: vec![0.1, 0.9] };
        let index = build_indices(&ds, &model, &enc).unwrap();
        let cands = select_candidates(
            &ds.rows[0],
            TargetSpec::flip(0),
            &index,
            &ds,
            &enc,
            3,
            2,
            2,
            true,
        )
        .unwrap();
        assert!(cands.is_empty());
    }

    #[test]
    fn single_neighbor_single_difference() {
        let ds = make_dataset(vec![(0, 0), (0, 2)]);
        let enc = fit_encoders(&ds, 2).unwrap();
        struct M;
        impl Classifier for M {
            fn class_count(&self) -> usize {
                2
            }
            fn predict_proba(&self, x: &Instance) -> Result<Vec<f64>> {
                Ok(if x.values[1] == Value::Cat(2) { vec![0.1, 0.9] } else { vec![0.9, 0.1] })
            }
        }
        let index = build_indices(&ds, &M, &enc).unwrap();
        let cands = select_candidates(
            &ds.rows[0],
            TargetSpec::flip(0),
            &index,
            &ds,
            &enc,
            1,
            5,
            5,
            true,
        )
        .unwrap();
        assert_eq!(cands.len(), 1);
        assert_eq!(cands.columns[0].column, 1);
        assert_eq!(cands.columns[0].values, vec![(CandidateValue::Cat(2), 1)]);
    }

    #[test]
    fn empty_target_class_is_unreachable() {
        let ds = make_dataset(vec![(0, 0), (0, 1)]);
        let enc = fit_encoders(&ds, 2).unwrap();
        let model = ConstantModel { probs: vec![0.9, 0.1] };
        let index = build_indices(&ds, &model, &enc).unwrap();
        let err = select_candidates(
            &ds.rows[0],
            TargetSpec::flip(0),
            &index,
            &ds,
            &enc,
            3,
            2,
            2,
            true,
        )
        .unwrap_err();
        assert!(matches!(err, MaceError::TargetUnreachable(1)));
    }

    #[test]
    fn restrict_actionable_filters_and_hints() {
        let cands = CandidateFeatures {
            columns: vec![
                CandidateColumn { column: 0, col_count: 3, values: vec![(CandidateValue::Cat(1), 3)] },
                CandidateColumn { column: 1, col_count: 2, values: vec![(CandidateValue::Cat(2), 2)] },
            ],
        };
        let (kept, hint) = restrict_actionable(&cands, &[1]);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept.columns[0].column, 1);
        assert!(hint);

        let (all, hint) = restrict_actionable(&cands, &[0, 1]);
        assert_eq!(all.len(), 2);
        assert!(!hint);

        let (none, hint) = restrict_actionable(&cands, &[7]);
        assert!(none.is_empty());
        assert!(hint);
    }

    #[test]
    fn no_candidate_value_equals_query_value() {
        // mixed schema with a continuous column
        let schema = Schema::new(vec![
            Column {
                name: "cat".into(),
                kind: ColumnKind::Categorical,
                categories: vec!["p".into(), "q".into()],
                actionable: true,
            },
            Column { name: "con".into(), kind: ColumnKind::Continuous, categories: vec![], actionable: true },
        ])
        .unwrap();
        let rows: Vec<Instance> = (0..20)
            .map(|i| Instance::new(vec![Value::Cat(i % 2), Value::Con(i as f64)]))
            .collect();
        let ds = Dataset::new(schema, rows, vec![0; 20]).unwrap();
        let enc = fit_encoders(&ds, 4).unwrap();
        struct M;
        impl Classifier for M {
            fn class_count(&self) -> usize {
                2
            }
            fn predict_proba(&self, x: &Instance) -> Result<Vec<f64>> {
                Ok(if x.values[1].as_con() >= 10.0 { vec![0.1, 0.9] } else { vec![0.9, 0.1] })
            }
        }
        let index = build_indices(&ds, &M, &enc).unwrap();
        let x = &ds.rows[0];
        let cands = select_candidates(&x.clone(), TargetSpec::flip(0), &index, &ds, &enc, 8, 5, 3, true).unwrap();
        assert!(!cands.is_empty());
        for col in &cands.columns {
            let own = candidate_value(x, col.column, &ds.schema, &enc);
            for (v, _) in &col.values {
                assert_ne!(v.key(), own.key());
            }
        }
    }
}
