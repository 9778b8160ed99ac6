//! Diverse example selection and the evaluation metrics
//! (validity, sparsity, proximity, diversity, per-feature change frequency).

use serde::{Deserialize, Serialize};

use crate::tabular::{ColumnKind, EncoderState, Instance, Schema, Value};

/// Where a counterfactual example came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    RlGreedy,
    RlSample,
    Gld,
    FallbackNn,
    BaselineGreedy,
}

/// A full counterfactual feature vector with its scores.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CfExample {
    pub instance: Instance,
    pub valid: bool,
    pub changed_columns: Vec<usize>,
    pub sparsity: usize,
    pub proximity: f64,
    pub provenance: Provenance,
}

/// Two values are the same change-wise; continuous values compare within a
/// tiny tolerance so fine-tuned coordinates that land back on the query count
/// as unchanged.
pub fn values_equal(a: Value, b: Value) -> bool {
    match (a, b) {
        (Value::Cat(x), Value::Cat(y)) => x == y,
        (Value::Con(x), Value::Con(y)) => (x - y).abs() <= 1e-12,
        _ => false,
    }
}

/// Columns where `x` and `cf` differ.
pub fn changed_columns(x: &Instance, cf: &Instance) -> Vec<usize> {
    x.values
        .iter()
        .zip(&cf.values)
        .enumerate()
        .filter(|(_, (a, b))| !values_equal(**a, **b))
        .map(|(c, _)| c)
        .collect()
}

impl CfExample {
    /// Build an example from a raw instance, computing the changed-column
    /// set, sparsity and proximity against the query.
    pub fn build(
        query: &Instance,
        instance: Instance,
        valid: bool,
        provenance: Provenance,
        schema: &Schema,
        enc: &EncoderState,
    ) -> Self {
        let changed = changed_columns(query, &instance);
        let prox = proximity(query, &instance, schema, enc);
        CfExample {
            instance,
            valid,
            sparsity: changed.len(),
            changed_columns: changed,
            proximity: prox,
            provenance,
        }
    }

    /// Fingerprint of the change set, used for deduplication.
    pub fn fingerprint(&self) -> Vec<(usize, String)> {
        self.changed_columns
            .iter()
            .map(|&c| {
                let v = match self.instance.values[c] {
                    Value::Cat(id) => format!("c{id}"),
                    Value::Con(x) => format!("n{x:.12}"),
                };
                (c, v)
            })
            .collect()
    }
}

/// Negated distance between query and counterfactual:
/// `-(number of categorical changes) - sum(|delta_con| / median)`,
/// over raw continuous units. A zero training median falls back to a small
/// divisor guard.
pub fn proximity(x: &Instance, cf: &Instance, schema: &Schema, enc: &EncoderState) -> f64 {
    let mut cat_changes = 0.0;
    let mut con_term = 0.0;
    for (c, col) in schema.columns().iter().enumerate() {
        match (x.values[c], cf.values[c], col.kind) {
            (Value::Cat(a), Value::Cat(b), ColumnKind::Categorical) => {
                if a != b {
                    cat_changes += 1.0;
                }
            }
            (Value::Con(a), Value::Con(b), ColumnKind::Continuous) => {
                let median = enc.continuous[c].as_ref().unwrap().median;
                let divisor = median.abs().max(1e-9);
                con_term += (b - a).abs() / divisor;
            }
            _ => panic!("instances do not conform to schema"),
        }
    }
    -cat_changes - con_term
}

/// Continuous columns whose training median is zero; their proximity terms
/// use the divisor guard and reports flag them.
pub fn zero_median_columns(schema: &Schema, enc: &EncoderState) -> Vec<usize> {
    schema
        .columns()
        .iter()
        .enumerate()
        .filter(|(c, col)| {
            col.kind == ColumnKind::Continuous
                && enc.continuous[*c].as_ref().unwrap().median == 0.0
        })
        .map(|(c, _)| c)
        .collect()
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionParams {
    /// Max appearances of any changed column across the selected examples.
    pub k_cap: usize,
    /// Number of examples to report.
    pub top_n: usize,
}

impl Default for SelectionParams {
    fn default() -> Self {
        SelectionParams { k_cap: 3, top_n: 3 }
    }
}

/// Greedy diverse selection: sort valid examples by descending proximity
/// (ties: ascending sparsity, then insertion order), then keep an example
/// only while every one of its changed columns is still under the cap.
pub fn select_diverse(examples: &[CfExample], params: &SelectionParams) -> Vec<CfExample> {
    let mut order: Vec<usize> = (0..examples.len()).filter(|&i| examples[i].valid).collect();
    order.sort_by(|&a, &b| {
        examples[b]
            .proximity
            .partial_cmp(&examples[a].proximity)
            .unwrap()
            .then(examples[a].sparsity.cmp(&examples[b].sparsity))
            .then(a.cmp(&b))
    });

    let mut counts: std::collections::HashMap<usize, usize> = std::collections::HashMap::new();
    let mut picked = Vec::new();
    for i in order {
        let ex = &examples[i];
        let blocked = ex
            .changed_columns
            .iter()
            .any(|c| counts.get(c).copied().unwrap_or(0) >= params.k_cap);
        if blocked {
            continue;
        }
        for &c in &ex.changed_columns {
            *counts.entry(c).or_insert(0) += 1;
        }
        picked.push(ex.clone());
        if picked.len() >= params.top_n {
            break;
        }
    }
    picked
}

/// Aggregated evaluation metrics over a batch of queries.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsSummary {
    /// Fraction of queries whose top example is valid.
    pub validity: f64,
    /// Mean changed-column count of top examples.
    pub sparsity: f64,
    /// Mean proximity of top examples.
    pub proximity: f64,
    /// Mean pairwise diversity over queries that returned >= 2 examples;
    /// absent when no query did.
    pub diversity: Option<f64>,
    /// Fraction of queries answered by the nearest-neighbor fallback.
    pub fallback_rate: f64,
    /// Fig-2a style statistic: fraction of queries whose top example changed
    /// each feature, indexed by column.
    pub feature_change_frequency: Vec<f64>,
    pub query_count: usize,
}

/// Pairwise diversity of one query's selected examples: mean over pairs of
/// the fraction of columns on which the pair differs.
pub fn pairwise_diversity(selected: &[CfExample], d: usize) -> Option<f64> {
    let k = selected.len();
    if k < 2 {
        return None;
    }
    let mut total = 0.0;
    for i in 0..k {
        for j in (i + 1)..k {
            let differing = selected[i]
                .instance
                .values
                .iter()
                .zip(&selected[j].instance.values)
                .filter(|(a, b)| !values_equal(**a, **b))
                .count();
            total += differing as f64 / d as f64;
        }
    }
    Some(2.0 * total / (k * (k - 1)) as f64)
}

/// Aggregate metrics over per-query selections.
pub fn evaluate_metrics(per_query: &[Vec<CfExample>], schema: &Schema) -> MetricsSummary {
    let d = schema.len();
    let n = per_query.len();
    let mut valid = 0usize;
    let mut sparsity_sum = 0.0;
    let mut proximity_sum = 0.0;
    let mut fallbacks = 0usize;
    let mut diversity_sum = 0.0;
    let mut diversity_n = 0usize;
    let mut change_freq = vec![0.0; d];

    for selected in per_query {
        let Some(top) = selected.first() else { continue };
        if top.valid {
            valid += 1;
        }
        if top.provenance == Provenance::FallbackNn {
            fallbacks += 1;
        }
        sparsity_sum += top.sparsity as f64;
        proximity_sum += top.proximity;
        for &c in &top.changed_columns {
            change_freq[c] += 1.0;
        }
        if let Some(div) = pairwise_diversity(selected, d) {
            diversity_sum += div;
            diversity_n += 1;
        }
    }

    let denom = n.max(1) as f64;
    MetricsSummary {
        validity: valid as f64 / denom,
        sparsity: sparsity_sum / denom,
        proximity: proximity_sum / denom,
        diversity: (diversity_n > 0).then(|| diversity_sum / diversity_n as f64),
        fallback_rate: fallbacks as f64 / denom,
        feature_change_frequency: change_freq.iter().map(|f| f / denom).collect(),
        query_count: n,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tabular::{fit_encoders, Column, Dataset};

    fn mixed_schema() -> Schema {
        Schema::new(vec![
            Column {
                name: "cat".into(),
                kind: ColumnKind::Categorical,
                categories: vec!["a".into(), "b".into(), "c".into()],
                actionable: true,
            },
            Column {
                name: "cat2".into(),
                kind: ColumnKind::Categorical,
                categories: vec!["a".into(), "b".into()],
                actionable: true,
            },
            Column { name: "con".into(), kind: ColumnKind::Continuous, categories: vec![], actionable: true },
        ])
        .unwrap()
    }

    fn encoder_with_median(median_source: &[f64]) -> (Schema, EncoderState) {
        let schema = mixed_schema();
        let rows: Vec<Instance> = median_source
            .iter()
            .map(|&v| Instance::new(vec![Value::Cat(0), Value::Cat(0), Value::Con(v)]))
            .collect();
        let n = rows.len();
        let ds = Dataset::new(schema.clone(), rows, vec![0; n]).unwrap();
        let enc = fit_encoders(&ds, 2).unwrap();
        (schema, enc)
    }

    #[test]
    fn proximity_of_identity_is_zero() {
        let (schema, enc) = encoder_with_median(&[5.0, 10.0, 15.0]);
        let x = Instance::new(vec![Value::Cat(0), Value::Cat(1), Value::Con(7.0)]);
        assert_eq!(proximity(&x, &x, &schema, &enc), 0.0);
    }

    #[test]
    fn two_categorical_changes_give_minus_two() {
        let (schema, enc) = encoder_with_median(&[5.0, 10.0, 15.0]);
        let x = Instance::new(vec![Value::Cat(0), Value::Cat(0), Value::Con(7.0)]);
        let cf = Instance::new(vec![Value::Cat(1), Value::Cat(1), Value::Con(7.0)]);
        assert_eq!(proximity(&x, &cf, &schema, &enc), -2.0);
    }

    #[test]
    fn continuous_change_scaled_by_median() {
        let (schema, enc) = encoder_with_median(&[5.0, 10.0, 15.0]); // median 10
        let x = Instance::new(vec![Value::Cat(0), Value::Cat(0), Value::Con(7.0)]);
        let cf = Instance::new(vec![Value::Cat(0), Value::Cat(0), Value::Con(12.0)]);
        assert!((proximity(&x, &cf, &schema, &enc) - (-0.5)).abs() < 1e-12);
    }

    #[test]
    fn zero_median_uses_divisor_guard_and_is_flagged() {
        let (schema, enc) = encoder_with_median(&[-1.0, 0.0, 1.0]); // median 0
        assert_eq!(zero_median_columns(&schema, &enc), vec![2]);
        let x = Instance::new(vec![Value::Cat(0), Value::Cat(0), Value::Con(0.0)]);
        let cf = Instance::new(vec![Value::Cat(0), Value::Cat(0), Value::Con(1e-9)]);
        let p = proximity(&x, &cf, &schema, &enc);
        assert!(p.is_finite());
        assert!((p - (-1.0)).abs() < 1e-9);
    }

    fn example(
        query: &Instance,
        schema: &Schema,
        enc: &EncoderState,
        values: Vec<Value>,
        valid: bool,
    ) -> CfExample {
        CfExample::build(query, Instance::new(values), valid, Provenance::RlSample, schema, enc)
    }

    #[test]
    fn cap_one_keeps_only_best_proximity() {
        // three examples all changing only the continuous column; hand-run of
        // the greedy pass keeps exactly the closest one
        let (schema, enc) = encoder_with_median(&[5.0, 10.0, 15.0]);
        let x = Instance::new(vec![Value::Cat(0), Value::Cat(0), Value::Con(5.0)]);
        let ex: Vec<CfExample> = [9.0, 7.0, 12.0]
            .iter()
            .map(|&v| example(&x, &schema, &enc, vec![Value::Cat(0), Value::Cat(0), Value::Con(v)], true))
            .collect();
        let picked = select_diverse(&ex, &SelectionParams { k_cap: 1, top_n: 5 });
        assert_eq!(picked.len(), 1);
        assert_eq!(picked[0].instance.values[2], Value::Con(7.0));
    }

    #[test]
    fn disjoint_columns_all_kept_in_proximity_order() {
        let (schema, enc) = encoder_with_median(&[5.0, 10.0, 15.0]);
        let x = Instance::new(vec![Value::Cat(0), Value::Cat(0), Value::Con(10.0)]);
        let ex = vec![
            example(&x, &schema, &enc, vec![Value::Cat(1), Value::Cat(0), Value::Con(10.0)], true),
            example(&x, &schema, &enc, vec![Value::Cat(0), Value::Cat(1), Value::Con(10.0)], true),
            example(&x, &schema, &enc, vec![Value::Cat(0), Value::Cat(0), Value::Con(12.0)], true),
        ];
        let picked = select_diverse(&ex, &SelectionParams { k_cap: 1, top_n: 5 });
        assert_eq!(picked.len(), 3);
        let prox: Vec<f64> = picked.iter().map(|e| e.proximity).collect();
        assert!(prox.windows(2).all(|w| w[0] >= w[1]));
        // the continuous change of 2/15 is the closest
        assert_eq!(picked[0].instance.values[2], Value::Con(12.0));
    }

    #[test]
    fn degenerate_query_itself_ranks_first() {
        let (schema, enc) = encoder_with_median(&[5.0, 10.0, 15.0]);
        let x = Instance::new(vec![Value::Cat(0), Value::Cat(0), Value::Con(10.0)]);
        let ex = vec![
            example(&x, &schema, &enc, x.values.clone(), true),
            example(&x, &schema, &enc, vec![Value::Cat(1), Value::Cat(0), Value::Con(10.0)], true),
        ];
        let picked = select_diverse(&ex, &SelectionParams::default());
        assert_eq!(picked[0].proximity, 0.0);
        assert_eq!(picked[0].sparsity, 0);
    }

    #[test]
    fn invalid_examples_are_dropped() {
        let (schema, enc) = encoder_with_median(&[5.0, 10.0, 15.0]);
        let x = Instance::new(vec![Value::Cat(0), Value::Cat(0), Value::Con(10.0)]);
        let ex = vec![example(&x, &schema, &enc, vec![Value::Cat(1), Value::Cat(0), Value::Con(10.0)], false)];
        assert!(select_diverse(&ex, &SelectionParams::default()).is_empty());
    }

    #[test]
    fn diversity_of_fully_differing_pair_is_one() {
        let (schema, enc) = encoder_with_median(&[5.0, 10.0, 15.0]);
        let x = Instance::new(vec![Value::Cat(0), Value::Cat(0), Value::Con(10.0)]);
        let a = example(&x, &schema, &enc, vec![Value::Cat(1), Value::Cat(1), Value::Con(12.0)], true);
        let b = example(&x, &schema, &enc, vec![Value::Cat(2), Value::Cat(0), Value::Con(14.0)], true);
        let div = pairwise_diversity(&[a, b], schema.len()).unwrap();
        assert!((div - 1.0).abs() < 1e-12);
    }

    #[test]
    fn diversity_absent_for_single_example() {
        let (schema, enc) = encoder_with_median(&[5.0, 10.0, 15.0]);
        let x = Instance::new(vec![Value::Cat(0), Value::Cat(0), Value::Con(10.0)]);
        let a = example(&x, &schema, &enc, vec![Value::Cat(1), Value::Cat(0), Value::Con(10.0)], true);
        assert!(pairwise_diversity(&[a], schema.len()).is_none());
        let summary = evaluate_metrics(
            &[vec![example(
                &x,
                &schema,
                &enc,
                vec![Value::Cat(1), Value::Cat(0), Value::Con(10.0)],
                true,
            )]],
            &schema,
        );
        assert!(summary.diversity.is_none());
        assert_eq!(summary.validity, 1.0);
    }

    #[test]
    fn metrics_recompute_matches_stored_fields() {
        let (schema, enc) = encoder_with_median(&[5.0, 10.0, 15.0]);
        let x = Instance::new(vec![Value::Cat(0), Value::Cat(0), Value::Con(10.0)]);
        let ex = example(&x, &schema, &enc, vec![Value::Cat(2), Value::Cat(0), Value::Con(12.0)], true);
        assert_eq!(ex.sparsity, ex.changed_columns.len());
        assert_eq!(ex.changed_columns, changed_columns(&x, &ex.instance));
        assert_eq!(ex.proximity, proximity(&x, &ex.instance, &schema, &enc));
    }
}
