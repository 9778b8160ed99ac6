//! Randomized invariants over the encoders, the policy machinery and the
//! selection stage.

use proptest::prelude::*;

use mace_core::policy::{policy_log_prob, sample_action, PolicyParams};
use mace_core::rank::{changed_columns, proximity, select_diverse, CfExample, Provenance, SelectionParams};
use mace_core::tabular::{
    denormalize_continuous, encode_for_knn, fit_encoders, normalize_continuous, Column, ColumnKind,
    Dataset, Instance, Schema, Value,
};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn mixed_schema(cat_counts: &[usize], con_count: usize) -> Schema {
    let mut columns = Vec::new();
    for (i, &k) in cat_counts.iter().enumerate() {
        columns.push(Column {
            name: format!("c{i}"),
            kind: ColumnKind::Categorical,
            categories: (0..k).map(|v| format!("v{v}")).collect(),
            actionable: true,
        });
    }
    for i in 0..con_count {
        columns.push(Column {
            name: format!("x{i}"),
            kind: ColumnKind::Continuous,
            categories: vec![],
            actionable: true,
        });
    }
    Schema::new(columns).unwrap()
}

fn arbitrary_dataset() -> impl Strategy<Value = Dataset> {
    (
        proptest::collection::vec(2usize..5, 1..3),
        1usize..3,
        5usize..40,
        any::<u64>(),
    )
        .prop_map(|(cat_counts, con_count, n, seed)| {
            use rand::Rng;
            let schema = mixed_schema(&cat_counts, con_count);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rows: Vec<Instance> = (0..n)
                .map(|_| {
                    let mut values = Vec::new();
                    for &k in &cat_counts {
                        values.push(Value::Cat(rng.gen_range(0..k)));
                    }
                    for _ in 0..con_count {
                        values.push(Value::Con(rng.gen_range(-50.0..50.0)));
                    }
                    Instance::new(values)
                })
                .collect();
            Dataset::new(schema, rows, vec![0; n]).unwrap()
        })
}

proptest! {
    #[test]
    fn knn_encoding_has_declared_width_and_one_hot_blocks(ds in arbitrary_dataset()) {
        let enc = fit_encoders(&ds, 4).unwrap();
        for row in &ds.rows {
            let v = encode_for_knn(row, &ds.schema, &enc);
            prop_assert_eq!(v.len(), enc.knn_width);
            let mut offset = 0;
            for col in ds.schema.columns() {
                match col.kind {
                    ColumnKind::Categorical => {
                        let block = &v[offset..offset + col.categories.len()];
                        prop_assert_eq!(block.iter().filter(|&&b| b == 1.0).count(), 1);
                        prop_assert!(block.iter().all(|&b| b == 0.0 || b == 1.0));
                        offset += col.categories.len();
                    }
                    ColumnKind::Continuous => {
                        prop_assert!(v[offset] >= 0.0);
                        offset += 1;
                    }
                }
            }
        }
    }

    #[test]
    fn bin_index_is_monotone(ds in arbitrary_dataset(), probes in proptest::collection::vec(-100.0f64..100.0, 2..20)) {
        let enc = fit_encoders(&ds, 5).unwrap();
        let mut sorted = probes.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (c, col) in ds.schema.columns().iter().enumerate() {
            if col.kind != ColumnKind::Continuous {
                continue;
            }
            let ce = enc.continuous[c].as_ref().unwrap();
            let bins: Vec<usize> = sorted.iter().map(|&v| ce.bin_index(v)).collect();
            prop_assert!(bins.windows(2).all(|w| w[0] <= w[1]));
            prop_assert!(bins.iter().all(|&b| b < ce.bin_count()));
        }
    }

    #[test]
    fn normalize_denormalize_roundtrip(ds in arbitrary_dataset()) {
        let enc = fit_encoders(&ds, 4).unwrap();
        for row in &ds.rows {
            let norm = normalize_continuous(row, &ds.schema, &enc);
            for (c, col) in ds.schema.columns().iter().enumerate() {
                if col.kind == ColumnKind::Continuous {
                    let v = norm.values[c].as_con();
                    prop_assert!((0.0..=1.0).contains(&v));
                }
            }
            let back = denormalize_continuous(&norm, &ds.schema, &enc);
            for (c, col) in ds.schema.columns().iter().enumerate() {
                if col.kind == ColumnKind::Continuous {
                    // training rows are in range, so the roundtrip is exact up
                    // to float error
                    prop_assert!((back.values[c].as_con() - row.values[c].as_con()).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn proximity_is_nonpositive_and_zero_on_identity(ds in arbitrary_dataset()) {
        let enc = fit_encoders(&ds, 4).unwrap();
        let x = &ds.rows[0];
        prop_assert_eq!(proximity(x, x, &ds.schema, &enc), 0.0);
        for cf in &ds.rows {
            let p = proximity(x, cf, &ds.schema, &enc);
            prop_assert!(p <= 0.0);
            let ex = CfExample::build(x, cf.clone(), true, Provenance::RlSample, &ds.schema, &enc);
            prop_assert_eq!(ex.sparsity, changed_columns(x, cf).len());
            prop_assert_eq!(ex.sparsity, ex.changed_columns.len());
        }
    }

    #[test]
    fn sampled_action_probability_is_valid(
        logits in proptest::collection::vec(-4.0f64..4.0, 1..6),
        value_counts in proptest::collection::vec(1usize..4, 1..6),
        seed in any::<u64>(),
    ) {
        let s = logits.len().min(value_counts.len());
        let params = PolicyParams {
            p_logits: logits[..s].to_vec(),
            q_logits: value_counts[..s].iter().map(|&m| vec![0.25; m]).collect(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let action = sample_action(&params, &mut rng);
        prop_assert_eq!(action.mask.len(), s);
        for (c, &m) in action.mask.iter().enumerate() {
            prop_assert_eq!(m, action.choices[c].is_some());
            if let Some(v) = action.choices[c] {
                prop_assert!(v < params.q_logits[c].len());
            }
        }
        let p = policy_log_prob(&params, &action).exp();
        prop_assert!(p > 0.0 && p <= 1.0 + 1e-12);
    }

    #[test]
    fn diverse_selection_respects_the_cap(
        ds in arbitrary_dataset(),
        k_cap in 1usize..4,
        top_n in 1usize..6,
        picks in proptest::collection::vec(any::<u64>(), 2..20),
    ) {
        use rand::Rng;
        let enc = fit_encoders(&ds, 4).unwrap();
        let x = &ds.rows[0];
        // random pool: perturb random rows, random validity
        let pool: Vec<CfExample> = picks
            .iter()
            .map(|&seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let donor = &ds.rows[rng.gen_range(0..ds.rows.len())];
                let mut values = x.values.clone();
                for c in 0..ds.schema.len() {
                    if rng.gen::<f64>() < 0.5 {
                        values[c] = donor.values[c];
                    }
                }
                CfExample::build(
                    x,
                    Instance::new(values),
                    rng.gen::<f64>() < 0.8,
                    Provenance::RlSample,
                    &ds.schema,
                    &enc,
                )
            })
            .collect();
        let params = SelectionParams { k_cap, top_n };
        let selected = select_diverse(&pool, &params);
        prop_assert!(selected.len() <= top_n);
        let mut counts = vec![0usize; ds.schema.len()];
        for ex in &selected {
            prop_assert!(ex.valid);
            for &c in &ex.changed_columns {
                counts[c] += 1;
            }
        }
        prop_assert!(counts.iter().all(|&n| n <= k_cap));
        // ordering: descending proximity
        prop_assert!(selected.windows(2).all(|w| w[0].proximity >= w[1].proximity));
    }
}
