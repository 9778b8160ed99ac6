//! End-to-end orchestration: candidate selection, feature optimization,
//! diverse example selection and continuous fine-tuning for one query, plus
//! batch evaluation over many queries.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MaceError, Result};
use crate::gld::{gld_optimize, GldParams};
use crate::model::{target_score, Classifier, TargetSpec};
use crate::policy::{greedy_construct, reinforce_train, sample_valid_batch, RlHyperparams};
use crate::rank::{
    evaluate_metrics, pairwise_diversity, select_diverse, zero_median_columns, CfExample,
    MetricsSummary, Provenance, SelectionParams,
};
use crate::select::{select_candidates, CandidateFeatures, CandidateValue, ClassIndex};
use crate::tabular::{encode_for_knn, Dataset, EncoderState, Instance, Schema};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Policy-gradient feature optimization, then diverse selection and
    /// continuous fine-tuning.
    #[default]
    MaceRl,
    /// Gradientless-descent feature optimization seeded from the nearest
    /// target-class neighbor.
    MaceGld,
    /// No optimization: flip the top-counted candidate values in order until
    /// the prediction crosses.
    GreedyBaseline,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub method: Method,
    /// Number of target-class nearest neighbors scanned for candidates.
    pub k_neighbors: usize,
    /// Max candidate columns kept.
    pub s_features: usize,
    /// Max candidate values kept per column.
    pub m_values: usize,
    pub rl: RlHyperparams,
    pub gld: GldParams,
    pub selection: SelectionParams,
    pub fine_tune_enabled: bool,
    /// Skip non-actionable columns during candidate selection.
    pub actionable_only: bool,
    pub seed: u64,
    /// Worker threads for batch evaluation.
    pub workers: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            method: Method::MaceRl,
            k_neighbors: 30,
            s_features: 10,
            m_values: 3,
            rl: RlHyperparams::default(),
            gld: GldParams::default(),
            selection: SelectionParams::default(),
            fine_tune_enabled: true,
            actionable_only: true,
            seed: 0,
            workers: 1,
        }
    }
}

/// One candidate column as reported: display strings for the values.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CandidateSummary {
    pub column: String,
    pub neighbor_count: usize,
    /// (display value, count), descending by count.
    pub values: Vec<(String, usize)>,
}

/// One entry of the trained policy's feature ranking, by display name.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureProb {
    pub column: String,
    pub value: String,
    pub selection_prob: f64,
    pub value_prob: f64,
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct StageTimings {
    pub select_ms: f64,
    pub optimize_ms: f64,
    pub rank_ms: f64,
    pub tune_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExplanationReport {
    pub query: Instance,
    pub query_probs: Vec<f64>,
    pub predicted_class: usize,
    pub target_class: usize,
    pub method: Method,
    pub seed: u64,
    pub candidates: Vec<CandidateSummary>,
    /// Present for the policy method only.
    pub top_features: Vec<FeatureProb>,
    /// Selected examples, best first.
    pub examples: Vec<CfExample>,
    pub diversity: Option<f64>,
    pub fallback_used: bool,
    /// Continuous columns whose training median is zero; their proximity
    /// contributions use a divisor guard.
    pub zero_median_columns: Vec<String>,
    pub timings: StageTimings,
}

fn display_value(v: &CandidateValue, column: usize, schema: &Schema) -> String {
    match v {
        CandidateValue::Cat(id) => schema.column(column).categories[*id].clone(),
        CandidateValue::ConBin { representative, .. } => format!("{representative}"),
    }
}

fn summarize_candidates(candidates: &CandidateFeatures, schema: &Schema) -> Vec<CandidateSummary> {
    candidates
        .columns
        .iter()
        .map(|col| CandidateSummary {
            column: schema.column(col.column).name.clone(),
            neighbor_count: col.col_count,
            values: col
                .values
                .iter()
                .map(|(v, n)| (display_value(v, col.column, schema), *n))
                .collect(),
        })
        .collect()
}

/// Flip the top-counted value of each candidate column in descending count
/// order until the target score crosses 0.5.
pub fn greedy_baseline(
    x: &Instance,
    target: TargetSpec,
    model: &dyn Classifier,
    candidates: &CandidateFeatures,
    schema: &Schema,
    enc: &EncoderState,
) -> Result<CfExample> {
    let mut current = x.clone();
    let mut valid = target_score(model, target, &current)? > 0.5;
    for col in &candidates.columns {
        if valid {
            break;
        }
        current.values[col.column] = col.values[0].0.to_value();
        valid = target_score(model, target, &current)? > 0.5;
    }
    Ok(CfExample::build(x, current, valid, Provenance::BaselineGreedy, schema, enc))
}

fn fallback_example(
    x: &Instance,
    target: TargetSpec,
    model: &dyn Classifier,
    index: &ClassIndex,
    schema: &Schema,
    enc: &EncoderState,
) -> Result<CfExample> {
    let query_vec = encode_for_knn(x, schema, enc);
    let Some((_, neighbor)) = index.nearest(target.target_class, &query_vec) else {
        return Err(MaceError::TargetUnreachable(target.target_class));
    };
    let valid = target_score(model, target, neighbor)? > 0.5;
    Ok(CfExample::build(x, neighbor.clone(), valid, Provenance::FallbackNn, schema, enc))
}

fn sort_examples(examples: &mut [CfExample]) {
    examples.sort_by(|a, b| {
        b.proximity
            .partial_cmp(&a.proximity)
            .unwrap()
            .then(a.sparsity.cmp(&b.sparsity))
    });
}

/// Explain one query: produce counterfactual examples that move the model's
/// prediction to the target class. Falls back to the nearest target-class
/// training point when the search finds nothing.
#[allow(clippy::too_many_arguments)]
pub fn explain(
    x: &Instance,
    target: TargetSpec,
    model: &dyn Classifier,
    dataset: &Dataset,
    index: &ClassIndex,
    enc: &EncoderState,
    config: &PipelineConfig,
    seed: u64,
) -> Result<ExplanationReport> {
    let schema = &dataset.schema;
    let start = Instant::now();
    let query_probs = model.predict_proba(x)?;
    let predicted_class = crate::model::argmax(&query_probs);
    let zero_median: Vec<String> = zero_median_columns(schema, enc)
        .into_iter()
        .map(|c| schema.column(c).name.clone())
        .collect();

    let mut report = ExplanationReport {
        query: x.clone(),
        query_probs,
        predicted_class,
        target_class: target.target_class,
        method: config.method,
        seed,
        candidates: vec![],
        top_features: vec![],
        examples: vec![],
        diversity: None,
        fallback_used: false,
        zero_median_columns: zero_median,
        timings: StageTimings::default(),
    };

    if predicted_class == target.target_class {
        report.examples = vec![CfExample::build(
            x,
            x.clone(),
            true,
            Provenance::RlGreedy,
            schema,
            enc,
        )];
        report.timings.total_ms = start.elapsed().as_secs_f64() * 1e3;
        return Ok(report);
    }

    let candidates = select_candidates(
        x,
        target,
        index,
        dataset,
        enc,
        config.k_neighbors,
        config.s_features,
        config.m_values,
        config.actionable_only,
    )?;
    report.timings.select_ms = start.elapsed().as_secs_f64() * 1e3;
    report.candidates = summarize_candidates(&candidates, schema);

    if candidates.is_empty() {
        report.examples = vec![fallback_example(x, target, model, index, schema, enc)?];
        report.fallback_used = true;
        report.timings.total_ms = start.elapsed().as_secs_f64() * 1e3;
        return Ok(report);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let opt_start = Instant::now();
    let pool: Vec<CfExample> = match config.method {
        Method::MaceRl => {
            let params = reinforce_train(x, target, model, &candidates, &config.rl, &mut rng)?;
            let (baseline, top) = greedy_construct(
                &params,
                x,
                target,
                model,
                &candidates,
                config.rl.w,
                schema,
                enc,
            )?;
            report.top_features = top
                .iter()
                .map(|f| {
                    let col = candidates.columns.iter().find(|c| c.column == f.column).unwrap();
                    FeatureProb {
                        column: schema.column(f.column).name.clone(),
                        value: display_value(&col.values[f.value_index].0, f.column, schema),
                        selection_prob: f.selection_prob,
                        value_prob: f.value_prob,
                    }
                })
                .collect();
            sample_valid_batch(
                &params,
                x,
                target,
                model,
                &candidates,
                &baseline,
                config.rl.b_samples,
                Some(config.rl.w),
                schema,
                enc,
                &mut rng,
            )?
        }
        Method::MaceGld => {
            let query_vec = encode_for_knn(x, schema, enc);
            let Some((_, neighbor)) = index.nearest(target.target_class, &query_vec) else {
                return Err(MaceError::TargetUnreachable(target.target_class));
            };
            let neighbor = neighbor.clone();
            gld_optimize(
                x,
                target,
                model,
                &candidates,
                &neighbor,
                schema,
                enc,
                &config.gld,
                &mut rng,
            )?
        }
        Method::GreedyBaseline => {
            vec![greedy_baseline(x, target, model, &candidates, schema, enc)?]
        }
    };
    report.timings.optimize_ms = opt_start.elapsed().as_secs_f64() * 1e3;

    let rank_start = Instant::now();
    let mut selected = select_diverse(&pool, &config.selection);
    report.timings.rank_ms = rank_start.elapsed().as_secs_f64() * 1e3;

    if selected.is_empty() {
        report.examples = vec![fallback_example(x, target, model, index, schema, enc)?];
        report.fallback_used = true;
        report.timings.total_ms = start.elapsed().as_secs_f64() * 1e3;
        return Ok(report);
    }

    if config.fine_tune_enabled && config.method != Method::MaceGld {
        let tune_start = Instant::now();
        for ex in selected.iter_mut() {
            let (mut tuned, noop) =
                crate::gld::fine_tune(x, target, model, ex, schema, enc, &config.gld, &mut rng)?;
            // keep the tuned version only when it does not trade away
            // proximity for the tuning objective
            if !noop && tuned.proximity >= ex.proximity - 1e-12 {
                tuned.provenance = Provenance::Gld;
                *ex = tuned;
            }
        }
        sort_examples(&mut selected);
        report.timings.tune_ms = tune_start.elapsed().as_secs_f64() * 1e3;
    }

    report.diversity = pairwise_diversity(&selected, schema.len());
    report.examples = selected;
    report.timings.total_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(report)
}

/// Per-query evaluation record; deliberately excludes timings so repeated
/// runs with the same seed serialize identically.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QueryRecord {
    pub query_index: usize,
    pub predicted_class: usize,
    /// True when the query already sits in the target class.
    pub skipped: bool,
    pub fallback: bool,
    pub examples: Vec<CfExample>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluationRun {
    pub config: PipelineConfig,
    pub target_class: usize,
    pub records: Vec<QueryRecord>,
    pub metrics: MetricsSummary,
}

/// Explain a batch of queries and aggregate the metrics. Queries already in
/// the target class are skipped. Each query gets its own seed derived from
/// the configured one, so results are independent of `workers`.
pub fn evaluate_run(
    queries: &[Instance],
    target: TargetSpec,
    model: &dyn Classifier,
    dataset: &Dataset,
    index: &ClassIndex,
    enc: &EncoderState,
    config: &PipelineConfig,
) -> Result<EvaluationRun> {
    let run_one = |i: usize| -> Result<QueryRecord> {
        let x = &queries[i];
        let predicted = model.predict(x)?;
        if predicted == target.target_class {
            return Ok(QueryRecord {
                query_index: i,
                predicted_class: predicted,
                skipped: true,
                fallback: false,
                examples: vec![],
            });
        }
        let report = explain(
            x,
            target,
            model,
            dataset,
            index,
            enc,
            config,
            config.seed.wrapping_add(i as u64),
        )?;
        Ok(QueryRecord {
            query_index: i,
            predicted_class: predicted,
            skipped: false,
            fallback: report.fallback_used,
            examples: report.examples,
        })
    };

    let n = queries.len();
    let records: Vec<QueryRecord> = if config.workers <= 1 {
        (0..n).map(run_one).collect::<Result<_>>()?
    } else {
        let slots: Mutex<Vec<Option<Result<QueryRecord>>>> = Mutex::new((0..n).map(|_| None).collect());
        let next = AtomicUsize::new(0);
        std::thread::scope(|scope| {
            for _ in 0..config.workers.min(n.max(1)) {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= n {
                        break;
                    }
                    let record = run_one(i);
                    slots.lock().unwrap()[i] = Some(record);
                });
            }
        });
        slots
            .into_inner()
            .unwrap()
            .into_iter()
            .map(|slot| slot.expect("worker filled every slot"))
            .collect::<Result<_>>()?
    };

    let per_query: Vec<Vec<CfExample>> = records
        .iter()
        .filter(|r| !r.skipped)
        .map(|r| r.examples.clone())
        .collect();
    let metrics = evaluate_metrics(&per_query, &dataset.schema);
    Ok(EvaluationRun {
        config: config.clone(),
        target_class: target.target_class,
        records,
        metrics,
    })
}
