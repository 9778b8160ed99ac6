use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::time::Duration;

use clap::Args;
use serde_json::json;

use mace_core::model::{accuracy, argmax};
use mace_core::pipeline::{evaluate_run, explain as run_explain, Method, PipelineConfig};
use mace_core::rank::zero_median_columns;
use mace_core::select::build_indices;
use mace_core::synth::{census_schema, generate_census};
use mace_core::tabular::{
    fit_encoders, load_dataset, ColumnKind, Dataset, EncoderState, Instance, Schema, Value,
};
use mace_core::{Classifier, RemoteScorer, TargetSpec};

use crate::artifacts::{
    CliError, ModelArtifact, ModelFile, PreparedFile, Result, RunConfigFile, SchemaFile,
    ARTIFACT_VERSION,
};

#[derive(Args)]
pub struct SynthArgs {
    /// Number of rows to generate.
    #[arg(long, default_value_t = 2000)]
    rows: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV path.
    #[arg(long)]
    data: PathBuf,
    /// Output schema JSON path.
    #[arg(long)]
    schema: PathBuf,
}

pub fn synth(args: SynthArgs) -> Result<()> {
    let ds = generate_census(args.rows, args.seed);
    let schema = census_schema();
    SchemaFile::save(&schema, "income", &args.schema)?;

    let mut out = fs::File::create(&args.data)?;
    let names: Vec<String> = schema.columns().iter().map(|c| c.name.clone()).collect();
    writeln!(out, "{},income", names.join(","))?;
    for (row, label) in ds.rows.iter().zip(&ds.labels) {
        let fields: Vec<String> =
            (0..schema.len()).map(|c| row.display_value(&schema, c)).collect();
        writeln!(out, "{},{label}", fields.join(","))?;
    }
    println!("wrote {} rows to {}", ds.rows.len(), args.data.display());
    Ok(())
}

#[derive(Args)]
pub struct PrepareArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    schema: PathBuf,
    /// Quantile bins per continuous column.
    #[arg(long, default_value_t = 10)]
    bins: usize,
    /// Output path for the fitted encoder artifact.
    #[arg(long)]
    out: PathBuf,
}

pub fn prepare(args: PrepareArgs) -> Result<()> {
    let (schema, label) = SchemaFile::load(&args.schema)?;
    let ds = load_dataset(&args.data, &schema, &label)?;
    let enc = fit_encoders(&ds, args.bins)?;
    let zero_median: Vec<String> = zero_median_columns(&schema, &enc)
        .into_iter()
        .map(|c| schema.column(c).name.clone())
        .collect();
    let prepared = PreparedFile {
        version: ARTIFACT_VERSION,
        row_count: ds.rows.len(),
        class_count: ds.class_count(),
        k_bins: args.bins,
        zero_median_columns: zero_median.clone(),
        encoders: enc,
    };
    fs::write(&args.out, serde_json::to_string_pretty(&prepared).unwrap())?;
    println!(
        "prepared {} rows, {} classes -> {}",
        prepared.row_count,
        prepared.class_count,
        args.out.display()
    );
    for name in &zero_median {
        println!("note: column {name:?} has a zero training median; proximity uses a guard divisor");
    }
    Ok(())
}

#[derive(Args)]
pub struct TrainModelArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    schema: PathBuf,
    /// Model family: "stumps" (gradient-boosted stumps) or "logistic".
    #[arg(long, default_value = "stumps")]
    model: String,
    /// Boosting rounds or gradient-descent epochs.
    #[arg(long, default_value_t = 50)]
    rounds: usize,
    #[arg(long, default_value_t = 0.5)]
    learning_rate: f64,
    #[arg(long)]
    out: PathBuf,
}

pub fn train_model(args: TrainModelArgs) -> Result<()> {
    let (schema, label) = SchemaFile::load(&args.schema)?;
    let ds = load_dataset(&args.data, &schema, &label)?;
    let model = match args.model.as_str() {
        "stumps" => {
            ModelArtifact::Stumps(mace_core::BoostedStumps::train(&ds, args.rounds, args.learning_rate)?)
        }
        "logistic" => {
            ModelArtifact::Logistic(mace_core::LogisticModel::train(&ds, args.rounds, args.learning_rate)?)
        }
        other => return Err(CliError::Format(format!("unknown model family {other:?}"))),
    };
    let train_accuracy = accuracy(model.classifier(), &ds)?;
    let file = ModelFile { version: ARTIFACT_VERSION, train_accuracy, model };
    file.save(&args.out)?;
    println!("trained {} (train accuracy {:.3}) -> {}", args.model, train_accuracy, args.out.display());
    Ok(())
}

/// Flags shared by explain and evaluate; every one overrides the TOML file.
#[derive(Args)]
pub struct RunArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Trained model artifact.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Address of a remote scorer; replaces the model artifact.
    #[arg(long)]
    scorer: Option<String>,
    /// Desired class of the counterfactuals.
    #[arg(long)]
    target: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// mace_rl, mace_gld or greedy_baseline.
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    bins: Option<usize>,
    /// Skip the continuous fine-tuning stage.
    #[arg(long)]
    no_fine_tune: bool,
}

fn parse_method(name: &str) -> Result<Method> {
    match name {
        "mace_rl" => Ok(Method::MaceRl),
        "mace_gld" => Ok(Method::MaceGld),
        "greedy_baseline" => Ok(Method::GreedyBaseline),
        other => Err(CliError::Format(format!("unknown method {other:?}"))),
    }
}

struct ResolvedRun {
    dataset: Dataset,
    enc: EncoderState,
    model: Box<dyn Classifier>,
    target: TargetSpec,
    config: PipelineConfig,
}

fn resolve(args: &RunArgs) -> Result<ResolvedRun> {
    let file = match &args.config {
        Some(path) => RunConfigFile::load(path)?,
        None => RunConfigFile::default(),
    };
    let required = |flag: &Option<PathBuf>, key: &Option<String>, name: &str| -> Result<PathBuf> {
        flag.clone()
            .or_else(|| key.clone().map(PathBuf::from))
            .ok_or_else(|| CliError::Format(format!("missing --{name} (or {name:?} in the config file)")))
    };
    let data_path = required(&args.data, &file.data, "data")?;
    let schema_path = required(&args.schema, &file.schema, "schema")?;

    let (schema, label) = SchemaFile::load(&schema_path)?;
    let dataset = load_dataset(&data_path, &schema, &label)?;
    let k_bins = args.bins.or(file.k_bins).unwrap_or(10);
    let enc = fit_encoders(&dataset, k_bins)?;

    let model: Box<dyn Classifier> = match &args.scorer {
        Some(addr) => {
            Box::new(RemoteScorer::connect(addr.as_str(), schema.clone(), Duration::from_secs(5))?)
        }
        None => {
            let model_path = required(&args.model, &file.model, "model")?;
            let file = ModelFile::load(&model_path)?;
            match file.model {
                ModelArtifact::Logistic(m) => Box::new(m),
                ModelArtifact::Stumps(m) => Box::new(m),
            }
        }
    };

    let mut config = file.pipeline;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(method) = &args.method {
        config.method = parse_method(method)?;
    }
    if let Some(workers) = args.workers {
        config.workers = workers;
    }
    if args.no_fine_tune {
        config.fine_tune_enabled = false;
    }

    let target_class = args.target.or(file.target_class).unwrap_or(1);
    if target_class >= model.class_count() {
        return Err(CliError::Format(format!(
            "target class {target_class} out of range for a {}-class model",
            model.class_count()
        )));
    }
    let target = TargetSpec::new(1 - target_class.min(1), target_class)?;
    Ok(ResolvedRun { dataset, enc, model, target, config })
}

#[derive(Args)]
pub struct ExplainArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Row index of the query in the data file.
    #[arg(long, conflicts_with = "what_if")]
    row: Option<usize>,
    /// JSON file with a feature map to explain instead of a data row.
    #[arg(long)]
    what_if: Option<PathBuf>,
    /// Report output path (JSON); stdout summary is always printed.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn instance_from_json(path: &PathBuf, schema: &Schema) -> Result<Instance> {
    let text = fs::read_to_string(path)?;
    let map: serde_json::Map<String, serde_json::Value> = serde_json::from_str(&text)
        .map_err(|e| CliError::Format(format!("{}: {e}", path.display())))?;
    let mut values = Vec::with_capacity(schema.len());
    for (c, col) in schema.columns().iter().enumerate() {
        let raw = map
            .get(&col.name)
            .ok_or_else(|| CliError::Format(format!("what-if file is missing {:?}", col.name)))?;
        let value = match col.kind {
            ColumnKind::Categorical => {
                let s = raw.as_str().ok_or_else(|| {
                    CliError::Format(format!("{:?} must be a category string", col.name))
                })?;
                let id = schema.category_index(c, s).ok_or_else(|| {
                    CliError::Format(format!("unknown category {s:?} for {:?}", col.name))
                })?;
                Value::Cat(id)
            }
            ColumnKind::Continuous => {
                let x = raw.as_f64().ok_or_else(|| {
                    CliError::Format(format!("{:?} must be a number", col.name))
                })?;
                Value::Con(x)
            }
        };
        values.push(value);
    }
    let extra: Vec<&String> =
        map.keys().filter(|k| schema.column_index(k).is_none()).collect();
    if !extra.is_empty() {
        return Err(CliError::Format(format!("unknown columns in what-if file: {extra:?}")));
    }
    Ok(Instance::new(values))
}

pub fn explain(args: ExplainArgs) -> Result<()> {
    let run = resolve(&args.run)?;
    let schema = &run.dataset.schema;
    let x = match (&args.what_if, args.row) {
        (Some(path), _) => instance_from_json(path, schema)?,
        (None, row) => {
            let row = row.unwrap_or(0);
            run.dataset
                .rows
                .get(row)
                .cloned()
                .ok_or_else(|| CliError::Format(format!("row {row} out of range")))?
        }
    };

    let index = build_indices(&run.dataset, run.model.as_ref(), &run.enc)?;
    let report = run_explain(
        &x,
        run.target,
        run.model.as_ref(),
        &run.dataset,
        &index,
        &run.enc,
        &run.config,
        run.config.seed,
    )?;

    println!(
        "predicted class {} (p = {:.3}); target class {}",
        report.predicted_class,
        report.query_probs[report.predicted_class],
        report.target_class
    );
    if report.fallback_used {
        println!("search found nothing; falling back to the nearest target-class training point");
    }
    for (i, ex) in report.examples.iter().enumerate() {
        let changes: Vec<String> = ex
            .changed_columns
            .iter()
            .map(|&c| {
                format!(
                    "{} {} -> {}",
                    schema.column(c).name,
                    x.display_value(schema, c),
                    ex.instance.display_value(schema, c)
                )
            })
            .collect();
        println!(
            "#{} [{}] sparsity {} proximity {:.3}: {}",
            i + 1,
            if ex.valid { "valid" } else { "invalid" },
            ex.sparsity,
            ex.proximity,
            if changes.is_empty() { "no changes".to_string() } else { changes.join("; ") }
        );
    }

    if let Some(out) = &args.out {
        let payload = json!({
            "config": run.config,
            "report": report,
        });
        fs::write(out, serde_json::to_string_pretty(&payload).unwrap())?;
        println!("report written to {}", out.display());
    }
    Ok(())
}

#[derive(Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Number of leading data rows to use as queries.
    #[arg(long, default_value_t = 100)]
    limit: usize,
    /// Comma-separated list of methods to run.
    #[arg(long)]
    methods: Option<String>,
    /// Output directory for the per-method run files.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn evaluate(args: EvaluateArgs) -> Result<()> {
    let run = resolve(&args.run)?;
    let index = build_indices(&run.dataset, run.model.as_ref(), &run.enc)?;
    let queries: Vec<Instance> =
        run.dataset.rows.iter().take(args.limit).cloned().collect();

    let methods: Vec<Method> = match &args.methods {
        Some(list) => list.split(',').map(|m| parse_method(m.trim())).collect::<Result<_>>()?,
        None => vec![run.config.method],
    };

    if let Some(dir) = &args.out {
        fs::create_dir_all(dir)?;
    }
    for method in methods {
        let config = PipelineConfig { method, ..run.config.clone() };
        let out = evaluate_run(
            &queries,
            run.target,
            run.model.as_ref(),
            &run.dataset,
            &index,
            &run.enc,
            &config,
        )?;
        let m = &out.metrics;
        println!(
            "{:?}: {} queries | validity {:.2} | sparsity {:.2} | proximity {:.3} | diversity {} | fallback {:.2}",
            method,
            m.query_count,
            m.validity,
            m.sparsity,
            m.proximity,
            m.diversity.map_or("n/a".to_string(), |d| format!("{d:.3}")),
            m.fallback_rate
        );
        if let Some(dir) = &args.out {
            let name = match method {
                Method::MaceRl => "mace_rl",
                Method::MaceGld => "mace_gld",
                Method::GreedyBaseline => "greedy_baseline",
            };
            let path = dir.join(format!("eval_{name}.json"));
            fs::write(&path, serde_json::to_string_pretty(&out).unwrap())?;
            println!("records written to {}", path.display());
        }
    }
    Ok(())
}

#[derive(Args)]
pub struct ServeCheckArgs {
    /// Address of the scorer, e.g. 127.0.0.1:9100.
    #[arg(long)]
    scorer: String,
    #[arg(long)]
    schema: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Row to score.
    #[arg(long, default_value_t = 0)]
    row: usize,
}

pub fn serve_check(args: ServeCheckArgs) -> Result<()> {
    let (schema, label) = SchemaFile::load(&args.schema)?;
    let ds = load_dataset(&args.data, &schema, &label)?;
    let x = ds
        .rows
        .get(args.row)
        .ok_or_else(|| CliError::Format(format!("row {} out of range", args.row)))?;
    let scorer = RemoteScorer::connect(args.scorer.as_str(), schema, Duration::from_secs(5))?;
    let probs = scorer.predict_proba(x)?;
    println!(
        "scorer at {} answered: class {} with probabilities {:?}",
        args.scorer,
        argmax(&probs),
        probs
    );
    Ok(())
}
