//! Command-line entry point binding data loading, training, ensembles, and
//! the benchmark runners into reproducible runs.
//!
//! Every run echoes its fully resolved configuration into the output
//! directory; with `--deterministic` the wall-clock budget is disabled and
//! a rerun of the same config is bit-identical.
//!
//! Exit codes: 0 success, 2 data error, 3 training error, 4 config error.

use clap::{Args, Parser, Subcommand, ValueEnum};
use mlr_core::bench::{
    aggregate_rows, format_table, run_ablation, run_bench, run_sweep, summary_table_text,
    synthetic_dataset, write_aggregate_csv, write_run_report, AggregateRow, SweepParam,
    SyntheticKind,
};
use mlr_core::data::{
    load_csv, load_csv_for_transform, preprocess, train_test_split, Cell, Dataset, FitMode,
    SchemaHints,
};
use mlr_core::ensemble::{ensemble_predict, method_spec, train_ensemble};
use mlr_core::error::Error;
use mlr_core::metrics;
use mlr_core::model::{hardmax_label, HeadKind, MlrConfig};
use mlr_core::model_io::{load_artifact, save_ensemble, save_model, LoadedArtifact};
use mlr_core::train::train;
use mlr_core::{Real, TaskKind};
use serde::Serialize;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "mlr",
    about = "Ridge-head networks with a muddled-label loss for tabular data",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model or ensemble and score it on a held-out test split.
    Train(TrainArgs),
    /// Predict with a saved model on a new data file.
    Predict(PredictArgs),
    /// Run the ingredient ablation over repeated splits.
    Ablate(AblateArgs),
    /// Sweep one hyperparameter over a grid.
    Sweep(SweepArgs),
    /// Benchmark methods across datasets and split seeds.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
enum TaskArg {
    Reg,
    Clf,
}

impl From<TaskArg> for TaskKind {
    fn from(t: TaskArg) -> TaskKind {
        match t {
            TaskArg::Reg => TaskKind::Regression,
            TaskArg::Clf => TaskKind::Classification,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
enum FitModeArg {
    /// Fit transform statistics on the train side only.
    TrainOnly,
    /// Fit on the whole dataset (replication mode).
    WholeData,
}

impl From<FitModeArg> for FitMode {
    fn from(m: FitModeArg) -> FitMode {
        match m {
            FitModeArg::TrainOnly => FitMode::TrainOnly,
            FitModeArg::WholeData => FitMode::WholeData,
        }
    }
}

/// Flags shared by every command that trains models.
#[derive(Args, Clone, Serialize)]
struct ModelOpts {
    /// Depth L of the network (hidden layers = L-1).
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u8).range(1..=4))]
    depth: u8,
    /// Hidden width J.
    #[arg(long, default_value_t = 1024)]
    width: usize,
    /// Number of label permutations T.
    #[arg(long, default_value_t = 16)]
    permutations: usize,
    /// Structured dithering scale.
    #[arg(long, default_value_t = 1.0)]
    sigma_struct: f64,
    /// Label dither scale (defaults: 0.03 regression, 0 classification).
    #[arg(long)]
    label_dither: Option<f64>,
    /// Learning rate override (defaults follow the depth table).
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Iteration cap override (defaults follow the depth table).
    #[arg(long)]
    max_iter: Option<usize>,
    /// Batch size override (default min(n, J)).
    #[arg(long)]
    batch_size: Option<usize>,
    /// Wall-clock training budget in seconds.
    #[arg(long, default_value_t = 300.0)]
    budget_seconds: f64,
    /// Disable the wall-clock budget; runs become bit-reproducible.
    #[arg(long)]
    deterministic: bool,
    /// Master seed (falls back to MLR_SEED).
    #[arg(long, env = "MLR_SEED", default_value_t = 0)]
    seed: u64,
    /// Worker threads for independent cells (default: all cores).
    #[arg(long)]
    workers: Option<usize>,
}

impl ModelOpts {
    fn to_config(&self, task: TaskKind) -> MlrConfig {
        MlrConfig {
            task,
            depth: self.depth as usize,
            width: self.width,
            permutations: self.permutations,
            sigma_struct: self.sigma_struct as Real,
            label_dither: self.label_dither.map(|v| v as Real),
            learning_rate: self.learning_rate.map(|v| v as Real),
            max_iter: self.max_iter,
            budget_seconds: if self.deterministic {
                None
            } else {
                Some(self.budget_seconds)
            },
            batch_size: self.batch_size,
            validation_fraction: 0.2,
            seed: self.seed,
            head: HeadKind::Ridge,
            lambda_init_override: None,
            restore_best: true,
        }
    }
}

#[derive(Args, Clone, Serialize)]
struct DataOpts {
    /// Input CSV (header row, commas, empty string = missing).
    #[arg(long)]
    data: PathBuf,
    /// JSON schema sidecar pinning column kinds / target / task.
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Task kind; inferred from the target when omitted.
    #[arg(long, value_enum)]
    task: Option<TaskArg>,
    /// How split transforms are fitted.
    #[arg(long, value_enum, default_value_t = FitModeArg::TrainOnly)]
    fit_mode: FitModeArg,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataOpts,
    #[command(flatten)]
    model: ModelOpts,
    /// What to train: single, bag1, bag2, ens, best, top5.
    #[arg(long, default_value = "single")]
    ensemble: String,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    /// Saved model (.mlr) or ensemble manifest (ensemble.json).
    #[arg(long)]
    model: PathBuf,
    /// Data file to predict on (target column optional).
    #[arg(long)]
    data: PathBuf,
    /// Output CSV path.
    #[arg(long, default_value = "predictions.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct AblateArgs {
    /// Datasets to ablate on; defaults to the three synthetic tasks.
    #[arg(long)]
    data: Vec<PathBuf>,
    #[arg(long)]
    schema: Option<PathBuf>,
    #[command(flatten)]
    model: ModelOpts,
    /// Train/test resplits per dataset.
    #[arg(long, default_value_t = 20)]
    repeats: usize,
    /// Members per bagged cell.
    #[arg(long, default_value_t = 10)]
    bag_size: usize,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    /// Dataset; defaults to the synthetic linear task.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    schema: Option<PathBuf>,
    #[arg(long, value_enum)]
    task: Option<TaskArg>,
    #[command(flatten)]
    model: ModelOpts,
    /// Parameter: sigma-struct, T, lambda-init, label-dither, width,
    /// batch-size, depth.
    #[arg(long)]
    param: String,
    /// Comma-separated grid values.
    #[arg(long)]
    grid: String,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    /// Dataset CSV files (repeat the flag for several).
    #[arg(long, required = true)]
    data: Vec<PathBuf>,
    #[arg(long)]
    schema: Option<PathBuf>,
    #[arg(long, value_enum)]
    task: Option<TaskArg>,
    #[command(flatten)]
    model: ModelOpts,
    /// Comma-separated method list.
    #[arg(long, default_value = "mlr1,mlr2,bag1,bag2,ens,best,top5")]
    methods: String,
    /// Split seeds seed..seed+splits-1.
    #[arg(long, default_value_t = 10)]
    splits: usize,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Io(_)
        | Error::Csv(_)
        | Error::NoHeader { .. }
        | Error::EmptyTable { .. }
        | Error::NoUsableFeatures
        | Error::SingleClassTarget
        | Error::SchemaMismatch(_)
        | Error::TooFewSamples { .. }
        | Error::InvalidModelFile(_) => 2,
        Error::InvalidConfig(_) => 4,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help/version requests are not errors
            use clap::error::ErrorKind;
            let kind = e.kind();
            let _ = e.print();
            if matches!(kind, ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                return ExitCode::SUCCESS;
            }
            return ExitCode::from(4);
        }
    };
    let result = match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Ablate(args) => cmd_ablate(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Bench(args) => cmd_bench(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn init_workers(workers: Option<usize>) {
    if let Some(n) = workers {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
}

fn load_hints(schema: &Option<PathBuf>) -> Result<SchemaHints, Error> {
    match schema {
        Some(path) => SchemaHints::from_json_file(path),
        None => Ok(SchemaHints::default()),
    }
}

/// Task from flag, then schema, then a look at the target column: two
/// distinct values mean classification.
fn resolve_task(flag: Option<TaskArg>, hints: &SchemaHints, raw: &mlr_core::data::RawTable) -> TaskKind {
    if let Some(t) = flag {
        return t.into();
    }
    if let Some(t) = hints.task {
        return t;
    }
    let target = raw.target_index().expect("loaded tables have a target");
    let mut distinct = std::collections::BTreeSet::new();
    for row in &raw.rows {
        match &row[target] {
            Cell::Num(v) => {
                distinct.insert(format!("{v}"));
            }
            Cell::Text(s) => {
                distinct.insert(s.clone());
            }
            Cell::Missing => {}
        }
    }
    if distinct.len() == 2 {
        TaskKind::Classification
    } else {
        TaskKind::Regression
    }
}

fn load_dataset(
    data: &Path,
    schema: &Option<PathBuf>,
    task_flag: Option<TaskArg>,
) -> Result<Dataset, Error> {
    let hints = load_hints(schema)?;
    let raw = load_csv(data, &hints)?;
    let task = resolve_task(task_flag, &hints, &raw);
    preprocess(raw, task)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Error> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::InvalidConfig(format!("serialize: {e}")))?;
    std::fs::write(path, text)?;
    Ok(())
}

/// The fully resolved run configuration, echoed into the output directory.
#[derive(Serialize)]
struct ConfigEcho<'a> {
    command: &'a str,
    data: Vec<String>,
    schema: Option<String>,
    fit_mode: String,
    resolved: &'a MlrConfig,
    ensemble: Option<&'a str>,
    methods: Option<&'a str>,
    repeats: Option<usize>,
    splits: Option<usize>,
    param: Option<&'a str>,
    grid: Option<&'a str>,
    deterministic: bool,
}

fn dataset_label(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().to_string())
        .unwrap_or_else(|| "dataset".into())
}

fn cmd_train(args: TrainArgs) -> Result<(), Error> {
    init_workers(args.model.workers);
    let dataset = load_dataset(&args.data.data, &args.data.schema, args.data.task)?;
    let config = args.model.to_config(dataset.task);
    config.validate()?;
    let spec = method_spec(&args.ensemble, config.depth)?;

    let (train_ds, test_ds) =
        train_test_split(&dataset, 0.2, config.seed, args.data.fit_mode.into())?;

    std::fs::create_dir_all(&args.out)?;
    write_json(
        &args.out.join("config.json"),
        &ConfigEcho {
            command: "train",
            data: vec![args.data.data.display().to_string()],
            schema: args.data.schema.as_ref().map(|p| p.display().to_string()),
            fit_mode: format!("{:?}", args.data.fit_mode),
            resolved: &config,
            ensemble: Some(&args.ensemble),
            methods: None,
            repeats: None,
            splits: None,
            param: None,
            grid: None,
            deterministic: args.model.deterministic,
        },
    )?;

    #[derive(Serialize)]
    struct TrainReport {
        dataset: String,
        n_train: usize,
        n_test: usize,
        d: usize,
        task: TaskKind,
        ensemble: String,
        model_path: String,
        lambda_init: Option<Real>,
        best_iteration: Option<usize>,
        best_val_score: Option<Real>,
        iterations_run: Option<usize>,
        test_metrics: std::collections::BTreeMap<String, Real>,
    }

    let mut report = TrainReport {
        dataset: dataset_label(&args.data.data),
        n_train: train_ds.n(),
        n_test: test_ds.n(),
        d: train_ds.d(),
        task: dataset.task,
        ensemble: args.ensemble.clone(),
        model_path: String::new(),
        lambda_init: None,
        best_iteration: None,
        best_val_score: None,
        iterations_run: None,
        test_metrics: Default::default(),
    };

    let preds: Vec<Real> = if spec.member_count() == 1 {
        let (model, record) = train(&config, &train_ds.x, &train_ds.y)?;
        let model_path = args.out.join("model.mlr");
        save_model(&model_path, &model, &train_ds.transform)?;
        report.model_path = model_path.display().to_string();
        report.lambda_init = Some(record.lambda_init);
        report.best_iteration = record.best_iteration;
        report.best_val_score = Some(record.best_val_score);
        report.iterations_run = Some(record.iterations.len());
        let raw = model.predict_raw(&test_ds.x)?;
        match dataset.task {
            TaskKind::Regression => raw,
            TaskKind::Classification => raw
                .iter()
                .map(|&v| mlr_core::autograd::sigmoid(v))
                .collect(),
        }
    } else {
        let ensemble = train_ensemble(&spec, &config, &train_ds.x, &train_ds.y, config.seed)?;
        let manifest = save_ensemble(&args.out.join("ensemble"), &ensemble, &train_ds.transform)?;
        report.model_path = manifest.display().to_string();
        ensemble.predict(&test_ds.x)?
    };

    match dataset.task {
        TaskKind::Regression => {
            report
                .test_metrics
                .insert("r2".into(), metrics::r2_score(&test_ds.y, &preds)?);
            report
                .test_metrics
                .insert("rmse".into(), metrics::rmse(&test_ds.y, &preds)?);
        }
        TaskKind::Classification => {
            let labels: Vec<Real> = preds
                .iter()
                .map(|&p| if p > 0.5 { 1.0 } else { 0.0 })
                .collect();
            report
                .test_metrics
                .insert("accuracy".into(), metrics::accuracy(&test_ds.y, &labels)?);
            report
                .test_metrics
                .insert("auc".into(), metrics::auc_score(&test_ds.y, &preds)?);
        }
    }

    write_json(&args.out.join("report.json"), &report)?;
    for (metric, value) in &report.test_metrics {
        println!("{metric}: {value:.4}");
    }
    println!("model: {}", report.model_path);
    Ok(())
}

fn cmd_predict(args: PredictArgs) -> Result<(), Error> {
    let artifact = load_artifact(&args.model)?;
    let transform = artifact.transform();
    let raw = load_csv_for_transform(&args.data, transform)?;
    let rows: Vec<usize> = (0..raw.n_rows()).collect();
    let x = transform.apply_features(&raw, &rows)?;

    let task = artifact.task();
    let (raw_scores, probs): (Vec<Real>, Option<Vec<Real>>) = match &artifact {
        LoadedArtifact::Single(saved) => {
            let scores = saved.model.predict_raw(&x)?;
            let probs = match task {
                TaskKind::Classification => Some(saved.model.predict_proba(&x)?),
                TaskKind::Regression => None,
            };
            (scores, probs)
        }
        LoadedArtifact::Ensemble {
            kind,
            members,
            val_scores,
            ..
        } => {
            let agg = ensemble_predict(members, val_scores, *kind, task, &x)?;
            match task {
                TaskKind::Regression => (agg, None),
                // ensembles aggregate probabilities directly
                TaskKind::Classification => (agg.clone(), Some(agg)),
            }
        }
    };

    if let Some(parent) = args.out.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut w = csv::Writer::from_path(&args.out).map_err(mlr_core::Error::from)?;
    match task {
        TaskKind::Regression => {
            w.write_record(["prediction"]).map_err(Error::from)?;
            for &v in &raw_scores {
                let orig = transform.inverse_target(v);
                w.write_record([format!("{orig}")]).map_err(Error::from)?;
            }
        }
        TaskKind::Classification => {
            w.write_record(["label", "probability"]).map_err(Error::from)?;
            let probs = probs.expect("classification probabilities");
            let labels: Vec<Real> = match &artifact {
                LoadedArtifact::Single(_) => hardmax_label(&raw_scores),
                LoadedArtifact::Ensemble { .. } => probs
                    .iter()
                    .map(|&p| if p > 0.5 { 1.0 } else { 0.0 })
                    .collect(),
            };
            for (l, p) in labels.iter().zip(probs.iter()) {
                let name = transform.class_label(*l).unwrap_or("1");
                w.write_record([name.to_string(), format!("{p}")])
                    .map_err(Error::from)?;
            }
        }
    }
    w.flush().map_err(mlr_core::Error::from)?;
    println!("wrote {} predictions to {}", raw_scores.len(), args.out.display());
    Ok(())
}

fn cmd_ablate(args: AblateArgs) -> Result<(), Error> {
    init_workers(args.model.workers);
    let datasets: Vec<(String, Dataset)> = if args.data.is_empty() {
        SyntheticKind::ALL
            .iter()
            .enumerate()
            .map(|(i, &kind)| {
                (
                    kind.name().to_string(),
                    synthetic_dataset(kind, 100, 8, 0.6, args.model.seed.wrapping_add(i as u64)),
                )
            })
            .collect()
    } else {
        let mut out = Vec::new();
        for path in &args.data {
            let ds = load_dataset(path, &args.schema, Some(TaskArg::Reg))?;
            out.push((dataset_label(path), ds));
        }
        out
    };

    let config = args.model.to_config(TaskKind::Regression);
    config.validate()?;
    std::fs::create_dir_all(&args.out)?;
    write_json(
        &args.out.join("config.json"),
        &ConfigEcho {
            command: "ablate",
            data: datasets.iter().map(|(n, _)| n.clone()).collect(),
            schema: args.schema.as_ref().map(|p| p.display().to_string()),
            fit_mode: "TrainOnly".into(),
            resolved: &config,
            ensemble: None,
            methods: None,
            repeats: Some(args.repeats),
            splits: None,
            param: None,
            grid: None,
            deterministic: args.model.deterministic,
        },
    )?;

    let report = run_ablation(&datasets, &config, args.repeats, args.bag_size, config.seed)?;
    write_json(&args.out.join("ablation.report"), &report)?;

    let mut rows = Vec::new();
    let mut csv_rows = Vec::new();
    for variant in mlr_core::bench::AblationVariant::ALL {
        let single = report.cell(variant, false);
        let bagged = report.cell(variant, true);
        rows.push(vec![
            variant.label().to_string(),
            format!("{:.3} +- {:.3}", single.mean_r2, single.std_r2),
            format!("{:.3} +- {:.3}", bagged.mean_r2, bagged.std_r2),
        ]);
        for cell in [single, bagged] {
            csv_rows.push(AggregateRow {
                dataset: "pooled".into(),
                method: format!(
                    "{}{}",
                    cell.variant,
                    if cell.bagged { "+bag" } else { "" }
                ),
                metric: "r2".into(),
                mean: cell.mean_r2,
                std: cell.std_r2,
                n_splits: cell.scores.len(),
            });
        }
    }
    let table = format_table(
        &["step".into(), "single r2".into(), "bagged r2".into()],
        &rows,
    );
    std::fs::write(args.out.join("ablation.txt"), &table)?;
    write_aggregate_csv(&args.out.join("ablation.csv"), &csv_rows)?;
    print!("{table}");
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<(), Error> {
    init_workers(args.model.workers);
    let param = SweepParam::parse(&args.param)?;
    let grid: Vec<Real> = args
        .grid
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<Real>()
                .map_err(|e| Error::InvalidConfig(format!("bad grid value '{s}': {e}")))
        })
        .collect::<Result<_, _>>()?;
    if grid.is_empty() {
        return Err(Error::InvalidConfig("empty grid".into()));
    }

    let (name, dataset) = match &args.data {
        Some(path) => (
            dataset_label(path),
            load_dataset(path, &args.schema, args.task)?,
        ),
        None => (
            "synth-linear".to_string(),
            synthetic_dataset(SyntheticKind::Linear, 100, 8, 0.6, args.model.seed),
        ),
    };
    let config = args.model.to_config(dataset.task);
    config.validate()?;
    std::fs::create_dir_all(&args.out)?;
    write_json(
        &args.out.join("config.json"),
        &ConfigEcho {
            command: "sweep",
            data: vec![name.clone()],
            schema: args.schema.as_ref().map(|p| p.display().to_string()),
            fit_mode: "TrainOnly".into(),
            resolved: &config,
            ensemble: None,
            methods: None,
            repeats: Some(args.repeats),
            splits: None,
            param: Some(&args.param),
            grid: Some(&args.grid),
            deterministic: args.model.deterministic,
        },
    )?;

    let report = run_sweep(
        &name,
        &dataset,
        param,
        &grid,
        &config,
        args.repeats,
        config.seed,
    )?;
    write_json(&args.out.join("sweep.report"), &report)?;

    let headers: Vec<String> = [
        "value",
        "test",
        "std",
        "val",
        "best-iter",
        "wall-s",
        "lambda-init",
        "ok",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let rows: Vec<Vec<String>> = report
        .points
        .iter()
        .map(|p| {
            vec![
                format!("{}", p.value),
                format!("{:.3}", p.mean_test_score),
                format!("{:.3}", p.std_test_score),
                format!("{:.3}", p.mean_val_score),
                format!("{:.1}", p.mean_best_iteration),
                format!("{:.2}", p.mean_wall_seconds),
                format!("{:.3}", p.mean_lambda_init),
                format!("{}/{}", p.completed, report.repeats),
            ]
        })
        .collect();
    let table = format_table(&headers, &rows);
    std::fs::write(args.out.join("sweep.txt"), &table)?;
    let csv_rows: Vec<AggregateRow> = report
        .points
        .iter()
        .map(|p| AggregateRow {
            dataset: name.clone(),
            method: format!("{}={}", report.param, p.value),
            metric: "test_score".into(),
            mean: p.mean_test_score,
            std: p.std_test_score,
            n_splits: p.completed,
        })
        .collect();
    write_aggregate_csv(&args.out.join("sweep.csv"), &csv_rows)?;
    print!("{table}");
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> Result<(), Error> {
    init_workers(args.model.workers);
    let methods: Vec<String> = args
        .methods
        .split(',')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect();
    if methods.is_empty() {
        return Err(Error::InvalidConfig("empty method list".into()));
    }

    let mut datasets = Vec::new();
    for path in &args.data {
        let ds = load_dataset(path, &args.schema, args.task)?;
        datasets.push((dataset_label(path), ds));
    }
    let task = datasets[0].1.task;
    if datasets.iter().any(|(_, d)| d.task != task) {
        return Err(Error::InvalidConfig(
            "bench datasets must share one task kind".into(),
        ));
    }

    let config = args.model.to_config(task);
    config.validate()?;
    std::fs::create_dir_all(&args.out)?;
    write_json(
        &args.out.join("config.json"),
        &ConfigEcho {
            command: "bench",
            data: args.data.iter().map(|p| p.display().to_string()).collect(),
            schema: args.schema.as_ref().map(|p| p.display().to_string()),
            fit_mode: "TrainOnly".into(),
            resolved: &config,
            ensemble: None,
            methods: Some(&args.methods),
            repeats: None,
            splits: Some(args.splits),
            param: None,
            grid: None,
            deterministic: args.model.deterministic,
        },
    )?;

    let outcome = run_bench(&datasets, &methods, &config, args.splits, config.seed)?;
    for run in &outcome.runs {
        write_run_report(&args.out.join("runs"), run)?;
    }
    write_aggregate_csv(
        &args.out.join("aggregate.csv"),
        &aggregate_rows(&outcome.tables),
    )?;
    let mut summary = String::new();
    for (metric, table) in &outcome.tables {
        summary.push_str(&summary_table_text(metric, table));
        summary.push('\n');
    }
    std::fs::write(args.out.join("summary.txt"), &summary)?;
    print!("{summary}");
    Ok(())
}
