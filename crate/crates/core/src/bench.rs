//! Experiment runners: the ablation decomposition, hyperparameter sweeps,
//! and the dataset-by-method benchmark, plus their report files.
//!
//! Every cell is an independent job keyed by (dataset, method, seed);
//! cells run in parallel and results are merged in key order, so reports do
//! not depend on scheduling. Wall-clock numbers are recorded only when the
//! training budget is enabled; deterministic runs report zeros so a report
//! can be regenerated bit-identically from its echoed config.

use crate::data::{preprocess, train_test_split, Cell, ColumnKind, Dataset, FitMode, RawTable};
use crate::ensemble::{method_spec, train_ensemble};
use crate::error::{Error, Result};
use crate::matrix::{Matrix, Real};
use crate::metrics::{self, ScoreTable};
use crate::model::{HeadKind, MlrConfig, TaskKind};
use crate::train::train;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Stable per-cell seed derivation from a master seed and job coordinates.
pub fn derive_seed(master: u64, parts: &[u64]) -> u64 {
    let mut h = master ^ 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        h = h.wrapping_add(p).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        h ^= h >> 31;
    }
    h
}

// ---------------------------------------------------------------------
// Synthetic regression tasks
// ---------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SyntheticKind {
    Linear,
    AdditiveNonlinear,
    SparseSignal,
}

impl SyntheticKind {
    pub fn name(self) -> &'static str {
        match self {
            SyntheticKind::Linear => "synth-linear",
            SyntheticKind::AdditiveNonlinear => "synth-additive",
            SyntheticKind::SparseSignal => "synth-sparse",
        }
    }

    pub const ALL: [SyntheticKind; 3] = [
        SyntheticKind::Linear,
        SyntheticKind::AdditiveNonlinear,
        SyntheticKind::SparseSignal,
    ];
}

/// Regression task with tabular-like features and noise tuned so the best
/// achievable test R^2 is about `bayes_r2`. Columns mix marginal shapes the
/// way real tables do: gaussian, skewed, heavy-tailed, and coarsely
/// quantized, with a shared factor correlating half of them.
pub fn synthetic_dataset(
    kind: SyntheticKind,
    n: usize,
    d: usize,
    bayes_r2: Real,
    seed: u64,
) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let styles: Vec<u8> = (0..d).map(|j| (j % 4) as u8).collect();
    let mut x = Matrix::zeros(n, d);
    for i in 0..n {
        let shared: Real = rng.sample(StandardNormal);
        for j in 0..d {
            let own: Real = rng.sample(StandardNormal);
            let z = if j % 2 == 0 {
                0.85 * shared + (1.0 - 0.85 * 0.85 as Real).sqrt() * own
            } else {
                0.4 * shared + (1.0 - 0.4 * 0.4 as Real).sqrt() * own
            };
            let v = match styles[j] {
                0 => z,
                // skewed: standardized lognormal, winsorized like a real
                // bounded column
                1 => ((z.exp() - (0.5 as Real).exp())
                    / ((1.0 as Real).exp() * ((1.0 as Real).exp() - 1.0)).sqrt())
                .clamp(-4.0, 4.0),
                // heavy-tailed but bounded draw
                2 => {
                    let u: Real = rng.sample(StandardNormal);
                    let w: Real = rng.sample(StandardNormal);
                    (z / (0.5 * (u * u + w * w) / 2.0 + 0.5).sqrt()).clamp(-4.0, 4.0)
                }
                // coarse lattice, ~25 distinct levels
                _ => (z * 8.0).round() / 8.0,
            };
            x.set(i, j, v);
        }
    }
    let signal: Vec<Real> = match kind {
        SyntheticKind::Linear => {
            // alternating signs on the factor-loaded coordinates put about
            // half the signal variance off the dominant direction
            let beta: Vec<Real> = (0..d)
                .map(|j| {
                    let mag = rng.random_range(0.4..1.0);
                    if j % 4 == 2 {
                        -mag
                    } else {
                        mag
                    }
                })
                .collect();
            (0..n)
                .map(|i| (0..d).map(|j| beta[j] * x.get(i, j)).sum())
                .collect()
        }
        SyntheticKind::AdditiveNonlinear => {
            // curved components, half the factor-loaded ones flipped so the
            // signal splits between the dominant direction and contrasts
            let beta: Vec<Real> = (0..d)
                .map(|j| {
                    let mag = rng.random_range(0.4..1.2);
                    if j % 4 == 2 {
                        -mag
                    } else {
                        mag
                    }
                })
                .collect();
            (0..n)
                .map(|i| {
                    (0..d)
                        .map(|j| {
                            let v = x.get(i, j);
                            let g = if j % 2 == 0 {
                                (1.5 * v).tanh()
                            } else {
                                (1.2 * v).sin()
                            };
                            beta[j] * g
                        })
                        .sum()
                })
                .collect()
        }
        SyntheticKind::SparseSignal => {
            // a contrast of two factor-loaded coordinates: most of the
            // signal variance sits off the dominant feature direction
            let (a, b) = (0, 4.min(d - 1));
            let ca = rng.random_range(1.2..1.8);
            let cb = -rng.random_range(0.8..1.4);
            (0..n)
                .map(|i| ca * x.get(i, a) + cb * x.get(i, b))
                .collect()
        }
    };
    let mean_s = signal.iter().sum::<Real>() / n as Real;
    let var_s = signal.iter().map(|s| (s - mean_s) * (s - mean_s)).sum::<Real>() / n as Real;
    let noise_std = (var_s * (1.0 - bayes_r2) / bayes_r2).sqrt();
    let y: Vec<Real> = signal
        .iter()
        .map(|&s| {
            let z: Real = rng.sample(StandardNormal);
            s + noise_std * z
        })
        .collect();

    let mut names: Vec<String> = (0..d).map(|j| format!("x{j}")).collect();
    names.push("y".into());
    let mut kinds = vec![ColumnKind::Numeric; d];
    kinds.push(ColumnKind::Target);
    let rows: Vec<Vec<Cell>> = (0..n)
        .map(|i| {
            let mut row: Vec<Cell> = (0..d).map(|j| Cell::Num(x.get(i, j))).collect();
            row.push(Cell::Num(y[i]));
            row
        })
        .collect();
    let raw = RawTable { names, kinds, rows };
    preprocess(raw, TaskKind::Regression).expect("synthetic table is always usable")
}

// ---------------------------------------------------------------------
// Ablation
// ---------------------------------------------------------------------

/// Ingredient switches, from the bare gradient-trained network up to the
/// full recipe. Variants only flip the head, the permutation count, and the
/// structured-dither scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AblationVariant {
    PlainFfnn,
    Ridge,
    RidgeStructDither,
    RidgePermut,
    Full,
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 5] = [
        AblationVariant::PlainFfnn,
        AblationVariant::Ridge,
        AblationVariant::RidgeStructDither,
        AblationVariant::RidgePermut,
        AblationVariant::Full,
    ];

    pub fn label(self) -> &'static str {
        match self {
            AblationVariant::PlainFfnn => "ffnn",
            AblationVariant::Ridge => "ridge",
            AblationVariant::RidgeStructDither => "ridge+dither",
            AblationVariant::RidgePermut => "ridge+permut",
            AblationVariant::Full => "full",
        }
    }

    pub fn configure(self, base: &MlrConfig) -> MlrConfig {
        let mut cfg = base.clone();
        match self {
            AblationVariant::PlainFfnn => {
                cfg.head = HeadKind::LearnedMse;
                cfg.permutations = 0;
                cfg.sigma_struct = 0.0;
                cfg.restore_best = false;
            }
            AblationVariant::Ridge => {
                cfg.permutations = 0;
                cfg.sigma_struct = 0.0;
            }
            AblationVariant::RidgeStructDither => {
                cfg.permutations = 0;
            }
            AblationVariant::RidgePermut => {
                cfg.sigma_struct = 0.0;
            }
            AblationVariant::Full => {}
        }
        cfg
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationCell {
    pub variant: String,
    pub bagged: bool,
    pub mean_r2: Real,
    pub std_r2: Real,
    /// One score per (dataset, split) pair, dataset-major.
    pub scores: Vec<Real>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationReport {
    pub datasets: Vec<String>,
    pub repeats: usize,
    pub bag_size: usize,
    pub cells: Vec<AblationCell>,
}

impl AblationReport {
    pub fn cell(&self, variant: AblationVariant, bagged: bool) -> &AblationCell {
        self.cells
            .iter()
            .find(|c| c.variant == variant.label() && c.bagged == bagged)
            .expect("cell exists")
    }
}

/// Train every variant over `repeats` fresh 80:20 splits of each dataset.
/// The single-model column is the first bag member; the bagged column is
/// the mean prediction of all `bag_size` members.
pub fn run_ablation(
    datasets: &[(String, Dataset)],
    base: &MlrConfig,
    repeats: usize,
    bag_size: usize,
    seed: u64,
) -> Result<AblationReport> {
    let variants = AblationVariant::ALL;
    // jobs: (dataset, repeat, variant, member)
    let mut jobs = Vec::new();
    for ds in 0..datasets.len() {
        for r in 0..repeats {
            for (vi, _) in variants.iter().enumerate() {
                for m in 0..bag_size {
                    jobs.push((ds, r, vi, m));
                }
            }
        }
    }

    let preds: Vec<((usize, usize, usize, usize), std::result::Result<Vec<Real>, String>)> = jobs
        .par_iter()
        .map(|&(ds, r, vi, m)| {
            let run = || -> Result<Vec<Real>> {
                let split_seed = derive_seed(seed, &[ds as u64, r as u64]);
                let (tr, te) =
                    train_test_split(&datasets[ds].1, 0.2, split_seed, FitMode::TrainOnly)?;
                let mut cfg = variants[vi].configure(base);
                cfg.seed = derive_seed(seed, &[ds as u64, r as u64, vi as u64, m as u64]);
                let (model, _) = train(&cfg, &tr.x, &tr.y)?;
                model.predict_raw(&te.x)
            };
            ((ds, r, vi, m), run().map_err(|e| e.to_string()))
        })
        .collect();

    let mut by_key: BTreeMap<(usize, usize, usize, usize), Vec<Real>> = BTreeMap::new();
    for (key, res) in preds {
        match res {
            Ok(p) => {
                by_key.insert(key, p);
            }
            Err(msg) => {
                return Err(Error::InvalidConfig(format!(
                    "ablation cell {key:?} failed: {msg}"
                )))
            }
        }
    }

    let mut cells = Vec::new();
    for (vi, variant) in variants.iter().enumerate() {
        for bagged in [false, true] {
            let mut scores = Vec::new();
            for ds in 0..datasets.len() {
                for r in 0..repeats {
                    let split_seed = derive_seed(seed, &[ds as u64, r as u64]);
                    let (_, te) =
                        train_test_split(&datasets[ds].1, 0.2, split_seed, FitMode::TrainOnly)?;
                    let pred: Vec<Real> = if bagged {
                        let mut acc = vec![0.0 as Real; te.n()];
                        for m in 0..bag_size {
                            let p = &by_key[&(ds, r, vi, m)];
                            for (a, v) in acc.iter_mut().zip(p.iter()) {
                                *a += v;
                            }
                        }
                        acc.into_iter().map(|v| v / bag_size as Real).collect()
                    } else {
                        by_key[&(ds, r, vi, 0)].clone()
                    };
                    scores.push(metrics::r2_score(&te.y, &pred)?);
                }
            }
            let n = scores.len() as Real;
            let mean = scores.iter().sum::<Real>() / n;
            let var = scores.iter().map(|v| (v - mean) * (v - mean)).sum::<Real>() / n;
            cells.push(AblationCell {
                variant: variant.label().to_string(),
                bagged,
                mean_r2: mean,
                std_r2: var.sqrt(),
                scores,
            });
        }
    }
    Ok(AblationReport {
        datasets: datasets.iter().map(|(n, _)| n.clone()).collect(),
        repeats,
        bag_size,
        cells,
    })
}

// ---------------------------------------------------------------------
// Hyperparameter sweeps
// ---------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepParam {
    SigmaStruct,
    Permutations,
    LambdaInit,
    LabelDither,
    Width,
    BatchSize,
    Depth,
}

impl SweepParam {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "sigma-struct" => SweepParam::SigmaStruct,
            "T" | "permutations" => SweepParam::Permutations,
            "lambda-init" => SweepParam::LambdaInit,
            "label-dither" => SweepParam::LabelDither,
            "width" => SweepParam::Width,
            "batch-size" => SweepParam::BatchSize,
            "depth" => SweepParam::Depth,
            other => {
                return Err(Error::InvalidConfig(format!(
                    "unknown sweep parameter '{other}'"
                )))
            }
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            SweepParam::SigmaStruct => "sigma-struct",
            SweepParam::Permutations => "permutations",
            SweepParam::LambdaInit => "lambda-init",
            SweepParam::LabelDither => "label-dither",
            SweepParam::Width => "width",
            SweepParam::BatchSize => "batch-size",
            SweepParam::Depth => "depth",
        }
    }

    pub fn apply(self, cfg: &mut MlrConfig, value: Real) {
        match self {
            SweepParam::SigmaStruct => cfg.sigma_struct = value,
            SweepParam::Permutations => cfg.permutations = value as usize,
            SweepParam::LambdaInit => cfg.lambda_init_override = Some(value),
            SweepParam::LabelDither => cfg.label_dither = Some(value),
            SweepParam::Width => cfg.width = value as usize,
            SweepParam::BatchSize => cfg.batch_size = Some(value as usize),
            SweepParam::Depth => cfg.depth = value as usize,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepPoint {
    pub value: Real,
    pub mean_test_score: Real,
    pub std_test_score: Real,
    pub mean_val_score: Real,
    /// Mean best-iteration index (early divergence shows up as ~0).
    pub mean_best_iteration: Real,
    /// Zero in deterministic mode.
    pub mean_wall_seconds: f64,
    pub mean_lambda_init: Real,
    pub completed: usize,
    pub failures: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub param: String,
    pub dataset: String,
    pub repeats: usize,
    pub points: Vec<SweepPoint>,
}

/// One grid point per row: override the parameter, train over `repeats`
/// splits, report test/validation scores, convergence, and the realized
/// ridge-scale initialization. Cell failures are recorded and skipped.
pub fn run_sweep(
    dataset_name: &str,
    dataset: &Dataset,
    param: SweepParam,
    grid: &[Real],
    base: &MlrConfig,
    repeats: usize,
    seed: u64,
) -> Result<SweepReport> {
    let mut jobs = Vec::new();
    for (gi, _) in grid.iter().enumerate() {
        for r in 0..repeats {
            jobs.push((gi, r));
        }
    }
    type CellOut = std::result::Result<(Real, Real, Real, f64, Real), String>;
    let outcomes: Vec<((usize, usize), CellOut)> = jobs
        .par_iter()
        .map(|&(gi, r)| {
            let run = || -> Result<(Real, Real, Real, f64, Real)> {
                // splits depend only on the repeat, so grid points compare
                // like-for-like
                let split_seed = derive_seed(seed, &[r as u64]);
                let (tr, te) = train_test_split(dataset, 0.2, split_seed, FitMode::TrainOnly)?;
                let mut cfg = base.clone();
                param.apply(&mut cfg, grid[gi]);
                cfg.validate()?;
                cfg.seed = derive_seed(seed, &[gi as u64, r as u64, 1]);
                let timer = Instant::now();
                let (model, record) = train(&cfg, &tr.x, &tr.y)?;
                let wall = if cfg.budget_seconds.is_some() {
                    timer.elapsed().as_secs_f64()
                } else {
                    0.0
                };
                let preds = model.predict_raw(&te.x)?;
                let test = match dataset.task {
                    TaskKind::Regression => metrics::r2_score(&te.y, &preds)?,
                    TaskKind::Classification => {
                        metrics::accuracy(&te.y, &crate::model::hardmax_label(&preds))?
                    }
                };
                let best_iter = record.best_iteration.unwrap_or(0) as Real;
                Ok((
                    test,
                    record.best_val_score,
                    best_iter,
                    wall,
                    record.lambda_init,
                ))
            };
            ((gi, r), run().map_err(|e| e.to_string()))
        })
        .collect();

    let mut per_point: Vec<Vec<(Real, Real, Real, f64, Real)>> = vec![Vec::new(); grid.len()];
    let mut failures: Vec<Vec<String>> = vec![Vec::new(); grid.len()];
    let mut sorted = outcomes;
    sorted.sort_by_key(|(k, _)| *k);
    for ((gi, r), out) in sorted {
        match out {
            Ok(v) => per_point[gi].push(v),
            Err(msg) => failures[gi].push(format!("split {r}: {msg}")),
        }
    }

    let points = grid
        .iter()
        .enumerate()
        .map(|(gi, &value)| {
            let cells = &per_point[gi];
            let k = cells.len().max(1) as Real;
            let mean_of = |f: &dyn Fn(&(Real, Real, Real, f64, Real)) -> Real| -> Real {
                cells.iter().map(|c| f(c)).sum::<Real>() / k
            };
            let mean_test = mean_of(&|c| c.0);
            let var = cells
                .iter()
                .map(|c| (c.0 - mean_test) * (c.0 - mean_test))
                .sum::<Real>()
                / k;
            SweepPoint {
                value,
                mean_test_score: mean_test,
                std_test_score: var.sqrt(),
                mean_val_score: mean_of(&|c| c.1),
                mean_best_iteration: mean_of(&|c| c.2),
                mean_wall_seconds: cells.iter().map(|c| c.3).sum::<f64>() / k as f64,
                mean_lambda_init: mean_of(&|c| c.4),
                completed: cells.len(),
                failures: failures[gi].clone(),
            }
        })
        .collect();

    Ok(SweepReport {
        param: param.name().to_string(),
        dataset: dataset_name.to_string(),
        repeats,
        points,
    })
}

// ---------------------------------------------------------------------
// Dataset x method benchmark
// ---------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub dataset: String,
    pub method: String,
    pub seed: u64,
    pub config: MlrConfig,
    pub split_seeds: Vec<u64>,
    /// metric -> one score per split
    pub metrics: BTreeMap<String, Vec<Real>>,
    /// metric -> (mean, std)
    pub aggregates: BTreeMap<String, (Real, Real)>,
}

pub struct BenchOutcome {
    /// One score table per metric ("r2", "rmse" or "accuracy", "auc").
    pub tables: Vec<(String, ScoreTable)>,
    pub runs: Vec<RunReport>,
}

/// Train every method on every dataset over `splits` fresh 80:20 splits.
pub fn run_bench(
    datasets: &[(String, Dataset)],
    methods: &[String],
    base: &MlrConfig,
    splits: usize,
    seed: u64,
) -> Result<BenchOutcome> {
    for m in methods {
        method_spec(m, base.depth)?;
    }
    let mut jobs = Vec::new();
    for ds in 0..datasets.len() {
        for mi in 0..methods.len() {
            for s in 0..splits {
                jobs.push((ds, mi, s));
            }
        }
    }
    type CellScores = std::result::Result<BTreeMap<String, Real>, String>;
    let outcomes: Vec<((usize, usize, usize), CellScores)> = jobs
        .par_iter()
        .map(|&(ds, mi, s)| {
            let run = || -> Result<BTreeMap<String, Real>> {
                let (name, dataset) = &datasets[ds];
                let _ = name;
                let split_seed = seed.wrapping_add(s as u64);
                let (tr, te) = train_test_split(dataset, 0.2, split_seed, FitMode::TrainOnly)?;
                let spec = method_spec(&methods[mi], base.depth)?;
                let member_seed = derive_seed(seed, &[ds as u64, mi as u64, s as u64]);
                let ensemble = train_ensemble(&spec, base, &tr.x, &tr.y, member_seed)?;
                let preds = ensemble.predict(&te.x)?;
                let mut out = BTreeMap::new();
                match dataset.task {
                    TaskKind::Regression => {
                        out.insert("r2".to_string(), metrics::r2_score(&te.y, &preds)?);
                        out.insert("rmse".to_string(), metrics::rmse(&te.y, &preds)?);
                    }
                    TaskKind::Classification => {
                        let labels: Vec<Real> = preds
                            .iter()
                            .map(|&p| if p > 0.5 { 1.0 } else { 0.0 })
                            .collect();
                        out.insert("accuracy".to_string(), metrics::accuracy(&te.y, &labels)?);
                        out.insert("auc".to_string(), metrics::auc_score(&te.y, &preds)?);
                    }
                }
                Ok(out)
            };
            ((ds, mi, s), run().map_err(|e| e.to_string()))
        })
        .collect();

    let mut by_cell: BTreeMap<(usize, usize, usize), BTreeMap<String, Real>> = BTreeMap::new();
    for (key, out) in outcomes {
        match out {
            Ok(v) => {
                by_cell.insert(key, v);
            }
            Err(msg) => {
                return Err(Error::InvalidConfig(format!(
                    "bench cell (dataset {}, method {}, split {}) failed: {msg}",
                    datasets[key.0].0, methods[key.1], key.2
                )))
            }
        }
    }

    let metric_names: Vec<String> = match datasets.first().map(|(_, d)| d.task) {
        Some(TaskKind::Classification) => vec!["accuracy".into(), "auc".into()],
        _ => vec!["r2".into(), "rmse".into()],
    };

    let mut tables = Vec::new();
    for metric in &metric_names {
        let mut scores = Vec::new();
        for ds in 0..datasets.len() {
            let mut row = Vec::new();
            for mi in 0..methods.len() {
                let cell: Vec<Real> = (0..splits)
                    .map(|s| by_cell[&(ds, mi, s)][metric])
                    .collect();
                row.push(cell);
            }
            scores.push(row);
        }
        tables.push((
            metric.clone(),
            ScoreTable::from_scores(
                datasets.iter().map(|(n, _)| n.clone()).collect(),
                methods.to_vec(),
                &scores,
            )?,
        ));
    }

    let mut runs = Vec::new();
    for (ds, (name, _)) in datasets.iter().enumerate() {
        for (mi, method) in methods.iter().enumerate() {
            let mut per_metric: BTreeMap<String, Vec<Real>> = BTreeMap::new();
            for s in 0..splits {
                for (metric, &v) in &by_cell[&(ds, mi, s)] {
                    per_metric.entry(metric.clone()).or_default().push(v);
                }
            }
            let aggregates = per_metric
                .iter()
                .map(|(m, vs)| {
                    let n = vs.len() as Real;
                    let mean = vs.iter().sum::<Real>() / n;
                    let var = vs.iter().map(|v| (v - mean) * (v - mean)).sum::<Real>() / n;
                    (m.clone(), (mean, var.sqrt()))
                })
                .collect();
            runs.push(RunReport {
                dataset: name.clone(),
                method: method.clone(),
                seed,
                config: base.clone(),
                split_seeds: (0..splits).map(|s| seed.wrapping_add(s as u64)).collect(),
                metrics: per_metric,
                aggregates,
            });
        }
    }
    Ok(BenchOutcome { tables, runs })
}

// ---------------------------------------------------------------------
// Report files
// ---------------------------------------------------------------------

/// `{dataset}_{method}_{seed}.report`: the full JSON run record.
pub fn write_run_report(dir: &Path, report: &RunReport) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(format!(
        "{}_{}_{}.report",
        report.dataset, report.method, report.seed
    ));
    let text = serde_json::to_string_pretty(report)
        .map_err(|e| Error::InvalidConfig(format!("report serialization: {e}")))?;
    std::fs::write(&path, text)?;
    Ok(path)
}

#[derive(Debug, Clone, Serialize)]
pub struct AggregateRow {
    pub dataset: String,
    pub method: String,
    pub metric: String,
    pub mean: Real,
    pub std: Real,
    pub n_splits: usize,
}

/// Aggregate CSV with one row per (dataset, method, metric).
pub fn write_aggregate_csv(path: &Path, rows: &[AggregateRow]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["dataset", "method", "metric", "mean", "std", "n_splits"])?;
    for r in rows {
        w.write_record([
            r.dataset.as_str(),
            r.method.as_str(),
            r.metric.as_str(),
            &format!("{}", r.mean),
            &format!("{}", r.std),
            &format!("{}", r.n_splits),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn aggregate_rows(tables: &[(String, ScoreTable)]) -> Vec<AggregateRow> {
    let mut rows = Vec::new();
    for (metric, table) in tables {
        for (d, dataset) in table.datasets().iter().enumerate() {
            for (m, method) in table.methods().iter().enumerate() {
                rows.push(AggregateRow {
                    dataset: dataset.clone(),
                    method: method.clone(),
                    metric: metric.clone(),
                    mean: table.mean(d, m),
                    std: table.std(d, m),
                    n_splits: table.n_splits(),
                });
            }
        }
    }
    rows
}

/// Fixed-width text table.
pub fn format_table(headers: &[String], rows: &[Vec<String>]) -> String {
    let ncols = headers.len();
    let mut widths: Vec<usize> = headers.iter().map(|h| h.len()).collect();
    for row in rows {
        for (j, cell) in row.iter().enumerate() {
            widths[j] = widths[j].max(cell.len());
        }
    }
    let lined = |cells: &[String]| -> String {
        let mut s = String::new();
        for j in 0..ncols {
            if j > 0 {
                s.push_str("  ");
            }
            s.push_str(&format!("{:<width$}", cells[j], width = widths[j]));
        }
        s.push('\n');
        s
    };
    let mut out = lined(headers);
    out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (ncols - 1)));
    out.push('\n');
    for row in rows {
        out.push_str(&lined(row));
    }
    out
}

/// Cross-method summary lines (mean rank, P90/95/98, PMA) for a score table.
pub fn summary_table_text(metric: &str, table: &ScoreTable) -> String {
    let ranks = metrics::friedman_rank(table);
    let p90 = metrics::p_at(table, 0.90);
    let p95 = metrics::p_at(table, 0.95);
    let p98 = metrics::p_at(table, 0.98);
    let pma = metrics::pma(table);
    let headers: Vec<String> = [
        "method", "f.rank", "mean", "p90", "p95", "p98", "pma",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let rows: Vec<Vec<String>> = table
        .methods()
        .iter()
        .enumerate()
        .map(|(m, method)| {
            let means: Vec<Real> = (0..table.datasets().len())
                .map(|d| table.mean(d, m))
                .collect();
            let grand = means.iter().sum::<Real>() / means.len() as Real;
            vec![
                method.clone(),
                format!("{:.3}", ranks[m]),
                format!("{grand:.3}"),
                format!("{:.3}", p90[m]),
                format!("{:.3}", p95[m]),
                format!("{:.3}", p98[m]),
                format!("{:.3}", pma.excluding[m]),
            ]
        })
        .collect();
    format!("metric: {metric}\n{}", format_table(&headers, &rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_tasks_are_reproducible_and_scaled() {
        for kind in SyntheticKind::ALL {
            let a = synthetic_dataset(kind, 60, 5, 0.6, 3);
            let b = synthetic_dataset(kind, 60, 5, 0.6, 3);
            assert_eq!(a.y, b.y, "{kind:?} not deterministic");
            // standardized target
            let mean = a.y.iter().sum::<Real>() / a.y.len() as Real;
            assert!(mean.abs() < 1e-8);
        }
    }

    #[test]
    fn ridge_variant_is_full_with_switches_off() {
        let base = MlrConfig::default();
        let ridge = AblationVariant::Ridge.configure(&base);
        let mut manual = AblationVariant::Full.configure(&base);
        manual.permutations = 0;
        manual.sigma_struct = 0.0;
        // identical configs mean identical runs by construction
        assert_eq!(
            serde_json::to_string(&ridge).unwrap(),
            serde_json::to_string(&manual).unwrap()
        );
    }

    #[test]
    fn sweep_param_parsing() {
        assert_eq!(SweepParam::parse("T").unwrap(), SweepParam::Permutations);
        assert_eq!(
            SweepParam::parse("sigma-struct").unwrap(),
            SweepParam::SigmaStruct
        );
        assert!(SweepParam::parse("bogus").is_err());
        let mut cfg = MlrConfig::default();
        SweepParam::Width.apply(&mut cfg, 64.0);
        assert_eq!(cfg.width, 64);
        SweepParam::LambdaInit.apply(&mut cfg, 10.0);
        assert_eq!(cfg.lambda_init_override, Some(10.0));
    }

    #[test]
    fn small_sweep_runs() {
        let ds = synthetic_dataset(SyntheticKind::Linear, 60, 4, 0.6, 11);
        let base = MlrConfig {
            width: 8,
            permutations: 2,
            max_iter: Some(8),
            budget_seconds: None,
            ..MlrConfig::default()
        };
        let report = run_sweep("lin", &ds, SweepParam::Permutations, &[0.0, 2.0], &base, 2, 5)
            .unwrap();
        assert_eq!(report.points.len(), 2);
        assert_eq!(report.points[0].completed, 2);
        assert!(report.points[0].failures.is_empty());
        // deterministic rerun
        let again = run_sweep("lin", &ds, SweepParam::Permutations, &[0.0, 2.0], &base, 2, 5)
            .unwrap();
        assert_eq!(
            serde_json::to_string(&report.points).unwrap(),
            serde_json::to_string(&again.points).unwrap()
        );
    }

    #[test]
    fn format_table_alignment() {
        let txt = format_table(
            &["a".into(), "long-header".into()],
            &[
                vec!["1".into(), "2".into()],
                vec!["333".into(), "4".into()],
            ],
        );
        let lines: Vec<&str> = txt.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[0].starts_with("a  "));
        assert!(lines[2].starts_with("1  "));
    }
}
