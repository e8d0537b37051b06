//! Dataset ingestion and preprocessing: cleaning, imputation, encoding,
//! standardization, and split management.
//!
//! The pipeline, in order: drop rows with a missing target, drop constant
//! features, encode by modality count (2 distinct values -> binary, up to 12
//! -> one-hot, more -> dropped; numeric features with at most 12 distinct
//! values are treated as categorical), impute numeric missing values with
//! the training mean (categorical missing becomes its own class), then
//! standardize numeric features and the regression target with training
//! statistics.
//!
//! Transform statistics are fitted on the train side of a split by default;
//! `FitMode::WholeData` restores whole-dataset fitting for replication runs.

use crate::error::{Error, Result};
use crate::matrix::{Matrix, Real};
use crate::model::TaskKind;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::collections::HashMap;
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(Real),
    Text(String),
    Missing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ColumnKind {
    #[serde(alias = "numeric", alias = "num")]
    Numeric,
    #[serde(alias = "categorical", alias = "cat")]
    Categorical,
    #[serde(alias = "target")]
    Target,
}

/// A parsed rectangular table. Exactly one column is the target.
#[derive(Debug, Clone)]
pub struct RawTable {
    pub names: Vec<String>,
    pub kinds: Vec<ColumnKind>,
    pub rows: Vec<Vec<Cell>>,
}

impl RawTable {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn target_index(&self) -> Option<usize> {
        self.kinds.iter().position(|&k| k == ColumnKind::Target)
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Subset of rows as a new table.
    pub fn select_rows(&self, idx: &[usize]) -> RawTable {
        RawTable {
            names: self.names.clone(),
            kinds: self.kinds.clone(),
            rows: idx.iter().map(|&i| self.rows[i].clone()).collect(),
        }
    }
}

/// Optional sidecar pinning column kinds, the target column, and the task.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SchemaHints {
    #[serde(default)]
    pub target: Option<String>,
    #[serde(default)]
    pub task: Option<TaskKind>,
    #[serde(default)]
    pub columns: HashMap<String, ColumnKind>,
}

impl SchemaHints {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| Error::SchemaMismatch(format!("bad schema file: {e}")))
    }
}

fn parse_cell_numeric(field: &str) -> Cell {
    let t = field.trim();
    if t.is_empty() {
        return Cell::Missing;
    }
    match t.parse::<Real>() {
        Ok(v) if v.is_finite() => Cell::Num(v),
        _ => Cell::Missing,
    }
}

fn parse_cell_categorical(field: &str) -> Cell {
    let t = field.trim();
    if t.is_empty() {
        Cell::Missing
    } else {
        Cell::Text(t.to_string())
    }
}

fn read_csv_grid(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    let names: Vec<String> = headers.iter().map(|h| h.trim().to_string()).collect();
    if names.is_empty() || names.iter().all(|n| n.is_empty()) {
        return Err(Error::NoHeader {
            path: path.display().to_string(),
        });
    }
    let mut grid: Vec<Vec<String>> = Vec::new();
    for record in reader.records() {
        let record = record?;
        grid.push(record.iter().map(|f| f.to_string()).collect());
    }
    if grid.is_empty() {
        return Err(Error::EmptyTable {
            path: path.display().to_string(),
        });
    }
    Ok((names, grid))
}

fn assemble_rows(names: &[String], grid: &[Vec<String>], kinds: &[ColumnKind]) -> Vec<Vec<Cell>> {
    let _ = names;
    grid.iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .map(|(j, f)| match kinds[j] {
                    ColumnKind::Numeric => parse_cell_numeric(f),
                    ColumnKind::Categorical => parse_cell_categorical(f),
                    // target cells: numeric when possible, else text
                    ColumnKind::Target => {
                        let t = f.trim();
                        if t.is_empty() {
                            Cell::Missing
                        } else if let Ok(v) = t.parse::<Real>() {
                            if v.is_finite() {
                                Cell::Num(v)
                            } else {
                                Cell::Missing
                            }
                        } else {
                            Cell::Text(t.to_string())
                        }
                    }
                })
                .collect()
        })
        .collect()
}

/// Load a comma-separated UTF-8 file with a header row; empty fields are
/// missing. Column kinds are inferred (all-parseable -> numeric) and then
/// overridden by hints. The target defaults to the last column.
pub fn load_csv(path: &Path, hints: &SchemaHints) -> Result<RawTable> {
    let (names, grid) = read_csv_grid(path)?;

    let target_idx = match &hints.target {
        Some(name) => names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::SchemaMismatch(format!("target column '{name}' not found")))?,
        None => names.len() - 1,
    };

    let mut kinds = Vec::with_capacity(names.len());
    for (j, name) in names.iter().enumerate() {
        if j == target_idx {
            kinds.push(ColumnKind::Target);
            continue;
        }
        let hinted = hints.columns.get(name).copied();
        let kind = match hinted {
            Some(ColumnKind::Target) => {
                return Err(Error::SchemaMismatch(format!(
                    "column '{name}' hinted as target but target is '{}'",
                    names[target_idx]
                )))
            }
            Some(k) => k,
            None => {
                let numeric = grid.iter().all(|row| {
                    let f = row[j].trim();
                    f.is_empty() || f.parse::<Real>().map(|v| v.is_finite()).unwrap_or(false)
                });
                if numeric {
                    ColumnKind::Numeric
                } else {
                    ColumnKind::Categorical
                }
            }
        };
        kinds.push(kind);
    }

    let rows = assemble_rows(&names, &grid, &kinds);
    Ok(RawTable { names, kinds, rows })
}

/// Load a prediction-time file using the kinds recorded in a fitted
/// transform, so cells parse exactly as they did at fit time. The target
/// column is optional; unknown columns are parsed as categorical and
/// ignored by the encoder.
pub fn load_csv_for_transform(path: &Path, transform: &Transform) -> Result<RawTable> {
    let (names, grid) = read_csv_grid(path)?;
    let kinds: Vec<ColumnKind> = names
        .iter()
        .map(|name| {
            if *name == transform.target_name {
                ColumnKind::Target
            } else {
                transform
                    .columns
                    .iter()
                    .find(|c| c.name == *name)
                    .map(|c| c.source_kind)
                    .unwrap_or(ColumnKind::Categorical)
            }
        })
        .collect();
    let rows = assemble_rows(&names, &grid, &kinds);
    Ok(RawTable { names, kinds, rows })
}

/// Category identity; missing sorts after every real value.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CatKey {
    Value(String),
    Missing,
}

impl CatKey {
    fn from_cell(cell: &Cell) -> CatKey {
        match cell {
            Cell::Num(v) => CatKey::Value(format!("{v}")),
            Cell::Text(s) => CatKey::Value(s.clone()),
            Cell::Missing => CatKey::Missing,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FeatureEncoding {
    /// Constant or over the 12-modality cutoff.
    Dropped,
    /// Numeric: impute with the training mean, then center and scale.
    Standardized { impute: Real, mean: Real, std: Real },
    /// Two modalities (a missing class counts as one).
    Binary { zero: CatKey, one: CatKey },
    /// 3 to 12 modalities; unseen values map to the all-zeros row.
    OneHot { categories: Vec<CatKey> },
}

impl FeatureEncoding {
    pub fn output_width(&self) -> usize {
        match self {
            FeatureEncoding::Dropped => 0,
            FeatureEncoding::Standardized { .. } | FeatureEncoding::Binary { .. } => 1,
            FeatureEncoding::OneHot { categories } => categories.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedColumn {
    pub name: String,
    /// Kind the column had in the fitted table, so prediction-time files
    /// parse cells the same way (numeric text must canonicalize before
    /// category lookup).
    pub source_kind: ColumnKind,
    pub encoding: FeatureEncoding,
}

/// Fitted preprocessing state: per-feature encodings plus target statistics.
/// Immutable after fitting; application is a pure map over rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transform {
    pub task: TaskKind,
    pub target_name: String,
    pub columns: Vec<FittedColumn>,
    /// Regression target statistics (mean, population std).
    pub target_mean: Real,
    pub target_std: Real,
    /// Classification label values in (class 0, class 1) order.
    pub classes: Option<(String, String)>,
}

const MODALITY_CUTOFF: usize = 12;

fn population_std(values: &[Real], mean: Real) -> Real {
    let n = values.len() as Real;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<Real>() / n;
    let std = var.sqrt();
    if std < 1e-12 {
        1.0
    } else {
        std
    }
}

fn target_cell_as_label(cell: &Cell) -> Option<String> {
    match cell {
        Cell::Num(v) => Some(format!("{v}")),
        Cell::Text(s) => Some(s.clone()),
        Cell::Missing => None,
    }
}

impl Transform {
    /// Fit encodings and statistics on the given rows. Rows with a missing
    /// target are skipped here and in `apply`.
    pub fn fit(raw: &RawTable, task: TaskKind, rows: &[usize]) -> Result<Transform> {
        let target_idx = raw
            .target_index()
            .ok_or_else(|| Error::SchemaMismatch("no target column".into()))?;
        let kept: Vec<usize> = rows
            .iter()
            .copied()
            .filter(|&i| raw.rows[i][target_idx] != Cell::Missing)
            .collect();
        if kept.is_empty() {
            return Err(Error::TooFewSamples {
                required: 1,
                actual: 0,
            });
        }

        let mut columns = Vec::new();
        for (j, name) in raw.names.iter().enumerate() {
            if j == target_idx {
                continue;
            }
            let cells: Vec<&Cell> = kept.iter().map(|&i| &raw.rows[i][j]).collect();
            let encoding = match raw.kinds[j] {
                ColumnKind::Numeric => fit_numeric(&cells),
                ColumnKind::Categorical => fit_categorical(&cells),
                ColumnKind::Target => unreachable!(),
            };
            columns.push(FittedColumn {
                name: name.clone(),
                source_kind: raw.kinds[j],
                encoding,
            });
        }
        if columns
            .iter()
            .all(|c| c.encoding == FeatureEncoding::Dropped)
        {
            return Err(Error::NoUsableFeatures);
        }

        let (target_mean, target_std, classes) = match task {
            TaskKind::Regression => {
                let values: Vec<Real> = kept
                    .iter()
                    .map(|&i| match &raw.rows[i][target_idx] {
                        Cell::Num(v) => Ok(*v),
                        other => Err(Error::SchemaMismatch(format!(
                            "regression target has non-numeric value {other:?}"
                        ))),
                    })
                    .collect::<Result<_>>()?;
                let mean = values.iter().sum::<Real>() / values.len() as Real;
                let std = population_std(&values, mean);
                (mean, std, None)
            }
            TaskKind::Classification => {
                let mut labels = BTreeSet::new();
                for &i in &kept {
                    if let Some(l) = target_cell_as_label(&raw.rows[i][target_idx]) {
                        labels.insert(l);
                    }
                }
                if labels.len() < 2 {
                    return Err(Error::SingleClassTarget);
                }
                if labels.len() > 2 {
                    return Err(Error::SchemaMismatch(format!(
                        "target has {} classes; only binary classification is supported",
                        labels.len()
                    )));
                }
                let mut it = labels.into_iter();
                (0.0, 1.0, Some((it.next().unwrap(), it.next().unwrap())))
            }
        };

        Ok(Transform {
            task,
            target_name: raw.names[target_idx].clone(),
            columns,
            target_mean,
            target_std,
            classes,
        })
    }

    pub fn output_dim(&self) -> usize {
        self.columns.iter().map(|c| c.encoding.output_width()).sum()
    }

    /// Encode features and target for rows of a table with the same columns.
    /// Rows with a missing target are dropped.
    pub fn apply(&self, raw: &RawTable, rows: &[usize]) -> Result<(Matrix, Vec<Real>)> {
        let target_idx = raw
            .column_index(&self.target_name)
            .ok_or_else(|| Error::SchemaMismatch(format!("missing column '{}'", self.target_name)))?;
        let kept: Vec<usize> = rows
            .iter()
            .copied()
            .filter(|&i| raw.rows[i][target_idx] != Cell::Missing)
            .collect();
        let x = self.encode_features(raw, &kept)?;
        let mut y = Vec::with_capacity(kept.len());
        for &i in &kept {
            y.push(self.encode_target(&raw.rows[i][target_idx])?);
        }
        Ok((x, y))
    }

    /// Feature encoding only, for prediction-time tables that may lack the
    /// target column.
    pub fn apply_features(&self, raw: &RawTable, rows: &[usize]) -> Result<Matrix> {
        self.encode_features(raw, rows)
    }

    fn encode_features(&self, raw: &RawTable, rows: &[usize]) -> Result<Matrix> {
        // Resolve source column indices by name so reordered files still work.
        let mut src = Vec::with_capacity(self.columns.len());
        for col in &self.columns {
            if col.encoding == FeatureEncoding::Dropped {
                src.push(usize::MAX);
                continue;
            }
            let idx = raw
                .column_index(&col.name)
                .ok_or_else(|| Error::SchemaMismatch(format!("missing column '{}'", col.name)))?;
            src.push(idx);
        }
        let d = self.output_dim();
        let mut x = Matrix::zeros(rows.len(), d);
        for (r, &i) in rows.iter().enumerate() {
            let mut c = 0usize;
            for (col, &j) in self.columns.iter().zip(src.iter()) {
                match &col.encoding {
                    FeatureEncoding::Dropped => {}
                    FeatureEncoding::Standardized { impute, mean, std } => {
                        let v = match &raw.rows[i][j] {
                            Cell::Num(v) => *v,
                            _ => *impute,
                        };
                        x.set(r, c, (v - mean) / std);
                        c += 1;
                    }
                    FeatureEncoding::Binary { one, .. } => {
                        let key = CatKey::from_cell(&raw.rows[i][j]);
                        x.set(r, c, if key == *one { 1.0 } else { 0.0 });
                        c += 1;
                    }
                    FeatureEncoding::OneHot { categories } => {
                        let key = CatKey::from_cell(&raw.rows[i][j]);
                        if let Some(pos) = categories.iter().position(|k| *k == key) {
                            x.set(r, c + pos, 1.0);
                        }
                        c += categories.len();
                    }
                }
            }
        }
        Ok(x)
    }

    fn encode_target(&self, cell: &Cell) -> Result<Real> {
        match self.task {
            TaskKind::Regression => match cell {
                Cell::Num(v) => Ok((v - self.target_mean) / self.target_std),
                other => Err(Error::SchemaMismatch(format!(
                    "regression target has non-numeric value {other:?}"
                ))),
            },
            TaskKind::Classification => {
                let (zero, one) = self.classes.as_ref().expect("classification classes");
                let label = target_cell_as_label(cell)
                    .ok_or_else(|| Error::SchemaMismatch("missing target label".into()))?;
                if label == *zero {
                    Ok(0.0)
                } else if label == *one {
                    Ok(1.0)
                } else {
                    Err(Error::SchemaMismatch(format!(
                        "unseen target label '{label}'"
                    )))
                }
            }
        }
    }

    /// Map a standardized prediction back to original target units.
    pub fn inverse_target(&self, v: Real) -> Real {
        match self.task {
            TaskKind::Regression => v * self.target_std + self.target_mean,
            TaskKind::Classification => v,
        }
    }

    /// Label string for a 0/1 prediction.
    pub fn class_label(&self, label: Real) -> Option<&str> {
        self.classes
            .as_ref()
            .map(|(zero, one)| if label > 0.5 { one.as_str() } else { zero.as_str() })
    }
}

fn fit_numeric(cells: &[&Cell]) -> FeatureEncoding {
    let mut distinct: BTreeSet<String> = BTreeSet::new();
    let mut present: Vec<Real> = Vec::new();
    let mut missing = false;
    for cell in cells {
        match cell {
            Cell::Num(v) => {
                distinct.insert(format!("{v}"));
                present.push(*v);
            }
            _ => missing = true,
        }
    }
    if present.is_empty() {
        return FeatureEncoding::Dropped;
    }
    if distinct.len() <= MODALITY_CUTOFF {
        // low-cardinality numerics are categorical
        let keys: Vec<&Cell> = cells.to_vec();
        return fit_as_classes(&keys);
    }
    let impute = present.iter().sum::<Real>() / present.len() as Real;
    let full: Vec<Real> = cells
        .iter()
        .map(|c| match c {
            Cell::Num(v) => *v,
            _ => impute,
        })
        .collect();
    let mean = full.iter().sum::<Real>() / full.len() as Real;
    let std = population_std(&full, mean);
    let _ = missing;
    FeatureEncoding::Standardized { impute, mean, std }
}

fn fit_categorical(cells: &[&Cell]) -> FeatureEncoding {
    fit_as_classes(cells)
}

/// Shared modality-count rule: 1 class -> dropped, 2 -> binary, up to the
/// cutoff -> one-hot, beyond -> dropped. A missing class counts.
fn fit_as_classes(cells: &[&Cell]) -> FeatureEncoding {
    let mut classes: BTreeSet<CatKey> = BTreeSet::new();
    for cell in cells {
        classes.insert(CatKey::from_cell(cell));
    }
    let keys: Vec<CatKey> = classes.into_iter().collect();
    match keys.len() {
        0 | 1 => FeatureEncoding::Dropped,
        2 => FeatureEncoding::Binary {
            zero: keys[0].clone(),
            one: keys[1].clone(),
        },
        n if n <= MODALITY_CUTOFF => FeatureEncoding::OneHot { categories: keys },
        _ => FeatureEncoding::Dropped,
    }
}

/// Whether split transforms are fitted on the train side only (the default,
/// leak-free) or on the whole dataset (replication mode).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FitMode {
    TrainOnly,
    WholeData,
}

/// A preprocessed dataset: encoded matrices plus the raw table and fitted
/// transform that produced them.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub raw: RawTable,
    pub task: TaskKind,
    pub transform: Transform,
    pub x: Matrix,
    pub y: Vec<Real>,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.x.rows()
    }

    pub fn d(&self) -> usize {
        self.x.cols()
    }
}

/// Fit on all rows and encode all rows.
pub fn preprocess(raw: RawTable, task: TaskKind) -> Result<Dataset> {
    let rows: Vec<usize> = (0..raw.n_rows()).collect();
    let transform = Transform::fit(&raw, task, &rows)?;
    let (x, y) = transform.apply(&raw, &rows)?;
    if !x.is_finite() {
        return Err(Error::SchemaMismatch(
            "non-finite values after preprocessing".into(),
        ));
    }
    Ok(Dataset {
        raw,
        task,
        transform,
        x,
        y,
    })
}

/// Deterministic unstratified 80:20-style split. Transform statistics are
/// re-fitted on the train side (or the whole data in replication mode) and
/// applied to both sides.
pub fn train_test_split(
    dataset: &Dataset,
    test_fraction: f64,
    seed: u64,
    mode: FitMode,
) -> Result<(Dataset, Dataset)> {
    let raw = &dataset.raw;
    let target_idx = raw
        .target_index()
        .ok_or_else(|| Error::SchemaMismatch("no target column".into()))?;
    let usable: Vec<usize> = (0..raw.n_rows())
        .filter(|&i| raw.rows[i][target_idx] != Cell::Missing)
        .collect();
    let n = usable.len();
    if n < 10 {
        return Err(Error::TooFewSamples {
            required: 10,
            actual: n,
        });
    }
    let n_test = ((test_fraction * n as f64).floor() as usize).max(1);
    let mut order = usable;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut test_rows: Vec<usize> = order[..n_test].to_vec();
    let mut train_rows: Vec<usize> = order[n_test..].to_vec();
    test_rows.sort_unstable();
    train_rows.sort_unstable();

    let fit_rows: Vec<usize> = match mode {
        FitMode::TrainOnly => train_rows.clone(),
        FitMode::WholeData => (0..raw.n_rows()).collect(),
    };
    let transform = Transform::fit(raw, dataset.task, &fit_rows)?;
    let (x_tr, y_tr) = transform.apply(raw, &train_rows)?;
    let (x_te, y_te) = transform.apply(raw, &test_rows)?;
    Ok((
        Dataset {
            raw: raw.select_rows(&train_rows),
            task: dataset.task,
            transform: transform.clone(),
            x: x_tr,
            y: y_tr,
        },
        Dataset {
            raw: raw.select_rows(&test_rows),
            task: dataset.task,
            transform,
            x: x_te,
            y: y_te,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_csv(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f.flush().unwrap();
        f
    }

    fn load(content: &str, hints: &SchemaHints) -> RawTable {
        let f = write_csv(content);
        load_csv(f.path(), hints).unwrap()
    }

    #[test]
    fn blank_numeric_cell_is_missing() {
        let t = load("a,b,y\n1.0,x,2.0\n,y,3.0\n2.5,z,4.0\n", &SchemaHints::default());
        assert_eq!(t.kinds, vec![
            ColumnKind::Numeric,
            ColumnKind::Categorical,
            ColumnKind::Target
        ]);
        assert_eq!(t.rows[1][0], Cell::Missing);
        assert_eq!(t.rows[0][0], Cell::Num(1.0));
        assert_eq!(t.rows[2][1], Cell::Text("z".into()));
    }

    #[test]
    fn kind_inference_mixed_table() {
        // string column -> categorical, digits -> numeric
        let t = load(
            "num,cat,y\n1,red,0.1\n2,green,0.2\n3,red,0.3\n",
            &SchemaHints::default(),
        );
        assert_eq!(t.kinds[0], ColumnKind::Numeric);
        assert_eq!(t.kinds[1], ColumnKind::Categorical);
    }

    #[test]
    fn empty_and_headerless_files() {
        let f = write_csv("");
        assert!(matches!(
            load_csv(f.path(), &SchemaHints::default()),
            Err(Error::NoHeader { .. })
        ));
        let f2 = write_csv("a,b,y\n");
        assert!(matches!(
            load_csv(f2.path(), &SchemaHints::default()),
            Err(Error::EmptyTable { .. })
        ));
    }

    #[test]
    fn constant_column_loads_then_drops() {
        let t = load(
            "c,x,y\n5,0.13,1\n5,2.4,2\n5,3.71,3\n5,4.9,4\n5,6.2,5\n5,7.77,6\n5,9.01,7\n5,10.3,8\n5,11.82,9\n5,13.05,10\n5,14.6,11\n5,15.9,12\n5,17.23,13\n",
            &SchemaHints::default(),
        );
        let ds = preprocess(t, TaskKind::Regression).unwrap();
        // constant column dropped, the 13-distinct-value column kept numeric
        assert_eq!(ds.d(), 1);
        assert_eq!(ds.transform.columns[0].encoding, FeatureEncoding::Dropped);
    }

    #[test]
    fn low_cardinality_numeric_is_one_hot() {
        // 12 distinct values -> one-hot, not standardized
        let mut rows = String::from("x,extra,y\n");
        for i in 0..24 {
            rows.push_str(&format!("{},{}.5,{}\n", i % 12, i, i));
        }
        let t = load(&rows, &SchemaHints::default());
        let ds = preprocess(t, TaskKind::Regression).unwrap();
        match &ds.transform.columns[0].encoding {
            FeatureEncoding::OneHot { categories } => assert_eq!(categories.len(), 12),
            other => panic!("expected one-hot, got {other:?}"),
        }
        // 12 one-hot + 1 numeric
        assert_eq!(ds.d(), 13);
    }

    #[test]
    fn thirteen_modalities_dropped() {
        let mut rows = String::from("cat,x,y\n");
        for i in 0..26 {
            rows.push_str(&format!("c{},{}.25,{}\n", i % 13, i, i));
        }
        let t = load(&rows, &SchemaHints::default());
        let ds = preprocess(t, TaskKind::Regression).unwrap();
        assert_eq!(ds.transform.columns[0].encoding, FeatureEncoding::Dropped);
        assert_eq!(ds.d(), 1);
    }

    #[test]
    fn target_standardization_hand_case() {
        let t = load(
            "x,y\n0.5,1\n1.75,2\n3.25,3\n",
            &SchemaHints::default(),
        );
        let ds = preprocess(t, TaskKind::Regression).unwrap();
        let expected = [-1.224744871391589, 0.0, 1.224744871391589];
        for (got, want) in ds.y.iter().zip(expected.iter()) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
        // inverse transform round-trips
        for (std_v, orig) in ds.y.iter().zip([1.0, 2.0, 3.0]) {
            let back = ds.transform.inverse_target(*std_v);
            assert!((back - orig).abs() < 1e-12);
        }
    }

    #[test]
    fn missing_rows_and_imputation() {
        let mut csv = String::from("x,y\n,2\n3.0,\n");
        for i in 0..16 {
            csv.push_str(&format!("{}.25,{}\n", 2 * i + 5, i));
        }
        let t = load(&csv, &SchemaHints::default());
        let ds = preprocess(t, TaskKind::Regression).unwrap();
        // the missing-target row is gone
        assert_eq!(ds.n(), 17);
        assert!(ds.x.is_finite());
        // standardized column has mean ~0 and std ~1
        let col: Vec<Real> = (0..ds.n()).map(|i| ds.x.get(i, 0)).collect();
        let mean = col.iter().sum::<Real>() / col.len() as Real;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<Real>() / col.len() as Real;
        assert!(mean.abs() < 1e-8);
        assert!((var.sqrt() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn classification_target_mapping() {
        let t = load(
            "x,y\n1.5,no\n2.5,yes\n3.5,no\n4.5,yes\n5.5,yes\n6.5,no\n7.5,yes\n8.5,no\n9.5,yes\n10.5,no\n11.5,yes\n12.5,no\n13.5,yes\n",
            &SchemaHints::default(),
        );
        let ds = preprocess(t, TaskKind::Classification).unwrap();
        // sorted labels: "no" -> 0, "yes" -> 1
        assert_eq!(ds.transform.classes, Some(("no".into(), "yes".into())));
        assert_eq!(ds.y[0], 0.0);
        assert_eq!(ds.y[1], 1.0);

        let single = load("x,y\n1.5,a\n2.5,a\n3.5,a\n", &SchemaHints::default());
        assert!(matches!(
            preprocess(single, TaskKind::Classification),
            Err(Error::SingleClassTarget)
        ));
    }

    #[test]
    fn split_sizes_and_fit_on_train_contract() {
        let mut rows = String::from("x,y\n");
        for i in 0..100 {
            rows.push_str(&format!("{}.125,{}\n", i, i));
        }
        let t = load(&rows, &SchemaHints::default());
        let ds = preprocess(t, TaskKind::Regression).unwrap();
        let (tr, te) = train_test_split(&ds, 0.2, 7, FitMode::TrainOnly).unwrap();
        assert_eq!((tr.n(), te.n()), (80, 20));
        // same seed reproduces the same split
        let (tr2, _) = train_test_split(&ds, 0.2, 7, FitMode::TrainOnly).unwrap();
        assert_eq!(tr.y, tr2.y);
        // different seed differs
        let (tr3, _) = train_test_split(&ds, 0.2, 8, FitMode::TrainOnly).unwrap();
        assert_ne!(tr.y, tr3.y);
        // transform statistics come from the train side only: the fitted
        // mean reflects train rows, and both sides share the same transform
        assert_eq!(tr.transform, te.transform);
        match &tr.transform.columns[0].encoding {
            FeatureEncoding::Standardized { mean, .. } => {
                let train_mean: Real = (0..tr.raw.n_rows())
                    .map(|i| match tr.raw.rows[i][0] {
                        Cell::Num(v) => v,
                        _ => 0.0,
                    })
                    .sum::<Real>()
                    / tr.n() as Real;
                assert!((mean - train_mean).abs() < 1e-9);
            }
            other => panic!("expected standardized, got {other:?}"),
        }
    }

    #[test]
    fn unseen_category_maps_to_zeros() {
        let mut rows = String::from("c,x,y\n");
        for i in 0..20 {
            rows.push_str(&format!("k{},{}.5,{}\n", i % 4, i, i));
        }
        let t = load(&rows, &SchemaHints::default());
        let ds = preprocess(t, TaskKind::Regression).unwrap();
        let mut other = ds.raw.clone();
        other.rows[0][0] = Cell::Text("brand-new".into());
        let x = ds.transform.apply_features(&other, &[0]).unwrap();
        // first four columns are the one-hot block
        for j in 0..4 {
            assert_eq!(x.get(0, j), 0.0);
        }
    }

    #[test]
    fn preprocess_idempotent_on_clean_numeric_data() {
        let mut rows = String::from("a,b,y\n");
        for i in 0..40 {
            let a = (i as f64) * 0.37 + 0.11;
            let b = (i as f64) * -0.13 + 5.0;
            rows.push_str(&format!("{a},{b},{}\n", a * 2.0 - b));
        }
        let t = load(&rows, &SchemaHints::default());
        let ds = preprocess(t, TaskKind::Regression).unwrap();

        // feed the standardized matrix back through as a fresh table
        let names = vec!["a".to_string(), "b".to_string(), "y".to_string()];
        let kinds = vec![ColumnKind::Numeric, ColumnKind::Numeric, ColumnKind::Target];
        let rows2: Vec<Vec<Cell>> = (0..ds.n())
            .map(|i| {
                vec![
                    Cell::Num(ds.x.get(i, 0)),
                    Cell::Num(ds.x.get(i, 1)),
                    Cell::Num(ds.y[i]),
                ]
            })
            .collect();
        let t2 = RawTable {
            names,
            kinds,
            rows: rows2,
        };
        let ds2 = preprocess(t2, TaskKind::Regression).unwrap();
        // already standardized: a second pass changes nothing
        assert!(ds.x.max_abs_diff(&ds2.x) < 1e-12);
    }

    #[test]
    fn column_width_accounting() {
        let mut rows = String::from("bin,hot,num,y\n");
        for i in 0..30 {
            rows.push_str(&format!(
                "{},g{},{}.77,{}\n",
                i % 2,
                i % 5,
                i,
                i
            ));
        }
        let t = load(&rows, &SchemaHints::default());
        let ds = preprocess(t, TaskKind::Regression).unwrap();
        // 1 (binary) + 5 (one-hot) + 1 (numeric) = 7
        assert_eq!(ds.d(), 7);
        let widths: Vec<usize> = ds
            .transform
            .columns
            .iter()
            .map(|c| c.encoding.output_width())
            .collect();
        assert_eq!(widths.iter().sum::<usize>(), 7);
    }

    #[test]
    fn schema_hints_override() {
        let mut hints = SchemaHints::default();
        hints.target = Some("a".into());
        hints
            .columns
            .insert("b".into(), ColumnKind::Categorical);
        let t = load("a,b,c\n1,2,3\n4,5,6\n7,8,9\n", &hints);
        assert_eq!(t.kinds[0], ColumnKind::Target);
        assert_eq!(t.kinds[1], ColumnKind::Categorical);
        assert_eq!(t.kinds[2], ColumnKind::Numeric);
    }
}
