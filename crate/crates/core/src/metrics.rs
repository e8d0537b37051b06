//! Scores and cross-dataset aggregate statistics.
//!
//! Per-model scores: R^2, accuracy, RMSE, BCE, AUC. Aggregates over a
//! datasets-by-methods score table: mean rank, fraction-of-maximum
//! thresholds (P90/P95/P98), and percentage-of-maximum (PMA).

use crate::autograd::bce_term;
use crate::error::{Error, Result};
use crate::matrix::Real;

fn check_lengths(op: &'static str, a: &[Real], b: &[Real]) -> Result<()> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::shape(
            op,
            format!("{} vs {} values", a.len(), b.len()),
        ));
    }
    Ok(())
}

/// 1 - SS_res / SS_tot. 1 for a perfect fit, 0 for predicting the mean,
/// negative when worse than the mean.
pub fn r2_score(y_true: &[Real], y_pred: &[Real]) -> Result<Real> {
    check_lengths("r2_score", y_true, y_pred)?;
    if y_true.len() < 2 {
        return Err(Error::shape("r2_score", "need at least 2 samples"));
    }
    let n = y_true.len() as Real;
    let mean = y_true.iter().sum::<Real>() / n;
    let ss_tot: Real = y_true.iter().map(|&v| (v - mean) * (v - mean)).sum();
    if ss_tot <= 0.0 {
        return Err(Error::ZeroVariance);
    }
    let ss_res: Real = y_true
        .iter()
        .zip(y_pred.iter())
        .map(|(&t, &p)| (t - p) * (t - p))
        .sum();
    Ok(1.0 - ss_res / ss_tot)
}

pub fn accuracy(y_true: &[Real], labels: &[Real]) -> Result<Real> {
    check_lengths("accuracy", y_true, labels)?;
    let hits = y_true
        .iter()
        .zip(labels.iter())
        .filter(|(&t, &p)| t == p)
        .count();
    Ok(hits as Real / y_true.len() as Real)
}

pub fn rmse(y_true: &[Real], y_pred: &[Real]) -> Result<Real> {
    check_lengths("rmse", y_true, y_pred)?;
    let n = y_true.len() as Real;
    let ss: Real = y_true
        .iter()
        .zip(y_pred.iter())
        .map(|(&t, &p)| (t - p) * (t - p))
        .sum();
    Ok((ss / n).sqrt())
}

/// Mean binary cross-entropy of logits against 0/1 labels, evaluated in the
/// numerically stable logits form.
pub fn bce(y_true: &[Real], logits: &[Real]) -> Result<Real> {
    check_lengths("bce", y_true, logits)?;
    let n = y_true.len() as Real;
    Ok(y_true
        .iter()
        .zip(logits.iter())
        .map(|(&t, &z)| bce_term(t, z))
        .sum::<Real>()
        / n)
}

/// Probability that a random positive outscores a random negative, ties
/// counted half. Computed by rank summation with average ranks for ties.
pub fn auc_score(y_true: &[Real], scores: &[Real]) -> Result<Real> {
    check_lengths("auc_score", y_true, scores)?;
    let n_pos = y_true.iter().filter(|&&v| v == 1.0).count();
    let n_neg = y_true.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    let mut rank_sum_pos = 0.0 as Real;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1..=j+1 share the average rank
        let avg_rank = (i + j + 2) as Real / 2.0;
        for &idx in &order[i..=j] {
            if y_true[idx] == 1.0 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let np = n_pos as Real;
    Ok((rank_sum_pos - np * (np + 1.0) / 2.0) / (np * n_neg as Real))
}

/// Datasets-by-methods table of mean scores over repeated splits.
#[derive(Debug, Clone)]
pub struct ScoreTable {
    datasets: Vec<String>,
    methods: Vec<String>,
    /// means[dataset][method]
    means: Vec<Vec<Real>>,
    stds: Vec<Vec<Real>>,
    n_splits: usize,
}

impl ScoreTable {
    /// Build from raw per-split scores, scores[dataset][method][split].
    /// Every cell must carry the same number of splits.
    pub fn from_scores(
        datasets: Vec<String>,
        methods: Vec<String>,
        scores: &[Vec<Vec<Real>>],
    ) -> Result<Self> {
        if scores.len() != datasets.len() {
            return Err(Error::shape("ScoreTable", "dataset row count"));
        }
        let mut n_splits = None;
        let mut means = Vec::new();
        let mut stds = Vec::new();
        for row in scores {
            if row.len() != methods.len() {
                return Err(Error::shape("ScoreTable", "method column count"));
            }
            let mut mrow = Vec::new();
            let mut srow = Vec::new();
            for cell in row {
                match n_splits {
                    None => n_splits = Some(cell.len()),
                    Some(k) if k == cell.len() => {}
                    Some(k) => {
                        return Err(Error::shape(
                            "ScoreTable",
                            format!("cell has {} splits, expected {k}", cell.len()),
                        ))
                    }
                }
                let n = cell.len() as Real;
                let mean = cell.iter().sum::<Real>() / n;
                let var = cell.iter().map(|v| (v - mean) * (v - mean)).sum::<Real>() / n;
                mrow.push(mean);
                srow.push(var.sqrt());
            }
            means.push(mrow);
            stds.push(srow);
        }
        Ok(ScoreTable {
            datasets,
            methods,
            means,
            stds,
            n_splits: n_splits.unwrap_or(0),
        })
    }

    pub fn datasets(&self) -> &[String] {
        &self.datasets
    }

    pub fn methods(&self) -> &[String] {
        &self.methods
    }

    pub fn n_splits(&self) -> usize {
        self.n_splits
    }

    pub fn mean(&self, dataset: usize, method: usize) -> Real {
        self.means[dataset][method]
    }

    pub fn std(&self, dataset: usize, method: usize) -> Real {
        self.stds[dataset][method]
    }
}

/// Mean rank of each method over datasets; rank 1 is the best score on a
/// dataset, ties share the average of their ranks.
pub fn friedman_rank(table: &ScoreTable) -> Vec<Real> {
    let m = table.methods.len();
    let mut totals = vec![0.0 as Real; m];
    for row in &table.means {
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap());
        let mut i = 0;
        while i < m {
            let mut j = i;
            while j + 1 < m && row[order[j + 1]] == row[order[i]] {
                j += 1;
            }
            let avg_rank = (i + j + 2) as Real / 2.0;
            for &idx in &order[i..=j] {
                totals[idx] += avg_rank;
            }
            i = j + 1;
        }
    }
    let d = table.datasets.len() as Real;
    totals.iter().map(|t| t / d).collect()
}

/// Fraction of datasets on which each method reaches `threshold` times the
/// per-dataset best score.
pub fn p_at(table: &ScoreTable, threshold: Real) -> Vec<Real> {
    let m = table.methods.len();
    let d = table.datasets.len();
    let mut counts = vec![0usize; m];
    for row in &table.means {
        let best = row.iter().cloned().fold(Real::NEG_INFINITY, Real::max);
        for (j, &v) in row.iter().enumerate() {
            if v >= threshold * best {
                counts[j] += 1;
            }
        }
    }
    counts.iter().map(|&c| c as Real / d as Real).collect()
}

/// Percentage-of-maximum aggregates under both conventions for datasets
/// whose best score is not positive: exclude them (the default reading) or
/// divide anyway.
#[derive(Debug, Clone)]
pub struct PmaReport {
    /// Mean of score/max over datasets with a positive max.
    pub excluding: Vec<Real>,
    /// Mean of score/max over all datasets, dividing regardless of sign.
    pub dividing: Vec<Real>,
    /// How many datasets the excluding convention dropped.
    pub excluded_datasets: usize,
}

pub fn pma(table: &ScoreTable) -> PmaReport {
    let m = table.methods.len();
    let mut sum_ex = vec![0.0 as Real; m];
    let mut sum_div = vec![0.0 as Real; m];
    let mut kept = 0usize;
    for row in &table.means {
        let best = row.iter().cloned().fold(Real::NEG_INFINITY, Real::max);
        if best > 0.0 {
            kept += 1;
            for (j, &v) in row.iter().enumerate() {
                sum_ex[j] += v / best;
            }
        }
        for (j, &v) in row.iter().enumerate() {
            sum_div[j] += v / best;
        }
    }
    let d = table.datasets.len();
    PmaReport {
        excluding: sum_ex
            .iter()
            .map(|&s| if kept > 0 { s / kept as Real } else { Real::NAN })
            .collect(),
        dividing: sum_div.iter().map(|&s| s / d as Real).collect(),
        excluded_datasets: d - kept,
    }
}
