//! Ensembles of independently trained networks: bagging over seeds,
//! depth-mixed pools, and validation-based selection.
//!
//! Members differ only by their derived seeds (initialization, validation
//! split, noise); training rows are not bootstrap-resampled. Aggregation is
//! the mean of member predictions for regression and the mean of logistic
//! scores for classification.

use crate::autograd::sigmoid;
use crate::error::{Error, Result};
use crate::matrix::{Matrix, Real};
use crate::model::{MlrConfig, TaskKind, TrainedModel};
use crate::train::{train, TrainRecord};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EnsembleKind {
    /// One network.
    Single,
    /// Mean of equal-depth members.
    Bag,
    /// Mean of the depth-1 and depth-2 bags pooled together.
    Ens,
    /// The member with the best validation score.
    Best,
    /// Mean of the five best members by validation score.
    Top5,
}

/// Which members to train and how to aggregate them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub kind: EnsembleKind,
    /// One entry per member.
    pub depths: Vec<usize>,
}

impl EnsembleSpec {
    pub fn single(depth: usize) -> Self {
        EnsembleSpec {
            kind: EnsembleKind::Single,
            depths: vec![depth],
        }
    }

    /// Ten members of one depth.
    pub fn bag(depth: usize) -> Self {
        EnsembleSpec {
            kind: EnsembleKind::Bag,
            depths: vec![depth; 10],
        }
    }

    fn pool_depths() -> Vec<usize> {
        let mut depths = vec![1; 10];
        depths.extend(vec![2; 10]);
        depths
    }

    /// Twenty members: the depth-1 bag plus the depth-2 bag.
    pub fn ens() -> Self {
        EnsembleSpec {
            kind: EnsembleKind::Ens,
            depths: Self::pool_depths(),
        }
    }

    pub fn best() -> Self {
        EnsembleSpec {
            kind: EnsembleKind::Best,
            depths: Self::pool_depths(),
        }
    }

    pub fn top5() -> Self {
        EnsembleSpec {
            kind: EnsembleKind::Top5,
            depths: Self::pool_depths(),
        }
    }

    pub fn member_count(&self) -> usize {
        self.depths.len()
    }
}

/// Method-name shorthand used by the CLI and the benchmark runner.
/// `single`/`mlrN` train one network, `bagN` a 10-bag, and `ens`/`best`/
/// `top5` share the 20-member pool.
pub fn method_spec(name: &str, default_depth: usize) -> Result<EnsembleSpec> {
    let spec = match name {
        "single" => EnsembleSpec::single(default_depth),
        "mlr1" => EnsembleSpec::single(1),
        "mlr2" => EnsembleSpec::single(2),
        "mlr3" => EnsembleSpec::single(3),
        "mlr4" => EnsembleSpec::single(4),
        "bag1" => EnsembleSpec::bag(1),
        "bag2" => EnsembleSpec::bag(2),
        "ens" => EnsembleSpec::ens(),
        "best" => EnsembleSpec::best(),
        "top5" => EnsembleSpec::top5(),
        other => {
            return Err(Error::InvalidConfig(format!(
                "unknown method '{other}' (expected single, mlr1-4, bag1, bag2, ens, best, top5)"
            )))
        }
    };
    Ok(spec)
}

/// Trained members plus their validation scores and any recorded failures.
pub struct EnsembleModel {
    pub spec: EnsembleSpec,
    pub task: TaskKind,
    pub members: Vec<TrainedModel>,
    pub records: Vec<TrainRecord>,
    /// Validation score per member, aligned with `members`.
    pub val_scores: Vec<Real>,
    /// (member index, error text) for members that failed to train.
    pub failures: Vec<(usize, String)>,
}

/// Train every member with seeds master_seed + i. Members run in parallel;
/// results are merged in member order, so the outcome does not depend on
/// scheduling. Fails when more than half the members fail.
pub fn train_ensemble(
    spec: &EnsembleSpec,
    base: &MlrConfig,
    x: &Matrix,
    y: &[Real],
    master_seed: u64,
) -> Result<EnsembleModel> {
    if spec.depths.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    let results: Vec<(usize, std::result::Result<(TrainedModel, TrainRecord), String>)> = spec
        .depths
        .par_iter()
        .enumerate()
        .map(|(i, &depth)| {
            let cfg = MlrConfig {
                depth,
                seed: master_seed.wrapping_add(i as u64),
                ..base.clone()
            };
            let out = train(&cfg, x, y).map_err(|e| e.to_string());
            (i, out)
        })
        .collect();

    let mut members = Vec::new();
    let mut records = Vec::new();
    let mut val_scores = Vec::new();
    let mut failures = Vec::new();
    for (i, res) in results {
        match res {
            Ok((model, record)) => {
                val_scores.push(record.best_val_score);
                members.push(model);
                records.push(record);
            }
            Err(msg) => failures.push((i, msg)),
        }
    }
    if failures.len() * 2 > spec.depths.len() {
        return Err(Error::InvalidConfig(format!(
            "{} of {} ensemble members failed; first failure: {}",
            failures.len(),
            spec.depths.len(),
            failures[0].1
        )));
    }
    if members.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    Ok(EnsembleModel {
        spec: spec.clone(),
        task: base.task,
        members,
        records,
        val_scores,
        failures,
    })
}

/// Member indices participating in the aggregate for a given kind:
/// everyone for mean kinds, the argmax for best, the five highest scores
/// for top5 (ties keep the lower index).
pub fn selected_members(kind: EnsembleKind, val_scores: &[Real]) -> Vec<usize> {
    match kind {
        EnsembleKind::Single | EnsembleKind::Bag | EnsembleKind::Ens => {
            (0..val_scores.len()).collect()
        }
        EnsembleKind::Best => {
            let mut best = 0;
            for (i, &s) in val_scores.iter().enumerate() {
                if s > val_scores[best] {
                    best = i;
                }
            }
            vec![best]
        }
        EnsembleKind::Top5 => {
            let mut order: Vec<usize> = (0..val_scores.len()).collect();
            order.sort_by(|&a, &b| {
                val_scores[b]
                    .partial_cmp(&val_scores[a])
                    .unwrap()
                    .then(a.cmp(&b))
            });
            order.truncate(5.min(order.len()));
            order.sort_unstable();
            order
        }
    }
}

/// Aggregate prediction: for regression the mean of raw member predictions,
/// for classification the mean of logistic scores (threshold at 0.5 for a
/// label).
pub fn ensemble_predict(
    members: &[TrainedModel],
    val_scores: &[Real],
    kind: EnsembleKind,
    task: TaskKind,
    x_new: &Matrix,
) -> Result<Vec<Real>> {
    if members.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    let chosen = selected_members(kind, val_scores);
    let mut acc = vec![0.0 as Real; x_new.rows()];
    for &i in &chosen {
        let raw = members[i].predict_raw(x_new)?;
        match task {
            TaskKind::Regression => {
                for (a, v) in acc.iter_mut().zip(raw.iter()) {
                    *a += v;
                }
            }
            TaskKind::Classification => {
                for (a, &v) in acc.iter_mut().zip(raw.iter()) {
                    *a += sigmoid(v);
                }
            }
        }
    }
    let k = chosen.len() as Real;
    Ok(acc.into_iter().map(|v| v / k).collect())
}

impl EnsembleModel {
    /// Mean prediction (regression) or mean probability (classification).
    pub fn predict(&self, x_new: &Matrix) -> Result<Vec<Real>> {
        ensemble_predict(
            &self.members,
            &self.val_scores,
            self.spec.kind,
            self.task,
            x_new,
        )
    }

    /// 0/1 labels from the aggregated probability.
    pub fn predict_labels(&self, x_new: &Matrix) -> Result<Vec<Real>> {
        Ok(self
            .predict(x_new)?
            .into_iter()
            .map(|p| if p > 0.5 { 1.0 } else { 0.0 })
            .collect())
    }
}
