//! The ridge-head network: hidden stack, closed-form output layer, label
//! permutations, structured dithering, and the training losses built on them.
//!
//! The output layer is never a learned weight matrix (except for the plain
//! baseline head used in ablations): predictions are A W_out with
//! W_out = (A'A + lambda I)^-1 A' Y computed from the training activations.
//! The regression loss compares the in-sample ridge fit of the true labels
//! against the fit of randomly permuted labels; a model that fits permuted
//! labels well is memorizing, and the loss pushes against it. Structured
//! dithering adds (I - H) xi noise that concentrates along the directions
//! the ridge head barely uses.

use crate::autograd::{bce_term, sigmoid, Gradients, NodeId, Tape};
use crate::error::{Error, Result};
use crate::matrix::{spd_factor, CholeskyFactor, Matrix, Real};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TaskKind {
    Regression,
    Classification,
}

/// Output layer variant. `Ridge` is the closed-form head; `LearnedMse` is
/// the plain gradient-trained output layer used as the ablation baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HeadKind {
    Ridge,
    LearnedMse,
}

/// Depth-indexed learning rate: 1e-2, 1e-3, 10^-3.5, 1e-4 for L = 1..4.
pub fn default_learning_rate(depth: usize) -> Real {
    match depth {
        1 => 1e-2,
        2 => 1e-3,
        3 => (10.0 as Real).powf(-3.5),
        _ => 1e-4,
    }
}

/// Depth-indexed iteration cap: 200 for L <= 2, 400 for deeper stacks.
pub fn default_max_iter(depth: usize) -> usize {
    if depth <= 2 {
        200
    } else {
        400
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MlrConfig {
    pub task: TaskKind,
    /// Depth L in {1,2,3,4}. L-1 hidden layers feed the closed-form head;
    /// L=1 applies the head directly to the raw features.
    pub depth: usize,
    /// Hidden width J.
    pub width: usize,
    /// Number of label permutations T.
    pub permutations: usize,
    /// Scale of the structured dithering noise.
    pub sigma_struct: Real,
    /// Label dither scale; None picks the task default (0.03 regression,
    /// 0 classification).
    pub label_dither: Option<Real>,
    /// None picks the depth default.
    pub learning_rate: Option<Real>,
    /// None picks the depth default.
    pub max_iter: Option<usize>,
    /// Wall-clock training budget; None disables it (deterministic mode).
    pub budget_seconds: Option<f64>,
    /// None applies the min(n, J) rule.
    pub batch_size: Option<usize>,
    pub validation_fraction: f64,
    pub seed: u64,
    pub head: HeadKind,
    /// Skip the grid heuristic and start lambda here instead.
    pub lambda_init_override: Option<Real>,
    /// Restore the best-validation checkpoint after training. The plain
    /// baseline net trains the standard way and keeps its final weights.
    pub restore_best: bool,
}

impl Default for MlrConfig {
    fn default() -> Self {
        MlrConfig {
            task: TaskKind::Regression,
            depth: 2,
            width: 1 << 10,
            permutations: 16,
            sigma_struct: 1.0,
            label_dither: None,
            learning_rate: None,
            max_iter: None,
            budget_seconds: Some(300.0),
            batch_size: None,
            validation_fraction: 0.2,
            seed: 0,
            head: HeadKind::Ridge,
            lambda_init_override: None,
            restore_best: true,
        }
    }
}

impl MlrConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=4).contains(&self.depth) {
            return Err(Error::InvalidConfig(format!(
                "depth must be in 1..=4, got {}",
                self.depth
            )));
        }
        if self.width < 1 {
            return Err(Error::InvalidConfig("width must be >= 1".into()));
        }
        if self.sigma_struct < 0.0 {
            return Err(Error::InvalidConfig("sigma_struct must be >= 0".into()));
        }
        if let Some(s) = self.label_dither {
            if s < 0.0 {
                return Err(Error::InvalidConfig("label_dither must be >= 0".into()));
            }
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::InvalidConfig(
                "validation_fraction must be in [0,1)".into(),
            ));
        }
        Ok(())
    }

    pub fn learning_rate(&self) -> Real {
        self.learning_rate
            .unwrap_or_else(|| default_learning_rate(self.depth))
    }

    pub fn max_iter(&self) -> usize {
        self.max_iter.unwrap_or_else(|| default_max_iter(self.depth))
    }

    pub fn label_dither_sigma(&self) -> Real {
        self.label_dither.unwrap_or(match self.task {
            TaskKind::Regression => 0.03,
            TaskKind::Classification => 0.0,
        })
    }

    pub fn batch_size_for(&self, n: usize) -> usize {
        self.batch_size.unwrap_or(self.width).min(n).max(1)
    }
}

/// Hidden-layer weights and biases plus the trainable log ridge scale.
/// The output layer is not here: the ridge head replaces it.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// W^1 is d x J, the rest J x J; empty when depth = 1.
    pub weights: Vec<Matrix>,
    /// One 1 x J row per hidden layer.
    pub biases: Vec<Matrix>,
    /// Gradient-trained output column (J x 1), baseline head only.
    pub head_weights: Option<Matrix>,
    pub log_lambda: Real,
}

impl ModelParams {
    pub fn lambda(&self) -> Real {
        self.log_lambda.exp()
    }

    pub fn hidden_layers(&self) -> usize {
        self.weights.len()
    }

    /// Flat tensor list (weights, biases, head, log-lambda as 1x1), used by
    /// the finite-difference checker and the optimizer.
    pub fn to_tensors(&self) -> Vec<Matrix> {
        let mut out = Vec::new();
        out.extend(self.weights.iter().cloned());
        out.extend(self.biases.iter().cloned());
        if let Some(h) = &self.head_weights {
            out.push(h.clone());
        }
        out.push(Matrix::scalar(self.log_lambda));
        out
    }

    pub fn from_tensors(&self, tensors: &[Matrix]) -> ModelParams {
        let nw = self.weights.len();
        let nb = self.biases.len();
        let mut it = tensors.iter();
        let weights: Vec<Matrix> = (0..nw).map(|_| it.next().unwrap().clone()).collect();
        let biases: Vec<Matrix> = (0..nb).map(|_| it.next().unwrap().clone()).collect();
        let head_weights = self.head_weights.as_ref().map(|_| it.next().unwrap().clone());
        let log_lambda = it.next().unwrap().as_scalar();
        ModelParams {
            weights,
            biases,
            head_weights,
            log_lambda,
        }
    }
}

/// Glorot-style uniform init: W^1 on +-sqrt(6/(d+J)), deeper hidden layers
/// on +-sqrt(6/(2J)); biases zero.
pub fn init_weights(d: usize, width: usize, depth: usize, seed: u64) -> ModelParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for layer in 1..depth {
        let (rows, cols, bound) = if layer == 1 {
            (d, width, (6.0 / (d + width) as Real).sqrt())
        } else {
            (width, width, (6.0 / (2 * width) as Real).sqrt())
        };
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        weights.push(Matrix::from_vec(rows, cols, data));
        biases.push(Matrix::zeros(1, width));
    }
    ModelParams {
        weights,
        biases,
        head_weights: None,
        log_lambda: 0.0,
    }
}

/// Output column for the gradient-trained baseline head, +-sqrt(6/(J+1)).
pub fn init_head_weights(width: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let bound = (6.0 / (width + 1) as Real).sqrt();
    let data = (0..width).map(|_| rng.random_range(-bound..bound)).collect();
    Matrix::from_vec(width, 1, data)
}

/// Last hidden activation A^{L-1}; the identity map when depth = 1.
pub fn forward_hidden(params: &ModelParams, x: &Matrix) -> Result<Matrix> {
    if params.weights.is_empty() {
        return Ok(x.clone());
    }
    if x.cols() != params.weights[0].rows() {
        return Err(Error::shape(
            "forward_hidden",
            format!(
                "input has {} columns, first layer expects {}",
                x.cols(),
                params.weights[0].rows()
            ),
        ));
    }
    let mut a = x.clone();
    for (w, b) in params.weights.iter().zip(params.biases.iter()) {
        let mut z = a.matmul(w);
        for i in 0..z.rows() {
            for j in 0..z.cols() {
                let v = z.get(i, j) + b.get(0, j);
                z.set(i, j, if v > 0.0 { v } else { 0.0 });
            }
        }
        a = z;
    }
    Ok(a)
}

/// T uniform permutations of 0..n, drawn once and frozen.
#[derive(Debug, Clone)]
pub struct PermutationSet {
    perms: Vec<Vec<usize>>,
    seed: u64,
}

/// Fisher-Yates draws, deterministic per seed.
pub fn sample_permutations(n: usize, t: usize, seed: u64) -> PermutationSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut set = sample_permutations_with(&mut rng, n, t);
    set.seed = seed;
    set
}

/// Fisher-Yates draws from an existing stream (per-batch redraws).
pub fn sample_permutations_with(rng: &mut ChaCha8Rng, n: usize, t: usize) -> PermutationSet {
    let mut perms = Vec::with_capacity(t);
    for _ in 0..t {
        let mut p: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            p.swap(i, j);
        }
        perms.push(p);
    }
    PermutationSet { perms, seed: 0 }
}

impl PermutationSet {
    pub fn len(&self) -> usize {
        self.perms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perms.is_empty()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn get(&self, t: usize) -> &[usize] {
        &self.perms[t]
    }

    /// pi(Y)_i = Y_{pi(i)}.
    pub fn apply(&self, t: usize, y: &[Real]) -> Vec<Real> {
        self.perms[t].iter().map(|&i| y[i]).collect()
    }

    pub fn apply_all(&self, y: &[Real]) -> Vec<Vec<Real>> {
        (0..self.perms.len()).map(|t| self.apply(t, y)).collect()
    }

    pub fn fixed_points(&self, t: usize) -> usize {
        self.perms[t].iter().enumerate().filter(|(i, &p)| *i == p).count()
    }
}

/// Structured-dither draws, already scaled by sigma_struct. A zero scale
/// yields exact zero vectors without consuming the stream.
#[derive(Debug, Clone)]
pub struct LossNoise {
    pub xi: Vec<Real>,
    pub xi_ts: Vec<Vec<Real>>,
}

impl LossNoise {
    pub fn zeros(n: usize, t: usize) -> Self {
        LossNoise {
            xi: vec![0.0; n],
            xi_ts: vec![vec![0.0; n]; t],
        }
    }
}

pub fn sample_loss_noise(
    n: usize,
    t: usize,
    sigma_struct: Real,
    rng: &mut ChaCha8Rng,
) -> LossNoise {
    if sigma_struct == 0.0 {
        return LossNoise::zeros(n, t);
    }
    let mut draw = |count: usize| -> Vec<Real> {
        (0..count)
            .map(|_| {
                let z: Real = rng.sample(StandardNormal);
                sigma_struct * z
            })
            .collect()
    };
    let xi = draw(n);
    let xi_ts = (0..t).map(|_| draw(n)).collect();
    LossNoise { xi, xi_ts }
}

/// Fresh gaussian label noise on the target and each permuted copy.
/// A zero scale returns exact copies.
pub fn label_dither(
    y: &[Real],
    perm_ys: &[Vec<Real>],
    sigma: Real,
    rng: &mut ChaCha8Rng,
) -> (Vec<Real>, Vec<Vec<Real>>) {
    if sigma == 0.0 {
        return (y.to_vec(), perm_ys.to_vec());
    }
    let mut dither = |v: &[Real]| -> Vec<Real> {
        v.iter()
            .map(|&x| {
                let z: Real = rng.sample(StandardNormal);
                x + sigma * z
            })
            .collect()
    };
    let y_eps = dither(y);
    let perm_eps = perm_ys.iter().map(|p| dither(p)).collect();
    (y_eps, perm_eps)
}

/// Cached pieces of the hat application H v = A (A'A + lambda I)^-1 A' v
/// that do not depend on lambda.
pub struct RidgeApply {
    a: Matrix,
    gram: Matrix,
}

impl RidgeApply {
    pub fn new(a: &Matrix) -> Self {
        RidgeApply {
            a: a.clone(),
            gram: a.gram(),
        }
    }

    pub fn hat(&self, lambda: Real) -> Result<RidgeHat<'_>> {
        let mut m = self.gram.clone();
        for i in 0..m.rows() {
            let v = m.get(i, i);
            m.set(i, i, v + lambda);
        }
        Ok(RidgeHat {
            apply: self,
            factor: spd_factor(&m)?,
        })
    }
}

pub struct RidgeHat<'a> {
    apply: &'a RidgeApply,
    factor: CholeskyFactor,
}

impl RidgeHat<'_> {
    /// H v for one or more columns, through the factorization.
    pub fn apply(&self, v: &Matrix) -> Matrix {
        let u = self.apply.a.tr_matmul(v);
        let s = self.factor.solve(&u);
        self.apply.a.matmul(&s)
    }

    /// (A'A + lambda I)^-1 A' y: the cached output weights.
    pub fn output_weights(&self, y: &Matrix) -> Matrix {
        let u = self.apply.a.tr_matmul(y);
        self.factor.solve(&u)
    }
}

fn rmse_slices(a: &[Real], b: &[Real]) -> Real {
    let n = a.len() as Real;
    let ss: Real = a
        .iter()
        .zip(b.iter())
        .map(|(&x, &y)| {
            let d = x - y;
            d * d
        })
        .sum();
    (ss / n).sqrt()
}

/// RMSE of the target against its own mean: the fit achieved without
/// looking at the features.
pub fn rmse_baseline(y: &[Real]) -> Real {
    let mean = y.iter().sum::<Real>() / y.len() as Real;
    let flat = vec![mean; y.len()];
    rmse_slices(y, &flat)
}

/// Regression loss given a hat application. Generic over the application so
/// closed-form limits (H = identity, H = 0) can be exercised exactly.
pub fn mlr_loss_with_hat<F>(
    hat: F,
    y: &[Real],
    y_dithered: &[Real],
    perm_ys_dithered: &[Vec<Real>],
    noise: &LossNoise,
) -> Real
where
    F: Fn(&Matrix) -> Matrix,
{
    let n = y.len();
    let t_count = perm_ys_dithered.len();
    assert_eq!(noise.xi_ts.len(), t_count, "noise draws must match T");

    // Single hat application over all stacked columns.
    let mut cols: Vec<Matrix> = Vec::with_capacity(2 * (t_count + 1));
    cols.push(Matrix::column(y_dithered.to_vec()));
    cols.push(Matrix::column(noise.xi.clone()));
    for (p, xi_t) in perm_ys_dithered.iter().zip(noise.xi_ts.iter()) {
        cols.push(Matrix::column(p.clone()));
        cols.push(Matrix::column(xi_t.clone()));
    }
    let refs: Vec<&Matrix> = cols.iter().collect();
    let stacked = Matrix::hcat(&refs);
    let hv = hat(&stacked);

    let col = |j: usize| -> Vec<Real> { (0..n).map(|i| hv.get(i, j)).collect() };

    // RMSE(Y_eps + (I-H) xi ; H Y_eps)
    let h_y = col(0);
    let h_xi = col(1);
    let lhs: Vec<Real> = (0..n)
        .map(|i| y_dithered[i] + (noise.xi[i] - h_xi[i]))
        .collect();
    let first = rmse_slices(&lhs, &h_y);

    if t_count == 0 {
        return first;
    }
    let baseline = rmse_baseline(y);
    let mut acc = 0.0;
    for (t, (p, xi_t)) in perm_ys_dithered.iter().zip(noise.xi_ts.iter()).enumerate() {
        let h_p = col(2 + 2 * t);
        let h_xi_t = col(3 + 2 * t);
        let lhs: Vec<Real> = (0..n).map(|i| p[i] + (xi_t[i] - h_xi_t[i])).collect();
        let r = rmse_slices(&lhs, &h_p);
        acc += (baseline - r).abs();
    }
    first + acc * (1.0 / t_count as Real)
}

/// Regression loss value for activations `a` and ridge scale `lambda`.
pub fn mlr_loss_value(
    a: &Matrix,
    lambda: Real,
    y: &[Real],
    y_dithered: &[Real],
    perm_ys_dithered: &[Vec<Real>],
    noise: &LossNoise,
) -> Result<Real> {
    let apply = RidgeApply::new(a);
    let hat = apply.hat(lambda)?;
    Ok(mlr_loss_with_hat(
        |v| hat.apply(v),
        y,
        y_dithered,
        perm_ys_dithered,
        noise,
    ))
}

/// Mean stable BCE of constant logits `z0` against labels `y`.
fn bce_constant_logit(y: &[Real], z0: Real) -> Real {
    let n = y.len() as Real;
    y.iter().map(|&t| bce_term(t, z0)).sum::<Real>() / n
}

/// BCE of the class prior: every logit pinned at logit(mean(Y)).
pub fn bce_baseline(y: &[Real]) -> Result<Real> {
    let mean = y.iter().sum::<Real>() / y.len() as Real;
    if mean <= 0.0 || mean >= 1.0 {
        return Err(Error::DegenerateClass { mean: mean as f64 });
    }
    let z0 = (mean / (1.0 - mean)).ln();
    Ok(bce_constant_logit(y, z0))
}

fn bce_slices(target: &[Real], logits: &[Real]) -> Real {
    let n = target.len() as Real;
    target
        .iter()
        .zip(logits.iter())
        .map(|(&t, &z)| bce_term(t, z))
        .sum::<Real>()
        / n
}

/// Classification loss given a hat application. `perm_ys` are permuted
/// copies of the 0/1 labels; the +-1 recoding happens inside.
pub fn bce_mlr_loss_with_hat<F>(
    hat: F,
    y: &[Real],
    perm_ys: &[Vec<Real>],
    noise: &LossNoise,
) -> Result<Real>
where
    F: Fn(&Matrix) -> Matrix,
{
    let n = y.len();
    let t_count = perm_ys.len();
    assert_eq!(noise.xi_ts.len(), t_count, "noise draws must match T");
    let baseline = bce_baseline(y)?;

    let y_star: Vec<Real> = y.iter().map(|&v| 2.0 * v - 1.0).collect();
    let mut cols: Vec<Matrix> = Vec::with_capacity(2 * (t_count + 1));
    cols.push(Matrix::column(y_star.clone()));
    cols.push(Matrix::column(noise.xi.clone()));
    let perm_stars: Vec<Vec<Real>> = perm_ys
        .iter()
        .map(|p| p.iter().map(|&v| 2.0 * v - 1.0).collect())
        .collect();
    for (p_star, xi_t) in perm_stars.iter().zip(noise.xi_ts.iter()) {
        cols.push(Matrix::column(p_star.clone()));
        cols.push(Matrix::column(xi_t.clone()));
    }
    let refs: Vec<&Matrix> = cols.iter().collect();
    let stacked = Matrix::hcat(&refs);
    let hv = hat(&stacked);
    let col = |j: usize| -> Vec<Real> { (0..n).map(|i| hv.get(i, j)).collect() };

    // BCE(Y ; Y* + (I-H) xi + H Y*)
    let h_ystar = col(0);
    let h_xi = col(1);
    let z: Vec<Real> = (0..n)
        .map(|i| y_star[i] + (noise.xi[i] - h_xi[i]) + h_ystar[i])
        .collect();
    let first = bce_slices(y, &z);

    if t_count == 0 {
        return Ok(first);
    }
    let mut acc = 0.0;
    for (t, ((p, p_star), xi_t)) in perm_ys
        .iter()
        .zip(perm_stars.iter())
        .zip(noise.xi_ts.iter())
        .enumerate()
    {
        let h_p = col(2 + 2 * t);
        let h_xi_t = col(3 + 2 * t);
        let z: Vec<Real> = (0..n)
            .map(|i| p_star[i] + (xi_t[i] - h_xi_t[i]) + h_p[i])
            .collect();
        let term = bce_slices(p, &z);
        acc += (baseline - term).abs();
    }
    Ok(first + acc * (1.0 / t_count as Real))
}

pub fn bce_mlr_loss_value(
    a: &Matrix,
    lambda: Real,
    y: &[Real],
    perm_ys: &[Vec<Real>],
    noise: &LossNoise,
) -> Result<Real> {
    let apply = RidgeApply::new(a);
    let hat = apply.hat(lambda)?;
    bce_mlr_loss_with_hat(|v| hat.apply(v), y, perm_ys, noise)
}

/// Per-iteration loss inputs: dithered labels, permuted copies, noise.
#[derive(Debug, Clone)]
pub struct LossBatch {
    /// Clean labels (baseline terms use these).
    pub y: Vec<Real>,
    /// Dithered labels; equal to `y` when the dither scale is zero.
    pub y_dithered: Vec<Real>,
    /// Permuted (and, for regression, dithered) label copies.
    pub perm_ys: Vec<Vec<Real>>,
    pub noise: LossNoise,
}

/// Parameter node handles for one tape build.
pub struct TapeBindings {
    pub weight_nodes: Vec<NodeId>,
    pub bias_nodes: Vec<NodeId>,
    pub head_node: Option<NodeId>,
    pub log_lambda_node: Option<NodeId>,
    pub activations: NodeId,
    pub loss: NodeId,
    /// The ridge solve node; its factorization covers the batch normal
    /// matrix and can serve further right-hand sides.
    pub ridge_solve: Option<NodeId>,
}

/// Hidden stack on the tape; returns the activation node and parameter handles.
fn forward_hidden_on_tape(
    tape: &mut Tape,
    params: &ModelParams,
    x: &Matrix,
) -> (NodeId, Vec<NodeId>, Vec<NodeId>) {
    let mut a = tape.constant(x.clone());
    let mut weight_nodes = Vec::new();
    let mut bias_nodes = Vec::new();
    for (w, b) in params.weights.iter().zip(params.biases.iter()) {
        let wn = tape.param(w.clone());
        let bn = tape.param(b.clone());
        let z = tape.matmul(a, wn);
        let zb = tape.add_row_broadcast(z, bn);
        a = tape.relu(zb);
        weight_nodes.push(wn);
        bias_nodes.push(bn);
    }
    (a, weight_nodes, bias_nodes)
}

/// Hat products for all loss columns on the tape: one factorization, one
/// stacked solve, then column slices. Also returns the solve node so the
/// training loop can reuse its factorization for extra right-hand sides.
fn hat_columns_on_tape(
    tape: &mut Tape,
    a: NodeId,
    lambda: NodeId,
    columns: &[Vec<Real>],
) -> Result<(Vec<NodeId>, NodeId)> {
    let refs: Vec<Matrix> = columns.iter().map(|c| Matrix::column(c.clone())).collect();
    let refs2: Vec<&Matrix> = refs.iter().collect();
    let v = Matrix::hcat(&refs2);
    let vn = tape.constant(v);
    let gram = tape.gram(a);
    let m = tape.add_diag_scalar(gram, lambda);
    let u = tape.mat_t_mul(a, vn);
    let s = tape.spd_solve(m, u)?;
    let hv = tape.matmul(a, s);
    Ok((
        (0..columns.len()).map(|j| tape.cols(hv, j, 1)).collect(),
        s,
    ))
}

/// Regression loss on the tape, differentiable w.r.t. the activations and
/// the ridge scale node.
pub fn mlr_loss_on_tape(
    tape: &mut Tape,
    a: NodeId,
    lambda: NodeId,
    batch: &LossBatch,
) -> Result<(NodeId, NodeId)> {
    let t_count = batch.perm_ys.len();
    assert_eq!(batch.noise.xi_ts.len(), t_count);

    let mut columns: Vec<Vec<Real>> = Vec::with_capacity(2 * (t_count + 1));
    columns.push(batch.y_dithered.clone());
    columns.push(batch.noise.xi.clone());
    for (p, xi_t) in batch.perm_ys.iter().zip(batch.noise.xi_ts.iter()) {
        columns.push(p.clone());
        columns.push(xi_t.clone());
    }
    let (hv, solve) = hat_columns_on_tape(tape, a, lambda, &columns)?;

    let y_eps = tape.constant(Matrix::column(batch.y_dithered.clone()));
    let xi = tape.constant(Matrix::column(batch.noise.xi.clone()));
    let struct_noise = tape.sub(xi, hv[1]);
    let lhs = tape.add(y_eps, struct_noise);
    let first = tape.rmse(lhs, hv[0]);

    if t_count == 0 {
        return Ok((first, solve));
    }
    let baseline = tape.scalar_const(rmse_baseline(&batch.y));
    let mut acc: Option<NodeId> = None;
    for (t, (p, xi_t)) in batch
        .perm_ys
        .iter()
        .zip(batch.noise.xi_ts.iter())
        .enumerate()
    {
        let pn = tape.constant(Matrix::column(p.clone()));
        let xn = tape.constant(Matrix::column(xi_t.clone()));
        let sn = tape.sub(xn, hv[3 + 2 * t]);
        let lhs = tape.add(pn, sn);
        let r = tape.rmse(lhs, hv[2 + 2 * t]);
        let d = tape.sub(baseline, r);
        let ad = tape.abs(d);
        acc = Some(match acc {
            Some(prev) => tape.add(prev, ad),
            None => ad,
        });
    }
    let scaled = tape.scale(acc.unwrap(), 1.0 / t_count as Real);
    let total = tape.add(first, scaled);
    Ok((total, solve))
}

/// Classification loss on the tape. `batch.perm_ys` hold permuted 0/1 labels.
pub fn bce_mlr_loss_on_tape(
    tape: &mut Tape,
    a: NodeId,
    lambda: NodeId,
    batch: &LossBatch,
) -> Result<(NodeId, NodeId)> {
    let t_count = batch.perm_ys.len();
    assert_eq!(batch.noise.xi_ts.len(), t_count);
    let baseline_value = bce_baseline(&batch.y)?;

    let y_star: Vec<Real> = batch.y.iter().map(|&v| 2.0 * v - 1.0).collect();
    let perm_stars: Vec<Vec<Real>> = batch
        .perm_ys
        .iter()
        .map(|p| p.iter().map(|&v| 2.0 * v - 1.0).collect())
        .collect();

    let mut columns: Vec<Vec<Real>> = Vec::with_capacity(2 * (t_count + 1));
    columns.push(y_star.clone());
    columns.push(batch.noise.xi.clone());
    for (p_star, xi_t) in perm_stars.iter().zip(batch.noise.xi_ts.iter()) {
        columns.push(p_star.clone());
        columns.push(xi_t.clone());
    }
    let (hv, solve) = hat_columns_on_tape(tape, a, lambda, &columns)?;

    let ystar_n = tape.constant(Matrix::column(y_star));
    let xi = tape.constant(Matrix::column(batch.noise.xi.clone()));
    let sn = tape.sub(xi, hv[1]);
    let t2 = tape.add(ystar_n, sn);
    let z = tape.add(t2, hv[0]);
    let first = tape.bce_with_logits(Matrix::column(batch.y.clone()), z);

    if t_count == 0 {
        return Ok((first, solve));
    }
    let baseline = tape.scalar_const(baseline_value);
    let mut acc: Option<NodeId> = None;
    for (t, (p_star, xi_t)) in perm_stars.iter().zip(batch.noise.xi_ts.iter()).enumerate() {
        let pn = tape.constant(Matrix::column(p_star.clone()));
        let xn = tape.constant(Matrix::column(xi_t.clone()));
        let s = tape.sub(xn, hv[3 + 2 * t]);
        let t2 = tape.add(pn, s);
        let z = tape.add(t2, hv[2 + 2 * t]);
        let target = Matrix::column(batch.perm_ys[t].clone());
        let term = tape.bce_with_logits(target, z);
        let d = tape.sub(baseline, term);
        let ad = tape.abs(d);
        acc = Some(match acc {
            Some(prev) => tape.add(prev, ad),
            None => ad,
        });
    }
    let scaled = tape.scale(acc.unwrap(), 1.0 / t_count as Real);
    let total = tape.add(first, scaled);
    Ok((total, solve))
}

/// Full training tape for one iteration: hidden stack, head, loss root.
pub fn build_loss_tape(
    params: &ModelParams,
    task: TaskKind,
    head: HeadKind,
    x: &Matrix,
    batch: &LossBatch,
) -> Result<(Tape, TapeBindings)> {
    let mut tape = Tape::new();
    let (a, weight_nodes, bias_nodes) = forward_hidden_on_tape(&mut tape, params, x);
    match head {
        HeadKind::Ridge => {
            let log_lambda = tape.param(Matrix::scalar(params.log_lambda));
            let lambda = tape.exp(log_lambda);
            let (loss, solve) = match task {
                TaskKind::Regression => mlr_loss_on_tape(&mut tape, a, lambda, batch)?,
                TaskKind::Classification => bce_mlr_loss_on_tape(&mut tape, a, lambda, batch)?,
            };
            Ok((
                tape,
                TapeBindings {
                    weight_nodes,
                    bias_nodes,
                    head_node: None,
                    log_lambda_node: Some(log_lambda),
                    activations: a,
                    loss,
                    ridge_solve: Some(solve),
                },
            ))
        }
        HeadKind::LearnedMse => {
            let w_head = params
                .head_weights
                .as_ref()
                .expect("LearnedMse head requires head_weights");
            let hn = tape.param(w_head.clone());
            let pred = tape.matmul(a, hn);
            let y = tape.constant(Matrix::column(batch.y_dithered.clone()));
            let d = tape.sub(pred, y);
            let sq = tape.square(d);
            let loss = tape.mean(sq);
            Ok((
                tape,
                TapeBindings {
                    weight_nodes,
                    bias_nodes,
                    head_node: Some(hn),
                    log_lambda_node: None,
                    activations: a,
                    loss,
                    ridge_solve: None,
                },
            ))
        }
    }
}

/// Gradients keyed by parameter identity, shape-aligned with [`ModelParams`].
#[derive(Debug, Clone)]
pub struct GradientMap {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Matrix>,
    pub head_weights: Option<Matrix>,
    pub log_lambda: Real,
}

impl GradientMap {
    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(Matrix::is_finite)
            && self.biases.iter().all(Matrix::is_finite)
            && self.head_weights.as_ref().map_or(true, Matrix::is_finite)
            && self.log_lambda.is_finite()
    }

    pub fn to_tensors(&self) -> Vec<Matrix> {
        let mut out = Vec::new();
        out.extend(self.weights.iter().cloned());
        out.extend(self.biases.iter().cloned());
        if let Some(h) = &self.head_weights {
            out.push(h.clone());
        }
        out.push(Matrix::scalar(self.log_lambda));
        out
    }
}

/// Run backward and collect parameter gradients, checking finiteness.
pub fn collect_gradients(
    tape: &Tape,
    bindings: &TapeBindings,
    params: &ModelParams,
    iteration: usize,
) -> Result<GradientMap> {
    let grads: Gradients = tape.backward(bindings.loss)?;
    let mut weights = Vec::with_capacity(bindings.weight_nodes.len());
    for (i, (&node, w)) in bindings
        .weight_nodes
        .iter()
        .zip(params.weights.iter())
        .enumerate()
    {
        let g = grads.param_grad(node, w.shape());
        if !g.is_finite() {
            return Err(Error::NonFiniteGradient {
                param: format!("W{}", i + 1),
                iteration,
            });
        }
        weights.push(g);
    }
    let mut biases = Vec::with_capacity(bindings.bias_nodes.len());
    for (i, (&node, b)) in bindings
        .bias_nodes
        .iter()
        .zip(params.biases.iter())
        .enumerate()
    {
        let g = grads.param_grad(node, b.shape());
        if !g.is_finite() {
            return Err(Error::NonFiniteGradient {
                param: format!("b{}", i + 1),
                iteration,
            });
        }
        biases.push(g);
    }
    let head_weights = match (bindings.head_node, params.head_weights.as_ref()) {
        (Some(node), Some(h)) => {
            let g = grads.param_grad(node, h.shape());
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient {
                    param: "W_head".into(),
                    iteration,
                });
            }
            Some(g)
        }
        _ => None,
    };
    let log_lambda = match bindings.log_lambda_node {
        Some(node) => {
            let g = grads.param_grad(node, (1, 1)).as_scalar();
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient {
                    param: "log_lambda".into(),
                    iteration,
                });
            }
            g
        }
        None => 0.0,
    };
    Ok(GradientMap {
        weights,
        biases,
        head_weights,
        log_lambda,
    })
}

/// Max relative error between the tape gradients of `eval` and central
/// finite differences over every parameter entry.
pub fn grad_check<F>(params: &ModelParams, analytic: &GradientMap, eval: F, eps: Real) -> Real
where
    F: FnMut(&ModelParams) -> Real,
{
    let mut eval = eval;
    let mut tensors = params.to_tensors();
    let analytic_tensors = analytic.to_tensors();
    let template = params.clone();
    crate::autograd::finite_difference_max_rel_err(
        |ts| eval(&template.from_tensors(ts)),
        &mut tensors,
        &analytic_tensors,
        eps,
    )
}

/// The 12-point ridge-scale grid 10^{-1 + 5k/11}, spanning 0.1 to 1e4.
pub fn lambda_grid() -> Vec<Real> {
    (0..12)
        .map(|k| (10.0 as Real).powf(-1.0 + 5.0 * k as Real / 11.0))
        .collect()
}

/// Index with the steepest loss increase between consecutive grid points;
/// ties break toward the smaller index.
pub(crate) fn steepest_rise_index(losses: &[Real]) -> usize {
    let mut best_k = 0;
    let mut best = Real::NEG_INFINITY;
    for k in 0..losses.len() - 1 {
        let diff = losses[k + 1] - losses[k];
        if diff > best {
            best = diff;
            best_k = k;
        }
    }
    best_k
}

/// Grid-search initialization of the ridge scale: evaluate the loss at each
/// grid point with frozen noise and permutations, then take the geometric
/// mean of the two points bracketing the steepest rise. No derivative graph
/// is built; the forward activations are computed once by the caller.
pub fn init_lambda(
    a: &Matrix,
    task: TaskKind,
    batch: &LossBatch,
) -> Result<Real> {
    let grid = lambda_grid();
    let apply = RidgeApply::new(a);
    let mut losses = Vec::with_capacity(grid.len());
    for &lambda in &grid {
        let hat = apply.hat(lambda)?;
        let loss = match task {
            TaskKind::Regression => mlr_loss_with_hat(
                |v| hat.apply(v),
                &batch.y,
                &batch.y_dithered,
                &batch.perm_ys,
                &batch.noise,
            ),
            TaskKind::Classification => {
                bce_mlr_loss_with_hat(|v| hat.apply(v), &batch.y, &batch.perm_ys, &batch.noise)?
            }
        };
        losses.push(loss);
    }
    let k = steepest_rise_index(&losses);
    let lambda = (grid[k] * grid[k + 1]).sqrt();
    Ok(lambda.clamp(grid[0], grid[grid.len() - 1]))
}

/// A trained network: frozen parameters plus the cached output weights.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub config: MlrConfig,
    pub params: ModelParams,
    /// exp of the frozen log ridge scale (ridge head only).
    pub lambda: Real,
    /// (J x 1) cached output column; None until finalized.
    pub w_out: Option<Matrix>,
}

impl TrainedModel {
    /// Compute and cache W_out = (A'A + lambda I)^-1 A' Y on the given
    /// training data (ridge head), or copy the learned column.
    pub fn finalize(&mut self, x_train: &Matrix, y_train: &[Real]) -> Result<()> {
        match self.config.head {
            HeadKind::Ridge => {
                let a = forward_hidden(&self.params, x_train)?;
                let apply = RidgeApply::new(&a);
                let hat = apply.hat(self.lambda)?;
                let w = hat.output_weights(&Matrix::column(y_train.to_vec()));
                self.w_out = Some(w);
            }
            HeadKind::LearnedMse => {
                self.w_out = Some(
                    self.params
                        .head_weights
                        .clone()
                        .expect("learned head missing weights"),
                );
            }
        }
        Ok(())
    }

    /// Raw scores A(x_new) W_out. For classification these live on the +-1
    /// scale; see [`hardmax_label`].
    pub fn predict_raw(&self, x_new: &Matrix) -> Result<Vec<Real>> {
        let w = self.w_out.as_ref().ok_or(Error::NotFinalized)?;
        let a = forward_hidden(&self.params, x_new)?;
        if a.cols() != w.rows() {
            return Err(Error::shape(
                "predict",
                format!("activations {} wide, w_out {} tall", a.cols(), w.rows()),
            ));
        }
        let p = a.matmul(w);
        Ok(p.data().to_vec())
    }

    /// Logistic scores in (0,1) for classification.
    pub fn predict_proba(&self, x_new: &Matrix) -> Result<Vec<Real>> {
        Ok(self.predict_raw(x_new)?.into_iter().map(sigmoid).collect())
    }
}

/// Threshold raw scores at zero: 1 iff score > 0 (ties to 0).
pub fn hardmax_label(scores: &[Real]) -> Vec<Real> {
    scores
        .iter()
        .map(|&s| if s > 0.0 { 1.0 } else { 0.0 })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_matrix(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
        Matrix::from_vec(
            rows,
            cols,
            (0..rows * cols).map(|_| r.random_range(-1.0..1.0)).collect(),
        )
    }

    fn random_y(r: &mut ChaCha8Rng, n: usize) -> Vec<Real> {
        (0..n).map(|_| r.random_range(-1.5..1.5)).collect()
    }

    /// Explicit-inverse hat matrix, the slow reference route.
    fn hat_by_inverse(a: &Matrix, lambda: Real) -> Matrix {
        let n = a.cols();
        let mut m = a.transpose().matmul(a);
        for i in 0..n {
            let v = m.get(i, i);
            m.set(i, i, v + lambda);
        }
        // Gauss-Jordan inverse, local to the tests.
        let mut work = m.clone();
        let mut inv = Matrix::identity(n);
        for col in 0..n {
            let mut piv = col;
            for r in col + 1..n {
                if work.get(r, col).abs() > work.get(piv, col).abs() {
                    piv = r;
                }
            }
            for j in 0..n {
                let (x, y) = (work.get(col, j), work.get(piv, j));
                work.set(col, j, y);
                work.set(piv, j, x);
                let (x, y) = (inv.get(col, j), inv.get(piv, j));
                inv.set(col, j, y);
                inv.set(piv, j, x);
            }
            let d = work.get(col, col);
            for j in 0..n {
                work.set(col, j, work.get(col, j) / d);
                inv.set(col, j, inv.get(col, j) / d);
            }
            for r in 0..n {
                if r == col {
                    continue;
                }
                let f = work.get(r, col);
                for j in 0..n {
                    work.set(r, j, work.get(r, j) - f * work.get(col, j));
                    inv.set(r, j, inv.get(r, j) - f * inv.get(col, j));
                }
            }
        }
        a.matmul(&inv).matmul(&a.transpose())
    }

    #[test]
    fn init_weights_bounds_and_determinism() {
        let p = init_weights(8, 4, 2, 7);
        assert_eq!(p.weights.len(), 1);
        let bound = (6.0 / 12.0 as Real).sqrt();
        assert!((bound - 0.7071).abs() < 1e-4);
        assert!(p.weights[0].data().iter().all(|v| v.abs() < bound));
        assert!(p.biases[0].data().iter().all(|&v| v == 0.0));

        let deep = init_weights(2, 2, 3, 7);
        assert_eq!(deep.weights.len(), 2);
        let hidden_bound = (6.0 / 4.0 as Real).sqrt();
        assert!((hidden_bound - 1.2247).abs() < 1e-4);
        assert!(deep.weights[1].data().iter().all(|v| v.abs() < hidden_bound));

        let again = init_weights(8, 4, 2, 7);
        assert_eq!(p, again);

        // depth 1: no hidden layers at all
        let shallow = init_weights(5, 4, 1, 3);
        assert!(shallow.weights.is_empty());
    }

    #[test]
    fn forward_hidden_zero_and_identity() {
        let mut p = init_weights(3, 3, 2, 1);
        p.weights[0] = Matrix::zeros(3, 3);
        let x = Matrix::from_vec(2, 3, vec![1.0, -2.0, 3.0, 0.5, 0.0, -1.0]);
        let a = forward_hidden(&p, &x).unwrap();
        assert!(a.data().iter().all(|&v| v == 0.0));

        p.weights[0] = Matrix::identity(3);
        let x_pos = Matrix::from_vec(2, 3, vec![1.0, 2.0, 3.0, 0.5, 0.0, 1.0]);
        let a = forward_hidden(&p, &x_pos).unwrap();
        assert_eq!(a.data(), x_pos.data());
    }

    #[test]
    fn forward_hidden_matches_straight_line_oracle() {
        let mut r = rng(3);
        let x = random_matrix(&mut r, 6, 3);
        let mut p = init_weights(3, 4, 3, 5);
        for b in p.biases.iter_mut() {
            *b = random_matrix(&mut r, 1, 4).scale(0.1);
        }
        let got = forward_hidden(&p, &x).unwrap();

        // independent straight-line forward
        let mut cur: Vec<Vec<Real>> = (0..6).map(|i| x.row(i).to_vec()).collect();
        for (w, b) in p.weights.iter().zip(p.biases.iter()) {
            let mut next = vec![vec![0.0 as Real; w.cols()]; cur.len()];
            for (i, row) in cur.iter().enumerate() {
                for j in 0..w.cols() {
                    // same accumulation order: products first, bias last
                    let mut s = 0.0;
                    for (k, &v) in row.iter().enumerate() {
                        s += v * w.get(k, j);
                    }
                    s += b.get(0, j);
                    next[i][j] = if s > 0.0 { s } else { 0.0 };
                }
            }
            cur = next;
        }
        for i in 0..6 {
            for j in 0..4 {
                assert_eq!(got.get(i, j), cur[i][j], "mismatch at ({i},{j})");
            }
        }
    }

    #[test]
    fn forward_hidden_shape_mismatch() {
        let p = init_weights(3, 4, 2, 0);
        let x = Matrix::zeros(2, 5);
        assert!(matches!(
            forward_hidden(&p, &x),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn permutations_are_bijections() {
        let set = sample_permutations(20, 5, 99);
        for t in 0..5 {
            let mut sorted = set.get(t).to_vec();
            sorted.sort_unstable();
            assert_eq!(sorted, (0..20).collect::<Vec<_>>());
        }
        assert_eq!(sample_permutations(10, 0, 1).len(), 0);
    }

    #[test]
    fn permutation_roundtrip() {
        let mut r = rng(4);
        let y = random_y(&mut r, 15);
        let set = sample_permutations(15, 3, 123);
        for t in 0..3 {
            let p = set.get(t);
            let mut inv = vec![0usize; 15];
            for (i, &pi) in p.iter().enumerate() {
                inv[pi] = i;
            }
            let fwd = set.apply(t, &y);
            let back: Vec<Real> = inv.iter().map(|&i| fwd[i]).collect();
            assert_eq!(back, y);
        }
    }

    #[test]
    fn loss_interpolation_limit() {
        // A = I, lambda -> 0: H ~ I, the fit term vanishes and every
        // permuted term collapses to the baseline.
        let n = 12;
        let mut r = rng(8);
        let y = random_y(&mut r, n);
        let a = Matrix::identity(n);
        let perms = sample_permutations(n, 4, 5);
        let perm_ys = perms.apply_all(&y);
        let noise = sample_loss_noise(n, 4, 1.0, &mut r);
        let loss = mlr_loss_value(&a, 1e-12, &y, &y, &perm_ys, &noise).unwrap();
        let baseline = rmse_baseline(&y);
        assert!(
            (loss - baseline).abs() < 1e-4,
            "loss {loss} vs baseline {baseline}"
        );
    }

    #[test]
    fn loss_zero_hat_exact_identity() {
        // A = 0 makes H = 0. With centered labels whose squares sum exactly
        // in binary, the permuted terms cancel exactly.
        let y = vec![-1.5, -0.5, 0.5, 1.5];
        let a = Matrix::zeros(4, 3);
        let perms = sample_permutations(4, 3, 11);
        let perm_ys = perms.apply_all(&y);
        let noise = LossNoise::zeros(4, 3);
        let loss = mlr_loss_value(&a, 1.0, &y, &y, &perm_ys, &noise).unwrap();
        let rmse_y0 = rmse_slices(&y, &vec![0.0; 4]);
        assert_eq!(loss, rmse_y0);
    }

    #[test]
    fn loss_reduces_to_fit_rmse_when_stripped() {
        // T = 0 and zero dithering leaves only RMSE(Y; HY), bitwise.
        let mut r = rng(13);
        let a = random_matrix(&mut r, 10, 6).map(|v| v.abs());
        let y = random_y(&mut r, 10);
        let noise = LossNoise::zeros(10, 0);
        let loss = mlr_loss_value(&a, 0.5, &y, &y, &[], &noise).unwrap();

        let apply = RidgeApply::new(&a);
        let hat = apply.hat(0.5).unwrap();
        let hy = hat.apply(&Matrix::column(y.clone()));
        let direct = rmse_slices(&y, hy.data());
        assert_eq!(loss, direct);
    }

    #[test]
    fn loss_matches_independent_straight_line_oracle() {
        let n = 16;
        let mut r = rng(17);
        let a = random_matrix(&mut r, n, 8);
        let y = random_y(&mut r, n);
        let t_count = 4;
        let perms = sample_permutations(n, t_count, 23);
        let perm_ys = perms.apply_all(&y);
        let noise = sample_loss_noise(n, t_count, 1.0, &mut r);
        let lambda = 1.0;
        let loss = mlr_loss_value(&a, lambda, &y, &y, &perm_ys, &noise).unwrap();

        // Oracle: explicit-inverse H, literal term-by-term evaluation.
        let h = hat_by_inverse(&a, lambda);
        let hv = |v: &[Real]| -> Vec<Real> {
            (0..n)
                .map(|i| (0..n).map(|j| h.get(i, j) * v[j]).sum())
                .collect()
        };
        let rmse = |a: &[Real], b: &[Real]| -> Real {
            (a.iter()
                .zip(b.iter())
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<Real>()
                / n as Real)
                .sqrt()
        };
        let hy = hv(&y);
        let hxi = hv(&noise.xi);
        let lhs: Vec<Real> = (0..n).map(|i| y[i] + noise.xi[i] - hxi[i]).collect();
        let mut expected = rmse(&lhs, &hy);
        let ybar = y.iter().sum::<Real>() / n as Real;
        let base = rmse(&y, &vec![ybar; n]);
        let mut acc = 0.0;
        for t in 0..t_count {
            let p = &perm_ys[t];
            let hp = hv(p);
            let hxt = hv(&noise.xi_ts[t]);
            let lhs: Vec<Real> = (0..n).map(|i| p[i] + noise.xi_ts[t][i] - hxt[i]).collect();
            acc += (base - rmse(&lhs, &hp)).abs();
        }
        expected += acc / t_count as Real;
        assert!(
            (loss - expected).abs() < 1e-12,
            "loss {loss} vs oracle {expected}"
        );
    }

    #[test]
    fn bce_loss_first_term_closed_forms() {
        // H = identity application: logits are exactly 2 Y*.
        let y = vec![0.0, 1.0, 1.0, 0.0];
        let noise = sample_loss_noise(4, 0, 1.0, &mut rng(2));
        let v = bce_mlr_loss_with_hat(|m: &Matrix| m.clone(), &y, &[], &noise).unwrap();
        let expected = (1.0 as Real + (-2.0 as Real).exp()).ln();
        assert!((v - expected).abs() < 1e-15, "{v} vs {expected}");
        assert!((expected - 0.1269).abs() < 1e-4);

        // H = 0, no noise: logits are Y* itself.
        let y2 = vec![0.0, 1.0];
        let zero_hat = |m: &Matrix| Matrix::zeros(m.rows(), m.cols());
        let noise2 = LossNoise::zeros(2, 0);
        let v2 = bce_mlr_loss_with_hat(zero_hat, &y2, &[], &noise2).unwrap();
        let expected2 = (1.0 as Real + (-1.0 as Real).exp()).ln();
        assert!((v2 - expected2).abs() < 1e-15);
        assert!((expected2 - 0.3133).abs() < 1e-4);
    }

    #[test]
    fn bce_loss_matches_independent_oracle() {
        let n = 16;
        let mut r = rng(31);
        let a = random_matrix(&mut r, n, 8);
        let y: Vec<Real> = (0..n).map(|_| if r.random_range(0.0..1.0) < 0.5 { 0.0 } else { 1.0 }).collect();
        assert!(y.iter().any(|&v| v == 0.0) && y.iter().any(|&v| v == 1.0));
        let t_count = 4;
        let perms = sample_permutations(n, t_count, 7);
        let perm_ys = perms.apply_all(&y);
        let noise = sample_loss_noise(n, t_count, 1.0, &mut r);
        let lambda = 1.0;
        let loss = bce_mlr_loss_value(&a, lambda, &y, &perm_ys, &noise).unwrap();

        let h = hat_by_inverse(&a, lambda);
        let hv = |v: &[Real]| -> Vec<Real> {
            (0..n)
                .map(|i| (0..n).map(|j| h.get(i, j) * v[j]).sum())
                .collect()
        };
        let bce = |t: &[Real], z: &[Real]| -> Real {
            t.iter()
                .zip(z.iter())
                .map(|(&ti, &zi)| {
                    let s = 1.0 / (1.0 + (-zi as Real).exp());
                    -(ti * s.ln() + (1.0 - ti) * (1.0 - s).ln())
                })
                .sum::<Real>()
                / n as Real
        };
        let ystar: Vec<Real> = y.iter().map(|&v| 2.0 * v - 1.0).collect();
        let hystar = hv(&ystar);
        let hxi = hv(&noise.xi);
        let z: Vec<Real> = (0..n)
            .map(|i| ystar[i] + noise.xi[i] - hxi[i] + hystar[i])
            .collect();
        let mut expected = bce(&y, &z);
        let p = y.iter().sum::<Real>() / n as Real;
        let z0 = (p / (1.0 - p)).ln();
        let base = bce(&y, &vec![z0; n]);
        let mut acc = 0.0;
        for t in 0..t_count {
            let pstar: Vec<Real> = perm_ys[t].iter().map(|&v| 2.0 * v - 1.0).collect();
            let hp = hv(&pstar);
            let hxt = hv(&noise.xi_ts[t]);
            let z: Vec<Real> = (0..n)
                .map(|i| pstar[i] + noise.xi_ts[t][i] - hxt[i] + hp[i])
                .collect();
            acc += (base - bce(&perm_ys[t], &z)).abs();
        }
        expected += acc / t_count as Real;
        assert!(
            (loss - expected).abs() < 1e-12,
            "loss {loss} vs oracle {expected}"
        );
    }

    #[test]
    fn bce_degenerate_class_is_rejected() {
        let y = vec![1.0, 1.0, 1.0];
        let noise = LossNoise::zeros(3, 0);
        match bce_mlr_loss_with_hat(|m: &Matrix| m.clone(), &y, &[], &noise) {
            Err(Error::DegenerateClass { .. }) => {}
            other => panic!("expected DegenerateClass, got {other:?}"),
        }
    }

    #[test]
    fn tape_loss_equals_value_loss() {
        let mut r = rng(41);
        let n = 12;
        let x = random_matrix(&mut r, n, 3);
        let params = init_weights(3, 6, 2, 9);
        let y = random_y(&mut r, n);
        let perms = sample_permutations(n, 3, 2);
        let perm_ys = perms.apply_all(&y);
        let noise = sample_loss_noise(n, 3, 1.0, &mut r);
        let batch = LossBatch {
            y: y.clone(),
            y_dithered: y.clone(),
            perm_ys: perm_ys.clone(),
            noise: noise.clone(),
        };
        let (tape, b) =
            build_loss_tape(&params, TaskKind::Regression, HeadKind::Ridge, &x, &batch).unwrap();
        let a = forward_hidden(&params, &x).unwrap();
        let direct =
            mlr_loss_value(&a, params.lambda(), &y, &y, &perm_ys, &noise).unwrap();
        assert_eq!(tape.value(b.loss).as_scalar(), direct);
    }

    #[test]
    fn label_dither_zero_is_identity() {
        let y = vec![1.0, 2.0, 3.0];
        let perm = vec![vec![3.0, 1.0, 2.0]];
        let mut r = rng(1);
        let (ye, pe) = label_dither(&y, &perm, 0.0, &mut r);
        assert_eq!(ye, y);
        assert_eq!(pe, perm);
    }

    #[test]
    fn label_dither_empirical_std() {
        let n = 10_000;
        let y = vec![0.0 as Real; n];
        let mut r = rng(77);
        let (ye, _) = label_dither(&y, &[], 0.03, &mut r);
        let mean = ye.iter().sum::<Real>() / n as Real;
        let var = ye.iter().map(|v| (v - mean) * (v - mean)).sum::<Real>() / n as Real;
        let std = var.sqrt();
        assert!((0.027..=0.033).contains(&std), "std {std}");
    }

    #[test]
    fn lambda_grid_endpoints() {
        let g = lambda_grid();
        assert_eq!(g.len(), 12);
        assert!((g[0] - 0.1).abs() < 1e-12);
        assert!((g[11] - 1e4).abs() / 1e4 < 1e-12);
    }

    #[test]
    fn steepest_rise_semantics() {
        // successive differences (1, 3, 2) -> index 1
        let losses = [0.0, 1.0, 4.0, 6.0];
        assert_eq!(steepest_rise_index(&losses), 1);
        // tie breaks toward the smaller index
        let tied = [0.0, 2.0, 4.0];
        assert_eq!(steepest_rise_index(&tied), 0);
    }

    #[test]
    fn init_lambda_matches_brute_force_scan() {
        let mut r = rng(55);
        let n = 64;
        let x = random_matrix(&mut r, n, 8);
        let params = init_weights(8, 32, 2, 3);
        let a = forward_hidden(&params, &x).unwrap();
        let y = random_y(&mut r, n);
        let perms = sample_permutations(n, 4, 1);
        let perm_ys = perms.apply_all(&y);
        let noise = sample_loss_noise(n, 4, 1.0, &mut r);
        let batch = LossBatch {
            y: y.clone(),
            y_dithered: y.clone(),
            perm_ys: perm_ys.clone(),
            noise: noise.clone(),
        };
        let got = init_lambda(&a, TaskKind::Regression, &batch).unwrap();

        // Brute-force scan, recomputing each loss from scratch.
        let grid = lambda_grid();
        let mut best_k = 0;
        let mut best_diff = Real::NEG_INFINITY;
        let losses: Vec<Real> = grid
            .iter()
            .map(|&l| mlr_loss_value(&a, l, &y, &y, &perm_ys, &noise).unwrap())
            .collect();
        for k in 0..11 {
            let d = losses[k + 1] - losses[k];
            if d > best_diff {
                best_diff = d;
                best_k = k;
            }
        }
        let expected = (grid[best_k] * grid[best_k + 1]).sqrt();
        assert_eq!(got, expected);
    }

    #[test]
    fn predict_ridge_matches_normal_equations_oracle() {
        // Depth 1 on raw features is plain ridge regression.
        let mut r = rng(61);
        let x = random_matrix(&mut r, 20, 5);
        let y = random_y(&mut r, 20);
        let lambda = 0.8;
        let mut model = TrainedModel {
            config: MlrConfig {
                depth: 1,
                width: 5,
                ..MlrConfig::default()
            },
            params: init_weights(5, 5, 1, 0),
            lambda,
            w_out: None,
        };
        model.finalize(&x, &y).unwrap();
        let preds = model.predict_raw(&x).unwrap();

        let h = hat_by_inverse(&x, lambda);
        for i in 0..20 {
            let expected: Real = (0..20).map(|j| h.get(i, j) * y[j]).sum();
            assert!((preds[i] - expected).abs() < 1e-8, "row {i}");
        }
    }

    #[test]
    fn predict_interpolation_limit() {
        // J >= n with rich activations and tiny lambda reproduces the
        // training labels.
        let mut r = rng(67);
        let x = random_matrix(&mut r, 8, 12);
        let y = random_y(&mut r, 8);
        let mut model = TrainedModel {
            config: MlrConfig {
                depth: 1,
                width: 12,
                ..MlrConfig::default()
            },
            params: init_weights(12, 12, 1, 0),
            lambda: 1e-12,
            w_out: None,
        };
        model.finalize(&x, &y).unwrap();
        let preds = model.predict_raw(&x).unwrap();
        let err: Real = preds
            .iter()
            .zip(y.iter())
            .map(|(p, t)| (p - t) * (p - t))
            .sum::<Real>()
            .sqrt();
        let norm: Real = y.iter().map(|v| v * v).sum::<Real>().sqrt();
        assert!(err / norm < 1e-4, "rel err {}", err / norm);
    }

    #[test]
    fn predict_zero_weights_and_not_finalized() {
        let x = Matrix::zeros(3, 2);
        let mut model = TrainedModel {
            config: MlrConfig {
                depth: 1,
                width: 2,
                ..MlrConfig::default()
            },
            params: init_weights(2, 2, 1, 0),
            lambda: 1.0,
            w_out: None,
        };
        assert!(matches!(model.predict_raw(&x), Err(Error::NotFinalized)));
        model.w_out = Some(Matrix::zeros(2, 1));
        assert_eq!(model.predict_raw(&x).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn hardmax_rules() {
        assert_eq!(hardmax_label(&[-0.2, 0.0, 3.1]), vec![0.0, 0.0, 1.0]);
        assert_eq!(hardmax_label(&[0.0, 0.0]), vec![0.0, 0.0]);
    }
}
