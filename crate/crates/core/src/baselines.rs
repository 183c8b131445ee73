//! Classical comparison models: L2-regularised logistic regression, a linear
//! SVM trained by stochastic subgradient descent, and k-nearest neighbours.
//! All three standardise features with training-set statistics.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codemodel::expr::sigmoid;
use crate::codemodel::PredictionVector;
use crate::dataset::Dataset;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BaselineError {
    #[error("training set contains a single class")]
    SingleClass,
    #[error("query set is empty")]
    EmptyQuery,
    #[error("k = {k} but the training set has {n} rows")]
    BadK { k: usize, n: usize },
    #[error("query features do not match the training features")]
    FeatureMismatch,
    #[error("{0}")]
    InvalidParameter(String),
}

/// Per-feature `(mean, sd)`; constant features get `sd = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Standardization(pub Vec<(f64, f64)>);

impl Standardization {
    pub fn fit(ds: &Dataset) -> Self {
        let n = ds.n_rows().max(1) as f64;
        let stats = (0..ds.n_features())
            .map(|j| {
                let mean = ds.rows().map(|r| r[j]).sum::<f64>() / n;
                let var = ds.rows().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
                let sd = var.sqrt();
                (mean, if sd > 0.0 && sd.is_finite() { sd } else { 1.0 })
            })
            .collect();
        Self(stats)
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter().zip(&self.0).map(|(x, (m, s))| (x - m) / s).collect()
    }

    fn matrix(&self, ds: &Dataset) -> Vec<f64> {
        ds.rows().flat_map(|r| self.apply(r)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinearKind {
    Logistic,
    LinearSvm,
}

/// A fitted linear scorer over standardised features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub kind: LinearKind,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub trained_on: Vec<String>,
    pub standardization: Standardization,
}

impl LinearModel {
    /// `w · z + b` on the standardised row.
    pub fn decision(&self, row: &[f64]) -> f64 {
        let z = self.standardization.apply(row);
        dot(&self.weights, &z) + self.bias
    }

    /// Probabilities for logistic models, raw decision values for SVMs.
    pub fn score(&self, ds: &Dataset) -> Result<PredictionVector, BaselineError> {
        if ds.feature_names() != self.trained_on.as_slice() {
            return Err(BaselineError::FeatureMismatch);
        }
        Ok(ds
            .rows()
            .map(|r| match self.kind {
                LinearKind::Logistic => sigmoid(self.decision(r)),
                LinearKind::LinearSvm => self.decision(r),
            })
            .collect::<Vec<_>>()
            .into())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

/// Mean logistic loss plus `(l2 / 2)·‖w‖²` over a row-major matrix.
/// Parameters are laid out as `[w_1, …, w_d, b]`.
#[derive(Debug, Clone)]
pub struct LogisticProblem {
    pub rows: Vec<f64>,
    pub labels: Vec<u8>,
    pub n_features: usize,
    pub l2: f64,
}

impl LogisticProblem {
    fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.n_features..(i + 1) * self.n_features]
    }

    fn margin(&self, params: &[f64], i: usize) -> f64 {
        dot(&params[..self.n_features], self.row(i)) + params[self.n_features]
    }

    pub fn objective(&self, params: &[f64]) -> f64 {
        let n = self.labels.len() as f64;
        let loss: f64 = self
            .labels
            .iter()
            .enumerate()
            .map(|(i, &y)| {
                let z = self.margin(params, i);
                if y == 1 {
                    softplus(-z)
                } else {
                    softplus(z)
                }
            })
            .sum();
        let w = &params[..self.n_features];
        loss / n + 0.5 * self.l2 * dot(w, w)
    }

    pub fn gradient(&self, params: &[f64]) -> Vec<f64> {
        let d = self.n_features;
        let n = self.labels.len() as f64;
        let mut grad = vec![0.0; d + 1];
        for (i, &y) in self.labels.iter().enumerate() {
            let residual = sigmoid(self.margin(params, i)) - f64::from(y);
            for (g, x) in grad[..d].iter_mut().zip(self.row(i)) {
                *g += residual * x;
            }
            grad[d] += residual;
        }
        for g in &mut grad {
            *g /= n;
        }
        for (g, w) in grad[..d].iter_mut().zip(&params[..d]) {
            *g += self.l2 * w;
        }
        grad
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogisticParams {
    pub l2: f64,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for LogisticParams {
    fn default() -> Self {
        Self { l2: 1e-4, max_iters: 10_000, tol: 1e-8 }
    }
}

/// Full-batch gradient descent with Armijo backtracking. Stops once the
/// gradient's ∞-norm drops below `tol` or after `max_iters` steps.
pub fn fit_logistic(train: &Dataset, l2: f64, max_iters: usize, tol: f64) -> Result<LinearModel, BaselineError> {
    if !train.has_both_classes() {
        return Err(BaselineError::SingleClass);
    }
    if !(l2 >= 0.0) {
        return Err(BaselineError::InvalidParameter(format!("l2 must be nonnegative, got {l2}")));
    }
    let standardization = Standardization::fit(train);
    let problem = LogisticProblem {
        rows: standardization.matrix(train),
        labels: train.labels().to_vec(),
        n_features: train.n_features(),
        l2,
    };
    let mut params = vec![0.0; train.n_features() + 1];
    let mut value = problem.objective(&params);
    let mut step: f64 = 1.0;
    for _ in 0..max_iters {
        let grad = problem.gradient(&params);
        if grad.iter().fold(0.0f64, |m, g| m.max(g.abs())) < tol {
            break;
        }
        let sq_norm = dot(&grad, &grad);
        step = (step * 2.0).min(1e6);
        let mut trial;
        loop {
            trial = params.iter().zip(&grad).map(|(p, g)| p - step * g).collect::<Vec<_>>();
            let trial_value = problem.objective(&trial);
            if trial_value <= value - 1e-4 * step * sq_norm {
                value = trial_value;
                break;
            }
            step *= 0.5;
            if step < 1e-16 {
                trial = params.clone();
                break;
            }
        }
        if trial == params {
            break;
        }
        params = trial;
    }
    let bias = params.pop().expect("bias slot");
    Ok(LinearModel {
        kind: LinearKind::Logistic,
        weights: params,
        bias,
        trained_on: train.feature_names().to_vec(),
        standardization,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvmParams {
    pub c: f64,
    pub epochs: usize,
}

impl Default for SvmParams {
    fn default() -> Self {
        Self { c: 1.0, epochs: 200 }
    }
}

/// `(1/2)‖w‖² + c · mean hinge` on standardised rows, labels in {0, 1}.
pub fn svm_objective(model: &LinearModel, train: &Dataset, c: f64) -> f64 {
    let hinge = mean_hinge(model, train);
    0.5 * dot(&model.weights, &model.weights) + c * hinge
}

pub fn mean_hinge(model: &LinearModel, train: &Dataset) -> f64 {
    let total: f64 = train
        .rows()
        .zip(train.labels())
        .map(|(r, &y)| {
            let sign = if y == 1 { 1.0 } else { -1.0 };
            (1.0 - sign * model.decision(r)).max(0.0)
        })
        .sum();
    total / train.n_rows() as f64
}

/// Objective of the returned model after each epoch, plus that model.
pub struct SvmTrace {
    pub model: LinearModel,
    pub epoch_objectives: Vec<f64>,
}

/// Stochastic subgradient descent with step `1 / (λ t)`, `λ = 1 / c`,
/// visiting rows in one seeded order every epoch, with iterates projected
/// onto the ball of radius `1/√λ`. The bias is learned as the weight of a
/// constant feature (so it is lightly regularised). The returned model is
/// the running average of all iterates, taken at the epoch end where it
/// scored the lowest objective.
pub fn fit_linear_svm(train: &Dataset, c: f64, epochs: usize, seed: u64) -> Result<LinearModel, BaselineError> {
    fit_linear_svm_traced(train, c, epochs, seed).map(|t| t.model)
}

pub fn fit_linear_svm_traced(train: &Dataset, c: f64, epochs: usize, seed: u64) -> Result<SvmTrace, BaselineError> {
    if !train.has_both_classes() {
        return Err(BaselineError::SingleClass);
    }
    if !(c > 0.0) || !c.is_finite() {
        return Err(BaselineError::InvalidParameter(format!("c must be positive, got {c}")));
    }
    let d = train.n_features();
    let standardization = Standardization::fit(train);
    let rows = standardization.matrix(train);
    let signs: Vec<f64> = train.labels().iter().map(|&y| if y == 1 { 1.0 } else { -1.0 }).collect();
    let lambda = 1.0 / c;
    let mut order: Vec<usize> = (0..train.n_rows()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    // w[d] is the bias, trained as the weight of a constant 1 feature.
    let mut w = vec![0.0; d + 1];
    let mut w_avg = vec![0.0; d + 1];
    let radius = 1.0 / lambda.sqrt();
    let mut t = 0usize;
    let mut model = LinearModel {
        kind: LinearKind::LinearSvm,
        weights: vec![0.0; d],
        bias: 0.0,
        trained_on: train.feature_names().to_vec(),
        standardization,
    };
    let mut best = f64::INFINITY;
    let mut candidate = model.clone();
    let mut epoch_objectives = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        for &i in &order {
            t += 1;
            let eta = 1.0 / (lambda * t as f64);
            let x = &rows[i * d..(i + 1) * d];
            let violated = signs[i] * (dot(&w[..d], x) + w[d]) < 1.0;
            let shrink = 1.0 - eta * lambda;
            for wj in &mut w {
                *wj *= shrink;
            }
            if violated {
                for (wj, xj) in w.iter_mut().zip(x.iter().chain(std::iter::once(&1.0))) {
                    *wj += eta * signs[i] * xj;
                }
            }
            let norm = dot(&w, &w).sqrt();
            if norm > radius {
                for wj in &mut w {
                    *wj *= radius / norm;
                }
            }
            let k = t as f64;
            for (a, wj) in w_avg.iter_mut().zip(&w) {
                *a += (wj - *a) / k;
            }
        }
        // The running average can wobble by ~1e-6 late in training; keep
        // the best epoch-end average so the returned objective never rises.
        candidate.weights.copy_from_slice(&w_avg[..d]);
        candidate.bias = w_avg[d];
        let objective = svm_objective(&candidate, train, c);
        if objective < best {
            best = objective;
            model.weights.clone_from(&candidate.weights);
            model.bias = candidate.bias;
        }
        epoch_objectives.push(best);
    }
    Ok(SvmTrace { model, epoch_objectives })
}

/// Fraction of label-1 rows among the `k` nearest training rows
/// (standardised Euclidean distance, ties to the lower row index).
pub fn knn_scores(train: &Dataset, k: usize, queries: &Dataset) -> Result<PredictionVector, BaselineError> {
    if queries.is_empty() {
        return Err(BaselineError::EmptyQuery);
    }
    if k == 0 || k > train.n_rows() {
        return Err(BaselineError::BadK { k, n: train.n_rows() });
    }
    if queries.feature_names() != train.feature_names() {
        return Err(BaselineError::FeatureMismatch);
    }
    let standardization = Standardization::fit(train);
    let reference: Vec<Vec<f64>> = train.rows().map(|r| standardization.apply(r)).collect();
    let scores = queries
        .rows()
        .map(|q| {
            let q = standardization.apply(q);
            let mut dist: Vec<(f64, usize)> = reference
                .iter()
                .enumerate()
                .map(|(i, r)| (r.iter().zip(&q).map(|(a, b)| (a - b).powi(2)).sum::<f64>(), i))
                .collect();
            dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let positives = dist[..k].iter().filter(|(_, i)| train.labels()[*i] == 1).count();
            positives as f64 / k as f64
        })
        .collect::<Vec<_>>();
    Ok(scores.into())
}
