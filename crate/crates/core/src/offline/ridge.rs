//! Per-action ridge regression of the future verification rate, and the
//! `zhat` index derived from it.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::features::{featurize, future_verification_rate, WARMUP_DAYS};
use super::{LoggedDataset, OfflineError};

/// Accumulated `X^T X` and `X^T y`.
#[derive(Debug, Clone)]
pub struct NormalEquations {
    pub gram: DMatrix<f64>,
    pub xty: DVector<f64>,
    pub count: usize,
}

impl NormalEquations {
    pub fn new(dim: usize) -> Self {
        Self {
            gram: DMatrix::zeros(dim, dim),
            xty: DVector::zeros(dim),
            count: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.xty.len()
    }

    pub fn add(&mut self, x: &[f64], y: f64) {
        let x = DVector::from_column_slice(x);
        self.gram.syger(1.0, &x, &x, 1.0);
        self.xty.axpy(y, &x, 1.0);
        self.count += 1;
    }

    /// `argmin ||y - X theta||^2 + lambda ||theta||^2`.
    pub fn solve(&self, lambda: f64) -> Result<DVector<f64>, OfflineError> {
        ridge_solve(&self.gram, &self.xty, lambda)
    }
}

/// Solves `(G + lambda I) theta = b` by Cholesky, falling back to LU when
/// `lambda = 0` leaves `G` only semidefinite.
pub fn ridge_solve(gram: &DMatrix<f64>, xty: &DVector<f64>, lambda: f64) -> Result<DVector<f64>, OfflineError> {
    let n = gram.nrows();
    // syger fills the lower triangle only
    let mut a = gram.clone();
    for i in 0..n {
        for j in (i + 1)..n {
            a[(i, j)] = a[(j, i)];
        }
        a[(i, i)] += lambda;
    }
    if let Some(chol) = a.clone().cholesky() {
        return Ok(chol.solve(xty));
    }
    a.lu().solve(xty).ok_or(OfflineError::Singular)
}

/// What a regression sample is labelled with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    /// Mean verification over the rest of the window.
    FutureRate,
    /// Verification on the next day.
    NextDay,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub record: usize,
    pub t: usize,
    pub features: Vec<f64>,
    pub action: bool,
    pub label: f64,
}

/// Every `(patient, day)` with full warm-up and a defined label.
pub fn regression_samples(dataset: &LoggedDataset, target: Target) -> Result<Vec<Sample>, OfflineError> {
    let mut out = Vec::new();
    for (k, record) in dataset.records.iter().enumerate() {
        let first = record.t_start + WARMUP_DAYS;
        for t in first..record.t_end {
            let features = featurize(record, t)?.0;
            let label = match target {
                Target::FutureRate => future_verification_rate(record, t)?,
                Target::NextDay => record.v_at(t + 1).map_or(0.0, |b| b as u8 as f64),
            };
            out.push(Sample {
                record: k,
                t,
                features,
                action: record.a_at(t) == Some(true),
                label,
            });
        }
    }
    Ok(out)
}

/// Normal equations per action arm, `[a = 0, a = 1]`.
pub fn arm_normal_equations(samples: &[Sample], dim: usize) -> [NormalEquations; 2] {
    let mut arms = [NormalEquations::new(dim), NormalEquations::new(dim)];
    for s in samples {
        arms[s.action as usize].add(&s.features, s.label);
    }
    arms
}

/// Fitted coefficients for the two actions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeModel {
    pub theta0: Vec<f64>,
    pub theta1: Vec<f64>,
    pub lambda: f64,
}

impl RidgeModel {
    pub fn dim(&self) -> usize {
        self.theta0.len()
    }

    /// `theta1 - theta0`.
    pub fn effect(&self) -> Vec<f64> {
        self.theta1.iter().zip(&self.theta0).map(|(a, b)| a - b).collect()
    }

    /// `sum_i (y_i - theta^T x_i)^2 + lambda ||theta||^2` for one arm.
    pub fn objective(samples: &[Sample], arm: bool, theta: &[f64], lambda: f64) -> f64 {
        let fit: f64 = samples
            .iter()
            .filter(|s| s.action == arm)
            .map(|s| {
                let pred: f64 = s.features.iter().zip(theta).map(|(x, w)| x * w).sum();
                (s.label - pred).powi(2)
            })
            .sum();
        fit + lambda * theta.iter().map(|w| w * w).sum::<f64>()
    }
}

/// Fits one ridge regression per action arm against the future
/// verification rate.
pub fn fit_ridge(dataset: &LoggedDataset, lambda: f64) -> Result<RidgeModel, OfflineError> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(OfflineError::InvalidConfig(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    let samples = regression_samples(dataset, Target::FutureRate)?;
    let dim = dataset.static_dim() + super::HISTORY_DIM;
    let [arm0, arm1] = arm_normal_equations(&samples, dim);
    for (a, arm) in [(0u8, &arm0), (1, &arm1)] {
        if arm.count == 0 {
            return Err(OfflineError::EmptyArm(a));
        }
    }
    Ok(RidgeModel {
        theta0: arm0.solve(lambda)?.as_slice().to_vec(),
        theta1: arm1.solve(lambda)?.as_slice().to_vec(),
        lambda,
    })
}

/// `<theta1 - theta0, features> * remaining_days`.
pub fn zhat(model: &RidgeModel, features: &[f64], remaining_days: usize) -> Result<f64, OfflineError> {
    if features.len() != model.dim() || model.theta1.len() != model.dim() {
        return Err(OfflineError::DimensionMismatch {
            expected: model.dim(),
            found: features.len(),
        });
    }
    if remaining_days == 0 {
        return Ok(0.0);
    }
    let score: f64 = model
        .theta1
        .iter()
        .zip(&model.theta0)
        .zip(features)
        .map(|((w1, w0), x)| (w1 - w0) * x)
        .sum();
    Ok(score * remaining_days as f64)
}
