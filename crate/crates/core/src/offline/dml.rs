//! Double machine learning for heterogeneous treatment effects.
//!
//! Model: `Y = tau(X) T + g(X) + eps`, `T = f(X) + eta`, with a linear
//! effect `tau(X) = theta_0 + <theta, X>`. Stage one fits `E[Y | X]` and
//! `E[T | X]` with a pluggable base regressor under K-fold cross-fitting;
//! stage two regresses the outcome residual on the treatment residual times
//! `[1, X]`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::ridge::{regression_samples, ridge_solve, Target};
use super::{LoggedDataset, OfflineError};

pub trait FittedRegressor: Send + Sync {
    fn predict(&self, x: &[f64]) -> f64;
}

/// A base learner for the nuisance regressions.
pub trait Regressor: Send + Sync {
    fn fit(&self, xs: &[&[f64]], ys: &[f64]) -> Result<Box<dyn FittedRegressor>, OfflineError>;
}

/// Ridge with an unpenalized intercept.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RidgeRegressor {
    pub lambda: f64,
}

struct LinearFit {
    intercept: f64,
    coef: Vec<f64>,
}

impl FittedRegressor for LinearFit {
    fn predict(&self, x: &[f64]) -> f64 {
        self.intercept + self.coef.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
    }
}

impl Regressor for RidgeRegressor {
    fn fit(&self, xs: &[&[f64]], ys: &[f64]) -> Result<Box<dyn FittedRegressor>, OfflineError> {
        let n = xs.len();
        let dim = xs.first().map_or(0, |x| x.len());
        if n == 0 {
            return Err(OfflineError::InvalidConfig("no samples to fit".into()));
        }
        let mean_x: Vec<f64> = (0..dim).map(|j| xs.iter().map(|x| x[j]).sum::<f64>() / n as f64).collect();
        let mean_y = ys.iter().sum::<f64>() / n as f64;
        let centered = DMatrix::from_fn(n, dim, |r, c| xs[r][c] - mean_x[c]);
        let y = DVector::from_iterator(n, ys.iter().map(|v| v - mean_y));
        let gram = centered.transpose() * &centered;
        let coef = ridge_solve(&gram, &(centered.transpose() * y), self.lambda)?;
        let intercept = mean_y - coef.iter().zip(&mean_x).map(|(w, m)| w * m).sum::<f64>();
        Ok(Box::new(LinearFit {
            intercept,
            coef: coef.as_slice().to_vec(),
        }))
    }
}

/// Base learner choice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaseRegressor {
    Ridge { lambda: f64 },
}

impl BaseRegressor {
    pub fn build(&self) -> Box<dyn Regressor> {
        match *self {
            BaseRegressor::Ridge { lambda } => Box::new(RidgeRegressor { lambda }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoubleMlConfig {
    pub folds: usize,
    pub regressor: BaseRegressor,
}

impl Default for DoubleMlConfig {
    fn default() -> Self {
        Self {
            folds: 2,
            regressor: BaseRegressor::Ridge { lambda: 1.0 },
        }
    }
}

pub struct DoubleMlModel {
    /// `[intercept, theta_1..theta_d]` of the effect `tau(X)`.
    pub theta: Vec<f64>,
    /// Heteroskedasticity-robust standard errors of `theta`.
    pub std_errors: Vec<f64>,
    /// `mean(resid_y * resid_t * [1, X]_j)` after the fit.
    pub orthogonality: Vec<f64>,
    pub outcome: Box<dyn FittedRegressor>,
    pub propensity: Box<dyn FittedRegressor>,
}

impl std::fmt::Debug for DoubleMlModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DoubleMlModel")
            .field("theta", &self.theta)
            .field("std_errors", &self.std_errors)
            .finish_non_exhaustive()
    }
}

impl DoubleMlModel {
    /// `tau(x)`.
    pub fn effect(&self, x: &[f64]) -> f64 {
        self.theta[0] + self.theta[1..].iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
    }
}

/// Fits the effect model on rows `xs` with binary treatment and outcome.
/// Fold `k` holds the rows with `row % folds == k`.
pub fn fit_double_ml(
    xs: &[Vec<f64>],
    treatment: &[bool],
    outcome: &[f64],
    config: &DoubleMlConfig,
) -> Result<DoubleMlModel, OfflineError> {
    let n = xs.len();
    if treatment.len() != n || outcome.len() != n {
        return Err(OfflineError::DimensionMismatch {
            expected: n,
            found: treatment.len().min(outcome.len()),
        });
    }
    if config.folds < 2 || config.folds > n {
        return Err(OfflineError::InvalidConfig(format!("need 2 <= folds <= {n}, got {}", config.folds)));
    }
    let dim = xs.first().map_or(0, Vec::len);
    let learner = config.regressor.build();
    let t_num: Vec<f64> = treatment.iter().map(|&b| b as u8 as f64).collect();

    let mut resid_y = vec![0.0; n];
    let mut resid_t = vec![0.0; n];
    for fold in 0..config.folds {
        let (train, test): (Vec<usize>, Vec<usize>) = (0..n).partition(|r| r % config.folds != fold);
        let treated = train.iter().filter(|&&r| treatment[r]).count();
        if treated == 0 || treated == train.len() {
            return Err(OfflineError::DegeneratePropensity { fold });
        }
        let train_x: Vec<&[f64]> = train.iter().map(|&r| xs[r].as_slice()).collect();
        let pick = |v: &[f64]| train.iter().map(|&r| v[r]).collect::<Vec<_>>();
        let q_hat = learner.fit(&train_x, &pick(outcome))?;
        let f_hat = learner.fit(&train_x, &pick(&t_num))?;
        for &r in &test {
            resid_y[r] = outcome[r] - q_hat.predict(&xs[r]);
            resid_t[r] = t_num[r] - f_hat.predict(&xs[r]);
        }
    }

    // stage two: resid_y ~ resid_t * [1, X]
    let p = dim + 1;
    let design = DMatrix::from_fn(n, p, |r, c| resid_t[r] * if c == 0 { 1.0 } else { xs[r][c - 1] });
    let y = DVector::from_column_slice(&resid_y);
    let gram = design.transpose() * &design;
    let theta = ridge_solve(&gram, &(design.transpose() * &y), 0.0)?;
    let fitted = &design * &theta;
    let errs = &y - fitted;

    // HC0 sandwich
    let bread = gram.clone().try_inverse().ok_or(OfflineError::Singular)?;
    let mut meat = DMatrix::zeros(p, p);
    for r in 0..n {
        let row = design.row(r).transpose();
        meat += &row * row.transpose() * errs[r].powi(2);
    }
    let cov = &bread * meat * &bread;
    let std_errors = (0..p).map(|j| cov[(j, j)].max(0.0).sqrt()).collect();

    let orthogonality = (0..p)
        .map(|j| {
            (0..n)
                .map(|r| resid_y[r] * resid_t[r] * if j == 0 { 1.0 } else { xs[r][j - 1] })
                .sum::<f64>()
                / n as f64
        })
        .collect();

    let all_x: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
    Ok(DoubleMlModel {
        theta: theta.as_slice().to_vec(),
        std_errors,
        orthogonality,
        outcome: learner.fit(&all_x, outcome)?,
        propensity: learner.fit(&all_x, &t_num)?,
    })
}

/// Double ML on logged data: features on each eligible day, the day's
/// intervention bit as treatment, next-day verification as outcome.
pub fn fit_double_ml_logged(dataset: &LoggedDataset, config: &DoubleMlConfig) -> Result<DoubleMlModel, OfflineError> {
    let samples = regression_samples(dataset, Target::NextDay)?;
    let xs: Vec<Vec<f64>> = samples.iter().map(|s| s.features.clone()).collect();
    let t: Vec<bool> = samples.iter().map(|s| s.action).collect();
    let y: Vec<f64> = samples.iter().map(|s| s.label).collect();
    fit_double_ml(&xs, &t, &y, config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ridge_regressor_recovers_intercept() {
        let xs: Vec<Vec<f64>> = (0..20).map(|k| vec![k as f64, (k % 3) as f64]).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 4.0 + 0.5 * x[0] - 2.0 * x[1]).collect();
        let views: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let fit = RidgeRegressor { lambda: 0.0 }.fit(&views, &ys).unwrap();
        assert!((fit.predict(&[3.0, 1.0]) - 3.5).abs() < 1e-9);
    }

    #[test]
    fn degenerate_fold_is_an_error() {
        let xs: Vec<Vec<f64>> = (0..10).map(|k| vec![k as f64]).collect();
        let t = vec![false; 10];
        let y = vec![0.0; 10];
        assert!(matches!(
            fit_double_ml(&xs, &t, &y, &DoubleMlConfig::default()),
            Err(OfflineError::DegeneratePropensity { .. })
        ));
    }
}
