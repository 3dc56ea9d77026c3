//! Linear Thompson sampling over the two intervention arms.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use super::{top_by_score, DecisionContext, Policy, PolicyError};
use crate::model::{ActionSet, SystemState};
use crate::offline::{featurize, NormalEquations};

/// Conjugate Gaussian linear regression with known noise variance, stored
/// in natural parameters: `precision = Sigma^-1`, `shift = Sigma^-1 mu`.
#[derive(Debug, Clone)]
pub struct BayesLinear {
    precision: DMatrix<f64>,
    shift: DVector<f64>,
    noise_variance: f64,
}

impl BayesLinear {
    /// Prior `N(0, prior_variance I)`.
    pub fn isotropic(dim: usize, prior_variance: f64, noise_variance: f64) -> Self {
        Self {
            precision: DMatrix::identity(dim, dim) / prior_variance,
            shift: DVector::zeros(dim),
            noise_variance,
        }
    }

    /// Prior centred on the ridge fit with covariance
    /// `noise_variance (X^T X + lambda I)^-1`, i.e. the ridge posterior.
    pub fn from_normal_equations(ne: &NormalEquations, lambda: f64, noise_variance: f64) -> Self {
        let dim = ne.dim();
        let mut precision = DMatrix::zeros(dim, dim);
        for i in 0..dim {
            for j in 0..=i {
                precision[(i, j)] = ne.gram[(i, j)];
                precision[(j, i)] = ne.gram[(i, j)];
            }
            precision[(i, i)] += lambda;
        }
        Self {
            precision: precision / noise_variance,
            shift: &ne.xty / noise_variance,
            noise_variance,
        }
    }

    pub fn dim(&self) -> usize {
        self.shift.len()
    }

    pub fn observe(&mut self, x: &[f64], y: f64) {
        let x = DVector::from_column_slice(x);
        let w = 1.0 / self.noise_variance;
        self.precision.syger(w, &x, &x, 1.0);
        // syger only touches the lower triangle
        for i in 0..self.dim() {
            for j in (i + 1)..self.dim() {
                self.precision[(i, j)] = self.precision[(j, i)];
            }
        }
        self.shift.axpy(w * y, &x, 1.0);
    }

    pub fn mean(&self) -> DVector<f64> {
        match self.precision.clone().cholesky() {
            Some(c) => c.solve(&self.shift),
            None => self.precision.clone().lu().solve(&self.shift).unwrap_or_else(|| DVector::zeros(self.dim())),
        }
    }

    /// `mean + scale * Sigma^{1/2} xi`, with `Sigma^{1/2} = L^-T` for
    /// `precision = L L^T`. `scale = 0` returns the mean without touching `rng`.
    pub fn sample(&self, rng: &mut dyn RngCore, scale: f64) -> DVector<f64> {
        let mean = self.mean();
        if scale == 0.0 {
            return mean;
        }
        let Some(chol) = self.precision.clone().cholesky() else {
            return mean;
        };
        let xi = DVector::from_fn(self.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
        let l_t = chol.l().transpose();
        let noise = l_t.solve_upper_triangular(&xi).unwrap_or_else(|| DVector::zeros(self.dim()));
        mean + noise * scale
    }
}

/// Samples coefficients for both arms, ranks eligible patients by the
/// sampled effect on their features, and updates after every step.
#[derive(Debug, Clone)]
pub struct ThompsonLinear {
    arms: [BayesLinear; 2],
    exploration: f64,
    pending: Vec<(usize, Vec<f64>)>,
}

impl ThompsonLinear {
    pub fn new(control: BayesLinear, treated: BayesLinear, exploration: f64) -> Result<Self, PolicyError> {
        if control.dim() != treated.dim() {
            return Err(PolicyError::DimensionMismatch {
                expected: control.dim(),
                found: treated.dim(),
            });
        }
        Ok(Self {
            arms: [control, treated],
            exploration,
            pending: Vec::new(),
        })
    }

    pub fn arms(&self) -> &[BayesLinear; 2] {
        &self.arms
    }

    pub fn dim(&self) -> usize {
        self.arms[0].dim()
    }

    /// Scores `features` against freshly sampled coefficients and returns the
    /// top `budget`. Exposed for use outside a simulation.
    pub fn rank(
        &self,
        features: &[(usize, Vec<f64>)],
        budget: usize,
        rng: &mut dyn RngCore,
    ) -> Result<ActionSet, PolicyError> {
        if let Some((_, x)) = features.iter().find(|(_, x)| x.len() != self.dim()) {
            return Err(PolicyError::DimensionMismatch {
                expected: self.dim(),
                found: x.len(),
            });
        }
        let b0 = self.arms[0].sample(rng, self.exploration);
        let b1 = self.arms[1].sample(rng, self.exploration);
        let diff = b1 - b0;
        let scored = features
            .iter()
            .map(|(i, x)| (*i, x.iter().zip(diff.iter()).map(|(a, b)| a * b).sum()))
            .collect();
        Ok(top_by_score(scored, budget, false))
    }
}

impl Policy for ThompsonLinear {
    fn label(&self) -> String {
        "thompson-linear".into()
    }

    fn select(&mut self, ctx: &DecisionContext<'_>, rng: &mut dyn RngCore) -> Result<ActionSet, PolicyError> {
        let history = ctx.history("thompson-linear")?;
        let features = ctx
            .candidates()
            .map(|i| Ok((i, featurize(&history[i], ctx.t)?.0)))
            .collect::<Result<Vec<_>, PolicyError>>()?;
        let chosen = self.rank(&features, ctx.budget, rng)?;
        self.pending = features;
        Ok(chosen)
    }

    fn observe(&mut self, _ctx: &DecisionContext<'_>, actions: &ActionSet, next: &SystemState) {
        for (i, x) in std::mem::take(&mut self.pending) {
            let arm = actions.contains(i) as usize;
            self.arms[arm].observe(&x, next.get(i).as_u8() as f64);
        }
    }

    fn boxed_clone(&self) -> Box<dyn Policy> {
        Box::new(self.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds::stream_rng;

    #[test]
    fn zero_exploration_is_deterministic_argmax() {
        let mut ne0 = NormalEquations::new(2);
        let mut ne1 = NormalEquations::new(2);
        for k in 0..50 {
            let x = [1.0, (k % 5) as f64];
            ne0.add(&x, 0.2 + 0.0 * x[1]);
            ne1.add(&x, 0.2 + 0.1 * x[1]);
        }
        let policy = ThompsonLinear::new(
            BayesLinear::from_normal_equations(&ne0, 1e-9, 1.0),
            BayesLinear::from_normal_equations(&ne1, 1e-9, 1.0),
            0.0,
        )
        .unwrap();
        let feats = vec![(0, vec![1.0, 1.0]), (1, vec![1.0, 4.0]), (2, vec![1.0, 2.0])];
        let a = policy.rank(&feats, 2, &mut stream_rng(1, 0)).unwrap();
        let b = policy.rank(&feats, 2, &mut stream_rng(99, 0)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.as_slice(), &[1, 2]);
    }

    #[test]
    fn flat_posterior_falls_back_to_index_order() {
        let arm = BayesLinear::isotropic(2, 1.0, 1.0);
        let policy = ThompsonLinear::new(arm.clone(), arm, 0.0).unwrap();
        let feats = vec![(3, vec![1.0, 0.0]), (1, vec![0.0, 1.0]), (2, vec![1.0, 1.0])];
        assert_eq!(policy.rank(&feats, 2, &mut stream_rng(0, 0)).unwrap().as_slice(), &[1, 2]);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let arm = BayesLinear::isotropic(2, 1.0, 1.0);
        let policy = ThompsonLinear::new(arm.clone(), arm, 1.0).unwrap();
        assert!(matches!(
            policy.rank(&[(0, vec![1.0])], 1, &mut stream_rng(0, 0)),
            Err(PolicyError::DimensionMismatch { expected: 2, found: 1 })
        ));
        let small = BayesLinear::isotropic(1, 1.0, 1.0);
        assert!(ThompsonLinear::new(small, BayesLinear::isotropic(2, 1.0, 1.0), 1.0).is_err());
    }

    #[test]
    fn posterior_sample_covariance_matches() {
        // one observation of x = (1, 0), y = 1, unit prior and noise:
        // posterior variance of the first coordinate is 1/2, mean 1/2
        let mut arm = BayesLinear::isotropic(2, 1.0, 1.0);
        arm.observe(&[1.0, 0.0], 1.0);
        let mut rng = stream_rng(5, 0);
        let n = 40_000;
        let draws: Vec<DVector<f64>> = (0..n).map(|_| arm.sample(&mut rng, 1.0)).collect();
        let mean0 = draws.iter().map(|d| d[0]).sum::<f64>() / n as f64;
        let var0 = draws.iter().map(|d| (d[0] - mean0).powi(2)).sum::<f64>() / n as f64;
        let var1 = draws.iter().map(|d| d[1].powi(2)).sum::<f64>() / n as f64;
        assert!((mean0 - 0.5).abs() < 4.0 * (0.5f64 / n as f64).sqrt());
        assert!((var0 - 0.5).abs() < 0.02);
        assert!((var1 - 1.0).abs() < 0.04);
    }
}
