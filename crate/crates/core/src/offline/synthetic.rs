//! Synthetic populations with known `(p, q, tau)` and logged trajectories
//! generated under a baseline policy.
//!
//! Each patient gets standard-normal static covariates `x`. A parameter is
//! drawn from its base law and shifted on the logit scale by `<w, x>`, so
//! covariates carry signal about the hidden dynamics. Draws violating
//! `p + q <= 1` or `p + tau <= 1` are redrawn.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{LoggedDataset, OfflineError};
use crate::coupling::BernoulliTape;
use crate::model::{Horizon, Instance, PatientParams, PatientState, Population, SystemState, Window};
use crate::policies::{EligibilityRule, RandomBaseline};
use crate::seeds::{derive_seed, stream_rng};
use crate::sim::{run_on_tape, SimError, SimOptions};

const POPULATION_TAG: u64 = 0x706f70;
const LOG_TAPE_TAG: u64 = 0x7461;
const LOG_POLICY_TAG: u64 = 0x706f6c;

#[derive(Debug, Error)]
pub enum SyntheticError {
    #[error("invalid synthetic config: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Offline(#[from] OfflineError),

    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Base law of one parameter before the covariate shift.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "kebab-case")]
pub enum ParamLaw {
    Beta { alpha: f64, beta: f64 },
    /// Fixed value; covariate weights are ignored.
    Constant { value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamDistribution {
    #[serde(flatten)]
    pub law: ParamLaw,
    /// Logit-scale weights on the leading covariates.
    #[serde(default)]
    pub weights: Vec<f64>,
}

impl ParamDistribution {
    pub fn beta(alpha: f64, beta: f64, weights: Vec<f64>) -> Self {
        Self {
            law: ParamLaw::Beta { alpha, beta },
            weights,
        }
    }

    pub fn constant(value: f64) -> Self {
        Self {
            law: ParamLaw::Constant { value },
            weights: Vec::new(),
        }
    }

    fn check(&self, name: &str, static_dim: usize) -> Result<(), SyntheticError> {
        let bad = |msg: String| Err(SyntheticError::InvalidConfig(format!("{name}: {msg}")));
        match self.law {
            ParamLaw::Beta { alpha, beta } if !(alpha > 0.0 && beta > 0.0 && alpha.is_finite() && beta.is_finite()) => {
                return bad(format!("beta shape parameters must be positive, got ({alpha}, {beta})"));
            }
            ParamLaw::Constant { value } if !(0.0..=1.0).contains(&value) => {
                return bad(format!("constant {value} outside [0, 1]"));
            }
            _ => {}
        }
        if self.weights.len() > static_dim {
            return bad(format!("{} weights for {static_dim} covariates", self.weights.len()));
        }
        if self.weights.iter().any(|w| !w.is_finite()) {
            return bad("non-finite weight".into());
        }
        Ok(())
    }

    fn draw(&self, rng: &mut ChaCha8Rng, x: &[f64]) -> f64 {
        match self.law {
            ParamLaw::Constant { value } => value,
            ParamLaw::Beta { alpha, beta } => {
                let base: f64 = Beta::new(alpha, beta).expect("checked shape").sample(rng);
                let base = base.clamp(1e-12, 1.0 - 1e-12);
                let shift: f64 = self.weights.iter().zip(x).map(|(w, v)| w * v).sum();
                let logit = (base / (1.0 - base)).ln() + shift;
                1.0 / (1.0 + (-logit).exp())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub n: usize,
    pub horizon: usize,
    /// Budget of the logging policy and of the resulting instance.
    pub budget: usize,
    pub static_dim: usize,
    pub p: ParamDistribution,
    pub q: ParamDistribution,
    pub tau: ParamDistribution,
    /// Enrollment window length range, inclusive.
    pub min_window: usize,
    pub max_window: usize,
    pub warmup: usize,
    /// Eligibility rule of the logging policy.
    pub eligibility: EligibilityRule,
    /// Redraws allowed per patient before giving up on a valid triple.
    pub max_redraws: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n: 200,
            horizon: 120,
            budget: 10,
            static_dim: 13,
            p: ParamDistribution::beta(1.5, 12.0, vec![0.8, 0.0, 0.0]),
            q: ParamDistribution::beta(2.0, 12.0, vec![0.0, 0.8, 0.0]),
            tau: ParamDistribution::beta(2.0, 6.0, vec![0.0, 0.0, 0.8]),
            min_window: 60,
            max_window: 120,
            warmup: super::WARMUP_DAYS,
            eligibility: EligibilityRule::streak2(),
            max_redraws: 10_000,
        }
    }
}

impl SyntheticConfig {
    pub fn check(&self) -> Result<(), SyntheticError> {
        let bad = |msg: &str| Err(SyntheticError::InvalidConfig(msg.into()));
        if self.n == 0 || self.horizon == 0 {
            return bad("n and horizon must be positive");
        }
        if self.min_window == 0 || self.min_window > self.max_window || self.max_window > self.horizon {
            return bad("need 1 <= min_window <= max_window <= horizon");
        }
        if self.warmup >= self.min_window {
            return bad("warm-up must be shorter than the shortest window");
        }
        self.p.check("p", self.static_dim)?;
        self.q.check("q", self.static_dim)?;
        self.tau.check("tau", self.static_dim)?;
        Ok(())
    }

    /// Draws the population (parameters, covariates, windows, initial states).
    pub fn draw_population(&self, seed: u64) -> Result<Population, SyntheticError> {
        self.check()?;
        let mut rng = stream_rng(derive_seed(seed, &[POPULATION_TAG]), 0);
        let mut params = Vec::with_capacity(self.n);
        let mut covariates = Vec::with_capacity(self.n);
        let mut windows = Vec::with_capacity(self.n);
        let mut s0 = Vec::with_capacity(self.n);
        for i in 0..self.n {
            let x: Vec<f64> = (0..self.static_dim).map(|_| rng.sample(StandardNormal)).collect();
            let pp = (0..=self.max_redraws)
                .map(|_| PatientParams::new(self.p.draw(&mut rng, &x), self.q.draw(&mut rng, &x), self.tau.draw(&mut rng, &x)))
                .find(PatientParams::is_valid)
                .ok_or_else(|| {
                    SyntheticError::InvalidConfig(format!("no valid parameters for patient {i} after {} redraws", self.max_redraws))
                })?;
            let len = rng.random_range(self.min_window..=self.max_window);
            let start = rng.random_range(1..=self.horizon + 1 - len);
            windows.push(Window { start, end: start + len - 1 });
            let stationary = if pp.p + pp.q > 0.0 { pp.p / (pp.p + pp.q) } else { 0.0 };
            s0.push(PatientState::from_bit(rng.random::<f64>() < stationary));
            params.push(pp);
            covariates.push(x);
        }
        let instance = Instance {
            n_patients: self.n,
            horizon: Horizon::Finite(self.horizon),
            budget: self.budget,
            params,
            initial_states: SystemState(s0),
        };
        Ok(Population {
            instance,
            windows,
            covariates,
            warmup: self.warmup,
        })
    }
}

/// Draws a population and logs it under the random baseline with the
/// configured budget and eligibility rule.
pub fn generate_synthetic_population(
    config: &SyntheticConfig,
    seed: u64,
) -> Result<(Population, LoggedDataset), SyntheticError> {
    let population = config.draw_population(seed)?;
    let tape = BernoulliTape::draw(&population.instance.params, config.horizon, derive_seed(seed, &[LOG_TAPE_TAG]));
    let mut rng = stream_rng(derive_seed(seed, &[LOG_POLICY_TAG]), 0);
    let run = run_on_tape(
        &population,
        &mut RandomBaseline,
        config.eligibility,
        config.budget,
        &tape,
        &mut rng,
        SimOptions::default(),
    )?;
    let dataset = LoggedDataset::new(run.history)?;
    Ok((population, dataset))
}
