//! Experiment configuration for budget sweeps. See
//! `schemas/experiment.schema.json` for the JSON layout.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::HarnessError;
use crate::model::{Instance, Population};
use crate::offline::synthetic::{generate_synthetic_population, SyntheticConfig};
use crate::offline::{arm_normal_equations, fit_ridge, regression_samples, LoggedDataset, RidgeModel, Target};
use crate::policies::{
    BayesLinear, DecompPiEstimated, DecompPiOracle, EligibilityRule, ExactOptimal, IndexNoise, MyopicOracle,
    NullPolicy, Policy, RandomBaseline, ThompsonLinear, DEFAULT_EXACT_CAP,
};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Schema { path: String, message: String },

    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum InstanceSource {
    Inline {
        instance: Instance,
    },
    /// Path to an instance JSON file, relative to the config file.
    File {
        path: PathBuf,
    },
    Synthetic {
        #[serde(default)]
        config: SyntheticConfig,
        seed: u64,
    },
}

/// Where an estimated policy gets its training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "from", rename_all = "kebab-case")]
pub enum TrainingSource {
    /// A fitted ridge model JSON.
    Model { path: PathBuf },
    /// A logged dataset in JSON lines.
    Dataset { path: PathBuf },
    /// A fresh synthetic population, drawn with its own seed. Without a
    /// config the experiment's synthetic config (or the default) is used.
    Synthetic {
        seed: u64,
        #[serde(default)]
        config: Option<SyntheticConfig>,
    },
}

fn default_cap() -> usize {
    DEFAULT_EXACT_CAP
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PolicySpec {
    Null,
    RandomBaseline,
    DecompPiOracle,
    MyopicOracle,
    DecompPiPerturbed {
        noise_scale: f64,
        #[serde(default)]
        seed: u64,
    },
    ExactOptimal {
        #[serde(default = "default_cap")]
        cap: usize,
    },
    DecompPiEstimated {
        training: TrainingSource,
        #[serde(default = "one")]
        lambda: f64,
    },
    ThompsonLinear {
        training: TrainingSource,
        #[serde(default = "one")]
        lambda: f64,
        #[serde(default = "one")]
        noise_variance: f64,
        #[serde(default = "one")]
        exploration: f64,
    },
}

fn default_replications() -> usize {
    50
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub instance: InstanceSource,
    pub policies: Vec<PolicySpec>,
    pub budgets: Vec<usize>,
    /// Defaults to streak-2 for synthetic populations, state-zero otherwise.
    #[serde(default)]
    pub eligibility: Option<EligibilityRule>,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default)]
    pub seed: u64,
    /// Output directory, relative to the config file.
    #[serde(default)]
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| ConfigError::Schema {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn check(&self) -> Result<(), ConfigError> {
        if self.policies.is_empty() {
            return Err(ConfigError::Invalid("policies: list is empty".into()));
        }
        if self.budgets.is_empty() {
            return Err(ConfigError::Invalid("budgets: list is empty".into()));
        }
        if self.replications == 0 {
            return Err(ConfigError::Invalid("replications: must be at least 1".into()));
        }
        for (k, p) in self.policies.iter().enumerate() {
            let bad = |field: &str| ConfigError::Invalid(format!("policies[{k}].{field}: must be finite and positive"));
            match *p {
                PolicySpec::DecompPiPerturbed { noise_scale, .. } if !(noise_scale >= 0.0 && noise_scale.is_finite()) => {
                    return Err(bad("noise_scale"));
                }
                PolicySpec::DecompPiEstimated { lambda, .. } if !(lambda >= 0.0 && lambda.is_finite()) => {
                    return Err(bad("lambda"));
                }
                PolicySpec::ThompsonLinear {
                    lambda,
                    noise_variance,
                    exploration,
                    ..
                } => {
                    if !(lambda > 0.0 && lambda.is_finite()) {
                        return Err(bad("lambda"));
                    }
                    if !(noise_variance > 0.0 && noise_variance.is_finite()) {
                        return Err(bad("noise_variance"));
                    }
                    if !(exploration >= 0.0 && exploration.is_finite()) {
                        return Err(bad("exploration"));
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn eligibility(&self) -> EligibilityRule {
        self.eligibility.unwrap_or(match self.instance {
            InstanceSource::Synthetic { .. } => EligibilityRule::streak2(),
            _ => EligibilityRule::StateZero,
        })
    }

    fn synthetic_config(&self) -> SyntheticConfig {
        match &self.instance {
            InstanceSource::Synthetic { config, .. } => config.clone(),
            _ => SyntheticConfig::default(),
        }
    }

    /// The population the sweep runs on. Relative paths resolve against `base`.
    pub fn population(&self, base: &Path) -> Result<Population, HarnessError> {
        let pop = match &self.instance {
            InstanceSource::Inline { instance } => Population::from_instance(instance.clone().validated()?)?,
            InstanceSource::File { path } => {
                let text = std::fs::read_to_string(base.join(path))?;
                let instance = Instance::from_json(&text).map_err(|e| HarnessError::Config(format!("instance file: {e}")))?;
                Population::from_instance(instance.validated()?)?
            }
            InstanceSource::Synthetic { config, seed } => config.draw_population(*seed)?,
        };
        pop.check()?;
        Ok(pop)
    }

    pub fn build_policies(&self, population: &Population, base: &Path) -> Result<Vec<Box<dyn Policy>>, HarnessError> {
        self.policies.iter().map(|spec| self.build(spec, population, base)).collect()
    }

    fn build(&self, spec: &PolicySpec, population: &Population, base: &Path) -> Result<Box<dyn Policy>, HarnessError> {
        let horizon = population.horizon()?;
        Ok(match spec {
            PolicySpec::Null => Box::new(NullPolicy),
            PolicySpec::RandomBaseline => Box::new(RandomBaseline),
            PolicySpec::DecompPiOracle => Box::new(DecompPiOracle::new()),
            PolicySpec::MyopicOracle => Box::new(MyopicOracle),
            PolicySpec::DecompPiPerturbed { noise_scale, seed } => Box::new(DecompPiOracle::with_noise(
                IndexNoise::lognormal(population.n(), horizon, *noise_scale, *seed),
            )),
            PolicySpec::ExactOptimal { cap } => Box::new(ExactOptimal::solve(population, *cap)?),
            PolicySpec::DecompPiEstimated { training, lambda } => {
                let model = match training {
                    TrainingSource::Model { path } => {
                        let text = std::fs::read_to_string(base.join(path))?;
                        serde_json::from_str::<RidgeModel>(&text)
                            .map_err(|e| HarnessError::Config(format!("model file: {e}")))?
                    }
                    other => fit_ridge(&self.training_data(other, base)?, *lambda)?,
                };
                Box::new(DecompPiEstimated::new(model))
            }
            PolicySpec::ThompsonLinear {
                training,
                lambda,
                noise_variance,
                exploration,
            } => {
                if matches!(training, TrainingSource::Model { .. }) {
                    return Err(HarnessError::Config(
                        "thompson-linear needs a dataset or synthetic training source".into(),
                    ));
                }
                let data = self.training_data(training, base)?;
                let samples = regression_samples(&data, Target::NextDay)?;
                let dim = data.static_dim() + crate::offline::HISTORY_DIM;
                let [ne0, ne1] = arm_normal_equations(&samples, dim);
                Box::new(ThompsonLinear::new(
                    BayesLinear::from_normal_equations(&ne0, *lambda, *noise_variance),
                    BayesLinear::from_normal_equations(&ne1, *lambda, *noise_variance),
                    *exploration,
                )?)
            }
        })
    }

    fn training_data(&self, source: &TrainingSource, base: &Path) -> Result<LoggedDataset, HarnessError> {
        match source {
            TrainingSource::Model { .. } => Err(HarnessError::Config("a model is not a dataset".into())),
            TrainingSource::Dataset { path } => {
                let file = std::fs::File::open(base.join(path))?;
                Ok(LoggedDataset::read_jsonl(std::io::BufReader::new(file))?)
            }
            TrainingSource::Synthetic { seed, config } => {
                let cfg = config.clone().unwrap_or_else(|| self.synthetic_config());
                Ok(generate_synthetic_population(&cfg, *seed)?.1)
            }
        }
    }
}
