//! Experiment execution: simulation, coupled comparisons, exact evaluation,
//! budget sweeps, and the randomized certification suites.

pub mod config;
mod exact;
mod sweep;
pub mod theory;

use rand::RngCore;
use thiserror::Error;

use crate::coupling::{BernoulliTape, CouplingError};
use crate::model::{ModelError, Population};
use crate::offline::synthetic::SyntheticError;
use crate::offline::OfflineError;
use crate::policies::{EligibilityRule, Policy, PolicyError};
use crate::seeds::{derive_seed, stream_rng};
use crate::sim::{run_on_tape, SimError, SimOptions, SimulationRun};

pub use exact::{evaluate_exact, evaluate_exact_capped, ExactEvaluation};
pub use sweep::{budget_sweep, summarize, SummaryRow, SweepFailure, SweepResult, SweepRow, TargetedStats};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Model(#[from] ModelError),

    #[error(transparent)]
    Coupling(#[from] CouplingError),

    #[error(transparent)]
    Policy(#[from] PolicyError),

    #[error(transparent)]
    Sim(#[from] SimError),

    #[error(transparent)]
    Offline(#[from] OfflineError),

    #[error(transparent)]
    Synthetic(#[from] SyntheticError),

    #[error("policy {0} depends on history and cannot be evaluated exactly")]
    NotEvaluable(String),

    #[error("policy {policy} chose {action:?} at t={t}, outside budget or state-0 set")]
    InvalidSelection { policy: String, t: usize, action: Vec<usize> },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub(crate) const TAPE_TAG: u64 = 0x74617065;
pub(crate) const POLICY_TAG: u64 = 0x706f6c69;

/// Tape seed of replication `r`.
pub fn tape_seed(seed: u64, r: u64) -> u64 {
    derive_seed(seed, &[TAPE_TAG, r])
}

/// Policy RNG of replication `r` for the policy at position `k`.
pub fn policy_rng(seed: u64, r: u64, k: u64) -> impl RngCore {
    stream_rng(derive_seed(seed, &[POLICY_TAG, r, k]), 0)
}

/// One run of `policy` with the population's own budget; the tape and the
/// policy's randomness both derive from `seed`.
pub fn simulate(
    population: &Population,
    policy: &mut dyn Policy,
    eligibility: EligibilityRule,
    seed: u64,
) -> Result<SimulationRun, HarnessError> {
    let horizon = population.horizon()?;
    let tape = BernoulliTape::draw(&population.instance.params, horizon, tape_seed(seed, 0));
    let mut rng = policy_rng(seed, 0, 0);
    Ok(run_on_tape(
        population,
        policy,
        eligibility,
        population.instance.budget,
        &tape,
        &mut rng,
        SimOptions { record_states: true },
    )?)
}

/// Every policy run on the same tape, with trajectories kept.
#[derive(Debug, Clone)]
pub struct CoupledRunResult {
    pub labels: Vec<String>,
    pub runs: Vec<SimulationRun>,
}

/// Runs fresh copies of `policies` on `tape` with state-zero eligibility
/// and the population's budget.
pub fn coupled_compare(
    population: &Population,
    policies: &[Box<dyn Policy>],
    tape: &BernoulliTape,
    seed: u64,
) -> Result<CoupledRunResult, HarnessError> {
    let mut labels = Vec::with_capacity(policies.len());
    let mut runs = Vec::with_capacity(policies.len());
    for (k, template) in policies.iter().enumerate() {
        let mut policy = template.boxed_clone();
        let mut rng = policy_rng(seed, 0, k as u64);
        labels.push(policy.label());
        runs.push(run_on_tape(
            population,
            policy.as_mut(),
            EligibilityRule::StateZero,
            population.instance.budget,
            tape,
            &mut rng,
            SimOptions { record_states: true },
        )?);
    }
    Ok(CoupledRunResult { labels, runs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Instance, PatientParams, PatientState};
    use crate::policies::NullPolicy;

    #[test]
    fn null_pair_is_identical() {
        let inst = Instance::new(vec![PatientParams::new(0.3, 0.2, 0.4); 3], 8, 1, vec![PatientState::Undesired; 3]);
        let pop = Population::from_instance(inst).unwrap();
        let tape = BernoulliTape::draw(&pop.instance.params, 8, 2);
        let policies: Vec<Box<dyn Policy>> = vec![Box::new(NullPolicy), Box::new(NullPolicy)];
        let r = coupled_compare(&pop, &policies, &tape, 0).unwrap();
        assert_eq!(r.runs[0].states, r.runs[1].states);
        assert_eq!(r.runs[0].total_reward, r.runs[1].total_reward);
        assert_eq!(r.runs[0].states.len(), 9);
    }
}
