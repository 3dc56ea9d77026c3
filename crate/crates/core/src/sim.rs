//! Day-by-day simulation of a population under a policy, driven by a
//! Bernoulli tape.
//!
//! At each decision time `t` the engine records today's state for every
//! enrolled patient, computes eligibility, asks the policy for an action set,
//! checks it against the budget and eligibility, steps every enrolled patient
//! with the coupled kernel, and credits the states they land in. Patients
//! outside their window are frozen and earn nothing.

use rand::RngCore;
use thiserror::Error;

use crate::coupling::{coupled_patient_step, BernoulliTape, CouplingError};
use crate::model::{ActionSet, ModelError, PatientState, Population, SystemState};
use crate::offline::PatientRecord;
use crate::policies::{DecisionContext, EligibilityRule, Policy, PolicyError};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Model(#[from] ModelError),

    #[error(transparent)]
    Coupling(#[from] CouplingError),

    #[error("policy {policy} failed at t={t}: {source}")]
    Policy {
        policy: String,
        t: usize,
        #[source]
        source: PolicyError,
    },

    #[error("policy {policy} made an invalid selection at t={t}: {reason}")]
    InvalidSelection { policy: String, t: usize, reason: String },
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SimOptions {
    /// Keep the joint state at every `t = 1..=T+1`.
    pub record_states: bool,
}

#[derive(Debug, Clone)]
pub struct SimulationRun {
    pub total_reward: u64,
    pub enrolled_days: usize,
    /// Chosen set at each `t = 1..=T`.
    pub actions: Vec<ActionSet>,
    /// Joint state at `t = 1..=T+1`, when requested.
    pub states: Vec<SystemState>,
    /// Remaining reward steps of each chosen patient at the time of choice,
    /// aligned with `actions`.
    pub remaining: Vec<Vec<usize>>,
    /// Per-patient verification and intervention log.
    pub history: Vec<PatientRecord>,
}

impl SimulationRun {
    pub fn verification_rate(&self) -> f64 {
        if self.enrolled_days == 0 {
            0.0
        } else {
            self.total_reward as f64 / self.enrolled_days as f64
        }
    }
}

/// Runs `policy` on `population` over `tape`.
pub fn run_on_tape(
    population: &Population,
    policy: &mut dyn Policy,
    eligibility: EligibilityRule,
    budget: usize,
    tape: &BernoulliTape,
    rng: &mut dyn RngCore,
    options: SimOptions,
) -> Result<SimulationRun, SimError> {
    let horizon = population.horizon()?;
    let n = population.n();
    if tape.n() != n || tape.horizon() < horizon {
        return Err(CouplingError::DimensionMismatch {
            what: "tape patients",
            expected: n,
            found: tape.n(),
        }
        .into());
    }
    let mut state = population.instance.initial_states.clone();
    let mut history: Vec<PatientRecord> = (0..n)
        .map(|i| {
            let w = population.windows[i];
            PatientRecord::open(i, w.start, w.end, population.covariates[i].clone())
        })
        .collect();
    let label = policy.label();
    let mut run = SimulationRun {
        total_reward: 0,
        enrolled_days: population.enrolled_days(),
        actions: Vec::with_capacity(horizon),
        states: Vec::new(),
        remaining: Vec::with_capacity(horizon),
        history: Vec::new(),
    };

    for t in 1..=horizon {
        if options.record_states {
            run.states.push(state.clone());
        }
        let active: Vec<usize> = (0..n).filter(|&i| population.windows[i].contains(t)).collect();
        for &i in &active {
            history[i].v.push(state.get(i).as_u8());
        }
        let eligible = eligibility
            .eligible(population, &state, &history, t)
            .map_err(|source| SimError::Policy {
                policy: label.clone(),
                t,
                source,
            })?;
        let ctx = DecisionContext {
            t,
            budget,
            state: &state,
            eligible: &eligible,
            population,
            history: &history,
        };
        let chosen = policy.select(&ctx, rng).map_err(|source| SimError::Policy {
            policy: label.clone(),
            t,
            source,
        })?;
        if chosen.len() > budget {
            return Err(SimError::InvalidSelection {
                policy: label,
                t,
                reason: format!("{} chosen with budget {budget}", chosen.len()),
            });
        }
        if let Some(i) = chosen.iter().find(|i| eligible.binary_search(i).is_err()) {
            return Err(SimError::InvalidSelection {
                policy: label,
                t,
                reason: format!("patient {i} is not eligible"),
            });
        }

        let mut next = state.clone();
        for &i in &active {
            let s = coupled_patient_step(state.get(i), chosen.contains(i), tape.at(i, t));
            next.0[i] = s;
            run.total_reward += (s == PatientState::Desired) as u64;
        }
        policy.observe(&ctx, &chosen, &next);
        run.remaining.push(chosen.iter().map(|i| ctx.remaining(i)).collect());
        for &i in &active {
            history[i].a.push(chosen.contains(i) as u8);
        }
        run.actions.push(chosen);
        state = next;
    }
    if options.record_states {
        run.states.push(state);
    }
    run.history = history;
    Ok(run)
}
