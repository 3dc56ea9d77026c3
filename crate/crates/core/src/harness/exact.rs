//! Exact policy evaluation by forward dynamic programming over the joint
//! state distribution.

use std::collections::BTreeMap;

use serde::Serialize;

use super::HarnessError;
use crate::dp::{forward_step, reward_of};
use crate::model::{Instance, Population, SystemState};
use crate::policies::{top_by_score, DecisionContext, Policy, PolicyError, DEFAULT_EXACT_CAP};
use crate::values::z_finite;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExactEvaluation {
    /// Expected total reward.
    pub value: f64,
    /// Expected sum of never-intervene intervention values over the chosen
    /// patients.
    pub chosen_z: f64,
    /// Expected sum, under the same state distribution, of the values of the
    /// patients the index policy would pick among those in state 0.
    pub decomp_z: f64,
}

/// Evaluates `policy` from the instance's initial state. The policy must
/// expose its action distribution; every state-0 patient is eligible.
pub fn evaluate_exact(inst: &Instance, policy: &dyn Policy) -> Result<ExactEvaluation, HarnessError> {
    evaluate_exact_capped(inst, policy, DEFAULT_EXACT_CAP)
}

pub fn evaluate_exact_capped(inst: &Instance, policy: &dyn Policy, cap: usize) -> Result<ExactEvaluation, HarnessError> {
    let horizon = inst.finite_horizon()?;
    let n = inst.n_patients;
    if n > cap {
        return Err(PolicyError::InstanceTooLarge { n, cap }.into());
    }
    let population = Population::from_instance(inst.clone())?;
    population.check()?;
    let size = 1usize << n;
    let mut mass = vec![0.0; size];
    mass[inst.initial_states.to_mask()] = 1.0;

    let mut out = ExactEvaluation {
        value: 0.0,
        chosen_z: 0.0,
        decomp_z: 0.0,
    };
    for t in 1..=horizon {
        let remaining = horizon - t + 1;
        let z: Vec<f64> = inst.params.iter().map(|pp| z_finite(pp, remaining)).collect();
        let mut by_action: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for (s, &m) in mass.iter().enumerate() {
            if m == 0.0 {
                continue;
            }
            let state = SystemState::from_mask(n, s);
            let eligible = state.undesired();
            let ctx = DecisionContext {
                t,
                budget: inst.budget,
                state: &state,
                eligible: &eligible,
                population: &population,
                history: &[],
            };
            let dist = policy
                .action_distribution(&ctx)
                .ok_or_else(|| HarnessError::NotEvaluable(policy.label()))?;
            let best = top_by_score(eligible.iter().map(|&i| (i, z[i])).collect(), inst.budget, true);
            out.decomp_z += m * best.iter().map(|i| z[i]).sum::<f64>();
            for (action, w) in dist {
                if action.len() > inst.budget || action.iter().any(|i| i >= n || state.get(i).is_desired()) {
                    return Err(HarnessError::InvalidSelection {
                        policy: policy.label(),
                        t,
                        action: action.as_slice().to_vec(),
                    });
                }
                let pw = m * w;
                out.chosen_z += pw * action.iter().map(|i| z[i]).sum::<f64>();
                by_action.entry(action.to_mask()).or_insert_with(|| vec![0.0; size])[s] += pw;
            }
        }
        let mut next = vec![0.0; size];
        for (a, mut part) in by_action {
            forward_step(&inst.params, a, &mut part);
            for (acc, v) in next.iter_mut().zip(part) {
                *acc += v;
            }
        }
        out.value += next.iter().enumerate().map(|(s, m)| m * reward_of(s)).sum::<f64>();
        mass = next;
    }
    Ok(out)
}
