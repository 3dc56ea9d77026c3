//! Exact optimal policy by backward induction over the joint state space.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{combinations, PolicyError};
use crate::dp::{backward_step, reward_of};
use crate::model::{ActionSet, Instance, ModelError, SystemState};

/// Largest `N` accepted by the exact solvers unless the caller raises it.
pub const DEFAULT_EXACT_CAP: usize = 12;

/// Optimal action and value-to-go for every joint state and time.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimalPolicyTable {
    n: usize,
    horizon: usize,
    /// `values[t - 1][mask]` for `t = 1..=T+1`; the last row is zero.
    values: Vec<Vec<f64>>,
    /// `actions[t - 1][mask]` as an action bitmask, `t = 1..=T`.
    actions: Vec<Vec<usize>>,
}

impl OptimalPolicyTable {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn value(&self, state: &SystemState, t: usize) -> f64 {
        self.values[t - 1][state.to_mask()]
    }

    pub fn action(&self, state: &SystemState, t: usize) -> ActionSet {
        ActionSet::from_mask(self.actions[t - 1][state.to_mask()])
    }

    pub fn action_mask(&self, mask: usize, t: usize) -> usize {
        self.actions[t - 1][mask]
    }

    /// Expected total reward from the instance's initial state.
    pub fn root_value(&self, initial: &SystemState) -> f64 {
        self.value(initial, 1)
    }

    pub fn export(&self) -> OptimalTableExport {
        let steps = (1..=self.horizon)
            .map(|t| StepExport {
                t,
                actions: (0..1usize << self.n)
                    .map(|m| (m.to_string(), ActionSet::from_mask(self.actions[t - 1][m]).as_slice().to_vec()))
                    .collect(),
                values: (0..1usize << self.n).map(|m| (m.to_string(), self.values[t - 1][m])).collect(),
            })
            .collect();
        OptimalTableExport {
            n: self.n,
            t: self.horizon,
            steps,
        }
    }
}

/// JSON form: per time step, state bitmask to chosen indices and value-to-go.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimalTableExport {
    pub n: usize,
    pub t: usize,
    pub steps: Vec<StepExport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepExport {
    pub t: usize,
    pub actions: BTreeMap<String, Vec<usize>>,
    pub values: BTreeMap<String, f64>,
}

/// Backward induction. Every action set of size at most `B` drawn from the
/// state-0 patients is tried; near-ties keep the earlier candidate in
/// (size, lexicographic) order, so the empty action wins ties.
pub fn solve_exact_optimal(inst: &Instance, cap: usize) -> Result<OptimalPolicyTable, PolicyError> {
    let horizon = inst.finite_horizon()?;
    let n = inst.n_patients;
    if n > cap || n >= usize::BITS as usize {
        return Err(PolicyError::InstanceTooLarge { n, cap });
    }
    if inst.params.len() != n {
        return Err(ModelError::DimensionMismatch {
            what: "patients",
            expected: n,
            found: inst.params.len(),
        }
        .into());
    }
    let size = 1usize << n;
    let all: Vec<usize> = (0..n).collect();
    let candidates: Vec<usize> = (0..=inst.budget.min(n))
        .flat_map(|k| combinations(&all, k))
        .map(|c| c.iter().fold(0, |m, &i| m | (1 << i)))
        .collect();

    let mut values = vec![vec![0.0; size]; horizon + 1];
    let mut actions = vec![vec![0usize; size]; horizon];
    for t in (1..=horizon).rev() {
        let next: Vec<f64> = (0..size).map(|m| reward_of(m) + values[t][m]).collect();
        let mut best = vec![f64::NEG_INFINITY; size];
        for &a in &candidates {
            let mut g = next.clone();
            backward_step(&inst.params, a, &mut g);
            for s in (0..size).filter(|s| s & a == 0) {
                if best[s] == f64::NEG_INFINITY || g[s] > best[s] + 1e-12 * best[s].abs().max(1.0) {
                    best[s] = g[s];
                    actions[t - 1][s] = a;
                }
            }
        }
        values[t - 1] = best;
    }
    Ok(OptimalPolicyTable {
        n,
        horizon,
        values,
        actions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{PatientParams, PatientState};

    fn single(p: f64, q: f64, tau: f64, b: usize) -> Instance {
        Instance::new(vec![PatientParams::new(p, q, tau)], 1, b, vec![PatientState::Undesired])
    }

    #[test]
    fn one_step_examples() {
        let table = solve_exact_optimal(&single(0.2, 0.1, 0.3, 1), DEFAULT_EXACT_CAP).unwrap();
        let s0 = SystemState(vec![PatientState::Undesired]);
        assert_eq!(table.action(&s0, 1).as_slice(), &[0]);
        assert!((table.root_value(&s0) - 0.5).abs() < 1e-15);

        let table = solve_exact_optimal(&single(0.2, 0.1, 0.3, 0), DEFAULT_EXACT_CAP).unwrap();
        assert!(table.action(&s0, 1).is_empty());
        assert!((table.root_value(&s0) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn refuses_large_instances() {
        let inst = Instance::new(vec![PatientParams::new(0.1, 0.1, 0.1); 5], 2, 1, vec![PatientState::Undesired; 5]);
        assert!(matches!(
            solve_exact_optimal(&inst, 4),
            Err(PolicyError::InstanceTooLarge { n: 5, cap: 4 })
        ));
    }

    #[test]
    fn never_intervenes_on_desired_patients() {
        let inst = Instance::new(
            vec![PatientParams::new(0.1, 0.4, 0.5), PatientParams::new(0.3, 0.2, 0.2)],
            3,
            2,
            vec![PatientState::Undesired; 2],
        );
        let table = solve_exact_optimal(&inst, DEFAULT_EXACT_CAP).unwrap();
        for t in 1..=3 {
            for m in 0..4 {
                assert_eq!(table.action_mask(m, t) & m, 0);
            }
        }
        let export = table.export();
        assert_eq!(export.steps.len(), 3);
        assert_eq!(export.steps[0].actions.len(), 4);
    }
}
