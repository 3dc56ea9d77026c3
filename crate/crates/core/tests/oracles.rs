//! Exact solvers and evaluators against brute force and Monte Carlo.

use intervene::coupling::{coupled_patient_step, counterfactual_z, BernoulliTape, TapeDraw};
use intervene::harness::theory::{trial_instance, InstanceShape};
use intervene::harness::{evaluate_exact, policy_rng};
use intervene::model::{transition_prob, Instance, PatientParams, PatientState, Population, SystemState};
use intervene::policies::{
    combinations, solve_exact_optimal, DecisionContext, DecompPiOracle, EligibilityRule, MyopicOracle, NullPolicy,
    Policy, RandomBaseline, DEFAULT_EXACT_CAP,
};
use intervene::sim::{run_on_tape, SimOptions};

fn all_states(n: usize) -> Vec<SystemState> {
    (0..1usize << n).map(|m| SystemState::from_mask(n, m)).collect()
}

/// Joint transition probability as a plain product of per-patient kernels.
fn joint_prob(inst: &Instance, from: &SystemState, action: &[usize], to: &SystemState) -> f64 {
    (0..inst.n_patients)
        .map(|i| transition_prob(&inst.params[i], from.get(i), action.contains(&i), to.get(i)))
        .product()
}

fn feasible_actions(inst: &Instance, s: &SystemState) -> Vec<Vec<usize>> {
    let zeros = s.undesired();
    (0..=inst.budget.min(zeros.len())).flat_map(|k| combinations(&zeros, k)).collect()
}

/// Expectimax over the joint chain with no factoring.
fn expectimax(inst: &Instance, s: &SystemState, left: usize) -> f64 {
    if left == 0 {
        return 0.0;
    }
    feasible_actions(inst, s)
        .iter()
        .map(|a| {
            all_states(inst.n_patients)
                .iter()
                .map(|s2| joint_prob(inst, s, a, s2) * (s2.count_desired() as f64 + expectimax(inst, s2, left - 1)))
                .sum::<f64>()
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Value of a policy that is a function of `(state, t)`, by plain recursion
/// over its action distribution.
fn evaluate_naive(inst: &Instance, policy: &dyn Policy, s: &SystemState, t: usize) -> f64 {
    let horizon = inst.finite_horizon().unwrap();
    if t > horizon {
        return 0.0;
    }
    let pop = Population::from_instance(inst.clone()).unwrap();
    let eligible = s.undesired();
    let ctx = DecisionContext {
        t,
        budget: inst.budget,
        state: s,
        eligible: &eligible,
        population: &pop,
        history: &[],
    };
    policy
        .action_distribution(&ctx)
        .unwrap()
        .iter()
        .map(|(a, w)| {
            w * all_states(inst.n_patients)
                .iter()
                .map(|s2| {
                    joint_prob(inst, s, a.as_slice(), s2) * (s2.count_desired() as f64 + evaluate_naive(inst, policy, s2, t + 1))
                })
                .sum::<f64>()
        })
        .sum()
}

#[test]
fn policy_tree_enumeration_matches_solver_on_two_by_two() {
    for k in 0..200 {
        let mut inst = trial_instance(31, k, InstanceShape { max_n: 2, max_t: 2, max_b: 2 });
        inst.n_patients = 2;
        while inst.params.len() < 2 {
            inst.params.push(PatientParams::new(0.2, 0.3, 0.4));
            inst.initial_states.0.push(PatientState::Undesired);
        }
        inst.horizon = intervene::model::Horizon::Finite(2);
        let s1 = &inst.initial_states;
        let states = all_states(2);
        // a tree is a first action plus one second-step action per next state
        let mut best = f64::NEG_INFINITY;
        for a1 in feasible_actions(&inst, s1) {
            let branches: Vec<Vec<Vec<usize>>> = states.iter().map(|s2| feasible_actions(&inst, s2)).collect();
            let mut choice = vec![0usize; states.len()];
            loop {
                let value: f64 = states
                    .iter()
                    .enumerate()
                    .map(|(j, s2)| {
                        let a2 = &branches[j][choice[j]];
                        let step2: f64 = states
                            .iter()
                            .map(|s3| joint_prob(&inst, s2, a2, s3) * s3.count_desired() as f64)
                            .sum();
                        joint_prob(&inst, s1, &a1, s2) * (s2.count_desired() as f64 + step2)
                    })
                    .sum();
                best = best.max(value);
                // odometer over the per-state choices
                let mut j = 0;
                while j < choice.len() {
                    choice[j] += 1;
                    if choice[j] < branches[j].len() {
                        break;
                    }
                    choice[j] = 0;
                    j += 1;
                }
                if j == choice.len() {
                    break;
                }
            }
        }
        let solved = solve_exact_optimal(&inst, DEFAULT_EXACT_CAP).unwrap().root_value(s1);
        assert!((best - solved).abs() < 1e-12, "trial {k}: trees {best} vs solver {solved}");
    }
}

#[test]
fn solver_matches_expectimax() {
    let shape = InstanceShape { max_n: 3, max_t: 4, max_b: 2 };
    for k in 0..150 {
        let inst = trial_instance(32, k, shape);
        let brute = expectimax(&inst, &inst.initial_states, inst.finite_horizon().unwrap());
        let solved = solve_exact_optimal(&inst, DEFAULT_EXACT_CAP).unwrap().root_value(&inst.initial_states);
        assert!((brute - solved).abs() < 1e-12, "trial {k}: {brute} vs {solved}");
    }
}

#[test]
fn exact_evaluation_matches_naive_recursion() {
    let shape = InstanceShape { max_n: 3, max_t: 4, max_b: 2 };
    let policies: Vec<Box<dyn Policy>> = vec![
        Box::new(NullPolicy),
        Box::new(DecompPiOracle::new()),
        Box::new(MyopicOracle),
        Box::new(RandomBaseline),
    ];
    for k in 0..100 {
        let inst = trial_instance(33, k, shape);
        for p in &policies {
            let naive = evaluate_naive(&inst, p.as_ref(), &inst.initial_states, 1);
            let fast = evaluate_exact(&inst, p.as_ref()).unwrap().value;
            assert!((naive - fast).abs() < 1e-12, "trial {k} {}: {naive} vs {fast}", p.label());
        }
    }
}

/// Mean and standard error of `policy`'s total reward over `reps` tapes.
fn monte_carlo(pop: &Population, policy: &dyn Policy, reps: u64) -> (f64, f64) {
    let horizon = pop.horizon().unwrap();
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for r in 0..reps {
        let tape = BernoulliTape::draw(&pop.instance.params, horizon, r);
        let mut rng = policy_rng(99, r, 0);
        let mut p = policy.boxed_clone();
        let run = run_on_tape(pop, p.as_mut(), EligibilityRule::StateZero, pop.instance.budget, &tape, &mut rng, SimOptions::default())
            .unwrap();
        let x = run.total_reward as f64;
        sum += x;
        sum_sq += x * x;
    }
    let n = reps as f64;
    let mean = sum / n;
    (mean, ((sum_sq / n - mean * mean) * n / (n - 1.0) / n).sqrt())
}

#[test]
fn index_policy_value_matches_simulation() {
    let inst = Instance::new(
        vec![
            PatientParams::new(0.10, 0.20, 0.50),
            PatientParams::new(0.30, 0.10, 0.20),
            PatientParams::new(0.05, 0.40, 0.35),
            PatientParams::new(0.20, 0.20, 0.30),
        ],
        8,
        2,
        vec![PatientState::Undesired, PatientState::Undesired, PatientState::Desired, PatientState::Undesired],
    );
    let pop = Population::from_instance(inst.clone()).unwrap();
    for p in [Box::new(DecompPiOracle::new()) as Box<dyn Policy>, Box::new(RandomBaseline)] {
        let exact = evaluate_exact(&inst, p.as_ref()).unwrap().value;
        let (mean, se) = monte_carlo(&pop, p.as_ref(), 20_000);
        assert!((mean - exact).abs() <= 3.0 * se, "{}: mc {mean} ± {se} vs exact {exact}", p.label());
    }
}

#[test]
fn null_value_matches_simulation_over_long_horizon() {
    let inst = Instance::new(vec![PatientParams::new(0.07, 0.12, 0.3)], 100, 0, vec![PatientState::Undesired]);
    let pop = Population::from_instance(inst.clone()).unwrap();
    let exact = evaluate_exact(&inst, &NullPolicy).unwrap().value;
    let (mean, se) = monte_carlo(&pop, &NullPolicy, 20_000);
    assert!((mean - exact).abs() <= 3.0 * se, "mc {mean} ± {se} vs exact {exact}");
}

#[test]
fn single_intervention_gain_equals_divergence_count_on_every_tape() {
    for horizon in 1..=6usize {
        let total = 8usize.pow(horizon as u32);
        for code in 0..total {
            let draws: Vec<TapeDraw> = (0..horizon).map(|k| TapeDraw::from_bits((code >> (3 * k) & 7) as u8)).collect();
            let tape = BernoulliTape::from_draws(&[draws.clone()]).unwrap();
            let mut null_path = vec![PatientState::Undesired];
            for d in &draws {
                null_path.push(coupled_patient_step(*null_path.last().unwrap(), false, *d));
            }
            for t in 1..=horizon {
                let mut s = null_path[t - 1];
                let mut gain = 0i64;
                for (k, d) in draws.iter().enumerate().skip(t - 1) {
                    s = coupled_patient_step(s, k + 1 == t, *d);
                    gain += s.as_u8() as i64 - null_path[k + 1].as_u8() as i64;
                }
                let z = counterfactual_z(tape.row(0), t, null_path[t - 1]);
                assert_eq!(gain, z as i64, "T={horizon} tape {code} t={t}");
            }
        }
    }
}
