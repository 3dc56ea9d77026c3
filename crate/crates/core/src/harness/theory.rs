//! Randomized certification of the index policy's guarantees on small
//! instances, with every value computed exactly.

use rand::{Rng, RngCore};
use serde::Serialize;

use super::exact::{evaluate_exact, ExactEvaluation};
use super::{coupled_compare, HarnessError};
use crate::coupling::{coupled_patient_step, counterfactual_z, BernoulliTape, TapeDraw};
use crate::model::{Instance, PatientParams, PatientState, Population, SystemState};
use crate::policies::{
    solve_exact_optimal, DecompPiOracle, IndexNoise, NullPolicy, Policy, RandomBaseline, SingleIntervention,
    DEFAULT_EXACT_CAP,
};
use crate::seeds::{derive_seed, stream_rng};

/// Tolerance on every inequality and identity in this module.
pub const THEORY_TOL: f64 = 1e-9;

/// Shape limits for [`random_instance`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct InstanceShape {
    pub max_n: usize,
    pub max_t: usize,
    pub max_b: usize,
}

impl Default for InstanceShape {
    fn default() -> Self {
        Self {
            max_n: 4,
            max_t: 6,
            max_b: 2,
        }
    }
}

/// Uniform parameters, rejection-sampled until valid, and a uniform initial state.
pub fn random_params(rng: &mut dyn RngCore) -> PatientParams {
    loop {
        let pp = PatientParams::new(rng.random(), rng.random(), rng.random());
        if pp.is_valid() {
            return pp;
        }
    }
}

pub fn random_instance(rng: &mut dyn RngCore, shape: InstanceShape) -> Instance {
    let n = rng.random_range(1..=shape.max_n);
    let t = rng.random_range(1..=shape.max_t);
    let b = rng.random_range(0..=shape.max_b);
    let params = (0..n).map(|_| random_params(rng)).collect();
    let s0 = (0..n).map(|_| PatientState::from_bit(rng.random::<bool>())).collect();
    Instance::new(params, t, b, s0)
}

/// Instance for trial `k` of a suite seeded with `seed`.
pub fn trial_instance(seed: u64, k: u64, shape: InstanceShape) -> Instance {
    let mut rng = stream_rng(derive_seed(seed, &[0x7472, k]), 0);
    random_instance(&mut rng, shape)
}

// ---------------------------------------------------------------------------
// Bounds
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundsReport {
    pub opt: f64,
    pub null: f64,
    pub decomp_pi: f64,
    /// `(opt - null) / (decomp_pi - null)`, 1 when both gaps vanish.
    pub gap_ratio: f64,
    /// `opt - null <= 2 (decomp_pi - null)`.
    pub gain_bound_holds: bool,
    /// `opt <= 2 decomp_pi`.
    pub value_bound_holds: bool,
    /// `opt - null <= 2 E[sum of the best state-0 values]` under the index
    /// policy's own state distribution.
    pub index_sum_holds: bool,
}

impl BoundsReport {
    pub fn holds(&self) -> bool {
        self.gain_bound_holds && self.value_bound_holds && self.index_sum_holds
    }
}

pub fn check_factor_two_bounds(inst: &Instance) -> Result<BoundsReport, HarnessError> {
    check_factor_two_bounds_with(inst, &DecompPiOracle::new())
}

/// As [`check_factor_two_bounds`] with a substitute for the index policy.
pub fn check_factor_two_bounds_with(inst: &Instance, index_policy: &dyn Policy) -> Result<BoundsReport, HarnessError> {
    let opt = solve_exact_optimal(inst, DEFAULT_EXACT_CAP)?.root_value(&inst.initial_states);
    let null = evaluate_exact(inst, &NullPolicy)?.value;
    let dp = evaluate_exact(inst, index_policy)?;
    let gap_opt = opt - null;
    let gap_dp = dp.value - null;
    let gap_ratio = if gap_opt.abs() <= THEORY_TOL && gap_dp.abs() <= THEORY_TOL {
        1.0
    } else {
        gap_opt / gap_dp
    };
    Ok(BoundsReport {
        opt,
        null,
        decomp_pi: dp.value,
        gap_ratio,
        gain_bound_holds: gap_opt <= 2.0 * gap_dp + THEORY_TOL,
        value_bound_holds: opt <= 2.0 * dp.value + THEORY_TOL,
        index_sum_holds: gap_opt <= 2.0 * dp.decomp_z + THEORY_TOL,
    })
}

// ---------------------------------------------------------------------------
// Gain decomposition
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GainIdentityReport {
    /// `ALG - NULL`.
    pub lhs: f64,
    /// Expected sum of intervention values over chosen patients.
    pub rhs: f64,
    pub abs_gap: f64,
    pub holds: bool,
}

pub fn check_gain_identity(inst: &Instance, policy: &dyn Policy) -> Result<GainIdentityReport, HarnessError> {
    let null = evaluate_exact(inst, &NullPolicy)?.value;
    let alg = evaluate_exact(inst, policy)?;
    let lhs = alg.value - null;
    let rhs = alg.chosen_z;
    let abs_gap = (lhs - rhs).abs();
    Ok(GainIdentityReport {
        lhs,
        rhs,
        abs_gap,
        holds: abs_gap <= THEORY_TOL,
    })
}

// ---------------------------------------------------------------------------
// Robustness to index noise
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RobustnessReport {
    pub noise_scale: f64,
    /// `E[sum of chosen values] / E[sum of best values]`, 1 when both are 0.
    pub alpha_measured: f64,
    pub opt: f64,
    pub null: f64,
    pub alg: f64,
    pub bound_holds: bool,
}

pub fn check_robustness(inst: &Instance, noise_scale: f64, seed: u64) -> Result<RobustnessReport, HarnessError> {
    let horizon = inst.finite_horizon()?;
    let policy = DecompPiOracle::with_noise(IndexNoise::lognormal(inst.n_patients, horizon, noise_scale, seed));
    let opt = solve_exact_optimal(inst, DEFAULT_EXACT_CAP)?.root_value(&inst.initial_states);
    let null = evaluate_exact(inst, &NullPolicy)?.value;
    let ExactEvaluation {
        value: alg,
        chosen_z,
        decomp_z,
    } = evaluate_exact(inst, &policy)?;
    let alpha = if decomp_z <= THEORY_TOL { 1.0 } else { (chosen_z / decomp_z).min(1.0) };
    // alpha = 0 makes the bound vacuous
    let bound_holds = alpha <= 0.0 || opt - null <= 2.0 / alpha * (alg - null) + THEORY_TOL;
    Ok(RobustnessReport {
        noise_scale,
        alpha_measured: alpha,
        opt,
        null,
        alg,
        bound_holds,
    })
}

// ---------------------------------------------------------------------------
// Coupling
// ---------------------------------------------------------------------------

/// Largest gap between the tape-marginalized one-step law and the direct
/// kernel, over both states and actions.
pub fn kernel_equivalence_error(params: &PatientParams) -> f64 {
    let mut worst: f64 = 0.0;
    for state in [PatientState::Undesired, PatientState::Desired] {
        for chosen in [false, true] {
            let coupled: f64 = (0u8..8)
                .map(TapeDraw::from_bits)
                .filter(|d| coupled_patient_step(state, chosen, *d).is_desired())
                .map(|d| d.probability(params))
                .sum();
            worst = worst.max((coupled - params.prob_desired(state, chosen)).abs());
        }
    }
    worst
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CouplingReport {
    pub kernel_max_error: f64,
    /// `(patient, time)` pairs where the never-intervene path is in state 1
    /// and a policy path is in state 0.
    pub dominance_violations: usize,
    /// Single interventions whose reward gain differs from the
    /// counterfactual divergence count.
    pub z_identity_violations: usize,
    pub holds: bool,
}

/// Kernel equivalence for every patient, pathwise dominance of the index
/// and random policies over never-intervene, and the single-intervention
/// gain identity, all on one tape drawn from `seed`.
pub fn check_coupling(inst: &Instance, seed: u64) -> Result<CouplingReport, HarnessError> {
    let kernel_max_error = inst.params.iter().map(kernel_equivalence_error).fold(0.0, f64::max);
    let population = Population::from_instance(inst.clone())?;
    let horizon = population.horizon()?;
    let tape = BernoulliTape::draw(&inst.params, horizon, seed);

    let policies: Vec<Box<dyn Policy>> = vec![Box::new(NullPolicy), Box::new(DecompPiOracle::new()), Box::new(RandomBaseline)];
    let result = coupled_compare(&population, &policies, &tape, seed)?;
    let null_states = &result.runs[0].states;
    let dominance_violations = result.runs[1..]
        .iter()
        .map(|run| dominance_violations(null_states, &run.states))
        .sum();

    let mut with_budget = population.clone();
    with_budget.instance.budget = with_budget.instance.budget.max(1);
    let mut z_identity_violations = 0;
    for i in 0..inst.n_patients {
        for t in 1..=horizon {
            let one: Vec<Box<dyn Policy>> = vec![Box::new(NullPolicy), Box::new(SingleIntervention { patient: i, t })];
            let pair = coupled_compare(&with_budget, &one, &tape, seed)?;
            let gain = pair.runs[1].total_reward as i64 - pair.runs[0].total_reward as i64;
            let z = counterfactual_z(tape.row(i), t, pair.runs[0].states[t - 1].get(i));
            if gain != z as i64 {
                z_identity_violations += 1;
            }
        }
    }
    Ok(CouplingReport {
        kernel_max_error,
        dominance_violations,
        z_identity_violations,
        holds: kernel_max_error <= 1e-12 && dominance_violations == 0 && z_identity_violations == 0,
    })
}

/// Count of `(i, t)` with `base` in state 1 and `other` in state 0.
pub fn dominance_violations(base: &[SystemState], other: &[SystemState]) -> usize {
    base.iter()
        .zip(other)
        .map(|(b, o)| (0..b.len()).filter(|&i| b.get(i).is_desired() && !o.get(i).is_desired()).count())
        .sum()
}

// ---------------------------------------------------------------------------
// Suites
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    Coupling,
    Bounds,
    GainIdentity,
    Robustness,
}

impl Suite {
    pub const ALL: [Suite; 4] = [Suite::Coupling, Suite::Bounds, Suite::GainIdentity, Suite::Robustness];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Coupling => "coupling",
            Suite::Bounds => "bounds",
            Suite::GainIdentity => "prop3",
            Suite::Robustness => "robustness",
        }
    }

    fn shape(self) -> InstanceShape {
        match self {
            Suite::GainIdentity => InstanceShape {
                max_n: 3,
                max_t: 5,
                max_b: 2,
            },
            _ => InstanceShape::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SuiteOptions {
    pub trials: usize,
    pub seed: u64,
    /// Negates the index in the bounds suite. A negative control: the suite
    /// must then fail.
    pub flip_sign: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Counterexample {
    pub trial: usize,
    pub instance: Instance,
    pub report: serde_json::Value,
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub suite: &'static str,
    pub trials: usize,
    pub seed: u64,
    pub passed: bool,
    pub failures: usize,
    pub evidence: serde_json::Value,
    /// First failing trial, for replay.
    pub counterexample: Option<Counterexample>,
}

pub const ROBUSTNESS_SCALES: [f64; 3] = [0.25, 0.5, 1.0];

struct Trial {
    holds: bool,
    report: serde_json::Value,
    metrics: Vec<f64>,
}

fn to_json<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("reports serialize")
}

fn run_trial(suite: Suite, inst: &Instance, k: u64, opts: &SuiteOptions) -> Result<Trial, HarnessError> {
    Ok(match suite {
        Suite::Coupling => {
            let r = check_coupling(inst, derive_seed(opts.seed, &[0x6370, k]))?;
            Trial {
                holds: r.holds,
                report: to_json(&r),
                metrics: vec![r.kernel_max_error, r.dominance_violations as f64, r.z_identity_violations as f64],
            }
        }
        Suite::Bounds => {
            let r = if opts.flip_sign {
                check_factor_two_bounds_with(inst, &DecompPiOracle::sign_flipped())?
            } else {
                check_factor_two_bounds(inst)?
            };
            Trial {
                holds: r.holds(),
                report: to_json(&r),
                metrics: vec![r.gap_ratio],
            }
        }
        Suite::GainIdentity => {
            let policies: [(&str, Box<dyn Policy>); 3] = [
                ("decomp-pi-oracle", Box::new(DecompPiOracle::new())),
                ("myopic-oracle", Box::new(crate::policies::MyopicOracle)),
                ("random-baseline", Box::new(RandomBaseline)),
            ];
            let mut reports = serde_json::Map::new();
            let mut worst: f64 = 0.0;
            let mut holds = true;
            for (name, p) in &policies {
                let r = check_gain_identity(inst, p.as_ref())?;
                worst = worst.max(r.abs_gap);
                holds &= r.holds;
                reports.insert((*name).into(), to_json(&r));
            }
            Trial {
                holds,
                report: serde_json::Value::Object(reports),
                metrics: vec![worst],
            }
        }
        Suite::Robustness => {
            let mut reports = Vec::new();
            let mut holds = true;
            let mut min_alpha: f64 = 1.0;
            for (j, &scale) in ROBUSTNESS_SCALES.iter().enumerate() {
                let r = check_robustness(inst, scale, derive_seed(opts.seed, &[0x726f, k, j as u64]))?;
                holds &= r.bound_holds;
                min_alpha = min_alpha.min(r.alpha_measured);
                reports.push(to_json(&r));
            }
            Trial {
                holds,
                report: serde_json::Value::Array(reports),
                metrics: vec![min_alpha],
            }
        }
    })
}

/// Runs `opts.trials` random instances through `suite`.
pub fn run_suite(suite: Suite, opts: &SuiteOptions) -> Result<SuiteReport, HarnessError> {
    use rayon::prelude::*;
    let shape = suite.shape();
    let trials: Vec<(Instance, Trial)> = (0..opts.trials)
        .into_par_iter()
        .map(|k| {
            let inst = trial_instance(opts.seed, k as u64, shape);
            let t = run_trial(suite, &inst, k as u64, opts)?;
            Ok((inst, t))
        })
        .collect::<Result<_, HarnessError>>()?;

    let failures = trials.iter().filter(|(_, t)| !t.holds).count();
    let counterexample = trials.iter().enumerate().find(|(_, (_, t))| !t.holds).map(|(k, (inst, t))| Counterexample {
        trial: k,
        instance: inst.clone(),
        report: t.report.clone(),
    });
    let column = |j: usize| trials.iter().map(move |(_, t)| t.metrics[j]);
    let evidence = match suite {
        Suite::Coupling => serde_json::json!({
            "max_kernel_error": column(0).fold(0.0, f64::max),
            "dominance_violations": column(1).sum::<f64>(),
            "z_identity_violations": column(2).sum::<f64>(),
        }),
        Suite::Bounds => serde_json::json!({
            "max_gap_ratio": column(0).fold(f64::NEG_INFINITY, f64::max),
            "flip_sign": opts.flip_sign,
        }),
        Suite::GainIdentity => serde_json::json!({ "max_abs_gap": column(0).fold(0.0, f64::max) }),
        Suite::Robustness => serde_json::json!({
            "noise_scales": ROBUSTNESS_SCALES,
            "min_alpha": column(0).fold(1.0, f64::min),
        }),
    };
    Ok(SuiteReport {
        suite: suite.name(),
        trials: opts.trials,
        seed: opts.seed,
        passed: failures == 0,
        failures,
        evidence,
        counterexample,
    })
}
