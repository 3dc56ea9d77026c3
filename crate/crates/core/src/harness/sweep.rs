//! Budget sweeps: every policy at every budget over shared tapes, one tape
//! per replication.

use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use super::exact::evaluate_exact;
use super::{policy_rng, tape_seed, HarnessError};
use crate::coupling::BernoulliTape;
use crate::model::Population;
use crate::policies::{EligibilityRule, Policy, DEFAULT_EXACT_CAP};
use crate::sim::{run_on_tape, SimOptions};

/// Largest population for which sweep summaries include exact values.
const SWEEP_EXACT_CAP: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub policy: String,
    pub budget: usize,
    pub replication: usize,
    pub total_reward: u64,
    pub verification_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub policy: String,
    pub budget: usize,
    pub mean: f64,
    pub ci95_halfwidth: f64,
    pub exact_value: Option<f64>,
    /// Set when the exact value is more than four standard errors from the mean.
    #[serde(skip)]
    pub flagged: bool,
}

/// Averages over every `(chosen patient, time)` pair of a policy at a budget.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TargetedStats {
    pub policy: String,
    pub budget: usize,
    pub chosen: u64,
    pub mean_tau: Option<f64>,
    pub mean_p: Option<f64>,
    pub mean_remaining_days: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub summary: Vec<SummaryRow>,
    pub targeted: Vec<TargetedStats>,
}

impl SweepResult {
    pub fn summary_for(&self, policy: &str, budget: usize) -> Option<&SummaryRow> {
        self.summary.iter().find(|s| s.policy == policy && s.budget == budget)
    }

    pub fn targeted_for(&self, policy: &str, budget: usize) -> Option<&TargetedStats> {
        self.targeted.iter().find(|s| s.policy == policy && s.budget == budget)
    }

    /// Writes `sweep.csv`, `summary.csv` and `targeted.csv` into `dir`.
    pub fn write_csvs(&self, dir: &Path) -> Result<(), HarnessError> {
        std::fs::create_dir_all(dir)?;
        write_csv(&dir.join("sweep.csv"), &self.rows)?;
        write_csv(&dir.join("summary.csv"), &self.summary)?;
        write_csv(&dir.join("targeted.csv"), &self.targeted)?;
        Ok(())
    }
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// A sweep that stopped early, with every replication that finished.
#[derive(Debug)]
pub struct SweepFailure {
    pub error: HarnessError,
    pub partial: SweepResult,
}

#[derive(Debug, Clone, Copy, Default)]
struct Chosen {
    count: u64,
    tau: f64,
    p: f64,
    remaining: f64,
}

struct Cell {
    reward: u64,
    rate: f64,
    chosen: Chosen,
}

/// Runs every policy at every budget for `replications` coupled replications.
/// Within a replication all runs share one tape.
pub fn budget_sweep(
    population: &Population,
    policies: &[Box<dyn Policy>],
    budgets: &[usize],
    eligibility: EligibilityRule,
    replications: usize,
    seed: u64,
) -> Result<SweepResult, SweepFailure> {
    let fail = |error: HarnessError| SweepFailure {
        error,
        partial: SweepResult::default(),
    };
    let horizon = population.horizon().map_err(|e| fail(e.into()))?;
    population.check().map_err(|e| fail(e.into()))?;
    let params = &population.instance.params;
    let cells_per_rep = policies.len() * budgets.len();

    let per_rep: Vec<Result<Vec<Cell>, HarnessError>> = (0..replications)
        .into_par_iter()
        .map(|r| {
            let tape = BernoulliTape::draw(params, horizon, tape_seed(seed, r as u64));
            let mut cells = Vec::with_capacity(cells_per_rep);
            for (k, template) in policies.iter().enumerate() {
                for (j, &budget) in budgets.iter().enumerate() {
                    let mut policy = template.boxed_clone();
                    let mut rng = policy_rng(seed, r as u64, (k * budgets.len() + j) as u64);
                    let run = run_on_tape(
                        population,
                        policy.as_mut(),
                        eligibility,
                        budget,
                        &tape,
                        &mut rng,
                        SimOptions::default(),
                    )?;
                    let mut chosen = Chosen::default();
                    for (set, rem) in run.actions.iter().zip(&run.remaining) {
                        for (i, &left) in set.iter().zip(rem) {
                            chosen.count += 1;
                            chosen.tau += params[i].tau;
                            chosen.p += params[i].p;
                            chosen.remaining += left as f64;
                        }
                    }
                    cells.push(Cell {
                        reward: run.total_reward,
                        rate: run.verification_rate(),
                        chosen,
                    });
                }
            }
            Ok(cells)
        })
        .collect();

    let mut first_error = None;
    let mut done: Vec<(usize, Vec<Cell>)> = Vec::new();
    for (r, res) in per_rep.into_iter().enumerate() {
        match res {
            Ok(cells) => done.push((r, cells)),
            Err(e) => {
                first_error.get_or_insert(e);
            }
        }
    }

    let mut result = SweepResult::default();
    for (k, policy) in policies.iter().enumerate() {
        let label = policy.label();
        for (j, &budget) in budgets.iter().enumerate() {
            let idx = k * budgets.len() + j;
            let mut rewards = Vec::with_capacity(done.len());
            let mut acc = Chosen::default();
            for (r, cells) in &done {
                let c = &cells[idx];
                result.rows.push(SweepRow {
                    policy: label.clone(),
                    budget,
                    replication: *r,
                    total_reward: c.reward,
                    verification_rate: c.rate,
                });
                rewards.push(c.reward as f64);
                acc.count += c.chosen.count;
                acc.tau += c.chosen.tau;
                acc.p += c.chosen.p;
                acc.remaining += c.chosen.remaining;
            }
            let exact = exact_value(population, policy.as_ref(), budget, eligibility);
            result.summary.push(summarize(&label, budget, &rewards, exact));
            let avg = |s: f64| (acc.count > 0).then(|| s / acc.count as f64);
            result.targeted.push(TargetedStats {
                policy: label.clone(),
                budget,
                chosen: acc.count,
                mean_tau: avg(acc.tau),
                mean_p: avg(acc.p),
                mean_remaining_days: avg(acc.remaining),
            });
        }
    }
    match first_error {
        None => Ok(result),
        Some(error) => Err(SweepFailure { error, partial: result }),
    }
}

fn exact_value(population: &Population, policy: &dyn Policy, budget: usize, eligibility: EligibilityRule) -> Option<f64> {
    if !population.is_plain() || eligibility != EligibilityRule::StateZero || population.n() > SWEEP_EXACT_CAP.min(DEFAULT_EXACT_CAP) {
        return None;
    }
    evaluate_exact(&population.instance.with_budget(budget), policy).ok().map(|e| e.value)
}

/// Mean and normal-approximation 95% half-width of `rewards`.
pub fn summarize(policy: &str, budget: usize, rewards: &[f64], exact_value: Option<f64>) -> SummaryRow {
    let n = rewards.len() as f64;
    let mean = if rewards.is_empty() { f64::NAN } else { rewards.iter().sum::<f64>() / n };
    let sd = if rewards.len() > 1 {
        (rewards.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let se = if rewards.is_empty() { 0.0 } else { sd / n.sqrt() };
    let flagged = exact_value.is_some_and(|e| (mean - e).abs() > 4.0 * se && rewards.len() > 1);
    if flagged {
        log::warn!("{policy} at budget {budget}: mean {mean} is more than 4 standard errors from exact value {exact_value:?}");
    }
    SummaryRow {
        policy: policy.to_string(),
        budget,
        mean,
        ci95_halfwidth: 1.959963984540054 * se,
        exact_value,
        flagged,
    }
}
