//! Intervention policies.
//!
//! A policy sees the system state, the time, and the eligible patients, and
//! returns at most `budget` of them. Policies that are a fixed (possibly
//! randomized) function of `(state, t)` also expose their action
//! distribution so they can be evaluated exactly by dynamic programming.

mod optimal;
mod thompson;

use std::sync::Arc;

use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ActionSet, Horizon, ModelError, Population, SystemState};
use crate::offline::{featurize, zhat, OfflineError, PatientRecord, RidgeModel};
use crate::seeds::stream_rng;
use crate::values::{z_finite, z_infinite};

pub use optimal::{solve_exact_optimal, OptimalPolicyTable, OptimalTableExport, DEFAULT_EXACT_CAP};
pub use thompson::{BayesLinear, ThompsonLinear};

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error(transparent)]
    Model(#[from] ModelError),

    #[error(transparent)]
    Offline(#[from] OfflineError),

    #[error("instance has {n} patients; exact methods are capped at {cap}")]
    InstanceTooLarge { n: usize, cap: usize },

    #[error("policy {0} needs patient history, which this context does not carry")]
    MissingHistory(&'static str),

    #[error("policy {0} needs every patient enrolled for the whole horizon")]
    NotPlain(&'static str),

    #[error("feature dimension {found} does not match model dimension {expected}")]
    DimensionMismatch { expected: usize, found: usize },
}

/// Everything a policy may look at when choosing at time `t`.
#[derive(Debug, Clone, Copy)]
pub struct DecisionContext<'a> {
    pub t: usize,
    pub budget: usize,
    pub state: &'a SystemState,
    /// Eligible patients, ascending.
    pub eligible: &'a [usize],
    pub population: &'a Population,
    /// Per-patient records up to `t`; empty when evaluating by DP.
    pub history: &'a [PatientRecord],
}

impl DecisionContext<'_> {
    /// Reward steps left for patient `i` if intervened on now.
    pub fn remaining(&self, i: usize) -> usize {
        (self.population.windows[i].end + 1).saturating_sub(self.t)
    }

    /// Eligible patients currently in state 0.
    pub fn candidates(&self) -> impl Iterator<Item = usize> + '_ {
        self.eligible.iter().copied().filter(|&i| !self.state.get(i).is_desired())
    }

    fn history(&self, who: &'static str) -> Result<&[PatientRecord], PolicyError> {
        if self.history.len() == self.population.n() {
            Ok(self.history)
        } else {
            Err(PolicyError::MissingHistory(who))
        }
    }
}

pub trait Policy: Send + Sync {
    fn label(&self) -> String;

    fn select(&mut self, ctx: &DecisionContext<'_>, rng: &mut dyn RngCore) -> Result<ActionSet, PolicyError>;

    /// Distribution over action sets at `ctx`, if the policy is a function of
    /// `(state, t)` alone. `None` means it cannot be evaluated exactly.
    fn action_distribution(&self, _ctx: &DecisionContext<'_>) -> Option<Vec<(ActionSet, f64)>> {
        None
    }

    /// Called after each step with the realized next states.
    fn observe(&mut self, _ctx: &DecisionContext<'_>, _actions: &ActionSet, _next: &SystemState) {}

    fn boxed_clone(&self) -> Box<dyn Policy>;
}

impl Clone for Box<dyn Policy> {
    fn clone(&self) -> Self {
        self.boxed_clone()
    }
}

/// Top `budget` entries by score, highest first, ties to the lower index.
/// With `positive_only`, non-positive scores are never chosen.
pub fn top_by_score(mut scored: Vec<(usize, f64)>, budget: usize, positive_only: bool) -> ActionSet {
    if positive_only {
        scored.retain(|&(_, s)| s > 0.0);
    }
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(budget);
    ActionSet::new(scored.into_iter().map(|(i, _)| i).collect())
}

// ---------------------------------------------------------------------------
// Eligibility
// ---------------------------------------------------------------------------

/// Which patients may receive an intervention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum EligibilityRule {
    /// Any enrolled patient in state 0.
    StateZero,
    /// Enrolled patients who have not verified for at least `k` days running.
    Streak { k: usize },
}

impl Default for EligibilityRule {
    fn default() -> Self {
        EligibilityRule::StateZero
    }
}

impl EligibilityRule {
    pub fn streak2() -> Self {
        EligibilityRule::Streak { k: 2 }
    }

    pub fn needs_history(&self) -> bool {
        matches!(self, EligibilityRule::Streak { .. })
    }

    /// Eligible patients at `t`: enrolled past warm-up, in state 0, and
    /// meeting the streak requirement.
    pub fn eligible(
        &self,
        population: &Population,
        state: &SystemState,
        history: &[PatientRecord],
        t: usize,
    ) -> Result<Vec<usize>, PolicyError> {
        if self.needs_history() && history.len() != population.n() {
            return Err(PolicyError::MissingHistory("streak eligibility"));
        }
        Ok((0..population.n())
            .filter(|&i| {
                let w = population.windows[i];
                w.start + population.warmup <= t && t <= w.end && !state.get(i).is_desired()
            })
            .filter(|&i| match *self {
                EligibilityRule::StateZero => true,
                EligibilityRule::Streak { k } => history[i].non_verify_streak(t) >= k,
            })
            .collect())
    }
}

// ---------------------------------------------------------------------------
// Policies
// ---------------------------------------------------------------------------

/// Never intervenes.
#[derive(Debug, Clone, Copy, Default)]
pub struct NullPolicy;

impl Policy for NullPolicy {
    fn label(&self) -> String {
        "null".into()
    }

    fn select(&mut self, _ctx: &DecisionContext<'_>, _rng: &mut dyn RngCore) -> Result<ActionSet, PolicyError> {
        Ok(ActionSet::empty())
    }

    fn action_distribution(&self, _ctx: &DecisionContext<'_>) -> Option<Vec<(ActionSet, f64)>> {
        Some(vec![(ActionSet::empty(), 1.0)])
    }

    fn boxed_clone(&self) -> Box<dyn Policy> {
        Box::new(*self)
    }
}

/// Uniformly random subset of the eligible state-0 patients, as large as the
/// budget allows.
#[derive(Debug, Clone, Copy, Default)]
pub struct RandomBaseline;

impl Policy for RandomBaseline {
    fn label(&self) -> String {
        "random-baseline".into()
    }

    fn select(&mut self, ctx: &DecisionContext<'_>, rng: &mut dyn RngCore) -> Result<ActionSet, PolicyError> {
        let pool: Vec<usize> = ctx.candidates().collect();
        let k = ctx.budget.min(pool.len());
        let picked = rand::seq::index::sample(rng, pool.len(), k);
        Ok(ActionSet::new(picked.into_iter().map(|j| pool[j]).collect()))
    }

    fn action_distribution(&self, ctx: &DecisionContext<'_>) -> Option<Vec<(ActionSet, f64)>> {
        let pool: Vec<usize> = ctx.candidates().collect();
        let k = ctx.budget.min(pool.len());
        let subsets = combinations(&pool, k);
        let w = 1.0 / subsets.len() as f64;
        Some(subsets.into_iter().map(|s| (ActionSet::new(s), w)).collect())
    }

    fn boxed_clone(&self) -> Box<dyn Policy> {
        Box::new(*self)
    }
}

/// All `k`-subsets of `items`, lexicographic.
pub fn combinations(items: &[usize], k: usize) -> Vec<Vec<usize>> {
    fn rec(items: &[usize], k: usize, from: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for j in from..items.len() {
            if items.len() - j < k - cur.len() {
                break;
            }
            cur.push(items[j]);
            rec(items, k, j + 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(items, k, 0, &mut Vec::with_capacity(k), &mut out);
    out
}

/// Multiplicative noise on the intervention index, one factor per
/// `(patient, time)`, drawn log-normally with the given scale.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexNoise {
    horizon: usize,
    factors: Vec<f64>,
}

impl IndexNoise {
    pub fn lognormal(n: usize, horizon: usize, scale: f64, seed: u64) -> Self {
        use rand::Rng;
        let mut rng = stream_rng(seed, 0);
        let factors = (0..n * horizon)
            .map(|_| {
                let g: f64 = rng.sample(rand_distr::StandardNormal);
                (scale * g).exp()
            })
            .collect();
        Self { horizon, factors }
    }

    pub fn factor(&self, i: usize, t: usize) -> f64 {
        self.factors[i * self.horizon + (t - 1)]
    }
}

/// Ranks state-0 patients by their true intervention value under the
/// never-intervene continuation and takes the top ones with positive value.
#[derive(Debug, Clone, Default)]
pub struct DecompPiOracle {
    noise: Option<Arc<IndexNoise>>,
    flip_sign: bool,
}

impl DecompPiOracle {
    pub fn new() -> Self {
        Self::default()
    }

    /// Index multiplied by `noise` before ranking.
    pub fn with_noise(noise: IndexNoise) -> Self {
        Self {
            noise: Some(Arc::new(noise)),
            flip_sign: false,
        }
    }

    /// Negates the index. Only useful as a negative control for the
    /// verification suites.
    pub fn sign_flipped() -> Self {
        Self {
            noise: None,
            flip_sign: true,
        }
    }

    /// Unperturbed index of patient `i` at `ctx`.
    pub fn index(ctx: &DecisionContext<'_>, i: usize) -> f64 {
        let params = &ctx.population.instance.params[i];
        match ctx.population.instance.horizon {
            Horizon::Finite(_) => z_finite(params, ctx.remaining(i)),
            Horizon::Infinite => z_infinite(params).unwrap_or(if params.tau > 0.0 { f64::INFINITY } else { 0.0 }),
        }
    }

    fn choose(&self, ctx: &DecisionContext<'_>) -> ActionSet {
        let scored = ctx
            .candidates()
            .map(|i| {
                let mut z = Self::index(ctx, i);
                if let Some(noise) = &self.noise {
                    z *= noise.factor(i, ctx.t);
                }
                if self.flip_sign {
                    z = -z;
                }
                (i, z)
            })
            .collect();
        top_by_score(scored, ctx.budget, true)
    }
}

impl Policy for DecompPiOracle {
    fn label(&self) -> String {
        match (&self.noise, self.flip_sign) {
            (_, true) => "decomp-pi-oracle-flipped".into(),
            (Some(_), _) => "decomp-pi-perturbed".into(),
            _ => "decomp-pi-oracle".into(),
        }
    }

    fn select(&mut self, ctx: &DecisionContext<'_>, _rng: &mut dyn RngCore) -> Result<ActionSet, PolicyError> {
        Ok(self.choose(ctx))
    }

    fn action_distribution(&self, ctx: &DecisionContext<'_>) -> Option<Vec<(ActionSet, f64)>> {
        Some(vec![(self.choose(ctx), 1.0)])
    }

    fn boxed_clone(&self) -> Box<dyn Policy> {
        Box::new(self.clone())
    }
}

/// Ranks state-0 patients by their one-step treatment effect `tau`.
#[derive(Debug, Clone, Copy, Default)]
pub struct MyopicOracle;

impl MyopicOracle {
    fn choose(&self, ctx: &DecisionContext<'_>) -> ActionSet {
        let params = &ctx.population.instance.params;
        let scored = ctx.candidates().map(|i| (i, params[i].tau)).collect();
        top_by_score(scored, ctx.budget, true)
    }
}

impl Policy for MyopicOracle {
    fn label(&self) -> String {
        "myopic-oracle".into()
    }

    fn select(&mut self, ctx: &DecisionContext<'_>, _rng: &mut dyn RngCore) -> Result<ActionSet, PolicyError> {
        Ok(self.choose(ctx))
    }

    fn action_distribution(&self, ctx: &DecisionContext<'_>) -> Option<Vec<(ActionSet, f64)>> {
        Some(vec![(self.choose(ctx), 1.0)])
    }

    fn boxed_clone(&self) -> Box<dyn Policy> {
        Box::new(*self)
    }
}

/// Intervenes on one patient at one time (if they are in state 0), never otherwise.
#[derive(Debug, Clone, Copy)]
pub struct SingleIntervention {
    pub patient: usize,
    pub t: usize,
}

impl SingleIntervention {
    fn choose(&self, ctx: &DecisionContext<'_>) -> ActionSet {
        if ctx.t == self.t && ctx.budget > 0 && ctx.eligible.binary_search(&self.patient).is_ok() {
            ActionSet::new(vec![self.patient])
        } else {
            ActionSet::empty()
        }
    }
}

impl Policy for SingleIntervention {
    fn label(&self) -> String {
        format!("one-{}-{}", self.patient, self.t)
    }

    fn select(&mut self, ctx: &DecisionContext<'_>, _rng: &mut dyn RngCore) -> Result<ActionSet, PolicyError> {
        Ok(self.choose(ctx))
    }

    fn action_distribution(&self, ctx: &DecisionContext<'_>) -> Option<Vec<(ActionSet, f64)>> {
        Some(vec![(self.choose(ctx), 1.0)])
    }

    fn boxed_clone(&self) -> Box<dyn Policy> {
        Box::new(*self)
    }
}

/// Plays the backward-induction optimum. Valid only for plain populations
/// with state-zero eligibility.
#[derive(Debug, Clone)]
pub struct ExactOptimal {
    table: Arc<OptimalPolicyTable>,
}

impl ExactOptimal {
    pub fn new(table: OptimalPolicyTable) -> Self {
        Self { table: Arc::new(table) }
    }

    pub fn solve(population: &Population, cap: usize) -> Result<Self, PolicyError> {
        if !population.is_plain() {
            return Err(PolicyError::NotPlain("exact-optimal"));
        }
        Ok(Self::new(solve_exact_optimal(&population.instance, cap)?))
    }

    pub fn table(&self) -> &OptimalPolicyTable {
        &self.table
    }

    fn choose(&self, ctx: &DecisionContext<'_>) -> ActionSet {
        let planned = self.table.action(ctx.state, ctx.t);
        // the table assumes every state-0 patient is eligible
        ActionSet::new(planned.iter().filter(|i| ctx.eligible.binary_search(i).is_ok()).collect())
    }
}

impl Policy for ExactOptimal {
    fn label(&self) -> String {
        "exact-optimal".into()
    }

    fn select(&mut self, ctx: &DecisionContext<'_>, _rng: &mut dyn RngCore) -> Result<ActionSet, PolicyError> {
        if !ctx.population.is_plain() || ctx.population.n() != self.table.n() {
            return Err(PolicyError::NotPlain("exact-optimal"));
        }
        Ok(self.choose(ctx))
    }

    fn action_distribution(&self, ctx: &DecisionContext<'_>) -> Option<Vec<(ActionSet, f64)>> {
        Some(vec![(self.choose(ctx), 1.0)])
    }

    fn boxed_clone(&self) -> Box<dyn Policy> {
        Box::new(self.clone())
    }
}

/// Ranks eligible patients by `zhat` from a fitted ridge model and takes the
/// top ones with positive score.
#[derive(Debug, Clone)]
pub struct DecompPiEstimated {
    model: Arc<RidgeModel>,
}

impl DecompPiEstimated {
    pub fn new(model: RidgeModel) -> Self {
        Self { model: Arc::new(model) }
    }

    pub fn model(&self) -> &RidgeModel {
        &self.model
    }

    /// `zhat` of patient `i` on day `t`.
    pub fn score(&self, record: &PatientRecord, t: usize) -> Result<f64, PolicyError> {
        let features = featurize(record, t)?;
        if features.dim() != self.model.dim() {
            return Err(PolicyError::DimensionMismatch {
                expected: self.model.dim(),
                found: features.dim(),
            });
        }
        Ok(zhat(&self.model, features.as_slice(), record.t_end - t)?)
    }
}

impl Policy for DecompPiEstimated {
    fn label(&self) -> String {
        "decomp-pi-estimated".into()
    }

    fn select(&mut self, ctx: &DecisionContext<'_>, _rng: &mut dyn RngCore) -> Result<ActionSet, PolicyError> {
        let history = ctx.history("decomp-pi-estimated")?;
        let scored = ctx
            .candidates()
            .map(|i| Ok((i, self.score(&history[i], ctx.t)?)))
            .collect::<Result<Vec<_>, PolicyError>>()?;
        Ok(top_by_score(scored, ctx.budget, true))
    }

    fn boxed_clone(&self) -> Box<dyn Policy> {
        Box::new(self.clone())
    }
}
