//! End-to-end recovery guard: on the committed synthetic fixture the
//! estimated-index policy should mostly pick the same patients as the oracle.

use std::path::Path;
use std::sync::{Arc, Mutex};

use rand::RngCore;

use intervene::coupling::BernoulliTape;
use intervene::harness::config::ExperimentConfig;
use intervene::harness::{policy_rng, tape_seed};
use intervene::model::{ActionSet, SystemState};
use intervene::policies::{top_by_score, DecisionContext, DecompPiOracle, Policy, PolicyError};
use intervene::sim::{run_on_tape, SimOptions};

#[derive(Debug, Default)]
struct Tally {
    steps: usize,
    hits: usize,
    shared: usize,
    oracle_total: usize,
}

/// Follows the wrapped policy and compares each choice with the oracle's
/// top-B set on the same state.
#[derive(Clone)]
struct Probe {
    inner: Box<dyn Policy>,
    tally: Arc<Mutex<Tally>>,
}

impl Policy for Probe {
    fn label(&self) -> String {
        self.inner.label()
    }

    fn select(&mut self, ctx: &DecisionContext<'_>, rng: &mut dyn RngCore) -> Result<ActionSet, PolicyError> {
        let chosen = self.inner.select(ctx, rng)?;
        let oracle = top_by_score(
            ctx.candidates().map(|i| (i, DecompPiOracle::index(ctx, i))).collect(),
            ctx.budget,
            true,
        );
        if !oracle.is_empty() && !chosen.is_empty() {
            let shared = chosen.iter().filter(|&i| oracle.contains(i)).count();
            let mut t = self.tally.lock().unwrap();
            t.steps += 1;
            t.hits += (shared > 0) as usize;
            t.shared += shared;
            t.oracle_total += oracle.len();
        }
        Ok(chosen)
    }

    fn observe(&mut self, ctx: &DecisionContext<'_>, actions: &ActionSet, next: &SystemState) {
        self.inner.observe(ctx, actions, next);
    }

    fn boxed_clone(&self) -> Box<dyn Policy> {
        Box::new(self.clone())
    }
}

#[test]
fn estimated_top_set_overlaps_oracle_top_set() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/sweep.json");
    let cfg = ExperimentConfig::load(&path).unwrap();
    let base = path.parent().unwrap();
    let pop = cfg.population(base).unwrap();
    let policies = cfg.build_policies(&pop, base).unwrap();
    let estimated = policies.iter().find(|p| p.label() == "decomp-pi-estimated").unwrap();
    let horizon = pop.horizon().unwrap();

    for budget in [5, 10] {
        let tally = Arc::new(Mutex::new(Tally::default()));
        let mut probe = Probe {
            inner: estimated.boxed_clone(),
            tally: tally.clone(),
        };
        let tape = BernoulliTape::draw(&pop.instance.params, horizon, tape_seed(cfg.seed, 0));
        let mut rng = policy_rng(cfg.seed, 0, 0);
        run_on_tape(&pop, &mut probe, cfg.eligibility(), budget, &tape, &mut rng, SimOptions::default()).unwrap();
        let t = tally.lock().unwrap();
        let hit_rate = t.hits as f64 / t.steps as f64;
        let share = t.shared as f64 / t.oracle_total as f64;
        println!("B={budget}: {} steps, shared-patient steps {hit_rate:.3}, mean set overlap {share:.3}", t.steps);
        assert!(t.steps >= 100);
        assert!(hit_rate >= 0.6, "only {hit_rate:.3} of steps share a patient with the oracle set");
    }
}
