//! Coupled sample paths.
//!
//! Every `(patient, time)` pair gets three shared Bernoulli draws: a passive
//! draw `P ~ Bern(p)`, a relapse draw `Q ~ Bern(q / (1 - p))` and a boost
//! draw `K ~ Bern(tau / (1 - p))`. A step applies, in this order,
//!
//! 1. relapse: patients in state 1 with `Q = 1` drop to 0;
//! 2. passive promotion: patients now in state 0 with `P = 1` rise to 1;
//! 3. active promotion: chosen patients still in 0 with `K = 1` rise to 1.
//!
//! Marginally this is the two-state kernel, but because every policy reads
//! the same tape, trajectories of different policies can be compared path
//! by path.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ActionSet, Instance, ModelError, PatientParams, PatientState, SystemState};
use crate::seeds::stream_rng;

#[derive(Debug, Error)]
pub enum CouplingError {
    #[error(transparent)]
    Model(#[from] ModelError),

    #[error("dimension mismatch: {what} is {found}, expected {expected}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("time {t} outside tape horizon 1..={horizon}")]
    TimeOutOfRange { t: usize, horizon: usize },
}

/// Stream ids inside a tape seed.
const PASSIVE_STREAM: u64 = 0;
const RELAPSE_STREAM: u64 = 1;
const BOOST_STREAM: u64 = 2;

/// Bernoulli rates `(P, Q, K)` for one patient. With `p = 1` the patient is
/// promoted every step and the rescaled draws are defined as 0.
pub fn tape_rates(params: &PatientParams) -> (f64, f64, f64) {
    if params.p >= 1.0 {
        return (1.0, 0.0, 0.0);
    }
    let rest = 1.0 - params.p;
    (
        params.p,
        (params.q / rest).clamp(0.0, 1.0),
        (params.tau / rest).clamp(0.0, 1.0),
    )
}

/// The three draws for one `(patient, time)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TapeDraw {
    pub passive: bool,
    pub relapse: bool,
    pub boost: bool,
}

impl TapeDraw {
    /// Decodes bits `[passive, relapse, boost]` from the low three bits.
    pub fn from_bits(bits: u8) -> Self {
        Self {
            passive: bits & 1 == 1,
            relapse: bits >> 1 & 1 == 1,
            boost: bits >> 2 & 1 == 1,
        }
    }

    /// Probability of this draw under the tape law for `params`.
    pub fn probability(&self, params: &PatientParams) -> f64 {
        let (p, q, k) = tape_rates(params);
        let bern = |bit: bool, rate: f64| if bit { rate } else { 1.0 - rate };
        bern(self.passive, p) * bern(self.relapse, q) * bern(self.boost, k)
    }
}

/// Shared `N x T` draws, stored patient-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BernoulliTape {
    seed: Option<u64>,
    n: usize,
    horizon: usize,
    passive: Vec<bool>,
    relapse: Vec<bool>,
    boost: Vec<bool>,
}

impl BernoulliTape {
    /// Draws a tape for the given patients. Each stream comes from its own
    /// ChaCha8 stream of `seed`, so the three are independent and do not
    /// shift when the number of consumers changes.
    pub fn draw(params: &[PatientParams], horizon: usize, seed: u64) -> Self {
        let n = params.len();
        let fill = |stream: u64, pick: fn((f64, f64, f64)) -> f64| {
            let mut rng = stream_rng(seed, stream);
            let mut out = Vec::with_capacity(n * horizon);
            for pp in params {
                let rate = pick(tape_rates(pp));
                out.extend((0..horizon).map(|_| rng.random::<f64>() < rate));
            }
            out
        };
        Self {
            seed: Some(seed),
            n,
            horizon,
            passive: fill(PASSIVE_STREAM, |r| r.0),
            relapse: fill(RELAPSE_STREAM, |r| r.1),
            boost: fill(BOOST_STREAM, |r| r.2),
        }
    }

    /// Builds a tape from explicit draws, `draws[i][t-1]`.
    pub fn from_draws(draws: &[Vec<TapeDraw>]) -> Result<Self, CouplingError> {
        let n = draws.len();
        let horizon = draws.first().map_or(0, Vec::len);
        if let Some(row) = draws.iter().find(|r| r.len() != horizon) {
            return Err(CouplingError::DimensionMismatch {
                what: "tape row",
                expected: horizon,
                found: row.len(),
            });
        }
        let flat = |f: fn(&TapeDraw) -> bool| draws.iter().flatten().map(f).collect();
        Ok(Self {
            seed: None,
            n,
            horizon,
            passive: flat(|d| d.passive),
            relapse: flat(|d| d.relapse),
            boost: flat(|d| d.boost),
        })
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    fn idx(&self, i: usize, t: usize) -> usize {
        debug_assert!(i < self.n && (1..=self.horizon).contains(&t));
        i * self.horizon + (t - 1)
    }

    /// Draws for patient `i` at 1-based time `t`.
    pub fn at(&self, i: usize, t: usize) -> TapeDraw {
        let k = self.idx(i, t);
        TapeDraw {
            passive: self.passive[k],
            relapse: self.relapse[k],
            boost: self.boost[k],
        }
    }

    /// All draws of patient `i`.
    pub fn row(&self, i: usize) -> TapeRow<'_> {
        let lo = i * self.horizon;
        let hi = lo + self.horizon;
        TapeRow {
            passive: &self.passive[lo..hi],
            relapse: &self.relapse[lo..hi],
            boost: &self.boost[lo..hi],
        }
    }

    pub fn to_dump(&self) -> TapeDump {
        let grid = |v: &[bool]| -> Vec<Vec<u8>> {
            v.chunks(self.horizon.max(1))
                .take(self.n)
                .map(|c| c.iter().map(|&b| b as u8).collect())
                .collect()
        };
        TapeDump {
            seed: self.seed,
            n: self.n,
            t: self.horizon,
            p: grid(&self.passive),
            q: grid(&self.relapse),
            k: grid(&self.boost),
        }
    }

    pub fn from_dump(dump: &TapeDump) -> Result<Self, CouplingError> {
        let mut draws = vec![vec![TapeDraw::default(); dump.t]; dump.n];
        for (name, grid) in [("p", &dump.p), ("q", &dump.q), ("k", &dump.k)] {
            if grid.len() != dump.n || grid.iter().any(|r| r.len() != dump.t) {
                return Err(CouplingError::DimensionMismatch {
                    what: "tape dump grid",
                    expected: dump.n * dump.t,
                    found: grid.iter().map(Vec::len).sum(),
                });
            }
            for (i, row) in grid.iter().enumerate() {
                for (t, &bit) in row.iter().enumerate() {
                    let d = &mut draws[i][t];
                    match name {
                        "p" => d.passive = bit != 0,
                        "q" => d.relapse = bit != 0,
                        _ => d.boost = bit != 0,
                    }
                }
            }
        }
        let mut tape = Self::from_draws(&draws)?;
        tape.n = dump.n;
        tape.horizon = dump.t;
        tape.seed = dump.seed;
        Ok(tape)
    }
}

/// JSON debug dump of a tape: seed header plus three `N x T` bit grids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TapeDump {
    pub seed: Option<u64>,
    pub n: usize,
    pub t: usize,
    pub p: Vec<Vec<u8>>,
    pub q: Vec<Vec<u8>>,
    pub k: Vec<Vec<u8>>,
}

/// One patient's draws across the horizon (index `t - 1`).
#[derive(Debug, Clone, Copy)]
pub struct TapeRow<'a> {
    pub passive: &'a [bool],
    pub relapse: &'a [bool],
    pub boost: &'a [bool],
}

impl TapeRow<'_> {
    pub fn horizon(&self) -> usize {
        self.passive.len()
    }
}

/// Draws a tape for `inst`; the horizon must be finite.
pub fn draw_tape(inst: &Instance, seed: u64) -> Result<BernoulliTape, CouplingError> {
    let horizon = inst.finite_horizon()?;
    Ok(BernoulliTape::draw(&inst.params, horizon, seed))
}

/// One patient's coupled transition. `chosen` only has an effect when the
/// patient starts the step in state 0.
pub fn coupled_patient_step(state: PatientState, chosen: bool, draw: TapeDraw) -> PatientState {
    let start = state;
    let mut s = state;
    if s.is_desired() && draw.relapse {
        s = PatientState::Undesired;
    }
    if !s.is_desired() && draw.passive {
        s = PatientState::Desired;
    }
    if !s.is_desired() && chosen && !start.is_desired() && draw.boost {
        s = PatientState::Desired;
    }
    s
}

/// Applies one coupled step at time `t` to the whole system. Interventions on
/// patients already in state 1 are dropped.
pub fn coupled_step(
    inst: &Instance,
    state: &SystemState,
    action: &ActionSet,
    tape: &BernoulliTape,
    t: usize,
) -> Result<SystemState, CouplingError> {
    let n = inst.n_patients;
    if state.len() != n {
        return Err(CouplingError::DimensionMismatch {
            what: "state length",
            expected: n,
            found: state.len(),
        });
    }
    if tape.n() != n {
        return Err(CouplingError::DimensionMismatch {
            what: "tape patients",
            expected: n,
            found: tape.n(),
        });
    }
    if t == 0 || t > tape.horizon() {
        return Err(CouplingError::TimeOutOfRange {
            t,
            horizon: tape.horizon(),
        });
    }
    if let Some(bad) = action.iter().find(|&i| i >= n) {
        return Err(CouplingError::DimensionMismatch {
            what: "action index",
            expected: n,
            found: bad,
        });
    }
    for i in action.iter().filter(|&i| state.get(i).is_desired()) {
        log::warn!("dropping intervention on patient {i} at t={t}: already in state 1");
    }
    let next = (0..n)
        .map(|i| coupled_patient_step(state.get(i), action.contains(i), tape.at(i, t)))
        .collect();
    Ok(SystemState(next))
}

/// Number of reward-bearing steps (`S_{t+1} .. S_{T+1}`) on which a single
/// intervention at `t` leaves the patient in state 1 while the
/// never-intervene path sits in 0:
/// `1(S_t = 0, P_t = 0, K_t = 1) * min(B, L, T - t + 1)`, where `B` and `L`
/// are the waits until the next passive and relapse draws.
pub fn counterfactual_z(row: TapeRow<'_>, t: usize, null_state: PatientState) -> usize {
    let horizon = row.horizon();
    assert!((1..=horizon).contains(&t), "t={t} outside 1..={horizon}");
    if null_state.is_desired() || row.passive[t - 1] || !row.boost[t - 1] {
        return 0;
    }
    let cap = horizon - t + 1;
    let wait = |bits: &[bool]| {
        bits[t..]
            .iter()
            .position(|&b| b)
            .map_or(cap, |k| k + 1)
    };
    wait(row.passive).min(wait(row.relapse)).min(cap)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::transition_prob;
    use PatientState::*;

    fn d(passive: bool, relapse: bool, boost: bool) -> TapeDraw {
        TapeDraw {
            passive,
            relapse,
            boost,
        }
    }

    #[test]
    fn zero_params_give_zero_tape() {
        let tape = BernoulliTape::draw(&[PatientParams::new(0.0, 0.0, 0.0); 3], 50, 9);
        for i in 0..3 {
            for t in 1..=50 {
                assert_eq!(tape.at(i, t), TapeDraw::default());
            }
        }
    }

    #[test]
    fn relapse_marginal_rate() {
        let n = 100_000;
        let tape = BernoulliTape::draw(&[PatientParams::new(0.0, 0.5, 0.0)], n, 17);
        let hits = (1..=n).filter(|&t| tape.at(0, t).relapse).count() as f64;
        let sigma = (0.25 / n as f64).sqrt();
        assert!((hits / n as f64 - 0.5).abs() < 3.0 * sigma);
    }

    #[test]
    fn certain_passive_zeroes_rescaled_draws() {
        let tape = BernoulliTape::draw(&[PatientParams::new(1.0, 0.0, 0.0)], 200, 4);
        for t in 1..=200 {
            assert_eq!(tape.at(0, t), d(true, false, false));
        }
    }

    #[test]
    fn tape_is_seed_deterministic() {
        let pp = [PatientParams::new(0.2, 0.3, 0.1), PatientParams::new(0.5, 0.1, 0.4)];
        assert_eq!(BernoulliTape::draw(&pp, 30, 1), BernoulliTape::draw(&pp, 30, 1));
        assert_ne!(BernoulliTape::draw(&pp, 30, 1), BernoulliTape::draw(&pp, 30, 2));
    }

    #[test]
    fn phase_order_examples() {
        assert_eq!(coupled_patient_step(Desired, false, d(false, true, false)), Undesired);
        assert_eq!(coupled_patient_step(Desired, false, d(true, true, false)), Desired);
        assert_eq!(coupled_patient_step(Undesired, true, d(false, false, true)), Desired);
        assert_eq!(coupled_patient_step(Undesired, false, d(false, false, true)), Undesired);
        // a relapsing patient is not re-promoted by the boost draw
        assert_eq!(coupled_patient_step(Desired, true, d(false, true, true)), Undesired);
    }

    #[test]
    fn one_step_law_matches_kernel_exhaustively() {
        let grid = [0.0, 0.1, 0.25, 0.4, 0.5];
        for &p in &grid {
            for &q in &grid {
                for &tau in &grid {
                    let pp = PatientParams::new(p, q, tau);
                    if !pp.is_valid() {
                        continue;
                    }
                    for s in [Undesired, Desired] {
                        for a in [false, true] {
                            let up: f64 = (0..8u8)
                                .map(TapeDraw::from_bits)
                                .filter(|&dr| coupled_patient_step(s, a, dr).is_desired())
                                .map(|dr| dr.probability(&pp))
                                .sum();
                            let want = transition_prob(&pp, s, a, Desired);
                            assert!((up - want).abs() < 1e-12, "{pp:?} {s:?} {a}");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn system_step_drops_interventions_on_desired() {
        let inst = Instance::new(
            vec![PatientParams::new(0.0, 0.0, 0.5); 2],
            1,
            2,
            vec![Undesired, Desired],
        );
        let tape = BernoulliTape::from_draws(&[vec![d(false, false, true)], vec![d(false, false, true)]]).unwrap();
        let next = coupled_step(&inst, &inst.initial_states, &ActionSet::new(vec![0, 1]), &tape, 1).unwrap();
        assert_eq!(next, SystemState(vec![Desired, Desired]));
        assert!(coupled_step(&inst, &SystemState(vec![Undesired]), &ActionSet::empty(), &tape, 1).is_err());
        assert!(coupled_step(&inst, &inst.initial_states, &ActionSet::empty(), &tape, 2).is_err());
    }

    fn row_from(passive: &[u8], relapse: &[u8], boost: &[u8]) -> BernoulliTape {
        let draws: Vec<TapeDraw> = (0..passive.len())
            .map(|k| d(passive[k] == 1, relapse[k] == 1, boost[k] == 1))
            .collect();
        BernoulliTape::from_draws(&[draws]).unwrap()
    }

    #[test]
    fn z_indicator_cases() {
        let tape = row_from(&[0, 0, 0], &[0, 0, 0], &[1, 1, 1]);
        assert_eq!(counterfactual_z(tape.row(0), 1, Desired), 0);
        assert_eq!(counterfactual_z(tape.row(0), 1, Undesired), 3);
        let tape = row_from(&[1, 0, 0], &[0, 0, 0], &[1, 1, 1]);
        assert_eq!(counterfactual_z(tape.row(0), 1, Undesired), 0);
        let tape = row_from(&[0, 0, 0], &[0, 0, 0], &[0, 1, 1]);
        assert_eq!(counterfactual_z(tape.row(0), 1, Undesired), 0);
    }

    #[test]
    fn z_is_min_of_waits() {
        // t = 3, horizon 12 so T - t + 1 = 10; next P at t+2, next Q at t+4.
        let mut passive = [0u8; 12];
        let mut relapse = [0u8; 12];
        let mut boost = [0u8; 12];
        boost[2] = 1;
        passive[4] = 1;
        relapse[6] = 1;
        let tape = row_from(&passive, &relapse, &boost);
        assert_eq!(counterfactual_z(tape.row(0), 3, Undesired), 2);
    }

    #[test]
    fn dump_round_trip() {
        let pp = [PatientParams::new(0.2, 0.3, 0.1), PatientParams::new(0.5, 0.1, 0.4)];
        let tape = BernoulliTape::draw(&pp, 9, 77);
        let json = serde_json::to_string(&tape.to_dump()).unwrap();
        let back: TapeDump = serde_json::from_str(&json).unwrap();
        assert_eq!(BernoulliTape::from_dump(&back).unwrap(), tape);
    }
}
