//! Intervention values under the never-intervene policy.
//!
//! `z(M)` is the expected extra reward from intervening once on a state-0
//! patient with `M` reward steps left, following no further interventions.
//! With `r = 1 - p - q`,
//!
//! ```text
//! z(M) = tau * (1 + r + ... + r^(M-1)) = tau * (1 - r^M) / (p + q)
//! ```
//!
//! which tends to `tau / (p + q)` as `M` grows and equals `tau * M` when
//! `p + q = 0`. The exact backward recursion in [`QValueTable`] is kept
//! alongside as the reference the closed form is tested against.

use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use crate::model::{Horizon, PatientParams, PatientState};
use crate::seeds::stream_rng;

#[derive(Debug, Error, PartialEq)]
pub enum ValuesError {
    #[error("p + q = 0: the infinite-horizon intervention value is unbounded")]
    Degenerate,
}

/// Infinite-horizon value `tau / (p + q)`.
pub fn z_infinite(params: &PatientParams) -> Result<f64, ValuesError> {
    let rate = params.p + params.q;
    if rate <= 0.0 {
        return Err(ValuesError::Degenerate);
    }
    Ok(params.tau / rate)
}

/// Value with `remaining` reward steps left. `remaining = 0` gives 0.
pub fn z_finite(params: &PatientParams, remaining: usize) -> f64 {
    let rate = params.p + params.q;
    if remaining == 0 || params.tau == 0.0 {
        return 0.0;
    }
    if rate <= 0.0 {
        return params.tau * remaining as f64;
    }
    // 1 - (1 - rate)^M without cancellation for small rates
    let head = -(remaining as f64 * (-rate).ln_1p()).exp_m1();
    params.tau * head / rate
}

/// Dispatches on the horizon marker.
pub fn z_value(params: &PatientParams, remaining: Horizon) -> Result<f64, ValuesError> {
    match remaining {
        Horizon::Finite(m) => Ok(z_finite(params, m)),
        Horizon::Infinite => z_infinite(params),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InterventionValue {
    pub z: f64,
    #[serde(serialize_with = "ser_horizon")]
    pub remaining: Horizon,
}

fn ser_horizon<S: serde::Serializer>(h: &Horizon, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&h.to_string())
}

impl InterventionValue {
    /// Value of intervening on a patient currently in `state`; zero in state 1.
    pub fn of(params: &PatientParams, state: PatientState, remaining: Horizon) -> Result<Self, ValuesError> {
        let z = if state.is_desired() {
            0.0
        } else {
            z_value(params, remaining)?
        };
        Ok(Self { z, remaining })
    }
}

/// Exact `q(s, a, m)` under the never-intervene continuation, for
/// `m = 0..=max_remaining`.
#[derive(Debug, Clone)]
pub struct QValueTable {
    params: PatientParams,
    /// `value[m][s]`: expected reward over `m` steps from `s` with no interventions.
    value: Vec<[f64; 2]>,
}

impl QValueTable {
    pub fn new(params: PatientParams, max_remaining: usize) -> Self {
        let mut value = Vec::with_capacity(max_remaining + 1);
        value.push([0.0, 0.0]);
        for m in 1..=max_remaining {
            let prev = value[m - 1];
            let step = |s: PatientState| {
                let up = params.prob_desired(s, false);
                up * (1.0 + prev[1]) + (1.0 - up) * prev[0]
            };
            value.push([step(PatientState::Undesired), step(PatientState::Desired)]);
        }
        Self { params, value }
    }

    pub fn max_remaining(&self) -> usize {
        self.value.len() - 1
    }

    /// Expected reward over `remaining` steps, taking `intervene` now and
    /// never again.
    pub fn q(&self, state: PatientState, intervene: bool, remaining: usize) -> f64 {
        if remaining == 0 {
            return 0.0;
        }
        let prev = self.value[remaining - 1];
        let up = self.params.prob_desired(state, intervene);
        up * (1.0 + prev[1]) + (1.0 - up) * prev[0]
    }

    pub fn z(&self, remaining: usize) -> f64 {
        self.q(PatientState::Undesired, true, remaining) - self.q(PatientState::Undesired, false, remaining)
    }
}

/// `q(s, a, remaining)` from a fresh recursion.
pub fn q_null_single(params: &PatientParams, state: PatientState, intervene: bool, remaining: usize) -> f64 {
    QValueTable::new(*params, remaining).q(state, intervene, remaining)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub estimate: f64,
    pub std_error: f64,
    pub samples: usize,
}

/// Monte Carlo estimate of `z(remaining)`: averages the counterfactual
/// divergence length over independent tapes. Each sample draws only the
/// tape prefix the divergence length depends on (the `t` draws, then passive
/// and relapse draws until the first success), which has the same law as
/// reading it off a full tape.
pub fn z_monte_carlo(params: &PatientParams, remaining: usize, n_samples: usize, seed: u64) -> McEstimate {
    assert!(remaining >= 1 && n_samples >= 1);
    let (p_rate, q_rate, k_rate) = crate::coupling::tape_rates(params);
    let mut rng = stream_rng(seed, 0);
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..n_samples {
        let passive_now = rng.random::<f64>() < p_rate;
        let boost_now = rng.random::<f64>() < k_rate;
        let z = if passive_now || !boost_now {
            0
        } else {
            let mut len = 1;
            while len < remaining {
                let passive = rng.random::<f64>() < p_rate;
                let relapse = rng.random::<f64>() < q_rate;
                if passive || relapse {
                    break;
                }
                len += 1;
            }
            len
        } as f64;
        sum += z;
        sum_sq += z * z;
    }
    let n = n_samples as f64;
    let mean = sum / n;
    let var = if n_samples > 1 {
        ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0)
    } else {
        0.0
    };
    McEstimate {
        estimate: mean,
        std_error: (var / n).sqrt(),
        samples: n_samples,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use PatientState::*;

    fn base() -> PatientParams {
        PatientParams::new(0.2, 0.3, 0.1)
    }

    #[test]
    fn infinite_value_examples() {
        assert!((z_infinite(&base()).unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(z_infinite(&PatientParams::new(0.2, 0.3, 0.0)).unwrap(), 0.0);
        assert_eq!(z_infinite(&PatientParams::new(0.0, 0.0, 0.3)), Err(ValuesError::Degenerate));
    }

    #[test]
    fn finite_value_examples() {
        assert!((z_finite(&base(), 1) - 0.1).abs() < 1e-15);
        assert!((z_finite(&PatientParams::new(0.0, 0.0, 0.25), 4) - 1.0).abs() < 1e-15);
        let pp = PatientParams::new(0.05, 0.05, 0.3);
        assert!((z_finite(&pp, 300) - z_infinite(&pp).unwrap()).abs() < 1e-12);
        assert!((z_finite(&PatientParams::new(0.6, 0.4, 0.2), 9) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn single_step_q_values() {
        let pp = base();
        assert!((q_null_single(&pp, Undesired, false, 1) - 0.2).abs() < 1e-15);
        assert!((q_null_single(&pp, Undesired, true, 1) - 0.3).abs() < 1e-15);
        assert!((q_null_single(&pp, Desired, false, 1) - 0.7).abs() < 1e-15);
        assert!((q_null_single(&pp, Desired, true, 1) - 0.7).abs() < 1e-15);
    }

    #[test]
    fn three_step_q_by_hand() {
        // Scalar oracle: propagate P(state 1) forward without interventions.
        let pp = base();
        let mut prob_one = 0.0;
        let mut total = 0.0;
        for _ in 0..3 {
            prob_one = prob_one * (1.0 - pp.q) + (1.0 - prob_one) * pp.p;
            total += prob_one;
        }
        assert!((q_null_single(&pp, Undesired, false, 3) - total).abs() < 1e-14);
    }

    #[test]
    fn recursion_difference_is_closed_form() {
        for pp in [base(), PatientParams::new(0.0, 0.0, 0.4), PatientParams::new(0.01, 0.02, 0.5)] {
            let table = QValueTable::new(pp, 200);
            for m in 0..=200 {
                assert!((table.z(m) - z_finite(&pp, m)).abs() < 1e-10, "{pp:?} m={m}");
            }
        }
    }

    #[test]
    fn action_is_null_in_desired_state() {
        let table = QValueTable::new(base(), 20);
        for m in 0..=20 {
            assert_eq!(table.q(Desired, true, m), table.q(Desired, false, m));
        }
    }

    #[test]
    fn monte_carlo_zero_effect() {
        let est = z_monte_carlo(&PatientParams::new(0.2, 0.3, 0.0), 30, 1000, 1);
        assert_eq!(est.estimate, 0.0);
        assert_eq!(est.std_error, 0.0);
    }

    #[test]
    fn monte_carlo_matches_closed_form() {
        let pp = base();
        for (m, seed) in [(50, 3), (1, 4)] {
            let est = z_monte_carlo(&pp, m, 100_000, seed);
            let want = z_finite(&pp, m);
            assert!(
                (est.estimate - want).abs() < 3.0 * est.std_error,
                "m={m} est={est:?} want={want}"
            );
        }
    }

    #[test]
    fn value_of_desired_patient_is_zero() {
        let v = InterventionValue::of(&base(), Desired, Horizon::Infinite).unwrap();
        assert_eq!(v.z, 0.0);
        let v = InterventionValue::of(&base(), Undesired, Horizon::Finite(1)).unwrap();
        assert!((v.z - 0.1).abs() < 1e-15);
    }
}
