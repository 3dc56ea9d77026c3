//! Two-state patient MDP and the budget-constrained system built from it.
//!
//! Each patient sits in state 0 (undesired) or 1 (desired). Without an
//! intervention a patient in state 0 moves to 1 with probability `p`; an
//! intervention raises that to `p + tau`. A patient in state 1 falls back to
//! 0 with probability `q` regardless of the action. The reward for a step is
//! the state the patient lands in.
//!
//! Times are 1-based throughout the crate: decisions happen at
//! `t = 1, ..., T` and the reward of step `t` is the state at `t + 1`.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid instance: {0}")]
    Invalid(ValidationReport),

    #[error("operation requires a finite horizon")]
    InfiniteHorizon,

    #[error("dimension mismatch: {what} has length {found}, expected {expected}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("patient state must be 0 or 1, got {0}")]
    InvalidState(u8),
}

// ---------------------------------------------------------------------------
// Patient-level types
// ---------------------------------------------------------------------------

/// Parameters `(p, q, tau)` of one patient's two-state chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatientParams {
    /// Passive 0 -> 1 probability.
    pub p: f64,
    /// 1 -> 0 probability.
    pub q: f64,
    /// Increment to the 0 -> 1 probability when intervened on.
    pub tau: f64,
}

impl PatientParams {
    pub fn new(p: f64, q: f64, tau: f64) -> Self {
        Self { p, q, tau }
    }

    /// Probability of landing in state 1 after one step.
    pub fn prob_desired(&self, from: PatientState, intervene: bool) -> f64 {
        match from {
            PatientState::Undesired if intervene => self.p + self.tau,
            PatientState::Undesired => self.p,
            PatientState::Desired => 1.0 - self.q,
        }
    }

    /// Every invariant this parameter triple violates (empty when valid).
    pub fn violations(&self) -> Vec<ViolationKind> {
        let mut out = Vec::new();
        let fields = [("p", self.p), ("q", self.q), ("tau", self.tau)];
        for (name, value) in fields {
            if !value.is_finite() || !(0.0..=1.0).contains(&value) {
                out.push(ViolationKind::OutOfRange { field: name, value });
            }
        }
        if self.p + self.q > 1.0 {
            out.push(ViolationKind::PPlusQ(self.p + self.q));
        }
        if self.p + self.tau > 1.0 {
            out.push(ViolationKind::PPlusTau(self.p + self.tau));
        }
        out
    }

    pub fn is_valid(&self) -> bool {
        self.violations().is_empty()
    }
}

/// State of a single patient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum PatientState {
    Undesired = 0,
    Desired = 1,
}

impl PatientState {
    pub fn from_bit(bit: bool) -> Self {
        if bit {
            PatientState::Desired
        } else {
            PatientState::Undesired
        }
    }

    pub fn is_desired(self) -> bool {
        self == PatientState::Desired
    }

    pub fn as_u8(self) -> u8 {
        self as u8
    }
}

impl TryFrom<u8> for PatientState {
    type Error = ModelError;

    fn try_from(value: u8) -> Result<Self, Self::Error> {
        match value {
            0 => Ok(PatientState::Undesired),
            1 => Ok(PatientState::Desired),
            other => Err(ModelError::InvalidState(other)),
        }
    }
}

impl From<PatientState> for u8 {
    fn from(s: PatientState) -> u8 {
        s.as_u8()
    }
}

/// One-step kernel of the two-state chain.
pub fn transition_prob(
    params: &PatientParams,
    from: PatientState,
    intervene: bool,
    to: PatientState,
) -> f64 {
    let up = params.prob_desired(from, intervene);
    match to {
        PatientState::Desired => up,
        PatientState::Undesired => 1.0 - up,
    }
}

/// Draws the next state from [`transition_prob`].
pub fn transition_sample<R: Rng + ?Sized>(
    params: &PatientParams,
    from: PatientState,
    intervene: bool,
    rng: &mut R,
) -> PatientState {
    let up = params.prob_desired(from, intervene);
    PatientState::from_bit(rng.random::<f64>() < up)
}

/// Reward of a transition: the state landed in.
pub fn reward(_from: PatientState, to: PatientState, _intervene: bool) -> u8 {
    to.as_u8()
}

// ---------------------------------------------------------------------------
// System-level types
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SystemState(pub Vec<PatientState>);

impl SystemState {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, i: usize) -> PatientState {
        self.0[i]
    }

    /// Indices of patients in state 0, ascending.
    pub fn undesired(&self) -> Vec<usize> {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, s)| !s.is_desired())
            .map(|(i, _)| i)
            .collect()
    }

    pub fn count_desired(&self) -> usize {
        self.0.iter().filter(|s| s.is_desired()).count()
    }

    /// Bit `i` set iff patient `i` is in state 1.
    pub fn to_mask(&self) -> usize {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, s)| s.is_desired())
            .fold(0, |m, (i, _)| m | (1 << i))
    }

    pub fn from_mask(n: usize, mask: usize) -> Self {
        SystemState((0..n).map(|i| PatientState::from_bit(mask >> i & 1 == 1)).collect())
    }
}

/// Set of patients receiving an intervention, kept sorted and deduplicated.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionSet(Vec<usize>);

impl ActionSet {
    pub fn empty() -> Self {
        Self(Vec::new())
    }

    pub fn new(mut indices: Vec<usize>) -> Self {
        indices.sort_unstable();
        indices.dedup();
        Self(indices)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.0.binary_search(&i).is_ok()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().copied()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn to_mask(&self) -> usize {
        self.0.iter().fold(0, |m, &i| m | (1 << i))
    }

    pub fn from_mask(mask: usize) -> Self {
        Self((0..usize::BITS as usize).filter(|i| mask >> i & 1 == 1).collect())
    }
}

/// Planning horizon. `Infinite` is only meaningful for closed-form value
/// queries; simulation and dynamic programming need a finite `T`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Horizon {
    Finite(usize),
    Infinite,
}

impl Horizon {
    pub fn finite(self) -> Result<usize, ModelError> {
        match self {
            Horizon::Finite(t) => Ok(t),
            Horizon::Infinite => Err(ModelError::InfiniteHorizon),
        }
    }
}

impl fmt::Display for Horizon {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Horizon::Finite(t) => write!(f, "{t}"),
            Horizon::Infinite => f.write_str("inf"),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum HorizonRepr {
    Finite(usize),
    Marker(String),
}

impl Serialize for Horizon {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match *self {
            Horizon::Finite(t) => HorizonRepr::Finite(t),
            Horizon::Infinite => HorizonRepr::Marker("inf".to_owned()),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Horizon {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        match HorizonRepr::deserialize(deserializer)? {
            HorizonRepr::Finite(t) => Ok(Horizon::Finite(t)),
            HorizonRepr::Marker(s) if s == "inf" || s == "infinite" => Ok(Horizon::Infinite),
            HorizonRepr::Marker(s) => Err(serde::de::Error::custom(format!(
                "horizon must be a positive integer or \"inf\", got {s:?}"
            ))),
        }
    }
}

/// A system MDP: `n` patients, horizon `t`, per-step budget `b`.
///
/// JSON form: `{"n", "t", "b", "patients": [{"p","q","tau"}], "s0": [0|1]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    #[serde(rename = "n")]
    pub n_patients: usize,
    #[serde(rename = "t")]
    pub horizon: Horizon,
    #[serde(rename = "b")]
    pub budget: usize,
    #[serde(rename = "patients")]
    pub params: Vec<PatientParams>,
    #[serde(rename = "s0")]
    pub initial_states: SystemState,
}

impl Instance {
    pub fn new(
        params: Vec<PatientParams>,
        horizon: usize,
        budget: usize,
        initial_states: Vec<PatientState>,
    ) -> Self {
        Self {
            n_patients: params.len(),
            horizon: Horizon::Finite(horizon),
            budget,
            params,
            initial_states: SystemState(initial_states),
        }
    }

    /// Finite horizon or an error.
    pub fn finite_horizon(&self) -> Result<usize, ModelError> {
        self.horizon.finite()
    }

    pub fn with_budget(&self, budget: usize) -> Self {
        Self {
            budget,
            ..self.clone()
        }
    }

    /// Validates and returns `self`, or the full violation list.
    pub fn validated(self) -> Result<Self, ModelError> {
        let report = validate_instance(&self);
        if report.is_ok() {
            Ok(self)
        } else {
            Err(ModelError::Invalid(report))
        }
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("instance serialization is infallible")
    }
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ViolationKind {
    OutOfRange { field: &'static str, value: f64 },
    PPlusQ(f64),
    PPlusTau(f64),
    PatientCount { declared: usize, found: usize },
    InitialStateCount { expected: usize, found: usize },
    ZeroHorizon,
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ViolationKind::OutOfRange { field, value } => {
                write!(f, "{field}={value} outside [0,1]")
            }
            ViolationKind::PPlusQ(s) => write!(f, "p+q>1 (p+q={s})"),
            ViolationKind::PPlusTau(s) => write!(f, "p+tau>1 (p+tau={s})"),
            ViolationKind::PatientCount { declared, found } => {
                write!(f, "n={declared} but {found} patient parameter sets given")
            }
            ViolationKind::InitialStateCount { expected, found } => {
                write!(f, "s0 has {found} entries, expected {expected}")
            }
            ViolationKind::ZeroHorizon => f.write_str("horizon must be at least 1"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub patient: Option<usize>,
    #[serde(flatten)]
    pub kind: ViolationKind,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.patient {
            Some(i) => write!(f, "patient {i}: {}", self.kind),
            None => write!(f, "{}", self.kind),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_ok() {
            return f.write_str("OK");
        }
        for (k, v) in self.violations.iter().enumerate() {
            if k > 0 {
                f.write_str("\n")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

/// Collects every violated invariant; never fails.
pub fn validate_instance(inst: &Instance) -> ValidationReport {
    let mut violations = Vec::new();
    if inst.n_patients != inst.params.len() {
        violations.push(Violation {
            patient: None,
            kind: ViolationKind::PatientCount {
                declared: inst.n_patients,
                found: inst.params.len(),
            },
        });
    }
    if inst.initial_states.len() != inst.params.len() {
        violations.push(Violation {
            patient: None,
            kind: ViolationKind::InitialStateCount {
                expected: inst.params.len(),
                found: inst.initial_states.len(),
            },
        });
    }
    if inst.horizon == Horizon::Finite(0) {
        violations.push(Violation {
            patient: None,
            kind: ViolationKind::ZeroHorizon,
        });
    }
    for (i, params) in inst.params.iter().enumerate() {
        violations.extend(params.violations().into_iter().map(|kind| Violation {
            patient: Some(i),
            kind,
        }));
    }
    ValidationReport { violations }
}

// ---------------------------------------------------------------------------
// Enrollment windows and populations
// ---------------------------------------------------------------------------

/// Inclusive enrollment window `[start, end]` in 1-based decision times.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub start: usize,
    pub end: usize,
}

impl Window {
    pub fn contains(&self, t: usize) -> bool {
        self.start <= t && t <= self.end
    }

    pub fn len(&self) -> usize {
        self.end + 1 - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end < self.start
    }
}

/// An instance plus per-patient enrollment windows and static covariates.
///
/// A patient holds its initial state until `start`, transitions and earns
/// reward at decision times inside its window, and is ignored afterwards.
/// Policies may act on a patient only once `t >= start + warmup`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Population {
    pub instance: Instance,
    pub windows: Vec<Window>,
    #[serde(default)]
    pub covariates: Vec<Vec<f64>>,
    #[serde(default)]
    pub warmup: usize,
}

impl Population {
    /// Everyone enrolled for the whole horizon, no covariates, no warm-up.
    pub fn from_instance(instance: Instance) -> Result<Self, ModelError> {
        let t = instance.finite_horizon()?;
        let windows = vec![Window { start: 1, end: t }; instance.n_patients];
        Ok(Self {
            covariates: vec![Vec::new(); instance.n_patients],
            instance,
            windows,
            warmup: 0,
        })
    }

    pub fn n(&self) -> usize {
        self.instance.n_patients
    }

    pub fn horizon(&self) -> Result<usize, ModelError> {
        self.instance.finite_horizon()
    }

    /// True when every window spans the full horizon and there is no warm-up.
    pub fn is_plain(&self) -> bool {
        match self.instance.horizon {
            Horizon::Finite(t) => {
                self.warmup == 0 && self.windows.iter().all(|w| w.start == 1 && w.end == t)
            }
            Horizon::Infinite => false,
        }
    }

    pub fn enrolled_days(&self) -> usize {
        self.windows.iter().map(Window::len).sum()
    }

    pub fn check(&self) -> Result<(), ModelError> {
        let report = validate_instance(&self.instance);
        if !report.is_ok() {
            return Err(ModelError::Invalid(report));
        }
        let t = self.horizon()?;
        let n = self.n();
        if self.windows.len() != n {
            return Err(ModelError::DimensionMismatch {
                what: "windows",
                expected: n,
                found: self.windows.len(),
            });
        }
        if self.covariates.len() != n {
            return Err(ModelError::DimensionMismatch {
                what: "covariates",
                expected: n,
                found: self.covariates.len(),
            });
        }
        if let Some(w) = self.windows.iter().find(|w| w.start == 0 || w.is_empty() || w.end > t) {
            return Err(ModelError::DimensionMismatch {
                what: "window end",
                expected: t,
                found: w.end,
            });
        }
        Ok(())
    }
}
