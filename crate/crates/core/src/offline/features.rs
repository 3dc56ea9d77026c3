//! Patient state encoding: static covariates followed by a 21-feature
//! summary of the verification and intervention history.
//!
//! On day `t` the visible history is `v` for days `t_start..=t` and `a` for
//! days `t_start..t` (today's intervention has not happened yet). Lags count
//! back from the most recent entry: verification lag 1 is today's `v`,
//! intervention lag 1 is yesterday's `a`. "Last week" is the seven most
//! recent entries, clipped to the window.

use serde::{Deserialize, Serialize};

use super::{OfflineError, PatientRecord};

/// Days of history required before a patient can be featurized.
pub const WARMUP_DAYS: usize = 7;

pub const HISTORY_DIM: usize = 21;

pub const HISTORY_FEATURE_NAMES: [&str; HISTORY_DIM] = [
    "verify_total",
    "verify_pct",
    "verify_last_week",
    "verify_lag1",
    "verify_lag2",
    "verify_lag3",
    "verify_lag4",
    "verify_lag5",
    "verify_lag6",
    "verify_lag7",
    "verify_streak_current",
    "verify_streak_longest",
    "miss_streak_current",
    "miss_streak_longest",
    "intervention_total",
    "intervention_last_week",
    "intervention_lag1",
    "intervention_lag2",
    "intervention_lag3",
    "days_on_platform",
    "days_left",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// The trailing history block.
    pub fn history(&self) -> &[f64] {
        &self.0[self.0.len() - HISTORY_DIM..]
    }
}

/// Encodes `record` on day `t`. Only history up to `t` is read.
pub fn featurize(record: &PatientRecord, t: usize) -> Result<FeatureVector, OfflineError> {
    if !record.in_window(t) {
        return Err(OfflineError::OutsideWindow {
            id: record.id,
            t,
            start: record.t_start,
            end: record.t_end,
        });
    }
    if t < record.t_start + WARMUP_DAYS {
        return Err(OfflineError::InsufficientWarmup {
            id: record.id,
            t,
            start: record.t_start,
            warmup: WARMUP_DAYS,
        });
    }
    let mut out = Vec::with_capacity(record.static_features.len() + HISTORY_DIM);
    out.extend_from_slice(&record.static_features);
    push_history(record, t, &mut out)?;
    Ok(FeatureVector(out))
}

fn push_history(record: &PatientRecord, t: usize, out: &mut Vec<f64>) -> Result<(), OfflineError> {
    let days = t - record.t_start + 1;
    if record.v.len() < days || record.a.len() < days - 1 {
        return Err(OfflineError::InvalidRecord {
            id: record.id,
            reason: format!("history shorter than {days} days at t={t}"),
        });
    }
    let v = &record.v[..days];
    let a = &record.a[..days - 1];
    let count = |bits: &[u8]| bits.iter().filter(|&&b| b == 1).count() as f64;
    let lag = |bits: &[u8], x: usize| {
        if bits.len() >= x {
            bits[bits.len() - x] as f64
        } else {
            0.0
        }
    };
    let last_week = |bits: &[u8]| count(&bits[bits.len().saturating_sub(7)..]);

    let total = count(v);
    out.push(total);
    out.push(total / days as f64);
    out.push(last_week(v));
    out.extend((1..=7).map(|x| lag(v, x)));

    let (cur_on, long_on) = runs(v, 1);
    let (cur_off, long_off) = runs(v, 0);
    out.extend([cur_on, long_on, cur_off, long_off].map(|x| x as f64));

    out.push(count(a));
    out.push(last_week(a));
    out.extend((1..=3).map(|x| lag(a, x)));

    out.push(days as f64);
    out.push((record.t_end - t) as f64);
    Ok(())
}

/// Current (trailing) and longest run of `bit`.
fn runs(bits: &[u8], bit: u8) -> (usize, usize) {
    let mut current = 0;
    let mut longest = 0;
    for &b in bits {
        current = if b == bit { current + 1 } else { 0 };
        longest = longest.max(current);
    }
    (current, longest)
}

/// Mean of `v` over days `t+1..=t_end`.
pub fn future_verification_rate(record: &PatientRecord, t: usize) -> Result<f64, OfflineError> {
    if t < record.t_start || t >= record.t_end {
        return Err(OfflineError::UndefinedLabel { id: record.id, t });
    }
    let from = t + 1 - record.t_start;
    let future = &record.v[from..record.window_len()];
    Ok(future.iter().map(|&b| b as f64).sum::<f64>() / future.len() as f64)
}
