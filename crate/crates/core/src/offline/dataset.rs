//! Logged trajectories, one record per patient, stored as JSON lines:
//! `{"id", "t_start", "t_end", "static": [...], "v": [bits], "a": [bits]}`.
//! `v[k]` and `a[k]` refer to day `t_start + k`.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::OfflineError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub id: usize,
    pub t_start: usize,
    pub t_end: usize,
    #[serde(rename = "static")]
    pub static_features: Vec<f64>,
    pub v: Vec<u8>,
    pub a: Vec<u8>,
}

impl PatientRecord {
    /// Empty record, to be filled day by day.
    pub fn open(id: usize, t_start: usize, t_end: usize, static_features: Vec<f64>) -> Self {
        Self {
            id,
            t_start,
            t_end,
            static_features,
            v: Vec::new(),
            a: Vec::new(),
        }
    }

    pub fn window_len(&self) -> usize {
        self.t_end + 1 - self.t_start
    }

    pub fn in_window(&self, t: usize) -> bool {
        self.t_start <= t && t <= self.t_end
    }

    /// Verification bit on day `t`, if recorded.
    pub fn v_at(&self, t: usize) -> Option<bool> {
        t.checked_sub(self.t_start)
            .and_then(|k| self.v.get(k))
            .map(|&b| b == 1)
    }

    /// Intervention bit on day `t`, if recorded.
    pub fn a_at(&self, t: usize) -> Option<bool> {
        t.checked_sub(self.t_start)
            .and_then(|k| self.a.get(k))
            .map(|&b| b == 1)
    }

    /// Consecutive non-verified days ending at `t` (inclusive).
    pub fn non_verify_streak(&self, t: usize) -> usize {
        let Some(k) = t.checked_sub(self.t_start) else {
            return 0;
        };
        let upto = (k + 1).min(self.v.len());
        self.v[..upto].iter().rev().take_while(|&&b| b == 0).count()
    }

    fn check(&self, static_dim: Option<usize>) -> Result<(), OfflineError> {
        let fail = |reason: String| OfflineError::InvalidRecord { id: self.id, reason };
        if self.t_start == 0 || self.t_end < self.t_start {
            return Err(fail(format!("bad window [{}, {}]", self.t_start, self.t_end)));
        }
        let len = self.window_len();
        if self.v.len() != len || self.a.len() != len {
            return Err(fail(format!(
                "window has {len} days but v has {} and a has {} entries",
                self.v.len(),
                self.a.len()
            )));
        }
        if self.v.iter().chain(&self.a).any(|&b| b > 1) {
            return Err(fail("bits must be 0 or 1".into()));
        }
        if let Some(d) = static_dim {
            if self.static_features.len() != d {
                return Err(fail(format!(
                    "static dimension {} differs from {d}",
                    self.static_features.len()
                )));
            }
        }
        if self.static_features.iter().any(|x| !x.is_finite()) {
            return Err(fail("non-finite static feature".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LoggedDataset {
    pub records: Vec<PatientRecord>,
}

impl LoggedDataset {
    pub fn new(records: Vec<PatientRecord>) -> Result<Self, OfflineError> {
        let ds = Self { records };
        ds.validate()?;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn static_dim(&self) -> usize {
        self.records.first().map_or(0, |r| r.static_features.len())
    }

    /// Checks every record: window shape, bit values, consistent static dimension.
    pub fn validate(&self) -> Result<(), OfflineError> {
        let dim = self.records.first().map(|r| r.static_features.len());
        self.records.iter().try_for_each(|r| r.check(dim))
    }

    pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Self, OfflineError> {
        let mut records = Vec::new();
        for (k, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record: PatientRecord = serde_json::from_str(&line).map_err(|source| OfflineError::Json {
                line: k + 1,
                source,
            })?;
            records.push(record);
        }
        Self::new(records)
    }

    pub fn write_jsonl<W: Write>(&self, mut writer: W) -> Result<(), OfflineError> {
        for r in &self.records {
            serde_json::to_writer(&mut writer, r).map_err(|source| OfflineError::Json { line: 0, source })?;
            writer.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Features of record `i` on day `t`; see [`super::featurize`].
    pub fn featurize(&self, i: usize, t: usize) -> Result<super::FeatureVector, OfflineError> {
        super::featurize(&self.records[i], t)
    }

    /// Future verification rate of record `i` after day `t`; see
    /// [`super::future_verification_rate`].
    pub fn future_verification_rate(&self, i: usize, t: usize) -> Result<f64, OfflineError> {
        super::future_verification_rate(&self.records[i], t)
    }
}
