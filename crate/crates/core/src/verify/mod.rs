//! Executable checks of the uniqueness and verification machinery:
//! mollification, control concatenation over slabs, frozen-coefficient
//! auxiliary problems and the smooth-case Itô residual.

mod frozen;
mod ito;
mod mollify;
mod pipeline;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::paths::TerminalMap;
use crate::error::Result;
use crate::value::ValueField;

pub use frozen::{
    uniqueness_check_frozen_sigma, uniqueness_check_full, FrozenCoefficients, UniquenessConfig,
    UniquenessOutcome,
};
pub use ito::{ito_residual, ItoConfig, ItoResult, SmoothCandidate};
pub use mollify::{mollify, MollifiedField};
pub use pipeline::{pr_um_pipeline, PipelineConfig, PipelineResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    /// Both orderings hold within tolerance.
    Equal,
    /// `W ≤ candidate` within tolerance; the candidate may be a larger
    /// solution.
    Consistent,
    Inconsistent,
}

/// Versioned JSON report shared by all checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub schema: u32,
    pub check: String,
    pub verdict: Option<Verdict>,
    pub gaps: BTreeMap<String, f64>,
    pub thresholds: BTreeMap<String, f64>,
    pub seeds: Vec<u64>,
}

impl VerifyReport {
    pub fn new(check: &str, verdict: Option<Verdict>) -> Self {
        Self {
            schema: 1,
            check: check.into(),
            verdict,
            gaps: BTreeMap::new(),
            thresholds: BTreeMap::new(),
            seeds: Vec::new(),
        }
    }

    pub fn gap(mut self, k: &str, v: f64) -> Self {
        self.gaps.insert(k.into(), v);
        self
    }

    pub fn threshold(mut self, k: &str, v: f64) -> Self {
        self.thresholds.insert(k.into(), v);
        self
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// A field read at a fixed time, as a terminal condition.
pub struct TimeTerminal<'a> {
    pub field: &'a ValueField,
    pub t: f64,
}

impl TerminalMap for TimeTerminal<'_> {
    fn value(&self, x: &[f64]) -> Result<f64> {
        Ok(self.field.interp(self.t, x))
    }
}

/// Signed extremes of `a − b` at the nodes of `a` inside `[lo, hi]` over
/// every time slice of `a`: `(max(a − b), max(b − a))`.
pub fn signed_gaps(a: &ValueField, b: &ValueField, lo: &[f64], hi: &[f64]) -> (f64, f64) {
    let sp = &a.grid.space;
    let mut x = vec![0.0; sp.dim()];
    let (mut up, mut down) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for k in 0..a.nodes() {
        sp.point(k, &mut x);
        if !x.iter().enumerate().all(|(i, &v)| v >= lo[i] - 1e-12 && v <= hi[i] + 1e-12) {
            continue;
        }
        for i in 0..=a.steps() {
            let t = a.grid.time.t(i);
            let d = a.at(i, k) - b.interp(t, &x);
            up = up.max(d);
            down = down.max(-d);
        }
    }
    (up, down)
}
