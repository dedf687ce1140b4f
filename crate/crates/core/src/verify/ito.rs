//! Itô residual of a smooth candidate along simulated paths.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{MollifiedField, VerifyReport};
use crate::error::Result;
use crate::fbsde::{solve_fully_coupled, PicardOptions};
use crate::grid::TimeGrid;
use crate::hjb::{assemble_hamiltonian, HamiltonianInput, HjbOptions};
use crate::paths::{ordered_sum, PathEnsemble, Policy, SpecTerminal};
use crate::problem::ProblemSpec;

/// A candidate with pointwise time derivative, gradient and Hessian.
pub trait SmoothCandidate: Sync {
    fn value(&self, t: f64, x: &[f64]) -> f64;
    fn time_derivative(&self, t: f64, x: &[f64]) -> f64;
    fn gradient(&self, t: f64, x: &[f64], out: &mut [f64]);
    /// `n × n` row-major.
    fn hessian(&self, t: f64, x: &[f64], out: &mut [f64]);
}

impl SmoothCandidate for MollifiedField {
    fn value(&self, t: f64, x: &[f64]) -> f64 {
        MollifiedField::value(self, t, x)
    }
    fn time_derivative(&self, t: f64, x: &[f64]) -> f64 {
        MollifiedField::time_derivative(self, t, x)
    }
    fn gradient(&self, t: f64, x: &[f64], out: &mut [f64]) {
        MollifiedField::gradient(self, t, x, out)
    }
    fn hessian(&self, t: f64, x: &[f64], out: &mut [f64]) {
        MollifiedField::hessian(self, t, x, out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ItoConfig {
    pub paths: usize,
    pub steps: usize,
    pub seed: u64,
    pub picard: PicardOptions,
    pub hjb: HjbOptions,
}

impl Default for ItoConfig {
    fn default() -> Self {
        Self {
            paths: 2000,
            steps: 20,
            seed: 0,
            picard: PicardOptions::default(),
            hjb: HjbOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ItoResult {
    /// Smallest sampled `∂ₜW̃ + H(s, X_s, W̃, DW̃, D²W̃, u_s)`.
    pub pi1_min: f64,
    pub pi1_max: f64,
    pub pi1_mean: f64,
    /// `max |W̃(T, X_T) − φ(X_T)|`.
    pub terminal_gap: f64,
}

impl ItoResult {
    pub fn report(&self, seed: u64) -> VerifyReport {
        let mut r = VerifyReport::new("ito", None)
            .gap("pi1_min", self.pi1_min)
            .gap("pi1_max", self.pi1_max)
            .gap("pi1_mean", self.pi1_mean)
            .gap("terminal_gap", self.terminal_gap);
        r.seeds.push(seed);
        r
    }
}

/// Simulates the controlled system from `(t, x)` under `policy` and samples
/// the drift of `W̃(s, X_s)` predicted by the Hamiltonian along each path.
pub fn ito_residual(
    spec: &ProblemSpec,
    cand: &dyn SmoothCandidate,
    t: f64,
    x: &[f64],
    policy: &dyn Policy,
    cfg: &ItoConfig,
) -> Result<ItoResult> {
    let n = spec.dims.n;
    let grid = TimeGrid::new(t, spec.horizon, cfg.steps)?;
    let ens = PathEnsemble::generate(grid.clone(), cfg.paths, spec.dims.d, cfg.seed)?;
    let run = solve_fully_coupled(spec, &ens, x, policy, &SpecTerminal(spec), &cfg.picard)?;
    let fwd = &run.forward;
    let rows: Vec<Result<(f64, f64, f64, f64)>> = (0..ens.m)
        .into_par_iter()
        .map(|p| {
            let mut p_vec = vec![0.0; n];
            let mut a = vec![0.0; n * n];
            let (mut lo, mut hi, mut sum) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
            for i in 0..grid.steps {
                let s = grid.t(i);
                let xs = fwd.x(p, i);
                cand.gradient(s, xs, &mut p_vec);
                cand.hessian(s, xs, &mut a);
                let h = assemble_hamiltonian(
                    spec,
                    &HamiltonianInput {
                        t: s,
                        x: xs,
                        v: cand.value(s, xs),
                        p: &p_vec,
                        a: &a,
                        u: spec.controls.point(fwd.control(p, i)),
                    },
                    &cfg.hjb,
                )?;
                let pi = cand.time_derivative(s, xs) + h.h;
                lo = lo.min(pi);
                hi = hi.max(pi);
                sum += pi;
            }
            let xt = fwd.x(p, grid.steps);
            let gap = (cand.value(spec.horizon, xt) - spec.terminal(xt)?).abs();
            Ok((lo, hi, sum, gap))
        })
        .collect();
    let rows: Vec<(f64, f64, f64, f64)> = rows.into_iter().collect::<Result<_>>()?;
    let samples = (ens.m * grid.steps) as f64;
    Ok(ItoResult {
        pi1_min: rows.iter().map(|r| r.0).fold(f64::INFINITY, f64::min),
        pi1_max: rows.iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max),
        pi1_mean: ordered_sum(rows.len(), |p| rows[p].2) / samples,
        terminal_gap: rows.iter().map(|r| r.3).fold(0.0, f64::max),
    })
}
