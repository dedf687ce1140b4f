//! Picard iteration for the fully coupled system and the backward semigroup.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assumptions;
use crate::error::{Error, Result};
use crate::paths::{
    backward_regression, forward_euler, BackwardSolution, Feeds, ForwardPaths, PathEnsemble,
    Policy, Regression, TerminalMap,
};
use crate::problem::ProblemSpec;

pub const DEFAULT_PICARD_TOL: f64 = 1e-6;
pub const DEFAULT_PICARD_MAX: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PicardOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub regression: Regression,
}

impl Default for PicardOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_PICARD_TOL,
            max_iter: DEFAULT_PICARD_MAX,
            regression: Regression::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FbsdeRun {
    pub forward: ForwardPaths,
    pub backward: BackwardSolution,
    pub picard_iters: usize,
    pub gap_history: Vec<f64>,
    pub y0: f64,
    pub y0_stderr: f64,
}

/// Gated entry point: refuses when the smallness condition fails without
/// an override.
pub fn solve_fully_coupled(
    spec: &ProblemSpec,
    ens: &PathEnsemble,
    x0: &[f64],
    policy: &dyn Policy,
    terminal: &dyn TerminalMap,
    opts: &PicardOptions,
) -> Result<FbsdeRun> {
    assumptions::require(spec)?;
    picard(spec, ens, x0, policy, terminal, opts)
}

/// Picard loop without the gate, for callers that already checked it.
pub(crate) fn picard(
    spec: &ProblemSpec,
    ens: &PathEnsemble,
    x0: &[f64],
    policy: &dyn Policy,
    terminal: &dyn TerminalMap,
    opts: &PicardOptions,
) -> Result<FbsdeRun> {
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidProblem(format!("fbsde: picard tolerance must be positive, got {}", opts.tol)));
    }
    let (m, d, steps) = (ens.m, spec.dims.d, ens.steps());
    let stride = steps + 1;
    let dt = ens.grid.dt();
    let decoupled = spec.is_decoupled();
    let mut feed_y = vec![0.0; m * stride];
    let mut feed_z = vec![0.0; m * stride * d];
    let mut history: Vec<f64> = Vec::new();
    let mut rises = 0;
    loop {
        let feeds = if decoupled {
            None
        } else {
            Some(Feeds {
                y: &feed_y,
                z: &feed_z,
            })
        };
        let fwd = forward_euler(spec, ens, x0, policy, feeds)?;
        let term: Vec<f64> = (0..m)
            .into_par_iter()
            .with_min_len(crate::paths::CHUNK)
            .map(|p| terminal.value(fwd.x(p, steps)))
            .collect::<Result<Vec<f64>>>()?;
        let back = backward_regression(spec, ens, &fwd, &term, &opts.regression)?;
        let gap = picard_gap(&back, &feed_y, &feed_z, stride, d, dt);
        if let Some(&last) = history.last() {
            rises = if gap > last { rises + 1 } else { 0 };
        }
        history.push(gap);
        if decoupled {
            // the forward pass ignores the feeds, so a second sweep would
            // reproduce this one exactly
            history.push(0.0);
        }
        if decoupled || gap <= opts.tol {
            let y0 = back.y0();
            let y0_stderr = back.y0_stderr();
            return Ok(FbsdeRun {
                forward: fwd,
                backward: back,
                picard_iters: history.len(),
                gap_history: history,
                y0,
                y0_stderr,
            });
        }
        if rises >= 3 {
            return Err(Error::PicardDiverged { history });
        }
        if history.len() >= opts.max_iter {
            return Err(Error::MaxPicard {
                tol: opts.tol,
                max: opts.max_iter,
                history,
            });
        }
        feed_y.copy_from_slice(&back.ys);
        feed_z.copy_from_slice(&back.zs);
    }
}

/// `sup |ΔY| + max_path Σ |ΔZ|² dt`.
fn picard_gap(back: &BackwardSolution, fy: &[f64], fz: &[f64], stride: usize, d: usize, dt: f64) -> f64 {
    let (sup_y, sum_z) = (0..back.m)
        .into_par_iter()
        .map(|p| {
            let ys = &back.ys[p * stride..(p + 1) * stride];
            let oy = &fy[p * stride..(p + 1) * stride];
            let dy = ys.iter().zip(oy).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            let zs = &back.zs[p * stride * d..(p + 1) * stride * d];
            let oz = &fz[p * stride * d..(p + 1) * stride * d];
            let dz: f64 = zs.iter().zip(oz).map(|(a, b)| (a - b).powi(2)).sum::<f64>() * dt;
            (dy, dz)
        })
        .reduce(|| (0.0, 0.0), |a, b| (a.0.max(b.0), a.1.max(b.1)));
    sup_y + sum_z
}

/// `G_{t,t+δ}[ψ(X_{t+δ})]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SemigroupValue {
    pub value: f64,
    pub stderr: f64,
}

/// Slab solve on the ensemble's own grid `[t, t+δ]` from the point `x`.
pub fn backward_semigroup(
    spec: &ProblemSpec,
    ens: &PathEnsemble,
    x: &[f64],
    policy: &dyn Policy,
    psi: &dyn TerminalMap,
    opts: &PicardOptions,
) -> Result<SemigroupValue> {
    assumptions::require(spec)?;
    semigroup_unchecked(spec, ens, x, policy, psi, opts)
}

pub(crate) fn semigroup_unchecked(
    spec: &ProblemSpec,
    ens: &PathEnsemble,
    x: &[f64],
    policy: &dyn Policy,
    psi: &dyn TerminalMap,
    opts: &PicardOptions,
) -> Result<SemigroupValue> {
    if ens.grid.t_end > spec.horizon * (1.0 + 1e-12) || ens.grid.t0 < 0.0 {
        return Err(Error::InvalidProblem(format!(
            "fbsde: slab [{}, {}] outside [0, {}]",
            ens.grid.t0, ens.grid.t_end, spec.horizon
        )));
    }
    let run = picard(spec, ens, x, policy, psi, opts)?;
    Ok(SemigroupValue {
        value: run.y0,
        stderr: run.y0_stderr,
    })
}
