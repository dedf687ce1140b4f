//! Slab-wise greedy controls concatenated into one policy, and the
//! mismatch between the resulting `Y` and a candidate field.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{TimeTerminal, VerifyReport};
use crate::error::{Error, Result};
use crate::fbsde::{solve_fully_coupled, PicardOptions};
use crate::grid::TimeGrid;
use crate::paths::{derive_seed, ordered_sum, PathEnsemble, SpecTerminal};
use crate::problem::ProblemSpec;
use crate::value::{slab_minimize, ValueField};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Paths of the full-interval solve.
    pub paths: usize,
    /// Paths of each per-node slab minimisation.
    pub select_paths: usize,
    /// Euler steps on `[t, T]`; must be a multiple of the slab count.
    pub steps: usize,
    pub seed: u64,
    pub picard: PicardOptions,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            paths: 4000,
            select_paths: 2000,
            steps: 16,
            seed: 0,
            picard: PicardOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineResult {
    pub m: usize,
    /// `E ∫ |Y_s − W(s, X_s)|² ds + |Y_t − W(t, x)|`.
    pub rho: f64,
    /// Standard error of `rho` from both of its terms.
    pub noise: f64,
    pub integral: f64,
    pub y_t: f64,
    pub w_tx: f64,
    /// `E |Y_{t_i} − W(t_i, X_{t_i})|` at `t_0 = t, …, t_m = T`.
    pub per_slab_gaps: Vec<f64>,
}

impl PipelineResult {
    pub fn start_gap(&self) -> f64 {
        (self.y_t - self.w_tx).abs()
    }

    pub fn report(&self, seed: u64) -> VerifyReport {
        let mut r = VerifyReport::new("pr-um", None)
            .gap("rho", self.rho)
            .gap("noise", self.noise)
            .gap("start_gap", self.start_gap())
            .threshold("slabs", self.m as f64);
        for (i, g) in self.per_slab_gaps.iter().enumerate() {
            r = r.gap(&format!("slab_{i}"), *g);
        }
        r.seeds.push(seed);
        r
    }
}

/// Splits `[t, T]` into `m` slabs, picks per grid node and slab the control
/// minimising the one-slab semigroup against `W` at the slab end, follows
/// that policy (nearest node at each slab start) on the whole interval and
/// measures how far `Y` is from `W`.
pub fn pr_um_pipeline(
    spec: &ProblemSpec,
    w: &ValueField,
    t: f64,
    x: &[f64],
    m: usize,
    cfg: &PipelineConfig,
) -> Result<PipelineResult> {
    if m == 0 || cfg.steps % m != 0 {
        return Err(Error::Precondition(format!(
            "pr-um: {} steps do not split into {m} slabs",
            cfg.steps
        )));
    }
    if !(t >= 0.0 && t < spec.horizon) {
        return Err(Error::Precondition(format!("pr-um: start time {t} outside [0, T)")));
    }
    let n = spec.dims.n;
    let per = cfg.steps / m;
    let full = TimeGrid::new(t, spec.horizon, cfg.steps)?;
    let space = &w.grid.space;
    let nodes = space.len();
    let mut table = Vec::with_capacity(m);
    for i in 0..m {
        let slab = TimeGrid::new(full.t(i * per), full.t((i + 1) * per), per)?;
        let ens = PathEnsemble::generate(
            slab,
            cfg.select_paths,
            spec.dims.d,
            derive_seed(cfg.seed, ((m as u64) << 32) | i as u64),
        )?;
        let psi = TimeTerminal {
            field: w,
            t: full.t((i + 1) * per),
        };
        let picks: Vec<Result<usize>> = (0..nodes)
            .into_par_iter()
            .map(|k| {
                let xk = space.point_vec(k);
                Ok(slab_minimize(spec, &ens, &xk, &psi, &cfg.picard, None)?.control)
            })
            .collect();
        table.push(picks.into_iter().collect::<Result<Vec<usize>>>()?);
    }
    let policy = |step: usize, hist: &[f64]| {
        let start = (step / per) * per;
        let xs = &hist[start * n..(start + 1) * n];
        table[step / per][space.nearest(xs)]
    };
    let ens = PathEnsemble::generate(full.clone(), cfg.paths, spec.dims.d, cfg.seed)?;
    let run = solve_fully_coupled(spec, &ens, x, &policy, &SpecTerminal(spec), &cfg.picard)?;
    let dt = full.dt();
    let mismatch = |p: usize, i: usize| run.backward.y(p, i) - w.interp(full.t(i), run.forward.x(p, i));
    let integrals: Vec<f64> = (0..ens.m)
        .into_par_iter()
        .map(|p| (0..cfg.steps).map(|i| mismatch(p, i).powi(2) * dt).sum())
        .collect();
    let mf = ens.m as f64;
    let integral = ordered_sum(ens.m, |p| integrals[p]) / mf;
    let var = ordered_sum(ens.m, |p| (integrals[p] - integral).powi(2)) / (mf - 1.0);
    let w_tx = w.interp(t, x);
    let per_slab_gaps = (0..=m)
        .map(|i| ordered_sum(ens.m, |p| mismatch(p, i * per).abs()) / mf)
        .collect();
    Ok(PipelineResult {
        m,
        rho: integral + (run.y0 - w_tx).abs(),
        noise: (var / mf + run.y0_stderr.powi(2)).sqrt(),
        integral,
        y_t: run.y0,
        w_tx,
        per_slab_gaps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{SpaceTimeGrid, SpatialGrid};
    use crate::problem::registry;

    fn field(f: impl Fn(f64, f64) -> f64) -> ValueField {
        let grid = SpaceTimeGrid::new(
            TimeGrid::new(0.0, 1.0, 16).unwrap(),
            SpatialGrid::symmetric_1d(5.0, 0.05).unwrap(),
        );
        ValueField::from_fn(grid, |t, x| f(t, x[0]))
    }

    #[test]
    fn exact_heat_field_has_small_rho() {
        let spec = registry::heat().unwrap();
        let w = field(|t, x| x * x + 1.0 - t);
        let cfg = PipelineConfig {
            paths: 4000,
            select_paths: 100,
            seed: 2,
            ..PipelineConfig::default()
        };
        let bound = 5.0 * (1.0 / 16.0 + 1.0 / (4000f64).sqrt());
        for m in [2, 4, 8] {
            let r = pr_um_pipeline(&spec, &w, 0.0, &[0.0], m, &cfg).unwrap();
            assert!(r.rho <= bound, "m={m}: {r:?}");
            assert_eq!(r.per_slab_gaps.len(), m + 1);
        }
    }

    #[test]
    fn shifted_candidate_is_rejected() {
        let spec = registry::heat().unwrap();
        let w = field(|t, x| x * x + 2.0 - t);
        let cfg = PipelineConfig {
            select_paths: 100,
            ..PipelineConfig::default()
        };
        let r = pr_um_pipeline(&spec, &w, 0.0, &[0.0], 2, &cfg).unwrap();
        assert!(r.start_gap() >= 0.9);
    }

    #[test]
    fn slab_count_must_divide_steps() {
        let spec = registry::heat().unwrap();
        let w = field(|_, x| x * x);
        let r = pr_um_pipeline(&spec, &w, 0.0, &[0.0], 3, &PipelineConfig::default());
        assert!(matches!(r, Err(Error::Precondition(_))));
    }
}
