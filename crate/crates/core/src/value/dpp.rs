use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Provenance, SliceTerminal, ValueField};
use crate::assumptions;
use crate::error::{Error, Result};
use crate::fbsde::{picard, PicardOptions};
use crate::grid::{SpaceTimeGrid, SpatialGrid, TimeGrid};
use crate::expr::Point;
use crate::paths::{derive_seed, ordered_sum, ConstantPolicy, PathEnsemble, TerminalMap, CHUNK};
use crate::problem::ProblemSpec;

/// What to do with paths that leave the spatial box during a slab.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryMode {
    /// Interpolate with the nearest boundary value.
    Clamp,
    /// Continue the boundary cells linearly.
    Extrapolate,
    /// Fail with `InterpolationOutOfBounds`.
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DppOptions {
    pub paths: usize,
    pub seed: u64,
    /// Euler steps inside each slab.
    pub substeps: usize,
    pub picard: PicardOptions,
    pub boundary: BoundaryMode,
}

impl Default for DppOptions {
    fn default() -> Self {
        Self {
            paths: 10_000,
            seed: 0,
            substeps: 1,
            picard: PicardOptions::default(),
            boundary: BoundaryMode::Extrapolate,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SlabChoice {
    pub value: f64,
    pub control: usize,
    pub stderr: f64,
}

/// `min_u G[ψ]` over the control lattice with slab-constant controls, all
/// controls sharing the ensemble. Ties go to the lowest index.
pub fn slab_minimize(
    spec: &ProblemSpec,
    ens: &PathEnsemble,
    x: &[f64],
    psi: &dyn TerminalMap,
    opts: &PicardOptions,
    box_check: Option<(&SpatialGrid, usize)>,
) -> Result<SlabChoice> {
    let mut best: Option<SlabChoice> = None;
    let fast = ens.steps() == 1;
    for ui in 0..spec.controls.len() {
        let (value, stderr) = if fast {
            one_step(spec, ens, x, ui, psi, opts, box_check)?
        } else {
            let run = picard(spec, ens, x, &ConstantPolicy(ui), psi, opts)?;
            if let Some((space, step)) = box_check {
                for p in 0..ens.m {
                    for i in 1..=ens.steps() {
                        if !space.contains(run.forward.x(p, i)) {
                            return Err(Error::InterpolationOutOfBounds { step, path: p });
                        }
                    }
                }
            }
            (run.y0, run.y0_stderr)
        };
        if best.is_none_or(|b| value < b.value) {
            best = Some(SlabChoice {
                value,
                control: ui,
                stderr,
            });
        }
    }
    Ok(best.expect("control set is nonempty"))
}

/// The regression scheme specialised to one Euler step from a point: every
/// path starts at `x`, so the regressions reduce to sample means, taken in
/// the same order as the general solver takes them, and the Picard feeds
/// at the first node are constants.
fn one_step(
    spec: &ProblemSpec,
    ens: &PathEnsemble,
    x: &[f64],
    ui: usize,
    psi: &dyn TerminalMap,
    opts: &PicardOptions,
    box_check: Option<(&SpatialGrid, usize)>,
) -> Result<(f64, f64)> {
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidProblem(format!("fbsde: picard tolerance must be positive, got {}", opts.tol)));
    }
    let (n, d, m) = (spec.dims.n, spec.dims.d, ens.m);
    let t = ens.grid.t0;
    let dt = ens.grid.dt();
    let u = spec.controls.point(ui);
    let decoupled = spec.is_decoupled();
    let gdep = spec.coefficients.driver_dep();
    if gdep.y && dt * spec.lipschitz.l1 >= 1.0 {
        return Err(Error::CflViolation {
            module: "paths",
            detail: format!("dt * L1 = {} >= 1", dt * spec.lipschitz.l1),
        });
    }
    let mut feed_y = 0.0;
    let mut feed_z = vec![0.0; d];
    let mut old = vec![0.0; m];
    let mut history: Vec<f64> = Vec::new();
    let mut rises = 0;
    let mut b = vec![0.0; n];
    let mut s = vec![0.0; n * d];
    loop {
        let pt = Point { t, x, y: feed_y, z: &feed_z, u };
        spec.drift(&pt, &mut b)?;
        spec.diffusion(&pt, &mut s)?;
        let (b, s) = (&b, &s);
        let xs: Vec<f64> = (0..m)
            .into_par_iter()
            .with_min_len(CHUNK)
            .flat_map_iter(|p| {
                let dw = ens.dw(p, 0);
                (0..n).map(move |r| {
                    let mut v = x[r] + b[r] * dt;
                    for c in 0..d {
                        v += s[r * d + c] * dw[c];
                    }
                    v
                })
            })
            .collect();
        let vals: Vec<Result<f64>> = (0..m)
            .into_par_iter()
            .with_min_len(CHUNK)
            .map(|p| psi.value(&xs[p * n..(p + 1) * n]))
            .collect();
        let vals: Vec<f64> = vals.into_iter().collect::<Result<_>>()?;
        if let Some(p) = vals.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                module: "paths",
                location: format!("terminal value, path {p}"),
            });
        }
        let mean_of = |f: &(dyn Fn(usize) -> f64 + Sync)| {
            let first = f(0);
            if (1..m).all(|p| f(p) == first) {
                first
            } else {
                ordered_sum(m, f) / m as f64
            }
        };
        let e = mean_of(&|p| vals[p]);
        let z: Vec<f64> = (0..d)
            .map(|j| mean_of(&|p| (vals[p] - e) * ens.dw(p, 0)[j] / dt))
            .collect();
        let mut pt = Point { t, x, y: e, z: &z, u };
        let mut g = spec.driver(&pt)?;
        if gdep.y {
            pt.y = e + dt * g;
            g = spec.driver(&pt)?;
        }
        let y = e + dt * g;
        if !y.is_finite() {
            return Err(Error::NonFinite {
                module: "paths",
                location: "Y at path 0, step 0".into(),
            });
        }
        let dy1 = vals.iter().zip(&old).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let dz: f64 = z.iter().zip(&feed_z).map(|(a, b)| (a - b).powi(2)).sum::<f64>() * dt;
        let gap = (y - feed_y).abs().max(dy1) + dz;
        if let Some(&last) = history.last() {
            rises = if gap > last { rises + 1 } else { 0 };
        }
        history.push(gap);
        if decoupled {
            history.push(0.0);
        }
        if decoupled || gap <= opts.tol {
            if let Some((space, step)) = box_check {
                for p in 0..m {
                    if !space.contains(&xs[p * n..(p + 1) * n]) {
                        return Err(Error::InterpolationOutOfBounds { step, path: p });
                    }
                }
            }
            // realised cost ψ(X₁) + g dt differs from ψ only by a constant
            let mf = m as f64;
            let var = ordered_sum(m, |p| (vals[p] + g * dt - y).powi(2)) / (mf - 1.0);
            return Ok((y, (var / mf).sqrt()));
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
        feed_y = y;
        feed_z = z;
        old = vals;
    }
}

/// Backward dynamic programming with one shared ensemble per slab.
pub fn compute_value_dpp(
    spec: &ProblemSpec,
    grid: &SpaceTimeGrid,
    opts: &DppOptions,
) -> Result<ValueField> {
    assumptions::require(spec)?;
    let tg = &grid.time;
    if (tg.t_end - spec.horizon).abs() > 1e-12 * spec.horizon.max(1.0) {
        return Err(Error::InvalidProblem(format!(
            "value: grid ends at {}, horizon is {}",
            tg.t_end, spec.horizon
        )));
    }
    if grid.space.dim() != spec.dims.n {
        return Err(Error::InvalidProblem(format!(
            "value: grid has {} axes, problem has n = {}",
            grid.space.dim(),
            spec.dims.n
        )));
    }
    let nodes = grid.space.len();
    let steps = tg.steps;
    let mut field = ValueField {
        grid: grid.clone(),
        values: vec![0.0; (steps + 1) * nodes],
        argmin: Some(vec![0; steps * nodes]),
        control_points: spec.controls.points().to_vec(),
        problem_hash: spec.hash(),
        provenance: Provenance::Dpp,
    };
    let terminal: Vec<f64> = (0..nodes)
        .map(|k| spec.terminal(&grid.space.point_vec(k)))
        .collect::<Result<_>>()?;
    field.values[steps * nodes..].copy_from_slice(&terminal);

    for i in (0..steps).rev() {
        let slab = TimeGrid::new(tg.t(i), tg.t(i + 1), opts.substeps.max(1))?;
        let ens = PathEnsemble::generate(slab, opts.paths, spec.dims.d, derive_seed(opts.seed, i as u64))?;
        let psi = SliceTerminal {
            field: &field,
            step: i + 1,
            extrapolate: opts.boundary == BoundaryMode::Extrapolate,
        };
        let check = match opts.boundary {
            BoundaryMode::Clamp | BoundaryMode::Extrapolate => None,
            BoundaryMode::Error => Some((&grid.space, i)),
        };
        let choices: Vec<Result<SlabChoice>> = (0..nodes)
            .into_par_iter()
            .map(|k| {
                let x = grid.space.point_vec(k);
                slab_minimize(spec, &ens, &x, &psi, &opts.picard, check)
            })
            .collect();
        let mut row = Vec::with_capacity(nodes);
        for (k, c) in choices.into_iter().enumerate() {
            let c = c?;
            if !c.value.is_finite() {
                return Err(Error::NonFinite {
                    module: "value",
                    location: format!("step {i}, node {k}"),
                });
            }
            row.push(c);
        }
        for (k, c) in row.iter().enumerate() {
            field.values[i * nodes + k] = c.value;
            if let Some(a) = field.argmin.as_mut() {
                a[i * nodes + k] = c.control as u32;
            }
        }
    }
    Ok(field)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Regularity {
    pub lip_x: f64,
    pub holder_t: f64,
}

/// Largest adjacent difference quotients in space, and in time scaled by
/// `(1 + |x|)·√Δt`.
pub fn estimate_regularity(field: &ValueField) -> Regularity {
    let sp = &field.grid.space;
    let nodes = sp.len();
    let steps = field.steps();
    let dt = field.grid.time.dt();
    let mut lip = 0.0f64;
    let mut hold = 0.0f64;
    let mut mi = vec![0usize; sp.dim()];
    let mut x = vec![0.0; sp.dim()];
    for i in 0..=steps {
        for k in 0..nodes {
            sp.multi_index(k, &mut mi);
            for a in 0..sp.dim() {
                if mi[a] + 1 < sp.counts[a] {
                    let q = (field.at(i, k + sp.stride(a)) - field.at(i, k)).abs() / sp.dx(a);
                    lip = lip.max(q);
                }
            }
            if i < steps {
                sp.point(k, &mut x);
                let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                let q = (field.at(i + 1, k) - field.at(i, k)).abs() / ((1.0 + nx) * dt.sqrt());
                hold = hold.max(q);
            }
        }
    }
    Regularity {
        lip_x: lip,
        holder_t: hold,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Dims;
    use crate::problem::{registry, ExprCoefficients};
    use std::sync::Arc;

    fn grid(half: f64, dx: f64, steps: usize, t_end: f64) -> SpaceTimeGrid {
        SpaceTimeGrid::new(
            TimeGrid::new(0.0, t_end, steps).unwrap(),
            SpatialGrid::symmetric_1d(half, dx).unwrap(),
        )
    }

    #[test]
    fn constant_terminal_stays_constant() {
        let spec = registry::drift_control().unwrap();
        let c = ExprCoefficients::parse(Dims::new(1, 1, 1), &["u1"], &["1"], "0", "0.75").unwrap();
        let spec = spec.with_coefficients(Arc::new(c));
        let f = compute_value_dpp(&spec, &grid(2.0, 0.5, 4, 1.0), &DppOptions { paths: 200, ..Default::default() })
            .unwrap();
        assert!(f.values.iter().all(|v| *v == 0.75));
    }

    #[test]
    fn heat_value_at_origin() {
        let spec = registry::heat().unwrap();
        let opts = DppOptions {
            paths: 20_000,
            seed: 3,
            ..Default::default()
        };
        let f = compute_value_dpp(&spec, &grid(4.0, 0.1, 10, 1.0), &opts).unwrap();
        let w = f.interp(0.0, &[0.0]);
        assert!((w - 1.0).abs() < 0.05, "{w}");
        // terminal slice is φ at the nodes exactly
        for k in 0..f.nodes() {
            let x = f.grid.space.point_vec(k);
            assert_eq!(f.at(10, k), x[0] * x[0]);
        }
    }

    #[test]
    fn drift_control_pushes_toward_origin() {
        let spec = registry::drift_control().unwrap();
        let opts = DppOptions {
            paths: 4000,
            seed: 5,
            ..Default::default()
        };
        let f = compute_value_dpp(&spec, &grid(3.0, 0.25, 8, 1.0), &opts).unwrap();
        let controls = spec.controls.points();
        for k in 1..f.nodes() - 1 {
            let x = f.grid.space.point_vec(k)[0];
            if x.abs() < 0.3 {
                continue;
            }
            let u = controls[f.argmin_at(0, k).unwrap()][0];
            let slope = f.at(0, k + 1) - f.at(0, k - 1);
            assert!(u * slope < 0.0, "x={x} u={u} slope={slope}");
        }
    }

    #[test]
    fn out_of_box_paths_can_be_errors() {
        let spec = registry::heat().unwrap();
        let opts = DppOptions {
            paths: 500,
            boundary: BoundaryMode::Error,
            ..Default::default()
        };
        let r = compute_value_dpp(&spec, &grid(0.5, 0.25, 2, 1.0), &opts);
        assert!(matches!(r, Err(Error::InterpolationOutOfBounds { step: 1, .. })), "{r:?}");
    }

    #[test]
    fn one_step_matches_general_solver() {
        let ens = PathEnsemble::generate(TimeGrid::new(0.2, 0.3, 1).unwrap(), 3000, 1, 8).unwrap();
        let psi = crate::paths::FnTerminal(|x: &[f64]| (x[0] - 0.3).powi(2) + x[0].sin());
        let opts = PicardOptions::default();
        for spec in [registry::drift_control().unwrap(), registry::sigma_z().unwrap()] {
            for ui in 0..3 {
                let (v, se) = one_step(&spec, &ens, &[0.4], ui, &psi, &opts, None).unwrap();
                let run = picard(&spec, &ens, &[0.4], &ConstantPolicy(ui), &psi, &opts).unwrap();
                assert!((v - run.y0).abs() < 1e-12, "{v} {}", run.y0);
                assert!((se - run.y0_stderr).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn regularity_of_closed_form() {
        let f = ValueField::from_fn(grid(2.0, 0.01, 100, 1.0), |t, x| x[0] * x[0] + 1.0 - t);
        let r = estimate_regularity(&f);
        assert!((r.lip_x - 4.0).abs() < 0.02, "{r:?}");
        assert!((r.holder_t - 0.1).abs() < 1e-9, "{r:?}");
        let c = ValueField::from_fn(grid(2.0, 0.5, 4, 1.0), |_, _| 3.0);
        assert_eq!(estimate_regularity(&c), Regularity { lip_x: 0.0, holder_t: 0.0 });
    }
}
