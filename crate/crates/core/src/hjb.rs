//! Explicit monotone finite differences for the HJB equation whose
//! Hamiltonian embeds the algebra equation.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algebra::{solve_algebra, AlgebraInput, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::assumptions;
use crate::error::{Error, Result};
use crate::expr::Point;
use crate::grid::{SpaceTimeGrid, SpatialGrid, TimeGrid};
use crate::problem::ProblemSpec;
use crate::value::{Provenance, ValueField};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HjbOptions {
    pub algebra_tol: f64,
    pub algebra_max_iter: usize,
}

impl Default for HjbOptions {
    fn default() -> Self {
        Self {
            algebra_tol: DEFAULT_TOL,
            algebra_max_iter: DEFAULT_MAX_ITER,
        }
    }
}

/// Where the Hamiltonian is evaluated. `a` is `n × n` row-major.
#[derive(Debug, Clone, Copy)]
pub struct HamiltonianInput<'a> {
    pub t: f64,
    pub x: &'a [f64],
    pub v: f64,
    pub p: &'a [f64],
    pub a: &'a [f64],
    pub u: &'a [f64],
}

/// Value of `H` and the diffusion bound seen while computing it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HamiltonianValue {
    pub h: f64,
    /// Gershgorin bound on the spectrum of `σσᵀ` at the solved `V`.
    pub diffusion_bound: f64,
}

/// `½ tr(σσᵀ A) + pᵀ b + g`, all at `(t, x, v, V, u)` with `V` solving the
/// algebra equation for `p`.
pub fn assemble_hamiltonian(
    spec: &ProblemSpec,
    inp: &HamiltonianInput<'_>,
    opts: &HjbOptions,
) -> Result<HamiltonianValue> {
    let (n, d) = (spec.dims.n, spec.dims.d);
    let zero = vec![0.0; d];
    let sol = solve_algebra(
        spec,
        &AlgebraInput {
            t: inp.t,
            x: inp.x,
            v: inp.v,
            p: inp.p,
            u: inp.u,
            z0: &zero,
        },
        opts.algebra_tol,
        opts.algebra_max_iter,
    )?;
    let pt = Point {
        t: inp.t,
        x: inp.x,
        y: inp.v,
        z: &sol.v,
        u: inp.u,
    };
    let mut s = vec![0.0; n * d];
    let mut b = vec![0.0; n];
    spec.diffusion(&pt, &mut s)?;
    spec.drift(&pt, &mut b)?;
    let g = spec.driver(&pt)?;
    let mut trace = 0.0;
    let mut bound = 0.0f64;
    for r in 0..n {
        let mut row_abs = 0.0;
        for c in 0..n {
            let ss: f64 = (0..d).map(|j| s[r * d + j] * s[c * d + j]).sum();
            trace += ss * inp.a[c * n + r];
            row_abs += ss.abs();
        }
        bound = bound.max(row_abs);
    }
    let pb: f64 = inp.p.iter().zip(&b).map(|(p, b)| p * b).sum();
    Ok(HamiltonianValue {
        h: 0.5 * trace + pb + g,
        diffusion_bound: bound,
    })
}

/// Finite-difference stencils on one slice.
struct Stencil<'a> {
    sp: &'a SpatialGrid,
    w: &'a [f64],
    idx: Vec<usize>,
}

impl<'a> Stencil<'a> {
    fn new(sp: &'a SpatialGrid, w: &'a [f64]) -> Self {
        Self {
            sp,
            w,
            idx: vec![0; sp.dim()],
        }
    }

    fn locate(&mut self, k: usize) {
        let mut idx = std::mem::take(&mut self.idx);
        self.sp.multi_index(k, &mut idx);
        self.idx = idx;
    }

    fn forward(&self, k: usize, a: usize) -> Option<f64> {
        (self.idx[a] + 1 < self.sp.counts[a])
            .then(|| (self.w[k + self.sp.stride(a)] - self.w[k]) / self.sp.dx(a))
    }

    fn backward(&self, k: usize, a: usize) -> Option<f64> {
        (self.idx[a] > 0).then(|| (self.w[k] - self.w[k - self.sp.stride(a)]) / self.sp.dx(a))
    }

    /// Central where possible, one-sided on the boundary.
    fn central(&self, k: usize, a: usize) -> f64 {
        match (self.forward(k, a), self.backward(k, a)) {
            (Some(f), Some(b)) => 0.5 * (f + b),
            (Some(f), None) => f,
            (None, Some(b)) => b,
            (None, None) => 0.0,
        }
    }

    /// Node whose stencil along `a` stays inside the grid.
    fn shifted(&self, k: usize, a: usize) -> usize {
        let s = self.sp.stride(a);
        let i = self.idx[a];
        if i == 0 {
            k + s
        } else if i + 1 == self.sp.counts[a] {
            k - s
        } else {
            k
        }
    }

    fn second(&self, k: usize, a: usize) -> f64 {
        let c = self.shifted(k, a);
        let s = self.sp.stride(a);
        let h = self.sp.dx(a);
        (self.w[c + s] - 2.0 * self.w[c] + self.w[c - s]) / (h * h)
    }

    fn mixed(&self, k: usize, a: usize, b: usize) -> f64 {
        let c = self.shifted(self.shifted(k, a), b);
        let (sa, sb) = (self.sp.stride(a), self.sp.stride(b));
        (self.w[c + sa + sb] - self.w[c + sa - sb] - self.w[c - sa + sb] + self.w[c - sa - sb])
            / (4.0 * self.sp.dx(a) * self.sp.dx(b))
    }

    fn hessian(&self, k: usize, out: &mut [f64]) {
        let n = self.sp.dim();
        for a in 0..n {
            out[a * n + a] = self.second(k, a);
            for b in a + 1..n {
                let m = self.mixed(k, a, b);
                out[a * n + b] = m;
                out[b * n + a] = m;
            }
        }
    }
}

fn min_dx(sp: &SpatialGrid) -> f64 {
    (0..sp.dim()).map(|a| sp.dx(a)).fold(f64::INFINITY, f64::min)
}

/// Steps making the explicit scheme monotone with a margin, counting the
/// drift as well as the diffusion: `dt (n·Σ/dx² + |b|/dx) ≤ 1/2`, with the
/// bounds sampled at the terminal data.
pub fn suggest_steps(spec: &ProblemSpec, grid: &SpatialGrid, t0: f64) -> Result<usize> {
    let (sig, drift) = terminal_bounds(spec, grid)?;
    let h = min_dx(grid);
    let rate = grid.dim() as f64 * sig / (h * h) + drift / h;
    let span = spec.horizon - t0;
    Ok(((2.0 * span * rate).ceil() as usize).max(1))
}

fn terminal_bounds(spec: &ProblemSpec, sp: &SpatialGrid) -> Result<(f64, f64)> {
    let n = spec.dims.n;
    let w: Vec<f64> = (0..sp.len())
        .map(|k| spec.terminal(&sp.point_vec(k)))
        .collect::<Result<_>>()?;
    let mut st = Stencil::new(sp, &w);
    let mut x = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut b = vec![0.0; n];
    let mut s = vec![0.0; n * spec.dims.d];
    let (mut sig, mut drift) = (0.0f64, 0.0f64);
    for k in 0..sp.len() {
        st.locate(k);
        sp.point(k, &mut x);
        for (a, pa) in p.iter_mut().enumerate() {
            *pa = st.central(k, a);
        }
        for ui in 0..spec.controls.len() {
            let u = spec.controls.point(ui);
            let v = solve_algebra(
                spec,
                &AlgebraInput {
                    t: spec.horizon,
                    x: &x,
                    v: w[k],
                    p: &p,
                    u,
                    z0: &vec![0.0; spec.dims.d],
                },
                DEFAULT_TOL,
                DEFAULT_MAX_ITER,
            )
            .map_err(|e| with_node(e, k, &x))?;
            let pt = Point {
                t: spec.horizon,
                x: &x,
                y: w[k],
                z: &v.v,
                u,
            };
            spec.diffusion(&pt, &mut s)?;
            spec.drift(&pt, &mut b)?;
            sig = sig.max(gershgorin(&s, n, spec.dims.d));
            drift = drift.max(b.iter().map(|v| v.abs()).fold(0.0, f64::max));
        }
    }
    Ok((sig, drift))
}

fn gershgorin(s: &[f64], n: usize, d: usize) -> f64 {
    (0..n)
        .map(|r| {
            (0..n)
                .map(|c| (0..d).map(|j| s[r * d + j] * s[c * d + j]).sum::<f64>().abs())
                .sum::<f64>()
        })
        .fold(0.0, f64::max)
}

fn with_node(e: Error, k: usize, x: &[f64]) -> Error {
    match e {
        Error::NonContractive { location, factor } => Error::NonContractive {
            location: format!("node {k} (x = {x:?}): {location}"),
            factor,
        },
        other => other,
    }
}

fn cfl_error(dt: f64, limit: f64, bound: f64, h: f64, n: usize, where_: &str) -> Error {
    Error::CflViolation {
        module: "hjb",
        detail: format!(
            "dt = {dt:e} exceeds dx^2/(n * |sigma sigma^T|) = {h:e}^2/({n} * {bound:.6}) = {limit:e} {where_}"
        ),
    }
}

/// Backward explicit stepping with upwinded gradients.
pub fn solve_hjb(spec: &ProblemSpec, grid: &SpaceTimeGrid, opts: &HjbOptions) -> Result<ValueField> {
    assumptions::require(spec)?;
    let sp = &grid.space;
    let tg = &grid.time;
    let n = spec.dims.n;
    if sp.dim() != n {
        return Err(Error::InvalidProblem(format!(
            "hjb: grid has {} axes, problem has n = {n}",
            sp.dim()
        )));
    }
    if sp.counts.iter().any(|&c| c < 3) {
        return Err(Error::InvalidProblem("hjb: need at least 3 nodes per axis".into()));
    }
    if (tg.t_end - spec.horizon).abs() > 1e-12 * spec.horizon.max(1.0) {
        return Err(Error::InvalidProblem(format!(
            "hjb: grid ends at {}, horizon is {}",
            tg.t_end, spec.horizon
        )));
    }
    let dt = tg.dt();
    let h = min_dx(sp);
    let (sig, _) = terminal_bounds(spec, sp)?;
    let limit = |bound: f64| if bound > 0.0 { h * h / (bound * n as f64) } else { f64::INFINITY };
    if dt > limit(sig) {
        return Err(cfl_error(dt, limit(sig), sig, h, n, "at the terminal data"));
    }
    let nodes = sp.len();
    let steps = tg.steps;
    let mut values = vec![0.0; (steps + 1) * nodes];
    let mut argmin = vec![0u32; steps * nodes];
    for k in 0..nodes {
        values[steps * nodes + k] = spec.terminal(&sp.point_vec(k))?;
    }
    for i in (0..steps).rev() {
        let t = tg.t(i + 1);
        let (prev, next) = values.split_at_mut((i + 1) * nodes);
        let next = &next[..nodes];
        let out: Vec<Result<(f64, u32, f64)>> = (0..nodes)
            .into_par_iter()
            .with_min_len(64)
            .map(|k| node_update(spec, sp, next, k, t, opts))
            .collect();
        let row = &mut prev[i * nodes..];
        for (k, r) in out.into_iter().enumerate() {
            let (hmin, ui, bound) = r?;
            if dt > limit(bound) {
                return Err(cfl_error(
                    dt,
                    limit(bound),
                    bound,
                    h,
                    n,
                    &format!("at step {i}, node {k} (x = {:?})", sp.point_vec(k)),
                ));
            }
            let w = next[k] + dt * hmin;
            if !w.is_finite() {
                return Err(Error::NonFinite {
                    module: "hjb",
                    location: format!("step {i}, node {k} (x = {:?})", sp.point_vec(k)),
                });
            }
            row[k] = w;
            argmin[i * nodes + k] = ui;
        }
    }
    Ok(ValueField {
        grid: grid.clone(),
        values,
        argmin: Some(argmin),
        control_points: spec.controls.points().to_vec(),
        problem_hash: spec.hash(),
        provenance: Provenance::Hjb,
    })
}

/// `min_u H` at one node with the upwind stencil; also returns the argmin
/// and the largest diffusion bound met.
fn node_update(
    spec: &ProblemSpec,
    sp: &SpatialGrid,
    w: &[f64],
    k: usize,
    t: f64,
    opts: &HjbOptions,
) -> Result<(f64, u32, f64)> {
    let n = spec.dims.n;
    let d = spec.dims.d;
    let mut st = Stencil::new(sp, w);
    st.locate(k);
    let x = sp.point_vec(k);
    let pc: Vec<f64> = (0..n).map(|a| st.central(k, a)).collect();
    let mut a = vec![0.0; n * n];
    st.hessian(k, &mut a);
    let v = w[k];
    let mut best = f64::INFINITY;
    let mut best_u = 0u32;
    let mut bound = 0.0f64;
    let mut b = vec![0.0; n];
    let mut pu = vec![0.0; n];
    let zero = vec![0.0; d];
    for ui in 0..spec.controls.len() {
        let u = spec.controls.point(ui);
        // drift direction from the central-difference predictor
        let pred = solve_algebra(
            spec,
            &AlgebraInput {
                t,
                x: &x,
                v,
                p: &pc,
                u,
                z0: &zero,
            },
            opts.algebra_tol,
            opts.algebra_max_iter,
        )
        .map_err(|e| with_node(e, k, &x))?;
        spec.drift(
            &Point {
                t,
                x: &x,
                y: v,
                z: &pred.v,
                u,
            },
            &mut b,
        )?;
        for ax in 0..n {
            let f = st.forward(k, ax);
            let bk = st.backward(k, ax);
            pu[ax] = match (f, bk) {
                (Some(f), Some(bk)) => {
                    if b[ax] > 0.0 {
                        f
                    } else if b[ax] < 0.0 {
                        bk
                    } else {
                        pc[ax]
                    }
                }
                (Some(f), None) => f,
                (None, Some(bk)) => bk,
                (None, None) => 0.0,
            };
        }
        let hv = assemble_hamiltonian(
            spec,
            &HamiltonianInput {
                t,
                x: &x,
                v,
                p: &pu,
                a: &a,
                u,
            },
            opts,
        )
        .map_err(|e| with_node(e, k, &x))?;
        bound = bound.max(hv.diffusion_bound);
        if hv.h < best {
            best = hv.h;
            best_u = ui as u32;
        }
    }
    Ok((best, best_u, bound))
}

/// Grid with every spacing halved and four times the steps, so `dt/dx²`
/// is unchanged and nodes of the original grid are kept.
pub fn refine(grid: &SpaceTimeGrid) -> Result<SpaceTimeGrid> {
    let sp = &grid.space;
    let counts = sp.counts.iter().map(|c| 2 * c - 1).collect();
    Ok(SpaceTimeGrid::new(
        TimeGrid::new(grid.time.t0, grid.time.t_end, grid.time.steps * 4)?,
        SpatialGrid::new(sp.lo.clone(), sp.hi.clone(), counts)?,
    ))
}

/// Richardson extrapolation `(4 W_fine − W)/3` of the first-order-in-time,
/// second-order-in-space scheme, on the nodes of `grid`.
pub fn richardson_reference(
    spec: &ProblemSpec,
    grid: &SpaceTimeGrid,
    opts: &HjbOptions,
) -> Result<ValueField> {
    let coarse = solve_hjb(spec, grid, opts)?;
    let fine = solve_hjb(spec, &refine(grid)?, opts)?;
    let sp = &grid.space;
    let fsp = &fine.grid.space;
    let mut idx = vec![0; sp.dim()];
    let mut out = coarse.clone();
    for i in 0..=grid.time.steps {
        for k in 0..sp.len() {
            sp.multi_index(k, &mut idx);
            idx.iter_mut().for_each(|j| *j *= 2);
            let f = fine.at(4 * i, fsp.flat_index(&idx));
            out.values[i * sp.len() + k] = (4.0 * f - coarse.at(i, k)) / 3.0;
        }
    }
    out.argmin = None;
    Ok(out)
}

/// Strong-form residual `∂ₜW + min_u H` at interior nodes.
#[derive(Debug, Clone)]
pub struct ResidualGrid {
    pub grid: SpaceTimeGrid,
    /// `[time 0..N][node]`; zero where not evaluated.
    pub values: Vec<f64>,
    pub interior: Vec<bool>,
    pub max_abs: f64,
    /// `sqrt(Σ r² dt Π dx)` over evaluated nodes.
    pub l2: f64,
}

impl ResidualGrid {
    /// Rows `t, x…, residual` for interior nodes.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let sp = &self.grid.space;
        let mut head = vec!["t".to_string()];
        head.extend((1..=sp.dim()).map(|a| format!("x{a}")));
        head.push("residual".into());
        writeln!(w, "{}", head.join(","))?;
        let nodes = sp.len();
        let mut x = vec![0.0; sp.dim()];
        for i in 0..self.grid.time.steps {
            for k in 0..nodes {
                if !self.interior[k] {
                    continue;
                }
                sp.point(k, &mut x);
                let mut row = format!("{}", self.grid.time.t(i));
                for v in &x {
                    row.push_str(&format!(",{v}"));
                }
                row.push_str(&format!(",{}", self.values[i * nodes + k]));
                writeln!(w, "{row}")?;
            }
        }
        Ok(())
    }
}

/// Forward difference in time, central differences in space, at `t_i`.
pub fn residual(spec: &ProblemSpec, field: &ValueField, opts: &HjbOptions) -> Result<ResidualGrid> {
    let sp = &field.grid.space;
    let n = spec.dims.n;
    if sp.dim() != n || sp.counts.iter().any(|&c| c < 3) {
        return Err(Error::InvalidProblem(
            "hjb: residual needs a grid with n axes of at least 3 nodes".into(),
        ));
    }
    let nodes = sp.len();
    let steps = field.steps();
    let dt = field.grid.time.dt();
    let interior: Vec<bool> = (0..nodes).map(|k| !sp.is_boundary(k)).collect();
    let mut values = vec![0.0; steps * nodes];
    for i in 0..steps {
        let t = field.grid.time.t(i);
        let w = field.slice(i);
        let wn = field.slice(i + 1);
        let row: Vec<Result<f64>> = (0..nodes)
            .into_par_iter()
            .with_min_len(64)
            .map(|k| {
                if !interior[k] {
                    return Ok(0.0);
                }
                let mut st = Stencil::new(sp, w);
                st.locate(k);
                let x = sp.point_vec(k);
                let p: Vec<f64> = (0..n).map(|a| st.central(k, a)).collect();
                let mut a = vec![0.0; n * n];
                st.hessian(k, &mut a);
                let mut best = f64::INFINITY;
                for ui in 0..spec.controls.len() {
                    let hv = assemble_hamiltonian(
                        spec,
                        &HamiltonianInput {
                            t,
                            x: &x,
                            v: w[k],
                            p: &p,
                            a: &a,
                            u: spec.controls.point(ui),
                        },
                        opts,
                    )
                    .map_err(|e| with_node(e, k, &x))?;
                    best = best.min(hv.h);
                }
                Ok((wn[k] - w[k]) / dt + best)
            })
            .collect();
        for (k, r) in row.into_iter().enumerate() {
            values[i * nodes + k] = r?;
        }
    }
    let vol: f64 = dt * (0..n).map(|a| sp.dx(a)).product::<f64>();
    let max_abs = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let l2 = (values.iter().map(|v| v * v).sum::<f64>() * vol).sqrt();
    Ok(ResidualGrid {
        grid: field.grid.clone(),
        values,
        interior,
        max_abs,
        l2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Dims;
    use crate::problem::{registry, ControlSet, ExprCoefficients, LipschitzConstants};
    use std::sync::Arc;

    fn scalar(b: &str, s: &str, g: &str, phi: &str, l3: f64) -> ProblemSpec {
        let c = ExprCoefficients::parse(Dims::new(1, 1, 1), &[b], &[s], g, phi).unwrap();
        ProblemSpec::new(
            "h",
            1.0,
            LipschitzConstants { l1: 1.0, l2: 0.0, l3 },
            ControlSet::trivial(1),
            Arc::new(c),
        )
        .unwrap()
        .with_override(true)
    }

    fn ham(spec: &ProblemSpec, v: f64, p: f64, a: f64) -> f64 {
        assemble_hamiltonian(
            spec,
            &HamiltonianInput {
                t: 0.0,
                x: &[0.0],
                v,
                p: &[p],
                a: &[a],
                u: &[0.0],
            },
            &HjbOptions::default(),
        )
        .unwrap()
        .h
    }

    #[test]
    fn hamiltonian_examples() {
        assert_eq!(ham(&scalar("0", "0", "0", "0", 0.0), 1.0, 2.0, 3.0), 0.0);
        assert_eq!(ham(&registry::heat().unwrap(), 1.0, 2.0, 3.0), 1.5);
        let h = ham(&scalar("y", "1+0.5*z1", "0", "0", 0.5), 2.0, 0.4, 1.0);
        assert!((h - 1.58125).abs() < 1e-12, "{h}");
        // 2×2 identity diffusion gives half the trace
        let c = ExprCoefficients::parse(Dims::new(2, 2, 1), &["0", "0"], &["1", "0", "0", "1"], "0", "0").unwrap();
        let spec = ProblemSpec::new(
            "id",
            1.0,
            LipschitzConstants { l1: 0.0, l2: 0.0, l3: 0.0 },
            ControlSet::trivial(1),
            Arc::new(c),
        )
        .unwrap();
        let hv = assemble_hamiltonian(
            &spec,
            &HamiltonianInput {
                t: 0.0,
                x: &[0.0, 0.0],
                v: 0.0,
                p: &[1.0, 1.0],
                a: &[2.0, 0.3, 0.3, 5.0],
                u: &[0.0],
            },
            &HjbOptions::default(),
        )
        .unwrap();
        assert_eq!(hv.h, 3.5);
    }

    fn heat_grid(steps: usize) -> SpaceTimeGrid {
        SpaceTimeGrid::new(
            TimeGrid::new(0.0, 1.0, steps).unwrap(),
            SpatialGrid::symmetric_1d(3.0, 0.05).unwrap(),
        )
    }

    #[test]
    fn heat_benchmark() {
        let spec = registry::heat().unwrap();
        let f = solve_hjb(&spec, &heat_grid(500), &HjbOptions::default()).unwrap();
        assert!((f.interp(0.0, &[0.0]) - 1.0).abs() < 1e-2);
        let r = residual(&spec, &f, &HjbOptions::default()).unwrap();
        let dt = 1.0 / 500.0;
        assert!(r.max_abs <= 5.0 * (dt + 0.05 * 0.05), "{}", r.max_abs);
    }

    #[test]
    fn constants_are_preserved_bitwise() {
        let spec = scalar("0.3*x1", "1", "0", "2.5", 0.0);
        let f = solve_hjb(&spec, &heat_grid(500), &HjbOptions::default()).unwrap();
        assert!(f.values.iter().all(|v| *v == 2.5));
    }

    #[test]
    fn cfl_is_enforced() {
        let spec = registry::heat().unwrap();
        let e = solve_hjb(&spec, &heat_grid(100), &HjbOptions::default()).unwrap_err();
        assert!(matches!(e, Error::CflViolation { module: "hjb", .. }));
        assert!(e.to_string().contains("CFL"));
    }

    #[test]
    fn residual_of_exact_and_perturbed_fields() {
        let spec = registry::heat().unwrap();
        let exact = ValueField::from_fn(heat_grid(100), |t, x| x[0] * x[0] + 1.0 - t);
        let r = residual(&spec, &exact, &HjbOptions::default()).unwrap();
        assert!(r.max_abs <= 1e-10, "{}", r.max_abs);
        let bad = ValueField::from_fn(heat_grid(100), |t, x| x[0] * x[0] + 1.0 - t + 0.1 * x[0].sin());
        let r = residual(&spec, &bad, &HjbOptions::default()).unwrap();
        assert!(r.max_abs >= 0.04);
    }

    #[test]
    fn nan_guard_names_the_node() {
        let spec = scalar("0", "1", "exp(2*y)", "50*x1^2", 0.0);
        let grid = SpaceTimeGrid::new(
            TimeGrid::new(0.0, 1.0, 2000).unwrap(),
            SpatialGrid::symmetric_1d(3.0, 0.05).unwrap(),
        );
        let e = solve_hjb(&spec, &grid, &HjbOptions::default()).unwrap_err();
        assert!(matches!(e, Error::NonFinite { .. }), "{e}");
        assert!(e.to_string().contains("node"));
    }

    #[test]
    fn larger_terminal_data_never_lowers_the_field() {
        let spec = registry::burgers().unwrap();
        let grid = SpaceTimeGrid::new(
            TimeGrid::new(0.0, 0.5, 400).unwrap(),
            SpatialGrid::symmetric_1d(3.0, 0.05).unwrap(),
        );
        let base = solve_hjb(&spec, &grid, &HjbOptions::default()).unwrap();
        let c = ExprCoefficients::parse(Dims::new(1, 1, 1), &["y"], &["1"], "0", "-tanh(x1) + 0.05*exp(-x1^2)").unwrap();
        let up = solve_hjb(&spec.clone().with_coefficients(Arc::new(c)), &grid, &HjbOptions::default()).unwrap();
        for (a, b) in up.values.iter().zip(&base.values) {
            assert!(*a >= *b - 1e-12);
        }
    }

    /// `W = ∂ₓ log ψ` with `ψ(t, x) = E[sech(x + ξ)]`, `ξ ~ N(0, T − t)`,
    /// by trapezoid quadrature over the Gaussian.
    fn cole_hopf(t: f64, x: f64, horizon: f64) -> f64 {
        let s = (horizon - t).sqrt();
        let (mut num, mut den) = (0.0, 0.0);
        let m = 4000;
        for j in 0..=m {
            let q = -10.0 + 20.0 * j as f64 / m as f64;
            let w = (-0.5 * q * q).exp();
            let y = x + s * q;
            num += w * (-y.tanh() / y.cosh());
            den += w / y.cosh();
        }
        num / den
    }

    #[test]
    fn burgers_against_extrapolation_and_cole_hopf() {
        let spec = registry::burgers().unwrap();
        let grid = SpaceTimeGrid::new(
            TimeGrid::new(0.0, 0.5, 250).unwrap(),
            SpatialGrid::symmetric_1d(4.0, 0.05).unwrap(),
        );
        let w = solve_hjb(&spec, &grid, &HjbOptions::default()).unwrap();
        let r = richardson_reference(&spec, &grid, &HjbOptions::default()).unwrap();
        for x in [0.0, 0.5, -1.0] {
            let exact = cole_hopf(0.0, x, 0.5);
            assert!((w.interp(0.0, &[x]) - r.interp(0.0, &[x])).abs() < 1e-2);
            assert!((r.interp(0.0, &[x]) - exact).abs() < 2e-3, "{x}: {} vs {exact}", r.interp(0.0, &[x]));
        }
    }
}
