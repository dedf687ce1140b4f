//! Value fields on space-time grids: storage, interpolation, I/O, the
//! dynamic-programming solver and regularity estimates.

mod dpp;
mod io;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{SpaceTimeGrid, SpatialGrid, TimeGrid};
use crate::paths::TerminalMap;

pub use dpp::{
    compute_value_dpp, estimate_regularity, slab_minimize, BoundaryMode, DppOptions, Regularity,
    SlabChoice,
};
pub use io::{read_field, write_field};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Dpp,
    Hjb,
    External,
}

/// `W` at every `(t_i, node)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueField {
    pub grid: SpaceTimeGrid,
    /// `[time][node]`
    pub values: Vec<f64>,
    /// Minimising control index per `(t_i, node)` for `i < N`.
    pub argmin: Option<Vec<u32>>,
    pub control_points: Vec<Vec<f64>>,
    pub problem_hash: String,
    pub provenance: Provenance,
}

impl ValueField {
    /// Field sampled from a function of `(t, x)`.
    pub fn from_fn<F: Fn(f64, &[f64]) -> f64>(grid: SpaceTimeGrid, f: F) -> Self {
        let nodes = grid.space.len();
        let mut values = Vec::with_capacity((grid.time.steps + 1) * nodes);
        let mut x = vec![0.0; grid.space.dim()];
        for i in 0..=grid.time.steps {
            let t = grid.time.t(i);
            for k in 0..nodes {
                grid.space.point(k, &mut x);
                values.push(f(t, &x));
            }
        }
        Self {
            grid,
            values,
            argmin: None,
            control_points: Vec::new(),
            problem_hash: String::new(),
            provenance: Provenance::External,
        }
    }

    pub fn nodes(&self) -> usize {
        self.grid.space.len()
    }

    pub fn steps(&self) -> usize {
        self.grid.time.steps
    }

    pub fn at(&self, step: usize, node: usize) -> f64 {
        self.values[step * self.nodes() + node]
    }

    pub fn slice(&self, step: usize) -> &[f64] {
        let n = self.nodes();
        &self.values[step * n..(step + 1) * n]
    }

    pub fn argmin_at(&self, step: usize, node: usize) -> Option<usize> {
        self.argmin
            .as_ref()
            .map(|a| a[step * self.nodes() + node] as usize)
    }

    /// Multilinear interpolation of one time slice, clamped to the box.
    pub fn interp_slice(&self, step: usize, x: &[f64]) -> f64 {
        interp_nodes(&self.grid.space, self.slice(step), x)
    }

    /// Linear in time between slices, multilinear in space.
    pub fn interp(&self, t: f64, x: &[f64]) -> f64 {
        let tg = &self.grid.time;
        let s = ((t - tg.t0) / tg.dt()).clamp(0.0, tg.steps as f64);
        let i = (s.floor() as usize).min(tg.steps.saturating_sub(1));
        let w = s - i as f64;
        let a = self.interp_slice(i, x);
        if w == 0.0 {
            return a;
        }
        let b = self.interp_slice(i + 1, x);
        a + w * (b - a)
    }

    /// Adds a constant everywhere.
    pub fn shifted(&self, c: f64) -> Self {
        let mut f = self.clone();
        f.values.iter_mut().for_each(|v| *v += c);
        f.provenance = Provenance::External;
        f
    }

    /// Sub-field on the nodes lying inside `[lo, hi]` per axis.
    pub fn restrict_box(&self, lo: &[f64], hi: &[f64]) -> Result<Self> {
        let sp = &self.grid.space;
        let n = sp.dim();
        let mut first = vec![0; n];
        let mut counts = vec![0; n];
        for a in 0..n {
            let idx: Vec<usize> = (0..sp.counts[a])
                .filter(|&i| {
                    let c = sp.coord(a, i);
                    c >= lo[a] - 1e-12 && c <= hi[a] + 1e-12
                })
                .collect();
            if idx.len() < 2 {
                return Err(Error::InvalidProblem(format!(
                    "value: box [{}, {}] holds fewer than 2 nodes on axis {a}",
                    lo[a], hi[a]
                )));
            }
            first[a] = idx[0];
            counts[a] = idx.len();
        }
        let space = SpatialGrid::new(
            (0..n).map(|a| sp.coord(a, first[a])).collect(),
            (0..n).map(|a| sp.coord(a, first[a] + counts[a] - 1)).collect(),
            counts.clone(),
        )?;
        let map: Vec<usize> = (0..space.len())
            .map(|k| {
                let mut mi = vec![0; n];
                space.multi_index(k, &mut mi);
                for a in 0..n {
                    mi[a] += first[a];
                }
                sp.flat_index(&mi)
            })
            .collect();
        let steps = self.steps();
        let old = self.nodes();
        let values = (0..=steps)
            .flat_map(|i| map.iter().map(move |&k| (i, k)))
            .map(|(i, k)| self.values[i * old + k])
            .collect();
        let argmin = self.argmin.as_ref().map(|a| {
            (0..steps)
                .flat_map(|i| map.iter().map(move |&k| a[i * old + k]))
                .collect()
        });
        Ok(Self {
            grid: SpaceTimeGrid::new(self.grid.time.clone(), space),
            values,
            argmin,
            control_points: self.control_points.clone(),
            problem_hash: self.problem_hash.clone(),
            provenance: self.provenance,
        })
    }

    /// Largest `|self − other|` at the nodes of `self` inside `[lo, hi]`,
    /// both sampled at time `t`.
    pub fn max_gap_at(&self, other: &ValueField, t: f64, lo: &[f64], hi: &[f64]) -> f64 {
        let mut x = vec![0.0; self.grid.space.dim()];
        let mut worst = 0.0f64;
        for k in 0..self.nodes() {
            self.grid.space.point(k, &mut x);
            if x.iter().enumerate().all(|(a, &v)| v >= lo[a] - 1e-12 && v <= hi[a] + 1e-12) {
                worst = worst.max((self.interp(t, &x) - other.interp(t, &x)).abs());
            }
        }
        worst
    }

    pub fn time_grid(&self) -> &TimeGrid {
        &self.grid.time
    }
}

pub(crate) fn interp_nodes(sp: &SpatialGrid, vals: &[f64], x: &[f64]) -> f64 {
    interp_with(sp, |k| vals[k], x)
}

/// Multilinear interpolation of node values read through `get`.
pub(crate) fn interp_with<F: Fn(usize) -> f64>(sp: &SpatialGrid, get: F, x: &[f64]) -> f64 {
    multilinear(sp, get, x, false)
}

/// Like [`interp_nodes`], but continues the boundary cells linearly past
/// the box instead of clamping.
pub(crate) fn extrapolate_nodes(sp: &SpatialGrid, vals: &[f64], x: &[f64]) -> f64 {
    multilinear(sp, |k| vals[k], x, true)
}

fn multilinear<F: Fn(usize) -> f64>(sp: &SpatialGrid, get: F, x: &[f64], extend: bool) -> f64 {
    let cell = |sp: &SpatialGrid, a: usize, v: f64| if extend { cell_extended(sp, a, v) } else { cell(sp, a, v) };
    let n = sp.dim();
    if n == 1 {
        let (i, w) = cell(sp, 0, x[0]);
        let a = get(i);
        return a + w * (get(i + 1) - a);
    }
    let mut base = vec![0usize; n];
    let mut wts = vec![0.0; n];
    for a in 0..n {
        let (i, w) = cell(sp, a, x[a]);
        base[a] = i;
        wts[a] = w;
    }
    let mut acc = 0.0;
    let mut idx = vec![0usize; n];
    for corner in 0..(1usize << n) {
        let mut w = 1.0;
        for a in 0..n {
            let up = (corner >> (n - 1 - a)) & 1 == 1;
            idx[a] = base[a] + up as usize;
            w *= if up { wts[a] } else { 1.0 - wts[a] };
        }
        if w != 0.0 {
            acc += w * get(sp.flat_index(&idx));
        }
    }
    acc
}

/// Cell index and weight on one axis after clamping into the box.
fn cell(sp: &SpatialGrid, axis: usize, v: f64) -> (usize, f64) {
    let c = sp.counts[axis];
    let s = ((v - sp.lo[axis]) / sp.dx(axis)).clamp(0.0, (c - 1) as f64);
    let i = (s.floor() as usize).min(c - 2);
    (i, s - i as f64)
}

/// Cell index and an unclamped weight, so points outside the box use the
/// nearest boundary cell's linear continuation.
fn cell_extended(sp: &SpatialGrid, axis: usize, v: f64) -> (usize, f64) {
    let c = sp.counts[axis];
    let s = (v - sp.lo[axis]) / sp.dx(axis);
    let i = (s.floor().max(0.0) as usize).min(c - 2);
    (i, s - i as f64)
}

/// Interpolated slice of a field as a terminal condition.
pub struct SliceTerminal<'a> {
    pub field: &'a ValueField,
    pub step: usize,
    /// Continue linearly past the box rather than clamping.
    pub extrapolate: bool,
}

impl TerminalMap for SliceTerminal<'_> {
    fn value(&self, x: &[f64]) -> Result<f64> {
        if self.extrapolate {
            Ok(extrapolate_nodes(&self.field.grid.space, self.field.slice(self.step), x))
        } else {
            Ok(self.field.interp_slice(self.step, x))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid2() -> SpaceTimeGrid {
        SpaceTimeGrid::new(
            TimeGrid::new(0.0, 1.0, 4).unwrap(),
            SpatialGrid::new(vec![-1.0, 0.0], vec![1.0, 2.0], vec![5, 9]).unwrap(),
        )
    }

    #[test]
    fn bilinear_is_exact_for_bilinear_functions() {
        let f = ValueField::from_fn(grid2(), |t, x| 1.0 + 2.0 * x[0] - x[1] + 0.5 * x[0] * x[1] + t);
        for &(t, a, b) in &[(0.1, 0.33, 1.7), (0.6, -0.9, 0.05), (1.0, 0.0, 2.0)] {
            let exact = 1.0 + 2.0 * a - b + 0.5 * a * b + t;
            assert!((f.interp(t, &[a, b]) - exact).abs() < 1e-12);
        }
        // clamped outside
        assert_eq!(f.interp_slice(0, &[-5.0, 0.0]), f.at(0, 0));
    }

    #[test]
    fn restriction_keeps_values() {
        let f = ValueField::from_fn(grid2(), |t, x| x[0] * 10.0 + x[1] + t);
        let r = f.restrict_box(&[-0.5, 0.5], &[0.5, 1.5]).unwrap();
        assert_eq!(r.grid.space.counts, vec![3, 5]);
        let mut x = vec![0.0; 2];
        for k in 0..r.nodes() {
            r.grid.space.point(k, &mut x);
            assert!((r.at(2, k) - (x[0] * 10.0 + x[1] + 0.5)).abs() < 1e-12);
        }
    }
}
