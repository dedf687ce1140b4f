//! Uniform time and space grids.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t0: f64,
    pub t_end: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, t_end: f64, steps: usize) -> Result<Self> {
        if steps == 0 || !(t_end > t0) || !t0.is_finite() || !t_end.is_finite() {
            return Err(Error::InvalidProblem(format!(
                "time grid [{t0}, {t_end}] with {steps} steps"
            )));
        }
        Ok(Self { t0, t_end, steps })
    }

    pub fn dt(&self) -> f64 {
        (self.t_end - self.t0) / self.steps as f64
    }

    /// `t_i`; the last node is `t_end` exactly.
    pub fn t(&self, i: usize) -> f64 {
        if i == self.steps {
            self.t_end
        } else {
            self.t0 + i as f64 * self.dt()
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.steps).map(|i| self.t(i)).collect()
    }
}

/// Tensor grid on a box, row-major with the last dimension fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialGrid {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub counts: Vec<usize>,
}

impl SpatialGrid {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, counts: Vec<usize>) -> Result<Self> {
        if lo.is_empty() || lo.len() != hi.len() || lo.len() != counts.len() {
            return Err(Error::InvalidProblem("spatial grid bounds have mismatched lengths".into()));
        }
        for j in 0..lo.len() {
            if counts[j] < 2 || !(hi[j] > lo[j]) || !lo[j].is_finite() || !hi[j].is_finite() {
                return Err(Error::InvalidProblem(format!(
                    "spatial axis {j}: [{}, {}] with {} nodes",
                    lo[j], hi[j], counts[j]
                )));
            }
        }
        Ok(Self { lo, hi, counts })
    }

    /// Symmetric 1-d grid on `[-half, half]` with spacing `dx`.
    pub fn symmetric_1d(half: f64, dx: f64) -> Result<Self> {
        let cells = (2.0 * half / dx).round() as usize;
        Self::new(vec![-half], vec![half], vec![cells + 1])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dx(&self, axis: usize) -> f64 {
        (self.hi[axis] - self.lo[axis]) / (self.counts[axis] - 1) as f64
    }

    pub fn coord(&self, axis: usize, i: usize) -> f64 {
        if i + 1 == self.counts[axis] {
            self.hi[axis]
        } else {
            self.lo[axis] + i as f64 * self.dx(axis)
        }
    }

    pub fn stride(&self, axis: usize) -> usize {
        self.counts[axis + 1..].iter().product()
    }

    pub fn multi_index(&self, mut flat: usize, out: &mut [usize]) {
        for axis in (0..self.dim()).rev() {
            out[axis] = flat % self.counts[axis];
            flat /= self.counts[axis];
        }
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter()
            .zip(&self.counts)
            .fold(0, |acc, (&i, &c)| acc * c + i)
    }

    pub fn point(&self, flat: usize, out: &mut [f64]) {
        let mut rem = flat;
        for axis in (0..self.dim()).rev() {
            let c = self.counts[axis];
            out[axis] = self.coord(axis, rem % c);
            rem /= c;
        }
    }

    pub fn point_vec(&self, flat: usize) -> Vec<f64> {
        let mut p = vec![0.0; self.dim()];
        self.point(flat, &mut p);
        p
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .enumerate()
            .all(|(j, &v)| v >= self.lo[j] && v <= self.hi[j])
    }

    /// Nearest node, clamped to the box.
    pub fn nearest(&self, x: &[f64]) -> usize {
        let mut flat = 0;
        for (axis, &v) in x.iter().enumerate() {
            let c = self.counts[axis];
            let r = ((v - self.lo[axis]) / self.dx(axis)).round();
            let i = r.clamp(0.0, (c - 1) as f64) as usize;
            flat = flat * c + i;
        }
        flat
    }

    /// Whether a node lies on the boundary of the box.
    pub fn is_boundary(&self, flat: usize) -> bool {
        let mut rem = flat;
        for axis in (0..self.dim()).rev() {
            let c = self.counts[axis];
            let i = rem % c;
            if i == 0 || i + 1 == c {
                return true;
            }
            rem /= c;
        }
        false
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaceTimeGrid {
    pub time: TimeGrid,
    pub space: SpatialGrid,
}

impl SpaceTimeGrid {
    pub fn new(time: TimeGrid, space: SpatialGrid) -> Self {
        Self { time, space }
    }
}
