//! Brownian ensembles, Euler forward stepping and least-squares backward
//! regression.

mod backward;
mod forward;
mod regression;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::TimeGrid;

pub use backward::{backward_regression, BackwardSolution};
pub use forward::{forward_euler, Feeds, ForwardPaths};
pub use regression::{Basis, Regression, DEFAULT_RIDGE, MAX_CONDITION};

/// Paths per work unit in parallel loops. Reductions sum whole chunks in
/// index order, so results never depend on the worker count.
pub const CHUNK: usize = 512;

/// Seeded Brownian increments on a time grid.
#[derive(Debug, Clone)]
pub struct PathEnsemble {
    pub grid: TimeGrid,
    pub m: usize,
    pub d: usize,
    pub seed: u64,
    dw: Vec<f64>,
}

impl PathEnsemble {
    /// Increments for path `i` come from ChaCha8 stream `i` of `seed`.
    pub fn generate(grid: TimeGrid, m: usize, d: usize, seed: u64) -> Result<Self> {
        if m < 2 {
            return Err(Error::InvalidProblem(format!("paths: need at least 2 paths, got {m}")));
        }
        if d == 0 {
            return Err(Error::InvalidProblem("paths: Brownian dimension must be >= 1".into()));
        }
        let n = grid.steps;
        let sq = grid.dt().sqrt();
        let mut dw = vec![0.0; m * n * d];
        dw.par_chunks_mut(n * d).enumerate().for_each(|(path, out)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(path as u64);
            for v in out.iter_mut() {
                let g: f64 = StandardNormal.sample(&mut rng);
                *v = g * sq;
            }
        });
        Ok(Self {
            grid,
            m,
            d,
            seed,
            dw,
        })
    }

    pub fn steps(&self) -> usize {
        self.grid.steps
    }

    pub fn dw(&self, path: usize, step: usize) -> &[f64] {
        let k = (path * self.grid.steps + step) * self.d;
        &self.dw[k..k + self.d]
    }

    /// Increments of one path, `steps × d`.
    pub fn path_dw(&self, path: usize) -> &[f64] {
        let w = self.grid.steps * self.d;
        &self.dw[path * w..(path + 1) * w]
    }
}

/// `generate_ensemble` under its conventional name.
pub fn generate_ensemble(grid: TimeGrid, m: usize, d: usize, seed: u64) -> Result<PathEnsemble> {
    PathEnsemble::generate(grid, m, d, seed)
}

/// Mixes a base seed with a tag (slab index, experiment id, ...) into an
/// independent-looking seed.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    mix(seed ^ mix(tag))
}

/// Control choice along a path.
pub trait Policy: Sync {
    /// Index into the control set at `step`, given the path's states
    /// `X_0..=X_step` flattened (`n` values per step).
    fn control(&self, step: usize, history: &[f64]) -> usize;
}

/// The same control everywhere.
#[derive(Debug, Clone, Copy)]
pub struct ConstantPolicy(pub usize);

impl Policy for ConstantPolicy {
    fn control(&self, _step: usize, _history: &[f64]) -> usize {
        self.0
    }
}

impl<F: Fn(usize, &[f64]) -> usize + Sync> Policy for F {
    fn control(&self, step: usize, history: &[f64]) -> usize {
        self(step, history)
    }
}

/// Terminal condition applied at the last node of an ensemble.
pub trait TerminalMap: Sync {
    fn value(&self, x: &[f64]) -> Result<f64>;
}

/// `φ` of a problem.
pub struct SpecTerminal<'a>(pub &'a crate::problem::ProblemSpec);

impl TerminalMap for SpecTerminal<'_> {
    fn value(&self, x: &[f64]) -> Result<f64> {
        self.0.terminal(x)
    }
}

/// Any closure `x ↦ ψ(x)`.
pub struct FnTerminal<F>(pub F);

impl<F: Fn(&[f64]) -> f64 + Sync> TerminalMap for FnTerminal<F> {
    fn value(&self, x: &[f64]) -> Result<f64> {
        Ok((self.0)(x))
    }
}

/// Sum of `f(i)` over `0..len` with a thread-count independent order.
pub fn ordered_sum<F>(len: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    let parts: Vec<f64> = (0..len.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let end = ((c + 1) * CHUNK).min(len);
            (c * CHUNK..end).map(&f).sum::<f64>()
        })
        .collect();
    parts.iter().sum()
}

/// Writes the first `limit` trajectories as CSV rows `t, path_id, x…, y, z…`.
pub fn write_trajectories_csv<W: std::io::Write>(
    mut w: W,
    ens: &PathEnsemble,
    fwd: &ForwardPaths,
    back: &BackwardSolution,
    limit: usize,
) -> Result<()> {
    let (n, d, steps) = (fwd.n, ens.d, ens.steps());
    let mut header = vec!["t".to_string(), "path_id".to_string()];
    header.extend((1..=n).map(|i| format!("x{i}")));
    header.push("y".into());
    header.extend((1..=d).map(|j| format!("z{j}")));
    writeln!(w, "{}", header.join(","))?;
    for p in 0..ens.m.min(limit) {
        for i in 0..=steps {
            let mut row = format!("{},{}", ens.grid.t(i), p);
            for v in fwd.x(p, i) {
                row.push_str(&format!(",{v}"));
            }
            row.push_str(&format!(",{}", back.y(p, i)));
            for v in back.z(p, i) {
                row.push_str(&format!(",{v}"));
            }
            writeln!(w, "{row}")?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regeneration_is_identical() {
        let g = TimeGrid::new(0.0, 1.0, 1).unwrap();
        let a = PathEnsemble::generate(g.clone(), 2, 1, 9).unwrap();
        let b = PathEnsemble::generate(g, 2, 1, 9).unwrap();
        assert_eq!(a.dw, b.dw);
        assert!(PathEnsemble::generate(TimeGrid::new(0.0, 1.0, 1).unwrap(), 1, 1, 0).is_err());
    }

    #[test]
    fn path_streams_do_not_depend_on_ensemble_size() {
        let g = TimeGrid::new(0.0, 1.0, 4).unwrap();
        let a = PathEnsemble::generate(g.clone(), 3, 2, 5).unwrap();
        let b = PathEnsemble::generate(g, 10, 2, 5).unwrap();
        assert_eq!(a.path_dw(2), b.path_dw(2));
    }

    #[test]
    fn increment_moments() {
        let m = 100_000;
        let g = TimeGrid::new(0.0, 0.02, 2).unwrap();
        let e = PathEnsemble::generate(g, m, 2, 11).unwrap();
        let dt = 0.01;
        for step in 0..2 {
            let mean = (0..m).map(|p| e.dw(p, step)[0]).sum::<f64>() / m as f64;
            let var = (0..m).map(|p| (e.dw(p, step)[0] - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
            assert!(mean.abs() <= 5.0 * (dt / m as f64).sqrt());
            assert!((0.0095..=0.0105).contains(&var), "{var}");
            let cov = (0..m).map(|p| e.dw(p, step)[0] * e.dw(p, step)[1]).sum::<f64>() / m as f64;
            assert!((cov / dt).abs() <= 5.0 / (m as f64).sqrt());
        }
    }

    #[test]
    fn ordered_sum_is_exact_for_integers() {
        assert_eq!(ordered_sum(10_000, |i| i as f64), 49_995_000.0);
    }
}
