use rayon::prelude::*;

use super::{ordered_sum, ForwardPaths, PathEnsemble, Regression};
use crate::error::{Error, Result};
use crate::expr::Point;
use crate::problem::ProblemSpec;

/// `(Y, Z)` on every path and node. `Z` at the last node is zero.
#[derive(Debug, Clone)]
pub struct BackwardSolution {
    pub steps: usize,
    pub m: usize,
    pub d: usize,
    /// `[path][step 0..=N]`
    pub ys: Vec<f64>,
    /// `[path][step 0..=N][d]`
    pub zs: Vec<f64>,
    /// Condition number of the normal equations per step.
    pub conditions: Vec<f64>,
    /// Terminal value plus accumulated driver along each path.
    pub costs: Vec<f64>,
}

impl BackwardSolution {
    pub fn y(&self, path: usize, step: usize) -> f64 {
        self.ys[path * (self.steps + 1) + step]
    }

    pub fn z(&self, path: usize, step: usize) -> &[f64] {
        let k = (path * (self.steps + 1) + step) * self.d;
        &self.zs[k..k + self.d]
    }

    /// Average of `Y` at the first node.
    pub fn y0(&self) -> f64 {
        ordered_sum(self.m, |p| self.y(p, 0)) / self.m as f64
    }

    /// Standard error of the realised pathwise cost.
    pub fn y0_stderr(&self) -> f64 {
        let m = self.m as f64;
        let mean = ordered_sum(self.m, |p| self.costs[p]) / m;
        let var = ordered_sum(self.m, |p| (self.costs[p] - mean).powi(2)) / (m - 1.0);
        (var / m).sqrt()
    }
}

/// Regression scheme for the backward equation:
/// `E_i = E[Y_{i+1} | X_i]`, `Z_i = E[(Y_{i+1} − E_i) dW_i / dt | X_i]`,
/// `Y_i = E_i + g(t_i, X_i, Y_i, Z_i, u_i) dt` with the implicit `Y_i`
/// resolved by one fixed-point sweep.
pub fn backward_regression(
    spec: &ProblemSpec,
    ens: &PathEnsemble,
    fwd: &ForwardPaths,
    terminal: &[f64],
    reg: &Regression,
) -> Result<BackwardSolution> {
    let (n, d) = (spec.dims.n, spec.dims.d);
    let (m, steps) = (ens.m, ens.steps());
    let dt = ens.grid.dt();
    let gdep = spec.coefficients.driver_dep();
    if gdep.y && dt * spec.lipschitz.l1 >= 1.0 {
        return Err(Error::CflViolation {
            module: "paths",
            detail: format!("dt * L1 = {} >= 1", dt * spec.lipschitz.l1),
        });
    }
    if terminal.len() != m {
        return Err(Error::InvalidProblem(format!(
            "paths: {} terminal values for {m} paths",
            terminal.len()
        )));
    }
    if let Some(p) = terminal.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            module: "paths",
            location: format!("terminal value, path {p}"),
        });
    }
    let stride = steps + 1;
    let mut ys = vec![0.0; m * stride];
    let mut zs = vec![0.0; m * stride * d];
    let mut costs = terminal.to_vec();
    for p in 0..m {
        ys[p * stride + steps] = terminal[p];
    }
    let mut conditions = vec![0.0; steps];
    let mut next: Vec<f64> = terminal.to_vec();
    let mut target = vec![0.0; m];
    let zero_u = vec![0.0; spec.dims.k];
    for i in (0..steps).rev() {
        let fit = reg.prepare(m, n, |p| fwd.x(p, i), i)?;
        conditions[i] = fit.condition;
        let e = fit.project(&next);
        let mut zcols = Vec::with_capacity(d);
        for j in 0..d {
            target
                .par_iter_mut()
                .enumerate()
                .for_each(|(p, t)| *t = (next[p] - e[p]) * ens.dw(p, i)[j] / dt);
            zcols.push(fit.project(&target));
        }
        let t = ens.grid.t(i);
        let rows: Vec<Result<(f64, f64)>> = (0..m)
            .into_par_iter()
            .with_min_len(super::CHUNK)
            .map_init(|| vec![0.0; d], |z, p| {
                for (zj, c) in z.iter_mut().zip(&zcols) {
                    *zj = c[p];
                }
                let u = if fwd.controls.is_empty() {
                    &zero_u[..]
                } else {
                    spec.controls.point(fwd.control(p, i))
                };
                let mut pt = Point {
                    t,
                    x: fwd.x(p, i),
                    y: e[p],
                    z,
                    u,
                };
                let mut g = spec.driver(&pt)?;
                if gdep.y {
                    pt.y = e[p] + dt * g;
                    g = spec.driver(&pt)?;
                }
                let y = e[p] + dt * g;
                if !y.is_finite() {
                    return Err(Error::NonFinite {
                        module: "paths",
                        location: format!("Y at path {p}, step {i}"),
                    });
                }
                Ok((y, g))
            })
            .collect();
        for (p, r) in rows.into_iter().enumerate() {
            let (y, g) = r?;
            ys[p * stride + i] = y;
            costs[p] += g * dt;
            next[p] = y;
            for (j, c) in zcols.iter().enumerate() {
                zs[(p * stride + i) * d + j] = c[p];
            }
        }
    }
    Ok(BackwardSolution {
        steps,
        m,
        d,
        ys,
        zs,
        conditions,
        costs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Dims;
    use crate::grid::TimeGrid;
    use crate::paths::{forward_euler, ConstantPolicy};
    use crate::problem::{registry, ControlSet, ExprCoefficients, LipschitzConstants};
    use std::sync::Arc;

    fn scalar(b: &str, s: &str, g: &str) -> ProblemSpec {
        let c = ExprCoefficients::parse(Dims::new(1, 1, 1), &[b], &[s], g, "0").unwrap();
        ProblemSpec::new(
            "b",
            1.0,
            LipschitzConstants { l1: 1.0, l2: 0.0, l3: 0.0 },
            ControlSet::trivial(1),
            Arc::new(c),
        )
        .unwrap()
    }

    fn run(spec: &ProblemSpec, steps: usize, m: usize, term: impl Fn(f64) -> f64) -> BackwardSolution {
        let ens = PathEnsemble::generate(TimeGrid::new(0.0, 1.0, steps).unwrap(), m, 1, 4).unwrap();
        let f = forward_euler(spec, &ens, &[0.0], &ConstantPolicy(0), None).unwrap();
        let terminal: Vec<f64> = (0..m).map(|p| term(f.x(p, steps)[0])).collect();
        backward_regression(spec, &ens, &f, &terminal, &Regression::default()).unwrap()
    }

    #[test]
    fn constant_terminal_is_a_martingale() {
        let b = run(&scalar("0", "1", "0"), 8, 500, |_| 2.5);
        assert!(b.ys.iter().all(|v| *v == 2.5));
        assert!(b.zs.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn unit_driver_integrates() {
        let b = run(&scalar("0", "1", "1"), 10, 200, |_| 0.0);
        assert!((b.y0() - 1.0).abs() <= 0.1);
    }

    #[test]
    fn heat_second_moment() {
        let m = 20_000;
        let b = run(&registry::heat().unwrap(), 10, m, |x| x * x);
        let y0 = b.y0();
        assert!((y0 - 1.0).abs() <= 3.0 * b.y0_stderr(), "{y0} {}", b.y0_stderr());
        let ens = PathEnsemble::generate(TimeGrid::new(0.0, 1.0, 10).unwrap(), m, 1, 4).unwrap();
        let f = forward_euler(&registry::heat().unwrap(), &ens, &[0.0], &ConstantPolicy(0), None).unwrap();
        // terminal Y is assigned, not regressed
        for p in 0..m {
            assert_eq!(b.y(p, 10), f.x(p, 10)[0] * f.x(p, 10)[0]);
        }
        // Z = 2x along the paths for W = x² + T − t, checked in mean square
        let err: f64 = (0..m).map(|p| (b.z(p, 5)[0] - 2.0 * f.x(p, 5)[0]).powi(2)).sum::<f64>() / m as f64;
        assert!(err < 0.05, "{err}");
    }

    #[test]
    fn implicit_driver_needs_small_step() {
        let spec = scalar("0", "1", "y");
        let ens = PathEnsemble::generate(TimeGrid::new(0.0, 1.0, 1).unwrap(), 4, 1, 4).unwrap();
        let f = forward_euler(&spec, &ens, &[0.0], &ConstantPolicy(0), None).unwrap();
        let r = backward_regression(&spec, &ens, &f, &[0.0; 4], &Regression::default());
        assert!(matches!(r, Err(Error::CflViolation { .. })));
    }
}
