use rayon::prelude::*;

use super::{PathEnsemble, Policy};
use crate::error::{Error, Result};
use crate::expr::Point;
use crate::problem::ProblemSpec;

/// Previous-iterate `(y, z)` along every path, same layout as the backward
/// solution.
#[derive(Debug, Clone, Copy)]
pub struct Feeds<'a> {
    pub y: &'a [f64],
    pub z: &'a [f64],
}

/// Simulated states and the control indices used on each step.
#[derive(Debug, Clone)]
pub struct ForwardPaths {
    pub n: usize,
    pub steps: usize,
    pub m: usize,
    /// `[path][step 0..=N][n]`
    pub xs: Vec<f64>,
    /// `[path][step 0..N]`
    pub controls: Vec<u32>,
}

impl ForwardPaths {
    pub fn x(&self, path: usize, step: usize) -> &[f64] {
        let k = (path * (self.steps + 1) + step) * self.n;
        &self.xs[k..k + self.n]
    }

    pub fn control(&self, path: usize, step: usize) -> usize {
        self.controls[path * self.steps + step] as usize
    }
}

#[allow(clippy::too_many_arguments)]
fn step_path(
    spec: &ProblemSpec,
    ens: &PathEnsemble,
    x0: &[f64],
    policy: &dyn Policy,
    feeds: Option<Feeds<'_>>,
    p: usize,
    xp: &mut [f64],
    cp: &mut [u32],
    b: &mut [f64],
    s: &mut [f64],
    zero_z: &[f64],
) -> Result<()> {
    let (n, d) = (spec.dims.n, spec.dims.d);
    let steps = ens.steps();
    let stride = steps + 1;
    let dt = ens.grid.dt();
    xp[..n].copy_from_slice(x0);
    for i in 0..steps {
        let ui = policy.control(i, &xp[..(i + 1) * n]);
        if ui >= spec.controls.len() {
            return Err(Error::InvalidProblem(format!(
                "paths: policy chose control {ui} of {} at step {i}, path {p}",
                spec.controls.len()
            )));
        }
        cp[i] = ui as u32;
        let (y, z) = match feeds {
            Some(f) => (f.y[p * stride + i], &f.z[(p * stride + i) * d..(p * stride + i + 1) * d]),
            None => (0.0, zero_z),
        };
        let (head, tail) = xp.split_at_mut((i + 1) * n);
        let x = &head[i * n..];
        let pt = Point {
            t: ens.grid.t(i),
            x,
            y,
            z,
            u: spec.controls.point(ui),
        };
        spec.drift(&pt, b)?;
        spec.diffusion(&pt, s)?;
        let dw = ens.dw(p, i);
        for r in 0..n {
            let mut v = x[r] + b[r] * dt;
            for c in 0..d {
                v += s[r * d + c] * dw[c];
            }
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    module: "paths",
                    location: format!("path {p}, step {}", i + 1),
                });
            }
            tail[r] = v;
        }
    }
    Ok(())
}

/// Euler–Maruyama: `X_{i+1} = X_i + b dt + σ dW_i`, coefficients at `t_i`.
pub fn forward_euler(
    spec: &ProblemSpec,
    ens: &PathEnsemble,
    x0: &[f64],
    policy: &dyn Policy,
    feeds: Option<Feeds<'_>>,
) -> Result<ForwardPaths> {
    let (n, d) = (spec.dims.n, spec.dims.d);
    if x0.len() != n || ens.d != d {
        return Err(Error::InvalidProblem(format!(
            "paths: x0 has {} entries and ensemble d = {}, problem has n = {n}, d = {d}",
            x0.len(),
            ens.d
        )));
    }
    let bd = spec.coefficients.drift_dep();
    let sd = spec.coefficients.diffusion_dep();
    let steps = ens.steps();
    if feeds.is_none() {
        if bd.y || sd.y {
            return Err(Error::MissingFeed("y"));
        }
        if bd.z || sd.z {
            return Err(Error::MissingFeed("z"));
        }
    }
    let stride = steps + 1;
    let mut xs = vec![0.0; ens.m * stride * n];
    let mut controls = vec![0u32; ens.m * steps];
    let zero_z = vec![0.0; d];
    let per = super::CHUNK;
    let results: Vec<Result<()>> = xs
        .par_chunks_mut(per * stride * n)
        .zip(controls.par_chunks_mut(per * steps))
        .enumerate()
        .map(|(c, (xc, cc))| {
            let mut b = vec![0.0; n];
            let mut s = vec![0.0; n * d];
            for (off, (xp, cp)) in xc.chunks_mut(stride * n).zip(cc.chunks_mut(steps)).enumerate() {
                let p = c * per + off;
                step_path(spec, ens, x0, policy, feeds, p, xp, cp, &mut b, &mut s, &zero_z)?;
            }
            Ok(())
        })
        .collect();
    results.into_iter().collect::<Result<Vec<()>>>()?;
    Ok(ForwardPaths {
        n,
        steps,
        m: ens.m,
        xs,
        controls,
    })
}
