//! Space-time mollification with the tensor-product bump `(1 − r²)⁴`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::SpaceTimeGrid;
use crate::value::{interp_with, ValueField};

fn bump(r: f64) -> f64 {
    let q = 1.0 - r * r;
    if q <= 0.0 {
        0.0
    } else {
        q.powi(4)
    }
}

fn bump_d(r: f64) -> f64 {
    let q = 1.0 - r * r;
    if q <= 0.0 {
        0.0
    } else {
        -8.0 * r * q.powi(3)
    }
}

fn bump_dd(r: f64) -> f64 {
    let q = 1.0 - r * r;
    if q <= 0.0 {
        0.0
    } else {
        -8.0 * q.powi(3) + 48.0 * r * r * q * q
    }
}

/// Discrete kernels on offsets `-J..=J` of spacing `h`. Each is normalised
/// on the lattice so that it is exact on polynomials of the matching
/// degree: weights sum to one, the first-derivative kernel has
/// `−Σ s w = 1`, the second-derivative kernel has `Σ w = 0`, `½ Σ s² w = 1`.
#[derive(Debug, Clone)]
struct Kernels {
    half: usize,
    w0: Vec<f64>,
    w1: Vec<f64>,
    w2: Vec<f64>,
}

impl Kernels {
    fn new(h: f64, eps: f64) -> Self {
        let half = (eps / h + 1e-9).floor() as usize;
        let offs: Vec<f64> = (0..=2 * half).map(|j| (j as f64 - half as f64) * h).collect();
        let r = |s: f64| s / eps;
        let raw0: Vec<f64> = offs.iter().map(|&s| bump(r(s))).collect();
        let raw1: Vec<f64> = offs.iter().map(|&s| bump_d(r(s))).collect();
        let raw2: Vec<f64> = offs.iter().map(|&s| bump_dd(r(s))).collect();
        let s0: f64 = raw0.iter().sum();
        let w0 = raw0.iter().map(|v| v / s0).collect();
        let m1: f64 = offs.iter().zip(&raw1).map(|(s, v)| s * v).sum();
        let w1 = raw1.iter().map(|v| -v / m1).collect();
        let mu = raw2.iter().sum::<f64>() / s0;
        let c2: Vec<f64> = raw2.iter().zip(&raw0).map(|(a, b)| a - mu * b).collect();
        let m2: f64 = offs.iter().zip(&c2).map(|(s, v)| s * s * v).sum::<f64>() / 2.0;
        let w2 = c2.iter().map(|v| v / m2).collect();
        Self { half, w0, w1, w2 }
    }
}

/// `out[i] = Σ_j k[j] src[clamp(i − s_j)]` along one axis of a row-major
/// array; indices past either end are clamped.
fn convolve(src: &[f64], stride: usize, len: usize, half: usize, k: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; src.len()];
    for (flat, o) in out.iter_mut().enumerate() {
        let i = (flat / stride) % len;
        let base = flat - i * stride;
        let mut acc = 0.0;
        for (j, w) in k.iter().enumerate() {
            if *w == 0.0 {
                continue;
            }
            let idx = (i as isize - (j as isize - half as isize)).clamp(0, len as isize - 1) as usize;
            acc += w * src[base + idx * stride];
        }
        *o = acc;
    }
    out
}

/// Mollified field with its first time derivative, gradient and Hessian
/// on the source grid.
#[derive(Debug, Clone, Serialize)]
pub struct MollifiedField {
    pub epsilon: f64,
    pub grid: SpaceTimeGrid,
    pub values: Vec<f64>,
    pub dtime: Vec<f64>,
    /// `[time][node][n]`.
    pub grad: Vec<f64>,
    /// `[time][node][n][n]`.
    pub hess: Vec<f64>,
}

/// Convolution with the bump of radius `epsilon` in every coordinate,
/// time clamped to `[t0, T]` and space clamped to the box.
pub fn mollify(field: &ValueField, epsilon: f64) -> Result<MollifiedField> {
    if !(epsilon > 0.0) {
        return Err(Error::Precondition(format!("mollify: epsilon must be positive, got {epsilon}")));
    }
    let sp = &field.grid.space;
    let n = sp.dim();
    let nodes = sp.len();
    let slices = field.steps() + 1;
    let dt = field.grid.time.dt();
    let spacings: Vec<f64> = std::iter::once(dt).chain((0..n).map(|a| sp.dx(a))).collect();
    let worst = spacings.iter().cloned().fold(0.0, f64::max);
    if worst > epsilon / 4.0 {
        return Err(Error::Resolution {
            spacing: worst,
            epsilon,
        });
    }
    let kt = Kernels::new(dt, epsilon);
    let kx: Vec<Kernels> = (0..n).map(|a| Kernels::new(sp.dx(a), epsilon)).collect();
    let along_t = |src: &[f64], k: &[f64]| convolve(src, nodes, slices, kt.half, k);
    let along_x = |src: &[f64], a: usize, k: &[f64]| convolve(src, sp.stride(a), sp.counts[a], kx[a].half, k);
    // smooth every axis but the listed ones with the plain kernel
    let rest = |mut v: Vec<f64>, skip: &[usize]| {
        for a in 0..n {
            if !skip.contains(&a) {
                v = along_x(&v, a, &kx[a].w0);
            }
        }
        v
    };
    let t0 = along_t(&field.values, &kt.w0);
    let t1 = along_t(&field.values, &kt.w1);
    let values = rest(t0.clone(), &[]);
    let dtime = rest(t1, &[]);
    let total = slices * nodes;
    let mut grad = vec![0.0; total * n];
    let mut hess = vec![0.0; total * n * n];
    let firsts: Vec<Vec<f64>> = (0..n).map(|a| along_x(&t0, a, &kx[a].w1)).collect();
    for a in 0..n {
        let g = rest(firsts[a].clone(), &[a]);
        for (k, v) in g.iter().enumerate() {
            grad[k * n + a] = *v;
        }
        let h = rest(along_x(&t0, a, &kx[a].w2), &[a]);
        for (k, v) in h.iter().enumerate() {
            hess[k * n * n + a * n + a] = *v;
        }
        for b in a + 1..n {
            let h = rest(along_x(&firsts[a], b, &kx[b].w1), &[a, b]);
            for (k, v) in h.iter().enumerate() {
                hess[k * n * n + a * n + b] = *v;
                hess[k * n * n + b * n + a] = *v;
            }
        }
    }
    Ok(MollifiedField {
        epsilon,
        grid: field.grid.clone(),
        values,
        dtime,
        grad,
        hess,
    })
}

impl MollifiedField {
    fn n(&self) -> usize {
        self.grid.space.dim()
    }

    pub fn nodes(&self) -> usize {
        self.grid.space.len()
    }

    pub fn value_at(&self, step: usize, node: usize) -> f64 {
        self.values[step * self.nodes() + node]
    }

    pub fn grad_at(&self, step: usize, node: usize) -> &[f64] {
        let n = self.n();
        let k = (step * self.nodes() + node) * n;
        &self.grad[k..k + n]
    }

    /// `‖DW_ε‖∞` over the whole grid (max over nodes of the Euclidean norm).
    pub fn sup_grad(&self) -> f64 {
        self.grad
            .chunks(self.n())
            .map(|g| g.iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    /// Linear in time, multilinear in space, of one stored component.
    fn interp_component(&self, data: &[f64], width: usize, comp: usize, t: f64, x: &[f64]) -> f64 {
        let tg = &self.grid.time;
        let nodes = self.nodes();
        let s = ((t - tg.t0) / tg.dt()).clamp(0.0, tg.steps as f64);
        let i = (s.floor() as usize).min(tg.steps.saturating_sub(1));
        let w = s - i as f64;
        let at = |step: usize| interp_with(&self.grid.space, |k| data[(step * nodes + k) * width + comp], x);
        let a = at(i);
        if w == 0.0 {
            return a;
        }
        let b = at(i + 1);
        a + w * (b - a)
    }

    pub fn value(&self, t: f64, x: &[f64]) -> f64 {
        self.interp_component(&self.values, 1, 0, t, x)
    }

    pub fn time_derivative(&self, t: f64, x: &[f64]) -> f64 {
        self.interp_component(&self.dtime, 1, 0, t, x)
    }

    pub fn gradient(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let n = self.n();
        for (a, o) in out.iter_mut().enumerate().take(n) {
            *o = self.interp_component(&self.grad, n, a, t, x);
        }
    }

    pub fn hessian(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let n = self.n();
        for (c, o) in out.iter_mut().enumerate().take(n * n) {
            *o = self.interp_component(&self.hess, n * n, c, t, x);
        }
    }

    /// Largest `|W_ε − W|` over the grid nodes inside `[lo, hi]`.
    pub fn sup_error(&self, source: &ValueField, lo: &[f64], hi: &[f64]) -> f64 {
        let sp = &self.grid.space;
        let mut x = vec![0.0; sp.dim()];
        let mut worst = 0.0f64;
        for k in 0..self.nodes() {
            sp.point(k, &mut x);
            if x.iter().enumerate().all(|(a, &v)| v >= lo[a] - 1e-12 && v <= hi[a] + 1e-12) {
                for i in 0..=source.steps() {
                    worst = worst.max((self.value_at(i, k) - source.at(i, k)).abs());
                }
            }
        }
        worst
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{SpatialGrid, TimeGrid};

    fn grid(half: f64, dx: f64, steps: usize) -> SpaceTimeGrid {
        SpaceTimeGrid::new(
            TimeGrid::new(0.0, 1.0, steps).unwrap(),
            SpatialGrid::symmetric_1d(half, dx).unwrap(),
        )
    }

    #[test]
    fn kernels_have_unit_moments() {
        let k = Kernels::new(0.01, 0.1);
        assert_eq!(k.half, 10);
        let offs: Vec<f64> = (0..21).map(|j| (j as f64 - 10.0) * 0.01).collect();
        assert!((k.w0.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!((-offs.iter().zip(&k.w1).map(|(s, w)| s * w).sum::<f64>() - 1.0).abs() < 1e-13);
        assert!(k.w2.iter().sum::<f64>().abs() < 1e-12);
        assert!((offs.iter().zip(&k.w2).map(|(s, w)| s * s * w).sum::<f64>() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn constants_and_linear_fields() {
        let f = ValueField::from_fn(grid(2.0, 0.02, 50), |_, _| 1.7);
        let m = mollify(&f, 0.1).unwrap();
        assert!(m.values.iter().all(|v| (v - 1.7).abs() < 1e-14));
        assert!(m.grad.iter().chain(&m.dtime).chain(&m.hess).all(|v| v.abs() < 1e-11));
        let f = ValueField::from_fn(grid(2.0, 0.02, 50), |_, x| 0.6 * x[0]);
        let m = mollify(&f, 0.1).unwrap();
        for k in 0..m.nodes() {
            let x = f.grid.space.point_vec(k)[0];
            if x.abs() <= 1.9 {
                assert!((m.value_at(10, k) - 0.6 * x).abs() < 1e-13);
                assert!((m.grad_at(10, k)[0] - 0.6).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn kink_is_smoothed_symmetrically() {
        let f = ValueField::from_fn(grid(1.0, 0.01, 40), |_, x| x[0].abs());
        let m = mollify(&f, 0.1).unwrap();
        let k0 = f.grid.space.nearest(&[0.0]);
        let v = m.value_at(20, k0);
        assert!(v > 0.0 && v <= 0.1, "{v}");
        assert!(m.grad_at(20, k0)[0].abs() < 1e-12);
        // derivative bound inherited from the Lipschitz constant
        assert!(m.sup_grad() <= 1.0 + 1e-9);
    }

    #[test]
    fn quadratic_hessian_is_exact() {
        let f = ValueField::from_fn(grid(2.0, 0.02, 50), |t, x| x[0] * x[0] + 1.0 - t);
        let m = mollify(&f, 0.2).unwrap();
        let k = f.grid.space.nearest(&[0.5]);
        let n = m.nodes();
        assert!((m.hess[25 * n + k] - 2.0).abs() < 1e-10);
        assert!((m.dtime[25 * n + k] + 1.0).abs() < 1e-10);
    }

    #[test]
    fn too_coarse_grids_are_refused() {
        let f = ValueField::from_fn(grid(2.0, 0.1, 50), |_, x| x[0]);
        assert!(matches!(mollify(&f, 0.2), Err(Error::Resolution { .. })));
    }

    #[test]
    fn error_halves_with_epsilon() {
        let f = ValueField::from_fn(grid(1.0, 0.005, 400), |_, x| x[0].abs());
        let errs: Vec<f64> = [0.2, 0.1, 0.05]
            .iter()
            .map(|&e| mollify(&f, e).unwrap().sup_error(&f, &[-0.5], &[0.5]))
            .collect();
        for (e, eps) in errs.iter().zip([0.2, 0.1, 0.05]) {
            assert!(*e <= eps);
        }
        for w in errs.windows(2) {
            let r = w[1] / w[0];
            assert!((0.4..=0.6).contains(&r), "{r}");
        }
    }
}
