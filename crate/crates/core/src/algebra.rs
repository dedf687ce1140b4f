//! Fixed point of `V = z₀ + pᵀσ(t, x, v, V, u)`.
//!
//! With `z₀ = 0` this is the `V` entering the Hamiltonian; with `z₀ = z` it is
//! the auxiliary map `h(s, x, y, z, u)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::assumptions::ProbeBox;
use crate::error::{Error, Result};
use crate::expr::Point;
use crate::problem::ProblemSpec;

pub const DEFAULT_TOL: f64 = 1e-12;
pub const DEFAULT_MAX_ITER: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlgebraSolution {
    pub v: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
    pub contraction_estimate: f64,
}

/// Arguments of one algebra solve.
#[derive(Debug, Clone, Copy)]
pub struct AlgebraInput<'a> {
    pub t: f64,
    pub x: &'a [f64],
    pub v: f64,
    pub p: &'a [f64],
    pub u: &'a [f64],
    pub z0: &'a [f64],
}

/// `out = z₀ + pᵀσ(t, x, v, w, u)`. `sigma` is scratch of length `n·d`.
fn gamma(
    spec: &ProblemSpec,
    a: &AlgebraInput<'_>,
    w: &[f64],
    sigma: &mut [f64],
    out: &mut [f64],
) -> Result<()> {
    let d = spec.dims.d;
    spec.diffusion(
        &Point {
            t: a.t,
            x: a.x,
            y: a.v,
            z: w,
            u: a.u,
        },
        sigma,
    )?;
    for j in 0..d {
        let mut acc = a.z0[j];
        for (i, pi) in a.p.iter().enumerate() {
            acc += pi * sigma[i * d + j];
        }
        out[j] = acc;
    }
    Ok(())
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn location(a: &AlgebraInput<'_>) -> String {
    format!("t={}, x={:?}, v={}, p={:?}, u={:?}", a.t, a.x, a.v, a.p, a.u)
}

/// Iterates from `V⁰ = z₀`.
pub fn solve_algebra(
    spec: &ProblemSpec,
    a: &AlgebraInput<'_>,
    tol: f64,
    max_iter: usize,
) -> Result<AlgebraSolution> {
    solve_algebra_from(spec, a, a.z0, tol, max_iter)
}

/// Same iteration started from an arbitrary `V⁰`.
pub fn solve_algebra_from(
    spec: &ProblemSpec,
    a: &AlgebraInput<'_>,
    start: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<AlgebraSolution> {
    let (n, d) = (spec.dims.n, spec.dims.d);
    if a.x.len() != n || a.p.len() != n || a.z0.len() != d || start.len() != d {
        return Err(Error::InvalidProblem(format!(
            "algebra: dimension mismatch (x {}, p {}, z0 {}) for n = {n}, d = {d}",
            a.x.len(),
            a.p.len(),
            a.z0.len()
        )));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidProblem(format!("algebra: tolerance must be positive, got {tol}")));
    }
    let pnorm = a.p.iter().map(|v| v * v).sum::<f64>().sqrt();
    let q = spec.lipschitz.l3 * pnorm;
    if q >= 1.0 {
        return Err(Error::NonContractive {
            location: location(a),
            factor: q,
        });
    }
    let mut sigma = vec![0.0; n * d];
    let mut cur = start.to_vec();
    let mut next = vec![0.0; d];
    let single = pnorm == 0.0 || !spec.coefficients.diffusion_dep().z;
    let threshold = if q > 0.0 { tol * (1.0 - q) / q } else { f64::INFINITY };

    let mut iterations = 0;
    let mut prev_gap = f64::NAN;
    let mut ratio = 0.0;
    loop {
        gamma(spec, a, &cur, &mut sigma, &mut next)?;
        iterations += 1;
        let gap = dist(&next, &cur);
        if iterations > 1 && prev_gap > 0.0 {
            ratio = gap / prev_gap;
        }
        prev_gap = gap;
        std::mem::swap(&mut cur, &mut next);
        if next.iter().chain(&cur).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                module: "algebra",
                location: location(a),
            });
        }
        if single || gap <= threshold {
            break;
        }
        if iterations >= max_iter {
            return Err(Error::MaxIterations {
                tol,
                max_iter,
                gap,
            });
        }
    }
    let residual = residual_of(spec, a, &cur)?;
    Ok(AlgebraSolution {
        v: cur,
        iterations,
        residual,
        contraction_estimate: ratio,
    })
}

/// `|V − z₀ − pᵀσ(t, x, v, V, u)|` evaluated from scratch.
pub fn residual_of(spec: &ProblemSpec, a: &AlgebraInput<'_>, v: &[f64]) -> Result<f64> {
    let (n, d) = (spec.dims.n, spec.dims.d);
    let mut sigma = vec![0.0; n * d];
    let mut out = vec![0.0; d];
    gamma(spec, a, v, &mut sigma, &mut out)?;
    Ok(dist(v, &out))
}

/// Sampling region for [`probe_algebra_regularity`].
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct AlgebraProbeBox {
    pub state: ProbeBox,
    /// `p` is drawn from the cube of this half-width around `p_center`.
    pub p_center: Vec<f64>,
    pub p_half: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AlgebraRegularity {
    pub growth_const: f64,
    pub lipschitz_const: f64,
}

/// Empirical growth and `z`-Lipschitz constants of `h = V(z₀ = z)`.
pub fn probe_algebra_regularity(
    spec: &ProblemSpec,
    region: &AlgebraProbeBox,
    probes: usize,
    seed: u64,
    tol: f64,
    max_iter: usize,
) -> Result<AlgebraRegularity> {
    let (n, d) = (spec.dims.n, spec.dims.d);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sym = |rng: &mut ChaCha8Rng, h: f64| if h > 0.0 { rng.random_range(-h..=h) } else { 0.0 };
    let mut growth = 0.0f64;
    let mut lip = 0.0f64;
    for _ in 0..probes {
        let t = rng.random_range(0.0..=spec.horizon);
        let x: Vec<f64> = (0..n).map(|_| sym(&mut rng, region.state.x_half)).collect();
        let y = sym(&mut rng, region.state.y_half);
        let z: Vec<f64> = (0..d).map(|_| sym(&mut rng, region.state.z_half)).collect();
        let zb: Vec<f64> = (0..d).map(|_| sym(&mut rng, region.state.z_half)).collect();
        let p: Vec<f64> = (0..n)
            .map(|i| region.p_center.get(i).copied().unwrap_or(0.0) + sym(&mut rng, region.p_half))
            .collect();
        let u = spec.controls.point(rng.random_range(0..spec.controls.len()));
        let mut input = AlgebraInput { t, x: &x, v: y, p: &p, u, z0: &z };
        let h = solve_algebra(spec, &input, tol, max_iter)?.v;
        input.z0 = &zb;
        let hb = solve_algebra(spec, &input, tol, max_iter)?.v;
        let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
        let scale = 1.0 + norm(&x) + y.abs() + norm(&z);
        growth = growth.max(norm(&h) / scale);
        let dz = dist(&z, &zb);
        if dz > 0.0 {
            lip = lip.max(dist(&h, &hb) / dz);
        }
    }
    Ok(AlgebraRegularity {
        growth_const: growth,
        lipschitz_const: lip,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Dims;
    use crate::problem::{registry, ControlSet, ExprCoefficients, LipschitzConstants};
    use proptest::prelude::*;
    use std::sync::Arc;

    fn affine(a: f64, c: f64) -> ProblemSpec {
        let s = format!("{a:?} + {c:?}*z1");
        let coef = ExprCoefficients::parse(Dims::new(1, 1, 1), &["0"], &[&s], "0", "0").unwrap();
        ProblemSpec::new(
            "affine",
            1.0,
            LipschitzConstants { l1: 1.0, l2: 0.0, l3: c.abs() },
            ControlSet::trivial(1),
            Arc::new(coef),
        )
        .unwrap()
    }

    fn solve(spec: &ProblemSpec, p: f64, z0: f64) -> Result<AlgebraSolution> {
        solve_algebra(
            spec,
            &AlgebraInput {
                t: 0.0,
                x: &[0.0],
                v: 0.0,
                p: &[p],
                u: &[0.0],
                z0: &[z0],
            },
            DEFAULT_TOL,
            DEFAULT_MAX_ITER,
        )
    }

    #[test]
    fn zero_p_is_one_step() {
        let s = solve(&affine(1.0, 0.5), 0.0, 0.3).unwrap();
        assert_eq!(s.v, vec![0.3]);
        assert_eq!(s.iterations, 1);
    }

    #[test]
    fn affine_closed_form() {
        let s = solve(&affine(1.0, 0.5), 0.4, 0.0).unwrap();
        assert!((s.v[0] - 0.5).abs() < 1e-12);
        assert!(s.residual <= DEFAULT_TOL);
        assert!(s.contraction_estimate < 1.0);
    }

    #[test]
    fn z_free_sigma_is_one_step() {
        let s = solve(&registry::heat().unwrap(), 2.0, 0.0).unwrap();
        assert_eq!(s.v, vec![2.0]);
        assert_eq!(s.iterations, 1);
    }

    #[test]
    fn guard_fires() {
        let e = solve(&affine(1.0, 0.5), 2.0, 0.0).unwrap_err();
        assert!(matches!(e, Error::NonContractive { factor, .. } if factor >= 1.0));
    }

    #[test]
    fn max_iterations_reported() {
        let r = solve_algebra(
            &affine(1.0, 0.5),
            &AlgebraInput {
                t: 0.0,
                x: &[0.0],
                v: 0.0,
                p: &[1.9],
                u: &[0.0],
                z0: &[0.0],
            },
            1e-14,
            3,
        );
        assert!(matches!(r, Err(Error::MaxIterations { .. })));
    }

    #[test]
    fn regularity_probes() {
        let region = |c: f64, zh: f64| AlgebraProbeBox {
            state: ProbeBox {
                x_half: 1.0,
                y_half: 1.0,
                z_half: zh,
            },
            p_center: vec![c],
            p_half: 0.0,
        };
        let r = probe_algebra_regularity(&registry::heat().unwrap(), &region(0.7, 1.0), 200, 3, 1e-12, 200)
            .unwrap();
        assert!((r.lipschitz_const - 1.0).abs() < 1e-9);
        let r = probe_algebra_regularity(&affine(1.0, 0.5), &region(0.4, 1.0), 200, 3, 1e-13, 200).unwrap();
        assert!((r.lipschitz_const - 1.25).abs() < 1e-6, "{r:?}");
        let zero = ExprCoefficients::parse(Dims::new(1, 1, 1), &["0"], &["0"], "0", "0").unwrap();
        let spec = registry::heat().unwrap().with_coefficients(Arc::new(zero));
        let r = probe_algebra_regularity(&spec, &region(0.3, 0.0), 100, 3, 1e-12, 200).unwrap();
        assert!(r.growth_const < 1e-15);
    }

    proptest! {
        #[test]
        fn fixed_point_is_unique(a in -2.0f64..2.0, c in -2.0f64..2.0, pf in -0.8f64..0.8, s1 in -5.0f64..5.0, s2 in -5.0f64..5.0) {
            let p = if c.abs() > 1e-3 { pf / c.abs() } else { pf };
            let spec = affine(a, c);
            let input = AlgebraInput { t: 0.0, x: &[0.0], v: 0.0, p: &[p], u: &[0.0], z0: &[0.0] };
            let v1 = solve_algebra_from(&spec, &input, &[s1], DEFAULT_TOL, 400).unwrap().v[0];
            let v2 = solve_algebra_from(&spec, &input, &[s2], DEFAULT_TOL, 400).unwrap().v[0];
            prop_assert!((v1 - v2).abs() <= 2.0 * DEFAULT_TOL, "{} vs {}", v1, v2);
        }

        #[test]
        fn residual_recomputes_exactly(a in -2.0f64..2.0, c in -2.0f64..2.0, pf in -0.8f64..0.8) {
            let p = if c.abs() > 1e-3 { pf / c.abs() } else { pf };
            let spec = affine(a, c);
            let sol = solve(&spec, p, 0.0).unwrap();
            let input = AlgebraInput { t: 0.0, x: &[0.0], v: 0.0, p: &[p], u: &[0.0], z0: &[0.0] };
            let r = residual_of(&spec, &input, &sol.v).unwrap();
            prop_assert!((r - sol.residual).abs() <= 1e-15);
        }
    }
}
