//! Smallness, contraction and monotonicity conditions, evaluated before any
//! solver runs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::Point;
use crate::problem::{Constants, ProblemSpec};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionReport {
    pub c1: f64,
    pub lambda: f64,
    /// `None` when `Λ ≥ 1`, where the formula has no meaning.
    pub l_bar: Option<f64>,
    pub lambda_bar: Option<f64>,
    pub l_w: Option<f64>,
    pub smallness_ok: bool,
    pub l3_l_w: Option<f64>,
    pub c4_l3_term: f64,
    pub l3_ok: bool,
    /// `8C₄[L₂⁴(T²+T⁴) + L₃⁴]`, the contraction factor of the Picard map.
    pub picard_factor: f64,
    pub monotonicity: Option<MonotonicityResult>,
    pub constants_source: &'static str,
}

/// Evaluates the smallness and `L₃` conditions. Deterministic.
pub fn check_standing_assumptions(
    spec: &ProblemSpec,
    constants: &Constants,
    l_w: Option<f64>,
) -> Result<AssumptionReport> {
    let l = spec.lipschitz;
    let t = spec.horizon;
    if !constants.c4.is_finite() || constants.c4 <= 0.0 {
        return Err(Error::InvalidConstants(format!("C4 = {} must be positive", constants.c4)));
    }
    if let Some(w) = l_w {
        if !w.is_finite() || w < 0.0 {
            return Err(Error::InvalidConstants(format!("L_W = {w} must be finite and >= 0")));
        }
    }
    let c2 = |x: f64| constants.c2.eval(x);
    validate_c2(&constants.c2, l.l1)?;

    let c1 = l.c1();
    let lambda = 8.0 * c2(l.l1) * (1.0 + t * t) * c1 * c1;
    let (l_bar, lambda_bar, derived_lw) = if lambda < 1.0 {
        let lw = c2(l.l1).sqrt() / (1.0 - lambda.sqrt());
        let lb = l.l1.max(lw);
        validate_c2(&constants.c2, lb)?;
        let lam_bar = 8.0 * c2(lb) * (1.0 + t * t) * c1 * c1;
        (Some(lb), Some(lam_bar), Some(lw))
    } else {
        (None, None, None)
    };
    let smallness_ok = lambda < 1.0 && lambda_bar.is_some_and(|v| v < 1.0);

    let l_w = l_w.or(derived_lw);
    let l3_l_w = l_w.map(|w| l.l3 * w);
    let c4_l3_term = 8.0 * constants.c4 * l.l3.powi(4);
    let l3_first = if l.l3 == 0.0 {
        true
    } else {
        l3_l_w.is_some_and(|v| v < 1.0)
    };
    let l3_ok = l3_first && c4_l3_term < 1.0;
    let picard_factor =
        8.0 * constants.c4 * (l.l2.powi(4) * (t * t + t.powi(4)) + l.l3.powi(4));

    Ok(AssumptionReport {
        c1,
        lambda,
        l_bar,
        lambda_bar,
        l_w,
        smallness_ok,
        l3_l_w,
        c4_l3_term,
        l3_ok,
        picard_factor,
        monotonicity: None,
        constants_source: if constants.nominal { "nominal" } else { "user" },
    })
}

/// C₂ must be positive and nondecreasing; checked on a sample up to `upto`.
fn validate_c2(model: &crate::problem::ConstantModel, upto: f64) -> Result<()> {
    let top = upto.max(1.0) * 2.0;
    let mut prev = f64::NEG_INFINITY;
    for i in 0..=64 {
        let l = top * i as f64 / 64.0;
        let v = model.eval(l);
        if !v.is_finite() || v <= 0.0 {
            return Err(Error::InvalidConstants(format!("C2({l}) = {v} is not positive")));
        }
        if v < prev {
            return Err(Error::InvalidConstants(format!(
                "C2 decreases near L = {l}: {prev} -> {v}"
            )));
        }
        prev = v;
    }
    Ok(())
}

/// Report with the problem's own constants, refusing when the smallness
/// condition fails and the problem carries no override.
pub fn require(spec: &ProblemSpec) -> Result<AssumptionReport> {
    let report = check_standing_assumptions(spec, &spec.constants, spec.constants.l_w)?;
    if !report.smallness_ok && !spec.override_gate {
        return Err(Error::AssumptionGate(format!(
            "problem `{}`: Lambda = {:.4}, Lambda_bar = {}",
            spec.name,
            report.lambda,
            report
                .lambda_bar
                .map_or("undefined".to_string(), |v| format!("{v:.4}"))
        )));
    }
    Ok(report)
}

/// Sampling box for probes: `t ∈ [0, T]`, each coordinate in `[-half, half]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
#[serde(default)]
pub struct ProbeBox {
    pub x_half: f64,
    pub y_half: f64,
    pub z_half: f64,
}

impl Default for ProbeBox {
    fn default() -> Self {
        Self {
            x_half: 3.0,
            y_half: 3.0,
            z_half: 1.0,
        }
    }
}

/// A proposed certificate for the monotonicity conditions.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct MonotonicityConfig {
    /// Row vector `G ∈ ℝ^{1×n}`.
    pub g: Vec<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub mu1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonotonicityResult {
    /// Both sampled inequalities hold within 1e-10.
    pub ok: bool,
    pub worst_violation: f64,
    /// Structural requirements on `(G, β, μ)`; reported, not folded into `ok`.
    pub structure_ok: bool,
    pub structure_notes: Vec<String>,
}

pub const MONOTONICITY_TOL: f64 = 1e-10;

pub fn check_monotonicity_sampled(
    spec: &ProblemSpec,
    cfg: &MonotonicityConfig,
    probe_box: &ProbeBox,
    probes: usize,
    seed: u64,
) -> Result<MonotonicityResult> {
    let dims = spec.dims;
    let (n, d) = (dims.n, dims.d);
    if cfg.g.len() != n {
        return Err(Error::InvalidProblem(format!(
            "monotonicity G has {} entries, expected n = {n}",
            cfg.g.len()
        )));
    }
    let mut notes = Vec::new();
    if cfg.g.iter().all(|v| *v == 0.0) {
        notes.push("G is zero".to_string());
    }
    if [cfg.beta1, cfg.beta2, cfg.mu1].iter().any(|v| *v < 0.0) {
        notes.push("beta1, beta2, mu1 must be nonnegative".to_string());
    }
    if cfg.beta1 + cfg.beta2 <= 0.0 {
        notes.push("beta1 + beta2 must be positive".to_string());
    }
    if cfg.beta2 + cfg.mu1 <= 0.0 {
        notes.push("beta2 + mu1 must be positive".to_string());
    }
    if n > 1 && cfg.beta2 <= 0.0 {
        notes.push("beta2 must be positive when n > 1".to_string());
    }

    let g2: f64 = cfg.g.iter().map(|v| v * v).sum();
    let dot_g = |v: &[f64]| -> f64 { v.iter().zip(&cfg.g).map(|(a, b)| a * b).sum() };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::NEG_INFINITY;
    let (mut b1, mut b2) = (vec![0.0; n], vec![0.0; n]);
    let (mut s1, mut s2) = (vec![0.0; n * d], vec![0.0; n * d]);
    let mut gs = vec![0.0; d];
    for _ in 0..probes.max(1) {
        let t = rng.random_range(0.0..=spec.horizon);
        let u = spec.controls.point(rng.random_range(0..spec.controls.len()));
        let x: Vec<f64> = (0..n).map(|_| uniform(&mut rng, probe_box.x_half)).collect();
        let xb: Vec<f64> = (0..n).map(|_| uniform(&mut rng, probe_box.x_half)).collect();
        let y = uniform(&mut rng, probe_box.y_half);
        let yb = uniform(&mut rng, probe_box.y_half);
        let z: Vec<f64> = (0..d).map(|_| uniform(&mut rng, probe_box.z_half)).collect();
        let zb: Vec<f64> = (0..d).map(|_| uniform(&mut rng, probe_box.z_half)).collect();
        let p = Point { t, x: &x, y, z: &z, u };
        let pb = Point { t, x: &xb, y: yb, z: &zb, u };
        spec.drift(&p, &mut b1)?;
        spec.drift(&pb, &mut b2)?;
        spec.diffusion(&p, &mut s1)?;
        spec.diffusion(&pb, &mut s2)?;
        let gg = spec.driver(&p)? - spec.driver(&pb)?;

        let xh: Vec<f64> = x.iter().zip(&xb).map(|(a, b)| a - b).collect();
        let yh = y - yb;
        let gx = dot_g(&xh);
        let db: Vec<f64> = b1.iter().zip(&b2).map(|(a, b)| a - b).collect();
        for (j, gj) in gs.iter_mut().enumerate() {
            *gj = (0..n).map(|i| cfg.g[i] * (s1[i * d + j] - s2[i * d + j])).sum();
        }
        let zh2: f64 = z.iter().zip(&zb).map(|(a, b)| (a - b).powi(2)).sum();
        let pairing = -gg * gx
            + dot_g(&db) * yh
            + gs.iter().zip(z.iter().zip(&zb)).map(|(s, (a, b))| s * (a - b)).sum::<f64>();
        let first = pairing + cfg.beta1 * gx * gx + cfg.beta2 * g2 * (yh * yh + zh2);
        let dphi = spec.terminal(&x)? - spec.terminal(&xb)?;
        let second = cfg.mu1 * gx * gx - dphi * gx;
        worst = worst.max(first).max(second);
    }
    Ok(MonotonicityResult {
        ok: worst <= MONOTONICITY_TOL,
        worst_violation: worst,
        structure_ok: notes.is_empty(),
        structure_notes: notes,
    })
}

fn uniform(rng: &mut ChaCha8Rng, half: f64) -> f64 {
    if half > 0.0 {
        rng.random_range(-half..=half)
    } else {
        0.0
    }
}

/// Largest difference quotients observed per coefficient and argument group.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LipschitzProbe {
    pub probes: usize,
    /// Rows b, sigma, g, phi; columns x, y, z.
    pub observed: [[f64; 3]; 4],
    pub growth_constant: f64,
    pub growth_worst_ratio: f64,
    pub warnings: Vec<String>,
}

impl LipschitzProbe {
    pub fn consistent(&self) -> bool {
        self.warnings.is_empty()
    }
}

const NAMES: [&str; 4] = ["b", "sigma", "g", "phi"];
const GROUPS: [&str; 3] = ["x", "y", "z"];

/// Probes the declared Lipschitz structure and linear growth with a
/// quasi-random (Kronecker) sequence. Disagreement yields warnings only.
pub fn probe_lipschitz(
    spec: &ProblemSpec,
    probe_box: &ProbeBox,
    probes: usize,
    seed: u64,
) -> Result<LipschitzProbe> {
    let dims = spec.dims;
    let (n, d) = (dims.n, dims.d);
    let l = spec.lipschitz;
    let declared = [
        [l.l1, l.l2, l.l2],
        [l.l1, l.l2, l.l3],
        [l.l1, l.l1, l.l1],
        [l.l1, 0.0, 0.0],
    ];
    // coordinates: t, x, y, z, direction (max(n,d)), step size
    let dim = 1 + n + 1 + d + n.max(d) + 1;
    let alpha = kronecker_alpha(dim);
    let offset = (seed as f64 * 0.618_033_988_749_894_9).fract();

    let mut observed = [[0.0f64; 3]; 4];
    let mut warnings = Vec::new();
    let (mut b0, mut b1) = (vec![0.0; n], vec![0.0; n]);
    let (mut s0, mut s1) = (vec![0.0; n * d], vec![0.0; n * d]);

    // sup over u and sampled s of |ψ(s,0,0,0,u)|
    let zx = vec![0.0; n];
    let zz = vec![0.0; d];
    let mut at_zero = 0.0f64;
    for ui in 0..spec.controls.len() {
        for ti in 0..=8 {
            let p = Point {
                t: spec.horizon * ti as f64 / 8.0,
                x: &zx,
                y: 0.0,
                z: &zz,
                u: spec.controls.point(ui),
            };
            spec.drift(&p, &mut b0)?;
            spec.diffusion(&p, &mut s0)?;
            at_zero = at_zero
                .max(norm(&b0))
                .max(norm(&s0))
                .max(spec.driver(&p)?.abs());
        }
    }
    at_zero = at_zero.max(spec.terminal(&zx)?.abs());
    let growth_constant = l.l1.max(l.l2).max(l.l3) + at_zero;
    let mut growth_worst = 0.0f64;

    let mut q = vec![0.0; dim];
    for j in 0..probes {
        for (c, qc) in q.iter_mut().enumerate() {
            *qc = (offset + (j as f64 + 1.0) * alpha[c]).fract();
        }
        let sym = |v: f64, h: f64| (2.0 * v - 1.0) * h;
        let t = q[0] * spec.horizon;
        let x: Vec<f64> = (0..n).map(|i| sym(q[1 + i], probe_box.x_half)).collect();
        let y = sym(q[1 + n], probe_box.y_half);
        let z: Vec<f64> = (0..d).map(|i| sym(q[2 + n + i], probe_box.z_half)).collect();
        let dir_raw = &q[2 + n + d..2 + n + d + n.max(d)];
        let h = 1e-3 + 0.5 * q[dim - 1];
        let u = spec.controls.point(j % spec.controls.len());

        let p = Point { t, x: &x, y, z: &z, u };
        spec.drift(&p, &mut b0)?;
        spec.diffusion(&p, &mut s0)?;
        let g0 = spec.driver(&p)?;
        let f0 = spec.terminal(&x)?;

        let scale = 1.0 + norm(&x) + y.abs() + norm(&z);
        growth_worst = growth_worst
            .max(norm(&b0) / scale)
            .max(norm(&s0) / scale)
            .max(g0.abs() / scale)
            .max(f0.abs() / (1.0 + norm(&x)));

        for (gi, _) in GROUPS.iter().enumerate() {
            let (mut x1, mut y1, mut z1) = (x.clone(), y, z.clone());
            // step back instead of forward when forward leaves the box, so
            // both ends of every secant stay inside it
            match gi {
                0 => {
                    let dir = unit(&dir_raw[..n]);
                    let sign = if x.iter().zip(&dir).any(|(v, e)| (v + h * e).abs() > probe_box.x_half) {
                        -1.0
                    } else {
                        1.0
                    };
                    x1.iter_mut().zip(&dir).for_each(|(v, e)| *v += sign * h * e);
                }
                1 => {
                    y1 += if (y + h).abs() > probe_box.y_half { -h } else { h };
                }
                _ => {
                    let dir = unit(&dir_raw[..d]);
                    let sign = if z.iter().zip(&dir).any(|(v, e)| (v + h * e).abs() > probe_box.z_half) {
                        -1.0
                    } else {
                        1.0
                    };
                    z1.iter_mut().zip(&dir).for_each(|(v, e)| *v += sign * h * e);
                }
            }
            let len = h;
            let p1 = Point { t, x: &x1, y: y1, z: &z1, u };
            spec.drift(&p1, &mut b1)?;
            spec.diffusion(&p1, &mut s1)?;
            let qs = [
                diff_norm(&b0, &b1) / len,
                diff_norm(&s0, &s1) / len,
                (spec.driver(&p1)? - g0).abs() / len,
                if gi == 0 {
                    (spec.terminal(&x1)? - f0).abs() / len
                } else {
                    0.0
                },
            ];
            for (ci, qv) in qs.iter().enumerate() {
                observed[ci][gi] = observed[ci][gi].max(*qv);
            }
        }
    }
    for ci in 0..4 {
        for gi in 0..3 {
            let bound = declared[ci][gi];
            if observed[ci][gi] > bound * (1.0 + 1e-9) + 1e-12 {
                warnings.push(format!(
                    "{} {}-quotient {:.6} exceeds declared {:.6}",
                    NAMES[ci], GROUPS[gi], observed[ci][gi], bound
                ));
            }
        }
    }
    if growth_worst > growth_constant * (1.0 + 1e-9) + 1e-12 {
        warnings.push(format!(
            "linear growth ratio {growth_worst:.6} exceeds {growth_constant:.6}"
        ));
    }
    Ok(LipschitzProbe {
        probes,
        observed,
        growth_constant,
        growth_worst_ratio: growth_worst,
        warnings,
    })
}

/// Additive recurrence constants `α_i = φ_D^{-i}` with `φ_D` the root of
/// `x^{D+1} = x + 1`.
fn kronecker_alpha(dim: usize) -> Vec<f64> {
    let mut phi = 2.0f64;
    for _ in 0..64 {
        phi = (1.0 + phi).powf(1.0 / (dim as f64 + 1.0));
    }
    (1..=dim).map(|i| phi.powi(-(i as i32)).fract()).collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn diff_norm(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt()
}

fn unit(raw: &[f64]) -> Vec<f64> {
    let v: Vec<f64> = raw.iter().map(|r| 2.0 * r - 1.0 + 1e-3).collect();
    let nv = norm(&v);
    v.iter().map(|a| a / nv).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Dims;
    use crate::problem::{
        registry, ConstantModel, ControlSet, ExprCoefficients, LipschitzConstants,
    };
    use std::sync::Arc;

    fn scalar(l: LipschitzConstants, b: &str, s: &str, g: &str, phi: &str) -> ProblemSpec {
        let c = ExprCoefficients::parse(Dims::new(1, 1, 1), &[b], &[s], g, phi).unwrap();
        ProblemSpec::new("t", 1.0, l, ControlSet::trivial(1), Arc::new(c)).unwrap()
    }

    #[test]
    fn worked_constants() {
        let spec = scalar(
            LipschitzConstants { l1: 1.0, l2: 0.2, l3: 0.2 },
            "0",
            "1",
            "0",
            "x1",
        );
        let r = check_standing_assumptions(&spec, &Constants::default(), Some(1.0)).unwrap();
        assert!((r.c1 - 0.2).abs() < 1e-15);
        assert!((r.lambda - 0.64).abs() < 1e-12);
        assert!((r.l_bar.unwrap() - 5.0).abs() < 1e-12);
        assert!((r.lambda_bar.unwrap() - 0.64).abs() < 1e-12);
        assert!(r.smallness_ok);
        assert!((r.l3_l_w.unwrap() - 0.2).abs() < 1e-15);
        assert!((r.c4_l3_term - 0.0128).abs() < 1e-12);
        assert!(r.l3_ok);
    }

    #[test]
    fn zero_coupling() {
        let spec = registry::heat().unwrap();
        let r = check_standing_assumptions(&spec, &Constants::default(), Some(123.0)).unwrap();
        assert_eq!(r.lambda, 0.0);
        assert_eq!(r.lambda_bar, Some(0.0));
        assert!(r.smallness_ok && r.l3_ok);
    }

    #[test]
    fn large_coupling_has_no_l_bar() {
        let spec = registry::burgers().unwrap();
        let r = check_standing_assumptions(&spec, &Constants::default(), None).unwrap();
        assert!(r.lambda >= 1.0);
        assert!(r.l_bar.is_none() && !r.smallness_ok);
    }

    #[test]
    fn gate_refuses_without_override() {
        let spec = registry::burgers().unwrap().with_override(false);
        assert!(matches!(require(&spec), Err(Error::AssumptionGate(_))));
        assert!(require(&spec.with_override(true)).is_ok());
    }

    #[test]
    fn bad_c2_rejected() {
        let spec = registry::heat().unwrap();
        let mut c = Constants::default();
        c.c2 = ConstantModel::Affine { a: 1.0, b: -1.0 };
        assert!(matches!(
            check_standing_assumptions(&spec, &c, None),
            Err(Error::InvalidConstants(_))
        ));
        c.c2 = ConstantModel::Constant { value: 0.0 };
        assert!(check_standing_assumptions(&spec, &c, None).is_err());
    }

    fn mono(phi: &str, g: &str, beta2: f64, mu1: f64) -> MonotonicityResult {
        let spec = scalar(
            LipschitzConstants { l1: 1.0, l2: 1.0, l3: 0.0 },
            "0",
            "0",
            g,
            phi,
        );
        let cfg = MonotonicityConfig {
            g: vec![1.0],
            beta1: 0.0,
            beta2,
            mu1,
        };
        check_monotonicity_sampled(&spec, &cfg, &ProbeBox::default(), 500, 7).unwrap()
    }

    #[test]
    fn monotonicity_examples() {
        let r = mono("x1", "0", 0.0, 1.0);
        assert!(r.ok, "{r:?}");
        assert!(!r.structure_ok);
        let r = mono("-x1", "0", 0.0, 1.0);
        assert!(!r.ok && r.worst_violation > 0.0);
        let r = mono("0", "y", 1.0, 0.0);
        assert!(!r.ok);
    }

    #[test]
    fn probe_matches_declared_constants() {
        let p = probe_lipschitz(&registry::sigma_z().unwrap(), &ProbeBox::default(), 2000, 1).unwrap();
        assert!(p.consistent(), "{:?}", p.warnings);
        assert!((p.observed[1][2] - 0.5).abs() < 1e-9);
        let spec = scalar(
            LipschitzConstants { l1: 1.0, l2: 0.0, l3: 0.0 },
            "3*x1",
            "1",
            "0",
            "0",
        );
        let p = probe_lipschitz(&spec, &ProbeBox::default(), 500, 1).unwrap();
        assert!(!p.consistent());
    }

    #[test]
    fn kronecker_constants_in_unit_interval() {
        let a = kronecker_alpha(3);
        assert!(a.iter().all(|v| *v > 0.0 && *v < 1.0));
        assert!((kronecker_alpha(1)[0] - 0.618_033_988_749_894_9).abs() < 1e-12);
    }
}
