//! Auxiliary problems with coefficients frozen along a candidate field.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{mollify, signed_gaps, MollifiedField, Verdict, VerifyReport};
use crate::algebra::{solve_algebra, AlgebraInput, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::error::{Error, Result};
use crate::expr::{Dims, Point};
use crate::fbsde::solve_fully_coupled;
use crate::grid::{SpaceTimeGrid, SpatialGrid, TimeGrid};
use crate::paths::{derive_seed, ordered_sum, PathEnsemble, SpecTerminal};
use crate::problem::{Coefficients, Dependence, ProblemSpec};
use crate::value::{compute_value_dpp, estimate_regularity, DppOptions, ValueField};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UniquenessConfig {
    pub dpp: DppOptions,
    /// Time slabs of the dynamic-programming solves.
    pub slabs: usize,
    pub tolerance: f64,
    pub lip_bound: f64,
    /// Comparison box; defaults to the middle third of the grid box.
    pub compare_lo: Option<Vec<f64>>,
    pub compare_hi: Option<Vec<f64>>,
    /// Mollifier radius for the full check; defaults to four grid spacings.
    pub epsilon: Option<f64>,
    /// Paths of the Z diagnostic.
    pub z_paths: usize,
    /// Spatial spacing of the dynamic-programming grid; defaults to the
    /// candidate's own grid.
    pub dx: Option<f64>,
}

impl Default for UniquenessConfig {
    fn default() -> Self {
        Self {
            dpp: DppOptions {
                paths: 20_000,
                ..DppOptions::default()
            },
            slabs: 20,
            tolerance: 5e-2,
            lip_bound: 100.0,
            compare_lo: None,
            compare_hi: None,
            epsilon: None,
            z_paths: 2000,
            dx: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UniquenessOutcome {
    pub check: &'static str,
    pub verdict: Verdict,
    /// `max (W − candidate)` over the comparison box.
    pub w_above: f64,
    /// `max (candidate − W)` over the comparison box.
    pub w_below: f64,
    /// `max |W_aux − candidate|` for the frozen problem's value field.
    pub aux_gap: f64,
    pub lip_x: f64,
    /// `‖DW̃_ε‖∞ · L3` for the full check.
    pub gradient_factor: Option<f64>,
    /// `E ∫ |Z̄ − Ṽ|² ds` for the full check.
    pub z_gap: Option<f64>,
    pub tolerance: f64,
    pub seed: u64,
    pub w: ValueField,
    pub aux: ValueField,
}

impl UniquenessOutcome {
    pub fn report(&self) -> VerifyReport {
        let mut r = VerifyReport::new(self.check, Some(self.verdict))
            .gap("w_minus_candidate", self.w_above)
            .gap("candidate_minus_w", self.w_below)
            .gap("aux_vs_candidate", self.aux_gap)
            .gap("lip_x", self.lip_x)
            .threshold("tolerance", self.tolerance);
        if let Some(f) = self.gradient_factor {
            r = r.gap("gradient_factor", f).threshold("gradient_factor", 1.0);
        }
        if let Some(z) = self.z_gap {
            r = r.gap("z_consistency", z);
        }
        r.seeds.push(self.seed);
        r
    }
}

#[derive(Debug, Clone)]
enum Freeze {
    /// `σ̃(t, x, u) = σ(t, x, W̃(t, x), 0, u)`; drift untouched.
    Sigma,
    /// `b̃, σ̃` at `(W̃, Ṽ)` with `Ṽ` solving the algebra equation for the
    /// mollified gradient.
    Full(Arc<MollifiedField>),
}

/// Coefficients of an auxiliary problem frozen along a candidate.
#[derive(Debug, Clone)]
pub struct FrozenCoefficients {
    base: ProblemSpec,
    candidate: Arc<ValueField>,
    freeze: Freeze,
    tag: String,
}

impl FrozenCoefficients {
    fn new(base: &ProblemSpec, candidate: Arc<ValueField>, freeze: Freeze) -> Self {
        let mut h = Sha256::new();
        for v in &candidate.values {
            h.update(v.to_le_bytes());
        }
        let eps = match &freeze {
            Freeze::Sigma => "sigma".to_string(),
            Freeze::Full(m) => format!("full eps={:?}", m.epsilon),
        };
        Self {
            base: base.clone(),
            candidate,
            freeze,
            tag: format!("{eps} candidate={}", hex::encode(h.finalize())),
        }
    }

    /// `(W̃, Ṽ)` at `(t, x, u)`.
    fn frozen_yz(&self, t: f64, x: &[f64], u: &[f64]) -> Result<(f64, Vec<f64>)> {
        let v = self.candidate.interp(t, x);
        let d = self.base.dims.d;
        match &self.freeze {
            Freeze::Sigma => Ok((v, vec![0.0; d])),
            Freeze::Full(m) => {
                let mut p = vec![0.0; self.base.dims.n];
                m.gradient(t, x, &mut p);
                let zero = vec![0.0; d];
                let s = solve_algebra(
                    &self.base,
                    &AlgebraInput {
                        t,
                        x,
                        v,
                        p: &p,
                        u,
                        z0: &zero,
                    },
                    DEFAULT_TOL,
                    DEFAULT_MAX_ITER,
                )?;
                Ok((v, s.v))
            }
        }
    }
}

impl Coefficients for FrozenCoefficients {
    fn dims(&self) -> Dims {
        self.base.dims
    }

    fn drift(&self, s: &Point<'_>, out: &mut [f64]) -> Result<()> {
        match self.freeze {
            Freeze::Sigma => self.base.drift(s, out),
            Freeze::Full(_) => {
                let (y, z) = self.frozen_yz(s.t, s.x, s.u)?;
                self.base.drift(&Point { y, z: &z, ..*s }, out)
            }
        }
    }

    fn diffusion(&self, s: &Point<'_>, out: &mut [f64]) -> Result<()> {
        let (y, z) = self.frozen_yz(s.t, s.x, s.u)?;
        self.base.diffusion(&Point { y, z: &z, ..*s }, out)
    }

    fn driver(&self, s: &Point<'_>) -> Result<f64> {
        self.base.driver(s)
    }

    fn terminal(&self, x: &[f64]) -> Result<f64> {
        self.base.terminal(x)
    }

    fn drift_dep(&self) -> Dependence {
        let b = self.base.coefficients.drift_dep();
        match self.freeze {
            Freeze::Sigma => b,
            Freeze::Full(_) => Dependence {
                t: true,
                x: true,
                y: false,
                z: false,
                u: true,
            },
        }
    }

    fn diffusion_dep(&self) -> Dependence {
        Dependence {
            t: true,
            x: true,
            y: false,
            z: false,
            u: true,
        }
    }

    fn driver_dep(&self) -> Dependence {
        self.base.coefficients.driver_dep()
    }

    fn describe(&self) -> String {
        format!("frozen({}; {})", self.base.coefficients.describe(), self.tag)
    }
}

fn compare_box(cfg: &UniquenessConfig, field: &ValueField) -> (Vec<f64>, Vec<f64>) {
    let sp = &field.grid.space;
    let mid = |a: usize| 0.5 * (sp.lo[a] + sp.hi[a]);
    let sixth = |a: usize| (sp.hi[a] - sp.lo[a]) / 6.0;
    let n = sp.dim();
    let lo = cfg
        .compare_lo
        .clone()
        .unwrap_or_else(|| (0..n).map(|a| mid(a) - sixth(a)).collect());
    let hi = cfg
        .compare_hi
        .clone()
        .unwrap_or_else(|| (0..n).map(|a| mid(a) + sixth(a)).collect());
    (lo, hi)
}

fn dpp_grid(spec: &ProblemSpec, cfg: &UniquenessConfig, candidate: &ValueField) -> Result<SpaceTimeGrid> {
    if cfg.slabs == 0 {
        return Err(Error::Config("verify: slabs must be positive".into()));
    }
    let sp = &candidate.grid.space;
    let space = match cfg.dx {
        None => sp.clone(),
        Some(dx) if dx > 0.0 => {
            let counts = (0..sp.dim())
                .map(|a| (((sp.hi[a] - sp.lo[a]) / dx).round() as usize).max(1) + 1)
                .collect();
            SpatialGrid::new(sp.lo.clone(), sp.hi.clone(), counts)?
        }
        Some(dx) => return Err(Error::Config(format!("verify: dx must be positive, got {dx}"))),
    };
    Ok(SpaceTimeGrid::new(
        TimeGrid::new(candidate.grid.time.t0, spec.horizon, cfg.slabs)?,
        space,
    ))
}

fn lipschitz_gate(candidate: &ValueField, cfg: &UniquenessConfig) -> Result<f64> {
    let lip = estimate_regularity(candidate).lip_x;
    if !(lip <= cfg.lip_bound) {
        return Err(Error::NotLipschitz {
            lip,
            bound: cfg.lip_bound,
        });
    }
    Ok(lip)
}

/// Compares an independently computed `W` with a candidate for a problem
/// whose diffusion does not read `z`, through the auxiliary problem with
/// `σ` frozen along the candidate.
pub fn uniqueness_check_frozen_sigma(
    spec: &ProblemSpec,
    candidate: &ValueField,
    cfg: &UniquenessConfig,
) -> Result<UniquenessOutcome> {
    if spec.coefficients.diffusion_dep().z {
        return Err(Error::Precondition(
            "diffusion depends on z; use the full check".into(),
        ));
    }
    let lip = lipschitz_gate(candidate, cfg)?;
    let grid = dpp_grid(spec, cfg, candidate)?;
    let w = compute_value_dpp(spec, &grid, &cfg.dpp)?;
    let aux = if spec.coefficients.diffusion_dep().y {
        let frozen = FrozenCoefficients::new(spec, Arc::new(candidate.clone()), Freeze::Sigma);
        let aux_spec = spec.clone().with_coefficients(Arc::new(frozen));
        compute_value_dpp(&aux_spec, &grid, &cfg.dpp)?
    } else {
        w.clone()
    };
    let (lo, hi) = compare_box(cfg, candidate);
    let (w_above, w_below) = signed_gaps(&w, candidate, &lo, &hi);
    let (aux_up, aux_down) = signed_gaps(&aux, candidate, &lo, &hi);
    let tol = cfg.tolerance;
    let verdict = if w_above > tol {
        Verdict::Inconsistent
    } else if spec.controls.len() == 1 {
        if w_below <= tol {
            Verdict::Equal
        } else {
            Verdict::Inconsistent
        }
    } else {
        Verdict::Consistent
    };
    Ok(UniquenessOutcome {
        check: "frozen-sigma",
        verdict,
        w_above,
        w_below,
        aux_gap: aux_up.max(aux_down),
        lip_x: lip,
        gradient_factor: None,
        z_gap: None,
        tolerance: tol,
        seed: cfg.dpp.seed,
        w,
        aux,
    })
}

/// The general check: `b, σ` frozen at `(W̃, Ṽ)` with `Ṽ` from the algebra
/// equation driven by the mollified candidate gradient. Only `W ≤ W̃` is
/// judged, so the verdict is never `Equal`.
pub fn uniqueness_check_full(
    spec: &ProblemSpec,
    candidate: &ValueField,
    cfg: &UniquenessConfig,
) -> Result<UniquenessOutcome> {
    let l3 = spec.lipschitz.l3;
    if l3 == 0.0 && !spec.coefficients.diffusion_dep().z {
        // the algebra equation is trivial: nothing to freeze beyond σ
        return uniqueness_check_frozen_sigma(spec, candidate, cfg);
    }
    let lip = lipschitz_gate(candidate, cfg)?;
    let sp = &candidate.grid.space;
    let spacing = (0..sp.dim())
        .map(|a| sp.dx(a))
        .fold(candidate.grid.time.dt(), f64::max);
    let eps = cfg.epsilon.unwrap_or(4.0 * spacing);
    let moll = Arc::new(mollify(candidate, eps)?);
    let factor = moll.sup_grad() * l3;
    if factor >= 1.0 {
        return Err(Error::GradientTooLarge { factor });
    }
    let grid = dpp_grid(spec, cfg, candidate)?;
    let w = compute_value_dpp(spec, &grid, &cfg.dpp)?;
    let frozen = FrozenCoefficients::new(spec, Arc::new(candidate.clone()), Freeze::Full(moll));
    let aux_spec = spec.clone().with_coefficients(Arc::new(frozen.clone()));
    let aux = compute_value_dpp(&aux_spec, &grid, &cfg.dpp)?;
    let (lo, hi) = compare_box(cfg, candidate);
    let (w_above, w_below) = signed_gaps(&w, candidate, &lo, &hi);
    let (aux_up, aux_down) = signed_gaps(&aux, candidate, &lo, &hi);
    let z_gap = z_consistency(&aux_spec, &frozen, &aux, &lo, &hi, cfg)?;
    let verdict = if w_above > cfg.tolerance {
        Verdict::Inconsistent
    } else {
        Verdict::Consistent
    };
    Ok(UniquenessOutcome {
        check: "full",
        verdict,
        w_above,
        w_below,
        aux_gap: aux_up.max(aux_down),
        lip_x: lip,
        gradient_factor: Some(factor),
        z_gap: Some(z_gap),
        tolerance: cfg.tolerance,
        seed: cfg.dpp.seed,
        w,
        aux,
    })
}

/// `E ∫ |Z̄_s − Ṽ(s, X̄_s, u_s)|² ds` for the frozen system started at the
/// centre of the comparison box under the feedback read from `aux`.
fn z_consistency(
    aux_spec: &ProblemSpec,
    frozen: &FrozenCoefficients,
    aux: &ValueField,
    lo: &[f64],
    hi: &[f64],
    cfg: &UniquenessConfig,
) -> Result<f64> {
    let n = aux_spec.dims.n;
    let x0: Vec<f64> = lo.iter().zip(hi).map(|(a, b)| 0.5 * (a + b)).collect();
    let tg = aux.grid.time.clone();
    let ens = PathEnsemble::generate(tg.clone(), cfg.z_paths, aux_spec.dims.d, derive_seed(cfg.dpp.seed, u64::MAX))?;
    let policy = |step: usize, hist: &[f64]| {
        let x = &hist[step * n..(step + 1) * n];
        aux.argmin_at(step, aux.grid.space.nearest(x)).unwrap_or(0)
    };
    let run = solve_fully_coupled(aux_spec, &ens, &x0, &policy, &SpecTerminal(aux_spec), &cfg.dpp.picard)?;
    let dt = tg.dt();
    let per_path: Vec<Result<f64>> = (0..ens.m)
        .map(|p| {
            let mut acc = 0.0;
            for i in 0..tg.steps {
                let x = run.forward.x(p, i);
                let u = aux_spec.controls.point(run.forward.control(p, i));
                let (_, v) = frozen.frozen_yz(tg.t(i), x, u)?;
                let z = run.backward.z(p, i);
                acc += z.iter().zip(&v).map(|(a, b)| (a - b).powi(2)).sum::<f64>() * dt;
            }
            Ok(acc)
        })
        .collect();
    let vals: Vec<f64> = per_path.into_iter().collect::<Result<_>>()?;
    Ok(ordered_sum(vals.len(), |p| vals[p]) / vals.len() as f64)
}
