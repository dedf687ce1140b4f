//! Problem definitions: coefficients, constants and the control lattice.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::expr::{Dims, Expression, Point};

/// Declared Lipschitz constants of the coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LipschitzConstants {
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
}

impl LipschitzConstants {
    pub fn c1(&self) -> f64 {
        self.l2.max(self.l3)
    }
}

/// Finite control lattice standing in for the compact control set.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSet {
    k: usize,
    points: Vec<Vec<f64>>,
}

impl ControlSet {
    pub fn new(points: Vec<Vec<f64>>) -> Result<Self> {
        let k = match points.first() {
            Some(p) => p.len(),
            None => return Err(Error::InvalidProblem("control set is empty".into())),
        };
        if k == 0 {
            return Err(Error::InvalidProblem("control points have dimension 0".into()));
        }
        for (i, p) in points.iter().enumerate() {
            if p.len() != k {
                return Err(Error::InvalidProblem(format!(
                    "control point {i} has dimension {}, expected {k}",
                    p.len()
                )));
            }
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidProblem(format!("control point {i} is not finite")));
            }
        }
        Ok(Self { k, points })
    }

    /// `count` equally spaced scalar controls on `[lo, hi]`.
    pub fn uniform(lo: f64, hi: f64, count: usize) -> Result<Self> {
        if count == 0 || !(lo <= hi) {
            return Err(Error::InvalidProblem(format!(
                "uniform control range [{lo}, {hi}] with {count} points"
            )));
        }
        if count == 1 {
            return Self::new(vec![vec![lo]]);
        }
        let h = (hi - lo) / (count - 1) as f64;
        Self::new((0..count).map(|i| vec![lo + h * i as f64]).collect())
    }

    /// The single control `0 ∈ ℝᵏ`, for problems without control dependence.
    pub fn trivial(k: usize) -> Self {
        Self {
            k,
            points: vec![vec![0.0; k]],
        }
    }

    pub fn dim(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i]
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    /// Largest nearest-neighbour gap. Zero for a single point.
    pub fn fineness(&self) -> f64 {
        if self.points.len() < 2 {
            return 0.0;
        }
        let mut worst = 0.0f64;
        for (i, p) in self.points.iter().enumerate() {
            let mut best = f64::INFINITY;
            for (j, q) in self.points.iter().enumerate() {
                if i != j {
                    best = best.min(dist(p, q));
                }
            }
            worst = worst.max(best);
        }
        worst
    }

    /// Whether every point of `self` also belongs to `other`.
    pub fn is_subset_of(&self, other: &ControlSet) -> bool {
        self.points.iter().all(|p| other.points.contains(p))
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Which arguments a coefficient actually reads.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Dependence {
    pub t: bool,
    pub x: bool,
    pub y: bool,
    pub z: bool,
    pub u: bool,
}

impl Dependence {
    pub const ALL: Dependence = Dependence {
        t: true,
        x: true,
        y: true,
        z: true,
        u: true,
    };

    pub fn union(self, o: Dependence) -> Dependence {
        Dependence {
            t: self.t || o.t,
            x: self.x || o.x,
            y: self.y || o.y,
            z: self.z || o.z,
            u: self.u || o.u,
        }
    }

    fn of(exprs: &[Expression]) -> Dependence {
        let mut d = Dependence::default();
        for e in exprs {
            d.t |= e.uses_t();
            d.x |= e.uses_x();
            d.y |= e.uses_y();
            d.z |= e.uses_z();
            d.u |= e.uses_u();
        }
        d
    }
}

/// Coefficients `b`, `σ`, `g`, `φ` of a controlled FBSDE.
///
/// `diffusion` writes the `n × d` matrix row-major. Implementations must be
/// pure: the same point always gives the same output.
pub trait Coefficients: Send + Sync + fmt::Debug {
    fn dims(&self) -> Dims;
    fn drift(&self, s: &Point<'_>, out: &mut [f64]) -> Result<()>;
    fn diffusion(&self, s: &Point<'_>, out: &mut [f64]) -> Result<()>;
    fn driver(&self, s: &Point<'_>) -> Result<f64>;
    fn terminal(&self, x: &[f64]) -> Result<f64>;

    fn drift_dep(&self) -> Dependence {
        Dependence::ALL
    }
    fn diffusion_dep(&self) -> Dependence {
        Dependence::ALL
    }
    fn driver_dep(&self) -> Dependence {
        Dependence::ALL
    }

    /// Canonical text used for hashing.
    fn describe(&self) -> String;
}

/// Coefficients given as expression strings.
#[derive(Debug, Clone)]
pub struct ExprCoefficients {
    dims: Dims,
    b: Vec<Expression>,
    sigma: Vec<Expression>,
    g: Expression,
    phi: Expression,
    deps: [Dependence; 3],
}

impl ExprCoefficients {
    /// `sigma` is row-major `n × d`.
    pub fn parse(dims: Dims, b: &[&str], sigma: &[&str], g: &str, phi: &str) -> Result<Self> {
        if dims.n == 0 || dims.d == 0 || dims.k == 0 {
            return Err(Error::InvalidProblem(format!(
                "dimensions must be at least 1, got {dims:?}"
            )));
        }
        if b.len() != dims.n {
            return Err(Error::InvalidProblem(format!(
                "b has {} entries, expected n = {}",
                b.len(),
                dims.n
            )));
        }
        if sigma.len() != dims.n * dims.d {
            return Err(Error::InvalidProblem(format!(
                "sigma has {} entries, expected n*d = {}",
                sigma.len(),
                dims.n * dims.d
            )));
        }
        let parse = |s: &&str| Expression::parse(s, dims);
        let b = b.iter().map(parse).collect::<std::result::Result<Vec<_>, _>>()?;
        let sigma = sigma
            .iter()
            .map(parse)
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let g = Expression::parse(g, dims)?;
        let phi = Expression::parse(phi, dims)?;
        if phi.uses_t() || phi.uses_y() || phi.uses_z() || phi.uses_u() {
            return Err(Error::InvalidProblem(format!(
                "phi may only depend on x, got `{}`",
                phi.source()
            )));
        }
        let deps = [
            Dependence::of(&b),
            Dependence::of(&sigma),
            Dependence::of(std::slice::from_ref(&g)),
        ];
        Ok(Self {
            dims,
            b,
            sigma,
            g,
            phi,
            deps,
        })
    }
}

impl Coefficients for ExprCoefficients {
    fn dims(&self) -> Dims {
        self.dims
    }

    fn drift(&self, s: &Point<'_>, out: &mut [f64]) -> Result<()> {
        for (o, e) in out.iter_mut().zip(&self.b) {
            *o = e.evaluate(s)?;
        }
        Ok(())
    }

    fn diffusion(&self, s: &Point<'_>, out: &mut [f64]) -> Result<()> {
        for (o, e) in out.iter_mut().zip(&self.sigma) {
            *o = e.evaluate(s)?;
        }
        Ok(())
    }

    fn driver(&self, s: &Point<'_>) -> Result<f64> {
        Ok(self.g.evaluate(s)?)
    }

    fn terminal(&self, x: &[f64]) -> Result<f64> {
        let p = Point {
            t: 0.0,
            x,
            y: 0.0,
            z: &[],
            u: &[],
        };
        Ok(self.phi.evaluate(&p)?)
    }

    fn drift_dep(&self) -> Dependence {
        self.deps[0]
    }
    fn diffusion_dep(&self) -> Dependence {
        self.deps[1]
    }
    fn driver_dep(&self) -> Dependence {
        self.deps[2]
    }

    fn describe(&self) -> String {
        let list = |v: &[Expression]| {
            v.iter()
                .map(|e| e.to_string())
                .collect::<Vec<_>>()
                .join(";")
        };
        format!(
            "b=[{}] sigma=[{}] g={} phi={}",
            list(&self.b),
            list(&self.sigma),
            self.g,
            self.phi
        )
    }
}

/// Increasing map `L ↦ C₂(L)`; the constants of the FBSDE a-priori estimate
/// are not available in closed form, so they are configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConstantModel {
    Constant { value: f64 },
    /// `a + b·L`
    Affine { a: f64, b: f64 },
    /// `a·exp(rate·L)`
    Exponential { a: f64, rate: f64 },
    /// Piecewise linear through `(L, C)` knots, flat outside.
    Table { knots: Vec<(f64, f64)> },
}

impl ConstantModel {
    pub fn eval(&self, l: f64) -> f64 {
        match self {
            ConstantModel::Constant { value } => *value,
            ConstantModel::Affine { a, b } => a + b * l,
            ConstantModel::Exponential { a, rate } => a * (rate * l).exp(),
            ConstantModel::Table { knots } => {
                if knots.is_empty() {
                    return f64::NAN;
                }
                if l <= knots[0].0 {
                    return knots[0].1;
                }
                for w in knots.windows(2) {
                    let ((l0, c0), (l1, c1)) = (w[0], w[1]);
                    if l <= l1 {
                        if l1 == l0 {
                            return c1;
                        }
                        return c0 + (c1 - c0) * (l - l0) / (l1 - l0);
                    }
                }
                knots[knots.len() - 1].1
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Constants {
    pub c2: ConstantModel,
    pub c4: f64,
    /// Lipschitz certificate of the value function; derived when absent.
    pub l_w: Option<f64>,
    /// True when C₂ and C₄ are the unit placeholders rather than user data.
    pub nominal: bool,
}

impl Default for Constants {
    fn default() -> Self {
        Self {
            c2: ConstantModel::Constant { value: 1.0 },
            c4: 1.0,
            l_w: None,
            nominal: true,
        }
    }
}

/// A complete problem instance.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub name: String,
    pub dims: Dims,
    pub horizon: f64,
    pub lipschitz: LipschitzConstants,
    pub controls: ControlSet,
    pub coefficients: Arc<dyn Coefficients>,
    pub constants: Constants,
    /// Run solvers even when the smallness gate fails.
    pub override_gate: bool,
}

impl ProblemSpec {
    pub fn new(
        name: impl Into<String>,
        horizon: f64,
        lipschitz: LipschitzConstants,
        controls: ControlSet,
        coefficients: Arc<dyn Coefficients>,
    ) -> Result<Self> {
        let dims = coefficients.dims();
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::InvalidProblem(format!("horizon must be positive, got {horizon}")));
        }
        let l = [lipschitz.l1, lipschitz.l2, lipschitz.l3];
        if l.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidProblem(format!(
                "Lipschitz constants must be finite and nonnegative, got {lipschitz:?}"
            )));
        }
        if controls.dim() != dims.k {
            return Err(Error::InvalidProblem(format!(
                "control points have dimension {}, expected k = {}",
                controls.dim(),
                dims.k
            )));
        }
        Ok(Self {
            name: name.into(),
            dims,
            horizon,
            lipschitz,
            controls,
            coefficients,
            constants: Constants::default(),
            override_gate: false,
        })
    }

    pub fn with_constants(mut self, constants: Constants) -> Self {
        self.constants = constants;
        self
    }

    pub fn with_override(mut self, on: bool) -> Self {
        self.override_gate = on;
        self
    }

    pub fn with_controls(mut self, controls: ControlSet) -> Self {
        self.controls = controls;
        self
    }

    pub fn with_coefficients(mut self, c: Arc<dyn Coefficients>) -> Self {
        self.coefficients = c;
        self
    }

    /// Forward coefficients free of `(y, z)`: the system is decoupled.
    pub fn is_decoupled(&self) -> bool {
        let b = self.coefficients.drift_dep();
        let s = self.coefficients.diffusion_dep();
        !(b.y || b.z || s.y || s.z)
    }

    /// SHA-256 over everything that determines the solution.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.coefficients.describe().as_bytes());
        h.update(format!(
            "|dims={:?}|T={:?}|L={:?}|U={:?}",
            self.dims,
            self.horizon,
            self.lipschitz,
            self.controls.points()
        ));
        hex::encode(h.finalize())
    }

    pub fn drift(&self, s: &Point<'_>, out: &mut [f64]) -> Result<()> {
        self.coefficients.drift(s, out)
    }

    pub fn diffusion(&self, s: &Point<'_>, out: &mut [f64]) -> Result<()> {
        self.coefficients.diffusion(s, out)
    }

    pub fn driver(&self, s: &Point<'_>) -> Result<f64> {
        self.coefficients.driver(s)
    }

    pub fn terminal(&self, x: &[f64]) -> Result<f64> {
        self.coefficients.terminal(x)
    }
}

/// Built-in benchmark problems.
pub mod registry {
    use super::*;

    pub const NAMES: [&str; 4] = ["heat", "burgers", "drift_control", "sigma_z"];

    pub fn get(name: &str) -> Result<ProblemSpec> {
        match name {
            "heat" => heat(),
            "burgers" => burgers(),
            "drift_control" => drift_control(),
            "sigma_z" => sigma_z(),
            other => Err(Error::InvalidProblem(format!(
                "unknown benchmark `{other}`, known: {}",
                NAMES.join(", ")
            ))),
        }
    }

    fn scalar(b: &str, sigma: &str, g: &str, phi: &str) -> Result<Arc<dyn Coefficients>> {
        Ok(Arc::new(ExprCoefficients::parse(
            Dims::new(1, 1, 1),
            &[b],
            &[sigma],
            g,
            phi,
        )?))
    }

    /// `W = x² + (T − t)`. L1 covers `|φ'| = 2|x|` on `|x| ≤ 3`.
    pub fn heat() -> Result<ProblemSpec> {
        ProblemSpec::new(
            "heat",
            1.0,
            LipschitzConstants { l1: 6.0, l2: 0.0, l3: 0.0 },
            ControlSet::trivial(1),
            scalar("0", "1", "0", "x1^2")?,
        )
    }

    /// Viscous Burgers through the decoupling field; fails the nominal gate.
    pub fn burgers() -> Result<ProblemSpec> {
        Ok(ProblemSpec::new(
            "burgers",
            0.5,
            LipschitzConstants { l1: 1.0, l2: 1.0, l3: 0.0 },
            ControlSet::trivial(1),
            scalar("y", "1", "0", "-tanh(x1)")?,
        )?
        .with_override(true))
    }

    pub fn drift_control() -> Result<ProblemSpec> {
        ProblemSpec::new(
            "drift_control",
            1.0,
            LipschitzConstants { l1: 6.0, l2: 0.0, l3: 0.0 },
            ControlSet::uniform(-1.0, 1.0, 3)?,
            scalar("u1", "1", "0", "x1^2")?,
        )
    }

    /// Diffusion depending on `z`, with a weak drift control.
    pub fn sigma_z() -> Result<ProblemSpec> {
        Ok(ProblemSpec::new(
            "sigma_z",
            0.5,
            LipschitzConstants { l1: 1.0, l2: 0.0, l3: 0.5 },
            ControlSet::uniform(-1.0, 1.0, 3)?,
            scalar("0.25*u1", "1+0.5*z1", "0", "tanh(x1)")?,
        )?
        .with_override(true))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn control_set_basics() {
        let u = ControlSet::uniform(-1.0, 1.0, 3).unwrap();
        assert_eq!(u.points(), &[vec![-1.0], vec![0.0], vec![1.0]]);
        assert_eq!(u.fineness(), 1.0);
        assert!(ControlSet::new(vec![]).is_err());
        assert!(ControlSet::new(vec![vec![f64::NAN]]).is_err());
        assert!(ControlSet::trivial(1).is_subset_of(&u));
    }

    #[test]
    fn dependence_flags() {
        let c = ExprCoefficients::parse(Dims::new(1, 1, 1), &["y"], &["1+0.5*z1"], "0", "x1").unwrap();
        assert!(c.drift_dep().y && !c.drift_dep().z);
        assert!(c.diffusion_dep().z);
        assert!(!c.driver_dep().x);
    }

    #[test]
    fn phi_must_be_state_only() {
        let r = ExprCoefficients::parse(Dims::new(1, 1, 1), &["0"], &["1"], "0", "x1 + y");
        assert!(matches!(r, Err(Error::InvalidProblem(_))));
    }

    #[test]
    fn registry_loads() {
        for name in registry::NAMES {
            let s = registry::get(name).unwrap();
            assert_eq!(s.name, name);
        }
        assert!(registry::heat().unwrap().is_decoupled());
        assert!(!registry::burgers().unwrap().is_decoupled());
        assert_ne!(
            registry::heat().unwrap().hash(),
            registry::drift_control().unwrap().hash()
        );
    }

    #[test]
    fn table_model_interpolates() {
        let m = ConstantModel::Table {
            knots: vec![(0.0, 1.0), (2.0, 3.0)],
        };
        assert_eq!(m.eval(-1.0), 1.0);
        assert_eq!(m.eval(1.0), 2.0);
        assert_eq!(m.eval(5.0), 3.0);
    }
}
