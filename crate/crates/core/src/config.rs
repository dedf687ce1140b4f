//! JSON run configuration (schema 1).

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::assumptions::{MonotonicityConfig, ProbeBox};
use crate::error::{Error, Result};
use crate::expr::Dims;
use crate::fbsde::PicardOptions;
use crate::grid::{SpaceTimeGrid, SpatialGrid, TimeGrid};
use crate::hjb::{suggest_steps, HjbOptions};
use crate::problem::{registry, Constants, ControlSet, ExprCoefficients, LipschitzConstants, ProblemSpec};
use crate::value::{BoundaryMode, DppOptions};
use crate::verify::{ItoConfig, PipelineConfig, UniquenessConfig};

pub const SCHEMA: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProblemConfig {
    Benchmark {
        benchmark: String,
    },
    Custom {
        name: String,
        dims: Dims,
        horizon: f64,
        b: Vec<String>,
        /// Row-major `n × d`.
        sigma: Vec<String>,
        g: String,
        phi: String,
        lipschitz: LipschitzConstants,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniformRange {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ControlsConfig {
    Points { points: Vec<Vec<f64>> },
    Uniform { uniform: UniformRange },
}

/// Spatial box `[lo, hi]` (or `[-half, half]` per axis) with spacing `dx`
/// or explicit node counts; `steps` defaults to a stable explicit step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub t0: f64,
    pub half: f64,
    pub lo: Option<Vec<f64>>,
    pub hi: Option<Vec<f64>>,
    pub dx: f64,
    pub counts: Option<Vec<usize>>,
    pub steps: Option<usize>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            t0: 0.0,
            half: 3.0,
            lo: None,
            hi: None,
            dx: 0.05,
            counts: None,
            steps: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DppConfig {
    pub paths: usize,
    pub slabs: usize,
    pub substeps: usize,
    pub boundary: BoundaryMode,
    /// Spatial spacing of the DPP grid; defaults to the main grid's.
    pub dx: Option<f64>,
    pub picard: PicardOptions,
}

impl Default for DppConfig {
    fn default() -> Self {
        Self {
            paths: 10_000,
            slabs: 20,
            substeps: 1,
            boundary: BoundaryMode::Extrapolate,
            dx: None,
            picard: PicardOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FbsdeConfig {
    pub paths: usize,
    pub steps: usize,
    /// Start point; the origin when absent.
    pub x0: Option<Vec<f64>>,
    /// Constant control index.
    pub control: usize,
    pub picard: PicardOptions,
    /// Paths written to the trajectory CSV.
    pub trajectories: usize,
}

impl Default for FbsdeConfig {
    fn default() -> Self {
        Self {
            paths: 10_000,
            steps: 50,
            x0: None,
            control: 0,
            picard: PicardOptions::default(),
            trajectories: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckConfig {
    pub probes: usize,
    pub probe_box: ProbeBox,
    pub monotonicity: Option<MonotonicityConfig>,
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self {
            probes: 10_000,
            probe_box: ProbeBox::default(),
            monotonicity: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VerifyKind {
    PrUm,
    FrozenSigma,
    Full,
    Ito,
}

/// A value field on disk in the CSV + JSON format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateFiles {
    pub csv: PathBuf,
    pub json: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub check: VerifyKind,
    /// External candidate; the HJB solution on the main grid when absent.
    pub candidate: Option<CandidateFiles>,
    /// Constant added to the candidate before checking.
    pub shift: f64,
    pub t: f64,
    pub x: Option<Vec<f64>>,
    /// Slab counts for the pr-um pipeline.
    pub slabs: Vec<usize>,
    pub pipeline: PipelineConfig,
    pub uniqueness: UniquenessConfig,
    pub ito: ItoConfig,
    /// Mollifier radius for the Itô residual; four grid spacings when absent.
    pub epsilon: Option<f64>,
    /// Constant control index followed in the Itô residual.
    pub control: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            check: VerifyKind::PrUm,
            candidate: None,
            shift: 0.0,
            t: 0.0,
            x: None,
            slabs: vec![2, 4, 8],
            pipeline: PipelineConfig::default(),
            uniqueness: UniquenessConfig::default(),
            ito: ItoConfig::default(),
            epsilon: None,
            control: 0,
        }
    }
}

/// One run. Every seed used anywhere is derived from `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub schema: u32,
    pub problem: ProblemConfig,
    #[serde(default)]
    pub controls: Option<ControlsConfig>,
    #[serde(default)]
    pub constants: Option<Constants>,
    #[serde(default)]
    pub override_gate: Option<bool>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub hjb: HjbOptions,
    #[serde(default)]
    pub dpp: DppConfig,
    #[serde(default)]
    pub fbsde: FbsdeConfig,
    #[serde(default)]
    pub check: CheckConfig,
    #[serde(default)]
    pub verify: VerifyConfig,
}

impl Config {
    pub fn for_benchmark(name: &str) -> Self {
        Self {
            schema: SCHEMA,
            problem: ProblemConfig::Benchmark {
                benchmark: name.into(),
            },
            controls: None,
            constants: None,
            override_gate: None,
            seed: 0,
            grid: GridConfig::default(),
            hjb: HjbOptions::default(),
            dpp: DppConfig::default(),
            fbsde: FbsdeConfig::default(),
            check: CheckConfig::default(),
            verify: VerifyConfig::default(),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Config = serde_json::from_str(text)?;
        if cfg.schema != SCHEMA {
            return Err(Error::Config(format!(
                "unsupported schema {}, expected {SCHEMA}",
                cfg.schema
            )));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn problem(&self) -> Result<ProblemSpec> {
        let mut spec = match &self.problem {
            ProblemConfig::Benchmark { benchmark } => registry::get(benchmark)?,
            ProblemConfig::Custom {
                name,
                dims,
                horizon,
                b,
                sigma,
                g,
                phi,
                lipschitz,
            } => {
                let b: Vec<&str> = b.iter().map(String::as_str).collect();
                let s: Vec<&str> = sigma.iter().map(String::as_str).collect();
                let c = ExprCoefficients::parse(*dims, &b, &s, g, phi)?;
                let controls = ControlSet::trivial(dims.k);
                ProblemSpec::new(name.clone(), *horizon, *lipschitz, controls, Arc::new(c))?
            }
        };
        if let Some(c) = &self.controls {
            let set = match c {
                ControlsConfig::Points { points } => ControlSet::new(points.clone())?,
                ControlsConfig::Uniform { uniform } => ControlSet::uniform(uniform.lo, uniform.hi, uniform.count)?,
            };
            if set.dim() != spec.dims.k {
                return Err(Error::Config(format!(
                    "control points have dimension {}, problem has k = {}",
                    set.dim(),
                    spec.dims.k
                )));
            }
            spec = spec.with_controls(set);
        }
        if let Some(c) = &self.constants {
            spec = spec.with_constants(c.clone());
        }
        if let Some(o) = self.override_gate {
            spec = spec.with_override(o);
        }
        Ok(spec)
    }

    fn space_with(&self, spec: &ProblemSpec, dx: f64) -> Result<SpatialGrid> {
        let n = spec.dims.n;
        let g = &self.grid;
        let lo = g.lo.clone().unwrap_or_else(|| vec![-g.half; n]);
        let hi = g.hi.clone().unwrap_or_else(|| vec![g.half; n]);
        if lo.len() != n || hi.len() != n {
            return Err(Error::Config(format!("grid bounds must have {n} entries")));
        }
        let counts = match &g.counts {
            Some(c) if dx == g.dx => c.clone(),
            _ => {
                if !(dx > 0.0) {
                    return Err(Error::Config(format!("grid spacing must be positive, got {dx}")));
                }
                lo.iter()
                    .zip(&hi)
                    .map(|(a, b)| ((b - a) / dx).round() as usize + 1)
                    .collect()
            }
        };
        SpatialGrid::new(lo, hi, counts).map_err(|e| Error::Config(e.to_string()))
    }

    /// Grid of the HJB solver.
    pub fn hjb_grid(&self, spec: &ProblemSpec) -> Result<SpaceTimeGrid> {
        let space = self.space_with(spec, self.grid.dx)?;
        let steps = match self.grid.steps {
            Some(s) => s,
            None => suggest_steps(spec, &space, self.grid.t0)?,
        };
        Ok(SpaceTimeGrid::new(TimeGrid::new(self.grid.t0, spec.horizon, steps)?, space))
    }

    /// Grid of the dynamic-programming solver: one slab per time step.
    pub fn dpp_grid(&self, spec: &ProblemSpec) -> Result<SpaceTimeGrid> {
        let space = self.space_with(spec, self.dpp.dx.unwrap_or(self.grid.dx))?;
        Ok(SpaceTimeGrid::new(
            TimeGrid::new(self.grid.t0, spec.horizon, self.dpp.slabs)?,
            space,
        ))
    }

    pub fn dpp_options(&self) -> DppOptions {
        DppOptions {
            paths: self.dpp.paths,
            seed: self.seed,
            substeps: self.dpp.substeps,
            picard: self.dpp.picard,
            boundary: self.dpp.boundary,
        }
    }

    pub fn pipeline_options(&self) -> PipelineConfig {
        PipelineConfig {
            seed: self.seed,
            ..self.verify.pipeline
        }
    }

    pub fn uniqueness_options(&self) -> UniquenessConfig {
        let mut u = self.verify.uniqueness.clone();
        u.dpp.seed = self.seed;
        u
    }

    pub fn ito_options(&self) -> ItoConfig {
        ItoConfig {
            seed: self.seed,
            ..self.verify.ito
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn benchmark_config_with_defaults() {
        let c = Config::parse(r#"{"schema": 1, "problem": {"benchmark": "heat"}}"#).unwrap();
        let spec = c.problem().unwrap();
        assert_eq!(spec.name, "heat");
        let g = c.hjb_grid(&spec).unwrap();
        assert_eq!(g.space.counts, vec![121]);
        assert!(g.time.dt() <= 0.05 * 0.05);
        assert_eq!(c.dpp_options().paths, 10_000);
        assert_eq!(c.verify.uniqueness.tolerance, 5e-2);
    }

    #[test]
    fn custom_problem_and_controls() {
        let text = r#"{
            "schema": 1,
            "problem": {"name": "c", "dims": {"n": 1, "d": 1, "k": 1}, "horizon": 0.5,
                        "b": ["u1"], "sigma": ["1"], "g": "0", "phi": "x1^2",
                        "lipschitz": {"l1": 1, "l2": 0, "l3": 0}},
            "controls": {"uniform": {"lo": -1, "hi": 1, "count": 5}},
            "constants": {"c2": {"kind": "affine", "a": 1, "b": 0.5}, "c4": 2, "l_w": null, "nominal": false},
            "grid": {"half": 2, "dx": 0.1, "steps": 400},
            "seed": 9
        }"#;
        let c = Config::parse(text).unwrap();
        let spec = c.problem().unwrap();
        assert_eq!(spec.controls.len(), 5);
        assert_eq!(spec.constants.c4, 2.0);
        assert_eq!(c.hjb_grid(&spec).unwrap().time.steps, 400);
        assert_eq!(c.uniqueness_options().dpp.seed, 9);
    }

    #[test]
    fn bad_configs_are_config_errors() {
        for text in [
            r#"{"schema": 2, "problem": {"benchmark": "heat"}}"#,
            r#"{"schema": 1, "problem": {"benchmark": "heat"}, "typo": 1}"#,
            r#"{"schema": 1"#,
        ] {
            assert_eq!(Config::parse(text).unwrap_err().exit_code(), 4, "{text}");
        }
        let c = Config::parse(r#"{"schema": 1, "problem": {"benchmark": "nope"}}"#).unwrap();
        assert_eq!(c.problem().unwrap_err().exit_code(), 4);
        let c = Config::parse(r#"{"schema": 1, "problem": {"name": "c", "dims": {"n": 1, "d": 1, "k": 1}, "horizon": 1,
            "b": ["x1 +"], "sigma": ["1"], "g": "0", "phi": "0", "lipschitz": {"l1": 1, "l2": 0, "l3": 0}}}"#)
        .unwrap();
        assert_eq!(c.problem().unwrap_err().exit_code(), 4);
    }
}
