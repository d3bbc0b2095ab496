//! TOML run configuration.
//!
//! ```toml
//! seed = 7
//!
//! [surface]
//! kind = "double_well"
//! barrier = 1.0
//!
//! [dynamics]
//! beta = 5.0
//! dt = 1e-3
//!
//! [states]
//! kind = "explicit"
//! regions = [{ shape = "interval", lo = -1.45, hi = 0.0 }]
//!
//! [method]
//! kind = "parrep"
//! n_replicas = 8
//! tau_corr = { kind = "fixed", time = 0.5 }
//! dephasing = { kind = "rejection", max_attempts = 10000 }
//!
//! [run]
//! mode = "events"
//! start = [-1.0]
//! n_events = 500
//! ```

use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::accel::{HyperConfig, Method, ParRepConfig, TadConfig};
use crate::dynamics::DynamicsParams;
use crate::potential::{
    make_double_well_1d, triple_well_1d, EntropicChannel, Flat, MullerBrown, Polynomial1d, Quadratic, Surface,
};
use crate::splice::SpliceConfig;
use crate::statemap::{BasinMap, Region, StateDefinition, System};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SurfaceSpec {
    DoubleWell {
        #[serde(default = "one")]
        barrier: f64,
        #[serde(default)]
        tilt: f64,
    },
    TripleWell {
        #[serde(default = "triple_scale")]
        scale: f64,
        #[serde(default = "triple_tilt")]
        tilt: f64,
    },
    /// Σ c_k x^k.
    Polynomial { coefficients: Vec<f64> },
    Flat { dim: usize },
    Quadratic {
        stiffness: Vec<f64>,
        #[serde(default)]
        center: Option<Vec<f64>>,
    },
    MullerBrown {
        #[serde(default = "one")]
        scale: f64,
    },
    EntropicChannel { half_width: f64, stiffness: f64 },
}

fn one() -> f64 {
    1.0
}
fn triple_scale() -> f64 {
    0.9818
}
fn triple_tilt() -> f64 {
    0.1
}

impl SurfaceSpec {
    pub fn build(&self) -> Result<Surface> {
        let bad = |m: &str| Err(Error::Config(format!("surface: {m}")));
        Ok(match self {
            SurfaceSpec::DoubleWell { barrier, tilt } => Arc::new(make_double_well_1d(*barrier, *tilt)),
            SurfaceSpec::TripleWell { scale, tilt } => Arc::new(triple_well_1d(*scale, *tilt)),
            SurfaceSpec::Polynomial { coefficients } => {
                if coefficients.is_empty() {
                    return bad("coefficients must be nonempty");
                }
                Arc::new(Polynomial1d::new(coefficients.clone()))
            }
            SurfaceSpec::Flat { dim } => {
                if *dim == 0 {
                    return bad("dim must be positive");
                }
                Arc::new(Flat { dim: *dim })
            }
            SurfaceSpec::Quadratic { stiffness, center } => {
                let center = center.clone().unwrap_or_else(|| vec![0.0; stiffness.len()]);
                if stiffness.is_empty() || center.len() != stiffness.len() {
                    return bad("stiffness and center must be nonempty and of equal length");
                }
                Arc::new(Quadratic { stiffness: stiffness.clone(), center })
            }
            SurfaceSpec::MullerBrown { scale } => Arc::new(MullerBrown::scaled(*scale)),
            SurfaceSpec::EntropicChannel { half_width, stiffness } => {
                if !(*half_width > 0.0 && *stiffness > 0.0) {
                    return bad("half_width and stiffness must be positive");
                }
                Arc::new(EntropicChannel::new(*half_width, *stiffness))
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StatesSpec {
    /// Basins of attraction found by scanning a box.
    Basins { lo: Vec<f64>, hi: Vec<f64>, grid: Vec<usize> },
    CoreSets { regions: Vec<Region> },
    Explicit { regions: Vec<Region> },
}

impl StatesSpec {
    pub fn build(&self, surface: &Surface) -> Result<StateDefinition> {
        let wrap = |e: Error| Error::Config(format!("states: {e}"));
        match self {
            StatesSpec::Basins { lo, hi, grid } => {
                Ok(StateDefinition::basins(BasinMap::from_scan(surface.as_ref(), lo, hi, grid).map_err(wrap)?))
            }
            StatesSpec::CoreSets { regions } => StateDefinition::core_sets(regions.clone()).map_err(wrap),
            StatesSpec::Explicit { regions } => Ok(StateDefinition::explicit(regions.clone())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MethodSpec {
    Direct,
    Parrep(ParRepConfig),
    Hyper(HyperConfig),
    Tad(TadConfig),
    Splice(SpliceConfig),
}

impl MethodSpec {
    pub fn name(&self) -> &'static str {
        match self {
            MethodSpec::Splice(_) => "splice",
            other => other.accel().expect("non-splice method").name(),
        }
    }

    pub fn accel(&self) -> Option<Method> {
        match self {
            MethodSpec::Direct => Some(Method::Direct),
            MethodSpec::Parrep(c) => Some(Method::Parrep(c.clone())),
            MethodSpec::Hyper(c) => Some(Method::Hyper(c.clone())),
            MethodSpec::Tad(c) => Some(Method::Tad(c.clone())),
            MethodSpec::Splice(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Independent exits from `start`.
    #[default]
    Events,
    /// One state-to-state trajectory up to `horizon`.
    Trajectory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    #[serde(default)]
    pub mode: Mode,
    pub start: Vec<f64>,
    #[serde(default)]
    pub n_events: Option<usize>,
    #[serde(default)]
    pub horizon: Option<f64>,
    #[serde(default = "default_max_steps")]
    pub max_steps: u64,
}

fn default_max_steps() -> u64 {
    1 << 34
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub workers: Option<usize>,
    pub surface: SurfaceSpec,
    pub dynamics: DynamicsParams,
    pub states: StatesSpec,
    pub method: MethodSpec,
    pub run: RunSpec,
}

impl RunConfig {
    /// Parse and validate. Parse errors carry the toml line/column and key.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let surface = self.surface.build()?;
        self.dynamics.validate().map_err(|e| Error::Config(format!("dynamics: {e}")))?;
        if self.run.start.len() != surface.dim() {
            return Err(Error::Config(format!(
                "run.start: expected {} coordinates, got {}",
                surface.dim(),
                self.run.start.len()
            )));
        }
        match self.run.mode {
            Mode::Events => match self.run.n_events {
                Some(n) if n > 0 => {}
                _ => return Err(Error::Config("run.n_events: required and positive in events mode".into())),
            },
            Mode::Trajectory => match self.run.horizon {
                Some(h) if h > 0.0 && h.is_finite() => {}
                _ => return Err(Error::Config("run.horizon: required and positive in trajectory mode".into())),
            },
        }
        if self.workers == Some(0) {
            return Err(Error::Config("workers: must be positive".into()));
        }
        match &self.method {
            MethodSpec::Parrep(c) if c.n_replicas == 0 => {
                return Err(Error::Config("method.n_replicas: must be positive".into()))
            }
            MethodSpec::Tad(c) => c.validate().map_err(|e| Error::Config(format!("method: {e}")))?,
            MethodSpec::Splice(c) => {
                if c.producers == 0 {
                    return Err(Error::Config("method.producers: must be positive".into()));
                }
                if self.run.mode != Mode::Trajectory {
                    return Err(Error::Config("method: splice needs run.mode = \"trajectory\"".into()));
                }
            }
            _ => {}
        }
        Ok(())
    }

    pub fn system(&self) -> Result<System> {
        let surface = self.surface.build()?;
        let states = self.states.build(&surface)?;
        System::new(surface, self.dynamics.clone(), states)
    }
}
