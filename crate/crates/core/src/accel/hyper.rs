use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::AcceleratedExit;
use crate::dynamics;
use crate::potential::{BiasPotential, BiasedSurface, EnergyBump, Potential, RadialBump, Surface};
use crate::rng::StreamId;
use crate::statemap::{ExitEvent, StateLabel, System};
use crate::{Error, Result};

/// Largest |δV| tolerated at a recorded exit point.
pub const BIAS_EXIT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BiasSpec {
    Zero,
    EnergyBump { height: f64, e_lo: f64, e_hi: f64 },
    RadialBump { center: Vec<f64>, plateau: f64, taper: f64, height: f64 },
}

struct ZeroBias {
    dim: usize,
}

impl BiasPotential for ZeroBias {
    fn value(&self, _: &[f64]) -> f64 {
        0.0
    }
    fn gradient(&self, _: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|g| *g = 0.0);
    }
    fn hessian(&self, _: &[f64]) -> DMatrix<f64> {
        DMatrix::zeros(self.dim, self.dim)
    }
}

impl BiasSpec {
    pub fn build(&self, base: &Surface) -> Result<Arc<dyn BiasPotential>> {
        Ok(match self {
            BiasSpec::Zero => Arc::new(ZeroBias { dim: base.dim() }),
            BiasSpec::EnergyBump { height, e_lo, e_hi } => Arc::new(EnergyBump::new(base.clone(), *height, *e_lo, *e_hi)?),
            BiasSpec::RadialBump { center, plateau, taper, height } => {
                if center.len() != base.dim() || !(*taper > 0.0) || !(*plateau >= 0.0) {
                    return Err(Error::InvalidInput("radial bump needs matching dimension, taper > 0".into()));
                }
                Arc::new(RadialBump { center: center.clone(), plateau: *plateau, taper: *taper, height: *height })
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperConfig {
    pub bias: BiasSpec,
    /// Decorrelation time on the unbiased surface.
    pub tau_corr: f64,
    /// Dephase on V + δV before the biased run (pure overhead).
    #[serde(default = "default_true")]
    pub equilibrate: bool,
    /// Duration of that preparation run.
    #[serde(default)]
    pub prep_time: f64,
    #[serde(default = "default_attempts")]
    pub max_prep_attempts: u64,
}

fn default_true() -> bool {
    true
}

fn default_attempts() -> u64 {
    10_000
}

/// Hyperdynamics exit. Streams: decorrelation = `stream.child(0)`,
/// preparation = `stream.child(1).child(attempt)`, biased run = `stream.child(2)`.
pub fn hyper_exit(
    sys: &System,
    state: StateLabel,
    entry: &[f64],
    cfg: &HyperConfig,
    stream: StreamId,
    max_steps: u64,
) -> Result<AcceleratedExit> {
    let dt = sys.params.dt;
    let bias = cfg.bias.build(&sys.surface)?;
    let biased = BiasedSurface { base: sys.surface.clone(), bias: bias.clone() };

    let mut w = sys.walker(entry.to_vec(), stream.child(0));
    let decor = sys.params.steps_for(cfg.tau_corr);
    for s in 1..=decor {
        sys.step(&mut w)?;
        if !sys.contains(state, &w.position)? {
            let (to, region_label) = sys.exit_record(state, &w.position)?;
            return Ok(AcceleratedExit {
                event: ExitEvent {
                    from: state,
                    to,
                    exit_time: s as f64 * dt,
                    exit_point: w.position.clone(),
                    region_label,
                    first_exit_step: s,
                },
                residence_steps: s,
                wall_steps: s,
                parallel_steps: 0,
                factor: 1.0,
            });
        }
    }

    let mut prep_steps = 0;
    let mut start = w.position.clone();
    if cfg.equilibrate {
        let steps = sys.params.steps_for(cfg.prep_time);
        let mut accepted = false;
        for attempt in 0..cfg.max_prep_attempts {
            let mut p = sys.walker(w.position.clone(), stream.child(1).child(attempt));
            let mut ok = true;
            for _ in 0..steps {
                dynamics::step(&mut p, &biased, &sys.params)?;
                prep_steps += 1;
                if !sys.contains(state, &p.position)? {
                    ok = false;
                    break;
                }
            }
            if ok {
                start = p.position;
                accepted = true;
                break;
            }
        }
        if !accepted {
            return Err(Error::DephasingBudget { attempts: cfg.max_prep_attempts, accepted: 0 });
        }
    }

    let beta = sys.params.beta;
    let mut b = sys.walker(start, stream.child(2));
    let mut boost_sum = 0.0;
    for m in 1..=max_steps {
        boost_sum += (beta * bias.value(&b.position)).exp();
        dynamics::step(&mut b, &biased, &sys.params)?;
        if !sys.contains(state, &b.position)? {
            let dv = bias.value(&b.position);
            if dv.abs() > BIAS_EXIT_TOL {
                return Err(Error::InvalidBias { value: dv, position: b.position.clone() });
            }
            let (to, region_label) = sys.exit_record(state, &b.position)?;
            let hyper_time = dt * boost_sum;
            let exit_time = decor as f64 * dt + hyper_time;
            return Ok(AcceleratedExit {
                event: ExitEvent {
                    from: state,
                    to,
                    exit_time,
                    exit_point: b.position.clone(),
                    region_label,
                    first_exit_step: decor + m,
                },
                residence_steps: decor + m,
                wall_steps: decor + prep_steps + m,
                parallel_steps: m,
                factor: boost_sum / m as f64,
            });
        }
    }
    Err(Error::NoExitWithinBudget { state, steps: max_steps })
}
