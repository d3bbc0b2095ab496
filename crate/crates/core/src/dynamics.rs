//! Time integrators: Euler–Maruyama for overdamped Langevin and BAOAB for
//! Langevin, each walker drawing Gaussian increments from its own stream.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::potential::Potential;
use crate::rng::StreamId;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsParams {
    /// Inverse temperature β = 1/k_BT.
    pub beta: f64,
    pub dt: f64,
    /// Friction γ; only read by the Langevin integrator.
    pub gamma: Option<f64>,
    /// Diagonal of the mass tensor M (Langevin only, defaults to identity).
    pub mass: Option<Vec<f64>>,
}

impl DynamicsParams {
    pub fn overdamped(beta: f64, dt: f64) -> Self {
        Self { beta, dt, gamma: None, mass: None }
    }

    pub fn langevin(beta: f64, dt: f64, gamma: f64) -> Self {
        Self { beta, dt, gamma: Some(gamma), mass: None }
    }

    pub fn with_beta(&self, beta: f64) -> Self {
        Self { beta, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0) {
            return Err(Error::InvalidInput(format!("beta must be > 0 (got {})", self.beta)));
        }
        if !(self.dt > 0.0) {
            return Err(Error::InvalidInput(format!("dt must be > 0 (got {})", self.dt)));
        }
        if let Some(g) = self.gamma {
            if !(g >= 0.0) {
                return Err(Error::InvalidInput(format!("gamma must be >= 0 (got {g})")));
            }
        }
        if let Some(m) = &self.mass {
            if m.iter().any(|v| !(*v > 0.0)) {
                return Err(Error::InvalidInput("masses must be > 0".into()));
            }
        }
        Ok(())
    }

    /// Standard deviation of the overdamped Gaussian increment, √(2·dt/β).
    pub fn noise_scale(&self) -> f64 {
        (2.0 * self.dt / self.beta).sqrt()
    }

    /// Number of steps needed to cover `duration` (rounded up).
    pub fn steps_for(&self, duration: f64) -> u64 {
        if duration <= 0.0 {
            0
        } else {
            (duration / self.dt - 1e-9).ceil() as u64
        }
    }
}

/// One trajectory: position, optional momentum, clock and its noise stream.
#[derive(Debug, Clone)]
pub struct Walker {
    pub position: Vec<f64>,
    pub momentum: Option<Vec<f64>>,
    /// Physical time accumulated by stepping.
    pub clock: f64,
    pub steps: u64,
    stream: StreamId,
    rng: ChaCha8Rng,
    scratch: Vec<f64>,
    grad: Vec<f64>,
}

impl Walker {
    pub fn new(position: Vec<f64>, stream: StreamId) -> Self {
        let d = position.len();
        Self {
            position,
            momentum: None,
            clock: 0.0,
            steps: 0,
            stream,
            rng: stream.rng(),
            scratch: vec![0.0; d],
            grad: vec![0.0; d],
        }
    }

    pub fn with_momentum(mut self, momentum: Vec<f64>) -> Self {
        self.momentum = Some(momentum);
        self
    }

    pub fn stream(&self) -> StreamId {
        self.stream
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// Move to `position` without touching the clock or the noise stream.
    pub fn teleport(&mut self, position: &[f64]) {
        self.position.copy_from_slice(position);
    }

    /// Reset clock and step counter (e.g. at the start of an exit measurement).
    pub fn reset_clock(&mut self) {
        self.clock = 0.0;
        self.steps = 0;
    }

    fn normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }
}

/// Euler–Maruyama step: x ← x − ∇V(x)·dt + √(2·dt/β)·G.
pub fn step_overdamped(walker: &mut Walker, surface: &dyn Potential, params: &DynamicsParams) -> Result<()> {
    let sigma = params.noise_scale();
    surface.gradient(&walker.position, &mut walker.grad);
    let mut finite = true;
    for i in 0..walker.position.len() {
        let g: f64 = walker.rng.sample(StandardNormal);
        let v = walker.position[i] - walker.grad[i] * params.dt + sigma * g;
        finite &= v.is_finite();
        walker.scratch[i] = v;
    }
    if !finite {
        return Err(Error::IntegratorDivergence {
            step: walker.steps,
            last_finite: walker.position.clone(),
        });
    }
    std::mem::swap(&mut walker.position, &mut walker.scratch);
    walker.clock += params.dt;
    walker.steps += 1;
    Ok(())
}

/// BAOAB splitting step for dq = M⁻¹p dt, dp = −∇V dt − γM⁻¹p dt + √(2γ/β) dW.
pub fn step_langevin(walker: &mut Walker, surface: &dyn Potential, params: &DynamicsParams) -> Result<()> {
    let gamma = params
        .gamma
        .ok_or_else(|| Error::InvalidInput("Langevin step requires gamma".into()))?;
    let d = walker.position.len();
    let mut p = walker
        .momentum
        .take()
        .ok_or_else(|| Error::InvalidInput("Langevin step requires a momentum".into()))?;
    let dt = params.dt;
    let mass = |i: usize| params.mass.as_ref().map_or(1.0, |m| m[i]);
    let last = walker.position.clone();

    surface.gradient(&walker.position, &mut walker.grad);
    for i in 0..d {
        p[i] -= 0.5 * dt * walker.grad[i];
        walker.position[i] += 0.5 * dt * p[i] / mass(i);
    }
    for (i, pi) in p.iter_mut().enumerate() {
        let m = mass(i);
        let c = (-gamma * dt / m).exp();
        let g = walker.normal();
        *pi = c * *pi + ((1.0 - c * c) * m / params.beta).sqrt() * g;
    }
    for i in 0..d {
        walker.position[i] += 0.5 * dt * p[i] / mass(i);
    }
    surface.gradient(&walker.position, &mut walker.grad);
    for i in 0..d {
        p[i] -= 0.5 * dt * walker.grad[i];
    }
    let finite = walker.position.iter().chain(&p).all(|v| v.is_finite());
    if !finite {
        walker.position = last.clone();
        walker.momentum = Some(p);
        return Err(Error::IntegratorDivergence { step: walker.steps, last_finite: last });
    }
    walker.momentum = Some(p);
    walker.clock += dt;
    walker.steps += 1;
    Ok(())
}

/// Advance with whichever scheme the walker's state calls for.
pub fn step(walker: &mut Walker, surface: &dyn Potential, params: &DynamicsParams) -> Result<()> {
    if walker.momentum.is_some() {
        step_langevin(walker, surface, params)
    } else {
        step_overdamped(walker, surface, params)
    }
}
