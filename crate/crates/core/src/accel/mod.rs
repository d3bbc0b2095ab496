//! Trajectory acceleration: Parallel Replica, hyperdynamics and
//! temperature accelerated dynamics, plus the state-to-state driver.

pub mod hyper;
pub mod parrep;
pub mod tad;

use serde::{Deserialize, Serialize};

pub use hyper::{hyper_exit, BiasSpec, HyperConfig};
pub use parrep::{geometric_clock, parrep_exit, ClockRule, Dephasing, ParRepConfig, TauCorr};
pub use tad::{tad_exit, tad_search, Bounce, TadConfig, TadRecord};

use crate::rng::StreamId;
use crate::statemap::{detect_exit, ExitEvent, StateLabel, System};
use crate::{Error, Result};

/// An exit produced by one of the methods, with its cost accounting.
#[derive(Debug, Clone, PartialEq)]
pub struct AcceleratedExit {
    /// `exit_time` holds the reconstructed physical time.
    pub event: ExitEvent,
    /// Physical-time step count (exit_time / dt for exact step bookkeeping).
    pub residence_steps: u64,
    /// Sequential wall-clock steps: decorrelation + dephasing + the longest
    /// replica in the parallel phase.
    pub wall_steps: u64,
    /// Steps of the parallel phase alone (winner's first-exit step m).
    pub parallel_steps: u64,
    /// N for ParRep, mean boost B for hyperdynamics, Θ for TAD, 1 for direct.
    pub factor: f64,
}

/// Plain simulation from `entry` with walker stream `stream.child(0)`.
pub fn direct_exit(sys: &System, state: StateLabel, entry: &[f64], stream: StreamId, max_steps: u64) -> Result<AcceleratedExit> {
    let mut w = sys.walker(entry.to_vec(), stream.child(0));
    let event = detect_exit(&mut w, sys, state, max_steps)?;
    Ok(AcceleratedExit {
        residence_steps: event.first_exit_step,
        wall_steps: event.first_exit_step,
        parallel_steps: 0,
        factor: 1.0,
        event,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Method {
    Direct,
    Parrep(ParRepConfig),
    Hyper(HyperConfig),
    Tad(TadConfig),
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Direct => "direct",
            Method::Parrep(_) => "parrep",
            Method::Hyper(_) => "hyper",
            Method::Tad(_) => "tad",
        }
    }

    pub fn exit(&self, sys: &System, state: StateLabel, entry: &[f64], stream: StreamId, max_steps: u64) -> Result<AcceleratedExit> {
        match self {
            Method::Direct => direct_exit(sys, state, entry, stream, max_steps),
            Method::Parrep(c) => parrep_exit(sys, state, entry, c, stream, max_steps),
            Method::Hyper(c) => hyper_exit(sys, state, entry, c, stream, max_steps),
            Method::Tad(c) => tad_exit(sys, state, entry, c, stream, max_steps),
        }
    }
}

/// One residence of the state-to-state process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Residence {
    pub state: StateLabel,
    pub residence_time: f64,
    pub residence_steps: u64,
    pub exit_region: usize,
    pub next_state: StateLabel,
    pub wall_steps: u64,
    pub factor: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StateToStateTrajectory {
    pub residences: Vec<Residence>,
    pub clock: f64,
}

impl StateToStateTrajectory {
    pub fn push(&mut self, r: Residence) {
        self.clock += r.residence_time;
        self.residences.push(r);
    }

    pub fn residence_times(&self, state: StateLabel) -> Vec<f64> {
        self.residences.iter().filter(|r| r.state == state).map(|r| r.residence_time).collect()
    }

    pub fn occupation(&self, state: StateLabel) -> f64 {
        self.residence_times(state).iter().sum::<f64>() / self.clock
    }
}

/// Chain exits from `start` until the clock reaches `horizon`; exit k uses
/// stream `stream.child(k)`.
pub fn run_accelerated(
    sys: &System,
    method: &Method,
    start: &[f64],
    horizon: f64,
    stream: StreamId,
    max_steps: u64,
) -> Result<StateToStateTrajectory> {
    let mut traj = StateToStateTrajectory::default();
    let mut position = start.to_vec();
    let mut state = sys.classify(&position)?;
    let mut k = 0u64;
    while traj.clock < horizon {
        if state.is_outside() {
            return Err(Error::InvalidInput(format!(
                "trajectory reached {position:?}, which belongs to no state"
            )));
        }
        let ex = method.exit(sys, state, &position, stream.child(k), max_steps)?;
        traj.push(Residence {
            state,
            residence_time: ex.event.exit_time,
            residence_steps: ex.residence_steps,
            exit_region: ex.event.region_label,
            next_state: ex.event.to,
            wall_steps: ex.wall_steps,
            factor: ex.factor,
        });
        position = ex.event.exit_point;
        state = ex.event.to;
        k += 1;
    }
    Ok(traj)
}
