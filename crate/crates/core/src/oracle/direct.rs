//! Brute-force exit statistics by plain stepping.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::rng::StreamId;
use crate::statemap::{detect_exit, ExitEvent, StateLabel, System};
use crate::{Error, Result};

/// Starting configurations for the independent exit measurements.
#[derive(Debug, Clone)]
pub enum Initial {
    Point(Vec<f64>),
    /// Event k starts from `samples[k % len]`.
    Samples(Vec<Vec<f64>>),
}

impl Initial {
    fn get(&self, k: usize) -> &[f64] {
        match self {
            Initial::Point(p) => p,
            Initial::Samples(s) => &s[k % s.len()],
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ExitStatistics {
    pub times: Vec<f64>,
    pub steps: Vec<u64>,
    pub regions: Vec<usize>,
    pub exit_points: Vec<Vec<f64>>,
    pub region_counts: BTreeMap<usize, u64>,
}

impl ExitStatistics {
    pub fn from_events(events: &[ExitEvent]) -> Self {
        let mut s = Self::default();
        for e in events {
            s.times.push(e.exit_time);
            s.steps.push(e.first_exit_step);
            s.regions.push(e.region_label);
            s.exit_points.push(e.exit_point.clone());
            *s.region_counts.entry(e.region_label).or_default() += 1;
        }
        s
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Counts for regions `0..n`.
    pub fn counts(&self, n: usize) -> Vec<u64> {
        (0..n).map(|r| self.region_counts.get(&r).copied().unwrap_or(0)).collect()
    }

    /// Empirical probability of each region with its binomial standard error.
    pub fn region_probability(&self, region: usize) -> (f64, f64) {
        let n = self.len() as f64;
        let p = self.region_counts.get(&region).copied().unwrap_or(0) as f64 / n;
        (p, (p * (1.0 - p) / n).sqrt())
    }
}

/// `n_events` independent first exits from `state`; event k uses stream
/// `stream.child(k)` so results do not depend on the thread pool.
pub fn direct_exit_statistics(
    sys: &System,
    state: StateLabel,
    init: &Initial,
    n_events: usize,
    stream: StreamId,
    max_steps: u64,
) -> Result<ExitStatistics> {
    if n_events == 0 {
        return Err(Error::InvalidInput("n_events must be >= 1".into()));
    }
    if let Initial::Samples(s) = init {
        if s.is_empty() {
            return Err(Error::InvalidInput("no initial samples".into()));
        }
    }
    let events: Vec<ExitEvent> = (0..n_events)
        .into_par_iter()
        .map(|k| {
            let mut w = sys.walker(init.get(k).to_vec(), stream.child(k as u64));
            detect_exit(&mut w, sys, state, max_steps)
        })
        .collect::<Result<_>>()?;
    Ok(ExitStatistics::from_events(&events))
}
