//! Kinetic Monte Carlo: continuous-time jump Markov process on a rate graph.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::Rng;

use crate::statemap::StateLabel;
use crate::{Error, Result};

/// Sparse rates k_{i,j} ≥ 0 between discrete states.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RateGraph {
    rows: BTreeMap<StateLabel, BTreeMap<StateLabel, f64>>,
}

impl RateGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_state(&mut self, s: StateLabel) {
        self.rows.entry(s).or_default();
    }

    /// Set k_{i,j}; both endpoints get a row. Zero removes the edge.
    pub fn set_rate(&mut self, i: StateLabel, j: StateLabel, k: f64) -> Result<()> {
        if i == j {
            return Err(Error::InvalidInput(format!("self-rate on state {i}")));
        }
        if !(k >= 0.0) || !k.is_finite() {
            return Err(Error::InvalidInput(format!("rate {i}->{j} must be finite and >= 0 (got {k})")));
        }
        self.add_state(j);
        let row = self.rows.entry(i).or_default();
        if k == 0.0 {
            row.remove(&j);
        } else {
            row.insert(j, k);
        }
        Ok(())
    }

    pub fn rate(&self, i: StateLabel, j: StateLabel) -> f64 {
        self.rows.get(&i).and_then(|r| r.get(&j)).copied().unwrap_or(0.0)
    }

    pub fn states(&self) -> impl Iterator<Item = StateLabel> + '_ {
        self.rows.keys().copied()
    }

    pub fn contains(&self, s: StateLabel) -> bool {
        self.rows.contains_key(&s)
    }

    /// 𝒩_i = {j : k_{i,j} > 0}.
    pub fn neighbors(&self, i: StateLabel) -> impl Iterator<Item = (StateLabel, f64)> + '_ {
        self.rows.get(&i).into_iter().flat_map(|r| r.iter().map(|(j, k)| (*j, *k)))
    }

    pub fn total_rate(&self, i: StateLabel) -> f64 {
        self.neighbors(i).map(|(_, k)| k).sum()
    }

    /// `i j k_ij` per line.
    pub fn to_edge_list(&self) -> String {
        let mut out = String::new();
        for (i, row) in &self.rows {
            for (j, k) in row {
                let _ = writeln!(out, "{} {} {:e}", i.0, j.0, k);
            }
        }
        out
    }

    pub fn from_edge_list(text: &str) -> Result<Self> {
        let mut g = Self::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            let bad = || Error::InvalidInput(format!("edge list line {}: expected `i j k`, got {line:?}", n + 1));
            if f.len() != 3 {
                return Err(bad());
            }
            let i: u64 = f[0].parse().map_err(|_| bad())?;
            let j: u64 = f[1].parse().map_err(|_| bad())?;
            let k: f64 = f[2].parse().map_err(|_| bad())?;
            g.set_rate(StateLabel(i), StateLabel(j), k)?;
        }
        Ok(g)
    }
}

/// Draw (T, Y): T ~ Exp(Σ_j k_ij) by inverse CDF, then Y with P(Y=j) ∝ k_ij.
pub fn sample_exit<R: Rng + ?Sized>(graph: &RateGraph, i: StateLabel, rng: &mut R) -> Result<(f64, StateLabel)> {
    let total = graph.total_rate(i);
    if !(total > 0.0) {
        return Err(Error::AbsorbingState(i));
    }
    let u: f64 = 1.0 - rng.random::<f64>();
    let t = -u.ln() / total;
    let mut target = rng.random::<f64>() * total;
    let mut last = i;
    for (j, k) in graph.neighbors(i) {
        last = j;
        if target < k {
            return Ok((t, j));
        }
        target -= k;
    }
    Ok((t, last))
}

/// Visited states Y_n with residence times T_n.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpTrajectory {
    pub jumps: Vec<(StateLabel, f64)>,
    /// The last state is absorbing (its true residence is infinite).
    pub absorbed: bool,
}

impl JumpTrajectory {
    pub fn clock(&self) -> f64 {
        self.jumps.iter().map(|(_, t)| t).sum()
    }

    /// Z_t, right-continuous.
    pub fn state_at(&self, t: f64) -> Option<StateLabel> {
        let mut acc = 0.0;
        for (s, dt) in &self.jumps {
            acc += dt;
            if t < acc {
                return Some(*s);
            }
        }
        if self.absorbed {
            self.jumps.last().map(|(s, _)| *s)
        } else {
            None
        }
    }

    /// Fraction of the clock spent in `s`.
    pub fn occupation(&self, s: StateLabel) -> f64 {
        let total = self.clock();
        if total <= 0.0 {
            return 0.0;
        }
        self.jumps.iter().filter(|(x, _)| *x == s).map(|(_, t)| t).sum::<f64>() / total
    }
}

/// Iterate exits from `start` until the clock reaches `horizon`; the last
/// residence is truncated at the horizon.
pub fn run_kmc<R: Rng + ?Sized>(graph: &RateGraph, start: StateLabel, horizon: f64, rng: &mut R) -> Result<JumpTrajectory> {
    if !graph.contains(start) {
        return Err(Error::InvalidInput(format!("start state {start} not in graph")));
    }
    let mut jumps = Vec::new();
    let mut clock = 0.0;
    let mut state = start;
    while clock < horizon {
        match sample_exit(graph, state, rng) {
            Ok((t, next)) => {
                let t = t.min(horizon - clock);
                jumps.push((state, t));
                clock += t;
                state = next;
            }
            Err(Error::AbsorbingState(_)) => {
                jumps.push((state, horizon - clock));
                return Ok(JumpTrajectory { jumps, absorbed: true });
            }
            Err(e) => return Err(e),
        }
    }
    Ok(JumpTrajectory { jumps, absorbed: false })
}
