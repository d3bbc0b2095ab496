//! Parallel trajectory splicing.
//!
//! Segments are produced in rounds. Round r hands out `producers` slots,
//! each tagged with a generation index when the round starts, and the slots
//! run concurrently. Finished segments enter per-state queues ordered by
//! generation index, so completion order never matters.

use std::collections::{BTreeMap, VecDeque};
use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::accel::{Residence, StateToStateTrajectory};
use crate::qsd::dephase_by_rejection;
use crate::rng::StreamId;
use crate::statemap::{descend, StateLabel, System};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start_state: StateLabel,
    pub end_state: StateLabel,
    pub duration_steps: u64,
    pub duration: f64,
    /// Consecutive (state, steps) pieces; neighbouring entries differ.
    pub path: Vec<(StateLabel, u64)>,
    pub generation_index: u64,
    pub end_position: Vec<f64>,
}

/// Run from `start` (a QSD sample of `start_state`) until the walker has
/// spent `tau_corr` without changing state.
pub fn produce_segment(
    sys: &System,
    start_state: StateLabel,
    start: &[f64],
    tau_corr: f64,
    generation_index: u64,
    stream: StreamId,
    max_steps: u64,
) -> Result<Segment> {
    let tau_steps = sys.params.steps_for(tau_corr).max(1);
    let mut w = sys.walker(start.to_vec(), stream);
    let mut label = start_state;
    let mut path: Vec<(StateLabel, u64)> = vec![(start_state, 0)];
    for s in 1..=max_steps {
        sys.step(&mut w)?;
        if !sys.contains(label, &w.position)? {
            let (to, _) = sys.exit_record(label, &w.position)?;
            if to.is_outside() {
                return Err(Error::InvalidInput(format!(
                    "segment reached {:?}, which belongs to no state",
                    w.position
                )));
            }
            label = to;
            path.push((label, 0));
        }
        let last = path.last_mut().expect("path never empty");
        last.1 += 1;
        if last.1 >= tau_steps {
            return Ok(Segment {
                start_state,
                end_state: label,
                duration_steps: s,
                duration: s as f64 * sys.params.dt,
                path,
                generation_index,
                end_position: w.position,
            });
        }
    }
    Err(Error::NoExitWithinBudget { state: start_state, steps: max_steps })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Discipline {
    #[default]
    Fifo,
    /// Shortest segment first (negative control).
    ShortestFirst,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SegmentDatabase {
    pub discipline: Discipline,
    queues: BTreeMap<StateLabel, VecDeque<Segment>>,
}

impl SegmentDatabase {
    pub fn new(discipline: Discipline) -> Self {
        Self { discipline, queues: BTreeMap::new() }
    }

    pub fn insert(&mut self, seg: Segment) {
        let q = self.queues.entry(seg.start_state).or_default();
        let at = q.partition_point(|s| s.generation_index < seg.generation_index);
        q.insert(at, seg);
    }

    pub fn pop(&mut self, state: StateLabel) -> Option<Segment> {
        let q = self.queues.get_mut(&state)?;
        match self.discipline {
            Discipline::Fifo => q.pop_front(),
            Discipline::ShortestFirst => {
                let k = (0..q.len()).min_by_key(|&k| (q[k].duration_steps, q[k].generation_index))?;
                q.remove(k)
            }
        }
    }

    pub fn len(&self, state: StateLabel) -> usize {
        self.queues.get(&state).map_or(0, VecDeque::len)
    }

    pub fn total(&self) -> usize {
        self.queues.values().map(VecDeque::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.total() == 0
    }

    pub fn states(&self) -> Vec<StateLabel> {
        self.queues.keys().copied().collect()
    }

    /// One JSON record per line, queues in state order.
    pub fn dump<W: Write>(&self, mut out: W) -> Result<()> {
        for seg in self.queues.values().flatten() {
            serde_json::to_writer(&mut out, seg).map_err(std::io::Error::from)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn load<R: BufRead>(input: R, discipline: Discipline) -> Result<Self> {
        let mut db = Self::new(discipline);
        for (n, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let seg: Segment = serde_json::from_str(&line)
                .map_err(|e| Error::InvalidInput(format!("segment record on line {}: {e}", n + 1)))?;
            db.insert(seg);
        }
        Ok(db)
    }
}

/// Incremental splicer; keeps the open residence between calls.
#[derive(Debug, Clone)]
pub struct Splicer {
    dt: f64,
    state: StateLabel,
    open_steps: u64,
    closed: Vec<Residence>,
    clock_steps: u64,
    pub consumed: BTreeMap<StateLabel, u64>,
}

impl Splicer {
    pub fn new(start_state: StateLabel, dt: f64) -> Self {
        Self { dt, state: start_state, open_steps: 0, closed: Vec::new(), clock_steps: 0, consumed: BTreeMap::new() }
    }

    pub fn state(&self) -> StateLabel {
        self.state
    }

    pub fn clock(&self) -> f64 {
        self.clock_steps as f64 * self.dt
    }

    fn append(&mut self, seg: &Segment) {
        for &(label, steps) in &seg.path {
            if label != self.state {
                let steps_done = self.open_steps;
                self.closed.push(Residence {
                    state: self.state,
                    residence_time: steps_done as f64 * self.dt,
                    residence_steps: steps_done,
                    exit_region: label.0 as usize,
                    next_state: label,
                    wall_steps: 0,
                    factor: 1.0,
                });
                self.state = label;
                self.open_steps = 0;
            }
            self.open_steps += steps;
        }
        self.clock_steps += seg.duration_steps;
        *self.consumed.entry(seg.start_state).or_default() += 1;
    }

    /// Pop and append segments for the current state until the clock reaches
    /// `horizon` (true) or the queue runs dry (false).
    pub fn advance(&mut self, db: &mut SegmentDatabase, horizon: f64) -> bool {
        while self.clock() < horizon {
            match db.pop(self.state) {
                Some(seg) => self.append(&seg),
                None => return false,
            }
        }
        true
    }

    /// Closed residences followed by the open one (whose `next_state`
    /// equals its own state).
    pub fn trajectory(&self) -> StateToStateTrajectory {
        let mut t = StateToStateTrajectory::default();
        for r in &self.closed {
            t.push(r.clone());
        }
        t.push(Residence {
            state: self.state,
            residence_time: self.open_steps as f64 * self.dt,
            residence_steps: self.open_steps,
            exit_region: self.state.0 as usize,
            next_state: self.state,
            wall_steps: 0,
            factor: 1.0,
        });
        t
    }
}

/// Splice a fixed database up to `horizon`.
pub fn splice(db: &mut SegmentDatabase, start_state: StateLabel, horizon: f64, dt: f64) -> Result<StateToStateTrajectory> {
    let mut sp = Splicer::new(start_state, dt);
    if sp.advance(db, horizon) {
        Ok(sp.trajectory())
    } else {
        Err(Error::Starvation { state: sp.state, partial: Box::new(sp.trajectory()) })
    }
}

/// Largest-remainder allocation of `slots` proportionally to `weights`.
/// Ties go to the smaller label.
pub fn schedule_production(weights: &BTreeMap<StateLabel, f64>, slots: usize) -> BTreeMap<StateLabel, usize> {
    let total: f64 = weights.values().filter(|w| **w > 0.0).sum();
    let mut plan: BTreeMap<StateLabel, usize> = weights.keys().map(|&s| (s, 0)).collect();
    if total <= 0.0 || slots == 0 {
        return plan;
    }
    let mut rema = Vec::new();
    let mut used = 0;
    for (&s, &w) in weights {
        let share = w.max(0.0) / total * slots as f64;
        let base = share.floor() as usize;
        plan.insert(s, base);
        used += base;
        rema.push((share - base as f64, s));
    }
    rema.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    for (_, s) in rema.into_iter().take(slots - used) {
        *plan.get_mut(&s).expect("known state") += 1;
    }
    plan
}

/// Visit counts plus one over the known states (heuristic).
pub fn frequency_predictor(visits: &BTreeMap<StateLabel, u64>) -> BTreeMap<StateLabel, f64> {
    visits.iter().map(|(&s, &n)| (s, n as f64 + 1.0)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpliceConfig {
    /// Segments produced per round.
    pub producers: usize,
    pub tau_corr: f64,
    #[serde(default)]
    pub discipline: Discipline,
    /// Start new segments from stored endpoints instead of fresh QSD samples.
    #[serde(default)]
    pub reuse_endpoints: bool,
    #[serde(default = "default_rounds")]
    pub max_rounds: u64,
    #[serde(default = "default_attempts")]
    pub dephase_attempts: u64,
}

fn default_rounds() -> u64 {
    1_000_000
}

fn default_attempts() -> u64 {
    10_000
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SpliceStats {
    pub rounds: u64,
    pub produced: u64,
    pub consumed: u64,
    pub unused: u64,
    pub segment_steps: u64,
}

fn seed_point(sys: &System, state: StateLabel) -> Result<Vec<f64>> {
    let rep = sys
        .states
        .representative(state)
        .ok_or_else(|| Error::InvalidInput(format!("unknown state {state}")))?;
    let low = descend(sys.surface.as_ref(), &rep, 100_000)?;
    Ok(if sys.contains(state, &low)? { low } else { rep })
}

/// Produce and splice until the clock reaches `horizon`. Slot with
/// generation index g draws its QSD sample from `stream.child(g).child(0)`
/// and its segment from `stream.child(g).child(1)`.
pub fn run_parsplice(
    sys: &System,
    start_state: StateLabel,
    cfg: &SpliceConfig,
    horizon: f64,
    stream: StreamId,
    max_steps: u64,
) -> Result<(StateToStateTrajectory, SegmentDatabase, SpliceStats)> {
    if cfg.producers == 0 {
        return Err(Error::Config("splice needs at least one producer".into()));
    }
    let mut db = SegmentDatabase::new(cfg.discipline);
    let mut sp = Splicer::new(start_state, sys.params.dt);
    let mut seeds: BTreeMap<StateLabel, Vec<f64>> = BTreeMap::new();
    let mut pool: BTreeMap<StateLabel, VecDeque<Vec<f64>>> = BTreeMap::new();
    let mut known: BTreeMap<StateLabel, u64> = BTreeMap::from([(start_state, 0)]);
    let mut stats = SpliceStats::default();
    let mut generation = 0u64;

    while !sp.advance(&mut db, horizon) {
        if stats.rounds >= cfg.max_rounds {
            return Err(Error::Starvation { state: sp.state(), partial: Box::new(sp.trajectory()) });
        }
        stats.rounds += 1;
        for (s, n) in known.iter_mut() {
            *n = sp.consumed.get(s).copied().unwrap_or(0);
        }
        let mut plan = schedule_production(&frequency_predictor(&known), cfg.producers);
        let cur = sp.state();
        if plan.get(&cur).copied().unwrap_or(0) == 0 {
            let donor = plan.iter().max_by_key(|(s, n)| (**n, std::cmp::Reverse(**s))).map(|(s, _)| *s);
            if let Some(d) = donor {
                *plan.get_mut(&d).expect("donor") -= 1;
            }
            *plan.entry(cur).or_default() += 1;
        }

        let mut slots: Vec<(u64, StateLabel, Option<Vec<f64>>)> = Vec::new();
        for (&s, &n) in &plan {
            for _ in 0..n {
                let start = if cfg.reuse_endpoints { pool.get_mut(&s).and_then(VecDeque::pop_front) } else { None };
                slots.push((generation, s, start));
                generation += 1;
            }
            if n > 0 && !seeds.contains_key(&s) {
                seeds.insert(s, seed_point(sys, s)?);
            }
        }
        let produced: Vec<Result<Segment>> = slots
            .into_par_iter()
            .map(|(g, s, start)| {
                let sub = stream.child(g);
                let x = match start {
                    Some(x) => x,
                    None => dephase_by_rejection(sys, s, &seeds[&s], cfg.tau_corr, 1, sub.child(0), cfg.dephase_attempts)?
                        .swap_remove(0),
                };
                produce_segment(sys, s, &x, cfg.tau_corr, g, sub.child(1), max_steps)
            })
            .collect();
        for seg in produced {
            let seg = seg?;
            stats.produced += 1;
            stats.segment_steps += seg.duration_steps;
            known.entry(seg.end_state).or_insert(0);
            if cfg.reuse_endpoints {
                pool.entry(seg.end_state).or_default().push_back(seg.end_position.clone());
            }
            db.insert(seg);
        }
    }
    stats.consumed = sp.consumed.values().sum();
    stats.unused = db.total() as u64;
    Ok((sp.trajectory(), db, stats))
}
