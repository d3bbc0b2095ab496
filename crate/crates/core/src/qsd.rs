//! Quasi-stationary distribution sampling: Fleming–Viot ensembles with a
//! Gelman–Rubin style stopping rule, and dephasing by rejection.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::Walker;
use crate::rng::StreamId;
use crate::statemap::{StateLabel, System};
use crate::{Error, Result};

/// Scalar observable monitored by the convergence diagnostic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Observable {
    Coordinate(usize),
    Energy,
}

impl Observable {
    pub fn eval(&self, sys: &System, x: &[f64]) -> f64 {
        match self {
            Observable::Coordinate(i) => x[*i],
            Observable::Energy => sys.surface.value(x),
        }
    }

    /// Coordinates and V.
    pub fn defaults(dim: usize) -> Vec<Observable> {
        let mut v: Vec<Observable> = (0..dim).map(Observable::Coordinate).collect();
        v.push(Observable::Energy);
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GelmanRubin {
    pub observables: Vec<Observable>,
    /// Averaging window (physical time).
    pub window: f64,
    /// Converged once ratio − 1 < threshold for every observable.
    pub threshold: f64,
}

impl GelmanRubin {
    pub fn new(observables: Vec<Observable>, window: f64, threshold: f64) -> Result<Self> {
        if !(threshold > 0.0) {
            return Err(Error::InvalidInput(format!("threshold must be > 0 (got {threshold})")));
        }
        if !(window > 0.0) {
            return Err(Error::InvalidInput(format!("window must be > 0 (got {window})")));
        }
        Ok(Self { observables, window, threshold })
    }
}

/// (W + B) / W, with W the mean within-window variance of each replica and
/// B the between-replica variance of window means.
pub fn ratio_statistic(means: &[f64], variances: &[f64]) -> f64 {
    let n = means.len() as f64;
    let within = variances.iter().sum::<f64>() / n;
    let grand = means.iter().sum::<f64>() / n;
    let between = means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    if within <= 0.0 {
        return if between <= 0.0 { 1.0 } else { f64::INFINITY };
    }
    (within + between) / within
}

/// Windowed convergence check, fed one ensemble snapshot per step.
pub struct WindowMonitor<'a> {
    diag: &'a GelmanRubin,
    window: u64,
    count: u64,
    windows: u64,
    sum: Vec<Vec<f64>>,
    sumsq: Vec<Vec<f64>>,
    pub last_excess: f64,
    pub trace: Vec<(f64, f64)>,
}

impl<'a> WindowMonitor<'a> {
    pub fn new(diag: &'a GelmanRubin, n: usize, sys: &System) -> Self {
        let k = diag.observables.len();
        Self {
            diag,
            window: sys.params.steps_for(diag.window).max(2),
            count: 0,
            windows: 0,
            sum: vec![vec![0.0; n]; k],
            sumsq: vec![vec![0.0; n]; k],
            last_excess: f64::INFINITY,
            trace: Vec::new(),
        }
    }

    /// True once the diagnostic has converged (never before the second window).
    pub fn observe(&mut self, sys: &System, ens: &FvEnsemble) -> bool {
        if self.diag.threshold.is_infinite() {
            return true;
        }
        for (o, obs) in self.diag.observables.iter().enumerate() {
            for (k, w) in ens.replicas.iter().enumerate() {
                let v = obs.eval(sys, &w.position);
                self.sum[o][k] += v;
                self.sumsq[o][k] += v * v;
            }
        }
        self.count += 1;
        if self.count < self.window {
            return false;
        }
        let m = self.count as f64;
        let mut worst = f64::NEG_INFINITY;
        for o in 0..self.sum.len() {
            let means: Vec<f64> = self.sum[o].iter().map(|v| v / m).collect();
            let vars: Vec<f64> = self.sumsq[o]
                .iter()
                .zip(&means)
                .map(|(q, mu)| (q / m - mu * mu).max(0.0) * m / (m - 1.0))
                .collect();
            worst = worst.max(ratio_statistic(&means, &vars) - 1.0);
            self.sum[o].iter_mut().for_each(|v| *v = 0.0);
            self.sumsq[o].iter_mut().for_each(|v| *v = 0.0);
        }
        self.count = 0;
        self.windows += 1;
        self.last_excess = worst;
        self.trace.push((ens.elapsed, worst));
        self.windows >= 2 && worst < self.diag.threshold
    }
}

/// N replicas conditioned to stay in one state by kill-and-branch.
#[derive(Debug, Clone)]
pub struct FvEnsemble {
    pub replicas: Vec<Walker>,
    pub state: StateLabel,
    pub kill_count: u64,
    pub elapsed: f64,
    pub steps: u64,
    stream: StreamId,
    branch_rng: ChaCha8Rng,
    births: u64,
}

impl FvEnsemble {
    /// Replicas start at `starts[n % len]`; replica n uses stream `stream.child(n)`.
    pub fn new(sys: &System, state: StateLabel, starts: &[Vec<f64>], n: usize, stream: StreamId) -> Result<Self> {
        if n == 0 || starts.is_empty() {
            return Err(Error::InvalidInput("Fleming-Viot needs at least one replica and start".into()));
        }
        for s in starts {
            if !sys.contains(state, s)? {
                return Err(Error::InvalidInput(format!("start {s:?} is not in state {state}")));
            }
        }
        let replicas = (0..n)
            .map(|k| sys.walker(starts[k % starts.len()].clone(), stream.child(k as u64)))
            .collect();
        Ok(Self {
            replicas,
            state,
            kill_count: 0,
            elapsed: 0.0,
            steps: 0,
            branch_rng: stream.child(u64::MAX).rng(),
            stream: stream.child(u64::MAX - 1),
            births: 0,
        })
    }

    pub fn positions(&self) -> Vec<Vec<f64>> {
        self.replicas.iter().map(|w| w.position.clone()).collect()
    }

    /// Advance every replica one step; exited replicas (in index order) are
    /// restarted at the position of a uniformly chosen survivor with a fresh
    /// noise stream. Returns the number of kills in this step.
    pub fn step(&mut self, sys: &System) -> Result<usize> {
        let state = self.state;
        let inside: Vec<bool> = self
            .replicas
            .par_iter_mut()
            .with_min_len(64)
            .map(|w| {
                sys.step(w)?;
                sys.contains(state, &w.position)
            })
            .collect::<Result<_>>()?;
        let survivors: Vec<usize> = (0..inside.len()).filter(|&k| inside[k]).collect();
        if survivors.is_empty() {
            return Err(Error::EnsembleExtinction { replicas: self.replicas.len() });
        }
        let mut kills = 0;
        for k in 0..inside.len() {
            if inside[k] {
                continue;
            }
            let donor = survivors[self.branch_rng.random_range(0..survivors.len())];
            let position = self.replicas[donor].position.clone();
            let momentum = self.replicas[donor].momentum.clone();
            let mut fresh = Walker::new(position, self.stream.child(self.births));
            fresh.momentum = momentum;
            fresh.clock = self.replicas[k].clock;
            fresh.steps = self.replicas[k].steps;
            self.births += 1;
            self.replicas[k] = fresh;
            kills += 1;
        }
        self.kill_count += kills as u64;
        self.elapsed += sys.params.dt;
        self.steps += 1;
        Ok(kills)
    }

    /// Run for `duration` and return the kill-rate estimate of λ₁ over that span.
    pub fn rate_estimate(&mut self, sys: &System, duration: f64) -> Result<RateEstimate> {
        let before = self.kill_count;
        let steps = sys.params.steps_for(duration);
        for _ in 0..steps {
            self.step(sys)?;
        }
        let kills = self.kill_count - before;
        let time = steps as f64 * sys.params.dt;
        let denom = self.replicas.len() as f64 * time;
        Ok(RateEstimate {
            lambda1: kills as f64 / denom,
            std_error: (kills as f64).sqrt() / denom,
            kills,
        })
    }
}

/// λ₁ ≈ kills / (N · elapsed), with a Poisson standard error.
#[derive(Debug, Clone, Copy)]
pub struct RateEstimate {
    pub lambda1: f64,
    pub std_error: f64,
    pub kills: u64,
}

#[derive(Debug, Clone)]
pub struct QsdEstimate {
    pub samples: Vec<Vec<f64>>,
    /// Physical time until the diagnostic converged.
    pub tau_corr_estimate: f64,
    pub kill_count: u64,
    /// (time, largest ratio − 1 over the observables) at each window end.
    pub trace: Vec<(f64, f64)>,
}

/// Run Fleming–Viot until the diagnostic converges (checked at the end of
/// every window, from the second window on).
pub fn estimate_qsd(
    sys: &System,
    state: StateLabel,
    starts: &[Vec<f64>],
    n: usize,
    diagnostic: &GelmanRubin,
    stream: StreamId,
    max_time: f64,
) -> Result<(QsdEstimate, FvEnsemble)> {
    if n < 2 {
        return Err(Error::InvalidInput("estimate_qsd needs N >= 2".into()));
    }
    let mut ens = FvEnsemble::new(sys, state, starts, n, stream)?;
    let done = |ens: &FvEnsemble, trace: Vec<(f64, f64)>| QsdEstimate {
        samples: ens.positions(),
        tau_corr_estimate: ens.elapsed,
        kill_count: ens.kill_count,
        trace,
    };
    if diagnostic.threshold.is_infinite() {
        return Ok((done(&ens, Vec::new()), ens));
    }
    let max_steps = sys.params.steps_for(max_time);
    let mut monitor = WindowMonitor::new(diagnostic, n, sys);
    while ens.steps < max_steps {
        ens.step(sys)?;
        if monitor.observe(sys, &ens) {
            let trace = std::mem::take(&mut monitor.trace);
            return Ok((done(&ens, trace), ens));
        }
    }
    let last_excess = monitor.last_excess;
    let trace = std::mem::take(&mut monitor.trace);
    Err(Error::DiagnosticTimeout {
        steps: ens.steps,
        last_excess,
        partial: Box::new(done(&ens, trace)),
    })
}

/// End points of `count` trajectories of duration `tau` started at `start`
/// and restarted from scratch whenever they leave the state.
pub fn dephase_by_rejection(
    sys: &System,
    state: StateLabel,
    start: &[f64],
    tau: f64,
    count: usize,
    stream: StreamId,
    max_attempts: u64,
) -> Result<Vec<Vec<f64>>> {
    if !sys.contains(state, start)? {
        return Err(Error::InvalidInput(format!("dephasing start {start:?} is not in state {state}")));
    }
    let steps = sys.params.steps_for(tau);
    if steps == 0 {
        return Ok(vec![start.to_vec(); count]);
    }
    let results: Vec<Result<(Vec<f64>, u64)>> = (0..count)
        .into_par_iter()
        .map(|i| {
            let base = stream.child(i as u64);
            for attempt in 0..max_attempts {
                let mut w = sys.walker(start.to_vec(), base.child(attempt));
                let mut ok = true;
                for _ in 0..steps {
                    sys.step(&mut w)?;
                    if !sys.contains(state, &w.position)? {
                        ok = false;
                        break;
                    }
                }
                if ok {
                    return Ok((w.position, attempt + 1));
                }
            }
            Err(Error::DephasingBudget { attempts: max_attempts, accepted: 0 })
        })
        .collect();
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0;
    for r in results {
        match r {
            Ok((p, a)) => {
                attempts += a;
                out.push(p);
            }
            Err(Error::DephasingBudget { .. }) => {
                return Err(Error::DephasingBudget {
                    attempts: attempts + max_attempts,
                    accepted: out.len(),
                })
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}
