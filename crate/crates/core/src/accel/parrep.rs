use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::AcceleratedExit;
use crate::dynamics::Walker;
use crate::qsd::{dephase_by_rejection, FvEnsemble, GelmanRubin, WindowMonitor};
use crate::rng::StreamId;
use crate::statemap::{ExitEvent, StateLabel, System};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TauCorr {
    Fixed { time: f64 },
    /// Decorrelation ends when a Fleming–Viot ensemble run alongside the
    /// reference walker passes the diagnostic.
    Adaptive { diagnostic: GelmanRubin, max_time: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Dephasing {
    Rejection { max_attempts: u64 },
    FlemingViotReuse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClockRule {
    /// N·(m − 1) + r steps.
    #[default]
    Exact,
    /// m steps, no ×N (negative control).
    Unscaled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParRepConfig {
    pub n_replicas: usize,
    pub tau_corr: TauCorr,
    pub dephasing: Dephasing,
    #[serde(default)]
    pub clock_rule: ClockRule,
    /// Steps each replica advances between synchronisations.
    #[serde(default = "default_chunk")]
    pub chunk: u64,
}

fn default_chunk() -> u64 {
    256
}

impl ParRepConfig {
    pub fn fixed(n_replicas: usize, tau: f64) -> Self {
        Self {
            n_replicas,
            tau_corr: TauCorr::Fixed { time: tau },
            dephasing: Dephasing::Rejection { max_attempts: 10_000 },
            clock_rule: ClockRule::Exact,
            chunk: default_chunk(),
        }
    }
}

/// Physical steps N·(m − 1) + r for a winner with first-exit step m ≥ 1 and
/// 1-based replica index r.
pub fn geometric_clock(n: u64, m: u64, r: u64) -> u64 {
    n * (m - 1) + r
}

/// Parallel Replica exit: decorrelation on a reference walker, dephasing of
/// N replicas, then the parallel step with the discrete-time clock.
///
/// Streams: reference = `stream.child(0)`, dephasing = `stream.child(1)`,
/// replica n = `stream.child(2).child(n)`.
pub fn parrep_exit(
    sys: &System,
    state: StateLabel,
    entry: &[f64],
    cfg: &ParRepConfig,
    stream: StreamId,
    max_steps: u64,
) -> Result<AcceleratedExit> {
    if cfg.n_replicas == 0 {
        return Err(Error::InvalidInput("ParRep needs at least one replica".into()));
    }
    let dt = sys.params.dt;
    let mut reference = sys.walker(entry.to_vec(), stream.child(0));

    // Decorrelation.
    let (decor_steps, fv) = match &cfg.tau_corr {
        TauCorr::Fixed { time } => {
            let steps = sys.params.steps_for(*time);
            for s in 1..=steps {
                sys.step(&mut reference)?;
                if !sys.contains(state, &reference.position)? {
                    return reference_exit(sys, state, &reference, s);
                }
            }
            (steps, None)
        }
        TauCorr::Adaptive { diagnostic, max_time } => {
            let n = cfg.n_replicas.max(2);
            let mut ens = FvEnsemble::new(sys, state, &[entry.to_vec()], n, stream.child(1))?;
            let mut monitor = WindowMonitor::new(diagnostic, n, sys);
            let limit = sys.params.steps_for(*max_time);
            let mut s = 0;
            loop {
                s += 1;
                sys.step(&mut reference)?;
                if !sys.contains(state, &reference.position)? {
                    return reference_exit(sys, state, &reference, s);
                }
                ens.step(sys)?;
                if monitor.observe(sys, &ens) {
                    break;
                }
                if s >= limit {
                    return Err(Error::DiagnosticTimeout {
                        steps: s,
                        last_excess: monitor.last_excess,
                        partial: Box::new(crate::qsd::QsdEstimate {
                            samples: ens.positions(),
                            tau_corr_estimate: ens.elapsed,
                            kill_count: ens.kill_count,
                            trace: Vec::new(),
                        }),
                    });
                }
            }
            (s, Some(ens))
        }
    };

    // Dephasing.
    let n = cfg.n_replicas;
    let (starts, dephase_steps): (Vec<Walker>, u64) = if n == 1 {
        (vec![reference], 0)
    } else {
        let tau = match &cfg.tau_corr {
            TauCorr::Fixed { time } => *time,
            TauCorr::Adaptive { .. } => decor_steps as f64 * dt,
        };
        let positions = match (&cfg.dephasing, fv) {
            (Dephasing::FlemingViotReuse, Some(ens)) => ens.positions(),
            (Dephasing::FlemingViotReuse, None) => {
                let mut ens = FvEnsemble::new(sys, state, &[reference.position.clone()], n, stream.child(1))?;
                for _ in 0..sys.params.steps_for(tau) {
                    ens.step(sys)?;
                }
                ens.positions()
            }
            (Dephasing::Rejection { max_attempts }, _) => {
                dephase_by_rejection(sys, state, &reference.position, tau, n, stream.child(1), *max_attempts)?
            }
        };
        let replicas = positions
            .into_iter()
            .take(n)
            .enumerate()
            .map(|(k, p)| sys.walker(p, stream.child(2).child(k as u64 + 1)))
            .collect();
        (replicas, sys.params.steps_for(tau))
    };

    // Parallel step.
    let mut replicas = starts;
    let mut done: Vec<Option<(u64, ExitEvent)>> = vec![None; n];
    let mut elapsed = 0u64;
    let chunk = cfg.chunk.max(1);
    loop {
        if elapsed >= max_steps {
            return Err(Error::NoExitWithinBudget { state, steps: max_steps });
        }
        let end = (elapsed + chunk).min(max_steps);
        let results: Vec<Result<Option<(u64, ExitEvent)>>> = replicas
            .par_iter_mut()
            .map(|w| {
                for s in elapsed + 1..=end {
                    sys.step(w)?;
                    if !sys.contains(state, &w.position)? {
                        let (to, region_label) = sys.exit_record(state, &w.position)?;
                        return Ok(Some((
                            s,
                            ExitEvent {
                                from: state,
                                to,
                                exit_time: 0.0,
                                exit_point: w.position.clone(),
                                region_label,
                                first_exit_step: s,
                            },
                        )));
                    }
                }
                Ok(None)
            })
            .collect();
        for (k, r) in results.into_iter().enumerate() {
            done[k] = r?;
        }
        elapsed = end;
        let winner = done
            .iter()
            .enumerate()
            .filter_map(|(k, d)| d.as_ref().map(|(m, _)| (*m, k)))
            .min();
        if let Some((m, k)) = winner {
            let mut event = done[k].take().map(|(_, e)| e).expect("winner present");
            let par_steps = match cfg.clock_rule {
                ClockRule::Exact => geometric_clock(n as u64, m, k as u64 + 1),
                ClockRule::Unscaled => m,
            };
            let residence_steps = decor_steps + par_steps;
            event.exit_time = residence_steps as f64 * dt;
            event.first_exit_step = residence_steps;
            return Ok(AcceleratedExit {
                event,
                residence_steps,
                wall_steps: decor_steps + dephase_steps + m,
                parallel_steps: m,
                factor: n as f64,
            });
        }
    }
}

fn reference_exit(sys: &System, state: StateLabel, w: &Walker, s: u64) -> Result<AcceleratedExit> {
    let (to, region_label) = sys.exit_record(state, &w.position)?;
    Ok(AcceleratedExit {
        event: ExitEvent {
            from: state,
            to,
            exit_time: s as f64 * sys.params.dt,
            exit_point: w.position.clone(),
            region_label,
            first_exit_step: s,
        },
        residence_steps: s,
        wall_steps: s,
        parallel_steps: 0,
        factor: 1.0,
    })
}
