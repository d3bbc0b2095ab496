use serde::{Deserialize, Serialize};

use super::AcceleratedExit;
use crate::kramers::{tad_theta, ThetaVariant};
use crate::rng::StreamId;
use crate::statemap::{BoundaryPoint, ExitEvent, StateGeometry, StateLabel, System};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bounce {
    /// x ↦ 2z − x across the crossed boundary point (1d).
    #[default]
    Reflect,
    /// Back to the last in-state position.
    RestartPrevious,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TadConfig {
    pub beta_hi: f64,
    pub beta_lo: f64,
    #[serde(default)]
    pub theta_variant: ThetaVariant,
    /// Lower bound on every barrier of the state.
    #[serde(default)]
    pub min_barrier: Option<f64>,
    /// Lower bound ν_min on the prefactors, used with confidence 1 − δ.
    #[serde(default)]
    pub min_prefactor: Option<f64>,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub bounce: Bounce,
    /// Decorrelation time at β_lo before switching temperature.
    #[serde(default)]
    pub tau_corr: f64,
    /// Dephase at β_hi (rejection, duration `tau_corr`) before the high-T run.
    #[serde(default)]
    pub equilibrate: bool,
    /// Keep running past the stopping time until every boundary region has
    /// been observed (exhaustive reference search).
    #[serde(default)]
    pub exhaustive: bool,
}

fn default_delta() -> f64 {
    0.01
}

impl TadConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta_hi > 0.0 && self.beta_lo > 0.0) || self.beta_hi > self.beta_lo {
            return Err(Error::Config(format!(
                "TAD needs 0 < beta_hi <= beta_lo (got {} and {})",
                self.beta_hi, self.beta_lo
            )));
        }
        if self.min_barrier.is_none() && self.min_prefactor.is_none() && !self.exhaustive {
            return Err(Error::Config("TAD needs min_barrier or min_prefactor".into()));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Config(format!("TAD delta must be in (0, 1) (got {})", self.delta)));
        }
        Ok(())
    }

    /// High-temperature time after which no unseen event can extrapolate
    /// below `t_lo_min`.
    pub fn stop_time(&self, t_lo_min: f64) -> f64 {
        let mut t = f64::INFINITY;
        if let Some(e) = self.min_barrier {
            t = t.min(t_lo_min * (-(self.beta_lo - self.beta_hi) * e).exp());
        }
        if let Some(nu) = self.min_prefactor {
            let l = (1.0 / self.delta).ln();
            t = t.min(l / nu * (nu * t_lo_min / l).powf(self.beta_hi / self.beta_lo));
        }
        t
    }
}

/// First high-temperature observation of one exit region.
#[derive(Debug, Clone, PartialEq)]
pub struct TadRecord {
    pub region: usize,
    pub tau_hi: f64,
    pub tau_lo: f64,
    pub theta: f64,
    pub event: ExitEvent,
}

fn boundary_for<'a>(geom: &'a StateGeometry, region: usize, x: &[f64]) -> Option<&'a BoundaryPoint> {
    let same: Vec<&BoundaryPoint> = geom.boundary.iter().filter(|b| b.region == region).collect();
    if same.is_empty() {
        return geom.nearest(x);
    }
    same.into_iter().min_by(|a, b| {
        crate::potential::distance(&a.position, x).total_cmp(&crate::potential::distance(&b.position, x))
    })
}

/// TAD exit. Streams: decorrelation = `stream.child(0)`, preparation =
/// `stream.child(1).child(attempt)`, high-temperature run = `stream.child(2)`.
pub fn tad_exit(
    sys: &System,
    state: StateLabel,
    entry: &[f64],
    cfg: &TadConfig,
    stream: StreamId,
    max_steps: u64,
) -> Result<AcceleratedExit> {
    cfg.validate()?;
    let dt = sys.params.dt;
    let geom = sys.geometry(state)?;

    let lo_sys = sys.with_params(sys.params.with_beta(cfg.beta_lo));
    let mut w = lo_sys.walker(entry.to_vec(), stream.child(0));
    let decor = lo_sys.params.steps_for(cfg.tau_corr);
    for s in 1..=decor {
        lo_sys.step(&mut w)?;
        if !lo_sys.contains(state, &w.position)? {
            let (to, region_label) = lo_sys.exit_record(state, &w.position)?;
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

    let hi_sys = sys.with_params(sys.params.with_beta(cfg.beta_hi));
    let mut start = w.position.clone();
    let mut prep_steps = 0;
    if cfg.equilibrate && decor > 0 {
        let pts = crate::qsd::dephase_by_rejection(&hi_sys, state, &start, cfg.tau_corr, 1, stream.child(1), 10_000)?;
        start = pts[0].clone();
        prep_steps = decor;
    }

    let (records, steps) = tad_search(&hi_sys, state, &geom, &start, cfg, stream.child(2), max_steps)?;
    let best = records
        .iter()
        .min_by(|a, b| a.tau_lo.total_cmp(&b.tau_lo))
        .ok_or(Error::NoExitWithinBudget { state, steps: max_steps })?;
    let mut event = best.event.clone();
    event.exit_time = decor as f64 * dt + best.tau_lo;
    let residence_steps = decor + (best.tau_lo / dt).round() as u64;
    event.first_exit_step = residence_steps;
    Ok(AcceleratedExit {
        event,
        residence_steps,
        wall_steps: decor + prep_steps + steps,
        parallel_steps: steps,
        factor: best.theta,
    })
}

/// High-temperature search with bounces; returns the first observation of
/// each region and the number of high-temperature steps used.
pub fn tad_search(
    hi_sys: &System,
    state: StateLabel,
    geom: &StateGeometry,
    start: &[f64],
    cfg: &TadConfig,
    stream: StreamId,
    max_steps: u64,
) -> Result<(Vec<TadRecord>, u64)> {
    let dt = hi_sys.params.dt;
    let n_regions = {
        let mut r: Vec<usize> = geom.boundary.iter().map(|b| b.region).collect();
        r.sort_unstable();
        r.dedup();
        r.len()
    };
    let mut w = hi_sys.walker(start.to_vec(), stream);
    let mut previous = w.position.clone();
    let mut records: Vec<TadRecord> = Vec::new();
    let mut t_stop = f64::INFINITY;
    for s in 1..=max_steps {
        hi_sys.step(&mut w)?;
        let t_hi = s as f64 * dt;
        if !hi_sys.contains(state, &w.position)? {
            let (to, region) = hi_sys.exit_record(state, &w.position)?;
            let z = boundary_for(geom, region, &w.position);
            if !records.iter().any(|r| r.region == region) {
                let barrier = z.map_or(0.0, |z| z.value - geom.min_value);
                let theta = tad_theta(cfg.beta_hi, cfg.beta_lo, barrier, cfg.theta_variant);
                records.push(TadRecord {
                    region,
                    tau_hi: t_hi,
                    tau_lo: theta * t_hi,
                    theta,
                    event: ExitEvent {
                        from: state,
                        to,
                        exit_time: t_hi,
                        exit_point: w.position.clone(),
                        region_label: region,
                        first_exit_step: s,
                    },
                });
                let t_lo_min = records.iter().map(|r| r.tau_lo).fold(f64::INFINITY, f64::min);
                t_stop = cfg.stop_time(t_lo_min);
            }
            // Bounce back into the state.
            let reflected = match (cfg.bounce, z) {
                (Bounce::Reflect, Some(z)) if w.position.len() == 1 => Some(vec![2.0 * z.position[0] - w.position[0]]),
                _ => None,
            };
            let back = match reflected {
                Some(p) if hi_sys.contains(state, &p)? => p,
                _ => previous.clone(),
            };
            w.teleport(&back);
            if let Some(p) = w.momentum.as_mut() {
                p.iter_mut().for_each(|v| *v = -*v);
            }
        }
        previous.copy_from_slice(&w.position);
        let all_seen = records.len() >= n_regions;
        if all_seen || (!cfg.exhaustive && t_hi >= t_stop) {
            return Ok((records, s));
        }
    }
    if records.is_empty() {
        return Err(Error::NoExitWithinBudget { state, steps: max_steps });
    }
    Ok((records, max_steps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::DynamicsParams;
    use crate::potential::make_triple_well_1d;
    use crate::statemap::{Region, StateDefinition};
    use std::sync::Arc;

    fn config(beta_hi: f64, beta_lo: f64) -> TadConfig {
        TadConfig {
            beta_hi,
            beta_lo,
            theta_variant: ThetaVariant::Plain,
            min_barrier: Some(0.5),
            min_prefactor: None,
            delta: 0.01,
            bounce: Bounce::Reflect,
            tau_corr: 0.0,
            equilibrate: false,
            exhaustive: false,
        }
    }

    #[test]
    fn missing_bound_is_a_config_error() {
        let cfg = TadConfig { min_barrier: None, ..config(4.0, 8.0) };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        assert!(config(8.0, 4.0).validate().is_err());
    }

    #[test]
    fn stop_time_from_barrier_bound() {
        let cfg = config(5.0, 10.0);
        assert!((cfg.stop_time(1.0) - (-2.5f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn stop_time_from_prefactor_bound() {
        let cfg = TadConfig { min_barrier: None, min_prefactor: Some(2.0), delta: 0.05, ..config(5.0, 10.0) };
        let l = 20f64.ln();
        let expect = l / 2.0 * (2.0 * 3.0 / l).sqrt();
        assert!((cfg.stop_time(3.0) - expect).abs() < 1e-12);
    }

    #[test]
    fn larger_budget_does_not_change_result() {
        let sys = System::new(
            Arc::new(make_triple_well_1d()),
            DynamicsParams::overdamped(4.5, 2e-3),
            StateDefinition::explicit(vec![Region::Interval { lo: -1.0, hi: 1.0 }]),
        );
        // Interval state around the middle well.
        let sys = sys.unwrap();
        let cfg = config(4.5, 9.0);
        for seed in 0..5 {
            let a = tad_exit(&sys, StateLabel(0), &[0.0], &cfg, StreamId::new(seed, 0), 1 << 30).unwrap();
            let b = tad_exit(&sys, StateLabel(0), &[0.0], &cfg, StreamId::new(seed, 0), 1 << 40).unwrap();
            assert_eq!(a, b);
        }
    }
}
