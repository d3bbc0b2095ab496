use amdkit::dynamics::*;
use amdkit::oracle::stats::{mean, std_error};
use amdkit::potential::*;
use amdkit::rng::StreamId;
use proptest::prelude::*;
use proptest::test_runner::FileFailurePersistence;

/// Batch means of `f` along one long trajectory.
fn batch_means(w: &mut Walker, s: &dyn Potential, p: &DynamicsParams, batches: usize, per: usize, f: impl Fn(&Walker) -> f64) -> Vec<f64> {
    (0..batches)
        .map(|_| {
            let mut acc = 0.0;
            for _ in 0..per {
                step(w, s, p).unwrap();
                acc += f(w);
            }
            acc / per as f64
        })
        .collect()
}

#[test]
fn overdamped_quadratic_variance_is_inverse_beta() {
    let s = Quadratic::isotropic(1, 1.0);
    let beta = 2.0;
    let p = DynamicsParams::overdamped(beta, 1e-3);
    let mut w = Walker::new(vec![0.0], StreamId::new(41, 0));
    for _ in 0..5000 {
        step(&mut w, &s, &p).unwrap();
    }
    let b = batch_means(&mut w, &s, &p, 200, 10_000, |w| w.position[0] * w.position[0]);
    assert!((mean(&b) - 1.0 / beta).abs() < 3.0 * std_error(&b), "{} +- {}", mean(&b), std_error(&b));
}

#[test]
fn langevin_equipartition() {
    let s = Quadratic::isotropic(2, 1.0);
    let beta = 1.5;
    let p = DynamicsParams::langevin(beta, 5e-3, 1.0);
    let mut w = Walker::new(vec![0.0, 0.0], StreamId::new(42, 0)).with_momentum(vec![0.0, 0.0]);
    for _ in 0..2000 {
        step(&mut w, &s, &p).unwrap();
    }
    let ke = |w: &Walker| 0.5 * w.momentum.as_ref().unwrap().iter().map(|v| v * v).sum::<f64>();
    let b = batch_means(&mut w, &s, &p, 200, 5000, ke);
    let want = 2.0 / (2.0 * beta);
    assert!((mean(&b) - want).abs() < 3.0 * std_error(&b), "{} vs {want}", mean(&b));
}

#[test]
fn high_friction_langevin_approaches_overdamped() {
    // Mean relaxation of x from 1 on V = x²/2: overdamped gives e^{-t};
    // Langevin observed at γt approaches it as γ grows.
    let s = Quadratic::isotropic(1, 1.0);
    let (beta, gamma, t, n) = (4.0, 20.0, 1.0, 1000u64);
    let od = DynamicsParams::overdamped(beta, 1e-3);
    let lg = DynamicsParams::langevin(beta, 1e-2, gamma);
    let run = |params: &DynamicsParams, duration: f64, momentum: bool, k: u64| {
        let mut w = Walker::new(vec![1.0], StreamId::new(43, u64::from(momentum)).child(k));
        if momentum {
            w = w.with_momentum(vec![0.0]);
        }
        for _ in 0..params.steps_for(duration) {
            step(&mut w, &s, params).unwrap();
        }
        w.position[0]
    };
    let xo: Vec<f64> = (0..n).map(|k| run(&od, t, false, k)).collect();
    let xl: Vec<f64> = (0..n).map(|k| run(&lg, gamma * t, true, k)).collect();
    let exact = (-t).exp();
    assert!((mean(&xo) - exact).abs() < 3.0 * std_error(&xo));
    let se = (std_error(&xo).powi(2) + std_error(&xl).powi(2)).sqrt();
    assert!((mean(&xl) - mean(&xo)).abs() < 3.0 * se + 0.02, "{} vs {}", mean(&xl), mean(&xo));
}

#[test]
fn frictionless_energy_error_is_second_order() {
    let s = Quadratic::isotropic(1, 1.0);
    let drift = |dt: f64| {
        let p = DynamicsParams { beta: 1e12, dt, gamma: Some(0.0), mass: None };
        let mut w = Walker::new(vec![1.0], StreamId::new(44, 0)).with_momentum(vec![0.0]);
        let e0 = 0.5;
        let mut worst: f64 = 0.0;
        for _ in 0..p.steps_for(20.0) {
            step(&mut w, &s, &p).unwrap();
            let e = s.value(&w.position) + 0.5 * w.momentum.as_ref().unwrap()[0].powi(2);
            worst = worst.max((e - e0).abs());
        }
        worst
    };
    let (a, b) = (drift(0.02), drift(0.01));
    assert!(a < 0.02 * 0.02);
    assert!((a / b - 4.0).abs() < 0.2, "ratio {}", a / b);
}

#[test]
fn flat_surface_with_vanishing_noise_stays_put() {
    let s = Flat { dim: 2 };
    let p = DynamicsParams::overdamped(1e12, 1e-3);
    let mut w = Walker::new(vec![0.3, -0.2], StreamId::new(45, 0));
    for _ in 0..100 {
        let before = w.position.clone();
        step(&mut w, &s, &p).unwrap();
        assert!(distance(&before, &w.position) <= 1e-5);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 32, failure_persistence: Some(Box::new(FileFailurePersistence::Off)), ..ProptestConfig::default() })]

    #[test]
    fn same_stream_same_path(seed in any::<u64>(), stream in any::<u64>(), x in -1.5f64..1.5) {
        let s = make_double_well_1d(1.0, 0.0);
        let p = DynamicsParams::overdamped(3.0, 1e-3);
        let mut a = Walker::new(vec![x], StreamId::new(seed, stream));
        let mut b = Walker::new(vec![x], StreamId::new(seed, stream));
        for _ in 0..200 {
            step(&mut a, &s, &p).unwrap();
            step(&mut b, &s, &p).unwrap();
        }
        prop_assert_eq!(a.position[0].to_bits(), b.position[0].to_bits());
        prop_assert_eq!(a.steps, 200);
    }
}
