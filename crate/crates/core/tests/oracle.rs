use std::f64::consts::PI;
use std::sync::Arc;

use amdkit::dynamics::DynamicsParams;
use amdkit::oracle::direct::{direct_exit_statistics, Initial};
use amdkit::oracle::stats::*;
use amdkit::oracle::{exit_law_from_spectrum, solve_ground_state, Domain};
use amdkit::potential::*;
use amdkit::rng::StreamId;
use amdkit::statemap::*;
use rand::Rng;
use rand_distr::{Distribution, Exp};

fn unit(surface: Surface, dt: f64) -> System {
    System::new(surface, DynamicsParams::overdamped(1.0, dt), StateDefinition::explicit(vec![Region::Interval { lo: 0.0, hi: 1.0 }]))
        .unwrap()
}

#[test]
fn flat_interval_spectrum() {
    let flat = Flat { dim: 1 };
    let dom = Domain::Interval { lo: 0.0, hi: 1.0 };
    let coarse = solve_ground_state(&flat, &dom, 1.0, 1.0 / 100.0).unwrap();
    let fine = solve_ground_state(&flat, &dom, 1.0, 1.0 / 200.0).unwrap();
    let pi2 = PI * PI;
    assert!((fine.lambda1 - pi2).abs() < 1e-3);
    assert!((fine.lambda2 / fine.lambda1 - 4.0).abs() < 1e-3);
    let ratio = (coarse.lambda1 - pi2) / (fine.lambda1 - pi2);
    assert!((ratio - 4.0).abs() < 0.05, "{ratio}");
    let nodes = fine.nodes_1d();
    let h = fine.h;
    let mass: f64 = fine.qsd_density().iter().sum::<f64>() * h;
    assert!((mass - 1.0).abs() < 1e-12);
    for (x, d) in nodes.iter().zip(fine.qsd_density()) {
        assert!((d - PI / 2.0 * (PI * x).sin()).abs() < 1e-3, "{x}: {d}");
    }
    let law = exit_law_from_spectrum(&fine, None);
    assert!((law.probabilities[0] - 0.5).abs() < 1e-9);
    assert!((law.total - 1.0).abs() < 1e-6);
}

#[test]
fn tilted_interval_split_matches_direct() {
    let surface: Surface = Arc::new(Polynomial1d::new(vec![0.0, 1.0]));
    let sys = unit(surface.clone(), 1e-5);
    let sol = solve_ground_state(surface.as_ref(), &Domain::Interval { lo: 0.0, hi: 1.0 }, 1.0, 1e-3).unwrap();
    let law = exit_law_from_spectrum(&sol, None);
    assert!((law.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    let starts = sol.sample(&mut StreamId::new(71, 1).rng(), 4000).unwrap();
    let init = Initial::Samples(starts.into_iter().map(|x| vec![x]).collect());
    let stats = direct_exit_statistics(&sys, StateLabel(0), &init, 4000, StreamId::new(71, 0), 1 << 30).unwrap();
    let (p, se) = stats.region_probability(0);
    assert!((p - law.probabilities[0]).abs() < 3.0 * se, "{p} +- {se} vs {}", law.probabilities[0]);

    let rate = fit_exponential_rate(&stats.times);
    let se = rate / (stats.times.len() as f64).sqrt();
    assert!((rate - sol.lambda1).abs() < 3.0 * se + 0.01 * sol.lambda1, "{rate} vs {}", sol.lambda1);
    let (ks, _) = ks_exponential(&stats.times).unwrap();
    assert!(ks.passes(0.01));
}

#[test]
fn corner_start_is_not_exponential() {
    let sys = unit(Arc::new(Flat { dim: 1 }), 1e-5);
    let stats = direct_exit_statistics(&sys, StateLabel(0), &Initial::Point(vec![0.02]), 2000, StreamId::new(72, 0), 1 << 30).unwrap();
    let (ks, _) = ks_exponential(&stats.times).unwrap();
    assert!(!ks.passes(0.01), "p = {}", ks.p_value);
}

#[test]
fn exact_null_ks_p_values_average_one_half() {
    let mut rng = StreamId::new(73, 0).rng();
    let exp = Exp::new(2.0).unwrap();
    let ps: Vec<f64> = (0..200)
        .map(|_| {
            let x: Vec<f64> = (0..200).map(|_| exp.sample(&mut rng)).collect();
            ks_test(&x, |t| 1.0 - (-2.0 * t).exp()).unwrap().p_value
        })
        .collect();
    assert!((mean(&ps) - 0.5).abs() < 0.1, "{}", mean(&ps));
}

#[test]
fn contingency_test_is_calibrated() {
    let mut rng = StreamId::new(74, 0).rng();
    let alpha = 0.05;
    let trials = 500;
    let rejections = (0..trials)
        .filter(|_| {
            let mut table = vec![vec![0u64; 3]; 2];
            for _ in 0..400 {
                let a = usize::from(rng.random::<f64>() < 0.4);
                let b = rng.random_range(0..3);
                table[a][b] += 1;
            }
            !contingency_independence(&table).unwrap().passes(alpha)
        })
        .count();
    let expected = alpha * trials as f64;
    let sd = (trials as f64 * alpha * (1.0 - alpha)).sqrt();
    assert!((rejections as f64 - expected).abs() < 3.0 * sd, "{rejections}");
}

#[test]
fn exact_counts_give_zero_statistic() {
    let t = chi_square(&[10, 20, 30], &[10.0, 20.0, 30.0]).unwrap();
    assert_eq!(t.statistic, 0.0);
    assert_eq!(t.p_value, 1.0);
}
