use std::sync::Arc;

use amdkit::dynamics::DynamicsParams;
use amdkit::oracle::direct::{direct_exit_statistics, Initial};
use amdkit::oracle::{exit_law_from_spectrum, solve_ground_state, Domain};
use amdkit::potential::*;
use amdkit::rng::StreamId;
use amdkit::statemap::*;
use proptest::prelude::*;
use proptest::test_runner::FileFailurePersistence;

#[test]
fn free_diffusion_exits_both_ends_equally() {
    let sys = System::new(
        Arc::new(Flat { dim: 1 }),
        DynamicsParams::overdamped(1.0, 1e-4),
        StateDefinition::explicit(vec![Region::Interval { lo: 0.0, hi: 1.0 }]),
    )
    .unwrap();
    let n = 10_000;
    let stats = direct_exit_statistics(&sys, StateLabel(0), &Initial::Point(vec![0.5]), n, StreamId::new(51, 0), 1 << 30).unwrap();
    for (p, r) in stats.exit_points.iter().zip(&stats.regions) {
        assert!(p[0] <= 0.0 || p[0] >= 1.0);
        assert_eq!(*r, usize::from(p[0] >= 1.0));
    }
    let (p, se) = stats.region_probability(0);
    assert!((p - 0.5).abs() < 3.0 * se, "{p} +- {se}");
}

#[test]
fn triple_well_split_matches_spectral_oracle() {
    let beta = 4.0;
    let surface: Surface = Arc::new(make_triple_well_1d());
    let map = BasinMap::from_scan(surface.as_ref(), &[-3.0], &[3.0], &[61]).unwrap();
    let sys = System::new(surface.clone(), DynamicsParams::overdamped(beta, 1e-3), StateDefinition::basins(map)).unwrap();
    let middle = sys.classify(&[0.0]).unwrap();
    let geom = sys.geometry(middle).unwrap();
    let mut ends: Vec<f64> = geom.boundary.iter().map(|z| z.position[0]).collect();
    ends.sort_by(f64::total_cmp);
    let (lo, hi) = (ends[0], ends[1]);
    let h = (hi - lo) / 4000.0;
    let sol = solve_ground_state(surface.as_ref(), &Domain::Interval { lo, hi }, beta, h).unwrap();
    let region_of = |x: &[f64], _: usize| geom.nearest(x).unwrap().region;
    let law = exit_law_from_spectrum(&sol, Some(&region_of));
    let samples = sol.sample(&mut StreamId::new(52, 1).rng(), 4000).unwrap();
    let init = Initial::Samples(samples.into_iter().map(|x| vec![x]).collect());
    let stats = direct_exit_statistics(&sys, middle, &init, 4000, StreamId::new(52, 0), 1 << 34).unwrap();
    let r = geom.boundary[0].region;
    let (p, se) = stats.region_probability(r);
    assert!((p - law.probabilities[r]).abs() < 3.0 * se, "direct {p} +- {se}, spectral {}", law.probabilities[r]);
}

#[test]
fn double_well_basins_exit_through_the_saddle() {
    let surface: Surface = Arc::new(make_double_well_1d(1.0, 0.0));
    let map = BasinMap::from_scan(surface.as_ref(), &[-2.0], &[2.0], &[21]).unwrap();
    let sys = System::new(surface, DynamicsParams::overdamped(3.0, 1e-3), StateDefinition::basins(map)).unwrap();
    let left = sys.classify(&[-1.0]).unwrap();
    let geom = sys.geometry(left).unwrap();
    assert_eq!(geom.boundary.len(), 1);
    let stats = direct_exit_statistics(&sys, left, &Initial::Point(vec![-1.0]), 200, StreamId::new(53, 0), 1 << 30).unwrap();
    assert!(stats.regions.iter().all(|&r| r == geom.boundary[0].region));
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: Some(Box::new(FileFailurePersistence::Off)), ..ProptestConfig::default() })]

    #[test]
    fn basin_classification_is_idempotent(x in -2.5f64..2.5) {
        let surface: Surface = Arc::new(make_triple_well_1d());
        let map = BasinMap::from_scan(surface.as_ref(), &[-3.0], &[3.0], &[61]).unwrap();
        let states = StateDefinition::basins(map);
        let a = states.classify(&[x], surface.as_ref()).unwrap();
        let low = descend(surface.as_ref(), &[x], 100_000).unwrap();
        prop_assert_eq!(states.classify(&low, surface.as_ref()).unwrap(), a);
        prop_assert_eq!(states.classify(&[x], surface.as_ref()).unwrap(), a);
        prop_assert!(states.contains(a, &[x], surface.as_ref()).unwrap());
    }

    #[test]
    fn core_set_labels_are_consistent(x in -3.0f64..3.0) {
        let surface = make_double_well_1d(1.0, 0.0);
        let states = StateDefinition::core_sets(vec![
            Region::Interval { lo: -10.0, hi: -0.6 },
            Region::Interval { lo: 0.6, hi: 10.0 },
        ]).unwrap();
        let label = states.classify(&[x], &surface).unwrap();
        if x > -0.6 && x < 0.6 {
            prop_assert!(label.is_outside());
        } else {
            prop_assert!(states.contains(label, &[x], &surface).unwrap());
        }
    }
}
