use mmaf::coupling::{exact_gap_prob, first_gap, gap_event, gap_union, Sign};
use mmaf::occupation::{functional_a, integrate, occupation_count, occupation_sample};
use mmaf::paths::bridge_crossing_prob;
use mmaf::report::format_real;
use mmaf::{
    apply_flow_map, apply_flow_map_with, Domain, DrivingEnsemble, FlowOptions, PeriodicFunction, TimeGrid, Variant,
};
use proptest::prelude::*;

fn variant() -> impl Strategy<Value = Variant> {
    prop_oneof![Just(Variant::Full), Just(Variant::Plus), Just(Variant::Minus)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn flows_satisfy_structural_invariants(
        seed in any::<u64>(),
        lo in -6i64..2,
        len in 1i64..14,
        steps in 1usize..120,
        horizon in 0.05f64..3.0,
        variant in variant(),
        bridge in any::<bool>(),
    ) {
        let hi = lo + len - 1;
        let grid = TimeGrid::new(horizon, steps).unwrap();
        let e = DrivingEnsemble::sample(lo, hi, grid, seed, 0).unwrap();
        let domain = Domain::new(lo, hi).unwrap();
        let flow = apply_flow_map_with(&e, domain, FlowOptions { variant, bridge }).unwrap();
        prop_assert_eq!(flow.structural_check().total(), 0);
        for i in 0..=steps {
            let row = flow.row(i);
            prop_assert!(row.windows(2).all(|w| w[0] <= w[1]));
            let masses: u32 = flow.partition_at(i).clusters.iter().map(|c| c.mass).sum();
            prop_assert_eq!(masses as i64, len);
        }
        prop_assert_eq!(flow.row(0), &(lo..=hi).map(|k| k as f64).collect::<Vec<_>>()[..]);
    }

    #[test]
    fn merged_particles_never_separate(seed in any::<u64>(), steps in 2usize..100) {
        let grid = TimeGrid::new(2.0, steps).unwrap();
        let e = DrivingEnsemble::sample(0, 7, grid, seed, 3).unwrap();
        let flow = apply_flow_map(&e, Domain::new(0, 7).unwrap(), Variant::Full).unwrap();
        for k in 0..7 {
            if let Some(i) = flow.first_meeting_index(k, k + 1).unwrap() {
                for s in i..=steps {
                    prop_assert_eq!(flow.position(k, s).unwrap(), flow.position(k + 1, s).unwrap());
                }
            }
        }
    }

    #[test]
    fn occupation_is_additive_and_counts_clusters(seed in any::<u64>(), cut in 0.05f64..0.95) {
        let grid = TimeGrid::new(1.0, 50).unwrap();
        let e = DrivingEnsemble::sample(-6, 12, grid, seed, 0).unwrap();
        let flow = apply_flow_map(&e, Domain::new(-6, 12).unwrap(), Variant::Full).unwrap();
        let f = PeriodicFunction::sin2pi();
        let (a, b) = (0.0, 6.0);
        let c = a + cut * (b - a);
        let whole = integrate(&flow, a, b, 1.0, &f).unwrap();
        let split = integrate(&flow, a, c, 1.0, &f).unwrap() + integrate(&flow, c, b, 1.0, &f).unwrap();
        prop_assert!((whole - split).abs() < 1e-12);
        let one = PeriodicFunction::one();
        let sample = occupation_sample(&flow, (1, 6), 1.0, &one, 0.0).unwrap();
        let total: f64 = sample.values.iter().sum();
        prop_assert_eq!(total as usize, occupation_count(&flow, a, b, 1.0).unwrap());
        for k in 1..=6 {
            prop_assert_eq!(sample.get(k).unwrap(), functional_a(&flow, k, 1.0, &one, 0.0).unwrap());
        }
    }

    #[test]
    fn functionals_are_linear(seed in any::<u64>(), alpha in -3.0f64..3.0, beta in -3.0f64..3.0, offset in 0.0f64..1.0) {
        let grid = TimeGrid::new(0.5, 20).unwrap();
        let e = DrivingEnsemble::sample(-4, 10, grid, seed, 1).unwrap();
        let flow = apply_flow_map(&e, Domain::new(-4, 10).unwrap(), Variant::Full).unwrap();
        let f = PeriodicFunction::sin2pi();
        let g = PeriodicFunction::half_indicator();
        let h = PeriodicFunction::linear_combination(alpha, &f, beta, &g);
        for k in 1..=6 {
            let lhs = functional_a(&flow, k, 0.5, &h, offset).unwrap();
            let rhs = alpha * functional_a(&flow, k, 0.5, &f, offset).unwrap()
                + beta * functional_a(&flow, k, 0.5, &g, offset).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-9);
        }
    }

    #[test]
    fn gap_event_ignores_other_drivers(seed in any::<u64>(), other in any::<u64>(), j in 0u32..4, plus in any::<bool>()) {
        let grid = TimeGrid::new(0.5, 40).unwrap();
        let e = DrivingEnsemble::sample(-8, 8, grid, seed, 0).unwrap();
        let donor = DrivingEnsemble::sample(-8, 8, grid, other, 0).unwrap();
        let (sign, used) = if plus { (Sign::Plus, 0..=j as i64 + 1) } else { (Sign::Minus, -(j as i64) - 1..=0) };
        let mut spliced = e.clone();
        for k in -8..=8 {
            if !used.contains(&k) {
                spliced = spliced.with_path(k, donor.path(k).unwrap()).unwrap();
            }
        }
        prop_assert_eq!(
            gap_event(&e, 0, j, 0.5, sign, false).unwrap(),
            gap_event(&spliced, 0, j, 0.5, sign, false).unwrap()
        );
    }

    #[test]
    fn gap_union_grows_with_n(seed in any::<u64>(), bridge in any::<bool>()) {
        let grid = TimeGrid::new(0.25, 30).unwrap();
        let e = DrivingEnsemble::sample(-12, 12, grid, seed, 0).unwrap();
        for sign in [Sign::Plus, Sign::Minus] {
            prop_assert_eq!(
                gap_union(&e, 0, 1, 0.25, sign, bridge).unwrap(),
                gap_event(&e, 0, 1, 0.25, sign, bridge).unwrap()
            );
            let mut prev = false;
            for n in 1..=10 {
                let now = gap_union(&e, 0, n, 0.25, sign, bridge).unwrap();
                prop_assert!(!prev || now);
                prev = now;
            }
            if !bridge {
                let first = first_gap(&e, 0, 10, 0.25, sign, false).unwrap();
                let direct = (1..=10).find(|&j| gap_event(&e, 0, j, 0.25, sign, false).unwrap());
                prop_assert_eq!(first, direct);
            }
        }
    }

    #[test]
    fn exact_gap_probability_is_a_decreasing_probability(j in 0u32..8, t in 0.01f64..4.0, dt in 0.001f64..1.0) {
        let p = exact_gap_prob(j, t).unwrap();
        prop_assert!(p > 0.0 && p < 1.0);
        prop_assert!(exact_gap_prob(j, t + dt).unwrap() < p);
        prop_assert!(exact_gap_prob(j + 1, t).unwrap() <= p);
    }

    #[test]
    fn bridge_probability_is_symmetric_and_bounded(d0 in 0.0f64..3.0, d1 in 0.0f64..3.0, s in 0.01f64..4.0, dt in 1e-4f64..1.0) {
        let p = bridge_crossing_prob(d0, d1, s, dt).unwrap();
        prop_assert!((0.0..=1.0).contains(&p));
        prop_assert_eq!(p, bridge_crossing_prob(d1, d0, s, dt).unwrap());
        prop_assert!(bridge_crossing_prob(d0 + 0.1, d1, s, dt).unwrap() <= p);
    }

    #[test]
    fn sampling_is_deterministic_and_range_independent(seed in any::<u64>(), rep in 0u64..1000, k in -5i64..5) {
        let grid = TimeGrid::new(1.0, 16).unwrap();
        let a = DrivingEnsemble::sample(-5, 5, grid, seed, rep).unwrap();
        let b = DrivingEnsemble::sample(k, 9, grid, seed, rep).unwrap();
        prop_assert_eq!(a.path(k).unwrap(), b.path(k).unwrap());
        let fine = DrivingEnsemble::sample(-5, 5, TimeGrid::new(1.0, 32).unwrap(), seed, rep).unwrap();
        let coarse = fine.coarsen(2).unwrap();
        let fp = fine.path(k).unwrap();
        let cp = coarse.path(k).unwrap();
        for i in 0..=16 {
            prop_assert_eq!(cp[i], fp[2 * i]);
        }
    }

    #[test]
    fn grid_endpoints_are_exact(horizon in 1e-3f64..100.0, steps in 1usize..5000) {
        let grid = TimeGrid::new(horizon, steps).unwrap();
        prop_assert_eq!(grid.time(0), 0.0);
        prop_assert_eq!(grid.time(steps), horizon);
        prop_assert_eq!(grid.index_of(horizon).unwrap(), steps);
        prop_assert!(grid.index_of(horizon * 1.5).is_err());
    }

    #[test]
    fn formatted_reals_round_trip(x in any::<f64>().prop_filter("finite", |x| x.is_finite())) {
        let s = format_real(x);
        prop_assert_eq!(s.parse::<f64>().unwrap().to_bits(), x.to_bits());
    }
}
