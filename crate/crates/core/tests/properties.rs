use proptest::prelude::*;
use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;
use rwtree::cascade::{cascade_measure_masses, derivative_martingale};
use rwtree::extremes::{centered_max, gumbel_mixture_cdf, point_pattern, tail_rate, PairDepthHistogram};
use rwtree::field::sample_field;
use rwtree::gaussian::sample_brw;
use rwtree::stats::{binomial_ci, ks_two_sample, weighted_linfit, CompensatedSum};
use rwtree::tree::{common_ancestor_depth, common_ancestor_depth_of_indices, leaf_of_point, location};
use rwtree::TreeShape;

fn shape_strategy() -> impl Strategy<Value = TreeShape> {
    (2usize..=5, 0usize..=6).prop_map(|(b, n)| TreeShape::new(b, n).unwrap())
}

proptest! {
    #[test]
    fn flat_index_round_trip(shape in shape_strategy(), pick in any::<u64>()) {
        let level = (pick % (shape.depth() as u64 + 1)) as usize;
        let idx = (pick / 7) as usize % shape.level_len(level);
        let addr = shape.address_at(level, idx).unwrap();
        prop_assert_eq!(addr.depth(), level);
        prop_assert_eq!(shape.flat_index(&addr).unwrap(), shape.level_offset(level) + idx);
        let parsed: rwtree::TreeAddress = addr.to_string().parse().unwrap();
        prop_assert_eq!(parsed, addr);
    }

    #[test]
    fn leaf_locations_invert(shape in shape_strategy(), pick in any::<u64>()) {
        let n = shape.depth();
        let idx = pick as usize % shape.num_leaves();
        let leaf = shape.address_at(n, idx).unwrap();
        let x = location(&leaf, shape.branching());
        prop_assert!((0.0..1.0).contains(&x));
        prop_assert_eq!(leaf_of_point(x, &shape).unwrap(), leaf);
    }

    #[test]
    fn ancestor_depths_agree(shape in shape_strategy(), a in any::<u64>(), c in any::<u64>()) {
        let n = shape.depth();
        let (i, j) = (a as usize % shape.num_leaves(), c as usize % shape.num_leaves());
        let (u, v) = (shape.address_at(n, i).unwrap(), shape.address_at(n, j).unwrap());
        let d = common_ancestor_depth(&u, &v);
        prop_assert_eq!(d, common_ancestor_depth(&v, &u));
        prop_assert_eq!(d, common_ancestor_depth_of_indices(i, j, n, shape.branching()));
        prop_assert_eq!(u.ancestor(d), v.ancestor(d));
        prop_assert!(d == n || u.ancestor(d + 1) != v.ancestor(d + 1));
    }

    #[test]
    fn field_invariants(seed in any::<u64>(), t in 0.01f64..50.0, b in 2usize..=3, n in 0usize..=6) {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        let f = sample_field(TreeShape::new(b, n).unwrap(), t, &mut rng).unwrap();
        prop_assert_eq!(f.values()[0], t);
        prop_assert!(f.values().iter().all(|&v| v >= 0.0 && v.is_finite()));
        prop_assert!(f.zero_subtrees_consistent());
    }

    #[test]
    fn pattern_at_depth_zero_is_the_max(seed in any::<u64>(), t in 0.1f64..100.0, n in 1usize..=7) {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        let f = sample_field(TreeShape::new(2, n).unwrap(), t, &mut rng).unwrap();
        let c = centered_max(&f).unwrap();
        let p = point_pattern(&f, 0).unwrap();
        prop_assert_eq!(p.points.len(), 1);
        prop_assert_eq!(p.points[0].height, c.centered);
        let full = point_pattern(&f, n).unwrap();
        prop_assert_eq!(full.points.len(), 1 << n);
        prop_assert!(full.points.iter().all(|q| (0.0..1.0).contains(&q.location)));
    }

    #[test]
    fn pair_counts_total_binomial(seed in any::<u64>(), offset in -1.0f64..4.0, n in 1usize..=8) {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        let f = sample_field(TreeShape::new(2, n).unwrap(), 5.0 * n as f64, &mut rng).unwrap();
        let mut h = PairDepthHistogram::new(n);
        h.add_field(&f, offset).unwrap();
        let k = h.qualifying_leaves;
        prop_assert_eq!(h.total_pairs(), k * k.saturating_sub(1) / 2);
        let m: Vec<f64> = (0..=n / 2).map(|r| h.middle_band_mass(r)).collect();
        prop_assert!(m.windows(2).all(|w| w[1] <= w[0] + 1e-15));
    }

    #[test]
    fn cascade_total_is_derivative_martingale(seed in any::<u64>(), n in 0usize..=10, m in 0usize..=10) {
        let m = m.min(n);
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        let f = sample_brw(TreeShape::new(2, n).unwrap(), &mut rng);
        let d = derivative_martingale(&f);
        let z: f64 = cascade_measure_masses(&f, m).unwrap().into_iter().collect::<CompensatedSum>().value();
        prop_assert!((z - d).abs() <= 1e-12 * d.abs().max(1e-300));
    }

    #[test]
    fn gumbel_mixture_monotone(draws in prop::collection::vec(0.0f64..5.0, 1..20), c in 0.01f64..10.0) {
        let k = tail_rate(2);
        let g: Vec<f64> = (0..80).map(|i| gumbel_mixture_cdf(c, -6.0 + 0.15 * i as f64, &draws, k)).collect();
        prop_assert!(g.windows(2).all(|w| w[1] >= w[0]));
        prop_assert!(g.iter().all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn ks_of_identical_samples_is_zero(xs in prop::collection::vec(-100.0f64..100.0, 1..200)) {
        prop_assert_eq!(ks_two_sample(&xs, &xs).unwrap().statistic, 0.0);
    }

    #[test]
    fn binomial_interval_contains_estimate(k in 0u64..500, extra in 0u64..500) {
        let n = k + extra + 1;
        let (lo, hi) = binomial_ci(k, n, 0.95).unwrap();
        let p = k as f64 / n as f64;
        prop_assert!(lo <= p && p <= hi);
        prop_assert!(k > 0 || lo == 0.0);
    }

    #[test]
    fn linfit_recovers_exact_lines(a in -10.0f64..10.0, s in -10.0f64..10.0, w in prop::collection::vec(0.1f64..10.0, 3..20)) {
        let x: Vec<f64> = (0..w.len()).map(|i| i as f64 * 0.5).collect();
        let y: Vec<f64> = x.iter().map(|x| a + s * x).collect();
        let fit = weighted_linfit(&x, &y, &w).unwrap();
        prop_assert!((fit.slope - s).abs() < 1e-12 * (1.0 + s.abs()) * 10.0);
        prop_assert!((fit.intercept - a).abs() < 1e-11 * (1.0 + a.abs()) * 10.0);
    }
}
