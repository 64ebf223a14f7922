use epikit::battery::{random_integrand_scheme, random_plane};
use epikit::envelope::{pasch_hausdorff, pasch_hausdorff_direct};
use epikit::integrand::{expectation_fn, lower_regularize, tail_expectation_below};
use epikit::space::{bounded_lipschitz_distance, inner_limit, outer_limit};
use epikit::apps::substream;
use epikit::{ApproximationScheme, DiagnosticReport, DiscreteMeasure, ExtReal, Integrand, MetricGrid, Schedules, Stage, StageKind};
use proptest::prelude::*;

fn finite() -> impl Strategy<Value = ExtReal> {
    (-50.0f64..50.0).prop_map(ExtReal::of)
}

fn extreal() -> impl Strategy<Value = ExtReal> {
    prop_oneof![6 => finite(), 1 => Just(ExtReal::PosInf), 1 => Just(ExtReal::NegInf)]
}

/// Finite or `+inf`, the values envelopes are usually taken of.
fn lsc_value() -> impl Strategy<Value = ExtReal> {
    prop_oneof![5 => finite(), 1 => Just(ExtReal::PosInf)]
}

fn line(max: usize) -> impl Strategy<Value = MetricGrid> {
    prop::collection::vec(-10.0f64..10.0, 2..max).prop_filter_map("distinct points", |mut v| {
        v.sort_by(f64::total_cmp);
        v.dedup_by(|a, b| (*a - *b).abs() < 1e-6);
        (v.len() >= 2).then(|| MetricGrid::line(&v).unwrap())
    })
}

fn line_and_values(max: usize) -> impl Strategy<Value = (MetricGrid, Vec<ExtReal>)> {
    line(max).prop_flat_map(|g| {
        let n = g.len();
        (Just(g), prop::collection::vec(lsc_value(), n))
    })
}

fn measure(n: usize) -> impl Strategy<Value = DiscreteMeasure> {
    prop::collection::vec(0.0f64..1.0, n).prop_filter_map("positive mass", |w| {
        let s: f64 = w.iter().sum();
        (s > 1e-3).then(|| DiscreteMeasure::from_dense(&w.iter().map(|x| x / s).collect::<Vec<_>>()).unwrap())
    })
}

proptest! {
    #[test]
    fn plus_minus_parts_recover_finite_values(a in finite()) {
        let diff = a.plus_part().to_f64() - a.minus_part().to_f64();
        prop_assert!((diff - a.to_f64()).abs() <= 1e-12);
    }

    #[test]
    fn plus_inf_absorbs_everything(a in extreal()) {
        prop_assert!((ExtReal::PosInf + a).is_pos_inf());
        prop_assert!((a + ExtReal::PosInf).is_pos_inf());
    }

    #[test]
    fn extreal_json_round_trip(a in extreal()) {
        let s = serde_json::to_string(&a).unwrap();
        let b: ExtReal = serde_json::from_str(&s).unwrap();
        prop_assert!(ExtReal::same_kind(a, b));
        prop_assert_eq!(a.finite().map(f64::to_bits), b.finite().map(f64::to_bits));
    }

    #[test]
    fn line_scan_equals_direct((g, h) in line_and_values(40), kappa in 0.0f64..20.0) {
        let fast = pasch_hausdorff(&g, &h, kappa).unwrap();
        let slow = pasch_hausdorff_direct(&g, &h, kappa).unwrap();
        for (a, b) in fast.values.iter().zip(&slow.values) {
            prop_assert!(ExtReal::same_kind(*a, *b));
            prop_assert!(!a.is_finite() || ExtReal::abs_diff(*a, *b) <= 1e-12);
        }
    }

    #[test]
    fn envelope_is_monotone_in_modulus((g, h) in line_and_values(30), k1 in 0.0f64..10.0, dk in 0.0f64..10.0) {
        let lo = pasch_hausdorff(&g, &h, k1).unwrap().values;
        let hi = pasch_hausdorff(&g, &h, k1 + dk).unwrap().values;
        for i in 0..g.len() {
            prop_assert!(lo[i] <= hi[i]);
            prop_assert!(hi[i] <= h[i]);
        }
    }

    #[test]
    fn envelope_is_lipschitz_and_idempotent(
        (g, h) in line(30).prop_flat_map(|g| { let n = g.len(); (Just(g), prop::collection::vec(finite(), n)) }),
        kappa in 0.0f64..10.0,
    ) {
        let e = pasch_hausdorff(&g, &h, kappa).unwrap().values;
        for i in 0..g.len() {
            for j in 0..g.len() {
                let gap = (e[i].to_f64() - e[j].to_f64()).abs();
                prop_assert!(gap <= kappa * g.dist(i, j) + 1e-9);
            }
        }
        let ee = pasch_hausdorff(&g, &e, kappa).unwrap().values;
        for (a, b) in e.iter().zip(&ee) {
            prop_assert!(ExtReal::abs_diff(*a, *b) <= 1e-9);
        }
    }

    #[test]
    fn plane_envelope_stays_below_input(seed in any::<u64>(), kappa in 0.0f64..5.0) {
        let mut rng = substream(seed, 0);
        let g = random_plane(&mut rng, 12);
        let h: Vec<ExtReal> = (0..g.len()).map(|i| ExtReal::of(g.point(i)[0].sin() * 3.0)).collect();
        let e = pasch_hausdorff(&g, &h, kappa).unwrap().values;
        prop_assert!(e.iter().zip(&h).all(|(a, b)| a <= b));
    }

    #[test]
    fn bounded_lipschitz_is_a_metric(
        (g, p, q, r) in line(8).prop_flat_map(|g| { let n = g.len(); (Just(g), measure(n), measure(n), measure(n)) })
    ) {
        let d = |a: &DiscreteMeasure, b: &DiscreteMeasure| bounded_lipschitz_distance(&g, a, b).unwrap();
        prop_assert_eq!(d(&p, &q).to_bits(), d(&q, &p).to_bits());
        prop_assert!(d(&p, &p).abs() <= 1e-12);
        prop_assert!(d(&p, &r) <= d(&p, &q) + d(&q, &r) + 1e-9);
        prop_assert!(d(&p, &q) >= 0.0);
    }

    #[test]
    fn expectation_is_affine_in_the_measure(
        (p, q, rows) in (2usize..6, 1usize..6).prop_flat_map(|(n_xi, n_x)| (
            measure(n_xi),
            measure(n_xi),
            prop::collection::vec(prop::collection::vec(finite(), n_x), n_xi),
        )),
        t in 0.0f64..=1.0,
    ) {
        let f = Integrand::from_rows(rows).unwrap();
        let mix = DiscreteMeasure::mixture(&p, &q, t).unwrap();
        let (ep, eq, em) = (expectation_fn(&f, &p), expectation_fn(&f, &q), expectation_fn(&f, &mix));
        for x in 0..f.n_x() {
            let want = (1.0 - t) * ep[x].to_f64() + t * eq[x].to_f64();
            prop_assert!((em[x].to_f64() - want).abs() <= 1e-9);
        }
    }

    #[test]
    fn lower_tail_mass_shrinks_as_level_grows(
        (p, rows) in (1usize..6).prop_flat_map(|n_xi| (measure(n_xi), prop::collection::vec(prop::collection::vec(extreal(), 1), n_xi))),
        k in 0.0f64..40.0,
        dk in 0.0f64..40.0,
    ) {
        let f = Integrand::from_rows(rows).unwrap();
        prop_assert!(tail_expectation_below(&f, &p, 0, k) <= tail_expectation_below(&f, &p, 0, k + dk));
    }

    #[test]
    fn lower_regularization_is_a_minorant_and_idempotent((g, h) in line_and_values(25), r in 0.01f64..3.0) {
        let eps = [r];
        let lr = lower_regularize(&g, &h, &eps);
        prop_assert!(lr.iter().zip(&h).all(|(a, b)| a <= b));
        prop_assert_eq!(lower_regularize(&g, &lr, &eps), lr);
    }

    #[test]
    fn inner_limit_inside_outer_limit(
        (g, sets) in line(12).prop_flat_map(|g| {
            let n = g.len();
            (Just(g), prop::collection::vec(prop::collection::btree_set(0..n, 0..n), 2..10))
        }),
        t in 0usize..5,
    ) {
        let sets: Vec<Vec<usize>> = sets.into_iter().map(|s| s.into_iter().collect()).collect();
        let eps = [0.5, 0.1];
        let inner = inner_limit(&g, &sets, &eps, t);
        let outer = outer_limit(&g, &sets, &eps, t);
        prop_assert!(inner.iter().all(|x| outer.contains(x)));
    }

    #[test]
    fn scheme_json_round_trip_is_identity(seed in any::<u64>()) {
        let mut rng = substream(seed, 1);
        let s = random_integrand_scheme(&mut rng, 3, 6, 5);
        let text = serde_json::to_string(&s).unwrap();
        let back: ApproximationScheme = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(serde_json::to_string(&back).unwrap(), text);
    }

    #[test]
    fn report_json_round_trip_is_identity(passed in any::<bool>(), lhs in extreal(), seed in any::<u64>()) {
        let sched = Schedules::defaults(0.1, 0.2, 1.0, 8, 1e-6);
        let stages = vec![
            Stage::new("h", StageKind::Hypothesis, true),
            Stage::new("c", StageKind::Conclusion, passed).with_values(lhs, ExtReal::ZERO, lhs),
        ];
        let r = DiagnosticReport::from_stages("demo", stages, &sched, 8).with_seed(seed);
        let back: DiagnosticReport = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        prop_assert_eq!(serde_json::to_string(&back).unwrap(), serde_json::to_string(&r).unwrap());
    }
}
