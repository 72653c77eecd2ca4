//! Randomized invariants of the field, kernel and metric layers.

use std::f64::consts::SQRT_2;

use num_complex::Complex64;
use proptest::prelude::*;

use lfpp_core::conformal::Region;
use lfpp_core::experiments::events::{across, around, InitialEvent};
use lfpp_core::gff::{add_scalar, heat_mollify, localized_mollify, translate};
use lfpp_core::grid::{FieldKind, GridField, GridSpec};
use lfpp_core::lfpp::{build_graph, build_graph_valid};
use lfpp_core::scaling::ScalingTable;

fn c(x: f64, y: f64) -> Complex64 {
    Complex64::new(x, y)
}

fn field_from(spec: GridSpec, vals: &[f64]) -> GridField {
    GridField::new(spec, vals.to_vec(), FieldKind::Deterministic).unwrap()
}

fn values(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0f64..2.0, n * n)
}

fn king(dx: i64, dy: i64, s: f64) -> f64 {
    let (a, b) = (dx.unsigned_abs().max(dy.unsigned_abs()) as f64, dx.unsigned_abs().min(dy.unsigned_abs()) as f64);
    (a - b + SQRT_2 * b) * s
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn zero_field_matches_king_metric(i0 in 0usize..20, j0 in 0usize..20, i1 in 0usize..20, j1 in 0usize..20, s in 0.01f64..1.0) {
        let spec = GridSpec::new(20, 20, s, c(-1.0, 0.5)).unwrap();
        let g = build_graph_valid(&GridField::constant(spec, 0.0), 0.7).unwrap();
        let d = g.distance(spec.node(i0, j0), spec.node(i1, j1)).unwrap().raw.unwrap();
        let want = king(i1 as i64 - i0 as i64, j1 as i64 - j0 as i64, s);
        prop_assert!((d - want).abs() <= 1e-9 * want.max(s));
    }

    #[test]
    fn weyl_scaling_by_a_constant(vals in values(12), cst in -3.0f64..3.0, xi in 0.05f64..1.0, p in 0usize..144, q in 0usize..144) {
        let spec = GridSpec::new(12, 12, 0.1, c(0.0, 0.0)).unwrap();
        let h = field_from(spec, &vals);
        let g = build_graph_valid(&h, xi).unwrap();
        let gc = build_graph_valid(&add_scalar(&h, cst), xi).unwrap();
        let (z, w) = (spec.node_at(p), spec.node_at(q));
        let a = g.distance(z, w).unwrap();
        let b = gc.distance(z, w).unwrap();
        let want = (xi * cst).exp() * a.raw.unwrap();
        prop_assert!((b.raw.unwrap() - want).abs() <= 1e-12 * want.max(f64::MIN_POSITIVE));
        prop_assert_eq!(a.geodesic, b.geodesic);
    }

    #[test]
    fn distances_are_symmetric_and_obey_the_triangle_inequality(vals in values(10), a in 0usize..100, b in 0usize..100, m in 0usize..100) {
        let spec = GridSpec::new(10, 10, 0.1, c(0.0, 0.0)).unwrap();
        let g = build_graph_valid(&field_from(spec, &vals), 0.5).unwrap();
        let d = |x: usize, y: usize| g.distance(spec.node_at(x), spec.node_at(y)).unwrap().raw.unwrap();
        let (ab, ba) = (d(a, b), d(b, a));
        prop_assert!((ab - ba).abs() <= 1e-12 * ab.max(1e-300));
        prop_assert!(ab <= (d(a, m) + d(m, b)) * (1.0 + 1e-12));
        prop_assert_eq!(d(a, a), 0.0);
    }

    #[test]
    fn translation_is_exact(vals in values(16), di in -3i64..=3, dj in -3i64..=3, p in (4usize..12, 4usize..12), q in (4usize..12, 4usize..12)) {
        let s = 0.125;
        let spec = GridSpec::new(16, 16, s, c(0.0, 0.0)).unwrap();
        let h = field_from(spec, &vals);
        let b = c(di as f64 * s, dj as f64 * s);
        let shifted = translate(&h, b).unwrap();
        // Lattice-aligned rectangles with half-spacing slack.
        let rect = |o: Complex64| Region::rect(o.re + 3.5 * s, o.im + 3.5 * s, o.re + 12.5 * s - s, o.im + 12.5 * s - s);
        let g = build_graph(&shifted, &rect(c(0.0, 0.0)), 0.4).unwrap();
        let gh = build_graph(&h, &rect(b), 0.4).unwrap();
        let (z, w) = (spec.node(p.0, p.1), spec.node(q.0, q.1));
        let lhs = g.distance(z, w).unwrap();
        let rhs = gh.distance(z + b, w + b).unwrap();
        prop_assert_eq!(lhs.raw.unwrap(), rhs.raw.unwrap());
    }

    #[test]
    fn unit_ratio_is_one(q in 0.5f64..4.0, eps in 0.03f64..0.2, t in 0.5f64..2.0) {
        let grid: Vec<f64> = (0..10).map(|k| 0.4 * 0.5f64.powi(k)).collect();
        let mut table = ScalingTable::power_law(0.2, 3.0, 1.3, &grid).unwrap();
        table.q_hat = Some(q);
        prop_assert!((table.scaling_ratio(1.0, eps, t).unwrap() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn mollifiers_are_linear(f in values(40), g in values(40), a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let spec = GridSpec::new(40, 40, 0.025, c(0.0, 0.0)).unwrap();
        let (ff, gg) = (field_from(spec, &f), field_from(spec, &g));
        let mix: Vec<f64> = f.iter().zip(&g).map(|(x, y)| a * x + b * y).collect();
        let combo = field_from(spec, &mix);
        for (lhs, mf, mg) in [
            (heat_mollify(&combo, 0.05).unwrap(), heat_mollify(&ff, 0.05).unwrap(), heat_mollify(&gg, 0.05).unwrap()),
            (localized_mollify(&combo, 0.05).unwrap(), localized_mollify(&ff, 0.05).unwrap(), localized_mollify(&gg, 0.05).unwrap()),
        ] {
            prop_assert_eq!(&lhs.valid, &mf.valid);
            for k in 0..spec.len() {
                if lhs.valid[k] {
                    let want = a * mf.values[k] + b * mg.values[k];
                    prop_assert!((lhs.values[k] - want).abs() <= 1e-12 * (1.0 + want.abs()) * 8.0);
                }
            }
        }
    }

    #[test]
    fn initial_event_is_monotone_in_c(
        fam in prop::collection::vec((0.1f64..5.0, 0.1f64..5.0), 1..4),
        refs in (0.1f64..5.0, 0.1f64..5.0),
        ratios in (1.0f64..3.0, 1.0f64..3.0),
        c1 in 0.1f64..20.0,
        c2 in 0.1f64..20.0,
    ) {
        let around_family: Vec<f64> = fam.iter().map(|p| p.0).collect();
        let across_family: Vec<f64> = fam.iter().map(|p| p.1).collect();
        let sup_around = around_family.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let inf_across = across_family.iter().copied().fold(f64::INFINITY, f64::min);
        let c_min = (sup_around / (ratios.0 * refs.1)).max(refs.0 / (ratios.1 * inf_across));
        let ev = InitialEvent {
            around_family,
            across_family,
            around_ref: refs.0,
            across_ref: refs.1,
            ratio_sup: ratios.0,
            invratio_sup: ratios.1,
            c_min,
        };
        let (lo, hi) = if c1 <= c2 { (c1, c2) } else { (c2, c1) };
        prop_assert!(!ev.holds(lo) || ev.holds(hi));
        let (s_lo, s_hi) = (ev.slacks(lo), ev.slacks(hi));
        prop_assert!(s_lo.0 <= s_hi.0 && s_lo.1 <= s_hi.1);
        let both = |s: (f64, f64)| s.0 >= -1e-12 && s.1 >= -1e-12;
        prop_assert_eq!(ev.holds(hi), both(s_hi) || (c_min - hi).abs() <= 1e-12 * hi);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn annulus_ratios_ignore_a_global_scalar(vals in values(33), cst in -2.0f64..2.0) {
        let spec = GridSpec::new(33, 33, 1.0 / 32.0, c(0.0, 0.0)).unwrap();
        let x = spec.center();
        let h = field_from(spec, &vals);
        let region = Region::closed_annulus(x, 0.1, 0.45).unwrap();
        let g = build_graph(&h, &region, 0.3).unwrap();
        let gc = build_graph(&add_scalar(&h, cst), &region, 0.3).unwrap();
        let ratio = |g: &lfpp_core::lfpp::MetricGraph| around(g, x, 0.15, 0.4).unwrap() / across(g, x, 0.15, 0.25).unwrap();
        let (r0, r1) = (ratio(&g), ratio(&gc));
        prop_assert!((r0 - r1).abs() <= 1e-12 * r0);
    }
}
