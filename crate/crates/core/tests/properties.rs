use proptest::prelude::*;

use biopsy_core::geometry::alignment_rms;
use biopsy_core::stats::{paired_t_test, two_way_anova, variance_reproducibility_test};
use biopsy_core::{
    rigid_align, zone_error, Ellipsoid, Level, Mat3, PairedSample, Position, RigidTransform,
    Segment, Sphere, Vec3,
};

fn vec3(range: f64) -> impl Strategy<Value = Vec3> {
    (-range..range, -range..range, -range..range).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

fn rigid() -> impl Strategy<Value = RigidTransform> {
    (vec3(1.0), -3.2f64..3.2, vec3(80.0)).prop_filter_map("degenerate axis", |(axis, angle, t)| {
        axis.normalized()
            .filter(|_| axis.norm() > 0.1)
            .map(|a| RigidTransform::from_axis_angle(a, angle, t))
    })
}

fn gland() -> impl Strategy<Value = Ellipsoid> {
    (vec3(10.0), 10.0f64..30.0, 10.0f64..30.0, 10.0f64..30.0, vec3(1.0), -3.0f64..3.0)
        .prop_filter_map("degenerate axis", |(c, a, b, d, axis, angle)| {
            let axis = axis.normalized().filter(|_| axis.norm() > 0.1)?;
            Ellipsoid::new(c, Vec3::new(a, b, d), Mat3::rotation(axis, angle)).ok()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn zone_error_is_frame_invariant(p in vec3(60.0), c in vec3(40.0), r in 0.5f64..6.0, t in rigid()) {
        let zone = Sphere::new(c, r).unwrap();
        let moved = zone.transformed(&t);
        let e0 = zone_error(p, &zone);
        let e1 = zone_error(t.apply(p), &moved);
        prop_assert!(e0 >= 0.0);
        prop_assert!((e0 - e1).abs() < 1e-9);
    }

    #[test]
    fn rigid_transforms_preserve_distances(a in vec3(60.0), b in vec3(60.0), t in rigid()) {
        let d0 = a.distance(b);
        let d1 = t.apply(a).distance(t.apply(b));
        prop_assert!((d0 - d1).abs() < 1e-9);
        let back = t.inverse().apply(t.apply(a));
        prop_assert!(back.distance(a) < 1e-9);
        prop_assert!(t.rotation().orthonormality_defect() < 1e-12);
        prop_assert!((t.rotation().determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn clipped_segment_lies_in_gland(g in gland(), a in vec3(50.0), b in vec3(50.0)) {
        prop_assume!(a.distance(b) > 1e-3);
        let s = Segment::new(a, b).unwrap();
        if let Some(c) = g.clip_segment(&s) {
            prop_assert!(c.length() <= s.length() + 1e-9);
            for k in 0..=10 {
                let q = c.point_at(k as f64 / 10.0);
                prop_assert!(g.implicit(q) <= 1e-9, "point {k} off by {}", g.implicit(q));
                // On the original segment.
                let (dist, _) = biopsy_core::geometry::point_segment_distance(q, &s);
                prop_assert!(dist < 1e-7);
            }
            // Each clipped end is either an original end or on the surface.
            for (end, orig) in [(c.a, s.a), (c.b, s.b)] {
                prop_assert!(end == orig || g.implicit(end).abs() < 1e-9);
            }
        } else {
            prop_assert!(!(g.strictly_contains(a) && g.strictly_contains(b)));
        }
    }

    #[test]
    fn clipping_commutes_with_rigid_motion(g in gland(), a in vec3(50.0), b in vec3(50.0), t in rigid()) {
        prop_assume!(a.distance(b) > 1e-3);
        let s = Segment::new(a, b).unwrap();
        let l0 = g.clip_segment(&s).map_or(0.0, |c| c.length());
        let l1 = g.transformed(&t).clip_segment(&s.transformed(&t)).map_or(0.0, |c| c.length());
        prop_assert!((l0 - l1).abs() < 1e-6);
    }

    #[test]
    fn alignment_recovers_transforms(t in rigid(), pts in prop::collection::vec(vec3(40.0), 4..12)) {
        let source = pts;
        let target: Vec<Vec3> = source.iter().map(|&p| t.apply(p)).collect();
        match rigid_align(&source, &target) {
            Ok(fit) => {
                prop_assert!(alignment_rms(&fit, &source, &target) < 1e-8);
                prop_assert!(fit.rotation().orthonormality_defect() < 1e-12);
            }
            // Only nearly collinear random sets may be rejected.
            Err(e) => prop_assert!(e.to_string().contains("collinear"), "{e}"),
        }
    }

    #[test]
    fn t_test_is_shift_and_scale_invariant(
        pairs in prop::collection::vec((0.0f64..20.0, 0.0f64..20.0), 3..60),
        shift in -50.0f64..50.0,
        scale in 0.1f64..10.0,
    ) {
        let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let base = PairedSample::new(a.clone(), b.clone()).unwrap();
        let moved = PairedSample::new(
            a.iter().map(|v| v * scale + shift).collect(),
            b.iter().map(|v| v * scale + shift).collect(),
        ).unwrap();
        match (paired_t_test(&base), paired_t_test(&moved)) {
            (Ok(r0), Ok(r1)) => {
                prop_assert!((r0.t - r1.t).abs() < 1e-6 * (1.0 + r0.t.abs()));
                prop_assert!((r0.p_two_sided - r1.p_two_sided).abs() < 1e-8);
                let sw = paired_t_test(&base.swapped()).unwrap();
                prop_assert!((sw.t + r0.t).abs() < 1e-9 * (1.0 + r0.t.abs()));
                prop_assert!((sw.p_two_sided - r0.p_two_sided).abs() < 1e-12);
            }
            (Err(_), _) | (_, Err(_)) => {}
        }
        // Squared deviations ignore shifts and scale quadratically.
        if let (Ok(v0), Ok(v1)) = (variance_reproducibility_test(&base), variance_reproducibility_test(&moved)) {
            prop_assert!((v0.t - v1.t).abs() < 1e-6 * (1.0 + v0.t.abs()));
        }
    }

    #[test]
    fn anova_f_ignores_a_common_shift(
        values in prop::collection::vec(-10.0f64..10.0, 24),
        shift in -100.0f64..100.0,
    ) {
        let levels: Vec<Level> = (0..24).map(|i| Level::ALL[(i / 2) % 3]).collect();
        let positions: Vec<Position> = (0..24).map(|i| Position::ALL[i % 2]).collect();
        let shifted: Vec<f64> = values.iter().map(|v| v + shift).collect();
        let a = two_way_anova(&values, &levels, &positions).unwrap();
        let b = two_way_anova(&shifted, &levels, &positions).unwrap();
        for (x, y) in [(a.factor_a, b.factor_a), (a.factor_b, b.factor_b), (a.interaction, b.interaction)] {
            prop_assert!((x.ss - y.ss).abs() < 1e-7 * (1.0 + x.ss));
            prop_assert!((x.p - y.p).abs() < 1e-7);
        }
        let parts = a.factor_a.ss + a.factor_b.ss + a.interaction.ss + a.residual.ss;
        prop_assert!((parts - a.total_ss).abs() < 1e-8 * (1.0 + a.total_ss));
    }
}
