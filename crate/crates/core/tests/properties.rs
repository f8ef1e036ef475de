use approx::assert_relative_eq;
use proptest::prelude::*;
use tubeflow_core::discretize::{assemble_h, build_grid, FiberStencil, PotentialMode};
use tubeflow_core::geometry::{make_circle, make_ellipse};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn circle_fermi_roundtrip(r in 0.5f64..3.0, u in 0.0f64..1.0, w in -0.45f64..0.45) {
        let c = make_circle(r).unwrap();
        let (s, n) = (u * c.total_length(), w * r);
        let f = c.closest_point_projection(c.fermi_to_ambient(s, n).unwrap()).unwrap();
        prop_assert!(c.geodesic_distance(f.s, s) < 1e-10);
        prop_assert!((f.n - n).abs() < 1e-10);
    }

    #[test]
    fn circle_potential_is_quarter_curvature_squared(r in 0.5f64..3.0, s in 0.0f64..10.0, w in -0.45f64..0.45) {
        let c = make_circle(r).unwrap();
        let n = w * r;
        // constant curvature: only κ²/(4ρ²) survives
        let rho = 1.0 - n / r;
        assert_relative_eq!(c.potential_u(s, n), 0.25 / (r * r * rho * rho), max_relative = 1e-12);
        assert_relative_eq!(c.density_rho(s, n), rho, max_relative = 1e-14);
    }

    #[test]
    fn geodesic_distance_is_a_metric(a in 0.0f64..20.0, b in 0.0f64..20.0, d in 0.0f64..20.0) {
        let c = make_ellipse(1.5, 1.0, 4096).unwrap();
        let l = c.total_length();
        let (ab, bd, ad) = (c.geodesic_distance(a, b), c.geodesic_distance(b, d), c.geodesic_distance(a, d));
        prop_assert!(ab <= 0.5 * l + 1e-12);
        assert_relative_eq!(ab, c.geodesic_distance(b, a), epsilon = 1e-12);
        prop_assert!(ad <= ab + bd + 1e-12);
    }

    #[test]
    fn tube_form_is_symmetric(seed in any::<u64>(), eps in 0.05f64..0.4) {
        let c = make_ellipse(1.5, 1.0, 4096).unwrap();
        let grid = build_grid(&c, 24, 8, eps).unwrap();
        let form = assemble_h(&grid, PotentialMode::Compensated, FiberStencil::Calibrated);
        let mut x = seed | 1;
        let mut next = || {
            x ^= x << 13;
            x ^= x >> 7;
            x ^= x << 17;
            (x >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let f: Vec<f64> = (0..form.dim()).map(|_| next()).collect();
        let g: Vec<f64> = (0..form.dim()).map(|_| next()).collect();
        let (fg, gf) = (form.form(&f, &g), form.form(&g, &f));
        assert_relative_eq!(fg, gf, epsilon = 1e-9 * (1.0 + fg.abs()), max_relative = 1e-12);
    }
}
