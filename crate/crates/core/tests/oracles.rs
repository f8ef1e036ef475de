//! Cross-module checks against independent closed forms, series and
//! dense reference solvers.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use tubeflow_core::discretize::{assemble_h, build_grid, phi0, FiberStencil, PotentialMode, LAMBDA0};
use tubeflow_core::geometry::{make_circle, make_ellipse, make_flat_cylinder, AmbientPoint};
use tubeflow_core::heatkernel::{evolve, renormalized_generator, StepperConfig};
use tubeflow_core::sampler::{
    condition_rejection, limit_sampler, marginal_stat, ConditioningMode, LimitLaw, RejectionOptions,
};
use tubeflow_core::spectral::{base_schrodinger_bottom, ground_state, limit_base_potential, SpectralConfig};

#[test]
fn ellipse_projection_roundtrip() {
    let c = make_ellipse(1.5, 1.0, 4096).unwrap();
    let l = c.total_length();
    for i in 0..97 {
        let s = l * i as f64 / 97.0;
        for &n in &[-0.4, -0.1, 0.0, 0.05, 0.3, 0.6] {
            let p = c.fermi_to_ambient(s, n).unwrap();
            let f = c.closest_point_projection(p).unwrap();
            let ds = (f.s - s).rem_euclid(l);
            assert!(ds.min(l - ds) < 1e-10, "s={s} n={n} got {f:?}");
            assert!((f.n - n).abs() < 1e-10, "s={s} n={n} got {f:?}");
        }
    }
}

#[test]
fn ellipse_perimeter_series() {
    // Gauss–Kummer: P = π(a+b) Σ binom(1/2, k)² h^k, h = ((a−b)/(a+b))²
    let (a, b) = (1.5f64, 1.0);
    let h = ((a - b) / (a + b)).powi(2);
    let (mut sum, mut coef, mut hk) = (0.0, 1.0, 1.0);
    for k in 0..40 {
        sum += coef * coef * hk;
        coef *= (0.5 - k as f64) / (k as f64 + 1.0);
        hk *= h;
    }
    let p = PI * (a + b) * sum;
    let c = make_ellipse(a, b, 4096).unwrap();
    assert!((c.total_length() - p).abs() < 1e-11, "{} vs {p}", c.total_length());
}

#[test]
fn ellipse_curvature_closed_form() {
    let (a, b) = (1.5, 1.0);
    let c = make_ellipse(a, b, 4096).unwrap();
    for i in 0..40 {
        let th = 2.0 * PI * i as f64 / 40.0 + 0.01;
        let f = c.closest_point_projection(AmbientPoint::new(a * th.cos(), b * th.sin())).unwrap();
        assert!(f.n.abs() < 1e-12);
        let exact = a * b / (a * a * th.sin().powi(2) + b * b * th.cos().powi(2)).powf(1.5);
        assert!((c.curvature(f.s) - exact).abs() < 1e-10 * exact, "θ={th}");
    }
    assert!((c.curvature(0.0) - a / (b * b)).abs() < 1e-12);
    let p = c.position(0.0);
    assert!((p.x - a).abs() < 1e-12 && p.y.abs() < 1e-12);
}

#[test]
fn base_bottom_matches_dense_finite_differences() {
    let c = make_ellipse(1.5, 1.0, 4096).unwrap();
    let l = c.total_length();
    let fourier = base_schrodinger_bottom(l, |s| limit_base_potential(&c, PotentialMode::Dirichlet, s), 64);
    // second-order periodic differences, Richardson-combined over two grids
    let fd = |n: usize| {
        let h = l / n as f64;
        let mut m = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 2.0 / (h * h) - 0.25 * c.curvature(i as f64 * h).powi(2);
            m[(i, (i + 1) % n)] = -1.0 / (h * h);
            m[(i, (i + n - 1) % n)] = -1.0 / (h * h);
        }
        SymmetricEigen::new(m).eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
    };
    let (e1, e2) = (fd(200), fd(400));
    let richardson = (4.0 * e2 - e1) / 3.0;
    assert!((fourier - richardson).abs() < 1e-7, "{fourier} vs {richardson}");
}

#[test]
fn flat_spectrum_is_fiber_plus_periodic_difference() {
    let l = 2.0 * PI;
    let c = make_flat_cylinder(l).unwrap();
    let (ns, nv, eps) = (64, 16, 0.2);
    let grid = build_grid(&c, ns, nv, eps).unwrap();
    let form = assemble_h(&grid, PotentialMode::Dirichlet, FiberStencil::Calibrated);
    let eig = ground_state(&form, Some(&grid), &SpectralConfig::default()).unwrap();
    let hs = l / ns as f64;
    let first_mode = 4.0 / (hs * hs) * (PI / ns as f64).sin().powi(2);
    assert!((eig.lambda - LAMBDA0 / (eps * eps)).abs() < 1e-8 * eig.lambda);
    assert!((eig.lambda2 - eig.lambda - first_mode).abs() < 1e-7, "{} vs {first_mode}", eig.lambda2 - eig.lambda);
}

#[test]
fn flat_semigroup_decays_fourier_mode() {
    let l = 2.0 * PI;
    let c = make_flat_cylinder(l).unwrap();
    let (ns, nv) = (48, 16);
    let grid = build_grid(&c, ns, nv, 0.1).unwrap();
    let form = renormalized_generator(&grid, FiberStencil::Calibrated).unwrap();
    let f = grid.sample(|s, v| phi0(v) * (3.0 * s).cos());
    let hs = l / ns as f64;
    let mode = 4.0 / (hs * hs) * (3.0 * PI / ns as f64).sin().powi(2);
    for t in [0.1, 0.5, 1.0] {
        let u = evolve(&form, &f, t, &StepperConfig::default()).unwrap();
        let decay = (-0.5 * t * mode).exp();
        let err = u.iter().zip(&f).map(|(a, b)| (a - decay * b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-9, "t={t}: {err:e}");
    }
}

/// `P(|B_r| < ε for r ≤ T)` for one-dimensional Brownian motion from 0.
fn interval_survival(eps: f64, t: f64) -> f64 {
    (0..200)
        .map(|k| {
            let m = (2 * k + 1) as f64;
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            4.0 / (m * PI) * sign * (-m * m * PI * PI * t / (8.0 * eps * eps)).exp()
        })
        .sum()
}

#[test]
fn flat_survival_matches_interval_series() {
    let c = Arc::new(make_flat_cylinder(2.0 * PI).unwrap());
    let (eps, t) = (0.5, 0.25);
    let exact = interval_survival(eps, t);
    // straight walls make the bridge-corrected step exact, so a coarse h is fine
    let plain = RejectionOptions { mode: ConditioningMode::Plain { floor: 1e-3 }, ..RejectionOptions::default() };
    let r = condition_rejection(c.clone(), eps, t, 5e-3, 20_000, 7, &plain).unwrap();
    let se = (exact * (1.0 - exact) / r.attempts as f64).sqrt();
    assert!((r.acceptance - exact).abs() < 4.0 * se, "{} vs {exact} ± {se}", r.acceptance);

    let guided = condition_rejection(c, eps, t, 5e-3, 20_000, 7, &RejectionOptions::default()).unwrap();
    assert!((guided.acceptance / exact - 1.0).abs() < 0.02, "{} vs {exact}", guided.acceptance);
}

#[test]
fn limit_brownian_motion_on_circle() {
    let c = Arc::new(make_circle(1.0).unwrap());
    let set = limit_sampler(c, 1.0, 1e-2, 40_000, 3, LimitLaw::Nu, &[]).unwrap();
    let e = marginal_stat(&set, |s| s.cos(), 1.0).unwrap();
    let exact = (-0.5f64).exp();
    assert!((e.mean - exact).abs() < 4.0 * e.stderr, "{} ± {} vs {exact}", e.mean, e.stderr);
}

#[test]
fn conditioned_sampler_is_reproducible() {
    let c = Arc::new(make_ellipse(1.5, 1.0, 1024).unwrap());
    let opts = RejectionOptions { record: vec![0.1], ..RejectionOptions::default() };
    let a = condition_rejection(c.clone(), 0.1, 0.2, 1e-2, 200, 11, &opts).unwrap();
    let b = condition_rejection(c.clone(), 0.1, 0.2, 1e-2, 200, 11, &opts).unwrap();
    let d = condition_rejection(c, 0.1, 0.2, 1e-2, 200, 12, &opts).unwrap();
    assert_eq!(a.paths.s, b.paths.s);
    assert_eq!(a.paths.n, b.paths.n);
    assert_eq!(a.paths.log_weight, b.paths.log_weight);
    assert_ne!(a.paths.s, d.paths.s);
}
