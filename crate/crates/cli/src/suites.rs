//! Suite orchestration: each suite runs its checks, fills a
//! [`ReportRecord`] and returns its artifacts in memory. Files are written
//! by the caller in a fixed order.

use std::f64::consts::PI;
use std::sync::Arc;
use std::time::Instant;

use serde_json::json;
use thiserror::Error;
use tubeflow_core::discretize::{
    assemble_h, basic_function, build_grid_shared, embed_base, phi0, FiberStencil, PotentialMode, LAMBDA0,
};
use tubeflow_core::geometry::{make_circle, make_ellipse, make_flat_cylinder, CurveGeometry, CurveKind};
use tubeflow_core::heatkernel::{
    markov_checks, renormalized_generator, semigroup_convergence, smoothed_distance, stratified_sources,
    subgaussian_verify, ultracontractive_norm, Scheme, StepperConfig, SubGaussianConfig,
};
use tubeflow_core::inequalities::{
    gs_transform_identity, ground_state_form, hardy_check, logsobolev_fit_verify, normalize_basic,
    power_identity_check, rosen_check, weighted_form_bounds, InequalityReport, Recipe, TestFunctionSet,
};
use tubeflow_core::sampler::{
    condition_rejection, limit_sampler, marginal_stat, modulus_slope, modulus_sweep, write_records,
    ConditioningMode, HMode, HTransformChain, LimitLaw, McEstimate, PathSet, RejectionOptions,
};
use tubeflow_core::spectral::{
    base_ground_mode, base_schrodinger_bottom, eigen_gap_sweep, limit_base_potential, loglog_slope, SpectralConfig,
    SweepGrid,
};

use crate::config::{ExperimentConfig, GeometryKind, SamplerMode, SchemeChoice, Suite};
use crate::report::{Cell, Check, Csv, ReportRecord};
use crate::svg::{Plot, Series};

/// Failure of the numerical machinery itself (as opposed to a failed check).
#[derive(Debug, Error)]
#[error("{suite}: {msg}")]
pub struct NumericalFailure {
    pub suite: &'static str,
    pub msg: String,
}

pub struct SuiteOutput {
    pub record: ReportRecord,
    /// `(file name, bytes)` in write order.
    pub files: Vec<(String, Vec<u8>)>,
}

trait OrNumerical<T> {
    fn or_num(self, suite: Suite) -> Result<T, NumericalFailure>;
}

impl<T, E: std::fmt::Display> OrNumerical<T> for Result<T, E> {
    fn or_num(self, suite: Suite) -> Result<T, NumericalFailure> {
        self.map_err(|e| NumericalFailure { suite: suite.name(), msg: e.to_string() })
    }
}

pub fn build_curve(cfg: &ExperimentConfig) -> Result<Arc<CurveGeometry>, NumericalFailure> {
    let g = &cfg.geometry;
    let c = match g.kind {
        GeometryKind::Flat => make_flat_cylinder(g.length),
        GeometryKind::Circle => make_circle(g.radius),
        GeometryKind::Ellipse => make_ellipse(g.a, g.b, g.n_quad),
    };
    c.map(Arc::new).map_err(|e| NumericalFailure { suite: "geometry", msg: e.to_string() })
}

pub fn stepper(cfg: &ExperimentConfig) -> StepperConfig {
    match cfg.semigroup.scheme {
        SchemeChoice::Contour => StepperConfig { scheme: Scheme::Contour, dt: cfg.semigroup.dt, nodes: cfg.semigroup.nodes },
        SchemeChoice::CrankNicolson => StepperConfig::crank_nicolson(cfg.semigroup.cn_steps),
    }
}

fn spectral_config(cfg: &ExperimentConfig) -> SpectralConfig {
    SpectralConfig { tol: cfg.spectrum.tol, max_iter: cfg.spectrum.max_iter, ..SpectralConfig::default() }
}

pub fn run_suite(cfg: &ExperimentConfig, suite: Suite) -> Result<SuiteOutput, NumericalFailure> {
    let start = Instant::now();
    let mut out = match suite {
        Suite::Spectrum => spectrum(cfg),
        Suite::Semigroup => semigroup(cfg),
        Suite::KernelBound => kernel_bound(cfg),
        Suite::Inequalities => inequalities(cfg),
        Suite::Sample => sample(cfg),
        Suite::Modulus => modulus(cfg),
    }?;
    out.record.wall_time = start.elapsed();
    Ok(out)
}

fn spread(v: &[f64]) -> f64 {
    let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    hi / lo - 1.0
}

fn spectrum(cfg: &ExperimentConfig) -> Result<SuiteOutput, NumericalFailure> {
    let err = Suite::Spectrum;
    let curve = build_curve(cfg)?;
    let sc = spectral_config(cfg);
    let (ns, nv) = (cfg.spectrum.ns, cfg.spectrum.nv);
    let sg = SweepGrid { ns, nv, mode: PotentialMode::Dirichlet, stencil: FiberStencil::Calibrated };
    let sweep = eigen_gap_sweep(curve.clone(), &cfg.eps_list, sg, &sc).or_num(err)?;
    let (_, psi) = base_ground_mode(&curve, ns, PotentialMode::Dirichlet).or_num(err)?;
    let mut rec = ReportRecord::new(Suite::Spectrum.name(), &cfg.hash());

    let mut csv = Csv::new(&["eps", "lambda", "gap", "c_env", "C_env", "l2_dist", "residual"]);
    let mut dists = Vec::new();
    let mut flat_dists = Vec::new();
    let length = curve.total_length();
    for row in &sweep.rows {
        let grid = build_grid_shared(curve.clone(), ns, nv, row.eps).or_num(err)?;
        let limit = embed_base(&grid, &psi);
        let d: Vec<f64> = row.eigen.phi.iter().zip(&limit).map(|(a, b)| a - b).collect();
        let l2 = grid.norm(&d);
        dists.push(l2);
        if curve.kind() == CurveKind::FlatCylinder {
            let exact = grid.sample(|_, v| phi0(v) / length.sqrt());
            let d: Vec<f64> = row.eigen.phi.iter().zip(&exact).map(|(a, b)| a - b).collect();
            flat_dists.push(grid.norm(&d));
        }
        csv.row(&[
            Cell::F(row.eps),
            Cell::F(row.lambda),
            Cell::F(row.gap),
            Cell::F(row.c_env),
            Cell::F(row.cap_env),
            Cell::F(l2),
            Cell::F(row.residual),
        ]);
    }

    let worst_res = sweep.rows.iter().map(|r| r.residual).fold(0.0, f64::max);
    rec.check(Check::new(
        "eigen-residual",
        worst_res <= 1e-8,
        Some(1e-8 - worst_res),
        format!("largest residual {worst_res:e}"),
    ));
    let simple = sweep.rows.iter().all(|r| r.eigen.lambda2 > r.lambda);
    rec.check(Check::new("ground-state-simple", simple, None, "λ₂ > λ₁ at every ε"));

    if curve.kind() == CurveKind::FlatCylinder {
        let gap = sweep.rows.iter().map(|r| r.gap.abs()).fold(0.0, f64::max);
        let dist = flat_dists.iter().cloned().fold(0.0, f64::max);
        rec.check(Check::new("flat-eigenvalue", gap <= 1e-6, Some(1e-6 - gap), format!("max |λ_ε − λ₀/ε²| = {gap:e}")));
        rec.check(Check::new(
            "flat-ground-state",
            dist <= 1e-6,
            Some(1e-6 - dist),
            format!("max ‖φ_ε − φ₀/√Λ‖ = {dist:e}"),
        ));
    } else {
        let oracle = base_schrodinger_bottom(length, |s| limit_base_potential(&curve, PotentialMode::Dirichlet, s), 64);
        let min_contraction = sweep.contraction.iter().cloned().fold(f64::INFINITY, f64::min);
        rec.check(Check::new(
            "gap-cauchy",
            !sweep.contraction.is_empty() && min_contraction >= 1.5,
            Some(min_contraction - 1.5),
            format!("successive-difference ratios {:?}", sweep.contraction),
        ));
        let rel = (sweep.extrapolated - oracle).abs() / oracle.abs();
        rec.check(Check::new(
            "gap-limit",
            rel <= 0.05,
            Some(0.05 - rel),
            format!("extrapolated {} vs base oracle {oracle}", sweep.extrapolated),
        ));
        rec.constant("gap_extrapolated", sweep.extrapolated);
        rec.constant("gap_oracle", oracle);
        rec.constant("gap_fitted_order", sweep.fitted_order);
    }

    let cs: Vec<f64> = sweep.rows.iter().map(|r| r.c_env).collect();
    let caps: Vec<f64> = sweep.rows.iter().map(|r| r.cap_env).collect();
    let c_min = cs.iter().cloned().fold(f64::INFINITY, f64::min);
    let cap_max = caps.iter().cloned().fold(0.0, f64::max);
    let ok = c_min > 0.0 && cap_max.is_finite() && spread(&cs) <= 0.25 && spread(&caps) <= 0.25;
    rec.check(Check::new(
        "envelope-uniform",
        ok,
        Some(0.25 - spread(&cs).max(spread(&caps))),
        format!("c_ε {cs:?}, C_ε {caps:?}"),
    ));
    rec.constant("c", c_min);
    rec.constant("C_env", cap_max);

    let mut files = vec![("spectrum.csv".to_string(), csv.into_bytes())];
    if cfg.svg {
        let plot = Plot {
            title: "eigenvalue gap".into(),
            x_label: "ε".into(),
            y_label: "λ_ε − λ₀/ε²".into(),
            log_x: true,
            log_y: false,
            series: vec![Series {
                label: "gap".into(),
                points: sweep.rows.iter().map(|r| (r.eps, r.gap)).collect(),
            }],
        };
        files.push(("spectrum_gap.svg".into(), plot.render().into_bytes()));
    }
    Ok(SuiteOutput { record: rec, files })
}

/// Smooth test functions on the unit tube for the semigroup sweep; beyond
/// the five base shapes the base frequency grows.
pub fn semigroup_functions(length: f64, count: usize) -> Vec<Box<dyn Fn(f64, f64) -> f64 + Send + Sync>> {
    let tp = 2.0 * PI / length;
    (0..count)
        .map(|k| {
            let w = tp * (1 + k / 5) as f64;
            let c = 0.2 * length;
            let f: Box<dyn Fn(f64, f64) -> f64 + Send + Sync> = match k % 5 {
                0 => Box::new(move |s, v| phi0(v) * (1.0 + 0.5 * (w * s).cos())),
                1 => Box::new(move |s, v| phi0(v) * (2.0 * w * s).sin() + 0.3 * (PI * v).sin()),
                2 => Box::new(move |s, v| (1.0 - v * v) * (1.0 + v) * (w * s).cos().exp()),
                3 => Box::new(move |s, v| {
                    let d = (s - c) / 0.4;
                    (-d * d).exp() * phi0(v)
                }),
                _ => Box::new(move |s, v| (1.0 - v * v).powi(2) * (0.5 + (3.0 * w * s).cos().powi(2))),
            };
            f
        })
        .collect()
}

fn semigroup(cfg: &ExperimentConfig) -> Result<SuiteOutput, NumericalFailure> {
    let err = Suite::Semigroup;
    let curve = build_curve(cfg)?;
    let step = stepper(cfg);
    let mut rec = ReportRecord::new(Suite::Semigroup.name(), &cfg.hash());
    let flat = curve.kind() == CurveKind::FlatCylinder;

    // semigroup limit
    let g0 = build_grid_shared(curve.clone(), cfg.ns, cfg.nv, cfg.eps_list[0]).or_num(err)?;
    let fs: Vec<Vec<f64>> = semigroup_functions(curve.total_length(), cfg.semigroup.functions)
        .iter()
        .map(|f| g0.sample(f))
        .collect();
    let rows =
        semigroup_convergence(curve.clone(), cfg.ns, cfg.nv, &cfg.eps_list, &fs, &cfg.t_list, &step).or_num(err)?;
    let mut csv = Csv::new(&["eps", "t", "function", "error"]);
    for r in &rows {
        csv.row(&[Cell::F(r.eps), Cell::F(r.t), Cell::I(r.function as u64), Cell::F(r.error)]);
    }
    let err_at = |e: f64, t: f64, f: usize| {
        rows.iter().find(|r| r.eps == e && r.t == t && r.function == f).map(|r| r.error).unwrap_or(f64::NAN)
    };
    // errors at the level of the time stepper are converged, not noise to rank
    const FLOOR: f64 = 1e-8;
    let mut monotone = true;
    let mut worst_ratio: f64 = 0.0;
    for &t in &cfg.t_list {
        for fi in 0..fs.len() {
            let e: Vec<f64> = cfg.eps_list.iter().map(|&x| err_at(x, t, fi)).collect();
            monotone &= e.windows(2).all(|w| w[1] < w[0] || w[1] <= FLOOR);
            let last = e[e.len() - 1];
            if last > FLOOR {
                worst_ratio = worst_ratio.max(last / e[0]);
            }
        }
    }
    rec.check(Check::new(
        "semigroup-monotone",
        monotone,
        None,
        format!("error decreases with ε for every (t, f), or is below {FLOOR:e}"),
    ));
    rec.check(Check::new(
        "semigroup-third",
        worst_ratio < 1.0 / 3.0,
        Some(1.0 / 3.0 - worst_ratio),
        format!("largest final/initial error ratio {worst_ratio:.4}"),
    ));

    // ultracontractivity
    let alpha = LAMBDA0 + cfg.semigroup.alpha_offset;
    let ts = &cfg.semigroup.ultra_t_list;
    let mut ucsv = Csv::new(&["eps", "t", "norm", "scaled"]);
    let mut scaled_by_eps = Vec::new();
    let mut slopes = Vec::new();
    for &eps in &cfg.eps_list {
        let grid = build_grid_shared(curve.clone(), cfg.ns, cfg.nv, eps).or_num(err)?;
        let form = renormalized_generator(&grid, FiberStencil::Calibrated).or_num(err)?;
        // on the flat cylinder every fiber is equivalent, so one fiber is the sup
        let sources: Vec<usize> = if flat {
            (0..grid.nvi()).map(|j| grid.idx(0, j)).collect()
        } else {
            stratified_sources(&grid, cfg.semigroup.ultra_sources)
        };
        let norms = ultracontractive_norm(&form, alpha, ts, &sources, &step).or_num(err)?;
        let scaled: Vec<f64> = norms.iter().zip(ts).map(|(n, t)| n * t.powf(0.75)).collect();
        for ((t, n), s) in ts.iter().zip(&norms).zip(&scaled) {
            ucsv.row(&[Cell::F(eps), Cell::F(*t), Cell::F(*n), Cell::F(*s)]);
        }
        slopes.push(loglog_slope(ts, &norms));
        scaled_by_eps.push(scaled);
    }
    let n_fit = scaled_by_eps[0].iter().cloned().fold(0.0, f64::max);
    let tol = cfg.kernel.verify_tol;
    let mut min_slack = f64::INFINITY;
    for sc in &scaled_by_eps[1..] {
        for s in sc {
            min_slack = min_slack.min((n_fit - s) / n_fit);
        }
    }
    rec.check(Check::new(
        "ultracontractive-uniform",
        scaled_by_eps.len() < 2 || min_slack >= -tol,
        Some(min_slack),
        format!("N fitted at ε={} is {n_fit}, worst relative slack {min_slack:.3e} (tolerance {tol:e})", cfg.eps_list[0]),
    ));
    if flat {
        let dev = slopes.iter().map(|s| (s + 0.75).abs()).fold(0.0, f64::max);
        rec.check(Check::new(
            "ultracontractive-exponent",
            dev <= 0.07,
            Some(0.07 - dev),
            format!("log-log slopes {slopes:?}"),
        ));
    }
    rec.constant("N", n_fit);

    // Markov property of the non-renormalized semigroup
    let mut positivity = 0;
    let mut contraction = 0;
    let mut trials = 0;
    let mut worst_neg: f64 = 0.0;
    let mut worst_ratio: f64 = 0.0;
    for &eps in &cfg.eps_list {
        let grid = build_grid_shared(curve.clone(), cfg.ns, cfg.nv, eps).or_num(err)?;
        let form = assemble_h(&grid, PotentialMode::Compensated, FiberStencil::Calibrated);
        let m = markov_checks(&form, &cfg.t_list, cfg.semigroup.markov_trials, cfg.sampler.seed, &step).or_num(err)?;
        positivity += m.positivity_violations;
        contraction += m.contraction_violations;
        trials += m.trials;
        worst_neg = worst_neg.min(m.worst_negative);
        worst_ratio = worst_ratio.max(m.worst_ratio);
    }
    rec.check(Check::new(
        "markov-positivity",
        positivity == 0,
        Some(worst_neg + 1e-10),
        format!("{positivity} violations in {trials} trials, most negative value {worst_neg:e}"),
    ));
    rec.check(Check::new(
        "markov-contraction",
        contraction == 0,
        Some(1.0 - worst_ratio),
        format!("{contraction} violations, largest sup-norm ratio {worst_ratio}"),
    ));

    let mut files = vec![
        ("semigroup.csv".to_string(), csv.into_bytes()),
        ("ultracontractivity.csv".to_string(), ucsv.into_bytes()),
    ];
    if cfg.svg {
        let series = cfg
            .t_list
            .iter()
            .map(|&t| Series {
                label: format!("t={t}"),
                points: cfg
                    .eps_list
                    .iter()
                    .map(|&e| (e, (0..fs.len()).map(|f| err_at(e, t, f)).fold(0.0, f64::max)))
                    .collect(),
            })
            .collect();
        let plot = Plot {
            title: "semigroup convergence".into(),
            x_label: "ε".into(),
            y_label: "max error".into(),
            log_x: true,
            log_y: true,
            series,
        };
        files.push(("semigroup_ladder.svg".into(), plot.render().into_bytes()));
    }
    Ok(SuiteOutput { record: rec, files })
}

fn kernel_bound(cfg: &ExperimentConfig) -> Result<SuiteOutput, NumericalFailure> {
    let err = Suite::KernelBound;
    let curve = build_curve(cfg)?;
    let sc = SubGaussianConfig {
        ts: cfg.kernel.t_list.clone(),
        sources: cfg.kernel.sources,
        verify_tol: cfg.kernel.verify_tol,
        smoothing_modes: cfg.kernel.smoothing_modes,
        ..SubGaussianConfig::default()
    };
    let fit = subgaussian_verify(curve, cfg.ns, cfg.nv, &cfg.eps_list, &sc, &stepper(cfg)).or_num(err)?;
    let mut rec = ReportRecord::new(Suite::KernelBound.name(), &cfg.hash());
    let mut csv = Csv::new(&["eps", "t", "source_s", "source_v", "target_s", "target_v", "K", "bound", "slack"]);
    for r in &fit.rows {
        csv.row(&[
            Cell::F(r.eps),
            Cell::F(r.t),
            Cell::F(r.source_s),
            Cell::F(r.source_v),
            Cell::F(r.target_s),
            Cell::F(r.target_v),
            Cell::F(r.k),
            Cell::F(r.bound),
            Cell::F(r.slack),
        ]);
    }
    let verify_slack = fit
        .rows
        .iter()
        .filter(|r| r.eps != fit.fit_eps)
        .map(|r| r.slack)
        .fold(f64::INFINITY, f64::min);
    rec.check(Check::new(
        "subgaussian-distance",
        fit.violations.is_empty() && fit.c > 0.0 && fit.b > 0.0,
        Some(verify_slack),
        format!("{} violations at the verify ε", fit.violations.len()),
    ));
    let h_worst = fit.h_violations.iter().map(|v| v.slack).fold(f64::INFINITY, f64::min);
    rec.check(Check::new(
        "subgaussian-basic-h",
        fit.h_violations.is_empty() && fit.k > 1.0,
        if h_worst.is_finite() { Some(h_worst) } else { None },
        format!("{} violations, k = {}", fit.h_violations.len(), fit.k),
    ));
    rec.detail(
        "violations",
        json!({"distance_form": fit.violations.len(), "h_form": fit.h_violations.len(), "min_slack": crate::report::num(fit.min_slack)}),
    );
    rec.constant("C", fit.c);
    rec.constant("B", fit.b);
    rec.constant("k", fit.k);
    rec.constant("C_h", fit.c_h);
    for (e, c) in &fit.c_by_eps {
        rec.constant(&format!("C_at_eps_{e}"), *c);
    }

    let mut files = vec![("kernel_bound.csv".to_string(), csv.into_bytes())];
    if cfg.svg {
        let series = cfg
            .eps_list
            .iter()
            .map(|&e| Series {
                label: format!("ε={e}"),
                points: cfg
                    .kernel
                    .t_list
                    .iter()
                    .map(|&t| {
                        let m = fit
                            .rows
                            .iter()
                            .filter(|r| r.eps == e && r.t == t)
                            .map(|r| r.slack)
                            .fold(f64::INFINITY, f64::min);
                        (t, m)
                    })
                    .collect(),
            })
            .collect();
        let plot = Plot {
            title: "smallest relative slack of the kernel bound".into(),
            x_label: "t".into(),
            y_label: "slack".into(),
            log_x: true,
            log_y: false,
            series,
        };
        files.push(("kernel_slack.svg".into(), plot.render().into_bytes()));
    }
    Ok(SuiteOutput { record: rec, files })
}

/// Collects the per-inequality rows of `inequalities.csv` and their JSON
/// objects.
struct IneqLog {
    csv: Csv,
    json: Vec<serde_json::Value>,
}

impl IneqLog {
    fn new() -> Self {
        Self { csv: Csv::new(&["check", "trials", "min_slack", "violations"]), json: Vec::new() }
    }

    fn entry(&mut self, id: &str, trials: usize, min_slack: f64, fitted: &[(String, f64)], violations: Vec<serde_json::Value>) {
        self.csv.row(&[Cell::S(id), Cell::I(trials as u64), Cell::F(min_slack), Cell::I(violations.len() as u64)]);
        let fitted: serde_json::Map<String, serde_json::Value> =
            fitted.iter().map(|(k, v)| (k.clone(), crate::report::num(*v))).collect();
        self.json.push(json!({
            "id": id,
            "trials": trials,
            "min_slack": crate::report::num(min_slack),
            "fitted_constants": fitted,
            "violations": violations,
        }));
    }

    fn report(&mut self, rec: &mut ReportRecord, r: &InequalityReport) {
        let violations = r
            .violations
            .iter()
            .map(|v| json!({"function": v.function, "params": v.params, "slack": crate::report::num(v.slack)}))
            .collect();
        self.entry(&r.id, r.trials, r.min_slack, &r.fitted, violations);
        let worst = r.worst_function.map(|f| format!(", worst member {f}")).unwrap_or_default();
        rec.check(Check::new(
            &r.id,
            r.passed(),
            Some(r.min_slack),
            format!("{} violations in {} trials{worst}", r.violations.len(), r.trials),
        ));
        for (k, v) in &r.fitted {
            rec.constant(&format!("{}_{k}", r.id), *v);
        }
    }
}

fn inequalities(cfg: &ExperimentConfig) -> Result<SuiteOutput, NumericalFailure> {
    let err = Suite::Inequalities;
    let curve = build_curve(cfg)?;
    let iq = &cfg.inequalities;
    let length = curve.total_length();
    let seed = cfg.sampler.seed;
    let sc = spectral_config(cfg);
    let mut rec = ReportRecord::new(Suite::Inequalities.name(), &cfg.hash());
    let mut log = IneqLog::new();

    let fs = TestFunctionSet::generate(iq.random, seed, length, 6, 6);
    let grid = build_grid_shared(curve.clone(), iq.ns, iq.nv, iq.eps).or_num(err)?;
    log.report(&mut rec, &hardy_check(&grid, &fs));

    let (form, eig) = ground_state_form(&grid, &sc).or_num(err)?;
    let mut worst: f64 = 0.0;
    let mut pairs = 0;
    for k in 0..iq.pairs {
        let (a, b) = (2 * k % fs.len(), (2 * k + 1) % fs.len());
        worst = worst.max(gs_transform_identity(&form, &eig.phi, &fs.members[a].sample(&grid), &fs.members[b].sample(&grid)));
        pairs += 1;
    }
    let ok = worst <= 1e-6 && eig.residual <= 1e-10;
    let v = if ok { vec![] } else { vec![json!({"largest_defect": worst, "eigen_residual": eig.residual})] };
    log.entry("gs-transform", pairs, 1e-6 - worst, &[], v);
    rec.check(Check::new(
        "gs-transform",
        ok,
        Some(1e-6 - worst),
        format!("largest relative defect {worst:e} over {pairs} pairs, eigen residual {:e}", eig.residual),
    ));

    // power identity: a smooth-function identity, so check second-order
    // convergence on nonnegative members and the tolerance on a smooth
    // Fourier member
    let fine = (cfg.spectrum.ns, cfg.spectrum.nv);
    let coarse = (fine.0 / 2, fine.1 / 2);
    let mut defects = Vec::new();
    for (ns, nv) in [coarse, fine] {
        let g = build_grid_shared(curve.clone(), ns, nv, iq.eps).or_num(err)?;
        let (f2, e2) = ground_state_form(&g, &sc).or_num(err)?;
        let smooth = g.sample(|s, _| (0.5 * (2.0 * PI * s / length).cos()).exp());
        let mut d = vec![power_identity_check(&f2, &e2.phi, &smooth, 4).or_num(err)?];
        let smooth_members = fs.nonnegative().filter(|m| {
            matches!(m.recipe, Recipe::PositiveTensor { .. } | Recipe::Basic { .. } | Recipe::FiberGround)
        });
        for m in smooth_members {
            for p in [4u32, 8] {
                d.push(power_identity_check(&f2, &e2.phi, &m.sample(&g), p).or_num(err)?);
            }
        }
        defects.push(d);
    }
    let smooth_fine = defects[1][0];
    let v = if smooth_fine <= 1e-4 { vec![] } else { vec![json!({"defect": smooth_fine})] };
    log.entry("power-identity-smooth", 1, 1e-4 - smooth_fine, &[], v);
    rec.check(Check::new(
        "power-identity-smooth",
        smooth_fine <= 1e-4,
        Some(1e-4 - smooth_fine),
        format!("p=4 smooth Fourier member on {}x{}: {smooth_fine:e}", fine.0, fine.1),
    ));
    // members already exact to rounding carry no order information
    let orders: Vec<f64> =
        defects[0].iter().zip(&defects[1]).filter(|(_, f)| **f > 1e-10).map(|(c, f)| (c / f).log2()).collect();
    let worst_order = orders.iter().cloned().filter(|x| x.is_finite()).fold(f64::INFINITY, f64::min);
    let worst_fine = defects[1].iter().cloned().fold(0.0, f64::max);
    let order_ok = worst_order >= 3f64.log2() || orders.is_empty();
    let v = if order_ok { vec![] } else { vec![json!({"smallest_order": worst_order})] };
    log.entry("power-identity-convergence", orders.len(), worst_order - 3f64.log2(), &[], v);
    rec.check(Check::new(
        "power-identity-convergence",
        order_ok,
        Some(worst_order - 3f64.log2()),
        format!("smallest observed order {worst_order:.3}; largest defect on the fine grid {worst_fine:e}"),
    ));

    let small = TestFunctionSet::generate(iq.fit_functions, seed.wrapping_add(1), length, 6, 6);
    let h_raw = smoothed_distance(length, iq.ns, 0.0, cfg.kernel.smoothing_modes);
    let hb = normalize_basic(&form, &basic_function(&grid, &h_raw));
    let wr = weighted_form_bounds(&form, &grid, &eig.phi, &small, &hb, &[-8.0, -2.0, -0.5, 0.5, 2.0, 8.0], &[2, 4, 8])
        .or_num(err)?;
    log.report(&mut rec, &wr);

    let ls = logsobolev_fit_verify(curve.clone(), cfg.ns, cfg.nv, &cfg.eps_list, &iq.theta_list, &small, iq.fit_tol)
        .or_num(err)?;
    log.report(&mut rec, &ls.report);
    let mut lcsv = Csv::new(&["eps", "theta", "function", "need", "allowed"]);
    for r in &ls.rows {
        lcsv.row(&[Cell::F(r.eps), Cell::F(r.param), Cell::I(r.function as u64), Cell::F(r.need), Cell::F(r.allowed)]);
    }
    let mut rcsv = Csv::new(&["p", "eps", "tau", "function", "need", "allowed"]);
    for &p in &iq.rosen_p {
        let rf = rosen_check(curve.clone(), cfg.ns, cfg.nv, &cfg.eps_list, &iq.tau_list, &small, p, iq.fit_tol)
            .or_num(err)?;
        log.report(&mut rec, &rf.report);
        for r in &rf.rows {
            rcsv.row(&[
                Cell::I(u64::from(p)),
                Cell::F(r.eps),
                Cell::F(r.param),
                Cell::I(r.function as u64),
                Cell::F(r.need),
                Cell::F(r.allowed),
            ]);
        }
    }

    rec.detail("inequalities", serde_json::Value::Array(log.json));
    Ok(SuiteOutput {
        record: rec,
        files: vec![
            ("inequalities.csv".into(), log.csv.into_bytes()),
            ("logsobolev.csv".into(), lcsv.into_bytes()),
            ("rosen.csv".into(), rcsv.into_bytes()),
        ],
    })
}

fn rejection_options(cfg: &ExperimentConfig, record: Vec<f64>) -> RejectionOptions {
    let mode = match cfg.sampler.mode {
        SamplerMode::Guided => ConditioningMode::Guided { max_trials: 1_000_000 },
        SamplerMode::Plain => ConditioningMode::Plain { floor: cfg.sampler.floor },
    };
    RejectionOptions { bridge_correction: true, mode, record }
}

/// Two estimates agree within three combined standard errors.
fn agree(a: &McEstimate, b: &McEstimate) -> (bool, f64) {
    let se = a.stderr.hypot(b.stderr);
    let d = (a.mean - b.mean).abs();
    if se == 0.0 {
        return (d <= 1e-12, if d <= 1e-12 { 0.0 } else { f64::INFINITY });
    }
    (d <= 3.0 * se, d / se)
}

fn est_row(csv: &mut Csv, name: &str, eps: f64, t: f64, e: &McEstimate) {
    csv.row(&[
        Cell::S(name),
        Cell::F(eps),
        Cell::F(t),
        Cell::F(e.mean),
        Cell::F(e.stderr),
        Cell::F(e.n_effective),
        Cell::I(e.n as u64),
    ]);
}

type Observable = (&'static str, Box<dyn Fn(f64) -> f64>);

fn observables(curve: &Arc<CurveGeometry>) -> Vec<Observable> {
    let l = curve.total_length();
    let c = curve.clone();
    vec![
        ("cos1", Box::new(move |s| (2.0 * PI * s / l).cos())),
        ("cos2", Box::new(move |s| (4.0 * PI * s / l).cos())),
        ("kappa2", Box::new(move |s| c.curvature(s).powi(2))),
    ]
}

fn sample(cfg: &ExperimentConfig) -> Result<SuiteOutput, NumericalFailure> {
    let err = Suite::Sample;
    let curve = build_curve(cfg)?;
    let sm = &cfg.sampler;
    let mut rec = ReportRecord::new(Suite::Sample.name(), &cfg.hash());
    let mut csv = Csv::new(&["observable", "eps", "t", "mean", "stderr", "ess", "n"]);
    let mut files = Vec::new();
    let length = curve.total_length();

    // anchor: the limit is Brownian motion on a circle of length Λ
    let inner: Vec<f64> = sm.cross_times.iter().cloned().filter(|&t| t < sm.t_end).collect();
    let main = condition_rejection(curve.clone(), sm.eps, sm.t_end, sm.h, sm.n, sm.seed, &rejection_options(cfg, inner))
        .or_num(err)?;
    let violations = main.paths.containment_violations(sm.eps);
    rec.check(Check::new(
        "containment",
        violations == 0,
        None,
        format!("{violations} recorded states outside the tube"),
    ));
    rec.constant("survival_probability", main.acceptance);
    if curve.kind() != CurveKind::Ellipse {
        let e = marginal_stat(&main.paths, |s| (2.0 * PI * s / length).cos(), sm.t_end).or_num(err)?;
        let exact = (-2.0 * PI * PI * sm.t_end / (length * length)).exp();
        est_row(&mut csv, "anchor-cos1", sm.eps, sm.t_end, &e);
        let z = (e.mean - exact).abs() / e.stderr;
        rec.check(Check::new(
            "anchor",
            z <= 3.0,
            Some(3.0 - z),
            format!("E[cos(2πs/Λ)] = {} ± {} vs {exact} (n = {})", e.mean, e.stderr, sm.n),
        ));
    }
    if sm.write_paths {
        let mut buf = Vec::new();
        write_records(&main.paths, &mut buf).or_num(err)?;
        files.push(("paths.bin".to_string(), buf));
    }

    // conditioned versus limit law, observed at the horizon
    let obs = observables(&curve);
    let mut worst_z: f64 = 0.0;
    for (k, &t) in sm.cross_times.iter().enumerate() {
        let h = sm.h.min(t / 100.0);
        let seed = sm.seed.wrapping_add(10 + k as u64);
        let cond = condition_rejection(curve.clone(), sm.eps, t, h, sm.cross_n, seed, &rejection_options(cfg, vec![]))
            .or_num(err)?;
        let lim = limit_sampler(curve.clone(), t, h, sm.cross_n, seed.wrapping_add(1000), LimitLaw::ConditionedBm, &[])
            .or_num(err)?;
        for (name, f) in &obs {
            let a = marginal_stat(&cond.paths, f, t).or_num(err)?;
            let b = marginal_stat(&lim, f, t).or_num(err)?;
            est_row(&mut csv, &format!("{name}-conditioned"), sm.eps, t, &a);
            est_row(&mut csv, &format!("{name}-limit"), 0.0, t, &b);
            worst_z = worst_z.max(agree(&a, &b).1);
        }
    }
    rec.check(Check::new(
        "conditioned-vs-limit",
        worst_z <= 3.0,
        Some(3.0 - worst_z),
        format!("largest |z| {worst_z:.3} over {} observables", 3 * sm.cross_times.len()),
    ));

    // rejection versus the discrete h-transform chain
    let he = sm.htransform_eps;
    let chain = HTransformChain::new(curve.clone(), he, sm.t_end, sm.htransform_ns, sm.htransform_nv, sm.htransform_steps, HMode::Plain)
        .or_num(err)?;
    let mid = sm.t_end / 2.0;
    let hp = chain.sample(sm.htransform_n, sm.seed.wrapping_add(2), &[mid], 16).or_num(err)?;
    let rj = condition_rejection(curve.clone(), he, sm.t_end, sm.h, sm.htransform_n, sm.seed.wrapping_add(3), &rejection_options(cfg, vec![mid]))
        .or_num(err)?;
    let mut worst_z: f64 = 0.0;
    for t in [mid, sm.t_end] {
        for (name, f) in &obs[..2] {
            let a = marginal_stat(&rj.paths, f, t).or_num(err)?;
            let b = marginal_stat(&hp, f, t).or_num(err)?;
            est_row(&mut csv, &format!("{name}-rejection"), he, t, &a);
            est_row(&mut csv, &format!("{name}-htransform"), he, t, &b);
            worst_z = worst_z.max(agree(&a, &b).1);
        }
    }
    rec.check(Check::new(
        "rejection-vs-htransform",
        worst_z <= 3.0,
        Some(3.0 - worst_z),
        format!("largest |z| {worst_z:.3} at ε = {he}"),
    ));
    let (tv, expected) = chain_tv(&chain, &hp, mid).or_num(err)?;
    rec.check(Check::new(
        "htransform-marginal",
        tv <= 1.5 * expected,
        Some(1.5 * expected - tv),
        format!("total variation {tv:.4} against the exact chain marginal, sampling level {expected:.4}"),
    ));

    files.insert(0, ("sample.csv".to_string(), csv.into_bytes()));
    Ok(SuiteOutput { record: rec, files })
}

/// Total variation between the empirical chain marginal and the exact one,
/// with the value expected from multinomial noise alone.
fn chain_tv(chain: &HTransformChain, set: &PathSet, t: f64) -> Result<(f64, f64), tubeflow_core::sampler::SamplerError> {
    let q = chain.marginal(t)?;
    let r = set.record_index(t)?;
    let grid = &chain.grid;
    let n = set.len() as f64;
    let mut freq = vec![0.0; q.len()];
    for p in 0..set.len() {
        let i = grid.s.iter().position(|&x| (x - set.s_at(p, r)).abs() < 1e-12).unwrap_or(0);
        let v = set.n_at(p, r) / grid.eps;
        let j = grid.v.iter().position(|&x| (x - v).abs() < 1e-9).unwrap_or(0);
        freq[grid.idx(i, j)] += 1.0 / n;
    }
    let tv = 0.5 * q.iter().zip(&freq).map(|(a, b)| (a - b).abs()).sum::<f64>();
    let expected = 0.5 * (2.0 / PI).sqrt() * q.iter().map(|&a| (a * (1.0 - a) / n).sqrt()).sum::<f64>();
    Ok((tv, expected))
}

fn modulus(cfg: &ExperimentConfig) -> Result<SuiteOutput, NumericalFailure> {
    let err = Suite::Modulus;
    let curve = build_curve(cfg)?;
    let md = &cfg.modulus;
    let mut rec = ReportRecord::new(Suite::Modulus.name(), &cfg.hash());
    let mut csv = Csv::new(&["eps", "lag", "moment", "stderr", "ess", "n"]);
    let record: Vec<f64> = md.lags.iter().map(|l| md.t_end - l).collect();
    let mut sweeps = Vec::new();
    for (k, &eps) in cfg.eps_list.iter().enumerate() {
        let paths = condition_rejection(
            curve.clone(),
            eps,
            md.t_end,
            md.h,
            md.n,
            cfg.sampler.seed.wrapping_add(100 + k as u64),
            &rejection_options(cfg, record.clone()),
        )
        .or_num(err)?;
        let rows = modulus_sweep(&paths.paths, &curve, eps, md.t_end, &md.lags, md.m).or_num(err)?;
        for r in &rows {
            let e = &r.estimate;
            csv.row(&[Cell::F(eps), Cell::F(r.lag), Cell::F(e.mean), Cell::F(e.stderr), Cell::F(e.n_effective), Cell::I(e.n as u64)]);
        }
        sweeps.push(rows);
    }
    let slopes: Vec<f64> = sweeps.iter().map(|r| modulus_slope(r)).collect();
    let min_slope = slopes.iter().cloned().fold(f64::INFINITY, f64::min);
    rec.check(Check::new(
        "modulus-exponent",
        min_slope >= md.min_exponent,
        Some(min_slope - md.min_exponent),
        format!("fitted exponents {slopes:?}"),
    ));
    if curve.kind() == CurveKind::FlatCylinder {
        let dev = slopes.iter().map(|s| (s - md.m as f64).abs()).fold(0.0, f64::max);
        rec.check(Check::new(
            "modulus-flat-slope",
            dev <= 0.1,
            Some(0.1 - dev),
            format!("largest |exponent − {}| = {dev:.4}", md.m),
        ));
    }
    // one constant for every ε: fitted at the largest, verified with a
    // three-standard-error allowance for the Monte Carlo noise
    let q = md.bound_exponent;
    let k_fit = sweeps[0].iter().map(|r| r.estimate.mean / r.lag.powf(q)).fold(0.0, f64::max);
    let mut min_slack = f64::INFINITY;
    for rows in &sweeps[1..] {
        for r in rows {
            let bound = k_fit * r.lag.powf(q);
            min_slack = min_slack.min((bound - (r.estimate.mean - 3.0 * r.estimate.stderr)) / bound);
        }
    }
    rec.check(Check::new(
        "modulus-uniform-constant",
        sweeps.len() < 2 || min_slack >= 0.0,
        if min_slack.is_finite() { Some(min_slack) } else { None },
        format!("K = {k_fit} for E[d^{}] ≤ K ℓ^{q}", 2 * md.m),
    ));
    rec.constant("K", k_fit);
    for (e, s) in cfg.eps_list.iter().zip(&slopes) {
        rec.constant(&format!("exponent_at_eps_{e}"), *s);
    }

    let mut files = vec![("modulus.csv".to_string(), csv.into_bytes())];
    if cfg.svg {
        let series = sweeps
            .iter()
            .zip(&cfg.eps_list)
            .map(|(rows, e)| Series {
                label: format!("ε={e}"),
                points: rows.iter().map(|r| (r.lag, r.estimate.mean)).collect(),
            })
            .collect();
        let plot = Plot {
            title: format!("E[d_L^{}] against the lag", 2 * md.m),
            x_label: "lag".into(),
            y_label: "moment".into(),
            log_x: true,
            log_y: true,
            series,
        };
        files.push(("modulus.svg".into(), plot.render().into_bytes()));
    }
    Ok(SuiteOutput { record: rec, files })
}
