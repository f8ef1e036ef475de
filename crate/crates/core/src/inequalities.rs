//! Direct checks of the functional inequalities behind the kernel bound:
//! Hardy, the ground-state transform identity and its power version, the
//! exponentially weighted form estimate, `L²` log-Sobolev and the Rosen
//! bound for `−log φ_ε`.
//!
//! Slack is always "right side minus left side" in the direction that makes
//! `slack ≥ 0` a pass. Inequalities with abstract constants are handled by
//! the fit-then-verify protocol: the constants are fitted on the largest ε
//! and must hold unchanged on every smaller one.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::discretize::{
    assemble_h, assemble_sasaki, build_grid_shared, grad_norm_eps_interior, phi0, DiscretizeError, FiberStencil,
    FormOperator, PotentialMode, Renormalization, TubeGrid, LAMBDA0,
};
use crate::geometry::{boundary_distance, CurveGeometry};
use crate::spectral::{ground_state, EigenPair, SpectralConfig, SpectralError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InequalityError {
    #[error(transparent)]
    Discretize(#[from] DiscretizeError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error("entropy of the zero function")]
    ZeroFunction,
    #[error("invalid input: {0}")]
    Invalid(String),
}

/// How a test function is built from `(s, v)`; recipes are evaluated on any
/// grid, so the same set can be reused across ε.
#[derive(Debug, Clone, PartialEq)]
pub enum Recipe {
    /// `Σ_k (a_k cos + b_k sin)(2πks/Λ) · Σ_j c_j sin(jπ(v+1)/2)`.
    Tensor { s_modes: Vec<(usize, f64, f64)>, v_modes: Vec<(usize, f64)> },
    /// `exp(Σ_k (a_k cos + b_k sin)(2πks/Λ)) · φ₀(v)^q`, nonnegative.
    PositiveTensor { s_modes: Vec<(usize, f64, f64)>, q: f64 },
    /// `φ₀(v)`.
    FiberGround,
    /// `d e^{−d/w}` with `d` the distance to the wall on one side, times a
    /// Gaussian window in `s`.
    BoundaryBump { width: f64, side: f64, s_center: f64, s_width: f64 },
    /// `exp(Σ_k …)(s)`, constant along fibers.
    Basic { s_modes: Vec<(usize, f64, f64)> },
}

#[derive(Debug, Clone)]
pub struct TestFunction {
    pub id: usize,
    pub label: String,
    pub recipe: Recipe,
    pub nonnegative: bool,
}

fn fourier(modes: &[(usize, f64, f64)], s: f64, length: f64) -> f64 {
    modes
        .iter()
        .map(|&(k, a, b)| {
            let w = 2.0 * PI * k as f64 * s / length;
            a * w.cos() + b * w.sin()
        })
        .sum()
}

fn periodic_gap(a: f64, b: f64, length: f64) -> f64 {
    let d = (a - b).rem_euclid(length);
    d.min(length - d)
}

impl TestFunction {
    pub fn eval(&self, s: f64, v: f64, length: f64) -> f64 {
        if v.abs() >= 1.0 && !matches!(self.recipe, Recipe::Basic { .. }) {
            return 0.0;
        }
        match &self.recipe {
            Recipe::Tensor { s_modes, v_modes } => {
                let fv: f64 = v_modes.iter().map(|&(j, c)| c * (0.5 * j as f64 * PI * (v + 1.0)).sin()).sum();
                fourier(s_modes, s, length) * fv
            }
            Recipe::PositiveTensor { s_modes, q } => fourier(s_modes, s, length).exp() * phi0(v).max(0.0).powf(*q),
            Recipe::FiberGround => phi0(v),
            Recipe::BoundaryBump { width, side, s_center, s_width } => {
                let d = if *side > 0.0 { 1.0 - v } else { 1.0 + v };
                let d = d.clamp(0.0, 2.0);
                let ds = periodic_gap(s, *s_center, length) / s_width;
                d * (-d / width).exp() * (-ds * ds).exp()
            }
            Recipe::Basic { s_modes } => fourier(s_modes, s, length).exp(),
        }
    }

    pub fn sample(&self, grid: &TubeGrid) -> Vec<f64> {
        let length = grid.curve.total_length();
        grid.sample(|s, v| self.eval(s, v, length))
    }
}

/// Random Fourier–fiber tensors plus adversarial members.
#[derive(Debug, Clone)]
pub struct TestFunctionSet {
    pub seed: u64,
    pub members: Vec<TestFunction>,
}

impl TestFunctionSet {
    /// `random` randomized members followed by the fixed adversarial list.
    /// `s_max`/`v_max` cap the mode numbers so the members stay resolved on
    /// the grids they will be sampled on.
    pub fn generate(random: usize, seed: u64, length: f64, s_max: usize, v_max: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut members = Vec::with_capacity(random + 12);
        let push = |label: String, recipe: Recipe, nonnegative: bool, members: &mut Vec<TestFunction>| {
            let id = members.len();
            members.push(TestFunction { id, label, recipe, nonnegative });
        };
        let s_max = s_max.max(1);
        let v_max = v_max.max(1);
        for r in 0..random {
            let n_s = rng.random_range(1..=3usize);
            let s_modes: Vec<(usize, f64, f64)> = (0..n_s)
                .map(|_| {
                    (
                        rng.random_range(0..=s_max),
                        2.0 * rng.random::<f64>() - 1.0,
                        2.0 * rng.random::<f64>() - 1.0,
                    )
                })
                .collect();
            if r % 2 == 0 {
                let n_v = rng.random_range(1..=3usize);
                let v_modes = (0..n_v)
                    .map(|_| (rng.random_range(1..=v_max), 2.0 * rng.random::<f64>() - 1.0))
                    .collect();
                push(format!("tensor-{r}"), Recipe::Tensor { s_modes, v_modes }, false, &mut members);
            } else {
                let q = 0.5 + 1.5 * rng.random::<f64>();
                // keep the exponent moderate so the members stay well scaled
                let s_modes = s_modes.into_iter().map(|(k, a, b)| (k, 0.7 * a, 0.7 * b)).collect();
                push(format!("positive-{r}"), Recipe::PositiveTensor { s_modes, q }, true, &mut members);
            }
        }
        push("fiber-ground".into(), Recipe::FiberGround, true, &mut members);
        for &width in &[0.02, 0.05, 0.1] {
            for &side in &[-1.0, 1.0] {
                push(
                    format!("bump-w{width}-side{side}"),
                    Recipe::BoundaryBump { width, side, s_center: 0.3 * length, s_width: 0.15 * length },
                    true,
                    &mut members,
                );
            }
        }
        push("basic-smooth".into(), Recipe::Basic { s_modes: vec![(1, 0.8, 0.0)] }, true, &mut members);
        push("basic-peaked".into(), Recipe::Basic { s_modes: vec![(1, 1.5, 0.0), (2, 0.7, 0.3)] }, true, &mut members);
        push(
            "grid-scale".into(),
            Recipe::Tensor { s_modes: vec![(s_max, 1.0, 0.0)], v_modes: vec![(v_max, 1.0)] },
            false,
            &mut members,
        );
        Self { seed, members }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn nonnegative(&self) -> impl Iterator<Item = &TestFunction> {
        self.members.iter().filter(|f| f.nonnegative)
    }
}

#[derive(Debug, Clone)]
pub struct InequalityViolation {
    pub function: usize,
    /// Free-form parameter description, e.g. `a=2,p=4`.
    pub params: String,
    pub slack: f64,
}

#[derive(Debug, Clone)]
pub struct InequalityReport {
    pub id: String,
    pub trials: usize,
    pub min_slack: f64,
    pub worst_function: Option<usize>,
    pub fitted: Vec<(String, f64)>,
    pub violations: Vec<InequalityViolation>,
}

impl InequalityReport {
    fn new(id: &str) -> Self {
        Self {
            id: id.to_string(),
            trials: 0,
            min_slack: f64::INFINITY,
            worst_function: None,
            fitted: Vec::new(),
            violations: Vec::new(),
        }
    }

    fn record(&mut self, function: usize, params: String, slack: f64, tol: f64) {
        self.trials += 1;
        if slack < self.min_slack {
            self.min_slack = slack;
            self.worst_function = Some(function);
        }
        if slack < -tol {
            self.violations.push(InequalityViolation { function, params, slack });
        }
    }

    pub fn passed(&self) -> bool {
        self.trials > 0 && self.violations.is_empty()
    }
}

fn normalized(f: &[f64], w: f64) -> Vec<f64> {
    let n = (f.iter().map(|x| x * x).sum::<f64>() * w).sqrt();
    if n == 0.0 {
        return f.to_vec();
    }
    f.iter().map(|x| x / n).collect()
}

/// `q_Sa(f) − ¼ Σ f²/δ² w_Sa` on the ε-free Sasaki form, per `L²`-normalized
/// member.
pub fn hardy_check(grid: &TubeGrid, fs: &TestFunctionSet) -> InequalityReport {
    let sasaki = assemble_sasaki(grid);
    let inv_d2: Vec<f64> = (0..grid.len())
        .map(|k| {
            let (_, j) = grid.ij(k);
            boundary_distance(grid.v[j]).powi(-2)
        })
        .collect();
    let slacks: Vec<f64> = fs
        .members
        .par_iter()
        .map(|m| {
            let f = normalized(&m.sample(grid), grid.w_sa);
            let lhs = sasaki.form(&f, &f);
            let rhs = 0.25 * f.iter().zip(&inv_d2).map(|(x, d)| x * x * d).sum::<f64>() * grid.w_sa;
            lhs - rhs
        })
        .collect();
    let mut rep = InequalityReport::new("hardy");
    for (m, s) in fs.members.iter().zip(slacks) {
        rep.record(m.id, String::new(), s, 1e-10);
    }
    rep
}

/// Relative gap between `B⁰(φf, φg)` and `Σ_e w φ_aφ_b Δf Δg`; `form`
/// should be renormalized by the computed `λ_ε`. The gap is measured
/// against the size of the cancelling terms, `|edge sum| + λ_ε Σ φ²|fg| m`.
pub fn gs_transform_identity(form: &FormOperator, phi: &[f64], f: &[f64], g: &[f64]) -> f64 {
    let pf: Vec<f64> = phi.iter().zip(f).map(|(p, x)| p * x).collect();
    let pg: Vec<f64> = phi.iter().zip(g).map(|(p, x)| p * x).collect();
    let lhs = form.form(&pf, &pg);
    let rhs = form.weighted_edge_form(phi, f, g);
    let mut abs_edges = 0.0;
    for e in &form.edges {
        if let Some(b) = e.b {
            abs_edges += (e.w * phi[e.a] * phi[b] * (f[e.a] - f[b]) * (g[e.a] - g[b])).abs();
        }
    }
    let bulk: f64 = pf.iter().zip(&pg).zip(&form.mass).map(|((a, b), m)| (a * b).abs() * m).sum();
    let scale = abs_edges + form.shift().abs() * bulk;
    if scale == 0.0 {
        return (lhs - rhs).abs();
    }
    (lhs - rhs).abs() / scale
}

fn powi_vec(f: &[f64], p: i32) -> Vec<f64> {
    f.iter().map(|x| x.powi(p)).collect()
}

fn times(phi: &[f64], f: &[f64]) -> Vec<f64> {
    phi.iter().zip(f).map(|(a, b)| a * b).collect()
}

fn check_even(p: u32) -> Result<(), InequalityError> {
    if p < 2 || p % 2 != 0 {
        return Err(InequalityError::Invalid(format!("p must be an even integer ≥ 2, got {p}")));
    }
    Ok(())
}

/// Relative gap in `B⁰(φf^{p/2}, φf^{p/2}) = p²/(4(p−1)) B⁰(φf, φf^{p−1})`.
pub fn power_identity_check(form: &FormOperator, phi: &[f64], f: &[f64], p: u32) -> Result<f64, InequalityError> {
    check_even(p)?;
    let half = times(phi, &powi_vec(f, p as i32 / 2));
    let lhs = form.form(&half, &half);
    let pf = times(phi, f);
    let pq = times(phi, &powi_vec(f, p as i32 - 1));
    let pf_ = p as f64;
    let rhs = pf_ * pf_ / (4.0 * (pf_ - 1.0)) * form.form(&pf, &pq);
    let scale = lhs.abs().max(rhs.abs());
    Ok(if scale == 0.0 { 0.0 } else { (lhs - rhs).abs() / scale })
}

/// `‖f‖_{ε,p}^p = Σ φ² f^p m`.
pub fn weighted_p_norm_p(form: &FormOperator, phi: &[f64], f: &[f64], p: u32) -> f64 {
    f.iter().zip(phi).zip(&form.mass).map(|((x, ph), m)| ph * ph * x.powi(p as i32) * m).sum()
}

/// Scale a basic function so that its closed-tube gradient satisfies
/// `‖dh̄‖_ε ≤ 1` everywhere on the form's grid.
pub fn normalize_basic(form: &FormOperator, h: &[f64]) -> Vec<f64> {
    let g = grad_norm_eps_interior(form, h).into_iter().fold(0.0, f64::max);
    if g > 1.0 {
        h.iter().map(|x| x / g).collect()
    } else {
        h.to_vec()
    }
}

/// `B⁰(e^{ah̄}φf, e^{−ah̄}φf^{p−1}) + (a²p/2)‖f‖_{ε,p}^p − (2/p)B⁰(φf^{p/2}, φf^{p/2})`
/// for every nonnegative member, `a` and `p`, with members normalized to
/// `‖f‖_{ε,p} = 1`.
pub fn weighted_form_bounds(
    form: &FormOperator,
    grid: &TubeGrid,
    phi: &[f64],
    fs: &TestFunctionSet,
    h_basic: &[f64],
    a_list: &[f64],
    p_list: &[u32],
) -> Result<InequalityReport, InequalityError> {
    for &p in p_list {
        check_even(p)?;
    }
    let members: Vec<&TestFunction> = fs.nonnegative().collect();
    let results: Vec<Vec<(usize, String, f64)>> = members
        .par_iter()
        .map(|m| {
            let raw = m.sample(grid);
            let mut out = Vec::new();
            for &p in p_list {
                let n = weighted_p_norm_p(form, phi, &raw, p).powf(1.0 / p as f64);
                let f: Vec<f64> = raw.iter().map(|x| x / n).collect();
                let half = times(phi, &powi_vec(&f, p as i32 / 2));
                let rhs = 2.0 / p as f64 * form.form(&half, &half);
                for &a in a_list {
                    let up: Vec<f64> = (0..f.len()).map(|k| (a * h_basic[k]).exp() * phi[k] * f[k]).collect();
                    let down: Vec<f64> =
                        (0..f.len()).map(|k| (-a * h_basic[k]).exp() * phi[k] * f[k].powi(p as i32 - 1)).collect();
                    let lhs = form.form(&up, &down) + 0.5 * a * a * p as f64;
                    out.push((m.id, format!("a={a},p={p}"), lhs - rhs));
                }
            }
            out
        })
        .collect();
    let mut rep = InequalityReport::new("weighted-form");
    for (id, params, slack) in results.into_iter().flatten() {
        rep.record(id, params, slack, 1e-6);
    }
    Ok(rep)
}

/// Weight of the entropy and norm integrals.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntropyWeight {
    /// `μ_Sa`.
    Sasaki,
    /// `φ_ε² μ_Sa`.
    GroundState,
}

#[derive(Debug, Clone, Copy)]
pub struct EntropyFunctional {
    pub p: u32,
    pub weight: EntropyWeight,
}

/// `(Σ |f|^p w)^{1/p}`.
pub fn p_norm(f: &[f64], p: u32, weights: &[f64]) -> f64 {
    f.iter().zip(weights).map(|(x, w)| x.abs().powi(p as i32) * w).sum::<f64>().powf(1.0 / p as f64)
}

/// `Σ f^p log(f/‖f‖_p) w` with `0·log 0 = 0`.
pub fn entropy(f: &[f64], p: u32, weights: &[f64]) -> Result<f64, InequalityError> {
    if f.iter().any(|&x| x < 0.0) {
        return Err(InequalityError::Invalid("entropy needs a nonnegative function".into()));
    }
    let n = p_norm(f, p, weights);
    if n == 0.0 {
        return Err(InequalityError::ZeroFunction);
    }
    Ok(f.iter()
        .zip(weights)
        .map(|(&x, &w)| if x == 0.0 { 0.0 } else { x.powi(p as i32) * (x / n).ln() * w })
        .sum())
}

impl EntropyFunctional {
    pub fn weights(&self, form: &FormOperator, phi: &[f64]) -> Vec<f64> {
        match self.weight {
            EntropyWeight::Sasaki => form.mass.clone(),
            EntropyWeight::GroundState => form.mass.iter().zip(phi).map(|(m, p)| m * p * p).collect(),
        }
    }

    pub fn eval(&self, form: &FormOperator, phi: &[f64], f: &[f64]) -> Result<f64, InequalityError> {
        if self.p < 2 {
            return Err(InequalityError::Invalid("p must be at least 2".into()));
        }
        entropy(f, self.p, &self.weights(form, phi))
    }
}

/// One verify-phase cell of a fitted inequality.
#[derive(Debug, Clone)]
pub struct FitRow {
    pub eps: f64,
    pub param: f64,
    pub function: usize,
    pub need: f64,
    pub allowed: f64,
}

#[derive(Debug, Clone)]
pub struct LogSobolevFit {
    pub c: f64,
    pub fit_eps: f64,
    /// `(ε, max need)` per ε, for reporting.
    pub by_eps: Vec<(f64, f64)>,
    pub report: InequalityReport,
    pub rows: Vec<FitRow>,
}

/// Per-(member, θ) constant needed for
/// `ℰ₂(f) ≤ (θ/2)q_ε(f) + β(θ)‖f‖²`, `β(θ) = c − ¾ log θ − (θ/2)(λ₀/ε² − α)`:
/// `[ℰ₂ − (θ/2)q⁰]/‖f‖² + ¾ log θ − θα/2` with `q⁰ = q_ε − (λ₀/ε²)‖·‖²`.
pub fn logsobolev_need(form0: &FormOperator, f: &[f64], thetas: &[f64], alpha: f64) -> Result<Vec<f64>, InequalityError> {
    if form0.renormalization != Renormalization::Lambda0OverEps2 {
        return Err(InequalityError::Invalid("log-Sobolev needs the λ₀/ε²-renormalized form".into()));
    }
    let fa: Vec<f64> = f.iter().map(|x| x.abs()).collect();
    let e2 = entropy(&fa, 2, &form0.mass)?;
    let n2 = form0.mass_dot(f, f);
    let q0 = form0.form(f, f);
    Ok(thetas
        .iter()
        .map(|&th| (e2 - 0.5 * th * q0) / n2 + 0.75 * th.ln() - 0.5 * th * alpha)
        .collect())
}

fn check_eps_list(eps_list: &[f64]) -> Result<(), InequalityError> {
    if eps_list.is_empty() || eps_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(InequalityError::Invalid("ε list must be strictly decreasing".into()));
    }
    Ok(())
}

/// Fit `c` at the largest ε (maximum need over members and θ), then verify
/// it unchanged at every smaller ε. `α = λ₀ + 1`.
pub fn logsobolev_fit_verify(
    curve: Arc<CurveGeometry>,
    ns: usize,
    nv: usize,
    eps_list: &[f64],
    thetas: &[f64],
    fs: &TestFunctionSet,
    tol: f64,
) -> Result<LogSobolevFit, InequalityError> {
    check_eps_list(eps_list)?;
    if thetas.iter().any(|&t| !(t > 0.0 && t <= 1.0)) {
        return Err(InequalityError::Invalid("θ grid must lie in (0, 1]".into()));
    }
    let alpha = LAMBDA0 + 1.0;
    let mut needs = Vec::new();
    for &eps in eps_list {
        let grid = build_grid_shared(curve.clone(), ns, nv, eps)?;
        let form = crate::discretize::renormalize(
            &assemble_h(&grid, PotentialMode::Compensated, FiberStencil::Calibrated),
            Renormalization::Lambda0OverEps2,
        )?;
        let per: Vec<Vec<f64>> = fs
            .members
            .par_iter()
            .map(|m| logsobolev_need(&form, &m.sample(&grid), thetas, alpha))
            .collect::<Result<_, _>>()?;
        needs.push((eps, per));
    }
    let c = needs[0].1.iter().flatten().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut report = InequalityReport::new("log-sobolev");
    report.fitted.push(("c".into(), c));
    let mut rows = Vec::new();
    let mut by_eps = Vec::new();
    for (idx, (eps, per)) in needs.iter().enumerate() {
        by_eps.push((*eps, per.iter().flatten().cloned().fold(f64::NEG_INFINITY, f64::max)));
        for (m, row) in fs.members.iter().zip(per) {
            for (&th, &need) in thetas.iter().zip(row) {
                if idx > 0 {
                    report.record(m.id, format!("eps={eps},theta={th}"), c - need, tol);
                }
                rows.push(FitRow { eps: *eps, param: th, function: m.id, need, allowed: c });
            }
        }
    }
    Ok(LogSobolevFit { c, fit_eps: eps_list[0], by_eps, report, rows })
}

/// Per-(member, τ) value of
/// `(−Σ φ²f^p log φ m − τB⁰(φf^{p/2}, φf^{p/2}))/‖f‖_{ε,p}^p + ½ log τ`,
/// which the Rosen bound requires to be at most `k₁ + k₂τ`.
pub fn rosen_need(form: &FormOperator, phi: &[f64], f: &[f64], taus: &[f64], p: u32) -> Result<Vec<f64>, InequalityError> {
    check_even(p)?;
    let fp = powi_vec(f, p as i32);
    let lhs: f64 = (0..f.len())
        .map(|k| if phi[k] > 0.0 { -phi[k] * phi[k] * fp[k] * phi[k].ln() * form.mass[k] } else { 0.0 })
        .sum();
    let half = times(phi, &powi_vec(f, p as i32 / 2));
    let b0 = form.form(&half, &half);
    let norm = weighted_p_norm_p(form, phi, f, p);
    if norm == 0.0 {
        return Err(InequalityError::ZeroFunction);
    }
    Ok(taus.iter().map(|&t| (lhs - t * b0) / norm + 0.5 * t.ln()).collect())
}

/// Smallest line `k₁ + k₂τ` lying above the points `(τ_i, y_i)`, chosen
/// among the lines through hull pairs (and horizontal lines) to minimize
/// the summed gap over the grid.
pub fn supporting_line(taus: &[f64], ys: &[f64]) -> (f64, f64) {
    let fits = |k1: f64, k2: f64| taus.iter().zip(ys).all(|(&t, &y)| k1 + k2 * t >= y - 1e-12 * y.abs().max(1.0));
    let gap = |k1: f64, k2: f64| taus.iter().zip(ys).map(|(&t, &y)| k1 + k2 * t - y).sum::<f64>();
    let ymax = ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut best = (ymax, 0.0);
    let mut best_gap = gap(ymax, 0.0);
    for i in 0..taus.len() {
        for j in i + 1..taus.len() {
            if taus[j] == taus[i] {
                continue;
            }
            let k2 = (ys[j] - ys[i]) / (taus[j] - taus[i]);
            let k1 = ys[i] - k2 * taus[i];
            if fits(k1, k2) {
                let g = gap(k1, k2);
                if g < best_gap {
                    best_gap = g;
                    best = (k1, k2);
                }
            }
        }
    }
    best
}

#[derive(Debug, Clone)]
pub struct RosenFit {
    pub k1: f64,
    pub k2: f64,
    pub p: u32,
    pub fit_eps: f64,
    pub by_eps: Vec<(f64, f64, f64)>,
    pub report: InequalityReport,
    pub rows: Vec<FitRow>,
}

/// Ground state and `λ_ε`-renormalized compensated form at one ε.
pub fn ground_state_form(grid: &TubeGrid, cfg: &SpectralConfig) -> Result<(FormOperator, EigenPair), InequalityError> {
    let base = assemble_h(grid, PotentialMode::Compensated, FiberStencil::Calibrated);
    let eig = ground_state(&base, Some(grid), cfg)?;
    let form = crate::discretize::renormalize(&base, Renormalization::LambdaEps(eig.lambda))?;
    Ok((form, eig))
}

/// Rosen bound over the nonnegative members: `(k₁, k₂)` fitted at the
/// largest ε as the supporting line of the worst need per τ, verified at
/// every smaller ε.
pub fn rosen_check(
    curve: Arc<CurveGeometry>,
    ns: usize,
    nv: usize,
    eps_list: &[f64],
    taus: &[f64],
    fs: &TestFunctionSet,
    p: u32,
    tol: f64,
) -> Result<RosenFit, InequalityError> {
    check_eps_list(eps_list)?;
    if taus.iter().any(|&t| !(t > 0.0 && t <= 1.0)) {
        return Err(InequalityError::Invalid("τ grid must lie in (0, 1]".into()));
    }
    let members: Vec<&TestFunction> = fs.nonnegative().collect();
    let mut needs = Vec::new();
    for &eps in eps_list {
        let grid = build_grid_shared(curve.clone(), ns, nv, eps)?;
        let (form, eig) = ground_state_form(&grid, &SpectralConfig::default())?;
        let per: Vec<Vec<f64>> = members
            .par_iter()
            .map(|m| rosen_need(&form, &eig.phi, &m.sample(&grid), taus, p))
            .collect::<Result<_, _>>()?;
        needs.push((eps, per));
    }
    let worst: Vec<f64> = (0..taus.len())
        .map(|ti| needs[0].1.iter().map(|r| r[ti]).fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let (k1, k2) = supporting_line(taus, &worst);
    let mut report = InequalityReport::new(&format!("rosen-p{p}"));
    report.fitted.push(("k1".into(), k1));
    report.fitted.push(("k2".into(), k2));
    let mut rows = Vec::new();
    let mut by_eps = Vec::new();
    for (idx, (eps, per)) in needs.iter().enumerate() {
        let w: Vec<f64> = (0..taus.len())
            .map(|ti| per.iter().map(|r| r[ti]).fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let (a, b) = supporting_line(taus, &w);
        by_eps.push((*eps, a, b));
        for (m, row) in members.iter().zip(per) {
            for (&t, &need) in taus.iter().zip(row) {
                let allowed = k1 + k2 * t;
                if idx > 0 {
                    report.record(m.id, format!("eps={eps},tau={t}"), allowed - need, tol);
                }
                rows.push(FitRow { eps: *eps, param: t, function: m.id, need, allowed });
            }
        }
    }
    Ok(RosenFit { k1, k2, p, fit_eps: eps_list[0], by_eps, report, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::make_flat_cylinder;

    #[test]
    fn entropy_of_constant_is_volume_term() {
        let w = vec![0.25; 8];
        let f = vec![3.0; 8];
        let vol: f64 = 2.0;
        for p in [2u32, 4] {
            let expect = -(3.0f64.powi(p as i32) * vol / p as f64) * vol.ln();
            assert!((entropy(&f, p, &w).unwrap() - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn entropy_rejects_zero() {
        assert_eq!(entropy(&[0.0; 4], 2, &[1.0; 4]), Err(InequalityError::ZeroFunction));
    }

    #[test]
    fn supporting_line_lies_above() {
        let taus = [0.05, 0.1, 0.2, 0.5, 1.0];
        let ys = [1.0, 1.3, 1.2, 1.6, 2.5];
        let (a, b) = supporting_line(&taus, &ys);
        for (t, y) in taus.iter().zip(ys) {
            assert!(a + b * t >= y - 1e-12);
        }
    }

    #[test]
    fn members_vanish_on_the_walls() {
        let fs = TestFunctionSet::generate(20, 7, 2.0 * PI, 4, 4);
        for m in &fs.members {
            if matches!(m.recipe, Recipe::Basic { .. }) {
                continue;
            }
            for s in [0.0, 1.0, 4.0] {
                assert!(m.eval(s, 1.0, 2.0 * PI).abs() < 1e-12, "{}", m.label);
                assert!(m.eval(s, -1.0, 2.0 * PI).abs() < 1e-12, "{}", m.label);
            }
        }
    }

    #[test]
    fn flat_gs_identity_constant_pair() {
        let c = make_flat_cylinder(2.0 * PI).unwrap();
        let g = crate::discretize::build_grid(&c, 32, 16, 0.2).unwrap();
        let (form, eig) = ground_state_form(&g, &SpectralConfig::default()).unwrap();
        let one = vec![1.0; g.len()];
        assert!(gs_transform_identity(&form, &eig.phi, &one, &one) < 1e-8);
    }
}
