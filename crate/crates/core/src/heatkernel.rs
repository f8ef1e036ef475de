//! Semigroups `e^{−(t/2)(A − cM)}` of the assembled forms, kernel columns,
//! the thin-tube limit semigroup, ultracontractivity norms, Markov checks
//! and the fit-then-verify protocol for the sub-Gaussian kernel bound.
//!
//! Time stepping defaults to a contour-integral exponential: for a fixed
//! step `τ` the propagator `e^{−τG}`, `G = ½M⁻¹A′`, is the trapezoidal
//! discretization of
//!
//! ```text
//! e^{−τG} = (1/2πi) ∫_Γ e^{zτ} (zM + ½A′)⁻¹ M dz
//! ```
//!
//! on the parabola `z(u) = μ(iu + 1)²`. With `K` nodes, `h = 3/K` and
//! `μ = πK/(12τ)` the error is near machine precision for every
//! nonnegative spectrum, including the stiff `ε⁻²` fiber modes that make
//! Crank–Nicolson oscillate on delta data. Crank–Nicolson is kept as an
//! alternative scheme.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::discretize::{
    assemble_h, assemble_laplace_l, build_grid_shared, project_e0, renormalize, DiscretizeError, FiberStencil,
    FormOperator, PotentialMode, Renormalization, TubeGrid,
};
use crate::geometry::CurveGeometry;
use crate::linalg::{BandedLdl, Csr, LinalgError, Scalar};
use crate::spectral::{ground_state, SpectralConfig, SpectralError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HeatError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Discretize(#[from] DiscretizeError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error("time {t} is not a nonnegative multiple of the step {dt}")]
    OffGrid { t: f64, dt: f64 },
    #[error("invalid input: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Contour,
    CrankNicolson,
}

#[derive(Debug, Clone, Copy)]
pub struct StepperConfig {
    pub scheme: Scheme,
    /// Base step; evolution times must be multiples of it.
    pub dt: f64,
    /// Contour nodes on the upper half of the parabola.
    pub nodes: usize,
}

impl Default for StepperConfig {
    fn default() -> Self {
        Self { scheme: Scheme::Contour, dt: 0.05, nodes: 20 }
    }
}

impl StepperConfig {
    pub fn crank_nicolson(steps_per_unit: usize) -> Self {
        Self { scheme: Scheme::CrankNicolson, dt: 1.0 / steps_per_unit as f64, nodes: 0 }
    }
}

enum Stepper {
    Contour { weights: Vec<Complex64>, z: Vec<Complex64>, factors: Vec<BandedLdl<Complex64>> },
    Crank { factor: BandedLdl<f64>, explicit: Csr },
}

/// `e^{−dt·G}` for `G = ½M⁻¹(A + αM)` with `A` the (renormalized) stiffness.
///
/// With the contour scheme a propagator built by [`Propagator::for_times`]
/// also holds one exponential per distinct gap between the requested
/// times, so each gap costs a single contour evaluation instead of one
/// per base step.
pub struct Propagator {
    mass: Vec<f64>,
    dt: f64,
    stepper: Stepper,
    /// `(gap in base steps, e^{−gap·dt·G})`.
    jumps: Vec<(usize, Stepper)>,
}

fn build_stepper(form: &FormOperator, alpha: f64, scheme: Scheme, nodes: usize, dt: f64) -> Result<Stepper, HeatError> {
    let n = form.dim();
    let mdiag = Csr::diagonal(n, &form.mass);
    let a = &form.stiffness;
    Ok(match scheme {
        Scheme::Contour => {
            let k = nodes.max(4);
            let h = 3.0 / k as f64;
            let mu = PI * k as f64 / (12.0 * dt);
            let i = Complex64::new(0.0, 1.0);
            let mut weights = Vec::with_capacity(k + 1);
            let mut zs = Vec::with_capacity(k + 1);
            for j in 0..=k {
                let u = j as f64 * h;
                let w = i * u + 1.0;
                let z = mu * w * w;
                let dz = 2.0 * i * mu * w;
                let mult = if j == 0 { 1.0 } else { 2.0 };
                weights.push(mult * h / (2.0 * PI * i) * (z * dt).exp() * dz);
                zs.push(z);
            }
            let factors = zs
                .par_iter()
                .map(|&z| {
                    BandedLdl::<Complex64>::factor(&form.pattern, &[(Complex64::from_real(0.5), a), (z + 0.5 * alpha, &mdiag)])
                })
                .collect::<Result<Vec<_>, _>>()?;
            Stepper::Contour { weights, z: zs, factors }
        }
        Scheme::CrankNicolson => {
            let q = 0.25 * dt;
            let factor = BandedLdl::<f64>::factor(&form.pattern, &[(q, a), (1.0 + q * alpha, &mdiag)])?;
            let mut explicit = a.add_diagonal(alpha, &form.mass);
            explicit.vals.iter_mut().for_each(|x| *x *= -q);
            let explicit = explicit.add_diagonal(1.0, &form.mass);
            Stepper::Crank { factor, explicit }
        }
    })
}

fn apply(stepper: &Stepper, mass: &[f64], x: &[f64]) -> Vec<f64> {
    match stepper {
        Stepper::Contour { weights, factors, .. } => {
            let mx: Vec<f64> = x.iter().zip(mass).map(|(a, m)| a * m).collect();
            let mut out = vec![0.0; x.len()];
            let mut buf = vec![Complex64::new(0.0, 0.0); x.len()];
            for (w, f) in weights.iter().zip(factors) {
                for (b, &v) in buf.iter_mut().zip(&mx) {
                    *b = Complex64::new(v, 0.0);
                }
                f.solve_in_place(&mut buf);
                for (o, b) in out.iter_mut().zip(&buf) {
                    *o += (w * b).re;
                }
            }
            out
        }
        Stepper::Crank { factor, explicit } => {
            let mut y = explicit.mul(x);
            factor.solve_in_place(&mut y);
            y
        }
    }
}

impl Propagator {
    pub fn new(form: &FormOperator, alpha: f64, cfg: &StepperConfig) -> Result<Self, HeatError> {
        if !(cfg.dt > 0.0) {
            return Err(HeatError::Invalid(format!("step must be positive, got {}", cfg.dt)));
        }
        let stepper = build_stepper(form, alpha, cfg.scheme, cfg.nodes, cfg.dt)?;
        Ok(Self { mass: form.mass.clone(), dt: cfg.dt, stepper, jumps: Vec::new() })
    }

    /// A propagator prepared for [`Propagator::evolve_times`] over the
    /// increasing times `ts` (contour scheme; Crank–Nicolson keeps its
    /// base step).
    pub fn for_times(form: &FormOperator, alpha: f64, cfg: &StepperConfig, ts: &[f64]) -> Result<Self, HeatError> {
        let mut p = Self::new(form, alpha, cfg)?;
        if cfg.scheme == Scheme::Contour {
            let mut done = 0;
            let mut gaps = Vec::new();
            for &t in ts {
                let k = p.steps_for(t)?;
                if k > done + 1 && !gaps.contains(&(k - done)) {
                    gaps.push(k - done);
                }
                done = done.max(k);
            }
            p.jumps = gaps
                .into_iter()
                .map(|g| Ok((g, build_stepper(form, alpha, cfg.scheme, cfg.nodes, g as f64 * cfg.dt)?)))
                .collect::<Result<_, HeatError>>()?;
        }
        Ok(p)
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Contour nodes, exposed for diagnostics.
    pub fn contour_nodes(&self) -> Option<&[Complex64]> {
        match &self.stepper {
            Stepper::Contour { z, .. } => Some(z),
            Stepper::Crank { .. } => None,
        }
    }

    /// One step `x ↦ e^{−dt·G} x`.
    pub fn step(&self, x: &[f64]) -> Vec<f64> {
        apply(&self.stepper, &self.mass, x)
    }

    /// `x ↦ e^{−k·dt·G} x`, in one evaluation when a matching jump exists.
    fn advance(&self, x: Vec<f64>, k: usize) -> Vec<f64> {
        if k == 0 {
            return x;
        }
        if let Some((_, st)) = self.jumps.iter().find(|(g, _)| *g == k) {
            return apply(st, &self.mass, &x);
        }
        (0..k).fold(x, |y, _| self.step(&y))
    }

    fn steps_for(&self, t: f64) -> Result<usize, HeatError> {
        let r = t / self.dt;
        let k = r.round();
        if t < 0.0 || (r - k).abs() > 1e-9 * r.max(1.0) {
            return Err(HeatError::OffGrid { t, dt: self.dt });
        }
        Ok(k as usize)
    }

    pub fn evolve(&self, f: &[f64], t: f64) -> Result<Vec<f64>, HeatError> {
        let k = self.steps_for(t)?;
        Ok(self.advance(f.to_vec(), k))
    }

    /// States at each of the increasing times `ts`.
    pub fn evolve_times(&self, f: &[f64], ts: &[f64]) -> Result<Vec<Vec<f64>>, HeatError> {
        let mut out = Vec::with_capacity(ts.len());
        let mut x = f.to_vec();
        let mut done = 0usize;
        for &t in ts {
            let k = self.steps_for(t)?;
            if k < done {
                return Err(HeatError::Invalid("times must be increasing".into()));
            }
            x = self.advance(x, k - done);
            done = k;
            out.push(x.clone());
        }
        Ok(out)
    }
}

/// `e^{−(t/2)A′} f` for a single time.
pub fn evolve(form: &FormOperator, f: &[f64], t: f64, cfg: &StepperConfig) -> Result<Vec<f64>, HeatError> {
    if t == 0.0 {
        return Ok(f.to_vec());
    }
    Propagator::for_times(form, 0.0, cfg, &[t])?.evolve(f, t)
}

/// One kernel column `K_t(·, W′)` against the form's mass.
#[derive(Debug, Clone)]
pub struct KernelSlice {
    pub t: f64,
    pub eps: f64,
    pub source: usize,
    pub values: Vec<f64>,
}

/// Kernel columns of one source at several times.
pub fn kernel_columns(prop: &Propagator, eps: f64, source: usize, ts: &[f64]) -> Result<Vec<KernelSlice>, HeatError> {
    if ts.iter().any(|&t| t <= 0.0) {
        return Err(HeatError::Invalid("kernel times must be positive".into()));
    }
    let mut delta = vec![0.0; prop.mass.len()];
    delta[source] = 1.0 / prop.mass[source];
    let states = prop.evolve_times(&delta, ts)?;
    Ok(ts
        .iter()
        .zip(states)
        .map(|(&t, values)| KernelSlice { t, eps, source, values })
        .collect())
}

pub fn kernel_column(prop: &Propagator, eps: f64, source: usize, t: f64) -> Result<KernelSlice, HeatError> {
    Ok(kernel_columns(prop, eps, source, &[t])?.remove(0))
}

/// `e^{−(t/2)Δ_L}` of a base function, using the exact spectrum of the
/// periodic second-difference operator on the same `s`-grid.
pub fn base_heat(length: f64, g: &[f64], t: f64) -> Vec<f64> {
    let n = g.len();
    let hs = length / n as f64;
    let mut out = vec![0.0; n];
    for k in 0..=n / 2 {
        let lam = 4.0 / (hs * hs) * (PI * k as f64 / n as f64).sin().powi(2);
        let decay = (-0.5 * t * lam).exp();
        let (mut a, mut b) = (0.0, 0.0);
        let w = 2.0 * PI * k as f64 / n as f64;
        for (i, &x) in g.iter().enumerate() {
            let (s, c) = (w * i as f64).sin_cos();
            a += x * c;
            b += x * s;
        }
        let mult = if k == 0 || (n % 2 == 0 && k == n / 2) { 1.0 } else { 2.0 };
        for (i, o) in out.iter_mut().enumerate() {
            let (s, c) = (w * i as f64).sin_cos();
            *o += mult * decay * (a * c + b * s) / n as f64;
        }
    }
    out
}

/// `E₀ e^{−(t/2)Δ_L} E₀ f`.
pub fn limit_semigroup(grid: &TubeGrid, f: &[f64], t: f64) -> Vec<f64> {
    let (fb, _) = project_e0(grid, f);
    let g = base_heat(grid.curve.total_length(), &fb, t);
    crate::discretize::embed_base(grid, &g)
}

/// Compensated form renormalized by `λ₀/ε²`: the generator `H_ε⁰`.
pub fn renormalized_generator(grid: &TubeGrid, stencil: FiberStencil) -> Result<FormOperator, HeatError> {
    let form = assemble_h(grid, PotentialMode::Compensated, stencil);
    Ok(renormalize(&form, Renormalization::Lambda0OverEps2)?)
}

#[derive(Debug, Clone)]
pub struct SemigroupRow {
    pub eps: f64,
    pub t: f64,
    pub function: usize,
    pub error: f64,
}

/// `‖e^{−(t/2)H_ε⁰} f − E₀e^{−(t/2)Δ_L}E₀ f‖_{μ_Sa}` over ε, t and test functions.
pub fn semigroup_convergence(
    curve: std::sync::Arc<CurveGeometry>,
    ns: usize,
    nv: usize,
    eps_list: &[f64],
    fs: &[Vec<f64>],
    ts: &[f64],
    cfg: &StepperConfig,
) -> Result<Vec<SemigroupRow>, HeatError> {
    let mut rows = Vec::new();
    for &eps in eps_list {
        let grid = build_grid_shared(curve.clone(), ns, nv, eps)?;
        let form = renormalized_generator(&grid, FiberStencil::Calibrated)?;
        let prop = Propagator::for_times(&form, 0.0, cfg, ts)?;
        let per_f: Vec<Vec<SemigroupRow>> = fs
            .par_iter()
            .enumerate()
            .map(|(fi, f)| -> Result<Vec<SemigroupRow>, HeatError> {
                let states = prop.evolve_times(f, ts)?;
                Ok(ts
                    .iter()
                    .zip(states)
                    .map(|(&t, x)| {
                        let lim = limit_semigroup(&grid, f, t);
                        let d: Vec<f64> = x.iter().zip(&lim).map(|(a, b)| a - b).collect();
                        SemigroupRow { eps, t, function: fi, error: grid.norm(&d) }
                    })
                    .collect())
            })
            .collect::<Result<_, _>>()?;
        rows.extend(per_f.into_iter().flatten());
    }
    Ok(rows)
}

/// `‖e^{−(t/2)(H⁰+α)}‖_{2→∞}` estimated as the largest `L²(μ_Sa)` norm of
/// the kernel columns at `sources` (all nodes when `sources` is empty),
/// returned for each time in `ts`.
pub fn ultracontractive_norm(
    form: &FormOperator,
    alpha: f64,
    ts: &[f64],
    sources: &[usize],
    cfg: &StepperConfig,
) -> Result<Vec<f64>, HeatError> {
    let prop = Propagator::for_times(form, 0.0, cfg, ts)?;
    let all: Vec<usize>;
    let src = if sources.is_empty() {
        all = (0..form.dim()).collect();
        &all
    } else {
        sources
    };
    let per: Vec<Vec<f64>> = src
        .par_iter()
        .map(|&s| -> Result<Vec<f64>, HeatError> {
            let cols = kernel_columns(&prop, form.eps, s, ts)?;
            Ok(cols
                .iter()
                .map(|c| c.values.iter().zip(&form.mass).map(|(k, m)| k * k * m).sum::<f64>().sqrt())
                .collect())
        })
        .collect::<Result<_, _>>()?;
    Ok(ts
        .iter()
        .enumerate()
        .map(|(ti, &t)| per.iter().map(|r| r[ti]).fold(0.0, f64::max) * (-0.5 * t * alpha).exp())
        .collect())
}

#[derive(Debug, Clone, Default)]
pub struct MarkovReport {
    pub trials: usize,
    pub positivity_violations: usize,
    pub contraction_violations: usize,
    /// Most negative value seen for nonnegative data.
    pub worst_negative: f64,
    /// Largest `‖P_t f‖_∞ / ‖f‖_∞`.
    pub worst_ratio: f64,
}

/// Random positivity and `L^∞`-contraction checks of `e^{−(t/2)A}` for a
/// form without renormalization (the Markov semigroup itself).
pub fn markov_checks(
    form: &FormOperator,
    ts: &[f64],
    trials: usize,
    seed: u64,
    cfg: &StepperConfig,
) -> Result<MarkovReport, HeatError> {
    if form.renormalization != Renormalization::None {
        return Err(HeatError::Invalid("Markov checks need the non-renormalized form".into()));
    }
    let prop = Propagator::for_times(form, 0.0, cfg, ts)?;
    let n = form.dim();
    let reports: Vec<MarkovReport> = (0..trials)
        .into_par_iter()
        .map(|trial| -> Result<MarkovReport, HeatError> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(trial as u64);
            let positive: Vec<f64> = if trial % 2 == 0 {
                (0..n).map(|_| rng.random::<f64>()).collect()
            } else {
                // sparse spikes: the harshest data for positivity
                let mut f = vec![0.0; n];
                for _ in 0..4 {
                    f[rng.random_range(0..n)] = rng.random::<f64>() + 0.5;
                }
                f
            };
            let signed: Vec<f64> = (0..n).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect();
            let mut r = MarkovReport { trials: 1, ..Default::default() };
            let sup_in = signed.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            for (xp, xs) in prop.evolve_times(&positive, ts)?.iter().zip(prop.evolve_times(&signed, ts)?) {
                let lo = xp.iter().cloned().fold(f64::INFINITY, f64::min);
                r.worst_negative = r.worst_negative.min(lo);
                if lo < -1e-10 {
                    r.positivity_violations += 1;
                }
                let sup = xs.iter().fold(0.0f64, |m, x| m.max(x.abs()));
                r.worst_ratio = r.worst_ratio.max(sup / sup_in);
                if sup > sup_in * (1.0 + 1e-10) {
                    r.contraction_violations += 1;
                }
            }
            Ok(r)
        })
        .collect::<Result<_, _>>()?;
    let mut out = MarkovReport::default();
    for r in reports {
        out.trials += r.trials;
        out.positivity_violations += r.positivity_violations;
        out.contraction_violations += r.contraction_violations;
        out.worst_negative = out.worst_negative.min(r.worst_negative);
        out.worst_ratio = out.worst_ratio.max(r.worst_ratio);
    }
    Ok(out)
}

/// Sources spread over the grid: `s`-indices on a regular stride, fiber
/// indices cycling through a regular stride of the interior nodes.
pub fn stratified_sources(grid: &TubeGrid, count: usize) -> Vec<usize> {
    let nvi = grid.nvi();
    let per_s = (count as f64).sqrt().round().max(1.0) as usize;
    let n_s = count.div_ceil(per_s);
    let mut out = Vec::with_capacity(count);
    for a in 0..n_s {
        let i = (a * grid.ns) / n_s;
        for b in 0..per_s {
            if out.len() == count {
                break;
            }
            // offset by half a stratum so the fiber centre and walls are both hit
            let j = ((2 * b + 1) * nvi) / (2 * per_s);
            out.push(grid.idx(i, j.min(nvi - 1)));
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct SubGaussianConfig {
    pub ts: Vec<f64>,
    pub sources: usize,
    /// Candidate values of `B` (and of `k` for the `h`-form).
    pub b_grid: Vec<f64>,
    /// A candidate is accepted when its `C` is within `1 + eta` of the best.
    pub eta: f64,
    /// Relative slack tolerated in the verify phase.
    pub verify_tol: f64,
    /// Fourier modes kept when smoothing `h = d_L(·, s₀)`.
    pub smoothing_modes: usize,
}

impl Default for SubGaussianConfig {
    fn default() -> Self {
        Self {
            ts: vec![0.05, 0.1, 0.2, 0.3, 0.5, 0.7, 1.0],
            sources: 64,
            b_grid: (1..=60).map(|k| 0.05 * k as f64).collect(),
            eta: 1e-3,
            verify_tol: 1e-8,
            smoothing_modes: 8,
        }
    }
}

/// Kernel data for one ε: columns at the sampled sources for every time.
struct KernelSet {
    eps: f64,
    grid: TubeGrid,
    phi: Vec<f64>,
    /// `[source][time]` columns.
    cols: Vec<Vec<Vec<f64>>>,
    sources: Vec<usize>,
}

/// A row of the kernel-bound CSV.
#[derive(Debug, Clone)]
pub struct BoundRow {
    pub eps: f64,
    pub t: f64,
    pub source_s: f64,
    pub source_v: f64,
    pub target_s: f64,
    pub target_v: f64,
    pub k: f64,
    pub bound: f64,
    pub slack: f64,
}

#[derive(Debug, Clone)]
pub struct Violation {
    pub eps: f64,
    pub t: f64,
    pub source: usize,
    pub target: usize,
    pub slack: f64,
}

#[derive(Debug, Clone)]
pub struct BoundFit {
    pub c: f64,
    pub b: f64,
    /// `h`-form constants.
    pub c_h: f64,
    pub k: f64,
    /// Fitted C at each ε with B frozen, for reporting.
    pub c_by_eps: Vec<(f64, f64)>,
    pub fit_eps: f64,
    pub violations: Vec<Violation>,
    pub h_violations: Vec<Violation>,
    pub min_slack: f64,
    pub rows: Vec<BoundRow>,
}

fn kernel_set(
    curve: std::sync::Arc<CurveGeometry>,
    ns: usize,
    nv: usize,
    eps: f64,
    sc: &SubGaussianConfig,
    step: &StepperConfig,
) -> Result<KernelSet, HeatError> {
    let grid = build_grid_shared(curve, ns, nv, eps)?;
    let base = assemble_h(&grid, PotentialMode::Compensated, FiberStencil::Calibrated);
    let eig = ground_state(&base, Some(&grid), &SpectralConfig::default())?;
    let form = renormalize(&base, Renormalization::Lambda0OverEps2)?;
    let prop = Propagator::for_times(&form, 0.0, step, &sc.ts)?;
    let sources = stratified_sources(&grid, sc.sources);
    let cols = sources
        .par_iter()
        .map(|&s| -> Result<Vec<Vec<f64>>, HeatError> {
            Ok(kernel_columns(&prop, eps, s, &sc.ts)?.into_iter().map(|c| c.values).collect())
        })
        .collect::<Result<_, _>>()?;
    Ok(KernelSet { eps, grid, phi: eig.phi, cols, sources })
}

/// Largest `K t^{5/2} e^{D²/(4Bt)} / (φφ)` where `D` is the distance
/// function evaluated on source and target.
fn max_ratio<F: Fn(usize, usize) -> f64>(ks: &KernelSet, ts: &[f64], b: f64, dist: &F) -> f64 {
    let mut worst: f64 = 0.0;
    for (si, &src) in ks.sources.iter().enumerate() {
        for (ti, &t) in ts.iter().enumerate() {
            let col = &ks.cols[si][ti];
            let pre = t.powf(2.5) / ks.phi[src];
            for (w, &kv) in col.iter().enumerate() {
                let d = dist(src, w);
                let r = kv * pre / ks.phi[w] * (d * d / (4.0 * b * t)).exp();
                worst = worst.max(r);
            }
        }
    }
    worst
}

fn fit_exponent<F: Fn(usize, usize) -> f64>(ks: &KernelSet, sc: &SubGaussianConfig, grid_vals: &[f64], dist: &F) -> (f64, f64) {
    let cs: Vec<f64> = grid_vals.iter().map(|&b| max_ratio(ks, &sc.ts, b, dist)).collect();
    let best = cs.iter().cloned().fold(f64::INFINITY, f64::min);
    for (&b, &c) in grid_vals.iter().zip(&cs) {
        if c <= best * (1.0 + sc.eta) {
            return (b, c);
        }
    }
    (grid_vals[grid_vals.len() - 1], best)
}

/// Truncated Fourier series of `s ↦ d_L(s, s₀)` on the `s`-grid.
pub fn smoothed_distance(length: f64, ns: usize, s0: f64, modes: usize) -> Vec<f64> {
    let hs = length / ns as f64;
    let raw: Vec<f64> = (0..ns)
        .map(|i| {
            let d = (i as f64 * hs - s0).abs() % length;
            d.min(length - d)
        })
        .collect();
    let mut out = vec![0.0; ns];
    for k in 0..=modes.min(ns / 2) {
        let w = 2.0 * PI * k as f64 / ns as f64;
        let (mut a, mut b) = (0.0, 0.0);
        for (i, &x) in raw.iter().enumerate() {
            let (s, c) = (w * i as f64).sin_cos();
            a += x * c;
            b += x * s;
        }
        let mult = if k == 0 { 1.0 } else { 2.0 };
        for (i, o) in out.iter_mut().enumerate() {
            let (s, c) = (w * i as f64).sin_cos();
            *o += mult * (a * c + b * s) / ns as f64;
        }
    }
    out
}

/// Fit `(C, B)` at the largest ε and verify them, unchanged, at every
/// smaller ε; the same for the `h`-form with a smoothed distance `h` and
/// `k > 1`.
pub fn subgaussian_verify(
    curve: std::sync::Arc<CurveGeometry>,
    ns: usize,
    nv: usize,
    eps_list: &[f64],
    sc: &SubGaussianConfig,
    step: &StepperConfig,
) -> Result<BoundFit, HeatError> {
    if eps_list.is_empty() || eps_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(HeatError::Invalid("ε list must be strictly decreasing".into()));
    }
    if sc.ts.iter().any(|&t| !(t > 0.0 && t <= 1.0)) {
        return Err(HeatError::Invalid("kernel-bound times must lie in (0, 1]".into()));
    }
    let sets: Vec<KernelSet> = eps_list
        .iter()
        .map(|&e| kernel_set(curve.clone(), ns, nv, e, sc, step))
        .collect::<Result<_, _>>()?;
    let length = curve.total_length();
    let g0 = &sets[0].grid;
    let dist = |a: usize, b: usize| -> f64 {
        let (ia, _) = g0.ij(a);
        let (ib, _) = g0.ij(b);
        curve.geodesic_distance(g0.s[ia], g0.s[ib])
    };
    let (b, c) = fit_exponent(&sets[0], sc, &sc.b_grid, &dist);

    // h-form: basic function h̄ = h∘π with ‖dh̄‖_ε ≤ 1 at every ε in the list
    let h_raw = smoothed_distance(length, ns, 0.0, sc.smoothing_modes);
    let mut gmax: f64 = 0.0;
    for ks in &sets {
        let form = assemble_h(&ks.grid, PotentialMode::Compensated, FiberStencil::Calibrated);
        let hb = crate::discretize::basic_function(&ks.grid, &h_raw);
        gmax = gmax.max(crate::discretize::grad_norm_eps_interior(&form, &hb).iter().cloned().fold(0.0, f64::max));
    }
    let scale = if gmax > 1.0 { 1.0 / gmax } else { 1.0 };
    let h: Vec<f64> = h_raw.iter().map(|x| x * scale).collect();
    let hdist = |a: usize, bb: usize| -> f64 {
        let (ia, _) = g0.ij(a);
        let (ib, _) = g0.ij(bb);
        (h[ia] - h[ib]).abs()
    };
    let k_grid: Vec<f64> = sc.b_grid.iter().cloned().filter(|&x| x > 1.0).collect();
    let (k, c_h) = fit_exponent(&sets[0], sc, &k_grid, &hdist);

    let mut violations = Vec::new();
    let mut h_violations = Vec::new();
    let mut rows = Vec::new();
    let mut c_by_eps = Vec::new();
    let mut min_slack = f64::INFINITY;
    for ks in &sets {
        c_by_eps.push((ks.eps, max_ratio(ks, &sc.ts, b, &dist)));
        for (si, &src) in ks.sources.iter().enumerate() {
            let (isrc, jsrc) = ks.grid.ij(src);
            for (ti, &t) in sc.ts.iter().enumerate() {
                let col = &ks.cols[si][ti];
                let pre = c * t.powf(-2.5) * ks.phi[src];
                let pre_h = c_h * t.powf(-2.5) * ks.phi[src];
                let mut worst: Option<(usize, f64, f64)> = None;
                for (w, &kv) in col.iter().enumerate() {
                    let d = dist(src, w);
                    let bound = pre * ks.phi[w] * (-d * d / (4.0 * b * t)).exp();
                    let slack = (bound - kv) / bound;
                    if worst.map_or(true, |x| slack < x.1) {
                        worst = Some((w, slack, bound));
                    }
                    min_slack = min_slack.min(slack);
                    if ks.eps != sets[0].eps && slack < -sc.verify_tol {
                        violations.push(Violation { eps: ks.eps, t, source: src, target: w, slack });
                    }
                    let hd = hdist(src, w);
                    let bound_h = pre_h * ks.phi[w] * (-hd * hd / (4.0 * k * t)).exp();
                    let slack_h = (bound_h - kv) / bound_h;
                    if ks.eps != sets[0].eps && slack_h < -sc.verify_tol {
                        h_violations.push(Violation { eps: ks.eps, t, source: src, target: w, slack: slack_h });
                    }
                }
                if let Some((w, slack, bound)) = worst {
                    let (iw, jw) = ks.grid.ij(w);
                    rows.push(BoundRow {
                        eps: ks.eps,
                        t,
                        source_s: ks.grid.s[isrc],
                        source_v: ks.grid.v[jsrc],
                        target_s: ks.grid.s[iw],
                        target_v: ks.grid.v[jw],
                        k: col[w],
                        bound,
                        slack,
                    });
                }
            }
        }
    }
    Ok(BoundFit { c, b, c_h, k, c_by_eps, fit_eps: eps_list[0], violations, h_violations, min_slack, rows })
}

/// Base-grid diagnostics: discrete `Δ_L` for reuse by callers.
pub fn base_laplacian(curve: &CurveGeometry, ns: usize) -> Result<FormOperator, HeatError> {
    Ok(assemble_laplace_l(curve, ns)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretize::build_grid;
    use crate::geometry::make_flat_cylinder;

    #[test]
    fn contour_step_matches_scalar_exponential() {
        // 1×1 "form": G = ½a, so one step multiplies by e^{−dt·a/2}
        for &a in &[-1.0, 0.0, 0.3, 10.0, 1e3, 1e6] {
            let csr = Csr::diagonal(1, &[a]);
            let pattern = crate::linalg::BandPattern::natural(&csr);
            let form = FormOperator {
                stiffness: csr,
                mass: vec![1.0],
                eps: 1.0,
                renormalization: Renormalization::None,
                mode: PotentialMode::Compensated,
                domain: crate::discretize::Domain::Base,
                edges: vec![],
                potential: vec![0.0],
                pattern,
            };
            let p = Propagator::new(&form, 0.0, &StepperConfig::default()).unwrap();
            let y = p.step(&[1.0])[0];
            let exact = (-0.5 * 0.05 * a).exp();
            assert!((y - exact).abs() < 1e-13, "a={a}: {y} vs {exact}");
        }
    }

    #[test]
    fn base_heat_decays_fourier_mode() {
        let n = 64;
        let len = 2.0 * PI;
        let g: Vec<f64> = (0..n).map(|i| (i as f64 * len / n as f64).cos()).collect();
        let out = base_heat(len, &g, 0.7);
        let hs = len / n as f64;
        let lam = 4.0 / (hs * hs) * (PI / n as f64).sin().powi(2);
        for i in 0..n {
            assert!((out[i] - g[i] * (-0.35 * lam).exp()).abs() < 1e-13);
        }
    }

    #[test]
    fn flat_fiber_mode_is_stationary() {
        let c = make_flat_cylinder(2.0 * PI).unwrap();
        let g = build_grid(&c, 16, 16, 0.3).unwrap();
        let form = renormalized_generator(&g, FiberStencil::Calibrated).unwrap();
        let f = g.sample(|_, v| crate::discretize::phi0(v));
        let out = evolve(&form, &f, 1.0, &StepperConfig::default()).unwrap();
        for (a, b) in out.iter().zip(&f) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn off_grid_time_is_an_error() {
        let c = make_flat_cylinder(2.0 * PI).unwrap();
        let g = build_grid(&c, 16, 8, 0.3).unwrap();
        let form = renormalized_generator(&g, FiberStencil::Calibrated).unwrap();
        let p = Propagator::new(&form, 0.0, &StepperConfig::default()).unwrap();
        assert!(matches!(p.evolve(&vec![0.0; g.len()], 0.07), Err(HeatError::OffGrid { .. })));
    }
}
