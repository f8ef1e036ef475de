//! Ground states of the tube forms, the flat fiber mode, and the ε-sweeps
//! that compare them with their thin-tube limits.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use thiserror::Error;

use crate::discretize::{
    assemble_h, assemble_laplace_l, build_grid_shared, phi0, DiscretizeError, Domain, FiberStencil,
    FormOperator, PotentialMode, TubeGrid, LAMBDA0,
};
use crate::geometry::{boundary_distance, CurveGeometry};
use crate::linalg::{lowest_eigenpairs, BandPattern, LanczosOptions, LinalgError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectralError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Discretize(#[from] DiscretizeError),
    #[error("ground state has a negative node value {value:e} at index {index}")]
    NegativeGroundState { index: usize, value: f64 },
    #[error("ground state is not simple: λ₂ − λ₁ = {0:e}")]
    Degenerate(f64),
    #[error("invalid sweep: {0}")]
    BadSweep(String),
}

#[derive(Debug, Clone, Copy)]
pub struct SpectralConfig {
    pub tol: f64,
    pub max_iter: usize,
    /// Initial distance of the shift below the ansatz Rayleigh quotient,
    /// as `absolute + relative·|RQ|`.
    pub shift_abs: f64,
    pub shift_rel: f64,
    pub k: usize,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 500, shift_abs: 0.5, shift_rel: 1e-3, k: 2 }
    }
}

/// Ground eigenpair, normalized in the form's mass and nonnegative.
#[derive(Debug, Clone)]
pub struct EigenPair {
    pub lambda: f64,
    pub phi: Vec<f64>,
    pub residual: f64,
    /// Second eigenvalue, kept to certify simplicity.
    pub lambda2: f64,
}

/// λ₀ and φ₀ of the unit interval.
pub fn flat_ball_mode() -> (f64, fn(f64) -> f64) {
    (LAMBDA0, phi0)
}

/// Fiber-mode ansatz for a form on `grid`: `φ₀(v)` on the unit tube, its
/// Σ_ε image on the physical tube, a constant on the base.
pub fn ansatz(form: &FormOperator, grid: Option<&TubeGrid>) -> Vec<f64> {
    match (form.domain, grid) {
        (Domain::UnitTube, Some(g)) => g.sample(|_, v| phi0(v)),
        (Domain::Physical, Some(g)) => {
            let f = g.sample(|_, v| phi0(v));
            crate::discretize::rescale_to_physical(g, &f)
        }
        _ => vec![1.0; form.dim()],
    }
}

/// Smallest eigenpair by shift-and-invert Lanczos; the shift starts below the
/// Rayleigh quotient of the ansatz and is lowered until the inertia of
/// `A − σM` certifies it lies below the spectrum.
pub fn ground_state(form: &FormOperator, grid: Option<&TubeGrid>, cfg: &SpectralConfig) -> Result<EigenPair, SpectralError> {
    let start = ansatz(form, grid);
    ground_state_from(form, &start, cfg)
}

pub fn ground_state_from(form: &FormOperator, start: &[f64], cfg: &SpectralConfig) -> Result<EigenPair, SpectralError> {
    let rq = form.form(start, start) / form.mass_dot(start, start);
    let mut delta = cfg.shift_abs + cfg.shift_rel * rq.abs();
    let opts = LanczosOptions { tol: cfg.tol, max_iter: cfg.max_iter, krylov: 40 };
    let k = cfg.k.max(2);
    let res = loop {
        match lowest_eigenpairs(&form.stiffness, &form.mass, &form.pattern, k, rq - delta, start, opts) {
            Ok(r) => break r,
            Err(LinalgError::ShiftTooHigh { .. }) => delta *= 4.0,
            Err(e) => return Err(e.into()),
        }
    };
    let mut phi = res.vectors[0].clone();
    let mean: f64 = phi.iter().zip(&form.mass).map(|(x, m)| x * m).sum();
    if mean < 0.0 {
        phi.iter_mut().for_each(|x| *x = -*x);
    }
    if let Some((index, &value)) = phi.iter().enumerate().min_by(|a, b| a.1.partial_cmp(b.1).unwrap()) {
        if value < -1e-12 {
            return Err(SpectralError::NegativeGroundState { index, value });
        }
    }
    let gap = res.values[1] - res.values[0];
    if !(gap > 0.0) {
        return Err(SpectralError::Degenerate(gap));
    }
    Ok(EigenPair { lambda: res.values[0], phi, residual: res.residuals[0], lambda2: res.values[1] })
}

/// `(c, C)` = min and max of `φ / δ` over the grid nodes.
pub fn envelope_fit(eig: &EigenPair, grid: &TubeGrid) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi: f64 = 0.0;
    for (k, &p) in eig.phi.iter().enumerate() {
        let (_, j) = grid.ij(k);
        let r = p / boundary_distance(grid.v[j]);
        lo = lo.min(r);
        hi = hi.max(r);
    }
    (lo, hi)
}

/// Grid shape and discretization choices shared by the sweeps.
#[derive(Debug, Clone, Copy)]
pub struct SweepGrid {
    pub ns: usize,
    pub nv: usize,
    pub mode: PotentialMode,
    pub stencil: FiberStencil,
}

#[derive(Debug, Clone)]
pub struct GapRow {
    pub eps: f64,
    pub lambda: f64,
    pub gap: f64,
    pub c_env: f64,
    pub cap_env: f64,
    pub residual: f64,
    pub eigen: EigenPair,
}

#[derive(Debug, Clone)]
pub struct GapSweep {
    pub rows: Vec<GapRow>,
    /// `|gap(ε_k) − gap(ε_{k+1})|`.
    pub differences: Vec<f64>,
    /// Ratios of successive differences (≥ 1.5 means Cauchy-like decay).
    pub contraction: Vec<f64>,
    /// Richardson extrapolation of the last two gaps assuming an `ε²`
    /// leading correction.
    pub extrapolated: f64,
    /// Least-squares exponent of the differences against ε.
    pub fitted_order: f64,
}

fn check_decreasing(eps: &[f64]) -> Result<(), SpectralError> {
    if eps.is_empty() || eps.windows(2).any(|w| w[1] >= w[0]) {
        return Err(SpectralError::BadSweep("ε list must be non-empty and strictly decreasing".into()));
    }
    Ok(())
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// Ground eigenvalues and gaps `λ_ε − λ₀/ε²` over a decreasing ε list.
pub fn eigen_gap_sweep(
    curve: Arc<CurveGeometry>,
    eps_list: &[f64],
    sg: SweepGrid,
    cfg: &SpectralConfig,
) -> Result<GapSweep, SpectralError> {
    check_decreasing(eps_list)?;
    let mut rows = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        let grid = build_grid_shared(curve.clone(), sg.ns, sg.nv, eps)?;
        let form = assemble_h(&grid, sg.mode, sg.stencil);
        let eig = ground_state(&form, Some(&grid), cfg)?;
        let (c, cc) = envelope_fit(&eig, &grid);
        rows.push(GapRow {
            eps,
            lambda: eig.lambda,
            gap: eig.lambda - LAMBDA0 / (eps * eps),
            c_env: c,
            cap_env: cc,
            residual: eig.residual,
            eigen: eig,
        });
    }
    let differences: Vec<f64> = rows.windows(2).map(|w| (w[0].gap - w[1].gap).abs()).collect();
    let contraction: Vec<f64> = differences.windows(2).map(|w| w[0] / w[1]).collect();
    let extrapolated = if rows.len() >= 2 {
        let (a, b) = (&rows[rows.len() - 2], &rows[rows.len() - 1]);
        let r2 = (a.eps / b.eps).powi(2);
        (r2 * b.gap - a.gap) / (r2 - 1.0)
    } else {
        rows[0].gap
    };
    let fitted_order = if differences.len() >= 2 {
        let mids: Vec<f64> = rows.windows(2).map(|w| w[0].eps).collect();
        loglog_slope(&mids, &differences)
    } else {
        f64::NAN
    };
    Ok(GapSweep { rows, differences, contraction, extrapolated, fitted_order })
}

/// Bottom of the periodic Schrödinger operator `−d²/ds² + V(s)` on `L`,
/// computed by a Fourier–Galerkin method with `modes` harmonics per side
/// and dense diagonalization. `V` is sampled on a fine uniform grid.
pub fn base_schrodinger_bottom<F: Fn(f64) -> f64>(length: f64, potential: F, modes: usize) -> f64 {
    let nq = 16 * (2 * modes + 1).max(64);
    let hq = length / nq as f64;
    let vq: Vec<f64> = (0..nq).map(|q| potential(q as f64 * hq)).collect();
    let dim = 2 * modes + 1;
    // real basis: 1/√Λ, √(2/Λ) cos(ω_k s), √(2/Λ) sin(ω_k s)
    let basis = |b: usize, s: f64| -> (f64, f64) {
        if b == 0 {
            return (1.0 / length.sqrt(), 0.0);
        }
        let k = ((b + 1) / 2) as f64;
        let w = 2.0 * PI * k / length;
        let a = (2.0 / length).sqrt();
        if b % 2 == 1 {
            (a * (w * s).cos(), -a * w * (w * s).sin())
        } else {
            (a * (w * s).sin(), a * w * (w * s).cos())
        }
    };
    let mut vals = vec![vec![0.0; nq]; dim];
    for (b, row) in vals.iter_mut().enumerate() {
        for (q, x) in row.iter_mut().enumerate() {
            *x = basis(b, q as f64 * hq).0;
        }
    }
    let mut h = DMatrix::<f64>::zeros(dim, dim);
    for a in 0..dim {
        let ka = ((a + 1) / 2) as f64 * 2.0 * PI / length;
        h[(a, a)] += ka * ka;
        for b in a..dim {
            let mut acc = 0.0;
            for q in 0..nq {
                acc += vals[a][q] * vals[b][q] * vq[q];
            }
            acc *= hq;
            h[(a, b)] += acc;
            if a != b {
                h[(b, a)] += acc;
            }
        }
    }
    let eig = SymmetricEigen::new(h);
    eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
}

/// Limit base potential seen by the gap in each mode: `−κ²/4` for the bare
/// Dirichlet Laplacian, nothing for the compensated form.
pub fn limit_base_potential(curve: &CurveGeometry, mode: PotentialMode, s: f64) -> f64 {
    match mode {
        PotentialMode::Compensated => 0.0,
        PotentialMode::Dirichlet => -0.25 * curve.curvature(s).powi(2),
    }
}

/// Ground mode of the discrete base operator `Δ_L + V` on the `s`-grid,
/// normalized in `L²(L, ds)` and positive.
pub fn base_ground_mode(curve: &CurveGeometry, ns: usize, mode: PotentialMode) -> Result<(f64, Vec<f64>), SpectralError> {
    let lap = assemble_laplace_l(curve, ns)?;
    let hs = curve.total_length() / ns as f64;
    let v: Vec<f64> = (0..ns).map(|i| limit_base_potential(curve, mode, i as f64 * hs) * hs).collect();
    let mut op = lap.clone();
    op.stiffness = lap.stiffness.add_diagonal(1.0, &v);
    op.pattern = BandPattern::new(&op.stiffness, op.pattern.perm.clone());
    let eig = ground_state(&op, None, &SpectralConfig { shift_abs: 0.1, ..SpectralConfig::default() })?;
    Ok((eig.lambda, eig.phi))
}

#[derive(Debug, Clone)]
pub struct ConvergenceRow {
    pub eps: f64,
    pub l2_dist: f64,
    /// Largest pointwise Sasaki gradient norm of `φ_ε − φ₀ ⊗ ψ₀`.
    pub grad_gap: f64,
}

/// Distances between `φ_ε` and its limit `φ₀(v) ψ₀(s)`, with `ψ₀` the
/// ground mode of the discrete limit base operator on the same `s`-grid.
pub fn ground_state_convergence(
    curve: Arc<CurveGeometry>,
    eps_list: &[f64],
    sg: SweepGrid,
    cfg: &SpectralConfig,
) -> Result<Vec<ConvergenceRow>, SpectralError> {
    check_decreasing(eps_list)?;
    let (_, psi) = base_ground_mode(&curve, sg.ns, sg.mode)?;
    let mut out = Vec::new();
    for &eps in eps_list {
        let grid = build_grid_shared(curve.clone(), sg.ns, sg.nv, eps)?;
        let form = assemble_h(&grid, sg.mode, sg.stencil);
        let eig = ground_state(&form, Some(&grid), cfg)?;
        let limit = crate::discretize::embed_base(&grid, &psi);
        let diff: Vec<f64> = eig.phi.iter().zip(&limit).map(|(a, b)| a - b).collect();
        let sasaki = crate::discretize::assemble_sasaki(&grid);
        let g = crate::discretize::grad_norm_eps(&sasaki, &diff);
        out.push(ConvergenceRow {
            eps,
            l2_dist: grid.norm(&diff),
            grad_gap: g.iter().cloned().fold(0.0, f64::max),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretize::build_grid;
    use crate::geometry::make_flat_cylinder;

    #[test]
    fn flat_ground_state_is_fiber_mode() {
        let c = make_flat_cylinder(2.0 * PI).unwrap();
        let g = build_grid(&c, 32, 16, 0.25).unwrap();
        let f = assemble_h(&g, PotentialMode::Compensated, FiberStencil::Calibrated);
        let e = ground_state(&f, Some(&g), &SpectralConfig::default()).unwrap();
        assert!((e.lambda - LAMBDA0 / 0.0625).abs() < 1e-9);
        let exact = g.sample(|_, v| phi0(v) / (2.0 * PI).sqrt());
        let d: f64 = e.phi.iter().zip(&exact).map(|(a, b)| (a - b).powi(2)).sum::<f64>() * g.w_sa;
        assert!(d.sqrt() < 1e-10);
        assert!((g.norm(&e.phi) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn schrodinger_constant_potential() {
        let b = base_schrodinger_bottom(2.0 * PI, |_| -0.25, 8);
        assert!((b + 0.25).abs() < 1e-12);
    }
}
