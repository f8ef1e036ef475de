//! Finite-difference forms on the unit tube `(s, v) ∈ S¹_Λ × (−1, 1)`.
//!
//! Every form is assembled edge by edge: a grid edge `(a, b)` with weight
//! `w` contributes `w (f_a − f_b)²`, and an edge leaving the domain through
//! the Dirichlet boundary contributes `w f_a²`. Keeping the edge list next to
//! the matrix lets the ground-state transform, the pointwise gradient norm
//! and the Hardy check reuse exactly the quadrature that defines the form.
//!
//! Two operator flavours are available (see [`PotentialMode`]):
//!
//! * `Compensated` is the form `∫ ρ_ε⁻² f_s² + ε⁻² f_v² dμ_Sa`. It is the
//!   transport of the tube Laplacian plus the curvature potential `U`, has
//!   the fiber ground mode as exact ground state, and generates a Markov
//!   semigroup.
//! * `Dirichlet` subtracts `U` again and is the transport of the bare
//!   Dirichlet Laplacian of the physical tube, which is what plain Brownian
//!   motion killed at the tube wall sees.

use std::f64::consts::PI;
use std::sync::Arc;

use thiserror::Error;

use crate::geometry::{CurveGeometry, GeometryError};
use crate::linalg::{interleaved_order, BandPattern, Csr};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiscretizeError {
    #[error("grid too small: N_s = {ns} (need >= 16), N_v = {nv} (need >= 8)")]
    GridTooSmall { ns: usize, nv: usize },
    #[error("tube parameter must be positive, got {0}")]
    BadEpsilon(f64),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("renormalization by λ_ε requested without a ground eigenvalue")]
    MissingEigenvalue,
}

/// Potential handling, see the module documentation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PotentialMode {
    Compensated,
    Dirichlet,
}

/// Fiber second-difference stencil.
///
/// `Calibrated` rescales the three-point stencil so that the sampled
/// `cos(πv/2)` is an exact discrete eigenvector with eigenvalue exactly
/// `π²/4`; the fiber ground energy then cancels the `λ₀/ε²` renormalization
/// without an `O(h²/ε²)` remainder. `Standard` is the textbook stencil and is
/// used for convergence-order studies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FiberStencil {
    Standard,
    Calibrated,
}

/// Subtracted constant of a renormalized form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Renormalization {
    None,
    Lambda0OverEps2,
    LambdaEps(f64),
}

/// Which space a form acts on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    /// `L²(L(1), μ_Sa)`, grid values are `f(s, v)`.
    UnitTube,
    /// `L²(L(ε), μ)`, grid values are `u(s, n)` at `n = εv`.
    Physical,
    /// `L²(L, ds)`, one value per `s`-node.
    Base,
}

/// λ₀ = π²/4, the Dirichlet ground energy of `(−1, 1)`.
pub const LAMBDA0: f64 = PI * PI / 4.0;

/// φ₀(v) = cos(πv/2), unit norm in `L²(−1, 1)`.
pub fn phi0(v: f64) -> f64 {
    (0.5 * PI * v).cos()
}

/// Tensor grid on the unit tube. `s`-nodes are periodic, `v`-nodes are the
/// `N_v − 1` interior points of a uniform partition of `[−1, 1]`.
#[derive(Debug, Clone)]
pub struct TubeGrid {
    pub curve: Arc<CurveGeometry>,
    pub ns: usize,
    pub nv: usize,
    pub eps: f64,
    pub hs: f64,
    pub hv: f64,
    pub s: Vec<f64>,
    pub v: Vec<f64>,
    /// Sasaki weight `h_s h_v`, the same for every node.
    pub w_sa: f64,
    /// Induced weights `h_s h_v ε ρ(s_i, εv_j)`.
    pub w_mu: Vec<f64>,
}

impl TubeGrid {
    /// Number of interior fiber nodes.
    pub fn nvi(&self) -> usize {
        self.nv - 1
    }

    pub fn len(&self) -> usize {
        self.ns * (self.nv - 1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn idx(&self, i: usize, j: usize) -> usize {
        i * (self.nv - 1) + j
    }

    /// `(i, j)` of a flat index.
    pub fn ij(&self, k: usize) -> (usize, usize) {
        (k / (self.nv - 1), k % (self.nv - 1))
    }

    /// Evaluate `f(s, v)` at every node.
    pub fn sample<F: Fn(f64, f64) -> f64>(&self, f: F) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        for &s in &self.s {
            for &v in &self.v {
                out.push(f(s, v));
            }
        }
        out
    }

    /// Sasaki inner product.
    pub fn dot(&self, f: &[f64], g: &[f64]) -> f64 {
        f.iter().zip(g).map(|(a, b)| a * b).sum::<f64>() * self.w_sa
    }

    pub fn norm(&self, f: &[f64]) -> f64 {
        self.dot(f, f).sqrt()
    }

    /// Same grid, different tube parameter.
    pub fn with_eps(&self, eps: f64) -> Result<TubeGrid, DiscretizeError> {
        build_grid_shared(self.curve.clone(), self.ns, self.nv, eps)
    }

    /// Ordering used for banded factorizations.
    pub fn band_order(&self) -> Vec<usize> {
        interleaved_order(self.ns, self.nv - 1)
    }
}

pub fn build_grid(curve: &CurveGeometry, ns: usize, nv: usize, eps: f64) -> Result<TubeGrid, DiscretizeError> {
    build_grid_shared(Arc::new(curve.clone()), ns, nv, eps)
}

pub fn build_grid_shared(
    curve: Arc<CurveGeometry>,
    ns: usize,
    nv: usize,
    eps: f64,
) -> Result<TubeGrid, DiscretizeError> {
    if ns < 16 || nv < 8 {
        return Err(DiscretizeError::GridTooSmall { ns, nv });
    }
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(DiscretizeError::BadEpsilon(eps));
    }
    if eps * curve.kappa_max() >= 1.0 {
        return Err(GeometryError::ChartViolation(eps * curve.kappa_max()).into());
    }
    let hs = curve.total_length() / ns as f64;
    let hv = 2.0 / nv as f64;
    let s: Vec<f64> = (0..ns).map(|i| i as f64 * hs).collect();
    let v: Vec<f64> = (1..nv).map(|j| -1.0 + j as f64 * hv).collect();
    let w_sa = hs * hv;
    let mut w_mu = Vec::with_capacity(ns * (nv - 1));
    for &si in &s {
        let k = curve.curvature(si);
        for &vj in &v {
            w_mu.push(w_sa * eps * (1.0 - eps * vj * k));
        }
    }
    Ok(TubeGrid { curve, ns, nv, eps, hs, hv, s, v, w_sa, w_mu })
}

/// One grid edge of a form; `b = None` marks an edge through the Dirichlet
/// boundary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub a: usize,
    pub b: Option<usize>,
    pub w: f64,
}

/// Sparse symmetric stiffness plus diagonal mass.
#[derive(Debug, Clone)]
pub struct FormOperator {
    pub stiffness: Csr,
    pub mass: Vec<f64>,
    pub eps: f64,
    pub renormalization: Renormalization,
    pub mode: PotentialMode,
    pub domain: Domain,
    /// Gradient edges (without potential and renormalization terms).
    pub edges: Vec<Edge>,
    /// Diagonal potential contribution, already multiplied by the mass.
    pub potential: Vec<f64>,
    pub pattern: BandPattern,
}

impl FormOperator {
    pub fn dim(&self) -> usize {
        self.mass.len()
    }

    /// Subtracted constant.
    pub fn shift(&self) -> f64 {
        match self.renormalization {
            Renormalization::None => 0.0,
            Renormalization::Lambda0OverEps2 => LAMBDA0 / (self.eps * self.eps),
            Renormalization::LambdaEps(l) => l,
        }
    }

    /// `fᵀ A g`.
    pub fn form(&self, f: &[f64], g: &[f64]) -> f64 {
        self.stiffness.bilinear(f, g)
    }

    pub fn mass_dot(&self, f: &[f64], g: &[f64]) -> f64 {
        f.iter().zip(g).zip(&self.mass).map(|((a, b), m)| a * b * m).sum()
    }

    /// Edge sum `Σ w_e ψ_e Δf Δg` with edge factor `ψ_e` computed from the
    /// endpoint values of `phi` (`φ_a φ_b` inside, 0 on boundary edges).
    pub fn weighted_edge_form(&self, phi: &[f64], f: &[f64], g: &[f64]) -> f64 {
        let mut acc = 0.0;
        for e in &self.edges {
            if let Some(b) = e.b {
                acc += e.w * phi[e.a] * phi[b] * (f[e.a] - f[b]) * (g[e.a] - g[b]);
            }
        }
        acc
    }
}

fn finish(
    n: usize,
    edges: Vec<Edge>,
    potential: Vec<f64>,
    mass: Vec<f64>,
    eps: f64,
    mode: PotentialMode,
    domain: Domain,
    order: Vec<usize>,
) -> FormOperator {
    let mut trip = Vec::with_capacity(5 * n);
    for e in &edges {
        match e.b {
            Some(b) => {
                trip.push((e.a, e.a, e.w));
                trip.push((b, b, e.w));
                trip.push((e.a, b, -e.w));
                trip.push((b, e.a, -e.w));
            }
            None => trip.push((e.a, e.a, e.w)),
        }
    }
    for (i, &p) in potential.iter().enumerate() {
        trip.push((i, i, p));
    }
    let stiffness = Csr::from_triplets(n, trip);
    let pattern = BandPattern::new(&stiffness, order);
    FormOperator {
        stiffness,
        mass,
        eps,
        renormalization: Renormalization::None,
        mode,
        domain,
        edges,
        potential,
        pattern,
    }
}

/// Scale factor of the fiber stencil.
pub fn fiber_scale(nv: usize, stencil: FiberStencil) -> f64 {
    match stencil {
        FiberStencil::Standard => 1.0,
        FiberStencil::Calibrated => {
            let hv = 2.0 / nv as f64;
            let discrete = 4.0 / (hv * hv) * (0.25 * PI * hv).sin().powi(2);
            LAMBDA0 / discrete
        }
    }
}

/// The transported form on `L²(L(1), μ_Sa)`.
pub fn assemble_h(grid: &TubeGrid, mode: PotentialMode, stencil: FiberStencil) -> FormOperator {
    let (ns, nvi) = (grid.ns, grid.nvi());
    let (hs, hv, eps) = (grid.hs, grid.hv, grid.eps);
    let c = fiber_scale(grid.nv, stencil);
    let curve = &grid.curve;
    let mut edges = Vec::with_capacity(2 * grid.len() + 2 * ns);
    for i in 0..ns {
        let kmid = curve.curvature((i as f64 + 0.5) * hs);
        let ip = (i + 1) % ns;
        for j in 0..nvi {
            let rho = 1.0 - eps * grid.v[j] * kmid;
            edges.push(Edge { a: grid.idx(i, j), b: Some(grid.idx(ip, j)), w: hv / (hs * rho * rho) });
        }
        let wv = c * hs / (eps * eps * hv);
        edges.push(Edge { a: grid.idx(i, 0), b: None, w: wv });
        for j in 0..nvi - 1 {
            edges.push(Edge { a: grid.idx(i, j), b: Some(grid.idx(i, j + 1)), w: wv });
        }
        edges.push(Edge { a: grid.idx(i, nvi - 1), b: None, w: wv });
    }
    let mut potential = vec![0.0; grid.len()];
    if mode == PotentialMode::Dirichlet {
        for i in 0..ns {
            let jet = curve.curvature_jet(grid.s[i]);
            for j in 0..nvi {
                let u = crate::geometry::potential_from_jet(jet, eps * grid.v[j]);
                potential[grid.idx(i, j)] = -u * grid.w_sa;
            }
        }
    }
    let mass = vec![grid.w_sa; grid.len()];
    finish(grid.len(), edges, potential, mass, eps, mode, Domain::UnitTube, grid.band_order())
}

/// The ε-free Sasaki form `∫ f_s² + f_v² dμ_Sa` with the standard stencil.
pub fn assemble_sasaki(grid: &TubeGrid) -> FormOperator {
    let (ns, nvi, hs, hv) = (grid.ns, grid.nvi(), grid.hs, grid.hv);
    let mut edges = Vec::new();
    for i in 0..ns {
        let ip = (i + 1) % ns;
        for j in 0..nvi {
            edges.push(Edge { a: grid.idx(i, j), b: Some(grid.idx(ip, j)), w: hv / hs });
        }
        let wv = hs / hv;
        edges.push(Edge { a: grid.idx(i, 0), b: None, w: wv });
        for j in 0..nvi - 1 {
            edges.push(Edge { a: grid.idx(i, j), b: Some(grid.idx(i, j + 1)), w: wv });
        }
        edges.push(Edge { a: grid.idx(i, nvi - 1), b: None, w: wv });
    }
    let mass = vec![grid.w_sa; grid.len()];
    finish(
        grid.len(),
        edges,
        vec![0.0; grid.len()],
        mass,
        1.0,
        PotentialMode::Compensated,
        Domain::UnitTube,
        grid.band_order(),
    )
}

/// The same operator assembled directly on the physical tube `L(ε)` in the
/// induced measure: the Dirichlet Laplacian in Fermi coordinates, plus `U`
/// in compensated mode.
pub fn assemble_direct(grid: &TubeGrid, mode: PotentialMode, stencil: FiberStencil) -> FormOperator {
    let (ns, nvi) = (grid.ns, grid.nvi());
    let (hs, hv, eps) = (grid.hs, grid.hv, grid.eps);
    let c = fiber_scale(grid.nv, stencil);
    let dn = eps * hv;
    let curve = &grid.curve;
    let mut edges = Vec::with_capacity(2 * grid.len() + 2 * ns);
    for i in 0..ns {
        let kmid = curve.curvature((i as f64 + 0.5) * hs);
        let ki = curve.curvature(grid.s[i]);
        let ip = (i + 1) % ns;
        for j in 0..nvi {
            let rho = 1.0 - eps * grid.v[j] * kmid;
            edges.push(Edge { a: grid.idx(i, j), b: Some(grid.idx(ip, j)), w: dn / (hs * rho) });
        }
        let rho_at = |v: f64| 1.0 - eps * v * ki;
        edges.push(Edge { a: grid.idx(i, 0), b: None, w: c * hs * rho_at(-1.0 + 0.5 * hv) / dn });
        for j in 0..nvi - 1 {
            let vm = grid.v[j] + 0.5 * hv;
            edges.push(Edge { a: grid.idx(i, j), b: Some(grid.idx(i, j + 1)), w: c * hs * rho_at(vm) / dn });
        }
        edges.push(Edge { a: grid.idx(i, nvi - 1), b: None, w: c * hs * rho_at(1.0 - 0.5 * hv) / dn });
    }
    let mass = grid.w_mu.clone();
    let mut potential = vec![0.0; grid.len()];
    if mode == PotentialMode::Compensated {
        for i in 0..ns {
            let jet = curve.curvature_jet(grid.s[i]);
            for j in 0..nvi {
                let k = grid.idx(i, j);
                potential[k] = crate::geometry::potential_from_jet(jet, eps * grid.v[j]) * mass[k];
            }
        }
    }
    finish(grid.len(), edges, potential, mass, eps, mode, Domain::Physical, grid.band_order())
}

/// Subtract `c·M` from the stiffness; `LambdaEps` needs the computed
/// ground eigenvalue. Renormalizing an already renormalized form replaces
/// the previous constant.
pub fn renormalize(form: &FormOperator, mode: Renormalization) -> Result<FormOperator, DiscretizeError> {
    if let Renormalization::LambdaEps(l) = mode {
        if !l.is_finite() {
            return Err(DiscretizeError::MissingEigenvalue);
        }
    }
    let old = form.shift();
    let mut out = form.clone();
    out.renormalization = mode;
    let delta = out.shift() - old;
    out.stiffness = form.stiffness.add_diagonal(-delta, &form.mass);
    Ok(out)
}

/// Periodic `−d²/ds²` on `N_s` nodes with mass `h_s`.
pub fn assemble_laplace_l(curve: &CurveGeometry, ns: usize) -> Result<FormOperator, DiscretizeError> {
    if ns < 16 {
        return Err(DiscretizeError::GridTooSmall { ns, nv: 8 });
    }
    let hs = curve.total_length() / ns as f64;
    let edges: Vec<Edge> = (0..ns).map(|i| Edge { a: i, b: Some((i + 1) % ns), w: 1.0 / hs }).collect();
    Ok(finish(
        ns,
        edges,
        vec![0.0; ns],
        vec![hs; ns],
        0.0,
        PotentialMode::Compensated,
        Domain::Base,
        interleaved_order(ns, 1),
    ))
}

/// Fiber projection: `f_b(s_i) = Σ_j f_ij φ₀(v_j) h_v` and `E₀f = φ₀ · f_b`.
pub fn project_e0(grid: &TubeGrid, f: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let nvi = grid.nvi();
    let p: Vec<f64> = grid.v.iter().map(|&v| phi0(v)).collect();
    let mut fb = vec![0.0; grid.ns];
    let mut ef = vec![0.0; grid.len()];
    for i in 0..grid.ns {
        let row = &f[i * nvi..(i + 1) * nvi];
        let b: f64 = row.iter().zip(&p).map(|(x, y)| x * y).sum::<f64>() * grid.hv;
        fb[i] = b;
        for j in 0..nvi {
            ef[i * nvi + j] = p[j] * b;
        }
    }
    (fb, ef)
}

/// Lift a base function to the tube as `φ₀(v) · g(s)`.
pub fn embed_base(grid: &TubeGrid, g: &[f64]) -> Vec<f64> {
    let p: Vec<f64> = grid.v.iter().map(|&v| phi0(v)).collect();
    let mut out = Vec::with_capacity(grid.len());
    for gi in g {
        out.extend(p.iter().map(|pj| pj * gi));
    }
    out
}

/// Lift a base function to the tube as `g(s)` (constant along fibers).
pub fn basic_function(grid: &TubeGrid, g: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(grid.len());
    for gi in g {
        out.extend(std::iter::repeat_n(*gi, grid.nvi()));
    }
    out
}

/// Pointwise `‖dg‖_ε` consistent with the form's quadrature: every interior
/// edge gives half of `w (Δg)²` to each endpoint, a boundary edge gives all
/// of it to its interior node, and the sum is divided by the node's mass, so
/// that `Σ ‖dg‖² m = Σ_e w_e (Δg)²` holds exactly.
pub fn grad_norm_eps(form: &FormOperator, g: &[f64]) -> Vec<f64> {
    let mut acc = vec![0.0; form.dim()];
    for e in &form.edges {
        match e.b {
            Some(b) => {
                let d = e.w * (g[e.a] - g[b]).powi(2);
                acc[e.a] += 0.5 * d;
                acc[b] += 0.5 * d;
            }
            None => acc[e.a] += e.w * g[e.a] * g[e.a],
        }
    }
    acc.iter().zip(&form.mass).map(|(x, m)| (x / m).sqrt()).collect()
}

/// Pointwise `‖dg‖_ε` of a function on the closed tube (a basic function
/// `h∘π`, say): as [`grad_norm_eps`] but boundary edges are skipped, since
/// their jump comes from the Dirichlet extension and not from `g`.
pub fn grad_norm_eps_interior(form: &FormOperator, g: &[f64]) -> Vec<f64> {
    let mut acc = vec![0.0; form.dim()];
    for e in &form.edges {
        if let Some(b) = e.b {
            let d = e.w * (g[e.a] - g[b]).powi(2);
            acc[e.a] += 0.5 * d;
            acc[b] += 0.5 * d;
        }
    }
    acc.iter().zip(&form.mass).map(|(x, m)| (x / m).sqrt()).collect()
}

/// Σ_ε: unit-tube values to physical values, `u = (ερ)^{−1/2} f`.
pub fn rescale_to_physical(grid: &TubeGrid, f: &[f64]) -> Vec<f64> {
    f.iter().zip(&grid.w_mu).map(|(x, w)| x * (grid.w_sa / w).sqrt()).collect()
}

/// Inverse of [`rescale_to_physical`].
pub fn rescale_to_unit(grid: &TubeGrid, u: &[f64]) -> Vec<f64> {
    u.iter().zip(&grid.w_mu).map(|(x, w)| x * (w / grid.w_sa).sqrt()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{make_circle, make_flat_cylinder};

    #[test]
    fn sasaki_volume_closed_form() {
        let c = make_flat_cylinder(2.0 * PI).unwrap();
        let g = build_grid(&c, 32, 16, 0.3).unwrap();
        let total: f64 = g.w_sa * g.len() as f64;
        assert!((total - 32.0 * 15.0 * g.hs * g.hv).abs() < 1e-12);
        for w in &g.w_mu {
            assert!((w - 0.3 * g.w_sa).abs() < 1e-15);
        }
    }

    #[test]
    fn circle_weight_formula() {
        let c = make_circle(1.0).unwrap();
        let g = build_grid(&c, 32, 16, 0.5).unwrap();
        let k = g.idx(3, g.nvi() - 1);
        let ratio = g.w_mu[k] / (g.hs * g.hv * 0.5);
        assert!((ratio - (1.0 - 0.5 * (1.0 - g.hv))).abs() < 1e-14);
    }

    #[test]
    fn rejects_bad_grids() {
        let c = make_circle(1.0).unwrap();
        assert!(build_grid(&c, 8, 16, 0.1).is_err());
        assert!(build_grid(&c, 32, 16, 1.0).is_err());
    }

    #[test]
    fn stiffness_is_symmetric_and_kills_constants_in_s() {
        let c = make_circle(1.0).unwrap();
        let g = build_grid(&c, 32, 16, 0.2).unwrap();
        let f = assemble_h(&g, PotentialMode::Compensated, FiberStencil::Standard);
        assert_eq!(f.stiffness.asymmetry(), 0.0);
    }

    #[test]
    fn renormalizations_differ_by_mass() {
        let c = make_circle(1.0).unwrap();
        let g = build_grid(&c, 32, 16, 0.2).unwrap();
        let f = assemble_h(&g, PotentialMode::Dirichlet, FiberStencil::Calibrated);
        let a = renormalize(&f, Renormalization::Lambda0OverEps2).unwrap();
        let b = renormalize(&f, Renormalization::LambdaEps(70.0)).unwrap();
        let d = 70.0 - LAMBDA0 / 0.04;
        for i in 0..g.len() {
            let diff = a.stiffness.get(i, i) - b.stiffness.get(i, i);
            assert!((diff - d * g.w_sa).abs() < 1e-9);
        }
    }

    #[test]
    fn projection_identities() {
        let c = make_flat_cylinder(2.0 * PI).unwrap();
        let g = build_grid(&c, 16, 16, 0.2).unwrap();
        let f = g.sample(|_, v| phi0(v));
        let (fb, ef) = project_e0(&g, &f);
        for x in fb {
            assert!((x - 1.0).abs() < 1e-13);
        }
        for (a, b) in ef.iter().zip(&f) {
            assert!((a - b).abs() < 1e-13);
        }
        let odd = g.sample(|_, v| (PI * v).sin());
        let (fb, _) = project_e0(&g, &odd);
        assert!(fb.iter().all(|x| x.abs() < 1e-13));
    }

    #[test]
    fn rescaling_is_unitary() {
        let c = make_circle(1.0).unwrap();
        let g = build_grid(&c, 32, 16, 0.4).unwrap();
        let f = g.sample(|s, v| (s + v).sin() + 0.3);
        let u = rescale_to_physical(&g, &f);
        let n1: f64 = f.iter().map(|x| x * x * g.w_sa).sum();
        let n2: f64 = u.iter().zip(&g.w_mu).map(|(x, w)| x * x * w).sum();
        assert!((n1 - n2).abs() < 1e-12 * n1);
        let back = rescale_to_unit(&g, &u);
        for (a, b) in back.iter().zip(&f) {
            assert!((a - b).abs() < 1e-14);
        }
    }
}
