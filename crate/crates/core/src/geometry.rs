//! Closed plane curves in arc-length parametrization and their tubes in
//! Fermi coordinates.
//!
//! Conventions used throughout the crate:
//!
//! * `s` is arc length in `[0, Λ)`, periodic.
//! * `n` is the signed physical normal offset, `v = n / ε` the scaled one.
//! * The unit normal `ν` points to the interior of convex curves, so for
//!   positive curvature `ρ = 1 − nκ` shrinks as `n` grows.
//! * For the flat cylinder `S¹_Λ × ℝ` the ambient chart is `(x, y)` with
//!   `x` taken modulo `Λ`; the Fermi chart is then the identity.

use std::f64::consts::PI;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid curve parameter: {0}")]
    InvalidParameter(String),
    #[error("arc-length reparametrization residual {0:e} exceeds 1e-10")]
    Reparametrization(f64),
    #[error("point outside the tube chart: |n|·κ_max = {0}")]
    ChartViolation(f64),
    #[error("closest-point Newton iteration did not converge")]
    NoConvergence,
}

/// Which of the supported curves a [`CurveGeometry`] describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CurveKind {
    FlatCylinder,
    Circle,
    Ellipse,
}

impl CurveKind {
    pub fn name(self) -> &'static str {
        match self {
            CurveKind::FlatCylinder => "flat",
            CurveKind::Circle => "circle",
            CurveKind::Ellipse => "ellipse",
        }
    }
}

/// Ambient point in the plane (or in the `(x mod Λ, y)` chart of the cylinder).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AmbientPoint {
    pub x: f64,
    pub y: f64,
}

impl AmbientPoint {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

/// Physical Fermi coordinates `(s, n)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FermiCoordinate {
    pub s: f64,
    pub n: f64,
}

/// Curvature together with its first two arc-length derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvatureJet {
    pub k: f64,
    pub dk: f64,
    pub ddk: f64,
}

#[derive(Debug, Clone)]
struct EllipseTable {
    a: f64,
    b: f64,
    n_quad: usize,
    dtheta: f64,
    /// Cumulative arc length at `θ_k = k·dθ`, `k = 0..=n_quad`.
    cum: Vec<f64>,
}

#[derive(Debug, Clone)]
enum Shape {
    Flat,
    Circle { radius: f64 },
    Ellipse(EllipseTable),
}

/// A closed, arc-length parametrized plane curve with curvature jets.
#[derive(Debug, Clone)]
pub struct CurveGeometry {
    kind: CurveKind,
    total_length: f64,
    kappa_max: f64,
    shape: Shape,
}

// 8-point Gauss–Legendre rule on [-1, 1].
const GL8_X: [f64; 4] = [
    0.183_434_642_495_649_8,
    0.525_532_409_916_329_0,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_2,
];
const GL8_W: [f64; 4] = [
    0.362_683_783_378_362_0,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_5,
    0.101_228_536_290_376_3,
];

fn gl8<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64) -> f64 {
    let c = 0.5 * (lo + hi);
    let r = 0.5 * (hi - lo);
    let mut acc = 0.0;
    for k in 0..4 {
        acc += GL8_W[k] * (f(c - r * GL8_X[k]) + f(c + r * GL8_X[k]));
    }
    acc * r
}

impl EllipseTable {
    fn g(&self, theta: f64) -> f64 {
        let (st, ct) = theta.sin_cos();
        self.a * self.a * st * st + self.b * self.b * ct * ct
    }

    fn speed(&self, theta: f64) -> f64 {
        self.g(theta).sqrt()
    }

    fn build(a: f64, b: f64, n_quad: usize) -> Self {
        let dtheta = 2.0 * PI / n_quad as f64;
        let mut cum = Vec::with_capacity(n_quad + 1);
        cum.push(0.0);
        let mut table = Self { a, b, n_quad, dtheta, cum: Vec::new() };
        let mut acc = 0.0;
        for k in 0..n_quad {
            let lo = k as f64 * dtheta;
            acc += gl8(|t| table.speed(t), lo, lo + dtheta);
            cum.push(acc);
        }
        table.cum = cum;
        table
    }

    fn length(&self) -> f64 {
        self.cum[self.n_quad]
    }

    /// Arc length from 0 to θ ∈ [0, 2π].
    fn arc(&self, theta: f64) -> f64 {
        let k = ((theta / self.dtheta) as usize).min(self.n_quad - 1);
        let lo = k as f64 * self.dtheta;
        self.cum[k] + gl8(|t| self.speed(t), lo, theta)
    }

    /// Monotone cubic Hermite inverse of the cumulative arc length,
    /// without Newton polishing.
    fn theta_spline(&self, s: f64) -> f64 {
        // the cumulative table is strictly increasing; locate the interval
        let k = match self.cum.binary_search_by(|c| c.partial_cmp(&s).unwrap()) {
            Ok(k) => k.min(self.n_quad - 1),
            Err(k) => k.saturating_sub(1).min(self.n_quad - 1),
        };
        let (s0, s1) = (self.cum[k], self.cum[k + 1]);
        let (t0, t1) = (k as f64 * self.dtheta, (k + 1) as f64 * self.dtheta);
        let hs = s1 - s0;
        let m0 = hs / self.speed(t0);
        let m1 = hs / self.speed(t1);
        let u = (s - s0) / hs;
        let h00 = (1.0 + 2.0 * u) * (1.0 - u) * (1.0 - u);
        let h10 = u * (1.0 - u) * (1.0 - u);
        let h01 = u * u * (3.0 - 2.0 * u);
        let h11 = u * u * (u - 1.0);
        h00 * t0 + h10 * m0 + h01 * t1 + h11 * m1
    }

    fn theta(&self, s: f64) -> f64 {
        let mut th = self.theta_spline(s);
        for _ in 0..2 {
            th -= (self.arc(th) - s) / self.speed(th);
        }
        th
    }
}

/// Reduce `s` to `[0, Λ)`.
pub fn wrap(s: f64, length: f64) -> f64 {
    let r = s.rem_euclid(length);
    if r >= length {
        0.0
    } else {
        r
    }
}

impl CurveGeometry {
    pub fn kind(&self) -> CurveKind {
        self.kind
    }

    pub fn total_length(&self) -> f64 {
        self.total_length
    }

    pub fn kappa_max(&self) -> f64 {
        self.kappa_max
    }

    /// Position γ(s).
    pub fn position(&self, s: f64) -> AmbientPoint {
        match &self.shape {
            Shape::Flat => AmbientPoint::new(wrap(s, self.total_length), 0.0),
            Shape::Circle { radius } => {
                let (sn, cs) = (s / radius).sin_cos();
                AmbientPoint::new(radius * cs, radius * sn)
            }
            Shape::Ellipse(e) => {
                let th = e.theta(wrap(s, self.total_length));
                AmbientPoint::new(e.a * th.cos(), e.b * th.sin())
            }
        }
    }

    /// Unit tangent γ′(s) and inward unit normal ν(s).
    pub fn frame(&self, s: f64) -> ([f64; 2], [f64; 2]) {
        match &self.shape {
            Shape::Flat => ([1.0, 0.0], [0.0, 1.0]),
            Shape::Circle { radius } => {
                let (sn, cs) = (s / radius).sin_cos();
                ([-sn, cs], [-cs, -sn])
            }
            Shape::Ellipse(e) => {
                let th = e.theta(wrap(s, self.total_length));
                let (st, ct) = th.sin_cos();
                let sp = e.speed(th);
                ([-e.a * st / sp, e.b * ct / sp], [-e.b * ct / sp, -e.a * st / sp])
            }
        }
    }

    pub fn unit_normal(&self, s: f64) -> [f64; 2] {
        self.frame(s).1
    }

    /// κ(s), κ′(s), κ″(s); derivatives are analytic in θ and pushed
    /// through the chain rule.
    pub fn curvature_jet(&self, s: f64) -> CurvatureJet {
        match &self.shape {
            Shape::Flat => CurvatureJet { k: 0.0, dk: 0.0, ddk: 0.0 },
            Shape::Circle { radius } => CurvatureJet { k: 1.0 / radius, dk: 0.0, ddk: 0.0 },
            Shape::Ellipse(e) => {
                let th = e.theta(wrap(s, self.total_length));
                ellipse_jet(e.a, e.b, th)
            }
        }
    }

    pub fn curvature(&self, s: f64) -> f64 {
        self.curvature_jet(s).k
    }

    fn check_chart(&self, n: f64) -> Result<(), GeometryError> {
        let q = n.abs() * self.kappa_max;
        if q >= 1.0 || !n.is_finite() {
            return Err(GeometryError::ChartViolation(q));
        }
        Ok(())
    }

    /// γ(s) + n·ν(s).
    pub fn fermi_to_ambient(&self, s: f64, n: f64) -> Result<AmbientPoint, GeometryError> {
        self.check_chart(n)?;
        if let Shape::Flat = self.shape {
            return Ok(AmbientPoint::new(wrap(s, self.total_length), n));
        }
        let p = self.position(s);
        let nu = self.unit_normal(s);
        Ok(AmbientPoint::new(p.x + n * nu[0], p.y + n * nu[1]))
    }

    /// Foot point and signed offset of `p`.
    pub fn closest_point_projection(&self, p: AmbientPoint) -> Result<FermiCoordinate, GeometryError> {
        self.closest_point_projection_from(p, None)
    }

    /// As [`Self::closest_point_projection`]. The previous foot point may be
    /// passed along; every shape currently converges without it.
    pub fn closest_point_projection_from(
        &self,
        p: AmbientPoint,
        seed: Option<f64>,
    ) -> Result<FermiCoordinate, GeometryError> {
        let lam = self.total_length;
        match &self.shape {
            Shape::Flat => {
                self.check_chart(p.y)?;
                Ok(FermiCoordinate { s: wrap(p.x, lam), n: p.y })
            }
            Shape::Circle { radius } => {
                let r = p.x.hypot(p.y);
                let n = radius - r;
                self.check_chart(n)?;
                if r == 0.0 {
                    return Err(GeometryError::ChartViolation(1.0));
                }
                let s = wrap(p.y.atan2(p.x) * radius, lam);
                Ok(FermiCoordinate { s, n })
            }
            Shape::Ellipse(_) => self.project_with_jet(p, seed).map(|x| x.0),
        }
    }

    /// Projection together with the curvature jet at the foot point. On the
    /// ellipse the Newton iteration runs in the parametric angle, so the
    /// arc-length inversion is never needed.
    pub fn project_with_jet(&self, p: AmbientPoint, seed: Option<f64>) -> Result<(FermiCoordinate, CurvatureJet), GeometryError> {
        let Shape::Ellipse(e) = &self.shape else {
            let f = self.closest_point_projection_from(p, seed)?;
            return Ok((f, self.curvature_jet(f.s)));
        };
        let (a, b) = (e.a, e.b);
        // the elliptic angle of p is within the chart's basin of attraction
        let mut th = (a * p.y).atan2(b * p.x);
        for _ in 0..60 {
            let (st, ct) = th.sin_cos();
            let (dx, dy) = (p.x - a * ct, p.y - b * st);
            let (ex, ey) = (-a * st, b * ct);
            let f = dx * ex + dy * ey;
            let fp = -(ex * ex + ey * ey) - (dx * a * ct + dy * b * st);
            if fp >= 0.0 {
                return Err(GeometryError::ChartViolation(1.0));
            }
            let d = (f / fp).clamp(-0.25, 0.25);
            th -= d;
            if d.abs() <= 1e-15 {
                let th = th.rem_euclid(2.0 * PI);
                let (st, ct) = th.sin_cos();
                let sp = e.speed(th);
                let n = ((p.x - a * ct) * (-b * ct) + (p.y - b * st) * (-a * st)) / sp;
                self.check_chart(n)?;
                let s = wrap(e.arc(th), self.total_length);
                return Ok((FermiCoordinate { s, n }, ellipse_jet(a, b, th)));
            }
        }
        Err(GeometryError::NoConvergence)
    }

    /// ρ(s, n) = 1 − nκ(s).
    pub fn density_rho(&self, s: f64, n: f64) -> f64 {
        1.0 - n * self.curvature(s)
    }

    /// U = ρ^{1/2} Δ ρ^{−1/2} with Δ the (non-positive) Laplace–Beltrami
    /// operator of the induced metric `ρ² ds² + dn²`.
    pub fn potential_u(&self, s: f64, n: f64) -> f64 {
        potential_from_jet(self.curvature_jet(s), n)
    }

    /// Arc-length distance on L.
    pub fn geodesic_distance(&self, s1: f64, s2: f64) -> f64 {
        let d = (s1 - s2).abs().rem_euclid(self.total_length);
        d.min(self.total_length - d)
    }
}

/// Closed-form potential at offset `n` from the curvature jet.
pub fn potential_from_jet(j: CurvatureJet, n: f64) -> f64 {
    let rho = 1.0 - n * j.k;
    let r2 = rho * rho;
    0.25 * j.k * j.k / r2 + 0.5 * n * j.ddk / (r2 * rho) + 1.25 * n * n * j.dk * j.dk / (r2 * r2)
}

fn ellipse_jet(a: f64, b: f64, th: f64) -> CurvatureJet {
    let (st, ct) = th.sin_cos();
    let g = a * a * st * st + b * b * ct * ct;
    let d2 = a * a - b * b;
    let g1 = d2 * (2.0 * th).sin();
    let g2 = 2.0 * d2 * (2.0 * th).cos();
    let ab = a * b;
    let k = ab * g.powf(-1.5);
    let k1 = -1.5 * ab * g.powf(-2.5) * g1;
    let k2 = 3.75 * ab * g.powf(-3.5) * g1 * g1 - 1.5 * ab * g.powf(-2.5) * g2;
    let th1 = g.powf(-0.5);
    let th2 = -0.5 * g1 / (g * g);
    CurvatureJet { k, dk: k1 * th1, ddk: k2 * th1 * th1 + k1 * th2 }
}

/// Boundary distance in the unit tube: δ = 1 − |v|.
pub fn boundary_distance(v: f64) -> f64 {
    1.0 - v.abs()
}

pub fn make_circle(radius: f64) -> Result<CurveGeometry, GeometryError> {
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(GeometryError::InvalidParameter(format!("radius must be positive, got {radius}")));
    }
    Ok(CurveGeometry {
        kind: CurveKind::Circle,
        total_length: 2.0 * PI * radius,
        kappa_max: 1.0 / radius,
        shape: Shape::Circle { radius },
    })
}

pub fn make_flat_cylinder(length: f64) -> Result<CurveGeometry, GeometryError> {
    if !(length > 0.0) || !length.is_finite() {
        return Err(GeometryError::InvalidParameter(format!("length must be positive, got {length}")));
    }
    Ok(CurveGeometry { kind: CurveKind::FlatCylinder, total_length: length, kappa_max: 0.0, shape: Shape::Flat })
}

/// Ellipse `(a cos θ, b sin θ)` with `s = 0` at `(a, 0)`, where the
/// curvature `a/b²` is largest.
pub fn make_ellipse(a: f64, b: f64, n_quad: usize) -> Result<CurveGeometry, GeometryError> {
    if !(a > 0.0 && b > 0.0) || !(a.is_finite() && b.is_finite()) {
        return Err(GeometryError::InvalidParameter(format!("semi-axes must be positive, got a={a}, b={b}")));
    }
    if a < b {
        return Err(GeometryError::InvalidParameter(format!("require a >= b, got a={a}, b={b}")));
    }
    if n_quad < 16 {
        return Err(GeometryError::InvalidParameter(format!("n_quad must be >= 16, got {n_quad}")));
    }
    let table = EllipseTable::build(a, b, n_quad);
    // spline residual at interval midpoints, before Newton polishing
    let mut worst: f64 = 0.0;
    for k in 0..n_quad {
        let sm = 0.5 * (table.cum[k] + table.cum[k + 1]);
        let th = table.theta_spline(sm);
        worst = worst.max((table.arc(th) - sm).abs());
    }
    if worst > 1e-10 {
        return Err(GeometryError::Reparametrization(worst));
    }
    Ok(CurveGeometry {
        kind: CurveKind::Ellipse,
        total_length: table.length(),
        kappa_max: a / (b * b),
        shape: Shape::Ellipse(table),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn circle_basics() {
        let c = make_circle(1.0).unwrap();
        assert!((c.total_length() - 2.0 * PI).abs() < 1e-15);
        let p = c.position(PI);
        assert!((p.x + 1.0).abs() < 1e-15 && p.y.abs() < 1e-15);
        assert_eq!(make_circle(2.0).unwrap().kappa_max(), 0.5);
        assert!(make_circle(0.0).is_err());
        let q = c.fermi_to_ambient(0.0, 0.5).unwrap();
        assert!((q.x - 0.5).abs() < 1e-15 && q.y.abs() < 1e-15);
    }

    #[test]
    fn circle_projection_sign() {
        let c = make_circle(1.0).unwrap();
        let f = c.closest_point_projection(AmbientPoint::new(1.2, 0.0)).unwrap();
        assert!(f.s.abs() < 1e-15);
        assert!((f.n + 0.2).abs() < 1e-14);
    }

    #[test]
    fn flat_is_trivial() {
        let c = make_flat_cylinder(2.0 * PI).unwrap();
        assert_eq!(c.kappa_max(), 0.0);
        assert_eq!(c.density_rho(1.0, 0.3), 1.0);
        assert_eq!(c.potential_u(1.0, 0.3), 0.0);
        assert!(make_flat_cylinder(-1.0).is_err());
    }

    #[test]
    fn degenerate_ellipse_is_circle() {
        let e = make_ellipse(1.0, 1.0, 4096).unwrap();
        assert!((e.total_length() - 2.0 * PI).abs() < 1e-10);
        for i in 0..50 {
            let s = i as f64 * 0.123;
            assert!((e.curvature(s) - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn ellipse_parameter_errors() {
        assert!(make_ellipse(2.0, 3.0, 4096).is_err());
        assert!(make_ellipse(0.0, 0.0, 4096).is_err());
    }

    #[test]
    fn boundary_distance_values() {
        assert_eq!(boundary_distance(0.0), 1.0);
        assert_eq!(boundary_distance(1.0), 0.0);
        assert_eq!(boundary_distance(-0.25), 0.75);
    }

    #[test]
    fn potential_on_curve() {
        let c = make_circle(1.0).unwrap();
        assert!((c.potential_u(0.3, 0.0) - 0.25).abs() < 1e-15);
    }
}
